#include "cliplab/graph.hpp"

#include <cmath>
#include <cstring>
#include <sstream>

namespace cliplab {

namespace kernels {

void mm_acc_nn(const real* A, const real* B, real* C, std::size_t m, std::size_t k, std::size_t n) {
    for (std::size_t i = 0; i < m; ++i) {
        const real* arow = A + i * k;
        real* crow = C + i * n;
        for (std::size_t p = 0; p < k; ++p) {
            const real a = arow[p];
            if (a == real(0)) continue;
            const real* brow = B + p * n;
            for (std::size_t j = 0; j < n; ++j) crow[j] += a * brow[j];
        }
    }
}

void mm_acc_nt(const real* A, const real* B, real* C, std::size_t m, std::size_t k, std::size_t n) {
    for (std::size_t i = 0; i < m; ++i) {
        const real* arow = A + i * k;
        real* crow = C + i * n;
        for (std::size_t j = 0; j < n; ++j) {
            const real* brow = B + j * k;
            real acc = 0;
            for (std::size_t p = 0; p < k; ++p) acc += arow[p] * brow[p];
            crow[j] += acc;
        }
    }
}

void mm_acc_tn(const real* A, const real* B, real* C, std::size_t m, std::size_t k, std::size_t n) {
    for (std::size_t p = 0; p < m; ++p) {
        const real* arow = A + p * k;
        const real* brow = B + p * n;
        for (std::size_t i = 0; i < k; ++i) {
            const real a = arow[i];
            if (a == real(0)) continue;
            real* crow = C + i * n;
            for (std::size_t j = 0; j < n; ++j) crow[j] += a * brow[j];
        }
    }
}

namespace {

// Gauss-Jordan with partial pivoting; returns false when a pivot collapses.
// cond_est is max/min absolute pivot, a cheap condition proxy.
bool gauss_jordan(std::vector<real>& a, std::size_t n, real& cond_est) {
    std::vector<real> inv(n * n, real(0));
    for (std::size_t i = 0; i < n; ++i) inv[i * n + i] = 1;

    real pmin = 0, pmax = 0;
    for (std::size_t col = 0; col < n; ++col) {
        std::size_t pivot = col;
        for (std::size_t r = col + 1; r < n; ++r)
            if (std::fabs(a[r * n + col]) > std::fabs(a[pivot * n + col])) pivot = r;
        const real pv = a[pivot * n + col];
        if (pv == real(0)) return false;
        if (pivot != col) {
            for (std::size_t j = 0; j < n; ++j) {
                std::swap(a[pivot * n + j], a[col * n + j]);
                std::swap(inv[pivot * n + j], inv[col * n + j]);
            }
        }
        const real apv = std::fabs(pv);
        pmax = (col == 0) ? apv : std::max(pmax, apv);
        pmin = (col == 0) ? apv : std::min(pmin, apv);
        const real inv_pv = real(1) / pv;
        for (std::size_t j = 0; j < n; ++j) {
            a[col * n + j] *= inv_pv;
            inv[col * n + j] *= inv_pv;
        }
        for (std::size_t r = 0; r < n; ++r) {
            if (r == col) continue;
            const real f = a[r * n + col];
            if (f == real(0)) continue;
            for (std::size_t j = 0; j < n; ++j) {
                a[r * n + j] -= f * a[col * n + j];
                inv[r * n + j] -= f * inv[col * n + j];
            }
        }
    }
    cond_est = (pmin > real(0)) ? pmax / pmin : std::numeric_limits<real>::infinity();
    a = std::move(inv);
    return true;
}

}  // namespace

Tensor mat_inverse(const Tensor& m) {
    if (m.rank() != 2 || m.dim(0) != m.dim(1))
        throw std::invalid_argument("inverse: square matrix required");
    const std::size_t n = m.dim(0);
    std::vector<real> work = m.raw();
    real cond = 0;
    bool ok = gauss_jordan(work, n, cond);
    if (ok && cond <= real(1e10)) return Tensor(Shape{n, n}, std::move(work));

    // Near-singular: retry on A + eps*I.
    work = m.raw();
    for (std::size_t i = 0; i < n; ++i) work[i * n + i] += real(1e-8);
    ok = gauss_jordan(work, n, cond);
    if (!ok) throw std::runtime_error("inverse: matrix singular beyond regularization");
    return Tensor(Shape{n, n}, std::move(work));
}

}  // namespace kernels

GradVector GradVector::from(std::vector<Tensor> gs) {
    GradVector g;
    g.grads = std::move(gs);
    real acc = 0;
    for (const auto& t : g.grads)
        for (real v : t.raw()) acc += v * v;
    g.norm = std::sqrt(acc);
    return g;
}

GradVector GradVector::scaled(real s) const {
    std::vector<Tensor> out = grads;
    for (auto& t : out)
        for (real& v : t.raw()) v *= s;
    return GradVector::from(std::move(out));
}

std::size_t GradVector::numel() const {
    std::size_t n = 0;
    for (const auto& t : grads) n += t.size();
    return n;
}

bool GradVector::all_finite() const {
    for (const auto& t : grads)
        if (!t.all_finite()) return false;
    return std::isfinite(norm);
}

const Tensor& Value::tensor() const { return g_->value_of(i_); }

real Value::scalar() const {
    const Tensor& t = tensor();
    if (!t.is_scalar()) throw std::invalid_argument("Value::scalar: tensor is not scalar");
    return t[0];
}

Value Graph::constant(Tensor t) { return make("const", std::move(t), {}, nullptr); }

Value Graph::param(Tensor t) {
    Value v = make("param", std::move(t), {}, nullptr);
    nodes_[v.index()].param_index = static_cast<std::int32_t>(params_.size());
    params_.push_back(v.index());
    return v;
}

std::vector<Value> Graph::params(const std::vector<Tensor>& ts) {
    std::vector<Value> out;
    out.reserve(ts.size());
    for (const auto& t : ts) out.push_back(param(t));
    return out;
}

Value Graph::make(const char* op, Tensor value, std::vector<std::int32_t> inputs, BackwardFn fn) {
    Node n;
    n.op = op;
    n.value = std::move(value);
    n.inputs = std::move(inputs);
    n.backward = std::move(fn);
    nodes_.push_back(std::move(n));
    return Value(this, static_cast<std::int32_t>(nodes_.size() - 1));
}

Tensor& Graph::grad_buffer(std::int32_t idx) {
    Node& n = nodes_[idx];
    if (!n.grad_live) {
        n.grad = Tensor::zeros(n.value.shape());
        n.grad_live = true;
    }
    return n.grad;
}

GradVector Graph::backward(Value loss) {
    if (!loss.valid() || &loss.graph() != this)
        throw std::invalid_argument("backward: loss does not belong to this graph");
    const Tensor& lv = nodes_[loss.index()].value;
    if (!lv.is_scalar()) throw std::invalid_argument("backward: loss must be scalar");
    if (!std::isfinite(lv[0])) throw NonFiniteError("backward: loss value is not finite");

    for (auto& n : nodes_) n.grad_live = false;
    grad_buffer(loss.index())[0] = 1;

    for (std::int32_t i = loss.index(); i >= 0; --i) {
        Node& n = nodes_[i];
        if (n.grad_live && n.backward) n.backward(*this, i);
    }

    std::vector<Tensor> gs;
    gs.reserve(params_.size());
    for (std::int32_t p : params_) {
        Node& n = nodes_[p];
        if (n.grad_live)
            gs.push_back(n.grad);
        else
            gs.push_back(Tensor::zeros(n.value.shape()));
    }
    GradVector g = GradVector::from(std::move(gs));
    if (!g.all_finite()) {
        for (std::size_t i = 0; i < g.grads.size(); ++i)
            if (!g.grads[i].all_finite()) {
                std::ostringstream msg;
                msg << "backward: non-finite gradient for parameter " << i
                    << " (non-finite values reached the reverse pass)";
                throw NonFiniteError(msg.str());
            }
        throw NonFiniteError("backward: non-finite gradient norm");
    }
    return g;
}

namespace {

void require_same_graph(Value a, Value b) {
    if (&a.graph() != &b.graph())
        throw std::invalid_argument("op: values belong to different graphs");
}

void require_same_shape(Value a, Value b, const char* op) {
    if (!a.tensor().same_shape(b.tensor()))
        throw std::invalid_argument(std::string(op) + ": shape mismatch");
}

void axpy(Tensor& dst, const Tensor& src, real s) {
    real* d = dst.data();
    const real* x = src.data();
    for (std::size_t i = 0, n = dst.size(); i < n; ++i) d[i] += s * x[i];
}

}  // namespace

Value add(Value a, Value b) {
    require_same_graph(a, b);
    require_same_shape(a, b, "add");
    Tensor out = a.tensor();
    axpy(out, b.tensor(), 1);
    const std::int32_t ia = a.index(), ib = b.index();
    return a.graph().make("add", std::move(out), {ia, ib}, [ia, ib](Graph& g, std::int32_t self) {
        const Tensor& go = g.grad_of(self);
        axpy(g.grad_buffer(ia), go, 1);
        axpy(g.grad_buffer(ib), go, 1);
    });
}

Value sub(Value a, Value b) {
    require_same_graph(a, b);
    require_same_shape(a, b, "sub");
    Tensor out = a.tensor();
    axpy(out, b.tensor(), -1);
    const std::int32_t ia = a.index(), ib = b.index();
    return a.graph().make("sub", std::move(out), {ia, ib}, [ia, ib](Graph& g, std::int32_t self) {
        const Tensor& go = g.grad_of(self);
        axpy(g.grad_buffer(ia), go, 1);
        axpy(g.grad_buffer(ib), go, -1);
    });
}

Value mul(Value a, Value b) {
    require_same_graph(a, b);
    require_same_shape(a, b, "mul");
    Tensor out = a.tensor();
    {
        real* o = out.data();
        const real* bb = b.tensor().data();
        for (std::size_t i = 0, n = out.size(); i < n; ++i) o[i] *= bb[i];
    }
    const std::int32_t ia = a.index(), ib = b.index();
    return a.graph().make("mul", std::move(out), {ia, ib}, [ia, ib](Graph& g, std::int32_t self) {
        const Tensor& go = g.grad_of(self);
        const real* gd = go.data();
        {
            Tensor& ga = g.grad_buffer(ia);
            const real* bv = g.value_of(ib).data();
            real* d = ga.data();
            for (std::size_t i = 0, n = ga.size(); i < n; ++i) d[i] += gd[i] * bv[i];
        }
        {
            Tensor& gb = g.grad_buffer(ib);
            const real* av = g.value_of(ia).data();
            real* d = gb.data();
            for (std::size_t i = 0, n = gb.size(); i < n; ++i) d[i] += gd[i] * av[i];
        }
    });
}

Value scale(Value a, real s) {
    Tensor out = a.tensor();
    for (real& v : out.raw()) v *= s;
    const std::int32_t ia = a.index();
    return a.graph().make("scale", std::move(out), {ia}, [ia, s](Graph& g, std::int32_t self) {
        axpy(g.grad_buffer(ia), g.grad_of(self), s);
    });
}

Value add_scalar(Value a, real c) {
    Tensor out = a.tensor();
    for (real& v : out.raw()) v += c;
    const std::int32_t ia = a.index();
    return a.graph().make("add_scalar", std::move(out), {ia}, [ia](Graph& g, std::int32_t self) {
        axpy(g.grad_buffer(ia), g.grad_of(self), 1);
    });
}

Value matmul(Value a, Value b) {
    require_same_graph(a, b);
    const Tensor& ta = a.tensor();
    const Tensor& tb = b.tensor();
    if (ta.rank() != 2 || tb.rank() != 2 || ta.dim(1) != tb.dim(0))
        throw std::invalid_argument("matmul: inner dimensions must agree on rank-2 tensors");
    const std::size_t m = ta.dim(0), k = ta.dim(1), n = tb.dim(1);
    Tensor out(Shape{m, n});
    kernels::mm_acc_nn(ta.data(), tb.data(), out.data(), m, k, n);
    const std::int32_t ia = a.index(), ib = b.index();
    return a.graph().make("matmul", std::move(out), {ia, ib},
                          [ia, ib, m, k, n](Graph& g, std::int32_t self) {
                              const Tensor& go = g.grad_of(self);
                              // dA += G * B^T, dB += A^T * G
                              kernels::mm_acc_nt(go.data(), g.value_of(ib).data(),
                                                 g.grad_buffer(ia).data(), m, n, k);
                              kernels::mm_acc_tn(g.value_of(ia).data(), go.data(),
                                                 g.grad_buffer(ib).data(), m, k, n);
                          });
}

Value transpose(Value a) {
    const Tensor& ta = a.tensor();
    if (ta.rank() != 2) throw std::invalid_argument("transpose: rank-2 tensor required");
    const std::size_t m = ta.dim(0), n = ta.dim(1);
    Tensor out(Shape{n, m});
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) out.at(j, i) = ta.at(i, j);
    const std::int32_t ia = a.index();
    return a.graph().make("transpose", std::move(out), {ia},
                          [ia, m, n](Graph& g, std::int32_t self) {
                              const Tensor& go = g.grad_of(self);
                              Tensor& ga = g.grad_buffer(ia);
                              for (std::size_t i = 0; i < m; ++i)
                                  for (std::size_t j = 0; j < n; ++j) ga.at(i, j) += go.at(j, i);
                          });
}

namespace {

template <typename Fwd, typename Bwd>
Value unary_elementwise(Value a, const char* op, Fwd fwd, Bwd dfn) {
    Tensor out = a.tensor();
    for (real& v : out.raw()) v = fwd(v);
    const std::int32_t ia = a.index();
    return a.graph().make(op, std::move(out), {ia}, [ia, dfn](Graph& g, std::int32_t self) {
        const Tensor& go = g.grad_of(self);
        const Tensor& av = g.value_of(ia);
        const Tensor& ov = g.value_of(self);
        Tensor& ga = g.grad_buffer(ia);
        const real* gd = go.data();
        const real* x = av.data();
        const real* y = ov.data();
        real* d = ga.data();
        for (std::size_t i = 0, n = ga.size(); i < n; ++i) d[i] += gd[i] * dfn(x[i], y[i]);
    });
}

}  // namespace

Value sigmoid(Value a) {
    return unary_elementwise(
        a, "sigmoid", [](real x) { return real(1) / (real(1) + std::exp(-x)); },
        [](real, real y) { return y * (real(1) - y); });
}

Value tanh(Value a) {
    return unary_elementwise(
        a, "tanh", [](real x) { return std::tanh(x); },
        [](real, real y) { return real(1) - y * y; });
}

Value log(Value a) {
    return unary_elementwise(
        a, "log", [](real x) { return std::log(x); },
        [](real x, real) { return real(1) / x; });
}

Value cos(Value a) {
    return unary_elementwise(
        a, "cos", [](real x) { return std::cos(x); },
        [](real x, real) { return -std::sin(x); });
}

Value abs(Value a) {
    return unary_elementwise(
        a, "abs", [](real x) { return std::fabs(x); },
        [](real x, real) { return x > real(0) ? real(1) : (x < real(0) ? real(-1) : real(0)); });
}

Value clamp(Value a, real lo, real hi) {
    if (!(lo <= hi)) throw std::invalid_argument("clamp: lo must not exceed hi");
    return unary_elementwise(
        a, "clamp", [lo, hi](real x) { return std::min(std::max(x, lo), hi); },
        [lo, hi](real x, real) { return (x > lo && x < hi) ? real(1) : real(0); });
}

Value sum(Value a) {
    Tensor out = Tensor::scalar(a.tensor().sum());
    const std::int32_t ia = a.index();
    return a.graph().make("sum", std::move(out), {ia}, [ia](Graph& g, std::int32_t self) {
        const real go = g.grad_of(self)[0];
        Tensor& ga = g.grad_buffer(ia);
        for (real& v : ga.raw()) v += go;
    });
}

Value mean(Value a) {
    const real n = static_cast<real>(a.tensor().size());
    return scale(sum(a), real(1) / n);
}

Value l1_norm(Value a) {
    real acc = 0;
    for (real v : a.tensor().raw()) acc += std::fabs(v);
    const std::int32_t ia = a.index();
    return a.graph().make("l1_norm", Tensor::scalar(acc), {ia}, [ia](Graph& g, std::int32_t self) {
        const real go = g.grad_of(self)[0];
        const Tensor& av = g.value_of(ia);
        Tensor& ga = g.grad_buffer(ia);
        const real* x = av.data();
        real* d = ga.data();
        for (std::size_t i = 0, n = ga.size(); i < n; ++i)
            d[i] += go * (x[i] > real(0) ? real(1) : (x[i] < real(0) ? real(-1) : real(0)));
    });
}

Value l2_norm(Value a) {
    const real nrm = a.tensor().l2_norm();
    const std::int32_t ia = a.index();
    return a.graph().make("l2_norm", Tensor::scalar(nrm), {ia},
                          [ia, nrm](Graph& g, std::int32_t self) {
                              if (nrm == real(0)) return;  // subgradient 0 at the origin
                              const real go = g.grad_of(self)[0];
                              axpy(g.grad_buffer(ia), g.value_of(ia), go / nrm);
                          });
}

Value sum_squares(Value a) {
    real acc = 0;
    for (real v : a.tensor().raw()) acc += v * v;
    const std::int32_t ia = a.index();
    return a.graph().make("sum_squares", Tensor::scalar(acc), {ia},
                          [ia](Graph& g, std::int32_t self) {
                              const real go = g.grad_of(self)[0];
                              axpy(g.grad_buffer(ia), g.value_of(ia), 2 * go);
                          });
}

Value inverse(Value a) {
    Tensor inv = kernels::mat_inverse(a.tensor());
    const std::size_t n = inv.dim(0);
    const std::int32_t ia = a.index();
    return a.graph().make("inverse", std::move(inv), {ia}, [ia, n](Graph& g, std::int32_t self) {
        // dA -= B^T * G * B^T with B the computed inverse
        const Tensor& b = g.value_of(self);
        const Tensor& go = g.grad_of(self);
        Tensor bt(Shape{n, n});
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < n; ++j) bt.at(i, j) = b.at(j, i);
        Tensor tmp(Shape{n, n});
        kernels::mm_acc_nn(bt.data(), go.data(), tmp.data(), n, n, n);
        Tensor res(Shape{n, n});
        kernels::mm_acc_nn(tmp.data(), bt.data(), res.data(), n, n, n);
        axpy(g.grad_buffer(ia), res, -1);
    });
}

Value trace(Value a) {
    const Tensor& ta = a.tensor();
    if (ta.rank() != 2 || ta.dim(0) != ta.dim(1))
        throw std::invalid_argument("trace: square matrix required");
    const std::size_t n = ta.dim(0);
    real acc = 0;
    for (std::size_t i = 0; i < n; ++i) acc += ta.at(i, i);
    const std::int32_t ia = a.index();
    return a.graph().make("trace", Tensor::scalar(acc), {ia}, [ia, n](Graph& g, std::int32_t self) {
        const real go = g.grad_of(self)[0];
        Tensor& ga = g.grad_buffer(ia);
        for (std::size_t i = 0; i < n; ++i) ga.at(i, i) += go;
    });
}

Value row_normalize(Value a) {
    const Tensor& ta = a.tensor();
    if (ta.rank() != 2) throw std::invalid_argument("row_normalize: rank-2 tensor required");
    const std::size_t m = ta.dim(0), n = ta.dim(1);
    Tensor out(Shape{m, n});
    for (std::size_t i = 0; i < m; ++i) {
        real acc = 0;
        for (std::size_t j = 0; j < n; ++j) acc += ta.at(i, j) * ta.at(i, j);
        const real nrm = std::sqrt(acc);
        if (nrm == real(0)) throw std::invalid_argument("row_normalize: zero row");
        for (std::size_t j = 0; j < n; ++j) out.at(i, j) = ta.at(i, j) / nrm;
    }
    const std::int32_t ia = a.index();
    return a.graph().make("row_normalize", std::move(out), {ia},
                          [ia, m, n](Graph& g, std::int32_t self) {
                              const Tensor& go = g.grad_of(self);
                              const Tensor& x = g.value_of(ia);
                              const Tensor& y = g.value_of(self);
                              Tensor& ga = g.grad_buffer(ia);
                              for (std::size_t i = 0; i < m; ++i) {
                                  real nrm2 = 0, dot = 0;
                                  for (std::size_t j = 0; j < n; ++j) {
                                      nrm2 += x.at(i, j) * x.at(i, j);
                                      dot += go.at(i, j) * y.at(i, j);
                                  }
                                  const real nrm = std::sqrt(nrm2);
                                  for (std::size_t j = 0; j < n; ++j)
                                      ga.at(i, j) += (go.at(i, j) - dot * y.at(i, j)) / nrm;
                              }
                          });
}

Value scale_rows(Value a, const Tensor& w) {
    const Tensor& ta = a.tensor();
    if (ta.rank() != 2 || w.size() != ta.dim(0))
        throw std::invalid_argument("scale_rows: weight length must equal row count");
    const std::size_t m = ta.dim(0), n = ta.dim(1);
    Tensor out(Shape{m, n});
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) out.at(i, j) = ta.at(i, j) * w[i];
    const std::int32_t ia = a.index();
    auto wp = std::make_shared<Tensor>(w);
    return a.graph().make("scale_rows", std::move(out), {ia},
                          [ia, m, n, wp](Graph& g, std::int32_t self) {
                              const Tensor& go = g.grad_of(self);
                              Tensor& ga = g.grad_buffer(ia);
                              for (std::size_t i = 0; i < m; ++i)
                                  for (std::size_t j = 0; j < n; ++j)
                                      ga.at(i, j) += go.at(i, j) * (*wp)[i];
                          });
}

namespace {

Value concat_axis(const std::vector<Value>& parts, bool rows) {
    if (parts.empty()) throw std::invalid_argument("concat: no parts");
    Graph& g = parts[0].graph();
    std::size_t fixed = rows ? parts[0].tensor().dim(1) : parts[0].tensor().dim(0);
    std::size_t total = 0;
    std::vector<std::int32_t> idx;
    for (const Value& p : parts) {
        require_same_graph(parts[0], p);
        const Tensor& t = p.tensor();
        if (t.rank() != 2) throw std::invalid_argument("concat: rank-2 tensors required");
        if ((rows ? t.dim(1) : t.dim(0)) != fixed)
            throw std::invalid_argument("concat: mismatched shared dimension");
        total += rows ? t.dim(0) : t.dim(1);
        idx.push_back(p.index());
    }
    Tensor out(rows ? Shape{total, fixed} : Shape{fixed, total});
    std::size_t off = 0;
    for (const Value& p : parts) {
        const Tensor& t = p.tensor();
        if (rows) {
            std::memcpy(out.data() + off * fixed, t.data(), t.size() * sizeof(real));
            off += t.dim(0);
        } else {
            for (std::size_t i = 0; i < fixed; ++i)
                std::memcpy(out.data() + i * total + off, t.data() + i * t.dim(1),
                            t.dim(1) * sizeof(real));
            off += t.dim(1);
        }
    }
    auto sizes = std::make_shared<std::vector<std::size_t>>();
    for (const Value& p : parts) sizes->push_back(rows ? p.tensor().dim(0) : p.tensor().dim(1));
    auto ids = std::make_shared<std::vector<std::int32_t>>(idx);
    return g.make(rows ? "concat_rows" : "concat_cols", std::move(out), std::move(idx),
                  [ids, sizes, fixed, total, rows](Graph& gr, std::int32_t self) {
                      const Tensor& go = gr.grad_of(self);
                      std::size_t off = 0;
                      for (std::size_t k = 0; k < ids->size(); ++k) {
                          Tensor& gp = gr.grad_buffer((*ids)[k]);
                          const std::size_t sz = (*sizes)[k];
                          if (rows) {
                              for (std::size_t i = 0; i < sz * fixed; ++i)
                                  gp[i] += go[off * fixed + i];
                              off += sz;
                          } else {
                              for (std::size_t i = 0; i < fixed; ++i)
                                  for (std::size_t j = 0; j < sz; ++j)
                                      gp[i * sz + j] += go[i * total + off + j];
                              off += sz;
                          }
                      }
                  });
}

}  // namespace

Value concat_rows(const std::vector<Value>& parts) { return concat_axis(parts, true); }
Value concat_cols(const std::vector<Value>& parts) { return concat_axis(parts, false); }

Value slice_rows(Value a, std::size_t r0, std::size_t r1) {
    const Tensor& ta = a.tensor();
    if (ta.rank() != 2 || r0 >= r1 || r1 > ta.dim(0))
        throw std::invalid_argument("slice_rows: bad range");
    const std::size_t n = ta.dim(1);
    Tensor out(Shape{r1 - r0, n});
    std::memcpy(out.data(), ta.data() + r0 * n, out.size() * sizeof(real));
    const std::int32_t ia = a.index();
    return a.graph().make("slice_rows", std::move(out), {ia},
                          [ia, r0, n](Graph& g, std::int32_t self) {
                              const Tensor& go = g.grad_of(self);
                              Tensor& ga = g.grad_buffer(ia);
                              for (std::size_t i = 0, sz = go.size(); i < sz; ++i)
                                  ga[r0 * n + i] += go[i];
                          });
}

Value slice_cols(Value a, std::size_t c0, std::size_t c1) {
    const Tensor& ta = a.tensor();
    if (ta.rank() != 2 || c0 >= c1 || c1 > ta.dim(1))
        throw std::invalid_argument("slice_cols: bad range");
    const std::size_t m = ta.dim(0), n = ta.dim(1), w = c1 - c0;
    Tensor out(Shape{m, w});
    for (std::size_t i = 0; i < m; ++i)
        std::memcpy(out.data() + i * w, ta.data() + i * n + c0, w * sizeof(real));
    const std::int32_t ia = a.index();
    return a.graph().make("slice_cols", std::move(out), {ia},
                          [ia, c0, m, n, w](Graph& g, std::int32_t self) {
                              const Tensor& go = g.grad_of(self);
                              Tensor& ga = g.grad_buffer(ia);
                              for (std::size_t i = 0; i < m; ++i)
                                  for (std::size_t j = 0; j < w; ++j)
                                      ga[i * n + c0 + j] += go[i * w + j];
                          });
}

Value gather_rows(Value a, std::vector<std::size_t> idx) {
    const Tensor& ta = a.tensor();
    if (ta.rank() != 2) throw std::invalid_argument("gather_rows: rank-2 tensor required");
    const std::size_t n = ta.dim(1);
    for (std::size_t r : idx)
        if (r >= ta.dim(0)) throw std::invalid_argument("gather_rows: index out of range");
    Tensor out(Shape{idx.size(), n});
    for (std::size_t i = 0; i < idx.size(); ++i)
        std::memcpy(out.data() + i * n, ta.data() + idx[i] * n, n * sizeof(real));
    const std::int32_t ia = a.index();
    auto ip = std::make_shared<std::vector<std::size_t>>(std::move(idx));
    return a.graph().make("gather_rows", std::move(out), {ia},
                          [ia, ip, n](Graph& g, std::int32_t self) {
                              const Tensor& go = g.grad_of(self);
                              Tensor& ga = g.grad_buffer(ia);
                              for (std::size_t i = 0; i < ip->size(); ++i) {
                                  real* dst = ga.data() + (*ip)[i] * n;
                                  const real* src = go.data() + i * n;
                                  for (std::size_t j = 0; j < n; ++j) dst[j] += src[j];
                              }
                          });
}

Value reshape(Value a, Shape shape) {
    const Tensor& ta = a.tensor();
    if (shape_numel(shape) != ta.size()) throw std::invalid_argument("reshape: element count mismatch");
    Tensor out(std::move(shape), ta.raw());
    const std::int32_t ia = a.index();
    return a.graph().make("reshape", std::move(out), {ia}, [ia](Graph& g, std::int32_t self) {
        const Tensor& go = g.grad_of(self);
        Tensor& ga = g.grad_buffer(ia);
        for (std::size_t i = 0, n = ga.size(); i < n; ++i) ga[i] += go[i];
    });
}

Value overlap_add(Value frames, std::size_t hop) {
    const Tensor& tf = frames.tensor();
    if (tf.rank() != 2) throw std::invalid_argument("overlap_add: rank-2 tensor required");
    if (hop == 0) throw std::invalid_argument("overlap_add: hop must be positive");
    const std::size_t t = tf.dim(0), w = tf.dim(1);
    const std::size_t len = (t - 1) * hop + w;
    Tensor out(Shape{len});
    for (std::size_t f = 0; f < t; ++f) {
        real* dst = out.data() + f * hop;
        const real* src = tf.data() + f * w;
        for (std::size_t j = 0; j < w; ++j) dst[j] += src[j];
    }
    const std::int32_t ia = frames.index();
    return frames.graph().make("overlap_add", std::move(out), {ia},
                               [ia, t, w, hop](Graph& g, std::int32_t self) {
                                   const Tensor& go = g.grad_of(self);
                                   Tensor& ga = g.grad_buffer(ia);
                                   for (std::size_t f = 0; f < t; ++f) {
                                       const real* src = go.data() + f * hop;
                                       real* dst = ga.data() + f * w;
                                       for (std::size_t j = 0; j < w; ++j) dst[j] += src[j];
                                   }
                               });
}

}  // namespace cliplab
