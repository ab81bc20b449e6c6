#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "cliplab/tensor.hpp"

namespace cliplab {

class Graph;

/// Per-parameter gradients plus the cached global L2 norm, taken over the
/// concatenation of all parameter tensors.
struct GradVector {
    std::vector<Tensor> grads;
    real norm = 0;

    static GradVector from(std::vector<Tensor> gs);

    GradVector scaled(real s) const;
    std::size_t numel() const;
    bool all_finite() const;
};

/// Handle to a node in a Graph. Cheap to copy; valid for the graph's lifetime.
class Value {
public:
    Value() = default;

    const Tensor& tensor() const;
    const Shape& shape() const { return tensor().shape(); }
    real scalar() const;
    Graph& graph() const { return *g_; }
    std::int32_t index() const { return i_; }
    bool valid() const { return g_ != nullptr; }

private:
    friend class Graph;
    Value(Graph* g, std::int32_t i) : g_(g), i_(i) {}
    Graph* g_ = nullptr;
    std::int32_t i_ = -1;
};

/// Reverse-mode tape over dense tensors. Nodes are appended in topological
/// order as the forward pass runs; one backward sweep visits each node once.
/// A Graph is rebuilt per forward pass and confined to a single thread.
class Graph {
public:
    Graph() = default;
    Graph(const Graph&) = delete;
    Graph& operator=(const Graph&) = delete;

    /// Leaf holding data that is not differentiated.
    Value constant(Tensor t);

    /// Leaf registered as a trainable parameter; backward() reports gradients
    /// in registration order.
    Value param(Tensor t);

    std::vector<Value> params(const std::vector<Tensor>& ts);

    std::size_t num_nodes() const { return nodes_.size(); }
    std::size_t num_params() const { return params_.size(); }

    /// Reverse pass from a scalar loss. Gradients of earlier backward() calls
    /// are discarded. Throws std::invalid_argument for a non-scalar loss and
    /// NonFiniteError when the loss or any parameter gradient is non-finite.
    GradVector backward(Value loss);

    // --- builder API, used by the op functions below ---
    using BackwardFn = std::function<void(Graph&, std::int32_t)>;
    Value make(const char* op, Tensor value, std::vector<std::int32_t> inputs, BackwardFn fn);
    const Tensor& value_of(std::int32_t idx) const { return nodes_[idx].value; }
    const Tensor& grad_of(std::int32_t idx) const { return nodes_[idx].grad; }
    /// Gradient accumulation buffer for a node, zero-initialized on first use.
    Tensor& grad_buffer(std::int32_t idx);
    bool grad_live(std::int32_t idx) const { return nodes_[idx].grad_live; }
    const std::vector<std::int32_t>& inputs_of(std::int32_t idx) const { return nodes_[idx].inputs; }
    const char* op_of(std::int32_t idx) const { return nodes_[idx].op; }

private:
    struct Node {
        const char* op;
        Tensor value;
        Tensor grad;
        bool grad_live = false;
        std::vector<std::int32_t> inputs;
        BackwardFn backward;
        std::int32_t param_index = -1;
    };
    std::vector<Node> nodes_;
    std::vector<std::int32_t> params_;
};

// Primitive operations. Elementwise ops require identical shapes.
Value add(Value a, Value b);
Value sub(Value a, Value b);
Value mul(Value a, Value b);
Value scale(Value a, real s);
Value add_scalar(Value a, real c);
inline Value neg(Value a) { return scale(a, real(-1)); }

Value matmul(Value a, Value b);
Value transpose(Value a);

Value sigmoid(Value a);
Value tanh(Value a);
Value log(Value a);
Value cos(Value a);
Value abs(Value a);
Value clamp(Value a, real lo, real hi);

Value sum(Value a);
Value mean(Value a);
Value l1_norm(Value a);
Value l2_norm(Value a);
Value sum_squares(Value a);

/// Inverse of a square matrix; regularized as (A + eps*I)^-1 when the pivot
/// condition estimate exceeds 1e10. Throws on singular input beyond that.
Value inverse(Value a);
Value trace(Value a);

/// Divides each row of a matrix by its L2 norm. Rows must be nonzero.
Value row_normalize(Value a);
/// out[i,j] = a[i,j] * w[i] for a constant weight vector w.
Value scale_rows(Value a, const Tensor& w);

Value concat_rows(const std::vector<Value>& parts);
Value concat_cols(const std::vector<Value>& parts);
Value slice_rows(Value a, std::size_t r0, std::size_t r1);
Value slice_cols(Value a, std::size_t c0, std::size_t c1);
Value gather_rows(Value a, std::vector<std::size_t> idx);
Value reshape(Value a, Shape shape);

/// Overlap-add of frames (T x W) at the given hop; output length is
/// (T-1)*hop + W. The adjoint is the matching frame gather.
Value overlap_add(Value frames, std::size_t hop);

inline Value operator+(Value a, Value b) { return add(a, b); }
inline Value operator-(Value a, Value b) { return sub(a, b); }
inline Value operator*(Value a, Value b) { return mul(a, b); }

// Dense kernels shared with non-graph code paths.
namespace kernels {
// C[m x n] += A[m x k] * B[k x n]
void mm_acc_nn(const real* A, const real* B, real* C, std::size_t m, std::size_t k, std::size_t n);
// C[m x n] += A[m x k] * B[n x k]^T
void mm_acc_nt(const real* A, const real* B, real* C, std::size_t m, std::size_t k, std::size_t n);
// C[k x n] += A[m x k]^T * B[m x n]
void mm_acc_tn(const real* A, const real* B, real* C, std::size_t m, std::size_t k, std::size_t n);
/// Gauss-Jordan inverse with partial pivoting. Returns the pivot-ratio
/// condition estimate; regularizes and retries internally per the contract.
Tensor mat_inverse(const Tensor& a);
}  // namespace kernels

}  // namespace cliplab
