#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"

#include "cliplab/harness.hpp"

using namespace cliplab;

namespace {

real parse_percentile(const std::string& text) {
    const char* s = text.c_str();
    char* end = nullptr;
    const double v = std::strtod(s, &end);
    if (end == s || *end != '\0')
        throw std::invalid_argument("bad percentile '" + text + "'");
    return static_cast<real>(v);
}

std::vector<real> parse_p_list(const std::string& text) {
    std::vector<real> ps;
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ','))
        if (!item.empty()) ps.push_back(parse_percentile(item));
    if (ps.empty()) throw std::invalid_argument("empty percentile list");
    return ps;
}

std::vector<LossKind> parse_loss_list(const std::string& text) {
    if (text == "all") return all_losses();
    std::vector<LossKind> ks;
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ','))
        if (!item.empty()) ks.push_back(loss_from_name(item));
    if (ks.empty()) throw std::invalid_argument("empty loss list");
    return ks;
}

void write_out(const std::filesystem::path& dir, const std::string& name,
               const std::string& text) {
    std::filesystem::create_directories(dir);
    std::ofstream f(dir / name, std::ios::binary);
    if (!f) throw std::runtime_error("cannot write " + (dir / name).string());
    f << text;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Adaptive gradient-clipping training laboratory"};
    app.require_subcommand(1);

    std::string config_path;
    std::string out_dir = "out";
    std::uint64_t seed = 0;
    std::string loss_str;
    std::string p_str;
    std::string resume_path;
    std::string save_path;
    std::size_t save_at = 0;

    CLI::App* train = app.add_subcommand("train", "Run one training configuration");
    CLI::Option* train_config = train->add_option("--config", config_path, "JSON config file");
    CLI::Option* train_seed = train->add_option("--seed", seed, "Run seed");
    train->add_option("--out", out_dir, "Output directory");
    CLI::Option* train_loss = train->add_option("--loss", loss_str, "dc|wkm|mi|chimera|snr");
    CLI::Option* train_p = train->add_option("--p", p_str, "AutoClip percentile in [0, 100]");
    train->add_option("--resume", resume_path, "Checkpoint to continue from");
    CLI::Option* train_save =
        train->add_option("--checkpoint-at", save_at, "Iteration to checkpoint after");

    CLI::App* sweep = app.add_subcommand("sweep", "Run a (p, loss) grid");
    CLI::Option* sweep_config = sweep->add_option("--config", config_path, "JSON config file");
    CLI::Option* sweep_seed = sweep->add_option("--seed", seed, "Run seed");
    sweep->add_option("--out", out_dir, "Output directory");
    std::string sweep_losses = "all";
    std::string sweep_ps = "0,1,10,25,50,90,100";
    sweep->add_option("--loss", sweep_losses, "Comma-separated losses, or 'all'");
    sweep->add_option("--p", sweep_ps, "Comma-separated percentiles");

    CLI::App* check = app.add_subcommand("gradcheck", "Finite-difference checks of the losses");
    std::string check_losses = "all";
    CLI::Option* check_seed = check->add_option("--seed", seed, "Instance seed");
    check->add_option("--loss", check_losses, "Comma-separated losses, or 'all'");

    CLI11_PARSE(app, argc, argv);

    try {
        if (*train) {
            RunConfig cfg;
            if (*train_config) cfg = load_run_config(config_path);
            if (*train_seed) cfg.seed = seed;
            if (*train_loss) cfg.loss = loss_from_name(loss_str);
            if (*train_p) {
                cfg.clip.mode = ClipMode::autoclip;
                cfg.clip.p = parse_percentile(p_str);
            }
            cfg.normalize();

            TrainHooks hooks;
            if (!resume_path.empty()) hooks.resume_from = resume_path;
            if (*train_save) {
                hooks.save_at = save_at;
                hooks.save_path =
                    (std::filesystem::path(out_dir) / "checkpoint.json").string();
                std::filesystem::create_directories(out_dir);
            }

            RunOutput out = run_training(cfg, hooks);
            write_out(out_dir, "config.json", run_config_to_json_text(cfg));
            write_out(out_dir, "dynamics.csv", out.dynamics.to_csv());
            write_out(out_dir, "results.csv", results_to_csv({out.row}));
            std::cout << "p=" << out.row.p << " loss=" << out.row.loss
                      << " si_sdr_db=" << csv_real(*out.row.si_sdr_db)
                      << " final_train_loss=" << csv_real(*out.row.final_train_loss)
                      << " fire_fraction=" << csv_real(*out.row.fire_fraction) << "\n";
        } else if (*sweep) {
            RunConfig cfg;
            if (*sweep_config) cfg = load_run_config(config_path);
            if (*sweep_seed) cfg.seed = seed;
            std::vector<ResultRow> rows =
                run_sweep(cfg, parse_p_list(sweep_ps), parse_loss_list(sweep_losses));
            const std::string csv = results_to_csv(rows);
            write_out(out_dir, "results.csv", csv);
            std::cout << csv;
        } else if (*check) {
            const std::uint64_t s = *check_seed ? seed : 7;
            bool all_pass = true;
            for (LossKind k : parse_loss_list(check_losses)) {
                GradCheckReport rep = gradcheck(k, s);
                std::cout << rep.text() << "\n";
                all_pass = all_pass && rep.pass;
            }
            if (!all_pass) return 1;
        }
    } catch (const TrainAbort& e) {
        std::cerr << "training aborted at " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
