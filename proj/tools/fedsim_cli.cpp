/*
 * Copyright 2026 fedsim contributors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *      http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "fedsim/fedsim.hpp"

namespace {

constexpr int kExitOk = 0;
constexpr int kExitError = 1;
constexpr int kExitDiverged = 2;

std::string read_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw fedsim::IoError("cannot open config file " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

fedsim::RunConfig load_config(const std::string& path, const std::string& out_override) {
    fedsim::RunConfig cfg = fedsim::parse_config(read_file(path));
    if (!out_override.empty()) {
        cfg.out_dir = out_override;
    } else if (const char* env = std::getenv("FEDSIM_OUT_DIR"); env && *env) {
        cfg.out_dir = env;
    }
    return cfg;
}

int cmd_run(const std::string& config_path, const std::string& out_override, bool label_hist) {
    const fedsim::RunConfig cfg = load_config(config_path, out_override);
    bool any_diverged = false;
    for (const fedsim::RunOutput& out : fedsim::run(cfg)) {
        const fedsim::RoundRecord& last = out.records.back();
        std::cout << cfg.run_id << " seed=" << out.seed << " rounds=" << out.records.size()
                  << " final_loss=" << last.train_loss;
        if (last.test_accuracy) std::cout << " final_accuracy=" << *last.test_accuracy;
        std::cout << " grad_norm_sq=" << last.grad_norm_sq
                  << (out.diverged ? " DIVERGED at round " + std::to_string(out.diverged_round) : "")
                  << " -> " << out.csv_path << '\n';
        any_diverged = any_diverged || out.diverged;

        if (label_hist) {
            namespace fs = std::filesystem;
            const std::string hist_path =
                (fs::path(cfg.out_dir) / (cfg.run_id + "_labels_" + std::to_string(out.seed) + ".csv"))
                    .string();
            std::ofstream hf(hist_path, std::ios::trunc);
            if (!hf) throw fedsim::IoError("cannot open " + hist_path);
            hf << fedsim::label_histogram_csv(out.dataset);
            std::cout << "label histogram -> " << hist_path << '\n';
        }
    }
    return any_diverged ? kExitDiverged : kExitOk;
}

int cmd_sweep(const std::string& config_path, const std::string& out_override, const std::string& axis,
              const std::vector<double>& values, const std::vector<std::uint64_t>& seeds) {
    const fedsim::RunConfig base = load_config(config_path, out_override);
    fedsim::SweepSpec spec;
    spec.axis = fedsim::sweep_axis_from_string(axis);
    spec.values = values;
    std::string summary_path;
    const auto rows = fedsim::sweep(base, spec, seeds, &summary_path);
    for (const fedsim::SweepCellSummary& r : rows) {
        std::cout << axis << "=" << r.value << " seeds=" << r.seeds << " diverged=" << r.diverged
                  << " final_loss=" << r.final_loss_mean << "+-" << r.final_loss_std;
        if (r.final_accuracy_mean) {
            std::cout << " final_accuracy=" << *r.final_accuracy_mean << "+-" << *r.final_accuracy_std;
        }
        if (r.target) {
            std::cout << " target=" << *r.target << " reached=" << r.reached << "/" << r.seeds;
            if (r.rounds_to_target_mean) {
                std::cout << " rounds=" << *r.rounds_to_target_mean << "+-" << *r.rounds_to_target_std;
            }
        }
        std::cout << '\n';
    }
    std::cout << "summary -> " << summary_path << '\n';
    return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"fedsim: deterministic federated primal-dual training simulator"};
    app.require_subcommand(1);

    std::string config_path;
    std::string out_override;
    bool label_hist = false;

    CLI::App* run_cmd = app.add_subcommand("run", "execute one configuration (every listed seed)");
    run_cmd->add_option("--config", config_path, "path to a key = value config file")->required();
    run_cmd->add_option("--out", out_override, "output directory (overrides config and FEDSIM_OUT_DIR)");
    run_cmd->add_flag("--label-hist", label_hist, "also export per-client label histograms");

    std::string axis;
    std::vector<double> values;
    std::vector<std::uint64_t> seeds;
    CLI::App* sweep_cmd = app.add_subcommand("sweep", "run a sweep over one axis");
    sweep_cmd->add_option("--config", config_path, "path to the base config file")->required();
    sweep_cmd->add_option("--axis", axis, "participation | local_interval | rounds_fixed_budget")
        ->required();
    sweep_cmd->add_option("--values", values, "comma-separated cell values")->required()->delimiter(',');
    sweep_cmd->add_option("--seeds", seeds, "comma-separated seeds (default: config seeds)")
        ->delimiter(',');
    sweep_cmd->add_option("--out", out_override, "output directory (overrides config and FEDSIM_OUT_DIR)");

    CLI11_PARSE(app, argc, argv);

    try {
        if (run_cmd->parsed()) return cmd_run(config_path, out_override, label_hist);
        if (sweep_cmd->parsed()) return cmd_sweep(config_path, out_override, axis, values, seeds);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kExitError;
    }
    return kExitError;
}
