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

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <future>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "fedsim/datagen.hpp"
#include "fedsim/federation.hpp"
#include "fedsim/local_solvers.hpp"
#include "fedsim/metrics.hpp"
#include "fedsim/objectives.hpp"
#include "fedsim/veckit.hpp"

namespace fedsim {

struct DataSpec {
    int num_classes = 4;
    int feature_dim = 10;
    int per_class = 250;
    double spread = 0.5;
    double alpha = std::numeric_limits<double>::infinity();
    bool with_replacement = true;
    int samples_per_client = 0;  // 0 = pool size / clients
};

/// Full description of one experiment. Field defaults follow the reference
/// hyperparameter grid (eta0 0.1, decay 0.998, weight decay 0.001, batch 50,
/// rho 0.1) at desk scale (C=50, P=5, K=20, T=300).
struct RunConfig {
    AlgorithmKind algorithm = AlgorithmKind::AFedPD;
    int clients = 50;        // C
    int participants = 5;    // P
    int rounds = 300;        // T
    SolverConfig solver;     // K, eta0, lr_decay, batch_size, rho, sam_*, grad_clip
    double weight_decay = 0.001;
    ObjectiveKind objective = ObjectiveKind::Logistic;
    int hidden_width = 16;  // mlp only
    DataSpec data;
    std::uint64_t master_seed = 42;
    std::vector<std::uint64_t> seeds;  // empty = {master_seed}
    double init_std = 0.1;
    std::string run_id = "run";
    std::string out_dir = "out";
    std::vector<double> target_accuracies;
    bool feddyn_use_next_dual = false;
    int threads = 1;
    int metrics_stride = 1;  // evaluate grad_norm_sq every n-th round

    std::vector<std::uint64_t> effective_seeds() const {
        return seeds.empty() ? std::vector<std::uint64_t>{master_seed} : seeds;
    }

    int pool_size() const { return data.num_classes * data.per_class; }

    int effective_samples_per_client() const {
        if (data.samples_per_client > 0) return data.samples_per_client;
        return std::max(1, pool_size() / clients);
    }

    Objective make_objective() const {
        switch (objective) {
            case ObjectiveKind::Quadratic: return make_quadratic(data.feature_dim, weight_decay);
            case ObjectiveKind::Logistic:
                return make_logistic(data.feature_dim, data.num_classes, weight_decay);
            case ObjectiveKind::Mlp:
                return make_mlp(data.feature_dim, hidden_width, data.num_classes, weight_decay);
        }
        throw ConfigError("unknown objective kind");
    }

    void validate() const {
        if (clients < 1) throw ConfigError("clients must be >= 1");
        if (participants < 1 || participants > clients) {
            throw ConfigError("participants (" + std::to_string(participants) +
                              ") must lie in [1, clients=" + std::to_string(clients) + "]");
        }
        if (algorithm == AlgorithmKind::FedPD && participants != clients) {
            throw ConfigError("fedpd requires full participation: participants (" +
                              std::to_string(participants) + ") != clients (" + std::to_string(clients) +
                              ")");
        }
        if (rounds < 1) throw ConfigError("rounds must be >= 1");
        solver.validate();
        if (is_primal_dual(algorithm) && !(solver.rho > 0.0)) {
            throw ConfigError("rho must be > 0 for primal-dual algorithms");
        }
        if (weight_decay < 0.0) throw ConfigError("weight_decay must be >= 0");
        if (objective == ObjectiveKind::Mlp && hidden_width < 1) {
            throw ConfigError("hidden_width must be >= 1 for the mlp objective");
        }
        if (data.num_classes < 2) throw ConfigError("num_classes must be >= 2");
        if (data.feature_dim < 1) throw ConfigError("feature_dim must be >= 1");
        if (data.per_class < 1) throw ConfigError("per_class must be >= 1");
        if (data.spread < 0.0) throw ConfigError("spread must be >= 0");
        if (!(std::isinf(data.alpha) || data.alpha > 0.0)) {
            throw ConfigError("alpha must be > 0 or inf");
        }
        if (data.samples_per_client < 0) throw ConfigError("samples_per_client must be >= 0");
        if (init_std < 0.0) throw ConfigError("init_std must be >= 0");
        if (threads < 1) throw ConfigError("threads must be >= 1");
        if (metrics_stride < 1) throw ConfigError("metrics_stride must be >= 1");
        for (double t : target_accuracies) {
            if (t < 0.0) throw ConfigError("target accuracies must be >= 0");
        }
    }
};

// ---------------------------------------------------------------------------
// Flat key = value configuration format. '#' starts a comment; unknown keys
// are rejected.
// ---------------------------------------------------------------------------

namespace detail {

inline std::string trim(const std::string& s) {
    std::size_t b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return "";
    std::size_t e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
}

inline double parse_double(const std::string& key, const std::string& v) {
    if (v == "inf" || v == "infinity") return std::numeric_limits<double>::infinity();
    char* end = nullptr;
    const double x = std::strtod(v.c_str(), &end);
    if (end == v.c_str() || *end != '\0') throw ConfigError(key + ": not a number: '" + v + "'");
    return x;
}

inline long long parse_int(const std::string& key, const std::string& v) {
    char* end = nullptr;
    const long long x = std::strtoll(v.c_str(), &end, 10);
    if (end == v.c_str() || *end != '\0') throw ConfigError(key + ": not an integer: '" + v + "'");
    return x;
}

inline bool parse_bool(const std::string& key, const std::string& v) {
    if (v == "true" || v == "1") return true;
    if (v == "false" || v == "0") return false;
    throw ConfigError(key + ": not a boolean: '" + v + "'");
}

template <class T, class Fn>
inline std::vector<T> parse_list(const std::string& key, const std::string& v, Fn&& one) {
    std::vector<T> out;
    std::stringstream ss(v);
    std::string item;
    while (std::getline(ss, item, ',')) {
        item = trim(item);
        if (!item.empty()) out.push_back(one(key, item));
    }
    return out;
}

inline std::string fmt_config_double(double v) {
    if (std::isinf(v)) return "inf";
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

}  // namespace detail

inline RunConfig parse_config(const std::string& text) {
    RunConfig cfg;
    std::istringstream in(text);
    std::string raw;
    int lineno = 0;
    while (std::getline(in, raw)) {
        ++lineno;
        std::string line = raw;
        const std::size_t hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        line = detail::trim(line);
        if (line.empty()) continue;
        const std::size_t eq = line.find('=');
        if (eq == std::string::npos) {
            throw ConfigError("line " + std::to_string(lineno) + ": expected 'key = value', got '" +
                              detail::trim(raw) + "'");
        }
        const std::string key = detail::trim(line.substr(0, eq));
        const std::string val = detail::trim(line.substr(eq + 1));
        if (key.empty() || val.empty()) {
            throw ConfigError("line " + std::to_string(lineno) + ": empty key or value");
        }

        if (key == "algorithm") cfg.algorithm = algorithm_from_string(val);
        else if (key == "clients") cfg.clients = static_cast<int>(detail::parse_int(key, val));
        else if (key == "participants") cfg.participants = static_cast<int>(detail::parse_int(key, val));
        else if (key == "rounds") cfg.rounds = static_cast<int>(detail::parse_int(key, val));
        else if (key == "local_steps") cfg.solver.local_steps = static_cast<int>(detail::parse_int(key, val));
        else if (key == "eta0") cfg.solver.eta0 = detail::parse_double(key, val);
        else if (key == "lr_decay") cfg.solver.lr_decay = detail::parse_double(key, val);
        else if (key == "batch_size") cfg.solver.batch_size = static_cast<int>(detail::parse_int(key, val));
        else if (key == "rho") cfg.solver.rho = detail::parse_double(key, val);
        else if (key == "sam_radius") cfg.solver.sam_radius = detail::parse_double(key, val);
        else if (key == "sam_eps") cfg.solver.sam_eps = detail::parse_double(key, val);
        else if (key == "grad_clip") cfg.solver.grad_clip = detail::parse_double(key, val);
        else if (key == "weight_decay") cfg.weight_decay = detail::parse_double(key, val);
        else if (key == "objective") {
            if (val == "quadratic") cfg.objective = ObjectiveKind::Quadratic;
            else if (val == "logistic") cfg.objective = ObjectiveKind::Logistic;
            else if (val == "mlp") cfg.objective = ObjectiveKind::Mlp;
            else throw ConfigError("objective: expected quadratic|logistic|mlp, got '" + val + "'");
        }
        else if (key == "hidden_width") cfg.hidden_width = static_cast<int>(detail::parse_int(key, val));
        else if (key == "num_classes") cfg.data.num_classes = static_cast<int>(detail::parse_int(key, val));
        else if (key == "feature_dim") cfg.data.feature_dim = static_cast<int>(detail::parse_int(key, val));
        else if (key == "per_class") cfg.data.per_class = static_cast<int>(detail::parse_int(key, val));
        else if (key == "spread") cfg.data.spread = detail::parse_double(key, val);
        else if (key == "alpha") cfg.data.alpha = detail::parse_double(key, val);
        else if (key == "with_replacement") cfg.data.with_replacement = detail::parse_bool(key, val);
        else if (key == "samples_per_client") {
            cfg.data.samples_per_client = static_cast<int>(detail::parse_int(key, val));
        }
        else if (key == "master_seed") cfg.master_seed = static_cast<std::uint64_t>(detail::parse_int(key, val));
        else if (key == "seeds") {
            cfg.seeds = detail::parse_list<std::uint64_t>(key, val, [](const std::string& k, const std::string& s) {
                return static_cast<std::uint64_t>(detail::parse_int(k, s));
            });
        }
        else if (key == "init_std") cfg.init_std = detail::parse_double(key, val);
        else if (key == "run_id") cfg.run_id = val;
        else if (key == "out_dir") cfg.out_dir = val;
        else if (key == "target_accuracies") {
            cfg.target_accuracies = detail::parse_list<double>(key, val, detail::parse_double);
        }
        else if (key == "feddyn_use_next_dual") cfg.feddyn_use_next_dual = detail::parse_bool(key, val);
        else if (key == "threads") cfg.threads = static_cast<int>(detail::parse_int(key, val));
        else if (key == "metrics_stride") cfg.metrics_stride = static_cast<int>(detail::parse_int(key, val));
        else throw ConfigError("line " + std::to_string(lineno) + ": unknown key '" + key + "'");
    }
    cfg.validate();
    return cfg;
}

inline std::string serialize_config(const RunConfig& cfg) {
    std::ostringstream out;
    out << "algorithm = " << to_string(cfg.algorithm) << '\n'
        << "clients = " << cfg.clients << '\n'
        << "participants = " << cfg.participants << '\n'
        << "rounds = " << cfg.rounds << '\n'
        << "local_steps = " << cfg.solver.local_steps << '\n'
        << "eta0 = " << detail::fmt_config_double(cfg.solver.eta0) << '\n'
        << "lr_decay = " << detail::fmt_config_double(cfg.solver.lr_decay) << '\n'
        << "batch_size = " << cfg.solver.batch_size << '\n'
        << "rho = " << detail::fmt_config_double(cfg.solver.rho) << '\n'
        << "sam_radius = " << detail::fmt_config_double(cfg.solver.sam_radius) << '\n'
        << "sam_eps = " << detail::fmt_config_double(cfg.solver.sam_eps) << '\n'
        << "grad_clip = " << detail::fmt_config_double(cfg.solver.grad_clip) << '\n'
        << "weight_decay = " << detail::fmt_config_double(cfg.weight_decay) << '\n';
    out << "objective = "
        << (cfg.objective == ObjectiveKind::Quadratic ? "quadratic"
            : cfg.objective == ObjectiveKind::Logistic ? "logistic" : "mlp")
        << '\n'
        << "hidden_width = " << cfg.hidden_width << '\n'
        << "num_classes = " << cfg.data.num_classes << '\n'
        << "feature_dim = " << cfg.data.feature_dim << '\n'
        << "per_class = " << cfg.data.per_class << '\n'
        << "spread = " << detail::fmt_config_double(cfg.data.spread) << '\n'
        << "alpha = " << detail::fmt_config_double(cfg.data.alpha) << '\n'
        << "with_replacement = " << (cfg.data.with_replacement ? "true" : "false") << '\n'
        << "samples_per_client = " << cfg.data.samples_per_client << '\n'
        << "master_seed = " << cfg.master_seed << '\n';
    if (!cfg.seeds.empty()) {
        out << "seeds = ";
        for (std::size_t i = 0; i < cfg.seeds.size(); ++i) out << (i ? "," : "") << cfg.seeds[i];
        out << '\n';
    }
    out << "init_std = " << detail::fmt_config_double(cfg.init_std) << '\n'
        << "run_id = " << cfg.run_id << '\n'
        << "out_dir = " << cfg.out_dir << '\n';
    if (!cfg.target_accuracies.empty()) {
        out << "target_accuracies = ";
        for (std::size_t i = 0; i < cfg.target_accuracies.size(); ++i) {
            out << (i ? "," : "") << detail::fmt_config_double(cfg.target_accuracies[i]);
        }
        out << '\n';
    }
    out << "feddyn_use_next_dual = " << (cfg.feddyn_use_next_dual ? "true" : "false") << '\n'
        << "threads = " << cfg.threads << '\n'
        << "metrics_stride = " << cfg.metrics_stride << '\n';
    return out.str();
}

// ---------------------------------------------------------------------------
// Execution
// ---------------------------------------------------------------------------

struct RunOutput {
    std::uint64_t seed = 0;
    std::vector<RoundRecord> records;
    ParamVector final_theta;
    bool diverged = false;
    std::int64_t diverged_round = -1;
    std::string csv_path;
    FederatedDataset dataset;  // retained for audits and tests
};

inline FederatedDataset build_dataset(const RunConfig& cfg, std::uint64_t seed) {
    RngStream pool_rng = substream(seed, purpose::kDataPool);
    const std::vector<DataSample> pool = make_gaussian_classes(
        pool_rng, cfg.data.num_classes, cfg.data.feature_dim, cfg.data.per_class, cfg.data.spread);
    RngStream part_rng = substream(seed, purpose::kPartition);
    return dirichlet_partition(part_rng, pool, cfg.clients, cfg.data.alpha, cfg.data.with_replacement,
                               cfg.effective_samples_per_client());
}

namespace detail {

inline RoundRecord make_record(const RunConfig& cfg, const Objective& obj, const FederatedDataset& data,
                               const ServerState& state, std::int64_t round,
                               const std::vector<LocalTrace>& locals, double prev_grad_norm_sq) {
    RoundRecord rec;
    rec.round = round;
    rec.train_loss = global_loss(obj, data, state.theta);
    if (obj.is_classifier()) rec.test_accuracy = obj.predict_accuracy(state.theta, data.test_set);
    const bool fresh = round % cfg.metrics_stride == 0 || round == cfg.rounds - 1;
    rec.grad_norm_sq = fresh ? global_grad_norm_sq(obj, data, state.theta) : prev_grad_norm_sq;
    rec.primal_residual = primal_residual(state);
    rec.dual_residual = dual_residual(state, cfg.solver.rho);
    const auto [mx, mean] = staleness_stats(state);
    rec.max_staleness = mx;
    rec.mean_staleness = mean;
    double inex = 0.0;
    for (const LocalTrace& tr : locals) inex += tr.inexactness;
    rec.mean_inexactness = locals.empty() ? 0.0 : inex / static_cast<double>(locals.size());
    return rec;
}

inline std::string csv_path_for(const RunConfig& cfg, std::uint64_t seed) {
    namespace fs = std::filesystem;
    return (fs::path(cfg.out_dir) / (cfg.run_id + "_" + std::to_string(seed) + ".csv")).string();
}

}  // namespace detail

/// Executes one seeded run of T rounds and writes <run_id>_<seed>.csv.
/// A diverged local solve ends the run: the final record carries the
/// pre-round metrics with the diverged flag set.
inline RunOutput run_single(const RunConfig& cfg, std::uint64_t seed, bool write_csv = true) {
    cfg.validate();
    RunOutput out;
    out.seed = seed;
    out.dataset = build_dataset(cfg, seed);

    const Objective obj = cfg.make_objective();
    RngStream init_rng = substream(seed, purpose::kInit);
    const ParamVector theta0 =
        gaussian_vector(init_rng, static_cast<std::size_t>(obj.param_dim()), 0.0, cfg.init_std);
    ServerState state = make_initial_state(theta0, cfg.clients);

    EngineConfig ecfg;
    ecfg.solver = cfg.solver;
    ecfg.master_seed = seed;
    ecfg.threads = cfg.threads;
    ecfg.feddyn_use_next_dual = cfg.feddyn_use_next_dual;

    double prev_gns = 0.0;
    for (int t = 0; t < cfg.rounds; ++t) {
        RoundPlan plan;
        if (cfg.participants == cfg.clients) {
            plan = full_plan(cfg.clients);
        } else {
            RngStream plan_rng = substream(seed, purpose::kPlan, static_cast<std::uint64_t>(t));
            plan = sample_clients(plan_rng, cfg.clients, cfg.participants);
        }
        try {
            RoundResult rr = run_round(cfg.algorithm, state, plan, obj, out.dataset, ecfg);
            state = std::move(rr.state);
            RoundRecord rec = detail::make_record(cfg, obj, out.dataset, state, t, rr.locals, prev_gns);
            prev_gns = rec.grad_norm_sq;
            out.records.push_back(std::move(rec));
        } catch (const DivergenceError&) {
            RoundRecord rec = detail::make_record(cfg, obj, out.dataset, state, t, {}, prev_gns);
            rec.diverged = true;
            out.records.push_back(std::move(rec));
            out.diverged = true;
            out.diverged_round = t;
            break;
        }
    }

    out.final_theta = state.theta;
    if (write_csv) {
        out.csv_path = detail::csv_path_for(cfg, seed);
        write_records_csv(out.csv_path, out.records);
    }
    return out;
}

/// Runs every seed in the config. CSVs land in out_dir, one per seed.
inline std::vector<RunOutput> run(const RunConfig& cfg, bool write_csv = true) {
    std::vector<RunOutput> outs;
    for (std::uint64_t seed : cfg.effective_seeds()) outs.push_back(run_single(cfg, seed, write_csv));
    return outs;
}

// ---------------------------------------------------------------------------
// Sweeps
// ---------------------------------------------------------------------------

enum class SweepAxis { Participation, LocalInterval, RoundsFixedBudget };

inline const char* to_string(SweepAxis a) {
    switch (a) {
        case SweepAxis::Participation: return "participation";
        case SweepAxis::LocalInterval: return "local_interval";
        case SweepAxis::RoundsFixedBudget: return "rounds_fixed_budget";
    }
    return "?";
}

inline SweepAxis sweep_axis_from_string(const std::string& s) {
    for (SweepAxis a : {SweepAxis::Participation, SweepAxis::LocalInterval, SweepAxis::RoundsFixedBudget}) {
        if (s == to_string(a)) return a;
    }
    throw ConfigError("unknown sweep axis '" + s + "'");
}

struct SweepSpec {
    SweepAxis axis = SweepAxis::Participation;
    std::vector<double> values;
};

/// Participation ratio -> client count (floor, clamped to [1, C]).
inline int participants_for_ratio(double ratio, int clients) {
    if (!(ratio > 0.0) || ratio > 1.0) throw ConfigError("participation ratio must be in (0,1]");
    const int p = static_cast<int>(std::floor(ratio * clients + 1e-9));
    return std::min(clients, std::max(1, p));
}

/// Applies one sweep-cell value; rounds_fixed_budget keeps T*K constant.
inline RunConfig cell_config(const RunConfig& base, SweepAxis axis, double value) {
    RunConfig cfg = base;
    std::ostringstream tag;
    switch (axis) {
        case SweepAxis::Participation: {
            cfg.participants = participants_for_ratio(value, base.clients);
            tag << "participation_" << value;
            break;
        }
        case SweepAxis::LocalInterval: {
            const int k = static_cast<int>(value);
            if (k < 1 || static_cast<double>(k) != value) {
                throw ConfigError("local_interval sweep values must be positive integers");
            }
            cfg.solver.local_steps = k;
            tag << "local_interval_" << k;
            break;
        }
        case SweepAxis::RoundsFixedBudget: {
            const long long budget =
                static_cast<long long>(base.rounds) * static_cast<long long>(base.solver.local_steps);
            const int t = static_cast<int>(value);
            if (t < 1 || static_cast<double>(t) != value) {
                throw ConfigError("rounds_fixed_budget sweep values must be positive integers");
            }
            if (budget % t != 0) {
                throw ConfigError("rounds_fixed_budget: T=" + std::to_string(t) +
                                  " does not divide the iteration budget " + std::to_string(budget));
            }
            cfg.rounds = t;
            cfg.solver.local_steps = static_cast<int>(budget / t);
            tag << "rounds_" << t;
            break;
        }
    }
    cfg.run_id = base.run_id + "_" + tag.str();
    if (cfg.algorithm == AlgorithmKind::FedPD) cfg.participants = cfg.clients;
    cfg.validate();
    return cfg;
}

struct SweepCellSummary {
    double value = 0.0;
    int seeds = 0;
    int diverged = 0;
    double final_loss_mean = 0.0, final_loss_std = 0.0;
    std::optional<double> final_accuracy_mean, final_accuracy_std;
    double final_grad_norm_sq_mean = 0.0, final_grad_norm_sq_std = 0.0;
    std::optional<double> target;  // absent when the config lists no targets
    int reached = 0;
    std::optional<double> rounds_to_target_mean, rounds_to_target_std;
};

namespace detail {

inline std::pair<double, double> mean_std(const std::vector<double>& xs) {
    if (xs.empty()) return {0.0, 0.0};
    double m = 0.0;
    for (double x : xs) m += x;
    m /= static_cast<double>(xs.size());
    if (xs.size() < 2) return {m, 0.0};
    double v = 0.0;
    for (double x : xs) v += (x - m) * (x - m);
    return {m, std::sqrt(v / static_cast<double>(xs.size() - 1))};
}

inline std::vector<SweepCellSummary> summarize_cell(double value, const std::vector<RunOutput>& runs,
                                                    const std::vector<double>& targets) {
    std::vector<double> losses, accs, gns;
    int diverged = 0;
    for (const RunOutput& r : runs) {
        if (r.diverged) {
            ++diverged;
            continue;
        }
        const RoundRecord& last = r.records.back();
        losses.push_back(last.train_loss);
        gns.push_back(last.grad_norm_sq);
        if (last.test_accuracy) accs.push_back(*last.test_accuracy);
    }

    SweepCellSummary base;
    base.value = value;
    base.seeds = static_cast<int>(runs.size());
    base.diverged = diverged;
    std::tie(base.final_loss_mean, base.final_loss_std) = mean_std(losses);
    std::tie(base.final_grad_norm_sq_mean, base.final_grad_norm_sq_std) = mean_std(gns);
    if (!accs.empty()) {
        const auto [m, s] = mean_std(accs);
        base.final_accuracy_mean = m;
        base.final_accuracy_std = s;
    }

    if (targets.empty()) return {base};
    std::vector<SweepCellSummary> rows;
    for (double target : targets) {
        SweepCellSummary row = base;
        row.target = target;
        std::vector<double> hit_rounds;
        for (const RunOutput& r : runs) {
            if (const auto hit = rounds_to_target(r.records, target)) {
                hit_rounds.push_back(static_cast<double>(*hit));
            }
        }
        row.reached = static_cast<int>(hit_rounds.size());
        if (!hit_rounds.empty()) {
            const auto [m, s] = mean_std(hit_rounds);
            row.rounds_to_target_mean = m;
            row.rounds_to_target_std = s;
        }
        rows.push_back(std::move(row));
    }
    return rows;
}

}  // namespace detail

/// Runs every (value, seed) cell, one CSV per run plus a summary CSV
/// (mean +- sample std over completed seeds). Cells execute in parallel when
/// base.threads > 1; each run keeps its own seeded streams, so results do not
/// depend on scheduling.
inline std::vector<SweepCellSummary> sweep(const RunConfig& base, const SweepSpec& spec,
                                           const std::vector<std::uint64_t>& seeds,
                                           std::string* summary_path_out = nullptr) {
    if (spec.values.empty()) throw ConfigError("sweep: values must be non-empty");
    const std::vector<std::uint64_t> use_seeds = seeds.empty() ? base.effective_seeds() : seeds;

    struct Task {
        RunConfig cfg;
        std::uint64_t seed;
    };
    std::vector<Task> tasks;
    for (double v : spec.values) {
        const RunConfig cfg = cell_config(base, spec.axis, v);
        for (std::uint64_t s : use_seeds) tasks.push_back(Task{cfg, s});
    }

    std::vector<RunOutput> results(tasks.size());
    const int threads = std::max(1, base.threads);
    if (threads == 1) {
        for (std::size_t i = 0; i < tasks.size(); ++i) {
            RunConfig cfg = tasks[i].cfg;
            cfg.threads = 1;
            results[i] = run_single(cfg, tasks[i].seed);
        }
    } else {
        std::vector<std::future<void>> futs;
        const auto stride = static_cast<std::size_t>(threads);
        for (std::size_t t = 0; t < stride; ++t) {
            futs.push_back(std::async(std::launch::async, [&, t] {
                for (std::size_t i = t; i < tasks.size(); i += stride) {
                    RunConfig cfg = tasks[i].cfg;
                    cfg.threads = 1;  // parallelism lives at the cell level here
                    results[i] = run_single(cfg, tasks[i].seed);
                }
            }));
        }
        for (auto& f : futs) f.get();
    }

    std::vector<SweepCellSummary> rows;
    std::size_t idx = 0;
    for (double v : spec.values) {
        std::vector<RunOutput> cell_runs;
        for (std::size_t s = 0; s < use_seeds.size(); ++s) cell_runs.push_back(std::move(results[idx++]));
        for (SweepCellSummary& row : detail::summarize_cell(v, cell_runs, base.target_accuracies)) {
            rows.push_back(std::move(row));
        }
    }

    // summary CSV
    namespace fs = std::filesystem;
    const std::string path =
        (fs::path(base.out_dir) / (base.run_id + "_" + to_string(spec.axis) + "_summary.csv")).string();
    std::ostringstream body;
    body << "axis,value,seeds,diverged,final_loss_mean,final_loss_std,final_accuracy_mean,"
            "final_accuracy_std,final_grad_norm_sq_mean,final_grad_norm_sq_std,target,reached,"
            "rounds_to_target_mean,rounds_to_target_std\n";
    for (const SweepCellSummary& r : rows) {
        body << to_string(spec.axis) << ',' << detail::fmt_config_double(r.value) << ',' << r.seeds << ','
             << r.diverged << ',' << detail::fmt_config_double(r.final_loss_mean) << ','
             << detail::fmt_config_double(r.final_loss_std) << ','
             << (r.final_accuracy_mean ? detail::fmt_config_double(*r.final_accuracy_mean) : "") << ','
             << (r.final_accuracy_std ? detail::fmt_config_double(*r.final_accuracy_std) : "") << ','
             << detail::fmt_config_double(r.final_grad_norm_sq_mean) << ','
             << detail::fmt_config_double(r.final_grad_norm_sq_std) << ','
             << (r.target ? detail::fmt_config_double(*r.target) : "") << ',' << r.reached << ','
             << (r.rounds_to_target_mean ? detail::fmt_config_double(*r.rounds_to_target_mean) : "") << ','
             << (r.rounds_to_target_std ? detail::fmt_config_double(*r.rounds_to_target_std) : "") << '\n';
    }
    {
        const fs::path target(path);
        std::error_code ec;
        if (target.has_parent_path()) fs::create_directories(target.parent_path(), ec);
        const fs::path tmp = path + ".tmp";
        std::ofstream out(tmp, std::ios::trunc);
        if (!out) throw IoError("cannot open " + tmp.string());
        out << body.str();
        out.flush();
        if (!out) throw IoError("write failed for " + tmp.string());
        fs::rename(tmp, target, ec);
        if (ec) throw IoError("cannot rename " + tmp.string() + ": " + ec.message());
    }
    if (summary_path_out) *summary_path_out = path;
    return rows;
}

}  // namespace fedsim
