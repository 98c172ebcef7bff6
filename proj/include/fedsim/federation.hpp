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
#include <cstdint>
#include <future>
#include <optional>
#include <string>
#include <vector>

#include "fedsim/datagen.hpp"
#include "fedsim/local_solvers.hpp"
#include "fedsim/objectives.hpp"
#include "fedsim/veckit.hpp"

namespace fedsim {

struct ConfigError : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

enum class AlgorithmKind { FedAvg, FedSAM, FedPD, FedADMM, FedDyn, AFedPD, AFedPDSAM };

inline const char* to_string(AlgorithmKind a) {
    switch (a) {
        case AlgorithmKind::FedAvg: return "fedavg";
        case AlgorithmKind::FedSAM: return "fedsam";
        case AlgorithmKind::FedPD: return "fedpd";
        case AlgorithmKind::FedADMM: return "fedadmm";
        case AlgorithmKind::FedDyn: return "feddyn";
        case AlgorithmKind::AFedPD: return "afedpd";
        case AlgorithmKind::AFedPDSAM: return "afedpdsam";
    }
    return "?";
}

inline AlgorithmKind algorithm_from_string(const std::string& s) {
    for (AlgorithmKind a : {AlgorithmKind::FedAvg, AlgorithmKind::FedSAM, AlgorithmKind::FedPD,
                            AlgorithmKind::FedADMM, AlgorithmKind::FedDyn, AlgorithmKind::AFedPD,
                            AlgorithmKind::AFedPDSAM}) {
        if (s == to_string(a)) return a;
    }
    throw ConfigError("unknown algorithm '" + s + "'");
}

inline bool uses_sam(AlgorithmKind a) {
    return a == AlgorithmKind::FedSAM || a == AlgorithmKind::AFedPDSAM;
}

inline bool is_primal_dual(AlgorithmKind a) {
    return a != AlgorithmKind::FedAvg && a != AlgorithmKind::FedSAM;
}

/// Active client ids for one round, unique and sorted ascending.
struct RoundPlan {
    std::vector<int> active;

    int size() const { return static_cast<int>(active.size()); }
};

inline RoundPlan full_plan(int num_clients) {
    RoundPlan p;
    p.active.resize(static_cast<std::size_t>(num_clients));
    std::iota(p.active.begin(), p.active.end(), 0);
    return p;
}

/// Uniform without-replacement subset of size num_active (Floyd's method).
inline RoundPlan sample_clients(RngStream& rng, int num_clients, int num_active) {
    if (num_active < 1 || num_active > num_clients) {
        throw ParameterError("sample_clients: need 1 <= P <= C, got P=" + std::to_string(num_active) +
                             ", C=" + std::to_string(num_clients));
    }
    std::vector<int> chosen;
    chosen.reserve(static_cast<std::size_t>(num_active));
    for (int j = num_clients - num_active; j < num_clients; ++j) {
        const int t = static_cast<int>(rng.below(static_cast<std::uint64_t>(j) + 1));
        if (std::find(chosen.begin(), chosen.end(), t) == chosen.end()) {
            chosen.push_back(t);
        } else {
            chosen.push_back(j);
        }
    }
    std::sort(chosen.begin(), chosen.end());
    RoundPlan p;
    p.active = std::move(chosen);
    return p;
}

/// Global server state between rounds. Local models are kept as bookkeeping
/// only; the round engines read stale duals but never a stale local model.
struct ServerState {
    ParamVector theta;
    ParamVector theta_prev;
    std::vector<ParamVector> duals;           // lambda_i, zero at start
    ParamVector global_dual;                  // FedDyn's lambda; zero elsewhere
    std::vector<ParamVector> local_models;    // theta_i bookkeeping, init theta^0
    std::vector<std::uint8_t> local_current;  // models produced in the last round
    std::vector<std::int64_t> last_dual_update;  // round index of last lambda_i write; -1 = never
    std::int64_t round = 0;                      // rounds completed

    int num_clients() const { return static_cast<int>(duals.size()); }

    ParamVector mean_dual() const {
        ParamVector m(theta.size(), 0.0);
        for (const ParamVector& l : duals) axpy_inplace(1.0, l, m);
        scale_inplace(m, 1.0 / static_cast<double>(duals.size()));
        return m;
    }
};

inline ServerState make_initial_state(const ParamVector& theta0, int num_clients) {
    if (num_clients < 1) throw ParameterError("make_initial_state: need at least one client");
    require_finite(theta0, "make_initial_state");
    ServerState s;
    s.theta = theta0;
    s.theta_prev = theta0;
    s.duals.assign(static_cast<std::size_t>(num_clients), zeros(theta0.size()));
    s.global_dual = zeros(theta0.size());
    s.local_models.assign(static_cast<std::size_t>(num_clients), theta0);
    s.local_current.assign(static_cast<std::size_t>(num_clients), 1);
    s.last_dual_update.assign(static_cast<std::size_t>(num_clients), -1);
    s.round = 0;
    return s;
}

struct LocalTrace {
    int client = 0;
    double inexactness = 0.0;
    int steps = 0;
};

struct EngineConfig {
    SolverConfig solver;
    std::uint64_t master_seed = 0;
    int threads = 1;                    // local solves run in parallel when > 1
    bool feddyn_use_next_dual = false;  // use the post-update global dual in FedDyn's model step
};

struct RoundResult {
    ServerState state;
    std::vector<LocalTrace> locals;
};

namespace detail {

struct LocalBatchResult {
    std::vector<ParamVector> thetas;  // aligned with plan.active
    std::vector<LocalTrace> traces;
};

/// Runs the round's local solves; schedule-independent because every client
/// draws from its own (seed, client, round) stream. On divergence the error
/// of the lowest client id is rethrown regardless of thread interleaving.
inline LocalBatchResult solve_active(const ServerState& state, const RoundPlan& plan,
                                     const Objective& obj, const FederatedDataset& data,
                                     const SolverConfig& solver, bool sam, bool use_duals,
                                     const EngineConfig& cfg) {
    const std::size_t n = plan.active.size();
    LocalBatchResult out;
    out.thetas.resize(n);
    out.traces.resize(n);
    std::vector<std::optional<DivergenceError>> failures(n);

    const ParamVector zero_dual = zeros(state.theta.size());
    auto solve_one = [&](std::size_t pos) {
        const int client = plan.active[pos];
        const ParamVector& lambda = use_duals ? state.duals[static_cast<std::size_t>(client)] : zero_dual;
        RngStream rng = substream(cfg.master_seed, purpose::kBatch, static_cast<std::uint64_t>(client),
                                  static_cast<std::uint64_t>(state.round));
        const Shard& shard = data.shards[static_cast<std::size_t>(client)];
        try {
            LocalResult r = sam ? sam_local_train(obj, shard, lambda, state.theta, solver, state.round, rng)
                                : sgd_local_train(obj, shard, lambda, state.theta, solver, state.round, rng);
            out.thetas[pos] = std::move(r.theta);
            out.traces[pos] = LocalTrace{client, r.inexactness, r.steps_taken};
        } catch (const DivergenceError& e) {
            failures[pos] = DivergenceError(e.step, client);
        }
    };

    const int threads = std::max(1, cfg.threads);
    if (threads == 1 || n <= 1) {
        for (std::size_t pos = 0; pos < n; ++pos) solve_one(pos);
    } else {
        std::vector<std::future<void>> futs;
        const std::size_t stride = static_cast<std::size_t>(threads);
        for (std::size_t t = 0; t < stride; ++t) {
            futs.push_back(std::async(std::launch::async, [&, t] {
                for (std::size_t pos = t; pos < n; pos += stride) solve_one(pos);
            }));
        }
        for (auto& f : futs) f.get();
    }

    for (std::size_t pos = 0; pos < n; ++pos) {
        if (failures[pos]) throw *failures[pos];
    }
    return out;
}

inline ParamVector mean_of(const std::vector<ParamVector>& vs) {
    ParamVector m = zeros(vs.front().size());
    for (const ParamVector& v : vs) axpy_inplace(1.0, v, m);
    scale_inplace(m, 1.0 / static_cast<double>(vs.size()));
    return m;
}

inline ServerState advance(const ServerState& cur, ParamVector new_theta) {
    ServerState next = cur;
    next.theta_prev = cur.theta;
    next.theta = std::move(new_theta);
    next.round = cur.round + 1;
    require_finite(next.theta, "round commit");
    return next;
}

/// Shared dual step for the aligned algorithms: active clients get the exact
/// FedPD update, inactive ones the virtual update built from the aggregate.
inline void d_update(ServerState& s, const RoundPlan& plan, const std::vector<ParamVector>& local_thetas,
                     const ParamVector& theta_bar, const ParamVector& theta_old, double rho,
                     std::int64_t round) {
    std::size_t pos = 0;
    for (int i = 0; i < s.num_clients(); ++i) {
        ParamVector& lam = s.duals[static_cast<std::size_t>(i)];
        const bool active = pos < plan.active.size() && plan.active[pos] == i;
        const ParamVector& target = active ? local_thetas[pos] : theta_bar;
        for (std::size_t j = 0; j < lam.size(); ++j) {
            lam[j] += rho * (target[j] - theta_old[j]);
        }
        s.last_dual_update[static_cast<std::size_t>(i)] = round;
        if (active) ++pos;
    }
}

}  // namespace detail

/// theta^{t+1} = mean of the active clients' local models; duals stay zero.
inline RoundResult fedavg_round(const ServerState& state, const RoundPlan& plan, const Objective& obj,
                                const FederatedDataset& data, const EngineConfig& cfg,
                                bool sam = false) {
    SolverConfig solver = cfg.solver;
    solver.rho = 0.0;
    if (!sam) solver.sam_radius = 0.0;
    auto locals = detail::solve_active(state, plan, obj, data, solver, sam, /*use_duals=*/false, cfg);

    ServerState next = detail::advance(state, detail::mean_of(locals.thetas));
    std::fill(next.local_current.begin(), next.local_current.end(), 0);
    for (std::size_t pos = 0; pos < plan.active.size(); ++pos) {
        const auto i = static_cast<std::size_t>(plan.active[pos]);
        next.local_models[i] = locals.thetas[pos];
        next.local_current[i] = 1;
    }
    // duals are identically zero here, so they are never stale
    std::fill(next.last_dual_update.begin(), next.last_dual_update.end(), state.round);
    return RoundResult{std::move(next), std::move(locals.traces)};
}

inline RoundResult fedsam_round(const ServerState& state, const RoundPlan& plan, const Objective& obj,
                                const FederatedDataset& data, const EngineConfig& cfg) {
    return fedavg_round(state, plan, obj, data, cfg, /*sam=*/true);
}

/// Partial-participation FedPD (the g == 0 degeneration of the composite
/// variant): only active clients touch their duals, everyone else keeps a
/// stale lambda_i. That staleness is the dual-drift mechanism this simulator exists to show.
///   theta_i' = inexact argmin L_i(theta_i, theta^t, lambda_i)   (active)
///   lambda_i' = lambda_i + rho (theta_i' - theta^t)             (active)
///   theta'   = (1/P) sum_active (theta_i' + lambda_i'/rho)
inline RoundResult fedadmm_round(const ServerState& state, const RoundPlan& plan, const Objective& obj,
                                 const FederatedDataset& data, const EngineConfig& cfg) {
    if (!(cfg.solver.rho > 0.0)) throw ConfigError("fedadmm_round: rho must be > 0");
    auto locals = detail::solve_active(state, plan, obj, data, cfg.solver, false, true, cfg);
    const double rho = cfg.solver.rho;

    ServerState next = state;
    ParamVector agg = zeros(state.theta.size());
    for (std::size_t pos = 0; pos < plan.active.size(); ++pos) {
        const auto i = static_cast<std::size_t>(plan.active[pos]);
        ParamVector& lam = next.duals[i];
        const ParamVector& th = locals.thetas[pos];
        for (std::size_t j = 0; j < lam.size(); ++j) {
            lam[j] += rho * (th[j] - state.theta[j]);
            agg[j] += th[j] + lam[j] / rho;
        }
        next.local_models[i] = th;
        next.last_dual_update[i] = state.round;
    }
    scale_inplace(agg, 1.0 / static_cast<double>(plan.size()));

    next.theta_prev = state.theta;
    next.theta = std::move(agg);
    next.round = state.round + 1;
    require_finite(next.theta, "fedadmm_round commit");
    return RoundResult{std::move(next), std::move(locals.traces)};
}

/// Full-participation primal-dual round; exactly the plan = C case of
/// fedadmm_round, where every dual is refreshed each round.
inline RoundResult fedpd_round(const ServerState& state, const Objective& obj,
                               const FederatedDataset& data, const EngineConfig& cfg) {
    return fedadmm_round(state, full_plan(state.num_clients()), obj, data, cfg);
}

/// Global-dual variant:
///   lambda_i' (active) as usual; lambda' = lambda + rho (1/C) sum_active (theta_i' - theta^t)
///   theta' = (1/P) sum_active theta_i' + lambda_used / rho
/// As printed the model step uses the pre-update global dual; the toggle
/// switches to the post-update one.
inline RoundResult feddyn_round(const ServerState& state, const RoundPlan& plan, const Objective& obj,
                                const FederatedDataset& data, const EngineConfig& cfg) {
    if (!(cfg.solver.rho > 0.0)) throw ConfigError("feddyn_round: rho must be > 0");
    auto locals = detail::solve_active(state, plan, obj, data, cfg.solver, false, true, cfg);
    const double rho = cfg.solver.rho;
    const double inv_c = 1.0 / static_cast<double>(state.num_clients());

    ServerState next = state;
    for (std::size_t pos = 0; pos < plan.active.size(); ++pos) {
        const auto i = static_cast<std::size_t>(plan.active[pos]);
        ParamVector& lam = next.duals[i];
        const ParamVector& th = locals.thetas[pos];
        for (std::size_t j = 0; j < lam.size(); ++j) {
            lam[j] += rho * (th[j] - state.theta[j]);
            next.global_dual[j] += rho * inv_c * (th[j] - state.theta[j]);
        }
        next.local_models[i] = th;
        next.last_dual_update[i] = state.round;
    }

    const ParamVector& dual_used = cfg.feddyn_use_next_dual ? next.global_dual : state.global_dual;
    ParamVector agg = detail::mean_of(locals.thetas);
    axpy_inplace(1.0 / rho, dual_used, agg);

    next.theta_prev = state.theta;
    next.theta = std::move(agg);
    next.round = state.round + 1;
    require_finite(next.theta, "feddyn_round commit");
    return RoundResult{std::move(next), std::move(locals.traces)};
}

/// Aligned round: every dual is refreshed every round, the inactive ones
/// virtually through the aggregated model.
///   theta_bar' = (1/P) sum_active theta_i'
///   lambda_i' = lambda_i + rho (theta_i' - theta^t)      (active)
///   lambda_i' = lambda_i + rho (theta_bar' - theta^t)    (inactive)
///   theta' = theta_bar' + mean(lambda') / rho
inline RoundResult afedpd_round(const ServerState& state, const RoundPlan& plan, const Objective& obj,
                                const FederatedDataset& data, const EngineConfig& cfg,
                                bool sam = false) {
    if (!(cfg.solver.rho > 0.0)) throw ConfigError("afedpd_round: rho must be > 0");
    auto locals = detail::solve_active(state, plan, obj, data, cfg.solver, sam, true, cfg);
    const double rho = cfg.solver.rho;

    const ParamVector theta_bar = detail::mean_of(locals.thetas);

    ServerState next = state;
    detail::d_update(next, plan, locals.thetas, theta_bar, state.theta, rho, state.round);
    for (std::size_t pos = 0; pos < plan.active.size(); ++pos) {
        next.local_models[static_cast<std::size_t>(plan.active[pos])] = locals.thetas[pos];
    }

    ParamVector agg = theta_bar;
    axpy_inplace(1.0 / rho, next.mean_dual(), agg);

    next.theta_prev = state.theta;
    next.theta = std::move(agg);
    next.round = state.round + 1;
    require_finite(next.theta, "afedpd_round commit");
    return RoundResult{std::move(next), std::move(locals.traces)};
}

inline RoundResult afedpdsam_round(const ServerState& state, const RoundPlan& plan, const Objective& obj,
                                   const FederatedDataset& data, const EngineConfig& cfg) {
    return afedpd_round(state, plan, obj, data, cfg, /*sam=*/true);
}

inline RoundResult run_round(AlgorithmKind algorithm, const ServerState& state, const RoundPlan& plan,
                             const Objective& obj, const FederatedDataset& data,
                             const EngineConfig& cfg) {
    switch (algorithm) {
        case AlgorithmKind::FedAvg: return fedavg_round(state, plan, obj, data, cfg);
        case AlgorithmKind::FedSAM: return fedsam_round(state, plan, obj, data, cfg);
        case AlgorithmKind::FedPD:
            if (plan.size() != state.num_clients()) {
                throw ConfigError("fedpd requires full participation (P=" + std::to_string(plan.size()) +
                                  ", C=" + std::to_string(state.num_clients()) + ")");
            }
            return fedpd_round(state, obj, data, cfg);
        case AlgorithmKind::FedADMM: return fedadmm_round(state, plan, obj, data, cfg);
        case AlgorithmKind::FedDyn: return feddyn_round(state, plan, obj, data, cfg);
        case AlgorithmKind::AFedPD: return afedpd_round(state, plan, obj, data, cfg);
        case AlgorithmKind::AFedPDSAM: return afedpdsam_round(state, plan, obj, data, cfg);
    }
    throw ConfigError("run_round: unknown algorithm");
}

}  // namespace fedsim
