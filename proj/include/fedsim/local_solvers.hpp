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

#include <cmath>
#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "fedsim/objectives.hpp"
#include "fedsim/veckit.hpp"

namespace fedsim {

struct SolverConfig {
    int local_steps = 20;      // K
    double eta0 = 0.1;         // initial step size
    double lr_decay = 0.998;   // per-round multiplicative decay, fixed within a round
    int batch_size = 50;       // minibatch, uniform with replacement from the shard
    double rho = 0.1;          // penalty coefficient; 0 disables the proximal coupling
    double sam_radius = 0.0;   // ascent perturbation radius (SAM solvers only)
    double sam_eps = 1e-2;     // denominator guard for the perturbation direction
    double grad_clip = 0.0;    // clip descent direction to this norm; 0 = off

    void validate() const {
        if (local_steps < 1) throw ParameterError("SolverConfig: local_steps must be >= 1");
        if (!(eta0 > 0.0)) throw ParameterError("SolverConfig: eta0 must be > 0");
        if (!(lr_decay > 0.0) || lr_decay > 1.0) throw ParameterError("SolverConfig: lr_decay must be in (0,1]");
        if (batch_size < 1) throw ParameterError("SolverConfig: batch_size must be >= 1");
        if (rho < 0.0) throw ParameterError("SolverConfig: rho must be >= 0");
        if (sam_radius < 0.0) throw ParameterError("SolverConfig: sam_radius must be >= 0");
        if (!(sam_eps > 0.0)) throw ParameterError("SolverConfig: sam_eps must be > 0");
        if (grad_clip < 0.0) throw ParameterError("SolverConfig: grad_clip must be >= 0");
    }

    double step_size(std::int64_t round) const {
        return eta0 * std::pow(lr_decay, static_cast<double>(round));
    }
};

struct LocalResult {
    ParamVector theta;
    double inexactness = 0.0;  // ||grad of the full-shard Lagrangian at theta||^2
    int steps_taken = 0;
};

class DivergenceError : public std::runtime_error {
public:
    DivergenceError(int step_index, int client_id = -1)
        : std::runtime_error("local solve diverged at step " + std::to_string(step_index) +
                             (client_id >= 0 ? " (client " + std::to_string(client_id) + ")" : "")),
          step(step_index),
          client(client_id) {}

    int step;
    int client;
};

/// Per-step instrumentation hook. `perturbation` and `raw_grad` differ from
/// the used gradient only when the step took a SAM ascent point.
struct StepTrace {
    int step;
    const ParamVector& iterate;       // before the update
    const ParamVector& raw_grad;      // minibatch gradient at the iterate
    const ParamVector& used_grad;     // gradient actually used for descent
    const ParamVector& perturbation;  // ascent offset applied to the iterate (empty for SGD)
    const ParamVector& descent_dir;   // used_grad + lambda + rho*(iterate - anchor)
};
using StepObserver = std::function<void(const StepTrace&)>;

/// grad(obj at theta on batch) + lambda + rho*(theta - anchor).
inline ParamVector lagrangian_grad(const Objective& obj, const ParamVector& theta,
                                   const ParamVector& lambda, const ParamVector& anchor, double rho,
                                   const Shard& shard, std::span<const int> batch) {
    require_same_dim(theta, lambda, "lagrangian_grad");
    require_same_dim(theta, anchor, "lagrangian_grad");
    ParamVector g = obj.grad(theta, shard, batch);
    for (std::size_t j = 0; j < g.size(); ++j) {
        g[j] += lambda[j] + rho * (theta[j] - anchor[j]);
    }
    return g;
}

/// ||full-shard Lagrangian gradient||^2, the epsilon of an inexact local solve.
inline double inexactness(const Objective& obj, const Shard& shard, const ParamVector& theta,
                          const ParamVector& lambda, const ParamVector& anchor, double rho) {
    std::vector<int> all(shard.samples.size());
    std::iota(all.begin(), all.end(), 0);
    const ParamVector g = lagrangian_grad(obj, theta, lambda, anchor, rho, shard, all);
    return dot(g, g);
}

/// Generic primal-dual descent loop:
///   theta_{k+1} = theta_k - eta * (step_grad(theta_k, k) + lambda + rho*(theta_k - anchor))
/// step_grad fills the raw and used gradients plus the SAM offset (raw == used
/// and an empty offset when no ascent point was taken). Throws DivergenceError
/// when an iterate stops being finite.
template <class StepGradFn>
inline ParamVector primal_dual_descent(StepGradFn&& step_grad, ParamVector theta,
                                       const ParamVector& lambda, const ParamVector& anchor,
                                       double eta, double rho, int steps, double grad_clip,
                                       const StepObserver* observer = nullptr) {
    require_same_dim(theta, lambda, "primal_dual_descent");
    require_same_dim(theta, anchor, "primal_dual_descent");
    const std::size_t d = theta.size();
    ParamVector raw_buf(d, 0.0);
    ParamVector grad_buf(d, 0.0);
    ParamVector dir(d, 0.0);
    ParamVector perturb;
    for (int k = 0; k < steps; ++k) {
        perturb.clear();
        step_grad(theta, k, raw_buf, grad_buf, perturb);
        for (std::size_t j = 0; j < d; ++j) {
            dir[j] = grad_buf[j] + lambda[j] + rho * (theta[j] - anchor[j]);
        }
        if (grad_clip > 0.0) {
            const double n = norm2(dir);
            if (n > grad_clip) scale_inplace(dir, grad_clip / n);
        }
        if (observer) {
            const StepTrace tr{k, theta, raw_buf, grad_buf, perturb, dir};
            (*observer)(tr);
        }
        for (std::size_t j = 0; j < d; ++j) theta[j] -= eta * dir[j];
        if (!all_finite(theta)) throw DivergenceError(k);
    }
    return theta;
}

namespace detail {

inline std::vector<int> draw_batch(RngStream& rng, int shard_size, int batch_size) {
    std::vector<int> idx(static_cast<std::size_t>(batch_size));
    for (int b = 0; b < batch_size; ++b) {
        idx[static_cast<std::size_t>(b)] = static_cast<int>(rng.below(static_cast<std::uint64_t>(shard_size)));
    }
    return idx;
}

inline LocalResult local_train_impl(const Objective& obj, const Shard& shard, const ParamVector& lambda,
                                    const ParamVector& anchor, const SolverConfig& cfg,
                                    std::int64_t round, RngStream rng, double sam_radius,
                                    const StepObserver* observer, const ParamVector* start) {
    cfg.validate();
    if (shard.samples.empty()) throw ParameterError("local_train: empty shard");
    const double eta = cfg.step_size(round);

    auto step_grad = [&](const ParamVector& theta, int /*k*/, ParamVector& raw_out,
                         ParamVector& grad_out, ParamVector& perturb_out) {
        const std::vector<int> batch = draw_batch(rng, shard.size(), cfg.batch_size);
        raw_out = obj.grad(theta, shard, batch);
        if (sam_radius > 0.0) {
            // re-evaluate at the ascent point theta + r*g/(||g||+eps), same batch
            const double gn = norm2(raw_out);
            perturb_out.assign(theta.size(), 0.0);
            const double scale = sam_radius / (gn + cfg.sam_eps);
            for (std::size_t j = 0; j < raw_out.size(); ++j) perturb_out[j] = scale * raw_out[j];
            const ParamVector at = axpy(1.0, perturb_out, theta);
            grad_out = obj.grad(at, shard, batch);
        } else {
            grad_out = raw_out;
        }
    };

    LocalResult res;
    res.theta = primal_dual_descent(step_grad, start ? *start : anchor, lambda, anchor, eta, cfg.rho,
                                    cfg.local_steps, cfg.grad_clip, observer);
    res.steps_taken = cfg.local_steps;
    res.inexactness = inexactness(obj, shard, res.theta, lambda, anchor, cfg.rho);
    return res;
}

}  // namespace detail

/// K steps of minibatch SGD on the local augmented Lagrangian, starting from
/// the anchor (the current global model) unless an explicit start is given.
inline LocalResult sgd_local_train(const Objective& obj, const Shard& shard, const ParamVector& lambda,
                                   const ParamVector& anchor, const SolverConfig& cfg, std::int64_t round,
                                   RngStream rng, const StepObserver* observer = nullptr,
                                   const ParamVector* start = nullptr) {
    return detail::local_train_impl(obj, shard, lambda, anchor, cfg, round, rng, 0.0, observer, start);
}

/// Same loop with the gradient taken at the SAM ascent point. A zero radius
/// reproduces sgd_local_train bitwise (identical code path and rng draws).
inline LocalResult sam_local_train(const Objective& obj, const Shard& shard, const ParamVector& lambda,
                                   const ParamVector& anchor, const SolverConfig& cfg, std::int64_t round,
                                   RngStream rng, const StepObserver* observer = nullptr,
                                   const ParamVector* start = nullptr) {
    return detail::local_train_impl(obj, shard, lambda, anchor, cfg, round, rng, cfg.sam_radius, observer,
                                    start);
}

}  // namespace fedsim
