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

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "fedsim/datagen.hpp"
#include "fedsim/federation.hpp"
#include "fedsim/objectives.hpp"

namespace fedsim {

struct IoError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// One CSV row. Absent optionals serialize as empty cells (accuracy is absent
/// for the quadratic objective, the dual residual before any round ran).
struct RoundRecord {
    std::int64_t round = 0;
    double train_loss = 0.0;
    std::optional<double> test_accuracy;
    double grad_norm_sq = 0.0;
    std::optional<double> primal_residual;
    std::optional<double> dual_residual;
    std::int64_t max_staleness = 0;
    double mean_staleness = 0.0;
    double mean_inexactness = 0.0;
    bool diverged = false;
};

/// p_r = (1/n) sum over clients with a usable local model of ||theta - theta_i||.
/// Primal-dual engines keep every theta_i (initialized to theta^0); the primal
/// baselines only expose the models produced in the current round.
inline std::optional<double> primal_residual(const ServerState& state) {
    double acc = 0.0;
    int n = 0;
    for (int i = 0; i < state.num_clients(); ++i) {
        if (!state.local_current[static_cast<std::size_t>(i)]) continue;
        acc += norm2(sub(state.theta, state.local_models[static_cast<std::size_t>(i)]));
        ++n;
    }
    if (n == 0) return std::nullopt;
    return acc / static_cast<double>(n);
}

/// d_r = rho * ||theta^t - theta^{t-1}||; absent before the first round.
inline std::optional<double> dual_residual(const ServerState& state, double rho) {
    if (state.round < 1) return std::nullopt;
    return rho * norm2(sub(state.theta, state.theta_prev));
}

/// (max, mean) over clients of rounds since their dual was last written.
inline std::pair<std::int64_t, double> staleness_stats(const ServerState& state) {
    const std::int64_t t = state.round - 1;  // last completed round
    std::int64_t mx = 0;
    double mean = 0.0;
    for (std::int64_t last : state.last_dual_update) {
        const std::int64_t s = t - last;
        mx = std::max(mx, s);
        mean += static_cast<double>(s);
    }
    mean /= static_cast<double>(state.num_clients());
    return {mx, mean};
}

/// First round whose accuracy reaches the target; nullopt if never.
inline std::optional<std::int64_t> rounds_to_target(std::span<const RoundRecord> records,
                                                    double target) {
    for (const RoundRecord& r : records) {
        if (r.test_accuracy && *r.test_accuracy >= target) return r.round;
    }
    return std::nullopt;
}

/// Global ERM loss f(theta) = (1/C) sum_i f_i(theta): plain f, no dual or
/// proximal terms.
inline double global_loss(const Objective& obj, const FederatedDataset& data, const ParamVector& theta) {
    double acc = 0.0;
    for (const Shard& sh : data.shards) acc += obj.loss(theta, sh);
    return acc / static_cast<double>(data.num_clients());
}

/// ||grad f(theta)||^2 over all shards.
inline double global_grad_norm_sq(const Objective& obj, const FederatedDataset& data,
                                  const ParamVector& theta) {
    ParamVector g = zeros(theta.size());
    for (const Shard& sh : data.shards) axpy_inplace(1.0, obj.full_grad(theta, sh), g);
    scale_inplace(g, 1.0 / static_cast<double>(data.num_clients()));
    return dot(g, g);
}

// ---------------------------------------------------------------------------
// CSV layer. %.17g keeps doubles bit-exact through a write/read cycle.
// ---------------------------------------------------------------------------

namespace detail {

inline std::string fmt_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

inline std::string fmt_opt(const std::optional<double>& v) {
    return v ? fmt_double(*v) : std::string();
}

inline std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> out;
    std::string cur;
    for (char ch : line) {
        if (ch == ',') {
            out.push_back(cur);
            cur.clear();
        } else {
            cur.push_back(ch);
        }
    }
    out.push_back(cur);
    return out;
}

}  // namespace detail

inline std::string csv_header() {
    return "round,train_loss,test_accuracy,grad_norm_sq,primal_residual,dual_residual,"
           "max_staleness,mean_staleness,mean_inexactness,diverged";
}

inline std::string csv_row(const RoundRecord& r) {
    std::ostringstream out;
    out << r.round << ',' << detail::fmt_double(r.train_loss) << ',' << detail::fmt_opt(r.test_accuracy)
        << ',' << detail::fmt_double(r.grad_norm_sq) << ',' << detail::fmt_opt(r.primal_residual) << ','
        << detail::fmt_opt(r.dual_residual) << ',' << r.max_staleness << ','
        << detail::fmt_double(r.mean_staleness) << ',' << detail::fmt_double(r.mean_inexactness) << ','
        << (r.diverged ? 1 : 0);
    return out.str();
}

/// Atomic write: temp file in the target directory, then rename.
inline void write_records_csv(const std::string& path, std::span<const RoundRecord> records) {
    namespace fs = std::filesystem;
    const fs::path target(path);
    if (target.has_parent_path()) {
        std::error_code ec;
        fs::create_directories(target.parent_path(), ec);
        if (ec) throw IoError("cannot create directory " + target.parent_path().string() + ": " + ec.message());
    }
    const fs::path tmp = target.string() + ".tmp";
    {
        std::ofstream out(tmp, std::ios::trunc);
        if (!out) throw IoError("cannot open " + tmp.string() + " for writing");
        out << csv_header() << '\n';
        for (const RoundRecord& r : records) out << csv_row(r) << '\n';
        out.flush();
        if (!out) throw IoError("write failed for " + tmp.string());
    }
    std::error_code ec;
    fs::rename(tmp, target, ec);
    if (ec) throw IoError("cannot rename " + tmp.string() + " to " + path + ": " + ec.message());
}

inline std::vector<RoundRecord> read_records_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open " + path);
    std::string line;
    if (!std::getline(in, line)) throw IoError(path + ": empty file");
    if (line != csv_header()) throw IoError(path + ": unexpected header");
    std::vector<RoundRecord> out;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        const std::vector<std::string> cells = detail::split_csv_line(line);
        if (cells.size() != 10) throw IoError(path + ": malformed row '" + line + "'");
        RoundRecord r;
        r.round = std::stoll(cells[0]);
        r.train_loss = std::strtod(cells[1].c_str(), nullptr);
        if (!cells[2].empty()) r.test_accuracy = std::strtod(cells[2].c_str(), nullptr);
        r.grad_norm_sq = std::strtod(cells[3].c_str(), nullptr);
        if (!cells[4].empty()) r.primal_residual = std::strtod(cells[4].c_str(), nullptr);
        if (!cells[5].empty()) r.dual_residual = std::strtod(cells[5].c_str(), nullptr);
        r.max_staleness = std::stoll(cells[6]);
        r.mean_staleness = std::strtod(cells[7].c_str(), nullptr);
        r.mean_inexactness = std::strtod(cells[8].c_str(), nullptr);
        r.diverged = cells[9] == "1";
        out.push_back(r);
    }
    return out;
}

}  // namespace fedsim
