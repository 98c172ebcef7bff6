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
#include <stdexcept>
#include <string>
#include <vector>

namespace fedsim {

/// Flat vector of 64-bit model parameters. Every quantity moved between
/// server and clients (models, duals, gradients) is one of these.
using ParamVector = std::vector<double>;

struct DimensionError : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

struct ParameterError : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

inline void require_same_dim(const ParamVector& x, const ParamVector& y, const char* where) {
    if (x.size() != y.size()) {
        throw DimensionError(std::string(where) + ": dimension mismatch (" +
                             std::to_string(x.size()) + " vs " + std::to_string(y.size()) + ")");
    }
}

inline bool all_finite(const ParamVector& x) {
    for (double v : x) {
        if (!std::isfinite(v)) return false;
    }
    return true;
}

inline void require_finite(const ParamVector& x, const char* where) {
    if (!all_finite(x)) {
        throw ParameterError(std::string(where) + ": non-finite entry");
    }
}

inline ParamVector zeros(std::size_t d) { return ParamVector(d, 0.0); }

/// a*x + y, elementwise. Inputs untouched.
inline ParamVector axpy(double a, const ParamVector& x, const ParamVector& y) {
    require_same_dim(x, y, "axpy");
    ParamVector r(x.size());
    for (std::size_t j = 0; j < x.size(); ++j) r[j] = a * x[j] + y[j];
    return r;
}

/// y += a*x. Hot-path variant used by the round engines.
inline void axpy_inplace(double a, const ParamVector& x, ParamVector& y) {
    require_same_dim(x, y, "axpy_inplace");
    for (std::size_t j = 0; j < x.size(); ++j) y[j] += a * x[j];
}

inline double dot(const ParamVector& x, const ParamVector& y) {
    require_same_dim(x, y, "dot");
    double s = 0.0;
    for (std::size_t j = 0; j < x.size(); ++j) s += x[j] * y[j];
    return s;
}

inline double norm2(const ParamVector& x) {
    double s = 0.0;
    for (double v : x) s += v * v;
    return std::sqrt(s);
}

inline void scale_inplace(ParamVector& x, double a) {
    for (double& v : x) v *= a;
}

inline ParamVector sub(const ParamVector& x, const ParamVector& y) {
    require_same_dim(x, y, "sub");
    ParamVector r(x.size());
    for (std::size_t j = 0; j < x.size(); ++j) r[j] = x[j] - y[j];
    return r;
}

// ---------------------------------------------------------------------------
// Counter-based randomness.
//
// Draw n of stream (seed, id) is a pure function of (seed, id, n), so any
// (client, round, purpose) triple can be given its own stream and work can be
// scheduled in any order, or in parallel, without changing a single draw.
// ---------------------------------------------------------------------------

namespace detail {

inline std::uint64_t mix64(std::uint64_t x) {
    x ^= x >> 30;
    x *= 0xbf58476d1ce4e5b9ULL;
    x ^= x >> 27;
    x *= 0x94d049bb133111ebULL;
    x ^= x >> 31;
    return x;
}

inline constexpr std::uint64_t kGolden = 0x9e3779b97f4a7c15ULL;

}  // namespace detail

class RngStream {
public:
    RngStream(std::uint64_t seed, std::uint64_t stream_id)
        : base_(detail::mix64(detail::mix64(seed) ^ detail::mix64(stream_id ^ detail::kGolden))),
          counter_(0) {}

    std::uint64_t next_u64() {
        ++counter_;
        return detail::mix64(base_ + detail::kGolden * counter_);
    }

    /// Uniform in [0, 1).
    double uniform01() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    /// Uniform in (0, 1]. Safe under log().
    double uniform_open01() {
        return static_cast<double>((next_u64() >> 11) + 1) * 0x1.0p-53;
    }

    /// Unbiased integer in [0, n). Lemire multiply-shift with rejection.
    std::uint64_t below(std::uint64_t n) {
        if (n == 0) throw ParameterError("RngStream::below: n must be positive");
        unsigned __int128 m = static_cast<unsigned __int128>(next_u64()) * n;
        auto lo = static_cast<std::uint64_t>(m);
        if (lo < n) {
            const std::uint64_t threshold = -n % n;
            while (lo < threshold) {
                m = static_cast<unsigned __int128>(next_u64()) * n;
                lo = static_cast<std::uint64_t>(m);
            }
        }
        return static_cast<std::uint64_t>(m >> 64);
    }

    /// One Gaussian draw via Box-Muller; consumes exactly two raw words.
    double normal(double mean, double stddev) {
        const double u1 = uniform_open01();
        const double u2 = uniform01();
        const double z = std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586476925286766559 * u2);
        return mean + stddev * z;
    }

private:
    std::uint64_t base_;
    std::uint64_t counter_;
};

/// Purpose tags for deriving independent substreams from one master seed.
namespace purpose {
inline constexpr std::uint64_t kDataPool = 1;
inline constexpr std::uint64_t kPartition = 2;
inline constexpr std::uint64_t kInit = 3;
inline constexpr std::uint64_t kPlan = 4;
inline constexpr std::uint64_t kBatch = 5;
inline constexpr std::uint64_t kProbe = 6;  // free for tests
}  // namespace purpose

inline std::uint64_t stream_key(std::uint64_t purpose_tag, std::uint64_t a = 0, std::uint64_t b = 0) {
    std::uint64_t h = detail::mix64(purpose_tag + detail::kGolden);
    h = detail::mix64(h ^ (a + detail::kGolden));
    h = detail::mix64(h ^ (b + detail::kGolden));
    return h;
}

inline RngStream substream(std::uint64_t master_seed, std::uint64_t purpose_tag,
                           std::uint64_t a = 0, std::uint64_t b = 0) {
    return RngStream(master_seed, stream_key(purpose_tag, a, b));
}

inline ParamVector gaussian_vector(RngStream& rng, std::size_t d, double mean, double stddev) {
    if (d < 1) throw ParameterError("gaussian_vector: d must be >= 1");
    if (stddev < 0.0) throw ParameterError("gaussian_vector: stddev must be >= 0");
    ParamVector v(d);
    for (std::size_t j = 0; j < d; ++j) v[j] = rng.normal(mean, stddev);
    return v;
}

}  // namespace fedsim
