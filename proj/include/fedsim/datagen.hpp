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
#include <limits>
#include <sstream>
#include <string>
#include <vector>

#include "fedsim/objectives.hpp"
#include "fedsim/veckit.hpp"

namespace fedsim {

struct PartitionError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct DatasetMeta {
    int num_classes = 0;
    int feature_dim = 0;
    double alpha = std::numeric_limits<double>::infinity();  // infinity = IID
    bool with_replacement = true;
    int samples_per_client = 0;
};

struct FederatedDataset {
    std::vector<Shard> shards;
    Shard test_set;
    DatasetMeta meta;

    int num_clients() const { return static_cast<int>(shards.size()); }
};

/// Mean of class c: axis-aligned at radius 2, cycling coordinates and growing
/// in magnitude once the classes outnumber the dimensions. Distinct for every c.
inline ParamVector gaussian_class_mean(int c, int feature_dim) {
    ParamVector mu(static_cast<std::size_t>(feature_dim), 0.0);
    const int axis = c % feature_dim;
    const int block = c / feature_dim;
    mu[static_cast<std::size_t>(axis)] = 2.0 * static_cast<double>(block + 1);
    return mu;
}

/// Pool of num_classes*per_class labelled samples; class c is isotropic
/// Gaussian noise of the given spread around gaussian_class_mean(c, m).
inline std::vector<DataSample> make_gaussian_classes(RngStream& rng, int num_classes, int feature_dim,
                                                     int per_class, double spread) {
    if (num_classes < 2) throw ParameterError("make_gaussian_classes: num_classes must be >= 2");
    if (per_class < 1) throw ParameterError("make_gaussian_classes: per_class must be >= 1");
    if (feature_dim < 1) throw ParameterError("make_gaussian_classes: feature_dim must be >= 1");
    if (spread < 0.0) throw ParameterError("make_gaussian_classes: spread must be >= 0");

    std::vector<DataSample> pool;
    pool.reserve(static_cast<std::size_t>(num_classes) * static_cast<std::size_t>(per_class));
    for (int c = 0; c < num_classes; ++c) {
        const ParamVector mu = gaussian_class_mean(c, feature_dim);
        for (int s = 0; s < per_class; ++s) {
            DataSample smp;
            smp.label = c;
            smp.features.resize(static_cast<std::size_t>(feature_dim));
            for (int j = 0; j < feature_dim; ++j) {
                smp.features[static_cast<std::size_t>(j)] =
                    rng.normal(mu[static_cast<std::size_t>(j)], spread);
            }
            pool.push_back(std::move(smp));
        }
    }
    return pool;
}

namespace detail {

/// Marsaglia-Tsang gamma sampler (unit scale). Shapes below 1 are boosted
/// through the shape+1 draw.
inline double gamma_draw(RngStream& rng, double shape) {
    if (shape < 1.0) {
        const double boosted = gamma_draw(rng, shape + 1.0);
        return boosted * std::pow(rng.uniform_open01(), 1.0 / shape);
    }
    const double d = shape - 1.0 / 3.0;
    const double c = 1.0 / std::sqrt(9.0 * d);
    for (;;) {
        const double x = rng.normal(0.0, 1.0);
        const double t = 1.0 + c * x;
        if (t <= 0.0) continue;
        const double v = t * t * t;
        const double u = rng.uniform_open01();
        if (u < 1.0 - 0.0331 * x * x * x * x) return d * v;
        if (std::log(u) < 0.5 * x * x + d * (1.0 - v + std::log(v))) return d * v;
    }
}

}  // namespace detail

/// Per-client class proportions. alpha = infinity means exactly uniform.
inline std::vector<double> dirichlet_proportions(RngStream& rng, int k, double alpha) {
    if (k < 1) throw ParameterError("dirichlet_proportions: k must be >= 1");
    if (std::isinf(alpha)) return std::vector<double>(static_cast<std::size_t>(k), 1.0 / k);
    if (!(alpha > 0.0)) throw ParameterError("dirichlet_proportions: alpha must be > 0");
    std::vector<double> p(static_cast<std::size_t>(k));
    double total = 0.0;
    for (double& v : p) {
        v = detail::gamma_draw(rng, alpha);
        total += v;
    }
    if (total <= 0.0) {
        // all gammas underflowed (tiny alpha); collapse onto one class
        std::fill(p.begin(), p.end(), 0.0);
        p[rng.below(static_cast<std::uint64_t>(k))] = 1.0;
        return p;
    }
    for (double& v : p) v /= total;
    return p;
}

/// Splits a labelled pool across num_clients shards with Dirichlet(alpha)
/// label proportions per client. The test set is the full pool, untouched.
inline FederatedDataset dirichlet_partition(RngStream& rng, const std::vector<DataSample>& pool,
                                            int num_clients, double alpha, bool with_replacement,
                                            int samples_per_client) {
    if (num_clients < 1) throw ParameterError("dirichlet_partition: num_clients must be >= 1");
    if (samples_per_client < 1) throw ParameterError("dirichlet_partition: samples_per_client must be >= 1");
    if (pool.empty()) throw ParameterError("dirichlet_partition: empty pool");

    int num_classes = 0;
    for (const DataSample& s : pool) num_classes = std::max(num_classes, s.label + 1);

    std::vector<std::vector<int>> by_class(static_cast<std::size_t>(num_classes));
    for (int i = 0; i < static_cast<int>(pool.size()); ++i) {
        by_class[static_cast<std::size_t>(pool[static_cast<std::size_t>(i)].label)].push_back(i);
    }
    std::vector<std::vector<int>> avail = by_class;  // consumed in the no-replacement mode

    FederatedDataset ds;
    ds.meta = DatasetMeta{num_classes, static_cast<int>(pool[0].features.size()), alpha,
                          with_replacement, samples_per_client};
    ds.shards.resize(static_cast<std::size_t>(num_clients));

    for (int i = 0; i < num_clients; ++i) {
        const std::vector<double> prop = dirichlet_proportions(rng, num_classes, alpha);
        Shard& shard = ds.shards[static_cast<std::size_t>(i)];
        shard.samples.reserve(static_cast<std::size_t>(samples_per_client));
        for (int s = 0; s < samples_per_client; ++s) {
            // categorical draw over classes with a non-empty pool slice
            double u = rng.uniform01();
            int cls = num_classes - 1;
            for (int c = 0; c < num_classes; ++c) {
                u -= prop[static_cast<std::size_t>(c)];
                if (u < 0.0) {
                    cls = c;
                    break;
                }
            }
            int pick;
            if (with_replacement) {
                const auto& slot = by_class[static_cast<std::size_t>(cls)];
                if (slot.empty()) throw PartitionError("dirichlet_partition: pool has no samples of class " +
                                                       std::to_string(cls));
                pick = slot[rng.below(slot.size())];
            } else {
                auto& slot = avail[static_cast<std::size_t>(cls)];
                if (slot.empty()) {
                    throw PartitionError("dirichlet_partition: class " + std::to_string(cls) +
                                         " exhausted during no-replacement partitioning");
                }
                const std::size_t pos = static_cast<std::size_t>(rng.below(slot.size()));
                pick = slot[pos];
                slot[pos] = slot.back();
                slot.pop_back();
            }
            shard.samples.push_back(pool[static_cast<std::size_t>(pick)]);
        }
    }

    ds.test_set.samples = pool;
    return ds;
}

/// Heterogeneity audit export: one row per (client, class).
inline std::string label_histogram_csv(const FederatedDataset& ds) {
    std::ostringstream out;
    out << "client_id,class,count\n";
    for (int i = 0; i < ds.num_clients(); ++i) {
        std::vector<int> hist(static_cast<std::size_t>(ds.meta.num_classes), 0);
        for (const DataSample& s : ds.shards[static_cast<std::size_t>(i)].samples) {
            ++hist[static_cast<std::size_t>(s.label)];
        }
        for (int c = 0; c < ds.meta.num_classes; ++c) {
            out << i << ',' << c << ',' << hist[static_cast<std::size_t>(c)] << '\n';
        }
    }
    return out.str();
}

/// Mean over clients of the total-variation distance between the shard's
/// label histogram and the source pool's histogram (the test set holds the
/// full pool, so its histogram is the global one).
inline double mean_label_tv_distance(const FederatedDataset& ds) {
    const int nc = ds.meta.num_classes;
    std::vector<double> global(static_cast<std::size_t>(nc), 0.0);
    double total = 0.0;
    for (const DataSample& s : ds.test_set.samples) {
        global[static_cast<std::size_t>(s.label)] += 1.0;
        total += 1.0;
    }
    for (double& v : global) v /= total;

    double acc = 0.0;
    for (const Shard& sh : ds.shards) {
        std::vector<double> h(static_cast<std::size_t>(nc), 0.0);
        for (const DataSample& s : sh.samples) h[static_cast<std::size_t>(s.label)] += 1.0;
        for (double& v : h) v /= static_cast<double>(sh.samples.size());
        double tv = 0.0;
        for (int c = 0; c < nc; ++c) {
            tv += std::abs(h[static_cast<std::size_t>(c)] - global[static_cast<std::size_t>(c)]);
        }
        acc += 0.5 * tv;
    }
    return acc / static_cast<double>(ds.num_clients());
}

}  // namespace fedsim
