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
#include <numeric>
#include <span>
#include <vector>

#include "fedsim/veckit.hpp"

namespace fedsim {

struct UnsupportedError : std::logic_error {
    using std::logic_error::logic_error;
};

struct DataSample {
    ParamVector features;
    int label = 0;  // class index; unused by the quadratic kind
};

struct Shard {
    std::vector<DataSample> samples;

    int size() const { return static_cast<int>(samples.size()); }
    int feature_dim() const { return samples.empty() ? 0 : static_cast<int>(samples[0].features.size()); }
};

enum class ObjectiveKind { Quadratic, Logistic, Mlp };

/// Loss family shared by all clients.
///
/// quadratic:  f(theta) = mean_j 1/2 ||theta - x_j||^2        (d = m)
/// logistic :  multinomial softmax regression with bias       (d = nc*(m+1))
/// mlp      :  one tanh hidden layer + softmax cross-entropy  (d = h*(m+1) + nc*(h+1))
///
/// All kinds add (l2_coeff/2)*||theta||^2 to the loss and l2_coeff*theta to
/// the gradient. Gradients are exact; no sampled sub-computations.
struct Objective {
    ObjectiveKind kind = ObjectiveKind::Quadratic;
    int feature_dim = 1;
    int num_classes = 2;
    int hidden_width = 0;  // mlp only
    double l2_coeff = 0.0;

    int param_dim() const {
        switch (kind) {
            case ObjectiveKind::Quadratic: return feature_dim;
            case ObjectiveKind::Logistic: return num_classes * (feature_dim + 1);
            case ObjectiveKind::Mlp:
                return hidden_width * (feature_dim + 1) + num_classes * (hidden_width + 1);
        }
        return 0;
    }

    bool is_classifier() const { return kind != ObjectiveKind::Quadratic; }

    /// Class scores for one sample (classifier kinds).
    std::vector<double> scores(const ParamVector& theta, const DataSample& s) const {
        check_dims(theta, s);
        std::vector<double> out(num_classes, 0.0);
        const int m = feature_dim;
        if (kind == ObjectiveKind::Logistic) {
            const double* w = theta.data();
            const double* b = theta.data() + num_classes * m;
            for (int c = 0; c < num_classes; ++c) {
                double v = b[c];
                for (int j = 0; j < m; ++j) v += w[c * m + j] * s.features[j];
                out[c] = v;
            }
        } else if (kind == ObjectiveKind::Mlp) {
            const int h = hidden_width;
            const double* w1 = theta.data();
            const double* b1 = theta.data() + h * m;
            const double* w2 = theta.data() + h * (m + 1);
            const double* b2 = theta.data() + h * (m + 1) + num_classes * h;
            std::vector<double> act(h);
            for (int u = 0; u < h; ++u) {
                double z = b1[u];
                for (int j = 0; j < m; ++j) z += w1[u * m + j] * s.features[j];
                act[u] = std::tanh(z);
            }
            for (int c = 0; c < num_classes; ++c) {
                double v = b2[c];
                for (int u = 0; u < h; ++u) v += w2[c * h + u] * act[u];
                out[c] = v;
            }
        } else {
            throw UnsupportedError("scores: quadratic objective has no class scores");
        }
        return out;
    }

    double loss(const ParamVector& theta, const Shard& shard, std::span<const int> batch) const {
        if (batch.empty()) throw ParameterError("loss: empty batch");
        double acc = 0.0;
        for (int idx : batch) acc += sample_loss(theta, shard.samples[static_cast<std::size_t>(idx)]);
        return acc / static_cast<double>(batch.size()) + 0.5 * l2_coeff * dot(theta, theta);
    }

    /// Mean loss over a whole shard.
    double loss(const ParamVector& theta, const Shard& shard) const {
        std::vector<int> all(shard.samples.size());
        std::iota(all.begin(), all.end(), 0);
        return loss(theta, shard, all);
    }

    ParamVector grad(const ParamVector& theta, const Shard& shard, std::span<const int> batch) const {
        if (batch.empty()) throw ParameterError("grad: empty batch");
        ParamVector g(theta.size(), 0.0);
        for (int idx : batch) accumulate_sample_grad(theta, shard.samples[static_cast<std::size_t>(idx)], g);
        const double inv = 1.0 / static_cast<double>(batch.size());
        for (std::size_t j = 0; j < g.size(); ++j) g[j] = g[j] * inv + l2_coeff * theta[j];
        return g;
    }

    /// Gradient over the entire shard; equals the mean of per-sample grads
    /// plus the l2 term.
    ParamVector full_grad(const ParamVector& theta, const Shard& shard) const {
        std::vector<int> all(shard.samples.size());
        std::iota(all.begin(), all.end(), 0);
        return grad(theta, shard, all);
    }

    /// Fraction of correctly classified samples; argmax ties break toward the
    /// lowest class index.
    double predict_accuracy(const ParamVector& theta, const Shard& shard) const {
        if (!is_classifier()) {
            throw UnsupportedError("predict_accuracy: unsupported for the quadratic objective");
        }
        if (shard.samples.empty()) throw ParameterError("predict_accuracy: empty shard");
        int hits = 0;
        for (const DataSample& s : shard.samples) {
            const std::vector<double> sc = scores(theta, s);
            int best = 0;
            for (int c = 1; c < num_classes; ++c) {
                if (sc[c] > sc[best]) best = c;
            }
            if (best == s.label) ++hits;
        }
        return static_cast<double>(hits) / static_cast<double>(shard.samples.size());
    }

private:
    void check_dims(const ParamVector& theta, const DataSample& s) const {
        if (static_cast<int>(theta.size()) != param_dim()) {
            throw DimensionError("objective: theta has dimension " + std::to_string(theta.size()) +
                                 ", expected " + std::to_string(param_dim()));
        }
        if (static_cast<int>(s.features.size()) != feature_dim) {
            throw DimensionError("objective: sample has feature dim " +
                                 std::to_string(s.features.size()) + ", expected " +
                                 std::to_string(feature_dim));
        }
    }

    double sample_loss(const ParamVector& theta, const DataSample& s) const {
        check_dims(theta, s);
        if (kind == ObjectiveKind::Quadratic) {
            double acc = 0.0;
            for (int j = 0; j < feature_dim; ++j) {
                const double r = theta[static_cast<std::size_t>(j)] - s.features[static_cast<std::size_t>(j)];
                acc += r * r;
            }
            return 0.5 * acc;
        }
        const std::vector<double> sc = scores(theta, s);
        return cross_entropy(sc, s.label);
    }

    static double cross_entropy(const std::vector<double>& sc, int label) {
        const double mx = *std::max_element(sc.begin(), sc.end());
        double z = 0.0;
        for (double v : sc) z += std::exp(v - mx);
        return -(sc[static_cast<std::size_t>(label)] - mx) + std::log(z);
    }

    static std::vector<double> softmax(const std::vector<double>& sc) {
        const double mx = *std::max_element(sc.begin(), sc.end());
        std::vector<double> p(sc.size());
        double z = 0.0;
        for (std::size_t c = 0; c < sc.size(); ++c) {
            p[c] = std::exp(sc[c] - mx);
            z += p[c];
        }
        for (double& v : p) v /= z;
        return p;
    }

    void accumulate_sample_grad(const ParamVector& theta, const DataSample& s, ParamVector& g) const {
        check_dims(theta, s);
        const int m = feature_dim;
        if (kind == ObjectiveKind::Quadratic) {
            for (int j = 0; j < m; ++j) {
                g[static_cast<std::size_t>(j)] +=
                    theta[static_cast<std::size_t>(j)] - s.features[static_cast<std::size_t>(j)];
            }
            return;
        }
        if (kind == ObjectiveKind::Logistic) {
            std::vector<double> p = softmax(scores(theta, s));
            p[static_cast<std::size_t>(s.label)] -= 1.0;
            double* gw = g.data();
            double* gb = g.data() + num_classes * m;
            for (int c = 0; c < num_classes; ++c) {
                for (int j = 0; j < m; ++j) gw[c * m + j] += p[static_cast<std::size_t>(c)] * s.features[j];
                gb[c] += p[static_cast<std::size_t>(c)];
            }
            return;
        }
        // mlp backprop
        const int h = hidden_width;
        const double* w1 = theta.data();
        const double* b1 = theta.data() + h * m;
        const double* w2 = theta.data() + h * (m + 1);
        const double* b2 = theta.data() + h * (m + 1) + num_classes * h;
        std::vector<double> act(h);
        for (int u = 0; u < h; ++u) {
            double z = b1[u];
            for (int j = 0; j < m; ++j) z += w1[u * m + j] * s.features[j];
            act[u] = std::tanh(z);
        }
        std::vector<double> sc(num_classes);
        for (int c = 0; c < num_classes; ++c) {
            double v = b2[c];
            for (int u = 0; u < h; ++u) v += w2[c * h + u] * act[u];
            sc[static_cast<std::size_t>(c)] = v;
        }
        std::vector<double> ds = softmax(sc);
        ds[static_cast<std::size_t>(s.label)] -= 1.0;

        double* gw1 = g.data();
        double* gb1 = g.data() + h * m;
        double* gw2 = g.data() + h * (m + 1);
        double* gb2 = g.data() + h * (m + 1) + num_classes * h;
        std::vector<double> dact(h, 0.0);
        for (int c = 0; c < num_classes; ++c) {
            for (int u = 0; u < h; ++u) {
                gw2[c * h + u] += ds[static_cast<std::size_t>(c)] * act[u];
                dact[static_cast<std::size_t>(u)] += ds[static_cast<std::size_t>(c)] * w2[c * h + u];
            }
            gb2[c] += ds[static_cast<std::size_t>(c)];
        }
        for (int u = 0; u < h; ++u) {
            const double dz = dact[static_cast<std::size_t>(u)] * (1.0 - act[u] * act[u]);
            for (int j = 0; j < m; ++j) gw1[u * m + j] += dz * s.features[j];
            gb1[u] += dz;
        }
    }
};

inline Objective make_quadratic(int dim, double l2 = 0.0) {
    if (dim < 1) throw ParameterError("make_quadratic: dim must be >= 1");
    return Objective{ObjectiveKind::Quadratic, dim, 0, 0, l2};
}

inline Objective make_logistic(int feature_dim, int num_classes, double l2 = 0.0) {
    if (feature_dim < 1 || num_classes < 2) {
        throw ParameterError("make_logistic: need feature_dim >= 1 and num_classes >= 2");
    }
    return Objective{ObjectiveKind::Logistic, feature_dim, num_classes, 0, l2};
}

inline Objective make_mlp(int feature_dim, int hidden_width, int num_classes, double l2 = 0.0) {
    if (feature_dim < 1 || hidden_width < 1 || num_classes < 2) {
        throw ParameterError("make_mlp: need feature_dim, hidden_width >= 1 and num_classes >= 2");
    }
    return Objective{ObjectiveKind::Mlp, feature_dim, num_classes, hidden_width, l2};
}

}  // namespace fedsim
