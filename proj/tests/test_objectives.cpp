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

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include "fedsim/datagen.hpp"
#include "fedsim/objectives.hpp"

using namespace fedsim;

namespace {

std::vector<int> all_indices(const Shard& s) {
    std::vector<int> idx(s.samples.size());
    std::iota(idx.begin(), idx.end(), 0);
    return idx;
}

Shard random_shard(RngStream& rng, int n, int m, int num_classes) {
    Shard s;
    for (int i = 0; i < n; ++i) {
        DataSample smp;
        smp.features = gaussian_vector(rng, static_cast<std::size_t>(m), 0.0, 1.0);
        smp.label = static_cast<int>(rng.below(static_cast<std::uint64_t>(num_classes)));
        s.samples.push_back(std::move(smp));
    }
    return s;
}

// Independent forward pass for the one-hidden-layer network, written against
// the documented parameter layout. Used as the oracle for Objective::loss.
double mlp_forward_oracle(const ParamVector& theta, const DataSample& s, int m, int h, int nc) {
    std::vector<double> hidden(static_cast<std::size_t>(h));
    for (int u = 0; u < h; ++u) {
        double z = theta[static_cast<std::size_t>(h * m + u)];  // b1[u]
        for (int j = 0; j < m; ++j) z += theta[static_cast<std::size_t>(u * m + j)] * s.features[static_cast<std::size_t>(j)];
        hidden[static_cast<std::size_t>(u)] = std::tanh(z);
    }
    const int w2_off = h * (m + 1);
    const int b2_off = w2_off + nc * h;
    std::vector<double> sc(static_cast<std::size_t>(nc));
    for (int c = 0; c < nc; ++c) {
        double v = theta[static_cast<std::size_t>(b2_off + c)];
        for (int u = 0; u < h; ++u) v += theta[static_cast<std::size_t>(w2_off + c * h + u)] * hidden[static_cast<std::size_t>(u)];
        sc[static_cast<std::size_t>(c)] = v;
    }
    double mx = *std::max_element(sc.begin(), sc.end());
    double z = 0.0;
    for (double v : sc) z += std::exp(v - mx);
    return -(sc[static_cast<std::size_t>(s.label)] - mx) + std::log(z);
}

// Central-difference probe of one gradient component.
double central_difference(const Objective& obj, const ParamVector& theta, const Shard& shard,
                          std::span<const int> batch, std::size_t j, double eps) {
    ParamVector up = theta;
    ParamVector dn = theta;
    up[j] += eps;
    dn[j] -= eps;
    return (obj.loss(up, shard, batch) - obj.loss(dn, shard, batch)) / (2.0 * eps);
}

}  // namespace

TEST_CASE("quadratic loss vanishes at the per-sample optimum") {
    const Objective obj = make_quadratic(1);
    Shard s;
    s.samples.push_back({{2.0}, 0});
    CHECK(obj.loss({2.0}, s) == 0.0);
    CHECK(obj.loss({0.0}, s) == doctest::Approx(2.0));  // 1/2 * (0-2)^2
}

TEST_CASE("logistic loss at zero weights is ln(num_classes)") {
    const Objective obj = make_logistic(3, 2);
    RngStream rng(4, 0);
    Shard s = random_shard(rng, 6, 3, 2);
    CHECK(obj.loss(zeros(static_cast<std::size_t>(obj.param_dim())), s) ==
          doctest::Approx(std::log(2.0)).epsilon(1e-12));

    const Objective obj5 = make_logistic(3, 5);
    Shard s5 = random_shard(rng, 6, 3, 5);
    CHECK(obj5.loss(zeros(static_cast<std::size_t>(obj5.param_dim())), s5) ==
          doctest::Approx(std::log(5.0)).epsilon(1e-12));
}

TEST_CASE("mlp loss matches an independently coded forward pass") {
    const int m = 3, h = 4, nc = 3;
    const Objective obj = make_mlp(m, h, nc);
    RngStream rng(21, 0);
    Shard s = random_shard(rng, 8, m, nc);
    ParamVector theta = gaussian_vector(rng, static_cast<std::size_t>(obj.param_dim()), 0.0, 0.7);

    double expected = 0.0;
    for (const DataSample& smp : s.samples) expected += mlp_forward_oracle(theta, smp, m, h, nc);
    expected /= static_cast<double>(s.samples.size());

    CHECK(obj.loss(theta, s) == doctest::Approx(expected).epsilon(1e-12));
}

TEST_CASE("quadratic gradient is linear") {
    const Objective obj = make_quadratic(1);
    Shard s;
    s.samples.push_back({{2.0}, 0});
    const ParamVector g = obj.full_grad({0.0}, s);
    CHECK(g.size() == 1);
    CHECK(g[0] == doctest::Approx(-2.0));
}

TEST_CASE("gradients agree with central differences for every kind") {
    RngStream rng(31, 7);
    const double eps = 1e-6;

    auto probe = [&](const Objective& obj, const Shard& shard) {
        const std::vector<int> batch = all_indices(shard);
        for (int trial = 0; trial < 20; ++trial) {
            ParamVector theta = gaussian_vector(rng, static_cast<std::size_t>(obj.param_dim()), 0.0, 0.8);
            const ParamVector g = obj.grad(theta, shard, batch);
            const std::size_t j = rng.below(theta.size());
            const double fd = central_difference(obj, theta, shard, batch, j, eps);
            const double rel = std::abs(fd - g[j]) / std::max(1.0, std::abs(g[j]));
            CHECK(rel <= 1e-5);
        }
    };

    Shard sq = random_shard(rng, 10, 4, 2);
    probe(make_quadratic(4, 0.001), sq);
    probe(make_logistic(4, 3, 0.001), random_shard(rng, 10, 4, 3));
    probe(make_mlp(4, 5, 3, 0.001), random_shard(rng, 10, 4, 3));
}

TEST_CASE("weight decay adds l2*theta to the gradient exactly") {
    RngStream rng(5, 5);
    Shard s = random_shard(rng, 6, 3, 2);
    const Objective bare = make_logistic(3, 2, 0.0);
    const Objective decayed = make_logistic(3, 2, 0.001);
    ParamVector theta = gaussian_vector(rng, static_cast<std::size_t>(bare.param_dim()), 0.0, 1.0);
    const ParamVector g0 = bare.full_grad(theta, s);
    const ParamVector g1 = decayed.full_grad(theta, s);
    for (std::size_t j = 0; j < theta.size(); ++j) {
        CHECK(g1[j] == doctest::Approx(g0[j] + 0.001 * theta[j]).epsilon(1e-12));
    }
}

TEST_CASE("full_grad equals the mean of single-sample gradients") {
    RngStream rng(17, 3);
    const Objective obj = make_mlp(3, 4, 2, 0.0);
    Shard s = random_shard(rng, 16, 3, 2);
    ParamVector theta = gaussian_vector(rng, static_cast<std::size_t>(obj.param_dim()), 0.0, 0.5);

    ParamVector mean = zeros(theta.size());
    for (int i = 0; i < s.size(); ++i) {
        const std::vector<int> one{i};
        axpy_inplace(1.0, obj.grad(theta, s, one), mean);
    }
    scale_inplace(mean, 1.0 / 16.0);

    const ParamVector g = obj.full_grad(theta, s);
    for (std::size_t j = 0; j < g.size(); ++j) {
        CHECK(std::abs(g[j] - mean[j]) <= 1e-12 * (1.0 + std::abs(g[j])));
    }

    Shard single;
    single.samples.push_back(s.samples[0]);
    const std::vector<int> one{0};
    CHECK(single.size() == 1);
    CHECK(obj.full_grad(theta, single) == obj.grad(theta, single, one));
}

TEST_CASE("quadratic stationarity at the shard mean") {
    const Objective obj = make_quadratic(1);
    Shard s;
    s.samples.push_back({{1.0}, 0});
    s.samples.push_back({{3.0}, 0});
    const ParamVector g = obj.full_grad({2.0}, s);
    CHECK(std::abs(g[0]) <= 1e-15);
}

TEST_CASE("quadratic closed-form optimum zeroes the federation gradient") {
    RngStream rng(23, 9);
    const int m = 6;
    const Objective obj = make_quadratic(m, 0.0);
    std::vector<Shard> shards;
    ParamVector grand_mean = zeros(m);
    for (int i = 0; i < 5; ++i) {
        Shard s = random_shard(rng, 8, m, 2);
        ParamVector shard_mean = zeros(m);
        for (const DataSample& smp : s.samples) axpy_inplace(1.0, smp.features, shard_mean);
        scale_inplace(shard_mean, 1.0 / 8.0);
        axpy_inplace(1.0, shard_mean, grand_mean);
        shards.push_back(std::move(s));
    }
    scale_inplace(grand_mean, 1.0 / 5.0);

    ParamVector g = zeros(m);
    for (const Shard& s : shards) axpy_inplace(1.0, obj.full_grad(grand_mean, s), g);
    scale_inplace(g, 1.0 / 5.0);
    CHECK(norm2(g) <= 1e-10);
}

TEST_CASE("logistic and quadratic losses are non-negative") {
    RngStream rng(43, 2);
    const Objective quad = make_quadratic(3, 0.001);
    const Objective logi = make_logistic(3, 4, 0.001);
    Shard sq = random_shard(rng, 6, 3, 2);
    Shard sl = random_shard(rng, 6, 3, 4);
    for (int trial = 0; trial < 100; ++trial) {
        CHECK(quad.loss(gaussian_vector(rng, 3, 0.0, 2.0), sq) >= 0.0);
        CHECK(logi.loss(gaussian_vector(rng, static_cast<std::size_t>(logi.param_dim()), 0.0, 2.0), sl) >=
              0.0);
    }
}

TEST_CASE("loss is invariant under batch permutation") {
    RngStream rng(41, 1);
    const Objective obj = make_logistic(4, 3, 0.001);
    Shard s = random_shard(rng, 12, 4, 3);
    ParamVector theta = gaussian_vector(rng, static_cast<std::size_t>(obj.param_dim()), 0.0, 1.0);
    std::vector<int> batch = all_indices(s);
    const double base = obj.loss(theta, s, batch);
    std::reverse(batch.begin(), batch.end());
    CHECK(obj.loss(theta, s, batch) == base);
}

TEST_CASE("predict_accuracy and its tie-breaking") {
    const Objective obj = make_logistic(2, 2, 0.0);
    Shard s;
    s.samples.push_back({{1.0, 0.0}, 0});
    s.samples.push_back({{0.0, 1.0}, 1});
    s.samples.push_back({{1.0, 0.1}, 0});

    // weights that score the true class highest
    ParamVector theta(static_cast<std::size_t>(obj.param_dim()), 0.0);
    theta[0] = 5.0;  // w[class0] . x ~ x0
    theta[3] = 5.0;  // w[class1] . x ~ x1
    CHECK(obj.predict_accuracy(theta, s) == 1.0);

    // zero scores: every argmax ties, class 0 wins
    const ParamVector zero = zeros(static_cast<std::size_t>(obj.param_dim()));
    CHECK(obj.predict_accuracy(zero, s) == doctest::Approx(2.0 / 3.0));

    const Objective quad = make_quadratic(2);
    CHECK_THROWS_AS(quad.predict_accuracy({0.0, 0.0}, s), UnsupportedError);
}

TEST_CASE("a separable two-point set is learned perfectly by SGD") {
    // two points on opposite sides of the origin: w = (1,0) row-difference
    // separates them, so a perfect classifier exists
    Shard s;
    s.samples.push_back({{1.0, 0.0}, 1});
    s.samples.push_back({{-1.0, 0.0}, 0});
    const Objective obj = make_logistic(2, 2, 0.0);
    ParamVector theta = zeros(static_cast<std::size_t>(obj.param_dim()));
    const std::vector<int> batch = all_indices(s);
    for (int step = 0; step < 500; ++step) {
        axpy_inplace(-0.5, obj.grad(theta, s, batch), theta);
    }
    CHECK(obj.predict_accuracy(theta, s) == 1.0);
}

TEST_CASE("dimension and argument errors") {
    const Objective obj = make_logistic(3, 2, 0.0);
    RngStream rng(2, 2);
    Shard s = random_shard(rng, 4, 3, 2);
    CHECK_THROWS_AS(obj.loss(zeros(5), s), DimensionError);
    std::vector<int> empty;
    CHECK_THROWS_AS(obj.loss(zeros(static_cast<std::size_t>(obj.param_dim())), s, empty), ParameterError);
}
