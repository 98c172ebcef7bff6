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

#include <filesystem>
#include <fstream>

#include "fedsim/runner.hpp"

using namespace fedsim;

namespace {

std::string slurp(const std::string& path) {
    std::ifstream in(path);
    REQUIRE(in);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

std::string fresh_out_dir(const char* tag) {
    namespace fs = std::filesystem;
    const fs::path dir = fs::temp_directory_path() / (std::string("fedsim_runner_") + tag);
    fs::remove_all(dir);
    return dir.string();
}

RunConfig tiny_quadratic_config(const char* tag) {
    RunConfig cfg;
    cfg.algorithm = AlgorithmKind::AFedPD;
    cfg.objective = ObjectiveKind::Quadratic;
    cfg.clients = 6;
    cfg.participants = 3;
    cfg.rounds = 10;
    cfg.solver.local_steps = 10;
    cfg.solver.eta0 = 0.1;
    cfg.solver.lr_decay = 1.0;
    cfg.solver.batch_size = 2;
    cfg.solver.rho = 1.0;
    cfg.weight_decay = 0.0;
    cfg.data.num_classes = 2;
    cfg.data.feature_dim = 2;
    cfg.data.per_class = 30;
    cfg.data.spread = 0.5;
    cfg.master_seed = 7;
    cfg.run_id = tag;
    cfg.out_dir = fresh_out_dir(tag);
    return cfg;
}

}  // namespace

TEST_CASE("an empty document yields the reference defaults") {
    const RunConfig cfg = parse_config("");
    CHECK(cfg.solver.eta0 == 0.1);
    CHECK(cfg.solver.lr_decay == 0.998);
    CHECK(cfg.weight_decay == 0.001);
    CHECK(cfg.solver.batch_size == 50);
    CHECK(cfg.solver.rho == 0.1);
    CHECK(cfg.solver.sam_eps == 0.01);
    CHECK(cfg.clients == 50);
    CHECK(cfg.participants == 5);
    CHECK(cfg.rounds == 300);
    CHECK(cfg.solver.local_steps == 20);
}

TEST_CASE("comments, blank lines and key parsing") {
    const RunConfig cfg = parse_config(
        "# a comment\n"
        "\n"
        "algorithm = fedadmm   # trailing comment\n"
        "clients = 12\n"
        "participants = 4\n"
        "alpha = inf\n"
        "seeds = 1, 2, 3\n");
    CHECK(cfg.algorithm == AlgorithmKind::FedADMM);
    CHECK(cfg.clients == 12);
    CHECK(cfg.participants == 4);
    CHECK(std::isinf(cfg.data.alpha));
    CHECK(cfg.seeds == std::vector<std::uint64_t>{1, 2, 3});
}

TEST_CASE("participant overflow errors name both values") {
    CHECK_THROWS_WITH_AS((void)parse_config("clients = 5\nparticipants = 7\n"),
                         doctest::Contains("7"), ConfigError);
    try {
        (void)parse_config("clients = 5\nparticipants = 7\n");
    } catch (const ConfigError& e) {
        const std::string msg = e.what();
        CHECK(msg.find("5") != std::string::npos);
        CHECK(msg.find("7") != std::string::npos);
    }
}

TEST_CASE("fedpd rejects partial participation at parse time") {
    CHECK_THROWS_AS((void)parse_config("algorithm = fedpd\nclients = 10\nparticipants = 3\n"),
                    ConfigError);
    CHECK_NOTHROW((void)parse_config("algorithm = fedpd\nclients = 10\nparticipants = 10\n"));
}

TEST_CASE("unknown keys are rejected by name") {
    CHECK_THROWS_WITH_AS((void)parse_config("learning_rate = 0.1\n"),
                         doctest::Contains("learning_rate"), ConfigError);
}

TEST_CASE("malformed lines carry the line number") {
    CHECK_THROWS_WITH_AS((void)parse_config("clients = 5\nnot a kv line\n"), doctest::Contains("2"),
                         ConfigError);
}

TEST_CASE("serialize/parse round trip is stable") {
    RunConfig cfg = tiny_quadratic_config("roundtrip");
    cfg.seeds = {4, 5};
    cfg.target_accuracies = {0.8, 0.9};
    cfg.data.alpha = 0.1;
    const std::string text = serialize_config(cfg);
    const RunConfig back = parse_config(text);
    CHECK(serialize_config(back) == text);
    CHECK(back.algorithm == cfg.algorithm);
    CHECK(back.data.alpha == cfg.data.alpha);
    CHECK(back.seeds == cfg.seeds);
    CHECK(back.target_accuracies == cfg.target_accuracies);
}

TEST_CASE("a one-round run yields exactly one record") {
    RunConfig cfg = tiny_quadratic_config("onerecord");
    cfg.rounds = 1;
    const RunOutput out = run_single(cfg, cfg.master_seed);
    CHECK(out.records.size() == 1);
    CHECK(!out.diverged);
    CHECK(out.records[0].round == 0);
    CHECK(!out.records[0].test_accuracy.has_value());  // quadratic: accuracy absent
    CHECK(out.records[0].dual_residual.has_value());
    std::filesystem::remove_all(cfg.out_dir);
}

TEST_CASE("reruns with the same seed produce byte-identical CSVs") {
    RunConfig cfg = tiny_quadratic_config("determinism");
    const RunOutput a = run_single(cfg, 3);
    const std::string first = slurp(a.csv_path);
    const RunOutput b = run_single(cfg, 3);
    CHECK(slurp(b.csv_path) == first);

    // and a different seed differs
    const RunOutput c = run_single(cfg, 4);
    CHECK(slurp(c.csv_path) != first);
    std::filesystem::remove_all(cfg.out_dir);
}

TEST_CASE("threaded runs match single-threaded output byte for byte") {
    RunConfig cfg = tiny_quadratic_config("threads");
    cfg.threads = 1;
    const RunOutput serial = run_single(cfg, 11);
    const std::string serial_bytes = slurp(serial.csv_path);
    cfg.threads = 2;
    const RunOutput threaded = run_single(cfg, 11);
    CHECK(slurp(threaded.csv_path) == serial_bytes);
    std::filesystem::remove_all(cfg.out_dir);
}

TEST_CASE("a divergent configuration flags the last record and stops") {
    RunConfig cfg = tiny_quadratic_config("divergence");
    cfg.solver.eta0 = 1e160;  // guaranteed blow-up
    cfg.rounds = 8;
    const RunOutput out = run_single(cfg, 1);
    CHECK(out.diverged);
    CHECK(out.records.size() < 8);
    CHECK(out.records.back().diverged);
    // earlier records, if any, are clean
    for (std::size_t i = 0; i + 1 < out.records.size(); ++i) CHECK(!out.records[i].diverged);
    std::filesystem::remove_all(cfg.out_dir);
}

TEST_CASE("the quadratic federation converges to the closed-form optimum") {
    RunConfig cfg = tiny_quadratic_config("converge");
    cfg.rounds = 60;
    cfg.solver.local_steps = 60;
    cfg.data.samples_per_client = 1;  // point shards: exact local subproblems
    cfg.solver.batch_size = 1;
    cfg.participants = 6;
    const RunOutput out = run_single(cfg, 5, /*write_csv=*/false);
    CHECK(out.records.back().grad_norm_sq <= 1e-8);
    // consensus at stationarity: local models agree with the global one
    CHECK(out.records.back().primal_residual.value() < 1e-3);
}

TEST_CASE("run() writes one CSV per seed") {
    RunConfig cfg = tiny_quadratic_config("multiseed");
    cfg.rounds = 2;
    cfg.seeds = {1, 2, 3};
    const auto outs = fedsim::run(cfg);
    REQUIRE(outs.size() == 3);
    for (const RunOutput& o : outs) CHECK(std::filesystem::exists(o.csv_path));
    CHECK(outs[0].csv_path != outs[1].csv_path);
    std::filesystem::remove_all(cfg.out_dir);
}

TEST_CASE("participation ratios map to client counts by flooring") {
    CHECK(participants_for_ratio(1.0, 50) == 50);
    CHECK(participants_for_ratio(0.05, 50) == 2);
    CHECK(participants_for_ratio(0.1, 50) == 5);
    CHECK(participants_for_ratio(0.01, 50) == 1);  // clamped to at least one
    CHECK_THROWS_AS(participants_for_ratio(0.0, 50), ConfigError);
    CHECK_THROWS_AS(participants_for_ratio(1.2, 50), ConfigError);
}

TEST_CASE("sweep over a single value and seed mirrors the plain run") {
    RunConfig cfg = tiny_quadratic_config("sweeps");
    cfg.rounds = 5;
    SweepSpec spec;
    spec.axis = SweepAxis::Participation;
    spec.values = {0.5};
    const auto rows = sweep(cfg, spec, {9});
    REQUIRE(rows.size() == 1);
    CHECK(rows[0].seeds == 1);
    CHECK(rows[0].diverged == 0);

    RunConfig cell = cell_config(cfg, SweepAxis::Participation, 0.5);
    CHECK(cell.participants == 3);
    const RunOutput direct = run_single(cell, 9, /*write_csv=*/false);
    CHECK(rows[0].final_loss_mean == doctest::Approx(direct.records.back().train_loss));
    CHECK(rows[0].final_grad_norm_sq_mean == doctest::Approx(direct.records.back().grad_norm_sq));
    std::filesystem::remove_all(cfg.out_dir);
}

TEST_CASE("fixed-budget sweeps hold T*K constant") {
    RunConfig cfg = tiny_quadratic_config("budget");
    cfg.rounds = 40;
    cfg.solver.local_steps = 10;  // budget 400
    for (double t : {10.0, 20.0, 40.0}) {
        const RunConfig cell = cell_config(cfg, SweepAxis::RoundsFixedBudget, t);
        CHECK(cell.rounds * cell.solver.local_steps == 400);
    }
    CHECK_THROWS_AS((void)cell_config(cfg, SweepAxis::RoundsFixedBudget, 7.0), ConfigError);
    std::filesystem::remove_all(cfg.out_dir);
}

TEST_CASE("sweep cells are independent of execution order and threading") {
    RunConfig cfg = tiny_quadratic_config("sweep_det");
    cfg.rounds = 4;
    SweepSpec spec;
    spec.axis = SweepAxis::LocalInterval;
    spec.values = {5, 10};

    cfg.threads = 1;
    (void)sweep(cfg, spec, {1, 2});
    std::map<std::string, std::string> serial_files;
    for (const auto& entry : std::filesystem::directory_iterator(cfg.out_dir)) {
        serial_files[entry.path().filename().string()] = slurp(entry.path().string());
    }

    std::filesystem::remove_all(cfg.out_dir);
    cfg.threads = 2;
    (void)sweep(cfg, spec, {1, 2});
    for (const auto& entry : std::filesystem::directory_iterator(cfg.out_dir)) {
        const std::string name = entry.path().filename().string();
        REQUIRE(serial_files.count(name) == 1);
        CHECK(slurp(entry.path().string()) == serial_files[name]);
    }
    std::filesystem::remove_all(cfg.out_dir);
}

TEST_CASE("dataset defaults: samples_per_client falls back to pool/clients") {
    RunConfig cfg;
    cfg.clients = 50;
    cfg.data.num_classes = 4;
    cfg.data.per_class = 250;
    cfg.data.samples_per_client = 0;
    CHECK(cfg.effective_samples_per_client() == 20);
    cfg.data.samples_per_client = 33;
    CHECK(cfg.effective_samples_per_client() == 33);
}
