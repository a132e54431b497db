#include <algorithm>
#include <cmath>
#include <random>
#include <sstream>

#include "brace/error.hpp"
#include "brace/evalbench.hpp"
#include "doctest.h"
#include "json.hpp"

using namespace brace;

namespace {

Checkpoint untrained(std::uint64_t seed) {
  Checkpoint c;
  c.net = PolicyNet::create(seed, 32);
  return c;
}

EpisodeMetrics synthetic(std::uint64_t seed, bool success, int steps, double entropy) {
  EpisodeMetrics m;
  m.seed = seed;
  m.success = success;
  m.steps = steps;
  m.first_quartile_entropy = entropy;
  m.path_efficiency = 0.9;
  return m;
}

}  // namespace

TEST_CASE("no assistance and a fixed gamma of zero produce identical episodes") {
  const auto suite = paired_suite(3, 20, {2, 3, 5});
  for (const auto& spec : suite) {
    std::vector<StepTrace> a, b;
    const EpisodeMetrics ma = run_episode(Condition::no_assist(), spec, {}, {}, {}, &a);
    const EpisodeMetrics mb = run_episode(Condition::fixed(0.0), spec, {}, {}, {}, &b);
    CHECK(ma.steps == mb.steps);
    CHECK(ma.success == mb.success);
    CHECK(ma.path_efficiency == mb.path_efficiency);
    CHECK(ma.noise_checksum == mb.noise_checksum);
    REQUIRE(a.size() == b.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
      CHECK(a[i].cursor == b[i].cursor);
      CHECK(a[i].gamma == 0.0);
      CHECK(b[i].expert_action == Vec2{});
    }
  }
}

TEST_CASE("paired suites are deterministic and share pilot noise") {
  const auto suite = paired_suite(5, 9, {1, 4});
  REQUIRE(suite.size() == 9);
  CHECK(suite[0].stage == Stage::kBasic);
  CHECK(suite[1].stage == Stage::kAmbiguity);
  CHECK(paired_suite(5, 9, {1, 4})[3].seed == suite[3].seed);
  CHECK(paired_suite(6, 9, {1, 4})[3].seed != suite[3].seed);

  const SuiteResult r = run_suite({Condition::no_assist(), Condition::fixed(0.6), Condition::brace(untrained(2))},
                                  suite, {}, {}, {});
  CHECK(r.paired);
  CHECK(r.notices.empty());
  REQUIRE(r.conditions.size() == 3);
  for (std::size_t j = 0; j < suite.size(); ++j) {
    CHECK(r.episodes[1][j].noise_checksum == r.episodes[0][j].noise_checksum);
    CHECK(r.episodes[2][j].seed == suite[j].seed);
  }
  for (const auto& eps : r.episodes) {
    for (const auto& m : eps) {
      CHECK(m.path_efficiency > 0.0);
      CHECK(m.path_efficiency <= 1.0 + 1e-9);
      CHECK(validate_episode_record(to_ndjson(m)).empty());
    }
  }
  for (const auto& m : r.episodes[1]) CHECK(m.mean_gamma == doctest::Approx(0.6));
  for (const auto& m : r.episodes[2]) {
    CHECK(m.mean_gamma > 0.0);
    CHECK(m.mean_gamma < 1.0);
  }
}

TEST_CASE("conditions without checkpoints are skipped with a notice") {
  Condition c;
  c.kind = ConditionKind::kBrace;
  const SuiteResult r = run_suite({Condition::no_assist(), c}, paired_suite(1, 2, {1}), {}, {}, {});
  CHECK(r.conditions.size() == 1);
  REQUIRE(r.notices.size() == 1);
  CHECK(r.notices[0].find("brace") != std::string::npos);
  CHECK_THROWS_AS(Condition::fixed(1.5).validate(), Error);
  CHECK(condition_kind_from_string("map_sequential") == ConditionKind::kMapSequential);
  CHECK_THROWS_AS(condition_kind_from_string("oracle"), Error);
  CHECK(Condition::map_sequential(untrained(1)).belief_input == BeliefInput::kMapOneHot);
  CHECK(Condition::uniform_prior(untrained(1)).belief_input == BeliefInput::kUniform);
}

TEST_CASE("episodes are reproducible") {
  const EpisodeSpec spec{42, Stage::kFullComplexity};
  const Condition c = Condition::brace(untrained(4));
  const EpisodeMetrics a = run_episode(c, spec, {}, {}, {});
  const EpisodeMetrics b = run_episode(c, spec, {}, {}, {});
  CHECK(to_ndjson(a) == to_ndjson(b));
}

TEST_CASE("entropy bands split exactly at 0.5 and 1.0 nats") {
  CHECK(entropy_band(0.0) == 0);
  CHECK(entropy_band(std::nextafter(0.5, 0.0)) == 0);
  CHECK(entropy_band(0.5) == 1);
  CHECK(entropy_band(1.0) == 1);
  CHECK(entropy_band(std::nextafter(1.0, 2.0)) == 2);
}

TEST_CASE("stratification compares paired successes per band") {
  std::vector<EpisodeMetrics> brace, base;
  for (int i = 0; i < 10; ++i) {
    brace.push_back(synthetic(static_cast<std::uint64_t>(i), true, 90, 1.05));
    base.push_back(synthetic(static_cast<std::uint64_t>(i), true, 100, 0.0));
  }
  for (int i = 10; i < 16; ++i) {
    brace.push_back(synthetic(static_cast<std::uint64_t>(i), true, 80, 0.1));
    base.push_back(synthetic(static_cast<std::uint64_t>(i), true, 80, 0.0));
  }
  // A failed pair is excluded from the step comparison.
  brace.push_back(synthetic(99, false, 10, 1.05));
  base.push_back(synthetic(99, true, 500, 0.0));

  const auto rows = stratify_by_uncertainty(brace, base, 5);
  REQUIRE(rows.size() == 3);
  CHECK(rows[0].band == "<0.5");
  CHECK(rows[0].episodes == 6);
  CHECK(rows[0].improvement == 0.0);
  CHECK(rows[1].insufficient);
  CHECK(rows[2].episodes == 10);
  CHECK(rows[2].improvement == doctest::Approx(0.1));

  std::ostringstream csv;
  write_bands_csv(csv, rows);
  CHECK(csv.str().find("band,episodes,brace_steps,baseline_steps,improvement") == 0);

  base[0].seed = 1234;
  CHECK_THROWS_AS(stratify_by_uncertainty(brace, base, 5), Error);
  base.pop_back();
  CHECK_THROWS_AS(stratify_by_uncertainty(brace, base, 5), Error);
}

TEST_CASE("aggregates ignore episode order and average steps over successes") {
  std::vector<EpisodeMetrics> eps{synthetic(1, true, 100, 0), synthetic(2, false, 600, 0), synthetic(3, true, 80, 0),
                                  synthetic(4, true, 120, 0)};
  eps[1].collisions = 2;
  const Aggregate a = aggregate("x", eps);
  CHECK(a.episodes == 4);
  CHECK(a.success.mean == doctest::Approx(0.75));
  CHECK(a.steps.mean == doctest::Approx(100.0));
  CHECK(a.collisions.mean == doctest::Approx(0.5));

  const auto suite = paired_suite(8, 12, {3, 5});
  const SuiteResult r = run_suite({Condition::fixed(0.5)}, suite, {}, {}, {});
  auto shuffled = r.episodes[0];
  std::mt19937 g(3);
  std::shuffle(shuffled.begin(), shuffled.end(), g);
  const Aggregate x = aggregate("f", r.episodes[0]);
  const Aggregate y = aggregate("f", shuffled);
  CHECK(x.success.mean == doctest::Approx(y.success.mean).epsilon(1e-12));
  CHECK(x.steps.mean == doctest::Approx(y.steps.mean).epsilon(1e-12));
  CHECK(x.steps.sd == doctest::Approx(y.steps.sd).epsilon(1e-12));
  CHECK(x.path_efficiency.mean == doctest::Approx(y.path_efficiency.mean).epsilon(1e-12));
  CHECK(x.belief_accuracy == y.belief_accuracy);

  const MeanSd ms = mean_sd({1.0, 2.0, 3.0, 4.0});
  CHECK(ms.mean == 2.5);
  CHECK(ms.sd == doctest::Approx(std::sqrt(5.0 / 3.0)));
}

TEST_CASE("episode record validation") {
  EpisodeMetrics m = synthetic(3, true, 50, 0.2);
  m.condition = "brace";
  const std::string line = to_ndjson(m);
  CHECK(validate_episode_record(line).empty());
  CHECK_FALSE(validate_episode_record("{").empty());
  CHECK_FALSE(validate_episode_record("[1,2]").empty());
  auto j = nlohmann::json::parse(line);
  j.erase("steps");
  CHECK(validate_episode_record(j.dump()).find("steps") != std::string::npos);
  j = nlohmann::json::parse(line);
  j["path_efficiency"] = 1.5;
  CHECK_FALSE(validate_episode_record(j.dump()).empty());
  j = nlohmann::json::parse(line);
  j["success"] = "yes";
  CHECK_FALSE(validate_episode_record(j.dump()).empty());
}

TEST_CASE("fitts throughput") {
  CHECK(fitts_throughput(300.0, 20.0, 50) == doctest::Approx(std::log2(8.5) / 50.0));
  CHECK(fitts_throughput(300.0, 20.0, 0) == 0.0);
}

TEST_CASE("recorded inputs drive the same episode") {
  const EpisodeSpec spec{12, Stage::kObstacles};
  const std::vector<Vec2> still(40, Vec2{});
  EpisodeMetrics m;
  const EnvState end = run_episode_from_inputs(Condition::no_assist(), spec, {}, {}, still, &m);
  CHECK(end.cursor == generate_environment(12, Stage::kObstacles, {}).cursor);
  CHECK_FALSE(m.success);

  const std::vector<Vec2> east(400, Vec2{1.0, 0.0});
  CHECK(input_to_action({1.0, 0.0}, 10.0) == Vec2{10.0, 0.0});
  CHECK(input_to_action({1.0, 1.0}, 10.0).norm() <= 10.0 + 1e-12);
  const EnvState a = run_episode_from_inputs(Condition::fixed(0.3), spec, {}, {}, east);
  const EnvState b = run_episode_from_inputs(Condition::fixed(0.3), spec, {}, {}, east);
  CHECK(a.cursor == b.cursor);
  CHECK(a.step_index == b.step_index);
}

TEST_CASE("gamma heat map bins every step") {
  const auto suite = paired_suite(2, 4, {3});
  std::vector<std::vector<StepTrace>> traces;
  std::size_t total = 0;
  for (const auto& s : suite) {
    traces.emplace_back();
    run_episode(Condition::fixed(0.25), s, {}, {}, {}, &traces.back());
    total += traces.back().size();
  }
  const HeatMap h = gamma_heatmap(traces);
  CHECK(h.progress_edges.size() == 11);
  CHECK(h.distance_edges.back() == 240.0);
  std::size_t counted = 0;
  for (std::size_t i = 0; i < h.count.size(); ++i) {
    for (std::size_t j = 0; j < h.count[i].size(); ++j) {
      counted += static_cast<std::size_t>(h.count[i][j]);
      if (h.count[i][j] > 0) CHECK(h.mean[i][j] == doctest::Approx(0.25));
      else CHECK(std::isnan(h.mean[i][j]));
    }
  }
  CHECK(counted == total);
  CHECK_THROWS_AS(gamma_heatmap(traces, 0), Error);
}
