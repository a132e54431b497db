#include <algorithm>
#include <cmath>
#include <filesystem>
#include <numeric>

#include "../oracles.hpp"
#include "brace/belief.hpp"
#include "brace/error.hpp"
#include "brace/pilot.hpp"
#include "brace/rng.hpp"
#include "doctest.h"

using namespace brace;

namespace {

std::vector<Goal> make_goals(std::initializer_list<Vec2> points) {
  std::vector<Goal> g;
  for (const auto& p : points) g.push_back(Goal{static_cast<int>(g.size()), p, 20.0});
  return g;
}

double sum(const std::vector<double>& v) { return std::accumulate(v.begin(), v.end(), 0.0); }

InferenceParams exact_params() {
  InferenceParams p;
  p.ema_decay = 0.0;
  p.temperature = 1.0;
  return p;
}

}  // namespace

TEST_CASE("angular deviation") {
  CHECK(angular_deviation({1, 0}, {0, 0}, {5, 0}) == 0.0);
  CHECK(angular_deviation({0, 1}, {0, 0}, {5, 0}) == doctest::Approx(kPi / 2));
  CHECK(angular_deviation({-1, 0}, {0, 0}, {5, 0}) == doctest::Approx(kPi));
  CHECK(angular_deviation({1, 1}, {0, 0}, {0, 5}) == doctest::Approx(kPi / 4));
  try {
    angular_deviation({0, 0}, {0, 0}, {5, 0});
    FAIL("zero input accepted");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::kDegenerateDirection);
  }
  CHECK_THROWS_AS(angular_deviation({1, 0}, {3, 3}, {3, 3}), Error);
}

TEST_CASE("distance deviation") {
  const InferenceParams p;
  // d = 300 is past the knee, so h_opt = v_max.
  CHECK(distance_deviation({10, 0}, {0, 0}, {300, 0}, p) == 0.0);
  CHECK(distance_deviation({0, 0}, {0, 0}, {300, 0}, p) == 1.0);
  CHECK(distance_deviation({10, 0}, {0, 0}, {50, 0}, p) == doctest::Approx(1.0));
  CHECK(distance_deviation({5, 0}, {0, 0}, {50, 0}, p) == doctest::Approx(0.0));
  // Below eps_mag * d_slow the optimum is floored at eps_mag * v_max = 1.
  CHECK(optimal_magnitude(1.0, p) == doctest::Approx(1.0));
  CHECK(distance_deviation({3, 0}, {0, 0}, {1, 0}, p) == doctest::Approx(2.0));
}

TEST_CASE("input cost") {
  const InferenceParams p;
  CHECK(input_cost({10, 0}, {0, 0}, {300, 0}, p) == 0.0);
  CHECK(input_cost({0, 10}, {0, 0}, {300, 0}, p) == doctest::Approx(0.7 * kPi / 2).epsilon(1e-12));
  CHECK(input_cost({0, 10}, {0, 0}, {300, 0}, p) == doctest::Approx(1.0996).epsilon(1e-4));
  CHECK(input_cost({10, 0}, {0, 0}, {50, 0}, p) == doctest::Approx(0.3));
  // Zero input: uninformative direction plus the actual magnitude deviation.
  CHECK(input_cost({0, 0}, {0, 0}, {300, 0}, p) == doctest::Approx(0.7 * kPi / 2 + 0.3));
}

TEST_CASE("mirror-symmetric goals keep equal posterior") {
  const auto goals = make_goals({{700, 100}, {700, 500}});
  BeliefState b = uniform_belief(2);
  for (int i = 0; i < 10; ++i) b = update_belief(b, Vec2{100, 300}, goals, {10, 0}, InferenceParams{});
  CHECK(b.probs[0] == doctest::Approx(b.probs[1]).epsilon(1e-15));
  CHECK(b.map_goal_id == 0);
}

TEST_CASE("an optimal input toward a goal raises its probability") {
  const auto goals = make_goals({{700, 300}, {700, 100}, {700, 500}});
  const BeliefState b0 = uniform_belief(3);
  const BeliefState b1 = update_belief(b0, Vec2{100, 300}, goals, {10, 0}, InferenceParams{});
  CHECK(b1.probs[0] > b0.probs[0]);
  CHECK(b1.map_goal_id == 0);
}

TEST_CASE("three-goal fixture matches the product-form oracle") {
  const auto goals = make_goals({{700, 300}, {700, 100}, {700, 500}});
  const std::vector<double> expected =
      oracle::bayes_product({{700, 300}, {700, 100}, {700, 500}}, {{100, 300}}, {{10, 0}}, {});
  // Frozen from the oracle: cost 0.7 * atan(1/3) for the off-axis goals.
  CHECK(expected[0] == doctest::Approx(0.8262251329066979).epsilon(1e-12));
  CHECK(expected[1] == doctest::Approx(0.08688743354665107).epsilon(1e-12));
  CHECK(expected[2] == doctest::Approx(0.08688743354665107).epsilon(1e-12));

  const BeliefState exact = update_belief(uniform_belief(3), Vec2{100, 300}, goals, {10, 0}, exact_params());
  for (int i = 0; i < 3; ++i) CHECK(oracle::relative_error(exact.probs[i], expected[i]) < 1e-12);

  // With the default smoothing the step blends prior and posterior.
  const BeliefState smoothed = update_belief(uniform_belief(3), Vec2{100, 300}, goals, {10, 0}, InferenceParams{});
  for (int i = 0; i < 3; ++i) {
    CHECK(smoothed.probs[i] == doctest::Approx(0.85 / 3.0 + 0.15 * expected[i]).epsilon(1e-12));
  }
}

TEST_CASE("recursive updates equal the product form on random trajectories") {
  Rng rng(2024);
  double worst = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    const int n = rng.uniform_int(2, 5);
    const int steps = rng.uniform_int(1, 50);
    std::vector<Goal> goals;
    std::vector<Vec2> goal_points;
    for (int g = 0; g < n; ++g) {
      goal_points.push_back({rng.uniform(0, 800), rng.uniform(0, 600)});
      goals.push_back(Goal{g, goal_points.back(), 20.0});
    }
    InferenceParams p = exact_params();
    p.beta = rng.uniform(1.0, 10.0);
    p.w_theta = rng.uniform(0.3, 0.9);
    p.w_d = 1.0 - p.w_theta;
    std::vector<Vec2> pos, in;
    Vec2 x{rng.uniform(0, 800), rng.uniform(0, 600)};
    BeliefState b = uniform_belief(static_cast<std::size_t>(n));
    for (int t = 0; t < steps; ++t) {
      const Vec2 h = rng.uniform() < 0.05 ? Vec2{} : clip_norm({rng.uniform(-10, 10), rng.uniform(-10, 10)}, 10.0);
      pos.push_back(x);
      in.push_back(h);
      b = update_belief(b, x, goals, h, p);
      x += h;
    }
    oracle::NoisyRational o;
    o.beta = p.beta;
    o.w_theta = p.w_theta;
    o.w_d = p.w_d;
    const auto expected = oracle::bayes_product(goal_points, pos, in, o);
    for (int g = 0; g < n; ++g) {
      // Relative error on probabilities that are representable at all.
      if (expected[g] > 1e-300) worst = std::max(worst, oracle::relative_error(b.probs[g], expected[g], 1e-300));
    }
  }
  CHECK(worst < 1e-9);
}

TEST_CASE("probabilities stay normalized under random updates") {
  Rng rng(77);
  const auto goals = make_goals({{600, 100}, {650, 300}, {700, 500}});
  BeliefState b = uniform_belief(3);
  Vec2 x{100, 300};
  for (int t = 0; t < 400; ++t) {
    const Vec2 h = clip_norm({rng.uniform(-10, 10), rng.uniform(-10, 10)}, 10.0);
    b = update_belief(b, x, goals, h, InferenceParams{});
    x = Vec2{std::clamp(x.x + h.x, 0.0, 800.0), std::clamp(x.y + h.y, 0.0, 600.0)};
    CHECK(std::abs(sum(b.probs) - 1.0) <= 1e-9);
    for (double v : b.probs) CHECK(v >= 0.0);
    CHECK(b.entropy == doctest::Approx(oracle::entropy(b.probs)).epsilon(1e-12));
    CHECK(b.p_max == *std::max_element(b.probs.begin(), b.probs.end()));
  }
}

TEST_CASE("consistent evidence lowers entropy") {
  const auto goals = make_goals({{700, 300}, {650, 150}, {650, 450}});
  SUBCASE("every step without smoothing") {
    InferenceParams p = exact_params();
    BeliefState b = uniform_belief(3);
    Vec2 x{100, 320};
    for (int t = 0; t < 30; ++t) {
      const Vec2 h = (goals[0].position - x) * (10.0 / distance(goals[0].position, x));
      const BeliefState next = update_belief(b, x, goals, h, p);
      CHECK(next.entropy < b.entropy);
      b = next;
      x += h;
    }
  }
  SUBCASE("every five-step window with smoothing") {
    const InferenceParams p;
    std::vector<double> h_series;
    BeliefState b = uniform_belief(3);
    h_series.push_back(b.entropy);
    Vec2 x{100, 320};
    for (int t = 0; t < 30; ++t) {
      const Vec2 h = (goals[0].position - x) * (10.0 / distance(goals[0].position, x));
      b = update_belief(b, x, goals, h, p);
      h_series.push_back(b.entropy);
      x += h;
    }
    for (std::size_t t = 0; t + 5 < h_series.size(); ++t) CHECK(h_series[t + 5] < h_series[t]);
  }
}

TEST_CASE("tempered softmax") {
  const std::vector<double> scores{0.0, -1.0, -3.0};
  const auto standard = tempered_softmax(scores, 1.0);
  const double z = 1.0 + std::exp(-1.0) + std::exp(-3.0);
  CHECK(standard[0] == doctest::Approx(1.0 / z).epsilon(1e-14));
  CHECK(standard[1] == doctest::Approx(std::exp(-1.0) / z).epsilon(1e-14));
  CHECK(standard[2] == doctest::Approx(std::exp(-3.0) / z).epsilon(1e-14));
  const auto hot = tempered_softmax(scores, 1e9);
  for (double v : hot) CHECK(v == doctest::Approx(1.0 / 3.0).epsilon(1e-8));
  double prev = 0.0;
  for (double tau : {1.0, 2.0, 5.0, 50.0}) {
    const double h = oracle::entropy(tempered_softmax(scores, tau));
    CHECK(h > prev);
    prev = h;
  }
}

TEST_CASE("permuting goals permutes probabilities") {
  Rng rng(3);
  const std::vector<Vec2> pts{{600, 100}, {700, 300}, {650, 500}, {400, 550}};
  const std::vector<int> perm{2, 0, 3, 1};
  std::vector<Goal> a, b;
  for (int i = 0; i < 4; ++i) {
    a.push_back(Goal{i, pts[static_cast<std::size_t>(i)], 20.0});
    b.push_back(Goal{i, pts[static_cast<std::size_t>(perm[static_cast<std::size_t>(i)])], 20.0});
  }
  BeliefState ba = uniform_belief(4), bb = uniform_belief(4);
  Vec2 x{100, 300};
  for (int t = 0; t < 25; ++t) {
    const Vec2 h = clip_norm({rng.uniform(-2, 10), rng.uniform(-10, 10)}, 10.0);
    ba = update_belief(ba, x, a, h, InferenceParams{});
    bb = update_belief(bb, x, b, h, InferenceParams{});
    x += h;
  }
  for (int i = 0; i < 4; ++i) {
    CHECK(bb.probs[static_cast<std::size_t>(i)] ==
          doctest::Approx(ba.probs[static_cast<std::size_t>(perm[static_cast<std::size_t>(i)])]).epsilon(1e-12));
  }
}

TEST_CASE("non-finite costs leave the belief unchanged with a warning") {
  const auto goals = make_goals({{700, 300}, {700, 100}});
  BeliefState b = update_belief(uniform_belief(2), Vec2{100, 300}, goals, {10, 0}, InferenceParams{});
  InferenceParams bad;
  bad.beta = INFINITY;
  const BeliefState same = update_belief(b, Vec2{100, 300}, goals, {0, 10}, bad);
  CHECK(same.warning);
  CHECK(same.probs == b.probs);
}

TEST_CASE("summaries break ties toward the lowest index") {
  CHECK(argmax_lowest(std::vector<double>{0.5, 0.5, 0.0}) == 0);
  CHECK(argmax_lowest(std::vector<double>{0.2, 0.4, 0.4}) == 1);
  BeliefState u = uniform_belief(3);
  CHECK(u.entropy == doctest::Approx(std::log(3.0)));
  CHECK(u.map_goal_id == 0);
  CHECK_THROWS_AS(update_belief(u, Vec2{}, make_goals({{1, 1}, {2, 2}}), {1, 0}, InferenceParams{}), Error);
}

TEST_CASE("inference parameter invariants") {
  InferenceParams p;
  p.w_theta = 3.0;
  p.w_d = 1.0;
  p.renormalize();
  CHECK(p.w_theta == doctest::Approx(0.75));
  CHECK(p.w_theta + p.w_d == doctest::Approx(1.0));
  p.validate();
  InferenceParams q;
  q.beta = -1.0;
  CHECK_THROWS_AS(q.validate(), Error);
  q = InferenceParams{};
  q.ema_decay = 1.0;
  CHECK_THROWS_AS(q.validate(), Error);
}

TEST_CASE("replayed deviation traces reproduce the recursive update") {
  const auto goals = make_goals({{600, 100}, {700, 300}, {650, 500}});
  Rng rng(4);
  DeviationTrace trace;
  BeliefState b = uniform_belief(3);
  const InferenceParams p;
  Vec2 x{100, 300};
  for (int t = 0; t < 40; ++t) {
    const Vec2 h = clip_norm({rng.uniform(0, 10), rng.uniform(-10, 10)}, 10.0);
    trace.push_back(deviations(x, goals, h, p));
    b = update_belief(b, x, goals, h, p);
    x += h;
  }
  const auto replayed = replay(trace, 3, p);
  CHECK(replayed.back().probs == b.probs);
}

TEST_CASE("calibration data round trip and minimum size") {
  const auto data = generate_dataset(12, PilotConfig{}, 3);
  const auto path = std::filesystem::temp_directory_path() / "brace_calibration_roundtrip.ndjson";
  write_dataset(path, data);
  const auto back = read_dataset(path);
  REQUIRE(back.size() == data.size());
  for (std::size_t i = 0; i < data.size(); ++i) CHECK(to_ndjson(back[i]) == to_ndjson(data[i]));
  std::filesystem::remove(path);
  try {
    calibrate(data);
    FAIL("calibrated on 12 trajectories");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::kInsufficientCalibrationData);
  }
}

TEST_CASE("calibration on noiseless pilot data is perfectly accurate late in the path") {
  PilotConfig clean;
  clean.noise_amplitude = 0.0;
  const CalibrationReport r = calibrate(generate_dataset(60, clean, 5));
  CHECK(r.accuracy[2] == 1.0);
  CHECK(r.n_train + r.n_validation + r.n_test == 60);
  r.params.validate();
}

TEST_CASE("calibration accuracy grows with path completion at default noise") {
  const CalibrationReport r = calibrate(generate_dataset(150, PilotConfig{}, 8));
  CHECK(r.accuracy[2] >= r.accuracy[0]);
  CHECK(r.validation_log_likelihood > std::log(1.0 / 3.0));
}

TEST_CASE("completion index") {
  const std::vector<Vec2> pts{{0, 0}, {1, 0}, {2, 0}, {3, 0}, {4, 0}};
  CHECK(completion_index(pts, 0.5) == 2);
  CHECK(completion_index(pts, 0.25) == 1);
  CHECK(completion_index(pts, 1.0) == 4);
}
