#include <cmath>
#include <numeric>
#include <sstream>

#include "../oracles.hpp"
#include "brace/error.hpp"
#include "brace/trainer.hpp"
#include "doctest.h"
#include "json.hpp"

using namespace brace;

namespace {

std::vector<Transition> trajectory(const std::vector<double>& rewards, const std::vector<double>& values) {
  std::vector<Transition> t(rewards.size());
  for (std::size_t i = 0; i < t.size(); ++i) {
    t[i].reward = rewards[i];
    t[i].value = values[i];
  }
  t.back().done = true;
  return t;
}

// A batch of identical inputs whose stored log-probs match the current policy.
std::vector<Transition> synthetic_batch(const PolicyNet& net, Rng& rng, int n) {
  PolicyInput x{};
  for (auto& v : x) v = 0.1;
  const PolicyOutput o = forward(net, x);
  std::vector<Transition> b(static_cast<std::size_t>(n));
  for (auto& t : b) {
    t.input = x;
    t.action = o.mu + std::exp(net.log_std) * rng.normal();
    t.log_prob = gaussian_log_prob(t.action, o.mu, net.log_std);
    t.value = o.value;
  }
  return b;
}

PpoConfig single_step_ppo() {
  PpoConfig c;
  c.batch = 64;
  c.epochs = 1;
  c.minibatches = 1;
  c.value_coef = 0.0;
  c.entropy_coef = 0.0;
  return c;
}

std::vector<BeliefEpisode> belief_fixture() {
  std::vector<Goal> goals{{0, {700, 300}, 20}, {1, {650, 120}, 20}, {2, {650, 480}, 20}};
  Rng rng(6);
  std::vector<BeliefEpisode> eps;
  const InferenceParams p;
  for (int e = 0; e < 3; ++e) {
    BeliefEpisode be;
    be.n_goals = 3;
    be.true_goal = e;
    Vec2 x{100, 300};
    for (int t = 0; t < 30; ++t) {
      const Vec2 to = goals[static_cast<std::size_t>(e)].position - x;
      const Vec2 h = clip_norm(to * (10.0 / to.norm()) + Vec2{rng.normal() * 3, rng.normal() * 3}, 10.0);
      be.trace.push_back(deviations(x, goals, h, p));
      be.map_goals.push_back(rng.uniform_int(0, 2));
      be.advantages.push_back(rng.normal());
      x += h;
    }
    eps.push_back(be);
  }
  return eps;
}

TrainConfig small_config(int budget) {
  TrainConfig c;
  c.episode_budget = budget;
  c.hidden = 32;
  c.ppo.batch = 256;
  c.warm_start_episodes = 5;
  return c;
}

}  // namespace

TEST_CASE("reward examples") {
  const RewardWeights w;
  RewardContext c;
  c.p_max = 1.0 / 3.0;
  c.p_true = 1.0 / 3.0;
  c.distance_to_map_goal = 150.0;
  CHECK(step_reward(c, w).total() == doctest::Approx(2.0 * std::log(1.0 / 3.0)));
  CHECK(step_reward(c, w).total() == doctest::Approx(-2.197).epsilon(1e-3));

  RewardContext far;
  far.gamma = 1.0;
  far.p_max = 1.0;
  far.p_true = 1.0;
  far.distance_to_map_goal = 400.0;
  CHECK(step_reward(far, w).total() == doctest::Approx(-3.0));

  RewardContext hit;
  hit.collision = true;
  hit.p_max = 1.0;
  hit.p_true = 1.0;
  hit.distance_to_map_goal = 150.0;
  CHECK(step_reward(hit, w).total() == doctest::Approx(-10.0));

  RewardContext near = hit;
  near.collision = false;
  near.gamma = 0.5;
  near.p_max = 0.8;
  near.distance_to_map_goal = 50.0;
  near.progress = 10.0;
  near.p_true = 0.0;
  const RewardBreakdown r = step_reward(near, w);
  CHECK(r.proximity == doctest::Approx(2.5 * 0.5 * 0.8));
  CHECK(r.progress == doctest::Approx(3.0 * 0.8 * 1.0));
  CHECK(r.autonomy == doctest::Approx(-1.5 * 0.25));
  CHECK(r.goal == doctest::Approx(2.0 * std::log(1e-6)));
}

TEST_CASE("reward equals the sum of its terms") {
  Rng rng(2);
  const RewardWeights w;
  for (int i = 0; i < 500; ++i) {
    RewardContext c;
    c.collision = rng.uniform() < 0.2;
    c.gamma = rng.uniform();
    c.p_max = rng.uniform(0.2, 1.0);
    c.p_true = rng.uniform();
    c.distance_to_map_goal = rng.uniform(0, 600);
    c.progress = rng.uniform(-10, 10);
    const RewardBreakdown r = step_reward(c, w);
    CHECK(r.total() == r.collision + r.proximity + r.far + r.progress + r.autonomy + r.goal);
  }
}

TEST_CASE("policy input belief modes") {
  EnvState s;
  s.cursor = {100, 300};
  s.goals = {Goal{0, {700, 300}, 20}, Goal{1, {700, 100}, 20}, Goal{2, {700, 500}, 20}};
  BeliefState b;
  b.probs = {0.4, 0.35, 0.25};
  refresh_summaries(b);
  const EnvConfig env;
  const PolicyInput full = policy_input(s, {}, b, BeliefInput::kFull, env);
  CHECK(full[10] == 0.4);
  CHECK(full[13] == doctest::Approx(oracle::entropy(b.probs)));
  const PolicyInput map = policy_input(s, {}, b, BeliefInput::kMapOneHot, env);
  CHECK(map[10] == 1.0);
  CHECK(map[11] == 0.0);
  CHECK(map[12] == 0.0);
  CHECK(map[13] == 0.0);
  const PolicyInput uni = policy_input(s, {}, b, BeliefInput::kUniform, env);
  CHECK(uni[10] == doctest::Approx(1.0 / 3.0));
  CHECK(uni[13] == doctest::Approx(std::log(3.0)));

  b.probs = {0.5, 0.5, 0.0};
  refresh_summaries(b);
  const PolicyInput tie = policy_input(s, {}, b, BeliefInput::kMapOneHot, env);
  CHECK(tie[10] == 1.0);
  CHECK(tie[11] == 0.0);

  s.goals.pop_back();
  b.probs = {0.7, 0.3};
  refresh_summaries(b);
  const PolicyInput two = policy_input(s, {}, b, BeliefInput::kFull, env);
  CHECK(two[12] == 0.0);
  for (std::size_t i = 0; i < 10; ++i) CHECK(full[i] == observation_vector(
      EnvState{s.cursor, {}, {Goal{0, {700, 300}, 20}, Goal{1, {700, 100}, 20}, Goal{2, {700, 500}, 20}}, {}, 0, 0, {}},
      {}, env)[i]);
}

TEST_CASE("generalized advantage estimation") {
  const GaeResult zero = compute_gae(trajectory({0, 0, 0}, {0, 0, 0}), 0.99, 0.95);
  for (double a : zero.advantages) CHECK(a == 0.0);

  const GaeResult one = compute_gae(trajectory({1.0}, {0.0}), 0.99, 0.95);
  CHECK(one.advantages[0] == 1.0);
  CHECK(one.returns[0] == 1.0);

  const std::vector<double> r{0.5, -1.0, 2.0}, v{0.3, 0.1, -0.4};
  const GaeResult mc = compute_gae(trajectory(r, v), 0.99, 1.0);
  const auto expected = oracle::monte_carlo_advantages(r, v, 0.99);
  for (std::size_t i = 0; i < 3; ++i) CHECK(std::abs(mc.advantages[i] - expected[i]) <= 1e-9);

  // lambda = 0 reduces to the one-step TD error.
  const GaeResult td = compute_gae(trajectory(r, v), 0.9, 0.0);
  CHECK(td.advantages[0] == doctest::Approx(0.5 + 0.9 * 0.1 - 0.3));

  // A non-terminal tail bootstraps from the given value.
  auto open = trajectory({1.0}, {0.0});
  open.back().done = false;
  CHECK(compute_gae(open, 0.5, 0.95, 4.0).advantages[0] == doctest::Approx(3.0));

  try {
    compute_gae(std::vector<Transition>{}, 0.99, 0.95);
    FAIL("empty trajectory accepted");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::kEmptyTrajectory);
  }
}

TEST_CASE("advantage normalization") {
  Rng rng(4);
  std::vector<double> a(1024);
  for (auto& v : a) v = rng.normal() * 7.0 + 3.0;
  normalize_advantages(a);
  const double mean = std::accumulate(a.begin(), a.end(), 0.0) / 1024.0;
  double var = 0.0;
  for (double v : a) var += (v - mean) * (v - mean);
  CHECK(std::abs(mean) < 1e-6);
  CHECK(std::sqrt(var / 1024.0) >= 0.99);
  CHECK(std::sqrt(var / 1024.0) <= 1.01);
  std::vector<double> flat(10, 2.0);
  normalize_advantages(flat);
  for (double v : flat) CHECK(v == 0.0);
}

TEST_CASE("ppo with unchanged policy sees unit ratios") {
  PolicyNet net = PolicyNet::create(3, 32);
  Rng rng(5);
  auto batch = synthetic_batch(net, rng, 128);
  std::vector<double> adv(128), ret(128, 0.0);
  for (auto& v : adv) v = rng.normal();
  OptimState opt = OptimState::for_size(net.parameter_count(), 3e-4, 100, 0.5);
  const PpoDiagnostics d = ppo_update(batch, adv, ret, net, opt, single_step_ppo(), rng);
  CHECK(d.clip_fraction == 0.0);
  CHECK(d.updates == 1);
  CHECK(std::abs(d.approx_kl) < 1e-12);
  CHECK_FALSE(d.aborted);
}

TEST_CASE("ppo with zero advantages leaves the actor untouched") {
  PolicyNet net = PolicyNet::create(3, 32);
  const Eigen::VectorXd before = net.parameters();
  Rng rng(5);
  auto batch = synthetic_batch(net, rng, 128);
  std::vector<double> adv(128, 0.0), ret(128, 0.0);
  OptimState opt = OptimState::for_size(net.parameter_count(), 3e-4, 100, 0.5);
  PpoConfig cfg = single_step_ppo();
  cfg.epochs = 3;
  ppo_update(batch, adv, ret, net, opt, cfg, rng);
  CHECK(net.parameters() == before);
}

TEST_CASE("ppo raises the log-prob of an action with positive advantage") {
  PolicyNet net = PolicyNet::create(8, 32);
  Rng rng(9);
  auto batch = synthetic_batch(net, rng, 64);
  std::vector<double> adv(64, 0.0), ret(64, 0.0);
  adv[0] = 1.0;
  const double before = gaussian_log_prob(batch[0].action, forward(net, batch[0].input).mu, net.log_std);
  OptimState opt = OptimState::for_size(net.parameter_count(), 1e-3, 100, 0.0);
  ppo_update(batch, adv, ret, net, opt, single_step_ppo(), rng);
  const double after = gaussian_log_prob(batch[0].action, forward(net, batch[0].input).mu, net.log_std);
  CHECK(after > before);
}

TEST_CASE("ppo rejects small batches and aborts on non-finite losses") {
  PolicyNet net = PolicyNet::create(3, 16);
  Rng rng(1);
  auto small = synthetic_batch(net, rng, 32);
  std::vector<double> a32(32, 0.0);
  OptimState opt = OptimState::for_size(net.parameter_count(), 3e-4, 100, 0.5);
  CHECK_THROWS_AS(ppo_update(small, a32, a32, net, opt, single_step_ppo(), rng), Error);

  auto batch = synthetic_batch(net, rng, 64);
  std::vector<double> adv(64, 0.5), ret(64, 0.0);
  adv[7] = NAN;
  const Eigen::VectorXd before = net.parameters();
  const PpoDiagnostics d = ppo_update(batch, adv, ret, net, opt, single_step_ppo(), rng);
  CHECK(d.aborted);
  CHECK(net.parameters() == before);
  CHECK(opt.step == 0);
}

TEST_CASE("belief update with alpha 0 follows the supervised gradient") {
  const auto eps = belief_fixture();
  BeliefUpdateReport rep;
  BeliefUpdateConfig cfg;
  belief_reinforce_update(eps, InferenceParams{}, 0.0, 1.0, cfg, &rep);
  for (int k = 0; k < 4; ++k) CHECK(rep.combined[static_cast<std::size_t>(k)] == rep.grad_supervised[static_cast<std::size_t>(k)]);

  auto zero_adv = eps;
  for (auto& e : zero_adv) std::fill(e.advantages.begin(), e.advantages.end(), 0.0);
  belief_reinforce_update(zero_adv, InferenceParams{}, 0.6, 1.0, cfg, &rep);
  for (int k = 0; k < 4; ++k) {
    CHECK(rep.grad_rl[static_cast<std::size_t>(k)] == 0.0);
    CHECK(rep.combined[static_cast<std::size_t>(k)] == doctest::Approx(0.4 * rep.grad_supervised[static_cast<std::size_t>(k)]));
  }
}

TEST_CASE("confidence scaling of the belief update") {
  const auto eps = belief_fixture();
  BeliefUpdateConfig cfg;
  BeliefUpdateReport rep;
  belief_reinforce_update(eps, InferenceParams{}, 0.5, 0.4, cfg, &rep);
  CHECK(rep.confidence_scale == doctest::Approx(0.5));
  CHECK(rep.applied_norm == doctest::Approx(0.5 * rep.unscaled_norm));
  for (double p_max : {0.1, 0.3, 0.5, 0.79, 0.8, 0.9, 1.0}) {
    belief_reinforce_update(eps, InferenceParams{}, 0.5, p_max, cfg, &rep);
    CHECK(rep.applied_norm <= rep.unscaled_norm + 1e-15);
    if (p_max >= 0.8) {
      CHECK(rep.applied_norm == rep.unscaled_norm);
    } else {
      CHECK(rep.applied_norm < rep.unscaled_norm);
    }
    CHECK(rep.unscaled_norm <= cfg.lr * cfg.c_clip + 1e-12);
  }
}

TEST_CASE("belief update clamps and renormalizes") {
  const auto eps = belief_fixture();
  BeliefUpdateConfig cfg;
  cfg.lr = 50.0;
  InferenceParams p;
  p.beta = 49.9;
  p.temperature = 0.51;
  BeliefUpdateReport rep;
  const InferenceParams out = belief_reinforce_update(eps, p, 0.0, 1.0, cfg, &rep);
  CHECK(rep.clamp_warnings > 0);
  CHECK(out.beta >= cfg.beta_min);
  CHECK(out.beta <= cfg.beta_max);
  CHECK(out.temperature >= cfg.tau_min);
  CHECK(out.temperature <= cfg.tau_max);
  CHECK(out.w_theta + out.w_d == doctest::Approx(1.0).epsilon(1e-15));
  out.validate();
}

TEST_CASE("curriculum and schedules") {
  const auto c = default_curriculum();
  REQUIRE(c.size() == 5);
  CHECK(c[0].min_episodes == 100);
  CHECK(c[0].success_threshold == 0.80);
  CHECK(c[1].collision_cap == 0.15);
  CHECK(c[3].success_threshold == 0.65);
  CHECK(c[4].plateau_window == 200);

  TrainConfig cfg;
  CHECK(alpha_at(cfg, 0, 1000) == 0.0);
  CHECK(alpha_at(cfg, 300, 1000) == doctest::Approx(0.4));
  CHECK(alpha_at(cfg, 600, 1000) == doctest::Approx(0.8));
  CHECK(alpha_at(cfg, 999, 1000) == doctest::Approx(0.8));
  double prev = 1e9;
  for (int s = 1; s <= 5; ++s) {
    CHECK(tau_cap(cfg, s) <= prev);
    CHECK(tau_cap(cfg, s) >= cfg.tau_min);
    prev = tau_cap(cfg, s);
  }
  CHECK(tau_cap(cfg, 1) == 2.0);
  CHECK(tau_cap(cfg, 5) == 0.5);
}

TEST_CASE("train config parsing and validation") {
  const TrainConfig t = TrainConfig::from_config(
      Config::parse("[train]\nmode = baseline_frozen_belief\nbelief_input = map\n[ppo]\nbatch = 128\n[reward]\nw_auto = 0\n"));
  CHECK(t.mode == TrainMode::kBaselineFrozenBelief);
  CHECK(t.belief_input == BeliefInput::kMapOneHot);
  CHECK(t.ppo.batch == 128);
  CHECK(t.reward.w_auto == 0.0);
  TrainConfig bad;
  bad.ppo.clip = 1.5;
  CHECK_THROWS_AS(bad.validate(), Error);
  bad = TrainConfig{};
  bad.curriculum = false;
  CHECK_THROWS_AS(bad.validate(), Error);
  CHECK_THROWS_AS(belief_input_from_string("partial"), Error);
  CHECK_THROWS_AS(train_mode_from_string("warm"), Error);
}

TEST_CASE("short training runs are deterministic and keep their invariants") {
  const TrainConfig cfg = small_config(60);
  std::ostringstream log_a, log_b;
  const TrainResult a = run_training(cfg, 5, &log_a);
  const TrainResult b = run_training(cfg, 5, &log_b);
  CHECK(log_a.str() == log_b.str());
  CHECK(checkpoint_to_string(a.checkpoint) == checkpoint_to_string(b.checkpoint));
  CHECK(a.log.size() == 60);
  CHECK(a.checkpoint.meta.at("mode") == "end_to_end");

  int stage = 0;
  double tau = 1e9;
  bool updated = false;
  std::istringstream lines(log_a.str());
  std::string line;
  for (const auto& l : a.log) {
    REQUIRE(std::getline(lines, line));
    const auto j = nlohmann::json::parse(line);
    CHECK(j["episode"] == l.episode);
    CHECK(l.stage >= stage);
    stage = l.stage;
    CHECK(l.phi.temperature <= tau);
    CHECK(l.phi.temperature >= cfg.tau_min);
    tau = l.phi.temperature;
    const double terms = l.reward.collision + l.reward.proximity + l.reward.far + l.reward.progress +
                         l.reward.autonomy + l.reward.goal;
    CHECK(l.total_reward == doctest::Approx(terms).epsilon(1e-9));
    CHECK(l.mean_gamma > 0.0);
    CHECK(l.mean_gamma < 1.0);
    if (l.ppo) updated = true;
  }
  CHECK(updated);
  const TrainResult other = run_training(cfg, 6);
  CHECK(checkpoint_to_string(other.checkpoint) != checkpoint_to_string(a.checkpoint));
}

TEST_CASE("frozen-belief training keeps the warm-start parameters") {
  TrainConfig cfg = small_config(40);
  cfg.mode = TrainMode::kBaselineFrozenBelief;
  const TrainResult r = run_training(cfg, 3);
  CHECK(r.checkpoint.inference.beta == r.warm_start.params.beta);
  CHECK(r.checkpoint.inference.temperature == r.warm_start.params.temperature);
  for (const auto& l : r.log) CHECK(l.phi.beta == r.warm_start.params.beta);
}

TEST_CASE("stage-one training clears its success criterion") {
  TrainConfig cfg;
  cfg.max_stage = 1;
  cfg.episode_budget = 200;
  const TrainResult r = run_training(cfg, 11);
  int ok = 0;
  for (std::size_t i = 100; i < r.log.size(); ++i) ok += r.log[i].success ? 1 : 0;
  CHECK(r.final_stage == 1);
  CHECK(ok > 80);
}

TEST_CASE("an unreachable threshold stalls the curriculum") {
  TrainConfig cfg = small_config(0);
  cfg.stages[0].min_episodes = 10;
  cfg.stages[0].success_threshold = 1.0;
  cfg.stall_factor = 2;
  const TrainResult r = run_training(cfg, 2);
  CHECK(r.stalled);
  CHECK(r.log.size() == 20);
  CHECK(r.stall_message.find("curriculum stall: stage 1") == 0);
  CHECK(r.checkpoint.meta.at("stalled") == "true");
}
