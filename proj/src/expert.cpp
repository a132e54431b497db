#include "brace/expert.hpp"

#include <cmath>
#include <limits>

#include "brace/error.hpp"

namespace brace {
namespace {

// A segment no longer than `reach` cannot enter any disc whose surface is
// farther than that, so the per-candidate collision test can be skipped.
bool within_reach(const Vec2& from, std::span<const Obstacle> obstacles, double reach) {
  return nearest_obstacle_distance(from, obstacles) <= reach;
}

bool collides(const Vec2& from, const Vec2& to, std::span<const Obstacle> obstacles) {
  for (const auto& o : obstacles) {
    if (segment_enters_disc(from, to, o.position, o.radius)) return true;
  }
  return false;
}

struct Sim {
  std::span<const Obstacle> obstacles;
  const Goal& goal;
  const EnvConfig& env;
};

// Index of the best single-step candidate; colliding candidates are dropped
// unless every candidate collides.
std::size_t best_single_step(const Sim& sim, const Vec2& pos, const std::vector<Vec2>& cands,
                             std::optional<double> prev) {
  std::size_t best = 0;
  double best_v = -std::numeric_limits<double>::infinity();
  const bool check = within_reach(pos, sim.obstacles, sim.env.v_max);
  for (int pass = check ? 0 : 1; pass < 2; ++pass) {
    for (std::size_t k = 0; k < cands.size(); ++k) {
      const Vec2 next = sim.env.workspace.clamp(pos + cands[k]);
      if (pass == 0 && collides(pos, next, sim.obstacles)) continue;
      const double v =
          expert_reward_terms(pos, cands[k], sim.goal, prev, sim.obstacles, sim.env).total();
      if (v > best_v) {
        best_v = v;
        best = k;
      }
    }
    if (std::isfinite(best_v)) break;
  }
  return best;
}

double rollout(const Sim& sim, const Vec2& from, const Vec2& first, int horizon,
               std::optional<double> prev, const ExpertConfig& cfg) {
  double total = 0.0;
  Vec2 pos = from;
  Vec2 a = first;
  for (int h = 0; h < horizon; ++h) {
    if (h > 0) {
      const auto cands = candidate_actions(pos, sim.goal, cfg, sim.env.v_max);
      a = cands[best_single_step(sim, pos, cands, prev)];
    }
    total += expert_reward_terms(pos, a, sim.goal, prev, sim.obstacles, sim.env).total();
    if (a.norm() > 0.0) prev = heading(a);
    pos = sim.env.workspace.clamp(pos + a);
    if (distance(pos, sim.goal.position) <= sim.goal.radius) return total;
  }
  if (cfg.tail_estimate) total += straight_tail_value(pos, sim.goal, sim.obstacles, sim.env);
  return total;
}

}  // namespace

ExpertMode expert_mode_from_string(const std::string& name) {
  if (name == "full") return ExpertMode::kFull;
  if (name == "horizon_limited") return ExpertMode::kHorizonLimited;
  if (name == "delayed") return ExpertMode::kDelayed;
  if (name == "random_perturbed") return ExpertMode::kRandomPerturbed;
  throw Error(ErrorCode::kInvalidArgument, "unknown expert mode '" + name + "'");
}

std::string to_string(ExpertMode mode) {
  switch (mode) {
    case ExpertMode::kFull: return "full";
    case ExpertMode::kHorizonLimited: return "horizon_limited";
    case ExpertMode::kDelayed: return "delayed";
    case ExpertMode::kRandomPerturbed: return "random_perturbed";
  }
  return "full";
}

void ExpertConfig::validate() const {
  if (horizon < 1) throw Error(ErrorCode::kInvalidArgument, "expert horizon must be >= 1");
  if (delay < 0) throw Error(ErrorCode::kInvalidArgument, "expert delay must be >= 0");
  if (perturb_sigma < 0.0) throw Error(ErrorCode::kInvalidArgument, "perturb_sigma must be >= 0");
  if (directions < 1 || magnitudes < 1) {
    throw Error(ErrorCode::kInvalidArgument, "candidate grid must be non-empty");
  }
}

ExpertConfig ExpertConfig::from_config(const Config& c) {
  ExpertConfig e;
  e.mode = expert_mode_from_string(c.get_string("expert.mode", "full"));
  e.horizon = c.get_int("expert.horizon", e.horizon);
  e.delay = c.get_int("expert.delay", e.delay);
  e.perturb_sigma = c.get_double("expert.perturb_sigma", e.perturb_sigma);
  e.directions = c.get_int("expert.directions", e.directions);
  e.magnitudes = c.get_int("expert.magnitudes", e.magnitudes);
  e.tail_estimate = c.get_bool("expert.tail_estimate", e.tail_estimate);
  e.validate();
  return e;
}

ExpertRewardTerms expert_reward_terms(const Vec2& from, const Vec2& action, const Goal& goal,
                                      std::optional<double> prev_heading,
                                      std::span<const Obstacle> obstacles, const EnvConfig& env) {
  const Vec2 to = env.workspace.clamp(from + action);
  ExpertRewardTerms t;
  const double d_max = env.workspace.diagonal();
  t.progress = 3.0 * (distance(from, goal.position) - distance(to, goal.position)) / d_max;
  if (prev_heading && action.norm() > 0.0) {
    const double dtheta = wrap_angle(heading(action) - *prev_heading);
    t.smoothness = -0.8 * dtheta * dtheta;
  }
  t.repulsion = -2.5 * std::exp(-nearest_obstacle_distance(to, obstacles) / env.d_safe);
  return t;
}

double expert_reward(const EnvState& state, const Vec2& action, const Goal& goal,
                     std::optional<double> prev_heading, const EnvConfig& env) {
  return expert_reward_terms(state.cursor, action, goal, prev_heading, state.obstacles, env).total();
}

std::vector<Vec2> candidate_actions(const Vec2& from, const Goal& goal, const ExpertConfig& cfg,
                                    double v_max) {
  thread_local std::vector<Vec2> rotations;
  if (rotations.size() != static_cast<std::size_t>(cfg.directions)) {
    rotations.clear();
    for (int k = 0; k < cfg.directions; ++k) {
      const double angle = 2.0 * kPi * k / cfg.directions;
      rotations.push_back({std::cos(angle), std::sin(angle)});
    }
  }
  const Vec2 to_goal = goal.position - from;
  const double n = to_goal.norm();
  const Vec2 u = n > 0.0 ? to_goal / n : Vec2{1.0, 0.0};
  std::vector<Vec2> out;
  out.reserve(static_cast<std::size_t>(cfg.directions * cfg.magnitudes));
  for (const auto& r : rotations) {
    const Vec2 dir{u.x * r.x - u.y * r.y, u.x * r.y + u.y * r.x};
    for (int m = cfg.magnitudes; m >= 1; --m) out.push_back(dir * (v_max * m / cfg.magnitudes));
  }
  return out;
}

double straight_tail_value(const Vec2& from, const Goal& goal, std::span<const Obstacle> obstacles,
                           const EnvConfig& env) {
  const Vec2 to_goal = goal.position - from;
  const double remaining = to_goal.norm() - goal.radius;
  if (remaining <= 0.0) return 0.0;
  const Vec2 unit = to_goal / to_goal.norm();
  const int steps = static_cast<int>(std::ceil(remaining / env.v_max));
  double total = 0.0;
  for (int k = 1; k <= steps; ++k) {
    const Vec2 p = from + unit * std::min(remaining, k * env.v_max);
    total -= 2.5 * std::exp(-nearest_obstacle_distance(p, obstacles) / env.d_safe);
  }
  return total;
}

Vec2 full_expert_action(const EnvState& state, const Goal& goal, int horizon,
                        const ExpertConfig& cfg, std::optional<double> prev_heading,
                        const EnvConfig& env) {
  const Sim sim{state.obstacles, goal, env};
  const auto cands = candidate_actions(state.cursor, goal, cfg, env.v_max);
  std::size_t best = 0;
  double best_v = -std::numeric_limits<double>::infinity();
  const bool check = within_reach(state.cursor, state.obstacles, env.v_max);
  for (int pass = check ? 0 : 1; pass < 2; ++pass) {
    for (std::size_t k = 0; k < cands.size(); ++k) {
      const Vec2 next = env.workspace.clamp(state.cursor + cands[k]);
      if (pass == 0 && collides(state.cursor, next, state.obstacles)) continue;
      const double v = rollout(sim, state.cursor, cands[k], horizon, prev_heading, cfg);
      if (v > best_v) {
        best_v = v;
        best = k;
      }
    }
    if (std::isfinite(best_v)) break;
  }
  return cands[best];
}

Vec2 expert_action(const EnvState& state, const Goal& goal, const ExpertConfig& cfg,
                   ExpertMemory& memory, const EnvConfig& env) {
  const int horizon = cfg.mode == ExpertMode::kHorizonLimited ? 1 : cfg.horizon;
  const Vec2 a = full_expert_action(state, goal, horizon, cfg, memory.prev_heading, env);
  if (a.norm() > 0.0) memory.prev_heading = heading(a);

  switch (cfg.mode) {
    case ExpertMode::kFull:
    case ExpertMode::kHorizonLimited:
      return a;
    case ExpertMode::kDelayed: {
      memory.delay_line.push_back(a);
      if (memory.delay_line.size() > static_cast<std::size_t>(cfg.delay)) {
        const Vec2 old = memory.delay_line.front();
        memory.delay_line.pop_front();
        return old;
      }
      return {};
    }
    case ExpertMode::kRandomPerturbed: {
      const double nx = memory.rng.normal();
      const double ny = memory.rng.normal();
      return clip_norm(a + Vec2{nx, ny} * cfg.perturb_sigma, env.v_max);
    }
  }
  return a;
}

bool run_expert_episode(std::uint64_t seed, Stage stage, const ExpertConfig& cfg,
                        const EnvConfig& env, int* collisions) {
  EnvState s = generate_environment(seed, stage, env);
  ExpertMemory memory(mix_seed(seed, kExpertMemoryStream));
  int hits = 0;
  bool success = false;
  for (;;) {
    const Vec2 w = expert_action(s, s.true_goal(), cfg, memory, env);
    auto [next, out] = step(s, Vec2{}, w, 1.0, env);
    s = std::move(next);
    if (out.collision) ++hits;
    if (out.done) {
      success = out.success;
      break;
    }
  }
  if (collisions) *collisions = hits;
  return success && hits == 0;
}

}  // namespace brace
