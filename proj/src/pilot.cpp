#include "brace/pilot.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <limits>

#include "brace/error.hpp"
#include "brace/rng.hpp"

namespace brace {
namespace {

constexpr std::uint64_t kNoiseStream = 0x50494c4f54ULL;

void start_segment(PilotState& pilot, const Vec2& from, const PilotConfig& cfg) {
  const Vec2& target = pilot.planned_via_points[static_cast<std::size_t>(pilot.current_target_index)];
  pilot.segment_clock = 0;
  pilot.segment_length = distance(from, target);
  // The bell profile peaks at 1.875 L / D; choose D so that the peak is v_max.
  pilot.segment_duration =
      std::max(1, static_cast<int>(std::ceil(1.875 * pilot.segment_length / cfg.v_max)));
}

struct Blocker {
  std::size_t segment = 0;
  std::size_t obstacle = 0;
  bool found = false;
};

Blocker first_blocker(const std::vector<Vec2>& path, std::span<const Obstacle> obstacles,
                      double clearance) {
  for (std::size_t s = 0; s + 1 < path.size(); ++s) {
    const Vec2& a = path[s];
    const Vec2& b = path[s + 1];
    const Vec2 ab = b - a;
    const double len2 = ab.squared_norm();
    double earliest = std::numeric_limits<double>::infinity();
    Blocker hit;
    for (std::size_t k = 0; k < obstacles.size(); ++k) {
      const auto& o = obstacles[k];
      if (point_segment_distance(o.position, a, b) >= o.radius + clearance) continue;
      const double t = len2 > 0.0 ? dot(o.position - a, ab) / len2 : 0.0;
      if (t < earliest) {
        earliest = t;
        hit = {s, k, true};
      }
    }
    if (hit.found) return hit;
  }
  return {};
}

bool via_valid(const Vec2& v, std::span<const Obstacle> obstacles, double clearance,
               const Workspace& ws) {
  if (!ws.contains(v)) return false;
  for (const auto& o : obstacles) {
    if (distance(v, o.position) < o.radius + clearance) return false;
  }
  return true;
}

}  // namespace

void PilotConfig::validate() const {
  if (noise_amplitude < 0.0 || noise_amplitude > 0.1) {
    throw Error(ErrorCode::kInvalidArgument, "noise_amplitude must be in [0, 0.1]");
  }
  if (ar_coefficient < 0.0 || ar_coefficient >= 1.0) {
    throw Error(ErrorCode::kInvalidArgument, "ar_coefficient must be in [0, 1)");
  }
  if (reaction_delay < 0 || via_point_gain <= 0.0 || clearance < 0.0 || v_max <= 0.0) {
    throw Error(ErrorCode::kInvalidArgument, "pilot parameters out of range");
  }
}

PilotConfig PilotConfig::from_config(const Config& c) {
  PilotConfig p;
  p.noise_amplitude = c.get_double("pilot.noise_amplitude", p.noise_amplitude);
  p.ar_coefficient = c.get_double("pilot.ar_coefficient", p.ar_coefficient);
  p.via_point_gain = c.get_double("pilot.via_point_gain", p.via_point_gain);
  p.clearance = c.get_double("pilot.clearance", p.clearance);
  p.reaction_delay = c.get_int("pilot.reaction_delay", p.reaction_delay);
  p.rng_seed = static_cast<std::uint64_t>(c.get_int("pilot.rng_seed", 0));
  p.noise_step_scale = c.get_double("pilot.noise_step_scale", p.noise_step_scale);
  p.switch_radius = c.get_double("pilot.switch_radius", p.switch_radius);
  p.homing_gain = c.get_double("pilot.homing_gain", p.homing_gain);
  p.v_max = c.get_double("env.v_max", p.v_max);
  p.validate();
  return p;
}

bool segment_clear(const Vec2& a, const Vec2& b, std::span<const Obstacle> obstacles,
                   double clearance) {
  for (const auto& o : obstacles) {
    if (point_segment_distance(o.position, a, b) < o.radius + clearance) return false;
  }
  return true;
}

std::vector<Vec2> plan_via_points(const EnvState& state, const Goal& goal, const PilotConfig& cfg,
                                  const Workspace& ws) {
  std::vector<Vec2> path{state.cursor, goal.position};
  const std::span<const Obstacle> obstacles(state.obstacles);
  const int max_iter = 8 * (static_cast<int>(obstacles.size()) + 1);
  for (int iter = 0; iter < max_iter; ++iter) {
    const Blocker blk = first_blocker(path, obstacles, cfg.clearance);
    if (!blk.found) return {path.begin() + 1, path.end() - 1};

    const Vec2& a = path[blk.segment];
    const Vec2& b = path[blk.segment + 1];
    const Obstacle& o = obstacles[blk.obstacle];
    const Vec2 dir = b - a;
    const double len = dir.norm();
    if (len == 0.0) break;
    const Vec2 normal{-dir.y / len, dir.x / len};
    const Vec2 center = ws.center();

    bool inserted = false;
    for (double widen : {1.0, 1.5, 2.0}) {
      const double offset = (o.radius + cfg.clearance) * cfg.via_point_gain * widen;
      Vec2 cand[2] = {o.position + normal * offset, o.position - normal * offset};
      double added[2];
      for (int s = 0; s < 2; ++s) added[s] = distance(a, cand[s]) + distance(cand[s], b) - len;
      int first = 0;
      if (added[1] < added[0] - 1e-9) {
        first = 1;
      } else if (std::abs(added[1] - added[0]) <= 1e-9 &&
                 distance(cand[1], center) < distance(cand[0], center)) {
        first = 1;
      }
      for (int s : {first, 1 - first}) {
        if (via_valid(cand[s], obstacles, cfg.clearance, ws)) {
          path.insert(path.begin() + static_cast<std::ptrdiff_t>(blk.segment) + 1, cand[s]);
          inserted = true;
          break;
        }
      }
      if (inserted) break;
    }
    if (!inserted) {
      throw Error(ErrorCode::kPathPlanningFailed,
                  "path planning failed: no clear via point around obstacle " +
                      std::to_string(blk.obstacle));
    }
  }
  throw Error(ErrorCode::kPathPlanningFailed, "path planning failed: via point search did not converge");
}

PilotState init_pilot(const EnvState& state, const PilotConfig& cfg, const Workspace& ws,
                      int max_steps, std::uint64_t episode_seed) {
  PilotState p;
  const Goal& goal = state.true_goal();
  p.planned_via_points = plan_via_points(state, goal, cfg, ws);
  p.planned_via_points.push_back(goal.position);
  p.current_target_index = 0;
  p.trajectory_length = distance(state.cursor, goal.position);

  Rng rng(mix_seed(episode_seed ^ cfg.rng_seed, kNoiseStream));
  p.white_noise.resize(static_cast<std::size_t>(std::max(max_steps, 1)));
  for (auto& v : p.white_noise) {
    v.x = rng.normal();
    v.y = rng.normal();
  }
  start_segment(p, state.cursor, cfg);
  return p;
}

PilotEpisode pilot_episode(std::uint64_t seed, Stage stage, const PilotConfig& cfg, const EnvConfig& env) {
  PilotEpisode ep;
  ep.seed = seed;
  for (;;) {
    ep.state = generate_environment(ep.seed, stage, env);
    try {
      ep.pilot = init_pilot(ep.state, cfg, env.workspace, env.max_steps, ep.seed);
      return ep;
    } catch (const Error& e) {
      if (e.code() != ErrorCode::kPathPlanningFailed || ep.rerolls >= kMaxLayoutRerolls) throw;
    }
    ++ep.rerolls;
    ep.seed = mix_seed(seed, 0x5245524fULL + static_cast<std::uint64_t>(ep.rerolls));
  }
}

Vec2 pilot_action(const EnvState& state, PilotState& pilot, const PilotConfig& cfg) {
  pilot.perceived.push_back(state.cursor);
  while (pilot.perceived.size() > static_cast<std::size_t>(cfg.reaction_delay) + 1) {
    pilot.perceived.pop_front();
  }
  const Vec2 pos = pilot.perceived.front();

  const auto last = static_cast<int>(pilot.planned_via_points.size()) - 1;
  while (pilot.current_target_index < last) {
    const auto i = static_cast<std::size_t>(pilot.current_target_index);
    const bool reached = distance(pos, pilot.planned_via_points[i]) < cfg.switch_radius;
    const bool shortcut =
        segment_clear(pos, pilot.planned_via_points[i + 1], state.obstacles, cfg.clearance);
    if (!reached && !shortcut) break;
    ++pilot.current_target_index;
    start_segment(pilot, pos, cfg);
  }

  const Vec2& target = pilot.planned_via_points[static_cast<std::size_t>(pilot.current_target_index)];
  const Vec2 to_target = target - pos;
  const double r = to_target.norm();
  Vec2 det;
  if (r > 0.0) {
    const double D = pilot.segment_duration;
    const double tau = (pilot.segment_clock + 0.5) / D;
    double speed;
    if (tau < 1.0) {
      speed = pilot.segment_length / D * 30.0 * tau * tau * (1.0 - tau) * (1.0 - tau);
    } else {
      speed = cfg.homing_gain * r;
    }
    speed = std::min({speed, r, cfg.v_max});
    det = to_target * (speed / r);
  }
  ++pilot.segment_clock;
  pilot.last_deterministic = det;

  Vec2 noise;
  if (cfg.noise_amplitude > 0.0 && !pilot.white_noise.empty()) {
    const Vec2 x = pilot.white_noise[pilot.noise_index % pilot.white_noise.size()];
    ++pilot.noise_index;
    const double a = cfg.ar_coefficient;
    pilot.noise_memory = pilot.noise_memory * a + x * (1.0 - a);
    // Stationary std of y is sqrt((1-a)/(1+a)); rescale to unit variance first.
    const double unit = std::sqrt((1.0 + a) / (1.0 - a));
    noise = pilot.noise_memory * (unit * cfg.noise_amplitude * pilot.trajectory_length *
                                  cfg.noise_step_scale);
  }
  pilot.last_noise = noise;
  return clip_norm(det + noise, cfg.v_max);
}

std::vector<double> ar1_filter(std::span<const double> x, double a) {
  std::vector<double> y(x.size());
  double prev = 0.0;
  for (std::size_t n = 0; n < x.size(); ++n) {
    prev = a * prev + (1.0 - a) * x[n];
    y[n] = prev;
  }
  return y;
}

std::uint64_t noise_checksum(const PilotState& pilot) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  auto mix = [&h](double v) {
    std::uint64_t bits;
    std::memcpy(&bits, &v, sizeof bits);
    for (int i = 0; i < 8; ++i) {
      h ^= (bits >> (8 * i)) & 0xffU;
      h *= 0x100000001b3ULL;
    }
  };
  for (const auto& v : pilot.white_noise) {
    mix(v.x);
    mix(v.y);
  }
  return h;
}

std::vector<CalibrationTrajectory> generate_dataset(int n_trajectories, const PilotConfig& cfg,
                                                    std::uint64_t seed, const EnvConfig& env) {
  if (n_trajectories < 1) throw Error(ErrorCode::kInvalidArgument, "n_trajectories must be >= 1");
  static constexpr Stage kStages[] = {Stage::kObstacles, Stage::kAmbiguity, Stage::kFullComplexity};
  std::vector<CalibrationTrajectory> data;
  data.reserve(static_cast<std::size_t>(n_trajectories));
  for (int i = 0; i < n_trajectories; ++i) {
    PilotEpisode ep = pilot_episode(mix_seed(seed, static_cast<std::uint64_t>(i)), kStages[i % 3], cfg, env);
    EnvState& s = ep.state;
    PilotState& pilot = ep.pilot;
    CalibrationTrajectory t;
    t.goal = s.true_goal_id;
    t.goals = s.goals;
    t.obstacles = s.obstacles;
    bool done = false;
    while (!done) {
      const Vec2 h = pilot_action(s, pilot, cfg);
      t.positions.push_back(s.cursor);
      t.inputs.push_back(h);
      auto [next, out] = step(s, h, Vec2{}, 0.0, env);
      s = std::move(next);
      done = out.done;
    }
    data.push_back(std::move(t));
  }
  return data;
}

}  // namespace brace
