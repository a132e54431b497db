#include "brace/env.hpp"

#include <cmath>
#include <cstdio>
#include <limits>
#include <map>
#include <sstream>

#include <json.hpp>

#include "brace/error.hpp"
#include "brace/rng.hpp"

namespace brace {
namespace {

struct StageLayout {
  int goals = 1;
  int obstacles = 0;
  bool clustered = false;  // all bearings inside cluster_angle_deg
  bool ambiguous = false;  // at least one pair inside ambiguity_angle_deg
  bool passage = false;
};

StageLayout layout_for(Stage stage) {
  switch (stage) {
    case Stage::kBasic: return {1, 0, false, false, false};
    case Stage::kAvoidance: return {1, 2, false, false, false};
    case Stage::kObstacles: return {2, 4, false, false, false};
    case Stage::kAmbiguity: return {3, 3, true, false, false};
    case Stage::kFullComplexity: return {3, 5, false, true, true};
  }
  return {};
}

double deg_to_rad(double deg) { return deg * kPi / 180.0; }

// Counts which constraint rejected the most candidates, for the error message.
class RejectionTally {
 public:
  void add(const std::string& name) { ++counts_[name]; }
  std::string worst() const {
    std::string best = "unknown";
    int most = -1;
    for (const auto& [name, n] : counts_) {
      if (n > most) {
        most = n;
        best = name;
      }
    }
    return best;
  }

 private:
  std::map<std::string, int> counts_;
};

std::vector<Goal> sample_goals(Rng& rng, const StageLayout& layout, const EnvConfig& cfg,
                               RejectionTally& tally) {
  const Workspace& ws = cfg.workspace;
  const double x_lo = std::max(cfg.goal_region_min_x, ws.margin);
  const double x_hi = ws.width - ws.margin;
  const double y_lo = ws.margin;
  const double y_hi = ws.height - ws.margin;
  if (x_lo >= x_hi || y_lo >= y_hi) {
    throw Error(ErrorCode::kGenerationInfeasible,
                "generation infeasible: goal region is empty (goal_region_min_x/margin)");
  }

  for (int attempt = 0; attempt < cfg.max_placement_attempts; ++attempt) {
    std::vector<Goal> goals;
    bool ok = true;
    for (int k = 0; k < layout.goals && ok; ++k) {
      bool placed = false;
      for (int inner = 0; inner < cfg.max_placement_attempts; ++inner) {
        Vec2 p{rng.uniform(x_lo, x_hi), rng.uniform(y_lo, y_hi)};
        if (distance(p, cfg.start) < cfg.min_start_goal_distance) {
          tally.add("min_start_goal_distance");
          continue;
        }
        bool separated = true;
        for (const auto& g : goals) {
          if (distance(p, g.position) < cfg.min_goal_separation) separated = false;
        }
        if (!separated) {
          tally.add("min_goal_separation");
          continue;
        }
        goals.push_back({k, p, cfg.goal_radius});
        placed = true;
        break;
      }
      ok = placed;
    }
    if (!ok) continue;

    // Each start->goal segment must pass clear of every other goal.
    bool paths_clear = true;
    for (const auto& a : goals) {
      for (const auto& b : goals) {
        if (a.id == b.id) continue;
        if (point_segment_distance(b.position, cfg.start, a.position) < cfg.goal_path_clearance) {
          paths_clear = false;
        }
      }
    }
    if (!paths_clear) {
      tally.add("goal_path_clearance");
      continue;
    }

    if (layout.clustered) {
      const double window = deg_to_rad(cfg.cluster_angle_deg);
      bool inside = true;
      for (std::size_t i = 0; i < goals.size(); ++i) {
        for (std::size_t j = i + 1; j < goals.size(); ++j) {
          if (bearing_separation(cfg.start, goals[i].position, goals[j].position) > window) {
            inside = false;
          }
        }
      }
      if (!inside) {
        tally.add("cluster_angle");
        continue;
      }
    }
    if (layout.ambiguous) {
      const double window = deg_to_rad(cfg.ambiguity_angle_deg);
      bool pair = false;
      for (std::size_t i = 0; i < goals.size(); ++i) {
        for (std::size_t j = i + 1; j < goals.size(); ++j) {
          if (bearing_separation(cfg.start, goals[i].position, goals[j].position) <= window) {
            pair = true;
          }
        }
      }
      if (!pair) {
        tally.add("ambiguity_angle");
        continue;
      }
    }
    return goals;
  }
  throw Error(ErrorCode::kGenerationInfeasible,
              "generation infeasible: goal placement violated " + tally.worst());
}

// Name of the first violated constraint, or empty when the obstacle fits.
std::string obstacle_violation(const Obstacle& o, const std::vector<Obstacle>& placed,
                               const std::vector<Goal>& goals, const EnvConfig& cfg) {
  const Workspace& ws = cfg.workspace;
  if (o.position.x < o.radius || o.position.x > ws.width - o.radius ||
      o.position.y < o.radius || o.position.y > ws.height - o.radius) {
    return "workspace_bounds";
  }
  for (const auto& g : goals) {
    if (distance(o.position, g.position) - o.radius - g.radius < cfg.obstacle_goal_clearance) {
      return "obstacle_goal_clearance";
    }
  }
  if (distance(o.position, cfg.start) - o.radius < cfg.obstacle_goal_clearance) {
    return "obstacle_start_clearance";
  }
  for (const auto& other : placed) {
    const double gap = distance(o.position, other.position) - o.radius - other.radius;
    if (gap < cfg.min_obstacle_gap) return "obstacle_gap";
  }
  return {};
}

Vec2 unit_perpendicular(const Vec2& dir) {
  const double n = dir.norm();
  return Vec2{-dir.y, dir.x} / n;
}

}  // namespace

Stage stage_from_int(int stage) {
  if (stage < 1 || stage > 5) {
    throw Error(ErrorCode::kInvalidArgument, "stage must be in 1..5, got " + std::to_string(stage));
  }
  return static_cast<Stage>(stage);
}

EnvConfig EnvConfig::from_config(const Config& c) {
  EnvConfig e;
  e.workspace.width = c.get_double("env.width", e.workspace.width);
  e.workspace.height = c.get_double("env.height", e.workspace.height);
  e.workspace.margin = c.get_double("env.margin", e.workspace.margin);
  e.v_max = c.get_double("env.v_max", e.v_max);
  e.max_steps = c.get_int("env.max_steps", e.max_steps);
  e.goal_radius = c.get_double("env.goal_radius", e.goal_radius);
  e.obstacle_radius_min = c.get_double("env.obstacle_radius_min", e.obstacle_radius_min);
  e.obstacle_radius_max = c.get_double("env.obstacle_radius_max", e.obstacle_radius_max);
  e.min_goal_separation = c.get_double("env.min_goal_separation", e.min_goal_separation);
  e.d_safe = c.get_double("env.d_safe", e.d_safe);
  e.start.x = c.get_double("env.start_x", e.start.x);
  e.start.y = c.get_double("env.start_y", e.start.y);
  e.min_start_goal_distance = c.get_double("env.min_start_goal_distance", e.min_start_goal_distance);
  e.goal_region_min_x = c.get_double("env.goal_region_min_x", e.goal_region_min_x);
  e.obstacle_goal_clearance = c.get_double("env.obstacle_goal_clearance", e.obstacle_goal_clearance);
  e.min_obstacle_gap = c.get_double("env.min_obstacle_gap", e.min_obstacle_gap);
  e.goal_path_clearance = c.get_double("env.goal_path_clearance", e.goal_path_clearance);
  e.passage_gap_factor = c.get_double("env.passage_gap_factor", e.passage_gap_factor);
  e.cluster_angle_deg = c.get_double("env.cluster_angle_deg", e.cluster_angle_deg);
  e.ambiguity_angle_deg = c.get_double("env.ambiguity_angle_deg", e.ambiguity_angle_deg);
  e.strict_collision = c.get_bool("env.strict_collision", e.strict_collision);
  e.max_placement_attempts = c.get_int("env.max_placement_attempts", e.max_placement_attempts);

  const Workspace& ws = e.workspace;
  if (!(ws.width > 0.0) || !(ws.height > 0.0)) {
    throw Error(ErrorCode::kInvalidArgument, "workspace width and height must be positive");
  }
  if (ws.margin < 0.0 || ws.margin >= std::min(ws.width, ws.height) / 2.0) {
    throw Error(ErrorCode::kInvalidArgument, "workspace margin out of range");
  }
  if (!(e.v_max > 0.0) || e.max_steps < 1 || !(e.goal_radius > 0.0) || !(e.d_safe > 0.0)) {
    throw Error(ErrorCode::kInvalidArgument, "env scalars must be positive");
  }
  if (!(e.obstacle_radius_min > 0.0) || e.obstacle_radius_max < e.obstacle_radius_min) {
    throw Error(ErrorCode::kInvalidArgument, "obstacle radius range invalid");
  }
  return e;
}

double bearing_separation(const Vec2& from, const Vec2& g1, const Vec2& g2) {
  return std::abs(wrap_angle(heading(g1 - from) - heading(g2 - from)));
}

namespace {

EnvState try_generate(Rng& rng, const StageLayout& layout, const EnvConfig& cfg,
                      RejectionTally& tally) {
  EnvState state;
  state.start = cfg.start;
  state.cursor = cfg.start;
  state.goals = sample_goals(rng, layout, cfg, tally);

  int remaining = layout.obstacles;
  if (layout.passage) {
    // Two discs straddling one goal line with a fixed surface gap.
    const double gap = cfg.passage_gap_factor * cfg.v_max;
    bool placed = false;
    for (int attempt = 0; attempt < cfg.max_placement_attempts && !placed; ++attempt) {
      const auto& g = state.goals[static_cast<std::size_t>(
          rng.uniform_int(0, static_cast<int>(state.goals.size()) - 1))];
      const double t = rng.uniform(0.35, 0.65);
      const double ra = rng.uniform(cfg.obstacle_radius_min, cfg.obstacle_radius_max);
      const double rb = rng.uniform(cfg.obstacle_radius_min, cfg.obstacle_radius_max);
      const Vec2 dir = g.position - cfg.start;
      const Vec2 n = unit_perpendicular(dir);
      const Vec2 mid = cfg.start + dir * t;
      Obstacle a{mid + n * (ra + gap / 2.0), ra};
      Obstacle b{mid - n * (rb + gap / 2.0), rb};
      std::string why = obstacle_violation(a, state.obstacles, state.goals, cfg);
      if (why.empty()) why = obstacle_violation(b, state.obstacles, state.goals, cfg);
      if (!why.empty()) {
        tally.add(why);
        continue;
      }
      state.obstacles.push_back(a);
      state.obstacles.push_back(b);
      placed = true;
    }
    if (!placed) {
      throw Error(ErrorCode::kGenerationInfeasible,
                  "generation infeasible: narrow passage placement violated " + tally.worst());
    }
    remaining -= 2;
  }

  for (int k = 0; k < remaining; ++k) {
    const auto& g = state.goals[static_cast<std::size_t>(k) % state.goals.size()];
    bool placed = false;
    for (int attempt = 0; attempt < cfg.max_placement_attempts && !placed; ++attempt) {
      const double t = rng.uniform(0.3, 0.7);
      const double r = rng.uniform(cfg.obstacle_radius_min, cfg.obstacle_radius_max);
      const double offset = rng.uniform(-0.6, 0.6) * r;
      const Vec2 dir = g.position - cfg.start;
      Obstacle o{cfg.start + dir * t + unit_perpendicular(dir) * offset, r};
      const std::string why = obstacle_violation(o, state.obstacles, state.goals, cfg);
      if (!why.empty()) {
        tally.add(why);
        continue;
      }
      state.obstacles.push_back(o);
      placed = true;
    }
    if (!placed) {
      throw Error(ErrorCode::kGenerationInfeasible,
                  "generation infeasible: obstacle placement violated " + tally.worst());
    }
  }

  state.true_goal_id = rng.uniform_int(0, static_cast<int>(state.goals.size()) - 1);
  return state;
}

}  // namespace

EnvState generate_environment(std::uint64_t seed, Stage stage, const EnvConfig& cfg) {
  Rng rng(mix_seed(seed, static_cast<std::uint64_t>(to_int(stage))));
  const StageLayout layout = layout_for(stage);
  RejectionTally tally;
  // Obstacles may not fit around a particular goal layout; redraw everything.
  constexpr int kLayoutAttempts = 50;
  for (int attempt = 1;; ++attempt) {
    try {
      return try_generate(rng, layout, cfg, tally);
    } catch (const Error& e) {
      if (e.code() != ErrorCode::kGenerationInfeasible || attempt == kLayoutAttempts) throw;
    }
  }
}

Vec2 blend(const Vec2& human_action, const Vec2& expert_action, double gamma) {
  return human_action * (1.0 - gamma) + expert_action * gamma;
}

bool segment_enters_disc(const Vec2& a, const Vec2& b, const Vec2& center, double radius) {
  const double start2 = (a - center).squared_norm();
  if (start2 < radius * radius) return false;  // already inside
  const double reach = radius + (b - a).norm();
  if (start2 > reach * reach) return false;
  return point_segment_distance(center, a, b) < radius;
}

std::pair<EnvState, StepOutcome> step(const EnvState& state, const Vec2& human_action,
                                      const Vec2& expert_action, double gamma,
                                      const EnvConfig& cfg) {
  if (!human_action.finite() || !expert_action.finite() || !std::isfinite(gamma)) {
    throw Error(ErrorCode::kInvalidAction, "invalid action: non-finite component");
  }
  const double limit = cfg.v_max * (1.0 + 1e-9);
  if (human_action.norm() > limit || expert_action.norm() > limit) {
    throw Error(ErrorCode::kInvalidAction, "invalid action: magnitude exceeds v_max");
  }
  if (gamma < 0.0 || gamma > 1.0) {
    throw Error(ErrorCode::kInvalidAction, "invalid action: gamma outside [0, 1]");
  }

  EnvState next = state;
  const Vec2 before = state.cursor;
  const Vec2 after = cfg.workspace.clamp(before + blend(human_action, expert_action, gamma));
  next.cursor = after;
  next.cursor_velocity = after - before;
  next.step_index = state.step_index + 1;

  StepOutcome out;
  for (const auto& o : state.obstacles) {
    if (segment_enters_disc(before, after, o.position, o.radius)) out.collision = true;
  }
  for (const auto& g : state.goals) {
    if (distance(after, g.position) <= g.radius) {
      out.reached_goal_id = g.id;
      break;
    }
  }
  if (out.collision) out.reached_goal_id.reset();  // ties resolve to the collision

  const Vec2 target = state.true_goal().position;
  out.distance_delta_to_true_goal = distance(before, target) - distance(after, target);
  out.success = out.reached_goal_id && *out.reached_goal_id == state.true_goal_id;
  out.done = out.success || next.step_index >= cfg.max_steps ||
             (cfg.strict_collision && out.collision);
  return {next, out};
}

double nearest_obstacle_distance(const Vec2& p, std::span<const Obstacle> obstacles) {
  double best = kNoObstacleDistance;
  for (const auto& o : obstacles) {
    best = std::min(best, std::max(0.0, distance(p, o.position) - o.radius));
  }
  return best;
}

ContextFeatures context_features(const EnvState& state, const EnvConfig& cfg) {
  ContextFeatures f;
  f.nearest_obstacle_distance = nearest_obstacle_distance(state.cursor, state.obstacles);
  f.constraint_severity = std::clamp(1.0 - f.nearest_obstacle_distance / cfg.d_safe, 0.0, 1.0);
  f.per_goal_distances.reserve(state.goals.size());
  for (const auto& g : state.goals) f.per_goal_distances.push_back(distance(state.cursor, g.position));
  return f;
}

Observation padded_observation(const EnvState& state, const Vec2& human_action,
                               const EnvConfig& cfg) {
  if (state.goals.empty() || state.goals.size() > 3) {
    throw Error(ErrorCode::kObservationLayoutMismatch,
                "observation layout mismatch: expected 1..3 goals, got " +
                    std::to_string(state.goals.size()));
  }
  const Workspace& ws = cfg.workspace;
  const double diag = ws.diagonal();
  const ContextFeatures f = context_features(state, cfg);
  Observation obs{};
  obs[0] = 2.0 * state.cursor.x / ws.width - 1.0;
  obs[1] = 2.0 * state.cursor.y / ws.height - 1.0;
  obs[2] = human_action.x / cfg.v_max;
  obs[3] = human_action.y / cfg.v_max;
  for (std::size_t i = 0; i < 3; ++i) {
    obs[4 + i] = i < f.per_goal_distances.size() ? f.per_goal_distances[i] / diag : 1.0;
  }
  obs[7] = std::min(f.nearest_obstacle_distance, diag) / diag;
  obs[8] = f.constraint_severity;
  obs[9] = static_cast<double>(state.step_index) / cfg.max_steps;
  return obs;
}

Observation observation_vector(const EnvState& state, const Vec2& human_action,
                               const EnvConfig& cfg) {
  if (state.goals.size() != 3) {
    throw Error(ErrorCode::kObservationLayoutMismatch,
                "observation layout mismatch: expected 3 goals, got " +
                    std::to_string(state.goals.size()));
  }
  return padded_observation(state, human_action, cfg);
}

std::string serialize(const EnvState& s) {
  std::ostringstream out;
  char buf[64];
  auto put = [&](double v) {
    std::snprintf(buf, sizeof buf, "%a", v);
    out << buf << ' ';
  };
  out << "step " << s.step_index << " true " << s.true_goal_id << '\n';
  out << "cursor ";
  put(s.cursor.x);
  put(s.cursor.y);
  put(s.cursor_velocity.x);
  put(s.cursor_velocity.y);
  out << "\nstart ";
  put(s.start.x);
  put(s.start.y);
  out << '\n';
  for (const auto& g : s.goals) {
    out << "goal " << g.id << ' ';
    put(g.position.x);
    put(g.position.y);
    put(g.radius);
    out << '\n';
  }
  for (const auto& o : s.obstacles) {
    out << "obstacle ";
    put(o.position.x);
    put(o.position.y);
    put(o.radius);
    out << '\n';
  }
  return out.str();
}

void write_trajectory_record(std::ostream& out, const TrajectoryRecord& rec) {
  nlohmann::json j;
  j["step"] = rec.step;
  j["cursor"] = {rec.cursor.x, rec.cursor.y};
  j["human"] = {rec.human_action.x, rec.human_action.y};
  j["expert"] = {rec.expert_action.x, rec.expert_action.y};
  j["gamma"] = rec.gamma;
  j["reward"] = rec.reward;
  j["belief"] = rec.belief;
  out << j.dump() << '\n';
}

}  // namespace brace
