#ifndef BRACE_ENV_HPP_
#define BRACE_ENV_HPP_

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "brace/config.hpp"
#include "brace/geometry.hpp"

namespace brace {

struct Workspace {
  double width = 800.0;
  double height = 600.0;
  double margin = 50.0;  // goal placement inset

  double diagonal() const { return std::hypot(width, height); }
  Vec2 center() const { return {width / 2.0, height / 2.0}; }
  Vec2 clamp(const Vec2& p) const {
    return {std::clamp(p.x, 0.0, width), std::clamp(p.y, 0.0, height)};
  }
  bool contains(const Vec2& p) const {
    return p.x >= 0.0 && p.x <= width && p.y >= 0.0 && p.y <= height;
  }
};

struct Goal {
  int id = 0;
  Vec2 position;
  double radius = 20.0;
};

struct Obstacle {
  Vec2 position;
  double radius = 30.0;
};

// Curriculum difficulty. The numeric value is the stage index 1..5.
enum class Stage : int {
  kBasic = 1,          // 1 goal, no obstacles
  kAvoidance = 2,      // 1 goal, 2 obstacles
  kObstacles = 3,      // 2 goals, 4 obstacles
  kAmbiguity = 4,      // 3 goals clustered within 45 degrees, 3 obstacles
  kFullComplexity = 5  // 3 goals, 5 obstacles including a narrow passage
};

Stage stage_from_int(int stage);
inline int to_int(Stage s) { return static_cast<int>(s); }

struct EnvConfig {
  Workspace workspace;
  double v_max = 10.0;
  int max_steps = 300;
  double goal_radius = 20.0;
  double obstacle_radius_min = 25.0;
  double obstacle_radius_max = 45.0;
  double min_goal_separation = 100.0;
  double d_safe = 120.0;
  Vec2 start{100.0, 300.0};
  double min_start_goal_distance = 300.0;
  double goal_region_min_x = 400.0;
  // Minimum surface gap between an obstacle and any goal disc or the start.
  double obstacle_goal_clearance = 30.0;
  // Minimum surface gap between two obstacles (the narrow passage excepted).
  double min_obstacle_gap = 40.0;
  // Other goals must stay this far from each start->goal segment.
  double goal_path_clearance = 40.0;
  double passage_gap_factor = 2.2;  // narrow passage gap in multiples of v_max
  double cluster_angle_deg = 45.0;
  double ambiguity_angle_deg = 30.0;
  bool strict_collision = false;
  int max_placement_attempts = 400;

  static EnvConfig from_config(const Config& cfg);
};

struct EnvState {
  Vec2 cursor;
  Vec2 cursor_velocity;
  std::vector<Goal> goals;
  std::vector<Obstacle> obstacles;
  int step_index = 0;
  int true_goal_id = 0;  // hidden from the policy
  Vec2 start;

  const Goal& true_goal() const { return goals.at(static_cast<std::size_t>(true_goal_id)); }
};

struct StepOutcome {
  bool collision = false;
  std::optional<int> reached_goal_id;
  double distance_delta_to_true_goal = 0.0;  // d_{t-1} - d_t, positive when approaching
  bool success = false;
  bool done = false;
};

// Sentinel reported as the obstacle distance when no obstacles exist.
inline constexpr double kNoObstacleDistance = 1.0e9;

struct ContextFeatures {
  double nearest_obstacle_distance = kNoObstacleDistance;  // to the obstacle surface
  double constraint_severity = 0.0;
  std::vector<double> per_goal_distances;
};

inline constexpr int kObservationSize = 10;
using Observation = std::array<double, kObservationSize>;

EnvState generate_environment(std::uint64_t seed, Stage stage, const EnvConfig& cfg = {});

// Executed displacement before clamping: (1 - gamma) h + gamma w.
Vec2 blend(const Vec2& human_action, const Vec2& expert_action, double gamma);

std::pair<EnvState, StepOutcome> step(const EnvState& state, const Vec2& human_action,
                                      const Vec2& expert_action, double gamma,
                                      const EnvConfig& cfg = {});

double nearest_obstacle_distance(const Vec2& p, std::span<const Obstacle> obstacles);
ContextFeatures context_features(const EnvState& state, const EnvConfig& cfg = {});

// Layout: [cursor x, cursor y, human dx, human dy, dist g1, dist g2, dist g3,
// nearest obstacle distance, constraint severity, step index / max_steps].
// Positions map to [-1, 1]; distances are divided by the workspace diagonal.
Observation observation_vector(const EnvState& state, const Vec2& human_action,
                               const EnvConfig& cfg = {});

// Same layout for one to three goals; absent goal slots read 1.0.
Observation padded_observation(const EnvState& state, const Vec2& human_action,
                               const EnvConfig& cfg = {});

// True when the segment a->b enters the disc from outside it.
bool segment_enters_disc(const Vec2& a, const Vec2& b, const Vec2& center, double radius);

// Smallest angle between two start->goal bearings, in radians.
double bearing_separation(const Vec2& from, const Vec2& g1, const Vec2& g2);

// Bit-exact text form (hex floats) of the full state.
std::string serialize(const EnvState& state);

// One newline-delimited JSON record per step.
struct TrajectoryRecord {
  int step = 0;
  Vec2 cursor;
  Vec2 human_action;
  Vec2 expert_action;
  double gamma = 0.0;
  double reward = 0.0;
  std::vector<double> belief;
};

void write_trajectory_record(std::ostream& out, const TrajectoryRecord& rec);

}  // namespace brace

#endif  // BRACE_ENV_HPP_
