#ifndef BRACE_EXPERT_HPP_
#define BRACE_EXPERT_HPP_

#include <cstdint>
#include <deque>
#include <optional>
#include <string>
#include <vector>

#include "brace/config.hpp"
#include "brace/env.hpp"
#include "brace/rng.hpp"

namespace brace {

enum class ExpertMode { kFull, kHorizonLimited, kDelayed, kRandomPerturbed };

ExpertMode expert_mode_from_string(const std::string& name);
std::string to_string(ExpertMode mode);

struct ExpertConfig {
  ExpertMode mode = ExpertMode::kFull;
  int horizon = 5;
  int delay = 5;
  double perturb_sigma = 16.0;  // per-axis standard deviation, action units
  int directions = 16;
  int magnitudes = 3;  // fractions k/magnitudes of v_max, k = magnitudes..1
  std::uint64_t seed = 0;
  // Adds the repulsion term summed along the straight line from the rollout
  // end to the goal, standing in for the reward left beyond the horizon.
  bool tail_estimate = true;

  void validate() const;
  static ExpertConfig from_config(const Config& cfg);
};

// Stream id for an episode's expert perturbation seed.
inline constexpr std::uint64_t kExpertMemoryStream = 0x45585054ULL;

// Per-episode history: previous heading for the smoothness term, the delay
// line, and the perturbation stream.
struct ExpertMemory {
  std::optional<double> prev_heading;
  std::deque<Vec2> delay_line;
  Rng rng;

  explicit ExpertMemory(std::uint64_t seed = 0) : rng(seed) {}
};

struct ExpertRewardTerms {
  double progress = 0.0;
  double smoothness = 0.0;
  double repulsion = 0.0;
  double total() const { return progress + smoothness + repulsion; }
};

// 3.0 * (d_{t-1} - d_t) / d_max - 0.8 * dtheta^2 - 2.5 * exp(-min_obstacle_distance / d_safe),
// evaluated at the position reached by `action` from `from`. A zero action or a
// missing previous heading contributes no smoothness penalty.
ExpertRewardTerms expert_reward_terms(const Vec2& from, const Vec2& action, const Goal& goal,
                                      std::optional<double> prev_heading,
                                      std::span<const Obstacle> obstacles, const EnvConfig& env);
double expert_reward(const EnvState& state, const Vec2& action, const Goal& goal,
                     std::optional<double> prev_heading, const EnvConfig& env = {});

// Candidate k: direction index k / magnitudes relative to the goal bearing,
// magnitude index k % magnitudes (largest first). Candidate 0 points at the goal
// at full speed.
std::vector<Vec2> candidate_actions(const Vec2& from, const Goal& goal, const ExpertConfig& cfg,
                                    double v_max);

// Repulsion summed at v_max spacing from `from` to the goal disc boundary.
double straight_tail_value(const Vec2& from, const Goal& goal, std::span<const Obstacle> obstacles,
                           const EnvConfig& env);

// Receding-horizon argmax with greedy continuation; ignores the mode.
Vec2 full_expert_action(const EnvState& state, const Goal& goal, int horizon,
                        const ExpertConfig& cfg, std::optional<double> prev_heading,
                        const EnvConfig& env);

Vec2 expert_action(const EnvState& state, const Goal& goal, const ExpertConfig& cfg,
                   ExpertMemory& memory, const EnvConfig& env = {});

// Expert acting alone (gamma = 1) conditioned on the true goal; true on success
// (true goal reached with no collision).
bool run_expert_episode(std::uint64_t seed, Stage stage, const ExpertConfig& cfg,
                        const EnvConfig& env = {}, int* collisions = nullptr);

}  // namespace brace

#endif  // BRACE_EXPERT_HPP_
