#ifndef BRACE_PILOT_HPP_
#define BRACE_PILOT_HPP_

#include <cstdint>
#include <deque>
#include <span>
#include <vector>

#include "brace/belief.hpp"
#include "brace/config.hpp"
#include "brace/env.hpp"

namespace brace {

struct PilotConfig {
  double noise_amplitude = 0.032;  // fraction of the straight start->goal length
  double ar_coefficient = 0.5;
  double via_point_gain = 1.3;
  double clearance = 15.0;
  int reaction_delay = 0;  // steps
  std::uint64_t rng_seed = 0;
  // Converts the amplitude (a fraction of the whole trajectory) to a per-step
  // RMS displacement: rms = noise_amplitude * length * noise_step_scale.
  double noise_step_scale = 0.2;
  double switch_radius = 15.0;  // a via point counts as reached inside this radius
  double homing_gain = 0.15;    // speed per unit distance once the bell profile has elapsed
  double v_max = 10.0;

  void validate() const;
  static PilotConfig from_config(const Config& cfg);
};

struct PilotState {
  Vec2 noise_memory;
  std::vector<Vec2> planned_via_points;  // final entry is the goal centre
  int current_target_index = 0;

  // Bell-profile clock for the current segment.
  int segment_clock = 0;
  int segment_duration = 1;
  double segment_length = 0.0;

  double trajectory_length = 0.0;
  std::vector<Vec2> white_noise;  // pre-drawn per episode so paired runs share it
  std::size_t noise_index = 0;
  std::deque<Vec2> perceived;  // cursor history for the reaction delay
  Vec2 last_noise;
  Vec2 last_deterministic;
};

// Via points around blocking obstacles from the cursor to `goal`; empty when
// the straight segment clears everything by cfg.clearance.
std::vector<Vec2> plan_via_points(const EnvState& state, const Goal& goal, const PilotConfig& cfg,
                                  const Workspace& ws);

// True when segment a->b keeps at least `clearance` from every obstacle disc.
bool segment_clear(const Vec2& a, const Vec2& b, std::span<const Obstacle> obstacles,
                   double clearance);

PilotState init_pilot(const EnvState& state, const PilotConfig& cfg, const Workspace& ws,
                      int max_steps, std::uint64_t episode_seed);

// Advances the pilot one step and returns its input, |h| <= v_max.
Vec2 pilot_action(const EnvState& state, PilotState& pilot, const PilotConfig& cfg);

// Environment plus initialised pilot. Layouts the pilot cannot plan through
// are redrawn from mix_seed(seed, attempt) so every caller sees the same
// episode for the same seed.
struct PilotEpisode {
  EnvState state;
  PilotState pilot;
  std::uint64_t seed = 0;  // seed the layout and noise were drawn from
  int rerolls = 0;
};

inline constexpr int kMaxLayoutRerolls = 32;

PilotEpisode pilot_episode(std::uint64_t seed, Stage stage, const PilotConfig& cfg, const EnvConfig& env);

// y[n] = a*y[n-1] + (1-a)*x[n], y[-1] = 0.
std::vector<double> ar1_filter(std::span<const double> x, double a);

// Order-sensitive 64-bit digest of the white-noise stream.
std::uint64_t noise_checksum(const PilotState& pilot);

// Runs the pilot alone (gamma = 0) on generated environments and records
// labelled trajectories. Stages rotate over the multi-goal stages 3, 4, 5.
std::vector<CalibrationTrajectory> generate_dataset(int n_trajectories, const PilotConfig& cfg,
                                                    std::uint64_t seed, const EnvConfig& env = {});

}  // namespace brace

#endif  // BRACE_PILOT_HPP_
