#ifndef BRACE_BELIEF_HPP_
#define BRACE_BELIEF_HPP_

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "brace/config.hpp"
#include "brace/env.hpp"
#include "brace/geometry.hpp"

namespace brace {

struct InferenceParams {
  double beta = 10.0;
  double w_theta = 0.7;
  double w_d = 0.3;
  double ema_decay = 0.85;
  double temperature = 1.0;
  double d_slow = 100.0;
  double v_max = 10.0;
  double eps_mag = 0.1;

  // Rescales w_theta + w_d to 1. Both weights are kept non-negative.
  void renormalize();
  // Throws kInvalidArgument when an invariant fails.
  void validate() const;

  static InferenceParams from_config(const Config& cfg);
};

struct BeliefState {
  std::vector<double> probs;
  std::vector<double> raw_log_scores;
  double entropy = 0.0;
  double p_max = 0.0;
  int map_goal_id = 0;
  bool warning = false;  // last update had no finite cost and was skipped
};

BeliefState uniform_belief(std::size_t n_goals);
// Recomputes entropy, p_max and the MAP index (lowest index on ties).
void refresh_summaries(BeliefState& b);
double entropy_of(std::span<const double> p);
int argmax_lowest(std::span<const double> p);

// Radians in [0, pi]. Throws kDegenerateDirection for a zero input or when
// `from` coincides with `goal`.
double angular_deviation(const Vec2& h, const Vec2& from, const Vec2& goal);
double optimal_magnitude(double dist, const InferenceParams& params);
double distance_deviation(const Vec2& h, const Vec2& from, const Vec2& goal,
                          const InferenceParams& params);
// Zero input or a cursor sitting on the goal centre uses a deviation of pi/2.
double input_cost(const Vec2& h, const Vec2& from, const Vec2& goal,
                  const InferenceParams& params);

BeliefState update_belief(const BeliefState& prev, const Vec2& cursor, std::span<const Goal> goals,
                          const Vec2& h, const InferenceParams& params);
BeliefState update_belief(const BeliefState& prev, const EnvState& state, const Vec2& h,
                          const InferenceParams& params);

// Softmax of scores / temperature.
std::vector<double> tempered_softmax(std::span<const double> scores, double temperature);

// Angular and magnitude deviations only depend on geometry, so they are
// cached once per step and replayed under different (beta, w, tau).
struct DeviationStep {
  std::vector<double> theta_dev;
  std::vector<double> d_dev;
};
using DeviationTrace = std::vector<DeviationStep>;

DeviationStep deviations(const Vec2& cursor, std::span<const Goal> goals, const Vec2& h,
                         const InferenceParams& params);
// Belief after each step of the trace (same arithmetic as update_belief).
std::vector<BeliefState> replay(const DeviationTrace& trace, std::size_t n_goals,
                                const InferenceParams& params);

// Calibration data: one labelled trajectory per record.
struct CalibrationTrajectory {
  int goal = 0;
  std::vector<Goal> goals;
  std::vector<Obstacle> obstacles;
  std::vector<Vec2> positions;  // cursor before each input
  std::vector<Vec2> inputs;     // human input at that position
};

std::string to_ndjson(const CalibrationTrajectory& t);
CalibrationTrajectory trajectory_from_ndjson(const std::string& line);
void write_dataset(const std::filesystem::path& path, const std::vector<CalibrationTrajectory>& data);
std::vector<CalibrationTrajectory> read_dataset(const std::filesystem::path& path);

DeviationTrace trace_of(const CalibrationTrajectory& t, const InferenceParams& params);

// Step index at which the realized path length first reaches `fraction` of
// its final value.
std::size_t completion_index(std::span<const Vec2> positions, double fraction);

struct CalibrationReport {
  InferenceParams params;
  double train_log_likelihood = 0.0;
  double validation_log_likelihood = 0.0;
  std::array<double, 3> accuracy{};  // at 25, 50, 75 percent path completion (test split)
  std::size_t n_train = 0;
  std::size_t n_validation = 0;
  std::size_t n_test = 0;
};

inline constexpr std::size_t kMinCalibrationTrajectories = 50;

// Mean log b_t(true goal) over all steps of all trajectories.
double mean_log_likelihood(std::span<const DeviationTrace> traces, std::span<const int> labels,
                           std::span<const std::size_t> n_goals, const InferenceParams& params);

// Belief accuracy (MAP == label) at the given path-completion fractions.
std::array<double, 3> accuracy_at_completion(std::span<const CalibrationTrajectory> data,
                                             const InferenceParams& params);

// Grid over beta and w_theta, coordinate-descent refinement, then the
// temperature is fitted on the validation split. Split is 60/20/20 in order.
CalibrationReport calibrate(const std::vector<CalibrationTrajectory>& data,
                            const InferenceParams& base = {});

}  // namespace brace

#endif  // BRACE_BELIEF_HPP_
