#ifndef BRACE_EVALBENCH_HPP_
#define BRACE_EVALBENCH_HPP_

#include <array>
#include <cstdint>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "brace/belief.hpp"
#include "brace/env.hpp"
#include "brace/expert.hpp"
#include "brace/neural.hpp"
#include "brace/pilot.hpp"
#include "brace/trainer.hpp"

namespace brace {

enum class ConditionKind { kNoAssist, kFixedGamma, kMapSequential, kUniformPrior, kBrace };

std::string to_string(ConditionKind kind);
ConditionKind condition_kind_from_string(const std::string& name);

struct Condition {
  ConditionKind kind = ConditionKind::kNoAssist;
  std::string label;        // defaults to the kind name
  double fixed_gamma = 0.0;  // kFixedGamma only
  // Policy and inference parameters for the learned conditions.
  std::optional<Checkpoint> checkpoint;
  BeliefInput belief_input = BeliefInput::kFull;
  // Inference parameters for the belief-driven expert when no checkpoint is set.
  InferenceParams inference;

  std::string name() const { return label.empty() ? to_string(kind) : label; }
  bool needs_checkpoint() const;
  void validate() const;

  static Condition no_assist();
  static Condition fixed(double gamma);
  static Condition brace(Checkpoint ckpt);
  // Same policy architecture fed one-hot MAP beliefs.
  static Condition map_sequential(Checkpoint ckpt);
  static Condition uniform_prior(Checkpoint ckpt);
};

// Belief tracking plus the policy's deterministic assistance level
// gamma = (tanh(mu) + 1) / 2. Shared by the batch suite and live sessions.
class Assistant {
 public:
  Assistant(const Condition& cond, std::size_t n_goals);

  struct Decision {
    double gamma = 0.0;
    int map_goal = 0;
  };
  Decision decide(const EnvState& state, const Vec2& human_action, const EnvConfig& env);
  // The two halves of decide(): belief update, then the condition's gamma.
  void observe(const EnvState& state, const Vec2& human_action);
  Decision current(const EnvState& state, const Vec2& human_action, const EnvConfig& env) const;
  const BeliefState& belief() const { return belief_; }
  const InferenceParams& params() const { return params_; }

 private:
  const Condition* cond_;
  InferenceParams params_;
  BeliefState belief_;
};

struct EpisodeSpec {
  std::uint64_t seed = 0;
  Stage stage = Stage::kBasic;
};

// `n` episodes cycling through `stages`, seeds derived from `seed`.
std::vector<EpisodeSpec> paired_suite(std::uint64_t seed, int n, const std::vector<int>& stages);

struct EpisodeMetrics {
  std::string condition;
  std::uint64_t seed = 0;
  int stage = 1;
  int n_goals = 1;
  bool success = false;
  bool reached_true_goal = false;
  int steps = 0;
  int collisions = 0;
  double path_efficiency = 0.0;
  double throughput = 0.0;  // bits per step
  std::array<double, 4> gamma_by_quartile{};
  std::array<bool, 3> belief_accuracy{};  // at 25, 50, 75 percent of path length
  double mean_gamma = 0.0;
  double first_quartile_entropy = 0.0;
  double gamma_near_sum = 0.0;  // steps within d_safe of an obstacle surface
  int gamma_near_count = 0;
  double gamma_far_sum = 0.0;
  int gamma_far_count = 0;
  std::uint64_t noise_checksum = 0;
  bool aborted = false;  // live trial ended by a disconnect
};

struct StepTrace {
  Vec2 cursor;
  Vec2 human_action;
  Vec2 expert_action;
  double gamma = 0.0;
  std::vector<double> belief;
  double obstacle_distance = 0.0;
  double true_goal_distance = 0.0;  // to the goal centre, before the step
};

// Accumulates per-step data and reduces it to EpisodeMetrics.
class EpisodeRecorder {
 public:
  EpisodeRecorder(std::string condition, std::uint64_t seed, Stage stage, const EnvState& initial,
                  const EnvConfig& env);
  void record(const EnvState& before, double gamma, const BeliefState& belief, int map_goal,
              const EnvState& after, const StepOutcome& outcome);
  int steps() const { return static_cast<int>(gammas_.size()); }
  EpisodeMetrics finish(bool aborted = false) const;

 private:
  EpisodeMetrics m_;
  double d_safe_;
  Goal goal_;
  Vec2 start_;
  int true_goal_id_;
  std::vector<double> gammas_;
  std::vector<double> entropies_;
  std::vector<int> maps_;
  std::vector<double> cumulative_;
  double path_ = 0.0;
};

// Expert action for the decision's MAP goal; zero (and no expert call) when
// gamma is 0.
Vec2 assisting_expert_action(const EnvState& state, const Assistant::Decision& dec, const ExpertConfig& expert,
                             ExpertMemory& memory, const EnvConfig& env);

// Normalized device input in [-1, 1]^2 to an action with |h| <= v_max.
Vec2 input_to_action(const Vec2& input, double v_max);

EpisodeMetrics run_episode(const Condition& cond, const EpisodeSpec& spec, const EnvConfig& env,
                           const PilotConfig& pilot, const ExpertConfig& expert,
                           std::vector<StepTrace>* trace = nullptr);

// Same episode driven by a recorded normalized input stream (zero-order hold
// past its end) instead of the pilot. Returns the final state.
EnvState run_episode_from_inputs(const Condition& cond, const EpisodeSpec& spec, const EnvConfig& env,
                                 const ExpertConfig& expert, const std::vector<Vec2>& inputs,
                                 EpisodeMetrics* metrics = nullptr);

// Fitts index of difficulty log2(D / W + 1) over steps, W = 2 * goal radius.
double fitts_throughput(double distance, double goal_radius, int steps);

struct SuiteResult {
  std::vector<std::string> conditions;
  std::vector<std::vector<EpisodeMetrics>> episodes;  // [condition][episode]
  std::vector<std::string> notices;
  // True when every condition consumed the same pilot noise on every episode.
  bool paired = true;

  const std::vector<EpisodeMetrics>* find(const std::string& condition) const;
};

SuiteResult run_suite(const std::vector<Condition>& conditions, const std::vector<EpisodeSpec>& suite,
                      const EnvConfig& env, const PilotConfig& pilot, const ExpertConfig& expert);

struct MeanSd {
  double mean = 0.0;
  double sd = 0.0;
};

MeanSd mean_sd(const std::vector<double>& x);

struct Aggregate {
  std::string condition;
  int episodes = 0;
  MeanSd success;
  MeanSd steps;  // over successful episodes
  MeanSd path_efficiency;
  MeanSd throughput;
  MeanSd collisions;
  MeanSd mean_gamma;
  std::array<double, 3> belief_accuracy{};
};

Aggregate aggregate(const std::string& condition, const std::vector<EpisodeMetrics>& episodes);

void write_aggregate_csv(std::ostream& out, const std::vector<Aggregate>& rows);
std::string to_ndjson(const EpisodeMetrics& m);
// Empty when `line` is a well-formed per-episode record, else the first problem.
std::string validate_episode_record(const std::string& line);

struct BandRow {
  std::string band;  // "<0.5", "0.5-1.0", ">1.0"
  int episodes = 0;
  bool insufficient = false;
  double brace_steps = 0.0;
  double baseline_steps = 0.0;
  double improvement = 0.0;  // (baseline - brace) / baseline
};

// Band of a first-quartile entropy: [0, 0.5) low, [0.5, 1.0] mid, (1.0, inf) high.
int entropy_band(double entropy);

// Pairs episodes by index, bands them by BRACE's first-quartile entropy and
// compares mean completion steps over pairs where both succeeded.
std::vector<BandRow> stratify_by_uncertainty(const std::vector<EpisodeMetrics>& brace,
                                             const std::vector<EpisodeMetrics>& baseline,
                                             int min_band_size = 5);

struct DegradedRow {
  ExpertMode mode = ExpertMode::kFull;
  double expert_success = 0.0;
  double brace_success = 0.0;
  double delta = 0.0;  // brace - expert
};

std::vector<DegradedRow> degraded_expert_suite(const Checkpoint& brace, const std::vector<ExpertMode>& modes,
                                               const std::vector<EpisodeSpec>& suite, const EnvConfig& env,
                                               const PilotConfig& pilot, const ExpertConfig& base);

void write_degraded_csv(std::ostream& out, const std::vector<DegradedRow>& rows);
void write_bands_csv(std::ostream& out, const std::vector<BandRow>& rows);

struct AblationVariant {
  std::string name;  // "full" or the zeroed weight
  double final_success = 0.0;
  double mean_gamma = 0.0;
  double collisions = 0.0;
  std::vector<double> curve;  // success rate per window of training episodes
};

// Trains the full reward and each single-weight-zeroed variant at
// `budget_fraction` of `full_budget` episodes, then evaluates on `suite`.
std::vector<AblationVariant> reward_ablation(const TrainConfig& base, std::uint64_t seed, int full_budget,
                                             double budget_fraction, const std::vector<EpisodeSpec>& suite,
                                             int curve_window = 50);

// Figure series.
// gamma heat map: mean gamma over a (progress fraction, obstacle distance) grid.
struct HeatMap {
  std::vector<double> progress_edges;
  std::vector<double> distance_edges;
  std::vector<std::vector<double>> mean;  // [progress bin][distance bin], NaN when empty
  std::vector<std::vector<int>> count;
};

HeatMap gamma_heatmap(const std::vector<std::vector<StepTrace>>& traces, int progress_bins = 10,
                      int distance_bins = 8, double max_distance = 240.0);
void write_heatmap_csv(std::ostream& out, const HeatMap& h);

// Windowed success and reward from a training log.
void write_learning_curve_csv(std::ostream& out, const std::vector<EpisodeLog>& log, int window);

}  // namespace brace

#endif  // BRACE_EVALBENCH_HPP_
