#ifndef BRACE_TRAINER_HPP_
#define BRACE_TRAINER_HPP_

#include <array>
#include <cstdint>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "brace/belief.hpp"
#include "brace/config.hpp"
#include "brace/env.hpp"
#include "brace/expert.hpp"
#include "brace/neural.hpp"
#include "brace/pilot.hpp"

namespace brace {

struct RewardWeights {
  double w_coll = 10.0;
  double w_prox = 2.5;
  double w_far = 1.5;
  double w_prog = 3.0;
  double w_auto = 1.5;
  double w_goal = 2.0;
  double near_threshold = 100.0;  // distance to the MAP goal
  double far_threshold = 250.0;
  // Progress is measured in units of this length (one full-speed step).
  double progress_unit = 10.0;

  void validate() const;
  static RewardWeights from_config(const Config& cfg);
};

struct RewardContext {
  bool collision = false;
  double gamma = 0.0;
  double p_max = 0.0;
  double p_true = 0.0;
  double distance_to_map_goal = 0.0;
  double progress = 0.0;  // d_{t-1} - d_t to the true goal, length units
};

struct RewardBreakdown {
  double collision = 0.0;
  double proximity = 0.0;
  double far = 0.0;
  double progress = 0.0;
  double autonomy = 0.0;
  double goal = 0.0;

  double total() const { return collision + proximity + far + progress + autonomy + goal; }
};

inline constexpr double kMinGoalProbability = 1e-6;

RewardBreakdown step_reward(const RewardContext& ctx, const RewardWeights& w);

// What the policy sees of the belief.
enum class BeliefInput { kFull, kUniform, kMapOneHot };

BeliefInput belief_input_from_string(const std::string& name);
std::string to_string(BeliefInput mode);

// Observation (10, padded to three goal slots) + belief over three slots
// (absent goals read 0) + entropy in nats.
PolicyInput policy_input(const EnvState& state, const Vec2& human_action, const BeliefState& belief,
                         BeliefInput mode, const EnvConfig& env);

struct Transition {
  PolicyInput input{};
  std::vector<double> belief;
  double gamma = 0.5;
  double action = 0.0;  // pre-tanh sample u; gamma = (tanh(u) + 1) / 2
  double log_prob = 0.0;
  double value = 0.0;
  double reward = 0.0;
  bool done = false;
  PolicyInput next_input{};
  std::vector<double> next_belief;
  int true_goal_id = 0;
  double p_max = 0.0;
};

double gaussian_log_prob(double u, double mu, double log_std);

struct GaeResult {
  std::vector<double> advantages;
  std::vector<double> returns;
};

// Generalized advantage estimation over one contiguous trajectory. A done
// flag cuts the bootstrap; the value after the final transition is
// `bootstrap_value` unless that transition is done.
GaeResult compute_gae(std::span<const Transition> traj, double discount, double lambda,
                      double bootstrap_value = 0.0);

// Zero mean and unit variance (left unchanged when the spread is zero).
void normalize_advantages(std::vector<double>& adv);

struct PpoConfig {
  double clip = 0.2;
  double gae_lambda = 0.95;
  double discount = 0.99;
  int batch = 1024;
  int epochs = 4;
  int minibatches = 4;
  double value_coef = 0.5;
  double entropy_coef = 0.01;
  double lr = 3e-4;
  long lr_period = 6000;  // optimizer steps over which the cosine decays
  double max_grad_norm = 0.5;
  double log_std_min = -3.0;
  double log_std_max = 0.5;

  void validate() const;
};

struct PpoDiagnostics {
  double actor_loss = 0.0;
  double value_loss = 0.0;
  double entropy = 0.0;
  double clip_fraction = 0.0;
  double approx_kl = 0.0;
  int updates = 0;
  bool aborted = false;  // non-finite loss; parameters left as they were
};

PpoDiagnostics ppo_update(std::span<const Transition> batch, std::span<const double> advantages,
                          std::span<const double> returns, PolicyNet& net, OptimState& opt,
                          const PpoConfig& cfg, Rng& rng);

// Data from one episode needed to re-score the inference parameters.
struct BeliefEpisode {
  DeviationTrace trace;
  std::size_t n_goals = 0;
  int true_goal = 0;
  std::vector<int> map_goals;       // goal the expert was conditioned on at each step
  std::vector<double> advantages;   // per step, aligned with the trace
};

struct BeliefUpdateConfig {
  double lr = 0.05;
  double fd_eps = 1e-4;
  double c_confidence = 0.8;
  double c_clip = 1.0;
  double beta_min = 0.5;
  double beta_max = 50.0;
  double w_min = 0.02;
  double tau_min = 0.5;
  double tau_max = 5.0;
};

struct BeliefUpdateReport {
  // Gradients in coordinates (log beta, w_theta, w_d, log tau).
  std::array<double, 4> grad_rl{};
  std::array<double, 4> grad_supervised{};
  std::array<double, 4> combined{};
  double confidence_scale = 1.0;
  double unscaled_norm = 0.0;
  double applied_norm = 0.0;
  int clamp_warnings = 0;
};

// Score-function objective: L_RL = -mean_t A_t log b_t(map_t); supervised
// objective: L_sup = -mean_t log b_t(true goal). Both differentiated by central
// differences. The mixed gradient alpha g_RL + (1 - alpha) g_sup is clipped to
// c_clip, scaled by min(1, p_max / c_confidence), then applied.
InferenceParams belief_reinforce_update(std::span<const BeliefEpisode> episodes,
                                        const InferenceParams& params, double alpha, double p_max,
                                        const BeliefUpdateConfig& cfg,
                                        BeliefUpdateReport* report = nullptr);

struct CurriculumStage {
  int stage_id = 1;
  int min_episodes = 100;
  double success_threshold = 0.8;
  double collision_cap = -1.0;  // fraction of episodes with a collision; < 0 disables
  int plateau_window = 0;       // final stage: stop once success stops improving
};

std::vector<CurriculumStage> default_curriculum();

enum class TrainMode { kBaselineFrozenBelief, kEndToEnd };

TrainMode train_mode_from_string(const std::string& name);
std::string to_string(TrainMode mode);

struct TrainConfig {
  TrainMode mode = TrainMode::kEndToEnd;
  BeliefInput belief_input = BeliefInput::kFull;
  bool curriculum = true;
  int episode_budget = 0;  // 0: run the curriculum to completion
  int max_stage = 5;
  int stall_factor = 5;
  int warm_start_episodes = 15;
  int trajectories_per_warm_start_episode = 10;
  double alpha_start = 0.0;
  double alpha_end = 0.8;
  double alpha_anneal_fraction = 0.6;
  // Episode count the alpha schedule is laid over when no budget is set.
  int alpha_horizon_episodes = 2000;
  double tau0 = 2.0;
  double tau_min = 0.5;
  double tau_decay = 0.7;  // per stage
  int hidden = 256;
  PpoConfig ppo;
  BeliefUpdateConfig belief_update;
  RewardWeights reward;
  EnvConfig env;
  PilotConfig pilot;
  ExpertConfig expert;
  InferenceParams inference;
  std::vector<CurriculumStage> stages = default_curriculum();

  void validate() const;
  static TrainConfig from_config(const Config& cfg);
};

double alpha_at(const TrainConfig& cfg, int episode, int horizon);
double tau_cap(const TrainConfig& cfg, int stage);

struct EpisodeLog {
  int episode = 0;
  int stage = 1;
  bool success = false;
  int collisions = 0;
  int steps = 0;
  double path_efficiency = 0.0;
  double mean_gamma = 0.0;
  double belief_accuracy = 0.0;  // fraction of steps with MAP == true goal
  double total_reward = 0.0;
  RewardBreakdown reward;
  std::optional<PpoDiagnostics> ppo;
  InferenceParams phi;
  double alpha = 0.0;
};

std::string to_ndjson(const EpisodeLog& log);

struct TrainResult {
  Checkpoint checkpoint;
  std::vector<EpisodeLog> log;
  int final_stage = 1;
  bool stalled = false;
  std::string stall_message;
  std::vector<std::string> quarantined;  // episodes whose update hit a non-finite loss
  int clamp_warnings = 0;
  CalibrationReport warm_start;
};

// Warm start, curriculum loop, PPO and (end_to_end) belief updates. Writes one
// log line per episode to `log_out` when given. Deterministic for a fixed seed.
TrainResult run_training(const TrainConfig& cfg, std::uint64_t seed, std::ostream* log_out = nullptr);

}  // namespace brace

#endif  // BRACE_TRAINER_HPP_
