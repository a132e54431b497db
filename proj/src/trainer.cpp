#include "brace/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <sstream>

#include "brace/error.hpp"

namespace brace {
namespace {

constexpr std::uint64_t kInitStream = 0x494e4954ULL;
constexpr std::uint64_t kTrainStream = 0x5452414eULL;
constexpr std::uint64_t kEpisodeStream = 0x45504953ULL;
constexpr std::uint64_t kWarmStream = 0x5741524dULL;
constexpr double kHalfLog2Pi = 0.91893853320467274178;

using Coords = std::array<double, 4>;  // log beta, w_theta, w_d, log tau

Coords to_coords(const InferenceParams& p) {
  return {std::log(p.beta), p.w_theta, p.w_d, std::log(p.temperature)};
}

InferenceParams from_coords(const InferenceParams& base, const Coords& c) {
  InferenceParams p = base;
  p.beta = std::exp(c[0]);
  p.w_theta = c[1];
  p.w_d = c[2];
  p.temperature = std::exp(c[3]);
  return p;
}

struct BeliefLosses {
  double rl = 0.0;
  double supervised = 0.0;
};

BeliefLosses belief_losses(std::span<const BeliefEpisode> episodes, const InferenceParams& p) {
  BeliefLosses l;
  std::size_t n = 0;
  for (const auto& ep : episodes) {
    if (ep.n_goals < 2) continue;
    const auto beliefs = replay(ep.trace, ep.n_goals, p);
    for (std::size_t t = 0; t < beliefs.size(); ++t) {
      const auto& probs = beliefs[t].probs;
      const double lp_map = std::log(std::max(probs[static_cast<std::size_t>(ep.map_goals[t])], 1e-300));
      const double lp_true = std::log(std::max(probs[static_cast<std::size_t>(ep.true_goal)], 1e-300));
      l.rl -= ep.advantages[t] * lp_map;
      l.supervised -= lp_true;
      ++n;
    }
  }
  if (n > 0) {
    l.rl /= static_cast<double>(n);
    l.supervised /= static_cast<double>(n);
  }
  return l;
}

double norm4(const Coords& c) {
  return std::sqrt(c[0] * c[0] + c[1] * c[1] + c[2] * c[2] + c[3] * c[3]);
}

std::string num(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.9g", v);
  return buf;
}

double path_efficiency(double straight, double realized) {
  if (straight <= 0.0) return 1.0;
  return straight / std::max(realized, straight);
}

}  // namespace

void RewardWeights::validate() const {
  for (double w : {w_coll, w_prox, w_far, w_prog, w_auto, w_goal}) {
    if (w < 0.0) throw Error(ErrorCode::kInvalidArgument, "reward weights must be >= 0");
  }
  if (!(near_threshold < far_threshold)) {
    throw Error(ErrorCode::kInvalidArgument, "near_threshold must be below far_threshold");
  }
  if (!(progress_unit > 0.0)) throw Error(ErrorCode::kInvalidArgument, "progress_unit must be > 0");
}

RewardWeights RewardWeights::from_config(const Config& c) {
  RewardWeights w;
  w.w_coll = c.get_double("reward.w_coll", w.w_coll);
  w.w_prox = c.get_double("reward.w_prox", w.w_prox);
  w.w_far = c.get_double("reward.w_far", w.w_far);
  w.w_prog = c.get_double("reward.w_prog", w.w_prog);
  w.w_auto = c.get_double("reward.w_auto", w.w_auto);
  w.w_goal = c.get_double("reward.w_goal", w.w_goal);
  w.near_threshold = c.get_double("reward.near_threshold", w.near_threshold);
  w.far_threshold = c.get_double("reward.far_threshold", w.far_threshold);
  w.progress_unit = c.get_double("reward.progress_unit", c.get_double("env.v_max", w.progress_unit));
  w.validate();
  return w;
}

RewardBreakdown step_reward(const RewardContext& ctx, const RewardWeights& w) {
  RewardBreakdown r;
  r.collision = ctx.collision ? -w.w_coll : 0.0;
  r.proximity = ctx.distance_to_map_goal < w.near_threshold ? w.w_prox * ctx.gamma * ctx.p_max : 0.0;
  r.far = ctx.distance_to_map_goal > w.far_threshold ? -w.w_far * ctx.gamma : 0.0;
  r.progress = w.w_prog * ctx.p_max * ctx.progress / w.progress_unit;
  r.autonomy = -w.w_auto * ctx.gamma * ctx.gamma;
  r.goal = w.w_goal * std::log(std::max(ctx.p_true, kMinGoalProbability));
  return r;
}

BeliefInput belief_input_from_string(const std::string& name) {
  if (name == "full") return BeliefInput::kFull;
  if (name == "uniform") return BeliefInput::kUniform;
  if (name == "map") return BeliefInput::kMapOneHot;
  throw Error(ErrorCode::kInvalidArgument, "unknown belief input '" + name + "'");
}

std::string to_string(BeliefInput mode) {
  switch (mode) {
    case BeliefInput::kFull: return "full";
    case BeliefInput::kUniform: return "uniform";
    case BeliefInput::kMapOneHot: return "map";
  }
  return "full";
}

PolicyInput policy_input(const EnvState& state, const Vec2& human_action, const BeliefState& belief,
                         BeliefInput mode, const EnvConfig& env) {
  const Observation obs = padded_observation(state, human_action, env);
  PolicyInput in{};
  std::copy(obs.begin(), obs.end(), in.begin());
  const std::size_t n = belief.probs.size();
  double entropy = belief.entropy;
  for (std::size_t i = 0; i < 3 && i < n; ++i) {
    switch (mode) {
      case BeliefInput::kFull: in[kObservationSize + i] = belief.probs[i]; break;
      case BeliefInput::kUniform: in[kObservationSize + i] = 1.0 / static_cast<double>(n); break;
      case BeliefInput::kMapOneHot:
        in[kObservationSize + i] = static_cast<int>(i) == belief.map_goal_id ? 1.0 : 0.0;
        break;
    }
  }
  if (mode == BeliefInput::kUniform) entropy = std::log(static_cast<double>(n));
  if (mode == BeliefInput::kMapOneHot) entropy = 0.0;
  in[kObservationSize + 3] = entropy;
  return in;
}

double gaussian_log_prob(double u, double mu, double log_std) {
  const double z = (u - mu) * std::exp(-log_std);
  return -0.5 * z * z - log_std - kHalfLog2Pi;
}

GaeResult compute_gae(std::span<const Transition> traj, double discount, double lambda,
                      double bootstrap_value) {
  if (traj.empty()) throw Error(ErrorCode::kEmptyTrajectory, "empty trajectory");
  const std::size_t n = traj.size();
  GaeResult g;
  g.advantages.assign(n, 0.0);
  g.returns.assign(n, 0.0);
  double next_value = bootstrap_value;
  double running = 0.0;
  for (std::size_t i = n; i-- > 0;) {
    const Transition& t = traj[i];
    const double nv = t.done ? 0.0 : next_value;
    const double carry = t.done ? 0.0 : running;
    const double delta = t.reward + discount * nv - t.value;
    running = delta + discount * lambda * carry;
    g.advantages[i] = running;
    g.returns[i] = running + t.value;
    next_value = t.value;
  }
  return g;
}

void normalize_advantages(std::vector<double>& adv) {
  if (adv.empty()) return;
  const double n = static_cast<double>(adv.size());
  const double mean = std::accumulate(adv.begin(), adv.end(), 0.0) / n;
  double var = 0.0;
  for (double a : adv) var += (a - mean) * (a - mean);
  const double sd = std::sqrt(var / n);
  for (double& a : adv) a = sd > 1e-12 ? (a - mean) / sd : a - mean;
}

void PpoConfig::validate() const {
  if (!(clip > 0.0 && clip < 1.0)) throw Error(ErrorCode::kInvalidArgument, "ppo clip must be in (0,1)");
  if (!(discount > 0.0 && discount <= 1.0)) {
    throw Error(ErrorCode::kInvalidArgument, "discount must be in (0,1]");
  }
  if (!(gae_lambda >= 0.0 && gae_lambda <= 1.0)) {
    throw Error(ErrorCode::kInvalidArgument, "gae_lambda must be in [0,1]");
  }
  if (batch < 64 || epochs < 1 || minibatches < 1) {
    throw Error(ErrorCode::kInvalidArgument, "ppo batch must be >= 64 with >= 1 epoch");
  }
}

PpoDiagnostics ppo_update(std::span<const Transition> batch, std::span<const double> advantages,
                          std::span<const double> returns, PolicyNet& net, OptimState& opt,
                          const PpoConfig& cfg, Rng& rng) {
  if (batch.size() < 64) throw Error(ErrorCode::kInvalidArgument, "ppo batch must hold >= 64 samples");
  if (advantages.size() != batch.size() || returns.size() != batch.size()) {
    throw Error(ErrorCode::kShapeMismatch, "advantages/returns do not match the batch");
  }
  const PolicyNet before = net;
  const OptimState opt_before = opt;
  PpoDiagnostics d;
  std::vector<std::size_t> order(batch.size());
  std::iota(order.begin(), order.end(), 0);
  const std::size_t mb = (batch.size() + static_cast<std::size_t>(cfg.minibatches) - 1) /
                         static_cast<std::size_t>(cfg.minibatches);
  long clipped = 0;
  long counted = 0;

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng.engine());
    for (std::size_t start = 0; start < order.size(); start += mb) {
      const std::size_t m = std::min(mb, order.size() - start);
      Eigen::MatrixXd x(kPolicyInputSize, static_cast<Eigen::Index>(m));
      for (std::size_t j = 0; j < m; ++j) {
        const auto& in = batch[order[start + j]].input;
        for (int r = 0; r < kPolicyInputSize; ++r) x(r, static_cast<Eigen::Index>(j)) = in[static_cast<std::size_t>(r)];
      }
      const ForwardBatch fb = forward(net, x);
      const double sigma = std::exp(net.log_std);
      Eigen::RowVectorXd d_mu(static_cast<Eigen::Index>(m));
      Eigen::RowVectorXd d_value(static_cast<Eigen::Index>(m));
      double d_log_std = 0.0;
      double actor_loss = 0.0;
      double value_loss = 0.0;
      double kl = 0.0;
      for (std::size_t j = 0; j < m; ++j) {
        const auto k = static_cast<Eigen::Index>(j);
        const Transition& t = batch[order[start + j]];
        const double a = advantages[order[start + j]];
        const double mu = fb.mu[k];
        const double lp = gaussian_log_prob(t.action, mu, net.log_std);
        const double ratio = std::exp(lp - t.log_prob);
        const double clipped_ratio = std::clamp(ratio, 1.0 - cfg.clip, 1.0 + cfg.clip);
        const double unclipped_obj = ratio * a;
        const double clipped_obj = clipped_ratio * a;
        actor_loss -= std::min(unclipped_obj, clipped_obj);
        const bool active = unclipped_obj <= clipped_obj;
        if (!active) ++clipped;
        ++counted;
        // d(-ratio * A)/d(logp) = -ratio * A on the active branch.
        const double g_lp = active ? -ratio * a : 0.0;
        const double z = (t.action - mu) / sigma;
        d_mu[k] = g_lp * z / sigma;
        d_log_std += g_lp * (z * z - 1.0);
        const double err = fb.value[k] - returns[order[start + j]];
        value_loss += 0.5 * err * err;
        d_value[k] = cfg.value_coef * err;
        kl += t.log_prob - lp;
      }
      const double inv_m = 1.0 / static_cast<double>(m);
      const double entropy = net.log_std + 0.5 + kHalfLog2Pi;
      const double loss = (actor_loss + cfg.value_coef * value_loss) * inv_m - cfg.entropy_coef * entropy;
      if (!std::isfinite(loss)) {
        net = before;
        opt = opt_before;
        d.aborted = true;
        return d;
      }
      Eigen::VectorXd grad = backward_mu(net, fb.cache, d_mu * inv_m, d_value * inv_m);
      grad[grad.size() - 1] = d_log_std * inv_m - cfg.entropy_coef;
      const StepReport sr = optimizer_step(net, grad, opt);
      if (sr.skipped) {
        net = before;
        opt = opt_before;
        d.aborted = true;
        return d;
      }
      if (net.log_std < cfg.log_std_min || net.log_std > cfg.log_std_max) {
        Eigen::VectorXd p = net.parameters();
        p[p.size() - 1] = std::clamp(net.log_std, cfg.log_std_min, cfg.log_std_max);
        net.set_parameters(p);
      }
      d.actor_loss += actor_loss * inv_m;
      d.value_loss += value_loss * inv_m;
      d.entropy += entropy;
      d.approx_kl += kl * inv_m;
      ++d.updates;
    }
  }
  if (d.updates > 0) {
    const double u = d.updates;
    d.actor_loss /= u;
    d.value_loss /= u;
    d.entropy /= u;
    d.approx_kl /= u;
  }
  d.clip_fraction = counted > 0 ? static_cast<double>(clipped) / static_cast<double>(counted) : 0.0;
  return d;
}

InferenceParams belief_reinforce_update(std::span<const BeliefEpisode> episodes,
                                        const InferenceParams& params, double alpha, double p_max,
                                        const BeliefUpdateConfig& cfg, BeliefUpdateReport* report) {
  BeliefUpdateReport rep;
  const Coords c0 = to_coords(params);
  for (std::size_t k = 0; k < 4; ++k) {
    Coords plus = c0;
    Coords minus = c0;
    plus[k] += cfg.fd_eps;
    minus[k] -= cfg.fd_eps;
    const BeliefLosses lp = belief_losses(episodes, from_coords(params, plus));
    const BeliefLosses lm = belief_losses(episodes, from_coords(params, minus));
    rep.grad_rl[k] = (lp.rl - lm.rl) / (2.0 * cfg.fd_eps);
    rep.grad_supervised[k] = (lp.supervised - lm.supervised) / (2.0 * cfg.fd_eps);
    rep.combined[k] = alpha * rep.grad_rl[k] + (1.0 - alpha) * rep.grad_supervised[k];
  }

  // Clip first, then scale by confidence, so low confidence always shrinks
  // the step.
  const double n = norm4(rep.combined);
  const double clip = n > cfg.c_clip && n > 0.0 ? cfg.c_clip / n : 1.0;
  rep.confidence_scale = std::min(1.0, p_max / cfg.c_confidence);
  Coords step{};
  for (std::size_t k = 0; k < 4; ++k) step[k] = cfg.lr * clip * rep.combined[k];
  rep.unscaled_norm = norm4(step);
  for (auto& s : step) s *= rep.confidence_scale;
  rep.applied_norm = norm4(step);

  Coords c1 = c0;
  for (std::size_t k = 0; k < 4; ++k) c1[k] -= step[k];
  InferenceParams out = from_coords(params, c1);
  auto clamp_count = [&rep](double& v, double lo, double hi) {
    if (v < lo || v > hi) {
      ++rep.clamp_warnings;
      v = std::clamp(v, lo, hi);
    }
  };
  clamp_count(out.beta, cfg.beta_min, cfg.beta_max);
  clamp_count(out.w_theta, cfg.w_min, 1.0 - cfg.w_min);
  clamp_count(out.w_d, cfg.w_min, 1.0 - cfg.w_min);
  clamp_count(out.temperature, cfg.tau_min, cfg.tau_max);
  out.renormalize();
  if (report) *report = rep;
  return out;
}

std::vector<CurriculumStage> default_curriculum() {
  return {{1, 100, 0.80, -1.0, 0},
          {2, 200, 0.75, 0.15, 0},
          {3, 300, 0.70, -1.0, 0},
          {4, 400, 0.65, -1.0, 0},
          {5, 200, 0.0, -1.0, 200}};
}

TrainMode train_mode_from_string(const std::string& name) {
  if (name == "end_to_end") return TrainMode::kEndToEnd;
  if (name == "baseline_frozen_belief") return TrainMode::kBaselineFrozenBelief;
  throw Error(ErrorCode::kInvalidArgument, "unknown training mode '" + name + "'");
}

std::string to_string(TrainMode mode) {
  return mode == TrainMode::kEndToEnd ? "end_to_end" : "baseline_frozen_belief";
}

void TrainConfig::validate() const {
  ppo.validate();
  reward.validate();
  pilot.validate();
  expert.validate();
  inference.validate();
  if (max_stage < 1 || max_stage > 5) throw Error(ErrorCode::kInvalidArgument, "max_stage must be 1..5");
  if (episode_budget < 0 || warm_start_episodes < 0 || stall_factor < 1) {
    throw Error(ErrorCode::kInvalidArgument, "episode counts must be non-negative");
  }
  if (!curriculum && episode_budget == 0) {
    throw Error(ErrorCode::kInvalidArgument, "training without a curriculum needs an episode budget");
  }
  if (!(tau_min > 0.0 && tau0 >= tau_min && tau_decay > 0.0 && tau_decay <= 1.0)) {
    throw Error(ErrorCode::kInvalidArgument, "temperature schedule out of range");
  }
  if (stages.size() < static_cast<std::size_t>(max_stage)) {
    throw Error(ErrorCode::kInvalidArgument, "curriculum has fewer stages than max_stage");
  }
}

TrainConfig TrainConfig::from_config(const Config& c) {
  TrainConfig t;
  t.mode = train_mode_from_string(c.get_string("train.mode", to_string(t.mode)));
  t.belief_input = belief_input_from_string(c.get_string("train.belief_input", to_string(t.belief_input)));
  t.curriculum = c.get_bool("train.curriculum", t.curriculum);
  t.episode_budget = c.get_int("train.episode_budget", t.episode_budget);
  t.max_stage = c.get_int("train.max_stage", t.max_stage);
  t.stall_factor = c.get_int("train.stall_factor", t.stall_factor);
  t.warm_start_episodes = c.get_int("train.warm_start_episodes", t.warm_start_episodes);
  t.trajectories_per_warm_start_episode =
      c.get_int("train.trajectories_per_warm_start_episode", t.trajectories_per_warm_start_episode);
  t.alpha_start = c.get_double("train.alpha_start", t.alpha_start);
  t.alpha_end = c.get_double("train.alpha_end", t.alpha_end);
  t.alpha_anneal_fraction = c.get_double("train.alpha_anneal_fraction", t.alpha_anneal_fraction);
  t.alpha_horizon_episodes = c.get_int("train.alpha_horizon_episodes", t.alpha_horizon_episodes);
  t.tau0 = c.get_double("train.tau0", t.tau0);
  t.tau_min = c.get_double("train.tau_min", t.tau_min);
  t.tau_decay = c.get_double("train.tau_decay", t.tau_decay);
  t.hidden = c.get_int("train.hidden", t.hidden);
  t.ppo.clip = c.get_double("ppo.clip", t.ppo.clip);
  t.ppo.gae_lambda = c.get_double("ppo.gae_lambda", t.ppo.gae_lambda);
  t.ppo.discount = c.get_double("ppo.discount", t.ppo.discount);
  t.ppo.batch = c.get_int("ppo.batch", t.ppo.batch);
  t.ppo.epochs = c.get_int("ppo.epochs", t.ppo.epochs);
  t.ppo.minibatches = c.get_int("ppo.minibatches", t.ppo.minibatches);
  t.ppo.value_coef = c.get_double("ppo.value_coef", t.ppo.value_coef);
  t.ppo.entropy_coef = c.get_double("ppo.entropy_coef", t.ppo.entropy_coef);
  t.ppo.lr = c.get_double("ppo.lr", t.ppo.lr);
  t.ppo.lr_period = c.get_int("ppo.lr_period", static_cast<int>(t.ppo.lr_period));
  t.ppo.max_grad_norm = c.get_double("ppo.max_grad_norm", t.ppo.max_grad_norm);
  t.belief_update.lr = c.get_double("belief_update.lr", t.belief_update.lr);
  t.belief_update.c_confidence = c.get_double("belief_update.c_confidence", t.belief_update.c_confidence);
  t.belief_update.c_clip = c.get_double("belief_update.c_clip", t.belief_update.c_clip);
  t.belief_update.tau_min = t.tau_min;
  t.reward = RewardWeights::from_config(c);
  t.env = EnvConfig::from_config(c);
  t.pilot = PilotConfig::from_config(c);
  t.expert = ExpertConfig::from_config(c);
  t.inference = InferenceParams::from_config(c);
  t.validate();
  return t;
}

double alpha_at(const TrainConfig& cfg, int episode, int horizon) {
  const double span = cfg.alpha_anneal_fraction * std::max(horizon, 1);
  if (span <= 0.0) return cfg.alpha_end;
  const double f = std::min(1.0, episode / span);
  return cfg.alpha_start + (cfg.alpha_end - cfg.alpha_start) * f;
}

double tau_cap(const TrainConfig& cfg, int stage) {
  return std::max(cfg.tau_min, cfg.tau0 * std::pow(cfg.tau_decay, stage - 1));
}

std::string to_ndjson(const EpisodeLog& l) {
  std::ostringstream s;
  s << "{\"episode\":" << l.episode << ",\"stage\":" << l.stage
    << ",\"success\":" << (l.success ? "true" : "false") << ",\"collisions\":" << l.collisions
    << ",\"steps\":" << l.steps << ",\"path_efficiency\":" << num(l.path_efficiency)
    << ",\"mean_gamma\":" << num(l.mean_gamma) << ",\"belief_accuracy\":" << num(l.belief_accuracy)
    << ",\"reward\":" << num(l.total_reward) << ",\"reward_terms\":{\"collision\":"
    << num(l.reward.collision) << ",\"proximity\":" << num(l.reward.proximity)
    << ",\"far\":" << num(l.reward.far) << ",\"progress\":" << num(l.reward.progress)
    << ",\"autonomy\":" << num(l.reward.autonomy) << ",\"goal\":" << num(l.reward.goal) << "}";
  if (l.ppo) {
    s << ",\"losses\":{\"actor\":" << num(l.ppo->actor_loss) << ",\"value\":" << num(l.ppo->value_loss)
      << ",\"entropy\":" << num(l.ppo->entropy) << ",\"clip_fraction\":" << num(l.ppo->clip_fraction)
      << ",\"kl\":" << num(l.ppo->approx_kl) << ",\"aborted\":" << (l.ppo->aborted ? "true" : "false")
      << "}";
  }
  s << ",\"phi\":{\"beta\":" << num(l.phi.beta) << ",\"w_theta\":" << num(l.phi.w_theta)
    << ",\"w_d\":" << num(l.phi.w_d) << ",\"tau\":" << num(l.phi.temperature) << "}"
    << ",\"alpha\":" << num(l.alpha) << "}";
  return s.str();
}

TrainResult run_training(const TrainConfig& cfg, std::uint64_t seed, std::ostream* log_out) {
  cfg.validate();
  TrainResult result;
  Rng rng(mix_seed(seed, kTrainStream));
  PolicyNet net = PolicyNet::create(mix_seed(seed, kInitStream), cfg.hidden);
  OptimState opt = OptimState::for_size(net.parameter_count(), cfg.ppo.lr, cfg.ppo.lr_period,
                                        cfg.ppo.max_grad_norm);
  InferenceParams phi = cfg.inference;

  if (cfg.warm_start_episodes > 0) {
    const int n = std::max<int>(cfg.warm_start_episodes * cfg.trajectories_per_warm_start_episode,
                                static_cast<int>(kMinCalibrationTrajectories));
    const auto data = generate_dataset(n, cfg.pilot, mix_seed(seed, kWarmStream), cfg.env);
    result.warm_start = calibrate(data, phi);
    phi = result.warm_start.params;
  }

  const bool learn_belief = cfg.mode == TrainMode::kEndToEnd;
  const int horizon = cfg.episode_budget > 0 ? cfg.episode_budget : cfg.alpha_horizon_episodes;
  std::size_t stage_index = 0;
  int current_stage = cfg.curriculum ? cfg.stages[0].stage_id : 1;
  if (learn_belief) {
    // The posterior depends on beta and tau only through beta / tau, so the
    // calibrated sharpness is kept while tau moves into its schedule box.
    const double tau = std::clamp(phi.temperature, cfg.tau_min, std::max(cfg.tau_min, tau_cap(cfg, current_stage)));
    phi.beta = std::clamp(phi.beta * tau / phi.temperature, cfg.belief_update.beta_min, cfg.belief_update.beta_max);
    phi.temperature = tau;
  }

  std::vector<Transition> batch;
  std::vector<std::size_t> episode_bounds;  // start index of each episode in batch
  std::vector<BeliefEpisode> belief_batch;
  std::vector<int> batch_episode_ids;
  std::vector<char> stage_success;
  std::vector<char> stage_collision;
  double best_window = -1.0;
  int since_best = 0;
  bool finished = false;

  for (int episode = 0; !finished; ++episode) {
    if (cfg.episode_budget > 0 && episode >= cfg.episode_budget) break;
    const int stage = cfg.curriculum ? cfg.stages[stage_index].stage_id
                                     : rng.uniform_int(1, cfg.max_stage);
    const std::uint64_t ep_seed = mix_seed(mix_seed(seed, kEpisodeStream), static_cast<std::uint64_t>(episode));
    PilotEpisode setup = pilot_episode(ep_seed, stage_from_int(stage), cfg.pilot, cfg.env);
    EnvState state = std::move(setup.state);
    PilotState pilot = std::move(setup.pilot);
    ExpertMemory memory(mix_seed(setup.seed, kExpertMemoryStream));
    BeliefState belief = uniform_belief(state.goals.size());
    const Goal true_goal = state.true_goal();
    const double straight = std::max(0.0, distance(state.start, true_goal.position) - true_goal.radius);

    BeliefEpisode bep;
    bep.n_goals = state.goals.size();
    bep.true_goal = state.true_goal_id;
    EpisodeLog log;
    log.episode = episode;
    log.stage = stage;
    const std::size_t first = batch.size();
    episode_bounds.push_back(first);
    double path = 0.0;
    int correct = 0;
    double gamma_sum = 0.0;
    bool reached = false;

    for (;;) {
      const Vec2 h = pilot_action(state, pilot, cfg.pilot);
      bep.trace.push_back(deviations(state.cursor, state.goals, h, phi));
      belief = update_belief(belief, state, h, phi);
      Transition tr;
      tr.input = policy_input(state, h, belief, cfg.belief_input, cfg.env);
      if (batch.size() > first) batch.back().next_input = tr.input;
      const PolicyOutput po = forward(net, tr.input);
      tr.action = po.mu + std::exp(net.log_std) * rng.normal();
      tr.log_prob = gaussian_log_prob(tr.action, po.mu, net.log_std);
      tr.gamma = (std::tanh(tr.action) + 1.0) * 0.5;
      tr.value = po.value;
      tr.belief = belief.probs;
      tr.p_max = belief.p_max;
      tr.true_goal_id = state.true_goal_id;
      const int map = belief.map_goal_id;
      bep.map_goals.push_back(map);
      const Goal& map_goal = state.goals[static_cast<std::size_t>(map)];
      const Vec2 w = expert_action(state, map_goal, cfg.expert, memory, cfg.env);
      auto [next, out] = step(state, h, w, tr.gamma, cfg.env);

      RewardContext ctx;
      ctx.collision = out.collision;
      ctx.gamma = tr.gamma;
      ctx.p_max = belief.p_max;
      ctx.p_true = belief.probs[static_cast<std::size_t>(state.true_goal_id)];
      ctx.distance_to_map_goal = distance(next.cursor, map_goal.position);
      ctx.progress = out.distance_delta_to_true_goal;
      const RewardBreakdown rb = step_reward(ctx, cfg.reward);
      tr.reward = rb.total();
      tr.done = out.done;
      log.reward.collision += rb.collision;
      log.reward.proximity += rb.proximity;
      log.reward.far += rb.far;
      log.reward.progress += rb.progress;
      log.reward.autonomy += rb.autonomy;
      log.reward.goal += rb.goal;
      log.total_reward += tr.reward;

      path += distance(state.cursor, next.cursor);
      if (out.collision) ++log.collisions;
      if (map == state.true_goal_id) ++correct;
      gamma_sum += tr.gamma;
      ++log.steps;
      const bool done = out.done;
      reached = out.success;
      state = std::move(next);
      if (done) {
        tr.next_input = policy_input(state, Vec2{}, belief, cfg.belief_input, cfg.env);
        tr.next_belief = belief.probs;
      }
      batch.push_back(std::move(tr));
      if (batch.size() > first + 1) batch[batch.size() - 2].next_belief = belief.probs;
      if (done) break;
    }

    log.success = reached && log.collisions == 0;
    log.path_efficiency = path_efficiency(straight, path);
    log.mean_gamma = gamma_sum / log.steps;
    log.belief_accuracy = static_cast<double>(correct) / log.steps;
    log.alpha = alpha_at(cfg, episode, horizon);
    belief_batch.push_back(std::move(bep));
    batch_episode_ids.push_back(episode);

    if (batch.size() >= static_cast<std::size_t>(cfg.ppo.batch)) {
      std::vector<double> adv;
      std::vector<double> ret;
      adv.reserve(batch.size());
      ret.reserve(batch.size());
      for (std::size_t e = 0; e < episode_bounds.size(); ++e) {
        const std::size_t lo = episode_bounds[e];
        const std::size_t hi = e + 1 < episode_bounds.size() ? episode_bounds[e + 1] : batch.size();
        const GaeResult g = compute_gae(std::span<const Transition>(batch).subspan(lo, hi - lo),
                                        cfg.ppo.discount, cfg.ppo.gae_lambda);
        adv.insert(adv.end(), g.advantages.begin(), g.advantages.end());
        ret.insert(ret.end(), g.returns.begin(), g.returns.end());
      }
      normalize_advantages(adv);
      const PpoDiagnostics diag = ppo_update(batch, adv, ret, net, opt, cfg.ppo, rng);
      log.ppo = diag;
      if (diag.aborted) {
        for (int id : batch_episode_ids) {
          result.quarantined.push_back("{\"episode\":" + std::to_string(id) +
                                       ",\"reason\":\"non-finite ppo loss\"}");
        }
      } else if (learn_belief) {
        double p_max_sum = 0.0;
        for (std::size_t e = 0, i = 0; e < belief_batch.size(); ++e) {
          auto& be = belief_batch[e];
          be.advantages.assign(adv.begin() + static_cast<std::ptrdiff_t>(i),
                               adv.begin() + static_cast<std::ptrdiff_t>(i + be.trace.size()));
          i += be.trace.size();
        }
        for (const auto& t : batch) p_max_sum += t.p_max;
        BeliefUpdateReport rep;
        BeliefUpdateConfig bcfg = cfg.belief_update;
        bcfg.tau_min = cfg.tau_min;
        const double tau_before = phi.temperature;
        phi = belief_reinforce_update(belief_batch, phi, log.alpha,
                                      p_max_sum / static_cast<double>(batch.size()), bcfg, &rep);
        // Temperature only anneals: never above its previous value or the stage cap.
        phi.temperature = std::clamp(phi.temperature, cfg.tau_min,
                                     std::max(cfg.tau_min, std::min(tau_before, tau_cap(cfg, current_stage))));
        result.clamp_warnings += rep.clamp_warnings;
      }
      batch.clear();
      episode_bounds.clear();
      belief_batch.clear();
      batch_episode_ids.clear();
    }
    log.phi = phi;
    if (log_out) *log_out << to_ndjson(log) << '\n';
    result.log.push_back(log);

    if (!cfg.curriculum) continue;
    const CurriculumStage& cs = cfg.stages[stage_index];
    stage_success.push_back(log.success ? 1 : 0);
    stage_collision.push_back(log.collisions > 0 ? 1 : 0);
    const int in_stage = static_cast<int>(stage_success.size());
    const bool last_stage = cs.stage_id >= cfg.max_stage;
    if (in_stage < cs.min_episodes) continue;

    if (cs.plateau_window > 0) {
      const int w = cs.plateau_window;
      const double rate =
          std::accumulate(stage_success.end() - w, stage_success.end(), 0.0) / static_cast<double>(w);
      if (rate > best_window + 1e-9) {
        best_window = rate;
        since_best = 0;
      } else {
        ++since_best;
      }
      if (cfg.episode_budget == 0 && (since_best >= w || in_stage >= cfg.stall_factor * w)) finished = true;
      continue;
    }
    const int w = cs.min_episodes;
    const double success_rate =
        std::accumulate(stage_success.end() - w, stage_success.end(), 0.0) / static_cast<double>(w);
    const double collision_rate =
        std::accumulate(stage_collision.end() - w, stage_collision.end(), 0.0) / static_cast<double>(w);
    const bool met = success_rate > cs.success_threshold &&
                     (cs.collision_cap < 0.0 || collision_rate < cs.collision_cap);
    if (met && !last_stage) {
      ++stage_index;
      current_stage = cfg.stages[stage_index].stage_id;
      stage_success.clear();
      stage_collision.clear();
      if (learn_belief) phi.temperature = std::min(phi.temperature, tau_cap(cfg, current_stage));
    } else if (met && last_stage && cfg.episode_budget == 0) {
      finished = true;
    } else if (!met && in_stage >= cfg.stall_factor * cs.min_episodes &&
               !(last_stage && cfg.episode_budget > 0)) {
      result.stalled = true;
      std::ostringstream msg;
      msg << "curriculum stall: stage " << cs.stage_id << " after " << in_stage
          << " episodes, success " << num(success_rate) << " (need > " << num(cs.success_threshold)
          << "), collision rate " << num(collision_rate);
      result.stall_message = msg.str();
      finished = true;
    }
  }

  result.final_stage = current_stage;
  result.checkpoint.net = net;
  result.checkpoint.opt = opt;
  result.checkpoint.inference = phi;
  std::ostringstream rs;
  rs << rng.engine();
  result.checkpoint.rng_state = rs.str();
  result.checkpoint.meta = {{"mode", to_string(cfg.mode)},
                            {"belief_input", to_string(cfg.belief_input)},
                            {"curriculum", cfg.curriculum ? "true" : "false"},
                            {"seed", std::to_string(seed)},
                            {"episodes", std::to_string(result.log.size())},
                            {"final_stage", std::to_string(result.final_stage)},
                            {"stalled", result.stalled ? "true" : "false"}};
  return result;
}

}  // namespace brace
