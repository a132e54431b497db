#include "brace/evalbench.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <numeric>
#include <sstream>

#include "brace/error.hpp"
#include "json.hpp"

namespace brace {
namespace {

constexpr std::uint64_t kSuiteStream = 0x53554954ULL;

std::string num(double v) {
  if (!std::isfinite(v)) return "null";
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.9g", v);
  return buf;
}

}  // namespace

std::string to_string(ConditionKind kind) {
  switch (kind) {
    case ConditionKind::kNoAssist: return "no_assist";
    case ConditionKind::kFixedGamma: return "fixed_gamma";
    case ConditionKind::kMapSequential: return "map_sequential";
    case ConditionKind::kUniformPrior: return "uniform_prior";
    case ConditionKind::kBrace: return "brace";
  }
  return "no_assist";
}

ConditionKind condition_kind_from_string(const std::string& name) {
  for (auto k : {ConditionKind::kNoAssist, ConditionKind::kFixedGamma, ConditionKind::kMapSequential,
                 ConditionKind::kUniformPrior, ConditionKind::kBrace}) {
    if (to_string(k) == name) return k;
  }
  throw Error(ErrorCode::kInvalidArgument, "unknown condition '" + name + "'");
}

bool Condition::needs_checkpoint() const {
  return kind == ConditionKind::kBrace || kind == ConditionKind::kMapSequential ||
         kind == ConditionKind::kUniformPrior;
}

void Condition::validate() const {
  if (kind == ConditionKind::kFixedGamma && !(fixed_gamma >= 0.0 && fixed_gamma <= 1.0)) {
    throw Error(ErrorCode::kInvalidArgument, "fixed_gamma requires gamma0 in [0, 1], got " + num(fixed_gamma));
  }
  if (needs_checkpoint() && !checkpoint) {
    throw Error(ErrorCode::kInvalidArgument, "condition " + name() + " needs a checkpoint");
  }
}

Condition Condition::no_assist() { return Condition{}; }

Condition Condition::fixed(double gamma) {
  Condition c;
  c.kind = ConditionKind::kFixedGamma;
  c.fixed_gamma = gamma;
  c.label = "fixed_gamma(" + num(gamma) + ")";
  c.validate();
  return c;
}

Condition Condition::brace(Checkpoint ckpt) {
  Condition c;
  c.kind = ConditionKind::kBrace;
  c.inference = ckpt.inference;
  c.checkpoint = std::move(ckpt);
  c.belief_input = BeliefInput::kFull;
  return c;
}

Condition Condition::map_sequential(Checkpoint ckpt) {
  Condition c = brace(std::move(ckpt));
  c.kind = ConditionKind::kMapSequential;
  c.belief_input = BeliefInput::kMapOneHot;
  return c;
}

Condition Condition::uniform_prior(Checkpoint ckpt) {
  Condition c = brace(std::move(ckpt));
  c.kind = ConditionKind::kUniformPrior;
  c.belief_input = BeliefInput::kUniform;
  return c;
}

Assistant::Assistant(const Condition& cond, std::size_t n_goals)
    : cond_(&cond),
      params_(cond.checkpoint ? cond.checkpoint->inference : cond.inference),
      belief_(uniform_belief(n_goals)) {
  cond.validate();
}

void Assistant::observe(const EnvState& state, const Vec2& human_action) {
  belief_ = update_belief(belief_, state, human_action, params_);
}

Assistant::Decision Assistant::current(const EnvState& state, const Vec2& human_action,
                                       const EnvConfig& env) const {
  Decision d;
  d.map_goal = belief_.map_goal_id;
  switch (cond_->kind) {
    case ConditionKind::kNoAssist: d.gamma = 0.0; break;
    case ConditionKind::kFixedGamma: d.gamma = cond_->fixed_gamma; break;
    default: {
      const PolicyInput in = policy_input(state, human_action, belief_, cond_->belief_input, env);
      d.gamma = forward(cond_->checkpoint->net, in).gamma;
      break;
    }
  }
  return d;
}

Assistant::Decision Assistant::decide(const EnvState& state, const Vec2& human_action, const EnvConfig& env) {
  observe(state, human_action);
  return current(state, human_action, env);
}

std::vector<EpisodeSpec> paired_suite(std::uint64_t seed, int n, const std::vector<int>& stages) {
  if (stages.empty()) throw Error(ErrorCode::kInvalidArgument, "suite needs at least one stage");
  std::vector<EpisodeSpec> out;
  out.reserve(static_cast<std::size_t>(std::max(n, 0)));
  for (int i = 0; i < n; ++i) {
    EpisodeSpec s;
    s.seed = mix_seed(mix_seed(seed, kSuiteStream), static_cast<std::uint64_t>(i));
    s.stage = stage_from_int(stages[static_cast<std::size_t>(i) % stages.size()]);
    out.push_back(s);
  }
  return out;
}

double fitts_throughput(double distance, double goal_radius, int steps) {
  if (steps <= 0) return 0.0;
  return std::log2(distance / (2.0 * goal_radius) + 1.0) / steps;
}

EpisodeRecorder::EpisodeRecorder(std::string condition, std::uint64_t seed, Stage stage, const EnvState& initial,
                                 const EnvConfig& env)
    : d_safe_(env.d_safe), goal_(initial.true_goal()), start_(initial.start), true_goal_id_(initial.true_goal_id) {
  m_.condition = std::move(condition);
  m_.seed = seed;
  m_.stage = to_int(stage);
  m_.n_goals = static_cast<int>(initial.goals.size());
}

void EpisodeRecorder::record(const EnvState& before, double gamma, const BeliefState& belief, int map_goal,
                             const EnvState& after, const StepOutcome& outcome) {
  const double obstacle_distance = nearest_obstacle_distance(before.cursor, before.obstacles);
  if (obstacle_distance <= d_safe_) {
    m_.gamma_near_sum += gamma;
    ++m_.gamma_near_count;
  } else {
    m_.gamma_far_sum += gamma;
    ++m_.gamma_far_count;
  }
  gammas_.push_back(gamma);
  entropies_.push_back(belief.entropy);
  maps_.push_back(map_goal);
  path_ += distance(before.cursor, after.cursor);
  cumulative_.push_back(path_);
  if (outcome.collision) ++m_.collisions;
  if (outcome.done) m_.reached_true_goal = outcome.success;
}

EpisodeMetrics EpisodeRecorder::finish(bool aborted) const {
  EpisodeMetrics m = m_;
  m.aborted = aborted;
  const std::size_t n = gammas_.size();
  m.steps = static_cast<int>(n);
  m.success = !aborted && m.reached_true_goal && m.collisions == 0;
  const double straight = std::max(0.0, distance(start_, goal_.position) - goal_.radius);
  m.path_efficiency = straight > 0.0 ? straight / std::max(path_, straight) : 1.0;
  m.throughput = fitts_throughput(distance(start_, goal_.position), goal_.radius, m.steps);
  if (n == 0) return m;
  m.mean_gamma = std::accumulate(gammas_.begin(), gammas_.end(), 0.0) / static_cast<double>(n);
  for (std::size_t q = 0; q < 4; ++q) {
    const std::size_t lo = q * n / 4;
    const std::size_t hi = (q + 1) * n / 4;
    if (hi > lo) {
      m.gamma_by_quartile[q] = std::accumulate(gammas_.begin() + static_cast<std::ptrdiff_t>(lo),
                                               gammas_.begin() + static_cast<std::ptrdiff_t>(hi), 0.0) /
                               static_cast<double>(hi - lo);
    } else {
      m.gamma_by_quartile[q] = gammas_[std::min(lo, n - 1)];
    }
  }
  const std::size_t q1 = std::max<std::size_t>(1, (n + 3) / 4);
  m.first_quartile_entropy =
      std::accumulate(entropies_.begin(), entropies_.begin() + static_cast<std::ptrdiff_t>(q1), 0.0) /
      static_cast<double>(q1);
  const double fractions[3] = {0.25, 0.5, 0.75};
  for (std::size_t k = 0; k < 3; ++k) {
    const double target = fractions[k] * path_;
    std::size_t i = 0;
    while (i + 1 < n && cumulative_[i] < target) ++i;
    m.belief_accuracy[k] = maps_[i] == true_goal_id_;
  }
  return m;
}

Vec2 assisting_expert_action(const EnvState& state, const Assistant::Decision& dec, const ExpertConfig& expert,
                             ExpertMemory& memory, const EnvConfig& env) {
  // With gamma exactly 0 the expert cannot affect the step.
  if (!(dec.gamma > 0.0)) return Vec2{};
  return expert_action(state, state.goals[static_cast<std::size_t>(dec.map_goal)], expert, memory, env);
}

Vec2 input_to_action(const Vec2& input, double v_max) {
  const Vec2 c{std::clamp(input.x, -1.0, 1.0), std::clamp(input.y, -1.0, 1.0)};
  return clip_norm(Vec2{c.x * v_max, c.y * v_max}, v_max);
}

EpisodeMetrics run_episode(const Condition& cond, const EpisodeSpec& spec, const EnvConfig& env,
                           const PilotConfig& pilot_cfg, const ExpertConfig& expert,
                           std::vector<StepTrace>* trace) {
  PilotEpisode setup = pilot_episode(spec.seed, spec.stage, pilot_cfg, env);
  EnvState state = std::move(setup.state);
  PilotState pilot = std::move(setup.pilot);
  ExpertMemory memory(mix_seed(setup.seed, kExpertMemoryStream));
  Assistant assistant(cond, state.goals.size());
  EpisodeRecorder rec(cond.name(), spec.seed, spec.stage, state, env);
  const Vec2 goal_position = state.true_goal().position;
  for (;;) {
    const Vec2 h = pilot_action(state, pilot, pilot_cfg);
    const auto dec = assistant.decide(state, h, env);
    const Vec2 w = assisting_expert_action(state, dec, expert, memory, env);
    if (trace) {
      trace->push_back({state.cursor, h, w, dec.gamma, assistant.belief().probs,
                        nearest_obstacle_distance(state.cursor, state.obstacles),
                        distance(state.cursor, goal_position)});
    }
    auto [next, out] = step(state, h, w, dec.gamma, env);
    rec.record(state, dec.gamma, assistant.belief(), dec.map_goal, next, out);
    state = std::move(next);
    if (out.done) break;
  }
  EpisodeMetrics m = rec.finish();
  m.noise_checksum = noise_checksum(pilot);
  return m;
}

EnvState run_episode_from_inputs(const Condition& cond, const EpisodeSpec& spec, const EnvConfig& env,
                                 const ExpertConfig& expert, const std::vector<Vec2>& inputs,
                                 EpisodeMetrics* metrics) {
  EnvState state = generate_environment(spec.seed, spec.stage, env);
  ExpertMemory memory(mix_seed(spec.seed, kExpertMemoryStream));
  Assistant assistant(cond, state.goals.size());
  EpisodeRecorder rec(cond.name(), spec.seed, spec.stage, state, env);
  Vec2 held;
  for (std::size_t t = 0;; ++t) {
    if (t < inputs.size()) held = inputs[t];
    const Vec2 h = input_to_action(held, env.v_max);
    const auto dec = assistant.decide(state, h, env);
    const Vec2 w = assisting_expert_action(state, dec, expert, memory, env);
    auto [next, out] = step(state, h, w, dec.gamma, env);
    rec.record(state, dec.gamma, assistant.belief(), dec.map_goal, next, out);
    state = std::move(next);
    if (out.done) break;
  }
  if (metrics) *metrics = rec.finish();
  return state;
}

const std::vector<EpisodeMetrics>* SuiteResult::find(const std::string& condition) const {
  for (std::size_t i = 0; i < conditions.size(); ++i) {
    if (conditions[i] == condition) return &episodes[i];
  }
  return nullptr;
}

SuiteResult run_suite(const std::vector<Condition>& conditions, const std::vector<EpisodeSpec>& suite,
                      const EnvConfig& env, const PilotConfig& pilot, const ExpertConfig& expert) {
  SuiteResult r;
  for (const auto& c : conditions) {
    if (c.needs_checkpoint() && !c.checkpoint) {
      r.notices.push_back("condition " + c.name() + " skipped: missing checkpoint");
      continue;
    }
    c.validate();
    std::vector<EpisodeMetrics> eps;
    eps.reserve(suite.size());
    for (const auto& s : suite) eps.push_back(run_episode(c, s, env, pilot, expert));
    r.conditions.push_back(c.name());
    r.episodes.push_back(std::move(eps));
  }
  for (std::size_t i = 1; i < r.episodes.size(); ++i) {
    for (std::size_t j = 0; j < suite.size(); ++j) {
      if (r.episodes[i][j].noise_checksum != r.episodes[0][j].noise_checksum) r.paired = false;
    }
  }
  return r;
}

MeanSd mean_sd(const std::vector<double>& x) {
  MeanSd r;
  if (x.empty()) return r;
  const double n = static_cast<double>(x.size());
  r.mean = std::accumulate(x.begin(), x.end(), 0.0) / n;
  if (x.size() > 1) {
    double ss = 0.0;
    for (double v : x) ss += (v - r.mean) * (v - r.mean);
    r.sd = std::sqrt(ss / (n - 1.0));
  }
  return r;
}

Aggregate aggregate(const std::string& condition, const std::vector<EpisodeMetrics>& eps) {
  Aggregate a;
  a.condition = condition;
  a.episodes = static_cast<int>(eps.size());
  std::vector<double> succ, steps, eff, thr, coll, gam;
  for (const auto& e : eps) {
    succ.push_back(e.success ? 1.0 : 0.0);
    if (e.success) steps.push_back(e.steps);
    eff.push_back(e.path_efficiency);
    thr.push_back(e.throughput);
    coll.push_back(e.collisions);
    gam.push_back(e.mean_gamma);
  }
  a.success = mean_sd(succ);
  a.steps = mean_sd(steps);
  a.path_efficiency = mean_sd(eff);
  a.throughput = mean_sd(thr);
  a.collisions = mean_sd(coll);
  a.mean_gamma = mean_sd(gam);
  for (std::size_t k = 0; k < 3; ++k) {
    double hits = 0.0;
    for (const auto& e : eps) hits += e.belief_accuracy[k] ? 1.0 : 0.0;
    a.belief_accuracy[k] = eps.empty() ? 0.0 : hits / static_cast<double>(eps.size());
  }
  return a;
}

void write_aggregate_csv(std::ostream& out, const std::vector<Aggregate>& rows) {
  out << "condition,episodes,success_mean,success_sd,steps_mean,steps_sd,path_efficiency_mean,"
         "path_efficiency_sd,throughput_mean,throughput_sd,collisions_mean,collisions_sd,gamma_mean,"
         "gamma_sd,belief_acc_25,belief_acc_50,belief_acc_75\n";
  for (const auto& a : rows) {
    out << a.condition << ',' << a.episodes << ',' << num(a.success.mean) << ',' << num(a.success.sd) << ','
        << num(a.steps.mean) << ',' << num(a.steps.sd) << ',' << num(a.path_efficiency.mean) << ','
        << num(a.path_efficiency.sd) << ',' << num(a.throughput.mean) << ',' << num(a.throughput.sd) << ','
        << num(a.collisions.mean) << ',' << num(a.collisions.sd) << ',' << num(a.mean_gamma.mean) << ','
        << num(a.mean_gamma.sd) << ',' << num(a.belief_accuracy[0]) << ',' << num(a.belief_accuracy[1]) << ','
        << num(a.belief_accuracy[2]) << '\n';
  }
}

std::string to_ndjson(const EpisodeMetrics& m) {
  std::ostringstream s;
  s << "{\"condition\":\"" << m.condition << "\",\"seed\":" << m.seed << ",\"stage\":" << m.stage
    << ",\"goals\":" << m.n_goals << ",\"success\":" << (m.success ? "true" : "false")
    << ",\"steps\":" << m.steps << ",\"collisions\":" << m.collisions
    << ",\"path_efficiency\":" << num(m.path_efficiency) << ",\"throughput\":" << num(m.throughput)
    << ",\"gamma_by_quartile\":[" << num(m.gamma_by_quartile[0]) << ',' << num(m.gamma_by_quartile[1]) << ','
    << num(m.gamma_by_quartile[2]) << ',' << num(m.gamma_by_quartile[3]) << "],\"belief_accuracy\":["
    << (m.belief_accuracy[0] ? "true" : "false") << ',' << (m.belief_accuracy[1] ? "true" : "false") << ','
    << (m.belief_accuracy[2] ? "true" : "false") << "],\"mean_gamma\":" << num(m.mean_gamma)
    << ",\"first_quartile_entropy\":" << num(m.first_quartile_entropy) << ",\"noise_checksum\":\""
    << std::hex << m.noise_checksum << std::dec << "\",\"aborted\":" << (m.aborted ? "true" : "false") << "}";
  return s.str();
}

std::string validate_episode_record(const std::string& line) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(line);
  } catch (const nlohmann::json::exception& e) {
    return std::string("not JSON: ") + e.what();
  }
  if (!j.is_object()) return "record is not an object";
  const std::pair<const char*, nlohmann::json::value_t> fields[] = {
      {"condition", nlohmann::json::value_t::string},
      {"seed", nlohmann::json::value_t::number_unsigned},
      {"stage", nlohmann::json::value_t::number_unsigned},
      {"goals", nlohmann::json::value_t::number_unsigned},
      {"success", nlohmann::json::value_t::boolean},
      {"steps", nlohmann::json::value_t::number_unsigned},
      {"collisions", nlohmann::json::value_t::number_unsigned},
      {"path_efficiency", nlohmann::json::value_t::number_float},
      {"throughput", nlohmann::json::value_t::number_float},
      {"gamma_by_quartile", nlohmann::json::value_t::array},
      {"belief_accuracy", nlohmann::json::value_t::array},
      {"mean_gamma", nlohmann::json::value_t::number_float},
      {"first_quartile_entropy", nlohmann::json::value_t::number_float},
      {"noise_checksum", nlohmann::json::value_t::string},
      {"aborted", nlohmann::json::value_t::boolean}};
  for (const auto& [key, type] : fields) {
    if (!j.contains(key)) return std::string("missing field '") + key + "'";
    const auto& v = j[key];
    const bool number_ok = (type == nlohmann::json::value_t::number_float || type == nlohmann::json::value_t::number_unsigned) &&
                           v.is_number();
    if (v.type() != type && !number_ok) return std::string("field '") + key + "' has the wrong type";
  }
  if (j["gamma_by_quartile"].size() != 4) return "gamma_by_quartile needs 4 entries";
  if (j["belief_accuracy"].size() != 3) return "belief_accuracy needs 3 entries";
  const double eff = j["path_efficiency"].get<double>();
  if (!(eff > 0.0 && eff <= 1.0 + 1e-9)) return "path_efficiency outside (0, 1]";
  return {};
}

int entropy_band(double entropy) {
  if (entropy < 0.5) return 0;
  if (entropy <= 1.0) return 1;
  return 2;
}

std::vector<BandRow> stratify_by_uncertainty(const std::vector<EpisodeMetrics>& brace,
                                             const std::vector<EpisodeMetrics>& baseline, int min_band_size) {
  if (brace.size() != baseline.size()) {
    throw Error(ErrorCode::kShapeMismatch, "stratification needs paired episode lists");
  }
  std::vector<BandRow> rows = {{"<0.5"}, {"0.5-1.0"}, {">1.0"}};
  std::array<double, 3> sb{}, sm{};
  for (std::size_t i = 0; i < brace.size(); ++i) {
    if (brace[i].seed != baseline[i].seed) throw Error(ErrorCode::kShapeMismatch, "episode lists are not paired");
    if (!brace[i].success || !baseline[i].success) continue;
    const auto b = static_cast<std::size_t>(entropy_band(brace[i].first_quartile_entropy));
    ++rows[b].episodes;
    sb[b] += brace[i].steps;
    sm[b] += baseline[i].steps;
  }
  for (std::size_t b = 0; b < 3; ++b) {
    auto& r = rows[b];
    if (r.episodes < std::max(min_band_size, 1)) {
      r.insufficient = true;
      continue;
    }
    r.brace_steps = sb[b] / r.episodes;
    r.baseline_steps = sm[b] / r.episodes;
    r.improvement = (r.baseline_steps - r.brace_steps) / r.baseline_steps;
  }
  return rows;
}

std::vector<DegradedRow> degraded_expert_suite(const Checkpoint& brace, const std::vector<ExpertMode>& modes,
                                               const std::vector<EpisodeSpec>& suite, const EnvConfig& env,
                                               const PilotConfig& pilot, const ExpertConfig& base) {
  const Condition cond = Condition::brace(brace);
  std::vector<DegradedRow> rows;
  for (ExpertMode mode : modes) {
    ExpertConfig ec = base;
    ec.mode = mode;
    DegradedRow row;
    row.mode = mode;
    double alone = 0.0;
    double assisted = 0.0;
    for (const auto& s : suite) {
      alone += run_expert_episode(pilot_episode(s.seed, s.stage, pilot, env).seed, s.stage, ec, env) ? 1.0 : 0.0;
      assisted += run_episode(cond, s, env, pilot, ec).success ? 1.0 : 0.0;
    }
    const double n = std::max<double>(1.0, static_cast<double>(suite.size()));
    row.expert_success = alone / n;
    row.brace_success = assisted / n;
    row.delta = row.brace_success - row.expert_success;
    rows.push_back(row);
  }
  return rows;
}

void write_degraded_csv(std::ostream& out, const std::vector<DegradedRow>& rows) {
  out << "mode,expert_success,brace_success,delta\n";
  for (const auto& r : rows) {
    out << to_string(r.mode) << ',' << num(r.expert_success) << ',' << num(r.brace_success) << ','
        << num(r.delta) << '\n';
  }
}

void write_bands_csv(std::ostream& out, const std::vector<BandRow>& rows) {
  out << "band,episodes,brace_steps,baseline_steps,improvement\n";
  for (const auto& r : rows) {
    out << r.band << ',' << r.episodes << ',';
    if (r.insufficient) {
      out << "insufficient data,,\n";
    } else {
      out << num(r.brace_steps) << ',' << num(r.baseline_steps) << ',' << num(r.improvement) << '\n';
    }
  }
}

std::vector<AblationVariant> reward_ablation(const TrainConfig& base, std::uint64_t seed, int full_budget,
                                             double budget_fraction, const std::vector<EpisodeSpec>& suite,
                                             int curve_window) {
  const std::vector<std::pair<std::string, double RewardWeights::*>> weights = {
      {"full", nullptr},
      {"w_coll", &RewardWeights::w_coll},
      {"w_prox", &RewardWeights::w_prox},
      {"w_far", &RewardWeights::w_far},
      {"w_prog", &RewardWeights::w_prog},
      {"w_auto", &RewardWeights::w_auto},
      {"w_goal", &RewardWeights::w_goal}};
  const int budget = std::max(1, static_cast<int>(std::lround(full_budget * budget_fraction)));
  std::vector<AblationVariant> out;
  for (const auto& [name, member] : weights) {
    TrainConfig cfg = base;
    cfg.episode_budget = budget;
    if (member) cfg.reward.*member = 0.0;
    const TrainResult tr = run_training(cfg, seed);
    AblationVariant v;
    v.name = name;
    for (std::size_t i = 0; i < tr.log.size(); i += static_cast<std::size_t>(curve_window)) {
      const std::size_t hi = std::min(tr.log.size(), i + static_cast<std::size_t>(curve_window));
      double s = 0.0;
      for (std::size_t j = i; j < hi; ++j) s += tr.log[j].success ? 1.0 : 0.0;
      v.curve.push_back(s / static_cast<double>(hi - i));
    }
    const Condition cond = Condition::brace(tr.checkpoint);
    std::vector<EpisodeMetrics> metrics;
    for (const auto& s : suite) metrics.push_back(run_episode(cond, s, cfg.env, cfg.pilot, cfg.expert));
    const Aggregate a = aggregate(name, metrics);
    v.final_success = a.success.mean;
    v.mean_gamma = a.mean_gamma.mean;
    v.collisions = a.collisions.mean;
    out.push_back(std::move(v));
  }
  return out;
}

HeatMap gamma_heatmap(const std::vector<std::vector<StepTrace>>& traces, int progress_bins, int distance_bins,
                      double max_distance) {
  if (progress_bins < 1 || distance_bins < 1 || !(max_distance > 0.0)) {
    throw Error(ErrorCode::kInvalidArgument, "heat map needs positive bin counts and range");
  }
  HeatMap h;
  for (int i = 0; i <= progress_bins; ++i) h.progress_edges.push_back(static_cast<double>(i) / progress_bins);
  for (int i = 0; i <= distance_bins; ++i) h.distance_edges.push_back(max_distance * i / distance_bins);
  std::vector<std::vector<double>> sum(static_cast<std::size_t>(progress_bins),
                                       std::vector<double>(static_cast<std::size_t>(distance_bins), 0.0));
  h.count.assign(static_cast<std::size_t>(progress_bins), std::vector<int>(static_cast<std::size_t>(distance_bins), 0));
  for (const auto& tr : traces) {
    if (tr.empty()) continue;
    const double d0 = std::max(tr.front().true_goal_distance, 1e-9);
    for (const auto& s : tr) {
      const double prog = std::clamp(1.0 - s.true_goal_distance / d0, 0.0, 1.0);
      const int pb = std::min(progress_bins - 1, static_cast<int>(prog * progress_bins));
      const double dist = std::clamp(s.obstacle_distance, 0.0, max_distance);
      const int db = std::min(distance_bins - 1, static_cast<int>(dist / max_distance * distance_bins));
      sum[static_cast<std::size_t>(pb)][static_cast<std::size_t>(db)] += s.gamma;
      ++h.count[static_cast<std::size_t>(pb)][static_cast<std::size_t>(db)];
    }
  }
  h.mean.assign(static_cast<std::size_t>(progress_bins),
                std::vector<double>(static_cast<std::size_t>(distance_bins), std::numeric_limits<double>::quiet_NaN()));
  for (std::size_t i = 0; i < sum.size(); ++i) {
    for (std::size_t j = 0; j < sum[i].size(); ++j) {
      if (h.count[i][j] > 0) h.mean[i][j] = sum[i][j] / h.count[i][j];
    }
  }
  return h;
}

void write_heatmap_csv(std::ostream& out, const HeatMap& h) {
  out << "progress_lo,progress_hi,distance_lo,distance_hi,mean_gamma,count\n";
  for (std::size_t i = 0; i < h.mean.size(); ++i) {
    for (std::size_t j = 0; j < h.mean[i].size(); ++j) {
      out << num(h.progress_edges[i]) << ',' << num(h.progress_edges[i + 1]) << ',' << num(h.distance_edges[j])
          << ',' << num(h.distance_edges[j + 1]) << ',';
      if (h.count[i][j] > 0) out << num(h.mean[i][j]);
      out << ',' << h.count[i][j] << '\n';
    }
  }
}

void write_learning_curve_csv(std::ostream& out, const std::vector<EpisodeLog>& log, int window) {
  if (window < 1) throw Error(ErrorCode::kInvalidArgument, "window must be >= 1");
  out << "episode_start,episode_end,stage,success_rate,mean_reward,mean_gamma,collision_rate\n";
  for (std::size_t i = 0; i < log.size(); i += static_cast<std::size_t>(window)) {
    const std::size_t hi = std::min(log.size(), i + static_cast<std::size_t>(window));
    double s = 0.0, r = 0.0, g = 0.0, c = 0.0;
    for (std::size_t j = i; j < hi; ++j) {
      s += log[j].success ? 1.0 : 0.0;
      r += log[j].total_reward;
      g += log[j].mean_gamma;
      c += log[j].collisions > 0 ? 1.0 : 0.0;
    }
    const double n = static_cast<double>(hi - i);
    out << i << ',' << hi - 1 << ',' << log[hi - 1].stage << ',' << num(s / n) << ',' << num(r / n) << ','
        << num(g / n) << ',' << num(c / n) << '\n';
  }
}

}  // namespace brace
