#include "brace/belief.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>

#include <json.hpp>

#include "brace/error.hpp"

namespace brace {
namespace {

double weighted_cost(double theta_dev, double d_dev, const InferenceParams& p) {
  return p.w_theta * theta_dev + p.w_d * d_dev;
}

// One recursive step on an already computed set of deviations.
BeliefState advance(const BeliefState& prev, const DeviationStep& dev, const InferenceParams& p) {
  const std::size_t n = prev.probs.size();
  std::vector<double> increment(n);
  double worst = std::numeric_limits<double>::infinity();
  bool any_finite = false;
  for (std::size_t i = 0; i < n; ++i) {
    increment[i] = -p.beta * weighted_cost(dev.theta_dev[i], dev.d_dev[i], p);
    if (std::isfinite(increment[i])) {
      any_finite = true;
      worst = std::min(worst, increment[i]);
    }
  }
  if (!any_finite) {
    BeliefState same = prev;
    same.warning = true;
    return same;
  }

  BeliefState next;
  next.raw_log_scores.resize(n);
  double top = -std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < n; ++i) {
    const double inc = std::isfinite(increment[i]) ? increment[i] : worst;
    next.raw_log_scores[i] = prev.raw_log_scores[i] + inc;
    top = std::max(top, next.raw_log_scores[i]);
  }
  for (auto& s : next.raw_log_scores) s -= top;

  const std::vector<double> posterior = tempered_softmax(next.raw_log_scores, p.temperature);
  next.probs.resize(n);
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    next.probs[i] = p.ema_decay * prev.probs[i] + (1.0 - p.ema_decay) * posterior[i];
    total += next.probs[i];
  }
  for (auto& v : next.probs) v /= total;
  refresh_summaries(next);
  return next;
}

}  // namespace

void InferenceParams::renormalize() {
  w_theta = std::max(0.0, w_theta);
  w_d = std::max(0.0, w_d);
  const double s = w_theta + w_d;
  if (s <= 0.0) {
    w_theta = 0.5;
    w_d = 0.5;
    return;
  }
  w_theta /= s;
  w_d /= s;
}

void InferenceParams::validate() const {
  if (!(beta > 0.0)) throw Error(ErrorCode::kInvalidArgument, "beta must be positive");
  if (!(temperature > 0.0)) throw Error(ErrorCode::kInvalidArgument, "temperature must be positive");
  if (!(ema_decay >= 0.0 && ema_decay < 1.0)) {
    throw Error(ErrorCode::kInvalidArgument, "ema_decay must be in [0, 1)");
  }
  if (std::abs(w_theta + w_d - 1.0) > 1e-9 || w_theta < 0.0 || w_d < 0.0) {
    throw Error(ErrorCode::kInvalidArgument, "w_theta + w_d must equal 1");
  }
  if (!(d_slow > 0.0) || !(v_max > 0.0) || !(eps_mag > 0.0 && eps_mag <= 1.0)) {
    throw Error(ErrorCode::kInvalidArgument, "magnitude model parameters out of range");
  }
}

InferenceParams InferenceParams::from_config(const Config& c) {
  InferenceParams p;
  p.beta = c.get_double("belief.beta", p.beta);
  p.w_theta = c.get_double("belief.w_theta", p.w_theta);
  p.w_d = c.get_double("belief.w_d", p.w_d);
  p.ema_decay = c.get_double("belief.ema_decay", p.ema_decay);
  p.temperature = c.get_double("belief.temperature", p.temperature);
  p.d_slow = c.get_double("belief.d_slow", p.d_slow);
  p.v_max = c.get_double("env.v_max", p.v_max);
  p.eps_mag = c.get_double("belief.eps_mag", p.eps_mag);
  p.validate();
  return p;
}

double entropy_of(std::span<const double> p) {
  double h = 0.0;
  for (double v : p) {
    if (v > 0.0) h -= v * std::log(v);
  }
  return h;
}

int argmax_lowest(std::span<const double> p) {
  int best = 0;
  for (std::size_t i = 1; i < p.size(); ++i) {
    if (p[i] > p[static_cast<std::size_t>(best)]) best = static_cast<int>(i);
  }
  return best;
}

void refresh_summaries(BeliefState& b) {
  b.entropy = entropy_of(b.probs);
  b.map_goal_id = argmax_lowest(b.probs);
  b.p_max = b.probs.empty() ? 0.0 : b.probs[static_cast<std::size_t>(b.map_goal_id)];
}

BeliefState uniform_belief(std::size_t n_goals) {
  BeliefState b;
  b.probs.assign(n_goals, 1.0 / static_cast<double>(n_goals));
  b.raw_log_scores.assign(n_goals, 0.0);
  refresh_summaries(b);
  return b;
}

double angular_deviation(const Vec2& h, const Vec2& from, const Vec2& goal) {
  const Vec2 v = goal - from;
  const double hn = h.norm();
  const double vn = v.norm();
  if (hn == 0.0 || vn == 0.0) {
    throw Error(ErrorCode::kDegenerateDirection, "degenerate direction");
  }
  const double c = std::clamp(dot(h, v) / (hn * vn), -1.0, 1.0);
  return std::abs(std::acos(c));
}

double optimal_magnitude(double dist, const InferenceParams& p) {
  return p.v_max * std::clamp(dist / p.d_slow, p.eps_mag, 1.0);
}

double distance_deviation(const Vec2& h, const Vec2& from, const Vec2& goal,
                          const InferenceParams& p) {
  return std::abs(1.0 - h.norm() / optimal_magnitude(distance(from, goal), p));
}

double input_cost(const Vec2& h, const Vec2& from, const Vec2& goal, const InferenceParams& p) {
  const double theta =
      (h.norm() == 0.0 || from == goal) ? kPi / 2.0 : angular_deviation(h, from, goal);
  return weighted_cost(theta, distance_deviation(h, from, goal, p), p);
}

std::vector<double> tempered_softmax(std::span<const double> scores, double temperature) {
  std::vector<double> out(scores.size());
  if (scores.empty()) return out;
  double top = -std::numeric_limits<double>::infinity();
  for (double s : scores) top = std::max(top, s / temperature);
  double total = 0.0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    out[i] = std::exp(scores[i] / temperature - top);
    total += out[i];
  }
  for (auto& v : out) v /= total;
  return out;
}

DeviationStep deviations(const Vec2& cursor, std::span<const Goal> goals, const Vec2& h,
                         const InferenceParams& p) {
  DeviationStep s;
  s.theta_dev.resize(goals.size());
  s.d_dev.resize(goals.size());
  const bool idle = h.norm() == 0.0;
  for (std::size_t i = 0; i < goals.size(); ++i) {
    const Vec2& g = goals[i].position;
    s.theta_dev[i] = (idle || cursor == g) ? kPi / 2.0 : angular_deviation(h, cursor, g);
    s.d_dev[i] = distance_deviation(h, cursor, g, p);
  }
  return s;
}

BeliefState update_belief(const BeliefState& prev, const Vec2& cursor, std::span<const Goal> goals,
                          const Vec2& h, const InferenceParams& params) {
  if (prev.probs.size() != goals.size() || prev.raw_log_scores.size() != goals.size()) {
    throw Error(ErrorCode::kShapeMismatch, "belief dimension does not match goal count");
  }
  return advance(prev, deviations(cursor, goals, h, params), params);
}

BeliefState update_belief(const BeliefState& prev, const EnvState& state, const Vec2& h,
                          const InferenceParams& params) {
  return update_belief(prev, state.cursor, state.goals, h, params);
}

std::vector<BeliefState> replay(const DeviationTrace& trace, std::size_t n_goals,
                                const InferenceParams& params) {
  std::vector<BeliefState> out;
  out.reserve(trace.size());
  BeliefState b = uniform_belief(n_goals);
  for (const auto& step : trace) {
    b = advance(b, step, params);
    out.push_back(b);
  }
  return out;
}

std::string to_ndjson(const CalibrationTrajectory& t) {
  nlohmann::json j;
  j["goal"] = t.goal;
  j["goals"] = nlohmann::json::array();
  for (const auto& g : t.goals) j["goals"].push_back({g.position.x, g.position.y, g.radius});
  j["obstacles"] = nlohmann::json::array();
  for (const auto& o : t.obstacles) j["obstacles"].push_back({o.position.x, o.position.y, o.radius});
  j["steps"] = nlohmann::json::array();
  for (std::size_t i = 0; i < t.positions.size(); ++i) {
    j["steps"].push_back({t.positions[i].x, t.positions[i].y, t.inputs[i].x, t.inputs[i].y});
  }
  return j.dump();
}

CalibrationTrajectory trajectory_from_ndjson(const std::string& line) {
  CalibrationTrajectory t;
  try {
    const auto j = nlohmann::json::parse(line);
    t.goal = j.at("goal").get<int>();
    int id = 0;
    for (const auto& g : j.at("goals")) {
      t.goals.push_back({id++, {g.at(0).get<double>(), g.at(1).get<double>()}, g.at(2).get<double>()});
    }
    for (const auto& o : j.at("obstacles")) {
      t.obstacles.push_back({{o.at(0).get<double>(), o.at(1).get<double>()}, o.at(2).get<double>()});
    }
    for (const auto& s : j.at("steps")) {
      t.positions.push_back({s.at(0).get<double>(), s.at(1).get<double>()});
      t.inputs.push_back({s.at(2).get<double>(), s.at(3).get<double>()});
    }
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::kIo, std::string("bad calibration record: ") + e.what());
  }
  if (t.goal < 0 || t.goal >= static_cast<int>(t.goals.size())) {
    throw Error(ErrorCode::kIo, "bad calibration record: goal label out of range");
  }
  return t;
}

void write_dataset(const std::filesystem::path& path, const std::vector<CalibrationTrajectory>& data) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorCode::kIo, "cannot write " + path.string());
  for (const auto& t : data) out << to_ndjson(t) << '\n';
}

std::vector<CalibrationTrajectory> read_dataset(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::kIo, "cannot open " + path.string());
  std::vector<CalibrationTrajectory> data;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty()) data.push_back(trajectory_from_ndjson(line));
  }
  return data;
}

DeviationTrace trace_of(const CalibrationTrajectory& t, const InferenceParams& params) {
  DeviationTrace trace;
  trace.reserve(t.positions.size());
  for (std::size_t i = 0; i < t.positions.size(); ++i) {
    trace.push_back(deviations(t.positions[i], t.goals, t.inputs[i], params));
  }
  return trace;
}

std::size_t completion_index(std::span<const Vec2> positions, double fraction) {
  if (positions.size() < 2) return 0;
  std::vector<double> cum(positions.size(), 0.0);
  for (std::size_t i = 1; i < positions.size(); ++i) {
    cum[i] = cum[i - 1] + distance(positions[i - 1], positions[i]);
  }
  const double target = fraction * cum.back();
  for (std::size_t i = 0; i < cum.size(); ++i) {
    if (cum[i] >= target) return i;
  }
  return cum.size() - 1;
}

double mean_log_likelihood(std::span<const DeviationTrace> traces, std::span<const int> labels,
                           std::span<const std::size_t> n_goals, const InferenceParams& params) {
  double total = 0.0;
  std::size_t count = 0;
  for (std::size_t k = 0; k < traces.size(); ++k) {
    const auto beliefs = replay(traces[k], n_goals[k], params);
    for (const auto& b : beliefs) {
      total += std::log(std::max(b.probs[static_cast<std::size_t>(labels[k])], 1e-300));
      ++count;
    }
  }
  return count ? total / static_cast<double>(count) : 0.0;
}

std::array<double, 3> accuracy_at_completion(std::span<const CalibrationTrajectory> data,
                                             const InferenceParams& params) {
  static constexpr std::array<double, 3> kFractions{0.25, 0.5, 0.75};
  std::array<double, 3> hits{};
  if (data.empty()) return hits;
  for (const auto& t : data) {
    const auto beliefs = replay(trace_of(t, params), t.goals.size(), params);
    for (std::size_t f = 0; f < kFractions.size(); ++f) {
      const std::size_t k = completion_index(t.positions, kFractions[f]);
      const BeliefState b = k == 0 ? uniform_belief(t.goals.size()) : beliefs[k - 1];
      if (b.map_goal_id == t.goal) hits[f] += 1.0;
    }
  }
  for (auto& h : hits) h /= static_cast<double>(data.size());
  return hits;
}

CalibrationReport calibrate(const std::vector<CalibrationTrajectory>& data,
                            const InferenceParams& base) {
  if (data.size() < kMinCalibrationTrajectories) {
    throw Error(ErrorCode::kInsufficientCalibrationData,
                "insufficient calibration data: " + std::to_string(data.size()) + " < " +
                    std::to_string(kMinCalibrationTrajectories) + " trajectories");
  }
  const std::size_t n = data.size();
  const std::size_t n_train = n * 6 / 10;
  const std::size_t n_val = n * 2 / 10;

  struct Split {
    std::vector<DeviationTrace> traces;
    std::vector<int> labels;
    std::vector<std::size_t> goal_counts;
  };
  auto make_split = [&](std::size_t lo, std::size_t hi) {
    Split s;
    for (std::size_t i = lo; i < hi; ++i) {
      s.traces.push_back(trace_of(data[i], base));
      s.labels.push_back(data[i].goal);
      s.goal_counts.push_back(data[i].goals.size());
    }
    return s;
  };
  const Split train = make_split(0, n_train);
  const Split val = make_split(n_train, n_train + n_val);

  InferenceParams p = base;
  p.temperature = 1.0;
  auto score = [&](const InferenceParams& q, const Split& s) {
    return mean_log_likelihood(s.traces, s.labels, s.goal_counts, q);
  };

  double best = -std::numeric_limits<double>::infinity();
  for (double beta : {1.0, 2.0, 5.0, 10.0, 20.0}) {
    for (double wt : {0.5, 0.6, 0.7, 0.8}) {
      InferenceParams q = p;
      q.beta = beta;
      q.w_theta = wt;
      q.w_d = 1.0 - wt;
      const double v = score(q, train);
      if (v > best) {
        best = v;
        p = q;
      }
    }
  }

  // Coordinate descent: multiplicative steps on beta, additive on w_theta.
  double beta_factor = 1.5;
  double w_step = 0.05;
  for (int iter = 0; iter < 60 && (beta_factor > 1.005 || w_step > 0.0025); ++iter) {
    bool improved = false;
    for (double f : {beta_factor, 1.0 / beta_factor}) {
      InferenceParams q = p;
      q.beta = std::clamp(p.beta * f, 0.1, 100.0);
      const double v = score(q, train);
      if (v > best) {
        best = v;
        p = q;
        improved = true;
      }
    }
    for (double d : {w_step, -w_step}) {
      InferenceParams q = p;
      q.w_theta = std::clamp(p.w_theta + d, 0.05, 0.95);
      q.w_d = 1.0 - q.w_theta;
      const double v = score(q, train);
      if (v > best) {
        best = v;
        p = q;
        improved = true;
      }
    }
    if (!improved) {
      beta_factor = 1.0 + (beta_factor - 1.0) / 2.0;
      w_step /= 2.0;
    }
  }

  // Temperature on the validation split: log-spaced scan then golden section.
  auto val_at = [&](double log_tau) {
    InferenceParams q = p;
    q.temperature = std::exp(log_tau);
    return score(q, val);
  };
  const double lo = std::log(0.2);
  const double hi = std::log(5.0);
  const int grid = 40;
  int best_k = 0;
  double best_v = -std::numeric_limits<double>::infinity();
  for (int k = 0; k <= grid; ++k) {
    const double v = val_at(lo + (hi - lo) * k / grid);
    if (v > best_v) {
      best_v = v;
      best_k = k;
    }
  }
  double a = lo + (hi - lo) * std::max(0, best_k - 1) / grid;
  double b = lo + (hi - lo) * std::min(grid, best_k + 1) / grid;
  const double inv_phi = (std::sqrt(5.0) - 1.0) / 2.0;
  double c = b - inv_phi * (b - a);
  double d = a + inv_phi * (b - a);
  double fc = val_at(c);
  double fd = val_at(d);
  for (int it = 0; it < 40; ++it) {
    if (fc >= fd) {
      b = d;
      d = c;
      fd = fc;
      c = b - inv_phi * (b - a);
      fc = val_at(c);
    } else {
      a = c;
      c = d;
      fc = fd;
      d = a + inv_phi * (b - a);
      fd = val_at(d);
    }
  }
  const double tau_log = (a + b) / 2.0;
  p.temperature = val_at(tau_log) >= best_v ? std::exp(tau_log) : std::exp(lo + (hi - lo) * best_k / grid);

  CalibrationReport report;
  report.params = p;
  report.train_log_likelihood = score(p, train);
  report.validation_log_likelihood = score(p, val);
  report.n_train = n_train;
  report.n_validation = n_val;
  report.n_test = n - n_train - n_val;
  report.accuracy = accuracy_at_completion(
      std::span<const CalibrationTrajectory>(data).subspan(n_train + n_val), p);
  return report;
}

}  // namespace brace
