#include "brace/theory.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "brace/belief.hpp"
#include "brace/error.hpp"

namespace brace {
namespace {

constexpr double kInvPhi = 0.6180339887498948482;

double violation(const UtilityFamily& fam, std::size_t g, double gamma) {
  if (fam.form == FamilyForm::kQuadratic) return 1.0 - gamma;
  const Vec2 a = fam.h * (1.0 - gamma) + fam.expert_actions[g] * gamma;
  const double dist = std::max(0.0, distance(fam.x + a, fam.obstacle) - fam.obstacle_radius);
  return std::exp(-dist / fam.d_safe);
}

double progress(const UtilityFamily& fam, std::size_t g, double gamma) {
  if (fam.form == FamilyForm::kQuadratic) {
    const double e = gamma - fam.center[g];
    return -e * e;
  }
  const Vec2 a = fam.h * (1.0 - gamma) + fam.expert_actions[g] * gamma;
  return -(fam.x + a - fam.goals[g]).squared_norm();
}

double derivative(const std::function<double(double)>& f, double x, double h) {
  return (f(x + h) - f(x - h)) / (2.0 * h);
}

std::string fmt(double v) {
  std::ostringstream s;
  s.precision(12);
  s << v;
  return s.str();
}

}  // namespace

std::string to_string(FamilyForm form) {
  return form == FamilyForm::kQuadratic ? "quadratic" : "progress_constraint";
}

double UtilityFamily::utility(std::size_t g, double gamma) const {
  return alpha[g] * progress(*this, g, gamma) - beta[g] * violation(*this, g, gamma);
}

double UtilityFamily::mixed_partial(std::size_t g, double gamma) const {
  constexpr double h = 1e-5;
  const double lo = std::max(0.0, gamma - h);
  const double hi = std::min(1.0, gamma + h);
  return -(violation(*this, g, hi) - violation(*this, g, lo)) / (hi - lo);
}

UtilityFamily UtilityFamily::with_constraint_scale(double scale) const {
  UtilityFamily f = *this;
  for (auto& b : f.beta) b *= scale;
  return f;
}

UtilityFamily UtilityFamily::quadratic(std::vector<double> alpha, std::vector<double> center,
                                       std::vector<double> beta) {
  if (alpha.size() != center.size() || (!beta.empty() && beta.size() != alpha.size())) {
    throw Error(ErrorCode::kInvalidArgument, "quadratic family: parameter lengths differ");
  }
  UtilityFamily f;
  f.form = FamilyForm::kQuadratic;
  if (beta.empty()) beta.assign(alpha.size(), 0.0);
  f.alpha = std::move(alpha);
  f.center = std::move(center);
  f.beta = std::move(beta);
  return f;
}

UtilityFamily progress_constraint_fixture() {
  UtilityFamily f;
  f.form = FamilyForm::kProgressConstraint;
  f.alpha = {1.0, 1.0};
  f.beta = {0.5, 0.5};
  f.x = {0.0, 0.0};
  f.h = {1.0, 0.0};
  f.goals = {{1.0, 0.8}, {1.2, -0.3}};
  f.expert_actions = {{0.2, 1.0}, {0.5, -0.6}};
  f.obstacle = {1.25, 0.05};
  f.obstacle_radius = 0.1;
  f.d_safe = 1.0;
  return f;
}

UtilityFamily quadratic_fixture() {
  return UtilityFamily::quadratic({1.0, 1.5, 0.8}, {0.75, 0.4, 0.3}, {0.05, 0.1, 0.02});
}

std::vector<double> certainty_belief(std::size_t n, std::size_t true_goal, double lambda) {
  std::vector<double> p(n, (1.0 - lambda) / static_cast<double>(n));
  p.at(true_goal) += lambda;
  return p;
}

double maximize_on_unit_interval(const std::function<double(double)>& f) {
  const int n = static_cast<int>(std::lround(1.0 / kGammaGridStep));
  auto eval = [&f](double g) {
    const double v = f(g);
    if (!std::isfinite(v)) {
      throw Error(ErrorCode::kNonFiniteUtility, "non-finite utility at gamma=" + fmt(g));
    }
    return v;
  };
  int best_k = 0;
  double best_v = eval(0.0);
  for (int k = 1; k <= n; ++k) {
    const double v = eval(static_cast<double>(k) / n);
    if (v > best_v) {
      best_v = v;
      best_k = k;
    }
  }
  double best = static_cast<double>(best_k) / n;

  double a = static_cast<double>(std::max(best_k - 1, 0)) / n;
  double b = static_cast<double>(std::min(best_k + 1, n)) / n;
  double c = b - kInvPhi * (b - a);
  double d = a + kInvPhi * (b - a);
  double fc = eval(c);
  double fd = eval(d);
  for (int it = 0; it < 200 && b - a > 1e-15; ++it) {
    if (fc >= fd) {
      b = d;
      d = c;
      fd = fc;
      c = b - kInvPhi * (b - a);
      fc = eval(c);
    } else {
      a = c;
      c = d;
      fc = fd;
      d = a + kInvPhi * (b - a);
      fd = eval(d);
    }
  }
  const double g = fc >= fd ? c : d;
  const double fg = std::max(fc, fd);
  if (fg > best_v) {
    best = g;
    best_v = fg;
  }

  // Function values are flat to rounding near the optimum; the derivative is
  // not, so a Newton step on central differences pins smooth optima further.
  constexpr double h = 1e-5;
  for (int it = 0; it < 3; ++it) {
    if (best - h < 0.0 || best + h > 1.0) break;
    const double d1 = derivative(f, best, h);
    const double d2 = (f(best + h) - 2.0 * f(best) + f(best - h)) / (h * h);
    if (!(d2 < 0.0) || !std::isfinite(d1)) break;
    const double cand = std::clamp(best - d1 / d2, best - 2.0 * kGammaGridStep, best + 2.0 * kGammaGridStep);
    if (cand - h < 0.0 || cand + h > 1.0) break;
    const double fc2 = eval(cand);
    const double slack = 1e-14 * std::max(1.0, std::abs(best_v));
    if (fc2 < best_v - slack || std::abs(derivative(f, cand, h)) > std::abs(d1)) break;
    best = cand;
    best_v = std::max(best_v, fc2);
  }
  return best;
}

double expected_utility(std::span<const double> belief, const UtilityFamily& fam, double gamma) {
  if (belief.size() != fam.size()) {
    throw Error(ErrorCode::kInvalidArgument, "belief length does not match the family");
  }
  double s = 0.0;
  for (std::size_t g = 0; g < fam.size(); ++g) s += belief[g] * fam.utility(g, gamma);
  return s;
}

double optimal_gamma(std::span<const double> belief, const UtilityFamily& fam) {
  return maximize_on_unit_interval([&](double g) { return expected_utility(belief, fam, g); });
}

std::vector<double> per_goal_optima(const UtilityFamily& fam) {
  std::vector<double> out;
  for (std::size_t g = 0; g < fam.size(); ++g) {
    out.push_back(maximize_on_unit_interval([&](double x) { return fam.utility(g, x); }));
  }
  return out;
}

double regret(std::span<const double> belief, const UtilityFamily& fam, double gamma,
              std::span<const double> optima) {
  double r = 0.0;
  for (std::size_t g = 0; g < fam.size(); ++g) {
    r += belief[g] * (fam.utility(g, optima[g]) - fam.utility(g, gamma));
  }
  return r;
}

AssumptionCheck check_assumptions(const UtilityFamily& fam) {
  constexpr double h = 1e-3;
  for (std::size_t g = 0; g < fam.size(); ++g) {
    for (int k = 1; k < 200; ++k) {
      const double x = k / 200.0;
      const double d2 =
          (fam.utility(g, x + h) - 2.0 * fam.utility(g, x) + fam.utility(g, x - h)) / (h * h);
      if (!(d2 < -1e-6)) {
        return {false, "goal " + std::to_string(g) + " not strictly concave at gamma=" + fmt(x)};
      }
      if (fam.mixed_partial(g, x) < -kMonotoneTolerance) {
        return {false, "goal " + std::to_string(g) + " has a negative mixed partial at gamma=" + fmt(x)};
      }
    }
  }
  return {};
}

Theorem1Report verify_theorem1(const UtilityFamily& fam, std::size_t true_goal, int lambda_points,
                               std::span<const double> scales, std::span<const double> belief) {
  Theorem1Report rep;
  rep.assumptions = check_assumptions(fam);
  if (!rep.assumptions.met) return rep;

  const std::size_t n = fam.size();
  for (int k = 0; k < lambda_points; ++k) {
    const double lambda = lambda_points > 1 ? static_cast<double>(k) / (lambda_points - 1) : 1.0;
    const auto p = certainty_belief(n, true_goal, lambda);
    LambdaRow row{lambda, entropy_of(p), optimal_gamma(p, fam)};

    // Marginal value of certainty: U'_{g*} must dominate the mixture slope at
    // the optimum for more certainty to call for more assistance.
    const double gs = row.gamma_star;
    if (gs > 1e-4 && gs < 1.0 - 1e-4) {
      constexpr double h = 1e-5;
      const double du_true = derivative([&](double x) { return fam.utility(true_goal, x); }, gs, h);
      double du_mean = 0.0;
      for (std::size_t g = 0; g < n; ++g) {
        du_mean += derivative([&](double x) { return fam.utility(g, x); }, gs, h) / static_cast<double>(n);
      }
      if (du_true - du_mean < -1e-7) {
        rep.assumptions = {false, "expert-efficiency condition fails at lambda=" + fmt(lambda)};
        rep.violations.clear();
        return rep;
      }
    }
    if (!rep.lambda_sweep.empty()) {
      const LambdaRow& prev = rep.lambda_sweep.back();
      if (row.gamma_star < prev.gamma_star - kMonotoneTolerance) {
        rep.violations.push_back("gamma* decreased from " + fmt(prev.gamma_star) + " to " +
                                 fmt(row.gamma_star) + " at lambda=" + fmt(lambda));
      }
      if (n >= 2 && !(row.entropy < prev.entropy)) {
        rep.violations.push_back("entropy not decreasing at lambda=" + fmt(lambda));
      }
    }
    rep.lambda_sweep.push_back(row);
  }

  for (double s : scales) {
    ScaleRow row{s, optimal_gamma(belief, fam.with_constraint_scale(s))};
    if (!rep.constraint_sweep.empty() &&
        row.gamma_star < rep.constraint_sweep.back().gamma_star - kMonotoneTolerance) {
      rep.violations.push_back("gamma* decreased with constraint scale " + fmt(s));
    }
    rep.constraint_sweep.push_back(row);
  }
  return rep;
}

Theorem2Report verify_theorem2(const UtilityFamily& fam,
                               const std::vector<std::vector<double>>& beliefs) {
  Theorem2Report rep;
  const auto optima = per_goal_optima(fam);
  const bool quadratic = fam.form == FamilyForm::kQuadratic;
  bool interior = true;
  for (double o : optima) interior = interior && o > 1e-3 && o < 1.0 - 1e-3;
  const auto [lo, hi] = std::minmax_element(optima.begin(), optima.end());
  const bool coincident = *hi - *lo < 1e-9;

  for (const auto& b : beliefs) {
    RegretSample s;
    s.belief = b;
    s.map_goal = argmax_lowest(b);
    s.gamma_integrated = optimal_gamma(b, fam);
    s.r_map = regret(b, fam, optima[static_cast<std::size_t>(s.map_goal)], optima);
    s.r_int = regret(b, fam, s.gamma_integrated, optima);
    s.gap = s.r_map - s.r_int;
    if (s.r_map < s.r_int - kRegretTolerance) ++rep.dominance_violations;
    if (quadratic && interior) {
      // Second-order expansion around each gamma*_g is exact for quadratics.
      auto expansion = [&](double gamma) {
        double e = 0.0;
        for (std::size_t g = 0; g < fam.size(); ++g) {
          const double dg = optima[g] - gamma;
          e += 0.5 * b[g] * (2.0 * fam.alpha[g]) * dg * dg;
        }
        return e;
      };
      const double predicted =
          expansion(optima[static_cast<std::size_t>(s.map_goal)]) - expansion(s.gamma_integrated);
      s.identity_residual = std::abs(s.gap - predicted);
      rep.max_identity_residual = std::max(rep.max_identity_residual, s.identity_residual);
    }
    if (coincident && std::abs(s.gap) > kRegretTolerance) ++rep.zero_gap_violations;
    rep.samples.push_back(std::move(s));
  }
  return rep;
}

UtilityFamily random_quadratic_family(Rng& rng, std::size_t n_goals) {
  std::vector<double> alpha, center, beta;
  for (std::size_t g = 0; g < n_goals; ++g) {
    alpha.push_back(rng.uniform(0.5, 2.0));
    center.push_back(rng.uniform(0.05, 0.85));
    beta.push_back(rng.uniform(0.0, 0.1));
  }
  return UtilityFamily::quadratic(alpha, center, beta);
}

std::vector<double> random_belief(Rng& rng, std::size_t n) {
  std::vector<double> p(n);
  double s = 0.0;
  for (auto& v : p) {
    v = -std::log(1.0 - rng.uniform());
    s += v;
  }
  for (auto& v : p) v /= s;
  return p;
}

Theorem2Sweep theorem2_sweep(int n, std::uint64_t seed) {
  Theorem2Sweep out;
  Rng rng(seed);
  for (int i = 0; i < n; ++i) {
    const auto goals = static_cast<std::size_t>(rng.uniform_int(2, 5));
    UtilityFamily fam = random_quadratic_family(rng, goals);
    if (i % 10 == 9) {
      // Shared optimum c + beta / (2 alpha) = 0.6 for every goal.
      for (std::size_t g = 0; g < goals; ++g) {
        fam.center[g] = 0.6 - fam.beta[g] / (2.0 * fam.alpha[g]);
      }
    }
    const auto belief = random_belief(rng, goals);
    const Theorem2Report rep = verify_theorem2(fam, {belief});
    ++out.samples;
    out.dominance_violations += rep.dominance_violations;
    out.zero_gap_violations += rep.zero_gap_violations;
    out.max_identity_residual = std::max(out.max_identity_residual, rep.max_identity_residual);
    out.rows.push_back(rep.samples.front());
  }
  return out;
}

}  // namespace brace
