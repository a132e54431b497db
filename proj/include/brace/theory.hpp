#ifndef BRACE_THEORY_HPP_
#define BRACE_THEORY_HPP_

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "brace/geometry.hpp"
#include "brace/rng.hpp"

namespace brace {

enum class FamilyForm { kQuadratic, kProgressConstraint };

std::string to_string(FamilyForm form);

// Per-goal utilities of the assistance level gamma in [0, 1].
//   quadratic:            U_g = -alpha_g (gamma - center_g)^2 - beta_g (1 - gamma)
//   progress_constraint:  U_g = -alpha_g |x + a_g(gamma) - goal_g|^2
//                               - beta_g exp(-dist(x + a_g(gamma), obstacle) / d_safe)
// with a_g(gamma) = (1 - gamma) h + gamma w_g and dist measured to the
// obstacle surface (zero inside).
struct UtilityFamily {
  FamilyForm form = FamilyForm::kQuadratic;
  std::vector<double> alpha;
  std::vector<double> beta;
  std::vector<double> center;

  Vec2 x;
  Vec2 h;
  std::vector<Vec2> goals;
  std::vector<Vec2> expert_actions;
  Vec2 obstacle;
  double obstacle_radius = 0.0;
  double d_safe = 1.0;

  std::size_t size() const { return alpha.size(); }
  double utility(std::size_t g, double gamma) const;
  // d/d(beta_g) of dU_g/dgamma, by central differences.
  double mixed_partial(std::size_t g, double gamma) const;
  // Multiplies every beta_g by `scale`.
  UtilityFamily with_constraint_scale(double scale) const;

  static UtilityFamily quadratic(std::vector<double> alpha, std::vector<double> center,
                                 std::vector<double> beta = {});
};

// Two-goal fixture used by the checks: goal 0 sits off the human's heading
// and wants more assistance than goal 1, which lies nearly along it.
UtilityFamily progress_constraint_fixture();

// Three quadratic goals; goal 0 wants the most assistance.
UtilityFamily quadratic_fixture();

// p(g*) = lambda + (1 - lambda)/n, others (1 - lambda)/n.
std::vector<double> certainty_belief(std::size_t n, std::size_t true_goal, double lambda);

inline constexpr double kGammaGridStep = 1e-4;

// argmax over [0, 1] of f: dense grid (lowest gamma wins ties), golden-section
// refinement on the neighbouring cells, then a guarded Newton polish.
// Throws kNonFiniteUtility naming the gamma where f is not finite.
double maximize_on_unit_interval(const std::function<double(double)>& f);

double expected_utility(std::span<const double> belief, const UtilityFamily& fam, double gamma);
double optimal_gamma(std::span<const double> belief, const UtilityFamily& fam);
std::vector<double> per_goal_optima(const UtilityFamily& fam);

// E_g[U_g(gamma*_g) - U_g(gamma)].
double regret(std::span<const double> belief, const UtilityFamily& fam, double gamma,
              std::span<const double> optima);

struct AssumptionCheck {
  bool met = true;
  std::string reason;
};

// Strict concavity of each U_g on the grid and a non-negative mixed partial
// in the constraint weight.
AssumptionCheck check_assumptions(const UtilityFamily& fam);

struct LambdaRow {
  double lambda = 0.0;
  double entropy = 0.0;
  double gamma_star = 0.0;
};

struct ScaleRow {
  double scale = 0.0;
  double gamma_star = 0.0;
};

struct Theorem1Report {
  AssumptionCheck assumptions;
  std::vector<LambdaRow> lambda_sweep;
  std::vector<ScaleRow> constraint_sweep;
  std::vector<std::string> violations;
};

inline constexpr double kMonotoneTolerance = 1e-9;

// Certainty sweep with `lambda_points` evenly spaced values in [0, 1] around
// `true_goal`, then a constraint-weight sweep over `scales` at `belief`.
Theorem1Report verify_theorem1(const UtilityFamily& fam, std::size_t true_goal,
                               int lambda_points, std::span<const double> scales,
                               std::span<const double> belief);

struct RegretSample {
  std::vector<double> belief;
  int map_goal = 0;
  double gamma_integrated = 0.0;
  double r_map = 0.0;
  double r_int = 0.0;
  double gap = 0.0;
  // For quadratics: |gap - (MAP expansion - integrated expansion)|.
  double identity_residual = 0.0;
};

struct Theorem2Report {
  std::vector<RegretSample> samples;
  int dominance_violations = 0;
  double max_identity_residual = 0.0;
  int zero_gap_violations = 0;  // coincident optima with a nonzero gap
};

inline constexpr double kRegretTolerance = 1e-9;

Theorem2Report verify_theorem2(const UtilityFamily& fam,
                               const std::vector<std::vector<double>>& beliefs);

// Random quadratic family with interior per-goal optima.
UtilityFamily random_quadratic_family(Rng& rng, std::size_t n_goals);
// Dirichlet(1) sample.
std::vector<double> random_belief(Rng& rng, std::size_t n);

struct Theorem2Sweep {
  int samples = 0;
  int dominance_violations = 0;
  double max_identity_residual = 0.0;
  int zero_gap_violations = 0;
  std::vector<RegretSample> rows;
};

// `n` random (family, belief) pairs with |G| drawn from {2, ..., 5}; every
// tenth family has coincident optima to exercise the zero-gap case.
Theorem2Sweep theorem2_sweep(int n, std::uint64_t seed);

}  // namespace brace

#endif  // BRACE_THEORY_HPP_
