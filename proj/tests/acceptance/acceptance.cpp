// Acceptance run: one PASS/FAIL line per criterion. Trains the policies it
// needs from scratch (about half an hour on one core) and leaves checkpoints,
// tables and the per-line report in the output directory (argv[1]).

#include <sys/wait.h>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "../gradcheck.hpp"
#include "../oracles.hpp"
#include "brace/belief.hpp"
#include "brace/evalbench.hpp"
#include "brace/theory.hpp"
#include "brace/trainer.hpp"

namespace fs = std::filesystem;
using namespace brace;

namespace {

// Pinned thresholds.
constexpr double kRegretTol = 1e-9;
constexpr double kIdentityTol = 1e-9;
constexpr double kBayesRelTol = 1e-9;
constexpr double kGradRelTol = 1e-4;
constexpr double kSuccessMargin = 0.15;
constexpr double kEfficiencyMargin = 0.10;
constexpr double kMonotoneTol = 1e-12;
constexpr double kFastSeconds = 60.0;

constexpr std::uint64_t kTrainSeed = 7;
constexpr std::uint64_t kSuiteSeed = 11;
constexpr std::uint64_t kDegradedSeed = 13;
constexpr int kSuiteEpisodes = 300;
constexpr int kDegradedEpisodes = 150;
constexpr int kMinSuccessfulEpisodes = 200;

struct Report {
  std::ofstream file;
  int failures = 0;

  void line(const std::string& name, bool pass, const std::string& detail) {
    const std::string text = std::string(pass ? "PASS " : "FAIL ") + name + " | " + detail;
    std::cout << text << std::endl;
    file << text << '\n';
    file.flush();
    if (!pass) ++failures;
  }
};

void progress(const std::string& msg) { std::cerr << "[acceptance] " << msg << std::endl; }

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::string fmt(const char* f, double a) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, a);
  return buf;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// ---- fast numerical criteria -------------------------------------------

void theorem2(Report& rep) {
  const auto t0 = std::chrono::steady_clock::now();
  const Theorem2Sweep s = theorem2_sweep(1000, 1);
  int dominance = 0;
  for (const auto& row : s.rows) {
    if (row.r_map < row.r_int - kRegretTol) ++dominance;
  }
  const double secs = seconds_since(t0);
  const bool pass = s.samples >= 1000 && dominance == 0 && s.dominance_violations == 0 &&
                    s.max_identity_residual <= kIdentityTol && s.zero_gap_violations == 0 && secs < kFastSeconds;
  rep.line("theorem2_regret_dominance", pass,
           std::to_string(s.samples) + " samples, " + std::to_string(dominance) + " dominance violations, " +
               "max identity residual " + fmt("%.2e", s.max_identity_residual) + ", zero-gap violations " +
               std::to_string(s.zero_gap_violations) + ", " + fmt("%.1f s", secs));
}

void theorem1(Report& rep) {
  const auto t0 = std::chrono::steady_clock::now();
  std::vector<double> scales;
  for (int i = 0; i <= 20; ++i) scales.push_back(0.1 * i);
  std::string detail;
  bool pass = true;
  for (const auto& [name, fam] : {std::pair{"quadratic", quadratic_fixture()},
                                  std::pair{"progress_constraint", progress_constraint_fixture()}}) {
    const std::vector<double> uniform(fam.size(), 1.0 / static_cast<double>(fam.size()));
    const Theorem1Report r = verify_theorem1(fam, 0, 51, scales, uniform);
    // Independent recheck of both sweeps.
    int drops = 0;
    for (std::size_t i = 1; i < r.lambda_sweep.size(); ++i) {
      if (r.lambda_sweep[i].gamma_star < r.lambda_sweep[i - 1].gamma_star - kMonotoneTol) ++drops;
    }
    for (std::size_t i = 1; i < r.constraint_sweep.size(); ++i) {
      if (r.constraint_sweep[i].gamma_star < r.constraint_sweep[i - 1].gamma_star - kMonotoneTol) ++drops;
    }
    const bool ok = r.assumptions.met && r.violations.empty() && drops == 0 && r.lambda_sweep.size() == 51 &&
                    r.constraint_sweep.size() == scales.size();
    pass = pass && ok;
    detail += std::string(name) + ": assumptions " + (r.assumptions.met ? "met" : "unmet") + ", " +
              std::to_string(r.violations.size() + static_cast<std::size_t>(drops)) + " violations, gamma* " +
              fmt("%.4f", r.lambda_sweep.empty() ? 0.0 : r.lambda_sweep.front().gamma_star) + " -> " +
              fmt("%.4f", r.lambda_sweep.empty() ? 0.0 : r.lambda_sweep.back().gamma_star) + "; ";
  }
  const double secs = seconds_since(t0);
  pass = pass && secs < kFastSeconds;
  rep.line("theorem1_monotonicity", pass, detail + fmt("%.1f s", secs));
}

void bayes_oracle(Report& rep) {
  const auto t0 = std::chrono::steady_clock::now();
  Rng rng(99);
  double worst = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    const int n = rng.uniform_int(2, 5);
    const int steps = rng.uniform_int(1, 60);
    std::vector<Goal> goals;
    std::vector<Vec2> points;
    for (int g = 0; g < n; ++g) {
      points.push_back({rng.uniform(0, 800), rng.uniform(0, 600)});
      goals.push_back(Goal{g, points.back(), 20.0});
    }
    InferenceParams p;
    p.ema_decay = 0.0;
    p.temperature = 1.0;
    p.beta = rng.uniform(1.0, 10.0);
    p.w_theta = rng.uniform(0.3, 0.9);
    p.w_d = 1.0 - p.w_theta;
    std::vector<Vec2> pos, in;
    Vec2 x{rng.uniform(0, 800), rng.uniform(0, 600)};
    BeliefState b = uniform_belief(static_cast<std::size_t>(n));
    for (int t = 0; t < steps; ++t) {
      const Vec2 h = clip_norm({rng.uniform(-10, 10), rng.uniform(-10, 10)}, 10.0);
      pos.push_back(x);
      in.push_back(h);
      b = update_belief(b, x, goals, h, p);
      x += h;
    }
    oracle::NoisyRational o;
    o.beta = p.beta;
    o.w_theta = p.w_theta;
    o.w_d = p.w_d;
    o.d_slow = p.d_slow;
    o.v_max = p.v_max;
    o.eps_mag = p.eps_mag;
    const auto expected = oracle::bayes_product(points, pos, in, o);
    for (int g = 0; g < n; ++g) {
      if (expected[static_cast<std::size_t>(g)] > 1e-300) {
        worst = std::max(worst, oracle::relative_error(b.probs[static_cast<std::size_t>(g)],
                                                       expected[static_cast<std::size_t>(g)], 1e-300));
      }
    }
  }
  const double secs = seconds_since(t0);
  rep.line("bayes_oracle_equivalence", worst <= kBayesRelTol && secs < kFastSeconds,
           "100 trajectories, worst relative error " + fmt("%.2e", worst) + ", " + fmt("%.1f s", secs));
}

void gradients(Report& rep) {
  const auto t0 = std::chrono::steady_clock::now();
  Rng rng(31);
  double worst_param = 0.0, worst_input = 0.0;
  int checked = 0;
  for (int i = 0; i < 20; ++i) {
    const PolicyNet net = PolicyNet::create(1000 + static_cast<std::uint64_t>(i));
    const gradcheck::Result r = gradcheck::check(net, rng, 200);
    worst_param = std::max(worst_param, r.max_param_error);
    worst_input = std::max(worst_input, r.max_input_error);
    checked += r.params_checked;
  }
  const double secs = seconds_since(t0);
  rep.line("gradient_finite_difference", worst_param < kGradRelTol && worst_input < kGradRelTol && secs < kFastSeconds,
           "20 nets, " + std::to_string(checked) + " parameters, worst parameter error " + fmt("%.2e", worst_param) +
               ", worst input error " + fmt("%.2e", worst_input) + ", " + fmt("%.1f s", secs));
}

// ---- training and evaluation -------------------------------------------

TrainResult train(const fs::path& out, const std::string& name, TrainConfig cfg) {
  const auto t0 = std::chrono::steady_clock::now();
  progress("training " + name);
  std::ofstream log(out / (name + "_log.ndjson"));
  TrainResult r = run_training(cfg, kTrainSeed, &log);
  save_checkpoint(out / (name + ".json"), r.checkpoint);
  progress(name + ": " + std::to_string(r.log.size()) + " episodes, final stage " + std::to_string(r.final_stage) +
           (r.stalled ? " (stalled)" : "") + fmt(", %.0f s", seconds_since(t0)));
  return r;
}

std::string band_text(const std::vector<BandRow>& rows) {
  std::string s;
  for (const auto& b : rows) {
    s += b.band + " n=" + std::to_string(b.episodes) + " " +
         (b.insufficient ? std::string("insufficient data") : fmt("%+.3f", b.improvement)) + "; ";
  }
  return s;
}

void write_csv(const fs::path& p, const std::vector<Aggregate>& rows) {
  std::ofstream f(p);
  write_aggregate_csv(f, rows);
}

bool deterministic_cli_training(const fs::path& out, std::string& detail) {
  const fs::path dir = out / "determinism";
  fs::remove_all(dir);
  const std::string cmd = std::string(BRACE_CLI_PATH) + " train --budget 40 --seed 3 --out " + dir.string() +
                          " >/dev/null 2>&1";
  const char* files[] = {"manifest.json", "train_log.ndjson", "checkpoint.json", "summary.json"};
  std::vector<std::string> first;
  for (int run = 0; run < 2; ++run) {
    const int raw = std::system(cmd.c_str());
    if (!WIFEXITED(raw) || WEXITSTATUS(raw) != 0) {
      detail = "train run " + std::to_string(run + 1) + " failed";
      return false;
    }
    for (std::size_t i = 0; i < std::size(files); ++i) {
      const std::string bytes = slurp(dir / files[i]);
      if (run == 0) {
        first.push_back(bytes);
      } else if (bytes != first[i] || bytes.empty()) {
        detail = std::string(files[i]) + " differs between identical runs";
        return false;
      }
    }
  }
  detail = "two runs of the same manifest: manifest, log (" + std::to_string(first[1].size()) +
           " bytes) and checkpoint (" + std::to_string(first[2].size()) + " bytes) byte-identical";
  return true;
}

}  // namespace

int main(int argc, char** argv) {
  const fs::path out = argc > 1 ? fs::path(argv[1]) : fs::path("acceptance_out");
  fs::create_directories(out);
  Report rep;
  rep.file.open(out / "acceptance.txt");
  const auto start = std::chrono::steady_clock::now();

  theorem2(rep);
  theorem1(rep);
  bayes_oracle(rep);
  gradients(rep);

  // Full curriculum, then every comparison policy at the same episode budget.
  const TrainResult full = train(out, "brace", TrainConfig{});
  const int budget = static_cast<int>(full.log.size());
  TrainConfig uniform_cfg;
  uniform_cfg.belief_input = BeliefInput::kUniform;
  uniform_cfg.episode_budget = budget;
  const TrainResult uniform = train(out, "uniform", uniform_cfg);
  TrainConfig map_cfg;
  map_cfg.belief_input = BeliefInput::kMapOneHot;
  map_cfg.episode_budget = budget;
  const TrainResult map = train(out, "map", map_cfg);
  TrainConfig flat_cfg;
  flat_cfg.curriculum = false;
  flat_cfg.episode_budget = budget;
  const TrainResult flat = train(out, "no_curriculum", flat_cfg);

  progress("evaluating the paired suite");
  const auto suite = paired_suite(kSuiteSeed, kSuiteEpisodes, {3, 4, 5});
  Condition flat_cond = Condition::brace(flat.checkpoint);
  flat_cond.label = "no_curriculum";
  const SuiteResult main = run_suite({Condition::no_assist(), Condition::brace(full.checkpoint),
                                      Condition::uniform_prior(uniform.checkpoint), flat_cond},
                                     suite, {}, {}, {});
  std::vector<Aggregate> aggs;
  for (std::size_t i = 0; i < main.conditions.size(); ++i) aggs.push_back(aggregate(main.conditions[i], main.episodes[i]));
  write_csv(out / "aggregate.csv", aggs);
  const Aggregate& none = aggs[0];
  const Aggregate& brace = aggs[1];
  const Aggregate& uni = aggs[2];
  const Aggregate& noc = aggs[3];

  {
    const double ds = brace.success.mean - none.success.mean;
    const double de = brace.path_efficiency.mean - none.path_efficiency.mean;
    rep.line("training_efficacy", main.paired && ds >= kSuccessMargin && de >= kEfficiencyMargin,
             "success " + fmt("%.3f", brace.success.mean) + " vs " + fmt("%.3f", none.success.mean) + " (" +
                 fmt("%+.3f", ds) + ", need +0.15); path efficiency " + fmt("%.3f", brace.path_efficiency.mean) +
                 " vs " + fmt("%.3f", none.path_efficiency.mean) + " (" + fmt("%+.3f", de) + ", need +0.10); " +
                 std::to_string(kSuiteEpisodes) + " paired episodes");
  }
  rep.line("belief_vs_uniform_prior",
           main.paired && brace.success.mean > uni.success.mean && brace.steps.mean < uni.steps.mean,
           "success " + fmt("%.3f", brace.success.mean) + " vs " + fmt("%.3f", uni.success.mean) + ", steps " +
               fmt("%.1f", brace.steps.mean) + " vs " + fmt("%.1f", uni.steps.mean) + ", budget " +
               std::to_string(budget) + " episodes each");

  {
    progress("evaluating stage-4 ambiguity suite");
    const auto stage4 = paired_suite(kSuiteSeed, kSuiteEpisodes, {4});
    const SuiteResult r = run_suite({Condition::brace(full.checkpoint), Condition::map_sequential(map.checkpoint)},
                                    stage4, {}, {}, {});
    const Aggregate a = aggregate("brace", r.episodes[0]);
    const Aggregate b = aggregate("map_sequential", r.episodes[1]);
    const auto bands = stratify_by_uncertainty(r.episodes[0], r.episodes[1]);
    std::ofstream f(out / "uncertainty_bands.csv");
    write_bands_csv(f, bands);
    const bool faster = a.steps.mean < b.steps.mean;
    const bool trend = !bands[0].insufficient && !bands[2].insufficient && bands[2].improvement > bands[0].improvement;
    rep.line("map_sequential_gap", r.paired && faster && trend,
             "stage-4 steps " + fmt("%.1f", a.steps.mean) + " vs " + fmt("%.1f", b.steps.mean) +
                 (faster ? " (faster)" : " (not faster)") + "; bands " + band_text(bands) +
                 (trend ? "trend holds" : "trend not shown"));
  }

  {
    const auto& eps = main.episodes[1];
    double q_first = 0.0, q_last = 0.0, near = 0.0, far = 0.0;
    int ok = 0, near_n = 0, far_n = 0;
    for (const auto& m : eps) {
      if (!m.success) continue;
      ++ok;
      q_first += m.gamma_by_quartile[0];
      q_last += m.gamma_by_quartile[3];
      near += m.gamma_near_sum;
      near_n += m.gamma_near_count;
      far += m.gamma_far_sum;
      far_n += m.gamma_far_count;
    }
    q_first /= std::max(ok, 1);
    q_last /= std::max(ok, 1);
    const double g_near = near_n ? near / near_n : 0.0;
    const double g_far = far_n ? far / far_n : 0.0;
    rep.line("gamma_dynamics", ok >= kMinSuccessfulEpisodes && q_first < q_last && near_n > 0 && g_near > g_far,
             std::to_string(ok) + " successful episodes; quartile gamma " + fmt("%.3f", q_first) + " -> " +
                 fmt("%.3f", q_last) + "; within d_safe " + fmt("%.3f", g_near) + " (" + std::to_string(near_n) +
                 " steps) vs elsewhere " + fmt("%.3f", g_far) + " (" + std::to_string(far_n) + " steps)");
  }

  {
    progress("evaluating degraded experts");
    const auto dsuite = paired_suite(kDegradedSeed, kDegradedEpisodes, {3, 4, 5});
    const auto rows = degraded_expert_suite(
        full.checkpoint,
        {ExpertMode::kFull, ExpertMode::kHorizonLimited, ExpertMode::kDelayed, ExpertMode::kRandomPerturbed}, dsuite,
        {}, {}, {});
    std::ofstream f(out / "degraded_expert.csv");
    write_degraded_csv(f, rows);
    bool monotone = true;
    std::string detail;
    for (std::size_t i = 0; i < rows.size(); ++i) {
      if (i > 0 && rows[i].delta < rows[i - 1].delta - kMonotoneTol) monotone = false;
      detail += to_string(rows[i].mode) + " expert " + fmt("%.3f", rows[i].expert_success) + " brace " +
                fmt("%.3f", rows[i].brace_success) + " delta " + fmt("%+.3f", rows[i].delta) + "; ";
    }
    rep.line("degraded_expert_resilience", monotone, detail + std::to_string(kDegradedEpisodes) + " episodes");
  }

  rep.line("curriculum_ablation", brace.success.mean >= noc.success.mean,
           "success with curriculum " + fmt("%.3f", brace.success.mean) + " vs without " +
               fmt("%.3f", noc.success.mean) + " at " + std::to_string(budget) + " episodes");

  {
    std::string detail;
    const bool pass = deterministic_cli_training(out, detail);
    rep.line("determinism", pass, detail);
  }

  progress(fmt("done in %.0f s", seconds_since(start)) + ", " + std::to_string(rep.failures) + " failing");
  return rep.failures == 0 ? 0 : 1;
}
