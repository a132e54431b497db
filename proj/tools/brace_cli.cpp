// Command-line front door: train, eval, verify-theorems, gen-data, calibrate,
// serve, plotdata. Exit codes: 0 ok, 1 runtime error, 2 usage, 3 config parse.

#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "brace/belief.hpp"
#include "brace/config.hpp"
#include "brace/error.hpp"
#include "brace/evalbench.hpp"
#include "brace/manifest.hpp"
#include "brace/session.hpp"
#include "brace/theory.hpp"
#include "brace/trainer.hpp"
#include "json.hpp"

namespace fs = std::filesystem;
using namespace brace;

namespace {

struct Common {
  std::string config_path;
  std::uint64_t seed = 1;
  std::string out = "out";
};

Config load_config(const Common& c) { return c.config_path.empty() ? Config{} : Config::load(c.config_path); }

void start_run(const std::string& sub, const Common& c, const Config& cfg,
               std::map<std::string, std::string> args) {
  RunManifest m;
  m.subcommand = sub;
  m.config_path = c.config_path;
  m.seed = c.seed;
  m.output_dir = c.out;
  m.config_hash = git_blob_hash(cfg.to_string());
  m.arguments = std::move(args);
  write_manifest(m);
}

std::ofstream open_out(const Common& c, const std::string& name) {
  std::ofstream f(fs::path(c.out) / name);
  if (!f) throw Error(ErrorCode::kIo, "cannot write " + (fs::path(c.out) / name).string());
  return f;
}

std::vector<int> parse_int_list(const std::string& s) {
  std::vector<int> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (item.empty()) continue;
    try {
      out.push_back(std::stoi(item));
    } catch (const std::exception&) {
      throw Error(ErrorCode::kInvalidArgument, "expected a comma-separated integer list, got '" + s + "'");
    }
  }
  return out;
}

std::vector<std::string> split(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

void add_common(CLI::App* app, Common& c) {
  app->add_option("--config", c.config_path, "key = value config file with [sections]");
  app->add_option("--seed", c.seed, "master seed");
  app->add_option("--out", c.out, "output directory");
}

// ---- train --------------------------------------------------------------

struct TrainArgs {
  Common common;
  int budget = -1;
  std::string mode;
  std::string belief_input;
  bool no_curriculum = false;
  bool reward_ablation = false;
  int ablation_episodes = 150;
};

int run_train(const TrainArgs& a) {
  const Config cfg = load_config(a.common);
  TrainConfig tc = TrainConfig::from_config(cfg);
  if (a.budget >= 0) tc.episode_budget = a.budget;
  if (!a.mode.empty()) tc.mode = train_mode_from_string(a.mode);
  if (!a.belief_input.empty()) tc.belief_input = belief_input_from_string(a.belief_input);
  if (a.no_curriculum) tc.curriculum = false;
  tc.validate();
  start_run("train", a.common, cfg,
            {{"budget", std::to_string(tc.episode_budget)},
             {"mode", to_string(tc.mode)},
             {"belief_input", to_string(tc.belief_input)},
             {"curriculum", tc.curriculum ? "true" : "false"},
             {"reward_ablation", a.reward_ablation ? "true" : "false"}});

  if (a.reward_ablation) {
    const int full = tc.episode_budget > 0 ? tc.episode_budget : tc.alpha_horizon_episodes;
    const auto suite = paired_suite(a.common.seed, a.ablation_episodes, {3, 4, 5});
    const auto variants = reward_ablation(tc, a.common.seed, full, 0.4, suite);
    auto f = open_out(a.common, "reward_ablation.csv");
    f << "variant,final_success,mean_gamma,collisions\n";
    for (const auto& v : variants) {
      f << v.name << ',' << v.final_success << ',' << v.mean_gamma << ',' << v.collisions << '\n';
    }
    auto c = open_out(a.common, "reward_ablation_curves.csv");
    c << "variant,window,success_rate\n";
    for (const auto& v : variants) {
      for (std::size_t i = 0; i < v.curve.size(); ++i) c << v.name << ',' << i << ',' << v.curve[i] << '\n';
    }
    return 0;
  }

  auto log = open_out(a.common, "train_log.ndjson");
  const TrainResult r = run_training(tc, a.common.seed, &log);
  save_checkpoint(fs::path(a.common.out) / "checkpoint.json", r.checkpoint);
  nlohmann::ordered_json s;
  s["episodes"] = r.log.size();
  s["final_stage"] = r.final_stage;
  s["stalled"] = r.stalled;
  s["stall_message"] = r.stall_message;
  s["clamp_warnings"] = r.clamp_warnings;
  s["quarantined"] = r.quarantined;
  s["warm_start"] = {{"beta", r.warm_start.params.beta},
                     {"w_theta", r.warm_start.params.w_theta},
                     {"temperature", r.warm_start.params.temperature},
                     {"validation_log_likelihood", r.warm_start.validation_log_likelihood}};
  open_out(a.common, "summary.json") << s.dump(2) << '\n';
  if (r.stalled) {
    std::cerr << "error: curriculum_stall: " << r.stall_message << '\n';
    return 1;
  }
  return 0;
}

// ---- eval ---------------------------------------------------------------

struct EvalArgs {
  Common common;
  std::string conditions = "no_assist,brace";
  std::string checkpoint;
  std::string map_checkpoint;
  std::string uniform_checkpoint;
  int episodes = 300;
  std::string stages = "3,4,5";
  bool degraded = false;
};

int run_eval(const EvalArgs& a) {
  const Config cfg = load_config(a.common);
  const EnvConfig env = EnvConfig::from_config(cfg);
  const PilotConfig pilot = PilotConfig::from_config(cfg);
  const ExpertConfig expert = ExpertConfig::from_config(cfg);
  start_run("eval", a.common, cfg,
            {{"conditions", a.conditions},
             {"checkpoint", a.checkpoint},
             {"map_checkpoint", a.map_checkpoint},
             {"uniform_checkpoint", a.uniform_checkpoint},
             {"episodes", std::to_string(a.episodes)},
             {"stages", a.stages},
             {"degraded", a.degraded ? "true" : "false"}});

  auto load = [](const std::string& path) -> std::optional<Checkpoint> {
    if (path.empty() || !fs::exists(path)) return std::nullopt;
    return load_checkpoint(path);
  };
  const auto main_ck = load(a.checkpoint);
  std::vector<Condition> conds;
  std::vector<std::string> notices;
  for (const auto& name : split(a.conditions)) {
    const auto colon = name.find(':');
    const std::string kind_name = name.substr(0, colon);
    const ConditionKind kind = condition_kind_from_string(kind_name);
    std::optional<Checkpoint> ck = main_ck;
    if (kind == ConditionKind::kMapSequential && !a.map_checkpoint.empty()) ck = load(a.map_checkpoint);
    if (kind == ConditionKind::kUniformPrior && !a.uniform_checkpoint.empty()) ck = load(a.uniform_checkpoint);
    Condition c;
    switch (kind) {
      case ConditionKind::kNoAssist: c = Condition::no_assist(); break;
      case ConditionKind::kFixedGamma: {
        if (colon == std::string::npos) throw Error(ErrorCode::kInvalidArgument, "fixed_gamma needs :<gamma>");
        c = Condition::fixed(std::stod(name.substr(colon + 1)));
        break;
      }
      case ConditionKind::kBrace:
      case ConditionKind::kMapSequential:
      case ConditionKind::kUniformPrior:
        if (!ck) {
          notices.push_back("condition " + kind_name + " skipped: missing checkpoint");
          continue;
        }
        c = kind == ConditionKind::kBrace           ? Condition::brace(*ck)
            : kind == ConditionKind::kMapSequential ? Condition::map_sequential(*ck)
                                                    : Condition::uniform_prior(*ck);
        break;
    }
    conds.push_back(std::move(c));
  }

  const auto suite = paired_suite(a.common.seed, a.episodes, parse_int_list(a.stages));
  SuiteResult r = run_suite(conds, suite, env, pilot, expert);
  r.notices.insert(r.notices.begin(), notices.begin(), notices.end());
  for (const auto& n : r.notices) std::cerr << "notice: " << n << '\n';

  std::vector<Aggregate> rows;
  auto records = open_out(a.common, "episodes.ndjson");
  for (std::size_t i = 0; i < r.conditions.size(); ++i) {
    rows.push_back(aggregate(r.conditions[i], r.episodes[i]));
    for (const auto& e : r.episodes[i]) records << to_ndjson(e) << '\n';
  }
  {
    auto csv = open_out(a.common, "aggregate.csv");
    write_aggregate_csv(csv, rows);
  }
  const auto* brace = r.find("brace");
  const auto* map = r.find("map_sequential");
  if (brace && map) {
    auto bands = open_out(a.common, "uncertainty_bands.csv");
    write_bands_csv(bands, stratify_by_uncertainty(*brace, *map));
  }
  if (a.degraded) {
    if (!main_ck) throw Error(ErrorCode::kInvalidArgument, "--degraded needs --checkpoint");
    const auto rows_d = degraded_expert_suite(
        *main_ck,
        {ExpertMode::kFull, ExpertMode::kHorizonLimited, ExpertMode::kDelayed, ExpertMode::kRandomPerturbed},
        suite, env, pilot, expert);
    auto d = open_out(a.common, "degraded_expert.csv");
    write_degraded_csv(d, rows_d);
  }
  if (!r.paired) {
    std::cerr << "error: unpaired: pilot noise streams differ between conditions\n";
    return 1;
  }
  return 0;
}

// ---- verify-theorems ----------------------------------------------------

struct TheoryArgs {
  Common common;
  int samples = 1000;
};

nlohmann::ordered_json theorem1_json(const std::string& name, const Theorem1Report& r) {
  nlohmann::ordered_json j;
  j["family"] = name;
  j["assumptions_met"] = r.assumptions.met;
  j["assumption_note"] = r.assumptions.reason;
  j["violations"] = r.violations;
  nlohmann::ordered_json sweep = nlohmann::ordered_json::array();
  for (const auto& row : r.lambda_sweep) sweep.push_back({row.lambda, row.entropy, row.gamma_star});
  j["lambda_sweep"] = sweep;
  nlohmann::ordered_json cs = nlohmann::ordered_json::array();
  for (const auto& row : r.constraint_sweep) cs.push_back({row.scale, row.gamma_star});
  j["constraint_sweep"] = cs;
  return j;
}

int run_theorems(const TheoryArgs& a) {
  const Config cfg = load_config(a.common);
  start_run("verify-theorems", a.common, cfg, {{"samples", std::to_string(a.samples)}});
  std::vector<double> scales;
  for (int i = 0; i <= 20; ++i) scales.push_back(0.1 * i);

  const UtilityFamily quad = quadratic_fixture();
  const UtilityFamily pc = progress_constraint_fixture();
  const auto t1q = verify_theorem1(quad, 0, 51, scales, certainty_belief(quad.size(), 0, 0.5));
  const auto t1p = verify_theorem1(pc, 0, 51, scales, certainty_belief(pc.size(), 0, 0.5));
  const Theorem2Sweep t2 = theorem2_sweep(a.samples, a.common.seed);

  nlohmann::ordered_json j;
  j["theorem1"] = {theorem1_json("quadratic", t1q), theorem1_json("progress_constraint", t1p)};
  j["theorem2"] = {{"samples", t2.samples},
                   {"dominance_violations", t2.dominance_violations},
                   {"max_identity_residual", t2.max_identity_residual},
                   {"zero_gap_violations", t2.zero_gap_violations}};
  open_out(a.common, "theorem_report.json") << j.dump(2) << '\n';
  auto csv = open_out(a.common, "regret_samples.csv");
  csv << "goals,map_goal,gamma_integrated,r_map,r_int,gap,identity_residual\n";
  for (const auto& s : t2.rows) {
    char buf[256];
    std::snprintf(buf, sizeof buf, "%zu,%d,%.17g,%.17g,%.17g,%.17g,%.3g\n", s.belief.size(), s.map_goal,
                  s.gamma_integrated, s.r_map, s.r_int, s.gap, s.identity_residual);
    csv << buf;
  }
  const bool ok = t1q.violations.empty() && t1p.violations.empty() && t2.dominance_violations == 0 &&
                  t2.zero_gap_violations == 0 && t2.max_identity_residual <= kRegretTolerance;
  if (!ok) {
    std::cerr << "error: theorem_violation: see theorem_report.json\n";
    return 1;
  }
  return 0;
}

// ---- gen-data / calibrate ---------------------------------------------------

struct GenArgs {
  Common common;
  int n = 300;
};

int run_gen(const GenArgs& a) {
  const Config cfg = load_config(a.common);
  start_run("gen-data", a.common, cfg, {{"n", std::to_string(a.n)}});
  const auto data =
      generate_dataset(a.n, PilotConfig::from_config(cfg), a.common.seed, EnvConfig::from_config(cfg));
  write_dataset(fs::path(a.common.out) / "dataset.ndjson", data);
  return 0;
}

struct CalibArgs {
  Common common;
  std::string data;
};

int run_calibrate(const CalibArgs& a) {
  const Config cfg = load_config(a.common);
  start_run("calibrate", a.common, cfg, {{"data", a.data}});
  const auto data = read_dataset(a.data);
  const CalibrationReport r = calibrate(data, InferenceParams::from_config(cfg));
  nlohmann::ordered_json j;
  j["beta"] = r.params.beta;
  j["w_theta"] = r.params.w_theta;
  j["w_d"] = r.params.w_d;
  j["temperature"] = r.params.temperature;
  j["ema_decay"] = r.params.ema_decay;
  j["train_log_likelihood"] = r.train_log_likelihood;
  j["validation_log_likelihood"] = r.validation_log_likelihood;
  j["accuracy_at_25_50_75"] = r.accuracy;
  j["split"] = {r.n_train, r.n_validation, r.n_test};
  open_out(a.common, "calibration.json") << j.dump(2) << '\n';
  return 0;
}

// ---- serve --------------------------------------------------------------

struct ServeArgs {
  Common common;
  std::string checkpoint;
  unsigned short port = 8765;
  std::string address = "127.0.0.1";
  std::string condition;
  bool lockstep = false;
  int sessions = 0;
};

int run_serve(const ServeArgs& a) {
  const Config cfg = load_config(a.common);
  SessionConfig sc = SessionConfig::from_config(cfg);
  if (!a.condition.empty()) sc.condition = session_condition_from_string(a.condition);
  if (!a.checkpoint.empty()) sc.checkpoint_path = a.checkpoint;
  if (a.lockstep) sc.lockstep = true;
  if (sc.records_path.empty()) sc.records_path = (fs::path(a.common.out) / "session_records.ndjson").string();
  start_run("serve", a.common, cfg,
            {{"checkpoint", sc.checkpoint_path},
             {"port", std::to_string(a.port)},
             {"condition", to_string(sc.condition)},
             {"lockstep", sc.lockstep ? "true" : "false"}});
  std::optional<Checkpoint> ck;
  if (!sc.checkpoint_path.empty()) ck = load_checkpoint(sc.checkpoint_path);
  SessionServer server(sc, ck, EnvConfig::from_config(cfg), ExpertConfig::from_config(cfg));
  const unsigned short port = server.listen(a.address, a.port);
  std::cout << "listening on ws://" << a.address << ':' << port << std::endl;
  server.run(a.sessions);
  return 0;
}

// ---- plotdata -------------------------------------------------------------

struct PlotArgs {
  Common common;
  std::string log;
  std::string checkpoint;
  int window = 50;
  int episodes = 60;
};

std::vector<EpisodeLog> read_train_log(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::kIo, "cannot open " + path);
  std::vector<EpisodeLog> out;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto j = nlohmann::json::parse(line);
    EpisodeLog l;
    l.episode = j.at("episode").get<int>();
    l.stage = j.at("stage").get<int>();
    l.success = j.at("success").get<bool>();
    l.collisions = j.at("collisions").get<int>();
    l.total_reward = j.at("reward").get<double>();
    l.mean_gamma = j.at("mean_gamma").get<double>();
    out.push_back(l);
  }
  return out;
}

int run_plotdata(const PlotArgs& a) {
  const Config cfg = load_config(a.common);
  start_run("plotdata", a.common, cfg,
            {{"log", a.log}, {"checkpoint", a.checkpoint}, {"window", std::to_string(a.window)}});
  if (!a.log.empty()) {
    auto f = open_out(a.common, "learning_curve.csv");
    write_learning_curve_csv(f, read_train_log(a.log), a.window);
  }
  if (!a.checkpoint.empty()) {
    const Condition c = Condition::brace(load_checkpoint(a.checkpoint));
    const auto suite = paired_suite(a.common.seed, a.episodes, {3, 4, 5});
    std::vector<std::vector<StepTrace>> traces;
    for (const auto& s : suite) {
      std::vector<StepTrace> t;
      const auto m = run_episode(c, s, EnvConfig::from_config(cfg), PilotConfig::from_config(cfg),
                                 ExpertConfig::from_config(cfg), &t);
      if (m.success) traces.push_back(std::move(t));
    }
    auto f = open_out(a.common, "gamma_heatmap.csv");
    write_heatmap_csv(f, gamma_heatmap(traces));
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"BRACE shared-autonomy toolkit"};
  app.require_subcommand(1);

  TrainArgs train;
  auto* t = app.add_subcommand("train", "train a policy through the curriculum");
  add_common(t, train.common);
  t->add_option("--budget", train.budget, "episode budget (0: run the curriculum to completion)");
  t->add_option("--mode", train.mode, "end_to_end | baseline_frozen_belief");
  t->add_option("--belief-input", train.belief_input, "full | uniform | map");
  t->add_flag("--no-curriculum", train.no_curriculum, "sample stages uniformly");
  t->add_flag("--reward-ablation", train.reward_ablation, "train each single-weight-zeroed reward at 40% budget");
  t->add_option("--ablation-episodes", train.ablation_episodes, "evaluation episodes per ablation variant");

  EvalArgs ev;
  auto* e = app.add_subcommand("eval", "run conditions on a paired suite");
  add_common(e, ev.common);
  e->add_option("--conditions", ev.conditions, "comma list: no_assist, fixed_gamma:<g>, map_sequential, uniform_prior, brace");
  e->add_option("--checkpoint", ev.checkpoint, "BRACE checkpoint");
  e->add_option("--map-checkpoint", ev.map_checkpoint, "checkpoint trained on one-hot beliefs");
  e->add_option("--uniform-checkpoint", ev.uniform_checkpoint, "checkpoint trained on uniform beliefs");
  e->add_option("--episodes", ev.episodes, "episodes in the suite");
  e->add_option("--seeds", ev.common.seed, "suite seed (same as --seed)");
  e->add_option("--stages", ev.stages, "comma list of stages the suite cycles through");
  e->add_flag("--degraded", ev.degraded, "also run the degraded-expert suite");

  TheoryArgs th;
  auto* v = app.add_subcommand("verify-theorems", "numerical checks of the monotonicity and regret results");
  add_common(v, th.common);
  v->add_option("--samples", th.samples, "random families for the regret sweep");

  GenArgs gen;
  auto* g = app.add_subcommand("gen-data", "generate labelled pilot trajectories");
  add_common(g, gen.common);
  g->add_option("--n", gen.n, "trajectories");

  CalibArgs cal;
  auto* c = app.add_subcommand("calibrate", "fit inference parameters to a dataset");
  add_common(c, cal.common);
  c->add_option("--data", cal.data, "dataset.ndjson")->required();

  ServeArgs sv;
  auto* s = app.add_subcommand("serve", "host live sessions over websocket");
  add_common(s, sv.common);
  s->add_option("--checkpoint", sv.checkpoint, "checkpoint for the brace condition");
  s->add_option("--port", sv.port, "TCP port (0 picks one)");
  s->add_option("--address", sv.address, "bind address");
  s->add_option("--condition", sv.condition, "no_assist | manual_gamma | brace");
  s->add_flag("--lockstep", sv.lockstep, "advance one tick per input frame");
  s->add_option("--sessions", sv.sessions, "exit after this many sessions (0: run forever)");

  PlotArgs pl;
  auto* p = app.add_subcommand("plotdata", "emit figure series");
  add_common(p, pl.common);
  p->add_option("--log", pl.log, "train_log.ndjson for learning curves");
  p->add_option("--checkpoint", pl.checkpoint, "checkpoint for the gamma heat map");
  p->add_option("--window", pl.window, "learning-curve window");
  p->add_option("--episodes", pl.episodes, "episodes for the heat map");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& err) {
    return app.exit(err);
  } catch (const CLI::CallForAllHelp& err) {
    return app.exit(err);
  } catch (const CLI::ParseError& err) {
    app.exit(err);
    return 2;
  }

  try {
    if (*t) return run_train(train);
    if (*e) return run_eval(ev);
    if (*v) return run_theorems(th);
    if (*g) return run_gen(gen);
    if (*c) return run_calibrate(cal);
    if (*s) return run_serve(sv);
    if (*p) return run_plotdata(pl);
  } catch (const ConfigError& err) {
    std::cerr << "error: config_parse: line " << err.line() << ": " << err.what() << '\n';
    return 3;
  } catch (const Error& err) {
    std::cerr << "error: " << to_string(err.code()) << ": " << err.what() << '\n';
    return 1;
  } catch (const std::exception& err) {
    std::cerr << "error: internal: " << err.what() << '\n';
    return 1;
  }
  return 2;
}
