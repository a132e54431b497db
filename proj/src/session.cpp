#include "brace/session.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <fstream>
#include <mutex>
#include <thread>

#include <boost/asio/ip/tcp.hpp>
#include <boost/beast/core.hpp>
#include <boost/beast/websocket.hpp>

#include "brace/error.hpp"
#include "json.hpp"

namespace brace {

namespace beast = boost::beast;
namespace websocket = beast::websocket;
namespace net = boost::asio;
using tcp = net::ip::tcp;
using nlohmann::json;

namespace {

json vec_json(const Vec2& v) { return json::array({v.x, v.y}); }

Vec2 vec_from(const json& j) {
  if (!j.is_array() || j.size() != 2 || !j[0].is_number() || !j[1].is_number()) {
    throw Error(ErrorCode::kInvalidArgument, "expected a [x, y] pair");
  }
  return {j[0].get<double>(), j[1].get<double>()};
}

ConditionKind condition_kind(SessionCondition c) {
  switch (c) {
    case SessionCondition::kNoAssist: return ConditionKind::kNoAssist;
    case SessionCondition::kManualGamma: return ConditionKind::kFixedGamma;
    case SessionCondition::kBrace: return ConditionKind::kBrace;
  }
  return ConditionKind::kNoAssist;
}

Condition make_condition(const SessionConfig& cfg, std::optional<Checkpoint> ckpt) {
  if (cfg.condition == SessionCondition::kBrace) {
    if (!ckpt) throw Error(ErrorCode::kInvalidArgument, "brace sessions need a checkpoint");
    return Condition::brace(std::move(*ckpt));
  }
  Condition c;
  c.kind = condition_kind(cfg.condition);
  c.label = to_string(cfg.condition);
  if (ckpt) c.inference = ckpt->inference;
  return c;
}

double percentile(std::vector<double> v, double q) {
  if (v.empty()) return 0.0;
  std::sort(v.begin(), v.end());
  const double pos = q * static_cast<double>(v.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, v.size() - 1);
  return v[lo] + (pos - static_cast<double>(lo)) * (v[hi] - v[lo]);
}

double ms_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
}

}  // namespace

std::string to_string(SessionCondition c) {
  switch (c) {
    case SessionCondition::kNoAssist: return "no_assist";
    case SessionCondition::kManualGamma: return "manual_gamma";
    case SessionCondition::kBrace: return "brace";
  }
  return "no_assist";
}

SessionCondition session_condition_from_string(const std::string& name) {
  if (name == "no_assist") return SessionCondition::kNoAssist;
  if (name == "manual_gamma") return SessionCondition::kManualGamma;
  if (name == "brace") return SessionCondition::kBrace;
  throw Error(ErrorCode::kInvalidArgument, "unknown session condition '" + name + "'");
}

void SessionConfig::validate() const {
  if (!(tick_rate >= 10.0 && tick_rate <= 60.0)) {
    throw Error(ErrorCode::kInvalidArgument, "tick_rate must be in [10, 60] Hz");
  }
  if (!(stale_after_s > 0.0)) throw Error(ErrorCode::kInvalidArgument, "stale_after_s must be > 0");
  if (collision_limit < 1) throw Error(ErrorCode::kInvalidArgument, "collision_limit must be >= 1");
}

SessionConfig SessionConfig::from_config(const Config& c) {
  SessionConfig s;
  s.tick_rate = c.get_double("session.tick_rate", s.tick_rate);
  s.env_seed = static_cast<std::uint64_t>(c.get_int("session.env_seed", static_cast<int>(s.env_seed)));
  s.stage = stage_from_int(c.get_int("session.stage", to_int(s.stage)));
  s.condition = session_condition_from_string(c.get_string("session.condition", to_string(s.condition)));
  s.checkpoint_path = c.get_string("session.checkpoint", s.checkpoint_path);
  s.participant = c.get_string("session.participant", s.participant);
  s.stale_after_s = c.get_double("session.stale_after_s", s.stale_after_s);
  s.collision_limit = c.get_int("session.collision_limit", s.collision_limit);
  s.lockstep = c.get_bool("session.lockstep", s.lockstep);
  s.records_path = c.get_string("session.records", s.records_path);
  s.validate();
  return s;
}

FrameIn parse_frame_in(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw Error(ErrorCode::kInvalidArgument, std::string("malformed frame: ") + e.what());
  }
  if (!j.is_object() || j.value("type", "input") != "input") {
    throw Error(ErrorCode::kInvalidArgument, "expected an input frame");
  }
  FrameIn f;
  if (!j.contains("tick") || !j["tick"].is_number_integer()) {
    throw Error(ErrorCode::kInvalidArgument, "input frame needs an integer tick");
  }
  f.tick = j["tick"].get<std::int64_t>();
  if (!j.contains("input")) throw Error(ErrorCode::kInvalidArgument, "input frame needs an input pair");
  const Vec2 in = vec_from(j["input"]);
  if (!in.finite()) throw Error(ErrorCode::kInvalidArgument, "input must be finite");
  f.input = {std::clamp(in.x, -1.0, 1.0), std::clamp(in.y, -1.0, 1.0)};
  if (j.contains("manual_gamma") && !j["manual_gamma"].is_null()) {
    if (!j["manual_gamma"].is_number()) throw Error(ErrorCode::kInvalidArgument, "manual_gamma must be a number");
    const double g = j["manual_gamma"].get<double>();
    if (!std::isfinite(g)) throw Error(ErrorCode::kInvalidArgument, "manual_gamma must be finite");
    f.manual_gamma = std::clamp(g, 0.0, 1.0);
  }
  return f;
}

std::string to_json(const FrameIn& f) {
  json j = {{"type", "input"}, {"tick", f.tick}, {"input", vec_json(f.input)}};
  if (f.manual_gamma) j["manual_gamma"] = *f.manual_gamma;
  return j.dump();
}

std::string to_string(TrialStatus s) {
  switch (s) {
    case TrialStatus::kRunning: return "running";
    case TrialStatus::kSuccess: return "success";
    case TrialStatus::kCollisionLimit: return "collision_limit";
    case TrialStatus::kTimeout: return "timeout";
    case TrialStatus::kAborted: return "aborted";
  }
  return "running";
}

namespace {

TrialStatus trial_status_from_string(const std::string& s) {
  for (auto t : {TrialStatus::kRunning, TrialStatus::kSuccess, TrialStatus::kCollisionLimit,
                 TrialStatus::kTimeout, TrialStatus::kAborted}) {
    if (to_string(t) == s) return t;
  }
  throw Error(ErrorCode::kInvalidArgument, "unknown trial status '" + s + "'");
}

}  // namespace

std::string to_json(const FrameOut& f) {
  json goals = json::array();
  for (const auto& g : f.goals) goals.push_back({{"id", g.id}, {"position", vec_json(g.position)}, {"radius", g.radius}});
  json obstacles = json::array();
  for (const auto& o : f.obstacles) obstacles.push_back({{"position", vec_json(o.position)}, {"radius", o.radius}});
  json trail = json::array();
  for (const auto& p : f.trail) trail.push_back(vec_json(p));
  const json j = {{"type", "frame"},
                  {"tick", f.tick},
                  {"cursor", vec_json(f.cursor)},
                  {"goals", goals},
                  {"obstacles", obstacles},
                  {"belief", f.belief},
                  {"gamma", f.gamma},
                  {"map_goal_id", f.map_goal_id},
                  {"status", to_string(f.status)},
                  {"stale_input", f.stale_input},
                  {"trail", trail}};
  return j.dump();
}

FrameOut parse_frame_out(const std::string& text) {
  FrameOut f;
  try {
    const json j = json::parse(text);
    f.tick = j.at("tick").get<std::int64_t>();
    f.cursor = vec_from(j.at("cursor"));
    for (const auto& g : j.at("goals")) {
      f.goals.push_back({g.at("id").get<int>(), vec_from(g.at("position")), g.at("radius").get<double>()});
    }
    for (const auto& o : j.at("obstacles")) {
      f.obstacles.push_back({vec_from(o.at("position")), o.at("radius").get<double>()});
    }
    f.belief = j.at("belief").get<std::vector<double>>();
    f.gamma = j.at("gamma").get<double>();
    f.map_goal_id = j.at("map_goal_id").get<int>();
    f.status = trial_status_from_string(j.at("status").get<std::string>());
    f.stale_input = j.at("stale_input").get<bool>();
    for (const auto& p : j.at("trail")) f.trail.push_back(vec_from(p));
  } catch (const json::exception& e) {
    throw Error(ErrorCode::kInvalidArgument, std::string("malformed frame: ") + e.what());
  }
  return f;
}

std::string handshake_json(const SessionConfig& cfg) {
  const json j = {{"type", "handshake"},
                  {"version", kWireVersion},
                  {"config",
                   {{"tick_rate", cfg.tick_rate},
                    {"env_seed", cfg.env_seed},
                    {"stage", to_int(cfg.stage)},
                    {"condition", to_string(cfg.condition)},
                    {"checkpoint", cfg.checkpoint_path},
                    {"participant", cfg.participant},
                    {"stale_after_s", cfg.stale_after_s},
                    {"collision_limit", cfg.collision_limit},
                    {"lockstep", cfg.lockstep}}}};
  return j.dump();
}

SessionCore::SessionCore(const SessionConfig& cfg, std::optional<Checkpoint> checkpoint, const EnvConfig& env,
                         const ExpertConfig& expert)
    : cfg_(cfg),
      env_(env),
      expert_(expert),
      condition_(make_condition(cfg, std::move(checkpoint))),
      state_(generate_environment(cfg.env_seed, cfg.stage, env)),
      memory_(mix_seed(cfg.env_seed, kExpertMemoryStream)),
      assistant_(condition_, state_.goals.size()),
      recorder_(condition_.name(), cfg.env_seed, cfg.stage, state_, env) {
  cfg_.validate();
  trail_.push_back(state_.cursor);
}

FrameOut SessionCore::snapshot() const {
  FrameOut f;
  f.tick = tick_;
  f.cursor = state_.cursor;
  f.goals = state_.goals;
  f.obstacles = state_.obstacles;
  f.belief = assistant_.belief().probs;
  f.gamma = last_gamma_;
  f.map_goal_id = assistant_.belief().map_goal_id;
  f.status = status_;
  f.stale_input = stale_;
  f.trail.assign(trail_.begin(), trail_.end());
  return f;
}

FrameOut SessionCore::tick(const std::optional<FrameIn>& input, double now_s) {
  if (finished()) return snapshot();
  const auto t0 = std::chrono::steady_clock::now();
  if (input) {
    held_input_ = input->input;
    if (input->manual_gamma) manual_gamma_ = *input->manual_gamma;
    last_input_s_ = now_s;
  }
  stale_ = !last_input_s_ || now_s - *last_input_s_ > cfg_.stale_after_s;
  const Vec2 h = input_to_action(held_input_, env_.v_max);

  TickTiming timing;
  auto t = std::chrono::steady_clock::now();
  assistant_.observe(state_, h);
  timing.belief_ms = ms_since(t);
  t = std::chrono::steady_clock::now();
  Assistant::Decision dec = assistant_.current(state_, h, env_);
  timing.policy_ms = ms_since(t);
  if (cfg_.condition == SessionCondition::kManualGamma) dec.gamma = manual_gamma_;
  if (stale_) dec.gamma = 0.0;

  const Vec2 w = assisting_expert_action(state_, dec, expert_, memory_, env_);
  auto [next, out] = step(state_, h, w, dec.gamma, env_);
  recorder_.record(state_, dec.gamma, assistant_.belief(), dec.map_goal, next, out);
  state_ = std::move(next);
  last_gamma_ = dec.gamma;
  ++tick_;
  trail_.push_back(state_.cursor);
  while (trail_.size() > kTrailLength) trail_.pop_front();

  int collisions = recorder_.finish().collisions;
  if (out.success) {
    status_ = TrialStatus::kSuccess;
  } else if (collisions >= cfg_.collision_limit) {
    status_ = TrialStatus::kCollisionLimit;
  } else if (out.done) {
    status_ = TrialStatus::kTimeout;
  }
  timing.total_ms = ms_since(t0);
  timings_.push_back(timing);
  return snapshot();
}

EpisodeMetrics SessionCore::abort() {
  if (!finished()) status_ = TrialStatus::kAborted;
  return record();
}

EpisodeMetrics SessionCore::record() const {
  return recorder_.finish(status_ == TrialStatus::kAborted);
}

LatencySummary latency_report(const std::vector<TickTiming>& timings, double tick_rate) {
  LatencySummary s;
  s.ticks = timings.size();
  s.tick_period_ms = 1000.0 / tick_rate;
  std::vector<double> b, p, t;
  for (const auto& x : timings) {
    b.push_back(x.belief_ms);
    p.push_back(x.policy_ms);
    t.push_back(x.total_ms);
  }
  s.belief_p50 = percentile(b, 0.5);
  s.belief_p99 = percentile(b, 0.99);
  s.policy_p50 = percentile(p, 0.5);
  s.policy_p99 = percentile(p, 0.99);
  s.total_p50 = percentile(t, 0.5);
  s.total_p90 = percentile(t, 0.9);
  s.total_p99 = percentile(t, 0.99);
  return s;
}

std::string to_json(const LatencySummary& s) {
  const json j = {{"ticks", s.ticks},
                  {"tick_period_ms", s.tick_period_ms},
                  {"belief_ms", {{"p50", s.belief_p50}, {"p99", s.belief_p99}}},
                  {"policy_ms", {{"p50", s.policy_p50}, {"p99", s.policy_p99}}},
                  {"total_ms", {{"p50", s.total_p50}, {"p90", s.total_p90}, {"p99", s.total_p99}}}};
  return j.dump();
}

std::vector<FrameOut> replay_session(const SessionConfig& cfg, const std::optional<Checkpoint>& checkpoint,
                                     const std::vector<FrameIn>& inputs, const EnvConfig& env,
                                     const ExpertConfig& expert) {
  SessionCore core(cfg, checkpoint, env, expert);
  std::vector<FrameOut> out;
  for (const auto& in : inputs) {
    if (core.finished()) break;
    out.push_back(core.tick(in, static_cast<double>(in.tick) / cfg.tick_rate));
  }
  return out;
}

struct SessionServer::Impl {
  SessionConfig cfg;
  std::optional<Checkpoint> checkpoint;
  EnvConfig env;
  ExpertConfig expert;
  net::io_context ioc;
  tcp::acceptor acceptor{ioc};
  std::atomic<bool> stopping{false};
  mutable std::mutex records_mutex;
  std::vector<EpisodeMetrics> records;

  void keep(const EpisodeMetrics& m) {
    {
      std::lock_guard<std::mutex> lock(records_mutex);
      records.push_back(m);
    }
    if (!cfg.records_path.empty()) {
      std::ofstream out(cfg.records_path, std::ios::app);
      if (!out) throw Error(ErrorCode::kIo, "cannot append to " + cfg.records_path);
      out << to_ndjson(m) << '\n';
    }
  }

  void serve_lockstep(websocket::stream<tcp::socket>& ws, SessionCore& core) {
    beast::flat_buffer buffer;
    while (!core.finished() && !stopping) {
      buffer.clear();
      beast::error_code ec;
      ws.read(buffer, ec);
      if (ec) return;
      const FrameIn in = parse_frame_in(beast::buffers_to_string(buffer.data()));
      const FrameOut f = core.tick(in, static_cast<double>(in.tick) / cfg.tick_rate);
      ws.write(net::buffer(to_json(f)), ec);
      if (ec) return;
    }
  }

  void serve_live(websocket::stream<tcp::socket>& ws, SessionCore& core) {
    beast::flat_buffer buffer;
    std::optional<FrameIn> mailbox;
    bool closed = false;
    std::function<void()> arm;
    arm = [&]() {
      ws.async_read(buffer, [&](beast::error_code ec, std::size_t) {
        if (ec) {
          closed = true;
          return;
        }
        try {
          mailbox = parse_frame_in(beast::buffers_to_string(buffer.data()));
        } catch (const Error&) {
          // Malformed frames are dropped; the previous input stays held.
        }
        buffer.clear();
        arm();
      });
    };
    arm();
    const auto period = std::chrono::duration_cast<std::chrono::steady_clock::duration>(
        std::chrono::duration<double>(1.0 / cfg.tick_rate));
    const auto start = std::chrono::steady_clock::now();
    auto next = start + period;
    while (!core.finished() && !closed && !stopping) {
      ioc.restart();
      ioc.run_until(next);
      if (closed || stopping) break;
      const double now = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
      const FrameOut f = core.tick(mailbox, now);
      mailbox.reset();
      bool writing = true;
      const std::string text = to_json(f);
      ws.async_write(net::buffer(text), [&](beast::error_code ec, std::size_t) {
        writing = false;
        if (ec) closed = true;
      });
      while (writing && !stopping) {
        ioc.restart();
        ioc.run_one();
      }
      next += period;
    }
    if (!closed) {
      beast::error_code ec;
      beast::get_lowest_layer(ws).cancel(ec);
      ioc.restart();
      ioc.poll();
    }
  }

  void serve(tcp::socket socket) {
    websocket::stream<tcp::socket> ws(std::move(socket));
    beast::error_code ec;
    ws.accept(ec);
    if (ec) return;
    ws.text(true);
    SessionCore core(cfg, checkpoint, env, expert);
    ws.write(net::buffer(handshake_json(cfg)), ec);
    if (ec) {
      keep(core.abort());
      return;
    }
    try {
      if (cfg.lockstep) {
        serve_lockstep(ws, core);
      } else {
        serve_live(ws, core);
      }
    } catch (const Error&) {
      // A malformed lockstep frame ends the trial.
    }
    if (!core.finished()) {
      keep(core.abort());
      return;
    }
    keep(core.record());
    ws.close(websocket::close_code::normal, ec);
  }
};

SessionServer::SessionServer(SessionConfig cfg, std::optional<Checkpoint> checkpoint, const EnvConfig& env,
                             const ExpertConfig& expert)
    : impl_(std::make_unique<Impl>()) {
  cfg.validate();
  impl_->cfg = std::move(cfg);
  impl_->checkpoint = std::move(checkpoint);
  impl_->env = env;
  impl_->expert = expert;
  // Fail early on a condition that cannot be built.
  (void)make_condition(impl_->cfg, impl_->checkpoint);
}

SessionServer::~SessionServer() = default;

unsigned short SessionServer::listen(const std::string& address, unsigned short port) {
  const tcp::endpoint ep(net::ip::make_address(address), port);
  impl_->acceptor.open(ep.protocol());
  impl_->acceptor.set_option(net::socket_base::reuse_address(true));
  impl_->acceptor.bind(ep);
  impl_->acceptor.listen();
  return impl_->acceptor.local_endpoint().port();
}

void SessionServer::run(int max_sessions) {
  int served = 0;
  while (!impl_->stopping && (max_sessions <= 0 || served < max_sessions)) {
    std::optional<tcp::socket> accepted;
    impl_->acceptor.async_accept([&](beast::error_code ec, tcp::socket s) {
      if (!ec) accepted.emplace(std::move(s));
    });
    impl_->ioc.restart();
    if (impl_->stopping) break;
    impl_->ioc.run();
    if (!accepted) break;
    impl_->serve(std::move(*accepted));
    ++served;
  }
}

void SessionServer::stop() {
  impl_->stopping = true;
  impl_->ioc.stop();
}

std::vector<EpisodeMetrics> SessionServer::records() const {
  std::lock_guard<std::mutex> lock(impl_->records_mutex);
  return impl_->records;
}

}  // namespace brace
