#ifndef BRACE_SESSION_HPP_
#define BRACE_SESSION_HPP_

#include <chrono>
#include <cstdint>
#include <deque>
#include <functional>
#include <memory>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "brace/evalbench.hpp"

namespace brace {

inline constexpr int kWireVersion = 1;
inline constexpr std::size_t kTrailLength = 30;
inline constexpr std::size_t kMaxFrameBytes = 8192;

enum class SessionCondition { kNoAssist, kManualGamma, kBrace };

std::string to_string(SessionCondition c);
SessionCondition session_condition_from_string(const std::string& name);

struct SessionConfig {
  double tick_rate = 30.0;  // Hz
  std::uint64_t env_seed = 1;
  Stage stage = Stage::kAmbiguity;
  SessionCondition condition = SessionCondition::kBrace;
  std::string checkpoint_path;
  std::string participant = "anonymous";
  double stale_after_s = 2.0;
  int collision_limit = 3;
  // Client drives the clock: one tick per FrameIn, time = tick / tick_rate.
  bool lockstep = false;
  std::string records_path;  // evalbench per-episode records, appended

  void validate() const;
  static SessionConfig from_config(const Config& cfg);
};

struct FrameIn {
  std::int64_t tick = 0;
  Vec2 input;  // clamped to [-1, 1]^2
  std::optional<double> manual_gamma;
};

// Throws kInvalidArgument on malformed messages.
FrameIn parse_frame_in(const std::string& text);
std::string to_json(const FrameIn& f);

enum class TrialStatus { kRunning, kSuccess, kCollisionLimit, kTimeout, kAborted };

std::string to_string(TrialStatus s);

struct FrameOut {
  std::int64_t tick = 0;
  Vec2 cursor;
  std::vector<Goal> goals;
  std::vector<Obstacle> obstacles;
  std::vector<double> belief;
  double gamma = 0.0;
  int map_goal_id = 0;
  TrialStatus status = TrialStatus::kRunning;
  bool stale_input = false;  // safety flag: assistance frozen at 0
  std::vector<Vec2> trail;   // most recent cursor positions, oldest first
};

std::string to_json(const FrameOut& f);
FrameOut parse_frame_out(const std::string& text);

// First server message: wire version and the session configuration.
std::string handshake_json(const SessionConfig& cfg);

struct TickTiming {
  double belief_ms = 0.0;
  double policy_ms = 0.0;
  double total_ms = 0.0;
};

// One trial: environment, belief and policy owned here; single-threaded.
class SessionCore {
 public:
  SessionCore(const SessionConfig& cfg, std::optional<Checkpoint> checkpoint, const EnvConfig& env = {},
              const ExpertConfig& expert = {});
  SessionCore(const SessionCore&) = delete;
  SessionCore& operator=(const SessionCore&) = delete;

  // Advances one tick. `input` is the newest FrameIn received since the last
  // tick, if any; `now_s` is the session clock in seconds.
  FrameOut tick(const std::optional<FrameIn>& input, double now_s);
  // Frame describing the current state without stepping.
  FrameOut snapshot() const;

  bool finished() const { return status_ != TrialStatus::kRunning; }
  TrialStatus status() const { return status_; }
  const EnvState& state() const { return state_; }
  // Marks the trial aborted (disconnect) and returns the partial record.
  EpisodeMetrics abort();
  EpisodeMetrics record() const;
  const std::vector<TickTiming>& timings() const { return timings_; }

 private:
  SessionConfig cfg_;
  EnvConfig env_;
  ExpertConfig expert_;
  Condition condition_;
  EnvState state_;
  ExpertMemory memory_;
  Assistant assistant_;
  EpisodeRecorder recorder_;
  std::int64_t tick_ = 0;
  Vec2 held_input_;
  double manual_gamma_ = 0.0;
  std::optional<double> last_input_s_;
  double last_gamma_ = 0.0;
  bool stale_ = false;
  TrialStatus status_ = TrialStatus::kRunning;
  std::deque<Vec2> trail_;
  std::vector<TickTiming> timings_;
};

struct LatencySummary {
  std::size_t ticks = 0;
  double belief_p50 = 0.0, belief_p99 = 0.0;
  double policy_p50 = 0.0, policy_p99 = 0.0;
  double total_p50 = 0.0, total_p90 = 0.0, total_p99 = 0.0;
  double tick_period_ms = 0.0;
};

LatencySummary latency_report(const std::vector<TickTiming>& timings, double tick_rate);
std::string to_json(const LatencySummary& s);

// Replays a recorded FrameIn stream through a fresh lockstep session.
std::vector<FrameOut> replay_session(const SessionConfig& cfg, const std::optional<Checkpoint>& checkpoint,
                                     const std::vector<FrameIn>& inputs, const EnvConfig& env = {},
                                     const ExpertConfig& expert = {});

// Websocket host. Each connection gets its own SessionCore; the reader fills a
// latest-value mailbox and the session loop ticks at cfg.tick_rate (or once
// per FrameIn in lockstep mode).
class SessionServer {
 public:
  SessionServer(SessionConfig cfg, std::optional<Checkpoint> checkpoint, const EnvConfig& env = {},
                const ExpertConfig& expert = {});
  ~SessionServer();
  SessionServer(const SessionServer&) = delete;
  SessionServer& operator=(const SessionServer&) = delete;

  // Binds to `port` (0 picks a free one) and returns the bound port.
  unsigned short listen(const std::string& address, unsigned short port);
  // Serves connections one at a time until stop(); `max_sessions` > 0 returns
  // after that many sessions.
  void run(int max_sessions = 0);
  void stop();
  std::vector<EpisodeMetrics> records() const;

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

}  // namespace brace

#endif  // BRACE_SESSION_HPP_
