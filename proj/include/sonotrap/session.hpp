#pragma once

#include <chrono>
#include <condition_variable>
#include <cstdint>
#include <deque>
#include <filesystem>
#include <functional>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "sonotrap/io.hpp"
#include "sonotrap/upac.hpp"

namespace sonotrap {

inline constexpr int kProtocolVersion = 1;
inline constexpr int kSessionFileVersion = 1;
inline constexpr size_t kHistoryLimit = 10'000;
inline constexpr double kMaxTelemetryHz = 60.0;
inline constexpr size_t kMaxSliceSide = 64;
// Largest grid a field query may evaluate before decimation.
inline constexpr size_t kMaxSliceSamples = 512 * 512;

/// Subscribe is not one of the six steering verbs; it opens the telemetry
/// stream on the connection that sends it.
enum class Verb { MoveFocus, SetTemperature, StartTrajectory, Stop, QueryField, QueryParticle, Subscribe };
std::string to_string(Verb verb);
Verb verb_from_string(const std::string& s);

/// One request line: {"v": 1, "seq": n, "verb": "...", "payload": {...}}.
struct CommandEnvelope {
  uint64_t seq = 0;
  Verb verb = Verb::QueryParticle;
  Json payload = Json::object();
};
/// VersionMismatch for v != 1, Parse for anything malformed.
CommandEnvelope parse_envelope(const Json& doc);
Json envelope_to_json(const CommandEnvelope& cmd);

/// Response or stream event: {"v": 1, "seq", "kind", "payload", "ts"}.
struct Event {
  uint64_t seq = 0;
  std::string kind;
  Json payload;
  double ts = 0.0;  // seconds since the Unix epoch

  Json to_json() const;
};
double wall_clock_s();

struct HistoryEntry {
  uint64_t seq = 0;  // session-wide, strictly increasing
  std::string verb;
  Json payload;
  double ts = 0.0;
  bool ok = true;
  std::string error;
};

struct TrajectoryRun {
  TrajectorySpec spec;
  std::vector<FocalCommand> waypoints;
  std::vector<PhaseFrame> frames;
  std::optional<int> iterations;  // empty: loop until Stop
  double start_s = 0.0;
  size_t frames_played = 0;       // waypoints loaded so far
  bool running = false;
};

struct SessionState {
  SessionState(ArrayLayout l, MediumState m) : layout(std::move(l)), medium(m) {}

  ArrayLayout layout;
  MediumState medium;
  ControllerTiming timing;
  double source_amplitude = 0.0;
  FocalCommand command;
  PhaseFrame current_frame;
  std::vector<FocalCommand> schedule_commands;  // two or more: multiplexed traps
  std::optional<MultiplexSchedule> schedule;
  std::optional<ParticleState> particle;
  bool particle_trapped = false;
  std::optional<TrajectoryRun> trajectory;
  std::vector<HistoryEntry> history;
  uint64_t next_seq = 1;
};

struct SessionOptions {
  ControllerTiming timing = ControllerTiming::hardware();
  double source_amplitude = 0.0;  // 0: default calibration
  FocalCommand initial;
  bool with_particle = false;
  std::function<double()> clock;  // seconds, monotonic; default steady clock
};

struct TelemetrySpec {
  double rate_hz = 10.0;
  bool particle = true;
  std::optional<SlicePlane> slice;
  size_t max_side = kMaxSliceSide;

  /// InvalidArgument unless 0 < rate <= 60 and 0 < max_side <= 64.
  void validate() const;
};
TelemetrySpec telemetry_spec_from_json(const Json& payload);
SlicePlane slice_plane_from_json(const Json& payload);

/// Live steering session. Commands are applied one at a time under a lock;
/// readers work on copies taken by snapshot().
class Session {
 public:
  Session(ArrayLayout layout, MediumState medium, SessionOptions options = {});
  Session(SessionState restored, std::function<double()> clock = {});

  /// Applies the verb and returns its response payload. Every command, failed
  /// or not, lands in the history; failures rethrow with the state unchanged.
  /// Subscribe only validates its payload here.
  Json handle(const CommandEnvelope& cmd);

  Json query_field(const Json& payload) const;
  Json query_particle() const;

  /// Plays trajectory frames due by the session clock through the register
  /// file; the focus follows the latest one.
  void advance();

  /// Copy of the state; telemetry skips the history.
  SessionState snapshot(bool with_history = true) const;
  Json snapshot_json() const;
  /// Telemetry payload from one consistent snapshot.
  Json telemetry(const TelemetrySpec& spec) const;
  /// Field slice of a state, decimated to max_side.
  static FieldSlice field_slice(const SessionState& state, const SlicePlane& plane, size_t max_side);

  uint64_t frames_loaded() const { return registers_->frames_loaded(); }
  std::vector<ChannelRegister> registers() const { return registers_->snapshot(); }
  double now() const { return clock_(); }

 private:
  Json dispatch_locked(const CommandEnvelope& cmd, double received_s);
  Json move_focus_locked(const Json& payload, double received_s);
  Json set_temperature_locked(const Json& payload);
  Json start_trajectory_locked(const Json& payload);
  Json stop_locked();
  void apply_frame_locked(const PhaseFrame& frame);
  void settle_particle_locked();
  void advance_locked(double now_s);
  void record_locked(const CommandEnvelope& cmd, bool ok, const std::string& error);

  mutable std::mutex mutex_;
  SessionState state_;
  std::unique_ptr<RegisterFile> registers_;
  std::function<double()> clock_;
};

Json session_to_json(const SessionState& state);
/// VersionMismatch names the expected and found versions; Parse for
/// malformed content. Nothing is returned unless the whole file is valid.
SessionState session_from_json(const Json& doc);
void save_session(const Session& session, const std::filesystem::path& path);
SessionState load_session(const std::filesystem::path& path);

/// Bounded per-subscription queue. A full queue drops its oldest event; the
/// next pop then yields a "gap" event whose seq is the last dropped seq and
/// whose payload names the missing range.
class EventQueue {
 public:
  explicit EventQueue(size_t capacity = 64);

  uint64_t push(const std::string& kind, Json payload);
  std::optional<Event> pop(std::chrono::milliseconds wait);
  void close();
  bool closed() const;
  uint64_t dropped() const;
  size_t size() const;

 private:
  mutable std::mutex mutex_;
  std::condition_variable cv_;
  std::deque<Event> events_;
  size_t capacity_;
  uint64_t next_seq_ = 1;
  uint64_t dropped_ = 0;
  std::optional<std::pair<uint64_t, uint64_t>> gap_;
  bool closed_ = false;
};

/// Pushes a telemetry event every 1/rate seconds until stopped.
class TelemetryPump {
 public:
  TelemetryPump(Session& session, TelemetrySpec spec, std::shared_ptr<EventQueue> queue);
  ~TelemetryPump();
  TelemetryPump(const TelemetryPump&) = delete;
  TelemetryPump& operator=(const TelemetryPump&) = delete;

  void stop();

 private:
  std::jthread thread_;
};

}  // namespace sonotrap
