#include "sonotrap/session.hpp"

#include <algorithm>
#include <cmath>

#include "sonotrap/error.hpp"

namespace sonotrap {

namespace {

double steady_s() {
  return std::chrono::duration<double>(std::chrono::steady_clock::now().time_since_epoch()).count();
}

QuantizationConfig quant_for(const ArrayLayout& layout) { return QuantizationConfig::for_layout(layout); }

std::unique_ptr<RegisterFile> make_registers(const ArrayLayout& layout) {
  return std::make_unique<RegisterFile>(layout.emitter_ids(), quant_for(layout).cycles_per_period());
}

Json delays_json(const PhaseFrame& frame) { return Json(frame.delays_cycles); }

Json particle_json(const SessionState& s) {
  if (!s.particle) return {{"present", false}};
  Json doc = particle_to_json(*s.particle);
  doc["present"] = true;
  doc["trapped"] = s.particle_trapped;
  return doc;
}

Json trajectory_json(const TrajectoryRun& run) {
  return {{"shape", to_string(run.spec.shape)},
          {"extent_mm", run.spec.extent_mm},
          {"speed_mm_s", run.spec.speed_mm_s},
          {"step_mm", run.spec.step_mm},
          {"height_mm", run.spec.height_mm},
          {"iterations", run.iterations ? Json(*run.iterations) : Json(nullptr)},
          {"waypoints", run.waypoints.size()},
          {"frames_played", run.frames_played},
          {"running", run.running}};
}

Json commands_json(const std::vector<FocalCommand>& commands) {
  Json out = Json::array();
  for (const auto& c : commands) out.push_back(vec_to_json(c.target));
  return out;
}

template <typename T>
T field_or(const Json& doc, const char* key, T fallback) {
  if (!doc.is_object() || !doc.contains(key) || doc.at(key).is_null()) return fallback;
  try {
    return doc.at(key).get<T>();
  } catch (const Json::exception& e) {
    throw Error(ErrorCode::InvalidArgument, std::string("field '") + key + "': " + e.what());
  }
}

Json require_object(const Json& payload) {
  if (payload.is_null()) return Json::object();
  if (!payload.is_object()) throw Error(ErrorCode::InvalidArgument, "payload must be an object");
  return payload;
}

TrajectorySpec trajectory_spec_from_json(const Json& p) {
  TrajectorySpec spec;
  if (!p.contains("shape")) throw Error(ErrorCode::InvalidArgument, "StartTrajectory needs a shape");
  spec.shape = path_shape_from_string(field_or<std::string>(p, "shape", ""));
  spec.extent_mm = field_or(p, "extent_mm", spec.extent_mm);
  spec.speed_mm_s = field_or(p, "speed_mm_s", spec.speed_mm_s);
  spec.step_mm = field_or(p, "step_mm", spec.step_mm);
  spec.height_mm = field_or(p, "height_mm", spec.height_mm);
  return spec;
}

// Waypoints and frames of a run; the path start is played first.
void build_run(const SessionState& s, TrajectoryRun& run) {
  run.waypoints = plan_steps(run.spec, s.timing, s.layout, s.medium);
  run.frames = batch_compute(s.layout, run.waypoints, s.medium, quant_for(s.layout));
}

}  // namespace

std::string to_string(Verb verb) {
  switch (verb) {
    case Verb::MoveFocus: return "MoveFocus";
    case Verb::SetTemperature: return "SetTemperature";
    case Verb::StartTrajectory: return "StartTrajectory";
    case Verb::Stop: return "Stop";
    case Verb::QueryField: return "QueryField";
    case Verb::QueryParticle: return "QueryParticle";
    case Verb::Subscribe: return "Subscribe";
  }
  return "?";
}

Verb verb_from_string(const std::string& s) {
  for (Verb v : {Verb::MoveFocus, Verb::SetTemperature, Verb::StartTrajectory, Verb::Stop, Verb::QueryField,
                 Verb::QueryParticle, Verb::Subscribe}) {
    if (to_string(v) == s) return v;
  }
  throw Error(ErrorCode::Parse, "unknown verb '" + s + "'");
}

CommandEnvelope parse_envelope(const Json& doc) {
  if (!doc.is_object()) throw Error(ErrorCode::Parse, "command must be a JSON object");
  if (!doc.contains("v")) throw Error(ErrorCode::Parse, "missing protocol version field 'v'");
  if (!doc.at("v").is_number_integer() || doc.at("v").get<int>() != kProtocolVersion) {
    throw Error(ErrorCode::VersionMismatch,
                "protocol version " + doc.at("v").dump() + " (expected " + std::to_string(kProtocolVersion) + ")");
  }
  if (!doc.contains("seq") || !doc.at("seq").is_number_unsigned()) {
    throw Error(ErrorCode::Parse, "'seq' must be a non-negative integer");
  }
  if (!doc.contains("verb") || !doc.at("verb").is_string()) throw Error(ErrorCode::Parse, "'verb' must be a string");
  CommandEnvelope cmd;
  cmd.seq = doc.at("seq").get<uint64_t>();
  cmd.verb = verb_from_string(doc.at("verb").get<std::string>());
  cmd.payload = doc.contains("payload") ? doc.at("payload") : Json::object();
  if (!cmd.payload.is_object()) throw Error(ErrorCode::Parse, "'payload' must be an object");
  return cmd;
}

Json envelope_to_json(const CommandEnvelope& cmd) {
  return {{"v", kProtocolVersion}, {"seq", cmd.seq}, {"verb", to_string(cmd.verb)}, {"payload", cmd.payload}};
}

Json Event::to_json() const {
  return {{"v", kProtocolVersion}, {"seq", seq}, {"kind", kind}, {"payload", payload}, {"ts", ts}};
}

double wall_clock_s() {
  return std::chrono::duration<double>(std::chrono::system_clock::now().time_since_epoch()).count();
}

void TelemetrySpec::validate() const {
  if (!(rate_hz > 0.0) || rate_hz > kMaxTelemetryHz) {
    throw Error(ErrorCode::InvalidArgument, "telemetry rate must be in (0, 60] Hz");
  }
  if (max_side == 0 || max_side > kMaxSliceSide) {
    throw Error(ErrorCode::InvalidArgument, "slice side must be in [1, 64]");
  }
}

SlicePlane slice_plane_from_json(const Json& payload) {
  const Json p = require_object(payload);
  SlicePlane plane;
  if (p.contains("plane")) plane.axis = plane_axis_from_string(field_or<std::string>(p, "plane", "xz"));
  if (plane.axis == PlaneAxis::XY) {
    plane.u_min = -50.0, plane.u_max = 50.0, plane.v_min = -50.0, plane.v_max = 50.0, plane.offset = 100.0;
  }
  plane.offset = field_or(p, "offset", plane.offset);
  plane.u_min = field_or(p, "u_min", plane.u_min);
  plane.u_max = field_or(p, "u_max", plane.u_max);
  plane.v_min = field_or(p, "v_min", plane.v_min);
  plane.v_max = field_or(p, "v_max", plane.v_max);
  plane.pitch = field_or(p, "pitch", plane.pitch);
  if (!(plane.pitch > 0.0) || !(plane.u_max >= plane.u_min) || !(plane.v_max >= plane.v_min)) {
    throw Error(ErrorCode::InvalidArgument, "slice needs a positive pitch and ordered bounds");
  }
  return plane;
}

TelemetrySpec telemetry_spec_from_json(const Json& payload) {
  const Json p = require_object(payload);
  TelemetrySpec spec;
  spec.rate_hz = field_or(p, "rate_hz", spec.rate_hz);
  spec.particle = field_or(p, "particle", spec.particle);
  spec.max_side = field_or(p, "max_side", spec.max_side);
  if (p.contains("field_slice") && !p.at("field_slice").is_null()) {
    spec.slice = slice_plane_from_json(p.at("field_slice"));
  }
  spec.validate();
  return spec;
}

Session::Session(ArrayLayout layout, MediumState medium, SessionOptions options)
    : state_(std::move(layout), medium), clock_(options.clock ? options.clock : steady_s) {
  state_.timing = options.timing;
  state_.source_amplitude = options.source_amplitude > 0.0 ? options.source_amplitude : default_source_amplitude();
  state_.command = options.initial;
  registers_ = make_registers(state_.layout);
  apply_frame_locked(compute_frame(state_.layout, state_.command, state_.medium, quant_for(state_.layout)));
  if (options.with_particle) {
    ParticleState p;
    p.position = state_.command.target;
    state_.particle = p;
    settle_particle_locked();
  }
}

Session::Session(SessionState restored, std::function<double()> clock)
    : state_(std::move(restored)), clock_(clock ? std::move(clock) : steady_s) {
  registers_ = make_registers(state_.layout);
  apply_frame_locked(state_.current_frame);
}

void Session::apply_frame_locked(const PhaseFrame& frame) {
  registers_->load_frame(frame);
  registers_->latch();
  state_.current_frame = frame;
  state_.command = frame.command;
}

void Session::settle_particle_locked() {
  if (!state_.particle) return;
  try {
    const AcousticField field(state_.layout, state_.current_frame, state_.medium, state_.source_amplitude);
    const auto eq = find_equilibrium(field, *state_.particle, state_.particle->position);
    // Only follow the trap it sits in; a far-away equilibrium means it fell out.
    const bool near = (eq.position - state_.particle->position).norm() < field.wavelength_mm();
    if (eq.stable && near && state_.layout.contains_particle(eq.position)) {
      state_.particle->position = eq.position;
      state_.particle->velocity.setZero();
      state_.particle_trapped = true;
    } else {
      state_.particle_trapped = false;
    }
  } catch (const Error&) {
    state_.particle_trapped = false;
  }
}

void Session::record_locked(const CommandEnvelope& cmd, bool ok, const std::string& error) {
  state_.history.push_back({state_.next_seq++, to_string(cmd.verb), cmd.payload, wall_clock_s(), ok, error});
  if (state_.history.size() > 2 * kHistoryLimit) {
    state_.history.erase(state_.history.begin(),
                         state_.history.begin() + static_cast<std::ptrdiff_t>(state_.history.size() - kHistoryLimit));
  }
}

Json Session::handle(const CommandEnvelope& cmd) {
  const double received = steady_s();
  std::lock_guard lock(mutex_);
  try {
    Json out = dispatch_locked(cmd, received);
    record_locked(cmd, true, "");
    return out;
  } catch (const Error& e) {
    record_locked(cmd, false, e.what());
    throw;
  }
}

Json Session::dispatch_locked(const CommandEnvelope& cmd, double received_s) {
  switch (cmd.verb) {
    case Verb::MoveFocus: return move_focus_locked(cmd.payload, received_s);
    case Verb::SetTemperature: return set_temperature_locked(cmd.payload);
    case Verb::StartTrajectory: return start_trajectory_locked(cmd.payload);
    case Verb::Stop: return stop_locked();
    case Verb::QueryField: {
      const auto plane = slice_plane_from_json(cmd.payload);
      const auto side = field_or<size_t>(cmd.payload, "max_side", kMaxSliceSide);
      if (side == 0 || side > kMaxSliceSide) throw Error(ErrorCode::InvalidArgument, "slice side must be in [1, 64]");
      return slice_to_json(field_slice(state_, plane, side));
    }
    case Verb::QueryParticle: return particle_json(state_);
    case Verb::Subscribe: {
      const auto spec = telemetry_spec_from_json(cmd.payload);
      return {{"rate_hz", spec.rate_hz}, {"particle", spec.particle}, {"field_slice", spec.slice.has_value()}};
    }
  }
  throw Error(ErrorCode::InvalidArgument, "unhandled verb");
}

Json Session::move_focus_locked(const Json& payload, double received_s) {
  const Json p = require_object(payload);
  std::vector<FocalCommand> commands;
  if (p.contains("targets")) {
    if (!p.at("targets").is_array() || p.at("targets").empty()) {
      throw Error(ErrorCode::InvalidArgument, "'targets' must be a non-empty array");
    }
    for (const auto& t : p.at("targets")) commands.push_back({vec_from_json(t)});
  } else if (p.contains("target")) {
    commands.push_back({vec_from_json(p.at("target"))});
  } else {
    throw Error(ErrorCode::InvalidArgument, "MoveFocus needs 'target' or 'targets'");
  }
  // Everything that can throw happens before the state changes.
  std::optional<MultiplexSchedule> schedule;
  PhaseFrame frame;
  if (commands.size() > 1) {
    schedule = multiplex(state_.layout, commands, state_.medium, quant_for(state_.layout), state_.timing);
    frame = schedule->frames.front();
  } else {
    frame = compute_frame(state_.layout, commands.front(), state_.medium, quant_for(state_.layout));
  }
  if (state_.trajectory) state_.trajectory->running = false;
  apply_frame_locked(frame);
  const double latency = steady_s() - received_s;
  state_.schedule = std::move(schedule);
  state_.schedule_commands = commands.size() > 1 ? commands : std::vector<FocalCommand>{};
  settle_particle_locked();
  Json out = {{"target", vec_to_json(frame.command.target)},
              {"delays", delays_json(frame)},
              {"cycles_per_period", frame.cycles_per_period},
              {"latency_s", latency},
              {"frames_loaded", registers_->frames_loaded()}};
  if (state_.schedule) {
    out["targets"] = commands_json(commands);
    out["dwell_s"] = state_.schedule->dwell_s;
    out["cycle_rate_hz"] = state_.schedule->cycle_rate_hz;
  }
  return out;
}

Json Session::set_temperature_locked(const Json& payload) {
  const Json p = require_object(payload);
  if (!p.contains("temperature_c")) throw Error(ErrorCode::InvalidArgument, "SetTemperature needs temperature_c");
  const MediumState medium = make_medium(field_or<double>(p, "temperature_c", 0.0), state_.medium.density_air);
  // Recompute every frame the session can serve under the new medium first.
  SessionState next = state_;
  next.history.clear();
  next.medium = medium;
  const PhaseFrame frame = compute_frame(next.layout, state_.command, medium, quant_for(next.layout));
  if (!next.schedule_commands.empty()) {
    next.schedule = multiplex(next.layout, next.schedule_commands, medium, quant_for(next.layout), next.timing);
  }
  if (next.trajectory) build_run(next, *next.trajectory);

  state_.medium = medium;
  state_.schedule = std::move(next.schedule);
  if (state_.trajectory) state_.trajectory = std::move(next.trajectory);
  apply_frame_locked(frame);
  settle_particle_locked();
  return {{"temperature_c", medium.temperature_c},
          {"speed_of_sound", medium.speed_of_sound},
          {"wavelength_mm", wavelength_mm(state_.layout.emitter_carrier(), medium)},
          {"delays", delays_json(frame)}};
}

Json Session::start_trajectory_locked(const Json& payload) {
  const Json p = require_object(payload);
  TrajectoryRun run;
  run.spec = trajectory_spec_from_json(p);
  if (p.contains("iterations") && !p.at("iterations").is_null()) {
    run.iterations = field_or<int>(p, "iterations", 1);
    if (*run.iterations < 1) throw Error(ErrorCode::InvalidArgument, "iterations must be >= 1");
  }
  build_run(state_, run);
  const PhaseFrame start =
      compute_frame(state_.layout, FocalCommand{path_start(run.spec)}, state_.medium, quant_for(state_.layout));
  run.start_s = clock_();
  run.running = true;
  state_.schedule.reset();
  state_.schedule_commands.clear();
  apply_frame_locked(start);
  state_.trajectory = std::move(run);
  settle_particle_locked();
  const auto& r = *state_.trajectory;
  return {{"waypoints", r.waypoints.size()},
          {"refresh_hz", state_.timing.refresh_hz},
          {"speed_mm_s", r.spec.speed_mm_s},
          {"step_mm", r.spec.step_mm},
          {"start", vec_to_json(path_start(r.spec))}};
}

Json Session::stop_locked() {
  advance_locked(clock_());
  if (!state_.trajectory) return {{"stopped_at", vec_to_json(state_.command.target)}, {"frames_played", 0}};
  state_.trajectory->running = false;
  return {{"stopped_at", vec_to_json(state_.command.target)}, {"frames_played", state_.trajectory->frames_played}};
}

void Session::advance() {
  std::lock_guard lock(mutex_);
  advance_locked(clock_());
}

void Session::advance_locked(double now_s) {
  if (!state_.trajectory || !state_.trajectory->running) return;
  auto& run = *state_.trajectory;
  const size_t n = run.frames.size();
  if (n == 0) return;
  auto due = static_cast<size_t>(std::max(0.0, std::floor((now_s - run.start_s) * state_.timing.refresh_hz)));
  if (run.iterations) due = std::min(due, n * static_cast<size_t>(*run.iterations));
  if (due <= run.frames_played) return;
  // After a long stall only the last two laps are worth replaying.
  if (due - run.frames_played > 2 * n) run.frames_played = due - 2 * n;
  for (size_t k = run.frames_played; k + 1 < due; ++k) {
    registers_->load_frame(run.frames[k % n]);
    registers_->latch();
  }
  apply_frame_locked(run.frames[(due - 1) % n]);
  run.frames_played = due;
  if (run.iterations && due >= n * static_cast<size_t>(*run.iterations)) run.running = false;
  settle_particle_locked();
}

SessionState Session::snapshot(bool with_history) const {
  std::lock_guard lock(mutex_);
  if (with_history) return state_;
  SessionState copy(state_.layout, state_.medium);
  copy.timing = state_.timing;
  copy.source_amplitude = state_.source_amplitude;
  copy.command = state_.command;
  copy.current_frame = state_.current_frame;
  copy.schedule_commands = state_.schedule_commands;
  copy.schedule = state_.schedule;
  copy.particle = state_.particle;
  copy.particle_trapped = state_.particle_trapped;
  if (state_.trajectory) {
    // Frames are bulky and not needed for reporting.
    copy.trajectory = TrajectoryRun{.spec = state_.trajectory->spec,
                                    .waypoints = {},
                                    .frames = {},
                                    .iterations = state_.trajectory->iterations,
                                    .start_s = state_.trajectory->start_s,
                                    .frames_played = state_.trajectory->frames_played,
                                    .running = state_.trajectory->running};
    copy.trajectory->waypoints.resize(state_.trajectory->waypoints.size());
  }
  copy.next_seq = state_.next_seq;
  return copy;
}

Json Session::snapshot_json() const {
  const auto s = snapshot(false);
  Json doc = {{"v", kProtocolVersion},
              {"layout", {{"kind", to_string(s.layout.kind())},
                          {"emitters", s.layout.emitter_count()},
                          {"receivers", s.layout.receiver_ids().size()}}},
              {"medium", medium_to_json(s.medium)},
              {"timing", timing_to_json(s.timing)},
              {"focus", vec_to_json(s.command.target)},
              {"delays", delays_json(s.current_frame)},
              {"frames_loaded", frames_loaded()},
              {"particle", particle_json(s)},
              {"history_size", s.next_seq - 1}};
  if (!s.schedule_commands.empty()) doc["targets"] = commands_json(s.schedule_commands);
  if (s.trajectory) doc["trajectory"] = trajectory_json(*s.trajectory);
  return doc;
}

Json Session::telemetry(const TelemetrySpec& spec) const {
  const auto s = snapshot(false);
  Json doc = {{"focus", vec_to_json(s.command.target)},
              {"temperature_c", s.medium.temperature_c},
              {"frames_loaded", frames_loaded()}};
  if (!s.schedule_commands.empty()) doc["targets"] = commands_json(s.schedule_commands);
  if (s.trajectory) doc["trajectory"] = trajectory_json(*s.trajectory);
  if (spec.particle) doc["particle"] = particle_json(s);
  if (spec.slice) doc["slice"] = slice_to_json(field_slice(s, *spec.slice, spec.max_side));
  return doc;
}

FieldSlice Session::field_slice(const SessionState& state, const SlicePlane& plane, size_t max_side) {
  if (plane.nu() * plane.nv() > kMaxSliceSamples) {
    throw Error(ErrorCode::InvalidArgument, "slice exceeds " + std::to_string(kMaxSliceSamples) + " samples");
  }
  const AcousticField field(state.layout, state.current_frame, state.medium, state.source_amplitude);
  auto slice = compute_slice(field, plane);
  if (slice.nu > max_side || slice.nv > max_side) slice = decimate(slice, max_side);
  return slice;
}

Json Session::query_field(const Json& payload) const {
  const auto plane = slice_plane_from_json(payload);
  return slice_to_json(field_slice(snapshot(false), plane, kMaxSliceSide));
}

Json Session::query_particle() const { return particle_json(snapshot(false)); }

Json session_to_json(const SessionState& s) {
  Json history = Json::array();
  const size_t first = s.history.size() > kHistoryLimit ? s.history.size() - kHistoryLimit : 0;
  for (size_t i = first; i < s.history.size(); ++i) {
    const auto& h = s.history[i];
    history.push_back({{"seq", h.seq}, {"verb", h.verb}, {"payload", h.payload}, {"ts", h.ts}, {"ok", h.ok},
                       {"error", h.error}});
  }
  Json doc = {{"version", kSessionFileVersion},
              {"layout", layout_to_json(s.layout)},
              {"medium", medium_to_json(s.medium)},
              {"timing", timing_to_json(s.timing)},
              {"source_amplitude", s.source_amplitude},
              {"command", {{"target", vec_to_json(s.command.target)}}},
              {"schedule", s.schedule_commands.empty() ? Json(nullptr) : Json{{"targets", commands_json(s.schedule_commands)}}},
              {"particle", s.particle ? particle_to_json(*s.particle) : Json(nullptr)},
              {"trajectory", Json(nullptr)},
              {"history", history},
              {"next_seq", s.next_seq}};
  if (s.trajectory) {
    const auto& r = *s.trajectory;
    doc["trajectory"] = {{"shape", to_string(r.spec.shape)}, {"extent_mm", r.spec.extent_mm},
                         {"speed_mm_s", r.spec.speed_mm_s},  {"step_mm", r.spec.step_mm},
                         {"height_mm", r.spec.height_mm},
                         {"iterations", r.iterations ? Json(*r.iterations) : Json(nullptr)}};
  }
  return doc;
}

SessionState session_from_json(const Json& doc) {
  if (!doc.is_object() || !doc.contains("version")) throw Error(ErrorCode::Parse, "session file has no version");
  if (!doc.at("version").is_number_integer() || doc.at("version").get<int>() != kSessionFileVersion) {
    throw Error(ErrorCode::VersionMismatch, "session file version " + doc.at("version").dump() + ", expected " +
                                                std::to_string(kSessionFileVersion));
  }
  auto section = [&](const char* key) -> const Json& {
    if (!doc.contains(key)) throw Error(ErrorCode::Parse, std::string("session file lacks '") + key + "'");
    return doc.at(key);
  };
  auto wrap = [](auto&& fn) {
    try {
      return fn();
    } catch (const Json::exception& e) {
      throw Error(ErrorCode::Parse, e.what());
    } catch (const Error& e) {
      if (e.code() == ErrorCode::Parse) throw;
      throw Error(ErrorCode::Parse, e.what());
    }
  };
  return wrap([&] {
    SessionState s(layout_from_json(section("layout")), medium_from_json(section("medium")));
    const Json& timing = section("timing");
    s.timing = timing_from_json(timing);
    s.source_amplitude = section("source_amplitude").get<double>();
    if (!(s.source_amplitude > 0.0)) throw Error(ErrorCode::Parse, "source amplitude must be positive");
    s.command.target = vec_from_json(section("command").at("target"));
    const auto quant = QuantizationConfig::for_layout(s.layout);
    s.current_frame = compute_frame(s.layout, s.command, s.medium, quant);
    if (const Json& sched = section("schedule"); !sched.is_null()) {
      for (const auto& t : sched.at("targets")) s.schedule_commands.push_back({vec_from_json(t)});
      if (s.schedule_commands.size() > 1) {
        s.schedule = multiplex(s.layout, s.schedule_commands, s.medium, quant, s.timing);
      }
    }
    if (const Json& p = section("particle"); !p.is_null()) s.particle = particle_from_json(p);
    if (const Json& t = section("trajectory"); !t.is_null()) {
      TrajectoryRun run;
      run.spec = trajectory_spec_from_json(t);
      if (t.contains("iterations") && !t.at("iterations").is_null()) run.iterations = t.at("iterations").get<int>();
      build_run(s, run);
      s.trajectory = std::move(run);
    }
    for (const auto& h : section("history")) {
      s.history.push_back({h.at("seq").get<uint64_t>(), h.at("verb").get<std::string>(), h.at("payload"),
                           h.at("ts").get<double>(), h.at("ok").get<bool>(), h.at("error").get<std::string>()});
    }
    for (size_t i = 1; i < s.history.size(); ++i) {
      if (s.history[i].seq <= s.history[i - 1].seq) throw Error(ErrorCode::Parse, "history is not in seq order");
    }
    s.next_seq = section("next_seq").get<uint64_t>();
    if (!s.history.empty() && s.next_seq <= s.history.back().seq) {
      throw Error(ErrorCode::Parse, "next_seq does not follow the history");
    }
    return s;
  });
}

void save_session(const Session& session, const std::filesystem::path& path) {
  write_json_file(path, session_to_json(session.snapshot()));
}

SessionState load_session(const std::filesystem::path& path) { return session_from_json(read_json_file(path)); }

EventQueue::EventQueue(size_t capacity) : capacity_(std::max<size_t>(1, capacity)) {}

uint64_t EventQueue::push(const std::string& kind, Json payload) {
  uint64_t seq;
  {
    std::lock_guard lock(mutex_);
    if (closed_) return 0;
    seq = next_seq_++;
    if (events_.size() >= capacity_) {
      const uint64_t lost = events_.front().seq;
      events_.pop_front();
      ++dropped_;
      gap_ = gap_ ? std::pair{gap_->first, lost} : std::pair{lost, lost};
    }
    events_.push_back({seq, kind, std::move(payload), wall_clock_s()});
  }
  cv_.notify_one();
  return seq;
}

std::optional<Event> EventQueue::pop(std::chrono::milliseconds wait) {
  std::unique_lock lock(mutex_);
  cv_.wait_for(lock, wait, [&] { return !events_.empty() || gap_ || closed_; });
  if (gap_) {
    Event gap{gap_->second, "gap",
              {{"missing_from", gap_->first}, {"missing_to", gap_->second}, {"dropped", gap_->second - gap_->first + 1}},
              wall_clock_s()};
    gap_.reset();
    return gap;
  }
  if (events_.empty()) return std::nullopt;
  Event e = std::move(events_.front());
  events_.pop_front();
  return e;
}

void EventQueue::close() {
  {
    std::lock_guard lock(mutex_);
    closed_ = true;
  }
  cv_.notify_all();
}

bool EventQueue::closed() const {
  std::lock_guard lock(mutex_);
  return closed_;
}

uint64_t EventQueue::dropped() const {
  std::lock_guard lock(mutex_);
  return dropped_;
}

size_t EventQueue::size() const {
  std::lock_guard lock(mutex_);
  return events_.size();
}

TelemetryPump::TelemetryPump(Session& session, TelemetrySpec spec, std::shared_ptr<EventQueue> queue) {
  spec.validate();
  thread_ = std::jthread([&session, spec, queue = std::move(queue)](std::stop_token stop) {
    const auto period = std::chrono::duration_cast<std::chrono::steady_clock::duration>(
        std::chrono::duration<double>(1.0 / spec.rate_hz));
    auto next = std::chrono::steady_clock::now();
    std::mutex m;
    std::condition_variable_any cv;
    while (!stop.stop_requested()) {
      try {
        session.advance();
        queue->push("telemetry", session.telemetry(spec));
      } catch (const Error& e) {
        queue->push("telemetry_error", {{"code", std::string(to_string(e.code()))}, {"message", e.what()}});
      }
      next += period;
      std::unique_lock lock(m);
      cv.wait_until(lock, stop, next, [] { return false; });
    }
  });
}

TelemetryPump::~TelemetryPump() { stop(); }

void TelemetryPump::stop() {
  if (thread_.joinable()) {
    thread_.request_stop();
    thread_.join();
  }
}

}  // namespace sonotrap
