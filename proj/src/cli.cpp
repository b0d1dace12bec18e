#include "sonotrap/cli.hpp"

#include <atomic>
#include <chrono>
#include <csignal>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>
#include <thread>

#include <CLI11.hpp>

#include "sonotrap/error.hpp"
#include "sonotrap/io.hpp"
#include "sonotrap/server.hpp"
#include "sonotrap/session.hpp"

namespace sonotrap {

namespace {

std::atomic<bool> g_interrupted{false};

extern "C" void on_signal(int) { g_interrupted = true; }

// Options shared by the subcommands that build a field.
struct Common {
  double temp = 20.0;
  std::string temp_file;
  double carrier = 0.0;
  std::string layout = "flat";

  MediumState medium() const {
    const MediumState base = make_medium(temp);
    if (temp_file.empty()) return base;
    FileTemperatureSource source(temp_file);
    return read_and_update(source, base);
  }
};

void add_common(CLI::App* cmd, Common& c, const std::string& default_layout) {
  c.layout = default_layout;
  cmd->add_option("--temp,--temperature_c", c.temp, "Air temperature, degrees C")
      ->envname("SONOTRAP_TEMP")
      ->capture_default_str();
  cmd->add_option("--temp-file", c.temp_file, "Read the temperature from a file")->envname("SONOTRAP_TEMP_FILE");
  cmd->add_option("--carrier", c.carrier, "Carrier frequency, Hz (default: the layout's)")
      ->envname("SONOTRAP_CARRIER");
  cmd->add_option("--layout", c.layout, "flat, flat-reflector, cap, double-cap, dual-cap or a layout JSON file")
      ->envname("SONOTRAP_LAYOUT")
      ->capture_default_str();
}

std::ofstream open_out(const std::string& path) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw Error(ErrorCode::SensorIo, "cannot write " + path);
  return f;
}

double focal_length(const ArrayLayout& layout, const Vec3& target) {
  if (layout.cap_radius()) return *layout.cap_radius();
  return (target - layout.center()).norm();
}

int cmd_phases(const Common& c, const std::string& target, double clock, const std::string& format,
               std::ostream& out) {
  const auto layout = load_layout(c.layout, c.carrier);
  const FocalCommand command{parse_vec3(target)};
  const auto frame = compute_frame(layout, command, c.medium(), QuantizationConfig::for_layout(layout, clock));
  if (format == "json") {
    out << phases_to_json(frame).dump(2) << '\n';
  } else {
    write_phases_csv(out, frame);
  }
  return 0;
}

struct FieldArgs {
  std::string target = "0,0,100";
  SlicePlane plane;
  std::string plane_name = "xz";
  std::string out_path;
  std::string header_path;
  bool width = false;
  double amplitude = 0.0;
};

int cmd_field(const Common& c, FieldArgs a, std::ostream& out) {
  const auto layout = load_layout(c.layout, c.carrier);
  const auto medium = c.medium();
  const FocalCommand command{parse_vec3(a.target)};
  const auto frame = compute_frame(layout, command, medium, QuantizationConfig::for_layout(layout));
  const double amplitude = a.amplitude > 0.0 ? a.amplitude : default_source_amplitude();
  const AcousticField field(layout, frame, medium, amplitude);

  if (a.width) {
    const auto w = measure_focal_width(field, command.target);
    const double r = focal_length(layout, command.target);
    const Json doc = {{"width_6db_mm", w.width_6db},
                      {"width_3db_mm", w.width_3db},
                      {"focus_spl_db", w.focus_spl},
                      {"predicted_mm", focal_width(field.wavelength_mm(), r, layout.side_length())},
                      {"wavelength_mm", field.wavelength_mm()},
                      {"focal_length_mm", r},
                      {"side_length_mm", layout.side_length()}};
    out << doc.dump(2) << '\n';
    return 0;
  }

  a.plane.axis = plane_axis_from_string(a.plane_name);
  if (!(a.plane.pitch > 0.0) || a.plane.u_max < a.plane.u_min || a.plane.v_max < a.plane.v_min) {
    throw Error(ErrorCode::InvalidArgument, "slice needs pitch > 0 and min <= max on both axes");
  }
  if (static_cast<double>(a.plane.nu()) * static_cast<double>(a.plane.nv()) > 4e6) {
    throw Error(ErrorCode::InvalidArgument, "slice exceeds 4e6 samples; raise --pitch");
  }
  const auto slice = compute_slice(field, a.plane);
  if (a.out_path.empty()) {
    write_slice_csv(out, slice);
  } else {
    auto f = open_out(a.out_path);
    write_slice_csv(f, slice);
  }
  std::string header = a.header_path;
  if (header.empty() && !a.out_path.empty()) header = std::filesystem::path(a.out_path).replace_extension(".json");
  if (!header.empty()) {
    Json doc = slice_header_json(slice);
    doc["target"] = vec_to_json(command.target);
    doc["medium"] = medium_to_json(medium);
    write_json_file(header, doc);
  }
  return 0;
}

int cmd_experiment(const Common& c, const std::string& plan_path, const std::string& out_path,
                   const std::string& trajectory_dir, std::ostream& out, std::ostream& err) {
  const auto plan = experiment_plan_from_json(read_json_file(plan_path));
  const auto layout = plan.layout.value_or(presets::flat_8x8_reflector());
  const auto medium = c.medium();
  const int iterations = plan.iterations > 0 ? plan.iterations : (plan.shape == PathShape::Linear ? 10 : 5);
  const double amplitude = default_source_amplitude();
  const auto steering =
      TrapSteering::calibrate(layout, medium, plan.particle, plan.height_mm, plan.extent_mm, amplitude);
  ExperimentOptions options;
  options.source_amplitude = amplitude;
  options.record_path = !trajectory_dir.empty();
  if (!trajectory_dir.empty()) std::filesystem::create_directories(trajectory_dir);

  std::vector<ExperimentRow> rows;
  for (size_t i = 0; i < plan.speeds_mm_s.size(); ++i) {
    const double v = plan.speeds_mm_s[i];
    ExperimentRow row{plan.timing_label,
                      {plan.shape, plan.extent_mm, v, v / plan.timing.refresh_hz, plan.height_mm},
                      plan.timing.refresh_hz,
                      {}};
    try {
      row.result = run_experiment(layout, medium, row.spec, plan.timing, plan.particle, iterations, steering, options);
    } catch (const Error& e) {
      if (e.code() != ErrorCode::UnstablePlan) throw;
      err << "speed " << v << " mm/s rejected: " << e.what() << '\n';
    }
    if (!trajectory_dir.empty() && !row.result.path.empty()) {
      auto f = open_out((std::filesystem::path(trajectory_dir) / ("row" + std::to_string(i) + ".csv")).string());
      write_trajectory_csv(f, row.result.path);
    }
    rows.push_back(std::move(row));
  }
  if (out_path.empty()) {
    write_experiment_csv(out, rows);
  } else {
    auto f = open_out(out_path);
    write_experiment_csv(f, rows);
  }
  return 0;
}

struct EchoArgs {
  std::string particle;
  double radius = 0.5;
  double probe = kCarrier40k;
  std::string arrangement = "west-east";
  double duration = 2e-3;
  uint64_t seed = 1;
  double leak = 0.0;
  double noise_floor = kDefaultNoiseFloorLsb;
  std::string out_dir;
  std::vector<std::string> inputs;
  std::vector<double> curve;
};

Json detection_json(const DetectionResult& d) {
  Json peaks = Json::array();
  for (const auto& p : d.peaks) peaks.push_back({{"delay_s", p.delay_s}, {"amplitude_v", p.amplitude_v}});
  auto sign = [](const std::optional<int>& s) { return s ? Json(*s) : Json(nullptr); };
  return {{"detected", d.detected},
          {"direction", d.direction ? Json(to_string(*d.direction)) : Json(nullptr)},
          {"amplitude_v", d.amplitude_v},
          {"offset_sign", {{"x", sign(d.offset_sign[0])}, {"y", sign(d.offset_sign[1])}}},
          {"peaks", peaks},
          {"saturated", d.saturated},
          {"warnings", d.warnings}};
}

int cmd_echo(const Common& c, const EchoArgs& a, std::ostream& out) {
  const auto medium = c.medium();
  if (!a.curve.empty()) {
    out << "probe_hz,size_mm,amplitude_v,out_of_trap_range\n" << std::setprecision(10);
    for (double probe : {kCarrier25k, kCarrier40k}) {
      for (const auto& s : amplitude_vs_size(probe, a.curve, medium)) {
        out << probe << ',' << s.size_mm << ',' << s.amplitude_v << ',' << (s.out_of_trap_range ? "true" : "false")
            << '\n';
      }
    }
    return 0;
  }

  std::vector<EchoTrace> traces;
  if (!a.inputs.empty()) {
    for (const auto& p : a.inputs) traces.push_back(read_trace(p));
  } else {
    if (a.particle.empty()) throw Error(ErrorCode::InvalidArgument, "echo needs --particle or --input");
    ReceiverArrangement arr;
    if (a.arrangement == "west-east") arr = ReceiverArrangement::WestEast;
    else if (a.arrangement == "north-south") arr = ReceiverArrangement::NorthSouth;
    else throw Error(ErrorCode::InvalidArgument, "arrangement must be west-east or north-south");
    const auto layout = flat_with_receivers(arr, c.carrier > 0.0 ? c.carrier : kCarrier40k);
    ParticleState particle;
    particle.position = parse_vec3(a.particle);
    particle.radius_mm = a.radius;
    AdcModel adc;
    adc.seed = a.seed;
    EchoOptions options;
    options.levitation_leak_v = a.leak;
    traces = simulate_echo(layout, particle, a.probe, medium, adc, a.duration, options);
    if (!a.out_dir.empty()) {
      std::filesystem::create_directories(a.out_dir);
      for (const auto& t : traces) {
        write_trace(std::filesystem::path(a.out_dir) / ("ch" + std::to_string(t.channel) + ".pcm"), t);
      }
    }
  }
  out << detection_json(detect(traces, a.noise_floor)).dump(2) << '\n';
  return 0;
}

int cmd_bench(const Common& c, size_t frames, size_t reps, std::ostream& out) {
  const auto layout = load_layout(c.layout, c.carrier);
  const auto r = benchmark(layout, frames, reps, c.medium());
  const double identity = r.refresh_hz * r.latency_per_frame_s;
  const Json doc = {
      {"batch_size", r.batch_size},
      {"repetitions", r.repetitions},
      {"channels", r.channels},
      {"latency_per_frame_s", r.latency_per_frame_s},
      {"refresh_hz", r.refresh_hz},
      {"frames_per_second", r.frames_per_second},
      {"single_frame_latency_s", r.single_frame_latency_s},
      {"batch_speedup", r.batch_speedup},
      {"refresh_identity", {{"refresh_times_latency", identity}, {"ok", std::abs(identity - 1.0) < 1e-9}}},
      // Controller figures from the FPGA build; hardware-specific, listed for
      // comparison and never measured here.
      {"reference_not_reproduced",
       {{"software_latency_s", 154e-6},
        {"hardware_latency_s", 60e-6},
        {"fpga_speedup_single", 2.7},
        {"fpga_speedup_batch", 21.0},
        {"power_w", {0.70, 0.52}}}}};
  out << doc.dump(2) << '\n';
  return std::abs(identity - 1.0) < 1e-9 ? 0 : 1;
}

struct ServeArgs {
  ServerOptions server;
  int http_port = -1;
  bool particle = false;
  std::string timing = "hardware";
  std::string load;
  std::string save;
  double run_for = 0.0;
  std::string target = "0,0,100";
};

int cmd_serve(const Common& c, ServeArgs a, std::ostream& out, std::ostream& err) {
  std::unique_ptr<Session> session;
  if (!a.load.empty()) {
    session = std::make_unique<Session>(load_session(a.load));
  } else {
    SessionOptions so;
    so.timing = timing_from_json(Json(a.timing));
    so.initial = {parse_vec3(a.target)};
    so.with_particle = a.particle;
    session = std::make_unique<Session>(load_layout(c.layout, c.carrier), c.medium(), so);
  }
  if (a.http_port >= 0) a.server.http_port = a.http_port;
  ControlServer server(*session, a.server);
  Json ready = {{"v", kProtocolVersion}, {"port", server.port()}};
  if (server.http_port()) ready["http_port"] = *server.http_port();
  out << ready.dump() << std::endl;

  g_interrupted = false;
  auto old_int = std::signal(SIGINT, on_signal);
  auto old_term = std::signal(SIGTERM, on_signal);
  const auto start = std::chrono::steady_clock::now();
  while (!g_interrupted) {
    if (a.run_for > 0.0 &&
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count() >= a.run_for) {
      break;
    }
    session->advance();
    std::this_thread::sleep_for(std::chrono::milliseconds(20));
  }
  std::signal(SIGINT, old_int);
  std::signal(SIGTERM, old_term);
  server.stop();
  if (!a.save.empty()) {
    save_session(*session, a.save);
    err << "session saved to " << a.save << '\n';
  }
  return 0;
}

}  // namespace

ArrayLayout load_layout(const std::string& name, double carrier_hz) {
  const bool custom = carrier_hz > 0.0;
  if (name == "flat") return presets::flat_8x8(custom ? carrier_hz : kCarrier40k);
  if (name == "flat-reflector") {
    return presets::flat_8x8_reflector(presets::kReflectorHeightMm, custom ? carrier_hz : kCarrier40k);
  }
  if (name == "cap") return presets::spherical_cap_64(custom ? carrier_hz : kCarrier25k);
  if (name == "double-cap") return presets::double_sided_cap_64(custom ? carrier_hz : kCarrier25k);
  if (name == "dual-cap") return presets::dual_frequency_cap_66();
  if (!std::filesystem::exists(name)) {
    throw Error(ErrorCode::InvalidArgument, "unknown layout '" + name + "' (not a preset or a file)");
  }
  return layout_from_json(read_json_file(name));
}

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Ultrasonic levitation array: phases, fields, trap experiments, echo detection and a live service",
               "sonotrap"};
  app.require_subcommand(1);

  Common c;
  std::string target, format = "csv";
  double clock = kFpgaClockHz;
  auto* phases = app.add_subcommand("phases", "Per-channel phase and delay register for a focal point");
  add_common(phases, c, "flat");
  phases->add_option("--target", target, "Focal point X,Y,Z in mm")->required()->envname("SONOTRAP_TARGET");
  phases->add_option("--clock", clock, "Delay counter clock, Hz")->envname("SONOTRAP_CLOCK")->capture_default_str();
  phases->add_option("--format", format, "csv or json")
      ->check(CLI::IsMember({"csv", "json"}))
      ->envname("SONOTRAP_FORMAT")
      ->capture_default_str();

  Common cf;
  FieldArgs fa;
  auto* field = app.add_subcommand("field", "Pressure slice (CSV plus JSON header) or focal width");
  add_common(field, cf, "flat");
  field->add_option("--target", fa.target, "Focal point X,Y,Z in mm")->envname("SONOTRAP_TARGET")->capture_default_str();
  field->add_option("--plane", fa.plane_name, "xy, xz or yz")->capture_default_str();
  field->add_option("--offset", fa.plane.offset, "Plane position along its normal, mm")->capture_default_str();
  field->add_option("--u-min", fa.plane.u_min)->capture_default_str();
  field->add_option("--u-max", fa.plane.u_max)->capture_default_str();
  field->add_option("--v-min", fa.plane.v_min)->capture_default_str();
  field->add_option("--v-max", fa.plane.v_max)->capture_default_str();
  field->add_option("--pitch", fa.plane.pitch, "Grid pitch, mm")->capture_default_str();
  field->add_option("--out", fa.out_path, "Slice CSV path (default stdout)");
  field->add_option("--header", fa.header_path, "JSON header path (default: next to --out)");
  field->add_option("--amplitude", fa.amplitude, "Source amplitude, Pa mm (default: calibrated)");
  field->add_flag("--width", fa.width, "Report the -6/-3 dB focal width instead of a slice");

  Common ce;
  std::string plan_path, exp_out, traj_dir;
  auto* experiment = app.add_subcommand("experiment", "Run a trajectory speed table from a JSON plan");
  add_common(experiment, ce, "flat-reflector");
  experiment->add_option("plan", plan_path, "Plan file")->required()->check(CLI::ExistingFile);
  experiment->add_option("--out", exp_out, "CSV path (default stdout)");
  experiment->add_option("--trajectory-dir", traj_dir, "Write each row's particle path as rowN.csv");

  Common co;
  EchoArgs ea;
  auto* echo = app.add_subcommand("echo", "Simulate receiver traces and detect the particle");
  add_common(echo, co, "flat");
  echo->add_option("--particle", ea.particle, "Particle centre X,Y,Z in mm");
  echo->add_option("--radius", ea.radius, "Particle radius, mm")->capture_default_str();
  echo->add_option("--probe", ea.probe, "Probe frequency, Hz")->capture_default_str();
  echo->add_option("--arrangement", ea.arrangement, "west-east or north-south")
      ->check(CLI::IsMember({"west-east", "north-south"}))
      ->capture_default_str();
  echo->add_option("--duration", ea.duration, "Capture length, s")->capture_default_str();
  echo->add_option("--seed", ea.seed, "Noise seed")->envname("SONOTRAP_SEED")->capture_default_str();
  echo->add_option("--leak", ea.leak, "Levitation carrier leaking into the receivers, V")->capture_default_str();
  echo->add_option("--noise-floor", ea.noise_floor, "Detection threshold, LSB")->capture_default_str();
  echo->add_option("--out-dir", ea.out_dir, "Write chN.pcm traces with JSON sidecars");
  echo->add_option("--input", ea.inputs, "Detect on existing PCM traces instead of simulating");
  echo->add_option("--curve", ea.curve, "Bead diameters (mm) for the amplitude-vs-size table")->delimiter(',');

  Common cb;
  size_t frames = 160, reps = 10;
  auto* bench = app.add_subcommand("bench", "Batch phase computation benchmark on this host");
  add_common(bench, cb, "flat");
  bench->add_option("--frames", frames)->check(CLI::PositiveNumber)->capture_default_str();
  bench->add_option("--reps", reps)->check(CLI::PositiveNumber)->capture_default_str();

  Common cs;
  ServeArgs sa;
  auto* serve = app.add_subcommand("serve", "Live steering service (NDJSON socket, optional HTTP)");
  add_common(serve, cs, "flat-reflector");
  serve->add_option("--host", sa.server.host)->envname("SONOTRAP_HOST")->capture_default_str();
  serve->add_option("--port", sa.server.port, "Control port, 0 picks one")
      ->envname("SONOTRAP_PORT")
      ->capture_default_str();
  serve->add_option("--http-port", sa.http_port, "Snapshot HTTP port, 0 picks one")->envname("SONOTRAP_HTTP_PORT");
  serve->add_option("--timing", sa.timing, "hardware or software")
      ->check(CLI::IsMember({"hardware", "software"}))
      ->envname("SONOTRAP_TIMING")
      ->capture_default_str();
  serve->add_option("--target", sa.target, "Initial focus X,Y,Z in mm")->capture_default_str();
  serve->add_flag("--particle", sa.particle, "Track a bead in the trap");
  serve->add_option("--load", sa.load, "Resume a saved session file");
  serve->add_option("--save", sa.save, "Save the session here on exit")->envname("SONOTRAP_SESSION");
  serve->add_option("--run-for", sa.run_for, "Exit after this many seconds (0: until interrupted)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return 0;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return 0;
  } catch (const CLI::ParseError& e) {
    err << e.what() << "\n\n";
    const auto* sub = app.get_subcommands().empty() ? &app : app.get_subcommands().front();
    err << sub->help();
    return 2;
  }

  try {
    if (*phases) return cmd_phases(c, target, clock, format, out);
    if (*field) return cmd_field(cf, fa, out);
    if (*experiment) return cmd_experiment(ce, plan_path, exp_out, traj_dir, out, err);
    if (*echo) return cmd_echo(co, ea, out);
    if (*bench) return cmd_bench(cb, frames, reps, out);
    if (*serve) return cmd_serve(cs, sa, out, err);
  } catch (const Error& e) {
    err << "error: " << e.what() << '\n';
    return is_validation_error(e.code()) ? 2 : 1;
  } catch (const Json::exception& e) {
    err << "error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return 1;
  }
  return 2;
}

}  // namespace sonotrap
