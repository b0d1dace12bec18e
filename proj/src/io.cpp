#include "sonotrap/io.hpp"

#include <charconv>
#include <fstream>
#include <iomanip>
#include <limits>
#include <sstream>

#include "sonotrap/error.hpp"

namespace sonotrap {

namespace {

template <typename T>
T required(const Json& doc, const char* key) {
  if (!doc.is_object() || !doc.contains(key)) throw Error(ErrorCode::Parse, std::string("missing field '") + key + "'");
  try {
    return doc.at(key).get<T>();
  } catch (const Json::exception& e) {
    throw Error(ErrorCode::Parse, std::string("field '") + key + "': " + e.what());
  }
}

template <typename T>
std::optional<T> optional_field(const Json& doc, const char* key) {
  if (!doc.contains(key) || doc.at(key).is_null()) return std::nullopt;
  return required<T>(doc, key);
}

std::ostream& full_precision(std::ostream& out) {
  return out << std::setprecision(std::numeric_limits<double>::max_digits10);
}

double parse_double(std::string_view s) {
  while (!s.empty() && s.front() == ' ') s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\r')) s.remove_suffix(1);
  double v = 0.0;
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size()) {
    throw Error(ErrorCode::Parse, "not a number: '" + std::string(s) + "'");
  }
  return v;
}

std::vector<std::string_view> split(std::string_view line, char sep) {
  std::vector<std::string_view> out;
  size_t start = 0;
  while (true) {
    const size_t pos = line.find(sep, start);
    out.push_back(line.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return out;
}

constexpr const char* kTrajectoryHeader = "t,x,y,z,vx,vy,vz";

}  // namespace

Json vec_to_json(const Vec3& v) { return Json::array({v.x(), v.y(), v.z()}); }

Vec3 vec_from_json(const Json& doc) {
  if (!doc.is_array() || doc.size() != 3) throw Error(ErrorCode::Parse, "expected a 3-element array");
  try {
    return {doc[0].get<double>(), doc[1].get<double>(), doc[2].get<double>()};
  } catch (const Json::exception& e) {
    throw Error(ErrorCode::Parse, e.what());
  }
}

Vec3 parse_vec3(const std::string& text) {
  const auto parts = split(text, ',');
  if (parts.size() != 3) throw Error(ErrorCode::InvalidArgument, "expected x,y,z but got '" + text + "'");
  try {
    return {parse_double(parts[0]), parse_double(parts[1]), parse_double(parts[2])};
  } catch (const Error&) {
    throw Error(ErrorCode::InvalidArgument, "expected x,y,z but got '" + text + "'");
  }
}

Json layout_to_json(const ArrayLayout& layout) {
  Json ts = Json::array();
  for (const auto& t : layout.transducers()) {
    ts.push_back({{"id", t.id},
                  {"pos", vec_to_json(t.position)},
                  {"normal", vec_to_json(t.normal)},
                  {"radius", t.radius},
                  {"freq", t.carrier_hz},
                  {"role", t.is_emitter() ? "emitter" : "receiver"}});
  }
  Json doc = {{"kind", to_string(layout.kind())}, {"transducers", ts}, {"side_length", layout.side_length()}};
  if (layout.reflector_z()) doc["reflector_z"] = *layout.reflector_z();
  if (layout.cap_radius()) doc["cap_radius"] = *layout.cap_radius();
  return doc;
}

ArrayLayout layout_from_json(const Json& doc) {
  const auto kind_name = required<std::string>(doc, "kind");
  ArrayKind kind;
  try {
    kind = array_kind_from_string(kind_name);
  } catch (const Error& e) {
    throw Error(ErrorCode::Parse, e.what());
  }
  const auto& list = doc.contains("transducers") ? doc.at("transducers") : Json();
  if (!list.is_array()) throw Error(ErrorCode::Parse, "'transducers' must be an array");
  std::vector<Transducer> ts;
  for (const auto& item : list) {
    Transducer t;
    t.id = required<int>(item, "id");
    t.position = vec_from_json(item.contains("pos") ? item.at("pos") : Json());
    t.normal = vec_from_json(item.contains("normal") ? item.at("normal") : Json());
    t.radius = required<double>(item, "radius");
    t.carrier_hz = required<double>(item, "freq");
    const auto role = required<std::string>(item, "role");
    if (role == "emitter") t.role = TransducerRole::Emitter;
    else if (role == "receiver") t.role = TransducerRole::Receiver;
    else throw Error(ErrorCode::Parse, "unknown role '" + role + "'");
    ts.push_back(t);
  }
  return ArrayLayout(kind, std::move(ts), optional_field<double>(doc, "reflector_z"),
                     optional_field<double>(doc, "cap_radius"), optional_field<double>(doc, "side_length"));
}

Json medium_to_json(const MediumState& m) {
  return {{"temperature_c", m.temperature_c}, {"speed_of_sound", m.speed_of_sound}, {"density_air", m.density_air}};
}

MediumState medium_from_json(const Json& doc) {
  MediumState m;
  m.temperature_c = required<double>(doc, "temperature_c");
  m.speed_of_sound = required<double>(doc, "speed_of_sound");
  m.density_air = required<double>(doc, "density_air");
  if (!(m.speed_of_sound > 0.0) || !(m.density_air > 0.0)) {
    throw Error(ErrorCode::Parse, "medium sound speed and density must be positive");
  }
  return m;
}

void write_phases_csv(std::ostream& out, const PhaseFrame& frame) {
  out << "id,phase_rad,delay_cycles\n";
  full_precision(out);
  for (size_t i = 0; i < frame.size(); ++i) {
    out << frame.channel_ids[i] << ',' << frame.phases[i] << ',' << frame.delays_cycles[i] << '\n';
  }
}

Json phases_to_json(const PhaseFrame& frame) {
  Json channels = Json::array();
  for (size_t i = 0; i < frame.size(); ++i) {
    channels.push_back(
        {{"id", frame.channel_ids[i]}, {"phase_rad", frame.phases[i]}, {"delay_cycles", frame.delays_cycles[i]}});
  }
  return {{"target", vec_to_json(frame.command.target)},
          {"cycles_per_period", frame.cycles_per_period},
          {"medium", medium_to_json(frame.medium)},
          {"channels", channels}};
}

Json slice_header_json(const FieldSlice& slice) {
  const auto& p = slice.plane;
  return {{"plane", to_string(p.axis)}, {"offset", p.offset}, {"u_min", p.u_min}, {"u_max", p.u_max},
          {"v_min", p.v_min},           {"v_max", p.v_max},   {"pitch", p.pitch}, {"nu", slice.nu},
          {"nv", slice.nv},             {"units", {{"length", "mm"}, {"pressure", "Pa"}, {"level", "dB SPL"}}}};
}

void write_slice_csv(std::ostream& out, const FieldSlice& slice) {
  out << "x,y,|p|,SPL\n";
  out << std::setprecision(10);
  for (size_t iv = 0; iv < slice.nv; ++iv) {
    for (size_t iu = 0; iu < slice.nu; ++iu) {
      const double mag = std::abs(slice.at(iu, iv));
      const double u = slice.plane.u_min + static_cast<double>(iu) * slice.plane.pitch;
      const double v = slice.plane.v_min + static_cast<double>(iv) * slice.plane.pitch;
      out << u << ',' << v << ',' << mag << ',' << spl_db(mag) << '\n';
    }
  }
}

Json slice_to_json(const FieldSlice& slice) {
  Json doc = slice_header_json(slice);
  Json mags = Json::array();
  Json levels = Json::array();
  for (const auto& c : slice.values) {
    const double m = std::abs(c);
    mags.push_back(m);
    const double l = spl_db(m);
    levels.push_back(std::isfinite(l) ? Json(l) : Json(nullptr));
  }
  doc["abs_p"] = std::move(mags);
  doc["spl_db"] = std::move(levels);
  return doc;
}

void write_trajectory_csv(std::ostream& out, const std::vector<TrajectoryPoint>& points) {
  out << kTrajectoryHeader << '\n';
  full_precision(out);
  for (const auto& p : points) {
    const auto& s = p.state;
    out << p.t << ',' << s.position.x() << ',' << s.position.y() << ',' << s.position.z() << ',' << s.velocity.x()
        << ',' << s.velocity.y() << ',' << s.velocity.z() << '\n';
  }
}

std::vector<TrajectoryPoint> read_trajectory_csv(std::istream& in) {
  std::string line;
  if (!std::getline(in, line)) throw Error(ErrorCode::Parse, "empty trajectory file");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line != kTrajectoryHeader) throw Error(ErrorCode::Parse, "unexpected trajectory header '" + line + "'");
  std::vector<TrajectoryPoint> out;
  size_t row = 1;
  while (std::getline(in, line)) {
    ++row;
    if (line.empty() || line == "\r") continue;
    const auto f = split(line, ',');
    if (f.size() != 7) throw Error(ErrorCode::Parse, "row " + std::to_string(row) + ": expected 7 columns");
    TrajectoryPoint p;
    p.t = parse_double(f[0]);
    p.state.position = {parse_double(f[1]), parse_double(f[2]), parse_double(f[3])};
    p.state.velocity = {parse_double(f[4]), parse_double(f[5]), parse_double(f[6])};
    out.push_back(p);
  }
  return out;
}

std::vector<uint8_t> trace_to_pcm(const EchoTrace& trace) {
  const int shift = 16 - trace.adc.bits;
  std::vector<uint8_t> out;
  out.reserve(trace.samples.size() * 2);
  for (int s : trace.samples) {
    if (s < 0 || s >= trace.adc.levels()) throw Error(ErrorCode::InvalidArgument, "sample outside converter range");
    const auto word = static_cast<uint16_t>(s << shift);
    out.push_back(static_cast<uint8_t>(word & 0xFF));
    out.push_back(static_cast<uint8_t>(word >> 8));
  }
  return out;
}

Json trace_sidecar(const EchoTrace& t) {
  return {{"sample_rate", t.sample_rate_hz},
          {"probe_frequency", t.probe_frequency_hz},
          {"channel", t.channel},
          {"bits", t.adc.bits},
          {"full_scale_v", t.adc.full_scale_v},
          {"encoding", "pcm_s16le_left_justified_unsigned"},
          {"samples", t.samples.size()},
          {"receiver_position", vec_to_json(t.receiver_position)},
          {"receiver_carrier", t.receiver_carrier_hz},
          {"receiver_q", t.receiver_q},
          {"probe_cycles", t.probe_cycles}};
}

EchoTrace trace_from_pcm(const std::vector<uint8_t>& pcm, const Json& sidecar) {
  EchoTrace t;
  t.sample_rate_hz = required<double>(sidecar, "sample_rate");
  t.probe_frequency_hz = required<double>(sidecar, "probe_frequency");
  t.channel = required<int>(sidecar, "channel");
  t.adc.bits = optional_field<int>(sidecar, "bits").value_or(12);
  t.adc.full_scale_v = optional_field<double>(sidecar, "full_scale_v").value_or(1.0);
  t.adc.sample_rate_hz = t.sample_rate_hz;
  if (sidecar.contains("receiver_position")) t.receiver_position = vec_from_json(sidecar.at("receiver_position"));
  t.receiver_carrier_hz = optional_field<double>(sidecar, "receiver_carrier").value_or(kCarrier40k);
  t.receiver_q = optional_field<double>(sidecar, "receiver_q").value_or(kReceiverQ);
  t.probe_cycles = optional_field<int>(sidecar, "probe_cycles").value_or(kProbeCycles);
  if (t.adc.bits < 1 || t.adc.bits > 16) throw Error(ErrorCode::Parse, "bits must be 1..16");
  if (pcm.size() % 2 != 0) throw Error(ErrorCode::Parse, "PCM length is not a whole number of 16-bit words");
  if (const auto n = optional_field<size_t>(sidecar, "samples"); n && *n * 2 != pcm.size()) {
    throw Error(ErrorCode::Parse, "PCM holds " + std::to_string(pcm.size() / 2) + " samples, sidecar says " +
                                      std::to_string(*n));
  }
  const int shift = 16 - t.adc.bits;
  const uint16_t pad_mask = static_cast<uint16_t>((1u << shift) - 1u);
  t.samples.reserve(pcm.size() / 2);
  for (size_t i = 0; i < pcm.size(); i += 2) {
    const auto word = static_cast<uint16_t>(pcm[i] | (pcm[i + 1] << 8));
    if (word & pad_mask) throw Error(ErrorCode::Parse, "non-zero padding bits at sample " + std::to_string(i / 2));
    t.samples.push_back(word >> shift);
  }
  return t;
}

std::filesystem::path sidecar_path(const std::filesystem::path& pcm_path) {
  auto p = pcm_path;
  return p.replace_extension(".json");
}

void write_trace(const std::filesystem::path& pcm_path, const EchoTrace& trace) {
  const auto bytes = trace_to_pcm(trace);
  std::ofstream out(pcm_path, std::ios::binary);
  if (!out) throw Error(ErrorCode::InvalidArgument, "cannot write " + pcm_path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  write_json_file(sidecar_path(pcm_path), trace_sidecar(trace));
}

EchoTrace read_trace(const std::filesystem::path& pcm_path) {
  std::ifstream in(pcm_path, std::ios::binary);
  if (!in) throw Error(ErrorCode::InvalidArgument, "cannot read " + pcm_path.string());
  std::vector<uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return trace_from_pcm(bytes, read_json_file(sidecar_path(pcm_path)));
}

ControllerTiming timing_from_json(const Json& doc) {
  try {
    if (doc.is_string()) {
      const auto s = doc.get<std::string>();
      if (s == "hardware") return ControllerTiming::hardware();
      if (s == "software") return ControllerTiming::software();
      throw Error(ErrorCode::Parse, "unknown timing '" + s + "' (expected hardware or software)");
    }
    // Latency is the primary quantity when both are written.
    if (doc.is_object() && doc.contains("latency_s")) {
      return ControllerTiming::from_latency(doc.at("latency_s").get<double>());
    }
    if (doc.is_object() && doc.contains("refresh_hz")) {
      return ControllerTiming::from_refresh(doc.at("refresh_hz").get<double>());
    }
  } catch (const Json::exception& e) {
    throw Error(ErrorCode::Parse, std::string("timing: ") + e.what());
  }
  throw Error(ErrorCode::Parse, "timing must be \"hardware\", \"software\", {refresh_hz} or {latency_s}");
}

Json timing_to_json(const ControllerTiming& t) { return {{"latency_s", t.latency_s}, {"refresh_hz", t.refresh_hz}}; }

Json particle_to_json(const ParticleState& p) {
  return {{"position", vec_to_json(p.position)},
          {"velocity", vec_to_json(p.velocity)},
          {"radius_mm", p.radius_mm},
          {"density", p.density}};
}

ParticleState particle_from_json(const Json& doc) {
  ParticleState p;
  if (!doc.is_object()) throw Error(ErrorCode::Parse, "particle must be an object");
  if (doc.contains("position")) p.position = vec_from_json(doc.at("position"));
  if (doc.contains("velocity")) p.velocity = vec_from_json(doc.at("velocity"));
  p.radius_mm = optional_field<double>(doc, "radius_mm").value_or(p.radius_mm);
  p.density = optional_field<double>(doc, "density").value_or(p.density);
  if (!(p.radius_mm > 0.0) || !(p.density > 0.0)) {
    throw Error(ErrorCode::Parse, "particle radius and density must be positive");
  }
  return p;
}

ExperimentPlan experiment_plan_from_json(const Json& doc) {
  ExperimentPlan plan;
  try {
    plan.shape = path_shape_from_string(required<std::string>(doc, "shape"));
  } catch (const Error& e) {
    if (e.code() == ErrorCode::Parse) throw;
    throw Error(ErrorCode::Parse, e.what());
  }
  plan.extent_mm = required<double>(doc, "radius_or_length");
  if (!(plan.extent_mm > 0.0)) throw Error(ErrorCode::Parse, "radius_or_length must be positive");
  plan.speeds_mm_s = required<std::vector<double>>(doc, "speeds");
  for (double v : plan.speeds_mm_s) {
    if (!(v >= 0.0)) throw Error(ErrorCode::Parse, "speeds must be non-negative");
  }
  if (doc.contains("timing")) {
    plan.timing = timing_from_json(doc.at("timing"));
    plan.timing_label = doc.at("timing").is_string() ? doc.at("timing").get<std::string>() : "custom";
  } else {
    plan.timing = ControllerTiming::hardware();
  }
  if (doc.contains("particle")) plan.particle = particle_from_json(doc.at("particle"));
  plan.height_mm = optional_field<double>(doc, "height_mm").value_or(plan.height_mm);
  plan.iterations = optional_field<int>(doc, "iterations").value_or(0);
  if (plan.iterations < 0) throw Error(ErrorCode::Parse, "iterations must be >= 0");
  if (doc.contains("layout")) plan.layout = layout_from_json(doc.at("layout"));
  return plan;
}

void write_experiment_csv(std::ostream& out, const std::vector<ExperimentRow>& rows) {
  out << "timing,shape,extent_mm,speed_mm_s,step_mm,refresh_hz,normalized_speed_mm_s,fixed_step_mm,completed,"
         "achieved_speed_mm_s,rms_tracking_error_mm,escape_frame\n";
  out << std::setprecision(8);
  for (const auto& r : rows) {
    const double fixed = table_step_budget(r.spec.shape);
    out << r.timing_label << ',' << to_string(r.spec.shape) << ',' << r.spec.extent_mm << ',' << r.spec.speed_mm_s
        << ',' << r.spec.step_mm << ',' << r.refresh_hz << ',' << fixed * r.refresh_hz << ',' << fixed << ','
        << (r.result.completed ? "true" : "false") << ',' << r.result.particle_speed << ','
        << r.result.rms_tracking_error << ',';
    if (r.result.escape_frame) out << *r.result.escape_frame;
    out << '\n';
  }
}

Json read_json_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::InvalidArgument, "cannot read " + path.string());
  try {
    return Json::parse(in);
  } catch (const Json::parse_error& e) {
    throw Error(ErrorCode::Parse, path.string() + ": " + e.what());
  }
}

void write_json_file(const std::filesystem::path& path, const Json& doc) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorCode::InvalidArgument, "cannot write " + path.string());
  out << doc.dump(2) << '\n';
}

}  // namespace sonotrap
