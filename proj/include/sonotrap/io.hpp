#pragma once

#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "sonotrap/echo.hpp"
#include "sonotrap/field.hpp"
#include "sonotrap/trajectory.hpp"

namespace sonotrap {

using Json = nlohmann::json;

// Layout documents: {kind, transducers: [{id, pos, normal, radius, freq,
// role}], reflector_z?, cap_radius?, side_length?}, millimetres and hertz.
Json layout_to_json(const ArrayLayout& layout);
ArrayLayout layout_from_json(const Json& doc);

Json medium_to_json(const MediumState& medium);
MediumState medium_from_json(const Json& doc);

Json vec_to_json(const Vec3& v);
Vec3 vec_from_json(const Json& doc);
/// "x,y,z" in millimetres.
Vec3 parse_vec3(const std::string& text);

// Phase frames: CSV with the fixed header id,phase_rad,delay_cycles, or JSON.
void write_phases_csv(std::ostream& out, const PhaseFrame& frame);
Json phases_to_json(const PhaseFrame& frame);

/// Slice grid as rows of x,y,|p|,SPL where x and y are the plane's in-plane
/// coordinates; the plane itself goes into the JSON header.
void write_slice_csv(std::ostream& out, const FieldSlice& slice);
Json slice_header_json(const FieldSlice& slice);
/// Magnitudes (Pa) and levels (dB) in the same row-major order, for
/// telemetry payloads.
Json slice_to_json(const FieldSlice& slice);

/// t,x,y,z,vx,vy,vz in seconds, millimetres and mm/s.
void write_trajectory_csv(std::ostream& out, const std::vector<TrajectoryPoint>& points);
std::vector<TrajectoryPoint> read_trajectory_csv(std::istream& in);

// Echo traces: raw PCM, one little-endian 16-bit word per sample with the
// converter code left-justified (code << (16 - bits)), plus a sidecar.
std::vector<uint8_t> trace_to_pcm(const EchoTrace& trace);
Json trace_sidecar(const EchoTrace& trace);
/// Inverse of the pair above; validates length and padding bits.
EchoTrace trace_from_pcm(const std::vector<uint8_t>& pcm, const Json& sidecar);
void write_trace(const std::filesystem::path& pcm_path, const EchoTrace& trace);
EchoTrace read_trace(const std::filesystem::path& pcm_path);
/// Sidecar path next to the PCM file: name.pcm -> name.json.
std::filesystem::path sidecar_path(const std::filesystem::path& pcm_path);

/// Timing from "hardware", "software", {refresh_hz} or {latency_s}.
ControllerTiming timing_from_json(const Json& doc);
Json timing_to_json(const ControllerTiming& timing);

Json particle_to_json(const ParticleState& particle);
ParticleState particle_from_json(const Json& doc);

/// Batch experiment file: {shape, radius_or_length, speeds: [...], timing,
/// particle?, height_mm?, iterations?, layout?}. Every speed is run at the
/// step speed / refresh.
struct ExperimentPlan {
  PathShape shape = PathShape::Linear;
  double extent_mm = 10.0;
  std::vector<double> speeds_mm_s;
  ControllerTiming timing;
  std::string timing_label = "hardware";
  ParticleState particle;
  double height_mm = 100.0;
  int iterations = 0;  // 0: 10 sweeps for linear, 5 orbits for circular
  std::optional<ArrayLayout> layout;  // default: flat 8x8 with reflector
};
ExperimentPlan experiment_plan_from_json(const Json& doc);

struct ExperimentRow {
  std::string timing_label;
  TrajectorySpec spec;
  double refresh_hz = 0.0;
  ExperimentResult result;
};

/// Columns follow the measured speed table: speed and step, then the speed
/// the same refresh gives at the hardware step for the shape (the
/// normalized speed), then the simulated outcome.
void write_experiment_csv(std::ostream& out, const std::vector<ExperimentRow>& rows);

Json read_json_file(const std::filesystem::path& path);
void write_json_file(const std::filesystem::path& path, const Json& doc);

}  // namespace sonotrap
