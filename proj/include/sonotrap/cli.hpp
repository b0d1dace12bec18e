#pragma once

#include <iosfwd>
#include <string>

#include "sonotrap/geometry.hpp"

namespace sonotrap {

/// sonotrap {phases, field, experiment, echo, bench, serve}. Returns 0 on
/// success, 2 for invalid input (including unknown flags, which also print
/// usage) and 1 for runtime failures. Options fall back to SONOTRAP_*
/// environment variables when not given on the command line.
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

/// Preset name (flat, flat-reflector, cap, double-cap, dual-cap) or a layout
/// JSON file. A positive carrier overrides the preset default.
ArrayLayout load_layout(const std::string& name_or_path, double carrier_hz = 0.0);

}  // namespace sonotrap
