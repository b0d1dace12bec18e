#include <gtest/gtest.h>

#include <cmath>
#include <numbers>
#include <random>

#include "sonotrap/error.hpp"
#include "sonotrap/dynamics.hpp"
#include "sonotrap/field.hpp"

using namespace sonotrap;

namespace {

MediumState lambda_8_5() { return calibration_medium(); }

PhaseFrame zero_frame(const ArrayLayout& layout, const MediumState& medium) {
  PhaseFrame f;
  f.channel_ids = layout.emitter_ids();
  f.phases.assign(f.channel_ids.size(), 0.0);
  f.delays_cycles.assign(f.channel_ids.size(), 0);
  f.cycles_per_period = QuantizationConfig::for_layout(layout).cycles_per_period();
  f.medium = medium;
  return f;
}

AcousticField focused(const ArrayLayout& layout, const Vec3& target, const MediumState& medium) {
  const auto frame = compute_frame(layout, {target}, medium, QuantizationConfig::for_layout(layout));
  return AcousticField(layout, frame, medium, default_source_amplitude());
}

}  // namespace

TEST(Directivity, PistonLimits) {
  EXPECT_DOUBLE_EQ(piston_directivity(3.7, 0.0), 1.0);
  // First zero of J1 at 3.8317.
  EXPECT_NEAR(piston_directivity(3.8317059702, 1.0), 0.0, 1e-9);
  // q-form agrees with the direct form.
  for (double s : {0.1, 0.8, 2.0, 3.0, 5.0}) {
    EXPECT_NEAR(piston_directivity_q(s * s).g, piston_directivity(s, 1.0), 1e-12) << s;
  }
}

TEST(Spl, ReferencePoints) {
  EXPECT_NEAR(spl_db(7962.0 * std::sqrt(2.0)), 172.0, 0.01);
  EXPECT_NEAR(spl_db(2.0 * 1000.0) - spl_db(1000.0), 20.0 * std::log10(2.0), 1e-12);
  EXPECT_NEAR(spl_db(2.0 * 1000.0) - spl_db(1000.0), 6.02, 0.001);
  EXPECT_NEAR(spl_db(20e-6 * std::sqrt(2.0)), 0.0, 1e-12);
  EXPECT_TRUE(std::isinf(spl_db(0.0)));
  EXPECT_NEAR(spl_db(pressure_for_spl(172.0)), 172.0, 1e-12);
}

TEST(Field, SingleEmitterPhaseAdvancesWithK) {
  const auto layout = build_flat_array(1, 1, 10.0, kCarrier40k);
  const auto medium = lambda_8_5();
  const AcousticField field(layout, zero_frame(layout, medium), medium, 1000.0);
  const double k = field.wavenumber();
  EXPECT_NEAR(k, 2.0 * std::numbers::pi / 8.5, 1e-12);
  for (double z : {60.0, 100.0, 170.0}) {
    const auto a = field.pressure(Vec3(0, 0, z));
    const auto b = field.pressure(Vec3(0, 0, z + 8.5));
    EXPECT_NEAR(std::remainder(std::arg(b) - std::arg(a), 2.0 * std::numbers::pi), 0.0, 1e-9);
    const auto c = field.pressure(Vec3(0, 0, z + 1.0));
    EXPECT_NEAR(std::remainder(std::arg(c) - std::arg(a), 2.0 * std::numbers::pi), k, 1e-9);
  }
}

TEST(Field, SingleEmitterDecaysAsInverseDistance) {
  const auto layout = build_flat_array(1, 1, 10.0, kCarrier40k);
  const auto medium = lambda_8_5();
  const AcousticField field(layout, zero_frame(layout, medium), medium, 1000.0);
  // Least-squares slope of log|p| against log d.
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  int n = 0;
  for (double d = 50.0; d <= 500.0; d += 5.0) {
    const double x = std::log(d), y = std::log(std::abs(field.pressure(Vec3(0, 0, d))));
    sx += x, sy += y, sxx += x * x, sxy += x * y;
    ++n;
  }
  const double slope = (n * sxy - sx * sy) / (n * sxx - sx * sx);
  EXPECT_NEAR(slope, -1.0, 0.01);
}

TEST(Field, TwoSymmetricEmittersDoubleOnAxis) {
  Transducer a, b;
  a.id = 0, a.position = Vec3(-20, 0, 0);
  b.id = 1, b.position = Vec3(20, 0, 0);
  const ArrayLayout pair(ArrayKind::Flat, {a, b});
  Transducer c = b;
  c.id = 0;
  const ArrayLayout single(ArrayKind::Flat, {c});
  const auto medium = lambda_8_5();
  const AcousticField fp(pair, zero_frame(pair, medium), medium, 1000.0);
  const AcousticField fs(single, zero_frame(single, medium), medium, 1000.0);
  for (double z : {30.0, 77.0, 140.0}) {
    const auto p2 = fp.pressure(Vec3(0, 0, z));
    const auto p1 = fs.pressure(Vec3(0, 0, z));
    EXPECT_NEAR(std::abs(p2 - 2.0 * p1), 0.0, 1e-12 * std::abs(p2));
  }
}

TEST(Field, FocusBeatsRandomPoints) {
  const auto layout = presets::flat_8x8();
  const auto field = focused(layout, Vec3(0, 0, 100), lambda_8_5());
  const double at_focus = std::abs(field.pressure(Vec3(0, 0, 100)));
  std::mt19937_64 rng(1000);
  const auto v = layout.working_volume();
  std::uniform_real_distribution<double> ux(v.x.lo, v.x.hi), uy(v.y.lo, v.y.hi), uz(v.z.lo, v.z.hi);
  for (int i = 0; i < 1000; ++i) EXPECT_GE(at_focus, std::abs(field.pressure(Vec3(ux(rng), uy(rng), uz(rng)))));
}

TEST(Field, MirrorSymmetryForAxialFocus) {
  const auto layout = presets::flat_8x8();
  const auto field = focused(layout, Vec3(0, 0, 100), lambda_8_5());
  std::mt19937_64 rng(4);
  std::uniform_real_distribution<double> u(-60.0, 60.0), z(30.0, 200.0);
  for (int i = 0; i < 200; ++i) {
    const Vec3 p(u(rng), u(rng), z(rng));
    const double m = std::abs(field.pressure(p));
    EXPECT_NEAR(std::abs(field.pressure(Vec3(-p.x(), p.y(), p.z()))), m, 1e-9 * m);
    EXPECT_NEAR(std::abs(field.pressure(Vec3(p.x(), -p.y(), p.z()))), m, 1e-9 * m);
  }
}

TEST(Field, MaximumNearCommandedFocus) {
  const auto layout = presets::flat_8x8();
  const auto medium = lambda_8_5();
  for (const Vec3& target : {Vec3(0, 0, 100), Vec3(15, -10, 110), Vec3(-20, 5, 130), Vec3(0, 10, 150)}) {
    const auto field = focused(layout, target, medium);
    Vec3 best = target;
    double best_p = 0.0;
    for (double dx = -12; dx <= 12; dx += 0.5) {
      for (double dy = -12; dy <= 12; dy += 0.5) {
        for (double dz = -12; dz <= 12; dz += 0.5) {
          const Vec3 p = target + Vec3(dx, dy, dz);
          const double m = std::abs(field.pressure(p));
          if (m > best_p) best_p = m, best = p;
        }
      }
    }
    EXPECT_LT((best - target).norm(), 8.5 / 2.0) << target.transpose();
  }
}

// Edge elements are strongly directive (ka near 6), so close foci lose
// aperture and the on-axis peak moves away from the array.
TEST(Field, NearFocusPeakShiftsAwayFromArray) {
  const auto layout = presets::flat_8x8();
  const auto medium = lambda_8_5();
  double prev_shift = 1e9;
  for (double tz : {60.0, 80.0, 100.0, 120.0}) {
    const auto field = focused(layout, Vec3(0, 0, tz), medium);
    double bz = tz, bp = 0.0;
    for (double z = tz - 15.0; z <= tz + 25.0; z += 0.05) {
      const double m = std::abs(field.pressure(Vec3(0, 0, z)));
      if (m > bp) bp = m, bz = z;
    }
    EXPECT_GT(bz - tz, 0.0) << tz;
    EXPECT_LT(bz - tz, prev_shift) << tz;
    prev_shift = bz - tz;
  }
}

TEST(Field, DerivativesMatchFiniteDifferences) {
  const auto layout = presets::flat_8x8_reflector();
  const auto field = focused(layout, Vec3(3, -2, 160), lambda_8_5());
  std::mt19937_64 rng(9);
  std::uniform_real_distribution<double> u(-30, 30), z(60, 105);
  const double h = 1e-4;
  for (int i = 0; i < 20; ++i) {
    const Vec3 p(u(rng), u(rng), z(rng));
    const auto d = field.derivatives(p);
    for (int a = 0; a < 3; ++a) {
      const Vec3 e = Vec3::Unit(a) * h;
      const Complex fd = (field.pressure(p + e) - field.pressure(p - e)) / (2.0 * h);
      EXPECT_LT(std::abs(fd - d.grad(a)), 1e-5 * (std::abs(d.grad(a)) + std::abs(d.p) * field.wavenumber()));
      const auto dp = field.derivatives(p + e, false), dm = field.derivatives(p - e, false);
      for (int b = 0; b < 3; ++b) {
        const Complex fh = (dp.grad(b) - dm.grad(b)) / (2.0 * h);
        EXPECT_LT(std::abs(fh - d.hess(a, b)), 1e-5 * std::abs(d.p) * field.wavenumber() * field.wavenumber() + 1e-3);
      }
    }
    EXPECT_NEAR(std::abs(d.p - field.pressure(p)), 0.0, 1e-9 * std::abs(d.p));
  }
}

TEST(Field, SourceCenterIsSingular) {
  const auto layout = presets::flat_8x8();
  const auto field = focused(layout, Vec3(0, 0, 100), lambda_8_5());
  try {
    field.pressure(layout.transducer(5).position);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::Singularity);
  }
}

TEST(Field, ReflectorNodesHalfWavelengthApart) {
  const auto layout = presets::flat_8x8_reflector();
  const auto medium = lambda_8_5();
  const auto field = focused(layout, Vec3(0, 0, 160), medium);
  // Trap region: the three wavelengths below the plate.
  const double zr = *layout.reflector_z();
  const auto nodes = pressure_nodes(field, Vec3(0, 0, 0), Vec3::UnitZ(), zr - 3.0 * 8.5, zr - 0.1, 0.2);
  ASSERT_GE(nodes.size(), 5u);
  for (size_t i = 1; i < nodes.size(); ++i) EXPECT_NEAR((nodes[i] - nodes[i - 1]) / (8.5 / 2.0), 1.0, 0.02);
}

// Farther down the beam still converges toward the image focus and the axial
// period stretches by a few percent.
TEST(Field, ReflectorNodeSpacingAwayFromPlate) {
  const auto layout = presets::flat_8x8_reflector();
  const auto field = focused(layout, Vec3(0, 0, 160), lambda_8_5());
  const auto nodes = pressure_nodes(field, Vec3(0, 0, 0), Vec3::UnitZ(), 60.0, 108.0, 0.2);
  ASSERT_GE(nodes.size(), 10u);
  for (size_t i = 1; i < nodes.size(); ++i) EXPECT_NEAR((nodes[i] - nodes[i - 1]) / (8.5 / 2.0), 1.0, 0.05);
}

TEST(Field, CalibrationPuts172DbOnFocus) {
  const auto layout = presets::flat_8x8();
  const auto medium = calibration_medium();
  EXPECT_NEAR(wavelength_mm(kCarrier40k, medium), 8.5, 1e-12);
  const double a = calibrate_source_amplitude(layout, medium, Vec3(0, 0, 100));
  EXPECT_NEAR(a, default_source_amplitude(), 1e-9 * a);
  const auto frame = compute_frame(layout, {Vec3(0, 0, 100)}, medium, QuantizationConfig::for_layout(layout));
  const AcousticField field(layout, frame, medium, a);
  EXPECT_NEAR(spl_db(field.pressure(Vec3(0, 0, 100))), 172.0, 1e-6);
}

TEST(FocalWidthSim, EightByEightNearThirteen) {
  const auto layout = presets::flat_8x8();
  const auto field = focused(layout, Vec3(0, 0, 100), lambda_8_5());
  const auto w = measure_focal_width(field, Vec3(0, 0, 100));
  EXPECT_NEAR(w.width_6db, 13.0, 13.0 * 0.2);
  EXPECT_LT(w.width_3db, w.width_6db);
}

// 2 lambda R / D doubles; directivity already narrows the 8x8's effective
// aperture, so the simulated ratio is smaller (about 1.5).
TEST(FocalWidthSim, HalvingApertureWidensFocus) {
  const auto medium = lambda_8_5();
  const auto big = presets::flat_8x8();
  const auto small = build_flat_array(4, 4, kFlatPitchMm, kCarrier40k);
  const double w8 = measure_focal_width(focused(big, Vec3(0, 0, 100), medium), Vec3(0, 0, 100)).width_6db;
  const double w4 = measure_focal_width(focused(small, Vec3(0, 0, 100), medium), Vec3(0, 0, 100)).width_6db;
  EXPECT_GT(w4 / w8, 1.3);
  EXPECT_LT(w4 / w8, 2.3);
}

TEST(FocalWidthSim, WiderAt25Kilohertz) {
  const auto medium = lambda_8_5();
  const double w40 =
      measure_focal_width(focused(presets::flat_8x8(kCarrier40k), Vec3(0, 0, 100), medium), Vec3(0, 0, 100)).width_6db;
  const double w25 =
      measure_focal_width(focused(presets::flat_8x8(kCarrier25k), Vec3(0, 0, 100), medium), Vec3(0, 0, 100)).width_6db;
  EXPECT_GT(w25, w40);
}

TEST(FocalWidthSim, SpanTooSmall) {
  const auto field = focused(presets::flat_8x8(), Vec3(0, 0, 100), lambda_8_5());
  try {
    measure_focal_width(field, Vec3(0, 0, 100), 2.0);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::SliceTooSmall);
  }
}

TEST(Slice, GridAndDecimation) {
  const auto field = focused(presets::flat_8x8(), Vec3(0, 0, 100), lambda_8_5());
  SlicePlane plane;
  plane.axis = PlaneAxis::XZ;
  plane.u_min = -20, plane.u_max = 20, plane.v_min = 80, plane.v_max = 120, plane.pitch = 0.5;
  const auto slice = compute_slice(field, plane);
  EXPECT_EQ(slice.nu, 81u);
  EXPECT_EQ(slice.nv, 81u);
  EXPECT_EQ(slice.at(40, 40), field.pressure(Vec3(0, 0, 100)));
  EXPECT_EQ(slice.at(3, 7), field.pressure(plane.point(3, 7)));
  const auto small = decimate(slice, 32);
  EXPECT_LE(small.nu, 32u);
  EXPECT_LE(small.nv, 32u);
  for (size_t iv = 0; iv < small.nv; ++iv) {
    for (size_t iu = 0; iu < small.nu; ++iu) EXPECT_EQ(small.at(iu, iv), field.pressure(small.plane.point(iu, iv)));
  }
}
