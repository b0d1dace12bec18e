#include <gtest/gtest.h>

#include <cmath>
#include <numbers>
#include <random>

#include "sonotrap/dynamics.hpp"
#include "sonotrap/error.hpp"

using namespace sonotrap;

namespace {

struct Trap {
  ArrayLayout layout = presets::flat_8x8_reflector();
  MediumState medium = calibration_medium();
  PhaseFrame frame;
  AcousticField field;

  Trap()
      : frame(compute_frame(layout, {Vec3(0, 0, presets::kReflectorHeightMm + 50.0)}, medium,
                            QuantizationConfig::for_layout(layout))),
        field(layout, frame, medium, default_source_amplitude()) {}
};

// Central difference of the potential, in newtons (positions in mm).
Vec3 fd_force(const AcousticField& f, const GorkovParams& g, const Vec3& p, double h) {
  Vec3 out;
  for (int i = 0; i < 3; ++i) {
    const Vec3 e = Vec3::Unit(i) * h;
    out[i] = -(gorkov_potential(f, g, p + e) - gorkov_potential(f, g, p - e)) / (2.0 * h * 1e-3);
  }
  return out;
}

}  // namespace

TEST(Gorkov, EpsContrastFactors) {
  const auto co = gorkov_coefficients(GorkovParams::eps_bead(), make_medium(20.0), kCarrier40k);
  EXPECT_NEAR(co.f2, 2.0 * (29.63 - 1.204) / (2.0 * 29.63 + 1.204), 1e-12);
  // 56.852 / 60.464
  EXPECT_NEAR(co.f2, 0.9403, 5e-4);
  const double c = 343.4;
  EXPECT_NEAR(co.f1, 1.0 - 1.204 * c * c / (29.63 * 900.0 * 900.0), 1e-12);
  EXPECT_GT(co.k1, 0.0);
  EXPECT_GT(co.k2, 0.0);
}

TEST(Gorkov, OversizeParticleRejected) {
  GorkovParams big;
  big.particle_radius_mm = 3.0;  // lambda/4 is about 2.1 mm at 40 kHz
  EXPECT_THROW(gorkov_coefficients(big, make_medium(20.0), kCarrier40k), Error);
  GorkovParams bad;
  bad.particle_density = 0.0;
  EXPECT_THROW(gorkov_coefficients(bad, make_medium(20.0), kCarrier40k), Error);
}

TEST(Gorkov, TravellingWaveHasNoTransverseForce) {
  const auto layout = build_flat_array(1, 1, 10.0, kCarrier40k);
  const auto medium = calibration_medium();
  const auto frame = compute_frame(layout, {Vec3(0, 0, 100)}, medium, QuantizationConfig::for_layout(layout));
  const AcousticField field(layout, frame, medium, 1e4);
  const auto g = GorkovParams::eps_bead();
  const double r = g.particle_radius_mm * 1e-3;
  const double weight = g.particle_density * 4.0 / 3.0 * std::numbers::pi * r * r * r * 9.81;
  for (const Vec3& p : {Vec3(0.5, 0.3, 3000.0), Vec3(-1.0, 0.7, 2500.0)}) {
    const Vec3 f = radiation_force(field, GorkovParams::eps_bead(), p);
    // Negligible against the bead's weight, which a trap must carry.
    EXPECT_LT(std::hypot(f.x(), f.y()), 1e-9 * weight);
  }
}

TEST(Gorkov, StandingWaveMinimaHalfWavelengthApart) {
  const Trap t;
  const auto g = GorkovParams::eps_bead();
  std::vector<double> z, u;
  // Trap region below the plate.
  for (double s = 110.0 - 3.0 * 8.5; s <= 109.5; s += 8.5 / 400.0) {
    z.push_back(s);
    u.push_back(gorkov_potential(t.field, g, Vec3(0, 0, s)));
  }
  std::vector<double> minima;
  for (size_t i = 1; i + 1 < u.size(); ++i) {
    if (u[i] < u[i - 1] && u[i] <= u[i + 1]) minima.push_back(z[i]);
  }
  ASSERT_GE(minima.size(), 5u);
  for (size_t i = 1; i < minima.size(); ++i) EXPECT_NEAR((minima[i] - minima[i - 1]) / 4.25, 1.0, 0.02);
}

TEST(Gorkov, ForceVanishesAtPotentialMinimum) {
  const Trap t;
  const auto g = GorkovParams::eps_bead();
  const auto nodes = pressure_nodes(t.field, Vec3::Zero(), Vec3::UnitZ(), 90.0, 105.0, 0.2);
  ASSERT_FALSE(nodes.empty());
  // Golden-section search on U along the axis near the node.
  double a = nodes[0] - 1.0, b = nodes[0] + 1.0;
  const double r = (std::sqrt(5.0) - 1.0) / 2.0;
  auto U = [&](double s) { return gorkov_potential(t.field, g, Vec3(0, 0, s)); };
  for (int i = 0; i < 200 && b - a > 1e-9; ++i) {
    const double c = b - r * (b - a), d = a + r * (b - a);
    (U(c) < U(d) ? b : a) = (U(c) < U(d) ? d : c);
  }
  const double zmin = 0.5 * (a + b);
  double scale = 0.0;
  for (double s = zmin - 2.0; s <= zmin + 2.0; s += 0.1) {
    scale = std::max(scale, radiation_force(t.field, g, Vec3(0, 0, s)).norm());
  }
  EXPECT_LT(radiation_force(t.field, g, Vec3(0, 0, zmin)).norm(), 1e-5 * scale);
}

TEST(Gorkov, AnalyticMatchesFiniteDifferenceAtTwoSteps) {
  const Trap t;
  const auto g = GorkovParams::eps_bead();
  std::mt19937_64 rng(17);
  std::uniform_real_distribution<double> u(-40, 40), z(40, 105);
  for (int i = 0; i < 20; ++i) {
    const Vec3 p(u(rng), u(rng), z(rng));
    const Vec3 fa = radiation_force(t.field, g, p);
    const double h = 8.5 / 500.0;
    // Richardson: the O(h^2) terms of the two central differences cancel.
    const Vec3 fr = (4.0 * fd_force(t.field, g, p, h / 2.0) - fd_force(t.field, g, p, h)) / 3.0;
    EXPECT_LT((fa - fr).norm(), 1e-6 * fr.norm()) << p.transpose();
    // The library's own central difference is the coarse check.
    EXPECT_LT((fa - radiation_force_central(t.field, g, p)).norm(), 1e-2 * fa.norm());
  }
}

TEST(Gorkov, TooCloseToSourceIsSingular) {
  const Trap t;
  try {
    gorkov_potential(t.field, GorkovParams::eps_bead(), Vec3(-57.75, -57.75, 0.01));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::Singularity);
  }
}

TEST(Dynamics, FreeFall) {
  ParticleState p;
  p.position = Vec3(0, 0, 100);
  DynamicsOptions o;
  o.viscosity = 0.0;
  const ParticleIntegrator integ(p, o);
  const double dt = 1e-5;
  ParticleState s = p;
  for (int i = 0; i < 10000; ++i) integ.step(nullptr, s, dt);
  const double t = 0.1;
  const double exact = 100.0 - 0.5 * kGravity * 1e3 * t * t;
  // Semi-implicit Euler is first order: error g dt t.
  EXPECT_NEAR(s.position.z(), exact, kGravity * 1e3 * dt * t * 1.01);
  EXPECT_NEAR(s.velocity.z(), -kGravity * 1e3 * t, 1e-6);
}

TEST(Dynamics, MassOfEpsBead) {
  ParticleState p;
  EXPECT_NEAR(p.mass_kg(), 29.63 * 4.0 / 3.0 * M_PI * std::pow(0.5e-3, 3), 1e-20);
}

TEST(Dynamics, EquilibriumJustBelowNode) {
  const Trap t;
  const double lambda = t.field.wavelength_mm();
  const auto nodes = pressure_nodes(t.field, Vec3::Zero(), Vec3::UnitZ(), 90.0, 105.0, 0.2);
  ASSERT_FALSE(nodes.empty());
  ParticleState p;
  const auto eq = find_equilibrium(t.field, p, Vec3(0, 0, nodes[0] - 0.05));
  ASSERT_TRUE(eq.converged);
  EXPECT_TRUE(eq.stable);
  // Nearest node to the equilibrium.
  double nearest = nodes[0];
  for (double n : nodes) {
    if (std::abs(n - eq.position.z()) < std::abs(nearest - eq.position.z())) nearest = n;
  }
  const double delta = nearest - eq.position.z();
  EXPECT_GT(delta, 0.0);
  EXPECT_LT(delta, lambda / 4.0);
  // Acoustic lift carries the weight there.
  const Vec3 f = radiation_force(t.field, p.gorkov(), eq.position);
  EXPECT_NEAR(f.z(), p.mass_kg() * kGravity, 1e-6 * p.mass_kg() * kGravity);
  EXPECT_GE(std::abs(f.z()), p.mass_kg() * kGravity * (1.0 - 1e-6));
}

TEST(Dynamics, SettlesOntoEquilibrium) {
  const Trap t;
  ParticleState p;
  const auto nodes = pressure_nodes(t.field, Vec3::Zero(), Vec3::UnitZ(), 90.0, 105.0, 0.2);
  const auto eq = find_equilibrium(t.field, p, Vec3(0, 0, nodes[0] - 0.05));
  p.position = eq.position + Vec3(0.0, 0.0, 0.2);
  const auto sim = simulate_particle(t.layout, t.frame, t.medium, p, 2e-5, 1.0, default_source_amplitude());
  EXPECT_FALSE(sim.escaped());
  EXPECT_LT((sim.points.back().state.position - eq.position).norm(), 0.02);
}

TEST(Dynamics, Deterministic) {
  const Trap t;
  ParticleState p;
  p.position = Vec3(3, -2, 70);
  const auto a = simulate_particle(t.layout, t.frame, t.medium, p, 1e-4, 2.0, default_source_amplitude());
  const auto b = simulate_particle(t.layout, t.frame, t.medium, p, 1e-4, 2.0, default_source_amplitude());
  ASSERT_EQ(a.points.size(), b.points.size());
  EXPECT_EQ(a.points.back().state, b.points.back().state);
}

TEST(Dynamics, MultiplexNeedsFineSteps) {
  const Trap t;
  const std::vector<FocalCommand> cmds{{Vec3(0, 0, 160)}, {Vec3(5, 0, 160)}};
  const auto sched = multiplex(t.layout, cmds, t.medium, QuantizationConfig::for_layout(t.layout),
                               ControllerTiming::hardware());
  ParticleState p;
  EXPECT_THROW(simulate_particle(t.layout, sched, t.medium, p, sched.dwell_s, 1e-3, default_source_amplitude()), Error);
  EXPECT_NO_THROW(simulate_particle(t.layout, sched, t.medium, p, sched.dwell_s / 10.0, 1e-3, default_source_amplitude()));
}
