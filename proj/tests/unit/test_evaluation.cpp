#include <gtest/gtest.h>

#include <cmath>
#include <limits>
#include <random>

#include "fusionflow/evaluation.hpp"

using namespace fusionflow;

namespace {

FlowField random_flow(std::size_t w, std::size_t h, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> d(-3, 3);
  FlowField f(w, h);
  for (std::size_t i = 0; i < f.u.size(); ++i) {
    f.u[i] = d(rng);
    f.v[i] = d(rng);
  }
  return f;
}

EvalMask random_mask(std::size_t w, std::size_t h, std::mt19937_64& rng) {
  EvalMask m{w, h, std::vector<std::uint8_t>(w * h, 0), 0};
  std::bernoulli_distribution d(0.4);
  for (auto& a : m.active) m.m += (a = d(rng));
  if (m.m == 0) m.m = (m.active[0] = 1);
  return m;
}

}  // namespace

TEST(Aee, Examples) {
  FlowField a(4, 3, 0.5, -1), zero(4, 3), unit(4, 3, 1, 0);
  const auto full = EvalMask::full(4, 3);
  EXPECT_EQ(aee(a, a, full), 0.0);
  EXPECT_EQ(aee(unit, zero, full), 1.0);
  FlowField one(4, 3);
  one.u[5] = 3;
  one.v[5] = 4;
  EvalMask m{4, 3, std::vector<std::uint8_t>(12, 0), 1};
  m.active[5] = 1;
  EXPECT_EQ(aee(one, zero, m), 5.0);
}

TEST(Aee, Errors) {
  FlowField a(4, 4), b(4, 3);
  EXPECT_THROW(aee(a, b, EvalMask::full(4, 4)), InvalidInput);
  EvalMask empty{4, 4, std::vector<std::uint8_t>(16, 0), 0};
  EXPECT_THROW(aee(a, a, empty), EmptyMaskError);
  FlowField n = a;
  n.v[3] = std::numeric_limits<double>::quiet_NaN();
  EXPECT_THROW(aee(n, a, EvalMask::full(4, 4)), InvalidInput);
}

TEST(Aee, NonnegativeTriangleAndDisjointUnion) {
  std::mt19937_64 rng(1);
  for (int t = 0; t < 200; ++t) {
    const auto a = random_flow(7, 5, rng), b = random_flow(7, 5, rng), c = random_flow(7, 5, rng);
    const auto m = random_mask(7, 5, rng);
    EXPECT_GE(aee(a, b, m), 0.0);
    EXPECT_LE(aee(a, c, m), aee(a, b, m) + aee(b, c, m) + 1e-12);

    EvalMask m1 = m, m2 = m;
    m1.m = m2.m = 0;
    bool toggle = false;
    for (std::size_t i = 0; i < m.active.size(); ++i) {
      m1.active[i] = m2.active[i] = 0;
      if (!m.active[i]) continue;
      (toggle ? m2 : m1).active[i] = 1;
      ++(toggle ? m2 : m1).m;
      toggle = !toggle;
    }
    if (m1.m == 0 || m2.m == 0) continue;
    EXPECT_NEAR(double(m.m) * aee(a, b, m), double(m1.m) * aee(a, b, m1) + double(m2.m) * aee(a, b, m2), 1e-10);
  }
}

TEST(EventMask, Examples) {
  SpikeVolume v(3, 4, 5);
  EXPECT_EQ(event_mask(v).m, 0u);
  v.at(1, 2, 3, 4) = 1;
  auto m = event_mask(v);
  EXPECT_EQ(m.m, 1u);
  EXPECT_EQ(m.active[3 * 5 + 4], 1);
  v.at(0, 0, 3, 4) = 1;
  v.at(2, 3, 3, 4) = 1;
  EXPECT_EQ(event_mask(v).m, 1u);
}

TEST(AeeEvent, EmptyWindowIsNa) {
  FlowField a(5, 4);
  EXPECT_FALSE(aee_event(a, a, SpikeVolume(2, 4, 5)).has_value());
}

TEST(FlowColor, ZeroFlowIsWhite) {
  auto img = flow_to_color(FlowField(6, 4));
  EXPECT_EQ(img.width, 6u);
  EXPECT_EQ(img.height, 4u);
  for (auto c : img.data) EXPECT_EQ(c, 255);
}

TEST(FlowColor, ConstantFlowSingleHue) {
  auto img = flow_to_color(FlowField(5, 5, 2.0, 0.0));
  for (std::size_t i = 3; i < img.data.size(); ++i) EXPECT_EQ(img.data[i], img.data[i % 3]);
  // Rightward flow at full saturation is red.
  EXPECT_EQ(img.data[0], 255);
  EXPECT_EQ(img.data[1], 0);
  EXPECT_EQ(img.data[2], 0);
}

TEST(FlowColor, MaxMagHalvesSaturation) {
  const FlowField f(3, 3, 0.0, 1.0);
  auto sat = [](const RgbImage& im) {
    const double mx = std::max({im.data[0], im.data[1], im.data[2]});
    const double mn = std::min({im.data[0], im.data[1], im.data[2]});
    return (mx - mn) / mx;
  };
  EXPECT_NEAR(sat(flow_to_color(f, 2.0)), 0.5 * sat(flow_to_color(f, 1.0)), 1.0 / 255);
  EXPECT_THROW(flow_to_color(f, 0.0), InvalidInput);
}
