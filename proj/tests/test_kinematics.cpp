#include "meshsplat/error.hpp"
#include "meshsplat/kinematics.hpp"
#include "test_support.hpp"

#include <gtest/gtest.h>

using namespace meshsplat;
using namespace meshsplat::testing;

namespace {

const std::vector<std::string> kLayout = {"left_shoulder", "left_elbow",  "left_wrist",  "left_palm",
                                          "left_hand_index", "right_shoulder", "right_elbow", "right_wrist",
                                          "right_palm"};

struct ArmMotion {
  Vec2 shoulder0{200, 150};
  Vec2 shoulder_velocity{1.5, -0.5};
  double theta[3] = {0.3, -0.4, 1.2};
  double omega[3] = {0.05, -0.08, 0.11};  // absolute-angle rate per frame
  double len[3] = {60, 50, 12};

  std::array<Vec2, 4> at(int t) const {
    std::array<Vec2, 4> p;
    p[0] = shoulder0 + t * shoulder_velocity;
    for (int s = 0; s < 3; ++s) {
      const double a = theta[s] + t * omega[s];
      p[static_cast<std::size_t>(s) + 1] = p[static_cast<std::size_t>(s)] + len[s] * Vec2(std::cos(a), std::sin(a));
    }
    return p;
  }
};

KeypointSequence motion_sequence(const ArmMotion& m, int frames) {
  KeypointSequence seq;
  seq.layout = kLayout;
  for (int t = 0; t < frames; ++t) {
    const auto p = m.at(t);
    std::vector<Keypoint> f(kLayout.size());
    for (std::size_t j = 0; j < 4; ++j) f[j] = {p[j].x(), p[j].y(), 0.9, false};
    f[4] = {p[3].x() + 4, p[3].y() + 3, 0.9, false};
    for (std::size_t j = 0; j < 4; ++j) f[5 + j] = {400.0 + 10 * static_cast<double>(j), 150.0, 0.9, false};
    seq.frames.push_back(f);
  }
  return seq;
}

void hide_left_hand(KeypointSequence& seq, int first, int last) {
  for (int t = first; t <= last; ++t) {
    auto& f = seq.frames[static_cast<std::size_t>(t)];
    for (std::size_t j = 1; j <= 4; ++j) f[j] = {0.0, 0.0, 0.05, false};
  }
}

// Enumerates the 2*pi-shifted candidates and keeps the smallest magnitude.
double wrap_oracle(double d) {
  double best = d;
  for (int k = -4; k <= 4; ++k) {
    const double c = d + 2 * kPi * k;
    if (std::abs(c) < std::abs(best) || (std::abs(c) == std::abs(best) && c > best)) best = c;
  }
  return best;
}

}  // namespace

TEST(DetectMissingHands, SingleBracketedGap) {
  ArmMotion m;
  KeypointSequence seq = motion_sequence(m, 9);
  for (int t = 3; t <= 5; ++t) {
    seq.frames[static_cast<std::size_t>(t)][2].confidence = 0.1;
    seq.frames[static_cast<std::size_t>(t)][3].confidence = 0.1;
  }
  const GapReport r = detect_missing_hands(seq, 0.3);
  ASSERT_EQ(r.gaps.size(), 1u);
  EXPECT_EQ(r.gaps[0].side, Side::Left);
  EXPECT_EQ(r.gaps[0].last_visible, 2);
  EXPECT_EQ(r.gaps[0].first_reappear, 6);
  EXPECT_EQ(r.gaps[0].n, 4);
  EXPECT_TRUE(r.unfillable.empty());
}

TEST(DetectMissingHands, BothConfidencesMustBeLow) {
  KeypointSequence seq = motion_sequence(ArmMotion{}, 5);
  seq.frames[2][2].confidence = 0.1;
  seq.frames[2][3].confidence = 0.9;
  EXPECT_TRUE(detect_missing_hands(seq, 0.3).gaps.empty());
}

TEST(DetectMissingHands, AllVisibleIsEmpty) {
  const GapReport r = detect_missing_hands(motion_sequence(ArmMotion{}, 6), 0.3);
  EXPECT_TRUE(r.gaps.empty());
  EXPECT_TRUE(r.unfillable.empty());
}

TEST(DetectMissingHands, BoundaryRunsAreUnfillable) {
  KeypointSequence seq = motion_sequence(ArmMotion{}, 8);
  hide_left_hand(seq, 0, 1);
  hide_left_hand(seq, 6, 7);
  const GapReport r = detect_missing_hands(seq, 0.3);
  EXPECT_TRUE(r.gaps.empty());
  ASSERT_EQ(r.unfillable.size(), 2u);
  EXPECT_EQ(r.unfillable[0].first, 0);
  EXPECT_EQ(r.unfillable[0].last, 1);
  EXPECT_EQ(r.unfillable[1].first, 6);
  EXPECT_EQ(r.unfillable[1].last, 7);
}

TEST(DetectMissingHands, Preconditions) {
  KeypointSequence one = motion_sequence(ArmMotion{}, 1);
  EXPECT_THROW(detect_missing_hands(one, 0.3), Error);
  KeypointSequence seq = motion_sequence(ArmMotion{}, 3);
  seq.layout[2] = "left_carpus";
  try {
    detect_missing_hands(seq, 0.3);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::Configuration);
  }
}

TEST(ChainAngles, HorizontalArm) {
  const ChainState c = chain_angles({0, 0}, {1, 0}, {2, 0}, {3, 0});
  EXPECT_EQ(c.theta_se, 0.0);
  EXPECT_EQ(c.theta_ew, 0.0);
  EXPECT_EQ(c.theta_wp, 0.0);
  EXPECT_EQ(c.len_se, 1.0);
  EXPECT_EQ(c.len_ew, 1.0);
  EXPECT_EQ(c.len_wp, 1.0);
}

TEST(ChainAngles, VerticalBone) {
  EXPECT_DOUBLE_EQ(chain_angles({0, 0}, {0, 1}, {1, 1}, {2, 1}).theta_se, kPi / 2);
}

TEST(ChainAngles, MatchesTrigOracle) {
  std::mt19937_64 rng(11);
  for (int i = 0; i < 100; ++i) {
    std::array<Vec2, 4> p;
    for (auto& v : p) v = Vec2(uniform(rng, 0, 500), uniform(rng, 0, 500));
    const ChainState c = chain_angles(p[0], p[1], p[2], p[3]);
    const double th[3] = {c.theta_se, c.theta_ew, c.theta_wp};
    const double len[3] = {c.len_se, c.len_ew, c.len_wp};
    for (std::size_t s = 0; s < 3; ++s) {
      const Vec2 d = p[s + 1] - p[s];
      EXPECT_NEAR(th[s], std::atan2(d.y(), d.x()), 1e-12);
      EXPECT_NEAR(len[s], std::sqrt(d.squaredNorm()), 1e-12);
    }
  }
}

TEST(ChainAngles, CoincidentJointsAreDegenerate) {
  try {
    chain_angles({1, 1}, {1, 1}, {2, 1}, {3, 1});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::DegenerateBone);
  }
}

TEST(RelativeDeltas, IdenticalStatesAreZero) {
  const ChainState s = chain_angles({0, 0}, {3, 1}, {5, 4}, {6, 6});
  const ChainDeltas d = relative_deltas(s, s);
  EXPECT_EQ(d.se, 0.0);
  EXPECT_EQ(d.ew, 0.0);
  EXPECT_EQ(d.wp, 0.0);
}

TEST(RelativeDeltas, ChainDecomposition) {
  ChainState a, b;
  b.theta_se = 0.2;
  b.theta_ew = 0.5;
  b.theta_wp = 0.9;
  const ChainDeltas d = relative_deltas(a, b);
  EXPECT_NEAR(d.se, 0.2, 1e-15);
  EXPECT_NEAR(d.ew, 0.3, 1e-15);
  EXPECT_NEAR(d.wp, 0.4, 1e-15);
}

TEST(RelativeDeltas, PropertyMatchesWrapOracle) {
  std::mt19937_64 rng(12);
  for (int i = 0; i < 1000; ++i) {
    ChainState a, b;
    a.theta_se = uniform(rng, -kPi, kPi);
    a.theta_ew = uniform(rng, -kPi, kPi);
    a.theta_wp = uniform(rng, -kPi, kPi);
    b.theta_se = uniform(rng, -kPi, kPi);
    b.theta_ew = uniform(rng, -kPi, kPi);
    b.theta_wp = uniform(rng, -kPi, kPi);
    const double se = wrap_oracle(b.theta_se - a.theta_se);
    const double ew = wrap_oracle(b.theta_ew - a.theta_ew) - se;
    const double wp = wrap_oracle(b.theta_wp - a.theta_wp) - ew - se;
    const ChainDeltas d = relative_deltas(a, b);
    EXPECT_NEAR(d.se, se, 1e-9);
    EXPECT_NEAR(d.ew, ew, 1e-9);
    EXPECT_NEAR(d.wp, wp, 1e-9);
  }
}

TEST(AngularVelocities, DividesByGapLength) {
  const AngularVelocities w = angular_velocities({0.4, -0.2, 0.8}, 4);
  EXPECT_DOUBLE_EQ(w.omega_se, 0.1);
  EXPECT_DOUBLE_EQ(w.omega_ew, -0.05);
  EXPECT_DOUBLE_EQ(w.omega_wp, 0.2);
  EXPECT_THROW(angular_velocities({}, 0), Error);
}

TEST(FillGap, RecoversConstantVelocityArm) {
  ArmMotion m;
  const KeypointSequence truth = motion_sequence(m, 12);
  KeypointSequence seq = truth;
  hide_left_hand(seq, 3, 7);
  const PreprocessResult r = preprocess_keypoints(seq, 0.3);
  ASSERT_EQ(r.report.gaps.size(), 1u);
  for (int t = 3; t <= 7; ++t) {
    const auto& f = r.keypoints.frames[static_cast<std::size_t>(t)];
    const auto& g = truth.frames[static_cast<std::size_t>(t)];
    for (std::size_t j = 1; j <= 4; ++j) {
      EXPECT_LE(std::hypot(f[j].x - g[j].x, f[j].y - g[j].y), 1e-6) << "frame " << t << " joint " << j;
      EXPECT_TRUE(f[j].synthetic);
      EXPECT_EQ(f[j].confidence, 0.3);
    }
  }
}

TEST(FillGap, ZeroVelocityCopiesArmShapeToEachShoulder) {
  ArmMotion m;
  m.omega[0] = m.omega[1] = m.omega[2] = 0.0;
  KeypointSequence seq = motion_sequence(m, 8);
  hide_left_hand(seq, 2, 5);
  const KeypointSequence out = preprocess_keypoints(seq, 0.3).keypoints;
  const auto& ref = out.frames[1];
  for (int t = 2; t <= 5; ++t) {
    const auto& f = out.frames[static_cast<std::size_t>(t)];
    const ChainState c = chain_angles(f, arm_layout(kLayout, Side::Left));
    EXPECT_NEAR(c.len_se, m.len[0], 1e-9);
    EXPECT_NEAR(c.len_ew, m.len[1], 1e-9);
    EXPECT_NEAR(c.len_wp, m.len[2], 1e-9);
    const Vec2 shift(f[0].x - ref[0].x, f[0].y - ref[0].y);
    for (std::size_t j = 1; j <= 4; ++j) {
      EXPECT_NEAR(f[j].x, ref[j].x + shift.x(), 1e-9);
      EXPECT_NEAR(f[j].y, ref[j].y + shift.y(), 1e-9);
    }
  }
}

TEST(FillGap, GapOfOneIsUnchanged) {
  const KeypointSequence seq = motion_sequence(ArmMotion{}, 4);
  const KeypointSequence out = fill_gap(seq, {Side::Left, 1, 2, 1});
  for (std::size_t t = 0; t < seq.frames.size(); ++t) {
    for (std::size_t j = 0; j < kLayout.size(); ++j) {
      EXPECT_EQ(out.frames[t][j].x, seq.frames[t][j].x);
      EXPECT_EQ(out.frames[t][j].synthetic, false);
    }
  }
}

TEST(FillGap, OtherFramesAndSidesUntouched) {
  KeypointSequence seq = motion_sequence(ArmMotion{}, 10);
  hide_left_hand(seq, 4, 6);
  const KeypointSequence out = preprocess_keypoints(seq, 0.3).keypoints;
  for (std::size_t t = 0; t < 10; ++t) {
    for (std::size_t j = 0; j < kLayout.size(); ++j) {
      const bool filled = t >= 4 && t <= 6 && j >= 1 && j <= 4;
      if (!filled) {
        EXPECT_EQ(out.frames[t][j].x, seq.frames[t][j].x);
        EXPECT_EQ(out.frames[t][j].y, seq.frames[t][j].y);
        EXPECT_EQ(out.frames[t][j].confidence, seq.frames[t][j].confidence);
      }
    }
  }
}

TEST(FillGap, SequentialConsistencyUnderUnrelatedEdits) {
  KeypointSequence seq = motion_sequence(ArmMotion{}, 12);
  hide_left_hand(seq, 3, 5);
  KeypointSequence edited = seq;
  for (std::size_t j = 0; j < kLayout.size(); ++j) edited.frames[10][j].x += 7.0;
  const auto a = preprocess_keypoints(seq, 0.3).keypoints;
  const auto b = preprocess_keypoints(edited, 0.3).keypoints;
  for (std::size_t t = 3; t <= 5; ++t) {
    for (std::size_t j = 1; j <= 4; ++j) EXPECT_EQ(a.frames[t][j].x, b.frames[t][j].x);
  }
}

TEST(FillGap, FingersFollowPalmRigidly) {
  KeypointSequence seq = motion_sequence(ArmMotion{}, 8);
  hide_left_hand(seq, 2, 4);
  const auto out = preprocess_keypoints(seq, 0.3).keypoints;
  for (std::size_t t = 2; t <= 4; ++t) {
    EXPECT_NEAR(out.frames[t][4].x - out.frames[t][3].x, 4.0, 1e-9);
    EXPECT_NEAR(out.frames[t][4].y - out.frames[t][3].y, 3.0, 1e-9);
    EXPECT_TRUE(out.frames[t][4].synthetic);
  }
}

TEST(FillGap, ErrorContracts) {
  KeypointSequence seq = motion_sequence(ArmMotion{}, 8);
  hide_left_hand(seq, 2, 4);
  try {
    fill_gap(seq, {Side::Left, -1, 3, 4});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::Unfillable);
  }
  KeypointSequence no_shoulder = seq;
  no_shoulder.frames[3][0].confidence = 0.0;
  try {
    fill_gap(no_shoulder, {Side::Left, 1, 5, 4});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::Precondition);
  }
}
