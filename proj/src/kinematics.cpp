#include "meshsplat/kinematics.hpp"

#include "meshsplat/error.hpp"

#include <cmath>

namespace meshsplat {

namespace {

constexpr double kMinBoneLength = 1e-9;

Vec2 position(const Keypoint& k) { return {k.x, k.y}; }

std::size_t require_index(std::span<const std::string> layout, const std::string& name) {
  for (std::size_t i = 0; i < layout.size(); ++i) {
    if (layout[i] == name) return i;
  }
  throw Error(ErrorCode::Configuration, "keypoint layout has no entry named '" + name + "'");
}

double segment_angle(const Vec2& from, const Vec2& to) { return std::atan2(to.y() - from.y(), to.x() - from.x()); }

double segment_length(const Vec2& from, const Vec2& to, const char* bone) {
  const double len = std::hypot(to.x() - from.x(), to.y() - from.y());
  if (len < kMinBoneLength) throw Error(ErrorCode::DegenerateBone, std::string(bone) + " has zero length");
  return len;
}

}  // namespace

const char* to_string(Side side) { return side == Side::Left ? "left" : "right"; }

ArmLayout arm_layout(std::span<const std::string> layout, Side side) {
  const std::string prefix = to_string(side);
  ArmLayout arm;
  arm.shoulder = require_index(layout, prefix + "_shoulder");
  arm.elbow = require_index(layout, prefix + "_elbow");
  arm.wrist = require_index(layout, prefix + "_wrist");
  arm.palm = require_index(layout, prefix + "_palm");
  const std::string finger_prefix = prefix + "_hand_";
  for (std::size_t i = 0; i < layout.size(); ++i) {
    if (layout[i].rfind(finger_prefix, 0) == 0) arm.fingers.push_back(i);
  }
  return arm;
}

bool hand_missing(std::span<const Keypoint> frame, const ArmLayout& arm, double threshold) {
  return frame[arm.wrist].confidence < threshold && frame[arm.palm].confidence < threshold;
}

GapReport detect_missing_hands(const KeypointSequence& seq, double threshold) {
  if (seq.frames.size() < 2) throw Error(ErrorCode::Precondition, "gap detection needs at least two frames");
  GapReport report;
  const int count = static_cast<int>(seq.frames.size());
  for (Side side : {Side::Left, Side::Right}) {
    const ArmLayout arm = arm_layout(seq.layout, side);
    int f = 0;
    while (f < count) {
      if (!hand_missing(seq.frames[f], arm, threshold)) {
        ++f;
        continue;
      }
      const int first = f;
      while (f < count && hand_missing(seq.frames[f], arm, threshold)) ++f;
      const int last = f - 1;
      if (first == 0 || last == count - 1) {
        report.unfillable.push_back({side, first, last});
      } else {
        const int before = first - 1;
        const int after = last + 1;
        report.gaps.push_back({side, before, after, after - before});
      }
    }
  }
  return report;
}

ChainState chain_angles(const Vec2& s, const Vec2& e, const Vec2& w, const Vec2& p) {
  ChainState c;
  c.len_se = segment_length(s, e, "shoulder-elbow");
  c.len_ew = segment_length(e, w, "elbow-wrist");
  c.len_wp = segment_length(w, p, "wrist-palm");
  c.theta_se = segment_angle(s, e);
  c.theta_ew = segment_angle(e, w);
  c.theta_wp = segment_angle(w, p);
  return c;
}

ChainState chain_angles(std::span<const Keypoint> frame, const ArmLayout& arm) {
  return chain_angles(position(frame[arm.shoulder]), position(frame[arm.elbow]), position(frame[arm.wrist]),
                      position(frame[arm.palm]));
}

ChainDeltas relative_deltas(const ChainState& a, const ChainState& b) {
  const double d_se = wrap_angle(b.theta_se - a.theta_se);
  const double d_ew = wrap_angle(b.theta_ew - a.theta_ew);
  const double d_wp = wrap_angle(b.theta_wp - a.theta_wp);
  ChainDeltas out;
  out.se = d_se;
  out.ew = d_ew - out.se;
  out.wp = d_wp - out.ew - out.se;
  return out;
}

AngularVelocities angular_velocities(const ChainDeltas& d, int n) {
  if (n < 1) throw Error(ErrorCode::InvalidArgument, "gap length must be at least one frame");
  return {d.se / n, d.ew / n, d.wp / n};
}

KeypointSequence fill_gap(const KeypointSequence& seq, const GapAnnotation& gap, double threshold) {
  const int count = static_cast<int>(seq.frames.size());
  const int start = gap.last_visible;
  const int end = gap.first_reappear;
  if (gap.n < 1 || end - start != gap.n) {
    throw Error(ErrorCode::InvalidArgument, "gap annotation is inconsistent (t - n must precede t by n frames)");
  }
  if (start < 0 || end >= count) {
    throw Error(ErrorCode::Unfillable, "gap touches the sequence boundary");
  }
  const ArmLayout arm = arm_layout(seq.layout, gap.side);
  if (hand_missing(seq.frames[start], arm, threshold) || hand_missing(seq.frames[end], arm, threshold)) {
    throw Error(ErrorCode::Precondition, "gap endpoints must show the hand");
  }

  KeypointSequence out = seq;
  if (gap.n == 1) return out;

  const ChainState before = chain_angles(seq.frames[start], arm);
  const ChainState after = chain_angles(seq.frames[end], arm);
  const AngularVelocities omega = angular_velocities(relative_deltas(before, after), gap.n);
  const double rate_se = omega.omega_se;
  const double rate_ew = omega.omega_se + omega.omega_ew;
  const double rate_wp = omega.omega_se + omega.omega_ew + omega.omega_wp;

  const Vec2 palm_start = position(seq.frames[start][arm.palm]);

  for (int i = start + 1; i < end; ++i) {
    const Keypoint& shoulder = seq.frames[i][arm.shoulder];
    if (shoulder.confidence < threshold) {
      throw Error(ErrorCode::Precondition,
                  "shoulder not visible in gap frame " + std::to_string(i) + " (" + to_string(gap.side) + ")");
    }
    const double dt = static_cast<double>(i - start);
    const Vec2 s = position(shoulder);
    const Vec2 e = s + before.len_se * Vec2(std::cos(before.theta_se + dt * rate_se),
                                            std::sin(before.theta_se + dt * rate_se));
    const Vec2 w = e + before.len_ew * Vec2(std::cos(before.theta_ew + dt * rate_ew),
                                            std::sin(before.theta_ew + dt * rate_ew));
    const Vec2 p = w + before.len_wp * Vec2(std::cos(before.theta_wp + dt * rate_wp),
                                            std::sin(before.theta_wp + dt * rate_wp));

    auto& frame = out.frames[i];
    const auto put = [&](std::size_t idx, const Vec2& at) {
      frame[idx] = Keypoint{at.x(), at.y(), threshold, true};
    };
    put(arm.elbow, e);
    put(arm.wrist, w);
    put(arm.palm, p);
    for (std::size_t finger : arm.fingers) {
      put(finger, position(seq.frames[start][finger]) + (p - palm_start));
    }
  }
  return out;
}

PreprocessResult preprocess_keypoints(const KeypointSequence& seq, double threshold) {
  PreprocessResult result{seq, detect_missing_hands(seq, threshold)};
  for (const GapAnnotation& gap : result.report.gaps) {
    result.keypoints = fill_gap(result.keypoints, gap, threshold);
  }
  return result;
}

}  // namespace meshsplat
