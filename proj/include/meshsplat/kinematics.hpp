#pragma once

// Missing-hand detection and 2D kinematic-chain gap filling.
//
// A hand is missing in a frame when both its wrist and palm confidences
// fall below the threshold. Each run of missing frames bracketed by visible
// frames t-n and t is refilled by rotating the shoulder->elbow->wrist->palm
// chain at a constant angular velocity per segment, anchored to the
// detected shoulder of every frame.

#include "meshsplat/types.hpp"

#include <span>
#include <vector>

namespace meshsplat {

inline constexpr double kDefaultHandThreshold = 0.3;

enum class Side { Left, Right };

const char* to_string(Side side);

/// Layout indices of one arm. Finger keypoints are the layout entries named
/// "<side>_hand_*"; they follow the palm rigidly while a gap is filled.
struct ArmLayout {
  std::size_t shoulder = 0;
  std::size_t elbow = 0;
  std::size_t wrist = 0;
  std::size_t palm = 0;
  std::vector<std::size_t> fingers;
};

/// Resolves "<side>_shoulder", "<side>_elbow", "<side>_wrist" and
/// "<side>_palm" in the layout. Throws Error(Configuration) when absent.
ArmLayout arm_layout(std::span<const std::string> layout, Side side);

struct GapAnnotation {
  Side side = Side::Left;
  int last_visible = 0;    // t - n
  int first_reappear = 0;  // t
  int n = 1;
};

/// A missing run that touches the start or end of the sequence.
struct MissingRun {
  Side side = Side::Left;
  int first = 0;
  int last = 0;
};

struct GapReport {
  std::vector<GapAnnotation> gaps;
  std::vector<MissingRun> unfillable;
};

bool hand_missing(std::span<const Keypoint> frame, const ArmLayout& arm, double threshold);

GapReport detect_missing_hands(const KeypointSequence& seq, double threshold = kDefaultHandThreshold);

/// Absolute image-plane segment angles (atan2 of the raw pixel deltas) and
/// bone lengths of one arm.
struct ChainState {
  double theta_se = 0.0;
  double theta_ew = 0.0;
  double theta_wp = 0.0;
  double len_se = 0.0;
  double len_ew = 0.0;
  double len_wp = 0.0;
};

struct ChainDeltas {
  double se = 0.0;
  double ew = 0.0;
  double wp = 0.0;
};

struct AngularVelocities {
  double omega_se = 0.0;
  double omega_ew = 0.0;
  double omega_wp = 0.0;
};

ChainState chain_angles(const Vec2& shoulder, const Vec2& elbow, const Vec2& wrist, const Vec2& palm);
ChainState chain_angles(std::span<const Keypoint> frame, const ArmLayout& arm);

/// Segment-relative angular changes from state_a to state_b. The absolute
/// differences are wrapped to (-pi, pi] before the chain decomposition.
ChainDeltas relative_deltas(const ChainState& a, const ChainState& b);

AngularVelocities angular_velocities(const ChainDeltas& deltas, int n);

/// Rebuilds the arm keypoints of the interior gap frames. Synthesized
/// keypoints carry confidence == threshold and synthetic == true.
KeypointSequence fill_gap(const KeypointSequence& seq, const GapAnnotation& gap,
                          double threshold = kDefaultHandThreshold);

struct PreprocessResult {
  KeypointSequence keypoints;
  GapReport report;
};

/// Detects every gap and fills the fillable ones.
PreprocessResult preprocess_keypoints(const KeypointSequence& seq, double threshold = kDefaultHandThreshold);

}  // namespace meshsplat
