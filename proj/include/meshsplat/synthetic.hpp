#pragma once

// Procedural assets for tests, benchmarks and the `synth` CLI command.

#include "meshsplat/binding.hpp"
#include "meshsplat/image.hpp"
#include "meshsplat/types.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace meshsplat {

/// Unit square in the z = 0 plane split into two triangles, one root joint.
SkinnedMesh two_triangle_mesh();

/// Icosphere of the given radius rigidly skinned to one root joint.
SkinnedMesh icosphere(int subdivisions, double radius = 1.0);

struct HumanoidOptions {
  int subdivisions = 1;  // quads per box-face edge; 12 * 17 * s^2 triangles
  int shape_count = 2;
  int expression_count = 1;
};

/// Box-limbed humanoid, y up, facing +z, rigidly skinned. Every non-leaf
/// joint has at least two children not collinear with it; leaf markers
/// (toe, heel, kneecap, olecranon, ...) fill in where the skeleton has one,
/// so joint keypoints determine every rotation.
/// The face region is the front of the head box.
SkinnedMesh humanoid(const HumanoidOptions& opts = {});

/// Subdivision count whose triangle count is closest to `triangles`.
int humanoid_subdivisions_for(std::size_t triangles);

/// Layout naming every humanoid joint.
std::vector<std::string> humanoid_keypoint_layout(const SkinnedMesh& mesh);

/// Neutral pose turned to face a camera at the origin looking down +z,
/// with the pelvis `distance` in front of it.
PoseParams facing_pose(const SkinnedMesh& mesh, double distance = 3.0);

/// Toy self-supervised training scene: a perturbed copy of the initial
/// splats renders the target.
struct ToyScene {
  SkinnedMesh mesh;
  PoseParams pose;
  Camera camera;
  std::vector<Splat> initial;
  std::vector<Splat> target_splats;
  Image target;              // rendered over black
  std::vector<double> mask;  // rendered alpha
};

ToyScene toy_scene(int width = 64, int height = 64, std::size_t splat_count = 200, std::uint64_t seed = 7);

}  // namespace meshsplat
