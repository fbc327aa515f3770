"""Mesh-bound Gaussian splat avatars."""

import json

import numpy as np

from . import _core
from ._core import Mesh, MeshsplatError, humanoid, icosphere, keypoint_layout, psnr, relative_deltas, ssim

__all__ = [
    "Mesh",
    "MeshsplatError",
    "decode_frames",
    "export_viewer",
    "facing_pose",
    "fit_frame",
    "humanoid",
    "icosphere",
    "init_camera",
    "init_splats",
    "keypoint_layout",
    "load_splats",
    "neutral_pose",
    "polygon_frames",
    "pose_frames_payload",
    "preprocess_keypoints",
    "project_keypoints",
    "psnr",
    "relative_deltas",
    "render",
    "save_splats",
    "ssim",
    "train",
]


def _dump(obj):
    return obj if isinstance(obj, str) else json.dumps(obj)


def neutral_pose(mesh):
    return json.loads(_core._neutral_pose(mesh))


def facing_pose(mesh, distance=3.0):
    return json.loads(_core._facing_pose(mesh, distance))


def init_camera(width, height, focal_factor=1.2):
    return json.loads(_core._init_camera(width, height, focal_factor))


def init_splats(mesh, scale_fraction=0.5, per_polygon=1, opacity=0.5, seed=0):
    return _core._init_splats(mesh, scale_fraction, per_polygon, opacity, seed)


def load_splats(path):
    return _core._load_splats(str(path))


def save_splats(path, splats, triangle_count):
    _core._save_splats(str(path), splats, triangle_count)


def polygon_frames(mesh, pose):
    return _core._polygon_frames(mesh, _dump(pose))


def render(mesh, splats, pose, camera, background=(0.0, 0.0, 0.0)):
    """Render to a float64 array of shape (height, width, 3)."""
    return _core._render(mesh, splats, _dump(pose), _dump(camera), list(background))


def preprocess_keypoints(sequence, threshold=0.3):
    """Returns (filled sequence, gap report)."""
    seq, report = _core._preprocess_keypoints(_dump(sequence), threshold)
    return json.loads(seq), json.loads(report)


def project_keypoints(mesh, pose, camera):
    return json.loads(_core._project_keypoints(mesh, _dump(pose), _dump(camera)))


def fit_frame(mesh, keypoints, camera, init_pose, frame=0, max_iterations=200):
    """Returns (pose, report)."""
    pose, report = _core._fit_frame(mesh, _dump(keypoints), frame, _dump(camera), _dump(init_pose), max_iterations)
    return json.loads(pose), json.loads(report)


def train(mesh, splats, poses, cameras, images, masks=None, iterations=100, seed=0, random_background=True):
    """Returns (splats, log, halted, halt_reason)."""
    images = [np.ascontiguousarray(i, dtype=np.float64) for i in images]
    masks = [np.ascontiguousarray(m, dtype=np.float64) for m in (masks or [])]
    splats, log, halted, reason = _core._train(
        mesh, splats, [_dump(p) for p in poses], [_dump(c) for c in cameras], images, masks, iterations, seed,
        random_background)
    return splats, [json.loads(e) for e in log], halted, reason


def export_viewer(directory, mesh, splats, clips=None, fps=30.0):
    clips = {name: [_dump(p) for p in poses] for name, poses in (clips or {}).items()}
    return json.loads(_core._export_viewer(str(directory), mesh, splats, clips, fps))


def pose_frames_payload(mesh, pose):
    return _core.pose_frames_payload(mesh, _dump(pose))


def decode_frames(data):
    return _core._decode_frames(data)
