"""Pose-sequence data: file I/O, windowing, flip augmentation, synthesis.

The clip file format is a single JSON header line (schema version, joint
metadata, array extents, endianness tag) followed by two raw 32-bit float
blocks: the 3-D poses (N*J*3 values) then the 2-D poses (N*J*2 values).
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

CLIP_SCHEMA = 1

# Default 17-joint skeleton (pelvis root), with left/right mirror pairs.
H36M_JOINT_NAMES = (
    "pelvis", "r_hip", "r_knee", "r_ankle", "l_hip", "l_knee", "l_ankle",
    "spine", "thorax", "neck", "head",
    "l_shoulder", "l_elbow", "l_wrist", "r_shoulder", "r_elbow", "r_wrist",
)
H36M_PARENTS = (-1, 0, 1, 2, 0, 4, 5, 0, 7, 8, 9, 8, 11, 12, 8, 14, 15)
H36M_SYMMETRY = ((1, 4), (2, 5), (3, 6), (11, 14), (12, 15), (13, 16))


class ClipFormatError(ValueError):
    """Base class for clip-file decoding failures."""


class ClipHeaderError(ClipFormatError):
    pass


class ClipVersionError(ClipFormatError):
    pass


class ClipExtentError(ClipFormatError):
    pass


class ClipTruncatedError(ClipFormatError):
    pass


@dataclass(frozen=True)
class SkeletonMeta:
    joints: int
    joint_names: tuple
    root_index: int
    symmetry_pairs: tuple  # ((left, right), ...)
    fps: float = 50.0

    def __post_init__(self):
        if len(self.joint_names) != self.joints:
            raise ValueError("joint_names length must equal joint count")
        seen = {}
        for left, right in self.symmetry_pairs:
            if self.root_index in (left, right):
                raise ValueError("root joint cannot be part of a symmetry pair")
            seen[left] = right
            seen[right] = left
        for a, b in seen.items():
            if seen.get(b) != a:
                raise ValueError("symmetry map must be an involution")

    def flip_permutation(self):
        perm = np.arange(self.joints)
        for left, right in self.symmetry_pairs:
            perm[left], perm[right] = right, left
        return perm


DEFAULT_SKELETON = SkeletonMeta(
    joints=17,
    joint_names=H36M_JOINT_NAMES,
    root_index=0,
    symmetry_pairs=H36M_SYMMETRY,
    fps=50.0,
)


@dataclass
class MotionClip:
    """A motion sequence: root-relative 3-D poses (mm) plus normalized 2-D."""

    meta: SkeletonMeta
    poses3d: np.ndarray  # (N, J, 3), millimetres, root at origin
    poses2d: np.ndarray  # (N, J, 2), image coordinates in [-1, 1]
    name: str = "clip"

    def __post_init__(self):
        self.poses3d = np.asarray(self.poses3d, dtype=np.float64)
        self.poses2d = np.asarray(self.poses2d, dtype=np.float64)
        j = self.meta.joints
        if self.poses3d.ndim != 3 or self.poses3d.shape[1:] != (j, 3):
            raise ValueError(f"poses3d must be (N, {j}, 3), got {self.poses3d.shape}")
        if self.poses2d.shape != self.poses3d.shape[:2] + (2,):
            raise ValueError(
                f"poses2d must be (N, {j}, 2) with N matching poses3d, got {self.poses2d.shape}"
            )

    def __len__(self):
        return self.poses3d.shape[0]


def sliding_windows(clip: MotionClip, frames: int):
    """Yield one (window2d (T, J, 2), centre target (J, 3)) pair per frame.

    Boundary windows replicate the edge frames so every frame of the clip
    gets a full window centred on it.
    """
    if frames < 1 or frames % 2 == 0:
        raise ValueError(f"window length must be odd, got {frames}")
    n = len(clip)
    if n == 0:
        raise ValueError("empty clip")
    half = frames // 2
    for center in range(n):
        idx = np.clip(np.arange(center - half, center + half + 1), 0, n - 1)
        yield clip.poses2d[idx], clip.poses3d[center]


def window_arrays(clips, frames):
    """Stack sliding windows of one or more clips into (N, T, J, 2) / (N, J, 3)."""
    if isinstance(clips, MotionClip):
        clips = [clips]
    xs, ys = [], []
    for clip in clips:
        for x, y in sliding_windows(clip, frames):
            xs.append(x)
            ys.append(y)
    return np.stack(xs), np.stack(ys)


def horizontal_flip(pose, meta: SkeletonMeta):
    """Mirror a (J, C) pose: negate x and swap each left/right joint pair."""
    pose = np.asarray(pose, dtype=np.float64)
    if pose.shape[0] != meta.joints:
        raise ValueError(f"pose has {pose.shape[0]} joints, skeleton has {meta.joints}")
    out = pose[meta.flip_permutation()].copy()
    out[:, 0] = -out[:, 0]
    return out


# -- synthetic articulated motion ---------------------------------------


def _axis_angle_matrix(axis, angle):
    axis = axis / np.linalg.norm(axis)
    x, y, z = axis
    c, s = np.cos(angle), np.sin(angle)
    cc = 1.0 - c
    return np.array(
        [
            [c + x * x * cc, x * y * cc - z * s, x * z * cc + y * s],
            [y * x * cc + z * s, c + y * y * cc, y * z * cc - x * s],
            [z * x * cc - y * s, z * y * cc + x * s, c + z * z * cc],
        ]
    )


# Rest-pose bone offsets (mm) for the default skeleton, roughly human-sized.
_REST_OFFSETS = np.array(
    [
        [0.0, 0.0, 0.0],        # pelvis (root)
        [-130.0, 0.0, 0.0],     # r_hip
        [0.0, -440.0, 0.0],     # r_knee
        [0.0, -440.0, 0.0],     # r_ankle
        [130.0, 0.0, 0.0],      # l_hip
        [0.0, -440.0, 0.0],     # l_knee
        [0.0, -440.0, 0.0],     # l_ankle
        [0.0, 230.0, 0.0],      # spine
        [0.0, 250.0, 0.0],      # thorax
        [0.0, 120.0, 0.0],      # neck
        [0.0, 120.0, 0.0],      # head
        [170.0, 0.0, 0.0],      # l_shoulder
        [0.0, -280.0, 0.0],     # l_elbow
        [0.0, -250.0, 0.0],     # l_wrist
        [-170.0, 0.0, 0.0],     # r_shoulder
        [0.0, -280.0, 0.0],     # r_elbow
        [0.0, -250.0, 0.0],     # r_wrist
    ]
)


def project_points(points, focal=2.2, depth=4500.0):
    """Pinhole projection of root-relative mm points placed ``depth`` mm away."""
    points = np.asarray(points, dtype=np.float64)
    z = points[..., 2] + depth
    u = focal * points[..., 0] / z
    v = focal * points[..., 1] / z
    return np.stack([u, v], axis=-1)


def synth_motion(seed, n_frames, joints=17, name=None):
    """Deterministic kinematic-chain motion with fixed bone lengths.

    Each bone rotates about a per-joint axis by a smooth periodic angle; the
    rotations compose down the chain, so bone lengths are exactly preserved.
    2-D poses come from a fixed-camera pinhole projection.
    """
    if n_frames < 1:
        raise ValueError(f"n_frames must be >= 1, got {n_frames}")
    if joints != 17:
        raise ValueError("only the default 17-joint skeleton is supported")
    rng = np.random.Generator(np.random.Philox(seed))
    meta = DEFAULT_SKELETON
    j = meta.joints
    axes = rng.normal(size=(j, 3))
    axes /= np.linalg.norm(axes, axis=1, keepdims=True)
    amps = rng.uniform(0.1, 0.45, size=j)
    freqs = rng.uniform(0.3, 1.2, size=j)
    phases = rng.uniform(0.0, 2.0 * np.pi, size=j)

    times = np.arange(n_frames) / meta.fps
    poses3d = np.zeros((n_frames, j, 3))
    for f, t in enumerate(times):
        angles = amps * np.sin(2.0 * np.pi * freqs * t + phases)
        rots = [None] * j
        for joint in range(j):
            local = _axis_angle_matrix(axes[joint], angles[joint])
            parent = H36M_PARENTS[joint]
            rots[joint] = local if parent < 0 else rots[parent] @ local
            if parent >= 0:
                poses3d[f, joint] = poses3d[f, parent] + rots[joint] @ _REST_OFFSETS[joint]
    # Root-relative by construction (root stays at the origin).
    poses2d = project_points(poses3d)
    return MotionClip(
        meta=meta,
        poses3d=poses3d,
        poses2d=poses2d,
        name=name or f"synth-{seed}",
    )


# -- file I/O -----------------------------------------------------------


def save_clip(clip: MotionClip, path):
    header = {
        "schema": CLIP_SCHEMA,
        "joints": clip.meta.joints,
        "frames": len(clip),
        "fps": clip.meta.fps,
        "joint_names": list(clip.meta.joint_names),
        "symmetry_pairs": [list(p) for p in clip.meta.symmetry_pairs],
        "root_index": clip.meta.root_index,
        "endianness": "little",
        "name": clip.name,
    }
    with open(path, "wb") as f:
        f.write(json.dumps(header, sort_keys=True).encode() + b"\n")
        f.write(clip.poses3d.astype("<f4").tobytes())
        f.write(clip.poses2d.astype("<f4").tobytes())


def load_clip(path) -> MotionClip:
    with open(path, "rb") as f:
        line = f.readline()
        try:
            header = json.loads(line)
        except json.JSONDecodeError as e:
            raise ClipHeaderError(f"malformed clip header in {path}") from e
        if header.get("schema") != CLIP_SCHEMA:
            raise ClipVersionError(
                f"clip schema {header.get('schema')} != supported {CLIP_SCHEMA}"
            )
        try:
            j = int(header["joints"])
            n = int(header["frames"])
            endian = header["endianness"]
        except (KeyError, TypeError, ValueError) as e:
            raise ClipHeaderError(f"clip header missing required fields in {path}") from e
        if endian not in ("little", "big"):
            raise ClipHeaderError(f"unknown endianness tag {endian!r}")
        dtype = "<f4" if endian == "little" else ">f4"
        raw = f.read()
    want = (n * j * 3 + n * j * 2) * 4
    if len(raw) != want:
        raise ClipTruncatedError(
            f"clip payload is {len(raw)} bytes, expected {want} ({path})"
        )
    block3 = np.frombuffer(raw[: n * j * 3 * 4], dtype=dtype).astype(np.float64)
    block2 = np.frombuffer(raw[n * j * 3 * 4 :], dtype=dtype).astype(np.float64)
    try:
        meta = SkeletonMeta(
            joints=j,
            joint_names=tuple(header["joint_names"]),
            root_index=int(header["root_index"]),
            symmetry_pairs=tuple(tuple(p) for p in header["symmetry_pairs"]),
            fps=float(header["fps"]),
        )
    except (KeyError, ValueError) as e:
        raise ClipHeaderError(f"invalid skeleton metadata in {path}: {e}") from e
    try:
        return MotionClip(
            meta=meta,
            poses3d=block3.reshape(n, j, 3),
            poses2d=block2.reshape(n, j, 2),
            name=header.get("name", "clip"),
        )
    except ValueError as e:
        raise ClipExtentError(str(e)) from e
