"""Skeletal data model: frames, recordings, normalization, windows, limbs.

The upper body is nine joints (root, chest, head, right/left shoulder,
right/left elbow, right/left hand) in a sensor frame with y up and z
toward the user. Recordings are sequences of frames at 30 fps; all
learning happens on fixed-length windows of a recording, normalized into
a root-centered frame with unit segment lengths.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import (
    ContextMismatch,
    LengthMismatch,
    NonFiniteInput,
    RecordingTooShort,
    ZeroLengthSegment,
)

N_JOINTS = 9
DEFAULT_FPS = 30

# Kinematic chain as (child, parent) pairs in topological order:
# spine, neck, both shoulders, then upper arm / forearm on each side.
CHAIN = ((1, 0), (2, 1), (3, 1), (4, 1), (5, 3), (6, 4), (7, 5), (8, 6))

_CHILDREN = np.array([c for c, _ in CHAIN])
_PARENTS = np.array([p for _, p in CHAIN])


@dataclass(frozen=True)
class LimbSet:
    """Named subset of joint indices trained as one model."""

    name: str
    indices: tuple[int, ...]

    @property
    def n_joints(self) -> int:
        return len(self.indices)


ROOT = LimbSet("root", (0,))
TORSO = LimbSet("torso", (1, 2, 3, 4))
RIGHT = LimbSet("right", (3, 5, 7))
LEFT = LimbSet("left", (4, 6, 8))
LIMBS = (ROOT, TORSO, RIGHT, LEFT)
LIMBS_BY_NAME = {limb.name: limb for limb in LIMBS}


@dataclass
class JointFrame:
    """A single skeleton frame: frame index plus (n_joints, 3) positions."""

    t: int
    joints: np.ndarray


@dataclass
class FrameWindow:
    """A contiguous block of frames, shape (delta_t, n_joints, 3)."""

    joints: np.ndarray
    start_t: int = 0

    @property
    def delta_t(self) -> int:
        return self.joints.shape[0]

    @property
    def n_joints(self) -> int:
        return self.joints.shape[1]


@dataclass
class Recording:
    """An ordered sequence of frames with strictly increasing indices."""

    id: str
    ts: np.ndarray
    joints: np.ndarray
    fps: int = DEFAULT_FPS

    def __post_init__(self):
        self.ts = np.asarray(self.ts, dtype=np.int64)
        self.joints = np.asarray(self.joints, dtype=np.float64)
        if self.joints.ndim != 3 or self.joints.shape[1:] != (N_JOINTS, 3):
            raise ValueError(
                f"recording joints must have shape (T, {N_JOINTS}, 3), "
                f"got {self.joints.shape}"
            )
        if self.ts.shape != (self.joints.shape[0],):
            raise ValueError("frame index array does not match frame count")
        if len(self.ts) > 1 and not np.all(np.diff(self.ts) > 0):
            raise ValueError("frame indices must be strictly increasing")

    def __len__(self) -> int:
        return self.joints.shape[0]

    def frame(self, i: int) -> JointFrame:
        return JointFrame(t=int(self.ts[i]), joints=self.joints[i])


@dataclass
class NormalizationContext:
    """Everything needed to undo normalization: per-frame root position
    and the original length of each chain segment (ordered as CHAIN)."""

    root_positions: np.ndarray
    segment_lengths: np.ndarray

    def __len__(self) -> int:
        return self.root_positions.shape[0]


def normalize_frames(joints: np.ndarray) -> tuple[np.ndarray, NormalizationContext]:
    """Frames-level normalization core for (T, 9, 3) position arrays."""
    joints = np.asarray(joints, dtype=np.float64)
    if not np.all(np.isfinite(joints)):
        raise NonFiniteInput("frames contain non-finite joints")

    segs = joints[:, _CHILDREN, :] - joints[:, _PARENTS, :]
    lengths = np.linalg.norm(segs, axis=2)
    if np.any(lengths < 1e-12):
        t_bad, s_bad = np.argwhere(lengths < 1e-12)[0]
        raise ZeroLengthSegment(
            f"zero-length segment {CHAIN[s_bad]} at frame index {t_bad}"
        )

    units = segs / lengths[:, :, None]
    out = np.zeros_like(joints)
    for s, (child, parent) in enumerate(CHAIN):
        out[:, child, :] = out[:, parent, :] + units[:, s, :]

    ctx = NormalizationContext(
        root_positions=joints[:, 0, :].copy(), segment_lengths=lengths
    )
    return out, ctx


def normalize(recording: Recording) -> tuple[Recording, NormalizationContext]:
    """Translate every frame to the root and rescale segments to length one.

    Returns the normalized recording and a context that inverts the
    transform exactly (up to floating-point round-trip).
    """
    out, ctx = normalize_frames(recording.joints)
    normalized = Recording(
        id=recording.id, ts=recording.ts.copy(), joints=out, fps=recording.fps
    )
    return normalized, ctx


def denormalize(recording: Recording, ctx: NormalizationContext) -> Recording:
    """Invert :func:`normalize` using the stored roots and segment lengths."""
    if len(ctx) != len(recording):
        raise ContextMismatch(
            f"context covers {len(ctx)} frames, recording has {len(recording)}"
        )
    out = denormalize_frames(recording.joints, ctx.root_positions, ctx.segment_lengths)
    return Recording(
        id=recording.id, ts=recording.ts.copy(), joints=out, fps=recording.fps
    )


def denormalize_frames(
    joints: np.ndarray, root_positions: np.ndarray, segment_lengths: np.ndarray
) -> np.ndarray:
    """Rescale chain segments of (T, 9, 3) frames and re-anchor the root.

    ``segment_lengths`` may be per-frame (T, 8) or a single (8,) set applied
    to every frame.
    """
    lengths = np.asarray(segment_lengths, dtype=np.float64)
    if lengths.ndim == 1:
        lengths = np.broadcast_to(lengths, (joints.shape[0], len(CHAIN)))
    out = np.empty_like(joints)
    out[:, 0, :] = root_positions
    for s, (child, parent) in enumerate(CHAIN):
        seg = joints[:, child, :] - joints[:, parent, :]
        out[:, child, :] = out[:, parent, :] + seg * lengths[:, s, None]
    return out


def make_pairs(
    recording: Recording, delta_t: int
) -> list[tuple[FrameWindow, FrameWindow]]:
    """Slice a recording into (past, future) training window pairs.

    For each anchor position t in [delta_t, T - delta_t) the past window
    covers frames (t - delta_t, t] and the future window covers
    (t, t + delta_t], giving T - 2*delta_t pairs.
    """
    if delta_t < 1:
        raise ValueError("delta_t must be >= 1")
    n = len(recording)
    if n < 2 * delta_t:
        raise RecordingTooShort(
            f"recording {recording.id!r} has {n} frames, needs {2 * delta_t}"
        )
    pairs = []
    for t in range(delta_t, n - delta_t):
        past = FrameWindow(
            joints=recording.joints[t - delta_t + 1 : t + 1],
            start_t=int(recording.ts[t - delta_t + 1]),
        )
        future = FrameWindow(
            joints=recording.joints[t + 1 : t + delta_t + 1],
            start_t=int(recording.ts[t + 1]),
        )
        pairs.append((past, future))
    return pairs


def select_limb(window: FrameWindow, limb: LimbSet) -> FrameWindow:
    """Restrict a full-skeleton window to the joints of one limb."""
    return FrameWindow(
        joints=window.joints[:, list(limb.indices), :], start_t=window.start_t
    )


def vectorize(window: FrameWindow) -> np.ndarray:
    """Flatten a window time-major: index = t*(n_joints*3) + joint*3 + coord."""
    return window.joints.reshape(-1).copy()


def devectorize(
    vector: np.ndarray, delta_t: int, n_joints: int, start_t: int = 0
) -> FrameWindow:
    """Reshape a flat vector back into a (delta_t, n_joints, 3) window."""
    vector = np.asarray(vector, dtype=np.float64)
    expected = delta_t * n_joints * 3
    if vector.size != expected:
        raise LengthMismatch(
            f"vector has {vector.size} entries, expected {expected}"
        )
    return FrameWindow(
        joints=vector.reshape(delta_t, n_joints, 3).copy(), start_t=start_t
    )


def save_recording(recording: Recording, path: str | Path) -> None:
    """Write a recording as JSON Lines, one frame per line."""
    with open(path, "w") as fh:
        for i in range(len(recording)):
            fh.write(
                json.dumps(
                    {"t": int(recording.ts[i]), "joints": recording.joints[i].tolist()}
                )
            )
            fh.write("\n")


def load_recording(
    path: str | Path, rec_id: str | None = None, fps: int = DEFAULT_FPS
) -> Recording:
    """Read a JSONL recording; rejects lines with the wrong joint count."""
    path = Path(path)
    ts, joints = [], []
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            record = json.loads(line)
            frame = record["joints"]
            if len(frame) != N_JOINTS or any(len(j) != 3 for j in frame):
                raise ValueError(
                    f"{path.name}:{lineno}: expected {N_JOINTS} joints of 3 coords"
                )
            ts.append(int(record["t"]))
            joints.append(frame)
    return Recording(
        id=rec_id if rec_id is not None else path.stem,
        ts=np.array(ts, dtype=np.int64),
        joints=np.array(joints, dtype=np.float64),
        fps=fps,
    )
