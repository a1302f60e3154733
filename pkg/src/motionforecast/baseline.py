"""Constant-velocity linear extrapolation baseline."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import WindowTooShort
from .skeleton import FrameWindow

DEFAULT_VELOCITY_FRAMES = 20


@dataclass
class VelocityEstimate:
    """Per-joint velocity in coordinate units per frame."""

    velocity: np.ndarray


def estimate_velocity(
    past: FrameWindow, k: int = DEFAULT_VELOCITY_FRAMES
) -> VelocityEstimate:
    """Average frame-to-frame velocity over the last k transitions."""
    if past.delta_t < k + 1:
        raise WindowTooShort(
            f"window has {past.delta_t} frames, velocity needs {k + 1}"
        )
    diffs = np.diff(past.joints[-(k + 1) :], axis=0)
    return VelocityEstimate(velocity=diffs.mean(axis=0))


def extrapolate(
    last_frame: np.ndarray, velocity: VelocityEstimate, tau: int
) -> np.ndarray:
    """Predicted frame tau steps ahead: last frame plus tau * velocity."""
    if tau < 1:
        raise ValueError("tau must be >= 1")
    return last_frame + tau * velocity.velocity


def predict_window(
    past: FrameWindow, horizon: int, k: int = DEFAULT_VELOCITY_FRAMES
) -> FrameWindow:
    """Extrapolated window of `horizon` frames after the past window."""
    v = estimate_velocity(past, k)
    last = past.joints[-1]
    taus = np.arange(1, horizon + 1, dtype=np.float64)
    frames = last[None, :, :] + taus[:, None, None] * v.velocity[None, :, :]
    return FrameWindow(joints=frames, start_t=past.start_t + past.delta_t)
