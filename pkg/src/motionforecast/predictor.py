"""Online prediction, future sampling, world-frame reassembly, and the
per-horizon motion prediction error (MPE).

Predictions live in the normalized frame (root at origin, unit segment
lengths); the root model supplies raw translation deltas so a prediction
can be re-anchored in world coordinates.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import baseline as baseline_mod
from . import skeleton
from .cvae import (
    LimbCvae,
    ModelSet,
    decode,
    encode,
    forward_mean_batch,
    transition,
)
from .errors import ContextMismatch, RecordingTooShort, ShapeMismatch
from .nn_core import GaussianVector
from .skeleton import (
    LEFT,
    RIGHT,
    TORSO,
    FrameWindow,
    NormalizationContext,
    Recording,
)
from .trainer import limb_pairs, pairs_to_arrays

# Assembly precedence: the torso model owns the shoulder joints it shares
# with the arm models, arms own elbows and hands.
_BODY_LIMBS = (TORSO, RIGHT, LEFT)
_ASSEMBLY = {
    "torso": ((1, 0), (2, 1), (3, 2), (4, 3)),  # (skeleton joint, window row)
    "right": ((5, 1), (7, 2)),
    "left": ((6, 1), (8, 2)),
}


@dataclass
class PredictionResult:
    """Per-limb future distributions plus the assembled mean window."""

    limb_futures: dict[str, GaussianVector]
    window: FrameWindow
    root_anchor: np.ndarray | None = None
    world_window: FrameWindow | None = None


@dataclass
class MpeCurve:
    """Per-step MSE (summed over joints and x,y,z) and mean variance."""

    limb: str
    mpe: np.ndarray
    mean_var: np.ndarray


def _limb_input(past: FrameWindow, limb: skeleton.LimbSet) -> np.ndarray:
    return skeleton.vectorize(skeleton.select_limb(past, limb))


def _assemble(
    limb_futures: dict[str, GaussianVector], delta_t: int, start_t: int
) -> FrameWindow:
    joints = np.zeros((delta_t, skeleton.N_JOINTS, 3))
    for name, placements in _ASSEMBLY.items():
        mean = limb_futures[name].mean.reshape(delta_t, -1, 3)
        for joint, row in placements:
            joints[:, joint, :] = mean[:, row, :]
    return FrameWindow(joints=joints, start_t=start_t)


def predict(
    models: ModelSet,
    past: FrameWindow,
    root_past: np.ndarray | None = None,
) -> PredictionResult:
    """All-mean prediction of the next delta_t frames.

    ``past`` is a normalized full-skeleton window; ``root_past`` are the
    raw root positions of the same frames, needed for world re-anchoring.
    """
    delta_t = models.delta_t
    if past.delta_t != delta_t or past.n_joints != skeleton.N_JOINTS:
        raise ShapeMismatch(
            f"past window {past.joints.shape} does not fit delta_t={delta_t}"
        )
    futures: dict[str, GaussianVector] = {}
    for limb in _BODY_LIMBS:
        model = models.models()[limb.name]
        mean, var = forward_mean_batch(model, _limb_input(past, limb)[None, :])
        futures[limb.name] = GaussianVector(mean=mean[0], var=var[0])
    anchor = None
    if root_past is not None:
        root_past = np.asarray(root_past, dtype=np.float64)
        if root_past.shape != (delta_t, 3):
            raise ShapeMismatch(f"root_past shape {root_past.shape}")
        anchor = root_past[0].copy()
        x_root = (root_past - anchor).reshape(-1)
        mean, var = forward_mean_batch(models.root, x_root[None, :])
        futures["root"] = GaussianVector(mean=mean[0], var=var[0])
    window = _assemble(futures, delta_t, past.start_t + delta_t)
    return PredictionResult(
        limb_futures=futures, window=window, root_anchor=anchor
    )


def sample_future(
    models: ModelSet,
    past: FrameWindow,
    rng: np.random.Generator,
    zero_noise: bool = False,
) -> FrameWindow:
    """Draw one plausible future window.

    Per limb (torso, right, left in that order) a sample is taken at the
    encoder and transitioner stages and the decoder mean is kept. With
    ``zero_noise`` the draws are replaced by zeros, which reproduces
    :func:`predict` exactly.
    """
    delta_t = models.delta_t
    if past.delta_t != delta_t or past.n_joints != skeleton.N_JOINTS:
        raise ShapeMismatch(
            f"past window {past.joints.shape} does not fit delta_t={delta_t}"
        )
    futures: dict[str, GaussianVector] = {}
    for limb in _BODY_LIMBS:
        model = models.models()[limb.name]
        latent = model.latent_dim
        if zero_noise:
            eps_e = np.zeros(latent)
            eps_t = np.zeros(latent)
        else:
            eps_e = rng.standard_normal(latent)
            eps_t = rng.standard_normal(latent)
        encoded, _ = encode(model, _limb_input(past, limb), eps_e)
        transitioned, _ = transition(model, encoded, eps_t)
        futures[limb.name] = decode(model, transitioned)
    return _assemble(futures, delta_t, past.start_t + delta_t)


def predicted_world_roots(prediction: PredictionResult) -> np.ndarray:
    """Absolute world root positions of the predicted window."""
    if "root" not in prediction.limb_futures or prediction.root_anchor is None:
        raise ContextMismatch("prediction carries no root trajectory")
    deltas = prediction.limb_futures["root"].mean.reshape(-1, 3)
    return prediction.root_anchor[None, :] + deltas


def to_world(
    prediction: PredictionResult,
    root_future: np.ndarray,
    ctx: NormalizationContext,
) -> FrameWindow:
    """Re-anchor a normalized prediction in world coordinates.

    Segment lengths are taken from the last observed frame of ``ctx``
    (lengths are assumed constant over one window span); the root joint
    follows ``root_future``.
    """
    window = prediction.window
    root_future = np.asarray(root_future, dtype=np.float64)
    if root_future.shape != (window.delta_t, 3):
        raise ContextMismatch(
            f"root future shape {root_future.shape} != ({window.delta_t}, 3)"
        )
    if len(ctx) == 0:
        raise ContextMismatch("empty normalization context")
    lengths = ctx.segment_lengths[-1]
    world = skeleton.denormalize_frames(window.joints, root_future, lengths)
    return FrameWindow(joints=world, start_t=window.start_t)


def predict_raw(
    models: ModelSet, raw_window: FrameWindow
) -> tuple[PredictionResult, NormalizationContext]:
    """Normalize a raw window, predict, and attach the world-frame window."""
    normalized_joints, ctx = skeleton.normalize_frames(raw_window.joints)
    normalized = FrameWindow(joints=normalized_joints, start_t=raw_window.start_t)
    result = predict(models, normalized, root_past=raw_window.joints[:, 0, :])
    result.world_window = to_world(result, predicted_world_roots(result), ctx)
    return result, ctx


def _curve(
    pred_mean: np.ndarray,
    actual: np.ndarray,
    pred_var: np.ndarray | None,
    delta_t: int,
    limb_name: str,
) -> MpeCurve:
    n = pred_mean.shape[0]
    err = (pred_mean - actual) ** 2
    mpe = err.reshape(n, delta_t, -1).sum(axis=2).mean(axis=0)
    if pred_var is None:
        mean_var = np.zeros(delta_t)
    else:
        mean_var = pred_var.reshape(n, delta_t, -1).sum(axis=2).mean(axis=0)
    return MpeCurve(limb=limb_name, mpe=mpe, mean_var=mean_var)


def _gather_pairs(recordings, limb, delta_t):
    pairs = []
    for recording in recordings:
        pairs.extend(limb_pairs(recording, limb, delta_t))
    if not pairs:
        raise RecordingTooShort(
            f"test corpus yields no windows for limb {limb.name!r}"
        )
    return pairs_to_arrays(pairs)


def evaluate_mpe(
    models: ModelSet, recordings: list[Recording]
) -> dict[str, MpeCurve]:
    """Per-limb MPE curves of the all-mean model on raw test recordings."""
    delta_t = models.delta_t
    curves = {}
    for name, model in models.models().items():
        limb = skeleton.LIMBS_BY_NAME[name]
        x_past, x_future = _gather_pairs(recordings, limb, delta_t)
        mean, var = forward_mean_batch(model, x_past)
        curves[name] = _curve(mean, x_future, var, delta_t, name)
    return curves


def evaluate_mpe_linear(
    recordings: list[Recording],
    delta_t: int,
    k: int = baseline_mod.DEFAULT_VELOCITY_FRAMES,
) -> dict[str, MpeCurve]:
    """MPE of constant-velocity extrapolation on the same windows."""
    curves = {}
    taus = np.arange(1, delta_t + 1, dtype=np.float64)
    for limb in skeleton.LIMBS:
        x_past, x_future = _gather_pairs(recordings, limb, delta_t)
        n = x_past.shape[0]
        past = x_past.reshape(n, delta_t, -1)
        diffs = np.diff(past[:, -(k + 1) :, :], axis=1)
        velocity = diffs.mean(axis=1)
        pred = past[:, -1, None, :] + taus[None, :, None] * velocity[:, None, :]
        curves[limb.name] = _curve(
            pred.reshape(n, -1), x_future, None, delta_t, limb.name
        )
    return curves


def training_mean_futures(
    recordings: list[Recording], delta_t: int
) -> dict[str, np.ndarray]:
    """Mean future-window vector per limb over a training corpus."""
    means = {}
    for limb in skeleton.LIMBS:
        _, x_future = _gather_pairs(recordings, limb, delta_t)
        means[limb.name] = x_future.mean(axis=0)
    return means


def evaluate_mpe_constant(
    recordings: list[Recording],
    delta_t: int,
    mean_futures: dict[str, np.ndarray],
) -> dict[str, MpeCurve]:
    """MPE of a predictor that always outputs the training-mean future."""
    curves = {}
    for limb in skeleton.LIMBS:
        _, x_future = _gather_pairs(recordings, limb, delta_t)
        pred = np.broadcast_to(mean_futures[limb.name], x_future.shape)
        curves[limb.name] = _curve(pred, x_future, None, delta_t, limb.name)
    return curves
