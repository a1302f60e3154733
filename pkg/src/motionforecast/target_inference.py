"""Bayesian end-point goal classification from hand-joint evidence.

Each candidate goal is an isotropic Gaussian; the evidence for one step
is a diagonal Gaussian over the hand position (a model prediction, an
observed frame, or a linear extrapolation). The per-step score is the
closed-form marginal of the density product, i.e. a Gaussian in the goal
position with the two covariances added; sequence scores accumulate in
log space and are normalized with log-sum-exp.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import skeleton
from .cvae import ModelSet, forward_mean_batch
from .errors import DegenerateVariance, RecordingTooShort, ShapeMismatch
from .nn_core import LOG_TWO_PI, GaussianVector
from .skeleton import RIGHT, Recording

DEFAULT_SIGMA = 0.05
DEFAULT_FRACTIONS = (0.2, 0.43, 0.6, 0.8, 1.0)
HAND_JOINT = 7  # right hand
EVIDENCE_FRAMES = 20


@dataclass
class TargetSet:
    """Candidate goal positions with one shared isotropic std."""

    positions: np.ndarray
    sigma: float = DEFAULT_SIGMA
    names: tuple[str, ...] | None = None

    def __post_init__(self):
        self.positions = np.asarray(self.positions, dtype=np.float64)
        if self.positions.ndim != 2 or self.positions.shape[1] != 3:
            raise ShapeMismatch(
                f"target positions must be (N, 3), got {self.positions.shape}"
            )
        if self.positions.shape[0] < 2:
            raise ValueError("need at least two targets")
        if self.sigma <= 0:
            raise DegenerateVariance("target sigma must be strictly positive")
        diffs = self.positions[:, None, :] - self.positions[None, :, :]
        dist = np.linalg.norm(diffs, axis=2)
        np.fill_diagonal(dist, np.inf)
        if np.any(dist == 0.0):
            raise ValueError("target positions must be distinct")

    def __len__(self) -> int:
        return self.positions.shape[0]

    def with_sigma(self, sigma: float) -> "TargetSet":
        return TargetSet(self.positions.copy(), sigma=sigma, names=self.names)


@dataclass
class GoalPosterior:
    """Normalized per-target probabilities."""

    probabilities: np.ndarray

    def __post_init__(self):
        self.probabilities = np.asarray(self.probabilities, dtype=np.float64)

    @property
    def argmax(self) -> int:
        # np.argmax returns the first maximum, i.e. ties break to the
        # lowest target index.
        return int(np.argmax(self.probabilities))

    def entropy(self) -> float:
        p = self.probabilities
        nz = p > 0
        return float(-np.sum(p[nz] * np.log(p[nz])))


def load_targets(path: str | Path, sigma: float = DEFAULT_SIGMA) -> TargetSet:
    """Read a targets file: JSON array of {"name": str, "pos": [x, y, z]}."""
    with open(path) as fh:
        entries = json.load(fh)
    return TargetSet(
        positions=np.array([e["pos"] for e in entries], dtype=np.float64),
        sigma=sigma,
        names=tuple(e["name"] for e in entries),
    )


def _step_log_scores(
    means: np.ndarray, variances: np.ndarray, targets: TargetSet
) -> np.ndarray:
    """(T, N_g) log marginal scores for T evidence steps."""
    if means.shape != variances.shape or means.shape[-1] != 3:
        raise ShapeMismatch("evidence must be (T, 3) means and variances")
    if np.any(variances <= 0.0):
        raise DegenerateVariance("evidence variance must be strictly positive")
    total_var = variances + targets.sigma**2  # (T, 3)
    diff = targets.positions[None, :, :] - means[:, None, :]  # (T, N_g, 3)
    log_norm = -0.5 * np.sum(LOG_TWO_PI + np.log(total_var), axis=-1)  # (T,)
    quad = -0.5 * np.sum(diff * diff / total_var[:, None, :], axis=-1)  # (T, N_g)
    return log_norm[:, None] + quad


def _normalize_log_scores(log_scores: np.ndarray) -> GoalPosterior:
    shifted = log_scores - np.max(log_scores)
    weights = np.exp(shifted)
    return GoalPosterior(probabilities=weights / weights.sum())


def frame_posterior(pred: GaussianVector, targets: TargetSet) -> GoalPosterior:
    """Posterior over targets from a single 3-dim Gaussian prediction."""
    if len(pred) != 3:
        raise ShapeMismatch(f"frame evidence must be 3-dim, got {len(pred)}")
    scores = _step_log_scores(pred.mean[None, :], pred.var[None, :], targets)
    return _normalize_log_scores(scores.sum(axis=0))


def sequence_posterior(
    pred_window: list[GaussianVector], targets: TargetSet
) -> GoalPosterior:
    """Posterior from a window of per-step Gaussians (log-scores summed)."""
    if not pred_window:
        raise ValueError("empty evidence window")
    means = np.stack([g.mean for g in pred_window])
    variances = np.stack([g.var for g in pred_window])
    scores = _step_log_scores(means, variances, targets)
    return _normalize_log_scores(scores.sum(axis=0))


@dataclass
class ClassificationResult:
    fraction: float
    predicted: int
    posterior: GoalPosterior


def hand_evidence(
    models: ModelSet,
    normalized_joints: np.ndarray,
    end: int,
    method: str = "cvae",
    evidence_frames: int = EVIDENCE_FRAMES,
) -> list[GaussianVector]:
    """Per-step hand Gaussians for the window of frames ending at ``end``.

    cvae: model-predicted future of the hand joint, one Gaussian per
    predicted step. current: the last ``evidence_frames`` observed hand
    positions with identity covariance. linear: a constant-velocity
    extrapolation of the hand for ``evidence_frames`` steps, identity
    covariance.
    """
    hand = normalized_joints[:, HAND_JOINT, :]
    if method == "cvae":
        model = models.right
        delta_t = model.delta_t
        if end < delta_t:
            raise RecordingTooShort(
                f"window end {end} leaves no room for {delta_t} past frames"
            )
        window = normalized_joints[end - delta_t : end, list(RIGHT.indices), :]
        mean, var = forward_mean_batch(model, window.reshape(1, -1))
        mean = mean.reshape(delta_t, len(RIGHT.indices), 3)
        var = var.reshape(delta_t, len(RIGHT.indices), 3)
        row = RIGHT.indices.index(HAND_JOINT)
        return [
            GaussianVector(mean=mean[s, row], var=var[s, row])
            for s in range(delta_t)
        ]
    if method == "current":
        if end < evidence_frames:
            raise RecordingTooShort(
                f"window end {end} leaves no room for {evidence_frames} frames"
            )
        ones = np.ones(3)
        return [
            GaussianVector(mean=hand[s].copy(), var=ones.copy())
            for s in range(end - evidence_frames, end)
        ]
    if method == "linear":
        if end < evidence_frames + 1:
            raise RecordingTooShort(
                f"window end {end} leaves no room for a velocity estimate"
            )
        recent = hand[end - evidence_frames - 1 : end]
        velocity = np.diff(recent, axis=0).mean(axis=0)
        ones = np.ones(3)
        return [
            GaussianVector(mean=hand[end - 1] + tau * velocity, var=ones.copy())
            for tau in range(1, evidence_frames + 1)
        ]
    raise ValueError(f"unknown evidence method {method!r}")


def classify_trajectory(
    models: ModelSet,
    recording: Recording,
    targets: TargetSet,
    fractions: tuple[float, ...] = DEFAULT_FRACTIONS,
    method: str = "cvae",
    sigma: float | None = None,
    onset: int | None = None,
    duration: int | None = None,
) -> list[ClassificationResult]:
    """Classify the goal of one reach at several observed fractions.

    ``onset`` is the frame where the reach begins (default: one window
    length, matching the generated corpus) and ``duration`` its length in
    frames; evidence windows end at onset + round(fraction * duration).
    """
    if sigma is not None:
        targets = targets.with_sigma(sigma)
    delta_t = models.delta_t
    if onset is None:
        onset = delta_t
    if duration is None:
        duration = len(recording) - onset
    if duration < 1 or onset + duration > len(recording):
        raise RecordingTooShort(
            f"recording {recording.id!r} has no room for the reach segment"
        )
    normalized, _ = skeleton.normalize(recording)
    results = []
    for fraction in fractions:
        end = onset + int(round(fraction * duration))
        evidence = hand_evidence(models, normalized.joints, end, method)
        posterior = sequence_posterior(evidence, targets)
        results.append(
            ClassificationResult(
                fraction=fraction, predicted=posterior.argmax, posterior=posterior
            )
        )
    return results
