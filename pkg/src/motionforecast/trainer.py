"""Mini-batch lower-bound maximization for the four limb models.

Training is a pure function of (dataset, config, seed): shuffling, eps
draws, and initialization all come from streams derived from the one
config seed, so runs are bit-reproducible. Convergence is declared when
the relative improvement of the full-dataset evaluation loss stays below
``rel_tol`` for ``patience`` consecutive evaluations.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import skeleton
from .cvae import (
    DEFAULT_WIDTHS,
    PARAM_NAMES,
    LimbCvae,
    ModelSet,
    elbo_batch,
    elbo_values,
)
from .errors import NonFiniteLoss, ShapeMismatch, VersionMismatch
from .nn_core import adam_init, adam_step, derive_rng
from .skeleton import LIMBS, FrameWindow, LimbSet, Recording

CHECKPOINT_VERSION = 1
EVAL_CHUNK = 8192


@dataclass
class TrainConfig:
    lr: float = 0.001
    batch_size: int = 1000
    max_epochs: int = 60
    rel_tol: float = 1e-4
    patience: int = 5
    eval_every: int = 0  # in batches; 0 evaluates once per epoch
    seed: int = 0
    kl_warmup: float = 0.0  # fraction of planned steps for a linear KL ramp
    widths: tuple[int, int, int, int] = DEFAULT_WIDTHS

    def __post_init__(self):
        if self.lr <= 0:
            raise ValueError("lr must be positive")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.patience < 1:
            raise ValueError("patience must be >= 1")
        if self.max_epochs < 1:
            raise ValueError("max_epochs must be >= 1")
        if not 0.0 <= self.kl_warmup <= 1.0:
            raise ValueError("kl_warmup must lie in [0, 1]")


@dataclass
class EvalRecord:
    """One evaluation: global batch step, loss, and the monotone trend
    (cumulative minimum of the losses so far)."""

    step: int
    loss: float
    smoothed: float


def pairs_to_arrays(
    pairs: list[tuple[FrameWindow, FrameWindow]],
) -> tuple[np.ndarray, np.ndarray]:
    """Vectorize window pairs into (N, dim) past/future arrays."""
    x_past = np.stack([skeleton.vectorize(p) for p, _ in pairs])
    x_future = np.stack([skeleton.vectorize(f) for _, f in pairs])
    return x_past, x_future


def root_delta_windows(
    root_positions: np.ndarray, delta_t: int
) -> list[tuple[FrameWindow, FrameWindow]]:
    """Window pairs over the raw root trajectory, as per-frame deltas.

    Both windows of a pair are expressed relative to the first frame of
    the past window, so the model predicts translation in a bounded,
    position-free representation that is trivially re-anchored.
    """
    n = root_positions.shape[0]
    pairs = []
    for t in range(delta_t, n - delta_t):
        anchor = root_positions[t - delta_t + 1]
        past = root_positions[t - delta_t + 1 : t + 1] - anchor
        future = root_positions[t + 1 : t + delta_t + 1] - anchor
        pairs.append(
            (
                FrameWindow(past[:, None, :].copy(), start_t=t - delta_t + 1),
                FrameWindow(future[:, None, :].copy(), start_t=t + 1),
            )
        )
    return pairs


def limb_pairs(
    recording: Recording, limb: LimbSet, delta_t: int
) -> list[tuple[FrameWindow, FrameWindow]]:
    """Training pairs for one limb from one raw recording.

    Torso and arm models see normalized sub-windows; the root model sees
    raw root translation deltas.
    """
    if limb.name == "root":
        return root_delta_windows(recording.joints[:, 0, :], delta_t)
    normalized, _ = skeleton.normalize(recording)
    pairs = skeleton.make_pairs(normalized, delta_t)
    return [
        (skeleton.select_limb(p, limb), skeleton.select_limb(f, limb))
        for p, f in pairs
    ]


def dataset_loss(
    model: LimbCvae, x_past: np.ndarray, x_future: np.ndarray, seed: int
) -> float:
    """Full-dataset mean negative lower bound with a fixed eps stream.

    The stream is rebuilt from (seed, "eval", limb) on every call, so
    repeated evaluations of the same model are bit-identical and the
    final training loss can be recomputed exactly.
    """
    rng = derive_rng(seed, "eval", model.limb_name)
    n = x_past.shape[0]
    latent = model.latent_dim
    eps_enc = rng.standard_normal((n, latent))
    eps_tr = rng.standard_normal((n, latent))
    total = 0.0
    for lo in range(0, n, EVAL_CHUNK):
        hi = min(lo + EVAL_CHUNK, n)
        values = elbo_values(
            model, x_past[lo:hi], x_future[lo:hi], eps_enc[lo:hi], eps_tr[lo:hi]
        )
        total += float(np.sum(values))
    return -total / n


def train_limb(
    pairs: list[tuple[FrameWindow, FrameWindow]],
    limb: LimbSet,
    config: TrainConfig,
) -> tuple[LimbCvae, list[EvalRecord]]:
    """Train one limb model until the evaluation loss converges."""
    if not pairs:
        raise ValueError("need at least one training pair")
    x_past, x_future = pairs_to_arrays(pairs)
    delta_t = pairs[0][0].delta_t
    n_joints = pairs[0][0].n_joints
    if x_past.shape[1] != delta_t * n_joints * 3:
        raise ShapeMismatch("pair windows disagree with limb shape")

    n = x_past.shape[0]
    batch_size = min(config.batch_size, n)
    batches_per_epoch = math.ceil(n / batch_size)
    planned_steps = config.max_epochs * batches_per_epoch
    warmup_steps = config.kl_warmup * planned_steps
    eval_every = config.eval_every if config.eval_every > 0 else batches_per_epoch

    init_rng = derive_rng(config.seed, "init", limb.name)
    shuffle_rng = derive_rng(config.seed, "shuffle", limb.name)
    eps_rng = derive_rng(config.seed, "eps", limb.name)
    model = LimbCvae.create(
        limb.name, n_joints, delta_t, init_rng, widths=config.widths
    )
    state = adam_init(model.params(), lr=config.lr)

    history: list[EvalRecord] = []
    best = math.inf
    prev_loss = None
    streak = 0
    step = 0
    last_good: LimbCvae | None = None

    def evaluate() -> float:
        loss = dataset_loss(model, x_past, x_future, config.seed)
        nonlocal best
        best = min(best, loss)
        history.append(EvalRecord(step=step, loss=loss, smoothed=best))
        return loss

    done = False
    for _ in range(config.max_epochs):
        order = shuffle_rng.permutation(n)
        for lo in range(0, n, batch_size):
            idx = order[lo : lo + batch_size]
            eps_enc = eps_rng.standard_normal((idx.size, model.latent_dim))
            eps_tr = eps_rng.standard_normal((idx.size, model.latent_dim))
            kl_scale = (
                min(1.0, (step + 1) / warmup_steps) if warmup_steps > 0 else 1.0
            )
            try:
                _, grads = elbo_batch(
                    model, x_past[idx], x_future[idx], eps_enc, eps_tr, kl_scale
                )
            except NonFiniteLoss as exc:
                raise NonFiniteLoss(str(exc), last_good=last_good) from None
            new_params, state = adam_step(
                model.params(), [-g for g in grads], state
            )
            model.set_params(new_params)
            step += 1
            if step % eval_every == 0:
                loss = evaluate()
                if not math.isfinite(loss):
                    raise NonFiniteLoss(
                        f"evaluation loss diverged for limb {limb.name!r}",
                        last_good=last_good,
                    )
                last_good = model.copy()
                if prev_loss is not None:
                    improvement = (prev_loss - loss) / max(abs(prev_loss), 1e-300)
                    streak = streak + 1 if improvement < config.rel_tol else 0
                prev_loss = loss
                if streak >= config.patience:
                    done = True
                    break
        if done:
            break

    if not history or history[-1].step != step:
        evaluate()
    return model, history


def train_all(
    recordings: list[Recording],
    config: TrainConfig,
    delta_t: int = 50,
) -> tuple[ModelSet, dict[str, list[EvalRecord]]]:
    """Train all four limb models on raw recordings."""
    models = {}
    histories = {}
    for limb in LIMBS:
        pairs = []
        for recording in recordings:
            pairs.extend(limb_pairs(recording, limb, delta_t))
        models[limb.name], histories[limb.name] = train_limb(pairs, limb, config)
    return ModelSet(**models), histories


def save_checkpoint(
    model: LimbCvae, path: str | Path, provenance: dict | None = None
) -> None:
    """Write one limb model as a single JSON document."""
    params = model.params()
    doc = {
        "format_version": CHECKPOINT_VERSION,
        "limb": model.limb_name,
        "delta_t": model.delta_t,
        "n_joints": model.n_joints,
        "var_floor": model.var_floor,
        "shapes": [list(p.shape) for p in params],
        "params": {
            name: p.tolist() for name, p in zip(PARAM_NAMES, params)
        },
        "provenance": provenance or {},
    }
    with open(path, "w") as fh:
        json.dump(doc, fh)
        fh.write("\n")


def load_checkpoint(path: str | Path) -> LimbCvae:
    """Load a limb model; validates topology before building anything."""
    with open(path) as fh:
        doc = json.load(fh)
    if doc.get("format_version") != CHECKPOINT_VERSION:
        raise VersionMismatch(
            f"checkpoint version {doc.get('format_version')!r}, "
            f"expected {CHECKPOINT_VERSION}"
        )
    delta_t = int(doc["delta_t"])
    n_joints = int(doc["n_joints"])
    io_dim = delta_t * n_joints * 3
    shapes = [tuple(s) for s in doc["shapes"]]
    if len(shapes) != len(PARAM_NAMES):
        raise ShapeMismatch(f"expected {len(PARAM_NAMES)} parameter arrays")

    enc_units, latent = shapes[2][1], shapes[2][0]
    tr_units = shapes[6][0]
    dec_units = shapes[12][0]
    expected = _layer_shapes(io_dim, enc_units, latent, tr_units, dec_units)
    if shapes != expected:
        raise ShapeMismatch(
            f"checkpoint shapes {shapes} do not form a valid model topology"
        )

    arrays = []
    for name, shape in zip(PARAM_NAMES, shapes):
        arr = np.array(doc["params"][name], dtype=np.float64)
        if arr.shape != shape:
            raise ShapeMismatch(
                f"parameter {name} has shape {arr.shape}, declared {shape}"
            )
        arrays.append(arr)

    var_floor = float(doc["var_floor"])
    rng = derive_rng(0, "load")
    model = LimbCvae.create(
        doc["limb"],
        n_joints,
        delta_t,
        rng,
        widths=(enc_units, latent, tr_units, dec_units),
        var_floor=var_floor,
    )
    model.set_params(arrays)
    return model


def _layer_shapes(io_dim, enc_units, latent, tr_units, dec_units):
    return [
        (enc_units, io_dim), (enc_units,),
        (latent, enc_units), (latent,),
        (latent, enc_units), (latent,),
        (tr_units, latent), (tr_units,),
        (latent, tr_units), (latent,),
        (latent, tr_units), (latent,),
        (dec_units, latent), (dec_units,),
        (io_dim, dec_units), (io_dim,),
        (io_dim, dec_units), (io_dim,),
    ]


def save_model_set(
    models: ModelSet,
    directory: str | Path,
    provenance: dict[str, dict] | None = None,
) -> None:
    """Write the four limb checkpoints plus a manifest."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    manifest = {
        "format_version": CHECKPOINT_VERSION,
        "delta_t": models.delta_t,
        "limbs": {},
    }
    for name, model in models.models().items():
        filename = f"{name}.json"
        save_checkpoint(
            model,
            directory / filename,
            provenance=(provenance or {}).get(name),
        )
        manifest["limbs"][name] = filename
    with open(directory / "manifest.json", "w") as fh:
        json.dump(manifest, fh, indent=2)
        fh.write("\n")


def load_model_set(directory: str | Path) -> ModelSet:
    directory = Path(directory)
    with open(directory / "manifest.json") as fh:
        manifest = json.load(fh)
    if manifest.get("format_version") != CHECKPOINT_VERSION:
        raise VersionMismatch(
            f"manifest version {manifest.get('format_version')!r}, "
            f"expected {CHECKPOINT_VERSION}"
        )
    models = {
        name: load_checkpoint(directory / filename)
        for name, filename in manifest["limbs"].items()
    }
    return ModelSet(**models)
