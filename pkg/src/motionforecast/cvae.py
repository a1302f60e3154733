"""Temporal conditional VAE for one limb.

Three stages: an encoder that maps the vectorized past window to a
20-dim latent Gaussian, a transitioner that maps an encoder sample
through a 30-unit layer to a second latent Gaussian, and a decoder that
maps a transitioner sample to a diagonal Gaussian over the vectorized
future window. Both latent stages are regularized toward N(0, I); the
objective is the sampled evidence lower bound with gradients taken
analytically through both reparameterizations.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import NonFiniteLoss, ShapeMismatch
from .nn_core import (
    VAR_FLOOR,
    DenseLayer,
    GaussianHead,
    GaussianVector,
    dense_backward,
    dense_forward,
    derive_rng,
    gaussian_log_pdf_terms,
    head_backward,
    head_forward,
    init_dense,
    init_head,
    kl_std_normal_terms,
)

DEFAULT_WIDTHS = (200, 20, 30, 200)  # encoder units, latent, transitioner units, decoder units

PARAM_NAMES = (
    "enc_w", "enc_b", "enc_mean_w", "enc_mean_b", "enc_var_w", "enc_var_b",
    "tr_w", "tr_b", "tr_mean_w", "tr_mean_b", "tr_var_w", "tr_var_b",
    "dec_w", "dec_b", "dec_mean_w", "dec_mean_b", "dec_var_w", "dec_var_b",
)


@dataclass(frozen=True)
class ForwardMode:
    """Per-stage choice between the mean estimate and a drawn sample."""

    encoder_stage: str = "mean"
    transitioner_stage: str = "mean"
    decoder_stage: str = "mean"

    def __post_init__(self):
        for stage in (self.encoder_stage, self.transitioner_stage, self.decoder_stage):
            if stage not in ("mean", "sample"):
                raise ValueError(f"stage must be 'mean' or 'sample', got {stage!r}")


MEAN_MODE = ForwardMode("mean", "mean", "mean")
# Future-sampling default: draw at both latent stages, keep the decoder mean.
LATENT_SAMPLE_MODE = ForwardMode("sample", "sample", "mean")


class LimbCvae:
    """Encoder / transitioner / decoder parameter triple for one limb."""

    def __init__(
        self,
        limb_name: str,
        n_joints: int,
        delta_t: int,
        encoder_hidden: DenseLayer,
        encoder_head: GaussianHead,
        transition_hidden: DenseLayer,
        transition_head: GaussianHead,
        decoder_hidden: DenseLayer,
        decoder_head: GaussianHead,
    ):
        self.limb_name = limb_name
        self.n_joints = n_joints
        self.delta_t = delta_t
        self.encoder_hidden = encoder_hidden
        self.encoder_head = encoder_head
        self.transition_hidden = transition_hidden
        self.transition_head = transition_head
        self.decoder_hidden = decoder_hidden
        self.decoder_head = decoder_head
        self._validate()

    def _validate(self):
        io_dim = self.delta_t * self.n_joints * 3
        if self.encoder_hidden.in_dim != io_dim:
            raise ShapeMismatch(
                f"encoder in-dim {self.encoder_hidden.in_dim} != {io_dim}"
            )
        if self.decoder_head.out_dim != io_dim:
            raise ShapeMismatch(
                f"decoder out-dim {self.decoder_head.out_dim} != {io_dim}"
            )
        latent = self.encoder_head.out_dim
        if self.transition_hidden.in_dim != latent:
            raise ShapeMismatch("transitioner input must match encoder latent")
        if self.transition_head.out_dim != latent:
            raise ShapeMismatch("transitioner latent must match encoder latent")
        if self.decoder_hidden.in_dim != latent:
            raise ShapeMismatch("decoder input must match transitioner latent")
        if self.encoder_hidden.out_dim != self.encoder_head.in_dim:
            raise ShapeMismatch("encoder hidden/head widths disagree")
        if self.transition_hidden.out_dim != self.transition_head.in_dim:
            raise ShapeMismatch("transitioner hidden/head widths disagree")
        if self.decoder_hidden.out_dim != self.decoder_head.in_dim:
            raise ShapeMismatch("decoder hidden/head widths disagree")

    @property
    def io_dim(self) -> int:
        return self.delta_t * self.n_joints * 3

    @property
    def latent_dim(self) -> int:
        return self.encoder_head.out_dim

    @property
    def var_floor(self) -> float:
        return self.decoder_head.var_floor

    @classmethod
    def create(
        cls,
        limb_name: str,
        n_joints: int,
        delta_t: int,
        rng: np.random.Generator,
        widths: tuple[int, int, int, int] = DEFAULT_WIDTHS,
        var_floor: float = VAR_FLOOR,
    ) -> "LimbCvae":
        """Fresh model with Glorot-uniform weights and zero biases."""
        enc_units, latent, tr_units, dec_units = widths
        io_dim = delta_t * n_joints * 3
        return cls(
            limb_name=limb_name,
            n_joints=n_joints,
            delta_t=delta_t,
            encoder_hidden=init_dense(enc_units, io_dim, "tanh", rng),
            encoder_head=init_head(enc_units, latent, rng, var_floor),
            transition_hidden=init_dense(tr_units, latent, "tanh", rng),
            transition_head=init_head(tr_units, latent, rng, var_floor),
            decoder_hidden=init_dense(dec_units, latent, "tanh", rng),
            decoder_head=init_head(dec_units, io_dim, rng, var_floor),
        )

    def params(self) -> list[np.ndarray]:
        """Live parameter arrays in the fixed PARAM_NAMES order."""
        return [
            self.encoder_hidden.weights, self.encoder_hidden.biases,
            self.encoder_head.mean_layer.weights, self.encoder_head.mean_layer.biases,
            self.encoder_head.raw_var_layer.weights, self.encoder_head.raw_var_layer.biases,
            self.transition_hidden.weights, self.transition_hidden.biases,
            self.transition_head.mean_layer.weights, self.transition_head.mean_layer.biases,
            self.transition_head.raw_var_layer.weights, self.transition_head.raw_var_layer.biases,
            self.decoder_hidden.weights, self.decoder_hidden.biases,
            self.decoder_head.mean_layer.weights, self.decoder_head.mean_layer.biases,
            self.decoder_head.raw_var_layer.weights, self.decoder_head.raw_var_layer.biases,
        ]

    def set_params(self, params: list[np.ndarray]) -> None:
        if len(params) != len(PARAM_NAMES):
            raise ShapeMismatch(f"expected {len(PARAM_NAMES)} arrays")
        current = self.params()
        for cur, new in zip(current, params):
            if cur.shape != new.shape:
                raise ShapeMismatch(f"shape {new.shape} != expected {cur.shape}")
        (
            self.encoder_hidden.weights, self.encoder_hidden.biases,
            self.encoder_head.mean_layer.weights, self.encoder_head.mean_layer.biases,
            self.encoder_head.raw_var_layer.weights, self.encoder_head.raw_var_layer.biases,
            self.transition_hidden.weights, self.transition_hidden.biases,
            self.transition_head.mean_layer.weights, self.transition_head.mean_layer.biases,
            self.transition_head.raw_var_layer.weights, self.transition_head.raw_var_layer.biases,
            self.decoder_hidden.weights, self.decoder_hidden.biases,
            self.decoder_head.mean_layer.weights, self.decoder_head.mean_layer.biases,
            self.decoder_head.raw_var_layer.weights, self.decoder_head.raw_var_layer.biases,
        ) = [np.array(p, dtype=np.float64) for p in params]

    def copy(self) -> "LimbCvae":
        clone = LimbCvae.__new__(LimbCvae)
        clone.limb_name = self.limb_name
        clone.n_joints = self.n_joints
        clone.delta_t = self.delta_t
        floor = self.var_floor
        for attr in (
            "encoder_hidden", "transition_hidden", "decoder_hidden",
        ):
            layer = getattr(self, attr)
            setattr(clone, attr, DenseLayer(
                layer.weights.copy(), layer.biases.copy(), layer.activation
            ))
        for attr in ("encoder_head", "transition_head", "decoder_head"):
            head = getattr(self, attr)
            setattr(clone, attr, GaussianHead(
                mean_layer=DenseLayer(
                    head.mean_layer.weights.copy(),
                    head.mean_layer.biases.copy(),
                    "identity",
                ),
                raw_var_layer=DenseLayer(
                    head.raw_var_layer.weights.copy(),
                    head.raw_var_layer.biases.copy(),
                    "identity",
                ),
                var_floor=floor,
            ))
        return clone


@dataclass
class ModelSet:
    """The four limb models sharing one window length."""

    root: LimbCvae
    torso: LimbCvae
    right: LimbCvae
    left: LimbCvae

    def __post_init__(self):
        dts = {m.delta_t for m in self.models().values()}
        if len(dts) != 1:
            raise ShapeMismatch(f"limb models disagree on delta_t: {sorted(dts)}")

    @property
    def delta_t(self) -> int:
        return self.root.delta_t

    def models(self) -> dict[str, LimbCvae]:
        return {
            "root": self.root,
            "torso": self.torso,
            "right": self.right,
            "left": self.left,
        }


def encode(
    model: LimbCvae, x_past: np.ndarray, eps: np.ndarray | None = None
) -> tuple[np.ndarray, GaussianVector]:
    """Past window vector -> encoded latent; eps=None takes the mean."""
    h, _ = dense_forward(model.encoder_hidden, x_past)
    mean, var, _ = head_forward(model.encoder_head, h)
    latent = GaussianVector(mean=mean, var=var)
    if eps is None:
        return mean.copy(), latent
    eps = np.asarray(eps, dtype=np.float64)
    if eps.shape != mean.shape:
        raise ShapeMismatch(f"eps shape {eps.shape} != latent shape {mean.shape}")
    return mean + np.sqrt(var) * eps, latent


def transition(
    model: LimbCvae, encoded: np.ndarray, eps: np.ndarray | None = None
) -> tuple[np.ndarray, GaussianVector]:
    """Encoded latent -> dynamics latent; eps=None takes the mean."""
    h, _ = dense_forward(model.transition_hidden, encoded)
    mean, var, _ = head_forward(model.transition_head, h)
    latent = GaussianVector(mean=mean, var=var)
    if eps is None:
        return mean.copy(), latent
    eps = np.asarray(eps, dtype=np.float64)
    if eps.shape != mean.shape:
        raise ShapeMismatch(f"eps shape {eps.shape} != latent shape {mean.shape}")
    return mean + np.sqrt(var) * eps, latent


def decode(model: LimbCvae, transitioned: np.ndarray) -> GaussianVector:
    """Dynamics latent -> diagonal Gaussian over the future window vector."""
    h, _ = dense_forward(model.decoder_hidden, transitioned)
    mean, var, _ = head_forward(model.decoder_head, h)
    return GaussianVector(mean=mean, var=var)


def forward(
    model: LimbCvae,
    x_past: np.ndarray,
    mode: ForwardMode = MEAN_MODE,
    rng: np.random.Generator | None = None,
):
    """Compose encode -> transition -> decode honoring the per-stage mode.

    Returns the decoder GaussianVector, or a drawn future vector when
    the decoder stage itself is sampled.
    """
    needs_rng = "sample" in (
        mode.encoder_stage, mode.transitioner_stage, mode.decoder_stage
    )
    if needs_rng and rng is None:
        rng = derive_rng(0, "forward")
    latent_dim = model.latent_dim
    eps_e = rng.standard_normal(latent_dim) if mode.encoder_stage == "sample" else None
    encoded, _ = encode(model, x_past, eps_e)
    eps_t = (
        rng.standard_normal(latent_dim)
        if mode.transitioner_stage == "sample"
        else None
    )
    transitioned, _ = transition(model, encoded, eps_t)
    dist = decode(model, transitioned)
    if mode.decoder_stage == "sample":
        return dist.mean + np.sqrt(dist.var) * rng.standard_normal(len(dist))
    return dist


def elbo_batch(
    model: LimbCvae,
    x_past: np.ndarray,
    x_future: np.ndarray,
    eps_enc: np.ndarray,
    eps_tr: np.ndarray,
    kl_scale: float = 1.0,
) -> tuple[float, list[np.ndarray]]:
    """Mean per-sample lower bound over a batch, with analytic gradients.

    All inputs are (B, dim) arrays; eps arrays hold the standard-normal
    draws for the two reparameterized stages. Returns the batch-mean
    bound and d(bound)/d(params) in PARAM_NAMES order.
    """
    x_past = np.atleast_2d(np.asarray(x_past, dtype=np.float64))
    x_future = np.atleast_2d(np.asarray(x_future, dtype=np.float64))
    eps_enc = np.atleast_2d(np.asarray(eps_enc, dtype=np.float64))
    eps_tr = np.atleast_2d(np.asarray(eps_tr, dtype=np.float64))
    batch = x_past.shape[0]
    if x_future.shape[0] != batch or eps_enc.shape[0] != batch or eps_tr.shape[0] != batch:
        raise ShapeMismatch("batch sizes disagree")

    h1, cache1 = dense_forward(model.encoder_hidden, x_past)
    mean_e, var_e, cache_he = head_forward(model.encoder_head, h1)
    sd_e = np.sqrt(var_e)
    enc = mean_e + sd_e * eps_enc

    h2, cache2 = dense_forward(model.transition_hidden, enc)
    mean_t, var_t, cache_ht = head_forward(model.transition_head, h2)
    sd_t = np.sqrt(var_t)
    tr = mean_t + sd_t * eps_tr

    h3, cache3 = dense_forward(model.decoder_hidden, tr)
    mean_d, var_d, cache_hd = head_forward(model.decoder_head, h3)

    recon = gaussian_log_pdf_terms(x_future, mean_d, var_d)
    kl_e = kl_std_normal_terms(mean_e, var_e)
    kl_t = kl_std_normal_terms(mean_t, var_t)
    value = float(np.mean(recon - kl_scale * (kl_e + kl_t)))
    if not np.isfinite(value):
        raise NonFiniteLoss(f"non-finite lower bound for limb {model.limb_name!r}")

    # Backward pass for the batch mean: every per-sample contribution
    # carries 1/B.
    scale = 1.0 / batch
    diff = x_future - mean_d
    d_mean_d = scale * diff / var_d
    d_var_d = scale * 0.5 * (diff * diff / (var_d * var_d) - 1.0 / var_d)
    gw_dm, gb_dm, gw_dv, gb_dv, d_h3 = head_backward(
        model.decoder_head, cache_hd, d_mean_d, d_var_d
    )
    gw_d, gb_d, d_tr = dense_backward(model.decoder_hidden, cache3, d_h3)

    d_mean_t = d_tr - scale * kl_scale * mean_t
    d_var_t = d_tr * eps_tr / (2.0 * sd_t) - scale * kl_scale * 0.5 * (
        1.0 - 1.0 / var_t
    )
    gw_tm, gb_tm, gw_tv, gb_tv, d_h2 = head_backward(
        model.transition_head, cache_ht, d_mean_t, d_var_t
    )
    gw_t, gb_t, d_enc = dense_backward(model.transition_hidden, cache2, d_h2)

    d_mean_e = d_enc - scale * kl_scale * mean_e
    d_var_e = d_enc * eps_enc / (2.0 * sd_e) - scale * kl_scale * 0.5 * (
        1.0 - 1.0 / var_e
    )
    gw_em, gb_em, gw_ev, gb_ev, d_h1 = head_backward(
        model.encoder_head, cache_he, d_mean_e, d_var_e
    )
    gw_e, gb_e, _ = dense_backward(model.encoder_hidden, cache1, d_h1)

    grads = [
        gw_e, gb_e, gw_em, gb_em, gw_ev, gb_ev,
        gw_t, gb_t, gw_tm, gb_tm, gw_tv, gb_tv,
        gw_d, gb_d, gw_dm, gb_dm, gw_dv, gb_dv,
    ]
    return value, grads


def forward_mean_batch(
    model: LimbCvae, x_past: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """All-mean forward over a (B, in) batch; returns (mean, var) arrays."""
    h1, _ = dense_forward(model.encoder_hidden, x_past)
    mean_e, _, _ = head_forward(model.encoder_head, h1)
    h2, _ = dense_forward(model.transition_hidden, mean_e)
    mean_t, _, _ = head_forward(model.transition_head, h2)
    h3, _ = dense_forward(model.decoder_hidden, mean_t)
    mean_d, var_d, _ = head_forward(model.decoder_head, h3)
    return mean_d, var_d


def elbo_values(
    model: LimbCvae,
    x_past: np.ndarray,
    x_future: np.ndarray,
    eps_enc: np.ndarray,
    eps_tr: np.ndarray,
    kl_scale: float = 1.0,
) -> np.ndarray:
    """Per-sample lower bounds, forward pass only (no gradients)."""
    h1, _ = dense_forward(model.encoder_hidden, x_past)
    mean_e, var_e, _ = head_forward(model.encoder_head, h1)
    enc = mean_e + np.sqrt(var_e) * eps_enc
    h2, _ = dense_forward(model.transition_hidden, enc)
    mean_t, var_t, _ = head_forward(model.transition_head, h2)
    tr = mean_t + np.sqrt(var_t) * eps_tr
    h3, _ = dense_forward(model.decoder_hidden, tr)
    mean_d, var_d, _ = head_forward(model.decoder_head, h3)
    recon = gaussian_log_pdf_terms(x_future, mean_d, var_d)
    kl = kl_std_normal_terms(mean_e, var_e) + kl_std_normal_terms(mean_t, var_t)
    return recon - kl_scale * kl


def elbo(
    model: LimbCvae,
    x_past: np.ndarray,
    x_future: np.ndarray,
    n_samples: int = 1,
    rng: np.random.Generator | None = None,
    kl_scale: float = 1.0,
) -> tuple[float, list[np.ndarray]]:
    """Sampled lower bound for one window pair, averaged over n_samples."""
    if n_samples < 1:
        raise ValueError("n_samples must be >= 1")
    if rng is None:
        rng = derive_rng(0, "elbo")
    x_past = np.asarray(x_past, dtype=np.float64)
    x_future = np.asarray(x_future, dtype=np.float64)
    latent = model.latent_dim
    tiled_past = np.tile(x_past, (n_samples, 1))
    tiled_future = np.tile(x_future, (n_samples, 1))
    eps_enc = rng.standard_normal((n_samples, latent))
    eps_tr = rng.standard_normal((n_samples, latent))
    return elbo_batch(model, tiled_past, tiled_future, eps_enc, eps_tr, kl_scale)
