"""One generator against K discriminators, each looking through a fixed random projection.

Discriminator ``k`` scores ``D_k(x @ W_k.T)`` where ``W_k`` has unit-norm rows
and never changes after :func:`init_system`. Discriminators minimize the usual
binary cross-entropy; the generator faces the K non-saturating losses
``l_k = -mean(log D_k(G(z)))`` and folds their gradients into one update with
a consolidation rule from :mod:`mogan.moo`.
"""

from __future__ import annotations

import dataclasses
import hashlib
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from . import moo
from .errors import DimensionError
from .nn import AdamState, MlpSpec, adam_step, backprop, forward, forward_cache, init_params

METHODS = ("mgd", "avg", "gman", "hv")
LR_SCHEDULES = ("constant", "linear")
MGD_SKIP_NORM = 1e-9


def _softplus(z):
    return np.logaddexp(0.0, z)


def _sigmoid(z):
    return np.exp(-np.logaddexp(0.0, -z))


@dataclass(frozen=True)
class RingData:
    """Mixture of ``num_modes`` isotropic Gaussians evenly spaced on a circle."""

    num_modes: int = 8
    radius: float = 2.0
    std: float = 0.02

    def __post_init__(self):
        if self.num_modes < 1:
            raise ValueError(f"need at least one mode, got {self.num_modes}")
        if not self.std > 0:
            raise ValueError(f"mode std must be positive, got {self.std}")

    @property
    def dim(self) -> int:
        return 2

    def centers(self) -> np.ndarray:
        angles = 2.0 * np.pi * np.arange(self.num_modes) / self.num_modes
        return self.radius * np.stack([np.cos(angles), np.sin(angles)], axis=1)

    def sample(self, n: int, rng: np.random.Generator) -> np.ndarray:
        idx = rng.integers(self.num_modes, size=n)
        return self.centers()[idx] + self.std * rng.standard_normal((n, 2))


def sample_latent(n: int, latent_dim: int, rng: np.random.Generator) -> np.ndarray:
    return rng.standard_normal((n, latent_dim))


@dataclass(frozen=True)
class ProjectionBank:
    matrices: tuple[np.ndarray, ...]

    def __post_init__(self):
        mats = []
        for w in self.matrices:
            w = np.array(w, dtype=float)
            w.setflags(write=False)
            mats.append(w)
        if not mats or len({w.shape for w in mats}) != 1:
            raise ValueError("a projection bank needs one or more matrices of a common shape")
        object.__setattr__(self, "matrices", tuple(mats))
        stacked = np.stack(mats)
        stacked.setflags(write=False)
        object.__setattr__(self, "_stacked", stacked)

    @property
    def stacked(self) -> np.ndarray:
        """Read-only ``(K, d_proj, d_data)`` array."""
        return self._stacked

    def project(self, x: np.ndarray) -> np.ndarray:
        """``(B, d_data)`` -> ``(K, B, d_proj)``: the batch as seen by every discriminator."""
        return x @ np.swapaxes(self._stacked, 1, 2)

    def __len__(self) -> int:
        return len(self.matrices)

    def __getitem__(self, k: int) -> np.ndarray:
        return self.matrices[k]

    def fingerprint(self) -> str:
        h = hashlib.sha256()
        for w in self.matrices:
            h.update(np.ascontiguousarray(w).tobytes())
        return h.hexdigest()


def make_projection_bank(k: int, d_proj: int, d_data: int, rng: np.random.Generator) -> ProjectionBank:
    """K Gaussian matrices of shape ``(d_proj, d_data)`` with rows scaled to unit norm."""
    if k < 1 or d_proj < 1 or d_data < 1:
        raise ValueError(f"invalid projection sizes K={k}, d_proj={d_proj}, d_data={d_data}")
    mats = []
    for _ in range(k):
        w = rng.standard_normal((d_proj, d_data))
        w /= np.linalg.norm(w, axis=1, keepdims=True)
        mats.append(w)
    return ProjectionBank(tuple(mats))


def default_projection_dim(d_data: int) -> int:
    if d_data <= 2:
        return d_data
    return max(1, round(0.65 * d_data))


@dataclass(frozen=True)
class TrainConfig:
    method: str = "hv"
    num_discriminators: int = 8
    epochs: int = 20
    steps_per_epoch: int = 200
    batch_size: int = 64
    seed: int = 0
    delta: float = moo.DEFAULT_DELTA
    beta: float = 1.0
    latent_dim: int = 64
    data: RingData = field(default_factory=RingData)
    gen_hidden: tuple[int, ...] = (128, 128)
    disc_hidden: tuple[int, ...] = (32, 32)
    projection_dim: int | None = None
    leaky_slope: float = 0.2
    lr_g: float = 2e-4
    lr_d: float = 2e-4
    lr_schedule: str = "linear"
    disc_lr_horizon: float = 1.0
    adam_beta1: float = 0.5
    adam_beta2: float = 0.999
    eval_samples: int = 10_000
    mode_threshold: float = 3.0

    def __post_init__(self):
        object.__setattr__(self, "gen_hidden", tuple(int(h) for h in self.gen_hidden))
        object.__setattr__(self, "disc_hidden", tuple(int(h) for h in self.disc_hidden))
        if self.method not in METHODS:
            raise ValueError(f"method must be one of {METHODS}, got {self.method!r}")
        if self.lr_schedule not in LR_SCHEDULES:
            raise ValueError(f"lr_schedule must be one of {LR_SCHEDULES}, got {self.lr_schedule!r}")
        for name in ("num_discriminators", "batch_size", "latent_dim", "eval_samples"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive, got {getattr(self, name)}")
        for name in ("epochs", "steps_per_epoch"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative, got {getattr(self, name)}")
        if self.method == "hv" and not self.delta > 1:
            raise ValueError(f"HV needs delta > 1, got {self.delta}")
        if self.beta < 0 or not np.isfinite(self.beta):
            raise ValueError(f"beta must be finite and non-negative, got {self.beta}")
        if not 0 < self.disc_lr_horizon <= 1:
            raise ValueError(f"disc_lr_horizon must lie in (0, 1], got {self.disc_lr_horizon}")
        if self.projection_dim is not None and self.projection_dim < 1:
            raise ValueError(f"projection_dim must be positive, got {self.projection_dim}")

    @property
    def total_steps(self) -> int:
        return self.epochs * self.steps_per_epoch

    def lr_factor(self, step: int, horizon: float = 1.0) -> float:
        """Learning-rate multiplier at 0-based training step ``step``.

        The linear schedule reaches zero after ``horizon * total_steps`` steps.
        """
        if self.lr_schedule == "constant" or self.total_steps == 0:
            return 1.0
        return max(0.0, 1.0 - step / (horizon * self.total_steps))

    @property
    def d_proj(self) -> int:
        return self.projection_dim or default_projection_dim(self.data.dim)

    def consolidation(self) -> moo.ConsolidationMethod:
        if self.method == "mgd":
            return moo.MGD()
        if self.method == "avg":
            return moo.AVG()
        if self.method == "gman":
            return moo.GMAN(self.beta)
        return moo.HV(self.delta)

    def generator_spec(self) -> MlpSpec:
        return MlpSpec(
            (self.latent_dim, *self.gen_hidden, self.data.dim),
            "leaky_relu",
            "identity",
            self.leaky_slope,
        )

    def discriminator_spec(self) -> MlpSpec:
        return MlpSpec((self.d_proj, *self.disc_hidden, 1), "leaky_relu", "sigmoid", self.leaky_slope)


@dataclass
class GanSystem:
    gen_spec: MlpSpec
    gen_params: np.ndarray
    disc_spec: MlpSpec
    disc_params: np.ndarray  # (K, P_D), row k belongs to discriminator k
    bank: ProjectionBank
    latent_dim: int
    data: RingData
    gen_adam: AdamState
    disc_adam: AdamState  # moments shaped like disc_params; Adam is elementwise so rows never mix
    rng: np.random.Generator
    steps_taken: int = 0

    def __post_init__(self):
        self.disc_params = np.asarray(self.disc_params, dtype=float)
        if self.disc_params.shape != (len(self.bank), self.disc_spec.num_params):
            raise DimensionError(
                f"discriminator parameters have shape {self.disc_params.shape}, expected "
                f"{(len(self.bank), self.disc_spec.num_params)}"
            )
        if self.disc_adam.m.shape != self.disc_params.shape:
            raise DimensionError("discriminator Adam state does not match the parameter stack")
        if self.disc_spec.d_in != self.bank[0].shape[0]:
            raise DimensionError("discriminator input size must equal the projection dimension")
        if self.gen_spec.d_out != self.bank[0].shape[1]:
            raise DimensionError("generator output size must equal the data dimension")
        if self.gen_spec.d_in != self.latent_dim:
            raise DimensionError("generator input size must equal the latent dimension")

    @property
    def num_discriminators(self) -> int:
        return len(self.disc_params)

    def sample(self, n: int, rng: np.random.Generator | None = None) -> np.ndarray:
        z = sample_latent(n, self.latent_dim, rng if rng is not None else self.rng)
        return forward(self.gen_spec, self.gen_params, z)


def init_system(config: TrainConfig) -> GanSystem:
    init_seq, train_seq = np.random.SeedSequence(config.seed).spawn(2)
    bank_rng, gen_rng, disc_rng = (np.random.default_rng(s) for s in init_seq.spawn(3))
    k = config.num_discriminators
    bank = make_projection_bank(k, config.d_proj, config.data.dim, bank_rng)
    gen_spec = config.generator_spec()
    disc_spec = config.discriminator_spec()
    hyper_g = dict(lr=config.lr_g, beta1=config.adam_beta1, beta2=config.adam_beta2)
    hyper_d = dict(lr=config.lr_d, beta1=config.adam_beta1, beta2=config.adam_beta2)
    return GanSystem(
        gen_spec=gen_spec,
        gen_params=init_params(gen_spec, gen_rng),
        disc_spec=disc_spec,
        disc_params=np.stack([init_params(disc_spec, disc_rng) for _ in range(k)]),
        bank=bank,
        latent_dim=config.latent_dim,
        data=config.data,
        gen_adam=AdamState.zeros(gen_spec.num_params, **hyper_g),
        disc_adam=AdamState(
            np.zeros((k, disc_spec.num_params)), np.zeros((k, disc_spec.num_params)), **hyper_d
        ),
        rng=np.random.default_rng(train_seq),
    )


# ---------------------------------------------------------------------------
# losses
# ---------------------------------------------------------------------------


def _check_data_batch(system: GanSystem, x, name: str) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    d = system.bank[0].shape[1]
    if x.ndim != 2 or x.shape[1] != d:
        raise DimensionError(f"{name} must have shape (B, {d}), got {x.shape}")
    return x


def _disc_losses_and_grads(system: GanSystem, real: np.ndarray, fake: np.ndarray):
    """All K discriminator losses and their ``(K, P_D)`` gradients in one stacked pass."""
    c_real = forward_cache(system.disc_spec, system.disc_params, system.bank.project(real))
    c_fake = forward_cache(system.disc_spec, system.disc_params, system.bank.project(fake))
    s_real, s_fake = c_real.logits, c_fake.logits
    # -log D = softplus(-s), -log(1 - D) = softplus(s)
    losses = np.mean(_softplus(-s_real), axis=(1, 2)) + np.mean(_softplus(s_fake), axis=(1, 2))
    g_real, _ = backprop(c_real, (_sigmoid(s_real) - 1.0) / real.shape[0], wrt_logits=True)
    g_fake, _ = backprop(c_fake, _sigmoid(s_fake) / fake.shape[0], wrt_logits=True)
    return losses, g_real + g_fake


def discriminator_loss(k: int, system: GanSystem, real_batch, fake_batch) -> float:
    """Binary cross-entropy of discriminator ``k``: real labelled 1, generated labelled 0."""
    real = _check_data_batch(system, real_batch, "real batch")
    fake = _check_data_batch(system, fake_batch, "fake batch")
    w = system.bank[k]
    s_real = forward_cache(system.disc_spec, system.disc_params[k], real @ w.T).logits
    s_fake = forward_cache(system.disc_spec, system.disc_params[k], fake @ w.T).logits
    return float(np.mean(_softplus(-s_real)) + np.mean(_softplus(s_fake)))


def _generator_pass(system: GanSystem, z):
    """Losses plus what is needed to backpropagate any combination of them."""
    z = np.asarray(z, dtype=float)
    if z.ndim != 2 or z.shape[1] != system.latent_dim:
        raise DimensionError(f"latent batch must have shape (B, {system.latent_dim}), got {z.shape}")
    g_cache = forward_cache(system.gen_spec, system.gen_params, z)
    x = g_cache.output
    d_cache = forward_cache(system.disc_spec, system.disc_params, system.bank.project(x))
    s = d_cache.logits  # (K, B, 1)
    losses = np.mean(_softplus(-s), axis=(1, 2))

    def output_grads() -> np.ndarray:
        """``(K, B, d_data)``: d l_k / d G(z) for every k."""
        _, dproj = backprop(d_cache, (_sigmoid(s) - 1.0) / x.shape[0], wrt_logits=True)
        return dproj @ system.bank.stacked

    return losses, g_cache, output_grads


def _objectives_and_gradients(system: GanSystem, z, with_grad: bool = True):
    losses, g_cache, output_grads = _generator_pass(system, z)
    if not with_grad:
        return losses, None
    grads, _ = backprop(g_cache, output_grads())
    return losses, grads


def generator_objectives(system: GanSystem, latent_batch) -> np.ndarray:
    """The K losses ``-mean(log D_k(G(z)))`` on a shared latent batch."""
    return _objectives_and_gradients(system, latent_batch, with_grad=False)[0]


def generator_gradients(system: GanSystem, latent_batch) -> np.ndarray:
    """``(K, P_G)`` matrix whose row k is the gradient of loss k w.r.t. the generator."""
    return _objectives_and_gradients(system, latent_batch)[1]


def generator_objectives_and_gradients(system: GanSystem, latent_batch) -> tuple[np.ndarray, np.ndarray]:
    return _objectives_and_gradients(system, latent_batch)


# ---------------------------------------------------------------------------
# training
# ---------------------------------------------------------------------------


class StepReport(NamedTuple):
    losses: np.ndarray
    weights: np.ndarray
    residual: float
    eta: float | None
    disc_losses: np.ndarray


def update_discriminators(system: GanSystem, real: np.ndarray, fake: np.ndarray) -> np.ndarray:
    """One Adam step for every discriminator; row k of the stack depends only on row k."""
    losses, grads = _disc_losses_and_grads(system, real, fake)
    system.disc_adam, system.disc_params = adam_step(system.disc_adam, system.disc_params, grads)
    return losses


def train_step(system: GanSystem, config: TrainConfig) -> StepReport:
    """Alternating update: every discriminator once, then the generator once."""
    b = config.batch_size
    t = system.steps_taken
    system.gen_adam = dataclasses.replace(system.gen_adam, lr=config.lr_g * config.lr_factor(t))
    system.disc_adam = dataclasses.replace(
        system.disc_adam, lr=config.lr_d * config.lr_factor(t, config.disc_lr_horizon)
    )
    system.steps_taken += 1

    real = system.data.sample(b, system.rng)
    fake = system.sample(b)
    disc_losses = update_discriminators(system, real, fake)

    z = sample_latent(b, system.latent_dim, system.rng)
    method = config.consolidation()
    eta = None
    # a NadirError raised below carries the offending discriminator index
    if isinstance(method, moo.MGD):
        losses, grads = _objectives_and_gradients(system, z)
        weights, direction = moo.consolidate(method, losses, grads)
    else:
        # weights depend only on the losses, so one backward pass of the
        # weighted upstream gives sum_k alpha_k grad l_k
        losses, g_cache, output_grads = _generator_pass(system, z)
        if isinstance(method, moo.HV):
            eta = moo.update_nadir(losses, method.delta).eta
        weights = moo.loss_weights(method, losses)
        direction, _ = backprop(g_cache, np.tensordot(weights, output_grads(), axes=1))
    residual = float(np.linalg.norm(direction))

    if isinstance(method, moo.MGD):
        if residual >= MGD_SKIP_NORM:
            step = direction / residual
            system.gen_adam, system.gen_params = adam_step(system.gen_adam, system.gen_params, step)
    else:
        system.gen_adam, system.gen_params = adam_step(system.gen_adam, system.gen_params, direction)
    return StepReport(losses, weights, residual, eta, disc_losses)
