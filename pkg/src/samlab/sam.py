"""Sharpness-aware minimization as a wrapper around any base optimizer.

One SAM step at weights ``w`` with batch ``B``:

1. draw an ascent micro-batch ``M`` of ``a`` examples from ``B``;
2. move to ``w_adv = w + rho * g_M / ||g_M||`` where ``g_M`` is the loss
   gradient on ``M`` at ``w``;
3. take the loss gradient on ``B`` at ``w_adv``;
4. hand that gradient to the base optimizer, which updates ``w``.

With ``m > 1`` the micro-batch is cut into ``m`` equal pieces, each with its
own adversarial point, and the descent gradients are averaged in shard order.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np

from . import rng as rngmod
from .errors import ConfigError, NonFiniteError
from .optim import OptimizerConfig, OptimizerState, opt_step
from .tasks import Batch
from .tensor import GradVector, ParamVector, value_and_grad

ASCENT_PURPOSE = "ascent"


@dataclass(frozen=True)
class SamConfig:
    """SAM hyper-parameters.

    ``ascent_size=None`` means ``max(b // 4, 1)`` for the batch at hand.
    ``m_descent`` picks what each of the ``m`` adversarial points is
    evaluated on: its own equal shard of the batch (``"shard"``) or the full
    batch (``"full"``). ``exact_base_loss`` spends one extra forward pass to
    report ``L_B(w)`` instead of ``L_M(w)`` when ``a < b``.
    """

    rho: float = 0.15
    ascent_size: int | None = None
    m: int = 1
    grad_norm_floor: float = 1e-12
    enabled: bool = True
    m_descent: str = "shard"
    exact_base_loss: bool = False

    def __post_init__(self):
        if self.rho < 0 or not math.isfinite(self.rho):
            raise ConfigError(f"rho must be a finite value >= 0, got {self.rho}")
        if self.m < 1:
            raise ConfigError("m must be >= 1")
        if self.grad_norm_floor < 0:
            raise ConfigError("grad_norm_floor must be >= 0")
        if self.m_descent not in ("shard", "full"):
            raise ConfigError(f"m_descent must be 'shard' or 'full', got {self.m_descent!r}")
        if self.ascent_size is not None:
            if self.ascent_size < 1:
                raise ConfigError("ascent_size must be >= 1")
            self._check_m(self.ascent_size)

    @property
    def active(self) -> bool:
        """SAM runs only when enabled with a positive radius."""
        return self.enabled and self.rho > 0

    def _check_m(self, a: int):
        if self.m > a or a % self.m:
            raise ConfigError(f"ascent size {a} must be divisible by m={self.m} and >= m")

    def resolve_ascent_size(self, b: int) -> int:
        a = max(b // 4, 1) if self.ascent_size is None else self.ascent_size
        if a > b:
            raise ConfigError(f"ascent size {a} exceeds batch size {b}")
        self._check_m(a)
        if self.m_descent == "shard" and b % self.m:
            raise ConfigError(f"batch size {b} must be divisible by m={self.m} for sharded descent")
        return a

    def to_dict(self) -> dict:
        return dict(self.__dict__)


@dataclass
class SamStepTrace:
    """What one SAM step did.

    ``epsilon`` has shape (P,) for ``m == 1`` and (m, P) otherwise; each row is
    the applied perturbation. ``ascent_grad_norm`` and ``base_loss`` are
    averaged over the ``m`` micro-batches. ``base_loss`` is the loss at ``w``
    on the ascent micro-batch unless the config asks for the exact batch
    loss; with SAM inactive it is ``L_B(w)``.
    """

    ascent_grad_norm: float = 0.0
    epsilon: np.ndarray = field(default_factory=lambda: np.zeros(0))
    adv_loss: float = 0.0
    base_loss: float = 0.0
    skipped_ascent: bool = False
    skipped_count: int = 0


@dataclass
class MetricsRecord:
    step: int
    train_loss: float
    eval_loss: float | None = None
    eval_accuracy: float | None = None
    ascent_grad_norm: float | None = None
    adv_loss_gap: float | None = None
    step_wall_ms: float = 0.0
    skipped_ascent_count: int = 0


METRICS_FIELDS = (
    "step",
    "train_loss",
    "eval_loss",
    "eval_accuracy",
    "ascent_grad_norm",
    "adv_loss_gap",
    "step_wall_ms",
    "skipped_ascent_count",
)


def ascent_indices(b: int, a: int, gen: np.random.Generator) -> np.ndarray:
    """Sorted positions of the ascent micro-batch within a batch of size ``b``."""
    if not 1 <= a <= b:
        raise ConfigError(f"ascent size {a} must satisfy 1 <= a <= b={b}")
    if a == b:
        return np.arange(b)
    return np.sort(gen.choice(b, size=a, replace=False))


def sample_ascent_microbatch(batch: Batch, a: int, gen: np.random.Generator) -> Batch:
    """Uniform without-replacement subset of ``a`` examples, kept in batch order.

    ``gen`` should be the run's ``(seed, step, "ascent")`` stream; ``a == b``
    returns the batch itself without drawing.
    """
    idx = ascent_indices(len(batch), a, gen)
    return batch if len(idx) == len(batch) else batch.take(idx)


def compute_ascent_point(
    params: ParamVector, ascent_grad: GradVector, rho: float, grad_norm_floor: float = 1e-12
) -> tuple[ParamVector, SamStepTrace]:
    g = ascent_grad.flat
    if not np.all(np.isfinite(g)):
        raise NonFiniteError("non-finite ascent gradient")
    norm = float(np.linalg.norm(g))
    if norm <= grad_norm_floor:
        trace = SamStepTrace(norm, np.zeros_like(g), skipped_ascent=True, skipped_count=1)
        return params, trace
    eps = (rho / norm) * g
    return params.like(params.flat + eps), SamStepTrace(norm, eps)


def _checked(fn, params, batch, **ctx):
    loss, grad = value_and_grad(fn, params, batch, **ctx)
    if not np.all(np.isfinite(grad.flat)):
        raise NonFiniteError("non-finite gradient", **ctx)
    return loss, grad


def sam_gradient(fn, params: ParamVector, batch: Batch, config: SamConfig, gen=None, **ctx):
    """Gradient to feed the base optimizer, plus a trace of the ascent.

    ``gen`` is only drawn from when ``a < b``; an inactive config never touches it.
    """
    if not config.active:
        loss, grad = _checked(fn, params, batch, **ctx)
        return grad, SamStepTrace(0.0, np.zeros(params.total_len), loss, loss)

    b = len(batch)
    a = config.resolve_ascent_size(b)
    if b < a:
        raise ConfigError(f"batch of {b} smaller than ascent size {a}")
    micro = sample_ascent_microbatch(batch, a, gen)
    m = config.m
    ascent_parts = micro.shards(m)
    descent_parts = batch.shards(m) if config.m_descent == "shard" else [batch] * m

    total = np.zeros(params.total_len)
    eps_rows, norms, base_losses, adv_losses = [], [], [], []
    skipped = 0
    for j in range(m):
        base_loss, g_asc = _checked(fn, params, ascent_parts[j], shard=j, phase="ascent", **ctx)
        try:
            w_adv, part = compute_ascent_point(params, g_asc, config.rho, config.grad_norm_floor)
        except NonFiniteError as exc:
            raise NonFiniteError(str(exc), shard=j, **ctx) from None
        adv_loss, g_adv = _checked(fn, w_adv, descent_parts[j], shard=j, phase="descent", **ctx)
        total += g_adv.flat
        eps_rows.append(part.epsilon)
        norms.append(part.ascent_grad_norm)
        base_losses.append(base_loss)
        adv_losses.append(adv_loss)
        skipped += part.skipped_count
    g_out = total if m == 1 else total / m

    base = float(np.mean(base_losses))
    if config.exact_base_loss and a < b:
        base = value_and_grad(fn, params, batch)[0]
    trace = SamStepTrace(
        ascent_grad_norm=float(np.mean(norms)),
        epsilon=eps_rows[0] if m == 1 else np.stack(eps_rows),
        adv_loss=float(np.mean(adv_losses)),
        base_loss=base,
        skipped_ascent=skipped > 0,
        skipped_count=skipped,
    )
    return GradVector.from_flat(g_out, params), trace


def sam_train_step(
    fn,
    params: ParamVector,
    batch: Batch,
    sam_config: SamConfig,
    opt_config: OptimizerConfig,
    opt_state: OptimizerState,
    gen=None,
    step: int | None = None,
):
    """One full update: SAM gradient (or the plain gradient) then one base-optimizer step.

    Returns ``(new_params, new_opt_state, trace, metrics)``. ``metrics.step``
    is the post-update step count of the optimizer.
    """
    t0 = time.perf_counter()
    ctx = {} if step is None else {"step": step}
    grad, trace = sam_gradient(fn, params, batch, sam_config, gen, **ctx)
    new_state, new_params = opt_step(opt_config, opt_state, params, grad)
    wall_ms = (time.perf_counter() - t0) * 1e3
    active = sam_config.active
    rec = MetricsRecord(
        step=new_state.step_count if step is None else step,
        train_loss=trace.base_loss,
        ascent_grad_norm=trace.ascent_grad_norm if active else None,
        adv_loss_gap=(trace.adv_loss - trace.base_loss) if active else None,
        step_wall_ms=wall_ms,
        skipped_ascent_count=trace.skipped_count,
    )
    return new_params, new_state, trace, rec


def ascent_stream(run_seed: int, step: int) -> np.random.Generator:
    return rngmod.stream(run_seed, step, ASCENT_PURPOSE)
