"""Base first-order optimizers: SGD, SGD with momentum, Adam and AdaFactor.

``opt_step`` is functional: it never mutates the state or parameters it is
given and returns fresh copies of both.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .errors import ConfigError, NonFiniteError
from .tensor import GradVector, ParamVector

KINDS = ("sgd", "momentum", "adam", "adafactor")


@dataclass(frozen=True)
class OptimizerConfig:
    """Hyper-parameters for one base optimizer.

    ``eps`` defaults to 1e-8 for Adam and 1e-30 for AdaFactor, where it sits
    inside the square root of the factored second-moment estimate. AdaFactor
    uses second-moment decay ``1 - t**(-decay_exponent)`` and clips each
    parameter's update to RMS ``clip_threshold``; there is no first moment,
    relative step sizing or parameter scaling.
    """

    kind: str = "adafactor"
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float | None = None
    momentum: float = 0.9
    decay_exponent: float = 0.8
    clip_threshold: float = 1.0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigError(f"unknown optimizer kind {self.kind!r}; expected one of {KINDS}")
        if not self.learning_rate > 0:
            raise ConfigError("learning_rate must be > 0")
        if not (0.0 <= self.beta1 < 1.0 and 0.0 <= self.beta2 < 1.0):
            raise ConfigError("beta1 and beta2 must lie in [0, 1)")
        if self.eps is None:
            object.__setattr__(self, "eps", 1e-30 if self.kind == "adafactor" else 1e-8)
        if not self.eps > 0:
            raise ConfigError("eps must be > 0")
        if not 0.0 <= self.momentum < 1.0:
            raise ConfigError("momentum must lie in [0, 1)")
        if not self.decay_exponent > 0 or not self.clip_threshold > 0:
            raise ConfigError("decay_exponent and clip_threshold must be > 0")

    def to_dict(self) -> dict:
        return dict(self.__dict__)


@dataclass
class OptimizerState:
    """Step counter plus named buffers.

    SGD keeps nothing; momentum keeps ``velocity``; Adam keeps ``m`` and
    ``v`` (flat, one entry per parameter scalar). AdaFactor keeps
    ``row/<name>`` and ``col/<name>`` for parameters of rank >= 2 (leading
    axes folded into rows) and ``v/<name>`` for vectors.
    """

    step_count: int = 0
    buffers: dict[str, np.ndarray] = field(default_factory=dict)

    def copy(self) -> "OptimizerState":
        return OptimizerState(self.step_count, {k: v.copy() for k, v in self.buffers.items()})


def _matrix_shape(shape: tuple[int, ...]) -> tuple[int, int]:
    return math.prod(shape[:-1]), shape[-1]


def state_init(config: OptimizerConfig, params: ParamVector) -> OptimizerState:
    n = params.total_len
    if config.kind == "sgd":
        return OptimizerState()
    if config.kind == "momentum":
        return OptimizerState(0, {"velocity": np.zeros(n)})
    if config.kind == "adam":
        return OptimizerState(0, {"m": np.zeros(n), "v": np.zeros(n)})
    bufs = {}
    for name, shape in zip(params.names, params.shapes):
        if len(shape) >= 2:
            r, c = _matrix_shape(shape)
            bufs[f"row/{name}"] = np.zeros(r)
            bufs[f"col/{name}"] = np.zeros(c)
        else:
            bufs[f"v/{name}"] = np.zeros(math.prod(shape))
    return OptimizerState(0, bufs)


def _check_grads(params: ParamVector, grads: GradVector):
    if not params.congruent(grads):
        raise ConfigError("gradient layout does not match parameters")
    if not np.all(np.isfinite(grads.flat)):
        bad = int(np.flatnonzero(~np.isfinite(grads.flat))[0])
        name = next(n for n in params.names if params.slice_of(n).start <= bad < params.slice_of(n).stop)
        raise NonFiniteError("non-finite gradient component", parameter=name, index=bad)


def opt_step(
    config: OptimizerConfig, state: OptimizerState, params: ParamVector, grads: GradVector
) -> tuple[OptimizerState, ParamVector]:
    _check_grads(params, grads)
    if state.step_count == 0 and not state.buffers and config.kind != "sgd":
        state = state_init(config, params)
    st = state.copy()
    st.step_count += 1
    t = st.step_count
    g = grads.flat
    lr = config.learning_rate
    w = params.flat

    if config.kind == "sgd":
        return st, params.like(w - lr * g)

    if config.kind == "momentum":
        v = st.buffers["velocity"]
        v *= config.momentum
        v += g
        return st, params.like(w - lr * v)

    if config.kind == "adam":
        b1, b2 = config.beta1, config.beta2
        m, v = st.buffers["m"], st.buffers["v"]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        m_hat = m / (1.0 - b1**t)
        v_hat = v / (1.0 - b2**t)
        return st, params.like(w - lr * m_hat / (np.sqrt(v_hat) + config.eps))

    # adafactor
    decay = 1.0 - t ** (-config.decay_exponent)
    new = w.copy()
    for name, shape in zip(params.names, params.shapes):
        sl = params.slice_of(name)
        gp = g[sl]
        if len(shape) >= 2:
            g2d = np.ascontiguousarray(gp.reshape(_matrix_shape(shape)))
            upd = kernels.adafactor_factored(
                g2d, st.buffers[f"row/{name}"], st.buffers[f"col/{name}"], decay, config.eps
            ).ravel()
        else:
            v = st.buffers[f"v/{name}"]
            v *= decay
            v += (1.0 - decay) * (gp * gp)
            upd = gp / np.sqrt(v + config.eps)
        rms = math.sqrt(float(np.mean(upd * upd)))
        upd = upd / max(1.0, rms / config.clip_threshold)
        new[sl] = w[sl] - lr * upd
    return st, params.like(new)
