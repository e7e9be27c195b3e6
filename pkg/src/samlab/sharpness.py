"""Flatness instruments: worst-case loss in a rho-ball, top Hessian
eigenvalue, and 2-D loss-surface slices.

``lossfn`` is anything with ``__call__(params) -> float`` and
``value_and_grad(params) -> (float, GradVector)``, e.g.
:class:`samlab.tensor.Objective`.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

from . import rng
from .errors import ConfigError, NonFiniteError
from .tensor import ParamVector


@dataclass
class SharpnessReport:
    rho: float
    worst_case_increase: float
    ascent_steps: int
    restarts: int
    top_eigenvalue_estimate: float
    probe_seed: int
    base_loss: float = 0.0
    discarded_restarts: int = 0

    def to_dict(self) -> dict:
        """Plain dict; an uncomputed eigenvalue (NaN) becomes None so it serialises as JSON null."""
        d = asdict(self)
        if math.isnan(d["top_eigenvalue_estimate"]):
            d["top_eigenvalue_estimate"] = None
        return d


def _gen(seed_or_gen, purpose: str):
    if isinstance(seed_or_gen, np.random.Generator):
        return seed_or_gen, -1
    seed = int(seed_or_gen)
    return rng.stream(seed, 0, purpose), seed


def _flat(d, params: ParamVector) -> np.ndarray:
    arr = d.flat if isinstance(d, ParamVector) else np.asarray(d, dtype=np.float64).ravel()
    if arr.shape != (params.total_len,):
        raise ConfigError(f"direction length {arr.size} does not match {params.total_len} parameters")
    return arr


def _project(eps: np.ndarray, rho: float) -> np.ndarray:
    n = float(np.linalg.norm(eps))
    return eps if n <= rho else eps * (rho / n)


def sharpness_probe(lossfn, params: ParamVector, rho: float, steps: int = 20, restarts: int = 3,
                    seed=0, hessian_iters: int = 0, fd_step: float = 1e-4) -> SharpnessReport:
    """Estimate ``max_{||eps|| <= rho} L(w + eps) - L(w)`` by projected gradient ascent.

    Each restart starts on the sphere of radius ``rho / 2`` in a random
    direction and takes ``steps`` normalised-gradient steps of length
    ``rho / steps``, projecting back into the ball after each one. The best
    loss seen anywhere (including ``eps = 0``) is reported. The random start
    directions depend only on ``seed``, so probes at different radii share
    them up to scale.
    """
    if not rho > 0 or steps < 1 or restarts < 1:
        raise ConfigError("sharpness_probe needs rho > 0, steps >= 1, restarts >= 1")
    gen, probe_seed = _gen(seed, "sharpness/probe")
    base = float(lossfn(params))
    if not math.isfinite(base):
        raise NonFiniteError("non-finite loss at the probe center")
    w = params.flat
    lr = rho / steps
    best = base
    discarded = 0
    for _ in range(restarts):
        u = gen.standard_normal(params.total_len)
        un = float(np.linalg.norm(u))
        eps = (0.5 * rho / un) * u if un > 0 else np.zeros_like(u)
        peak = -math.inf
        ok = True
        for _ in range(steps):
            val, g = lossfn.value_and_grad(params.like(w + eps))
            gf = g.flat
            if not (math.isfinite(val) and np.all(np.isfinite(gf))):
                ok = False
                break
            peak = max(peak, val)
            gn = float(np.linalg.norm(gf))
            if gn == 0.0:
                break
            eps = _project(eps + (lr / gn) * gf, rho)
        if ok:
            val = float(lossfn(params.like(w + eps)))
            ok = math.isfinite(val)
            peak = max(peak, val) if ok else peak
        if not ok:
            discarded += 1
            continue
        best = max(best, peak)
    if discarded == restarts:
        raise NonFiniteError("every sharpness restart hit a non-finite loss", restarts=restarts)
    top = math.nan
    if hessian_iters > 0:
        top = hessian_top_eigenvalue(lossfn, params, hessian_iters, fd_step, seed)
    return SharpnessReport(
        rho=rho,
        worst_case_increase=max(0.0, best - base),
        ascent_steps=steps,
        restarts=restarts,
        top_eigenvalue_estimate=top,
        probe_seed=probe_seed,
        base_loss=base,
        discarded_restarts=discarded,
    )


def hessian_vector_product(lossfn, params: ParamVector, v: np.ndarray, fd_step: float = 1e-4) -> np.ndarray:
    """Central difference of gradients along ``v``; step is ``fd_step`` in parameter space."""
    vn = float(np.linalg.norm(v))
    if vn == 0.0:
        return np.zeros_like(v)
    h = fd_step / vn
    w = params.flat
    _, gp = lossfn.value_and_grad(params.like(w + h * v))
    _, gm = lossfn.value_and_grad(params.like(w - h * v))
    hv = (gp.flat - gm.flat) / (2.0 * h)
    if not np.all(np.isfinite(hv)):
        raise NonFiniteError("non-finite Hessian-vector product")
    return hv


def hessian_top_eigenvalue(lossfn, params: ParamVector, iters: int = 100, fd_step: float = 1e-4,
                           seed=0) -> float:
    """Power iteration on finite-difference Hessian-vector products.

    Returns the Rayleigh quotient of the final iterate, i.e. the eigenvalue
    of largest magnitude.
    """
    if iters < 1 or not fd_step > 0:
        raise ConfigError("hessian_top_eigenvalue needs iters >= 1 and fd_step > 0")
    gen, _ = _gen(seed, "sharpness/hessian")
    v = gen.standard_normal(params.total_len)
    v /= np.linalg.norm(v)
    estimate = 0.0
    for _ in range(iters):
        hv = hessian_vector_product(lossfn, params, v, fd_step)
        estimate = float(v @ hv)
        n = float(np.linalg.norm(hv))
        if n == 0.0:
            return 0.0
        v = hv / n
    return estimate


def orthonormal_pair(dir_u, dir_v, params: ParamVector) -> tuple[np.ndarray, np.ndarray]:
    u = _flat(dir_u, params).copy()
    v = _flat(dir_v, params).copy()
    un = float(np.linalg.norm(u))
    if un == 0.0:
        raise ConfigError("slice direction u has zero norm")
    u /= un
    v = v - (u @ v) * u
    vn = float(np.linalg.norm(v))
    if vn <= 1e-12 * max(1.0, float(np.linalg.norm(_flat(dir_v, params)))):
        raise ConfigError("slice direction v has zero norm after removing its u component")
    v /= vn
    # second pass keeps u.v at rounding level
    v = v - (u @ v) * u
    v /= np.linalg.norm(v)
    return u, v


def slice_coords(half_width: float, grid_n: int) -> np.ndarray:
    """Uniform grid on [-half_width, half_width]; the middle point is exactly 0 for odd n."""
    i = np.arange(grid_n, dtype=np.float64)
    return half_width * (2.0 * i - (grid_n - 1)) / (grid_n - 1)


def loss_surface_slice(lossfn, params: ParamVector, dir_u, dir_v, half_width: float,
                       grid_n: int) -> np.ndarray:
    """``out[i, j] = L(w + alpha_i u + beta_j v)`` with u, v orthonormalised."""
    if grid_n < 2 or not half_width > 0:
        raise ConfigError("loss_surface_slice needs grid_n >= 2 and half_width > 0")
    u, v = orthonormal_pair(dir_u, dir_v, params)
    coords = slice_coords(half_width, grid_n)
    w = params.flat
    out = np.empty((grid_n, grid_n))
    for i, a in enumerate(coords):
        for j, b in enumerate(coords):
            out[i, j] = lossfn(params.like(w + a * u + b * v))
    return out
