"""Upper bounds on the per-record kernel vector norm and the joint mechanism sensitivity.

Every bound here limits ``||k_x||_2`` where ``k_x = (k(z_j, x))_j`` for an
arbitrary input ``x``. The bounds only use public information: the kernel,
the inducing inputs and the output bound ``r_y``.
"""

from __future__ import annotations

import enum
import logging
import math
from dataclasses import dataclass

import numpy as np
from scipy import optimize

from dpgp.kernels import InducingSet, KernelSpec, kr_squared

logger = logging.getLogger(__name__)


class BoundMethod(str, enum.Enum):
    TRIVIAL = "trivial"
    ONE_DIM = "one_dim"
    N_DIM = "n_dim"
    GRID_OPTIMAL = "grid_optimal"
    AUTO = "auto"


@dataclass(frozen=True)
class SensitivityBounds:
    r_k: float
    r_y: float
    method: BoundMethod


class GridBoundError(ValueError):
    """The grid-centre bound does not apply to the given inducing set."""


def bound_trivial(spec: KernelSpec, d: int) -> float:
    if d < 1:
        raise ValueError("need at least one inducing point")
    return math.sqrt(d) * spec.variance


def bound_1d(spec: KernelSpec, d: int, d_z: float) -> float:
    """Bound for 1-D inducing inputs spaced at least ``d_z`` apart.

    Counts, on each side of ``x``, the nearest admissible inducing locations
    ``0, d_z, 2 d_z, ...``. The closest slot is deliberately counted on both
    sides, so for very small ``d`` this can exceed the trivial bound.
    """
    if not d_z > 0:
        raise ValueError(f"minimum inducing distance must be positive, got {d_z}")
    half_floor, half_ceil = d // 2, -(-d // 2)
    total = sum(2 * kr_squared(spec, j * d_z) for j in range(half_floor + 1))
    total += (half_ceil - half_floor) * kr_squared(spec, half_ceil * d_z)
    return spec.variance * math.sqrt(total)


def bound_nd(spec: KernelSpec, d: int, d_z: float) -> float:
    """Bound for any dimension: at most one inducing point lies within ``d_z / 2`` of ``x``."""
    if not d_z > 0:
        raise ValueError(f"minimum inducing distance must be positive, got {d_z}")
    return spec.variance * math.sqrt(1 + (d - 1) * kr_squared(spec, d_z / 2))


@dataclass(frozen=True)
class GridSensitivityProblem:
    """Squared kernel norm ``||k||^2`` of a product-EQ kernel as a function of rescaled ``x``.

    In rescaled coordinates ``x~ = x / l`` the squared norm is
    ``variance**2 * sum_j exp(-||x~ - z~_j||^2)``.
    """

    rescaled_inducing: np.ndarray
    center: np.ndarray
    variance: float = 1.0

    @classmethod
    def from_inducing(cls, spec: KernelSpec, inducing: InducingSet) -> "GridSensitivityProblem":
        if inducing.grid is None:
            raise GridBoundError("inducing set has no grid metadata")
        scaled = spec.rescale(inducing.points)
        center = spec.rescale(inducing.grid.center[None, :])[0]
        return cls(scaled, center, spec.variance)

    def _offsets(self, x):
        d = np.asarray(x, dtype=float)[None, :] - self.rescaled_inducing
        return d, np.exp(-np.einsum("ij,ij->i", d, d))

    def value(self, x) -> float:
        _, w = self._offsets(x)
        return float(self.variance**2 * w.sum())

    def gradient(self, x) -> np.ndarray:
        d, w = self._offsets(x)
        return -2 * self.variance**2 * (w[:, None] * d).sum(axis=0)

    def hessian(self, x) -> np.ndarray:
        d, w = self._offsets(x)
        outer = 2 * np.einsum("j,jk,jl->kl", w, d, d)
        return 2 * self.variance**2 * (outer - w.sum() * np.eye(d.shape[1]))

    def bounding_box(self):
        return self.rescaled_inducing.min(axis=0), self.rescaled_inducing.max(axis=0)

    def local_maxima(self, starts: np.ndarray) -> np.ndarray:
        """Gradient ascent from each start; returns the converged values."""
        values = []
        for x0 in starts:
            res = optimize.minimize(
                lambda x: -self.value(x),
                x0,
                jac=lambda x: -self.gradient(x),
                method="BFGS",
                options={"gtol": 1e-12},
            )
            values.append(-res.fun)
        return np.array(values)


def bound_grid_optimal(
    spec: KernelSpec, inducing: InducingSet, n_starts: int = 20, seed: int = 0
):
    """Exact bound for a regular grid with an odd number of points per axis.

    Evaluates the squared norm at the grid centre, checks that the gradient
    vanishes there and the Hessian is negative definite, and then runs
    ``n_starts`` local maximisations inside the grid box; any of them beating
    the centre value raises :class:`GridBoundError`.

    Returns:
        ``(r_k, hessian_negative_definite)``. When the flag is False the
        centre is not a strict local maximum and callers must fall back to
        :func:`bound_nd`.
    """
    grid = inducing.grid
    if grid is None:
        raise GridBoundError("inducing set has no grid metadata")
    if any(c % 2 == 0 for c in grid.counts):
        raise GridBoundError(f"grid counts must be odd in every direction, got {grid.counts}")
    problem = GridSensitivityProblem.from_inducing(spec, inducing)
    center_value = problem.value(problem.center)
    grad = problem.gradient(problem.center)
    if np.max(np.abs(grad)) > 1e-10 * spec.variance**2:
        raise GridBoundError(f"gradient at grid centre is not zero: {grad}")
    negative_definite = bool(np.linalg.eigvalsh(problem.hessian(problem.center)).max() < 0)
    if not negative_definite:
        return math.sqrt(center_value), False

    rng = np.random.default_rng(seed)
    lo, hi = problem.bounding_box()
    starts = rng.uniform(lo, hi, size=(n_starts, len(lo)))
    best = problem.local_maxima(starts).max()
    if best > center_value * (1 + 1e-9):
        raise GridBoundError(
            f"local maximum {best:.12g} exceeds the grid-centre value {center_value:.12g}"
        )
    return math.sqrt(center_value), True


def _resolve_method(spec: KernelSpec, inducing: InducingSet) -> BoundMethod:
    grid = inducing.grid
    if grid is not None and all(c % 2 == 1 for c in grid.counts):
        return BoundMethod.GRID_OPTIMAL
    return BoundMethod.N_DIM if inducing.dim > 1 else BoundMethod.ONE_DIM


def kernel_norm_bound(
    spec: KernelSpec, inducing: InducingSet, r_y: float, method="auto"
) -> SensitivityBounds:
    """Compute ``R_k`` with the requested method, never looser than the trivial bound."""
    if not r_y > 0:
        raise ValueError("output bound r_y must be positive")
    method = BoundMethod(method)
    if method is BoundMethod.AUTO:
        method = _resolve_method(spec, inducing)
    d = len(inducing)
    trivial = bound_trivial(spec, d)
    if d == 1:
        # a single inducing point: ||k|| <= variance holds exactly
        return SensitivityBounds(spec.variance, r_y, method)

    if method is BoundMethod.TRIVIAL:
        r_k = trivial
    elif method is BoundMethod.ONE_DIM:
        if inducing.dim != 1:
            raise ValueError("the one-dimensional bound needs 1-D inducing inputs")
        r_k = bound_1d(spec, d, inducing.min_distance_for(spec))
    elif method is BoundMethod.N_DIM:
        r_k = bound_nd(spec, d, inducing.min_distance_for(spec))
    else:
        r_k, negative_definite = bound_grid_optimal(spec, inducing)
        if not negative_definite:
            logger.warning("grid centre is not a strict maximum; falling back to n_dim bound")
            method = BoundMethod.N_DIM
            r_k = bound_nd(spec, d, inducing.min_distance_for(spec))
    return SensitivityBounds(min(r_k, trivial), r_y, method)


def joint_sensitivity(bounds: SensitivityBounds, c: float = 1.0) -> float:
    """L2 sensitivity of ``(A, (sigma_a / sigma_b) * B_hat)`` for noise ratio ``c = sigma_a / sigma_b``."""
    if not c > 0:
        raise ValueError(f"noise ratio c must be positive, got {c}")
    ry2, rk2 = bounds.r_y**2, bounds.r_k**2
    return math.sqrt(ry2**2 / (2 * c**2) + 2 * ry2 * rk2 + 2 * c**2 * rk2**2)
