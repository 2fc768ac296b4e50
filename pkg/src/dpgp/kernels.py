"""Exponentiated quadratic kernels, inducing sets and Gram matrices."""

from __future__ import annotations

import enum
import itertools
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.spatial.distance import pdist

JITTER = 1e-8


class KernelFamily(str, enum.Enum):
    EXPONENTIATED_QUADRATIC = "exponentiated_quadratic"
    PRODUCT_EXPONENTIATED_QUADRATIC = "product_exponentiated_quadratic"


@dataclass(frozen=True)
class KernelSpec:
    """Stationary, distance-decreasing kernel ``k(x, x') = variance * k_r(r)``.

    The isotropic family carries a single lengthscale that is broadcast over
    every input dimension; the product family carries one per dimension.
    Both are evaluated on coordinates rescaled by their lengthscales.
    """

    variance: float = 1.0
    lengthscales: tuple = (1.0,)
    family: KernelFamily = KernelFamily.EXPONENTIATED_QUADRATIC

    def __post_init__(self):
        ls = tuple(float(v) for v in np.atleast_1d(self.lengthscales))
        object.__setattr__(self, "lengthscales", ls)
        object.__setattr__(self, "family", KernelFamily(self.family))
        if not self.variance > 0:
            raise ValueError(f"kernel variance must be positive, got {self.variance}")
        if not ls or min(ls) <= 0:
            raise ValueError(f"lengthscales must be positive, got {ls}")
        if self.family is KernelFamily.EXPONENTIATED_QUADRATIC and len(ls) != 1:
            raise ValueError("isotropic kernel takes exactly one lengthscale")

    @property
    def isotropic(self) -> bool:
        return len(set(self.lengthscales)) == 1

    def lengthscale_vector(self, dim: int) -> np.ndarray:
        if self.family is KernelFamily.EXPONENTIATED_QUADRATIC:
            return np.full(dim, self.lengthscales[0])
        if len(self.lengthscales) != dim:
            raise ValueError(
                f"kernel has {len(self.lengthscales)} lengthscales but inputs have "
                f"dimension {dim}"
            )
        return np.asarray(self.lengthscales)

    def rescale(self, x) -> np.ndarray:
        """Divide each coordinate of ``x`` (shape ``(n, p)``) by its lengthscale."""
        x = as_inputs(x)
        return x / self.lengthscale_vector(x.shape[1])

    def distance_scale(self) -> float:
        """Lengthscale of the radial profile ``k_r``.

        For isotropic kernels distances are in input units; for anisotropic
        product kernels they are measured after rescaling, so the profile has
        unit lengthscale.
        """
        return self.lengthscales[0] if self.isotropic else 1.0

    def with_lengthscales(self, lengthscales) -> "KernelSpec":
        return KernelSpec(self.variance, lengthscales, self.family)


def as_inputs(x) -> np.ndarray:
    """Coerce inputs to a float array of shape ``(n, p)``; 1-D arrays are ``n`` scalars."""
    x = np.asarray(x, dtype=float)
    if x.ndim == 0:
        x = x.reshape(1, 1)
    elif x.ndim == 1:
        x = x[:, None]
    elif x.ndim != 2:
        raise ValueError(f"inputs must be at most 2-D, got shape {x.shape}")
    return x


@dataclass(frozen=True)
class GridSpec:
    """Regular grid: ``origin[n] + spacing[n] * i`` for ``i < counts[n]``."""

    counts: tuple
    spacing: tuple
    origin: tuple

    def points(self) -> np.ndarray:
        axes = [o + s * np.arange(c) for c, s, o in zip(self.counts, self.spacing, self.origin)]
        return np.array(list(itertools.product(*axes)), dtype=float)

    @property
    def center(self) -> np.ndarray:
        return np.array([o + s * (c - 1) / 2 for c, s, o in zip(self.counts, self.spacing, self.origin)])

    @property
    def lower(self) -> np.ndarray:
        return np.asarray(self.origin, dtype=float)

    @property
    def upper(self) -> np.ndarray:
        return np.array([o + s * (c - 1) for c, s, o in zip(self.counts, self.spacing, self.origin)])


@dataclass(frozen=True)
class InducingSet:
    """Inducing inputs ``Z`` with their minimum pairwise distance.

    Construct from explicit points or with :meth:`grid_from_bounds`. Points must be
    distinct; ``min_pairwise_distance`` is computed at construction.
    """

    points: np.ndarray
    grid: Optional[GridSpec] = None
    min_pairwise_distance: float = field(init=False)

    def __post_init__(self):
        pts = as_inputs(self.points)
        if len(pts) == 0:
            raise ValueError("inducing set must contain at least one point")
        pts.setflags(write=False)
        object.__setattr__(self, "points", pts)
        if self.grid is not None and not np.array_equal(pts, self.grid.points()):
            raise ValueError("points do not match the grid metadata")
        dz = float(pdist(pts).min()) if len(pts) > 1 else np.inf
        if dz == 0:
            raise ValueError("inducing points must be distinct")
        object.__setattr__(self, "min_pairwise_distance", dz)

    @classmethod
    def grid_from_bounds(cls, lower, upper, counts) -> "InducingSet":
        """Regular grid with ``counts[n]`` points spanning ``[lower[n], upper[n]]``."""
        lower = np.atleast_1d(np.asarray(lower, dtype=float))
        upper = np.atleast_1d(np.asarray(upper, dtype=float))
        counts = np.atleast_1d(counts).astype(int)
        lower, upper, counts = np.broadcast_arrays(lower, upper, counts)
        if np.any(counts < 1):
            raise ValueError("grid counts must be positive")
        spacing = np.where(counts > 1, (upper - lower) / np.maximum(counts - 1, 1), 1.0)
        spec = GridSpec(
            tuple(int(c) for c in counts),
            tuple(float(s) for s in spacing),
            tuple(float(o) for o in lower),
        )
        return cls(spec.points(), grid=spec)

    def __len__(self) -> int:
        return len(self.points)

    @property
    def dim(self) -> int:
        return self.points.shape[1]

    def min_distance_for(self, spec: KernelSpec) -> float:
        """Minimum pairwise distance in the units expected by :func:`kr_squared`."""
        if spec.isotropic:
            return self.min_pairwise_distance
        scaled = spec.rescale(self.points)
        return float(pdist(scaled).min()) if len(scaled) > 1 else np.inf


@dataclass(frozen=True)
class KernelMatrices:
    """``k_zz`` is the jittered inducing Gram matrix; column ``i`` of ``k_zx`` is ``k_i``."""

    k_zz: np.ndarray
    k_zx: np.ndarray

    @property
    def d(self) -> int:
        return self.k_zz.shape[0]


def _sq_dist(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    diff = a[:, None, :] - b[None, :, :]
    return np.einsum("ijk,ijk->ij", diff, diff)


def kernel_matrix(spec: KernelSpec, x, x2=None) -> np.ndarray:
    """Cross-covariance matrix between the rows of ``x`` and ``x2``.

    When ``x2`` is omitted the result is the symmetric Gram matrix of ``x``,
    computed once per unordered pair.
    """
    xs = spec.rescale(x)
    if x2 is None:
        k = spec.variance * np.exp(-0.5 * _sq_dist(xs, xs))
        k = np.triu(k)
        return k + np.triu(k, 1).T
    x2s = spec.rescale(x2)
    if xs.shape[1] != x2s.shape[1]:
        raise ValueError(f"dimension mismatch: {xs.shape[1]} vs {x2s.shape[1]}")
    return spec.variance * np.exp(-0.5 * _sq_dist(xs, x2s))


def eval_kernel(spec: KernelSpec, x, x_prime) -> float:
    x = np.atleast_1d(np.asarray(x, dtype=float))
    x_prime = np.atleast_1d(np.asarray(x_prime, dtype=float))
    if x.shape != x_prime.shape or x.ndim != 1:
        raise ValueError(f"dimension mismatch: {x.shape} vs {x_prime.shape}")
    scaled = (x - x_prime) / spec.lengthscale_vector(len(x))
    return float(spec.variance * np.prod(np.exp(-0.5 * scaled**2)))


def kernel_diag(spec: KernelSpec, x) -> np.ndarray:
    return np.full(len(as_inputs(x)), spec.variance)


def jitter_amount(spec: KernelSpec) -> float:
    return JITTER * spec.variance


def gram_matrices(spec: KernelSpec, inducing: InducingSet, x) -> KernelMatrices:
    x = as_inputs(x) if len(np.asarray(x)) else np.empty((0, inducing.dim))
    if x.shape[1] != inducing.dim:
        raise ValueError(f"inputs have dimension {x.shape[1]}, inducing set {inducing.dim}")
    k_zz = kernel_matrix(spec, inducing.points)
    k_zz[np.diag_indices_from(k_zz)] += jitter_amount(spec)
    k_zx = kernel_matrix(spec, inducing.points, x) if len(x) else np.zeros((len(inducing), 0))
    return KernelMatrices(k_zz, k_zx)


def cross_to_inducing(spec: KernelSpec, inducing: InducingSet, v) -> np.ndarray:
    """``K_VZ`` with the inducing jitter applied where a row of ``v`` coincides with ``z_j``.

    The jitter on ``K_ZZ`` acts as a tiny white-noise component of the prior
    over inducing values; carrying it onto exactly coincident prediction
    points keeps the joint prior of ``(f(V), u)`` consistent.
    """
    v = as_inputs(v)
    k = kernel_matrix(spec, v, inducing.points)
    same = np.all(v[:, None, :] == inducing.points[None, :, :], axis=-1)
    return k + jitter_amount(spec) * same


def kr_squared(spec: KernelSpec, r: float) -> float:
    """Squared radial profile ``k_r(r)**2`` with ``k_r(0) = 1``.

    ``r`` is measured as described in :meth:`KernelSpec.distance_scale`.
    """
    if r < 0:
        raise ValueError("distance must be nonnegative")
    if np.isinf(r):
        return 0.0
    ell = spec.distance_scale()
    return float(np.exp(-((r / ell) ** 2)))
