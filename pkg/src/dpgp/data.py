"""Regression datasets: synthetic generators, splitting and CSV loading."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Optional

import numpy as np
from scipy import linalg

from dpgp.kernels import KernelSpec, as_inputs, kernel_matrix


@dataclass(frozen=True)
class RegressionDataset:
    x: np.ndarray
    y: np.ndarray
    true_f: Optional[Callable] = None
    input_names: tuple = ()
    output_name: str = "y"

    def __post_init__(self):
        y = np.asarray(self.y, dtype=float).reshape(-1)
        x = as_inputs(self.x) if len(y) else np.empty((0, max(1, len(self.input_names))))
        if len(x) != len(y):
            raise ValueError(f"{len(x)} inputs but {len(y)} outputs")
        if not (np.all(np.isfinite(x)) and np.all(np.isfinite(y))):
            raise ValueError("dataset contains missing or non-finite values")
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "y", y)

    def __len__(self) -> int:
        return len(self.y)

    def subset(self, idx) -> "RegressionDataset":
        return RegressionDataset(self.x[idx], self.y[idx], self.true_f, self.input_names, self.output_name)


def split_even(data: RegressionDataset, rng: np.random.Generator):
    """Random disjoint halves ``(first, second)``; the first gets the extra point when odd."""
    perm = rng.permutation(len(data))
    cut = math.ceil(len(data) / 2)
    return data.subset(np.sort(perm[:cut])), data.subset(np.sort(perm[cut:]))


def sinc(x) -> np.ndarray:
    """``sin(2x) / (2x)`` with the removable singularity filled in."""
    x = np.asarray(x, dtype=float)
    return np.sinc(2 * x / np.pi)


def synth_sinc(n: int, noise_sd: float, interval=(-4.0, 4.0), rng=None) -> RegressionDataset:
    if n < 1:
        raise ValueError("n must be positive")
    rng = np.random.default_rng(rng)
    x = rng.uniform(interval[0], interval[1], size=n)
    y = sinc(x) + noise_sd * rng.standard_normal(n)
    return RegressionDataset(x[:, None], y, lambda v: sinc(as_inputs(v)[:, 0]))


def synth_gp_draw(
    spec: KernelSpec, n: int, noise_sd: float, interval=(-4.0, 4.0), rng=None, max_jitter: float = 1e-2
) -> RegressionDataset:
    """Noisy observations of a function drawn from the GP prior at ``n`` uniform inputs."""
    if n < 1:
        raise ValueError("n must be positive")
    rng = np.random.default_rng(rng)
    x = rng.uniform(interval[0], interval[1], size=(n, 1))
    f = gp_draw_latent(spec, x, rng, max_jitter)
    return RegressionDataset(x, f + noise_sd * rng.standard_normal(n))


def gp_draw_latent(spec: KernelSpec, x, rng: np.random.Generator, max_jitter: float = 1e-2) -> np.ndarray:
    k = kernel_matrix(spec, x)
    jitter = 1e-10 * spec.variance
    while True:
        try:
            chol = linalg.cholesky(k + jitter * np.eye(len(k)), lower=True)
            break
        except linalg.LinAlgError:
            jitter *= 10
            if jitter > max_jitter * spec.variance:
                raise
    return chol @ rng.standard_normal(len(k))


class CSVFormatError(ValueError):
    pass


def load_csv(path, output_column: Optional[str] = None) -> RegressionDataset:
    """Read a header-first numeric CSV; the output is the last column unless named."""
    path = Path(path)
    with path.open(newline="") as fh:
        rows = list(csv.reader(fh))
    rows = [r for r in rows if r and any(cell.strip() for cell in r)]
    if not rows:
        return RegressionDataset(np.empty((0, 1)), np.empty(0))
    header = [h.strip() for h in rows[0]]
    out_idx = len(header) - 1 if output_column is None else header.index(output_column)
    in_idx = [i for i in range(len(header)) if i != out_idx]
    values = []
    for lineno, row in enumerate(rows[1:], start=2):
        if len(row) != len(header):
            raise CSVFormatError(f"{path}:{lineno}: expected {len(header)} fields, got {len(row)}")
        try:
            parsed = [float(cell) for cell in row]
        except ValueError as exc:
            raise CSVFormatError(f"{path}:{lineno}: {exc}") from None
        if not all(math.isfinite(v) for v in parsed):
            raise CSVFormatError(f"{path}:{lineno}: non-finite value")
        values.append(parsed)
    arr = np.array(values, dtype=float).reshape(len(values), len(header))
    return RegressionDataset(
        arr[:, in_idx],
        arr[:, out_idx],
        input_names=tuple(header[i] for i in in_idx),
        output_name=header[out_idx],
    )


def write_csv(data: RegressionDataset, path) -> None:
    names = list(data.input_names) or [f"x{i}" for i in range(data.x.shape[1])]
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(names + [data.output_name])
        for xi, yi in zip(data.x, data.y):
            w.writerow([repr(float(v)) for v in xi] + [repr(float(yi))])
