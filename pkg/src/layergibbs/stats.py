"""Estimates with error bars and the resampling helpers behind them."""
from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Callable, Sequence

import numpy as np


@dataclass(frozen=True)
class Estimate:
    """A number together with its standard error and provenance.

    Exact results carry ``stderr == 0`` and ``n_samples == 0``.  Arithmetic
    between estimates adds errors in quadrature, i.e. treats operands as
    independent; correlated combinations are computed by the engines directly.
    """

    value: float
    stderr: float = 0.0
    n_samples: int = 0
    engine: str = "exact"
    seed: int | None = None

    def __post_init__(self):
        if self.stderr < 0 or math.isnan(self.stderr):
            raise ValueError("stderr must be a nonnegative number")
        if self.engine not in ("exact", "mc"):
            raise ValueError(f"unknown engine tag {self.engine!r}")
        if self.engine == "exact" and (self.stderr != 0 or self.n_samples != 0):
            raise ValueError("exact estimates have zero stderr and no samples")

    @classmethod
    def exact(cls, value: float) -> "Estimate":
        return cls(float(value))

    @property
    def is_exact(self) -> bool:
        return self.engine == "exact"

    def _combine(self, other, value, stderr):
        if isinstance(other, Estimate):
            mc = self.engine == "mc" or other.engine == "mc"
            n = max(self.n_samples, other.n_samples)
            seed = self.seed if self.seed is not None else other.seed
        else:
            mc, n, seed = self.engine == "mc", self.n_samples, self.seed
        if not mc:
            return Estimate(float(value))
        return Estimate(float(value), float(stderr), n, "mc", seed)

    def __add__(self, other):
        if isinstance(other, Estimate):
            return self._combine(other, self.value + other.value, math.hypot(self.stderr, other.stderr))
        return self._combine(other, self.value + other, self.stderr)

    __radd__ = __add__

    def __sub__(self, other):
        if isinstance(other, Estimate):
            return self._combine(other, self.value - other.value, math.hypot(self.stderr, other.stderr))
        return self._combine(other, self.value - other, self.stderr)

    def __rsub__(self, other):
        return (-self) + other

    def __neg__(self):
        return replace(self, value=-self.value)

    def __mul__(self, c):
        if isinstance(c, Estimate):
            raise TypeError("product of two estimates is not supported; combine values explicitly")
        return replace(self, value=self.value * c, stderr=self.stderr * abs(c))

    __rmul__ = __mul__

    def __truediv__(self, c):
        return self * (1.0 / c)

    def __float__(self):
        return float(self.value)

    def agrees_with(self, other: "Estimate | float", nsigma: float = 4.0, atol: float = 0.0) -> bool:
        o_val = float(other)
        o_err = other.stderr if isinstance(other, Estimate) else 0.0
        return abs(self.value - o_val) <= nsigma * math.hypot(self.stderr, o_err) + atol

    def to_dict(self) -> dict:
        return {
            "value": self.value,
            "stderr": self.stderr,
            "n_samples": self.n_samples,
            "engine": self.engine,
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Estimate":
        return cls(d["value"], d.get("stderr", 0.0), d.get("n_samples", 0), d.get("engine", "exact"), d.get("seed"))

    def __str__(self):
        if self.is_exact:
            return f"{self.value:.12g}"
        return f"{self.value:.6g} +- {self.stderr:.2g}"


def sum_estimates(items: Sequence[Estimate]) -> Estimate:
    total = Estimate.exact(0.0)
    for e in items:
        total = total + e
    return total


def block_means(x: np.ndarray, n_blocks: int) -> np.ndarray:
    """Means of ``n_blocks`` contiguous blocks along axis 0 (trailing remainder dropped)."""
    x = np.asarray(x, dtype=float)
    size = len(x) // n_blocks
    if size == 0:
        raise ValueError(f"need at least {n_blocks} samples, got {len(x)}")
    return x[: size * n_blocks].reshape(n_blocks, size, *x.shape[1:]).mean(axis=1)


def jackknife(blocks: np.ndarray, func: Callable[[np.ndarray], float]) -> tuple[float, float]:
    """Delete-one jackknife over block means.

    ``blocks`` has shape ``(n_blocks, ...)``; ``func`` maps a mean over blocks
    (shape ``(...)``) to a scalar.  Returns the bias-corrected estimate and its
    standard error.
    """
    blocks = np.asarray(blocks, dtype=float)
    nb = len(blocks)
    full = func(blocks.mean(axis=0))
    total = blocks.sum(axis=0)
    loo = np.array([func((total - blocks[b]) / (nb - 1)) for b in range(nb)])
    mean_loo = loo.mean()
    err = math.sqrt((nb - 1) / nb * np.sum((loo - mean_loo) ** 2))
    return float(nb * full - (nb - 1) * mean_loo), err


def mean_stderr(blocks: np.ndarray) -> tuple[float, float]:
    blocks = np.asarray(blocks, dtype=float)
    nb = len(blocks)
    return float(blocks.mean()), float(blocks.std(ddof=1) / math.sqrt(nb)) if nb > 1 else 0.0


def split_rhat(chains: np.ndarray) -> float:
    """Split-chain potential scale reduction for an array of shape ``(chains, draws)``."""
    chains = np.asarray(chains, dtype=float)
    half = chains.shape[1] // 2
    if half < 2:
        return float("nan")
    split = np.concatenate([chains[:, :half], chains[:, half : 2 * half]], axis=0)
    m, n = split.shape
    w = split.var(axis=1, ddof=1).mean()
    b = n * split.mean(axis=1).var(ddof=1)
    if w == 0:
        return 1.0 if b == 0 else float("inf")
    var_plus = (n - 1) / n * w + b / n
    return float(math.sqrt(var_plus / w))


def bootstrap_ci(
    samples: np.ndarray, level: float = 0.95
) -> tuple[float, float]:
    lo = (1 - level) / 2
    finite = np.asarray(samples, dtype=float)
    finite = finite[np.isfinite(finite)]
    if finite.size == 0:
        return float("nan"), float("nan")
    return float(np.quantile(finite, lo)), float(np.quantile(finite, 1 - lo))
