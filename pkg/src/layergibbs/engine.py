"""Common contract of the exact and Monte Carlo layer-kernel evaluators.

Both engines describe the layer restriction of a plus-boundary box
``{-n..n}^2``.  Everything the potentials need is expressed through the layer
weight ``W(eta)``: the sum of Boltzmann weights over all spins off the layer
with the layer frozen to ``eta``.  Sites listed in ``free`` are summed over
as well (decimation).
"""
from __future__ import annotations

import math
from abc import ABC, abstractmethod
from itertools import product
from typing import Iterable, Mapping

import numpy as np

from .lattice import MINUS, PLUS, LayerConfig
from .stats import Estimate


class KernelEngine(ABC):
    engine_tag: str = "exact"
    n: int
    beta: float
    h: float

    @property
    def layer_sites(self) -> tuple[int, ...]:
        return tuple(range(-self.n, self.n + 1))

    @abstractmethod
    def log_weight_ratio(self, a: LayerConfig, b: LayerConfig, free: Iterable[int] = ()) -> Estimate:
        """``log W(a) - log W(b)``."""

    @abstractmethod
    def layer_expectation(self, layer: LayerConfig, obs, free: Iterable[int] = ()) -> Estimate:
        """Expectation of an :class:`~layergibbs.exact.Observable` with the layer frozen to ``layer``."""

    @abstractmethod
    def layer_log_ratio(self, layer: LayerConfig, f, g, free: Iterable[int] = ()) -> Estimate:
        """``log(E[f g] / (E[f] E[g]))`` with the layer frozen to ``layer``."""

    @abstractmethod
    def flip_difference(self, a: LayerConfig, b: LayerConfig, k: int, free: Iterable[int] = ()) -> Estimate:
        """``log[W(a^k)/W(a)] - log[W(b^k)/W(b)]`` where ``x^k`` sets site ``k`` to minus.

        ``a`` and ``b`` must carry a plus spin at ``k``.
        """

    def log_kernel(self, V: Iterable[int], sigma, omega: LayerConfig, free: Iterable[int] = ()) -> Estimate:
        """``log gamma_V(sigma_V | omega)`` from weight ratios against every ``sigma'_V``."""
        V = sorted(set(V))
        get = sigma.spin if isinstance(sigma, LayerConfig) else sigma.__getitem__
        target = omega.with_spins({i: get(i) for i in V})
        ratios = []
        for config in product((PLUS, MINUS), repeat=len(V)):
            other = omega.with_spins(dict(zip(V, config)))
            ratios.append(self.log_weight_ratio(other, target, free))
        vals = np.array([r.value for r in ratios])
        top = vals.max()
        w = np.exp(vals - top)
        value = -(top + math.log(w.sum()))
        if all(r.is_exact for r in ratios):
            return Estimate.exact(value)
        # delta method, ratios treated as independent
        p = w / w.sum()
        err = math.sqrt(sum((pi * r.stderr) ** 2 for pi, r in zip(p, ratios)))
        n = max(r.n_samples for r in ratios)
        return Estimate(value, err, n, "mc", ratios[0].seed)

    def kernel(self, V, sigma, omega, free=()) -> float:
        return math.exp(self.log_kernel(V, sigma, omega, free).value)

    def describe(self) -> dict:
        return {"engine": self.engine_tag, "n": self.n, "beta": self.beta, "h": self.h}


def as_layer_dict(spins: Mapping[int, int] | LayerConfig, sites: Iterable[int]) -> dict[int, int]:
    get = spins.spin if isinstance(spins, LayerConfig) else spins.__getitem__
    return {i: get(i) for i in sites}
