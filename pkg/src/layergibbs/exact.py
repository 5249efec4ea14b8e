"""Exact finite-volume Ising measures by exhaustive enumeration.

The box is cut by the layer row ``y = 0`` into an upper block (rows ``y > 0``)
and a lower block (rows ``y < 0``).  Given the layer, the two blocks are
independent, so each block is enumerated once on its own.  For every block
configuration we keep three integers: the pattern of the row touching the
layer, the number of unsatisfied bonds and the number of minus spins.  The
weight of a configuration is ``exp(-2*beta*unsat + h*(N - 2*minus))``, which
equals ``exp(beta * sum(s s' - 1) + h * sum(s))``.  Histograms of these
integers are independent of ``beta`` and ``h`` and are cached per geometry;
sums are then taken over the layer configurations explicitly.

Bit convention: bit ``c`` of a row pattern is 1 when the spin in column ``c``
is minus.
"""
from __future__ import annotations

import functools
import hashlib
import json
import math
from dataclasses import dataclass, field
from itertools import product
from typing import Iterable, Mapping

import numpy as np
from scipy.special import logsumexp

from .lattice import MINUS, PLUS, LayerConfig, LayerInterval, Site2D
from .engine import KernelEngine
from .stats import Estimate

DEFAULT_CAP = 26
BOUNDARIES = ("plus", "minus", "free")


class EnumerationTooLarge(ValueError):
    pass


@dataclass(frozen=True)
class BoxProblem:
    """A finite 2D box with inverse temperature, field and boundary condition.

    The box is ``{-n..n}^2`` unless ``x_range``/``y_range`` are given.  When
    ``frozen_layer`` is set the layer spins inside the box are fixed to it (the
    fill spin applies outside its window); ``frozen_sites`` restricts the
    freezing to a subset of layer sites, leaving the others free.
    ``frozen_extra`` fixes arbitrary further sites.
    """

    n: int
    beta: float
    h: float = 0.0
    boundary: str = "plus"
    frozen_layer: LayerConfig | None = None
    frozen_sites: tuple[int, ...] | None = None
    frozen_extra: tuple[tuple[int, int, int], ...] = ()
    x_range: tuple[int, int] | None = None
    y_range: tuple[int, int] | None = None

    def __post_init__(self):
        if self.n < 0:
            raise ValueError("n must be nonnegative")
        if not self.beta >= 0:
            raise ValueError("beta must be nonnegative")
        if self.boundary not in BOUNDARIES:
            raise ValueError(f"boundary must be one of {BOUNDARIES}")
        if self.frozen_sites is not None:
            object.__setattr__(self, "frozen_sites", tuple(sorted(set(int(i) for i in self.frozen_sites))))
            if self.frozen_layer is None:
                raise ValueError("frozen_sites requires frozen_layer")
        object.__setattr__(self, "frozen_extra", tuple(sorted(tuple(int(v) for v in t) for t in self.frozen_extra)))
        y0, y1 = self.ys
        if not (y0 <= 0 <= y1):
            raise ValueError("box must contain the layer row y = 0")
        x0, x1 = self.xs
        if x0 > x1:
            raise ValueError("empty box")
        for i in self.frozen_sites or ():
            if not x0 <= i <= x1:
                raise ValueError(f"frozen layer site {i} outside the box")
        for x, y, s in self.frozen_extra:
            if not (x0 <= x <= x1 and y0 <= y <= y1):
                raise ValueError(f"frozen site {(x, y)} outside the box")
            if s not in (PLUS, MINUS):
                raise ValueError("frozen spins must be +1 or -1")

    @property
    def xs(self) -> tuple[int, int]:
        return tuple(self.x_range) if self.x_range is not None else (-self.n, self.n)

    @property
    def ys(self) -> tuple[int, int]:
        return tuple(self.y_range) if self.y_range is not None else (-self.n, self.n)

    @property
    def width(self) -> int:
        return self.xs[1] - self.xs[0] + 1

    @property
    def layer_sites(self) -> tuple[int, ...]:
        return tuple(range(self.xs[0], self.xs[1] + 1))

    def contains(self, site: Site2D) -> bool:
        (x0, x1), (y0, y1) = self.xs, self.ys
        return x0 <= site.x <= x1 and y0 <= site.y <= y1

    def frozen_layer_spins(self) -> dict[int, int]:
        if self.frozen_layer is None:
            return {}
        sites = self.layer_sites if self.frozen_sites is None else self.frozen_sites
        return {i: self.frozen_layer.spin(i) for i in sites}

    def frozen_spins(self) -> dict[Site2D, int]:
        out = {Site2D(i, 0): s for i, s in self.frozen_layer_spins().items()}
        for x, y, s in self.frozen_extra:
            out[Site2D(x, y)] = s
        return out

    def replace(self, **kw) -> "BoxProblem":
        d = {f: getattr(self, f) for f in self.__dataclass_fields__}
        d.update(kw)
        return BoxProblem(**d)

    def to_dict(self) -> dict:
        return {
            "n": self.n,
            "beta": self.beta,
            "h": self.h,
            "boundary": self.boundary,
            "frozen_layer": None if self.frozen_layer is None else self.frozen_layer.to_dict(),
            "frozen_sites": None if self.frozen_sites is None else list(self.frozen_sites),
            "frozen_extra": [list(t) for t in self.frozen_extra],
            "x_range": None if self.x_range is None else list(self.x_range),
            "y_range": None if self.y_range is None else list(self.y_range),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "BoxProblem":
        d = dict(d)
        if d.get("frozen_layer") is not None:
            d["frozen_layer"] = LayerConfig.from_dict(d["frozen_layer"])
        for key in ("x_range", "y_range", "frozen_sites"):
            if d.get(key) is not None:
                d[key] = tuple(d[key])
        d["frozen_extra"] = tuple(tuple(t) for t in d.get("frozen_extra", ()))
        return cls(**d)

    def key(self) -> str:
        """Canonical hash used by the golden-value store."""
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()[:16]


# ---------------------------------------------------------------------------
# observables


@dataclass(frozen=True)
class Observable:
    """Linear combination of products of single-site factors.

    Each term is ``(coef, ((site, f_plus, f_minus), ...))``: the product over
    its sites of ``f_plus`` or ``f_minus`` depending on the spin.
    """

    terms: tuple[tuple[float, tuple[tuple[Site2D, float, float], ...]], ...]

    @classmethod
    def constant(cls, c: float = 1.0) -> "Observable":
        return cls(((float(c), ()),))

    @classmethod
    def factor(cls, site: Site2D, f_plus: float, f_minus: float) -> "Observable":
        return cls(((1.0, ((site, float(f_plus), float(f_minus)),)),))

    @classmethod
    def spin(cls, site: Site2D) -> "Observable":
        return cls.factor(site, 1.0, -1.0)

    @classmethod
    def exp_spin(cls, site: Site2D, c: float) -> "Observable":
        """``exp(c * X(site))``."""
        return cls.factor(site, math.exp(c), math.exp(-c))

    @classmethod
    def indicator(cls, site: Site2D, s: int) -> "Observable":
        return cls.factor(site, 1.0 if s == PLUS else 0.0, 1.0 if s == MINUS else 0.0)

    @classmethod
    def indicator_config(cls, spins: Mapping[Site2D, int]) -> "Observable":
        obs = cls.constant()
        for site, s in sorted(spins.items()):
            obs = obs * cls.indicator(site, s)
        return obs

    @classmethod
    def table(cls, sites: Iterable[Site2D], values: Mapping[tuple[int, ...], float]) -> "Observable":
        """Arbitrary function of the spins on ``sites`` given as a lookup table."""
        sites = tuple(sites)
        out = []
        for config, val in sorted(values.items()):
            if val == 0:
                continue
            fac = tuple(
                (x, 1.0 if s == PLUS else 0.0, 1.0 if s == MINUS else 0.0) for x, s in zip(sites, config)
            )
            out.append((float(val), fac))
        return cls(tuple(out) or ((0.0, ()),))

    @property
    def support(self) -> frozenset:
        return frozenset(site for _, fac in self.terms for site, _, _ in fac)

    def __mul__(self, other: "Observable") -> "Observable":
        if not isinstance(other, Observable):
            return Observable(tuple((c * other, fac) for c, fac in self.terms))
        out = []
        for c1, f1 in self.terms:
            for c2, f2 in other.terms:
                merged: dict[Site2D, list[float]] = {}
                for site, fp, fm in f1 + f2:
                    if site in merged:
                        merged[site][0] *= fp
                        merged[site][1] *= fm
                    else:
                        merged[site] = [fp, fm]
                fac = tuple((s, v[0], v[1]) for s, v in sorted(merged.items()))
                out.append((c1 * c2, fac))
        return Observable(tuple(out))

    __rmul__ = __mul__

    def __add__(self, other: "Observable") -> "Observable":
        return Observable(self.terms + other.terms)

    def evaluate(self, spins: Mapping[Site2D, int]) -> float:
        total = 0.0
        for c, fac in self.terms:
            v = c
            for site, fp, fm in fac:
                v *= fp if spins[site] == PLUS else fm
            total += v
        return total

    def evaluate_array(self, sites: list[Site2D], samples: np.ndarray) -> np.ndarray:
        """Vectorised evaluation; ``samples[:, t]`` holds the spin at ``sites[t]``."""
        col = {s: t for t, s in enumerate(sites)}
        total = np.zeros(len(samples))
        for c, fac in self.terms:
            v = np.full(len(samples), c, dtype=float)
            for site, fp, fm in fac:
                v *= np.where(samples[:, col[site]] > 0, fp, fm)
            total += v
        return total

    def is_positive(self) -> bool:
        return all(c > 0 and all(fp > 0 and fm > 0 for _, fp, fm in fac) for c, fac in self.terms)


# ---------------------------------------------------------------------------
# block enumeration


def _popcount(a: np.ndarray) -> np.ndarray:
    return np.bitwise_count(a).astype(np.int64)


@functools.lru_cache(maxsize=32)
def _enumerate_block(width: int, rows: int, far: str, fixed: tuple[tuple[int, int, int], ...]):
    """Enumerate all configurations of a ``rows x width`` block.

    Row 0 touches the layer, row ``rows - 1`` touches the far boundary.  The
    two side columns touch the boundary as well.  ``fixed`` lists
    ``(row, col, bit)`` constraints.  Returns ``(adjacent_row, unsat, minus,
    configs)`` as arrays over all free assignments; ``configs`` packs row
    ``r`` in bits ``r*width .. r*width + width - 1``.
    """
    nbits = width * rows
    if nbits > 62:
        raise EnumerationTooLarge("enumeration too large: block does not fit a 62-bit word")
    fixed_pos = {r * width + c: b for r, c, b in fixed}
    free_pos = [p for p in range(nbits) if p not in fixed_pos]
    base = sum(1 << p for p, b in fixed_pos.items() if b)
    nfree = len(free_pos)
    idx = np.arange(1 << nfree, dtype=np.int64)
    configs = np.full(idx.shape, base, dtype=np.int64)
    for t, p in enumerate(free_pos):
        configs |= ((idx >> t) & 1) << p
    del idx
    mask = (1 << width) - 1
    unsat = np.zeros(configs.shape, dtype=np.int64)
    prev = None
    for r in range(rows):
        row = (configs >> (r * width)) & mask
        unsat += _popcount((row ^ (row >> 1)) & (mask >> 1))
        if prev is not None:
            unsat += _popcount(row ^ prev)
        if far == "plus":
            unsat += (row & 1) + ((row >> (width - 1)) & 1)
        elif far == "minus":
            unsat += 2 - (row & 1) - ((row >> (width - 1)) & 1)
        prev = row
    if far == "plus":
        unsat += _popcount(prev)
    elif far == "minus":
        unsat += width - _popcount(prev)
    minus = _popcount(configs)
    adjacent = configs & mask
    return adjacent, unsat, minus, configs


@functools.lru_cache(maxsize=64)
def _block_histogram(width: int, rows: int, far: str, fixed: tuple[tuple[int, int, int], ...]):
    adjacent, unsat, minus, _ = _enumerate_block(width, rows, far, fixed)
    nu, nm = int(unsat.max()) + 1, int(minus.max()) + 1
    key = (adjacent * nu + unsat) * nm + minus
    hist = np.bincount(key, minlength=(1 << width) * nu * nm).reshape(1 << width, nu, nm)
    return hist


class _Block:
    """One side of the layer.  ``rows == 0`` means the layer touches the boundary."""

    def __init__(self, width: int, rows: int, far: str, fixed: dict[tuple[int, int], int], cap: int):
        self.width, self.rows, self.far = width, rows, far
        self.fixed = tuple(sorted((r, c, 1 if s == MINUS else 0) for (r, c), s in fixed.items()))
        self.n_sites = width * rows
        self.n_free = self.n_sites - len(self.fixed)
        self._log_adjacent: dict = {}
        if self.n_free > cap:
            raise EnumerationTooLarge(
                f"enumeration too large: {self.n_free} free spins in a block (cap {cap})"
            )

    def log_adjacent_weights(self, beta: float, h: float) -> np.ndarray:
        """``log A(s)``: summed block weight per pattern ``s`` of the row touching the layer."""
        if self.rows == 0:
            return np.array([])
        key = (beta, h)
        if key not in self._log_adjacent:
            self._log_adjacent[key] = self._compute_log_adjacent(beta, h)
        return self._log_adjacent[key]

    def _compute_log_adjacent(self, beta: float, h: float) -> np.ndarray:
        hist = _block_histogram(self.width, self.rows, self.far, self.fixed).astype(float)
        u = np.arange(hist.shape[1])
        m = np.arange(hist.shape[2])
        logw = (-2.0 * beta * u)[:, None] + (h * (self.n_sites - 2 * m))[None, :]
        with np.errstate(divide="ignore"):
            return logsumexp(np.log(hist) + logw[None, :, :], axis=(1, 2))

    def adjacent_weights_with(self, beta: float, h: float, factors: dict[tuple[int, int], tuple[float, float]]):
        """Linear-scale ``A_f(s)`` and the log shift applied, for a product of site factors."""
        if all(r == 0 for r, _ in factors):
            # factors only see the adjacent row: reweight the cached per-pattern sums
            logA = self.log_adjacent_weights(beta, h)
            shift = float(logA.max())
            w = np.exp(logA - shift)
            s = np.arange(1 << self.width)
            for (_, c), (fp, fm) in factors.items():
                w = w * np.where((s >> c) & 1 == 1, fm, fp)
            return w, shift
        adjacent, unsat, minus, configs = _enumerate_block(self.width, self.rows, self.far, self.fixed)
        logw = -2.0 * beta * unsat + h * (self.n_sites - 2 * minus)
        shift = float(logw.max())
        w = np.exp(logw - shift)
        for (r, c), (fp, fm) in factors.items():
            bit = (configs >> (r * self.width + c)) & 1
            w = w * np.where(bit == 1, fm, fp)
        return np.bincount(adjacent, weights=w, minlength=1 << self.width), shift

    def coupling_unsat(self, layer_patterns: np.ndarray) -> np.ndarray:
        """Unsatisfied bonds between the layer and the boundary when there are no rows."""
        if self.far == "plus":
            return _popcount(layer_patterns)
        if self.far == "minus":
            return self.width - _popcount(layer_patterns)
        return np.zeros_like(layer_patterns)


class ExactEngine(KernelEngine):
    """Exact evaluator for one box geometry at fixed ``beta``, ``h`` and boundary.

    The frozen layer of a :class:`BoxProblem` is ignored here: layer spins are
    summed or fixed per call.  Off-layer frozen sites (``frozen_extra``) are
    part of the geometry.
    """

    engine_tag = "exact"

    def __init__(self, problem: BoxProblem, cap: int = DEFAULT_CAP):
        self.problem = problem
        self.beta, self.h = float(problem.beta), float(problem.h)
        self.cap = cap
        (self.x0, self.x1), (y0, y1) = problem.xs, problem.ys
        self.width = self.x1 - self.x0 + 1
        self.n = problem.n
        if self.width > cap:
            raise EnumerationTooLarge(f"enumeration too large: {self.width} layer sites (cap {cap})")
        up_fixed, dn_fixed = {}, {}
        self.extra_layer_fixed = {}
        for x, y, s in problem.frozen_extra:
            c = x - self.x0
            if y > 0:
                up_fixed[(y - 1, c)] = s
            elif y < 0:
                dn_fixed[(-y - 1, c)] = s
            else:
                self.extra_layer_fixed[x] = s
        self.up = _Block(self.width, y1, problem.boundary, up_fixed, cap)
        self.dn = _Block(self.width, -y0, problem.boundary, dn_fixed, cap)
        self._layer_cache: np.ndarray | None = None

    # -- layer weights -------------------------------------------------------
    @property
    def layer_sites(self) -> tuple[int, ...]:
        return tuple(range(self.x0, self.x1 + 1))

    def _patterns(self) -> np.ndarray:
        return np.arange(1 << self.width, dtype=np.int64)

    def _layer_own(self, pats: np.ndarray) -> np.ndarray:
        w = self.width
        mask = (1 << w) - 1
        unsat = _popcount((pats ^ (pats >> 1)) & (mask >> 1))
        b = self.problem.boundary
        ends = (pats & 1) + ((pats >> (w - 1)) & 1)
        if b == "plus":
            unsat = unsat + ends
        elif b == "minus":
            unsat = unsat + 2 - ends
        minus = _popcount(pats)
        return -2.0 * self.beta * unsat + self.h * (w - 2 * minus)

    def _coupled(self, block: _Block, pats: np.ndarray, adjacent_lin=None, shift=0.0) -> np.ndarray:
        """``log B(eta)`` for a block, optionally with a linear-scale weighted ``A_f``."""
        if block.rows == 0:
            base = -2.0 * self.beta * block.coupling_unsat(pats)
            if adjacent_lin is None:
                return base
            return base, np.ones(len(pats))
        s = self._patterns()
        cost = -2.0 * self.beta * _popcount(s[:, None] ^ pats[None, :])
        if adjacent_lin is None:
            logA = block.log_adjacent_weights(self.beta, self.h)
            with np.errstate(invalid="ignore"):
                return logsumexp(logA[:, None] + cost, axis=0)
        return shift, adjacent_lin @ np.exp(cost)

    def layer_log_weights(self) -> np.ndarray:
        """``log W(eta)`` for every layer pattern ``eta`` (indexed by its bit pattern)."""
        if self._layer_cache is None:
            pats = self._patterns()
            lw = self._layer_own(pats) + self._coupled(self.up, pats) + self._coupled(self.dn, pats)
            for x, s in self.extra_layer_fixed.items():
                bit = (pats >> (x - self.x0)) & 1
                lw = np.where(bit == (1 if s == MINUS else 0), lw, -np.inf)
            self._layer_cache = lw
        return self._layer_cache

    def pattern(self, spins: Mapping[int, int] | LayerConfig) -> int:
        get = spins.spin if isinstance(spins, LayerConfig) else spins.__getitem__
        p = 0
        for c, i in enumerate(self.layer_sites):
            if get(i) == MINUS:
                p |= 1 << c
        return p

    def _compatible(self, fixed: Mapping[int, int]) -> np.ndarray:
        pats = self._patterns()
        ok = np.ones(len(pats), dtype=bool)
        for i, s in fixed.items():
            if not self.x0 <= i <= self.x1:
                raise ValueError(f"layer site {i} outside the box")
            bit = (pats >> (i - self.x0)) & 1
            ok &= bit == (1 if s == MINUS else 0)
        return ok

    def log_weight(self, layer: LayerConfig | Mapping[int, int], free: Iterable[int] = ()) -> float:
        """``log`` of the total weight with the layer fixed to ``layer``, except ``free`` sites summed."""
        free = set(free)
        get = layer.spin if isinstance(layer, LayerConfig) else layer.__getitem__
        fixed = {i: get(i) for i in self.layer_sites if i not in free}
        lw = self.layer_log_weights()[self._compatible(fixed)]
        return float(logsumexp(lw))

    # -- kernel engine contract ---------------------------------------------
    def log_weight_ratio(self, a: LayerConfig, b: LayerConfig, free: Iterable[int] = ()) -> Estimate:
        free = tuple(free)
        return Estimate.exact(self.log_weight(a, free) - self.log_weight(b, free))

    def log_kernel(self, V: Iterable[int], sigma: Mapping[int, int] | LayerConfig, omega: LayerConfig,
                   free: Iterable[int] = ()) -> Estimate:
        """``log gamma_V(sigma_V | omega)``; sites in ``free`` are summed out (decimation)."""
        V = sorted(set(V))
        free = set(free)
        get = sigma.spin if isinstance(sigma, LayerConfig) else sigma.__getitem__
        outside = {i: omega.spin(i) for i in self.layer_sites if i not in V and i not in free}
        inside = {i: get(i) for i in V}
        lw = self.layer_log_weights()
        num = logsumexp(lw[self._compatible({**outside, **inside})])
        den = logsumexp(lw[self._compatible(outside)])
        return Estimate.exact(float(num - den))

    def layer_expectation(self, layer: LayerConfig, obs: Observable, free: Iterable[int] = ()) -> Estimate:
        free = set(free)
        fixed = {i: layer.spin(i) for i in self.layer_sites if i not in free}
        return Estimate.exact(self.expectation(obs, fixed))

    def layer_log_ratio(self, layer: LayerConfig, f: Observable, g: Observable, free: Iterable[int] = ()) -> Estimate:
        free = tuple(free)
        efg = self.layer_expectation(layer, f * g, free).value
        ef = self.layer_expectation(layer, f, free).value
        eg = self.layer_expectation(layer, g, free).value
        return Estimate.exact(math.log(efg) - math.log(ef) - math.log(eg))

    def flip_difference(self, a: LayerConfig, b: LayerConfig, k: int, free: Iterable[int] = ()) -> Estimate:
        free = tuple(free)
        if a.spin(k) != PLUS or b.spin(k) != PLUS:
            raise ValueError("flip site must carry a plus spin in both configurations")
        da = self.log_weight(a.with_spins({k: MINUS}), free) - self.log_weight(a, free)
        db = self.log_weight(b.with_spins({k: MINUS}), free) - self.log_weight(b, free)
        return Estimate.exact(da - db)

    # -- expectations ----------------------------------------------------------
    def _split(self, obs_factors):
        layer, up, dn = {}, {}, {}
        for site, fp, fm in obs_factors:
            if not self.problem.contains(site):
                raise ValueError(f"observable support {site} outside the box")
            c = site.x - self.x0
            if site.y == 0:
                layer[c] = (fp, fm)
            elif site.y > 0:
                up[(site.y - 1, c)] = (fp, fm)
            else:
                dn[(-site.y - 1, c)] = (fp, fm)
        return layer, up, dn

    def _term_sum(self, factors, layer_ok: np.ndarray) -> tuple[float, float]:
        """Sum over configurations of a product term; returned as ``(sign*mantissa, log_scale)``."""
        layer_f, up_f, dn_f = self._split(factors)
        pats = self._patterns()
        for x, s in self.extra_layer_fixed.items():
            bit = (pats >> (x - self.x0)) & 1
            layer_ok = layer_ok & (bit == (1 if s == MINUS else 0))
        # only the allowed layer patterns enter the sum
        pats = pats[layer_ok]
        logs = self._layer_own(pats)
        lin = np.ones(len(pats))
        for blk, fac in ((self.up, up_f), (self.dn, dn_f)):
            if blk.rows == 0 or not fac:
                logs = logs + self._coupled(blk, pats)
                continue
            A, shift = blk.adjacent_weights_with(self.beta, self.h, fac)
            sh, B = self._coupled(blk, pats, A, shift)
            logs = logs + sh
            lin = lin * B
        for c, (fp, fm) in layer_f.items():
            bit = (pats >> c) & 1
            lin = lin * np.where(bit == 1, fm, fp)
        top = logs[np.isfinite(logs)].max()
        total = float(np.sum(lin * np.exp(logs - top)))
        return total, float(top)

    def expectation(self, obs: Observable, layer_fixed: Mapping[int, int] | None = None) -> float:
        ok = self._compatible(layer_fixed or {})
        z, zs = self._term_sum((), ok)
        total = 0.0
        for c, fac in obs.terms:
            t, ts = self._term_sum(fac, ok)
            total += c * t * math.exp(ts - zs)
        return total / z

    def log_partition(self, layer_fixed: Mapping[int, int] | None = None) -> float:
        ok = self._compatible(layer_fixed or {})
        lw = self.layer_log_weights()[ok]
        return float(logsumexp(lw))


@functools.lru_cache(maxsize=64)
def _engine_for(problem_geometry: BoxProblem, cap: int) -> ExactEngine:
    return ExactEngine(problem_geometry, cap)


def engine_for(p: BoxProblem, cap: int = DEFAULT_CAP) -> ExactEngine:
    """Cached engine for the geometry of ``p`` (its frozen layer is not part of the key)."""
    geom = p.replace(frozen_layer=None, frozen_sites=None)
    eng = _engine_for(geom, cap)
    n_free_layer = eng.width - len(p.frozen_layer_spins())
    if n_free_layer > cap:
        raise EnumerationTooLarge(f"enumeration too large: {n_free_layer} free layer spins (cap {cap})")
    return eng


# ---------------------------------------------------------------------------
# module-level operations


def bond_count(p: BoxProblem) -> int:
    """Nearest-neighbour bonds of the box, including those to the walls unless the boundary is free."""
    w, hgt = p.width, p.ys[1] - p.ys[0] + 1
    inner = w * (hgt - 1) + hgt * (w - 1)
    return inner + (0 if p.boundary == "free" else 2 * (w + hgt))


def partition_function(p: BoxProblem, cap: int = DEFAULT_CAP) -> float:
    """``log Z`` with ``Z = sum exp(beta sum_<xy> s_x s_y + h sum_x s_x)``, summing all free spins.

    The engine works with ``beta (s s' - 1)`` per bond; the constant
    ``beta * bond_count`` is added back here.
    """
    return engine_for(p, cap).log_partition(p.frozen_layer_spins()) + p.beta * bond_count(p)


def expectation(p: BoxProblem, f: Observable, cap: int = DEFAULT_CAP) -> Estimate:
    eng = engine_for(p, cap)
    for site in f.support:
        if not p.contains(site):
            raise ValueError(f"observable support {site} outside the box")
    return Estimate.exact(eng.expectation(f, p.frozen_layer_spins()))


def covariance(p: BoxProblem, f: Observable, g: Observable, cap: int = DEFAULT_CAP) -> Estimate:
    efg = expectation(p, f * g, cap).value
    ef = expectation(p, f, cap).value
    eg = expectation(p, g, cap).value
    return Estimate.exact(efg - ef * eg)


def layer_kernel(
    V: LayerInterval | Iterable[int],
    sigma_V: Mapping[int, int] | LayerConfig | Iterable[int],
    omega: LayerConfig,
    n: int,
    beta: float,
    h: float = 0.0,
    cap: int = DEFAULT_CAP,
) -> float:
    """Finite-box conditional ``mu_n(Y_V = sigma_V | Y = omega off V)`` under plus boundary."""
    sites = V.sites if isinstance(V, LayerInterval) else tuple(sorted(V))
    if not isinstance(sigma_V, (Mapping, LayerConfig)):
        sigma_V = dict(zip(sites, sigma_V))
    eng = engine_for(BoxProblem(n, beta, h, "plus"), cap)
    for i in sites:
        if i not in eng.layer_sites:
            raise ValueError(f"site {i} of V is outside the box layer")
    return eng.kernel(sites, sigma_V, omega)


def heat_bath_probability(beta: float, h: float, sigma: int, neighbor_sum: int) -> float:
    return 1.0 / (1.0 + math.exp(-2.0 * beta * sigma * neighbor_sum - 2.0 * h * sigma))


def dlr_check(p: BoxProblem, x: Site2D, cap: int = DEFAULT_CAP) -> float:
    """Largest deviation of the single-site conditional from the heat-bath formula.

    Runs over every neighbour configuration of positive probability.  Sites
    outside the box contribute their boundary spin (nothing for free b.c.).
    """
    frozen = p.frozen_spins()
    if not p.contains(x) or x in frozen:
        raise ValueError("x must be a free site inside the box")
    eng = engine_for(p, cap)
    fixed_layer = p.frozen_layer_spins()
    outside = {"plus": PLUS, "minus": MINUS, "free": 0}[p.boundary]
    inner, const = [], 0
    for y in x.neighbors():
        if not p.contains(y):
            const += outside
        elif y in frozen:
            const += frozen[y]
        else:
            inner.append(y)
    worst = 0.0
    for config in product((PLUS, MINUS), repeat=len(inner)):
        cond = Observable.indicator_config(dict(zip(inner, config)))
        den = eng.expectation(cond, fixed_layer)
        if den <= 0:
            continue
        num = eng.expectation(cond * Observable.indicator(x, PLUS), fixed_layer)
        field = const + sum(config)
        worst = max(worst, abs(num / den - heat_bath_probability(p.beta, p.h, PLUS, field)))
    return worst


def plus_engine(n: int, beta: float, h: float = 0.0, cap: int = DEFAULT_CAP) -> ExactEngine:
    """Cached exact engine for the plus-boundary box ``{-n..n}^2``."""
    return engine_for(BoxProblem(n, beta, h, "plus"), cap)
