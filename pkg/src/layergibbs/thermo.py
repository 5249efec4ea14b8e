"""Thermodynamic functions of the layer measure and the variational principle.

Hamiltonians, partition functions, pressure, energy density, entropy and
relative entropy, the variational gap, and a few diagnostics of the
low-temperature layer (a large-deviation side condition, Bernoulli
domination and a quasilocality probe).

All infinite-volume limits are replaced by series over ``V_n = [-n, n]``.
"""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from itertools import product
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np
from scipy.special import logsumexp

from .exact import ExactEngine, Observable
from .lattice import MINUS, PLUS, LayerConfig, LayerInterval, Site2D, intervals_within
from .mc import MCEngine, chain_blocks, run_coupled, task_key
from .potentials import PotentialTable
from .stats import Estimate, block_means

MAX_MARGINAL_WIDTH = 20


def _interval(V) -> LayerInterval:
    return V if isinstance(V, LayerInterval) else LayerInterval(*V)


def as_potential(obj) -> Callable[[LayerInterval, LayerConfig], Estimate]:
    """A callable ``U(A, xi)`` from a potential callable or a :class:`PotentialTable`.

    A table only knows the configuration it was built for; asking it about a
    configuration that differs from ``table.xi`` on ``A`` is an error.
    """
    if not isinstance(obj, PotentialTable):
        return obj
    table = obj

    def U(A, xi):
        A = _interval(A)
        if xi.spin(A.j) == PLUS or xi.spin(A.k) == PLUS:
            return Estimate.exact(0.0)
        if any(xi.spin(i) != table.xi.spin(i) for i in A):
            raise ValueError(f"table for {table.xi} does not cover {A} under {xi}")
        return table[A]

    return U


# ---------------------------------------------------------------------------
# empirical marginals, entropy, relative entropy


def _encode(rows: np.ndarray) -> np.ndarray:
    """Bit codes of +-1 rows (bit c set when column c is minus)."""
    rows = np.asarray(rows)
    weights = (1 << np.arange(rows.shape[-1], dtype=np.int64))
    return ((rows == MINUS).astype(np.int64) * weights).sum(axis=-1)


def _decode(codes: np.ndarray, width: int) -> np.ndarray:
    bits = (np.asarray(codes, dtype=np.int64)[:, None] >> np.arange(width)) & 1
    return np.where(bits == 1, MINUS, PLUS).astype(np.int8)


@dataclass
class EmpiricalMarginal:
    """Distribution of the spins on ``V``; ``probabilities`` maps spin tuples to mass.

    ``n_samples = 0`` marks an exact distribution (no bias correction,
    no sampling error).
    """

    V: LayerInterval
    probabilities: dict
    n_samples: int = 0
    block_codes: list | None = field(default=None, repr=False)

    def __post_init__(self):
        self.V = _interval(self.V)
        if len(self.V) > MAX_MARGINAL_WIDTH:
            raise ValueError(f"marginals are limited to |V| <= {MAX_MARGINAL_WIDTH}")
        total = math.fsum(self.probabilities.values())
        if abs(total - 1.0) > 1e-12:
            raise ValueError(f"probabilities sum to {total}, not 1")
        if any(p < 0 for p in self.probabilities.values()):
            raise ValueError("negative probability")

    @classmethod
    def from_samples(cls, rows, V, n_blocks: int = 32) -> "EmpiricalMarginal":
        """Counts of the rows (``(samples, |V|)`` or ``(chains, samples, |V|)``)."""
        rows = np.asarray(rows)
        V = _interval(V)
        if rows.shape[-1] != len(V):
            raise ValueError("rows must have one column per site of V")
        codes = _encode(rows)
        flat = codes.reshape(-1)
        uniq, counts = np.unique(flat, return_counts=True)
        cfgs = _decode(uniq, len(V))
        n = int(flat.size)
        probs = {tuple(int(s) for s in c): cnt / n for c, cnt in zip(cfgs, counts)}
        # exact normalisation after float division
        key0 = next(iter(probs))
        probs[key0] += 1.0 - math.fsum(probs.values())
        chains = codes if codes.ndim == 2 else codes[None, :]
        per = max(1, n_blocks // chains.shape[0])
        blocks = []
        for c in chains:
            size = len(c) // per
            blocks.extend(c[b * size:(b + 1) * size] for b in range(per) if size)
        return cls(V, probs, n, blocks)

    @classmethod
    def from_distribution(cls, V, probs) -> "EmpiricalMarginal":
        """Exact marginal from a mapping or from an array indexed by bit code."""
        V = _interval(V)
        if isinstance(probs, Mapping):
            d = {tuple(int(s) for s in k): float(v) for k, v in probs.items() if v > 0}
        else:
            p = np.asarray(probs, dtype=float)
            cfgs = _decode(np.arange(len(p)), len(V))
            d = {tuple(int(s) for s in c): float(x) for c, x in zip(cfgs, p) if x > 0}
        return cls(V, d, 0)

    @property
    def is_exact(self) -> bool:
        return self.n_samples == 0

    def as_array(self) -> np.ndarray:
        """Probabilities indexed by bit code (bit ``c`` set when site ``V.j + c`` is minus)."""
        out = np.zeros(1 << len(self.V))
        for cfg, p in self.probabilities.items():
            out[_encode(np.array(cfg))] = p
        return out


def _plugin_entropy(counts: np.ndarray, n: int, miller_madow: bool) -> float:
    p = counts[counts > 0] / n
    s = -float(np.sum(p * np.log(p)))
    if miller_madow:
        s += (len(p) - 1) / (2.0 * n)
    return s


def entropy_empirical(m: EmpiricalMarginal, miller_madow: bool = True) -> Estimate:
    """Shannon entropy of ``m`` (Miller-Madow corrected for sampled marginals).

    The value is clipped to ``[0, |V| log 2]``.  Sampled marginals carry a
    delete-one-block jackknife error.
    """
    cap = len(m.V) * math.log(2)
    if m.is_exact:
        p = np.array([x for x in m.probabilities.values() if x > 0])
        return Estimate.exact(float(min(cap, max(0.0, -np.sum(p * np.log(p))))))
    n = m.n_samples
    counts = np.array([p * n for p in m.probabilities.values()])
    counts = np.rint(counts)
    value = _plugin_entropy(counts, n, miller_madow)
    err = 0.0
    if m.block_codes and len(m.block_codes) > 1:
        allc = np.concatenate(m.block_codes)
        loo = []
        for b in range(len(m.block_codes)):
            rest = np.concatenate([c for i, c in enumerate(m.block_codes) if i != b]) if len(m.block_codes) > 1 else allc
            _, cnt = np.unique(rest, return_counts=True)
            loo.append(_plugin_entropy(cnt, len(rest), miller_madow))
        loo = np.array(loo)
        nb = len(loo)
        err = math.sqrt((nb - 1) / nb * np.sum((loo - loo.mean()) ** 2))
    return Estimate(float(min(cap, max(0.0, value))), err, n, "mc", None)


def relative_entropy(m: EmpiricalMarginal, reference) -> float:
    """``sum m log(m / reference)`` with ``0 log 0 = 0`` and ``+inf`` off the reference support."""
    ref = reference.probabilities if isinstance(reference, EmpiricalMarginal) else reference
    total = []
    for cfg, p in m.probabilities.items():
        if p == 0:
            continue
        q = ref.get(cfg, 0.0)
        if q <= 0:
            return math.inf
        total.append(p * math.log(p / q))
    return max(0.0, math.fsum(total))


def exact_layer_marginal(engine: ExactEngine, V) -> EmpiricalMarginal:
    """Marginal of the box layer measure on ``V`` (exact)."""
    V = _interval(V)
    lw = engine.layer_log_weights()
    p = np.exp(lw - logsumexp(lw))
    pats = np.arange(len(lw))
    off = V.j - engine.x0
    if off < 0 or V.k > engine.x1:
        raise ValueError("V outside the box layer")
    codes = (pats >> off) & ((1 << len(V)) - 1)
    marg = np.bincount(codes, weights=p, minlength=1 << len(V))
    marg /= marg.sum()
    return EmpiricalMarginal.from_distribution(V, marg)


def flipped(m: EmpiricalMarginal) -> EmpiricalMarginal:
    """Global spin flip (the minus phase from the plus phase at ``h = 0``)."""
    probs = {tuple(-s for s in c): p for c, p in m.probabilities.items()}
    blocks = None
    if m.block_codes is not None:
        full = (1 << len(m.V)) - 1
        blocks = [full ^ c for c in m.block_codes]
    return EmpiricalMarginal(m.V, probs, m.n_samples, blocks)


# ---------------------------------------------------------------------------
# layer weights relative to the all-plus layer


class _JK:
    """Values with delete-one-block replicates; linear combinations keep both."""

    def __init__(self, full: np.ndarray, loo: np.ndarray | None):
        self.full, self.loo = np.asarray(full, dtype=float), loo

    def combine(self, coef: np.ndarray, n_samples=0, seed=None) -> Estimate:
        coef = np.asarray(coef, dtype=float)
        val = float(coef @ self.full)
        if self.loo is None:
            return Estimate.exact(val)
        rep = self.loo @ coef
        nb = len(rep)
        mean = rep.mean()
        err = math.sqrt((nb - 1) / nb * np.sum((rep - mean) ** 2))
        return Estimate(float(nb * val - (nb - 1) * mean), err, n_samples, "mc", seed)


class RelativeLayerWeights:
    """``theta(sigma) = log W(sigma^V) - log W(+)`` for patterns ``sigma`` on ``V``.

    Exact engines read the enumerated weights.  For the Monte Carlo engine a
    single run with the whole box layer frozen to plus serves every pattern:
    turning the sites ``M`` of the layer to minus changes the energy off the
    layer by ``-2 beta sum_{i in M} (X(i, 1) + X(i, -1))``, hence

        W(sigma) / W(+) = exp(in-layer terms) * E_+[prod_{i in M} g_i],
        g_i = exp(-2 beta (X(i, 1) + X(i, -1))).

    The sample products are reweighting factors; they are accurate for
    patterns with few minus spins, which carry the mass of the plus phase.
    """

    chunk = 256

    def __init__(self, engine, V, tag: str = "weights"):
        self.engine = engine
        self.V = _interval(V)
        sites = set(engine.layer_sites)
        if not set(self.V.sites) <= sites:
            raise ValueError("V must lie inside the box layer")
        self.beta, self.h = engine.beta, engine.h
        self._cache: dict = {}
        if isinstance(engine, ExactEngine):
            self._lw = engine.layer_log_weights()
            self._loo_n = 0
            self.n_samples = 0
            self.seed = None
        elif isinstance(engine, MCEngine):
            cfg = engine.config
            frozen = {Site2D(i, 0): PLUS for i in engine.layer_sites}
            rec_sites = [Site2D(i, 1) for i in self.V] + [Site2D(i, -1) for i in self.V]
            key = task_key(tag, engine.describe(), self.V.j, self.V.k)
            rec, _ = run_coupled(engine.base, [frozen], cfg, rec_sites, (), key)
            rec = rec[:, 0].astype(np.float64)
            w = len(self.V)
            self._logg = -2.0 * self.beta * (rec[..., :w] + rec[..., w:])  # (chains, samples, w)
            self.n_samples = int(rec.shape[0] * rec.shape[1])
            self.seed = cfg.seed
            self._cfg = cfg
        else:
            raise TypeError("engine must be an ExactEngine or an MCEngine")

    @property
    def is_exact(self) -> bool:
        return isinstance(self.engine, ExactEngine)

    # -- in-layer part ------------------------------------------------------
    def _own(self, sig: np.ndarray) -> np.ndarray:
        pad = np.ones((len(sig), 1), dtype=np.int64)
        s = np.concatenate([pad, sig.astype(np.int64), pad], axis=1)
        bonds = (s[:, :-1] * s[:, 1:] - 1).sum(axis=1)
        return self.beta * bonds - 2.0 * self.h * (sig == MINUS).sum(axis=1)

    def _compute(self, sig: np.ndarray):
        """Full values and delete-one-block replicates for rows of ``sig``."""
        if self.is_exact:
            # enumerated weights already contain the in-layer terms
            off = self.V.j - self.engine.x0
            pats = _encode(sig) << off
            return self._lw[pats] - self._lw[0], None
        own = self._own(sig)
        minus = (sig == MINUS).astype(np.float64)
        fulls, loos = [], []
        for a in range(0, len(sig), self.chunk):
            M = minus[a:a + self.chunk]
            with np.errstate(over="ignore"):
                vals = np.exp(self._logg @ M.T)  # (chains, samples, m)
            blocks = chain_blocks(vals, self._cfg)  # (nb, m)
            nb = len(blocks)
            tot = blocks.sum(axis=0)
            fulls.append(np.log(tot / nb))
            loos.append(np.log((tot[None, :] - blocks) / (nb - 1)))
        full = np.concatenate(fulls) + own
        loo = np.concatenate(loos, axis=1) + own[None, :]
        return full, loo

    def theta(self, sigmas) -> _JK:
        """Log ratios for the rows of ``sigmas`` (``(m, |V|)`` spins on ``V``)."""
        sig = np.atleast_2d(np.asarray(sigmas, dtype=np.int8))
        if sig.shape[1] != len(self.V):
            raise ValueError("patterns must have one column per site of V")
        codes = _encode(sig)
        missing = sorted({int(c) for c in codes if int(c) not in self._cache})
        if missing:
            full, loo = self._compute(_decode(np.array(missing), len(self.V)))
            for t, c in enumerate(missing):
                self._cache[c] = (full[t], None if loo is None else loo[:, t])
        full = np.array([self._cache[int(c)][0] for c in codes])
        if self.is_exact:
            return _JK(full, None)
        loo = np.stack([self._cache[int(c)][1] for c in codes], axis=1)
        return _JK(full, loo)

    def log_ratio(self, sigma) -> Estimate:
        row = self._row(sigma)
        return self.theta(row[None, :]).combine([1.0], self.n_samples, self.seed)

    def _row(self, sigma) -> np.ndarray:
        if isinstance(sigma, LayerConfig):
            return sigma.spins(self.V.sites).astype(np.int8)
        return np.asarray(sigma, dtype=np.int8)

    def hamiltonian(self, sigma) -> Estimate:
        """``H_V(sigma) = log W(+) - log W(sigma^V)``."""
        return -self.log_ratio(sigma)

    def _log_partition_jk(self) -> _JK:
        w = len(self.V)
        if self.is_exact:
            if w > MAX_MARGINAL_WIDTH:
                raise ValueError("V too wide for exhaustive summation")
            th = self.theta(_decode(np.arange(1 << w), w)).full
            return _JK(np.array([logsumexp(th)]), None)
        # transfer over the sites of V, one sample at a time (vectorised)
        e2 = math.exp(-2.0 * self.beta)
        fh = math.exp(-2.0 * self.h)
        shape = self._logg.shape[:2]
        ap, am = np.ones(shape), np.zeros(shape)
        for c in range(w):
            g = np.exp(self._logg[..., c])
            ap, am = ap + am * e2, (ap * e2 + am) * fh * g
        T = ap + am * e2
        blocks = chain_blocks(T, self._cfg)
        nb = len(blocks)
        tot = blocks.sum()
        return _JK(np.array([math.log(tot / nb)]), np.log((tot - blocks) / (nb - 1))[:, None])

    def log_partition(self) -> Estimate:
        """``log Z^f_V = log sum_sigma W(sigma^V) / W(+) = -log gamma_V(+|+)``."""
        return self._log_partition_jk().combine([1.0], self.n_samples, self.seed)


class WeightPotential:
    """Telescoping potential read off a :class:`RelativeLayerWeights` object.

    ``U([j,k], xi) = theta(eta^k) - theta(eta) - theta(eta^{jk}) + theta(eta^j)``
    with ``eta`` the spins of ``xi`` strictly inside ``[j, k]`` and plus
    elsewhere; ``U({k}, xi) = -theta(minus at k)``.
    """

    def __init__(self, weights: RelativeLayerWeights):
        self.weights = weights
        self.V = weights.V

    def _configs(self, A: LayerInterval, xi: LayerConfig):
        j, k = A.j, A.k
        base = np.ones(len(self.V), dtype=np.int8)
        for i in range(j + 1, k):
            base[i - self.V.j] = xi.spin(i)
        if j == k:
            r = base.copy()
            r[k - self.V.j] = MINUS
            return [r], [-1.0]
        rows = []
        for sj, sk in ((PLUS, MINUS), (PLUS, PLUS), (MINUS, MINUS), (MINUS, PLUS)):
            r = base.copy()
            r[j - self.V.j], r[k - self.V.j] = sj, sk
            rows.append(r)
        return rows, [1.0, -1.0, -1.0, 1.0]

    def terms(self, A, xi) -> list[tuple[np.ndarray, float]]:
        A = _interval(A)
        if xi.spin(A.j) == PLUS or xi.spin(A.k) == PLUS:
            return []
        if A.j < self.V.j or A.k > self.V.k:
            raise ValueError(f"interval {A} outside the weight window {self.V}")
        rows, coef = self._configs(A, xi)
        return list(zip(rows, coef))

    def __call__(self, A, xi) -> Estimate:
        t = self.terms(A, xi)
        if not t:
            return Estimate.exact(0.0)
        rows, coef = zip(*t)
        return self.weights.theta(np.stack(rows)).combine(coef, self.weights.n_samples, self.weights.seed)

    def combination(self, terms: Iterable[tuple[np.ndarray, float]]) -> Estimate:
        """Estimate of ``sum coef * theta(row)`` with a joint jackknife error."""
        acc: dict = {}
        for row, c in terms:
            code = int(_encode(row[None, :])[0])
            acc[code] = acc.get(code, 0.0) + c
        if not acc:
            return Estimate.exact(0.0)
        codes = np.array(sorted(acc))
        jk = self.weights.theta(_decode(codes, len(self.V)))
        return jk.combine([acc[int(c)] for c in codes], self.weights.n_samples, self.weights.seed)


# ---------------------------------------------------------------------------
# Hamiltonians


def hamiltonian_free_bc(V, xi: LayerConfig, potential) -> Estimate:
    """``H^f_V(xi) = sum_{A subset V} U(A, xi)`` over intervals inside ``V``."""
    V = _interval(V)
    U = as_potential(potential)
    terms = [U(A, xi) for A in intervals_within(V.j, V.k)
             if xi.spin(A.j) == MINUS and xi.spin(A.k) == MINUS]
    return _sum(terms)


def _sum(terms: Sequence[Estimate]) -> Estimate:
    if not terms:
        return Estimate.exact(0.0)
    vals = [t.value for t in terms]
    if all(t.is_exact for t in terms):
        return Estimate.exact(math.fsum(vals))
    err = math.sqrt(math.fsum(t.stderr ** 2 for t in terms))
    n = max(t.n_samples for t in terms)
    seed = next((t.seed for t in terms if t.seed is not None), None)
    return Estimate(math.fsum(vals), err, n, "mc", seed)


def _crossing_tail(cutoff: int, n_sites: int, tail) -> float:
    """``C sum_{L > cutoff} (L + n_sites) exp(-lam L)``: intervals of length ``L`` meeting ``V``."""
    C, lam = tail
    if lam <= 0:
        return math.inf
    q = math.exp(-lam)
    c = cutoff
    geo = q ** (c + 1) / (1 - q)
    lin = q ** (c + 1) * ((c + 1) - c * q) / (1 - q) ** 2
    return C * (lin + n_sites * geo)


def _minus_in(sigma: LayerConfig, lo: int, hi: int) -> list[int]:
    return [i for i in range(lo, hi + 1) if sigma.spin(i) == MINUS]


def _omitted_vanish(lo: int, hi: int, sigma: LayerConfig, cutoff: int, sites_range=None) -> bool:
    """True when every interval longer than ``cutoff`` meeting ``[lo, hi]`` has a plus endpoint.

    Without ``sites_range`` this needs plus fill (minus sites are then
    confined to the window).
    """
    if sites_range is not None:
        minus = _minus_in(sigma, *sites_range)
    elif sigma.fill == PLUS:
        minus = _minus_in(sigma, min(sigma.window.j, lo), max(sigma.window.k, hi))
    else:
        return False
    left = [i for i in minus if i <= hi]
    right = [i for i in minus if i >= lo]
    return not any(k - j > cutoff for j in left for k in right if j <= k)


def hamiltonian_fixed_bc(V, xi: LayerConfig, omega: LayerConfig, potential, cutoff: int,
                         tail: tuple[float, float] | None = None,
                         sites_range: tuple[int, int] | None = None) -> tuple[Estimate, float, bool]:
    """``H^omega_V(xi) = sum_{A meets V} U(A, xi_V omega_{V^c})`` truncated at length ``cutoff``.

    Returns ``(estimate, tail_bound, unbounded)``.  With plus fill the omitted
    intervals vanish when none has two minus endpoints (tail 0); otherwise
    ``tail = (C, lam)`` bounds them and without it the tail is flagged as
    unbounded.  ``sites_range`` confines the intervals (finite box layer).
    """
    V = _interval(V)
    U = as_potential(potential)
    sigma = omega.with_spins({i: xi.spin(i) for i in V})
    lo, hi = (V.j - cutoff, V.k + cutoff)
    if sites_range is not None:
        lo, hi = max(lo, sites_range[0]), min(hi, sites_range[1])
    terms = [U(A, sigma) for A in intervals_within(lo, hi, cutoff)
             if A.j <= V.k and A.k >= V.j and sigma.spin(A.j) == MINUS and sigma.spin(A.k) == MINUS]
    est = _sum(terms)
    if _omitted_vanish(V.j, V.k, sigma, cutoff, sites_range):
        return est, 0.0, False
    if tail is None:
        return est, math.inf, True
    return est, _crossing_tail(cutoff, len(V), tail), False


# ---------------------------------------------------------------------------
# partition functions and pressure


def partition_free(V, potential=None, engine=None, route: str = "table") -> Estimate:
    """``log Z^f_V``.

    ``route='table'`` sums ``exp(-H^f_V)`` over all ``2^|V|`` configurations
    using ``potential``; ``route='kernel'`` uses ``-log gamma_V(+|+)`` from
    ``engine``; ``route='weights'`` uses :class:`RelativeLayerWeights`.
    """
    V = _interval(V)
    if route == "table":
        if potential is None:
            raise ValueError("route 'table' needs a potential")
        if len(V) > MAX_MARGINAL_WIDTH:
            raise ValueError("V too wide for the direct sum")
        H = [hamiltonian_free_bc(V, LayerConfig(V, cfg), potential) for cfg in product((PLUS, MINUS), repeat=len(V))]
        vals = np.array([-e.value for e in H])
        value = float(logsumexp(vals))
        if all(e.is_exact for e in H):
            return Estimate.exact(value)
        p = np.exp(vals - value)
        err = math.sqrt(float(np.sum((p * np.array([e.stderr for e in H])) ** 2)))
        return Estimate(value, err, max(e.n_samples for e in H), "mc", H[0].seed)
    if engine is None:
        raise ValueError(f"route '{route}' needs an engine")
    if route == "kernel":
        plus = LayerConfig.all_plus(V)
        if isinstance(engine, ExactEngine):
            return -engine.log_kernel(V.sites, plus, plus)
        ind = Observable.indicator_config({Site2D(i, 0): PLUS for i in V})
        e = engine.layer_expectation(plus, ind, free=V.sites)
        if e.value <= 0:
            raise FloatingPointError("all-plus configuration never observed on V")
        return Estimate(-math.log(e.value), e.stderr / e.value, e.n_samples, "mc", e.seed)
    if route == "weights":
        return RelativeLayerWeights(engine, V).log_partition()
    raise ValueError("route must be 'table', 'kernel' or 'weights'")


def partition_fixed(V, omega: LayerConfig, potential, cutoff: int, sites_range=None) -> Estimate:
    """``log Z^omega_V = log sum_sigma exp(-H^omega_V(sigma))`` (truncated at ``cutoff``)."""
    V = _interval(V)
    H = [hamiltonian_fixed_bc(V, LayerConfig(V, cfg), omega, potential, cutoff, sites_range=sites_range)[0]
         for cfg in product((PLUS, MINUS), repeat=len(V))]
    vals = np.array([-e.value for e in H])
    value = float(logsumexp(vals))
    if all(e.is_exact for e in H):
        return Estimate.exact(value)
    p = np.exp(vals - value)
    err = math.sqrt(float(np.sum((p * np.array([e.stderr for e in H])) ** 2)))
    return Estimate(value, err, max(e.n_samples for e in H), "mc", H[0].seed)


@dataclass
class ThermoSeries:
    """A volume-indexed sequence ``(n, value, stderr)``."""

    n: list
    values: list
    stderr: list
    label: str = ""
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if any(b <= a for a, b in zip(self.n, self.n[1:])):
            raise ValueError("n must be strictly increasing")
        if not (len(self.n) == len(self.values) == len(self.stderr)):
            raise ValueError("n, values and stderr differ in length")

    def __len__(self):
        return len(self.n)

    def cauchy_differences(self) -> list[float]:
        return [b - a for a, b in zip(self.values, self.values[1:])]

    def is_decreasing(self, nsigma: float = 0.0) -> bool:
        """Each step goes down by more than ``nsigma`` combined standard errors."""
        return all(
            b < a - nsigma * math.hypot(sa, sb)
            for a, b, sa, sb in zip(self.values, self.values[1:], self.stderr, self.stderr[1:])
        )

    def to_dict(self) -> dict:
        return {"label": self.label, "n": list(self.n), "values": list(map(float, self.values)),
                "stderr": list(map(float, self.stderr)), "meta": self.meta}

    def plot_rows(self) -> list[tuple]:
        return [(n, v, s, self.label) for n, v, s in zip(self.n, self.values, self.stderr)]

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["n", "value", "stderr"])
        for n, v, s in zip(self.n, self.values, self.stderr):
            w.writerow([n, repr(float(v)), repr(float(s))])
        return buf.getvalue()


def pressure_series(n_list: Sequence[int], engine, route: str = "weights", potential=None,
                    omega: LayerConfig | None = None, cutoff: int | None = None) -> ThermoSeries:
    """``|V_n|^{-1} log Z_{V_n}`` over ``V_n = [-n, n]``.

    Free boundary by default (``route`` as in :func:`partition_free`); with
    ``omega`` the fixed-boundary partition function from ``potential``.
    """
    vals, errs = [], []
    for n in n_list:
        V = LayerInterval(-n, n)
        if omega is not None:
            reach = (min(engine.layer_sites), max(engine.layer_sites))
            e = partition_fixed(V, omega, potential, cutoff if cutoff is not None else 2 * max(abs(x) for x in reach),
                                sites_range=reach)
        else:
            e = partition_free(V, potential=potential, engine=engine, route=route)
        vals.append(e.value / len(V))
        errs.append(e.stderr / len(V))
    label = "pressure_free" if omega is None else "pressure_fixed"
    return ThermoSeries(list(n_list), vals, errs, label, engine.describe())


# ---------------------------------------------------------------------------
# energy


def _intervals_at_zero(cutoff: int, sites_range=None):
    lo, hi = -cutoff, cutoff
    if sites_range is not None:
        lo, hi = max(lo, sites_range[0]), min(hi, sites_range[1])
    return [A for A in intervals_within(lo, hi, cutoff) if A.j <= 0 <= A.k]


def energy_per_site(xi: LayerConfig, potential, cutoff: int, sites_range: tuple[int, int] | None = None,
                    tail: tuple[float, float] | None = None) -> tuple[Estimate, float]:
    """``f_U(xi) = sum_{A containing 0} U(A, xi) / |A|`` over intervals of length ``<= cutoff``.

    Returns ``(estimate, tail_bound)``; the bound is 0 when every omitted
    interval has a plus endpoint, ``C exp(-lam (cutoff+1)) / (1 - exp(-lam))``
    with ``tail = (C, lam)``, and ``inf`` otherwise.
    """
    U = as_potential(potential)
    terms = []
    for A in _intervals_at_zero(cutoff, sites_range):
        if xi.spin(A.j) == MINUS and xi.spin(A.k) == MINUS:
            terms.append(U(A, xi) * (1.0 / len(A)))
    est = _sum(terms)
    if _omitted_vanish(0, 0, xi, cutoff, sites_range):
        return est, 0.0
    if tail is None:
        return est, math.inf
    C, lam = tail
    q = math.exp(-lam)
    return est, C * q ** (cutoff + 1) / (1 - q)


def _unique_rows(rows: np.ndarray):
    codes = _encode(rows)
    uniq, inv = np.unique(codes.reshape(-1), return_inverse=True)
    return uniq, inv.reshape(codes.shape)


def _per_pattern(rows: np.ndarray, j0: int, func):
    """Evaluate ``func(LayerConfig)`` once per distinct row; returns (per-sample values, uniq results)."""
    uniq, inv = _unique_rows(rows)
    cfgs = _decode(uniq, rows.shape[-1])
    res = [func(LayerConfig.from_array(c, j0)) for c in cfgs]
    return uniq, inv, res


def energy_density_estimate(samples, potential, cutoff: int, n: int, window_start: int | None = None,
                            blocks: int = 32) -> dict:
    """Energy density of the sampled measure by two routes.

    ``samples`` are layer rows (``(samples, w)`` or ``(chains, samples, w)``)
    on the window starting at ``window_start`` (default: centred on 0).
    The ergodic route averages ``f_U`` at site 0; the volume route averages
    ``H^f_{V_n} / |V_n|`` with ``V_n = [-n, n]``.  Returns both estimates and
    their difference with an error that accounts for their correlation.
    """
    S = np.asarray(samples)
    if S.ndim == 2:
        S = S[None]
    w = S.shape[-1]
    j0 = -(w // 2) if window_start is None else window_start
    need = max(cutoff, n)
    if j0 > -need or j0 + w - 1 < need:
        raise ValueError("sample window must cover [-max(cutoff, n), max(cutoff, n)]")
    U = as_potential(potential)
    wp = potential if isinstance(potential, WeightPotential) else None

    def cols(lo, hi):
        return S[..., lo - j0: hi - j0 + 1]

    # ergodic route: f_U at 0 needs the spins on [-cutoff, cutoff]
    erg_rows = cols(-cutoff, cutoff)
    vol_rows = cols(-n, n)
    V = LayerInterval(-n, n)

    def f_terms(xi):
        return [(A, 1.0 / len(A)) for A in _intervals_at_zero(cutoff)
                if xi.spin(A.j) == MINUS and xi.spin(A.k) == MINUS]

    def h_terms(xi):
        return [(A, 1.0 / len(V)) for A in intervals_within(V.j, V.k)
                if xi.spin(A.j) == MINUS and xi.spin(A.k) == MINUS]

    results = {}
    per_sample = {}
    coef_terms = {}
    for name, rows, start, termf in (("ergodic", erg_rows, -cutoff, f_terms), ("volume", vol_rows, -n, h_terms)):
        uniq, inv, tl = _per_pattern(rows, start, termf)
        pattern_vals = []
        freq = np.bincount(inv.reshape(-1), minlength=len(uniq)) / inv.size
        lin = []
        for t, (code, terms) in enumerate(zip(uniq, tl)):
            xi = LayerConfig.from_array(_decode(np.array([code]), rows.shape[-1])[0], start)
            vals = [U(A, xi).value * c for A, c in terms]
            pattern_vals.append(math.fsum(vals))
            if wp is not None:
                for A, c in terms:
                    lin.extend((r, coef * c * freq[t]) for r, coef in wp.terms(A, xi))
        pv = np.array(pattern_vals)
        per_sample[name] = pv[inv]  # (chains, samples)
        coef_terms[name] = lin
    cfg_blocks = max(2, blocks // S.shape[0])
    diffs = per_sample["ergodic"] - per_sample["volume"]
    for name, arr in (("ergodic", per_sample["ergodic"]), ("volume", per_sample["volume"]), ("difference", diffs)):
        b = np.concatenate([block_means(c, cfg_blocks) for c in arr])
        mean = float(arr.mean())
        err_mu = float(b.std(ddof=1) / math.sqrt(len(b)))
        err_pot = 0.0
        if wp is not None:
            terms = coef_terms["ergodic"] if name == "ergodic" else coef_terms["volume"] if name == "volume" else (
                coef_terms["ergodic"] + [(r, -c) for r, c in coef_terms["volume"]])
            err_pot = wp.combination(terms).stderr
        results[name] = Estimate(mean, math.hypot(err_mu, err_pot), int(arr.size), "mc", None)
    results["agree"] = abs(results["difference"].value) <= 3.0 * results["difference"].stderr
    return results


# ---------------------------------------------------------------------------
# variational principle


def _all_configs(V: LayerInterval) -> list[tuple[int, ...]]:
    return list(product((PLUS, MINUS), repeat=len(V)))


def variational_gap(m: EmpiricalMarginal, omega: LayerConfig, potential, cutoff: int | None = None,
                    sites_range: tuple[int, int] | None = None) -> Estimate:
    """``-S_V(m) + m(H^omega_V) + log Z^omega_V`` (the relative entropy of ``m`` to ``gamma_V(.|omega)``)."""
    V = m.V
    cutoff = cutoff if cutoff is not None else (
        sites_range[1] - sites_range[0] if sites_range else 4 * len(V) + 8)
    cfgs = _all_configs(V)
    H = [hamiltonian_fixed_bc(V, LayerConfig(V, c), omega, potential, cutoff, sites_range=sites_range)[0]
         for c in cfgs]
    Hv = np.array([e.value for e in H])
    logZ = float(logsumexp(-Hv))
    gamma = np.exp(-Hv - logZ)
    mp = np.array([m.probabilities.get(c, 0.0) for c in cfgs])
    S = entropy_empirical(m)
    value = -S.value + float(np.dot(mp, Hv)) + logZ
    # sensitivity to H(sigma) is m(sigma) - gamma(sigma)
    err_pot = math.sqrt(float(np.sum(((mp - gamma) * np.array([e.stderr for e in H])) ** 2)))
    if m.is_exact and all(e.is_exact for e in H):
        return Estimate.exact(value)
    err_m = 0.0
    if not m.is_exact:
        # sampling error of sum m log(m / gamma) from the per-sample score
        score = np.where(mp > 0, np.log(np.where(mp > 0, mp, 1.0)) + Hv + logZ, 0.0)
        var = float(np.dot(mp, score ** 2) - np.dot(mp, score) ** 2)
        err_m = math.sqrt(max(var, 0.0) / m.n_samples) if m.n_samples else 0.0
        err_m = max(err_m, S.stderr)
    n = max([m.n_samples] + [e.n_samples for e in H])
    return Estimate(value, math.hypot(err_m, err_pot), n, "mc", None)


def _joint_mu_jackknife(m: EmpiricalMarginal, uniq: np.ndarray, theta_per_site: np.ndarray,
                        size: int) -> tuple[float, float]:
    """Block jackknife of ``s_n + mu(theta) / |V|`` over the blocks of ``m``.

    Returns ``(bias, stderr)``; the bias estimate ``(nb - 1)(mean_loo - full)``
    removes the ``1/N`` part of the plug-in bias left after the Miller-Madow
    term (it grows with the autocorrelation of the samples).
    """
    if not m.block_codes or len(m.block_codes) < 2:
        return 0.0, 0.0

    def value(codes_all):
        codes, cnt = np.unique(codes_all, return_counts=True)
        ent = _plugin_entropy(cnt, len(codes_all), True) / size
        return ent + float(cnt @ theta_per_site[np.searchsorted(uniq, codes)]) / len(codes_all)

    full = value(np.concatenate(m.block_codes))
    reps = np.array([value(np.concatenate([c for i, c in enumerate(m.block_codes) if i != b]))
                     for b in range(len(m.block_codes))])
    nb = len(reps)
    bias = (nb - 1) * (reps.mean() - full)
    return float(bias), math.sqrt((nb - 1) / nb * np.sum((reps - reps.mean()) ** 2))


def variational_functional(samples, weights: RelativeLayerWeights, n_list: Sequence[int],
                           window_start: int | None = None, blocks: int = 32) -> dict:
    """``s_n - e_n - P_n`` for ``V_n = [-n, n]`` from layer samples of ``mu``.

    ``s_n`` is the Miller-Madow entropy density of the sampled marginal,
    ``e_n = |V_n|^{-1} mu(H^f_{V_n})`` and ``P_n = |V_n|^{-1} log Z^f_{V_n}``,
    both read off ``weights`` (which must cover every ``V_n``).  Returns the
    gap series and the three component series.
    """
    S = np.asarray(samples)
    if S.ndim == 2:
        S = S[None]
    w = S.shape[-1]
    j0 = -(w // 2) if window_start is None else window_start
    gaps, ents, ens, press = [], [], [], []
    for n in n_list:
        V = LayerInterval(-n, n)
        if V.j < weights.V.j or V.k > weights.V.k or V.j < j0 or V.k > j0 + w - 1:
            raise ValueError(f"V_{n} not covered by the samples or the weights")
        rows = S[..., V.j - j0: V.k - j0 + 1]
        m = EmpiricalMarginal.from_samples(rows, V, blocks)
        s = entropy_empirical(m)
        sub = RelativeLayerWeights.__new__(RelativeLayerWeights)
        # reuse the recorded samples on the sub-window
        sub.__dict__.update(weights.__dict__)
        sub.V, sub._cache = V, {}
        if not weights.is_exact:
            sub._logg = weights._logg[..., V.j - weights.V.j: V.k - weights.V.j + 1]
        uniq, inv = _unique_rows(rows)
        th = sub.theta(_decode(uniq, len(V)))
        freq = np.bincount(inv.reshape(-1), minlength=len(uniq)) / inv.size
        # e_n: average of H = -theta over mu; P_n: log Z
        lz = sub._log_partition_jk()
        size = len(V)
        e_est = th.combine(-freq / size, weights.n_samples, weights.seed)
        p_est = lz.combine([1.0 / size], weights.n_samples, weights.seed)
        # sampling error of the mu average
        per = (-th.full / size)[inv]
        b = np.concatenate([block_means(c, max(2, blocks // S.shape[0])) for c in per])
        err_mu = float(b.std(ddof=1) / math.sqrt(len(b)))
        # entropy and energy share the mu samples: jackknife their sum jointly
        bias, err_joint = _joint_mu_jackknife(m, uniq, th.full / size, size)
        # joint jackknife of e_n + P_n over the weight blocks
        if th.loo is not None:
            rep = (th.loo @ (-freq / size)) + lz.loo[:, 0] / size
            nb = len(rep)
            err_w = math.sqrt((nb - 1) / nb * np.sum((rep - rep.mean()) ** 2))
        else:
            err_w = 0.0
        s_val = s.value / size
        gap = s_val - e_est.value - p_est.value - bias
        gap_err = math.hypot(err_joint, err_w)
        gaps.append((gap, gap_err))
        ents.append((s_val, s.stderr / size))
        ens.append((e_est.value, math.hypot(err_mu, e_est.stderr)))
        press.append((p_est.value, p_est.stderr))

    def series(pairs, label):
        return ThermoSeries(list(n_list), [p[0] for p in pairs], [p[1] for p in pairs], label)

    return {"gap": series(gaps, "s-e-P"), "entropy": series(ents, "s_n"),
            "energy": series(ens, "e_n"), "pressure": series(press, "P_n")}


# ---------------------------------------------------------------------------
# low-temperature diagnostics


def dependence_condition(samples, beta: float, n_list: Sequence[int], window_start: int | None = None,
                         blocks: int = 32) -> ThermoSeries:
    """``2^n e^{-beta n} * mean(exp(2 beta sum_{|i| <= n} (1 - eta(i))))`` per ``n``.

    Computed in the log domain; ``meta['log_values']`` keeps the logs.  The
    error is a block jackknife of the log-mean.
    """
    S = np.asarray(samples)
    if S.ndim == 2:
        S = S[None]
    w = S.shape[-1]
    j0 = -(w // 2) if window_start is None else window_start
    vals, errs, logs = [], [], []
    for n in n_list:
        if -n < j0 or n > j0 + w - 1:
            raise ValueError(f"samples do not cover [-{n}, {n}]")
        rows = S[..., -n - j0: n - j0 + 1].astype(np.float64)
        x = 2.0 * beta * (1.0 - rows).sum(axis=-1)  # (chains, samples)
        top = float(x.max())
        b = np.concatenate([block_means(np.exp(c - top), max(2, blocks // S.shape[0])) for c in x])
        nb = len(b)
        tot = b.sum()
        full = math.log(tot / nb) + top
        loo = np.log((tot - b) / (nb - 1)) + top
        err = math.sqrt((nb - 1) / nb * np.sum((loo - loo.mean()) ** 2))
        lv = n * math.log(2.0) - beta * n + full
        logs.append(lv)
        vals.append(math.exp(lv))
        errs.append(math.exp(lv) * err)
    return ThermoSeries(list(n_list), vals, errs, "cond", {"log_values": logs, "beta": beta})


def _monotone_events(width: int) -> list[frozenset]:
    """Increasing events (up-sets in the plus order) on ``{+-1}^width``."""
    cfgs = list(product((MINUS, PLUS), repeat=width))
    idx = {c: t for t, c in enumerate(cfgs)}
    above = [[idx[d] for d in cfgs if all(a <= b for a, b in zip(c, d))] for c in cfgs]
    events = set()
    for mask in range(1, 1 << len(cfgs)):
        members = {t for t in range(len(cfgs)) if mask >> t & 1}
        if all(set(above[t]) <= members for t in members):
            events.add(frozenset(members))
    return [e for e in events]


def bernoulli_domination_check(samples, beta: float, blocks: int = 32, nsigma: float = 3.0) -> dict:
    """Empirical comparison of the layer with the Bernoulli measure ``rho(minus) = e^{-8 beta}``.

    Per site: ``P(minus) <= e^{-8 beta} + nsigma * stderr``.  Width-3
    cylinders: every increasing event ``F`` has ``P(F) >= rho(F) - nsigma * stderr``.
    """
    S = np.asarray(samples)
    if S.ndim == 2:
        S = S[None]
    q = math.exp(-8.0 * beta)
    nbc = max(2, blocks // S.shape[0])
    minus = (S == MINUS).astype(float)
    b = np.concatenate([block_means(c, nbc) for c in minus])  # (nb, w)
    p_site = b.mean(axis=0)
    e_site = b.std(axis=0, ddof=1) / math.sqrt(len(b))
    site_ok = p_site <= q + nsigma * e_site
    worst_event = None
    events_ok = True
    if S.shape[-1] >= 3 and q < 1:
        mid = S.shape[-1] // 2
        cyl = S[..., mid - 1: mid + 2]
        cfgs = list(product((MINUS, PLUS), repeat=3))
        codes = {c: t for t, c in enumerate(cfgs)}
        lab = np.zeros(cyl.shape[:-1], dtype=np.int64)
        for pos in range(3):
            lab = lab * 2 + (cyl[..., pos] == PLUS)
        rho = np.array([np.prod([q if s == MINUS else 1 - q for s in c]) for c in cfgs])
        onehot = np.stack([lab == codes[c] for c in cfgs], axis=-1).astype(float)
        bb = np.concatenate([block_means(c, nbc) for c in onehot])  # (nb, 8)
        for ev in _monotone_events(3):
            sel = np.array(sorted(ev))
            pe = bb[:, sel].sum(axis=1)
            val, err = pe.mean(), pe.std(ddof=1) / math.sqrt(len(pe))
            r = rho[sel].sum()
            slack = val - (r - nsigma * err)
            if worst_event is None or slack < worst_event[1]:
                worst_event = (tuple(cfgs[t] for t in sel), float(slack))
            if slack < 0:
                events_ok = False
    return {"rho_minus": q, "p_minus": p_site, "stderr": e_site, "sites_ok": bool(site_ok.all()),
            "events_ok": events_ok, "worst_event": worst_event, "passed": bool(site_ok.all()) and events_ok}


def quasilocality_probe(beta: float, h: float, n_list: Sequence[int], N: int = 24, config=None,
                        engine: MCEngine | None = None) -> ThermoSeries:
    """``D_n = gamma_0(+ | alt on [-n, n], fill +) - gamma_0(+ | alt on [-n, n], fill -)``.

    Both conditionings live in the plus-boundary box of half-width ``N``;
    the two replicas are driven by the same random numbers, the fill-minus
    replica starting from all minus.
    """
    eng = engine or MCEngine(N, beta, h, config)
    vals, errs = [], []
    for n in n_list:
        if n >= eng.n:
            raise ValueError("probe window must fit inside the box")
        alt = [PLUS if (i % 2 == 0) else MINUS for i in range(-n, n + 1)]
        a = LayerConfig.from_array(alt, -n, PLUS).with_spins({0: PLUS})
        b = LayerConfig.from_array(alt, -n, MINUS).with_spins({0: PLUS})
        e = eng.kernel_difference(a, b, 0, starts=[PLUS, MINUS])
        vals.append(e.value)
        errs.append(e.stderr)
    return ThermoSeries(list(n_list), vals, errs, f"D_n(beta={beta},h={h})", eng.describe())
