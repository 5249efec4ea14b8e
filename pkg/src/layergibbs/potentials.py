"""Vacuum and telescoping potentials of the layer restriction.

Every quantity is expressed through the layer weight ``W(eta)`` of a kernel
engine (see :mod:`layergibbs.engine`).  With plus fill outside ``V``,
``gamma_V(sigma | +) = W(sigma) / sum W``, so ratios of kernels sharing the
same ``V`` and boundary are ratios of layer weights.
"""
from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field
from typing import Callable, Iterable, Mapping

from .engine import KernelEngine
from .exact import Observable
from .lattice import (
    MINUS,
    PLUS,
    LayerConfig,
    LayerInterval,
    Site2D,
    TelescopeSet,
    enumerate_telescope_cell,
    identity_radius,
    intervals_within,
    subsets,
)
from .stats import Estimate, sum_estimates

KINDS = ("vacuum", "telescoping", "telescoping_closed_form", "decimated")
MAX_VACUUM_SIZE = 12


def _interval(jk) -> LayerInterval:
    return jk if isinstance(jk, LayerInterval) else LayerInterval(*jk)


def _check_inside(sites: Iterable[int], engine: KernelEngine):
    inside = set(engine.layer_sites)
    for i in sites:
        if i not in inside:
            raise ValueError(f"layer site {i} outside the box of the engine")


# ---------------------------------------------------------------------------
# Hamiltonian and vacuum potential


def hamiltonian(V: Iterable[int] | LayerInterval, xi: LayerConfig, engine: KernelEngine) -> Estimate:
    """``H_V(xi) = log[gamma_V(+|+) / gamma_V(xi^V|+)] = log W(+) - log W(xi^V)``."""
    sites = V.sites if isinstance(V, LayerInterval) else tuple(sorted(set(V)))
    _check_inside(sites, engine)
    restricted = xi.restrict(sites).canonical()
    if not restricted.minus_sites():
        return Estimate.exact(0.0)
    return engine.log_weight_ratio(LayerConfig.all_plus(), restricted)


def _hamiltonian_cached(cache: dict, V, xi, engine) -> Estimate:
    key = xi.restrict(V).canonical().to_string() + str(xi.restrict(V).canonical().window)
    if key not in cache:
        cache[key] = hamiltonian(V, xi, engine)
    return cache[key]


def vacuum_potential(A: Iterable[int], xi: LayerConfig, engine: KernelEngine, _cache: dict | None = None) -> Estimate:
    """Moebius inversion ``v(A, xi) = sum_{V subset A} (-1)^{|A - V|} H_V(xi)``.

    Terms are summed exactly rounded (``math.fsum``), so cancelling pairs
    give an exact zero and the vacuum property holds to the last bit.
    """
    A = tuple(sorted(set(A)))
    if not A:
        return Estimate.exact(0.0)
    if len(A) > MAX_VACUUM_SIZE:
        raise ValueError(f"vacuum potential limited to |A| <= {MAX_VACUUM_SIZE}")
    cache = {} if _cache is None else _cache
    terms = []
    for V in subsets(A):
        sign = -1.0 if (len(A) - len(V)) % 2 else 1.0
        terms.append(sign * _hamiltonian_cached(cache, V, xi, engine))
    value = math.fsum(t.value for t in terms)
    if all(t.is_exact for t in terms):
        return Estimate.exact(value)
    total = sum_estimates(terms)
    return Estimate(value, total.stderr, total.n_samples, "mc", total.seed)


# ---------------------------------------------------------------------------
# telescoping potential


def _four_weight_log_ratio(j: int, k: int, xi: LayerConfig, engine: KernelEngine, free=()) -> Estimate:
    """``log W(xi^{]j,k]}) + log W(xi^{[j,k[}) - log W(xi^{]j,k[}) - log W(xi^{[j,k]})``."""
    inner = range(j + 1, k)
    num1 = xi.restrict([*inner, k])
    num2 = xi.restrict([j, *inner])
    den1 = xi.restrict(inner)
    den2 = xi.restrict([j, *inner, k])
    return engine.log_weight_ratio(num1, den2, free) + engine.log_weight_ratio(num2, den1, free)


def telescope_potential_abstract(
    i: int, m: int, xi: LayerConfig, engine: KernelEngine, g: Callable[[int], int] = identity_radius
) -> Estimate:
    """``U_{L_{i,m}}(xi)`` as the log-ratio of four kernels on ``L_{i,m} = [i - g(m), i]``."""
    L = TelescopeSet(i, m, g)
    _check_inside(L.sites, engine)
    if m == 0:
        return hamiltonian([i], xi, engine)
    j = L.interval.j
    return _four_weight_log_ratio(j, i, xi, engine)


def telescope_potential_closed(
    jk, xi: LayerConfig, engine: KernelEngine, literal_self_term: bool = False
) -> Estimate:
    """Closed form of ``U([j, k], xi)`` through the measure with frozen layer ``xi^{[j,k]}``.

    For ``j < k``::

        U = -(1/2)(1 - xi_j)(1 - xi_k) log( E[F_j F_k] / (E[F_j] E[F_k]) )
            - beta (1 - xi_j)(1 - xi_{j+1}) [k = j + 1]

    with ``F_x = exp(2 beta X(x, 1))``; by FKG the logarithm is nonnegative.
    For ``j = k`` the self term is ``(1 - xi_j)(log E[F_j] + 2 beta + h)``,
    which is what the four-kernel definition gives for a single flipped spin.
    ``literal_self_term=True`` uses ``beta (1 - xi_j)`` instead (kept for
    comparison; it does not match the kernel definition).
    """
    jk = _interval(jk)
    j, k = jk.j, jk.k
    _check_inside(jk.sites, engine)
    beta, h = engine.beta, engine.h
    pre_j, pre_k = 1 - xi.spin(j), 1 - xi.spin(k)
    if pre_j == 0 or pre_k == 0:
        return Estimate.exact(0.0)
    frozen = xi.restrict(jk)
    fj = Observable.exp_spin(Site2D(j, 1), 2.0 * beta)
    if j == k:
        e = engine.layer_expectation(frozen, fj)
        log_e = _log_estimate(e)
        self_term = beta if literal_self_term else 2.0 * beta + h
        return pre_j * (log_e + self_term)
    fk = Observable.exp_spin(Site2D(k, 1), 2.0 * beta)
    r = engine.layer_log_ratio(frozen, fj, fk)
    nn = beta * pre_j * (1 - xi.spin(j + 1)) if k == j + 1 else 0.0
    return -0.5 * pre_j * pre_k * r - nn


def _log_estimate(e: Estimate) -> Estimate:
    if e.is_exact:
        return Estimate.exact(math.log(e.value))
    return Estimate(math.log(e.value), e.stderr / e.value, e.n_samples, "mc", e.seed)


def telescope_potential_coupled(jk, xi: LayerConfig, engine: KernelEngine, free: Iterable[int] = ()) -> Estimate:
    """``U([j, k], xi)`` as a difference of two single-flip log ratios at ``k``.

    With ``eta = xi^{]j,k[}``, ``U = log[W(eta^k)/W(eta)] - log[W(eta^{jk})/W(eta^j)]``.
    The Monte Carlo engine runs the two conditions as coupled replicas.
    """
    jk = _interval(jk)
    j, k = jk.j, jk.k
    _check_inside(jk.sites, engine)
    if j == k:
        if xi.spin(k) == PLUS:
            return Estimate.exact(0.0)
        return -engine.log_weight_ratio(xi.restrict([k]), LayerConfig.all_plus(), free)
    if xi.spin(j) == PLUS or xi.spin(k) == PLUS:
        return Estimate.exact(0.0)
    eta = xi.restrict(range(j + 1, k)).with_spins({j: PLUS, k: PLUS})
    return engine.flip_difference(eta, eta.with_spins({j: MINUS}), k, free)


METHODS = {
    "abstract": lambda jk, xi, eng: telescope_potential_abstract(jk.k, jk.k - jk.j, xi, eng),
    "closed": lambda jk, xi, eng: telescope_potential_closed(jk, xi, eng),
    "coupled": lambda jk, xi, eng: telescope_potential_coupled(jk, xi, eng),
}


class Potential:
    """Callable ``U(jk, xi)`` with caching by the spins of ``xi`` on ``[j, k]``.

    ``center=True`` translates every interval to the middle of the box before
    evaluating (the infinite-volume potential is translation invariant; the
    finite box is not, so identities at finite ``n`` need ``center=False``).
    """

    def __init__(self, engine: KernelEngine, method: str = "abstract", center: bool = False):
        if method not in METHODS:
            raise ValueError(f"method must be one of {sorted(METHODS)}")
        self.engine, self.method, self.center = engine, method, center
        self._cache: dict = {}

    def __call__(self, jk, xi: LayerConfig) -> Estimate:
        jk = _interval(jk)
        if xi.spin(jk.j) == PLUS or xi.spin(jk.k) == PLUS:
            return Estimate.exact(0.0)
        shift = -((jk.j + jk.k) // 2) if self.center else 0
        jk_s = jk.shift(shift)
        pattern = tuple(xi.spin(i) for i in jk.sites)
        key = (jk_s.j, jk_s.k, pattern)
        if key not in self._cache:
            local = LayerConfig(jk_s, pattern, PLUS)
            self._cache[key] = METHODS[self.method](jk_s, local, self.engine)
        return self._cache[key]


# ---------------------------------------------------------------------------
# identities


def verify_telescoping_identity(V, xi: LayerConfig, engine: KernelEngine, potential: Potential | None = None) -> float:
    """``|H_V(xi) - sum_{A meets V} U(A, xi^V)|``.

    With plus fill outside ``V`` only intervals inside ``[min V, max V]`` can
    contribute, and all of them are summed.
    """
    sites = V.sites if isinstance(V, LayerInterval) else tuple(sorted(set(V)))
    U = potential or Potential(engine, "abstract")
    xv = xi.restrict(sites)
    lhs = hamiltonian(sites, xi, engine).value
    terms = [U(A, xv).value for A in intervals_within(min(sites), max(sites)) if set(A.sites) & set(sites)]
    return abs(lhs - math.fsum(terms))


def verify_resummation(i: int, m: int, xi: LayerConfig, engine: KernelEngine,
                       g: Callable[[int], int] = identity_radius) -> float:
    """``|U_{L_{i,m}}(xi) - sum over the telescoping cell of v(R, xi)|``."""
    if m > 6:
        raise ValueError("resummation check limited to m <= 6")
    u = telescope_potential_abstract(i, m, xi, engine, g).value
    cache: dict = {}
    vals = [vacuum_potential(R, xi, engine, cache).value for R in enumerate_telescope_cell(i, m, g)]
    return abs(u - math.fsum(vals))


def verify_moebius_roundtrip(V, xi: LayerConfig, engine: KernelEngine) -> float:
    """``|sum_{A subset V} v(A, xi) - H_V(xi)|``."""
    sites = V.sites if isinstance(V, LayerInterval) else tuple(sorted(set(V)))
    cache: dict = {}
    total = math.fsum(vacuum_potential(A, xi, engine, cache).value for A in subsets(sites) if A)
    return abs(total - hamiltonian(sites, xi, engine).value)


# ---------------------------------------------------------------------------
# potential tables


@dataclass
class PotentialTable:
    """Interval-indexed potential values for one configuration ``xi``.

    Missing entries mean zero.  ``engine_meta`` records the engine and box
    size the values were computed with.
    """

    xi: LayerConfig
    beta: float
    h: float
    entries: dict = field(default_factory=dict)
    engine_meta: dict = field(default_factory=dict)
    kind: str = "telescoping"

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"kind must be one of {KINDS}")

    def __getitem__(self, jk) -> Estimate:
        return self.entries.get(_interval(jk), Estimate.exact(0.0))

    def value(self, j: int, k: int) -> float:
        return self[(j, k)].value

    def __len__(self) -> int:
        return len(self.entries)

    def intervals(self) -> list[LayerInterval]:
        return sorted(self.entries, key=lambda a: (a.k, a.j))

    def max_abs(self) -> float:
        return max((abs(e.value) for e in self.entries.values()), default=0.0)

    def to_dict(self) -> dict:
        from . import __version__

        return {
            "kind": self.kind,
            "beta": self.beta,
            "h": self.h,
            "xi": self.xi.to_dict(),
            "engine_meta": self.engine_meta,
            "code_version": __version__,
            "entries": [
                {"j": a.j, "k": a.k, **self.entries[a].to_dict()} for a in self.intervals()
            ],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=1)

    @classmethod
    def from_dict(cls, d: dict) -> "PotentialTable":
        entries = {
            LayerInterval(e["j"], e["k"]): Estimate.from_dict(e) for e in d["entries"]
        }
        return cls(LayerConfig.from_dict(d["xi"]), d["beta"], d["h"], entries, d.get("engine_meta", {}), d["kind"])

    @classmethod
    def from_json(cls, s: str) -> "PotentialTable":
        return cls.from_dict(json.loads(s))

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["j", "k", "value", "stderr"])
        for a in self.intervals():
            e = self.entries[a]
            w.writerow([a.j, a.k, repr(e.value), repr(e.stderr)])
        return buf.getvalue()


def build_table(
    xi: LayerConfig,
    engine: KernelEngine,
    kind: str = "telescoping",
    max_length: int | None = None,
    window: LayerInterval | None = None,
    method: str | None = None,
    b: int | None = None,
) -> PotentialTable:
    """Table of ``U([j, k], xi)`` (or ``v``) for intervals inside ``window``.

    Intervals whose endpoints carry a plus spin vanish identically and are
    not stored.  ``kind='decimated'`` needs ``b`` and keeps only ``j, k`` in
    ``bZ``.
    """
    lo, hi = (window.j, window.k) if window is not None else (xi.window.j, xi.window.k)
    lo, hi = max(lo, min(engine.layer_sites)), min(hi, max(engine.layer_sites))
    entries = {}
    if kind == "decimated":
        from .decimation import decimated_potential

        if b is None:
            raise ValueError("decimated tables need b")
        for A in intervals_within(lo, hi, max_length):
            if A.j % b or A.k % b or xi.spin(A.j) == PLUS or xi.spin(A.k) == PLUS:
                continue
            entries[A] = decimated_potential(A, xi, b, engine)
    elif kind == "vacuum":
        cache: dict = {}
        for A in intervals_within(lo, hi, max_length):
            if any(xi.spin(i) == PLUS for i in A):
                continue
            entries[A] = vacuum_potential(A.sites, xi, engine, cache)
    else:
        meth = method or ("abstract" if kind == "telescoping" else "closed")
        U = Potential(engine, meth)
        for A in intervals_within(lo, hi, max_length):
            if xi.spin(A.j) == PLUS or xi.spin(A.k) == PLUS:
                continue
            entries[A] = U(A, xi)
    meta = engine.describe()
    if b is not None:
        meta["b"] = b
    return PotentialTable(xi, engine.beta, engine.h, entries, meta, kind)


# ---------------------------------------------------------------------------
# Dobrushin operator


def _interaction_energy(V, sigma: LayerConfig, potential, intervals) -> Estimate:
    return sum_estimates([potential(A, sigma) for A in intervals])


def dobrushin_expectation(
    f: Callable[[LayerConfig], float],
    V,
    omega: LayerConfig,
    potential: Callable[[LayerInterval, LayerConfig], Estimate],
    cutoff: int,
    sites_range: tuple[int, int] | None = None,
    tail: tuple[float, float] | None = None,
) -> tuple[Estimate, float]:
    """``R_V(f)(omega) = sum_{sigma_V} f exp(-H^omega_V) / Z^omega_V`` with truncation bound.

    ``H^omega_V(sigma) = sum U(A, sigma omega)`` over intervals ``A`` meeting
    ``V`` of length at most ``cutoff`` (and inside ``sites_range`` when
    given, e.g. the layer of a finite box).  ``tail = (C, lam)`` bounds the
    omitted intervals by ``|U| <= C exp(-lam |A|)``; without it the bound is
    reported as infinite unless no interval was omitted.
    """
    sites = V.sites if isinstance(V, LayerInterval) else tuple(sorted(set(V)))
    lo_v, hi_v = min(sites), max(sites)
    if sites_range is not None:
        lo, hi = sites_range
    else:
        lo, hi = lo_v - cutoff, hi_v + cutoff
    meets = [A for A in intervals_within(lo, hi) if A.j <= hi_v and A.k >= lo_v
             and any(i in A for i in sites)]
    kept = [A for A in meets if A.k - A.j <= cutoff]
    omitted = len(kept) < len(meets) or sites_range is None
    energies, values = [], []
    from itertools import product as _product

    for config in _product((PLUS, MINUS), repeat=len(sites)):
        sigma = omega.with_spins(dict(zip(sites, config)))
        energies.append(_interaction_energy(sites, sigma, potential, kept))
        values.append(float(f(sigma)))
    e = [x.value for x in energies]
    top = min(e)
    w = [math.exp(-(x - top)) for x in e]
    z = math.fsum(w)
    val = math.fsum(wi * fi for wi, fi in zip(w, values)) / z
    # truncation bound on |Delta H| and on the expectation
    if not omitted:
        bound = 0.0
    elif tail is None:
        bound = math.inf
    else:
        C, lam = tail
        delta = sum(
            (L + 1) * C * math.exp(-lam * L) for L in range(cutoff + 1, cutoff + 2000)
        ) * len(sites)
        fmax = max(abs(v) for v in values) if values else 0.0
        bound = fmax * (math.exp(2 * delta) - 1)
    if all(x.is_exact for x in energies):
        return Estimate.exact(val), bound
    # propagate energy errors to first order
    p = [wi / z for wi in w]
    grad = [-pi * (fi - val) for pi, fi in zip(p, values)]
    err = math.sqrt(sum((gi * x.stderr) ** 2 for gi, x in zip(grad, energies)))
    n = max(x.n_samples for x in energies)
    return Estimate(val, err, n, "mc", energies[0].seed), bound
