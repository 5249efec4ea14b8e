"""Regular and random decimation of the layer restriction.

The decimated layer measure keeps only the spins on a set ``K`` of layer
sites; every other layer site is summed over together with the plane.  Its
telescoping potential is the same four-weight log ratio as before, with the
decimated weight ``W_K(eta) = sum over layer sites outside K``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .engine import KernelEngine
from .exact import Observable
from .lattice import MINUS, PLUS, LayerConfig, LayerInterval, Site2D
from .stats import Estimate

_MASK_BLOCK = 1024


@dataclass(frozen=True)
class DecimationScheme:
    """``kind='regular'`` keeps ``offset + bZ``; ``kind='random'`` keeps i.i.d. Bernoulli(p) sites."""

    kind: str
    b: int | None = None
    p: float | None = None
    mask_seed: int = 0
    offset: int = 0

    def __post_init__(self):
        if self.kind == "regular":
            if self.b is None or self.p is not None:
                raise ValueError("regular decimation takes b and no p")
            if int(self.b) != self.b or self.b < 2:
                raise ValueError("decimation spacing b must be an integer >= 2")
        elif self.kind == "random":
            if self.p is None or self.b is not None:
                raise ValueError("random decimation takes p and no b")
            if not 0.0 <= self.p <= 1.0:
                raise ValueError("p must lie in [0, 1]")
        else:
            raise ValueError("kind must be 'regular' or 'random'")

    @classmethod
    def regular(cls, b: int, offset: int = 0) -> "DecimationScheme":
        return cls("regular", b=b, offset=offset)

    @classmethod
    def random(cls, p: float, mask_seed: int = 0) -> "DecimationScheme":
        return cls("random", p=p, mask_seed=mask_seed)

    def keeps(self, i: int) -> bool:
        return i in make_mask(self, LayerInterval(i, i))

    def label(self) -> str:
        return f"regular:b={self.b}" if self.kind == "regular" else f"random:p={self.p}:seed={self.mask_seed}"


def make_mask(scheme: DecimationScheme, window) -> tuple[int, ...]:
    """Kept sites inside ``window``.

    The random mask draws one uniform per site from a Philox stream keyed by
    ``(mask_seed, site // 1024)``, so a site's fate does not depend on the
    window it is queried through.
    """
    window = window if isinstance(window, LayerInterval) else LayerInterval(*window)
    if scheme.kind == "regular":
        return tuple(i for i in window if (i - scheme.offset) % scheme.b == 0)
    kept = []
    for blk in range(window.j // _MASK_BLOCK, window.k // _MASK_BLOCK + 1):
        ss = np.random.SeedSequence(scheme.mask_seed, spawn_key=(blk + 2**31,))
        u = np.random.Generator(np.random.Philox(ss)).random(_MASK_BLOCK)
        base = blk * _MASK_BLOCK
        lo, hi = max(window.j, base), min(window.k, base + _MASK_BLOCK - 1)
        kept.extend(i for i in range(lo, hi + 1) if u[i - base] < scheme.p)
    return tuple(kept)


def decimated_potential(
    jk,
    xi: LayerConfig,
    b,
    engine: KernelEngine,
    kept: Iterable[int] | None = None,
    method: str = "coupled",
    center: bool = False,
) -> Estimate:
    """``U_K([j, k], xi)`` for the decimated layer; ``j, k`` must be kept sites.

    ``b`` is an integer spacing or a :class:`DecimationScheme`; ``kept``
    overrides the mask (absolute coordinates).  Layer sites in ``[j, k]``
    outside the mask are free; kept sites carry ``xi`` inside ``[j, k]`` and
    ``+1`` outside.  ``method`` is ``'coupled'`` (difference of single-flip
    log ratios), ``'abstract'`` (four decimated weights) or ``'closed'``.
    ``center`` shifts the interval and the mask to the middle of the box.
    """
    if isinstance(b, DecimationScheme):
        scheme = b
    else:
        if int(b) != b or b < 2:
            raise ValueError("decimation spacing b must be an integer >= 2")
        scheme = DecimationScheme.regular(int(b))
    jk = jk if isinstance(jk, LayerInterval) else LayerInterval(*jk)
    if kept is None:
        kept_abs = set(make_mask(scheme, LayerInterval(jk.j - 2 * engine.n - 1, jk.k + 2 * engine.n + 1)))
    else:
        kept_abs = set(kept)
    if jk.j not in kept_abs or jk.k not in kept_abs:
        raise ValueError("interval endpoints must be kept sites")
    if xi.spin(jk.j) == PLUS or xi.spin(jk.k) == PLUS:
        return Estimate.exact(0.0)
    shift = -((jk.j + jk.k) // 2) if center else 0
    j, k = jk.j + shift, jk.k + shift
    local = LayerConfig(LayerInterval(j, k), tuple(xi.spin(i - shift) for i in range(j, k + 1)), PLUS)
    box = set(engine.layer_sites)
    kept_set = {i + shift for i in kept_abs} & box
    if j not in box or k not in box:
        raise ValueError("interval outside the box of the engine")
    free = tuple(sorted(box - kept_set))
    if method == "coupled":
        if j == k:
            return -engine.log_weight_ratio(local.restrict([k]), LayerConfig.all_plus(), free)
        eta = _restrict_kept(local, range(j + 1, k), kept_set).with_spins({j: PLUS, k: PLUS})
        return engine.flip_difference(eta, eta.with_spins({j: MINUS}), k, free)
    if method == "abstract":
        inner = [i for i in range(j + 1, k) if i in kept_set]
        if j == k:
            return engine.log_weight_ratio(LayerConfig.all_plus(), local.restrict([j]), free)
        w = lambda sites: local.restrict(sites)
        return engine.log_weight_ratio(w([*inner, k]), w([j, *inner, k]), free) + engine.log_weight_ratio(
            w([j, *inner]), w(inner), free
        )
    if method == "closed":
        return _closed_decimated(j, k, local, kept_set, free, engine)
    raise ValueError("method must be 'coupled', 'abstract' or 'closed'")


def _restrict_kept(xi: LayerConfig, sites, kept_set) -> LayerConfig:
    return xi.restrict([i for i in sites if i in kept_set])


def _neighbour_observable(x: int, frozen_sites: set, beta: float, box: set) -> Observable:
    """``exp(2 beta * sum of the non-frozen neighbours of (x, 0))``."""
    obs = Observable.exp_spin(Site2D(x, 1), 2 * beta) * Observable.exp_spin(Site2D(x, -1), 2 * beta)
    for y in (x - 1, x + 1):
        if y in box and y not in frozen_sites:
            obs = obs * Observable.exp_spin(Site2D(y, 0), 2 * beta)
    return obs


def _closed_decimated(j, k, local, kept_set, free, engine) -> Estimate:
    """``-(1/4)(1 - xi_j)(1 - xi_k)[log E[F_j F_k]/(E[F_j] E[F_k]) + 4 beta [j ~ k]]``.

    ``F_x`` is the exponential of ``2 beta`` times the sum of all non-frozen
    neighbours of ``(x, 0)``; the expectations are taken with the kept sites
    frozen to ``xi^{[j,k]}``.
    """
    beta = engine.beta
    box = set(engine.layer_sites)
    frozen_sites = set(kept_set)
    measure = _restrict_kept(local, range(j, k + 1), kept_set)
    fj = _neighbour_observable(j, frozen_sites, beta, box)
    if j == k:
        e = engine.layer_expectation(measure, fj, free)
        pre = 1 - local.spin(j)
        # single flip: W(+)/W(-) = exp(2h) E_-[exp(2 beta sum of neighbours)]
        # frozen layer neighbours and the boundary carry +1 here
        frozen_nb = sum(1 for y in (j - 1, j + 1) if y in frozen_sites or y not in box)
        val = math.log(e.value) + 2 * beta * frozen_nb + 2 * engine.h
        if e.is_exact:
            return Estimate.exact(pre / 2 * val)
        return Estimate(pre / 2 * val, pre / 2 * e.stderr / e.value, e.n_samples, "mc", e.seed)
    fk = _neighbour_observable(k, frozen_sites, beta, box)
    r = engine.layer_log_ratio(measure, fj, fk, free)
    adj = 4.0 * beta if k == j + 1 else 0.0
    pre = (1 - local.spin(j)) * (1 - local.spin(k)) / 4.0
    return -pre * (r + adj)


# ---------------------------------------------------------------------------
# margins


def mask_margin(scheme: DecimationScheme, window, xi_kept: LayerConfig, beta: float = 1.0) -> dict:
    """Exponential-weight margins over ``k = 1 .. |window| - 1`` measured from ``window.j``.

    ``margin(k) = 2 beta k - 4 beta N_-(k)`` counts the kept minus spins
    ``N_-`` in ``[0, k]`` once; ``margin_doubled(k) = 2 beta k - 4 beta sum
    n_i (1 - xi_i)`` is the weight as written in the bound, which counts each
    kept minus twice.  ``k_star`` / ``k_star_doubled`` are the smallest ``k``
    beyond which the margin stays positive inside the window (``None`` if it
    is not positive at the window's end).
    """
    window = window if isinstance(window, LayerInterval) else LayerInterval(*window)
    kept = set(make_mask(scheme, window))
    ks = np.arange(1, len(window))
    n_minus = np.array(
        [sum(1 for i in range(window.j, window.j + k + 1) if i in kept and xi_kept.spin(i) == MINUS) for k in ks]
    )
    margin = 2 * beta * ks - 4 * beta * n_minus
    margin_doubled = 2 * beta * ks - 8 * beta * n_minus
    return {
        "k": ks,
        "n_minus": n_minus,
        "margin": margin,
        "margin_doubled": margin_doubled,
        "k_star": _k_star(ks, margin),
        "k_star_doubled": _k_star(ks, margin_doubled),
    }


def _k_star(ks, margin):
    if len(margin) == 0 or margin[-1] <= 0:
        return None
    bad = np.nonzero(margin <= 0)[0]
    return int(ks[0]) if len(bad) == 0 else int(ks[bad[-1]] + 1)


def regular_thresholds() -> dict:
    """Spacings above which the all-minus margin is eventually positive, for both weightings."""
    return {"margin": 2, "margin_doubled": 4}


# ---------------------------------------------------------------------------
# decay scans


def stress_set(
    kept: Sequence[int], samples: Sequence[LayerConfig] = (), window: LayerInterval | None = None
) -> dict[str, LayerConfig]:
    """All-minus, alternating and all-plus on the kept sites, plus the given samples."""
    kept = sorted(kept)
    if window is None:
        window = LayerInterval(min(kept), max(kept)) if kept else LayerInterval(0, 0)
    minus = LayerConfig.from_sites({i: MINUS for i in kept}) if kept else LayerConfig.all_plus()
    alt = LayerConfig.from_sites({i: (MINUS if t % 2 == 0 else PLUS) for t, i in enumerate(kept)}) if kept else minus
    out = {"all-minus": minus, "alternating": alt, "all-plus": LayerConfig.all_plus(window)}
    for t, s in enumerate(samples):
        out[f"sample-{t}"] = s
    return out


@dataclass
class DecayScan:
    lengths: np.ndarray
    worst: np.ndarray
    worst_err: np.ndarray
    worst_label: list
    values: dict
    fit: object | None
    passed: bool
    message: str = ""

    def rows(self, scheme_label: str):
        lam = None if self.fit is None else self.fit.lambda_
        for L, w, e in zip(self.lengths, self.worst, self.worst_err):
            yield {"scheme": scheme_label, "length": int(L), "worst_abs_U": float(w), "stderr": float(e),
                   "lambda": lam}


def worst_case_scan(values: dict, fit_kwargs: dict | None = None) -> DecayScan:
    """Worst ``|U|`` per length over ``values[label][(j, k)]`` and a uniform exponential fit.

    Passes when the fitted rate has a confidence interval above 0; an
    identically vanishing scan passes vacuously.
    """
    from .estimators import DecayNotResolvable, ExponentialDecayFit

    per_length: dict = {}
    for label, row in values.items():
        for (j, k), e in row.items():
            L = k - j
            cur = per_length.get(L)
            if cur is None or abs(e.value) > abs(cur[0].value) or (
                    abs(e.value) == abs(cur[0].value) and e.stderr > cur[0].stderr):
                per_length[L] = (e, f"{label}@[{j},{k}]")
    lengths = np.array(sorted(per_length), dtype=float)
    worst = np.array([abs(per_length[L][0].value) for L in sorted(per_length)])
    worst_err = np.array([per_length[L][0].stderr for L in sorted(per_length)])
    labels = [per_length[L][1] for L in sorted(per_length)]
    if np.all(worst == 0) and np.all(worst_err == 0):
        return DecayScan(lengths, worst, worst_err, labels, values, None, True, "identically zero")
    try:
        fit = ExponentialDecayFit(**(fit_kwargs or {})).fit(lengths, worst, worst_err)
    except DecayNotResolvable as exc:
        return DecayScan(lengths, worst, worst_err, labels, values, None, False, str(exc))
    ok = bool(fit.ci_[0] > 0)
    return DecayScan(lengths, worst, worst_err, labels, values, fit, ok, "" if ok else "rate CI includes 0")


def decimated_decay_scan(
    scheme: DecimationScheme,
    engine: KernelEngine,
    stress: dict[str, LayerConfig],
    window: LayerInterval | None = None,
    min_length: int = 2,
    max_length: int | None = None,
    activate_endpoints: bool = True,
    fit_kwargs: dict | None = None,
) -> DecayScan:
    """Worst-case ``|U_K([j, k], xi)|`` over the stress set, per length ``k - j``.

    Every pair of kept sites ``j < k`` inside ``window`` with
    ``min_length <= k - j <= max_length`` is evaluated.  With
    ``activate_endpoints`` both ends are set to minus (the only case where the
    potential is nonzero); the stress pattern supplies the kept spins in
    between.  Intervals and mask are translated to the middle of the box.
    """
    if max_length is None:
        max_length = 4 * scheme.b if scheme.kind == "regular" else 20
    if window is None:
        window = LayerInterval(0, max_length) if scheme.kind == "regular" else LayerInterval(-2 * engine.n, 2 * engine.n)
    span = LayerInterval(window.j - 2 * engine.n - 2, window.k + 2 * engine.n + 2)
    kept_all = make_mask(scheme, span)
    kept_w = [i for i in kept_all if i in window]
    pairs = [(j, k) for j in kept_w for k in kept_w if min_length <= k - j <= max_length]
    values = {}
    for label, xi in stress.items():
        row = {}
        for j, k in pairs:
            x = xi.with_spins({j: MINUS, k: MINUS}) if activate_endpoints else xi
            row[(j, k)] = decimated_potential((j, k), x, scheme, engine, kept=kept_all, center=True)
        values[label] = row
    return worst_case_scan(values, fit_kwargs)
