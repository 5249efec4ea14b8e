"""Running-average lengths, absolute-convergence sums and decay diagnostics."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Iterable, Sequence

import numpy as np

from .estimators import DecayNotResolvable, ExponentialDecayFit
from .exact import Observable
from .lattice import LayerConfig, Site2D
from .potentials import PotentialTable
from .stats import Estimate

THRESHOLD = Fraction(8, 9)
DIRECTIONS = ("plus", "minus")
AVERAGES = ("spin", "plus_fraction")


def ell(
    i: int,
    xi: LayerConfig,
    alpha: float = 1.0,
    direction: str = "plus",
    strict: bool = False,
    average: str = "spin",
) -> int | None:
    """Smallest ``n >= 1`` with every running average of length ``k >= n`` at least ``alpha * 8/9``.

    The average of length ``k`` runs over ``xi(i), xi(i +- 1), ..., xi(i +- (k-1))``
    (sign given by ``direction``).  ``average='spin'`` averages the spins
    themselves; ``'plus_fraction'`` averages ``(1 + xi)/2``, the fraction of
    plus spins.  ``strict`` uses ``>`` instead of ``>=``.  Returns ``None``
    when no such ``n`` exists (minus fill).  Arithmetic is exact.
    """
    if direction not in DIRECTIONS:
        raise ValueError(f"direction must be one of {DIRECTIONS}")
    if average not in AVERAGES:
        raise ValueError(f"average must be one of {AVERAGES}")
    if not 1.0 <= alpha < 9 / 8:
        raise ValueError("alpha must satisfy 1 <= alpha < 9/8")
    step = 1 if direction == "plus" else -1
    thr = Fraction(alpha) * THRESHOLD
    val = (lambda s: Fraction(s)) if average == "spin" else (lambda s: Fraction(1 + s, 2))
    fill_val = val(xi.fill)
    if fill_val < thr or (strict and fill_val == thr):
        return None
    # sites up to the far edge of the window are explicit, the rest is fill
    far = xi.window.k if step == 1 else xi.window.j
    n_explicit = max(0, (far - i) * step + 1)
    total = Fraction(0)
    last_bad = 0
    k = 0
    while True:
        k += 1
        total += val(xi.spin(i + step * (k - 1)))
        ok = total > thr * k if strict else total >= thr * k
        if not ok:
            last_bad = k
        if k >= n_explicit:
            # beyond the window every term equals the fill value (>= threshold),
            # so once the average clears the threshold it stays above it
            if ok:
                break
            if fill_val == thr and not ok:
                return None
        if k > n_explicit + 10**7:
            raise RuntimeError("running average did not settle")
    return last_bad + 1


@dataclass
class EllProfile:
    """``l^{alpha, direction}_i(xi)`` for a range of sites (computed lazily)."""

    xi: LayerConfig
    alpha: float = 1.0
    direction: str = "plus"
    strict: bool = False
    average: str = "spin"
    values: dict = field(default_factory=dict)

    def __getitem__(self, i: int):
        if i not in self.values:
            self.values[i] = ell(i, self.xi, self.alpha, self.direction, self.strict, self.average)
        return self.values[i]

    def compute(self, sites: Iterable[int]) -> "EllProfile":
        for i in sites:
            self[i]
        return self

    def as_array(self, sites: Sequence[int]) -> np.ndarray:
        return np.array([np.nan if self[i] is None else self[i] for i in sites], dtype=float)


def ell_profile(xi: LayerConfig, alpha=1.0, direction="plus", sites=None, strict=False, average="spin") -> EllProfile:
    p = EllProfile(xi, alpha, direction, strict, average)
    return p.compute(sites if sites is not None else xi.window.sites)


def omega_U_member(xi: LayerConfig, strict: bool = False, alpha: float = 1.0, average: str = "spin"):
    """Membership in the set of good configurations, with the witness profiles.

    Returns ``(member, {'plus': EllProfile, 'minus': EllProfile, 'strict': strict})``.
    Only window sites are checked; outside the window every site sees the
    fill, which settles membership (``+1`` fill: always finite).
    """
    plus = ell_profile(xi, alpha, "plus", strict=strict, average=average)
    minus = ell_profile(xi, alpha, "minus", strict=strict, average=average)
    member = all(plus[i] is not None and minus[i] is not None for i in xi.window)
    return member, {"plus": plus, "minus": minus, "strict": strict}


def tata_count(i: int, profile: EllProfile) -> int:
    """``|{j >= i : l(j) >= |j - i|}|`` (sites beyond the window are scanned until ``l`` settles)."""
    xi = profile.xi
    # far to the right of the window every l is bounded by the window's total deficit
    reach = max(xi.window.k, i) + 18 * len(xi.window) + 4
    count = 0
    for j in range(i, reach + 1):
        lj = profile[j]
        if lj is None:
            raise ValueError("infinite l: configuration is not in the good set")
        if lj >= j - i:
            count += 1
    return count


# ---------------------------------------------------------------------------
# decay curves and fits


def decay_curve(table: PotentialTable, k: int):
    """``(lengths, |U([k-L, k])|, stderr)`` for the table entries anchored at ``k``."""
    rows = sorted((k - a.j, abs(e.value), e.stderr) for a, e in table.entries.items() if a.k == k)
    if not rows:
        return np.zeros(0), np.zeros(0), np.zeros(0)
    L, y, s = (np.array(c, dtype=float) for c in zip(*rows))
    return L, y, s


def decay_fit(
    table: PotentialTable | None = None,
    profile: EllProfile | None = None,
    k: int | None = None,
    lengths=None,
    values=None,
    stderr=None,
    max_length: int | None = None,
    **fit_kwargs,
) -> ExponentialDecayFit:
    """Fit ``|U([j, k])| <= C exp(-lambda |j - k|)`` over lengths beyond ``l^-_k``.

    Either a table plus anchor ``k`` or explicit ``lengths/values/stderr``.
    The profile (direction minus) supplies ``l^-_k``; lengths ``<= l^-_k``
    are excluded.  Raises ``DecayNotResolvable`` when nothing decays above
    the noise.
    """
    if table is not None:
        if k is None:
            k = max((a.k for a in table.entries), default=0)
        L, y, s = decay_curve(table, k)
    else:
        L, y, s = (np.asarray(v, dtype=float) for v in (lengths, values, stderr if stderr is not None else np.zeros(len(lengths))))
    if profile is not None:
        if profile.direction != "minus":
            raise ValueError("decay fits use the minus-direction profile of the right endpoint")
        lk = profile[k if k is not None else 0]
        keep = L > (lk if lk is not None else math.inf)
        L, y, s = L[keep], y[keep], s[keep]
    if max_length is not None:
        keep = L <= max_length
        L, y, s = L[keep], y[keep], s[keep]
    if len(L) == 0:
        raise DecayNotResolvable("no lengths left beyond l")
    if np.all(y == 0) and np.all(s == 0):
        raise DecayNotResolvable("decay faster than resolvable: all values are zero")
    return ExponentialDecayFit(**fit_kwargs).fit(L, y, None if np.all(s == 0) else s)


@dataclass
class ConvergenceSum:
    partial: float
    tail_bound: float
    unbounded: bool

    @property
    def total(self) -> float:
        return self.partial + self.tail_bound


def interval_tail(C: float, lam: float, cutoff: int) -> float:
    """``C * sum_{L > cutoff} (L + 1) exp(-lam L)`` (number of intervals of length ``L`` containing a site)."""
    if lam <= 0:
        return math.inf
    q = math.exp(-lam)
    c = cutoff
    return C * q ** (c + 1) * ((c + 2) - (c + 1) * q) / (1 - q) ** 2


def abs_convergence_sum(
    i: int, table: PotentialTable, cutoff: int, fit: ExponentialDecayFit | None = None
) -> ConvergenceSum:
    """``sum_{j <= i <= k, k - j <= cutoff} |U([j, k])|`` plus a tail bound beyond ``cutoff``.

    The tail uses the envelope constant of the fit, enlarged if needed so that
    every tabled value beyond the fitted range respects it; this keeps
    ``partial + tail`` non-increasing in ``cutoff``.
    """
    partial = math.fsum(
        abs(e.value) for a, e in table.entries.items() if a.j <= i <= a.k and a.k - a.j <= cutoff
    )
    if fit is None:
        nonzero_beyond = any(
            a.j <= i <= a.k and a.k - a.j > cutoff and e.value != 0 for a, e in table.entries.items()
        )
        return ConvergenceSum(partial, math.inf if nonzero_beyond or not table.entries else 0.0,
                              nonzero_beyond or not table.entries)
    lam = fit.lambda_
    C = fit.envelope_constant()
    for a, e in table.entries.items():
        L = a.k - a.j
        if L > 0:
            C = max(C, abs(e.value) * math.exp(lam * L))
    return ConvergenceSum(partial, interval_tail(C, lam, cutoff), False)


def check_hope_bound(table: PotentialTable, profile: EllProfile, C1: float, C2: float, lam: float,
                     M: int | None = None) -> list[tuple[int, int, float, float]]:
    """Entries violating ``|U(L_{k,m})| <= C1 [m <= l(k)] + C2 [m > l(k)] exp(-lam m)``.

    ``l`` is read from the profile at the right endpoint ``k``.  Returns
    ``(k, m, |U|, bound)`` for every violation with ``m <= M``.
    """
    out = []
    for a, e in sorted(table.entries.items(), key=lambda t: (t[0].k, t[0].j)):
        m = a.k - a.j
        if M is not None and m > M:
            continue
        lk = profile[a.k]
        lk = math.inf if lk is None else lk
        bound = C1 if m <= lk else C2 * math.exp(-lam * m)
        if abs(e.value) > bound:
            out.append((a.k, m, abs(e.value), bound))
    return out


def fit_hope_constants(table: PotentialTable, profile: EllProfile, fit: ExponentialDecayFit, slack: float = 2.0):
    """Constants for :func:`check_hope_bound` fitted from the data with a slack factor."""
    vals = [(a.k - a.j, abs(e.value), profile[a.k]) for a, e in table.entries.items()]
    near = [v for m, v, lk in vals if lk is None or m <= lk]
    C1 = slack * max(near, default=0.0)
    C2 = slack * fit.envelope_constant()
    far = [(m, v) for m, v, lk in vals if lk is not None and m > lk]
    for m, v in far:
        C2 = max(C2, slack * v * math.exp(fit.lambda_ * m))
    return C1, C2, fit.lambda_


# ---------------------------------------------------------------------------
# constrained covariances


def constrained_cov_decay(xi: LayerConfig, i_max: int, engine, row: int = 1):
    """``Cov(X(0, row), X(i, row))`` for ``i = 0..i_max`` with the layer frozen to ``xi``.

    Returns the covariance estimates and the smallest ``l`` beyond which they
    stay under the envelope ``C exp(-m i)`` fitted to the tail (``None`` if no
    positive decay could be fitted).
    """
    covs = []
    x0 = Observable.spin(Site2D(0, row))
    e0 = engine.layer_expectation(xi, x0)
    for i in range(i_max + 1):
        xi_obs = Observable.spin(Site2D(i, row))
        e_fg = engine.layer_expectation(xi, x0 * xi_obs)
        e_i = engine.layer_expectation(xi, xi_obs)
        val = e_fg.value - e0.value * e_i.value
        if e_fg.is_exact:
            covs.append(Estimate.exact(val))
        else:
            err = math.sqrt(e_fg.stderr ** 2 + (e0.value * e_i.stderr) ** 2 + (e_i.value * e0.stderr) ** 2)
            covs.append(Estimate(val, err, e_fg.n_samples, "mc", e_fg.seed))
    L = np.arange(i_max + 1, dtype=float)
    y = np.array([abs(c.value) for c in covs])
    ell_env = None
    if np.any(y > 0) and len(L) >= 3:
        pos = y > 0
        slope, icpt = np.polyfit(L[pos], np.log(y[pos]), 1)
        if slope < 0:
            env = np.exp(icpt + slope * L) * 1.5
            bad = np.nonzero(y > env)[0]
            ell_env = 0 if len(bad) == 0 else int(bad[-1] + 1)
    return covs, ell_env


# ---------------------------------------------------------------------------
# Monte Carlo decay scans


def activated(xi: LayerConfig, j: int, k: int) -> LayerConfig:
    """``xi`` with minus spins at both ends of ``[j, k]`` (the potential vanishes otherwise)."""
    return xi.with_spins({j: -1, k: -1})


def choose_anchor(xi: LayerConfig, max_length: int = 12, min_points: int = 4, average: str = "spin") -> int | None:
    """Site nearest 0 whose ``l^-`` leaves at least ``min_points`` lengths in ``(l^-_k, max_length]``.

    Only anchors with ``[k - max_length, k]`` inside the window of ``xi`` are
    considered, so every tested interval sees sampled spins.
    """
    lo, hi = xi.window.j + max_length, xi.window.k
    for k in sorted(range(lo, hi + 1), key=lambda k: (abs(k), -k)):
        lk = ell(k, xi, 1.0, "minus", average=average)
        if lk is not None and max_length - lk >= min_points:
            return k
    return None


def typical_decay(
    xi: LayerConfig,
    engine,
    anchor: int | None = 0,
    max_length: int = 12,
    method: str = "coupled",
    average: str = "spin",
    fit_kwargs: dict | None = None,
    potential=None,
) -> dict:
    """Decay of ``|U([anchor - L, anchor], xi)|`` for ``l^-_anchor(xi) < L <= max_length``.

    The endpoints are activated (set to minus); ``l^-`` is read from ``xi``
    itself.  ``anchor=None`` picks the site nearest 0 with enough lengths
    (:func:`choose_anchor`).  Returns the anchor, lengths, estimates, the fit
    (or ``None``) and a message when the fit is not possible; at ``beta = 0``
    the potential vanishes identically and the result is marked ``vacuous``.
    """
    from .potentials import Potential

    if engine.beta == 0:
        return {"anchor": anchor, "ell": None, "lengths": np.zeros(0), "estimates": [], "fit": None,
                "message": "identically zero (beta = 0)", "vacuous": True}
    if anchor is None:
        anchor = choose_anchor(xi, max_length, (fit_kwargs or {}).get("min_points", 4), average)
        if anchor is None:
            return {"anchor": None, "ell": None, "lengths": np.zeros(0), "estimates": [], "fit": None,
                    "message": "no anchor leaves enough lengths beyond l", "vacuous": False}
    ell_k = ell(anchor, xi, 1.0, "minus", average=average)
    U = potential or Potential(engine, method, center=True)
    lo = (ell_k if ell_k is not None else max_length) + 1
    lengths = list(range(lo, max_length + 1))
    est = [U((anchor - L, anchor), activated(xi, anchor - L, anchor)) for L in lengths]
    out = {"anchor": anchor, "ell": ell_k, "lengths": np.array(lengths, dtype=float), "estimates": est, "fit": None, "message": "",
           "vacuous": False}
    if not lengths:
        out["message"] = f"no lengths in ({ell_k}, {max_length}]"
        return out
    try:
        out["fit"] = decay_fit(lengths=lengths, values=[abs(e.value) for e in est],
                               stderr=[e.stderr for e in est], **(fit_kwargs or {}))
    except DecayNotResolvable as exc:
        out["message"] = str(exc)
    return out


def stress_decay_scan(
    engine,
    stress: dict,
    lengths: Iterable[int] = range(2, 10),
    anchor: int = 0,
    method: str = "coupled",
    fit_kwargs: dict | None = None,
):
    """Worst case over the stress set of ``|U([anchor - L, anchor], xi)|`` with activated endpoints."""
    from .decimation import worst_case_scan
    from .potentials import Potential

    U = Potential(engine, method, center=True)
    values = {}
    for label, xi in stress.items():
        values[label] = {(anchor - L, anchor): U((anchor - L, anchor), activated(xi, anchor - L, anchor))
                         for L in lengths}
    return worst_case_scan(values, fit_kwargs)
