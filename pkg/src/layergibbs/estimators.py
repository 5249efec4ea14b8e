"""scikit-learn style wrappers: decay fits and the per-site energy transform."""
from __future__ import annotations

import math

import numpy as np
from scipy.optimize import curve_fit
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from ._validation import check_layer_rows, check_lengths


class DecayNotResolvable(ValueError):
    pass


def _model(L, logC, lam):
    return np.exp(logC - lam * L)


class ExponentialDecayFit(BaseEstimator):
    """Fit ``|U(L)| ~ C exp(-lambda L)``.

    With standard errors the fit is a weighted nonlinear least-squares fit on
    the linear scale, so points at the noise floor count with their true
    weight instead of dominating a log-scale fit.  Exact data (no errors) are
    fitted on the log scale.  Confidence intervals come from a parametric
    bootstrap that redraws every point from ``N(y, stderr^2)``.

    Parameters
    ----------
    n_bootstrap : int
    level : float
        Two-sided confidence level of ``ci_``.
    min_points : int
        Fewer usable lengths than this raises ``DecayNotResolvable``.
    noise_sigma : float
        A point is resolved when ``|y| > noise_sigma * stderr``.
    random_state : int
    """

    def __init__(self, n_bootstrap=400, level=0.95, min_points=4, noise_sigma=2.0, random_state=0):
        self.n_bootstrap = n_bootstrap
        self.level = level
        self.min_points = min_points
        self.noise_sigma = noise_sigma
        self.random_state = random_state

    def _fit_once(self, L, y, s):
        if s is None:
            pos = y > 0
            slope, icpt = np.polyfit(L[pos], np.log(y[pos]), 1)
            return icpt, -slope
        # start from a log-scale fit of the resolved points
        ok = y > self.noise_sigma * s
        if ok.sum() >= 2:
            slope, icpt = np.polyfit(L[ok], np.log(y[ok]), 1, w=(y[ok] / s[ok]))
            p0 = (icpt, max(-slope, 1e-3))
        else:
            p0 = (math.log(max(np.max(np.abs(y)), 1e-300)), 0.5)
        popt, _ = curve_fit(_model, L, y, p0=p0, sigma=s, absolute_sigma=True, maxfev=20000)
        return popt[0], popt[1]

    def fit(self, X, y, stderr=None):
        L = check_lengths(X)
        y = np.abs(np.asarray(y, dtype=float).ravel())
        if len(y) != len(L):
            raise ValueError("lengths and values differ in length")
        if len(L) < self.min_points:
            raise DecayNotResolvable(f"need at least {self.min_points} lengths, got {len(L)}")
        if stderr is None or np.all(np.asarray(stderr) == 0):
            s = None
            if np.count_nonzero(y) < 2:
                raise DecayNotResolvable("decay faster than resolvable: fewer than two nonzero values")
        else:
            s = np.asarray(stderr, dtype=float).ravel()
            # exact points inside a noisy curve get a tiny relative error
            s = np.where(s > 0, s, np.maximum(1e-12, 1e-9 * y))
            resolved = y > self.noise_sigma * s
            if resolved.sum() < 2:
                raise DecayNotResolvable("decay faster than resolvable: all values below the noise floor")
        logC, lam = self._fit_once(L, y, s)
        self.C_, self.lambda_ = float(math.exp(logC)), float(lam)
        self.n_points_ = len(L)
        self.lengths_, self.values_, self.stderr_ = L, y, s
        if s is None:
            self.ci_ = (self.lambda_, self.lambda_)
            self.C_ci_ = (self.C_, self.C_)
            self.boot_lambdas_ = np.full(1, self.lambda_)
            return self
        rng = np.random.default_rng(self.random_state)
        lams, Cs = [], []
        for _ in range(self.n_bootstrap):
            yb = y + s * rng.standard_normal(len(y))
            try:
                lc, lb = self._fit_once(L, np.abs(yb), s)
            except (RuntimeError, ValueError, np.linalg.LinAlgError):
                continue
            lams.append(lb)
            Cs.append(math.exp(min(lc, 700)))
        self.boot_lambdas_ = np.array(lams)
        a = (1 - self.level) / 2
        if len(lams) < 0.5 * self.n_bootstrap:
            self.ci_ = (float("nan"), float("nan"))
            self.C_ci_ = (float("nan"), float("nan"))
        else:
            self.ci_ = (float(np.quantile(lams, a)), float(np.quantile(lams, 1 - a)))
            self.C_ci_ = (float(np.quantile(Cs, a)), float(np.quantile(Cs, 1 - a)))
        return self

    def predict(self, X):
        check_is_fitted(self, "lambda_")
        L = check_lengths(X)
        return self.C_ * np.exp(-self.lambda_ * L)

    def excludes_zero(self) -> bool:
        check_is_fitted(self, "lambda_")
        return bool(self.ci_[0] > 0)

    def envelope_constant(self) -> float:
        """Smallest ``C`` with ``|U(L)| <= C exp(-lambda L)`` on every fitted point (at least ``C_``)."""
        check_is_fitted(self, "lambda_")
        return float(max(self.C_, np.max(self.values_ * np.exp(self.lambda_ * self.lengths_))))


class TelescopingPotential(TransformerMixin, BaseEstimator):
    """Per-site energy ``f_U`` of layer configurations.

    ``fit`` builds the kernel engine; ``transform`` maps each row (a layer
    window centred on site 0, plus fill outside) to
    ``f_U = sum_{A containing 0} U(A) / |A|`` over intervals up to ``cutoff``.

    Parameters
    ----------
    beta, h : float
    n : int
        Box half-width of the kernel engine.
    engine : {'exact', 'mc'}
    method : {'abstract', 'closed', 'coupled'}
    cutoff : int or None
        Longest interval (``k - j``) included; ``None`` means the whole box.
    mc_config : McConfig or None
    """

    def __init__(self, beta=0.6, h=0.0, n=3, engine="exact", method="closed", cutoff=None, mc_config=None):
        self.beta = beta
        self.h = h
        self.n = n
        self.engine = engine
        self.method = method
        self.cutoff = cutoff
        self.mc_config = mc_config

    def fit(self, X=None, y=None):
        from .mc import MCEngine
        from .exact import plus_engine
        from .potentials import Potential

        if X is not None:
            check_layer_rows(X)
        if self.engine == "exact":
            eng = plus_engine(self.n, self.beta, self.h)
        elif self.engine == "mc":
            eng = MCEngine(self.n, self.beta, self.h, self.mc_config)
        else:
            raise ValueError("engine must be 'exact' or 'mc'")
        self.engine_ = eng
        self.potential_ = Potential(eng, self.method, center=self.engine == "mc")
        return self

    def transform(self, X):
        from .lattice import LayerConfig
        from .thermo import energy_per_site

        check_is_fitted(self, "engine_")
        X = check_layer_rows(X)
        half = X.shape[1] // 2
        cutoff = self.cutoff if self.cutoff is not None else 2 * self.n
        out = np.empty(len(X))
        for r, row in enumerate(X):
            xi = LayerConfig.from_array(row, -half)
            est, _ = energy_per_site(xi, self.potential_, cutoff, sites_range=(-self.n, self.n))
            out[r] = est.value
        return out.reshape(-1, 1)
