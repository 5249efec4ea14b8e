"""Heat-bath Monte Carlo for boxes beyond enumeration reach.

Chains are driven by counter-based Philox streams keyed by ``(seed, task,
chain)``, so a result depends only on the configuration and never on the
order in which tasks run.  Replicas inside one chain share their uniforms
(monotone coupling); differences between coupled replicas are then estimated
with a small fraction of the variance of independent runs.
"""
from __future__ import annotations

import hashlib
import json
import math
from dataclasses import asdict, dataclass, replace
from typing import Callable, Iterable, Iterator, Sequence

import numpy as np

from ._kernels import heat_bath_sweeps, plus_probability_table
from .engine import KernelEngine
from .exact import BoxProblem, Observable
from .lattice import MINUS, PLUS, LayerConfig, Site2D
from .stats import Estimate, block_means, jackknife, split_rhat

_PAD = {"plus": 1, "minus": -1, "free": 0}


@dataclass(frozen=True)
class McConfig:
    """Run-length settings.  ``sweeps`` counts all sweeps per chain, burn-in included."""

    sweeps: int = 20_000
    burn_in: int = 2_000
    chains: int = 4
    seed: int = 0
    thinning: int = 1
    n_blocks: int = 32
    chunk: int = 256

    def __post_init__(self):
        for name in ("sweeps", "burn_in", "chains", "thinning", "n_blocks", "chunk"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.burn_in >= self.sweeps:
            raise ValueError("burn_in must be smaller than sweeps")
        if self.chains < 2:
            raise ValueError("at least two chains are needed for split-chain diagnostics")
        if not 0 <= self.seed < 2**64:
            raise ValueError("seed must be a 64-bit unsigned integer")

    @property
    def samples_per_chain(self) -> int:
        return (self.sweeps - self.burn_in) // self.thinning

    @property
    def blocks_per_chain(self) -> int:
        return max(2, self.n_blocks // self.chains)

    def replace(self, **kw) -> "McConfig":
        return replace(self, **kw)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "McConfig":
        return cls(**d)


def task_key(*parts) -> int:
    """Stable 32-bit key for a task description (used to derive RNG streams)."""
    blob = json.dumps(parts, sort_keys=True, default=str).encode()
    return int.from_bytes(hashlib.sha256(blob).digest()[:4], "little")


def chain_generator(seed: int, key: int, chain: int) -> np.random.Generator:
    ss = np.random.SeedSequence(seed, spawn_key=(key, chain))
    return np.random.Generator(np.random.Philox(ss))


class _Grid:
    """Padded lattice for a box; ``half`` keeps only the rows ``y >= 0``."""

    def __init__(self, problem: BoxProblem, half: bool = False):
        (self.x0, self.x1), (y0, self.y1) = problem.xs, problem.ys
        self.y0 = 0 if half else y0
        self.half = half
        self.rows = self.y1 - self.y0 + 1
        self.cols = self.x1 - self.x0 + 1
        self.pad = _PAD[problem.boundary]
        self.problem = problem

    def index(self, site: Site2D) -> tuple[int, int]:
        if not (self.x0 <= site.x <= self.x1 and self.y0 <= site.y <= self.y1):
            raise ValueError(f"site {site} outside the simulated box")
        return self.y1 - site.y + 1, site.x - self.x0 + 1

    def points(self, sites: Sequence[Site2D]) -> np.ndarray:
        return np.array([self.index(s) for s in sites], dtype=np.int64).reshape(-1, 2)

    def contains(self, site: Site2D) -> bool:
        return self.x0 <= site.x <= self.x1 and self.y0 <= site.y <= self.y1

    def initial(self, frozen: dict[Site2D, int], start: int) -> np.ndarray:
        g = np.full((self.rows + 2, self.cols + 2), self.pad, dtype=np.int8)
        g[1:-1, 1:-1] = start
        for site, s in frozen.items():
            if self.contains(site):
                g[self.index(site)] = s
        return g

    def mask(self, frozen: Iterable[Site2D]) -> np.ndarray:
        m = np.zeros((self.rows + 2, self.cols + 2), dtype=np.bool_)
        for site in frozen:
            if self.contains(site):
                m[self.index(site)] = True
        if self.half:
            # the layer row bounds the half box; it must be frozen
            if not m[self.rows, 1:-1].all():
                raise ValueError("half-box simulation requires a fully frozen layer")
        return m


def _iterate_chain(grid, replicas, beta, h, cfg, rec_sites, fld_sites, key, chain, starts=None):
    """Yield ``(rec, fld)`` chunks of shape ``(replicas, samples, points)`` for one chain."""
    keys = set(replicas[0])
    if any(set(r) != keys for r in replicas):
        raise ValueError("coupled replicas must freeze the same sites")
    mask = grid.mask(keys)
    if starts is None:
        starts = [grid.pad if grid.pad != 0 else PLUS] * len(replicas)
    spins = np.stack([grid.initial(r, s) for r, s in zip(replicas, starts)])
    ptab = plus_probability_table(beta, h)
    gen = chain_generator(cfg.seed, key, chain)
    rec_pts, fld_pts = grid.points(rec_sites), grid.points(fld_sites)
    nrep = len(replicas)
    empty = np.zeros((nrep, 0, 0), dtype=np.int8)
    chunk = max(cfg.thinning, (cfg.chunk // cfg.thinning) * cfg.thinning)
    done = 0
    while done < cfg.burn_in:
        m = min(chunk, cfg.burn_in - done)
        u = gen.random((m, grid.rows, grid.cols))
        heat_bath_sweeps(spins, mask, ptab, u, False, 1, rec_pts, empty, fld_pts, empty, 0)
        done += m
    remaining = cfg.samples_per_chain * cfg.thinning
    while remaining > 0:
        m = min(chunk, remaining)
        u = gen.random((m, grid.rows, grid.cols))
        ns = m // cfg.thinning
        rec = np.zeros((nrep, ns, len(rec_pts)), dtype=np.int8)
        fld = np.zeros((nrep, ns, len(fld_pts)), dtype=np.int8)
        heat_bath_sweeps(spins, mask, ptab, u, True, cfg.thinning, rec_pts, rec, fld_pts, fld, 0)
        remaining -= m
        yield rec, fld


def run_coupled(problem, replicas, cfg, rec_sites=(), fld_sites=(), key=0, half=False, starts=None):
    """Run all chains; returns ``rec (chains, replicas, samples, P)`` and ``fld`` likewise."""
    grid = _Grid(problem, half)
    recs, flds = [], []
    for chain in range(cfg.chains):
        parts = list(_iterate_chain(grid, replicas, problem.beta, problem.h, cfg, list(rec_sites),
                                    list(fld_sites), key, chain, starts))
        recs.append(np.concatenate([p[0] for p in parts], axis=1))
        flds.append(np.concatenate([p[1] for p in parts], axis=1))
    return np.stack(recs), np.stack(flds)


def chain_blocks(x: np.ndarray, cfg: McConfig) -> np.ndarray:
    """Block means of per-sample values ``x (chains, samples, ...)`` pooled over chains."""
    return np.concatenate([block_means(xc, cfg.blocks_per_chain) for xc in x], axis=0)


def _mc(value, err, cfg, n) -> Estimate:
    if not math.isfinite(value):
        raise FloatingPointError("non-finite Monte Carlo estimate")
    return Estimate(float(value), float(err), int(n), "mc", cfg.seed)


# ---------------------------------------------------------------------------
# public sampling API


def sample_box(p: BoxProblem, c: McConfig, chains: Sequence[int] | None = None) -> Iterator[np.ndarray]:
    """Stream of box configurations as int8 arrays indexed ``[y - y_min, x - x_min]``.

    Chains are emitted one after the other (all samples of chain 0 first).
    """
    grid = _Grid(p)
    (x0, x1), (y0, y1) = p.xs, p.ys
    sites = [Site2D(x, y) for y in range(y0, y1 + 1) for x in range(x0, x1 + 1)]
    key = task_key("box", p.to_dict())
    frozen = p.frozen_spins()
    for chain in (range(c.chains) if chains is None else chains):
        for rec, _ in _iterate_chain(grid, [frozen], p.beta, p.h, c, sites, [], key, chain):
            for sample in rec[0]:
                yield sample.reshape(y1 - y0 + 1, x1 - x0 + 1)


def sample_layer_array(beta: float, h: float, n: int, c: McConfig) -> np.ndarray:
    """Layer rows ``[-n, n]`` of plus-boundary box samples, shape ``(chains, samples, 2n + 1)``."""
    p = BoxProblem(n, beta, h, "plus")
    sites = [Site2D(i, 0) for i in range(-n, n + 1)]
    rec, _ = run_coupled(p, [{}], c, sites, (), task_key("layer", beta, h, n))
    return rec[:, 0]


def sample_layer(beta: float, h: float, n: int, c: McConfig) -> Iterator[LayerConfig]:
    """Stream of layer configurations on ``[-n, n]`` (fill +1) from plus-boundary boxes."""
    p = BoxProblem(n, beta, h, "plus")
    grid = _Grid(p)
    sites = [Site2D(i, 0) for i in range(-n, n + 1)]
    key = task_key("layer", beta, h, n)
    for chain in range(c.chains):
        for rec, _ in _iterate_chain(grid, [{}], beta, h, c, sites, [], key, chain):
            for row in rec[0]:
                yield LayerConfig.from_array(row, -n)


def _observable_samples(p: BoxProblem, obs_list: Sequence[Observable], c: McConfig, tag: str) -> np.ndarray:
    """Per-sample values of several observables, shape ``(chains, samples, len(obs_list))``."""
    support = sorted(set().union(*(o.support for o in obs_list)))
    for s in support:
        if not p.contains(s):
            raise ValueError(f"observable support {s} does not overlap the box")
    frozen = p.frozen_spins()
    rec, _ = run_coupled(p, [frozen], c, support, (), task_key(tag, p.to_dict(), [str(o) for o in obs_list]))
    rec = rec[:, 0]
    out = np.empty(rec.shape[:2] + (len(obs_list),))
    for ch in range(rec.shape[0]):
        for t, o in enumerate(obs_list):
            out[ch, :, t] = o.evaluate_array(support, rec[ch])
    return out


def estimate_expectation(p: BoxProblem, f: Observable, c: McConfig) -> Estimate:
    vals = _observable_samples(p, [f], c, "expect")[..., 0]
    blocks = chain_blocks(vals, c)
    mean = float(vals.mean())
    err = float(blocks.std(ddof=1) / math.sqrt(len(blocks)))
    return _mc(mean, err, c, vals.size)


def estimate_log_ratio(p: BoxProblem, f: Observable, g: Observable, c: McConfig) -> Estimate:
    """``log(E[f g] / (E[f] E[g]))`` with a delete-one-block jackknife error."""
    if not (f.is_positive() and g.is_positive()):
        raise ValueError("log-ratio estimator requires pointwise positive observables")
    vals = _observable_samples(p, [f * g, f, g], c, "logratio")
    blocks = chain_blocks(vals, c)
    if np.any(blocks.std(axis=0) == 0) and not np.all(blocks.std(axis=0) == 0):
        pass  # some factor is deterministic; the jackknife still applies
    value, err = jackknife(blocks, lambda m: math.log(m[0]) - math.log(m[1]) - math.log(m[2]))
    return _mc(value, err, c, vals.shape[0] * vals.shape[1])


def rhat(p: BoxProblem, f: Observable, c: McConfig) -> float:
    """Split-chain R-hat of an observable."""
    vals = _observable_samples(p, [f], c, "expect")[..., 0]
    return split_rhat(vals)


# ---------------------------------------------------------------------------
# kernel engine


class MCEngine(KernelEngine):
    """Monte Carlo evaluator of layer kernels for the plus-boundary box ``{-n..n}^2``.

    With the whole layer frozen the two half boxes are independent and mirror
    images of each other, so only the upper half is simulated.
    """

    engine_tag = "mc"

    def __init__(self, n: int, beta: float, h: float = 0.0, config: McConfig | None = None):
        self.n, self.beta, self.h = int(n), float(beta), float(h)
        self.config = config or McConfig()
        self.base = BoxProblem(self.n, self.beta, self.h, "plus")

    def describe(self) -> dict:
        d = super().describe()
        d["config"] = self.config.to_dict()
        return d

    def _frozen(self, layer: LayerConfig, free: Iterable[int]) -> dict[Site2D, int]:
        free = set(free)
        for i in free:
            if not -self.n <= i <= self.n:
                raise ValueError(f"free site {i} outside the box layer")
        return {Site2D(i, 0): layer.spin(i) for i in self.layer_sites if i not in free}

    def _b(self, fields: np.ndarray) -> np.ndarray:
        """``E[exp(-2 beta X(y)) | neighbours]`` from neighbour sums (heat-bath conditional)."""
        p = 1.0 / (1.0 + np.exp(-2.0 * (self.beta * fields.astype(float) + self.h)))
        return p * math.exp(-2.0 * self.beta) + (1.0 - p) * math.exp(2.0 * self.beta)

    def _flip_runs(self, layers: Sequence[LayerConfig], k: int, free: Iterable[int], tag, starts=None):
        """Per-replica ``(log_const, power, Y)`` with ``log E[g_k] = log_const + power * log E[Y]``.

        ``g_k = exp(-2 beta * sum of the four neighbours of (k, 0))``.
        """
        free = tuple(sorted(set(free)))
        if not -self.n <= k <= self.n:
            raise ValueError("flip site outside the box")
        if k in free:
            raise ValueError("flip site must be frozen")
        for lay in layers:
            if lay.spin(k) != PLUS:
                raise ValueError("flip site must carry a plus spin")
        frozen = [self._frozen(lay, free) for lay in layers]
        half = not free
        site = Site2D(k, 0)
        consts = np.zeros(len(layers))
        fld_sites = []
        for y in site.neighbors():
            if half and y.y < 0:
                continue
            inside = self.base.contains(y)
            if inside and y not in frozen[0]:
                fld_sites.append(y)
            else:
                for r, fr in enumerate(frozen):
                    val = fr[y] if inside else PLUS
                    consts[r] += -2.0 * self.beta * val
        key = task_key(tag, self.describe(), [l.to_dict() for l in layers], k, free)
        _, fld = run_coupled(self.base, frozen, self.config, (), fld_sites, key, half, starts)
        Y = np.prod(self._b(fld), axis=-1)  # (chains, replicas, samples)
        power = 2.0 if half else 1.0
        return consts, power, Y

    def _blocks(self, Y):
        # (chains, replicas, samples) -> (blocks, replicas)
        return chain_blocks(np.moveaxis(Y, 1, 2), self.config)

    def flip_log_ratio(self, layer: LayerConfig, k: int, free: Iterable[int] = ()) -> Estimate:
        """``log W(layer^k) - log W(layer)`` for a plus spin at ``k``."""
        consts, power, Y = self._flip_runs([layer], k, free, "flip")
        blocks = self._blocks(Y)
        val, err = jackknife(blocks, lambda m: power * math.log(m[0]))
        return _mc(val + consts[0] - 2.0 * self.h, err, self.config, Y[:, 0].size)

    def flip_difference(self, a, b, k, free=()) -> Estimate:
        consts, power, Y = self._flip_runs([a, b], k, free, "flipdiff")
        blocks = self._blocks(Y)
        val, err = jackknife(blocks, lambda m: power * (math.log(m[0]) - math.log(m[1])))
        val += consts[0] - consts[1]
        return self._floor(val, err, Y)

    def _floor(self, val, err, Y) -> Estimate:
        """Coupled replicas that never disagreed give a zero jackknife error.

        Floor it by the rule of three: the disagreement rate is below ``3/N``
        at 95% and one disagreement moves the log by at most ``16 beta``.
        """
        n = Y[:, 0].size
        if err == 0.0 and np.all(Y[:, 0] == Y[:, 1]):
            err = 3.0 / n * 16.0 * self.beta
        return _mc(val, err, self.config, n)

    def log_weight_ratio(self, a: LayerConfig, b: LayerConfig, free: Iterable[int] = ()) -> Estimate:
        """Single-site flip path from ``b`` to ``a``; the steps are independent runs."""
        free = set(free)
        total = Estimate.exact(0.0)
        cur = b
        for i in self.layer_sites:
            if i in free or a.spin(i) == cur.spin(i):
                continue
            nxt = cur.with_spins({i: a.spin(i)})
            if nxt.spin(i) == MINUS:
                total = total + self.flip_log_ratio(cur, i, free)
            else:
                total = total - self.flip_log_ratio(nxt, i, free)
            cur = nxt
        return total

    def _layer_samples(self, layer, obs_list, free, tag):
        free = tuple(sorted(set(free)))
        frozen = self._frozen(layer, free)
        support = sorted(set().union(*(o.support for o in obs_list)))
        for s in support:
            if not self.base.contains(s):
                raise ValueError(f"observable support {s} outside the box")
        half = not free and (all(s.y >= 0 for s in support) or all(s.y <= 0 for s in support))
        mirror = half and any(s.y < 0 for s in support)
        sim_sites = [Site2D(s.x, -s.y) if mirror else s for s in support]
        key = task_key(tag, self.describe(), layer.to_dict(), free, [str(o) for o in obs_list])
        rec, _ = run_coupled(self.base, [frozen], self.config, sim_sites, (), key, half)
        rec = rec[:, 0]
        out = np.empty(rec.shape[:2] + (len(obs_list),))
        for ch in range(rec.shape[0]):
            for t, o in enumerate(obs_list):
                out[ch, :, t] = o.evaluate_array(support, rec[ch])
        return out

    def layer_expectation(self, layer, obs, free=()) -> Estimate:
        vals = self._layer_samples(layer, [obs], free, "lexp")[..., 0]
        blocks = chain_blocks(vals, self.config)
        return _mc(vals.mean(), blocks.std(ddof=1) / math.sqrt(len(blocks)), self.config, vals.size)

    def layer_log_ratio(self, layer, f, g, free=()) -> Estimate:
        vals = self._layer_samples(layer, [f * g, f, g], free, "lratio")
        blocks = chain_blocks(vals, self.config)
        val, err = jackknife(blocks, lambda m: math.log(m[0]) - math.log(m[1]) - math.log(m[2]))
        return _mc(val, err, self.config, vals.shape[0] * vals.shape[1])

    def kernel_difference(self, a: LayerConfig, b: LayerConfig, k: int, starts=None) -> Estimate:
        """``gamma_{k}(+|a) - gamma_{k}(+|b)`` for two layer configurations, coupled.

        Single-site kernels follow from ``W(-)/W(+) = exp(-2h) E_+[g_k]``.
        """
        a, b = a.with_spins({k: PLUS}), b.with_spins({k: PLUS})
        consts, power, Y = self._flip_runs([a, b], k, (), "kdiff", starts)
        blocks = self._blocks(Y)
        c = consts - 2.0 * self.h

        def diff(m):
            ra = math.exp(c[0] + power * math.log(m[0]))
            rb = math.exp(c[1] + power * math.log(m[1]))
            return 1.0 / (1.0 + ra) - 1.0 / (1.0 + rb)

        val, err = jackknife(blocks, diff)
        return self._floor_plain(val, err, Y)

    def _floor_plain(self, val, err, Y) -> Estimate:
        n = Y[:, 0].size
        if err == 0.0 and np.all(Y[:, 0] == Y[:, 1]):
            err = 3.0 / n
        return _mc(val, err, self.config, n)


# ---------------------------------------------------------------------------
# raw sample dumps

DUMP_MAGIC = b"LGSAMP1\n"


def dump_samples(path, samples: Iterable[np.ndarray], meta: dict) -> int:
    """Write configurations as one byte per spin, row-major.

    Layout: the magic line ``LGSAMP1``, one JSON header line (``shape`` of a
    single configuration plus ``meta``), then the raw int8 payload.  Returns
    the number of configurations written.
    """
    it = iter(samples)
    first = next(it, None)
    count = 0
    with open(path, "wb") as fh:
        shape = [] if first is None else list(first.shape)
        fh.write(DUMP_MAGIC)
        fh.write(json.dumps({"shape": shape, "dtype": "int8", "meta": meta}, sort_keys=True).encode() + b"\n")
        if first is not None:
            for s in (first, *it):
                fh.write(np.ascontiguousarray(s, dtype=np.int8).tobytes())
                count += 1
    return count


def load_samples(path) -> tuple[np.ndarray, dict]:
    with open(path, "rb") as fh:
        if fh.readline() != DUMP_MAGIC:
            raise ValueError("not a sample dump")
        header = json.loads(fh.readline())
        data = np.frombuffer(fh.read(), dtype=np.int8)
    shape = header["shape"]
    size = int(np.prod(shape)) if shape else 1
    return data.reshape(-1, *shape) if size else data, header
