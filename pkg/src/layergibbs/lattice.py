"""Layer geometry: sites, intervals, layer configurations and telescoping cells.

The layer is the row ``y = 0`` of the square lattice; layer site ``i`` is the
2D site ``(i, 0)``.  Layer sets are stored as sorted tuples of integers so that
every iteration over them happens in a fixed order.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from itertools import combinations
from typing import Callable, Iterable, Iterator, Sequence

import numpy as np

PLUS = 1
MINUS = -1


@dataclass(frozen=True, order=True)
class Site2D:
    x: int
    y: int = 0

    def neighbors(self) -> tuple["Site2D", ...]:
        x, y = self.x, self.y
        return (Site2D(x - 1, y), Site2D(x + 1, y), Site2D(x, y - 1), Site2D(x, y + 1))


@dataclass(frozen=True, order=True)
class LayerInterval:
    """Integer interval ``[j, k]`` of the layer (both ends included)."""

    j: int
    k: int

    def __post_init__(self):
        if self.j > self.k:
            raise ValueError(f"interval requires j <= k, got [{self.j}, {self.k}]")

    def __len__(self) -> int:
        return self.k - self.j + 1

    def __iter__(self) -> Iterator[int]:
        return iter(range(self.j, self.k + 1))

    def __contains__(self, i) -> bool:
        return self.j <= i <= self.k

    @property
    def sites(self) -> tuple[int, ...]:
        return tuple(range(self.j, self.k + 1))

    def shift(self, a: int) -> "LayerInterval":
        return LayerInterval(self.j + a, self.k + a)

    def __str__(self) -> str:
        return f"[{self.j},{self.k}]"


def _as_interval(v) -> LayerInterval:
    if isinstance(v, LayerInterval):
        return v
    j, k = v
    return LayerInterval(int(j), int(k))


@dataclass(frozen=True)
class LayerConfig:
    """Spins on a finite window of the layer, ``fill`` everywhere else.

    ``LayerConfig.from_string("+-+", j=-1)`` builds the window ``[-1, 1]``.
    """

    window: LayerInterval
    values: tuple[int, ...]
    fill: int = PLUS

    def __post_init__(self):
        window = _as_interval(self.window)
        object.__setattr__(self, "window", window)
        values = tuple(int(s) for s in self.values)
        object.__setattr__(self, "values", values)
        if len(values) != len(window):
            raise ValueError(
                f"window {window} has {len(window)} sites but {len(values)} values were given"
            )
        if any(s not in (PLUS, MINUS) for s in values):
            raise ValueError("spins must be +1 or -1")
        if self.fill not in (PLUS, MINUS):
            raise ValueError("fill must be +1 or -1")

    # construction helpers ------------------------------------------------
    @classmethod
    def constant(cls, window, spin: int, fill: int = PLUS) -> "LayerConfig":
        window = _as_interval(window)
        return cls(window, (spin,) * len(window), fill)

    @classmethod
    def all_plus(cls, window=(0, 0)) -> "LayerConfig":
        return cls.constant(window, PLUS)

    @classmethod
    def all_minus(cls, window, fill: int = PLUS) -> "LayerConfig":
        return cls.constant(window, MINUS, fill)

    @classmethod
    def alternating(cls, window, first: int = MINUS, fill: int = PLUS) -> "LayerConfig":
        """Alternating spins with ``first`` at even sites (parity fixed by site, not by offset)."""
        window = _as_interval(window)
        vals = tuple(first if (i % 2 == 0) else -first for i in window)
        return cls(window, vals, fill)

    @classmethod
    def from_string(cls, s: str, j: int = 0, fill: int = PLUS) -> "LayerConfig":
        vals = tuple(PLUS if c == "+" else MINUS for c in s if c in "+-")
        return cls(LayerInterval(j, j + len(vals) - 1), vals, fill)

    @classmethod
    def from_array(cls, values: Sequence[int], j: int = 0, fill: int = PLUS) -> "LayerConfig":
        vals = tuple(int(v) for v in np.asarray(values).ravel())
        return cls(LayerInterval(j, j + len(vals) - 1), vals, fill)

    @classmethod
    def from_sites(cls, spins: dict[int, int], fill: int = PLUS) -> "LayerConfig":
        """Config that equals ``spins`` on the given sites and ``fill`` elsewhere."""
        if not spins:
            return cls.constant((0, 0), fill, fill)
        lo, hi = min(spins), max(spins)
        vals = tuple(spins.get(i, fill) for i in range(lo, hi + 1))
        return cls(LayerInterval(lo, hi), vals, fill)

    # access ----------------------------------------------------------------
    def spin(self, i: int) -> int:
        if i in self.window:
            return self.values[i - self.window.j]
        return self.fill

    __getitem__ = spin

    def spins(self, sites: Iterable[int]) -> np.ndarray:
        return np.array([self.spin(i) for i in sites], dtype=np.int8)

    def on(self, lo: int, hi: int) -> np.ndarray:
        """Spins on ``[lo, hi]`` as an int8 array."""
        return self.spins(range(lo, hi + 1))

    def minus_sites(self) -> tuple[int, ...]:
        """Minus sites inside the window (the fill is not enumerated)."""
        return tuple(i for i, s in zip(self.window, self.values) if s == MINUS)

    # operations ------------------------------------------------------------
    def restrict(self, sites) -> "LayerConfig":
        """The configuration ``xi^V``: ``xi`` on ``V``, +1 everywhere else.

        ``sites`` may be an interval or any finite set of layer sites.
        """
        if isinstance(sites, LayerInterval):
            sites = sites.sites
        sites = sorted(set(int(i) for i in sites))
        if not sites:
            return LayerConfig.constant((0, 0), PLUS)
        return LayerConfig.from_sites({i: self.spin(i) for i in sites}, fill=PLUS)

    def with_spins(self, spins: dict[int, int]) -> "LayerConfig":
        """Copy with some sites overwritten (window grows as needed)."""
        lo = min([self.window.j, *spins])
        hi = max([self.window.k, *spins])
        vals = tuple(spins.get(i, self.spin(i)) for i in range(lo, hi + 1))
        return LayerConfig(LayerInterval(lo, hi), vals, self.fill)

    def shift(self, a: int) -> "LayerConfig":
        return LayerConfig(self.window.shift(a), self.values, self.fill)

    def flip(self, i: int) -> "LayerConfig":
        return self.with_spins({i: -self.spin(i)})

    def canonical(self) -> "LayerConfig":
        """Smallest window that still describes the same configuration."""
        idx = [t for t, s in enumerate(self.values) if s != self.fill]
        if not idx:
            return LayerConfig.constant((0, 0), self.fill, self.fill)
        a, b = idx[0], idx[-1]
        return LayerConfig(
            LayerInterval(self.window.j + a, self.window.j + b), self.values[a : b + 1], self.fill
        )

    def precedes(self, other: "LayerConfig", sites: Iterable[int]) -> bool:
        """Pointwise order ``self <= other`` on ``sites``."""
        return all(self.spin(i) <= other.spin(i) for i in sites)

    def to_string(self) -> str:
        return "".join("+" if s > 0 else "-" for s in self.values)

    def to_dict(self) -> dict:
        return {"j": self.window.j, "k": self.window.k, "values": self.to_string(), "fill": self.fill}

    @classmethod
    def from_dict(cls, d: dict) -> "LayerConfig":
        return cls.from_string(d["values"], j=int(d["j"]), fill=int(d.get("fill", PLUS)))

    def __str__(self) -> str:
        tail = "+" if self.fill > 0 else "-"
        return f"{self.to_string()}@{self.window.j} (fill {tail})"


def identity_radius(m: int) -> int:
    return m


@dataclass(frozen=True)
class TelescopeSet:
    """``L_{i,m} = [i - g(m), i]``; ``g`` must be strictly increasing with ``g(0) = 0``."""

    i: int
    m: int
    g: Callable[[int], int] = field(default=identity_radius, compare=False, repr=False)

    def __post_init__(self):
        if self.m < 0:
            raise ValueError("m must be nonnegative")

    @property
    def radius(self) -> int:
        return self.g(self.m)

    @property
    def interval(self) -> LayerInterval:
        return LayerInterval(self.i - self.radius, self.i)

    @property
    def sites(self) -> tuple[int, ...]:
        return self.interval.sites

    def previous(self) -> "TelescopeSet | None":
        return None if self.m == 0 else TelescopeSet(self.i, self.m - 1, self.g)


def telescope_decompose(
    A: Iterable[int], g: Callable[[int], int] = identity_radius, max_m: int = 10_000
) -> tuple[int, int] | None:
    """Unique ``(i, m)`` with ``i in A``, ``A`` inside ``L_{i,m}`` but not inside ``L_{i,m-1}``.

    ``i`` is forced to be ``max(A)``; ``m`` is the smallest radius index whose
    interval covers the diameter of ``A``.  Returns ``None`` if ``g`` never
    reaches the diameter within ``max_m`` steps.
    """
    A = sorted(set(int(a) for a in A))
    if not A:
        raise ValueError("empty set has no decomposition")
    i = A[-1]
    diam = i - A[0]
    for m in range(max_m + 1):
        if g(m) >= diam:
            return i, m
    return None


def enumerate_telescope_cell(
    i: int, m: int, g: Callable[[int], int] = identity_radius
) -> list[tuple[int, ...]]:
    """All sets ``R`` with ``i in R``, ``R`` inside ``L_{i,m}``, ``R`` not inside ``L_{i,m-1}``."""
    if m < 0:
        raise ValueError("m must be nonnegative")
    if m == 0:
        return [(i,)]
    lo, prev_lo = i - g(m), i - g(m - 1)
    # R must reach below L_{i,m-1}: some site in [lo, prev_lo - 1]
    outer = list(range(lo, prev_lo))
    inner = list(range(prev_lo, i))
    cell = []
    for r_out in range(1, len(outer) + 1):
        for out in combinations(outer, r_out):
            for r_in in range(len(inner) + 1):
                for inn in combinations(inner, r_in):
                    cell.append(tuple(sorted(out + inn + (i,))))
    cell.sort()
    return cell


def subsets(sites: Sequence[int]) -> Iterator[tuple[int, ...]]:
    """All subsets of ``sites`` (including the empty one) in a fixed order."""
    sites = tuple(sorted(sites))
    for r in range(len(sites) + 1):
        yield from combinations(sites, r)


def intervals_within(lo: int, hi: int, max_length: int | None = None) -> list[LayerInterval]:
    """Every interval ``[j, k]`` with ``lo <= j <= k <= hi``, ordered by ``(k, j)`` descending ``j``."""
    out = []
    for k in range(lo, hi + 1):
        for j in range(k, lo - 1, -1):
            if max_length is not None and k - j > max_length:
                break
            out.append(LayerInterval(j, k))
    return out
