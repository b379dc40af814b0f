"""Translation-invariant infection-rate kernels on the integer lattice.

A kernel stores the rates from the origin only (translation invariance is
structural).  Distances for truncation and tail masses use the l1 norm; boxes
elsewhere in the package are per-coordinate (sup-norm) cubes.

Infinite-range kernels are never sampled directly: simulation uses the
truncation at ``effective_reach()`` and the neglected tail mass is always
available via ``neglected_tail_mass()``.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, replace
from typing import NamedTuple

import numpy as np

__all__ = [
    "Kernel",
    "InvalidKernelError",
    "TailBound",
    "power_law",
    "nearest_neighbor",
    "finite_table",
]

# Policy constants: relative tail tolerance for auto truncation of unbounded
# kernels, cap on exact shell summation, and the analytic remainder beyond it.
SIM_TAIL_TOLERANCE = 1e-6
SHELL_SUM_CAP = 10**6


class InvalidKernelError(ValueError):
    """Kernel outside the valid parameter space (summability, positivity)."""


def _l1(offset) -> int:
    return int(sum(abs(int(c)) for c in offset))


def shell_count(d: int, m: int) -> int:
    """Number of lattice points at l1 distance exactly m from the origin."""
    if m == 0:
        return 1
    return sum(
        (2**k) * math.comb(d, k) * math.comb(m - 1, k - 1)
        for k in range(1, min(d, m) + 1)
    )


# Cache of cumulative shell sums S[M] = sum_{m=1..M} shell_count(d,m) * m^-alpha.
_CUMSUM_CACHE: dict[tuple[int, float], np.ndarray] = {}


def _shell_cumsum(d: int, alpha: float, up_to: int) -> np.ndarray:
    up_to = min(up_to, SHELL_SUM_CAP)
    cached = _CUMSUM_CACHE.get((d, alpha))
    if cached is not None and len(cached) >= up_to + 1:
        return cached
    size = min(SHELL_SUM_CAP, max(up_to, 2 * len(cached) if cached is not None else 1024))
    m = np.arange(1, size + 1, dtype=np.float64)
    counts = np.zeros_like(m)
    for k in range(1, d + 1):
        # C(m-1, k-1) as a polynomial in m, exact in float64 for small k
        binom = np.ones_like(m)
        for j in range(1, k):
            binom *= (m - j) / j
        binom[m < k] = 0.0
        counts += (2**k) * math.comb(d, k) * binom
    cum = np.concatenate([[0.0], np.cumsum(counts * m**-alpha)])
    _CUMSUM_CACHE[(d, alpha)] = cum
    return cum


def _shell_tail_remainder(d: int, alpha: float, m_from: int) -> tuple[float, float]:
    """Bracket for sum_{m >= m_from} shell_count(d,m) * m^-alpha via integral bounds."""
    lo = hi = 0.0
    for k in range(1, d + 1):
        coeff = (2**k) * math.comb(d, k) / math.factorial(k - 1)
        # shell term C(m-1,k-1) m^-a sits between (m-k)^{k-1} m^-a and m^{k-1} m^-a
        hi += coeff * m_from ** (k - alpha) / (alpha - k)
        lo += coeff * ((m_from + 1) ** (k - alpha) / (alpha - k)) * max(
            0.0, 1.0 - k * (k - 1) / (m_from + 1)
        )
    return lo, hi


@dataclass(frozen=True)
class Kernel:
    """Infection rates lambda(y) from the origin, for one of three families.

    ``cutoff`` (l1 radius, or None for unbounded) zeroes all rates beyond it.
    ``sim_cutoff`` overrides the automatic truncation radius used by samplers
    for unbounded kernels.
    """

    dimension: int
    family: str  # "power-law" | "nearest-neighbor" | "finite-table"
    alpha: float | None = None
    beta: float | None = None
    table: tuple[tuple[tuple[int, ...], float], ...] | None = None
    cutoff: int | None = None
    sim_cutoff: int | None = None

    def __post_init__(self):
        d = self.dimension
        if not isinstance(d, int) or d < 1:
            raise InvalidKernelError(f"dimension must be a positive integer, got {d}")
        if self.cutoff is not None and (int(self.cutoff) < 1 or self.cutoff != int(self.cutoff)):
            raise InvalidKernelError(f"cutoff must be a positive integer, got {self.cutoff}")
        if self.family == "power-law":
            if self.alpha is None or self.alpha <= 0:
                raise InvalidKernelError("power-law kernel needs alpha > 0")
            if self.beta is None or self.beta <= 0:
                raise InvalidKernelError("power-law kernel needs beta > 0")
            if self.cutoff is None and self.alpha <= d:
                raise InvalidKernelError(
                    f"summability violated: alpha={self.alpha} <= d={d} with unbounded cutoff"
                )
        elif self.family == "nearest-neighbor":
            if self.beta is None or self.beta <= 0:
                raise InvalidKernelError("nearest-neighbor kernel needs beta > 0")
        elif self.family == "finite-table":
            if not self.table:
                raise InvalidKernelError("finite-table kernel needs at least one entry")
            for off, rate in self.table:
                if len(off) != d:
                    raise InvalidKernelError(f"offset {off} does not match dimension {d}")
                if rate < 0:
                    raise InvalidKernelError(f"negative rate {rate} at offset {off}")
                if all(c == 0 for c in off) and rate != 0:
                    raise InvalidKernelError("rate at the origin must be 0")
            if not any(
                rate > 0 and (self.cutoff is None or _l1(off) <= self.cutoff)
                for off, rate in self.table
            ):
                raise InvalidKernelError("no positive rate within cutoff")
        else:
            raise InvalidKernelError(f"unknown kernel family {self.family!r}")

    # -- pointwise rates ---------------------------------------------------

    def rate(self, offset) -> float:
        """Rate lambda(offset); 0 at the origin and beyond the cutoff."""
        if len(offset) != self.dimension:
            raise ValueError(
                f"offset has {len(offset)} coordinates, kernel dimension is {self.dimension}"
            )
        n = _l1(offset)
        if n == 0 or (self.cutoff is not None and n > self.cutoff):
            return 0.0
        if self.family == "power-law":
            return self.beta * float(n) ** -self.alpha
        if self.family == "nearest-neighbor":
            return self.beta if n == 1 else 0.0
        off = tuple(int(c) for c in offset)
        for entry, rate in self.table:
            if entry == off:
                return rate
        return 0.0

    # -- totals and tails --------------------------------------------------

    def _tail_bracket(self, radius: float) -> tuple[float, float]:
        """Bracket for sum of rates over l1 distance > radius."""
        lo_shell = int(math.floor(radius)) + 1 if radius >= 0 else 1
        end = self.cutoff
        if self.family == "nearest-neighbor":
            end = 1
        if self.family == "finite-table":
            s = sum(
                rate
                for off, rate in self.table
                if _l1(off) > radius and (end is None or _l1(off) <= end)
            )
            return s, s
        if self.family == "nearest-neighbor":
            s = 2 * self.dimension * self.beta if radius < 1 else 0.0
            return s, s
        # power law
        if end is not None:
            if lo_shell > end:
                return 0.0, 0.0
            cum = _shell_cumsum(self.dimension, self.alpha, end)
            s = self.beta * float(cum[end] - cum[lo_shell - 1])
            return s, s
        cap = SHELL_SUM_CAP
        if lo_shell > cap:
            rem_lo, rem_hi = _shell_tail_remainder(self.dimension, self.alpha, lo_shell)
            return self.beta * rem_lo, self.beta * rem_hi
        cum = _shell_cumsum(self.dimension, self.alpha, cap)
        exact = float(cum[cap] - cum[lo_shell - 1])
        rem_lo, rem_hi = _shell_tail_remainder(self.dimension, self.alpha, cap + 1)
        return self.beta * (exact + rem_lo), self.beta * (exact + rem_hi)

    def tail_mass(self, radius: float) -> float:
        """Total rate over offsets with l1 norm > radius (bracket midpoint)."""
        lo, hi = self._tail_bracket(radius)
        return 0.5 * (lo + hi)

    def total_rate(self) -> float:
        """Total infection rate out of a site (bracket midpoint for unbounded sums)."""
        return self.tail_mass(0.0)

    def total_rate_halfwidth(self) -> float:
        """Half-width of the analytic bracket around total_rate()."""
        lo, hi = self._tail_bracket(0.0)
        return 0.5 * (hi - lo)

    # -- truncation and reach ----------------------------------------------

    def truncate(self, k: int) -> "Kernel":
        """Kernel with all rates beyond l1 radius k removed."""
        if int(k) < 1 or k != int(k):
            raise ValueError(f"truncation level must be a positive integer, got {k}")
        new_cut = int(k) if self.cutoff is None else min(int(k), self.cutoff)
        return replace(self, cutoff=new_cut)

    def effective_reach(self) -> int:
        """l1 radius actually used by samplers (cutoff, or the auto truncation)."""
        if self.cutoff is not None:
            return self.cutoff
        if self.family == "nearest-neighbor":
            return 1
        if self.family == "finite-table":
            return max((_l1(off) for off, rate in self.table if rate > 0), default=1)
        if self.sim_cutoff is not None:
            return int(self.sim_cutoff)
        total = self.total_rate()
        cum = _shell_cumsum(self.dimension, self.alpha, SHELL_SUM_CAP)
        target = total * (1.0 - SIM_TAIL_TOLERANCE) / self.beta
        idx = int(np.searchsorted(cum, target))
        if idx >= SHELL_SUM_CAP:
            raise InvalidKernelError(
                f"auto truncation cannot reach tail tolerance {SIM_TAIL_TOLERANCE:g} "
                f"within radius {SHELL_SUM_CAP}; set sim_cutoff explicitly"
            )
        return max(1, idx)

    def neglected_tail_mass(self) -> float:
        """Rate mass beyond effective_reach(), dropped by samplers (0 if bounded)."""
        if self.cutoff is not None:
            return 0.0
        return self.tail_mass(self.effective_reach())

    # -- support enumeration -------------------------------------------------

    def support(self) -> tuple[list[tuple[int, ...]], np.ndarray]:
        """Offsets with positive rate within effective reach, with their rates.

        Deterministic order: (l1 norm, lexicographic).
        """
        reach = self.effective_reach()
        offsets: list[tuple[int, ...]] = []
        if self.family == "finite-table":
            offsets = [
                off for off, rate in self.table if rate > 0 and _l1(off) <= reach
            ]
        elif self.family == "nearest-neighbor":
            for i in range(self.dimension):
                e = [0] * self.dimension
                e[i] = 1
                offsets.append(tuple(e))
                e2 = [0] * self.dimension
                e2[i] = -1
                offsets.append(tuple(e2))
        else:
            d = self.dimension
            if d == 1:
                offsets = [(c,) for c in range(-reach, reach + 1) if c != 0]
            else:
                if (2 * reach + 1) ** d > 5_000_000:
                    raise InvalidKernelError(
                        f"support enumeration too large (reach {reach} in d={d}); "
                        "truncate the kernel or set a smaller sim_cutoff"
                    )
                offsets = [
                    y
                    for y in itertools.product(range(-reach, reach + 1), repeat=d)
                    if y != (0,) * d and _l1(y) <= reach
                ]
        offsets.sort(key=lambda y: (_l1(y), y))
        rates = np.array([self.rate(y) for y in offsets], dtype=np.float64)
        keep = rates > 0
        offsets = [y for y, k in zip(offsets, keep) if k]
        return offsets, rates[keep]

    # -- classification ------------------------------------------------------

    def is_symmetric(self) -> bool:
        """True iff rates are invariant under coordinate sign flips and permutations."""
        if self.family in ("power-law", "nearest-neighbor"):
            return True
        d = self.dimension
        rates = {off: rate for off, rate in self.table if rate > 0}
        if self.cutoff is not None:
            rates = {off: r for off, r in rates.items() if _l1(off) <= self.cutoff}
        for off, r in rates.items():
            for perm in itertools.permutations(range(d)):
                permuted = tuple(off[p] for p in perm)
                for signs in itertools.product((1, -1), repeat=d):
                    image = tuple(s * c for s, c in zip(signs, permuted))
                    if rates.get(image, 0.0) != r:
                        return False
        return True

    def is_irreducible(self) -> bool:
        """True iff the support (with negatives) generates the full lattice."""
        if self.family in ("power-law", "nearest-neighbor"):
            return True
        offsets, _ = self.support()
        vectors = list(offsets) + [tuple(-c for c in y) for y in offsets]
        return _lattice_spans(vectors, self.dimension)

    def reflected(self) -> "Kernel":
        """Kernel with every offset negated (the dual process's rates)."""
        if self.family in ("power-law", "nearest-neighbor"):
            return self
        neg = tuple(
            (tuple(-c for c in off), rate) for off, rate in self.table
        )
        return replace(self, table=neg)

    def descriptor(self) -> dict:
        """Plain-dict form for config echoes and records."""
        out = {"family": self.family, "dimension": self.dimension}
        if self.alpha is not None:
            out["alpha"] = self.alpha
        if self.beta is not None:
            out["beta"] = self.beta
        if self.table is not None:
            out["table"] = [[list(off), rate] for off, rate in self.table]
        if self.cutoff is not None:
            out["cutoff"] = self.cutoff
        out["effective_reach"] = self.effective_reach()
        out["neglected_tail_mass"] = self.neglected_tail_mass()
        return out


def _lattice_spans(vectors, d: int) -> bool:
    """Integer row reduction: does the set generate all of Z^d?"""
    rows = [list(v) for v in vectors if any(v)]
    det = 1
    r = 0
    for c in range(d):
        while True:
            nz = [i for i in range(r, len(rows)) if rows[i][c] != 0]
            if not nz:
                return False
            i0 = min(nz, key=lambda i: abs(rows[i][c]))
            rows[r], rows[i0] = rows[i0], rows[r]
            p = rows[r][c]
            cleared = True
            for i in range(r + 1, len(rows)):
                if rows[i][c] != 0:
                    q = rows[i][c] // p
                    rows[i] = [a - q * b for a, b in zip(rows[i], rows[r])]
                    if rows[i][c] != 0:
                        cleared = False
            if cleared:
                break
        det *= abs(p)
        r += 1
    return det == 1


class TailBound(NamedTuple):
    xi: float
    l_star: int


def find_tail_bound(kernel: Kernel, r: float, l_max: int = 10_000) -> TailBound | None:
    """Least contraction factor xi < 1 with tail(r*L) <= xi * tail(L) on [L*, l_max].

    Ratios are computed from the kernel's exact-plus-bracket tails.  Since the
    suffix maximum of the ratio sequence is non-increasing, the search picks
    the first L whose suffix maximum is within 15% of the stabilized value at
    l_max.  Returns None when no xi < 1 exists over the scanned range.
    """
    if r <= 1:
        raise ValueError(f"ratio scale r must exceed 1, got {r}")
    ls = np.arange(1, l_max + 1)
    tails = np.array([kernel.tail_mass(float(L)) for L in ls])
    tails_r = np.array([kernel.tail_mass(r * float(L)) for L in ls])
    with np.errstate(divide="ignore", invalid="ignore"):
        ratios = np.where(tails > 0, tails_r / np.maximum(tails, 1e-300), 0.0)
    suffix = np.maximum.accumulate(ratios[::-1])[::-1]
    base = float(suffix[-1])
    if base >= 1.0:
        return None
    threshold = min(base * 1.15, 0.5 * (1.0 + base))
    idx = int(np.argmax(suffix <= threshold))
    if suffix[idx] > threshold:
        return None
    return TailBound(xi=float(suffix[idx]), l_star=int(ls[idx]))


# -- constructors ------------------------------------------------------------


def power_law(
    dimension: int, alpha: float, beta: float, cutoff: int | None = None, sim_cutoff=None
) -> Kernel:
    """Rates beta * |y|_1^-alpha."""
    return Kernel(
        dimension=dimension,
        family="power-law",
        alpha=float(alpha),
        beta=float(beta),
        cutoff=cutoff,
        sim_cutoff=sim_cutoff,
    )


def nearest_neighbor(dimension: int, beta: float) -> Kernel:
    """Rate beta to each of the 2d unit neighbors."""
    return Kernel(dimension=dimension, family="nearest-neighbor", beta=float(beta))


def finite_table(dimension: int, entries: dict) -> Kernel:
    """Explicit finite support: mapping offset tuple -> rate."""
    table = tuple(
        sorted(
            (tuple(int(c) for c in off), float(rate)) for off, rate in entries.items()
        )
    )
    return Kernel(dimension=dimension, family="finite-table", table=table)
