"""One-dimensional LP-PAM constellations.

A length-M LP-PAM multiset holds T distinct, symmetric amplitude levels;
the remaining M - T entries are overlapped copies of the lowest-energy
levels.
"""
from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field

import numpy as np


class LpPamError(ValueError):
    pass


def n_alpha(T: int) -> int:
    """Number of scattering ratios that parametrize a T-point C_T."""
    if T < 2:
        raise LpPamError(f"T must be >= 2, got {T}")
    half = T // 2 if T % 2 == 0 else (T - 1) // 2
    return half - 1


@dataclass(frozen=True)
class LpPamSpec:
    M: int
    T: int
    alpha: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, "alpha", tuple(float(a) for a in self.alpha))
        if self.M < 2 or self.M & (self.M - 1):
            raise LpPamError(f"M must be a power of two >= 2, got {self.M}")
        if not 2 <= self.T <= self.M:
            raise LpPamError(f"need 2 <= T <= M, got T={self.T}, M={self.M}")
        if len(self.alpha) != n_alpha(self.T):
            raise LpPamError(
                f"T={self.T} takes {n_alpha(self.T)} scattering ratios, got {len(self.alpha)}"
            )
        if any(a < 1.0 for a in self.alpha):
            raise LpPamError(f"scattering ratios must be >= 1, got {self.alpha}")

    def build(self) -> "PamMultiset":
        return normalize_unit_energy(overlap_to_cm(build_ct(self.T, self.alpha), self.M))


@dataclass(frozen=True)
class PamMultiset:
    values: np.ndarray  # sorted, length M
    multiplicity: dict = field(compare=False)

    @classmethod
    def from_values(cls, values) -> "PamMultiset":
        v = np.sort(np.asarray(values, dtype=float))
        v.setflags(write=False)
        return cls(v, dict(Counter(v.tolist())))

    @property
    def M(self) -> int:
        return len(self.values)

    @property
    def distinct(self) -> np.ndarray:
        return np.unique(self.values)

    def average_energy(self) -> float:
        return float(np.mean(self.values**2))


def build_ct(T: int, alpha=()) -> np.ndarray:
    """Distinct levels ``{±r_1, ..., ±r_h}`` (plus 0 when T is odd), with r_1 = 1."""
    alpha = tuple(float(a) for a in alpha)
    if len(alpha) != n_alpha(T):
        raise LpPamError(f"T={T} takes {n_alpha(T)} scattering ratios, got {len(alpha)}")
    if any(a < 1.0 for a in alpha):
        raise LpPamError(f"scattering ratios must be >= 1, got {alpha}")
    r = np.array((1.0,) + alpha)
    pts = np.concatenate([-r, r] + ([np.zeros(1)] if T % 2 else []))
    return np.sort(pts)


def overlap_to_cm(ct, M: int) -> PamMultiset:
    """Extend the T distinct levels to M entries.

    Surplus entries go to the smallest nonzero magnitude in ± pairs, so the
    multiset stays symmetric; an odd surplus puts its single extra entry on
    the zero level, and is rejected when there is none.
    """
    ct = np.sort(np.asarray(ct, dtype=float))
    T = len(ct)
    if M < T:
        raise LpPamError(f"M={M} is smaller than T={T}")
    if not np.allclose(ct, -ct[::-1]):
        raise LpPamError("C_T must be symmetric about zero")
    surplus = M - T
    has_zero = bool(np.any(ct == 0.0))
    mult = Counter(ct.tolist())
    if surplus % 2:
        if not has_zero:
            raise LpPamError(
                f"M - T = {surplus} is odd and C_T has no zero level; cannot stay symmetric"
            )
        mult[0.0] += 1
        surplus -= 1
    positive = sorted(v for v in mult if v > 0)
    if surplus and not positive:
        raise LpPamError("no nonzero level to overlap")
    if surplus:
        r1 = positive[0]
        mult[r1] += surplus // 2
        mult[-r1] += surplus // 2
    values = [v for v, c in mult.items() for _ in range(c)]
    return PamMultiset.from_values(values)


def normalize_unit_energy(pm: PamMultiset) -> PamMultiset:
    e = pm.average_energy()
    if e == 0.0:
        raise LpPamError("cannot normalize an all-zero multiset")
    return PamMultiset.from_values(pm.values / np.sqrt(e))
