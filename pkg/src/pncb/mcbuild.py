"""N-dimensional mother constellations from permuted LP-PAM rows."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial.distance import pdist

from .lppam import PamMultiset

_ROUND = 12  # decimals used when comparing distance profiles


def _as_points(points) -> np.ndarray:
    p = np.asarray(points)
    if p.ndim == 1:
        p = p[:, None]
    if np.iscomplexobj(p):
        p = np.concatenate([p.real, p.imag], axis=1)
    return p.astype(float)


def med(points) -> float:
    """Minimum Euclidean distance over all pairs of rows of ``points``."""
    p = _as_points(points)
    if len(p) < 2:
        raise ValueError("need at least two points")
    return float(pdist(p).min())


@dataclass(frozen=True, eq=False)
class MotherConstellation:
    matrix: np.ndarray  # N x M, column m is codeword m, unit average energy
    permutations: tuple  # N index arrays, row n = c_m[perm_n]

    @classmethod
    def from_permutations(cls, cm, permutations) -> "MotherConstellation":
        values = cm.values if isinstance(cm, PamMultiset) else np.asarray(cm, dtype=float)
        perms = tuple(tuple(int(i) for i in p) for p in permutations)
        C = np.stack([values[list(p)] for p in perms]).astype(complex)
        # unit average codeword energy
        C /= np.sqrt((np.abs(C) ** 2).sum(axis=0).mean())
        C.setflags(write=False)
        return cls(C, perms)

    @property
    def N(self) -> int:
        return self.matrix.shape[0]

    @property
    def M(self) -> int:
        return self.matrix.shape[1]

    def columns(self) -> np.ndarray:
        return self.matrix.T

    def med(self) -> float:
        return med(self.columns())

    def average_energy(self) -> float:
        return float((np.abs(self.matrix) ** 2).sum(axis=0).mean())

    def to_dict(self) -> dict:
        return {
            "values": self.matrix.real.tolist(),
            "permutations": [list(p) for p in self.permutations],
        }


@dataclass(frozen=True)
class PermutationSearchConfig:
    restarts: int = 10
    max_sweeps: int = 1000
    rng_seed: int = 0

    def __post_init__(self):
        if self.restarts < 1:
            raise ValueError("restarts must be >= 1")


def _profile(rows: np.ndarray) -> np.ndarray:
    # sorted pairwise distances between columns; compared lexicographically
    return np.round(np.sort(pdist(rows.T)), _ROUND)


def _better(a: np.ndarray, b: np.ndarray) -> bool:
    diff = np.flatnonzero(a != b)
    return bool(diff.size) and a[diff[0]] > b[diff[0]]


def _climb(values: np.ndarray, perms: list, max_sweeps: int):
    """Steepest-ascent transposition search; returns (perms, profile)."""
    N, M = len(perms), len(values)
    rows = np.stack([values[p] for p in perms])
    best = _profile(rows)
    for _ in range(max_sweeps):
        cand = None
        for n in range(1, N):
            for i in range(M - 1):
                for k in range(i + 1, M):
                    if rows[n, i] == rows[n, k]:
                        continue
                    rows[n, [i, k]] = rows[n, [k, i]]
                    prof = _profile(rows)
                    rows[n, [i, k]] = rows[n, [k, i]]
                    # strict improvement only; first in (n, i, k) order wins ties
                    if _better(prof, best if cand is None else cand[0]):
                        cand = (prof, n, i, k)
        if cand is None:
            break
        best, n, i, k = cand
        rows[n, [i, k]] = rows[n, [k, i]]
        perms[n][[i, k]] = perms[n][[k, i]]
    return perms, best


def binary_switching(cm: PamMultiset, N: int, cfg: PermutationSearchConfig = PermutationSearchConfig()) -> MotherConstellation:
    """Best-of-restarts pairwise-swap search for N permutations maximizing MED.

    Row 0 keeps the identity permutation. Swap candidates are ranked by their
    sorted pairwise-distance profile (MED first, then the next-smallest
    distances), which makes every accepted swap a strict improvement.
    """
    if N < 1:
        raise ValueError("N must be >= 1")
    values = cm.values if isinstance(cm, PamMultiset) else np.asarray(cm, dtype=float)
    M = len(values)
    ident = np.arange(M)
    if N == 1:
        return MotherConstellation.from_permutations(values, [ident])
    seeds = np.random.SeedSequence(cfg.rng_seed).spawn(cfg.restarts)
    best = None
    for ss in seeds:
        rng = np.random.default_rng(ss)
        perms = [ident.copy()] + [rng.permutation(M) for _ in range(N - 1)]
        perms, prof = _climb(values, perms, cfg.max_sweeps)
        # earlier restarts win exact ties
        if best is None or _better(prof, best[0]):
            best = (prof, [p.copy() for p in perms])
    return MotherConstellation.from_permutations(values, best[1])


def codeword_distinctness_check(mc: MotherConstellation):
    """Return (all columns distinct, list of offending column pairs)."""
    cols = mc.columns()
    bad = [
        (a, b)
        for a in range(mc.M)
        for b in range(a + 1, mc.M)
        if np.array_equal(cols[a], cols[b])
    ]
    return not bad, bad
