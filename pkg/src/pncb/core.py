"""Factor graphs, constellation operators and sparse codebook sets."""
from __future__ import annotations

import itertools
import json
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path

import numpy as np

SCHEMA_ID = "scma-codebook/1"


class StructureError(ValueError):
    """Inconsistent dimensions between factor graph, constellation and operators."""


class LabelError(ValueError):
    pass


class DegenerateError(ValueError):
    pass


def _frozen(a):
    a = np.array(a)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class FactorGraph:
    """Binary K x J incidence plus the operator slot used on every edge.

    ``slots[k, j]`` is the 0-based index of the psi slot that user j uses on
    resource k, or -1 where there is no edge. User j's mother-constellation
    dimensions are laid on its resources in ascending resource order.
    """

    F: np.ndarray
    slots: np.ndarray

    def __post_init__(self):
        F = _frozen(np.asarray(self.F, dtype=np.int64))
        if F.ndim != 2 or not np.isin(F, (0, 1)).all():
            raise StructureError("factor graph must be a 2-D 0/1 matrix")
        cols, rows = F.sum(axis=0), F.sum(axis=1)
        if len(set(cols.tolist())) != 1 or cols[0] == 0:
            raise StructureError(f"every user needs the same nonzero degree, got {cols.tolist()}")
        if len(set(rows.tolist())) != 1 or rows[0] == 0:
            raise StructureError(f"every resource needs the same nonzero degree, got {rows.tolist()}")
        slots = _frozen(np.asarray(self.slots, dtype=np.int64))
        if slots.shape != F.shape:
            raise StructureError("slot matrix shape differs from the factor graph")
        if ((slots >= 0) != (F == 1)).any():
            raise StructureError("slots must be set exactly on the edges of the graph")
        d_f = int(rows[0])
        for k in range(F.shape[0]):
            s = slots[k][F[k] == 1]
            if (s >= d_f).any() or len(set(s.tolist())) != len(s):
                raise StructureError(f"resource {k} needs {d_f} distinct slots, got {s.tolist()}")
        object.__setattr__(self, "F", F)
        object.__setattr__(self, "slots", slots)

    @classmethod
    def from_incidence(cls, F, slots=None) -> "FactorGraph":
        """Build a graph; without explicit slots, each resource numbers its users 0..d_f-1."""
        F = np.asarray(F, dtype=np.int64)
        if slots is None:
            slots = -np.ones_like(F)
            for k in range(F.shape[0]):
                users = np.flatnonzero(F[k])
                slots[k, users] = np.arange(len(users))
        return cls(F, slots)

    @property
    def K(self) -> int:
        return self.F.shape[0]

    @property
    def J(self) -> int:
        return self.F.shape[1]

    @property
    def N(self) -> int:
        return int(self.F[:, 0].sum())

    @property
    def d_f(self) -> int:
        return int(self.F[0].sum())

    @property
    def overload(self) -> float:
        return self.J / self.K

    def resources_of(self, j: int) -> np.ndarray:
        return np.flatnonzero(self.F[:, j])

    def users_on(self, k: int) -> np.ndarray:
        return np.flatnonzero(self.F[k])

    def mapping_matrix(self, j: int, psi) -> np.ndarray:
        """Combined K x N matrix V_j Psi_j of user j."""
        psi = np.asarray(psi, dtype=complex)
        V = np.zeros((self.K, self.N), dtype=complex)
        for n, k in enumerate(self.resources_of(j)):
            V[k, n] = psi[self.slots[k, j]]
        return V


def preset_4x6() -> FactorGraph:
    """The 4 x 6 graph (lambda = 150%) with the shared three-slot operator placement."""
    F = [
        [1, 0, 1, 0, 1, 0],
        [0, 1, 1, 0, 0, 1],
        [1, 0, 0, 1, 0, 1],
        [0, 1, 0, 1, 1, 0],
    ]
    slots = [
        [0, -1, 1, -1, 2, -1],
        [-1, 0, 1, -1, -1, 2],
        [2, -1, -1, 1, -1, 0],
        [-1, 2, -1, 1, 0, -1],
    ]
    return FactorGraph(F, slots)


def regular_graph(K: int, N: int) -> FactorGraph:
    """All C(K, N) placements of N resources, one user each (e.g. 5 x 10 for K=5, N=2)."""
    cols = list(itertools.combinations(range(K), N))
    F = np.zeros((K, len(cols)), dtype=np.int64)
    for j, c in enumerate(cols):
        F[list(c), j] = 1
    return FactorGraph.from_incidence(F)


PRESETS = {"4x6": preset_4x6, "5x10": lambda: regular_graph(5, 2)}


@dataclass(frozen=True)
class OperatorMatrix:
    """Per-slot amplitude E_i and rotation theta_i; psi_i = E_i exp(j theta_i)."""

    energy: tuple
    theta: tuple

    def __post_init__(self):
        E = tuple(float(e) for e in self.energy)
        th = tuple(float(t) for t in self.theta)
        if len(E) != len(th):
            raise StructureError("energy and theta need the same length")
        if any(e <= 0 for e in E):
            raise ValueError(f"energy factors must be positive, got {E}")
        if any(not 0.0 <= t <= np.pi for t in th):
            raise ValueError(f"rotation angles must lie in [0, pi], got {th}")
        object.__setattr__(self, "energy", E)
        object.__setattr__(self, "theta", th)

    @classmethod
    def identity(cls, d_f: int) -> "OperatorMatrix":
        return cls((1.0,) * d_f, (0.0,) * d_f)

    @property
    def psi(self) -> np.ndarray:
        return np.asarray(self.energy) * np.exp(1j * np.asarray(self.theta))

    @property
    def d_f(self) -> int:
        return len(self.energy)

    def budget(self) -> float:
        return float(sum(self.energy))


@dataclass(frozen=True, eq=False)
class CodebookSet:
    """J sparse K x M codebooks, ``codebooks[j]`` being user j's X_j."""

    codebooks: np.ndarray
    graph: FactorGraph
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        X = _frozen(np.asarray(self.codebooks, dtype=complex))
        if X.ndim != 3:
            raise StructureError("codebooks must be a J x K x M array")
        J, K, M = X.shape
        if (J, K) != (self.graph.J, self.graph.K):
            raise StructureError(f"codebooks are {J}x{K}, graph is {self.graph.J}x{self.graph.K}")
        if M < 2 or M & (M - 1):
            raise StructureError(f"codeword count must be a power of two, got {M}")
        object.__setattr__(self, "codebooks", X)

    @property
    def J(self) -> int:
        return self.codebooks.shape[0]

    @property
    def K(self) -> int:
        return self.codebooks.shape[1]

    @property
    def M(self) -> int:
        return self.codebooks.shape[2]

    @property
    def bits_per_user(self) -> int:
        return int(np.log2(self.M))

    def support_consistent(self) -> bool:
        nonzero = np.abs(self.codebooks).max(axis=2) > 0  # J x K
        return bool((nonzero == (self.graph.F.T == 1)).all())

    def average_energy(self) -> float:
        """Mean of ||w||^2 over uniformly drawn labels, computed exactly."""
        X = self.codebooks
        mean = X.mean(axis=2)  # J x K
        power = (np.abs(X) ** 2).mean(axis=2)
        s = mean.sum(axis=0)
        # E|sum_j x_j|^2 = sum_j E|x_j|^2 + |sum_j E x_j|^2 - sum_j |E x_j|^2
        return float(power.sum() + (np.abs(s) ** 2).sum() - (np.abs(mean) ** 2).sum())

    def scaled(self, c: float) -> "CodebookSet":
        return CodebookSet(self.codebooks * c, self.graph, dict(self.metadata))

    @cached_property
    def superimposed(self) -> "SuperimposedConstellation":
        return SuperimposedConstellation(self)


class SuperimposedConstellation:
    """Lazy view of the M**J superimposed codewords.

    Each resource k carries at most M**d_f distinct values; ``alphabet[k, c]``
    is the value for combination index c of the labels of the users on k
    (first user most significant).
    """

    def __init__(self, cbs: CodebookSet):
        fg = cbs.graph
        M, d_f = cbs.M, fg.d_f
        self.cbs = cbs
        self.M, self.J, self.K = M, cbs.J, cbs.K
        self.users = np.array([fg.users_on(k) for k in range(fg.K)])  # K x d_f
        weights = M ** np.arange(d_f - 1, -1, -1)
        self.strides = np.zeros((fg.K, fg.J), dtype=np.int64)
        for k in range(fg.K):
            self.strides[k, self.users[k]] = weights
        alphabet = np.zeros((fg.K, M**d_f), dtype=complex)
        for k in range(fg.K):
            grid = np.indices((M,) * d_f).reshape(d_f, -1)
            for pos, u in enumerate(self.users[k]):
                alphabet[k] += cbs.codebooks[u, k, grid[pos]]
        self.alphabet = _frozen(_snap(alphabet))

    def __len__(self) -> int:
        return self.M**self.J

    def combo_indices(self, labels) -> np.ndarray:
        """Map label tuples (..., J) to per-resource combination indices (..., K)."""
        labels = np.asarray(labels, dtype=np.int64)
        return labels @ self.strides.T

    def codewords(self, labels) -> np.ndarray:
        return self.alphabet[np.arange(self.K), self.combo_indices(labels)]

    def all_labels(self) -> np.ndarray:
        """All M**J label tuples in natural (user 0 most significant) order."""
        return np.indices((self.M,) * self.J).reshape(self.J, -1).T

    def iter_codewords(self, chunk: int = 1 << 14):
        total = len(self)
        digits = self.M ** np.arange(self.J - 1, -1, -1)
        for start in range(0, total, chunk):
            idx = np.arange(start, min(total, start + chunk))
            labels = (idx[:, None] // digits) % self.M
            yield labels, self.alphabet[np.arange(self.K), self.combo_indices(labels)]


def _snap(alphabet: np.ndarray, rtol: float = 1e-12) -> np.ndarray:
    """Merge values that differ only by summation roundoff.

    Sums that cancel to ~1e-16 would otherwise carry an arbitrary phase.
    """
    scale = np.sqrt((np.abs(alphabet) ** 2).mean()) or 1.0
    tol = rtol * scale
    out = np.where(np.abs(alphabet) <= tol, 0, alphabet)
    for row in out:
        for i in range(len(row)):
            close = np.abs(row[i + 1:] - row[i]) <= tol
            row[i + 1:][close] = row[i]
    return out


def superimpose(cbs: CodebookSet, labels) -> np.ndarray:
    """Sum of column ``labels[j]`` of every X_j."""
    labels = np.asarray(labels, dtype=np.int64)
    if labels.shape[-1] != cbs.J:
        raise LabelError(f"expected {cbs.J} labels, got {labels.shape[-1]}")
    if (labels < 0).any() or (labels >= cbs.M).any():
        raise LabelError(f"labels must lie in [0, {cbs.M})")
    sc = cbs.superimposed
    return sc.alphabet[np.arange(cbs.K), sc.combo_indices(labels)]


def build_codebooks(mc, ops: OperatorMatrix, fg: FactorGraph, metadata=None) -> CodebookSet:
    """X_j = V_j Psi_j C_MC for every user."""
    C = mc.matrix if hasattr(mc, "matrix") else np.asarray(mc)
    if C.shape[0] != fg.N:
        raise StructureError(f"mother constellation has {C.shape[0]} rows, users occupy {fg.N} resources")
    if ops.d_f != fg.d_f:
        raise StructureError(f"operator has {ops.d_f} slots, graph needs {fg.d_f}")
    psi = ops.psi
    X = np.stack([fg.mapping_matrix(j, psi) @ C for j in range(fg.J)])
    meta = {"energy": list(ops.energy), "theta": list(ops.theta)}
    if hasattr(mc, "to_dict"):
        meta["mother_constellation"] = mc.to_dict()
    meta.update(metadata or {})
    return CodebookSet(X, fg, meta)


def normalize_power(cbs: CodebookSet, budget: float) -> tuple[CodebookSet, float]:
    """Rescale so the average superimposed codeword energy equals ``budget``."""
    if budget <= 0:
        raise ValueError("budget must be positive")
    e = cbs.average_energy()
    if e <= 0:
        raise DegenerateError("codebook set has zero energy")
    c = float(np.sqrt(budget / e))
    out = cbs.scaled(c)
    out.metadata["power_budget"] = budget
    return out, c


# --- JSON interchange ---------------------------------------------------------

CODEBOOK_SCHEMA = {
    "type": "object",
    "required": ["schema", "K", "J", "M", "N", "factor_graph", "codebooks"],
    "properties": {
        "schema": {"const": SCHEMA_ID},
        "K": {"type": "integer", "minimum": 1},
        "J": {"type": "integer", "minimum": 1},
        "M": {"type": "integer", "minimum": 2},
        "N": {"type": "integer", "minimum": 1},
        "factor_graph": {
            "type": "array",
            "items": {"type": "array", "items": {"enum": [0, 1]}},
        },
        "codebooks": {
            "type": "array",
            "items": {
                "type": "array",
                "items": {
                    "type": "array",
                    "items": {
                        "type": "array",
                        "items": {"type": "number"},
                        "minItems": 2,
                        "maxItems": 2,
                    },
                },
            },
        },
        "metadata": {"type": "object"},
    },
}


class SchemaError(ValueError):
    def __init__(self, problems):
        self.problems = problems
        super().__init__("; ".join(f"{p}: {m}" for p, m in problems))


def _pointer(path) -> str:
    return "/" + "/".join(str(p) for p in path)


def validate_codebook_dict(doc: dict) -> None:
    """Raise SchemaError listing (JSON pointer, message) for every violation."""
    import jsonschema

    v = jsonschema.Draft202012Validator(CODEBOOK_SCHEMA)
    problems = [(_pointer(e.absolute_path), e.message) for e in v.iter_errors(doc)]
    if problems:
        raise SchemaError(sorted(problems))
    K, J, M, N = doc["K"], doc["J"], doc["M"], doc["N"]
    F = np.asarray(doc["factor_graph"])
    if F.shape != (K, J):
        problems.append(("/factor_graph", f"shape {F.shape} != ({K}, {J})"))
    elif not (F.sum(axis=0) == N).all():
        problems.append(("/factor_graph", f"every column needs exactly N={N} ones"))
    X = np.asarray(doc["codebooks"], dtype=float)
    if X.shape != (J, K, M, 2):
        problems.append(("/codebooks", f"shape {X.shape} != ({J}, {K}, {M}, 2)"))
    elif F.shape == (K, J):
        nz = np.abs(X).max(axis=(2, 3)) > 0
        for j, k in zip(*np.nonzero(nz != (F.T == 1))):
            problems.append((f"/codebooks/{j}/{k}", "support disagrees with factor_graph"))
    if problems:
        raise SchemaError(problems)


def codebook_to_dict(cbs: CodebookSet) -> dict:
    X = cbs.codebooks
    meta = dict(cbs.metadata)
    meta["slots"] = cbs.graph.slots.tolist()
    return {
        "schema": SCHEMA_ID,
        "K": cbs.K,
        "J": cbs.J,
        "M": cbs.M,
        "N": cbs.graph.N,
        "factor_graph": cbs.graph.F.tolist(),
        "codebooks": np.stack([X.real, X.imag], axis=-1).tolist(),
        "metadata": _jsonable(meta),
    }


def codebook_from_dict(doc: dict) -> CodebookSet:
    validate_codebook_dict(doc)
    meta = dict(doc.get("metadata", {}))
    try:
        fg = FactorGraph.from_incidence(doc["factor_graph"], meta.pop("slots", None))
    except StructureError as exc:
        raise SchemaError([("/factor_graph", str(exc))]) from exc
    X = np.asarray(doc["codebooks"], dtype=float)
    return CodebookSet(X[..., 0] + 1j * X[..., 1], fg, meta)


def save_codebook(cbs: CodebookSet, path) -> Path:
    path = Path(path)
    path.write_text(json.dumps(codebook_to_dict(cbs), indent=1) + "\n")
    return path


def load_codebook(path) -> CodebookSet:
    return codebook_from_dict(json.loads(Path(path).read_text()))


def _jsonable(x):
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, np.ndarray):
        return _jsonable(x.tolist())
    if isinstance(x, np.generic):
        return x.item()
    return x
