"""Phase-noise-aware decision metric, pairwise error statistics and MPNM.

Under the small-angle model r_k = (|w_k| + n'_re + j(|w_k| theta_k + n'_im))
e^{j arg w_k}, the decision-metric difference eta = L_w - L_what between two
superimposed codewords has closed-form mean and variance, each a sum of
per-resource terms. The Q-function argument -mean/sqrt(variance) is the
pairwise figure of merit; its minimum over ordered pairs is the MPNM.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.special import erfc

from .core import CodebookSet

EBN0_CONVENTION = "Eb = E||w||^2 / (J log2 M); N0 = Eb 10^(-EbN0/10)"


class BudgetError(RuntimeError):
    """Exact enumeration would exceed the configured pair budget."""

    def __init__(self, required: int, budget: int):
        self.required, self.budget = required, budget
        super().__init__(
            f"exact enumeration needs {required} ordered pairs, budget is {budget}; "
            "use pruned mode"
        )


@dataclass(frozen=True)
class PnChannelParams:
    sigma_p2: float
    n0: float
    ebn0_db: float | None = None

    def __post_init__(self):
        if self.sigma_p2 < 0:
            raise ValueError("sigma_p2 must be >= 0")
        if not self.n0 > 0:
            raise ValueError("N0 must be > 0")

    @classmethod
    def from_ebn0(cls, cbs: CodebookSet, sigma_p2: float, ebn0_db: float) -> "PnChannelParams":
        eb = cbs.average_energy() / (cbs.J * cbs.bits_per_user)
        return cls(float(sigma_p2), eb * 10 ** (-ebn0_db / 10), float(ebn0_db))


def q_function(t):
    """Gaussian tail probability Q(t) = 0.5 erfc(t / sqrt(2))."""
    return 0.5 * erfc(np.asarray(t, dtype=float) / math.sqrt(2.0))


# --- per-resource quantities --------------------------------------------------

def metric_terms(r, w, sigma_p2: float, n0: float):
    """Per-resource contributions to L_w (broadcasting over r and w)."""
    h0 = n0 / 2
    aw = np.abs(w)
    rot = r * np.exp(-1j * np.angle(w))
    s2 = sigma_p2 * aw**2 + h0
    return (rot.real - aw) ** 2 / h0 + rot.imag**2 / s2 + np.log(s2)


def pn_decision_metric(r, w, p: PnChannelParams):
    """L_w summed over resources; ``w`` may carry leading candidate axes."""
    return metric_terms(np.asarray(r), np.asarray(w), p.sigma_p2, p.n0).sum(axis=-1)


def coefficients(w, wh, sigma_p2: float, n0: float) -> dict:
    """The a..i coefficient family plus E{V1}, E{V2} for each resource."""
    h0 = n0 / 2
    A2, B2 = np.abs(w) ** 2, np.abs(wh) ** 2
    delta = np.angle(w) - np.angle(wh)
    c2, s2 = np.cos(delta) ** 2, np.sin(delta) ** 2
    t_w = sigma_p2 * A2 + h0
    t_h = sigma_p2 * B2 + h0
    cross = (np.abs(w) * np.cos(delta) - np.abs(wh)) ** 2
    return {
        "delta": delta,
        "a": (A2 * s2 * sigma_p2 + h0) / h0,
        "b": cross / h0,
        "c": (A2 * c2 * sigma_p2 + h0) / t_h,
        "d": A2 * s2 / t_h,
        "e": A2 * s2 * sigma_p2 / t_h,
        "f": A2 * c2 * sigma_p2 / h0,
        "g": (B2 - A2 * c2) / h0,
        "h": t_w / h0,
        "i": t_h / h0,
        "EV1": (cross + A2 * s2 * sigma_p2 + h0) / h0,
        "EV2": (A2 * (s2 + sigma_p2 * c2) + h0) / t_h,
        "log_ratio": np.log(t_w / t_h),
        "sin2": s2,
        "cos2": c2,
    }


def resource_terms(w, wh, sigma_p2: float, n0: float):
    """Per-resource mean and variance of eta_k given w_k was sent."""
    co = coefficients(w, wh, sigma_p2, n0)
    a, b, c, d, e, f, g, h, i = (co[x] for x in "abcdefghi")
    mean = 2.0 + co["log_ratio"] - co["EV1"] - co["EV2"]
    var = (
        4 + 2 * a**2 + 4 * a * b + 2 * c**2 + 4 * c * d + 4 * e * f + 4 * e * g
        - 4 * b * e
        - 4 * co["sin2"] * (h + 1 / i)
        - 4 * co["cos2"] * (1 + h / i)
    )
    return mean, var


def _coincident(w, wh, n0: float, rtol: float = 1e-12):
    """Resources where w_k and what_k agree to roundoff; they contribute nothing to eta."""
    scale = np.maximum(np.maximum(np.abs(w), np.abs(wh)), math.sqrt(n0))
    return np.abs(w - wh) <= rtol * scale


@dataclass
class PairStats:
    mean: float
    variance: float
    q_arg: float
    records: list = field(default_factory=list, repr=False)


def pair_stats(w, wh, p: PnChannelParams) -> PairStats:
    w = np.atleast_1d(np.asarray(w, dtype=complex))
    wh = np.atleast_1d(np.asarray(wh, dtype=complex))
    mk, vk = resource_terms(w, wh, p.sigma_p2, p.n0)
    same = _coincident(w, wh, p.n0)
    mk, vk = np.where(same, 0.0, mk), np.where(same, 0.0, vk)
    mean, var = float(mk.sum()), float(vk.sum())
    if same.all():
        q = 0.0  # coincident codewords: identical statistics, maximally confusable
    elif not var > 0:
        raise FloatingPointError(f"non-positive eta variance {var!r} for a distinct pair")
    else:
        q = -mean / math.sqrt(var)
    co = coefficients(w, wh, p.sigma_p2, p.n0)
    records = [
        {**{key: float(co[key][k]) for key in ("delta", *"abcdefghi", "EV1", "EV2")},
         "mean": float(mk[k]), "variance": float(vk[k])}
        for k in range(len(w))
    ]
    return PairStats(mean, var, q, records)


def pairwise_pep(w, wh, p: PnChannelParams) -> float:
    return float(q_function(pair_stats(w, wh, p).q_arg))


# --- enumeration over the superimposed constellation -------------------------

@dataclass
class MetricReport:
    mpnm: float
    argmin: tuple  # (labels of w, labels of what)
    med: float
    pep_bound: float
    mode: str
    q: int | None
    samples: int
    pairs_enumerated: int
    pairs_total: int
    sigma_p2: float
    n0: float
    ebn0_db: float | None
    convention: str = EBN0_CONVENTION
    worst: tuple | None = field(default=None, repr=False)  # (lw, lh, q) of the lowest pairs kept

    def to_dict(self) -> dict:
        d = asdict(self)
        d.pop("worst")
        d["argmin"] = [list(map(int, self.argmin[0])), list(map(int, self.argmin[1]))]
        return d


def _pair_terms(w, wh, p: PnChannelParams):
    """Per-resource (mean, var, dist^2); resources where w_k == what_k contribute 0."""
    mean, var = resource_terms(w, wh, p.sigma_p2, p.n0)
    same = _coincident(w, wh, p.n0)
    return np.where(same, 0.0, mean), np.where(same, 0.0, var), np.abs(w - wh) ** 2


def _q_from(m, v, d2):
    bad = v <= 0
    if bad.any():
        if (d2[bad] > 0).any():
            raise FloatingPointError("non-positive eta variance for a distinct pair")
        v = np.where(bad, 1.0, v)
        m = np.where(bad, 0.0, m)  # coincident codewords: maximally confusable
    return -m / np.sqrt(v)


def pair_q_args(cbs: CodebookSet, lw, lh, p: PnChannelParams):
    """Vectorized (q_arg, dist^2) for label arrays ``lw``, ``lh`` of shape (n, J)."""
    sc = cbs.superimposed
    mk, vk, dk = _pair_terms(sc.codewords(lw), sc.codewords(lh), p)
    d2 = dk.sum(axis=-1)
    return _q_from(mk.sum(axis=-1), vk.sum(axis=-1), d2), d2


class _Accumulator:
    def __init__(self, M: int, J: int, with_bound: bool, with_med: bool = True, keep: int = 0):
        self.with_med = with_med
        self.keep = keep
        self.kept = (np.empty((0, J), int), np.empty((0, J), int), np.empty(0))
        self.best = np.inf
        self.arg = None
        self.med2 = np.inf
        self.bound_sum = 0.0
        self.count = 0
        self.with_bound = with_bound
        self.M, self.J = M, J

    def add(self, q, d2, lw, lh, mult: int = 1):
        i = int(np.argmin(q))
        if q[i] < self.best:
            self.best = float(q[i])
            self.arg = (lw[i].copy(), lh[i].copy())
        if d2 is not None:
            self.med2 = min(self.med2, float(d2.min()))
        self.count += len(q) * mult
        if self.with_bound:
            self.bound_sum += float(q_function(q).sum()) * mult
        if self.keep:
            self.offer(q, lambda idx: (lw[idx], lh[idx]))

    def offer(self, q, labels_of):
        """Merge the lowest-q candidates into the kept set; ``labels_of`` maps indices to labels."""
        k = min(self.keep, q.size)
        idx = np.argpartition(q, k - 1)[:k] if k < q.size else np.arange(q.size)
        idx = idx[q[idx] < np.inf]
        if len(self.kept[2]) >= self.keep:
            idx = idx[q[idx] < self.kept[2].max()]
        if not len(idx):
            return
        lw, lh = labels_of(idx)
        merged = [np.concatenate([a, b]) for a, b in zip(self.kept, (lw, lh, q[idx]))]
        order = np.argsort(merged[2], kind="stable")[: self.keep]
        self.kept = tuple(a[order] for a in merged)


class _StateSpace:
    """Pairs (w, what) as per-user states s = M * label + label_hat.

    Every resource table becomes an array over the states of its d_f users,
    and the statistics of all pairs in a product of per-user state sets are
    broadcast sums of those arrays.
    """

    def __init__(self, cbs: CodebookSet, p: PnChannelParams):
        sc = cbs.superimposed
        self.sc, self.p = sc, p
        self.M, self.J, self.d = sc.M, sc.J, cbs.graph.d_f
        self.diag = np.arange(self.M) * (self.M + 1)
        self.offdiag = np.setdiff1d(np.arange(self.M * self.M), self.diag)
        self._cache = {}

    def _tables(self, k: int, allowed_k: list):
        """(mean, var, dist^2) of resource k over the product of its users' state sets."""
        key = (k,) + tuple(a.tobytes() for a in allowed_k)
        if key not in self._cache:
            grid = np.meshgrid(*allowed_k, indexing="ij")
            weights = self.M ** np.arange(self.d - 1, -1, -1)
            cw = sum(wt * (g // self.M) for wt, g in zip(weights, grid))
            ch = sum(wt * (g % self.M) for wt, g in zip(weights, grid))
            A = self.sc.alphabet[k]
            self._cache[key] = _pair_terms(A[cw], A[ch], self.p)
        return self._cache[key]

    def run(self, acc: _Accumulator, allowed: list, resources, mult: int = 1,
            exclude_equal: bool = False, chunk: int = 1 << 20):
        J, users = self.J, self.sc.users
        sizes = [len(a) for a in allowed]
        lead = 0
        while lead < J and int(np.prod(sizes[lead:])) > chunk:
            lead += 1
        need_d2 = acc.with_med
        tabs = [self._tables(k, [allowed[u] for u in users[k]]) for k in resources]
        sub = {name: [t[n] for t in tabs] for n, name in enumerate(("mean", "var", "dist2"))}
        is_diag = [np.isin(a, self.diag) for a in allowed]
        rest_shape = sizes[lead:]
        for head in itertools.product(*[range(n) for n in sizes[:lead]]):
            sums = {
                name: self._sum(sub[name], resources, head, lead, rest_shape)
                for name in ("mean", "var") + (("dist2",) if need_d2 else ())
            }
            m, v = sums["mean"], sums["var"]
            d2 = sums.get("dist2")
            if (v <= 0).any() and d2 is None:
                d2 = self._sum(sub["dist2"], resources, head, lead, rest_shape)
            qa = -m / np.sqrt(v) if d2 is None else _q_from(m, v, d2)
            excluded = 0
            if exclude_equal and all(is_diag[u][h] for u, h in enumerate(head)):
                # w == what: every remaining user also in a diagonal state
                mask = np.ones((1,) * len(rest_shape), dtype=bool)
                for a, u in enumerate(range(lead, J)):
                    shp = [1] * len(rest_shape)
                    shp[a] = sizes[u]
                    mask = mask & is_diag[u].reshape(shp)
                mask = np.broadcast_to(mask, rest_shape).ravel()
                excluded = int(mask.sum())
                if excluded == qa.size:
                    continue
                qa = np.where(mask, np.inf, qa)
                if d2 is not None:
                    d2 = np.where(mask, np.inf, d2)
            i = int(np.argmin(qa))
            if qa[i] < acc.best:
                acc.best = float(qa[i])
                acc.arg = self._labels(allowed, head, np.unravel_index(i, rest_shape))
            if acc.with_med:
                acc.med2 = min(acc.med2, float(d2.min()))
            acc.count += (qa.size - excluded) * mult
            if acc.with_bound:
                acc.bound_sum += float(q_function(qa).sum()) * mult
            if acc.keep:
                acc.offer(qa, lambda idx: self._labels(allowed, head, np.unravel_index(idx, rest_shape)))

    def _sum(self, tables, resources, head, lead, rest_shape):
        total = None
        for k, arr in zip(resources, tables):
            sl, shp = [], [1] * len(rest_shape)
            for u in self.sc.users[k]:
                sl.append(head[u] if u < lead else slice(None))
            part = arr[tuple(sl)]
            free = [u - lead for u in self.sc.users[k] if u >= lead]
            for a, n in zip(free, part.shape):
                shp[a] = n
            part = part.reshape(shp)
            total = part + 0.0 if total is None else total + part
        return np.broadcast_to(total, rest_shape).ravel()

    def _labels(self, allowed, head, rest):
        """Labels of one pair (scalar ``rest``) or of many (``rest`` of index arrays, users last)."""
        idx = tuple(head) + tuple(rest)
        n = np.shape(idx[-1])
        states = np.stack([np.broadcast_to(allowed[u][i], n) for u, i in enumerate(idx)], axis=-1)
        return states // self.M, states % self.M


def _blocks(F: np.ndarray, q: int):
    """(S, touched resources, users sharing them) for every user subset |S| <= q."""
    J = F.shape[1]
    for size in range(1, q + 1):
        for S in itertools.combinations(range(J), size):
            R = np.flatnonzero(F[:, list(S)].any(axis=1)).tolist()
            U = set(np.flatnonzero(F[R].any(axis=0)).tolist()) | set(S)
            yield list(S), R, U


def _enumerate_exact(space: _StateSpace, acc: _Accumulator, chunk: int):
    everything = [np.arange(space.M * space.M)] * space.J
    space.run(acc, everything, list(range(space.sc.K)), exclude_equal=True, chunk=chunk)


def _enumerate_pruned(space: _StateSpace, acc: _Accumulator, q: int, chunk: int):
    M, J = space.M, space.J
    for S, R, U in _blocks(space.sc.cbs.graph.F, q):
        allowed = [
            space.offdiag if j in S else space.diag if j in U else space.diag[:1]
            for j in range(J)
        ]
        space.run(acc, allowed, R, mult=M ** (J - len(U)), chunk=chunk)


def mpnm(
    cbs: CodebookSet,
    p: PnChannelParams,
    mode: str = "exact",
    q: int = 2,
    samples: int = 100_000,
    seed: int = 0,
    max_pairs: int = 1 << 26,
    with_bound: bool = True,
    with_med: bool = True,
    chunk: int = 1 << 20,
    keep: int = 0,
) -> MetricReport:
    """Minimum Q-argument over ordered pairs of distinct superimposed codewords.

    ``exact`` visits all M^J (M^J - 1) ordered pairs. ``pruned`` visits every
    pair whose label tuples differ in at most ``q`` users, then ``samples``
    random pairs; its MPNM is an upper bound on the exact one and its union
    bound covers only the enumerated classes. ``keep`` > 0 also returns the
    labels of that many lowest-q pairs in ``report.worst``.
    """
    P = cbs.M**cbs.J
    total = P * (P - 1)
    space = _StateSpace(cbs, p)
    acc = _Accumulator(cbs.M, cbs.J, with_bound, with_med, keep)
    if mode == "exact":
        if total > max_pairs:
            raise BudgetError(total, max_pairs)
        _enumerate_exact(space, acc, chunk)
        samples, q = 0, None
    elif mode == "pruned":
        if q < 1:
            raise ValueError("q must be >= 1")
        _enumerate_pruned(space, acc, min(q, cbs.J), chunk)
        if samples:
            enumerated = acc.count
            rng = np.random.default_rng(seed)
            lw = rng.integers(0, cbs.M, (samples, cbs.J))
            lh = rng.integers(0, cbs.M, (samples, cbs.J))
            same = (lw == lh).all(axis=1)
            while same.any():
                lh[same] = rng.integers(0, cbs.M, (int(same.sum()), cbs.J))
                same = (lw == lh).all(axis=1)
            acc.with_bound = False
            for s in range(0, samples, chunk):
                qa, d2 = pair_q_args(cbs, lw[s:s + chunk], lh[s:s + chunk], p)
                acc.add(qa, d2, lw[s:s + chunk], lh[s:s + chunk])
            acc.with_bound = with_bound
            acc.count = enumerated + samples
    else:
        raise ValueError(f"unknown mode {mode!r}")
    return MetricReport(
        mpnm=acc.best,
        argmin=acc.arg,
        med=math.sqrt(acc.med2) if with_med else float("nan"),
        pep_bound=acc.bound_sum / P if with_bound else float("nan"),
        mode=mode,
        q=q,
        samples=samples,
        pairs_enumerated=acc.count,
        pairs_total=total,
        sigma_p2=p.sigma_p2,
        n0=p.n0,
        ebn0_db=p.ebn0_db,
        worst=acc.kept if keep else None,
    )


def pep_union_bound(cbs: CodebookSet, p: PnChannelParams, **kw) -> float:
    """(1 / M^J) sum_w sum_{what != w} Q(q_arg(w, what)) under the chosen enumeration."""
    return mpnm(cbs, p, **kw).pep_bound
