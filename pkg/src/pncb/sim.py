"""Monte-Carlo downlink link simulation under AWGN and Gaussian phase noise."""
from __future__ import annotations

import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from .core import CodebookSet
from .pnmetrics import BudgetError, PnChannelParams, metric_terms

Z95 = 1.959963984540054


@dataclass(frozen=True)
class ChannelDraw:
    """Per-frame phases (n, K) and complex noise (n, K)."""

    theta: np.ndarray
    noise: np.ndarray

    @classmethod
    def draw(cls, n: int, K: int, p: PnChannelParams, rng: np.random.Generator) -> "ChannelDraw":
        # unit draws first, then scaling: equal seeds give paired channels across (sigma_p2, N0)
        z = rng.standard_normal((3, n, K))
        theta = math.sqrt(p.sigma_p2) * z[0]
        noise = math.sqrt(p.n0 / 2) * (z[1] + 1j * z[2])
        return cls(theta, noise)


def transmit(cbs: CodebookSet, labels, p: PnChannelParams, rng: np.random.Generator,
             draw: ChannelDraw | None = None) -> np.ndarray:
    """r = w e^{j theta} + n for label tuples (..., J)."""
    labels = np.asarray(labels)
    single = labels.ndim == 1
    labels = np.atleast_2d(labels)
    w = cbs.superimposed.codewords(labels)
    if draw is None:
        draw = ChannelDraw.draw(len(labels), cbs.K, p, rng)
    r = w * np.exp(1j * draw.theta) + draw.noise
    return r[0] if single else r


# --- detectors ----------------------------------------------------------------

def _resource_metric(r, cbs: CodebookSet, p: PnChannelParams, metric: str) -> np.ndarray:
    """(n, K, M**d_f) per-resource metric of every local symbol combination (lower is better)."""
    A = cbs.superimposed.alphabet[None]
    r = r[..., None]
    if metric == "euclidean" or p.sigma_p2 == 0.0:
        # at sigma_p2 = 0 the pn-aware metric is |r - w|^2 / (N0/2) plus a constant
        return np.abs(r - A) ** 2 / (p.n0 / 2)
    if metric == "pn-aware":
        return metric_terms(r, A, p.sigma_p2, p.n0)
    raise ValueError(f"unknown metric {metric!r}")


def detect_ml(r, cbs: CodebookSet, p: PnChannelParams, metric: str = "pn-aware",
              max_codewords: int = 1 << 16, chunk: int = 256) -> np.ndarray:
    """Exhaustive decision over all M**J superimposed codewords; returns labels (n, J)."""
    sc = cbs.superimposed
    if len(sc) > max_codewords:
        raise BudgetError(len(sc), max_codewords)
    r = np.atleast_2d(r)
    combos = sc.combo_indices(sc.all_labels())  # P x K
    out = np.empty(len(r), dtype=np.int64)
    for s in range(0, len(r), chunk):
        loc = _resource_metric(r[s:s + chunk], cbs, p, metric)
        total = loc[:, 0, combos[:, 0]]
        for k in range(1, sc.K):
            total = total + loc[:, k, combos[:, k]]
        out[s:s + chunk] = np.argmin(total, axis=1)
    return sc.all_labels()[out]


@dataclass
class MpaOutput:
    labels: np.ndarray  # (n, J)
    posteriors: np.ndarray  # (n, J, M)


def _lse(x, axes):
    """log-sum-exp over ``axes`` (stable; axes are removed)."""
    m = x.max(axis=axes, keepdims=True)
    out = np.log(np.exp(x - m).sum(axis=axes, keepdims=True)) + m
    return out.squeeze(axis=axes)


def detect_mpa(r, cbs: CodebookSet, p: PnChannelParams, iters: int = 8,
               variant: str = "pn-aware", damping: float = 0.0) -> MpaOutput:
    """Log-domain sum-product detection on the factor graph.

    Function node k holds the log-likelihood of r_k for every combination of
    its d_f users' symbols: -|r_k - w_k|^2 / N0 (``standard``) or the
    bivariate phase-noise density with its log-normalizer (``pn-aware``).
    """
    if iters < 1:
        raise ValueError("iters must be >= 1")
    metric = {"standard": "euclidean", "pn-aware": "pn-aware"}.get(variant)
    if metric is None:
        raise ValueError(f"unknown MPA variant {variant!r}")
    sc = cbs.superimposed
    M, K, J = sc.M, sc.K, sc.J
    users = sc.users
    d = users.shape[1]
    r = np.atleast_2d(r)
    n = len(r)
    f = -0.5 * _resource_metric(r, cbs, p, metric)
    f = f.reshape((n, K) + (M,) * d)
    # edge (k, i) is slot i of resource k; ek[j], ei[j] list the N edges of user j
    ek, ei = np.nonzero(users[None] == np.arange(J)[:, None, None])[1:]
    ek, ei = ek.reshape(J, -1), ei.reshape(J, -1)
    # mu: user -> resource messages, nu: resource -> user messages, both (n, K, d, M) log-probabilities
    mu = np.full((n, K, d, M), -math.log(M))
    nu = np.zeros((n, K, d, M))
    for it in range(iters):
        new_nu = np.empty_like(nu)
        for i in range(d):
            t = f
            for i2 in range(d):
                if i2 != i:
                    shp = [n, K] + [1] * d
                    shp[i2 + 2] = M
                    t = t + mu[:, :, i2].reshape(shp)
            msg = _lse(t, tuple(a + 2 for a in range(d) if a != i))
            new_nu[:, :, i] = msg - _lse(msg, (2,))[..., None]
        nu = (1 - damping) * new_nu + damping * nu if it else new_nu
        ne = nu[:, ek, ei]  # (n, J, N, M)
        m = ne.sum(axis=2, keepdims=True) - ne
        mu[:, ek, ei] = m - _lse(m, (3,))[..., None]
        if not (np.isfinite(nu).all() and np.isfinite(mu).all()):
            bad = np.argwhere(~np.isfinite(nu))
            raise FloatingPointError(
                f"non-finite MPA message at iteration {it}: first (frame, resource, slot, symbol) "
                f"{bad[0].tolist() if len(bad) else None}; r = {r[bad[0][0]] if len(bad) else None}"
            )
    total = nu[:, ek, ei].sum(axis=2)  # (n, J, M)
    post = np.exp(total - _lse(total, (2,))[..., None])
    return MpaOutput(post.argmax(axis=2), post)


DETECTORS = ("ml-euclidean", "ml-pn", "mpa-standard", "mpa-pn")


def detect(detector: str, r, cbs: CodebookSet, p: PnChannelParams, iters: int = 8) -> np.ndarray:
    if detector == "ml-euclidean":
        return detect_ml(r, cbs, p, "euclidean")
    if detector == "ml-pn":
        return detect_ml(r, cbs, p, "pn-aware")
    if detector == "mpa-standard":
        return detect_mpa(r, cbs, p, iters, "standard").labels
    if detector == "mpa-pn":
        return detect_mpa(r, cbs, p, iters, "pn-aware").labels
    raise ValueError(f"unknown detector {detector!r}; choose from {DETECTORS}")


# --- BER estimation -----------------------------------------------------------

def _popcount(x: np.ndarray) -> np.ndarray:
    x = x.astype(np.int64)
    c = np.zeros_like(x)
    while x.any():
        c += x & 1
        x = x >> 1
    return c


def batch_frames(cbs: CodebookSet, p: PnChannelParams, n: int, rng: np.random.Generator):
    """Uniform labels, their channel draw and the received vectors for one batch."""
    labels = rng.integers(0, cbs.M, (n, cbs.J))
    draw = ChannelDraw.draw(n, cbs.K, p, rng)
    return labels, transmit(cbs, labels, p, rng, draw)


def _batch_rng(seed: int, b: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(b,)))


def _run_batch(args):
    cbs, p, detector, iters, seed, b, n = args
    labels, r = batch_frames(cbs, p, n, _batch_rng(seed, b))
    est = detect(detector, r, cbs, p, iters)
    errs = _popcount(labels ^ est)  # natural binary labels
    return errs.sum(axis=0), int((labels != est).any(axis=1).sum()), n


def wilson_interval(k: int, n: int, z: float = Z95):
    if n == 0:
        return 0.0, 1.0
    ph = k / n
    den = 1 + z * z / n
    c = (ph + z * z / (2 * n)) / den
    h = z * math.sqrt(ph * (1 - ph) / n + z * z / (4 * n * n)) / den
    return max(0.0, c - h), min(1.0, c + h)


def normal_interval(k: int, n: int, z: float = Z95):
    """95% normal-approximation interval; rule-of-three upper bound when k = 0."""
    if n == 0:
        return 0.0, 1.0
    if k == 0:
        return 0.0, min(1.0, 3.0 / n)
    ph = k / n
    h = z * math.sqrt(ph * (1 - ph) / n)
    return max(0.0, ph - h), min(1.0, ph + h)


@dataclass
class SimResult:
    detector: str
    sigma_p2: float
    ebn0_db: float | None
    n0: float
    bits: int
    bit_errors: int
    ber: float
    ber_ci: tuple
    user_ber: list
    frames: int
    frame_errors: int
    ser: float
    ser_ci: tuple
    censored: bool
    rng_seed: int
    workers: int
    wall_time: float = field(compare=False)

    def to_dict(self) -> dict:
        return asdict(self)


def run_ber(cbs: CodebookSet, p: PnChannelParams, detector: str = "ml-pn", min_errors: int = 400,
            max_bits: int = 20_000_000, rng_seed: int = 0, workers: int = 1, batch: int = 2000,
            iters: int = 8) -> SimResult:
    """Simulate until ``min_errors`` bit errors or ``max_bits`` bits.

    Batch b always draws from the stream (rng_seed, b) and batches are
    consumed in order, so counters depend only on the seed.
    """
    t0 = time.perf_counter()
    bpf = cbs.J * int(math.log2(cbs.M))
    max_frames = max(1, -(-max_bits // bpf))
    user_err = np.zeros(cbs.J, dtype=np.int64)
    frames = frame_err = 0
    b = 0
    pool = ProcessPoolExecutor(workers) if workers > 1 else None
    try:
        while frames < max_frames and user_err.sum() < min_errors:
            jobs = []
            for _ in range(max(1, workers)):
                start = b * batch
                if start >= max_frames:
                    break
                jobs.append((cbs, p, detector, iters, rng_seed, b, min(batch, max_frames - start)))
                b += 1
            results = pool.map(_run_batch, jobs) if pool else map(_run_batch, jobs)
            for ue, fe, n in results:
                if frames >= max_frames or user_err.sum() >= min_errors:
                    break  # later batches of this round are discarded to keep counters seed-only
                user_err += ue
                frame_err += fe
                frames += n
    finally:
        if pool:
            pool.shutdown()
    bits = frames * bpf
    errs = int(user_err.sum())
    return SimResult(
        detector=detector,
        sigma_p2=p.sigma_p2,
        ebn0_db=p.ebn0_db,
        n0=p.n0,
        bits=bits,
        bit_errors=errs,
        ber=errs / bits,
        ber_ci=normal_interval(errs, bits),
        user_ber=(user_err / (frames * math.log2(cbs.M))).tolist(),
        frames=frames,
        frame_errors=frame_err,
        ser=frame_err / frames,
        ser_ci=normal_interval(frame_err, frames),
        censored=errs == 0,
        rng_seed=rng_seed,
        workers=workers,
        wall_time=time.perf_counter() - t0,
    )


@dataclass
class PairedComparison:
    """Frame-level comparison of two detectors on identical frames."""

    frames: int
    errors_a: int
    errors_b: int
    only_a: int  # frames wrong for a, right for b
    only_b: int
    diff: float  # SER_a - SER_b
    diff_ci: tuple


def compare_detectors(cbs: CodebookSet, p: PnChannelParams, det_a: str, det_b: str,
                      frames: int = 100_000, rng_seed: int = 0, batch: int = 2000) -> PairedComparison:
    ea = eb = oa = ob = 0
    for b in range(-(-frames // batch)):
        n = min(batch, frames - b * batch)
        labels, r = batch_frames(cbs, p, n, _batch_rng(rng_seed, b))
        wa = (detect(det_a, r, cbs, p) != labels).any(axis=1)
        wb = (detect(det_b, r, cbs, p) != labels).any(axis=1)
        ea += int(wa.sum())
        eb += int(wb.sum())
        oa += int((wa & ~wb).sum())
        ob += int((wb & ~wa).sum())
    diff = (oa - ob) / frames
    # variance of the mean of per-frame differences in {-1, 0, 1}
    var = ((oa + ob) / frames - diff**2) / frames
    h = Z95 * math.sqrt(max(var, 0.0))
    return PairedComparison(frames, ea, eb, oa, ob, diff, (diff - h, diff + h))
