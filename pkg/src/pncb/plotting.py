"""Static figures for design traces, BER sweeps and constellations."""
from __future__ import annotations

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

STYLE = {
    "figure.figsize": (5.0, 3.6),
    "font.size": 9,
    "axes.grid": True,
    "grid.alpha": 0.3,
    "legend.fontsize": 7,
    "savefig.dpi": 150,
}
# fixed metadata so reruns give identical bytes
_META = {"Software": None}


def _save(fig, path):
    fig.tight_layout()
    fig.savefig(path, metadata=_META)
    plt.close(fig)
    return path


def plot_trace(trace, path, title: str = ""):
    """Objective and best-so-far against evaluation index."""
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        t = np.asarray(trace, dtype=float)
        if len(t):
            ok = np.isfinite(t[:, 1])
            ax.plot(t[ok, 0], t[ok, 1], ".", ms=1.5, alpha=0.4, label="evaluation")
            ax.plot(t[:, 0], t[:, 2], "-", lw=1.2, label="best so far")
        ax.set_xlabel("evaluation")
        ax.set_ylabel("MPNM")
        ax.set_title(title)
        ax.legend()
        return _save(fig, path)


def plot_ber(rows, path, value: str = "ber"):
    """One curve per (codebook, detector, sigma_p2); ``rows`` are dicts from a results table."""
    curves = {}
    for r in rows:
        key = (r["codebook"], r["detector"], float(r["sigma_p2"]))
        cens = str(r.get("censored", "")).lower() in ("1", "true")
        y = float(r[f"{value}_hi"]) if cens else float(r[value])
        curves.setdefault(key, []).append((float(r["ebn0_db"]), y, cens))
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        for (cb, det, s2), pts in sorted(curves.items()):
            pts.sort()
            x = np.array([p[0] for p in pts])
            y = np.array([p[1] for p in pts])
            cens = np.array([p[2] for p in pts])
            line, = ax.semilogy(x[~cens], y[~cens], "o-", ms=3, lw=1, label=f"{cb} {det} $\\sigma_p^2$={s2:g}")
            if cens.any():
                # zero-error points: upper confidence bound only
                ax.semilogy(x[cens], y[cens], "v", ms=4, color=line.get_color())
        ax.set_xlabel("$E_b/N_0$ (dB)")
        ax.set_ylabel(value.upper())
        ax.legend(loc="lower left")
        return _save(fig, path)


def plot_constellation(points, path, title: str = ""):
    """Scatter of complex points (e.g. one resource of a superimposed alphabet)."""
    z = np.asarray(points).ravel()
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(3.6, 3.6))
        ax.plot(z.real, z.imag, ".", ms=4)
        ax.set_aspect("equal")
        ax.set_xlabel("in-phase")
        ax.set_ylabel("quadrature")
        ax.set_title(title)
        return _save(fig, path)
