"""Static SVG plots rendered from ``report.json`` files."""
from __future__ import annotations

import json
import re
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

__all__ = ["emit_plots", "PlotError"]

# fixed ids and no timestamp keep the SVG bytes reproducible
plt.rcParams["svg.hashsalt"] = "jumphedge"
_SVG_META = {"Date": None}


class PlotError(ValueError):
    pass


def _need(report: dict, *keys):
    cur = report
    for k in keys:
        if not isinstance(cur, dict) or k not in cur:
            raise PlotError(f"report is missing field {'/'.join(keys)}")
        cur = cur[k]
    return cur


def _slug(text: str) -> str:
    text = text.replace("-", "m")
    return re.sub(r"[^A-Za-z0-9]+", "_", text).strip("_") or "measure"


def _save(fig, path: Path) -> Path:
    fig.tight_layout()
    fig.savefig(path, format="svg", metadata=_SVG_META)
    plt.close(fig)
    return path


def band_plots(report: dict, out: Path) -> list[Path]:
    """Checkpoint mean of the discounted hedging error with a 3-stderr band, one per measure."""
    sub = _need(report, "submartingale")
    t = np.asarray(_need(sub, "checkpoints"), dtype=float)
    files = []
    for m in _need(sub, "per_measure"):
        mu = np.asarray(m["means"], dtype=float)
        se = np.asarray(m["stderrs"], dtype=float)
        fig, ax = plt.subplots(figsize=(5, 3.5))
        ax.fill_between(t, mu - 3 * se, mu + 3 * se, alpha=0.3, label="mean ± 3 se")
        ax.plot(t, mu, marker="o", label="mean e_m / M")
        ax.axhline(0.0, color="k", lw=0.8)
        ax.set_xlabel("t")
        ax.set_ylabel("discounted hedging error")
        ax.set_title(m["measure"])
        ax.legend()
        files.append(_save(fig, out / f"band_{_slug(m['measure'])}.svg"))
    return files


def surface_slices(report: dict, out: Path) -> list[Path]:
    sl = _need(report, "slices")
    x = np.asarray(sl["x"], dtype=float)
    fig, (a1, a2) = plt.subplots(1, 2, figsize=(9, 3.5))
    for t, v, d in zip(sl["times"], sl["values"], sl["deltas"]):
        a1.plot(x, v, label=f"t={t:.3g}")
        a2.plot(x, d, label=f"t={t:.3g}")
    a1.set_xlabel("s")
    a1.set_ylabel("value")
    a2.set_xlabel("s")
    a2.set_ylabel("Delta")
    a1.legend()
    return [_save(fig, out / "surface_slices.svg")]


def gap_histogram(report: dict, out: Path) -> list[Path]:
    h = _need(report, "gap_histogram")
    tol = float(_need(report, "tol_sh"))
    edges = np.asarray(h["edges"], dtype=float)
    counts = np.asarray(h["counts"], dtype=float)
    fig, ax = plt.subplots(figsize=(5, 3.5))
    ax.stairs(counts, edges, fill=True, alpha=0.6)
    ax.axvline(-tol, color="r", ls="--", label=f"-tol_sh = {-tol:.3g}")
    ax.set_xlabel("terminal gap P(T) - h(S(T))")
    ax.set_ylabel("paths")
    ax.legend()
    return [_save(fig, out / "gap_histogram.svg")]


def robust_plots(report: dict, out: Path) -> list[Path]:
    cands = _need(report, "candidates")
    fig, ax = plt.subplots(figsize=(6, 3.5))
    ax.bar(range(len(cands)), [c["price"] for c in cands])
    ax.axhline(float(_need(report, "robust_price")), color="r", ls="--", label="robust price")
    ax.set_xticks(range(len(cands)), [c["measure"] for c in cands], rotation=30, ha="right",
                  fontsize=7)
    ax.set_ylabel("price at x0")
    ax.legend()
    files = [_save(fig, out / "candidate_prices.svg")]
    fig, ax = plt.subplots(figsize=(6, 3))
    ax.step(_need(report, "x"), _need(report, "argmax_t0"), where="mid")
    ax.set_xlabel("s")
    ax.set_ylabel("argmax candidate at t=0")
    files.append(_save(fig, out / "argmax_slice.svg"))
    return files


def emit_plots(report_path, out_dir) -> list[Path]:
    """Render every plot the report supports; returns the written files."""
    report_path = Path(report_path)
    try:
        report = json.loads(report_path.read_text())
    except json.JSONDecodeError as exc:
        raise PlotError(f"{report_path} is not valid JSON: {exc}") from exc
    kind = _need(report, "kind")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    files: list[Path] = []
    if kind in ("price", "hedge", "robust"):
        files += surface_slices(report, out)
    if kind in ("hedge", "robust"):
        files += band_plots(report, out)
    if kind == "robust":
        files += robust_plots(report, out)
    if kind == "poisson":
        files += gap_histogram(report, out)
    return files
