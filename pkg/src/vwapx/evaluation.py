"""Test-day simulation, VAA statistics and the report artifacts (CSV + SVG)."""
from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from xml.sax.saxutils import escape

import numpy as np

from .market import N_INTERVALS, historical_average_ushape, sample_total_order
from .trainer import (INTERVAL_MODES, DayPlan, DayResult, MarketData, Models, TrainConfig,
                      run_interval_days, run_minute_day, run_oracle_day)

EVAL_TAG = 0xE7A1  # keeps evaluation draws apart from the training streams


@dataclass
class EvalSummary:
    mode: str
    days: list[DayResult]

    @property
    def vaa_bps(self) -> np.ndarray:
        return np.array([d.vaa for d in self.days]) * 1e4

    @property
    def mean(self) -> float:
        return float(self.vaa_bps.mean())

    @property
    def std(self) -> float:
        """Population standard deviation (bps)."""
        return float(self.vaa_bps.std())

    @property
    def pct_within_10bps(self) -> float:
        return pct_within(self.vaa_bps, 10.0)

    @property
    def u_pred(self) -> np.ndarray:
        return np.array([d.u_pred for d in self.days])

    @property
    def u_true(self) -> np.ndarray:
        return np.array([d.u_true for d in self.days])


def pct_within(values_bps, limit: float = 10.0) -> float:
    """Percentage of values in [0, limit], the upper bound included."""
    v = np.asarray(values_bps, dtype=np.float64)
    return 100.0 * float((v <= limit).sum()) / len(v)


def evaluation_plans(test: MarketData, seed: int) -> list[DayPlan]:
    """One generator per test day; the day order is its first draw, so every
    mode faces the same orders for a given seed."""
    plans = []
    for i, tape in enumerate(test.tapes):
        rng = np.random.default_rng([seed, EVAL_TAG, i])
        plans.append(DayPlan(tape, sample_total_order(test.stats(i), rng), rng))
    return plans


def evaluate(models: Models, cfg: TrainConfig, test: MarketData, seed: int = 0,
             greedy: bool = False) -> EvalSummary:
    """Run ``cfg.mode`` on every test day (actions sampled unless ``greedy``)."""
    if len(test) == 0:
        raise ValueError("evaluate: no test days")
    plans = evaluation_plans(test, seed)
    if cfg.mode in INTERVAL_MODES:
        days, _, _ = run_interval_days(models, cfg, plans, greedy)
    elif cfg.mode == "oracle":
        days = [run_oracle_day(p) for p in plans]
    else:
        days = [run_minute_day(models, cfg, p, greedy=greedy)[0] for p in plans]
    return EvalSummary(cfg.mode, days)


# ---------------------------------------------------------------- statistics

def histogram(values, bin_width: float) -> np.ndarray:
    """Counts over bins [0, w), [w, 2w), ... up to the bin holding the maximum."""
    if not bin_width > 0:
        raise ValueError("histogram: bin width must be positive")
    v = np.asarray(values, dtype=np.float64)
    if v.size == 0:
        raise ValueError("histogram: no values")
    if v.min() < 0:
        raise ValueError("histogram: values must be nonnegative")
    idx = np.floor(v / bin_width).astype(np.int64)
    return np.bincount(idx, minlength=int(idx.max()) + 1)


def ushape_report(u_true, u_pred) -> dict:
    """Per-interval averages of true and predicted ratios and their mean absolute error."""
    t = np.asarray(u_true, dtype=np.float64).reshape(-1, N_INTERVALS)
    p = np.asarray(u_pred, dtype=np.float64).reshape(-1, N_INTERVALS)
    if len(t) == 0 or t.shape != p.shape:
        raise ValueError("ushape_report: need matching nonempty ratio arrays")
    return {"avg_true": historical_average_ushape(t), "avg_pred": historical_average_ushape(p),
            "mae": np.abs(p - t).mean(axis=0)}


# ---------------------------------------------------------------- files

SUMMARY_COLUMNS = ["date", "order", "model_price", "vwap", "vaa_bps"]


def write_summary(summary: EvalSummary, path) -> Path:
    """Per-day rows, then footer rows ``mean``, ``std``, ``pct_within_10bps``
    carrying the aggregate in the last column."""
    path = Path(path)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(SUMMARY_COLUMNS)
        for d, v in zip(summary.days, summary.vaa_bps):
            w.writerow([d.date.isoformat(), int(d.order), repr(float(d.mp)), repr(float(d.vwap)),
                        repr(float(v))])
        for name in ("mean", "std", "pct_within_10bps"):
            w.writerow([name, "", "", "", repr(float(getattr(summary, name)))])
    return path


def read_summary(path) -> tuple[list[dict], dict]:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    footer = {r["date"]: float(r["vaa_bps"]) for r in rows if not r["order"]}
    days = [r for r in rows if r["order"]]
    return days, footer


def _svg(width, height, body: list[str], title: str) -> str:
    return "\n".join([
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}">',
        f'<rect width="{width}" height="{height}" fill="white"/>',
        f'<text x="{width / 2:.1f}" y="18" text-anchor="middle" font-family="sans-serif" '
        f'font-size="14">{escape(title)}</text>',
        *body, "</svg>", ""])


def histogram_svg(values_bps, bin_width: float, title: str = "VAA distribution (bps)") -> str:
    counts = histogram(values_bps, bin_width)
    W, H, pad = 640, 360, 40
    n = len(counts)
    bw = (W - 2 * pad) / n
    top = max(int(counts.max()), 1)
    body = [f'<line x1="{pad}" y1="{H - pad}" x2="{W - pad}" y2="{H - pad}" stroke="black"/>']
    for i, c in enumerate(counts):
        h = (H - 2 * pad) * c / top
        x = pad + i * bw
        body.append(f'<rect x="{x:.2f}" y="{H - pad - h:.2f}" width="{bw * 0.9:.2f}" '
                    f'height="{h:.2f}" fill="steelblue"/>')
        if n <= 30 or i % max(1, n // 15) == 0:
            body.append(f'<text x="{x:.2f}" y="{H - pad + 14}" font-family="sans-serif" '
                        f'font-size="9">{i * bin_width:g}</text>')
    body.append(f'<text x="{pad - 4}" y="{pad}" text-anchor="end" font-family="sans-serif" '
                f'font-size="10">{top}</text>')
    return _svg(W, H, body, title)


def ushape_svg(series: dict, title: str) -> str:
    """Line plot of named 19-point ratio series."""
    W, H, pad = 640, 360, 40
    colors = ["black", "crimson", "steelblue", "darkorange"]
    top = max(float(np.max(s)) for s in series.values()) * 1.1 or 1.0
    body = [f'<line x1="{pad}" y1="{H - pad}" x2="{W - pad}" y2="{H - pad}" stroke="black"/>',
            f'<line x1="{pad}" y1="{pad}" x2="{pad}" y2="{H - pad}" stroke="black"/>']
    for k, (name, s) in enumerate(series.items()):
        s = np.asarray(s)
        xs = pad + np.arange(len(s)) * (W - 2 * pad) / (len(s) - 1)
        ys = H - pad - (H - 2 * pad) * s / top
        pts = " ".join(f"{x:.2f},{y:.2f}" for x, y in zip(xs, ys))
        col = colors[k % len(colors)]
        body.append(f'<polyline points="{pts}" fill="none" stroke="{col}" stroke-width="2"/>')
        body.append(f'<text x="{W - pad - 120}" y="{pad + 14 * (k + 1)}" fill="{col}" '
                    f'font-family="sans-serif" font-size="11">{escape(name)}</text>')
    return _svg(W, H, body, title)


def write_report(summary: EvalSummary, out_dir, bin_width: float = 2.0) -> list[Path]:
    """summary.csv, vaa_histogram.svg, ushape_avg.svg and one ushape_day_<date>.svg per day."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = [write_summary(summary, out / "summary.csv")]
    p = out / "vaa_histogram.svg"
    p.write_text(histogram_svg(summary.vaa_bps, bin_width,
                               f"VAA distribution, {summary.mode} (bps)"))
    written.append(p)
    rep = ushape_report(summary.u_true, summary.u_pred)
    p = out / "ushape_avg.svg"
    p.write_text(ushape_svg({"realized": rep["avg_true"], summary.mode: rep["avg_pred"]},
                            "Average interval volume ratios on test days"))
    written.append(p)
    with open(out / "ushape_mae.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["interval", "avg_true", "avg_pred", "mae"])
        for l in range(N_INTERVALS):
            w.writerow([l, repr(float(rep["avg_true"][l])), repr(float(rep["avg_pred"][l])),
                        repr(float(rep["mae"][l]))])
    written.append(out / "ushape_mae.csv")
    for d in summary.days:
        p = out / f"ushape_day_{d.date.isoformat()}.svg"
        p.write_text(ushape_svg({"realized": d.u_true, summary.mode: d.u_pred},
                                f"Interval volume ratios on {d.date.isoformat()}"))
        written.append(p)
    return written


def format_summary(summary: EvalSummary) -> str:
    return (f"{summary.mode}: mean {summary.mean:.3f} bps, std {summary.std:.3f} bps, "
            f"{summary.pct_within_10bps:.1f}% within 10 bps over {len(summary.days)} days")
