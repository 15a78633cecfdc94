#!/usr/bin/env python3
"""Figure generation from the solver's CSV outputs.

Reads only the documented CSV schemas (metrics and rolling-horizon files) so
it stays decoupled from the solver package. Four figure kinds:

  stress_bars         grouped bars of one metric column across labeled runs
  breakdown_stack     one stacked cost bar (c1..c5) per row of a metrics CSV
  sensitivity_heatmap value grid over two swept parameter columns
  rolling_lines       per-method mean line and +-1 std band over windows

Usage: report.py --spec figures.json
where the spec file holds {"figures": [{"kind": ..., "inputs": [...],
"output": ...}, ...]}.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from dataclasses import dataclass, field
from pathlib import Path

import matplotlib
matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

KINDS = ("stress_bars", "breakdown_stack", "sensitivity_heatmap",
         "rolling_lines")

# fixed palette so identical inputs render identical figures
PALETTE = ("#4878a8", "#e49444", "#d1615d", "#85b6b2", "#6a9f58",
           "#e7ca60", "#a87c9f")

COST_SEGMENTS = ("c1", "c2", "c3", "c4", "c5")
SEGMENT_LABELS = {"c1": "GPU rental", "c2": "model storage",
                  "c3": "data storage", "c4": "delay penalty",
                  "c5": "unmet penalty"}


class ReportError(Exception):
    pass


@dataclass(frozen=True)
class FigureSpec:
    kind: str
    inputs: tuple[str, ...]
    output: str
    labels: tuple[str, ...] = ()
    options: dict = field(default_factory=dict)

    @classmethod
    def from_dict(cls, d: dict) -> "FigureSpec":
        kind = d.get("kind")
        if kind not in KINDS:
            raise ReportError(f"unknown figure kind {kind!r}; expected one "
                              f"of {KINDS}")
        inputs = d.get("inputs") or ([d["input"]] if "input" in d else None)
        if not inputs:
            raise ReportError(f"figure {kind!r}: no input CSVs given")
        if "output" not in d:
            raise ReportError(f"figure {kind!r}: missing output path")
        return cls(kind=kind, inputs=tuple(inputs), output=d["output"],
                   labels=tuple(d.get("labels", ())),
                   options=d.get("options", {}))


def _read_csv(path) -> list[dict]:
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.DictReader(fh))
    if not rows:
        raise ReportError(f"{path}: CSV has no data rows")
    return rows


def _require_columns(rows: list[dict], cols, path) -> None:
    missing = [c for c in cols if c not in rows[0]]
    if missing:
        raise ReportError(f"{path}: missing required column(s) "
                          f"{', '.join(missing)}")


def _labels_for(spec: FigureSpec) -> list[str]:
    if spec.labels:
        if len(spec.labels) != len(spec.inputs):
            raise ReportError("labels and inputs must have equal length")
        return list(spec.labels)
    return [Path(p).stem for p in spec.inputs]


# ---------------------------------------------------------------------------
# Renderers: each returns (figure, plotted) where plotted holds the exact
# numbers handed to matplotlib, for verification.
# ---------------------------------------------------------------------------

def _render_stress_bars(spec: FigureSpec):
    value_col = spec.options.get("value_col", "ca")
    labels = _labels_for(spec)
    groups: dict[str, list[tuple[str, float]]] = {}
    for path, label in zip(spec.inputs, labels):
        rows = _read_csv(path)
        _require_columns(rows, ["algo", value_col], path)
        for row in rows:
            groups.setdefault(row["algo"], []).append(
                (label, float(row[value_col])))
    algos = sorted(groups)
    fig, ax = plt.subplots(figsize=(6, 3.5))
    width = 0.8 / len(algos)
    plotted = {}
    for a_i, algo in enumerate(algos):
        by_label = dict(groups[algo])
        vals = [by_label.get(lab, np.nan) for lab in labels]
        xs = np.arange(len(labels)) + a_i * width
        ax.bar(xs, vals, width=width, label=algo,
               color=PALETTE[a_i % len(PALETTE)])
        plotted[algo] = vals
    ax.set_xticks(np.arange(len(labels)) + 0.4 - width / 2)
    ax.set_xticklabels(labels)
    ax.set_ylabel(value_col)
    ax.legend()
    fig.tight_layout()
    return fig, plotted


def _render_breakdown_stack(spec: FigureSpec):
    path = spec.inputs[0]
    rows = _read_csv(path)
    _require_columns(rows, ("algo",) + COST_SEGMENTS, path)
    fig, ax = plt.subplots(figsize=(6, 3.5))
    xs = np.arange(len(rows))
    bottom = np.zeros(len(rows))
    plotted = {}
    for s_i, seg in enumerate(COST_SEGMENTS):
        vals = np.array([float(r[seg]) for r in rows])
        ax.bar(xs, vals, bottom=bottom, label=SEGMENT_LABELS[seg],
               color=PALETTE[s_i % len(PALETTE)])
        plotted[seg] = vals
        bottom = bottom + vals
    ax.set_xticks(xs)
    ax.set_xticklabels([r["algo"] for r in rows])
    ax.set_ylabel("cost ($)")
    ax.legend(fontsize=8)
    fig.tight_layout()
    return fig, plotted


def _render_sensitivity_heatmap(spec: FigureSpec):
    path = spec.inputs[0]
    x_col = spec.options.get("x", "x")
    y_col = spec.options.get("y", "y")
    v_col = spec.options.get("value", "value")
    rows = _read_csv(path)
    _require_columns(rows, [x_col, y_col, v_col], path)
    xs = sorted({float(r[x_col]) for r in rows})
    ys = sorted({float(r[y_col]) for r in rows})
    grid = np.full((len(ys), len(xs)), np.nan)
    for r in rows:
        grid[ys.index(float(r[y_col])), xs.index(float(r[x_col]))] = \
            float(r[v_col])
    fig, ax = plt.subplots(figsize=(5, 4))
    im = ax.imshow(grid, origin="lower", aspect="auto", cmap="viridis")
    ax.set_xticks(range(len(xs)))
    ax.set_xticklabels([f"{v:g}" for v in xs], rotation=45)
    ax.set_yticks(range(len(ys)))
    ax.set_yticklabels([f"{v:g}" for v in ys])
    ax.set_xlabel(x_col)
    ax.set_ylabel(y_col)
    fig.colorbar(im, ax=ax, label=v_col)
    fig.tight_layout()
    return fig, {"grid": grid, "xs": xs, "ys": ys}


def _render_rolling_lines(spec: FigureSpec):
    labels = _labels_for(spec)
    fig, ax = plt.subplots(figsize=(6, 3.5))
    plotted = {}
    for f_i, (path, label) in enumerate(zip(spec.inputs, labels)):
        rows = _read_csv(path)
        _require_columns(rows, ("algo", "trial", "window", "cum_cost"), path)
        trials = sorted({int(r["trial"]) for r in rows})
        windows = sorted({int(r["window"]) for r in rows})
        series = np.full((len(trials), len(windows)), np.nan)
        for r in rows:
            series[trials.index(int(r["trial"])),
                   windows.index(int(r["window"]))] = float(r["cum_cost"])
        mean = series.mean(axis=0)
        std = series.std(axis=0)
        color = PALETTE[f_i % len(PALETTE)]
        ax.plot(windows, mean, label=label, color=color)
        ax.fill_between(windows, mean - std, mean + std, color=color,
                        alpha=0.25)
        plotted[label] = {"windows": windows, "mean": mean, "std": std}
    ax.set_xlabel("window")
    ax.set_ylabel("cumulative cost ($)")
    ax.legend()
    fig.tight_layout()
    return fig, plotted


_RENDERERS = {
    "stress_bars": _render_stress_bars,
    "breakdown_stack": _render_breakdown_stack,
    "sensitivity_heatmap": _render_sensitivity_heatmap,
    "rolling_lines": _render_rolling_lines,
}


def render(spec: FigureSpec):
    """Render one figure; writes spec.output and returns (fig, plotted)."""
    fig, plotted = _RENDERERS[spec.kind](spec)
    fig.savefig(spec.output)
    plt.close(fig)
    return fig, plotted


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="report.py", description=__doc__)
    parser.add_argument("--spec", required=True,
                        help="JSON file with a figures list")
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        with open(args.spec, encoding="utf-8") as fh:
            spec_doc = json.load(fh)
        figures = spec_doc.get("figures")
        if not figures:
            raise ReportError(f"{args.spec}: no figures defined")
        for fig_d in figures:
            spec = FigureSpec.from_dict(fig_d)
            render(spec)
            print(f"wrote {spec.output} ({spec.kind})")
    except (ReportError, FileNotFoundError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
