"""Merging evaluation reports into a comparison table and figure."""

from __future__ import annotations

import csv
import io
import json
import logging
import os
from typing import Iterable, List, Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

logger = logging.getLogger(__name__)

COLUMNS = ("attack", "defense", "defended_model", "attempted", "asr", "csd_mean",
           "chamfer_mean", "knn_dist_mean")


def _fmt(v):
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return str(v)


def row_from_report(doc: dict) -> dict:
    echo = doc.get("config_echo", {})
    s = doc["summary"]
    return {
        "attack": echo.get("attack", {}).get("kind", "unknown"),
        "defense": echo.get("defense", {}).get("kind", "unknown"),
        "defended_model": echo.get("defended_model", "undefended"),
        "attempted": _fmt(s.get("attempted", len(doc.get("examples", [])))),
        "asr": _fmt(s["asr"]),
        "csd_mean": _fmt(s.get("csd_mean")),
        "chamfer_mean": _fmt(s.get("chamfer_mean")),
        "knn_dist_mean": _fmt(s.get("knn_dist_mean")),
    }


def read_rows(path: str) -> List[dict]:
    """Rows from a JSON report or from a CSV written by :func:`write_csv`."""
    if not os.path.exists(path):
        raise FileNotFoundError(f"report not found: {path}")
    if path.endswith(".csv"):
        with open(path, newline="") as fh:
            rows = list(csv.DictReader(fh))
        for r in rows:
            missing = [c for c in COLUMNS if c not in r]
            if missing:
                raise ValueError(f"{path}: missing columns {missing}")
        return [{c: r[c] for c in COLUMNS} for r in rows]
    with open(path) as fh:
        return [row_from_report(json.load(fh))]


def merge_rows(groups: Iterable[Sequence[dict]]) -> List[dict]:
    """Union of rows in a canonical order; the result does not depend on grouping."""
    seen = {}
    for rows in groups:
        for r in rows:
            key = tuple(r[c] for c in COLUMNS)
            seen[key] = dict(zip(COLUMNS, key))
    return [seen[k] for k in sorted(seen)]


def to_csv(rows: Sequence[dict]) -> str:
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=COLUMNS, lineterminator="\n")
    w.writeheader()
    for r in rows:
        w.writerow(r)
    return buf.getvalue()


def write_csv(rows: Sequence[dict], path: str) -> None:
    with open(path, "w", newline="") as fh:
        fh.write(to_csv(rows))


def _num(v):
    return float(v) if v not in ("", None) else np.nan


def plot_rows(rows: Sequence[dict], path: str) -> None:
    """Grouped bars of ASR and mean CSD per attack, one bar per defense."""
    attacks = sorted({(r["attack"], r["defended_model"]) for r in rows})
    defenses = sorted({r["defense"] for r in rows})
    lookup = {(r["attack"], r["defended_model"], r["defense"]): r for r in rows}
    fig, axes = plt.subplots(1, 2, figsize=(9, 3.4))
    width = 0.8 / max(len(defenses), 1)
    x = np.arange(len(attacks))
    for j, d in enumerate(defenses):
        for ax, col in zip(axes, ("asr", "csd_mean")):
            vals = [_num(lookup[(a, dm, d)][col]) if (a, dm, d) in lookup else np.nan
                    for a, dm in attacks]
            ax.bar(x + (j - (len(defenses) - 1) / 2) * width, vals, width, label=d)
    labels = [a if dm == "undefended" else f"{a}\n({dm})" for a, dm in attacks]
    for ax, title in zip(axes, ("attack success rate", "mean CSD")):
        ax.set_xticks(x)
        ax.set_xticklabels(labels, fontsize=8)
        ax.set_title(title, fontsize=10)
        ax.spines["top"].set_visible(False)
        ax.spines["right"].set_visible(False)
    axes[0].set_ylim(0, 1.05)
    axes[0].legend(title="defense", fontsize=8, frameon=False)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def build_report(inputs: Sequence[str], out_csv: str, out_fig: str | None = None) -> List[dict]:
    rows = merge_rows(read_rows(p) for p in inputs)
    write_csv(rows, out_csv)
    if out_fig:
        plot_rows(rows, out_fig)
    logger.info("wrote %d rows to %s", len(rows), out_csv)
    return rows
