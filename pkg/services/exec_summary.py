"""
Agregación de reportes por celda (<out>/<dataset>/<method>/k<k>/seed<seed>/report.json)
y tabla "mean ± std": filas = método, columnas = k.
"""
from __future__ import annotations

from pathlib import Path

import pandas as pd

from core.headers import METHOD_LABELS, nice_headers
from reports import read_json

REPORT_NAME = "report.json"
SUMMARY_COLS = ["dataset", "method", "k", "seeds", "post_hoc_accuracy_mean", "post_hoc_accuracy_std", "ace_mean", "ace_std"]


def collect_reports(root: Path) -> pd.DataFrame:
    """Recorrido puro del directorio; una fila por (method, k, seed)."""
    rows = []
    for path in sorted(Path(root).glob(f"*/k*/seed*/{REPORT_NAME}")):
        raw = read_json(path)
        rows.append({
            "dataset": raw["dataset"],
            "method": raw["method"],
            "k": int(raw["k"]),
            "seed": int(raw["seed"]),
            "post_hoc_accuracy": float(raw["post_hoc_accuracy"]),
            "ace": float(raw["ace"]),
        })
    return pd.DataFrame(rows, columns=["dataset", "method", "k", "seed", "post_hoc_accuracy", "ace"])


def summarize(df: pd.DataFrame) -> pd.DataFrame:
    if df.empty:
        return pd.DataFrame(columns=SUMMARY_COLS)
    out = (
        df.sort_values(["method", "k", "seed"])
        .groupby(["dataset", "method", "k"], as_index=False)
        .agg(
            seeds=("seed", "nunique"),
            post_hoc_accuracy_mean=("post_hoc_accuracy", "mean"),
            post_hoc_accuracy_std=("post_hoc_accuracy", lambda s: float(s.std(ddof=1)) if len(s) > 1 else 0.0),
            ace_mean=("ace", "mean"),
            ace_std=("ace", lambda s: float(s.std(ddof=1)) if len(s) > 1 else 0.0),
        )
    )
    return out[SUMMARY_COLS].reset_index(drop=True)


def _pm(mean: float, std: float) -> str:
    return f"{mean:.3f} ± {std:.3f}"


def render_table(summary: pd.DataFrame, metric: str) -> str:
    """Tabla markdown: una fila por método, una columna por k, celdas "mean ± std"."""
    if summary.empty:
        return "(no reports)"
    ks = sorted(summary["k"].unique())
    lines = ["| Method | " + " | ".join(f"k={k}" for k in ks) + " |"]
    lines.append("|---|" + "---|" * len(ks))
    for method in sorted(summary["method"].unique()):
        cells = []
        for k in ks:
            row = summary[(summary["method"] == method) & (summary["k"] == k)]
            cells.append(_pm(row[f"{metric}_mean"].iloc[0], row[f"{metric}_std"].iloc[0]) if not row.empty else "—")
        lines.append(f"| {METHOD_LABELS.get(method, method)} | " + " | ".join(cells) + " |")
    return "\n".join(lines)


def render_summary_text(summary: pd.DataFrame, dataset: str) -> str:
    lines = [f"# {dataset}", "", "## Post-hoc accuracy", render_table(summary, "post_hoc_accuracy")]
    lines += ["", "## Average Causal Effect", render_table(summary, "ace"), ""]
    return "\n".join(lines)


def write_summary(dataset_root: Path, dataset: str) -> tuple[Path, Path, pd.DataFrame]:
    summary = summarize(collect_reports(dataset_root))
    csv_path = Path(dataset_root) / "summary.csv"
    txt_path = Path(dataset_root) / "summary.txt"
    nice_headers(summary).to_csv(csv_path, index=False, float_format="%.6f")
    txt_path.write_text(render_summary_text(summary, dataset), encoding="utf-8")
    return csv_path, txt_path, summary
