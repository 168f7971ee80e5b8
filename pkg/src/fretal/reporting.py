"""
Summary tables, plots and acceptance checks.

Summary tables hold one raw row per (source, target, method, seed) plus a
"mean" row per (source, target, method). Floats are written with six decimals
so that reruns produce byte-identical files.
"""

import logging
from pathlib import Path
from typing import Dict, Iterable, List, Mapping, Optional

import pandas as pd
import plotly.express as px
import plotly.graph_objects as go
from plotly.subplots import make_subplots

from fretal.adapt import TrainingTrace
from fretal.config import AcceptanceThresholds, Method
from fretal.errors import AcceptanceError, ConfigError, DataError

logger = logging.getLogger(__name__)

FLOAT_FORMAT = "%.6f"
SUMMARY_COLUMNS = ["source", "target", "method", "seed", "source_f1", "target_f1", "avg_f1", "status"]
F1_COLUMNS = ["source_f1", "target_f1", "avg_f1"]
MEAN_SEED = "mean"


def summary_frame(rows: Iterable[Mapping[str, object]]) -> pd.DataFrame:
    """Raw rows plus per-cell means over seeds, sorted for stable output."""
    raw = pd.DataFrame(list(rows), columns=SUMMARY_COLUMNS)
    if raw.empty:
        return raw
    raw["seed"] = raw["seed"].astype(str)
    ok = raw[raw["status"] == "ok"]
    means = ok.groupby(["source", "target", "method"], as_index=False, sort=False)[F1_COLUMNS].mean()
    means["seed"] = MEAN_SEED
    means["status"] = "ok"
    frame = pd.concat([raw, means[SUMMARY_COLUMNS]], ignore_index=True)
    frame["_mean"] = frame["seed"] == MEAN_SEED
    frame = frame.sort_values(["source", "target", "method", "_mean", "seed"], kind="mergesort")
    return frame.drop(columns="_mean").reset_index(drop=True)


def summary_text(summary: pd.DataFrame) -> str:
    """Human-readable tables: per pair, rows = method, columns = Source / Target / Avg."""
    if summary.empty:
        return "no adaptation results\n"
    blocks = []
    means = summary[summary["seed"] == MEAN_SEED]
    for (source, target), block in means.groupby(["source", "target"], sort=True):
        table = block.set_index("method")[F1_COLUMNS]
        table.columns = ["Source", "Target", "Avg"]
        blocks.append(f"{source} -> {target}\n{table.to_string(float_format=lambda v: f'{v:.6f}')}")
    failed = summary[summary["status"] != "ok"]
    if not failed.empty:
        lines = [f"  {r.source} -> {r.target} {r.method} seed {r.seed}: {r.status}" for r in failed.itertuples()]
        blocks.append("failed cells\n" + "\n".join(lines))
    return "\n\n".join(blocks) + "\n"


def write_summary(summary: pd.DataFrame, output_dir: Path) -> Dict[str, Path]:
    output_dir = Path(output_dir)
    output_dir.mkdir(parents=True, exist_ok=True)
    csv_path = output_dir / "summary.csv"
    txt_path = output_dir / "summary.txt"
    summary.to_csv(csv_path, index=False, float_format=FLOAT_FORMAT, lineterminator="\n")
    txt_path.write_text(summary_text(summary), encoding="utf-8")
    return {"csv": csv_path, "text": txt_path}


def read_summary(path: Path) -> pd.DataFrame:
    path = Path(path)
    if path.is_dir():
        path = path / "summary.csv"
    if not path.exists():
        raise DataError(f"summary not found: {path}")
    return pd.read_csv(path, dtype={"seed": str})


def write_zero_shot(matrix: pd.DataFrame, output_dir: Path) -> Path:
    path = Path(output_dir) / "zero_shot.csv"
    path.parent.mkdir(parents=True, exist_ok=True)
    matrix.to_csv(path, float_format=FLOAT_FORMAT, lineterminator="\n")
    return path


def read_zero_shot(path: Path) -> pd.DataFrame:
    path = Path(path)
    if path.is_dir():
        path = path / "zero_shot.csv"
    if not path.exists():
        raise DataError(f"zero-shot matrix not found: {path}")
    return pd.read_csv(path, index_col="teacher")


def trace_figure(traces: Mapping[str, TrainingTrace], title: str) -> go.Figure:
    """Loss components (left) and target validation F1 (right) per epoch."""
    figure = make_subplots(rows=1, cols=2, subplot_titles=("Loss", "Validation F1"))
    for name, trace in traces.items():
        frame = pd.DataFrame(trace.comparable())
        for term in ("total", "fsl", "kd", "ce"):
            if term not in frame or frame[term].isna().all():
                continue
            figure.add_trace(
                go.Scatter(x=frame["epoch"], y=frame[term], mode="lines", name=f"{name} {term}"),
                row=1,
                col=1,
            )
        figure.add_trace(
            go.Scatter(x=frame["epoch"], y=frame["val_f1"], mode="lines+markers", name=f"{name} F1"),
            row=1,
            col=2,
        )
    figure.update_layout(title=title)
    figure.update_xaxes(title_text="epoch")
    return figure


def zero_shot_figure(matrix: pd.DataFrame) -> go.Figure:
    return px.imshow(
        matrix,
        text_auto=".3f",
        zmin=0.0,
        zmax=1.0,
        labels={"x": "evaluated domain", "y": "teacher", "color": "F1"},
        title="Zero-shot F1",
    )


def write_figure(figure: go.Figure, path: Path, plot_format: str = "html") -> Path:
    path = Path(path).with_suffix(f".{plot_format}")
    path.parent.mkdir(parents=True, exist_ok=True)
    if plot_format == "html":
        figure.write_html(path, include_plotlyjs="cdn")
    elif plot_format == "png":
        try:
            figure.write_image(path)
        except (ImportError, ValueError) as e:
            raise ConfigError(f"png plots need the 'images' extra (kaleido): {e}") from e
    else:
        raise ConfigError(f"unknown plot format {plot_format!r}")
    return path


def _cell(means: pd.DataFrame, source: str, target: str, method: Method) -> Optional[pd.Series]:
    hit = means[(means["source"] == source) & (means["target"] == target) & (means["method"] == method.value)]
    return None if hit.empty else hit.iloc[0]


def check_acceptance(
    summary: pd.DataFrame,
    zero_shot: Optional[pd.DataFrame],
    thresholds: Optional[AcceptanceThresholds] = None,
) -> List[str]:
    """
    Compare results with the acceptance thresholds; returns the failures.

    Zero-shot: every diagonal entry reaches ``min_diagonal_f1`` and every
    off-diagonal entry sits at least ``min_zero_shot_gap`` below its row's
    diagonal. Adaptation, per pair with the methods present: FReTAL's Avg beats
    FT's by ``min_fretal_margin_over_ft``, is not below KD's, and FReTAL keeps
    at least FT's source F1.
    """
    thresholds = thresholds or AcceptanceThresholds()
    failures: List[str] = []

    if zero_shot is not None:
        for teacher in zero_shot.index:
            if teacher not in zero_shot.columns:
                continue
            diagonal = float(zero_shot.loc[teacher, teacher])
            if diagonal < thresholds.min_diagonal_f1:
                failures.append(f"teacher {teacher}: source F1 {diagonal:.4f} < {thresholds.min_diagonal_f1}")
            for domain in zero_shot.columns:
                if domain == teacher:
                    continue
                value = float(zero_shot.loc[teacher, domain])
                if value > diagonal - thresholds.min_zero_shot_gap:
                    failures.append(
                        f"teacher {teacher} on {domain}: F1 {value:.4f} within "
                        f"{thresholds.min_zero_shot_gap} of its source F1 {diagonal:.4f}"
                    )

    if not summary.empty:
        failed = summary[summary["status"] != "ok"]
        for row in failed.itertuples():
            failures.append(f"{row.source} -> {row.target} {row.method} seed {row.seed}: {row.status}")
        means = summary[summary["seed"].astype(str) == MEAN_SEED]
        for source, target in means[["source", "target"]].drop_duplicates().itertuples(index=False):
            fretal = _cell(means, source, target, Method.FRETAL)
            if fretal is None:
                continue
            ft = _cell(means, source, target, Method.FT)
            kd = _cell(means, source, target, Method.KD)
            pair = f"{source} -> {target}"
            if ft is not None:
                if fretal["avg_f1"] < ft["avg_f1"] + thresholds.min_fretal_margin_over_ft:
                    failures.append(
                        f"{pair}: FReTAL Avg {fretal['avg_f1']:.4f} < FT Avg {ft['avg_f1']:.4f} "
                        f"+ {thresholds.min_fretal_margin_over_ft}"
                    )
                if fretal["source_f1"] < ft["source_f1"]:
                    failures.append(
                        f"{pair}: FReTAL source F1 {fretal['source_f1']:.4f} < FT {ft['source_f1']:.4f}"
                    )
            if kd is not None and fretal["avg_f1"] < kd["avg_f1"]:
                failures.append(f"{pair}: FReTAL Avg {fretal['avg_f1']:.4f} < KD Avg {kd['avg_f1']:.4f}")

    for failure in failures:
        logger.warning("Acceptance: %s", failure)
    return failures


def assert_acceptance(
    summary: pd.DataFrame,
    zero_shot: Optional[pd.DataFrame],
    thresholds: Optional[AcceptanceThresholds] = None,
) -> None:
    failures = check_acceptance(summary, zero_shot, thresholds)
    if failures:
        raise AcceptanceError(failures)
