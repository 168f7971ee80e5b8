"""
Experiment runner.

A run over an ExperimentConfig:
1. Generates (or ingests) every domain
2. Trains one teacher per pair source, or loads it from the output
   directory when a checkpoint with the same cache key is present
3. Evaluates every accepted teacher on every domain (zero-shot matrix)
4. Runs each (source, target, method, seed) cell: adapt, evaluate on the
   source and target test splits, write checkpoint, trace, stores and reports
5. Writes summary tables, plots and run_manifest.json

Layout under ``output_dir``::

    teachers/<source>.pt, teachers/<source>.trace.jsonl
    cells/<source>__<target>/<method>/seed-<seed>/{student.pt, trace.jsonl, report.json, ...}
    plots/<source>__<target>.html, plots/zero_shot.html
    zero_shot.csv, summary.csv, summary.txt, run_manifest.json
"""

import hashlib
import json
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple

import pandas as pd

from fretal.adapt import TrainingTrace, adapt_student, fit_teacher
from fretal.backbone import ModelHandle, load_checkpoint, parameter_digest, save_checkpoint
from fretal.config import ExperimentConfig, Method
from fretal.datagen import DomainDataset, generate_domain
from fretal.errors import ConfigError, ProtocolError, UnderTrainedTeacherError
from fretal.feature_store import build_store
from fretal.ingest import ingest_all, ingest_frames
from fretal.metrics import AdaptationReport, evaluate_model, zero_shot_matrix
from fretal.reporting import (
    summary_frame,
    trace_figure,
    write_figure,
    write_summary,
    write_zero_shot,
    zero_shot_figure,
)

logger = logging.getLogger(__name__)

Cell = Tuple[str, str, Method, int]


@dataclass
class ExperimentResult:
    output_dir: Path
    summary: pd.DataFrame
    zero_shot: pd.DataFrame
    manifest: Dict[str, Any] = field(default_factory=dict)


def load_datasets(
    config: ExperimentConfig, names: Optional[Sequence[str]] = None
) -> Dict[str, DomainDataset]:
    """The configured domains (or only ``names``), generated from ``config.seed`` or ingested."""
    if config.ingest is not None:
        ingest = config.ingest
        if names is None:
            return ingest_all(ingest.root, ingest.manifest, ingest.expected_frames)
        return {
            name: ingest_frames(ingest.root, ingest.manifest, name, ingest.expected_frames)
            for name in names
        }
    specs = {spec.name: spec for spec in config.domains}
    unknown = [name for name in names or () if name not in specs]
    if unknown:
        raise ConfigError(f"unknown domain(s) {unknown}; configured: {sorted(specs)}")
    return {
        name: generate_domain(
            specs[name], n_groups=config.generator.n_groups, seed=config.seed, generator=config.generator
        )
        for name in (names if names is not None else list(specs))
    }


def teacher_cache_key(config: ExperimentConfig, source: DomainDataset) -> str:
    payload = json.dumps(
        {
            "teacher": config.teacher.model_dump(mode="json"),
            "architecture": config.architecture.model_dump(mode="json"),
            "data": source.digest(),
        },
        sort_keys=True,
    )
    return hashlib.sha256(payload.encode("utf-8")).hexdigest()


def teacher_path(output_dir: Path, source: str) -> Path:
    return Path(output_dir) / "teachers" / f"{source}.pt"


def cell_dir(output_dir: Path, source: str, target: str, method: Method, seed: int) -> Path:
    return Path(output_dir) / "cells" / f"{source}__{target}" / method.value / f"seed-{seed}"


def train_or_load_teacher(
    config: ExperimentConfig, source: DomainDataset, output_dir: Path
) -> Tuple[ModelHandle, str]:
    """Return the frozen teacher and whether it was 'cached' or 'trained'."""
    path = teacher_path(output_dir, source.domain)
    key = teacher_cache_key(config, source)
    if path.exists():
        cached = load_checkpoint(path)
        if cached.metadata.get("cache_key") == key and not cached.trainable:
            logger.info("Loaded cached teacher for %s from %s", source.domain, path)
            return cached, "cached"
        logger.info("Cached teacher for %s is stale; retraining", source.domain)
    teacher, trace = fit_teacher(source, config.teacher, config.architecture)
    teacher.metadata["cache_key"] = key
    save_checkpoint(teacher, path)
    trace.write(path.with_suffix(".trace.jsonl"))
    return teacher, "trained"


def _write_json(path: Path, document: Any) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(document, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def run_cell(
    config: ExperimentConfig,
    teacher: ModelHandle,
    source: DomainDataset,
    target: DomainDataset,
    method: Method,
    seed: int,
    output_dir: Path,
) -> Tuple[AdaptationReport, TrainingTrace]:
    """One adaptation run plus its evaluation; artifacts go to the cell directory."""
    adaptation = config.adaptation.model_copy(update={"method": method, "seed": seed})
    student, trace = adapt_student(teacher, target, adaptation)
    directory = cell_dir(output_dir, source.domain, target.domain, method, seed)
    checkpoint = save_checkpoint(student, directory / "student.pt")
    trace.write(directory / "trace.jsonl")
    if adaptation.uses_store:
        adapt_view = target.split("adapt")
        binner = teacher if adaptation.student_binning == "teacher" else None
        teacher_store = build_store(teacher, adapt_view, adaptation.bins, adaptation.batch_size)
        student_store = build_store(
            student, adapt_view, adaptation.bins, adaptation.batch_size, confidence_model=binner
        )
        _write_json(directory / "teacher_store.json", teacher_store.to_dict())
        _write_json(directory / "student_store.json", student_store.to_dict())

    name = student.metadata["name"]
    source_report = evaluate_model(student, source, "test", config.group_vote, name=name)
    target_report = evaluate_model(student, target, "test", config.group_vote, name=name)
    report = AdaptationReport.from_reports(method.value, seed, source_report, target_report)
    _write_json(
        directory / "report.json",
        {**report.model_dump(mode="json"), "checkpoint": str(checkpoint)},
    )
    logger.info(
        "%s %s -> %s seed %d: source %.4f, target %.4f, avg %.4f",
        method.value,
        source.domain,
        target.domain,
        seed,
        report.source_f1,
        report.target_f1,
        report.avg_f1,
    )
    return report, trace


def _row(
    source: str,
    target: str,
    method: Method,
    seed: int,
    report: Optional[AdaptationReport],
    status: str,
) -> Dict[str, Any]:
    return {
        "source": source,
        "target": target,
        "method": method.value,
        "seed": seed,
        "source_f1": report.source_f1 if report else None,
        "target_f1": report.target_f1 if report else None,
        "avg_f1": report.avg_f1 if report else None,
        "status": status,
    }


def _guarded_cell(
    config: ExperimentConfig,
    teacher: ModelHandle,
    datasets: Dict[str, DomainDataset],
    cell: Cell,
    output_dir: Path,
) -> Tuple[Dict[str, Any], Optional[TrainingTrace]]:
    source, target, method, seed = cell
    try:
        report, trace = run_cell(
            config, teacher, datasets[source], datasets[target], method, seed, output_dir
        )
        return _row(source, target, method, seed, report, "ok"), trace
    except ProtocolError:
        raise
    except Exception as e:
        logger.error("Cell %s -> %s %s seed %d failed: %s", source, target, method.value, seed, e)
        return _row(source, target, method, seed, None, f"error: {e}"), None


def _worker_cell(config_json: str, cell: Cell, output_dir: str) -> Tuple[Dict[str, Any], Optional[str]]:
    """Process-pool entry: rebuild data and teacher from disk, run one cell."""
    config = ExperimentConfig.model_validate_json(config_json)
    source, target = cell[0], cell[1]
    datasets = load_datasets(config, [source, target])
    teacher = load_checkpoint(teacher_path(Path(output_dir), source))
    row, trace = _guarded_cell(config, teacher, datasets, cell, Path(output_dir))
    return row, trace.model_dump_json() if trace is not None else None


def _run_cells(
    config: ExperimentConfig,
    teachers: Dict[str, ModelHandle],
    datasets: Dict[str, DomainDataset],
    cells: List[Cell],
    output_dir: Path,
) -> List[Tuple[Dict[str, Any], Optional[TrainingTrace]]]:
    if config.workers == 1 or len(cells) == 1:
        return [_guarded_cell(config, teachers[c[0]], datasets, c, output_dir) for c in cells]
    config_json = config.model_dump_json()
    results = []
    with ProcessPoolExecutor(max_workers=config.workers) as pool:
        futures = [pool.submit(_worker_cell, config_json, c, str(output_dir)) for c in cells]
        for future in futures:
            row, trace_json = future.result()
            trace = TrainingTrace.model_validate_json(trace_json) if trace_json else None
            results.append((row, trace))
    return results


def _train_teachers(
    config: ExperimentConfig,
    datasets: Dict[str, DomainDataset],
    sources: Sequence[str],
    output_dir: Path,
) -> Tuple[Dict[str, ModelHandle], Dict[str, str]]:
    """Teachers for ``sources``; an under-trained one is recorded, not raised."""
    teachers: Dict[str, ModelHandle] = {}
    status: Dict[str, str] = {}
    for name in sources:
        try:
            teachers[name], status[name] = train_or_load_teacher(config, datasets[name], output_dir)
        except UnderTrainedTeacherError as e:
            logger.error("Teacher for %s rejected: %s", name, e)
            status[name] = f"error: {e}"
    return teachers, status


def run_experiment(config: ExperimentConfig, output_dir: Optional[Path] = None) -> ExperimentResult:
    """
    Run the whole grid; failed cells are recorded and the rest continue.

    Only the pair sources get a teacher. A source whose teacher stays below
    ``teacher.min_source_f1`` turns its cells into error rows; the summary and
    manifest are still written before UnderTrainedTeacherError is raised.
    """
    output_dir = Path(output_dir or config.output_dir)
    output_dir.mkdir(parents=True, exist_ok=True)
    logger.info("Running experiment into %s", output_dir)

    datasets = load_datasets(config)
    names = sorted(datasets) if config.ingest is not None else config.domain_names
    pairs = config.resolved_pairs(names)
    for source, target in pairs:
        for name in (source, target):
            if name not in datasets:
                raise ConfigError(f"pair references unknown domain: {name}")

    sources = list(dict.fromkeys(source for source, _ in pairs))
    teachers, teacher_status = _train_teachers(config, datasets, sources, output_dir)
    rejected = {name: s for name, s in teacher_status.items() if name not in teachers}

    matrix = zero_shot_matrix(teachers, datasets, "test", config.group_vote)
    write_zero_shot(matrix, output_dir)
    if teachers:
        write_figure(zero_shot_figure(matrix), output_dir / "plots" / "zero_shot", config.plot_format)

    cells: List[Cell] = [
        (source, target, method, seed)
        for source, target in pairs
        for method in config.methods
        for seed in config.seeds
    ]
    runnable = [c for c in cells if c[0] in teachers]
    finished = iter(_run_cells(config, teachers, datasets, runnable, output_dir))
    results: List[Tuple[Dict[str, Any], Optional[TrainingTrace]]] = []
    for source, target, method, seed in cells:
        if source in rejected:
            results.append((_row(source, target, method, seed, None, rejected[source]), None))
        else:
            results.append(next(finished))

    summary = summary_frame(row for row, _ in results)
    paths = write_summary(summary, output_dir)

    first_seed = config.seeds[0]
    for source, target in pairs:
        traces = {
            row["method"]: trace
            for row, trace in results
            if trace is not None
            and row["source"] == source
            and row["target"] == target
            and row["seed"] == first_seed
        }
        if traces:
            figure = trace_figure(traces, f"{source} -> {target} (seed {first_seed})")
            write_figure(figure, output_dir / "plots" / f"{source}__{target}", config.plot_format)

    manifest = {
        "config": config.model_dump(mode="json"),
        "teachers": {
            name: {
                "status": teacher_status[name],
                "digest": parameter_digest(teachers[name]) if name in teachers else None,
                "validation_f1": teachers[name].metadata.get("validation_f1") if name in teachers else None,
            }
            for name in sources
        },
        "cells": [row for row, _ in results],
        "summary": {kind: str(path) for kind, path in paths.items()},
    }
    _write_json(output_dir / "run_manifest.json", manifest)
    failed = sum(1 for row, _ in results if row["status"] != "ok")
    logger.info("Experiment finished: %d cells, %d failed", len(results), failed)
    if rejected:
        raise UnderTrainedTeacherError(
            "; ".join(status[len("error: "):] for status in rejected.values())
            + f" (summary written to {output_dir})"
        )
    return ExperimentResult(output_dir=output_dir, summary=summary, zero_shot=matrix, manifest=manifest)


def load_teacher(path: Path) -> ModelHandle:
    teacher = load_checkpoint(path)
    if teacher.trainable:
        raise ProtocolError(f"checkpoint {path} holds a trainable model, not a frozen teacher")
    return teacher
