#!/usr/bin/env python3
"""
Command-line front end.

Every command routes to the same async tool handler the MCP server uses.
Exit codes: 0 success, 1 configuration error, 2 data error, 3 training
protocol violation, 4 acceptance failure (``report --check``).
"""

import argparse
import asyncio
import json
import logging
import sys
from typing import Any, Dict, List, Optional

from fretal.config import Method
from fretal.datagen import SPLITS
from fretal.errors import FretalError
from tools.data_tools import generate_data, ingest_data
from tools.eval_tools import evaluate, report, zero_shot
from tools.train_tools import adapt, run_experiment_tool, train_teacher

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_FAILURE = 1

COMMANDS = {
    "generate-data": generate_data,
    "ingest": ingest_data,
    "train-teacher": train_teacher,
    "adapt": adapt,
    "evaluate": evaluate,
    "zero-shot": zero_shot,
    "run-experiment": run_experiment_tool,
    "report": report,
}

# argparse dest -> ExperimentConfig key
CONFIG_FLAGS = {
    "workers": "workers",
    "methods": "methods",
    "group_vote": "group_vote",
    "plot_format": "plot_format",
    "temperature": "adaptation.loss.temperature",
    "max_epochs": "adaptation.max_epochs",
    "batch_size": "adaptation.batch_size",
    "store_refresh": "adaptation.store_refresh",
}


def _parse_value(text: str) -> Any:
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def parse_overrides(items: Optional[List[str]]) -> Dict[str, Any]:
    overrides: Dict[str, Any] = {}
    for item in items or []:
        key, sep, value = item.partition("=")
        if not sep or not key:
            raise argparse.ArgumentTypeError(f"override must look like key=value: {item!r}")
        overrides[key.strip()] = _parse_value(value)
    return overrides


def _common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="experiment JSON document")
    parser.add_argument("--seed", type=int, help="master seed")
    parser.add_argument("--out", help="output directory (default: $FRETAL_OUTPUT_ROOT or runs)")
    parser.add_argument(
        "--set",
        dest="overrides",
        action="append",
        metavar="KEY=VALUE",
        help="config override, e.g. adaptation.loss.rho1=0.5 (repeatable)",
    )
    parser.add_argument("--workers", type=int, help="parallel experiment cells")
    parser.add_argument("--methods", nargs="+", choices=[m.value for m in Method])
    parser.add_argument("--group-vote", action="store_true", default=None, help="per-group majority vote")
    parser.add_argument("--plot-format", choices=["html", "png"])
    parser.add_argument("--temperature", type=float, help="distillation temperature")
    parser.add_argument("--max-epochs", type=int, help="adaptation epochs")
    parser.add_argument("--batch-size", type=int, help="adaptation batch size")
    parser.add_argument("--store-refresh", choices=["epoch", "batch"])
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="fretal",
        description="Source-free adaptation of real/fake image detectors (FReTAL, FT and KD baselines)",
    )
    commands = parser.add_subparsers(dest="command", required=True)

    p = commands.add_parser("generate-data", help="render synthetic domains to a frame tree")
    _common(p)
    p.add_argument("--domains", nargs="+", help="subset of configured domains")
    p.add_argument("--data-dir", help="frame tree root (default <out>/data)")

    p = commands.add_parser("ingest", help="validate a pre-cropped frame tree")
    _common(p)
    p.add_argument("--root", help="frame tree root")
    p.add_argument("--manifest", help="manifest CSV")
    p.add_argument("--expected-frames", type=int)

    p = commands.add_parser("train-teacher", help="train and freeze a source-domain teacher")
    _common(p)
    p.add_argument("--source", required=True)

    p = commands.add_parser("adapt", help="adapt a teacher to a target domain")
    _common(p)
    p.add_argument("--target", required=True)
    p.add_argument("--source")
    p.add_argument("--teacher", help="teacher checkpoint (default <out>/teachers/<source>.pt)")
    p.add_argument("--method", choices=[m.value for m in Method])

    p = commands.add_parser("evaluate", help="evaluate a checkpoint on a domain split")
    _common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--domain", required=True)
    p.add_argument("--split", choices=list(SPLITS), default="test")
    p.add_argument("--quality", type=int, help="re-encode frames at this JPEG quality first")

    p = commands.add_parser("zero-shot", help="every teacher on every domain")
    _common(p)

    p = commands.add_parser("run-experiment", help="run the whole experiment grid")
    _common(p)

    p = commands.add_parser("report", help="print a run's summary")
    _common(p)
    p.add_argument("--run-dir", help="run directory (default: --out)")
    p.add_argument("--check", action="store_true", help="fail with exit code 4 on unmet thresholds")
    return parser


def arguments_for(namespace: argparse.Namespace) -> Dict[str, Any]:
    """Turn parsed flags into the tool handler's argument dictionary."""
    values = vars(namespace).copy()
    overrides = parse_overrides(values.pop("overrides", None))
    for dest, key in CONFIG_FLAGS.items():
        value = values.pop(dest, None)
        if value is not None:
            overrides[key] = value
    values.pop("command", None)
    values.pop("verbose", None)
    args = {k: v for k, v in values.items() if v is not None}
    args["overrides"] = overrides
    return args


def _print_result(command: str, result: Dict[str, Any]) -> None:
    if command == "report":
        print(result["text"], end="")
        for failure in result.get("failures", []):
            print(f"acceptance: {failure}")
        return
    print(json.dumps(result, indent=2, default=str))


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    namespace = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if namespace.verbose else logging.INFO,
        format="%(asctime)s - %(name)s - %(levelname)s - %(message)s",
        stream=sys.stderr,
    )
    command = namespace.command
    try:
        args = arguments_for(namespace)
        result = asyncio.run(COMMANDS[command](args))
    except FretalError as e:
        logger.error("%s: %s", type(e).__name__, e)
        return e.exit_code
    except (argparse.ArgumentTypeError, ValueError) as e:
        logger.error("Invalid arguments: %s", e)
        return EXIT_FAILURE
    except Exception as e:
        logger.error("%s", e)
        return EXIT_FAILURE
    _print_result(command, result)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
