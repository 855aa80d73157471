"""Python access to the fooloc simulator core."""

import json

from ._core import (
    ContractError,
    FormatError,
    StageDependencyError,
    StructuralError,
    apply_perturbation,
    grid,
    percentile,
    predict,
    psr_db,
    run_pipeline,
    weights_from_xi,
)
from . import _core


def parse_config(text="{}", overrides=()):
    """Validated config as a dict, defaults filled in."""
    return json.loads(_core.parse_config(text, list(overrides)))


def config_hash(text="{}", overrides=()):
    return _core.config_hash(text, list(overrides))


def load_reports(output_dir):
    """Stored experiment reports as lists of records; the last record of each is its summary."""
    reports = []
    for text in _core.report_jsonl(str(output_dir)):
        reports.append([json.loads(line) for line in text.splitlines() if line])
    return reports


__all__ = [
    "ContractError",
    "FormatError",
    "StageDependencyError",
    "StructuralError",
    "apply_perturbation",
    "config_hash",
    "grid",
    "load_reports",
    "parse_config",
    "percentile",
    "predict",
    "psr_db",
    "run_pipeline",
    "weights_from_xi",
]
