"""Run bookkeeping: the manifest, the metrics table, and cross-run export.

Every run directory ends with a `manifest.json` (written atomically) and a
`metrics.csv`. Export joins any number of manifests into one flat table,
one row per run, with a stable column order.
"""

from __future__ import annotations

import csv
import dataclasses
import json
import os
import subprocess
import tempfile
from typing import Dict, List, Sequence, Tuple

from . import __version__
from .errors import ConfigError, DataError

MANIFEST_NAME = "manifest.json"
METRICS_NAME = "metrics.csv"


@dataclasses.dataclass
class RunManifest:
    version: str
    config_hash: str
    wall_clock_s: float
    artifacts: List[str]
    metrics: Dict[str, float]


def package_version() -> str:
    """`git describe` when a checkout is available, else the package version."""
    try:
        out = subprocess.run(
            ["git", "describe", "--tags", "--always", "--dirty"],
            capture_output=True, text=True, timeout=5,
            cwd=os.path.dirname(os.path.abspath(__file__)),
        )
        if out.returncode == 0 and out.stdout.strip():
            return out.stdout.strip()
    except (OSError, subprocess.SubprocessError):
        pass
    return f"v{__version__}"


def write_manifest(run_dir, manifest: RunManifest) -> str:
    """Atomic write: the file is either absent or complete, never torn."""
    run_dir = os.fspath(run_dir)
    path = os.path.join(run_dir, MANIFEST_NAME)
    fd, tmp = tempfile.mkstemp(dir=run_dir, prefix=".manifest-", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as fh:
            json.dump(dataclasses.asdict(manifest), fh, indent=2, sort_keys=True)
            fh.write("\n")
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return path


def read_manifest(run_dir) -> RunManifest:
    path = os.path.join(os.fspath(run_dir), MANIFEST_NAME)
    try:
        with open(path, "r", encoding="utf-8") as fh:
            doc = json.load(fh)
    except OSError as e:
        raise DataError(f"cannot read manifest at {path}: {e}") from e
    except json.JSONDecodeError as e:
        raise DataError(f"corrupt manifest at {path}: {e}") from e
    try:
        return RunManifest(**{
            f.name: doc[f.name] for f in dataclasses.fields(RunManifest)
        })
    except KeyError as e:
        raise DataError(f"manifest at {path} is missing {e}") from e


def format_value(value) -> str:
    """Stable text form: ints verbatim, floats as shortest round-trip repr."""
    if isinstance(value, bool):
        return str(int(value))
    if isinstance(value, int):
        return str(value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def write_metrics(run_dir, rows: Sequence[Tuple[str, str, object]]) -> str:
    path = os.path.join(os.fspath(run_dir), METRICS_NAME)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["stage", "metric", "value"])
        for stage, metric, value in rows:
            writer.writerow([stage, metric, format_value(value)])
    return path


def metrics_dict(rows: Sequence[Tuple[str, str, object]]) -> Dict[str, float]:
    return {f"{stage}/{metric}": value for stage, metric, value in rows}


def export_results(run_dirs: Sequence, out_dir) -> Tuple[str, str]:
    """Join the manifests under `run_dirs` into combined.csv + combined.json.

    Rows follow the argument order; metric columns are the sorted union, and
    a metric absent from a run leaves its cell empty rather than failing.
    """
    if not run_dirs:
        raise ConfigError("export needs at least one run directory")
    entries = []
    for d in run_dirs:
        entries.append((os.path.normpath(os.fspath(d)), read_manifest(d)))
    metric_names = sorted({name for _, m in entries for name in m.metrics})

    out_dir = os.fspath(out_dir)
    os.makedirs(out_dir, exist_ok=True)
    csv_path = os.path.join(out_dir, "combined.csv")
    with open(csv_path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["run", "version", "config_hash", "wall_clock_s"] + metric_names)
        for run, m in entries:
            cells = [run, m.version, m.config_hash, format_value(m.wall_clock_s)]
            for name in metric_names:
                cells.append(
                    format_value(m.metrics[name]) if name in m.metrics else ""
                )
            writer.writerow(cells)

    json_path = os.path.join(out_dir, "combined.json")
    with open(json_path, "w", encoding="utf-8") as fh:
        json.dump(
            {"runs": [{"run": run, **dataclasses.asdict(m)} for run, m in entries]},
            fh, indent=2, sort_keys=True,
        )
        fh.write("\n")
    return csv_path, json_path
