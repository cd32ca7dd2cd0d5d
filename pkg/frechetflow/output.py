import json
import logging
import math
from pathlib import Path
from typing import Any, Sequence

import numpy as np
import pandas as pd

from .chains import PathRecord
from .experiment import RunSummary
from .verify import TestReport

__all__ = ["VERSION", "OutputError", "ArtifactWriter", "path_frame", "jsonable"]

VERSION = "0.1.0"

_FLOAT_FORMAT = "%.17g"

__log__ = logging.getLogger(__name__)


class OutputError(Exception):
    pass


def jsonable(value: Any) -> Any:
    """Plain JSON types; non-finite floats become null."""
    if isinstance(value, dict):
        return {str(k): jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [jsonable(v) for v in value]
    if isinstance(value, np.ndarray):
        return jsonable(value.tolist())
    if isinstance(value, (bool, np.bool_)):
        return bool(value)
    if isinstance(value, (int, np.integer)):
        return int(value)
    if isinstance(value, (float, np.floating)):
        return float(value) if math.isfinite(value) else None

    return value


def _dump(path: Path, payload: Any) -> None:
    with open(path, "w") as f:
        json.dump(jsonable(payload), f, sort_keys=True, indent=2, allow_nan=False)
        f.write("\n")


def path_frame(records: Sequence[PathRecord], dimension: int) -> pd.DataFrame:
    columns = (
        ["replication", "t"]
        + [f"V_{i + 1}" for i in range(dimension)]
        + [f"W_{i + 1}" for i in range(dimension)]
        + ["stopped"]
    )
    frames = []
    for replication, record in enumerate(records):
        frame = pd.DataFrame(
            np.column_stack([record.times, record.V_path, record.W_path]),
            columns=columns[1:-1],
        )
        frame.insert(0, "replication", replication)
        frame["stopped"] = record.stopped_flags.astype(int)
        frames.append(frame)

    if not frames:
        return pd.DataFrame(columns=columns)

    return pd.concat(frames, ignore_index=True)


class ArtifactWriter:
    """Sole writer of run artifacts under one output directory."""

    __slots__ = ("_root",)

    def __init__(self, root: Path) -> None:
        self._root = Path(root)

    @property
    def root(self) -> Path:
        return self._root

    def _prepare(self) -> None:
        try:
            self._root.mkdir(parents=True, exist_ok=True)
        except OSError as e:
            raise OutputError(f"cannot create output directory {self._root}: {e}")

    def write_paths(self, n: int, records: Sequence[PathRecord], dimension: int) -> Path:
        path = self._root / f"paths_{n}.csv"
        path_frame(records, dimension).to_csv(
            path, index=False, float_format=_FLOAT_FORMAT, lineterminator="\n"
        )

        return path

    def write_supdiff(self, summary: RunSummary) -> Path:
        path = self._root / "plotdata_supdiff.csv"
        rows = [
            {
                "n": n,
                "median": s.sup_diff["median"],
                "q25": s.sup_diff["q25"],
                "q75": s.sup_diff["q75"],
            }
            for n, s in summary.per_n.items()
        ]
        pd.DataFrame(rows, columns=["n", "median", "q25", "q75"]).to_csv(
            path, index=False, float_format=_FLOAT_FORMAT, lineterminator="\n"
        )

        return path

    def write_reports(self, reports: Sequence[TestReport]) -> Path:
        path = self._root / "reports.json"
        _dump(path, [r.to_dict() for r in reports])

        return path

    def write_summary(self, summary: RunSummary, files: dict[str, int]) -> Path:
        path = self._root / "summary.json"
        _dump(path, {**summary.to_dict(), "version": VERSION, "files": files})

        return path

    def write_timing(self, summary: RunSummary) -> Path:
        path = self._root / "timing.json"
        _dump(path, {"elapsed": summary.elapsed, **summary.timings})

        return path

    def write_all(self, summary: RunSummary) -> list[Path]:
        self._prepare()
        try:
            return self._write_all(summary)
        except OSError as e:
            raise OutputError(f"cannot write artifacts to {self._root}: {e}")

    def _write_all(self, summary: RunSummary) -> list[Path]:
        dimension = summary.params.dimension
        written = []
        files: dict[str, int] = {}

        for n, records in summary.records.items():
            path = self.write_paths(n, records, dimension)
            files[path.name] = summary.per_n[n].rows
            written.append(path)

        written.append(self.write_supdiff(summary))
        files["plotdata_supdiff.csv"] = len(summary.per_n)
        written.append(self.write_reports(summary.reports))
        files["reports.json"] = len(summary.reports)
        written.append(self.write_summary(summary, files))
        written.append(self.write_timing(summary))

        for path in written:
            __log__.info("Wrote %s", path)

        return written
