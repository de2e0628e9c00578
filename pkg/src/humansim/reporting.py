"""Comma-separated metric files and run manifests with fixed numeric formatting."""

import csv
import hashlib
import json
import math
import numbers
import os
from dataclasses import asdict, dataclass, field
from datetime import datetime, timezone

import numpy as np

__all__ = [
    "format_number",
    "write_csv",
    "write_metrics_csv",
    "read_csv",
    "RunManifest",
    "config_digest",
    "file_sha256",
    "write_json",
]

SIG_DIGITS = 9


def format_number(v):
    """Render one CSV cell. Floats get 9 significant digits; ``None`` and NaN are empty."""
    if v is None:
        return ""
    if isinstance(v, (bool, np.bool_)):
        return "1" if v else "0"
    if isinstance(v, numbers.Integral):
        return str(int(v))
    if isinstance(v, numbers.Real):
        v = float(v)
        if math.isnan(v):
            return ""
        if math.isinf(v):
            return "inf" if v > 0 else "-inf"
        s = format(v, f".{SIG_DIGITS}g")
        return "0" if s == "-0" else s
    return str(v)


def _header_rows(report):
    if isinstance(report, tuple) and len(report) == 2:
        header, rows = report
    else:
        header = report.header
        rows = report.rows() if callable(report.rows) else report.rows
    return tuple(header), list(rows)


def write_csv(path, header, rows):
    """Header plus one line per row; raises ``ValueError`` on an empty table without touching ``path``."""
    rows = list(rows)
    if not rows:
        raise ValueError(f"refusing to write an empty report to {path}")
    for r in rows:
        if len(r) != len(header):
            raise ValueError(f"row has {len(r)} fields, header has {len(header)}")
    tmp = f"{path}.tmp"
    try:
        with open(tmp, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(header)
            for r in rows:
                w.writerow([format_number(v) for v in r])
        os.replace(tmp, path)
    except OSError as exc:
        if os.path.exists(tmp):
            os.remove(tmp)
        raise OSError(exc.errno, f"cannot write {path}: {exc.strerror}") from None
    return path


def write_metrics_csv(report, path):
    """Write anything with ``header`` and ``rows`` (or a ``(header, rows)`` pair)."""
    header, rows = _header_rows(report)
    return write_csv(path, header, rows)


def read_csv(path):
    """``(header, rows)`` with numeric cells parsed to float and empty cells to ``None``."""
    with open(path, newline="", encoding="utf-8") as fh:
        r = csv.reader(fh)
        header = tuple(next(r))
        rows = []
        for line in r:
            out = []
            for cell in line:
                if cell == "":
                    out.append(None)
                    continue
                try:
                    out.append(float(cell))
                except ValueError:
                    out.append(cell)
            rows.append(tuple(out))
    return header, rows


def file_sha256(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def config_digest(text):
    if isinstance(text, str):
        text = text.encode("utf-8")
    return hashlib.sha256(text).hexdigest()


def write_json(path, obj):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return path


def _now():
    return datetime.now(timezone.utc).isoformat(timespec="milliseconds")


@dataclass
class RunManifest:
    """Reproducibility record. Reruns of one (config, seed) differ only in the timestamps."""

    tool_version: str
    config_digest: str
    master_seed: int
    subcommand: str
    started: str = field(default_factory=_now)
    finished: str = None
    outputs: list = field(default_factory=list)

    def add_output(self, path, out_dir):
        self.outputs.append({"path": os.path.relpath(path, out_dir).replace(os.sep, "/"), "sha256": file_sha256(path)})

    def finish(self):
        self.finished = _now()
        self.outputs.sort(key=lambda o: o["path"])
        return self

    def as_dict(self):
        return asdict(self)

    def write(self, path):
        return write_json(path, self.as_dict())
