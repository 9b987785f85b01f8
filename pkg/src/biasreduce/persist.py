"""CSV and JSON persistence for risk reports.

Data files contain only deterministic fields.  Wall-clock times and
timestamps go to a sidecar ``<path>.log`` so that reruns with the same seed
produce byte-identical data files.
"""

from __future__ import annotations

import csv
import io
import json
import math
import time
from dataclasses import asdict, fields
from pathlib import Path
from typing import Sequence

from .errors import PersistError
from .harness import RiskReport, SlopeFit

CSV_COLUMNS = [f.name for f in fields(RiskReport) if f.name != "wall_time"]
SLOPE_COLUMNS = [f.name for f in fields(SlopeFit)]

_INT_FIELDS = {"d", "n", "k", "inner_replicates", "replicates", "seed"}
_STR_FIELDS = {"functional", "theta", "kernel", "config_hash"}


def _encode_float(x):
    if x is None:
        return None
    if math.isinf(x) or math.isnan(x):
        return repr(float(x))
    return x


def _decode_float(x):
    if x is None or x == "":
        return None
    return float(x)


def report_to_record(report: RiskReport) -> dict:
    rec = asdict(report)
    rec.pop("wall_time")
    rec["orlicz"] = {key: _encode_float(v) for key, v in rec["orlicz"].items()}
    for key, value in rec.items():
        if isinstance(value, float):
            rec[key] = _encode_float(value)
    return rec


def record_to_report(rec: dict) -> RiskReport:
    kw = {}
    for name in CSV_COLUMNS:
        value = rec[name]
        if name in _INT_FIELDS:
            kw[name] = int(value)
        elif name in _STR_FIELDS:
            kw[name] = str(value)
        elif name == "control_variate":
            kw[name] = value if isinstance(value, bool) else value == "true"
        elif name == "orlicz":
            raw = json.loads(value) if isinstance(value, str) else value
            kw[name] = {key: _decode_float(v) for key, v in raw.items()}
        else:
            kw[name] = _decode_float(value)
    return RiskReport(**kw)


def _csv_cell(name, value):
    if value is None:
        return ""
    if name == "orlicz":
        return json.dumps(value, sort_keys=True)
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    return str(value)


def dumps(reports: RiskReport | Sequence[RiskReport], fmt: str) -> str:
    single = isinstance(reports, RiskReport)
    rows = [reports] if single else list(reports)
    if fmt == "json":
        payload = report_to_record(rows[0]) if single else [report_to_record(r) for r in rows]
        return json.dumps(payload, indent=2, sort_keys=False) + "\n"
    if fmt == "csv":
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\r\n")
        writer.writerow(CSV_COLUMNS)
        for r in rows:
            rec = report_to_record(r)
            writer.writerow([_csv_cell(c, rec[c]) for c in CSV_COLUMNS])
        return buf.getvalue()
    raise ValueError(f"unknown format {fmt!r}")


def loads(text: str, fmt: str) -> list[RiskReport]:
    if fmt == "json":
        payload = json.loads(text)
        if isinstance(payload, dict):
            payload = [payload]
        return [record_to_report(rec) for rec in payload]
    if fmt == "csv":
        reader = csv.DictReader(io.StringIO(text, newline=""))
        if reader.fieldnames is not None and list(reader.fieldnames) != CSV_COLUMNS:
            raise ValueError("CSV header does not match the report schema")
        return [record_to_report(row) for row in reader]
    raise ValueError(f"unknown format {fmt!r}")


def dumps_slopes(slopes: Sequence[SlopeFit], fmt: str) -> str:
    if fmt == "json":
        return json.dumps([asdict(s) for s in slopes], indent=2) + "\n"
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\r\n")
    writer.writerow(SLOPE_COLUMNS)
    for s in slopes:
        writer.writerow([_csv_cell(c, getattr(s, c)) for c in SLOPE_COLUMNS])
    return buf.getvalue()


def _write(path: Path, text: str) -> None:
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", newline="") as fh:
            fh.write(text)
    except OSError as exc:
        raise PersistError(f"cannot write {path}: {exc.strerror or exc}") from exc


def write_sidecar(path: str | Path, reports: Sequence[RiskReport], extra: dict | None = None) -> Path:
    side = Path(str(path) + ".log")
    lines = []
    stamp = time.strftime("%Y-%m-%dT%H:%M:%S%z")
    for r in reports:
        entry = {"timestamp": stamp, "functional": r.functional, "n": r.n, "d": r.d,
                 "seed": r.seed, "wall_time": r.wall_time}
        if extra:
            entry.update(extra)
        lines.append(json.dumps(entry))
    _write(side, "\n".join(lines) + "\n")
    return side


def persist(reports: RiskReport | Sequence[RiskReport], path: str | Path, fmt: str = "csv") -> Path:
    """Write reports to ``path`` (data) and ``path.log`` (timings)."""
    path = Path(path)
    _write(path, dumps(reports, fmt))
    write_sidecar(path, [reports] if isinstance(reports, RiskReport) else list(reports))
    return path


def read_reports(path: str | Path, fmt: str = "csv") -> list[RiskReport]:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise PersistError(f"cannot read {path}: {exc.strerror or exc}") from exc
    return loads(text, fmt)
