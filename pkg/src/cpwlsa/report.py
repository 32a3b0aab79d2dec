"""CSV emission with a metadata comment line.

Line 1 is ``# key=value ...`` (tool version, config hash, calibration
constants, seed), line 2 the header. Floats are written with nine
significant digits so files compare byte-for-byte across runs.
"""

from __future__ import annotations

import csv
import io
from pathlib import Path

from . import __version__
from .fabric import SystolicConfig, calibration_metadata


def fmt_value(v) -> str:
    if isinstance(v, float):
        return f"{v:.9g}"
    return str(v)


def metadata_line(cfg: SystolicConfig, **extra) -> str:
    meta = {"tool": "cpwlsa", "version": __version__, "config_hash": cfg.config_hash()}
    cal = calibration_metadata(cfg)
    meta["output_bus_width"] = cal["output_bus_width"]
    meta["calibration_target_drain_fraction"] = cal["calibration_target_drain_fraction"]
    meta.update(extra)
    return "# " + " ".join(f"{k}={fmt_value(v)}" for k, v in meta.items())


def csv_text(header: list[str], rows: list[list], meta: str) -> str:
    buf = io.StringIO()
    buf.write(meta + "\n")
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow([fmt_value(v) for v in row])
    return buf.getvalue()


def write_csv(path, header: list[str], rows: list[list], meta: str) -> None:
    Path(path).write_text(csv_text(header, rows, meta))


def read_csv(path) -> tuple[str, list[dict]]:
    """Metadata line and the data rows as dicts of strings."""
    lines = Path(path).read_text().splitlines()
    meta = lines[0] if lines and lines[0].startswith("#") else ""
    body = lines[1:] if meta else lines
    return meta, list(csv.DictReader(body))
