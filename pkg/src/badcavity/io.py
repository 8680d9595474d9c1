"""Result persistence: atomic writes, CSV tables, JSONL records and manifests."""
from __future__ import annotations

import csv
import io
import json
import os
import tempfile
from importlib import metadata
from pathlib import Path

import numpy as np

OUTPUT_ROOT_ENV = "BADCAVITY_OUTPUT_ROOT"


def atomic_write(path, text: str) -> Path:
    """Write to a temporary file in the target directory, then rename."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.chmod(tmp, 0o644)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return path


def _fmt(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, (np.integer,)):
        return str(int(v))
    return v


def csv_text(columns, rows, units: dict, comments=()) -> str:
    """RFC-4180 CSV preceded by '#' lines giving the unit of every column."""
    buf = io.StringIO()
    for line in comments:
        buf.write(f"# {line}\n")
    buf.write("# units: " + ", ".join(f"{c} [{units.get(c, '1')}]" for c in columns) + "\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for row in rows:
        vals = [row[c] for c in columns] if isinstance(row, dict) else row
        w.writerow([_fmt(v) for v in vals])
    return buf.getvalue()


def write_csv(path, columns, rows, units: dict, comments=()) -> Path:
    return atomic_write(path, csv_text(columns, rows, units, comments))


def read_csv(path) -> tuple[list, list]:
    """Columns and rows (as strings) of a CSV written by ``write_csv``."""
    lines = [ln for ln in Path(path).read_text().splitlines() if not ln.startswith("#")]
    r = list(csv.reader(lines))
    return r[0], r[1:]


def jsonl_text(records) -> str:
    return "".join(json.dumps(rec, sort_keys=True, separators=(",", ":")) + "\n"
                   for rec in records)


def code_version() -> str:
    try:
        return metadata.version("artifact")
    except metadata.PackageNotFoundError:
        return "unknown"


def manifest_text(entries: dict) -> str:
    return "".join(f"{k} = {v}\n" for k, v in entries.items())


def read_manifest(path) -> dict:
    out = {}
    for line in Path(path).read_text().splitlines():
        if " = " in line:
            k, v = line.split(" = ", 1)
            out[k] = v
    return out


def resolve_output_dir(cli_out, config_dir: str, command: str) -> Path:
    """--out wins; otherwise the config directory or the command name, under the output root."""
    if cli_out:
        return Path(cli_out)
    root = Path(os.environ.get(OUTPUT_ROOT_ENV, "results"))
    if config_dir:
        p = Path(config_dir)
        return p if p.is_absolute() else root / p
    return root / command
