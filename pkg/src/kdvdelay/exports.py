"""Versioned text outputs: record CSV, key=value reports, plot data, snapshots, manifests.

Every file starts with a ``# kdvdelay <kind> v<version>`` line. Floats are
written with ``%.17g`` so that reruns of deterministic settings are
byte-identical.
"""
from __future__ import annotations

import datetime as _dt
import json
from pathlib import Path

import numpy as np

from . import __version__

FORMAT_VERSION = 1
RECORD_COLUMNS = ("t", "E", "V", "eta_x_L", "z1")


def header(kind: str) -> str:
    return f"# kdvdelay {kind} v{FORMAT_VERSION}"


def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return "%.17g" % float(v)
    return str(v)


def write_record_csv(record, path: str | Path) -> Path:
    """Series ``t,E,V,eta_x_L,z1``; ``V`` is ``nan`` when no certificate was used."""
    path = Path(path)
    table = record.series_table()
    with open(path, "w", newline="\n") as fh:
        fh.write(header("record") + "\n")
        fh.write(",".join(RECORD_COLUMNS) + "\n")
        for row in table:
            fh.write(",".join("%.17g" % v for v in row) + "\n")
    return path


def read_record_csv(path: str | Path) -> dict:
    with open(path) as fh:
        first = fh.readline().strip()
        if first != header("record"):
            raise ValueError(f"{path}: not a v{FORMAT_VERSION} record file")
        cols = fh.readline().strip().split(",")
        data = np.loadtxt(fh, delimiter=",", ndmin=2)
    return {c: data[:, i] for i, c in enumerate(cols)}


def write_kv(values: dict, path: str | Path, kind: str = "report") -> Path:
    """``key = value`` block, one entry per line, in insertion order."""
    path = Path(path)
    with open(path, "w", newline="\n") as fh:
        fh.write(header(kind) + "\n")
        fh.write(format_kv(values))
    return path


def format_kv(values: dict) -> str:
    return "".join(f"{k} = {_fmt(v)}\n" for k, v in values.items())


def read_kv(path: str | Path) -> dict:
    out = {}
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            k, v = (p.strip() for p in line.split("=", 1))
            out[k] = v
    return out


def write_plot_data(path: str | Path, columns: dict, comment: str = "") -> Path:
    """Whitespace-separated columns with a comment header naming them."""
    path = Path(path)
    names = list(columns)
    data = np.column_stack([np.asarray(columns[n], dtype=float) for n in names])
    with open(path, "w", newline="\n") as fh:
        fh.write(header("plot-data") + "\n")
        if comment:
            fh.write(f"# {comment}\n")
        fh.write("# " + " ".join(names) + "\n")
        for row in data:
            fh.write(" ".join("%.17g" % v for v in row) + "\n")
    return path


def write_snapshot(path: str | Path, t: float, values: np.ndarray, L: float) -> Path:
    """One field as a plain-text matrix (rows are times) with a ``t nx L`` header line."""
    path = Path(path)
    values = np.atleast_2d(np.asarray(values, dtype=float))
    t = np.atleast_1d(np.asarray(t, dtype=float))
    with open(path, "w", newline="\n") as fh:
        fh.write(header("snapshot") + "\n")
        fh.write(f"# t_first={_fmt(t[0])} t_last={_fmt(t[-1])} nx={values.shape[1] - 1} L={_fmt(float(L))}\n")
        for ti, row in zip(t, values):
            fh.write(_fmt(ti) + " " + " ".join("%.17g" % v for v in row) + "\n")
    return path


def write_figure1_script(path: str | Path, data_file: str, crossing: tuple[float, float]) -> Path:
    """gnuplot script plotting ``f``, ``g`` and ``min(f, g)`` against ``mu1``."""
    path = Path(path)
    x, y = crossing
    text = f"""{header('gnuplot')}
set xlabel "mu1"
set ylabel "rate"
set key top left
set label 1 sprintf("mu1* = %.6g", {x!r}) at {x!r},{y!r} point pt 7 offset 1,-1
set terminal pngcairo size 800,600
set output "figure1.png"
plot "{data_file}" using 1:2 with lines title "f", \\
     "{data_file}" using 1:3 with lines title "g", \\
     "{data_file}" using 1:4 with lines dashtype 2 title "min(f, g)"
"""
    path.write_text(text)
    return path


def write_manifest(path: str | Path, config: dict, outputs: list, command: str,
                   inputs: dict | None = None) -> Path:
    """Run manifest: resolved configuration, tool version, timestamp, input digests, outputs."""
    path = Path(path)
    manifest = {
        "format": f"kdvdelay-manifest/{FORMAT_VERSION}",
        "command": command,
        "version": __version__,
        "timestamp": _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds"),
        "inputs": dict(sorted((inputs or {}).items())),
        "outputs": [str(p) for p in outputs],
        "config": config,
    }
    path.write_text(json.dumps(manifest, indent=2, sort_keys=False) + "\n")
    return path


def read_manifest_config(path: str | Path) -> dict:
    data = json.loads(Path(path).read_text())
    if not str(data.get("format", "")).startswith("kdvdelay-manifest/"):
        raise ValueError(f"{path}: not a kdvdelay manifest")
    return data["config"]
