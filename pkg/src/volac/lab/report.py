"""Run records and their on-disk forms: JSON document, CSV tables, SVG plots.

Every writer is deterministic: keys are sorted, floats are written with
``repr`` (shortest round-trip form), SVG output carries no date and a fixed
hash salt.  Wall-clock timing lives in a separate file so the result
document depends only on the config and seed.
"""
from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

DOC_NAME = "result.json"
TIMING_NAME = "timing.json"
FORMATS = ("doc", "table", "plots")


@dataclass
class RunRecord:
    experiment: str
    config: dict
    input_hash: str
    tool_version: str
    results: dict
    tables: dict = field(default_factory=dict)
    checks: list = field(default_factory=list)
    fields: dict = field(default_factory=dict)
    timing: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return all(c["passed"] for c in self.checks)

    def to_dict(self) -> dict:
        return {
            "experiment": self.experiment, "config": self.config, "input_hash": self.input_hash,
            "tool_version": self.tool_version, "results": self.results,
            "tables": {k: {"columns": list(c), "rows": r} for k, (c, r) in self.tables.items()},
            "checks": self.checks, "passed": self.passed,
            "fields": {k: np.asarray(v).tolist() for k, v in self.fields.items()},
        }

    @classmethod
    def from_dict(cls, d: dict) -> "RunRecord":
        return cls(
            experiment=d["experiment"], config=d["config"], input_hash=d["input_hash"],
            tool_version=d["tool_version"], results=d["results"],
            tables={k: (v["columns"], v["rows"]) for k, v in d.get("tables", {}).items()},
            checks=d.get("checks", []),
            fields={k: np.asarray(v) for k, v in d.get("fields", {}).items()})


def _plain(obj):
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _plain(obj.tolist())
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        x = float(obj)
        return x if math.isfinite(x) else repr(x)
    return obj


def document_text(record: RunRecord) -> str:
    return json.dumps(_plain(record.to_dict()), sort_keys=True, indent=1) + "\n"


def _cell(x) -> str:
    if isinstance(x, (float, np.floating)):
        return repr(float(x))
    if isinstance(x, (np.integer,)):
        return str(int(x))
    if x is None:
        return ""
    return str(x)


def table_text(columns, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for r in rows:
        w.writerow([_cell(x) for x in r])
    return buf.getvalue()


def _figure():
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt
    matplotlib.rcParams["svg.hashsalt"] = "volac"
    matplotlib.rcParams["svg.fonttype"] = "path"
    return plt


def _save(fig, path: Path):
    fig.savefig(path, format="svg", metadata={"Date": None})


def _plot_sweep(record, out: Path, plt) -> list[Path]:
    cols, rows = record.tables.get("sweep", (["eps", "lambda", "residual", "sigma_min", "class"], []))
    ie, il, isg = cols.index("eps"), cols.index("lambda"), cols.index("sigma_min")
    eps = [r[ie] for r in rows]
    sig = [r[isg] for r in rows]
    lam = [r[il] for r in rows]
    paths = []
    fig, ax = plt.subplots(figsize=(6, 4))
    if rows:
        ax.semilogy(eps, np.maximum(sig, 1e-17), ".-", lw=0.8)
    for c in record.results.get("comparisons", []):
        ax.axvline(c["predicted"], color="C3", lw=0.8, ls="--")
    ax.set_xlabel("eps")
    ax.set_ylabel("sigma_min")
    p = out / "sigma_min.svg"
    _save(fig, p)
    plt.close(fig)
    paths.append(p)
    fig, ax = plt.subplots(figsize=(6, 4))
    if rows:
        ax.plot(eps, lam, ".-", lw=0.8)
    for b in record.results.get("brackets", []):
        ax.axvspan(b[0], b[1], color="C1", alpha=0.4)
    ax.set_xlabel("eps")
    ax.set_ylabel("lambda")
    p = out / "bifurcation.svg"
    _save(fig, p)
    plt.close(fig)
    paths.append(p)
    return paths


def _plot_fields(record, out: Path, plt) -> list[Path]:
    paths = []
    for name in sorted(record.fields):
        a = np.asarray(record.fields[name])
        while a.ndim > 2:
            a = a[..., 0]
        fig, ax = plt.subplots(figsize=(4, 4))
        if a.size:
            im = ax.imshow(a.T, origin="lower", extent=(0, 1, 0, 1), cmap="RdBu_r")
            fig.colorbar(im, ax=ax, shrink=0.8)
        ax.set_title(name)
        p = out / f"{name}.svg"
        _save(fig, p)
        plt.close(fig)
        paths.append(p)
    return paths


def emit_report(record: RunRecord, out_dir, formats=FORMATS) -> list[Path]:
    """Write the requested formats under ``out_dir`` and return the paths.

    ``doc`` writes ``result.json`` and ``timing.json``; ``table`` writes one
    CSV per table; ``plots`` writes SVG figures (sigma_min and lambda
    against eps for sweeps, heatmaps for stored fields).
    """
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OSError(f"cannot create output directory {out}: {exc}") from exc
    unknown = set(formats) - set(FORMATS)
    if unknown:
        raise ValueError(f"unknown formats {sorted(unknown)}")
    written = []

    def write(path: Path, text: str):
        try:
            path.write_text(text)
        except OSError as exc:
            raise OSError(f"cannot write {path}: {exc}") from exc
        written.append(path)

    if "doc" in formats:
        write(out / DOC_NAME, document_text(record))
        write(out / TIMING_NAME, json.dumps(_plain(record.timing), sort_keys=True) + "\n")
    if "table" in formats:
        for name in sorted(record.tables):
            cols, rows = record.tables[name]
            write(out / f"{name}.csv", table_text(cols, rows))
    if "plots" in formats:
        plt = _figure()
        if record.experiment == "sweep" or "sweep" in record.tables:
            written += _plot_sweep(record, out, plt)
        written += _plot_fields(record, out, plt)
    return written


def load_record(path) -> RunRecord:
    path = Path(path)
    if path.is_dir():
        path = path / DOC_NAME
    try:
        return RunRecord.from_dict(json.loads(path.read_text()))
    except OSError as exc:
        raise OSError(f"cannot read {path}: {exc}") from exc
