"""Report emission: versioned JSON, CSV tables, PGM heatmaps and topographies.

Every filename carries the first 12 hex digits of the config hash and the
seed. JSON is written with sorted keys and no wall-clock fields unless
``runtime_sec`` is passed explicitly, so reruns are byte-identical.
"""

from __future__ import annotations

import csv
import io
import json
import os

import jsonschema
import numpy as np

from .images import write_pgm_array
from .metrics import RetrievalReport, RSAMatrix, Topography

SCHEMA_VERSION = 1

_REPORT_SCHEMA = {
    "type": "object",
    "required": ["top1", "top5", "n_queries", "n_gallery", "modality", "per_class", "tags",
                 "seed", "config_hash"],
    "additionalProperties": False,
    "properties": {
        "top1": {"type": "number", "minimum": 0, "maximum": 1},
        "top5": {"type": "number", "minimum": 0, "maximum": 1},
        "n_queries": {"type": "integer", "minimum": 0},
        "n_gallery": {"type": "integer", "minimum": 0},
        "modality": {"type": "string"},
        "per_class": {
            "type": "object",
            "additionalProperties": {
                "type": "object",
                "required": ["n", "top1_hits", "top5_hits"],
                "properties": {k: {"type": "integer", "minimum": 0}
                               for k in ("n", "top1_hits", "top5_hits")},
            },
        },
        "tags": {"type": "object"},
        "seed": {"type": ["integer", "null"]},
        "config_hash": {"type": ["string", "null"]},
    },
}

REPORT_JSON_SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "type": "object",
    "required": ["schema_version", "config_hash", "seed", "reports", "runtime_sec"],
    "additionalProperties": False,
    "properties": {
        "schema_version": {"const": SCHEMA_VERSION},
        "config_hash": {"type": "string", "pattern": "^[0-9a-f]{64}$"},
        "seed": {"type": "integer", "minimum": 0},
        "reports": {"type": "array", "items": _REPORT_SCHEMA},
        "ablation_axis": {"enum": ["module", "band", "region", "encoder"]},
        "runtime_sec": {"type": ["number", "null"], "minimum": 0},
    },
}


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.generic):
        return obj.item()
    return obj


def report_document(reports, config_hash: str, seed: int, ablation_axis=None,
                    runtime_sec=None) -> dict:
    doc = {
        "schema_version": SCHEMA_VERSION,
        "config_hash": config_hash,
        "seed": int(seed),
        "reports": [_jsonable(r.to_dict()) for r in reports],
        "runtime_sec": runtime_sec,
    }
    if ablation_axis is not None:
        doc["ablation_axis"] = ablation_axis
    return doc


def validate_document(doc: dict) -> None:
    """Raise ``jsonschema.ValidationError`` if ``doc`` breaks the report schema."""
    jsonschema.validate(doc, REPORT_JSON_SCHEMA)
    for r in doc["reports"]:
        if r["top1"] > r["top5"] + 1e-12:
            raise jsonschema.ValidationError("top1 exceeds top5")
        hits1 = sum(c["top1_hits"] for c in r["per_class"].values())
        if r["per_class"] and abs(hits1 / max(r["n_queries"], 1) - r["top1"]) > 1e-9:
            raise jsonschema.ValidationError("per-class hits disagree with top1")


def dumps(doc: dict) -> str:
    return json.dumps(doc, sort_keys=True, indent=2) + "\n"


def parse_document(text: str) -> tuple:
    """Validate JSON text and return (document, [RetrievalReport])."""
    doc = json.loads(text)
    validate_document(doc)
    return doc, [RetrievalReport.from_dict(r) for r in doc["reports"]]


def stem(config_hash: str, seed: int) -> str:
    return f"{config_hash[:12]}_s{int(seed)}"


def table_rows(reports) -> list:
    rows = []
    for r in reports:
        t = r.tags
        rows.append({
            "row": t.get("row", ""), "modality": r.modality,
            "top1": f"{r.top1:.6f}", "top5": f"{r.top5:.6f}",
            "top1_std": "" if "top1_std" not in t else f"{t['top1_std']:.6f}",
            "top5_std": "" if "top5_std" not in t else f"{t['top5_std']:.6f}",
            "n_queries": r.n_queries, "n_gallery": r.n_gallery,
        })
    return rows


def _write_text(path, text: str) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(text)


def _csv_text(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


def emit_report(reports, out_dir, config_hash: str, seed: int, ablation_axis=None,
                runtime_sec=None, rsa: dict | None = None, topographies: dict | None = None) -> list:
    """Write the JSON report, its CSV table and any heatmaps; returns the paths.

    ``rsa`` maps a name to an :class:`RSAMatrix`; ``topographies`` maps a
    name to ``(Topography, channel_names)``.
    """
    os.makedirs(out_dir, exist_ok=True)
    base = stem(config_hash, seed)
    kind = "ablation_" + ablation_axis if ablation_axis else "report"
    doc = report_document(reports, config_hash, seed, ablation_axis, runtime_sec)
    validate_document(doc)
    paths = []

    p = os.path.join(out_dir, f"{kind}_{base}.json")
    _write_text(p, dumps(doc))
    paths.append(p)

    rows = table_rows(reports)
    header = list(rows[0]) if rows else ["row", "modality", "top1", "top5"]
    p = os.path.join(out_dir, f"{kind}_{base}.csv")
    _write_text(p, _csv_text(header, [list(r.values()) for r in rows]))
    paths.append(p)

    for name, mat in sorted((rsa or {}).items()):
        paths += write_rsa(mat, out_dir, f"rsa_{name}_{base}")
    for name, (topo, channels) in sorted((topographies or {}).items()):
        paths += write_topography(topo, channels, out_dir, f"topo_{name}_{base}")
    return paths


def write_rsa(mat: RSAMatrix, out_dir, name: str) -> list:
    pgm = os.path.join(out_dir, name + ".pgm")
    write_pgm_array(pgm, mat.matrix, -1.0, 1.0)
    rows = [[int(mat.order[i])] + [f"{v:.6f}" for v in row] for i, row in enumerate(mat.matrix)]
    header = ["item"] + [str(int(o)) for o in mat.order]
    path = os.path.join(out_dir, name + ".csv")
    _write_text(path, _csv_text(header, rows))
    return [pgm, path]


def write_topography(topo: Topography, channels, out_dir, name: str) -> list:
    """One-row PGM strip (one pixel column per channel) plus a channel/score CSV."""
    pgm = os.path.join(out_dir, name + ".pgm")
    write_pgm_array(pgm, topo.scores[None, :], 0.0, 1.0)
    rows = [[c, f"{s:.6f}"] for c, s in zip(channels, topo.scores)]
    path = os.path.join(out_dir, name + ".csv")
    _write_text(path, _csv_text(["channel", "score"], rows)
                + ("# degenerate\n" if topo.degenerate else ""))
    return [pgm, path]
