"""Deterministic artifact writers: canonical JSON, delimited tables, manifests.

Every artifact embeds the config hash and master seed, floats are rendered
with a fixed shortest-roundtrip format, and keys are sorted, so reruns with
the same config and seed produce byte-identical files.
"""

from __future__ import annotations

import hashlib
import json
from pathlib import Path

import numpy as np


def sanitize(obj):
    """Recursively convert numpy scalars/arrays and non-finite floats for JSON."""
    if isinstance(obj, dict):
        return {str(k): sanitize(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [sanitize(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [sanitize(v) for v in obj.tolist()]
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        x = float(obj)
        if np.isnan(x):
            return "nan"
        if np.isinf(x):
            return "inf" if x > 0 else "-inf"
        return x
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    return obj


def canonical_json(obj) -> str:
    return json.dumps(sanitize(obj), sort_keys=True, separators=(",", ":"))


def config_hash(config: dict) -> str:
    return hashlib.sha256(canonical_json(config).encode()).hexdigest()[:16]


def fmt_value(x) -> str:
    if isinstance(x, (float, np.floating)):
        x = float(x)
        if np.isnan(x):
            return "nan"
        if np.isinf(x):
            return "inf" if x > 0 else "-inf"
        return format(x, ".17g")
    if isinstance(x, (bool, np.bool_)):
        return "true" if x else "false"
    return str(x)


def write_json(path: Path, payload: dict, meta: dict) -> Path:
    body = dict(payload)
    body["config_hash"] = meta["config_hash"]
    body["master_seed"] = meta["master_seed"]
    text = json.dumps(sanitize(body), sort_keys=True, indent=1)
    Path(path).write_text(text + "\n")
    return Path(path)


def write_csv(path: Path, fieldnames: list[str], rows: list[dict], meta: dict) -> Path:
    lines = [f"# config_hash={meta['config_hash']} master_seed={meta['master_seed']}"]
    lines.append(",".join(fieldnames))
    for row in rows:
        lines.append(",".join(fmt_value(row.get(k, "")) for k in fieldnames))
    Path(path).write_text("\n".join(lines) + "\n")
    return Path(path)


def sha256_file(path: Path) -> str:
    h = hashlib.sha256()
    h.update(Path(path).read_bytes())
    return h.hexdigest()


def write_manifest(out_dir: Path, artifacts: list[Path], meta: dict) -> Path:
    out_dir = Path(out_dir)
    entries = []
    for p in sorted(set(Path(a) for a in artifacts)):
        entries.append(
            {
                "path": str(p.relative_to(out_dir)),
                "sha256": sha256_file(p),
                "bytes": p.stat().st_size,
            }
        )
    manifest = {
        "config_hash": meta["config_hash"],
        "master_seed": meta["master_seed"],
        "artifacts": entries,
    }
    path = out_dir / "manifest.json"
    path.write_text(json.dumps(sanitize(manifest), sort_keys=True, indent=1) + "\n")
    return path
