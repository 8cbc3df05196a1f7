"""Run manifests: every output directory records what produced it."""

from __future__ import annotations

import hashlib
import json
from datetime import datetime, timezone
from pathlib import Path

from . import __version__

MANIFEST_NAME = "manifest.json"


def file_digest(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()[:16]


def write_manifest(out_dir, stage: str, config_digest: str, seed: int | None,
                   inputs: list, outputs: list) -> Path:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    payload = {
        "tool": "tls-locator",
        "version": __version__,
        "stage": stage,
        "config_digest": config_digest,
        "seed": seed,
        "inputs": [str(p) for p in inputs],
        "outputs": sorted(str(Path(p).name) for p in outputs),
        "created_utc": datetime.now(timezone.utc).isoformat(timespec="seconds"),
    }
    path = out_dir / MANIFEST_NAME
    path.write_text(json.dumps(payload, indent=2))
    return path
