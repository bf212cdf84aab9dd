"""Machine-readable run manifests written next to every CLI output."""

from __future__ import annotations

import hashlib
import json
import time
from pathlib import Path
from typing import Mapping, Sequence

ARTIFACT_VERSION = "0.1.0"


def _digest(path: Path) -> str:
    h = hashlib.sha256()
    with path.open("rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _digest_tree(path: Path) -> dict[str, str]:
    if path.is_dir():
        return {
            str(p.relative_to(path)): _digest(p)
            for p in sorted(path.rglob("*"))
            if p.is_file() and not p.name.endswith("manifest.json")
        }
    return {path.name: _digest(path)}


def manifest_path_for(output: str | Path) -> Path:
    """Directory outputs get dir/manifest.json; file outputs a sibling."""
    output = Path(output)
    if output.is_dir():
        return output / "manifest.json"
    return output.with_name(output.name + ".manifest.json")


def write_manifest(
    output: str | Path,
    command: str,
    config: Mapping,
    seed: int | None,
    inputs: Sequence[str | Path] = (),
    started: float | None = None,
) -> Path:
    """Record the command, full config echo, seed, input/output digests and
    wall time alongside ``output``."""
    output = Path(output)
    record = {
        "command": command,
        "config": {k: (str(v) if isinstance(v, Path) else v) for k, v in config.items()},
        "seed": seed,
        "inputs": {
            str(p): _digest_tree(Path(p)) for p in inputs if Path(p).exists()
        },
        "outputs": _digest_tree(output),
        "wall_time_s": None if started is None else round(time.time() - started, 3),
        "artifact_version": ARTIFACT_VERSION,
    }
    path = manifest_path_for(output)
    path.write_text(json.dumps(record, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return path
