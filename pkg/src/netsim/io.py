"""Run persistence: KPI JSON-lines, manifests, heatmaps and optimizer traces."""

from __future__ import annotations

import csv
import hashlib
import json
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .core import Scenario, scenario_to_json


@dataclass
class RunManifest:
    run_id: str
    scenario_hash: str
    spec: dict
    started: float
    finished: float = 0.0
    outputs: dict = field(default_factory=dict)  # role -> file name, relative to the run dir
    engine_version: str = __version__


def write_jsonl(path, records) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for r in records:
            fh.write(r if isinstance(r, str) else json.dumps(r, separators=(",", ":")))
            fh.write("\n")


def write_frames(path, frames) -> None:
    write_jsonl(path, (f.to_json() for f in frames))


def persist(out_dir, scenario: Scenario, spec: dict, frames, started: float | None = None, extra: dict | None = None) -> RunManifest:
    """Write ``scenario.json``, ``kpis.jsonl`` and ``manifest.json`` into ``out_dir``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    cfg = scenario_to_json(scenario).encode()
    (out / "scenario.json").write_bytes(cfg)
    write_frames(out / "kpis.jsonl", frames)
    digest = hashlib.sha256(cfg).hexdigest()
    outputs = {"scenario": "scenario.json", "kpis": "kpis.jsonl"}
    outputs.update(extra or {})
    man = RunManifest(
        run_id=f"{digest[:12]}-{spec.get('mode', 'run')}",
        scenario_hash=digest,
        spec={k: v for k, v in spec.items() if k != "scenario"},
        started=started if started is not None else time.time(),
        finished=time.time(),
        outputs=outputs,
    )
    (out / "manifest.json").write_text(json.dumps(asdict(man), indent=2), encoding="utf-8")
    return man


def verify_run(out_dir) -> bool:
    """True when every manifest output exists and the persisted config matches its hash."""
    out = Path(out_dir)
    man = json.loads((out / "manifest.json").read_text(encoding="utf-8"))
    if not all((out / p).exists() for p in man["outputs"].values()):
        return False
    cfg = (out / man["outputs"]["scenario"]).read_bytes()
    return hashlib.sha256(cfg).hexdigest() == man["scenario_hash"]


def write_heatmap(path, values: np.ndarray, height: int, width: int) -> None:
    """Row r holds y-band r (row 0 at the origin edge); one value per grid cell."""
    grid = np.asarray(values, float).reshape(height, width)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        for row in grid:
            w.writerow([f"{v:.4f}" for v in row])


def write_trace(path, trace) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["evaluation", "action_hash", "reward"])
        for i, h, r in trace:
            w.writerow([i, h, repr(float(r))])


def read_trace(path) -> list[tuple[int, str, float]]:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    return [(int(r["evaluation"]), r["action_hash"], float(r["reward"])) for r in rows]
