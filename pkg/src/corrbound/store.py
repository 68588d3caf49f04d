"""Persistence: trajectory step tables (CSV), bound functions (JSON), and
run manifests.

All floats are rendered with 17 significant digits, which reproduces the
exact 64-bit value on parse; write -> read -> write is byte-identical.
Readers validate structure and invariants and reject rather than repair.
"""

from __future__ import annotations

import hashlib
import json
import math
import os
from dataclasses import asdict, dataclass
from datetime import datetime, timezone
from typing import Sequence

from .bounds import BinPartition, BoundConfig, BoundFunction, Provenance
from .dynamics import STATUSES, StepRecord, Trajectory
from .errors import InvariantViolation, SchemaMismatch

STEPS_HEADER = "n,trial_id,k,delta_raw,rho,delta_norm,stop_index,status"
BOUND_KEYS = ("schema_version", "n", "p", "k_post", "m", "c_min", "q_trim",
              "edges", "log_quantiles", "training_hash")
SCHEMA_VERSION = 1


def fmt_float(x: float) -> str:
    return f"{x:.17g}"


def file_hash(path) -> str:
    with open(path, "rb") as f:
        return hashlib.sha256(f.read()).hexdigest()[:16]


# ---------------------------------------------------------------------------
# step tables
# ---------------------------------------------------------------------------

def write_steps(trials: Sequence[Trajectory], path) -> None:
    lines = [STEPS_HEADER]
    for t in trials:
        for s in t.steps:
            rho = "" if s.rho is None else fmt_float(s.rho)
            lines.append(f"{t.n},{t.trial_id},{s.k},{fmt_float(s.delta_raw)},"
                         f"{rho},{fmt_float(s.delta_norm)},{t.stop_index},"
                         f"{t.status}")
    with open(path, "w", newline="") as f:
        f.write("\n".join(lines) + "\n")


def _finish_trajectory(n, trial_id, stop_index, status,
                       steps: list[StepRecord]) -> Trajectory:
    for i, s in enumerate(steps):
        if s.k != i:
            raise InvariantViolation(
                f"trial {trial_id}: step indices not contiguous at k={s.k}")
    if stop_index != len(steps):
        raise InvariantViolation(
            f"trial {trial_id}: stop_index {stop_index} != {len(steps)} steps")
    return Trajectory(trial_id=trial_id, n=n, stop_index=stop_index,
                      steps=tuple(steps), status=status)


def read_steps(path) -> list[Trajectory]:
    with open(path, "r", newline="") as f:
        content = f.read()
    lines = content.splitlines()
    if not lines or lines[0] != STEPS_HEADER:
        raise SchemaMismatch(f"expected header '{STEPS_HEADER}'")
    trials: list[Trajectory] = []
    current: list[StepRecord] = []
    meta = None  # (n, trial_id, stop_index, status)
    for ln, line in enumerate(lines[1:], start=2):
        parts = line.split(",")
        if len(parts) != 8:
            raise SchemaMismatch(f"line {ln}: expected 8 columns")
        try:
            n = int(parts[0])
            trial_id = int(parts[1])
            k = int(parts[2])
            delta_raw = float(parts[3])
            rho = None if parts[4] == "" else float(parts[4])
            delta_norm = float(parts[5])
            stop_index = int(parts[6])
        except ValueError as e:
            raise SchemaMismatch(f"line {ln}: {e}") from None
        status = parts[7]
        if status not in STATUSES:
            raise InvariantViolation(f"line {ln}: unknown status '{status}'")
        if n < 2 or delta_raw < 0:
            raise InvariantViolation(f"line {ln}: value out of range")
        if delta_norm != delta_raw / n and \
                abs(delta_norm - delta_raw / n) > math.ulp(delta_raw / n):
            raise InvariantViolation(
                f"line {ln}: delta_norm inconsistent with delta_raw/n")
        key = (n, trial_id, stop_index, status)
        if meta is None:
            meta = key
        elif key != meta:
            if key[1] == meta[1]:
                raise InvariantViolation(
                    f"line {ln}: inconsistent trajectory metadata")
            trials.append(_finish_trajectory(*meta, current))
            current, meta = [], key
        current.append(StepRecord(k=k, delta_raw=delta_raw, rho=rho,
                                  delta_norm=delta_norm))
    if meta is not None:
        trials.append(_finish_trajectory(*meta, current))
    return trials


# ---------------------------------------------------------------------------
# bound files
# ---------------------------------------------------------------------------

def _json_num(x) -> str:
    if x is None:
        return "null"
    if isinstance(x, bool):
        raise TypeError("unexpected bool")
    if isinstance(x, int):
        return str(x)
    return fmt_float(x)


def write_bound(bound: BoundFunction, path) -> None:
    prov = bound.provenance
    cfg = prov.config
    edges = ", ".join(fmt_float(e) for e in bound.partition.edges)
    logq = ", ".join(fmt_float(q) for q in bound.log_quantiles)
    doc = (
        "{\n"
        f'  "schema_version": {SCHEMA_VERSION},\n'
        f'  "n": {_json_num(prov.n)},\n'
        f'  "p": {fmt_float(bound.level)},\n'
        f'  "k_post": {prov.k_post},\n'
        f'  "m": {cfg.m},\n'
        f'  "c_min": {cfg.c_min},\n'
        f'  "q_trim": {fmt_float(cfg.q_trim)},\n'
        f'  "edges": [{edges}],\n'
        f'  "log_quantiles": [{logq}],\n'
        f'  "training_hash": "{prov.training_hash}"\n'
        "}\n"
    )
    with open(path, "w", newline="") as f:
        f.write(doc)


def read_bound(path) -> BoundFunction:
    with open(path, "r") as f:
        try:
            doc = json.load(f)
        except json.JSONDecodeError as e:
            raise SchemaMismatch(f"not valid JSON: {e}") from None
    if not isinstance(doc, dict):
        raise SchemaMismatch("expected a JSON object")
    if "schema_version" not in doc:
        raise SchemaMismatch("missing schema_version")
    if doc["schema_version"] != SCHEMA_VERSION:
        raise SchemaMismatch(f"unsupported schema_version "
                             f"{doc['schema_version']}")
    missing = [k for k in BOUND_KEYS if k not in doc]
    extra = [k for k in doc if k not in BOUND_KEYS]
    if missing or extra:
        raise SchemaMismatch(f"missing keys {missing}, unexpected {extra}")
    for key in ("m", "c_min", "k_post"):
        if not isinstance(doc[key], int) or isinstance(doc[key], bool):
            raise InvariantViolation(f"{key} must be an integer")
    if doc["n"] is not None and not isinstance(doc["n"], int):
        raise InvariantViolation("n must be an integer or null")
    if doc["k_post"] < 0:
        raise InvariantViolation("k_post must be non-negative")
    if not isinstance(doc["training_hash"], str):
        raise InvariantViolation("training_hash must be a string")
    edges = doc["edges"]
    logq = doc["log_quantiles"]
    if not isinstance(edges, list) or not isinstance(logq, list):
        raise SchemaMismatch("edges and log_quantiles must be arrays")
    if any(not b > a for a, b in zip(edges, edges[1:])):
        raise InvariantViolation("edges must be strictly increasing")
    if len(logq) != len(edges) - 1:
        raise InvariantViolation("need one quantile per bin")
    try:
        cfg = BoundConfig(p=doc["p"], m=doc["m"], c_min=doc["c_min"],
                          q_trim=doc["q_trim"])
        partition = BinPartition(edges=tuple(float(e) for e in edges),
                                 counts=None)
    except ValueError as e:
        raise InvariantViolation(str(e)) from None
    prov = Provenance(config=cfg, n=doc["n"], k_post=doc["k_post"],
                      training_hash=doc["training_hash"], training_ids=None)
    values = tuple(math.exp(q) for q in logq)
    return BoundFunction(partition=partition,
                         log_quantiles=tuple(float(q) for q in logq),
                         bin_values=values, level=cfg.p, provenance=prov)


# ---------------------------------------------------------------------------
# run manifests
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class RunManifest:
    schema_version: int
    command: str
    params: dict
    inputs: dict
    outputs: dict
    created_at: str
    content_hash: str


def manifest_path(output_path) -> str:
    return f"{output_path}.manifest.json"


def _created_at() -> str:
    epoch = os.environ.get("SOURCE_DATE_EPOCH")
    if epoch is not None:
        ts = datetime.fromtimestamp(int(epoch), tz=timezone.utc)
    else:
        ts = datetime.now(tz=timezone.utc)
    return ts.isoformat()


def write_manifest(command: str, params: dict, inputs: dict, outputs: dict,
                   path) -> RunManifest:
    """Write a sidecar manifest describing one CLI run.

    inputs/outputs map file paths to content hashes.  content_hash covers
    everything except created_at, so reruns with identical inputs agree on
    it even when timestamps differ.
    """
    payload = {"schema_version": SCHEMA_VERSION, "command": command,
               "params": params, "inputs": inputs, "outputs": outputs}
    digest = hashlib.sha256(
        json.dumps(payload, sort_keys=True).encode()).hexdigest()[:16]
    manifest = RunManifest(schema_version=SCHEMA_VERSION, command=command,
                           params=params, inputs=inputs, outputs=outputs,
                           created_at=_created_at(), content_hash=digest)
    with open(path, "w", newline="") as f:
        json.dump(asdict(manifest), f, indent=2, sort_keys=True)
        f.write("\n")
    return manifest
