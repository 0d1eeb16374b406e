"""Artifact formats: CSV tables and maps, JSON reports, the little-endian
golden table file, JSON-lines traces, manifests and the ensemble file"""

import csv
import hashlib
import json
import logging
import struct
from dataclasses import dataclass
from datetime import datetime, timezone
from math import pi
from pathlib import Path
from typing import Any, Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np
import numpy.typing as npt

from sqsdplan.qsd.belief import Belief, BeliefGrid
from sqsdplan.qsd.errors import ConfigError, SQSDError
from sqsdplan.qsd.planner import ActionKind, ActionLabel, PolicyTable, ValueTable
from sqsdplan.qsd.quantum import (
    PAULI_Y,
    DensityOperator,
    MeasurementLibrary,
    binary_library,
    binary_states,
    trine_library,
    trine_states,
    uniform_params,
    unitary_family_library,
    validate_density,
    validate_povm,
)
from sqsdplan.utils import fmt


logger = logging.getLogger(__name__)

GOLDEN_HEADER = struct.Struct("<qqq")


def _cell(x: Any) -> str:
    if isinstance(x, (float, np.floating)):
        return fmt(float(x))
    return str(x)


def write_csv(path: Path, head: Sequence[str], rows: Iterable[Sequence[Any]]) -> Path:
    with open(path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(head)
        for r in rows:
            w.writerow([_cell(x) for x in r])
    logger.info("wrote %s", path)
    return path


def write_grid_csv(path: Path, grid: BeliefGrid) -> Path:
    M = grid.dim
    head = ["point_id"] + [f"k{i + 1}" for i in range(M)] + [f"b{i + 1}" for i in range(M)]
    xy = grid.embedding() if M == 3 else None
    if xy is not None:
        head += ["x", "y"]
    rows = []
    for i in range(grid.size):
        r: List[Any] = [i] + [int(k) for k in grid.coords[i]] + [float(b) for b in grid.points[i]]
        if xy is not None:
            r += [float(xy[0][i]), float(xy[1][i])]
        rows.append(r)
    return write_csv(path, head, rows)


def write_values_csv(path: Path, values: ValueTable, policy: PolicyTable) -> Path:
    """One row per (stage, point); action_index is one based"""
    rows = []
    for t in range(values.horizon + 1):
        for i in range(values.grid.size):
            kind = ActionKind(int(policy.kinds[t, i]))
            rows.append([t, i, float(values.values[t, i]), ActionLabel[kind], int(policy.indices[t, i]) + 1])
    return write_csv(path, ["stage", "point_id", "value", "action_kind", "action_index"], rows)


def read_values_csv(path: Path, grid: BeliefGrid) -> Tuple[ValueTable, PolicyTable]:
    kinds_by_label = {v: k for k, v in ActionLabel.items()}
    with open(path, newline="") as f:
        rows = list(csv.DictReader(f))
    H = max(int(r["stage"]) for r in rows)
    values = np.empty((H + 1, grid.size))
    kinds = np.empty((H + 1, grid.size), dtype=np.int8)
    indices = np.empty((H + 1, grid.size), dtype=np.int64)
    for r in rows:
        t, i = int(r["stage"]), int(r["point_id"])
        values[t, i] = float(r["value"])
        kinds[t, i] = kinds_by_label[r["action_kind"]]
        indices[t, i] = int(r["action_index"]) - 1
    return ValueTable(values, grid), PolicyTable(kinds, indices)


def write_map_csv(path: Path, grid: BeliefGrid, columns: Dict[str, npt.NDArray]) -> Path:
    """Per-point map: point_id, b1..bM, then the given columns"""
    head = ["point_id"] + [f"b{i + 1}" for i in range(grid.dim)] + list(columns)
    rows = []
    for i in range(grid.size):
        rows.append([i] + [float(b) for b in grid.points[i]] + [_scalar(c[i]) for c in columns.values()])
    return write_csv(path, head, rows)


def _scalar(x: Any) -> Any:
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, (np.floating,)):
        return float(x)
    return x


def _json_default(x: Any) -> Any:
    if isinstance(x, np.ndarray):
        return x.tolist()
    if isinstance(x, (np.integer, np.floating, np.bool_)):
        return x.item()
    if isinstance(x, Belief):
        return [float(v) for v in x.weights]
    raise TypeError(f"cannot serialize {type(x).__name__}")


def dumps(obj: Any) -> str:
    return json.dumps(obj, indent=2, default=_json_default) + "\n"


def write_json(path: Path, obj: Any) -> Path:
    path.write_text(dumps(obj))
    logger.info("wrote %s", path)
    return path


def write_jsonl(path: Path, records: Iterable[Dict]) -> Path:
    with open(path, "w") as f:
        for r in records:
            f.write(json.dumps(r, default=_json_default) + "\n")
    logger.info("wrote %s", path)
    return path


def write_golden(path: Path, values: ValueTable) -> Path:
    """Header of three little-endian int64 (H, |B|, M), then the (H+1) x |B|
    values as row-major little-endian float64"""
    v = np.ascontiguousarray(values.values, dtype="<f8")
    with open(path, "wb") as f:
        f.write(GOLDEN_HEADER.pack(values.horizon, values.grid.size, values.grid.dim))
        f.write(v.tobytes())
    logger.info("wrote %s", path)
    return path


def read_golden(path: Path) -> Tuple[int, int, int, npt.NDArray[np.float64]]:
    data = Path(path).read_bytes()
    H, K, M = GOLDEN_HEADER.unpack_from(data)
    v = np.frombuffer(data, dtype="<f8", offset=GOLDEN_HEADER.size)
    if v.size != (H + 1) * K:
        raise ValueError(f"golden file holds {v.size} values, header implies {(H + 1) * K}")
    return H, K, M, v.reshape(H + 1, K).astype(float)


def sha256_file(path: Path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def config_hash(config: Dict) -> str:
    return hashlib.sha256(json.dumps(config, sort_keys=True, default=_json_default).encode()).hexdigest()


def write_manifest(
    outdir: Path, command: str, config: Dict, artifacts: Sequence[Path], wall: float, extra: Optional[Dict] = None
) -> Path:
    """Manifest with the content hash of every artifact. The timestamp and
    the wall time live only here so that data artifacts stay reproducible."""
    manifest = {
        "command": command,
        "config": config,
        "config_hash": config_hash(config),
        "artifacts": [{"file": Path(p).name, "sha256": sha256_file(p)} for p in artifacts],
        "created": datetime.now(timezone.utc).isoformat(),
        "wall_seconds": wall,
    }
    if extra:
        manifest.update(extra)
    return write_json(outdir / f"manifest-{command}.json", manifest)


# Ensemble file


@dataclass(eq=False)
class Ensemble:
    family: str
    states: Tuple[DensityOperator, ...]
    library: MeasurementLibrary
    prior: Optional[Belief] = None


def _line_of(text: str, key: str) -> Optional[int]:
    needle = f'"{key}"'
    for n, line in enumerate(text.splitlines(), start=1):
        if needle in line:
            return n
    return None


def _matrix(raw: Any) -> npt.NDArray[np.complex128]:
    """Matrix rows of numbers or [re, im] pairs"""
    rows = []
    for row in raw:
        rows.append([complex(x[0], x[1]) if isinstance(x, list) else complex(x) for x in row])
    return np.array(rows, dtype=np.complex128)


def load_ensemble(path: Path) -> Ensemble:
    """Read an ensemble file. Families: "binary" (theta, library), "trine"
    (library), "y-rotation" (states, base effects, params or library size,
    optional period) and "explicit" (states, povms, optional params and
    period). An optional "prior" applies to every family."""
    path = Path(path)
    src = str(path)
    try:
        text = path.read_text()
    except OSError as e:
        raise ConfigError(f"cannot read ensemble file: {e.strerror}", source=src) from e
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as e:
        raise ConfigError(e.msg, e.lineno, src) from e
    if not isinstance(doc, dict):
        raise ConfigError("ensemble file must hold a JSON object", 1, src)

    def need(key: str) -> Any:
        if key not in doc:
            raise ConfigError(f"missing key {key!r}", None, src)
        return doc[key]

    family = need("family")
    current = "family"
    try:
        if family == "binary":
            current = "theta"
            theta = float(need("theta"))
            states: Tuple[DensityOperator, ...] = binary_states(theta)
            current = "library"
            lib = binary_library(int(doc.get("library", 181)), theta)
        elif family == "trine":
            states = trine_states()
            current = "library"
            lib = trine_library(int(doc.get("library", 24)))
        elif family in ("y-rotation", "explicit"):
            current = "states"
            states = tuple(validate_density(_matrix(m)) for m in need("states"))
            period = float(doc.get("period", pi))
            if family == "y-rotation":
                current = "base"
                base = validate_povm([_matrix(e) for e in need("base")])
                current = "params"
                params = doc["params"] if "params" in doc else uniform_params(int(doc.get("library", 24)), period)
                lib = unitary_family_library(base, PAULI_Y, params, period, "y-rotation")
            else:
                current = "povms"
                povms = tuple(validate_povm([_matrix(e) for e in p]) for p in need("povms"))
                current = "params"
                params = doc.get("params")
                lib = MeasurementLibrary(
                    povms, None if params is None else tuple(float(x) for x in params), period if params else None, "explicit"
                )
        else:
            raise ConfigError(f"unknown family {family!r}", _line_of(text, "family"), src)
        prior = None
        if "prior" in doc:
            current = "prior"
            prior = Belief(np.asarray(doc["prior"], dtype=float))
    except ConfigError:
        raise
    except (SQSDError, ValueError, TypeError) as e:
        raise ConfigError(f"{current}: {e}", _line_of(text, current), src) from e
    logger.info("loaded %s ensemble with %d states and %d measurements", family, len(states), len(lib))
    return Ensemble(family, states, lib, prior)
