"""JSON inputs, CSV outputs and run manifests."""
from __future__ import annotations

import csv
import hashlib
import json
import platform
import time
from importlib import metadata
from pathlib import Path
from typing import Any, Iterable, Sequence

import jsonschema
import numpy as np

from .grid import DomainBox, FDMatrix, OperatorSpec, axis_polynomial, constant_field, separable_sum
from .qsvt import EstimatorConfig


class ConfigError(ValueError):
    """Malformed or inconsistent input file."""


def load_json(path: str | Path) -> dict:
    try:
        with open(path) as fh:
            data = json.load(fh)
    except FileNotFoundError as exc:
        raise ConfigError(f"file not found: {path}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"invalid JSON in {path}: {exc}") from exc
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: top level must be an object")
    return data


# -- operator specs -------------------------------------------------------------


def field_from_json(obj: Any, dim: int):
    """Coefficient field from a number or a ``{"type": ...}`` object.

    Types: ``constant`` (``value``), ``linear`` (``offset`` + ``slope`` per
    axis) and ``polynomial`` (``coeffs``: one ascending list per axis, summed).
    """
    if isinstance(obj, (int, float)):
        return constant_field(float(obj))
    if not isinstance(obj, dict) or "type" not in obj:
        raise ConfigError(f"cannot interpret coefficient {obj!r}")
    kind = obj["type"]
    try:
        if kind == "constant":
            return constant_field(float(obj["value"]))
        if kind == "linear":
            slope = [float(s) for s in obj.get("slope", [0.0] * dim)]
            if len(slope) != dim:
                raise ConfigError(f"linear slope needs {dim} entries")
            coeffs = [[0.0, s] for s in slope]
            coeffs[0][0] = float(obj.get("offset", 0.0))
            return separable_sum(coeffs)
        if kind == "polynomial":
            coeffs = obj["coeffs"]
            if len(coeffs) == 1 and dim == 1:
                return axis_polynomial(coeffs[0], 0)
            if len(coeffs) != dim:
                raise ConfigError(f"polynomial needs one coefficient list per axis ({dim})")
            return separable_sum(coeffs)
    except (KeyError, TypeError) as exc:
        raise ConfigError(f"bad {kind} coefficient {obj!r}: {exc}") from exc
    raise ConfigError(f"unknown coefficient type {kind!r}")


def _from_coefficients_block(d: dict) -> dict:
    """Rewrite ``{"coefficients": {"kind", "name", "params"}}`` into the flat form."""
    block = d["coefficients"]
    if not isinstance(block, dict):
        raise ConfigError("coefficients must be an object")
    kind, name, params = block.get("kind"), block.get("name"), dict(block.get("params", {}))
    flat = {k: v for k, v in d.items() if k != "coefficients"}
    if kind == "inflation":
        flat["kind"] = "inflation"
        flat["model"] = {"kind": name, **params}
        return flat
    if kind != "builtin":
        raise ConfigError(f"unknown coefficient kind {kind!r}")
    if name not in ("constant", "linear", "polynomial"):
        raise ConfigError(f"unknown builtin coefficient {name!r}")

    def tag(x):
        if isinstance(x, dict) and "type" not in x:
            return {"type": name, **x}
        return [tag(y) for y in x] if isinstance(x, list) else x

    flat["a0"] = tag(params.get("a0", 0.0))
    flat["a"] = tag(params.get("a", 1.0))
    return flat


def spec_from_dict(d: dict) -> OperatorSpec:
    """Operator from JSON.

    ``{"domain": {...}, "coefficients": {"kind": "builtin", "name": ..., "params":
    {"a0": ..., "a": ...}}}`` with builtin names ``constant``, ``linear`` and
    ``polynomial``, or ``"kind": "inflation"`` with the potential family as
    ``name`` and its parameters.  The flat form ``{"domain", "a0", "a"}`` and
    ``{"kind": "inflation", "model": {...}, "domain"}`` are accepted as well.
    """
    if "coefficients" in d:
        d = _from_coefficients_block(d)
    try:
        dom = d["domain"]
        domain = DomainBox(float(dom["lower"]), float(dom["upper"]), int(dom.get("dim", 1)))
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"bad domain: {exc}") from exc
    name = str(d.get("name", "operator"))
    if d.get("kind") == "inflation":
        from .inflation import PotentialModel, hermitized_coefficients, reduced_potential

        try:
            model = PotentialModel.from_dict(d["model"])
            rp = reduced_potential(model)
        except (KeyError, ValueError) as exc:
            raise ConfigError(f"bad inflation model: {exc}") from exc
        return hermitized_coefficients(rp, model.mpl).to_operator_spec(domain, name)
    a = d.get("a", 1.0)
    a_list = a if isinstance(a, list) else [a] * domain.dim
    if len(a_list) != domain.dim:
        raise ConfigError(f"need {domain.dim} diffusion coefficients, got {len(a_list)}")
    try:
        return OperatorSpec(
            domain, field_from_json(d.get("a0", 0.0), domain.dim), [field_from_json(x, domain.dim) for x in a_list], name
        )
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def trial_from_dict(d: dict | str | None, domain: DomainBox):
    """Trial field: ``gaussian`` (``center``, ``width``) or ``sine`` (default)."""
    if d is None or d == "sine":
        d = {"type": "sine"}
    elif d == "gaussian":
        d = {"type": "gaussian"}
    kind = d.get("type")
    lo, w = domain.lower, domain.width
    if kind == "sine":
        return lambda x: np.prod(np.sin(np.pi * (x - lo) / w), axis=1)
    if kind == "gaussian":
        c = float(d.get("center", lo + w / 2))
        s = float(d.get("width", 0.15 * w))
        return lambda x: np.exp(-(((x - c) ** 2).sum(axis=1)) / (2 * s**2))
    raise ConfigError(f"unknown trial type {kind!r}")


def config_from_dict(d: dict) -> tuple[EstimatorConfig, dict]:
    """Estimator config plus the extra keys (``C1``, ``D1``, ``eps_list``, ...)."""
    samp = d.get("sampling", {"mode": "exact"})
    if isinstance(samp, str):
        samp = {"mode": samp}
    try:
        cfg = EstimatorConfig(
            eps=float(d["eps"]),
            delta=float(d.get("delta", 0.05)),
            gamma=float(d.get("gamma", 0.5)),
            sampling=samp.get("mode", "exact"),
            shots=samp.get("shots"),
            seed=int(d.get("seed", 0)),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"bad estimator config: {exc}") from exc
    extra = {k: v for k, v in d.items() if k not in ("eps", "delta", "gamma", "sampling", "seed")}
    return cfg, extra


# -- CSV ---------------------------------------------------------------------------


def write_csv(path: str | Path, header: Sequence[str], rows: Iterable[Sequence], comment: str | None = None) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        if comment:
            fh.write(f"# {comment}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([repr(float(x)) if isinstance(x, (float, np.floating)) else x for x in r])
    return path


def read_csv(path: str | Path) -> tuple[list[str], list[list[str]]]:
    with open(path, newline="") as fh:
        lines = [ln for ln in fh if not ln.startswith("#")]
    rows = list(csv.reader(lines))
    return rows[0], rows[1:]


def write_fd_matrix(path: str | Path, m: FDMatrix) -> Path:
    """Sparse triplets ``(row, col, value)`` with a grid comment line."""
    coo = m.csr.tocoo()
    g = m.grid
    return write_csv(
        path, ["row", "col", "value"], zip(coo.row.tolist(), coo.col.tolist(), coo.data.tolist()),
        comment=f"n_gr={g.n_gr} d={g.dim} h={g.h!r}",
    )


# -- manifests ------------------------------------------------------------------------

MANIFEST_SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "title": "spectraldiff run manifest",
    "type": "object",
    "required": ["command", "config", "seed", "versions", "outputs", "wall_clock_s"],
    "properties": {
        "command": {"type": "string", "enum": ["eig-fd", "eig-qsim", "well-overlap", "hybrid", "complexity-sweep"]},
        "config": {"type": "object"},
        "seed": {"type": ["integer", "null"]},
        "versions": {
            "type": "object",
            "required": ["spectraldiff", "python", "numpy", "scipy"],
            "additionalProperties": {"type": "string"},
        },
        "outputs": {
            "type": "array",
            "items": {
                "type": "object",
                "required": ["path", "sha256"],
                "properties": {"path": {"type": "string"}, "sha256": {"type": "string", "pattern": "^[0-9a-f]{64}$"}},
            },
        },
        "wall_clock_s": {"type": "number", "minimum": 0},
        "ledger": {"type": ["object", "null"]},
    },
    "additionalProperties": False,
}


def versions() -> dict:
    out = {"python": platform.python_version()}
    for pkg, dist in (("spectraldiff", "artifact"), ("numpy", "numpy"), ("scipy", "scipy"), ("numba", "numba")):
        try:
            out[pkg] = metadata.version(dist)
        except metadata.PackageNotFoundError:
            out[pkg] = "unknown"
    return out


def sha256(path: str | Path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _jsonable(x):
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, (np.floating,)):
        return float(x)
    if isinstance(x, Path):
        return str(x)
    return x


def write_manifest(out_dir: str | Path, command: str, config: dict, seed: int | None,
                   outputs: Sequence[str | Path], started: float, ledger: dict | None = None) -> Path:
    """Validate and write ``manifest.json`` into ``out_dir``."""
    out_dir = Path(out_dir)
    man = {
        "command": command,
        "config": _jsonable(config),
        "seed": seed,
        "versions": versions(),
        "outputs": [{"path": Path(p).name, "sha256": sha256(p)} for p in outputs],
        "wall_clock_s": max(time.perf_counter() - started, 0.0),
        "ledger": _jsonable(ledger),
    }
    jsonschema.validate(man, MANIFEST_SCHEMA)
    path = out_dir / "manifest.json"
    path.write_text(json.dumps(man, indent=2, sort_keys=True) + "\n")
    return path
