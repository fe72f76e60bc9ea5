"""Delimited-text datasets, configuration files and result documents."""

from __future__ import annotations

import csv
import json
import logging
import os
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from .core_model import CoefficientState, DataError, DatasetBundle, InteractionIndex, ModelFamily, StudyCollection
from .tgdr_engine import FitResult, TgdrConfig

log = logging.getLogger(__name__)

FLOAT_FMT = "%.17g"


class UsageError(ValueError):
    """Bad command line or configuration."""


# ------------------------------------------------------------------ datasets


def _fmt(x: float) -> str:
    return FLOAT_FMT % x


def write_dataset(bundle: DatasetBundle, path: str, family, gene_names, env_names) -> None:
    family = ModelFamily.parse(family)
    head = ["time", "event"] if family is ModelFamily.AFT else ["response"]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(head + list(env_names) + list(gene_names))
        for i in range(bundle.n):
            row = [_fmt(bundle.y[i])]
            if family is ModelFamily.AFT:
                row.append(str(int(bundle.event[i])))
            row += [_fmt(v) for v in bundle.E[i]] + [_fmt(v) for v in bundle.X[i]]
            w.writerow(row)


def write_collection(collection: StudyCollection, directory: str, prefix: str = "dataset") -> list[str]:
    os.makedirs(directory, exist_ok=True)
    paths = []
    for m, d in enumerate(collection.datasets):
        path = os.path.join(directory, f"{prefix}_{m + 1}.csv")
        write_dataset(d, path, collection.family, collection.gene_names, collection.env_names)
        paths.append(path)
    return paths


def _parse_header(header, path):
    if not header:
        raise DataError(f"{path}: empty file")
    header = [h.strip() for h in header]
    if header[:2] == ["time", "event"]:
        family, lead = ModelFamily.AFT, 2
    elif header[0] == "response":
        family, lead = ModelFamily.LINEAR, 1
    else:
        raise DataError(f"{path}: first column must be 'response' or 'time','event'")
    rest = header[lead:]
    envs = [h for h in rest if h.startswith("env_")]
    q = len(envs)
    if q == 0 or rest[:q] != envs:
        raise DataError(f"{path}: environment columns env_1..env_q must follow the response")
    genes = rest[q:]
    if not genes:
        raise DataError(f"{path}: no gene columns")
    if len(set(genes)) != len(genes):
        raise DataError(f"{path}: duplicate gene column names")
    return family, lead, tuple(envs), tuple(genes)


def read_dataset(path: str):
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError(f"{path}: empty file") from None
        family, lead, envs, genes = _parse_header(header, path)
        width = len(header)
        rows = []
        for r, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != width:
                raise DataError(f"{path}: row {r} has {len(row)} cells, expected {width}")
            vals = []
            for c, cell in enumerate(row):
                cell = cell.strip()
                if cell == "" or cell.lower() in ("na", "nan"):
                    raise DataError(f"{path}: missing value at row {r}, column {header[c]!r}")
                try:
                    v = float(cell)
                except ValueError:
                    raise DataError(f"{path}: non-numeric value {cell!r} at row {r}, column {header[c]!r}") from None
                if not np.isfinite(v):
                    raise DataError(f"{path}: non-finite value at row {r}, column {header[c]!r}")
                vals.append(v)
            rows.append(vals)
    if not rows:
        raise DataError(f"{path}: no data rows")
    A = np.asarray(rows)
    q = len(envs)
    event = A[:, 1] if family is ModelFamily.AFT else None
    if event is not None and not np.all((event == 0) | (event == 1)):
        bad = int(np.flatnonzero((event != 0) & (event != 1))[0]) + 2
        raise DataError(f"{path}: row {bad}: event must be 0 or 1")
    bundle = DatasetBundle(y=A[:, 0], X=A[:, lead + q:], E=A[:, lead:lead + q], event=event)
    log.info("%s: %d rows, %d environment and %d gene columns", path, bundle.n, q, len(genes))
    return bundle, family, envs, genes


def ingest(paths) -> StudyCollection:
    """Read one file per dataset into a (raw) collection."""
    paths = list(paths)
    if not paths:
        raise UsageError("no input files given")
    bundles, ref = [], None
    for path in paths:
        bundle, family, envs, genes = read_dataset(path)
        if ref is None:
            ref = (family, envs, genes, path)
        else:
            if family is not ref[0]:
                raise DataError(f"{path}: response columns differ from {ref[3]}")
            for kind, got, want in (("environment", envs, ref[1]), ("gene", genes, ref[2])):
                if got != want:
                    for i, (a, b) in enumerate(zip(got, want)):
                        if a != b:
                            raise DataError(f"{path}: {kind} column {i + 1} is {a!r}, expected {b!r} as in {ref[3]}")
                    raise DataError(f"{path}: {kind} column count {len(got)} differs from {len(want)} in {ref[3]}")
        bundles.append(bundle)
    return StudyCollection(bundles, family=ref[0], gene_names=ref[2], env_names=ref[1])


# ------------------------------------------------------------------ config


@dataclass
class AnalysisConfig:
    """Every tunable of a CLI run; loaded from ``key = value`` files."""

    tau: float = 0.9
    delta_step: float = 0.5
    t_max: int = 2000
    cv_folds: int = 5
    seed: int = 0
    variant: str = "proposed"
    spline_D: int = 7
    selection_tol: float = 1e-12
    loss_scale: str = "mean"
    spline_update: str = "profile"
    patience: int = 200
    hierarchy: bool = True
    step_normalization: str = "curvature"
    step_cap: bool = True
    family: str = "linear"
    keep: int = 300
    bootstrap_B: int = 50
    reps: int = 50
    inputs: list = field(default_factory=list)
    out: str = "out"
    case: str = "I"
    p: int = 50
    env_mode: str = "nonlinear_a"
    noise: str = "standard"
    variants: str = "proposed,meta,pool,parametric"
    jobs: int = 1

    def tgdr(self) -> TgdrConfig:
        names = {f.name for f in fields(TgdrConfig)}
        return TgdrConfig(**{k: v for k, v in asdict(self).items() if k in names})

    def validate(self) -> "AnalysisConfig":
        try:
            self.tgdr()
            ModelFamily.parse(self.family)
        except ValueError as exc:
            raise UsageError(str(exc)) from None
        for name in ("keep", "bootstrap_B", "reps", "p", "jobs"):
            if getattr(self, name) < 1:
                raise UsageError(f"{name} must be at least 1")
        return self


_BOOL = {"true": True, "1": True, "yes": True, "false": False, "0": False, "no": False}


def coerce(name: str, raw):
    types = {f.name: f.type for f in fields(AnalysisConfig)}
    if name not in types:
        raise UsageError(f"unknown configuration key {name!r}")
    kind = types[name]
    try:
        if kind == "bool":
            if isinstance(raw, bool):
                return raw
            return _BOOL[str(raw).strip().lower()]
        if kind == "int":
            return int(raw)
        if kind == "float":
            return float(raw)
        if kind == "list":
            if isinstance(raw, (list, tuple)):
                return list(raw)
            return [s.strip() for s in str(raw).split(",") if s.strip()]
        return str(raw).strip()
    except (KeyError, ValueError):
        raise UsageError(f"bad value {raw!r} for {name}") from None


def read_config(path: str) -> dict:
    out = {}
    try:
        fh = open(path)
    except OSError as exc:
        raise UsageError(f"cannot read config {path}: {exc.strerror}") from None
    with fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise UsageError(f"{path}:{lineno}: expected key = value")
            key, value = (s.strip() for s in line.split("=", 1))
            key = key.replace("-", "_")
            out[key] = coerce(key, value)
    return out


# ---------------------------------------------------------------- documents


def dump_json(obj, path: str) -> None:
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True, allow_nan=True)
        fh.write("\n")


def load_json(path: str):
    with open(path) as fh:
        return json.load(fh)


def _clean(v):
    if isinstance(v, (np.floating, float)):
        return float(v)
    if isinstance(v, (np.integer,)):
        return int(v)
    if isinstance(v, np.ndarray):
        return [_clean(x) for x in v.tolist()]
    if isinstance(v, (list, tuple)):
        return [_clean(x) for x in v]
    if isinstance(v, dict):
        return {str(k): _clean(x) for k, x in v.items()}
    if hasattr(v, "value"):
        return v.value
    return v


def result_document(fit: FitResult, collection: StudyCollection, report=None) -> dict:
    genes = collection.gene_names
    p = len(genes)
    idx = InteractionIndex(p)
    per = []
    for m, s in enumerate(fit.states):
        mains = [
            {"gene": genes[j], "index": int(j) + 1, "value": float(s.beta[j])}
            for j in np.flatnonzero(np.abs(s.beta) > fit.config.selection_tol)
        ]
        pairs = [
            {
                "pair": f"{genes[idx.rows[i]]}:{genes[idx.cols[i]]}",
                "index": [int(idx.rows[i]) + 1, int(idx.cols[i]) + 1],
                "value": float(s.gamma[i]),
            }
            for i in np.flatnonzero(np.abs(s.gamma) > fit.config.selection_tol)
        ]
        per.append({
            "dataset": m + 1,
            "mains": mains,
            "interactions": pairs,
            "Z": _clean(s.Z),
            "spline_means": _clean(fit.spline_means[m]),
        })
    doc = {
        "config": _clean(asdict(fit.config)),
        "family": fit.family.value,
        "variant": fit.variant.value,
        "genes": list(genes),
        "environment": list(collection.env_names),
        "t_star": list(fit.t_star),
        "cv_curve": [_clean(c) for c in fit.cv_curve],
        "selected_mains": [genes[j - 1] for j in sorted(fit.selected_mains)],
        "selected_interactions": [f"{genes[j - 1]}:{genes[k - 1]}" for j, k in sorted(fit.selected_interactions)],
        "repairs": list(fit.repairs),
        "datasets": per,
    }
    if collection.scaling is not None:
        doc["scaling"] = [_clean(asdict(s)) for s in collection.scaling]
    if report is not None:
        doc["metrics"] = _clean(report.as_dict())
    return doc


def states_from_document(doc: dict) -> tuple[list[CoefficientState], list[np.ndarray]]:
    """Rebuild coefficient states and spline means from a result document."""
    p = len(doc["genes"])
    idx = InteractionIndex(p)
    states, means = [], []
    for d in doc["datasets"]:
        Z = np.asarray(d["Z"], dtype=float)
        s = CoefficientState.zeros(p, Z.shape[0], Z.shape[1])
        s.Z = Z
        for e in d["mains"]:
            s.beta[e["index"] - 1] = e["value"]
        for e in d["interactions"]:
            j, k = e["index"]
            s.gamma[idx.flat(j, k) - 1] = e["value"]
        states.append(s)
        means.append(np.asarray(d["spline_means"], dtype=float))
    return states, means


def write_curves(curves, env_names, directory: str) -> list[str]:
    """``curve_<dataset>_<env>.csv`` with columns grid, value, lower, upper."""
    os.makedirs(directory, exist_ok=True)
    paths = []
    for m, row in enumerate(curves):
        for l, c in enumerate(row):
            path = os.path.join(directory, f"curve_{m + 1}_{env_names[l]}.csv")
            lower = c.lower if c.lower is not None else np.full_like(c.values, np.nan)
            upper = c.upper if c.upper is not None else np.full_like(c.values, np.nan)
            with open(path, "w", newline="") as fh:
                w = csv.writer(fh, lineterminator="\n")
                w.writerow(["grid", "value", "lower", "upper"])
                for row_vals in zip(c.grid, c.values, lower, upper):
                    w.writerow([_fmt(v) for v in row_vals])
            paths.append(path)
    return paths
