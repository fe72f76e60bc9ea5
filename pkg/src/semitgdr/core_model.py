"""Data containers, preprocessing and interaction-index bookkeeping."""

from __future__ import annotations

import enum
from dataclasses import dataclass, field, replace

import numpy as np

from .objectives import aft_row_weights, km_weights


class DataError(ValueError):
    """Raised when input data violate the analysis contract."""


class ModelFamily(str, enum.Enum):
    LINEAR = "linear"
    AFT = "aft"

    @classmethod
    def parse(cls, value: "str | ModelFamily") -> "ModelFamily":
        if isinstance(value, cls):
            return value
        aliases = {
            "linear": cls.LINEAR,
            "lineargaussian": cls.LINEAR,
            "gaussian": cls.LINEAR,
            "aft": cls.AFT,
            "aftweightedleastsquares": cls.AFT,
        }
        try:
            return aliases[str(value).lower().replace("_", "").replace("-", "")]
        except KeyError:
            raise ValueError(f"unknown model family {value!r}") from None


@dataclass(frozen=True)
class Scaling:
    """Per-dataset preprocessing constants, kept so new rows can be mapped
    onto the training scale."""

    x_mean: np.ndarray
    x_scale: np.ndarray
    e_min: np.ndarray
    e_range: np.ndarray
    y_shift: float
    log_response: bool = False


@dataclass(frozen=True)
class DatasetBundle:
    """One study: response, gene matrix ``X`` (n x p), environment ``E`` (n x q).

    For the AFT family ``y`` holds survival times before standardization and
    centered log-times after it; ``event`` holds the 0/1 event flags.
    """

    y: np.ndarray
    X: np.ndarray
    E: np.ndarray
    event: np.ndarray | None = None

    def __post_init__(self):
        y = np.asarray(self.y, dtype=float).reshape(-1)
        X = np.atleast_2d(np.asarray(self.X, dtype=float))
        E = np.asarray(self.E, dtype=float)
        if E.ndim == 1:
            E = E.reshape(-1, 1)
        n = y.shape[0]
        if n < 1:
            raise DataError("dataset has no rows")
        if X.shape[0] != n or E.shape[0] != n:
            raise DataError(
                f"row counts differ: y has {n}, X has {X.shape[0]}, E has {E.shape[0]}"
            )
        for name, arr in (("y", y), ("X", X), ("E", E)):
            if not np.all(np.isfinite(arr)):
                raise DataError(f"{name} contains missing or non-finite values")
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "E", E)
        if self.event is not None:
            ev = np.asarray(self.event).reshape(-1)
            if ev.shape[0] != n:
                raise DataError("event flags and responses differ in length")
            if not np.all((ev == 0) | (ev == 1)):
                raise DataError("event must be 0 or 1")
            object.__setattr__(self, "event", ev.astype(int))

    @property
    def n(self) -> int:
        return self.y.shape[0]

    def take(self, rows) -> "DatasetBundle":
        rows = np.asarray(rows)
        return DatasetBundle(
            y=self.y[rows],
            X=self.X[rows],
            E=self.E[rows],
            event=None if self.event is None else self.event[rows],
        )


@dataclass(frozen=True)
class StudyCollection:
    datasets: tuple[DatasetBundle, ...]
    family: ModelFamily = ModelFamily.LINEAR
    gene_names: tuple[str, ...] | None = None
    env_names: tuple[str, ...] | None = None
    standardized: bool = False
    scaling: tuple[Scaling, ...] | None = None

    def __post_init__(self):
        datasets = tuple(self.datasets)
        if not datasets:
            raise DataError("a collection needs at least one dataset")
        object.__setattr__(self, "datasets", datasets)
        object.__setattr__(self, "family", ModelFamily.parse(self.family))
        p, q = datasets[0].X.shape[1], datasets[0].E.shape[1]
        for m, d in enumerate(datasets):
            if d.X.shape[1] != p or d.E.shape[1] != q:
                raise DataError(
                    f"dataset {m + 1} has p={d.X.shape[1]}, q={d.E.shape[1]}; "
                    f"expected p={p}, q={q}"
                )
            if self.family is ModelFamily.AFT and d.event is None:
                raise DataError(f"dataset {m + 1}: AFT family requires event flags")
        if self.gene_names is None:
            object.__setattr__(self, "gene_names", tuple(f"g{j + 1}" for j in range(p)))
        if self.env_names is None:
            object.__setattr__(self, "env_names", tuple(f"env_{l + 1}" for l in range(q)))
        if len(self.gene_names) != p or len(self.env_names) != q:
            raise DataError("name lists do not match the matrix dimensions")

    @property
    def M(self) -> int:
        return len(self.datasets)

    @property
    def p(self) -> int:
        return self.datasets[0].X.shape[1]

    @property
    def q(self) -> int:
        return self.datasets[0].E.shape[1]

    @property
    def n_total(self) -> int:
        return sum(d.n for d in self.datasets)

    def with_datasets(self, datasets, **changes) -> "StudyCollection":
        return replace(self, datasets=tuple(datasets), **changes)


def n_pairs(p: int) -> int:
    return p * (p - 1) // 2


def pair_to_flat(j: int, k: int, p: int) -> int:
    """1-based lexicographic index of the pair ``(j, k)``, ``j < k``."""
    if not (1 <= j < k <= p):
        raise IndexError(f"pair ({j}, {k}) out of range for p={p}")
    # pairs preceding row j: sum_{a<j} (p - a)
    before = (j - 1) * p - (j - 1) * j // 2
    return before + (k - j)


def flat_to_pair(i: int, p: int) -> tuple[int, int]:
    if not (1 <= i <= n_pairs(p)):
        raise IndexError(f"flat index {i} out of range for p={p}")
    j = 1
    remaining = i
    while remaining > p - j:
        remaining -= p - j
        j += 1
    return j, j + remaining


@dataclass(frozen=True)
class InteractionIndex:
    """Vectorized pair bookkeeping; arrays are 0-based and lexicographic."""

    p: int
    rows: np.ndarray = field(init=False, repr=False)
    cols: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        r, c = np.triu_indices(self.p, 1)
        object.__setattr__(self, "rows", r)
        object.__setattr__(self, "cols", c)

    def __len__(self) -> int:
        return n_pairs(self.p)

    def pair(self, i: int) -> tuple[int, int]:
        return flat_to_pair(i, self.p)

    def flat(self, j: int, k: int) -> int:
        return pair_to_flat(j, k, self.p)

    def to_matrix(self, gamma: np.ndarray) -> np.ndarray:
        G = np.zeros((self.p, self.p))
        G[self.rows, self.cols] = gamma
        return G

    def from_matrix(self, G: np.ndarray) -> np.ndarray:
        return G[self.rows, self.cols]


def interaction_column(X: np.ndarray, j: int, k: int) -> np.ndarray:
    """Elementwise product of gene columns ``j`` and ``k`` (1-based, j < k)."""
    X = np.asarray(X, dtype=float)
    if not (1 <= j < k <= X.shape[1]):
        raise IndexError(f"pair ({j}, {k}) out of range for p={X.shape[1]}")
    return X[:, j - 1] * X[:, k - 1]


@dataclass
class CoefficientState:
    """Coefficients of one dataset: mains, flat interactions, env block (q x D)."""

    beta: np.ndarray
    gamma: np.ndarray
    Z: np.ndarray

    @classmethod
    def zeros(cls, p: int, q: int, D: int) -> "CoefficientState":
        return cls(np.zeros(p), np.zeros(n_pairs(p)), np.zeros((q, D)))

    def copy(self) -> "CoefficientState":
        return CoefficientState(self.beta.copy(), self.gamma.copy(), self.Z.copy())


def _check_columns(m: int, name: str, spread: np.ndarray, labels) -> None:
    bad = np.flatnonzero(~(spread > 0))
    if bad.size:
        raise DataError(
            f"dataset {m + 1}: {name} column {labels[bad[0]]!r} is constant"
        )


def _standardize_one(m, d: DatasetBundle, family, genes, envs):
    if d.n < 2:
        raise DataError(f"dataset {m + 1}: need at least 2 rows to standardize")
    x_mean = d.X.mean(axis=0)
    x_scale = d.X.std(axis=0)
    _check_columns(m, "gene", x_scale, genes)
    e_min = d.E.min(axis=0)
    e_range = d.E.max(axis=0) - e_min
    _check_columns(m, "environment", e_range, envs)
    X = (d.X - x_mean) / x_scale
    E = (d.E - e_min) / e_range
    if family is ModelFamily.AFT:
        if np.any(d.y <= 0):
            raise DataError(f"dataset {m + 1}: survival times must be positive")
        logt = np.log(d.y)
        w = km_weights(d.y, d.event)
        shift = float(np.sum(w.in_input_order() * logt) / w.w.sum())
        y = logt - shift
        scaling = Scaling(x_mean, x_scale, e_min, e_range, shift, log_response=True)
    else:
        shift = float(d.y.mean())
        y = d.y - shift
        scaling = Scaling(x_mean, x_scale, e_min, e_range, shift)
    return DatasetBundle(y=y, X=X, E=E, event=d.event), scaling


def _restandardize_one(d: DatasetBundle, family):
    # already-standardized data: re-apply the moment scaling; the response
    # transform (log) is never applied twice
    x_mean = d.X.mean(axis=0)
    x_scale = d.X.std(axis=0)
    e_min = d.E.min(axis=0)
    e_range = d.E.max(axis=0) - e_min
    if family is ModelFamily.AFT:
        rw = aft_row_weights(d.y, d.event)
        shift = float(np.sum(rw * d.y) / rw.sum())
    else:
        shift = float(d.y.mean())
    bundle = DatasetBundle(
        y=d.y - shift, X=(d.X - x_mean) / x_scale, E=(d.E - e_min) / e_range, event=d.event
    )
    return bundle


def standardize(collection: StudyCollection) -> StudyCollection:
    """Center/scale genes, min-max the environment, center the response.

    Gene columns get mean 0 and population variance 1; environment columns
    are mapped onto [0, 1]. Linear responses are centered; AFT responses are
    replaced by log-times centered at their Kaplan-Meier-weighted mean.
    The returned collection carries the per-dataset :class:`Scaling`.
    """
    fam = collection.family
    if collection.standardized:
        datasets = [_restandardize_one(d, fam) for d in collection.datasets]
        return collection.with_datasets(datasets)
    out, scalings = [], []
    for m, d in enumerate(collection.datasets):
        b, s = _standardize_one(m, d, fam, collection.gene_names, collection.env_names)
        out.append(b)
        scalings.append(s)
    return collection.with_datasets(out, standardized=True, scaling=tuple(scalings))


def apply_scaling(bundle: DatasetBundle, scaling: Scaling, clip: bool = True) -> DatasetBundle:
    """Map raw rows (e.g. a test split) onto a training scale."""
    X = (bundle.X - scaling.x_mean) / scaling.x_scale
    E = (bundle.E - scaling.e_min) / scaling.e_range
    if clip:
        E = np.clip(E, 0.0, 1.0)
    if scaling.log_response:
        if np.any(bundle.y <= 0):
            raise DataError("survival times must be positive")
        y = np.log(bundle.y) - scaling.y_shift
    else:
        y = bundle.y - scaling.y_shift
    return DatasetBundle(y=y, X=X, E=E, event=bundle.event)


def apply_collection_scaling(raw: StudyCollection, reference: StudyCollection) -> StudyCollection:
    if reference.scaling is None:
        raise ValueError("reference collection carries no scaling metadata")
    if raw.M != reference.M:
        raise DataError("collections differ in the number of datasets")
    datasets = [apply_scaling(d, s) for d, s in zip(raw.datasets, reference.scaling)]
    return raw.with_datasets(datasets, standardized=True, scaling=reference.scaling)
