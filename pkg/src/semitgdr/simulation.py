"""Monte-Carlo data for the eight coefficient cases.

Three datasets of sizes 180, 170 and 150 with two environmental factors.
Each case fixes ten nonzero main effects and ten nonzero interactions per
dataset; cases differ in how the values vary across datasets, in the gene
correlation, or in the environmental curves.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import brentq

from .core_model import DatasetBundle, ModelFamily, StudyCollection, n_pairs, pair_to_flat

CASES = ("I", "II", "III", "IV", "V", "VI", "VII", "VIII")
ENV_MODES = ("nonlinear_a", "linear_b")
NOISE = ("standard", "S1", "S2")

# interaction columns shared by Cases I-IV
STANDARD_PAIRS = ((1, 2), (1, 3), (1, 4), (2, 3), (2, 4), (3, 4), (5, 6), (5, 7), (6, 7), (8, 9))
CASE_V_PAIRS = tuple((1, k) for k in range(2, 12))

_CASE_I = (
    ([2] * 5 + [1] * 5, [2, 1.5, 1.5, 1, 1, 1, 0.5, 0.5, 0.5, 0.5]),
    ([1.5] * 5 + [1] * 5, [2, 1, 1, 0.5, 0.5, 0.5, 1.5, 1.5, 1.5, 1.5]),
    ([1] * 5 + [0.5] * 5, [1.5, 1, 1, 0.5, 0.5, 0.5, 2, 2, 2, 2]),
)

TABLES = {
    "I": _CASE_I,
    "II": (
        ([1] * 10, _CASE_I[0][1]),
        _CASE_I[1],
        ([1.5] * 5 + [0.5] * 5, [1.5, 1, 1, 0.5, 0.5, 0.5, 1, 1, 1, 2]),
    ),
    "III": (
        ([2, 2, 2, 2, 2, -1, 1, 1, 1, 1], [2, 1.5, 1.5, 1, -1, 1, 0.5, 0.5, 0.5, 0.5]),
        _CASE_I[1],
        ([1, 1, 1, 1, -1, 0.5, 0.5, 0.5, 0.5, 0.5], [1.5, 1, 1, 0.5, 0.5, 0.5, -2, 2, 2, 2]),
    ),
    "IV": (
        ([2, 2, -2, 2, 2, -1, 1, 1, 1, 1], [2, -1.5, 1.5, 1, 1, 1, 0.5, 0.5, 0.5, 0.5]),
        ([-1.5, -1, 1, -1.5, 1.5, 1, 1, 1, 1, 1], [2, 1, 1, 0.5, 0.5, 0.5, 1.5, 1.5, 1.5, 1.5]),
        ([-0.5, -1, 1, -0.5, -1, 0.5, 0.5, 0.5, 0.5, 0.5], [1.5, 0.5, 1, 0.5, 0.5, 0.5, -2, 2, 2, 2]),
    ),
    "V": _CASE_I,
}


def parse_case(case) -> str:
    if isinstance(case, int):
        if not 1 <= case <= len(CASES):
            raise ValueError(f"unknown case {case!r}")
        return CASES[case - 1]
    name = str(case).strip().upper()
    if name not in CASES:
        raise ValueError(f"unknown case {case!r}; expected one of {', '.join(CASES)}")
    return name


@dataclass(frozen=True)
class SimScenario:
    case: str = "I"
    p: int = 50
    env_mode: str = "nonlinear_a"
    family: ModelFamily = ModelFamily.LINEAR
    noise: str = "standard"
    seed: int = 0
    sizes: tuple[int, ...] = (180, 170, 150)
    q: int = 2
    censor_rate: float = 0.10

    def __post_init__(self):
        object.__setattr__(self, "case", parse_case(self.case))
        object.__setattr__(self, "family", ModelFamily.parse(self.family))
        if self.env_mode not in ENV_MODES:
            raise ValueError(f"env_mode must be one of {ENV_MODES}")
        if self.noise not in NOISE:
            raise ValueError(f"noise must be one of {NOISE}")
        need = 11 if self.case == "V" else 10
        if self.p < need:
            raise ValueError(f"case {self.case} needs p >= {need}")
        if self.q != 2:
            raise ValueError("the designs use exactly two environmental factors")
        if len(self.sizes) != 3:
            raise ValueError("the designs use exactly three datasets")


@dataclass(frozen=True)
class GroundTruth:
    beta: np.ndarray
    gamma: np.ndarray
    env: tuple
    main_support: tuple[frozenset, ...] = field(init=False)
    interaction_support: tuple[frozenset, ...] = field(init=False)

    def __post_init__(self):
        p = self.beta.shape[1]
        from .core_model import InteractionIndex

        idx = InteractionIndex(p)
        mains, pairs = [], []
        for b, g in zip(self.beta, self.gamma):
            mains.append(frozenset(int(j) + 1 for j in np.flatnonzero(b)))
            pairs.append(frozenset((int(idx.rows[i]) + 1, int(idx.cols[i]) + 1) for i in np.flatnonzero(g)))
        object.__setattr__(self, "main_support", tuple(mains))
        object.__setattr__(self, "interaction_support", tuple(pairs))

    @property
    def M(self) -> int:
        return self.beta.shape[0]

    def union_mains(self) -> frozenset:
        return frozenset().union(*self.main_support)

    def union_interactions(self) -> frozenset:
        return frozenset().union(*self.interaction_support)

    def env_values(self, m: int, E: np.ndarray) -> np.ndarray:
        """``n x q`` matrix of the true curves of dataset ``m`` at ``E``."""
        E = np.atleast_2d(E)
        return np.column_stack([f(E[:, l]) for l, f in enumerate(self.env[m])])


def coefficient_table(case, p: int) -> tuple[np.ndarray, np.ndarray]:
    """True ``(beta, gamma)`` stacked over the three datasets (``3 x p``, ``3 x p(p-1)/2``)."""
    case = parse_case(case)
    need = 11 if case == "V" else 10
    if p < need:
        raise ValueError(f"case {case} needs p >= {need}")
    table = TABLES.get(case, _CASE_I)
    pairs = CASE_V_PAIRS if case == "V" else STANDARD_PAIRS
    beta = np.zeros((3, p))
    gamma = np.zeros((3, n_pairs(p)))
    for m, (b, g) in enumerate(table):
        beta[m, :10] = b
        for (j, k), v in zip(pairs, g):
            gamma[m, pair_to_flat(j, k, p) - 1] = v
    return beta, gamma


def generate_genes(n: int, p: int, case, rng: np.random.Generator) -> np.ndarray:
    """Standard normal genes; Case VI gets corr(j, k) = 0.5 ** |j - k|."""
    eps = rng.standard_normal((n, p))
    if parse_case(case) != "VI":
        return eps
    X = np.empty_like(eps)
    X[:, 0] = eps[:, 0]
    s = np.sqrt(0.75)
    for j in range(1, p):
        X[:, j] = 0.5 * X[:, j - 1] + s * eps[:, j]
    return X


def eta_sine(e):
    return np.sin(4 * np.pi * np.asarray(e, dtype=float))


def eta_exp(e):
    e = np.asarray(e, dtype=float)
    return 10 * (np.exp(-3.25 * e) + 4 * np.exp(-6.5 * e) + 3 * np.exp(-9.75 * e))


def eta_bowl(e):
    return 3 * (2 * np.asarray(e, dtype=float) - 1) ** 2


def _line(slope: float, intercept: float):
    def f(e):
        return slope * np.asarray(e, dtype=float) + intercept

    f.__name__ = f"line_{slope:g}_{intercept:g}"
    return f


def env_functions(case, env_mode: str) -> tuple:
    """True curves ``(eta_1, eta_2)`` for each of the three datasets."""
    case = parse_case(case)
    if env_mode == "nonlinear_a":
        if case == "VIII":
            return ((eta_sine, eta_exp), (eta_sine, eta_bowl), (eta_exp, eta_bowl))
        return ((eta_sine, eta_exp),) * 3
    if env_mode == "linear_b":
        if case == "VIII":
            return tuple((f, f) for f in (_line(1, 1), _line(0.5, 1), _line(1, 1.5)))
        ident = _line(1, 0)
        return ((ident, ident),) * 3
    raise ValueError(f"env_mode must be one of {ENV_MODES}")


def expected_censoring(times: np.ndarray, c: float) -> float:
    """Mean of P(C < T_i) for C ~ U(0, c)."""
    return float(np.mean(np.minimum(np.asarray(times) / c, 1.0)))


def censoring_bound(times, target_rate: float) -> float:
    times = np.asarray(times, dtype=float)
    if not 0.0 < target_rate < 1.0:
        raise ValueError(f"censoring rate {target_rate} is not attainable")
    if np.any(times <= 0):
        raise ValueError("event times must be positive")
    lo, hi = np.log(times.min()) - 1.0, np.log(times.max()) + 60.0
    # expected rate is continuous and decreasing in c
    if not (expected_censoring(times, np.exp(lo)) > target_rate > expected_censoring(times, np.exp(hi))):
        raise ValueError(f"censoring rate {target_rate} is not attainable")
    logc = brentq(lambda s: expected_censoring(times, np.exp(s)) - target_rate, lo, hi, xtol=1e-12)
    return float(np.exp(logc))


def generate_censoring(times, rng: np.random.Generator, target_rate: float = 0.10):
    """Uniform censoring on (0, c) with ``c`` calibrated to ``target_rate``."""
    times = np.asarray(times, dtype=float)
    c = censoring_bound(times, target_rate)
    C = rng.uniform(0.0, c, size=times.shape[0])
    delta = (times <= C).astype(int)
    return np.minimum(times, C), delta


def _interactions(X: np.ndarray, gamma: np.ndarray) -> np.ndarray:
    p = X.shape[1]
    G = np.zeros((p, p))
    G[np.triu_indices(p, 1)] = gamma
    return np.einsum("ij,ij->i", X @ G, X)


def generate_collection(scenario: SimScenario, rng: np.random.Generator | None = None,
                        noise_sd: float | None = None):
    """Draw one collection; returns ``(StudyCollection, GroundTruth)``.

    ``noise_sd`` overrides the noise regime's standard deviation (0 gives
    noiseless responses).
    """
    rng = np.random.default_rng(scenario.seed) if rng is None else rng
    beta, gamma = coefficient_table(scenario.case, scenario.p)
    if scenario.noise == "S2":
        beta, gamma = beta / 2, gamma / 2
    sd = {"standard": 1.0, "S1": 2.0, "S2": 1.0}[scenario.noise] if noise_sd is None else noise_sd
    truth = GroundTruth(beta=beta, gamma=gamma, env=env_functions(scenario.case, scenario.env_mode))
    datasets = []
    for m, n in enumerate(scenario.sizes):
        X = generate_genes(n, scenario.p, scenario.case, rng)
        E = rng.uniform(0.0, 1.0, size=(n, scenario.q))
        lp = X @ beta[m] + _interactions(X, gamma[m]) + truth.env_values(m, E).sum(axis=1)
        y = lp + sd * rng.standard_normal(n)
        if scenario.family is ModelFamily.AFT:
            t, delta = generate_censoring(np.exp(y), rng, scenario.censor_rate)
            datasets.append(DatasetBundle(y=t, X=X, E=E, event=delta))
        else:
            datasets.append(DatasetBundle(y=y, X=X, E=E))
    return StudyCollection(datasets, family=scenario.family), truth


def generate_replicate(scenario: SimScenario):
    """Training and independent test collections sharing one truth."""
    train_ss, test_ss = np.random.SeedSequence(scenario.seed).spawn(2)
    train, truth = generate_collection(scenario, np.random.default_rng(train_ss))
    test, _ = generate_collection(scenario, np.random.default_rng(test_ss))
    return train, test, truth
