"""Condition-number experiments on the Hessians of density-ratio losses.

All Hessians are functions of the Gram matrix K11 of the P-sample:

    K11                                   transductive KMM
    K11/n + lam I                         R-KuLSIF
    K11^2/n + lam K11                     KuLSIF
    K11^3/n^2 + 2 lam K11^2/n + lam^2 K11 inductive KMM
    K11 D K11/n + lam K11                 psi-divergence M-estimator, D = diag(psi''(w(X_i)))

Randomness: every run draws from its own ``numpy.random.SeedSequence`` with
entropy ``seed`` and spawn key ``(n, run)``; the X sample uses child 0 and the
diagonal of a kind uses a child keyed by the CRC32 of the kind label.  Runs
are therefore reproducible, independent of evaluation order and thread
count, and unaffected by which other kinds are requested.
"""

from __future__ import annotations

import csv
import io
import json
import math
import statistics
import time
import zlib
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from .estimators import (
    KULLBACK_LEIBLER,
    SQUARED,
    DomainError,
    PsiSpec,
    kl_feasible_start,
    kmm_inductive_objective,
    kulsif_fit_direct,
    kulsif_objective,
    mest_objective,
    rkulsif_objective,
)
from .kernelcore import (
    GramBlocks,
    InputError,
    KernelSpec,
    cond,
    condition_from_extremes,
    gram_blocks,
    median_heuristic,
)
from .optimizer import OptimizerConfig, bfgs_minimize

# slack for per-instance inequalities between computed condition numbers
CHAIN_RTOL = 1e-9


def lambda_rule(n: int, m: int | None = None) -> float:
    """Regularization schedule lam = 1 / min(n, m)^0.9."""
    k = n if m is None else min(n, m)
    return 1.0 / k**0.9


def run_rng(seed: int, *key: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=tuple(int(k) for k in key)))


def _label_key(label: str) -> int:
    return zlib.crc32(label.encode("utf-8"))


# ---------------------------------------------------------------- diagonal laws


@dataclass(frozen=True)
class DiagonalLaw:
    """Distribution of the Hessian diagonal psi''(w(X)).

    power:    F(d) = 1 - d^-gamma on d >= 1
    logistic: F(d) = 1 / (1 + exp(-gamma (d - 1))) on d >= 0
    constant: point mass at 1 (the squared loss)
    """

    family: str
    gamma: float | None = None

    def __post_init__(self):
        if self.family not in ("power", "logistic", "constant"):
            raise InputError(f"unknown diagonal law {self.family!r}")
        if self.family != "constant" and not (self.gamma is not None and self.gamma > 0):
            raise InputError(f"{self.family} law needs gamma > 0")

    @property
    def label(self) -> str:
        if self.family == "constant":
            return "constant"
        return f"{self.family}(gamma={self.gamma:g})"

    def cdf(self, d):
        d = np.asarray(d, dtype=np.float64)
        if self.family == "power":
            return np.where(d >= 1.0, 1.0 - np.power(np.maximum(d, 1.0), -self.gamma), 0.0)
        if self.family == "logistic":
            return np.where(d >= 0.0, 1.0 / (1.0 + np.exp(-self.gamma * (d - 1.0))), 0.0)
        return np.where(d >= 1.0, 1.0, 0.0)

    def tail_inverse(self, z: float) -> float:
        """G^{-1}(z) for the tail G = 1 - F at small z."""
        if self.family == "power":
            return z ** (-1.0 / self.gamma)
        if self.family == "logistic":
            return 1.0 + math.log((1.0 - z) / z) / self.gamma
        return 1.0

    def clamp_probability(self) -> float:
        """Mass of the logistic inverse-CDF draw that falls below 0 and is clamped."""
        if self.family == "logistic":
            return 1.0 / (1.0 + math.exp(self.gamma))
        return 0.0


def sample_diagonal(law: DiagonalLaw, n: int, rng: np.random.Generator) -> np.ndarray:
    """Inverse-CDF draws from uniform u.

    The power law uses d = u^(-1/gamma), reading u as the tail probability
    1 - F(d).  Logistic draws below zero are clamped to zero.
    """
    if law.family == "constant":
        return np.ones(n)
    u = rng.uniform(size=n)
    # uniform() can return exactly 0
    u = np.where(u == 0.0, np.nextafter(0.0, 1.0), u)
    return diagonal_from_uniform(law, u)


def diagonal_from_uniform(law: DiagonalLaw, u) -> np.ndarray:
    u = np.asarray(u, dtype=np.float64)
    if law.family == "power":
        return np.power(u, -1.0 / law.gamma)
    if law.family == "logistic":
        return np.maximum(0.0, 1.0 + np.log(u / (1.0 - u)) / law.gamma)
    return np.ones_like(u)


# ------------------------------------------------------------------ true ratio


def true_ratio_gaussian(mu: float, d: int):
    """q/p for P = N(0, I_d) and Q = N(mu 1_d, I_d).

    The returned callable accepts one point (shape (d,)) or a batch (k, d).
    """

    def ratio(x):
        x = np.asarray(x, dtype=np.float64)
        if x.shape[-1] != d:
            raise InputError(f"expected points of dimension {d}, got {x.shape[-1]}")
        out = np.exp(mu * x.sum(axis=-1) - d * mu * mu / 2.0)
        return float(out) if out.ndim == 0 else out

    return ratio


def gaussian_pair(rng: np.random.Generator, d: int, n: int, m: int, mu: float):
    """X ~ N(0, I_d) of size n and Y ~ N(mu 1_d, I_d) of size m."""
    x = rng.standard_normal((n, d))
    y = rng.standard_normal((m, d)) + mu
    return x, y


# -------------------------------------------------------------------- Hessians


@dataclass(frozen=True)
class HessianKind:
    """Which Hessian to build.

    tag is one of k11, rkulsif, kulsif, kmm, psi_true_ratio, rnd.
    psi_true_ratio uses psi''((psi')^{-1}(w0(X_i))) with w0 the Gaussian
    ratio for mean shift ``mu``; rnd samples the diagonal from ``law``.
    """

    tag: str
    mu: float | None = None
    psi: PsiSpec | None = None
    law: DiagonalLaw | None = None

    def __post_init__(self):
        if self.tag not in ("k11", "rkulsif", "kulsif", "kmm", "psi_true_ratio", "rnd"):
            raise InputError(f"unknown Hessian kind {self.tag!r}")
        if self.tag == "psi_true_ratio" and (self.mu is None or self.psi is None):
            raise InputError("psi_true_ratio needs mu and psi")
        if self.tag == "rnd" and self.law is None:
            raise InputError("rnd needs a diagonal law")

    @property
    def label(self) -> str:
        if self.tag == "psi_true_ratio":
            name = "KL" if self.psi.kind == "kullback_leibler" else self.psi.kind
            return f"{name}(mu={self.mu:g})"
        if self.tag == "rnd":
            return f"RND({self.law.label})"
        return {"k11": "K11", "rkulsif": "R-KuLSIF", "kulsif": "KuLSIF", "kmm": "KMM"}[self.tag]


K11 = HessianKind("k11")
RKULSIF = HessianKind("rkulsif")
KULSIF = HessianKind("kulsif")
KMM = HessianKind("kmm")


def kl_kind(mu: float) -> HessianKind:
    return HessianKind("psi_true_ratio", mu=mu, psi=KULLBACK_LEIBLER)


def rnd_kind(gamma: float, family: str = "power") -> HessianKind:
    return HessianKind("rnd", law=DiagonalLaw(family, gamma))


TABLE1_KINDS = (K11, RKULSIF, KULSIF, KMM, kl_kind(0.2), kl_kind(0.5), rnd_kind(2), rnd_kind(5), rnd_kind(10))


def parse_kind(text: str) -> HessianKind:
    """Parse CLI kind names: k11, rkulsif, kulsif, kmm, kl:MU, rnd:GAMMA, rnd:FAMILY:GAMMA."""
    parts = text.strip().lower().split(":")
    head = parts[0]
    if head in ("k11", "rkulsif", "kulsif", "kmm") and len(parts) == 1:
        return HessianKind(head)
    if head == "kl" and len(parts) == 2:
        return kl_kind(float(parts[1]))
    if head == "rnd" and len(parts) == 2:
        return rnd_kind(float(parts[1]))
    if head == "rnd" and len(parts) == 3:
        if parts[1] == "constant":
            return HessianKind("rnd", law=DiagonalLaw("constant"))
        return rnd_kind(float(parts[2]), parts[1])
    raise InputError(f"cannot parse Hessian kind {text!r}")


def psi_hessian(k11: np.ndarray, lam: float, diag) -> np.ndarray:
    n = k11.shape[0]
    diag = np.asarray(diag, dtype=np.float64)
    if diag.shape != (n,):
        raise InputError(f"diagonal must have length {n}")
    if np.any(diag < 0):
        raise InputError("Hessian diagonal must be non-negative")
    h = (k11 * diag) @ k11 / n + lam * k11
    return 0.5 * (h + h.T)


def hessian_build(kind: HessianKind, k11, lam: float, diag=None) -> np.ndarray:
    """The symmetric Hessian of ``kind`` for Gram matrix ``k11``.

    ``diag`` supplies the psi''-diagonal for psi_true_ratio and rnd kinds.
    """
    k11 = np.asarray(k11.k11 if isinstance(k11, GramBlocks) else k11, dtype=np.float64)
    n = k11.shape[0]
    if kind.tag == "k11":
        return k11.copy()
    if kind.tag == "rkulsif":
        return k11 / n + lam * np.eye(n)
    if kind.tag == "kulsif":
        h = k11 @ k11 / n + lam * k11
    elif kind.tag == "kmm":
        k2 = k11 @ k11
        h = k2 @ k11 / n**2 + 2.0 * lam * k2 / n + lam**2 * k11
    else:
        if diag is None:
            raise InputError(f"{kind.label} needs a diagonal")
        return psi_hessian(k11, lam, diag)
    return 0.5 * (h + h.T)


def true_ratio_diagonal(psi: PsiSpec, ratio_values) -> np.ndarray:
    """psi''((psi')^{-1}(r)) at the given density-ratio values r."""
    if psi.psi_prime_inv is None:
        raise InputError(f"psi {psi.kind!r} has no closed-form inverse derivative")
    return psi.psi_double_prime(psi.psi_prime_inv(np.asarray(ratio_values, dtype=np.float64)))


# ------------------------------------------------------------------ condition tables


@dataclass(frozen=True)
class CondExperimentConfig:
    n_grid: tuple[int, ...] = (20, 50, 100, 200)
    sigma: float = 2.0
    runs: int = 100
    seed: int = 0
    dim: int = 10
    threads: int = 1

    def __post_init__(self):
        if not self.n_grid or min(self.n_grid) < 2:
            raise InputError("n_grid must contain sizes >= 2")
        if self.runs < 1:
            raise InputError("runs must be positive")
        KernelSpec(self.sigma)

    def lam(self, n: int) -> float:
        return lambda_rule(n)


@dataclass
class CondRow:
    n: int
    kind: str
    mean: float
    std: float
    min: float
    max: float
    runs: int
    excluded: int


@dataclass
class CondReport:
    config: dict
    rows: list[CondRow]
    samples: dict = field(default_factory=dict, repr=False)

    def row(self, n: int, kind: str) -> CondRow:
        for r in self.rows:
            if r.n == n and r.kind == kind:
                return r
        raise KeyError((n, kind))

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["n", "kind", "mean", "std", "min", "max", "runs", "excluded"])
        for r in self.rows:
            w.writerow([r.n, r.kind] + [_fmt(v) for v in (r.mean, r.std, r.min, r.max)] + [r.runs, r.excluded])
        return buf.getvalue()

    def to_json(self) -> str:
        rows = [{k: _json_num(v) for k, v in asdict(r).items()} for r in self.rows]
        return json.dumps({"config": self.config, "rows": rows}, indent=2, sort_keys=True) + "\n"


def _fmt(v: float) -> str:
    return "inf" if math.isinf(v) else ("nan" if math.isnan(v) else repr(float(v)))


def _json_num(v):
    if isinstance(v, float) and not math.isfinite(v):
        return _fmt(v)
    return v


def _aggregate(n: int, label: str, values: list[float]) -> CondRow:
    finite = [v for v in values if math.isfinite(v)]
    excluded = len(values) - len(finite)
    if not finite:
        nan = float("nan")
        return CondRow(n, label, nan, nan, nan, nan, len(finite), excluded)
    return CondRow(
        n=n,
        kind=label,
        mean=statistics.fmean(finite),
        std=statistics.pstdev(finite) if len(finite) > 1 else 0.0,
        min=min(finite),
        max=max(finite),
        runs=len(finite),
        excluded=excluded,
    )


def _cond_run(cfg: CondExperimentConfig, kinds, n: int, run: int) -> list[float]:
    x = run_rng(cfg.seed, n, run, 0).standard_normal((n, cfg.dim))
    k11 = KernelSpec(cfg.sigma).matrix(x, x)
    k11 = 0.5 * (k11 + k11.T)
    lam = cfg.lam(n)
    out = []
    for kind in kinds:
        diag = None
        if kind.tag == "psi_true_ratio":
            diag = true_ratio_diagonal(kind.psi, true_ratio_gaussian(kind.mu, cfg.dim)(x))
        elif kind.tag == "rnd":
            diag = sample_diagonal(kind.law, n, run_rng(cfg.seed, n, run, 1, _label_key(kind.label)))
        out.append(cond(hessian_build(kind, k11, lam, diag)))
    return out


def cond_table(cfg: CondExperimentConfig, kinds=TABLE1_KINDS) -> CondReport:
    """Mean/std/min/max condition numbers per (n, kind) over ``cfg.runs`` runs.

    Infinite condition numbers are excluded from the statistics and counted.
    """
    kinds = list(kinds)
    jobs = [(n, r) for n in cfg.n_grid for r in range(cfg.runs)]
    if cfg.threads > 1:
        with ThreadPoolExecutor(cfg.threads) as pool:
            results = list(pool.map(lambda job: _cond_run(cfg, kinds, *job), jobs))
    else:
        results = [_cond_run(cfg, kinds, *job) for job in jobs]
    per = {(job[0], k.label): [] for job in jobs for k in kinds}
    for (n, _), vals in zip(jobs, results):
        for kind, v in zip(kinds, vals):
            per[(n, kind.label)].append(v)
    rows = [_aggregate(n, k.label, per[(n, k.label)]) for n in cfg.n_grid for k in kinds]
    config = {
        "experiment": "condition_numbers",
        "n_grid": list(cfg.n_grid),
        "sigma": cfg.sigma,
        "runs": cfg.runs,
        "seed": cfg.seed,
        "dim": cfg.dim,
        "lambda": {str(n): cfg.lam(n) for n in cfg.n_grid},
        "lambda_rule": "1/n^0.9",
        "kinds": [k.label for k in kinds],
    }
    return CondReport(config, rows, per)


# ------------------------------------------------------------ ordering chain


@dataclass(frozen=True)
class OrderingResult:
    k11: float
    rkulsif: float
    kulsif: float
    kmm: float
    flags: tuple[bool, bool, bool]
    psi: float | None = None

    @property
    def ok(self) -> bool:
        return all(self.flags)


def _leq(a: float, b: float) -> bool:
    return a <= b * (1.0 + CHAIN_RTOL) or a == b


def ordering_check(k11, lam: float, psi_diag=None) -> OrderingResult:
    """Check kappa(R-KuLSIF) <= kappa(K11) <= kappa(KuLSIF) <= kappa(KMM).

    Comparisons allow a relative slack of CHAIN_RTOL for rounding.  With
    ``psi_diag`` the M-estimator Hessian's kappa is reported as well (no flag:
    that ordering only holds in the worst case or with high probability).
    """
    k11 = np.asarray(k11.k11 if isinstance(k11, GramBlocks) else k11, dtype=np.float64)
    c = {kind.tag: cond(hessian_build(kind, k11, lam)) for kind in (K11, RKULSIF, KULSIF, KMM)}
    flags = (_leq(c["rkulsif"], c["k11"]), _leq(c["k11"], c["kulsif"]), _leq(c["kulsif"], c["kmm"]))
    psi_cond = None if psi_diag is None else cond(psi_hessian(k11, lam, psi_diag))
    return OrderingResult(c["k11"], c["rkulsif"], c["kulsif"], c["kmm"], flags, psi_cond)


# --------------------------------------------------------------- min-max


@dataclass(frozen=True)
class MinMaxReport:
    kappa_identity: float
    kappas: np.ndarray
    relative_spread: float
    sup: float
    sup_exceeds_identity: bool
    domain_failures: list


def fitted_values_at_x(g: GramBlocks, lam: float, alpha) -> np.ndarray:
    return g.k11 @ np.asarray(alpha, dtype=np.float64) + g.k12.sum(axis=1) / (g.m * lam)


def minmax_check(g: GramBlocks, lam: float, psi: PsiSpec, w_samples, tol: float = 1e-10) -> MinMaxReport:
    """kappa0(D) = kappa(K11 D K11/n + lam K11) over coefficient samples.

    Each sample is a coefficient vector alpha; D holds psi'' at w(X_i).
    Samples outside the psi-domain are listed in ``domain_failures``.
    """
    k11 = g.k11
    base = cond(psi_hessian(k11, lam, np.ones(g.n)))
    kappas, failures = [], []
    for idx, alpha in enumerate(w_samples):
        w = fitted_values_at_x(g, lam, alpha)
        if not np.all(psi.in_domain(w)):
            failures.append(idx)
            continue
        kappas.append(cond(psi_hessian(k11, lam, psi.psi_double_prime(w))))
    kappas = np.array(kappas)
    if kappas.size == 0:
        raise DomainError("no sample lies in the psi-domain")
    spread = float((kappas.max() - kappas.min()) / base)
    sup = float(kappas.max())
    return MinMaxReport(base, kappas, spread, sup, sup >= base * (1.0 - tol), failures)


def alpha_for_values(g: GramBlocks, lam: float, w_values) -> np.ndarray:
    """Coefficients whose fitted values at the X points equal ``w_values``."""
    from .kernelcore import solve_spd

    return solve_spd(g.k11, np.asarray(w_values, dtype=np.float64) - g.k12.sum(axis=1) / (g.m * lam))


def kl_random_alphas(g: GramBlocks, lam: float, count: int, rng: np.random.Generator, margin: float = 0.5):
    """Random coefficient vectors with every w(X_i) <= -margin.

    Each draw is a negative constant vector, sized so that w(X) <= -2 margin,
    plus a Gaussian perturbation scaled to move w(X) by at most margin.
    Coefficients stay moderate even when K11 is badly conditioned.
    """
    offset = g.k12.sum(axis=1) / (g.m * lam)
    rowsum = g.k11.sum(axis=1)
    out = []
    for _ in range(count):
        c = (np.max(offset) + 2.0 * margin) / np.min(rowsum) * rng.uniform(1.0, 2.0)
        xi = rng.standard_normal(g.n)
        shift = np.max(np.abs(g.k11 @ xi))
        out.append(-c * np.ones(g.n) + xi * (margin * rng.uniform() / shift))
    return out


# ------------------------------------------------------------ probabilistic


@dataclass(frozen=True)
class ProbBoundReport:
    law: str
    n: int
    runs: int
    lower_rate: float
    upper_rate: float
    band_rate: float
    kappas: np.ndarray
    lowers: np.ndarray
    uppers: np.ndarray


def prob_bounds(law: DiagonalLaw, n: int, lam: float, kappa_k11: float, eta: float, nu: float):
    """(lower, upper) condition-number band for H_w with diagonal law ``law``.

    power:    n^((1-eta)(1-nu)/gamma)  and  kappa(K11) (1 + n^((1+eta)/gamma) / lam)
    logistic: ((1-eta)/gamma log(n/2))^(1-nu)  and  kappa(K11) (1+eta)/(lam gamma) log n
    constant: 1  and  kappa(K11) (1 + 1/lam)
    """
    if law.family == "power":
        g = law.gamma
        return n ** ((1 - eta) * (1 - nu) / g), kappa_k11 * (1.0 + n ** ((1 + eta) / g) / lam)
    if law.family == "logistic":
        g = law.gamma
        lower = max((1 - eta) / g * math.log(n / 2.0), 0.0) ** (1 - nu)
        return lower, kappa_k11 * (1 + eta) / (lam * g) * math.log(n)
    return 1.0, kappa_k11 * (1.0 + 1.0 / lam)


def prob_bound_check(
    law: DiagonalLaw,
    n: int = 200,
    runs: int = 100,
    eta: float = 0.1,
    nu: float = 0.1,
    sigma: float = 2.0,
    dim: int = 10,
    seed: int = 0,
    lam: float | None = None,
) -> ProbBoundReport:
    """Fraction of runs whose kappa(H_w) falls inside the band of ``prob_bounds``."""
    if not (0 < eta < 0.5 and 0 < nu < 0.5):
        raise InputError("eta and nu must lie in (0, 0.5)")
    lam = lambda_rule(n) if lam is None else lam
    kernel = KernelSpec(sigma)
    kappas, lowers, uppers = [], [], []
    for run in range(runs):
        x = run_rng(seed, n, run, 0).standard_normal((n, dim))
        k11 = kernel.matrix(x, x)
        k11 = 0.5 * (k11 + k11.T)
        diag = sample_diagonal(law, n, run_rng(seed, n, run, 1, _label_key(law.label)))
        kappa = cond(psi_hessian(k11, lam, diag))
        lo, hi = prob_bounds(law, n, lam, cond(k11), eta, nu)
        kappas.append(kappa)
        lowers.append(lo)
        uppers.append(hi)
    kappas, lowers, uppers = map(np.array, (kappas, lowers, uppers))
    lower_ok = lowers <= kappas
    upper_ok = kappas <= uppers
    return ProbBoundReport(
        law=law.label,
        n=n,
        runs=runs,
        lower_rate=float(lower_ok.mean()),
        upper_rate=float(upper_ok.mean()),
        band_rate=float((lower_ok & upper_ok).mean()),
        kappas=kappas,
        lowers=lowers,
        uppers=uppers,
    )


# -------------------------------------------------------- preconditioning


@dataclass(frozen=True)
class PrecondResult:
    analytic: float
    constructed: float
    searched: float
    preconditioner: np.ndarray


def preconditioned_cond(a: np.ndarray, s: np.ndarray) -> float:
    """kappa(S^{-1/2} A S^{-1/2}) for SPD S."""
    ev, q = np.linalg.eigh(0.5 * (s + s.T))
    if ev[0] <= 0:
        raise InputError("preconditioner is not positive definite")
    t = (q / np.sqrt(ev)) @ q.T
    return cond(t @ a @ t)


def precond_tradeoff(a, c_bound: float, trials: int = 1000, rng: np.random.Generator | None = None) -> PrecondResult:
    """Best kappa(S^{-1/2} A S^{-1/2}) over SPD S with kappa(S) <= c_bound.

    ``analytic`` is max(kappa(A)/C, 1).  ``constructed`` comes from an explicit
    preconditioner sharing A's eigenbasis: with T = S^{-1/2} and c = sqrt(C),
    T has eigenvalue 1 on the top eigenvector, c on the bottom one, and every
    other eigenvalue clamped into [max(1, c sqrt(l_n/l_k)), min(c, sqrt(l_1/l_k))].
    ``searched`` is the best of ``trials`` random feasible S: half perturb the
    construction in A's eigenbasis, half use a random orthogonal basis.
    """
    a = np.asarray(a, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise InputError("a must be square")
    c_bound = float(c_bound)
    if not c_bound >= 1:
        raise InputError("c_bound must be >= 1")
    rng = rng or np.random.default_rng(0)
    ev, q = np.linalg.eigh(0.5 * (a + a.T))
    if ev[0] <= 0:
        raise InputError("a must be positive definite")
    n = ev.size
    lam = ev[::-1]  # decreasing
    qd = q[:, ::-1]
    kappa_a = lam[0] / lam[-1]
    analytic = max(kappa_a / c_bound, 1.0)

    c = math.sqrt(c_bound)
    if kappa_a <= c_bound:
        t_eigs = 1.0 / np.sqrt(lam)
    else:
        lo = np.maximum(1.0, c * np.sqrt(lam[-1] / lam))
        hi = np.minimum(c, np.sqrt(lam[0] / lam))
        t_eigs = np.sqrt(lo * hi)
        t_eigs[0], t_eigs[-1] = 1.0, c
    s_eigs = t_eigs ** -2.0
    s = (qd * s_eigs) @ qd.T
    constructed = float(condition_from_extremes(*_extremes(lam * t_eigs**2)))

    best = math.inf
    for k in range(trials):
        if k % 2 == 0:
            noise = np.exp(rng.uniform(-0.5, 0.5, size=n) * math.log(max(c_bound, 1.0 + 1e-12)))
            cand = s_eigs * noise
            basis = qd
        else:
            cand = np.exp(rng.uniform(0.0, math.log(c_bound), size=n)) if c_bound > 1 else np.ones(n)
            basis, _ = np.linalg.qr(rng.standard_normal((n, n)))
        # rescale into kappa(S) <= C
        ratio = cand.max() / cand.min()
        if ratio > c_bound:
            logs = np.log(cand)
            logs = (logs - logs.min()) * (math.log(c_bound) / (logs.max() - logs.min()))
            cand = np.exp(logs)
        cand_s = (basis * cand) @ basis.T
        best = min(best, preconditioned_cond(a, cand_s))
    return PrecondResult(analytic, constructed, best, s)


def _extremes(values):
    values = np.asarray(values)
    return float(values.min()), float(values.max())


# ------------------------------------------------------------ integrability


@dataclass(frozen=True)
class JacobianReport:
    asymmetries: np.ndarray

    @property
    def max(self) -> float:
        return float(self.asymmetries.max())


def jacobian_symmetry_check(g: GramBlocks, lam: float, psi: PsiSpec, alphas) -> JacobianReport:
    """Asymmetry of D K11/n + lam I, the Jacobian of K11^{-1} times the psi-gradient.

    Reported as ||M - M^T||_F / ||M||_F per coefficient vector.
    """
    out = []
    for alpha in alphas:
        w = fitted_values_at_x(g, lam, alpha)
        if not np.all(psi.in_domain(w)):
            raise DomainError(f"alpha puts w(X) outside the domain of {psi.kind}")
        d = psi.psi_double_prime(w)
        mat = d[:, None] * g.k11 / g.n + lam * np.eye(g.n)
        out.append(np.linalg.norm(mat - mat.T) / np.linalg.norm(mat))
    return JacobianReport(np.array(out))


# ------------------------------------------------------------------ iteration bench

BENCH_METHODS = ("rkulsif", "kulsif", "kmm_inductive", "mest_kl", "direct_solve")


@dataclass(frozen=True)
class BenchConfig:
    n: int = 500
    m: int | None = None
    seeds: int = 20
    seed: int = 0
    dim: int = 10
    mu: float = 0.5
    sigma: float | None = None  # None -> median heuristic on X
    lam: float | None = None  # None -> lambda_rule
    grad_tol: float = 1e-5
    target_rtol: float = 1e-6
    max_iter: int = 10000
    threads: int = 1


@dataclass
class BenchRecord:
    seed: int
    method: str
    iterations: int | None
    iterations_to_target: int | None
    wall_time: float
    converged: bool
    sigma: float
    lam: float
    alpha_error: float | None
    w_error: float | None = None
    message: str = ""


@dataclass
class BenchReport:
    config: dict
    records: list[BenchRecord]

    def summary(self) -> list[dict]:
        out = []
        for method in dict.fromkeys(r.method for r in self.records):
            recs = [r for r in self.records if r.method == method]
            row = {"method": method, "runs": len(recs), "nonconverged": sum(not r.converged for r in recs)}
            for key in ("iterations", "iterations_to_target", "wall_time"):
                vals = [getattr(r, key) for r in recs if r.converged and getattr(r, key) is not None]
                row[f"median_{key}"] = statistics.median(vals) if vals else None
                row[f"mean_{key}"] = statistics.fmean(vals) if vals else None
            out.append(row)
        return out

    def median(self, method: str, key: str = "iterations_to_target") -> float:
        for row in self.summary():
            if row["method"] == method:
                return row[f"median_{key}"]
        raise KeyError(method)

    def to_csv(self) -> str:
        rows = self.summary()
        cols = list(rows[0].keys()) if rows else ["method"]
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(cols)
        for row in rows:
            w.writerow(["" if row[c] is None else row[c] for c in cols])
        return buf.getvalue()

    def to_json(self) -> str:
        payload = {
            "config": self.config,
            "summary": self.summary(),
            "records": [asdict(r) for r in self.records],
        }
        return json.dumps(payload, indent=2, sort_keys=True, default=_json_num) + "\n"


def _bench_seed(cfg: BenchConfig, methods, k: int, timings: bool) -> list[BenchRecord]:
    m = cfg.m or cfg.n
    rng = run_rng(cfg.seed, cfg.n, k)
    x, y = gaussian_pair(rng, cfg.dim, cfg.n, m, cfg.mu)
    sigma = cfg.sigma if cfg.sigma is not None else median_heuristic(x)
    lam = cfg.lam if cfg.lam is not None else lambda_rule(cfg.n, m)
    g = gram_blocks(KernelSpec(sigma), x, y)
    t0 = time.perf_counter()
    alpha_star, _ = kulsif_fit_direct(g, lam)
    direct_time = time.perf_counter() - t0
    w_star = g.k11 @ alpha_star
    w_scale = np.max(np.abs(w_star))
    opt_cfg = OptimizerConfig(grad_tol=cfg.grad_tol, max_iter=cfg.max_iter)
    builders = {"rkulsif": rkulsif_objective, "kulsif": kulsif_objective, "kmm_inductive": kmm_inductive_objective}

    records = []
    for method in methods:
        if method == "direct_solve":
            records.append(BenchRecord(k, method, None, None, direct_time, True, sigma, lam, 0.0, 0.0, "closed form"))
            continue
        if method == "mest_kl":
            obj = mest_objective(g, lam, KULLBACK_LEIBLER)
            tr = bfgs_minimize(obj, kl_feasible_start(g, lam), opt_cfg)
            records.append(
                BenchRecord(k, method, tr.iterations, None, tr.wall_time, tr.converged, sigma, lam, None, None, tr.message)
            )
            continue
        if method not in builders:
            raise InputError(f"unknown bench method {method!r}")
        obj = builders[method](g, lam)
        state = {"it": -1, "hit": None, "stop": None}

        def watch(alpha, obj=obj, state=state):
            # iteration at which the fitted values first reach the target
            # accuracy, and at which the gradient rule would have stopped
            state["it"] += 1
            if state["hit"] is None:
                err = np.max(np.abs(g.k11 @ alpha - w_star)) / w_scale
                if err <= cfg.target_rtol:
                    state["hit"] = state["it"]
            if state["stop"] is None and np.max(np.abs(obj.grad_at(alpha))) <= cfg.grad_tol:
                state["stop"] = state["it"]
            return state["hit"] is not None and state["stop"] is not None

        tr = bfgs_minimize(obj, np.zeros(g.n), OptimizerConfig(grad_tol=1e-300, max_iter=cfg.max_iter), watch)
        wall = tr.wall_time
        if timings:
            wall = bfgs_minimize(obj, np.zeros(g.n), opt_cfg).wall_time
        err = float(np.max(np.abs(tr.final_point - alpha_star)))
        w_err = float(np.max(np.abs(g.k11 @ tr.final_point - w_star)) / w_scale)
        records.append(
            BenchRecord(
                seed=k,
                method=method,
                iterations=state["stop"],
                iterations_to_target=state["hit"],
                wall_time=wall,
                converged=state["stop"] is not None and state["hit"] is not None,
                sigma=sigma,
                lam=lam,
                alpha_error=err,
                w_error=w_err,
                message=tr.message,
            )
        )
    return records


def iteration_bench(cfg: BenchConfig, methods=BENCH_METHODS, timings: bool = True) -> BenchReport:
    """Fit every method on ``cfg.seeds`` synthetic datasets and count BFGS iterations.

    For the three quadratic objectives two counts are recorded from one run
    started at alpha = 0: ``iterations``, where |grad|_inf <= grad_tol first
    holds, and ``iterations_to_target``, where the fitted values at the X
    points first agree with the closed-form fit to relative accuracy
    ``target_rtol``.  The second count compares the formulations at equal
    solution quality.  With ``timings`` each quadratic is re-run under the
    plain gradient rule so that wall times carry no instrumentation overhead.
    mest_kl starts from a KL-feasible point and reports the gradient-rule count.

    ``alpha_error`` is |alpha - alpha*|_inf against the closed-form fit and
    ``w_error`` the relative sup-error of the fitted values at the X points.
    """
    methods = list(methods)
    for method in methods:
        if method not in BENCH_METHODS:
            raise InputError(f"unknown bench method {method!r}")
    seeds = range(cfg.seeds)
    if cfg.threads > 1:
        with ThreadPoolExecutor(cfg.threads) as pool:
            chunks = list(pool.map(lambda k: _bench_seed(cfg, methods, k, timings), seeds))
    else:
        chunks = [_bench_seed(cfg, methods, k, timings) for k in seeds]
    config = {k: v for k, v in asdict(cfg).items() if k != "threads"}
    config["experiment"] = "iteration_bench"
    config["methods"] = methods
    config["lambda_rule"] = "1/min(n,m)^0.9" if cfg.lam is None else "fixed"
    config["sigma_rule"] = "median pairwise distance of X" if cfg.sigma is None else "fixed"
    return BenchReport(config, [r for chunk in chunks for r in chunk])
