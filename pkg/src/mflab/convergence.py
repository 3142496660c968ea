"""Convergence experiments for kernel graph Laplacians on analytic manifolds.

Each experiment samples clouds at increasing ``n``, builds the kernel
graph and compares graph quantities against closed-form Laplace-Beltrami
ground truth. Trials are seeded from ``(master_seed, n, trial)`` only, so
the rows do not depend on execution order or worker count.

With ``volume_scaling`` on (the default) the graph Laplacian is multiplied
by the manifold volume before comparison. The kernel sum averages against
the normalized measure, so unscaled it converges to ``L / vol(M)``.
"""

from __future__ import annotations

import csv
import io
import json
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Mapping, NamedTuple, Optional, Union

import numpy as np

from .errors import DegenerateCase, InsufficientData, InvalidArgument, TruncationRefused
from .filters import (
    FilterSpec,
    fdt_check,
    lipschitz_constant,
    spectral_filter_apply,
)
from .graph import build_graph, default_epsilon, sample_operator
from .manifold import ManifoldSignal, ManifoldSpec, lb_spectrum, manifold_filter_apply, sample_uniform
from .spectral import align_eigenpairs, eig_sym, gn_normalize

CSV_HEADER = ("theorem_id", "n", "epsilon", "trial", "seed", "metric", "value")
DEFAULT_METRIC = {"thm1": "thm1_err", "thm2": "lambda_err", "thm3": "thm3_err"}


def fmt_float(x: float) -> str:
    return format(float(x), ".17g")


def worker_count() -> int:
    env = os.environ.get("MFLAB_THREADS")
    if env:
        return max(1, int(env))
    return os.cpu_count() or 1


@dataclass(frozen=True)
class ExperimentConfig:
    manifold: ManifoldSpec = field(default_factory=lambda: ManifoldSpec("circle", 1.0))
    n_values: tuple = (250, 500, 1000, 2000)
    trials: int = 10
    master_seed: int = 0
    epsilon_rule: Union[str, float] = "default"
    K: int = 5
    filter: FilterSpec = field(default_factory=lambda: FilterSpec.heat(1.0))
    # band-limited signal as {analytic mode index: coefficient}
    signal: Mapping = field(default_factory=lambda: {1: 1.0})
    eval_points: int = 20
    volume_scaling: bool = True
    fdt_alpha: float = 0.5
    fdt_gamma: float = 0.1
    eig_method: str = "auto"

    def __post_init__(self):
        ns = tuple(int(n) for n in self.n_values)
        if not ns or any(b <= a for a, b in zip(ns, ns[1:])):
            raise InvalidArgument("n_values must be non-empty and strictly ascending")
        if ns[0] < 2:
            raise InvalidArgument("every n must be >= 2")
        object.__setattr__(self, "n_values", ns)
        if self.trials < 1:
            raise InvalidArgument("trials must be >= 1")
        if self.K < 1:
            raise InvalidArgument("K must be >= 1")
        if self.eval_points < 1:
            raise InvalidArgument("eval_points must be >= 1")
        rule = self.epsilon_rule
        if rule != "default":
            try:
                rule = float(rule)
            except (TypeError, ValueError):
                raise InvalidArgument(f"bad epsilon rule {self.epsilon_rule!r}") from None
            if not rule > 0:
                raise InvalidArgument("fixed epsilon must be positive")
            object.__setattr__(self, "epsilon_rule", rule)
        object.__setattr__(self, "signal", {int(k): float(v) for k, v in dict(self.signal).items()})

    def epsilon(self, n: int) -> float:
        if self.epsilon_rule == "default":
            return default_epsilon(n, self.manifold.intrinsic_dim)
        return float(self.epsilon_rule)

    def to_dict(self) -> dict:
        return {
            "manifold": self.manifold.to_dict(),
            "n_values": list(self.n_values),
            "trials": self.trials,
            "master_seed": self.master_seed,
            "epsilon_rule": self.epsilon_rule,
            "K": self.K,
            "filter": self.filter.to_dict(),
            "signal": {str(k): v for k, v in sorted(self.signal.items())},
            "eval_points": self.eval_points,
            "volume_scaling": self.volume_scaling,
            "fdt_alpha": self.fdt_alpha,
            "fdt_gamma": self.fdt_gamma,
            "eig_method": self.eig_method,
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "ExperimentConfig":
        d = dict(d)
        d["manifold"] = ManifoldSpec.from_dict(d["manifold"])
        d["filter"] = FilterSpec.from_dict(d["filter"])
        d["n_values"] = tuple(d["n_values"])
        return cls(**d)


class Row(NamedTuple):
    theorem_id: str
    n: int
    epsilon: float
    trial: int
    seed: int
    metric: str
    value: float


@dataclass
class ExperimentReport:
    rows: list
    fitted_slope: float = math.nan
    fitted_intercept: float = math.nan
    metric: str = ""

    def values(self, metric: str, n: Optional[int] = None) -> np.ndarray:
        return np.array([r.value for r in self.rows if r.metric == metric and (n is None or r.n == n)])

    def medians(self, metric: str) -> dict:
        ns = sorted({r.n for r in self.rows if r.metric == metric})
        return {n: float(np.median(self.values(metric, n))) for n in ns}

    def to_csv(self, path=None) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(CSV_HEADER)
        for r in self.rows:
            w.writerow([r.theorem_id, r.n, fmt_float(r.epsilon), r.trial, r.seed, r.metric, fmt_float(r.value)])
        text = buf.getvalue()
        if path is not None:
            with open(path, "w", newline="") as fh:
                fh.write(text)
        return text

    def summary(self) -> dict:
        metrics = sorted({r.metric for r in self.rows})
        return {
            "metric": self.metric,
            "slope": self.fitted_slope,
            "intercept": self.fitted_intercept,
            "per_n_medians": {m: {str(n): v for n, v in self.medians(m).items()} for m in metrics},
        }


def trial_seed(master_seed: int, n: int, trial: int) -> int:
    ss = np.random.SeedSequence(entropy=int(master_seed), spawn_key=(int(n), int(trial)))
    return int(ss.generate_state(1, dtype=np.uint64)[0])


def _scaled_laplacian(cfg, graph):
    L = graph.laplacian
    return L * cfg.manifold.volume if cfg.volume_scaling else L


def _run(cfg: ExperimentConfig, theorem: str, trial_fn, workers: Optional[int]) -> ExperimentReport:
    tasks = [(n, t) for n in cfg.n_values for t in range(cfg.trials)]

    def job(task):
        n, t = task
        seed = trial_seed(cfg.master_seed, n, t)
        eps = cfg.epsilon(n)
        return [Row(theorem, n, eps, t, seed, m, float(v)) for m, v in trial_fn(n, t, seed, eps)]

    workers = workers or worker_count()
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            chunks = list(pool.map(job, tasks))
    else:
        chunks = [job(t) for t in tasks]
    report = ExperimentReport([r for c in chunks for r in c], metric=DEFAULT_METRIC[theorem])
    try:
        report.fitted_slope, report.fitted_intercept = fit_rate(report, report.metric)
    except InsufficientData:
        pass
    return report


def thm1_experiment(cfg: ExperimentConfig, workers: Optional[int] = None) -> ExperimentReport:
    """Pointwise error of the graph Laplacian on analytic eigenfunctions.

    Evaluation points are drawn from the cloud itself, where the extended
    graph Laplacian coincides with a row of the Laplacian matrix. The
    constant eigenfunction is skipped since its error vanishes identically.
    """
    spec = lb_spectrum(cfg.manifold, cfg.K)

    def trial(n, t, seed, eps):
        cloud = sample_uniform(cfg.manifold, n, seed)
        L = _scaled_laplacian(cfg, build_graph(cloud, eps))
        idx = np.random.default_rng([seed, 1]).choice(n, size=min(cfg.eval_points, n), replace=False)
        phi = spec.evaluate(cloud.points)
        err = np.abs(L[idx] @ phi - phi[idx] * spec.eigenvalues)[:, 1:]
        if err.size == 0:
            return [("thm1_err", 0.0), ("thm1_err_median", 0.0)]
        return [("thm1_err", err.max()), ("thm1_err_median", np.median(err))]

    return _run(cfg, "thm1", trial, workers)


def thm2_experiment(cfg: ExperimentConfig, workers: Optional[int] = None) -> ExperimentReport:
    """Eigenvalue and eigenfunction errors of the graph spectrum."""
    spec = lb_spectrum(cfg.manifold, cfg.K + _group_tail(cfg))

    def trial(n, t, seed, eps):
        cloud = sample_uniform(cfg.manifold, n, seed)
        graph = build_graph(cloud, eps)
        s = gn_normalize(eig_sym(_scaled_laplacian(cfg, graph), method=cfg.eig_method))
        rep = align_eigenpairs(s, spec, cloud, cfg.K)
        return [
            ("lambda_err", rep.max_lambda_error),
            ("phi_err", rep.max_eigenfunction_error),
            ("lambda0_err", rep.records[0].lambda_abs_error),
            ("theta", rep.theta),
        ]

    return _run(cfg, "thm2", trial, workers)


def _group_tail(cfg):
    # extra analytic modes so the eigengap sees the next distinct eigenvalue
    return 4 if cfg.manifold.kind == "circle" else 8


def thm3_experiment(cfg: ExperimentConfig, workers: Optional[int] = None) -> ExperimentReport:
    """Graph filter on sampled signal versus sampled manifold filter output.

    Also records the identity-filter error (a complete-basis sanity check),
    the grid Lipschitz estimate of the response and its FDT variation on the
    graph spectrum.
    """
    if cfg.filter.form != "response":
        raise InvalidArgument("thm3 needs a response-form filter")
    if not cfg.signal:
        raise InvalidArgument("thm3 needs a band-limited signal")
    band = max(cfg.signal) + 1
    if band > cfg.K:
        raise TruncationRefused(f"signal band limit {band} exceeds K={cfg.K}")
    spec = lb_spectrum(cfg.manifold, cfg.K)
    f = ManifoldSignal.from_modes(spec, cfg.signal)
    g = manifold_filter_apply(cfg.filter, f, spec, cfg.K)
    identity = FilterSpec.constant(1.0)

    def trial(n, t, seed, eps):
        cloud = sample_uniform(cfg.manifold, n, seed)
        s = gn_normalize(eig_sym(_scaled_laplacian(cfg, build_graph(cloud, eps)), method=cfg.eig_method))
        fn = sample_operator(f, cloud).values
        graph_out = spectral_filter_apply(s, cfg.filter, fn)
        err = math.sqrt(np.mean((graph_out - g(cloud.points)) ** 2))
        ident = math.sqrt(np.mean((spectral_filter_apply(s, identity, fn) - fn) ** 2))
        lam = np.clip(s.eigenvalues, 0.0, None)
        fdt = fdt_check(cfg.filter, lam, cfg.fdt_alpha, cfg.fdt_gamma)
        return [
            ("thm3_err", err),
            ("identity_err", ident),
            ("lipschitz", lipschitz_constant(cfg.filter, 0.0, max(float(lam[-1]), 1e-12), 10_000)),
            ("fdt_max_variation", fdt.max_variation),
            ("fdt_partition_size", fdt.partition.size),
        ]

    return _run(cfg, "thm3", trial, workers)


def fit_rate(report: ExperimentReport, metric: str) -> tuple[float, float]:
    """Least-squares fit of log(median error) against log(n).

    Non-positive medians are dropped before fitting.
    """
    med = {n: v for n, v in report.medians(metric).items() if v > 0 and math.isfinite(v)}
    if len(med) < 2:
        raise InsufficientData(f"need >= 2 distinct n with positive medians for {metric!r}")
    ns = np.array(sorted(med), dtype=float)
    vals = np.array([med[n] for n in sorted(med)])
    slope, intercept = np.polyfit(np.log(ns), np.log(vals), 1)
    return float(slope), float(intercept)


@dataclass(frozen=True)
class LemmaCheck:
    lhs_eigfun: float
    rhs_eigfun: float
    lhs_eigval: float
    rhs_eigval: float
    holds_eigfun: bool
    holds_eigval: bool

    @property
    def holds(self) -> bool:
        return self.holds_eigfun and self.holds_eigval


def lemma_bound_check(A, B, i: int, rtol: float = 1e-9, atol: float = 1e-12) -> LemmaCheck:
    """Evaluate both sides of the two perturbation inequalities at index ``i``.

    Eigenfunction bound: ``||a u_i - w_i|| <= 2 ||B u_i - A u_i|| / min_{j!=i}
    |lambda_j(B) - lambda_i(A)|`` with the optimal sign ``a``. Eigenvalue
    bound: ``|lambda_i(A) - lambda_i(B)| <= ||(A - B) u_i|| / |<u_i, w_i>|``.
    ``holds`` flags allow ``rtol``/``atol`` of round-off slack.
    """
    A = np.asarray(A, dtype=float)
    B = np.asarray(B, dtype=float)
    if A.shape != B.shape or A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise InvalidArgument("A and B must be square matrices of the same size")
    if not 0 <= i < len(A):
        raise InvalidArgument(f"index {i} out of range")
    sa, sb = eig_sym(A), eig_sym(B)
    la, lb = sa.eigenvalues, sb.eigenvalues
    u, w = sa.eigenvectors[:, i], sb.eigenvectors[:, i]
    scale = max(np.abs(la).max(), np.abs(lb).max(), 1e-300)
    others = np.delete(la, i)
    if others.size and np.min(np.abs(others - la[i])) <= 1e-12 * scale:
        raise DegenerateCase(f"eigenvalue {i} of A is not simple")
    gaps = np.abs(np.delete(lb, i) - la[i])
    if gaps.size == 0 or gaps.min() <= 1e-14 * scale:
        raise DegenerateCase("zero spectral gap in the eigenfunction bound")
    overlap = float(u @ w)
    if abs(overlap) <= 1e-14:
        raise DegenerateCase("eigenvectors are orthogonal")

    a = 1.0 if overlap >= 0 else -1.0
    lhs1 = float(np.linalg.norm(a * u - w))
    rhs1 = float(2.0 * np.linalg.norm(B @ u - A @ u) / gaps.min())
    lhs2 = float(abs(la[i] - lb[i]))
    rhs2 = float(np.linalg.norm((A - B) @ u) / abs(overlap))
    slack = lambda r: r * (1 + rtol) + atol  # noqa: E731
    return LemmaCheck(lhs1, rhs1, lhs2, rhs2, lhs1 <= slack(rhs1), lhs2 <= slack(rhs2))


@dataclass(frozen=True)
class LemmaSweep:
    pairs: int
    non_degenerate: int
    eigfun_holds: int
    eigval_holds: int

    def rate(self, which: str) -> Optional[float]:
        if self.non_degenerate == 0:
            return None
        count = self.eigfun_holds if which == "eigfun" else self.eigval_holds
        return count / self.non_degenerate


def random_symmetric(rng, dim: int) -> np.ndarray:
    M = rng.standard_normal((dim, dim))
    return 0.5 * (M + M.T)


def lemma_sweep(pairs: int, dim: int, perturb: float, seed: int) -> LemmaSweep:
    """Check both inequalities on ``pairs`` random (A, A + perturb * E) pairs."""
    if pairs < 0 or dim < 2 or perturb < 0:
        raise InvalidArgument("need pairs >= 0, dim >= 2 and perturb >= 0")
    rng = np.random.default_rng(seed)
    ok = f_ok = v_ok = 0
    for _ in range(pairs):
        A = random_symmetric(rng, dim)
        B = A + perturb * random_symmetric(rng, dim)
        i = int(rng.integers(dim))
        try:
            chk = lemma_bound_check(A, B, i)
        except DegenerateCase:
            continue
        ok += 1
        f_ok += chk.holds_eigfun
        v_ok += chk.holds_eigval
    return LemmaSweep(pairs, ok, f_ok, v_ok)


def summary_json(report: ExperimentReport) -> str:
    return json.dumps(report.summary(), indent=2, sort_keys=True)
