"""Replicated simulate -> estimate experiments and their comparison with the limit laws.

Replication ``r`` of a plan always uses seed ``base_seed XOR r`` and results
are reduced in replication order, so reports do not depend on how many
worker threads ran them.
"""

from __future__ import annotations

import csv
import io
import json
import time
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import matmul_toeplitz

from .asymptotics import AsymptoticCov, Sigma2Estimate, asymptotic_covariance, sigma2_stabilization
from .basis import _NODES, period_integral
from .fgn import check_hurst, fgn_autocovariance, replication_seed, sample_fgn_uniform
from .kernels import y1_increment_autocovariance
from .lse import SingularDesignError, estimate_batch
from .sde import FIRST_KIND, SECOND_KIND, ModelSpec, simulate, simulate_y1_increments

__all__ = [
    "ExperimentError",
    "ExperimentPlan",
    "Verdict",
    "McReport",
    "run_consistency",
    "run_clt",
    "run_noise_distribution_check",
    "clt_tolerance",
    "compare_y1_methods",
]

SCALINGS = ("consistency", "clt_first", "clt_second")
MAX_FAILURE_RATE = 0.01
REL_TOL = 0.25
MAGNITUDE_FILTER = 0.10


class ExperimentError(RuntimeError):
    """Too many replications failed for the experiment to be meaningful."""


@dataclass(frozen=True)
class ExperimentPlan:
    model: ModelSpec
    n_list: tuple
    m: int
    replications: int
    base_seed: int
    scaling: str = "consistency"
    correction: str = "oracle"
    noise: str | None = None
    normality_gate: bool = True
    sigma2_replications: int = 500
    sigma2_seed: int | None = None

    def __post_init__(self):
        if self.scaling not in SCALINGS:
            raise ValueError(f"scaling must be one of {SCALINGS}, got {self.scaling!r}")
        if self.replications < 2:
            raise ValueError("an experiment needs at least 2 replications")
        if self.correction not in ("oracle", "none"):
            raise ValueError("experiments use the 'oracle' or 'none' correction")
        ns = tuple(self.n_list)
        if not ns or any(int(n) != n or n < 1 for n in ns):
            raise ValueError("horizons must be positive whole numbers of periods")
        object.__setattr__(self, "n_list", tuple(int(n) for n in ns))
        if self.scaling == "consistency" and len(ns) < 2:
            raise ValueError("consistency needs at least two horizons")
        if self.scaling != "consistency" and len(ns) != 1:
            raise ValueError("a CLT experiment uses exactly one horizon")
        if self.m < 2:
            raise ValueError("m must be at least 2")

    def as_dict(self) -> dict:
        d = self.model.drift
        return {
            "kind": self.model.kind, "H": d.H, "alpha": d.alpha, "mu": d.mu.tolist(),
            "p": self.model.basis.p, "basis": self.model.basis.kind,
            "n_list": list(self.n_list), "m": self.m, "replications": self.replications,
            "base_seed": self.base_seed, "scaling": self.scaling,
            "correction": self.correction, "noise": self.noise,
        }


@dataclass(frozen=True)
class Verdict:
    name: str
    statistic: float
    threshold: float
    passed: bool
    gating: bool = True
    detail: str = ""

    def as_dict(self) -> dict:
        return {"name": self.name, "statistic": self.statistic, "threshold": self.threshold,
                "passed": self.passed, "gating": self.gating, "detail": self.detail}


@dataclass
class McReport:
    experiment: str
    plan: dict
    columns: list
    rows: list
    summary: dict
    verdicts: list
    theory: AsymptoticCov | None = None
    runtime: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return all(v.passed for v in self.verdicts if v.gating)

    def verdict(self, prefix: str) -> list:
        return [v for v in self.verdicts if v.name.startswith(prefix)]

    def rows_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(self.columns)
        for row in self.rows:
            w.writerow([repr(v) if isinstance(v, float) else v for v in row])
        return buf.getvalue()

    def as_dict(self) -> dict:
        out = {
            "experiment": self.experiment,
            "plan": self.plan,
            "summary": self.summary,
            "verdicts": [v.as_dict() for v in self.verdicts],
            "passed": self.passed,
        }
        if self.theory is not None:
            out["theory"] = self.theory.as_dict()
        return out

    def to_json(self, extra: dict | None = None) -> str:
        d = self.as_dict()
        if extra:
            d.update(extra)
        return json.dumps(d, indent=2, sort_keys=True)

    def verdict_table(self) -> str:
        lines = [f"{'check':<40} {'statistic':>14} {'threshold':>14}  verdict"]
        for v in self.verdicts:
            tag = "PASS" if v.passed else "FAIL"
            if not v.gating:
                tag += " (info)"
            lines.append(f"{v.name:<40} {v.statistic:>14.6g} {v.threshold:>14.6g}  {tag}")
        lines.append(f"overall: {'PASS' if self.passed else 'FAIL'}")
        if self.runtime:
            lines.append("runtime: " + ", ".join(f"{k}={v}" for k, v in self.runtime.items()))
        return "\n".join(lines) + "\n"


def _map(fn, items, threads: int):
    if threads <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items))


def _replicate(plan: ExperimentPlan, n: int, threads: int):
    """theta_hat for every replication at horizon ``n``; NaN rows mark failures."""
    theta = plan.model.drift.theta
    alpha_trace = plan.model.drift.alpha if plan.correction == "oracle" else None

    def one(r):
        seed = replication_seed(plan.base_seed, r)
        try:
            path = simulate(plan.model, n, plan.m, seed, noise=plan.noise)
            return seed, estimate_batch(path, plan.model.basis, alpha_trace), ""
        except (SingularDesignError, np.linalg.LinAlgError) as exc:
            return seed, np.full(theta.size, np.nan), str(exc)

    results = _map(one, range(plan.replications), threads)
    seeds = [s for s, _, _ in results]
    est = np.array([t for _, t, _ in results])
    errors = [e for _, _, e in results if e]
    if len(errors) > MAX_FAILURE_RATE * plan.replications:
        raise ExperimentError(
            f"{len(errors)} of {plan.replications} estimates failed at n = {n}: {errors[0]}")
    return seeds, est, len(errors)


def _theta_columns(plan: ExperimentPlan) -> list:
    return [f"mu{i + 1}_hat" for i in range(plan.model.basis.p)] + ["alpha_hat"]


def run_consistency(plan: ExperimentPlan, threads: int = 1) -> McReport:
    """Median and mean sup-norm error per horizon; PASS iff medians strictly decrease."""
    if plan.scaling != "consistency":
        raise ValueError("run_consistency needs scaling = 'consistency'")
    if len(plan.n_list) < 2:
        raise ValueError("consistency needs at least two horizons")
    start = time.perf_counter()
    theta = plan.model.drift.theta
    rows, per_n = [], []
    for n in plan.n_list:
        seeds, est, failed = _replicate(plan, n, threads)
        err = np.max(np.abs(est - theta), axis=1)
        ok = np.isfinite(err)
        per_n.append({"n": n, "median_error": float(np.median(err[ok])),
                      "mean_error": float(np.mean(err[ok])), "failures": failed,
                      "mean_theta_hat": np.nanmean(est, axis=0).tolist()})
        for r, (s, t, e) in enumerate(zip(seeds, est, err)):
            rows.append([n, r, s, *map(float, t), float(e)])
    medians = [d["median_error"] for d in per_n]
    verdicts = []
    for (n0, a), (n1, b) in zip(zip(plan.n_list, medians), zip(plan.n_list[1:], medians[1:])):
        verdicts.append(Verdict(f"median_decrease_n{n0}_to_n{n1}", b - a, 0.0, bool(b < a),
                                detail="median(n_next) - median(n) must be < 0"))
    return McReport("consistency", plan.as_dict(),
                    ["n", "replication", "seed", *_theta_columns(plan), "sup_error"],
                    rows, {"horizons": per_n}, verdicts,
                    runtime={"seconds": round(time.perf_counter() - start, 2)})


def clt_tolerance(theory: np.ndarray, mc_se: np.ndarray, sens: np.ndarray | None = None,
                  sigma2_se: float | None = None) -> np.ndarray:
    """Entrywise tolerance ``max(25% |theory|, 3 MC SE)``, widened by
    ``3 SE(sigma2) |d theory / d sigma2|`` where sigma2 enters."""
    tol = np.maximum(REL_TOL * np.abs(theory), 3.0 * mc_se)
    if sens is not None and sigma2_se:
        tol = tol + 3.0 * sigma2_se * np.abs(sens)
    return tol


def _cov_se(Z: np.ndarray) -> np.ndarray:
    """Standard error of each sample covariance entry (fourth-moment formula)."""
    C = Z - Z.mean(axis=0)
    R = Z.shape[0]
    cov = C.T @ C / (R - 1)
    prod = C[:, :, None] * C[:, None, :]
    return np.sqrt(np.var(prod, axis=0, ddof=1) / R), cov


def _normality(Z: np.ndarray) -> list:
    R = Z.shape[0]
    C = (Z - Z.mean(axis=0)) / Z.std(axis=0)
    skew = np.mean(C**3, axis=0)
    kurt = np.mean(C**4, axis=0) - 3.0
    band_s = 3.0 * np.sqrt(6.0 / R)
    band_k = 3.0 * np.sqrt(24.0 / R)
    out = []
    for i in range(Z.shape[1]):
        out.append(("skewness", i, float(skew[i]), band_s))
        out.append(("excess_kurtosis", i, float(kurt[i]), band_k))
    return out


def run_clt(plan: ExperimentPlan, threads: int = 1, sigma2: Sigma2Estimate | None = None,
            sigma_form: str = "stated") -> McReport:
    """Covariance of the scaled errors against the limiting covariance.

    Entries whose theoretical magnitude exceeds 10% of the matrix 2-norm are
    compared; the normality diagnostic checks standardized skewness and
    excess kurtosis of every component against 3-SE Gaussian bands.
    """
    kind = plan.model.kind
    expect = "clt_first" if kind == FIRST_KIND else "clt_second"
    if plan.scaling != expect:
        raise ValueError(f"{kind} needs scaling = {expect!r}")
    if len(plan.n_list) != 1:
        raise ValueError("a CLT experiment uses exactly one horizon")
    H = plan.model.H
    if kind == FIRST_KIND and H >= 0.75:
        warnings.warn("H >= 3/4: the first-kind CLT is not covered by the limit theorem")
    start = time.perf_counter()
    n = plan.n_list[0]
    extra = {}
    if kind == SECOND_KIND:
        if sigma2 is None:
            seed = plan.sigma2_seed if plan.sigma2_seed is not None else plan.base_seed ^ (1 << 40)
            stab = sigma2_stabilization(H, plan.model.drift.alpha, plan.sigma2_replications,
                                        n, plan.m, seed)
            extra["sigma2_stabilization"] = stab
            s = stab["at_n"]
            sigma2 = Sigma2Estimate(s["sigma2"], s["sigma2_se"], s["n"], s["m"],
                                    s["replications"], s["seed"])
        theory = asymptotic_covariance(plan.model, sigma2=sigma2)
    else:
        theory = asymptotic_covariance(plan.model, sigma_form=sigma_form)
    rate = n ** (1.0 - H) if kind == FIRST_KIND else np.sqrt(n)
    seeds, est, failed = _replicate(plan, n, threads)
    theta = plan.model.drift.theta
    ok = np.all(np.isfinite(est), axis=1)
    Z = rate * (est[ok] - theta)
    se, cov = _cov_se(Z)
    T = theory.product
    norm = np.linalg.norm(T, 2)
    sens = theory.sigma2_sensitivity() if kind == SECOND_KIND else None
    tol = clt_tolerance(T, se, sens, theory.sigma2_se)
    names = _theta_columns(plan)
    verdicts = []
    for i in range(T.shape[0]):
        for j in range(i, T.shape[0]):
            if abs(T[i, j]) <= MAGNITUDE_FILTER * norm:
                continue
            dev = abs(cov[i, j] - T[i, j])
            verdicts.append(Verdict(
                f"cov[{names[i]},{names[j]}]", float(dev), float(tol[i, j]), bool(dev <= tol[i, j]),
                detail=f"empirical {cov[i, j]:.6g} vs theory {T[i, j]:.6g}, "
                       f"relative {dev / abs(T[i, j]):.3g}"))
    if "sigma2_stabilization" in extra:
        st = extra["sigma2_stabilization"]
        verdicts.append(Verdict("sigma2_stabilization", st["gap"], st["threshold"], st["passed"]))
    for label, i, stat, band in _normality(Z):
        verdicts.append(Verdict(f"{label}[{names[i]}]", abs(stat), band, bool(abs(stat) <= band),
                                gating=plan.normality_gate, detail=f"value {stat:.4g}"))
    rows = [[n, r, s, *map(float, t), *map(float, rate * (t - theta))]
            for r, (s, t) in enumerate(zip(seeds, est))]
    rel = np.where(np.abs(T) > 0, np.abs(cov - T) / np.where(T == 0, 1.0, np.abs(T)), np.nan)
    summary = {
        "n": n, "rate": float(rate), "failures": failed,
        "mean_scaled_error": Z.mean(axis=0).tolist(),
        "empirical_cov": cov.tolist(), "cov_se": se.tolist(),
        "theory_cov": T.tolist(), "tolerance": tol.tolist(),
        "relative_deviation": [[None if np.isnan(v) else float(v) for v in r] for r in rel],
        "magnitude_filter": MAGNITUDE_FILTER, "relative_tolerance": REL_TOL,
        **extra,
    }
    return McReport(f"clt_{kind}", plan.as_dict(),
                    ["n", "replication", "seed", *names, *[f"scaled_{c}" for c in names]],
                    rows, summary, verdicts, theory,
                    runtime={"seconds": round(time.perf_counter() - start, 2)})


def run_noise_distribution_check(H: float, f_list, n: int, replications: int, seed: int,
                                 m: int = 20, threads: int = 1) -> McReport:
    """Covariance of ``n^{-H} int_0^n f_k dB^H`` against ``(int f_k)(int f_l)``.

    ``f_list`` holds 1-periodic vectorised callables.  The exact finite-n
    covariance is reported alongside for reference; the verdict compares
    with the limit, entrywise within 3 standard errors.
    """
    H = check_hurst(H)
    if replications < 2:
        raise ValueError("need at least 2 replications")
    start = time.perf_counter()
    count = n * m
    t = np.arange(count) / m
    F = np.stack([np.asarray(f(t), dtype=float) * np.ones(count) for f in f_list])
    means = np.array([float(period_integral(np.asarray(f(_NODES), float) * np.ones(_NODES.size)))
                      for f in f_list])
    limit = np.outer(means, means)

    def one(r):
        s = replication_seed(seed, r)
        dB = sample_fgn_uniform(H, count, 1.0 / m, s).values
        return s, F @ dB / n**H

    res = _map(one, range(replications), threads)
    Y = np.array([y for _, y in res])
    se, cov = _cov_se(Y)
    acov = fgn_autocovariance(H, np.arange(count), 1.0 / m)
    exact = F @ matmul_toeplitz(acov, F.T) / n ** (2 * H)
    k = len(f_list)
    verdicts = []
    for i in range(k):
        for j in range(i, k):
            dev = abs(cov[i, j] - limit[i, j])
            verdicts.append(Verdict(
                f"cov[f{i + 1},f{j + 1}]", float(dev), float(3.0 * se[i, j]),
                bool(dev <= 3.0 * se[i, j]),
                detail=f"empirical {cov[i, j]:.6g}, limit {limit[i, j]:.6g}, "
                       f"exact at n {exact[i, j]:.6g}"))
    rows = [[r, s, *map(float, y)] for r, (s, y) in enumerate(res)]
    summary = {"H": H, "n": n, "m": m, "empirical_cov": cov.tolist(), "cov_se": se.tolist(),
               "limit_cov": limit.tolist(), "exact_cov_at_n": exact.tolist()}
    plan = {"H": H, "n": n, "m": m, "replications": replications, "base_seed": seed,
            "functions": len(f_list)}
    return McReport("noise_distribution", plan,
                    ["replication", "seed", *[f"f{i + 1}" for i in range(k)]],
                    rows, summary, verdicts,
                    runtime={"seconds": round(time.perf_counter() - start, 2)})


def compare_y1_methods(H: float, n: int, m: int, replications: int, seed: int) -> McReport:
    """Increment variance of the time-changed noise under both samplers.

    Each method draws ``replications`` independent paths; the statistic is
    the mean squared increment, with its standard error taken across
    replications.  PASS when the two agree within 3 joint standard errors.
    """
    start = time.perf_counter()
    stats = {}
    rows = []
    for offset, method in enumerate(("stationary_cov", "time_change")):
        vals = simulate_y1_increments(H, n, m, seed ^ offset, method, size=replications).values
        per_rep = np.mean(vals**2, axis=1)
        stats[method] = (float(per_rep.mean()), float(per_rep.std(ddof=1) / np.sqrt(replications)))
        rows += [[method, r, float(v)] for r, v in enumerate(per_rep)]
    (a, sa), (b, sb) = stats["stationary_cov"], stats["time_change"]
    joint = float(np.hypot(sa, sb))
    exact = float(y1_increment_autocovariance(H, [0], 1.0 / m)[0])
    verdicts = [
        Verdict("variance_time_change_vs_stationary", abs(a - b), 3.0 * joint,
                bool(abs(a - b) <= 3.0 * joint),
                detail=f"stationary_cov {a:.6g} +- {sa:.2g}, time_change {b:.6g} +- {sb:.2g}"),
        Verdict("variance_stationary_vs_exact", abs(a - exact), 3.0 * sa,
                bool(abs(a - exact) <= 3.0 * sa), gating=False, detail=f"exact {exact:.6g}"),
    ]
    summary = {"H": H, "n": n, "m": m, "exact_variance": exact,
               "methods": {k: {"mean_square": v[0], "se": v[1]} for k, v in stats.items()}}
    plan = {"H": H, "n": n, "m": m, "replications": replications, "base_seed": seed}
    return McReport("y1_methods", plan, ["method", "replication", "mean_square"], rows,
                    summary, verdicts, runtime={"seconds": round(time.perf_counter() - start, 2)})
