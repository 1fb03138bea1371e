"""Monte Carlo harness: rejection rates per method, sample size and shift.

Every replication draws its data from a seed derived from
``(base_seed, experiment, d_y, n, h, rep)``. The method name is not part
of the key, so all methods in one replication see the same data, split,
nuisance fit and dictionary. Replications are independent tasks, and the
report is assembled from per-replication outcomes sorted by index. Results
therefore do not depend on the number of worker processes.
"""

from __future__ import annotations

import csv
import io
import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from .chi2 import chi2_cdf, chi2_isf
from .dgp import (TWO_BUMP_LENGTHSCALE, LocalPathSpec, gen_scenario, known_propensity,
                  pilot_localize, theory_curve)
from .pipeline import (Nuisances, TestConfig, prepare, run_drme_test,
                       run_fixed_location_test, run_nosplit_test)
from .seeding import derive_rng, derive_seed

REPORT_SCHEMA_VERSION = 1

# method name -> changes to the base configuration
METHOD_CONFIGS = {
    "drme": {},
    "drme_rand": {"selection": "random"},
    "drme_grad": {"selection": "gradient"},
    "raw_witness": {"objective": "raw_witness"},
    "ipw": {"score_kind": "ipw"},
    "dm": {"score_kind": "dm"},
    "naive": {"score_kind": "naive"},
    "nosplit": {},
}
METHODS = tuple(METHOD_CONFIGS) + ("oracle_fixed",)


@dataclass(frozen=True)
class ExperimentSpec:
    scenario: str
    methods: tuple
    n_grid: tuple
    config: dict = field(default_factory=dict)
    vector: bool = False


_SCALAR_METHODS = ("drme", "drme_rand", "ipw", "dm", "naive", "nosplit")
_ABLATION_METHODS = ("drme", "raw_witness", "drme_rand")
_ABLATION_CONFIG = {"M": 300, "J": 3, "lengthscale": TWO_BUMP_LENGTHSCALE}

EXPERIMENTS = {
    "sharp_null": ExperimentSpec("sharp_null", _SCALAR_METHODS, (300, 600, 1200, 3000)),
    "mean_shift": ExperimentSpec("mean_shift", _SCALAR_METHODS, (300, 600, 1200, 3000)),
    "variance_shift": ExperimentSpec("variance_shift", _SCALAR_METHODS, (300, 600, 1200, 3000)),
    "localized_bump": ExperimentSpec("localized_bump", _SCALAR_METHODS, (300, 600, 1200, 3000)),
    "two_bump": ExperimentSpec("two_bump", _ABLATION_METHODS, (3000,), _ABLATION_CONFIG, True),
    "two_bump_null": ExperimentSpec("two_bump_null", _ABLATION_METHODS, (3000,),
                                    _ABLATION_CONFIG, True),
}


class ReplicationError(RuntimeError):
    """A replication failed; the message carries the seed needed to rerun it."""


@dataclass
class ExperimentReport:
    experiment: str
    seed: int
    reps: int
    alpha: float
    rows: list
    meta: dict = field(default_factory=dict)
    samples: dict = field(default_factory=dict)

    COLUMNS = ("method", "n", "h", "d_y", "reps", "rejections", "rate", "se",
               "mean_statistic", "theory")

    def rate(self, method: str, n: int | None = None, h: float | None = None) -> float:
        return self.row(method, n, h)["rate"]

    def row(self, method: str, n: int | None = None, h: float | None = None) -> dict:
        hits = [r for r in self.rows if r["method"] == method
                and (n is None or r["n"] == n) and (h is None or r["h"] == h)]
        if len(hits) != 1:
            raise KeyError(f"expected one row for {method!r}, n={n}, h={h}; found {len(hits)}")
        return hits[0]

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.DictWriter(buf, fieldnames=self.COLUMNS, lineterminator="\n",
                           extrasaction="ignore")
        w.writeheader()
        for r in self.rows:
            w.writerow({k: ("" if r.get(k) is None else r.get(k)) for k in self.COLUMNS})
        return buf.getvalue()

    def to_dict(self) -> dict:
        return {"schema_version": REPORT_SCHEMA_VERSION, "experiment": self.experiment,
                "seed": self.seed, "reps": self.reps, "alpha": self.alpha,
                "rows": self.rows, "meta": self.meta}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    def plot_data(self) -> str:
        """Long-format CSV of rejection rate against n (or h) per method."""
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["method", "x_name", "x", "rate", "lower", "upper"])
        x_name = "h" if any(r["h"] for r in self.rows) else "n"
        for r in self.rows:
            x = r[x_name]
            w.writerow([r["method"], x_name, x, r["rate"], max(0.0, r["rate"] - 2 * r["se"]),
                        min(1.0, r["rate"] + 2 * r["se"])])
        return buf.getvalue()


def _summary_row(method, n, h, d_y, stats_, rejects, theory=None) -> dict:
    reps = len(rejects)
    k = int(sum(rejects))
    r = k / reps
    return {"method": method, "n": int(n), "h": float(h), "d_y": d_y, "reps": reps,
            "rejections": k, "rate": r, "se": math.sqrt(r * (1.0 - r) / reps),
            "mean_statistic": float(np.mean(stats_)),
            "theory": None if theory is None else float(theory)}


def _data_seed(base_seed, experiment, d_y, n, h, rep):
    return derive_seed(base_seed, experiment, d_y or 0, n, float(h), rep)


def _replicate(task):
    """One replication of a scalar or vector experiment: all methods on one dataset."""
    experiment, scenario, d_y, n, rep, base_seed, methods, config, alpha = task
    seed = _data_seed(base_seed, experiment, d_y, n, 0.0, rep)
    try:
        kw = {"d_y": d_y} if d_y else {}
        sim = gen_scenario(scenario, n, np.random.default_rng(seed), **kw)
        base = TestConfig(**config).replace(seed=derive_seed(seed, "config"), alpha=alpha)
        kinds = {METHOD_CONFIGS[m].get("score_kind", base.score_kind) for m in methods}
        ctx = prepare(sim.data, base, nuisance_kinds=kinds)
        out = {}
        for m in methods:
            cfg = base.replace(**METHOD_CONFIGS[m])
            if m == "nosplit":
                res = run_nosplit_test(sim.data, cfg, ctx)
            else:
                res = run_drme_test(sim.data, cfg, ctx)
            out[m] = (res.statistic, res.p_value, bool(res.reject(alpha)))
        return rep, out
    except Exception as exc:  # noqa: BLE001 - reraised with the seed attached
        raise ReplicationError(f"{experiment} n={n} rep={rep} failed (data seed {seed}): "
                               f"{type(exc).__name__}: {exc}") from exc


def _run_tasks(func, tasks, workers: int):
    if workers <= 1 or len(tasks) <= 1:
        return [func(t) for t in tasks]
    chunk = max(1, len(tasks) // (4 * workers))
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(func, tasks, chunksize=chunk))


def monte_carlo(experiment: str, methods=None, n_grid=None, reps: int = 200,
                alpha: float = 0.05, base_seed: int = 0, d_y: int = 5,
                config: dict | None = None, workers: int = 1) -> ExperimentReport:
    """Rejection rates of each method on a named scenario.

    ``config`` overrides fields of the experiment's base test configuration
    and is applied before the per-method changes.
    """
    if experiment not in EXPERIMENTS:
        raise ValueError(f"unknown experiment {experiment!r}; choose from "
                         f"{', '.join(sorted(EXPERIMENTS))}")
    if reps < 1:
        raise ValueError("reps must be at least 1")
    spec = EXPERIMENTS[experiment]
    methods = tuple(methods) if methods else spec.methods
    unknown = [m for m in methods if m not in METHOD_CONFIGS]
    if unknown:
        raise ValueError(f"unknown or unsupported methods for {experiment}: {unknown}")
    n_grid = tuple(int(n) for n in (n_grid or spec.n_grid))
    dy = d_y if spec.vector else None
    cfg = {**spec.config, **(config or {})}
    TestConfig(**cfg)  # validate once, before any work is scheduled
    rows = []
    for n in n_grid:
        tasks = [(experiment, spec.scenario, dy, n, r, base_seed, methods, cfg, alpha)
                 for r in range(reps)]
        results = sorted(_run_tasks(_replicate, tasks, workers), key=lambda t: t[0])
        for m in methods:
            st = [res[m][0] for _, res in results]
            rj = [res[m][2] for _, res in results]
            rows.append(_summary_row(m, n, 0.0, dy, st, rj))
    return ExperimentReport(experiment, base_seed, reps, alpha, rows,
                            meta={"methods": list(methods), "n_grid": list(n_grid),
                                  "config": cfg, "d_y": dy})


def _oracle_replicate(task):
    spec, n, h, rep, base_seed = task
    seed = _data_seed(base_seed, "local_path", None, n, h, rep)
    try:
        sim = gen_scenario("local_path", n, np.random.default_rng(seed), h=h)
        nuis = Nuisances(known_propensity(), spec.oracle(n, h))
        V = np.asarray(spec.locations, dtype=float)[:, None]
        res = run_fixed_location_test(sim.data, V, TestConfig(J=spec.J), nuisances=nuis,
                                      kernel=spec.kernel())
        return rep, res.statistic
    except Exception as exc:  # noqa: BLE001
        raise ReplicationError(f"local_path n={n} h={h} rep={rep} failed (data seed {seed}): "
                               f"{type(exc).__name__}: {exc}") from exc


def qq_points(sample, df: int, nc: float, probs=None) -> list:
    """Pairs (theoretical quantile, empirical quantile) for a chi-square law."""
    from .chi2 import noncentral_chi2_cdf

    probs = np.linspace(0.01, 0.99, 99) if probs is None else np.asarray(probs)
    emp = np.quantile(np.asarray(sample, dtype=float), probs)
    out = []
    for p, e in zip(probs, emp):
        lo, hi = 0.0, 10.0 + 10.0 * (df + nc)
        for _ in range(200):
            mid = 0.5 * (lo + hi)
            if noncentral_chi2_cdf(mid, df, nc) < p:
                lo = mid
            else:
                hi = mid
        out.append([float(0.5 * (lo + hi)), float(e)])
    return out


def validate_theory(reps: int = 2000, n_grid=(3000,), h_grid=(0, 1, 2, 3, 4, 6, 8),
                    alpha: float = 0.05, base_seed: int = 0, n_pilot: int = 100_000,
                    M: int = 100, J: int = 2, spec: LocalPathSpec | None = None,
                    workers: int = 1) -> ExperimentReport:
    """Fixed-location oracle test along the local path, compared with theory.

    Unless ``spec`` is given, locations, lengthscale and noncentrality come
    from a fresh null pilot sample and are then frozen for every n and h.
    Each row carries the asymptotic rejection probability in ``theory``.
    """
    if reps < 1:
        raise ValueError("reps must be at least 1")
    meta = {}
    if spec is None:
        pilot = pilot_localize(n_pilot, M, J, derive_rng(base_seed, "pilot"))
        spec = pilot.spec
        meta["pilot"] = {"n_pilot": n_pilot, "M": M, "tau": pilot.tau,
                         "criterion": pilot.criterion}
    meta["spec"] = {"locations": list(spec.locations), "lengthscale": spec.lengthscale,
                    "noncentrality": spec.noncentrality, "sigma": spec.sigma}
    h_grid = tuple(float(h) for h in h_grid)
    theory = dict(zip(h_grid, theory_curve(spec, h_grid, alpha)))
    crit = chi2_isf(alpha, spec.J)
    rows, samples, moments, qq = [], {}, [], {}
    for n in n_grid:
        for h in h_grid:
            tasks = [(spec, int(n), h, r, base_seed) for r in range(reps)]
            results = sorted(_run_tasks(_oracle_replicate, tasks, workers), key=lambda t: t[0])
            st = np.array([s for _, s in results])
            rows.append(_summary_row("oracle_fixed", n, h, None, st, st > crit, theory[h]))
            samples[(int(n), h)] = st
            target = spec.J + h * h * spec.noncentrality
            se = float(np.std(st, ddof=1) / math.sqrt(reps)) if reps > 1 else float("nan")
            moments.append({"n": int(n), "h": h, "mean": float(st.mean()), "se": se,
                            "target": target})
            qq[f"{int(n)}:{h:g}"] = qq_points(st, spec.J, h * h * spec.noncentrality)
    meta["moments"] = moments
    meta["qq"] = qq
    ks = {}
    for (n, h), st in samples.items():
        if h == 0.0:
            # KS distance to the central law, through the probability integral transform
            u = [chi2_cdf(v, spec.J) for v in st]
            ks[str(n)] = float(stats.kstest(u, "uniform").statistic)
    meta["ks_null"] = ks
    return ExperimentReport("local_path", base_seed, reps, alpha, rows, meta, samples)
