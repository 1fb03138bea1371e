"""Split-sample DR-ME test: nuisances on one split, locations on a second,
the Hotelling statistic on the third."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field

import numpy as np

from .data import Dataset, InputError
from .drscore import FeatureMap, TestResult, hotelling_test, SCORE_KINDS
from .kernels import GaussianKernel, default_dim_normalized, median_heuristic
from .locations import (Dictionary, LocationSet, OBJECTIVES, Selection,
                        gradient_ascent_optimize, greedy_dictionary_select,
                        make_dictionary, random_select)
from .nuisance import CLIP, OUTCOME_RIDGE, PROPENSITY_RIDGE, fit_outcome_regression, fit_propensity
from .seeding import derive_rng, derive_seed

SELECTIONS = ("greedy", "exhaustive", "gradient", "random")


@dataclass(frozen=True)
class SplitIndices:
    I_eta: np.ndarray
    I_tr: np.ndarray
    I_te: np.ndarray

    def __post_init__(self):
        parts = [np.asarray(p) for p in (self.I_eta, self.I_tr, self.I_te)]
        if any(p.size == 0 for p in parts):
            raise ValueError("every split must be nonempty")
        allidx = np.concatenate(parts)
        if np.unique(allidx).size != allidx.size:
            raise ValueError("splits must be disjoint")

    @property
    def sizes(self) -> tuple[int, int, int]:
        return (len(self.I_eta), len(self.I_tr), len(self.I_te))


@dataclass
class TestConfig:
    J: int = 2
    M: int = 80
    tau: float | None = None
    gamma: float | None = None
    lengthscale: float | None = None
    covariate_lengthscale: float | None = None
    dim_normalized: bool | None = None
    propensity_ridge: float = PROPENSITY_RIDGE
    clip: tuple = CLIP
    outcome_ridge: tuple = (OUTCOME_RIDGE, OUTCOME_RIDGE)
    fractions: tuple = (0.4, 0.3, 0.3)
    selection: str = "greedy"
    objective: str = "whitened"
    score_kind: str = "dr"
    gradient_steps: int = 3
    step_size: float | None = None
    fold_train: bool = True
    alpha: float = 0.05
    max_resplits: int = 10
    seed: int = 0

    __test__ = False

    def __post_init__(self):
        f = tuple(float(x) for x in self.fractions)
        if len(f) != 3 or any(x <= 0 for x in f) or abs(sum(f) - 1.0) > 1e-9:
            raise InputError("split fractions must be three positive numbers summing to 1")
        self.fractions = f
        self.clip = tuple(self.clip)
        self.outcome_ridge = tuple(self.outcome_ridge)
        if self.selection not in SELECTIONS:
            raise InputError(f"selection must be one of {SELECTIONS}")
        if self.objective not in OBJECTIVES:
            raise InputError(f"objective must be one of {OBJECTIVES}")
        if self.score_kind not in SCORE_KINDS:
            raise InputError(f"score kind must be one of {SCORE_KINDS}")
        if self.J < 1:
            raise InputError("J must be at least 1")
        if self.M < 1:
            raise InputError("M must be at least 1")
        if len(self.clip) != 2 or not 0.0 < self.clip[0] < self.clip[1] < 1.0:
            raise InputError("clip bounds must satisfy 0 < lo < hi < 1")
        if len(self.outcome_ridge) != 2 or not all(r > 0 for r in self.outcome_ridge):
            raise InputError("outcome ridges must be two positive numbers")
        if not self.propensity_ridge >= 0:
            raise InputError("propensity ridge must be nonnegative")
        for name in ("tau", "gamma", "lengthscale", "covariate_lengthscale", "step_size"):
            val = getattr(self, name)
            if val is not None and not val > 0:
                raise InputError(f"{name} must be positive when given")
        if not 0.0 < self.alpha < 1.0:
            raise InputError("alpha must lie in (0, 1)")
        if self.gradient_steps < 0 or self.max_resplits < 1:
            raise InputError("gradient_steps must be >= 0 and max_resplits >= 1")
        if self.selection != "gradient" and self.J > self.M:
            raise InputError("J must not exceed the dictionary size M")

    def replace(self, **changes) -> "TestConfig":
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


def three_way_split(n: int, fractions, rng) -> SplitIndices:
    """Uniformly random partition with floor sizes; the remainder goes to the test split."""
    if n < 6:
        raise InputError("need at least 6 units to split three ways")
    f_eta, f_tr, _ = fractions
    n_eta, n_tr = int(np.floor(f_eta * n)), int(np.floor(f_tr * n))
    perm = rng.permutation(n)
    return SplitIndices(np.sort(perm[:n_eta]), np.sort(perm[n_eta:n_eta + n_tr]),
                        np.sort(perm[n_eta + n_tr:]))


def _arms_ok(A, split: SplitIndices) -> bool:
    for part, need in ((split.I_eta, 2), (split.I_tr, 1), (split.I_te, 1)):
        counts = np.bincount(A[part], minlength=2)
        if counts.min() < need:
            return False
    return True


def split_with_arms(data: Dataset, config: TestConfig) -> SplitIndices:
    """Three-way split, redrawn with derived seeds until every part has both arms."""
    for attempt in range(config.max_resplits):
        split = three_way_split(data.n, config.fractions, derive_rng(config.seed, "split", attempt))
        if _arms_ok(data.A, split):
            return split
    raise InputError(f"no split with both treatment arms in every part after "
                     f"{config.max_resplits} attempts")


@dataclass
class Nuisances:
    propensity: object
    regression: object | None


def fit_nuisances(data: Dataset, config: TestConfig) -> Nuisances:
    prop = fit_propensity(data.X, data.A, ridge=config.propensity_ridge, clip=config.clip)
    reg = None
    if config.score_kind in ("dr", "dm"):
        ck = None
        if config.covariate_lengthscale is not None:
            ck = GaussianKernel(config.covariate_lengthscale)
        else:
            ck = GaussianKernel(median_heuristic(data.X, seed=derive_seed(config.seed, "xbw")))
        reg = fit_outcome_regression(data.X, data.A, data.Y, ck, *config.outcome_ridge)
    return Nuisances(prop, reg)


def outcome_kernel(Y, config: TestConfig) -> GaussianKernel:
    dim_norm = config.dim_normalized
    if dim_norm is None:
        dim_norm = default_dim_normalized(Y.shape[1])
    ls = config.lengthscale
    if ls is None:
        ls = median_heuristic(Y, seed=derive_seed(config.seed, "ybw"))
        if dim_norm:
            ls /= np.sqrt(Y.shape[1])
    return GaussianKernel(ls, dim_norm)


@dataclass
class LearningContext:
    """State shared by every location rule on one dataset and split."""

    data: Dataset
    config: TestConfig
    split: SplitIndices
    nuisances: Nuisances
    kernel: GaussianKernel
    dictionary: Dictionary
    _fmaps: dict = field(default_factory=dict, repr=False)
    _bound: dict = field(default_factory=dict, repr=False)

    def fmap(self, part: str, kind: str | None = None) -> FeatureMap:
        kind = kind or self.config.score_kind
        key = (part, kind)
        if key not in self._fmaps:
            if part == "pooled":
                idx = np.concatenate([self.split.I_tr, self.split.I_te])
            else:
                idx = getattr(self.split, part)
            d = self.data.subset(idx)
            bound = None
            if kind in ("dr", "dm"):
                if part not in self._bound:
                    self._bound[part] = self.nuisances.regression.at(d.X)
                bound = self._bound[part]
            self._fmaps[key] = FeatureMap(d.X, d.A, d.Y, self.nuisances.propensity,
                                          self.nuisances.regression, self.kernel, kind,
                                          bound=bound)
        return self._fmaps[key]


def prepare(data: Dataset, config: TestConfig, nuisance_kinds=None) -> LearningContext:
    """Split, fit nuisances on I_eta, choose the kernel and draw the dictionary.

    Only rows in I_eta and I_tr are read.
    """
    split = split_with_arms(data, config)
    d_eta = data.subset(split.I_eta)
    needs_reg = config.score_kind in ("dr", "dm") or (
        nuisance_kinds is not None and any(k in ("dr", "dm") for k in nuisance_kinds))
    nuis = fit_nuisances(d_eta, config.replace(score_kind="dr" if needs_reg else "ipw"))
    pooled = np.concatenate([split.I_eta, split.I_tr])
    kernel = outcome_kernel(data.Y[pooled], config)
    dictionary = make_dictionary(data.Y[split.I_tr], config.M,
                                 derive_rng(config.seed, "dictionary"))
    return LearningContext(data, config, split, nuis, kernel, dictionary)


def select_locations(ctx: LearningContext, fmap: FeatureMap, config: TestConfig) -> Selection:
    if config.selection == "random":
        loc = random_select(ctx.dictionary, config.J, derive_rng(config.seed, "random"))
        return Selection(loc, config.tau if config.tau is not None else float("nan"))
    sel = greedy_dictionary_select(ctx.dictionary, config.J, fmap, tau=config.tau,
                                   objective=config.objective,
                                   exhaustive=config.selection == "exhaustive")
    if config.selection == "gradient":
        step = config.step_size if config.step_size is not None else 0.1 * ctx.kernel.lengthscale
        sel = gradient_ascent_optimize(sel.locations, fmap, sel.tau, config.gradient_steps,
                                       step, objective=config.objective)
    return sel


def _result(Z, rows, selection: Selection, config: TestConfig, kernel, **extra) -> TestResult:
    stat, df, p, mean, cov, gamma = hotelling_test(Z, config.gamma)
    loc = selection.locations
    return TestResult(statistic=stat, df=df, p_value=p, locations=loc.points,
                      n_test=Z.shape[0], gamma=gamma, mean=mean, covariance=cov,
                      score_kind=config.score_kind, test_indices=np.asarray(rows),
                      tau=selection.tau, lengthscale=kernel.lengthscale,
                      location_indices=loc.indices, extra=extra)


def learn_locations(data: Dataset, config: TestConfig) -> tuple[LearningContext, Selection]:
    """Steps of the test that must never see I_te rows."""
    ctx = prepare(data, config)
    return ctx, select_locations(ctx, ctx.fmap("I_tr"), config)


def run_drme_test(data: Dataset, config: TestConfig | None = None,
                  ctx: LearningContext | None = None) -> TestResult:
    """Split-sample DR-ME test with learned locations.

    A prepared ``ctx`` can be shared across several configurations that
    differ only in the location rule or score kind.
    """
    config = config or TestConfig()
    if ctx is None:
        ctx = prepare(data, config)
    sel = select_locations(ctx, ctx.fmap("I_tr", config.score_kind), config)
    Z = ctx.fmap("I_te", config.score_kind).values(sel.locations.points)
    return _result(Z, ctx.split.I_te, sel, config, ctx.kernel,
                   split_sizes=list(ctx.split.sizes),
                   selection_trace=[float(v) for v in sel.trace])


def run_nosplit_test(data: Dataset, config: TestConfig | None = None,
                     ctx: LearningContext | None = None,
                     dictionary: Dictionary | None = None) -> TestResult:
    """Learn and test on the same pooled I_tr and I_te rows. Not a valid test."""
    config = config or TestConfig()
    if ctx is None:
        ctx = prepare(data, config)
    if dictionary is not None:
        ctx = dataclasses.replace(ctx, dictionary=dictionary, _fmaps=ctx._fmaps,
                                  _bound=ctx._bound)
    fmap = ctx.fmap("pooled", config.score_kind)
    sel = select_locations(ctx, fmap, config)
    rows = np.concatenate([ctx.split.I_tr, ctx.split.I_te])
    res = _result(fmap.values(sel.locations.points), rows, sel, config, ctx.kernel,
                  split_sizes=list(ctx.split.sizes))
    res.diagnostic_only = True
    return res


def run_fixed_location_test(data: Dataset, V, config: TestConfig | None = None,
                            nuisances: Nuisances | None = None,
                            kernel: GaussianKernel | None = None) -> TestResult:
    """Test at prespecified locations.

    With externally supplied (e.g. oracle) ``nuisances`` nothing is fitted
    and every row enters the statistic. Otherwise nuisances are fitted on
    I_eta, merged with I_tr when ``config.fold_train`` is set.
    """
    config = config or TestConfig()
    loc = V if isinstance(V, LocationSet) else LocationSet(V, "fixed")
    if nuisances is not None:
        if kernel is None:
            raise ValueError("supply the outcome kernel together with external nuisances")
        fmap = FeatureMap(data.X, data.A, data.Y, nuisances.propensity,
                          nuisances.regression, kernel, config.score_kind)
        rows = np.arange(data.n)
        return _result(fmap.values(loc.points), rows, Selection(loc, float("nan")),
                       config, kernel)
    split = split_with_arms(data, config)
    eta = np.concatenate([split.I_eta, split.I_tr]) if config.fold_train else split.I_eta
    nuis = fit_nuisances(data.subset(eta), config)
    if kernel is None:
        kernel = outcome_kernel(data.Y[np.concatenate([split.I_eta, split.I_tr])], config)
    d_te = data.subset(split.I_te)
    fmap = FeatureMap(d_te.X, d_te.A, d_te.Y, nuis.propensity, nuis.regression, kernel,
                      config.score_kind)
    return _result(fmap.values(loc.points), split.I_te, Selection(loc, float("nan")),
                   config, kernel, split_sizes=list(split.sizes))
