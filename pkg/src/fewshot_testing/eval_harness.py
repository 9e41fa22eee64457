"""Trial-based comparison of scenario-testing methods on the subject models.

Every method estimates each subject's true exposure-weighted crash rate
from ``n`` scenario outcomes per trial:

- ``NDE``: naturalistic exposure sampling; draw ``n`` cells iid from the
  exposure distribution (inverse CDF) and average the outcomes.
- ``uniform``: randomized quasi-Monte Carlo over the grid; a randomly
  shifted Halton set (bases 2 and 3) picks cells with equal measure, and
  outcomes are importance-corrected by cell exposure.
- ``FST-with-restarts``: optimize a fresh few-shot plan per trial (the
  trial seed randomizes only the restart initializations) and execute it
  on the subject.

Methods are looked up in a registry so external code can add entries.
Trial streams derive from the master seed and a per-trial label, so
results are independent of trial execution order.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from math import ceil, comb

import numpy as np

from .errors import ConfigError, NumericalError
from .fst_optimizer import OptimizeConfig, execute_plan, optimize
from .fst_trainer import TrainConfig, train
from .scenario_space import ScenarioGrid
from .seeding import child_seed, make_rng
from .similarity_net import NetConfig, NetParams

__all__ = [
    "TrialStats",
    "EvalContext",
    "register_method",
    "method_names",
    "run_trials",
    "compare_methods",
    "nde_exact_avg_error",
    "bound_experiment",
    "ablation_experiment",
    "cross_n_experiment",
    "halton_points",
    "uniform_cells",
]


@dataclass(frozen=True)
class TrialStats:
    """Error statistics of one (method, subject, n) trial batch.

    ``variance`` is the population variance of the estimates around their
    own mean (not around the true rate). ``q99_abs_error`` is the
    ``ceil(0.99 * trials)``-th smallest absolute error. Relative values
    divide by the subject's true rate.
    """

    trials: int
    true_rate: float
    avg_abs_error: float
    rel_avg_abs_error: float
    variance: float
    q99_abs_error: float
    rel_q99_abs_error: float

    @classmethod
    def from_estimates(cls, estimates: np.ndarray, true_rate: float) -> "TrialStats":
        estimates = np.asarray(estimates, dtype=float)
        if estimates.ndim != 1 or estimates.size < 1:
            raise ConfigError("need a 1-D batch of at least one estimate")
        if not np.isfinite(estimates).all():
            raise NumericalError("non-finite estimate in trial batch")
        if true_rate <= 0.0:
            raise NumericalError(
                f"true rate {true_rate!r} is not positive; relative errors undefined"
            )
        errors = np.sort(np.abs(estimates - true_rate))
        avg = float(errors.mean())
        q99 = float(errors[ceil(0.99 * errors.size) - 1])
        return cls(
            trials=estimates.size,
            true_rate=float(true_rate),
            avg_abs_error=avg,
            rel_avg_abs_error=avg / true_rate,
            variance=float(estimates.var()),
            q99_abs_error=q99,
            rel_q99_abs_error=q99 / true_rate,
        )


@dataclass
class EvalContext:
    """Everything the registered methods need, precomputed once."""

    grid: ScenarioGrid
    subject_names: list[str]
    subject_outcomes: np.ndarray  # (m, N)
    subject_rates: np.ndarray  # (m,)
    vertex_outcomes: np.ndarray  # (s, N)
    vertex_rates: np.ndarray  # (s,)
    params: NetParams
    assignments: np.ndarray
    fst_steps: int = 300
    fst_restarts: int = 4
    fst_learning_rate: float = 0.02
    fst_mismatch_weight: float = 1.0

    def __post_init__(self) -> None:
        self.subject_outcomes = np.atleast_2d(np.asarray(self.subject_outcomes, dtype=float))
        self.subject_rates = np.asarray(self.subject_rates, dtype=float)
        if self.subject_outcomes.shape[0] != len(self.subject_names):
            raise ConfigError("subject outcomes and names disagree")
        if self.subject_outcomes.shape[1] != self.grid.size:
            raise ConfigError("subject outcomes do not match the grid")
        self.exposure_cdf = np.cumsum(self.grid.exposure)

    def optimize_config(self, n: int, mismatch_weight: float | None = None,
                        restarts: int | None = None,
                        steps: int | None = None) -> OptimizeConfig:
        return OptimizeConfig(
            n=n,
            steps=self.fst_steps if steps is None else steps,
            learning_rate=self.fst_learning_rate,
            restarts=self.fst_restarts if restarts is None else restarts,
            mismatch_weight=(
                self.fst_mismatch_weight if mismatch_weight is None else mismatch_weight
            ),
        )


def _radical_inverse(i: int, base: int) -> float:
    f, r = 1.0, 0.0
    while i > 0:
        f /= base
        r += f * (i % base)
        i //= base
    return r


def halton_points(n: int, bases: tuple[int, int] = (2, 3)) -> np.ndarray:
    """First ``n`` Halton points (indices 1..n) in the unit square."""
    return np.array(
        [[_radical_inverse(i, bases[0]), _radical_inverse(i, bases[1])]
         for i in range(1, n + 1)]
    )


def _nde_trial(ctx: EvalContext, n: int, seed: int) -> np.ndarray:
    rng = np.random.default_rng(seed)
    cells = np.searchsorted(ctx.exposure_cdf, rng.random(n), side="right")
    cells = np.minimum(cells, ctx.grid.size - 1)
    return ctx.subject_outcomes[:, cells].mean(axis=1)


def uniform_cells(grid: ScenarioGrid, u: np.ndarray) -> np.ndarray:
    """Map unit-square points to flat cell indices with equal measure per cell."""
    u = np.atleast_2d(np.asarray(u, dtype=float))
    i_r = np.minimum((u[:, 0] * grid.r_steps).astype(int), grid.r_steps - 1)
    i_rdot = np.minimum((u[:, 1] * grid.rdot_steps).astype(int), grid.rdot_steps - 1)
    return i_rdot * grid.r_steps + i_r


def _uniform_trial(ctx: EvalContext, n: int, seed: int) -> np.ndarray:
    rng = np.random.default_rng(seed)
    shift = rng.random(2)
    u = (halton_points(n) + shift[None, :]) % 1.0
    # equal-measure binning keeps the cell proposal exactly uniform
    cells = uniform_cells(ctx.grid, u)
    scale = ctx.grid.size / n
    return (ctx.subject_outcomes[:, cells] * ctx.grid.exposure[cells][None, :]).sum(axis=1) * scale


def _fst_trial(ctx: EvalContext, n: int, seed: int) -> np.ndarray:
    plan = optimize(
        ctx.grid,
        ctx.vertex_outcomes,
        ctx.vertex_rates,
        ctx.params,
        ctx.assignments,
        ctx.optimize_config(n),
        master_seed=seed,
    )
    return np.array([execute_plan(plan, o) for o in ctx.subject_outcomes])


_METHODS = {
    "NDE": _nde_trial,
    "uniform": _uniform_trial,
    "FST-with-restarts": _fst_trial,
}


def register_method(name: str, fn, overwrite: bool = False) -> None:
    """Add a trial method ``fn(ctx, n, seed) -> (m,) estimates`` to the registry."""
    if name in _METHODS and not overwrite:
        raise ConfigError(f"method {name!r} already registered")
    _METHODS[name] = fn


def method_names() -> list[str]:
    return list(_METHODS)


def run_trials(
    method: str, ctx: EvalContext, n: int, trials: int, master_seed: int
) -> np.ndarray:
    """Run ``trials`` independent trials; returns estimates shaped (trials, m).

    Trial ``t`` uses the stream labeled ``eval/<method>/n<n>/trial/<t>``, so
    any subset of trials reproduces identically.
    """
    if trials < 100:
        raise ConfigError("need at least 100 trials for stable statistics")
    if method not in _METHODS:
        raise ConfigError(f"unknown method {method!r}; have {sorted(_METHODS)}")
    fn = _METHODS[method]
    out = np.empty((trials, len(ctx.subject_names)))
    for t in range(trials):
        seed = child_seed(master_seed, f"eval/{method}/n{n}/trial/{t}")
        out[t] = fn(ctx, n, seed)
    return out


def compare_methods(
    ctx: EvalContext,
    n_values: list[int],
    trials: int,
    master_seed: int,
    methods: tuple[str, ...] = ("NDE", "uniform", "FST-with-restarts"),
) -> dict:
    """Trial statistics for every (method, n, subject) combination.

    Returns ``{"rows": [...], "estimates": {method: {n: (trials, m) array}}}``
    where each row carries the flattened :class:`TrialStats` fields.
    """
    rows = []
    estimates: dict = {}
    for method in methods:
        estimates[method] = {}
        for n in n_values:
            est = run_trials(method, ctx, n, trials, master_seed)
            estimates[method][n] = est
            for j, subject in enumerate(ctx.subject_names):
                stats = TrialStats.from_estimates(est[:, j], ctx.subject_rates[j])
                rows.append(
                    {
                        "subject": subject,
                        "n": n,
                        "method": method,
                        "trials": stats.trials,
                        "true_rate": stats.true_rate,
                        "avg_abs_error": stats.avg_abs_error,
                        "rel_avg_abs_error": stats.rel_avg_abs_error,
                        "variance": stats.variance,
                        "q99_abs_error": stats.q99_abs_error,
                        "rel_q99_abs_error": stats.rel_q99_abs_error,
                    }
                )
    return {"rows": rows, "estimates": estimates}


def nde_exact_avg_error(n: int, mu: float) -> float:
    """Closed-form expected |mean - mu| of ``n`` iid Bernoulli(mu) outcomes."""
    return sum(
        abs(k / n - mu) * comb(n, k) * mu**k * (1.0 - mu) ** (n - k)
        for k in range(n + 1)
    )


def bound_experiment(
    ctx: EvalContext, n: int, members: int, master_seed: int, restarts: int = 8
) -> dict:
    """Check the certified bound on random convex combinations of the vertices.

    Optimizes one plan with the fluctuation term disabled (infinite
    mismatch weight), then draws ``members`` random mixtures of the vertex
    models and compares realized errors against the certified loss.
    """
    plan = optimize(
        ctx.grid,
        ctx.vertex_outcomes,
        ctx.vertex_rates,
        ctx.params,
        ctx.assignments,
        ctx.optimize_config(n, mismatch_weight=float("inf"), restarts=restarts),
        master_seed=child_seed(master_seed, "eval/bound/optimize"),
    )
    rng = make_rng(master_seed, "eval/bound/members")
    s = ctx.vertex_rates.size
    lam = rng.dirichlet(np.ones(s), size=members)
    realized = np.empty(members)
    for i in range(members):
        member_outcomes = lam[i] @ ctx.vertex_outcomes
        member_rate = float(lam[i] @ ctx.vertex_rates)
        realized[i] = abs(execute_plan(plan, member_outcomes) - member_rate)
    slack = 1e-9
    violating = np.flatnonzero(realized > plan.certified_loss + slack)
    return {
        "n": n,
        "members": members,
        "certified_loss": plan.certified_loss,
        "max_realized_error": float(realized.max()),
        "mean_realized_error": float(realized.mean()),
        "max_error_to_bound_ratio": float(realized.max() / plan.certified_loss),
        "violations": int(violating.size),
        "violating_members": [
            {"index": int(i), "error": float(realized[i]), "weights": lam[i].tolist()}
            for i in violating
        ],
        "slack": slack,
    }


# Ablation variants: (optimization steps override, restarts override,
# mismatch weight). "no-optimization" executes one random initial set as-is;
# "no-fluctuation" keeps optimization but drops the fluctuation term.
_ABLATION_VARIANTS = (
    ("full", None, None, 1.0),
    ("no-fluctuation", None, None, float("inf")),
    ("no-optimization", 0, 1, 1.0),
)


def ablation_experiment(ctx: EvalContext, n: int, trials: int, master_seed: int) -> dict:
    """FST trial statistics with coordinate optimization and the fluctuation
    term each switched off in turn."""
    rows = []
    for variant, steps, restarts, w_M in _ABLATION_VARIANTS:
        certified = []
        est = np.empty((trials, len(ctx.subject_names)))
        for t in range(trials):
            seed = child_seed(master_seed, f"eval/ablation/{variant}/n{n}/trial/{t}")
            plan = optimize(
                ctx.grid, ctx.vertex_outcomes, ctx.vertex_rates, ctx.params,
                ctx.assignments,
                ctx.optimize_config(n, mismatch_weight=w_M, restarts=restarts, steps=steps),
                master_seed=seed,
            )
            certified.append(plan.certified_loss)
            est[t] = [execute_plan(plan, o) for o in ctx.subject_outcomes]
        for j, subject in enumerate(ctx.subject_names):
            stats = TrialStats.from_estimates(est[:, j], ctx.subject_rates[j])
            rows.append(
                {
                    "variant": variant,
                    "subject": subject,
                    "n": n,
                    "trials": trials,
                    "avg_abs_error": stats.avg_abs_error,
                    "rel_avg_abs_error": stats.rel_avg_abs_error,
                    "variance": stats.variance,
                    "q99_abs_error": stats.q99_abs_error,
                    "mean_certified_loss": float(np.mean(certified)),
                }
            )
    return {"rows": rows}


def cross_n_experiment(
    ctx: EvalContext,
    train_ns: list[int],
    test_ns: list[int],
    trials: int,
    master_seed: int,
    net_config: NetConfig,
    train_config: TrainConfig,
) -> dict:
    """FST accuracy over a grid of (training n, deployed n) pairs.

    Retrains the similarity network for every training set size (seed
    ``eval/cross_n/train/<n>``), then runs FST trials at every deployed
    size with that network, answering how sensitive accuracy is to
    training with a different set size than the one fielded.
    """
    rows = []
    for train_n in train_ns:
        cfg_n = dataclasses.replace(train_config, n_train=train_n, k_clusters=None)
        trained = train(
            ctx.grid, ctx.vertex_outcomes, ctx.vertex_rates, net_config, cfg_n,
            master_seed=child_seed(master_seed, f"eval/cross_n/train/{train_n}"),
        )
        for test_n in test_ns:
            certified = []
            est = np.empty((trials, len(ctx.subject_names)))
            for t in range(trials):
                seed = child_seed(
                    master_seed, f"eval/cross_n/train{train_n}/test{test_n}/trial/{t}"
                )
                plan = optimize(
                    ctx.grid, ctx.vertex_outcomes, ctx.vertex_rates, trained.params,
                    trained.assignments, ctx.optimize_config(test_n), master_seed=seed,
                )
                certified.append(plan.certified_loss)
                est[t] = [execute_plan(plan, o) for o in ctx.subject_outcomes]
            for j, subject in enumerate(ctx.subject_names):
                stats = TrialStats.from_estimates(est[:, j], ctx.subject_rates[j])
                rows.append(
                    {
                        "train_n": train_n,
                        "test_n": test_n,
                        "subject": subject,
                        "trials": trials,
                        "avg_abs_error": stats.avg_abs_error,
                        "rel_avg_abs_error": stats.rel_avg_abs_error,
                        "mean_certified_loss": float(np.mean(certified)),
                    }
                )
    return {"rows": rows}
