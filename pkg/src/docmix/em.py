"""EM fitting with floor-constrained M-steps and component annihilation.

The fitting entry point is robust_em: launch several short EM runs from
random starts, keep the best, then alternate full EM with an
annihilation sweep that deletes every component whose weight drops
below 1/(annihilation_divisor * k_current), renormalizes, and resumes
from the survivors. The loop ends when a converged run leaves no
component under the threshold.

The M-step under the density floor is solved exactly: maximizing
sum_b w_b log f_b over the simplex with f_b >= eps has the water-fill
form f_b = max(eps, w_b / lam), and the correct lam is found by a
single pass over the sorted weights. Exactness keeps the per-step
log-likelihood monotone, which the trace invariant checks.
"""

from __future__ import annotations

import json
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from .corpus import Corpus, atomic_write_text
from .errors import (
    ConfigError,
    DegenerateFitError,
    InfeasibleFloorError,
    NumericalError,
)
from .mixture import (
    MixtureModel,
    default_floor,
    dumps_model,
    per_doc_log_density,
    score_matrix,
)


@dataclass(frozen=True)
class EmConfig:
    n_starts: int = 15
    short_iters: int = 10
    max_iters: int = 500
    rel_tol: float = 1e-6
    annihilation_divisor: float = 100.0
    rng_seed: int = 0
    init_noise_scale: float = 1.0

    def __post_init__(self):
        if self.n_starts < 1:
            raise ConfigError("must be >= 1", field="n_starts")
        if self.short_iters < 1:
            raise ConfigError("must be >= 1", field="short_iters")
        if self.max_iters < 1:
            raise ConfigError("must be >= 1", field="max_iters")
        if not self.rel_tol > 0:
            raise ConfigError("must be > 0", field="rel_tol")
        if not self.annihilation_divisor > 1:
            raise ConfigError("must be > 1", field="annihilation_divisor")
        if not self.init_noise_scale >= 0:
            raise ConfigError("must be >= 0", field="init_noise_scale")


@dataclass
class FitResult:
    model: MixtureModel
    loglik_trace: list[float]
    k_initial: int
    k_final: int
    annihilation_events: list[tuple[int, list[int]]]
    seed: int | None
    converged: bool
    eta_effective: float

    def __post_init__(self):
        if self.k_final > self.k_initial:
            raise ValueError("k_final cannot exceed k_initial")


def water_fill_project(weights, epsilon: float) -> np.ndarray:
    """Maximize sum w_b log f_b over the simplex with every f_b >= epsilon.

    KKT form: f_b = max(epsilon, w_b / lam). Scanning candidate pinned
    counts over the ascending-sorted weights finds the unique lam; the
    comparisons are kept multiplicative so zero weights never divide.
    """
    w = np.asarray(weights, dtype=np.float64)
    if w.ndim != 1 or w.size == 0:
        raise ValueError("weights must be a nonempty vector")
    if np.any(w < 0):
        raise ValueError("weights must be nonnegative")
    num = w.size
    if not 0 < epsilon:
        raise ValueError(f"floor must be positive, got {epsilon}")
    if num * epsilon > 1.0:
        raise InfeasibleFloorError(
            f"floor {epsilon} infeasible for {num} categories ({num}*{epsilon} > 1)"
        )
    peak = w.max()
    if not peak > 0:
        raise ValueError("weights must have positive total")
    # normalize in two steps (max first, then sum) so neither subnormal nor
    # huge inputs can underflow the floor comparisons or overflow the sums
    w = w / peak
    w = w / w.sum()

    ws = np.sort(w)
    # suffix[p] = mass left to the free coordinates when the p smallest pin.
    # The smallest pin count whose lightest free coordinate clears the floor
    # is the KKT-consistent one; the comparison stays multiplicative so zero
    # weights never divide.
    suffix = np.cumsum(ws[::-1])[::-1]
    for pinned in range(num):
        denom = 1.0 - pinned * epsilon
        if ws[pinned] * denom >= suffix[pinned] * epsilon:
            return np.maximum(epsilon, w * (denom / suffix[pinned]))
    # Unreachable: the last candidate pins all but the heaviest coordinate,
    # and a positive-total weight vector always clears the floor there.
    raise NumericalError(f"no consistent water level for floor {epsilon}")


def e_step(corpus: Corpus, model: MixtureModel) -> tuple[np.ndarray, float]:
    """Posterior responsibilities and total log-likelihood."""
    scores = score_matrix(corpus.csr(), model)
    log_density = per_doc_log_density(corpus, model)
    resp = np.exp(scores - log_density[:, None])
    return resp, float(np.add.reduce(log_density))


def m_step(corpus: Corpus, resp: np.ndarray, epsilon: float) -> MixtureModel:
    """Exact constrained maximizer given responsibilities."""
    num_docs, num_comps = resp.shape
    num_words = corpus.num_words
    col_mass = resp.sum(axis=0)
    pi = col_mass / col_mass.sum()
    weighted_counts = corpus.csr().T.dot(resp)
    log_f = np.empty((num_comps, num_words))
    for k in range(num_comps):
        if col_mass[k] > 0:
            log_f[k] = np.log(water_fill_project(weighted_counts[:, k], epsilon))
        else:
            pi[k] = 0.0
            log_f[k] = -np.log(num_words)
    return MixtureModel(pi=pi, log_f=log_f, epsilon=epsilon)


def _em_loop(corpus: Corpus, init: MixtureModel, max_iters: int,
             rel_tol: float) -> tuple[MixtureModel, list[float], bool, float]:
    model = init
    resp, loglik = e_step(corpus, model)
    if not np.isfinite(loglik):
        raise NumericalError(f"non-finite log-likelihood {loglik}", iteration=0)
    trace = [loglik]
    converged = False
    eta = float("inf")
    for iteration in range(1, max_iters + 1):
        model = m_step(corpus, resp, model.epsilon)
        resp, new_loglik = e_step(corpus, model)
        if not np.isfinite(new_loglik):
            raise NumericalError(
                f"non-finite log-likelihood {new_loglik}", iteration=iteration
            )
        trace.append(new_loglik)
        eta = abs(new_loglik - loglik) / max(abs(loglik), 1.0)
        loglik = new_loglik
        if eta < rel_tol:
            converged = True
            break
    return model, trace, converged, eta


def run_em(corpus: Corpus, init: MixtureModel, config: EmConfig,
           seed: int | None = None) -> FitResult:
    """Alternate E and M steps from ``init`` until relative stall or max_iters."""
    model, trace, converged, eta = _em_loop(
        corpus, init, config.max_iters, config.rel_tol
    )
    return FitResult(
        model=model,
        loglik_trace=trace,
        k_initial=init.num_components,
        k_final=model.num_components,
        annihilation_events=[],
        seed=seed,
        converged=converged,
        eta_effective=eta,
    )


def random_init(corpus: Corpus, num_comps: int, seed, epsilon: float,
                noise_scale: float = 1.0) -> MixtureModel:
    """Random start: uniform-simplex weights, empirical word law times
    lognormal noise per component, then water-filled to the floor."""
    rng = np.random.default_rng(seed)
    draws = rng.exponential(size=num_comps)
    pi = draws / draws.sum()
    empirical = corpus.word_totals() / corpus.total_tokens
    log_f = np.empty((num_comps, corpus.num_words))
    for k in range(num_comps):
        noisy = empirical * np.exp(noise_scale * rng.standard_normal(corpus.num_words))
        log_f[k] = np.log(water_fill_project(noisy, epsilon))
    return MixtureModel(pi=pi, log_f=log_f, epsilon=epsilon)


def short_em(corpus: Corpus, num_comps: int, seed, short_iters: int,
             epsilon: float | None = None, noise_scale: float = 1.0) -> FitResult:
    """One random start advanced a fixed number of iterations, no stopping rule."""
    if num_comps < 1:
        raise ValueError("need at least one component")
    if short_iters < 0:
        raise ValueError("short_iters must be >= 0")
    if epsilon is None:
        epsilon = default_floor(corpus.total_tokens)
    init = random_init(corpus, num_comps, seed, epsilon, noise_scale)
    if short_iters == 0:
        _, loglik = e_step(corpus, init)
        return FitResult(
            model=init,
            loglik_trace=[loglik],
            k_initial=num_comps,
            k_final=num_comps,
            annihilation_events=[],
            seed=seed,
            converged=False,
            eta_effective=float("inf"),
        )
    model, trace, converged, eta = _em_loop(corpus, init, short_iters, rel_tol=0.0)
    return FitResult(
        model=model,
        loglik_trace=trace,
        k_initial=num_comps,
        k_final=num_comps,
        annihilation_events=[],
        seed=seed,
        converged=converged,
        eta_effective=eta,
    )


def _annihilate(model: MixtureModel, divisor: float) -> tuple[MixtureModel, list[int]]:
    threshold = 1.0 / (divisor * model.num_components)
    below = [k for k in range(model.num_components) if model.pi[k] < threshold]
    if not below:
        return model, []
    keep = [k for k in range(model.num_components) if k not in below]
    if not keep:
        raise DegenerateFitError("annihilation removed every component")
    pi = model.pi[keep]
    pruned = MixtureModel(pi=pi / pi.sum(), log_f=model.log_f[keep].copy(),
                          epsilon=model.epsilon)
    return pruned, below


MAX_ANNIHILATION_ROUNDS = 1000


def robust_em(corpus: Corpus, k_max: int, config: EmConfig,
              epsilon: float | None = None, threads: int = 1) -> FitResult:
    """Multi-start EM at k_max components with annihilation of weak ones.

    Runs config.n_starts short fits (seeds rng_seed + i), continues the
    best one with full EM, and between runs removes all components whose
    weight sits below 1/(annihilation_divisor * k_current) in one sweep.
    Stops once a converged run has no component under the threshold.
    Each annihilation_events entry is (trace index of the first value
    computed after the sweep, removed component indices at that moment).
    """
    if k_max < 1:
        raise ValueError("k_max must be >= 1")
    if epsilon is None:
        epsilon = default_floor(corpus.total_tokens)
    if corpus.num_words * epsilon > 1.0:
        raise InfeasibleFloorError(
            f"floor {epsilon} infeasible for {corpus.num_words} categories"
        )

    def one_start(i: int) -> FitResult:
        return short_em(corpus, k_max, config.rng_seed + i, config.short_iters,
                        epsilon=epsilon, noise_scale=config.init_noise_scale)

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            starts = list(pool.map(one_start, range(config.n_starts)))
    else:
        starts = [one_start(i) for i in range(config.n_starts)]
    best = max(range(config.n_starts),
               key=lambda i: (starts[i].loglik_trace[-1], -i))

    model = starts[best].model
    trace = list(starts[best].loglik_trace)
    events: list[tuple[int, list[int]]] = []
    fresh_model = False
    converged = False
    eta = starts[best].eta_effective
    # Sweep first, EM second: the threshold is checked on the multistart
    # winner before any long run, then after every converged run, so weak
    # components are culled before they can settle onto a few documents.
    for _ in range(MAX_ANNIHILATION_ROUNDS):
        model, removed = _annihilate(model, config.annihilation_divisor)
        if removed:
            events.append((len(trace), removed))
            fresh_model = True
        elif converged:
            break
        fit = run_em(corpus, model, config)
        trace.extend(fit.loglik_trace if fresh_model else fit.loglik_trace[1:])
        model, converged, eta = fit.model, fit.converged, fit.eta_effective
        fresh_model = False
    else:
        raise NumericalError(
            f"annihilation failed to settle within {MAX_ANNIHILATION_ROUNDS} rounds"
        )

    return FitResult(
        model=model,
        loglik_trace=trace,
        k_initial=k_max,
        k_final=model.num_components,
        annihilation_events=events,
        seed=config.rng_seed,
        converged=converged,
        eta_effective=eta,
    )


def dumps_run_log(fit: FitResult, config: EmConfig | None = None) -> str:
    payload = {
        "format": "docmix.runlog",
        "version": 1,
        "k_initial": fit.k_initial,
        "k_final": fit.k_final,
        "seed": fit.seed,
        "converged": fit.converged,
        "eta_effective": fit.eta_effective,
        "annihilation_events": [[i, list(removed)] for i, removed in fit.annihilation_events],
        "loglik_trace": fit.loglik_trace,
        "config": asdict(config) if config is not None else None,
    }
    return json.dumps(payload, separators=(",", ":"))


def save_fit(fit: FitResult, model_path: str | os.PathLike,
             log_path: str | os.PathLike, config: EmConfig | None = None) -> None:
    atomic_write_text(model_path, dumps_model(fit.model))
    atomic_write_text(log_path, dumps_run_log(fit, config))
