"""Penalized selection of the number of mixture components.

A sweep fits the mixture at a ladder of start sizes and records, per
realized component count K, the model dimension K*B and the best
contrast (negative log-likelihood) achieved. Selection minimizes
contrast(K) + penalty(K) over the sweep.

Penalties come in four flavors: the risk-bound shape
multiplier * (rate * K * B + L log K + K log 2) with a per-dimension
rate that grows like log n, its varying-vocabulary extension, the
classical AIC/BIC baselines, and the slope-calibrated form
2 * lambda_min * K * B where lambda_min is read off the asymptotically
linear tail of contrast versus dimension (slope heuristics).
"""

from __future__ import annotations

import csv
import io
import json
import math
import os
from dataclasses import dataclass, replace

import numpy as np

from .corpus import Corpus, atomic_write_text
from .em import EmConfig, FitResult, robust_em
from .errors import (
    DegenerateFitError,
    DegenerateRegressionError,
    FormatError,
    InsufficientDataError,
    NumericalError,
    ParseError,
)

SWEEP_CSV_HEADER = ["K", "D_K", "min_contrast"]


def penalty_rate(total_tokens: int) -> float:
    """Per-dimension rate of the risk penalty for a corpus with n tokens.

    With tau = log n the rate is 2 (sqrt(log(2 tau)) + sqrt(pi))^2 + 1 + log n.
    Grows like log n, so the penalty per parameter stays mild.
    """
    if total_tokens < 2:
        raise ValueError(f"need at least 2 tokens, got {total_tokens}")
    tau = math.log(total_tokens)
    return 2.0 * (math.sqrt(math.log(2.0 * tau)) + math.sqrt(math.pi)) ** 2 + 1.0 + tau


def theoretical_penalty(num_comps: int, num_docs: int, total_tokens: int,
                        num_words: int, multiplier: float) -> float:
    """Risk-bound penalty for a K-component mixture over B words."""
    if num_comps < 1:
        raise ValueError("need at least one component")
    if num_docs < 1:
        raise ValueError("need at least one document")
    rate = penalty_rate(total_tokens)
    return multiplier * (rate * num_comps * num_words
                         + num_docs * math.log(num_comps)
                         + num_comps * math.log(2.0))


def varying_vocab_penalty(num_comps: int, num_words: int, num_docs: int,
                          total_tokens: int, multiplier: float) -> float:
    """Penalty when the vocabulary size is selected jointly with K.

    The model collection is {(K=1, B=1)} plus all (K >= 1, B >= 2);
    anything else is outside the collection.
    """
    if num_comps < 1:
        raise ValueError("need at least one component")
    if num_words < 2 and not (num_comps == 1 and num_words == 1):
        raise ValueError(
            f"({num_comps},{num_words}) is outside the model collection"
        )
    rate = penalty_rate(total_tokens)
    return multiplier * (rate * num_comps * (num_words + 1)
                         + num_docs * math.log(num_comps)
                         + num_comps * num_words * math.log(2.0))


def aic_bic(min_contrast: float, dimension: int, total_tokens: int) -> tuple[float, float]:
    """Classical criteria on the total-contrast scale.

    The per-observation forms D/n and D log(n)/(2n) are multiplied by n
    so they live on the same scale as the penalized contrast.
    """
    if total_tokens < 2:
        raise ValueError(f"need at least 2 tokens, got {total_tokens}")
    return (min_contrast + dimension,
            min_contrast + dimension * math.log(total_tokens) / 2.0)


@dataclass(frozen=True)
class SweepEntry:
    num_comps: int
    dimension: int
    min_contrast: float
    fit: FitResult | None = None

    def __post_init__(self):
        if self.num_comps < 1 or self.dimension < 1:
            raise ValueError("component count and dimension must be positive")
        if not math.isfinite(self.min_contrast):
            raise ValueError(f"contrast must be finite, got {self.min_contrast}")


@dataclass(frozen=True)
class SweepResult:
    entries: tuple[SweepEntry, ...]

    def __post_init__(self):
        ks = [e.num_comps for e in self.entries]
        if ks != sorted(ks) or len(set(ks)) != len(ks):
            raise ValueError("sweep entries must be sorted by K and unique")

    def points(self) -> list[tuple[int, float]]:
        return [(e.dimension, e.min_contrast) for e in self.entries]

    def __len__(self) -> int:
        return len(self.entries)


@dataclass(frozen=True)
class SlopeDiagnostics:
    window_sizes: tuple[int, ...]
    slopes: tuple[float, ...]
    rel_changes: tuple[float, ...]
    chosen_window: int
    stable: bool


@dataclass(frozen=True)
class SelectionReport:
    mode: str
    k_hat: int
    criteria: tuple[tuple[int, float], ...]
    lambda_min: float | None = None
    penalty_multiplier: float | None = None
    diagnostics: SlopeDiagnostics | None = None


def _ols_slope(x: np.ndarray, y: np.ndarray) -> float:
    xc = x - x.mean()
    denom = float(np.dot(xc, xc))
    if denom == 0.0:
        return math.nan
    return float(np.dot(xc, y - y.mean()) / denom)


def slope_heuristics(points, plateau_tol: float = 0.05,
                     min_window: int = 3) -> tuple[float, SlopeDiagnostics]:
    """Read the contrast-versus-dimension slope off its linear tail.

    Fits ordinary least squares over every trailing window of the
    w largest-dimension points, w from min_window up to all points, and
    picks the largest w whose slope moved less than plateau_tol
    relatively from the (w-1)-window slope. When no window is that
    stable the one with the smallest relative change wins (larger w on
    ties) and the diagnostics say stable=False.
    """
    pts = sorted(points, key=lambda p: (p[0], p[1]))
    dims = np.asarray([p[0] for p in pts], dtype=np.float64)
    contrasts = np.asarray([p[1] for p in pts], dtype=np.float64)
    if len(pts) and np.all(dims == dims[0]):
        raise DegenerateRegressionError("all sweep points share one dimension")
    if len(set(dims.tolist())) < 4:
        raise InsufficientDataError(
            f"need at least 4 distinct dimensions, got {len(set(dims.tolist()))}"
        )

    sizes = list(range(min_window, len(pts) + 1))
    slopes = [_ols_slope(dims[-w:], contrasts[-w:]) for w in sizes]
    rel_changes = [math.nan]
    for i in range(1, len(sizes)):
        prev, cur = slopes[i - 1], slopes[i]
        rel_changes.append(abs(cur - prev) / max(abs(prev), 1e-300))

    stable_sizes = [sizes[i] for i in range(1, len(sizes))
                    if rel_changes[i] < plateau_tol]
    if stable_sizes:
        chosen = max(stable_sizes)
        stable = True
    else:
        best = min(range(1, len(sizes)), key=lambda i: (rel_changes[i], -sizes[i]))
        chosen = sizes[best]
        stable = False
    lambda_min = abs(slopes[sizes.index(chosen)])
    diagnostics = SlopeDiagnostics(
        window_sizes=tuple(sizes),
        slopes=tuple(slopes),
        rel_changes=tuple(rel_changes),
        chosen_window=chosen,
        stable=stable,
    )
    return lambda_min, diagnostics


def select_model(sweep: SweepResult, penalty, mode: str = "custom",
                 lambda_min: float | None = None,
                 penalty_multiplier: float | None = None,
                 diagnostics: SlopeDiagnostics | None = None) -> SelectionReport:
    """Minimize contrast + penalty over the sweep; ties go to smaller K.

    ``penalty`` is either a mapping K -> value covering every K in the
    sweep or a sequence aligned with its entries.
    """
    if len(sweep) == 0:
        raise ValueError("sweep is empty")
    if hasattr(penalty, "__getitem__") and not hasattr(penalty, "keys"):
        if len(penalty) != len(sweep):
            raise ValueError("penalty sequence does not align with the sweep")
        penalty = {e.num_comps: penalty[i] for i, e in enumerate(sweep.entries)}
    try:
        criteria = tuple(
            (e.num_comps, e.min_contrast + float(penalty[e.num_comps]))
            for e in sweep.entries
        )
    except KeyError as exc:
        raise ValueError(f"penalty undefined for K={exc.args[0]}") from exc
    k_hat = criteria[0][0]
    best = criteria[0][1]
    for k, value in criteria[1:]:
        if value < best:
            k_hat, best = k, value
    return SelectionReport(
        mode=mode,
        k_hat=k_hat,
        criteria=criteria,
        lambda_min=lambda_min,
        penalty_multiplier=penalty_multiplier,
        diagnostics=diagnostics,
    )


def select_from_sweep(sweep: SweepResult, mode: str = "slope", *,
                      total_tokens: int | None = None,
                      num_docs: int | None = None,
                      multiplier: float = 1.0,
                      plateau_tol: float = 0.05,
                      slope_shape: str = "dimension") -> SelectionReport:
    """Build the per-K penalty for ``mode`` and run select_model.

    Modes: "slope" calibrates lambda_min by slope heuristics and uses
    penalty(K) = 2 lambda_min K B (slope_shape="dimension") or the full
    risk-bound shape rescaled so its leading term matches
    (slope_shape="theoretical"); "theoretical" uses the risk bound with
    the given multiplier; "aic" and "bic" use the classical baselines.
    """
    if len(sweep) == 0:
        raise ValueError("sweep is empty")

    def words_of(entry: SweepEntry) -> int:
        if entry.dimension % entry.num_comps:
            raise ValueError(
                f"dimension {entry.dimension} is not a multiple of K={entry.num_comps}"
            )
        return entry.dimension // entry.num_comps

    if mode == "slope":
        lam, diag = slope_heuristics(sweep.points(), plateau_tol)
        if slope_shape == "dimension":
            pen = {e.num_comps: 2.0 * lam * e.dimension for e in sweep.entries}
            mult = 2.0 * lam
        elif slope_shape == "theoretical":
            if total_tokens is None or num_docs is None:
                raise ValueError("theoretical shape needs total_tokens and num_docs")
            mult = 2.0 * lam / penalty_rate(total_tokens)
            pen = {
                e.num_comps: theoretical_penalty(
                    e.num_comps, num_docs, total_tokens, words_of(e), mult
                )
                for e in sweep.entries
            }
        else:
            raise ValueError(f"unknown slope_shape {slope_shape!r}")
        return select_model(sweep, pen, mode="slope", lambda_min=lam,
                            penalty_multiplier=mult, diagnostics=diag)
    if mode == "theoretical":
        if total_tokens is None or num_docs is None:
            raise ValueError("theoretical mode needs total_tokens and num_docs")
        pen = {
            e.num_comps: theoretical_penalty(
                e.num_comps, num_docs, total_tokens, words_of(e), multiplier
            )
            for e in sweep.entries
        }
        return select_model(sweep, pen, mode="theoretical",
                            penalty_multiplier=multiplier)
    if mode in ("aic", "bic"):
        if total_tokens is None:
            raise ValueError(f"{mode} needs total_tokens")
        pen = {}
        for e in sweep.entries:
            aic, bic = aic_bic(e.min_contrast, e.dimension, total_tokens)
            pen[e.num_comps] = (aic if mode == "aic" else bic) - e.min_contrast
        return select_model(sweep, pen, mode=mode)
    raise ValueError(f"unknown mode {mode!r}")


def derive_seed(base_seed: int, k_max: int) -> int:
    """Stable per-rung seed so ladder entries stay independent of order."""
    return int(np.random.SeedSequence((base_seed, k_max)).generate_state(1)[0])


def run_sweep(corpus: Corpus, ladder, config: EmConfig,
              epsilon: float | None = None, threads: int = 1,
              ) -> tuple[SweepResult, list[tuple[int, str]]]:
    """One robust fit per ladder entry, keyed by realized component count.

    Annihilation makes the realized K at most the start size, so two
    rungs can land on the same K; the better (smaller) contrast wins.
    Failed rungs are reported, not fatal.
    """
    ladder = list(ladder)
    if not ladder:
        raise ValueError("ladder is empty")
    if any(k < 1 for k in ladder):
        raise ValueError("ladder entries must be >= 1")
    best: dict[int, SweepEntry] = {}
    failures: list[tuple[int, str]] = []
    for k_max in ladder:
        rung_config = replace(config, rng_seed=derive_seed(config.rng_seed, k_max))
        try:
            fit = robust_em(corpus, k_max, rung_config, epsilon=epsilon,
                            threads=threads)
        except (NumericalError, DegenerateFitError) as exc:
            failures.append((k_max, str(exc)))
            continue
        contrast = -fit.loglik_trace[-1]
        k = fit.k_final
        if k not in best or contrast < best[k].min_contrast:
            best[k] = SweepEntry(
                num_comps=k,
                dimension=k * corpus.num_words,
                min_contrast=contrast,
                fit=fit,
            )
    entries = tuple(best[k] for k in sorted(best))
    return SweepResult(entries=entries), failures


def sweep_to_csv(sweep: SweepResult) -> str:
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(SWEEP_CSV_HEADER)
    for e in sweep.entries:
        writer.writerow([e.num_comps, e.dimension, repr(e.min_contrast)])
    return buffer.getvalue()


def sweep_from_csv(text: str) -> SweepResult:
    reader = csv.reader(io.StringIO(text))
    header = next(reader, None)
    if header is None or [h.strip() for h in header] != SWEEP_CSV_HEADER:
        raise FormatError(
            f"expected header {','.join(SWEEP_CSV_HEADER)!r}, got {header!r}"
        )
    entries = []
    for lineno, row in enumerate(reader, start=2):
        if not row:
            continue
        if len(row) != 3:
            raise ParseError(f"expected 3 columns, got {len(row)}", line=lineno)
        try:
            entries.append(SweepEntry(
                num_comps=int(row[0]),
                dimension=int(row[1]),
                min_contrast=float(row[2]),
            ))
        except ValueError as exc:
            raise ParseError(str(exc), line=lineno) from None
    entries.sort(key=lambda e: e.num_comps)
    return SweepResult(entries=tuple(entries))


def save_sweep(sweep: SweepResult, path: str | os.PathLike) -> None:
    atomic_write_text(path, sweep_to_csv(sweep))


def load_sweep(path: str | os.PathLike) -> SweepResult:
    with open(path, encoding="utf-8") as handle:
        return sweep_from_csv(handle.read())


def dumps_selection_report(report: SelectionReport) -> str:
    payload = {
        "format": "docmix.selection",
        "version": 1,
        "mode": report.mode,
        "K_hat": report.k_hat,
        "lambda_min": report.lambda_min,
        "penalty_multiplier": report.penalty_multiplier,
        "criteria": [[k, v] for k, v in report.criteria],
        "diagnostics": None if report.diagnostics is None else {
            "window_sizes": list(report.diagnostics.window_sizes),
            "slopes": list(report.diagnostics.slopes),
            "rel_changes": [
                None if math.isnan(r) else r for r in report.diagnostics.rel_changes
            ],
            "chosen_window": report.diagnostics.chosen_window,
            "stable": report.diagnostics.stable,
        },
    }
    return json.dumps(payload, indent=2)
