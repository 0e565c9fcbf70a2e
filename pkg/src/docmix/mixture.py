"""Floor-constrained multinomial mixtures.

A model is (pi, f) with K weights on the simplex and K categorical
densities over B words, every density entry at least epsilon (default
1/n for a corpus with n tokens, so tau = -log epsilon = log n). All
density math runs in log space: a document of counts c scores
a_k = log pi_k + sum_b c_b log f_k(b) under component k and its log
density is the log-sum-exp over k.

Bit-reproducibility contract: the per-component column of the score
matrix is computed independently of the other components, and the
log-sum-exp sums exponentials in sorted order, so permuting components
leaves log_likelihood bit-identical.
"""

from __future__ import annotations

import json
import math
import os
import warnings
from dataclasses import dataclass

import numpy as np
from scipy import sparse

from .corpus import Corpus, atomic_write_text
from .errors import FormatError

MODEL_FORMAT = "docmix.model"
MODEL_VERSION = 1

WEIGHT_SUM_TOL = 1e-12
DENSITY_SUM_TOL = 1e-10
FLOOR_SLACK = 1e-15


class IdentifiabilityWarning(UserWarning):
    """Raised when B < 2K - 1, where mixture parameters need not be unique."""


def default_floor(total_tokens: int) -> float:
    """Default probability floor for a corpus with n tokens: 1/n."""
    if total_tokens < 1:
        raise ValueError("corpus must contain at least one token")
    return 1.0 / total_tokens


def log_weights(pi: np.ndarray) -> np.ndarray:
    """log pi with log(0) = -inf and no warning; zero-weight comps drop out."""
    with np.errstate(divide="ignore"):
        return np.log(pi)


@dataclass(frozen=True)
class MixtureModel:
    pi: np.ndarray
    log_f: np.ndarray
    epsilon: float

    def __post_init__(self):
        pi = np.ascontiguousarray(np.asarray(self.pi, dtype=np.float64))
        log_f = np.ascontiguousarray(np.asarray(self.log_f, dtype=np.float64))
        if pi.ndim != 1 or log_f.ndim != 2 or log_f.shape[0] != pi.shape[0]:
            raise ValueError(
                f"shape mismatch: pi {pi.shape}, log_f {log_f.shape}"
            )
        pi.flags.writeable = False
        log_f.flags.writeable = False
        object.__setattr__(self, "pi", pi)
        object.__setattr__(self, "log_f", log_f)
        self.validate()
        if self.num_words < 2 * self.num_components - 1:
            warnings.warn(
                f"B={self.num_words} < 2K-1={2 * self.num_components - 1}: "
                "mixture parameters may not be identifiable",
                IdentifiabilityWarning,
                stacklevel=2,
            )

    @property
    def num_components(self) -> int:
        return self.pi.shape[0]

    @property
    def num_words(self) -> int:
        return self.log_f.shape[1]

    @property
    def tau(self) -> float:
        return -math.log(self.epsilon)

    @property
    def densities(self) -> np.ndarray:
        return np.exp(self.log_f)

    def validate(self) -> None:
        if not 0 < self.epsilon < 1:
            raise ValueError(f"floor must be in (0, 1), got {self.epsilon}")
        if np.any(self.pi < 0):
            raise ValueError("mixture weights must be nonnegative")
        if not np.any(self.pi > 0):
            raise ValueError("at least one mixture weight must be positive")
        if abs(self.pi.sum() - 1.0) > WEIGHT_SUM_TOL:
            raise ValueError(f"mixture weights sum to {self.pi.sum()!r}, not 1")
        if not np.all(np.isfinite(self.log_f)):
            raise ValueError("log densities must be finite")
        f = np.exp(self.log_f)
        if f.min() < self.epsilon - FLOOR_SLACK:
            raise ValueError(
                f"density entry {f.min()!r} below floor {self.epsilon!r}"
            )
        row_err = np.abs(f.sum(axis=1) - 1.0).max()
        if row_err > DENSITY_SUM_TOL:
            raise ValueError(f"density rows sum to 1 within {row_err!r} only")

    @classmethod
    def from_densities(cls, pi, f, epsilon: float) -> "MixtureModel":
        f = np.asarray(f, dtype=np.float64)
        if np.any(f <= 0):
            raise ValueError("densities must be strictly positive; apply the floor first")
        return cls(pi=np.asarray(pi, dtype=np.float64), log_f=np.log(f), epsilon=epsilon)

    def permuted(self, order) -> "MixtureModel":
        """New model whose component j is this model's component order[j]."""
        order = np.asarray(order)
        if sorted(order.tolist()) != list(range(self.num_components)):
            raise ValueError(f"not a permutation of 0..{self.num_components - 1}: {order}")
        return MixtureModel(pi=self.pi[order].copy(), log_f=self.log_f[order].copy(),
                            epsilon=self.epsilon)


@dataclass(frozen=True)
class DocLogJoint:
    """Per-component scores a_k for one document plus their log-sum-exp."""

    scores: np.ndarray
    doc_log_density: float


@dataclass(frozen=True)
class Assignment:
    labels: np.ndarray


def _counts_to_row(counts: dict[int, int], num_words: int) -> sparse.csr_matrix:
    items = sorted(counts.items())
    if not items:
        raise ValueError("counts must be nonempty")
    indices = np.asarray([i for i, _ in items], dtype=np.int32)
    if indices[0] < 0 or indices[-1] >= num_words:
        raise IndexError(
            f"word index out of range 0..{num_words - 1}: {int(indices.min())}..{int(indices.max())}"
        )
    data = np.asarray([c for _, c in items], dtype=np.float64)
    indptr = np.asarray([0, len(items)], dtype=np.int32)
    return sparse.csr_matrix((data, indices, indptr), shape=(1, num_words))


def score_matrix(counts: sparse.csr_matrix, model: MixtureModel) -> np.ndarray:
    """L x K matrix of a_k scores; column k never reads component j != k."""
    num_docs = counts.shape[0]
    if counts.shape[1] != model.num_words:
        raise ValueError(
            f"corpus has {counts.shape[1]} words but model has {model.num_words}"
        )
    log_pi = log_weights(model.pi)
    scores = np.empty((num_docs, model.num_components), dtype=np.float64)
    for k in range(model.num_components):
        scores[:, k] = counts.dot(model.log_f[k]) + log_pi[k]
    return scores


def _log_densities_from_scores(scores: np.ndarray) -> np.ndarray:
    # Summing exp in ascending order keeps the reduction identical under
    # any permutation of the columns.
    top = scores.max(axis=1)
    finite = np.isfinite(top)
    out = np.full(scores.shape[0], -np.inf)
    if np.any(finite):
        shifted = np.exp(scores[finite] - top[finite, None])
        out[finite] = top[finite] + np.log(np.sort(shifted, axis=1).sum(axis=1))
    return out


def doc_log_joint(counts: dict[int, int], model: MixtureModel) -> DocLogJoint:
    row = _counts_to_row(counts, model.num_words)
    scores = score_matrix(row, model)
    density = _log_densities_from_scores(scores)
    return DocLogJoint(scores=scores[0], doc_log_density=float(density[0]))


def per_doc_log_density(corpus: Corpus, model: MixtureModel) -> np.ndarray:
    return _log_densities_from_scores(score_matrix(corpus.csr(), model))


def log_likelihood(corpus: Corpus, model: MixtureModel) -> float:
    """Total log-likelihood of the corpus; the negated empirical contrast."""
    return float(np.add.reduce(per_doc_log_density(corpus, model)))


def map_assign(corpus: Corpus, model: MixtureModel) -> Assignment:
    """Most probable component per document, ties to the lowest index."""
    scores = score_matrix(corpus.csr(), model)
    return Assignment(labels=np.argmax(scores, axis=1))


def kl_categorical(s, t) -> float:
    """KL divergence between categorical densities; inf when t lacks s's support."""
    s = np.asarray(s, dtype=np.float64)
    t = np.asarray(t, dtype=np.float64)
    if s.shape != t.shape or s.ndim != 1:
        raise ValueError(f"shape mismatch: {s.shape} vs {t.shape}")
    for name, v in (("s", s), ("t", t)):
        if np.any(v < 0) or abs(v.sum() - 1.0) > 1e-8:
            raise ValueError(f"{name} is not a probability vector (sum {v.sum()!r})")
    support = s > 0
    if np.any(t[support] == 0):
        return float("inf")
    return float(np.add.reduce(s[support] * np.log(s[support] / t[support])))


def weighted_kl_risk(true_densities, model: MixtureModel, assignment: Assignment,
                     doc_lengths, total_tokens: int) -> float:
    """Length-weighted KL risk of assigned component densities vs the truth."""
    true_densities = np.asarray(true_densities, dtype=np.float64)
    lengths = np.asarray(doc_lengths, dtype=np.float64)
    labels = assignment.labels
    if not (len(true_densities) == len(lengths) == len(labels)):
        raise ValueError("true_densities, doc_lengths and labels must align")
    fitted = model.densities
    risk = 0.0
    for l in range(len(labels)):
        term = kl_categorical(true_densities[l], fitted[labels[l]])
        if math.isinf(term):
            return float("inf")
        risk += lengths[l] / total_tokens * term
    return risk


def dumps_model(model: MixtureModel) -> str:
    payload = {
        "format": MODEL_FORMAT,
        "version": MODEL_VERSION,
        "K": model.num_components,
        "B": model.num_words,
        "epsilon_n": model.epsilon,
        "pi": model.pi.tolist(),
        "log_f": model.log_f.tolist(),
    }
    return json.dumps(payload, separators=(",", ":"))


def loads_model(text: str) -> MixtureModel:
    try:
        payload = json.loads(text)
    except json.JSONDecodeError as exc:
        raise FormatError(f"model payload is not valid JSON (truncated?): {exc}") from exc
    if not isinstance(payload, dict) or payload.get("format") != MODEL_FORMAT:
        raise FormatError("payload is not a docmix model container")
    if payload.get("version") != MODEL_VERSION:
        raise FormatError(
            f"unsupported model version {payload.get('version')!r}, expected {MODEL_VERSION}"
        )
    try:
        model = MixtureModel(
            pi=np.asarray(payload["pi"], dtype=np.float64),
            log_f=np.asarray(payload["log_f"], dtype=np.float64),
            epsilon=float(payload["epsilon_n"]),
        )
        if model.num_components != payload["K"] or model.num_words != payload["B"]:
            raise FormatError("declared K/B do not match the stored arrays")
        return model
    except FormatError:
        raise
    except (KeyError, TypeError, ValueError) as exc:
        raise FormatError(f"model payload is structurally invalid: {exc}") from exc


def save_model(model: MixtureModel, path: str | os.PathLike) -> None:
    atomic_write_text(path, dumps_model(model))


def load_model(path: str | os.PathLike) -> MixtureModel:
    with open(path, encoding="utf-8") as handle:
        return loads_model(handle.read())
