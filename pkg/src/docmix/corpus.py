"""Bag-of-words corpora of variable-length categorical observations.

A corpus holds L documents over a shared vocabulary of B words. Each
document is a sparse map from word index to a positive count; its length
n_l is the sum of those counts and the corpus total is n = sum_l n_l.
Documents may have very different lengths, which is the point: every
operation downstream weights documents by n_l where it matters.

On disk the exchange format is the UCI bag-of-words pair: a ``docword``
file with three integer header lines (D, W, NNZ) followed by NNZ
whitespace-separated ``docID wordID count`` triples (1-based), and a
``vocab`` file with one token per line. Internal persistence is a
versioned JSON container.
"""

from __future__ import annotations

import csv
import json
import os
import tempfile
from dataclasses import dataclass, field
from typing import IO, Iterable

import numpy as np
from scipy import sparse

from .errors import EmptyVocabularyError, FormatError, ParseError

CORPUS_FORMAT = "docmix.corpus"
CORPUS_VERSION = 1


def atomic_write_text(path: str | os.PathLike, text: str) -> None:
    """Write text to ``path`` via a temp file and rename, never a partial file."""
    path = os.fspath(path)
    directory = os.path.dirname(path) or "."
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-", suffix="~")
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as handle:
            handle.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


@dataclass(frozen=True)
class Vocabulary:
    """Ordered list of unique tokens; index -> token is stable across save/load."""

    words: tuple[str, ...]

    def __post_init__(self):
        if len(set(self.words)) != len(self.words):
            raise ValueError("vocabulary tokens must be unique")

    @property
    def size(self) -> int:
        return len(self.words)

    def __len__(self) -> int:
        return len(self.words)

    def __getitem__(self, index: int) -> str:
        return self.words[index]


@dataclass
class Corpus:
    """Immutable-by-convention collection of sparse count vectors.

    ``docs[l]`` maps word index (0-based, < vocab.size) to a count >= 1.
    ``dropped_doc_ids`` records documents removed by pruning so that
    reports can state coverage; they also keep the pruning denominator
    stable, which makes pruning idempotent.
    """

    vocab: Vocabulary
    docs: list[dict[int, int]]
    doc_ids: list[int]
    doc_lengths: list[int]
    total_tokens: int
    doc_years: dict[int, int] | None = None
    dropped_doc_ids: list[int] = field(default_factory=list)

    @classmethod
    def from_docs(
        cls,
        vocab: Vocabulary,
        docs: list[dict[int, int]],
        doc_ids: list[int],
        doc_years: dict[int, int] | None = None,
        dropped_doc_ids: Iterable[int] = (),
    ) -> "Corpus":
        if len(docs) != len(doc_ids):
            raise ValueError("docs and doc_ids must have the same length")
        if len(set(doc_ids)) != len(doc_ids):
            raise ValueError("doc_ids must be unique")
        lengths = []
        for doc_id, doc in zip(doc_ids, docs):
            if not doc:
                raise ValueError(f"document {doc_id} is empty")
            for index, count in doc.items():
                if not 0 <= index < vocab.size:
                    raise IndexError(
                        f"document {doc_id}: word index {index} out of range 0..{vocab.size - 1}"
                    )
                if count < 1:
                    raise ValueError(f"document {doc_id}: count {count} is not positive")
            lengths.append(sum(doc.values()))
        return cls(
            vocab=vocab,
            docs=docs,
            doc_ids=list(doc_ids),
            doc_lengths=lengths,
            total_tokens=sum(lengths),
            doc_years=dict(doc_years) if doc_years else None,
            dropped_doc_ids=list(dropped_doc_ids),
        )

    @property
    def num_docs(self) -> int:
        return len(self.docs)

    @property
    def num_words(self) -> int:
        return self.vocab.size

    def csr(self) -> sparse.csr_matrix:
        """Doc-by-word count matrix, built once and cached."""
        cached = getattr(self, "_csr", None)
        if cached is None:
            indptr = [0]
            indices: list[int] = []
            data: list[int] = []
            for doc in self.docs:
                for index, count in sorted(doc.items()):
                    indices.append(index)
                    data.append(count)
                indptr.append(len(indices))
            cached = sparse.csr_matrix(
                (np.asarray(data, dtype=np.float64),
                 np.asarray(indices, dtype=np.int32),
                 np.asarray(indptr, dtype=np.int32)),
                shape=(self.num_docs, self.num_words),
            )
            self._csr = cached
        return cached

    def word_totals(self) -> np.ndarray:
        """Total count of every word across the corpus."""
        totals = np.zeros(self.num_words)
        for doc in self.docs:
            for index, count in doc.items():
                totals[index] += count
        return totals

    def with_years(self, years: dict[int, int]) -> "Corpus":
        """Attach a doc_id -> year map, restricted to retained documents."""
        known = {doc_id: years[doc_id] for doc_id in self.doc_ids if doc_id in years}
        return Corpus(
            vocab=self.vocab,
            docs=self.docs,
            doc_ids=self.doc_ids,
            doc_lengths=self.doc_lengths,
            total_tokens=self.total_tokens,
            doc_years=known,
            dropped_doc_ids=self.dropped_doc_ids,
        )


def parse_bag_of_words(docword_lines: Iterable[str], vocab_lines: Iterable[str]) -> Corpus:
    """Parse UCI-style docword and vocab streams into a corpus.

    Documents that own no triples are omitted, so the result may have
    fewer documents than the header's D. Counts for repeated (doc, word)
    triples accumulate.
    """
    lines = iter(docword_lines)
    header: list[int] = []
    lineno = 0
    while len(header) < 3:
        line = next(lines, None)
        lineno += 1
        if line is None:
            raise ParseError("unexpected end of stream while reading header", line=lineno)
        text = line.strip()
        try:
            value = int(text)
        except ValueError:
            raise ParseError(f"expected an integer header value, got {text!r}", line=lineno) from None
        if value < 0:
            raise ParseError(f"header value must be nonnegative, got {value}", line=lineno)
        header.append(value)
    num_docs, num_words, num_triples = header

    docs_by_id: dict[int, dict[int, int]] = {}
    seen = 0
    for line in lines:
        lineno += 1
        text = line.strip()
        if not text:
            continue
        parts = text.split()
        if len(parts) != 3:
            raise ParseError(f"expected 'docID wordID count', got {text!r}", line=lineno)
        try:
            doc_id, word_id, count = (int(p) for p in parts)
        except ValueError:
            raise ParseError(f"non-integer triple {text!r}", line=lineno) from None
        seen += 1
        if seen > num_triples:
            raise ParseError(f"more than the declared {num_triples} triples", line=lineno)
        if not 1 <= doc_id <= num_docs:
            raise IndexError(f"line {lineno}: doc id {doc_id} out of range 1..{num_docs}")
        if not 1 <= word_id <= num_words:
            raise IndexError(f"line {lineno}: word id {word_id} out of range 1..{num_words}")
        if count <= 0:
            raise ValueError(f"line {lineno}: count must be positive, got {count}")
        doc = docs_by_id.setdefault(doc_id, {})
        index = word_id - 1
        doc[index] = doc.get(index, 0) + count
    if seen < num_triples:
        raise ParseError(f"declared {num_triples} triples but found {seen}", line=lineno)

    tokens = []
    for vocab_lineno, line in enumerate(vocab_lines, start=1):
        token = line.strip()
        if not token:
            raise ParseError("empty vocabulary token", line=vocab_lineno)
        tokens.append(token)
    if len(tokens) != num_words:
        raise ParseError(
            f"vocabulary has {len(tokens)} tokens but the docword header declares {num_words}"
        )

    doc_ids = sorted(docs_by_id)
    return Corpus.from_docs(
        vocab=Vocabulary(tuple(tokens)),
        docs=[docs_by_id[i] for i in doc_ids],
        doc_ids=doc_ids,
    )


def dump_bag_of_words(corpus: Corpus) -> tuple[str, str]:
    """Render a corpus back to (docword text, vocab text).

    The declared D is the largest retained doc id, so reparsing the output
    yields a structurally identical corpus.
    """
    triples = []
    for doc_id, doc in zip(corpus.doc_ids, corpus.docs):
        for index, count in sorted(doc.items()):
            triples.append(f"{doc_id} {index + 1} {count}")
    max_id = max(corpus.doc_ids) if corpus.doc_ids else 0
    docword = "\n".join([str(max_id), str(corpus.num_words), str(len(triples))] + triples)
    vocab = "\n".join(corpus.vocab.words)
    return docword + "\n", vocab + "\n"


def prune_vocabulary(corpus: Corpus, max_doc_fraction: float, top_b: int) -> Corpus:
    """Drop over-common words, keep the ``top_b`` most frequent, drop emptied docs.

    Words present in strictly more than ``max_doc_fraction`` of the
    documents are removed first; of the remainder, the ``top_b`` with the
    highest total count are retained (ties go to the lower original
    index). Presence fractions use the number of documents the corpus has
    ever seen (retained plus previously dropped) as denominator, so
    pruning twice with the same arguments is a no-op.
    """
    if not 0 < max_doc_fraction <= 1:
        raise ValueError(f"max_doc_fraction must be in (0, 1], got {max_doc_fraction}")
    if top_b < 1:
        raise ValueError(f"top_b must be >= 1, got {top_b}")

    num_seen = corpus.num_docs + len(corpus.dropped_doc_ids)
    doc_freq = np.zeros(corpus.num_words, dtype=np.int64)
    totals = np.zeros(corpus.num_words, dtype=np.int64)
    for doc in corpus.docs:
        for index, count in doc.items():
            doc_freq[index] += 1
            totals[index] += count

    candidates = [b for b in range(corpus.num_words) if doc_freq[b] <= max_doc_fraction * num_seen]
    candidates.sort(key=lambda b: (-totals[b], b))
    kept = sorted(candidates[:top_b])
    if not kept:
        raise EmptyVocabularyError(
            f"no words left after removing those in more than {max_doc_fraction:.0%} of documents"
        )

    remap = {old: new for new, old in enumerate(kept)}
    new_docs: list[dict[int, int]] = []
    new_ids: list[int] = []
    newly_dropped: list[int] = []
    for doc_id, doc in zip(corpus.doc_ids, corpus.docs):
        reduced = {remap[i]: c for i, c in doc.items() if i in remap}
        if reduced:
            new_docs.append(reduced)
            new_ids.append(doc_id)
        else:
            newly_dropped.append(doc_id)

    years = None
    if corpus.doc_years is not None:
        years = {i: corpus.doc_years[i] for i in new_ids if i in corpus.doc_years}
    return Corpus.from_docs(
        vocab=Vocabulary(tuple(corpus.vocab.words[b] for b in kept)),
        docs=new_docs,
        doc_ids=new_ids,
        doc_years=years,
        dropped_doc_ids=list(corpus.dropped_doc_ids) + newly_dropped,
    )


def dumps_corpus(corpus: Corpus) -> str:
    payload = {
        "format": CORPUS_FORMAT,
        "version": CORPUS_VERSION,
        "words": list(corpus.vocab.words),
        "doc_ids": corpus.doc_ids,
        "docs": [
            [[i for i, _ in sorted(doc.items())], [c for _, c in sorted(doc.items())]]
            for doc in corpus.docs
        ],
        "doc_years": sorted(corpus.doc_years.items()) if corpus.doc_years is not None else None,
        "dropped_doc_ids": corpus.dropped_doc_ids,
    }
    return json.dumps(payload, separators=(",", ":"))


def loads_corpus(text: str) -> Corpus:
    try:
        payload = json.loads(text)
    except json.JSONDecodeError as exc:
        raise FormatError(f"corpus payload is not valid JSON (truncated?): {exc}") from exc
    if not isinstance(payload, dict) or payload.get("format") != CORPUS_FORMAT:
        raise FormatError("payload is not a docmix corpus container")
    if payload.get("version") != CORPUS_VERSION:
        raise FormatError(
            f"unsupported corpus version {payload.get('version')!r}, expected {CORPUS_VERSION}"
        )
    try:
        docs = [
            {int(i): int(c) for i, c in zip(indices, counts)}
            for indices, counts in payload["docs"]
        ]
        years = payload["doc_years"]
        return Corpus.from_docs(
            vocab=Vocabulary(tuple(payload["words"])),
            docs=docs,
            doc_ids=[int(i) for i in payload["doc_ids"]],
            doc_years={int(i): int(y) for i, y in years} if years is not None else None,
            dropped_doc_ids=[int(i) for i in payload["dropped_doc_ids"]],
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise FormatError(f"corpus payload is structurally invalid: {exc}") from exc


def save_corpus(corpus: Corpus, path: str | os.PathLike) -> None:
    atomic_write_text(path, dumps_corpus(corpus))


def load_corpus(path: str | os.PathLike) -> Corpus:
    with open(path, encoding="utf-8") as handle:
        return loads_corpus(handle.read())


def load_year_sidecar(source: str | os.PathLike | IO[str]) -> dict[int, int]:
    """Read a ``doc_id,year`` CSV sidecar into a map."""
    if hasattr(source, "read"):
        return _parse_year_rows(source)
    with open(source, encoding="utf-8", newline="") as handle:
        return _parse_year_rows(handle)


def _parse_year_rows(handle: IO[str]) -> dict[int, int]:
    reader = csv.reader(handle)
    header = next(reader, None)
    if header is None or [h.strip().lower() for h in header] != ["doc_id", "year"]:
        raise ParseError("expected header 'doc_id,year'", line=1)
    years: dict[int, int] = {}
    for lineno, row in enumerate(reader, start=2):
        if not row:
            continue
        if len(row) != 2:
            raise ParseError(f"expected two columns, got {len(row)}", line=lineno)
        try:
            doc_id, year = int(row[0]), int(row[1])
        except ValueError:
            raise ParseError(f"non-integer row {row!r}", line=lineno) from None
        if doc_id in years:
            raise ParseError(f"duplicate doc_id {doc_id}", line=lineno)
        years[doc_id] = year
    return years
