"""ROUGE, fact-triplet matching, flow matrices and corpus statistics."""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass
from functools import lru_cache
from typing import Iterable, Sequence

import numpy as np
from nltk.stem.porter import PorterStemmer

from .corpus import (
    STOP_WORDS,
    DialogueExample,
    FactTriplet,
    build_support_alignment,
    extract_summary_triplets,
    split_summary_sentences,
)

N_BUCKETS = 10
N_ROWS = 3

_stemmer = PorterStemmer()


@lru_cache(maxsize=65536)
def stem(token: str) -> str:
    return _stemmer.stem(token)


@dataclass(frozen=True)
class PRF:
    precision: float
    recall: float
    f1: float


def _prf(overlap: int, n_cand: int, n_ref: int) -> PRF:
    p = overlap / n_cand if n_cand else 0.0
    r = overlap / n_ref if n_ref else 0.0
    # 2PR / (P + R) reduces to 2 * overlap / (n_cand + n_ref): one rounding instead of four
    f = 2 * overlap / (n_cand + n_ref) if overlap else 0.0
    return PRF(p, r, f)


def _prepare(tokens: Sequence[str], stemming: bool) -> list[str]:
    return [stem(t) for t in tokens] if stemming else list(tokens)


def ngrams(tokens: Sequence[str], n: int) -> Counter:
    return Counter(tuple(tokens[i:i + n]) for i in range(len(tokens) - n + 1))


def rouge_n(candidate: Sequence[str], reference: Sequence[str], n: int = 1, stemming: bool = True) -> PRF:
    """Clipped n-gram overlap precision / recall / F1."""
    if n < 1:
        raise ValueError("ROUGE order must be >= 1")
    cand = ngrams(_prepare(candidate, stemming), n)
    ref = ngrams(_prepare(reference, stemming), n)
    overlap = sum(min(c, ref[g]) for g, c in cand.items())
    return _prf(overlap, sum(cand.values()), sum(ref.values()))


def lcs_length(a: Sequence, b: Sequence) -> int:
    if not a or not b:
        return 0
    prev = [0] * (len(b) + 1)
    for x in a:
        cur = [0]
        for j, y in enumerate(b):
            cur.append(prev[j] + 1 if x == y else max(prev[j + 1], cur[j]))
        prev = cur
    return prev[-1]


def rouge_l(candidate: Sequence[str], reference: Sequence[str], stemming: bool = True) -> PRF:
    """LCS-based precision / recall / F1 over whole token sequences."""
    cand, ref = _prepare(candidate, stemming), _prepare(reference, stemming)
    return _prf(lcs_length(cand, ref), len(cand), len(ref))


def rouge_scores(candidate: Sequence[str], reference: Sequence[str], stemming: bool = True) -> dict:
    return {"rouge-1": rouge_n(candidate, reference, 1, stemming),
            "rouge-2": rouge_n(candidate, reference, 2, stemming),
            "rouge-l": rouge_l(candidate, reference, stemming)}


def corpus_rouge(candidates: Sequence[Sequence[str]], references: Sequence[Sequence[str]],
                 stemming: bool = True) -> dict[str, float]:
    """Mean per-example F1 of ROUGE-1/2/L."""
    if len(candidates) != len(references):
        raise ValueError("candidate and reference counts differ")
    totals = {"rouge-1": 0.0, "rouge-2": 0.0, "rouge-l": 0.0}
    for cand, ref in zip(candidates, references):
        for k, v in rouge_scores(cand, ref, stemming).items():
            totals[k] += v.f1
    n = max(len(candidates), 1)
    return {k: v / n for k, v in totals.items()}


# ----------------------------------------------------------------------
# fact triplets
# ----------------------------------------------------------------------

def _components(t) -> tuple[str, str, str]:
    comps = t.components if isinstance(t, FactTriplet) else tuple(t)
    return tuple(str(c).lower() for c in comps)


def triplets_match(a, b) -> bool:
    """Partial match: at least two of (subject, verb, object) agree."""
    return sum(x == y for x, y in zip(_components(a), _components(b))) >= 2


def match_count(predicted: Sequence, gold: Sequence) -> int:
    """Size of a maximum one-to-one matching, built in prediction order.

    Each prediction first takes a free matching gold triplet; when none is
    free it tries to re-route an earlier assignment (augmenting path).
    """
    owner: dict[int, int] = {}
    edges = [[j for j, g in enumerate(gold) if triplets_match(p, g)] for p in predicted]

    def assign(i: int, visited: set[int]) -> bool:
        for j in edges[i]:
            if j in visited:
                continue
            visited.add(j)
            if j not in owner or assign(owner[j], visited):
                owner[j] = i
                return True
        return False

    return sum(assign(i, set()) for i in range(len(predicted)))


@dataclass(frozen=True)
class FactScore:
    precision: float
    recall: float
    f1: float
    true_positives: int
    n_predicted: int
    n_gold: int


def fact_match_f1(predicted: Sequence[Sequence], gold: Sequence[Sequence]) -> FactScore:
    """Micro-averaged precision/recall/F1 of triplet matches over a corpus."""
    if len(predicted) != len(gold):
        raise ValueError("predicted and gold example counts differ")
    tp = sum(match_count(p, g) for p, g in zip(predicted, gold))
    n_pred = sum(len(p) for p in predicted)
    n_gold = sum(len(g) for g in gold)
    prf = _prf(tp, n_pred, n_gold)
    return FactScore(prf.precision, prf.recall, prf.f1, tp, n_pred, n_gold)


# ----------------------------------------------------------------------
# flow matrices
# ----------------------------------------------------------------------

def bucket_of(utt: int, n_utts: int, n_buckets: int = N_BUCKETS) -> int:
    """Decile bucket of 1-based utterance ``utt``: floor(n_buckets * (utt - 1) / n_utts)."""
    return min((n_buckets * (utt - 1)) // n_utts, n_buckets - 1)


@dataclass
class FlowMatrix:
    """Rows: summary sentences S1..S3; columns: relative-position deciles."""

    cells: np.ndarray
    support: np.ndarray

    @property
    def n_rows(self) -> int:
        return self.cells.shape[0]

    def row_argmax(self, k: int) -> int:
        return int(np.argmax(self.cells[k - 1]))

    def bucket_labels(self) -> list[str]:
        n = self.cells.shape[1]
        labels = [f"[{b / n:.1f}, {(b + 1) / n:.1f})" for b in range(n)]
        labels[-1] = labels[-1][:-1] + "]"
        return labels

    def to_tsv(self) -> str:
        lines = ["range\t" + "\t".join(f"S{k + 1}" for k in range(self.n_rows))]
        for b, label in enumerate(self.bucket_labels()):
            lines.append(label + "\t" + "\t".join(f"{self.cells[k, b]:.4f}" for k in range(self.n_rows)))
        lines.append("n\t" + "\t".join(str(int(s)) for s in self.support))
        return "\n".join(lines) + "\n"

    def to_dict(self) -> dict:
        return {"rows": [f"S{k + 1}" for k in range(self.n_rows)], "buckets": self.bucket_labels(),
                "cells": self.cells.tolist(), "support": self.support.tolist()}


def _normalize_rows(mass: np.ndarray) -> np.ndarray:
    totals = mass.sum(axis=1, keepdims=True)
    return np.divide(mass, totals, out=np.zeros_like(mass), where=totals > 0)


def flow_distribution_table(examples: Iterable[DialogueExample], n_top: int = 2, threshold: float = 0.15,
                            stop_words: frozenset[str] = STOP_WORDS, n_rows: int = N_ROWS,
                            n_buckets: int = N_BUCKETS) -> FlowMatrix:
    """Where the supporting utterances of the first summary sentences sit in the dialogue."""
    counts = np.zeros((n_rows, n_buckets))
    support = np.zeros(n_rows)
    for ex in examples:
        align = build_support_alignment(ex, n_top, threshold, stop_words=stop_words)
        for k, csu in enumerate(align.csu[:n_rows]):
            for utt in csu:
                counts[k, bucket_of(utt, ex.num_utterances, n_buckets)] += 1
            support[k] += len(csu)
    return FlowMatrix(_normalize_rows(counts), support)


def attention_flow_matrix(decoded: Iterable[tuple[Sequence[str], np.ndarray | None]],
                          n_rows: int = N_ROWS, n_buckets: int = N_BUCKETS) -> FlowMatrix:
    """Average utterance attention of each generated sentence over position deciles.

    ``decoded`` yields ``(tokens, alpha_u)`` where ``alpha_u`` has one row per
    generated token (an extra trailing end-token row is allowed).
    """
    mass = np.zeros((n_rows, n_buckets))
    support = np.zeros(n_rows)
    for idx, (tokens, alpha_u) in enumerate(decoded):
        if alpha_u is None:
            raise ValueError(f"decoded output {idx} has no attention trace")
        alpha_u = np.asarray(alpha_u)
        if alpha_u.shape[0] < len(tokens):
            raise ValueError(f"decoded output {idx}: trace has {alpha_u.shape[0]} rows for "
                             f"{len(tokens)} tokens")
        n_utts = alpha_u.shape[1]
        for k, (start, end) in enumerate(split_summary_sentences(list(tokens))[:n_rows]):
            per_utt = alpha_u[start:end].mean(axis=0)
            row = np.zeros(n_buckets)
            for utt in range(1, n_utts + 1):
                row[bucket_of(utt, n_utts, n_buckets)] += per_utt[utt - 1]
            mass[k] += row
            support[k] += 1
    cells = np.divide(mass, support[:, None], out=np.zeros_like(mass), where=support[:, None] > 0)
    return FlowMatrix(_normalize_rows(cells), support)


# ----------------------------------------------------------------------
# corpus statistics
# ----------------------------------------------------------------------

@dataclass(frozen=True)
class CorpusStats:
    count: int
    avg_utterances: float
    avg_dialogue_length: float
    avg_summary_length: float
    triplets_per_sentence: float

    def as_row(self) -> dict:
        return {"count": self.count, "ave_u": self.avg_utterances, "ave_dl": self.avg_dialogue_length,
                "ave_sl": self.avg_summary_length, "triplets_per_sentence": self.triplets_per_sentence}


def corpus_stats(examples: Sequence[DialogueExample], verb_lexicon: frozenset[str] | None = None,
                 stop_words: frozenset[str] = STOP_WORDS) -> CorpusStats:
    """Counts and means; dialogue length excludes separators.

    Triplet density uses the heuristic extractor when ``verb_lexicon`` is
    given, else the examples' gold triplets.
    """
    n = len(examples)
    if n == 0:
        return CorpusStats(0, 0.0, 0.0, 0.0, 0.0)
    n_sent = n_trip = 0
    for ex in examples:
        n_sent += len(split_summary_sentences(ex.summary))
        if verb_lexicon is not None:
            n_trip += len(extract_summary_triplets(ex.summary, verb_lexicon, stop_words))
        else:
            n_trip += len(ex.gold_triplets or [])
    return CorpusStats(
        n,
        sum(ex.num_utterances for ex in examples) / n,
        sum(ex.dialogue_length for ex in examples) / n,
        sum(len(ex.summary) for ex in examples) / n,
        n_trip / n_sent if n_sent else 0.0,
    )
