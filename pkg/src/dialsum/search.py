"""Beam search with length/coverage penalties and repeated-bigram blocking.

The searched model only needs two methods::

    start(src) -> (context, initial_states)            # states: (1, d)
    step(context, src, states, prev_ids, t)
        -> (new_states, probs, alpha_u, alpha_w, gate)  # one row per hypothesis

:class:`dialsum.model.Summarizer` implements them; tests use small mocks.
Lengths: ``max_len`` bounds the number of decoding steps (the end token
included), ``min_len`` the number of tokens emitted before the end token.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .model import AttentionTrace

COVERAGE_FLOOR = 1e-12


def length_penalty(length: int, alpha: float) -> float:
    """((5 + length) / 6) ** alpha."""
    if length < 1:
        raise ValueError("length penalty needs length >= 1")
    return ((5.0 + length) / 6.0) ** alpha


def coverage_penalty(attention_sums: Sequence[float], beta: float) -> float:
    """beta * sum_j log(min(sum_j, 1)), each term floored at 1e-12."""
    sums = np.asarray(attention_sums, dtype=np.float64)
    if beta == 0.0 or sums.size == 0:
        return 0.0
    return float(beta * np.log(np.maximum(np.minimum(sums, 1.0), COVERAGE_FLOOR)).sum())


def bigram_blocked(tokens: Sequence[int], candidate: int) -> bool:
    """True iff appending ``candidate`` repeats a bigram already in ``tokens``."""
    if not tokens:
        return False
    last = tokens[-1]
    return any(a == last and b == candidate for a, b in zip(tokens, tokens[1:]))


@dataclass
class BeamHypothesis:
    tokens: tuple[int, ...]
    log_prob: float
    attention_sums: np.ndarray
    state: np.ndarray
    rows: tuple = ()
    finished: bool = False

    def trace(self, n_utts: int, n_tokens: int) -> AttentionTrace:
        if not self.rows:
            return AttentionTrace.empty(n_utts, n_tokens)
        au, aw, g = zip(*self.rows)
        return AttentionTrace(np.vstack(au), np.vstack(aw), np.asarray(g, dtype=np.float64))


@dataclass
class SearchResult:
    tokens: list[int]
    score: float
    log_prob: float
    trace: AttentionTrace
    finished: bool
    candidates: list[tuple[float, tuple[int, ...]]] = field(default_factory=list)


def final_score(hyp: BeamHypothesis, alpha: float, beta: float) -> float:
    return hyp.log_prob / length_penalty(max(len(hyp.tokens), 1), alpha) + \
        coverage_penalty(hyp.attention_sums, beta)


def _ids(model, bos_id, eos_id):
    vocab = getattr(model, "vocab", None)
    if bos_id is None:
        bos_id = vocab.bos_id
    if eos_id is None:
        eos_id = vocab.eos_id
    return bos_id, eos_id


def _expand(model, context, src, live, step, bos_id):
    states = np.vstack([h.state for h in live])
    prev = [h.tokens[-1] if h.tokens else bos_id for h in live]
    return model.step(context, src, states, prev, step)


def beam_search(model, src, beam: int = 5, min_len: int = 15, max_len: int = 100,
                alpha: float = 0.9, beta: float = 5.0, *, block_bigrams: bool = True,
                coverage_per_step: bool = False, bos_id: int | None = None,
                eos_id: int | None = None) -> SearchResult:
    """Return the best finished hypothesis (or the best unfinished one at ``max_len``).

    Live hypotheses are ranked by cumulative log-probability (or by the full
    score when ``coverage_per_step``); finished ones by
    ``logP / length_penalty + coverage_penalty``. Equal scores go to the
    lexicographically smaller id sequence.
    """
    if beam < 1 or max_len < 1:
        raise ValueError("beam and max_len must be >= 1")
    bos_id, eos_id = _ids(model, bos_id, eos_id)
    context, init_state = model.start(src)
    n_tokens = len(src)
    n_utts = getattr(src, "num_utterances", 1)
    live = [BeamHypothesis((), 0.0, np.zeros(n_tokens), np.asarray(init_state)[0])]
    finished: list[BeamHypothesis] = []

    for step in range(1, max_len + 1):
        new_states, probs, alpha_u, alpha_w, gate = _expand(model, context, src, live, step, bos_id)
        with np.errstate(divide="ignore"):
            logp = np.log(probs)
        candidates = []
        for b, hyp in enumerate(live):
            sums = hyp.attention_sums + alpha_w[b]
            for tok in np.flatnonzero(np.isfinite(logp[b])):
                tok = int(tok)
                if tok == eos_id and len(hyp.tokens) < min_len:
                    continue
                if block_bigrams and bigram_blocked(hyp.tokens, tok):
                    continue
                total = hyp.log_prob + float(logp[b, tok])
                tokens = hyp.tokens + (tok,)
                rank = total
                if coverage_per_step:
                    rank = total / length_penalty(len(tokens), alpha) + coverage_penalty(sums, beta)
                candidates.append((-rank, tokens, b, total))
        if not candidates:
            break
        candidates.sort(key=lambda c: (c[0], c[1]))
        next_live = []
        for _, tokens, b, total in candidates:
            if len(next_live) >= beam:
                break
            hyp = live[b]
            child = BeamHypothesis(tokens, total, hyp.attention_sums + alpha_w[b], new_states[b],
                                   hyp.rows + ((alpha_u[b], alpha_w[b], float(gate[b])),),
                                   finished=tokens[-1] == eos_id)
            (finished if child.finished else next_live).append(child)
        live = next_live
        if not live or len(finished) >= beam:
            break

    pool = finished if finished else live
    scored = [(final_score(h, alpha, beta), h) for h in pool]
    scored.sort(key=lambda sh: (-sh[0], sh[1].tokens))
    best_score, best = scored[0]
    tokens = list(best.tokens[:-1] if best.finished else best.tokens)
    return SearchResult(tokens, best_score, best.log_prob, best.trace(n_utts, n_tokens), best.finished,
                        [(s, h.tokens) for s, h in scored])


def greedy_decode(model, src, min_len: int = 15, max_len: int = 100, *, block_bigrams: bool = True,
                  bos_id: int | None = None, eos_id: int | None = None) -> SearchResult:
    """Pick the most probable allowed token at every step."""
    bos_id, eos_id = _ids(model, bos_id, eos_id)
    context, state = model.start(src)
    tokens: list[int] = []
    log_prob = 0.0
    rows = []
    done = False
    for step in range(1, max_len + 1):
        state, probs, alpha_u, alpha_w, gate = model.step(
            context, src, state, [tokens[-1] if tokens else bos_id], step)
        p = np.array(probs[0], dtype=np.float64)
        if len(tokens) < min_len:
            p[eos_id] = 0.0
        if block_bigrams:
            for tok in range(len(p)):
                if p[tok] > 0 and bigram_blocked(tokens, tok):
                    p[tok] = 0.0
        if not np.any(p > 0):
            break
        tok = int(np.argmax(p))
        log_prob += math.log(p[tok])
        rows.append((alpha_u[0], alpha_w[0], float(gate[0])))
        if tok == eos_id:
            done = True
            break
        tokens.append(tok)
    if rows:
        au, aw, g = zip(*rows)
        trace = AttentionTrace(np.vstack(au), np.vstack(aw), np.asarray(g))
    else:
        trace = AttentionTrace.empty(getattr(src, "num_utterances", 1), len(src))
    return SearchResult(tokens, log_prob, log_prob, trace, done)
