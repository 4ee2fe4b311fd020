"""Seeded toy corpora with a known supporting-utterance flow.

Each dialogue is cut into ``n_blocks`` consecutive blocks of utterances.
Block k holds exactly one content utterance ``<name> : i <verb> the <object> .``
and the rest are content-free filler turns. Summary sentence k restates
block k's fact, so its supporting utterance lies in block k and its gold
triplet is ``(name, verb, object)``.
"""

from __future__ import annotations

import numpy as np

from .corpus import DialogueExample, FactTriplet

NAMES = ("tom", "ann", "bob", "eve", "joe", "kim", "sam", "liz", "max", "amy", "dan", "sue")
VERBS = ("bought", "sold", "fixed", "washed", "painted", "found", "lost", "cooked", "borrowed", "moved")
OBJECTS = ("car", "bike", "cake", "boat", "lamp", "desk", "book", "shirt", "phone", "chair", "tent",
           "kite", "sofa", "clock")
FILLERS = (
    ("really", "?"),
    ("wow", ",", "nice", "!"),
    ("sounds", "good", "."),
    ("ok", ",", "cool", "."),
    ("haha", "great", "."),
    ("no", "way", "!"),
)


def flow_verb_lexicon() -> frozenset[str]:
    return frozenset(VERBS)


def make_flow_example(rng: np.random.Generator, idx: int, n_blocks: int = 3,
                      utts_per_block: int = 2) -> DialogueExample:
    names = rng.choice(len(NAMES), n_blocks, replace=False)
    verbs = rng.choice(len(VERBS), n_blocks, replace=False)
    objs = rng.choice(len(OBJECTS), n_blocks, replace=False)
    utterances: list[list[str]] = []
    summary: list[str] = []
    triplets: list[FactTriplet] = []
    for k in range(n_blocks):
        name, verb, obj = NAMES[names[k]], VERBS[verbs[k]], OBJECTS[objs[k]]
        content_at = int(rng.integers(utts_per_block))
        for slot in range(utts_per_block):
            if slot == content_at:
                utterances.append([name, ":", "i", verb, "the", obj, "."])
            else:
                utterances.append(list(FILLERS[int(rng.integers(len(FILLERS)))]))
        base = len(summary)
        summary.extend([name, verb, "the", obj, "."])
        triplets.append(FactTriplet(name, verb, obj, base, base + 1, base + 3))
    return DialogueExample(f"flow-{idx}", utterances, summary, triplets)


def make_flow_corpus(n: int, seed: int, n_blocks: int = 3, utts_per_block: int = 2,
                     start_index: int = 0) -> list[DialogueExample]:
    rng = np.random.default_rng(seed)
    return [make_flow_example(rng, start_index + i, n_blocks, utts_per_block) for i in range(n)]


def block_of_utterance(utt: int, n_utts: int, n_blocks: int = 3) -> int:
    """1-based block index of 1-based utterance ``utt`` in an evenly blocked dialogue."""
    return (utt - 1) * n_blocks // n_utts + 1


def block_buckets(k: int, n_utts: int, n_blocks: int = 3, n_buckets: int = 10) -> set[int]:
    """Position-decile buckets occupied by block k's utterances."""
    return {min((n_buckets * (u - 1)) // n_utts, n_buckets - 1)
            for u in range(1, n_utts + 1) if block_of_utterance(u, n_utts, n_blocks) == k}
