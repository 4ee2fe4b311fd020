"""Generation NLL, supporting-utterance-flow loss, fact regularization."""

from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .corpus import FactTriplet, SourceEncoding, SupportAlignment

LOG_FLOOR = 1e-12


@dataclass
class LossWeights:
    lambda1: float = 0.3
    lambda2: float = 1.0
    lambda3: float = 0.3
    enable_sufm_loss: bool = True
    enable_fr_loss: bool = True

    def __post_init__(self):
        if min(self.lambda1, self.lambda2, self.lambda3) < 0:
            raise ValueError("loss weights must be nonnegative")

    @classmethod
    def samsum(cls) -> "LossWeights":
        return cls(0.3, 1.0, 0.3)

    @classmethod
    def avsd(cls) -> "LossWeights":
        return cls(0.1, 1.0, 0.3)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "LossWeights":
        return cls(**{k: v for k, v in data.items() if k in cls.__dataclass_fields__})


def _neg_log(x: Tensor) -> Tensor:
    return -ad.log(ad.clamp(x, LOG_FLOOR, 1.0))


def generation_loss(step_distributions: Tensor, target_ext_ids: Sequence[int]) -> Tensor:
    """``-sum_t log P(y_t)`` with each probability floored at 1e-12."""
    targets = np.asarray(target_ext_ids, dtype=np.int64)
    if step_distributions.shape[0] != len(targets):
        raise ValueError(f"{step_distributions.shape[0]} distributions for {len(targets)} targets")
    picked = step_distributions[np.arange(len(targets)), targets]
    return ad.tsum(_neg_log(picked))


def _utterance_mask(src: SourceEncoding, utterances) -> np.ndarray:
    wanted = set(utterances)
    return np.array([1.0 if u in wanted else 0.0 for u in src.utt_index])


def sufm_loss(alpha_w_bar: Tensor, align: SupportAlignment, src: SourceEncoding,
              weights: LossWeights) -> Tensor:
    """``sum_k lambda1 * l_CSU_k + lambda2 * l_PSU_k`` over summary sentences.

    ``alpha_w_bar`` is the ``(T, L_x)`` rescaled word attention; rows are
    matched to sentences through the alignment's token spans. The mass
    ratio keeps its denominator even though rows are normalized.
    """
    total = Tensor(0.0)
    steps = alpha_w_bar.shape[0]
    for (start, end), csu, psu in zip(align.spans, align.csu, align.psu):
        end = min(end, steps)
        if start >= end or (not csu and not psu):
            continue
        rows = alpha_w_bar[start:end]
        denom = ad.tsum(rows)
        if csu:
            mass = ad.tsum(ad.matmul(rows, Tensor(_utterance_mask(src, csu)))) / denom
            total = total + weights.lambda1 * _neg_log(mass)
        if psu:
            mass = ad.tsum(ad.matmul(rows, Tensor(_utterance_mask(src, psu)))) / denom
            total = total + weights.lambda2 * _neg_log(1.0 - mass)
    return total


def fr_loss(decoder_states: Tensor, triplets: Sequence[FactTriplet], weights: LossWeights) -> Tensor:
    """``lambda3 * sum_k (1 - cos(s_subj + s_verb, s_obj))`` over raw decoder states.

    Row ``p`` of ``decoder_states`` is the state that emits summary token ``p``.
    """
    total = Tensor(0.0)
    steps = decoder_states.shape[0]
    for trip in triplets:
        if not trip.has_positions() or max(trip.positions) >= steps:
            continue
        head = decoder_states[trip.subj_pos] + decoder_states[trip.verb_pos]
        total = total + weights.lambda3 * (1.0 - ad.cosine_similarity(head, decoder_states[trip.obj_pos]))
    return total


def joint_loss(l_g, l_sufm, l_fr, weights: LossWeights):
    """``l_G + l_SUFM + l_FR`` with disabled components dropped."""
    total = l_g
    if weights.enable_sufm_loss:
        total = total + l_sufm
    if weights.enable_fr_loss:
        total = total + l_fr
    return total
