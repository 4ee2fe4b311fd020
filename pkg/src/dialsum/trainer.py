"""Adam training loop with global-norm clipping, LR halving and early stopping."""

from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .autodiff import ParameterStore, no_grad
from .checkpoint import Checkpoint
from .corpus import (
    STOP_WORDS,
    DialogueExample,
    FactTriplet,
    SourceEncoding,
    SupportAlignment,
    Vocabulary,
    build_support_alignment,
    build_vocab,
    encode_example,
    extract_summary_triplets,
    vocab_corpus,
)
from .model import ModelConfig, Summarizer
from .objectives import LossWeights, fr_loss, generation_loss, joint_loss, sufm_loss

log = logging.getLogger(__name__)

LOG_COLUMNS = ("epoch", "lr", "train_loss", "train_nll_per_token", "train_l_g", "train_l_sufm",
               "train_l_fr", "valid_ppl", "max_grad_norm_after_clip")


class TrainingDiverged(RuntimeError):
    pass


@dataclass
class TrainConfig:
    batch_size: int = 32
    learning_rate: float = 0.001
    max_grad_norm: float = 1.0
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    patience_decay: int = 1
    patience_stop: int = 3
    max_epochs: int = 30
    seed: int = 0
    n_top: int = 2
    jaccard_threshold: float = 0.15
    psu_overlaps_csu: bool = False

    def __post_init__(self):
        positive = ("batch_size", "learning_rate", "max_grad_norm", "adam_eps", "patience_decay",
                    "patience_stop", "max_epochs", "n_top")
        for name in positive:
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.patience_stop < self.patience_decay:
            raise ValueError("patience_stop must be >= patience_decay")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "TrainConfig":
        return cls(**{k: v for k, v in data.items() if k in cls.__dataclass_fields__})


@dataclass
class PreparedExample:
    example: DialogueExample
    src: SourceEncoding
    targets: list[int]
    alignment: SupportAlignment
    triplets: list[FactTriplet]

    @property
    def n_tokens(self) -> int:
        return len(self.targets)


def prepare_example(ex: DialogueExample, vocab: Vocabulary, n_top: int = 2, threshold: float = 0.15,
                    psu_overlaps_csu: bool = False, verb_lexicon: frozenset[str] | None = None,
                    stop_words: frozenset[str] = STOP_WORDS) -> PreparedExample:
    """Encode source and targets (summary + end token), alignment and triplets.

    Gold triplets from the data are used when present, otherwise the
    heuristic extractor runs on the reference summary.
    """
    src = encode_example(ex, vocab)
    targets = src.target_ext_ids(ex.summary, vocab) + [vocab.eos_id]
    align = build_support_alignment(ex, n_top, threshold, psu_overlaps_csu, stop_words)
    if ex.gold_triplets is not None:
        triplets = [t for t in ex.gold_triplets if t.has_positions()]
    elif verb_lexicon is not None:
        triplets = extract_summary_triplets(ex.summary, verb_lexicon, stop_words)
    else:
        triplets = []
    return PreparedExample(ex, src, targets, align, triplets)


def example_losses(model: Summarizer, prep: PreparedExample, weights: LossWeights, *,
                   training: bool = False, rng: np.random.Generator | None = None) -> dict:
    out = model.forward(prep.src, prep.targets, training=training, rng=rng)
    l_g = generation_loss(out.probs, prep.targets)
    l_sufm = sufm_loss(out.alpha_w, prep.alignment, prep.src, weights)
    l_fr = fr_loss(out.states, prep.triplets, weights)
    return {"loss": joint_loss(l_g, l_sufm, l_fr, weights), "l_g": l_g, "l_sufm": l_sufm, "l_fr": l_fr,
            "output": out}


# ----------------------------------------------------------------------
# optimizer pieces
# ----------------------------------------------------------------------

def global_norm(grads: dict[str, np.ndarray]) -> float:
    return math.sqrt(sum(float(np.sum(g * g)) for g in grads.values()))


def clip_gradients(grads: dict[str, np.ndarray], max_norm: float) -> tuple[dict[str, np.ndarray], float]:
    """Scale all gradients by max_norm / norm when the global L2 norm exceeds max_norm.

    Returns the (possibly rescaled) gradients and the pre-clip norm.
    """
    if max_norm <= 0:
        raise ValueError("max_norm must be positive")
    norm = global_norm(grads)
    if norm <= max_norm:
        return grads, norm
    scale = max_norm / norm
    return {k: g * scale for k, g in grads.items()}, norm


@dataclass
class AdamState:
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    step: int = 0


def adam_step(params: ParameterStore, grads: dict[str, np.ndarray], state: AdamState, lr: float,
              betas: tuple[float, float] = (0.9, 0.999), eps: float = 1e-8) -> AdamState:
    """Bias-corrected Adam update applied in place to ``params``."""
    b1, b2 = betas
    state.step += 1
    c1 = 1.0 - b1 ** state.step
    c2 = 1.0 - b2 ** state.step
    for name, g in grads.items():
        m = state.m.get(name)
        if m is None:
            m = state.m[name] = np.zeros_like(g)
            state.v[name] = np.zeros_like(g)
        v = state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        params[name].data -= lr * (m / c1) / (np.sqrt(v / c2) + eps)
    return state


# ----------------------------------------------------------------------
# evaluation helpers
# ----------------------------------------------------------------------

def validation_perplexity(model: Summarizer, data: Sequence[PreparedExample]) -> float:
    """exp(generation NLL per target token), dropout off."""
    total, tokens = 0.0, 0
    with no_grad():
        for prep in data:
            out = model.forward(prep.src, prep.targets)
            total += float(generation_loss(out.probs, prep.targets).data)
            tokens += prep.n_tokens
    return math.exp(total / max(tokens, 1))


def average_losses(model: Summarizer, data: Sequence[PreparedExample], weights: LossWeights) -> dict:
    """Per-example mean of each loss component in eval mode (all components computed)."""
    sums = {"l_g": 0.0, "l_sufm": 0.0, "l_fr": 0.0, "tokens": 0}
    with no_grad():
        for prep in data:
            parts = example_losses(model, prep, weights)
            for k in ("l_g", "l_sufm", "l_fr"):
                sums[k] += float(parts[k].data)
            sums["tokens"] += prep.n_tokens
    n = max(len(data), 1)
    return {"l_g": sums["l_g"] / n, "l_sufm": sums["l_sufm"] / n, "l_fr": sums["l_fr"] / n,
            "nll_per_token": sums["l_g"] / max(sums["tokens"], 1)}


# ----------------------------------------------------------------------
# fit
# ----------------------------------------------------------------------

@dataclass
class FitResult:
    checkpoint: Checkpoint
    history: list[dict]
    final_model: Summarizer


def _write_log_row(path: Path | None, row: dict, header: bool) -> None:
    if path is None:
        return
    with open(path, "a" if not header else "w", encoding="utf-8") as fh:
        if header:
            fh.write("\t".join(LOG_COLUMNS) + "\n")
        fh.write("\t".join(_fmt(row[c]) for c in LOG_COLUMNS) + "\n")


def _fmt(value) -> str:
    if isinstance(value, float):
        return f"{value:.6g}"
    return str(value)


def fit(train: Sequence[DialogueExample | PreparedExample],
        valid: Sequence[DialogueExample | PreparedExample],
        model_config: ModelConfig, weights: LossWeights, train_config: TrainConfig, *,
        vocab: Vocabulary | None = None, verb_lexicon: frozenset[str] | None = None,
        pretrained_vectors=None, log_path=None, checkpoint_path=None,
        on_epoch: Callable[[dict], None] | None = None) -> FitResult:
    """Train from scratch and return the best-validation checkpoint.

    Each epoch: seeded shuffle, batches of ``batch_size`` examples, mean
    joint loss per batch, backward, global-norm clip, Adam. After the epoch
    the validation perplexity decides LR halving (``patience_decay``
    non-improving epochs) and early stopping (``patience_stop``).
    """
    if not train:
        raise ValueError("training data is empty")
    tc = train_config
    if vocab is None:
        raw = [p.example if isinstance(p, PreparedExample) else p for p in train]
        vocab = build_vocab(vocab_corpus(raw))

    def prep(items):
        return [p if isinstance(p, PreparedExample) else
                prepare_example(p, vocab, tc.n_top, tc.jaccard_threshold, tc.psu_overlaps_csu, verb_lexicon)
                for p in items]

    train_p, valid_p = prep(train), prep(valid if valid else train)
    model = Summarizer.create(model_config, vocab, tc.seed, pretrained_vectors)
    order_rng = np.random.default_rng([tc.seed, 0])
    dropout_rng = np.random.default_rng([tc.seed, 1])
    adam = AdamState()
    lr = tc.learning_rate
    best_ppl, best_state, best_epoch = float("inf"), model.params.state(), 0
    bad_epochs = 0
    history: list[dict] = []
    log_path = Path(log_path) if log_path else None

    for epoch in range(1, tc.max_epochs + 1):
        order = order_rng.permutation(len(train_p))
        sums = {"loss": 0.0, "l_g": 0.0, "l_sufm": 0.0, "l_fr": 0.0}
        tokens = 0
        max_clipped = 0.0
        for start in range(0, len(order), tc.batch_size):
            batch = [train_p[i] for i in order[start:start + tc.batch_size]]
            model.params.zero_grad()
            for item in batch:
                parts = example_losses(model, item, weights, training=True, rng=dropout_rng)
                value = float(parts["loss"].data)
                if not math.isfinite(value):
                    raise TrainingDiverged(
                        f"non-finite loss {value} at epoch {epoch} on example {item.example.id!r} "
                        f"(l_g={float(parts['l_g'].data)}, l_sufm={float(parts['l_sufm'].data)}, "
                        f"l_fr={float(parts['l_fr'].data)}, lr={lr})")
                (parts["loss"] * (1.0 / len(batch))).backward()
                for k in sums:
                    sums[k] += float(parts[k].data)
                tokens += item.n_tokens
            grads, _ = clip_gradients(model.params.grads(), tc.max_grad_norm)
            max_clipped = max(max_clipped, global_norm(grads))
            adam_step(model.params, grads, adam, lr, (tc.beta1, tc.beta2), tc.adam_eps)
        model.params.zero_grad()

        ppl = validation_perplexity(model, valid_p)
        if not math.isfinite(ppl):
            raise TrainingDiverged(f"validation perplexity became {ppl} at epoch {epoch}")
        n = len(train_p)
        row = {"epoch": epoch, "lr": lr, "train_loss": sums["loss"] / n,
               "train_nll_per_token": sums["l_g"] / max(tokens, 1), "train_l_g": sums["l_g"] / n,
               "train_l_sufm": sums["l_sufm"] / n, "train_l_fr": sums["l_fr"] / n, "valid_ppl": ppl,
               "max_grad_norm_after_clip": max_clipped}
        history.append(row)
        _write_log_row(log_path, row, header=epoch == 1)
        log.info("epoch %d lr %.3g loss %.4f nll/tok %.4f valid ppl %.4f", epoch, lr, row["train_loss"],
                 row["train_nll_per_token"], ppl)
        if on_epoch is not None:
            on_epoch(row)

        if ppl < best_ppl:
            best_ppl, best_state, best_epoch = ppl, model.params.state(), epoch
            bad_epochs = 0
            if checkpoint_path is not None:
                _snapshot(model, best_state, best_epoch, best_ppl, tc, weights).save(checkpoint_path)
        else:
            bad_epochs += 1
            if bad_epochs % tc.patience_decay == 0:
                lr /= 2.0
            if bad_epochs >= tc.patience_stop:
                break

    best = _snapshot(model, best_state, best_epoch, best_ppl, tc, weights)
    if checkpoint_path is not None:
        best.save(checkpoint_path)
    return FitResult(best, history, model)


def _snapshot(model: Summarizer, state: dict, epoch: int, ppl: float, tc: TrainConfig,
              weights: LossWeights) -> Checkpoint:
    params = model.params.copy()
    params.load_state(state)
    return Checkpoint(Summarizer(model.config, model.vocab, params, dict(model.meta)), epoch, ppl,
                      tc.to_dict(), weights.to_dict())
