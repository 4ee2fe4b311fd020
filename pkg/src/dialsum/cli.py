"""``dialsum`` command line: preprocess, train, decode, evaluate, analyze.

Configuration is a flat JSON object; every key and its default is listed
in ``DEFAULTS``. Flags override the file. Relative data paths resolve
against ``data_root`` (config) or the ``DIALSUM_DATA_ROOT`` environment
variable, in that order.

Output layout under ``out_dir``::

    vocab.txt
    data/{train,valid,test}.jsonl
    <run>/seed<N>/model.ckpt, train.log.tsv
    <run>/seed<N>/decoded.jsonl, traces/<k>.trace
    <run>/report.json, report.tsv
    <run>/analysis/...

where ``<run>`` is ``full``, ``no-sufm``, ``no-fr`` or ``no-sufm-no-fr``.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import struct
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import corpus, evaluation
from .checkpoint import Checkpoint, CheckpointError
from .model import ModelConfig, load_word_vectors
from .objectives import LossWeights
from .search import beam_search
from .trainer import TrainConfig, fit

log = logging.getLogger("dialsum")

DATA_ROOT_ENV = "DIALSUM_DATA_ROOT"
SPLITS = ("train", "valid", "test")

DEFAULTS: dict = {
    # data
    "data_root": None,
    "train_file": None,
    "valid_file": None,
    "test_file": None,
    "source_file": None,          # single file to filter and split instead of the three above
    "split_sizes": None,          # [train, valid, test] for source_file
    "split_seed": 0,
    "min_dialogue_tokens": 15,
    "min_summary_tokens": 5,
    "vocab_size": 50000,
    "pretrained_vectors": None,
    "verb_lexicon": None,         # word list file; default is the bundled lexicon
    "out_dir": "runs",
    "seeds": [0, 1, 2],
    "dataset": "samsum",          # picks default loss weights: samsum or avsd
    # model
    "d_e": 300,
    "d": 300,
    "d_up": None,
    "d_sp": None,
    "dropout": 0.2,
    "max_utt_positions": 50,
    "max_sum_positions": 100,
    "use_sufm_embedding": True,
    "use_copy": True,
    # losses
    "lambda1": None,
    "lambda2": None,
    "lambda3": None,
    "enable_sufm_loss": True,
    "enable_fr_loss": True,
    # training
    "batch_size": 32,
    "learning_rate": 0.001,
    "max_grad_norm": 1.0,
    "patience_decay": 1,
    "patience_stop": 3,
    "max_epochs": 30,
    "n_top": 2,
    "jaccard_threshold": 0.15,
    "psu_overlaps_csu": False,
    # decoding
    "beam": 5,
    "min_len": 15,
    "max_len": 100,
    "alpha": 0.9,
    "beta": 5.0,
    "block_bigrams": True,
}

_PATH_KEYS = ("train_file", "valid_file", "test_file", "source_file", "pretrained_vectors", "verb_lexicon")


class ConfigError(ValueError):
    pass


class CommandError(RuntimeError):
    pass


@dataclass
class RunConfig:
    values: dict = field(default_factory=lambda: dict(DEFAULTS))

    def __getitem__(self, key):
        return self.values[key]

    @property
    def seeds(self) -> list[int]:
        return list(self.values["seeds"])

    @property
    def out_dir(self) -> Path:
        return Path(self.values["out_dir"])

    @property
    def run_name(self) -> str:
        sufm = self["use_sufm_embedding"] or self["enable_sufm_loss"]
        fr = self["enable_fr_loss"]
        if sufm and fr:
            return "full"
        return "-".join(["no-sufm"] * (not sufm) + ["no-fr"] * (not fr))

    def run_dir(self) -> Path:
        return self.out_dir / self.run_name

    def seed_dir(self, seed: int) -> Path:
        return self.run_dir() / f"seed{seed}"

    def path(self, key: str) -> Path | None:
        value = self.values.get(key)
        if value is None:
            return None
        p = Path(value)
        root = self.values.get("data_root") or os.environ.get(DATA_ROOT_ENV)
        if not p.is_absolute() and root:
            p = Path(root) / p
        return p

    def model_config(self) -> ModelConfig:
        return ModelConfig.from_dict(self.values)

    def loss_weights(self) -> LossWeights:
        base = LossWeights.avsd() if self["dataset"] == "avsd" else LossWeights.samsum()
        lam = {k: self[k] if self[k] is not None else getattr(base, k) for k in ("lambda1", "lambda2", "lambda3")}
        return LossWeights(**lam, enable_sufm_loss=self["enable_sufm_loss"],
                           enable_fr_loss=self["enable_fr_loss"])

    def train_config(self, seed: int) -> TrainConfig:
        return TrainConfig.from_dict({**self.values, "seed": seed})

    def verb_lexicon(self) -> frozenset[str]:
        p = self.path("verb_lexicon")
        return corpus.load_word_list(p) if p else corpus.default_verb_lexicon()


def load_config(path: str | None, overrides: dict) -> RunConfig:
    values = dict(DEFAULTS)
    if path is not None:
        try:
            raw = json.loads(Path(path).read_text(encoding="utf-8"))
        except FileNotFoundError:
            raise ConfigError(f"config file {path} not found") from None
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config file {path} is not valid JSON: {exc}") from None
        if not isinstance(raw, dict):
            raise ConfigError(f"config file {path} must hold a JSON object")
        unknown = sorted(set(raw) - set(DEFAULTS))
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
        values.update(raw)
    values.update({k: v for k, v in overrides.items() if v is not None})
    cfg = RunConfig(values)
    seeds = cfg["seeds"]
    if isinstance(seeds, int) or not seeds or not all(isinstance(s, int) for s in seeds):
        raise ConfigError("seeds must be a non-empty list of integers")
    if cfg["dataset"] not in ("samsum", "avsd"):
        raise ConfigError("dataset must be 'samsum' or 'avsd'")
    for key in _PATH_KEYS:
        p = cfg.path(key)
        if p is not None and not p.exists():
            raise ConfigError(f"{key}: {p} does not exist")
    try:
        cfg.model_config()
        cfg.loss_weights()
        cfg.train_config(seeds[0])
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from None
    return cfg


# ----------------------------------------------------------------------
# attention trace files
# ----------------------------------------------------------------------

TRACE_MAGIC = b"DSUMTRC1"


def write_trace(path, alpha_u: np.ndarray, alpha_w: np.ndarray, gate: np.ndarray) -> None:
    """Magic, u32 steps / utterances / source tokens, then float64 alpha_u, alpha_w, gate."""
    alpha_u, alpha_w, gate = (np.ascontiguousarray(a, dtype="<f8") for a in (alpha_u, alpha_w, gate))
    steps = alpha_u.shape[0]
    header = TRACE_MAGIC + struct.pack("<III", steps, alpha_u.shape[1], alpha_w.shape[1])
    Path(path).write_bytes(header + alpha_u.tobytes() + alpha_w.tobytes() + gate.tobytes())


def read_trace(path) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    raw = Path(path).read_bytes()
    if raw[:8] != TRACE_MAGIC:
        raise ValueError(f"{path}: not a trace file")
    steps, n_utts, n_tokens = struct.unpack_from("<III", raw, 8)
    data = np.frombuffer(raw, dtype="<f8", offset=20)
    a, b = steps * n_utts, steps * n_utts + steps * n_tokens
    return (data[:a].reshape(steps, n_utts), data[a:b].reshape(steps, n_tokens), data[b:b + steps].copy())


# ----------------------------------------------------------------------
# commands
# ----------------------------------------------------------------------

def _split_path(cfg: RunConfig, split: str) -> Path:
    return cfg.out_dir / "data" / f"{split}.jsonl"


def _load_split(cfg: RunConfig, split: str) -> list[corpus.DialogueExample]:
    p = _split_path(cfg, split)
    if not p.exists():
        raise CommandError(f"{p} missing; run 'dialsum preprocess' first")
    return corpus.load_dataset(p)


def _load_vocab(cfg: RunConfig) -> corpus.Vocabulary:
    p = cfg.out_dir / "vocab.txt"
    if not p.exists():
        raise CommandError(f"{p} missing; run 'dialsum preprocess' first")
    return corpus.Vocabulary.load(p)


def cmd_preprocess(cfg: RunConfig) -> None:
    if cfg["source_file"] is not None:
        if cfg["split_sizes"] is None:
            raise ConfigError("split_sizes is required with source_file")
        pairs = corpus.load_dataset(cfg.path("source_file"))
        if not pairs:
            raise CommandError(f"empty corpus: {cfg.path('source_file')} holds no dialogues")
        try:
            splits = corpus.filter_and_split(pairs, cfg["split_seed"], tuple(cfg["split_sizes"]),
                                             cfg["min_dialogue_tokens"], cfg["min_summary_tokens"])
        except ValueError as exc:
            raise CommandError(str(exc)) from None
        data = dict(zip(SPLITS, splits))
    else:
        data = {}
        for split in SPLITS:
            p = cfg.path(f"{split}_file")
            if p is None:
                if split == "train":
                    raise ConfigError("train_file (or source_file) is required")
                continue
            data[split] = corpus.load_dataset(p)
            if not data[split]:
                raise CommandError(f"empty corpus: {p} holds no dialogues")
    (cfg.out_dir / "data").mkdir(parents=True, exist_ok=True)
    for split, examples in data.items():
        corpus.write_jsonl(_split_path(cfg, split), (corpus.example_to_record(ex) for ex in examples))
        log.info("%s: %d examples", split, len(examples))
    vocab = corpus.build_vocab(corpus.vocab_corpus(data["train"]), cfg["vocab_size"])
    vocab.save(cfg.out_dir / "vocab.txt")
    log.info("vocabulary: %d entries", len(vocab))


def cmd_train(cfg: RunConfig) -> None:
    vocab = _load_vocab(cfg)
    train = _load_split(cfg, "train")
    valid = _load_split(cfg, "valid") if _split_path(cfg, "valid").exists() else []
    vectors = None
    if cfg["pretrained_vectors"] is not None:
        vectors = load_word_vectors(cfg.path("pretrained_vectors"), cfg["d_e"])
    for seed in cfg.seeds:
        out = cfg.seed_dir(seed)
        out.mkdir(parents=True, exist_ok=True)
        result = fit(train, valid, cfg.model_config(), cfg.loss_weights(), cfg.train_config(seed),
                     vocab=vocab, verb_lexicon=cfg.verb_lexicon(), pretrained_vectors=vectors,
                     log_path=out / "train.log.tsv", checkpoint_path=out / "model.ckpt")
        log.info("seed %d: best epoch %d, valid ppl %.4f", seed, result.checkpoint.epoch,
                 result.checkpoint.valid_ppl)


def _decode_split(cfg: RunConfig) -> str:
    return "test" if _split_path(cfg, "test").exists() else "valid"


def cmd_decode(cfg: RunConfig) -> None:
    examples = _load_split(cfg, _decode_split(cfg))
    for seed in cfg.seeds:
        out = cfg.seed_dir(seed)
        ckpt_path = out / "model.ckpt"
        if not ckpt_path.exists():
            raise CommandError(f"checkpoint {ckpt_path} not found; train seed {seed} first")
        try:
            model = Checkpoint.load(ckpt_path).model
        except (CheckpointError, OSError) as exc:
            raise CommandError(str(exc)) from None
        (out / "traces").mkdir(exist_ok=True)
        records = []
        for k, ex in enumerate(examples):
            src = corpus.encode_example(ex, model.vocab)
            res = beam_search(model, src, beam=cfg["beam"], min_len=cfg["min_len"], max_len=cfg["max_len"],
                              alpha=cfg["alpha"], beta=cfg["beta"], block_bigrams=cfg["block_bigrams"])
            trace_name = f"traces/{k}.trace"
            write_trace(out / trace_name, res.trace.alpha_u, res.trace.alpha_w, res.trace.gate)
            summary = " ".join(src.ext_token(i, model.vocab) for i in res.tokens)
            records.append({"id": ex.id, "summary": summary, "trace_file": trace_name})
        corpus.write_jsonl(out / "decoded.jsonl", records)
        log.info("seed %d: decoded %d examples", seed, len(records))


def _load_decoded(cfg: RunConfig, seed: int) -> list[dict]:
    p = cfg.seed_dir(seed) / "decoded.jsonl"
    if not p.exists():
        raise CommandError(f"{p} not found; run 'dialsum decode' first")
    return corpus.read_jsonl(p)


def _mean_std(values: list[float]) -> tuple[float, float]:
    arr = np.asarray(values, dtype=float)
    return float(arr.mean()), float(arr.std(ddof=1)) if len(arr) > 1 else 0.0


def evaluate_run(cfg: RunConfig) -> dict:
    refs = {ex.id: ex for ex in _load_split(cfg, _decode_split(cfg))}
    lexicon = cfg.verb_lexicon()
    per_seed = {}
    for seed in cfg.seeds:
        decoded = _load_decoded(cfg, seed)
        missing = [r["id"] for r in decoded if r["id"] not in refs]
        if missing:
            raise CommandError(f"decoded ids not in the reference split: {missing[:5]}")
        cands = [corpus.tokenize(r["summary"]) for r in decoded]
        golds = [refs[r["id"]] for r in decoded]
        scores = evaluation.corpus_rouge(cands, [g.summary for g in golds])
        pred_trip = [[t.components for t in corpus.extract_summary_triplets(c, lexicon)] for c in cands]
        gold_trip = [[t.components for t in (g.gold_triplets if g.gold_triplets is not None else
                                              corpus.extract_summary_triplets(g.summary, lexicon))]
                     for g in golds]
        scores["fact-f1"] = evaluation.fact_match_f1(pred_trip, gold_trip).f1
        per_seed[str(seed)] = scores
    metrics = ("rouge-1", "rouge-2", "rouge-l", "fact-f1")
    summary = {}
    for m in metrics:
        mean, std = _mean_std([per_seed[str(s)][m] for s in cfg.seeds])
        summary[m] = {"mean": mean, "std": std}
    return {"run": cfg.run_name, "seeds": cfg.seeds, "per_seed": per_seed, "summary": summary}


def cmd_evaluate(cfg: RunConfig) -> None:
    report = evaluate_run(cfg)
    out = cfg.run_dir()
    out.mkdir(parents=True, exist_ok=True)
    (out / "report.json").write_text(json.dumps(report, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    metrics = list(report["summary"])
    lines = ["seed\t" + "\t".join(metrics)]
    for seed in cfg.seeds:
        lines.append(f"{seed}\t" + "\t".join(f"{report['per_seed'][str(seed)][m]:.4f}" for m in metrics))
    lines.append("mean\t" + "\t".join(f"{report['summary'][m]['mean']:.4f}" for m in metrics))
    lines.append("std\t" + "\t".join(f"{report['summary'][m]['std']:.4f}" for m in metrics))
    (out / "report.tsv").write_text("\n".join(lines) + "\n", encoding="utf-8")
    print("\n".join(lines))


def plot_flow(matrix: evaluation.FlowMatrix, path, title: str) -> None:
    """Grouped bars: one group per position bucket, one bar per summary sentence."""
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    n_rows, n_buckets = matrix.cells.shape
    width = 0.8 / n_rows
    x = np.arange(n_buckets)
    fig, ax = plt.subplots(figsize=(9, 3.5))
    for k in range(n_rows):
        ax.bar(x + (k - (n_rows - 1) / 2) * width, matrix.cells[k], width, label=f"S{k + 1}")
    ax.set_xticks(x)
    ax.set_xticklabels(matrix.bucket_labels(), rotation=30, fontsize=8)
    ax.set_xlabel("relative utterance position")
    ax.set_ylabel("share")
    ax.set_title(title)
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, metadata={"Software": None})
    plt.close(fig)


def _write_matrix(matrix: evaluation.FlowMatrix, stem: Path, title: str) -> None:
    stem.with_suffix(".tsv").write_text(matrix.to_tsv(), encoding="utf-8")
    stem.with_suffix(".json").write_text(json.dumps(matrix.to_dict(), indent=2) + "\n", encoding="utf-8")
    plot_flow(matrix, stem.with_suffix(".png"), title)


def cmd_analyze(cfg: RunConfig) -> None:
    out = cfg.run_dir() / "analysis"
    out.mkdir(parents=True, exist_ok=True)
    splits = {s: _load_split(cfg, s) for s in SPLITS if _split_path(cfg, s).exists()}
    lexicon = cfg.verb_lexicon()
    stats = {s: evaluation.corpus_stats(exs, lexicon).as_row() for s, exs in splits.items()}
    (out / "corpus_stats.json").write_text(json.dumps(stats, indent=2) + "\n", encoding="utf-8")

    table = evaluation.flow_distribution_table(splits["train"], cfg["n_top"], cfg["jaccard_threshold"])
    _write_matrix(table, out / "support_flow", "supporting utterance positions")

    per_seed = []
    for seed in cfg.seeds:
        decoded_path = cfg.seed_dir(seed) / "decoded.jsonl"
        if not decoded_path.exists():
            log.warning("seed %d has no decoded output; skipping its attention flow", seed)
            continue
        items = []
        for rec in corpus.read_jsonl(decoded_path):
            alpha_u, _, _ = read_trace(cfg.seed_dir(seed) / rec["trace_file"])
            items.append((corpus.tokenize(rec["summary"]), alpha_u))
        matrix = evaluation.attention_flow_matrix(items)
        _write_matrix(matrix, out / f"attention_flow_seed{seed}", f"attention flow (seed {seed})")
        per_seed.append(matrix)
    if per_seed:
        mean = evaluation.FlowMatrix(np.mean([m.cells for m in per_seed], axis=0),
                                     np.sum([m.support for m in per_seed], axis=0))
        _write_matrix(mean, out / "attention_flow", "attention flow (mean over seeds)")


COMMANDS = {
    "preprocess": cmd_preprocess,
    "train": cmd_train,
    "decode": cmd_decode,
    "evaluate": cmd_evaluate,
    "analyze": cmd_analyze,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dialsum", description=__doc__.split("\n")[0])
    parser.add_argument("command", choices=sorted(COMMANDS))
    parser.add_argument("--config", help="flat JSON config file")
    parser.add_argument("--seed", type=int, action="append", dest="seeds",
                        help="random seed; repeat for several runs")
    parser.add_argument("--ablate-sufm", action="store_true",
                        help="drop the position embeddings and the supporting-utterance loss")
    parser.add_argument("--ablate-fr", action="store_true", help="drop the fact regularization loss")
    parser.add_argument("--beam", type=int)
    parser.add_argument("--min-len", type=int, dest="min_len")
    parser.add_argument("--max-len", type=int, dest="max_len")
    parser.add_argument("--alpha", type=float)
    parser.add_argument("--beta", type=float)
    parser.add_argument("--out", dest="out_dir")
    parser.add_argument("-v", "--verbose", action="store_true")
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    overrides = {k: getattr(args, k) for k in ("seeds", "beam", "min_len", "max_len", "alpha", "beta", "out_dir")}
    if args.ablate_sufm:
        overrides.update(use_sufm_embedding=False, enable_sufm_loss=False)
    if args.ablate_fr:
        overrides["enable_fr_loss"] = False
    try:
        cfg = load_config(args.config, overrides)
        COMMANDS[args.command](cfg)
    except (ConfigError, CommandError) as exc:
        print(f"dialsum {args.command}: error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
