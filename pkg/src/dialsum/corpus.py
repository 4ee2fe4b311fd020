"""Dataset ingestion, vocabulary, supporting utterances and fact triplets.

Utterance indices are 1-based everywhere in this module (utterance ``i`` is
``ex.utterances[i - 1]``); token positions are 0-based.
"""

from __future__ import annotations

import json
import string
from collections import Counter
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

PAD, UNK, BOS, EOS, SEP = "<pad>", "<unk>", "<s>", "</s>", "|"
SPECIALS = (PAD, UNK, BOS, EOS, SEP)
SENTENCE_END = frozenset({".", "!", "?"})
PUNCTUATION = frozenset(string.punctuation)


@dataclass(frozen=True)
class FactTriplet:
    subject: str
    verb: str
    object: str
    subj_pos: int = -1
    verb_pos: int = -1
    obj_pos: int = -1

    @property
    def components(self) -> tuple[str, str, str]:
        return (self.subject, self.verb, self.object)

    @property
    def positions(self) -> tuple[int, int, int]:
        return (self.subj_pos, self.verb_pos, self.obj_pos)

    def has_positions(self) -> bool:
        return min(self.positions) >= 0


@dataclass
class DialogueExample:
    id: str
    utterances: list[list[str]]
    summary: list[str]
    gold_triplets: list[FactTriplet] | None = None

    def __post_init__(self):
        if not self.utterances or any(len(u) == 0 for u in self.utterances):
            raise ValueError(f"example {self.id!r}: utterances must be non-empty")

    @property
    def num_utterances(self) -> int:
        return len(self.utterances)

    @property
    def dialogue_length(self) -> int:
        return sum(len(u) for u in self.utterances)


@dataclass
class Vocabulary:
    itos: list[str]
    stoi: dict[str, int] = field(init=False)

    def __post_init__(self):
        self.stoi = {tok: i for i, tok in enumerate(self.itos)}
        if len(self.stoi) != len(self.itos):
            raise ValueError("vocabulary entries must be unique")

    def __len__(self) -> int:
        return len(self.itos)

    def __contains__(self, token: str) -> bool:
        return token in self.stoi

    def id(self, token: str) -> int:
        return self.stoi.get(token, self.unk_id)

    pad_id = property(lambda self: self.stoi[PAD])
    unk_id = property(lambda self: self.stoi[UNK])
    bos_id = property(lambda self: self.stoi[BOS])
    eos_id = property(lambda self: self.stoi[EOS])
    sep_id = property(lambda self: self.stoi[SEP])

    def save(self, path) -> None:
        Path(path).write_text("\n".join(self.itos) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path) -> "Vocabulary":
        lines = Path(path).read_text(encoding="utf-8").split("\n")
        if lines and lines[-1] == "":
            lines.pop()
        return cls(lines)


@dataclass
class SourceEncoding:
    token_ids: list[int]
    utt_index: list[int]
    ext_ids: list[int]
    ext_vocab: list[str]
    tokens: list[str]
    vocab_size: int

    def __len__(self) -> int:
        return len(self.token_ids)

    @property
    def num_utterances(self) -> int:
        return self.utt_index[-1]

    @property
    def ext_size(self) -> int:
        return self.vocab_size + len(self.ext_vocab)

    def ext_token(self, ext_id: int, vocab: Vocabulary) -> str:
        if ext_id < self.vocab_size:
            return vocab.itos[ext_id]
        return self.ext_vocab[ext_id - self.vocab_size]

    def target_ext_ids(self, summary: Sequence[str], vocab: Vocabulary) -> list[int]:
        """Summary tokens as extended-vocabulary ids (source-only OOVs are copyable)."""
        ext_lookup = {tok: self.vocab_size + i for i, tok in enumerate(self.ext_vocab)}
        out = []
        for tok in summary:
            if tok in vocab:
                out.append(vocab.stoi[tok])
            else:
                out.append(ext_lookup.get(tok, vocab.unk_id))
        return out


@dataclass
class SupportAlignment:
    spans: list[tuple[int, int]]
    csu: list[frozenset[int]]
    psu: list[frozenset[int]]

    def __len__(self) -> int:
        return len(self.spans)


# ----------------------------------------------------------------------
# word lists
# ----------------------------------------------------------------------

def _read_word_list(text: str) -> frozenset[str]:
    return frozenset(line.strip() for line in text.splitlines() if line.strip())


def load_word_list(path) -> frozenset[str]:
    """One token per line, UTF-8."""
    return _read_word_list(Path(path).read_text(encoding="utf-8"))


def default_stop_words() -> frozenset[str]:
    return _read_word_list(resources.files("dialsum.data").joinpath("stopwords.txt").read_text("utf-8"))


def default_verb_lexicon() -> frozenset[str]:
    return _read_word_list(resources.files("dialsum.data").joinpath("verbs.txt").read_text("utf-8"))


STOP_WORDS = default_stop_words()


def is_content(token: str, stop_words: frozenset[str] = STOP_WORDS) -> bool:
    return token not in stop_words and not all(ch in PUNCTUATION for ch in token)


# ----------------------------------------------------------------------
# tokenization and vocabulary
# ----------------------------------------------------------------------

def tokenize(text: str) -> list[str]:
    """Lowercase, split on whitespace, then peel punctuation off both ends.

    Every leading/trailing punctuation character becomes its own token;
    punctuation inside a word (``don't``, ``e-mail``, ``3.5``) is kept.
    """
    tokens: list[str] = []
    for chunk in text.lower().split():
        start, end = 0, len(chunk)
        while start < end and chunk[start] in PUNCTUATION:
            start += 1
        while end > start and chunk[end - 1] in PUNCTUATION:
            end -= 1
        tokens.extend(chunk[:start])
        if start < end:
            tokens.append(chunk[start:end])
        tokens.extend(chunk[end:])
    return tokens


def build_vocab(corpus: Iterable[Sequence[str]], max_size: int = 50000) -> Vocabulary:
    """Specials first, then corpus tokens by descending count (ties: lexicographic)."""
    counts = Counter(tok for seq in corpus for tok in seq if tok not in SPECIALS)
    ranked = sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))[:max(max_size, 0)]
    return Vocabulary(list(SPECIALS) + [tok for tok, _ in ranked])


def vocab_corpus(examples: Iterable[DialogueExample]) -> Iterable[list[str]]:
    """Dialogue and summary tokens pooled into one stream of sequences."""
    for ex in examples:
        yield from ex.utterances
        yield ex.summary


def encode_example(ex: DialogueExample, vocab: Vocabulary) -> SourceEncoding:
    tokens, utt_index = [], []
    for i, utt in enumerate(ex.utterances, start=1):
        tokens.extend(utt)
        tokens.append(SEP)
        utt_index.extend([i] * (len(utt) + 1))
    ext_vocab: list[str] = []
    ext_lookup: dict[str, int] = {}
    token_ids, ext_ids = [], []
    for tok in tokens:
        if tok in vocab:
            token_ids.append(vocab.stoi[tok])
            ext_ids.append(vocab.stoi[tok])
            continue
        token_ids.append(vocab.unk_id)
        if tok not in ext_lookup:
            ext_lookup[tok] = len(vocab) + len(ext_vocab)
            ext_vocab.append(tok)
        ext_ids.append(ext_lookup[tok])
    return SourceEncoding(token_ids, utt_index, ext_ids, ext_vocab, tokens, len(vocab))


# ----------------------------------------------------------------------
# supporting utterances
# ----------------------------------------------------------------------

def jaccard(a: Iterable[str], b: Iterable[str]) -> float:
    a, b = set(a), set(b)
    union = a | b
    if not union:
        return 0.0
    return len(a & b) / len(union)


def content_set(tokens: Iterable[str], stop_words: frozenset[str] = STOP_WORDS) -> set[str]:
    return {t for t in tokens if is_content(t, stop_words)}


def utterance_similarities(sentence: Sequence[str], dialogue: DialogueExample,
                           stop_words: frozenset[str] = STOP_WORDS) -> list[float]:
    sent = content_set(sentence, stop_words)
    return [jaccard(sent, content_set(u, stop_words)) for u in dialogue.utterances]


def select_supporting_utterances(sentence: Sequence[str], dialogue: DialogueExample,
                                 n_top: int = 2, threshold: float = 0.15,
                                 stop_words: frozenset[str] = STOP_WORDS) -> frozenset[int]:
    """Up to ``n_top`` utterance indices with similarity >= ``threshold``.

    Ranking is by similarity, ties going to the earlier utterance.
    """
    sims = utterance_similarities(sentence, dialogue, stop_words)
    ranked = sorted(range(len(sims)), key=lambda i: (-sims[i], i))
    return frozenset(i + 1 for i in ranked[:n_top] if sims[i] >= threshold)


def split_summary_sentences(summary: Sequence[str]) -> list[tuple[int, int]]:
    """Half-open ``(start, end)`` spans split after ``.``, ``!`` or ``?``."""
    spans, start = [], 0
    for pos, tok in enumerate(summary):
        if tok in SENTENCE_END:
            spans.append((start, pos + 1))
            start = pos + 1
    if start < len(summary):
        spans.append((start, len(summary)))
    return spans


def build_support_alignment(ex: DialogueExample, n_top: int = 2, threshold: float = 0.15,
                            psu_overlaps_csu: bool = False,
                            stop_words: frozenset[str] = STOP_WORDS) -> SupportAlignment:
    """Per-sentence CSU/PSU sets.

    PSU_k is the union of earlier CSU sets; by default the current CSU_k is
    removed from it so the two losses never pull on the same utterance.
    """
    spans = split_summary_sentences(ex.summary)
    csu, psu = [], []
    seen: set[int] = set()
    for start, end in spans:
        current = select_supporting_utterances(ex.summary[start:end], ex, n_top, threshold, stop_words)
        prior = frozenset(seen) if psu_overlaps_csu else frozenset(seen - current)
        csu.append(current)
        psu.append(prior)
        seen |= current
    return SupportAlignment(spans, csu, psu)


# ----------------------------------------------------------------------
# fact triplets
# ----------------------------------------------------------------------

def extract_triplets(sentence: Sequence[str], verb_lexicon: frozenset[str], offset: int = 0,
                     stop_words: frozenset[str] = STOP_WORDS) -> list[FactTriplet]:
    """Heuristic SVO extraction, at most one triplet per sentence.

    The verb is the first lexicon token; subject and object are the nearest
    content tokens before and after it. Sentences missing a component are
    skipped. Positions are ``offset`` + index into ``sentence``.
    """
    verb_at = next((i for i, tok in enumerate(sentence) if tok in verb_lexicon), None)
    if verb_at is None:
        return []
    subj_at = next((i for i in range(verb_at - 1, -1, -1) if is_content(sentence[i], stop_words)), None)
    obj_at = next((i for i in range(verb_at + 1, len(sentence)) if is_content(sentence[i], stop_words)),
                  None)
    if subj_at is None or obj_at is None:
        return []
    return [FactTriplet(sentence[subj_at], sentence[verb_at], sentence[obj_at],
                        offset + subj_at, offset + verb_at, offset + obj_at)]


def extract_summary_triplets(summary: Sequence[str], verb_lexicon: frozenset[str],
                             stop_words: frozenset[str] = STOP_WORDS) -> list[FactTriplet]:
    out = []
    for start, end in split_summary_sentences(summary):
        out.extend(extract_triplets(summary[start:end], verb_lexicon, start, stop_words))
    return out


def locate_triplet(components: Sequence[str], summary: Sequence[str]) -> FactTriplet | None:
    """Anchor a surface (s, v, o) triplet to summary positions.

    Multi-token components are reduced to their last token. The verb takes
    its first occurrence, the subject the nearest occurrence before it (else
    the first anywhere), the object the nearest after it (else the first
    anywhere). Returns None if a component is absent or positions collide.
    """
    subj, verb, obj = (tokenize(c)[-1] if tokenize(c) else "" for c in components)
    where = {tok: [i for i, t in enumerate(summary) if t == tok] for tok in (subj, verb, obj)}
    if not all(where.values()):
        return None
    v = where[verb][0]
    before = [i for i in where[subj] if i < v]
    after = [i for i in where[obj] if i > v]
    s = before[-1] if before else where[subj][0]
    o = after[0] if after else where[obj][0]
    if len({s, v, o}) < 3:
        return None
    return FactTriplet(subj, verb, obj, s, v, o)


# ----------------------------------------------------------------------
# dataset files
# ----------------------------------------------------------------------

def example_from_record(record: dict) -> DialogueExample:
    utterances = [tokenize(u) for u in record["utterances"]]
    utterances = [u for u in utterances if u]
    summary = tokenize(record.get("summary", ""))
    triplets = None
    if record.get("triplets") is not None:
        triplets = []
        for comp in record["triplets"]:
            located = locate_triplet(comp, summary)
            if located is not None:
                triplets.append(located)
    return DialogueExample(str(record["id"]), utterances, summary, triplets)


def read_jsonl(path) -> list[dict]:
    records = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                records.append(json.loads(line))
    return records


def load_dataset(path) -> list[DialogueExample]:
    """Read line-delimited JSON records ``{id, utterances, summary, triplets?}``."""
    out = []
    for rec in read_jsonl(path):
        if not any(tokenize(u) for u in rec.get("utterances", [])):
            continue
        out.append(example_from_record(rec))
    return out


def example_to_record(ex: DialogueExample) -> dict:
    rec = {"id": ex.id, "utterances": [" ".join(u) for u in ex.utterances], "summary": " ".join(ex.summary)}
    if ex.gold_triplets is not None:
        rec["triplets"] = [list(t.components) for t in ex.gold_triplets]
    return rec


def write_jsonl(path, records: Iterable[dict]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(json.dumps(rec, ensure_ascii=False) + "\n")


def filter_examples(pairs: Sequence[DialogueExample], min_dialogue_tokens: int = 15,
                    min_summary_tokens: int = 5) -> list[DialogueExample]:
    return [ex for ex in pairs
            if ex.dialogue_length >= min_dialogue_tokens and len(ex.summary) >= min_summary_tokens]


def filter_and_split(pairs: Sequence[DialogueExample], seed: int,
                     split_sizes: tuple[int, int, int],
                     min_dialogue_tokens: int = 15, min_summary_tokens: int = 5):
    """Drop short examples, shuffle with ``seed``, cut into train/valid/test."""
    kept = filter_examples(pairs, min_dialogue_tokens, min_summary_tokens)
    n_train, n_valid, n_test = split_sizes
    if n_train + n_valid + n_test > len(kept):
        raise ValueError(f"split sizes {split_sizes} exceed the {len(kept)} filtered examples")
    order = np.random.default_rng(seed).permutation(len(kept))
    shuffled = [kept[i] for i in order]
    return (shuffled[:n_train], shuffled[n_train:n_train + n_valid],
            shuffled[n_train + n_valid:n_train + n_valid + n_test])
