import itertools
from fractions import Fraction

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dialsum import corpus
from dialsum.corpus import DialogueExample, FactTriplet


def _ex(utterances, summary="x .", triplets=None, ex_id="e"):
    return DialogueExample(ex_id, [u.split() if isinstance(u, str) else u for u in utterances],
                           summary.split(), triplets)


# ----------------------------------------------------------------------
# tokenize
# ----------------------------------------------------------------------

@pytest.mark.parametrize("text, expected", [
    ("Hello, Tom!", ["hello", ",", "tom", "!"]),
    ("", []),
    ("already lower", ["already", "lower"]),
    ("Don't   stop...", ["don't", "stop", ".", ".", "."]),
    ("(e-mail)", ["(", "e-mail", ")"]),
    ("3.5 kg", ["3.5", "kg"]),
])
def test_tokenize(text, expected):
    assert corpus.tokenize(text) == expected


@given(st.text(max_size=80))
def test_tokenize_idempotent_on_joined_output(text):
    once = corpus.tokenize(text)
    assert corpus.tokenize(" ".join(once)) == once
    assert all(t == t.lower() and t.strip() == t and t for t in once)


# ----------------------------------------------------------------------
# vocabulary
# ----------------------------------------------------------------------

def test_vocab_size_with_specials():
    assert len(corpus.build_vocab([["a", "b"], ["c", "a"]])) == 8


def test_vocab_tie_is_lexicographic():
    vocab = corpus.build_vocab([["b"] * 3 + ["a"] * 3 + ["c"]], max_size=2)
    assert vocab.itos[5:] == ["a", "b"]


def test_vocab_zero_cap_keeps_specials():
    vocab = corpus.build_vocab([["a"]], max_size=0)
    assert vocab.itos == list(corpus.SPECIALS)


def test_vocab_bijective_and_roundtrip(tmp_path):
    vocab = corpus.build_vocab([["x", "y", "y", "z"]])
    assert all(vocab.id(t) == i for i, t in enumerate(vocab.itos))
    assert vocab.id("never-seen") == vocab.unk_id
    vocab.save(tmp_path / "v.txt")
    assert corpus.Vocabulary.load(tmp_path / "v.txt").itos == vocab.itos


# ----------------------------------------------------------------------
# encode_example
# ----------------------------------------------------------------------

def test_encode_single_utterance():
    vocab = corpus.build_vocab([["hi", "tom"]])
    src = corpus.encode_example(_ex(["hi tom"]), vocab)
    assert src.tokens == ["hi", "tom", "|"]
    assert src.utt_index == [1, 1, 1]
    assert len(src) == 3


def test_encode_lengths_sum():
    vocab = corpus.build_vocab([["a"]])
    assert len(corpus.encode_example(_ex(["a b c", "d e"]), vocab)) == 7


def test_encode_oov_shared_ext_id():
    vocab = corpus.build_vocab([["hi"]])
    src = corpus.encode_example(_ex(["hi zxq", "zxq"]), vocab)
    positions = [i for i, t in enumerate(src.tokens) if t == "zxq"]
    assert src.ext_vocab == ["zxq"]
    assert {src.ext_ids[i] for i in positions} == {len(vocab)}
    assert all(src.token_ids[i] == vocab.unk_id for i in positions)


words = st.sampled_from(["a", "b", "c", "tom", "ann", "car", "zz", "qq", "?", "."])


@given(st.lists(st.lists(words, min_size=1, max_size=6), min_size=1, max_size=5),
       st.lists(words, min_size=1, max_size=20))
def test_encode_invariants_and_roundtrip(utts, vocab_words):
    vocab = corpus.build_vocab([vocab_words])
    ex = DialogueExample("p", utts, ["x"])
    src = corpus.encode_example(ex, vocab)
    assert len(src.token_ids) == len(src.utt_index) == len(src.ext_ids) == sum(len(u) + 1 for u in utts)
    assert all(a <= b for a, b in zip(src.utt_index, src.utt_index[1:]))
    assert sorted(set(src.utt_index)) == list(range(1, len(utts) + 1))
    assert all(e < src.ext_size for e in src.ext_ids)
    decoded = [src.ext_token(e, vocab) for e in src.ext_ids]
    expected = [t for u in utts for t in u + [corpus.SEP]]
    assert decoded == expected


def test_target_ext_ids_copyable_and_unknown():
    vocab = corpus.build_vocab([["hi"]])
    src = corpus.encode_example(_ex(["hi zxq"]), vocab)
    assert src.target_ext_ids(["hi", "zxq", "nope"], vocab) == [vocab.id("hi"), len(vocab), vocab.unk_id]


def test_dialogue_example_validation():
    with pytest.raises(ValueError):
        DialogueExample("e", [], ["x"])
    with pytest.raises(ValueError):
        DialogueExample("e", [["a"], []], ["x"])


# ----------------------------------------------------------------------
# supporting utterances
# ----------------------------------------------------------------------

def test_jaccard_examples():
    assert corpus.jaccard({"a", "b"}, {"a", "b"}) == 1.0
    assert corpus.jaccard({"a", "b"}, {"c"}) == 0.0
    assert corpus.jaccard({"go", "movie", "tonight"}, {"movie", "tonight", "dinner"}) == 0.5
    assert corpus.jaccard(set(), set()) == 0.0


def test_select_exact_match():
    ex = _ex(["apples pears", "grapes plums", "tom bought car", "kiwi melon"])
    assert corpus.select_supporting_utterances("tom bought the car .".split(), ex) == {3}


def test_select_threshold():
    # 1 shared out of 10 -> 0.1 < 0.15
    ex = _ex(["a1 a2 a3 a4 a5 shared", "zz"])
    sent = "shared b1 b2 b3 b4".split()
    assert corpus.select_supporting_utterances(sent, ex) == frozenset()


def test_select_tie_goes_to_earlier():
    sent = ["s1", "s2", "s3", "s4"]
    ex = _ex([["s1", "s2", "u1"], ["s1", "s2", "u2"], ["s1", "u3"]])
    assert corpus.utterance_similarities(sent, ex) == [0.4, 0.4, 0.2]
    assert corpus.select_supporting_utterances(sent, ex, n_top=2) == {1, 2}


vocab_pool = st.sampled_from(["tom", "ann", "car", "bike", "cake", "the", "a", "is", "x", "y", "."])


@settings(max_examples=200)
@given(st.lists(st.lists(vocab_pool, min_size=1, max_size=6), min_size=1, max_size=6),
       st.lists(vocab_pool, min_size=1, max_size=6), st.integers(1, 3))
def test_select_matches_brute_force(utts, sentence, n_top):
    ex = DialogueExample("b", utts, ["x"])
    got = corpus.select_supporting_utterances(sentence, ex, n_top, 0.15)
    sent = corpus.content_set(sentence)
    # brute force: among all subsets of the eligible utterances of the largest allowed size,
    # take the one with the highest exact similarity sum, earliest indices on ties
    def exact(u):
        a, b = sent, corpus.content_set(u)
        return Fraction(len(a & b), len(a | b)) if a | b else Fraction(0)

    sims = [exact(u) for u in utts]
    eligible = [i + 1 for i, s in enumerate(sims) if s >= Fraction(15, 100)]
    size = min(n_top, len(eligible))
    combos = itertools.combinations(eligible, size)
    best = min(combos, key=lambda c: (-sum(sims[i - 1] for i in c), c))
    assert got == set(best)


# ----------------------------------------------------------------------
# sentences and alignments
# ----------------------------------------------------------------------

def test_split_sentences():
    assert len(corpus.split_summary_sentences("tom will come . ann is busy .".split())) == 2
    assert corpus.split_summary_sentences(["no", "end"]) == [(0, 2)]
    assert corpus.split_summary_sentences("a . . b".split()) == [(0, 2), (2, 3), (3, 4)]


@given(st.lists(st.sampled_from(["a", "b", ".", "!", "?"]), min_size=1, max_size=30))
def test_split_partitions(summary):
    spans = corpus.split_summary_sentences(summary)
    assert spans[0][0] == 0 and spans[-1][1] == len(summary)
    assert all(a[1] == b[0] for a, b in zip(spans, spans[1:]))
    assert all(s < e for s, e in spans)


def test_alignment_one_sentence():
    ex = _ex(["tom car", "ann bike"], "tom car .")
    align = corpus.build_support_alignment(ex)
    assert align.psu == [frozenset()]


def _two_sentence_example():
    # CSU_1 = {2}, CSU_2 = {2, 5}
    return _ex(["q1", "tom car", "q3", "q4", "ann bike", "q6"], "tom car . tom car ann bike .")


def test_alignment_psu_modes():
    ex = _two_sentence_example()
    default = corpus.build_support_alignment(ex)
    literal = corpus.build_support_alignment(ex, psu_overlaps_csu=True)
    assert default.csu == [{2}, {2, 5}]
    assert default.psu[1] == frozenset()
    assert literal.psu[1] == {2}


def test_alignment_disjoint_sentences():
    ex = _ex(["tom car", "q2", "q3", "ann bike"], "tom car . ann bike .")
    align = corpus.build_support_alignment(ex)
    assert align.csu == [{1}, {4}] and align.psu[1] == {1}


@given(st.lists(st.lists(vocab_pool, min_size=1, max_size=5), min_size=1, max_size=6),
       st.lists(vocab_pool, min_size=1, max_size=20), st.booleans())
def test_alignment_invariants(utts, summary, literal):
    ex = DialogueExample("i", utts, summary)
    align = corpus.build_support_alignment(ex, psu_overlaps_csu=literal)
    prior: set[int] = set()
    for csu, psu in zip(align.csu, align.psu):
        assert len(csu) <= 2
        assert psu <= prior
        if not literal:
            assert not psu & csu
        prior |= csu


# ----------------------------------------------------------------------
# triplets
# ----------------------------------------------------------------------

LEX = frozenset({"bought"})


def test_extract_triplet():
    (t,) = corpus.extract_triplets("tom bought a car .".split(), LEX)
    assert t.components == ("tom", "bought", "car") and t.positions == (0, 1, 3)


@pytest.mark.parametrize("sentence", ["a car .", "bought a car ."])
def test_extract_skips(sentence):
    assert corpus.extract_triplets(sentence.split(), LEX) == []


def test_extract_summary_offsets():
    trips = corpus.extract_summary_triplets("hi . tom bought a car .".split(), LEX)
    assert [t.positions for t in trips] == [(2, 3, 5)]


def test_default_verb_lexicon_has_common_verbs():
    lex = corpus.default_verb_lexicon()
    assert {"bought", "will", "is"} & lex >= {"bought"}
    assert 100 <= len(corpus.STOP_WORDS) <= 250


def test_locate_triplet():
    summary = "ann met tom . tom bought the red car .".split()
    t = corpus.locate_triplet(["Tom", "bought", "the red car"], summary)
    assert t == FactTriplet("tom", "bought", "car", 4, 5, 8)
    assert corpus.locate_triplet(["tom", "sold", "car"], summary) is None


# ----------------------------------------------------------------------
# files and splits
# ----------------------------------------------------------------------

def test_jsonl_roundtrip(tmp_path):
    recs = [{"id": "1", "utterances": ["Tom: I bought a car!", "Ann: wow"], "summary": "Tom bought a car.",
             "triplets": [["Tom", "bought", "car"]]}, {"id": "2", "utterances": ["", "  "], "summary": "x"}]
    corpus.write_jsonl(tmp_path / "d.jsonl", recs)
    (ex,) = corpus.load_dataset(tmp_path / "d.jsonl")
    assert ex.utterances[0] == ["tom", ":", "i", "bought", "a", "car", "!"]
    assert ex.gold_triplets == [FactTriplet("tom", "bought", "car", 0, 1, 3)]
    corpus.write_jsonl(tmp_path / "e.jsonl", [corpus.example_to_record(ex)])
    assert corpus.load_dataset(tmp_path / "e.jsonl") == [ex]


def _sized(n_dialogue, n_summary, i=0):
    return DialogueExample(str(i), [["w"] * n_dialogue], ["s"] * n_summary)


def test_filter_boundaries():
    kept, _, _ = corpus.filter_and_split([_sized(14, 5, 0), _sized(15, 5, 1), _sized(20, 4, 2)], 0, (1, 0, 0))
    assert [ex.id for ex in kept] == ["1"]


def test_filter_split_too_large():
    with pytest.raises(ValueError):
        corpus.filter_and_split([_sized(20, 5)], 0, (1, 1, 0))


@given(st.integers(0, 2**32 - 1), st.integers(0, 30))
def test_filter_split_deterministic_and_disjoint(seed, n_short):
    pairs = [_sized(20, 6, i) for i in range(40)] + [_sized(3, 6, 100 + i) for i in range(n_short)]
    a = corpus.filter_and_split(pairs, seed, (20, 10, 10))
    b = corpus.filter_and_split(pairs, seed, (20, 10, 10))
    assert a == b
    ids = [ex.id for split in a for ex in split]
    assert len(ids) == len(set(ids)) == 40
    assert set(ids) == {str(i) for i in range(40)}
