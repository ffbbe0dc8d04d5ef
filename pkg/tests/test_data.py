import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from daomtl.data import (Corpus, Example, batches, lexicon_classify, load_corpus, pad_sequences, save_corpus,
                         split, synth_generate, token_hash, tokenize)
from daomtl.errors import ConfigError, ContractError, IngestionError


def test_tokenize_case_folding_and_splitting():
    assert tokenize("ECB Rate") == tokenize("ecb rate")
    assert tokenize("ecb, rate!") == tokenize("ecb rate")
    assert tokenize("") == []


def test_tokenize_truncates_to_512():
    assert len(tokenize(" ".join(f"w{i}" for i in range(600)))) == 512


def test_hash_is_fixed():
    # frozen value; the id of a token must never depend on the process or the machine
    assert token_hash("euro") == 12223333843014696803
    assert tokenize("euro", vocab_size=4096) == [1 + 12223333843014696803 % 4095]


@settings(max_examples=200)
@given(st.text(max_size=200), st.integers(2, 5000))
def test_token_ids_in_range(text, vocab):
    ids = tokenize(text, vocab_size=vocab)
    assert all(1 <= i < vocab for i in ids)


def test_empty_sequence_becomes_single_pad():
    ids, lengths = pad_sequences([[], [3, 4]])
    assert ids.tolist() == [[0, 0], [3, 4]] and lengths.tolist() == [1, 2]


def test_example_label_consistency():
    assert Example("x", 0.6).label == 4
    with pytest.raises(ContractError):
        Example("x", 0.6, label=2)


def test_batches_sizes_and_determinism():
    corpus = synth_generate(25, seed=0)
    sizes = [len(b) for b in batches(corpus, 10, seed=1)]
    assert sizes == [10, 10, 5]
    a = [b.y.tobytes() for b in batches(corpus, 10, seed=1, epoch=2)]
    b = [b.y.tobytes() for b in batches(corpus, 10, seed=1, epoch=2)]
    c = [b.y.tobytes() for b in batches(corpus, 10, seed=1, epoch=3)]
    assert a == b and a != c


def test_split_partition():
    corpus = synth_generate(1000, seed=0)
    train, val = split(corpus, 0.9, seed=42)
    assert (len(train), len(val)) == (900, 100)
    again, _ = split(corpus, 0.9, seed=42)
    assert train.texts == again.texts
    assert sorted(train.texts + val.texts) == sorted(corpus.texts)
    with pytest.raises(ContractError):
        split(Corpus([Example("a", 0.0)]))


def test_load_jsonl_and_csv_round_trip(tmp_path):
    corpus = synth_generate(30, seed=3)
    for name in ("c.jsonl", "c.csv"):
        save_corpus(corpus, tmp_path / name)
        back = load_corpus(tmp_path / name)
        assert back.texts == corpus.texts
        np.testing.assert_array_equal(back.scores, corpus.scores)


def test_load_derives_class(tmp_path):
    p = tmp_path / "d.jsonl"
    p.write_text('{"text": "rally", "score": 0.6}\n')
    assert load_corpus(p).labels.tolist() == [4]


@pytest.mark.parametrize("body,line", [
    ('{"text": "a", "score": 0.1}\n{"text": "b", "score": 1.5}\n', 2),
    ('{"text": "a"}\n', 1),
    ('{"text": "a", "score": "high"}\n', 1),
    ('{"text": "a", "score": 0.1}\nnot json\n', 2),
])
def test_load_errors_carry_line_numbers(tmp_path, body, line):
    p = tmp_path / "bad.jsonl"
    p.write_text(body)
    with pytest.raises(IngestionError, match=f"line {line}"):
        load_corpus(p)


def test_load_empty_file_rejected(tmp_path):
    p = tmp_path / "empty.jsonl"
    p.write_text("")
    with pytest.raises(IngestionError):
        load_corpus(p)


def test_synth_mix_matches_requested_proportions():
    mix = (0.05, 0.15, 0.60, 0.15, 0.05)
    corpus = synth_generate(10_000, mix, noise=0.3, seed=11)
    props = np.bincount(corpus.labels, minlength=5) / len(corpus)
    assert np.all(np.abs(props - mix) <= 0.02)


def test_synth_noise_free_is_lexicon_separable():
    corpus = synth_generate(500, noise=0.0, seed=5)
    assert all(lexicon_classify(e.text) == e.label for e in corpus)


def test_synth_determinism_and_lengths():
    a, b = synth_generate(50, seed=9), synth_generate(50, seed=9)
    assert a.texts == b.texts and a.scores.tobytes() == b.scores.tobytes()
    assert all(20 <= len(t.split()) <= 80 for t in a.texts)


def test_synth_scores_keep_margin_from_thresholds():
    s = np.abs(synth_generate(2000, seed=4).scores)
    for t in (0.049, 0.5):
        assert np.all(np.abs(s - t) >= 0.001 - 1e-12)


def test_synth_rejects_bad_mix():
    with pytest.raises(ConfigError):
        synth_generate(10, (0.5, 0.5, 0.5, 0.0, 0.0))
