from importlib.resources import files

import numpy as np
import pytest

from clim.data import (PAD, UNK, Example, Vocab, build_vocabs, convert_conll, decode_batch, load_split,
                       make_batches, read_conll, unknown_labels, write_split)
from clim.exceptions import ContractError, DataError

FIXTURE = files("clim") / "fixtures" / "atis_tiny"


def _write(root, seq_in, seq_out, label):
    root.mkdir(parents=True)
    (root / "seq.in").write_text(seq_in)
    (root / "seq.out").write_text(seq_out)
    (root / "label").write_text(label)


def test_minimal_fixture(tmp_path):
    _write(tmp_path / "train", "show flights\n", "O O\n", "atis_flight\n")
    [ex] = load_split(tmp_path, "train")
    assert ex == Example(["show", "flights"], ["O", "O"], "atis_flight")


def test_bundled_fixture_loads():
    train = load_split(FIXTURE, "train")
    assert len(train) == 10
    assert train[0].tokens[:4] == ["i", "want", "to", "fly"]


def test_line_count_mismatch(tmp_path):
    _write(tmp_path / "train", "a b\nc\n", "O O\n", "x\n")
    with pytest.raises(DataError, match="line counts"):
        load_split(tmp_path, "train")


def test_token_tag_mismatch_cites_file_and_line(tmp_path):
    _write(tmp_path / "train", "a b\nc d\n", "O O\nO\n", "x\ny\n")
    with pytest.raises(DataError, match=r"seq\.out:2"):
        load_split(tmp_path, "train")


def test_missing_file_is_named(tmp_path):
    (tmp_path / "train").mkdir()
    (tmp_path / "train" / "seq.in").write_text("a\n")
    (tmp_path / "train" / "label").write_text("x\n")
    with pytest.raises(DataError, match="seq.out"):
        load_split(tmp_path, "train")


def test_empty_split_is_data_error(tmp_path):
    _write(tmp_path / "test", "", "", "")
    with pytest.raises(DataError):
        load_split(tmp_path, "test")
    with pytest.raises(DataError):
        load_split(tmp_path, "nope")


def test_vocab_reserved_ids():
    v = build_vocabs(load_split(FIXTURE, "train"))
    assert v.word.id(PAD) == 0 and v.word.id(UNK) == 1
    assert v.slot.id(PAD) == 0 and UNK not in v.slot
    assert v.intent.token(0) == "atis_flight"
    assert v.word.id("zzzunseen") == 1
    assert v.word.itos[2:5] == ["i", "want", "to"]


def test_vocab_determinism():
    train = load_split(FIXTURE, "train")
    assert build_vocabs(train) == build_vocabs(list(train))
    assert Vocab.from_dict(build_vocabs(train).word.to_dict()) == build_vocabs(train).word


def test_empty_training_set():
    with pytest.raises(ContractError):
        build_vocabs([])


def _examples(n):
    return [Example([f"w{i}"] * (1 + i % 4), ["O"] * (1 + i % 4), f"int{i % 3}") for i in range(n)]


def test_batch_sizes():
    ex = _examples(41)
    v = build_vocabs(ex)
    assert [len(b) for b in make_batches(ex, v, 20)] == [20, 20, 1]


def test_batch_shuffle_is_seeded():
    ex = _examples(41)
    v = build_vocabs(ex)
    a = [b.token_ids.tolist() for b in make_batches(ex, v, 20, shuffle_seed=3)]
    b = [b.token_ids.tolist() for b in make_batches(ex, v, 20, shuffle_seed=3)]
    c = [b.token_ids.tolist() for b in make_batches(ex, v, 20, shuffle_seed=4)]
    assert a == b and a != c


def test_batch_mask_and_round_trip():
    ex = load_split(FIXTURE, "train")
    v = build_vocabs(ex)
    decoded = []
    for batch in make_batches(ex, v, 4, shuffle_seed=0):
        assert np.array_equal(batch.mask.sum(axis=1), batch.lengths)
        assert batch.token_ids.shape[1] == batch.lengths.max()
        assert np.all(batch.slot_ids[batch.mask == 0] == 0)
        decoded.extend(decode_batch(batch, v))
    key = lambda e: " ".join(e.tokens)
    assert sorted(decoded, key=key) == sorted(ex, key=key)


def test_unseen_labels_are_flagged(caplog):
    train = load_split(FIXTURE, "train")
    v = build_vocabs(train)
    odd = [Example(["to", "mars"], ["O", "B-planet"], "atis_space")]
    assert unknown_labels(odd, v) == {"slot": {"B-planet"}, "intent": {"atis_space"}}
    with caplog.at_level("WARNING"):
        [batch] = make_batches(odd, v)
    assert "B-planet" in caplog.text
    assert batch.intent_ids[0] == -1


def test_write_and_conll_conversion(tmp_path):
    conll = tmp_path / "d.conll"
    conll.write_text("# intent atis_flight\nshow O\nflights O\nto O\nboston B-toloc.city_name\n\n"
                     "# intent atis_airfare\nfares O\n")
    ex = read_conll(conll)
    assert [e.intent for e in ex] == ["atis_flight", "atis_airfare"]
    convert_conll(conll, tmp_path / "out", "train")
    assert load_split(tmp_path / "out", "train") == ex
    bad = tmp_path / "bad.conll"
    bad.write_text("show O\n")
    with pytest.raises(DataError, match="intent"):
        read_conll(bad)


def test_write_split_round_trip(tmp_path):
    ex = load_split(FIXTURE, "valid")
    write_split(ex, tmp_path, "valid")
    assert load_split(tmp_path, "valid") == ex
