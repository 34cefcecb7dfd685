import numpy as np
import pytest
from hypothesis import given, strategies as st

from vdr.errors import ValidationError
from vdr.vocab import (DEFAULT_REMAP, PRETRAINED, RANDOM, RemapTable, Vocabulary, apply_remap, build_vocab,
                       load_pretrained, normalize_tokenize, remapped_tag)

YES_VARIANTS = ["*yes", "yesa", "yess", "ytes", "yes-", "yes3", "yyes", "yees"]


def write(path, text):
    path.write_text(text, encoding="utf-8")
    return path


# ---------------------------------------------------------------- tokenizer

def test_tokenize_examples():
    assert normalize_tokenize("Is it sunny?") == ["is", "it", "sunny", "?"]
    assert normalize_tokenize("") == []
    assert normalize_tokenize("yes- I think") == ["yes-", "i", "think"]


def test_trailing_hyphen_split_when_not_protected():
    assert normalize_tokenize("yes- I think", protected=()) == ["yes", "-", "i", "think"]
    assert normalize_tokenize('"Well," she said.') == ['"', "well", ",", '"', "she", "said", "."]


@given(st.text())
def test_tokenize_is_deterministic_and_lowercase(text):
    toks = normalize_tokenize(text)
    assert toks == normalize_tokenize(text)
    assert all(t == t.lower() and t and not any(c.isspace() for c in t) for t in toks)


# ---------------------------------------------------------------- vocabulary

def test_build_vocab_orders_by_count_then_token():
    v = build_vocab([["a", "b", "a"]], min_count=1)
    assert v.token_to_id["a"] == 2 and v.token_to_id["b"] == 3
    assert build_vocab([["c", "b", "a", "b"]]).id_to_token[2:] == ("b", "a", "c")


def test_build_vocab_threshold():
    v = build_vocab([["a", "b"]], min_count=2)
    assert len(v) == 2
    assert v.encode(["a", "b"]) == (1, 1)


def test_build_vocab_empty():
    with pytest.raises(ValidationError) as exc:
        build_vocab([])
    assert exc.value.code == "empty-corpus"


@given(st.lists(st.lists(st.sampled_from("abcdefg"), max_size=6), min_size=1, max_size=6)
       .filter(lambda c: any(c)))
def test_vocab_ids_dense_and_bijective(corpus):
    v = build_vocab(corpus)
    assert v.id_to_token[:2] == ("<pad>", "<unk>")
    assert sorted(v.token_to_id.values()) == list(range(len(v)))
    assert all(v.token_to_id[t] == i for i, t in enumerate(v.id_to_token))


def test_vocab_file_round_trip(tmp_path):
    v = build_vocab([["x", "y", "y", "z"]])
    v.save(tmp_path / "v.txt")
    assert (tmp_path / "v.txt").read_text().splitlines() == ["y", "x", "z"]
    assert Vocabulary.load(tmp_path / "v.txt").id_to_token == v.id_to_token


# ---------------------------------------------------------------- pretrained vectors

def test_load_pretrained_copies_rows(tmp_path):
    vf = write(tmp_path / "vec.txt", "a 1.0 2.0\n")
    init, missing = load_pretrained(vf, Vocabulary.from_tokens(["a"]))
    assert init.matrix[2].tolist() == [1.0, 2.0]
    assert missing == []
    assert init.provenance[2] == PRETRAINED


def test_load_pretrained_reports_missing(tmp_path):
    vf = write(tmp_path / "vec.txt", "a 1.0 2.0\nzz 3 4\n")
    init, missing = load_pretrained(vf, Vocabulary.from_tokens(["a", "b"]))
    assert missing == ["b"]
    assert init.provenance[3] == RANDOM
    assert np.abs(init.matrix[3]).max() <= 0.1


def test_bad_vector_width(tmp_path):
    vf = write(tmp_path / "vec.txt", "a 1.0 2.0\nb 1.0\n")
    with pytest.raises(ValidationError) as exc:
        load_pretrained(vf, Vocabulary.from_tokens(["a", "b"]))
    assert exc.value.code == "bad-vector-file:2"


def test_load_pretrained_is_deterministic(tmp_path):
    vf = write(tmp_path / "vec.txt", "a 1.0 2.0 3.0\n")
    vocab = Vocabulary.from_tokens(["a", "b", "c"])
    m1 = load_pretrained(vf, vocab, seed=5)[0].matrix
    m2 = load_pretrained(vf, vocab, seed=5)[0].matrix
    assert m1.tobytes() == m2.tobytes()


# ---------------------------------------------------------------- remapping

@pytest.fixture
def yes_setup(tmp_path):
    vf = write(tmp_path / "vec.txt", "yes 0.125 -1.5 3.25\nno 1 1 1\n")
    vocab = Vocabulary.from_tokens(["yes", "no"] + YES_VARIANTS + ["blorp"])
    init, missing = load_pretrained(vf, vocab, seed=1)
    return vf, vocab, init, missing


def test_default_table_covers_yes_variants():
    assert all(DEFAULT_REMAP[v] == "yes" for v in YES_VARIANTS)


def test_remap_yes_variants_bitwise(yes_setup):
    vf, vocab, init, missing = yes_setup
    assert set(missing) == set(YES_VARIANTS) | {"blorp"}
    out = apply_remap(init, RemapTable.default(), vf)
    yes_row = out.matrix[vocab.token_to_id["yes"]].tobytes()
    for v in YES_VARIANTS:
        i = vocab.token_to_id[v]
        assert out.matrix[i].tobytes() == yes_row
        assert out.provenance[i] == remapped_tag("yes")
    b = vocab.token_to_id["blorp"]
    assert out.matrix[b].tobytes() == init.matrix[b].tobytes()
    assert out.provenance[b] == RANDOM


def test_remap_empty_table_is_identity(yes_setup):
    vf, _, init, _ = yes_setup
    out = apply_remap(init, RemapTable({}), vf)
    assert out.matrix.tobytes() == init.matrix.tobytes()
    assert out.provenance == init.provenance


def test_remap_is_idempotent(yes_setup):
    vf, _, init, _ = yes_setup
    once = apply_remap(init, RemapTable.default(), vf)
    twice = apply_remap(once, RemapTable.default(), vf)
    assert once.matrix.tobytes() == twice.matrix.tobytes()
    assert once.provenance == twice.provenance


def test_provenance_partition(yes_setup):
    vf, vocab, init, _ = yes_setup
    c = apply_remap(init, RemapTable.default(), vf).counts()
    assert c["pretrained"] + c["remapped"] + c["random"] == len(vocab)
    assert c["remapped"] == len(YES_VARIANTS)


def test_remap_target_missing(yes_setup):
    vf, _, init, _ = yes_setup
    with pytest.raises(ValidationError) as exc:
        apply_remap(init, RemapTable({"yess": "yeah"}), vf)
    assert exc.value.code == "remap-target-missing:yess"


def test_remap_rejects_chains():
    with pytest.raises(ValidationError) as exc:
        RemapTable({"a": "b", "b": "c"})
    assert exc.value.code == "remap-chain"


def test_remap_file_round_trip(tmp_path):
    write(tmp_path / "t.tsv", "# comment\nyess\tyes\n\nnah\tno\n")
    table = RemapTable.load(tmp_path / "t.tsv")
    assert dict(table.entries) == {"yess": "yes", "nah": "no"}
    table.save(tmp_path / "u.tsv")
    assert RemapTable.load(tmp_path / "u.tsv") == table
