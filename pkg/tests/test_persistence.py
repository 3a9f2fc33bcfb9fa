import json
import struct

import numpy as np
import pytest

from _toy import ftawe_config, maa_config, style_config, summ_config, summary_pairs
from capsumt.checkpoint import (BadCheckpointMagicError, CheckpointLengthError,
                                CheckpointVersionError, KindMismatchError, load_checkpoint,
                                read_checkpoint, save_checkpoint)
from capsumt.corpus import CorpusError, compose_document, parse_corpus, read_jsonl
from capsumt.features import (BadMagicError, BadVersionError, FeatureSet, NonFiniteFeatureError,
                              TruncatedFeatureError, read_features, write_features)
from capsumt.ftawe import FtaWE, SubwordVocabulary
from capsumt.maa import MaaFic
from capsumt.rng import make_rng
from capsumt.sfbialstm import StyledCaptioner
from capsumt.text import Vocabulary
from capsumt.unmhast import Summarizer

# ---------------------------------------------------------------------------
# FEAT files


def test_feature_file_single_row(tmp_path):
    raw = b"FEAT" + struct.pack("<III", 1, 1, 4) + struct.pack("<4f", 1, 2, 3, 4)
    (tmp_path / "f.feat").write_bytes(raw)
    fs = read_features(tmp_path / "f.feat")
    assert fs.features.dtype == np.float32 and fs.features.tolist() == [[1, 2, 3, 4]]


def test_feature_round_trip_is_bit_exact(tmp_path):
    F = np.random.default_rng(0).normal(size=(5, 7)).astype(np.float32)
    write_features(tmp_path / "f.feat", F)
    assert np.array_equal(read_features(tmp_path / "f.feat").features, F)


@pytest.mark.parametrize("mutate, error, message", [
    (lambda b: b"FEAX" + b[4:], BadMagicError, "magic"),
    (lambda b: b[:4] + struct.pack("<I", 2) + b[8:], BadVersionError, "version 2"),
    (lambda b: b[:-3], TruncatedFeatureError, "expected 40 bytes.*got 37"),
    (lambda b: b[:10], TruncatedFeatureError, "header"),
    (lambda b: b[:-4] + struct.pack("<f", np.nan), NonFiniteFeatureError, "non-finite"),
])
def test_feature_file_errors(tmp_path, mutate, error, message):
    write_features(tmp_path / "ok.feat", np.ones((2, 3)))
    (tmp_path / "bad.feat").write_bytes(mutate((tmp_path / "ok.feat").read_bytes()))
    with pytest.raises(error, match=message):
        read_features(tmp_path / "bad.feat")


def test_feature_set_validation():
    with pytest.raises(ValueError):
        FeatureSet(np.zeros((0, 3)))
    with pytest.raises(NonFiniteFeatureError):
        FeatureSet(np.array([[np.inf]]))


# ---------------------------------------------------------------------------
# checkpoints


def fresh_models():
    words = "a dog runs on the grass".split()
    fcfg = ftawe_config(dim=6, dtype="float32")
    yield FtaWE(SubwordVocabulary.build([words], fcfg), fcfg)
    yield MaaFic(maa_config(dtype="float32"), Vocabulary(words), make_rng(1))
    yield StyledCaptioner(style_config(dtype="float32"), Vocabulary(words), make_rng(2))
    yield Summarizer(summ_config(dtype="float32"), Vocabulary(words), make_rng(3))


@pytest.mark.parametrize("model", list(fresh_models()), ids=lambda m: m.kind)
def test_checkpoint_round_trip_is_identity(tmp_path, model):
    path = tmp_path / "m.ckpt"
    save_checkpoint(path, model, seed=7, epoch=3)
    back = load_checkpoint(path, kind=model.kind)
    a, b = model.params.state_dict(), back.params.state_dict()
    assert list(a) == list(b)
    assert all(a[k].dtype == b[k].dtype and np.array_equal(a[k], b[k]) for k in a)
    assert (back.checkpoint_seed, back.checkpoint_epoch) == (7, 3)
    save_checkpoint(tmp_path / "again.ckpt", back, seed=7, epoch=3)
    assert (tmp_path / "again.ckpt").read_bytes() == path.read_bytes()


def test_round_trip_preserves_inference(tmp_path):
    pairs = summary_pairs()[:2]
    m = Summarizer(summ_config(dtype="float32"),
                   Vocabulary.build([s for s, _ in pairs]), make_rng(0))
    save_checkpoint(tmp_path / "s.ckpt", m)
    back = load_checkpoint(tmp_path / "s.ckpt")
    src = pairs[0][0]
    assert back.summarize(src) == m.summarize(src)
    assert np.array_equal(back.token_probabilities(pairs[0]), m.token_probabilities(pairs[0]))


def test_checkpoint_header_fields(tmp_path):
    m = MaaFic(maa_config(dtype="float32"), Vocabulary(["x"]), make_rng(0))
    save_checkpoint(tmp_path / "m.ckpt", m, seed=11, epoch=4)
    raw = (tmp_path / "m.ckpt").read_bytes()
    assert raw[:4] == b"CKPT" and struct.unpack_from("<I", raw, 4)[0] == 1
    ck = read_checkpoint(tmp_path / "m.ckpt")
    assert ck.kind == "maa-fic" and ck.seed == 11 and ck.epoch == 4
    assert ck.config["vocab"] == ["x"]
    assert set(ck.tensors) == set(m.params.names())


@pytest.fixture
def saved(tmp_path):
    m = MaaFic(maa_config(dtype="float32"), Vocabulary(["x"]), make_rng(0))
    save_checkpoint(tmp_path / "m.ckpt", m)
    return tmp_path / "m.ckpt"


def test_checkpoint_bad_magic(saved):
    saved.write_bytes(b"CKPX" + saved.read_bytes()[4:])
    with pytest.raises(BadCheckpointMagicError):
        load_checkpoint(saved)


def test_checkpoint_bad_version(saved):
    raw = saved.read_bytes()
    saved.write_bytes(raw[:4] + struct.pack("<I", 9) + raw[8:])
    with pytest.raises(CheckpointVersionError, match="9"):
        load_checkpoint(saved)


@pytest.mark.parametrize("cut", [1, 5, 100])
def test_checkpoint_truncated(saved, cut):
    saved.write_bytes(saved.read_bytes()[:-cut])
    with pytest.raises(CheckpointLengthError, match="truncated"):
        load_checkpoint(saved)


def test_checkpoint_trailing_bytes(saved):
    saved.write_bytes(saved.read_bytes() + b"\0")
    with pytest.raises(CheckpointLengthError, match="trailing"):
        load_checkpoint(saved)


def test_checkpoint_kind_mismatch(saved):
    with pytest.raises(KindMismatchError, match="maa-fic"):
        load_checkpoint(saved, kind="unmha-st")


def test_checkpoint_errors_are_distinct():
    errors = {BadCheckpointMagicError, CheckpointVersionError, CheckpointLengthError,
              KindMismatchError}
    assert len(errors) == 4 and not any(issubclass(a, b) for a in errors for b in errors if a != b)


# ---------------------------------------------------------------------------
# corpus


def write_lines(path, rows):
    path.write_text("".join((r if isinstance(r, str) else json.dumps(r)) + "\n" for r in rows))
    return path


def test_empty_corpus_is_valid(tmp_path):
    (tmp_path / "c.jsonl").write_text("")
    assert parse_corpus(tmp_path / "c.jsonl") == []


def test_record_fields_verbatim(tmp_path):
    row = {"id": "r1", "factual": ["A dog runs."], "romantic": "A dog in love.",
           "humorous": "A dog eats the moon.", "summary": "a dog", "note": 5}
    recs = parse_corpus(write_lines(tmp_path / "c.jsonl", [row]))
    assert len(recs) == 1
    r = recs[0]
    assert (r.id, r.factual, r.romantic, r.humorous, r.summary, r.line) == \
        ("r1", ["A dog runs."], "A dog in love.", "A dog eats the moon.", "a dog", 1)
    assert r.as_json() == row


def test_missing_id_names_line(tmp_path):
    path = write_lines(tmp_path / "c.jsonl", [{"id": "a"}, {"factual": ["x"]}])
    with pytest.raises(CorpusError, match=r"c\.jsonl:2: missing field 'id'"):
        parse_corpus(path)


def test_duplicate_id(tmp_path):
    path = write_lines(tmp_path / "c.jsonl", [{"id": "a"}, "", {"id": "a"}])
    with pytest.raises(CorpusError, match=r":3: duplicate id 'a' \(first seen at line 1\)"):
        parse_corpus(path)


@pytest.mark.parametrize("row, field", [
    ('{"id": "a",', "malformed"), ('{"id": "a", "romantic": 3}', "romantic"),
    ('{"id": "a", "factual": "x"}', "factual"), ('[1]', "object"), ('{"id": ""}', "id"),
])
def test_malformed_rows(tmp_path, row, field):
    with pytest.raises(CorpusError, match=field):
        parse_corpus(write_lines(tmp_path / "c.jsonl", [row]))


def test_feature_paths_resolve_against_corpus_dir(tmp_path):
    sub = tmp_path / "data"
    sub.mkdir()
    write_features(sub / "img.feat", np.ones((1, 2)))
    path = write_lines(sub / "c.jsonl", [{"id": "a", "features": "img.feat"}])
    assert parse_corpus(path, require_features=True)[0].features == str(sub / "img.feat")
    path = write_lines(sub / "d.jsonl", [{"id": "a", "features": "nope.feat"}])
    with pytest.raises(CorpusError, match="features"):
        parse_corpus(path, require_features=True)


def test_read_jsonl_error_line(tmp_path):
    path = write_lines(tmp_path / "p.jsonl", [{"id": "a"}, "{oops"])
    with pytest.raises(CorpusError, match=r"p\.jsonl:2"):
        read_jsonl(path)


def test_compose_document_order():
    doc = compose_document("A dog runs.", "It loves the sun", "It eats socks!")
    assert doc == "a dog runs . it loves the sun . it eats socks ! .".split()
    with pytest.raises(ValueError):
        compose_document("", "x", "y")
