
import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from privaudit.backends import BackendError, PracticeTuple
from privaudit.extraction import (
    COLLECT,
    DECODER,
    SHARE,
    UNCLASSIFIED,
    VERIFIER,
    ClassifiedParagraph,
    DecodedTuple,
    MappedPractice,
    MappingRecord,
    build_matrices,
    classify_policy,
    completeness_profile,
    decode_policy,
    export_verifier_corpus,
    extract_policy,
    map_and_validate,
    map_strings,
    read_verifier_corpus,
    split_items,
    validate_batch,
)
from privaudit.segmenter import ParagraphUnit
from privaudit.taxonomy import GENERIC, NEGATIVE, OTHER_PURPOSE, Vocabulary
from stubs import ScriptedBackend, failing

ITEMS = Vocabulary.ITEMS

INTRO = "Welcome to Acme and thanks for playing our games."
COLLECT_TXT = "We collect your email address to create your account."
CONTACT = "Contact privacy@example.com with questions."
CHANGE = "We may update this policy from time to time."
SHARE_TXT = "We may share device identifiers with ad partners for advertising."


def units_of(*texts):
    out, pos = [], 0
    for i, t in enumerate(texts):
        out.append(ParagraphUnit(f"0.{i}", 0, t, pos, pos + len(t)))
        pos += len(t) + 1
    return out


def decoded(kind, data, purpose="", ref="0.0"):
    return DecodedTuple(ref, kind, PracticeTuple(data, purpose))


# -- classification ----------------------------------------------------------

def test_three_unit_policy(rule):
    got = classify_policy(units_of(INTRO, COLLECT_TXT, CONTACT), rule)
    assert [c.practice_class for c in got] == [4, 0, 10]
    assert got[1].rationale == "We collect your email address"
    for c, u in zip(got, units_of(INTRO, COLLECT_TXT, CONTACT)):
        assert c.rationale in u.text


def test_empty_rationale_allowed():
    backend = ScriptedBackend(classify={COLLECT_TXT: (0, "")})
    assert classify_policy(units_of(COLLECT_TXT), backend)[0].rationale == ""


def test_non_verbatim_rationale_dropped_with_note():
    backend = ScriptedBackend(classify={COLLECT_TXT: (0, "made up")})
    notes = []
    (c,) = classify_policy(units_of(COLLECT_TXT), backend, notes=notes)
    assert c.practice_class == 0 and c.rationale == ""
    assert [n.code for n in notes] == ["rationale_dropped"]


def test_failing_unit_is_unclassified_and_pipeline_continues():
    backend = ScriptedBackend(classify={COLLECT_TXT: failing()})
    notes = []
    got = classify_policy(units_of(INTRO, COLLECT_TXT, CONTACT), backend, notes=notes)
    assert [c.practice_class for c in got] == [4, UNCLASSIFIED, 10]
    assert [n.code for n in notes] == ["unclassified"]
    assert sum(1 for name, arg in backend.calls if arg == COLLECT_TXT) == 2


def test_classify_requires_units(rule):
    with pytest.raises(ValueError):
        classify_policy([], rule)


# -- decoding ----------------------------------------------------------------

def test_only_first_and_third_party_units_decoded():
    backend = ScriptedBackend()
    units = units_of(COLLECT_TXT, CHANGE)
    classified = classify_policy(units, backend)
    assert [c.practice_class for c in classified] == [0, 5]
    out = decode_policy(classified, units, backend)
    assert [name for name, arg in backend.calls if name == "decode"] == ["decode"]
    assert out == [DecodedTuple("0.0", COLLECT, PracticeTuple("email address", "create your account", "collect"))]


def test_share_unit_decoded_with_share_processing(rule):
    units = units_of(SHARE_TXT)
    out = decode_policy(classify_policy(units, rule), units, rule)
    assert out[0].kind == SHARE and out[0].tuple.processing == "share"


def test_decode_failures_retried_then_skipped():
    backend = ScriptedBackend(decode={COLLECT_TXT: BackendError("parse")})
    units = units_of(COLLECT_TXT, CONTACT)
    notes = []
    out = decode_policy(classify_policy(units, backend), units, backend, notes=notes)
    assert out == []
    assert [n.code for n in notes] == ["decode_skipped"]
    assert sum(1 for name, _ in backend.calls if name == "decode") == 2


def test_zero_tuples_contributes_nothing():
    backend = ScriptedBackend(decode={COLLECT_TXT: []})
    units = units_of(COLLECT_TXT)
    assert decode_policy(classify_policy(units, backend), units, backend) == []


# -- mapping -----------------------------------------------------------------

def test_split_items():
    assert split_items("name, email and phone number; - etc.") == ["name", "email", "phone number", "etc."]
    assert split_items("search and browsing history and contacts") == ["search and browsing history", "contacts"]
    assert split_items("") == []


def test_count_mismatch_reroutes_whole_batch():
    items = ["GPS", "email address", "name", "phone", "zzz"]
    backend = ScriptedBackend(mapping=lambda xs, v: ["location"] * (len(xs) - 1))
    idx, origins, vals = map_strings(items, ITEMS, backend)
    assert vals[0].verdict == "count_mismatch" and vals[0].offending_indices == (0, 1, 2, 3, 4)
    assert origins == [VERIFIER] * 5
    assert idx[-1] == GENERIC


def test_hallucination_reroutes_offending_index():
    backend = ScriptedBackend(mapping=lambda xs, v: ["location", "cookies"])
    idx, origins, vals = map_strings(["GPS coordinates", "IP address"], ITEMS, backend)
    assert vals[0].verdict == "hallucination" and vals[0].offending_indices == (1,)
    assert origins == [DECODER, VERIFIER]
    assert idx == [9, 18]


def test_validate_batch_verdicts(taxonomy):
    assert validate_batch(["a"], ["email"], ITEMS, "b").verdict == "ok"
    assert validate_batch(["a"], ["email"], ITEMS, "b").offending_indices == ()
    assert validate_batch(["a"], None, ITEMS, "b").verdict == "count_mismatch"


def test_batches_capped_at_twenty(rule):
    items = [f"email {i}" for i in range(45)]
    backend = ScriptedBackend()
    _, _, vals = map_strings(items, ITEMS, backend)
    sizes = [len(arg) for name, arg in backend.calls if name == "map"]
    assert sizes == [20, 20, 5] and len(vals) == 3
    with pytest.raises(ValueError):
        map_strings(items, ITEMS, backend, batch_size=21)


def test_etc_filtered_and_purpose_default(rule):
    res = map_and_validate([decoded(COLLECT, "email, etc."), decoded(SHARE, "location", "advertising")], rule)
    assert [(p.data_item, p.purpose, p.practice_kind) for p in res.practices] == [
        (1, OTHER_PURPOSE, COLLECT), (9, 3, SHARE)]
    assert res.counters.negatives == 1
    assert res.counters.balanced()


def test_max_practices_truncation(rule):
    res = map_and_validate([decoded(COLLECT, "email, name, phone")], rule, max_practices=2)
    assert len(res.practices) == 2 and res.counters.truncated == 1
    assert [n.code for n in res.notes] == ["practices_truncated"]


@settings(max_examples=60, deadline=None)
@given(st.lists(st.sampled_from(["GPS", "email", "etc.", "zzqx", "name", "photos", "IP address"]),
                min_size=1, max_size=45),
       st.randoms(use_true_random=False))
def test_fault_injection_detected_and_conserved(rule, items, rnd):
    corrupted = []

    def mapper(xs, vocab):
        out = rule.map_keywords_batch(xs, vocab)
        mode = rnd.choice(["ok", "drop", "oov"])
        if mode == "drop":
            out = out[:-1]
        elif mode == "oov":
            out[rnd.randrange(len(out))] = "cookies"
        corrupted.append(mode)
        return out

    backend = ScriptedBackend(mapping=mapper)
    res = map_and_validate([decoded(COLLECT, ", ".join(items))], backend)
    item_vals = [v for v in res.validations if v.batch_id.startswith("items.")]
    for mode, v in zip(corrupted, item_vals):
        assert (v.verdict == "ok") == (mode == "ok")
    assert res.counters.balanced()
    assert res.counters.decoded_items == len(items)
    collect, share = build_matrices(res.practices)
    assert collect.total == len(res.practices) and share.total == 0


# -- matrices ----------------------------------------------------------------

def practice(kind, j, p, origin=DECODER):
    return MappedPractice("0.0", kind, j, p, "x", PracticeTuple("x"), origin)


def test_matrices():
    c, s = build_matrices([])
    assert c.total == 0 and s.total == 0 and c.counts.shape == (23, 8)
    c, s = build_matrices([practice(COLLECT, 9, 3), practice(COLLECT, 9, 3), practice(SHARE, 18, 0),
                           practice(SHARE, NEGATIVE, 0)])
    assert c.counts[9, 3] == 2 and c.total == 2 and s.total == 1


def test_mapped_practice_round_trip():
    p = practice(SHARE, 18, 3, VERIFIER)
    assert MappedPractice.from_dict(p.to_dict()) == p


def test_extract_policy_deterministic(rule):
    units = units_of(INTRO, COLLECT_TXT, SHARE_TXT, CONTACT)
    a = extract_policy(units, rule)
    b = extract_policy(units, rule, max_workers=4)
    assert a.collect == b.collect and a.share == b.share
    assert np.flatnonzero(a.collect.counts.sum(axis=1)).tolist() == [1]
    assert a.share.counts[18, 3] == 1


# -- verifier corpus ---------------------------------------------------------

def test_export_filters_to_decoder_origin(tmp_path):
    recs = [MappingRecord(f"t{i}", "email", "item", DECODER) for i in range(10)]
    recs += [MappingRecord(f"v{i}", "name", "item", VERIFIER) for i in range(3)]
    out = tmp_path / "corpus.jsonl"
    assert export_verifier_corpus(recs, out, "pid") == 10
    rows = read_verifier_corpus(out)
    assert len(rows) == 10
    assert rows[0] == {"text": "t0", "keyword": "email", "task": "item", "policy_id": "pid"}


def test_export_empty_creates_file(tmp_path):
    out = tmp_path / "empty.jsonl"
    assert export_verifier_corpus([], out) == 0
    assert out.exists() and out.read_text() == ""


@given(st.text(), st.sampled_from(["email", "N/A", "other"]), st.sampled_from(["item", "purpose"]))
def test_export_round_trip(tmp_path_factory, text, keyword, task):
    out = tmp_path_factory.mktemp("c") / "c.jsonl"
    export_verifier_corpus([MappingRecord(text, keyword, task, DECODER)], out, "p")
    assert read_verifier_corpus(out) == [{"text": text, "keyword": keyword, "task": task, "policy_id": "p"}]


# -- structure profile -------------------------------------------------------

def test_profile_single_unit():
    prof = completeness_profile([ClassifiedParagraph("0.0", 6, "", 0, 100)], 100, bins=10)
    assert prof[5, 6] == 1 and prof.sum() == 1


@given(st.lists(st.tuples(st.integers(0, 999), st.integers(0, 11)), max_size=30), st.integers(1, 100))
def test_profile_conservation(spans, bins):
    cps = [ClassifiedParagraph(str(i), cls, "", s, s + 1) for i, (s, cls) in enumerate(spans)]
    prof = completeness_profile(cps, 1000, bins)
    assert prof.shape == (bins, 12)
    assert prof.sum() == len(cps)
    for k in range(12):
        assert prof[:, k].sum() == sum(1 for _, c in spans if c == k)


def test_corpus_profile_golden(fixtures):
    import importlib.util
    import json

    spec = importlib.util.spec_from_file_location("make_golden", fixtures / "golden" / "make_golden.py")
    mod = importlib.util.module_from_spec(spec)
    spec.loader.exec_module(mod)
    frozen = json.loads((fixtures / "golden" / "corpus_profile.json").read_text())
    assert mod.corpus_profile() == frozen
    assert sum(map(sum, frozen)) == 58
