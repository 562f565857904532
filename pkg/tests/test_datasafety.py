import json

import numpy as np
from hypothesis import given, strategies as st

from privaudit.datasafety import (
    DsDeclaration,
    DsRecord,
    PURPOSE_ALIASES,
    load_ds,
    normalize_ds,
    parse_purposes,
    sanitize_ds_html,
    tagged_dump,
)
import pytest

A3 = DsRecord("Data Shared", "Device or other IDs", "Data shared and for what purpose",
              "Analytics, Advertising or marketing", "Device or other IDs")


def test_shared_ids_page(fixtures):
    records = sanitize_ds_html((fixtures / "ds_shared_ids.html").read_text())
    assert records == [A3]
    decl = normalize_ds(records)
    assert sorted(map(tuple, np.argwhere(decl.share).tolist())) == [(18, 0), (18, 3)]
    assert decl.collect.sum() == 0 and decl.unmapped_labels == []


def test_tagged_dump_markers():
    dump = tagged_dump([A3])
    assert dump.splitlines() == [
        "<d_prac> Data Shared",
        "<d_cata> Device or other IDs",
        "<d_detl> Data shared and for what purpose",
        "<d_valu> Analytics, Advertising or marketing",
    ]


def test_unrecognized_layout_warns():
    notes = []
    assert sanitize_ds_html("<html><body><h1>Some app</h1><p>Hi</p></body></html>", notes) == []
    assert [n.code for n in notes] == ["unrecognized_layout"]


def test_multi_category_document_order(fixtures):
    notes = []
    records = sanitize_ds_html((fixtures / "zero_overlap" / "ds.html").read_text(), notes)
    assert notes == []
    assert [(r.d_prac, r.d_cata, r.d_valu) for r in records] == [
        ("Data Collected", "Device or other IDs", "Analytics, Advertising or marketing"),
        ("Data Collected", "Crash logs", "Analytics"),
        ("Data Collected", "Diagnostics", "App functionality, Analytics"),
        ("Security Practices", "Data is encrypted in transit", "true"),
        ("Security Practices", "You can request that data be deleted", "true"),
    ]
    decl = normalize_ds(records)
    assert sorted(map(tuple, np.argwhere(decl.collect).tolist())) == [(17, 0), (17, 6), (18, 0), (18, 3)]
    assert decl.share.sum() == 0
    assert decl.security == {"deletion_requestable": True, "encrypted_in_transit": True}


def test_negated_security_statement():
    html = ("<h2>Security practices</h2><h3>Data isn't encrypted</h3><div>Your data isn't transferred "
            "over a secure connection</div>")
    decl = normalize_ds(sanitize_ds_html(html))
    assert decl.security["encrypted_in_transit"] is False


def test_collected_device_ids_go_to_collect():
    r = DsRecord("Data collected", "Device or other IDs", "Data collected and for what purpose", "Analytics")
    decl = normalize_ds([r])
    assert decl.collect[18, 0] == 1 and decl.share.sum() == 0


def test_empty_records():
    decl = normalize_ds([])
    assert decl.collect.sum() == 0 and decl.share.sum() == 0 and decl.unmapped_labels == []


def test_purpose_aliases():
    assert parse_purposes("Fraud prevention, security, and compliance") == ([2], [])
    assert parse_purposes("Advertising or marketing") == ([3], [])
    assert parse_purposes("Developer communications, Personalization, Account management") == ([1, 4, 5], [])
    assert parse_purposes("Analytics, Weather forecasting") == ([0], ["Weather forecasting"])


def test_unmapped_labels_kept():
    recs = [
        DsRecord("Data shared", "Telepathic waves", "Data shared and for what purpose", "Analytics"),
        DsRecord("Data shared", "Email address", "Data shared and for what purpose", "Moon landing"),
    ]
    decl = normalize_ds(recs)
    assert decl.unmapped_labels == ["Telepathic waves", "Moon landing"]
    assert decl.share[1, 7] == 1  # unknown purpose falls into "other"


def test_record_validation():
    with pytest.raises(ValueError):
        DsRecord("Data shared", "", "x", "y")


rec_strategy = st.builds(
    DsRecord,
    st.sampled_from(["Data shared", "Data collected", "DATA SHARED"]),
    st.sampled_from(["Device or other IDs", "Email address", "Precise location", "Crash logs", "Name"]),
    st.just("Data shared and for what purpose"),
    st.lists(st.sampled_from(sorted(PURPOSE_ALIASES)), min_size=1, max_size=4).map(", ".join),
)


@given(st.lists(rec_strategy, max_size=12))
def test_binary_provenance_idempotence(records):
    decl = normalize_ds(records + records)  # duplicates never push a cell past 1
    assert decl.collect.max(initial=0) <= 1 and decl.share.max(initial=0) <= 1
    for kind in ("collect", "share"):
        for j, p in np.argwhere(decl.grid(kind)):
            assert decl.sources(kind, int(j), int(p))
    again = normalize_ds([DsRecord.from_dict(json.loads(json.dumps(r.to_dict()))) for r in decl.records])
    assert again == decl
    assert DsDeclaration.from_dict(json.loads(json.dumps(decl.to_dict()))) == decl


def test_load_ds_formats(tmp_path, fixtures):
    html = load_ds(fixtures / "zero_overlap" / "ds.html")
    grid = tmp_path / "grid.json"
    grid.write_text(json.dumps({"collect": html.collect.tolist(), "share": html.share.tolist()}))
    from_grid = load_ds(grid)
    assert np.array_equal(from_grid.collect, html.collect)
    assert from_grid.sources("collect", 18, 3) == [-1]
    recs = tmp_path / "recs.json"
    recs.write_text(json.dumps([r.to_dict() for r in html.records]))
    assert load_ds(recs) == html
