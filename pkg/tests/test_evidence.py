import json

import pytest
from hypothesis import given, strategies as st

from privaudit.evidence import (
    API,
    MANIFEST,
    EvidenceSet,
    ManifestInfo,
    api_evidence,
    build_evidence,
    load_api_refs,
    load_manifest,
    map_api_refs,
    parse_manifest,
    permissions_to_items,
)
from privaudit.notes import StageError
from privaudit.taxonomy import default_taxonomy

NS = 'xmlns:android="http://schemas.android.com/apk/res/android"'


def manifest(*perms, package="com.example.app"):
    body = "".join(f'<uses-permission android:name="{p}"/>' for p in perms)
    return f'<manifest {NS} package="{package}">{body}<application/></manifest>'


def test_parse_manifest_permissions():
    info = parse_manifest(manifest("android.permission.READ_CONTACTS", "android.permission.ACCESS_FINE_LOCATION"))
    assert info.package_id == "com.example.app"
    assert info.permissions == ("android.permission.ACCESS_FINE_LOCATION", "android.permission.READ_CONTACTS")


def test_parse_manifest_empty_and_duplicates():
    assert parse_manifest(manifest()).permissions == ()
    dup = parse_manifest(manifest("android.permission.CAMERA", "android.permission.CAMERA"))
    assert dup.permissions == ("android.permission.CAMERA",)


@pytest.mark.parametrize("xml", ["<manifest", f"<manifest {NS}><uses-permission/></manifest>", "<other/>"])
def test_parse_manifest_errors(xml):
    with pytest.raises(StageError):
        parse_manifest(xml)


MAP5 = {
    "La;->one()V": "android.permission.CAMERA",
    "La;->two()V": "android.permission.READ_CONTACTS",
    "La;->three()V": "android.permission.CAMERA",
    "Lb;->four()V": "android.permission.RECORD_AUDIO",
    "Lb;->five()V": "android.permission.INTERNET",
}


def test_map_api_refs():
    assert map_api_refs(["La;->two()V"], MAP5) == ["android.permission.READ_CONTACTS"]
    assert map_api_refs(["La;->one()V", "La;->three()V", "Lz;->nope()V"], MAP5) == ["android.permission.CAMERA"]
    assert map_api_refs(["Lb;->five()V", "Lb;->four()V"], MAP5) == [
        "android.permission.INTERNET", "android.permission.RECORD_AUDIO"]
    assert map_api_refs([], MAP5) == []


def test_permission_examples():
    ev = permissions_to_items(["ACCESS_FINE_LOCATION", "android.permission.READ_MEDIA_IMAGES",
                               "ACCESS_COARSE_LOCATION", "android.permission.INTERNET"])
    assert ev.items == {9, 12}
    assert ev.unmapped == ["android.permission.INTERNET"]
    assert {p["detail"] for p in ev.provenance[9]} == {
        "android.permission.ACCESS_FINE_LOCATION", "android.permission.ACCESS_COARSE_LOCATION"}
    assert "android.permission.INTERNET" not in default_taxonomy().permission_item_map


def test_evidence_items_are_concrete():
    with pytest.raises(ValueError):
        EvidenceSet().add(21, MANIFEST, "x")


def test_api_evidence_provenance():
    tx = default_taxonomy()
    ref = next(r for r, p in tx.api_permission_map.items() if p.endswith("ACCESS_FINE_LOCATION"))
    ev = api_evidence([ref, "Lunknown;->x()V"])
    assert ev.items == {9}
    assert ev.provenance[9] == [{"source": API, "detail": ref}]


PERMS = sorted(default_taxonomy().permission_item_map) + ["android.permission.INTERNET", "android.permission.VIBRATE"]
REFS = sorted(default_taxonomy().api_permission_map) + ["Lnone;->x()V"]


@given(st.lists(st.sampled_from(PERMS), max_size=10), st.lists(st.sampled_from(REFS), max_size=10))
def test_union_homomorphism(perms, refs):
    info = ManifestInfo("p", tuple(perms))
    combined = build_evidence(info, refs)
    direct = permissions_to_items(list(info.permissions) + map_api_refs(refs))
    assert combined.items == direct.items
    for item in combined.items:
        assert combined.provenance[item]


@given(st.lists(st.sampled_from(PERMS), max_size=10), st.sampled_from(PERMS))
def test_monotonic(perms, extra):
    assert permissions_to_items(perms).items <= permissions_to_items(perms + [extra]).items


def test_round_trip():
    ev = build_evidence(ManifestInfo("p", ("android.permission.CAMERA", "android.permission.INTERNET")))
    again = EvidenceSet.from_dict(json.loads(json.dumps(ev.to_dict())))
    assert again.to_dict() == ev.to_dict()


def test_loaders(tmp_path, fixtures):
    m = tmp_path / "m.json"
    m.write_text(json.dumps(["CAMERA", "android.permission.READ_SMS"]))
    assert load_manifest(m) == ManifestInfo("m", ("android.permission.CAMERA", "android.permission.READ_SMS"))
    x = tmp_path / "AndroidManifest.xml"
    x.write_text(manifest("android.permission.CAMERA"))
    assert load_manifest(x).package_id == "com.example.app"
    refs = fixtures / "corpus" / "manifests" / "com.space.miner.refs.json"
    assert all(isinstance(r, str) for r in load_api_refs(refs))
    bad = tmp_path / "bad.json"
    bad.write_text('{"a": 1}')
    with pytest.raises(StageError):
        load_api_refs(bad)
