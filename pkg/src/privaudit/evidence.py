"""Data-item evidence from decoded manifests and API method references."""

from __future__ import annotations

import json
import xml.etree.ElementTree as ET
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable, Mapping

from .notes import StageError
from .taxonomy import GENERIC, Taxonomy, default_taxonomy

ANDROID_NS = "{http://schemas.android.com/apk/res/android}"
_USES = ("uses-permission", "uses-permission-sdk-23", "uses-permission-sdk-m")

MANIFEST = "manifest"
API = "api"


@dataclass(frozen=True)
class ManifestInfo:
    package_id: str
    permissions: tuple[str, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "permissions", tuple(sorted(set(self.permissions))))


@dataclass
class EvidenceSet:
    items: set[int] = field(default_factory=set)
    provenance: dict[int, list[dict[str, str]]] = field(default_factory=dict)
    unmapped: list[str] = field(default_factory=list)

    def add(self, item: int, source: str, detail: str) -> None:
        if not 0 <= item < GENERIC:
            raise ValueError(f"evidence items must be concrete (0..20), got {item}")
        self.items.add(item)
        entry = {"source": source, "detail": detail}
        bucket = self.provenance.setdefault(item, [])
        if entry not in bucket:
            bucket.append(entry)

    def merge(self, other: "EvidenceSet") -> "EvidenceSet":
        out = EvidenceSet()
        for ev in (self, other):
            for item in sorted(ev.items):
                for p in ev.provenance[item]:
                    out.add(item, p["source"], p["detail"])
            out.unmapped.extend(u for u in ev.unmapped if u not in out.unmapped)
        return out

    def to_dict(self) -> dict[str, Any]:
        return {
            "items": sorted(self.items),
            "provenance": {str(k): v for k, v in sorted(self.provenance.items())},
            "unmapped": list(self.unmapped),
        }

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "EvidenceSet":
        ev = cls()
        prov = d.get("provenance", {})
        for item in d.get("items", []):
            entries = prov.get(str(item)) or [{"source": MANIFEST, "detail": "unspecified"}]
            for p in entries:
                ev.add(int(item), p["source"], p["detail"])
        ev.unmapped = list(d.get("unmapped", []))
        return ev


def qualify_permission(name: str) -> str:
    name = name.strip()
    return name if "." in name else f"android.permission.{name}"


def parse_manifest(xml_text: str | bytes) -> ManifestInfo:
    try:
        root = ET.fromstring(xml_text)
    except ET.ParseError as exc:
        raise StageError("evidence", f"malformed manifest XML: {exc}") from None
    if root.tag != "manifest":
        raise StageError("evidence", f"root element is <{root.tag}>, expected <manifest>")
    package = root.get("package")
    if not package:
        raise StageError("evidence", "manifest has no package attribute")
    perms = []
    for tag in _USES:
        for el in root.iter(tag):
            name = el.get(f"{ANDROID_NS}name") or el.get("name")
            if name:
                perms.append(qualify_permission(name))
    return ManifestInfo(package, tuple(perms))


def map_api_refs(method_refs: Iterable[str], api_permission_map: Mapping[str, str] | None = None) -> list[str]:
    table = default_taxonomy().api_permission_map if api_permission_map is None else api_permission_map
    out: list[str] = []
    for ref in method_refs:
        perm = table.get(ref.strip())
        if perm and perm not in out:
            out.append(perm)
    return out


def permissions_to_items(
    permissions: Iterable[str],
    permission_item_map: Mapping[str, int] | None = None,
    *,
    source: str = MANIFEST,
) -> EvidenceSet:
    table = default_taxonomy().permission_item_map if permission_item_map is None else permission_item_map
    ev = EvidenceSet()
    for perm in permissions:
        perm = qualify_permission(perm)
        item = table.get(perm)
        if item is None:
            if perm not in ev.unmapped:
                ev.unmapped.append(perm)
        else:
            ev.add(item, source, perm)
    return ev


def api_evidence(method_refs: Iterable[str], taxonomy: Taxonomy | None = None) -> EvidenceSet:
    taxonomy = taxonomy or default_taxonomy()
    ev = EvidenceSet()
    for ref in method_refs:
        perm = taxonomy.api_permission_map.get(ref.strip())
        if perm is None:
            continue
        item = taxonomy.permission_item_map.get(perm)
        if item is None:
            ev.unmapped.append(perm)
        else:
            ev.add(item, API, ref.strip())
    return ev


def build_evidence(
    manifest: ManifestInfo | None = None,
    method_refs: Iterable[str] = (),
    taxonomy: Taxonomy | None = None,
) -> EvidenceSet:
    taxonomy = taxonomy or default_taxonomy()
    ev = EvidenceSet()
    if manifest is not None:
        ev = permissions_to_items(manifest.permissions, taxonomy.permission_item_map)
    return ev.merge(api_evidence(method_refs, taxonomy))


def load_manifest(path: str | Path) -> ManifestInfo:
    """Decoded manifest XML, or a JSON list of permissions / {package, permissions}."""
    raw = Path(path).read_bytes()
    if raw.lstrip()[:1] in (b"[", b"{"):
        data = json.loads(raw)
        if isinstance(data, list):
            return ManifestInfo(Path(path).stem, tuple(qualify_permission(p) for p in data))
        return ManifestInfo(data.get("package", Path(path).stem),
                            tuple(qualify_permission(p) for p in data.get("permissions", [])))
    return parse_manifest(raw)


def load_api_refs(path: str | Path) -> list[str]:
    data = json.loads(Path(path).read_text(encoding="utf-8"))
    if not isinstance(data, list) or not all(isinstance(x, str) for x in data):
        raise StageError("evidence", "API refs file must be a JSON array of strings")
    return data
