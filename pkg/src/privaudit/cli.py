"""Command-line entry points.

Exit codes: 0 success, 1 input error, 2 backend failure, 3 internal error.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Any, Sequence

from . import __version__
from .backends import BackendError
from .config import RunConfig
from .corpus import AppMeta, corpus_summary
from .datasafety import load_ds, normalize_ds, sanitize_ds_html, tagged_dump
from .evidence import build_evidence, load_api_refs, load_manifest
from .extraction import MappingRecord, export_verifier_corpus
from .ingest import fetch_policy, save_fetch
from .metrics import item_set, score_sets
from .notes import Note, StageError
from .report import ComplianceReport, SchemaVersionError, load_policy, render_html, run_app_audit
from .segmenter import segment_text
from .taxonomy import default_taxonomy

log = logging.getLogger("privaudit")

EXIT_OK, EXIT_INPUT, EXIT_BACKEND, EXIT_INTERNAL = 0, 1, 2, 3
_KIND_EXIT = {"input": EXIT_INPUT, "backend": EXIT_BACKEND, "invariant": EXIT_INTERNAL}


def _write(path: str | Path, text: str) -> None:
    p = Path(path)
    p.parent.mkdir(parents=True, exist_ok=True)
    p.write_text(text, encoding="utf-8")


def _dump(obj: Any) -> str:
    return json.dumps(obj, indent=2, sort_keys=True, ensure_ascii=False) + "\n"


def _config(args: argparse.Namespace) -> RunConfig:
    cfg = RunConfig.load(args.config) if args.config else RunConfig()
    if args.backend:
        cfg.backend = args.backend
    if args.endpoint:
        cfg.remote.endpoint = args.endpoint
    if args.model:
        cfg.remote.model = args.model
    if args.api_key_env:
        cfg.remote.api_key_env = args.api_key_env
    if args.no_rule_fallback:
        cfg.rule_fallback = False
    if args.workers:
        cfg.max_workers = args.workers
    return cfg


def _backend_failed(report: ComplianceReport) -> bool:
    return any(n.code in ("pp_unavailable",) for n in report.notes) and any(
        n.code in ("unclassified", "headings_failed") for n in report.notes
    )


# -- commands ----------------------------------------------------------------


def cmd_fetch(args, cfg: RunConfig) -> int:
    record = fetch_policy(args.url)
    body = save_fetch(record, args.out)
    print(body)
    if record.error:
        log.error("fetch failed: %s", record.error)
        return EXIT_INPUT
    return EXIT_OK


def cmd_segment(args, cfg: RunConfig) -> int:
    doc, _ = load_policy(args.policy)
    headings, sections, units = segment_text(
        doc.plain_text, cfg.make_backend(), trials=cfg.heading_trials,
        min_len=cfg.min_unit_chars, max_workers=cfg.max_workers,
    )
    _write(args.out, _dump({
        "policy_id": doc.policy_id,
        "trial_id": headings.trial_id,
        "headings": [list(h) for h in headings.headings],
        "sections": [{"index": s.index, "heading": s.heading_text, "start_line": s.start_line,
                      "end_line": s.end_line} for s in sections],
        "units": [{"unit_id": u.unit_id, "start": u.start, "end": u.end, "text": u.text} for u in units],
    }))
    return EXIT_OK


def cmd_analyze(args, cfg: RunConfig) -> int:
    report = run_app_audit(
        args.policy, args.ds, manifest=args.manifest, api_refs=args.api_refs,
        config=cfg, app_id=args.app_id, developer=args.developer or "",
    )
    _write(args.out, report.to_json())
    if args.html:
        _write(args.html, render_html(report))
    for n in report.notes:
        log.warning("[%s] %s %s", n.stage, n.code, n.message)
    return EXIT_BACKEND if _backend_failed(report) else EXIT_OK


def cmd_ds_parse(args, cfg: RunConfig) -> int:
    raw = Path(args.input).read_bytes()
    notes: list[Note] = []
    records = sanitize_ds_html(raw, notes)
    decl = normalize_ds(records, cfg.taxonomy())
    _write(args.out, _dump(decl.to_dict()))
    if args.tagged:
        _write(args.tagged, tagged_dump(records))
    for n in notes:
        log.warning("[%s] %s %s", n.stage, n.code, n.message)
    return EXIT_OK


def cmd_evidence(args, cfg: RunConfig) -> int:
    info = load_manifest(args.manifest) if args.manifest else None
    refs = load_api_refs(args.api_refs) if args.api_refs else []
    ev = build_evidence(info, refs, cfg.taxonomy())
    out = ev.to_dict()
    out["package"] = info.package_id if info else None
    _write(args.out, _dump(out))
    return EXIT_OK


def cmd_score(args, cfg: RunConfig) -> int:
    report = ComplianceReport.from_json(Path(args.pp).read_text(encoding="utf-8"))
    decl = load_ds(args.ds, taxonomy=cfg.taxonomy())

    def pp(kind):
        g = report.matrix(f"pp_{kind}")
        return None if g is None else item_set(g, cfg.include_generic)

    evidence = None
    if args.evidence:
        evidence = set(json.loads(Path(args.evidence).read_text(encoding="utf-8"))["items"])
    scores = score_sets(pp("collect"), pp("share"),
                        item_set(decl.collect, cfg.include_generic), item_set(decl.share, cfg.include_generic),
                        evidence)
    _write(args.out, _dump(scores.to_dict()))
    return EXIT_OK


def _write_csvs(summary: dict, out_dir: Path) -> None:
    taxonomy = default_taxonomy()
    out_dir.mkdir(parents=True, exist_ok=True)
    for kind, grid in summary["purpose_iou"].items():
        with open(out_dir / f"purpose_iou_{kind}.csv", "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["item", *taxonomy.purposes])
            for j, row in enumerate(grid):
                w.writerow([taxonomy.item_keyword(j), *("" if v is None else f"{v:.6f}" for v in row)])
    with open(out_dir / "trends.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["metric", "rank", "app_id", "mean", "std"])
        for metric, series in summary["trends"].items():
            for rank, m, s in zip(series["ranks"], series["mean"], series["std"]):
                w.writerow([metric, rank, summary["ranked_apps"][rank],
                            "" if m is None else f"{m:.6f}", "" if s is None else f"{s:.6f}"])


def _load_metadata(path: str | None) -> dict[str, AppMeta]:
    if not path:
        return {}
    data = json.loads(Path(path).read_text(encoding="utf-8"))
    rows = data if isinstance(data, list) else data.get("apps", [])
    return {str(r["app_id"]): AppMeta.from_dict(r) for r in rows}


def cmd_corpus_report(args, cfg: RunConfig) -> int:
    reports = [json.loads(p.read_text(encoding="utf-8")) for p in sorted(Path(args.reports).glob("*.json"))]
    if not reports:
        raise StageError("corpus", f"no report JSON files in {args.reports}")
    summary = corpus_summary(reports, _load_metadata(args.metadata), window=args.window)
    _write(args.out, _dump(summary))
    if args.csv_dir:
        _write_csvs(summary, Path(args.csv_dir))
    return EXIT_OK


def cmd_export_verifier_corpus(args, cfg: RunConfig) -> int:
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text("", encoding="utf-8")
    total = 0
    for path in args.reports:
        report = ComplianceReport.from_json(Path(path).read_text(encoding="utf-8"))
        records = [MappingRecord(**m) for m in report.mappings]
        total += export_verifier_corpus(records, out, report.policy_id, append=True)
    print(total)
    return EXIT_OK


def cmd_render(args, cfg: RunConfig) -> int:
    report = json.loads(Path(args.report).read_text(encoding="utf-8"))
    _write(args.out, render_html(report))
    return EXIT_OK


def _resolve(base: Path, value: str | None) -> str | None:
    if value is None or value.startswith(("http://", "https://")):
        return value
    return str(base / value)


def audit_batch(apps_file: str | Path, out_dir: str | Path, cfg: RunConfig, workers: int = 1) -> list[Path]:
    """Audit every app listed in ``apps_file``; one report per app."""
    apps_path = Path(apps_file)
    apps = json.loads(apps_path.read_text(encoding="utf-8"))
    base = apps_path.parent
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    backend = cfg.make_backend()

    def one(entry: dict) -> Path:
        report = run_app_audit(
            _resolve(base, entry["policy"]), _resolve(base, entry.get("ds")),
            manifest=_resolve(base, entry.get("manifest")), api_refs=_resolve(base, entry.get("api_refs")),
            config=cfg, app_id=entry["app_id"], developer=entry.get("developer", ""),
            redirect_chain=entry.get("redirect_chain"), backend=backend,
        )
        path = out / f"{entry['app_id']}.json"
        path.write_text(report.to_json(), encoding="utf-8")
        return path

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(one, apps))
    return [one(e) for e in apps]


def cmd_audit_batch(args, cfg: RunConfig) -> int:
    paths = audit_batch(args.apps, args.out_dir, cfg, args.app_workers or cfg.app_workers)
    print(f"{len(paths)} reports written to {args.out_dir}")
    return EXIT_OK


# -- parser ------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="privaudit", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("-v", "--verbose", action="count", default=0)
    p.add_argument("--config", help="RunConfig JSON file")
    p.add_argument("--backend", choices=["rule", "remote"])
    p.add_argument("--endpoint", help="chat-completions URL for the remote backend")
    p.add_argument("--model")
    p.add_argument("--api-key-env", help="name of the environment variable holding the API key")
    p.add_argument("--no-rule-fallback", action="store_true")
    p.add_argument("--workers", type=int, help="backend concurrency per policy")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("fetch", help="download a policy, recording redirects")
    s.add_argument("url")
    s.add_argument("--out", required=True, help="output directory")
    s.set_defaults(func=cmd_fetch)

    s = sub.add_parser("segment", help="split a policy into sections and units")
    s.add_argument("--policy", required=True)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_segment)

    s = sub.add_parser("analyze", help="full audit of one app")
    s.add_argument("--policy", required=True, help="HTML file or URL")
    s.add_argument("--ds", help="Data Safety HTML or JSON")
    s.add_argument("--manifest")
    s.add_argument("--api-refs")
    s.add_argument("--app-id")
    s.add_argument("--developer")
    s.add_argument("--out", required=True)
    s.add_argument("--html")
    s.set_defaults(func=cmd_analyze)

    s = sub.add_parser("ds-parse", help="Data Safety page to normalized JSON")
    s.add_argument("--in", dest="input", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--tagged", help="write the tagged record dump here")
    s.set_defaults(func=cmd_ds_parse)

    s = sub.add_parser("evidence", help="manifest and API refs to data items")
    s.add_argument("--manifest")
    s.add_argument("--api-refs")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_evidence)

    s = sub.add_parser("score", help="recompute scores from a report and a DS file")
    s.add_argument("--pp", required=True, help="report JSON")
    s.add_argument("--ds", required=True)
    s.add_argument("--evidence")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_score)

    s = sub.add_parser("corpus-report", help="aggregate a directory of reports")
    s.add_argument("--reports", required=True)
    s.add_argument("--metadata")
    s.add_argument("--out", required=True)
    s.add_argument("--csv-dir")
    s.add_argument("--window", type=int, default=50)
    s.set_defaults(func=cmd_corpus_report)

    s = sub.add_parser("export-verifier-corpus", help="decoder-origin mappings as JSON Lines")
    s.add_argument("reports", nargs="+")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_export_verifier_corpus)

    s = sub.add_parser("render", help="report JSON to static HTML")
    s.add_argument("--report", required=True)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_render)

    s = sub.add_parser("audit-batch", help="audit every app in an apps.json manifest")
    s.add_argument("--apps", required=True)
    s.add_argument("--out-dir", required=True)
    s.add_argument("--app-workers", type=int)
    s.set_defaults(func=cmd_audit_batch)
    return p


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = _config(args)
        return args.func(args, cfg)
    except StageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return _KIND_EXIT.get(exc.kind, EXIT_INPUT)
    except BackendError as exc:
        print(f"error: [backend] {exc}", file=sys.stderr)
        return EXIT_BACKEND
    except SchemaVersionError as exc:
        print(f"error: [render] {exc}", file=sys.stderr)
        return EXIT_INPUT
    except (OSError, json.JSONDecodeError, ValueError) as exc:
        print(f"error: [input] {exc}", file=sys.stderr)
        return EXIT_INPUT
    except Exception as exc:  # noqa: BLE001
        log.exception("internal error")
        print(f"error: [internal] {exc}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
