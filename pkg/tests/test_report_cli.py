import csv
import json

import httpx
import numpy as np
import pytest

from privaudit import cli
from privaudit.config import RunConfig
from privaudit.ingest import fetch_policy
from privaudit.report import (
    SCHEMA_VERSION,
    ComplianceReport,
    SchemaVersionError,
    recompute_scores,
    render_html,
    run_app_audit,
)

GOLDEN_ARGS = dict(app_id="com.tiletower.profiles", developer="Tile Tower Studio")


@pytest.fixture(scope="module")
def zero(fixtures):
    return run_app_audit(str(fixtures / "zero_overlap" / "policy.html"), fixtures / "zero_overlap" / "ds.html", **GOLDEN_ARGS)


def test_golden_report_is_byte_stable(zero, fixtures):
    assert zero.to_json() == (fixtures / "golden" / "zero_overlap_report.json").read_text(encoding="utf-8")


def test_golden_html(zero, fixtures):
    assert render_html(zero) == (fixtures / "golden" / "zero_overlap_report.html").read_text(encoding="utf-8")


def test_zero_overlap_report_scores(zero):
    assert zero.scores.pp_collect == 0.0 and zero.scores.ds_collect == 0.0
    assert zero.item_sets["pp_collect"] == [0, 2] and zero.item_sets["ds_collect"] == [17, 18]
    assert zero.scores.pp_share is None and zero.scores.ds_share is None


def test_round_trip_and_self_consistency(zero):
    again = ComplianceReport.from_json(zero.to_json())
    assert again.to_json() == zero.to_json()
    assert recompute_scores(again) == zero.scores


def test_units_carry_verbatim_rationales(zero, fixtures):
    from privaudit.ingest import document_from_file
    text = document_from_file(fixtures / "zero_overlap" / "policy.html").plain_text
    for u in zero.units:
        assert u["rationale"] in text[u["start"]:u["end"]]


def test_missing_ds_degrades(fixtures):
    r = run_app_audit(str(fixtures / "zero_overlap" / "policy.html"), None, **GOLDEN_ARGS)
    assert not r.ds_available and r.matrices["ds_collect"] is None
    assert all(v is None for v in r.scores.to_dict().values())
    assert "ds_missing" in [n.code for n in r.notes]
    html = render_html(r)
    assert "n/a" in html and "0.0%" not in html


def test_empty_matrices_render_all_zero(fixtures):
    r = run_app_audit(str(fixtures / "corpus" / "policies" / "hello.html"), None, app_id="x")
    assert r.pp_available and np.array(r.matrices["pp_collect"]).sum() == 0
    html = render_html(r)
    assert html.count('<td class="num" style="background:#ffffff">0</td>') == 2 * 23 * 8
    assert r.flags.placeholder_content


def test_schema_mismatch(zero):
    d = zero.to_dict()
    d["schema_version"] = "0"
    with pytest.raises(SchemaVersionError) as err:
        render_html(d)
    assert "'0'" in str(err.value) and repr(SCHEMA_VERSION) in str(err.value)


def test_no_api_key_in_report(fixtures, monkeypatch):
    monkeypatch.setenv("PRIVAUDIT_API_KEY", "sekret-value-123")
    cfg = RunConfig(backend="remote")
    r = run_app_audit(str(fixtures / "zero_overlap" / "policy.html"), None, config=cfg,
                      backend=RunConfig().make_backend())
    assert "sekret-value-123" not in r.to_json()


def test_unreadable_inputs_attribute_stage(tmp_path, fixtures):
    from privaudit.notes import StageError
    with pytest.raises(StageError) as err:
        run_app_audit(str(tmp_path / "nope.html"))
    assert err.value.stage == "ingest"
    bad = tmp_path / "ds.json"
    bad.write_text('{"records": [{"d_prac": ""}]}')
    with pytest.raises(StageError) as err:
        run_app_audit(str(fixtures / "zero_overlap" / "policy.html"), bad)
    assert err.value.stage == "ds"


def test_config_digest_ignores_scheduling():
    assert RunConfig(max_workers=8, app_workers=4).digest() == RunConfig().digest()
    assert RunConfig(min_unit_chars=100).digest() != RunConfig().digest()
    with pytest.raises(ValueError):
        RunConfig.from_dict({"bogus": 1})
    assert RunConfig.from_dict(RunConfig().to_dict()) == RunConfig()


# -- CLI ---------------------------------------------------------------------

def run(*argv):
    return cli.main([str(a) for a in argv])


def test_cli_analyze_and_render(tmp_path, fixtures, capsys):
    out, html = tmp_path / "r.json", tmp_path / "r.html"
    code = run("analyze", "--policy", fixtures / "zero_overlap" / "policy.html", "--ds", fixtures / "zero_overlap" / "ds.html",
               "--app-id", "com.tiletower.profiles", "--developer", "Tile Tower Studio", "--out", out, "--html", html)
    assert code == 0
    assert out.read_text() == (fixtures / "golden" / "zero_overlap_report.json").read_text()
    rendered = tmp_path / "again.html"
    assert run("render", "--report", out, "--out", rendered) == 0
    assert rendered.read_text() == html.read_text()


def test_cli_input_error(tmp_path, capsys):
    assert run("analyze", "--policy", tmp_path / "missing.html", "--out", tmp_path / "r.json") == 1
    assert "[ingest]" in capsys.readouterr().err


def test_cli_schema_error(tmp_path, zero, capsys):
    d = zero.to_dict()
    d["schema_version"] = "99"
    p = tmp_path / "old.json"
    p.write_text(json.dumps(d))
    assert run("render", "--report", p, "--out", tmp_path / "x.html") == 1
    assert "'99'" in capsys.readouterr().err


def test_cli_backend_failure(tmp_path, fixtures):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"backend": "remote", "rule_fallback": False,
                               "remote": {"endpoint": "http://127.0.0.1:9/v1", "max_retries": 0,
                                          "backoff": 0.0, "timeout": 2.0}}))
    out = tmp_path / "r.json"
    assert run("--config", cfg, "analyze", "--policy", fixtures / "zero_overlap" / "policy.html", "--out", out) == 2
    report = json.loads(out.read_text())
    assert not report["pp_available"]
    assert {"headings_failed", "unclassified", "pp_unavailable"} <= {n["code"] for n in report["notes"]}


def test_cli_internal_error(tmp_path, fixtures, monkeypatch):
    def boom(*a, **k):
        raise RuntimeError("invariant broken")
    monkeypatch.setattr(cli, "run_app_audit", boom)
    assert run("analyze", "--policy", fixtures / "zero_overlap" / "policy.html", "--out", tmp_path / "r.json") == 3


def test_cli_segment(tmp_path, fixtures):
    out = tmp_path / "s.json"
    assert run("segment", "--policy", fixtures / "zero_overlap" / "policy.html", "--out", out) == 0
    data = json.loads(out.read_text())
    assert [h[1] for h in data["headings"]] == ["1. Player Content", "2. Contact", "3. Changes"]
    assert data["sections"][0]["heading"] is None


def test_cli_ds_parse(tmp_path, fixtures):
    out, tagged = tmp_path / "ds.json", tmp_path / "ds.txt"
    assert run("ds-parse", "--in", fixtures / "ds_shared_ids.html", "--out", out, "--tagged", tagged) == 0
    assert np.argwhere(np.array(json.loads(out.read_text())["share"])).tolist() == [[18, 0], [18, 3]]
    assert tagged.read_text().startswith("<d_prac> Data Shared\n<d_cata> Device or other IDs\n")


def test_cli_evidence_and_score(tmp_path, fixtures):
    ev = tmp_path / "ev.json"
    m = fixtures / "corpus" / "manifests"
    assert run("evidence", "--manifest", m / "com.space.miner.xml", "--api-refs", m / "com.space.miner.refs.json",
               "--out", ev) == 0
    data = json.loads(ev.read_text())
    assert data["package"] == "com.space.miner" and data["items"]

    scores = tmp_path / "scores.json"
    golden = fixtures / "golden" / "zero_overlap_report.json"
    assert run("score", "--pp", golden, "--ds", fixtures / "zero_overlap" / "ds.html", "--evidence", ev, "--out", scores) == 0
    s = json.loads(scores.read_text())
    assert s["pp_collect"] == 0.0 and s["ds_collect"] == 0.0
    assert s["evidence_vs_pp"] is not None


def test_cli_fetch(tmp_path, monkeypatch):
    def fake(url):
        return fetch_policy(url, client=httpx.Client(transport=httpx.MockTransport(
            lambda r: httpx.Response(200, headers={"content-type": "text/html"}, content=b"<p>hi</p>"))))
    monkeypatch.setattr(cli, "fetch_policy", fake)
    assert run("fetch", "https://x.example/privacy", "--out", tmp_path) == 0
    assert list(tmp_path.glob("*.json"))
    monkeypatch.setattr(cli, "fetch_policy", lambda url: fetch_policy(url, client=httpx.Client(
        transport=httpx.MockTransport(lambda r: httpx.Response(404)))))
    assert run("fetch", "https://x.example/gone", "--out", tmp_path / "b") == 1


def test_cli_batch_corpus_and_export(tmp_path, fixtures):
    reports = tmp_path / "reports"
    assert run("audit-batch", "--apps", fixtures / "corpus" / "apps.json", "--out-dir", reports) == 0
    assert len(list(reports.glob("*.json"))) == 10

    summary, csvs = tmp_path / "corpus.json", tmp_path / "csv"
    assert run("corpus-report", "--reports", reports, "--metadata", fixtures / "corpus" / "apps.json",
               "--out", summary, "--csv-dir", csvs, "--window", "3") == 0
    s = json.loads(summary.read_text())
    assert s["apps"] == 10 and s["ranked_apps"][0] == "com.orbit.racers"
    with open(csvs / "purpose_iou_collect.csv") as fh:
        rows = list(csv.reader(fh))
    assert len(rows) == 24 and len(rows[0]) == 9
    assert (csvs / "trends.csv").exists()

    corpus = tmp_path / "verifier.jsonl"
    paths = sorted(reports.glob("*.json"))
    assert run("export-verifier-corpus", *paths, "--out", corpus) == 0
    rows = [json.loads(line) for line in corpus.read_text().splitlines()]
    expected = sum(1 for p in paths for m in json.loads(p.read_text())["mappings"] if m["origin"] == "decoder")
    assert len(rows) == expected > 0
    assert set(rows[0]) == {"text", "keyword", "task", "policy_id"}


def test_cli_corpus_report_needs_reports(tmp_path):
    assert run("corpus-report", "--reports", tmp_path, "--out", tmp_path / "c.json") == 1
