import csv
import json

import numpy as np

from satdkit.corpus import DebtLabel, SourceKind
from satdkit.keywords import KeywordEntry, KeywordReport
from satdkit.linker import ContributionFlow, SimilarityPair, UnresolvedRef
from satdkit.report import (
    save_cv_report,
    save_flows,
    save_keyword_reports,
    save_pairs,
    save_shared_matrix,
    save_training_log,
)
from satdkit.train_eval import CVReport, Metrics


def fake_cv_report():
    m = Metrics(tp=np.array([3, 1, 1, 1, 20]), fp=np.array([1, 0, 0, 0, 2]),
                fn=np.array([1, 1, 0, 0, 1]))
    return CVReport(
        k=2, seed=0,
        fold_metrics=[{0: m, 1: m}, {0: m, 1: m}],
        source_names=["comment", "commit"],
    )


def test_cv_report_files(tmp_path):
    save_cv_report(fake_cv_report(), tmp_path)
    data = json.loads((tmp_path / "metrics.json").read_text())
    assert "grand_average" in data and "pooled_average" in data
    with open(tmp_path / "metrics.csv") as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["fold", "task", "class", "precision", "recall", "f1"]
    assert len(rows) == 1 + 2 * 2 * 5
    assert (tmp_path / "metrics.png").stat().st_size > 0


def test_training_log_files(tmp_path):
    save_training_log([(1000, 1.5), (2000, 0.7)], tmp_path)
    assert (tmp_path / "training_log.csv").exists()
    assert (tmp_path / "training_loss.png").stat().st_size > 0


def test_keyword_files(tmp_path):
    report = KeywordReport(
        source=SourceKind.COMMENT,
        per_class={
            DebtLabel.CODE_DESIGN: [KeywordEntry("hack", 3.5, 4)],
            DebtLabel.DOCUMENTATION: [],
            DebtLabel.TEST: [KeywordEntry("flaky", 2.0, 2)],
            DebtLabel.REQUIREMENT: [],
        },
        per_sample_top=3,
        min_frequency=2,
    )
    save_keyword_reports([report], tmp_path)
    with open(tmp_path / "keywords.csv") as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["source", "class", "rank", "phrase", "score", "frequency"]
    assert any(r[3] == "hack" for r in rows[1:])
    data = json.loads((tmp_path / "keywords.json").read_text())
    assert data[0]["source"] == "comment"


def test_shared_matrix_files(tmp_path):
    sources = [SourceKind.COMMENT, SourceKind.COMMIT]
    save_shared_matrix(sources, np.array([[5, 2], [2, 5]]), tmp_path)
    with open(tmp_path / "shared_keywords.csv") as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["source", "comment", "commit"]
    assert rows[1] == ["comment", "5", "2"]
    assert (tmp_path / "shared_keywords.png").stat().st_size > 0


def test_flow_and_pair_files(tmp_path):
    flows = [
        ContributionFlow(id="flow00000", kind="ICC", issue_ids={"i1"}, commit_ids={"c1"}),
        ContributionFlow(id="flow00001", kind="CC", commit_ids={"c2"}),
    ]
    save_flows(flows, [UnresolvedRef("c9", "pr_number", "#4")], tmp_path)
    lines = (tmp_path / "flows.jsonl").read_text().splitlines()
    assert json.loads(lines[0])["kind"] == "ICC"
    assert (tmp_path / "flow_kinds.png").stat().st_size > 0
    pairs = [
        SimilarityPair("i1", "c1", SourceKind.ISSUE, SourceKind.COMMIT, "flow00000", 0.8, True)
    ]
    save_pairs(pairs, 0.5, tmp_path)
    with open(tmp_path / "pairs.csv") as fh:
        rows = list(csv.reader(fh))
    assert rows[1] == ["flow00000", "issue", "i1", "commit", "c1", "0.800000", "1"]
    assert (tmp_path / "similarity_hist.png").stat().st_size > 0
