"""Report rendering: delimited outputs plus matplotlib figures.

Every report-producing command writes its CSV/JSON tables and, alongside
them, a PNG figure of the same result (metrics bars, shared-keyword heatmap,
similarity histogram, flow-kind counts, training-loss curve).
"""

from __future__ import annotations

import csv
import json
from pathlib import Path
from typing import Iterable, Sequence

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .corpus import SourceKind
from .keywords import KeywordReport
from .linker import ContributionFlow, SimilarityPair, UnresolvedRef
from .train_eval import CVReport


def write_csv(rows: Iterable[Sequence], path: str | Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        csv.writer(fh).writerows(rows)


def write_json(obj, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


def save_cv_report(report: CVReport, outdir: str | Path, stem: str = "metrics") -> None:
    """metrics.json + metrics.csv + per-source macro-F1 bar figure."""
    outdir = Path(outdir)
    write_json(report.to_json(), outdir / f"{stem}.json")
    write_csv(report.to_csv_rows(), outdir / f"{stem}.csv")
    fig, ax = plt.subplots(figsize=(7, 4))
    tasks = report.tasks
    names = [report.source_names[t] for t in tasks]
    values = [report.task_macro_f1(t) for t in tasks]
    ax.bar(names, values, color="tab:blue")
    ax.axhline(report.grand_average, color="tab:red", linestyle="--", linewidth=1,
               label=f"grand average {report.grand_average:.3f}")
    ax.set_ylabel("macro F1 over debt classes")
    ax.set_ylim(0, 1)
    ax.set_title(f"Stratified {report.k}-fold cross-validation")
    ax.legend(loc="upper right")
    fig.tight_layout()
    fig.savefig(outdir / f"{stem}.png", dpi=150)
    plt.close(fig)


def save_training_log(log: Sequence[tuple[int, float]], outdir: str | Path) -> None:
    """training_log.csv + smoothed-loss curve."""
    outdir = Path(outdir)
    rows = [["step", "smoothed_loss"]] + [[s, f"{v:.6f}"] for s, v in log]
    write_csv(rows, outdir / "training_log.csv")
    if not log:
        return
    fig, ax = plt.subplots(figsize=(7, 4))
    steps, losses = zip(*log)
    ax.plot(steps, losses, color="tab:blue")
    ax.set_xlabel("training step")
    ax.set_ylabel("loss (per-1000-step mean)")
    ax.set_title("Training loss")
    fig.tight_layout()
    fig.savefig(outdir / "training_loss.png", dpi=150)
    plt.close(fig)


def save_keyword_reports(
    reports: Sequence[KeywordReport], outdir: str | Path
) -> None:
    """keywords.csv / keywords.json across the given per-source reports."""
    outdir = Path(outdir)
    rows: list[list] = [["source", "class", "rank", "phrase", "score", "frequency"]]
    for report in reports:
        for label, entries in report.per_class.items():
            for rank, e in enumerate(entries, start=1):
                rows.append(
                    [report.source.value, label.value, rank, e.phrase, f"{e.score:.6f}", e.frequency]
                )
    write_csv(rows, outdir / "keywords.csv")
    write_json([r.to_json() for r in reports], outdir / "keywords.json")


def save_shared_matrix(
    sources: Sequence[SourceKind], matrix: np.ndarray, outdir: str | Path
) -> None:
    """shared_keywords.csv + heatmap figure."""
    outdir = Path(outdir)
    names = [s.value for s in sources]
    rows: list[list] = [["source", *names]]
    for i, name in enumerate(names):
        rows.append([name, *[int(v) for v in matrix[i]]])
    write_csv(rows, outdir / "shared_keywords.csv")
    fig, ax = plt.subplots(figsize=(6, 5))
    im = ax.imshow(matrix, cmap="Blues")
    ax.set_xticks(range(len(names)), names, rotation=30, ha="right")
    ax.set_yticks(range(len(names)), names)
    for i in range(len(names)):
        for j in range(len(names)):
            ax.text(j, i, str(int(matrix[i, j])), ha="center", va="center",
                    color="black" if matrix[i, j] < matrix.max() * 0.6 else "white")
    ax.set_title("Shared SATD keywords between sources")
    fig.colorbar(im, ax=ax, shrink=0.8)
    fig.tight_layout()
    fig.savefig(outdir / "shared_keywords.png", dpi=150)
    plt.close(fig)


def save_flows(
    flows: Sequence[ContributionFlow],
    unresolved: Sequence[UnresolvedRef],
    outdir: str | Path,
) -> None:
    """flows.jsonl + unresolved_refs.csv + flow-kind count figure."""
    outdir = Path(outdir)
    with open(outdir / "flows.jsonl", "w", encoding="utf-8") as fh:
        for flow in flows:
            fh.write(json.dumps(flow.to_json(), sort_keys=True) + "\n")
    rows: list[list] = [["record_id", "ref_type", "value"]]
    rows += [[u.record_id, u.ref_type, u.value] for u in unresolved]
    write_csv(rows, outdir / "unresolved_refs.csv")
    kinds = ["IPCC", "ICC", "PCC", "CC"]
    counts = [sum(1 for f in flows if f.kind == k) for k in kinds]
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.bar(kinds, counts, color="tab:green")
    ax.set_ylabel("flows")
    ax.set_title("Contribution flows by kind")
    fig.tight_layout()
    fig.savefig(outdir / "flow_kinds.png", dpi=150)
    plt.close(fig)


def save_pairs(pairs: Sequence[SimilarityPair], threshold: float, outdir: str | Path) -> None:
    """pairs.csv + similarity-score histogram with the relatedness threshold."""
    outdir = Path(outdir)
    rows: list[list] = [["flow", "source_a", "id_a", "source_b", "id_b", "score", "related"]]
    for p in pairs:
        rows.append(
            [p.flow_id, p.source_a.value, p.id_a, p.source_b.value, p.id_b,
             f"{p.score:.6f}", int(p.related)]
        )
    write_csv(rows, outdir / "pairs.csv")
    fig, ax = plt.subplots(figsize=(7, 4))
    scores = [p.score for p in pairs]
    ax.hist(scores, bins=20, range=(0.0, 1.0), color="tab:blue", edgecolor="white")
    ax.axvline(threshold, color="tab:red", linestyle="--", linewidth=1,
               label=f"related above {threshold}")
    ax.set_xlabel("cosine similarity")
    ax.set_ylabel("SATD pairs")
    ax.set_title("Similarity of SATD pairs within contribution flows")
    ax.legend(loc="upper right")
    fig.tight_layout()
    fig.savefig(outdir / "similarity_hist.png", dpi=150)
    plt.close(fig)
