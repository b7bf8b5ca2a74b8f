"""Cross-source link reconstruction, contribution flows, and SATD pair
similarity.

References (Jira keys, PR numbers, commit hashes) are extracted from raw text
before cleansing, resolved against the artifact identities declared by the
records' optional `entity` field, and merged transitively into contribution
flows (IPCC / ICC / PCC / CC). Within each flow, SATD items from different
sources are compared by bag-of-words cosine similarity.
"""

from __future__ import annotations

import re
from collections import Counter
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .corpus import Record, RefSet, SourceKind, normalize

IPCC = "IPCC"
ICC = "ICC"
PCC = "PCC"
CC = "CC"
FLOW_KINDS = (IPCC, ICC, PCC, CC)

DEFAULT_THRESHOLD = 0.5


@dataclass
class RefPattern:
    """Configurable reference syntax; defaults cover Jira + GitHub + git."""

    issue_key: str = r"(?<![A-Za-z0-9])([A-Z][A-Z0-9]+-[0-9]+)(?![0-9A-Za-z])"
    pr_number: str = r"#([0-9]+)(?![0-9])"
    commit_hash: str = r"(?<![0-9A-Za-z])([0-9a-f]{7,40})(?![0-9A-Za-z])"

    def compiled(self):
        return (
            re.compile(self.issue_key),
            re.compile(self.pr_number),
            re.compile(self.commit_hash),
        )


DEFAULT_PATTERNS = RefPattern()


def extract_refs(text: str, patterns: RefPattern = DEFAULT_PATTERNS) -> RefSet:
    """Pull issue keys, PR numbers, and commit hashes out of raw text.

    Runs before cleansing (normalization destroys digits). A hash candidate
    must contain at least one digit, so plain hex-looking words ("decade")
    do not count.
    """
    issue_re, pr_re, hash_re = patterns.compiled()
    refs = RefSet()
    refs.issue_keys.update(m.group(1) for m in issue_re.finditer(text))
    refs.pr_numbers.update(int(m.group(1)) for m in pr_re.finditer(text))
    for m in hash_re.finditer(text):
        token = m.group(1)
        if any(ch.isdigit() for ch in token):
            refs.commit_hashes.add(token)
    return refs


@dataclass
class ContributionFlow:
    """A linked group of records reachable from one or more commits."""

    id: str
    kind: str
    issue_ids: set[str] = field(default_factory=set)
    pull_ids: set[str] = field(default_factory=set)
    commit_ids: set[str] = field(default_factory=set)
    comment_ids: set[str] = field(default_factory=set)

    def record_ids(self) -> set[str]:
        return self.issue_ids | self.pull_ids | self.commit_ids | self.comment_ids

    def to_json(self) -> dict:
        return {
            "id": self.id,
            "kind": self.kind,
            "issue_ids": sorted(self.issue_ids),
            "pull_ids": sorted(self.pull_ids),
            "commit_ids": sorted(self.commit_ids),
            "comment_ids": sorted(self.comment_ids),
        }


@dataclass
class UnresolvedRef:
    """A reference that matched no artifact in the corpus."""

    record_id: str
    ref_type: str
    value: str


class _UnionFind:
    def __init__(self):
        self.parent: dict = {}

    def find(self, x):
        self.parent.setdefault(x, x)
        root = x
        while self.parent[root] != root:
            root = self.parent[root]
        while self.parent[x] != root:
            self.parent[x], x = root, self.parent[x]
        return root

    def union(self, a, b):
        ra, rb = self.find(a), self.find(b)
        if ra != rb:
            self.parent[rb] = ra


def _kind_of(has_issue: bool, has_pull: bool) -> str:
    if has_issue and has_pull:
        return IPCC
    if has_issue:
        return ICC
    if has_pull:
        return PCC
    return CC


def build_flows(
    records: Sequence[Record],
    commit_comments: Mapping[str, Sequence[str]] | None = None,
) -> tuple[list[ContributionFlow], list[UnresolvedRef]]:
    """Group records into contribution flows seeded by commits.

    Edges follow the export conventions: a pull section referencing an issue
    key (or GitHub issue number) links pull to issue; a commit message
    referencing a PR number or issue key links the commit; a merged commit
    hash appearing in a pull section links back commit to pull. Flows merge
    transitively through shared pulls and issues. Dangling references are
    returned, not fatal.
    """
    commit_comments = commit_comments or {}
    issues_by_key: dict[str, list[Record]] = {}
    entities_by_number: dict[int, list[Record]] = {}
    commits_by_hash: dict[str, Record] = {}
    for rec in records:
        if not rec.entity:
            continue
        if rec.source is SourceKind.COMMIT:
            commits_by_hash[rec.entity.lower()] = rec
        elif rec.entity.startswith("#"):
            entities_by_number.setdefault(int(rec.entity[1:]), []).append(rec)
        elif rec.source is SourceKind.ISSUE:
            issues_by_key.setdefault(rec.entity, []).append(rec)

    def entity_node(rec: Record):
        # Sections of the same issue/pull share one node via the entity tag;
        # commits and untagged records are their own node.
        if rec.entity and rec.source in (SourceKind.ISSUE, SourceKind.PULL):
            return (rec.source.value, rec.entity)
        return (rec.source.value, "id:" + rec.id)

    uf = _UnionFind()
    unresolved: list[UnresolvedRef] = []

    def resolve_number(rec: Record, number: int) -> None:
        targets = entities_by_number.get(number)
        if not targets:
            unresolved.append(UnresolvedRef(rec.id, "pr_number", f"#{number}"))
            return
        for target in targets:
            if target.source is rec.source and target.entity == rec.entity:
                continue  # self-reference between sections of one artifact
            if rec.source is SourceKind.COMMIT and target.source in (
                SourceKind.PULL,
                SourceKind.ISSUE,
            ):
                uf.union(entity_node(rec), entity_node(target))
            elif rec.source is SourceKind.PULL and target.source is SourceKind.ISSUE:
                uf.union(entity_node(rec), entity_node(target))

    def resolve_issue_key(rec: Record, key: str) -> None:
        targets = issues_by_key.get(key)
        if not targets:
            unresolved.append(UnresolvedRef(rec.id, "issue_key", key))
            return
        if rec.source in (SourceKind.PULL, SourceKind.COMMIT):
            uf.union(entity_node(rec), entity_node(targets[0]))

    def resolve_hash(rec: Record, hex_ref: str) -> None:
        hex_ref = hex_ref.lower()
        target = commits_by_hash.get(hex_ref)
        if target is None:
            # git-style prefix match, either direction
            for full, candidate in commits_by_hash.items():
                if full.startswith(hex_ref) or hex_ref.startswith(full):
                    target = candidate
                    break
        if target is None:
            unresolved.append(UnresolvedRef(rec.id, "commit_hash", hex_ref))
            return
        if rec.source is SourceKind.PULL:
            uf.union(entity_node(target), entity_node(rec))

    for rec in records:
        if rec.source is SourceKind.COMMENT:
            continue
        for key in sorted(rec.refs.issue_keys):
            resolve_issue_key(rec, key)
        for number in sorted(rec.refs.pr_numbers):
            resolve_number(rec, number)
        for hex_ref in sorted(rec.refs.commit_hashes):
            if rec.entity and rec.source is SourceKind.COMMIT and hex_ref == rec.entity.lower():
                continue
            resolve_hash(rec, hex_ref)

    groups: dict = {}
    for rec in records:
        groups.setdefault(uf.find(entity_node(rec)), []).append(rec)

    flows: list[ContributionFlow] = []
    components = [
        members
        for members in groups.values()
        if any(r.source is SourceKind.COMMIT for r in members)
    ]
    components.sort(key=lambda members: min(r.id for r in members if r.source is SourceKind.COMMIT))
    for index, members in enumerate(components):
        flow = ContributionFlow(id=f"flow{index:05d}", kind=CC)
        for rec in members:
            if rec.source is SourceKind.ISSUE:
                flow.issue_ids.add(rec.id)
            elif rec.source is SourceKind.PULL:
                flow.pull_ids.add(rec.id)
            elif rec.source is SourceKind.COMMIT:
                flow.commit_ids.add(rec.id)
                flow.comment_ids.update(commit_comments.get(rec.id, ()))
            else:
                flow.comment_ids.add(rec.id)
        flow.kind = _kind_of(bool(flow.issue_ids), bool(flow.pull_ids))
        flows.append(flow)
    return flows, unresolved


_BUNDLED_STOP_WORDS: set[str] | None = None


def _parse_stop_words(text: str) -> set[str]:
    words = set()
    for line in text.splitlines():
        line = line.strip()
        if line and not line.startswith("#"):
            words.add(line)
    return words


def load_stop_words(path: str | Path | None = None) -> set[str]:
    """The versioned stop-word list (127 words), or a caller-supplied file."""
    global _BUNDLED_STOP_WORDS
    if path is not None:
        return _parse_stop_words(Path(path).read_text(encoding="utf-8"))
    if _BUNDLED_STOP_WORDS is None:
        text = resources.files("satdkit").joinpath("data/stopwords.txt").read_text("utf-8")
        _BUNDLED_STOP_WORDS = _parse_stop_words(text)
    return set(_BUNDLED_STOP_WORDS)


def bow_vector(text: str, stop_words: set[str], binary: bool = False) -> dict[str, int]:
    """Term-count vector: numbers removed, lowercased, stop words dropped.

    With binary=True every surviving term counts 1 regardless of repeats.
    """
    tokens = [t for t in normalize(text).split() if t not in stop_words]
    if binary:
        return {t: 1 for t in tokens}
    return dict(Counter(tokens))


def cosine(u: Mapping[str, float], v: Mapping[str, float]) -> float:
    """Cosine similarity of sparse count vectors; 0 if either is empty."""
    if not u or not v:
        return 0.0
    if len(v) < len(u):
        u, v = v, u
    dot = sum(value * v[term] for term, value in u.items() if term in v)
    norm_u = np.sqrt(sum(value * value for value in u.values()))
    norm_v = np.sqrt(sum(value * value for value in v.values()))
    return float(dot / (norm_u * norm_v))


@dataclass
class SimilarityPair:
    """Two SATD records from different sources within the same flow."""

    id_a: str
    id_b: str
    source_a: SourceKind
    source_b: SourceKind
    flow_id: str
    score: float
    related: bool


def find_related(
    flows: Sequence[ContributionFlow],
    satd_records: Sequence[Record],
    stop_words: set[str] | None = None,
    threshold: float = DEFAULT_THRESHOLD,
    binary_bow: bool = False,
) -> list[SimilarityPair]:
    """Score every cross-source SATD pair inside each flow.

    Records in different flows are never paired; pairs scoring strictly above
    the threshold are marked related. Output is ordered by (flow, id_a, id_b).
    """
    if stop_words is None:
        stop_words = load_stop_words()
    by_id = {rec.id: rec for rec in satd_records}
    vectors = {
        rec.id: bow_vector(rec.raw_text, stop_words, binary=binary_bow)
        for rec in satd_records
    }
    pairs: list[SimilarityPair] = []
    for flow in flows:
        members = sorted(rid for rid in flow.record_ids() if rid in by_id)
        for i, rid_a in enumerate(members):
            for rid_b in members[i + 1 :]:
                rec_a, rec_b = by_id[rid_a], by_id[rid_b]
                if rec_a.source is rec_b.source:
                    continue
                score = cosine(vectors[rid_a], vectors[rid_b])
                pairs.append(
                    SimilarityPair(
                        id_a=rid_a,
                        id_b=rid_b,
                        source_a=rec_a.source,
                        source_b=rec_b.source,
                        flow_id=flow.id,
                        score=score,
                        related=score > threshold,
                    )
                )
    return pairs


def related_counts(pairs: Iterable[SimilarityPair]) -> Counter:
    """Related-pair counts per unordered source pair."""
    counts: Counter = Counter()
    for pair in pairs:
        if pair.related:
            key = tuple(sorted((pair.source_a.value, pair.source_b.value)))
            counts[key] += 1
    return counts
