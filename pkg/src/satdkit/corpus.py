"""Ingestion, cleansing, tokenization, and stratification of text records.

Records come from four sources (code comments, commit messages, pull request
sections, issue sections) in a JSON Lines export, are cleansed into a
lowercase ASCII form, and can be dealt into stratified folds for
cross-validation.
"""

from __future__ import annotations

import json
import logging
import re
from collections import Counter
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

log = logging.getLogger(__name__)


class DatasetError(ValueError):
    """Raised for malformed or inconsistent input data."""


class SourceKind(Enum):
    """The four text sources; task ids 0..3 follow declaration order."""

    COMMENT = "comment"
    COMMIT = "commit"
    PULL = "pull"
    ISSUE = "issue"

    @property
    def task_id(self) -> int:
        return _SOURCE_ORDER.index(self)


_SOURCE_ORDER = (SourceKind.COMMENT, SourceKind.COMMIT, SourceKind.PULL, SourceKind.ISSUE)


def source_for_task(task: int) -> SourceKind:
    return _SOURCE_ORDER[task]


class DebtLabel(Enum):
    """Five classes: four debt types plus non-SATD; indices 0..4 are fixed."""

    CODE_DESIGN = "code_design"
    DOCUMENTATION = "documentation"
    TEST = "test"
    REQUIREMENT = "requirement"
    NON_SATD = "non_satd"

    @property
    def class_index(self) -> int:
        return _LABEL_ORDER.index(self)


_LABEL_ORDER = (
    DebtLabel.CODE_DESIGN,
    DebtLabel.DOCUMENTATION,
    DebtLabel.TEST,
    DebtLabel.REQUIREMENT,
    DebtLabel.NON_SATD,
)

SATD_LABELS = _LABEL_ORDER[:4]
NUM_CLASSES = len(_LABEL_ORDER)


def label_for_class(index: int) -> DebtLabel:
    return _LABEL_ORDER[index]


@dataclass
class RefSet:
    """References extracted from raw text: Jira keys, PR numbers, commit hashes."""

    issue_keys: set[str] = field(default_factory=set)
    pr_numbers: set[int] = field(default_factory=set)
    commit_hashes: set[str] = field(default_factory=set)

    def __bool__(self) -> bool:
        return bool(self.issue_keys or self.pr_numbers or self.commit_hashes)

    def to_json(self) -> dict:
        return {
            "issue_keys": sorted(self.issue_keys),
            "pr_numbers": sorted(self.pr_numbers),
            "commit_hashes": sorted(self.commit_hashes),
        }

    @classmethod
    def from_json(cls, obj: dict) -> "RefSet":
        return cls(
            issue_keys=set(obj.get("issue_keys", ())),
            pr_numbers={int(n) for n in obj.get("pr_numbers", ())},
            commit_hashes=set(obj.get("commit_hashes", ())),
        )


@dataclass
class Record:
    """One classifiable text unit with provenance and optional label."""

    id: str
    source: SourceKind
    raw_text: str
    project: str = ""
    author: str = ""
    entity: str = ""
    label: DebtLabel | None = None
    clean_text: str = ""
    tokens: list[str] = field(default_factory=list)
    refs: RefSet = field(default_factory=RefSet)

    def to_json(self) -> dict:
        obj: dict = {"id": self.id, "source": self.source.value, "text": self.raw_text}
        if self.project:
            obj["project"] = self.project
        if self.author:
            obj["author"] = self.author
        if self.entity:
            obj["entity"] = self.entity
        if self.label is not None:
            obj["label"] = self.label.value
        if self.clean_text:
            obj["clean_text"] = self.clean_text
        if self.tokens:
            obj["tokens"] = self.tokens
        if self.refs:
            obj["refs"] = self.refs.to_json()
        return obj


def load_jsonl(path: str | Path) -> list[Record]:
    """Read one Record per line; abort on malformed lines, bad enums, dup ids."""
    records: list[Record] = []
    seen: set[str] = set()
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DatasetError(f"{path}:{lineno}: malformed JSON ({exc.msg})") from exc
            for key in ("id", "source", "text"):
                if key not in obj:
                    raise DatasetError(f"{path}:{lineno}: missing required key '{key}'")
            try:
                source = SourceKind(obj["source"])
            except ValueError:
                raise DatasetError(
                    f"{path}:{lineno}: unknown source '{obj['source']}'"
                ) from None
            label = None
            if obj.get("label") is not None:
                try:
                    label = DebtLabel(obj["label"])
                except ValueError:
                    raise DatasetError(
                        f"{path}:{lineno}: unknown label '{obj['label']}'"
                    ) from None
            rid = str(obj["id"])
            if rid in seen:
                raise DatasetError(f"{path}:{lineno}: duplicate id '{rid}'")
            seen.add(rid)
            records.append(
                Record(
                    id=rid,
                    source=source,
                    raw_text=obj["text"],
                    project=obj.get("project", ""),
                    author=obj.get("author", ""),
                    entity=str(obj.get("entity", "")),
                    label=label,
                    clean_text=obj.get("clean_text", ""),
                    tokens=list(obj.get("tokens", ())),
                    refs=RefSet.from_json(obj["refs"]) if "refs" in obj else RefSet(),
                )
            )
    return records


def dump_jsonl(records: Iterable[Record], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(json.dumps(rec.to_json(), ensure_ascii=False) + "\n")


def load_bot_list(path: str | Path) -> set[str]:
    """Bot usernames, one per line; blank lines and '#' comments skipped."""
    bots: set[str] = set()
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            name = line.strip()
            if name and not name.startswith("#"):
                bots.add(name)
    return bots


_CODE_DELIM = re.compile(r"```|\{code[^}]*\}")


def strip_code_blocks(text: str) -> str:
    """Remove fenced code spans (``` pairs and Jira {code} pairs), delimiters included.

    An unclosed opening delimiter swallows everything to the end of the text.
    """
    parts: list[str] = []
    pos = 0
    while True:
        opener = _CODE_DELIM.search(text, pos)
        if opener is None:
            parts.append(text[pos:])
            break
        parts.append(text[pos : opener.start()])
        if opener.group() == "```":
            end = text.find("```", opener.end())
            pos = len(text) if end < 0 else end + 3
        else:
            closer = _CODE_DELIM.search(text, opener.end())
            while closer is not None and closer.group() == "```":
                closer = _CODE_DELIM.search(text, closer.end())
            pos = len(text) if closer is None else closer.end()
    return "".join(parts)


def remove_bot_records(records: Sequence[Record], bot_usernames: set[str]) -> list[Record]:
    """Drop records whose author exactly matches a bot username."""
    return [rec for rec in records if rec.author not in bot_usernames]


_DIGITS = re.compile(r"[0-9]")
_NON_WORD = re.compile(r"[^A-Za-z'-]")


def normalize(text: str) -> str:
    """Digits removed, non-ASCII-letter chars (except ' and -) spaced, lowercased."""
    text = _DIGITS.sub("", text)
    text = _NON_WORD.sub(" ", text)
    return " ".join(text.lower().split())


def tokenize(text: str) -> list[str]:
    """Split normalized text on spaces; no empty tokens."""
    return text.split()


@dataclass
class LabeledCorpus:
    """All-labeled records from a single source, with per-class counts."""

    records: list[Record]
    source: SourceKind
    class_counts: Counter = field(default_factory=Counter)

    @classmethod
    def from_records(cls, records: Sequence[Record], source: SourceKind | None = None) -> "LabeledCorpus":
        records = list(records)
        if not records:
            raise DatasetError("cannot build a corpus from zero records")
        src = source or records[0].source
        counts: Counter = Counter()
        for rec in records:
            if rec.label is None:
                raise DatasetError(f"record '{rec.id}' has no label")
            if rec.source is not src:
                raise DatasetError(
                    f"record '{rec.id}' has source {rec.source.value}, expected {src.value}"
                )
            counts[rec.label] += 1
        return cls(records=records, source=src, class_counts=counts)

    def __len__(self) -> int:
        return len(self.records)


@dataclass
class FoldAssignment:
    """Mapping record id -> fold index for k stratified folds."""

    k: int
    assignment: dict[str, int]

    def fold_of(self, record_id: str) -> int:
        return self.assignment[record_id]


def stratified_split(corpus: LabeledCorpus, k: int, seed: int) -> FoldAssignment:
    """Shuffle each class with the seeded generator, deal round-robin to k folds.

    Guarantees per-class fold counts differ by at most 1. Emits a warning when
    k exceeds the smallest class count (some folds will then lack that class).
    """
    if k < 2:
        raise DatasetError(f"fold count must be >= 2, got {k}")
    smallest = min(corpus.class_counts.values())
    if k > smallest:
        log.warning(
            "fold count %d exceeds smallest class count %d; some folds will lack that class",
            k,
            smallest,
        )
    rng = np.random.default_rng(seed)
    assignment: dict[str, int] = {}
    by_class: dict[DebtLabel, list[str]] = {}
    for rec in corpus.records:
        by_class.setdefault(rec.label, []).append(rec.id)
    for label in sorted(by_class, key=lambda lb: lb.class_index):
        ids = by_class[label]
        order = rng.permutation(len(ids))
        for i, j in enumerate(order):
            assignment[ids[j]] = i % k
    return FoldAssignment(k=k, assignment=assignment)
