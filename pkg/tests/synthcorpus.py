"""Synthetic corpora used across the test suite.

The planted-trigger corpus marks each debt class with trigger phrases whose
tokens appear nowhere else, so a working classifier must reach near-perfect
F1 and keyword extraction must surface the triggers.
"""

from __future__ import annotations

import numpy as np

from satdkit.corpus import DebtLabel, LabeledCorpus, Record, SourceKind

# class -> three trigger phrases; all trigger tokens are unique to their class
TRIGGERS: dict[DebtLabel, list[str]] = {
    DebtLabel.CODE_DESIGN: ["hackish", "messy workaround", "refactor rotten logic"],
    DebtLabel.DOCUMENTATION: ["undocumented", "missing javadoc", "outdated manual pages"],
    DebtLabel.TEST: ["flaky", "absent coverage", "brittle testing suite"],
    DebtLabel.REQUIREMENT: ["unimplemented", "unsupported capability", "pending feature stub"],
}

# canonical order used by the keyword-recovery criterion
TRIGGER_LIST: list[tuple[DebtLabel, str]] = [
    (label, phrase) for label in TRIGGERS for phrase in TRIGGERS[label]
]

NOISE_VOCAB = [f"w{i:03d}" for i in range(300)]


def _record(source: SourceKind, rid: str, tokens: list[str], label: DebtLabel) -> Record:
    text = " ".join(tokens)
    return Record(
        id=rid,
        source=source,
        raw_text=text,
        clean_text=text,
        tokens=tokens,
        label=label,
    )


def planted_corpus(
    source: SourceKind,
    n: int = 2000,
    satd_fraction: float = 0.10,
    seed: int = 0,
    min_len: int = 6,
    max_len: int = 18,
) -> LabeledCorpus:
    """One source's corpus: satd_fraction of records carry a class trigger."""
    rng = np.random.default_rng(seed)
    n_satd = int(n * satd_fraction)
    per_class = n_satd // len(TRIGGERS)
    records: list[Record] = []
    i = 0
    for label, phrases in TRIGGERS.items():
        for _ in range(per_class):
            length = int(rng.integers(min_len, max_len + 1))
            tokens = [NOISE_VOCAB[j] for j in rng.integers(len(NOISE_VOCAB), size=length)]
            phrase = phrases[int(rng.integers(len(phrases)))].split()
            pos = int(rng.integers(0, len(tokens) - len(phrase) + 1))
            tokens[pos : pos + len(phrase)] = phrase
            records.append(_record(source, f"{source.value}-{i}", tokens, label))
            i += 1
    while i < n:
        length = int(rng.integers(min_len, max_len + 1))
        tokens = [NOISE_VOCAB[j] for j in rng.integers(len(NOISE_VOCAB), size=length)]
        records.append(_record(source, f"{source.value}-{i}", tokens, DebtLabel.NON_SATD))
        i += 1
    order = rng.permutation(len(records))
    return LabeledCorpus.from_records([records[j] for j in order], source)


def planted_multisource(
    n_per_source: int = 2000, satd_fraction: float = 0.10, seed: int = 0
) -> list[LabeledCorpus]:
    return [
        planted_corpus(source, n_per_source, satd_fraction, seed + source.task_id)
        for source in SourceKind
    ]


BINARY_TRIGGER = "glitchy"


def imbalanced_binary_corpus(
    n_minority: int = 40,
    majority_ratio: int = 20,
    trigger_leak: float = 0.25,
    seed: int = 0,
    source: SourceKind = SourceKind.COMMIT,
) -> LabeledCorpus:
    """1:ratio binary corpus where the minority trigger also leaks into the
    majority class, so an unweighted classifier prefers the majority on
    trigger-bearing records while a weighted one flips them."""
    rng = np.random.default_rng(seed)
    records: list[Record] = []

    def noise(length: int) -> list[str]:
        return [NOISE_VOCAB[j] for j in rng.integers(len(NOISE_VOCAB), size=length)]

    for i in range(n_minority):
        tokens = noise(int(rng.integers(5, 12)))
        tokens[int(rng.integers(len(tokens)))] = BINARY_TRIGGER
        records.append(_record(source, f"min-{i}", tokens, DebtLabel.CODE_DESIGN))
    for i in range(n_minority * majority_ratio):
        tokens = noise(int(rng.integers(5, 12)))
        if rng.random() < trigger_leak:
            tokens[int(rng.integers(len(tokens)))] = BINARY_TRIGGER
        records.append(_record(source, f"maj-{i}", tokens, DebtLabel.DOCUMENTATION))
    order = rng.permutation(len(records))
    return LabeledCorpus.from_records([records[j] for j in order], source)


def random_labeled_corpus(
    n: int, num_classes: int, seed: int, source: SourceKind = SourceKind.ISSUE
) -> LabeledCorpus:
    """Arbitrary label assignment (every class present) for stratification tests."""
    rng = np.random.default_rng(seed)
    labels = list(DebtLabel)[:num_classes]
    records = []
    for i in range(n):
        # first num_classes records guarantee every class is present
        label = labels[i] if i < num_classes else labels[int(rng.integers(num_classes))]
        records.append(_record(source, f"r{i}", ["tok"], label))
    return LabeledCorpus.from_records(records, source)


def linking_export() -> tuple[list[Record], dict[str, list[str]], dict[str, str]]:
    """A hand-built 30-record export with a known flow partition.

    Returns (records, commit->comment sidecar, expected record->flow-kind map
    keyed by commit id).
    """

    def rec(rid, source, text, entity="", label=None):
        return Record(
            id=rid, source=SourceKind(source), raw_text=text, entity=entity, label=label
        )

    records = [
        # flow A: IPCC (GitHub-style issue #100, pull #101, two commits, comments)
        rec("ia1", "issue", "Support quantized models. First PR: #101", "#100"),
        rec("ia2", "issue", "More discussion of the quantized work", "#100"),
        rec("pa1", "pull", "Initial frontend work. This is the first PR of #100", "#101"),
        rec("pa2", "pull", "Review comment: needs cleanup before merge", "#101"),
        rec("ca1", "commit", "Support frontend (#101) - fix lint issue", "aa11aa11aa11"),
        rec("ca2", "commit", "Follow-up tweaks for #101", "bb22bb22bb22"),
        rec("ma1", "comment", "add more shapes if we need them in future"),
        rec("ma2", "comment", "TODO revisit this conversion"),
        # flow B: ICC (Jira issue, two commits, one comment)
        rec("ib1", "issue", "Improvement of error messages when compiling", "CAMEL-9549"),
        rec("cb1", "commit", "CAMEL-9549 - Improvement of error messages", "cc33cc33"),
        rec("cb2", "commit", "CAMEL-9549 - polish the messages further", "dd44dd44"),
        rec("mb1", "comment", "error text could still be better"),
        # flow C: PCC (pull #300; one commit by number, one by merged-hash backlink)
        rec("pc1", "pull", "Streamline the build scripts", "#300"),
        rec("pc2", "pull", "Merged as ee55ee55ee55", "#300"),
        rec("cc1", "commit", "Streamline build scripts (#300)", "ff66ff66"),
        rec("cc2", "commit", "Apply final build tweak", "ee55ee55ee55"),
        rec("mc1", "comment", "simplify once the old path is gone"),
        # flow D/E: plain CC commits
        rec("cd1", "commit", "Fix typo", "0a0a0a0a"),
        rec("cd2", "commit", "Bump dependency version", "1b1b1b1b"),
        rec("md1", "comment", "legacy note kept for context"),
        # dangling reference: resolves to nothing, still a CC flow
        rec("cu1", "commit", "Address review feedback from #999", "2c2c2c2c"),
        # orphan sections: no commit in their component, so no flow of their own
        rec("io1", "issue", "Standalone question about the roadmap", "#900"),
        rec("po1", "pull", "Unmerged experiment", "#901"),
        rec("mo1", "comment", "floating comment"),
        # extra labeled SATD records inside flow A for similarity pairing
        rec("ia3", "issue", "we need to refactor the duplicated logic here", "#100",
            DebtLabel.CODE_DESIGN),
        rec("pa3", "pull", "agreed, refactor the duplicated logic in this module", "#101",
            DebtLabel.CODE_DESIGN),
        rec("ca3", "commit", "refactor duplicated logic (#101)", "3d3d3d3d",
            DebtLabel.CODE_DESIGN),
        rec("ib2", "issue", "please document the metrics endpoint", "CAMEL-9549",
            DebtLabel.DOCUMENTATION),
        rec("cb3", "commit", "CAMEL-9549 document the metrics endpoint", "4e4e4e4e",
            DebtLabel.DOCUMENTATION),
        rec("mb2", "comment", "documented the metrics endpoint at last"),
    ]
    from satdkit.linker import extract_refs

    for record in records:
        record.refs = extract_refs(record.raw_text)
    sidecar = {
        "ca1": ["ma1", "ma2"],
        "cb1": ["mb1"],
        "cc1": ["mc1"],
        "cd1": ["md1"],
        "cb3": ["mb2"],
    }
    expected_kinds = {
        "ca1": "IPCC",
        "ca2": "IPCC",
        "ca3": "IPCC",
        "cb1": "ICC",
        "cb2": "ICC",
        "cb3": "ICC",
        "cc1": "PCC",
        "cc2": "PCC",
        "cd1": "CC",
        "cd2": "CC",
        "cu1": "CC",
    }
    assert len(records) == 30
    return records, sidecar, expected_kinds
