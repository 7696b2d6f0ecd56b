"""Interaction-log ingestion, per-learner sequences and leave-one-out splits."""

from __future__ import annotations

import json
import logging
import re
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import pandas as pd

log = logging.getLogger(__name__)

DEFAULT_SCHEMA = {
    "learner": "user_id",
    "concept": ["skill_id", "skill_name"],
    "concept_name": "skill_name",
    "correct": "correct",
    "order": "order_id",
}

# multi-skill rows keep only the first listed concept
_MULTI_ID_SEP = re.compile(r"[,;_]|~~")
_MULTI_NAME_SEP = re.compile(r"~~")


class IngestError(ValueError):
    pass


@dataclass(frozen=True)
class InteractionRecord:
    learner: int
    concept: int
    correct: bool
    order: float
    row: int = 0  # input row position, breaks order ties


@dataclass
class Catalog:
    concepts: list[str]
    learners: list[str]
    concept_keys: list[str] = field(default_factory=list)
    learner_keys: list[str] = field(default_factory=list)

    @property
    def M(self) -> int:
        return len(self.concepts)

    @property
    def N(self) -> int:
        return len(self.learners)

    def to_json(self) -> dict:
        return {
            "concepts": self.concepts,
            "learners": self.learners,
            "concept_keys": self.concept_keys,
            "learner_keys": self.learner_keys,
        }

    @classmethod
    def from_json(cls, doc: dict) -> "Catalog":
        return cls(
            concepts=list(doc["concepts"]),
            learners=list(doc["learners"]),
            concept_keys=list(doc.get("concept_keys", [])),
            learner_keys=list(doc.get("learner_keys", [])),
        )


@dataclass(frozen=True)
class LearnerSequence:
    learner: int
    steps: tuple  # ((concept, correct), ...)

    @property
    def concepts(self) -> list[int]:
        return [k for k, _ in self.steps]

    def __len__(self):
        return len(self.steps)


@dataclass(frozen=True)
class SplitSpec:
    """Leave-one-out split.

    train_contexts: (learner, prefix_len) pairs; history is steps[:prefix_len]
    and the positive is steps[prefix_len], always inside the training part.
    test_targets: (learner, concept) with the concept being the final step.
    """

    train_contexts: tuple
    test_targets: tuple
    sequences: dict  # learner -> LearnerSequence

    def train_steps(self, learner: int) -> tuple:
        seq = self.sequences[learner]
        if any(u == learner for u, _ in self.test_targets):
            return seq.steps[:-1]
        return seq.steps

    def eval_history(self, learner: int) -> tuple:
        return self.sequences[learner].steps[:-1]


@dataclass(frozen=True)
class CorpusStats:
    n_learners: int
    n_concepts: int
    n_interactions: int
    mean_length: float


def _first(value: str, sep: re.Pattern) -> str:
    return sep.split(value)[0].strip()


def _parse_correct(value) -> bool | None:
    if value is None:
        return None
    s = str(value).strip().lower()
    if s in ("", "nan", "none", "null"):
        return None
    if s in ("true", "t", "yes"):
        return True
    if s in ("false", "f", "no"):
        return False
    try:
        return float(s) >= 0.5
    except ValueError:
        return None


def _resolve_schema(columns, schema_map) -> dict:
    schema = dict(DEFAULT_SCHEMA)
    schema.update(schema_map or {})
    resolved = {}
    for role in ("learner", "concept", "correct", "order"):
        wanted = schema[role]
        options = wanted if isinstance(wanted, (list, tuple)) else [wanted]
        hit = next((c for c in options if c in columns), None)
        if hit is None:
            raise IngestError(f"column for {role!r} not found (tried {options})")
        resolved[role] = hit
    name_col = schema.get("concept_name")
    resolved["concept_name"] = name_col if name_col in columns else None
    return resolved


def ingest_csv(path, schema_map=None, *, encoding="utf-8"):
    """Read an interaction CSV and return (catalog, records, drop counts).

    Learner and concept keys are re-indexed densely in first-appearance
    order.  Rows missing the learner, the concept or the correctness flag
    are dropped and counted.
    """
    path = Path(path)
    try:
        header = pd.read_csv(path, nrows=0, encoding=encoding, encoding_errors="replace")
    except (OSError, pd.errors.ParserError, pd.errors.EmptyDataError) as exc:
        raise IngestError(f"cannot read {path}: {exc}") from exc
    cols = _resolve_schema(list(header.columns), schema_map)
    usecols = sorted({c for c in cols.values() if c})
    df = pd.read_csv(
        path,
        usecols=usecols,
        dtype=str,
        keep_default_na=False,
        encoding=encoding,
        encoding_errors="replace",
    )

    drops = Counter()
    learner_index: dict[str, int] = {}
    concept_index: dict[str, int] = {}
    concept_names: dict[str, str] = {}
    records = []
    name_col = cols["concept_name"]
    concept_is_name = cols["concept"] == name_col
    sep = _MULTI_NAME_SEP if concept_is_name else _MULTI_ID_SEP

    learners = df[cols["learner"]].tolist()
    concepts = df[cols["concept"]].tolist()
    corrects = df[cols["correct"]].tolist()
    orders = df[cols["order"]].tolist()
    names = df[name_col].tolist() if name_col else [""] * len(df)

    for row, (u, k, y, t, name) in enumerate(zip(learners, concepts, corrects, orders, names)):
        u = u.strip()
        k = _first(k, sep) if k else ""
        if not u:
            drops["missing_learner"] += 1
            continue
        if not k:
            drops["missing_concept"] += 1
            continue
        flag = _parse_correct(y)
        if flag is None:
            drops["missing_correct"] += 1
            continue
        try:
            order = float(t)
        except ValueError:
            order = float(row)
        if u not in learner_index:
            learner_index[u] = len(learner_index)
        if k not in concept_index:
            concept_index[k] = len(concept_index)
        if k not in concept_names:
            text = _first(name, _MULTI_NAME_SEP) if name else ""
            if text:
                concept_names[k] = text
        records.append(InteractionRecord(learner_index[u], concept_index[k], flag, order, row))

    if not records:
        raise IngestError(f"{path}: zero valid rows")
    if drops:
        log.info("dropped rows: %s", dict(drops))

    concept_keys = list(concept_index)
    learner_keys = list(learner_index)
    catalog = Catalog(
        concepts=[concept_names.get(k) or k for k in concept_keys],
        learners=learner_keys[:],  # profiles filled in by synthesize_profiles
        concept_keys=concept_keys,
        learner_keys=learner_keys,
    )
    catalog.learners = synthesize_profiles(catalog, records)
    return catalog, records, dict(drops)


def synthesize_profiles(catalog: Catalog, records) -> list[str]:
    """Profile prose for learners when the data carries none."""
    per_learner: dict[int, Counter] = {}
    for r in records:
        per_learner.setdefault(r.learner, Counter())[r.concept] += 1
    profiles = []
    for u, key in enumerate(catalog.learner_keys or [str(i) for i in range(catalog.N)]):
        counts = per_learner.get(u, Counter())
        top = sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))[:5]
        names = ", ".join(catalog.concepts[k] for k, _ in top)
        n = sum(counts.values())
        profiles.append(f"student {key} with {n} interactions over concepts {names}".strip())
    return profiles


def build_sequences(records) -> list[LearnerSequence]:
    by_learner: dict[int, list] = {}
    for r in records:
        by_learner.setdefault(r.learner, []).append(r)
    out = []
    for u in sorted(by_learner):
        rs = sorted(by_learner[u], key=lambda r: (r.order, r.row))
        out.append(LearnerSequence(u, tuple((r.concept, r.correct) for r in rs)))
    return out


def split_leave_one_out(sequences) -> SplitSpec:
    train, test, seqs = [], [], {}
    for seq in sequences:
        seqs[seq.learner] = seq
        n = len(seq)
        if n >= 2:
            test.append((seq.learner, seq.steps[-1][0]))
            n_train = n - 1
        else:
            n_train = n
        for prefix in range(1, n_train):
            train.append((seq.learner, prefix))
    return SplitSpec(tuple(train), tuple(test), seqs)


def corpus_stats(records, catalog: Catalog | None = None) -> CorpusStats:
    n = len({r.learner for r in records})
    m = catalog.M if catalog is not None else len({r.concept for r in records})
    total = len(records)
    return CorpusStats(n, m, total, total / n if n else 0.0)


# canonical corpus files


def write_corpus(directory, catalog: Catalog, records):
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    with open(directory / "records.jsonl", "w") as fh:
        for r in records:
            fh.write(json.dumps({"u": r.learner, "k": r.concept, "y": int(r.correct), "t": r.order}) + "\n")
    (directory / "catalog.json").write_text(json.dumps(catalog.to_json(), indent=1, sort_keys=True))


def read_corpus(directory):
    directory = Path(directory)
    catalog = Catalog.from_json(json.loads((directory / "catalog.json").read_text()))
    records = []
    with open(directory / "records.jsonl") as fh:
        for row, line in enumerate(fh):
            d = json.loads(line)
            records.append(InteractionRecord(d["u"], d["k"], bool(d["y"]), float(d["t"]), row))
    return catalog, records


def subsample(items, budget, rng: np.random.Generator):
    """Deterministic subsample keeping input order."""
    items = list(items)
    if budget is None or budget >= len(items):
        return items
    keep = np.sort(rng.choice(len(items), size=budget, replace=False))
    return [items[i] for i in keep]


def stratified_subsample(items, budget, key, rng: np.random.Generator):
    """Spread a budget evenly over the groups defined by `key`.

    Takes one random item from every group in turn until the budget is
    spent, so rare groups are represented before common ones repeat.
    """
    items = list(items)
    if budget is None or budget >= len(items):
        return items
    groups: dict = {}
    for it in items:
        groups.setdefault(key(it), []).append(it)
    queues = [[g[i] for i in rng.permutation(len(g))] for _, g in sorted(groups.items())]
    out = []
    depth = 0
    while len(out) < budget:
        for q in queues:
            if depth < len(q) and len(out) < budget:
                out.append(q[depth])
        depth += 1
    return out
