"""Teacher-side prerequisite scoring and soft-label generation."""

from __future__ import annotations

import json
import logging
import re
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import gateway as gw

log = logging.getLogger(__name__)

TASK_PROMPT = """You are an expert learning planner.
Return ONLY a valid JSON object exactly in the following schema:
{ "scores": [ { "id": <int>, "score": <int> } , ... ] }

Hard rules:
- Score ONLY the concepts listed in the provided chunk.
- The target concept is the final goal; DO NOT recommend the target itself.
- Use integer scores in the closed interval [<score_min>, <score_max>].
- JSON only. No extra text, no markdown, no explanations."""

HISTORY_LIMIT = 20


class TeacherResponseError(ValueError):
    """Bad teacher answer; the call may be retried."""


class ScoreParseError(TeacherResponseError):
    pass


class CoverageError(TeacherResponseError):
    pass


class TeacherFailure(RuntimeError):
    pass


@dataclass(frozen=True)
class ScoringContext:
    target: str
    history: tuple
    candidates: tuple  # ((id, text), ...)
    scale: tuple = (0, 3)
    target_id: int | None = None

    def __post_init__(self):
        lo, hi = self.scale
        if lo > hi:
            raise ValueError(f"score_min {lo} exceeds score_max {hi}")
        if self.target_id is not None and any(i == self.target_id for i, _ in self.candidates):
            raise ValueError("the target may not appear among the candidates")


def render_teacher_prompt(ctx: ScoringContext) -> tuple[str, str]:
    lo, hi = ctx.scale
    task = TASK_PROMPT.replace("<score_min>", str(lo)).replace("<score_max>", str(hi))
    data = {
        "target": ctx.target,
        "history": list(ctx.history),
        "concept_chunk": [{"id": int(i), "concept": text} for i, text in ctx.candidates],
        "score_scale": {"min": lo, "max": hi},
    }
    return task, json.dumps(data, ensure_ascii=False, indent=2)


_FENCE = re.compile(r"^\s*```[a-zA-Z0-9_-]*\s*\n?(.*?)\n?\s*```\s*$", re.DOTALL)


def parse_scores(response: str, expected_ids, scale=(0, 3)) -> dict[int, int]:
    """Strictly parse {"scores": [{"id", "score"}, ...]}.

    Markdown code fences around the object are tolerated.  Out-of-range
    scores are clamped with a warning.
    """
    text = response.strip()
    m = _FENCE.match(text)
    if m:
        text = m.group(1).strip()
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ScoreParseError(f"malformed JSON: {exc}") from None
    if not isinstance(doc, dict) or not isinstance(doc.get("scores"), list):
        raise ScoreParseError('expected an object with a "scores" list')

    lo, hi = scale
    scores: dict[int, int] = {}
    for item in doc["scores"]:
        if not isinstance(item, dict) or set(item) != {"id", "score"}:
            raise ScoreParseError(f"bad score entry {item!r}")
        cid, score = item["id"], item["score"]
        if not _is_int(cid) or not _is_int(score):
            raise ScoreParseError(f"non-integer id or score in {item!r}")
        if cid in scores:
            raise CoverageError(f"id {cid} scored twice")
        if not lo <= score <= hi:
            log.warning("score %s for id %s outside [%s, %s]; clamped", score, cid, lo, hi)
            score = min(max(score, lo), hi)
        scores[cid] = score

    expected = set(int(i) for i in expected_ids)
    if set(scores) != expected:
        missing = sorted(expected - set(scores))
        extra = sorted(set(scores) - expected)
        raise CoverageError(f"id mismatch: missing {missing[:10]}, unexpected {extra[:10]}")
    return scores


def _is_int(x):
    return isinstance(x, int) and not isinstance(x, bool)


def chunk_candidates(candidates, chunk_size: int):
    if chunk_size < 1:
        raise ValueError("chunk_size must be >= 1")
    candidates = list(candidates)
    return [candidates[i : i + chunk_size] for i in range(0, len(candidates), chunk_size)]


def soft_labels(scores, epsilon: float, M: int | None = None) -> np.ndarray:
    """Smoothed teacher distribution over all M concepts.

    p_j = max(0, a_j / max(1, max_k a_k)), normalized to sum 1, then
    y = (1 - epsilon) * p + epsilon / M.  When every score is zero the
    normalization is undefined and p falls back to uniform.
    """
    a = np.asarray(scores, dtype=np.float64)
    M = a.size if M is None else M
    if a.size != M:
        raise ValueError(f"expected {M} scores, got {a.size}")
    if not 0.0 <= epsilon < 1.0:
        raise ValueError("epsilon must lie in [0, 1)")
    p = np.maximum(0.0, a / max(1.0, a.max()))
    total = p.sum()
    p = p / total if total > 0 else np.full(M, 1.0 / M)
    return (1.0 - epsilon) * p + epsilon / M


# teachers


class SyntheticTeacher:
    """Rule-based stand-in for the teacher LLM on a planted prerequisite DAG.

    Direct prerequisites of the target score 3 and everything else 0
    (clamped to the requested scale).  It
    answers through the same JSON protocol as a real model.
    """

    def __init__(self, prerequisites: dict, names: list[str]):
        self.prerequisites = {int(k): [int(p) for p in v] for k, v in prerequisites.items()}
        self._by_name = {n: i for i, n in enumerate(names)}
        self.calls = 0

    def rule_scores(self, target: int) -> dict[int, int]:
        return {k: 3 for k in self.prerequisites.get(target, [])}

    def complete(self, task_prompt: str, task_data: str, attempt: int = 0) -> str:
        self.calls += 1
        data = json.loads(task_data)
        lo, hi = data["score_scale"]["min"], data["score_scale"]["max"]
        target = self._by_name[data["target"]]
        rule = self.rule_scores(target)
        scores = [
            {"id": c["id"], "score": int(min(max(rule.get(c["id"], 0), lo), hi))} for c in data["concept_chunk"]
        ]
        return json.dumps({"scores": scores})

    def complete_many(self, jobs):
        return [self.complete(*job) for job in jobs]


class LlmTeacher:
    def __init__(self, gateway: gw.Gateway, model: str, max_in_flight=8):
        self.gateway = gateway
        self.model = model
        self.max_in_flight = max_in_flight

    def complete(self, task_prompt, task_data, attempt=0):
        resp = self.gateway.call(gw.chat_request(self.model, task_prompt, task_data, salt=attempt))
        return gw.chat_content(resp.body)

    def complete_many(self, jobs):
        reqs = [gw.chat_request(self.model, tp, td, salt=att) for tp, td, att in jobs]
        return [gw.chat_content(r.body) for r in self.gateway.call_batch(reqs, self.max_in_flight)]


# corpus distillation


@dataclass
class DistillParams:
    chunk_size: int = 50
    epsilon: float = 0.1
    score_min: int = 0
    score_max: int = 3
    retries: int = 2
    history_limit: int = HISTORY_LIMIT


@dataclass
class DistillSummary:
    requested: int
    completed: int
    failed: list = field(default_factory=list)
    teacher_calls: int = 0

    @property
    def coverage(self):
        return self.completed / self.requested if self.requested else 1.0


def context_key(learner, prefix_len) -> str:
    return f"{learner}:{prefix_len}"


def score_context(teacher, concept_names, history, target: int, params: DistillParams):
    """Raw integer scores over all M concepts; the target's slot stays 0."""
    M = len(concept_names)
    hist = [concept_names[k] for k in history][-params.history_limit :] if params.history_limit else []
    candidates = [(i, concept_names[i]) for i in range(M) if i != target]
    scale = (params.score_min, params.score_max)
    chunks = chunk_candidates(candidates, params.chunk_size)
    contexts = [ScoringContext(concept_names[target], tuple(hist), tuple(ch), scale, target) for ch in chunks]
    raw = np.zeros(M)
    pending = list(range(len(contexts)))
    attempt = 0
    calls = 0
    errors = {}
    while pending:
        jobs = [(*render_teacher_prompt(contexts[i]), attempt) for i in pending]
        answers = teacher.complete_many(jobs)
        calls += len(jobs)
        still = []
        for i, answer in zip(pending, answers):
            ids = [c for c, _ in contexts[i].candidates]
            try:
                for cid, s in parse_scores(answer, ids, scale).items():
                    raw[cid] = s
            except TeacherResponseError as exc:
                errors[i] = exc
                still.append(i)
        pending = still
        attempt += 1
        if pending and attempt > params.retries:
            raise TeacherFailure(f"target {target}: chunk {pending[0]} failed: {errors[pending[0]]}")
    return raw, calls


class SoftLabelStore:
    """JSON Lines {"ctx", "target", "y"}; write-once per context key."""

    def __init__(self, path=None):
        self.path = Path(path) if path else None
        self.rows: dict[str, tuple[int, np.ndarray]] = {}
        if self.path is not None and self.path.exists():
            with open(self.path) as fh:
                for line in fh:
                    if line.strip():
                        d = json.loads(line)
                        self.rows[d["ctx"]] = (int(d["target"]), np.asarray(d["y"], dtype=np.float64))

    def __contains__(self, key):
        return key in self.rows

    def __len__(self):
        return len(self.rows)

    def get(self, key):
        return self.rows[key]

    def add(self, key, target, y):
        if key in self.rows:
            return
        self.rows[key] = (int(target), np.asarray(y))
        if self.path is not None:
            self.path.parent.mkdir(parents=True, exist_ok=True)
            with open(self.path, "a") as fh:
                fh.write(json.dumps({"ctx": key, "target": int(target), "y": [float(v) for v in y]}) + "\n")


def distill_corpus(contexts, sequences, concept_names, teacher, params: DistillParams, store: SoftLabelStore):
    """Label each (learner, prefix_len) context with the teacher's soft labels.

    The context's history is steps[:prefix_len] and its target the next
    concept steps[prefix_len].  Contexts already in the store are skipped;
    contexts whose teacher answers stay invalid after retries are recorded
    in the summary and skipped.
    """
    M = len(concept_names)
    summary = DistillSummary(requested=len(contexts), completed=0)
    for learner, prefix in contexts:
        key = context_key(learner, prefix)
        if key in store:
            summary.completed += 1
            continue
        concepts = sequences[learner].concepts
        target = concepts[prefix]
        try:
            raw, calls = score_context(teacher, concept_names, concepts[:prefix], target, params)
        except TeacherFailure as exc:
            log.warning("context %s skipped: %s", key, exc)
            summary.failed.append(key)
            continue
        summary.teacher_calls += calls
        store.add(key, target, soft_labels(raw, params.epsilon, M))
        summary.completed += 1
    return summary


def teacher_argmax(y) -> int | None:
    """Index of the unique largest label, or None when the maximum is tied."""
    y = np.asarray(y)
    top = np.flatnonzero(y == y.max())
    return int(top[0]) if top.size == 1 else None
