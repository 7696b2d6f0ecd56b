"""Anchor-prompt rendering and unit-norm embeddings for concepts and learners."""

from __future__ import annotations

import hashlib
import json
import logging
import re
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import gateway as gw

log = logging.getLogger(__name__)

CONCEPT_ANCHOR = "[C]"
STUDENT_ANCHOR = "[S]"

CONCEPT_TEMPLATE = (
    "Extract the concept's description information and compress it into one word for recommendation.\n"
    "The description is: {description}.\n"
    "The compression word is: '[C]'."
)
STUDENT_TEMPLATE = (
    "Extract the student's profile information and compress it into one word for identification.\n"
    "The description is: {description}.\n"
    "The compression word is: '[S]'."
)

# fixed wording of every prompt this package renders; the stub backend skips it
_TEMPLATE_WORDS = " ".join(
    [
        CONCEPT_TEMPLATE,
        STUDENT_TEMPLATE,
        "History: Target: Recommend the next concept:",
    ]
)


class DegenerateEmbedding(ValueError):
    pass


class EncodeIncomplete(RuntimeError):
    def __init__(self, remaining, cause):
        super().__init__(f"{len(remaining)} entities not encoded: {cause}")
        self.remaining = remaining
        self.cause = cause


@dataclass(frozen=True)
class AnchorPrompt:
    text: str
    anchor: str


def _render(template, anchor, description):
    text = template.format(description=description)
    if text.count(anchor) != 1:
        raise ValueError(f"anchor {anchor} must appear exactly once in the prompt")
    return AnchorPrompt(text, anchor)


def render_concept_prompt(description: str) -> AnchorPrompt:
    return _render(CONCEPT_TEMPLATE, CONCEPT_ANCHOR, description)


def render_student_prompt(profile: str) -> AnchorPrompt:
    return _render(STUDENT_TEMPLATE, STUDENT_ANCHOR, profile)


def prompt_key(prompt: AnchorPrompt) -> str:
    return hashlib.sha256(f"{prompt.anchor}\x00{prompt.text}".encode("utf-8")).hexdigest()


_TOKEN = re.compile(r"[a-z0-9]+")
_SEGMENT = re.compile(r"[|\n]")


def tokenize(text: str) -> list[str]:
    return _TOKEN.findall(text.lower())


def _seeded_unit(seed: int, *parts: str, dim: int) -> np.ndarray:
    h = hashlib.sha256("\x00".join([str(seed), *parts]).encode("utf-8")).digest()
    rng = np.random.default_rng(int.from_bytes(h[:8], "little"))
    v = rng.standard_normal(dim)
    return v / np.linalg.norm(v)


class StubBackend:
    """Deterministic offline stand-in for anchor-state extraction.

    The vector has two orthogonal blocks.  The leading block is a
    recency-weighted sum of seeded per-token vectors over the prompt's
    slot content (template wording is skipped).  Items separated by "|" or
    a line break are weighted by decay ** (items from the end), so the
    last-mentioned item dominates and prompts that mention the same
    concepts land near each other.  The trailing block, of width
    d // 4, is a seeded fingerprint of the exact prompt text, so any edit
    moves the vector.
    """

    mode = "stub"

    def __init__(self, d=32, seed=0, decay=0.1, fingerprint_share=0.2):
        if d < 8:
            raise ValueError("stub backend needs d >= 8")
        self.d = int(d)
        self.seed = int(seed)
        self.decay = float(decay)
        self.fingerprint_share = float(fingerprint_share)
        self._k = max(1, self.d // 4)
        self._skip = set(tokenize(_TEMPLATE_WORDS))
        self._tokens: dict[str, np.ndarray] = {}

    @property
    def identity(self):
        return f"stub:d={self.d}:seed={self.seed}:decay={self.decay}:fp={self.fingerprint_share}"

    def _token_vec(self, tok):
        v = self._tokens.get(tok)
        if v is None:
            v = _seeded_unit(self.seed, "tok", tok, dim=self.d - self._k)
            self._tokens[tok] = v
        return v

    def embed(self, prompt: AnchorPrompt) -> np.ndarray:
        # one segment per mentioned item; later items weigh more
        segments = [[t for t in tokenize(seg) if t not in self._skip] for seg in _SEGMENT.split(prompt.text)]
        segments = [seg for seg in segments if seg]
        toks, weights = [], []
        for dist, seg in enumerate(reversed(segments)):
            toks += seg
            weights += [self.decay**dist] * len(seg)
        if toks:
            bag = np.asarray(weights) @ np.stack([self._token_vec(t) for t in toks])
            norm = np.linalg.norm(bag)
            bag = bag / norm if norm > 0 else self._token_vec("<empty>")
        else:
            bag = self._token_vec("<empty>")
        fp = _seeded_unit(self.seed, "text", prompt.anchor, prompt.text, dim=self._k)
        share = self.fingerprint_share
        return np.concatenate([np.sqrt(1.0 - share) * bag, np.sqrt(share) * fp])

    def embed_many(self, prompts):
        return [self.embed(p) for p in prompts]


class RemoteBackend:
    """Embeds the whole rendered prompt through an embeddings endpoint.

    Generic servers do not expose the anchor token's hidden state, so this
    is an approximation of anchor extraction.
    """

    mode = "remote-embedding"

    def __init__(self, gateway: gw.Gateway, model: str, d=1024, max_in_flight=8):
        self.gateway = gateway
        self.model = model
        self.d = int(d)
        self.max_in_flight = max_in_flight

    @property
    def identity(self):
        return f"remote:{self.model}:d={self.d}"

    def _check(self, values):
        v = np.asarray(values, dtype=np.float64)
        if v.shape != (self.d,):
            raise ValueError(f"backend returned dimension {v.shape}, expected ({self.d},)")
        return v

    def embed(self, prompt: AnchorPrompt) -> np.ndarray:
        resp = self.gateway.call(gw.embed_request(self.model, prompt.text))
        return self._check(gw.embedding_values(resp.body))

    def embed_many(self, prompts):
        reqs = [gw.embed_request(self.model, p.text) for p in prompts]
        resps = self.gateway.call_batch(reqs, max_in_flight=self.max_in_flight)
        return [self._check(gw.embedding_values(r.body)) for r in resps]


class RecordedBackend:
    """Replays vectors exported from an offline model run.

    The recording is JSON Lines of {"key": prompt_key(prompt), "v": [...]}.
    """

    mode = "recorded"

    def __init__(self, path):
        self.path = Path(path)
        self._vectors = {}
        with open(self.path) as fh:
            for line in fh:
                if line.strip():
                    d = json.loads(line)
                    self._vectors[d["key"]] = np.asarray(d["v"], dtype=np.float64)
        dims = {v.shape[0] for v in self._vectors.values()}
        if len(dims) > 1:
            raise ValueError(f"{path}: mixed embedding dimensions {sorted(dims)}")
        self.d = dims.pop() if dims else 0

    @property
    def identity(self):
        return f"recorded:{self.path.name}"

    def embed(self, prompt: AnchorPrompt) -> np.ndarray:
        try:
            return self._vectors[prompt_key(prompt)]
        except KeyError:
            raise KeyError(f"no recorded vector for prompt {prompt.text[:60]!r}") from None

    def embed_many(self, prompts):
        return [self.embed(p) for p in prompts]

    @staticmethod
    def write(path, prompts, vectors):
        with open(path, "w") as fh:
            for p, v in zip(prompts, vectors):
                fh.write(json.dumps({"key": prompt_key(p), "v": [float(x) for x in v]}) + "\n")


def _normalize(v):
    v = np.asarray(v, dtype=np.float64)
    norm = np.linalg.norm(v)
    if not np.isfinite(norm) or norm == 0.0:
        raise DegenerateEmbedding("degenerate embedding")
    return v / norm


def encode(prompt: AnchorPrompt, backend) -> np.ndarray:
    return _normalize(backend.embed(prompt))


def encode_many(prompts, backend) -> np.ndarray:
    prompts = list(prompts)
    if not prompts:
        return np.zeros((0, backend.d))
    return np.stack([_normalize(v) for v in backend.embed_many(prompts)])


class EmbeddingStore:
    """JSON Lines store, one record per entity, write-once per (kind, id)."""

    def __init__(self, path=None):
        self.path = Path(path) if path else None
        self.rows: dict[tuple[str, int], np.ndarray] = {}
        if self.path is not None and self.path.exists():
            with open(self.path) as fh:
                for line in fh:
                    if line.strip():
                        d = json.loads(line)
                        self.rows[(d["kind"], int(d["id"]))] = np.asarray(d["v"], dtype=np.float64)

    def has(self, kind, idx):
        return (kind, idx) in self.rows

    def add(self, kind, idx, v):
        if (kind, idx) in self.rows:
            return
        self.rows[(kind, idx)] = v
        if self.path is None:
            return
        self.path.parent.mkdir(parents=True, exist_ok=True)
        with open(self.path, "a") as fh:
            fh.write(json.dumps({"kind": kind, "id": int(idx), "v": [float(x) for x in v]}) + "\n")

    def matrix(self, kind, n, d):
        if n == 0:
            return np.zeros((0, d))
        return np.stack([self.rows[(kind, i)] for i in range(n)])


def encode_catalog(catalog, backend, store_path=None, batch_size=64):
    """Return (E, C): learner and concept embedding matrices.

    Rows already in the store are reused; new rows are appended as they
    complete, so an interrupted run resumes where it stopped.
    """
    store = EmbeddingStore(store_path)
    jobs = [("concept", i, render_concept_prompt(t)) for i, t in enumerate(catalog.concepts)]
    jobs += [("student", i, render_student_prompt(t or str(i))) for i, t in enumerate(catalog.learners)]
    pending = [j for j in jobs if not store.has(j[0], j[1])]
    for start in range(0, len(pending), batch_size):
        chunk = pending[start : start + batch_size]
        try:
            vectors = encode_many([p for _, _, p in chunk], backend)
        except Exception as exc:
            remaining = [(k, i) for k, i, _ in pending[start:]]
            raise EncodeIncomplete(remaining, exc) from exc
        for (kind, idx, _), v in zip(chunk, vectors):
            store.add(kind, idx, v)
    d = backend.d
    return store.matrix("student", catalog.N, d), store.matrix("concept", catalog.M, d)
