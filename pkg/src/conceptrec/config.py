"""Run configuration: a TOML file of sections, validated field by field."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path

import toml


class ConfigError(ValueError):
    def __init__(self, name, message):
        super().__init__(f"config field {name}: {message}")
        self.field = name


@dataclass
class DataConfig:
    csv: str = ""  # interaction log; empty means a synthetic fixture
    synthetic: str = "prerequisite"  # prerequisite | readiness
    fixture_seed: int = 0
    n_learners: int = 300
    n_concepts: int = 50
    n_families: int = 10
    learner_column: str = ""
    concept_column: str = ""
    correct_column: str = ""
    order_column: str = ""


@dataclass
class BackendConfig:
    encoder: str = "stub"  # stub | remote | recorded
    d: int = 32
    stub_seed: int = 0
    embedding_model: str = ""
    recording: str = ""
    teacher: str = "synthetic"  # synthetic | llm
    teacher_model: str = ""
    cache_dir: str = ""  # defaults to <run dir>/cache
    max_in_flight: int = 8


@dataclass
class DistillConfig:
    budget: int = 200
    chunk_size: int = 50
    epsilon: float = 0.1
    score_min: int = 0
    score_max: int = 3
    retries: int = 2
    history_limit: int = 20


@dataclass
class StudentConfig:
    tau: float = 2.0
    negatives: int = 8
    exclude_history: bool = False
    kd_lr: float = 0.05
    kd_epochs: int = 1000
    kd_batch: int = 64
    pref_lr: float = 0.05
    pref_epochs: int = 100
    pref_batch: int = 256
    patience: int = 0


@dataclass
class DktConfig:
    hidden: int = 64
    lr: float = 0.01
    epochs: int = 10
    batch: int = 32
    max_steps: int = 200


@dataclass
class RerankerConfig:
    pool: int = 20
    max_negatives: int = 10
    proj: int = 64
    width: int = 32
    lr: float = 0.02
    epochs: int = 5
    batch: int = 256
    ablate_dkt: bool = False  # also train a reranker without the knowledge-state feature


@dataclass
class JointConfig:
    lambda1: float = 1.0
    lambda2: float = 1.0
    lambda3: float = 1.0
    lr: float = 1e-3
    epochs: int = 5


@dataclass
class EvalConfig:
    ks: list = field(default_factory=lambda: [1, 5, 10])
    seeds: list = field(default_factory=lambda: [0, 1, 2, 3, 4])


SECTIONS = {
    "data": DataConfig,
    "backend": BackendConfig,
    "distill": DistillConfig,
    "student": StudentConfig,
    "dkt": DktConfig,
    "reranker": RerankerConfig,
    "joint": JointConfig,
    "eval": EvalConfig,
}


@dataclass
class RunConfig:
    seed: int = 0
    data: DataConfig = field(default_factory=DataConfig)
    backend: BackendConfig = field(default_factory=BackendConfig)
    distill: DistillConfig = field(default_factory=DistillConfig)
    student: StudentConfig = field(default_factory=StudentConfig)
    dkt: DktConfig = field(default_factory=DktConfig)
    reranker: RerankerConfig = field(default_factory=RerankerConfig)
    joint: JointConfig = field(default_factory=JointConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)

    def validate(self) -> "RunConfig":
        checks = [
            ("student.tau", self.student.tau > 0, "must be > 0"),
            ("distill.epsilon", 0 <= self.distill.epsilon < 1, "must lie in [0, 1)"),
            ("distill.score_min", self.distill.score_min <= self.distill.score_max, "exceeds score_max"),
            ("distill.chunk_size", self.distill.chunk_size >= 1, "must be >= 1"),
            ("distill.budget", self.distill.budget >= 1, "must be >= 1"),
            ("distill.retries", self.distill.retries >= 0, "must be >= 0"),
            ("student.negatives", self.student.negatives >= 1, "must be >= 1"),
            ("dkt.hidden", self.dkt.hidden >= 4, "must be >= 4"),
            ("reranker.pool", self.reranker.pool >= 1, "must be >= 1"),
            ("reranker.width", self.reranker.width >= 4, "must be >= 4"),
            ("joint.lambda1", self.joint.lambda1 >= 0, "must be >= 0"),
            ("joint.lambda2", self.joint.lambda2 >= 0, "must be >= 0"),
            ("joint.lambda3", self.joint.lambda3 >= 0, "must be >= 0"),
            ("backend.encoder", self.backend.encoder in ("stub", "remote", "recorded"), "unknown encoder"),
            ("backend.teacher", self.backend.teacher in ("synthetic", "llm"), "unknown teacher"),
            ("backend.d", self.backend.d >= 8, "must be >= 8"),
            ("backend.max_in_flight", self.backend.max_in_flight >= 1, "must be >= 1"),
            ("data.synthetic", self.data.synthetic in ("prerequisite", "readiness"), "unknown fixture"),
            ("eval.ks", bool(self.eval.ks) and all(int(k) >= 1 for k in self.eval.ks), "needs K values >= 1"),
            ("eval.seeds", bool(self.eval.seeds), "needs at least one seed"),
        ]
        for name, ok, msg in checks:
            if not ok:
                raise ConfigError(name, msg)
        for section in SECTIONS:
            for f in dataclasses.fields(getattr(self, section)):
                if f.name.endswith(("lr", "epochs", "batch")) and getattr(getattr(self, section), f.name) < 0:
                    raise ConfigError(f"{section}.{f.name}", "must be >= 0")
        return self

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def to_toml(self) -> str:
        return toml.dumps(self.to_dict())

    def save(self, path):
        Path(path).write_text(self.to_toml())

    @classmethod
    def from_dict(cls, doc: dict) -> "RunConfig":
        cfg = cls()
        for key, value in doc.items():
            if key == "seed":
                cfg.seed = _coerce("seed", value, int)
            elif key in SECTIONS:
                if not isinstance(value, dict):
                    raise ConfigError(key, "expected a table")
                _apply(getattr(cfg, key), key, value)
            else:
                raise ConfigError(key, "unknown field")
        return cfg.validate()

    @classmethod
    def from_toml(cls, text: str) -> "RunConfig":
        try:
            doc = toml.loads(text)
        except toml.TomlDecodeError as exc:
            raise ConfigError("<file>", f"not valid TOML: {exc}") from None
        return cls.from_dict(doc)

    @classmethod
    def load(cls, path) -> "RunConfig":
        return cls.from_toml(Path(path).read_text())

    def with_overrides(self, pairs) -> "RunConfig":
        """Apply "section.key=value" strings (values parsed as TOML scalars)."""
        doc = self.to_dict()
        for pair in pairs:
            name, sep, raw = pair.partition("=")
            if not sep:
                raise ConfigError(pair, "expected section.key=value")
            try:
                value = toml.loads(f"v = {raw}")["v"]
            except toml.TomlDecodeError:
                value = raw
            parts = name.strip().split(".")
            target = doc
            for p in parts[:-1]:
                if p not in target or not isinstance(target[p], dict):
                    raise ConfigError(name, "unknown field")
                target = target[p]
            if parts[-1] not in target:
                raise ConfigError(name, "unknown field")
            target[parts[-1]] = value
        return RunConfig.from_dict(doc)

    def section_dict(self, *names) -> dict:
        return {n: dataclasses.asdict(getattr(self, n)) if n in SECTIONS else getattr(self, n) for n in names}


def _coerce(name, value, kind):
    if kind is bool:
        if isinstance(value, bool):
            return value
    elif kind is int:
        if isinstance(value, int) and not isinstance(value, bool):
            return value
    elif kind is float:
        if isinstance(value, (int, float)) and not isinstance(value, bool):
            return float(value)
    elif kind is str:
        if isinstance(value, str):
            return value
    elif kind is list:
        if isinstance(value, list):
            return [_coerce(name, v, int) for v in value]
    raise ConfigError(name, f"expected {kind.__name__}, got {value!r}")


def _apply(section, prefix, values: dict):
    types = {f.name: f.type for f in dataclasses.fields(section)}
    for key, value in values.items():
        name = f"{prefix}.{key}"
        if key not in types:
            raise ConfigError(name, "unknown field")
        kind = {"int": int, "float": float, "bool": bool, "str": str, "list": list}[types[key]]
        setattr(section, key, _coerce(name, value, kind))
