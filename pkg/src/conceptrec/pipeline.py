"""Pipeline stages over a run directory, tracked by a content-hash manifest.

Layout under the run directory:
  corpus/       records.jsonl, catalog.json, stats.json, prerequisites.json (fixtures)
  embeddings/   entities.jsonl, meta.json
  labels/       soft_labels.jsonl, contexts.json, summary.json
  ckpt/         student_kd.json, student_pref.json, dkt.json, reranker*.json, joint_*.json
  reports/      training logs, dkt_eval.csv, metrics.csv
  manifest.json stage -> input digest and output file hashes

A stage is skipped when its recorded input digest (config sections, seed
and upstream output hashes) is unchanged and its outputs are intact.
"""

from __future__ import annotations

import csv
import hashlib
import json
import logging
import shutil
from pathlib import Path

import numpy as np

from . import dataset as ds
from . import dkt as dk
from . import encoder as enc
from . import gateway as gw
from . import joint as jt
from . import reranker as rr
from . import student as st
from . import synthetic
from . import teacher as tc
from . import workflow as wf
from .config import RunConfig
from .evaluation import MetricReport, mean_metrics

log = logging.getLogger(__name__)

COMMAND_FOR = {
    "ingest": "ingest",
    "encode": "encode",
    "distill": "distill",
    "student_kd": "train-student --stage kd",
    "student_pref": "train-student --stage pref",
    "dkt": "train-dkt",
    "reranker": "train-reranker",
    "joint": "joint-finetune",
}


class MissingArtifact(RuntimeError):
    def __init__(self, stage):
        super().__init__(f"missing {stage} artifacts; run {COMMAND_FOR[stage]} first")
        self.stage = stage


class BackendFailure(RuntimeError):
    pass


def file_hash(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


def _digest(obj) -> str:
    return hashlib.sha256(json.dumps(obj, sort_keys=True).encode("utf-8")).hexdigest()


class Manifest:
    def __init__(self, root: Path):
        self.root = root
        self.path = root / "manifest.json"
        self.stages = json.loads(self.path.read_text()) if self.path.exists() else {}

    def intact(self, stage) -> bool:
        entry = self.stages.get(stage)
        if entry is None:
            return False
        for rel, digest in entry["outputs"].items():
            p = self.root / rel
            if not p.exists() or file_hash(p) != digest:
                return False
        return True

    def fresh(self, stage, key) -> bool:
        return self.stages.get(stage, {}).get("inputs") == key and self.intact(stage)

    def record(self, stage, key, outputs):
        self.stages[stage] = {"inputs": key, "outputs": {rel: file_hash(self.root / rel) for rel in sorted(outputs)}}
        self.path.write_text(json.dumps(self.stages, indent=1, sort_keys=True))


class Pipeline:
    def __init__(self, root, config: RunConfig | None = None, force=False):
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)
        if config is None:
            saved = self.root / "config.toml"
            config = RunConfig.load(saved) if saved.exists() else RunConfig()
        self.config = config.validate()
        self.force = force
        self.manifest = Manifest(self.root)
        self._gateway = None
        self._cache = {}

    # helpers

    def p(self, rel) -> Path:
        return self.root / rel

    def _upstream(self, stages):
        out = {}
        for s in stages:
            if not self.manifest.intact(s):
                raise MissingArtifact(s)
            out[s] = self.manifest.stages[s]["outputs"]
        return out

    def _run(self, stage, upstream, sections, produce, seeded=True, extra=None):
        """Run `produce` unless the stage is fresh; returns True when work was done."""
        ups = self._upstream(upstream)
        key = _digest(
            {
                "stage": stage,
                "config": self.config.section_dict(*sections),
                "seed": self.config.seed if seeded else None,
                "upstream": ups,
                "extra": extra,
            }
        )
        if not self.force and self.manifest.fresh(stage, key):
            log.info("%s is up to date", stage)
            return False
        previous = self.manifest.stages.get(stage)
        if previous is not None and (self.force or previous.get("inputs") != key):
            # stale outputs must not be resumed from
            for rel in previous["outputs"]:
                self.p(rel).unlink(missing_ok=True)
        outputs = produce()
        self.manifest.record(stage, key, outputs)
        return True

    def gateway(self):
        if self._gateway is None:
            cache = self.config.backend.cache_dir or str(self.p("cache"))
            self._gateway = gw.Gateway(cache_dir=cache)
        return self._gateway

    def backend(self):
        b = self.config.backend
        if b.encoder == "stub":
            return enc.StubBackend(d=b.d, seed=b.stub_seed)
        if b.encoder == "remote":
            return enc.RemoteBackend(self.gateway(), b.embedding_model, d=b.d, max_in_flight=b.max_in_flight)
        return enc.RecordedBackend(b.recording)

    def corpus(self) -> wf.Corpus:
        if "corpus" not in self._cache:
            self._upstream(["ingest"])
            catalog, records = ds.read_corpus(self.p("corpus"))
            self._cache["corpus"] = wf.Corpus.from_records(catalog, records)
        return self._cache["corpus"]

    def embeddings(self):
        self._upstream(["encode"])
        corpus = self.corpus()
        store = enc.EmbeddingStore(self.p("embeddings/entities.jsonl"))
        d = json.loads(self.p("embeddings/meta.json").read_text())["d"]
        return store.matrix("student", corpus.catalog.N, d), store.matrix("concept", corpus.catalog.M, d)

    def labels(self):
        self._upstream(["distill"])
        store = tc.SoftLabelStore(self.p("labels/soft_labels.jsonl"))
        contexts = json.loads(self.p("labels/contexts.json").read_text())
        return store, [tuple(c) for c in contexts["train"]], [tuple(c) for c in contexts["test"]]

    def load_student(self, stage):
        self._upstream([stage])
        return st.StudentParams.load(self.p(f"ckpt/{stage}.json"))[0]

    def load_dkt(self):
        self._upstream(["dkt"])
        return dk.DktParams.load(self.p("ckpt/dkt.json"))[0]

    def load_reranker(self, name="reranker"):
        self._upstream(["reranker"])
        return rr.RerankerParams.load(self.p(f"ckpt/{name}.json"))[0]

    # stages

    def ingest(self):
        d = self.config.data
        extra = file_hash(d.csv) if d.csv else None

        def produce():
            outputs = ["corpus/records.jsonl", "corpus/catalog.json", "corpus/stats.json"]
            drops = {}
            if d.csv:
                schema = {
                    role: col
                    for role, col in (
                        ("learner", d.learner_column),
                        ("concept", d.concept_column),
                        ("correct", d.correct_column),
                        ("order", d.order_column),
                    )
                    if col
                }
                catalog, records, drops = ds.ingest_csv(d.csv, schema)
            else:
                make = synthetic.prerequisite_fixture if d.synthetic == "prerequisite" else synthetic.readiness_fixture
                fx = make(n_concepts=d.n_concepts, n_families=d.n_families, n_learners=d.n_learners, seed=d.fixture_seed)
                catalog, records = fx.catalog, fx.records
                prereq = {str(k): v for k, v in sorted(fx.prerequisites.items())}
                self.p("corpus").mkdir(parents=True, exist_ok=True)
                self.p("corpus/prerequisites.json").write_text(json.dumps(prereq, sort_keys=True))
                outputs.append("corpus/prerequisites.json")
            ds.write_corpus(self.p("corpus"), catalog, records)
            stats = ds.corpus_stats(records, catalog)
            self.p("corpus/stats.json").write_text(
                json.dumps({**stats.__dict__, "dropped": drops}, indent=1, sort_keys=True)
            )
            self._cache.pop("corpus", None)
            return outputs

        saved = self.p("config.toml")
        if not saved.exists() or saved.read_text() != self.config.to_toml():
            self.config.save(saved)
        return self._run("ingest", [], ("data",), produce, seeded=False, extra=extra)

    def encode(self):
        def produce():
            corpus = self.corpus()
            backend = self.backend()
            try:
                enc.encode_catalog(corpus.catalog, backend, self.p("embeddings/entities.jsonl"))
            except enc.EncodeIncomplete as exc:
                raise BackendFailure(str(exc)) from exc
            meta = {"backend": backend.identity, "mode": backend.mode, "d": backend.d}
            self.p("embeddings/meta.json").write_text(json.dumps(meta, indent=1, sort_keys=True))
            return ["embeddings/entities.jsonl", "embeddings/meta.json"]

        return self._run("encode", ["ingest"], ("backend",), produce, seeded=False)

    def teacher(self, corpus):
        b = self.config.backend
        if b.teacher == "synthetic":
            path = self.p("corpus/prerequisites.json")
            if not path.exists():
                raise BackendFailure("the synthetic teacher needs a planted prerequisite graph; set backend.teacher = 'llm'")
            prereq = {int(k): v for k, v in json.loads(path.read_text()).items()}
            return tc.SyntheticTeacher(prereq, corpus.catalog.concepts)
        return tc.LlmTeacher(self.gateway(), b.teacher_model, b.max_in_flight)

    def distill(self):
        def produce():
            corpus = self.corpus()
            c = self.config.distill
            rng = np.random.default_rng(self.config.seed)
            train = wf.distill_contexts(corpus, c.budget, rng)
            test = corpus.test_contexts()
            self.p("labels").mkdir(parents=True, exist_ok=True)
            self.p("labels/contexts.json").write_text(json.dumps({"train": train, "test": test}))
            params = tc.DistillParams(c.chunk_size, c.epsilon, c.score_min, c.score_max, c.retries, c.history_limit)
            store = tc.SoftLabelStore(self.p("labels/soft_labels.jsonl"))
            try:
                summary = tc.distill_corpus(
                    train + test, corpus.sequences, corpus.catalog.concepts, self.teacher(corpus), params, store
                )
            except gw.GatewayError as exc:
                raise BackendFailure(f"teacher backend failed: {exc}") from exc
            if summary.completed == 0:
                raise BackendFailure("the teacher produced no usable labels")
            doc = {"requested": summary.requested, "completed": summary.completed, "failed": summary.failed}
            self.p("labels/summary.json").write_text(json.dumps(doc, indent=1, sort_keys=True))
            return ["labels/soft_labels.jsonl", "labels/contexts.json", "labels/summary.json"]

        return self._run("distill", ["ingest"], ("distill", "backend"), produce)

    def _student_hyper(self, stage):
        s = self.config.student
        if stage == "kd":
            lr, epochs, batch = s.kd_lr, s.kd_epochs, s.kd_batch
        else:
            lr, epochs, batch = s.pref_lr, s.pref_epochs, s.pref_batch
        return st.StudentHyper(
            lr=lr,
            epochs=epochs,
            batch_size=batch,
            tau=s.tau,
            negatives=s.negatives,
            exclude_history=s.exclude_history,
            patience=s.patience,
            seed=self.config.seed,
        )

    def train_student(self, stage):
        if stage not in ("kd", "pref"):
            raise ValueError(f"unknown student stage {stage!r}")
        name = f"student_{stage}"
        upstream = ["encode", "distill"] if stage == "kd" else ["encode", "student_kd"]

        def produce():
            corpus = self.corpus()
            E, C = self.embeddings()
            backend = self.backend()
            if stage == "kd":
                labels, train, _ = self.labels()
                data = wf.kd_stage_data(corpus, train, labels, backend)
                init = None
            else:
                data = wf.pref_stage_data(corpus, list(corpus.split.train_contexts), backend)
                init = self.load_student("student_kd")
            params, rows = st.train_student(data, E, C, stage, self._student_hyper(stage), init=init)
            params.save(self.p(f"ckpt/{name}.json"), {"stage": stage, "seed": self.config.seed})
            st.write_training_log(self.p(f"reports/{name}_log.csv"), rows)
            return [f"ckpt/{name}.json", f"reports/{name}_log.csv"]

        return self._run(name, ["ingest", *upstream], ("student", "backend"), produce)

    def train_dkt(self):
        def produce():
            corpus = self.corpus()
            c = self.config.dkt
            hyper = dk.DktHyper(c.hidden, c.lr, c.epochs, c.batch, c.max_steps, self.config.seed)
            params, rows = dk.train_dkt(corpus.training_sequences(), corpus.catalog.M, hyper)
            params.save(self.p("ckpt/dkt.json"), {"seed": self.config.seed})
            held_out = [corpus.sequences[u] for u, _ in corpus.split.test_targets]
            dk.write_report(self.p("reports/dkt_eval.csv"), dk.final_step_metrics(held_out, params))
            return ["ckpt/dkt.json", "reports/dkt_eval.csv"]

        return self._run("dkt", ["ingest"], ("dkt",), produce)

    def _rerank_hyper(self, use_dkt=True):
        c = self.config.reranker
        return rr.RerankHyper(
            lr=c.lr,
            epochs=c.epochs,
            batch_size=c.batch,
            proj=c.proj,
            width=c.width,
            max_negatives=c.max_negatives,
            use_dkt=use_dkt,
            seed=self.config.seed,
        )

    def train_reranker(self):
        def produce():
            corpus = self.corpus()
            E, C = self.embeddings()
            student = self.load_student("student_pref")
            dkt_params = self.load_dkt()
            train = list(corpus.split.train_contexts)
            S = wf.coarse_table(student, corpus, train, E, C, self.backend())
            contexts = wf.rerank_contexts(corpus, train, S, dkt_params, self.config.reranker.pool)
            outputs = []
            variants = [("reranker", True)] + ([("reranker_no_dkt", False)] if self.config.reranker.ablate_dkt else [])
            for name, use_dkt in variants:
                params, rows = rr.train_reranker(contexts, E, C, dkt_params.hidden, self._rerank_hyper(use_dkt))
                params.save(self.p(f"ckpt/{name}.json"), {"seed": self.config.seed, "use_dkt": use_dkt})
                _write_rows(self.p(f"reports/{name}_log.csv"), ["epoch", "loss"], rows)
                outputs += [f"ckpt/{name}.json", f"reports/{name}_log.csv"]
            return outputs

        return self._run(
            "reranker", ["ingest", "encode", "student_pref", "dkt"], ("reranker", "backend"), produce
        )

    def evaluate(self, out=None) -> MetricReport:
        for stage in ("reranker", "dkt", "student_pref", "student_kd", "distill"):
            if not self.manifest.intact(stage):
                raise MissingArtifact(stage)
        corpus = self.corpus()
        E, C = self.embeddings()
        backend = self.backend()
        labels, _, test = self.labels()
        ks = tuple(int(k) for k in self.config.eval.ks)
        kd_student = self.load_student("student_kd")
        pref_student = self.load_student("student_pref")
        dkt_params = self.load_dkt()
        pool = max(self.config.reranker.pool, max(ks))

        report = MetricReport()
        seed = self.config.seed
        for name, params in (("kd", kd_student), ("pref", pref_student)):
            outcomes = wf.teacher_eval_outcomes(params, corpus, test, labels, E, C, backend)
            report.add(seed, f"teacher-eval:{name}", mean_metrics(outcomes, ks))
        S_kd = wf.coarse_table(kd_student, corpus, test, E, C, backend)
        report.add(seed, "preference-eval:kd", mean_metrics(wf.coarse_outcomes(wf.rerank_contexts(corpus, test, S_kd, dkt_params, pool)), ks))
        S = wf.coarse_table(pref_student, corpus, test, E, C, backend)
        contexts = wf.rerank_contexts(corpus, test, S, dkt_params, pool)
        report.add(seed, "preference-eval:coarse", mean_metrics(wf.coarse_outcomes(contexts), ks))
        rcontexts = wf.rerank_contexts(corpus, test, S, dkt_params, self.config.reranker.pool)
        report.add(seed, "preference-eval:reranked", mean_metrics(wf.reranked_outcomes(rcontexts, E, C, self.load_reranker()), ks))
        if self.p("ckpt/reranker_no_dkt.json").exists() and self.config.reranker.ablate_dkt:
            ablated = self.load_reranker("reranker_no_dkt")
            report.add(
                seed,
                "preference-eval:reranked-no-dkt",
                mean_metrics(wf.reranked_outcomes(rcontexts, E, C, ablated, use_dkt=False), ks),
            )
        if self.manifest.intact("joint"):
            js = st.StudentParams.load(self.p("ckpt/joint_student.json"))[0]
            jr = rr.RerankerParams.load(self.p("ckpt/joint_reranker.json"))[0]
            jS = wf.coarse_table(js, corpus, test, E, C, backend)
            jc = wf.rerank_contexts(corpus, test, jS, dkt_params, self.config.reranker.pool)
            report.add(seed, "preference-eval:joint", mean_metrics(wf.reranked_outcomes(jc, E, C, jr), ks))
        path = Path(out) if out else self.p("reports/metrics.csv")
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(report.to_csv())
        return report

    def recommend(self, learner_key, top=5):
        """Top concepts the learner has not interacted with yet, after fine ranking."""
        corpus = self.corpus()
        cat = corpus.catalog
        keys = cat.learner_keys or [str(i) for i in range(cat.N)]
        if str(learner_key) not in keys:
            raise KeyError(f"unknown learner {learner_key!r}")
        u = keys.index(str(learner_key))
        if top < 1:
            raise ValueError("--top must be >= 1")
        E, C = self.embeddings()
        student = self.load_student("student_pref")
        dkt_params = self.load_dkt()
        reranker = self.load_reranker()
        seq = corpus.sequences.get(u)
        steps = seq.steps if seq is not None else ()
        history = [k for k, _ in steps]
        prompt = st.render_pref_prompt(corpus.names(history))
        s = st.score_table(student, st.encode_queries([prompt], self.backend()), E[[u]], C)[0]
        unseen = np.setdiff1d(np.arange(cat.M), np.asarray(history, dtype=np.int64))
        if unseen.size == 0:
            return {"learner": str(learner_key), "ranked": [], "scores": []}
        order = [int(i) for i in unseen[np.lexsort((unseen, -s[unseen]))]]
        cands = np.asarray(order[: max(self.config.reranker.pool, top)], dtype=np.int64)
        ctx = rr.RerankContext(u, tuple(history), cands, s[cands], dk.cognitive_state(steps, dkt_params))
        ranked, scores = rr.rerank_many([ctx], E, C, reranker)[0]
        return {"learner": str(learner_key), "ranked": ranked[:top], "scores": [round(v, 6) for v in scores[:top]]}

    def joint_finetune(self):
        def produce():
            corpus = self.corpus()
            E, C = self.embeddings()
            backend = self.backend()
            labels, train, _ = self.labels()
            kd = wf.kd_stage_data(corpus, train, labels, backend)
            pref_ctx = list(corpus.split.train_contexts)
            pref = wf.pref_stage_data(corpus, pref_ctx, backend)
            states = wf.dkt_states(self.load_dkt(), corpus, pref_ctx)
            meta = [(corpus.history(u, p), s) for (u, p), s in zip(pref_ctx, states)]
            j, s, r = self.config.joint, self.config.student, self.config.reranker
            hyper = jt.JointHyper(
                j.lambda1, j.lambda2, j.lambda3, j.lr, j.epochs, s.kd_batch, s.pref_batch, s.tau, s.negatives,
                r.pool, r.max_negatives, self.config.seed,
            )
            student, reranker, rows = jt.joint_train(
                kd, pref, meta, E, C, self.load_student("student_pref"), self.load_reranker(), hyper
            )
            student.save(self.p("ckpt/joint_student.json"), {"seed": self.config.seed})
            reranker.save(self.p("ckpt/joint_reranker.json"), {"seed": self.config.seed})
            _write_rows(self.p("reports/joint_log.csv"), ["epoch", "loss"], rows)
            return ["ckpt/joint_student.json", "ckpt/joint_reranker.json", "reports/joint_log.csv"]

        return self._run(
            "joint",
            ["ingest", "encode", "distill", "student_pref", "dkt", "reranker"],
            ("joint", "student", "reranker", "backend"),
            produce,
        )

    def run_all(self):
        self.ingest()
        self.encode()
        self.distill()
        self.train_student("kd")
        self.train_student("pref")
        self.train_dkt()
        self.train_reranker()
        return self.evaluate()

    def clean(self):
        for sub in ("corpus", "embeddings", "labels", "ckpt", "reports"):
            shutil.rmtree(self.p(sub), ignore_errors=True)
        self.p("manifest.json").unlink(missing_ok=True)
        self.manifest = Manifest(self.root)


def _write_rows(path, header, rows):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for epoch, loss in rows:
            w.writerow([epoch, f"{loss:.10g}"])
