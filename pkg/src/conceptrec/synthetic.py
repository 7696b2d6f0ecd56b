"""Synthetic corpora with planted structure, used by tests and demos.

Concepts live in `families` chains: "<family> unit <n>" requires
"<family> unit <n-1>".  Names are compositional on purpose, the way real
skill names share words with their prerequisites ("adding fractions" vs
"equivalent fractions").
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .dataset import Catalog, InteractionRecord, synthesize_profiles

FAMILY_NAMES = [
    "fractions",
    "decimals",
    "geometry",
    "algebra",
    "probability",
    "ratios",
    "exponents",
    "statistics",
    "measurement",
    "equations",
    "percents",
    "integers",
    "functions",
    "inequalities",
    "polynomials",
    "angles",
]


@dataclass
class Fixture:
    catalog: Catalog
    records: list
    prerequisites: dict  # concept -> list of direct prerequisites
    position: dict  # concept -> (family, unit)


def concept_world(n_concepts=50, n_families=10, rng=None):
    """Shuffled concept ids over family chains; returns (names, prerequisites, position, id_of)."""
    if n_families > len(FAMILY_NAMES):
        raise ValueError(f"at most {len(FAMILY_NAMES)} families")
    rng = rng if rng is not None else np.random.default_rng(0)
    sizes = [n_concepts // n_families + (1 if f < n_concepts % n_families else 0) for f in range(n_families)]
    slots = [(f, u) for f in range(n_families) for u in range(sizes[f])]
    ids = rng.permutation(len(slots))
    position = {int(i): slot for i, slot in zip(ids, slots)}
    id_of = {slot: i for i, slot in position.items()}
    names = [f"{FAMILY_NAMES[position[k][0]]} unit {position[k][1] + 1}" for k in range(len(slots))]
    prereq = {k: [id_of[(f, u - 1)]] for k, (f, u) in position.items() if u > 0}
    return names, prereq, position, id_of


def _fixture(names, prereq, position, walks, n_learners):
    records = []
    order = 0
    for u, steps in enumerate(walks):
        for k, ok in steps:
            records.append(InteractionRecord(u, int(k), bool(ok), float(order), order))
            order += 1
    catalog = Catalog(
        concepts=names,
        learners=[str(u) for u in range(n_learners)],
        concept_keys=[str(i) for i in range(len(names))],
        learner_keys=[str(u) for u in range(n_learners)],
    )
    catalog.learners = synthesize_profiles(catalog, records)
    return Fixture(catalog, records, prereq, position)


def prerequisite_fixture(
    n_concepts=50, n_families=10, n_learners=300, min_len=8, max_len=40, p_switch=0.15, seed=0
) -> Fixture:
    """Learners advance along chains, usually staying in the current family.

    Every attempt moves the learner on; correctness is a Bernoulli draw
    whose rate grows with the learner's ability.
    """
    rng = np.random.default_rng(seed)
    names, prereq, position, id_of = concept_world(n_concepts, n_families, rng)
    sizes = [sum(1 for f, _ in position.values() if f == g) for g in range(n_families)]
    walks = []
    for _ in range(n_learners):
        length = int(rng.integers(min_len, max_len + 1))
        ability = rng.normal(0.8, 0.7)
        progress = [0] * n_families
        fam = int(rng.integers(n_families))
        steps = []
        for _ in range(length):
            k = id_of[(fam, progress[fam])]
            steps.append((k, rng.random() < 1 / (1 + np.exp(-ability))))
            progress[fam] += 1
            open_fams = [g for g in range(n_families) if progress[g] < sizes[g]]
            if not open_fams:
                break
            if progress[fam] >= sizes[fam] or rng.random() < p_switch:
                fam = int(open_fams[rng.integers(len(open_fams))])
        walks.append(steps)
    return _fixture(names, prereq, position, walks, n_learners)


def readiness_fixture(
    n_concepts=50, n_families=10, n_learners=300, min_len=10, max_len=40, p_switch=0.15, seed=0
) -> Fixture:
    """Learners repeat a concept until they answer it correctly.

    Success probability grows with ability and with the number of earlier
    attempts on the concept, so whether the next concept is a retry or the
    following unit depends on the learner's current readiness, which is
    visible only through correctness.
    """
    rng = np.random.default_rng(seed)
    names, prereq, position, id_of = concept_world(n_concepts, n_families, rng)
    sizes = [sum(1 for f, _ in position.values() if f == g) for g in range(n_families)]
    walks = []
    for _ in range(n_learners):
        length = int(rng.integers(min_len, max_len + 1))
        ability = rng.normal(0.0, 0.8)
        progress = [0] * n_families
        attempts = 0
        fam = int(rng.integers(n_families))
        steps = []
        for _ in range(length):
            k = id_of[(fam, progress[fam])]
            p = 1 / (1 + np.exp(-(ability - 0.6 + 0.9 * attempts)))
            ok = rng.random() < p
            steps.append((k, ok))
            if not ok:
                attempts += 1
                continue
            attempts = 0
            progress[fam] += 1
            open_fams = [g for g in range(n_families) if progress[g] < sizes[g]]
            if not open_fams:
                break
            if progress[fam] >= sizes[fam] or rng.random() < p_switch:
                fam = int(open_fams[rng.integers(len(open_fams))])
        walks.append(steps)
    return _fixture(names, prereq, position, walks, n_learners)


def mastery_sequences(n_learners=500, n_concepts=10, length=50, signal=True, seed=0):
    """(concept, correct) sequences for knowledge-tracing checks.

    With signal, success probability rises with the learner's practice
    count on that concept; without, every answer is a fair coin.
    """
    from .dataset import LearnerSequence

    rng = np.random.default_rng(seed)
    out = []
    for u in range(n_learners):
        ability = rng.normal(0.0, 0.5)
        counts = np.zeros(n_concepts)
        steps = []
        for _ in range(length):
            k = int(rng.integers(n_concepts))
            if signal:
                p = 1 / (1 + np.exp(-(-2.0 + ability + 0.8 * counts[k])))
            else:
                p = 0.5
            steps.append((k, bool(rng.random() < p)))
            counts[k] += 1
        out.append(LearnerSequence(u, tuple(steps)))
    return out
