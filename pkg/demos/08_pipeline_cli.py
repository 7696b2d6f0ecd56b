# coding: utf-8

# # The whole pipeline from the command line
#
# Every stage writes into one run directory and records hashes of its
# inputs in manifest.json.  Rerunning a finished stage does nothing, and
# changing a setting reruns only the stages that depend on it.

import json
import subprocess
import tempfile
import time
from pathlib import Path

run = Path(tempfile.mkdtemp()) / "run"
small = [
    "--set", "data.n_learners=100",
    "--set", "data.n_concepts=30",
    "--set", "data.n_families=6",
    "--set", "student.kd_epochs=100",
    "--set", "student.pref_epochs=20",
    "--set", "dkt.epochs=3",
]


def conceptrec(*args):
    start = time.perf_counter()
    done = subprocess.run(["conceptrec", *args, "--run-dir", str(run)], capture_output=True, text=True)
    print(f"$ conceptrec {' '.join(args[:3])}{' ...' if len(args) > 3 else ''}  -> exit {done.returncode}, {time.perf_counter() - start:.1f}s")
    return done


def at_five(summary):
    print("\n".join(line for line in summary.splitlines() if "@5" in line or line.startswith("mode")))


# Asking for an evaluation before anything is trained names the missing step.
print(conceptrec("evaluate").stderr)

at_five(conceptrec("run", *small).stdout)

# A second run finds everything up to date.
conceptrec("run")

print(sorted(str(p.relative_to(run)) for p in run.rglob("*.json") if "cache" not in p.parts))


# ## Recommendations
#
# Concepts the learner has already met are filtered out before the top-n
# list is returned.

print(json.loads(conceptrec("recommend", "--learner", "5", "--top", "3").stdout))


# ## Changing one setting
#
# A longer reranker schedule retrains the reranker only, then evaluation.

conceptrec("train-reranker", "--set", "reranker.epochs=8")
at_five(conceptrec("evaluate").stdout)

# Invalid settings are rejected with the field name and exit code 1.
print(conceptrec("ingest", "--set", "student.tau=0").stderr)
