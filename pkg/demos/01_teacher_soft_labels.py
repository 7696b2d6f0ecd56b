# coding: utf-8

# # Teacher scores to soft labels
#
# A teacher rates every candidate concept on a 0..3 scale, one chunk of
# candidates at a time.  The integer ratings become a smoothed probability
# distribution that the student later imitates.

import numpy as np

from conceptrec import teacher as tc


# A learner whose latest concept scored 3, 0 and 1 against three candidates:

y = tc.soft_labels([3, 0, 1], epsilon=0.1)
print(np.round(y, 6))  # [0.708333 0.033333 0.258333]

# Every entry keeps at least epsilon / M of the mass, and equal ratings
# give a uniform distribution, including the all-zero case.

print(tc.soft_labels([0, 0, 0, 0], 0.1))
print(tc.soft_labels([2, 2, 2], 0.0))


# ## What the teacher sees
#
# The prompt has two parts: a fixed task description and a JSON document
# with the history, the target and the candidate chunk.

ctx = tc.ScoringContext(
    target="Fractions",
    history=("Whole numbers", "Division"),
    candidates=((4, "Ratios"), (7, "Decimals")),
    scale=(0, 3),
)
task, data = tc.render_teacher_prompt(ctx)
print(task)
print(data)

# Answers are parsed strictly: exactly one score per candidate id.
# Markdown fences are tolerated and out-of-range integers are clamped.

print(tc.parse_scores('```json\n{"scores":[{"id":4,"score":2},{"id":7,"score":5}]}\n```', [4, 7]))
try:
    tc.parse_scores('{"scores":[{"id":4,"score":2}]}', [4, 7])
except tc.CoverageError as err:
    print("rejected:", err)


# ## An offline teacher
#
# The synthetic teacher knows a planted prerequisite graph and gives 3 to
# the target's direct prerequisites, 0 to everything else.

prereq = {0: [], 1: [0], 2: [1], 3: [], 4: [3]}
names = ["counting", "addition", "multiplication", "shapes", "area"]
teacher = tc.SyntheticTeacher(prereq, names)
raw, calls = tc.score_context(teacher, names, history=[0, 1], target=2, params=tc.DistillParams(chunk_size=2))
print("raw scores:", raw, "in", calls, "calls")
labels = tc.soft_labels(raw, 0.1)
print("teacher's favourite:", names[tc.teacher_argmax(labels)])
