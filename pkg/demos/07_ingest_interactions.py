# coding: utf-8

# # From an interaction log to learner sequences
#
# Interaction exports (ASSISTments-style CSV) become a concept catalog,
# time-ordered learner sequences and a leave-one-out split.

import tempfile
from pathlib import Path

from conceptrec import dataset as ds

log = """order_id,user_id,skill_id,skill_name,correct
10,alice,7,Fractions,1
11,alice,3,Decimals,0
12,alice,3,Decimals,1
13,bob,3,Decimals,1
14,bob,9,Ratios,1
15,bob,,,1
16,carol,7,Fractions,0
17,alice,9,Ratios,1
"""
path = Path(tempfile.mkdtemp()) / "log.csv"
path.write_text(log)

catalog, records, drops = ds.ingest_csv(path)
print("concepts:", catalog.concepts)
print("rows dropped:", drops)

# Columns can be renamed for other exports, for example
# ds.ingest_csv(path, {"learner": "student", "order": "timestamp"}).

stats = ds.corpus_stats(records, catalog)
print(stats)

sequences = ds.build_sequences(records)
for seq in sequences:
    print(seq.learner, seq.steps)


# ## Leave-one-out
#
# Each learner's last interaction is held out as the target; every earlier
# prefix becomes a training context (learner, prefix length).

split = ds.split_leave_one_out(sequences)
print("training contexts:", split.train_contexts)
print("held-out targets:", split.test_targets)
