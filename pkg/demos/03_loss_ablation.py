"""
Which losses matter
===================

Rows 1, 5 and 11 of the loss-combination plan: base classification only,
the MIL-style set (plus soft attention, sparsity and guide), and all six
terms. Each is trained with the same seed and scored on the test split.
"""

from hamloc.synthetic import SynthConfig, generate, split
from hamloc.trainer import LOSS_PLAN, ablate, desk_config, rows_to_csv, with_losses

corpus = generate(SynthConfig(seed=0))
corpus = corpus.with_splits(*split(corpus, 0.3, seed=0))
base = desk_config(seed=0)

rows = []
for i in (0, 4, 10):
    enabled = ",".join(LOSS_PLAN[i])
    # losses left out of the row get weight zero; a one-value sweep is a plain train + test evaluation
    [row] = ablate(corpus, with_losses(base, LOSS_PLAN[i]), "seed", [0])
    row["value"] = enabled
    rows.append(row)
    print(f"{enabled:40s} avg mAP {row['avg_map']:.3f}")

print(rows_to_csv(rows, ["value", "avg_map", "map@0.3", "map@0.5", "map@0.7"]))
