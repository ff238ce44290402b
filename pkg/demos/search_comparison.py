"""Compare deep-kernel BO against random search and raw-vector BO.

Runs each strategy for a few seeds on the synthetic landscape, prints the
best value found after 30 evaluations, then projects one deep-kernel
trajectory onto two principal components.

    python3 demos/search_comparison.py [n_seeds]
"""

import sys
import tempfile
from pathlib import Path

import numpy as np

from promptbo import loop, runner
from promptbo.config import RunConfig
from promptbo.embed import EmbeddingCache
from promptbo.evaluate import SyntheticLandscape
from promptbo.space import default_lora_space

n_seeds = int(sys.argv[1]) if len(sys.argv) > 1 else 3
work = Path(tempfile.mkdtemp(prefix="promptbo-demo-"))
values = SyntheticLandscape(0).grid_values(default_lora_space())
top1 = np.sort(values)[-int(np.ceil(0.01 * values.size))]
print(f"grid optimum {values.max():.4f}; top-1% threshold {top1:.4f}")

# the pool embedding is the same for every seed, so share one in-memory cache
cache = EmbeddingCache()
best = {}
for strategy in ("random", "raw_bo", "deep_kernel"):
    best[strategy] = []
    for seed in range(n_seeds):
        cfg = RunConfig.from_mapping({"seed": seed, "strategy": strategy, "budget": 30,
                                      "output_dir": str(work / f"{strategy}-{seed}")})
        built = runner.build_problem(cfg, cache=cache)
        obs = loop.run(built.problem, built.journal_path, cfg.digest, cfg.data)
        best[strategy].append(obs.metric)
    print(f"{strategy:12s} best after 30: " + "  ".join(f"{m:.4f}" for m in best[strategy])
          + f"   mean {np.mean(best[strategy]):.4f}")

# %% where did one deep-kernel run go?
journal = work / "deep_kernel-0" / "journal.jsonl"
csv = runner.export_trajectory(journal, work / "trajectory.csv", cache=cache)
print(f"\ntrajectory of seed 0 in learned feature space: {csv}")
for line in csv.read_text().splitlines()[:6]:
    print("  " + line)
