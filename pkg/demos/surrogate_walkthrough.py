"""Walk through the surrogate on a handful of LoRA configurations.

Renders a few configurations into prompts, embeds them with the offline
provider, fits the deep-kernel GP to synthetic scores and shows which
unseen configuration expected improvement would pick next.

    python3 demos/surrogate_walkthrough.py
"""

import numpy as np

from promptbo.acquire import score_pool, select_next
from promptbo.embed import FeatureExtractorParams, OfflineHashProvider, embed_text
from promptbo.evaluate import SyntheticLandscape
from promptbo.prompt import PromptTemplate, render
from promptbo.space import default_lora_space
from promptbo.surrogate import fit, marginal_log_likelihood

space = default_lora_space()
template = PromptTemplate.from_spec("domain_aware")
print(f"search space: {space.size} configurations over {', '.join(space.names)}")

# %% one prompt, as the embedder sees it
print()
print(render(template, space.config(0)).split("\n\n")[1])

# %% a small pool: 400 configurations spread over the grid
rng = np.random.default_rng(0)
pool = np.sort(rng.choice(space.size, size=400, replace=False))
texts = [render(template, space.config(int(i))) for i in pool]
emb = embed_text(OfflineHashProvider(256, seed=0), texts)
print(f"\nembedded {len(texts)} prompts -> {emb.shape}")

# %% observe 15 of them on the synthetic landscape
land = SyntheticLandscape(0, noise_std=0.0)
metric = np.array([land.mean_metric(space.config(int(i))) for i in pool])
seen = rng.choice(len(pool), size=15, replace=False)
features = FeatureExtractorParams.initialize(emb.shape[1], 64, 128, 0.1, seed=1)
state = fit(emb[seen], metric[seen], features=features, seed=0)
print(f"fitted surrogate: MLL {marginal_log_likelihood(state):.3f}, "
      f"lengthscale {state.kernel.lengthscale:.3f}, noise {state.kernel.noise_variance:.2e}")

# %% how well does the posterior mean rank the unseen configurations?
unseen = np.setdiff1d(np.arange(len(pool)), seen)
scores = score_pool(state, unseen, emb[unseen], float(metric[seen].max()))
means = np.array([s.mean for s in scores])
ranks = lambda a: np.argsort(np.argsort(a))
print(f"rank correlation of posterior mean with truth on {len(unseen)} unseen: "
      f"{np.corrcoef(ranks(means), ranks(metric[unseen]))[0, 1]:.3f}")

# %% the next pick
pick = select_next(scores)
print(f"\nbest observed so far: {metric[seen].max():.4f}")
print(f"EI picks {space.config(int(pool[pick]))} with true value {metric[pick]:.4f}")
print(f"best in the unseen pool: {metric[unseen].max():.4f}")
