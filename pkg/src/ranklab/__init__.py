"""ranklab: a laboratory for softmax-family ranking losses.

The pieces, bottom up: a small tape-based autodiff over float64 numpy
arrays (autodiff), interaction-log handling (data), full-catalog ranking
metrics (metrics), the loss family in one -s_plus + log Z normal form
(losses), deterministic negative sampling (sampling), the probability
bounds tying sampled losses to NDCG/MRR plus their Monte Carlo
verification (bounds), embedding/GRU models (models), a deterministic
training harness (training), a full-vs-sampled cost benchmark (bench),
figure rendering (figures) and the CLI (cli).
"""

__version__ = "0.1.0"
