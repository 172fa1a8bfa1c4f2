# %% [markdown]
# # How many simulations?
#
# A single estimate with error at most `eps` and failure probability `delta`
# needs `ceil((ln 2 - ln delta) / (2 eps^2))` simulations. Estimating many
# schedulers at once, and trusting all of them jointly, costs more per
# scheduler, but only logarithmically more.

# %%
import numpy as np

from smcmdp import chernoff_n, hoeffding_n, multi_chernoff_n, optimal_split
from smcmdp.stats import best_split, multi_confidence, split_objective

for eps in (0.1, 0.05, 0.01):
    row = [multi_chernoff_n(eps, 0.01, m) for m in (1, 10, 1_000, 100_000)]
    print(f"eps={eps:<5} N for M = 1, 10, 1e3, 1e5: {row}")

print("rewards in [0, 10] at eps=delta=0.01:", hoeffding_n(0.01, 0.01, 10))

# %% [markdown]
# ## Confidence as the candidate set shrinks
#
# With a per-iteration budget of 1e5, halving the candidates doubles the
# simulations each one gets. The joint failure probability drops below 1%
# once about 3e4 simulations remain per scheduler.

# %%
m = 100_000
while True:
    n = min(-(-100_000 // m), multi_chernoff_n(0.01, 0.01, m))
    conf = multi_confidence(0.01, n, m, two_sided=True)
    print(f"M={m:6d}  N={n:6d}  conf={conf:.4f}")
    if conf <= 0.01:
        break
    m = max(1, m // 2)

# %% [markdown]
# ## Splitting a budget between schedulers and simulations
#
# When few schedulers are good (rate `p_g`) and a good one satisfies the
# property only rarely (`p_gbar`), the budget split decides whether the search
# sees a good scheduler succeed at all. The quick rule `N = 1/p_gbar` needs
# no search and lands in the right range. The numeric optimum can still do
# clearly better, as the first and last rows show.

# %%
for p_g, p_gbar in ((0.01, 0.5), (0.001, 0.05), (0.05, 0.01)):
    quick = optimal_split(p_g, p_gbar, 10_000)
    exact = best_split(p_g, p_gbar, 10_000)
    print(f"p_g={p_g:<6} p_gbar={p_gbar:<5} rule N={quick.n:4d} M={quick.m:5d} -> {quick.objective:.3f};"
          f"  best N={exact.n:4d} M={exact.m:5d} -> {exact.objective:.3f}")
