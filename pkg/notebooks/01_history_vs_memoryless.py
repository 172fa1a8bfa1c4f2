# %% [markdown]
# # When memory matters
#
# The bundled `history` model has three states. From `s=0` the scheduler picks
# `a1` (cost 5, always to `s=1`) or `a2` (cost 2, to `s=1` or `s=2` with equal
# odds). Both successors return to `s=0` at cost 1. The path condition
# `X ("psi" & X G<=4 "phi")` forbids `s=2` after the second step, so only the
# first visit to `s=0` may gamble on `a2`.
#
# A scheduler that remembers the prefix can take `a2` once and `a1` after
# that. A memoryless scheduler sees the same state every time and must commit
# to one action.

# %%
from smcmdp import EngineConfig, SchedulerMode, estimate_reward_extremum, load_model, parse_property, simulate
from smcmdp.bltl import Atom, Globally
from smcmdp.expr import TRUE
from smcmdp.models import model_path

model = load_model(model_path("history"))
rho = parse_property('R{"cost"}min=? [ C<=6 given X ("psi" & X G<=4 "phi") ]', model)

# %% [markdown]
# ## Schedulers are seeds
#
# A scheduler is a 64-bit number. Each step folds the visited states into a
# hash seeded with it, and the hash picks the action. Here we look for seeds
# whose choices at `s=0` change between visits.

# %%
watch = Globally(6, Atom(TRUE))


def choices_at_s0(sigma, mode):
    rec = simulate(model, watch, sigma, prob_seed=1, mode=mode, max_steps=7)
    return [a.label for s, a in zip(rec.states, rec.actions) if s == (0,) and a is not None]


for mode in SchedulerMode:
    mixed = [s for s in range(200) if len(set(choices_at_s0(s, mode))) > 1]
    print(f"{mode.value:10s} seeds with mixed choices at s=0: {len(mixed)}/200")

# %% [markdown]
# ## Minimum expected cost
#
# By hand: the history-dependent optimum pays 2+1+5+1+5+1 = 15, the best
# memoryless scheduler pays 5+1+5+1+5+1 = 18. Sampling schedulers finds both.

# %%
for mode in SchedulerMode:
    cfg = EngineConfig(direction="min", mode=mode, budget=20_000, epsilon=0.02, delta=0.02, seed=7)
    res = estimate_reward_extremum(model, rho, cfg)
    print(f"{mode.value:10s} min = {res.estimate:g}  (scheduler {res.sigma}, {res.iterations} iterations)")
