# %% [markdown]
# # Smart sampling on a self-stabilising ring
#
# Seven processes pass four tokens around a ring until one token is left. The
# scheduler decides where the tokens start and which token moves. We compare
# sampled maxima and minima of the expected number of moves against the exact
# values from value iteration.

# %%
from smcmdp import EngineConfig, estimate_reward_extremum, exact_oracle, load_model, parse_property
from smcmdp.models import model_path

model = load_model(model_path("selfstab"))
rho = parse_property('R{"steps"}=? [ F<=200 "stable" ]', model)
exact = exact_oracle(model, rho)
print(f"{exact.states} states; exact max {exact.max:.3f}, min {exact.min:.3f}, uniform {exact.uniform:.3f}")

# %% [markdown]
# ## Watching the candidate set shrink
#
# The first iteration simulates every sampled scheduler once. Each later
# iteration keeps the better half and gives the survivors more simulations,
# until the joint Chernoff bound over the survivors reaches the requested
# confidence.

# %%
print(f"{'iter':>4} {'schedulers':>10} {'sims each':>9} {'best':>8} {'conf':>8}")


def show(rec):
    print(f"{rec.iteration:4d} {rec.schedulers_remaining:10d} {rec.sims_per_scheduler:9d} "
          f"{rec.best_estimate:8.3f} {rec.conf:8.4f}")


cfg = EngineConfig(direction="max", budget=100_000, epsilon=0.01, delta=0.01, seed=1)
best = estimate_reward_extremum(model, rho, cfg, progress=show)

# %% [markdown]
# ## How close did we get?

# %%
cfg.direction = "min"
worst = estimate_reward_extremum(model, rho, cfg)
for name, res, truth in (("max", best, exact.max), ("min", worst, exact.min)):
    print(f"{name}: estimate {res.estimate:.3f}, exact {truth:.3f}, error {res.estimate / truth - 1:+.2%}, "
          f"P(reach) test accepted: {res.hypothesis.accepted}")
print(f"uniform scheduler: sampled {best.uniform_estimate:.3f}, exact {exact.uniform:.3f}")
