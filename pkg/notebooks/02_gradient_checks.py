# %% [markdown]
# # Gradient checks
#
# Every hand-written backward pass is compared against central finite
# differences on seeded random instances.  The same checks back the
# `gradcheck` command line target.

# %%
from viewrank.checks import LOSS_TARGETS, TARGETS, run_gradcheck

# %%
for target in TARGETS:
    tol = 1e-6 if target.split(":")[-1] in LOSS_TARGETS else 1e-3
    reports = [run_gradcheck(target, seed=s, tol=tol) for s in range(5)]
    worst = max(r.max_rel_err for r in reports)
    print(f"{target:14s} tol {tol:.0e}  worst rel err {worst:.2e}  passed {all(reports)}")

# %% [markdown]
# A single report carries the location of the worst entry.

# %%
print(run_gradcheck("roi:refine", seed=1).summary())
