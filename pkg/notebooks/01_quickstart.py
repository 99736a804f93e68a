# %% [markdown]
# # Quickstart: candidate views, scores and crop metrics
#
# Generate sliding-window candidates for an image, score them with the toy
# ranking network and compare the chosen crop with the best view.

# %%
import numpy as np

from viewrank import SlidingWindowConfig, boundary_displacement, generate_windows, iou, pick_best_view
from viewrank.toy.model import forward_score, init_params
from viewrank.toy.synth import synth_generate

# %% [markdown]
# A committed calibrated window config yields exactly 344 candidates.

# %%
from viewrank.cli import CONFIG_DIR

cfg = SlidingWindowConfig.from_json(CONFIG_DIR / "candidates_344.json")
candidates = generate_windows(cfg)
print(len(candidates), "candidates; first:", candidates[0])

# %% [markdown]
# One synthetic image with its own list of 24 views and oracle scores.

# %%
image, views = synth_generate(seed=0, n_images=1)[0]
print("image", image.image.shape, "subject", image.subject_box)
print("oracle best view", views.views[np.argmax(views.gt_scores)])

# %% [markdown]
# An untrained network already produces one score per view.  The chosen view
# is the argmax, with ties going to the lowest index.

# %%
params = init_params(0, fc_init="he")
scores = forward_score(params, image.image, views.views, "refine")
picked = pick_best_view(views.views, scores)
best = views.views[np.argmax(views.gt_scores)]
print("picked", picked)
print("IoU vs best %.3f, displacement %.3f" % (iou(picked, best), boundary_displacement(picked, best)))
