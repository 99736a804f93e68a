# %% [markdown]
# # Training the toy ranker and running ablations
#
# Default training (10 epochs, listwise loss, RoIRefine) takes about half a
# minute on one CPU.  The ablation cell trains 21 models and takes about a
# quarter of an hour, so it is switched off by default.

# %%
import logging

from viewrank.toy.train import TrainConfig, eval_rank_quality, make_splits, run_ablation, train

logging.basicConfig(level=logging.INFO, format="%(message)s")
RUN_ABLATION = False

# %%
cfg = TrainConfig()
train_set, val_set, test_set = make_splits(cfg, n_test=64)
result = train(cfg, train_set, val_set)
print("best epoch", result.best_epoch)
print(eval_rank_quality(result.params, test_set, cfg.roi_kind))

# %% [markdown]
# Loss axis under RoIRefine and kernel axis under the listwise loss, three
# seeds each.  Rows report held-out Spearman, top-1 accuracy and IoU of the
# picked view against the best view.

# %%
if RUN_ABLATION:
    seeds = (0, 1, 2)
    matrix = [TrainConfig(loss_kind=k, rng_seed=s) for k in ("listwise", "pairwise_threshold", "pairwise_all")
              for s in seeds]
    matrix += [TrainConfig(roi_kind=k, rng_seed=s) for k in ("warp", "align", "pool", "none") for s in seeds]
    for row in run_ablation(matrix):
        print(row)
