"""Listwise view ranking for image cropping, at desk scale.

Modules:

* :mod:`viewrank.tensor` - bilinear sampling, upsampling, gradient checks
* :mod:`viewrank.roi` - RoIPool / RoIAlign / RoIWarp / RoIRefine kernels
* :mod:`viewrank.ranking` - Top-1 listwise loss, pairwise hinge, oracle
* :mod:`viewrank.views` - sliding-window candidates, NMS, crop metrics
* :mod:`viewrank.io` - tensor container, PPM, box/annotation JSON
* :mod:`viewrank.toy` - synthetic data, toy network, training, ablations
"""

from .boxes import Box, as_box_array, validate_box
from .ranking import (
    LossResult,
    entropy,
    listwise_ce_batch,
    listwise_ce_loss,
    pairwise_hinge_loss,
    pairwise_list_loss,
    permutation_oracle,
    rank_order_score,
    select_pairs,
    spearman,
    top1_probability,
)
from .roi import KINDS, RoIConfig, RoISampler, roi_backward, roi_forward
from .tensor import (
    GradCheckReport,
    bilinear_sample,
    bilinear_sample_backward,
    finite_diff_check,
    upsample_bilinear,
    upsample_bilinear_backward,
)
from .views import (
    Annotation,
    SlidingWindowConfig,
    boundary_displacement,
    generate_windows,
    iou,
    nms,
    pick_best_view,
    top1_max_iou,
)

__version__ = "0.1.0"
