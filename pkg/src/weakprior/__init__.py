"""Built-in foreground and multi-class priors for tag-supervised segmentation.

The pipeline: fuse two activation stacks into a foreground map, combine it with
class activation maps into per-class probabilities, smooth either with a dense
CRF (optionally with region terms), and train a per-pixel head under tag-only
or mask-based weak losses.
"""

from ._validation import DimensionError, DivergenceError
from .cam import MulticlassPrior, binarize_cam, combine_multiclass, compute_cam, fgbg_to_probmaps
from .crf import (
    DenseCRF,
    PairwiseParams,
    RegionPartition,
    gibbs_energy,
    map_labeling,
    mean_field_infer,
    region_costs,
    unary_from_probs,
)
from .fusion import ForegroundFusion, fuse_foreground
from .losses import (
    MaskError,
    TagSet,
    loss_fgbg,
    loss_grad,
    loss_multiclass,
    loss_weak,
    lse_pool,
    softmax_scores,
)
from .metrics import confusion, iou, trimap_accuracy
from .synth import SynthConfig, SynthScene, synth_dataset, synth_scene
from .tensor_core import channel_mean_pool, minmax_normalize, resize_bilinear
from .training import HeadParams, TrainConfig, WeakSegmenter, predict, train_head

__version__ = "0.1.0"
