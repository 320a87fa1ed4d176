"""Per-pixel linear segmentation head trained by SGD with momentum on weak losses."""

import logging
from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin, clone

from ._validation import DimensionError, DivergenceError, check_grid3
from .cam import combine_multiclass, compute_cam, fgbg_to_probmaps, restrict_to_labels
from .crf import DenseCRF
from .fusion import fuse_foreground
from .losses import VARIANTS, loss_and_grad
from .metrics import iou
from .tensor_core import channel_mean_pool, minmax_normalize, resize_bilinear, resize_stack

logger = logging.getLogger(__name__)

FALLBACK_FRACTION = 0.01
N_FEATURES = 8


def scene_features(scene):
    """(8, H, W) per-pixel features: centered RGB, both pooled activation maps,
    and the three absolute channel differences (a saturation cue)."""
    h, w = scene.shape
    rgb = scene.image / 255.0
    a4 = minmax_normalize(resize_bilinear(channel_mean_pool(scene.conv4), h, w))
    a5 = minmax_normalize(resize_bilinear(channel_mean_pool(scene.conv5), h, w))
    r, g, b = rgb
    return np.stack([r - 0.5, g - 0.5, b - 0.5, a4 - 0.5, a5 - 0.5, np.abs(r - g), np.abs(g - b), np.abs(b - r)])


@dataclass
class HeadParams:
    """Linear map from F per-pixel features to L label scores."""

    weight: np.ndarray  # (L, F)
    bias: np.ndarray  # (L,)

    @classmethod
    def init(cls, n_labels, n_features, rng, std=0.1):
        return cls(rng.normal(0.0, std, size=(n_labels, n_features)), np.zeros(n_labels))

    def copy(self):
        return HeadParams(self.weight.copy(), self.bias.copy())

    def to_array(self):
        """(L, F + 1) array, bias in the last column."""
        return np.concatenate([self.weight, self.bias[:, None]], axis=1)

    @classmethod
    def from_array(cls, arr):
        arr = np.asarray(arr, dtype=np.float64)
        if arr.ndim != 2 or arr.shape[1] < 2:
            raise DimensionError(f"head array must be (L, F + 1), got {arr.shape}")
        return cls(arr[:, :-1].copy(), arr[:, -1].copy())


def predict(head, features):
    """Scores ``s[k] = weight[k] . features + bias[k]`` at every pixel."""
    features = check_grid3(features, "features")
    if features.shape[0] != head.weight.shape[1]:
        raise DimensionError(f"head expects {head.weight.shape[1]} features, got {features.shape[0]}")
    return np.tensordot(head.weight, features, axes=([1], [0])) + head.bias[:, None, None]


@dataclass
class TrainConfig:
    """SGD settings. The learning rate drops by ``lr_drop`` after
    ``lr_drop_at`` of the epochs, mirroring a two-stage schedule."""

    lr: float = 0.05
    momentum: float = 0.9
    weight_decay: float = 0.0005
    epochs: int = 30
    seed: int = 0
    variant: str = "weak"
    lr_drop: float = 0.1
    lr_drop_at: float = 2.0 / 3.0
    init_std: float = 0.1

    def __post_init__(self):
        if self.lr < 0:
            raise ValueError("lr must be non-negative")
        if not 0.0 <= self.momentum < 1.0:
            raise ValueError("momentum must lie in [0, 1)")
        if self.weight_decay < 0:
            raise ValueError("weight_decay must be non-negative")
        if self.epochs < 0:
            raise ValueError("epochs must be non-negative")
        if self.variant not in VARIANTS:
            raise ValueError(f"variant must be one of {VARIANTS}")

    def lr_at(self, epoch):
        if epoch >= int(round(self.lr_drop_at * self.epochs)):
            return self.lr * self.lr_drop
        return self.lr


def _top_fraction(values, fraction=FALLBACK_FRACTION):
    n = max(1, int(np.ceil(fraction * values.size)))
    order = np.argsort(-values.ravel(), kind="stable")[:n]
    mask = np.zeros(values.size, dtype=bool)
    mask[order] = True
    return mask.reshape(values.shape)


def foreground_prior(scene):
    h, w = scene.shape
    return fuse_foreground(scene.conv4, scene.conv5, h, w)


def multiclass_prior(scene, alpha=0.5, rho=0.2):
    """Per-label probabilities restricted to the scene's tags."""
    h, w = scene.shape
    pf = foreground_prior(scene)
    cams = compute_cam(scene.cam_features, scene.cam_weights)
    if cams.shape[1:] != (h, w):
        cams = resize_stack(cams, h, w)
    return restrict_to_labels(combine_multiclass(pf, cams, alpha, rho), scene.tags.present)


def build_masks(scene, variant, crf=None, higher_order=False, kernel=None):
    """Training masks for one scene, smoothed by ``crf``.

    ``fgbg`` returns an (H, W) foreground mask, ``multiclass`` an (L, H, W)
    stack with a non-empty mask for every present label, ``weak`` None. A CRF
    mask that comes out empty is replaced by the top 1% most probable pixels
    of the corresponding prior.
    """
    if variant == "weak":
        return None
    crf = DenseCRF() if crf is None else crf
    regions = scene.regions if higher_order else None
    if kernel is None:
        kernel = crf.make_kernel(scene.image)
    if variant == "fgbg":
        pf = foreground_prior(scene)
        labels = crf.predict(fgbg_to_probmaps(pf), scene.image, regions, kernel=kernel)
        fg = labels == 1
        if not fg.any():
            logger.info("empty foreground mask; using top pixels of the prior")
            fg = _top_fraction(pf)
        if fg.all():
            logger.info("foreground mask covers the image; freeing the least likely pixels")
            fg = ~_top_fraction(1.0 - pf)
        return fg
    if variant == "multiclass":
        probs = multiclass_prior(scene)
        labels = crf.predict(probs, scene.image, regions, kernel=kernel)
        masks = np.zeros(probs.shape, dtype=bool)
        for k in sorted(scene.tags.present):
            masks[k] = labels == k
            if not masks[k].any():
                logger.info("empty mask for present label %d; using top pixels of its prior", k)
                masks[k] = _top_fraction(probs[k])
        return masks
    raise ValueError(f"unknown variant {variant!r}")


def train_head(dataset, cfg, masks=None, features=None, callback=None):
    """Fit a linear head on ``dataset`` with per-sample SGD + momentum.

    Parameters
    ----------
    dataset : list of SynthScene
    cfg : TrainConfig
    masks : list, optional
        Precomputed masks per scene (see :func:`build_masks`); built with the
        default CRF when omitted. Masks stay fixed during training.
    features : list of arrays, optional
        Precomputed :func:`scene_features` per scene.

    Returns
    -------
    (HeadParams, list of per-epoch mean losses)
    """
    if not dataset:
        raise ValueError("dataset is empty")
    if masks is None:
        masks = [build_masks(sc, cfg.variant) for sc in dataset]
    if features is None:
        features = [scene_features(sc) for sc in dataset]
    if len(masks) != len(dataset) or len(features) != len(dataset):
        raise DimensionError("masks/features must align with the dataset")

    rng = np.random.default_rng(cfg.seed)
    n_labels = dataset[0].n_labels
    n_feat = features[0].shape[0]
    head = HeadParams.init(n_labels, n_feat, rng, cfg.init_std)
    vel_w = np.zeros_like(head.weight)
    vel_b = np.zeros_like(head.bias)
    flat = [f.reshape(n_feat, -1) for f in features]

    history = []
    for epoch in range(cfg.epochs):
        lr = cfg.lr_at(epoch)
        total = 0.0
        for idx in rng.permutation(len(dataset)):
            scene = dataset[idx]
            scores = predict(head, features[idx])
            loss, grad = loss_and_grad(scores, scene.tags, cfg.variant, masks[idx])
            if not np.isfinite(loss) or not np.all(np.isfinite(grad)):
                raise DivergenceError(f"non-finite loss at epoch {epoch}, sample {idx} (lr={lr})")
            g = grad.reshape(n_labels, -1)
            grad_w = g @ flat[idx].T + cfg.weight_decay * head.weight
            grad_b = g.sum(axis=1)
            vel_w = cfg.momentum * vel_w - lr * grad_w
            vel_b = cfg.momentum * vel_b - lr * grad_b
            head.weight = head.weight + vel_w
            head.bias = head.bias + vel_b
            total += loss
        history.append(total / len(dataset))
        if not np.all(np.isfinite(head.weight)):
            raise DivergenceError(f"parameters became non-finite at epoch {epoch}")
        if callback is not None:
            callback(epoch, head, history[-1])
    return head, history


class WeakSegmenter(ClassifierMixin, BaseEstimator):
    """Tag-supervised segmenter: masks from built-in priors, linear head, SGD.

    ``fit`` takes a list of scenes (anything with ``image``, ``gt``-free
    ``tags``, activation stacks and ``regions`` like :class:`SynthScene`);
    ground truth is never read during fitting. ``predict`` returns one label
    map per scene and ``score`` the mean IoU against ``scene.gt``.

    Parameters
    ----------
    variant : {"weak", "fgbg", "multiclass"}
        Loss; the last two train against CRF-smoothed prior masks.
    higher_order : bool
        Add region terms to the CRF used for mask generation.
    crf : DenseCRF, optional
        Smoother for mask generation; defaults to ``DenseCRF()``.
    """

    def __init__(
        self,
        variant="multiclass",
        higher_order=False,
        crf=None,
        lr=0.05,
        momentum=0.9,
        weight_decay=0.0005,
        epochs=30,
        seed=0,
    ):
        self.variant = variant
        self.higher_order = higher_order
        self.crf = crf
        self.lr = lr
        self.momentum = momentum
        self.weight_decay = weight_decay
        self.epochs = epochs
        self.seed = seed

    def _config(self):
        return TrainConfig(
            lr=self.lr,
            momentum=self.momentum,
            weight_decay=self.weight_decay,
            epochs=self.epochs,
            seed=self.seed,
            variant=self.variant,
        )

    def fit(self, scenes, y=None, masks=None):
        cfg = self._config()
        scenes = list(scenes)
        if masks is None:
            crf = DenseCRF() if self.crf is None else clone(self.crf)
            masks = [build_masks(sc, self.variant, crf, self.higher_order) for sc in scenes]
        self.masks_ = masks
        self.head_, self.loss_history_ = train_head(scenes, cfg, masks=masks)
        self.n_labels_ = self.head_.weight.shape[0]
        self.classes_ = np.arange(self.n_labels_)
        return self

    def decision_function(self, scenes):
        return [predict(self.head_, scene_features(sc)) for sc in scenes]

    def predict(self, scenes):
        return [np.argmax(s, axis=0) for s in self.decision_function(scenes)]

    def score(self, scenes, y=None):
        gts = [sc.gt for sc in scenes] if y is None else y
        return iou(self.predict(scenes), gts, self.n_labels_ - 1).mean_iou

    def __sklearn_is_fitted__(self):
        return hasattr(self, "head_")
