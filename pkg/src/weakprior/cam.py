"""Class activation maps and their combination with the foreground prior."""

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin

from ._validation import DimensionError, check_grid2, check_grid3
from .tensor_core import minmax_normalize, resize_stack

PROB_FLOOR = 1e-12


def compute_cam(features, weights, normalize=True):
    """Class activation maps as weighted sums of feature channels.

    Parameters
    ----------
    features : array (K, H, W)
        Last-layer activations, one channel per unit.
    weights : array (C, K)
        Classifier weight of unit ``k`` for class ``c``.
    normalize : bool
        Min-max rescale every map to [0, 1]. Pass False to get the raw maps.

    Returns
    -------
    ndarray (C, H, W)
    """
    features = check_grid3(features, "features")
    weights = np.asarray(weights, dtype=np.float64)
    if weights.ndim != 2:
        raise DimensionError(f"weights must be (C, K), got shape {weights.shape}")
    if weights.shape[1] != features.shape[0]:
        raise DimensionError(
            f"weights have {weights.shape[1]} units but features have {features.shape[0]} channels"
        )
    if not np.all(np.isfinite(weights)):
        raise ValueError("weights contain non-finite values")
    maps = np.tensordot(weights, features, axes=([1], [0]))
    if normalize:
        maps = np.stack([minmax_normalize(m) for m in maps])
    return maps


def binarize_cam(cam, rho=0.2):
    """1 where ``cam`` exceeds ``rho`` times its maximum, else 0.

    A map whose maximum is not positive has no salient region and gives an
    all-zero mask.
    """
    cam = check_grid2(cam, "cam")
    if not 0.0 < rho < 1.0:
        raise ValueError(f"rho must lie in (0, 1), got {rho}")
    peak = cam.max()
    if peak <= 0:
        return np.zeros_like(cam)
    return (cam > rho * peak).astype(np.float64)


def _simplex(raw):
    raw = np.maximum(raw, PROB_FLOOR)
    return raw / raw.sum(axis=0, keepdims=True)


def combine_multiclass(pf, cams, alpha=0.5, rho=0.2):
    """Multi-class probability maps from the foreground prior and CAMs.

    For every class ``c`` the prior is truncated by the binarized CAM and
    blended with the CAM itself; background blends ``1 - pf`` with the
    complement of the mean CAM. Each pixel's ``C + 1`` values are then
    floored at 1e-12 and normalized to sum to one.

    ``cams`` must already be on a [0, 1] scale (see :func:`compute_cam`).
    Channel 0 of the result is background.
    """
    pf = check_grid2(pf, "pf")
    cams = check_grid3(cams, "cams")
    if cams.shape[1:] != pf.shape:
        raise DimensionError(f"cams {cams.shape[1:]} and pf {pf.shape} differ in size")
    if not 0.0 <= alpha <= 1.0:
        raise ValueError(f"alpha must lie in [0, 1], got {alpha}")

    truncated = pf[None] * np.stack([binarize_cam(m, rho) for m in cams])
    fg = alpha * truncated + (1.0 - alpha) * cams
    cam_bg = np.clip(1.0 - cams.mean(axis=0), 0.0, 1.0)
    bg = alpha * (1.0 - pf) + (1.0 - alpha) * cam_bg
    return _simplex(np.concatenate([bg[None], fg]))


def fgbg_to_probmaps(pf):
    """Two-channel probability stack ``(1 - pf, pf)``."""
    pf = check_grid2(pf, "pf")
    if pf.min() < 0 or pf.max() > 1:
        raise ValueError("pf must lie in [0, 1]")
    return np.stack([1.0 - pf, pf])


def restrict_to_labels(probs, labels):
    """Zero every channel not in ``labels`` and renormalize per pixel.

    Used when the image tags are known, so absent classes cannot claim pixels.
    """
    probs = check_grid3(probs, "probs")
    keep = np.zeros(probs.shape[0], dtype=bool)
    keep[list(labels)] = True
    out = np.where(keep[:, None, None], probs, 0.0)
    out[keep] = np.maximum(out[keep], PROB_FLOOR)
    return out / out.sum(axis=0, keepdims=True)


class MulticlassPrior(TransformerMixin, BaseEstimator):
    """Build per-class probability maps from ``(pf, features, weights)`` triples.

    CAMs are computed from ``features`` and ``weights``, resized to the size of
    ``pf`` when they differ, and combined with ``pf``.
    """

    def __init__(self, alpha=0.5, rho=0.2):
        self.alpha = alpha
        self.rho = rho

    def fit(self, X, y=None):
        return self

    def transform(self, X):
        out = []
        for pf, features, weights in X:
            pf = check_grid2(pf, "pf")
            cams = compute_cam(features, weights)
            if cams.shape[1:] != pf.shape:
                cams = resize_stack(cams, *pf.shape)
            out.append(combine_multiclass(pf, cams, self.alpha, self.rho))
        return out

    def __sklearn_is_fitted__(self):
        return True
