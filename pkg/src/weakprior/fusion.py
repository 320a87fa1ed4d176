"""Foreground probability from two deep activation stacks."""

from sklearn.base import BaseEstimator, TransformerMixin

from ._validation import check_grid3
from .tensor_core import channel_mean_pool, minmax_normalize, resize_bilinear


def fuse_foreground(conv4, conv5, out_h=None, out_w=None):
    """Fuse two activation stacks into a foreground probability map.

    Each stack is averaged over channels, resized to ``(out_h, out_w)``, the
    two maps are summed with equal weight and the sum is min-max normalized
    once. ``out_h``/``out_w`` default to the spatial size of ``conv4``.

    Returns
    -------
    ndarray of shape (out_h, out_w) with values in [0, 1].
    """
    conv4 = check_grid3(conv4, "conv4")
    conv5 = check_grid3(conv5, "conv5")
    if out_h is None:
        out_h = conv4.shape[1]
    if out_w is None:
        out_w = conv4.shape[2]
    a = resize_bilinear(channel_mean_pool(conv4), out_h, out_w)
    b = resize_bilinear(channel_mean_pool(conv5), out_h, out_w)
    return minmax_normalize(a + b)


class ForegroundFusion(TransformerMixin, BaseEstimator):
    """Transformer wrapper around :func:`fuse_foreground`.

    ``X`` is a sequence of ``(conv4, conv5)`` pairs; ``transform`` returns the
    list of foreground maps. Stateless, so ``fit`` only validates.
    """

    def __init__(self, out_shape=None):
        self.out_shape = out_shape

    def fit(self, X, y=None):
        for conv4, conv5 in X:
            check_grid3(conv4, "conv4")
            check_grid3(conv5, "conv5")
        return self

    def transform(self, X):
        h, w = self.out_shape if self.out_shape is not None else (None, None)
        return [fuse_foreground(c4, c5, h, w) for c4, c5 in X]

    def __sklearn_is_fitted__(self):
        return True
