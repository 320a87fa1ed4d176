"""Tag-supervised losses over per-pixel class scores, with analytic gradients.

All losses take raw scores ``s`` of shape (L, H, W), L = C + 1 labels with
label 0 the background, and a :class:`TagSet`. Class probabilities are the
per-pixel softmax of ``s``; a class's image-level score is a log-sum-exp
pooling of its probabilities over a pixel set.
"""

from dataclasses import dataclass
from collections.abc import Mapping

import numpy as np
from scipy.special import softmax

from ._validation import DimensionError, check_grid3

LOG_FLOOR = 1e-12
LSE_R = 5.0
VARIANTS = ("weak", "fgbg", "multiclass")


class MaskError(ValueError):
    """A mask needed by a loss is empty (or, for fg/bg, covers everything)."""


@dataclass(frozen=True)
class TagSet:
    """Labels present in an image (background always included) out of ``n_labels``."""

    present: frozenset
    n_labels: int

    def __post_init__(self):
        present = frozenset(int(k) for k in self.present) | {0}
        if min(present) < 0 or max(present) >= self.n_labels:
            raise ValueError(f"tags {sorted(present)} outside [0, {self.n_labels})")
        object.__setattr__(self, "present", present)

    @classmethod
    def from_labels(cls, labels, n_labels):
        return cls(frozenset(np.unique(np.asarray(labels)).tolist()), n_labels)

    @property
    def absent(self):
        return frozenset(range(self.n_labels)) - self.present

    @property
    def foreground(self):
        return sorted(self.present - {0})


def softmax_scores(s):
    """Per-pixel softmax over the label axis (max-shifted, overflow safe)."""
    s = check_grid3(s, "scores")
    return softmax(s, axis=0)


def _lse(values, r):
    m = values.max()
    e = np.exp(r * (values - m))
    total = e.sum()
    return m + np.log(total / values.size) / r, e / total


def lse_pool(values, r=LSE_R):
    """Smooth maximum ``(1/r) log(mean(exp(r v)))``.

    Lies between the mean (r -> 0) and the max (r -> inf) of ``values``.
    """
    values = np.asarray(values, dtype=np.float64).ravel()
    if values.size == 0:
        raise ValueError("cannot pool an empty set of values")
    if r <= 0:
        raise ValueError(f"r must be positive, got {r}")
    return float(_lse(values, r)[0])


def _neg_log(x):
    """-log(max(x, floor)) and its derivative in x."""
    if x > LOG_FLOOR:
        return -np.log(x), -1.0 / x
    return -np.log(LOG_FLOOR), 0.0


def _check_tags(s, tags):
    if tags.n_labels != s.shape[0]:
        raise DimensionError(f"tags cover {tags.n_labels} labels but scores have {s.shape[0]}")


def _as_mask(m, shape, name="mask"):
    m = np.asarray(m)
    if m.shape != shape:
        raise DimensionError(f"{name} {m.shape} does not match scores {shape}")
    return m.astype(bool)


def _multiclass_masks(masks, tags, shape):
    """Normalize ``masks`` to {label: bool mask} for every present label."""
    out = {}
    if isinstance(masks, Mapping):
        for k in tags.foreground:
            if k not in masks:
                raise MaskError(f"no mask supplied for present class {k}")
            out[k] = _as_mask(masks[k], shape, f"mask {k}")
        if 0 in masks:
            out[0] = _as_mask(masks[0], shape, "mask 0")
        else:
            union = np.zeros(shape, dtype=bool)
            for k in tags.foreground:
                union |= out[k]
            out[0] = ~union
    else:
        arr = np.asarray(masks)
        if arr.ndim != 3 or arr.shape[0] != tags.n_labels:
            raise DimensionError(f"mask stack must be ({tags.n_labels}, H, W), got {arr.shape}")
        for k in sorted(tags.present):
            out[k] = _as_mask(arr[k], shape, f"mask {k}")
    for k, m in out.items():
        if not m.any():
            raise MaskError(f"mask for present class {k} is empty")
    return out


def _pooled_term(S, k, where, coef, r, grad):
    # adds coef * -log(pool(S[k] over where)) to the loss, returns the value
    vals = S[k][where]
    pooled, w = _lse(vals, r)
    val, d = _neg_log(pooled)
    if grad is not None and d:
        grad[k][where] += coef * d * w
    return coef * val


def _absent_pixel_term(s, S, absent, coef, ds):
    # -log(1 - S_k) = log sum_j e_j - log sum_{j != k} e_j with max-shifted
    # exponentials; both sums have positive terms, so the value stays exact as
    # S_k -> 1. The score gradient is S_j - T_j, T the softmax over labels
    # other than k (T_k = 0), added straight into ``ds`` to avoid
    # backpropagating 1 / (1 - S)
    total = 0.0
    e = np.exp(s - s.max(axis=0, keepdims=True))
    log_all = np.log(e.sum(axis=0))
    cap = -np.log(LOG_FLOOR)
    labels = np.arange(s.shape[0])
    for k in absent:
        others = labels != k
        rest = e[others].sum(axis=0)
        val = log_all - np.log(rest)
        ok = val < cap
        total += coef * float(np.where(ok, val, cap).sum())
        if ds is not None:
            T = e / rest
            T[k] = 0.0
            ds += coef * np.where(ok, S - T, 0.0)
    return total


def _evaluate(s, tags, variant, masks=None, r=LSE_R, want_grad=False):
    s = check_grid3(s, "scores")
    _check_tags(s, tags)
    S = softmax(s, axis=0)
    shape = s.shape[1:]
    grad = np.zeros_like(S) if want_grad else None
    ds_direct = np.zeros_like(S) if want_grad else None
    present = sorted(tags.present)
    absent = sorted(tags.absent)
    everywhere = np.ones(shape, dtype=bool)
    loss = 0.0

    if variant == "weak":
        for k in present:
            loss += _pooled_term(S, k, everywhere, 1.0 / len(present), r, grad)
        for k in absent:
            pooled, w = _lse(S[k].ravel(), r)
            val, d = _neg_log(1.0 - pooled)
            loss += val / len(absent)
            if grad is not None and d:
                grad[k] += (-d / len(absent)) * w.reshape(shape)
    elif variant == "fgbg":
        if masks is None:
            raise MaskError("the fg/bg loss needs a foreground mask")
        fg = _as_mask(masks, shape)
        if not fg.any() or fg.all():
            raise MaskError("foreground mask must be neither empty nor full")
        fg_classes = tags.foreground
        for k in fg_classes:
            loss += _pooled_term(S, k, fg, 1.0 / len(fg_classes), r, grad)
        loss += _pooled_term(S, 0, ~fg, 1.0, r, grad)
        if absent:
            loss += _absent_pixel_term(s, S, absent, 1.0 / (len(absent) * S[0].size), ds_direct)
    elif variant == "multiclass":
        if masks is None:
            raise MaskError("the multi-class loss needs per-class masks")
        mk = _multiclass_masks(masks, tags, shape)
        for k in present:
            loss += _pooled_term(S, k, mk[k], 1.0 / len(present), r, grad)
        if absent:
            loss += _absent_pixel_term(s, S, absent, 1.0 / (len(absent) * S[0].size), ds_direct)
    else:
        raise ValueError(f"unknown loss variant {variant!r}; expected one of {VARIANTS}")

    if not want_grad:
        return float(loss), None
    # back through the per-pixel softmax
    ds = S * (grad - (grad * S).sum(axis=0, keepdims=True))
    return float(loss), ds + ds_direct


def loss_weak(s, tags, r=LSE_R):
    """Tag-only loss: present classes pooled over the image should score high,
    absent ones pooled over the image should score low."""
    return _evaluate(s, tags, "weak", r=r)[0]


def loss_fgbg(s, tags, mask, r=LSE_R):
    """Loss with a binary foreground mask.

    Present foreground classes are pooled inside the mask, background outside
    it, and every pixel is penalized for probability on absent classes. With
    no foreground tags the first term is dropped.

    Raises :class:`MaskError` when the mask is empty or full.
    """
    return _evaluate(s, tags, "fgbg", masks=mask, r=r)[0]


def loss_multiclass(s, tags, masks, r=LSE_R):
    """Loss with one mask per present label.

    ``masks`` is either an (L, H, W) stack or a mapping ``{label: mask}``; a
    mapping without label 0 uses the complement of the foreground masks as
    the background mask.
    """
    return _evaluate(s, tags, "multiclass", masks=masks, r=r)[0]


def loss_grad(s, tags, variant, masks=None, r=LSE_R):
    """Gradient of the chosen loss with respect to the raw scores."""
    return _evaluate(s, tags, variant, masks=masks, r=r, want_grad=True)[1]


def loss_and_grad(s, tags, variant, masks=None, r=LSE_R):
    return _evaluate(s, tags, variant, masks=masks, r=r, want_grad=True)
