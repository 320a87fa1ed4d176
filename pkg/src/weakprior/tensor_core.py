"""Elementary reductions and resampling on dense 2-D / 3-D float grids."""

import numpy as np

from ._validation import DimensionError, check_grid2, check_grid3


def channel_mean_pool(t):
    """Average a (C, H, W) stack over its channel axis."""
    t = check_grid3(t, "activation stack")
    return t.mean(axis=0)


def minmax_normalize(m):
    """Rescale a map to [0, 1].

    A constant map has no contrast to rescale and maps to all zeros, so a
    featureless activation asserts no foreground anywhere.
    """
    m = check_grid2(m)
    lo = m.min()
    hi = m.max()
    if hi == lo:
        return np.zeros_like(m)
    out = (m - lo) / (hi - lo)
    # guard the last ulp so the range is exactly [0, 1]
    return np.clip(out, 0.0, 1.0)


def _axis_weights(n_in, n_out):
    if n_out == 1:
        pos = np.array([(n_in - 1) / 2.0])
    else:
        pos = np.arange(n_out) * ((n_in - 1) / (n_out - 1))
    lo = np.floor(pos).astype(np.intp)
    lo = np.clip(lo, 0, n_in - 1)
    hi = np.minimum(lo + 1, n_in - 1)
    frac = pos - lo
    return lo, hi, frac


def resize_bilinear(m, out_h, out_w):
    """Bilinear resize with corner-aligned sampling.

    Output pixel (0, 0) samples input (0, 0) and the last output pixel samples
    the last input pixel, so resizing to the same shape is the identity.
    """
    m = check_grid2(m)
    out_h = int(out_h)
    out_w = int(out_w)
    if out_h < 1 or out_w < 1:
        raise DimensionError(f"target dims must be positive, got {out_h}x{out_w}")
    h, w = m.shape
    if (h, w) == (out_h, out_w):
        return m.copy()

    y0, y1, fy = _axis_weights(h, out_h)
    x0, x1, fx = _axis_weights(w, out_w)
    fy = fy[:, None]
    fx = fx[None, :]
    top = m[y0][:, x0] * (1.0 - fx) + m[y0][:, x1] * fx
    bottom = m[y1][:, x0] * (1.0 - fx) + m[y1][:, x1] * fx
    out = top * (1.0 - fy) + bottom * fy
    # convex weights can still overshoot by rounding
    return np.clip(out, m.min(), m.max())


def resize_stack(t, out_h, out_w):
    """Apply :func:`resize_bilinear` to every channel of a stack."""
    t = check_grid3(t)
    return np.stack([resize_bilinear(c, out_h, out_w) for c in t])
