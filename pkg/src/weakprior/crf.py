"""Fully-connected CRF with P^n-Potts region terms and mean-field inference.

Energy of a labeling ``x``::

    E(x) = sum_i unary[x_i, i]
         + sum_{i<j} k(i, j) [x_i != x_j]
         + sum_s (region_cost[s, l] if region s is uniformly l else theta_max)

with ``k(i, j) = w_app exp(-|dp|^2 / 2 theta_a^2 - |dc|^2 / 2 theta_b^2)
+ w_smooth exp(-|dp|^2 / 2 theta_g^2)`` over pixel positions ``p`` and colors
``c`` (0-255 scale).
"""

import math
from dataclasses import dataclass

import numpy as np
from scipy.spatial.distance import cdist
from scipy.special import logsumexp, softmax
from sklearn.base import BaseEstimator

from ._validation import DimensionError, check_grid3, check_label_map, check_simplex

THETA_MAX = -math.log(1e-3)
COST_FLOOR = 1e-12
EXACT_PIXEL_CAP = 16384
# above this many pixels the exact kernel is recomputed in row blocks
DENSE_CACHE_PIXELS = 2500
_BLOCK_ROWS = 512
_LOG_TINY = -700.0


@dataclass(frozen=True)
class PairwiseParams:
    """Weights and bandwidths of the two Gaussian pairwise kernels."""

    w_app: float = 5.0
    theta_a: float = 30.0
    theta_b: float = 13.0
    w_smooth: float = 3.0
    theta_g: float = 3.0

    def __post_init__(self):
        if self.w_app < 0 or self.w_smooth < 0:
            raise ValueError("kernel weights must be non-negative")
        if min(self.theta_a, self.theta_b, self.theta_g) <= 0:
            raise ValueError("kernel bandwidths must be positive")


class RegionPartition:
    """Disjoint cover of the pixel grid, ids dense in ``[0, region_count)``."""

    def __init__(self, ids):
        ids = check_label_map(ids, name="region ids")
        present = np.unique(ids)
        if present[-1] != len(present) - 1:
            raise ValueError("region ids must be dense in [0, region_count); use RegionPartition.from_labels")
        self.ids = ids
        self.region_count = len(present)
        self.sizes = np.bincount(ids.ravel(), minlength=self.region_count)

    @classmethod
    def from_labels(cls, labels):
        """Renumber arbitrary non-negative labels densely, keeping their order."""
        labels = np.asarray(labels)
        _, inverse = np.unique(labels, return_inverse=True)
        return cls(inverse.reshape(labels.shape))

    @property
    def shape(self):
        return self.ids.shape

    def __repr__(self):
        return f"RegionPartition(shape={self.shape}, region_count={self.region_count})"


def unary_from_probs(probs, mode="softmax"):
    """Per-pixel label costs from a probability stack.

    ``mode="softmax"`` takes the negative log of a softmax over the
    probabilities themselves, so costs differ by at most 1 between labels.
    ``mode="log"`` uses ``-log p`` (floored at 1e-12) instead.
    """
    probs = check_grid3(probs, "probs")
    if mode == "softmax":
        return logsumexp(probs, axis=0, keepdims=True) - probs
    if mode == "log":
        return -np.log(np.maximum(probs, COST_FLOOR))
    raise ValueError(f"unknown unary mode {mode!r}")


def region_costs(probs, regions):
    """Cost table (region_count, L) of labelling a whole region with one label.

    ``cost[s, l] = -log(mean of probs[l] over region s)``, the mean floored at 1e-12.
    """
    probs = check_grid3(probs, "probs")
    if probs.shape[1:] != regions.shape:
        raise DimensionError(f"regions {regions.shape} and probs {probs.shape[1:]} differ in size")
    flat = probs.reshape(probs.shape[0], -1)
    ids = regions.ids.ravel()
    sums = np.stack([np.bincount(ids, weights=row, minlength=regions.region_count) for row in flat], axis=1)
    mean = sums / regions.sizes[:, None]
    return -np.log(np.maximum(mean, COST_FLOOR))


def _pixel_features(image):
    _, h, w = image.shape
    yy, xx = np.mgrid[0:h, 0:w]
    pos = np.stack([yy.ravel(), xx.ravel()], axis=1).astype(np.float64)
    col = image.reshape(image.shape[0], -1).T
    return pos, col


class PairwiseKernel:
    """Applies the summed Gaussian kernel (zero diagonal) to per-pixel fields.

    Exact mode evaluates every pixel pair; the matrix is cached when small and
    rebuilt in row blocks otherwise. Approximate mode truncates each Gaussian
    to a square window of radius three bandwidths.
    """

    def __init__(self, image, params, approx=False):
        image = check_grid3(image, "image")
        self.shape = image.shape[1:]
        self.n = self.shape[0] * self.shape[1]
        self.params = params
        self.approx = approx
        if not approx and self.n > EXACT_PIXEL_CAP:
            raise DimensionError(
                f"{self.n} pixels exceed the exact-mode cap of {EXACT_PIXEL_CAP}; request approximate mode"
            )
        self._image = image
        self._pos, self._col = _pixel_features(image)
        self._dense = None
        if not approx and self.n <= DENSE_CACHE_PIXELS:
            self._dense = self._rows(0, self.n)
        self._rowsum = None

    def _rows(self, start, stop):
        p = self.params
        dp = cdist(self._pos[start:stop], self._pos, "sqeuclidean")
        k = np.zeros_like(dp)
        if p.w_app:
            dc = cdist(self._col[start:stop], self._col, "sqeuclidean")
            k += p.w_app * np.exp(-dp / (2 * p.theta_a**2) - dc / (2 * p.theta_b**2))
        if p.w_smooth:
            k += p.w_smooth * np.exp(-dp / (2 * p.theta_g**2))
        idx = np.arange(start, stop)
        k[idx - start, idx] = 0.0
        return k

    def matrix(self):
        """Dense (N, N) kernel; exact mode only."""
        if self.approx:
            raise ValueError("the approximate kernel has no dense matrix")
        if self._dense is not None:
            return self._dense
        return self._rows(0, self.n)

    def apply(self, fields):
        """``out[l, i] = sum_{j != i} k(i, j) fields[l, j]`` for fields of shape (L, N)."""
        fields = np.asarray(fields, dtype=np.float64)
        if self.approx:
            return self._apply_window(fields)
        if self._dense is not None:
            return fields @ self._dense
        out = np.empty_like(fields)
        for start in range(0, self.n, _BLOCK_ROWS):
            stop = min(start + _BLOCK_ROWS, self.n)
            out[:, start:stop] = fields @ self._rows(start, stop).T
        return out

    def rowsum(self):
        if self._rowsum is None:
            self._rowsum = self.apply(np.ones((1, self.n)))[0]
        return self._rowsum

    def total_mass(self):
        """``sum_{i<j} k(i, j)``."""
        return 0.5 * float(self.rowsum().sum())

    def _apply_window(self, fields):
        p = self.params
        h, w = self.shape
        L = fields.shape[0]
        q = fields.reshape(L, h, w)
        img = self._image
        out = np.zeros_like(q)
        terms = []
        if p.w_app:
            terms.append(("app", min(math.ceil(3 * p.theta_a), max(h, w) - 1)))
        if p.w_smooth:
            terms.append(("smooth", min(math.ceil(3 * p.theta_g), max(h, w) - 1)))
        for kind, radius in terms:
            for dy in range(-radius, radius + 1):
                for dx in range(-radius, radius + 1):
                    if (dy == 0 and dx == 0) or abs(dy) >= h or abs(dx) >= w:
                        continue
                    ys, yd = _shift_slices(dy, h)
                    xs, xd = _shift_slices(dx, w)
                    d2 = float(dy * dy + dx * dx)
                    if kind == "app":
                        dc = ((img[:, ys, xs] - img[:, yd, xd]) ** 2).sum(axis=0)
                        wgt = p.w_app * np.exp(-d2 / (2 * p.theta_a**2) - dc / (2 * p.theta_b**2))
                    else:
                        wgt = p.w_smooth * math.exp(-d2 / (2 * p.theta_g**2))
                    out[:, ys, xs] += wgt * q[:, yd, xd]
        return out.reshape(L, -1)


def _shift_slices(d, n):
    # target pixels t and their neighbours t + d, both inside [0, n)
    if d >= 0:
        return slice(0, n - d), slice(d, n)
    return slice(-d, n), slice(0, n + d)


def _check_regions(regions, region_cost, shape, n_labels):
    if regions is None:
        return None
    if regions.shape != shape:
        raise DimensionError(f"regions {regions.shape} and unaries {shape} differ in size")
    if region_cost is None:
        raise ValueError("region_cost is required when regions are given (see region_costs)")
    region_cost = np.asarray(region_cost, dtype=np.float64)
    if region_cost.shape != (regions.region_count, n_labels):
        raise DimensionError(f"region_cost must be {(regions.region_count, n_labels)}, got {region_cost.shape}")
    return region_cost


def _region_message(q, ids, region_count, region_cost, theta_max):
    # expected region cost given x_i = l: the region is uniform with
    # probability prod_{j in s, j != i} Q_j(l)
    logq = np.full_like(q, _LOG_TINY)
    np.log(q, out=logq, where=q > 0)
    logq = np.maximum(logq, _LOG_TINY)
    per_region = np.stack([np.bincount(ids, weights=row, minlength=region_count) for row in logq])
    others = np.exp(np.minimum(per_region[:, ids] - logq, 0.0))
    cost = region_cost.T[:, ids]
    return cost * others + theta_max * (1.0 - others)


def mean_field_infer(
    unary,
    image,
    params=None,
    regions=None,
    region_cost=None,
    iters=10,
    theta_max=THETA_MAX,
    approx=False,
    kernel=None,
    callback=None,
):
    """Approximate marginals of the CRF by synchronous mean-field updates.

    Parameters
    ----------
    unary : array (L, H, W)
        Label costs, e.g. from :func:`unary_from_probs`.
    image : array (3, H, W)
        Colors on a 0-255 scale, used by the appearance kernel.
    params : PairwiseParams
    regions, region_cost : RegionPartition and its (S, L) cost table, optional
        Enables the region terms; build the table with :func:`region_costs`.
    iters : int
        Number of updates after the initialization ``Q ~ exp(-unary)``.
    kernel : PairwiseKernel, optional
        Prebuilt kernel for ``image``/``params``, to reuse across calls.
    callback : callable(iteration, Q), optional
        Called with the marginals after initialization and every update.

    Returns
    -------
    ndarray (L, H, W) of per-pixel marginals.
    """
    unary = check_grid3(unary, "unary")
    if iters < 0:
        raise ValueError(f"iters must be >= 0, got {iters}")
    L, h, w = unary.shape
    params = PairwiseParams() if params is None else params
    if kernel is None:
        image = check_grid3(image, "image")
        if image.shape[1:] != (h, w):
            raise DimensionError(f"image {image.shape[1:]} and unaries {(h, w)} differ in size")
        kernel = PairwiseKernel(image, params, approx=approx)
    elif kernel.shape != (h, w):
        raise DimensionError(f"kernel {kernel.shape} and unaries {(h, w)} differ in size")
    region_cost = _check_regions(regions, region_cost, (h, w), L)

    theta = unary.reshape(L, -1)
    pairwise_on = params.w_app > 0 or params.w_smooth > 0
    rowsum = kernel.rowsum() if pairwise_on else None
    ids = regions.ids.ravel() if regions is not None else None

    q = softmax(-theta, axis=0)
    if callback is not None:
        callback(0, q.reshape(L, h, w))
    for it in range(1, iters + 1):
        logits = -theta
        if pairwise_on:
            # sum_{l' != l} Q_j(l') = 1 - Q_j(l)
            logits = logits - (rowsum[None] - kernel.apply(q))
        if regions is not None:
            logits = logits - _region_message(q, ids, regions.region_count, region_cost, theta_max)
        q = softmax(logits, axis=0)
        if callback is not None:
            callback(it, q.reshape(L, h, w))
    return q.reshape(L, h, w)


def map_labeling(marginals):
    """Per-pixel argmax; ties go to the smaller label index."""
    marginals = check_simplex(marginals, atol=1e-6, name="marginals")
    return np.argmax(marginals, axis=0)


def gibbs_energy(labels, unary, image, params=None, regions=None, region_cost=None, theta_max=THETA_MAX, kernel=None):
    """Energy of a full labeling by direct summation over all pixel pairs."""
    unary = check_grid3(unary, "unary")
    L, h, w = unary.shape
    labels = check_label_map(labels, L)
    if labels.shape != (h, w):
        raise DimensionError(f"labels {labels.shape} and unaries {(h, w)} differ in size")
    params = PairwiseParams() if params is None else params
    if kernel is None:
        image = check_grid3(image, "image")
        if image.shape[1:] != (h, w):
            raise DimensionError(f"image {image.shape[1:]} and unaries {(h, w)} differ in size")
        kernel = PairwiseKernel(image, params)
    region_cost = _check_regions(regions, region_cost, (h, w), L)

    x = labels.ravel()
    n = x.size
    energy = float(unary.reshape(L, -1)[x, np.arange(n)].sum())

    onehot = np.zeros((L, n))
    onehot[x, np.arange(n)] = 1.0
    same = kernel.apply(onehot)[x, np.arange(n)]
    energy += 0.5 * float((kernel.rowsum() - same).sum())

    if regions is not None:
        ids = regions.ids.ravel()
        for s in range(regions.region_count):
            member = x[ids == s]
            if np.all(member == member[0]):
                energy += float(region_cost[s, member[0]])
            else:
                energy += theta_max
    return energy


class DenseCRF(BaseEstimator):
    """Estimator-style front end for mean-field smoothing of probability maps.

    ``predict_proba(probs, image, regions)`` returns marginals and ``predict``
    their argmax labeling. Region costs are derived from ``probs``.
    """

    def __init__(
        self,
        w_app=5.0,
        theta_a=30.0,
        theta_b=13.0,
        w_smooth=3.0,
        theta_g=3.0,
        iters=10,
        theta_max=THETA_MAX,
        unary="softmax",
        approx=False,
    ):
        self.w_app = w_app
        self.theta_a = theta_a
        self.theta_b = theta_b
        self.w_smooth = w_smooth
        self.theta_g = theta_g
        self.iters = iters
        self.theta_max = theta_max
        self.unary = unary
        self.approx = approx

    @property
    def pairwise_params(self):
        return PairwiseParams(self.w_app, self.theta_a, self.theta_b, self.w_smooth, self.theta_g)

    def fit(self, X=None, y=None):
        return self

    def __sklearn_is_fitted__(self):
        return True

    def make_kernel(self, image):
        return PairwiseKernel(image, self.pairwise_params, approx=self.approx)

    def predict_proba(self, probs, image, regions=None, kernel=None):
        probs = check_simplex(probs, atol=1e-6)
        cost = region_costs(probs, regions) if regions is not None else None
        return mean_field_infer(
            unary_from_probs(probs, self.unary),
            image,
            self.pairwise_params,
            regions=regions,
            region_cost=cost,
            iters=self.iters,
            theta_max=self.theta_max,
            approx=self.approx,
            kernel=kernel,
        )

    def predict(self, probs, image, regions=None, kernel=None):
        return map_labeling(self.predict_proba(probs, image, regions, kernel))
