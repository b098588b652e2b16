"""Gradient-landscape instrumentation.

Collects per-step scalar traces (squared gradient norms, sharpness
increment, flatness norm), windowed L2 distances between each tracked
gradient series and its counterpart ``window`` entries earlier, pooled
correction-ratio samples, and Q-Q data for normality checks.  Recording
only reads the per-step gradient bundle, so it can never perturb an
optimizer trajectory.
"""

from __future__ import annotations

import math
from collections import deque
from statistics import NormalDist

import numpy as np

from .vectors import l2_norm

RATIO_EPS = 1e-12

#: gradient series tracked for windowed distances, bundle attribute names
TRACKED_SERIES = ("grad", "proxy_grad", "sharp_ortho", "flat_ortho")


def correction_ratio(num: np.ndarray, den: np.ndarray) -> np.ndarray:
    """Elementwise log((|num| + eps) / (|den| + eps)), natural log.

    The epsilon guards both sides, so zero entries stay finite; for
    entries well above eps this is log|num_i/den_i|.
    """
    if num.shape != den.shape:
        raise ValueError(f"dimension mismatch: {num.shape} vs {den.shape}")
    return np.log((np.abs(num) + RATIO_EPS) / (np.abs(den) + RATIO_EPS))


def kstep_distance(series, window: int) -> list[float]:
    """d_j = |x_j - x_{j-window}| for j >= window over a vector series."""
    if window < 1:
        raise ValueError("window must be >= 1")
    items = list(series)
    return [l2_norm(items[j] - items[j - window]) for j in range(window, len(items))]


def qq_export(scalars) -> tuple[np.ndarray, np.ndarray]:
    """Standardized sample quantiles against normal plotting positions.

    Samples are centered and scaled by their own std, sorted, and paired
    with inverse-normal-CDF values at positions (i - 0.5)/n.
    """
    x = np.asarray(list(scalars), dtype=np.float64)
    n = len(x)
    if n < 10:
        raise ValueError(f"need at least 10 samples for a Q-Q export, got {n}")
    std = float(np.std(x))
    if std == 0.0:
        raise ValueError("constant samples: standardization undefined")
    sample_q = np.sort((x - np.mean(x)) / std)
    nd = NormalDist()
    normal_q = np.array([nd.inv_cdf((i + 0.5) / n) for i in range(n)])
    return sample_q, normal_q


class TraceBuffer:
    """Per-run recording sink for gradient bundles.

    Scalar series and windowed distances are always kept; the full vector
    history per series only with ``keep_vectors=True`` (tests use it, the
    CLI does not).  Distance entries for a series appear once it has
    ``window + 1`` samples.
    """

    def __init__(self, window: int = 5, keep_vectors: bool = False):
        if window < 1:
            raise ValueError("window must be >= 1")
        self.window = window
        self.keep_vectors = keep_vectors
        self.step = 0
        # scalar rows: (step, g_sq, g0_sq, sharp_increment, flat_norm,
        #               sharp_triggered, flat_triggered, cached)
        self.scalar_rows: list[tuple] = []
        self._recent = {name: deque(maxlen=window + 1) for name in TRACKED_SERIES}
        self._counts = {name: 0 for name in TRACKED_SERIES}
        self.distances: list[tuple[int, str, float]] = []
        self.vectors: dict[str, list] = {name: [] for name in TRACKED_SERIES}
        # pooled correction-ratio coordinates per tracked pair
        self.ratio_pools: dict[str, list] = {
            "sharp_increment_vs_grad": [],
            "flat_vs_sam": [],
        }

    def _push(self, name: str, vec: np.ndarray) -> None:
        buf = self._recent[name]
        buf.append(vec)
        self._counts[name] += 1
        if self.keep_vectors:
            self.vectors[name].append(vec)
        if len(buf) == self.window + 1:
            self.distances.append((self.step, name, l2_norm(buf[-1] - buf[0])))

    def grad_sq_series(self) -> list[float]:
        return [row[1] for row in self.scalar_rows if row[1] is not None]

    def proxy_grad_sq_series(self) -> list[float]:
        return [row[2] for row in self.scalar_rows if row[2] is not None]

    def flat_norm_series(self) -> list:
        return [row[4] for row in self.scalar_rows]


def record_step(bundle, buf: TraceBuffer) -> TraceBuffer:
    """Append the present members of one gradient bundle."""
    g_sq = None if bundle.grad is None else l2_norm(bundle.grad) ** 2
    g0_sq = None if bundle.proxy_grad is None else l2_norm(bundle.proxy_grad) ** 2
    sharp_inc = (
        None
        if bundle.sam_grad is None or bundle.grad is None
        else l2_norm(bundle.sam_grad - bundle.grad)
    )
    flat_norm = None if bundle.flat_grad is None else l2_norm(bundle.flat_grad)
    buf.scalar_rows.append(
        (
            buf.step,
            g_sq,
            g0_sq,
            sharp_inc,
            flat_norm,
            int(bundle.sharp_triggered),
            int(bundle.flat_triggered),
            int(bundle.sharp_cached or bundle.flat_cached),
        )
    )
    for name in TRACKED_SERIES:
        vec = getattr(bundle, name)
        if vec is not None:
            buf._push(name, vec)
    if bundle.sam_grad is not None and bundle.grad is not None:
        buf.ratio_pools["sharp_increment_vs_grad"].append(
            correction_ratio(bundle.sam_grad - bundle.grad, bundle.grad)
        )
    if bundle.flat_grad is not None and bundle.sam_grad is not None:
        buf.ratio_pools["flat_vs_sam"].append(
            correction_ratio(bundle.flat_grad, bundle.sam_grad)
        )
    buf.step += 1
    return buf


def ratio_histogram(
    pool, bins: int = 48, lo: float = -12.0, hi: float = 12.0
) -> list[tuple[float, float, int]]:
    """Fixed-range histogram of pooled ratio coordinates; outliers clip
    into the end bins."""
    if not pool:
        return []
    values = np.clip(np.concatenate(pool), lo, math.nextafter(hi, -math.inf))
    counts, edges = np.histogram(values, bins=bins, range=(lo, hi))
    return [
        (float(edges[i]), float(edges[i + 1]), int(counts[i])) for i in range(bins)
    ]
