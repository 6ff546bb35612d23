"""Label-invariant scoring, decoding and duration diagnostics."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np
from scipy.optimize import linear_sum_assignment
from scipy.special import logsumexp

from .exceptions import InvalidParameterError


def munkres(cost) -> Tuple[np.ndarray, float]:
    """Minimum-cost assignment for a (possibly rectangular) cost matrix.

    Rectangular inputs are padded with zero-cost dummy rows or columns.
    Returns ``perm`` with ``perm[i]`` the column assigned to row ``i`` (an
    index >= n_cols means a dummy) and the total cost.
    """
    cost = np.asarray(cost, dtype=float)
    if cost.ndim != 2:
        raise InvalidParameterError("cost must be a matrix")
    if not np.all(np.isfinite(cost)):
        raise InvalidParameterError("cost matrix has non-finite entries")
    r, c = cost.shape
    size = max(r, c)
    padded = np.zeros((size, size))
    padded[:r, :c] = cost
    rows, cols = linear_sum_assignment(padded)
    perm = np.empty(size, dtype=np.int64)
    perm[rows] = cols
    return perm[:r], float(padded[rows, cols].sum())


def _dense(labels):
    _, inv = np.unique(np.asarray(labels), return_inverse=True)
    return inv.ravel()


def confusion(z_true, z_est, weights=None) -> np.ndarray:
    """Co-occurrence (optionally time-weighted) of dense true and estimated labels."""
    a, b = _dense(z_true), _dense(z_est)
    ka, kb = (a.max() + 1 if a.size else 0), (b.max() + 1 if b.size else 0)
    flat = np.bincount(a * kb + b, weights=weights, minlength=ka * kb)
    return flat.reshape(ka, kb)


def hamming_matched(z_true, z_est) -> float:
    """Mismatch rate after the best one-to-one relabelling of ``z_est``."""
    z_true, z_est = np.asarray(z_true), np.asarray(z_est)
    if z_true.shape != z_est.shape:
        raise InvalidParameterError("sequences must have equal length")
    if z_true.size == 0:
        return 0.0
    overlap = confusion(z_true, z_est)
    _, best = munkres(-overlap)
    return float(1.0 - (-best) / z_true.size)


def min_expected_hamming(test_set: Sequence, reference_set: Sequence):
    """Test sequence with the smallest mean matched-Hamming distance to the references.

    Ties go to the lowest index.  Returns ``(index, sequence, scores)``.
    """
    if len(test_set) == 0 or len(reference_set) == 0:
        raise InvalidParameterError("test and reference sets must be non-empty")
    lengths = {len(x) for x in test_set} | {len(x) for x in reference_set}
    if len(lengths) != 1:
        raise InvalidParameterError("all sequences must share one length")
    scores = np.array([
        np.mean([hamming_matched(ref, cand) for ref in reference_set]) for cand in test_set
    ])
    idx = int(np.argmin(scores))
    return idx, np.asarray(test_set[idx]), scores


def predictive_loglik(y_loglik, pi, init=None) -> float:
    """log p(y) by the scaled forward recursion.

    ``y_loglik`` is the (T, L) matrix of per-step emission log-likelihoods
    under each state's parameters; ``init`` defaults to uniform.
    """
    ll = np.asarray(y_loglik, dtype=float)
    pi = np.asarray(pi, dtype=float)
    T, L = ll.shape
    if pi.shape != (L, L):
        raise InvalidParameterError("pi must be L x L")
    init = np.full(L, 1.0 / L) if init is None else np.asarray(init, dtype=float)
    if np.any(np.isnan(ll)) or np.any(ll == np.inf):
        raise InvalidParameterError("emission log-likelihood is NaN or +inf")
    total = 0.0
    alpha = init
    for t in range(T):
        top = ll[t].max()
        if t > 0:
            alpha = alpha @ pi
        alpha = alpha * np.exp(ll[t] - top)
        norm = alpha.sum()
        if not norm > 0:
            return -np.inf
        total += np.log(norm) + top
        alpha = alpha / norm
    return float(total)


def brute_force_loglik(y_loglik, pi, init) -> float:
    """Enumerate every path; only for tiny problems (used as a test oracle)."""
    import itertools

    ll = np.asarray(y_loglik, dtype=float)
    T, L = ll.shape
    terms = []
    for path in itertools.product(range(L), repeat=T):
        lp = np.log(init[path[0]]) + ll[0, path[0]]
        for t in range(1, T):
            lp += np.log(pi[path[t - 1], path[t]]) + ll[t, path[t]]
        terms.append(lp)
    return float(logsumexp(terms))


@dataclass
class SegmentList:
    """Labelled half-open intervals ``[start, end)`` plus excluded intervals."""

    segments: List[Tuple[float, float, int]]
    mask: List[Tuple[float, float]] = field(default_factory=list)

    def __post_init__(self):
        self.segments = sorted((float(s), float(e), int(l)) for s, e, l in self.segments)
        for s, e, _ in self.segments:
            if not e > s:
                raise InvalidParameterError(f"segment end {e} must exceed start {s}")
        for (s0, e0, _), (s1, _, _) in zip(self.segments, self.segments[1:]):
            if s1 < e0:
                raise InvalidParameterError("segments overlap")
        self.mask = sorted((float(s), float(e)) for s, e in self.mask)

    @classmethod
    def from_labels(cls, labels, times=None, mask=None):
        """Merge runs of equal labels; ``times`` gives the T+1 frame boundaries."""
        labels = np.asarray(labels)
        times = np.arange(labels.size + 1, dtype=float) if times is None else np.asarray(times)
        segs = []
        start = 0
        for t in range(1, labels.size + 1):
            if t == labels.size or labels[t] != labels[start]:
                segs.append((times[start], times[t], int(labels[start])))
                start = t
        return cls(segs, mask or [])


def _label_at(segs, points):
    starts = np.array([s for s, _, _ in segs])
    ends = np.array([e for _, e, _ in segs])
    labels = np.array([l for _, _, l in segs])
    idx = np.searchsorted(starts, points, side="right") - 1
    ok = (idx >= 0) & (points < ends[np.clip(idx, 0, None)])
    out = np.full(points.shape, -1, dtype=np.int64)
    out[ok] = labels[idx[ok]]
    return out


def der(ref: SegmentList, hyp: SegmentList) -> float:
    """Time-weighted error after the best one-to-one speaker mapping.

    Scored time is the reference-covered time outside the mask.  Hypothesis
    silence inside scored time counts as error.
    """
    if ref.mask != hyp.mask:
        raise InvalidParameterError("reference and hypothesis masks differ")
    bounds = {b for s, e, _ in ref.segments + hyp.segments for b in (s, e)}
    bounds |= {b for s, e in ref.mask for b in (s, e)}
    edges = np.array(sorted(bounds))
    if edges.size < 2:
        return 0.0
    mids = 0.5 * (edges[:-1] + edges[1:])
    widths = np.diff(edges)
    keep = _label_at(ref.segments, mids) >= 0
    for s, e in ref.mask:
        keep &= ~((mids >= s) & (mids < e))
    r = _label_at(ref.segments, mids)[keep]
    h = _label_at(hyp.segments, mids)[keep]
    w = widths[keep]
    total = w.sum()
    if total == 0:
        return 0.0
    ru, ri = np.unique(r, return_inverse=True)
    hu, hi = np.unique(h, return_inverse=True)
    overlap = np.zeros((ru.size, hu.size))
    np.add.at(overlap, (ri, hi), w)
    silent = np.flatnonzero(hu == -1)
    if silent.size:
        overlap[:, silent] = 0.0
    _, best = munkres(-overlap)
    return float(1.0 - (-best) / total)


def frame_der(z_ref, z_hyp, mask=None) -> float:
    """Frame-level error rate after optimal mapping, skipping masked frames."""
    z_ref, z_hyp = np.asarray(z_ref), np.asarray(z_hyp)
    if z_ref.shape != z_hyp.shape:
        raise InvalidParameterError("sequences must have equal length")
    if mask is not None:
        mask = np.asarray(mask, dtype=bool)
        if mask.shape != z_ref.shape:
            raise InvalidParameterError("mask length mismatch")
        z_ref, z_hyp = z_ref[~mask], z_hyp[~mask]
    return hamming_matched(z_ref, z_hyp)


def run_lengths(z) -> np.ndarray:
    z = np.asarray(z)
    if z.size == 0:
        raise InvalidParameterError("empty sequence")
    change = np.flatnonzero(np.diff(z) != 0) + 1
    edges = np.r_[0, change, z.size]
    return np.diff(edges)


def duration_stats(z, max_len: Optional[int] = None):
    """Run-length histogram and the geometric maximum-likelihood rate.

    Returns ``(hist, p_hat)`` where ``hist[d]`` counts runs of length ``d``.
    """
    runs = run_lengths(z)
    size = int(runs.max() if max_len is None else max_len) + 1
    hist = np.bincount(np.minimum(runs, size - 1), minlength=size)
    return hist, float(runs.size / runs.sum())


def occupied_states(z, threshold: float = 0.01) -> int:
    """Number of labels holding more than ``threshold`` of the sequence."""
    z = np.asarray(z)
    if z.size == 0:
        return 0
    _, counts = np.unique(z, return_counts=True)
    return int(np.count_nonzero(counts > threshold * z.size))
