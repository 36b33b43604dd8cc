"""The PRAM perturbation and marginal frequency recovery."""

from __future__ import annotations

import warnings
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from . import rng
from .core import (
    INVERSION_TOL,
    Dataset,
    DimensionMismatch,
    FrequencyVector,
    LevelOutOfRange,
    OutOfSimplexWarning,
    PramError,
    ReversionMatrix,
    TransitionMatrix,
)


class ZeroMarginal(PramError):
    code = "ZeroMarginal"


def _cumulative(p: TransitionMatrix) -> np.ndarray:
    cum = np.cumsum(p.entries, axis=0)
    cum[-1, :] = 1.0
    return cum


def draw_levels(levels: np.ndarray, p: TransitionMatrix, seed: int, start: int = 0) -> np.ndarray:
    """Perturb integer codes using the record stream offset by ``start``."""
    levels = np.asarray(levels, dtype=np.intp)
    u = rng.record_uniforms(seed, start, start + levels.shape[0])
    thresholds = _cumulative(p)[:, levels].T  # (n, K)
    out = (u[:, None] >= thresholds).sum(axis=1)
    return np.minimum(out, p.k - 1).astype(np.intp)


def perturb_levels(levels, p: TransitionMatrix, seed: int, workers: int = 1) -> np.ndarray:
    levels = np.asarray(levels)
    if levels.size and (levels.min() < 0 or levels.max() >= p.k):
        raise LevelOutOfRange(f"sensitive levels must lie in 0..{p.k - 1}")
    n = levels.shape[0]
    if workers <= 1 or n <= rng.RECORD_BLOCK:
        return draw_levels(levels, p, seed)
    starts = range(0, n, rng.RECORD_BLOCK)
    with ThreadPoolExecutor(max_workers=workers) as pool:
        parts = pool.map(
            lambda s: draw_levels(levels[s:s + rng.RECORD_BLOCK], p, seed, start=s), starts
        )
        return np.concatenate(list(parts))


def perturb(data: Dataset, p: TransitionMatrix, seed: int, workers: int = 1) -> Dataset:
    """Apply PRAM to the original sensitive column of ``data``.

    Each record's released level is drawn independently from column
    ``s_i`` of ``p``; covariates are left untouched. The output is a pure
    function of ``(data, p, seed)`` regardless of ``workers``.
    """
    if data.k != p.k:
        raise DimensionMismatch(f"dataset has K={data.k}, matrix has K={p.k}")
    original = data.sensitive("original")
    return data.with_perturbed(perturb_levels(original, p, seed, workers))


def recover_frequencies(observed: FrequencyVector, q: ReversionMatrix) -> FrequencyVector:
    """Unbiased moment recovery ``Q2 @ observed`` of the true-level frequencies.

    The result sums to one but can leave the simplex for noisy inputs; it is
    returned raw with ``out_of_simplex`` set, see :func:`project_simplex`.
    """
    if observed.k != q.k:
        raise DimensionMismatch(f"observed has K={observed.k}, reversion matrix has K={q.k}")
    est = q.entries @ observed.probs
    outside = bool(np.any(est < -INVERSION_TOL) or np.any(est > 1 + INVERSION_TOL))
    if outside:
        warnings.warn("recovered frequencies fall outside [0, 1]", OutOfSimplexWarning, stacklevel=2)
    return FrequencyVector(est, tag="raw-recovered", out_of_simplex=outside)


def project_simplex(v) -> np.ndarray:
    """Euclidean projection onto the probability simplex (sort-based)."""
    v = np.asarray(v, dtype=float)
    u = np.sort(v)[::-1]
    css = np.cumsum(u) - 1.0
    idx = np.arange(1, v.size + 1)
    rho = np.flatnonzero(u - css / idx > 0)[-1]
    theta = css[rho] / (rho + 1.0)
    return np.maximum(v - theta, 0.0)


def reversion_probabilistic(p: TransitionMatrix, weights) -> np.ndarray:
    """Bayes-rule reversion matrix ``Q1``.

    Entry ``(k, i)`` is ``p[i, k] * w[k] / sum_j p[i, j] * w[j]``: the
    posterior of true level ``k`` given released level ``i`` under the
    marginal ``w`` of the true variable. Columns are probability vectors.
    Only used for diagnostics; estimation goes through ``P^-1``.
    """
    w = np.asarray(weights, dtype=float)
    if w.shape != (p.k,):
        raise DimensionMismatch(f"expected {p.k} marginal probabilities, got shape {w.shape}")
    if np.any(w <= 0.0):
        raise ZeroMarginal("reversion needs strictly positive marginal probabilities")
    joint = p.entries * w[None, :]  # joint[i, k] = Pr(S*=i, S=k)
    denom = joint.sum(axis=1)
    if np.any(denom <= 0.0):
        raise ZeroMarginal("some released level has zero probability")
    return (joint / denom[:, None]).T
