"""Empirical verification layer.

Box-counting dimension estimates for the range and graph of sampled fields,
variogram-style recovery of the componentwise Holder exponents, and the
Monte Carlo covariance-scaling check that ties the synthesized fields back
to the anisotropic scaling relation.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import matcalc
from .anisotropy import decompose, homogeneous_phi
from .errors import ValidationError
from .exponents import ScalingPair
from .synthesis import (
    FieldSample,
    HarmonizableSynthesizer,
    MovingAverageSynthesizer,
)

_MIN_POINTS = 1000
_MIN_WINDOW = 4
_MIN_OCCUPANCY = 4.0
_MAX_SCALE_EXP = 12


@dataclass(frozen=True)
class PowerLawFit:
    slope: float
    intercept: float
    stderr: float
    window: tuple      # (first, last) indices into the scale list, inclusive
    r_squared: float


@dataclass(frozen=True)
class BoxCountCurve:
    """Occupied-box counts against dyadic scales plus the fitted power law."""

    scales: np.ndarray   # decreasing box sizes
    counts: np.ndarray
    fit: PowerLawFit

    @property
    def dimension(self):
        return self.fit.slope


@dataclass(frozen=True)
class HolderReport:
    """Variogram regression result for one field component."""

    component: int
    exponent: float
    stderr: float
    max_ratio: float     # sup |dX| / tau^(lambda - 0.05) over sampled pairs
    n_classes: int
    tau_range: tuple


def _normalize_unit_cube(pts):
    lo = pts.min(axis=0)
    span = pts.max(axis=0) - lo
    span[span == 0.0] = 1.0
    return (pts - lo) / span


def _count_boxes(unit_pts, eps):
    nbox = int(round(1.0 / eps))
    idx = np.minimum((unit_pts / eps).astype(np.int64), nbox - 1)
    key = idx[:, 0].copy()
    for col in range(1, idx.shape[1]):
        key = key * nbox + idx[:, col]
    return int(np.unique(key).size)


def _fit_window(log_inv_eps, log_counts, eligible):
    best = None
    n = int(eligible.sum())
    idxs = np.nonzero(eligible)[0]
    for i in range(n):
        for j in range(i + _MIN_WINDOW - 1, n):
            sel = idxs[i:j + 1]
            x = log_inv_eps[sel]
            y = log_counts[sel]
            xm = x - x.mean()
            denom = float(xm @ xm)
            slope = float(xm @ y) / denom
            intercept = float(y.mean() - slope * x.mean())
            resid = y - slope * x - intercept
            ss_res = float(resid @ resid)
            ss_tot = float(((y - y.mean()) ** 2).sum())
            r2 = 1.0 - ss_res / ss_tot if ss_tot > 0 else 0.0
            dof = max(len(sel) - 2, 1)
            stderr = np.sqrt(ss_res / dof / denom)
            cand = (r2, len(sel), -sel[0], slope, intercept, stderr, sel)
            if best is None or cand[:3] > best[:3]:
                best = cand
    r2, _, _, slope, intercept, stderr, sel = best
    return PowerLawFit(
        slope=slope, intercept=intercept, stderr=float(stderr),
        window=(int(sel[0]), int(sel[-1])), r_squared=float(r2),
    )


def box_count(points, scales, normalize=True):
    """Count occupied axis-aligned boxes and fit log N against log(1/eps).

    ``scales`` must be decreasing dyadic box sizes.  The fitted window is
    the contiguous run of at least four scales maximizing R^2, after
    dropping scales whose occupancy (points per occupied box) falls below 4.
    """
    pts = np.asarray(points, dtype=float)
    if pts.ndim != 2:
        raise ValidationError("points must be a 2-d array")
    n = pts.shape[0]
    if n < _MIN_POINTS:
        raise ValidationError(f"need at least {_MIN_POINTS} points, got {n}")
    eps = np.asarray(scales, dtype=float)
    if eps.ndim != 1 or len(eps) < _MIN_WINDOW or np.any(np.diff(eps) >= 0):
        raise ValidationError("scales must be a decreasing list of at least 4 sizes")

    unit = _normalize_unit_cube(pts) if normalize else np.asarray(pts, dtype=float)
    counts = np.array([_count_boxes(unit, e) for e in eps], dtype=np.int64)

    occupancy = n / counts
    eligible = occupancy >= _MIN_OCCUPANCY
    # occupancy is non-increasing as eps shrinks; keep the coarse prefix
    if not np.all(eligible):
        first_bad = int(np.argmin(eligible))
        eligible[first_bad:] = False
    if eligible.sum() < _MIN_WINDOW:
        raise ValidationError(
            f"fewer than {_MIN_WINDOW} usable scales after the occupancy rule"
        )
    fit = _fit_window(np.log(1.0 / eps), np.log(counts.astype(float)), eligible)
    return BoxCountCurve(scales=eps, counts=counts, fit=fit)


def _auto_scales(unit_pts, k_min=2, k_max=_MAX_SCALE_EXP):
    n = unit_pts.shape[0]
    eps_list = []
    for k in range(k_min, k_max + 1):
        eps = 2.0 ** -k
        c = _count_boxes(unit_pts, eps)
        if n / c < _MIN_OCCUPANCY and len(eps_list) >= _MIN_WINDOW:
            break
        eps_list.append(eps)
        if n / c < _MIN_OCCUPANCY:
            break
    return np.array(eps_list)


def range_dimension_estimate(field):
    """Box-counting estimate for the dimension of the value set {X(x)}."""
    vals = np.asarray(field.values, dtype=float)
    unit = _normalize_unit_cube(vals)
    scales = _auto_scales(unit)
    return box_count(unit, scales, normalize=False)


def graph_dimension_estimate(field):
    """Box-counting estimate for the graph {(x, X(x))} in R^(d+m).

    Each coordinate block (spatial coordinates, field values) is scaled by
    its own overall range before counting, since box counting is not
    affine-invariant.
    """
    pts = np.asarray(field.points, dtype=float)
    vals = np.asarray(field.values, dtype=float)
    if pts.shape[1] not in (1, 2):
        raise ValidationError("graph estimation supports d in {1, 2}")

    def block_scale(block):
        lo = block.min(axis=0)
        extent = float((block.max(axis=0) - lo).max())
        return (block - lo) / (extent if extent > 0 else 1.0)

    graph = np.concatenate([block_scale(pts), block_scale(vals)], axis=1)
    scales = _auto_scales(graph)
    return box_count(graph, scales, normalize=False)


def _diag_or_raise(D):
    off = D - np.diag(np.diagonal(D))
    if np.abs(off).max() > 1e-12:
        raise ValidationError(
            "holder_exponent requires a diagonal scaling operator D: for "
            "non-diagonal canonical forms the logarithmic modulus corrections "
            "contaminate the component slopes"
        )
    return np.diagonal(D)


def holder_exponent(field, pair, decomp=None, component=0):
    """Variogram regression of one component against the radius quasi-metric.

    Builds dyadic lag classes along the grid axes, regresses the log of the
    root mean square increment on log tau(lag), and reports the slope (the
    Holder exponent of the component), its standard error and the sup-ratio
    statistic of the 0.05-weakened modulus bound.
    """
    if field.grid is None:
        raise ValidationError("holder_exponent needs a grid-based sample")
    if field.grid.n_nodes < 2 ** 10:
        raise ValidationError("holder_exponent needs at least 2^10 grid nodes")
    lam_diag = _diag_or_raise(pair.D)
    m = pair.m
    if not 0 <= component < m:
        raise ValidationError(f"component {component} outside 0..{m - 1}")
    if decomp is None:
        decomp = decompose(pair.E)
    lam_ref = float(lam_diag[component])

    grid = field.grid
    shape = grid.points_per_axis
    V = field.values.reshape(*shape, m)[..., component]

    lag_vectors = []
    diffs = []
    for axis in range(grid.d):
        n_i = shape[axis]
        if n_i < 8:
            continue
        spacing = 1.0 / (n_i - 1)
        step = 1
        while step <= n_i // 4:
            sl_hi = [slice(None)] * grid.d
            sl_lo = [slice(None)] * grid.d
            sl_hi[axis] = slice(step, None)
            sl_lo[axis] = slice(None, -step)
            inc = V[tuple(sl_hi)] - V[tuple(sl_lo)]
            vec = np.zeros(grid.d)
            vec[axis] = step * spacing
            lag_vectors.append(vec)
            diffs.append(inc.ravel())
            step *= 2

    if not lag_vectors:
        raise ValidationError("insufficient lag classes for the regression")
    taus = homogeneous_phi(decomp, pair.E, np.asarray(lag_vectors))

    tau_lo = 0.0
    params = field.meta.params if field.meta is not None else {}
    if "j_max" in params:
        tau_lo = 4.0 * 2.0 ** (-float(params["j_max"]))
    keep = taus >= tau_lo
    if keep.sum() < 4:
        raise ValidationError("insufficient lag classes after the frequency cutoff")

    log_tau = np.log(taus[keep])
    moments = np.array([np.sqrt(np.mean(diffs[i] ** 2))
                        for i in np.nonzero(keep)[0]])
    x = log_tau - log_tau.mean()
    y = np.log(moments)
    denom = float(x @ x)
    slope = float(x @ y) / denom
    resid = y - slope * log_tau - (y.mean() - slope * log_tau.mean())
    stderr = float(np.sqrt(resid @ resid / max(len(y) - 2, 1) / denom))

    ratios = [
        np.abs(diffs[i]).max() / taus[i] ** (lam_ref - 0.05)
        for i in np.nonzero(keep)[0]
    ]
    return HolderReport(
        component=int(component),
        exponent=slope,
        stderr=stderr,
        max_ratio=float(np.max(ratios)),
        n_classes=int(keep.sum()),
        tau_range=(float(taus[keep].min()), float(taus[keep].max())),
    )


def covariance_scaling_check(pair, decomp_star=None, c_values=(0.5, 2.0),
                             n_samples=20000, seed=0, base_points=None,
                             freq=None, truncation=None):
    """Max relative Frobenius error of Cov[X(c^E x)] against c^D Cov[X(x)] c^D*.

    Draws ``n_samples`` realizations at the base points and their scaled
    images and compares raw second-moment matrices.  The fields are
    mean-zero, so no centering is applied.
    """
    if not isinstance(pair, ScalingPair):
        raise ValidationError("expected a ScalingPair")
    if n_samples < 10 ** 4:
        raise ValidationError("covariance scaling needs at least 10^4 samples")
    d = pair.d
    if base_points is None:
        base_points = np.outer([0.25, 0.5, 1.0], np.ones(d))
    base = np.atleast_2d(np.asarray(base_points, dtype=float))
    cs = [float(c) for c in c_values]
    powers = {c: matcalc.matrix_power(pair.E, c) for c in cs}

    pts = [base]
    for c in cs:
        pts.append(base @ powers[c].T)
    pts = np.concatenate(pts, axis=0)

    if pair.representation == "harmonizable":
        synth = HarmonizableSynthesizer(pair, decomp_star=decomp_star, freq=freq)
        real = synth.realizations(pts, n_samples, seed)
    else:
        synth = MovingAverageSynthesizer(pair, points=pts, truncation=truncation)
        real = synth.realizations(n_samples, seed)

    covs = np.einsum("spi,spj->pij", real, real) / n_samples
    n_b = base.shape[0]
    worst = 0.0
    for ci, c in enumerate(cs):
        cD = matcalc.matrix_power(pair.D, c)
        for b in range(n_b):
            target = covs[(ci + 1) * n_b + b]
            pred = cD @ covs[b] @ cD.T
            err = np.linalg.norm(target - pred) / np.linalg.norm(pred)
            worst = max(worst, float(err))
    return worst
