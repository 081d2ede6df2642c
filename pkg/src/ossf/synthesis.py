"""Gaussian field synthesis from the two stochastic-integral representations.

Harmonizable route (primary): X(x) = Re sum_c (e^{i<x, xi_c>} - 1)
psi(xi_c)^(-D - qI/2) zeta_c sqrt(vol_c), where psi is the polar radius with
respect to E* and the cells xi_c = 2^{jE*} eta tile dyadic annuli of a base
shell {1 <= psi(eta) < 2}.  The geometric lattice matches the field's own
scaling, so each annulus is resolved equally well and the covariance scaling
law holds exactly for dyadic factors up to truncation.

Moving-average route: X(x) = sum_c [phi(x - y_c)^(D - qI/2) -
phi(-y_c)^(D - qI/2)] g_c sqrt(vol_c) on a truncated lattice with dyadic
refinement near the kernel's singular loci (the origin and the evaluation
points); cells containing a singular point are skipped.

All noise comes from counter-based Philox streams: every deviate is a pure
function of (seed, stream, cell index), so results are independent of
evaluation order and bit-reproducible.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from numpy.random import Philox
from scipy.special import ndtri

from . import matcalc
from .anisotropy import SpectralDecomposition, decompose, polar_many
from .errors import DomainError, NumericError, ValidationError
from .exponents import ScalingPair

_MAX_GRID_NODES = 2 ** 24
_MAX_BASE_CELLS = 2 ** 20
_KERNEL_CHUNK_ELEMS = 2 ** 24  # complex entries held at once in kernel products
_MA_KERNEL_LIMIT = 2 ** 24


# ---------------------------------------------------------------------------
# Specs and sample container
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class GridSpec:
    """Rectangular grid on [0,1]^d including the origin, row-major node order."""

    points_per_axis: tuple

    def __post_init__(self):
        ppa = tuple(int(n) for n in self.points_per_axis)
        object.__setattr__(self, "points_per_axis", ppa)
        if not ppa or any(n < 1 for n in ppa):
            raise ValidationError("points_per_axis must be positive integers")
        total = math.prod(ppa)
        if total > _MAX_GRID_NODES:
            raise ValidationError(
                f"grid has {total} nodes, above the 2^24 desk-scale cap"
            )

    @property
    def d(self):
        return len(self.points_per_axis)

    @property
    def n_nodes(self):
        return math.prod(self.points_per_axis)

    def axis_coords(self, i):
        n = self.points_per_axis[i]
        return np.zeros(1) if n == 1 else np.linspace(0.0, 1.0, n)

    def nodes(self):
        axes = [self.axis_coords(i) for i in range(self.d)]
        mesh = np.meshgrid(*axes, indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=-1)


@dataclass(frozen=True)
class FrequencySpec:
    """Annular geometric frequency lattice parameters."""

    j_min: int = -12
    j_max: int = 8
    base_resolution: int = 16

    def __post_init__(self):
        if not (self.j_min < 0 < self.j_max):
            raise ValidationError("need j_min < 0 < j_max")
        if self.base_resolution < 4:
            raise ValidationError("base_resolution must be at least 4")


@dataclass(frozen=True)
class TruncationSpec:
    """Moving-average lattice: extent [-radius, radius]^d plus refinement depth."""

    radius: float = 8.0
    refine_levels: int = 3
    base_spacing: float = 0.25

    def __post_init__(self):
        if self.radius <= 0 or self.base_spacing <= 0:
            raise ValidationError("radius and base_spacing must be positive")
        if self.refine_levels < 0:
            raise ValidationError("refine_levels must be nonnegative")


@dataclass(frozen=True)
class FieldMeta:
    representation: str
    seed: int
    e_matrix: tuple
    d_matrix: tuple
    h: float
    params: dict
    fingerprint: str


@dataclass(frozen=True)
class FieldSample:
    """Sampled field values: one R^m vector per evaluation point."""

    points: np.ndarray
    values: np.ndarray
    meta: FieldMeta
    grid: GridSpec = None

    @property
    def d(self):
        return self.points.shape[1]

    @property
    def m(self):
        return self.values.shape[1]


def _matrix_to_tuple(M):
    return tuple(tuple(float(v) for v in row) for row in np.asarray(M))


def _make_meta(pair, seed, params):
    return FieldMeta(
        representation=pair.representation,
        seed=int(seed),
        e_matrix=_matrix_to_tuple(pair.E),
        d_matrix=_matrix_to_tuple(pair.D),
        h=float(pair.H),
        params=dict(params),
        fingerprint=pair.fingerprint(),
    )


# ---------------------------------------------------------------------------
# Counter-based Gaussian streams
# ---------------------------------------------------------------------------

_WORDS_PER_BLOCK = 4  # Philox-4x64 emits 4 words per counter block


def _to_uint64(x, name):
    v = int(x)
    if v < 0 or v >= 2 ** 64:
        raise DomainError(f"{name} must fit in an unsigned 64-bit integer")
    return v


def _uniforms(raw):
    return ((raw >> np.uint64(11)).astype(np.float64) + 0.5) * 2.0 ** -53


class GaussianCellStream:
    """Deterministic per-cell Gaussian deviates from a Philox counter stream.

    Cell ``c`` owns the raw words [c * blocks * 4, (c+1) * blocks * 4) of the
    stream keyed by (seed, stream), where blocks = ceil(words_per_cell / 4);
    deviates are inverse-CDF transforms of positional uniforms, so any cell
    can be generated alone or in bulk with identical results.
    """

    def __init__(self, seed, words_per_cell, stream=0):
        self.seed = _to_uint64(seed, "seed")
        self.stream = _to_uint64(stream, "stream")
        if words_per_cell < 1:
            raise DomainError("words_per_cell must be positive")
        self.words_per_cell = int(words_per_cell)
        self.blocks_per_cell = -(-self.words_per_cell // _WORDS_PER_BLOCK)

    def _key(self):
        return np.array([self.seed, self.stream], dtype=np.uint64)

    def raw_block(self, n_cells, first_cell=0):
        """Raw words for cells [first_cell, first_cell + n_cells)."""
        bg = Philox(key=self._key())
        if first_cell:
            bg.advance(first_cell * self.blocks_per_cell)
        total = n_cells * self.blocks_per_cell * _WORDS_PER_BLOCK
        raw = bg.random_raw(total).reshape(n_cells, -1)
        return raw[:, : self.words_per_cell]

    def normals(self, n_cells, first_cell=0):
        """(n_cells, words_per_cell) standard normal deviates."""
        return ndtri(_uniforms(self.raw_block(n_cells, first_cell)))

    def complex_normals(self, n_cells, first_cell=0):
        """(n_cells, words_per_cell // 2) standard complex Gaussians.

        Components are (N(0,1) + i N(0,1)) / sqrt(2): unit variance overall.
        """
        z = self.normals(n_cells, first_cell)
        half = self.words_per_cell // 2
        re = z[:, : 2 * half : 2]
        im = z[:, 1 : 2 * half : 2]
        return (re + 1j * im) / np.sqrt(2.0)


def gaussian_stream(seed, cell_index, count=1, kind="real", stream=0):
    """Gaussian deviates owned by one cell of the (seed, stream) noise field.

    ``kind`` selects ``count`` real standard normals or ``count`` standard
    complex Gaussians; repeated calls with the same arguments return the
    same values regardless of what else was generated.
    """
    if kind not in ("real", "complex"):
        raise ValidationError("kind must be 'real' or 'complex'")
    words = count if kind == "real" else 2 * count
    cs = GaussianCellStream(seed, words_per_cell=words, stream=stream)
    cell = int(cell_index)
    if cell < 0:
        raise DomainError("cell_index must be nonnegative")
    if kind == "real":
        return cs.normals(1, first_cell=cell)[0]
    return cs.complex_normals(1, first_cell=cell)[0]


# ---------------------------------------------------------------------------
# Scalar-base matrix powers
# ---------------------------------------------------------------------------

def _scalar_matrix_powers(bases, expo):
    """bases_i^expo for positive scalars and one fixed matrix exponent.

    Returns (n, m, m).  Fast paths: 1x1 exponent and diagonal exponent.
    """
    b = np.asarray(bases, dtype=float)
    logs = np.log(b)
    m = expo.shape[0]
    if m == 1:
        return np.exp(logs * expo[0, 0])[:, None, None]
    if np.count_nonzero(expo - np.diag(np.diagonal(expo))) == 0:
        out = np.zeros((len(b), m, m))
        idx = np.arange(m)
        out[:, idx, idx] = np.exp(np.outer(logs, np.diagonal(expo)))
        return out
    return matcalc.expm_multi(logs[:, None, None] * expo)


def _check_pair(pair, representation):
    if not isinstance(pair, ScalingPair):
        raise ValidationError("expected a ScalingPair from validate_and_normalize")
    if pair.representation != representation:
        raise ValidationError(
            f"pair was validated for {pair.representation!r}, need {representation!r}"
        )


# ---------------------------------------------------------------------------
# Harmonizable synthesizer
# ---------------------------------------------------------------------------

def _unit_directions(d, n=4096, seed=20240812):
    if d == 1:
        return np.array([[1.0], [-1.0]])
    if d == 2:
        ang = np.linspace(0.0, 2 * np.pi, 720, endpoint=False)
        return np.stack([np.cos(ang), np.sin(ang)], axis=-1)
    rng = np.random.default_rng(seed)
    u = rng.standard_normal((n, d))
    u /= np.linalg.norm(u, axis=1, keepdims=True)
    return np.concatenate([u, np.eye(d), -np.eye(d)], axis=0)


class HarmonizableSynthesizer:
    """Frequency-lattice synthesizer for the harmonizable representation.

    Precomputes the annular lattice, the polar radii of its cells and the
    m x m weight matrices psi^(-D - qI/2) sqrt(vol); sampling then reduces
    to one batch of complex Gaussians and a chunked matrix product.
    """

    def __init__(self, pair, decomp_star=None, freq=None):
        _check_pair(pair, "harmonizable")
        self.pair = pair
        self.freq = freq if freq is not None else FrequencySpec()
        E_star = pair.E.T.copy()
        if decomp_star is None:
            decomp_star = decompose(E_star)
        elif not np.allclose(decomp_star.E, E_star, atol=1e-12):
            raise ValidationError("decomposition must belong to the adjoint matrix E*")
        self.decomp_star = decomp_star
        self._build_lattice()

    def _build_lattice(self):
        pair, freq, dec = self.pair, self.freq, self.decomp_star
        d = pair.d
        E_star = dec.E

        # Bounding box radius for the shell {psi < 2}: every x with
        # psi(x) <= 2 satisfies ||x|| <= max_tau ||tau^{E*}|| / min N(u).
        dirs = _unit_directions(d)
        nmin = float(np.min(_gauge(dec, dirs)))
        taus = np.exp(np.linspace(np.log(1e-3), np.log(2.0), 48))
        pows = matcalc.matrix_power_multi(E_star, taus)
        grow = max(np.linalg.norm(P, 2) for P in pows)
        radius = 1.1 * grow / nmin

        if freq.base_resolution ** d > _MAX_BASE_CELLS:
            raise ValidationError("base lattice too large for this dimension")
        spacing = 2.0 * radius / freq.base_resolution
        axis = -radius + spacing * (np.arange(freq.base_resolution) + 0.5)
        mesh = np.meshgrid(*([axis] * d), indexing="ij")
        centers = np.stack([m.ravel() for m in mesh], axis=-1)

        # Shell membership {1 <= psi < 2} through the monotone gauge:
        # psi(x) >= 1 iff N(x) >= 1 and psi(x) < 2 iff N(2^{-E*} x) < 1.
        halved = centers @ matcalc.matrix_power(E_star, 0.5).T
        keep = (_gauge(dec, centers) >= 1.0) & (_gauge(dec, halved) < 1.0)
        base = centers[keep]
        if base.shape[0] == 0:
            raise NumericError("frequency shell discretization produced no cells")
        tau_base, _ = polar_many(dec, E_star, base)

        js = np.arange(freq.j_min, freq.j_max + 1)
        scalers = matcalc.matrix_power_multi(E_star, 2.0 ** js.astype(float))
        xi = np.concatenate([base @ S.T for S in scalers], axis=0)
        psi = np.concatenate([(2.0 ** j) * tau_base for j in js])
        vol = np.concatenate([
            np.full(base.shape[0], (2.0 ** (j * pair.q)) * spacing ** d) for j in js
        ])

        expo = -(pair.D + 0.5 * pair.q * np.eye(pair.m))
        mats = _scalar_matrix_powers(psi, expo)
        mats = mats * np.sqrt(vol)[:, None, None]
        if not np.all(np.isfinite(mats)):
            raise NumericError(
                "frequency weights overflowed; raise j_min towards 0",
                {"j_min": freq.j_min},
            )
        self.xi = xi
        self.psi = psi
        self.weights = mats
        self.n_cells = xi.shape[0]
        self.words_per_cell = 2 * pair.m

    def _stream(self, seed, stream=0):
        return GaussianCellStream(seed, words_per_cell=self.words_per_cell, stream=stream)

    def _cell_vectors(self, zeta):
        """Apply the weight matrices to complex noise: (n_cells, m)."""
        return np.einsum("cij,cj->ci", self.weights, zeta)

    def values(self, points, seed, stream=0):
        """Field values at arbitrary points for one realization."""
        P = np.atleast_2d(np.asarray(points, dtype=float))
        zeta = self._stream(seed, stream).complex_normals(self.n_cells)
        V = self._cell_vectors(zeta)
        out = np.zeros((P.shape[0], self.pair.m))
        chunk = max(1, _KERNEL_CHUNK_ELEMS // max(P.shape[0], 1))
        for start in range(0, self.n_cells, chunk):
            xi_c = self.xi[start:start + chunk]
            W = np.exp(1j * (P @ xi_c.T))
            W -= 1.0
            out += (W @ V[start:start + chunk]).real
        return out

    def realizations(self, points, n_real, seed):
        """(n_real, n_points, m) values across independent realizations.

        Realization s uses stream id s of the master seed, so any single
        realization can be reproduced in isolation.
        """
        P = np.atleast_2d(np.asarray(points, dtype=float))
        n_p = P.shape[0]
        W = np.exp(1j * (P @ self.xi.T)) - 1.0
        out = np.empty((n_real, n_p, self.pair.m))
        chunk = max(1, 2 ** 22 // max(self.n_cells * self.pair.m, 1))
        for s0 in range(0, n_real, chunk):
            ns = min(chunk, n_real - s0)
            Z = np.empty((ns, self.n_cells, self.pair.m), dtype=complex)
            for i in range(ns):
                Z[i] = self._stream(seed, stream=s0 + i).complex_normals(self.n_cells)
            V = np.einsum("cij,scj->sci", self.weights, Z)
            out[s0:s0 + ns] = np.einsum("pc,sci->spi", W, V).real
        return out

    def sample(self, grid, seed):
        """FieldSample over a GridSpec (origin node is exactly zero)."""
        if grid.d != self.pair.d:
            raise ValidationError("grid dimension does not match the pair")
        pts = grid.nodes()
        vals = self.values(pts, seed)
        if not np.all(np.isfinite(vals)):
            raise NumericError("synthesis produced non-finite values")
        meta = _make_meta(self.pair, seed, {
            "j_min": self.freq.j_min,
            "j_max": self.freq.j_max,
            "base_resolution": self.freq.base_resolution,
        })
        return FieldSample(points=pts, values=vals, meta=meta, grid=grid)


def _gauge(decomp, pts):
    from .anisotropy import averaged_norm
    return np.atleast_1d(averaged_norm(decomp, decomp.E, np.atleast_2d(pts)))


def harmonizable_sample(pair, decomp_star=None, grid=None, freq=None, seed=0):
    """One harmonizable realization over a grid; deterministic in (seed, specs)."""
    if grid is None:
        raise ValidationError("grid is required")
    synth = HarmonizableSynthesizer(pair, decomp_star=decomp_star, freq=freq)
    return synth.sample(grid, seed)


# ---------------------------------------------------------------------------
# Moving-average synthesizer
# ---------------------------------------------------------------------------

class MovingAverageSynthesizer:
    """Truncated-lattice synthesizer for the moving-average representation.

    The lattice lives on [-T, T]^d and is refined dyadically near the
    singular loci of the kernel: the origin and every evaluation point.
    Cells containing a singular point are skipped (the kernel is square
    integrable, so their mass vanishes under refinement).
    """

    def __init__(self, pair, decomp=None, points=None, truncation=None):
        _check_pair(pair, "moving_average")
        self.pair = pair
        self.truncation = truncation if truncation is not None else TruncationSpec()
        if decomp is None:
            decomp = decompose(pair.E)
        elif not np.allclose(decomp.E, pair.E, atol=1e-12):
            raise ValidationError("decomposition must belong to E")
        self.decomp = decomp
        if points is None:
            raise ValidationError("evaluation points are required at construction")
        P = np.atleast_2d(np.asarray(points, dtype=float))
        if P.shape[1] != pair.d:
            raise ValidationError("points dimension does not match the pair")
        self.points = P
        ext = np.concatenate([P, np.zeros((1, pair.d))], axis=0)
        diam = float(np.linalg.norm(ext.max(axis=0) - ext.min(axis=0)))
        if self.truncation.radius < diam:
            raise ValidationError(
                f"truncation radius {self.truncation.radius} is below the "
                f"evaluation diameter {diam:.3g}"
            )
        self._build_lattice()
        self._build_kernel()

    def _build_lattice(self):
        tr = self.truncation
        d = self.pair.d
        T = tr.radius
        n0 = int(np.ceil(2.0 * T / tr.base_spacing))
        if n0 ** d > _MAX_BASE_CELLS:
            raise ValidationError("moving-average base lattice too large")
        spacing = 2.0 * T / n0
        axis = -T + spacing * (np.arange(n0) + 0.5)
        mesh = np.meshgrid(*([axis] * d), indexing="ij")
        centers = np.stack([m.ravel() for m in mesh], axis=-1)
        sizes = np.full(centers.shape[0], spacing)

        sing = np.concatenate([np.zeros((1, d)), self.points], axis=0)
        sing = np.unique(np.round(sing, 12), axis=0)

        for _ in range(tr.refine_levels):
            cheb = np.min(
                np.max(np.abs(centers[:, None, :] - sing[None, :, :]), axis=-1),
                axis=-1,
            )
            split = cheb <= 1.5 * sizes
            if not np.any(split):
                break
            keep_c, keep_s = centers[~split], sizes[~split]
            parents, psz = centers[split], sizes[split]
            offsets = np.stack(
                np.meshgrid(*([np.array([-0.25, 0.25])] * d), indexing="ij"),
                axis=-1,
            ).reshape(-1, d)
            children = (parents[:, None, :] + offsets[None, :, :] * psz[:, None, None])
            centers = np.concatenate([keep_c, children.reshape(-1, d)], axis=0)
            sizes = np.concatenate([keep_s, np.repeat(psz * 0.5, 2 ** d)], axis=0)

        cheb = np.min(
            np.max(np.abs(centers[:, None, :] - sing[None, :, :]), axis=-1), axis=-1
        )
        keep = cheb > 0.5 * sizes + 1e-12
        centers, sizes = centers[keep], sizes[keep]

        order = np.lexsort(tuple(centers.T[::-1]) + (sizes,))
        self.cells = centers[order]
        self.cell_sizes = sizes[order]
        self.cell_vols = self.cell_sizes ** self.pair.d

    def _build_kernel(self):
        pair = self.pair
        P, Y = self.points, self.cells
        n_p, n_c, m = P.shape[0], Y.shape[0], pair.m
        if n_p * n_c * m * m > _MA_KERNEL_LIMIT:
            raise ValidationError(
                "moving-average kernel too large; reduce evaluation points, "
                "the lattice resolution, or use the harmonizable route"
            )
        expo = pair.D - 0.5 * pair.q * np.eye(m)
        diffs = (P[:, None, :] - Y[None, :, :]).reshape(-1, pair.d)
        phi_x = np.asarray(
            _phi_batch(self.decomp, pair.E, diffs), dtype=float
        ).reshape(n_p, n_c)
        phi_0 = _phi_batch(self.decomp, pair.E, -Y)
        if np.any(phi_x <= 0.0) or np.any(phi_0 <= 0.0):
            raise NumericError("a lattice cell coincides with a singular point")
        mats_x = _scalar_matrix_powers(phi_x.ravel(), expo).reshape(n_p, n_c, m, m)
        mats_0 = _scalar_matrix_powers(phi_0, expo)
        K = mats_x - mats_0[None, :, :, :]
        K *= np.sqrt(self.cell_vols)[None, :, None, None]
        if not np.all(np.isfinite(K)):
            raise NumericError("moving-average kernel overflowed")
        self.kernel = K
        self.words_per_cell = m

    def _stream(self, seed, stream=0):
        return GaussianCellStream(seed, words_per_cell=self.pair.m, stream=stream)

    def values(self, seed, stream=0):
        g = self._stream(seed, stream).normals(self.kernel.shape[1])
        return np.einsum("pcij,cj->pi", self.kernel, g)

    def realizations(self, n_real, seed):
        n_c, m = self.kernel.shape[1], self.pair.m
        out = np.empty((n_real, self.points.shape[0], m))
        chunk = max(1, 2 ** 22 // max(n_c * m, 1))
        for s0 in range(0, n_real, chunk):
            ns = min(chunk, n_real - s0)
            G = np.empty((ns, n_c, m))
            for i in range(ns):
                G[i] = self._stream(seed, stream=s0 + i).normals(n_c)
            out[s0:s0 + ns] = np.einsum("pcij,scj->spi", self.kernel, G)
        return out


def _phi_batch(decomp, E, pts):
    tau, _ = polar_many(decomp, E, pts)
    return tau


def moving_average_sample(pair, decomp=None, grid=None, truncation=None, seed=0):
    """One moving-average realization over a grid."""
    if grid is None:
        raise ValidationError("grid is required")
    if grid.d != pair.d:
        raise ValidationError("grid dimension does not match the pair")
    pts = grid.nodes()
    synth = MovingAverageSynthesizer(pair, decomp=decomp, points=pts, truncation=truncation)
    vals = synth.values(seed)
    if not np.all(np.isfinite(vals)):
        raise NumericError("synthesis produced non-finite values")
    tr = synth.truncation
    meta = _make_meta(pair, seed, {
        "radius": tr.radius,
        "refine_levels": tr.refine_levels,
        "base_spacing": tr.base_spacing,
    })
    return FieldSample(points=pts, values=vals, meta=meta, grid=grid)
