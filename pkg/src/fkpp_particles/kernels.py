"""Analytic kernels used throughout the package.

Compactly supported radial mollifiers and their rescalings, the heat
kernel of ``d/dt = Laplacian``, its time integral ``K``, the smoothed
auxiliary kernel obtained by convolving a mollifier against ``K``, and
the structural bound envelopes those objects obey.

Note the Laplacian convention: ``heat_kernel`` solves ``d/dt = Delta``
(no factor 1/2) because it describes the *difference* of two unit
diffusions.  Individual particles elsewhere in the package diffuse with
generator ``(1/2) Delta``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property

import numpy as np
from scipy import integrate, special

# Radial profiles p(q) of the squared relative radius q = |x/C0|^2,
# supported on q < 1.  The exponent controls boundary smoothness.
_PROFILES = {
    "polynomial-bump": 2,  # C^1 at the support boundary, Hoelder inside
    "smooth-bump": 3,      # C^2, used for density smoothing
}


class QuadratureError(RuntimeError):
    """Raised when an adaptive quadrature fails to reach its tolerance."""


def _radial_coordinates(x, dim):
    """Return |x| for an array of points with a tolerant d=1 convention.

    Points are arrays whose last axis has length ``dim``; for dim=1 a
    bare array of coordinates is accepted as well.
    """
    x = np.asarray(x, dtype=float)
    if dim == 1:
        if x.ndim > 0 and x.shape[-1] == 1:
            return np.abs(x[..., 0])
        return np.abs(x)
    if x.ndim == 0 or x.shape[-1] != dim:
        raise ValueError(f"expected points with last axis of length {dim}, got shape {x.shape}")
    return np.sqrt(np.sum(x * x, axis=-1))


def _profile_mass(power, dim, support_radius):
    """Mass of (1 - |x/C0|^2)_+^power over R^d, by radial quadrature."""
    def radial(r):
        return (1.0 - r * r) ** power * r ** (dim - 1)

    val, err = integrate.quad(radial, 0.0, 1.0, epsabs=1e-14, epsrel=1e-12)
    if err > 1e-10:
        raise QuadratureError(f"profile normalization quadrature error {err:.3e}")
    sphere = 2.0 * math.pi ** (dim / 2.0) / math.gamma(dim / 2.0)
    return sphere * val * support_radius ** dim


@dataclass(frozen=True)
class MollifierSpec:
    """A nonnegative compactly supported radial bump with unit mass."""

    dim: int
    shape: str = "polynomial-bump"
    support_radius: float = 1.0

    def __post_init__(self):
        if self.dim < 1:
            raise ValueError("dimension must be a positive integer")
        if self.shape not in _PROFILES:
            raise ValueError(f"unknown profile {self.shape!r}")
        if self.support_radius <= 0:
            raise ValueError("support radius must be positive")

    @cached_property
    def norm_const(self):
        """Normalization making the total mass one (computed at startup)."""
        return 1.0 / _profile_mass(_PROFILES[self.shape], self.dim, self.support_radius)

    @property
    def sup_norm(self):
        return self.norm_const

    def __call__(self, x):
        r = _radial_coordinates(x, self.dim) / self.support_radius
        q = np.clip(1.0 - r * r, 0.0, None)
        return self.norm_const * q ** _PROFILES[self.shape]


@dataclass(frozen=True)
class RescaledKernel:
    """theta^eps(x) = eps^{-d} theta(x/eps) for a base mollifier theta."""

    base: MollifierSpec
    eps: float

    def __post_init__(self):
        if not 0.0 < self.eps <= 1.0:
            raise ValueError("scale eps must lie in (0, 1]")

    @property
    def dim(self):
        return self.base.dim

    @property
    def support_radius(self):
        return self.base.support_radius * self.eps

    @property
    def peak(self):
        """theta^eps(0) = theta(0) eps^{-d}."""
        return self.base.norm_const * self.eps ** (-self.dim)

    def __call__(self, x):
        scale = self.eps ** (-self.dim)
        return scale * self.base(np.asarray(x, dtype=float) / self.eps)


@dataclass(frozen=True)
class SmoothingBump:
    """eta^delta(x) = delta^{-d} eta(x/delta), a C^2 bump of unit mass."""

    dim: int
    width: float
    shape: str = "smooth-bump"

    def __post_init__(self):
        if self.width <= 0:
            raise ValueError("width must be positive")

    @cached_property
    def base(self):
        return MollifierSpec(self.dim, self.shape)

    @property
    def support_radius(self):
        return self.base.support_radius * self.width

    @property
    def base_sup_norm(self):
        """sup |eta| of the unscaled bump."""
        return self.base.norm_const

    @property
    def sup_norm(self):
        return self.base.norm_const * self.width ** (-self.dim)

    def __call__(self, x):
        scale = self.width ** (-self.dim)
        return scale * self.base(np.asarray(x, dtype=float) / self.width)


def heat_kernel(t, x, dim):
    """Kernel of d/dt = Delta: (4 pi t)^{-d/2} exp(-|x|^2 / 4t), t > 0."""
    if t <= 0:
        raise ValueError("heat kernel requires t > 0")
    r = _radial_coordinates(x, dim)
    return (4.0 * math.pi * t) ** (-dim / 2.0) * np.exp(-(r * r) / (4.0 * t))


def _k_from_radii(t, r, dim):
    """K(t, .) evaluated at precomputed radii r = |x| (t > 0)."""
    a = r * r / (4.0 * t)
    if dim == 1:
        # |x|^{2-d} prefactor absorbed: finite at the origin.
        return math.sqrt(t / math.pi) * np.exp(-a) - 0.5 * r * special.erfc(np.sqrt(a))
    if dim == 2:
        return special.exp1(a) / (4.0 * math.pi)
    s = (dim - 2) / 2.0
    tail = special.gammaincc(s, a) * math.gamma(s)
    return r ** (2 - dim) / (4.0 * math.pi ** (dim / 2.0)) * tail


def integrated_heat_kernel(t, x, dim):
    """K(t, x) = integral of p_s(x) over s in [0, t].

    Evaluated through the substitution r = |x|^2 / 4s, which turns the
    time integral into an upper-incomplete-gamma tail; the tail reduces
    to erfc / E1 / gammaincc depending on the dimension.  ``x = 0`` is
    admissible only for d = 1 (K is singular at the origin otherwise).
    """
    if t < 0:
        raise ValueError("K requires t >= 0")
    r = _radial_coordinates(x, dim)
    if t == 0:
        return np.zeros_like(r)
    if dim >= 2 and np.any(r == 0.0):
        raise ValueError("K(t, 0) diverges for d >= 2")
    return _k_from_radii(t, r, dim)


def integrated_heat_kernel_quad(t, x, dim, tol=1e-10):
    """Adaptive-quadrature evaluation of K(t, x), scalar point.

    Cross-check path for :func:`integrated_heat_kernel`: integrates the
    substituted tail integral directly (or the s-integral at the d=1
    origin where the substitution degenerates).
    """
    if t < 0:
        raise ValueError("K requires t >= 0")
    r = float(_radial_coordinates(x, dim))
    if t == 0:
        return 0.0
    if r == 0.0:
        if dim >= 2:
            raise ValueError("K(t, 0) diverges for d >= 2")
        val, err = integrate.quad(lambda s: (4.0 * math.pi * s) ** -0.5, 0.0, t,
                                  epsabs=tol, epsrel=tol)
    else:
        a = r * r / (4.0 * t)
        pref = r ** (2 - dim) / (4.0 * math.pi ** (dim / 2.0))
        val, err = integrate.quad(lambda u: u ** ((dim - 4) / 2.0) * math.exp(-u),
                                  a, np.inf, epsabs=tol, epsrel=tol)
        val, err = pref * val, pref * err
    if err > 100.0 * tol * max(1.0, abs(val)):
        raise QuadratureError(f"K quadrature error {err:.3e} above tolerance")
    return val


def grad_integrated_heat_kernel(t, x, dim):
    """Gradient of K in x; radial, with an |x|^{1-d} singular scale."""
    if t < 0:
        raise ValueError("grad K requires t >= 0")
    x = np.atleast_1d(np.asarray(x, dtype=float))
    if dim == 1 and x.shape[-1] != 1:
        x = x[..., None]
    r = _radial_coordinates(x, dim)
    out = np.zeros_like(x)
    if t == 0:
        return out
    mask = r > 0.0
    if not np.any(mask):
        return out
    a = r[mask] ** 2 / (4.0 * t)
    tail = special.gammaincc(dim / 2.0, a) * math.gamma(dim / 2.0)
    magnitude = r[mask] ** (1 - dim) / (2.0 * math.pi ** (dim / 2.0)) * tail
    out[mask] = -x[mask] * (magnitude / r[mask])[..., None]
    return out


def bound_envelope(dim, eps, x, which="value"):
    """Structural envelopes for the auxiliary kernel and its gradient.

    Returns the shape of the uniform bounds without the unknown leading
    constant: a Gaussian branch for |x| >= 1 and a (|x| v eps)-power (or
    log, for d=2 values) branch for |x| < 1.
    """
    if not 0.0 < eps <= 1.0:
        raise ValueError("eps must lie in (0, 1]")
    if which not in ("value", "gradient"):
        raise ValueError("which must be 'value' or 'gradient'")
    r = _radial_coordinates(x, dim)
    far = np.exp(-r * r) * (r >= 1.0)
    clipped = np.maximum(r, eps)
    if which == "gradient":
        near = clipped ** (1 - dim)
    elif dim == 2:
        near = np.abs(np.log(clipped))
    else:
        near = clipped ** (2 - dim)
    return far + near * (r < 1.0)


def _gauss_legendre(a, b, n):
    nodes, weights = np.polynomial.legendre.leggauss(n)
    half = 0.5 * (b - a)
    return a + half * (nodes + 1.0), half * weights


@dataclass(frozen=True)
class AuxiliaryKernel:
    """Terminal-value smoothing of K: value(t, x) = (theta^eps * K(T-t, .))(x).

    Solves the backward problem d/dt v + Delta v + theta^eps = 0 with
    v(T, .) = 0.  Evaluation is by Gauss quadrature over the mollifier
    support; in d = 1 the integration interval is split at the kink of
    K so the quadrature sees smooth integrands only, while for d >= 2
    the integrable singularity is clamped at ``singular_cutoff``.
    """

    horizon: float
    kernel: RescaledKernel
    nodes_per_axis: int = 32
    singular_cutoff: float = 1e-9

    def __post_init__(self):
        if self.horizon <= 0:
            raise ValueError("horizon must be positive")

    @property
    def dim(self):
        return self.kernel.dim

    @property
    def eps(self):
        return self.kernel.eps

    @cached_property
    def _tensor_nodes(self):
        """Quadrature nodes over the mollifier support, d >= 2 only."""
        rho = self.kernel.support_radius
        pts, wts = _gauss_legendre(-rho, rho, self.nodes_per_axis)
        grids = np.meshgrid(*([pts] * self.dim), indexing="ij")
        nodes = np.stack([g.ravel() for g in grids], axis=-1)
        wgrids = np.meshgrid(*([wts] * self.dim), indexing="ij")
        weight = np.prod(np.stack([w.ravel() for w in wgrids], axis=-1), axis=-1)
        weight *= self.kernel(nodes)
        keep = weight > 0.0
        return nodes[keep], weight[keep]

    def _check_time(self, t):
        if not -1e-12 <= t <= self.horizon + 1e-12:
            raise ValueError(f"time {t} outside [0, {self.horizon}]")
        return min(max(t, 0.0), self.horizon)

    def _split_quadrature_1d(self, s, xs, grad):
        rho = self.kernel.support_radius
        n = self.nodes_per_axis
        out = np.empty(xs.shape[0])
        for i, xi in enumerate(xs):
            if -rho < xi < rho:
                segments = ((-rho, xi), (xi, rho))
            else:
                segments = ((-rho, rho),)
            acc = 0.0
            for a, b in segments:
                if b - a <= 0:
                    continue
                pts, wts = _gauss_legendre(a, b, n)
                wts = wts * self.kernel(pts)
                diff = xi - pts
                if grad:
                    vals = grad_integrated_heat_kernel(s, diff[:, None], 1)[:, 0]
                else:
                    vals = integrated_heat_kernel(s, diff, 1)
                acc += float(np.dot(wts, vals))
            out[i] = acc
        return out

    def value(self, t, x):
        """r^eps(t, x); zero at the horizon, nonnegative elsewhere."""
        t = self._check_time(t)
        s = self.horizon - t
        x = np.asarray(x, dtype=float)
        if self.dim == 1:
            scalar = x.ndim == 0
            xs = x[..., 0] if (x.ndim > 0 and x.shape[-1] == 1) else x
            flat = np.atleast_1d(xs).ravel()
            if s == 0.0:
                res = np.zeros_like(flat)
            else:
                res = self._split_quadrature_1d(s, flat, grad=False)
            return float(res[0]) if scalar else res.reshape(np.shape(xs))
        if x.shape[-1] != self.dim:
            raise ValueError(f"expected points in R^{self.dim}")
        flat = x.reshape(-1, self.dim)
        if s == 0.0:
            return np.zeros(flat.shape[0]).reshape(x.shape[:-1])
        nodes, weight = self._tensor_nodes
        out = np.empty(flat.shape[0])
        chunk = max(1, 2 ** 22 // nodes.shape[0])
        for lo in range(0, flat.shape[0], chunk):
            block = flat[lo:lo + chunk]
            diff = block[:, None, :] - nodes[None, :, :]
            r = np.sqrt(np.sum(diff * diff, axis=-1))
            np.maximum(r, self.singular_cutoff, out=r)
            out[lo:lo + chunk] = np.dot(_k_from_radii(s, r, self.dim), weight)
        return out.reshape(x.shape[:-1])

    def gradient(self, t, x):
        """Gradient of r^eps in x, by convolving the mollifier with grad K."""
        t = self._check_time(t)
        s = self.horizon - t
        x = np.asarray(x, dtype=float)
        if self.dim == 1:
            xs = x[..., 0] if (x.ndim > 0 and x.shape[-1] == 1) else x
            flat = np.atleast_1d(xs).ravel()
            if s == 0.0:
                res = np.zeros_like(flat)
            else:
                res = self._split_quadrature_1d(s, flat, grad=True)
            return res.reshape(np.shape(np.atleast_1d(xs)) + (1,))
        if x.shape[-1] != self.dim:
            raise ValueError(f"expected points in R^{self.dim}")
        flat = x.reshape(-1, self.dim)
        if s == 0.0:
            return np.zeros_like(flat).reshape(x.shape)
        nodes, weight = self._tensor_nodes
        out = np.empty_like(flat)
        chunk = max(1, 2 ** 21 // nodes.shape[0])
        for lo in range(0, flat.shape[0], chunk):
            block = flat[lo:lo + chunk]
            diff = block[:, None, :] - nodes[None, :, :]
            r = np.sqrt(np.sum(diff * diff, axis=-1))
            np.maximum(r, self.singular_cutoff, out=r)
            a = r * r / (4.0 * s)
            tail = special.gammaincc(self.dim / 2.0, a) * math.gamma(self.dim / 2.0)
            magnitude = r ** (-self.dim) / (2.0 * math.pi ** (self.dim / 2.0)) * tail
            out[lo:lo + chunk] = -np.einsum("pnk,pn,n->pk", diff, magnitude, weight)
        return out.reshape(x.shape)
