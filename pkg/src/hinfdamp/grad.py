"""Gradient of g -> ||F(g, .)||_Hinf and checks of the smoothness assumptions.

At a maximizer omega0 with a simple largest singular value (u0, v0),

    d sigma_max / d g_j = -Re(v0^H cC D^{-1} L_j D^{-1} cB u0)
                        = -Re(conj(l_j^T y) (l_j^T x)),

with x = D^{-1} cB u0, y = D^{-H} cC^H v0 and l_j = [0; b_j].  One
factorization at (g, i omega0) therefore serves every component.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .linf import NormResult, StateSpace, peak_census, sigma_max_local_refine
from .model import as_gains, eval_sigma_max, factorize, first_order_dense

__all__ = [
    "GAP_TOL",
    "NonsmoothPointError",
    "NonsmoothPointWarning",
    "GradientContext",
    "SmoothnessReport",
    "gradient_context",
    "hinf_gradient",
    "smoothness_diagnostics",
]

#: relative gap under which a singular value or a peak counts as multiple
GAP_TOL = 1e-6


class NonsmoothPointError(ArithmeticError):
    """Largest singular value is (numerically) not simple at the maximizer."""

    def __init__(self, ctx):
        super().__init__(
            f"nonsmooth point: singular gap {ctx.singular_gap:.3e} at omega = {ctx.sample.omega:.6g}"
        )
        self.context = ctx


class NonsmoothPointWarning(RuntimeWarning):
    pass


@dataclass
class GradientContext:
    """Resolvent products at the norm-attaining frequency.

    ``x`` and ``y`` are the 2n-vectors D^{-1} cB u0 and D^{-H} cC^H v0.
    ``second_peak_gap`` is ``nan`` when no peak information is available.
    """

    sample: object
    x: np.ndarray
    y: np.ndarray
    singular_gap: float
    second_peak_gap: float = float("nan")

    @property
    def relative_singular_gap(self):
        s = self.sample.sigma_max
        return self.singular_gap / s if s > 0 else 0.0


def gradient_context(acl, g, omega, *, second_peak_gap=float("nan"), solve=None):
    """Factorize once at (g, i omega) and cache both resolvent products."""
    g = as_gains(g, acl.p)
    if solve is None:
        solve = factorize(acl, g, 1j * omega)
    smp = eval_sigma_max(acl, g, omega, solve=solve)
    x = solve.right(smp.u).ravel()
    y = solve.left(smp.v).ravel()
    return GradientContext(smp, x, y, smp.singular_gap, float(second_peak_gap))


def hinf_gradient(acl, ctx, *, strict=False):
    """Gradient of the H-infinity norm with respect to the damper gains.

    Parameters
    ----------
    acl : AffineClosedLoop
    ctx : GradientContext
        Built at the maximizer of sigma_max(F(g, i .)).
    strict : bool
        Raise :class:`NonsmoothPointError` at a repeated largest singular
        value instead of warning.  Either way the returned vector belongs to
        the branch selected by the sample's singular vectors.

    Returns
    -------
    ndarray, shape (p,)
    """
    if ctx.sample.singular_values.size > 1 and ctx.relative_singular_gap < GAP_TOL:
        if strict:
            raise NonsmoothPointError(ctx)
        warnings.warn(
            f"largest singular value is not simple (relative gap {ctx.relative_singular_gap:.2e})",
            NonsmoothPointWarning,
            stacklevel=2,
        )
    n = acl.n
    B2 = acl.b
    bx = B2.T @ ctx.x[n:]
    by = B2.T @ ctx.y[n:]
    return -np.real(np.conj(by) * bx)


@dataclass
class SmoothnessReport:
    """Diagnostics for a simple largest singular value and a unique peak."""

    sigma_max: float
    omega_star: float
    singular_gap: float
    second_peak_gap: float
    second_peak_omega: float
    peaks: list

    @property
    def relative_singular_gap(self):
        return self.singular_gap / self.sigma_max if self.sigma_max > 0 else 0.0

    @property
    def relative_peak_gap(self):
        return self.second_peak_gap / self.sigma_max if self.sigma_max > 0 else 0.0

    @property
    def simple_singular_value(self):
        return self.relative_singular_gap >= GAP_TOL

    @property
    def unique_peak(self):
        return not self.relative_peak_gap < GAP_TOL

    @property
    def smooth(self):
        return self.simple_singular_value and self.unique_peak

    def near_equal_peaks(self, rel=1e-2):
        """Number of local maxima within ``rel`` of the global one."""
        return sum(1 for s, _ in self.peaks if s >= (1.0 - rel) * self.sigma_max)


#: largest n for which the peak census uses the dense first-order realization
DENSE_CENSUS_MAX_N = 200


def _distinct(omega, ref):
    return abs(omega - ref) > 1e-6 * max(abs(ref), 1e-8)


def smoothness_diagnostics(acl, g, norm_result: NormResult, *, peaks=None, omega_max=None):
    """Check both smoothness assumptions at the computed maximizer.

    The singular gap comes from the sample at ``norm_result.omega_star``.
    The peak gap compares the global maximum with the highest other local
    maximum.  Local maxima are taken from ``peaks`` when given, from a dense
    census for small n, and otherwise by locally refining every frequency in
    the result history.
    """
    g = as_gains(g, acl.p)
    smp = norm_result.sample
    if smp is None or smp.omega != norm_result.omega_star:
        smp = eval_sigma_max(acl, g, norm_result.omega_star)
    top, w0 = smp.sigma_max, smp.omega
    if peaks is None:
        if acl.n <= DENSE_CENSUS_MAX_N:
            peaks = peak_census(StateSpace(*first_order_dense(acl, g)), omega_max)
        else:
            peaks = []
            seen = []
            for w, _ in norm_result.history:
                if any(not _distinct(w, s) for s in seen):
                    continue
                seen.append(w)
                wl, ok = sigma_max_local_refine(acl, g, abs(w))
                if ok:
                    peaks.append((eval_sigma_max(acl, g, wl).sigma_max, wl))
            peaks.sort(key=lambda t: (-t[0], t[1]))
    peaks = list(peaks)
    if peaks and peaks[0][0] > top:
        top, w0 = peaks[0]
        smp = eval_sigma_max(acl, g, w0)
    others = [(s, w) for s, w in peaks if _distinct(w, w0)]
    if others:
        s2, w2 = max(others, key=lambda t: t[0])
        gap = top - s2
    else:
        s2, w2, gap = float("nan"), float("nan"), float("inf")
    return SmoothnessReport(
        sigma_max=float(top),
        omega_star=float(w0),
        singular_gap=float(smp.singular_gap),
        second_peak_gap=float(gap),
        second_peak_omega=float(w2),
        peaks=peaks,
    )
