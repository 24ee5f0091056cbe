"""L-infinity norms: a dense level-set solver and the greedy subspace method.

``linf_dense`` handles small dense descriptor models (reduced models, or the
full model when n is small).  ``hinf_greedy`` computes the H-infinity norm of
the large closed loop at fixed gains by repeatedly interpolating at the
maximizer of a growing reduced model.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as la
from scipy.optimize import brentq, minimize_scalar

from . import kernels
from .model import (
    PoleProximityError,
    as_gains,
    eval_sigma_max,
    factorize,
    sample_from_matrix,
    sigma_max_derivative,
)

log = logging.getLogger(__name__)

__all__ = [
    "UnboundedNormError",
    "NormResult",
    "StateSpace",
    "linf_dense",
    "hinf_greedy",
    "sigma_max_local_refine",
    "peak_census",
]


class UnboundedNormError(ArithmeticError):
    """The model has a pole on the (searched part of the) imaginary axis."""

    def __init__(self, omega):
        super().__init__(f"pole on the imaginary axis near omega = {omega:.6g}")
        self.omega = omega


@dataclass
class NormResult:
    value: float
    omega_star: float
    sample: object
    iterations: int
    converged: bool
    history: list = field(default_factory=list)
    reduced_dimension: int | None = None


class StateSpace:
    """Dense descriptor model F(s) = C (sE - A)^{-1} B with no feedthrough."""

    def __init__(self, E, A, B, C):
        self.A = np.asarray(A)
        k = self.A.shape[0]
        self.E = np.eye(k) if E is None else np.asarray(E)
        self.B = np.asarray(B).reshape(k, -1)
        self.C = np.asarray(C).reshape(-1, k)
        self._lu_E = la.lu_factor(self.E, check_finite=False)
        self.Ae = la.lu_solve(self._lu_E, self.A, check_finite=False)
        self.Be = la.lu_solve(self._lu_E, self.B, check_finite=False)
        self._modal = None
        self._poles = None

    @property
    def k(self):
        return self.A.shape[0]

    @property
    def is_real(self):
        return not any(np.iscomplexobj(a) for a in (self.Ae, self.Be, self.C))

    @property
    def poles(self):
        if self._poles is None:
            self.modal()
        return self._poles

    def transfer(self, s):
        X = la.solve(s * self.E - self.A, self.B, check_finite=False)
        return self.C @ X

    def sample(self, omega):
        return sample_from_matrix(self.transfer(1j * omega), np.empty(0), omega)

    def sigma(self, omega):
        return float(la.svdvals(self.transfer(1j * omega))[0])

    def dsigma(self, omega):
        """d/d omega sigma_max(F(i omega)) via F'(s) = -C R E R B, R = (sE-A)^{-1}."""
        P = 1j * omega * self.E - self.A
        lu = la.lu_factor(P, check_finite=False)
        X = la.lu_solve(lu, self.B, check_finite=False)
        F = self.C @ X
        smp = sample_from_matrix(F, np.empty(0), omega)
        dF = -self.C @ la.lu_solve(lu, self.E @ X, check_finite=False)
        return float(np.real(smp.v.conj() @ (1j * dF) @ smp.u)), smp

    def modal(self):
        """Pole/residue factors (poles, C X, X^{-1} E^{-1} B)."""
        if self._modal is None:
            lam, X = la.eig(self.Ae, check_finite=False)
            self._poles = lam
            Bm = la.solve(X, self.Be, check_finite=False)
            self._modal = (
                np.ascontiguousarray(lam, dtype=complex),
                np.ascontiguousarray(self.C @ X, dtype=complex),
                np.ascontiguousarray(Bm, dtype=complex),
            )
        return self._modal

    def sigma_grid(self, omegas):
        """sigma_max on a frequency grid using the compiled sweep kernel."""
        poles, Cm, Bm = self.modal()
        return kernels.sigma_max_modal(np.ascontiguousarray(omegas, dtype=float), poles, Cm, Bm)


def _as_statespace(model):
    if isinstance(model, StateSpace):
        return model
    return StateSpace(*model)


def _polish(ss, omega, value, lo=-math.inf):
    """Push omega to a stationary point of sigma_max; only accepts improvements."""
    try:
        d0, _ = ss.dsigma(omega)
    except (la.LinAlgError, ValueError):
        return omega, value
    if d0 == 0.0 or not np.isfinite(d0):
        return omega, value
    h = 1e-6 * max(abs(omega), 1e-3)
    direction = 1.0 if d0 > 0 else -1.0
    a, fa = omega, d0
    for _ in range(40):
        b = omega + direction * h
        if b < lo:
            b = lo
        fb, _ = ss.dsigma(b)
        if fa * fb <= 0:
            break
        if b == lo:
            return omega, value
        a, fa = b, fb
        h *= 2.0
    else:
        return omega, value
    lo_, hi_ = (a, b) if a < b else (b, a)
    try:
        w = brentq(lambda x: ss.dsigma(x)[0], lo_, hi_, xtol=1e-15 * max(1.0, abs(omega)), rtol=1e-15, maxiter=100)
    except (ValueError, RuntimeError):
        return omega, value
    val = ss.sigma(w)
    if val >= value:
        return w, val
    return omega, value


def linf_dense(model, tol=1e-8, *, omega_range="nonneg", init_freqs=(), max_iter=100, polish=True):
    """L-infinity norm of a small dense model by a level-set iteration.

    Parameters
    ----------
    model
        A :class:`StateSpace` or a tuple ``(E, A, B, C)``; ``E`` may be None.
    tol
        Relative accuracy of the returned value.
    omega_range
        ``"nonneg"`` searches omega >= 0 only (enough for real models, and
        the region reduced models are fitted on); ``"all"`` searches R.
    init_freqs
        Extra frequencies to seed the lower bound.

    Returns
    -------
    NormResult
        ``value`` is a lower bound of the true norm within relative ``tol``.

    Notes
    -----
    At level gamma, the frequencies where some singular value of F(i w)
    equals gamma are the imaginary eigenvalues of

        [[A, B B^H / gamma], [-C^H C / gamma, -A^H]]

    (with A, B premultiplied by E^{-1}).  Midpoints between consecutive
    crossings raise the lower bound until no crossing is left above it.
    """
    ss = _as_statespace(model)
    nonneg = omega_range == "nonneg"
    if omega_range not in ("nonneg", "all"):
        raise ValueError(f"omega_range must be 'nonneg' or 'all', got {omega_range!r}")
    if ss.B.shape[1] == 0 or ss.C.shape[0] == 0:
        smp = ss.sample(0.0)
        return NormResult(0.0, 0.0, smp, 0, True, [(0.0, 0.0)])

    poles = ss.poles
    if not np.all(np.isfinite(poles)):
        raise UnboundedNormError(float("nan"))
    scale = max(np.abs(poles).max(initial=0.0), 1e-300)
    on_axis = np.abs(poles.real) <= 1e-13 * np.maximum(np.abs(poles), scale * 1e-3)
    if nonneg:
        on_axis &= poles.imag >= -1e-13 * scale
    if np.any(on_axis):
        raise UnboundedNormError(float(abs(poles[on_axis][0].imag)))

    # candidate frequencies: 0, pole imaginary parts, user seeds; screened by the sweep kernel
    cands = np.concatenate([[0.0], poles.imag, np.asarray(init_freqs, dtype=float).ravel()])
    if nonneg:
        cands = cands[cands >= 0]
    cands = np.unique(cands[np.isfinite(cands)])
    screen = ss.sigma_grid(cands)
    order = np.argsort(-screen)[:3]
    gamma_lb, omega_lb = -1.0, 0.0
    for w in cands[order]:
        val = ss.sigma(w)
        if val > gamma_lb:
            gamma_lb, omega_lb = val, float(w)
    lo = 0.0 if nonneg else -math.inf
    if polish and gamma_lb > 0:
        # start the level-set test from a local maximum
        omega_lb, gamma_lb = _polish(ss, omega_lb, gamma_lb, lo)
    history = [(omega_lb, gamma_lb)]

    if gamma_lb == 0.0:
        return NormResult(0.0, omega_lb, ss.sample(omega_lb), 0, True, history)

    Ae, Be, C = ss.Ae, ss.Be, ss.C
    BB = Be @ Be.conj().T
    CC = C.conj().T @ C
    k = ss.k
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        gamma = gamma_lb * (1.0 + tol)
        H = np.empty((2 * k, 2 * k), dtype=np.result_type(Ae, BB, CC))
        H[:k, :k] = Ae
        H[:k, k:] = BB / gamma
        H[k:, :k] = -CC / gamma
        H[k:, k:] = -Ae.conj().T
        ev = la.eigvals(H, overwrite_a=True, check_finite=False)
        hscale = np.abs(ev).max(initial=0.0)
        imag = np.abs(ev.real) <= 1e-8 * max(hscale, 1e-300)
        ws = np.sort(ev.imag[imag])
        if nonneg:
            ws = ws[ws >= 0]
        if ws.size == 0:
            converged = True
            break
        if ws.size == 1:
            mids = ws
        else:
            mids = 0.5 * (ws[:-1] + ws[1:])
            mids = np.concatenate([mids, ws])
        vals = np.array([ss.sigma(w) for w in mids])
        j = int(np.argmax(vals))
        if vals[j] <= gamma_lb:
            # spurious near-imaginary eigenvalues only
            converged = True
            break
        gamma_lb, omega_lb = float(vals[j]), float(mids[j])
        if polish:
            omega_lb, gamma_lb = _polish(ss, omega_lb, gamma_lb, lo)
        history.append((omega_lb, gamma_lb))
    smp = ss.sample(omega_lb)
    return NormResult(float(smp.sigma_max), omega_lb, smp, it, converged, history)


def sigma_max_local_refine(acl, g, omega0, *, polish=True, max_expand=60):
    """Local maximizer of omega -> sigma_max(F(g, i omega)) starting at omega0.

    Returns ``(omega, ok)``; ``ok`` is False when no bracket was found, in
    which case ``omega0`` is returned unchanged.
    """
    g = as_gains(g, acl.p)

    def f(w):
        return eval_sigma_max(acl, g, abs(w)).sigma_max

    f0 = f(omega0)
    h = 1e-3 * max(abs(omega0), 1e-3)
    fp, fm = f(omega0 + h), f(max(omega0 - h, 0.0) if omega0 > 0 else omega0 - h)
    if abs(fp - f0) <= 1e-15 * f0 and abs(fm - f0) <= 1e-15 * f0:
        return omega0, True
    if fp <= f0 and fm <= f0:
        lo, hi = max(omega0 - h, 0.0), omega0 + h
    else:
        direction = 1.0 if fp > fm else -1.0
        a, fa = omega0, f0
        b = omega0 + direction * h
        fb = f(b)
        for _ in range(max_expand):
            h *= 1.6
            c = b + direction * h
            if c < 0:
                c = 0.0
            fc = f(c)
            if fc <= fb:
                lo, hi = (a, c) if a < c else (c, a)
                break
            if c == 0.0:
                return 0.0, True
            a, fa, b, fb = b, fb, c, fc
        else:
            return omega0, False
    res = minimize_scalar(lambda w: -f(w), bounds=(lo, hi), method="bounded",
                          options={"xatol": 1e-12 * max(1.0, abs(omega0))})
    w = float(res.x)
    if polish:
        try:
            d, _ = sigma_max_derivative(acl, g, w)
            if d != 0.0:
                h = 1e-7 * max(w, 1e-3)
                a, b = max(w - h, 0.0), w + h
                da = sigma_max_derivative(acl, g, a)[0]
                db = sigma_max_derivative(acl, g, b)[0]
                if da * db < 0:
                    w2 = brentq(lambda x: sigma_max_derivative(acl, g, x)[0], a, b,
                                xtol=1e-15 * max(1.0, w), rtol=1e-15)
                    if f(w2) >= f(w):
                        w = w2
        except PoleProximityError:
            pass
    return w, True


def peak_census(model, omega_max=None, *, grid_points=4000, nonneg=True):
    """Local maxima of sigma_max(F(i w)) as a sorted list of ``(sigma, omega)``.

    A uniform grid is combined with local grids around every pole's imaginary
    part so that sharp resonances are not stepped over; each candidate is then
    refined with the sweep kernel.
    """
    ss = _as_statespace(model)
    poles = ss.poles
    centers = poles.imag[poles.imag >= 0] if nonneg else poles.imag
    widths = np.maximum(np.abs(poles.real), 1e-12 * np.maximum(np.abs(poles), 1.0))
    if nonneg:
        widths = widths[poles.imag >= 0]
    if omega_max is None:
        omega_max = 1.5 * max(np.abs(poles).max(initial=1.0), 1e-12)
    lo = 0.0 if nonneg else -omega_max
    grids = [np.linspace(lo, omega_max, grid_points)]
    t = np.linspace(-6.0, 6.0, 61)
    for c, wdt in zip(centers, widths):
        grids.append(c + wdt * t)
    w = np.unique(np.concatenate(grids))
    if nonneg:
        w = w[w >= 0]
    s = ss.sigma_grid(w)
    interior = np.flatnonzero((s[1:-1] >= s[:-2]) & (s[1:-1] >= s[2:])) + 1
    idx = list(interior)
    if s.size > 1 and s[0] >= s[1]:
        idx.append(0)
    peaks = []
    for i in idx:
        a = w[max(i - 1, 0)]
        b = w[min(i + 1, w.size - 1)]
        if b > a:
            res = minimize_scalar(lambda x: -ss.sigma_grid(np.array([x]))[0], bounds=(a, b),
                                  method="bounded", options={"xatol": 1e-13 * max(1.0, abs(w[i]))})
            om = float(res.x) if -res.fun >= s[i] else float(w[i])
        else:
            om = float(w[i])
        peaks.append((ss.sigma(om), om))
    peaks.sort(key=lambda t: (-t[0], t[1]))
    merged = []
    for val, om in peaks:
        if any(abs(om - o) <= 1e-7 * max(abs(o), 1e-8) for _, o in merged):
            continue
        merged.append((val, om))
    return merged


def hinf_greedy(acl, g, init_freqs, tol=1e-8, max_iter=50, *, directions="tangential",
                dense_tol=1e-10, refine=False):
    """H-infinity norm of F(g, .) by greedy interpolation at reduced-model maximizers.

    Parameters
    ----------
    acl : AffineClosedLoop
    g : array_like
        Fixed gains.
    init_freqs : array_like
        Initial interpolation frequencies (omega >= 0).  Carried-over
        maximizers from earlier calls can be appended for warm starts.
    tol
        Stop once consecutive reduced L-infinity values agree to ``tol``
        relative, or the reduced maximum matches the full model there.
    directions
        ``"tangential"`` (dominant singular pair), ``"full"`` or ``"padded"``.

    Returns
    -------
    NormResult
        ``value`` is the largest full-model sigma_max seen at any sampled
        frequency, hence a lower bound of the true norm.
    """
    from .rom import ProjectionBasisPair, expand, reduce

    g = as_gains(g, acl.p)
    freqs = np.unique(np.abs(np.asarray(init_freqs, dtype=float).ravel()))
    bases = ProjectionBasisPair.empty(2 * acl.n)
    best = None

    def consider(smp):
        nonlocal best
        if best is None or smp.sigma_max > best.sigma_max:
            best = smp

    for w in freqs:
        try:
            rec = expand(bases, acl, g, w, directions)
        except PoleProximityError as exc:
            log.warning("skipping initial frequency %g: %s", w, exc)
            continue
        consider(rec.sample)
    if best is None:
        w = 0.0
        rec = expand(bases, acl, g, w, directions)
        consider(rec.sample)

    history = []
    prev = None
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        rom = reduce(acl, bases)
        try:
            res = linf_dense(rom.state_space(g), dense_tol, omega_range="nonneg",
                             init_freqs=[r.omega for r in bases.log] + [best.omega])
        except UnboundedNormError as exc:
            w_new = abs(exc.omega) * (1 + 1e-3) + 1e-6
            log.debug("reduced model unbounded at %g, expanding at %g", exc.omega, w_new)
            rec = expand(bases, acl, g, w_new, directions)
            consider(rec.sample)
            continue
        except la.LinAlgError:
            log.debug("singular reduced descriptor matrix; stopping")
            break
        val, w = res.value, res.omega_star
        history.append((w, val))
        try:
            rec = expand(bases, acl, g, w, directions)
        except PoleProximityError:
            break
        full = rec.sample
        consider(full)
        if abs(val - full.sigma_max) <= tol * val:
            converged = True
            break
        if prev is not None and abs(val - prev) <= tol * val:
            converged = True
            break
        if rec.added == 0:
            converged = True
            break
        prev = val

    omega_star = best.omega
    if refine:
        w, ok = sigma_max_local_refine(acl, g, omega_star)
        smp = eval_sigma_max(acl, g, w)
        if smp.sigma_max > best.sigma_max:
            best = smp
    return NormResult(best.sigma_max, best.omega, best, it, converged, history, reduced_dimension=bases.k)
