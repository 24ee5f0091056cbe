"""Bound-constrained nonsmooth minimization and the greedy damping optimizer.

``minimize_bounded`` is a projected BFGS method with a weak Wolfe line search
and a gradient-sampling fallback for kinks.  ``optimize_damping`` alternates
between minimizing the L-infinity norm of a parametric reduced model over the
gains and refining that model at the full-order H-infinity maximizer.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as la
from scipy.optimize import nnls

from .linf import UnboundedNormError, hinf_greedy, linf_dense, peak_census
from .modal import initial_frequencies, modal_transform
from .model import (
    PoleProximityError,
    ValidationError,
    as_gains,
    assemble_closed_loop,
    counters,
    eval_sigma_max,
    factorize,
)
from .rom import check_hermite, expand, initial_bases, reduce

log = logging.getLogger(__name__)

__all__ = [
    "OptimizerConfig",
    "Tolerances",
    "InnerResult",
    "TraceEntry",
    "DampingOptResult",
    "ReducedModelError",
    "minimize_bounded",
    "minimize_reduced",
    "optimize_damping",
    "check_mode",
]

MODES = ("i", "iii")


class ReducedModelError(ArithmeticError):
    """The reduced objective is unbounded at the starting gains."""


@dataclass
class OptimizerConfig:
    """Settings of the inner bound-constrained solver.

    Attributes
    ----------
    stationarity_tol
        Bound on the projected gradient norm.
    sampling_radii
        Gradient-sampling radii, relative to ``1 + ||g||``, tried in order.
    xtol
        Relative step length under which progress counts as stalled.
    ftol
        Relative predicted decrease below which a step cannot be resolved
        in floating point; the solver then stops as stalled.
    """

    stationarity_tol: float = 1e-12
    max_inner_iter: int = 100
    wolfe_c1: float = 1e-4
    wolfe_c2: float = 0.9
    max_line_search: int = 30
    sampling_radii: tuple = (1e-4, 1e-6, 1e-8)
    sample_size: int | None = None
    xtol: float = 1e-14
    ftol: float = 1e-15
    max_stall: int = 3
    dense_tol: float = 1e-8
    lower_bounds: np.ndarray | None = None
    upper_bounds: np.ndarray | None = None
    seed: int = 0

    def __post_init__(self):
        for name in ("stationarity_tol", "wolfe_c1", "dense_tol", "xtol"):
            if not getattr(self, name) > 0:
                raise ValidationError(f"{name} must be positive")
        if not 0 < self.wolfe_c1 < self.wolfe_c2 < 1:
            raise ValidationError("need 0 < wolfe_c1 < wolfe_c2 < 1")
        if self.max_inner_iter < 1 or self.max_line_search < 1:
            raise ValidationError("iteration limits must be at least 1")
        if any(not r > 0 for r in self.sampling_radii):
            raise ValidationError("sampling radii must be positive")

    def bounds(self, p):
        lo = np.zeros(p) if self.lower_bounds is None else np.asarray(self.lower_bounds, float)
        hi = np.full(p, np.inf) if self.upper_bounds is None else np.asarray(self.upper_bounds, float)
        if lo.shape != (p,) or hi.shape != (p,):
            raise ValidationError(f"bounds must have length {p}")
        if np.any(lo < 0) or np.any(hi < lo):
            raise ValidationError("bounds must satisfy 0 <= lower <= upper")
        return lo, hi


@dataclass
class Tolerances:
    """Outer-loop termination and norm-accuracy settings."""

    tol_g: float = 1e-6
    tol_value: float = 1e-6
    max_outer_iter: int = 30
    hinf_tol: float = 1e-8
    hinf_max_iter: int = 50

    def __post_init__(self):
        for name in ("tol_g", "tol_value", "hinf_tol"):
            if not getattr(self, name) > 0:
                raise ValidationError(f"{name} must be positive")
        if self.max_outer_iter < 1:
            raise ValidationError("max_outer_iter must be at least 1")


@dataclass
class InnerResult:
    g: np.ndarray
    value: float
    gradient: np.ndarray
    stationarity: float
    iterations: int
    evaluations: int
    status: str
    history: list = field(default_factory=list, repr=False)
    omega: float = float("nan")


def projected_gradient(x, grad, lo, hi):
    """Negative of the projection of -grad onto the tangent cone of [lo, hi] at x."""
    pg = grad.copy()
    at_lo = x <= lo
    at_hi = x >= hi
    pg[at_lo] = np.minimum(grad[at_lo], 0.0)
    pg[at_hi] = np.maximum(grad[at_hi], 0.0)
    return pg


def _min_norm_hull(G):
    # min ||G lam|| over the simplex, via NNLS with a heavily weighted sum row
    k = G.shape[1]
    if k == 1:
        return G[:, 0].copy()
    scale = max(np.abs(G).max(), 1e-300)
    rho = 1e4 * scale
    A = np.vstack([G, np.full((1, k), rho)])
    b = np.zeros(A.shape[0])
    b[-1] = rho
    lam, _ = nnls(A, b, maxiter=50 * k)
    if lam.sum() <= 0:
        lam = np.full(k, 1.0 / k)
    lam /= lam.sum()
    return G @ lam


class _Objective:
    """Memoizing wrapper; ``fun(x)`` returns ``(value, gradient, omega)``."""

    def __init__(self, fun):
        self.fun = fun
        self.cache = {}
        self.evaluations = 0

    def __call__(self, x):
        key = x.tobytes()
        if key not in self.cache:
            self.evaluations += 1
            try:
                f, g, w = self.fun(x)
            except (UnboundedNormError, la.LinAlgError, PoleProximityError):
                f, g, w = math.inf, None, float("nan")
            if not np.isfinite(f):
                f, g = math.inf, None
            self.cache[key] = (f, g, w)
        return self.cache[key]


def _bfgs_update(H, s, y):
    sy = float(s @ y)
    if not sy > 1e-12 * np.linalg.norm(s) * np.linalg.norm(y):
        return H, False
    rho = 1.0 / sy
    I = np.eye(s.size)
    V = I - rho * np.outer(s, y)
    return V @ H @ V.T + rho * np.outer(s, s), True


def minimize_bounded(fun, x0, cfg=None):
    """Minimize a locally Lipschitz ``fun`` over the box of ``cfg``.

    Parameters
    ----------
    fun : callable
        ``fun(x) -> (f, grad, omega)``; ``f = inf`` (or a raised
        :class:`UnboundedNormError`) marks points outside the domain, which
        the line search backs away from.
    x0 : array_like
        Starting point; projected onto the box.
    cfg : OptimizerConfig

    Returns
    -------
    InnerResult
        Accepted steps never increase ``f``.
    """
    cfg = cfg or OptimizerConfig()
    x = np.asarray(x0, dtype=float).ravel().copy()
    p = x.size
    lo, hi = cfg.bounds(p)
    x = np.clip(x, lo, hi)
    obj = _Objective(fun)
    f, gr, w = obj(x)
    if not np.isfinite(f):
        raise ReducedModelError(f"objective is unbounded at the starting point {x}")
    rng = np.random.default_rng(cfg.seed)
    nsample = cfg.sample_size or 2 * p + 2
    H = np.eye(p)
    scaled = False
    history = [(x.copy(), f)]
    status = "max-iter"
    stall = 0
    it = 0
    stat = np.linalg.norm(projected_gradient(x, gr, lo, hi))
    while True:
        if stat <= cfg.stationarity_tol:
            status = "stationary"
            break
        if it >= cfg.max_inner_iter:
            break
        it += 1
        step = _bfgs_step(obj, x, f, gr, H, lo, hi, cfg)
        if isinstance(step, str):
            status = "stalled"
            break
        sampled = False
        if step is None:
            step = _sampling_step(obj, x, f, gr, lo, hi, cfg, rng, nsample)
            sampled = True
            if step is None:
                status = "sampled-stationary"
                break
        x_new, f_new, g_new, w_new = step
        log.debug("inner %d: f=%.15g -> %.15g stat=%.3e %s evals=%d", it, f, f_new, stat,
                  "sampled" if sampled else "bfgs", obj.evaluations)
        s = x_new - x
        y = g_new - gr
        if not sampled:
            if not scaled and float(y @ y) > 0 and float(s @ y) > 0:
                H = (float(s @ y) / float(y @ y)) * np.eye(p)
                scaled = True
            H, _ = _bfgs_update(H, s, y)
        small = np.linalg.norm(s) <= cfg.xtol * (1.0 + np.linalg.norm(x))
        flat = f - f_new <= cfg.xtol * max(abs(f), 1e-300)
        x, f, gr, w = x_new, f_new, g_new, w_new
        history.append((x.copy(), f))
        stat = np.linalg.norm(projected_gradient(x, gr, lo, hi))
        stall = stall + 1 if (small or flat) else 0
        if stall >= cfg.max_stall:
            status = "stalled"
            break
    return InnerResult(x, f, gr, float(stat), it, obj.evaluations, status, history, w)


def _max_step(x, d, lo, hi):
    t = math.inf
    neg = d < 0
    if np.any(neg):
        t = min(t, float(np.min((lo[neg] - x[neg]) / d[neg])))
    pos = (d > 0) & np.isfinite(hi)
    if np.any(pos):
        t = min(t, float(np.min((hi[pos] - x[pos]) / d[pos])))
    return max(t, 0.0)


def _bfgs_step(obj, x, f, gr, H, lo, hi, cfg):
    free = ~(((x <= lo) & (gr > 0)) | ((x >= hi) & (gr < 0)))
    d = np.zeros_like(x)
    if not np.any(free):
        return None
    Hf = H[np.ix_(free, free)]
    d[free] = -Hf @ gr[free]
    gd = float(gr @ d)
    if not gd < 0:
        d = np.zeros_like(x)
        d[free] = -gr[free]
        gd = float(gr @ d)
        if not gd < 0:
            return None
    if -gd <= cfg.ftol * abs(f):
        return "roundoff"
    tmax = _max_step(x, d, lo, hi)
    if tmax <= 0:
        return None
    return _weak_wolfe(obj, x, f, gd, d, tmax, lo, hi, cfg)


def _weak_wolfe(obj, x, f, gd, d, tmax, lo, hi, cfg):
    # bracketing/bisection line search for nonsmooth functions
    a, b = 0.0, math.inf
    t = min(1.0, tmax)
    best = None
    for _ in range(cfg.max_line_search):
        xt = np.clip(x + t * d, lo, hi)
        ft, gt, wt = obj(xt)
        if not np.isfinite(ft) or ft > f + cfg.wolfe_c1 * t * gd:
            b = t
        else:
            best = (xt, ft, gt, wt)
            if t >= tmax or float(gt @ d) >= cfg.wolfe_c2 * gd:
                return best
            a = t
        t = 0.5 * (a + b) if np.isfinite(b) else min(2.0 * a, tmax)
        if b - a <= 1e-16 * max(a, 1.0):
            break
    if best is not None and best[1] < f:
        return best
    return None


def _sampling_step(obj, x, f, gr, lo, hi, cfg, rng, nsample):
    p = x.size
    for radius in cfg.sampling_radii:
        eps = radius * (1.0 + np.linalg.norm(x))
        grads = [projected_gradient(x, gr, lo, hi)]
        for _ in range(nsample):
            u = rng.standard_normal(p)
            u *= eps * rng.uniform() ** (1.0 / p) / np.linalg.norm(u)
            xs = np.clip(x + u, lo, hi)
            fs, gs, _ = obj(xs)
            if gs is not None:
                grads.append(projected_gradient(x, gs, lo, hi))
        dmin = _min_norm_hull(np.column_stack(grads))
        dn = np.linalg.norm(dmin)
        if dn <= cfg.stationarity_tol:
            continue
        d = -dmin
        d[(x <= lo) & (d < 0)] = 0.0
        d[(x >= hi) & (d > 0)] = 0.0
        gd = -float(d @ d)
        if not gd < 0:
            continue
        t = min(1.0, _max_step(x, d, lo, hi)) or 1.0
        for _ in range(min(cfg.max_line_search, 20)):
            xt = np.clip(x + t * d, lo, hi)
            ft, gt, wt = obj(xt)
            if np.isfinite(ft) and ft <= f + cfg.wolfe_c1 * t * gd and ft < f:
                return xt, ft, gt, wt
            t *= 0.5
    return None


def reduced_objective(rom, dense_tol=1e-8):
    """``g -> (||F~(g, .)||_Linf, gradient, maximizing omega)`` for a reduced model."""

    def fun(g):
        res = linf_dense(rom.state_space(g), dense_tol)
        return res.value, rom.gradient(g, res.omega_star, res.sample), res.omega_star

    return fun


def minimize_reduced(rom, g0, cfg=None):
    """Minimize g -> ||F~(g, .)||_Linf over the feasible gains, starting at ``g0``.

    Raises
    ------
    ReducedModelError
        If the reduced model has unbounded norm at ``g0``.
    """
    cfg = cfg or OptimizerConfig()
    g0 = as_gains(g0, rom.p)
    return minimize_bounded(reduced_objective(rom, cfg.dense_tol), g0, cfg)


@dataclass
class TraceEntry:
    iteration: int
    g: np.ndarray
    omega: float
    reduced_value: float
    full_value: float
    rom_dimension: int
    inner_status: str = ""
    inner_iterations: int = 0
    repairs: int = 0
    note: str = ""


@dataclass
class DampingOptResult:
    g_star: np.ndarray
    hinf_value: float
    outer_iterations: int
    rom_dimension_final: int
    trace: list
    termination_reason: str
    omega_star: float = float("nan")
    factorizations: int = 0
    norm_evaluations: int = 0
    initial_values: list = field(default_factory=list)


def check_mode(mode):
    """Normalize a mode label; the SAMDP-based modes are rejected."""
    m = str(mode).strip().lower()
    if m in ("ii", "iv"):
        raise ValidationError(
            f"mode {mode!r} needs the SAMDP dominant-pole solver, which is not implemented; "
            "use mode 'i' or 'iii' (see README)"
        )
    if m not in MODES:
        raise ValidationError(f"unknown mode {mode!r}; expected one of {MODES}")
    return m


def _converged(a, b, tol):
    diff = np.linalg.norm(np.atleast_1d(a) - np.atleast_1d(b))
    return diff == 0.0 or diff < 0.5 * tol * np.linalg.norm(np.atleast_1d(a) + np.atleast_1d(b))


def _repair(acl, bases, rec, solve, max_repairs):
    repairs = 0
    for pair in range(1, max_repairs + 1):
        rom = reduce(acl, bases)
        rep = check_hermite(acl, rom, rec, derivative="analytic", solve=solve)
        if rep.ok:
            break
        log.info("Hermite check failed at omega=%.6g (%s); adding singular pair %d", rec.omega, rep, pair)
        r2 = expand(bases, acl, rec.g, rec.omega, solve=solve, pair_index=pair)
        repairs += 1
        if r2.added == 0:
            break
    return repairs


#: reduced peaks within this fraction of the reduced norm are checked against the full model
PEAK_CHECK_REL = 1e-3


def _correct_reduced_peaks(acl, rom, bases, g, w_hat, directions, tol):
    """Interpolate at near-maximal reduced peaks that the full model does not confirm.

    The inner minimizer may stop where an interpolated peak meets a spurious
    reduced one; expanding at the latter removes that artificial kink.
    Returns the frequencies that were added.
    """
    try:
        peaks = peak_census(rom.state_space(g))
    except (UnboundedNormError, la.LinAlgError):
        return []
    if not peaks:
        return []
    top = peaks[0][0]
    added = []
    for s_r, w in peaks:
        if s_r < (1.0 - PEAK_CHECK_REL) * top:
            break
        if abs(w - w_hat) <= 1e-6 * max(abs(w_hat), 1e-8):
            continue
        try:
            solve = factorize(acl, g, 1j * w)
        except PoleProximityError:
            continue
        s_f = eval_sigma_max(acl, g, w, solve=solve).sigma_max
        if abs(s_r - s_f) > tol * max(s_f, 1e-300):
            rec = expand(bases, acl, g, w, directions, solve=solve)
            if not rec.stagnated:
                added.append(float(w))
    return added


def optimize_damping(sys, init_gains, mode="iii", cfg=None, tols=None, *, heuristic_count=30,
                     samples=30, directions="tangential", hermite_repair=True):
    """Locally H-infinity-optimal damper gains by greedy parametric interpolation.

    Parameters
    ----------
    sys : VibrationalSystem
    init_gains : sequence of array_like
        Initial parameters; the first reduced model interpolates at these.
    mode : {"i", "iii"}
        ``"i"``: tangential interpolation at ``samples`` equidistant
        frequencies in [0, omega_max] per initial gain.  ``"iii"``: one point
        per initial gain, at its full-order H-infinity maximizer.
    cfg : OptimizerConfig
        Inner solver settings.
    tols : Tolerances
        Outer termination tolerances.
    heuristic_count : int
        Number of dominant-mode frequencies seeding every full-order
        H-infinity computation.

    Returns
    -------
    DampingOptResult
        The iterate with the smallest full-order norm.  All values in the
        trace are full-order evaluations.
    """
    mode = check_mode(mode)
    cfg = cfg or OptimizerConfig()
    tols = tols or Tolerances()
    gains = [as_gains(g, sys.p) for g in init_gains]
    if not gains:
        raise ValidationError("need at least one initial gain vector")
    acl = assemble_closed_loop(sys)
    md = modal_transform(sys.M, sys.K)
    count = min(heuristic_count, sys.n)
    fac0 = counters["factorizations"]

    def heuristic(g, extra=()):
        w = initial_frequencies(sys, g, count, modal=md)
        return np.concatenate([w, np.asarray(extra, dtype=float)])

    init_values = []
    if mode == "i":
        freqs = np.linspace(0.0, float(md.Omega.max()), samples)
        bases = initial_bases(acl, gains, [freqs] * len(gains), directions)
        rom0 = reduce(acl, bases)
        for g in gains:
            try:
                init_values.append(linf_dense(rom0.state_space(g), cfg.dense_tol).value)
            except (UnboundedNormError, la.LinAlgError):
                init_values.append(math.inf)
    else:
        points = []
        for g in gains:
            r = hinf_greedy(acl, g, heuristic(g), tols.hinf_tol, tols.hinf_max_iter)
            init_values.append(r.value)
            points.append([r.omega_star])
        bases = initial_bases(acl, gains, points, directions)
    best_init = gains[int(np.argmin(init_values))]
    # (full value, gain) of the best point seen; mode i only has reduced initial values
    best_known = (min(init_values) if mode == "iii" else math.inf, best_init)

    trace = []
    reason = "max-iter"
    start = best_init
    omega_prev = []
    max_repairs = min(sys.m, sys.l) - 1 if hermite_repair else 0
    for j in range(1, tols.max_outer_iter + 1):
        note = ""
        rom = reduce(acl, bases)
        inner = None
        for attempt in range(3):
            try:
                inner = minimize_reduced(rom, start, cfg)
                break
            except ReducedModelError:
                # the reduced model is defective at the start point: refine it there
                r = hinf_greedy(acl, start, heuristic(start, omega_prev), tols.hinf_tol, tols.hinf_max_iter)
                expand(bases, acl, start, r.omega_star, directions)
                rom = reduce(acl, bases)
                note += f"re-expanded at start (attempt {attempt + 1}); "
        if inner is None:
            note += "reduced model unbounded at start; "
            inner_g, inner_val, inner_status, inner_it = start, math.inf, "failed", 0
        else:
            stuck = inner.iterations <= 1 and inner.status == "sampled-stationary"
            worse = bool(trace) and trace[-1].full_value > best_known[0]
            if (stuck or worse) and not np.array_equal(start, best_known[1]):
                # the warm start is stuck, or sits where the full model is worse than a known
                # point; solve from the best known gain as well
                try:
                    alt = minimize_reduced(rom, best_known[1], cfg)
                    if alt.value < inner.value:
                        inner = alt
                        note += "restart from best known gain; "
                except ReducedModelError:
                    pass
            inner_g, inner_val, inner_status, inner_it = inner.g, inner.value, inner.status, inner.iterations
        ghat = as_gains(inner_g, sys.p)
        full = hinf_greedy(acl, ghat, heuristic(ghat, omega_prev), tols.hinf_tol, tols.hinf_max_iter)
        w_hat = full.omega_star
        repairs = 0
        try:
            solve = factorize(acl, ghat, 1j * w_hat)
            rec = expand(bases, acl, ghat, w_hat, directions, solve=solve)
            if rec.stagnated:
                note += "expansion stagnated; "
            elif max_repairs > 0 and directions == "tangential":
                repairs = _repair(acl, bases, rec, solve, max_repairs)
        except PoleProximityError as exc:
            note += f"expansion skipped: {exc}; "
        corrected = _correct_reduced_peaks(acl, rom, bases, ghat, w_hat, directions, tols.hinf_tol)
        if corrected:
            note += "corrected reduced peaks at " + ", ".join(f"{w:.6g}" for w in corrected) + "; "
        trace.append(TraceEntry(j, ghat.copy(), float(w_hat), float(inner_val), float(full.value), bases.k,
                                inner_status, inner_it, repairs, note.strip()))
        if full.value < best_known[0]:
            best_known = (full.value, ghat)
        log.info("outer %d: g=%s omega=%.6g reduced=%.12g full=%.12g k=%d %s", j, ghat, w_hat, inner_val,
                 full.value, bases.k, note)
        if j > 1 and not corrected:
            prev = trace[-2]
            if _converged(ghat, prev.g, tols.tol_g):
                reason = "gains-tol"
                break
            if np.isfinite(inner_val) and _converged(inner_val, prev.reduced_value, tols.tol_value):
                reason = "value-tol"
                break
        start = ghat
        omega_prev = [w_hat] + omega_prev[:4]

    best = min(trace, key=lambda t: (t.full_value, t.iteration))
    return DampingOptResult(
        g_star=best.g.copy(),
        hinf_value=best.full_value,
        outer_iterations=len(trace),
        rom_dimension_final=bases.k,
        trace=trace,
        termination_reason=reason,
        omega_star=best.omega,
        factorizations=counters["factorizations"] - fac0,
        initial_values=[float(v) for v in init_values],
    )
