"""Interpolatory projection bases and parametric reduced-order models.

Columns D(g, i w)^{-1} cB d go into V and D(g, i w)^{-H} cC^H e into W, so the
reduced transfer function

    F~(g, s) = Ct (s Et - At0 + sum_j g_j w_j v_j^T)^{-1} Bt

matches F (and its derivatives in s and g) at every sampled (g, i w) along
the chosen directions.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as la

from .linf import StateSpace, linf_dense
from .model import as_gains, factorize, sample_from_matrix

__all__ = [
    "InterpolationRecord",
    "ProjectionBasisPair",
    "ReducedParametricModel",
    "HermiteReport",
    "interpolation_directions",
    "initial_bases",
    "expand",
    "reduce",
    "check_hermite",
]

#: relative projection residual under which a new column counts as in-span
RANK_TOL = 1e-10

MODES = ("full", "padded", "tangential")


@dataclass
class InterpolationRecord:
    g: np.ndarray
    omega: float
    mode: str
    right: np.ndarray
    left: np.ndarray
    added: int = 0
    sample: object = field(default=None, repr=False)
    note: str = ""

    @property
    def stagnated(self):
        return self.added == 0


class ProjectionBasisPair:
    """Orthonormal V, W (same column count) plus the log of interpolation data."""

    def __init__(self, V, W, log=None):
        self.V = V
        self.W = W
        self.log = [] if log is None else log

    @classmethod
    def empty(cls, dim):
        return cls(np.zeros((dim, 0), dtype=complex), np.zeros((dim, 0), dtype=complex))

    @property
    def k(self):
        return self.V.shape[1]

    def copy(self):
        return ProjectionBasisPair(self.V.copy(), self.W.copy(), list(self.log))

    def add_columns(self, Vnew, Wnew):
        """Orthonormalize new column pairs against the bases and append them.

        A pair is kept only if both of its columns leave a relative residual
        above ``RANK_TOL``, which keeps the column counts equal.
        """
        Vnew = np.asarray(Vnew, dtype=complex)
        Wnew = np.asarray(Wnew, dtype=complex)
        vscale = np.linalg.norm(Vnew, axis=0).max(initial=0.0)
        wscale = np.linalg.norm(Wnew, axis=0).max(initial=0.0)
        added = 0
        for j in range(Vnew.shape[1]):
            v, rv = _orth(self.V, Vnew[:, j], vscale)
            if v is None:
                continue
            w, rw = _orth(self.W, Wnew[:, j], wscale)
            if w is None:
                continue
            self.V = np.column_stack([self.V, v])
            self.W = np.column_stack([self.W, w])
            added += 1
        return added


def _orth(Q, x, scale):
    # modified Gram-Schmidt with one reorthogonalization pass
    if scale == 0.0:
        return None, 0.0
    x = x.copy()
    for _ in range(2):
        for i in range(Q.shape[1]):
            q = Q[:, i]
            x -= q * np.vdot(q, x)
    r = np.linalg.norm(x)
    if r <= RANK_TOL * scale:
        return None, r / scale
    return x / r, r / scale


def interpolation_directions(sample, mode, m=None, l=None):  # noqa: E741
    """Right (m x q) and left (l x q) tangential directions for one sample.

    ``full`` uses all inputs and outputs and falls back to ``padded`` when
    m != l.  ``padded`` keeps every direction on the smaller side and
    compresses the larger side through F (or F^H), so both sides contribute
    min(m, l) columns.  ``tangential`` uses the dominant singular pair.
    """
    F = sample.F
    l_, m_ = F.shape
    m = m_ if m is None else m
    l = l_ if l is None else l  # noqa: E741
    if mode == "full" and m != l:
        mode = "padded"
    if mode == "full" or (mode == "padded" and m == l):
        return np.eye(m, dtype=complex), np.eye(l, dtype=complex)
    if mode == "padded":
        if l > m:
            return np.eye(m, dtype=complex), F.astype(complex)
        return F.conj().T.astype(complex), np.eye(l, dtype=complex)
    if mode == "tangential":
        return sample.u.reshape(-1, 1), sample.v.reshape(-1, 1)
    raise ValueError(f"unknown interpolation mode {mode!r}")


def expand(bases, acl, g, omega, mode="tangential", *, solve=None, pair_index=None):
    """Add the interpolation columns at (g, i omega) to ``bases`` in place.

    ``pair_index`` selects a non-dominant singular pair (Hermite repair).
    Returns the appended :class:`InterpolationRecord`; ``record.stagnated``
    is set when nothing new entered the span.
    """
    g = as_gains(g, acl.p)
    if solve is None:
        solve = factorize(acl, g, 1j * omega)
    smp = sample_from_matrix(solve.transfer, g, omega)
    if pair_index is not None:
        d = smp.right_vectors[:, [pair_index]]
        e = smp.left_vectors[:, [pair_index]]
        rmode = "tangential"
    else:
        d, e = interpolation_directions(smp, mode)
        rmode = "padded" if mode == "full" and d.shape[0] != e.shape[0] else mode
    added = bases.add_columns(solve.right(d), solve.left(e))
    rec = InterpolationRecord(g=g, omega=float(omega), mode=rmode, right=d, left=e, added=added, sample=smp,
                              note="" if pair_index is None else f"repair pair {pair_index}")
    bases.log.append(rec)
    return rec


def initial_bases(acl, init_gains, init_freqs, mode="tangential"):
    """Bases from all (gain, frequency) samples; pole-adjacent samples are skipped."""
    from .model import PoleProximityError

    bases = ProjectionBasisPair.empty(2 * acl.n)
    if len(init_gains) != len(init_freqs):
        raise ValueError("need one frequency list per initial gain")
    for g, freqs in zip(init_gains, init_freqs):
        for w in np.atleast_1d(freqs):
            try:
                expand(bases, acl, g, float(w), mode)
            except PoleProximityError as exc:
                bases.log.append(InterpolationRecord(g=np.asarray(g, float), omega=float(w), mode=mode,
                                                     right=np.empty((0, 0)), left=np.empty((0, 0)),
                                                     note=f"skipped: {exc}"))
    if not bases.log:
        raise ValueError("need at least one (gain, frequency) pair")
    return bases


@dataclass
class ReducedParametricModel:
    """Projected pencil blocks; evaluation cost does not depend on n."""

    Et: np.ndarray
    At0: np.ndarray
    w: np.ndarray  # k x p, columns W^H l_j
    v: np.ndarray  # p x k, rows l_j^T V
    Bt: np.ndarray
    Ct: np.ndarray

    @property
    def k(self):
        return self.Et.shape[0]

    @property
    def p(self):
        return self.w.shape[1]

    def A(self, g):
        g = as_gains(g, self.p)
        return self.At0 - (self.w * g) @ self.v

    def pencil(self, g, s):
        return s * self.Et - self.A(g)

    def transfer(self, g, s):
        return self.Ct @ la.solve(self.pencil(g, s), self.Bt, check_finite=False)

    def sample(self, g, omega):
        return sample_from_matrix(self.transfer(g, 1j * omega), g, omega)

    def state_space(self, g):
        return StateSpace(self.Et, self.A(g), self.Bt, self.Ct)

    def linf(self, g, tol=1e-10, **kw):
        return linf_dense(self.state_space(g), tol, **kw)

    def gradient(self, g, omega, sample=None):
        """d sigma_max(F~(g, i omega)) / d g at fixed omega."""
        g = as_gains(g, self.p)
        lu = la.lu_factor(self.pencil(g, 1j * omega), check_finite=False)
        if sample is None:
            sample = sample_from_matrix(self.Ct @ la.lu_solve(lu, self.Bt, check_finite=False), g, omega)
        x = la.lu_solve(lu, self.Bt @ sample.u, check_finite=False)
        y = la.lu_solve(lu, self.Ct.conj().T @ sample.v, trans=2, check_finite=False)
        return -np.real(np.conj(self.w.conj().T @ y) * (self.v @ x))


def reduce(acl, bases):
    """Project the parametric pencil onto (V, W)."""
    sys = acl.system
    n = acl.n
    V, W = bases.V, bases.W
    V1, V2 = V[:n], V[n:]
    W1, W2 = W[:n], W[n:]
    W2h = W2.conj().T
    Et = W1.conj().T @ V1 + W2h @ (sys.M @ V2)
    At0 = W1.conj().T @ V2 - W2h @ (sys.K @ V1) - W2h @ (sys.C_int @ V2)
    return ReducedParametricModel(
        Et=Et,
        At0=At0,
        w=W2h @ sys.B2,
        v=sys.B2.T @ V2,
        Bt=W2h @ sys.E2,
        Ct=sys.H1 @ V1,
    )


@dataclass
class HermiteReport:
    omega: float
    mode: str
    value_residual: float
    sigma_residual: float
    derivative_residual: float
    tol: float
    deriv_tol: float

    @property
    def value_ok(self):
        return self.value_residual <= self.tol and self.sigma_residual <= self.tol

    @property
    def derivative_ok(self):
        return self.derivative_residual <= self.deriv_tol

    @property
    def ok(self):
        return self.value_ok and self.derivative_ok


def _fd4(f, x, h):
    return (-f(x + 2 * h) + 8 * f(x + h) - 8 * f(x - h) + f(x - 2 * h)) / (12 * h)


def _reduced_dF(rom, g, w):
    # d/d omega F~(g, i omega) = -i Ct R Et R Bt with R = (i omega Et - A(g))^{-1}
    lu = la.lu_factor(rom.pencil(g, 1j * w), check_finite=False)
    X = la.lu_solve(lu, rom.Bt, check_finite=False)
    return -1j * (rom.Ct @ la.lu_solve(lu, rom.Et @ X, check_finite=False))


def check_hermite(acl, rom, record, tol=1e-8, deriv_tol=1e-4, *, derivative="fd", solve=None):
    """Verify interpolation at a logged point.

    Value conditions: F u = F~ u and v^H F = v^H F~ (tangential, plus equal
    sigma_max) or F = F~ (full/padded).  The frequency-derivative condition
    is checked by fourth-order central differences on both models, or with
    ``derivative="analytic"`` from resolvent products (one factorization of
    the full model, reusing ``solve`` if given).  Finite differences lose
    accuracy on very sharp peaks, where the analytic form should be used.
    """
    if derivative not in ("fd", "analytic"):
        raise ValueError(f"derivative must be 'fd' or 'analytic', got {derivative!r}")
    g, w = record.g, record.omega
    if solve is None:
        solve = factorize(acl, g, 1j * w)
    F = solve.transfer
    try:
        Ft = rom.transfer(g, 1j * w)
    except la.LinAlgError:
        # a singular reduced pencil interpolates nothing
        inf = float("inf")
        return HermiteReport(float(w), record.mode, inf, inf, inf, tol, deriv_tol)
    smp = sample_from_matrix(F, g, w)
    smpt = sample_from_matrix(Ft, g, w)
    sig = max(smp.sigma_max, np.finfo(float).tiny)
    h = 1e-4 * max(abs(w), 1e-2)
    sigma_res = abs(smpt.sigma_max - smp.sigma_max) / sig
    if derivative == "analytic":
        dF = 1j * solve.derivative()
        dFt = _reduced_dF(rom, g, w)
    else:
        dF = _fd4(lambda x: factorize(acl, g, 1j * x).transfer, w, h)
        dFt = _fd4(lambda x: rom.transfer(g, 1j * x), w, h)
    if record.mode == "tangential":
        d, e = record.right, record.left
        vr = np.linalg.norm((F - Ft) @ d, 2) / sig
        vl = np.linalg.norm(e.conj().T @ (F - Ft), 2) / sig
        value_res = max(vr, vl)
        if derivative == "analytic":
            df = float(np.real(smp.v.conj() @ dF @ smp.u))
            dr = float(np.real(smpt.v.conj() @ dFt @ smpt.u))
        else:
            df = _fd4(lambda x: la.svdvals(factorize(acl, g, 1j * x).transfer)[0], w, h)
            dr = _fd4(lambda x: la.svdvals(rom.transfer(g, 1j * x))[0], w, h)
        deriv_res = abs(df - dr) / max(abs(df), sig)
    else:
        value_res = np.linalg.norm(F - Ft, 2) / sig
        # only the compressed block is matched for padded records
        e, d = record.left, record.right
        ref = np.linalg.norm(e.conj().T @ dF @ d, 2)
        deriv_res = np.linalg.norm(e.conj().T @ (dF - dFt) @ d, 2) / max(ref, sig)
    return HermiteReport(float(w), record.mode, float(value_res), float(sigma_res), float(deriv_res), tol, deriv_tol)
