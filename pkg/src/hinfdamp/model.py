"""Second-order vibrational systems and their parametric closed loop.

The closed loop with damper gains ``g`` is

    F(g, s) = H1 (s^2 M + s C(g) + K)^{-1} E2,   C(g) = C_int + B2 diag(g) B2^T,

which equals ``cC D(g, s)^{-1} cB`` for the first-order pencil

    D(g, s) = s E - A0 + sum_j g_j L_j,
    E = diag(I, M),  A0 = [[0, I], [-K, -C_int]],  L_j = [0; b_j] [0; b_j]^T.

All evaluations go through the n x n second-order matrix; the 2n x 2n pencil
is only materialized on request (dense oracles, reduced-model projection).
"""
from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path

import numpy as np
import scipy.io
import scipy.linalg as la
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy.linalg.lapack import zgecon

__all__ = [
    "ValidationError",
    "PoleProximityError",
    "VibrationalSystem",
    "AffineClosedLoop",
    "FrequencyResponseSample",
    "ShiftedSolve",
    "counters",
    "as_gains",
    "assemble_closed_loop",
    "factorize",
    "eval_transfer",
    "eval_sigma_max",
    "sample_from_matrix",
    "sigma_max_derivative",
    "first_order_dense",
    "load_matrix_market",
]

#: reciprocal condition number below which a shift counts as a pole
RCOND_MIN = 1e-14

#: instrumentation: number of full-order n x n factorizations performed
counters: Counter = Counter()


class ValidationError(ValueError):
    """Inconsistent or physically invalid system data."""


class PoleProximityError(ArithmeticError):
    """The shifted second-order matrix is numerically singular."""

    def __init__(self, s, rcond):
        super().__init__(f"s = {s!r} is numerically a pole (rcond = {rcond:.3e})")
        self.s = s
        self.rcond = rcond


def _dense(a):
    return a.toarray() if sp.issparse(a) else np.asarray(a, dtype=float)


def _check_spd(name, a, tol, semidefinite=False):
    ad = _dense(a)
    if ad.ndim != 2 or ad.shape[0] != ad.shape[1]:
        raise ValidationError(f"{name} must be square, got shape {ad.shape}")
    scale = max(np.abs(ad).max(initial=0.0), 1.0)
    if not np.allclose(ad, ad.T, rtol=0, atol=tol * scale):
        raise ValidationError(f"{name} is not symmetric")
    if ad.shape[0] == 0:
        return
    lam_min = la.eigvalsh(ad, subset_by_index=[0, 0])[0]
    if semidefinite:
        if lam_min < -tol * scale:
            raise ValidationError(f"{name} is not positive semidefinite (min eig {lam_min:.3e})")
    elif lam_min <= tol * scale:
        raise ValidationError(f"{name} is not positive definite (min eig {lam_min:.3e})")


@dataclass(frozen=True, eq=False)
class VibrationalSystem:
    """M q'' + C_int q' + K q = B2 u + E2 w,  z = H1 q,  with collocated y = B2^T q'.

    ``M``, ``K`` and ``C_int`` may be dense arrays or scipy sparse matrices.
    If all three are sparse, shifted solves use a sparse LU.
    """

    M: object
    K: object
    C_int: object
    B2: np.ndarray
    E2: np.ndarray
    H1: np.ndarray
    tol: float = 1e-12

    def __post_init__(self):
        for name in ("M", "K", "C_int"):
            a = getattr(self, name)
            if not sp.issparse(a):
                object.__setattr__(self, name, np.atleast_2d(np.asarray(a, dtype=float)))
        B2 = np.asarray(self.B2, dtype=float)
        E2 = np.asarray(self.E2, dtype=float)
        H1 = np.asarray(self.H1, dtype=float)
        n = self.M.shape[0]
        if B2.ndim == 1:
            B2 = B2.reshape(n, -1) if B2.size else np.zeros((n, 0))
        if E2.ndim == 1:
            E2 = E2.reshape(n, -1)
        H1 = np.atleast_2d(H1)
        object.__setattr__(self, "B2", B2)
        object.__setattr__(self, "E2", E2)
        object.__setattr__(self, "H1", H1)
        self.validate()

    @property
    def n(self):
        return self.M.shape[0]

    @property
    def p(self):
        return self.B2.shape[1]

    @property
    def m(self):
        return self.E2.shape[1]

    @property
    def l(self):  # noqa: E743
        return self.H1.shape[0]

    @property
    def is_sparse(self):
        return all(sp.issparse(a) for a in (self.M, self.K, self.C_int))

    def validate(self):
        n = self.n
        for name in ("M", "K", "C_int"):
            if getattr(self, name).shape != (n, n):
                raise ValidationError(f"{name} has shape {getattr(self, name).shape}, expected {(n, n)}")
        if self.B2.shape[0] != n:
            raise ValidationError(f"B2 has {self.B2.shape[0]} rows, expected {n}")
        if self.E2.shape[0] != n:
            raise ValidationError(f"E2 has {self.E2.shape[0]} rows, expected {n}")
        if self.H1.shape[1] != n:
            raise ValidationError(f"H1 has {self.H1.shape[1]} columns, expected {n}")
        _check_spd("M", self.M, self.tol)
        _check_spd("K", self.K, self.tol)
        _check_spd("C_int", self.C_int, self.tol, semidefinite=True)

    def damping(self, g):
        """C(g) = C_int + B2 diag(g) B2^T (dense, or sparse for sparse systems)."""
        g = as_gains(g, self.p)
        ext = (self.B2 * g) @ self.B2.T
        if self.is_sparse:
            return (self.C_int + sp.csr_matrix(ext)).tocsc()
        return self.C_int + ext


def as_gains(g, p):
    """Validate and return a gain vector as a float array of length ``p``."""
    g = np.atleast_1d(np.asarray(g, dtype=float)).ravel()
    if g.shape != (p,):
        raise ValidationError(f"expected {p} gains, got {g.shape[0]}")
    if np.any(g < 0) or not np.all(np.isfinite(g)):
        raise ValidationError(f"gains must be finite and nonnegative, got {g}")
    return g


@dataclass(frozen=True, eq=False)
class AffineClosedLoop:
    """First-order pencil D(g, s) = sE - A0 + sum_j g_j L_j with L_j = l_j l_j^T."""

    system: VibrationalSystem

    @property
    def n(self):
        return self.system.n

    @property
    def p(self):
        return self.system.p

    @property
    def b(self):
        """Damper vectors b_j as the columns of an n x p array."""
        return self.system.B2

    @cached_property
    def E(self):
        n = self.n
        E = np.zeros((2 * n, 2 * n))
        E[:n, :n] = np.eye(n)
        E[n:, n:] = _dense(self.system.M)
        return E

    @cached_property
    def A0(self):
        n = self.n
        A = np.zeros((2 * n, 2 * n))
        A[:n, n:] = np.eye(n)
        A[n:, :n] = -_dense(self.system.K)
        A[n:, n:] = -_dense(self.system.C_int)
        return A

    @cached_property
    def cB(self):
        return np.vstack([np.zeros((self.n, self.system.m)), self.system.E2])

    @cached_property
    def cC(self):
        return np.hstack([self.system.H1, np.zeros((self.system.l, self.n))])

    @cached_property
    def l_vectors(self):
        """l_j = [0; b_j] as the columns of a 2n x p array."""
        return np.vstack([np.zeros((self.n, self.p)), self.b])

    def pencil(self, g, s):
        """Dense D(g, s); for oracles and small problems only."""
        g = as_gains(g, self.p)
        L = self.l_vectors
        return s * self.E - self.A0 + (L * g) @ L.T


def assemble_closed_loop(sys):
    """Return the affine closed-loop pencil of ``sys``."""
    if not isinstance(sys, VibrationalSystem):
        raise ValidationError(f"expected a VibrationalSystem, got {type(sys).__name__}")
    sys.validate()
    return AffineClosedLoop(sys)


class ShiftedSolve:
    """One factorization of P(s) = s^2 M + s C(g) + K, reused for all solves at (g, s).

    P(s) is complex symmetric, so P(s)^{-H} x = conj(P(s)^{-1} conj(x)) and a single
    LU serves both D^{-1} cB and D^{-H} cC^H.
    """

    def __init__(self, acl, g, s):
        sys = acl.system
        self.acl = acl
        self.g = as_gains(g, sys.p)
        self.s = complex(s)
        s = self.s
        C = sys.damping(self.g)
        self._C = C
        counters["factorizations"] += 1
        if sys.is_sparse:
            P = (s * s * sys.M + s * C + sys.K).tocsc().astype(complex)
            try:
                self._lu = spla.splu(P)
            except RuntimeError as exc:
                raise PoleProximityError(s, 0.0) from exc
            diag = np.abs(self._lu.U.diagonal())
            rcond = diag.min() / diag.max() if diag.size else 1.0
            self._sparse = True
        else:
            P = (s * s) * sys.M + s * C + sys.K
            anorm = np.abs(P).sum(axis=0).max()
            lu, piv, info = la.lapack.zgetrf(P)
            if info > 0:
                raise PoleProximityError(s, 0.0)
            rcond, _ = zgecon(lu, anorm, norm="1")
            self._lu = (lu, piv)
            self._sparse = False
        self.rcond = float(rcond)
        if not self.rcond >= RCOND_MIN:
            raise PoleProximityError(s, self.rcond)

    def solve(self, rhs):
        """P(s)^{-1} rhs."""
        rhs = np.asarray(rhs, dtype=complex)
        if self._sparse:
            return self._lu.solve(rhs)
        x, info = la.lapack.zgetrs(self._lu[0], self._lu[1], rhs)
        return x

    def solve_adjoint(self, rhs):
        """P(s)^{-H} rhs."""
        return np.conj(self.solve(np.conj(rhs)))

    @cached_property
    def X1(self):
        """P(s)^{-1} E2 (n x m)."""
        return self.solve(self.acl.system.E2)

    @cached_property
    def transfer(self):
        return self.acl.system.H1 @ self.X1

    def right(self, d):
        """D(g, s)^{-1} cB d as a 2n x q array."""
        x1 = self.X1 @ np.asarray(d, dtype=complex).reshape(self.acl.system.m, -1)
        return np.vstack([x1, self.s * x1])

    def left(self, e):
        """D(g, s)^{-H} cC^H e as a 2n x q array."""
        sys = self.acl.system
        h = sys.H1.T @ np.asarray(e, dtype=complex).reshape(sys.l, -1)
        y2 = self.solve_adjoint(h)
        sc = np.conj(self.s)
        y1 = sc * (sys.M @ y2) + self._C @ y2
        return np.vstack([y1, y2])

    def derivative(self):
        """dF/ds = -H1 P^{-1} (2 s M + C) P^{-1} E2."""
        sys = self.acl.system
        t = 2 * self.s * (sys.M @ self.X1) + self._C @ self.X1
        return -sys.H1 @ self.solve(t)


def factorize(acl, g, s):
    """Factorize the second-order shifted matrix at (g, s)."""
    return ShiftedSolve(acl, g, s)


def eval_transfer(acl, g, s):
    """F(g, s) via the n x n second-order solve."""
    return factorize(acl, g, s).transfer


@dataclass
class FrequencyResponseSample:
    """F(g, i omega) with its dominant singular triple, phased so v^H F u > 0."""

    g: np.ndarray
    omega: float
    F: np.ndarray
    sigma_max: float
    u: np.ndarray
    v: np.ndarray
    singular_values: np.ndarray = field(repr=False)
    right_vectors: np.ndarray = field(repr=False)
    left_vectors: np.ndarray = field(repr=False)

    @property
    def singular_gap(self):
        s = self.singular_values
        return float(s[0] - s[1]) if s.size > 1 else float(s[0])


def sample_from_matrix(F, g, omega):
    """Build a :class:`FrequencyResponseSample` from an evaluated ``F``."""
    F = np.atleast_2d(F)
    U, s, Vh = la.svd(F, lapack_driver="gesvd")
    V = Vh.conj().T
    return FrequencyResponseSample(
        g=np.asarray(g, dtype=float),
        omega=float(omega),
        F=F,
        sigma_max=float(s[0]),
        u=V[:, 0],
        v=U[:, 0],
        singular_values=s,
        right_vectors=V,
        left_vectors=U,
    )


def eval_sigma_max(acl, g, omega, *, solve=None):
    """Largest singular value of F(g, i omega) and its singular vectors."""
    if solve is None:
        solve = factorize(acl, g, 1j * omega)
    return sample_from_matrix(solve.transfer, solve.g, omega)


def sigma_max_derivative(acl, g, omega, *, solve=None):
    """d/d omega of sigma_max(F(g, i omega)) for a simple largest singular value."""
    if solve is None:
        solve = factorize(acl, g, 1j * omega)
    smp = eval_sigma_max(acl, g, omega, solve=solve)
    dF = 1j * solve.derivative()
    return float(np.real(smp.v.conj() @ dF @ smp.u)), smp


def first_order_dense(acl, g):
    """Dense first-order realization (E, A(g), cB, cC) at fixed gains."""
    g = as_gains(g, acl.p)
    L = acl.l_vectors
    return acl.E, acl.A0 - (L * g) @ L.T, acl.cB, acl.cC


def load_matrix_market(M, K, C_int, B2, E2, H1):
    """Read a :class:`VibrationalSystem` from MatrixMarket files (paths)."""
    mats = {}
    for name, path in dict(M=M, K=K, C_int=C_int, B2=B2, E2=E2, H1=H1).items():
        a = scipy.io.mmread(Path(path))
        if name in ("B2", "E2", "H1") and sp.issparse(a):
            a = a.toarray()
        elif sp.issparse(a):
            a = a.tocsr()
        mats[name] = a
    sparse = [sp.issparse(mats[k]) for k in ("M", "K", "C_int")]
    if any(sparse) and not all(sparse):
        for k in ("M", "K", "C_int"):
            mats[k] = _dense(mats[k])
    return VibrationalSystem(**mats)
