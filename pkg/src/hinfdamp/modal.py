"""Modal coordinates, critical damping and dominance-based frequency selection."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg as la

from .model import ValidationError, as_gains, _dense

__all__ = [
    "ModalData",
    "DominanceTable",
    "modal_transform",
    "critical_damping",
    "undamped_residue_norms",
    "real_part_estimates",
    "dominance_table",
    "initial_frequencies",
    "max_undamped_frequency",
]

#: floor applied to real-part estimates before dividing
RE_FLOOR = 1e-30


@dataclass(frozen=True)
class ModalData:
    """Mass-normalized modes ``Phi`` and natural frequencies ``Omega`` (decreasing)."""

    Phi: np.ndarray
    Omega: np.ndarray


@dataclass(frozen=True)
class DominanceTable:
    omega: np.ndarray
    residue_norm: np.ndarray
    re_estimate: np.ndarray
    score: np.ndarray
    rank: np.ndarray
    infinite: np.ndarray

    def order(self):
        """Mode indices sorted by decreasing score."""
        return np.argsort(self.rank, kind="stable")


def modal_transform(M, K):
    """Solve K phi = w^2 M phi with Phi^T M Phi = I; frequencies in decreasing order.

    Ties keep the eigensolver's order.
    """
    M = _dense(M)
    K = _dense(K)
    try:
        w2, Phi = la.eigh(K, M)
    except la.LinAlgError as exc:
        raise ValidationError("M must be symmetric positive definite") from exc
    if np.any(w2 <= 0):
        raise ValidationError("K must be symmetric positive definite")
    omega = np.sqrt(w2)
    order = np.argsort(-omega, kind="stable")
    return ModalData(Phi=Phi[:, order], Omega=omega[order])


def critical_damping(M, K, modal=None):
    """C_crit = 2 M^{1/2} (M^{-1/2} K M^{-1/2})^{1/2} M^{1/2} = 2 M Phi diag(Omega) Phi^T M."""
    md = modal if modal is not None else modal_transform(M, K)
    MPhi = _dense(M) @ md.Phi
    C = 2.0 * (MPhi * md.Omega) @ MPhi.T
    return 0.5 * (C + C.T)


def undamped_residue_norms(md, H1, E2):
    """||R_{0,i}||_2 = |H1 phi_i| |E2^T phi_i| / (2 omega_i) for each mode."""
    h = np.linalg.norm(np.asarray(H1) @ md.Phi, axis=0)
    e = np.linalg.norm(np.asarray(E2).T @ md.Phi, axis=0)
    return 0.5 * h * e / md.Omega


def real_part_estimates(md, C):
    """First-order estimate |Re lambda_i| ~ phi_i^T C phi_i / 2."""
    C = _dense(C)
    return 0.5 * np.einsum("ij,ij->j", md.Phi, C @ md.Phi)


def dominance_table(sys, g, modal=None):
    g = as_gains(g, sys.p)
    md = modal if modal is not None else modal_transform(sys.M, sys.K)
    res = undamped_residue_norms(md, sys.H1, sys.E2)
    re = real_part_estimates(md, sys.damping(g))
    infinite = (re <= 0) & (res > 0)
    score = res / np.maximum(re, RE_FLOOR)
    order = np.argsort(-score, kind="stable")
    rank = np.empty_like(order)
    rank[order] = np.arange(order.size)
    return DominanceTable(
        omega=md.Omega,
        residue_norm=res,
        re_estimate=re,
        score=score,
        rank=rank,
        infinite=infinite,
    )


def initial_frequencies(sys, g, count=30, modal=None):
    """Natural frequencies of the ``count`` most dominant modes at gains ``g``.

    Dominance is ``||R_{0,i}^+|| / |Re lambda_i^+|`` with the residue norm taken
    from the undamped system and the real part from first-order perturbation.
    """
    if count < 0 or count > sys.n:
        raise ValueError(f"count must lie in [0, {sys.n}], got {count}")
    table = dominance_table(sys, g, modal=modal)
    return table.omega[table.order()[:count]].copy()


def max_undamped_frequency(M, K):
    """Largest modulus among eigenvalues of s^2 M + K."""
    w2 = la.eigvalsh(_dense(K), _dense(M))
    return float(np.sqrt(w2.max()))
