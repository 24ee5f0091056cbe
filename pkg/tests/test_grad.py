import warnings

import numpy as np
import pytest
import scipy.linalg as la

from hinfdamp.bench import full_hinf
from hinfdamp.grad import (
    NonsmoothPointError,
    NonsmoothPointWarning,
    gradient_context,
    hinf_gradient,
    smoothness_diagnostics,
)
from hinfdamp.linf import StateSpace, linf_dense
from hinfdamp.model import VibrationalSystem, assemble_closed_loop, first_order_dense

from conftest import random_system, scalar_system
from oracles import system_first_order


def _hinf(sys, g):
    return full_hinf(sys, g, 1e-13)


def _grad_at_max(sys, g):
    acl = assemble_closed_loop(sys)
    res = _hinf(sys, g)
    return hinf_gradient(acl, gradient_context(acl, g, res.omega_star)), res


def _fd(sys, g, rel=1e-6):
    g = np.asarray(g, float)
    out = np.empty(g.size)
    for j in range(g.size):
        h = rel * max(1.0, g[j])
        e = np.zeros(g.size)
        e[j] = h
        out[j] = (_hinf(sys, g + e).value - _hinf(sys, g - e).value) / (2 * h)
    return out


def _literal_gradient(sys, g, omega, u, v):
    # each component from its own resolvent product with L_j = l_j l_j^T
    E, A, B, C = system_first_order(sys, g)
    n = sys.n
    D = 1j * omega * E - A
    out = []
    for j in range(sys.p):
        lj = np.concatenate([np.zeros(n), sys.B2[:, j]])
        Lj = np.outer(lj, lj)
        dF = -C @ la.solve(D, Lj @ la.solve(D, B))
        out.append(np.real(v.conj() @ dF @ u))
    return np.array(out)


@pytest.mark.parametrize("seed", range(6))
def test_gradient_matches_central_differences(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(2, 11))
    p = int(rng.integers(1, 4))
    sys = random_system(rng, n, p=p)
    g = rng.uniform(0.1, 2.0, p)
    acl = assemble_closed_loop(sys)
    grad, res = _grad_at_max(sys, g)
    rep = smoothness_diagnostics(acl, g, res)
    if not (rep.relative_singular_gap > 1e-3 and rep.relative_peak_gap > 1e-3):
        pytest.skip("instance too close to a nonsmooth point for differences")
    fd = _fd(sys, g)
    np.testing.assert_allclose(grad, fd, rtol=1e-5, atol=1e-5 * np.abs(fd).max())


@pytest.mark.parametrize("seed", range(5))
def test_two_solve_formula_equals_literal(seed):
    rng = np.random.default_rng(50 + seed)
    sys = random_system(rng, int(rng.integers(2, 11)), p=3)
    g = rng.uniform(0.0, 3.0, 3)
    acl = assemble_closed_loop(sys)
    w = float(rng.uniform(0.2, 2.0))
    ctx = gradient_context(acl, g, w)
    lit = _literal_gradient(sys, g, w, ctx.sample.u, ctx.sample.v)
    np.testing.assert_allclose(hinf_gradient(acl, ctx), lit, rtol=1e-10, atol=1e-10 * np.abs(lit).max())


def test_context_vectors_consistent(rng):
    sys = random_system(rng, 6)
    acl = assemble_closed_loop(sys)
    g, w = [0.5, 1.0], 0.8
    ctx = gradient_context(acl, g, w)
    E, A, B, C = first_order_dense(acl, g)
    D = 1j * w * E - A
    np.testing.assert_allclose(D @ ctx.x, B @ ctx.sample.u, atol=1e-12 * np.linalg.norm(B))
    np.testing.assert_allclose(D.conj().T @ ctx.y, C.conj().T @ ctx.sample.v, atol=1e-12 * np.linalg.norm(C))
    assert ctx.singular_gap >= 0


def test_decoupled_damper_has_zero_component():
    # mass 3 is neither excited, observed, nor connected to the rest
    M = np.eye(3)
    K = np.array([[2.0, -1.0, 0.0], [-1.0, 2.0, 0.0], [0.0, 0.0, 3.0]])
    B2 = np.array([[1.0, 0.0], [-1.0, 0.0], [0.0, 1.0]])
    sys = VibrationalSystem(M, K, 0.05 * np.eye(3), B2, [[1.0], [0.0], [0.0]], [[0.0, 1.0, 0.0]])
    grad, _ = _grad_at_max(sys, [0.3, 0.7])
    assert grad[1] == 0.0 and grad[0] != 0.0


def test_scalar_family_sign_consistency(rng):
    # collocated single damper on one mass: more damping lowers the resonance peak
    sys = scalar_system(c=0.02)
    for g in rng.uniform(0.0, 1.5, 20):
        grad, _ = _grad_at_max(sys, [g])
        fd = _fd(sys, [g])
        assert np.sign(grad[0]) == np.sign(fd[0])


def test_scalar_passes_singular_value_check():
    sys = scalar_system(c=0.1)
    acl = assemble_closed_loop(sys)
    rep = smoothness_diagnostics(acl, [0.2], _hinf(sys, [0.2]))
    assert rep.simple_singular_value and rep.smooth


def _twin_resonators():
    # two identical decoupled unit oscillators, each with its own input and output
    return VibrationalSystem(np.eye(2), np.eye(2), 0.02 * np.eye(2), np.eye(2), np.eye(2), np.eye(2))


def test_identical_resonators_fail_unique_peak():
    # decoupled resonators at omega = 1 and 2 with the same damping ratio and equal peak heights
    M = np.eye(2)
    K = np.diag([1.0, 4.0])
    C = np.diag([0.02, 0.04])
    E2 = np.diag([1.0, 4.0])  # equal damping ratios; the input weights equalize both peaks
    sys = VibrationalSystem(M, K, C, np.eye(2), E2, np.eye(2))
    acl = assemble_closed_loop(sys)
    res = _hinf(sys, [0.0, 0.0])
    rep = smoothness_diagnostics(acl, [0.0, 0.0], res)
    assert rep.near_equal_peaks(1e-10) == 2
    assert rep.simple_singular_value and not rep.unique_peak and not rep.smooth
    twin = _twin_resonators()
    rep2 = smoothness_diagnostics(assemble_closed_loop(twin), [0.0, 0.0], _hinf(twin, [0.0, 0.0]))
    assert not rep2.simple_singular_value and not rep2.smooth


def test_repeated_singular_value_warns_or_raises():
    twin = _twin_resonators()
    acl = assemble_closed_loop(twin)
    res = _hinf(twin, [0.0, 0.0])
    ctx = gradient_context(acl, [0.0, 0.0], res.omega_star)
    with pytest.raises(NonsmoothPointError) as ei:
        hinf_gradient(acl, ctx, strict=True)
    assert ei.value.context is ctx
    with pytest.warns(NonsmoothPointWarning):
        warnings.simplefilter("always", NonsmoothPointWarning)
        g = hinf_gradient(acl, ctx)
    assert np.all(np.isfinite(g))


def test_problem_a_analog_has_near_equal_peaks(desk_a):
    # full-order optimum of the (3, 11) configuration, computed once by naive_optimize
    acl = assemble_closed_loop(desk_a)
    g = [110.73472385, 114.14138879]
    res = linf_dense(StateSpace(*first_order_dense(acl, g)), 1e-12)
    assert res.value == pytest.approx(56.859641516815934, rel=1e-8)
    rep = smoothness_diagnostics(acl, g, res)
    assert rep.near_equal_peaks(1e-6) >= 2 and rep.near_equal_peaks(0.1) >= 3
    assert not rep.unique_peak


def test_problem_b_analog_is_smooth(desk_b):
    acl = assemble_closed_loop(desk_b)
    g = [100.0, 100.0]
    res = linf_dense(StateSpace(*first_order_dense(acl, g)), 1e-12)
    rep = smoothness_diagnostics(acl, g, res)
    assert rep.smooth
    assert rep.sigma_max == pytest.approx(res.value, rel=1e-10)
