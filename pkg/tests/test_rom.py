import numpy as np
import pytest
import scipy.linalg as la

from hinfdamp.bench import build_oscillator, desk_spec
from hinfdamp.linf import hinf_greedy
from hinfdamp.modal import initial_frequencies, modal_transform
from hinfdamp.model import assemble_closed_loop, eval_sigma_max, factorize, sample_from_matrix
from hinfdamp.rom import (
    RANK_TOL,
    ProjectionBasisPair,
    ReducedParametricModel,
    check_hermite,
    expand,
    initial_bases,
    interpolation_directions,
    reduce,
)

from conftest import random_system, scalar_system
from oracles import system_first_order, transfer


def _orthonormal(Q, tol=1e-12):
    return np.linalg.norm(Q.conj().T @ Q - np.eye(Q.shape[1]), 2) <= tol


def _sample(F):
    return sample_from_matrix(np.asarray(F, dtype=complex), np.empty(0), 0.3)


def test_directions_full_square():
    d, e = interpolation_directions(_sample(np.arange(4.0).reshape(2, 2) + 1j), "full")
    np.testing.assert_array_equal(d, np.eye(2))
    np.testing.assert_array_equal(e, np.eye(2))


def test_directions_padded_more_outputs(rng):
    F = rng.standard_normal((20, 10)) + 1j * rng.standard_normal((20, 10))
    d, e = interpolation_directions(_sample(F), "padded")
    assert d.shape == (10, 10) and e.shape == (20, 10)
    np.testing.assert_array_equal(d, np.eye(10))
    np.testing.assert_array_equal(e, F)


def test_directions_padded_more_inputs(rng):
    F = rng.standard_normal((3, 5)) + 1j * rng.standard_normal((3, 5))
    d, e = interpolation_directions(_sample(F), "padded")
    assert d.shape == (5, 3) and e.shape == (3, 3)
    np.testing.assert_allclose(d, F.conj().T)


def test_directions_tangential(rng):
    F = rng.standard_normal((3, 2)) + 1j * rng.standard_normal((3, 2))
    smp = _sample(F)
    d, e = interpolation_directions(smp, "tangential")
    assert d.shape == (2, 1) and e.shape == (3, 1)
    np.testing.assert_allclose(F @ d[:, 0], smp.sigma_max * e[:, 0], rtol=1e-12)


def test_directions_unknown_mode():
    with pytest.raises(ValueError):
        interpolation_directions(_sample([[1.0]]), "diagonal")


def test_scalar_full_mode_one_column():
    acl = assemble_closed_loop(scalar_system())
    bases = initial_bases(acl, [[0.5]], [[0.7]], "full")
    assert bases.k == 1


def test_duplicate_points_do_not_grow(desk_b):
    acl = assemble_closed_loop(desk_b)
    g = [100.0, 100.0]
    bases = initial_bases(acl, [g], [[0.02, 0.05]])
    k = bases.k
    rec = expand(bases, acl, g, 0.05)
    assert rec.stagnated and bases.k == k


def _chain700_mode_i_bases():
    from hinfdamp.bench import paper_spec

    sys = build_oscillator(paper_spec(1e-5, (40, 60)))
    acl = assemble_closed_loop(sys)
    wmax = modal_transform(sys.M, sys.K).Omega.max()
    gains = [[10.0, 10.0], [10.0, 100.0], [100.0, 10.0], [100.0, 100.0]]
    return initial_bases(acl, gains, [np.linspace(0.0, wmax, 30)] * 4, "tangential")


@pytest.fixture(scope="module")
def chain700_mode_i_bases():
    return _chain700_mode_i_bases()


@pytest.mark.slow
@pytest.mark.xfail(strict=True, reason="above about 0.55 rad/s the waves are evanescent in the heavy end "
                   "masses, so samples at different gains coincide to within the rank tolerance")
def test_chain700_mode_i_dimension(chain700_mode_i_bases):
    assert chain700_mode_i_bases.k == 120


@pytest.mark.slow
def test_chain700_mode_i_growth_accounting(chain700_mode_i_bases):
    b = chain700_mode_i_bases
    assert all(r.added == 1 for r in b.log[:30])
    assert b.k == sum(r.added for r in b.log)
    assert _orthonormal(b.V) and _orthonormal(b.W)
    # damping does not act at omega = 0; the other dropped samples are high-frequency ones
    dropped = np.array([r.omega for r in b.log[30:] if r.stagnated])
    assert np.sum(dropped == 0.0) == 3
    assert dropped[dropped > 0].min() > 0.45


def test_tangential_expand_adds_one(desk_b):
    acl = assemble_closed_loop(desk_b)
    bases = ProjectionBasisPair.empty(2 * desk_b.n)
    for i, w in enumerate(np.linspace(0.01, 0.3, 6), start=1):
        expand(bases, acl, [50.0, 70.0], w)
        assert bases.k == i
        assert _orthonormal(bases.V) and _orthonormal(bases.W)


def test_rank_tolerance_keeps_equal_counts():
    bases = ProjectionBasisPair.empty(4)
    v = np.array([[1.0], [0.0], [0.0], [0.0]])
    assert bases.add_columns(v, v) == 1
    # the V column lies in span(V) up to RANK_TOL, so the pair is dropped
    assert bases.add_columns(v + 0.1 * RANK_TOL * np.eye(4)[:, [1]], np.eye(4)[:, [2]]) == 0
    assert bases.V.shape == bases.W.shape == (4, 1)


def test_identity_bases_reproduce_full(rng):
    sys = random_system(rng, 4)
    acl = assemble_closed_loop(sys)
    I = np.eye(8, dtype=complex)
    rom = reduce(acl, ProjectionBasisPair(I, I))
    g, s = [0.3, 2.0], 0.4 + 1.1j
    np.testing.assert_allclose(rom.transfer(g, s), transfer(*system_first_order(sys, g), s), rtol=1e-12)


def test_random_bases_match_dense_projection(rng):
    sys = random_system(rng, 6)
    acl = assemble_closed_loop(sys)
    V = np.linalg.qr(rng.standard_normal((12, 3)) + 1j * rng.standard_normal((12, 3)))[0]
    W = np.linalg.qr(rng.standard_normal((12, 3)) + 1j * rng.standard_normal((12, 3)))[0]
    rom = reduce(acl, ProjectionBasisPair(V, W))
    g, s = [1.5, 0.2], 0.1 + 0.8j
    E, A, B, C = system_first_order(sys, g)
    ref = (C @ V) @ np.linalg.solve(W.conj().T @ (s * E - A) @ V, W.conj().T @ B)
    np.testing.assert_allclose(rom.transfer(g, s), ref, rtol=1e-11)


def test_one_column_scalar_pencil(rng):
    sys = random_system(rng, 3, p=1, m=1, l=1)
    acl = assemble_closed_loop(sys)
    v = rng.standard_normal((6, 1)) + 0j
    w = rng.standard_normal((6, 1)) + 0j
    v /= np.linalg.norm(v)
    w /= np.linalg.norm(w)
    rom = reduce(acl, ProjectionBasisPair(v, w))
    assert rom.k == 1
    E, A, B, C = system_first_order(sys, [0.7])
    s = 0.5j
    ref = (C @ v)[0, 0] * (w.conj().T @ B)[0, 0] / (w.conj().T @ (s * E - A) @ v)[0, 0]
    assert rom.transfer([0.7], s)[0, 0] == pytest.approx(ref, rel=1e-12)


def test_full_mode_value_interpolation(rng):
    sys = random_system(rng, 8)
    acl = assemble_closed_loop(sys)
    bases = initial_bases(acl, [[0.5, 1.0], [2.0, 0.1]], [[0.3, 1.2], [0.8]], "full")
    rom = reduce(acl, bases)
    for rec in bases.log:
        rep = check_hermite(acl, rom, rec)
        assert rep.value_residual <= 1e-8 and rep.ok


def test_tangential_point_derivative_match(desk_b):
    acl = assemble_closed_loop(desk_b)
    g = np.array([100.0, 100.0])
    bases = initial_bases(acl, [g], [[0.021, 0.05, 0.09]])
    rom = reduce(acl, bases)
    for rec in bases.log:
        rep = check_hermite(acl, rom, rec)
        assert rep.value_ok and rep.derivative_residual <= 1e-4
        rep2 = check_hermite(acl, rom, rec, derivative="analytic")
        assert rep2.derivative_residual <= 1e-6


def test_corrupted_basis_fails_check(desk_b):
    acl = assemble_closed_loop(desk_b)
    g = np.array([100.0, 100.0])
    bases = initial_bases(acl, [g], [[0.021, 0.05]])
    bad = bases.copy()
    bad.V = bad.V.copy()
    bad.V[:, 0] = 0.0
    rep = check_hermite(acl, reduce(acl, bad), bases.log[0])
    assert not rep.ok and rep.value_residual > rep.tol
    # replacing the column by an unrelated unit vector also breaks the match
    bad.V[:, 0] = np.eye(2 * desk_b.n)[:, 7]
    rep = check_hermite(acl, reduce(acl, bad), bases.log[0])
    assert not rep.ok and rep.value_residual > rep.tol


def test_check_hermite_rejects_bad_derivative_mode(desk_b):
    acl = assemble_closed_loop(desk_b)
    bases = initial_bases(acl, [[1.0, 1.0]], [[0.05]])
    with pytest.raises(ValueError):
        check_hermite(acl, reduce(acl, bases), bases.log[0], derivative="complex-step")


def test_stationarity_transfers_to_reduced_model(desk_b):
    acl = assemble_closed_loop(desk_b)
    g = [100.0, 100.0]
    res = hinf_greedy(acl, g, initial_frequencies(desk_b, g, 10))
    bases = initial_bases(acl, [g], [[res.omega_star]])
    rom = reduce(acl, bases)
    h = 1e-6 * res.omega_star
    f = lambda w: la.svdvals(rom.transfer(g, 1j * w))[0]  # noqa: E731
    slope = (f(res.omega_star + h) - f(res.omega_star - h)) / (2 * h)
    assert abs(slope) <= 1e-6 * res.value


def test_parameter_gradient_interpolation_full_mode(rng):
    from hinfdamp.grad import gradient_context, hinf_gradient

    sys = random_system(rng, 6)
    acl = assemble_closed_loop(sys)
    g, w = np.array([0.4, 1.3]), 0.9
    bases = initial_bases(acl, [g], [[w]], "full")
    rom = reduce(acl, bases)
    full = hinf_gradient(acl, gradient_context(acl, g, w))
    red = rom.gradient(g, w)
    np.testing.assert_allclose(red, full, rtol=1e-6, atol=1e-6 * np.abs(full).max())


def test_pole_adjacent_sample_is_skipped():
    acl = assemble_closed_loop(scalar_system(c=0.0))
    bases = initial_bases(acl, [[0.0]], [[1.0, 0.5]])
    assert bases.k == 1
    assert bases.log[0].note.startswith("skipped")


def test_initial_bases_argument_checks(desk_b):
    acl = assemble_closed_loop(desk_b)
    with pytest.raises(ValueError):
        initial_bases(acl, [[1.0, 1.0]], [])
    with pytest.raises(ValueError):
        initial_bases(acl, [], [])


def test_reduced_model_shapes(desk_b):
    acl = assemble_closed_loop(desk_b)
    bases = initial_bases(acl, [[1.0, 2.0]], [[0.03, 0.06, 0.09]])
    rom = reduce(acl, bases)
    assert isinstance(rom, ReducedParametricModel)
    assert (rom.k, rom.p) == (3, 2)
    assert rom.Bt.shape == (3, desk_b.m) and rom.Ct.shape == (desk_b.l, 3)


def test_repair_pair_index_uses_second_singular_pair(desk_b):
    acl = assemble_closed_loop(desk_b)
    g = np.array([10.0, 10.0])
    w = 0.05
    solve = factorize(acl, g, 1j * w)
    bases = ProjectionBasisPair.empty(2 * desk_b.n)
    rec = expand(bases, acl, g, w, solve=solve, pair_index=1)
    smp = eval_sigma_max(acl, g, w, solve=solve)
    assert rec.added == 1 and rec.note == "repair pair 1"
    assert abs(abs(np.vdot(rec.right[:, 0], smp.right_vectors[:, 1])) - 1) < 1e-12


def test_desk_family_builds():
    assert build_oscillator(desk_spec(1e-3, (5, 9), n=20)).n == 20
