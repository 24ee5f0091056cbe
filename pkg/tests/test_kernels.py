import os
import subprocess
import sys

import numpy as np
import pytest

from hinfdamp import _kernels_py, kernels

from oracles import random_stable_model, sigma_grid


def _modal(rng, k, m, l):  # noqa: E741
    poles = -10.0 ** rng.uniform(-3, 0, k) + 1j * rng.uniform(-5, 5, k)
    Cm = rng.standard_normal((l, k)) + 1j * rng.standard_normal((l, k))
    Bm = rng.standard_normal((k, m)) + 1j * rng.standard_normal((k, m))
    return poles, Cm, Bm


def _direct(omegas, poles, Cm, Bm):
    return np.array([np.linalg.svd((Cm / (1j * w - poles)) @ Bm, compute_uv=False)[0] for w in omegas])


@pytest.mark.parametrize("shape", [(1, 1), (1, 3), (2, 2), (3, 3), (3, 1), (4, 4), (20, 10), (5, 7)])
def test_python_kernel_matches_direct_svd(rng, shape):
    m, l = shape  # noqa: E741
    poles, Cm, Bm = _modal(rng, 12, m, l)
    w = np.linspace(-6, 6, 301)
    np.testing.assert_allclose(_kernels_py.sigma_max_modal(w, poles, Cm, Bm), _direct(w, poles, Cm, Bm),
                               rtol=1e-10)


@pytest.mark.skipif(kernels.BACKEND != "cython", reason="compiled extension not built")
@pytest.mark.parametrize("shape", [(1, 1), (1, 3), (2, 2), (3, 3), (3, 1), (4, 4), (20, 10), (5, 7)])
def test_compiled_kernel_matches_python(rng, shape):
    from hinfdamp import _kernels

    m, l = shape  # noqa: E741
    poles, Cm, Bm = _modal(rng, 30, m, l)
    w = np.linspace(-6, 6, 2001)
    a = _kernels.sigma_max_modal(w, np.ascontiguousarray(poles), np.ascontiguousarray(Cm),
                                 np.ascontiguousarray(Bm))
    b = _kernels_py.sigma_max_modal(w, poles, Cm, Bm)
    np.testing.assert_allclose(a, b, rtol=1e-10)


def test_kernel_matches_independent_grid(rng):
    E, A, B, C = random_stable_model(rng, 10, 2, 3)
    from hinfdamp.linf import StateSpace

    w = np.linspace(0, 6, 500)
    np.testing.assert_allclose(StateSpace(E, A, B, C).sigma_grid(w), sigma_grid(E, A, B, C, w), rtol=1e-9)


def test_empty_channels_give_zero():
    poles = np.array([-1.0 + 0j])
    out = _kernels_py.sigma_max_modal(np.array([0.0, 1.0]), poles, np.zeros((0, 1), complex),
                                      np.ones((1, 2), complex))
    np.testing.assert_array_equal(out, 0.0)


def test_fallback_selected_by_environment():
    code = "from hinfdamp import kernels; print(kernels.BACKEND)"
    env = dict(os.environ, HINFDAMP_PURE_PYTHON="1")
    out = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True, check=True)
    assert out.stdout.strip() == "python"
