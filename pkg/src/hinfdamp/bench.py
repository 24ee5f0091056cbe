"""The n-mass oscillator benchmark, configuration sweeps and the full-order oracle."""
from __future__ import annotations

import logging
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np
import scipy.linalg as la

from .grad import GradientContext, hinf_gradient
from .linf import StateSpace, linf_dense
from .modal import critical_damping, modal_transform
from .model import (
    ValidationError,
    VibrationalSystem,
    as_gains,
    assemble_closed_loop,
    counters,
    first_order_dense,
)
from .optim import (
    DampingOptResult,
    OptimizerConfig,
    TraceEntry,
    check_mode,
    minimize_bounded,
    optimize_damping,
)

log = logging.getLogger(__name__)

__all__ = [
    "OscillatorSpec",
    "PROBLEMS",
    "build_oscillator",
    "paper_masses",
    "paper_spec",
    "desk_spec",
    "desk_positions",
    "naive_optimize",
    "full_hinf",
    "SweepRow",
    "sweep_configurations",
]

#: internal damping fraction and initial gains per benchmark problem
PROBLEMS = {
    "a": dict(alpha_c=1e-5, init_gains=((10.0, 10.0), (10.0, 100.0), (100.0, 10.0), (100.0, 100.0))),
    "b": dict(alpha_c=1e-2, init_gains=((100.0, 100.0), (100.0, 1000.0), (1000.0, 100.0), (1000.0, 1000.0))),
}

#: dense full-order oracle refuses larger systems unless explicitly allowed
NAIVE_MAX_N = 200


@dataclass(frozen=True)
class OscillatorSpec:
    """Chain of n masses between two walls, joined by n + 1 springs.

    Indices are 1-based as in the usual structural notation.  ``inputs`` is a
    list of ``(first_mass, weights)`` blocks; block i excites masses
    ``first_mass, first_mass + 1, ...`` through its own input columns.
    ``outputs`` is the inclusive range of observed masses.
    """

    n: int
    stiffness: tuple
    masses: tuple
    alpha_c: float
    positions: tuple
    outputs: tuple
    inputs: tuple

    def validate(self):
        n = self.n
        if n < 2:
            raise ValidationError("need at least two masses")
        if len(self.stiffness) != n + 1 or len(self.masses) != n:
            raise ValidationError("need n + 1 stiffness values and n masses")
        if min(self.stiffness) <= 0 or min(self.masses) <= 0:
            raise ValidationError("masses and stiffnesses must be positive")
        if self.alpha_c < 0:
            raise ValidationError("alpha_c must be nonnegative")
        for j in self.positions:
            if not 1 <= j < n:
                raise ValidationError(f"damper position {j} needs 1 <= j < {n}")
        a, b = self.outputs
        if not 1 <= a <= b <= n:
            raise ValidationError(f"output range {self.outputs} outside [1, {n}]")
        for first, weights in self.inputs:
            if first < 1 or first + len(weights) - 1 > n:
                raise ValidationError(f"input block at {first} outside [1, {n}]")
        return self

    def with_positions(self, *positions):
        return replace(self, positions=tuple(int(j) for j in positions))

    def with_alpha(self, alpha_c):
        return replace(self, alpha_c=float(alpha_c))


def paper_masses(n=700):
    """Piecewise-linear masses with the break at 3n/7, scaled from the n = 700 chain.

    For n = 700 this is m_i = 200.3 - 0.6 i (i <= 300) and 0.4 i - 100.2 (i > 300).
    """
    i = np.arange(1, n + 1)
    t = i * (700.0 / n)
    return np.where(t <= 300.0, 200.3 - 0.6 * t, 0.4 * t - 100.2)


def paper_spec(alpha_c=1e-2, positions=(40, 60)):
    """The 700-mass chain: 20 observed middle masses, 5 + 5 excited end masses."""
    w = (5.0, 4.0, 3.0, 2.0, 1.0)
    return OscillatorSpec(
        n=700,
        stiffness=(10.0,) * 701,
        masses=tuple(paper_masses(700)),
        alpha_c=alpha_c,
        positions=tuple(positions),
        outputs=(290, 309),
        inputs=((1, w), (696, w)),
    ).validate()


def desk_spec(alpha_c=1e-2, positions=(3, 11), n=50):
    """Small analog of :func:`paper_spec`: 4 observed middle masses, 2 + 2 excited end masses."""
    mid = n // 2
    w = (2.0, 1.0)
    return OscillatorSpec(
        n=n,
        stiffness=(10.0,) * (n + 1),
        masses=tuple(paper_masses(n)),
        alpha_c=alpha_c,
        positions=tuple(positions),
        outputs=(mid - 1, mid + 2),
        inputs=((1, w), (n - 1, w)),
    ).validate()


def desk_positions():
    """Damper positions of the 2 x 2 desk sweep: j in {3, 24}, k in {11, 40}."""
    return (3, 24), (11, 40)


def build_oscillator(spec: OscillatorSpec) -> VibrationalSystem:
    """Assemble M, K, C_int = alpha_c C_crit, B2, E2 and H1 for ``spec``."""
    spec.validate()
    n = spec.n
    k = np.asarray(spec.stiffness, dtype=float)
    M = np.diag(np.asarray(spec.masses, dtype=float))
    K = np.diag(k[:-1] + k[1:]) - np.diag(k[1:-1], 1) - np.diag(k[1:-1], -1)
    C_int = spec.alpha_c * critical_damping(M, K, modal_transform(M, K))
    B2 = np.zeros((n, len(spec.positions)))
    for c, j in enumerate(spec.positions):
        B2[j - 1, c] = 1.0
        B2[j, c] = -1.0
    m = sum(len(wts) for _, wts in spec.inputs)
    E2 = np.zeros((n, m))
    col = 0
    for first, wts in spec.inputs:
        for r, wt in enumerate(wts):
            E2[first - 1 + r, col] = wt
            col += 1
    a, b = spec.outputs
    H1 = np.zeros((b - a + 1, n))
    H1[np.arange(b - a + 1), np.arange(a - 1, b)] = 1.0
    return VibrationalSystem(M, K, C_int, B2, E2, H1)


def _dense_objective(acl, dense_tol):
    def fun(g):
        E, A, B, C = first_order_dense(acl, g)
        ss = StateSpace(E, A, B, C)
        counters["norm_evaluations"] += 1
        res = linf_dense(ss, dense_tol)
        w = res.omega_star
        smp = res.sample
        P = 1j * w * E - A
        lu = la.lu_factor(P, check_finite=False)
        x = la.lu_solve(lu, B @ smp.u, check_finite=False)
        y = la.lu_solve(lu, C.conj().T @ smp.v, trans=2, check_finite=False)
        ctx = GradientContext(smp, x, y, smp.singular_gap)
        return res.value, hinf_gradient(acl, ctx), w

    return fun


def full_hinf(sys, g, dense_tol=1e-10):
    """H-infinity norm of the full model via the dense first-order realization."""
    acl = assemble_closed_loop(sys)
    return linf_dense(StateSpace(*first_order_dense(acl, as_gains(g, sys.p))), dense_tol)


def naive_optimize(sys, g0, cfg=None, *, allow_large=False):
    """Optimize the gains directly on the dense full-order objective.

    Every objective evaluation is a dense level-set norm computation on the
    2n-dimensional first-order realization.  Refuses n > 200 unless
    ``allow_large`` is set.
    """
    if sys.n > NAIVE_MAX_N and not allow_large:
        raise ValidationError(f"naive optimization of n = {sys.n} > {NAIVE_MAX_N} needs allow_large=True")
    cfg = cfg or OptimizerConfig()
    acl = assemble_closed_loop(sys)
    g0 = as_gains(g0, sys.p)
    ev0 = counters["norm_evaluations"]
    res = minimize_bounded(_dense_objective(acl, cfg.dense_tol), g0, cfg)
    trace = [TraceEntry(i, g.copy(), float("nan"), float("nan"), float(f), 2 * sys.n)
             for i, (g, f) in enumerate(res.history)]
    return DampingOptResult(
        g_star=res.g.copy(),
        hinf_value=float(res.value),
        outer_iterations=res.iterations,
        rom_dimension_final=2 * sys.n,
        trace=trace,
        termination_reason=res.status,
        omega_star=float(res.omega),
        norm_evaluations=counters["norm_evaluations"] - ev0,
    )


@dataclass
class SweepRow:
    config_id: int
    j: int
    k: int
    problem: str
    mode: str
    result: DampingOptResult | None
    oracle: DampingOptResult | None = None
    rel_gain_err: float = float("nan")
    rel_hinf_err: float = float("nan")
    wall_seconds: float = float("nan")
    oracle_seconds: float = float("nan")
    error: str = ""
    extra: dict = field(default_factory=dict)


def _problem(problem):
    if isinstance(problem, str):
        key = problem.lower()
        if key not in PROBLEMS:
            raise ValidationError(f"unknown problem {problem!r}")
        return key, PROBLEMS[key]["alpha_c"], PROBLEMS[key]["init_gains"]
    name, alpha, gains = problem
    return str(name), float(alpha), tuple(tuple(g) for g in gains)


def _run_row(args):
    (cid, base, j, k, problem, mode, cfg, tols, oracle, heuristic_count, samples) = args
    name, alpha, gains = _problem(problem)
    row = SweepRow(cid, j, k, name, mode, None)
    try:
        spec = base.with_positions(j, k).with_alpha(alpha)
        sys = build_oscillator(spec)
        t0 = time.perf_counter()
        fac0 = counters["factorizations"]
        res = optimize_damping(sys, gains, mode, cfg, tols, heuristic_count=heuristic_count, samples=samples)
        row.wall_seconds = time.perf_counter() - t0
        res.factorizations = counters["factorizations"] - fac0
        row.result = res
        if oracle:
            t0 = time.perf_counter()
            ora = naive_optimize(sys, gains[0], cfg, allow_large=oracle == "long")
            row.oracle_seconds = time.perf_counter() - t0
            row.oracle = ora
            gs, go = res.g_star, ora.g_star
            row.rel_gain_err = float(np.linalg.norm(go - gs) / max(np.linalg.norm(go), 1e-300))
            row.rel_hinf_err = float(abs(ora.hinf_value - res.hinf_value) / ora.hinf_value)
    except Exception as exc:  # a failed configuration must not stop the sweep
        log.exception("configuration %d (j=%d, k=%d) failed", cid, j, k)
        row.error = f"{type(exc).__name__}: {exc}"
    return row


def sweep_configurations(base, j_set, k_set, problems, modes, cfg=None, *, tols=None, oracle=False,
                         jobs=1, heuristic_count=30, samples=30):
    """Run the optimizer for every (j, k, problem, mode) combination.

    Parameters
    ----------
    base : OscillatorSpec
        Everything except the damper positions and alpha_c.
    problems : sequence
        ``"a"``, ``"b"`` or ``(name, alpha_c, init_gains)`` triples.
    oracle : bool or "long"
        Also run :func:`naive_optimize` and record relative errors.
        ``"long"`` lifts the size guard.
    jobs : int
        Worker processes; rows are independent, results keep sweep order.

    Returns
    -------
    list of SweepRow
    """
    if not j_set or not k_set or not problems or not modes:
        raise ValidationError("sweep sets must be nonempty")
    modes = [check_mode(m) for m in modes]
    tasks = []
    cid = 0
    for problem in problems:
        for mode in modes:
            for j in j_set:
                for k in k_set:
                    cid += 1
                    tasks.append((cid, base, int(j), int(k), problem, mode, cfg, tols, oracle,
                                  heuristic_count, samples))
    if jobs > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as ex:
            return list(ex.map(_run_row, tasks))
    return [_run_row(t) for t in tasks]
