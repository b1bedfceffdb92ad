"""Leap-frog time stepping for the mixed first-order wave system.

All schemes share one semi-discrete form

    Mv v' = G' p,        Mp p' = -G v + F(t),

with velocity at integer and pressure at half-integer time levels.  One step
maps ``(v^n, p^{n+1/2})`` to ``(v^{n+1}, p^{n+3/2})`` using the load at
``t_{n+1}``.  The quadratic form

    E^n = 1/2 v^n' Mv v^n + 1/2 p^{n-1/2}' Mp p^{n+1/2}

is exactly conserved when ``F = 0``.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field, replace

import numpy as np
import scipy.sparse as sp

from .basis import OfflineSpace
from .fem import AssembledForms, Spaces, build_spaces, assemble_forms
from .linalg import BlockDiagonalOperator, SparseSPDFactor, estimate_spectral_radius
from .medium import SourceConfig, load_vector, ricker_time

__all__ = [
    "InstabilityError",
    "ReductionError",
    "DiagonalOperator",
    "SparseOperator",
    "LeapfrogSystem",
    "ReducedSystem",
    "WaveState",
    "History",
    "reduce_system",
    "fine_system",
    "coupled_rt0_system",
    "leapfrog_step",
    "initial_state",
    "stable_dt",
    "time_grid",
    "run_leapfrog",
    "run_fine_reference",
    "run_gmsfem",
    "run_coupled_rt0",
    "write_energy_trace",
    "read_energy_trace",
    "source_norm_bound",
]


class InstabilityError(FloatingPointError):
    """The time integration produced non-finite values."""


class ReductionError(RuntimeError):
    """The reduced velocity mass couples different initial triangles."""


class DiagonalOperator:
    def __init__(self, d):
        self.d = np.asarray(d, dtype=float)
        if np.any(self.d <= 0):
            raise ValueError("diagonal mass must be positive")
        self.n = len(self.d)

    def solve(self, b):
        return b / self.d if np.ndim(b) == 1 else b / self.d[:, None]

    def matvec(self, v):
        return self.d * v

    def to_sparse(self):
        return sp.diags(self.d).tocsr()


class SparseOperator:
    """Sparse SPD matrix with a direct factorization for solves."""

    def __init__(self, M):
        self.M = sp.csr_matrix(M)
        self.n = self.M.shape[0]
        self._fac = SparseSPDFactor(self.M)

    def solve(self, b):
        return self._fac.solve(b)

    def matvec(self, v):
        return self.M @ v

    def to_sparse(self):
        return self.M


@dataclass(eq=False)
class LeapfrogSystem:
    """Operators of one scheme; ``load`` is the spatial load, scaled by the wavelet."""

    Mv: object
    Mp: object
    G: sp.csr_matrix
    load: np.ndarray
    name: str = "system"

    @property
    def n_velocity(self) -> int:
        return self.G.shape[1]

    @property
    def n_pressure(self) -> int:
        return self.G.shape[0]

    def scaled(self, s_kappa: float, s_rho: float) -> "LeapfrogSystem":
        return replace(self, Mv=_scale_op(self.Mv, s_kappa), Mp=_scale_op(self.Mp, s_rho))


def _scale_op(op, s):
    if isinstance(op, DiagonalOperator):
        return DiagonalOperator(op.d * s)
    if isinstance(op, SparseOperator):
        return SparseOperator(op.M * s)
    return BlockDiagonalOperator([(idx, M * s) for idx, M in op.blocks], n=op.n)


@dataclass(eq=False)
class ReducedSystem(LeapfrogSystem):
    D: sp.csr_matrix | None = None
    J: sp.csr_matrix | None = None
    Mv_sparse: sp.csr_matrix | None = None
    Mp_sparse: sp.csr_matrix | None = None
    space: OfflineSpace | None = None
    cross_block_max: float = 0.0


def reduce_system(space: OfflineSpace, forms: AssembledForms, load_fine: np.ndarray | None = None,
                  tol: float = 1e-14) -> ReducedSystem:
    """Galerkin projection of the fine decoupled scheme onto ``space``.

    Velocity mass entries between different initial triangles are checked
    against ``tol`` and then dropped; anything larger aborts.
    """
    Phi = sp.csc_matrix(space.Phi)
    Mv = (Phi.T @ forms.Mv_hat @ Phi).tocoo()
    cross = space.v_block[Mv.row] != space.v_block[Mv.col]
    cross_max = float(np.abs(Mv.data[cross]).max()) if np.any(cross) else 0.0
    if cross_max > tol:
        raise ReductionError(f"velocity mass couples initial triangles (|entry| = {cross_max:.3e})")
    keep = ~cross
    Mv = sp.csr_matrix((Mv.data[keep], (Mv.row[keep], Mv.col[keep])), shape=Mv.shape)
    Mv = 0.5 * (Mv + Mv.T)
    Mv_op = BlockDiagonalOperator.from_sparse(Mv, space.v_block)

    MpI = space.Psi_I.T @ sp.diags(forms.Mp) @ space.Psi_I
    MpB = space.Psi_B.T @ sp.diags(forms.Mp_pen) @ space.Psi_B
    Mp = sp.block_diag([MpI, MpB], format="csr")
    Mp = 0.5 * (Mp + Mp.T)
    if Mp.nnz == Mp.shape[0] and np.all(Mp.diagonal() > 0) and (Mp - sp.diags(Mp.diagonal())).nnz == 0:
        Mp_op = DiagonalOperator(Mp.diagonal())
    else:
        Mp_op = BlockDiagonalOperator.from_sparse(Mp, space.p_block)

    D = (space.Psi_I.T @ forms.D_hat @ Phi).tocsr()
    J = (space.Psi_B.T @ forms.J @ Phi).tocsr()
    G = sp.vstack([D, -J]).tocsr()
    nB = space.Psi_B.shape[1]
    load = np.zeros(G.shape[0])
    if load_fine is not None:
        load[: D.shape[0]] = space.Psi_I.T @ load_fine
    return ReducedSystem(Mv_op, Mp_op, G, load, "gmsfem", D=D, J=J, Mv_sparse=Mv, Mp_sparse=Mp,
                         space=space, cross_block_max=cross_max)


def fine_system(spaces: Spaces, forms: AssembledForms, load_fine: np.ndarray | None = None) -> LeapfrogSystem:
    """Reference scheme on the decoupled fine spaces, assembled directly."""
    G = forms.G_hat
    load = np.zeros(G.shape[0])
    if load_fine is not None:
        load[: forms.D_hat.shape[0]] = load_fine
    return LeapfrogSystem(SparseOperator(forms.Mv_hat), DiagonalOperator(forms.Mp_hat), G, load, "fine")


def coupled_rt0_system(spaces: Spaces, forms: AssembledForms, load_fine: np.ndarray | None = None) -> LeapfrogSystem:
    """Classical RT0 scheme: one global velocity mass, no penalty pressure."""
    load = np.zeros(forms.D.shape[0]) if load_fine is None else np.asarray(load_fine, dtype=float)
    return LeapfrogSystem(SparseOperator(forms.Mv), DiagonalOperator(forms.Mp), forms.D.tocsr(), load,
                          "coupled-rt0")


@dataclass(eq=False)
class WaveState:
    """``v`` at ``t_n``, ``p`` at ``t_{n+1/2}`` and ``p_prev`` at ``t_{n-1/2}``."""

    v: np.ndarray
    p: np.ndarray
    p_prev: np.ndarray
    step: int
    dt: float

    @property
    def t(self) -> float:
        return self.step * self.dt

    def p_sync(self) -> np.ndarray:
        """Pressure at ``t_n`` (average of the neighbouring half steps)."""
        return 0.5 * (self.p + self.p_prev)


def initial_state(sys: LeapfrogSystem, dt: float, v0=None, p0=None) -> WaveState:
    """Start from ``(v^0, p^0)``; the half steps are taken by a Taylor step of the
    unforced equation, exact for zero data."""
    v0 = np.zeros(sys.n_velocity) if v0 is None else np.array(v0, dtype=float)
    p0 = np.zeros(sys.n_pressure) if p0 is None else np.array(p0, dtype=float)
    dp = 0.5 * dt * sys.Mp.solve(sys.G @ v0)
    return WaveState(v0, p0 - dp, p0 + dp, 0, float(dt))


def leapfrog_step(sys: LeapfrogSystem, st: WaveState, wavelet: float = 0.0) -> WaveState:
    """Advance one step; ``wavelet`` is the temporal source factor at ``t_{n+1}``."""
    dt = st.dt
    v = st.v + dt * sys.Mv.solve(sys.G.T @ st.p)
    rhs = -(sys.G @ v)
    if wavelet:
        rhs = rhs + wavelet * sys.load
    p = st.p + dt * sys.Mp.solve(rhs)
    if not (np.all(np.isfinite(v)) and np.all(np.isfinite(p))):
        raise InstabilityError(f"non-finite values at step {st.step + 1}; time step too large?")
    return WaveState(v, p, st.p, st.step + 1, dt)


def energies(sys: LeapfrogSystem, st: WaveState):
    """(E_v, E_p) of the exactly conserved form at ``t_n``."""
    ev = 0.5 * float(st.v @ sys.Mv.matvec(st.v))
    ep = 0.5 * float(st.p_prev @ sys.Mp.matvec(st.p))
    return ev, ep


def physical_energy(sys: LeapfrogSystem, st: WaveState) -> float:
    """1/2 (|v|_V^2 + |p|_Q^2) at ``t_n`` with the synchronized pressure."""
    ps = st.p_sync()
    return 0.5 * float(st.v @ sys.Mv.matvec(st.v) + ps @ sys.Mp.matvec(ps))


def stable_dt(sys: LeapfrogSystem, safety: float = 0.9, tol: float = 1e-6, maxiter: int = 100000,
              seed: int = 0) -> float:
    """``safety * 2 / sqrt(lambda_max)`` for the operator ``Mv^-1 G' Mp^-1 G``."""
    G, GT = sys.G, sys.G.T.tocsr()
    lam = estimate_spectral_radius(lambda x: GT @ sys.Mp.solve(G @ x), sys.Mv.solve, sys.n_velocity,
                                   tol=tol, maxiter=maxiter, seed=seed, applyM=sys.Mv.matvec)
    if lam <= 0:
        return math.inf
    return safety * 2.0 / math.sqrt(lam)


def time_grid(T: float, dt_max: float):
    """Largest step not exceeding ``dt_max`` that divides ``T`` evenly."""
    if T <= 0:
        return dt_max, 0
    n = max(1, math.ceil(T / dt_max * (1 - 1e-12)))
    return T / n, n


@dataclass(eq=False)
class History:
    """Output of a run: final state, sampled states and the energy trace."""

    system: LeapfrogSystem
    final: WaveState
    dt: float
    n_steps: int
    snapshots: list = field(default_factory=list)
    energy: np.ndarray | None = None
    physical: np.ndarray | None = None
    wall: float = 0.0

    @property
    def T(self) -> float:
        return self.n_steps * self.dt


def run_leapfrog(sys: LeapfrogSystem, dt: float, n_steps: int, wavelet=None, v0=None, p0=None,
                 snapshot_every: int = 0, record_energy: bool = True) -> History:
    """Integrate ``n_steps`` steps; ``wavelet(t)`` is the temporal source factor."""
    st = initial_state(sys, dt, v0, p0)
    rows, phys, snaps = [], [], []

    def record(s):
        if record_energy:
            ev, ep = energies(sys, s)
            rows.append((s.step, s.t, ev, ep, ev + ep))
            phys.append(physical_energy(sys, s))
        if snapshot_every and s.step % snapshot_every == 0:
            snaps.append((s.step, s.t, s.v.copy(), s.p_sync()))

    t0 = time.perf_counter()
    record(st)
    for _ in range(n_steps):
        w = float(wavelet((st.step + 1) * dt)) if wavelet is not None else 0.0
        st = leapfrog_step(sys, st, w)
        record(st)
    wall = time.perf_counter() - t0
    energy = np.array(rows) if record_energy else None
    return History(sys, st, dt, n_steps, snaps, energy, np.array(phys) if record_energy else None, wall)


def _wavelet(source: SourceConfig | None):
    if source is None:
        return None
    return lambda t: ricker_time(t, source.f0)


def _fine_parts(sm, medium, spaces=None, forms=None):
    if spaces is None:
        spaces = build_spaces(sm.fine, sm.skeleton, sm.edge_sets)
    if forms is None:
        forms = assemble_forms(sm.fine, medium, spaces)
    return spaces, forms


def run_fine_reference(sm, medium, source: SourceConfig | None, T: float, dt: float | None = None,
                       safety: float = 0.9, snapshot_every: int = 0, spaces=None, forms=None) -> History:
    spaces, forms = _fine_parts(sm, medium, spaces, forms)
    load = load_vector(sm.fine, source) if source is not None else None
    sys = fine_system(spaces, forms, load)
    if dt is None:
        dt = stable_dt(sys, safety)
    dt, n = time_grid(T, dt)
    return run_leapfrog(sys, dt, n, _wavelet(source), snapshot_every=snapshot_every)


def run_gmsfem(sm, medium, source: SourceConfig | None, T: float, space: OfflineSpace,
               dt: float | None = None, safety: float = 0.9, snapshot_every: int = 0,
               spaces=None, forms=None) -> History:
    spaces, forms = _fine_parts(sm, medium, spaces, forms)
    load = load_vector(sm.fine, source) if source is not None else None
    sys = reduce_system(space, forms, load)
    if dt is None:
        dt = stable_dt(sys, safety)
    dt, n = time_grid(T, dt)
    return run_leapfrog(sys, dt, n, _wavelet(source), snapshot_every=snapshot_every)


def run_coupled_rt0(sm, medium, source: SourceConfig | None, T: float, dt: float | None = None,
                    safety: float = 0.9, snapshot_every: int = 0, spaces=None, forms=None) -> History:
    spaces, forms = _fine_parts(sm, medium, spaces, forms)
    load = load_vector(sm.fine, source) if source is not None else None
    sys = coupled_rt0_system(spaces, forms, load)
    if dt is None:
        dt = stable_dt(sys, safety)
    dt, n = time_grid(T, dt)
    return run_leapfrog(sys, dt, n, _wavelet(source), snapshot_every=snapshot_every)


def source_norm_bound(sm, medium, source: SourceConfig, dt: float, n_steps: int) -> float:
    """``4 (int_0^T |f/rho|_Q dt)^2`` by the composite trapezoid rule on the step grid.

    The spatial norm uses the same centroid quadrature as the load.
    """
    g = load_vector(sm.fine, source) / sm.fine.areas
    space_norm = math.sqrt(float(np.sum(g**2 * sm.fine.areas / medium.rho)))
    t = np.arange(n_steps + 1) * dt
    vals = space_norm * np.abs(ricker_time(t, source.f0))
    integral = dt * (vals.sum() - 0.5 * (vals[0] + vals[-1]))
    return 4.0 * integral**2


def write_energy_trace(h: History, path) -> None:
    """One line per step: ``step time E_v E_p E_total``."""
    with open(path, "w") as fh:
        fh.write("# step time E_v E_p E_total\n")
        for step, t, ev, ep, et in h.energy:
            fh.write(f"{int(step)} {t:.17g} {ev:.17g} {ep:.17g} {et:.17g}\n")


def read_energy_trace(path) -> np.ndarray:
    return np.loadtxt(path, comments="#", ndmin=2)
