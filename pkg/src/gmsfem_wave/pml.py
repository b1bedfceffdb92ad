"""Absorbing layer around the unit square.

The layer is a structured triangulated frame of fine cells (spacing equal to
the fine edge length on the domain boundary) that conforms to the fine mesh
on the boundary.  Inside the domain the GMsFEM unknowns are kept; in the layer
the coupled fine RT0 scheme is used.  Each interface fine edge carries one
penalty pressure, exactly like the fine edges on interior inherited coarse
edges, so the velocity mass stays block diagonal inside the domain.

Damping follows the uniaxial (stretched-coordinate) formulation of the first
order system with ``s_x = 1 + sigma_x / (i omega)``.  With the auxiliary
velocity ``z`` and the pressure integral ``Phi``:

    Mv z' = G' p
    Mv u' + M[sx, sy] u = Mv z' + M[sy, sx] z
    Mp (p' + (sx + sy) p + sx sy Phi) = -G u + F,     Phi' = p

Damping terms are averaged over the step (Crank-Nicolson) inside the
leap-frog.  With ``sigma = 0`` the scheme reduces to the plain leap-frog.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.spatial import cKDTree

from .basis import OfflineSpace, identity_offline_space
from .fem import _assemble, element_mass_matrices
from .linalg import SparseSPDFactor
from .mesh import InitialMesh, StaggeredMesh, _lo_hi_normals, _outward_signs, signed_areas
from .solver import (DiagonalOperator, History, InstabilityError, LeapfrogSystem, SparseOperator, WaveState,
                     initial_state, reduce_system, time_grid)
from .medium import SourceConfig, load_vector, ricker_time

__all__ = [
    "PmlConfig",
    "LayerMesh",
    "DirectSum",
    "PmlSystem",
    "build_layer_mesh",
    "build_pml_system",
    "damping_profile",
    "pml_step",
    "run_pml",
    "interior_energy",
    "reflected_energy",
]


@dataclass(frozen=True)
class PmlConfig:
    """Layer ``width`` in fine cells, polynomial ``exponent`` of the damping
    profile and target amplitude ``reflection``.  ``scale`` multiplies the
    profile (0 turns damping off)."""

    width: int = 10
    exponent: float = 2.0
    reflection: float = 1e-3
    scale: float = 1.0

    def __post_init__(self):
        if self.width < 1:
            raise ValueError("layer width must be at least one fine cell")
        if not (0 < self.reflection < 1):
            raise ValueError("reflection must lie in (0, 1)")
        if self.scale < 0 or self.exponent < 0:
            raise ValueError("damping parameters must be nonnegative")


@dataclass(frozen=True, eq=False)
class LayerMesh:
    vertices: np.ndarray
    triangles: np.ndarray
    edges: np.ndarray
    tri_edges: np.ndarray
    edge_tris: np.ndarray
    normals: np.ndarray
    signs: np.ndarray
    spacing: float
    thickness: float
    iface_layer_edge: np.ndarray
    iface_fine_edge: np.ndarray

    @property
    def n_triangles(self) -> int:
        return len(self.triangles)

    @property
    def n_edges(self) -> int:
        return len(self.edges)

    @property
    def centroids(self) -> np.ndarray:
        return self.vertices[self.triangles].mean(axis=1)

    @property
    def areas(self) -> np.ndarray:
        return signed_areas(self.vertices, self.triangles)

    @property
    def edge_lengths(self) -> np.ndarray:
        d = self.vertices[self.edges[:, 1]] - self.vertices[self.edges[:, 0]]
        return np.hypot(d[:, 0], d[:, 1])


def _key(points, spacing):
    return [tuple(k) for k in np.rint(2.0 * points / spacing).astype(np.int64)]


def build_layer_mesh(sm: StaggeredMesh, width: int) -> LayerMesh:
    """Frame of ``width`` cells around the unit square, split like the initial mesh."""
    f = sm.fine
    bnd = np.flatnonzero(f.boundary)
    lengths = f.edge_lengths[bnd]
    hs = float(lengths.min())
    if not np.allclose(lengths, hs, rtol=1e-9, atol=0):
        raise ValueError("boundary fine edges are not uniform; cannot attach a structured layer")
    M = int(round(1.0 / hs))
    if abs(M * hs - 1.0) > 1e-9:
        raise ValueError("boundary spacing does not divide the unit side")
    w = int(width)
    n_side = M + 2 * w + 1
    grid = np.arange(-w, M + w + 1)
    X, Y = np.meshgrid(grid, grid, indexing="xy")
    coords = np.column_stack([X.ravel(), Y.ravel()]).astype(float) * hs
    vid = lambda i, j: (j + w) * n_side + (i + w)  # noqa: E731
    tris = []
    for j in range(-w, M + w):
        for i in range(-w, M + w):
            if 0 <= i < M and 0 <= j < M:
                continue
            a, b, c, d = vid(i, j), vid(i + 1, j), vid(i + 1, j + 1), vid(i, j + 1)
            tris.append((a, b, c))
            tris.append((a, c, d))
    tris = np.array(tris, dtype=np.int64)
    used, inv = np.unique(tris, return_inverse=True)
    verts = coords[used]
    tris = inv.reshape(tris.shape)
    m = InitialMesh.from_triangles(verts, tris)
    normals = _lo_hi_normals(verts, m.edges)
    signs = _outward_signs(verts, tris, m.tri_edges, normals)

    # interface: layer boundary edges on the unit square's boundary
    lb = np.flatnonzero(m.edge_tris[:, 1] < 0)
    mid = verts[m.edges[lb]].mean(axis=1)
    inside = np.all((mid > -1e-12) & (mid < 1 + 1e-12), axis=1)
    lb = lb[inside]
    fine_mid = f.vertices[f.edges[bnd]].mean(axis=1)
    lookup = {k: e for k, e in zip(_key(fine_mid, hs), bnd)}
    layer_mid = verts[m.edges[lb]].mean(axis=1)
    try:
        fine_match = np.array([lookup[k] for k in _key(layer_mid, hs)], dtype=np.int64)
    except KeyError:
        raise ValueError("layer does not conform to the fine mesh on the boundary") from None
    if len(fine_match) != len(bnd):
        raise ValueError("interface edge count mismatch")
    return LayerMesh(verts, tris, m.edges, m.tri_edges, m.edge_tris, normals, signs, hs, w * hs, lb, fine_match)


def damping_profile(layer: LayerMesh, c_max: float, cfg: PmlConfig):
    """Per-layer-element ``(sigma_x, sigma_y)`` at centroids.

    ``sigma(d) = sigma_max (d / L)^k`` with
    ``sigma_max = (k + 1) c_max ln(1/R) / (2 L)``.
    """
    L = layer.thickness
    k = cfg.exponent
    smax = cfg.scale * (k + 1) * c_max * math.log(1.0 / cfg.reflection) / (2.0 * L)
    c = layer.centroids
    dx = np.maximum(0.0, np.maximum(-c[:, 0], c[:, 0] - 1.0))
    dy = np.maximum(0.0, np.maximum(-c[:, 1], c[:, 1] - 1.0))
    return smax * (dx / L) ** k, smax * (dy / L) ** k


class DirectSum:
    """Block operator made of independent operators on consecutive ranges."""

    def __init__(self, ops):
        self.ops = list(ops)
        sizes = [op.n for op in self.ops]
        self.offsets = np.concatenate([[0], np.cumsum(sizes)]).astype(np.int64)
        self.n = int(self.offsets[-1])

    def _apply(self, name, x):
        out = np.empty_like(np.asarray(x, dtype=float))
        for k, op in enumerate(self.ops):
            s = slice(self.offsets[k], self.offsets[k + 1])
            out[s] = getattr(op, name)(x[s])
        return out

    def solve(self, b):
        return self._apply("solve", b)

    def matvec(self, v):
        return self._apply("matvec", v)


@dataclass(eq=False)
class PmlSystem:
    """Enlarged-domain operators and the damping data of the layer.

    Velocity order: interior coarse unknowns, then layer edges.  Pressure
    order: interior coarse unknowns, layer elements, interface penalties.
    """

    plain: LeapfrogSystem
    layer: LayerMesh
    n_vi: int
    n_pi: int
    n_pl: int
    Mv_int: object
    Mp_int: object
    Mv_layer: sp.csr_matrix
    M_s1: sp.csr_matrix
    M_s2: sp.csr_matrix
    sig_sum: np.ndarray
    sig_prod: np.ndarray
    layer_kappa: np.ndarray
    layer_rho: np.ndarray
    sigma: tuple = field(default_factory=tuple)

    @property
    def v_layer(self) -> slice:
        return slice(self.n_vi, self.plain.n_velocity)

    @property
    def p_layer(self) -> slice:
        return slice(self.n_pi, self.n_pi + self.n_pl)


def build_pml_system(sm: StaggeredMesh, medium, forms, space: OfflineSpace | None, cfg: PmlConfig,
                     source: SourceConfig | None = None, spaces=None) -> PmlSystem:
    if space is None:
        if spaces is None:
            raise ValueError("an offline space or the fine spaces are required")
        space = identity_offline_space(sm, spaces)
    f = sm.fine
    layer = build_layer_mesh(sm, cfg.width)
    load = load_vector(f, source) if source is not None else None
    inner = reduce_system(space, forms, load)

    # layer coefficients: nearest interior element after clamping into the domain
    tree = cKDTree(f.centroids)
    _, near = tree.query(np.clip(layer.centroids, 0.0, 1.0))
    kap = medium.kappa[near]
    rho = medium.rho[near]
    c_max = float(np.max(1.0 / np.sqrt(kap * rho)))
    sx, sy = damping_profile(layer, c_max, cfg)

    nL = layer.n_edges
    lens = layer.edge_lengths
    area = layer.areas
    Mv_L = _assemble(layer.tri_edges, element_mass_matrices(layer.vertices, layer.triangles, layer.signs, kap), nL)
    M_s1 = _assemble(layer.tri_edges, element_mass_matrices(layer.vertices, layer.triangles, layer.signs,
                                                            tensor=np.column_stack([kap * sx, kap * sy])), nL)
    M_s2 = _assemble(layer.tri_edges, element_mass_matrices(layer.vertices, layer.triangles, layer.signs,
                                                            tensor=np.column_stack([kap * sy, kap * sx])), nL)
    nt = layer.n_triangles
    D_L = sp.csr_matrix(((layer.signs * lens[layer.tri_edges]).ravel(),
                         (np.repeat(np.arange(nt), 3), layer.tri_edges.ravel())), shape=(nt, nL))

    # interface penalties: sum of outward fluxes from both sides
    k = len(layer.iface_layer_edge)
    e_in = layer.iface_fine_edge
    t_in = f.edge_tris[e_in, 0]
    s_in = f.signs[t_in, np.argmax(f.tri_edges[t_in] == e_in[:, None], axis=1)]
    e_L = layer.iface_layer_edge
    t_L = layer.edge_tris[e_L, 0]
    s_L = layer.signs[t_L, np.argmax(layer.tri_edges[t_L] == e_L[:, None], axis=1)]
    ln = f.edge_lengths[e_in]
    J_in = sp.csr_matrix((s_in * ln, (np.arange(k), e_in)), shape=(k, space.Phi.shape[0]))
    J_L = sp.csr_matrix((s_L * ln, (np.arange(k), e_L)), shape=(k, nL))
    m_if = 0.5 * (medium.rho[t_in] * f.areas[t_in] + rho[t_L] * area[t_L])

    nVi, nPi = inner.n_velocity, inner.n_pressure
    G = sp.bmat([[inner.G, None],
                 [None, D_L],
                 [-(J_in @ space.Phi), -J_L]], format="csr")
    Mv = DirectSum([inner.Mv, SparseOperator(Mv_L)])
    Mp = DirectSum([inner.Mp, DiagonalOperator(rho * area), DiagonalOperator(m_if)])
    F = np.concatenate([inner.load, np.zeros(nt + k)])
    plain = LeapfrogSystem(Mv, Mp, G, F, "enlarged")
    return PmlSystem(plain, layer, nVi, nPi, nt, inner.Mv, inner.Mp, Mv_L.tocsr(), M_s1.tocsr(), M_s2.tocsr(),
                     sx + sy, sx * sy, kap, rho, (sx, sy))


@dataclass(eq=False)
class PmlState:
    base: WaveState
    z: np.ndarray
    phi: np.ndarray


class _Stepper:
    def __init__(self, ps: PmlSystem, dt: float):
        self.ps = ps
        self.dt = dt
        A = ps.Mv_layer + 0.5 * dt * ps.M_s1
        self.A = SparseSPDFactor(A)
        self.B = (ps.Mv_layer - 0.5 * dt * ps.M_s1).tocsr()
        self.Mv_L = SparseSPDFactor(ps.Mv_layer)

    def step(self, st: PmlState, wavelet: float) -> PmlState:
        ps, dt = self.ps, self.dt
        sys = ps.plain
        b = st.base
        g = sys.G.T @ b.p
        v = np.empty_like(b.v)
        vi, vl = slice(0, ps.n_vi), ps.v_layer
        v[vi] = b.v[vi] + dt * ps.Mv_int.solve(g[vi])
        z = st.z + dt * self.Mv_L.solve(g[vl])
        rhs = self.B @ b.v[vl] + dt * g[vl] + 0.5 * dt * (ps.M_s2 @ (z + st.z))
        v[vl] = self.A.solve(rhs)
        pl = ps.p_layer
        phi = st.phi + dt * b.p[pl]
        r = -(sys.G @ v)
        if wavelet:
            r = r + wavelet * sys.load
        q = sys.Mp.solve(r)
        p = b.p + dt * q
        half = 0.5 * dt * ps.sig_sum
        p[pl] = ((1.0 - half) * b.p[pl] + dt * q[pl] - dt * ps.sig_prod * phi) / (1.0 + half)
        if not (np.all(np.isfinite(v)) and np.all(np.isfinite(p))):
            raise InstabilityError(f"non-finite values at step {b.step + 1}")
        return PmlState(WaveState(v, p, b.p, b.step + 1, dt), z, phi)


def pml_step(ps: PmlSystem, st: PmlState, dt: float, wavelet: float = 0.0) -> PmlState:
    return _Stepper(ps, dt).step(st, wavelet)


def interior_energy(ps: PmlSystem, st: WaveState) -> float:
    """1/2 (|v|_V^2 + |p|_Q^2) of the interior unknowns at ``t_n``."""
    v = st.v[: ps.n_vi]
    p = st.p_sync()[: ps.n_pi]
    return 0.5 * float(v @ ps.Mv_int.matvec(v) + p @ ps.Mp_int.matvec(p))


def reflected_energy(ps: PmlSystem, hist: History, ps_ref: PmlSystem, hist_ref: History) -> np.ndarray:
    """Interior energy of the difference to a reference run, per common snapshot.

    The reference is typically an undamped run on a layer wide enough that
    nothing returns from its outer boundary before the final time.  Both runs
    must share the interior space and the step size.
    """
    if (ps.n_vi, ps.n_pi) != (ps_ref.n_vi, ps_ref.n_pi):
        raise ValueError("runs use different interior spaces")
    if not math.isclose(hist.dt, hist_ref.dt, rel_tol=1e-12):
        raise ValueError("runs use different time steps")
    ref = {s[0]: s for s in hist_ref.snapshots}
    out = []
    for step, _, v, p in hist.snapshots:
        if step not in ref:
            continue
        dv = v[: ps.n_vi] - ref[step][2][: ps.n_vi]
        dp = p[: ps.n_pi] - ref[step][3][: ps.n_pi]
        out.append(0.5 * float(dv @ ps.Mv_int.matvec(dv) + dp @ ps.Mp_int.matvec(dp)))
    return np.array(out)


def run_pml(ps: PmlSystem, source: SourceConfig | None, T: float, dt: float, snapshot_every: int = 0) -> History:
    """Damped run on the enlarged domain; ``History.physical`` holds the interior energy."""
    dt, n = time_grid(T, dt)
    sys = ps.plain
    st = PmlState(initial_state(sys, dt), np.zeros(ps.Mv_layer.shape[0]), np.zeros(ps.n_pl))
    stepper = _Stepper(ps, dt)
    inner, rows, snaps = [], [], []
    t0 = time.perf_counter()
    for k in range(n + 1):
        b = st.base
        ev = 0.5 * float(b.v @ sys.Mv.matvec(b.v))
        ep = 0.5 * float(b.p_prev @ sys.Mp.matvec(b.p))
        rows.append((b.step, b.t, ev, ep, ev + ep))
        inner.append(interior_energy(ps, b))
        if snapshot_every and b.step % snapshot_every == 0:
            snaps.append((b.step, b.t, b.v.copy(), b.p_sync()))
        if k == n:
            break
        w = float(ricker_time((b.step + 1) * dt, source.f0)) if source is not None else 0.0
        st = stepper.step(st, w)
    wall = time.perf_counter() - t0
    return History(sys, st.base, dt, n, snaps, np.array(rows), np.array(inner), wall)
