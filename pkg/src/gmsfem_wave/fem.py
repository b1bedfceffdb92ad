"""Lowest-order Raviart-Thomas spaces on the fine mesh and all bilinear forms.

Velocity degrees of freedom are normal components ``w . n_e`` on fine edges,
measured against the stored global edge normal ``n_e``.  On the fine edges
lying on interior inherited coarse edges the velocity is decoupled: the
element on which ``n_e`` points outward (the "+" side) keeps the original
DOF, the other element gets an extra one.  The jump is the sum of outward
normal traces, ``[w . n] = w+ . n_e - w- . n_e``.

The penalty pressure attached to a fine edge ``e`` with trace value ``c`` is
``c (1 - 3 lambda_opp)`` on each adjacent fine triangle, ``lambda_opp`` being
the barycentric coordinate of the vertex opposite ``e``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .mesh import FineMesh, EdgeSets, SkeletonSets, StaggeredMesh

__all__ = [
    "Rt0Space",
    "DecoupledVelocitySpace",
    "PenaltyPressureSpace",
    "Spaces",
    "AssembledForms",
    "build_spaces",
    "assemble_forms",
    "element_mass_matrices",
    "project_penalty_trace",
    "penalty_values",
    "write_coo",
    "read_coo",
]


@dataclass(frozen=True, eq=False)
class Rt0Space:
    """Coupled RT0 space: one DOF per fine edge."""

    n_dofs: int
    elem_dofs: np.ndarray
    signs: np.ndarray
    boundary: np.ndarray


@dataclass(frozen=True, eq=False)
class DecoupledVelocitySpace:
    n_dofs: int
    elem_dofs: np.ndarray
    signs: np.ndarray
    decoupled_edges: np.ndarray
    extra_dof: np.ndarray
    dof_edge: np.ndarray
    dof_block: np.ndarray

    @property
    def n_extra(self) -> int:
        return len(self.decoupled_edges)


@dataclass(frozen=True, eq=False)
class PenaltyPressureSpace:
    """Penalty pressures: one DOF per fine edge lying on an inherited edge.

    ``edges`` are ordered by inherited coarse edge, then along the edge.  The
    Dirichlet-restricted subspace keeps the entries with ``interior`` set;
    ``interior_index`` maps them to ``0 .. n_interior-1``.
    """

    edges: np.ndarray
    coarse_edge: np.ndarray
    interior: np.ndarray
    interior_index: np.ndarray

    @property
    def n_dofs(self) -> int:
        return len(self.edges)

    @property
    def n_interior(self) -> int:
        return int(self.interior.sum())

    @property
    def interior_edges(self) -> np.ndarray:
        return self.edges[self.interior]


@dataclass(frozen=True, eq=False)
class Spaces:
    rt0: Rt0Space
    vhat: DecoupledVelocitySpace
    penalty: PenaltyPressureSpace
    n_elements: int

    @property
    def n_pressure(self) -> int:
        """Dimension of the Dirichlet-restricted enriched pressure space."""
        return self.n_elements + self.penalty.n_interior


def build_spaces(f: FineMesh, s: SkeletonSets, e: EdgeSets) -> Spaces:
    """Coupled RT0 space, decoupled velocity space and penalty pressure space."""
    nv = f.n_edges
    ep0_mask = e.is_ep0()
    on_ep0 = np.zeros(nv, dtype=bool)
    tagged = f.edge_coarse >= 0
    on_ep0[tagged] = ep0_mask[f.edge_coarse[tagged]]
    dec = np.flatnonzero(on_ep0)
    extra = np.full(nv, -1, dtype=np.int64)
    extra[dec] = nv + np.arange(len(dec))

    elem_dofs = f.tri_edges.copy()
    minus = (f.signs < 0) & on_ep0[f.tri_edges]
    elem_dofs[minus] = extra[f.tri_edges[minus]]
    n_hat = nv + len(dec)

    dof_edge = np.concatenate([np.arange(nv), dec])
    dof_block = np.full(n_hat, -1, dtype=np.int64)
    init = f.initial_parent
    tri_of = np.repeat(np.arange(f.n_triangles), 3)
    dof_block[elem_dofs.ravel()] = init[tri_of]

    rt0 = Rt0Space(nv, f.tri_edges.copy(), f.signs.copy(), f.boundary.copy())
    vhat = DecoupledVelocitySpace(n_hat, elem_dofs, f.signs.copy(), dec, extra, dof_edge, dof_block)

    ep0_set = set(int(x) for x in e.ep0)
    pen_edges, pen_coarse, pen_int = [], [], []
    for E in s.ep:
        fe = f.coarse_edge_fine_edges[E]
        pen_edges.append(fe)
        pen_coarse.append(np.full(len(fe), E))
        pen_int.append(np.full(len(fe), int(E) in ep0_set))
    pen_edges = np.concatenate(pen_edges) if pen_edges else np.empty(0, dtype=np.int64)
    pen_coarse = np.concatenate(pen_coarse) if pen_coarse else np.empty(0, dtype=np.int64)
    pen_int = np.concatenate(pen_int) if pen_int else np.empty(0, dtype=bool)
    interior_index = np.full(len(pen_edges), -1, dtype=np.int64)
    interior_index[pen_int] = np.arange(pen_int.sum())
    penalty = PenaltyPressureSpace(pen_edges, pen_coarse, pen_int, interior_index)
    return Spaces(rt0, vhat, penalty, f.n_triangles)


def element_mass_matrices(vertices: np.ndarray, triangles: np.ndarray, signs: np.ndarray,
                          weight: np.ndarray | None = None, tensor: np.ndarray | None = None) -> np.ndarray:
    """Exact local RT0 mass matrices ``int_tau w * phi_i . phi_j``, shape (nt, 3, 3).

    ``phi_i = s_i |e_i| / (2|tau|) (x - x_i)`` where ``e_i`` is opposite vertex ``i``.
    ``tensor`` (nt, 2) replaces the scalar weight by ``diag(wx, wy)``.
    """
    if tensor is not None:
        tensor = np.asarray(tensor, dtype=float)
        return sum(_component_mass(vertices, triangles, signs, a) * tensor[:, a, None, None] for a in range(2))
    return _component_mass(vertices, triangles, signs, None) * (
        1.0 if weight is None else np.asarray(weight)[:, None, None])


def _component_mass(vertices, triangles, signs, comp):
    X = vertices[triangles]
    g = X.mean(axis=1)
    d1 = X[:, 1] - X[:, 0]
    d2 = X[:, 2] - X[:, 0]
    area = 0.5 * (d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0])
    lengths = np.empty((len(triangles), 3))
    for i in range(3):
        d = X[:, (i + 2) % 3] - X[:, (i + 1) % 3]
        lengths[:, i] = np.hypot(d[:, 0], d[:, 1])
    # int (x - a).(x - b) = |tau| ((g - a).(g - b) + sum_k |x_k - g|^2 / 12)
    sel = slice(None) if comp is None else slice(comp, comp + 1)
    spread = np.sum((X - g[:, None, :])[:, :, sel] ** 2, axis=(1, 2)) / 12.0
    gx = (g[:, None, :] - X)[:, :, sel]
    integ = area[:, None, None] * (spread[:, None, None] + np.einsum("tik,tjk->tij", gx, gx))
    coef = signs * lengths / (2.0 * area[:, None])
    return integ * coef[:, :, None] * coef[:, None, :]


def _assemble(elem_dofs, local, n):
    rows = np.repeat(elem_dofs, 3, axis=1).ravel()
    cols = np.tile(elem_dofs, (1, 3)).ravel()
    return sp.csr_matrix((local.ravel(), (rows, cols)), shape=(n, n))


def project_penalty_trace(values, vertices: np.ndarray, edge_vertex_opposite: np.ndarray) -> np.ndarray:
    """Linear extension of a constant edge trace into adjacent triangles.

    ``vertices`` has shape (m, 3, 2) (triangle corners) and
    ``edge_vertex_opposite`` gives, per triangle, the local index of the
    vertex opposite the carrying edge.  Returns the nodal values (m, 3) of
    ``c (1 - 3 lambda_opp)``: ``-2c`` at the opposite vertex, ``c`` elsewhere.
    """
    c = np.asarray(values, dtype=float)
    out = np.repeat(c[:, None], 3, axis=1)
    out[np.arange(len(c)), edge_vertex_opposite] = -2.0 * c
    return out


def penalty_values(c: float, lam_opp) -> np.ndarray:
    return c * (1.0 - 3.0 * np.asarray(lam_opp))


@dataclass(frozen=True, eq=False)
class AssembledForms:
    """Fine-level matrices.

    ``Mv``: kappa mass on the coupled RT0 space; ``Mv_hat`` on the decoupled
    space; ``Mp`` diagonal rho mass of piecewise constants; ``Mp_pen`` diagonal
    rho mass of the interior penalty pressures; ``D``/``D_hat``: rows
    ``int_tau div w``; ``J``: rows ``int_e [w . n]`` per interior penalty DOF.
    """

    Mv: sp.csr_matrix
    Mv_hat: sp.csr_matrix
    Mp: np.ndarray
    Mp_pen: np.ndarray
    Mp_pen_all: np.ndarray
    D: sp.csr_matrix
    D_hat: sp.csr_matrix
    J: sp.csr_matrix
    J_all: sp.csr_matrix
    elem_mass: np.ndarray
    areas: np.ndarray
    lengths: np.ndarray

    @property
    def G_hat(self) -> sp.csr_matrix:
        """Pressure-velocity coupling of the decoupled scheme, ``[D_hat; -J]``."""
        return sp.vstack([self.D_hat, -self.J]).tocsr()

    @property
    def Mp_hat(self) -> np.ndarray:
        return np.concatenate([self.Mp, self.Mp_pen])


def assemble_forms(f: FineMesh, medium, spaces: Spaces) -> AssembledForms:
    kappa = np.asarray(medium.kappa, dtype=float)
    rho = np.asarray(medium.rho, dtype=float)
    if kappa.shape != (f.n_triangles,) or rho.shape != (f.n_triangles,):
        raise ValueError("medium does not match the fine mesh")
    if np.any(~np.isfinite(kappa)) or np.any(kappa <= 0) or np.any(~np.isfinite(rho)) or np.any(rho <= 0):
        raise ValueError("coefficients must be positive and finite")
    areas = f.areas
    lengths = f.edge_lengths
    local = element_mass_matrices(f.vertices, f.triangles, f.signs, kappa)
    Mv = _assemble(spaces.rt0.elem_dofs, local, spaces.rt0.n_dofs)
    Mv_hat = _assemble(spaces.vhat.elem_dofs, local, spaces.vhat.n_dofs)

    nt = f.n_triangles
    rows = np.repeat(np.arange(nt), 3)
    dvals = (f.signs * lengths[f.tri_edges]).ravel()
    D = sp.csr_matrix((dvals, (rows, spaces.rt0.elem_dofs.ravel())), shape=(nt, spaces.rt0.n_dofs))
    D_hat = sp.csr_matrix((dvals, (rows, spaces.vhat.elem_dofs.ravel())), shape=(nt, spaces.vhat.n_dofs))

    pen = spaces.penalty
    mass_all = np.zeros(pen.n_dofs)
    for side in range(2):
        t = f.edge_tris[pen.edges, side]
        ok = t >= 0
        mass_all[ok] += 0.5 * rho[t[ok]] * areas[t[ok]]
    Mp_pen = mass_all[pen.interior]

    # jump rows: + side keeps the edge DOF; - side (if decoupled) uses the extra DOF
    n_all = pen.n_dofs
    e = pen.edges
    extra = spaces.vhat.extra_dof[e]
    r_plus = np.arange(n_all)
    jr = [r_plus]
    jc = [e]
    jv = [lengths[e]]
    has_minus = extra >= 0
    jr.append(r_plus[has_minus])
    jc.append(extra[has_minus])
    jv.append(-lengths[e][has_minus])
    J_all = sp.csr_matrix((np.concatenate(jv), (np.concatenate(jr), np.concatenate(jc))),
                          shape=(n_all, spaces.vhat.n_dofs))
    J = J_all[np.flatnonzero(pen.interior)]
    return AssembledForms(Mv, Mv_hat, rho * areas, Mp_pen, mass_all, D, D_hat, J.tocsr(), J_all,
                          local, areas, lengths)


def build_fine_problem(sm: StaggeredMesh, medium):
    spaces = build_spaces(sm.fine, sm.skeleton, sm.edge_sets)
    forms = assemble_forms(sm.fine, medium, spaces)
    return spaces, forms


def write_coo(M, path) -> None:
    """Coordinate text dump: one ``row col value`` line per stored entry."""
    coo = sp.coo_matrix(M)
    with open(path, "w") as fh:
        fh.write(f"% {coo.shape[0]} {coo.shape[1]} {coo.nnz}\n")
        for r, c, v in zip(coo.row, coo.col, coo.data):
            fh.write(f"{r} {c} {v:.17g}\n")


def read_coo(path) -> sp.csr_matrix:
    with open(path) as fh:
        header = fh.readline().split()
        nr, nc = int(header[1]), int(header[2])
        rest = fh.read().strip()
    data = np.loadtxt(rest.splitlines(), ndmin=2) if rest else np.empty((0, 3))
    if data.size == 0:
        return sp.csr_matrix((nr, nc))
    return sp.csr_matrix((data[:, 2], (data[:, 0].astype(int), data[:, 1].astype(int))), shape=(nr, nc))
