"""Multiscale basis construction.

Three families are built from local fine-scale problems:

* one velocity function per coarse edge with unit normal trace on the edge
  and constant divergence on the adjacent coarse elements,
* edge modes from a spectral problem on divergence-free edge snapshots,
* element modes from a pressure eigenproblem with zero normal trace.

Every local problem on a coarse element ``K`` is a saddle system for the
coupled RT0 velocity and the piecewise-constant pressure on the fine
triangles inside ``K``.  It is solved by eliminating the interior velocity
and fixing the pressure gauge to zero mean.

Normal traces are always measured against the global edge normal.  On an
element where that normal points inward, a unit trace therefore means a
unit *inflow*, and the divergence picks up the sign of the outward
orientation.
"""

from __future__ import annotations

import hashlib
import json
import struct
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp

from .fem import AssembledForms, Spaces
from .linalg import gen_eig_sym, householder_complement, NotSPDError
from .mesh import StaggeredMesh, edge_patch

__all__ = [
    "LocalElement",
    "build_local_elements",
    "FirstBasis",
    "EdgeSnapshotSpace",
    "EdgeOfflineBasis",
    "ElementOfflineBasis",
    "OfflineBasis",
    "OfflineSpace",
    "Selection",
    "zero_mean_edge_basis",
    "build_first_basis",
    "build_edge_snapshots",
    "edge_spectral",
    "build_element_eig",
    "build_offline_basis",
    "assemble_offline_space",
    "identity_offline_space",
    "selection_from_counts",
    "save_offline",
    "load_offline",
]


class LocalElement:
    """Fine RT0 problem restricted to one coarse element.

    Local DOFs are the fine edges of ``K`` sorted by global fine-edge id.
    ``dof_hat`` maps them into the decoupled velocity space.
    """

    def __init__(self, K: int, sm: StaggeredMesh, spaces: Spaces, forms: AssembledForms, rho):
        f = sm.fine
        self.K = int(K)
        self.tris = f.triangles_of_coarse(K)
        fe = f.tri_edges[self.tris]
        self.fine_edges, inv = np.unique(fe, return_inverse=True)
        self.loc = inv.reshape(fe.shape)
        nl = len(self.fine_edges)
        self.dof_hat = np.empty(nl, dtype=np.int64)
        self.dof_hat[self.loc.ravel()] = spaces.vhat.elem_dofs[self.tris].ravel()
        nk = len(self.tris)

        M = np.zeros((nl, nl))
        np.add.at(M, (self.loc[:, :, None], self.loc[:, None, :]), forms.elem_mass[self.tris])
        self.M = 0.5 * (M + M.T)
        B = np.zeros((nk, nl))
        np.add.at(B, (np.repeat(np.arange(nk), 3), self.loc.ravel()),
                  (f.signs[self.tris] * forms.lengths[fe]).ravel())
        self.B = B
        self.areas = forms.areas[self.tris]
        self.rho = np.asarray(rho)[self.tris]
        on_coarse = f.edge_coarse[self.fine_edges] >= 0
        self.bnd = np.flatnonzero(on_coarse)
        self.int = np.flatnonzero(~on_coarse)

        c = sm.coarse
        self.coarse_edges = c.tri_edges[K].copy()
        self.coarse_signs = c.signs[K].copy()
        self.area = float(c.areas[K])
        self.edge_loc = {}
        for E in self.coarse_edges:
            self.edge_loc[int(E)] = np.searchsorted(self.fine_edges, f.coarse_edge_fine_edges[E])

        MII = self.M[np.ix_(self.int, self.int)]
        self.MIB = self.M[np.ix_(self.int, self.bnd)]
        BI = self.B[:, self.int]
        self.BB = self.B[:, self.bnd]
        self.Z = householder_complement(self.areas) if nk > 1 else np.zeros((nk, 0))
        if len(self.int):
            self.MII_fac = sla.cho_factor(MII, lower=True)
            self.X = sla.cho_solve(self.MII_fac, BI.T)
            S = BI @ self.X
        else:
            self.MII_fac = None
            self.X = np.zeros((0, nk))
            S = np.zeros((nk, nk))
        self.S = 0.5 * (S + S.T)
        self.Sz = self.Z.T @ self.S @ self.Z
        self.Sz_fac = sla.cho_factor(self.Sz, lower=True) if self.Z.shape[1] else None

    @property
    def n_local(self) -> int:
        return len(self.fine_edges)

    def boundary_values(self, E: int, trace: np.ndarray) -> np.ndarray:
        """Boundary DOF vector(s) equal to ``trace`` on coarse edge ``E`` and zero elsewhere."""
        trace = np.asarray(trace, dtype=float)
        g = np.zeros((self.n_local,) + trace.shape[1:])
        g[self.edge_loc[int(E)]] = trace
        return g[self.bnd]

    def solve(self, gB: np.ndarray, rhs: np.ndarray):
        """Velocity with boundary DOFs ``gB`` and ``B v = rhs``; zero-mean pressure.

        Both arguments may carry a trailing column axis.  Returns the full
        local velocity and the pressure.
        """
        gB = np.asarray(gB, dtype=float)
        rhs = np.asarray(rhs, dtype=float)
        r = rhs - self.BB @ gB
        if self.MII_fac is not None:
            corr = sla.cho_solve(self.MII_fac, self.MIB @ gB)
            r = r + self.B[:, self.int] @ corr
        else:
            corr = np.zeros((0,) + gB.shape[1:])
        if self.Sz_fac is not None:
            p = self.Z @ sla.cho_solve(self.Sz_fac, self.Z.T @ r)
        else:
            p = np.zeros_like(rhs)
        v = np.zeros((self.n_local,) + gB.shape[1:])
        v[self.bnd] = gB
        if len(self.int):
            v[self.int] = self.X @ p - corr
        return v, p

    def energy(self, v: np.ndarray) -> np.ndarray:
        return v.T @ self.M @ v


def build_local_elements(sm: StaggeredMesh, spaces: Spaces, forms: AssembledForms, medium,
                         threads: int = 1) -> list:
    nK = sm.coarse.n_triangles
    make = lambda K: LocalElement(K, sm, spaces, forms, medium.rho)  # noqa: E731
    return _pmap(make, range(nK), threads)


def _pmap(fn, items, threads: int):
    items = list(items)
    if threads and threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as ex:
            return list(ex.map(fn, items))
    return [fn(x) for x in items]


@dataclass(eq=False)
class FirstBasis:
    """Unit-trace velocity on one coarse edge, one local solve per patch element."""

    edge: int
    elements: tuple
    velocity: list
    pressure: list
    divergence: list


@dataclass(eq=False)
class EdgeSnapshotSpace:
    edge: int
    elements: tuple
    deltas: np.ndarray
    velocity: list
    pressure: list

    @property
    def n_snapshots(self) -> int:
        return self.deltas.shape[1]


@dataclass(eq=False)
class EdgeOfflineBasis:
    """Edge modes sorted by eigenvalue, scaled to unit L2 normal trace on the edge.

    ``coeffs`` are snapshot coefficients; ``traces`` the normal trace values on
    the fine edges of the coarse edge; ``velocity`` per patch element.
    """

    edge: int
    elements: tuple
    eigenvalues: np.ndarray
    coeffs: np.ndarray
    traces: np.ndarray
    velocity: list
    A: np.ndarray
    B: np.ndarray


@dataclass(eq=False)
class ElementOfflineBasis:
    """Element modes: rho-orthonormal zero-mean pressures and their velocities."""

    element: int
    eigenvalues: np.ndarray
    pressure: np.ndarray
    velocity: np.ndarray
    A: np.ndarray
    B: np.ndarray
    Z: np.ndarray


def zero_mean_edge_basis(lengths: np.ndarray) -> np.ndarray:
    """L2-orthonormal basis of the zero-mean piecewise constants on an edge.

    Starts from differences of neighbouring (length-scaled) indicators and
    orthonormalizes them with the edge-length weight.
    """
    lengths = np.asarray(lengths, dtype=float)
    N = len(lengths)
    if N < 2:
        return np.zeros((N, 0))
    D = np.zeros((N, N - 1))
    idx = np.arange(N - 1)
    D[idx, idx] = 1.0 / lengths[:-1]
    D[idx + 1, idx] = -1.0 / lengths[1:]
    w = np.sqrt(lengths)
    Q, _ = np.linalg.qr(w[:, None] * D)
    return Q / w[:, None]


def _edge_lengths(sm: StaggeredMesh, forms: AssembledForms, E: int) -> np.ndarray:
    return forms.lengths[sm.fine.coarse_edge_fine_edges[E]]


def _edge_sign(le: LocalElement, E: int) -> int:
    """+1 when the global normal of coarse edge ``E`` points out of ``le``."""
    return int(le.coarse_signs[list(le.coarse_edges).index(E)])


def build_first_basis(E: int, sm: StaggeredMesh, forms: AssembledForms, local: list) -> FirstBasis:
    patch = edge_patch(sm.coarse, E).elements
    length = float(sm.coarse.edge_lengths[E])
    N = sm.fine.n_sub
    vel, pre, div = [], [], []
    for K in patch:
        le = local[K]
        c = _edge_sign(le, E) * length / le.area
        v, p = le.solve(le.boundary_values(E, np.ones(N)), c * le.areas)
        vel.append(v)
        pre.append(p)
        div.append(c)
    return FirstBasis(int(E), patch, vel, pre, div)


def build_edge_snapshots(E: int, sm: StaggeredMesh, forms: AssembledForms, local: list) -> EdgeSnapshotSpace:
    patch = edge_patch(sm.coarse, E).elements
    deltas = zero_mean_edge_basis(_edge_lengths(sm, forms, E))
    vel, pre = [], []
    m = deltas.shape[1]
    for K in patch:
        le = local[K]
        v, p = le.solve(le.boundary_values(E, deltas), np.zeros((len(le.tris), m)))
        vel.append(v)
        pre.append(p)
    return EdgeSnapshotSpace(int(E), patch, deltas, vel, pre)


def edge_spectral(snap: EdgeSnapshotSpace, sm: StaggeredMesh, forms: AssembledForms, local: list,
                  method: str = "jacobi") -> EdgeOfflineBasis:
    """Edge-trace energy against kappa-weighted patch energy, ascending eigenvalues."""
    E = snap.edge
    lengths = _edge_lengths(sm, forms, E)
    m = snap.n_snapshots
    A = snap.deltas.T @ (lengths[:, None] * snap.deltas)
    B = np.zeros((m, m))
    for K, v in zip(snap.elements, snap.velocity):
        B += local[K].energy(v)
    A = 0.5 * (A + A.T)
    B = 0.5 * (B + B.T)
    if m == 0:
        return EdgeOfflineBasis(E, snap.elements, np.zeros(0), np.zeros((0, 0)),
                                np.zeros((len(lengths), 0)), [v for v in snap.velocity], A, B)
    try:
        lam, C = gen_eig_sym(A, B, method=method)
    except NotSPDError as exc:
        raise NotSPDError(f"edge {E}: snapshots are linearly dependent ({exc})") from None
    # unit L2 normal trace on E: C'AC = diag(lam)
    C = C / np.sqrt(lam)[None, :]
    traces = snap.deltas @ C
    velocity = [v @ C for v in snap.velocity]
    return EdgeOfflineBasis(E, snap.elements, lam, C, traces, velocity, A, B)


def build_element_eig(le: LocalElement, method: str = "jacobi") -> ElementOfflineBasis:
    """Zero-mean pressure modes of ``S p = mu W p`` with ``S = B M^-1 B'``."""
    Z = le.Z
    W = le.rho * le.areas
    A = le.Sz
    Bm = Z.T @ (W[:, None] * Z)
    Bm = 0.5 * (Bm + Bm.T)
    if Z.shape[1] == 0:
        return ElementOfflineBasis(le.K, np.zeros(0), np.zeros((len(le.tris), 0)),
                                   np.zeros((le.n_local, 0)), A, Bm, Z)
    mu, C = gen_eig_sym(A, Bm, method=method)
    P = Z @ C
    vel = np.zeros((le.n_local, P.shape[1]))
    if len(le.int):
        vel[le.int] = le.X @ P
    return ElementOfflineBasis(le.K, mu, P, vel, A, Bm, Z)


@dataclass(eq=False)
class OfflineBasis:
    """All local modes before selection."""

    sm: StaggeredMesh
    spaces: Spaces
    forms: AssembledForms
    local: list
    first: list
    edges: list
    elements: list

    @property
    def n_edge_modes(self) -> np.ndarray:
        return np.array([len(e.eigenvalues) for e in self.edges], dtype=np.int64)

    @property
    def n_element_modes(self) -> np.ndarray:
        return np.array([len(k.eigenvalues) for k in self.elements], dtype=np.int64)


def build_offline_basis(sm: StaggeredMesh, spaces: Spaces, forms: AssembledForms, medium,
                        threads: int = 1, method: str = "jacobi") -> OfflineBasis:
    local = build_local_elements(sm, spaces, forms, medium, threads)
    nE = sm.coarse.n_edges

    def edge_job(E):
        first = build_first_basis(E, sm, forms, local)
        snap = build_edge_snapshots(E, sm, forms, local)
        return first, edge_spectral(snap, sm, forms, local, method)

    edge_results = _pmap(edge_job, range(nE), threads)
    elements = _pmap(lambda le: build_element_eig(le, method), local, threads)
    return OfflineBasis(sm, spaces, forms, local, [r[0] for r in edge_results],
                        [r[1] for r in edge_results], elements)


@dataclass(frozen=True, eq=False)
class Selection:
    """Number of edge modes per coarse edge and element modes per coarse element."""

    n_edge: np.ndarray
    m_elem: np.ndarray

    @classmethod
    def uniform(cls, n_edges: int, n_elements: int, n_e: int, m_k: int) -> "Selection":
        return cls(np.full(n_edges, n_e, dtype=np.int64), np.full(n_elements, m_k, dtype=np.int64))


def selection_from_counts(sm: StaggeredMesh, boundary: int, interior: int) -> Selection:
    """Map per-entity basis counts to mode counts.

    ``boundary`` counts every velocity function attached to a coarse edge,
    the unit-trace one included, so it selects ``boundary - 1`` edge modes.
    ``interior`` is the number of element modes.
    """
    if boundary < 1 or interior < 0:
        raise ValueError("need boundary >= 1 and interior >= 0")
    return Selection.uniform(sm.coarse.n_edges, sm.coarse.n_triangles, boundary - 1, interior)


@dataclass(eq=False)
class OfflineSpace:
    """Selected coarse basis as sparse fine-coefficient matrices.

    ``Phi`` maps coarse velocity coefficients to the decoupled fine velocity
    space, ``Psi_I`` coarse pressures to fine element pressures and
    ``Psi_B`` to the interior penalty pressures.  Block labels group the
    coarse unknowns of one mass-matrix block.
    """

    Phi: sp.csc_matrix
    Psi_I: sp.csc_matrix
    Psi_B: sp.csc_matrix
    v_block: np.ndarray
    v_kind: np.ndarray
    v_entity: np.ndarray
    v_side: np.ndarray
    v_mode: np.ndarray
    pI_block: np.ndarray
    pI_kind: np.ndarray
    pI_mode: np.ndarray
    pB_block: np.ndarray
    pB_mode: np.ndarray
    selection: Selection | None = None
    edge_eigenvalues: list = field(default_factory=list)
    element_eigenvalues: list = field(default_factory=list)
    meta: dict = field(default_factory=dict)

    @property
    def n_velocity(self) -> int:
        return self.Phi.shape[1]

    @property
    def n_pressure(self) -> int:
        return self.Psi_I.shape[1] + self.Psi_B.shape[1]

    @property
    def p_block(self) -> np.ndarray:
        off = (self.pI_block.max() + 1) if len(self.pI_block) else 0
        return np.concatenate([self.pI_block, self.pB_block + off])

    def prolong_velocity(self, vH: np.ndarray) -> np.ndarray:
        return self.Phi @ vH

    def prolong_pressure(self, pH: np.ndarray):
        nI = self.Psi_I.shape[1]
        return self.Psi_I @ pH[:nI], self.Psi_B @ pH[nI:]


def _check_selection(ob: OfflineBasis, sel: Selection):
    sel = Selection(np.asarray(sel.n_edge, dtype=np.int64), np.asarray(sel.m_elem, dtype=np.int64))
    if sel.n_edge.shape != (ob.sm.coarse.n_edges,) or sel.m_elem.shape != (ob.sm.coarse.n_triangles,):
        raise ValueError("selection does not match the coarse mesh")
    if np.any(sel.n_edge < 0) or np.any(sel.m_elem < 0):
        raise ValueError("selection counts must be nonnegative")
    bad = np.flatnonzero(sel.n_edge > ob.n_edge_modes)
    if len(bad):
        raise ValueError(f"edge {bad[0]} has only {ob.n_edge_modes[bad[0]]} modes, "
                         f"{sel.n_edge[bad[0]]} requested")
    bad = np.flatnonzero(sel.m_elem > ob.n_element_modes)
    if len(bad):
        raise ValueError(f"element {bad[0]} has only {ob.n_element_modes[bad[0]]} modes, "
                         f"{sel.m_elem[bad[0]]} requested")
    return sel


class _Columns:
    def __init__(self):
        self.rows, self.cols, self.vals = [], [], []
        self.n = 0
        self.labels = {}

    def add(self, rows, vals, **labels):
        rows = np.asarray(rows)
        vals = np.asarray(vals, dtype=float)
        keep = vals != 0.0
        self.rows.append(rows[keep])
        self.vals.append(vals[keep])
        self.cols.append(np.full(keep.sum(), self.n, dtype=np.int64))
        for k, v in labels.items():
            self.labels.setdefault(k, []).append(v)
        self.n += 1

    def matrix(self, nrows):
        if self.n == 0:
            return sp.csc_matrix((nrows, 0))
        return sp.csc_matrix((np.concatenate(self.vals), (np.concatenate(self.rows), np.concatenate(self.cols))),
                             shape=(nrows, self.n))

    def label(self, k):
        return np.asarray(self.labels.get(k, []), dtype=np.int64)


def assemble_offline_space(ob: OfflineBasis, sel: Selection) -> OfflineSpace:
    sel = _check_selection(ob, sel)
    sm, spaces = ob.sm, ob.spaces
    c = sm.coarse
    ep0 = sm.edge_sets.is_ep0()
    n_hat = spaces.vhat.n_dofs
    init = c.parent
    V = _Columns()
    for E in range(c.n_edges):
        fb, eb = ob.first[E], ob.edges[E]
        n_e = int(sel.n_edge[E])
        parts = []
        for i, K in enumerate(fb.elements):
            le = ob.local[K]
            cols = [fb.velocity[i][:, None], eb.velocity[i][:, :n_e]]
            parts.append((K, le.dof_hat, np.hstack(cols)))
        if ep0[E]:
            # one-sided copies: the element the normal points out of comes first
            parts.sort(key=lambda t: -_edge_sign(ob.local[t[0]], E))
            for side, (K, dofs, vals) in zip((1, -1), parts):
                for j in range(vals.shape[1]):
                    V.add(dofs, vals[:, j], block=init[K], kind=0 if j == 0 else 1,
                          entity=E, side=side, mode=j)
        else:
            dofs = np.concatenate([p[1] for p in parts])
            vals = np.vstack([p[2] for p in parts])
            uniq, first = np.unique(dofs, return_index=True)
            blocks = {int(init[p[0]]) for p in parts}
            if len(blocks) != 1:
                raise RuntimeError(f"coupled edge {E} spans two initial triangles")
            blk = blocks.pop()
            for j in range(vals.shape[1]):
                V.add(uniq, vals[first, j], block=blk, kind=0 if j == 0 else 1,
                      entity=E, side=0, mode=j)
    for K in range(c.n_triangles):
        le, el = ob.local[K], ob.elements[K]
        for j in range(int(sel.m_elem[K])):
            V.add(le.dof_hat, el.velocity[:, j], block=init[K], kind=2, entity=K, side=0, mode=j + 1)

    nt = sm.fine.n_triangles
    PI = _Columns()
    for K in range(c.n_triangles):
        le, el = ob.local[K], ob.elements[K]
        PI.add(le.tris, np.ones(len(le.tris)), block=K, kind=0, mode=0)
        for j in range(int(sel.m_elem[K])):
            PI.add(le.tris, el.pressure[:, j], block=K, kind=2, mode=j + 1)

    pen = spaces.penalty
    PB = _Columns()
    for k, E in enumerate(sm.edge_sets.ep0):
        rows = pen.interior_index[np.flatnonzero(pen.coarse_edge == E)]
        eb = ob.edges[E]
        PB.add(rows, np.ones(len(rows)), block=k, mode=0)
        for j in range(int(sel.n_edge[E])):
            PB.add(rows, eb.traces[:, j], block=k, mode=j + 1)

    return OfflineSpace(
        V.matrix(n_hat), PI.matrix(nt), PB.matrix(pen.n_interior),
        V.label("block"), V.label("kind"), V.label("entity"), V.label("side"), V.label("mode"),
        PI.label("block"), PI.label("kind"), PI.label("mode"),
        PB.label("block"), PB.label("mode"),
        sel,
        [e.eigenvalues for e in ob.edges],
        [k.eigenvalues for k in ob.elements],
    )


def identity_offline_space(sm: StaggeredMesh, spaces: Spaces) -> OfflineSpace:
    """Every fine DOF as its own basis function."""
    n_hat = spaces.vhat.n_dofs
    nt = spaces.n_elements
    nb = spaces.penalty.n_interior
    pen_edge = spaces.penalty.coarse_edge[spaces.penalty.interior]
    return OfflineSpace(
        sp.identity(n_hat, format="csc"), sp.identity(nt, format="csc"), sp.identity(nb, format="csc"),
        spaces.vhat.dof_block.copy(), np.full(n_hat, -1), np.full(n_hat, -1), np.zeros(n_hat, dtype=np.int64),
        np.zeros(n_hat, dtype=np.int64),
        sm.fine.coarse_parent.copy(), np.full(nt, -1), np.zeros(nt, dtype=np.int64),
        np.searchsorted(np.unique(pen_edge), pen_edge), np.zeros(nb, dtype=np.int64),
        meta={"identity": True},
    )


# ---------------------------------------------------------------- file I/O

_MAGIC = b"GMSOFF01"
_DTYPES = {"f8": np.dtype("<f8"), "i8": np.dtype("<i8")}


def _write_blocks(fh, blocks):
    fh.write(_MAGIC)
    fh.write(struct.pack("<Q", len(blocks)))
    for name, arr in blocks:
        arr = np.asarray(arr)
        code = "f8" if arr.dtype.kind == "f" else "i8"
        arr = np.ascontiguousarray(arr, dtype=_DTYPES[code])
        if arr.ndim == 1:
            arr = arr[:, None]
        raw = name.encode()
        fh.write(struct.pack("<H", len(raw)))
        fh.write(raw)
        fh.write(code.encode())
        fh.write(struct.pack("<QQ", arr.shape[0], arr.shape[1]))
        fh.write(arr.tobytes())


def _read_blocks(fh) -> dict:
    if fh.read(8) != _MAGIC:
        raise ValueError("not an offline-space file")
    (count,) = struct.unpack("<Q", fh.read(8))
    out = {}
    for _ in range(count):
        (ln,) = struct.unpack("<H", fh.read(2))
        name = fh.read(ln).decode()
        code = fh.read(2).decode()
        rows, cols = struct.unpack("<QQ", fh.read(16))
        dt = _DTYPES[code]
        data = np.frombuffer(fh.read(rows * cols * dt.itemsize), dtype=dt).reshape(rows, cols)
        out[name] = data.copy()
    return out


def _coo_blocks(prefix, M):
    coo = sp.coo_matrix(M)
    order = np.lexsort((coo.row, coo.col))
    return [(f"{prefix}.shape", np.array(coo.shape, dtype=np.int64)),
            (f"{prefix}.row", coo.row[order].astype(np.int64)),
            (f"{prefix}.col", coo.col[order].astype(np.int64)),
            (f"{prefix}.val", coo.data[order].astype(float))]


def _coo_from(blocks, prefix):
    shape = tuple(int(x) for x in blocks[f"{prefix}.shape"].ravel())
    return sp.csc_matrix((blocks[f"{prefix}.val"].ravel(),
                          (blocks[f"{prefix}.row"].ravel(), blocks[f"{prefix}.col"].ravel())), shape=shape)


_LABELS = ["v_block", "v_kind", "v_entity", "v_side", "v_mode", "pI_block", "pI_kind", "pI_mode",
           "pB_block", "pB_mode"]


def save_offline(space: OfflineSpace, path, manifest_path=None, extra: dict | None = None) -> dict:
    """Write the binary coefficient file and a JSON manifest next to it.

    Binary layout: the 8-byte magic ``GMSOFF01``, a little-endian uint64 block
    count, then per block a uint16 name length, the name, a 2-byte dtype code
    (``f8`` or ``i8``), uint64 rows and cols and the row-major little-endian
    data.
    """
    blocks = []
    blocks += _coo_blocks("Phi", space.Phi)
    blocks += _coo_blocks("Psi_I", space.Psi_I)
    blocks += _coo_blocks("Psi_B", space.Psi_B)
    for name in _LABELS:
        blocks.append((name, getattr(space, name)))
    if space.selection is not None:
        blocks.append(("sel.n_edge", space.selection.n_edge))
        blocks.append(("sel.m_elem", space.selection.m_elem))
    for i, lam in enumerate(space.edge_eigenvalues):
        blocks.append((f"lambda.{i}", np.asarray(lam, dtype=float)))
    for i, mu in enumerate(space.element_eigenvalues):
        blocks.append((f"mu.{i}", np.asarray(mu, dtype=float)))
    with open(path, "wb") as fh:
        _write_blocks(fh, blocks)
    with open(path, "rb") as fh:
        digest = hashlib.sha256(fh.read()).hexdigest()
    lam_all = [float(x) for lam in space.edge_eigenvalues for x in np.atleast_1d(lam)]
    mu_all = [float(x) for mu in space.element_eigenvalues for x in np.atleast_1d(mu)]
    manifest = {
        "format": "GMSOFF01",
        "dim_V": int(space.n_velocity),
        "dim_Q": int(space.n_pressure),
        "dim_Q_interior": int(space.Psi_I.shape[1]),
        "dim_Q_penalty": int(space.Psi_B.shape[1]),
        "n_edge": [int(x) for x in space.selection.n_edge] if space.selection is not None else None,
        "m_elem": [int(x) for x in space.selection.m_elem] if space.selection is not None else None,
        "edge_eigenvalue_range": [min(lam_all), max(lam_all)] if lam_all else None,
        "element_eigenvalue_range": [min(mu_all), max(mu_all)] if mu_all else None,
        "sha256": digest,
        "meta": space.meta,
    }
    if extra:
        manifest.update(extra)
    if manifest_path is not None:
        with open(manifest_path, "w") as fh:
            json.dump(manifest, fh, indent=2, sort_keys=True)
            fh.write("\n")
    return manifest


def load_offline(path, manifest_path=None) -> OfflineSpace:
    with open(path, "rb") as fh:
        blocks = _read_blocks(fh)
    labels = {name: blocks[name].ravel() for name in _LABELS}
    sel = None
    if "sel.n_edge" in blocks:
        sel = Selection(blocks["sel.n_edge"].ravel(), blocks["sel.m_elem"].ravel())
    lam = [blocks[k].ravel() for k in sorted((k for k in blocks if k.startswith("lambda.")),
                                              key=lambda s: int(s.split(".")[1]))]
    mu = [blocks[k].ravel() for k in sorted((k for k in blocks if k.startswith("mu.")),
                                            key=lambda s: int(s.split(".")[1]))]
    meta = {}
    if manifest_path is not None:
        with open(manifest_path) as fh:
            meta = json.load(fh).get("meta", {})
    return OfflineSpace(_coo_from(blocks, "Phi"), _coo_from(blocks, "Psi_I"), _coo_from(blocks, "Psi_B"),
                        selection=sel, edge_eigenvalues=lam, element_eigenvalues=mu, meta=meta, **labels)
