"""Staggered two-level triangulation.

The construction has three stages:

* an initial triangulation of the unit square (``build_structured_initial_mesh``),
* the coarse mesh obtained by joining each initial triangle's centroid to its
  vertices (``subdivide_by_centroid``), which also classifies the coarse edges
  into the inherited set ``ep`` and the new centroid-vertex set ``ev``,
* a conforming fine mesh obtained by ``r`` levels of uniform red refinement of
  every coarse triangle (``refine_uniform``).

All arrays are plain numpy arrays; meshes are treated as immutable once built.
Every edge carries one fixed unit normal.  For a coarse edge the normal is the
tangent from its lower to its higher vertex id rotated clockwise; fine edges
lying on a coarse edge inherit the coarse normal, all other fine edges follow
the same lower-to-higher rule.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "InitialMesh",
    "CoarseMesh",
    "EdgeSets",
    "FineMesh",
    "SkeletonSets",
    "EdgePatch",
    "StaggeredMesh",
    "MeshError",
    "build_structured_initial_mesh",
    "subdivide_by_centroid",
    "refine_uniform",
    "build_skeleton_sets",
    "build_staggered_mesh",
    "edge_patch",
    "signed_areas",
    "mesh_summary",
    "format_mesh_summary",
    "write_mesh_summary",
    "write_geometry",
]


class MeshError(ValueError):
    """Raised for invalid mesh input or inconsistent mesh pairs."""


def signed_areas(vertices: np.ndarray, triangles: np.ndarray) -> np.ndarray:
    p0 = vertices[triangles[:, 0]]
    d1 = vertices[triangles[:, 1]] - p0
    d2 = vertices[triangles[:, 2]] - p0
    return 0.5 * (d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0])


def _edge_topology(triangles: np.ndarray, nverts: int):
    """Unique edges of a triangulation.

    Returns ``edges`` (sorted vertex pairs, lexicographic order), ``tri_edges``
    with ``tri_edges[t, i]`` the edge opposite local vertex ``i`` and
    ``edge_tris`` (two adjacent triangles, ``-1`` when missing).
    """
    nt = len(triangles)
    a = triangles[:, [1, 2, 0]].ravel()
    b = triangles[:, [2, 0, 1]].ravel()
    lo = np.minimum(a, b).astype(np.int64)
    hi = np.maximum(a, b).astype(np.int64)
    key = lo * nverts + hi
    ukey, inverse = np.unique(key, return_inverse=True)
    edges = np.column_stack([ukey // nverts, ukey % nverts])
    tri_edges = inverse.reshape(nt, 3)

    edge_tris = np.full((len(edges), 2), -1, dtype=np.int64)
    tri_of = np.repeat(np.arange(nt), 3)
    order = np.argsort(inverse, kind="stable")
    sorted_e = inverse[order]
    first = np.ones(len(order), dtype=bool)
    first[1:] = sorted_e[1:] != sorted_e[:-1]
    edge_tris[sorted_e[first], 0] = tri_of[order[first]]
    second = ~first
    counts = np.bincount(inverse, minlength=len(edges))
    if np.any(counts > 2):
        raise MeshError("non-manifold triangulation: an edge is shared by more than two triangles")
    edge_tris[sorted_e[second], 1] = tri_of[order[second]]
    return edges, tri_edges, edge_tris


def _lo_hi_normals(vertices: np.ndarray, edges: np.ndarray) -> np.ndarray:
    t = vertices[edges[:, 1]] - vertices[edges[:, 0]]
    length = np.hypot(t[:, 0], t[:, 1])
    return np.column_stack([t[:, 1], -t[:, 0]]) / length[:, None]


def _outward_signs(vertices, triangles, tri_edges, normals) -> np.ndarray:
    """+1 where the stored edge normal points out of the triangle, else -1."""
    signs = np.empty(triangles.shape, dtype=np.int8)
    for i in range(3):
        p = vertices[triangles[:, (i + 1) % 3]]
        q = vertices[triangles[:, (i + 2) % 3]]
        d = q - p
        out = np.column_stack([d[:, 1], -d[:, 0]])
        s = np.einsum("ij,ij->i", out, normals[tri_edges[:, i]])
        signs[:, i] = np.where(s > 0, 1, -1)
    return signs


@dataclass(frozen=True, eq=False)
class InitialMesh:
    vertices: np.ndarray
    triangles: np.ndarray
    edges: np.ndarray
    tri_edges: np.ndarray
    edge_tris: np.ndarray

    @property
    def boundary(self) -> np.ndarray:
        return self.edge_tris[:, 1] < 0

    @property
    def n_triangles(self) -> int:
        return len(self.triangles)

    @property
    def n_edges(self) -> int:
        return len(self.edges)

    @classmethod
    def from_triangles(cls, vertices, triangles) -> "InitialMesh":
        vertices = np.asarray(vertices, dtype=float)
        triangles = np.asarray(triangles, dtype=np.int64)
        if not np.all(np.isfinite(vertices)):
            raise MeshError("vertex coordinates must be finite")
        area = signed_areas(vertices, triangles)
        if np.any(area <= 0):
            raise MeshError("triangles must have positive signed area (counter-clockwise)")
        edges, tri_edges, edge_tris = _edge_topology(triangles, len(vertices))
        return cls(vertices, triangles, edges, tri_edges, edge_tris)


def build_structured_initial_mesh(n: int) -> InitialMesh:
    """Uniform ``n`` x ``n`` square grid on the unit square, each cell cut by
    its lower-left to upper-right diagonal."""
    n = int(n)
    if n < 1:
        raise MeshError("subdivision count must be at least 1")
    xs = np.linspace(0.0, 1.0, n + 1)
    X, Y = np.meshgrid(xs, xs)
    vertices = np.column_stack([X.ravel(), Y.ravel()])
    i, j = np.meshgrid(np.arange(n), np.arange(n))
    i, j = i.ravel(), j.ravel()
    v00 = j * (n + 1) + i
    v10 = v00 + 1
    v01 = v00 + n + 1
    v11 = v01 + 1
    lower = np.column_stack([v00, v10, v11])
    upper = np.column_stack([v00, v11, v01])
    triangles = np.empty((2 * n * n, 3), dtype=np.int64)
    triangles[0::2] = lower
    triangles[1::2] = upper
    return InitialMesh.from_triangles(vertices, triangles)


@dataclass(frozen=True, eq=False)
class EdgeSets:
    """Classification of the coarse edges.

    ``ep`` are the edges inherited from the initial mesh (coarse ids
    ``0 .. n_initial_edges-1``, same order as the initial edges), ``ep0`` the
    interior ones among them, ``ev`` the centroid-vertex edges.
    """

    ep: np.ndarray
    ep0: np.ndarray
    ev: np.ndarray
    normals: np.ndarray

    @property
    def n_edges(self) -> int:
        return len(self.normals)

    def is_ep(self) -> np.ndarray:
        mask = np.zeros(self.n_edges, dtype=bool)
        mask[self.ep] = True
        return mask

    def is_ep0(self) -> np.ndarray:
        mask = np.zeros(self.n_edges, dtype=bool)
        mask[self.ep0] = True
        return mask


@dataclass(frozen=True, eq=False)
class CoarseMesh:
    vertices: np.ndarray
    triangles: np.ndarray
    parent: np.ndarray
    edges: np.ndarray
    tri_edges: np.ndarray
    edge_tris: np.ndarray
    signs: np.ndarray
    initial: InitialMesh

    @property
    def n_triangles(self) -> int:
        return len(self.triangles)

    @property
    def n_edges(self) -> int:
        return len(self.edges)

    @property
    def boundary(self) -> np.ndarray:
        return self.edge_tris[:, 1] < 0

    @property
    def areas(self) -> np.ndarray:
        return signed_areas(self.vertices, self.triangles)

    @property
    def edge_lengths(self) -> np.ndarray:
        d = self.vertices[self.edges[:, 1]] - self.vertices[self.edges[:, 0]]
        return np.hypot(d[:, 0], d[:, 1])


def subdivide_by_centroid(m: InitialMesh) -> tuple[CoarseMesh, EdgeSets]:
    """Split every initial triangle into three by joining its centroid to the
    vertices.

    Child ``3*t + i`` of parent ``t = (a0, a1, a2)`` is ``(a_i, a_{i+1}, g_t)``,
    so its edge opposite local vertex 2 is the inherited parent edge.
    """
    area = signed_areas(m.vertices, m.triangles)
    if np.any(area <= 0):
        raise MeshError("degenerate or clockwise parent triangle")
    nv0 = len(m.vertices)
    nt0 = len(m.triangles)
    ne0 = len(m.edges)
    centroids = m.vertices[m.triangles].mean(axis=1)
    vertices = np.vstack([m.vertices, centroids])
    g = nv0 + np.arange(nt0)

    tris = np.empty((3 * nt0, 3), dtype=np.int64)
    tri_edges = np.empty((3 * nt0, 3), dtype=np.int64)
    ev_edges = np.empty((3 * nt0, 2), dtype=np.int64)
    for i in range(3):
        a = m.triangles[:, i]
        b = m.triangles[:, (i + 1) % 3]
        tris[i::3] = np.column_stack([a, b, g])
        ev_edges[i::3] = np.column_stack([a, g])
    t = np.arange(nt0)
    for i in range(3):
        # child i: (a_i, a_{i+1}, g); opposite g is the parent edge opposite a_{i+2}
        tri_edges[3 * t + i, 2] = m.tri_edges[:, (i + 2) % 3]
        # opposite a_i is (a_{i+1}, g) -> ev edge 3t+(i+1); opposite a_{i+1} is (g, a_i) -> ev edge 3t+i
        tri_edges[3 * t + i, 0] = ne0 + 3 * t + (i + 1) % 3
        tri_edges[3 * t + i, 1] = ne0 + 3 * t + i
    edges = np.vstack([m.edges, ev_edges])
    parent = np.repeat(t, 3)

    edge_tris = np.full((len(edges), 2), -1, dtype=np.int64)
    fill = np.zeros(len(edges), dtype=np.int64)
    flat_t = np.repeat(np.arange(3 * nt0), 3)
    for tri, e in zip(flat_t, tri_edges.ravel()):
        edge_tris[e, fill[e]] = tri
        fill[e] += 1
    normals = _lo_hi_normals(vertices, edges)
    signs = _outward_signs(vertices, tris, tri_edges, normals)

    coarse = CoarseMesh(vertices, tris, parent, edges, tri_edges, edge_tris, signs, m)
    ep = np.arange(ne0)
    ep0 = ep[~m.boundary]
    ev = ne0 + np.arange(3 * nt0)
    return coarse, EdgeSets(ep, ep0, ev, normals)


def _lattice_template(N: int):
    """Lattice points ``(i, j)``, ``i + j <= N`` and the ``N**2`` sub-triangles
    of uniform refinement, with the coarse side (0: BC, 1: CA, 2: AB, -1: none)
    carrying each local fine edge."""
    pts = [(i, j) for j in range(N + 1) for i in range(N + 1 - j)]
    index = {p: k for k, p in enumerate(pts)}
    tris, sides = [], []
    for j in range(N):
        for i in range(N - j):
            tris.append((index[(i, j)], index[(i + 1, j)], index[(i, j + 1)]))
            # local edge opposite vertex 0 lies on BC when i+j+1 == N, etc.
            sides.append((0 if i + j + 1 == N else -1, 1 if i == 0 else -1, 2 if j == 0 else -1))
            if i + j <= N - 2:
                tris.append((index[(i + 1, j)], index[(i + 1, j + 1)], index[(i, j + 1)]))
                sides.append((-1, -1, -1))
    return np.array(pts, dtype=np.int64), np.array(tris, dtype=np.int64), np.array(sides, dtype=np.int64)


@dataclass(frozen=True, eq=False)
class FineMesh:
    vertices: np.ndarray
    triangles: np.ndarray
    coarse_parent: np.ndarray
    edges: np.ndarray
    tri_edges: np.ndarray
    edge_tris: np.ndarray
    edge_coarse: np.ndarray
    normals: np.ndarray
    signs: np.ndarray
    coarse_edge_fine_edges: np.ndarray
    level: int
    coarse: CoarseMesh

    @property
    def n_triangles(self) -> int:
        return len(self.triangles)

    @property
    def n_edges(self) -> int:
        return len(self.edges)

    @property
    def n_sub(self) -> int:
        """Fine edges per coarse edge."""
        return 2**self.level

    @property
    def boundary(self) -> np.ndarray:
        return self.edge_tris[:, 1] < 0

    @property
    def initial_parent(self) -> np.ndarray:
        return self.coarse.parent[self.coarse_parent]

    @property
    def areas(self) -> np.ndarray:
        return signed_areas(self.vertices, self.triangles)

    @property
    def edge_lengths(self) -> np.ndarray:
        d = self.vertices[self.edges[:, 1]] - self.vertices[self.edges[:, 0]]
        return np.hypot(d[:, 0], d[:, 1])

    @property
    def centroids(self) -> np.ndarray:
        return self.vertices[self.triangles].mean(axis=1)

    def triangles_of_coarse(self, k: int) -> np.ndarray:
        n = self.n_sub**2
        return np.arange(k * n, (k + 1) * n)

    @property
    def h(self) -> float:
        return float(self.edge_lengths.max())


def refine_uniform(c: CoarseMesh, r: int) -> FineMesh:
    """``r`` levels of red refinement of every coarse triangle.

    Implemented in one pass on the barycentric lattice with ``2**r`` cells per
    coarse edge, which yields exactly the triangulation produced by ``r``
    successive midpoint refinements.  Fine triangles of coarse triangle ``k``
    occupy the contiguous id range ``[k*4**r, (k+1)*4**r)``.
    """
    r = int(r)
    if r < 0:
        raise MeshError("refinement level must be nonnegative")
    N = 2**r
    nvc = len(c.vertices)
    nec = c.n_edges
    ntc = c.n_triangles
    n_edge_pts = N - 1
    n_int_pts = (N - 1) * (N - 2) // 2

    # global vertex ids: coarse vertices, edge-interior points, triangle-interior points
    edge_base = nvc
    tri_base = nvc + nec * n_edge_pts
    nverts = tri_base + ntc * n_int_pts

    vertices = np.empty((nverts, 2))
    vertices[:nvc] = c.vertices
    if n_edge_pts:
        k = np.arange(1, N) / N
        lo = c.vertices[c.edges[:, 0]]
        hi = c.vertices[c.edges[:, 1]]
        pts = lo[:, None, :] + k[None, :, None] * (hi - lo)[:, None, :]
        vertices[edge_base:tri_base] = pts.reshape(-1, 2)

    lattice, ltris, lsides = _lattice_template(N)
    li, lj = lattice[:, 0], lattice[:, 1]
    A = c.triangles[:, 0]
    B = c.triangles[:, 1]
    C = c.triangles[:, 2]
    ids = np.empty((ntc, len(lattice)), dtype=np.int64)

    def along(edge_ids, start_vertex, s):
        # point number s (1..N-1) measured from start_vertex along the edge
        lo_v = c.edges[edge_ids, 0]
        pos = np.where(lo_v[:, None] == start_vertex[:, None], s[None, :], N - s[None, :])
        return edge_base + edge_ids[:, None] * n_edge_pts + pos - 1

    e_ab = c.tri_edges[:, 2]
    e_ca = c.tri_edges[:, 1]
    e_bc = c.tri_edges[:, 0]
    cat_a = (li == 0) & (lj == 0)
    cat_b = (li == N) & (lj == 0)
    cat_c = (li == 0) & (lj == N)
    on_ab = (lj == 0) & (li > 0) & (li < N)
    on_ac = (li == 0) & (lj > 0) & (lj < N)
    on_bc = (li + lj == N) & (li > 0) & (lj > 0)
    interior = (li > 0) & (lj > 0) & (li + lj < N)
    ids[:, cat_a] = A[:, None]
    ids[:, cat_b] = B[:, None]
    ids[:, cat_c] = C[:, None]
    if n_edge_pts:
        ids[:, on_ab] = along(e_ab, A, li[on_ab])
        ids[:, on_ac] = along(e_ca, A, lj[on_ac])
        ids[:, on_bc] = along(e_bc, B, lj[on_bc])
    if n_int_pts:
        ids[:, interior] = tri_base + np.arange(ntc)[:, None] * n_int_pts + np.arange(n_int_pts)[None, :]
        w1 = li[interior] / N
        w2 = lj[interior] / N
        pa, pb, pc = c.vertices[A], c.vertices[B], c.vertices[C]
        ipts = pa[:, None, :] + w1[None, :, None] * (pb - pa)[:, None, :] + w2[None, :, None] * (pc - pa)[:, None, :]
        vertices[tri_base:] = ipts.reshape(-1, 2)

    triangles = ids[:, ltris].reshape(-1, 3)
    coarse_parent = np.repeat(np.arange(ntc), len(ltris))
    edges, tri_edges, edge_tris = _edge_topology(triangles, nverts)

    # coarse edge carried by each fine edge
    edge_coarse = np.full(len(edges), -1, dtype=np.int64)
    side = np.tile(lsides, (ntc, 1))
    has = side >= 0
    ct = np.broadcast_to(c.tri_edges[:, None, :], (ntc, len(ltris), 3)).reshape(-1, 3)
    rows, cols = np.nonzero(has)
    edge_coarse[tri_edges[rows, cols]] = ct[rows, side[rows, cols]]

    normals = _lo_hi_normals(vertices, edges)
    tagged = edge_coarse >= 0
    normals[tagged] = c_normals(c)[edge_coarse[tagged]]
    signs = _outward_signs(vertices, triangles, tri_edges, normals)

    # fine edges of each coarse edge, ordered from its lower to higher vertex
    chain = np.empty((nec, N + 1), dtype=np.int64)
    chain[:, 0] = c.edges[:, 0]
    chain[:, N] = c.edges[:, 1]
    if n_edge_pts:
        chain[:, 1:N] = edge_base + np.arange(nec)[:, None] * n_edge_pts + np.arange(n_edge_pts)[None, :]
    a = np.minimum(chain[:, :-1], chain[:, 1:]).ravel()
    b = np.maximum(chain[:, :-1], chain[:, 1:]).ravel()
    ekeys = edges[:, 0] * nverts + edges[:, 1]
    pos = np.searchsorted(ekeys, a * nverts + b)
    if np.any(ekeys[pos] != a * nverts + b):
        raise MeshError("fine mesh does not tile the coarse edges")
    cef = pos.reshape(nec, N)

    return FineMesh(vertices, triangles, coarse_parent, edges, tri_edges, edge_tris,
                    edge_coarse, normals, signs, cef, r, c)


def c_normals(c: CoarseMesh) -> np.ndarray:
    return _lo_hi_normals(c.vertices, c.edges)


@dataclass(frozen=True, eq=False)
class SkeletonSets:
    """Fine elements sharing an edge with an inherited coarse edge.

    ``khe[k]`` lists the fine triangles touching ``ep[k]``; ``kh`` is their union.
    ``khe_edge`` gives, for each entry of ``khe[k]``, the fine edge it shares
    with the coarse edge.
    """

    kh: np.ndarray
    khe: list = field(default_factory=list)
    khe_edge: list = field(default_factory=list)
    ep: np.ndarray = field(default_factory=lambda: np.empty(0, dtype=np.int64))

    def of_edge(self, E: int) -> np.ndarray:
        k = int(np.searchsorted(self.ep, E))
        if k >= len(self.ep) or self.ep[k] != E:
            raise KeyError(f"coarse edge {E} is not an inherited edge")
        return self.khe[k]


def build_skeleton_sets(f: FineMesh, e: EdgeSets) -> SkeletonSets:
    if f.coarse.n_edges != e.n_edges or f.coarse_edge_fine_edges.shape[0] != e.n_edges:
        raise MeshError("fine mesh and edge sets come from different coarse meshes")
    khe, khe_edge = [], []
    for E in e.ep:
        fe = f.coarse_edge_fine_edges[E]
        tris = f.edge_tris[fe]
        mask = tris >= 0
        khe.append(tris[mask])
        khe_edge.append(np.broadcast_to(fe[:, None], tris.shape)[mask])
    kh = np.unique(np.concatenate(khe)) if khe else np.empty(0, dtype=np.int64)
    return SkeletonSets(kh, khe, khe_edge, np.asarray(e.ep))


@dataclass(frozen=True)
class EdgePatch:
    edge: int
    elements: tuple


def edge_patch(c: CoarseMesh, E: int) -> EdgePatch:
    t = c.edge_tris[E]
    return EdgePatch(int(E), tuple(int(x) for x in t if x >= 0))


@dataclass(frozen=True, eq=False)
class StaggeredMesh:
    """Bundle of every mesh level used by the solvers."""

    initial: InitialMesh
    coarse: CoarseMesh
    edge_sets: EdgeSets
    fine: FineMesh
    skeleton: SkeletonSets
    n: int | None = None

    @property
    def level(self) -> int:
        return self.fine.level


def build_staggered_mesh(n: int, r: int) -> StaggeredMesh:
    m = build_structured_initial_mesh(n)
    return staggered_from_initial(m, r, n=n)


def staggered_from_initial(m: InitialMesh, r: int, n: int | None = None) -> StaggeredMesh:
    c, e = subdivide_by_centroid(m)
    f = refine_uniform(c, r)
    s = build_skeleton_sets(f, e)
    return StaggeredMesh(m, c, e, f, s, n)


def mesh_summary(sm: StaggeredMesh) -> dict:
    c, f, e = sm.coarse, sm.fine, sm.edge_sets
    return {
        "n_initial_triangles": sm.initial.n_triangles,
        "n_initial_edges": sm.initial.n_edges,
        "n_coarse_triangles": c.n_triangles,
        "n_coarse_edges": c.n_edges,
        "n_ep": int(len(e.ep)),
        "n_ep0": int(len(e.ep0)),
        "n_ev": int(len(e.ev)),
        "n_fine_triangles": f.n_triangles,
        "n_fine_edges": f.n_edges,
        "n_fine_vertices": len(f.vertices),
        "n_kh": int(len(sm.skeleton.kh)),
        "refinement_level": f.level,
        "H": _h_initial(sm.initial),
        "h": _h_fine(f),
    }


def _h_initial(m: InitialMesh) -> float:
    # mesh size of the structured grid is the leg length; use the shortest edge
    d = m.vertices[m.edges[:, 1]] - m.vertices[m.edges[:, 0]]
    return float(np.hypot(d[:, 0], d[:, 1]).min())


def _h_fine(f: FineMesh) -> float:
    # legs of the finest triangles along inherited edges
    fe = f.coarse_edge_fine_edges[: f.coarse.initial.n_edges]
    return float(f.edge_lengths[fe].min())


def format_mesh_summary(summary: dict) -> str:
    lines = ["Staggered mesh summary", "----------------------"]
    width = max(len(k) for k in summary)
    for k, v in summary.items():
        lines.append(f"{k.ljust(width)} : {v:.6g}" if isinstance(v, float) else f"{k.ljust(width)} : {v}")
    return "\n".join(lines) + "\n"


def write_mesh_summary(sm: StaggeredMesh, text_path, kv_path=None) -> dict:
    """Write the human-readable report and, optionally, ``key=value`` lines."""
    summary = mesh_summary(sm)
    with open(text_path, "w") as fh:
        fh.write(format_mesh_summary(summary))
    if kv_path is not None:
        with open(kv_path, "w") as fh:
            for k, v in summary.items():
                fh.write(f"{k}={v!r}\n")
    return summary


def read_kv(path) -> dict:
    out = {}
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            k, v = line.split("=", 1)
            try:
                out[k] = int(v)
            except ValueError:
                out[k] = float(v)
    return out


def write_geometry(f: FineMesh, path) -> None:
    """Plain-text vertex/triangle listing for plotting."""
    with open(path, "w") as fh:
        fh.write(f"vertices {len(f.vertices)}\n")
        np.savetxt(fh, f.vertices, fmt="%.17g")
        fh.write(f"triangles {len(f.triangles)}\n")
        np.savetxt(fh, f.triangles, fmt="%d")


def read_geometry(path):
    with open(path) as fh:
        nv = int(fh.readline().split()[1])
        verts = np.loadtxt(fh, max_rows=nv, ndmin=2)
        nt = int(fh.readline().split()[1])
        tris = np.loadtxt(fh, max_rows=nt, dtype=np.int64, ndmin=2)
    return verts, tris
