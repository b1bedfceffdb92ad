"""Norms, interpolants onto the coarse spaces and error metrics.

The interpolant keeps the selected coarse modes of a fine function:

* element pressures: the coarse average plus the rho-weighted coefficients
  of the kept zero-mean element modes,
* penalty pressures: the edge average plus the L2(E) coefficients of the kept
  trace modes,
* velocities: the edge averages and kept trace coefficients of the normal
  trace (each side separately where the space is decoupled), plus element
  modes matched through their divergence.

All coefficient maps are linear, so they are assembled once as sparse
matrices (``Interpolator``).
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .basis import OfflineSpace
from .fem import AssembledForms, Spaces, element_mass_matrices
from .mesh import FineMesh, StaggeredMesh
from .solver import History

__all__ = [
    "q_norm",
    "v_norm",
    "InterpolantCoefficients",
    "Interpolator",
    "interpolate",
    "lemma_residuals",
    "eigenvalue_envelopes",
    "ErrorReport",
    "compare_to_reference",
    "write_error_table",
    "read_error_table",
]


def q_norm(p, f: FineMesh, medium) -> float:
    """rho-weighted L2 norm of a piecewise constant pressure."""
    p = np.asarray(p, dtype=float)
    return math.sqrt(float(np.sum(medium.rho * f.areas * p * p)))


def v_norm(v, f: FineMesh, medium, spaces: Spaces | None = None) -> float:
    """kappa-weighted L2 norm of an RT0 velocity.

    ``v`` holds coefficients of the coupled space (one per fine edge) or, if
    ``spaces`` is given and the length matches, of the decoupled space.
    """
    v = np.asarray(v, dtype=float)
    dofs = f.tri_edges
    if spaces is not None and len(v) == spaces.vhat.n_dofs:
        dofs = spaces.vhat.elem_dofs
    elif len(v) != f.n_edges:
        raise ValueError(f"velocity has {len(v)} coefficients; expected {f.n_edges}")
    local = element_mass_matrices(f.vertices, f.triangles, f.signs, medium.kappa)
    vl = v[dofs]
    return math.sqrt(float(np.einsum("ti,tij,tj->", vl, local, vl)))


@dataclass(eq=False)
class InterpolantCoefficients:
    """Coarse coefficients of the interpolant, split by kind.

    ``a0[K]``, ``a[K]`` element pressure averages and mode coefficients;
    ``b0[k]``, ``b[k]`` the same for the penalty pressures on the k-th interior
    inherited edge; ``c`` velocity coefficients of edge functions as a dict
    ``(E, side) -> array`` (entry 0 the average normal trace); ``d[K]`` element
    velocity coefficients.
    """

    a0: np.ndarray
    a: list
    b0: np.ndarray
    b: list
    c: dict
    d: list
    vH: np.ndarray
    pI: np.ndarray
    pB: np.ndarray


def _col(M: sp.csc_matrix, k: int):
    s, e = M.indptr[k], M.indptr[k + 1]
    return M.indices[s:e], M.data[s:e]


class Interpolator:
    """Linear maps from decoupled fine functions to coarse coefficients."""

    def __init__(self, space: OfflineSpace, sm: StaggeredMesh, spaces: Spaces, forms: AssembledForms):
        if np.any(space.v_kind < 0):
            raise ValueError("the identity space has no modal structure to interpolate onto")
        self.space = space
        self.forms = forms
        f = sm.fine
        Phi = space.Phi.tocsc()
        Psi_I = space.Psi_I.tocsc()
        Psi_B = space.Psi_B.tocsc()
        lengths = forms.lengths
        extra = spaces.vhat.extra_dof
        D_hat = forms.D_hat.tocsr()
        self.D_hat = D_hat
        self.J = forms.J.tocsr()

        rows, cols, vals = [], [], []
        for k in range(Phi.shape[1]):
            kind, ent, side = int(space.v_kind[k]), int(space.v_entity[k]), int(space.v_side[k])
            if kind == 2:
                idx = np.flatnonzero((space.pI_block == ent) & (space.pI_mode == space.v_mode[k]))
                t, p = _col(Psi_I, int(idx[0]))
                phi = Phi[:, k]
                mu = float(p @ (D_hat[t] @ phi).toarray().ravel())
                row = sp.csr_matrix((p, (np.zeros(len(t), dtype=np.int64), t)), shape=(1, D_hat.shape[0])) @ D_hat
                row = row.tocoo()
                rows.append(np.full(row.nnz, k))
                cols.append(row.col)
                vals.append(row.data / mu)
            else:
                fe = f.coarse_edge_fine_edges[ent]
                dofs = extra[fe] if side < 0 else fe
                trace = Phi[dofs, k].toarray().ravel()
                w = lengths[fe] * trace
                rows.append(np.full(len(fe), k))
                cols.append(dofs)
                vals.append(w / float(w @ trace))
        self.Cv = sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                                shape=(Phi.shape[1], spaces.vhat.n_dofs))

        wq = forms.Mp
        areas = forms.areas
        rows, cols, vals = [], [], []
        for k in range(Psi_I.shape[1]):
            t, p = _col(Psi_I, k)
            avg = areas[t] / areas[t].sum()
            if space.pI_kind[k] == 0:
                r = avg
            else:
                r = wq[t] * p - float(wq[t] @ p) * avg
            rows.append(np.full(len(t), k))
            cols.append(t)
            vals.append(r)
        self.Cp = sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                                shape=(Psi_I.shape[1], Psi_I.shape[0]))

        pen = spaces.penalty
        plen = lengths[pen.edges[pen.interior]]
        rows, cols, vals = [], [], []
        for k in range(Psi_B.shape[1]):
            r, t = _col(Psi_B, k)
            w = plen[r] * t
            rows.append(np.full(len(r), k))
            cols.append(r)
            vals.append(w / float(w @ t))
        self.Cb = sp.csr_matrix((np.concatenate(vals) if vals else np.zeros(0),
                                 (np.concatenate(rows) if rows else np.zeros(0, dtype=np.int64),
                                  np.concatenate(cols) if cols else np.zeros(0, dtype=np.int64))),
                                shape=(Psi_B.shape[1], Psi_B.shape[0]))
        self.Phi, self.Psi_I, self.Psi_B = Phi, Psi_I, Psi_B

    def coefficients(self, v, pI, pB) -> InterpolantCoefficients:
        s = self.space
        vH, aH, bH = self.Cv @ v, self.Cp @ pI, self.Cb @ pB
        nK = int(s.pI_block.max()) + 1 if len(s.pI_block) else 0
        a0 = aH[s.pI_kind == 0]
        a = [aH[(s.pI_block == K) & (s.pI_kind == 2)] for K in range(nK)]
        nb = int(s.pB_block.max()) + 1 if len(s.pB_block) else 0
        b0 = bH[s.pB_mode == 0]
        b = [bH[(s.pB_block == k) & (s.pB_mode > 0)] for k in range(nb)]
        c = {}
        edge = s.v_kind < 2
        for E, side in sorted(set(zip(s.v_entity[edge].tolist(), s.v_side[edge].tolist()))):
            c[(E, side)] = vH[edge & (s.v_entity == E) & (s.v_side == side)]
        d = [vH[(s.v_kind == 2) & (s.v_entity == K)] for K in range(nK)]
        return InterpolantCoefficients(a0, a, b0, b, c, d, vH, aH, bH)

    def __call__(self, v, pI, pB):
        """``(pi(v), pi(pI), pi(pB))`` as fine coefficient vectors."""
        return self.Phi @ (self.Cv @ v), self.Psi_I @ (self.Cp @ pI), self.Psi_B @ (self.Cb @ pB)


def interpolate(v, pI, pB, space: OfflineSpace, sm: StaggeredMesh, spaces: Spaces, forms: AssembledForms,
                interp: Interpolator | None = None):
    """Interpolants of a decoupled fine velocity and element/penalty pressures."""
    interp = interp or Interpolator(space, sm, spaces, forms)
    return interp(np.asarray(v, float), np.asarray(pI, float), np.asarray(pB, float))


def _rel(r, ref):
    top = float(np.max(np.abs(r))) if r.size else 0.0
    bot = float(np.max(np.abs(ref))) if ref.size else 0.0
    return top / bot if bot > 0 else top


def lemma_residuals(v, pI, pB, space: OfflineSpace, sm: StaggeredMesh, spaces: Spaces, forms: AssembledForms,
                    interp: Interpolator | None = None) -> np.ndarray:
    """The four orthogonality residuals of the interpolant, relative to the input.

    1. max over coarse velocities w of |int (pI - pi pI) div w|
    2. max over w of |sum_E int_E (pB - pi pB) [w.n]|
    3. max over coarse element pressures q of |int q div (v - pi v)|
    4. max over coarse penalty pressures q of |sum_E int_E q [(v - pi v).n]|

    Each is divided by the same functional applied to the untruncated input.
    """
    interp = interp or Interpolator(space, sm, spaces, forms)
    v, pI, pB = (np.asarray(x, dtype=float) for x in (v, pI, pB))
    iv, ipI, ipB = interp(v, pI, pB)
    D, J, Phi = interp.D_hat, interp.J, interp.Phi
    f1 = lambda p: Phi.T @ (D.T @ p)  # noqa: E731
    f2 = lambda p: Phi.T @ (J.T @ p)  # noqa: E731
    f3 = lambda w: interp.Psi_I.T @ (D @ w)  # noqa: E731
    f4 = lambda w: interp.Psi_B.T @ (J @ w)  # noqa: E731
    return np.array([
        _rel(f1(pI - ipI), f1(pI)),
        _rel(f2(pB - ipB), f2(pB)),
        _rel(f3(v - iv), f3(v)),
        _rel(f4(v - iv), f4(v)),
    ])


def eigenvalue_envelopes(space: OfflineSpace):
    """``(max_E 1/lambda_{E, n_E+1}, max_K 1/mu_{K, m_K+1})`` for the space's selection.

    Entities whose modes are exhausted contribute zero.
    """
    sel = space.selection
    if sel is None:
        raise ValueError("space carries no selection")

    def env(eigs, counts):
        out = 0.0
        for lam, n in zip(eigs, counts):
            if n < len(lam):
                out = max(out, 1.0 / float(lam[n]))
        return out

    return env(space.edge_eigenvalues, sel.n_edge), env(space.element_eigenvalues, sel.m_elem)


@dataclass(eq=False)
class ErrorReport:
    rel_err_p: float
    rel_err_v: float
    times: np.ndarray = field(default_factory=lambda: np.zeros(0))
    series_p: np.ndarray = field(default_factory=lambda: np.zeros(0))
    series_v: np.ndarray = field(default_factory=lambda: np.zeros(0))
    nb_boundary: int | None = None
    nb_interior: int | None = None

    def row(self):
        return (self.nb_boundary, self.nb_interior, self.rel_err_p, self.rel_err_v)


def _errors(space, forms, vH, pH, v, p):
    nt = len(forms.Mp)
    pf = p[:nt]
    pc = space.Psi_I @ pH[: space.Psi_I.shape[1]]
    dp = pc - pf
    ep = math.sqrt(float(dp @ (forms.Mp * dp)))
    np_ = math.sqrt(float(pf @ (forms.Mp * pf)))
    dv = space.Phi @ vH - v
    M = forms.Mv_hat
    ev = math.sqrt(float(dv @ (M @ dv)))
    nv = math.sqrt(float(v @ (M @ v)))
    return (ep / np_ if np_ > 0 else ep), (ev / nv if nv > 0 else ev)


def compare_to_reference(coarse: History, fine: History, space: OfflineSpace, forms: AssembledForms,
                         sample_steps=None, counts=None) -> ErrorReport:
    """Relative Q-norm pressure and V-norm velocity errors against the fine run.

    Pressures are compared at synchronized times on the element part; the
    denominators are the fine reference norms.  ``sample_steps`` picks extra
    times from the snapshots both runs stored.
    """
    if not math.isclose(coarse.dt, fine.dt, rel_tol=1e-12) or coarse.n_steps != fine.n_steps:
        raise ValueError(f"time grids differ: dt {coarse.dt} vs {fine.dt}, "
                         f"steps {coarse.n_steps} vs {fine.n_steps}")
    times, sp_, sv = [], [], []
    if sample_steps is not None:
        cs = {s[0]: s for s in coarse.snapshots}
        fs = {s[0]: s for s in fine.snapshots}
        for k in sample_steps:
            if k not in cs or k not in fs:
                raise ValueError(f"step {k} was not stored by both runs")
            e = _errors(space, forms, cs[k][2], cs[k][3], fs[k][2], fs[k][3])
            times.append(cs[k][1])
            sp_.append(e[0])
            sv.append(e[1])
    ep, ev = _errors(space, forms, coarse.final.v, coarse.final.p_sync(), fine.final.v, fine.final.p_sync())
    nb, ni = counts if counts is not None else (None, None)
    return ErrorReport(ep, ev, np.array(times), np.array(sp_), np.array(sv), nb, ni)


_HEADER = ["nb_boundary", "nb_interior", "rel_err_p", "rel_err_v"]


def write_error_table(reports, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(_HEADER)
        for r in reports:
            nb, ni, ep, ev = r.row()
            w.writerow([nb, ni, repr(float(ep)), repr(float(ev))])


def read_error_table(path) -> list:
    with open(path, newline="") as fh:
        rd = csv.reader(fh)
        head = next(rd, None)
        if head is None:
            return []
        if [h.strip() for h in head] != _HEADER:
            raise ValueError(f"{path}: unexpected header {head}")
        return [ErrorReport(float(ep), float(ev), nb_boundary=int(nb), nb_interior=int(ni))
                for nb, ni, ep, ev in rd]
