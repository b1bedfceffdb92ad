import numpy as np
import pytest
import scipy.linalg as sla

from gmsfem_wave.basis import (Selection, assemble_offline_space, build_edge_snapshots, build_element_eig,
                               build_first_basis, build_local_elements, build_offline_basis, edge_spectral,
                               load_offline, save_offline, selection_from_counts, zero_mean_edge_basis)
from gmsfem_wave.fem import assemble_forms
from gmsfem_wave.mesh import edge_patch


def _bottom_edge(c):
    y = c.vertices[c.edges][:, :, 1]
    return int(np.flatnonzero(np.all(np.abs(y) < 1e-14, axis=1) & c.boundary)[0])


def test_first_basis_unit_square_constant(problem_cache):
    pr = problem_cache(1, 1)
    c = pr.sm.coarse
    E = _bottom_edge(c)
    local = build_local_elements(pr.sm, pr.spaces, pr.forms, pr.medium)
    fb = build_first_basis(E, pr.sm, pr.forms, local)
    assert len(fb.elements) == 1
    assert c.areas[fb.elements[0]] == pytest.approx(1 / 6)
    assert abs(fb.divergence[0]) == pytest.approx(6.0)


def test_first_basis_traces_and_divergence(small):
    sm, spaces, forms = small.sm, small.spaces, small.forms
    c = sm.coarse
    local = build_local_elements(sm, spaces, forms, small.medium)
    for E in range(c.n_edges):
        fb = build_first_basis(E, sm, forms, local)
        for K, v in zip(fb.elements, fb.velocity):
            le = local[K]
            s = le.coarse_signs[list(le.coarse_edges).index(E)]
            div = le.B @ v / le.areas
            assert np.allclose(s * div, c.edge_lengths[E] / c.areas[K], rtol=1e-12, atol=0)
            for F in le.coarse_edges:
                expected = 1.0 if F == E else 0.0
                assert np.allclose(v[le.edge_loc[int(F)]], expected, atol=1e-14)
            # total outward flux equals the integral of the divergence
            assert s * (le.B @ v).sum() == pytest.approx(c.edge_lengths[E], rel=1e-12)
            assert abs(fb.pressure[list(fb.elements).index(K)] @ le.areas) < 1e-12


def test_first_basis_is_rt0_function_without_refinement(problem_cache):
    pr = problem_cache(2, 0)
    local = build_local_elements(pr.sm, pr.spaces, pr.forms, pr.medium)
    for E in range(pr.sm.coarse.n_edges):
        fb = build_first_basis(E, pr.sm, pr.forms, local)
        for K, v in zip(fb.elements, fb.velocity):
            le = local[K]
            assert le.n_local == 3
            expected = np.isin(le.fine_edges, pr.sm.fine.coarse_edge_fine_edges[E]).astype(float)
            assert np.allclose(v, expected, atol=1e-15)


def test_snapshot_counts(problem_cache):
    for r, N in ((0, 0), (1, 1), (3, 7)):
        pr = problem_cache(1, r)
        local = build_local_elements(pr.sm, pr.spaces, pr.forms, pr.medium)
        snap = build_edge_snapshots(0, pr.sm, pr.forms, local)
        assert snap.n_snapshots == N
    d = zero_mean_edge_basis(np.array([0.5, 0.5]))
    assert np.allclose(np.abs(d[:, 0]), 1.0)
    assert d[0, 0] == pytest.approx(-d[1, 0])


def test_zero_mean_basis_is_orthonormal():
    lengths = np.random.default_rng(0).uniform(0.1, 1.0, 6)
    D = zero_mean_edge_basis(lengths)
    assert D.shape == (6, 5)
    assert np.allclose(lengths @ D, 0, atol=1e-14)
    assert np.allclose(D.T @ (lengths[:, None] * D), np.eye(5), atol=1e-14)


def test_snapshots_are_weakly_divergence_free(problem_cache):
    pr = problem_cache(2, 3, "random")
    local = build_local_elements(pr.sm, pr.spaces, pr.forms, pr.medium)
    for E in range(pr.sm.coarse.n_edges):
        snap = build_edge_snapshots(E, pr.sm, pr.forms, local)
        assert snap.n_snapshots == 7
        for K, v in zip(snap.elements, snap.velocity):
            assert np.abs(local[K].B @ v).max() < 1e-12


def _dense_patch_matrices(snap, lengths, local):
    A = snap.deltas.T @ (lengths[:, None] * snap.deltas)
    B = sum(v.T @ local[K].M @ v for K, v in zip(snap.elements, snap.velocity))
    return A, B


def test_edge_spectral_against_dense_solver(small):
    sm, forms = small.sm, small.forms
    local = build_local_elements(sm, small.spaces, forms, small.medium)
    for E in range(sm.coarse.n_edges):
        snap = build_edge_snapshots(E, sm, forms, local)
        eb = edge_spectral(snap, sm, forms, local)
        lengths = forms.lengths[sm.fine.coarse_edge_fine_edges[E]]
        A, B = _dense_patch_matrices(snap, lengths, local)
        ref = sla.eigh(A, B, eigvals_only=True)
        assert np.allclose(eb.eigenvalues, ref, rtol=1e-10)
        for j, lam in enumerate(eb.eigenvalues):
            c = eb.coeffs[:, j]
            assert np.linalg.norm(A @ c - lam * B @ c) < 1e-10 * np.linalg.norm(A @ c)
        # unit L2 trace, orthogonal traces, zero mean
        G = eb.traces.T @ (lengths[:, None] * eb.traces)
        assert np.allclose(G, np.eye(len(eb.eigenvalues)), atol=1e-10)
        assert np.allclose(lengths @ eb.traces, 0, atol=1e-12)


def test_single_snapshot_eigenvalue(problem_cache):
    pr = problem_cache(1, 1, "random")
    local = build_local_elements(pr.sm, pr.spaces, pr.forms, pr.medium)
    snap = build_edge_snapshots(3, pr.sm, pr.forms, local)
    eb = edge_spectral(snap, pr.sm, pr.forms, local)
    assert eb.eigenvalues[0] == pytest.approx(eb.A[0, 0] / eb.B[0, 0], rel=1e-13)


def _projector(X, W=None):
    Q, _ = np.linalg.qr(X if W is None else W @ X)
    return Q @ Q.T


def test_kappa_scaling(small):
    s = 3.5
    sm = small.sm
    forms2 = assemble_forms(sm.fine, small.medium.scaled(s_kappa=s), small.spaces)
    a = small.offline
    b = build_offline_basis(sm, small.spaces, forms2, small.medium.scaled(s_kappa=s))
    for ea, eb_ in zip(a.edges, b.edges):
        assert np.allclose(eb_.eigenvalues, ea.eigenvalues / s, rtol=1e-10)
        k = 2
        assert np.allclose(_projector(ea.traces[:, :k]), _projector(eb_.traces[:, :k]), atol=1e-8)
    for ka, kb in zip(a.elements, b.elements):
        assert np.allclose(kb.eigenvalues, ka.eigenvalues / s, rtol=1e-10)


def test_element_modes(small):
    ob = small.offline
    rho = small.medium.rho
    for le, el in zip(ob.local, ob.elements):
        P = el.pressure
        assert P.shape[1] == len(le.tris) - 1
        assert np.allclose(le.areas @ P, 0, atol=1e-13)
        W = rho[le.tris] * le.areas
        assert np.allclose(P.T @ (W[:, None] * P), np.eye(P.shape[1]), atol=1e-12)
        # dense oracle on the same matrices
        ref = sla.eigh(el.A, el.B, eigvals_only=True)
        assert np.allclose(el.eigenvalues, ref, rtol=1e-10)
        # weak eigen relation: int p_i div(phi_j) = mu_j delta_ij
        Dv = le.B @ el.velocity
        assert np.allclose(P.T @ Dv, np.diag(el.eigenvalues), atol=1e-10 * el.eigenvalues.max())
        assert np.all(np.diff(el.eigenvalues) >= -1e-12)


def test_element_modes_empty_without_refinement(problem_cache):
    pr = problem_cache(1, 0)
    local = build_local_elements(pr.sm, pr.spaces, pr.forms, pr.medium)
    assert all(len(build_element_eig(le).eigenvalues) == 0 for le in local)


def test_eigenvalue_monotonicity_under_enrichment(small):
    for eb in small.offline.edges:
        A, B = eb.A, eb.B
        full = sla.eigh(A, B, eigvals_only=True)
        for k in range(1, A.shape[0]):
            sub = sla.eigh(A[:k, :k], B[:k, :k], eigvals_only=True)
            assert np.all(full[:k] <= sub * (1 + 1e-10))


def test_selection_validation(small):
    ob = small.offline
    c = small.sm.coarse
    with pytest.raises(ValueError):
        assemble_offline_space(ob, Selection.uniform(c.n_edges, c.n_triangles, 99, 0))
    with pytest.raises(ValueError):
        assemble_offline_space(ob, Selection.uniform(c.n_edges, c.n_triangles, 0, 99))
    with pytest.raises(ValueError):
        assemble_offline_space(ob, Selection.uniform(c.n_edges, c.n_triangles, -1, 0))
    with pytest.raises(ValueError):
        selection_from_counts(small.sm, 0, 3)


@pytest.mark.parametrize("counts", [(1, 0), (2, 3), (4, 15)])
def test_offline_space_structure(small, counts):
    sm, spaces = small.sm, small.spaces
    sp_ = assemble_offline_space(small.offline, selection_from_counts(sm, *counts))
    n_e, m_k = counts[0] - 1, counts[1]
    c = sm.coarse
    n_ep0 = len(sm.edge_sets.ep0)
    assert sp_.n_velocity == (c.n_edges + n_ep0) * (n_e + 1) + c.n_triangles * m_k
    assert sp_.Psi_I.shape[1] == c.n_triangles * (m_k + 1)
    # penalty pressure dimension is n_E + 1 per interior inherited edge
    assert sp_.Psi_B.shape[1] == n_ep0 * (n_e + 1)
    assert np.all(np.bincount(sp_.pB_block) == n_e + 1)
    # every velocity column lives inside one initial triangle
    Phi = sp_.Phi.tocsc()
    for j in range(Phi.shape[1]):
        rows = Phi.indices[Phi.indptr[j]:Phi.indptr[j + 1]]
        blocks = np.unique(spaces.vhat.dof_block[rows])
        assert blocks.tolist() == [sp_.v_block[j]]


def test_minimal_selection_keeps_only_first_basis(small):
    sp_ = assemble_offline_space(small.offline, selection_from_counts(small.sm, 1, 0))
    assert set(sp_.v_kind.tolist()) == {0}
    assert set(sp_.pI_kind.tolist()) == {0}
    assert np.all(sp_.pB_mode == 0)


def test_save_load_roundtrip(tmp_path, small):
    sp_ = assemble_offline_space(small.offline, selection_from_counts(small.sm, 3, 5))
    m1 = save_offline(sp_, tmp_path / "a.bin", tmp_path / "a.json", extra={"tag": 1})
    m2 = save_offline(sp_, tmp_path / "b.bin", tmp_path / "b.json", extra={"tag": 1})
    assert (tmp_path / "a.bin").read_bytes() == (tmp_path / "b.bin").read_bytes()
    assert m1["sha256"] == m2["sha256"]
    back = load_offline(tmp_path / "a.bin", tmp_path / "a.json")
    for name in ("Phi", "Psi_I", "Psi_B"):
        assert abs(getattr(back, name) - getattr(sp_, name)).max() == 0
    assert np.array_equal(back.v_block, sp_.v_block)
    assert np.array_equal(back.selection.n_edge, sp_.selection.n_edge)
    assert all(np.array_equal(a, b) for a, b in zip(back.edge_eigenvalues, sp_.edge_eigenvalues))
    with open(tmp_path / "junk.bin", "wb") as fh:
        fh.write(b"not a file")
    with pytest.raises(ValueError):
        load_offline(tmp_path / "junk.bin")


def test_threaded_build_is_identical(small):
    ob = build_offline_basis(small.sm, small.spaces, small.forms, small.medium, threads=3)
    sel = selection_from_counts(small.sm, 3, 4)
    a = assemble_offline_space(small.offline, sel)
    b = assemble_offline_space(ob, sel)
    assert abs(a.Phi - b.Phi).max() == 0 and abs(a.Psi_I - b.Psi_I).max() == 0


def test_patch_membership(small):
    c = small.sm.coarse
    for E in range(c.n_edges):
        p = edge_patch(c, E).elements
        assert len(p) == (1 if c.boundary[E] else 2)
