"""
Building the coarse spaces
==========================

Walk through the offline stage on a small mesh: the staggered coarse mesh,
the local spectral problems and the decay of their eigenvalues, which decides
how many modes are worth keeping.
"""

import numpy as np

from gmsfem_wave import mesh as gm
from gmsfem_wave.basis import assemble_offline_space, build_offline_basis, selection_from_counts
from gmsfem_wave.fem import assemble_forms, build_spaces
from gmsfem_wave.medium import layered_random_medium

# 4x4 squares split along the diagonal, each triangle cut at its centroid,
# then refined three times: 64 fine triangles per coarse triangle.
sm = gm.build_staggered_mesh(4, 3)
print(gm.format_mesh_summary(gm.mesh_summary(sm)))

# Seeded layered medium: 16 horizontal bands with a 1:10 contrast.
medium = layered_random_medium(sm.fine, seed=7, layers=16, contrast=10.0)
spaces = build_spaces(sm.fine, sm.skeleton, sm.edge_sets)
forms = assemble_forms(sm.fine, medium, spaces)

# One local solve per coarse edge and element; eigenvalues ascend.
ob = build_offline_basis(sm, spaces, forms, medium)
lam = np.array([e.eigenvalues for e in ob.edges])
mu = np.array([k.eigenvalues for k in ob.elements])
print("edge eigenvalues, median over edges:", np.round(np.median(lam, axis=0), 2))
print("element eigenvalues, median over elements (first 12):", np.round(np.median(mu, axis=0)[:12], 1))

# Selection: 4 functions per coarse edge, 12 modes per coarse element.
space = assemble_offline_space(ob, selection_from_counts(sm, 4, 12))
print(f"dim V_H = {space.n_velocity}, dim Q_H = {space.n_pressure}")
print(f"fine problem: {spaces.vhat.n_dofs} velocity and {spaces.n_elements + spaces.penalty.n_interior} "
      f"pressure unknowns")
