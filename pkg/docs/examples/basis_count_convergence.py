"""
Error against the number of basis functions
===========================================

Compare coarse solutions with the fine reference for a sweep of basis counts.
The source frequency is lower than in the standard setup so that the coarse
spaces resolve the pulse on this small mesh.
"""

import numpy as np

from gmsfem_wave.analysis import compare_to_reference
from gmsfem_wave.basis import assemble_offline_space, build_offline_basis, selection_from_counts
from gmsfem_wave.fem import assemble_forms, build_spaces
from gmsfem_wave.medium import SourceConfig, layered_random_medium, load_vector, ricker_time
from gmsfem_wave.mesh import build_staggered_mesh
from gmsfem_wave.solver import fine_system, reduce_system, run_leapfrog, stable_dt, time_grid

sm = build_staggered_mesh(4, 3)
medium = layered_random_medium(sm.fine, contrast=4.0)
spaces = build_spaces(sm.fine, sm.skeleton, sm.edge_sets)
forms = assemble_forms(sm.fine, medium, spaces)
ob = build_offline_basis(sm, spaces, forms, medium)

# Source at the centre with width 2h.
source = SourceConfig(f0=8.0, delta=2.0 / 32)
load = load_vector(sm.fine, source)
wavelet = lambda t: ricker_time(t, source.f0)  # noqa: E731

# The fine step is stable for every coarse space, so one grid serves all runs.
fine = fine_system(spaces, forms, load)
dt, n = time_grid(0.3, stable_dt(fine))
reference = run_leapfrog(fine, dt, n, wavelet)

boundary, interior = (2, 3, 4), (2, 6, 10)
table = np.zeros((len(boundary), len(interior)))
for i, b in enumerate(boundary):
    for j, m in enumerate(interior):
        space = assemble_offline_space(ob, selection_from_counts(sm, b, m))
        coarse = run_leapfrog(reduce_system(space, forms, load), dt, n, wavelet)
        table[i, j] = compare_to_reference(coarse, reference, space, forms).rel_err_p

print("relative pressure error (%), rows: boundary", boundary, "columns: interior", interior)
print(np.array2string(100 * table, precision=2))
