"""Newest-vertex bisection mechanics: refinement, completion, overlay.

Bisects a few random elements of a small mesh, shows how conforming
completion enlarges the marked set, and demonstrates the mesh-overlay
(coarsest common refinement) operation and its cardinality bound.
"""

import numpy as np

import goafem

rng = np.random.default_rng(0)

base = goafem.unit_square_mesh(cells=2)
print(f"base mesh: {base.num_leaves} elements")

m1 = base.clone()
for step in range(4):
    leaves = m1.leaf_ids()
    marked = set(rng.choice(leaves, size=3, replace=False).tolist())
    report = m1.refine(marked)
    print(f"  step {step}: marked {len(marked)}, completion bisected "
          f"{len(report.refined_set)} -> {m1.num_leaves} elements")
m1.check_conformity()
print(f"conforming, min angle {m1.stats().min_angle:.3f} rad "
      f"(>= bound {m1.min_angle_bound():.3f})")

m2 = base.clone()
m2.refine_uniform(2)
print(f"\nsecond mesh (2 uniform rounds): {m2.num_leaves} elements")

ov = goafem.overlay(m1, m2)
ov.check_conformity()
bound = m1.num_leaves + m2.num_leaves - base.num_leaves
print(f"overlay: {ov.num_leaves} elements "
      f"(bound #T1 + #T2 - #T0 = {bound})")

path = "overlay_demo.mesh"
ov.write(path)
back = goafem.Mesh.read(path)
print(f"round-tripped through {path}: {back.num_leaves} elements")
