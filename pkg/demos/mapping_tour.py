"""Narrated tour of the mapping pipeline on synthetic scenes.

Run with ``python3 demos/mapping_tour.py``. Each section runs one scenario
and prints what the map got right (or wrong, when a feature is switched off).
"""
from reliefmap import scenarios


def section(title):
    print(f"\n== {title} ==")


section("Fusing noiseless scans of flat ground")
flat = scenarios.run_noiseless_flat(n_scans=50)
print(f"largest height error {flat.max_abs_height:.1e} m; "
      f"variance shrinks with every fusion: {flat.variance_decreasing}")

section("Noisy depth measurements")
noisy = scenarios.run_noise_convergence(alpha_d=0.01, n_scans=100)
print(f"height rmse {noisy.rmse:.3f} m over {noisy.cells} cells "
      f"(model predicts a std of about {noisy.theoretical_std:.3f} m)")

section("Odometry drift in z")
for compensate in (False, True):
    drift = scenarios.run_drift_ablation(compensate=compensate)
    print(f"compensation {'on ' if compensate else 'off'}: seam between old and new map {drift.seam:.3f} m")

section("A box that moves away")
for cleanup in (False, True):
    box = scenarios.run_dynamic_box(cleanup=cleanup)
    print(f"ray-cast cleanup {'on ' if cleanup else 'off'}: "
          f"{box.recovered_fraction:.0%} of the vacated footprint back at ground height")

section("Walking under a table top")
for exclusion in (False, True):
    slab = scenarios.run_overhang(exclusion=exclusion)
    print(f"exclusion {'on ' if exclusion else 'off'}: "
          f"{slab.near_slab_fraction:.0%} of the cells under the slab report the slab height")

section("Upper bounds behind an obstacle")
ub = scenarios.run_upper_bound()
print(f"{ub.finite_bounds} of {ub.shadowed_cells} shadowed cells got an upper bound; "
      f"later observations never exceeded it ({ub.point_violations} violations)")

section("Walking down to the lower floor")
floors = scenarios.run_two_floors(overlap=True)
print(f"{floors.stale_cells} cells from the upper floor remain near the robot")

section("Planar regions on a staircase")
from reliefmap import PlaneSegParams, segment_planes  # noqa: E402

stairs = scenarios.staircase_map(noise_std=0.005, seed=1)
for region in sorted(segment_planes(stairs.emap, PlaneSegParams(dist_max=0.02)),
                     key=lambda r: r.offset / r.normal[2]):
    print(f"tread at z={region.offset / region.normal[2]:.3f} m, {region.cell_count} cells, "
          f"area {region.area:.2f} m^2")
