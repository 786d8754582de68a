"""Ray-consistency fitting vs per-voxel depth fusion under noise.

Depth fusion counts, for every voxel, the rays that pass through it
(empty votes) and the rays that terminate in it (occupied votes).  Each
noisy ray casts hard independent votes, so noise directly corrupts the
counts.  The expected-cost loss only pays a small penalty for a noisy
ray on the true shape, which is why the fitted grid degrades gently.
"""

from drc.fitter import FitConfig, fit
from drc.fusion import fuse_depth, fused_to_occupancy_grid
from drc.metrics import best_threshold
from drc.renderer import add_depth_noise, make_test_shape, render, sample_view_ring

gt, _ = make_test_shape("sphere", (32, 32, 32))
cams = sample_view_ring(5, seed=10, width=256, height=256)
clean = [render(gt, c, "depth") for c in cams]
noisy = [add_depth_noise(o, 0.16, seed=1000 + i) for i, o in enumerate(clean)]

config = FitConfig(iterations=400, seed=7)
print(f"{'supervision':<14} {'DRC fit':>8} {'fusion':>8}")
for label, obs in (("clean depth", clean), ("noisy (16 cm)", noisy)):
    fitted, _, _ = fit(obs, gt.geometry, "depth", config)
    fused = fused_to_occupancy_grid(*fuse_depth(obs, gt.geometry), gt.geometry)
    fit_iou = best_threshold(fitted, gt).best_iou
    fuse_iou = best_threshold(fused, gt).best_iou
    print(f"{label:<14} {fit_iou:>8.3f} {fuse_iou:>8.3f}")

print("\nNote: fusion only ever sees the visible surface shell (interior cells"
      "\nget no rays and count as empty), so its IoU against the solid ground"
      "\ntruth is low even without noise, and noise erodes it further.")
