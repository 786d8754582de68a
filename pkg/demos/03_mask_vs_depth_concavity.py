"""Masks cannot see the seat cavity; depth can.

Fits the barrel-chair shape twice from the same five viewpoints, once
with silhouettes and once with depth, and compares what happens inside
the seat cavity.  Silhouette supervision can at best recover the visual
hull, and the cavity is invisible in every silhouette.
"""

from drc.fitter import FitConfig, fit
from drc.fusion import carve_masks
from drc.metrics import best_threshold
from drc.renderer import chair_cavity_mask, make_test_shape, render, sample_view_ring

dims = (32, 32, 32)
gt, _ = make_test_shape("chair_like", dims)
cavity = chair_cavity_mask(dims)
print(f"chair: {int(gt.occ.sum())} cells, seat cavity: {int(cavity.sum())} cells")

cams = sample_view_ring(5, seed=10, width=128, height=128)
depth_obs = [render(gt, c, "depth") for c in cams]
mask_obs = [render(gt, c, "mask") for c in cams]

config = FitConfig(iterations=400, seed=7)
depth_fit, _, _ = fit(depth_obs, gt.geometry, "depth", config)
mask_fit, _, _ = fit(mask_obs, gt.geometry, "mask", config)

for name, fitted in (("depth", depth_fit), ("mask", mask_fit)):
    iou = best_threshold(fitted, gt).best_iou
    cavity_occ = fitted.occupancy()[cavity]
    print(f"{name:5s} fit: IoU {iou:.3f}; cavity cells below 0.5 occupancy: "
          f"{(cavity_occ < 0.5).mean():.0%}")

hull = carve_masks(mask_obs, gt.geometry)
inter = (hull.occ & gt.occ).sum()
union = (hull.occ | gt.occ).sum()
print(f"visual hull (space-carving oracle): IoU {inter / union:.3f}; "
      f"cavity kept occupied: {hull.occ[cavity].mean():.0%}")
