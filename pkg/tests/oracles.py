"""Independent reference implementations used by the test suite only.

These deliberately avoid the production code paths they check: traversal
is validated by dense point sampling, gradients by the quadratic-time
transcription of the gradient sum.
"""

import numpy as np


def min_cell_extent(geom):
    if geom.kind == "uniform":
        return geom.cell_size.min()
    # the smallest frustum cells are in the first depth layer
    z0 = geom.alpha1
    z1 = geom.alpha1 * np.exp(geom.alpha2)
    return min(z1 - z0, geom.f * z0)


def dense_sample_cells(geom, ray, step_factor=1e-4, chunk=1_000_000):
    """Walk the ray at a tiny fixed step, record the grid cell under each
    sample, deduplicate consecutive runs.  Chunked to bound memory (long
    scene rays need millions of samples)."""
    corners = np.array([geom.grid_to_world((gx, gy, gz))
                        for gx in (0, geom.dims[0])
                        for gy in (0, geom.dims[1])
                        for gz in (0, geom.dims[2])])
    t_max = np.max(np.linalg.norm(corners - ray.origin, axis=1)) + 1.0
    step = step_factor * min_cell_extent(geom)
    n_samples = int(np.ceil(t_max / step))
    dims = np.asarray(geom.dims, dtype=np.float64)
    pieces = []
    last = None
    for start in range(0, n_samples, chunk):
        ts = (start + np.arange(min(chunk, n_samples - start))) * step
        g = geom.world_to_grid(ray.origin + ts[:, None] * ray.direction)
        with np.errstate(invalid="ignore"):
            inside = np.all((g >= 0.0) & (g < dims), axis=1)
        ijk = np.floor(g[inside]).astype(np.int64)
        cells = geom.linear_index(ijk[:, 0], ijk[:, 1], ijk[:, 2])
        if cells.size == 0:
            continue
        keep = np.concatenate([[True], cells[1:] != cells[:-1]])
        cells = cells[keep]
        if last is not None and cells.size and cells[0] == last:
            cells = cells[1:]
        if cells.size:
            pieces.append(cells)
            last = cells[-1]
    if not pieces:
        return np.zeros(0, dtype=np.int64)
    return np.concatenate(pieces)


def naive_grad_x(x, psi):
    """O(N^2) transcription of the gradient sum."""
    x = np.asarray(x, dtype=np.float64)
    psi = np.asarray(psi, dtype=np.float64)
    n = x.size
    grad = np.zeros(n)
    for k in range(n):
        for i in range(k, n):
            prod = 1.0
            for j in range(i + 1):
                if j != k:
                    prod *= x[j]
            grad[k] += (psi[i + 1] - psi[i]) * prod
    return grad


def surface_cells(occ):
    """Occupied cells with at least one empty 6-neighbor."""
    padded = np.pad(occ, 1)
    all_nb = np.ones_like(occ, dtype=bool)
    for axis in range(3):
        for shift in (1, -1):
            all_nb &= np.roll(padded, shift, axis=axis)[1:-1, 1:-1, 1:-1]
    return occ & ~all_nb


def shape_scale(bgrid):
    """Largest bounding-box extent of the occupied cells, in world units."""
    iz, iy, ix = np.nonzero(bgrid.occ)
    h = bgrid.geometry.cell_size
    extents = np.array([(ix.max() - ix.min() + 1) * h[0],
                        (iy.max() - iy.min() + 1) * h[1],
                        (iz.max() - iz.min() + 1) * h[2]])
    return float(extents.max())
