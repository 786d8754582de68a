"""Ray consistency: event probabilities, event costs, losses, gradients.

A ray crossing N cells with emptiness probabilities x_1..x_N induces a
distribution over termination events.  Event i <= N is "the ray terminates
in the i-th traversed cell"; event N+1 is "the ray escapes":

    p(z = i)   = (1 - x_i) * prod_{j<i} x_j
    p(z = N+1) = prod_{j<=N} x_j

Each event is scored against the ray's observation by a cost psi(i), and
the per-ray loss is the expected cost E[psi(z)].  Expanding and
telescoping gives the form actually computed here,

    L(x) = psi(1) + sum_i (psi(i+1) - psi(i)) * prod_{j<=i} x_j

whose gradient is

    dL/dx_k = sum_{i>=k} (psi(i+1) - psi(i)) * prod_{j<=i, j!=k} x_j,

evaluated in O(N) with prefix products and a backward recurrence; no
division by x is ever performed, so x_k in {0, 1} exactly is safe.

Escape conventions: depth events use a fixed escape depth (10 m at object
scale; disparity-based costs use 1000 m so escape means near-zero
disparity), semantic escape scores against the uniform class distribution,
color escape against white.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .grid import AuxGrid, OccupancyGrid, same_geometry
from .traversal import PackedTraces, RayTrace, trace_batch

OBJECT_ESCAPE_DEPTH = 10.0
SCENE_ESCAPE_DEPTH = 1000.0
LOG_PROB_FLOOR = 1e-8
ESCAPE_COLOR = np.array([1.0, 1.0, 1.0])

RAY_KINDS = ("mask", "depth", "depth_semantics", "color")


def _as_depths(trace) -> np.ndarray:
    if isinstance(trace, RayTrace):
        return trace.d
    return np.asarray(trace, dtype=np.float64)


def _as_length(trace) -> int:
    if isinstance(trace, RayTrace):
        return trace.n
    if np.isscalar(trace):
        return int(trace)
    return len(np.asarray(trace))


@dataclass(frozen=True, eq=False)
class EventCosts:
    """Costs psi for the N+1 events of one ray.

    psi[-1] is the escape event.  dpsi_dp, when present, holds the
    derivative of psi[i] w.r.t. the i-th cell's aux payload, shape (N, D)
    (the escape event has no per-cell payload).
    """

    psi: np.ndarray
    dpsi_dp: np.ndarray | None = None

    @property
    def n(self) -> int:
        return len(self.psi) - 1


def event_probabilities(x_r) -> np.ndarray:
    """Termination-event distribution of a ray, length N+1 (escape last)."""
    x = np.asarray(x_r, dtype=np.float64)
    if x.ndim != 1:
        raise ValueError("x_r must be a 1-D vector of emptiness probabilities")
    if x.size and (x.min() < 0.0 or x.max() > 1.0):
        raise ValueError("emptiness probabilities must lie in [0, 1]")
    cum = np.cumprod(x)
    pre = np.concatenate([[1.0], cum[:-1]])
    p = np.empty(x.size + 1)
    p[:-1] = (1.0 - x) * pre
    p[-1] = cum[-1] if x.size else 1.0
    return p


def cost_depth(trace, d_r: float, escape_depth: float = OBJECT_ESCAPE_DEPTH) -> EventCosts:
    """Absolute depth error per event: |d_i - d_r|, escape at escape_depth."""
    if d_r <= 0.0:
        raise ValueError(f"observed depth must be positive, got {d_r}")
    d = _as_depths(trace)
    return EventCosts(np.concatenate([np.abs(d - d_r), [abs(escape_depth - d_r)]]))


def cost_mask(trace, s_r: int) -> EventCosts:
    """Foreground-mask cost: s_r for in-grid termination, 1 - s_r for escape.

    s_r = 0 marks a foreground pixel (the ray hits the object), s_r = 1
    background.
    """
    if s_r not in (0, 1):
        raise ValueError(f"s_r must be 0 or 1, got {s_r!r}")
    n = _as_length(trace)
    psi = np.full(n + 1, float(s_r))
    psi[-1] = 1.0 - s_r
    return EventCosts(psi)


def cost_semantic(trace, p_r, d_r: float, c_r: int,
                  escape_depth: float = SCENE_ESCAPE_DEPTH,
                  label_weight: float = 1.0) -> EventCosts:
    """Disparity error plus class negative log-likelihood.

    psi(i) = |1/d_i - 1/d_r| - label_weight * log p_i(c_r); the escape
    event uses disparity 1/escape_depth and the uniform distribution over
    the K classes.  Probabilities are floored at 1e-8 inside the log so
    costs and gradients stay finite.
    """
    if d_r <= 0.0:
        raise ValueError(f"observed depth must be positive, got {d_r}")
    d = _as_depths(trace)
    p = np.asarray(p_r, dtype=np.float64)
    if p.ndim != 2 or p.shape[0] != d.size:
        raise ValueError("p_r must be (N, K) class distributions, one per traversed cell")
    k = p.shape[1]
    if not (0 <= int(c_r) < k):
        raise ValueError(f"observed class {c_r} out of range [0, {k})")
    # loose simplex sanity check; finite-difference probes perturb single
    # components, so this is intentionally weaker than the AuxGrid invariant
    if np.any(p < -1e-12) or np.any(np.abs(p.sum(axis=1) - 1.0) > 1e-4):
        raise ValueError("p_r rows must be probability simplices")
    pc = np.maximum(p[:, int(c_r)], LOG_PROB_FLOOR)
    psi = np.empty(d.size + 1)
    psi[:-1] = np.abs(1.0 / d - 1.0 / d_r) - label_weight * np.log(pc)
    psi[-1] = abs(1.0 / escape_depth - 1.0 / d_r) + label_weight * np.log(k)
    dpsi = np.zeros_like(p)
    dpsi[:, int(c_r)] = -label_weight / pc
    return EventCosts(psi, dpsi)


def cost_color(trace, p_r, c_r) -> EventCosts:
    """Half squared RGB error; escaping rays are scored against white."""
    n = _as_length(trace)
    p = np.asarray(p_r, dtype=np.float64)
    c = np.asarray(c_r, dtype=np.float64)
    if p.shape != (n, 3) or c.shape != (3,):
        raise ValueError("p_r must be (N, 3) colors and c_r a single RGB triple")
    diff = p - c
    psi = np.empty(n + 1)
    psi[:-1] = 0.5 * np.sum(diff * diff, axis=1)
    psi[-1] = 0.5 * np.sum((ESCAPE_COLOR - c) ** 2)
    return EventCosts(psi, diff.copy())


def _check_lengths(x: np.ndarray, psi: np.ndarray) -> None:
    if psi.ndim != 1 or psi.size != x.size + 1:
        raise ValueError(f"psi must have length N+1 = {x.size + 1}, got {psi.size}")


def ray_loss(x_r, costs) -> float:
    """Expected event cost of one ray (the telescoped form)."""
    x = np.asarray(x_r, dtype=np.float64)
    psi = costs.psi if isinstance(costs, EventCosts) else np.asarray(costs, dtype=np.float64)
    _check_lengths(x, psi)
    cum = np.cumprod(x)
    return float(psi[0] + np.diff(psi) @ cum)


def ray_loss_grad_x(x_r, costs) -> np.ndarray:
    """d(ray_loss)/dx_k for every traversed cell, in O(N).

    Uses prefix products pre_k = prod_{j<k} x_j and the backward
    recurrence S_k = dpsi_k + x_{k+1} S_{k+1}, giving grad_k = pre_k * S_k.
    """
    x = np.asarray(x_r, dtype=np.float64)
    psi = costs.psi if isinstance(costs, EventCosts) else np.asarray(costs, dtype=np.float64)
    _check_lengths(x, psi)
    n = x.size
    if n == 0:
        return np.zeros(0)
    dpsi = np.diff(psi)
    s = np.empty(n)
    s[-1] = dpsi[-1]
    for k in range(n - 2, -1, -1):
        s[k] = dpsi[k] + x[k + 1] * s[k + 1]
    pre = np.concatenate([[1.0], np.cumprod(x[:-1])])
    return pre * s


def ray_loss_grad_p(x_r, costs: EventCosts) -> np.ndarray:
    """d(ray_loss)/dp_i = p(z = i) * dpsi_i/dp_i, shape (N, D).

    Each cell's payload gradient is its cost derivative weighted by the
    probability of that cell's termination event.
    """
    if not isinstance(costs, EventCosts) or costs.dpsi_dp is None:
        raise ValueError("costs must carry dpsi_dp (semantic or color event costs)")
    p_events = event_probabilities(x_r)[:-1]
    return p_events[:, None] * costs.dpsi_dp


def mask_loss_closed_form(x_r, s_r: int) -> float:
    """|prod_i x_i - s_r|: the mask ray loss collapses to reprojected emptiness."""
    if s_r not in (0, 1):
        raise ValueError(f"s_r must be 0 or 1, got {s_r!r}")
    x = np.asarray(x_r, dtype=np.float64)
    return float(abs((np.prod(x) if x.size else 1.0) - s_r))


# ---------------------------------------------------------------------------
# Whole-view evaluation
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class RayBatch:
    """A set of rays with per-ray observations and loss weights.

    Per kind: ``s`` (0 foreground / 1 background) for mask; ``d`` for depth
    and depth_semantics; ``c`` is an int class id per ray (depth_semantics)
    or an (R, 3) RGB array (color).
    """

    kind: str
    origins: np.ndarray
    directions: np.ndarray
    weights: np.ndarray
    s: np.ndarray | None = None
    d: np.ndarray | None = None
    c: np.ndarray | None = None

    def __post_init__(self):
        if self.kind not in RAY_KINDS:
            raise ValueError(f"ray kind must be one of {RAY_KINDS}, got {self.kind!r}")
        r = self.origins.shape[0]
        if self.directions.shape != (r, 3) or self.origins.shape != (r, 3):
            raise ValueError("origins and directions must be (R, 3)")
        if self.weights.shape != (r,):
            raise ValueError("weights must be (R,)")
        if np.any(self.weights <= 0.0):
            raise ValueError("ray weights must be positive")
        need = {"mask": ("s",), "depth": ("d",), "depth_semantics": ("d", "c"), "color": ("c",)}
        for field in need[self.kind]:
            if getattr(self, field) is None:
                raise ValueError(f"{self.kind} rays need per-ray field {field!r}")

    @property
    def n_rays(self) -> int:
        return self.origins.shape[0]


@dataclass(frozen=True, eq=False)
class ViewLossResult:
    loss: float
    grad_x: np.ndarray
    grad_p: np.ndarray | None


def view_loss(occ: OccupancyGrid, rays: RayBatch, aux: AuxGrid | None = None, *,
              escape_depth: float | None = None, label_weight: float = 1.0,
              packed: PackedTraces | None = None) -> ViewLossResult:
    """Weighted sum of per-ray losses plus gradients scattered onto the grid.

    Rays are evaluated in batch but accumulated in a fixed order, so the
    result is deterministic.  ``packed`` lets callers reuse traces when
    evaluating several fields on identical rays.  Cells no ray touches get
    zero gradient.
    """
    if rays.n_rays == 0:
        raise ValueError("ray set is empty")
    if rays.kind in ("depth_semantics", "color"):
        want = "semantics" if rays.kind == "depth_semantics" else "color"
        if aux is None or aux.kind != want:
            raise ValueError(f"{rays.kind} rays need an aux grid of kind {want!r}")
        if not same_geometry(aux.geometry, occ.geometry):
            raise ValueError("aux grid geometry does not match the occupancy grid")
    geom = occ.geometry
    if packed is None:
        packed = trace_batch(geom, rays.origins, rays.directions)
    elif not same_geometry(packed.geometry, geom):
        raise ValueError("packed traces were built on a different geometry")

    valid = packed.valid
    cells = np.maximum(packed.cells, 0)
    x = np.where(valid, occ.flat[cells], 1.0)
    n = packed.n
    rows = np.arange(packed.n_rays)
    last = np.maximum(n - 1, 0)

    cum = np.cumprod(x, axis=1)
    pre = np.concatenate([np.ones((packed.n_rays, 1)), cum[:, :-1]], axis=1)
    prod_all = np.where(n > 0, cum[rows, last], 1.0)

    psi, psi_esc, dpsi_dp = _batched_costs(rays, packed, aux, valid,
                                           escape_depth=escape_depth,
                                           label_weight=label_weight)

    # dpsi_i = psi_{i+1} - psi_i, with the escape cost closing each ray
    dpsi = np.zeros_like(psi)
    dpsi[:, :-1] = psi[:, 1:] - psi[:, :-1]
    dpsi[rows, last] = psi_esc - psi[rows, last]
    dpsi[~valid] = 0.0

    psi_first = np.where(n > 0, psi[:, 0], psi_esc)
    per_ray = psi_first + np.sum(dpsi * cum, axis=1)
    loss = float(rays.weights @ per_ray)

    # backward recurrence S_k = dpsi_k + x_{k+1} S_{k+1}; grad = pre * S
    s = np.zeros_like(dpsi)
    width = psi.shape[1]
    s[:, -1] = dpsi[:, -1]
    for k in range(width - 2, -1, -1):
        s[:, k] = dpsi[:, k] + x[:, k + 1] * s[:, k + 1]
    grad = np.where(valid, pre * s * rays.weights[:, None], 0.0)

    grad_x = np.zeros(geom.ncells)
    np.add.at(grad_x, cells[valid], grad[valid])

    grad_p = None
    if dpsi_dp is not None:
        p_events = np.where(valid, (1.0 - x) * pre, 0.0)
        contrib = p_events[:, :, None] * dpsi_dp * rays.weights[:, None, None]
        grad_p = np.zeros((geom.ncells, dpsi_dp.shape[2]))
        np.add.at(grad_p, cells[valid], contrib[valid])
        grad_p = grad_p.reshape(*geom.shape, dpsi_dp.shape[2])

    return ViewLossResult(loss, grad_x.reshape(geom.shape), grad_p)


def _batched_costs(rays: RayBatch, packed: PackedTraces, aux: AuxGrid | None,
                   valid: np.ndarray, *, escape_depth: float | None,
                   label_weight: float):
    """(R, L) cell-event costs, (R,) escape costs, optional (R, L, D) dpsi_dp."""
    d_mid = packed.d
    cells = np.maximum(packed.cells, 0)
    if rays.kind == "mask":
        psi = np.broadcast_to(rays.s[:, None].astype(np.float64), d_mid.shape).copy()
        return psi, 1.0 - rays.s.astype(np.float64), None
    if rays.kind == "depth":
        esc = OBJECT_ESCAPE_DEPTH if escape_depth is None else escape_depth
        psi = np.abs(np.where(valid, d_mid, 1.0) - rays.d[:, None])
        return psi, np.abs(esc - rays.d), None
    if rays.kind == "depth_semantics":
        esc = SCENE_ESCAPE_DEPTH if escape_depth is None else escape_depth
        k = aux.nchannels
        c = rays.c.astype(np.int64)
        pc = np.maximum(aux.flat[cells, c[:, None]], LOG_PROB_FLOOR)
        disparity = np.abs(1.0 / np.where(valid, d_mid, 1.0) - 1.0 / rays.d[:, None])
        psi = disparity - label_weight * np.log(pc)
        psi_esc = np.abs(1.0 / esc - 1.0 / rays.d) + label_weight * np.log(k)
        dpsi_dp = np.zeros((*d_mid.shape, k))
        rows = np.arange(d_mid.shape[0])[:, None]
        cols = np.arange(d_mid.shape[1])[None, :]
        dpsi_dp[rows, cols, c[:, None]] = -label_weight / pc
        return psi, psi_esc, dpsi_dp
    # color
    pcol = aux.flat[cells]
    diff = pcol - rays.c[:, None, :]
    psi = 0.5 * np.sum(diff * diff, axis=2)
    psi_esc = 0.5 * np.sum((ESCAPE_COLOR - rays.c) ** 2, axis=1)
    return psi, psi_esc, diff
