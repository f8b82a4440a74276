"""Marching-cubes mesh extraction with early-stop and octree pruning.

Sample lattice: resolution R means R^3 field samples at x_k = -0.5 + k/R per
axis (so a dense extraction costs exactly R^3 queries); marching cubes runs
over the (R-1)^3 cells between samples, which covers every surface that stays
one voxel inside the domain.

Acceleration strategies:

  * adaptive: evaluate a cheap low-bandwidth head everywhere and re-evaluate
    the full network only where |low| < tau (tau = tau_factor * voxel edge).
  * multiscale: octree descent from a coarse cell grid; a cell is pruned when
    the field magnitude at its center exceeds alpha times its circumsphere
    radius (a true SDF cannot reach zero inside it, alpha > 1 adds margin).
    Pruned regions inherit their ancestor's center value (sign-correct), so
    one dense marching-cubes pass over the embedded grid reproduces the
    dense mesh exactly for exact SDFs.
  * combined: multiscale descent queried with the low head, plus the
    adaptive low/full switch for the surviving finest-level corners.
"""

import time
from dataclasses import dataclass, field

import numpy as np

from ._mc_tables import CORNER_OFFSETS, EDGE_AXIS, EDGE_BASE, EDGE_TABLE, TRI_TABLE
from .errors import InvalidInputError
from .mesh import Mesh
from .network import NetworkParams, NetworkSpec, evaluate_truncated


def marching_cubes_dense(values, origin=(-0.5, -0.5, -0.5), spacing=None,
                         level=0.0) -> Mesh:
    """Classic 256-case marching cubes with linear edge interpolation.

    ``values`` are field samples on a regular lattice; vertices are deduped
    per lattice edge so the mesh is crack-free. No zero crossings gives an
    empty mesh.
    """
    v = np.asarray(values, dtype=np.float64)
    if v.ndim != 3 or min(v.shape) < 2:
        raise InvalidInputError(f"need a 3d grid with >= 2 samples per axis, got {v.shape}")
    if spacing is None:
        spacing = 1.0 / v.shape[0]
    origin = np.asarray(origin, dtype=np.float64)

    n0, n1, n2 = v.shape
    inside = v < level
    cases = np.zeros((n0 - 1, n1 - 1, n2 - 1), dtype=np.int64)
    for bit, (dx, dy, dz) in enumerate(CORNER_OFFSETS):
        cases |= inside[dx:dx + n0 - 1, dy:dy + n1 - 1, dz:dz + n2 - 1].astype(np.int64) << bit
    active = np.argwhere(EDGE_TABLE[cases] != 0)
    if active.shape[0] == 0:
        return Mesh(np.zeros((0, 3)), np.zeros((0, 3), dtype=np.int64))
    acases = cases[active[:, 0], active[:, 1], active[:, 2]]

    # global ids for the 12 cell edges: lattice base point + axis
    base = active[:, None, :] + EDGE_BASE[None, :, :]
    lin = ((base[:, :, 0] * n1 + base[:, :, 1]) * n2 + base[:, :, 2]) * 3 + EDGE_AXIS[None, :]
    used = ((EDGE_TABLE[acases][:, None] >> np.arange(12)[None, :]) & 1).astype(bool)
    uniq, inverse = np.unique(lin[used], return_inverse=True)
    vert_of_edge = np.full((active.shape[0], 12), -1, dtype=np.int64)
    vert_of_edge[used] = inverse

    # interpolate one vertex per unique lattice edge
    axis = uniq % 3
    rest = uniq // 3
    z = rest % n2
    rest //= n2
    y = rest % n1
    x = rest // n1
    x1 = x + (axis == 0)
    y1 = y + (axis == 1)
    z1 = z + (axis == 2)
    f0 = v[x, y, z]
    f1 = v[x1, y1, z1]
    t = (level - f0) / (f1 - f0)
    verts = origin + spacing * np.stack([x, y, z], axis=1).astype(np.float64)
    verts[np.arange(len(uniq)), axis] += t * spacing

    tri_rows = TRI_TABLE[acases]
    faces = []
    for s in range(0, 15, 3):
        row_mask = tri_rows[:, s] >= 0
        if not np.any(row_mask):
            break
        rows = np.nonzero(row_mask)[0]
        e = tri_rows[rows][:, s:s + 3]
        faces.append(np.stack([vert_of_edge[rows, e[:, 0]],
                               vert_of_edge[rows, e[:, 1]],
                               vert_of_edge[rows, e[:, 2]]], axis=1))
    return Mesh(verts, np.concatenate(faces, axis=0))


@dataclass
class ExtractionConfig:
    resolution: int = 128
    levels: int = 4
    tau_factor: float = 0.7
    alpha: float = 2.0
    strategy: str = "combined"

    def __post_init__(self):
        r = self.resolution
        if r < 2 or (r & (r - 1)) != 0:
            raise InvalidInputError(f"resolution {r} must be a power of two")
        if self.levels < 1 or r % (2 ** (self.levels - 1)) != 0:
            raise InvalidInputError(
                f"resolution {r} not divisible by 2^(levels-1) = {2 ** (self.levels - 1)}")
        if not (self.tau_factor > 0):
            raise InvalidInputError("tau_factor must be positive")
        if not (self.alpha >= 1.0):
            raise InvalidInputError("alpha must be >= 1 for sound pruning")
        if self.strategy not in ("dense", "adaptive", "multiscale", "combined"):
            raise InvalidInputError(f"unknown strategy {self.strategy!r}")

    @property
    def spacing(self):
        return 1.0 / self.resolution

    @property
    def tau(self):
        return self.tau_factor * self.spacing


@dataclass
class ExtractionReport:
    strategy: str
    resolution: int
    mesh: Mesh
    cells_evaluated: list        # queries issued per octree level (dense: one entry)
    low_queries: int
    full_queries: int
    seconds: float
    pruned: list = field(default_factory=list)    # per level: (cell indices, center values)
    survivors: np.ndarray = None                  # finest-level surviving cell indices

    @property
    def total_queries(self):
        return self.low_queries + self.full_queries


def _lattice_points(config):
    r = config.resolution
    c = -0.5 + np.arange(r) / r
    gx, gy, gz = np.meshgrid(c, c, c, indexing="ij")
    return np.stack([gx.ravel(), gy.ravel(), gz.ravel()], axis=1)


def dense_field_extract(fieldfn, config: ExtractionConfig) -> ExtractionReport:
    t0 = time.perf_counter()
    r = config.resolution
    vals = np.asarray(fieldfn(_lattice_points(config))).reshape(r, r, r)
    mesh = marching_cubes_dense(vals, spacing=config.spacing)
    return ExtractionReport("dense", r, mesh, [r ** 3], 0, r ** 3,
                            time.perf_counter() - t0)


def adaptive_field_extract(low_fieldfn, full_fieldfn,
                           config: ExtractionConfig) -> ExtractionReport:
    """Low head everywhere; full network only within tau of the low surface."""
    t0 = time.perf_counter()
    r = config.resolution
    pts = _lattice_points(config)
    low = np.asarray(low_fieldfn(pts))
    near = np.abs(low) < config.tau
    vals = low.copy()
    if np.any(near):
        vals[near] = np.asarray(full_fieldfn(pts[near]))
    mesh = marching_cubes_dense(vals.reshape(r, r, r), spacing=config.spacing)
    return ExtractionReport("adaptive", r, mesh, [r ** 3], r ** 3,
                            int(near.sum()), time.perf_counter() - t0)


def _descend(fieldfn, config: ExtractionConfig):
    """Octree descent on cell centers; returns finest survivors, pruned
    records per level, and per-level query counts."""
    r = config.resolution
    levels = config.levels
    base_cells = r // (2 ** (levels - 1))
    idx = np.indices((base_cells,) * 3).reshape(3, -1).T
    pruned = []
    counts = []
    survivors = None
    for lvl in range(levels):
        cell_vox = 2 ** (levels - 1 - lvl)       # cell edge in finest voxels
        edge = cell_vox * config.spacing
        radius = edge * np.sqrt(3.0) / 2.0       # circumsphere of the cell
        centers = -0.5 + (idx + 0.5) * edge
        vals = np.asarray(fieldfn(centers)) if idx.shape[0] else np.zeros(0)
        counts.append(int(idx.shape[0]))
        keep = np.abs(vals) < config.alpha * radius
        pruned.append((idx[~keep], vals[~keep]))
        kept = idx[keep]
        if lvl == levels - 1:
            survivors = kept
            break
        children = kept[:, None, :] * 2 + CORNER_OFFSETS[None, :, :]
        idx = children.reshape(-1, 3)
    return survivors, pruned, counts


def _fill_grid(pruned, config: ExtractionConfig):
    """Embed pruned-cell center values over their closed lattice cubes."""
    r = config.resolution
    grid = np.zeros((r, r, r))
    for lvl, (cells, vals) in enumerate(pruned):
        s = 2 ** (config.levels - 1 - lvl)
        for (i, j, k), val in zip(cells * s, vals):
            grid[i:min(i + s + 1, r), j:min(j + s + 1, r), k:min(k + s + 1, r)] = val
    return grid


def _survivor_corners(survivors, config: ExtractionConfig):
    """Unique lattice points of surviving finest cells (wrap band dropped)."""
    r = config.resolution
    inside = survivors[np.all(survivors < r - 1, axis=1)]
    if inside.shape[0] == 0:
        return inside, np.zeros((0, 3), dtype=np.int64)
    corners = (inside[:, None, :] + CORNER_OFFSETS[None, :, :]).reshape(-1, 3)
    lin = (corners[:, 0] * r + corners[:, 1]) * r + corners[:, 2]
    uniq = np.unique(lin)
    pts = np.stack([uniq // (r * r), (uniq // r) % r, uniq % r], axis=1)
    return inside, pts


def multiscale_field_extract(fieldfn, config: ExtractionConfig,
                             strategy_name="multiscale",
                             full_fieldfn=None) -> ExtractionReport:
    """Octree pruning with a single field oracle; if ``full_fieldfn`` is
    given, surviving corners switch to it within tau (the combined strategy)."""
    t0 = time.perf_counter()
    r = config.resolution
    survivors, pruned, counts = _descend(fieldfn, config)
    grid = _fill_grid(pruned, config)
    inside, corner_idx = _survivor_corners(survivors, config)
    low_queries = 0
    full_queries = 0
    n_corners = corner_idx.shape[0]
    if n_corners:
        pts = -0.5 + corner_idx / r
        vals = np.asarray(fieldfn(pts))
        if full_fieldfn is not None:
            near = np.abs(vals) < config.tau
            if np.any(near):
                vals[near] = np.asarray(full_fieldfn(pts[near]))
            full_queries += int(near.sum())
        grid[corner_idx[:, 0], corner_idx[:, 1], corner_idx[:, 2]] = vals
    if full_fieldfn is not None:
        low_queries = sum(counts) + n_corners
    else:
        full_queries = sum(counts) + n_corners
    mesh = marching_cubes_dense(grid, spacing=config.spacing)
    return ExtractionReport(strategy_name, r, mesh, counts, low_queries,
                            full_queries, time.perf_counter() - t0,
                            pruned=pruned, survivors=survivors)


def network_field(params: NetworkParams, spec: NetworkSpec, head,
                  dtype=np.float32, chunk=262144):
    """Batched scalar-field view of one head (first output component)."""

    def fieldfn(points):
        points = np.atleast_2d(points)
        out = np.empty(points.shape[0])
        for lo in range(0, points.shape[0], chunk):
            y = evaluate_truncated(params, spec, points[lo:lo + chunk], head, dtype=dtype)
            out[lo:lo + chunk] = np.asarray(y, dtype=np.float64)[:, 0]
        return out

    return fieldfn


def extract_adaptive(params, spec, config: ExtractionConfig,
                     dtype=np.float32) -> ExtractionReport:
    """Adaptive early-stop extraction: first head far away, deepest head near."""
    if len(spec.heads) < 2:
        raise InvalidInputError("adaptive extraction needs at least two heads")
    low = network_field(params, spec, spec.heads[0], dtype=dtype)
    full = network_field(params, spec, spec.heads[-1], dtype=dtype)
    return adaptive_field_extract(low, full, config)


def extract_multiscale(fieldfn, config: ExtractionConfig) -> ExtractionReport:
    """Octree-pruned extraction of a plain field oracle."""
    return multiscale_field_extract(fieldfn, config)


def extract_combined(params, spec, config: ExtractionConfig,
                     dtype=np.float32) -> ExtractionReport:
    """Multiscale descent on the first head plus the adaptive switch at the
    finest level."""
    if len(spec.heads) < 2:
        raise InvalidInputError("combined extraction needs at least two heads")
    low = network_field(params, spec, spec.heads[0], dtype=dtype)
    full = network_field(params, spec, spec.heads[-1], dtype=dtype)
    return multiscale_field_extract(low, config, strategy_name="combined",
                                    full_fieldfn=full)


def extract_mesh(params, spec, config: ExtractionConfig,
                 dtype=np.float32) -> ExtractionReport:
    """Strategy dispatch used by the pipelines."""
    if config.strategy == "dense":
        full = network_field(params, spec, spec.heads[-1], dtype=dtype)
        return dense_field_extract(full, config)
    if config.strategy == "adaptive":
        return extract_adaptive(params, spec, config, dtype=dtype)
    if config.strategy == "multiscale":
        full = network_field(params, spec, spec.heads[-1], dtype=dtype)
        return extract_multiscale(full, config)
    return extract_combined(params, spec, config, dtype=dtype)


def timing_report(reports) -> list:
    """Per-strategy timing rows with speedup relative to the dense entry."""
    reports = list(reports)
    if not reports:
        raise InvalidInputError("timing_report needs at least one entry")
    dense_seconds = None
    for r in reports:
        if r.strategy == "dense":
            dense_seconds = r.seconds
            break
    rows = []
    for r in reports:
        speedup = dense_seconds / r.seconds if dense_seconds else None
        rows.append({
            "strategy": r.strategy,
            "resolution": r.resolution,
            "cells_evaluated": ";".join(str(c) for c in r.cells_evaluated),
            "low_queries": r.low_queries,
            "full_queries": r.full_queries,
            "seconds": r.seconds,
            "speedup_vs_dense": speedup,
        })
    return rows
