"""Discrete model construction: particle grids, boundary layers, horizons.

Particles sit at the cell centers of a uniform lattice. Displacement-
constrained boundary layers append extra particles outside the declared side;
load layers mark the outermost existing cells of a side (those stay solved and
carry the applied body force). Holes remove particles whose centers fall
strictly inside; pre-notches kill every bond whose reference segment crosses
the notch segment.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from .errors import SetupError
from .materials import MaterialParams

ROLE_REAL = 0
ROLE_FICTITIOUS = 1
ROLE_LOAD = 2

_SIDES = {"-x": (0, -1), "+x": (0, +1), "-y": (1, -1), "+y": (1, +1),
          "-z": (2, -1), "+z": (2, +1)}


@dataclass(frozen=True)
class Hole:
    center: tuple[float, ...]
    radius: float


@dataclass(frozen=True)
class Notch:
    """Straight pre-crack given by a reference-configuration segment.

    half_width is descriptive metadata (the physical slit width); bond
    breaking uses exact segment-segment intersection on the centerline.
    """

    p0: tuple[float, float]
    p1: tuple[float, float]
    half_width: float = 0.0


@dataclass(frozen=True)
class BoundaryLayer:
    """Boundary strip declaration.

    role 'constrained' appends `layers` rows of fictitious particles outside
    the side; role 'load' marks the outermost `layers` rows of existing cells.
    `span` optionally restricts the strip to an interval along the side
    (2D only). `axes` selects which displacement components are constrained
    (constrained role only; default all).
    """

    side: str
    layers: int
    role: str
    name: str = ""
    span: tuple[float, float] | None = None
    axes: tuple[bool, ...] | None = None


@dataclass(frozen=True)
class ConstraintRing:
    """Annular grip region around an interior hole (2D): particles whose
    center distance from `center` lies in [inner_radius, inner_radius +
    thickness] get the selected axes constrained."""

    center: tuple[float, float]
    inner_radius: float
    thickness: float
    name: str = ""
    axes: tuple[bool, ...] | None = None


@dataclass
class GeometrySpec:
    dimension: int
    extents: tuple[float, ...]
    grid: tuple[int, ...]
    holes: list[Hole] = field(default_factory=list)
    notches: list[Notch] = field(default_factory=list)
    layers: list[BoundaryLayer] = field(default_factory=list)
    rings: list[ConstraintRing] = field(default_factory=list)

    def __post_init__(self):
        m = self.dimension
        if m not in (1, 2, 3):
            raise SetupError(f"dimension must be 1, 2 or 3, got {m}")
        if len(self.extents) != m or len(self.grid) != m:
            raise SetupError("extents and grid must match the dimension")
        if any(e <= 0 for e in self.extents):
            raise SetupError("degenerate domain: all extents must be positive")
        if any(n < 1 for n in self.grid):
            raise SetupError("grid counts must be >= 1")
        dx = self.extents[0] / self.grid[0]
        for e, n in zip(self.extents, self.grid):
            if abs(e / n - dx) > 1e-9 * dx:
                raise SetupError("non-uniform spacing: extents/grid must give one dx")
        if any(h.radius <= 0 for h in self.holes):
            raise SetupError("hole radii must be positive")
        for layer in self.layers:
            if layer.side not in _SIDES or _SIDES[layer.side][0] >= m:
                raise SetupError(f"unknown side {layer.side!r} for dimension {m}")
            if layer.layers < 1:
                raise SetupError("boundary layer thickness must be >= 1 layer")
            if layer.role not in ("constrained", "load"):
                raise SetupError(f"unknown layer role {layer.role!r}")
        if self.notches and m != 2:
            raise SetupError("notches are supported in 2D only")
        if self.rings and m != 2:
            raise SetupError("constraint rings are supported in 2D only")

    @property
    def spacing(self) -> float:
        return self.extents[0] / self.grid[0]


@dataclass
class ParticleSet:
    """All PD points of a model, dense ids 0..n-1 by array position."""

    x: np.ndarray               # (n, dim) reference positions, m
    volume: np.ndarray          # (n,) cell volumes, m^3
    density: np.ndarray         # (n,) kg/m^3
    role: np.ndarray            # (n,) ROLE_* flags
    constrained_axes: np.ndarray  # (n, dim) bool, per-axis displacement constraints
    region_id: np.ndarray       # (n,) index into region_names, -1 if none
    region_names: list[str]
    spacing: float

    @property
    def n(self) -> int:
        return self.x.shape[0]

    @property
    def dimension(self) -> int:
        return self.x.shape[1]

    @property
    def ids(self) -> np.ndarray:
        return np.arange(self.n)

    @property
    def real_mask(self) -> np.ndarray:
        return self.role != ROLE_FICTITIOUS

    def region_index(self, name: str) -> int:
        try:
            return self.region_names.index(name)
        except ValueError:
            raise SetupError(f"no constrained region named {name!r}") from None


@dataclass
class HorizonTable:
    """Bond graph in undirected-bond plus CSR-adjacency form.

    Undirected bonds are listed once with bond_i < bond_j; the adjacency view
    (offsets/neighbors/edge_bond) stores both directions and maps each
    directed edge back to its undirected bond index.
    """

    n_particles: int
    delta: float
    bond_i: np.ndarray     # (nb,) int
    bond_j: np.ndarray     # (nb,) int
    ref_len: np.ndarray    # (nb,) reference bond lengths, m
    nu: np.ndarray         # (nb,) volume correction in (0, 1]
    mu: np.ndarray         # (nb,) surface correction, > 0
    alive: np.ndarray      # (nb,) bool, False for pre-broken bonds
    offsets: np.ndarray    # (n+1,) CSR pointers into neighbors
    neighbors: np.ndarray  # (ne,) directed-edge targets
    edge_bond: np.ndarray  # (ne,) undirected bond index per directed edge

    @property
    def n_bonds(self) -> int:
        return self.bond_i.shape[0]

    @property
    def neighbor_counts(self) -> np.ndarray:
        return np.diff(self.offsets)

    @property
    def edge_source(self) -> np.ndarray:
        return np.repeat(np.arange(self.n_particles), self.neighbor_counts)


@dataclass
class PDModel:
    """Bundle of the built model pieces the solvers operate on."""

    particles: ParticleSet
    table: HorizonTable
    material: MaterialParams
    law: object | None = None

    @property
    def dimension(self) -> int:
        return self.particles.dimension

    @property
    def ndof(self) -> int:
        return self.particles.n * self.dimension

    @property
    def constrained_flat(self) -> np.ndarray:
        return self.particles.constrained_axes.ravel()


def _lattice(grid: tuple[int, ...], dx: float) -> np.ndarray:
    axes = [(np.arange(n) + 0.5) * dx for n in grid]
    mesh = np.meshgrid(*axes, indexing="ij")
    return np.stack([a.ravel() for a in mesh], axis=1)


def _layer_positions(spec: GeometrySpec, layer: BoundaryLayer) -> np.ndarray:
    """Cell centers of a constrained layer appended outside the given side."""
    dx = spec.spacing
    axis, sign = _SIDES[layer.side]
    other_axes = [k for k in range(spec.dimension) if k != axis]
    coords = []
    for k in range(spec.dimension):
        if k == axis:
            if sign < 0:
                coords.append(-(np.arange(layer.layers) + 0.5) * dx)
            else:
                coords.append(spec.extents[axis] + (np.arange(layer.layers) + 0.5) * dx)
        else:
            coords.append((np.arange(spec.grid[k]) + 0.5) * dx)
    mesh = np.meshgrid(*coords, indexing="ij")
    pos = np.stack([a.ravel() for a in mesh], axis=1)
    if layer.span is not None:
        lo, hi = layer.span
        t = pos[:, other_axes[0]]
        pos = pos[(t >= lo - 1e-12) & (t <= hi + 1e-12)]
    return pos


def _load_layer_mask(spec: GeometrySpec, layer: BoundaryLayer, x: np.ndarray) -> np.ndarray:
    dx = spec.spacing
    axis, sign = _SIDES[layer.side]
    depth = layer.layers * dx
    if sign < 0:
        mask = x[:, axis] < depth
    else:
        mask = x[:, axis] > spec.extents[axis] - depth
    if layer.span is not None:
        other = [k for k in range(spec.dimension) if k != axis][0]
        lo, hi = layer.span
        mask &= (x[:, other] >= lo - 1e-12) & (x[:, other] <= hi + 1e-12)
    return mask


def build_grid(spec: GeometrySpec, mat: MaterialParams) -> ParticleSet:
    """Build the particle set: real lattice, boundary layers, holes, grips."""
    m = spec.dimension
    dx = spec.spacing
    real = _lattice(spec.grid, dx)

    # holes remove real particles whose centers fall strictly inside
    keep = np.ones(real.shape[0], dtype=bool)
    for hole in spec.holes:
        c = np.asarray(hole.center, dtype=float)
        keep &= np.linalg.norm(real - c, axis=1) >= hole.radius
    real = real[keep]
    if real.shape[0] == 0:
        raise SetupError("holes remove every real particle in the domain")

    role = np.full(real.shape[0], ROLE_REAL, dtype=np.int8)
    region_id = np.full(real.shape[0], -1, dtype=np.int16)
    constrained = np.zeros((real.shape[0], m), dtype=bool)
    region_names: list[str] = []
    blocks = [real]
    block_roles = [role]
    block_regions = [region_id]
    block_constrained = [constrained]

    for layer in spec.layers:
        if layer.role == "load":
            mask = _load_layer_mask(spec, layer, real)
            block_roles[0] = np.where(mask, ROLE_LOAD, block_roles[0]).astype(np.int8)
            if layer.name:
                rid = len(region_names)
                region_names.append(layer.name)
                block_regions[0] = np.where(mask, rid, block_regions[0]).astype(np.int16)
            continue
        pos = _layer_positions(spec, layer)
        for hole in spec.holes:
            pos = pos[np.linalg.norm(pos - np.asarray(hole.center), axis=1) >= hole.radius]
        rid = len(region_names)
        region_names.append(layer.name or layer.side)
        axes = layer.axes if layer.axes is not None else (True,) * m
        blocks.append(pos)
        block_roles.append(np.full(pos.shape[0], ROLE_FICTITIOUS, dtype=np.int8))
        block_regions.append(np.full(pos.shape[0], rid, dtype=np.int16))
        block_constrained.append(np.tile(np.asarray(axes, dtype=bool), (pos.shape[0], 1)))

    x = np.vstack(blocks)
    role = np.concatenate(block_roles)
    region_id = np.concatenate(block_regions)
    constrained = np.vstack(block_constrained)

    # overlapping fictitious layers would place two particles in the same cell
    cells = np.round(x / dx - 0.5).astype(np.int64)
    if np.unique(cells, axis=0).shape[0] != cells.shape[0]:
        raise SetupError("overlapping boundary layers: duplicate particle cells")

    for ring in spec.rings:
        c = np.asarray(ring.center, dtype=float)
        d = np.linalg.norm(x - c, axis=1)
        mask = (d >= ring.inner_radius) & (d <= ring.inner_radius + ring.thickness)
        if not mask.any():
            raise SetupError(f"constraint ring {ring.name!r} grips no particles")
        rid = len(region_names)
        region_names.append(ring.name or f"ring{len(region_names)}")
        axes = ring.axes if ring.axes is not None else (True,) * m
        constrained[mask] |= np.asarray(axes, dtype=bool)
        region_id[mask] = rid

    volume = np.full(x.shape[0], dx**m * mat.cell_volume_factor)
    density = np.full(x.shape[0], mat.density)
    return ParticleSet(x=x, volume=volume, density=density, role=role,
                       constrained_axes=constrained, region_id=region_id,
                       region_names=region_names, spacing=dx)


def build_horizons(pts: ParticleSet, delta: float) -> HorizonTable:
    """Find all bonds with 0 < |x_j - x_i| <= delta and cache their lengths."""
    if delta <= pts.spacing:
        raise SetupError(f"horizon {delta} must exceed the grid spacing {pts.spacing}")
    pairs = cKDTree(pts.x).query_pairs(r=delta * (1.0 + 1e-12), output_type="ndarray")
    if pairs.shape[0] == 0:
        raise SetupError("no bonds found: horizon too small or single particle")
    pairs = pairs[np.lexsort((pairs[:, 1], pairs[:, 0]))]
    bi = pairs[:, 0].astype(np.int64)
    bj = pairs[:, 1].astype(np.int64)
    ref_len = np.linalg.norm(pts.x[bj] - pts.x[bi], axis=1)

    nb = bi.shape[0]
    src = np.concatenate([bi, bj])
    dst = np.concatenate([bj, bi])
    eb = np.concatenate([np.arange(nb), np.arange(nb)])
    order = np.lexsort((dst, src))
    src, dst, eb = src[order], dst[order], eb[order]
    offsets = np.zeros(pts.n + 1, dtype=np.int64)
    np.cumsum(np.bincount(src, minlength=pts.n), out=offsets[1:])

    return HorizonTable(n_particles=pts.n, delta=delta,
                        bond_i=bi, bond_j=bj, ref_len=ref_len,
                        nu=np.ones(nb), mu=np.ones(nb),
                        alive=np.ones(nb, dtype=bool),
                        offsets=offsets, neighbors=dst, edge_bond=eb)


def correction_factors(table: HorizonTable, pts: ParticleSet,
                       policy: str = "default") -> HorizonTable:
    """Assign volume and surface correction factors.

    Volume correction uses the linear partial-volume band: full weight up to
    delta - dx/2, linearly shrinking weight across the band of width dx
    centered on delta. Surface correction is 1 under the default policy.
    """
    if policy != "default":
        raise SetupError(f"unknown correction policy {policy!r}")
    dx = pts.spacing
    d = table.delta
    nu = np.ones(table.n_bonds)
    band = table.ref_len > d - dx / 2.0
    nu[band] = (d + dx / 2.0 - table.ref_len[band]) / dx
    np.clip(nu, np.finfo(float).tiny, 1.0, out=nu)
    return dataclasses.replace(table, nu=nu, mu=np.ones(table.n_bonds))


def _segments_intersect(p1, p2, q1, q2):
    """Vectorized 2D segment intersection; touching endpoints count.

    p1,p2: (nb,2) bond endpoints. q1,q2: (2,) notch endpoints.
    """
    def cross(o, a, b):
        return (a[..., 0] - o[..., 0]) * (b[..., 1] - o[..., 1]) \
             - (a[..., 1] - o[..., 1]) * (b[..., 0] - o[..., 0])

    q1 = np.broadcast_to(q1, p1.shape)
    q2 = np.broadcast_to(q2, p1.shape)
    d1 = cross(q1, q2, p1)
    d2 = cross(q1, q2, p2)
    d3 = cross(p1, p2, q1)
    d4 = cross(p1, p2, q2)

    proper = (((d1 > 0) & (d2 < 0)) | ((d1 < 0) & (d2 > 0))) \
           & (((d3 > 0) & (d4 < 0)) | ((d3 < 0) & (d4 > 0)))

    def on_segment(a, b, c):
        return (np.minimum(a[..., 0], b[..., 0]) <= c[..., 0]) \
             & (c[..., 0] <= np.maximum(a[..., 0], b[..., 0])) \
             & (np.minimum(a[..., 1], b[..., 1]) <= c[..., 1]) \
             & (c[..., 1] <= np.maximum(a[..., 1], b[..., 1]))

    touch = ((d1 == 0) & on_segment(q1, q2, p1)) \
          | ((d2 == 0) & on_segment(q1, q2, p2)) \
          | ((d3 == 0) & on_segment(p1, p2, q1)) \
          | ((d4 == 0) & on_segment(p1, p2, q2))
    return proper | touch


def apply_notches(table: HorizonTable, spec: GeometrySpec,
                  pts: ParticleSet) -> HorizonTable:
    """Kill every bond whose reference segment crosses a notch segment."""
    if not spec.notches:
        return table
    alive = table.alive.copy()
    p1 = pts.x[table.bond_i]
    p2 = pts.x[table.bond_j]
    for notch in spec.notches:
        q1 = np.asarray(notch.p0, dtype=float)
        q2 = np.asarray(notch.p1, dtype=float)
        alive &= ~_segments_intersect(p1, p2, q1, q2)
    return dataclasses.replace(table, alive=alive)


def sparsity_index(table: HorizonTable) -> float:
    """Fraction of structurally nonzero particle-blocks in the tangent."""
    n = table.n_particles
    if n == 0:
        raise SetupError("sparsity index of an empty particle set")
    return float(np.sum(table.neighbor_counts + 1)) / float(n) ** 2


def build_model(spec: GeometrySpec, mat: MaterialParams, law=None) -> PDModel:
    """Full construction pipeline: grid, horizons, corrections, notches."""
    pts = build_grid(spec, mat)
    table = build_horizons(pts, mat.horizon)
    table = correction_factors(table, pts)
    table = apply_notches(table, spec, pts)
    return PDModel(particles=pts, table=table, material=mat, law=law)
