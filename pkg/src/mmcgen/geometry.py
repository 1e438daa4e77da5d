"""Explicit bar-component geometry and topology description fields.

A structure is a union of straight components with uniform half-width.
Each component is described by its two endpoints and a half-width; a
level-set-like field (positive inside, zero on the boundary, negative
outside) is attached to every component and the per-component fields are
merged with a smooth log-sum-exp maximum.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace

import numpy as np

# Components thinner than this take no part in the merged field: they are
# treated as eliminated from the structure (their width hit zero).
T_ACTIVE_MIN = 1e-6

# Half-length clamp for degenerate components, as a fraction of the larger
# domain side.  The pose formulas divide by the half-length.
L_MIN_FACTOR = 1e-4

MOBILITY_FLAGS = ("free", "fixed-x", "fixed-y", "pinned")


class GeometryError(ValueError):
    """Invalid geometric input (empty structures, bad connectivity...)."""


@dataclass(frozen=True)
class TdfParams:
    """Shape parameters of the component field and its smooth-max merge.

    p is the super-ellipse exponent (even, >= 2); ks_lambda controls how
    tightly the log-sum-exp aggregate hugs the exact pointwise maximum.
    """

    p: int = 6
    ks_lambda: float = 80.0

    def __post_init__(self):
        if self.p < 2 or self.p % 2 != 0:
            raise GeometryError(f"p must be an even integer >= 2, got {self.p}")
        if self.ks_lambda <= 0:
            raise GeometryError(f"ks_lambda must be positive, got {self.ks_lambda}")


@dataclass(frozen=True)
class ComponentGeom:
    """One straight component: endpoints (x_a, y_a), (x_b, y_b), half-width t."""

    x_a: float
    y_a: float
    x_b: float
    y_b: float
    t: float

    def __post_init__(self):
        if self.t < 0:
            raise GeometryError(f"half-width must be >= 0, got {self.t}")


@dataclass(frozen=True)
class ComponentPose:
    """Center/orientation form of a component: half-length, center, angle."""

    length: float  # half-length
    x0: float
    y0: float
    sin_th: float
    cos_th: float
    degenerate: bool = False


@dataclass(frozen=True)
class Grid:
    """Rectangular analysis grid: nx-by-ny elements over an lx-by-ly domain."""

    nx: int
    ny: int
    lx: float
    ly: float

    def __post_init__(self):
        if self.nx < 1 or self.ny < 1:
            raise GeometryError("grid needs at least one element per direction")
        if self.lx <= 0 or self.ly <= 0:
            raise GeometryError("domain dimensions must be positive")

    @property
    def n_nodes(self) -> int:
        return (self.nx + 1) * (self.ny + 1)

    @property
    def n_elems(self) -> int:
        return self.nx * self.ny

    @property
    def dx(self) -> float:
        return self.lx / self.nx

    @property
    def dy(self) -> float:
        return self.ly / self.ny

    def node_coords(self) -> tuple[np.ndarray, np.ndarray]:
        """Flattened nodal x and y coordinates, node id = iy*(nx+1) + ix."""
        xs = np.linspace(0.0, self.lx, self.nx + 1)
        ys = np.linspace(0.0, self.ly, self.ny + 1)
        gx, gy = np.meshgrid(xs, ys)
        return gx.ravel(), gy.ravel()

    def node_id(self, ix: int, iy: int) -> int:
        if not (0 <= ix <= self.nx and 0 <= iy <= self.ny):
            raise GeometryError(f"node ({ix},{iy}) outside grid")
        return iy * (self.nx + 1) + ix

    @property
    def l_min(self) -> float:
        """Half-length clamp used for degenerate components on this domain."""
        return L_MIN_FACTOR * max(self.lx, self.ly)


@dataclass
class GroundStructure:
    """Node/edge layout whose node positions and edge widths are the design.

    nodes: (M, 2) array of coordinates.
    edges: (N, 2) array of node-index pairs (undirected, no duplicates).
    thicknesses: (N,) half-widths.
    node_mobility: per-node flag in MOBILITY_FLAGS.
    """

    nodes: np.ndarray
    edges: np.ndarray
    thicknesses: np.ndarray
    node_mobility: list[str] = field(default_factory=list)

    def __post_init__(self):
        self.nodes = np.asarray(self.nodes, dtype=float).reshape(-1, 2)
        self.edges = np.asarray(self.edges, dtype=int).reshape(-1, 2)
        self.thicknesses = np.asarray(self.thicknesses, dtype=float).ravel()
        if not self.node_mobility:
            self.node_mobility = ["free"] * self.n_nodes
        self.validate()

    def validate(self):
        m, n = self.n_nodes, self.n_edges
        if self.thicknesses.shape != (n,):
            raise GeometryError("one thickness per edge required")
        if np.any(self.thicknesses < 0):
            raise GeometryError("thicknesses must be >= 0")
        if n and (self.edges.min() < 0 or self.edges.max() >= m):
            raise GeometryError("edge references node out of range")
        if np.any(self.edges[:, 0] == self.edges[:, 1]):
            raise GeometryError("self-loop edge")
        und = {tuple(sorted(e)) for e in self.edges.tolist()}
        if len(und) != n:
            raise GeometryError("duplicate undirected edge")
        if len(self.node_mobility) != m:
            raise GeometryError("one mobility flag per node required")
        bad = set(self.node_mobility) - set(MOBILITY_FLAGS)
        if bad:
            raise GeometryError(f"unknown mobility flags: {sorted(bad)}")

    @property
    def n_nodes(self) -> int:
        return self.nodes.shape[0]

    @property
    def n_edges(self) -> int:
        return self.edges.shape[0]

    @property
    def n_design_vars(self) -> int:
        return self.n_edges + 2 * self.n_nodes

    def design_vector(self) -> np.ndarray:
        """Design vector ordered (all node x, all node y, all thicknesses)."""
        return np.concatenate([self.nodes[:, 0], self.nodes[:, 1], self.thicknesses])

    def with_vector(self, d: np.ndarray) -> "GroundStructure":
        d = np.asarray(d, dtype=float).ravel()
        m, n = self.n_nodes, self.n_edges
        if d.size != n + 2 * m:
            raise GeometryError(f"design vector must have length {n + 2 * m}")
        nodes = np.column_stack([d[:m], d[m:2 * m]])
        return GroundStructure(
            nodes=nodes,
            edges=self.edges.copy(),
            thicknesses=d[2 * m:].copy(),
            node_mobility=list(self.node_mobility),
        )

    def components(self) -> list[ComponentGeom]:
        out = []
        for (ia, ib), t in zip(self.edges, self.thicknesses):
            xa, ya = self.nodes[ia]
            xb, yb = self.nodes[ib]
            out.append(ComponentGeom(xa, ya, xb, yb, float(t)))
        return out

    def to_json(self) -> str:
        doc = {
            "nodes": [[float(x), float(y)] for x, y in self.nodes],
            "edges": [[int(a), int(b)] for a, b in self.edges],
            "thicknesses": [float(t) for t in self.thicknesses],
            "node_mobility": list(self.node_mobility),
        }
        return json.dumps(doc, indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "GroundStructure":
        doc = json.loads(text)
        return cls(
            nodes=np.array(doc["nodes"], dtype=float),
            edges=np.array(doc["edges"], dtype=int).reshape(-1, 2),
            thicknesses=np.array(doc["thicknesses"], dtype=float),
            node_mobility=list(doc["node_mobility"]),
        )


def derive_pose(c: ComponentGeom, l_min: float = 0.0) -> ComponentPose:
    """Half-length, center and orientation of a component from its endpoints.

    Components shorter than l_min are clamped to l_min with a horizontal
    orientation and flagged degenerate.
    """
    dx = c.x_a - c.x_b
    dy = c.y_a - c.y_b
    length = 0.5 * np.hypot(dx, dy)
    x0 = 0.5 * (c.x_a + c.x_b)
    y0 = 0.5 * (c.y_a + c.y_b)
    if length < max(l_min, np.finfo(float).tiny):
        return ComponentPose(max(l_min, 1e-12), x0, y0, 0.0, 1.0, degenerate=True)
    return ComponentPose(length, x0, y0, dy / (2.0 * length), dx / (2.0 * length))


def local_coords(pose: ComponentPose, xs, ys):
    """Map global points into the component frame (axis along the bar)."""
    u = np.asarray(xs, dtype=float) - pose.x0
    v = np.asarray(ys, dtype=float) - pose.y0
    xp = pose.cos_th * u + pose.sin_th * v
    yp = -pose.sin_th * u + pose.cos_th * v
    return xp, yp


def tdf_component_field(c: ComponentGeom, xs, ys, params: TdfParams,
                        l_min: float = 0.0) -> np.ndarray:
    """Component field at points (xs, ys): 1 - ((x'/L)^p + (y'/t)^p)^(1/p).

    Positive inside the component, zero on its boundary, negative outside.
    A zero-width component returns -inf everywhere (it contributes nothing).
    """
    xs = np.asarray(xs, dtype=float)
    if c.t == 0.0:
        return np.full(xs.shape, -np.inf)
    pose = derive_pose(c, l_min)
    xp, yp = local_coords(pose, xs, ys)
    g = (xp / pose.length) ** params.p + (yp / c.t) ** params.p
    return 1.0 - g ** (1.0 / params.p)


def tdf_component(c: ComponentGeom, pt, params: TdfParams, l_min: float = 0.0) -> float:
    """Scalar component field value at one point (see tdf_component_field)."""
    return float(tdf_component_field(c, [pt[0]], [pt[1]], params, l_min)[0])


def _active_fields(components, grid: Grid, params: TdfParams) -> np.ndarray:
    """Stacked nodal fields of the non-eliminated components, (n_active, n_nodes)."""
    if not components:
        raise GeometryError("empty structure")
    xs, ys = grid.node_coords()
    rows = [tdf_component_field(c, xs, ys, params, grid.l_min)
            for c in components if c.t >= T_ACTIVE_MIN]
    if not rows:
        raise GeometryError("empty structure: every component is eliminated")
    return np.stack(rows)


def tdf_structure(components, grid: Grid, params: TdfParams) -> np.ndarray:
    """Merged nodal field ln(sum_i exp(lambda*phi_i))/lambda, shape (ny+1, nx+1).

    Evaluated with max-subtraction so the exponentials cannot overflow.
    """
    phi = _active_fields(components, grid, params)
    lam = params.ks_lambda
    peak = phi.max(axis=0)
    merged = peak + np.log(np.exp(lam * (phi - peak)).sum(axis=0)) / lam
    return merged.reshape(grid.ny + 1, grid.nx + 1)


def tdf_exact_max(components, grid: Grid, params: TdfParams) -> np.ndarray:
    """Pointwise-exact maximum of the component fields (reference for the smooth merge)."""
    return _active_fields(components, grid, params).max(axis=0).reshape(grid.ny + 1, grid.nx + 1)
