"""Construction of diverse initial layouts.

Three routes: regular arrays of cross-braced base cells (varying the node
count), node positions mixed by a short width-frozen pre-optimization,
and random extra connections added to a regular array.
"""

from __future__ import annotations

from dataclasses import dataclass
from itertools import combinations

import numpy as np

from .fea import FeaModel
from .geometry import GeometryError, GroundStructure
from .optimizer import OptimizationConfig, run_optimization

PRE_ITERS_MAX = 40


@dataclass(frozen=True)
class BaseCellSpec:
    """Array counts for the cross-braced base cell (4 perimeter edges + 2 diagonals)."""

    cells_x: int
    cells_y: int
    t0: float | None = None  # initial half-width; default 3% of min(lx, ly)

    def __post_init__(self):
        if self.cells_x < 1 or self.cells_y < 1:
            raise GeometryError("need at least one base cell per direction")

    def initial_thickness(self, lx: float, ly: float) -> float:
        return self.t0 if self.t0 is not None else 0.03 * min(lx, ly)


def _segment_hits_rect(p, q, rect) -> bool:
    """True if segment p-q passes through the open rectangle rect."""
    x0, y0, x1, y1 = rect
    ts = np.linspace(0.0, 1.0, 33)
    xs = p[0] + ts * (q[0] - p[0])
    ys = p[1] + ts * (q[1] - p[1])
    return bool(np.any((xs > x0) & (xs < x1) & (ys > y0) & (ys < y1)))


def strategy1(spec: BaseCellSpec, lx: float, ly: float,
              void_rect: tuple | None = None) -> GroundStructure:
    """Regular cells_x-by-cells_y array of base cells spanning the domain.

    Edges shared by adjacent cells are kept once.  Cells overlapping an
    optional void rectangle are dropped and their dangling nodes removed.
    """
    cx, cy = spec.cells_x, spec.cells_y
    xs = np.linspace(0.0, lx, cx + 1)
    ys = np.linspace(0.0, ly, cy + 1)
    node_id = lambda i, j: j * (cx + 1) + i
    nodes = np.array([[xs[i], ys[j]] for j in range(cy + 1) for i in range(cx + 1)])

    edges: list[tuple[int, int]] = []
    seen = set()

    def add(a, b):
        key = (min(a, b), max(a, b))
        if key not in seen:
            seen.add(key)
            edges.append(key)

    for j in range(cy):
        for i in range(cx):
            if void_rect is not None:
                x0, x1 = xs[i], xs[i + 1]
                y0, y1 = ys[j], ys[j + 1]
                vx0, vy0, vx1, vy1 = void_rect
                if x0 < vx1 and x1 > vx0 and y0 < vy1 and y1 > vy0:
                    continue
            c00 = node_id(i, j)
            c10 = node_id(i + 1, j)
            c01 = node_id(i, j + 1)
            c11 = node_id(i + 1, j + 1)
            add(c00, c10)
            add(c01, c11)
            add(c00, c01)
            add(c10, c11)
            add(c00, c11)
            add(c10, c01)

    if not edges:
        raise GeometryError("no cells left after removing the void region")
    used = sorted({n for e in edges for n in e})
    remap = {old: new for new, old in enumerate(used)}
    edges_arr = np.array([[remap[a], remap[b]] for a, b in edges], dtype=int)
    t0 = spec.initial_thickness(lx, ly)
    return GroundStructure(
        nodes=nodes[used],
        edges=edges_arr,
        thicknesses=np.full(len(edges), t0),
    )


def strategy2(base: GroundStructure, model: FeaModel, config: OptimizationConfig,
              pre_iters: int | None = None, seed: int = 0,
              reset_thickness: bool = True) -> GroundStructure:
    """Mix node positions by a short width-frozen pre-optimization.

    The number of pre-iterations is drawn uniformly from 1..40 when not
    given.  Connectivity and (by default) widths of the input layout are
    preserved; only node coordinates change.
    """
    if pre_iters is None:
        rng = np.random.default_rng(seed)
        pre_iters = int(rng.integers(1, PRE_ITERS_MAX + 1))
    if not 1 <= pre_iters <= PRE_ITERS_MAX:
        raise ValueError(f"pre_iters must be in 1..{PRE_ITERS_MAX}, got {pre_iters}")
    pre_config = OptimizationConfig(
        vbar=config.vbar,
        max_iters=pre_iters,
        move_limit_xy=config.move_limit_xy,
        move_limit_t=config.move_limit_t,
        t_max=config.t_max,
        freeze_thickness=True,
        seed=seed,
        tdf=config.tdf,
        heaviside=config.heaviside,
    )
    history = run_optimization(base, model, pre_config)
    if history.error:
        raise GeometryError(f"pre-optimization failed: {history.error}")
    mixed = history.final_design
    if reset_thickness:
        mixed = GroundStructure(
            nodes=mixed.nodes.copy(),
            edges=mixed.edges.copy(),
            thicknesses=base.thicknesses.copy(),
            node_mobility=list(mixed.node_mobility),
        )
    return mixed


def strategy3(spec: BaseCellSpec, lx: float, ly: float, n_extra: int, seed: int = 0,
              void_rect: tuple | None = None) -> GroundStructure:
    """Regular array plus n_extra random connections between existing nodes.

    Candidate pairs exclude existing edges, self-loops and (when a void
    rectangle is present) segments crossing the void.
    """
    if n_extra < 0:
        raise ValueError("n_extra must be >= 0")
    base = strategy1(spec, lx, ly, void_rect)
    if n_extra == 0:
        return base
    existing = {tuple(sorted(e)) for e in base.edges.tolist()}
    candidates = [
        pair for pair in combinations(range(base.n_nodes), 2)
        if pair not in existing
        and not (void_rect is not None
                 and _segment_hits_rect(base.nodes[pair[0]], base.nodes[pair[1]],
                                        void_rect))
    ]
    if n_extra > len(candidates):
        raise GeometryError(
            f"cannot add {n_extra} components: only {len(candidates)} free node pairs")
    rng = np.random.default_rng(seed)
    chosen = rng.choice(len(candidates), size=n_extra, replace=False)
    new_edges = np.array([candidates[i] for i in sorted(chosen)], dtype=int)
    t0 = spec.initial_thickness(lx, ly)
    return GroundStructure(
        nodes=base.nodes.copy(),
        edges=np.vstack([base.edges, new_edges]),
        thicknesses=np.concatenate([base.thicknesses, np.full(n_extra, t0)]),
        node_mobility=list(base.node_mobility),
    )
