"""Benchmark problem definitions and their loading-position enumerations.

Two built-in settings: a 2:1 cantilever clamped on its left edge with a
unit downward load anywhere on the right edge (101 position labels at
full scale), and an L-shaped domain (unit square with a void upper-right
block) clamped along the top of its left leg and loaded on the lower part
of the right edge (81 labels).
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .fea import FeaModel, HeavisideParams
from .geometry import GeometryError, Grid, GroundStructure
from .metrics import CANTILEVER_BINNING, LBEAM_BINNING, ComplexityBinning


class ConfigError(ValueError):
    """A problem or run configuration does not match the documented schema."""


@dataclass(frozen=True)
class ProblemSpec:
    """Domain, supports, load enumeration and complexity binning of one setting."""

    problem_id: str
    grid: Grid
    vbar: float
    n_labels: int
    binning: ComplexityBinning
    support_edge: str  # "left": clamp x=0; "top-left": clamp y=ly for x <= x_clamp
    load_span: tuple[float, float] = (0.0, 1.0)  # fraction of right edge, bottom up
    load_magnitude: float = -1.0
    nondesign_rect: tuple[float, float, float, float] | None = None
    x_clamp: float | None = None
    domain_includes_nondesign: bool = False
    heaviside: HeavisideParams = field(default_factory=HeavisideParams)

    def __post_init__(self):
        if self.support_edge not in ("left", "top-left"):
            raise ConfigError(f"unknown support edge {self.support_edge!r}")
        if self.n_labels < 1:
            raise ConfigError("need at least one loading position")

    def load_node_index(self, label: int) -> tuple[int, int]:
        """(ix, iy) grid node carrying the load of a position label."""
        if not 0 <= label < self.n_labels:
            raise ConfigError(f"label {label} outside 0..{self.n_labels - 1}")
        s0, s1 = self.load_span
        iy0 = round(s0 * self.grid.ny)
        iy1 = round(s1 * self.grid.ny)
        if self.n_labels == 1:
            return self.grid.nx, iy0
        frac = label / (self.n_labels - 1)
        return self.grid.nx, iy0 + round(frac * (iy1 - iy0))

    def load_point(self, label: int) -> tuple[float, float]:
        ix, iy = self.load_node_index(label)
        return ix * self.grid.dx, iy * self.grid.dy

    def nondesign_mask(self) -> np.ndarray | None:
        if self.nondesign_rect is None:
            return None
        g = self.grid
        x0, y0, x1, y1 = self.nondesign_rect
        ex = (np.arange(g.nx) + 0.5) * g.dx
        ey = (np.arange(g.ny) + 0.5) * g.dy
        cx, cy = np.meshgrid(ex, ey)
        return (cx > x0) & (cx < x1) & (cy > y0) & (cy < y1)

    def fea_model(self, label: int) -> FeaModel:
        g = self.grid
        if self.support_edge == "left":
            fixed_nodes = [g.node_id(0, iy) for iy in range(g.ny + 1)]
        else:
            x_clamp = self.x_clamp if self.x_clamp is not None else g.lx
            ix_max = int(round(x_clamp / g.dx))
            fixed_nodes = [g.node_id(ix, g.ny) for ix in range(ix_max + 1)]
        fixed_dofs = np.array([d for n in fixed_nodes for d in (2 * n, 2 * n + 1)])
        ix, iy = self.load_node_index(label)
        loads = [(g.node_id(ix, iy), 1, self.load_magnitude)]
        return FeaModel(
            grid=g,
            fixed_dofs=fixed_dofs,
            loads=loads,
            nondesign_mask=self.nondesign_mask(),
            domain_includes_nondesign=self.domain_includes_nondesign,
            heaviside=self.heaviside,
        )

    def to_config(self) -> dict:
        doc = {
            "id": self.problem_id,
            "nx": self.grid.nx,
            "ny": self.grid.ny,
            "lx": self.grid.lx,
            "ly": self.grid.ly,
            "vbar": self.vbar,
            "n_labels": self.n_labels,
            "binning": list(self.binning.upper_bounds),
            "support_edge": self.support_edge,
            "load_span": list(self.load_span),
            "load_magnitude": self.load_magnitude,
        }
        if self.nondesign_rect is not None:
            doc["nondesign_rect"] = list(self.nondesign_rect)
        if self.x_clamp is not None:
            doc["x_clamp"] = self.x_clamp
        if self.domain_includes_nondesign:
            doc["domain_includes_nondesign"] = True
        return doc


def default_heaviside(grid: Grid) -> HeavisideParams:
    """Regularization width for a grid: 0.1 at reference resolution, wider on
    coarse grids so the blend band keeps covering about one element."""
    return HeavisideParams(epsilon=max(0.1, 10.0 * max(grid.dx, grid.dy)), alpha=1e-3)


def cantilever(nx: int = 200, ny: int = 100, vbar: float = 0.35) -> ProblemSpec:
    """2:1 cantilever; 101 loading positions along the right edge, 6 levels."""
    grid = Grid(nx=nx, ny=ny, lx=2.0, ly=1.0)
    return ProblemSpec(
        problem_id="cantilever",
        grid=grid,
        vbar=vbar,
        n_labels=101,
        binning=CANTILEVER_BINNING,
        support_edge="left",
        heaviside=default_heaviside(grid),
    )


def l_beam(nx: int = 200, ny: int = 200, vbar: float = 0.35) -> ProblemSpec:
    """Unit square with a 0.6x0.6 void upper-right block; 81 loading positions."""
    grid = Grid(nx=nx, ny=ny, lx=1.0, ly=1.0)
    return ProblemSpec(
        problem_id="l-beam",
        grid=grid,
        vbar=vbar,
        n_labels=81,
        binning=LBEAM_BINNING,
        support_edge="top-left",
        load_span=(0.0, 0.4),
        nondesign_rect=(0.4, 0.4, 1.0, 1.0),
        x_clamp=0.4,
        heaviside=default_heaviside(grid),
    )


def problem_from_config(doc: dict) -> ProblemSpec:
    """Build a problem from its config mapping (see README for the schema)."""
    if not isinstance(doc, dict) or "id" not in doc:
        raise ConfigError("problem section must be a mapping with an 'id' key")
    pid = doc["id"]
    try:
        if pid == "cantilever":
            base = cantilever(nx=int(doc.get("nx", 200)), ny=int(doc.get("ny", 100)),
                              vbar=float(doc.get("vbar", 0.35)))
        elif pid == "l-beam":
            base = l_beam(nx=int(doc.get("nx", 200)), ny=int(doc.get("ny", 200)),
                          vbar=float(doc.get("vbar", 0.35)))
        elif pid == "custom":
            base = ProblemSpec(
                problem_id="custom",
                grid=Grid(nx=int(doc["nx"]), ny=int(doc["ny"]),
                          lx=float(doc["lx"]), ly=float(doc["ly"])),
                vbar=float(doc["vbar"]),
                n_labels=int(doc["n_labels"]),
                binning=ComplexityBinning(tuple(int(b) for b in doc["binning"])),
                support_edge=doc.get("support_edge", "left"),
                load_span=tuple(doc.get("load_span", (0.0, 1.0))),
                load_magnitude=float(doc.get("load_magnitude", -1.0)),
                nondesign_rect=(tuple(doc["nondesign_rect"])
                                if "nondesign_rect" in doc else None),
                x_clamp=doc.get("x_clamp"),
            )
        else:
            raise ConfigError(f"unknown problem id {pid!r}")
    except (KeyError, TypeError, ValueError, GeometryError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(f"invalid problem config: {exc}") from exc
    overrides = {}
    if "epsilon" in doc or "alpha" in doc:
        hv = base.heaviside if pid != "custom" else default_heaviside(base.grid)
        overrides["heaviside"] = HeavisideParams(
            epsilon=float(doc.get("epsilon", hv.epsilon)),
            alpha=float(doc.get("alpha", hv.alpha)))
    elif pid == "custom":
        overrides["heaviside"] = default_heaviside(base.grid)
    if "domain_includes_nondesign" in doc:
        overrides["domain_includes_nondesign"] = bool(doc["domain_includes_nondesign"])
    if pid != "custom":
        for key in ("n_labels", "load_span", "load_magnitude"):
            if key in doc:
                val = doc[key]
                overrides[key] = tuple(val) if key == "load_span" else val
        if "binning" in doc:
            overrides["binning"] = ComplexityBinning(tuple(int(b) for b in doc["binning"]))
    return replace(base, **overrides) if overrides else base


def attach_ground(ground: GroundStructure, problem: ProblemSpec,
                  label: int) -> GroundStructure:
    """Tie a layout to the supports and the load of one position label.

    Nodes sitting on the clamped edge may only slide along it; the node
    nearest the load point is snapped onto it and pinned, so the loaded
    grid node stays covered by material throughout the run.
    """
    g = problem.grid
    nodes = ground.nodes.copy()
    mobility = list(ground.node_mobility)
    tol = 1e-9 * max(g.lx, g.ly)

    if problem.support_edge == "left":
        on_edge = np.abs(nodes[:, 0]) <= tol
        for i in np.flatnonzero(on_edge):
            mobility[i] = "fixed-x"
    else:
        x_clamp = problem.x_clamp if problem.x_clamp is not None else g.lx
        on_edge = (np.abs(nodes[:, 1] - g.ly) <= tol) & (nodes[:, 0] <= x_clamp + tol)
        for i in np.flatnonzero(on_edge):
            mobility[i] = "fixed-y"

    px, py = problem.load_point(label)
    nearest = int(np.argmin(np.hypot(nodes[:, 0] - px, nodes[:, 1] - py)))
    nodes[nearest] = (px, py)
    mobility[nearest] = "pinned"

    return GroundStructure(
        nodes=nodes,
        edges=ground.edges.copy(),
        thicknesses=ground.thicknesses.copy(),
        node_mobility=mobility,
    )
