"""Gradient-driven design loop: field assembly, solve, gradients, update.

Each iteration analyzes the current layout, forms the compliance and
volume gradients, and moves node positions and component widths through a
moving-asymptote update under per-iteration move caps.  Runs are
deterministic for a fixed (layout, model, config).
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .fea import (
    FeaError,
    FeaModel,
    HeavisideParams,
    assemble_and_solve,
    element_densities,
)
from .geometry import (
    T_ACTIVE_MIN,
    GeometryError,
    GroundStructure,
    TdfParams,
    tdf_component_field,
)
from .mma import MmaState, mma_step
from .sensitivity import GradientVector, full_gradient


@dataclass(frozen=True)
class OptimizationConfig:
    """Volume budget, iteration budget and update caps for one run."""

    vbar: float
    max_iters: int = 150
    move_limit_xy: float | None = None  # default: 2% of the domain diagonal
    move_limit_t: float | None = None   # default: 1% of min(lx, ly)
    t_max: float | None = None          # default: 10% of min(lx, ly)
    freeze_thickness: bool = False
    seed: int = 0
    stop_tol: float | None = None       # optional early exit on max design change
    obj_scale_target: float = 10.0
    cons_scale: float = 10.0
    mma_penalty: float = 1e4
    # Move caps shrink by this factor for the last part of the budget so the
    # layout settles instead of hopping around the optimum.
    settle_fraction: float = 0.3
    settle_factor: float = 0.25
    # Components narrower than this are snapped to zero width (eliminated):
    # below roughly a third of an element they cannot be resolved by the
    # grid anyway and only leave speckles.  In the settle phase the bar has
    # to be wide enough to rasterize 4-connected at any angle (about 1.4
    # elements), so the threshold tightens.  None = auto from element size,
    # 0 disables.
    t_eliminate: float | None = None
    # During the settle phase the regularization band narrows toward this
    # width, so the final raster comes out near-binary even when a wider
    # band was used to stabilize the early gradients.  None keeps the band
    # fixed at heaviside.epsilon.
    sharpen_to: float | None = 0.1

    def resolved_t_eliminate(self, dx: float, dy: float, settling: bool) -> float:
        if self.t_eliminate is not None:
            return self.t_eliminate
        return (0.7 if settling else 0.3) * max(dx, dy)

    def epsilon_at(self, it: int) -> float:
        """Regularization width used for the analysis at iteration `it`."""
        eps0 = self.heaviside.epsilon
        if self.sharpen_to is None or self.max_iters == 0:
            return eps0
        settle_at = self.max_iters * (1.0 - self.settle_fraction)
        if it < settle_at or self.max_iters <= settle_at:
            return eps0 if it < self.max_iters else self.sharpen_to
        frac = (it - settle_at) / (self.max_iters - settle_at)
        return eps0 + (self.sharpen_to - eps0) * frac
    tdf: TdfParams = field(default_factory=TdfParams)
    heaviside: HeavisideParams = field(default_factory=HeavisideParams)

    def __post_init__(self):
        if not 0 < self.vbar < 1:
            raise ValueError("vbar must lie in (0, 1)")
        if self.max_iters < 0:
            raise ValueError("max_iters must be >= 0")
        for name in ("move_limit_xy", "move_limit_t", "t_max"):
            v = getattr(self, name)
            if v is not None and v <= 0:
                raise ValueError(f"{name} must be positive")

    def resolved_moves(self, lx: float, ly: float) -> tuple[float, float, float]:
        move_xy = self.move_limit_xy or 0.02 * float(np.hypot(lx, ly))
        move_t = self.move_limit_t or 0.01 * min(lx, ly)
        t_max = self.t_max or 0.1 * min(lx, ly)
        return move_xy, move_t, t_max


@dataclass
class IterationRecord:
    iteration: int
    compliance: float
    volume_fraction: float
    max_change: float


@dataclass
class OptimizationHistory:
    """Per-iteration trace plus the final layout of one run."""

    records: list[IterationRecord]
    final_design: GroundStructure
    converged: bool = False
    error: str | None = None
    # Heaviside parameters in effect for the last record; reanalyzing the
    # final design with these reproduces its compliance exactly.
    final_heaviside: HeavisideParams | None = None

    @property
    def initial_compliance(self) -> float:
        return self.records[0].compliance

    @property
    def final_compliance(self) -> float:
        return self.records[-1].compliance

    @property
    def final_volume_fraction(self) -> float:
        return self.records[-1].volume_fraction

    def to_log(self) -> str:
        lines = ["# iter compliance volume_fraction max_change"]
        for r in self.records:
            lines.append(f"{r.iteration} {r.compliance:.10e} "
                         f"{r.volume_fraction:.10e} {r.max_change:.10e}")
        if self.error:
            lines.append(f"# aborted: {self.error}")
        return "\n".join(lines) + "\n"


def _frozen_mask(design: GroundStructure, config: OptimizationConfig) -> np.ndarray:
    """Boolean mask over the design vector: True where a variable may not move."""
    m, n = design.n_nodes, design.n_edges
    frozen = np.zeros(n + 2 * m, dtype=bool)
    for i, flag in enumerate(design.node_mobility):
        if flag in ("fixed-x", "pinned"):
            frozen[i] = True
        if flag in ("fixed-y", "pinned"):
            frozen[m + i] = True
    if config.freeze_thickness:
        frozen[2 * m:] = True
    return frozen


class DesignUpdater:
    """Holds the moving-asymptote state and bound bookkeeping across iterations."""

    def __init__(self, design: GroundStructure, grid, config: OptimizationConfig):
        m, n = design.n_nodes, design.n_edges
        move_xy, move_t, t_max = config.resolved_moves(grid.lx, grid.ly)
        self.lower = np.concatenate([np.zeros(m), np.zeros(m), np.zeros(n)])
        self.upper = np.concatenate([np.full(m, grid.lx), np.full(m, grid.ly),
                                     np.full(n, t_max)])
        self.move = np.concatenate([np.full(2 * m, move_xy), np.full(n, move_t)])
        self.frozen = _frozen_mask(design, config)
        self.free = np.flatnonzero(~self.frozen)
        x0 = design.design_vector()
        # Layouts may start outside the box (snapped nodes stay put anyway).
        self.upper = np.maximum(self.upper, x0)
        self.lower = np.minimum(self.lower, x0)
        self.state = MmaState.fresh(x0[self.free])
        self.config = config

    def step(self, design: GroundStructure, gradients: GradientVector,
             vol_excess: float, move_scale: float = 1.0) -> GroundStructure:
        d_obj = gradients.d_obj.copy()
        d_vol = gradients.d_vol.copy()
        m = design.n_nodes
        if self.config.freeze_thickness:
            d_obj[2 * m:] = 0.0
            d_vol[2 * m:] = 0.0
        if not d_obj.any() and not d_vol.any():
            return design.with_vector(design.design_vector())
        x = design.design_vector()
        free = self.free
        # Width moves stay at full size while node moves settle: widths are
        # how the volume freed by eliminated members gets reabsorbed.
        move = self.move.copy()
        move[:2 * m] *= move_scale
        x_new = x.copy()
        x_new[free] = mma_step(
            self.state, x[free], d_obj[free],
            np.array([vol_excess]), d_vol[None, free],
            self.lower[free], self.upper[free], move[free],
            constraint_penalty=self.config.mma_penalty,
        )
        return design.with_vector(x_new)


def update_design(design: GroundStructure, gradients: GradientVector,
                  config: OptimizationConfig, grid,
                  vol_excess: float,
                  updater: DesignUpdater | None = None) -> GroundStructure:
    """Single design update; a fresh asymptote state is used when none is given."""
    updater = updater or DesignUpdater(design, grid, config)
    return updater.step(design, gradients, vol_excess)


def _evaluate(design: GroundStructure, model: FeaModel, tdf: TdfParams):
    """Field rows, merged field and analysis of one design (single field pass)."""
    grid = model.grid
    comps = design.components()
    active = [j for j, c in enumerate(comps) if c.t >= T_ACTIVE_MIN]
    if not active:
        raise GeometryError("empty structure: every component is eliminated")
    xs, ys = grid.node_coords()
    rows = [tdf_component_field(comps[j], xs, ys, tdf, grid.l_min) for j in active]
    lam = tdf.ks_lambda
    stack = np.stack(rows)
    peak = stack.max(axis=0)
    phi_s = peak + np.log(np.exp(lam * (stack - peak)).sum(axis=0)) / lam
    rho = element_densities(phi_s.reshape(grid.ny + 1, grid.nx + 1), model.heaviside)
    result = assemble_and_solve(model, rho)
    return rows, phi_s, result


def run_optimization(ground: GroundStructure, model: FeaModel,
                     config: OptimizationConfig) -> OptimizationHistory:
    """Run the full loop for config.max_iters iterations and return the trace.

    Analysis failures mid-run abort with the history recorded so far and
    the cause on the history's error field.
    """
    design = ground.with_vector(ground.design_vector())
    updater = DesignUpdater(design, model.grid, config)
    records: list[IterationRecord] = []
    obj_scale = 1.0
    cons_scale = config.cons_scale
    prev_vec = design.design_vector()
    converged = False
    heavisides = {}

    def model_at(it: int) -> FeaModel:
        eps = config.epsilon_at(it)
        if eps not in heavisides:
            heavisides[eps] = replace(
                model, heaviside=HeavisideParams(eps, config.heaviside.alpha))
        return heavisides[eps]

    cur_model = model_at(0)
    for it in range(config.max_iters + 1):
        cur_model = model_at(it)
        try:
            rows, phi_s, result = _evaluate(design, cur_model, config.tdf)
        except (FeaError, GeometryError) as exc:
            return OptimizationHistory(records, design, error=str(exc),
                                       final_heaviside=cur_model.heaviside)
        change = float(np.abs(design.design_vector() - prev_vec).max()) if it else 0.0
        records.append(IterationRecord(it, result.compliance,
                                       result.volume_fraction, change))
        if it == config.max_iters:
            break
        if config.stop_tol is not None and it > 0 and change < config.stop_tol:
            converged = True
            break
        if it == 0:
            obj_scale = config.obj_scale_target / max(abs(result.compliance), 1e-12)

        gradients = full_gradient(design, result, cur_model, config.tdf,
                                  _fields=(rows, phi_s))
        scaled = GradientVector(d_obj=gradients.d_obj * obj_scale,
                                d_vol=gradients.d_vol * cons_scale)
        vol_excess = cons_scale * (result.volume_fraction - config.vbar)
        settle_at = config.max_iters * (1.0 - config.settle_fraction)
        settling = it >= settle_at
        move_scale = config.settle_factor if settling else 1.0
        t_kill = config.resolved_t_eliminate(model.grid.dx, model.grid.dy, settling)
        prev_vec = design.design_vector()
        design = updater.step(design, scaled, vol_excess, move_scale)
        if t_kill > 0 and np.any((design.thicknesses > 0)
                                 & (design.thicknesses < t_kill)):
            vec = design.design_vector()
            t_part = vec[2 * design.n_nodes:]
            t_part[t_part < t_kill] = 0.0
            design = design.with_vector(vec)

    return OptimizationHistory(records, design, converged=converged,
                               final_heaviside=cur_model.heaviside)
