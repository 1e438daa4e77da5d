"""Plane-stress finite element analysis on a fixed rectangular grid.

Element stiffnesses are scaled by a density obtained from the four nodal
values of the merged component field through a regularized Heaviside, so
the mesh never changes while the components move.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .geometry import Grid, GroundStructure, TdfParams, tdf_structure


class FeaError(RuntimeError):
    """Analysis failure (singular system, bad model definition...)."""


@dataclass(frozen=True)
class HeavisideParams:
    """Regularization band half-width and the void stiffness floor."""

    epsilon: float = 0.1
    alpha: float = 1e-3

    def __post_init__(self):
        if self.epsilon <= 0:
            raise ValueError("epsilon must be positive")
        if not 0 < self.alpha < 1:
            raise ValueError("alpha must be in (0, 1)")


def heaviside(x, params: HeavisideParams):
    """Regularized step: alpha below -eps, 1 above +eps, cubic blend between."""
    x = np.asarray(x, dtype=float)
    eps, alpha = params.epsilon, params.alpha
    xr = np.clip(x / eps, -1.0, 1.0)
    mid = 0.75 * (1.0 - alpha) * (xr - xr ** 3 / 3.0) + 0.5 * (1.0 + alpha)
    out = np.where(x > eps, 1.0, np.where(x < -eps, alpha, mid))
    return out if out.ndim else float(out)


def heaviside_derivative(x, params: HeavisideParams):
    """Derivative of the regularized step; zero outside the +/-eps band."""
    x = np.asarray(x, dtype=float)
    eps, alpha = params.epsilon, params.alpha
    inside = np.abs(x) <= eps
    xr = np.where(inside, x / eps, 0.0)
    val = 0.75 * (1.0 - alpha) / eps * (1.0 - xr ** 2)
    out = np.where(inside, val, 0.0)
    return out if out.ndim else float(out)


def element_density(phi_nodal, params: HeavisideParams) -> float:
    """Density of one element from its four nodal field values."""
    phi_nodal = np.asarray(phi_nodal, dtype=float)
    if phi_nodal.shape != (4,):
        raise ValueError("element_density expects exactly 4 nodal values")
    return float(heaviside(phi_nodal, params).mean())


def element_densities(phi_nodal: np.ndarray, params: HeavisideParams) -> np.ndarray:
    """Densities of every element from the (ny+1, nx+1) nodal field."""
    h = heaviside(phi_nodal, params)
    return 0.25 * (h[:-1, :-1] + h[:-1, 1:] + h[1:, :-1] + h[1:, 1:])


def binarize_structure(phi_nodal: np.ndarray, grid: Grid,
                       params: HeavisideParams | None = None,
                       threshold: float = 0.5) -> np.ndarray:
    """0/1 elemental image of a nodal field: 1 where the density exceeds threshold."""
    params = params or HeavisideParams()
    if phi_nodal.shape != (grid.ny + 1, grid.nx + 1):
        raise ValueError("nodal field shape does not match grid")
    return (element_densities(phi_nodal, params) > threshold).astype(np.uint8)


@dataclass
class FeaModel:
    """Grid, material, supports and loads of one analysis problem.

    loads are (node id, axis, magnitude) with axis 0 = x, 1 = y.
    nondesign_mask is an optional (ny, nx) boolean array of elements forced
    void; by default those elements are excluded from the volume measure.
    """

    grid: Grid
    fixed_dofs: np.ndarray
    loads: list[tuple[int, int, float]]
    youngs: float = 1.0
    poisson: float = 0.3
    nondesign_mask: np.ndarray | None = None
    domain_includes_nondesign: bool = False
    heaviside: HeavisideParams = field(default_factory=HeavisideParams)

    def __post_init__(self):
        self.fixed_dofs = np.unique(np.asarray(self.fixed_dofs, dtype=int))
        n_dofs = 2 * self.grid.n_nodes
        if self.fixed_dofs.size == 0:
            raise FeaError("model must constrain at least one degree of freedom")
        if self.fixed_dofs.min() < 0 or self.fixed_dofs.max() >= n_dofs:
            raise FeaError("fixed dof index out of range")
        for node, axis, _ in self.loads:
            if not 0 <= node < self.grid.n_nodes:
                raise FeaError(f"load node {node} outside grid")
            if axis not in (0, 1):
                raise FeaError("load axis must be 0 (x) or 1 (y)")
        if self.nondesign_mask is not None:
            self.nondesign_mask = np.asarray(self.nondesign_mask, dtype=bool)
            if self.nondesign_mask.shape != (self.grid.ny, self.grid.nx):
                raise FeaError("nondesign mask shape does not match grid")

    def force_vector(self) -> np.ndarray:
        f = np.zeros(2 * self.grid.n_nodes)
        for node, axis, mag in self.loads:
            f[2 * node + axis] += mag
        return f

    def design_element_mask(self) -> np.ndarray:
        """(ny, nx) boolean array, True on designable elements."""
        if self.nondesign_mask is None:
            return np.ones((self.grid.ny, self.grid.nx), dtype=bool)
        return ~self.nondesign_mask

    def effective_densities(self, densities: np.ndarray) -> np.ndarray:
        rho = np.asarray(densities, dtype=float)
        if rho.shape != (self.grid.ny, self.grid.nx):
            raise FeaError("density field shape does not match grid")
        rho = np.clip(rho, self.heaviside.alpha, 1.0)
        if self.nondesign_mask is not None:
            rho = np.where(self.nondesign_mask, self.heaviside.alpha, rho)
        return rho


@dataclass
class AnalysisResult:
    """Displacements and the scalar outputs of one linear solve."""

    displacements: np.ndarray
    compliance: float
    densities: np.ndarray
    volume_fraction: float


def element_stiffness(youngs: float, poisson: float, dx: float, dy: float) -> np.ndarray:
    """8x8 plane-stress stiffness of a dx-by-dy bilinear quadrilateral.

    2x2 Gauss quadrature, unit thickness, dofs ordered (u1,v1,...,u4,v4)
    with nodes counterclockwise from the lower-left corner.
    """
    d_mat = youngs / (1.0 - poisson ** 2) * np.array([
        [1.0, poisson, 0.0],
        [poisson, 1.0, 0.0],
        [0.0, 0.0, (1.0 - poisson) / 2.0],
    ])
    xi_nodes = np.array([-1.0, 1.0, 1.0, -1.0])
    eta_nodes = np.array([-1.0, -1.0, 1.0, 1.0])
    gp = 1.0 / np.sqrt(3.0)
    ke = np.zeros((8, 8))
    for xi in (-gp, gp):
        for eta in (-gp, gp):
            dn_dxi = 0.25 * xi_nodes * (1.0 + eta * eta_nodes)
            dn_deta = 0.25 * eta_nodes * (1.0 + xi * xi_nodes)
            dn_dx = dn_dxi * 2.0 / dx
            dn_dy = dn_deta * 2.0 / dy
            b_mat = np.zeros((3, 8))
            b_mat[0, 0::2] = dn_dx
            b_mat[1, 1::2] = dn_dy
            b_mat[2, 0::2] = dn_dy
            b_mat[2, 1::2] = dn_dx
            ke += b_mat.T @ d_mat @ b_mat * (dx * dy / 4.0)
    return ke


@lru_cache(maxsize=32)
def _edof_matrix(nx: int, ny: int) -> np.ndarray:
    """(n_elems, 8) dof indices per element, elements row-major (x fastest)."""
    ex, ey = np.meshgrid(np.arange(nx), np.arange(ny))
    n1 = (ey * (nx + 1) + ex).ravel()
    n2 = n1 + 1
    n3 = n2 + (nx + 1)
    n4 = n1 + (nx + 1)
    nodes = np.column_stack([n1, n2, n3, n4])
    edof = np.empty((nx * ny, 8), dtype=int)
    edof[:, 0::2] = 2 * nodes
    edof[:, 1::2] = 2 * nodes + 1
    return edof


@lru_cache(maxsize=32)
def _base_stiffness(youngs: float, poisson: float, dx: float, dy: float) -> np.ndarray:
    return element_stiffness(youngs, poisson, dx, dy)


def assemble_and_solve(model: FeaModel, densities: np.ndarray) -> AnalysisResult:
    """Solve K(rho) U = F and return displacements, compliance and volume.

    Fixed dofs are eliminated by reduction; the reduced system is solved
    with a sparse direct factorization.
    """
    grid = model.grid
    rho = model.effective_densities(densities)
    ke = _base_stiffness(model.youngs, model.poisson, grid.dx, grid.dy)
    edof = _edof_matrix(grid.nx, grid.ny)

    data = (rho.ravel()[:, None, None] * ke[None, :, :]).ravel()
    rows = np.repeat(edof, 8, axis=1).ravel()
    cols = np.tile(edof, (1, 8)).ravel()
    n_dofs = 2 * grid.n_nodes
    k_mat = sp.coo_matrix((data, (rows, cols)), shape=(n_dofs, n_dofs)).tocsc()

    f = model.force_vector()
    free = np.setdiff1d(np.arange(n_dofs), model.fixed_dofs, assume_unique=False)
    kff = k_mat[free][:, free].tocsc()
    u = np.zeros(n_dofs)
    try:
        lu = spla.splu(kff)
        u[free] = lu.solve(f[free])
    except RuntimeError as exc:
        raise FeaError(f"rigid body mode: singular stiffness matrix ({exc})") from exc
    if not np.all(np.isfinite(u)):
        raise FeaError("rigid body mode: non-finite displacement solution")
    fnorm = np.linalg.norm(f[free])
    if fnorm > 0:
        residual = np.linalg.norm(kff @ u[free] - f[free]) / fnorm
        if residual > 1e-7:
            raise FeaError(f"solver did not converge: relative residual {residual:.3e}")

    compliance = float(f @ u)
    return AnalysisResult(
        displacements=u,
        compliance=compliance,
        densities=rho,
        volume_fraction=volume_fraction(rho, model),
    )


def volume_fraction(densities: np.ndarray, model: FeaModel) -> float:
    """Material volume over the designable domain volume (uniform elements)."""
    rho = np.asarray(densities, dtype=float)
    design = model.design_element_mask()
    numer = float(rho[design].sum())
    denom = float(rho.size if model.domain_includes_nondesign else design.sum())
    return numer / denom


def element_energies(model: FeaModel, result: AnalysisResult) -> np.ndarray:
    """(ny, nx) per-element strain energies u_e^T k_e0 u_e of a solved state."""
    grid = model.grid
    ke = _base_stiffness(model.youngs, model.poisson, grid.dx, grid.dy)
    ue = result.displacements[_edof_matrix(grid.nx, grid.ny)]
    return np.einsum("ij,jk,ik->i", ue, ke, ue).reshape(grid.ny, grid.nx)


def analyze_design(design: GroundStructure, model: FeaModel,
                   tdf_params: TdfParams) -> tuple[np.ndarray, AnalysisResult]:
    """Field assembly plus linear solve for one design: returns (nodal field, result)."""
    phi = tdf_structure(design.components(), model.grid, tdf_params)
    rho = element_densities(phi, model.heaviside)
    return phi, assemble_and_solve(model, rho)


def downscale_to_grid(image: np.ndarray, grid: Grid) -> np.ndarray:
    """Block-average an image whose dims are integer multiples of the grid's."""
    img = np.asarray(image, dtype=float)
    h, w = img.shape
    if h % grid.ny or w % grid.nx:
        raise FeaError(
            f"image {h}x{w} does not map onto the {grid.ny}x{grid.nx} element grid")
    fy, fx = h // grid.ny, w // grid.nx
    return img.reshape(grid.ny, fy, grid.nx, fx).mean(axis=(1, 3))


def reanalyze_image(image: np.ndarray, model: FeaModel,
                    threshold: float = 0.5) -> tuple[AnalysisResult, bool]:
    """Analyze a raster design: threshold pixel densities to solid/void and solve.

    The image may be at the grid resolution or an integer upscale of it
    (the dataset image format); it is block-averaged down first.  Returns
    the analysis plus an infeasibility flag raised when no solid element
    touches any loaded node.
    """
    img = np.asarray(image, dtype=float)
    if img.min() < 0 or img.max() > 1:
        raise FeaError("image values must lie in [0, 1]")
    rho_img = downscale_to_grid(img, model.grid)
    alpha = model.heaviside.alpha
    rho = np.where(rho_img > threshold, 1.0, alpha)
    result = assemble_and_solve(model, rho)

    infeasible = False
    nx, ny = model.grid.nx, model.grid.ny
    for node, _, _ in model.loads:
        iy, ix = divmod(node, nx + 1)
        touching = [
            result.densities[ey, ex]
            for ey in (iy - 1, iy) for ex in (ix - 1, ix)
            if 0 <= ey < ny and 0 <= ex < nx
        ]
        if not any(d > alpha for d in touching):
            infeasible = True
    return result, infeasible
