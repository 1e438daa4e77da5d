"""Analytic gradients of compliance and volume with a finite-difference oracle.

The compliance objective is self-adjoint, so no extra adjoint solve is
needed: the per-element factor is the element strain energy.  The chain
runs element density -> regularized Heaviside -> smooth-max merge ->
per-component field -> endpoint/half-width parameters.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geometry import (
    T_ACTIVE_MIN,
    ComponentGeom,
    GroundStructure,
    TdfParams,
    derive_pose,
    local_coords,
)
from .fea import (
    AnalysisResult,
    FeaModel,
    analyze_design,
    element_densities,
    element_energies,
    heaviside_derivative,
)

PARAM_NAMES = ("x_a", "y_a", "x_b", "y_b", "t")


class StaleAnalysisError(RuntimeError):
    """The analysis passed in does not correspond to the design."""


@dataclass
class GradientVector:
    """Objective and volume-fraction gradients over the (N + 2M) design vector."""

    d_obj: np.ndarray
    d_vol: np.ndarray

    def __post_init__(self):
        if not (np.all(np.isfinite(self.d_obj)) and np.all(np.isfinite(self.d_vol))):
            raise ValueError("gradient entries must be finite")


def dks_weight(phi_all: np.ndarray, j: int, ks_lambda: float) -> float:
    """Share of component j in the smooth max at one point: a softmax weight."""
    phi_all = np.asarray(phi_all, dtype=float)
    shifted = ks_lambda * (phi_all - phi_all.max())
    w = np.exp(shifted)
    return float(w[j] / w.sum())


def component_tdf_gradients(c: ComponentGeom, xs, ys, params: TdfParams,
                            l_min: float = 0.0) -> tuple[np.ndarray, np.ndarray]:
    """Field of one component and its derivatives w.r.t. (x_a, y_a, x_b, y_b, t).

    Returns (phi, dphi) with dphi of shape (5, n_points).  Points sitting
    exactly on the field's corner singularity get zero derivatives, as do
    degenerate (length-clamped) or eliminated components.
    """
    xs = np.asarray(xs, dtype=float).ravel()
    ys = np.asarray(ys, dtype=float).ravel()
    n = xs.size
    if c.t < T_ACTIVE_MIN:
        return np.full(n, -np.inf), np.zeros((5, n))
    pose = derive_pose(c, l_min)
    xp, yp = local_coords(pose, xs, ys)
    length, t, p = pose.length, c.t, params.p
    gx = xp / length
    gy = yp / t
    g = gx ** p + gy ** p
    r = g ** (1.0 / p)
    phi = 1.0 - r

    dphi = np.zeros((5, n))
    if pose.degenerate:
        return phi, dphi

    # Normalized powers keep the chain rule finite near the field's level
    # sets: |gx|, |gy| <= r, so ax, ay lie in [-1, 1].
    ok = r > 0.0
    rs = np.where(ok, r, 1.0)
    ax = np.where(ok, gx / rs, 0.0) ** (p - 1)
    ay = np.where(ok, gy / rs, 0.0) ** (p - 1)

    sin, cos = pose.sin_th, pose.cos_th
    u = xs - pose.x0
    v = ys - pose.y0
    inv2l = 0.5 / length

    d_len = (cos * 0.5, sin * 0.5, -cos * 0.5, -sin * 0.5)
    d_cos = (sin * sin * inv2l, -cos * sin * inv2l,
             -sin * sin * inv2l, cos * sin * inv2l)
    d_sin = (-cos * sin * inv2l, cos * cos * inv2l,
             cos * sin * inv2l, -cos * cos * inv2l)
    d_x0 = (0.5, 0.0, 0.5, 0.0)
    d_y0 = (0.0, 0.5, 0.0, 0.5)

    for k in range(4):
        dxp = d_cos[k] * u + d_sin[k] * v - cos * d_x0[k] - sin * d_y0[k]
        dyp = -d_sin[k] * u + d_cos[k] * v + sin * d_x0[k] - cos * d_y0[k]
        dgx = dxp / length - gx * (d_len[k] / length)
        dgy = dyp / t
        dphi[k] = -(ax * dgx + ay * dgy)
    dphi[4] = ay * gy / t  # width derivative: -ay * d(y'/t)/dt = ay*gy/t
    return phi, dphi


def dphi_dparam(c: ComponentGeom, pt, which: str, params: TdfParams,
                l_min: float = 0.0) -> float:
    """Scalar derivative of a component's field at one point w.r.t. one parameter."""
    if which not in PARAM_NAMES:
        raise ValueError(f"unknown parameter {which!r}")
    _, dphi = component_tdf_gradients(c, [pt[0]], [pt[1]], params, l_min)
    return float(dphi[PARAM_NAMES.index(which), 0])


def _scatter_to_nodes(elem_values: np.ndarray) -> np.ndarray:
    """Sum (ny, nx) element values onto the (ny+1, nx+1) nodes they touch."""
    ny, nx = elem_values.shape
    out = np.zeros((ny + 1, nx + 1))
    out[:-1, :-1] += elem_values
    out[:-1, 1:] += elem_values
    out[1:, :-1] += elem_values
    out[1:, 1:] += elem_values
    return out


def full_gradient(design: GroundStructure, analysis: AnalysisResult,
                  model: FeaModel, tdf_params: TdfParams,
                  _fields: tuple | None = None) -> GradientVector:
    """Gradients of compliance and volume fraction over all design variables.

    The analysis must belong to this exact design: the densities are
    recomputed and compared.  Node variables accumulate contributions from
    every incident component; eliminated components contribute nothing.
    Parameter derivatives are only evaluated at nodes inside the Heaviside
    blend band, the only places they can contribute.
    """
    grid = model.grid
    lam = tdf_params.ks_lambda
    xs, ys = grid.node_coords()

    comps = design.components()
    active = [j for j, c in enumerate(comps) if c.t >= T_ACTIVE_MIN]
    if not active:
        raise StaleAnalysisError("design has no active components")

    if _fields is None:
        from .geometry import tdf_component_field

        rows = [tdf_component_field(comps[j], xs, ys, tdf_params, grid.l_min)
                for j in active]
        phi_stack = np.stack(rows)
        peak = phi_stack.max(axis=0)
        phi_s = peak + np.log(np.exp(lam * (phi_stack - peak)).sum(axis=0)) / lam
    else:
        rows, phi_s = _fields
        phi_s = phi_s.ravel()

    rho = model.effective_densities(
        element_densities(phi_s.reshape(grid.ny + 1, grid.nx + 1), model.heaviside))
    if not np.array_equal(rho, analysis.densities):
        raise StaleAnalysisError("analysis densities do not match this design")

    design_mask = model.design_element_mask()
    energies = np.where(design_mask, element_energies(model, analysis), 0.0)
    elem_vol = np.where(design_mask, 1.0, 0.0)
    denom = design_mask.size if model.domain_includes_nondesign else design_mask.sum()

    hprime = heaviside_derivative(phi_s, model.heaviside) * 0.25
    obj_nodal = (_scatter_to_nodes(-energies).ravel() * hprime)
    vol_nodal = (_scatter_to_nodes(elem_vol / denom).ravel() * hprime)

    m = design.n_nodes
    d_obj = np.zeros(design.n_design_vars)
    d_vol = np.zeros(design.n_design_vars)
    idx = np.flatnonzero(hprime)
    if idx.size == 0:
        return GradientVector(d_obj=d_obj, d_vol=d_vol)
    xs_b, ys_b = xs[idx], ys[idx]
    phi_s_b = phi_s[idx]
    obj_b = obj_nodal[idx]
    vol_b = vol_nodal[idx]
    for row, j in zip(rows, active):
        _, dphi_j = component_tdf_gradients(comps[j], xs_b, ys_b,
                                            tdf_params, grid.l_min)
        w_j = np.exp(lam * (row[idx] - phi_s_b))
        obj5 = dphi_j @ (obj_b * w_j)
        vol5 = dphi_j @ (vol_b * w_j)
        ia, ib = design.edges[j]
        d_obj[[ia, m + ia, ib, m + ib, 2 * m + j]] += obj5
        d_vol[[ia, m + ia, ib, m + ib, 2 * m + j]] += vol5
    return GradientVector(d_obj=d_obj, d_vol=d_vol)


def finite_difference_gradient(design: GroundStructure, model: FeaModel,
                               tdf_params: TdfParams,
                               h: float | None = None,
                               indices=None) -> tuple[np.ndarray, np.ndarray]:
    """Central-difference gradients of compliance and volume fraction.

    Independent of the analytic path: every perturbation re-runs the whole
    field assembly and linear solve.  The step defaults to 1e-6 times the
    domain scale.
    """
    if h is None:
        h = 1e-6 * max(model.grid.lx, model.grid.ly)
    d0 = design.design_vector()
    idx = range(d0.size) if indices is None else indices
    d_obj = np.zeros(d0.size)
    d_vol = np.zeros(d0.size)
    for i in idx:
        vals = []
        for sign in (1.0, -1.0):
            d = d0.copy()
            d[i] += sign * h
            _, res = analyze_design(design.with_vector(d), model, tdf_params)
            vals.append((res.compliance, res.volume_fraction))
        d_obj[i] = (vals[0][0] - vals[1][0]) / (2 * h)
        d_vol[i] = (vals[0][1] - vals[1][1]) / (2 * h)
    return d_obj, d_vol
