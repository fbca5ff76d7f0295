//! Red-black relaxation kernels shared by the linear and complementarity solvers.
//!
//! All kernels work on raw per-cell arrays of the domain and only write
//! Interior cells. `rhs` is the target value of the discrete Laplacian.

use crate::grid::GridDomain;

/// Over-relaxation factor that is optimal for the model Poisson problem.
pub fn optimal_omega(dom: &GridDomain) -> f64 {
    let side = dom.side_length().max(dom.h());
    2.0 / (1.0 + (std::f64::consts::PI * dom.h() / side).sin())
}

#[inline]
fn neighbor_sum(values: &[f64], idx: usize, strides: &[usize; 3], dim: usize) -> f64 {
    let mut s = 0.0;
    for st in &strides[..dim] {
        s += values[idx - st] + values[idx + st];
    }
    s
}

/// One red-black SOR sweep for `Δ_h u = rhs`; with `lower`, every update is
/// clamped from below (projected SOR).
pub fn sweep(
    dom: &GridDomain,
    values: &mut [f64],
    rhs: &[f64],
    omega: f64,
    lower: Option<&[f64]>,
) {
    let strides = dom.strides();
    let dim = dom.dim();
    let h2 = dom.h() * dom.h();
    let diag = 2.0 * dim as f64;
    for color in 0..2 {
        for &idx in dom.color_cells(color) {
            let gs = (neighbor_sum(values, idx, &strides, dim) - h2 * rhs[idx]) / diag;
            let old = values[idx];
            let mut new = old + omega * (gs - old);
            if let Some(lo) = lower {
                if new < lo[idx] {
                    new = lo[idx];
                }
            }
            values[idx] = new;
        }
    }
}

/// Discrete Laplacian at an Interior cell from raw values.
#[inline]
pub fn laplacian_raw(dom: &GridDomain, values: &[f64], idx: usize) -> f64 {
    let strides = dom.strides();
    let dim = dom.dim();
    let h2 = dom.h() * dom.h();
    (neighbor_sum(values, idx, &strides, dim) - 2.0 * dim as f64 * values[idx]) / h2
}

/// `max |Δ_h u - rhs|` over Interior cells.
pub fn poisson_residual(dom: &GridDomain, values: &[f64], rhs: &[f64]) -> f64 {
    dom.color_cells(0)
        .iter()
        .chain(dom.color_cells(1))
        .map(|&i| (laplacian_raw(dom, values, i) - rhs[i]).abs())
        .fold(0.0, f64::max)
}

/// `max |min(v - lower, rhs - Δ_h v)|` over Interior cells.
pub fn complementarity_residual(dom: &GridDomain, values: &[f64], rhs: &[f64], lower: &[f64]) -> f64 {
    dom.color_cells(0)
        .iter()
        .chain(dom.color_cells(1))
        .map(|&i| {
            let gap = values[i] - lower[i];
            let slack = rhs[i] - laplacian_raw(dom, values, i);
            gap.min(slack).abs()
        })
        .fold(0.0, f64::max)
}
