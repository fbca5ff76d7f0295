//! The classical obstacle problem, solved in the form `v = u - φ`:
//! `v >= 0`, `c - Δ_h v >= 0`, `v (c - Δ_h v) = 0` with `c = -Δ_h φ`
//! (`c = 1` in the normalized case), by projected red-black SOR.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};
use crate::free_boundary::{extract_free_boundary_with, FreeBoundaryGeometry, NearestIndex, VertexRule};
use crate::grid::{distance, gradient_at, laplacian_at, norm, CellTag, GridDomain, Point, ScalarField};
use crate::harmonic::{solve_poisson_dirichlet, PoissonOptions};
use crate::relax;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RhsMode {
    /// `Δφ = -1` is assumed and the right-hand side is exactly 1.
    Normalized,
    /// Right-hand side `-Δ_h φ` computed from the obstacle.
    General,
}

#[derive(Clone, Debug)]
pub struct ObstacleSpec {
    pub obstacle: ScalarField,
    /// `u` on every non-Interior active cell.
    pub boundary: ScalarField,
    pub mode: RhsMode,
    pub tol: f64,
    pub max_iters: usize,
    /// Contact threshold; `max(tol, h²/100)` when absent.
    pub contact_eps: Option<f64>,
}

/// `-|x|²/(2n)`, whose discrete Laplacian is exactly -1.
pub fn normalized_obstacle(domain: &Arc<GridDomain>) -> ScalarField {
    let n = domain.dim() as f64;
    ScalarField::from_fn(domain, |p| -(p[0] * p[0] + p[1] * p[1] + p[2] * p[2]) / (2.0 * n))
}

impl ObstacleSpec {
    pub fn new(obstacle: ScalarField, boundary: ScalarField, mode: RhsMode) -> ObstacleSpec {
        ObstacleSpec {
            obstacle,
            boundary,
            mode,
            tol: 1e-9,
            max_iters: 1_000_000,
            contact_eps: None,
        }
    }

    /// Normalized instance: `φ = -|x|²/(2n)` and boundary values `u = φ + v_b`.
    pub fn normalized(domain: &Arc<GridDomain>, v_boundary: impl Fn(&Point) -> f64) -> ObstacleSpec {
        let obstacle = normalized_obstacle(domain);
        let mut boundary = ScalarField::unset(domain);
        for idx in domain.active_cells() {
            if domain.tag(idx) != CellTag::Interior {
                let p = domain.point(idx);
                boundary.set(idx, obstacle.get(idx).unwrap_or(0.0) + v_boundary(&p));
            }
        }
        ObstacleSpec::new(obstacle, boundary, RhsMode::Normalized)
    }

    pub fn with_tol(mut self, tol: f64) -> ObstacleSpec {
        self.tol = tol;
        self
    }

    pub fn domain(&self) -> &Arc<GridDomain> {
        self.obstacle.domain()
    }

    pub fn contact_eps(&self) -> f64 {
        let h = self.domain().h();
        self.contact_eps.unwrap_or(self.tol.max(h * h / 100.0))
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.tol > 0.0) {
            return Err(LabError::Precondition("tol must be positive".into()));
        }
        if !self.obstacle.same_domain(&self.boundary) {
            return Err(LabError::DomainMismatch);
        }
        let dom = self.domain();
        for idx in dom.active_cells() {
            let phi = self.obstacle.value(idx)?;
            if dom.tag(idx) != CellTag::Interior {
                let g = self.boundary.value(idx)?;
                if !(phi < g) {
                    let p = dom.point(idx);
                    return Err(LabError::Precondition(format!(
                        "obstacle {phi} not below boundary value {g} at {:?}",
                        &p[..dom.dim()]
                    )));
                }
            }
        }
        Ok(())
    }

    /// Working right-hand side `c` per cell (Interior cells only).
    pub fn rhs(&self) -> Result<Vec<f64>> {
        let dom = self.domain();
        let mut c = vec![0.0; dom.len()];
        for idx in dom.interior_cells() {
            c[idx] = match self.mode {
                RhsMode::Normalized => 1.0,
                RhsMode::General => -laplacian_at(&self.obstacle, idx)?,
            };
        }
        Ok(c)
    }
}

#[derive(Clone, Debug)]
pub struct ObstacleSolution {
    pub spec: ObstacleSpec,
    pub u: ScalarField,
    pub v: ScalarField,
    /// `v <= contact_eps`, per cell.
    pub contact: Vec<bool>,
    pub contact_eps: f64,
    pub lcp_residual: f64,
    pub energy: f64,
    pub iterations: usize,
    pub trace: Vec<(usize, f64)>,
}

impl ObstacleSolution {
    pub fn domain(&self) -> &Arc<GridDomain> {
        self.u.domain()
    }

    pub fn contact_cells(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.contact.len()).filter(|&i| self.contact[i])
    }

    pub fn free_boundary(&self) -> Result<FreeBoundaryGeometry> {
        extract_free_boundary_with(&self.v, self.contact_eps, VertexRule::Quadratic)
    }
}

/// Discrete Dirichlet energy `h^{n-2} Σ_edges (u_j - u_i)²` over edges with
/// both ends set.
pub fn dirichlet_energy(u: &ScalarField) -> f64 {
    let dom = u.domain();
    let h = dom.h();
    let mut acc = 0.0;
    for idx in dom.active_cells() {
        let Some(a) = u.get(idx) else { continue };
        for axis in 0..dom.dim() {
            if let Some(b) = dom.neighbor(idx, axis, 1).and_then(|j| u.get(j)) {
                acc += (b - a) * (b - a);
            }
        }
    }
    acc * h.powi(dom.dim() as i32 - 2)
}

pub fn solve_obstacle(spec: &ObstacleSpec) -> Result<ObstacleSolution> {
    solve_obstacle_from(spec, None)
}

/// Solve starting from `initial` (a `u` field) instead of the clamped
/// harmonic extension of the boundary data.
pub fn solve_obstacle_from(spec: &ObstacleSpec, initial: Option<&ScalarField>) -> Result<ObstacleSolution> {
    spec.validate()?;
    let dom = Arc::clone(spec.domain());
    let rhs = spec.rhs()?;
    let phi = &spec.obstacle;

    let start = match initial {
        Some(u0) => u0.clone(),
        None => {
            let zero = ScalarField::constant(&dom, 0.0);
            let opts = PoissonOptions {
                tol: 1e-4,
                ..Default::default()
            };
            solve_poisson_dirichlet(&zero, &spec.boundary, &opts)?.field
        }
    };
    let mut v = vec![0.0; dom.len()];
    for idx in dom.active_cells() {
        let p = phi.value(idx)?;
        v[idx] = if dom.tag(idx) == CellTag::Interior {
            (start.get(idx).unwrap_or(p) - p).max(0.0)
        } else {
            spec.boundary.value(idx)? - p
        };
    }
    let lower = vec![0.0; dom.len()];
    let omega = relax::optimal_omega(&dom);
    let check = 10;
    let mut iterations = 0;
    let mut trace = Vec::new();
    let mut residual = relax::complementarity_residual(&dom, &v, &rhs, &lower);
    while residual > spec.tol {
        if iterations >= spec.max_iters {
            return Err(LabError::NotConverged {
                iterations,
                residual,
            });
        }
        let batch = check.min(spec.max_iters - iterations);
        for _ in 0..batch {
            relax::sweep(&dom, &mut v, &rhs, omega, Some(&lower));
        }
        iterations += batch;
        residual = relax::complementarity_residual(&dom, &v, &rhs, &lower);
        trace.push((iterations, residual));
    }

    let v = ScalarField::from_values(&dom, v)?;
    let u = v.combine(1.0, phi, 1.0)?;
    let eps = spec.contact_eps();
    let contact = (0..dom.len())
        .map(|i| v.get(i).is_some_and(|x| x <= eps))
        .collect();
    Ok(ObstacleSolution {
        spec: spec.clone(),
        energy: dirichlet_energy(&u),
        u,
        v,
        contact,
        contact_eps: eps,
        lcp_residual: residual,
        iterations,
        trace,
    })
}

fn smoothstep(t: f64) -> f64 {
    let t = t.clamp(0.0, 1.0);
    t * t * (3.0 - 2.0 * t)
}

/// Raise the obstacle to the solution on a neighbourhood of `k_cells` inside
/// `{v > 0}`: `φ' = φ + λ v` with `λ = 1` on `K` and a smooth falloff. The
/// solution of the new problem is unchanged, and its contact set contains `K`.
pub fn make_pathological_obstacle(sol: &ObstacleSolution, k_cells: &[usize]) -> Result<ObstacleSpec> {
    if k_cells.is_empty() {
        return Ok(sol.spec.clone());
    }
    let dom = sol.domain();
    let n = dom.dim();
    for &k in k_cells {
        let touches = std::iter::once(k)
            .chain((0..n).flat_map(|a| [dom.neighbor(k, a, -1), dom.neighbor(k, a, 1)]).flatten())
            .any(|j| sol.contact[j]);
        if dom.tag(k) != CellTag::Interior || touches {
            let p = dom.point(k);
            return Err(LabError::Precondition(format!(
                "cell at {:?} is not strictly inside the positivity set",
                &p[..n]
            )));
        }
    }
    let k_points: Vec<Point> = k_cells.iter().map(|&k| dom.point(k)).collect();
    let k_index = NearestIndex::new(&k_points, 4.0 * dom.h());
    // keep the falloff away from the contact set and from the boundary
    let mut gap = f64::INFINITY;
    for idx in dom.active_cells() {
        if sol.contact[idx] || dom.tag(idx) != CellTag::Interior {
            if let Some((_, d)) = k_index.nearest(&dom.point(idx)) {
                gap = gap.min(d);
            }
        }
    }
    let delta = gap / 2.0;
    let mut obstacle = sol.spec.obstacle.clone();
    for idx in dom.active_cells() {
        let (_, d) = k_index.nearest(&dom.point(idx)).expect("nonempty");
        let lambda = 1.0 - smoothstep(d / delta);
        if lambda > 0.0 {
            obstacle.set(idx, sol.spec.obstacle.value(idx)? + lambda * sol.v.value(idx)?);
        }
    }
    let mut spec = sol.spec.clone();
    spec.obstacle = obstacle;
    spec.mode = RhsMode::General;
    Ok(spec)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GrowthFit {
    pub constant: f64,
    /// Cell attaining the maximum, if any cell contributed.
    pub argmax: Option<usize>,
}

/// `max v / d²` (or `|∇_h v| / d` when `gradient`) over Interior cells of
/// `{v > eps}`, with `d` the distance to the free-boundary vertex set.
pub fn fit_growth(v: &ScalarField, geometry: &FreeBoundaryGeometry, eps: f64, gradient: bool) -> Result<GrowthFit> {
    if geometry.is_empty() {
        return Err(LabError::EmptySet("free boundary is empty".into()));
    }
    let dom = v.domain();
    let index = geometry.nearest_index();
    let mut best = GrowthFit {
        constant: 0.0,
        argmax: None,
    };
    for idx in dom.interior_cells() {
        let val = v.value(idx)?;
        if val <= eps {
            continue;
        }
        let (_, d) = index.nearest(&dom.point(idx)).expect("nonempty");
        if d <= 0.0 {
            continue;
        }
        let ratio = if gradient {
            norm(&gradient_at(v, idx).ok_or(LabError::MissingValue(idx))?) / d
        } else {
            val / (d * d)
        };
        if best.argmax.is_none() || ratio > best.constant {
            best = GrowthFit {
                constant: ratio,
                argmax: Some(idx),
            };
        }
    }
    Ok(best)
}

/// Quadratic growth constant `max v(x) / dist(x, ∂{v>0})²`.
pub fn growth_upper_bound(sol: &ObstacleSolution) -> Result<GrowthFit> {
    fit_growth(&sol.v, &sol.free_boundary()?, sol.contact_eps, false)
}

/// Linear gradient growth constant `max |∇_h v(x)| / dist(x, ∂{v>0})`.
pub fn gradient_growth_bound(sol: &ObstacleSolution) -> Result<GrowthFit> {
    fit_growth(&sol.v, &sol.free_boundary()?, sol.contact_eps, true)
}

/// Distance from `p` to the nearest contact cell.
pub fn distance_to_contact(sol: &ObstacleSolution, p: &Point) -> Option<f64> {
    let dom = sol.domain();
    sol.contact_cells()
        .map(|i| distance(&dom.point(i), p))
        .min_by(f64::total_cmp)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{laplacian, make_ball_domain, make_box_domain, point};
    use crate::harmonic::{harmonic_extension, mean_value_profile};
    use crate::oracles;

    fn one_d(h: f64) -> ObstacleSolution {
        let d = make_box_domain(1, 2.0, h).unwrap();
        solve_obstacle(&ObstacleSpec::normalized(&d, |_| 0.125).with_tol(1e-11)).unwrap()
    }

    fn lcp_residual(sol: &ObstacleSolution) -> f64 {
        let lap = laplacian(&sol.v).unwrap();
        sol.domain()
            .interior_cells()
            .map(|i| sol.v.get(i).unwrap().min(1.0 - lap.get(i).unwrap()).abs())
            .fold(0.0, f64::max)
    }

    #[test]
    fn one_d_closed_form() {
        let h = 1.0 / 64.0;
        let sol = one_d(h);
        let dom = sol.domain();
        let err = dom
            .active_cells()
            .map(|i| (sol.v.get(i).unwrap() - oracles::obstacle_1d_v(dom.point(i)[0], 0.125)).abs())
            .fold(0.0, f64::max);
        assert!(err <= 5.0 * h * h, "{err}");
        let contact: Vec<f64> = sol.contact_cells().map(|i| dom.point(i)[0]).collect();
        assert!((contact[0] + 0.5).abs() <= 3.0 * h);
        assert!((contact.last().unwrap() - 0.5).abs() <= 3.0 * h);
        assert!(lcp_residual(&sol) <= 1e-11);
        assert!(sol.lcp_residual <= 1e-11);
    }

    #[test]
    fn cutting_the_corner() {
        let h = 1.0 / 64.0;
        let sol = one_d(h);
        let dom = sol.domain();
        let last = sol.contact_cells().last().unwrap();
        let v = |i: usize| sol.v.get(i).unwrap();
        let left = (v(last) - v(last - 1)) / h;
        let right = (v(last + 1) - v(last)) / h;
        assert!((right - left).abs() <= 5.0 * h);
        assert!(dom.point(last)[0] > 0.0);
    }

    #[test]
    fn radial_free_boundary() {
        let h = 1.0 / 32.0;
        let d = make_ball_domain(2, 1.0, h, false).unwrap();
        let spec = ObstacleSpec::normalized(&d, |_| oracles::RADIAL_G0).with_tol(1e-9);
        let sol = solve_obstacle(&spec).unwrap();
        let geom = sol.free_boundary().unwrap();
        let dev = geom.vertices.iter().map(|p| (norm(p) - 0.5).abs()).fold(0.0, f64::max);
        assert!(dev <= 2.0 * h, "{dev}");
        assert!(lcp_residual(&sol) <= 1e-9);

        // superharmonicity and mean values of u
        let lap = laplacian(&sol.u).unwrap();
        assert!(d.interior_cells().all(|i| lap.get(i).unwrap() <= 1e-9));
        let prof = mean_value_profile(&sol.u, &point(&[0.2, 0.1]), &[0.1, 0.2, 0.4]).unwrap();
        assert!(prof.is_nonincreasing(h * h));
    }

    #[test]
    fn unconstrained_when_data_is_large() {
        let h = 1.0 / 16.0;
        let d = make_box_domain(2, 2.0, h).unwrap();
        let obstacle = ScalarField::constant(&d, -10.0);
        let boundary = ScalarField::from_fn_on(&d, &[CellTag::Dirichlet], |p| p[0] + p[1] * 0.5);
        let spec = ObstacleSpec::new(obstacle, boundary.clone(), RhsMode::General);
        let sol = solve_obstacle(&spec).unwrap();
        assert_eq!(sol.contact_cells().count(), 0);
        let harm = harmonic_extension(&boundary, &PoissonOptions { tol: 1e-11, ..Default::default() }).unwrap();
        assert!(sol.u.max_abs_diff(&harm.field).unwrap() <= 1e-9);
    }

    #[test]
    fn incompatible_data_is_rejected() {
        let d = make_box_domain(1, 2.0, 0.25).unwrap();
        let spec = ObstacleSpec::normalized(&d, |_| 0.0);
        assert!(matches!(solve_obstacle(&spec), Err(LabError::Precondition(_))));
        let mut spec = ObstacleSpec::normalized(&d, |_| 0.1);
        spec.max_iters = 0;
        spec.tol = 1e-14;
        assert!(matches!(solve_obstacle(&spec), Err(LabError::NotConverged { .. })));
    }

    #[test]
    fn minimizes_energy_among_feasible_fields() {
        let h = 1.0 / 32.0;
        let d = make_ball_domain(2, 1.0, h, false).unwrap();
        let spec = ObstacleSpec::normalized(&d, |_| oracles::RADIAL_G0).with_tol(1e-10);
        let sol = solve_obstacle(&spec).unwrap();
        let harm = harmonic_extension(&spec.boundary, &PoissonOptions::default()).unwrap();
        let mut competitor = harm.field.clone();
        for idx in d.active_cells() {
            competitor.set(idx, competitor.get(idx).unwrap().max(spec.obstacle.get(idx).unwrap()));
        }
        assert!(sol.energy <= dirichlet_energy(&competitor) + 1e-10);
        // small feasible perturbations of the solution do not help either
        let mut bumped = sol.u.clone();
        let c = d.locate(&point(&[0.7, 0.0])).unwrap();
        bumped.set(c, bumped.get(c).unwrap() + 1e-3);
        assert!(sol.energy <= dirichlet_energy(&bumped) + 1e-10);
    }

    #[test]
    fn unique_from_different_starts() {
        let h = 1.0 / 32.0;
        let d = make_ball_domain(2, 1.0, h, false).unwrap();
        let spec = ObstacleSpec::normalized(&d, |_| oracles::RADIAL_G0).with_tol(1e-10);
        let a = solve_obstacle(&spec).unwrap();
        let high = ScalarField::constant(&d, 1.0);
        let b = solve_obstacle_from(&spec, Some(&high)).unwrap();
        assert!(a.u.max_abs_diff(&b.u).unwrap() <= 10.0 * spec.tol);
    }

    #[test]
    fn pathological_obstacle_keeps_solution() {
        let h = 1.0 / 32.0;
        let sol = one_d(h);
        let dom = sol.domain();
        let k = dom.locate(&point(&[0.75])).unwrap();
        let spec = make_pathological_obstacle(&sol, &[k]).unwrap();
        let again = solve_obstacle(&spec).unwrap();
        assert!(again.u.max_abs_diff(&sol.u).unwrap() <= 10.0 * spec.tol);
        assert!(again.contact[k]);
        assert!(!sol.contact[k]);

        let same = make_pathological_obstacle(&sol, &[]).unwrap();
        assert_eq!(same.obstacle, sol.spec.obstacle);

        let c = dom.locate(&point(&[0.0])).unwrap();
        assert!(make_pathological_obstacle(&sol, &[c]).is_err());
    }

    #[test]
    fn growth_constants_one_d() {
        let sol = one_d(1.0 / 64.0);
        let up = growth_upper_bound(&sol).unwrap().constant;
        assert!((0.4..=0.6).contains(&up), "{up}");
        let grad = gradient_growth_bound(&sol).unwrap().constant;
        assert!((0.9..=1.1).contains(&grad), "{grad}");

        let zero = ScalarField::constant(sol.domain(), 0.0);
        let geom = sol.free_boundary().unwrap();
        assert_eq!(fit_growth(&zero, &geom, sol.contact_eps, false).unwrap().constant, 0.0);
        assert_eq!(fit_growth(&zero, &geom, sol.contact_eps, true).unwrap().constant, 0.0);
    }

    #[test]
    fn growth_constants_radial_refine_stably() {
        let fit = |h: f64| {
            let d = make_ball_domain(2, 1.0, h, false).unwrap();
            let sol = solve_obstacle(&ObstacleSpec::normalized(&d, |_| oracles::RADIAL_G0)).unwrap();
            (growth_upper_bound(&sol).unwrap().constant, gradient_growth_bound(&sol).unwrap().constant)
        };
        let (a1, b1) = fit(1.0 / 16.0);
        let (a2, b2) = fit(1.0 / 32.0);
        assert!(a1.max(a2) / a1.min(a2) <= 2.0);
        assert!(b1.max(b2) / b1.min(b2) <= 2.0);
    }
}
