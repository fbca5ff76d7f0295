//! Poisson solves with Dirichlet data and the classical facts about harmonic
//! and superharmonic functions: mean values, Harnack's inequality and
//! interior derivative estimates.

use nalgebra::{Matrix3, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};
use crate::grid::{distance, laplacian_at, CellTag, Point, ScalarField, MAX_DIM};
use crate::relax;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PoissonOptions {
    pub tol: f64,
    pub max_iters: usize,
    /// Sweeps between residual evaluations.
    pub check_every: usize,
    /// Record `(iteration, residual)` at every check.
    pub trace: bool,
}

impl Default for PoissonOptions {
    fn default() -> Self {
        PoissonOptions {
            tol: 1e-8,
            max_iters: 200_000,
            check_every: 10,
            trace: false,
        }
    }
}

#[derive(Clone, Debug)]
pub struct PoissonSolution {
    pub field: ScalarField,
    pub iterations: usize,
    pub residual: f64,
    pub trace: Vec<(usize, f64)>,
}

/// Solve `Δ_h f = rhs` on Interior cells with `f = g` on every other
/// non-exterior cell, by red-black SOR with residual-based stopping.
pub fn solve_poisson_dirichlet(
    rhs: &ScalarField,
    g: &ScalarField,
    opts: &PoissonOptions,
) -> Result<PoissonSolution> {
    solve_poisson_from(rhs, g, None, opts)
}

/// As [`solve_poisson_dirichlet`], starting from `initial` on Interior cells.
pub fn solve_poisson_from(
    rhs: &ScalarField,
    g: &ScalarField,
    initial: Option<&ScalarField>,
    opts: &PoissonOptions,
) -> Result<PoissonSolution> {
    if !(opts.tol > 0.0) {
        return Err(LabError::Precondition("tolerance must be positive".into()));
    }
    if !rhs.same_domain(g) {
        return Err(LabError::DomainMismatch);
    }
    let dom = rhs.domain().clone();
    let mut values = vec![0.0; dom.len()];
    let mut rhs_raw = vec![0.0; dom.len()];
    for idx in dom.active_cells() {
        if dom.tag(idx) == CellTag::Interior {
            rhs_raw[idx] = rhs.value(idx)?;
            values[idx] = initial.and_then(|f| f.get(idx)).unwrap_or(0.0);
        } else {
            values[idx] = g.value(idx)?;
        }
    }
    let omega = relax::optimal_omega(&dom);
    let check = opts.check_every.max(1);
    let mut trace = Vec::new();
    let mut residual = relax::poisson_residual(&dom, &values, &rhs_raw);
    let mut iterations = 0;
    while residual > opts.tol {
        if iterations >= opts.max_iters {
            return Err(LabError::NotConverged {
                iterations,
                residual,
            });
        }
        let batch = check.min(opts.max_iters - iterations);
        for _ in 0..batch {
            relax::sweep(&dom, &mut values, &rhs_raw, omega, None);
        }
        iterations += batch;
        residual = relax::poisson_residual(&dom, &values, &rhs_raw);
        if opts.trace {
            trace.push((iterations, residual));
        }
    }
    Ok(PoissonSolution {
        field: ScalarField::from_values(&dom, values)?,
        iterations,
        residual,
        trace,
    })
}

/// Harmonic extension of boundary data `g` into the Interior cells.
pub fn harmonic_extension(g: &ScalarField, opts: &PoissonOptions) -> Result<PoissonSolution> {
    let zero = ScalarField::constant(g.domain(), 0.0);
    solve_poisson_dirichlet(&zero, g, opts)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeanValueProfile {
    pub center: Vec<f64>,
    pub radii: Vec<f64>,
    pub sphere_averages: Vec<f64>,
    pub ball_averages: Vec<f64>,
}

impl MeanValueProfile {
    /// Both profiles nonincreasing in `r`, up to `slack`.
    pub fn is_nonincreasing(&self, slack: f64) -> bool {
        let mono = |xs: &[f64]| xs.windows(2).all(|w| w[1] <= w[0] + slack);
        mono(&self.sphere_averages) && mono(&self.ball_averages)
    }
}

/// Unit directions sampling the sphere `S^{n-1}` with equal weights.
pub(crate) fn sphere_samples(n: usize, min_count: usize) -> Vec<Point> {
    match n {
        1 => vec![[1.0, 0.0, 0.0], [-1.0, 0.0, 0.0]],
        2 => {
            let m = min_count.max(32);
            (0..m)
                .map(|k| {
                    let t = 2.0 * std::f64::consts::PI * k as f64 / m as f64;
                    [t.cos(), t.sin(), 0.0]
                })
                .collect()
        }
        _ => {
            // midpoint rule in z (uniform area) times trapezoid in azimuth
            let rings = ((min_count as f64).sqrt().ceil() as usize).max(8);
            let per_ring = (2 * rings).max(16);
            let mut out = Vec::with_capacity(rings * per_ring);
            for i in 0..rings {
                let z = -1.0 + (2.0 * i as f64 + 1.0) / rings as f64;
                let s = (1.0 - z * z).sqrt();
                for k in 0..per_ring {
                    let t = 2.0 * std::f64::consts::PI * k as f64 / per_ring as f64;
                    out.push([s * t.cos(), s * t.sin(), z]);
                }
            }
            out
        }
    }
}

fn ball_error(center: &Point, n: usize, radius: f64) -> LabError {
    LabError::BallExitsDomain {
        center: center[..n].to_vec(),
        radius,
    }
}

/// Sphere averages by interpolated sampling and ball averages by
/// cell-center quadrature, at each radius.
pub fn mean_value_profile(f: &ScalarField, center: &Point, radii: &[f64]) -> Result<MeanValueProfile> {
    let dom = f.domain();
    let n = dom.dim();
    let h = dom.h();
    if radii.is_empty() || radii.windows(2).any(|w| !(w[1] > w[0])) || !(radii[0] > 0.0) {
        return Err(LabError::Precondition(
            "radii must be positive and strictly increasing".into(),
        ));
    }
    let mut sphere_averages = Vec::with_capacity(radii.len());
    let mut ball_averages = Vec::with_capacity(radii.len());
    for &r in radii {
        let circ = 2.0 * std::f64::consts::PI * r / h;
        let want = match n {
            3 => (circ * circ / 2.0).ceil() as usize,
            _ => circ.ceil() as usize,
        };
        let dirs = sphere_samples(n, want.max(32));
        let mut acc = 0.0;
        for d in &dirs {
            let mut p = *center;
            for a in 0..n {
                p[a] += r * d[a];
            }
            acc += f.interpolate(&p).ok_or_else(|| ball_error(center, n, r))?;
        }
        sphere_averages.push(acc / dirs.len() as f64);

        let cells = dom.cells_in_ball(center, r);
        if cells.is_empty() {
            return Err(ball_error(center, n, r));
        }
        let mut acc = 0.0;
        for &idx in &cells {
            acc += f.get(idx).ok_or_else(|| ball_error(center, n, r))?;
        }
        ball_averages.push(acc / cells.len() as f64);
    }
    Ok(MeanValueProfile {
        center: center[..n].to_vec(),
        radii: radii.to_vec(),
        sphere_averages,
        ball_averages,
    })
}

/// Harnack factors for `|x1 - x0| = r` inside `B_R(x0)` in dimension `n`:
/// `f(x0) >= lower * f(x1)` and `f(x0) <= upper * f(x1)`.
///
/// These are the sharp Poisson-kernel constants `(1 - t)^{n-1} / (1 + t)` and
/// `(1 + t)^{n-1} / (1 - t)` with `t = r / R`.
pub fn harnack_factors(n: usize, r: f64, big_r: f64) -> (f64, f64) {
    let t = r / big_r;
    let e = (n as i32 - 1).max(0);
    let lower = (1.0 - t).powi(e) / (1.0 + t);
    let upper = (1.0 + t).powi(e) / (1.0 - t);
    (lower, upper)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HarnackCheck {
    pub x0: Vec<f64>,
    pub x1: Vec<f64>,
    pub big_r: f64,
    pub r: f64,
    pub f_x0: f64,
    pub f_x1: f64,
    pub lower_factor: f64,
    pub upper_factor: f64,
    pub slack: f64,
    pub pass: bool,
}

/// Check both Harnack inequalities between `x0` and `x1` for a nonnegative,
/// numerically harmonic field on `B_R(x0)`.
///
/// `harmonic_tol` bounds `|Δ_h f|` on the ball (tested against ten times it);
/// `slack` is the absolute allowance added to both inequalities.
pub fn harnack_check(
    f: &ScalarField,
    x0: &Point,
    x1: &Point,
    big_r: f64,
    harmonic_tol: f64,
    slack: f64,
) -> Result<HarnackCheck> {
    let dom = f.domain();
    let n = dom.dim();
    let r = distance(x0, x1);
    if !(r < big_r) {
        return Err(LabError::Precondition(format!(
            "x1 at distance {r} is not inside B_R with R = {big_r}"
        )));
    }
    for idx in dom.cells_in_ball(x0, big_r) {
        let p = dom.point(idx);
        if distance(&p, x0) >= big_r {
            continue;
        }
        if dom.tag(idx) != CellTag::Interior {
            return Err(ball_error(x0, n, big_r));
        }
        let v = f.value(idx)?;
        if v < 0.0 {
            return Err(LabError::Negative {
                point: p[..n].to_vec(),
                value: v,
            });
        }
        let lap = laplacian_at(f, idx)?;
        if lap.abs() > 10.0 * harmonic_tol {
            return Err(LabError::Precondition(format!(
                "field is not harmonic at {:?} (laplacian {lap:e})",
                &p[..n]
            )));
        }
    }
    let f_x0 = f.interpolate(x0).ok_or_else(|| ball_error(x0, n, big_r))?;
    let f_x1 = f.interpolate(x1).ok_or_else(|| ball_error(x0, n, big_r))?;
    let (lower_factor, upper_factor) = harnack_factors(n, r, big_r);
    let pass = f_x1 * upper_factor + slack >= f_x0 && f_x0 + slack >= lower_factor * f_x1;
    Ok(HarnackCheck {
        x0: x0[..n].to_vec(),
        x1: x1[..n].to_vec(),
        big_r,
        r,
        f_x0,
        f_x1,
        lower_factor,
        upper_factor,
        slack,
        pass,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DerivativeEstimate {
    pub order: usize,
    pub r: f64,
    pub derivative: f64,
    pub sup: f64,
    pub ratio: f64,
    pub bound: f64,
}

impl DerivativeEstimate {
    pub fn pass(&self) -> bool {
        self.ratio <= self.bound
    }
}

/// Frozen constant of the discrete interior estimate `|D^k f| r^k <= C sup |f|`.
pub fn derivative_constant(n: usize, k: usize) -> f64 {
    (2 * n * k) as f64
}

/// `|D^k f(x)| r^k / sup_{B_r(x)} |f|` with `r` the distance from `x` to the
/// nearest cell where `f` is not numerically harmonic (or not Interior).
pub fn derivative_estimate_check(
    f: &ScalarField,
    cell: usize,
    k: usize,
    harmonic_tol: f64,
) -> Result<DerivativeEstimate> {
    let dom = f.domain();
    let n = dom.dim();
    let h = dom.h();
    if !(1..=2).contains(&k) {
        return Err(LabError::Precondition(format!("derivative order {k} not in {{1, 2}}")));
    }
    let x = dom.point(cell);
    let mut r = f64::INFINITY;
    for idx in 0..dom.len() {
        let bad = if dom.tag(idx) == CellTag::Interior {
            laplacian_at(f, idx).map(|l| l.abs() > harmonic_tol).unwrap_or(true)
        } else {
            true
        };
        if bad {
            r = r.min(distance(&dom.point(idx), &x));
        }
    }
    if r < 3.0 * h {
        return Err(LabError::UnderResolved {
            radius: r,
            floor: 3.0 * h,
        });
    }
    let val = |shift: [isize; MAX_DIM]| -> Result<f64> {
        let j = dom.offset(cell, shift).ok_or(LabError::MissingValue(cell))?;
        f.value(j)
    };
    let derivative = if k == 1 {
        let mut g2 = 0.0;
        for a in 0..n {
            let mut up = [0isize; MAX_DIM];
            up[a] = 1;
            let mut dn = [0isize; MAX_DIM];
            dn[a] = -1;
            let d = (val(up)? - val(dn)?) / (2.0 * h);
            g2 += d * d;
        }
        g2.sqrt()
    } else {
        let c = f.value(cell)?;
        let mut hess = Matrix3::<f64>::zeros();
        for a in 0..n {
            let mut up = [0isize; MAX_DIM];
            up[a] = 1;
            let mut dn = [0isize; MAX_DIM];
            dn[a] = -1;
            hess[(a, a)] = (val(up)? - 2.0 * c + val(dn)?) / (h * h);
            for b in (a + 1)..n {
                let mut pp = [0isize; MAX_DIM];
                pp[a] = 1;
                pp[b] = 1;
                let mut mm = [0isize; MAX_DIM];
                mm[a] = -1;
                mm[b] = -1;
                let mut pm = [0isize; MAX_DIM];
                pm[a] = 1;
                pm[b] = -1;
                let mut mp = [0isize; MAX_DIM];
                mp[a] = -1;
                mp[b] = 1;
                let m = (val(pp)? - val(pm)? - val(mp)? + val(mm)?) / (4.0 * h * h);
                hess[(a, b)] = m;
                hess[(b, a)] = m;
            }
        }
        SymmetricEigen::new(hess)
            .eigenvalues
            .iter()
            .fold(0.0f64, |m, e| m.max(e.abs()))
    };
    let mut sup = 0.0f64;
    for idx in dom.cells_in_ball(&x, r) {
        if distance(&dom.point(idx), &x) < r {
            sup = sup.max(f.value(idx)?.abs());
        }
    }
    let ratio = if sup > 0.0 {
        derivative * r.powi(k as i32) / sup
    } else {
        0.0
    };
    Ok(DerivativeEstimate {
        order: k,
        r,
        derivative,
        sup,
        ratio,
        bound: derivative_constant(n, k),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{make_ball_domain, make_box_domain, point, CellTag};

    fn boundary(domain: &std::sync::Arc<crate::grid::GridDomain>, f: impl Fn(&Point) -> f64) -> ScalarField {
        ScalarField::from_fn_on(domain, &[CellTag::Dirichlet, CellTag::Signorini], f)
    }

    #[test]
    fn affine_data_gives_affine_solution() {
        let d = make_box_domain(2, 2.0, 1.0 / 16.0).unwrap();
        let tol = 1e-9;
        let sol = harmonic_extension(&boundary(&d, |p| p[0]), &PoissonOptions { tol, ..Default::default() }).unwrap();
        for idx in d.interior_cells() {
            assert!((sol.field.get(idx).unwrap() - d.point(idx)[0]).abs() <= tol);
        }
        // residual contract, recomputed
        let lap = crate::grid::laplacian(&sol.field).unwrap();
        assert!(d.interior_cells().all(|i| lap.get(i).unwrap().abs() <= tol));
    }

    #[test]
    fn radial_poisson_on_disk() {
        let h = 1.0 / 32.0;
        let d = make_ball_domain(2, 1.0, h, false).unwrap();
        let rhs = ScalarField::constant(&d, 1.0);
        let g = boundary(&d, |_| 0.0);
        let sol = solve_poisson_dirichlet(&rhs, &g, &PoissonOptions::default()).unwrap();
        let err = d
            .interior_cells()
            .map(|i| {
                let p = d.point(i);
                (sol.field.get(i).unwrap() - (p[0] * p[0] + p[1] * p[1] - 1.0) / 4.0).abs()
            })
            .fold(0.0, f64::max);
        assert!(err <= 5.0 * h, "err {err}");
    }

    #[test]
    fn harmonic_polynomial_recovered() {
        let h = 1.0 / 32.0;
        let d = make_ball_domain(2, 1.0, h, false).unwrap();
        let q = |p: &Point| p[0] * p[0] - p[1] * p[1];
        let sol = harmonic_extension(&boundary(&d, q), &PoissonOptions::default()).unwrap();
        let err = d
            .interior_cells()
            .map(|i| (sol.field.get(i).unwrap() - q(&d.point(i))).abs())
            .fold(0.0, f64::max);
        assert!(err <= 5.0 * h);
    }

    #[test]
    fn non_convergence_is_reported() {
        let d = make_box_domain(2, 2.0, 1.0 / 16.0).unwrap();
        let opts = PoissonOptions { max_iters: 1, check_every: 1, ..Default::default() };
        let err = harmonic_extension(&boundary(&d, |p| p[0] * p[1] + 1.0), &opts).unwrap_err();
        assert!(matches!(err, LabError::NotConverged { .. }));
    }

    #[test]
    fn discrete_maximum_principle() {
        let d = make_box_domain(2, 2.0, 1.0 / 16.0).unwrap();
        let g = boundary(&d, |p| (3.0 * p[0]).sin() + p[1] * p[1]);
        let tol = 1e-9;
        let sol = harmonic_extension(&g, &PoissonOptions { tol, ..Default::default() }).unwrap();
        let (bmin, bmax) = d
            .cells_with_tag(CellTag::Dirichlet)
            .map(|i| g.get(i).unwrap())
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
        for i in d.interior_cells() {
            let v = sol.field.get(i).unwrap();
            assert!(v <= bmax + tol && v >= bmin - tol);
        }
    }

    #[test]
    fn mean_values_of_harmonic_field() {
        let d = make_box_domain(2, 2.0, 1.0 / 64.0).unwrap();
        let f = ScalarField::from_fn(&d, |p| p[0] * p[0] - p[1] * p[1]);
        let prof = mean_value_profile(&f, &point(&[0.0, 0.0]), &[0.1, 0.3, 0.6]).unwrap();
        for v in prof.sphere_averages.iter().chain(&prof.ball_averages) {
            assert!(v.abs() < 1e-5, "{v}");
        }
    }

    #[test]
    fn mean_values_of_superharmonic_field() {
        let h = 1.0 / 128.0;
        let d = make_box_domain(2, 2.0, h).unwrap();
        let f = ScalarField::from_fn(&d, |p| -(p[0] * p[0] + p[1] * p[1]));
        let radii = [0.1, 0.2, 0.4, 0.8];
        let prof = mean_value_profile(&f, &point(&[0.0, 0.0]), &radii).unwrap();
        for (r, b) in radii.iter().zip(&prof.ball_averages) {
            // cell-center quadrature of the disk: O(h r) error
            assert!((b + r * r / 2.0).abs() <= 2.0 * h * r, "r={r} b={b}");
        }
        assert!(prof.ball_averages.windows(2).all(|w| w[1] < w[0]));
        assert!(prof.is_nonincreasing(10.0 * h * h));
        assert!(mean_value_profile(&f, &point(&[0.0, 0.0]), &[0.2, 0.1]).is_err());
        assert!(mean_value_profile(&f, &point(&[0.9, 0.0]), &[0.2]).is_err());
    }

    #[test]
    fn harnack_affine_example() {
        let d = make_box_domain(2, 2.5, 1.0 / 32.0).unwrap();
        let f = ScalarField::from_fn(&d, |p| p[0] + 2.0);
        let c = harnack_check(&f, &point(&[0.0, 0.0]), &point(&[0.5, 0.0]), 1.0, 1e-9, 1e-8).unwrap();
        assert!(c.pass);
        assert!((c.upper_factor - 3.0).abs() < 1e-12);
        assert!((c.lower_factor - 1.0 / 3.0).abs() < 1e-12);
        assert!((c.f_x1 * c.upper_factor - 7.5).abs() < 1e-12);

        let f = ScalarField::constant(&d, 5.0);
        assert!(harnack_check(&f, &point(&[0.0, 0.0]), &point(&[0.2, 0.7]), 1.0, 1e-9, 1e-8).unwrap().pass);

        let f = ScalarField::from_fn(&d, |p| p[0]);
        let err = harnack_check(&f, &point(&[0.0, 0.0]), &point(&[0.5, 0.0]), 1.0, 1e-9, 1e-8).unwrap_err();
        assert!(matches!(err, LabError::Negative { .. }));
    }

    #[test]
    fn harnack_factor_bounds() {
        for n in 1..=3 {
            for k in 0..20 {
                let r = k as f64 / 20.0;
                let (lo, up) = harnack_factors(n, r, 1.0);
                assert!(lo <= 1.0 && up >= 1.0);
                if k == 0 {
                    assert_eq!((lo, up), (1.0, 1.0));
                } else if n > 1 {
                    assert!(lo < 1.0 && up > 1.0);
                }
            }
        }
        // two-dimensional factors (1 -/+ t) / (1 +/- t)
        let (lo, up) = harnack_factors(2, 0.5, 1.0);
        assert!((lo - 1.0 / 3.0).abs() < 1e-15 && (up - 3.0).abs() < 1e-15);
    }

    #[test]
    fn harnack_factors_are_attained_by_poisson_kernel_in_3d() {
        // P(x) = (1 - |x|^2) / |x - e1|^3 is positive and harmonic in the unit ball.
        let kernel = |x: f64| (1.0 - x * x) / (1.0 - x).abs().powi(3);
        for t in [0.1, 0.3, 0.6] {
            let (lo, _) = harnack_factors(3, t, 1.0);
            let (f0, f1) = (kernel(0.0), kernel(t));
            assert!((f0 - lo * f1).abs() < 1e-12, "lower bound is sharp");
            // a larger lower factor such as 1 - t would be violated here
            assert!(f0 < (1.0 - t) * f1);
        }
    }

    #[test]
    fn derivative_estimates() {
        let d = make_box_domain(2, 1.0, 1.0 / 64.0).unwrap();
        let center = d.locate(&point(&[0.0, 0.0])).unwrap();
        let f = ScalarField::from_fn(&d, |p| p[0]);
        let e = derivative_estimate_check(&f, center, 1, 1e-9).unwrap();
        assert!((e.r - 0.5).abs() < 1e-12);
        assert!((e.ratio - 0.5 / e.sup).abs() < 1e-9 && e.pass());

        let f = ScalarField::constant(&d, 3.0);
        assert_eq!(derivative_estimate_check(&f, center, 1, 1e-9).unwrap().ratio, 0.0);

        let d = make_box_domain(2, 2.0, 1.0 / 64.0).unwrap();
        let center = d.locate(&point(&[0.0, 0.0])).unwrap();
        let f = ScalarField::from_fn(&d, |p| p[0] * p[0] - p[1] * p[1]);
        let e = derivative_estimate_check(&f, center, 2, 1e-9).unwrap();
        assert!((e.derivative - 2.0).abs() < 1e-9);
        assert!((e.ratio - 2.0).abs() < 0.1 && e.pass());

        let edge = d.locate(&point(&[0.97, 0.0])).unwrap();
        assert!(matches!(
            derivative_estimate_check(&f, edge, 1, 1e-9),
            Err(LabError::UnderResolved { .. })
        ));
    }
}
