//! Blow-up analysis at free-boundary points of obstacle solutions: quadratic
//! rescaling, convergence of dyadic rescalings, nondegeneracy and convexity
//! diagnostics, regular/singular classification and the flatness probe.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector, Matrix3, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};
use crate::free_boundary::{is_on_free_boundary, normal_oscillation_in_ball, FreeBoundaryGeometry};
use crate::grid::{
    distance, dot, gradient, gradient_at, laplacian_at, make_box_domain, norm, CellTag, GridDomain, Point,
    ScalarField, MAX_DIM,
};

/// Thresholds and resolution knobs shared by the analysis routines.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BlowupParams {
    /// Largest regular-fit residual accepted as Regular.
    pub theta_reg: f64,
    /// Largest singular-fit residual accepted as Singular.
    pub theta_sing: f64,
    pub trace_slack: f64,
    pub eigen_slack: f64,
    /// Largest `|v_limit(0)|` accepted as centred.
    pub center_tol: f64,
    /// Reference-grid nodes per unit length.
    pub ref_nodes: usize,
    /// Threshold separating `{v > eps}` from the contact set.
    pub eps: f64,
}

impl Default for BlowupParams {
    fn default() -> Self {
        BlowupParams {
            theta_reg: 0.05,
            theta_sing: 0.05,
            trace_slack: 0.05,
            eigen_slack: 0.05,
            center_tol: 1e-2,
            ref_nodes: 32,
            eps: 0.0,
        }
    }
}

/// Box lattice of side `2 rho` centred at the origin with `m` nodes per
/// radius; only nodes of the closed ball `B̄_rho` carry values after rescaling.
pub fn reference_domain(n: usize, rho: f64, h_ref: f64) -> Result<Arc<GridDomain>> {
    if !(rho > 0.0 && h_ref > 0.0) {
        return Err(LabError::Precondition(format!("reference ball {rho} / spacing {h_ref} must be positive")));
    }
    let m = (rho / h_ref).round().max(2.0);
    make_box_domain(n, 2.0 * rho, rho / m)
}

fn in_ball(p: &Point, rho: f64) -> bool {
    norm(p) <= rho * (1.0 + 1e-12)
}

fn check_resolution(v: &ScalarField, r: f64, rho: f64) -> Result<()> {
    let h = v.domain().h();
    if !(r > 0.0) || r * rho < 4.0 * h * (1.0 - 1e-12) {
        return Err(LabError::UnderResolved {
            radius: r * rho,
            floor: 4.0 * h,
        });
    }
    Ok(())
}

fn shifted(x0: &Point, r: f64, y: &Point) -> Point {
    let mut x = [0.0; MAX_DIM];
    for a in 0..MAX_DIM {
        x[a] = x0[a] + r * y[a];
    }
    x
}

fn rescale_onto(v: &ScalarField, x0: &Point, r: f64, reference: &Arc<GridDomain>, rho: f64) -> Result<ScalarField> {
    let n = v.domain().dim();
    let mut out = ScalarField::unset(reference);
    for idx in 0..reference.len() {
        let y = reference.point(idx);
        if !in_ball(&y, rho) {
            continue;
        }
        let val = v
            .interpolate(&shifted(x0, r, &y))
            .ok_or_else(|| LabError::BallExitsDomain {
                center: x0[..n].to_vec(),
                radius: r * rho,
            })?;
        out.set(idx, val / (r * r));
    }
    Ok(out)
}

/// `v_r(y) = v(x0 + r y) / r²` on the reference ball `B_rho`, by multilinear
/// interpolation. The spacing is rounded so that `rho / h_ref` is an integer.
pub fn rescale(v: &ScalarField, x0: &Point, r: f64, rho: f64, h_ref: f64) -> Result<ScalarField> {
    check_resolution(v, r, rho)?;
    let reference = reference_domain(v.domain().dim(), rho, h_ref)?;
    rescale_onto(v, x0, r, &reference, rho)
}

#[derive(Clone, Debug, Serialize)]
pub struct BlowupSequence {
    pub x0: Vec<f64>,
    pub rho: f64,
    pub h_ref: f64,
    pub requested_levels: usize,
    /// Radii actually resolved, `r0 2^{-k}`.
    pub radii: Vec<f64>,
    #[serde(skip)]
    pub fields: Vec<ScalarField>,
    /// `d_k = ‖v_{r_k} - v_{r_{k+1}}‖_{∞, B_rho}`.
    pub distances: Vec<f64>,
    pub origin_values: Vec<f64>,
    pub origin_gradients: Vec<f64>,
    /// `sup_{B_rho} |v_{r_k}| / rho²`.
    pub sup_ratios: Vec<f64>,
    /// True when the last three distances are nonincreasing.
    pub cauchy: bool,
    pub truncated: bool,
}

impl BlowupSequence {
    pub fn finest(&self) -> &ScalarField {
        self.fields.last().expect("sequence has at least one level")
    }
}

/// Rescalings at `r_k = r0 2^{-k}`, `k = 0..=levels`, on one reference grid
/// of `B_rho`. Levels below the resolution floor `r rho >= 4h` are dropped and
/// the sequence is marked truncated.
pub fn blowup_sequence(
    v: &ScalarField,
    x0: &Point,
    r0: f64,
    levels: usize,
    rho: f64,
    params: &BlowupParams,
) -> Result<BlowupSequence> {
    let dom = v.domain();
    let n = dom.dim();
    if !is_on_free_boundary(v, x0, params.eps) {
        return Err(LabError::NotOnFreeBoundary(x0[..n].to_vec()));
    }
    check_resolution(v, r0, rho)?;
    let reference = reference_domain(n, rho, 1.0 / params.ref_nodes as f64)?;
    let origin = reference
        .locate(&[0.0; MAX_DIM])
        .filter(|&i| norm(&reference.point(i)) < 1e-12)
        .ok_or_else(|| LabError::Precondition("reference grid has no origin node".into()))?;
    let mut seq = BlowupSequence {
        x0: x0[..n].to_vec(),
        rho,
        h_ref: reference.h(),
        requested_levels: levels,
        radii: Vec::new(),
        fields: Vec::new(),
        distances: Vec::new(),
        origin_values: Vec::new(),
        origin_gradients: Vec::new(),
        sup_ratios: Vec::new(),
        cauchy: false,
        truncated: false,
    };
    for k in 0..=levels {
        let r = r0 * 0.5f64.powi(k as i32);
        if check_resolution(v, r, rho).is_err() {
            seq.truncated = true;
            break;
        }
        let field = rescale_onto(v, x0, r, &reference, rho)?;
        if let Some(prev) = seq.fields.last() {
            seq.distances.push(field.max_abs_diff(prev)?);
        }
        seq.origin_values.push(field.value(origin)?);
        seq.origin_gradients
            .push(norm(&gradient_at(&field, origin).ok_or(LabError::MissingValue(origin))?));
        seq.sup_ratios.push(field.max_abs() / (rho * rho));
        seq.radii.push(r);
        seq.fields.push(field);
    }
    let tail = &seq.distances[seq.distances.len().saturating_sub(3)..];
    seq.cauchy = !tail.is_empty() && tail.windows(2).all(|w| w[1] <= w[0] * (1.0 + 1e-9) + 1e-14);
    Ok(seq)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NondegeneracyReport {
    pub x0: Vec<f64>,
    pub radii: Vec<f64>,
    pub maxima: Vec<f64>,
    /// `max_{B̄_r} v / (r² / 2n)`.
    pub ratios: Vec<f64>,
    /// Pass thresholds `1 - 10h/r`.
    pub thresholds: Vec<f64>,
    pub pass: bool,
}

fn ball_values(v: &ScalarField, x0: &Point, r: f64) -> Result<Vec<(usize, f64)>> {
    let dom = v.domain();
    let n = dom.dim();
    let exits = || LabError::BallExitsDomain {
        center: x0[..n].to_vec(),
        radius: r,
    };
    for a in 0..n {
        let (lo, hi) = (dom.origin()[a], dom.origin()[a] + (dom.extent()[a] - 1) as f64 * dom.h());
        if x0[a] - r < lo - 1e-12 || x0[a] + r > hi + 1e-12 {
            return Err(exits());
        }
    }
    dom.cells_in_ball(x0, r)
        .into_iter()
        .map(|idx| v.get(idx).map(|x| (idx, x)).ok_or_else(exits))
        .collect()
}

/// Checks `max_{B̄_r(x0)} v >= r²/(2n)` per radius, with pass slack `10h/r`.
pub fn nondegeneracy_check(v: &ScalarField, x0: &Point, radii: &[f64], eps: f64) -> Result<NondegeneracyReport> {
    let dom = v.domain();
    let n = dom.dim();
    let h = dom.h();
    let reach = (n as f64).sqrt() * h * (1.0 + 1e-9);
    let touches_positive = dom
        .cells_in_ball(x0, reach)
        .into_iter()
        .any(|i| v.get(i).is_some_and(|x| x > eps));
    if !touches_positive {
        return Err(LabError::Precondition(format!(
            "{:?} is not in the closure of the positivity set",
            &x0[..n]
        )));
    }
    let mut report = NondegeneracyReport {
        x0: x0[..n].to_vec(),
        radii: radii.to_vec(),
        maxima: Vec::new(),
        ratios: Vec::new(),
        thresholds: Vec::new(),
        pass: true,
    };
    for &r in radii {
        let max = ball_values(v, x0, r)?
            .into_iter()
            .map(|(_, x)| x)
            .fold(f64::NEG_INFINITY, f64::max);
        let ratio = max / (r * r / (2.0 * n as f64));
        let threshold = 1.0 - 10.0 * h / r;
        report.pass &= ratio >= threshold;
        report.maxima.push(max);
        report.ratios.push(ratio);
        report.thresholds.push(threshold);
    }
    Ok(report)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind")]
pub enum BlowupTag {
    Regular { nu: Vec<f64> },
    Singular { a: Vec<Vec<f64>> },
    Undetermined,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BlowupClassification {
    pub tag: BlowupTag,
    pub residual_regular: f64,
    pub residual_singular: f64,
    /// Best half-space direction, reported whatever the tag.
    pub nu: Vec<f64>,
    /// Trace-one least-squares quadratic, reported whatever the tag.
    pub a: Vec<Vec<f64>>,
    pub trace: f64,
    pub min_eigenvalue: f64,
    /// `C⁰` plus gradient distance to the best half-space model on `B_1`.
    pub flatness: f64,
}

/// `(y · nu)₊² / 2`.
pub fn half_space_model(y: &Point, nu: &Point) -> f64 {
    dot(y, nu).max(0.0).powi(2) / 2.0
}

fn fibonacci_sphere(count: usize) -> Vec<Point> {
    let golden = std::f64::consts::PI * (3.0 - 5f64.sqrt());
    (0..count)
        .map(|k| {
            let z = 1.0 - (2.0 * k as f64 + 1.0) / count as f64;
            let s = (1.0 - z * z).sqrt();
            let t = golden * k as f64;
            [s * t.cos(), s * t.sin(), z]
        })
        .collect()
}

fn tangent_basis(nu: &Point) -> (Point, Point) {
    let helper = if nu[0].abs() < 0.9 { [1.0, 0.0, 0.0] } else { [0.0, 1.0, 0.0] };
    let d = dot(&helper, nu);
    let mut t1 = [helper[0] - d * nu[0], helper[1] - d * nu[1], helper[2] - d * nu[2]];
    let l = norm(&t1);
    t1.iter_mut().for_each(|x| *x /= l);
    let t2 = [
        nu[1] * t1[2] - nu[2] * t1[1],
        nu[2] * t1[0] - nu[0] * t1[2],
        nu[0] * t1[1] - nu[1] * t1[0],
    ];
    (t1, t2)
}

/// Minimizes `f` over unit vectors: sign choice in 1D, a 360-angle sweep
/// refined by golden section in 2D, a 512-point sphere sweep refined by a
/// shrinking tangent-plane pattern search in 3D.
fn minimize_over_directions(n: usize, f: impl Fn(&Point) -> f64) -> (Point, f64) {
    let mut best = ([0.0; MAX_DIM], f64::INFINITY);
    let consider = |nu: Point, best: &mut (Point, f64)| {
        let val = f(&nu);
        if val < best.1 {
            *best = (nu, val);
        }
    };
    match n {
        1 => {
            consider([1.0, 0.0, 0.0], &mut best);
            consider([-1.0, 0.0, 0.0], &mut best);
        }
        2 => {
            let dir = |t: f64| [t.cos(), t.sin(), 0.0];
            let step = std::f64::consts::TAU / 360.0;
            let mut k_best = 0;
            for k in 0..360 {
                let before = best.1;
                consider(dir(k as f64 * step), &mut best);
                if best.1 < before {
                    k_best = k;
                }
            }
            let center = k_best as f64 * step;
            let (mut lo, mut hi) = (center - step, center + step);
            let phi = (5f64.sqrt() - 1.0) / 2.0;
            let (mut m1, mut m2) = (hi - phi * (hi - lo), lo + phi * (hi - lo));
            let (mut f1, mut f2) = (f(&dir(m1)), f(&dir(m2)));
            while hi - lo > 1e-11 {
                if f1 < f2 {
                    hi = m2;
                    m2 = m1;
                    f2 = f1;
                    m1 = hi - phi * (hi - lo);
                    f1 = f(&dir(m1));
                } else {
                    lo = m1;
                    m1 = m2;
                    f1 = f2;
                    m2 = lo + phi * (hi - lo);
                    f2 = f(&dir(m2));
                }
            }
            consider(dir((lo + hi) / 2.0), &mut best);
        }
        _ => {
            for nu in fibonacci_sphere(512) {
                consider(nu, &mut best);
            }
            let mut step = (4.0 * std::f64::consts::PI / 512.0).sqrt();
            while step > 1e-10 {
                let (t1, t2) = tangent_basis(&best.0);
                let before = best.1;
                for (t, s) in [(t1, step), (t1, -step), (t2, step), (t2, -step)] {
                    let mut nu = best.0;
                    for a in 0..3 {
                        nu[a] += s * t[a];
                    }
                    let l = norm(&nu);
                    nu.iter_mut().for_each(|x| *x /= l);
                    consider(nu, &mut best);
                }
                if best.1 >= before {
                    step /= 2.0;
                }
            }
        }
    }
    best
}

struct Samples {
    n: usize,
    points: Vec<Point>,
    values: Vec<f64>,
    gradients: Vec<Point>,
}

fn ball_samples(field: &ScalarField, rho: f64) -> Samples {
    let dom = field.domain();
    let mut s = Samples {
        n: dom.dim(),
        points: Vec::new(),
        values: Vec::new(),
        gradients: Vec::new(),
    };
    for idx in 0..dom.len() {
        let y = dom.point(idx);
        if let (true, Some(x)) = (in_ball(&y, rho), field.get(idx)) {
            s.points.push(y);
            s.values.push(x);
            s.gradients.push(gradient_at(field, idx).unwrap_or([0.0; MAX_DIM]));
        }
    }
    s
}

impl Samples {
    fn c0_distance(&self, nu: &Point) -> f64 {
        self.points
            .iter()
            .zip(&self.values)
            .map(|(y, x)| (x - half_space_model(y, nu)).abs())
            .fold(0.0, f64::max)
    }

    fn gradient_distance(&self, nu: &Point) -> f64 {
        self.points
            .iter()
            .zip(&self.gradients)
            .map(|(y, g)| {
                let t = dot(y, nu).max(0.0);
                let mut d = [0.0; MAX_DIM];
                for a in 0..self.n {
                    d[a] = g[a] - t * nu[a];
                }
                norm(&d)
            })
            .fold(0.0, f64::max)
    }

    fn flatness(&self, nu: &Point) -> f64 {
        self.c0_distance(nu) + self.gradient_distance(nu)
    }
}

fn quadratic_terms(n: usize) -> Vec<(usize, usize)> {
    let mut terms: Vec<(usize, usize)> = (0..n).map(|i| (i, i)).collect();
    for i in 0..n {
        for j in i + 1..n {
            terms.push((i, j));
        }
    }
    terms
}

/// Least-squares `½ yᵀAy` with `tr A = 1`, solved through its KKT system.
fn fit_trace_one_quadratic(s: &Samples) -> Result<Vec<Vec<f64>>> {
    let n = s.n;
    let terms = quadratic_terms(n);
    let m = terms.len();
    let basis = |y: &Point, &(i, j): &(usize, usize)| if i == j { y[i] * y[i] / 2.0 } else { y[i] * y[j] };
    let mut kkt = DMatrix::<f64>::zeros(m + 1, m + 1);
    let mut rhs = DVector::<f64>::zeros(m + 1);
    for (y, x) in s.points.iter().zip(&s.values) {
        let row: Vec<f64> = terms.iter().map(|t| basis(y, t)).collect();
        for p in 0..m {
            rhs[p] += 2.0 * row[p] * x;
            for q in 0..m {
                kkt[(p, q)] += 2.0 * row[p] * row[q];
            }
        }
    }
    for p in 0..n {
        kkt[(p, m)] = 1.0;
        kkt[(m, p)] = 1.0;
    }
    rhs[m] = 1.0;
    let sol = kkt
        .lu()
        .solve(&rhs)
        .ok_or_else(|| LabError::Precondition("quadratic fit is singular: too few samples".into()))?;
    let mut a = vec![vec![0.0; n]; n];
    for (p, &(i, j)) in terms.iter().enumerate() {
        a[i][j] = sol[p];
        a[j][i] = sol[p];
    }
    Ok(a)
}

fn min_eigenvalue(a: &[Vec<f64>]) -> f64 {
    let n = a.len();
    let mut m = Matrix3::<f64>::zeros();
    for i in 0..n {
        for j in 0..n {
            m[(i, j)] = a[i][j];
        }
    }
    // Pad unused dimensions with a large diagonal so they never win.
    for i in n..3 {
        m[(i, i)] = f64::MAX;
    }
    SymmetricEigen::new(m).eigenvalues.min()
}

/// Fits a blow-up candidate on `B_1` against the half-space models and the
/// trace-one homogeneous quadratics and tags it.
pub fn classify(v_limit: &ScalarField, params: &BlowupParams) -> Result<BlowupClassification> {
    let dom = v_limit.domain();
    let n = dom.dim();
    let origin = dom
        .locate(&[0.0; MAX_DIM])
        .filter(|&i| norm(&dom.point(i)) < 1e-9 * dom.h().max(1.0))
        .ok_or_else(|| LabError::Precondition("blow-up field has no node at the origin".into()))?;
    let v0 = v_limit.value(origin)?;
    if v0.abs() > params.center_tol {
        return Err(LabError::Precondition(format!(
            "blow-up field is not centred: |v(0)| = {:e} exceeds {:e}",
            v0.abs(),
            params.center_tol
        )));
    }
    let s = ball_samples(v_limit, 1.0);
    let (nu, residual_regular) = minimize_over_directions(n, |nu| s.c0_distance(nu));
    let a = fit_trace_one_quadratic(&s)?;
    let residual_singular = s
        .points
        .iter()
        .zip(&s.values)
        .map(|(y, x)| {
            let mut q = 0.0;
            for i in 0..n {
                for j in 0..n {
                    q += 0.5 * y[i] * a[i][j] * y[j];
                }
            }
            (x - q).abs()
        })
        .fold(0.0, f64::max);
    let trace: f64 = (0..n).map(|i| a[i][i]).sum();
    let lambda_min = min_eigenvalue(&a);
    let tag = if residual_regular <= params.theta_reg && residual_regular <= residual_singular {
        BlowupTag::Regular { nu: nu[..n].to_vec() }
    } else if residual_singular <= params.theta_sing
        && (trace - 1.0).abs() <= params.trace_slack
        && lambda_min >= -params.eigen_slack
    {
        BlowupTag::Singular { a: a.clone() }
    } else {
        BlowupTag::Undetermined
    };
    Ok(BlowupClassification {
        tag,
        residual_regular,
        residual_singular,
        nu: nu[..n].to_vec(),
        a,
        trace,
        min_eigenvalue: lambda_min,
        flatness: s.flatness(&nu),
    })
}

/// Rescales at `r` onto `B_1` and classifies.
pub fn classify_at(v: &ScalarField, x0: &Point, r: f64, params: &BlowupParams) -> Result<BlowupClassification> {
    let n = v.domain().dim();
    if !is_on_free_boundary(v, x0, params.eps) {
        return Err(LabError::NotOnFreeBoundary(x0[..n].to_vec()));
    }
    classify(&rescale(v, x0, r, 1.0, 1.0 / params.ref_nodes as f64)?, params)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConvexityDiagnostics {
    pub radii: Vec<f64>,
    /// `max(0, -min D²_ee v)` over the ball and the direction set.
    pub omega: Vec<f64>,
    /// Integer lattice steps, one per sampled direction.
    pub directions: Vec<Vec<i32>>,
    /// Per radius, the minimum second difference along each direction.
    pub minima: Vec<Vec<f64>>,
}

impl ConvexityDiagnostics {
    /// True if `omega` does not grow as the radius shrinks.
    pub fn is_nonincreasing(&self, slack: f64) -> bool {
        let mut order: Vec<usize> = (0..self.radii.len()).collect();
        order.sort_by(|&i, &j| self.radii[j].total_cmp(&self.radii[i]));
        order.windows(2).all(|w| self.omega[w[1]] <= self.omega[w[0]] + slack)
    }
}

/// Axis steps plus `(1, ±1)` and `(2, ±1)` in every coordinate plane.
pub fn convexity_directions(n: usize) -> Vec<[i32; MAX_DIM]> {
    let mut dirs = Vec::new();
    for a in 0..n {
        let mut z = [0; MAX_DIM];
        z[a] = 1;
        dirs.push(z);
    }
    for i in 0..n {
        for j in i + 1..n {
            for (p, q) in [(1, 1), (1, -1), (2, 1), (2, -1)] {
                let mut z = [0; MAX_DIM];
                z[i] = p;
                z[j] = q;
                dirs.push(z);
            }
        }
    }
    dirs
}

/// Lattice second difference quotients `(f(x+z h) - 2f(x) + f(x-z h)) / (|z|h)²`
/// minimized over `B_r(x0)` for each direction in [`convexity_directions`].
pub fn convexity_deficit(v: &ScalarField, x0: &Point, radii: &[f64]) -> Result<ConvexityDiagnostics> {
    let dom = v.domain();
    let n = dom.dim();
    let h = dom.h();
    let dirs = convexity_directions(n);
    let mut diag = ConvexityDiagnostics {
        radii: radii.to_vec(),
        omega: Vec::new(),
        directions: dirs.iter().map(|z| z[..n].to_vec()).collect(),
        minima: Vec::new(),
    };
    for &r in radii {
        if r < 8.0 * h * (1.0 - 1e-12) {
            return Err(LabError::UnderResolved { radius: r, floor: 8.0 * h });
        }
        let cells = ball_values(v, x0, r)?;
        let mut minima = vec![f64::INFINITY; dirs.len()];
        for (idx, c) in cells {
            for (k, z) in dirs.iter().enumerate() {
                let plus = dom.offset(idx, [z[0] as isize, z[1] as isize, z[2] as isize]);
                let minus = dom.offset(idx, [-z[0] as isize, -z[1] as isize, -z[2] as isize]);
                if let (Some(p), Some(m)) = (plus.and_then(|i| v.get(i)), minus.and_then(|i| v.get(i))) {
                    let len2 = z.iter().map(|&s| (s * s) as f64).sum::<f64>() * h * h;
                    minima[k] = minima[k].min((p - 2.0 * c + m) / len2);
                }
            }
        }
        let worst = minima.iter().copied().fold(f64::INFINITY, f64::min);
        diag.omega.push(if worst.is_finite() { (-worst).max(0.0) } else { 0.0 });
        diag.minima.push(minima);
    }
    Ok(diag)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImprovementSequence {
    pub m0: f64,
    pub c1: f64,
    pub n: usize,
    pub k_max: usize,
    pub values: Vec<f64>,
    pub strictly_decreasing: bool,
    /// First `k` with `M_k < 1e-3`, if reached by `k_max`.
    pub first_below: Option<usize>,
}

impl ImprovementSequence {
    pub fn last(&self) -> f64 {
        *self.values.last().expect("sequence starts at M0")
    }
}

/// Iterates `M_{k+1} = M_k (1 - c1 M_k^{2n-2})` from `M0`.
pub fn iterate_improvement_map(m0: f64, c1: f64, n: usize, k_max: usize) -> Result<ImprovementSequence> {
    let p = 2 * n as i32 - 2;
    let start = c1 * m0.powi(p);
    if !(m0 > 0.0 && start > 0.0 && start < 1.0) {
        return Err(LabError::Precondition(format!(
            "improvement map needs M0 > 0 and 0 < c1 M0^(2n-2) < 1, got {start}"
        )));
    }
    let mut values = Vec::with_capacity(k_max + 1);
    values.push(m0);
    let mut m = m0;
    for _ in 0..k_max {
        m *= 1.0 - c1 * m.powi(p);
        values.push(m);
    }
    Ok(ImprovementSequence {
        m0,
        c1,
        n,
        k_max,
        strictly_decreasing: values.windows(2).all(|w| w[1] < w[0]),
        first_below: values.iter().position(|&m| m < 1e-3),
        values,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpsRegularity {
    pub x0: Vec<f64>,
    pub r: f64,
    pub eps: f64,
    pub nu: Vec<f64>,
    pub c0_distance: f64,
    pub gradient_distance: f64,
    pub flatness: f64,
    pub verdict: bool,
}

/// Rescales at `r` onto `B_2` and measures the smallest `C⁰ + gradient`
/// distance to a half-space model. The gradient is the central-difference
/// gradient on the source grid, interpolated and scaled by `1/r`.
pub fn eps_regularity_probe(
    v: &ScalarField,
    x0: &Point,
    r: f64,
    eps: f64,
    params: &BlowupParams,
) -> Result<EpsRegularity> {
    let dom = v.domain();
    let n = dom.dim();
    let rho = 2.0;
    check_resolution(v, r, rho)?;
    let reference = reference_domain(n, rho, 1.0 / params.ref_nodes as f64)?;
    let scaled = rescale_onto(v, x0, r, &reference, rho)?;
    let grad = gradient(v);
    let components: Vec<ScalarField> = (0..n)
        .map(|a| {
            let mut c = ScalarField::unset(dom);
            for idx in dom.active_cells() {
                if let Some(g) = grad.get(idx) {
                    c.set(idx, g[a]);
                }
            }
            c
        })
        .collect();
    let mut s = Samples {
        n,
        points: Vec::new(),
        values: Vec::new(),
        gradients: Vec::new(),
    };
    for idx in 0..reference.len() {
        let Some(val) = scaled.get(idx) else { continue };
        let y = reference.point(idx);
        let x = shifted(x0, r, &y);
        let mut g = [0.0; MAX_DIM];
        for a in 0..n {
            g[a] = components[a].interpolate(&x).ok_or_else(|| LabError::BallExitsDomain {
                center: x0[..n].to_vec(),
                radius: r * rho,
            })? / r;
        }
        s.points.push(y);
        s.values.push(val);
        s.gradients.push(g);
    }
    let (nu, flatness) = minimize_over_directions(n, |nu| s.flatness(nu));
    Ok(EpsRegularity {
        x0: x0[..n].to_vec(),
        r,
        eps,
        nu: nu[..n].to_vec(),
        c0_distance: s.c0_distance(&nu),
        gradient_distance: s.gradient_distance(&nu),
        flatness,
        verdict: flatness < eps,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConcavityCheck {
    pub x0: Vec<f64>,
    pub cell: usize,
    pub laplacian: f64,
    pub tol: f64,
    pub pass: bool,
}

/// `Δ_h φ <= tol` at the contact node nearest to the free-boundary point `x0`.
pub fn concavity_check(phi: &ScalarField, v: &ScalarField, x0: &Point, eps: f64, tol: f64) -> Result<ConcavityCheck> {
    let dom = v.domain();
    let n = dom.dim();
    let reach = (n as f64).sqrt() * dom.h() * (1.0 + 1e-9);
    let cell = dom
        .cells_in_ball(x0, reach)
        .into_iter()
        .filter(|&i| dom.tag(i) == CellTag::Interior && v.get(i).is_some_and(|x| x <= eps))
        .min_by(|&i, &j| distance(&dom.point(i), x0).total_cmp(&distance(&dom.point(j), x0)))
        .ok_or_else(|| LabError::NotOnFreeBoundary(x0[..n].to_vec()))?;
    let lap = laplacian_at(phi, cell)?;
    Ok(ConcavityCheck {
        x0: x0[..n].to_vec(),
        cell,
        laplacian: lap,
        tol,
        pass: lap <= tol,
    })
}

/// Every `⌈L/20⌉`-th vertex along the free-boundary chains.
pub fn sample_free_boundary(geometry: &FreeBoundaryGeometry) -> Vec<Point> {
    let order: Vec<usize> = if geometry.chains.iter().map(Vec::len).sum::<usize>() == geometry.vertices.len() {
        geometry.chains.iter().flatten().copied().collect()
    } else {
        (0..geometry.vertices.len()).collect()
    };
    let step = order.len().div_ceil(20).max(1);
    // an edge nearly tangent to the free boundary locates its crossing poorly,
    // so each pick moves forward to the first vertex whose edge is within 60°
    // of the normal
    let conditioned = |k: usize| geometry.normals[k][geometry.axes[k]].abs() >= 0.5;
    (0..order.len())
        .step_by(step)
        .map(|start| {
            let k = (start..(start + step).min(order.len()))
                .map(|i| order[i])
                .find(|&k| conditioned(k))
                .unwrap_or(order[start]);
            geometry.vertices[k]
        })
        .collect()
}

/// Radii and probe settings for [`analyze_point`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AnalysisSettings {
    /// Radii in units of `h` for the nondegeneracy and convexity tables.
    pub radii_cells: Vec<f64>,
    pub classify_radius: f64,
    pub flatness_radius: f64,
    pub flatness_eps: f64,
}

impl Default for AnalysisSettings {
    fn default() -> Self {
        AnalysisSettings {
            radii_cells: vec![32.0, 16.0, 8.0],
            classify_radius: 0.05,
            flatness_radius: 0.025,
            flatness_eps: 0.2,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PointReport {
    pub x0: Vec<f64>,
    pub classification: Option<BlowupClassification>,
    pub nondegeneracy: Option<NondegeneracyReport>,
    pub convexity: Option<ConvexityDiagnostics>,
    pub flatness: Option<EpsRegularity>,
    /// Normal oscillation of the free boundary in `B_r(x0)` when the flatness
    /// verdict holds.
    pub normal_oscillation: Option<f64>,
    /// Messages from analyses that could not run at this point.
    pub errors: Vec<String>,
}

/// Runs every per-point diagnostic; failures are recorded, not propagated.
pub fn analyze_point(
    v: &ScalarField,
    geometry: &FreeBoundaryGeometry,
    x0: &Point,
    settings: &AnalysisSettings,
    params: &BlowupParams,
) -> PointReport {
    let n = v.domain().dim();
    let h = v.domain().h();
    let radii: Vec<f64> = settings.radii_cells.iter().map(|c| c * h).collect();
    let mut errors = Vec::new();
    let mut keep = |label: &str, e: LabError| errors.push(format!("{label}: {e}"));
    let classification = classify_at(v, x0, settings.classify_radius, params)
        .map_err(|e| keep("classify", e))
        .ok();
    let nondegeneracy = nondegeneracy_check(v, x0, &radii, params.eps)
        .map_err(|e| keep("nondegeneracy", e))
        .ok();
    let convexity = convexity_deficit(v, x0, &radii).map_err(|e| keep("convexity", e)).ok();
    let flatness = eps_regularity_probe(v, x0, settings.flatness_radius, settings.flatness_eps, params)
        .map_err(|e| keep("flatness", e))
        .ok();
    let normal_oscillation = flatness
        .as_ref()
        .filter(|f| f.verdict)
        .and_then(|_| normal_oscillation_in_ball(geometry, x0, settings.flatness_radius));
    PointReport {
        x0: x0[..n].to_vec(),
        classification,
        nondegeneracy,
        convexity,
        flatness,
        normal_oscillation,
        errors,
    }
}
