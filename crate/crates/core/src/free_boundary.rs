//! Geometry of the free boundary `∂{v > 0}`: edge-crossing vertices, chains
//! (2D, marching squares), normals, signed distance, Hausdorff distances,
//! zero-set measure and normal oscillation.

use std::collections::HashMap;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};
use crate::grid::{distance, dot, gradient_at, norm, GridDomain, Point, ScalarField, MAX_DIM};
use crate::io::fmt_real;

/// Exact nearest-point queries over a fixed point set, bucketed on a uniform
/// grid. Ties go to the smallest point index.
#[derive(Clone, Debug)]
pub struct NearestIndex {
    points: Vec<Point>,
    lo: Point,
    cell: f64,
    dims: [usize; MAX_DIM],
    buckets: Vec<Vec<usize>>,
}

impl NearestIndex {
    pub fn new(points: &[Point], cell: f64) -> NearestIndex {
        let mut lo = [f64::INFINITY; MAX_DIM];
        let mut hi = [f64::NEG_INFINITY; MAX_DIM];
        for p in points {
            for a in 0..MAX_DIM {
                lo[a] = lo[a].min(p[a]);
                hi[a] = hi[a].max(p[a]);
            }
        }
        if points.is_empty() {
            lo = [0.0; MAX_DIM];
            hi = [0.0; MAX_DIM];
        }
        let cell = if cell > 0.0 { cell } else { 1.0 };
        let mut dims = [1usize; MAX_DIM];
        for a in 0..MAX_DIM {
            dims[a] = (((hi[a] - lo[a]) / cell).floor() as usize + 1).min(4096);
        }
        let mut buckets = vec![Vec::new(); dims[0] * dims[1] * dims[2]];
        let mut index = NearestIndex {
            points: points.to_vec(),
            lo,
            cell,
            dims,
            buckets: Vec::new(),
        };
        for (k, p) in points.iter().enumerate() {
            let b = index.bucket_of(p);
            buckets[index.flat(b)].push(k);
        }
        index.buckets = buckets;
        index
    }

    pub fn points(&self) -> &[Point] {
        &self.points
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    fn bucket_of(&self, p: &Point) -> [isize; MAX_DIM] {
        let mut b = [0isize; MAX_DIM];
        for a in 0..MAX_DIM {
            let t = ((p[a] - self.lo[a]) / self.cell).floor();
            b[a] = (t.max(-1.0e9).min(1.0e9)) as isize;
        }
        b
    }

    fn flat(&self, b: [isize; MAX_DIM]) -> usize {
        let c = |a: usize| b[a].clamp(0, self.dims[a] as isize - 1) as usize;
        c(0) + self.dims[0] * (c(1) + self.dims[1] * c(2))
    }

    /// Nearest point as `(index, distance)`.
    pub fn nearest(&self, q: &Point) -> Option<(usize, f64)> {
        if self.points.is_empty() {
            return None;
        }
        let b = self.bucket_of(q);
        let mut best: Option<(usize, f64)> = None;
        let max_ring = self.dims.iter().max().copied().unwrap_or(1) as isize
            + b.iter().map(|x| x.abs()).max().unwrap_or(0)
            + 1;
        let mut ring = 0isize;
        loop {
            self.scan_ring(q, b, ring, &mut best);
            if let Some((_, d)) = best {
                // everything outside the scanned cube is at least `ring * cell` away
                if d <= ring as f64 * self.cell {
                    break;
                }
            }
            ring += 1;
            if ring > max_ring {
                break;
            }
        }
        best
    }

    /// Indices of all points within `r` of `q`, ascending.
    pub fn within(&self, q: &Point, r: f64) -> Vec<usize> {
        let mut out = Vec::new();
        if self.points.is_empty() {
            return out;
        }
        let mut lo = q.to_owned();
        let mut hi = q.to_owned();
        for a in 0..MAX_DIM {
            lo[a] -= r;
            hi[a] += r;
        }
        let (bl, bh) = (self.bucket_of(&lo), self.bucket_of(&hi));
        let range = |a: usize| (bl[a].max(0), bh[a].min(self.dims[a] as isize - 1));
        let (x0, x1) = range(0);
        let (y0, y1) = range(1);
        let (z0, z1) = range(2);
        for k in z0..=z1 {
            for j in y0..=y1 {
                for i in x0..=x1 {
                    for &idx in &self.buckets[self.flat([i, j, k])] {
                        if distance(q, &self.points[idx]) <= r {
                            out.push(idx);
                        }
                    }
                }
            }
        }
        out.sort_unstable();
        out
    }

    fn scan_ring(&self, q: &Point, b: [isize; MAX_DIM], ring: isize, best: &mut Option<(usize, f64)>) {
        let range = |a: usize| -> (isize, isize) {
            let lo = (b[a] - ring).max(0);
            let hi = (b[a] + ring).min(self.dims[a] as isize - 1);
            (lo, hi)
        };
        let (x0, x1) = range(0);
        let (y0, y1) = range(1);
        let (z0, z1) = range(2);
        for k in z0..=z1 {
            for j in y0..=y1 {
                // off the j/k faces only the two x-end cells belong to the shell
                let face = (j - b[1]).abs() == ring || (k - b[2]).abs() == ring;
                let ends = [b[0] - ring, b[0] + ring];
                let cells: Vec<isize> = if face {
                    (x0..=x1).collect()
                } else {
                    ends.iter().copied().filter(|i| (x0..=x1).contains(i)).collect()
                };
                for i in cells {
                    for &idx in &self.buckets[self.flat([i, j, k])] {
                        let d = distance(q, &self.points[idx]);
                        let better = match *best {
                            None => true,
                            Some((bi, bd)) => d < bd || (d == bd && idx < bi),
                        };
                        if better {
                            *best = Some((idx, d));
                        }
                    }
                }
            }
        }
    }
}

#[derive(Clone, Debug)]
pub struct FreeBoundaryGeometry {
    pub eps: f64,
    /// Cells with `v > eps` that have an axis neighbor with `v <= eps`.
    pub interface_cells: Vec<usize>,
    pub vertices: Vec<Point>,
    /// Lattice axis of the edge carrying each vertex.
    pub axes: Vec<usize>,
    /// Unit normals per vertex, pointing into `{v > eps}`.
    pub normals: Vec<Point>,
    /// Ordered vertex chains; only 2D produces chains longer than one.
    pub chains: Vec<Vec<usize>>,
    /// Distance to the vertex set, positive on `{v > eps}`.
    pub signed_distance: ScalarField,
}

impl FreeBoundaryGeometry {
    pub fn is_empty(&self) -> bool {
        self.vertices.is_empty()
    }

    pub fn nearest_index(&self) -> NearestIndex {
        NearestIndex::new(&self.vertices, index_cell(self.signed_distance.domain()))
    }

    /// Nearest vertex to `p` as `(vertex index, distance)`.
    pub fn nearest_vertex(&self, p: &Point) -> Option<(usize, f64)> {
        self.nearest_index().nearest(p)
    }

    pub fn chain_of(&self) -> Vec<usize> {
        let mut out = vec![0; self.vertices.len()];
        for (c, chain) in self.chains.iter().enumerate() {
            for &k in chain {
                out[k] = c;
            }
        }
        out
    }

    /// CSV with columns `vertex,x1..xn,nu1..nun,chain`.
    pub fn write_polyline(&self, path: &Path) -> Result<()> {
        let n = self.signed_distance.domain().dim();
        let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
        let xs: Vec<String> = (1..=n).map(|a| format!("x{a}")).collect();
        let nus: Vec<String> = (1..=n).map(|a| format!("nu{a}")).collect();
        writeln!(out, "vertex,{},{},chain", xs.join(","), nus.join(","))?;
        let chain = self.chain_of();
        for (k, (p, nu)) in self.vertices.iter().zip(&self.normals).enumerate() {
            let mut cols = vec![k.to_string()];
            cols.extend(p[..n].iter().map(|x| fmt_real(*x)));
            cols.extend(nu[..n].iter().map(|x| fmt_real(*x)));
            cols.push(chain[k].to_string());
            writeln!(out, "{}", cols.join(","))?;
        }
        out.flush()?;
        Ok(())
    }
}

/// Bucket size for distance queries over a whole domain: small buckets make
/// far-away queries walk many empty rings.
fn index_cell(dom: &GridDomain) -> f64 {
    (2.0 * dom.h()).max(dom.side_length() / 64.0)
}

/// Where a vertex is placed on a sign-changing edge.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum VertexRule {
    /// Zero of the linear interpolant of `v` along the edge.
    Linear,
    /// For fields vanishing quadratically (obstacle problems): zero of the
    /// line through `√(2v)` at the positive end and the next node beyond it
    /// on the same axis, falling back to `Linear` when that node is missing
    /// or not positive.
    Quadratic,
}

/// Edge crossings of `{v > eps}`. Vertices sit at the zero of the linear
/// interpolant of `v` along the edge, clamped into the edge.
pub fn extract_free_boundary(v: &ScalarField, eps: f64) -> Result<FreeBoundaryGeometry> {
    extract_free_boundary_with(v, eps, VertexRule::Linear)
}

pub fn extract_free_boundary_with(v: &ScalarField, eps: f64, rule: VertexRule) -> Result<FreeBoundaryGeometry> {
    let dom = v.domain();
    let n = dom.dim();
    let h = dom.h();
    let pos = |x: f64| x > eps;

    let mut vertices = Vec::new();
    let mut axes = Vec::new();
    let mut normals = Vec::new();
    let mut key: HashMap<(usize, usize), usize> = HashMap::new();
    let mut interface = vec![false; dom.len()];
    for idx in dom.active_cells() {
        let Some(vi) = v.get(idx) else { continue };
        if !vi.is_finite() {
            return Err(LabError::Precondition("field has non-finite values".into()));
        }
        for a in 0..n {
            let Some(j) = dom.neighbor(idx, a, 1) else { continue };
            let Some(vj) = v.get(j) else { continue };
            if pos(vi) == pos(vj) {
                continue;
            }
            if pos(vi) {
                interface[idx] = true;
            } else {
                interface[j] = true;
            }
            let linear = if vj != vi { (-vi / (vj - vi)).clamp(0.0, 1.0) } else { 0.5 };
            let t = match rule {
                VertexRule::Linear => linear,
                VertexRule::Quadratic => {
                    // positive end, the node beyond it, and the direction back to the edge
                    let (p, beyond, back) = if pos(vj) {
                        (vj, dom.neighbor(j, a, 1).and_then(|k| v.get(k)), -1.0)
                    } else {
                        (vi, dom.neighbor(idx, a, -1).and_then(|k| v.get(k)), 1.0)
                    };
                    match beyond {
                        Some(q) if pos(q) && q > p => {
                            let (wp, wq) = ((2.0 * p).sqrt(), (2.0 * q).sqrt());
                            let s = wp / (wq - wp);
                            let from_i = if back < 0.0 { 1.0 - s } else { s };
                            from_i.clamp(0.0, 1.0)
                        }
                        _ => linear,
                    }
                }
            };
            let pi = dom.point(idx);
            let mut p = pi;
            p[a] += t * h;
            let gi = gradient_at(v, idx).unwrap_or([0.0; MAX_DIM]);
            let gj = gradient_at(v, j).unwrap_or([0.0; MAX_DIM]);
            let mut g = [0.0; MAX_DIM];
            for b in 0..n {
                g[b] = (1.0 - t) * gi[b] + t * gj[b];
            }
            let into_pos = if pos(vj) { 1.0 } else { -1.0 };
            let mut gn = norm(&g);
            if gn < 1e-14 {
                g = [0.0; MAX_DIM];
                g[a] = into_pos;
                gn = 1.0;
            }
            for b in 0..n {
                g[b] /= gn;
            }
            key.insert((idx, a), vertices.len());
            vertices.push(p);
            axes.push(a);
            normals.push(g);
        }
    }

    let chains = if n == 2 {
        marching_squares(v, eps, &key, vertices.len())
    } else {
        (0..vertices.len()).map(|k| vec![k]).collect()
    };

    let index = NearestIndex::new(&vertices, index_cell(dom));
    let mut signed_distance = ScalarField::unset(dom);
    if !vertices.is_empty() {
        for idx in dom.active_cells() {
            if let Some(val) = v.get(idx) {
                let (_, d) = index.nearest(&dom.point(idx)).expect("nonempty");
                signed_distance.set(idx, if pos(val) { d } else { -d });
            }
        }
    }

    Ok(FreeBoundaryGeometry {
        eps,
        interface_cells: (0..dom.len()).filter(|&i| interface[i]).collect(),
        vertices,
        axes,
        normals,
        chains,
        signed_distance,
    })
}

fn marching_squares(
    v: &ScalarField,
    eps: f64,
    key: &HashMap<(usize, usize), usize>,
    count: usize,
) -> Vec<Vec<usize>> {
    let dom = v.domain();
    let [s0, s1, _] = dom.strides();
    let ext = dom.extent();
    let mut adj: Vec<Vec<usize>> = vec![Vec::new(); count];
    for idx in 0..dom.len() {
        let mi = dom.multi_index(idx);
        if mi[0] + 1 >= ext[0] || mi[1] + 1 >= ext[1] {
            continue;
        }
        let corners = [idx, idx + s0, idx + s0 + s1, idx + s1];
        let vals: Option<Vec<f64>> = corners.iter().map(|&c| v.get(c)).collect();
        let Some(vals) = vals else { continue };
        let p: Vec<bool> = vals.iter().map(|&x| x > eps).collect();
        // edges: bottom, right, top, left
        let edges = [(idx, 0), (idx + s0, 1), (idx + s1, 0), (idx, 1)];
        let ids: Vec<Option<usize>> = edges.iter().map(|e| key.get(e).copied()).collect();
        let mut link = |a: usize, b: usize| {
            if let (Some(x), Some(y)) = (ids[a], ids[b]) {
                adj[x].push(y);
                adj[y].push(x);
            }
        };
        let crossing: Vec<usize> = (0..4).filter(|&e| ids[e].is_some()).collect();
        match crossing.len() {
            2 => link(crossing[0], crossing[1]),
            4 => {
                let center = vals.iter().sum::<f64>() / 4.0 > eps;
                // corner k touches edges (k+3)%4 and k; cut off corners unlike the center
                for k in 0..4 {
                    if p[k] != center {
                        link((k + 3) % 4, k);
                    }
                }
            }
            _ => {}
        }
    }
    for a in adj.iter_mut() {
        a.sort_unstable();
        a.dedup();
    }
    let mut seen = vec![false; count];
    let mut chains = Vec::new();
    let walk = |start: usize, seen: &mut Vec<bool>| -> Vec<usize> {
        let mut chain = vec![start];
        seen[start] = true;
        let mut cur = start;
        while let Some(&next) = adj[cur].iter().find(|&&w| !seen[w]) {
            seen[next] = true;
            chain.push(next);
            cur = next;
        }
        chain
    };
    for s in 0..count {
        if !seen[s] && adj[s].len() != 2 {
            chains.push(walk(s, &mut seen));
        }
    }
    for s in 0..count {
        if !seen[s] {
            chains.push(walk(s, &mut seen));
        }
    }
    chains
}

/// Zero-set sample: nodes with `|v| <= eps` plus the interface vertices.
pub fn zero_set_sample(v: &ScalarField, geometry: Option<&FreeBoundaryGeometry>, eps: f64) -> Vec<Point> {
    let dom = v.domain();
    let mut out: Vec<Point> = dom
        .active_cells()
        .filter(|&i| v.get(i).is_some_and(|x| x.abs() <= eps))
        .map(|i| dom.point(i))
        .collect();
    if let Some(g) = geometry {
        out.extend_from_slice(&g.vertices);
    }
    out
}

/// Symmetric Hausdorff distance between two samples clipped to the closed
/// ball `B̄_R(center)`.
pub fn hausdorff_distance(a: &[Point], b: &[Point], center: &Point, radius: f64) -> Result<f64> {
    let clip = |s: &[Point]| -> Vec<Point> {
        s.iter()
            .filter(|p| distance(p, center) <= radius * (1.0 + 1e-12))
            .copied()
            .collect()
    };
    let (a, b) = (clip(a), clip(b));
    if a.is_empty() || b.is_empty() {
        return Err(LabError::EmptySet("point set empty after clipping".into()));
    }
    let cell = (radius / 32.0).max(1e-9);
    let one_sided = |from: &[Point], to: &[Point]| {
        let index = NearestIndex::new(to, cell);
        from.iter()
            .map(|p| index.nearest(p).map(|(_, d)| d).unwrap_or(f64::INFINITY))
            .fold(0.0, f64::max)
    };
    Ok(one_sided(&a, &b).max(one_sided(&b, &a)))
}

/// True if both `{v <= eps}` and `{v > eps}` have a node within `√n h` of `x0`.
pub fn is_on_free_boundary(v: &ScalarField, x0: &Point, eps: f64) -> bool {
    let dom = v.domain();
    let reach = (dom.dim() as f64).sqrt() * dom.h() * (1.0 + 1e-9);
    let (mut zero, mut positive) = (false, false);
    for idx in dom.cells_in_ball(x0, reach) {
        if let Some(x) = v.get(idx) {
            if x > eps {
                positive = true;
            } else {
                zero = true;
            }
        }
    }
    zero && positive
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeasureProfile {
    pub radii: Vec<f64>,
    pub values: Vec<f64>,
}

/// `h^n #{cells in B_r(x0) with v <= eps} / r^{n-1}` per radius.
pub fn zero_set_measure_profile(v: &ScalarField, x0: &Point, radii: &[f64], eps: f64) -> Result<MeasureProfile> {
    let dom = v.domain();
    let n = dom.dim();
    let h = dom.h();
    if !is_on_free_boundary(v, x0, eps) {
        return Err(LabError::NotOnFreeBoundary(x0[..n].to_vec()));
    }
    let mut values = Vec::with_capacity(radii.len());
    for &r in radii {
        if r < 8.0 * h * (1.0 - 1e-12) {
            return Err(LabError::UnderResolved {
                radius: r,
                floor: 8.0 * h,
            });
        }
        let mut count = 0usize;
        for idx in dom.cells_in_ball(x0, r) {
            if distance(&dom.point(idx), x0) >= r {
                continue;
            }
            match v.get(idx) {
                Some(x) if x <= eps => count += 1,
                Some(_) => {}
                None => {
                    return Err(LabError::BallExitsDomain {
                        center: x0[..n].to_vec(),
                        radius: r,
                    })
                }
            }
        }
        values.push(count as f64 * h.powi(n as i32) / r.powi(n as i32 - 1));
    }
    Ok(MeasureProfile {
        radii: radii.to_vec(),
        values,
    })
}

fn angle(a: &Point, b: &Point) -> f64 {
    dot(a, b).clamp(-1.0, 1.0).acos()
}

fn max_pairwise_angle(normals: &[Point], members: &[usize]) -> f64 {
    let mut worst = 0.0f64;
    for (i, &a) in members.iter().enumerate() {
        for &b in &members[i + 1..] {
            worst = worst.max(angle(&normals[a], &normals[b]));
        }
    }
    worst
}

/// Largest pairwise normal angle over windows of diameter `rho` centred at
/// each vertex.
pub fn normal_variation(geometry: &FreeBoundaryGeometry, rho: f64) -> Result<f64> {
    if geometry.is_empty() {
        return Err(LabError::EmptySet("free boundary has no vertices".into()));
    }
    let dom = geometry.signed_distance.domain();
    let index = NearestIndex::new(&geometry.vertices, (rho / 2.0).max(dom.h()));
    let mut worst: Option<f64> = None;
    for c in &geometry.vertices {
        let members = index.within(c, rho / 2.0);
        if members.len() >= 2 {
            let w = max_pairwise_angle(&geometry.normals, &members);
            worst = Some(worst.map_or(w, |m: f64| m.max(w)));
        }
    }
    worst.ok_or_else(|| {
        LabError::Precondition(format!("no window of diameter {rho} holds two vertices"))
    })
}

/// Largest pairwise normal angle among vertices in the closed ball
/// `B̄_r(center)`; `None` if fewer than two vertices fall inside.
pub fn normal_oscillation_in_ball(geometry: &FreeBoundaryGeometry, center: &Point, r: f64) -> Option<f64> {
    let members: Vec<usize> = geometry
        .vertices
        .iter()
        .enumerate()
        .filter(|(_, p)| distance(p, center) <= r)
        .map(|(k, _)| k)
        .collect();
    (members.len() >= 2).then(|| max_pairwise_angle(&geometry.normals, &members))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{make_box_domain, point};
    use proptest::prelude::*;

    #[test]
    fn nearest_index_matches_brute_force() {
        let pts: Vec<Point> = (0..200)
            .map(|k| {
                let t = k as f64 * 0.37;
                [t.sin() * 0.8, (1.3 * t).cos() * 0.6, (0.7 * t).sin() * 0.1]
            })
            .collect();
        let index = NearestIndex::new(&pts, 0.05);
        for k in 0..100 {
            let s = k as f64 * 0.113;
            let q = [s.cos() * 1.5, (2.0 * s).sin(), 0.3 * s.cos()];
            let brute = pts
                .iter()
                .enumerate()
                .map(|(i, p)| (i, distance(&q, p)))
                .fold(None, |best: Option<(usize, f64)>, (i, d)| match best {
                    Some((_, bd)) if bd <= d => best,
                    _ => Some((i, d)),
                })
                .unwrap();
            assert_eq!(index.nearest(&q).unwrap(), brute);
        }
    }

    #[test]
    fn affine_interface() {
        let h = 1.0 / 32.0;
        let d = make_box_domain(2, 1.0, h).unwrap();
        let v = ScalarField::from_fn(&d, |p| p[1]);
        let g = extract_free_boundary(&v, 1e-8).unwrap();
        assert_eq!(g.vertices.len(), 33);
        assert!(g.vertices.iter().all(|p| p[1].abs() <= 1e-9));
        assert!(g.normals.iter().all(|nu| (nu[1] - 1.0).abs() <= 1e-9 && (norm(nu) - 1.0).abs() <= 1e-9));
        assert_eq!(g.chains.len(), 1);
        assert_eq!(g.chains[0].len(), 33);
        for idx in d.active_cells() {
            assert!((g.signed_distance.get(idx).unwrap() - d.point(idx)[1]).abs() <= h);
        }
        assert!(normal_variation(&g, 0.2).unwrap() <= 1e-6);
    }

    #[test]
    fn perturbation_moves_vertices_by_delta() {
        let h = 1.0 / 32.0;
        let eps = 1e-4;
        let d = make_box_domain(2, 1.0, h).unwrap();
        let base = extract_free_boundary(&ScalarField::from_fn(&d, |p| p[1] - 0.3 * h), eps).unwrap();
        let pert = extract_free_boundary(&ScalarField::from_fn(&d, |p| p[1] - 0.3 * h + eps / 10.0), eps).unwrap();
        assert_eq!(base.vertices.len(), pert.vertices.len());
        for (a, b) in base.vertices.iter().zip(&pert.vertices) {
            assert!(distance(a, b) <= eps / 10.0 * (1.0 + 1e-6));
        }
    }

    #[test]
    fn positive_field_has_empty_geometry() {
        let d = make_box_domain(2, 1.0, 0.1).unwrap();
        let g = extract_free_boundary(&ScalarField::constant(&d, 1.0), 1e-8).unwrap();
        assert!(g.is_empty());
        assert!(normal_variation(&g, 0.1).is_err());
    }

    #[test]
    fn circle_geometry() {
        let h = 1.0 / 128.0;
        let d = make_box_domain(2, 2.0, h).unwrap();
        let v = ScalarField::from_fn(&d, |p| (p[0] * p[0] + p[1] * p[1]).sqrt() - 0.5);
        let g = extract_free_boundary(&v, 1e-10).unwrap();
        assert_eq!(g.chains.len(), 1);
        let dev = g.vertices.iter().map(|p| (norm(p) - 0.5).abs()).fold(0.0, f64::max);
        assert!(dev <= 1e-3);
        let w = normal_variation(&g, 0.1).unwrap();
        assert!((w - 0.2).abs() <= 0.04, "{w}");
        // normals point outward, into {v > 0}
        assert!(g.vertices.iter().zip(&g.normals).all(|(p, nu)| dot(p, nu) > 0.0));
    }

    #[test]
    fn corner_window() {
        let d = make_box_domain(2, 2.0, 1.0 / 64.0).unwrap();
        // L-shaped zero set: the quarter plane x1 < 0, x2 < 0 is excluded from {v > 0}
        let v = ScalarField::from_fn(&d, |p| p[0].max(p[1]));
        let g = extract_free_boundary(&v, 1e-10).unwrap();
        let w = normal_variation(&g, 0.2).unwrap();
        assert!(w >= std::f64::consts::FRAC_PI_2 - 0.1, "{w}");
    }

    #[test]
    fn hausdorff_of_shifted_half_planes() {
        let h = 1.0 / 64.0;
        let d = make_box_domain(2, 3.0, h).unwrap();
        let delta = 0.1;
        let a = ScalarField::from_fn(&d, |p| p[1].max(0.0).powi(2) / 2.0);
        let b = ScalarField::from_fn(&d, |p| (p[1] - delta).max(0.0).powi(2) / 2.0);
        let sa = zero_set_sample(&a, None, 1e-12);
        let sb = zero_set_sample(&b, None, 1e-12);
        let o = point(&[0.0, 0.0]);
        let dist = hausdorff_distance(&sa, &sb, &o, 1.0).unwrap();
        assert!((dist - delta).abs() <= h, "{dist}");
        assert_eq!(hausdorff_distance(&sa, &sa, &o, 1.0).unwrap(), 0.0);
        assert!(hausdorff_distance(&sa, &sb, &point(&[0.0, 10.0]), 1.0).is_err());
    }

    #[test]
    fn measure_profiles() {
        let h = 1.0 / 128.0;
        let d = make_box_domain(2, 2.0, h).unwrap();
        let o = point(&[0.0, 0.0]);
        let line = ScalarField::from_fn(&d, |p| p[0] * p[0] / 2.0);
        let radii = [8.0 * h, 16.0 * h, 32.0 * h, 64.0 * h];
        let prof = zero_set_measure_profile(&line, &o, &radii, 1e-12).unwrap();
        // only the one-cell band along the line survives: 2h - h^2/r
        for (r, m) in radii.iter().zip(&prof.values) {
            assert!((m - (2.0 * h - h * h / r)).abs() <= 1e-12, "band artifact {m}");
        }

        let half = ScalarField::from_fn(&d, |p| p[1].max(0.0).powi(2) / 2.0);
        let prof = zero_set_measure_profile(&half, &o, &radii, 1e-12).unwrap();
        for (r, m) in radii.iter().zip(&prof.values) {
            let exact = std::f64::consts::PI * r / 2.0;
            assert!((m - exact).abs() <= 0.15 * exact, "r={r} m={m}");
        }
        assert!(matches!(
            zero_set_measure_profile(&half, &o, &[4.0 * h], 1e-12),
            Err(LabError::UnderResolved { .. })
        ));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn hausdorff_is_symmetric_with_triangle_slack(
            a in 0.0f64..0.3, b in 0.0f64..0.3, c in 0.0f64..0.3
        ) {
            let h = 1.0 / 32.0;
            let d = make_box_domain(2, 3.0, h).unwrap();
            let sample = |s: f64| {
                let f = ScalarField::from_fn(&d, |p| (p[1] - s).max(0.0));
                zero_set_sample(&f, None, 1e-12)
            };
            let (sa, sb, sc) = (sample(a), sample(b), sample(c));
            let o = point(&[0.0, 0.0]);
            let ab = hausdorff_distance(&sa, &sb, &o, 1.0).unwrap();
            let ba = hausdorff_distance(&sb, &sa, &o, 1.0).unwrap();
            let bc = hausdorff_distance(&sb, &sc, &o, 1.0).unwrap();
            let ac = hausdorff_distance(&sa, &sc, &o, 1.0).unwrap();
            prop_assert_eq!(ab, ba);
            prop_assert!(ac <= ab + bc + 2.0 * h);
        }
    }
}
