//! Structured lattices, scalar fields and finite-difference operators.
//!
//! A [`GridDomain`] is a rectangular array of lattice nodes with spacing `h`.
//! Every node ("cell") carries a [`CellTag`]; solvers update `Interior` cells,
//! read `Dirichlet` cells as data and never touch `Exterior` cells. Node
//! coordinates are `origin + index * h`, so box domains include their faces
//! and ball domains are rasterized by center inclusion.
//!
//! Points are stored as `[f64; 3]`; components beyond the domain dimension
//! are zero.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};

pub const MAX_DIM: usize = 3;

pub type Point = [f64; MAX_DIM];

/// Build a [`Point`] from a slice of up to three coordinates.
pub fn point(coords: &[f64]) -> Point {
    let mut p = [0.0; MAX_DIM];
    for (dst, src) in p.iter_mut().zip(coords) {
        *dst = *src;
    }
    p
}

pub fn distance(a: &Point, b: &Point) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

pub fn norm(a: &Point) -> f64 {
    a.iter().map(|x| x * x).sum::<f64>().sqrt()
}

pub fn dot(a: &Point, b: &Point) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum CellTag {
    Interior,
    Dirichlet,
    Exterior,
    /// Flat face `{x_n = 0}` of a half-ball, carrying the thin-obstacle condition.
    Signorini,
}

/// How a domain was built; enough to rebuild it bit-for-bit.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DomainShape {
    Box { side: f64 },
    Ball { radius: f64, half: bool },
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MaskSummary {
    pub interior: usize,
    pub dirichlet: usize,
    pub exterior: usize,
    pub signorini: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GridDomain {
    dim: usize,
    h: f64,
    extent: [usize; MAX_DIM],
    strides: [usize; MAX_DIM],
    origin: Point,
    mask: Vec<CellTag>,
    shape: DomainShape,
    /// Interior cells split by index parity, for red-black sweeps.
    colors: [Vec<usize>; 2],
}

impl GridDomain {
    fn from_mask(
        dim: usize,
        h: f64,
        extent: [usize; MAX_DIM],
        origin: Point,
        mask: Vec<CellTag>,
        shape: DomainShape,
    ) -> GridDomain {
        let strides = [1, extent[0], extent[0] * extent[1]];
        let mut dom = GridDomain {
            dim,
            h,
            extent,
            strides,
            origin,
            mask,
            shape,
            colors: [Vec::new(), Vec::new()],
        };
        let mut colors = [Vec::new(), Vec::new()];
        for idx in 0..dom.len() {
            if dom.mask[idx] == CellTag::Interior {
                let mi = dom.multi_index(idx);
                colors[(mi[0] + mi[1] + mi[2]) % 2].push(idx);
            }
        }
        dom.colors = colors;
        dom
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn h(&self) -> f64 {
        self.h
    }

    /// Cells per axis; unused axes report 1.
    pub fn extent(&self) -> [usize; MAX_DIM] {
        self.extent
    }

    pub fn strides(&self) -> [usize; MAX_DIM] {
        self.strides
    }

    pub fn origin(&self) -> Point {
        self.origin
    }

    pub fn shape(&self) -> &DomainShape {
        &self.shape
    }

    pub fn len(&self) -> usize {
        self.extent.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn tag(&self, idx: usize) -> CellTag {
        self.mask[idx]
    }

    pub fn mask(&self) -> &[CellTag] {
        &self.mask
    }

    pub fn is_active(&self, idx: usize) -> bool {
        self.mask[idx] != CellTag::Exterior
    }

    /// Physical length of the longest axis.
    pub fn side_length(&self) -> f64 {
        let m = self.extent[..self.dim].iter().copied().max().unwrap_or(1);
        (m.saturating_sub(1)) as f64 * self.h
    }

    pub fn color_cells(&self, color: usize) -> &[usize] {
        &self.colors[color]
    }

    pub fn interior_cells(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.len()).filter(move |&i| self.mask[i] == CellTag::Interior)
    }

    pub fn cells_with_tag(&self, tag: CellTag) -> impl Iterator<Item = usize> + '_ {
        (0..self.len()).filter(move |&i| self.mask[i] == tag)
    }

    pub fn active_cells(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.len()).filter(move |&i| self.mask[i] != CellTag::Exterior)
    }

    pub fn multi_index(&self, idx: usize) -> [usize; MAX_DIM] {
        let i0 = idx % self.extent[0];
        let rest = idx / self.extent[0];
        let i1 = rest % self.extent[1];
        let i2 = rest / self.extent[1];
        [i0, i1, i2]
    }

    pub fn index(&self, mi: [usize; MAX_DIM]) -> usize {
        mi[0] + self.strides[1] * mi[1] + self.strides[2] * mi[2]
    }

    pub fn point(&self, idx: usize) -> Point {
        let mi = self.multi_index(idx);
        let mut p = [0.0; MAX_DIM];
        for a in 0..self.dim {
            p[a] = self.origin[a] + mi[a] as f64 * self.h;
        }
        p
    }

    /// Neighbor along `axis` in direction `step` (+1 or -1), if inside the array.
    pub fn neighbor(&self, idx: usize, axis: usize, step: isize) -> Option<usize> {
        let mi = self.multi_index(idx);
        let j = mi[axis] as isize + step;
        if j < 0 || j >= self.extent[axis] as isize {
            return None;
        }
        let mut mj = mi;
        mj[axis] = j as usize;
        Some(self.index(mj))
    }

    /// Cell displaced by an integer lattice vector, if inside the array.
    pub fn offset(&self, idx: usize, shift: [isize; MAX_DIM]) -> Option<usize> {
        let mi = self.multi_index(idx);
        let mut mj = [0usize; MAX_DIM];
        for a in 0..MAX_DIM {
            let j = mi[a] as isize + shift[a];
            if j < 0 || j >= self.extent[a] as isize {
                return None;
            }
            mj[a] = j as usize;
        }
        Some(self.index(mj))
    }

    /// Nearest lattice node to `p`, if `p` lies within half a cell of the array.
    pub fn locate(&self, p: &Point) -> Option<usize> {
        let mut mi = [0usize; MAX_DIM];
        for a in 0..self.dim {
            let t = ((p[a] - self.origin[a]) / self.h).round();
            if t < 0.0 || t >= self.extent[a] as f64 {
                return None;
            }
            mi[a] = t as usize;
        }
        Some(self.index(mi))
    }

    /// Cells whose node lies within distance `radius` of `center` (closed ball).
    pub fn cells_in_ball(&self, center: &Point, radius: f64) -> Vec<usize> {
        let mut lo = [0usize; MAX_DIM];
        let mut hi = [0usize; MAX_DIM];
        for a in 0..MAX_DIM {
            if a < self.dim {
                let l = ((center[a] - radius - self.origin[a]) / self.h).floor().max(0.0);
                let u = ((center[a] + radius - self.origin[a]) / self.h)
                    .ceil()
                    .min(self.extent[a] as f64 - 1.0);
                if u < l {
                    return Vec::new();
                }
                lo[a] = l as usize;
                hi[a] = u as usize;
            }
        }
        let r2 = radius * radius * (1.0 + 1e-12) + 1e-300;
        let mut out = Vec::new();
        for k in lo[2]..=hi[2] {
            for j in lo[1]..=hi[1] {
                for i in lo[0]..=hi[0] {
                    let idx = self.index([i, j, k]);
                    let p = self.point(idx);
                    let d2: f64 = (0..self.dim).map(|a| (p[a] - center[a]).powi(2)).sum();
                    if d2 <= r2 {
                        out.push(idx);
                    }
                }
            }
        }
        out
    }

    pub fn mask_summary(&self) -> MaskSummary {
        let mut s = MaskSummary::default();
        for t in &self.mask {
            match t {
                CellTag::Interior => s.interior += 1,
                CellTag::Dirichlet => s.dirichlet += 1,
                CellTag::Exterior => s.exterior += 1,
                CellTag::Signorini => s.signorini += 1,
            }
        }
        s
    }

    /// Check the structural invariants of the mask.
    pub fn validate(&self) -> Result<()> {
        if !(self.h > 0.0) {
            return Err(LabError::InvalidSpacing(self.h));
        }
        for a in 0..self.dim {
            if self.extent[a] < 3 {
                return Err(LabError::DegenerateDomain(format!(
                    "axis {a} has {} cells, need at least 3",
                    self.extent[a]
                )));
            }
        }
        for idx in self.interior_cells() {
            for a in 0..self.dim {
                for s in [-1, 1] {
                    match self.neighbor(idx, a, s) {
                        Some(j) if self.mask[j] != CellTag::Exterior => {}
                        _ => {
                            return Err(LabError::DegenerateDomain(format!(
                                "interior cell {idx} has an exterior neighbor"
                            )))
                        }
                    }
                }
            }
        }
        let half = matches!(self.shape, DomainShape::Ball { half: true, .. });
        for idx in self.cells_with_tag(CellTag::Signorini) {
            if !half || self.point(idx)[self.dim - 1] != 0.0 {
                return Err(LabError::DegenerateDomain(format!(
                    "signorini cell {idx} off the flat face"
                )));
            }
        }
        Ok(())
    }
}

fn check_dim_h(n: usize, h: f64) -> Result<()> {
    if !(1..=MAX_DIM).contains(&n) {
        return Err(LabError::InvalidDimension(n));
    }
    if !(h > 0.0) || !h.is_finite() {
        return Err(LabError::InvalidSpacing(h));
    }
    Ok(())
}

/// Axis-aligned box `(-side/2, side/2)^n` whose outer node layer is Dirichlet.
pub fn make_box_domain(n: usize, side: f64, h: f64) -> Result<Arc<GridDomain>> {
    check_dim_h(n, h)?;
    if !(side > 2.0 * h) {
        return Err(LabError::DegenerateDomain(format!(
            "box side {side} must exceed 2h = {}",
            2.0 * h
        )));
    }
    let cells = (side / h + 1e-9).floor() as usize + 1;
    let mut extent = [1usize; MAX_DIM];
    let mut origin = [0.0; MAX_DIM];
    for a in 0..n {
        extent[a] = cells;
        origin[a] = -side / 2.0;
    }
    let total: usize = extent.iter().product();
    let mut mask = vec![CellTag::Interior; total];
    for (idx, tag) in mask.iter_mut().enumerate() {
        let i0 = idx % extent[0];
        let rest = idx / extent[0];
        let mi = [i0, rest % extent[1], rest / extent[1]];
        if (0..n).any(|a| mi[a] == 0 || mi[a] == cells - 1) {
            *tag = CellTag::Dirichlet;
        }
    }
    let dom = GridDomain::from_mask(n, h, extent, origin, mask, DomainShape::Box { side });
    dom.validate()?;
    Ok(Arc::new(dom))
}

/// Ball (or upper half-ball) of the given radius centered at the origin.
///
/// Nodes strictly inside are Interior; non-interior nodes axis-adjacent to an
/// interior node are Dirichlet. With `half`, the face `{x_n = 0}` inside the
/// ball becomes Signorini wherever the two nodes above it are available for
/// the one-sided normal-derivative stencil.
pub fn make_ball_domain(n: usize, radius: f64, h: f64, half: bool) -> Result<Arc<GridDomain>> {
    check_dim_h(n, h)?;
    if !(radius > 2.0 * h) {
        return Err(LabError::DegenerateDomain(format!(
            "radius {radius} must exceed 2h = {}",
            2.0 * h
        )));
    }
    let m = (radius / h).ceil() as usize + 1;
    let mut extent = [1usize; MAX_DIM];
    let mut origin = [0.0; MAX_DIM];
    for a in 0..n {
        extent[a] = 2 * m + 1;
        origin[a] = -(m as f64) * h;
    }
    if half {
        // one row below the face keeps the face itself off the array edge
        extent[n - 1] = m + 2;
        origin[n - 1] = -h;
    }
    let strides = [1, extent[0], extent[0] * extent[1]];
    let total: usize = extent.iter().product();
    let coords = |idx: usize| -> Point {
        let i0 = idx % extent[0];
        let rest = idx / extent[0];
        let mi = [i0, rest % extent[1], rest / extent[1]];
        let mut p = [0.0; MAX_DIM];
        for a in 0..n {
            p[a] = origin[a] + mi[a] as f64 * h;
        }
        p
    };
    let r2 = radius * radius;
    let inside = |p: &Point| -> bool {
        let d2: f64 = p.iter().map(|x| x * x).sum();
        d2 < r2 && (!half || p[n - 1] > 0.0)
    };
    let mut mask = vec![CellTag::Exterior; total];
    for (idx, tag) in mask.iter_mut().enumerate() {
        if inside(&coords(idx)) {
            *tag = CellTag::Interior;
        }
    }
    let neighbors = |idx: usize| -> Vec<usize> {
        let i0 = idx % extent[0];
        let rest = idx / extent[0];
        let mi = [i0, rest % extent[1], rest / extent[1]];
        let mut out = Vec::with_capacity(2 * n);
        for a in 0..n {
            if mi[a] > 0 {
                out.push(idx - strides[a]);
            }
            if mi[a] + 1 < extent[a] {
                out.push(idx + strides[a]);
            }
        }
        out
    };
    let mut boundary = Vec::new();
    for idx in 0..total {
        if mask[idx] != CellTag::Interior {
            continue;
        }
        for j in neighbors(idx) {
            if mask[j] == CellTag::Exterior {
                boundary.push(j);
            }
        }
    }
    for j in boundary {
        mask[j] = CellTag::Dirichlet;
    }
    if half {
        let up = strides[n - 1];
        for idx in 0..total {
            let p = coords(idx);
            if p[n - 1] != 0.0 || mask[idx] == CellTag::Exterior {
                continue;
            }
            let d2: f64 = p.iter().map(|x| x * x).sum();
            let above = idx + up;
            let above2 = idx + 2 * up;
            let usable = d2 < r2
                && above2 < total
                && mask[above] == CellTag::Interior
                && mask[above2] != CellTag::Exterior;
            if usable {
                mask[idx] = CellTag::Signorini;
            }
        }
    }
    if !mask.iter().any(|t| *t == CellTag::Interior) {
        return Err(LabError::DegenerateDomain("ball contains no interior node".into()));
    }
    let dom = GridDomain::from_mask(
        n,
        h,
        extent,
        origin,
        mask,
        DomainShape::Ball { radius, half },
    );
    dom.validate()?;
    Ok(Arc::new(dom))
}

/// Rebuild a domain from its shape descriptor.
pub fn make_domain(n: usize, h: f64, shape: &DomainShape) -> Result<Arc<GridDomain>> {
    match *shape {
        DomainShape::Box { side } => make_box_domain(n, side, h),
        DomainShape::Ball { radius, half } => make_ball_domain(n, radius, h, half),
    }
}

/// Real values on the nodes of a domain. Cells without a value (all Exterior
/// cells, and whatever an operator leaves undefined) read as `None`.
#[derive(Clone, Debug)]
pub struct ScalarField {
    domain: Arc<GridDomain>,
    values: Vec<f64>,
}

impl PartialEq for ScalarField {
    fn eq(&self, other: &Self) -> bool {
        self.same_domain(other)
            && self
                .values
                .iter()
                .zip(&other.values)
                .all(|(a, b)| a.to_bits() == b.to_bits() || (a.is_nan() && b.is_nan()))
    }
}

impl ScalarField {
    /// Field with every cell unset.
    pub fn unset(domain: &Arc<GridDomain>) -> ScalarField {
        ScalarField {
            domain: Arc::clone(domain),
            values: vec![f64::NAN; domain.len()],
        }
    }

    pub fn constant(domain: &Arc<GridDomain>, c: f64) -> ScalarField {
        ScalarField::from_fn(domain, |_| c)
    }

    /// Evaluate `f` at every non-exterior node.
    pub fn from_fn(domain: &Arc<GridDomain>, f: impl Fn(&Point) -> f64) -> ScalarField {
        let mut field = ScalarField::unset(domain);
        for idx in domain.active_cells() {
            field.values[idx] = f(&domain.point(idx));
        }
        field
    }

    /// Evaluate `f` only on cells carrying one of `tags`.
    pub fn from_fn_on(
        domain: &Arc<GridDomain>,
        tags: &[CellTag],
        f: impl Fn(&Point) -> f64,
    ) -> ScalarField {
        let mut field = ScalarField::unset(domain);
        for idx in 0..domain.len() {
            if tags.contains(&domain.tag(idx)) {
                field.values[idx] = f(&domain.point(idx));
            }
        }
        field
    }

    /// Wrap raw values; Exterior cells are forced unset.
    pub fn from_values(domain: &Arc<GridDomain>, mut values: Vec<f64>) -> Result<ScalarField> {
        if values.len() != domain.len() {
            return Err(LabError::Precondition(format!(
                "expected {} values, got {}",
                domain.len(),
                values.len()
            )));
        }
        for (idx, v) in values.iter_mut().enumerate() {
            if !domain.is_active(idx) {
                *v = f64::NAN;
            }
        }
        Ok(ScalarField {
            domain: Arc::clone(domain),
            values,
        })
    }

    pub fn domain(&self) -> &Arc<GridDomain> {
        &self.domain
    }

    pub fn same_domain(&self, other: &ScalarField) -> bool {
        Arc::ptr_eq(&self.domain, &other.domain) || *self.domain == *other.domain
    }

    pub fn get(&self, idx: usize) -> Option<f64> {
        let v = self.values[idx];
        if v.is_nan() || !self.domain.is_active(idx) {
            None
        } else {
            Some(v)
        }
    }

    /// Value at a cell that must be set.
    pub fn value(&self, idx: usize) -> Result<f64> {
        self.get(idx).ok_or(LabError::MissingValue(idx))
    }

    pub fn set(&mut self, idx: usize, v: f64) {
        if self.domain.is_active(idx) {
            self.values[idx] = v;
        }
    }

    pub fn clear(&mut self, idx: usize) {
        self.values[idx] = f64::NAN;
    }

    /// Raw storage; unset cells hold NaN.
    pub fn raw(&self) -> &[f64] {
        &self.values
    }

    pub fn into_raw(self) -> Vec<f64> {
        self.values
    }

    /// `a * self + b * other` on cells where both are set.
    pub fn combine(&self, a: f64, other: &ScalarField, b: f64) -> Result<ScalarField> {
        if !self.same_domain(other) {
            return Err(LabError::DomainMismatch);
        }
        let values = self
            .values
            .iter()
            .zip(&other.values)
            .map(|(x, y)| a * x + b * y)
            .collect();
        Ok(ScalarField {
            domain: Arc::clone(&self.domain),
            values,
        })
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> ScalarField {
        let values = self
            .values
            .iter()
            .map(|&x| if x.is_nan() { x } else { f(x) })
            .collect();
        ScalarField {
            domain: Arc::clone(&self.domain),
            values,
        }
    }

    /// Every non-exterior cell carries a finite value.
    pub fn is_complete(&self) -> bool {
        self.domain
            .active_cells()
            .all(|i| self.values[i].is_finite())
    }

    /// Largest absolute difference over cells where both fields are set.
    pub fn max_abs_diff(&self, other: &ScalarField) -> Result<f64> {
        if !self.same_domain(other) {
            return Err(LabError::DomainMismatch);
        }
        Ok(self
            .values
            .iter()
            .zip(&other.values)
            .filter(|(a, b)| !a.is_nan() && !b.is_nan())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max))
    }

    /// Multilinear interpolation; `None` if any corner is missing.
    pub fn interpolate(&self, p: &Point) -> Option<f64> {
        let dom = &*self.domain;
        let n = dom.dim;
        let mut base = [0usize; MAX_DIM];
        let mut frac = [0.0; MAX_DIM];
        for a in 0..n {
            let t = (p[a] - dom.origin[a]) / dom.h;
            let last = dom.extent[a] - 1;
            if !(t >= -1e-9 && t <= last as f64 + 1e-9) {
                return None;
            }
            let mut i = t.floor().max(0.0) as usize;
            if i >= last {
                i = last - 1;
            }
            base[a] = i;
            frac[a] = (t - i as f64).clamp(0.0, 1.0);
        }
        let mut acc = 0.0;
        for corner in 0..(1usize << n) {
            let mut mi = base;
            let mut w = 1.0;
            for a in 0..n {
                if corner >> a & 1 == 1 {
                    mi[a] += 1;
                    w *= frac[a];
                } else {
                    w *= 1.0 - frac[a];
                }
            }
            let idx = dom.index(mi);
            match self.get(idx) {
                Some(v) => acc += w * v,
                None if w == 0.0 => {}
                None => return None,
            }
        }
        Some(acc)
    }

    pub fn max_abs(&self) -> f64 {
        self.values
            .iter()
            .filter(|v| !v.is_nan())
            .fold(0.0, |m, v| m.max(v.abs()))
    }
}

/// Five-point (in 2D; `2n+1` in general) Laplacian on Interior cells.
pub fn laplacian(f: &ScalarField) -> Result<ScalarField> {
    let dom = f.domain();
    let mut out = ScalarField::unset(dom);
    for idx in dom.interior_cells() {
        out.values[idx] = laplacian_at(f, idx)?;
    }
    Ok(out)
}

/// Discrete Laplacian at one Interior cell.
pub fn laplacian_at(f: &ScalarField, idx: usize) -> Result<f64> {
    let dom = f.domain();
    let c = f.value(idx)?;
    let mut acc = 0.0;
    for a in 0..dom.dim() {
        for s in [-1, 1] {
            let j = dom.neighbor(idx, a, s).ok_or(LabError::MissingValue(idx))?;
            acc += f.value(j)? - c;
        }
    }
    Ok(acc / (dom.h() * dom.h()))
}

/// Vector values per cell (unused components zero); `None` where undefined.
#[derive(Clone, Debug)]
pub struct VectorField {
    domain: Arc<GridDomain>,
    values: Vec<Option<Point>>,
}

impl VectorField {
    pub fn domain(&self) -> &Arc<GridDomain> {
        &self.domain
    }

    pub fn get(&self, idx: usize) -> Option<Point> {
        self.values[idx]
    }

    pub fn magnitude(&self) -> ScalarField {
        let mut out = ScalarField::unset(&self.domain);
        for (idx, v) in self.values.iter().enumerate() {
            if let Some(g) = v {
                out.set(idx, norm(g));
            }
        }
        out
    }
}

/// Central differences where both axis neighbors are set, one-sided where
/// only one is.
pub fn gradient(f: &ScalarField) -> VectorField {
    let dom = f.domain();
    let mut values = vec![None; dom.len()];
    for idx in dom.active_cells() {
        values[idx] = gradient_at(f, idx);
    }
    VectorField {
        domain: Arc::clone(dom),
        values,
    }
}

pub fn gradient_at(f: &ScalarField, idx: usize) -> Option<Point> {
    let dom = f.domain();
    let h = dom.h();
    let c = f.get(idx)?;
    let mut g = [0.0; MAX_DIM];
    for a in 0..dom.dim() {
        let lo = dom.neighbor(idx, a, -1).and_then(|j| f.get(j));
        let hi = dom.neighbor(idx, a, 1).and_then(|j| f.get(j));
        g[a] = match (lo, hi) {
            (Some(l), Some(u)) => (u - l) / (2.0 * h),
            (None, Some(u)) => (u - c) / h,
            (Some(l), None) => (c - l) / h,
            (None, None) => 0.0,
        };
    }
    Some(g)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn box_counts() {
        let d = make_box_domain(1, 2.0, 0.5).unwrap();
        let s = d.mask_summary();
        assert_eq!((s.interior, s.dirichlet), (3, 2));

        let d = make_box_domain(2, 2.0, 1.0 / 64.0).unwrap();
        assert_eq!(d.extent(), [129, 129, 1]);

        assert!(make_box_domain(2, 2.0, 2.0).is_err());
        assert!(make_box_domain(4, 2.0, 0.1).is_err());
        assert!(make_box_domain(2, 2.0, -0.1).is_err());
    }

    #[test]
    fn ball_counts_match_center_inclusion() {
        // 45 lattice points (i, j) with i^2 + j^2 < 16, counted independently.
        let d = make_ball_domain(2, 1.0, 0.25, false).unwrap();
        let interior = d.mask_summary().interior;
        assert_eq!(interior, 45);
        let estimate = std::f64::consts::PI / (0.25 * 0.25);
        assert!((interior as f64 - estimate).abs() <= 8.0);
    }

    #[test]
    fn half_ball_signorini_on_face() {
        let d = make_ball_domain(2, 1.0, 0.25, true).unwrap();
        let sig: Vec<_> = d.cells_with_tag(CellTag::Signorini).collect();
        assert!(!sig.is_empty());
        for idx in sig {
            assert_eq!(d.point(idx)[1], 0.0);
        }
        assert!(make_ball_domain(2, 0.3, 0.25, false).is_err());
    }

    #[test]
    fn laplacian_exact_on_quadratics() {
        let d = make_box_domain(2, 2.0, 0.1).unwrap();
        let f = ScalarField::from_fn(&d, |p| p[0] * p[0]);
        let l = laplacian(&f).unwrap();
        for idx in d.interior_cells() {
            assert!((l.get(idx).unwrap() - 2.0).abs() < 1e-9);
        }
        let f = ScalarField::from_fn(&d, |p| p[0]);
        let l = laplacian(&f).unwrap();
        for idx in d.interior_cells() {
            assert!(l.get(idx).unwrap().abs() < 1e-9);
        }
        let f = ScalarField::from_fn(&d, |p| (p[0] * p[0] + p[1] * p[1]) / 4.0);
        let l = laplacian(&f).unwrap();
        for idx in d.interior_cells() {
            assert!((l.get(idx).unwrap() - 1.0).abs() < 1e-9);
        }
        // undefined off the interior
        let corner = d.index([0, 0, 0]);
        assert!(l.get(corner).is_none());
    }

    #[test]
    fn gradient_examples() {
        let d = make_box_domain(2, 2.0, 0.125).unwrap();
        let g = gradient(&ScalarField::from_fn(&d, |p| 3.0 * p[0]));
        for idx in d.interior_cells() {
            let v = g.get(idx).unwrap();
            assert!((v[0] - 3.0).abs() < 1e-12 && v[1].abs() < 1e-12);
        }
        let g = gradient(&ScalarField::constant(&d, 4.0));
        assert!(d.interior_cells().all(|i| norm(&g.get(i).unwrap()) == 0.0));
        let g = gradient(&ScalarField::from_fn(&d, |p| p[1] * p[1] / 2.0));
        let idx = d.locate(&point(&[0.25, 0.5])).unwrap();
        let v = g.get(idx).unwrap();
        assert!(v[0].abs() < 1e-12 && (v[1] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn radial_gradient_on_axes() {
        let d = make_box_domain(2, 2.0, 1.0 / 32.0).unwrap();
        let f = ScalarField::from_fn(&d, |p| p[0] * p[0] + p[1] * p[1]);
        let mag = gradient(&f).magnitude();
        for idx in d.interior_cells() {
            let p = d.point(idx);
            if p[1] == 0.0 || p[0] == 0.0 {
                assert!((mag.get(idx).unwrap() - 2.0 * norm(&p)).abs() <= 1e-10);
            }
        }
    }

    #[test]
    fn interpolation_is_exact_on_bilinear() {
        let d = make_box_domain(2, 2.0, 0.1).unwrap();
        let f = ScalarField::from_fn(&d, |p| 1.0 + 2.0 * p[0] - p[1] + 0.5 * p[0] * p[1]);
        let q = point(&[0.123, -0.456]);
        let exact = 1.0 + 2.0 * q[0] - q[1] + 0.5 * q[0] * q[1];
        assert!((f.interpolate(&q).unwrap() - exact).abs() < 1e-12);
        assert!(f.interpolate(&point(&[1.5, 0.0])).is_none());
    }

    #[test]
    fn combine_rejects_foreign_domain() {
        let a = make_box_domain(2, 2.0, 0.1).unwrap();
        let b = make_box_domain(2, 2.0, 0.2).unwrap();
        let fa = ScalarField::constant(&a, 1.0);
        let fb = ScalarField::constant(&b, 1.0);
        assert_eq!(fa.combine(1.0, &fb, 1.0), Err(LabError::DomainMismatch));
    }
}
