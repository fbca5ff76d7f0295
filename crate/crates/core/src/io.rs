//! Field persistence: one CSV row per set, non-exterior cell
//! (`x1,...,xn,value`, 17 significant digits) plus a JSON metadata record
//! that is sufficient to rebuild the domain.

use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};
use crate::grid::{make_domain, DomainShape, GridDomain, MaskSummary, ScalarField, MAX_DIM};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FieldMeta {
    pub n: usize,
    pub h: f64,
    pub extent: Vec<usize>,
    pub origin: Vec<f64>,
    pub shape: DomainShape,
    pub mask: MaskSummary,
    pub problem: String,
}

impl FieldMeta {
    pub fn new(domain: &GridDomain, problem: &str) -> FieldMeta {
        let n = domain.dim();
        FieldMeta {
            n,
            h: domain.h(),
            extent: domain.extent()[..n].to_vec(),
            origin: domain.origin()[..n].to_vec(),
            shape: domain.shape().clone(),
            mask: domain.mask_summary(),
            problem: problem.to_string(),
        }
    }

    /// Rebuild the domain and confirm it matches the recorded layout.
    pub fn domain(&self) -> Result<Arc<GridDomain>> {
        let dom = make_domain(self.n, self.h, &self.shape)?;
        if dom.extent()[..self.n] != self.extent[..] || dom.mask_summary() != self.mask {
            return Err(LabError::Format(
                "metadata does not match the rebuilt domain".into(),
            ));
        }
        Ok(dom)
    }
}

pub fn fmt_real(x: f64) -> String {
    format!("{x:.16e}")
}

pub fn write_field_csv<W: Write>(field: &ScalarField, out: W) -> Result<()> {
    let dom = field.domain();
    let n = dom.dim();
    let mut out = BufWriter::new(out);
    let header: Vec<String> = (1..=n).map(|a| format!("x{a}")).collect();
    writeln!(out, "{},value", header.join(","))?;
    for idx in dom.active_cells() {
        if let Some(v) = field.get(idx) {
            let p = dom.point(idx);
            for c in &p[..n] {
                write!(out, "{},", fmt_real(*c))?;
            }
            writeln!(out, "{}", fmt_real(v))?;
        }
    }
    out.flush()?;
    Ok(())
}

pub fn read_field_csv<R: Read>(domain: &Arc<GridDomain>, input: R) -> Result<ScalarField> {
    let n = domain.dim();
    let mut field = ScalarField::unset(domain);
    let reader = BufReader::new(input);
    for (lineno, line) in reader.lines().enumerate() {
        let line = line?;
        if lineno == 0 {
            let cols = line.split(',').count();
            if cols != n + 1 || !line.ends_with(",value") {
                return Err(LabError::Format(format!("bad header: {line}")));
            }
            continue;
        }
        if line.trim().is_empty() {
            continue;
        }
        let nums: std::result::Result<Vec<f64>, _> =
            line.split(',').map(|s| s.trim().parse::<f64>()).collect();
        let nums = nums.map_err(|e| LabError::Format(format!("line {}: {e}", lineno + 1)))?;
        if nums.len() != n + 1 {
            return Err(LabError::Format(format!(
                "line {}: expected {} columns",
                lineno + 1,
                n + 1
            )));
        }
        let mut p = [0.0; MAX_DIM];
        p[..n].copy_from_slice(&nums[..n]);
        let idx = domain.locate(&p).ok_or_else(|| {
            LabError::Format(format!("line {}: point outside the grid", lineno + 1))
        })?;
        if !domain.is_active(idx) {
            return Err(LabError::Format(format!(
                "line {}: point on an exterior cell",
                lineno + 1
            )));
        }
        field.set(idx, nums[n]);
    }
    Ok(field)
}

pub fn write_field(path: &Path, field: &ScalarField) -> Result<()> {
    write_field_csv(field, fs::File::create(path)?)
}

pub fn read_field(path: &Path, domain: &Arc<GridDomain>) -> Result<ScalarField> {
    read_field_csv(domain, fs::File::open(path)?)
}

/// 0/1 field from a per-cell flag, set on non-exterior cells.
pub fn mask_field(domain: &Arc<GridDomain>, flags: &[bool]) -> ScalarField {
    let mut f = ScalarField::unset(domain);
    for idx in domain.active_cells() {
        f.set(idx, if flags[idx] { 1.0 } else { 0.0 });
    }
    f
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    fs::write(path, text + "\n")?;
    Ok(())
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path)?;
    Ok(serde_json::from_str(&text)?)
}

/// Write rows of reals under a header, 17 significant digits.
pub fn write_table(path: &Path, header: &[&str], rows: &[Vec<f64>]) -> Result<()> {
    let mut out = BufWriter::new(fs::File::create(path)?);
    writeln!(out, "{}", header.join(","))?;
    for row in rows {
        let cells: Vec<String> = row.iter().map(|x| fmt_real(*x)).collect();
        writeln!(out, "{}", cells.join(","))?;
    }
    out.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{make_ball_domain, make_box_domain};
    use proptest::prelude::*;

    #[test]
    fn metadata_rebuilds_domain() {
        let d = make_ball_domain(2, 1.0, 0.1, true).unwrap();
        let meta = FieldMeta::new(&d, "thin_obstacle");
        let text = serde_json::to_string(&meta).unwrap();
        let back: FieldMeta = serde_json::from_str(&text).unwrap();
        assert_eq!(*back.domain().unwrap(), *d);
    }

    #[test]
    fn partial_fields_stay_partial() {
        let d = make_box_domain(2, 1.0, 0.25).unwrap();
        let f = crate::grid::laplacian(&ScalarField::from_fn(&d, |p| p[0] * p[1])).unwrap();
        let mut buf = Vec::new();
        write_field_csv(&f, &mut buf).unwrap();
        let g = read_field_csv(&d, buf.as_slice()).unwrap();
        assert_eq!(f, g);
    }

    #[test]
    fn rejects_bad_header() {
        let d = make_box_domain(1, 1.0, 0.25).unwrap();
        assert!(read_field_csv(&d, "a,b,c\n".as_bytes()).is_err());
    }

    proptest! {
        #[test]
        fn csv_round_trip_is_bit_exact(seed in proptest::collection::vec(-1e6f64..1e6, 1..8)) {
            let d = make_box_domain(2, 1.0, 0.125).unwrap();
            let f = ScalarField::from_fn(&d, |p| {
                seed.iter().enumerate().map(|(k, c)| c * (p[0] * (k as f64 + 1.0)).sin() / 3.0 + p[1] / 7.0).sum()
            });
            let mut buf = Vec::new();
            write_field_csv(&f, &mut buf).unwrap();
            let g = read_field_csv(&d, buf.as_slice()).unwrap();
            prop_assert_eq!(f, g);
        }
    }
}
