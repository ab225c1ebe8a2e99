//! Grid-sampled fields and the `MSDEGRID` file format.
//!
//! Layout (little-endian): magic `MSDEGRID`, `u16` version, `u8` axis count,
//! per axis `(f64 lo, f64 hi, u32 n)`, `u8` value arity, then the row-major
//! `f64` payload at cell centres. Axis 0 is time, axes `1..=d` are space.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::{identity_sigma, zero_vector, CoefficientField, FieldKind, MatrixFn, VectorFn};
use crate::error::{Error, Result};
use crate::io::{write_atomic, Reader};

const MAGIC: &[u8; 8] = b"MSDEGRID";
const VERSION: u16 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Interpolation {
    Nearest,
    #[default]
    Multilinear,
}

/// What the stored values represent when a grid is turned into a field.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GridRole {
    /// `d`-vector drift; `sigma = I`.
    Drift,
    /// `d x noise_dim` diffusion, row-major; `b = 0`.
    Sigma { noise_dim: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridHeader {
    pub version: u16,
    /// `(lo, hi)` per axis, time first.
    pub bounds: Vec<(f64, f64)>,
    /// Cell counts per axis.
    pub shape: Vec<u32>,
    pub arity: u8,
}

impl GridHeader {
    pub fn new(bounds: Vec<(f64, f64)>, shape: Vec<u32>, arity: u8) -> Result<Self> {
        let header = Self { version: VERSION, bounds, shape, arity };
        header.validate()?;
        Ok(header)
    }

    fn validate(&self) -> Result<()> {
        if self.bounds.len() != self.shape.len() || self.bounds.len() < 2 {
            return Err(Error::invalid("grid needs a time axis and at least one space axis"));
        }
        if self.bounds.len() > u8::MAX as usize {
            return Err(Error::invalid("too many grid axes"));
        }
        for (lo, hi) in &self.bounds {
            if !(lo.is_finite() && hi.is_finite() && lo < hi) {
                return Err(Error::invalid(format!("grid axis bounds [{lo}, {hi}] must satisfy lo < hi")));
            }
        }
        if self.shape.iter().any(|&n| n == 0) {
            return Err(Error::invalid("grid axes need at least one cell"));
        }
        if self.arity == 0 {
            return Err(Error::invalid("grid value arity must be positive"));
        }
        Ok(())
    }

    pub fn axes(&self) -> usize {
        self.shape.len()
    }

    pub fn cells(&self) -> usize {
        self.shape.iter().map(|&n| n as usize).product()
    }

    pub fn value_count(&self) -> usize {
        self.cells() * self.arity as usize
    }

    /// Coordinate of cell centre `j` on `axis`.
    pub fn centre(&self, axis: usize, j: usize) -> f64 {
        let (lo, hi) = self.bounds[axis];
        lo + (j as f64 + 0.5) * (hi - lo) / self.shape[axis] as f64
    }
}

/// Samples on a rectangular space-time grid, evaluated by interpolation.
#[derive(Debug, Clone)]
pub struct GridField {
    header: GridHeader,
    values: Vec<f64>,
    interpolation: Interpolation,
}

impl GridField {
    pub fn new(header: GridHeader, values: Vec<f64>, interpolation: Interpolation) -> Result<Self> {
        header.validate()?;
        if values.len() != header.value_count() {
            return Err(Error::Mismatch(format!(
                "grid shape needs {} values, found {}",
                header.value_count(),
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("grid contains non-finite values"));
        }
        Ok(Self { header, values, interpolation })
    }

    /// Samples `f(t, x, out)` at every cell centre.
    pub fn sample<F>(header: GridHeader, interpolation: Interpolation, f: F) -> Result<Self>
    where
        F: Fn(f64, &[f64], &mut [f64]) -> Result<()>,
    {
        header.validate()?;
        let arity = header.arity as usize;
        let axes = header.axes();
        let mut values = vec![0.0; header.value_count()];
        let mut point = vec![0.0; axes];
        for (cell, chunk) in values.chunks_mut(arity).enumerate() {
            let mut rem = cell;
            for axis in (0..axes).rev() {
                let n = header.shape[axis] as usize;
                point[axis] = header.centre(axis, rem % n);
                rem /= n;
            }
            f(point[0], &point[1..], chunk)?;
        }
        Self::new(header, values, interpolation)
    }

    pub fn header(&self) -> &GridHeader {
        &self.header
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn interpolation(&self) -> Interpolation {
        self.interpolation
    }

    pub fn dim(&self) -> usize {
        self.header.axes() - 1
    }

    /// Interpolated value at `(t, x)`; outside the grid the boundary value
    /// is extended.
    pub fn evaluate(&self, t: f64, x: &[f64], out: &mut [f64]) -> Result<()> {
        let axes = self.header.axes();
        let arity = self.header.arity as usize;
        if x.len() + 1 != axes || out.len() != arity {
            return Err(Error::invalid("grid evaluation has the wrong dimension"));
        }
        // per axis: lower index and fractional weight of the upper neighbour
        let mut lower = [0usize; 8];
        let mut frac = [0.0f64; 8];
        let mut lower_v = Vec::new();
        let mut frac_v = Vec::new();
        let (lower, frac): (&mut [usize], &mut [f64]) = if axes <= 8 {
            (&mut lower[..axes], &mut frac[..axes])
        } else {
            lower_v.resize(axes, 0);
            frac_v.resize(axes, 0.0);
            (&mut lower_v[..], &mut frac_v[..])
        };
        for axis in 0..axes {
            let u = if axis == 0 { t } else { x[axis - 1] };
            let (lo, hi) = self.header.bounds[axis];
            let n = self.header.shape[axis] as usize;
            let s = ((u - lo) / (hi - lo) * n as f64 - 0.5).clamp(0.0, (n - 1) as f64);
            match self.interpolation {
                Interpolation::Nearest => {
                    lower[axis] = (s + 0.5).floor().min((n - 1) as f64) as usize;
                    frac[axis] = 0.0;
                }
                Interpolation::Multilinear => {
                    let i0 = (s.floor() as usize).min(n.saturating_sub(2));
                    lower[axis] = i0;
                    frac[axis] = if n == 1 { 0.0 } else { s - i0 as f64 };
                }
            }
        }
        out.fill(0.0);
        for corner in 0..(1usize << axes) {
            let mut weight = 1.0;
            let mut offset = 0usize;
            for axis in 0..axes {
                let up = (corner >> (axes - 1 - axis)) & 1 == 1;
                let w = if up { frac[axis] } else { 1.0 - frac[axis] };
                if w == 0.0 {
                    weight = 0.0;
                    break;
                }
                weight *= w;
                let idx = lower[axis] + up as usize;
                offset = offset * self.header.shape[axis] as usize + idx;
            }
            if weight == 0.0 {
                continue;
            }
            let base = offset * arity;
            for (o, v) in out.iter_mut().zip(&self.values[base..base + arity]) {
                *o += weight * v;
            }
        }
        Ok(())
    }

    /// Wraps the grid as a coefficient field.
    pub fn into_field(self, role: GridRole) -> Result<CoefficientField> {
        let dim = self.dim();
        let arity = self.header.arity as usize;
        let grid = Arc::new(self);
        match role {
            GridRole::Drift => {
                if arity != dim {
                    return Err(Error::Mismatch(format!("drift grid needs arity {dim}, found {arity}")));
                }
                let g = Arc::clone(&grid);
                let drift: Arc<VectorFn> = Arc::new(move |t, x: &[f64], out: &mut [f64]| g.evaluate(t, x, out));
                let support = grid.header.bounds[1..].to_vec();
                Ok(CoefficientField::new("grid-drift", dim, dim, identity_sigma(dim, dim), drift)?
                    .with_kind(FieldKind::Grid)
                    .with_drift_support(Some(support)))
            }
            GridRole::Sigma { noise_dim } => {
                if arity != dim * noise_dim {
                    return Err(Error::Mismatch(format!(
                        "sigma grid needs arity {}, found {arity}",
                        dim * noise_dim
                    )));
                }
                let delta = sampled_delta(&grid.values, dim, noise_dim);
                let g = Arc::clone(&grid);
                let sigma: Arc<MatrixFn> = Arc::new(move |t, x: &[f64], out: &mut [f64]| g.evaluate(t, x, out));
                Ok(CoefficientField::new("grid-sigma", dim, noise_dim, sigma, zero_vector())?
                    .with_kind(FieldKind::Grid)
                    .with_delta(delta))
            }
        }
    }
}

/// Largest `delta <= 1` with every stored `sigma sigma^*` spectrum inside
/// `[delta, 1/delta]`. Multilinear interpolation of such samples can leave
/// this window, so `ellipticity_check` should still be run on the field.
fn sampled_delta(values: &[f64], dim: usize, noise_dim: usize) -> f64 {
    let mut delta = 1.0f64;
    for chunk in values.chunks(dim * noise_dim) {
        let s = DMatrix::from_row_slice(dim, noise_dim, chunk);
        let eig = (&s * s.transpose()).symmetric_eigenvalues();
        let lo = eig.min();
        if lo <= 0.0 {
            return f64::MIN_POSITIVE;
        }
        delta = delta.min(lo).min(1.0 / eig.max());
    }
    delta
}

fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

/// Writes the grid in the binary format plus a `<path>.json` header sidecar.
pub fn save_grid_field(path: &Path, grid: &GridField) -> Result<()> {
    let h = &grid.header;
    let mut bytes = Vec::with_capacity(16 + 20 * h.axes() + 8 * grid.values.len());
    bytes.extend_from_slice(MAGIC);
    bytes.extend_from_slice(&h.version.to_le_bytes());
    bytes.push(h.axes() as u8);
    for ((lo, hi), n) in h.bounds.iter().zip(&h.shape) {
        bytes.extend_from_slice(&lo.to_le_bytes());
        bytes.extend_from_slice(&hi.to_le_bytes());
        bytes.extend_from_slice(&n.to_le_bytes());
    }
    bytes.push(h.arity);
    for v in &grid.values {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    write_atomic(path, &bytes)?;
    let sidecar = serde_json::to_vec_pretty(h)?;
    write_atomic(&sidecar_path(path), &sidecar)
}

/// Reads a grid file without attaching a role.
pub fn read_grid(path: &Path, interpolation: Interpolation) -> Result<GridField> {
    let bytes = std::fs::read(path)?;
    let mut r = Reader::new(&bytes, path);
    if r.take(8, "magic")? != MAGIC {
        return Err(Error::format(path, "missing MSDEGRID magic"));
    }
    let version = r.u16("header")?;
    if version != VERSION {
        return Err(Error::format(path, format!("unsupported version {version}")));
    }
    let axes = r.u8("header")? as usize;
    let mut bounds = Vec::with_capacity(axes);
    let mut shape = Vec::with_capacity(axes);
    for _ in 0..axes {
        let lo = r.f64("axis table")?;
        let hi = r.f64("axis table")?;
        bounds.push((lo, hi));
        shape.push(r.u32("axis table")?);
    }
    let arity = r.u8("header")?;
    let header = GridHeader { version, bounds, shape, arity };
    header.validate().map_err(|e| Error::format(path, e.to_string()))?;
    let payload = r.rest();
    let expected = header.value_count();
    if payload.len() != expected * 8 {
        return Err(Error::Mismatch(format!(
            "{}: shape needs {expected} values ({} bytes), payload has {} bytes",
            path.display(),
            expected * 8,
            payload.len()
        )));
    }
    let values: Vec<f64> = payload
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect();
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::format(path, "payload contains non-finite values"));
    }
    GridField::new(header, values, interpolation)
}

/// Loads a grid file as a coefficient field.
pub fn load_grid_field(path: &Path, interpolation: Interpolation, role: GridRole) -> Result<CoefficientField> {
    read_grid(path, interpolation)?.into_field(role)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fields::build_drift_inverse;
    use crate::fields::Direction;

    fn affine(t: f64, x: &[f64], out: &mut [f64]) -> Result<()> {
        out[0] = 0.5 + 2.0 * t - 3.0 * x[0] + 0.25 * x[1];
        out[1] = -1.0 + x[0] + x[1] - t;
        Ok(())
    }

    #[test]
    fn multilinear_reproduces_affine_fields() {
        let header = GridHeader::new(vec![(0.0, 1.0), (-1.0, 1.0), (-2.0, 2.0)], vec![5, 7, 9], 2).unwrap();
        let grid = GridField::sample(header, Interpolation::Multilinear, affine).unwrap();
        let mut out = [0.0; 2];
        let mut exact = [0.0; 2];
        for &(t, x0, x1) in &[(0.31, 0.123, -1.1), (0.5, -0.7, 1.5), (0.77, 0.6, 0.0)] {
            grid.evaluate(t, &[x0, x1], &mut out).unwrap();
            affine(t, &[x0, x1], &mut exact).unwrap();
            for k in 0..2 {
                assert!((out[k] - exact[k]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn out_of_bounds_extends_boundary_value() {
        let header = GridHeader::new(vec![(0.0, 1.0), (0.0, 1.0)], vec![2, 4], 1).unwrap();
        let grid =
            GridField::sample(header, Interpolation::Multilinear, |_t, x, out| {
                out[0] = x[0];
                Ok(())
            })
            .unwrap();
        let mut out = [0.0];
        grid.evaluate(0.5, &[5.0], &mut out).unwrap();
        assert_eq!(out[0], 0.875);
        grid.evaluate(-3.0, &[-5.0], &mut out).unwrap();
        assert_eq!(out[0], 0.125);
    }

    #[test]
    fn nearest_picks_cell_value() {
        let header = GridHeader::new(vec![(0.0, 1.0), (0.0, 1.0)], vec![1, 4], 1).unwrap();
        let grid = GridField::sample(header, Interpolation::Nearest, |_t, x, out| {
            out[0] = x[0];
            Ok(())
        })
        .unwrap();
        let mut out = [0.0];
        grid.evaluate(0.2, &[0.3], &mut out).unwrap();
        assert_eq!(out[0], 0.375);
    }

    #[test]
    fn round_trip_is_exact_at_centres() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("b.grid");
        let analytic = build_drift_inverse(0.5, 2, Direction::RadialIn).unwrap();
        let header = GridHeader::new(vec![(0.0, 1.0), (-1.0, 1.0), (-1.0, 1.0)], vec![3, 8, 8], 2).unwrap();
        let grid = GridField::sample(header.clone(), Interpolation::Multilinear, |t, x, out| {
            analytic.drift_into(t, x, out)
        })
        .unwrap();
        save_grid_field(&path, &grid).unwrap();
        assert!(sidecar_path(&path).exists());
        let field = load_grid_field(&path, Interpolation::Multilinear, GridRole::Drift).unwrap();
        assert_eq!(field.kind(), FieldKind::Grid);
        for i in 0..3 {
            for j in 0..8 {
                for k in 0..8 {
                    let t = header.centre(0, i);
                    let x = [header.centre(1, j), header.centre(2, k)];
                    assert_eq!(field.drift(t, &x).unwrap(), analytic.drift(t, &x).unwrap());
                }
            }
        }
        let sidecar: GridHeader =
            serde_json::from_slice(&std::fs::read(sidecar_path(&path)).unwrap()).unwrap();
        assert_eq!(sidecar, header);
    }

    #[test]
    fn truncated_payload_is_a_shape_mismatch() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.grid");
        let header = GridHeader::new(vec![(0.0, 1.0), (0.0, 1.0)], vec![2, 2], 1).unwrap();
        let grid = GridField::new(header, vec![1.0, 2.0, 3.0, 4.0], Interpolation::Nearest).unwrap();
        save_grid_field(&path, &grid).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        bytes.truncate(bytes.len() - 8);
        std::fs::write(&path, &bytes).unwrap();
        assert!(matches!(read_grid(&path, Interpolation::Nearest), Err(Error::Mismatch(_))));
    }

    #[test]
    fn malformed_header_and_non_finite_values_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.grid");
        std::fs::write(&path, b"NOTAGRID").unwrap();
        assert!(matches!(read_grid(&path, Interpolation::Nearest), Err(Error::Format { .. })));
        let header = GridHeader::new(vec![(0.0, 1.0), (0.0, 1.0)], vec![1, 1], 1).unwrap();
        assert!(GridField::new(header, vec![f64::NAN], Interpolation::Nearest).is_err());
    }

    #[test]
    fn sigma_role_checks_arity_and_delta() {
        let header = GridHeader::new(vec![(0.0, 1.0), (0.0, 1.0)], vec![1, 3], 1).unwrap();
        let grid = GridField::new(header, vec![1.0, 2.0, 1.5], Interpolation::Multilinear).unwrap();
        let f = grid.clone().into_field(GridRole::Sigma { noise_dim: 1 }).unwrap();
        assert!((f.delta() - 0.25).abs() < 1e-15);
        assert!(grid.into_field(GridRole::Sigma { noise_dim: 2 }).is_err());
    }
}
