use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::pde::SpaceFn;
use crate::error::{Error, Result};
use crate::simulate::{PathEnsemble, PathSource};

/// Orthogonal projection onto the range of `tau = sigma^* sigma`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RangeProjection {
    pub sigma: DMatrix<f64>,
    pub tau: DMatrix<f64>,
    pub projection: DMatrix<f64>,
    pub rank: usize,
}

impl RangeProjection {
    /// Largest entry of `P^2 - P`, `P tau - tau` and `sigma P - sigma`.
    pub fn identity_defects(&self) -> [f64; 3] {
        let p = &self.projection;
        let max = |m: DMatrix<f64>| m.amax();
        [max(p * p - p), max(p * &self.tau - &self.tau), max(&self.sigma * p - &self.sigma)]
    }
}

/// Right singular vectors of `sigma` span the eigenspaces of `tau`; those
/// with `s^2 > 1e-12 s_max^2` span its range.
pub fn range_projection(sigma: &DMatrix<f64>) -> RangeProjection {
    let d1 = sigma.ncols();
    let tau = sigma.transpose() * sigma;
    // pad to at least d1 rows so the SVD returns a full right basis
    let mut padded = DMatrix::zeros(sigma.nrows().max(d1), d1);
    padded.view_mut((0, 0), (sigma.nrows(), d1)).copy_from(sigma);
    let svd = padded.svd(false, true);
    let v_t = svd.v_t.expect("requested");
    let s_max = svd.singular_values.max();
    let mut projection = DMatrix::zeros(d1, d1);
    let mut rank = 0;
    if s_max > 0.0 && s_max.is_finite() {
        for (i, s) in svd.singular_values.iter().enumerate() {
            if s * s > 1e-12 * s_max * s_max {
                let v = v_t.row(i).transpose();
                projection += &v * v.transpose();
                rank += 1;
            }
        }
    }
    RangeProjection { sigma: sigma.clone(), tau, projection, rank }
}

/// Least-squares projection of `xi = f(x_r)` on discretized iterated Ito
/// integrals of piecewise-constant time functions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProjectionReport {
    pub order: usize,
    pub cells: usize,
    pub features: usize,
    /// Residual sum of squares divided by the path count.
    pub residual: f64,
    pub std_error: f64,
    /// Ratio of extreme diagonal entries of the scaled `R` factor.
    pub condition: f64,
}

fn default_cells(order: usize) -> usize {
    match order {
        0 | 1 => 16,
        2 => 8,
        _ => 4,
    }
}

/// Nonincreasing cell tuples of length `m` over `cells` cells.
fn cell_tuples(m: usize, cells: usize) -> Vec<Vec<usize>> {
    let mut out = vec![vec![]];
    for _ in 0..m {
        out = out
            .into_iter()
            .flat_map(|t: Vec<usize>| {
                let top = t.last().copied().unwrap_or(cells - 1);
                (0..=top).map(move |j| {
                    let mut n = t.clone();
                    n.push(j);
                    n
                })
            })
            .collect();
    }
    out
}

/// Regression estimate of `E|xi - Pi^n xi|^2` from stored increments.
/// `r` is an absolute time on the ensemble grid.
pub fn project_mc(ens: &PathEnsemble, f: &SpaceFn<'_>, r: f64, n: usize, cells: Option<usize>) -> Result<ProjectionReport> {
    if n > 3 {
        return Err(Error::invalid("regression projection supports orders up to 3"));
    }
    if ens.increments.is_none() {
        return Err(Error::invalid("ensemble does not carry increments"));
    }
    let k_end = ens.grid().index_of(r)?;
    let cells = cells.unwrap_or_else(|| default_cells(n));
    if cells == 0 || k_end < cells {
        return Err(Error::invalid("need at least one step per basis cell"));
    }
    let d1 = ens.noise_dim;
    // feature layout: per order m, per cell tuple, per noise multi-index
    let orders: Vec<Vec<Vec<usize>>> = (0..=n).map(|m| cell_tuples(m, cells)).collect();
    let width = |m: usize| d1.pow(m as u32);
    let features: usize = (0..=n).map(|m| orders[m].len() * width(m)).sum();
    if features >= ens.paths {
        return Err(Error::invalid(format!("{features} regressors need more than {} paths", ens.paths)));
    }
    // index of (tuple, kidx) in the dense per-order table of size (cells*d1)^m
    let dense = |tuple: &[usize], kidx: usize| -> usize {
        let mut idx = 0;
        let m = tuple.len();
        for (pos, &j) in tuple.iter().enumerate() {
            let k = (kidx / d1.pow((m - 1 - pos) as u32)) % d1;
            idx = idx * cells * d1 + j * d1 + k;
        }
        idx
    };
    let cd = cells * d1;
    let rows = ens.map_paths(|p| {
        // running iterated integrals, dense over (cell, noise) slots
        let mut levels: Vec<Vec<f64>> = (0..=n).map(|m| vec![0.0; cd.pow(m as u32)]).collect();
        levels[0][0] = 1.0;
        for s in 0..k_end {
            let c = s * cells / k_end;
            let dw = p.increment(s)?;
            for m in (1..=n).rev() {
                let (lower, upper) = levels.split_at_mut(m);
                let prev = &lower[m - 1];
                let cur = &mut upper[0];
                let inner = prev.len();
                for (k, w) in dw.iter().enumerate() {
                    let slot = c * d1 + k;
                    for (q, v) in prev.iter().enumerate() {
                        cur[slot * inner + q] += w * v;
                    }
                }
            }
        }
        let mut row = Vec::with_capacity(features + 1);
        for m in 0..=n {
            for tuple in &orders[m] {
                for kidx in 0..width(m) {
                    row.push(levels[m][dense(tuple, kidx)]);
                }
            }
        }
        row.push(f(p.state(k_end)));
        Ok(row)
    })?;
    let m = rows.len();
    let x = DMatrix::from_fn(m, features, |i, j| rows[i][j]);
    let y = nalgebra::DVector::from_iterator(m, rows.iter().map(|r| r[features]));
    let scales: Vec<f64> = (0..features).map(|j| x.column(j).norm().max(f64::MIN_POSITIVE)).collect();
    let mut xs = x.clone();
    for (j, s) in scales.iter().enumerate() {
        xs.column_mut(j).scale_mut(1.0 / s);
    }
    let qr = xs.clone().qr();
    let rmat = qr.r();
    let diag: Vec<f64> = (0..features).map(|i| rmat[(i, i)].abs()).collect();
    let (lo, hi) = diag.iter().fold((f64::INFINITY, 0.0f64), |(a, b), v| (a.min(*v), b.max(*v)));
    let condition = if lo > 0.0 { hi / lo } else { f64::INFINITY };
    if !(condition < 1e10) {
        return Err(Error::IllConditioned { condition });
    }
    let qty = qr.q().transpose() * &y;
    let beta = rmat.solve_upper_triangular(&qty).ok_or(Error::IllConditioned { condition })?;
    let fitted = xs * beta;
    let sq: Vec<f64> = y.iter().zip(fitted.iter()).map(|(a, b)| (a - b).powi(2)).collect();
    let (residual, std_error) = crate::stats::mean_and_std_error(&sq);
    Ok(ProjectionReport { order: n, cells, features, residual, std_error, condition })
}
