use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::ensemble::PathSource;
use crate::error::{Error, Result};
use crate::stats::{ks_distance, quantile};

/// Scalar statistic of the path at the requested times.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TestFunctional {
    /// Coordinate `index` of `x_t`.
    Coordinate { index: usize },
    /// `|x_t|`
    Norm,
    /// `|x_{t_j} - x_{t_{j-1}}|`, with `t_{-1}` the start time.
    IncrementNorm,
}

impl TestFunctional {
    /// Every coordinate, the norm and the increment norm.
    pub fn default_set(dim: usize) -> Vec<Self> {
        let mut v: Vec<Self> = (0..dim).map(|index| Self::Coordinate { index }).collect();
        v.push(Self::Norm);
        v.push(Self::IncrementNorm);
        v
    }

    fn label(&self, t: f64) -> String {
        match self {
            Self::Coordinate { index } => format!("x[{index}]({t})"),
            Self::Norm => format!("|x({t})|"),
            Self::IncrementNorm => format!("|dx({t})|"),
        }
    }
}

/// Columns of test statistics, one `Vec` per (functional, time) pair.
pub(crate) fn statistic_columns<S: PathSource>(src: &S, times: &[f64], functionals: &[TestFunctional]) -> Result<(Vec<String>, Vec<Vec<f64>>)> {
    if times.is_empty() || functionals.is_empty() {
        return Err(Error::invalid("need at least one time and one test functional"));
    }
    let grid = src.grid();
    let steps: Vec<usize> = times.iter().map(|&t| grid.index_of(t)).collect::<Result<_>>()?;
    let d = src.dim();
    for f in functionals {
        if let TestFunctional::Coordinate { index } = f {
            if *index >= d {
                return Err(Error::invalid(format!("coordinate {index} out of range")));
            }
        }
    }
    let rows = src.map_paths(|p| {
        let mut row = Vec::with_capacity(functionals.len() * steps.len());
        for f in functionals {
            for (j, &k) in steps.iter().enumerate() {
                let x = p.state(k);
                row.push(match f {
                    TestFunctional::Coordinate { index } => x[*index],
                    TestFunctional::Norm => x.iter().map(|v| v * v).sum::<f64>().sqrt(),
                    TestFunctional::IncrementNorm => {
                        let prev = p.state(if j == 0 { 0 } else { steps[j - 1] });
                        x.iter().zip(prev).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt()
                    }
                });
            }
        }
        Ok(row)
    })?;
    let labels: Vec<String> = functionals.iter().flat_map(|f| times.iter().map(move |&t| f.label(t))).collect();
    let columns = (0..labels.len()).map(|c| rows.iter().map(|r| r[c]).collect()).collect();
    Ok((labels, columns))
}

fn check_same_start<A: PathSource, B: PathSource>(a: &A, b: &B) -> Result<()> {
    let (ga, gb) = (a.grid(), b.grid());
    let close = |x: f64, y: f64| (x - y).abs() <= 1e-12 * x.abs().max(y.abs()).max(1.0);
    if !close(ga.t0, gb.t0) || !close(ga.horizon(), gb.horizon()) {
        return Err(Error::Mismatch("ensembles have different start times or horizons".into()));
    }
    if a.x0() != b.x0() {
        return Err(Error::Mismatch("ensembles have different starting points".into()));
    }
    Ok(())
}

/// Result of a two-ensemble comparison.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FddReport {
    pub labels: Vec<String>,
    pub distances: Vec<f64>,
    pub max_distance: f64,
    pub threshold: f64,
    pub pass: bool,
}

/// Two-sample KS distances of every test statistic between two ensembles.
/// Passes when the largest distance is below `threshold`.
pub fn fdd_compare<A: PathSource, B: PathSource>(
    a: &A,
    b: &B,
    times: &[f64],
    functionals: &[TestFunctional],
    threshold: f64,
) -> Result<FddReport> {
    check_same_start(a, b)?;
    let (labels, ca) = statistic_columns(a, times, functionals)?;
    let (_, cb) = statistic_columns(b, times, functionals)?;
    let distances: Vec<f64> = ca.iter().zip(&cb).map(|(x, y)| ks_distance(x, y)).collect();
    let max_distance = distances.iter().copied().fold(0.0, f64::max);
    Ok(FddReport { labels, distances, max_distance, threshold, pass: max_distance < threshold })
}

/// Calibrated two-sample threshold from a same-law null run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NullCalibration {
    /// Empirical `level` quantile of the max KS distance over random splits.
    pub threshold: f64,
    pub level: f64,
    pub splits: usize,
    /// Max KS distance between the two null ensembles themselves.
    pub null_distance: f64,
    pub null_pass: bool,
}

/// Max KS distance over columns for a labelling of the pooled sample,
/// using precomputed orderings so each split costs one pass per column.
fn split_max_ks(orders: &[(Vec<usize>, Vec<bool>)], label: &[bool], na: usize, nb: usize) -> f64 {
    let mut best: f64 = 0.0;
    for (order, tie_next) in orders {
        let (mut ia, mut ib) = (0usize, 0usize);
        for (pos, &i) in order.iter().enumerate() {
            if label[i] {
                ia += 1;
            } else {
                ib += 1;
            }
            if !tie_next[pos] {
                best = best.max((ia as f64 / na as f64 - ib as f64 / nb as f64).abs());
            }
        }
    }
    best
}

/// Threshold for `fdd_compare` at matched path counts: pools two
/// independent ensembles of the same law, splits the pool at random
/// `splits` times and takes the `level` quantile of the max KS distance.
pub fn calibrate_threshold<A: PathSource, B: PathSource>(
    null_a: &A,
    null_b: &B,
    times: &[f64],
    functionals: &[TestFunctional],
    splits: usize,
    level: f64,
    seed: u64,
) -> Result<NullCalibration> {
    if splits == 0 || !(0.0..1.0).contains(&level) {
        return Err(Error::invalid("need at least one split and a level in [0, 1)"));
    }
    check_same_start(null_a, null_b)?;
    let (_, ca) = statistic_columns(null_a, times, functionals)?;
    let (_, cb) = statistic_columns(null_b, times, functionals)?;
    let na = null_a.path_count();
    let nb = null_b.path_count();
    let null_distance = ca.iter().zip(&cb).map(|(x, y)| ks_distance(x, y)).fold(0.0, f64::max);
    let orders: Vec<(Vec<usize>, Vec<bool>)> = ca
        .iter()
        .zip(&cb)
        .map(|(x, y)| {
            let pooled: Vec<f64> = x.iter().chain(y).copied().collect();
            let mut order: Vec<usize> = (0..pooled.len()).collect();
            order.sort_by(|&i, &j| pooled[i].total_cmp(&pooled[j]));
            let tie_next = (0..order.len())
                .map(|p| p + 1 < order.len() && pooled[order[p]] == pooled[order[p + 1]])
                .collect();
            (order, tie_next)
        })
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut label: Vec<bool> = (0..na + nb).map(|i| i < na).collect();
    let stats: Vec<f64> = (0..splits)
        .map(|_| {
            label.shuffle(&mut rng);
            split_max_ks(&orders, &label, na, nb)
        })
        .collect();
    let threshold = quantile(&stats, level);
    Ok(NullCalibration { threshold, level, splits, null_distance, null_pass: null_distance < threshold })
}
