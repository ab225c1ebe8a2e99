use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::pde::{build_grid, PdeConfig, PdeGrid, Semigroup, SpaceFn};
use crate::error::{Error, Result};
use crate::fields::CoefficientField;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ChaosConfig {
    pub pde: PdeConfig,
    /// Intervals per simplex axis; by default 32, 12 or 6 (1D) and 16, 8 or 4
    /// (2D) for top energy order at most 2, 3, or more.
    pub time_intervals: Option<usize>,
    /// PDE steps per simplex interval.
    pub substeps: usize,
    /// Abort when the estimated flop count exceeds this.
    pub max_work: f64,
}

impl Default for ChaosConfig {
    fn default() -> Self {
        Self { pde: PdeConfig::default(), time_intervals: None, substeps: 4, max_work: 5e10 }
    }
}

fn default_intervals(dim: usize, top: usize) -> usize {
    let table = if dim == 1 { [32, 12, 6] } else { [16, 8, 4] };
    match top {
        0..=2 => table[0],
        3 => table[1],
        _ => table[2],
    }
}

fn default_chaos_nodes(dim: usize) -> usize {
    if dim == 1 {
        201
    } else {
        41
    }
}

/// Terms of one order on the discrete simplex.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OrderTerms {
    pub m: usize,
    /// Time-node indices `j_1 >= ... >= j_m` (`t_1` latest).
    pub tuples: Vec<Vec<usize>>,
    pub weights: Vec<f64>,
    /// Weights of the half-resolution rule; zero off the coarse nodes.
    pub coarse_weights: Vec<f64>,
    /// Noise indices `(k_1, ..., k_m)` in the order used by `coefficients`.
    pub multi_indices: Vec<Vec<usize>>,
    /// `T_{t, t_m} Q ... Q f (x)` per tuple and multi-index; absent for the
    /// top order, which only carries energies.
    pub coefficients: Option<Vec<Vec<f64>>>,
    /// Gradients in `x` of the coefficients, per tuple, multi-index, axis.
    pub gradients: Option<Vec<Vec<Vec<f64>>>>,
    /// `sum_k T_{t, t_m} [Q ... Q f]^2 (x)` per tuple.
    pub energy: Vec<f64>,
}

impl OrderTerms {
    fn integrate(&self, values: impl Fn(usize) -> f64) -> (f64, f64) {
        let mut fine = 0.0;
        let mut coarse = 0.0;
        for i in 0..self.tuples.len() {
            let v = values(i);
            fine += self.weights[i] * v;
            coarse += self.coarse_weights[i] * v;
        }
        (fine, coarse)
    }
}

/// Truncated chaos data of `xi = f(x_r)` for the diffusion started at `(t, x)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChaosExpansion {
    pub order: usize,
    pub t: f64,
    pub r: f64,
    pub x: Vec<f64>,
    pub noise_dim: usize,
    pub time_nodes: Vec<f64>,
    /// `T_{t,r} f (x)`, the order-0 coefficient.
    pub value: f64,
    pub gradient: Vec<f64>,
    /// Orders `1..=order + 1`.
    pub orders: Vec<OrderTerms>,
    pub grid: PdeGrid,
    pub dt_pde: f64,
}

impl ChaosExpansion {
    fn terms(&self, m: usize) -> Result<&OrderTerms> {
        if m == 0 || m > self.orders.len() {
            return Err(Error::invalid(format!("order {m} not computed (expansion order {})", self.order)));
        }
        Ok(&self.orders[m - 1])
    }

    /// `E |xi - Pi^n xi|^2`, the simplex integral of the order `n+1` energy.
    pub fn residual_energy(&self, n: usize) -> Result<f64> {
        let t = self.terms(n + 1)?;
        Ok(t.integrate(|i| t.energy[i]).0)
    }

    /// Richardson-style error proxy `|I_h - I_{2h}| / 3` of `residual_energy`.
    pub fn residual_quadrature_error(&self, n: usize) -> Result<f64> {
        let t = self.terms(n + 1)?;
        let (fine, coarse) = t.integrate(|i| t.energy[i]);
        Ok((fine - coarse).abs() / 3.0)
    }

    /// `sum_k int_{Gamma^m} c_m^2`, the energy carried by chaos order `m`.
    pub fn coefficient_energy(&self, m: usize) -> Result<f64> {
        let t = self.terms(m)?;
        let c = t.coefficients.as_ref().ok_or_else(|| Error::invalid("top order carries no coefficients"))?;
        Ok(t.integrate(|i| c[i].iter().map(|v| v * v).sum()).0)
    }

    /// `sum_k int_{Gamma^m} [(c_m)_(eta)]^2` with its error proxy.
    pub fn directional_energy(&self, m: usize, eta: &[f64]) -> Result<(f64, f64)> {
        let t = self.terms(m)?;
        let g = t.gradients.as_ref().ok_or_else(|| Error::invalid("top order carries no coefficients"))?;
        let (fine, coarse) = t.integrate(|i| {
            g[i].iter().map(|grad| grad.iter().zip(eta).map(|(a, b)| a * b).sum::<f64>().powi(2)).sum()
        });
        Ok((fine, (fine - coarse).abs() / 3.0))
    }
}

/// Trapezoid weight on the ordered simplex: tensor weight divided by the
/// factorials of tie multiplicities, which is exact for constants.
fn simplex_weight(tuple: &[usize], intervals: usize, h: f64) -> f64 {
    let mut w = 1.0;
    for &j in tuple {
        w *= if j == 0 || j == intervals { 0.5 * h } else { h };
    }
    let mut run = 1;
    for k in 1..tuple.len() {
        if tuple[k] == tuple[k - 1] {
            run += 1;
            w /= run as f64;
        } else {
            run = 1;
        }
    }
    w
}

fn binomial(n: usize, k: usize) -> f64 {
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

struct Record {
    m: usize,
    tuple: Vec<usize>,
    kidx: usize,
    coefficient: Option<(f64, Vec<f64>)>,
    energy: f64,
}

struct Ctx<'a> {
    sg: Semigroup<'a>,
    substeps: usize,
    order: usize,
    x: Vec<f64>,
    noise_dim: usize,
    /// `sigma` on the grid at each simplex node, `d x d1` per grid node.
    sigma: Vec<Vec<f64>>,
}

impl Ctx<'_> {
    /// `g^k = sigma^{ik} D_i h` at node `i`.
    fn q_apply(&self, h: &[f64], node: usize) -> Vec<Vec<f64>> {
        let grid = self.sg.grid();
        let d = grid.dim();
        let d1 = self.noise_dim;
        let grads = grid.gradient(h);
        let s = &self.sigma[node];
        (0..d1)
            .map(|k| (0..grid.len()).map(|p| (0..d).map(|a| s[p * d * d1 + a * d1 + k] * grads[a][p]).sum()).collect())
            .collect()
    }

    /// Walks all tuples extending `prefix`, given `slices[i] = T_{t_i, t_prev} g`.
    /// `first` is the node index of `slices[0]`.
    fn recurse(&self, m: usize, slices: &[Vec<f64>], first: usize, prefix: &[usize], kprefix: usize, out: &mut Vec<Record>) -> Result<()> {
        let grid = self.sg.grid();
        for (offset, h) in slices.iter().enumerate() {
            let i = first + offset;
            let mut tuple = prefix.to_vec();
            tuple.push(i);
            let g = self.q_apply(h, i);
            let sq: Vec<f64> = (0..grid.len()).map(|p| g.iter().map(|gk| gk[p] * gk[p]).sum()).collect();
            let energy_slice = if i == 0 { sq } else { self.sg.solve_to(&sq, i * self.substeps, 0)? };
            out.push(Record { m: m + 1, tuple: tuple.clone(), kidx: kprefix, coefficient: None, energy: grid.interpolate(&energy_slice, &self.x) });
            if m + 1 > self.order {
                continue;
            }
            for (k, gk) in g.iter().enumerate() {
                let kidx = kprefix * self.noise_dim + k;
                let sub = self.sg.solve(gk, i * self.substeps, 0, self.substeps)?;
                out.push(Record {
                    m: m + 1,
                    tuple: tuple.clone(),
                    kidx,
                    coefficient: Some((grid.interpolate(&sub[0], &self.x), grid.gradient_at(&sub[0], &self.x))),
                    energy: 0.0,
                });
                self.recurse(m + 1, &sub, 0, &tuple, kidx, out)?;
            }
        }
        Ok(())
    }
}

/// Chaos coefficients of `f(x_r)` through order `n`, plus the energy
/// integrands through order `n + 1`, for the diffusion started at `(t, x)`.
pub fn chaos_coefficients(field: &CoefficientField, f: &SpaceFn<'_>, t: f64, r: f64, x: &[f64], n: usize, cfg: &ChaosConfig) -> Result<ChaosExpansion> {
    if n > 4 {
        return Err(Error::Budget("expansions are limited to order 4".into()));
    }
    if !(r > t) || cfg.substeps == 0 {
        return Err(Error::invalid("need t < r and at least one substep"));
    }
    let d = field.dim();
    let d1 = field.noise_dim();
    let top = n + 1;
    let intervals = cfg.time_intervals.unwrap_or_else(|| default_intervals(d, top));
    if intervals < 2 || intervals % 2 == 1 {
        return Err(Error::invalid("simplex intervals must be even and at least 2"));
    }
    let grid = build_grid(field, x, t, r, &cfg.pde, cfg.pde.nodes_per_axis.unwrap_or(default_chaos_nodes(d)))?;
    // solves times average length times nodes times per-node cost
    let mut solves = 0.0;
    for m in 1..=top {
        let tuples = binomial(intervals + m, m);
        solves += tuples * (d1 as f64).powi(m as i32 - 1) * if m <= n { 1.0 + d1 as f64 } else { 1.0 };
    }
    let work = solves * 0.5 * (intervals * cfg.substeps) as f64 * grid.len() as f64 * 12.0 * d as f64;
    if work > cfg.max_work {
        return Err(Error::Budget(format!("estimated {work:.2e} operations exceeds the limit {:.2e}", cfg.max_work)));
    }
    let steps = intervals * cfg.substeps;
    let sg = Semigroup::new(field, grid.clone(), t, r, steps, cfg.pde.rannacher)?;
    let h = (r - t) / intervals as f64;
    let time_nodes: Vec<f64> = (0..=intervals).map(|j| t + j as f64 * h).collect();
    let sigma = time_nodes
        .iter()
        .map(|&s| {
            let mut out = vec![0.0; grid.len() * d * d1];
            for p in 0..grid.len() {
                field.sigma_into(s, &grid.point(p), &mut out[p * d * d1..(p + 1) * d * d1])?;
            }
            Ok(out)
        })
        .collect::<Result<Vec<_>>>()?;
    let ctx = Ctx { sg, substeps: cfg.substeps, order: n, x: x.to_vec(), noise_dim: d1, sigma };
    let terminal = grid.sample(f);
    let base = ctx.sg.solve(&terminal, steps, 0, cfg.substeps)?;
    let value = grid.interpolate(&base[0], x);
    let gradient = grid.gradient_at(&base[0], x);
    // one task per first time node; merged in node order
    let records: Vec<Vec<Record>> = (0..=intervals)
        .into_par_iter()
        .map(|i| {
            let mut out = Vec::new();
            ctx.recurse(0, &base[i..=i], i, &[], 0, &mut out).map(|_| out)
        })
        .collect::<Result<_>>()?;
    Ok(assemble(records, top, n, intervals, h, d1, value, gradient, time_nodes, t, r, x, grid, ctx.sg.dt()))
}

#[allow(clippy::too_many_arguments)]
fn assemble(
    records: Vec<Vec<Record>>,
    top: usize,
    n: usize,
    intervals: usize,
    h: f64,
    d1: usize,
    value: f64,
    gradient: Vec<f64>,
    time_nodes: Vec<f64>,
    t: f64,
    r: f64,
    x: &[f64],
    grid: PdeGrid,
    dt_pde: f64,
) -> ChaosExpansion {
    let mut maps: Vec<BTreeMap<Vec<usize>, usize>> = vec![BTreeMap::new(); top];
    let mut orders: Vec<OrderTerms> = (1..=top)
        .map(|m| {
            let count = d1.pow(m as u32);
            let multi_indices = (0..count)
                .map(|mut c| {
                    let mut v = vec![0; m];
                    for slot in v.iter_mut().rev() {
                        *slot = c % d1;
                        c /= d1;
                    }
                    v
                })
                .collect();
            OrderTerms {
                m,
                tuples: Vec::new(),
                weights: Vec::new(),
                coarse_weights: Vec::new(),
                multi_indices,
                coefficients: (m <= n).then(Vec::new),
                gradients: (m <= n).then(Vec::new),
                energy: Vec::new(),
            }
        })
        .collect();
    for rec in records.into_iter().flatten() {
        let o = &mut orders[rec.m - 1];
        let idx = *maps[rec.m - 1].entry(rec.tuple.clone()).or_insert_with(|| {
            o.weights.push(simplex_weight(&rec.tuple, intervals, h));
            o.coarse_weights.push(if rec.tuple.iter().all(|j| j % 2 == 0) {
                let half: Vec<usize> = rec.tuple.iter().map(|j| j / 2).collect();
                simplex_weight(&half, intervals / 2, 2.0 * h)
            } else {
                0.0
            });
            o.tuples.push(rec.tuple.clone());
            o.energy.push(0.0);
            if let (Some(c), Some(g)) = (o.coefficients.as_mut(), o.gradients.as_mut()) {
                c.push(vec![0.0; o.multi_indices.len()]);
                g.push(vec![Vec::new(); o.multi_indices.len()]);
            }
            o.tuples.len() - 1
        });
        match rec.coefficient {
            Some((v, grad)) => {
                if let (Some(c), Some(g)) = (o.coefficients.as_mut(), o.gradients.as_mut()) {
                    c[idx][rec.kidx] = v;
                    g[idx][rec.kidx] = grad;
                }
            }
            None => o.energy[idx] += rec.energy,
        }
    }
    ChaosExpansion { order: n, t, r, x: x.to_vec(), noise_dim: d1, time_nodes, value, gradient, orders, grid, dt_pde }
}

/// `Q^k_{s,r} f = sigma^{ik}(s, .) D_i T_{s,r} f` on a grid, one vector per `k`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QOperator {
    pub s: f64,
    pub r: f64,
    pub grid: PdeGrid,
    pub values: Vec<Vec<f64>>,
}

impl QOperator {
    pub fn value_at(&self, k: usize, x: &[f64]) -> f64 {
        self.grid.interpolate(&self.values[k], x)
    }
}

pub fn q_operator(field: &CoefficientField, f: &SpaceFn<'_>, s: f64, r: f64, centre: &[f64], cfg: &PdeConfig) -> Result<QOperator> {
    let sol = super::pde::semigroup_solve(field, f, s, r, centre, cfg)?;
    let grid = sol.grid.clone();
    let d = grid.dim();
    let d1 = field.noise_dim();
    let grads = grid.gradient(&sol.values);
    let mut sig = vec![0.0; d * d1];
    let mut values = vec![vec![0.0; grid.len()]; d1];
    for p in 0..grid.len() {
        field.sigma_into(s, &grid.point(p), &mut sig)?;
        for k in 0..d1 {
            values[k][p] = (0..d).map(|a| sig[a * d1 + k] * grads[a][p]).sum();
        }
    }
    Ok(QOperator { s, r, grid, values })
}

/// Residual energies `E|xi - Pi^n xi|^2` for `n = 1..=n_max` and their sums.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummabilityProfile {
    pub residuals: Vec<f64>,
    pub quadrature_errors: Vec<f64>,
    pub running_sums: Vec<f64>,
    pub p: f64,
    /// `(int |Df|^{2p} dx)^{1/p}` on the expansion grid.
    pub gradient_norm: f64,
    /// Smallest constant making the summability bound hold at `n_max`.
    pub smallest_constant: f64,
    /// Regression residuals for the same orders, when paths were supplied.
    pub monte_carlo: Option<Vec<super::projection::ProjectionReport>>,
}

pub fn summability_profile(
    field: &CoefficientField,
    f: &SpaceFn<'_>,
    r: f64,
    x: &[f64],
    n_max: usize,
    p: f64,
    cfg: &ChaosConfig,
    paths: Option<&crate::simulate::PathEnsemble>,
) -> Result<SummabilityProfile> {
    if n_max == 0 || !(p >= 1.0) {
        return Err(Error::invalid("need n_max >= 1 and p >= 1"));
    }
    let exp = chaos_coefficients(field, f, 0.0, r, x, n_max, cfg)?;
    let residuals: Vec<f64> = (1..=n_max).map(|n| exp.residual_energy(n)).collect::<Result<_>>()?;
    let quadrature_errors = (1..=n_max).map(|n| exp.residual_quadrature_error(n)).collect::<Result<_>>()?;
    let running_sums: Vec<f64> = residuals.iter().scan(0.0, |acc, v| {
        *acc += v;
        Some(*acc)
    }).collect();
    let grid = &exp.grid;
    let values = grid.sample(f);
    let grads = grid.gradient(&values);
    let cell = grid.dx().powi(grid.dim() as i32);
    let integral: f64 = (0..grid.len())
        .map(|i| grads.iter().map(|g| g[i] * g[i]).sum::<f64>().powf(p))
        .sum::<f64>()
        * cell;
    let gradient_norm = integral.powf(1.0 / p);
    let total = *running_sums.last().expect("n_max >= 1");
    let smallest_constant = if gradient_norm > 0.0 { total / gradient_norm } else if total == 0.0 { 0.0 } else { f64::INFINITY };
    let monte_carlo = paths
        .map(|ens| (1..=n_max.min(3)).map(|n| super::projection::project_mc(ens, f, r, n, None)).collect::<Result<Vec<_>>>())
        .transpose()?;
    Ok(SummabilityProfile { residuals, quadrature_errors, running_sums, p, gradient_norm, smallest_constant, monte_carlo })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fields::brownian;

    fn square(x: &[f64]) -> f64 {
        x[0] * x[0]
    }

    #[test]
    fn simplex_weights_are_exact_for_constants() {
        for (m, j) in [(1, 8), (2, 8), (3, 6), (4, 4)] {
            let h = 1.0 / j as f64;
            let mut total = 0.0;
            let mut stack = vec![vec![]];
            while let Some(t) = stack.pop() {
                if t.len() == m {
                    total += simplex_weight(&t, j, h);
                    continue;
                }
                let top = t.last().copied().unwrap_or(j);
                for i in 0..=top {
                    let mut n = t.clone();
                    n.push(i);
                    stack.push(n);
                }
            }
            let fact: f64 = (1..=m).map(|v| v as f64).product();
            assert!((total - 1.0 / fact).abs() < 1e-12, "m = {m}: {total}");
        }
    }

    #[test]
    fn brownian_square_expansion() {
        let exp = chaos_coefficients(&brownian(1), &square, 0.0, 1.0, &[0.0], 1, &ChaosConfig::default()).unwrap();
        assert!((exp.value - 1.0).abs() < 1e-6);
        let c1 = exp.orders[0].coefficients.as_ref().unwrap();
        assert!(c1.iter().all(|c| c[0].abs() < 1e-9));
        // order 2 energy integrand is 4 everywhere: residual 2
        assert!(exp.orders[1].energy.iter().all(|e| (e - 4.0).abs() < 1e-6));
        assert!((exp.residual_energy(1).unwrap() - 2.0).abs() < 1e-6);
        // variance E(w^2 - 1)^2 = 2 from the order-1 energy
        assert!((exp.residual_energy(0).unwrap() - 2.0).abs() < 1e-3);
    }

    #[test]
    fn second_order_coefficient_is_two() {
        let cfg = ChaosConfig { time_intervals: Some(8), ..ChaosConfig::default() };
        let exp = chaos_coefficients(&brownian(1), &square, 0.0, 1.0, &[0.0], 2, &cfg).unwrap();
        let c2 = exp.orders[1].coefficients.as_ref().unwrap();
        assert!(c2.iter().all(|c| (c[0] - 2.0).abs() < 1e-6));
        assert!(exp.residual_energy(2).unwrap().abs() < 1e-9);
        // Pythagoras: residual(0) - residual(1) = energy of order 1
        let gap = exp.residual_energy(0).unwrap() - exp.residual_energy(1).unwrap();
        assert!((gap - exp.coefficient_energy(1).unwrap()).abs() < 1e-3);
    }

    #[test]
    fn linear_function_lies_in_first_chaos() {
        let exp = chaos_coefficients(&brownian(1), &|x: &[f64]| x[0], 0.0, 1.0, &[0.0], 1, &ChaosConfig::default()).unwrap();
        assert!(exp.residual_energy(1).unwrap().abs() < 1e-12);
        assert!((exp.residual_energy(0).unwrap() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn q_operator_examples() {
        let cfg = PdeConfig::default();
        let q = q_operator(&brownian(1), &|x: &[f64]| x[0], 0.2, 1.0, &[0.0], &cfg).unwrap();
        assert!((q.value_at(0, &[0.4]) - 1.0).abs() < 1e-9);
        let q = q_operator(&brownian(1), &square, 0.2, 1.0, &[0.0], &cfg).unwrap();
        assert!((q.value_at(0, &[0.4]) - 0.8).abs() < 1e-6);
        let q = q_operator(&brownian(1), &|_: &[f64]| 3.0, 0.2, 1.0, &[0.0], &cfg).unwrap();
        assert!(q.values[0].iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn summability_for_brownian_square() {
        let cfg = ChaosConfig { time_intervals: Some(8), ..ChaosConfig::default() };
        let p = summability_profile(&brownian(1), &square, 1.0, &[0.0], 2, 1.0, &cfg, None).unwrap();
        assert!((p.residuals[0] - 2.0).abs() < 1e-6 && p.residuals[1].abs() < 1e-9);
        assert!((p.running_sums[1] - 2.0).abs() < 1e-6);
        assert!(p.smallest_constant > 0.0 && p.smallest_constant.is_finite());
    }

    #[test]
    fn two_dimensional_expansion_runs() {
        let f = brownian(2);
        let cfg = ChaosConfig { time_intervals: Some(4), pde: PdeConfig { nodes_per_axis: Some(31), ..PdeConfig::default() }, ..ChaosConfig::default() };
        let exp = chaos_coefficients(&f, &|x: &[f64]| x[0] * x[1], 0.0, 1.0, &[0.0, 0.0], 1, &cfg).unwrap();
        // xi = w1 w2 = int w1 dw2 + int w2 dw1: all variance (1/2 + 1/2) sits in order 2
        assert!(exp.value.abs() < 1e-9);
        assert!((exp.residual_energy(0).unwrap() - 1.0).abs() < 0.05);
        assert!((exp.residual_energy(1).unwrap() - 1.0).abs() < 0.05);
        assert_eq!(exp.orders[1].multi_indices.len(), 4);
    }
}
