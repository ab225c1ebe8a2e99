use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fields::CoefficientField;

/// Function of the space variable only.
pub type SpaceFn<'a> = dyn Fn(&[f64]) -> f64 + Sync + 'a;

/// Uniform grid on the cube `centre + [-radius, radius]^d`, same node count
/// on every axis, flattened row-major (axis 0 slowest).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PdeGrid {
    pub centre: Vec<f64>,
    pub radius: f64,
    pub nodes: usize,
}

impl PdeGrid {
    pub fn new(centre: Vec<f64>, radius: f64, nodes: usize) -> Result<Self> {
        if centre.is_empty() || centre.len() > 2 {
            return Err(Error::invalid("grid solver supports d = 1 or 2"));
        }
        if !(radius > 0.0 && radius.is_finite()) {
            return Err(Error::invalid("grid radius must be positive"));
        }
        if nodes < 5 || nodes % 2 == 0 {
            return Err(Error::invalid("node count must be odd and at least 5"));
        }
        Ok(Self { centre, radius, nodes })
    }

    pub fn dim(&self) -> usize {
        self.centre.len()
    }

    pub fn dx(&self) -> f64 {
        2.0 * self.radius / (self.nodes - 1) as f64
    }

    pub fn len(&self) -> usize {
        self.nodes.pow(self.dim() as u32)
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn coord(&self, axis: usize, i: usize) -> f64 {
        self.centre[axis] - self.radius + i as f64 * self.dx()
    }

    pub fn point(&self, flat: usize) -> Vec<f64> {
        match self.dim() {
            1 => vec![self.coord(0, flat)],
            _ => vec![self.coord(0, flat / self.nodes), self.coord(1, flat % self.nodes)],
        }
    }


    pub fn sample(&self, f: &SpaceFn<'_>) -> Vec<f64> {
        (0..self.len()).map(|i| f(&self.point(i))).collect()
    }

    /// Multilinear interpolation; points outside the box are clamped.
    pub fn interpolate(&self, values: &[f64], x: &[f64]) -> f64 {
        let n = self.nodes;
        let dx = self.dx();
        let mut base = [0usize; 2];
        let mut frac = [0.0; 2];
        for a in 0..self.dim() {
            let s = ((x[a] - self.centre[a] + self.radius) / dx).clamp(0.0, (n - 1) as f64);
            let i = (s.floor() as usize).min(n - 2);
            base[a] = i;
            frac[a] = s - i as f64;
        }
        match self.dim() {
            1 => values[base[0]] * (1.0 - frac[0]) + values[base[0] + 1] * frac[0],
            _ => {
                let at = |i: usize, j: usize| values[i * n + j];
                let (i, j) = (base[0], base[1]);
                let (fx, fy) = (frac[0], frac[1]);
                (1.0 - fx) * ((1.0 - fy) * at(i, j) + fy * at(i, j + 1)) + fx * ((1.0 - fy) * at(i + 1, j) + fy * at(i + 1, j + 1))
            }
        }
    }

    /// Gradient at `x` by central differences of the interpolant with step `dx`.
    pub fn gradient_at(&self, values: &[f64], x: &[f64]) -> Vec<f64> {
        let h = self.dx();
        let mut xp = x.to_vec();
        (0..self.dim())
            .map(|a| {
                xp[a] = x[a] + h;
                let up = self.interpolate(values, &xp);
                xp[a] = x[a] - h;
                let down = self.interpolate(values, &xp);
                xp[a] = x[a];
                (up - down) / (2.0 * h)
            })
            .collect()
    }

    /// Nodal gradient, one vector per axis; one-sided differences on edges.
    pub fn gradient(&self, values: &[f64]) -> Vec<Vec<f64>> {
        let n = self.nodes;
        let h = self.dx();
        let d = self.dim();
        (0..d)
            .map(|a| {
                let stride = if d == 1 || a == 1 { 1 } else { n };
                (0..self.len())
                    .map(|flat| {
                        let i = if d == 1 { flat } else if a == 0 { flat / n } else { flat % n };
                        if i == 0 {
                            (values[flat + stride] - values[flat]) / h
                        } else if i == n - 1 {
                            (values[flat] - values[flat - stride]) / h
                        } else {
                            (values[flat + stride] - values[flat - stride]) / (2.0 * h)
                        }
                    })
                    .collect()
            })
            .collect()
    }
}

/// Grid settings. Unset values are chosen from the coefficients.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PdeConfig {
    pub nodes_per_axis: Option<usize>,
    pub radius: Option<f64>,
    /// Time steps over the whole solve.
    pub steps: Option<usize>,
    /// Backward-Euler half steps replacing the first two steps.
    pub rannacher: bool,
}

impl Default for PdeConfig {
    fn default() -> Self {
        Self { nodes_per_axis: None, radius: None, steps: None, rannacher: true }
    }
}

/// Radius such that the transition mass from `centre` leaving the box over
/// `[t, r]` is negligible: six standard deviations plus the drift excursion.
pub fn auto_radius(field: &CoefficientField, centre: &[f64], t: f64, r: f64) -> Result<f64> {
    let tau = r - t;
    let d = centre.len();
    let probe = |half: f64| -> Result<(f64, f64)> {
        let mut a_max: f64 = 0.0;
        let mut b_max: f64 = 0.0;
        let offsets = [-1.0, 0.0, 1.0];
        for &s in &[t, 0.5 * (t + r), r] {
            for idx in crate::quadrature::tensor_indices(3, d) {
                let x: Vec<f64> = idx.iter().enumerate().map(|(a, &i)| centre[a] + offsets[i] * half).collect();
                let a = field.diffusion(s, &x)?;
                a_max = a_max.max(a.diagonal().iter().copied().fold(0.0, f64::max));
                b_max = b_max.max(field.drift_norm(s, &x)?);
            }
        }
        Ok((a_max, b_max))
    };
    let (a0, b0) = probe(0.0)?;
    let pilot = 6.0 * (a0 * tau).sqrt() + b0 * tau;
    let (a1, b1) = probe(pilot.max(1e-6))?;
    let radius = 6.0 * (a1 * tau).sqrt() + b1 * tau;
    Ok(radius.clamp(pilot.max(1e-3), 3.0 * pilot.max(1e-3)))
}

struct StepCoeffs {
    /// `a = sigma sigma^*`, `d x d` per node.
    a: Vec<f64>,
    b: Vec<f64>,
}

/// Backward solver for `du/dt + (1/2) a^{ij} D_ij u + b^i D_i u = 0` on a
/// uniform time grid `t0 + k dt`, `k = 0..=steps`. Crank-Nicolson in 1D,
/// Douglas ADI in 2D (mixed derivative explicit); the lateral boundary keeps
/// the terminal data.
pub struct Semigroup<'a> {
    field: &'a CoefficientField,
    grid: PdeGrid,
    t0: f64,
    dt: f64,
    steps: usize,
    rannacher: bool,
    coeffs: Vec<StepCoeffs>,
}

impl<'a> Semigroup<'a> {
    pub fn new(field: &'a CoefficientField, grid: PdeGrid, t0: f64, r: f64, steps: usize, rannacher: bool) -> Result<Self> {
        if field.dim() != grid.dim() {
            return Err(Error::invalid("grid and field dimensions differ"));
        }
        if !(r > t0) || steps == 0 {
            return Err(Error::invalid("need t < r and at least one step"));
        }
        let d = grid.dim();
        let dt = (r - t0) / steps as f64;
        let slices = if field.is_time_independent() { 1 } else { steps };
        let bytes = slices as f64 * grid.len() as f64 * (d * d + d) as f64 * 8.0;
        if bytes > 2e9 {
            return Err(Error::Budget(format!("coefficient tables need {:.1} GB", bytes / 1e9)));
        }
        let coeffs = (0..slices)
            .into_par_iter()
            .map(|k| {
                let t = t0 + (k as f64 + 0.5) * dt;
                let mut a = Vec::with_capacity(grid.len() * d * d);
                let mut b = Vec::with_capacity(grid.len() * d);
                for flat in 0..grid.len() {
                    let x = grid.point(flat);
                    let am = field.diffusion(t, &x)?;
                    let elliptic = if d == 1 { am[(0, 0)] > 0.0 } else { am[(0, 0)] > 0.0 && am.determinant() > 0.0 };
                    if !elliptic || am.iter().any(|v| !v.is_finite()) {
                        return Err(Error::FieldDefect(format!("diffusion is not elliptic at t = {t}, x = {x:?}")));
                    }
                    a.extend(am.transpose().iter());
                    b.extend(field.drift(t, &x)?);
                }
                Ok(StepCoeffs { a, b })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { field, grid, t0, dt, steps, rannacher, coeffs })
    }

    pub fn grid(&self) -> &PdeGrid {
        &self.grid
    }

    pub fn field(&self) -> &CoefficientField {
        self.field
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn time(&self, k: usize) -> f64 {
        self.t0 + k as f64 * self.dt
    }

    fn coeffs(&self, k: usize) -> &StepCoeffs {
        &self.coeffs[k.min(self.coeffs.len() - 1)]
    }

    /// Steps data given at step `from` back to step `to`, returning the
    /// slices at `to, to + every, ...` up to `from` (ascending).
    pub fn solve(&self, terminal: &[f64], from: usize, to: usize, every: usize) -> Result<Vec<Vec<f64>>> {
        if terminal.len() != self.grid.len() || from > self.steps || to > from || every == 0 {
            return Err(Error::invalid("bad solve range"));
        }
        let mut out = Vec::new();
        let mut u = terminal.to_vec();
        let mut next = vec![0.0; u.len()];
        let keep = |k: usize| k >= to && (k - to) % every == 0;
        if keep(from) {
            out.push(u.clone());
        }
        let mut k = from;
        while k > to {
            let c = self.coeffs(k - 1);
            if self.rannacher && from - k < 2 {
                self.step(&u, &mut next, c, 0.5 * self.dt, 1.0);
                std::mem::swap(&mut u, &mut next);
                self.step(&u, &mut next, c, 0.5 * self.dt, 1.0);
            } else {
                self.step(&u, &mut next, c, self.dt, 0.5);
            }
            std::mem::swap(&mut u, &mut next);
            k -= 1;
            if keep(k) {
                out.push(u.clone());
            }
        }
        out.reverse();
        Ok(out)
    }

    /// Final slice only.
    pub fn solve_to(&self, terminal: &[f64], from: usize, to: usize) -> Result<Vec<f64>> {
        Ok(self.solve(terminal, from, to, (from - to).max(1))?.swap_remove(0))
    }

    fn step(&self, u: &[f64], out: &mut [f64], c: &StepCoeffs, dt: f64, theta: f64) {
        match self.grid.dim() {
            1 => self.step_1d(u, out, c, dt, theta),
            _ => self.step_2d(u, out, c, dt, theta),
        }
    }

    fn step_1d(&self, u: &[f64], out: &mut [f64], c: &StepCoeffs, dt: f64, theta: f64) {
        let n = self.grid.nodes;
        let h = self.grid.dx();
        let mut lo = vec![0.0; n];
        let mut di = vec![1.0; n];
        let mut up = vec![0.0; n];
        let mut rhs = vec![0.0; n];
        rhs[0] = u[0];
        rhs[n - 1] = u[n - 1];
        for i in 1..n - 1 {
            let (l, m, r) = stencil(c.a[i], c.b[i], h);
            let lu = l * u[i - 1] + m * u[i] + r * u[i + 1];
            rhs[i] = u[i] + (1.0 - theta) * dt * lu;
            lo[i] = -theta * dt * l;
            di[i] = 1.0 - theta * dt * m;
            up[i] = -theta * dt * r;
        }
        thomas(&lo, &di, &up, &mut rhs, out);
    }

    fn step_2d(&self, u: &[f64], out: &mut [f64], c: &StepCoeffs, dt: f64, theta: f64) {
        let n = self.grid.nodes;
        let h = self.grid.dx();
        let idx = |i: usize, j: usize| i * n + j;
        // l1[p], l2[p]: directional operators applied to u
        let mut l1u = vec![0.0; u.len()];
        let mut l2u = vec![0.0; u.len()];
        let mut y = u.to_vec();
        for i in 1..n - 1 {
            for j in 1..n - 1 {
                let p = idx(i, j);
                let a = &c.a[4 * p..4 * p + 4];
                let b = &c.b[2 * p..2 * p + 2];
                let (l, m, r) = stencil(a[0], b[0], h);
                l1u[p] = l * u[idx(i - 1, j)] + m * u[p] + r * u[idx(i + 1, j)];
                let (l, m, r) = stencil(a[3], b[1], h);
                l2u[p] = l * u[idx(i, j - 1)] + m * u[p] + r * u[idx(i, j + 1)];
                let mixed = 0.5 * (a[1] + a[2])
                    * (u[idx(i + 1, j + 1)] - u[idx(i + 1, j - 1)] - u[idx(i - 1, j + 1)] + u[idx(i - 1, j - 1)])
                    / (4.0 * h * h);
                y[p] = u[p] + dt * (l1u[p] + l2u[p] + mixed);
            }
        }
        let mut lo = vec![0.0; n];
        let mut di = vec![1.0; n];
        let mut up = vec![0.0; n];
        let mut rhs = vec![0.0; n];
        let mut line = vec![0.0; n];
        // implicit sweep along axis 0
        let mut y1 = y.clone();
        for j in 1..n - 1 {
            lo.fill(0.0);
            di.fill(1.0);
            up.fill(0.0);
            rhs[0] = u[idx(0, j)];
            rhs[n - 1] = u[idx(n - 1, j)];
            for i in 1..n - 1 {
                let p = idx(i, j);
                let (l, m, r) = stencil(c.a[4 * p], c.b[2 * p], h);
                rhs[i] = y[p] - theta * dt * l1u[p];
                lo[i] = -theta * dt * l;
                di[i] = 1.0 - theta * dt * m;
                up[i] = -theta * dt * r;
            }
            thomas(&lo, &di, &up, &mut rhs, &mut line);
            for i in 0..n {
                y1[idx(i, j)] = line[i];
            }
        }
        // implicit sweep along axis 1
        out.copy_from_slice(u);
        for i in 1..n - 1 {
            lo.fill(0.0);
            di.fill(1.0);
            up.fill(0.0);
            rhs[0] = u[idx(i, 0)];
            rhs[n - 1] = u[idx(i, n - 1)];
            for j in 1..n - 1 {
                let p = idx(i, j);
                let (l, m, r) = stencil(c.a[4 * p + 3], c.b[2 * p + 1], h);
                rhs[j] = y1[p] - theta * dt * l2u[p];
                lo[j] = -theta * dt * l;
                di[j] = 1.0 - theta * dt * m;
                up[j] = -theta * dt * r;
            }
            thomas(&lo, &di, &up, &mut rhs, &mut line);
            out[i * n..(i + 1) * n].copy_from_slice(&line);
        }
    }
}

/// Coefficients of `(1/2) a u'' + b u'` on neighbours `(i-1, i, i+1)`.
fn stencil(a: f64, b: f64, h: f64) -> (f64, f64, f64) {
    let diff = 0.5 * a / (h * h);
    let adv = b / (2.0 * h);
    (diff - adv, -2.0 * diff, diff + adv)
}

/// Tridiagonal solve; `rhs` is overwritten.
fn thomas(lo: &[f64], di: &[f64], up: &[f64], rhs: &mut [f64], out: &mut [f64]) {
    let n = di.len();
    let mut c = vec![0.0; n];
    let mut beta = di[0];
    c[0] = up[0] / beta;
    rhs[0] /= beta;
    for i in 1..n {
        beta = di[i] - lo[i] * c[i - 1];
        c[i] = up[i] / beta;
        rhs[i] = (rhs[i] - lo[i] * rhs[i - 1]) / beta;
    }
    out[n - 1] = rhs[n - 1];
    for i in (0..n - 1).rev() {
        out[i] = rhs[i] - c[i] * out[i + 1];
    }
}

/// `T_{t,r} f` on a grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SemigroupSolution {
    pub t: f64,
    pub r: f64,
    pub grid: PdeGrid,
    pub terminal: Vec<f64>,
    pub values: Vec<f64>,
    pub dt_pde: f64,
    pub dx: f64,
    /// `min f - 1e-8 <= u <= max f + 1e-8` on the grid.
    pub max_principle: bool,
}

impl SemigroupSolution {
    pub fn value_at(&self, x: &[f64]) -> f64 {
        self.grid.interpolate(&self.values, x)
    }

    pub fn gradient_at(&self, x: &[f64]) -> Vec<f64> {
        self.grid.gradient_at(&self.values, x)
    }
}

pub(crate) fn default_nodes(dim: usize) -> usize {
    if dim == 1 {
        401
    } else {
        121
    }
}

pub(crate) fn build_grid(field: &CoefficientField, centre: &[f64], t: f64, r: f64, cfg: &PdeConfig, default: usize) -> Result<PdeGrid> {
    if centre.len() != field.dim() {
        return Err(Error::invalid("centre has the wrong dimension"));
    }
    let radius = match cfg.radius {
        Some(v) => v,
        None => auto_radius(field, centre, t, r)?,
    };
    PdeGrid::new(centre.to_vec(), radius, cfg.nodes_per_axis.unwrap_or(default))
}

/// Solves the backward equation from terminal data `f` at `r` down to `t` on
/// a grid centred at `centre`.
pub fn semigroup_solve(field: &CoefficientField, f: &SpaceFn<'_>, t: f64, r: f64, centre: &[f64], cfg: &PdeConfig) -> Result<SemigroupSolution> {
    if !(r > t) {
        return Err(Error::invalid("need t < r"));
    }
    let grid = build_grid(field, centre, t, r, cfg, default_nodes(field.dim()))?;
    let dx = grid.dx();
    let scale = field.diffusion(t, centre)?.diagonal().iter().copied().fold(f64::INFINITY, f64::min).max(0.0);
    if (scale * (r - t)).sqrt() < 2.0 * dx {
        return Err(Error::GridTooCoarse(format!(
            "diffusion length {:.3e} is below two grid steps ({dx:.3e})",
            (scale * (r - t)).sqrt()
        )));
    }
    let steps = cfg.steps.unwrap_or(256);
    let sg = Semigroup::new(field, grid.clone(), t, r, steps, cfg.rannacher)?;
    let terminal = grid.sample(f);
    let values = sg.solve_to(&terminal, steps, 0)?;
    let (lo, hi) = terminal.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(*v), b.max(*v)));
    let max_principle = values.iter().all(|v| *v >= lo - 1e-8 && *v <= hi + 1e-8);
    Ok(SemigroupSolution { t, r, grid, terminal, values, dt_pde: sg.dt(), dx, max_principle })
}
