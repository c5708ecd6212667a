//! Method of moving asymptotes for box-bounded problems with a few
//! inequality constraints `f_i(s) <= 0`.
//!
//! Each step builds the separable convex approximation around the current
//! design and solves it with a primal-dual interior point method.
//! Constraints are relaxed with elastic variables `y_i` penalised by
//! `c y_i + y_i^2 / 2`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MmaSettings {
    /// Largest change of a variable per step, in design units.
    pub move_limit: f64,
    /// Linear penalty on constraint relaxation.
    pub constraint_penalty: f64,
    pub lower_bound: f64,
    pub upper_bound: f64,
    /// Initial asymptote distance as a fraction of the bound range.
    pub asymptote_init: f64,
    pub asymptote_increase: f64,
    pub asymptote_decrease: f64,
}

impl Default for MmaSettings {
    fn default() -> Self {
        MmaSettings {
            move_limit: 0.01,
            constraint_penalty: 10.0,
            lower_bound: -1.0,
            upper_bound: 1.0,
            asymptote_init: 0.5,
            asymptote_increase: 1.2,
            asymptote_decrease: 0.7,
        }
    }
}

impl MmaSettings {
    pub fn validate(&self) -> Vec<String> {
        let mut errs = Vec::new();
        if !(self.move_limit > 0.0 && self.move_limit.is_finite()) {
            errs.push(format!("optimizer.move_limit must be positive, got {}", self.move_limit));
        }
        if !(self.constraint_penalty > 0.0 && self.constraint_penalty.is_finite()) {
            errs.push(format!(
                "optimizer.constraint_penalty must be positive, got {}",
                self.constraint_penalty
            ));
        }
        if !(self.lower_bound < self.upper_bound) {
            errs.push(format!(
                "optimizer bounds must satisfy lower < upper, got {} and {}",
                self.lower_bound, self.upper_bound
            ));
        }
        if !(self.asymptote_init > 0.0 && self.asymptote_init <= 10.0) {
            errs.push(format!("optimizer.asymptote_init {} outside (0, 10]", self.asymptote_init));
        }
        if !(self.asymptote_increase >= 1.0 && self.asymptote_decrease > 0.0 && self.asymptote_decrease <= 1.0) {
            errs.push("optimizer asymptote factors need increase >= 1 and decrease in (0, 1]".into());
        }
        errs
    }
}

const RAA0: f64 = 1e-5;
const ALBEFA: f64 = 0.1;
const MIN_DISTANCE: f64 = 0.01;
const MAX_DISTANCE: f64 = 10.0;
const ELASTIC_D: f64 = 1.0;
const KKT_TOL: f64 = 1e-9;

/// Iteration history carried between MMA steps.
#[derive(Debug, Clone)]
pub struct MmaState {
    settings: MmaSettings,
    iteration: usize,
    low: Vec<f64>,
    upp: Vec<f64>,
    xold1: Vec<f64>,
    xold2: Vec<f64>,
    multipliers: Vec<f64>,
    lower: Vec<f64>,
    upper: Vec<f64>,
}

/// Separable approximation at the current point.
struct Subproblem<'a> {
    low: &'a [f64],
    upp: &'a [f64],
    alpha: Vec<f64>,
    beta: Vec<f64>,
    p0: Vec<f64>,
    q0: Vec<f64>,
    p: Vec<Vec<f64>>,
    q: Vec<Vec<f64>>,
    b: Vec<f64>,
    c: f64,
}

#[derive(Clone)]
struct Iterate {
    x: Vec<f64>,
    y: Vec<f64>,
    z: f64,
    lam: Vec<f64>,
    xsi: Vec<f64>,
    eta: Vec<f64>,
    mu: Vec<f64>,
    zet: f64,
    s: Vec<f64>,
}

impl Iterate {
    fn axpy(&self, t: f64, d: &Iterate) -> Iterate {
        let v = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x + t * y).collect::<Vec<_>>();
        Iterate {
            x: v(&self.x, &d.x),
            y: v(&self.y, &d.y),
            z: self.z + t * d.z,
            lam: v(&self.lam, &d.lam),
            xsi: v(&self.xsi, &d.xsi),
            eta: v(&self.eta, &d.eta),
            mu: v(&self.mu, &d.mu),
            zet: self.zet + t * d.zet,
            s: v(&self.s, &d.s),
        }
    }
}

impl Subproblem<'_> {
    fn plam_qlam(&self, lam: &[f64], j: usize) -> (f64, f64) {
        let mut pj = self.p0[j];
        let mut qj = self.q0[j];
        for (i, l) in lam.iter().enumerate() {
            pj += l * self.p[i][j];
            qj += l * self.q[i][j];
        }
        (pj, qj)
    }

    /// Closed-form minimiser of the Lagrangian over the box for given
    /// multipliers.
    fn primal(&self, lam: &[f64], x: &mut [f64]) {
        for j in 0..x.len() {
            let (pj, qj) = self.plam_qlam(lam, j);
            let (sp, sq) = (pj.sqrt(), qj.sqrt());
            let xj = (self.low[j] * sp + self.upp[j] * sq) / (sp + sq);
            x[j] = xj.clamp(self.alpha[j], self.beta[j]);
        }
    }

    fn gvec(&self, x: &[f64]) -> Vec<f64> {
        self.p
            .iter()
            .zip(&self.q)
            .map(|(pi, qi)| {
                (0..x.len())
                    .map(|j| pi[j] / (self.upp[j] - x[j]) + qi[j] / (x[j] - self.low[j]))
                    .sum()
            })
            .collect()
    }

    /// Perturbed KKT residual of the subproblem (with `a0 = 1`, `a = 0`).
    fn residual(&self, it: &Iterate, epsi: f64) -> Vec<f64> {
        let n = it.x.len();
        let mut r = Vec::with_capacity(3 * n + 4 * it.y.len() + 2);
        for j in 0..n {
            let (pl, ql) = self.plam_qlam(&it.lam, j);
            let dpsi = pl / (self.upp[j] - it.x[j]).powi(2) - ql / (it.x[j] - self.low[j]).powi(2);
            r.push(dpsi - it.xsi[j] + it.eta[j]);
        }
        for i in 0..it.y.len() {
            r.push(self.c + ELASTIC_D * it.y[i] - it.mu[i] - it.lam[i]);
        }
        r.push(1.0 - it.zet);
        let g = self.gvec(&it.x);
        for i in 0..it.y.len() {
            r.push(g[i] - it.y[i] + it.s[i] - self.b[i]);
        }
        for j in 0..n {
            r.push(it.xsi[j] * (it.x[j] - self.alpha[j]) - epsi);
            r.push(it.eta[j] * (self.beta[j] - it.x[j]) - epsi);
        }
        for i in 0..it.y.len() {
            r.push(it.mu[i] * it.y[i] - epsi);
            r.push(it.lam[i] * it.s[i] - epsi);
        }
        r.push(it.zet * it.z - epsi);
        r
    }

    /// Newton direction of the perturbed KKT system.
    fn direction(&self, it: &Iterate, epsi: f64) -> Result<Iterate> {
        let n = it.x.len();
        let m = it.y.len();
        let mut delx = vec![0.0; n];
        let mut diagx = vec![0.0; n];
        let mut gg = vec![vec![0.0; n]; m];
        for j in 0..n {
            let ux = self.upp[j] - it.x[j];
            let xl = it.x[j] - self.low[j];
            let (pl, ql) = self.plam_qlam(&it.lam, j);
            let dpsi = pl / (ux * ux) - ql / (xl * xl);
            delx[j] = dpsi - epsi / (it.x[j] - self.alpha[j]) + epsi / (self.beta[j] - it.x[j]);
            diagx[j] = 2.0 * (pl / (ux * ux * ux) + ql / (xl * xl * xl))
                + it.xsi[j] / (it.x[j] - self.alpha[j])
                + it.eta[j] / (self.beta[j] - it.x[j]);
            for i in 0..m {
                gg[i][j] = self.p[i][j] / (ux * ux) - self.q[i][j] / (xl * xl);
            }
        }
        let g = self.gvec(&it.x);
        let dely: Vec<f64> = (0..m)
            .map(|i| self.c + ELASTIC_D * it.y[i] - it.lam[i] - epsi / it.y[i])
            .collect();
        let delz = 1.0 - epsi / it.z;
        let dellam: Vec<f64> = (0..m)
            .map(|i| g[i] - it.y[i] - self.b[i] + epsi / it.lam[i])
            .collect();
        let diagy: Vec<f64> = (0..m).map(|i| ELASTIC_D + it.mu[i] / it.y[i]).collect();
        let mut aa = DMatrix::<f64>::zeros(m + 1, m + 1);
        let mut bb = DVector::<f64>::zeros(m + 1);
        for i in 0..m {
            aa[(i, i)] = it.s[i] / it.lam[i] + 1.0 / diagy[i];
            for k in 0..m {
                aa[(i, k)] += (0..n).map(|j| gg[i][j] * gg[k][j] / diagx[j]).sum::<f64>();
            }
            bb[i] = dellam[i] + dely[i] / diagy[i]
                - (0..n).map(|j| gg[i][j] * delx[j] / diagx[j]).sum::<f64>();
        }
        aa[(m, m)] = -it.zet / it.z;
        bb[m] = delz;
        let sol = aa.lu().solve(&bb).ok_or_else(|| {
            Error::StepFailure("singular Newton system in the MMA subproblem".into())
        })?;
        let dlam: Vec<f64> = (0..m).map(|i| sol[i]).collect();
        let dz = sol[m];
        let dx: Vec<f64> = (0..n)
            .map(|j| {
                let gl: f64 = (0..m).map(|i| gg[i][j] * dlam[i]).sum();
                -delx[j] / diagx[j] - gl / diagx[j]
            })
            .collect();
        let dy: Vec<f64> = (0..m).map(|i| (-dely[i] + dlam[i]) / diagy[i]).collect();
        Ok(Iterate {
            xsi: (0..n)
                .map(|j| {
                    let xa = it.x[j] - self.alpha[j];
                    -it.xsi[j] + epsi / xa - it.xsi[j] * dx[j] / xa
                })
                .collect(),
            eta: (0..n)
                .map(|j| {
                    let bx = self.beta[j] - it.x[j];
                    -it.eta[j] + epsi / bx + it.eta[j] * dx[j] / bx
                })
                .collect(),
            mu: (0..m)
                .map(|i| -it.mu[i] + epsi / it.y[i] - it.mu[i] * dy[i] / it.y[i])
                .collect(),
            zet: -it.zet + epsi / it.z - it.zet * dz / it.z,
            s: (0..m)
                .map(|i| -it.s[i] + epsi / it.lam[i] - it.s[i] * dlam[i] / it.lam[i])
                .collect(),
            x: dx,
            y: dy,
            z: dz,
            lam: dlam,
        })
    }

    /// Primal-dual interior point solve; returns the design and the
    /// constraint multipliers.
    fn solve(&self, n: usize, m: usize) -> Result<(Vec<f64>, Vec<f64>)> {
        let norm = |r: &[f64]| r.iter().map(|v| v * v).sum::<f64>().sqrt();
        let maxabs = |r: &[f64]| r.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        let x: Vec<f64> = (0..n).map(|j| 0.5 * (self.alpha[j] + self.beta[j])).collect();
        let mut it = Iterate {
            xsi: (0..n).map(|j| (1.0 / (x[j] - self.alpha[j])).max(1.0)).collect(),
            eta: (0..n).map(|j| (1.0 / (self.beta[j] - x[j])).max(1.0)).collect(),
            x,
            y: vec![1.0; m],
            z: 1.0,
            lam: vec![1.0; m],
            mu: vec![(0.5 * self.c).max(1.0); m],
            zet: 1.0,
            s: vec![1.0; m],
        };
        let mut epsi = 1.0;
        while epsi > KKT_TOL {
            let mut res = self.residual(&it, epsi);
            let mut resnorm = norm(&res);
            let mut inner = 0;
            while maxabs(&res) > 0.9 * epsi {
                inner += 1;
                if inner > 200 {
                    return Err(Error::StepFailure(format!(
                        "MMA subproblem stalled at barrier {epsi:e} with residual {:e}",
                        maxabs(&res)
                    )));
                }
                let d = self.direction(&it, epsi)?;
                let mut stm: f64 = 1.0;
                let pos = |a: &[f64], da: &[f64], stm: &mut f64| {
                    for (v, dv) in a.iter().zip(da) {
                        *stm = stm.max(-1.01 * dv / v);
                    }
                };
                pos(&it.y, &d.y, &mut stm);
                pos(&[it.z], &[d.z], &mut stm);
                pos(&it.lam, &d.lam, &mut stm);
                pos(&it.xsi, &d.xsi, &mut stm);
                pos(&it.eta, &d.eta, &mut stm);
                pos(&it.mu, &d.mu, &mut stm);
                pos(&[it.zet], &[d.zet], &mut stm);
                pos(&it.s, &d.s, &mut stm);
                for j in 0..n {
                    stm = stm.max(-1.01 * d.x[j] / (it.x[j] - self.alpha[j]));
                    stm = stm.max(1.01 * d.x[j] / (self.beta[j] - it.x[j]));
                }
                let mut step = 1.0 / stm;
                let mut trial = it.axpy(step, &d);
                let mut trial_res = self.residual(&trial, epsi);
                let mut halvings = 0;
                while norm(&trial_res) > resnorm && halvings < 50 {
                    step *= 0.5;
                    trial = it.axpy(step, &d);
                    trial_res = self.residual(&trial, epsi);
                    halvings += 1;
                }
                it = trial;
                res = trial_res;
                resnorm = norm(&res);
            }
            epsi *= 0.1;
        }
        Ok((it.x, it.lam))
    }
}

impl MmaState {
    pub fn new(n: usize, m: usize, settings: MmaSettings) -> Result<Self> {
        let errs = settings.validate();
        if !errs.is_empty() {
            return Err(Error::Config(errs));
        }
        Ok(MmaState {
            settings,
            iteration: 0,
            low: vec![0.0; n],
            upp: vec![0.0; n],
            xold1: Vec::new(),
            xold2: Vec::new(),
            multipliers: vec![0.0; m],
            lower: vec![settings.lower_bound; n],
            upper: vec![settings.upper_bound; n],
        })
    }

    /// Tightens the box of individual variables. Every bound must lie
    /// within the global bounds of the settings.
    pub fn set_variable_bounds(&mut self, lower: Vec<f64>, upper: Vec<f64>) -> Result<()> {
        let n = self.low.len();
        if lower.len() != n || upper.len() != n {
            return Err(Error::InvalidArgument(format!("variable bounds must have length {n}")));
        }
        let s = &self.settings;
        if let Some(j) = (0..n).find(|&j| {
            !(s.lower_bound <= lower[j] && lower[j] < upper[j] && upper[j] <= s.upper_bound)
        }) {
            return Err(Error::InvalidArgument(format!(
                "bounds [{}, {}] of variable {j} are not inside [{}, {}]",
                lower[j], upper[j], s.lower_bound, s.upper_bound
            )));
        }
        self.lower = lower;
        self.upper = upper;
        Ok(())
    }

    /// Per-variable lower and upper bounds.
    pub fn variable_bounds(&self) -> (&[f64], &[f64]) {
        (&self.lower, &self.upper)
    }

    pub fn settings(&self) -> &MmaSettings {
        &self.settings
    }

    /// Completed steps.
    pub fn iteration(&self) -> usize {
        self.iteration
    }

    /// Lower and upper asymptotes used by the last step.
    pub fn asymptotes(&self) -> (&[f64], &[f64]) {
        (&self.low, &self.upp)
    }

    /// Constraint multipliers of the last subproblem.
    pub fn multipliers(&self) -> &[f64] {
        &self.multipliers
    }

    fn update_asymptotes(&mut self, x: &[f64]) {
        let s = &self.settings;
        let range = s.upper_bound - s.lower_bound;
        for j in 0..x.len() {
            if self.iteration < 2 {
                self.low[j] = x[j] - s.asymptote_init * range;
                self.upp[j] = x[j] + s.asymptote_init * range;
                continue;
            }
            let trend = (x[j] - self.xold1[j]) * (self.xold1[j] - self.xold2[j]);
            let factor = if trend > 0.0 {
                s.asymptote_increase
            } else if trend < 0.0 {
                s.asymptote_decrease
            } else {
                1.0
            };
            let low = x[j] - factor * (self.xold1[j] - self.low[j]);
            let upp = x[j] + factor * (self.upp[j] - self.xold1[j]);
            self.low[j] = low.clamp(x[j] - MAX_DISTANCE * range, x[j] - MIN_DISTANCE * range);
            self.upp[j] = upp.clamp(x[j] + MIN_DISTANCE * range, x[j] + MAX_DISTANCE * range);
        }
    }

    /// One MMA update of `x` from the objective `f0` and constraints `fi`
    /// with their gradients.
    pub fn step(&mut self, x: &[f64], f0: f64, df0: &[f64], fi: &[f64], dfi: &[Vec<f64>]) -> Result<Vec<f64>> {
        let n = x.len();
        let m = self.multipliers.len();
        if df0.len() != n || fi.len() != m || dfi.len() != m || dfi.iter().any(|g| g.len() != n) || self.low.len() != n {
            return Err(Error::InvalidArgument(format!(
                "MMA step expects {} variables and {m} constraints",
                self.low.len()
            )));
        }
        let finite = |v: &[f64]| v.iter().all(|x| x.is_finite());
        if !f0.is_finite() || !finite(x) || !finite(df0) || !finite(fi) || !dfi.iter().all(|g| finite(g)) {
            return Err(Error::InvalidArgument("non-finite input to MMA step".into()));
        }
        let s = self.settings;
        if let Some(j) = (0..n).find(|&j| x[j] < self.lower[j] || x[j] > self.upper[j]) {
            return Err(Error::InvalidArgument(format!(
                "design variable {j} = {} outside the bounds",
                x[j]
            )));
        }
        self.update_asymptotes(x);
        let range = s.upper_bound - s.lower_bound;
        let mut alpha = vec![0.0; n];
        let mut beta = vec![0.0; n];
        let mut p0 = vec![0.0; n];
        let mut q0 = vec![0.0; n];
        let mut p = vec![vec![0.0; n]; m];
        let mut q = vec![vec![0.0; n]; m];
        let mut b = fi.iter().map(|f| -f).collect::<Vec<_>>();
        for j in 0..n {
            let (l, u) = (self.low[j], self.upp[j]);
            alpha[j] = self.lower[j].max(l + ALBEFA * (x[j] - l)).max(x[j] - s.move_limit);
            beta[j] = self.upper[j].min(u - ALBEFA * (u - x[j])).min(x[j] + s.move_limit);
            let (ux2, xl2) = ((u - x[j]).powi(2), (x[j] - l).powi(2));
            let split = |g: f64| {
                let (gp, gm) = (g.max(0.0), (-g).max(0.0));
                (
                    ux2 * (1.001 * gp + 0.001 * gm + RAA0 / range),
                    xl2 * (0.001 * gp + 1.001 * gm + RAA0 / range),
                )
            };
            (p0[j], q0[j]) = split(df0[j]);
            for i in 0..m {
                let (pij, qij) = split(dfi[i][j]);
                p[i][j] = pij;
                q[i][j] = qij;
                b[i] += pij / (u - x[j]) + qij / (x[j] - l);
            }
        }
        let sub = Subproblem {
            low: &self.low,
            upp: &self.upp,
            alpha,
            beta,
            p0,
            q0,
            p,
            q,
            b,
            c: s.constraint_penalty,
        };
        let lam = if m > 0 { sub.solve(n, m)?.1 } else { Vec::new() };
        let mut xn = x.to_vec();
        sub.primal(&lam, &mut xn);
        self.multipliers = lam;
        self.xold2 = std::mem::replace(&mut self.xold1, x.to_vec());
        self.iteration += 1;
        Ok(xn)
    }
}
