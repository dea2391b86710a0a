//! Interior-point iteration: slacks on inequality rows, log barriers on
//! slacks and variable bounds, Newton steps on the primal-dual system with
//! inertia correction, and a filter line search on (infeasibility, barrier
//! objective). The barrier parameter drops tenfold whenever the current
//! barrier subproblem is solved to `10 * mu`.

use std::time::Instant;

use super::ldl::{symmetric_matvec, LdlFactor, LdlSymbolic};
use super::{
    max_violation, IterationRecord, Multipliers, SolveResult, SolveStatus, SolverOptions,
};
use crate::error::{FormulationError, SolveError};
use crate::formulation::NlpProblem;

const KAPPA_EPS: f64 = 10.0;
const TAU_MIN: f64 = 0.99;
const KAPPA_SIGMA: f64 = 1e10;
const BOUND_PUSH: f64 = 1e-2;
const SLACK_PUSH: f64 = 1e-2;
const DELTA_C: f64 = 1e-9;
const DELTA_W_START: f64 = 1e-8;
const DELTA_W_MAX: f64 = 1e20;
/// Final complementarity relative to the KKT tolerance; tight enough that
/// the barrier bias on the objective is far below the objective tolerance.
const COMPLEMENTARITY_FACTOR: f64 = 1e-5;

// Filter parameters.
const GAMMA_THETA: f64 = 1e-5;
const GAMMA_PHI: f64 = 1e-8;
const GAMMA_ALPHA: f64 = 0.05;
const DELTA_SWITCH: f64 = 1.0;
const S_THETA: f64 = 1.1;
const S_PHI: f64 = 2.3;
const ETA_PHI: f64 = 1e-4;

const RESTORATION_MAX_ITER: usize = 60;

/// Solve from the problem's own initial point.
pub fn solve(problem: &NlpProblem, options: &SolverOptions) -> Result<SolveResult, SolveError> {
    solve_from(problem, options, None)
}

/// Solve from a caller-supplied starting point (clipped into the bounds).
pub fn solve_from(
    problem: &NlpProblem,
    options: &SolverOptions,
    start: Option<&[f64]>,
) -> Result<SolveResult, SolveError> {
    if let Some(x) = start {
        if x.len() != problem.dimension() {
            return Err(FormulationError::Dimension {
                expected: problem.dimension(),
                got: x.len(),
            }
            .into());
        }
    }
    let mut ipm = Ipm::new(problem, options, start.unwrap_or(&problem.x0));
    ipm.run()
}

struct KktLayout {
    nf: usize,
    m: usize,
    rows: Vec<usize>,
    cols: Vec<usize>,
    /// (problem hessian slot, kkt position)
    hess: Vec<(usize, usize)>,
    /// (problem jacobian slot, kkt position)
    jac: Vec<(usize, usize)>,
    x_diag: usize,
    r_diag: usize,
    symbolic: LdlSymbolic,
}

impl KktLayout {
    fn new(problem: &NlpProblem, free_pos: &[Option<usize>], nf: usize) -> KktLayout {
        let m = problem.n_rows();
        let mut rows = Vec::new();
        let mut cols = Vec::new();
        let mut hess = Vec::new();
        let (hr, hc) = problem.hessian_pattern();
        for (slot, (&i, &j)) in hr.iter().zip(hc).enumerate() {
            if let (Some(a), Some(b)) = (free_pos[i], free_pos[j]) {
                hess.push((slot, rows.len()));
                rows.push(a.min(b));
                cols.push(a.max(b));
            }
        }
        let mut jac = Vec::new();
        let (jr, jc) = problem.jacobian_pattern();
        for (slot, (&r, &c)) in jr.iter().zip(jc).enumerate() {
            if let Some(a) = free_pos[c] {
                jac.push((slot, rows.len()));
                rows.push(a);
                cols.push(nf + r);
            }
        }
        let x_diag = rows.len();
        for i in 0..nf {
            rows.push(i);
            cols.push(i);
        }
        let r_diag = rows.len();
        for r in 0..m {
            rows.push(nf + r);
            cols.push(nf + r);
        }
        let symbolic = LdlSymbolic::analyse(nf + m, &rows, &cols);
        KktLayout {
            nf,
            m,
            rows,
            cols,
            hess,
            jac,
            x_diag,
            r_diag,
            symbolic,
        }
    }
}

struct Ipm<'a> {
    p: &'a NlpProblem,
    opt: &'a SolverOptions,
    n: usize,
    m: usize,
    free: Vec<usize>,
    is_eq: Vec<bool>,
    has_lb: Vec<bool>,
    has_ub: Vec<bool>,
    x: Vec<f64>,
    s: Vec<f64>,
    y: Vec<f64>,
    zl: Vec<f64>,
    zu: Vec<f64>,
    mu: f64,
    mu_min: f64,
    compl_tol: f64,
    grad_f: Vec<f64>,
    c: Vec<f64>,
    jac: Vec<f64>,
    hess: Vec<f64>,
    kkt: KktLayout,
    kkt_values: Vec<f64>,
    last_delta_w: f64,
    filter: Vec<(f64, f64)>,
    theta_max: f64,
    theta_min: f64,
    trace: Vec<IterationRecord>,
    iteration: usize,
    started: Instant,
}

struct Step {
    dx: Vec<f64>,
    ds: Vec<f64>,
    dy: Vec<f64>,
    dzl: Vec<f64>,
    dzu: Vec<f64>,
    delta_w: f64,
}

enum Outcome {
    Finished(SolveStatus),
    Continue,
}

impl<'a> Ipm<'a> {
    fn new(p: &'a NlpProblem, opt: &'a SolverOptions, start: &[f64]) -> Self {
        let n = p.dimension();
        let m = p.n_rows();
        let mut free = Vec::new();
        let mut free_pos = vec![None; n];
        for i in 0..n {
            if !p.is_fixed(i) {
                free_pos[i] = Some(free.len());
                free.push(i);
            }
        }
        let has_lb: Vec<bool> = (0..n).map(|i| free_pos[i].is_some() && p.lower[i].is_finite()).collect();
        let has_ub: Vec<bool> = (0..n).map(|i| free_pos[i].is_some() && p.upper[i].is_finite()).collect();
        let is_eq: Vec<bool> = p.rows.iter().map(|r| r.is_equality()).collect();

        // Starting point pushed strictly inside the variable boxes.
        let mut x = start.to_vec();
        for i in 0..n {
            let (lo, hi) = (p.lower[i], p.upper[i]);
            if lo == hi {
                x[i] = lo;
                continue;
            }
            let width = hi - lo;
            if has_lb[i] {
                let push = (BOUND_PUSH * lo.abs().max(1.0)).min(BOUND_PUSH * width);
                x[i] = x[i].max(lo + push);
            }
            if has_ub[i] {
                let push = (BOUND_PUSH * hi.abs().max(1.0)).min(BOUND_PUSH * width);
                x[i] = x[i].min(hi - push);
            }
        }
        let mu = opt.initial_barrier;
        let mut c = vec![0.0; m];
        p.constraints_into(&x, &mut c);
        let s: Vec<f64> = (0..m)
            .map(|r| if is_eq[r] { 0.0 } else { (-c[r]).max(SLACK_PUSH) })
            .collect();
        let y: Vec<f64> = (0..m).map(|r| if is_eq[r] { 0.0 } else { mu / s[r] }).collect();
        let zl: Vec<f64> = (0..n).map(|i| if has_lb[i] { mu / (x[i] - p.lower[i]) } else { 0.0 }).collect();
        let zu: Vec<f64> = (0..n).map(|i| if has_ub[i] { mu / (p.upper[i] - x[i]) } else { 0.0 }).collect();
        let mut grad_f = vec![0.0; n];
        for &(i, w) in &p.objective {
            grad_f[i] -= w;
        }
        let kkt = KktLayout::new(p, &free_pos, free.len());
        let compl_tol = opt.kkt_tolerance * COMPLEMENTARITY_FACTOR;
        let kkt_len = kkt.rows.len();
        Ipm {
            p,
            opt,
            n,
            m,
            free,
            is_eq,
            has_lb,
            has_ub,
            x,
            s,
            y,
            zl,
            zu,
            mu,
            mu_min: compl_tol / 10.0,
            compl_tol,
            grad_f,
            c,
            jac: vec![0.0; p.jacobian_pattern().0.len()],
            hess: vec![0.0; p.hessian_pattern().0.len()],
            kkt,
            kkt_values: vec![0.0; kkt_len],
            last_delta_w: 0.0,
            filter: Vec::new(),
            theta_max: 0.0,
            theta_min: 0.0,
            trace: Vec::new(),
            iteration: 0,
            started: Instant::now(),
        }
    }

    fn objective(&self, x: &[f64]) -> f64 {
        self.grad_f.iter().zip(x).map(|(g, v)| g * v).sum()
    }

    fn theta_of(&self, c: &[f64], s: &[f64]) -> f64 {
        (0..self.m)
            .map(|r| if self.is_eq[r] { c[r].abs() } else { (c[r] + s[r]).abs() })
            .sum()
    }

    fn barrier_of(&self, x: &[f64], s: &[f64]) -> f64 {
        let mut phi = self.objective(x);
        for r in 0..self.m {
            if !self.is_eq[r] {
                phi -= self.mu * s[r].ln();
            }
        }
        for &i in &self.free {
            if self.has_lb[i] {
                phi -= self.mu * (x[i] - self.p.lower[i]).ln();
            }
            if self.has_ub[i] {
                phi -= self.mu * (self.p.upper[i] - x[i]).ln();
            }
        }
        phi
    }

    fn evaluate(&mut self) {
        self.p.constraints_into(&self.x, &mut self.c);
        self.p.jacobian_values_into(&self.x, &mut self.jac);
    }

    /// `grad f + J^T y - zl + zu`, full length.
    fn dual_residual(&self) -> Vec<f64> {
        let mut g = self.grad_f.clone();
        let (jr, jc) = self.p.jacobian_pattern();
        for k in 0..self.jac.len() {
            g[jc[k]] += self.jac[k] * self.y[jr[k]];
        }
        for i in 0..self.n {
            g[i] += self.zu[i] - self.zl[i];
        }
        g
    }

    /// (primal, dual, complementarity at `mu`) infinity norms.
    fn errors(&self, mu: f64) -> (f64, f64, f64) {
        let mut primal: f64 = 0.0;
        let mut compl: f64 = 0.0;
        for r in 0..self.m {
            if self.is_eq[r] {
                primal = primal.max(self.c[r].abs());
            } else {
                primal = primal.max((self.c[r] + self.s[r]).abs());
                compl = compl.max((self.s[r] * self.y[r] - mu).abs());
            }
        }
        let g = self.dual_residual();
        let mut dual: f64 = 0.0;
        for &i in &self.free {
            dual = dual.max(g[i].abs());
            if self.has_lb[i] {
                compl = compl.max(((self.x[i] - self.p.lower[i]) * self.zl[i] - mu).abs());
            }
            if self.has_ub[i] {
                compl = compl.max(((self.p.upper[i] - self.x[i]) * self.zu[i] - mu).abs());
            }
        }
        (primal, dual, compl)
    }

    fn converged(&self) -> bool {
        let (primal, dual, compl) = self.errors(0.0);
        primal <= self.opt.feasibility_tolerance
            && dual <= self.opt.kkt_tolerance
            && compl <= self.compl_tol
    }

    /// Assemble KKT values with `delta_w` on the primal diagonal and
    /// `delta_c` on the constraint diagonal. With `with_hessian = false` the
    /// Lagrangian Hessian is left out (feasibility steps).
    fn assemble(&mut self, delta_w: f64, delta_c: f64, with_hessian: bool) {
        let vals = &mut self.kkt_values;
        vals.fill(0.0);
        if with_hessian {
            for &(slot, pos) in &self.kkt.hess {
                vals[pos] += self.hess[slot];
            }
        }
        for &(slot, pos) in &self.kkt.jac {
            vals[pos] += self.jac[slot];
        }
        for (k, &i) in self.free.iter().enumerate() {
            let mut sig = 0.0;
            if self.has_lb[i] {
                sig += self.zl[i] / (self.x[i] - self.p.lower[i]);
            }
            if self.has_ub[i] {
                sig += self.zu[i] / (self.p.upper[i] - self.x[i]);
            }
            vals[self.kkt.x_diag + k] = sig + delta_w;
        }
        for r in 0..self.m {
            let base = if self.is_eq[r] { 0.0 } else { self.s[r] / self.y[r] };
            vals[self.kkt.r_diag + r] = -(base + delta_c);
        }
    }

    /// Factor with inertia correction; returns the factor and the `delta_w` used.
    fn factor_with_inertia(&mut self, with_hessian: bool, floor: f64) -> Result<(LdlFactor, f64), SolveError> {
        let (nf, m) = (self.kkt.nf, self.kkt.m);
        let mut delta_w = floor;
        loop {
            self.assemble(delta_w, DELTA_C, with_hessian);
            if let Some(f) = self.kkt.symbolic.factor(&self.kkt_values) {
                let inertia = f.inertia();
                if inertia.positive == nf && inertia.negative == m {
                    return Ok((f, delta_w));
                }
            }
            delta_w = if delta_w == 0.0 {
                if self.last_delta_w == 0.0 {
                    DELTA_W_START
                } else {
                    (self.last_delta_w / 4.0).max(DELTA_W_START)
                }
            } else {
                2.0 * delta_w
            };
            if delta_w > DELTA_W_MAX {
                return Err(SolveError::LinearAlgebra {
                    iteration: self.iteration,
                    detail: "inertia correction exceeded its limit".into(),
                    x: self.x.clone(),
                });
            }
        }
    }

    /// Solve with the factor and refine against the matrix without the
    /// constraint regularization.
    fn solve_refined(&mut self, factor: &LdlFactor, delta_w: f64, with_hessian: bool, rhs: &[f64]) -> Vec<f64> {
        let mut sol = rhs.to_vec();
        self.kkt.symbolic.solve(factor, &mut sol);
        self.assemble(delta_w, 0.0, with_hessian);
        let dim = rhs.len();
        let rhs_norm = rhs.iter().fold(0.0f64, |a, v| a.max(v.abs())).max(1e-300);
        let mut ax = vec![0.0; dim];
        let mut prev = f64::INFINITY;
        for _ in 0..5 {
            symmetric_matvec(&self.kkt.rows, &self.kkt.cols, &self.kkt_values, &sol, &mut ax);
            let mut res: Vec<f64> = rhs.iter().zip(&ax).map(|(b, a)| b - a).collect();
            let norm = res.iter().fold(0.0f64, |a, v| a.max(v.abs()));
            if norm <= 1e-15 * rhs_norm || norm >= 0.5 * prev {
                break;
            }
            prev = norm;
            self.kkt.symbolic.solve(factor, &mut res);
            for (s, d) in sol.iter_mut().zip(&res) {
                *s += d;
            }
        }
        sol
    }

    fn newton_step(&mut self) -> Result<Step, SolveError> {
        self.p.hessian_values_into(&self.y, &mut self.hess);
        let (factor, delta_w) = self.factor_with_inertia(true, 0.0)?;
        if delta_w > 0.0 {
            self.last_delta_w = delta_w;
        }
        let nf = self.kkt.nf;
        let mu = self.mu;
        let g = self.dual_residual();
        let mut rhs = vec![0.0; nf + self.m];
        for (k, &i) in self.free.iter().enumerate() {
            // The -zl + zu in g cancels against the barrier gradient terms.
            let mut r = g[i] + self.zl[i] - self.zu[i];
            if self.has_lb[i] {
                r -= mu / (self.x[i] - self.p.lower[i]);
            }
            if self.has_ub[i] {
                r += mu / (self.p.upper[i] - self.x[i]);
            }
            rhs[k] = -r;
        }
        for r in 0..self.m {
            rhs[nf + r] = if self.is_eq[r] {
                -self.c[r]
            } else {
                -self.c[r] - mu / self.y[r]
            };
        }
        let sol = self.solve_refined(&factor, delta_w, true, &rhs);
        Ok(self.expand_step(&sol, delta_w, true))
    }

    fn expand_step(&self, sol: &[f64], delta_w: f64, newton: bool) -> Step {
        let nf = self.kkt.nf;
        let mu = self.mu;
        let mut dx = vec![0.0; self.n];
        for (k, &i) in self.free.iter().enumerate() {
            dx[i] = sol[k];
        }
        let dy: Vec<f64> = (0..self.m).map(|r| sol[nf + r]).collect();
        let mut ds = vec![0.0; self.m];
        if newton {
            for r in 0..self.m {
                if !self.is_eq[r] {
                    ds[r] = mu / self.y[r] - self.s[r] - self.s[r] / self.y[r] * dy[r];
                }
            }
        } else {
            // Feasibility step: slacks absorb the remaining linearized residual.
            let (jr, jc) = self.p.jacobian_pattern();
            let mut jdx = vec![0.0; self.m];
            for k in 0..self.jac.len() {
                jdx[jr[k]] += self.jac[k] * dx[jc[k]];
            }
            for r in 0..self.m {
                if !self.is_eq[r] {
                    ds[r] = -(self.c[r] + self.s[r]) - jdx[r];
                }
            }
        }
        let mut dzl = vec![0.0; self.n];
        let mut dzu = vec![0.0; self.n];
        for &i in &self.free {
            if self.has_lb[i] {
                let d = self.x[i] - self.p.lower[i];
                dzl[i] = mu / d - self.zl[i] - self.zl[i] / d * dx[i];
            }
            if self.has_ub[i] {
                let d = self.p.upper[i] - self.x[i];
                dzu[i] = mu / d - self.zu[i] + self.zu[i] / d * dx[i];
            }
        }
        Step {
            dx,
            ds,
            dy,
            dzl,
            dzu,
            delta_w,
        }
    }

    fn max_primal_step(&self, step: &Step, tau: f64) -> f64 {
        let mut alpha: f64 = 1.0;
        for r in 0..self.m {
            if !self.is_eq[r] && step.ds[r] < 0.0 {
                alpha = alpha.min(-tau * self.s[r] / step.ds[r]);
            }
        }
        for &i in &self.free {
            let d = step.dx[i];
            if self.has_lb[i] && d < 0.0 {
                alpha = alpha.min(-tau * (self.x[i] - self.p.lower[i]) / d);
            }
            if self.has_ub[i] && d > 0.0 {
                alpha = alpha.min(tau * (self.p.upper[i] - self.x[i]) / d);
            }
        }
        alpha
    }

    fn max_dual_step(&self, step: &Step, tau: f64) -> f64 {
        let mut alpha: f64 = 1.0;
        for r in 0..self.m {
            if !self.is_eq[r] && step.dy[r] < 0.0 {
                alpha = alpha.min(-tau * self.y[r] / step.dy[r]);
            }
        }
        for &i in &self.free {
            if self.has_lb[i] && step.dzl[i] < 0.0 {
                alpha = alpha.min(-tau * self.zl[i] / step.dzl[i]);
            }
            if self.has_ub[i] && step.dzu[i] < 0.0 {
                alpha = alpha.min(-tau * self.zu[i] / step.dzu[i]);
            }
        }
        alpha
    }

    fn barrier_directional(&self, step: &Step) -> f64 {
        let mut d: f64 = self.grad_f.iter().zip(&step.dx).map(|(g, v)| g * v).sum();
        for r in 0..self.m {
            if !self.is_eq[r] {
                d -= self.mu * step.ds[r] / self.s[r];
            }
        }
        for &i in &self.free {
            if self.has_lb[i] {
                d -= self.mu * step.dx[i] / (self.x[i] - self.p.lower[i]);
            }
            if self.has_ub[i] {
                d += self.mu * step.dx[i] / (self.p.upper[i] - self.x[i]);
            }
        }
        d
    }

    fn trial(&self, step: &Step, alpha: f64) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
        let x: Vec<f64> = self.x.iter().zip(&step.dx).map(|(a, d)| a + alpha * d).collect();
        let s: Vec<f64> = self.s.iter().zip(&step.ds).map(|(a, d)| a + alpha * d).collect();
        let mut c = vec![0.0; self.m];
        self.p.constraints_into(&x, &mut c);
        (x, s, c)
    }

    fn filter_acceptable(&self, theta: f64, phi: f64) -> bool {
        self.filter.iter().all(|&(ft, fp)| theta < ft || phi < fp)
    }

    fn reset_filter(&mut self) {
        self.filter.clear();
    }

    fn accept(&mut self, step: &Step, alpha_p: f64, alpha_d: f64, x: Vec<f64>, s: Vec<f64>) {
        self.x = x;
        self.s = s;
        for r in 0..self.m {
            if self.is_eq[r] {
                self.y[r] += alpha_p * step.dy[r];
            } else {
                self.y[r] += alpha_d * step.dy[r];
            }
        }
        for &i in &self.free {
            if self.has_lb[i] {
                self.zl[i] += alpha_d * step.dzl[i];
            }
            if self.has_ub[i] {
                self.zu[i] += alpha_d * step.dzu[i];
            }
        }
        self.safeguard_multipliers();
    }

    /// Keep each bound multiplier within a factor `KAPPA_SIGMA` of its
    /// centred value `mu / distance`.
    fn safeguard_multipliers(&mut self) {
        let mu = self.mu;
        let clamp = |z: f64, d: f64| z.max(mu / (KAPPA_SIGMA * d)).min(KAPPA_SIGMA * mu / d);
        for r in 0..self.m {
            if !self.is_eq[r] {
                self.y[r] = clamp(self.y[r], self.s[r]);
            }
        }
        for &i in &self.free {
            if self.has_lb[i] {
                self.zl[i] = clamp(self.zl[i], self.x[i] - self.p.lower[i]);
            }
            if self.has_ub[i] {
                self.zu[i] = clamp(self.zu[i], self.p.upper[i] - self.x[i]);
            }
        }
    }

    fn update_barrier(&mut self) {
        loop {
            if self.mu <= self.mu_min {
                return;
            }
            let (primal, dual, compl) = self.errors(self.mu);
            if primal.max(dual).max(compl) > KAPPA_EPS * self.mu {
                return;
            }
            self.mu = (self.mu / 10.0).max(self.mu_min);
            self.reset_filter();
        }
    }

    fn record(&mut self, alpha_p: f64, alpha_d: f64, reg: f64) {
        if !self.opt.record_trace {
            return;
        }
        let theta = self.theta_of(&self.c, &self.s);
        self.trace.push(IterationRecord {
            iteration: self.iteration,
            objective: -self.objective(&self.x),
            infeasibility: theta,
            mu: self.mu,
            alpha_primal: alpha_p,
            alpha_dual: alpha_d,
            regularization: reg,
        });
    }

    /// One filter line-search iteration. Returns `Finished(Infeasible)`
    /// when the feasibility phase cannot make progress.
    fn iterate(&mut self) -> Result<Outcome, SolveError> {
        let step = self.newton_step()?;
        let tau = TAU_MIN.max(1.0 - self.mu);
        let alpha_max = self.max_primal_step(&step, tau);
        let alpha_d = self.max_dual_step(&step, tau);
        let theta = self.theta_of(&self.c, &self.s);
        let phi = self.barrier_of(&self.x, &self.s);
        let dphi = self.barrier_directional(&step);
        let alpha_min = if dphi < 0.0 {
            GAMMA_ALPHA
                * GAMMA_THETA
                    .min(GAMMA_PHI * theta / -dphi)
                    .min(DELTA_SWITCH * theta.powf(S_THETA) / (-dphi).powf(S_PHI))
        } else {
            GAMMA_ALPHA * GAMMA_THETA
        };

        let mut alpha = alpha_max;
        loop {
            let (xt, st, ct) = self.trial(&step, alpha);
            let theta_t = self.theta_of(&ct, &st);
            let phi_t = self.barrier_of(&xt, &st);
            let acceptable = theta_t.is_finite()
                && phi_t.is_finite()
                && theta_t <= self.theta_max
                && self.filter_acceptable(theta_t, phi_t);
            if acceptable {
                let switching = dphi < 0.0
                    && alpha * (-dphi).powf(S_PHI) > DELTA_SWITCH * theta.powf(S_THETA)
                    && theta <= self.theta_min;
                if switching {
                    if phi_t <= phi + ETA_PHI * alpha * dphi {
                        self.accept(&step, alpha, alpha_d, xt, st);
                        self.record(alpha, alpha_d, step.delta_w);
                        return Ok(Outcome::Continue);
                    }
                } else if theta_t <= (1.0 - GAMMA_THETA) * theta || phi_t <= phi - GAMMA_PHI * theta {
                    self.filter
                        .push(((1.0 - GAMMA_THETA) * theta, phi - GAMMA_PHI * theta));
                    self.accept(&step, alpha, alpha_d, xt, st);
                    self.record(alpha, alpha_d, step.delta_w);
                    return Ok(Outcome::Continue);
                }
            }
            alpha *= 0.5;
            if alpha < alpha_min {
                break;
            }
        }

        // Line search failed.
        if theta <= 0.1 * self.opt.feasibility_tolerance {
            // Already feasible: take the step and restart the filter.
            let (xt, st, _) = self.trial(&step, alpha_max);
            self.accept(&step, alpha_max, alpha_d, xt, st);
            self.reset_filter();
            self.record(alpha_max, alpha_d, step.delta_w);
            return Ok(Outcome::Continue);
        }
        if self.restoration(theta, phi)? {
            Ok(Outcome::Continue)
        } else {
            Ok(Outcome::Finished(SolveStatus::Infeasible))
        }
    }

    /// Reduce infeasibility with min-norm Gauss-Newton steps on the
    /// linearized constraints. Returns `false` when no progress is possible.
    fn restoration(&mut self, theta_entry: f64, phi_entry: f64) -> Result<bool, SolveError> {
        self.filter
            .push(((1.0 - GAMMA_THETA) * theta_entry, phi_entry - GAMMA_PHI * theta_entry));
        let nf = self.kkt.nf;
        for _ in 0..RESTORATION_MAX_ITER {
            self.iteration += 1;
            if self.iteration > self.opt.max_iterations {
                return Ok(true);
            }
            let theta = self.theta_of(&self.c, &self.s);
            let floor = self.mu.sqrt().max(DELTA_W_START);
            let (factor, delta_w) = self.factor_with_inertia(false, floor)?;
            let mut rhs = vec![0.0; nf + self.m];
            for r in 0..self.m {
                rhs[nf + r] = if self.is_eq[r] {
                    -self.c[r]
                } else {
                    -(self.c[r] + self.s[r])
                };
            }
            let sol = self.solve_refined(&factor, delta_w, false, &rhs);
            let step = self.expand_step(&sol, delta_w, false);
            let tau = TAU_MIN.max(1.0 - self.mu);
            let mut alpha = self.max_primal_step(&step, tau);
            let accepted = loop {
                let (xt, st, ct) = self.trial(&step, alpha);
                let theta_t = self.theta_of(&ct, &st);
                if theta_t.is_finite() && theta_t <= (1.0 - 1e-4 * alpha) * theta {
                    break Some((xt, st, ct, theta_t));
                }
                alpha *= 0.5;
                if alpha < 1e-12 {
                    break None;
                }
            };
            let Some((xt, st, ct, theta_t)) = accepted else {
                return Ok(false);
            };
            self.x = xt;
            self.s = st;
            self.c = ct;
            // Recentre the multipliers of the slacks and bounds.
            for r in 0..self.m {
                if !self.is_eq[r] {
                    self.y[r] = self.mu / self.s[r];
                }
            }
            for &i in &self.free {
                if self.has_lb[i] {
                    self.zl[i] = self.mu / (self.x[i] - self.p.lower[i]);
                }
                if self.has_ub[i] {
                    self.zu[i] = self.mu / (self.p.upper[i] - self.x[i]);
                }
            }
            self.evaluate();
            self.record(alpha, 0.0, delta_w);
            let phi_t = self.barrier_of(&self.x, &self.s);
            if theta_t <= self.opt.feasibility_tolerance
                || (theta_t <= 0.9 * theta_entry && self.filter_acceptable(theta_t, phi_t))
            {
                for r in 0..self.m {
                    if self.is_eq[r] {
                        self.y[r] = 0.0;
                    }
                }
                return Ok(true);
            }
            if alpha < 1e-8 && theta_t > 0.999 * theta {
                return Ok(false);
            }
        }
        Ok(false)
    }

    fn run(&mut self) -> Result<SolveResult, SolveError> {
        self.evaluate();
        let theta0 = self.theta_of(&self.c, &self.s);
        self.theta_max = 1e4 * theta0.max(1.0);
        self.theta_min = 1e-4 * theta0.max(1.0);
        let status = loop {
            if self.converged() {
                break SolveStatus::Optimal;
            }
            if self.iteration >= self.opt.max_iterations {
                break SolveStatus::IterationLimit;
            }
            if let Some(limit) = self.opt.time_limit_s {
                if self.started.elapsed().as_secs_f64() > limit {
                    break SolveStatus::TimeLimit;
                }
            }
            self.update_barrier();
            self.iteration += 1;
            match self.iterate()? {
                Outcome::Finished(status) => break status,
                Outcome::Continue => self.evaluate(),
            }
        };
        Ok(self.finish(status))
    }

    fn finish(&self, status: SolveStatus) -> SolveResult {
        let (_, dual, compl) = self.errors(0.0);
        let mut lower = vec![0.0; self.n];
        let mut upper = vec![0.0; self.n];
        for &i in &self.free {
            lower[i] = self.zl[i];
            upper[i] = self.zu[i];
        }
        let energy = -self.objective(&self.x);
        SolveResult {
            status,
            x: self.x.clone(),
            objective_kwh: energy * self.p.base_power_kva,
            multipliers: Multipliers {
                constraints: self.y.clone(),
                lower,
                upper,
            },
            kkt_residual: dual.max(compl),
            max_violation: max_violation(self.p, &self.x),
            iterations: self.iteration,
            wall_time_s: self.started.elapsed().as_secs_f64(),
            trace: self.trace.clone(),
        }
    }
}
