//! Convex subproblem of one successive-approximation step.
//!
//! [`ConcaveProgram`] is a small primal barrier solver for
//!
//! ```text
//! maximize   c.x + sum_k w_k ln det M_k(x) - sum_i d_i (x_i - x0_i)^2
//! subject to a_j.x <= b_j,  N_l(x) >= 0 (PSD)
//! ```
//!
//! with every `M_k`, `N_l` affine in `x`. A phase-one problem finds a strictly
//! feasible start or an infeasibility certificate; phase two follows the
//! central path with damped Newton steps. [`solve_subproblem`] maps the
//! secrecy design step onto it, with Hermitian blocks stored through
//! [`realify`].

use std::f64::consts::{LN_2, SQRT_2};

use serde::{Deserialize, Serialize};

use crate::linalg::{ComplexMatrix, HermitianMatrix, C64};
use crate::model::{ChannelModel, CovarianceSet, FenchelPoint, TaylorCoefficients};

/// Real coordinates of a Hermitian matrix: the diagonal, then
/// `(sqrt2 Re a_ij, sqrt2 Im a_ij)` for `i < j` in row order.
///
/// The `sqrt2` weighting makes the map an isometry, so
/// `tr(A B) = realify(A) . realify(B)` and Frobenius norms are preserved.
pub fn realify(a: &HermitianMatrix) -> Vec<f64> {
    let n = a.dim();
    let mut out = Vec::with_capacity(n * n);
    out.extend((0..n).map(|i| a[(i, i)].re));
    for i in 0..n {
        for j in i + 1..n {
            out.push(SQRT_2 * a[(i, j)].re);
            out.push(SQRT_2 * a[(i, j)].im);
        }
    }
    out
}

/// Inverse of [`realify`]; `v.len()` must be a perfect square.
pub fn unrealify(v: &[f64]) -> HermitianMatrix {
    let n = (v.len() as f64).sqrt().round() as usize;
    assert_eq!(n * n, v.len(), "parameter count must be a perfect square");
    let mut m = ComplexMatrix::zeros(n, n);
    for i in 0..n {
        m[(i, i)] = C64::new(v[i], 0.0);
    }
    let mut k = n;
    for i in 0..n {
        for j in i + 1..n {
            let z = C64::new(v[k], v[k + 1]) / SQRT_2;
            m[(i, j)] = z;
            m[(j, i)] = z.conj();
            k += 2;
        }
    }
    HermitianMatrix::hermitian_part(&m)
}

/// Orthonormal basis matrix for coordinate `k` of an `n x n` block.
fn basis(n: usize, k: usize) -> HermitianMatrix {
    let mut v = vec![0.0; n * n];
    v[k] = 1.0;
    unrealify(&v)
}

/// `M(x) = constant + sum_i x_i M_i`, with the `M_i` stored sparsely.
#[derive(Clone, Debug)]
pub struct AffineHermitian {
    pub constant: HermitianMatrix,
    pub terms: Vec<(usize, HermitianMatrix)>,
}

impl AffineHermitian {
    pub fn constant(m: HermitianMatrix) -> Self {
        Self {
            constant: m,
            terms: Vec::new(),
        }
    }

    pub fn dim(&self) -> usize {
        self.constant.dim()
    }

    /// Adds the block `unrealify(x[offset..offset + n*n])`.
    pub fn with_block(mut self, offset: usize, n: usize) -> Self {
        for k in 0..n * n {
            self.terms.push((offset + k, basis(n, k)));
        }
        self
    }

    pub fn with_term(mut self, var: usize, m: HermitianMatrix) -> Self {
        self.terms.push((var, m));
        self
    }

    pub fn at(&self, x: &[f64]) -> HermitianMatrix {
        let mut m = self.constant.clone();
        for (i, mi) in &self.terms {
            if x[*i] != 0.0 {
                m = m.add(&mi.scale(x[*i]));
            }
        }
        m
    }

    /// `(ln det M, d/dx_i, d2/dx_i dx_j)` or `None` outside the PD cone.
    fn log_det_derivatives(&self, x: &[f64], n_vars: usize) -> Option<(f64, Vec<f64>, Vec<f64>)> {
        let m = self.at(x);
        let chol = m.cholesky()?;
        let ln_det = 2.0 * (0..m.dim()).map(|i| chol[(i, i)].re.ln()).sum::<f64>();
        let inv = m.inverse().ok()?;
        let p: Vec<ComplexMatrix> = self
            .terms
            .iter()
            .map(|(_, mi)| inv.as_matrix().matmul(mi.as_matrix()))
            .collect();
        let mut grad = vec![0.0; n_vars];
        let mut hess = vec![0.0; n_vars * n_vars];
        for (a, (ia, _)) in self.terms.iter().enumerate() {
            grad[*ia] += p[a].trace().re;
            for (b, (ib, _)) in self.terms.iter().enumerate() {
                hess[ia * n_vars + ib] -= trace_of_product(&p[a], &p[b]);
            }
        }
        Some((ln_det, grad, hess))
    }
}

fn trace_of_product(a: &ComplexMatrix, b: &ComplexMatrix) -> f64 {
    let n = a.rows();
    let mut s = C64::new(0.0, 0.0);
    for i in 0..n {
        for k in 0..n {
            s += a[(i, k)] * b[(k, i)];
        }
    }
    s.re
}

/// Outcome of a program solve.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SolveStatus {
    Optimal,
    Infeasible,
    MaxIterations,
}

/// Karush-Kuhn-Tucker residuals of a returned point.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct KktResiduals {
    /// Lagrangian gradient norm over `max(1, |objective gradient|)`.
    pub stationarity: f64,
    /// Largest constraint violation.
    pub primal_feasibility: f64,
    /// Largest multiplier-slack product.
    pub complementarity: f64,
}

impl KktResiduals {
    pub fn max(&self) -> f64 {
        self.stationarity.max(self.primal_feasibility).max(self.complementarity)
    }
}

#[derive(Clone, Debug)]
pub struct ProgramSolution {
    pub x: Vec<f64>,
    pub objective: f64,
    pub status: SolveStatus,
    pub kkt: KktResiduals,
    /// Optimal phase-one violation when infeasible.
    pub infeasibility: Option<f64>,
    pub newton_steps: usize,
}

/// Concave maximisation with linear and PSD constraints; see the module docs.
#[derive(Clone, Debug)]
pub struct ConcaveProgram {
    pub n_vars: usize,
    /// Constant added to the reported objective.
    pub offset: f64,
    pub linear: Vec<f64>,
    pub log_dets: Vec<(f64, AffineHermitian)>,
    /// `(index, weight, center)` of each `- weight (x_i - center)^2` term.
    pub proximal: Vec<(usize, f64, f64)>,
    /// Rows `(a, b)` of `a.x <= b`.
    pub inequalities: Vec<(Vec<f64>, f64)>,
    pub cones: Vec<AffineHermitian>,
}

/// Newton-step budget shared by both phases.
pub const MAX_NEWTON_STEPS: usize = 2000;
const BARRIER_SHRINK: f64 = 0.2;
const PHASE_ONE_ANCHOR: f64 = 1e-3;

impl ConcaveProgram {
    pub fn new(n_vars: usize) -> Self {
        Self {
            n_vars,
            offset: 0.0,
            linear: vec![0.0; n_vars],
            log_dets: Vec::new(),
            proximal: Vec::new(),
            inequalities: Vec::new(),
            cones: Vec::new(),
        }
    }

    pub fn objective(&self, x: &[f64]) -> f64 {
        let mut f = self.offset + dot(&self.linear, x);
        for (w, m) in &self.log_dets {
            f += w * m.at(x).ln_det().unwrap_or(f64::NEG_INFINITY);
        }
        for &(i, w, c) in &self.proximal {
            f -= w * (x[i] - c).powi(2);
        }
        f
    }

    fn objective_gradient(&self, x: &[f64]) -> Vec<f64> {
        let mut g = self.linear.clone();
        for (w, m) in &self.log_dets {
            if let Some((_, gm, _)) = m.log_det_derivatives(x, self.n_vars) {
                axpy(&mut g, *w, &gm);
            }
        }
        for &(i, w, c) in &self.proximal {
            g[i] -= 2.0 * w * (x[i] - c);
        }
        g
    }

    /// Number of barrier terms weighted by dimension.
    fn barrier_degree(&self) -> f64 {
        (self.inequalities.len() + self.cones.iter().map(|c| c.dim()).sum::<usize>()) as f64
    }

    /// Maximises from `start`, which need not be feasible.
    pub fn solve(&self, start: &[f64], tol: f64) -> ProgramSolution {
        assert_eq!(start.len(), self.n_vars, "start point has the wrong length");
        let mut steps = 0;
        let x0 = match self.phase_one(start, tol, &mut steps) {
            PhaseOne::Feasible(x) => x,
            PhaseOne::Infeasible(s) => {
                return ProgramSolution {
                    x: start.to_vec(),
                    objective: self.objective(start),
                    status: SolveStatus::Infeasible,
                    kkt: KktResiduals {
                        primal_feasibility: s.max(0.0),
                        ..Default::default()
                    },
                    infeasibility: Some(s),
                    newton_steps: steps,
                }
            }
            PhaseOne::OutOfSteps(x) => {
                return ProgramSolution {
                    objective: self.objective(&x),
                    kkt: self.kkt(&x, 1.0),
                    x,
                    status: SolveStatus::MaxIterations,
                    infeasibility: None,
                    newton_steps: steps,
                }
            }
        };
        let barrier = Barrier {
            prog: self,
            anchor: None,
        };
        let mut x = x0;
        let mut mu = 1.0;
        let nu = self.barrier_degree().max(1.0);
        let mut status = SolveStatus::Optimal;
        loop {
            if !barrier.center(&mut x, 1.0 / mu, &mut steps) {
                status = SolveStatus::MaxIterations;
                break;
            }
            if mu * nu <= tol {
                break;
            }
            mu *= BARRIER_SHRINK;
        }
        ProgramSolution {
            objective: self.objective(&x),
            kkt: self.kkt(&x, mu),
            x,
            status,
            infeasibility: None,
            newton_steps: steps,
        }
    }

    fn phase_one(&self, start: &[f64], tol: f64, steps: &mut usize) -> PhaseOne {
        let n = self.n_vars;
        let mut violation = f64::NEG_INFINITY;
        for (a, b) in &self.inequalities {
            violation = violation.max(dot(a, start) - b);
        }
        for c in &self.cones {
            let lam = c.at(start).min_eigenvalue().unwrap_or(f64::INFINITY);
            violation = violation.max(-lam);
        }
        if violation < 0.0 {
            return PhaseOne::Feasible(start.to_vec());
        }
        // Variables (x, s): minimise s with a_j.x - s <= b_j and N_l(x) + s I >= 0.
        let mut p1 = ConcaveProgram::new(n + 1);
        p1.linear[n] = -1.0;
        for (a, b) in &self.inequalities {
            let mut row = a.clone();
            row.push(-1.0);
            p1.inequalities.push((row, *b));
        }
        for c in &self.cones {
            p1.cones
                .push(c.clone().with_term(n, HermitianMatrix::identity(c.dim())));
        }
        let barrier = Barrier {
            prog: &p1,
            anchor: Some((start, PHASE_ONE_ANCHOR)),
        };
        let mut y = start.to_vec();
        y.push(violation + 1.0);
        let mut mu = 1.0;
        let nu = p1.barrier_degree().max(1.0);
        loop {
            if !barrier.center(&mut y, 1.0 / mu, steps) {
                return PhaseOne::OutOfSteps(y[..n].to_vec());
            }
            if y[n] < 0.0 {
                return PhaseOne::Feasible(y[..n].to_vec());
            }
            if mu * nu <= tol {
                return PhaseOne::Infeasible(y[n]);
            }
            mu *= BARRIER_SHRINK;
        }
    }

    /// Residuals with duals `mu/slack` and `mu N^{-1}` from the barrier,
    /// refined by a slack-weighted least-squares correction. Rounding of
    /// near-zero slacks caps the accuracy of the raw barrier duals.
    fn kkt(&self, x: &[f64], mu: f64) -> KktResiduals {
        let grad_f = self.objective_gradient(x);
        let mut feas: f64 = 0.0;
        // (column of the Lagrangian gradient, barrier dual, slack) per piece.
        let mut pieces: Vec<(Vec<f64>, f64, f64)> = Vec::new();
        for (a, b) in &self.inequalities {
            let slack = b - dot(a, x);
            feas = feas.max(-slack);
            if slack > 0.0 {
                pieces.push((a.iter().map(|v| -v).collect(), mu / slack, slack));
            }
        }
        for c in &self.cones {
            let Ok(e) = c.at(x).eig() else { continue };
            feas = feas.max(-e.values.last().copied().unwrap_or(0.0));
            for (k, &lam) in e.values.iter().enumerate() {
                if lam <= 0.0 {
                    continue;
                }
                let v = e.vectors.column(k);
                let mut col = vec![0.0; self.n_vars];
                for (i, mi) in &c.terms {
                    col[*i] += mi.quad_form(&v);
                }
                pieces.push((col, mu / lam, lam));
            }
        }
        let residual = |duals: &[f64]| {
            let mut lag = grad_f.clone();
            for ((col, _, _), z) in pieces.iter().zip(duals) {
                axpy(&mut lag, *z, col);
            }
            let comp = pieces.iter().zip(duals).map(|((_, _, s), z)| z * s).fold(0.0, f64::max);
            (norm(&lag), comp, lag)
        };
        let base: Vec<f64> = pieces.iter().map(|p| p.1).collect();
        let (mut stat, mut comp, lag) = residual(&base);
        if let Some(refined) = refine_duals(&pieces, &base, &lag) {
            let (s2, c2, _) = residual(&refined);
            if s2 < stat {
                stat = s2;
                comp = c2;
            }
        }
        KktResiduals {
            stationarity: stat / norm(&grad_f).max(1.0),
            primal_feasibility: feas,
            complementarity: comp,
        }
    }
}

/// Minimises `|lag + C d|^2 + sum (s_k d_k)^2` over dual corrections `d`,
/// clamping the corrected duals at zero.
fn refine_duals(pieces: &[(Vec<f64>, f64, f64)], base: &[f64], lag: &[f64]) -> Option<Vec<f64>> {
    let k = pieces.len();
    if k == 0 {
        return None;
    }
    let mut m = vec![0.0; k * k];
    let mut rhs = vec![0.0; k];
    for i in 0..k {
        for j in 0..=i {
            let v = dot(&pieces[i].0, &pieces[j].0);
            m[i * k + j] = v;
            m[j * k + i] = v;
        }
        m[i * k + i] += pieces[i].2 * pieces[i].2;
        rhs[i] = dot(&pieces[i].0, lag);
    }
    // newton_direction solves M d = -rhs.
    let d = newton_direction(&m, &rhs);
    let out: Vec<f64> = base.iter().zip(&d).map(|(b, d)| (b + d).max(0.0)).collect();
    out.iter().all(|v| v.is_finite()).then_some(out)
}

enum PhaseOne {
    Feasible(Vec<f64>),
    Infeasible(f64),
    OutOfSteps(Vec<f64>),
}

/// `t * (-objective) - barrier`, plus an optional unscaled anchor term.
struct Barrier<'a> {
    prog: &'a ConcaveProgram,
    anchor: Option<(&'a [f64], f64)>,
}

impl Barrier<'_> {
    fn value(&self, x: &[f64], t: f64) -> Option<f64> {
        let p = self.prog;
        let mut v = -t * dot(&p.linear, x);
        for (w, m) in &p.log_dets {
            v -= t * w * m.at(x).ln_det().ok()?;
        }
        for &(i, w, c) in &p.proximal {
            v += t * w * (x[i] - c).powi(2);
        }
        for (a, b) in &p.inequalities {
            let s = b - dot(a, x);
            if !(s > 0.0) {
                return None;
            }
            v -= s.ln();
        }
        for c in &p.cones {
            v -= c.at(x).ln_det().ok()?;
        }
        if let Some((x0, rho)) = self.anchor {
            v += rho * x0.iter().zip(x).map(|(a, b)| (a - b).powi(2)).sum::<f64>();
        }
        Some(v)
    }

    fn derivatives(&self, x: &[f64], t: f64) -> Option<(Vec<f64>, Vec<f64>)> {
        let p = self.prog;
        let n = p.n_vars;
        let mut g: Vec<f64> = p.linear.iter().map(|c| -t * c).collect();
        let mut h = vec![0.0; n * n];
        for (w, m) in &p.log_dets {
            let (_, gm, hm) = m.log_det_derivatives(x, n)?;
            axpy(&mut g, -t * w, &gm);
            axpy(&mut h, -t * w, &hm);
        }
        for &(i, w, c) in &p.proximal {
            g[i] += 2.0 * t * w * (x[i] - c);
            h[i * n + i] += 2.0 * t * w;
        }
        for (a, b) in &p.inequalities {
            let s = b - dot(a, x);
            if !(s > 0.0) {
                return None;
            }
            axpy(&mut g, 1.0 / s, a);
            for i in 0..n {
                if a[i] == 0.0 {
                    continue;
                }
                for j in 0..n {
                    h[i * n + j] += a[i] * a[j] / (s * s);
                }
            }
        }
        for c in &p.cones {
            let (_, gm, hm) = c.log_det_derivatives(x, n)?;
            axpy(&mut g, -1.0, &gm);
            axpy(&mut h, -1.0, &hm);
        }
        if let Some((x0, rho)) = self.anchor {
            for i in 0..x0.len() {
                g[i] += 2.0 * rho * (x[i] - x0[i]);
                h[i * n + i] += 2.0 * rho;
            }
        }
        Some((g, h))
    }

    /// Damped Newton centering at `t`; false once the step budget is spent.
    fn center(&self, x: &mut Vec<f64>, t: f64, steps: &mut usize) -> bool {
        let mut last_decrement = f64::INFINITY;
        for _ in 0..100 {
            if *steps >= MAX_NEWTON_STEPS {
                return false;
            }
            *steps += 1;
            let Some((g, h)) = self.derivatives(x, t) else {
                return false;
            };
            let dx = newton_direction(&h, &g);
            let decrement = -dot(&g, &dx);
            // Stalled at rounding level: further steps only cycle.
            if decrement <= 1e-24 || !decrement.is_finite() || (decrement < 1e-8 && decrement > 0.5 * last_decrement) {
                return true;
            }
            last_decrement = decrement;
            let f0 = self.value(x, t).expect("iterate is strictly feasible");
            // Inside the quadratic-convergence region a full step needs only
            // feasibility; there the decrease is below rounding of `f0`.
            let full_step_safe = decrement < 0.1;
            let mut alpha = 1.0;
            let mut accepted = false;
            while alpha > 1e-14 {
                let trial: Vec<f64> = x.iter().zip(&dx).map(|(a, d)| a + alpha * d).collect();
                if let Some(f) = self.value(&trial, t) {
                    if full_step_safe || f <= f0 - 0.25 * alpha * decrement {
                        *x = trial;
                        accepted = true;
                        break;
                    }
                }
                alpha *= 0.5;
            }
            if !accepted || decrement <= 1e-20 {
                return true;
            }
        }
        true
    }
}

/// Solves `H d = -g` by Cholesky on the diagonally scaled system,
/// regularising the diagonal if needed.
fn newton_direction(h: &[f64], g: &[f64]) -> Vec<f64> {
    let n = g.len();
    let scale = (0..n)
        .map(|i| h[i * n + i].abs())
        .filter(|a| a.is_finite())
        .fold(0.0, f64::max)
        .max(1e-300);
    let d: Vec<f64> = (0..n)
        .map(|i| {
            let a = h[i * n + i].abs();
            1.0 / if a > 1e-12 * scale && a.is_finite() { a } else { scale }.sqrt()
        })
        .collect();
    let hs: Vec<f64> = (0..n * n).map(|k| h[k] * d[k / n] * d[k % n]).collect();
    let gs: Vec<f64> = g.iter().zip(&d).map(|(a, b)| a * b).collect();
    let mut shift = 0.0;
    loop {
        if let Some(l) = cholesky(&hs, n, shift) {
            let mut y = vec![0.0; n];
            for i in 0..n {
                let s: f64 = (0..i).map(|k| l[i * n + k] * y[k]).sum();
                y[i] = (-gs[i] - s) / l[i * n + i];
            }
            let mut x = vec![0.0; n];
            for i in (0..n).rev() {
                let s: f64 = (i + 1..n).map(|k| l[k * n + i] * x[k]).sum();
                x[i] = (y[i] - s) / l[i * n + i];
            }
            return x.iter().zip(&d).map(|(a, b)| a * b).collect();
        }
        shift = if shift == 0.0 { 1e-12 } else { shift * 10.0 };
    }
}

fn cholesky(a: &[f64], n: usize, shift: f64) -> Option<Vec<f64>> {
    let mut l = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..=i {
            let mut s = a[i * n + j] + if i == j { shift } else { 0.0 };
            for k in 0..j {
                s -= l[i * n + k] * l[j * n + k];
            }
            if i == j {
                if !(s > 0.0) {
                    return None;
                }
                l[i * n + i] = s.sqrt();
            } else {
                l[i * n + j] = s / l[j * n + j];
            }
        }
    }
    Some(l)
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn axpy(y: &mut [f64], a: f64, x: &[f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}

fn norm(v: &[f64]) -> f64 {
    dot(v, v).sqrt()
}

/// Weights of the proximal penalties.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Penalties {
    pub rate: f64,
    pub signal: f64,
    pub bs_noise: f64,
    pub ue_noise: f64,
}

impl Penalties {
    pub fn uniform(w: f64) -> Self {
        Self {
            rate: w,
            signal: w,
            bs_noise: w,
            ue_noise: w,
        }
    }

    pub fn scaled(&self, c: f64) -> Self {
        Self {
            rate: self.rate * c,
            signal: self.signal * c,
            bs_noise: self.bs_noise * c,
            ue_noise: self.ue_noise * c,
        }
    }

    pub fn min(&self) -> f64 {
        self.rate.min(self.signal).min(self.bs_noise).min(self.ue_noise)
    }
}

/// Data of one convexified design step.
#[derive(Clone, Debug)]
pub struct SubproblemSpec {
    pub fenchel: FenchelPoint,
    pub eve: TaylorCoefficients,
    pub exposure: TaylorCoefficients,
    pub epsilon: f64,
    pub delta: f64,
    pub bs_power: f64,
    pub ue_power: f64,
    pub penalties: Penalties,
    /// Point the proximal penalties pull toward; also the solver start.
    pub anchor: CovarianceSet,
    pub bs_noise_enabled: bool,
    pub ue_noise_enabled: bool,
}

/// Variable layout of the realified subproblem.
struct Layout {
    n_bs: usize,
    n_ue: usize,
    signal: usize,
    bs_noise: Option<usize>,
    ue_noise: Option<usize>,
    rate: usize,
    n_vars: usize,
}

impl Layout {
    fn new(n_bs: usize, n_ue: usize, bs_noise: bool, ue_noise: bool) -> Self {
        let mut next = n_bs * n_bs;
        let bs = bs_noise.then(|| {
            let o = next;
            next += n_bs * n_bs;
            o
        });
        let ue = ue_noise.then(|| {
            let o = next;
            next += n_ue * n_ue;
            o
        });
        Self {
            n_bs,
            n_ue,
            signal: 0,
            bs_noise: bs,
            ue_noise: ue,
            rate: next,
            n_vars: next + 1,
        }
    }

    fn pack(&self, c: &CovarianceSet) -> Vec<f64> {
        let mut x = vec![0.0; self.n_vars];
        x[..self.n_bs * self.n_bs].copy_from_slice(&realify(&c.signal));
        if let Some(o) = self.bs_noise {
            x[o..o + self.n_bs * self.n_bs].copy_from_slice(&realify(&c.bs_noise));
        }
        if let Some(o) = self.ue_noise {
            x[o..o + self.n_ue * self.n_ue].copy_from_slice(&realify(&c.ue_noise));
        }
        x[self.rate] = c.rate_threshold;
        x
    }

    fn unpack(&self, x: &[f64]) -> CovarianceSet {
        let nb = self.n_bs * self.n_bs;
        let nu = self.n_ue * self.n_ue;
        CovarianceSet {
            signal: unrealify(&x[..nb]),
            bs_noise: self
                .bs_noise
                .map_or_else(|| HermitianMatrix::zeros(self.n_bs), |o| unrealify(&x[o..o + nb])),
            ue_noise: self
                .ue_noise
                .map_or_else(|| HermitianMatrix::zeros(self.n_ue), |o| unrealify(&x[o..o + nu])),
            rate_threshold: x[self.rate],
        }
    }

    /// Coefficient row of a linear functional given by Hermitian gradients.
    fn row(&self, signal: &HermitianMatrix, bs: &HermitianMatrix, ue: &HermitianMatrix, rate: f64) -> Vec<f64> {
        self.pack(&CovarianceSet {
            signal: signal.clone(),
            bs_noise: bs.clone(),
            ue_noise: ue.clone(),
            rate_threshold: rate,
        })
    }
}

/// Result of one design step.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SubproblemSolution {
    pub covariances: CovarianceSet,
    /// Surrogate objective (bound on the user rate minus threshold and penalties).
    pub objective: f64,
    pub kkt: KktResiduals,
    pub status: SolveStatus,
    pub infeasibility: Option<f64>,
    pub newton_steps: usize,
}

impl SubproblemSpec {
    fn program(&self, ch: &ChannelModel) -> (ConcaveProgram, Layout) {
        let d = ch.dims();
        let (nb, nu) = (d.n_bs, d.n_ue_tx);
        let lay = Layout::new(nb, nu, self.bs_noise_enabled, self.ue_noise_enabled);
        let mut p = ConcaveProgram::new(lay.n_vars);
        let h = ch.h_u();
        let g = ch.description().self_interference;
        let n_rx = d.n_ue_rx;
        let b_inv = self.fenchel.inverse();

        // ln det of signal-plus-interference covariance, in bits.
        let mut a = AffineHermitian::constant(ch.description().user_noise.clone());
        for k in 0..nb * nb {
            a = a.with_term(lay.signal + k, basis(nb, k).congruence(h));
        }
        if let Some(o) = lay.bs_noise {
            for k in 0..nb * nb {
                let hb = basis(nb, k).congruence(h);
                a = a.with_term(o + k, hb.clone());
                p.linear[o + k] -= b_inv.inner(&hb) / LN_2;
            }
        }
        if let Some(o) = lay.ue_noise {
            for k in 0..nu {
                a = a.with_term(o + k, HermitianMatrix::scaled_identity(n_rx, g));
                p.linear[o + k] -= g * b_inv.trace() / LN_2;
            }
        }
        p.log_dets.push((1.0 / LN_2, a));
        p.linear[lay.rate] -= 1.0;
        p.offset = (n_rx as f64 - self.fenchel.ln_det() - b_inv.inner(&ch.description().user_noise)) / LN_2;

        let anchor = lay.pack(&self.anchor);
        let mut prox = |range: std::ops::Range<usize>, w: f64| {
            for i in range {
                p.proximal.push((i, w, anchor[i]));
            }
        };
        prox(lay.signal..lay.signal + nb * nb, self.penalties.signal);
        if let Some(o) = lay.bs_noise {
            prox(o..o + nb * nb, self.penalties.bs_noise);
        }
        if let Some(o) = lay.ue_noise {
            prox(o..o + nu * nu, self.penalties.ue_noise);
        }
        prox(lay.rate..lay.rate + 1, self.penalties.rate);

        // value + grad.(x - x0) >= target  <=>  -grad.x <= value - grad.x0 - target.
        for (t, target) in [(&self.eve, 1.0 - self.epsilon), (&self.exposure, 1.0 - self.delta)] {
            let row = lay.row(&t.signal, &t.bs_noise, &t.ue_noise, t.rate);
            let x0 = lay.pack(&t.origin);
            let neg: Vec<f64> = row.iter().map(|v| -v).collect();
            p.inequalities.push((neg, t.value - dot(&row, &x0) - target));
        }
        let eye_bs = HermitianMatrix::identity(nb);
        let zero_bs = HermitianMatrix::zeros(nb);
        let zero_ue = HermitianMatrix::zeros(nu);
        p.inequalities
            .push((lay.row(&eye_bs, &eye_bs, &zero_ue, 0.0), self.bs_power));
        if lay.ue_noise.is_some() {
            p.inequalities.push((
                lay.row(&zero_bs, &zero_bs, &HermitianMatrix::identity(nu), 0.0),
                self.ue_power,
            ));
        }
        p.inequalities.push((lay.row(&zero_bs, &zero_bs, &zero_ue, -1.0), 0.0));
        // Thresholds above any achievable user rate only zero the objective.
        p.inequalities.push((
            lay.row(&zero_bs, &zero_bs, &zero_ue, 1.0),
            ch.user_rate_bound(self.bs_power),
        ));

        p.cones
            .push(AffineHermitian::constant(zero_bs.clone()).with_block(lay.signal, nb));
        if let Some(o) = lay.bs_noise {
            p.cones
                .push(AffineHermitian::constant(zero_bs.clone()).with_block(o, nb));
        }
        if let Some(o) = lay.ue_noise {
            p.cones
                .push(AffineHermitian::constant(zero_ue.clone()).with_block(o, nu));
        }
        (p, lay)
    }

    /// Surrogate objective evaluated directly on covariances.
    pub fn objective(&self, ch: &ChannelModel, c: &CovarianceSet) -> f64 {
        let pen = &self.penalties;
        let a = &self.anchor;
        crate::model::fenchel_lower_bound(ch, c, &self.fenchel)
            - c.rate_threshold
            - pen.rate * (c.rate_threshold - a.rate_threshold).powi(2)
            - pen.signal * c.signal.sub(&a.signal).frobenius_norm().powi(2)
            - pen.bs_noise * c.bs_noise.sub(&a.bs_noise).frobenius_norm().powi(2)
            - pen.ue_noise * c.ue_noise.sub(&a.ue_noise).frobenius_norm().powi(2)
    }
}

/// Default barrier tolerance of [`solve_subproblem`].
pub const DEFAULT_SUBPROBLEM_TOL: f64 = 1e-8;

/// Solves one convexified design step starting from the anchor.
pub fn solve_subproblem(ch: &ChannelModel, spec: &SubproblemSpec, tol: f64) -> SubproblemSolution {
    assert!((1e-12..=1e-4).contains(&tol), "solver tolerance out of range");
    let (prog, lay) = spec.program(ch);
    let sol = prog.solve(&lay.pack(&spec.anchor), tol);
    SubproblemSolution {
        covariances: lay.unpack(&sol.x),
        objective: sol.objective,
        kkt: sol.kkt,
        status: sol.status,
        infeasibility: sol.infeasibility,
        newton_steps: sol.newton_steps,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{taylor_eve, taylor_exposure, ChannelDescription, Dimensions};
    use crate::testing::{random_cov, random_hermitian, rng};
    use proptest::prelude::*;
    use rand::Rng;

    #[test]
    fn realify_identity_and_round_trip() {
        assert_eq!(realify(&HermitianMatrix::identity(2)), vec![1.0, 1.0, 0.0, 0.0]);
        let mut g = rng(1);
        for n in 1..4 {
            let a = random_hermitian(&mut g, n);
            let back = unrealify(&realify(&a));
            assert!(back.sub(&a).frobenius_norm() < 1e-15);
        }
    }

    #[test]
    fn realify_is_an_isometry() {
        let mut g = rng(2);
        for _ in 0..20 {
            let a = random_hermitian(&mut g, 3);
            let b = random_hermitian(&mut g, 3);
            let (va, vb) = (realify(&a), realify(&b));
            assert!((dot(&va, &vb) - a.inner(&b)).abs() < 1e-12);
            assert!((norm(&va) - a.frobenius_norm()).abs() < 1e-12);
        }
    }

    proptest! {
        #[test]
        fn round_trip_is_exact_on_parameters(v in proptest::collection::vec(-5.0f64..5.0, 9)) {
            let back = realify(&unrealify(&v));
            for (a, b) in v.iter().zip(&back) {
                prop_assert!((a - b).abs() <= 1e-15 * a.abs().max(1.0));
            }
        }
    }

    /// maximise ln det(Q + 0.1 I) s.t. tr Q <= p, Q >= 0.
    fn water_filling(p: f64) -> ConcaveProgram {
        let mut prog = ConcaveProgram::new(4);
        prog.log_dets.push((
            1.0,
            AffineHermitian::constant(HermitianMatrix::scaled_identity(2, 0.1)).with_block(0, 2),
        ));
        prog.inequalities.push((vec![1.0, 1.0, 0.0, 0.0], p));
        prog.cones
            .push(AffineHermitian::constant(HermitianMatrix::zeros(2)).with_block(0, 2));
        prog
    }

    #[test]
    fn symmetric_log_det_splits_power_evenly() {
        for p in [0.5, 3.0, 10.0] {
            let sol = water_filling(p).solve(&[0.0, 0.0, 0.3, -0.2], 1e-9);
            assert_eq!(sol.status, SolveStatus::Optimal);
            let q = unrealify(&sol.x);
            assert!(q.sub(&HermitianMatrix::scaled_identity(2, p / 2.0)).frobenius_norm() < 1e-6);
            assert!(sol.kkt.max() <= 1e-6, "{:?}", sol.kkt);
        }
    }

    #[test]
    fn kkt_residuals_reject_suboptimal_points() {
        let prog = water_filling(3.0);
        let sol = prog.solve(&[0.0; 4], 1e-9);
        assert!(sol.kkt.max() < 1e-8);
        let interior = [0.5, 0.5, 0.0, 0.0];
        assert!(prog.kkt(&interior, 1e-10).max() > 1e-2);
        let lopsided = [2.0, 0.9, 0.0, 0.0];
        assert!(prog.kkt(&lopsided, 1e-10).max() > 1e-2);
    }

    #[test]
    fn negative_budget_is_infeasible() {
        let sol = water_filling(-1.0).solve(&[0.0; 4], 1e-8);
        assert_eq!(sol.status, SolveStatus::Infeasible);
        let s = sol.infeasibility.unwrap();
        // Best compromise puts both diagonal entries at -s with 2(-s) = -1 + s.
        assert!((s - 1.0 / 3.0).abs() < 1e-6, "{s}");
    }

    fn unit_channel() -> ChannelModel {
        let h = ComplexMatrix::from_real_rows(&[vec![1.0, 0.0]]);
        ChannelModel::new(ChannelDescription::isotropic(h, 1, 0.1, 0.1, 0.1)).unwrap()
    }

    /// Taylor models that are constant and always satisfied.
    fn inactive(value: f64, origin: &CovarianceSet) -> TaylorCoefficients {
        TaylorCoefficients {
            value,
            origin: origin.clone(),
            signal: HermitianMatrix::zeros(2),
            bs_noise: HermitianMatrix::zeros(2),
            ue_noise: HermitianMatrix::zeros(1),
            rate: 0.0,
            ill_conditioned: false,
        }
    }

    fn signal_only_spec(ch: &ChannelModel, anchor: CovarianceSet, gamma: f64) -> SubproblemSpec {
        SubproblemSpec {
            fenchel: FenchelPoint::at(ch, &anchor),
            eve: inactive(1.0, &anchor),
            exposure: inactive(1.0, &anchor),
            epsilon: 0.05,
            delta: 0.05,
            bs_power: 1e6,
            ue_power: 1e6,
            penalties: Penalties::uniform(gamma),
            anchor,
            bs_noise_enabled: false,
            ue_noise_enabled: false,
        }
    }

    /// Dense scan of the signal entry seen by the channel; everything else
    /// stays at the anchor (or its optimum in closed form).
    fn scan_signal(anchor_q: f64, gamma: f64) -> (f64, f64) {
        let n = 100_000;
        let (mut best, mut arg) = (f64::NEG_INFINITY, 0.0);
        for i in 0..=n {
            let q = 20.0 * i as f64 / n as f64;
            let f = ((0.1 + q) / 0.1).log2() - gamma * (q - anchor_q).powi(2);
            if f > best {
                best = f;
                arg = q;
            }
        }
        (best, arg)
    }

    #[test]
    fn unconstrained_step_matches_grid_scan() {
        let ch = unit_channel();
        for (q0, r0, gamma) in [(1.0, 2.0, 1.0), (0.2, 0.1, 3.0), (4.0, 0.8, 0.5)] {
            let mut anchor = CovarianceSet::zeros(Dimensions::TWO_BY_ONE);
            anchor.signal = HermitianMatrix::from_diag(&[q0, 0.7]);
            anchor.rate_threshold = r0;
            let spec = signal_only_spec(&ch, anchor, gamma);
            let sol = solve_subproblem(&ch, &spec, DEFAULT_SUBPROBLEM_TOL);
            assert_eq!(sol.status, SolveStatus::Optimal);
            let (best_q, arg) = scan_signal(q0, gamma);
            let r_opt = (r0 - 0.5 / gamma).max(0.0);
            let best = best_q - r_opt - gamma * (r_opt - r0).powi(2);
            assert!((sol.objective - best).abs() < 1e-4, "{} vs {best}", sol.objective);
            assert!((sol.covariances.signal[(0, 0)].re - arg).abs() < 1e-3);
            assert!((sol.covariances.signal[(1, 1)].re - 0.7).abs() < 1e-6);
            assert!((sol.covariances.rate_threshold - r_opt).abs() < 1e-6);
            assert!((spec.objective(&ch, &sol.covariances) - sol.objective).abs() < 1e-9);
            assert!(sol.kkt.max() <= 1e-6, "{:?}", sol.kkt);
        }
    }

    #[test]
    fn linearised_constraints_are_respected() {
        let ch = unit_channel();
        let mut g = rng(9);
        let mut solved = 0;
        for _ in 0..20 {
            let mut anchor = random_cov(&mut g, Dimensions::TWO_BY_ONE, 3.0);
            anchor.rate_threshold = crate::model::rate_threshold_for_outage(&ch, &anchor, 0.05).unwrap();
            let z = g.gen_range(5.0..20.0);
            let spec = SubproblemSpec {
                fenchel: FenchelPoint::at(&ch, &anchor),
                eve: taylor_eve(&ch, &anchor),
                exposure: taylor_exposure(&ch, &anchor, z),
                epsilon: 0.05,
                delta: 0.05,
                bs_power: 10.0,
                ue_power: 10.0,
                penalties: Penalties::uniform(1.0),
                anchor: anchor.clone(),
                bs_noise_enabled: true,
                ue_noise_enabled: true,
            };
            let sol = solve_subproblem(&ch, &spec, DEFAULT_SUBPROBLEM_TOL);
            if sol.status != SolveStatus::Optimal {
                continue;
            }
            solved += 1;
            let c = &sol.covariances;
            assert!(spec.eve.evaluate(c) >= 0.95 - 1e-9);
            assert!(spec.exposure.evaluate(c) >= 0.95 - 1e-9);
            assert!(c.bs_power() <= 10.0 + 1e-9 && c.ue_power() <= 10.0 + 1e-9);
            assert!(c.signal.min_eigenvalue().unwrap() >= -1e-12);
            assert!(sol.kkt.max() <= 1e-6, "{:?}", sol.kkt);
            // The anchor is a candidate whenever it satisfies the models.
            if spec.exposure.value >= 0.95 && c.bs_power() <= 10.0 {
                assert!(sol.objective >= spec.objective(&ch, &anchor) - 1e-7);
            }
        }
        assert!(solved >= 15, "{solved}");
    }

    #[test]
    fn pinned_blocks_stay_zero() {
        let ch = unit_channel();
        let mut anchor = CovarianceSet::zeros(Dimensions::TWO_BY_ONE);
        anchor.signal = HermitianMatrix::from_diag(&[1.0, 1.0]);
        let spec = signal_only_spec(&ch, anchor, 1.0);
        let sol = solve_subproblem(&ch, &spec, 1e-8);
        assert_eq!(sol.covariances.bs_noise, HermitianMatrix::zeros(2));
        assert_eq!(sol.covariances.ue_noise, HermitianMatrix::zeros(1));
    }

    #[test]
    fn solves_are_deterministic() {
        let ch = unit_channel();
        let mut anchor = CovarianceSet::zeros(Dimensions::TWO_BY_ONE);
        anchor.signal = HermitianMatrix::from_diag(&[1.0, 0.5]);
        let spec = signal_only_spec(&ch, anchor, 2.0);
        let a = solve_subproblem(&ch, &spec, 1e-8);
        let b = solve_subproblem(&ch, &spec, 1e-8);
        assert_eq!(a.covariances, b.covariances);
        assert_eq!(a.objective.to_bits(), b.objective.to_bits());
    }
}
