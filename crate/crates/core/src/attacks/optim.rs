//! Adversary-side optimizers over a flat parameter vector.
//!
//! Both optimizers drive an evaluation closure that returns the objective
//! and its gradient at a candidate point; the L-BFGS variant may call it
//! several times per step when backtracking is enabled.

use std::collections::VecDeque;

use crate::error::Result;

/// Objective-and-gradient oracle at a candidate parameter vector.
pub type EvalFn<'a> = dyn FnMut(&[f64]) -> Result<(f64, Vec<f64>)> + 'a;

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Bias-corrected first/second-moment optimizer.
#[derive(Debug, Clone)]
pub struct AdamOptimizer {
    eta: f64,
    beta1: f64,
    beta2: f64,
    epsilon: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: u32,
}

impl AdamOptimizer {
    pub fn new(eta: f64, dim: usize) -> Self {
        Self {
            eta,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            m: vec![0.0; dim],
            v: vec![0.0; dim],
            t: 0,
        }
    }

    pub fn with_betas(mut self, beta1: f64, beta2: f64) -> Self {
        self.beta1 = beta1;
        self.beta2 = beta2;
        self
    }

    pub fn step_count(&self) -> u32 {
        self.t
    }

    /// One update from an externally computed gradient.
    pub fn apply_gradient(&mut self, params: &mut [f64], grad: &[f64]) {
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for i in 0..params.len() {
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * grad[i];
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * grad[i] * grad[i];
            let mhat = self.m[i] / bc1;
            let vhat = self.v[i] / bc2;
            params[i] -= self.eta * mhat / (vhat.sqrt() + self.epsilon);
        }
    }

    /// Evaluate at the current point, update, return the pre-step objective.
    pub fn step(&mut self, params: &mut [f64], eval: &mut EvalFn) -> Result<f64> {
        let (f, g) = eval(params)?;
        if !f.is_finite() {
            return Ok(f);
        }
        self.apply_gradient(params, &g);
        Ok(f)
    }
}

/// Limited-memory BFGS with two-loop recursion and a constant step length;
/// optional Armijo backtracking sits behind `armijo`.
#[derive(Debug, Clone)]
pub struct LbfgsOptimizer {
    eta: f64,
    history: usize,
    armijo: bool,
    s_list: VecDeque<Vec<f64>>,
    y_list: VecDeque<Vec<f64>>,
    rho: VecDeque<f64>,
    prev: Option<(Vec<f64>, Vec<f64>)>,
}

/// Curvature pairs whose normalized inner product `s.y / (|s||y|)` falls at
/// or below this are skipped. The guard is relative: an absolute floor
/// starts rejecting every legitimate pair once steps shrink near
/// convergence, which stalls the recovery right at the early-exit scale.
const CURVATURE_FLOOR: f64 = 1e-10;

impl LbfgsOptimizer {
    pub fn new(eta: f64, history: usize, armijo: bool) -> Self {
        Self {
            eta,
            history: history.max(1),
            armijo,
            s_list: VecDeque::new(),
            y_list: VecDeque::new(),
            rho: VecDeque::new(),
            prev: None,
        }
    }

    pub fn stored_pairs(&self) -> usize {
        self.s_list.len()
    }

    /// Two-loop recursion: approximate `H * g`.
    fn direction(&self, grad: &[f64]) -> Vec<f64> {
        let mut q = grad.to_vec();
        let m = self.s_list.len();
        let mut alphas = vec![0.0; m];
        for i in (0..m).rev() {
            let a = self.rho[i] * dot(&self.s_list[i], &q);
            alphas[i] = a;
            for (qj, yj) in q.iter_mut().zip(&self.y_list[i]) {
                *qj -= a * yj;
            }
        }
        // Scale by the most recent curvature estimate.
        if let (Some(s), Some(y)) = (self.s_list.back(), self.y_list.back()) {
            let gamma = dot(s, y) / dot(y, y);
            for qj in q.iter_mut() {
                *qj *= gamma;
            }
        }
        for i in 0..m {
            let b = self.rho[i] * dot(&self.y_list[i], &q);
            for (qj, sj) in q.iter_mut().zip(&self.s_list[i]) {
                *qj += (alphas[i] - b) * sj;
            }
        }
        q
    }

    fn push_pair(&mut self, s: Vec<f64>, y: Vec<f64>) {
        let sy = dot(&s, &y);
        let scale = dot(&s, &s).sqrt() * dot(&y, &y).sqrt();
        if sy <= CURVATURE_FLOOR * scale {
            return;
        }
        if self.s_list.len() == self.history {
            self.s_list.pop_front();
            self.y_list.pop_front();
            self.rho.pop_front();
        }
        self.rho.push_back(1.0 / sy);
        self.s_list.push_back(s);
        self.y_list.push_back(y);
    }

    /// Evaluate, update the curvature history, move along the quasi-Newton
    /// direction, and return the pre-step objective.
    pub fn step(&mut self, params: &mut [f64], eval: &mut EvalFn) -> Result<f64> {
        let (f0, grad) = eval(params)?;
        if !f0.is_finite() {
            return Ok(f0);
        }

        if let Some((px, pg)) = self.prev.take() {
            let s: Vec<f64> = params.iter().zip(&px).map(|(a, b)| a - b).collect();
            let y: Vec<f64> = grad.iter().zip(&pg).map(|(a, b)| a - b).collect();
            self.push_pair(s, y);
        }

        let mut dir = self.direction(&grad);
        if dir.iter().any(|d| !d.is_finite()) {
            // Degenerate curvature: drop the history, take a plain
            // steepest-descent step.
            self.s_list.clear();
            self.y_list.clear();
            self.rho.clear();
            dir = grad.clone();
        }

        let mut t = 1.0;
        if self.armijo {
            let gd = dot(&grad, &dir);
            while t > 1e-8 {
                let trial: Vec<f64> = params
                    .iter()
                    .zip(&dir)
                    .map(|(p, d)| p - self.eta * t * d)
                    .collect();
                let (ft, _) = eval(&trial)?;
                if ft.is_finite() && ft <= f0 - 1e-4 * self.eta * t * gd {
                    break;
                }
                t *= 0.5;
            }
        }

        self.prev = Some((params.to_vec(), grad));
        for (p, d) in params.iter_mut().zip(&dir) {
            *p -= self.eta * t * d;
        }
        Ok(f0)
    }
}
