//! Anderson acceleration of fixed-point iterations.
//!
//! Given the history of iterates xʲ and images f(xʲ), each step picks affine
//! weights α (Σα = 1) minimizing ‖Σ αⱼ (f(xʲ) − xʲ)‖ and returns Σ αⱼ f(xʲ).
//! The constrained least squares is solved in the difference reformulation
//! with a relative ridge term; memory 0 reproduces the plain iteration
//! bit for bit.

use std::collections::VecDeque;

use nalgebra::{DMatrix, DVector};

/// Diagnostics of a single acceleration step.
#[derive(Debug, Clone, Copy, Default)]
pub struct AaStep {
    /// Number of history differences entering the least squares.
    pub memory_used: usize,
    /// True when the least squares was skipped (singular system) and the
    /// plain fixed-point image was returned instead.
    pub fell_back: bool,
}

/// Rolling history window of (iterate, image) pairs.
#[derive(Debug, Clone)]
pub struct AndersonAccelerator {
    memory: usize,
    ridge_rel: f64,
    xs: VecDeque<DVector<f64>>,
    fs: VecDeque<DVector<f64>>,
}

impl AndersonAccelerator {
    /// `memory` is the window depth m; `ridge_rel` scales the regularization
    /// relative to the Gram-matrix trace.
    pub fn new(memory: usize, ridge_rel: f64) -> Self {
        Self {
            memory,
            ridge_rel,
            xs: VecDeque::with_capacity(memory + 1),
            fs: VecDeque::with_capacity(memory + 1),
        }
    }

    pub fn reset(&mut self) {
        self.xs.clear();
        self.fs.clear();
    }

    /// Ingest the pair (x, f(x)) and return the next iterate.
    pub fn next_iterate(&mut self, x: &[f64], fx: &[f64]) -> (Vec<f64>, AaStep) {
        self.xs.push_back(DVector::from_column_slice(x));
        self.fs.push_back(DVector::from_column_slice(fx));
        while self.xs.len() > self.memory + 1 {
            self.xs.pop_front();
            self.fs.pop_front();
        }

        let h = self.xs.len();
        if self.memory == 0 || h < 2 {
            return (fx.to_vec(), AaStep::default());
        }

        let n = x.len();
        let cols = h - 1;
        let resid: Vec<DVector<f64>> = self.xs.iter().zip(&self.fs).map(|(xi, fi)| fi - xi).collect();
        let d_resid = DMatrix::from_fn(n, cols, |r, c| resid[c + 1][r] - resid[c][r]);
        let d_image = DMatrix::from_fn(n, cols, |r, c| self.fs[c + 1][r] - self.fs[c][r]);
        let last_resid = &resid[cols];

        let gram = d_resid.transpose() * &d_resid;
        let ridge = self.ridge_rel * gram.trace() / cols as f64;
        let reg = &gram + DMatrix::identity(cols, cols) * ridge;
        let rhs = d_resid.transpose() * last_resid;

        match reg.cholesky() {
            Some(ch) => {
                let gamma = ch.solve(&rhs);
                let next = self.fs.back().unwrap() - &d_image * &gamma;
                (next.as_slice().to_vec(), AaStep { memory_used: cols, fell_back: false })
            }
            None => (fx.to_vec(), AaStep { memory_used: cols, fell_back: true }),
        }
    }
}

/// Run the accelerated iteration until ‖x⁺ − x‖∞ < eps or the iteration
/// budget is spent. Returns the final iterate and the number of function
/// evaluations used.
pub fn aa_solve<F: FnMut(&[f64]) -> Vec<f64>>(
    mut f: F,
    x0: &[f64],
    memory: usize,
    eps: f64,
    max_iter: usize,
    ridge_rel: f64,
) -> (Vec<f64>, usize) {
    let mut aa = AndersonAccelerator::new(memory, ridge_rel);
    let mut x = x0.to_vec();
    for i in 1..=max_iter {
        let fx = f(&x);
        let (next, _) = aa.next_iterate(&x, &fx);
        let delta = next.iter().zip(&x).fold(0.0_f64, |m, (a, b)| m.max((a - b).abs()));
        x = next;
        if delta < eps {
            return (x, i);
        }
    }
    (x, max_iter)
}
