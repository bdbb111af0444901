//! Adam with lazy per-coordinate updates.
//!
//! Hashed feature models touch a few dozen of 2^18 coordinates per batch, so
//! moments are only advanced for coordinates that received a gradient in the
//! current step (the "sparse Adam" convention). For dense gradients the
//! update is the textbook one.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Adam {
    cfg: AdamConfig,
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
    c1: f64,
    c2: f64,
}

impl Adam {
    pub fn new(cfg: AdamConfig, n_params: usize) -> Self {
        Self {
            cfg,
            m: vec![0.0; n_params],
            v: vec![0.0; n_params],
            t: 0,
            c1: 1.0,
            c2: 1.0,
        }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    /// Advance the step counter; call once per optimizer step.
    pub fn begin_step(&mut self) {
        self.t += 1;
        self.c1 = 1.0 - self.cfg.beta1.powi(self.t as i32);
        self.c2 = 1.0 - self.cfg.beta2.powi(self.t as i32);
    }

    /// Parameter delta for coordinate `i` given its gradient.
    #[inline]
    pub fn delta(&mut self, i: usize, g: f64) -> f64 {
        let m = &mut self.m[i];
        let v = &mut self.v[i];
        *m = self.cfg.beta1 * *m + (1.0 - self.cfg.beta1) * g;
        *v = self.cfg.beta2 * *v + (1.0 - self.cfg.beta2) * g * g;
        let mhat = *m / self.c1;
        let vhat = *v / self.c2;
        -self.cfg.lr * mhat / (vhat.sqrt() + self.cfg.eps)
    }
}

/// Dense gradient accumulator that remembers which coordinates it touched.
#[derive(Debug, Clone)]
pub struct SparseGrad {
    values: Vec<f64>,
    touched: Vec<u32>,
    seen: Vec<bool>,
}

impl SparseGrad {
    pub fn new(dim: usize) -> Self {
        Self {
            values: vec![0.0; dim],
            touched: Vec::new(),
            seen: vec![false; dim],
        }
    }

    #[inline]
    pub fn add(&mut self, i: u32, g: f64) {
        let iu = i as usize;
        if !self.seen[iu] {
            self.seen[iu] = true;
            self.touched.push(i);
        }
        self.values[iu] += g;
    }

    pub fn get(&self, i: usize) -> f64 {
        self.values[i]
    }

    /// Drain touched coordinates in ascending index order.
    pub fn drain(&mut self) -> Vec<(u32, f64)> {
        self.touched.sort_unstable();
        let out = self
            .touched
            .iter()
            .map(|&i| (i, self.values[i as usize]))
            .collect();
        for &i in &self.touched {
            self.values[i as usize] = 0.0;
            self.seen[i as usize] = false;
        }
        self.touched.clear();
        out
    }

    pub fn to_dense(&self) -> Vec<f64> {
        self.values.clone()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_moves_by_lr() {
        let mut a = Adam::new(AdamConfig::default(), 2);
        a.begin_step();
        let d = a.delta(0, 3.0);
        assert!((d + 1e-3).abs() < 1e-9);
        let d = a.delta(1, -0.5);
        assert!((d - 1e-3).abs() < 1e-9);
    }

    #[test]
    fn minimizes_quadratic() {
        let mut a = Adam::new(
            AdamConfig {
                lr: 0.1,
                ..AdamConfig::default()
            },
            1,
        );
        let mut x = 5.0;
        for _ in 0..500 {
            a.begin_step();
            x += a.delta(0, 2.0 * (x - 1.0));
        }
        assert!((x - 1.0).abs() < 1e-2);
    }

    #[test]
    fn sparse_grad_drains_sorted_and_resets() {
        let mut g = SparseGrad::new(8);
        g.add(5, 1.0);
        g.add(2, 0.5);
        g.add(5, 1.0);
        assert_eq!(g.drain(), vec![(2, 0.5), (5, 2.0)]);
        assert!(g.drain().is_empty());
        assert_eq!(g.get(5), 0.0);
    }
}
