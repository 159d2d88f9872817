//! Adam with a per-parameter freeze mask.

use alloc::vec;
use alloc::vec::Vec;

use super::config::OptimizerConfig;
use super::real::{lit, Real};

#[derive(Debug, Clone)]
pub struct Adam<T> {
    pub cfg: OptimizerConfig,
    pub m: Vec<Vec<T>>,
    pub v: Vec<Vec<T>>,
    /// Updates folded into the moments so far; drives bias correction.
    pub age: u64,
}

impl<T: Real> Adam<T> {
    pub fn new(cfg: OptimizerConfig, shapes: &[usize]) -> Self {
        Adam {
            cfg,
            m: shapes.iter().map(|&n| vec![T::zero(); n]).collect(),
            v: shapes.iter().map(|&n| vec![T::zero(); n]).collect(),
            age: 0,
        }
    }

    /// One update. Parameters with `frozen[i]` set are skipped entirely,
    /// moments included.
    pub fn step(&mut self, params: &mut [Vec<T>], grads: &[Vec<T>], frozen: &[bool], lr: f64) {
        self.age += 1;
        let t = self.age as i32;
        let (b1, b2) = (self.cfg.beta1, self.cfg.beta2);
        let step_size = lit::<T>(lr / (1.0 - libm::pow(b1, t as f64)));
        let inv_bc2 = lit::<T>(1.0 / libm::sqrt(1.0 - libm::pow(b2, t as f64)));
        let (b1t, b2t) = (lit::<T>(b1), lit::<T>(b2));
        let (c1, c2) = (lit::<T>(1.0 - b1), lit::<T>(1.0 - b2));
        let eps = lit::<T>(self.cfg.eps);
        for i in 0..params.len() {
            if frozen[i] {
                continue;
            }
            let (p, g, m, v) = (&mut params[i], &grads[i], &mut self.m[i], &mut self.v[i]);
            for j in 0..p.len() {
                let gj = g[j];
                m[j] = b1t * m[j] + c1 * gj;
                v[j] = b2t * v[j] + c2 * gj * gj;
                p[j] -= step_size * m[j] / (v[j].sqrt() * inv_bc2 + eps);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_moves_by_lr_and_respects_freeze() {
        let mut adam = Adam::<f64>::new(OptimizerConfig::default(), &[2, 1]);
        let mut p = vec![vec![1.0, -1.0], vec![3.0]];
        let g = vec![vec![0.5, -2.0], vec![1.0]];
        adam.step(&mut p, &g, &[false, true], 0.1);
        assert!((p[0][0] - 0.9).abs() < 1e-6);
        assert!((p[0][1] + 0.9).abs() < 1e-6);
        assert_eq!(p[1][0].to_bits(), 3.0f64.to_bits());
        assert!(adam.m[1].iter().all(|&x| x == 0.0));
    }
}
