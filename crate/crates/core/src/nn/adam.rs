use serde::{Deserialize, Serialize};

use super::tensor::Param;
use crate::error::{Error, Result};

/// Adam with bias correction. Moment buffers follow the parameter order
/// handed to [`Adam::step`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub t: u64,
    m: Vec<Vec<f32>>,
    v: Vec<Vec<f32>>,
}

impl Adam {
    pub fn new(lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    pub fn step(&mut self, params: &mut [&mut Param]) -> Result<()> {
        if self.m.is_empty() {
            self.m = params.iter().map(|p| vec![0.0; p.len()]).collect();
            self.v = self.m.clone();
        }
        if self.m.len() != params.len()
            || self
                .m
                .iter()
                .zip(params.iter())
                .any(|(m, p)| m.len() != p.len())
        {
            return Err(Error::Checkpoint(
                "optimizer state does not match parameters".into(),
            ));
        }
        self.t += 1;
        let b1 = self.beta1 as f32;
        let b2 = self.beta2 as f32;
        let c1 = 1.0 - self.beta1.powi(self.t as i32);
        let c2 = 1.0 - self.beta2.powi(self.t as i32);
        let step = (self.lr * c2.sqrt() / c1) as f32;
        let eps = (self.eps * c2.sqrt()) as f32;
        for (k, p) in params.iter_mut().enumerate() {
            let (m, v) = (&mut self.m[k], &mut self.v[k]);
            for i in 0..p.value.len() {
                let g = p.grad[i];
                m[i] = b1 * m[i] + (1.0 - b1) * g;
                v[i] = b2 * v[i] + (1.0 - b2) * g * g;
                p.value[i] -= step * m[i] / (v[i].sqrt() + eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimizes_a_quadratic() {
        let mut p = Param::new("x", vec![2], vec![3.0, -2.0]);
        let mut opt = Adam::new(0.1);
        for _ in 0..500 {
            p.grad = p.value.iter().map(|x| 2.0 * x).collect();
            opt.step(&mut [&mut p]).unwrap();
        }
        assert!(p.value.iter().all(|x| x.abs() < 1e-2), "{:?}", p.value);
        assert_eq!(opt.t, 500);
    }

    #[test]
    fn mismatched_state_is_rejected() {
        let mut a = Param::new("a", vec![2], vec![0.0; 2]);
        let mut opt = Adam::new(0.1);
        opt.step(&mut [&mut a]).unwrap();
        let mut b = Param::new("b", vec![3], vec![0.0; 3]);
        assert!(opt.step(&mut [&mut b]).is_err());
    }
}
