//! Shared affine-layer plumbing for the encoder and the policy/value heads.

use rand::Rng;

use crate::linalg::Mat;

/// Dense affine map `y = W x + b`.
#[derive(Debug, Clone, PartialEq)]
pub struct Affine {
    pub w: Mat,
    pub b: Vec<f64>,
}

impl Affine {
    pub fn zeros(out_dim: usize, in_dim: usize) -> Self {
        Affine {
            w: Mat::zeros(out_dim, in_dim),
            b: vec![0.0; out_dim],
        }
    }

    /// Uniform fan-in-scaled init: entries in (-scale/sqrt(in), scale/sqrt(in)).
    pub fn init_uniform<R: Rng>(out_dim: usize, in_dim: usize, scale: f64, rng: &mut R) -> Self {
        let bound = scale / (in_dim as f64).sqrt();
        let mut a = Affine::zeros(out_dim, in_dim);
        for v in a.w.as_mut_slice() {
            *v = rng.gen_range(-bound..bound);
        }
        a
    }

    pub fn out_dim(&self) -> usize {
        self.w.rows()
    }

    pub fn in_dim(&self) -> usize {
        self.w.cols()
    }

    pub fn forward(&self, x: &[f64], y: &mut [f64]) {
        self.w.matvec(x, y);
        for (yi, bi) in y.iter_mut().zip(&self.b) {
            *yi += bi;
        }
    }

    /// Accumulates parameter gradients and returns the input gradient added
    /// into `dx`.
    pub fn backward(&self, x: &[f64], dy: &[f64], grad: &mut Affine, dx: &mut [f64]) {
        grad.w.add_outer(1.0, dy, x);
        for (gb, d) in grad.b.iter_mut().zip(dy) {
            *gb += d;
        }
        self.w.matvec_t_accum(dy, dx);
    }
}

#[inline]
pub fn relu(x: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        0.0
    }
}
