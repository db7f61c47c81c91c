//! Actor-critic model: a swappable feature backbone (gated-scan encoder or
//! width-matched feedforward baseline) plus the Gaussian policy head and the
//! value head. Parameters are exposed as named flat arrays shared by the
//! optimizer, checkpointing, and gradient checks.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::encoder::{self, EncoderCache, EncoderConfig, EncoderParams};
use crate::nn::{relu, Affine};
use crate::policy::{PolicyParams, ValueParams};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackboneKind {
    Gated,
    Feedforward,
}

impl std::fmt::Display for BackboneKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            BackboneKind::Gated => f.write_str("gated"),
            BackboneKind::Feedforward => f.write_str("feedforward"),
        }
    }
}

/// Single-hidden-layer ReLU baseline, width-matched to the encoder's
/// feature dimension.
#[derive(Debug, Clone, PartialEq)]
pub struct FeedforwardParams {
    pub l1: Affine,
}

impl FeedforwardParams {
    pub fn init<R: Rng>(obs_dim: usize, hidden_dim: usize, rng: &mut R) -> Self {
        FeedforwardParams {
            l1: Affine::init_uniform(hidden_dim, obs_dim, 1.0, rng),
        }
    }

    pub fn zeros(obs_dim: usize, hidden_dim: usize) -> Self {
        FeedforwardParams {
            l1: Affine::zeros(hidden_dim, obs_dim),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Backbone {
    Gated(EncoderParams),
    Feedforward(FeedforwardParams),
}

pub enum BackboneCache {
    Gated(EncoderCache),
    Feedforward { obs: Vec<f64>, pre: Vec<f64> },
}

impl Backbone {
    pub fn kind(&self) -> BackboneKind {
        match self {
            Backbone::Gated(_) => BackboneKind::Gated,
            Backbone::Feedforward(_) => BackboneKind::Feedforward,
        }
    }

    pub fn obs_dim(&self) -> usize {
        match self {
            Backbone::Gated(p) => p.cfg.obs_dim(),
            Backbone::Feedforward(p) => p.l1.in_dim(),
        }
    }

    pub fn feature_dim(&self) -> usize {
        match self {
            Backbone::Gated(p) => p.feature_dim(),
            Backbone::Feedforward(p) => p.l1.out_dim(),
        }
    }

    pub fn zeros_like(&self) -> Backbone {
        match self {
            Backbone::Gated(p) => Backbone::Gated(EncoderParams::zeros(p.cfg)),
            Backbone::Feedforward(p) => {
                Backbone::Feedforward(FeedforwardParams::zeros(p.l1.in_dim(), p.l1.out_dim()))
            }
        }
    }

    pub fn forward_cached(&self, obs: &[f64]) -> Result<(Vec<f64>, BackboneCache), crate::encoder::EncoderError> {
        match self {
            Backbone::Gated(p) => {
                let (f, cache) = encoder::forward_cached(obs, p)?;
                Ok((f.0, BackboneCache::Gated(cache)))
            }
            Backbone::Feedforward(p) => {
                if obs.len() != p.l1.in_dim() {
                    return Err(crate::encoder::EncoderError::WidthMismatch {
                        expected: p.l1.in_dim(),
                        got: obs.len(),
                    });
                }
                let mut pre = vec![0.0; p.l1.out_dim()];
                p.l1.forward(obs, &mut pre);
                let feature = pre.iter().map(|v| relu(*v)).collect();
                Ok((
                    feature,
                    BackboneCache::Feedforward {
                        obs: obs.to_vec(),
                        pre,
                    },
                ))
            }
        }
    }

    /// Accumulates parameter gradients into `grads` and returns the
    /// observation gradient.
    pub fn backward(
        &self,
        cache: &BackboneCache,
        dfeature: &[f64],
        grads: &mut Backbone,
    ) -> Result<Vec<f64>, crate::encoder::EncoderError> {
        match (self, cache, grads) {
            (Backbone::Gated(p), BackboneCache::Gated(c), Backbone::Gated(g)) => {
                encoder::backward(c, p, dfeature, g)
            }
            (
                Backbone::Feedforward(p),
                BackboneCache::Feedforward { obs, pre },
                Backbone::Feedforward(g),
            ) => {
                let dpre: Vec<f64> = pre
                    .iter()
                    .zip(dfeature)
                    .map(|(p, d)| if *p > 0.0 { *d } else { 0.0 })
                    .collect();
                let mut dobs = vec![0.0; obs.len()];
                p.l1.backward(obs, &dpre, &mut g.l1, &mut dobs);
                Ok(dobs)
            }
            _ => panic!("backbone/cache/grads variant mismatch"),
        }
    }

    pub fn arrays(&self) -> Vec<(&'static str, &[f64])> {
        match self {
            Backbone::Gated(p) => p.arrays(),
            Backbone::Feedforward(p) => vec![
                ("ff.l1.w", p.l1.w.as_slice()),
                ("ff.l1.b", &p.l1.b),
            ],
        }
    }

    pub fn arrays_mut(&mut self) -> Vec<(&'static str, &mut [f64])> {
        match self {
            Backbone::Gated(p) => p.arrays_mut(),
            Backbone::Feedforward(p) => vec![
                ("ff.l1.w", p.l1.w.as_mut_slice()),
                ("ff.l1.b", &mut p.l1.b),
            ],
        }
    }
}

/// The full trainable model.
#[derive(Debug, Clone, PartialEq)]
pub struct ActorCritic {
    pub backbone: Backbone,
    pub policy: PolicyParams,
    pub value: ValueParams,
}

impl ActorCritic {
    pub fn init_gated<R: Rng>(cfg: EncoderConfig, action_dim: usize, init_std: f64, rng: &mut R) -> Self {
        let backbone = Backbone::Gated(EncoderParams::init(cfg, rng));
        let feat = backbone.feature_dim();
        ActorCritic {
            backbone,
            policy: PolicyParams::init(feat, action_dim, init_std, rng),
            value: ValueParams::init(feat, rng),
        }
    }

    pub fn init_feedforward<R: Rng>(
        obs_dim: usize,
        hidden_dim: usize,
        action_dim: usize,
        init_std: f64,
        rng: &mut R,
    ) -> Self {
        let backbone = Backbone::Feedforward(FeedforwardParams::init(obs_dim, hidden_dim, rng));
        ActorCritic {
            backbone,
            policy: PolicyParams::init(hidden_dim, action_dim, init_std, rng),
            value: ValueParams::init(hidden_dim, rng),
        }
    }

    pub fn action_dim(&self) -> usize {
        self.policy.action_dim()
    }

    pub fn zeros_like(&self) -> ActorCritic {
        let feat = self.backbone.feature_dim();
        ActorCritic {
            backbone: self.backbone.zeros_like(),
            policy: PolicyParams::zeros(feat, self.action_dim()),
            value: ValueParams::zeros(feat),
        }
    }

    pub fn arrays(&self) -> Vec<(&'static str, &[f64])> {
        let mut v = self.backbone.arrays();
        v.push(("pi.mean.w", self.policy.mean.w.as_slice()));
        v.push(("pi.mean.b", &self.policy.mean.b));
        v.push(("pi.log_std", &self.policy.log_std));
        v.push(("vf.w", self.value.head.w.as_slice()));
        v.push(("vf.b", &self.value.head.b));
        v
    }

    pub fn arrays_mut(&mut self) -> Vec<(&'static str, &mut [f64])> {
        let mut v = self.backbone.arrays_mut();
        v.push(("pi.mean.w", self.policy.mean.w.as_mut_slice()));
        v.push(("pi.mean.b", &mut self.policy.mean.b));
        v.push(("pi.log_std", &mut self.policy.log_std));
        v.push(("vf.w", self.value.head.w.as_mut_slice()));
        v.push(("vf.b", &mut self.value.head.b));
        v
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn feedforward_backward_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(20);
        let bb = Backbone::Feedforward(FeedforwardParams::init(4, 3, &mut rng));
        let obs: Vec<f64> = (0..4).map(|_| rand::Rng::gen_range(&mut rng, -1.0..1.0)).collect();
        let upstream: Vec<f64> = (0..3).map(|_| rand::Rng::gen_range(&mut rng, -1.0..1.0)).collect();
        let (_, cache) = bb.forward_cached(&obs).unwrap();
        let mut grads = bb.zeros_like();
        bb.backward(&cache, &upstream, &mut grads).unwrap();
        let loss = |bb: &Backbone, obs: &[f64]| -> f64 {
            let (f, _) = bb.forward_cached(obs).unwrap();
            f.iter().zip(&upstream).map(|(a, b)| a * b).sum()
        };
        let h = 1e-6;
        let mut bb2 = bb.clone();
        for ai in 0..bb2.arrays().len() {
            for i in 0..bb2.arrays()[ai].1.len() {
                let orig = bb2.arrays()[ai].1[i];
                bb2.arrays_mut()[ai].1[i] = orig + h;
                let up = loss(&bb2, &obs);
                bb2.arrays_mut()[ai].1[i] = orig - h;
                let down = loss(&bb2, &obs);
                bb2.arrays_mut()[ai].1[i] = orig;
                let fd = (up - down) / (2.0 * h);
                let an = grads.arrays()[ai].1[i];
                assert!((fd - an).abs() < 1e-6, "array {ai} entry {i}: {fd} vs {an}");
            }
        }
    }

    #[test]
    fn named_arrays_cover_both_kinds() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let ac = ActorCritic::init_gated(EncoderConfig::default(), 12, 0.3, &mut rng);
        let names: Vec<&str> = ac.arrays().iter().map(|(n, _)| *n).collect();
        assert!(names.contains(&"enc.gate_a") && names.contains(&"pi.log_std"));
        let ff = ActorCritic::init_feedforward(39, 128, 12, 0.3, &mut rng);
        let names: Vec<&str> = ff.arrays().iter().map(|(n, _)| *n).collect();
        assert!(names.contains(&"ff.l1.w") && names.contains(&"vf.b"));
    }
}
