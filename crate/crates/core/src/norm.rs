//! Running per-entry observation normalization (Welford statistics).

/// Online mean/variance tracker applied to observations before they reach
/// the encoder. Statistics update during collection and freeze for
/// evaluation; the state ships inside checkpoints.
#[derive(Debug, Clone, PartialEq)]
pub struct ObsNormalizer {
    count: f64,
    mean: Vec<f64>,
    m2: Vec<f64>,
    /// When false, `normalize` uses the frozen statistics without updating.
    pub updating: bool,
}

const CLIP: f64 = 10.0;
const EPS: f64 = 1e-8;

impl ObsNormalizer {
    pub fn new(dim: usize) -> Self {
        ObsNormalizer {
            count: 0.0,
            mean: vec![0.0; dim],
            m2: vec![0.0; dim],
            updating: true,
        }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn count(&self) -> f64 {
        self.count
    }

    pub fn update(&mut self, obs: &[f64]) {
        debug_assert_eq!(obs.len(), self.mean.len());
        self.count += 1.0;
        for i in 0..obs.len() {
            let delta = obs[i] - self.mean[i];
            self.mean[i] += delta / self.count;
            self.m2[i] += delta * (obs[i] - self.mean[i]);
        }
    }

    pub fn normalize(&self, obs: &[f64], out: &mut Vec<f64>) {
        out.clear();
        if self.count < 2.0 {
            out.extend_from_slice(obs);
            return;
        }
        let n = self.count;
        for i in 0..obs.len() {
            let var = self.m2[i] / n;
            let z = (obs[i] - self.mean[i]) / (var + EPS).sqrt();
            out.push(z.clamp(-CLIP, CLIP));
        }
    }

    /// Update-then-normalize, the collection-time path.
    pub fn observe(&mut self, obs: &[f64], out: &mut Vec<f64>) {
        if self.updating {
            self.update(obs);
        }
        self.normalize(obs, out);
    }

    pub fn state_arrays(&self) -> Vec<(&'static str, Vec<f64>)> {
        vec![
            ("norm.count", vec![self.count]),
            ("norm.mean", self.mean.clone()),
            ("norm.m2", self.m2.clone()),
        ]
    }

    pub fn from_state(count: f64, mean: Vec<f64>, m2: Vec<f64>) -> Self {
        ObsNormalizer {
            count,
            mean,
            m2,
            updating: false,
        }
    }
}
