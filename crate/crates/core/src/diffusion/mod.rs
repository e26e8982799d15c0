//! Latent diffusion: shifted cosine schedule, v-parameterization, running
//! standardization, conditioning draws, a graph denoiser and an ancestral sampler.

pub mod denoiser;
pub mod sample;
pub mod train;

use std::collections::BTreeMap;
use std::f64::consts::PI;

use rand::Rng;
use thiserror::Error;

use crate::tensor::{Tensor, TensorError};

pub use denoiser::{CondFeatures, CondSource, Denoiser, DenoiserConfig, VelocityModel};
pub use sample::{sample_latent, sample_structure, SampleOptions};
pub use train::{prepare_example, train_diffusion, DiffStepLog, DiffTrainer, DiffusionExample};

#[derive(Debug, Error)]
pub enum DiffusionError {
    #[error("shape {found:?} does not match {expected:?}")]
    Shape { found: Vec<usize>, expected: Vec<usize> },
    #[error("auxiliary time {t_aux} precedes {t}")]
    TimeOrder { t: f64, t_aux: f64 },
    #[error("running statistics used before any observation")]
    EmptyStats,
    #[error("atom-count histogram is empty")]
    EmptyHistogram,
    #[error("n_steps must be at least 1")]
    NoSteps,
    #[error("no training examples")]
    EmptyDataset,
    #[error("non-finite loss at step {step}: {detail}")]
    NonFinite { step: u64, detail: String },
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Gns(#[from] crate::gns::GnsError),
    #[error(transparent)]
    Featurize(#[from] crate::featurize::FeaturizeError),
    #[error(transparent)]
    Autoencoder(#[from] crate::autoencoder::AeError),
    #[error(transparent)]
    Canon(#[from] crate::canon::CanonError),
    #[error(transparent)]
    Crystal(#[from] crate::crystal::CrystalError),
    #[error(transparent)]
    Checkpoint(#[from] crate::io::CheckpointError),
}

pub type Result<T> = std::result::Result<T, DiffusionError>;

pub const LOG_SNR_CLAMP: f64 = 30.0;
pub const ALPHA_BAR_MIN: f64 = 1e-12;
pub const ALPHA_BAR_MAX: f64 = 1.0 - 1e-12;
/// Added to the variance before dividing during standardization.
pub const STD_EPS: f64 = 1e-8;

/// Cosine schedule with a log-SNR shift over continuous time `t` in `[0, T]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseSchedule {
    pub timesteps: f64,
    pub shift: f64,
}

impl NoiseSchedule {
    pub fn new(timesteps: f64, shift: f64) -> Self {
        Self { timesteps, shift }
    }

    /// `-log tan^2(t pi / 2T) + s`, clamped to `±LOG_SNR_CLAMP`.
    pub fn log_snr(&self, t: f64) -> f64 {
        let x = (t / self.timesteps).clamp(0.0, 1.0) * PI / 2.0;
        let tan = x.tan();
        let v = -2.0 * tan.abs().ln() + self.shift;
        if v.is_nan() {
            // t = T: tan overflows to a huge finite value or inf
            return -LOG_SNR_CLAMP;
        }
        v.clamp(-LOG_SNR_CLAMP, LOG_SNR_CLAMP)
    }

    pub fn alpha_bar(&self, t: f64) -> f64 {
        crate::tensor::sigmoid(self.log_snr(t)).clamp(ALPHA_BAR_MIN, ALPHA_BAR_MAX)
    }

    /// Fraction of `[0, T]` where the log-SNR is positive, found by bisection.
    pub fn signal_fraction(&self) -> f64 {
        let (mut lo, mut hi) = (0.0, self.timesteps);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if self.log_snr(mid) > 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi) / self.timesteps
    }

    /// `sin/cos(pi 2^m t / T)` for m = 0..n.
    pub fn time_embedding(&self, t: f64, n: usize) -> Vec<f64> {
        let x = t / self.timesteps;
        let mut out = Vec::with_capacity(2 * n);
        for m in 0..n {
            let w = PI * (1u64 << m) as f64 * x;
            out.push(w.sin());
            out.push(w.cos());
        }
        out
    }
}

fn same_shape(a: &Tensor, b: &Tensor) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(DiffusionError::Shape { found: b.shape().to_vec(), expected: a.shape().to_vec() });
    }
    Ok(())
}

fn combine(a: &Tensor, ca: f64, b: &Tensor, cb: f64) -> Result<Tensor> {
    same_shape(a, b)?;
    let data = a.data().iter().zip(b.data()).map(|(x, y)| ca * x + cb * y).collect();
    Ok(Tensor::new(a.shape().to_vec(), data)?)
}

/// `Z_t = sqrt(ab) Z_0 + sqrt(1 - ab) eps`
pub fn forward_noise(z0: &Tensor, alpha_bar: f64, eps: &Tensor) -> Result<Tensor> {
    combine(z0, alpha_bar.sqrt(), eps, (1.0 - alpha_bar).sqrt())
}

/// `v = sqrt(ab) eps - sqrt(1 - ab) Z_0`
pub fn v_target(z0: &Tensor, eps: &Tensor, alpha_bar: f64) -> Result<Tensor> {
    combine(eps, alpha_bar.sqrt(), z0, -(1.0 - alpha_bar).sqrt())
}

/// `Z_0 = sqrt(ab) Z_t - sqrt(1 - ab) v`
pub fn z0_from_v(zt: &Tensor, v: &Tensor, alpha_bar: f64) -> Result<Tensor> {
    combine(zt, alpha_bar.sqrt(), v, -(1.0 - alpha_bar).sqrt())
}

/// `eps = sqrt(1 - ab) Z_t + sqrt(ab) v`
pub fn eps_from_v(zt: &Tensor, v: &Tensor, alpha_bar: f64) -> Result<Tensor> {
    combine(zt, (1.0 - alpha_bar).sqrt(), v, alpha_bar.sqrt())
}

/// Noisier sample at `t_aux >= t` given `Z_t`:
/// `sqrt(ab'/ab) Z_t + sqrt(1 - ab'/ab) eps'`.
pub fn self_cond_sample(
    schedule: &NoiseSchedule,
    zt: &Tensor,
    t: f64,
    t_aux: f64,
    eps: &Tensor,
) -> Result<Tensor> {
    if t_aux < t {
        return Err(DiffusionError::TimeOrder { t, t_aux });
    }
    let r = (schedule.alpha_bar(t_aux) / schedule.alpha_bar(t)).min(1.0);
    combine(zt, r.sqrt(), eps, (1.0 - r).sqrt())
}

/// Auxiliary time `min(t + dt, T)` with integer `dt` uniform on `[1, max_offset]`.
pub fn draw_aux_time(rng: &mut impl Rng, t: f64, max_offset: f64, timesteps: f64) -> f64 {
    let hi = max_offset.max(1.0) as u64;
    let dt = rng.random_range(1..=hi) as f64;
    (t + dt).min(timesteps)
}

/// Per-dimension running mean and variance (Welford).
#[derive(Debug, Clone, PartialEq)]
pub struct RunningStats {
    pub count: u64,
    pub mean: Vec<f64>,
    pub m2: Vec<f64>,
}

impl RunningStats {
    pub fn new(dim: usize) -> Self {
        Self { count: 0, mean: vec![0.0; dim], m2: vec![0.0; dim] }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn observe(&mut self, row: &[f64]) {
        self.count += 1;
        let n = self.count as f64;
        for (k, &x) in row.iter().enumerate() {
            let delta = x - self.mean[k];
            self.mean[k] += delta / n;
            self.m2[k] += delta * (x - self.mean[k]);
        }
    }

    /// Population variance per dimension.
    pub fn variance(&self) -> Vec<f64> {
        let n = self.count.max(1) as f64;
        self.m2.iter().map(|m| (m / n).max(0.0)).collect()
    }

    pub fn standardize_row(&self, row: &[f64]) -> Result<Vec<f64>> {
        if self.count == 0 {
            return Err(DiffusionError::EmptyStats);
        }
        let var = self.variance();
        Ok(row.iter().enumerate().map(|(k, &x)| (x - self.mean[k]) / (var[k] + STD_EPS).sqrt()).collect())
    }

    pub fn destandardize_row(&self, row: &[f64]) -> Result<Vec<f64>> {
        if self.count == 0 {
            return Err(DiffusionError::EmptyStats);
        }
        let var = self.variance();
        Ok(row.iter().enumerate().map(|(k, &x)| x * (var[k] + STD_EPS).sqrt() + self.mean[k]).collect())
    }
}

/// Separate statistics for the local rows and the global row of a `(N+1) x D` latent.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentStats {
    pub local: RunningStats,
    pub global: RunningStats,
}

impl LatentStats {
    pub fn new(dim: usize) -> Self {
        Self { local: RunningStats::new(dim), global: RunningStats::new(dim) }
    }

    pub fn observe(&mut self, z: &Tensor) {
        let n = z.rows() - 1;
        for i in 0..n {
            self.local.observe(z.row(i));
        }
        self.global.observe(z.row(n));
    }

    fn map(&self, z: &Tensor, f: impl Fn(&RunningStats, &[f64]) -> Result<Vec<f64>>) -> Result<Tensor> {
        let n = z.rows() - 1;
        let mut data = Vec::with_capacity(z.len());
        for i in 0..n {
            data.extend(f(&self.local, z.row(i))?);
        }
        data.extend(f(&self.global, z.row(n))?);
        Ok(Tensor::new(z.shape().to_vec(), data)?)
    }

    /// With `update`, the rows of `z` are observed first.
    pub fn standardize(&mut self, z: &Tensor, update: bool) -> Result<Tensor> {
        if update {
            self.observe(z);
        }
        self.map(z, RunningStats::standardize_row)
    }

    pub fn destandardize(&self, z: &Tensor) -> Result<Tensor> {
        self.map(z, RunningStats::destandardize_row)
    }
}

/// Which conditioning signals a training example or sample carries.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConditioningSpec {
    /// Atoms whose type and position are given (inpainting).
    pub fixed: Vec<bool>,
    /// Index of the fragment left free when inpainting fired.
    pub free_fragment: Option<usize>,
    pub composition: bool,
    pub bonds: bool,
    pub clusters: bool,
    pub order: bool,
}

impl ConditioningSpec {
    /// No conditioning; order indices present.
    pub fn de_novo(n: usize) -> Self {
        Self { fixed: vec![false; n], free_fragment: None, composition: false, bonds: false, clusters: false, order: true }
    }

    pub fn is_structural(&self) -> bool {
        self.fixed.iter().any(|&f| f) || self.composition || self.bonds || self.clusters
    }

    /// Short tag such as `de-novo` or `composition+clusters`.
    pub fn mode(&self) -> String {
        let mut parts = Vec::new();
        if self.fixed.iter().any(|&f| f) {
            parts.push("inpaint");
        }
        if self.composition {
            parts.push("composition");
        }
        if self.bonds {
            parts.push("bonds");
        }
        if self.clusters {
            parts.push("clusters");
        }
        if parts.is_empty() {
            "de-novo".to_string()
        } else {
            parts.join("+")
        }
    }
}

/// Probabilities of the conditioning draws.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConditioningRates {
    pub inpaint: f64,
    pub composition: f64,
    pub bonds: f64,
    pub clusters: f64,
}

impl ConditioningRates {
    pub fn from_run(c: &crate::config::RunConfig) -> Self {
        Self { inpaint: c.inpaint_prob, composition: c.composition_prob, bonds: c.bonds_prob, clusters: c.cluster_prob }
    }
}

/// Independent draws of the conditioning modes for a structure with the given fragments.
pub fn sample_conditioning(
    rng: &mut impl Rng,
    n_atoms: usize,
    fragments: &[Vec<usize>],
    rates: &ConditioningRates,
) -> ConditioningSpec {
    let mut spec = ConditioningSpec::de_novo(n_atoms);
    let inpaint = rng.random_bool(rates.inpaint);
    spec.composition = rng.random_bool(rates.composition);
    spec.bonds = rng.random_bool(rates.bonds);
    let clusters = rng.random_bool(rates.clusters);
    if inpaint && !fragments.is_empty() {
        let free = rng.random_range(0..fragments.len());
        spec.free_fragment = Some(free);
        for (k, f) in fragments.iter().enumerate() {
            if k != free {
                for &a in f {
                    spec.fixed[a] = true;
                }
            }
        }
    }
    spec.clusters = spec.composition || spec.bonds || clusters;
    spec.order = !spec.is_structural();
    spec
}

/// Draws an atom count proportionally to `hist` weights.
pub fn sample_atom_count(rng: &mut impl Rng, hist: &BTreeMap<usize, f64>) -> Result<usize> {
    let total: f64 = hist.values().filter(|w| **w > 0.0).sum();
    if !(total > 0.0) {
        return Err(DiffusionError::EmptyHistogram);
    }
    let mut u = rng.random::<f64>() * total;
    let mut last = 0;
    for (&n, &w) in hist {
        if w <= 0.0 {
            continue;
        }
        last = n;
        if u < w {
            return Ok(n);
        }
        u -= w;
    }
    Ok(last)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn normal(rng: &mut impl Rng, shape: &[usize]) -> Tensor {
        let n: usize = shape.iter().product();
        Tensor::new(shape.to_vec(), (0..n).map(|_| StandardNormal.sample(rng)).collect()).unwrap()
    }

    #[test]
    fn schedule_examples() {
        let s = NoiseSchedule::new(100_000.0, 2.0);
        assert!((s.log_snr(50_000.0) - 2.0).abs() < 1e-12);
        assert_eq!(s.log_snr(0.0), LOG_SNR_CLAMP);
        assert_eq!(s.log_snr(100_000.0), -LOG_SNR_CLAMP);
        assert!((s.alpha_bar(50_000.0) - 0.8807970779778823).abs() < 1e-12);
        assert_eq!(s.alpha_bar(0.0), ALPHA_BAR_MAX);
        assert_eq!(s.alpha_bar(100_000.0), ALPHA_BAR_MIN);
        let grid: Vec<f64> = (0..1000).map(|k| s.alpha_bar(100_000.0 * k as f64 / 999.0)).collect();
        assert!(grid.windows(2).all(|w| w[1] < w[0]));
    }

    #[test]
    fn signal_fraction_matches_closed_form() {
        let s = NoiseSchedule::new(1000.0, 2.0);
        let closed = 2.0 / PI * 1f64.exp().atan();
        assert!((s.signal_fraction() - closed).abs() < 1e-9);
        assert!((s.signal_fraction() - 0.7756).abs() < 5e-4);
        assert!((NoiseSchedule::new(1000.0, 0.0).signal_fraction() - 0.5).abs() < 1e-9);
    }

    #[test]
    fn v_algebra_inverts() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let s = NoiseSchedule::new(100_000.0, 2.0);
        for _ in 0..100 {
            let z0 = normal(&mut rng, &[5, 4]);
            let eps = normal(&mut rng, &[5, 4]);
            let ab = s.alpha_bar(rng.random_range(0.0..100_000.0));
            let zt = forward_noise(&z0, ab, &eps).unwrap();
            let v = v_target(&z0, &eps, ab).unwrap();
            let z0b = z0_from_v(&zt, &v, ab).unwrap();
            let eb = eps_from_v(&zt, &v, ab).unwrap();
            for i in 0..20 {
                assert!((z0b.data()[i] - z0.data()[i]).abs() < 1e-12);
                assert!((eb.data()[i] - eps.data()[i]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn v_limits() {
        let z0 = Tensor::vector(vec![1.0, -2.0]);
        let eps = Tensor::vector(vec![0.5, 0.25]);
        let v1 = v_target(&z0, &eps, ALPHA_BAR_MAX).unwrap();
        let v0 = v_target(&z0, &eps, ALPHA_BAR_MIN).unwrap();
        for i in 0..2 {
            assert!((v1.data()[i] - eps.data()[i]).abs() < 1e-5);
            assert!((v0.data()[i] + z0.data()[i]).abs() < 1e-5);
        }
        assert!(forward_noise(&z0, 0.5, &Tensor::vector(vec![1.0])).is_err());
    }

    #[test]
    fn self_cond_identity_and_order() {
        let s = NoiseSchedule::new(100_000.0, 2.0);
        let zt = Tensor::vector(vec![0.3, -1.2]);
        let e = Tensor::vector(vec![5.0, 5.0]);
        let same = self_cond_sample(&s, &zt, 400.0, 400.0, &e).unwrap();
        assert_eq!(same.data(), zt.data());
        assert!(self_cond_sample(&s, &zt, 400.0, 399.0, &e).is_err());
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..1000 {
            let t = draw_aux_time(&mut rng, 99_990.0, 200.0, 100_000.0);
            assert!(t > 99_990.0 && t <= 100_000.0);
        }
    }

    #[test]
    fn welford_and_inverse() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut st = RunningStats::new(1);
        for _ in 0..100_000 {
            let x: f64 = StandardNormal.sample(&mut rng);
            st.observe(&[3.0 + 2.0 * x]);
        }
        assert!((st.mean[0] - 3.0).abs() < 0.06);
        assert!((st.variance()[0] - 4.0).abs() < 0.08);
        let r = [1.5];
        let back = st.destandardize_row(&st.standardize_row(&r).unwrap()).unwrap();
        assert!((back[0] - r[0]).abs() < 1e-9);
        assert!(RunningStats::new(2).standardize_row(&[0.0, 0.0]).is_err());

        let mut ls = LatentStats::new(2);
        let z = Tensor::matrix(3, 2, vec![0.0; 6]).unwrap();
        let out = ls.standardize(&z, true).unwrap();
        assert!(out.data().iter().all(|x| x.abs() < 1e-12));
        assert!(LatentStats::new(2).standardize(&z, false).is_err());
    }

    #[test]
    fn conditioning_rates() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let frags = vec![vec![0, 1], vec![2], vec![3, 4]];
        let rates = ConditioningRates { inpaint: 0.25, composition: 0.25, bonds: 0.25, clusters: 0.5 };
        let n = 100_000;
        let (mut ip, mut co, mut bo) = (0, 0, 0);
        for _ in 0..n {
            let c = sample_conditioning(&mut rng, 5, &frags, &rates);
            ip += c.free_fragment.is_some() as usize;
            co += c.composition as usize;
            bo += c.bonds as usize;
            if c.composition || c.bonds {
                assert!(c.clusters);
            }
            assert_eq!(c.order, !c.is_structural());
            if let Some(f) = c.free_fragment {
                assert_eq!(c.fixed.iter().filter(|&&x| !x).count(), frags[f].len());
            }
            if c.mode() == "de-novo" {
                assert!(c.order && c.fixed.iter().all(|&x| !x));
            }
        }
        for k in [ip, co, bo] {
            assert!((k as f64 / n as f64 - 0.25).abs() < 0.01);
        }
    }

    #[test]
    fn single_fragment_inpaint_is_de_novo() {
        let rates = ConditioningRates { inpaint: 1.0, composition: 0.0, bonds: 0.0, clusters: 0.0 };
        let c = sample_conditioning(&mut ChaCha8Rng::seed_from_u64(0), 3, &[vec![0, 1, 2]], &rates);
        assert_eq!(c.free_fragment, Some(0));
        assert!(c.fixed.iter().all(|&x| !x));
        assert!(c.order);
    }

    #[test]
    fn atom_count_draws() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let one = BTreeMap::from([(4, 1.0)]);
        assert!((0..100).all(|_| sample_atom_count(&mut rng, &one).unwrap() == 4));
        let two = BTreeMap::from([(4, 0.5), (8, 0.5)]);
        let n = 100_000;
        let fours = (0..n).filter(|_| sample_atom_count(&mut rng, &two).unwrap() == 4).count();
        assert!((fours as f64 / n as f64 - 0.5).abs() < 0.02);
        assert!(sample_atom_count(&mut rng, &BTreeMap::new()).is_err());
    }
}
