//! Ancestral sampling in the standardized latent space.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use super::{eps_from_v, z0_from_v, CondFeatures, DiffusionError, LatentStats, NoiseSchedule, Result, VelocityModel};
use crate::autoencoder::Autoencoder;
use crate::crystal::CrystalStructure;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SampleOptions {
    pub n_steps: usize,
    /// Feed the previous iterate and its time as the self-conditioning input.
    pub self_condition: bool,
}

impl Default for SampleOptions {
    fn default() -> Self {
        Self { n_steps: 4000, self_condition: true }
    }
}

fn normal(rng: &mut impl Rng, shape: &[usize]) -> Tensor {
    let n: usize = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| StandardNormal.sample(rng)).collect()).expect("shape")
}

/// Runs the reverse process on a uniform grid from `T` down to 0 and returns the
/// final clean-latent estimate `(N+1) x D`, still standardized.
pub fn sample_latent(
    model: &dyn VelocityModel,
    schedule: &NoiseSchedule,
    cond: &CondFeatures,
    opts: SampleOptions,
    rng: &mut impl Rng,
) -> Result<Tensor> {
    if opts.n_steps == 0 {
        return Err(DiffusionError::NoSteps);
    }
    let shape = [cond.num_atoms() + 1, model.latent_dim()];
    let big_t = schedule.timesteps;
    let grid = |k: usize| big_t * k as f64 / opts.n_steps as f64;

    let mut z = normal(rng, &shape);
    let mut prev: Option<(Tensor, f64)> = None;
    for k in (1..=opts.n_steps).rev() {
        let (t, t_next) = (grid(k), grid(k - 1));
        let sc = if opts.self_condition { prev.as_ref().map(|(p, tp)| (p, *tp)) } else { None };
        let v = model.predict(&z, t, sc, cond)?;
        let ab = schedule.alpha_bar(t);
        let z0 = z0_from_v(&z, &v, ab)?;
        if k == 1 {
            return Ok(z0);
        }
        let eps = eps_from_v(&z, &v, ab)?;
        let ab_next = schedule.alpha_bar(t_next);
        // DDPM posterior variance
        let var = ((1.0 - ab_next) / (1.0 - ab) * (1.0 - ab / ab_next)).max(0.0);
        let dir = (1.0 - ab_next - var).max(0.0).sqrt();
        let noise = normal(rng, &shape);
        let data = z0
            .data()
            .iter()
            .zip(eps.data())
            .zip(noise.data())
            .map(|((a, e), n)| ab_next.sqrt() * a + dir * e + var.sqrt() * n)
            .collect();
        let next = Tensor::new(shape.to_vec(), data)?;
        prev = Some((std::mem::replace(&mut z, next), t));
    }
    unreachable!("the loop returns at k = 1")
}

/// Samples a latent, destandardizes it, and decodes a structure.
pub fn sample_structure(
    ae: &Autoencoder,
    model: &dyn VelocityModel,
    stats: &LatentStats,
    schedule: &NoiseSchedule,
    cond: &CondFeatures,
    opts: SampleOptions,
    rng: &mut impl Rng,
) -> Result<CrystalStructure> {
    let z = sample_latent(model, schedule, cond, opts, rng)?;
    let z = stats.destandardize(&z)?;
    Ok(ae.decode_latent(&z)?.to_structure()?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffusion::denoiser::DenoiserConfig;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// Returns the exact velocity for a fixed clean latent.
    struct Oracle {
        z0: Tensor,
        schedule: NoiseSchedule,
    }

    impl VelocityModel for Oracle {
        fn latent_dim(&self) -> usize {
            self.z0.cols()
        }

        fn predict(&self, zt: &Tensor, t: f64, _: Option<(&Tensor, f64)>, _: &CondFeatures) -> Result<Tensor> {
            let ab = self.schedule.alpha_bar(t);
            let data = zt
                .data()
                .iter()
                .zip(self.z0.data())
                .map(|(z, x)| {
                    let eps = (z - ab.sqrt() * x) / (1.0 - ab).sqrt();
                    ab.sqrt() * eps - (1.0 - ab).sqrt() * x
                })
                .collect();
            Ok(Tensor::new(zt.shape().to_vec(), data)?)
        }
    }

    #[test]
    fn oracle_recovers_latent() {
        let schedule = NoiseSchedule::new(100_000.0, 2.0);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let z0 = normal(&mut rng, &[4, 4]);
        let oracle = Oracle { z0: z0.clone(), schedule };
        let cfg = DenoiserConfig { latent_dim: 4, ..crate::diffusion::denoiser::tests::small() };
        let cond = CondFeatures::de_novo(&cfg, 3);
        for steps in [1, 10, 200] {
            let out = sample_latent(&oracle, &schedule, &cond, SampleOptions { n_steps: steps, self_condition: true }, &mut rng).unwrap();
            for (a, b) in out.data().iter().zip(z0.data()) {
                assert!((a - b).abs() < 1e-8, "{steps}: {a} vs {b}");
            }
        }
        assert!(sample_latent(&oracle, &schedule, &cond, SampleOptions { n_steps: 0, self_condition: true }, &mut rng).is_err());
    }
}
