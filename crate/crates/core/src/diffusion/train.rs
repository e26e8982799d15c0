//! Denoiser training on frozen-encoder latents.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use super::{
    draw_aux_time, forward_noise, sample_conditioning, self_cond_sample, v_target, CondFeatures, CondSource,
    ConditioningRates, Denoiser, DenoiserConfig, DiffusionError, LatentStats, Result, RunningStats,
};
use crate::autoencoder::{load_adam, save_adam, Autoencoder};
use crate::canon::{apply_order, canonical_order, infer_bonds, labeled_fragments};
use crate::config::RunConfig;
use crate::crystal::{centered, CrystalStructure};
use crate::io::{Checkpoint, CheckpointError};
use crate::nn::{adam_step, clip_grad_norm, AdamConfig, AdamState, BoundParams};
use crate::tensor::{Tape, Tensor};

/// Keeps diffusion draws independent of autoencoder draws under the same seed.
const SEED_DOMAIN: u64 = 0xD1FF_5EED_0000_0000;

pub fn step_rng(seed: u64, step: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ SEED_DOMAIN);
    rng.set_stream(step + 1);
    rng
}

/// A canonically ordered training structure with its latent and conditioning sources.
#[derive(Debug, Clone, PartialEq)]
pub struct DiffusionExample {
    pub structure: CrystalStructure,
    /// `(N+1) x D`: local latents then the global mean.
    pub latent: Tensor,
    pub fragments: Vec<Vec<usize>>,
    pub source: CondSource,
}

/// Canonical atom order, bond graph, building blocks, and the frozen encoder's latent.
///
/// The encoder is exactly translation-invariant, so the latent of any translate
/// equals this one and is computed once.
pub fn prepare_example(ae: &Autoencoder, s: &CrystalStructure, bond_factor: f64) -> Result<DiffusionExample> {
    let order = canonical_order(&infer_bonds(s, bond_factor))?;
    let cs = apply_order(s, order.as_slice())?;
    let bg = infer_bonds(&cs, bond_factor);
    let fragments: Vec<Vec<usize>> = labeled_fragments(&bg).into_iter().map(|f| f.atoms).collect();
    let mut atom_fragment = vec![0; cs.num_atoms()];
    for (k, f) in fragments.iter().enumerate() {
        for &a in f {
            atom_fragment[a] = k;
        }
    }
    let latent = ae.encode(&cs)?.stacked();
    let source = CondSource {
        types: Some(cs.atom_types().to_vec()),
        frac: Some(centered(&cs).frac().to_vec()),
        bonds: Some(bg.edges()),
        atom_fragment: Some(atom_fragment),
    };
    Ok(DiffusionExample { structure: cs, latent, fragments, source })
}

#[derive(Debug, Clone, PartialEq)]
pub struct DiffStepLog {
    pub step: u64,
    pub loss: f64,
    /// Share of the batch that received a self-conditioning input.
    pub self_cond_rate: f64,
    /// Share of the batch drawn without structural conditioning.
    pub de_novo_rate: f64,
    pub grad_norm: f64,
}

impl DiffStepLog {
    pub fn to_line(&self) -> String {
        format!(
            "step={} loss={:.6e} self_cond={:.3} de_novo={:.3} gnorm={:.4e}",
            self.step, self.loss, self.self_cond_rate, self.de_novo_rate, self.grad_norm
        )
    }
}

struct Prepared {
    zt: Tensor,
    t: f64,
    self_cond: Option<(Tensor, f64)>,
    cond: CondFeatures,
    target: Tensor,
    de_novo: bool,
}

#[derive(Debug, Clone)]
pub struct DiffTrainer {
    pub config: RunConfig,
    pub denoiser: Denoiser,
    pub stats: LatentStats,
    /// Training-set atom counts, used to draw N at sampling time.
    pub atom_counts: BTreeMap<usize, u64>,
    pub adam: AdamState,
    pub adam_config: AdamConfig,
    pub step: u64,
}

impl DiffTrainer {
    pub fn new(config: &RunConfig) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ SEED_DOMAIN);
        rng.set_stream(0);
        let denoiser = Denoiser::new(DenoiserConfig::from_run(config), &mut rng);
        let adam = AdamState::new(&denoiser.store);
        Self {
            config: config.clone(),
            stats: LatentStats::new(config.latent_dim),
            atom_counts: BTreeMap::new(),
            adam,
            adam_config: AdamConfig { lr: config.diff_lr, ..AdamConfig::default() },
            denoiser,
            step: 0,
        }
    }

    pub fn histogram(&self) -> BTreeMap<usize, f64> {
        self.atom_counts.iter().map(|(&n, &c)| (n, c as f64)).collect()
    }

    fn prepare(&self, ex: &DiffusionExample, z0: Tensor, rng: &mut ChaCha8Rng) -> Result<Prepared> {
        let c = &self.config;
        let schedule = self.denoiser.config.schedule;
        let t = rng.random::<f64>() * c.timesteps;
        let shape = z0.shape().to_vec();
        let normal = |rng: &mut ChaCha8Rng| -> Tensor {
            let n = shape[0] * shape[1];
            Tensor::new(shape.clone(), (0..n).map(|_| StandardNormal.sample(rng)).collect()).expect("shape")
        };
        let eps = normal(rng);
        let ab = schedule.alpha_bar(t);
        let zt = forward_noise(&z0, ab, &eps)?;
        let target = v_target(&z0, &eps, ab)?;
        let self_cond = if rng.random_bool(c.self_cond_prob) {
            let ta = draw_aux_time(rng, t, c.self_cond_max_offset(), c.timesteps);
            let e2 = normal(rng);
            Some((self_cond_sample(&schedule, &zt, t, ta, &e2)?, ta))
        } else {
            None
        };
        let spec = sample_conditioning(rng, ex.structure.num_atoms(), &ex.fragments, &ConditioningRates::from_run(c));
        let cond = CondFeatures::build(&self.denoiser.config, &spec, &ex.source)?;
        Ok(Prepared { zt, t, self_cond, cond, target, de_novo: !spec.is_structural() })
    }

    fn sample_grads(&self, p: &Prepared) -> Result<(Vec<Tensor>, f64)> {
        let mut tape = Tape::new();
        let bound = BoundParams::bind(&mut tape, &self.denoiser.store);
        let sc = p.self_cond.as_ref().map(|(z, t)| (z, *t));
        let v = self.denoiser.forward_vars(&mut tape, &bound, &p.zt, p.t, sc, &p.cond)?;
        let target = tape.constant(p.target.clone());
        let diff = tape.sub(v, target)?;
        let sq = tape.square(diff);
        let loss = tape.mean(sq);
        tape.backward(loss)?;
        Ok((bound.grads(&tape), tape.value(loss).item()))
    }

    pub fn train_step(&mut self, data: &[DiffusionExample]) -> Result<DiffStepLog> {
        if data.is_empty() {
            return Err(DiffusionError::EmptyDataset);
        }
        if self.atom_counts.is_empty() {
            for ex in data {
                *self.atom_counts.entry(ex.structure.num_atoms()).or_insert(0) += 1;
            }
        }
        let mut rng = step_rng(self.config.seed, self.step);
        let b = self.config.diff_batch.min(data.len());
        let picks = rand::seq::index::sample(&mut rng, data.len(), b).into_vec();
        for &i in &picks {
            self.stats.observe(&data[i].latent);
        }
        let mut prepared = Vec::with_capacity(b);
        for &i in &picks {
            let z0 = self.stats.standardize(&data[i].latent, false)?;
            prepared.push(self.prepare(&data[i], z0, &mut rng)?);
        }
        let results: Vec<Result<(Vec<Tensor>, f64)>> = prepared.par_iter().map(|p| self.sample_grads(p)).collect();

        let inv = 1.0 / b as f64;
        let mut grads: Vec<Tensor> = self.denoiser.store.values().iter().map(|t| Tensor::zeros(t.shape())).collect();
        let mut loss = 0.0;
        for r in results {
            let (g, l) = r?;
            for (acc, x) in grads.iter_mut().zip(&g) {
                acc.data_mut().iter_mut().zip(x.data()).for_each(|(a, y)| *a += inv * y);
            }
            loss += inv * l;
        }
        if !loss.is_finite() {
            let ts: Vec<f64> = prepared.iter().map(|p| p.t).collect();
            return Err(DiffusionError::NonFinite { step: self.step, detail: format!("loss={loss} t={ts:?} batch={picks:?}") });
        }
        let grad_norm = clip_grad_norm(&mut grads, self.config.grad_clip);
        adam_step(&mut self.denoiser.store, &grads, &mut self.adam, &self.adam_config);
        let log = DiffStepLog {
            step: self.step,
            loss,
            self_cond_rate: prepared.iter().filter(|p| p.self_cond.is_some()).count() as f64 * inv,
            de_novo_rate: prepared.iter().filter(|p| p.de_novo).count() as f64 * inv,
            grad_norm,
        };
        self.step += 1;
        Ok(log)
    }

    pub fn train(&mut self, data: &[DiffusionExample], steps: u64, log: &mut dyn FnMut(&DiffStepLog)) -> Result<()> {
        for _ in 0..steps {
            let l = self.train_step(data)?;
            log(&l);
        }
        Ok(())
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut ck = Checkpoint::new(self.config.diffusion_fingerprint(), self.step);
        let store = &self.denoiser.store;
        for (name, t) in store.names().iter().zip(store.values()) {
            ck.push_tensor(format!("param/{name}"), t);
        }
        save_adam(&mut ck, "adam", store, &self.adam);
        for (tag, s) in [("local", &self.stats.local), ("global", &self.stats.global)] {
            ck.push_u64(format!("stats/{tag}/count"), vec![s.count]);
            ck.push_f64(format!("stats/{tag}/mean"), vec![s.dim()], s.mean.clone());
            ck.push_f64(format!("stats/{tag}/m2"), vec![s.dim()], s.m2.clone());
        }
        ck.push_u64("atom_counts", self.atom_counts.iter().flat_map(|(&n, &c)| [n as u64, c]).collect());
        ck
    }

    pub fn from_checkpoint(config: &RunConfig, ck: &Checkpoint) -> Result<Self> {
        ck.check_fingerprint(config.diffusion_fingerprint())?;
        let mut t = Self::new(config);
        let values = t
            .denoiser
            .store
            .names()
            .iter()
            .map(|name| ck.tensor(&format!("param/{name}")))
            .collect::<std::result::Result<Vec<_>, _>>()?;
        t.denoiser.store.load_values(values).map_err(|e| CheckpointError::Corrupt(e.to_string()))?;
        t.adam = load_adam(ck, "adam", &t.denoiser.store)?;
        let d = config.latent_dim;
        for (tag, s) in [("local", &mut t.stats.local), ("global", &mut t.stats.global)] {
            let count = ck.u64s(&format!("stats/{tag}/count"))?;
            let mean = ck.f64s(&format!("stats/{tag}/mean"))?;
            let m2 = ck.f64s(&format!("stats/{tag}/m2"))?;
            if count.len() != 1 || mean.len() != d || m2.len() != d {
                return Err(CheckpointError::Corrupt(format!("stats/{tag} has the wrong size")).into());
            }
            *s = RunningStats { count: count[0], mean: mean.to_vec(), m2: m2.to_vec() };
        }
        let counts = ck.u64s("atom_counts")?;
        if counts.len() % 2 != 0 {
            return Err(CheckpointError::Corrupt("atom_counts must hold pairs".into()).into());
        }
        t.atom_counts = counts.chunks(2).map(|p| (p[0] as usize, p[1])).collect();
        t.step = ck.step;
        Ok(t)
    }
}

/// Fresh denoiser trained for `config.diff_steps` steps.
pub fn train_diffusion(
    data: &[DiffusionExample],
    config: &RunConfig,
    log: &mut dyn FnMut(&DiffStepLog),
) -> Result<DiffTrainer> {
    let mut t = DiffTrainer::new(config);
    t.train(data, config.diff_steps, log)?;
    Ok(t)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::io::toy_dataset;

    fn setup() -> (RunConfig, Vec<DiffusionExample>) {
        let cfg = RunConfig {
            hidden: 8,
            mp_steps: 1,
            k_neighbors: 4,
            n_bessel: 3,
            n_sinusoidal: 2,
            n_rbf: 3,
            vocab_size: 48,
            rvq_codes: 8,
            denoiser_hidden: 8,
            denoiser_mp_steps: 1,
            time_frequencies: 3,
            order_frequencies: 3,
            diff_batch: 3,
            ..RunConfig::default()
        };
        let data = toy_dataset(5, 4, (3, 8)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut ae = Autoencoder::new(&cfg, &mut rng).unwrap();
        ae.init_codebooks(&data, &mut rng).unwrap();
        let ex = data.iter().map(|s| prepare_example(&ae, s, cfg.bond_factor).unwrap()).collect();
        (cfg, ex)
    }

    #[test]
    fn deterministic_and_resumable() {
        let (cfg, data) = setup();
        let mut a = DiffTrainer::new(&cfg);
        let mut la = Vec::new();
        a.train(&data, 4, &mut |l| la.push(l.clone())).unwrap();
        let mut b = DiffTrainer::new(&cfg);
        b.train(&data, 2, &mut |_| {}).unwrap();
        let ck = Checkpoint::from_bytes(&b.to_checkpoint().to_bytes()).unwrap();
        let mut c = DiffTrainer::from_checkpoint(&cfg, &ck).unwrap();
        let mut lc = Vec::new();
        c.train(&data, 2, &mut |l| lc.push(l.clone())).unwrap();
        assert_eq!(&la[2..], &lc[..]);
        assert_eq!(a.to_checkpoint().to_bytes(), c.to_checkpoint().to_bytes());
        assert!(la.iter().all(|l| l.loss.is_finite()));
    }

    #[test]
    fn self_conditioning_rate_near_half() {
        let (mut cfg, data) = setup();
        cfg.diff_batch = 4;
        let t = DiffTrainer::new(&cfg);
        let mut rng = step_rng(0, 0);
        let mut hits = 0;
        let n = 4000;
        for k in 0..n {
            let ex = &data[k % data.len()];
            let p = t.prepare(ex, ex.latent.clone(), &mut rng).unwrap();
            hits += p.self_cond.is_some() as usize;
            assert!(p.t >= 0.0 && p.t <= cfg.timesteps);
            if let Some((_, ta)) = p.self_cond {
                assert!(ta > p.t || ta == cfg.timesteps);
                assert!(ta - p.t <= 200.0);
            }
        }
        assert!((hits as f64 / n as f64 - 0.5).abs() < 0.02);
    }

    #[test]
    fn examples_are_canonical() {
        let (_, data) = setup();
        for ex in &data {
            let n = ex.structure.num_atoms();
            assert_eq!(ex.latent.shape(), &[n + 1, 4]);
            let covered: usize = ex.fragments.iter().map(|f| f.len()).sum();
            assert_eq!(covered, n);
        }
    }
}
