//! Autoencoder training: augmented mini-batches, Adam, EMA codebook updates.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use super::{load_adam, AeError, Autoencoder, ForwardOptions, LossTerms, Quantize, Quantized, Result};
use crate::config::RunConfig;
use crate::crystal::{random_translate, CrystalStructure};
use crate::io::Checkpoint;
use crate::nn::{adam_step, clip_grad_norm, AdamConfig, AdamState, BoundParams};
use crate::tensor::{Tape, Tensor};

/// Stream reserved for parameter initialization; step `k` uses stream `k + 1`.
const INIT_STREAM: u64 = 0;

/// Deterministic generator for one training step.
pub fn step_rng(seed: u64, step: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(step + 1);
    rng
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AeStepLog {
    pub step: u64,
    /// Batch means of the unweighted terms and the weighted total.
    pub terms: LossTerms,
    /// Fraction of atoms whose most likely type is correct.
    pub accuracy: f64,
    pub grad_norm: f64,
}

impl AeStepLog {
    /// One whitespace-separated metrics record.
    pub fn to_line(&self) -> String {
        let t = &self.terms;
        format!(
            "step={} total={:.6e} atom={:.6e} frac={:.6e} lattice={:.6e} commit={:.6e} kl={:.6e} acc={:.4} gnorm={:.4e}",
            self.step, t.total, t.atom, t.frac, t.lattice, t.commit, t.kl, self.accuracy, self.grad_norm
        )
    }
}

struct SampleResult {
    grads: Vec<Tensor>,
    terms: LossTerms,
    correct: usize,
    atoms: usize,
    quantized: Quantized,
}

#[derive(Debug, Clone)]
pub struct AeTrainer {
    pub model: Autoencoder,
    pub adam: AdamState,
    pub adam_config: AdamConfig,
    /// Number of completed steps.
    pub step: u64,
}

impl AeTrainer {
    pub fn new(config: &RunConfig) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        rng.set_stream(INIT_STREAM);
        let model = Autoencoder::new(config, &mut rng)?;
        let adam = AdamState::new(&model.store);
        Ok(Self { adam, adam_config: AdamConfig { lr: config.ae_lr, ..AdamConfig::default() }, model, step: 0 })
    }

    pub fn from_checkpoint(config: &RunConfig, ck: &Checkpoint) -> Result<Self> {
        let model = Autoencoder::from_checkpoint(config, ck)?;
        let adam = load_adam(ck, "adam", &model.store)?;
        Ok(Self { adam, adam_config: AdamConfig { lr: config.ae_lr, ..AdamConfig::default() }, model, step: ck.step })
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        self.model.to_checkpoint(self.step, Some(&self.adam))
    }

    fn sample_grads(&self, s: &CrystalStructure, noise: &[f64]) -> Result<SampleResult> {
        let mut tape = Tape::new();
        let p = BoundParams::bind(&mut tape, &self.model.store);
        let fp = self.model.forward_loss(
            &mut tape,
            &p,
            s,
            ForwardOptions { global_noise: Some(noise), quantize: Quantize::StraightThrough },
        )?;
        tape.backward(fp.loss)?;
        Ok(SampleResult {
            grads: p.grads(&tape),
            terms: fp.terms,
            correct: fp.correct,
            atoms: s.num_atoms(),
            quantized: fp.quantized.expect("straight-through pass quantizes"),
        })
    }

    /// One optimizer step on a batch drawn from `data`.
    pub fn train_step(&mut self, data: &[CrystalStructure]) -> Result<AeStepLog> {
        if data.is_empty() {
            return Err(AeError::EmptyDataset);
        }
        let cfg = self.model.config.clone();
        let mut rng = step_rng(cfg.seed, self.step);
        if !self.model.rvq.initialized {
            self.model.init_codebooks(data, &mut rng)?;
        }

        let b = cfg.ae_batch.min(data.len());
        let picks = rand::seq::index::sample(&mut rng, data.len(), b).into_vec();
        let d = self.model.latent_dim();
        let mut batch = Vec::with_capacity(b);
        for &i in &picks {
            let u: [f64; 3] = [rng.random(), rng.random(), rng.random()];
            let s = if cfg.ae_augment { random_translate(&data[i], u)? } else { data[i].clone() };
            let noise: Vec<f64> = (0..d).map(|_| StandardNormal.sample(&mut rng)).collect();
            batch.push((s, noise));
        }

        let results: Vec<Result<SampleResult>> =
            batch.par_iter().map(|(s, noise)| self.sample_grads(s, noise)).collect();
        let results = results.into_iter().collect::<Result<Vec<_>>>()?;

        let inv = 1.0 / b as f64;
        let mut grads: Vec<Tensor> = self.model.store.values().iter().map(|t| Tensor::zeros(t.shape())).collect();
        let mut terms = LossTerms::default();
        let (mut correct, mut atoms) = (0, 0);
        let mut merged = Quantized {
            n: 0,
            values: Vec::new(),
            codes: vec![Vec::new(); self.model.rvq.levels.len()],
            residuals: vec![Vec::new(); self.model.rvq.levels.len()],
        };
        for r in &results {
            for (acc, g) in grads.iter_mut().zip(&r.grads) {
                acc.data_mut().iter_mut().zip(g.data()).for_each(|(a, x)| *a += inv * x);
            }
            terms.atom += inv * r.terms.atom;
            terms.frac += inv * r.terms.frac;
            terms.lattice += inv * r.terms.lattice;
            terms.commit += inv * r.terms.commit;
            terms.kl += inv * r.terms.kl;
            terms.total += inv * r.terms.total;
            correct += r.correct;
            atoms += r.atoms;
            merged.n += r.quantized.n;
            merged.values.extend_from_slice(&r.quantized.values);
            for l in 0..merged.codes.len() {
                merged.codes[l].extend_from_slice(&r.quantized.codes[l]);
                merged.residuals[l].extend_from_slice(&r.quantized.residuals[l]);
            }
        }
        if !terms.is_finite() {
            return Err(AeError::NonFinite {
                step: self.step,
                detail: format!(
                    "atom={} frac={} lattice={} commit={} kl={} batch={picks:?}",
                    terms.atom, terms.frac, terms.lattice, terms.commit, terms.kl
                ),
            });
        }
        let grad_norm = clip_grad_norm(&mut grads, cfg.grad_clip);
        adam_step(&mut self.model.store, &grads, &mut self.adam, &self.adam_config);
        self.model.rvq.ema_update(&merged, &mut rng);
        let log = AeStepLog { step: self.step, terms, accuracy: correct as f64 / atoms as f64, grad_norm };
        self.step += 1;
        Ok(log)
    }

    /// Runs `steps` optimizer steps, calling `log` after each.
    pub fn train(&mut self, data: &[CrystalStructure], steps: u64, log: &mut dyn FnMut(&AeStepLog)) -> Result<()> {
        for _ in 0..steps {
            let l = self.train_step(data)?;
            log(&l);
        }
        Ok(())
    }

    /// Eval-mode losses and atom-type accuracy averaged over `data`.
    pub fn evaluate(&self, data: &[CrystalStructure]) -> Result<(LossTerms, f64)> {
        evaluate(&self.model, data)
    }
}

/// Eval-mode (mean global latent, quantized locals) losses and atom-type accuracy over `data`.
pub fn evaluate(model: &Autoencoder, data: &[CrystalStructure]) -> Result<(LossTerms, f64)> {
    if data.is_empty() {
        return Err(AeError::EmptyDataset);
    }
    let per: Vec<Result<(LossTerms, usize, usize)>> = data
        .par_iter()
        .map(|s| {
            let mut tape = Tape::new();
            let p = BoundParams::bind_frozen(&mut tape, &model.store);
            let fp = model.forward_loss(&mut tape, &p, s, ForwardOptions::eval())?;
            Ok((fp.terms, fp.correct, s.num_atoms()))
        })
        .collect();
    let inv = 1.0 / data.len() as f64;
    let mut t = LossTerms::default();
    let (mut c, mut a) = (0, 0);
    for r in per {
        let (x, ci, ai) = r?;
        t.atom += inv * x.atom;
        t.frac += inv * x.frac;
        t.lattice += inv * x.lattice;
        t.commit += inv * x.commit;
        t.kl += inv * x.kl;
        t.total += inv * x.total;
        c += ci;
        a += ai;
    }
    Ok((t, c as f64 / a as f64))
}

/// Fresh model trained for `config.ae_steps` steps.
pub fn train_autoencoder(
    data: &[CrystalStructure],
    config: &RunConfig,
    log: &mut dyn FnMut(&AeStepLog),
) -> Result<AeTrainer> {
    let mut t = AeTrainer::new(config)?;
    t.train(data, config.ae_steps, log)?;
    Ok(t)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autoencoder::tests::{sample_structure, small_config};
    use crate::io::toy_dataset;

    fn run(steps: u64) -> (Vec<AeStepLog>, AeTrainer) {
        let data = toy_dataset(3, 4, (3, 6)).unwrap();
        let mut cfg = small_config();
        cfg.ae_batch = 2;
        let mut logs = Vec::new();
        cfg.ae_steps = steps;
        let t = train_autoencoder(&data, &cfg, &mut |l| logs.push(*l)).unwrap();
        (logs, t)
    }

    #[test]
    fn same_seed_same_trajectory() {
        let (a, ta) = run(6);
        let (b, tb) = run(6);
        assert_eq!(a, b);
        assert_eq!(ta.to_checkpoint().to_bytes(), tb.to_checkpoint().to_bytes());
        assert!(a.iter().all(|l| l.terms.is_finite()));
    }

    #[test]
    fn resume_matches_uninterrupted() {
        let data = toy_dataset(3, 4, (3, 6)).unwrap();
        let mut cfg = small_config();
        cfg.ae_batch = 2;
        let mut full = AeTrainer::new(&cfg).unwrap();
        full.train(&data, 4, &mut |_| {}).unwrap();

        let mut half = AeTrainer::new(&cfg).unwrap();
        half.train(&data, 2, &mut |_| {}).unwrap();
        let bytes = half.to_checkpoint().to_bytes();
        let mut resumed = AeTrainer::from_checkpoint(&cfg, &Checkpoint::from_bytes(&bytes).unwrap()).unwrap();
        assert_eq!(resumed.step, 2);
        resumed.train(&data, 2, &mut |_| {}).unwrap();
        assert_eq!(resumed.to_checkpoint().to_bytes(), full.to_checkpoint().to_bytes());
    }

    #[test]
    fn loss_decreases_on_one_structure() {
        let data = vec![sample_structure()];
        let mut cfg = small_config();
        cfg.ae_lr = 3e-3;
        let mut t = AeTrainer::new(&cfg).unwrap();
        t.model.init_codebooks(&data, &mut step_rng(0, 0)).unwrap();
        let (before, _) = t.evaluate(&data).unwrap();
        t.train(&data, 60, &mut |_| {}).unwrap();
        let (after, _) = t.evaluate(&data).unwrap();
        assert!(after.total < 0.5 * before.total, "{} -> {}", before.total, after.total);
    }

    #[test]
    fn log_line_names_every_term() {
        let (logs, _) = run(1);
        let line = logs[0].to_line();
        for key in ["step=0", "total=", "atom=", "frac=", "lattice=", "commit=", "kl=", "acc="] {
            assert!(line.contains(key), "{line}");
        }
    }
}
