//! End-to-end memorization run: overfit the autoencoder on 16 toy crystals,
//! train the denoiser on their latents, sample one structure per training
//! atom count and count identifier matches.
//!
//!     cargo run --release --example latent_diffusion -- [ae_steps] [diff_steps] [sample_steps]

use std::collections::HashSet;
use std::time::Instant;

use xtalgen::autoencoder::AeTrainer;
use xtalgen::cli::sample_rng;
use xtalgen::config::RunConfig;
use xtalgen::diffusion::{prepare_example, sample_structure, CondFeatures, DiffTrainer, SampleOptions};
use xtalgen::eval::structure_id;
use xtalgen::io::toy_dataset;

fn arg(k: usize, default: u64) -> anyhow::Result<u64> {
    Ok(std::env::args().nth(k).map(|s| s.parse()).transpose()?.unwrap_or(default))
}

fn main() -> anyhow::Result<()> {
    let (ae_steps, diff_steps, sample_steps) = (arg(1, 600)?, arg(2, 4000)?, arg(3, 500)? as usize);
    let diff_lr: f64 = std::env::var("DIFF_LR").ok().map(|v| v.parse()).transpose()?.unwrap_or(1e-3);
    let data = toy_dataset(11, 16, (3, 16))?;
    let cfg = RunConfig {
        hidden: 32,
        mp_steps: 2,
        ae_batch: 16,
        ae_lr: 2e-3,
        ae_augment: false,
        rvq_codes: 64,
        denoiser_hidden: 64,
        denoiser_mp_steps: 3,
        diff_batch: 16,
        diff_lr,
        // every training draw is de novo, the only mode sampled below
        inpaint_prob: 0.0,
        composition_prob: 0.0,
        bonds_prob: 0.0,
        cluster_prob: 0.0,
        ..RunConfig::default()
    };
    let start = Instant::now();
    let mut ae = AeTrainer::new(&cfg)?;
    ae.train(&data, ae_steps, &mut |_| {})?;
    let (terms, acc) = ae.evaluate(&data)?;
    let train_ids: HashSet<String> = data.iter().map(|s| structure_id(s, cfg.bond_factor)).collect();
    let mut kept = 0;
    for s in &data {
        let out = ae.model.reconstruct(s)?.to_structure()?;
        kept += (structure_id(&out, cfg.bond_factor) == structure_id(s, cfg.bond_factor)) as usize;
    }
    println!(
        "autoencoder: accuracy {acc:.3}  L_F {:.2e}  identifiers kept {kept}/{}  t={:.0}s",
        terms.frac,
        data.len(),
        start.elapsed().as_secs_f64()
    );

    let examples = data
        .iter()
        .map(|s| prepare_example(&ae.model, s, cfg.bond_factor))
        .collect::<Result<Vec<_>, _>>()?;
    let mut diff = DiffTrainer::new(&cfg);
    diff.train(&examples, diff_steps, &mut |l| {
        if l.step % 100 == 0 {
            println!("{} t={:.0}s", l.to_line(), start.elapsed().as_secs_f64());
        }
    })?;

    let dcfg = &diff.denoiser.config;
    let opts = SampleOptions { n_steps: sample_steps, self_condition: true };
    let mut hits = 0;
    for (i, s) in data.iter().enumerate() {
        let cond = CondFeatures::de_novo(dcfg, s.num_atoms());
        let mut rng = sample_rng(cfg.seed, i as u64);
        let id = match sample_structure(&ae.model, &diff.denoiser, &diff.stats, &dcfg.schedule, &cond, opts, &mut rng) {
            Ok(out) => structure_id(&out, cfg.bond_factor),
            Err(e) => format!("decode failed: {e}"),
        };
        let hit = train_ids.contains(&id);
        hits += hit as usize;
        println!("N={:2}  {}  {id}", s.num_atoms(), if hit { "match" } else { "     " });
    }
    println!("{hits}/{} samples match a training identifier  t={:.0}s", data.len(), start.elapsed().as_secs_f64());
    Ok(())
}
