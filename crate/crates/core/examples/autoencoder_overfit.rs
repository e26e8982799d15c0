//! Overfits the autoencoder on a handful of toy crystals and reports how well
//! it reconstructs them.
//!
//!     cargo run --release --example autoencoder_overfit -- [steps]

use std::time::Instant;

use xtalgen::autoencoder::AeTrainer;
use xtalgen::config::RunConfig;
use xtalgen::io::toy_dataset;

fn main() -> anyhow::Result<()> {
    let steps: u64 = std::env::args().nth(1).map(|s| s.parse()).transpose()?.unwrap_or(300);
    let data = toy_dataset(11, 16, (3, 16))?;
    let cfg = RunConfig {
        hidden: 32,
        mp_steps: 2,
        ae_batch: 16,
        ae_lr: 2e-3,
        ae_augment: false,
        rvq_codes: 64,
        ..RunConfig::default()
    };
    let mut t = AeTrainer::new(&cfg)?;
    let start = Instant::now();
    t.train(&data, steps, &mut |l| {
        if l.step % 25 == 0 {
            println!("{} t={:.1}s", l.to_line(), start.elapsed().as_secs_f64());
        }
    })?;
    let (terms, acc) = t.evaluate(&data)?;
    println!("eval: accuracy {:.3}  L_F {:.2e}  L_L {:.2e}", acc, terms.frac, terms.lattice);
    Ok(())
}
