//! Runs the validity and novelty metrics on perturbed copies of toy crystals.
//!
//!     cargo run --example evaluate_samples

use std::collections::{BTreeSet, HashSet};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use xtalgen::crystal::CrystalStructure;
use xtalgen::eval::{components, structure_id, summarize, EvalThresholds, SampleReport};
use xtalgen::io::toy_dataset;

fn main() -> anyhow::Result<()> {
    let th = EvalThresholds::default();
    let train = toy_dataset(1, 40, (3, 24))?;
    let fresh = toy_dataset(2, 20, (3, 24))?;
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    // half exact copies, a quarter jittered copies, a quarter unseen structures
    let mut samples: Vec<CrystalStructure> = train[..10].to_vec();
    for s in &train[10..20] {
        let frac = s.frac().iter().map(|f| f.map(|x| (x + rng.random_range(-0.05..0.05)).rem_euclid(1.0))).collect();
        samples.push(CrystalStructure::new(s.atom_types().to_vec(), frac, *s.lattice())?);
    }
    samples.extend(fresh[..10].iter().cloned());

    let reports: Vec<SampleReport> =
        samples.iter().enumerate().map(|(i, s)| SampleReport::evaluate(format!("{i:03}"), s, &th)).collect();
    let train_ids: HashSet<String> = train.iter().map(|s| structure_id(s, th.bond_factor)).collect();
    let train_components: BTreeSet<String> = train.iter().flat_map(|s| components(s, th.bond_factor)).collect();
    for r in reports.iter().take(3) {
        println!("{}", r.to_line());
    }
    let summary = summarize(&reports, &train_ids, &train_components, None);
    println!("{}", serde_json::to_string_pretty(&summary)?);
    Ok(())
}
