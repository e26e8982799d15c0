//! Generates the synthetic framework dataset and summarizes it.
//!
//!     cargo run --example toy_dataset -- [count] [seed]

use std::collections::BTreeMap;

use xtalgen::eval::{lattice_family, structure_id, validity_check, EvalThresholds};
use xtalgen::io::toy_dataset;

fn main() -> anyhow::Result<()> {
    let mut args = std::env::args().skip(1);
    let count: usize = args.next().map(|s| s.parse()).transpose()?.unwrap_or(200);
    let seed: u64 = args.next().map(|s| s.parse()).transpose()?.unwrap_or(0);
    let data = toy_dataset(seed, count, (3, 48))?;
    let th = EvalThresholds::default();
    let mut families = BTreeMap::new();
    let mut sizes = BTreeMap::new();
    let mut valid = 0;
    let mut ids = std::collections::HashSet::new();
    for s in &data {
        *families.entry(lattice_family(s.lattice()).to_string()).or_insert(0) += 1;
        *sizes.entry(s.num_atoms() / 8 * 8).or_insert(0) += 1;
        valid += validity_check(s, &th).overall_valid as usize;
        ids.insert(structure_id(s, th.bond_factor));
    }
    println!("{count} structures, {valid} valid, {} distinct identifiers", ids.len());
    println!("lattice families: {families:?}");
    for (lo, n) in sizes {
        println!("  {lo:3}-{:<3} atoms {n}", lo + 7);
    }
    println!("example id: {}", structure_id(&data[0], th.bond_factor));
    Ok(())
}
