//! Shuffles the atoms of a toy crystal and shows that canonical ordering
//! recovers the same sequence of atom types.
//!
//!     cargo run --example canonical_ordering

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use xtalgen::canon::{apply_order, canonical_order, infer_bonds, labeled_fragments};
use xtalgen::elements::symbol;
use xtalgen::io::toy_dataset;

fn main() -> anyhow::Result<()> {
    let s = toy_dataset(3, 1, (10, 16))?.remove(0);
    let mut perm: Vec<usize> = (0..s.num_atoms()).collect();
    perm.shuffle(&mut ChaCha8Rng::seed_from_u64(1));
    let shuffled = s.permuted(&perm);
    let names = |t: &[u8]| t.iter().map(|&z| symbol(z).unwrap_or("?")).collect::<Vec<_>>().join(" ");
    let bg = infer_bonds(&s, 1.2);
    for f in labeled_fragments(&bg) {
        println!("{} fragment: {} atoms", f.role.tag(), f.atoms.len());
    }
    for (label, x) in [("original", &s), ("shuffled", &shuffled)] {
        let order = canonical_order(&infer_bonds(x, 1.2))?;
        let c = apply_order(x, order.as_slice())?;
        println!("{label:8}  input: {}", names(x.atom_types()));
        println!("{:8}  canon: {}", "", names(c.atom_types()));
    }
    Ok(())
}
