//! Reduces a deliberately skewed cell and shows the integer basis change.
//!
//!     cargo run --example niggli_reduction

use xtalgen::crystal::{niggli_reduce_with_transform, params_to_matrix, Lattice, LatticeMatrix};

fn main() -> anyhow::Result<()> {
    let cubic = Lattice::from_degrees([4.0, 4.0, 4.0], [90.0, 90.0, 90.0]);
    let m = params_to_matrix(&cubic)?;
    // a' = a + 2b, b' = b - c, c' = c: same lattice, ugly basis
    let r = m.rows;
    let rows = [
        [r[0][0] + 2.0 * r[1][0], r[0][1] + 2.0 * r[1][1], r[0][2] + 2.0 * r[1][2]],
        [r[1][0] - r[2][0], r[1][1] - r[2][1], r[1][2] - r[2][2]],
        r[2],
    ];
    let skewed = LatticeMatrix { rows }.to_lattice();
    let red = niggli_reduce_with_transform(&skewed)?;
    let show = |l: &Lattice| {
        let a = l.angles_degrees();
        format!(
            "a={:.4} b={:.4} c={:.4}  alpha={:.3} beta={:.3} gamma={:.3}",
            l.lengths[0], l.lengths[1], l.lengths[2], a[0], a[1], a[2]
        )
    };
    println!("input   {}", show(&skewed));
    println!("reduced {}", show(&red.lattice));
    println!("volume  {:.6} -> {:.6}", skewed.volume()?, red.lattice.volume()?);
    println!("transform {:?}", red.transform);
    Ok(())
}
