//! Compares reverse-mode gradients of a small MLP with central differences.
//!
//!     cargo run --example gradient_check

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use xtalgen::nn::{Activation, BoundParams, Mlp, ParamStore};
use xtalgen::tensor::{Tape, Tensor};

fn loss(mlp: &Mlp, store: &ParamStore, x: &Tensor) -> anyhow::Result<(f64, Vec<Tensor>)> {
    let mut tape = Tape::new();
    let p = BoundParams::bind(&mut tape, store);
    let xv = tape.constant(x.clone());
    let y = mlp.forward(&mut tape, &p, xv)?;
    let sq = tape.square(y);
    let l = tape.mean(sq);
    let v = tape.value(l).item();
    tape.backward(l)?;
    Ok((v, p.grads(&tape)))
}

fn main() -> anyhow::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut store = ParamStore::new();
    let mlp = Mlp::new(&mut store, "mlp", &[4, 16, 2], Activation::Silu, false, &mut rng);
    let x = Tensor::matrix(3, 4, (0..12).map(|_| rng.random_range(-1.0..1.0)).collect())?;
    let (_, grads) = loss(&mlp, &store, &x)?;
    let h = 1e-5;
    let mut worst: f64 = 0.0;
    for (p, g) in grads.iter().enumerate() {
        for i in 0..g.len() {
            let mut s = store.clone();
            s.values_mut()[p].data_mut()[i] += h;
            let up = loss(&mlp, &s, &x)?.0;
            s.values_mut()[p].data_mut()[i] -= 2.0 * h;
            let down = loss(&mlp, &s, &x)?.0;
            let fd = (up - down) / (2.0 * h);
            let an = g.data()[i];
            worst = worst.max((fd - an).abs() / fd.abs().max(an.abs()).max(1e-8));
        }
        println!("{:12} {:>4} entries checked", store.names()[p], g.len());
    }
    println!("max relative error {worst:.2e}");
    Ok(())
}
