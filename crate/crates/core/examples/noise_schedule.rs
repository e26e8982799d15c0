//! Tabulates the shifted cosine schedule.
//!
//!     cargo run --example noise_schedule -- [shift]

use xtalgen::diffusion::NoiseSchedule;

fn main() -> anyhow::Result<()> {
    let shift: f64 = std::env::args().nth(1).map(|s| s.parse()).transpose()?.unwrap_or(2.0);
    let s = NoiseSchedule::new(100_000.0, shift);
    println!("{:>6} {:>10} {:>10}", "t/T", "logSNR", "alpha_bar");
    for k in 0..=10 {
        let t = s.timesteps * k as f64 / 10.0;
        println!("{:6.2} {:10.4} {:10.6}", k as f64 / 10.0, s.log_snr(t), s.alpha_bar(t));
    }
    println!("signal dominates for t/T < {:.4}", s.signal_fraction());
    Ok(())
}
