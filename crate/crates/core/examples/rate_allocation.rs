//! Entropy-guided rate allocation: per-frame bit estimates map to channel
//! symbol budgets from a fixed value set, and the side link adds its own
//! symbols on top.
//!
//! cargo run --release --example rate_allocation

use dsst::eval::bandwidth_hz;
use dsst::rate::{allocate_rate, control_bits_per_frame};
use dsst::side::account_bandwidth;

fn main() -> dsst::Result<()> {
    let values = [16, 32, 64, 96, 128];
    // A silent frame, a few voiced frames and a burst.
    let bits = [3.0, 180.0, 260.0, 410.0, 900.0, 75.0];
    println!("control bits per frame: {}", control_bits_per_frame(&values));
    println!("eta_y    K per frame                  K_y");
    for eta in [0.05, 0.1, 0.2, 0.4] {
        let alloc = allocate_rate(&bits, eta, &values)?;
        println!("{eta:5.2}    {:<28} {}", format!("{:?}", alloc.k_bar), alloc.k_y());
    }

    let alloc = allocate_rate(&bits, 0.2, &values)?;
    println!("\nside bits   snr_db  K_z   K_total  bandwidth_hz (L = 512)");
    for (bits_z, snr) in [(120.0, 0.0), (120.0, 10.0), (400.0, 10.0)] {
        let r = account_bandwidth(&alloc, bits_z, snr)?;
        println!(
            "{bits_z:9.0}  {snr:7.1}  {:4}  {:7}  {:12.1}",
            r.k_z,
            r.k_total,
            bandwidth_hz(r.k_total, bits.len(), 512)
        );
    }
    Ok(())
}
