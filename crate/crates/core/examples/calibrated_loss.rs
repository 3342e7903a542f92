//! The calibrated pair function against the four triplet baselines: only the
//! calibrated loss keeps l(d+, d-) + l(d-, d+) constant.

use fsvae::losses::{calibrated_pair, AlignmentLoss, LossConfig};

fn main() -> fsvae::Result<()> {
    let cfg = LossConfig::default();
    println!("l(a) + l(-a) at lambda = 100:");
    for a in [-250.0, -3.0, 0.0, 1.0, 40.0] {
        println!("  a = {a:>7}: {:.15}", calibrated_pair(a, 100.0) + calibrated_pair(-a, 100.0));
    }
    println!("exchange sums over (d+, d-):");
    let points = [(0.5, 1.0), (1.0, 1.0), (0.0, 5.0), (10.0, 0.0)];
    for loss in AlignmentLoss::ALL {
        let sums = points
            .iter()
            .map(|&(p, n)| loss.exchange_sum(p, n, &cfg).map(|s| format!("{s:>9.4}")))
            .collect::<fsvae::Result<Vec<_>>>()?;
        println!("  {:<10} {}", loss.name(), sums.join(" "));
    }
    Ok(())
}
