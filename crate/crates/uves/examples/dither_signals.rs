//! Inspects the dither construction: admissible multiplier sets, the
//! common period, zero averages, and the demodulation identity.

use nalgebra::DMatrix;
use uves::dither::{
    signal_average, validate_frequencies, DitherConfig, DEFAULT_AVERAGE_POINTS,
};

fn main() -> uves::Result<()> {
    // {1, 7} passes the exclusion rules; {1, 2, 3} trips several.
    for set in [vec![1u32, 7], vec![1, 2, 3]] {
        let report = validate_frequencies(&set);
        println!("multipliers {set:?}: valid = {}", report.is_valid());
        for v in &report.violations {
            println!("  {v}");
        }
    }

    let cfg = DitherConfig::new(vec![0.1, 0.1], vec![1, 7], 10.0)?;
    let (period, repeat) = cfg.common_period();
    println!("\nperiod T = {period:.6} s, repetition frequency {repeat:.3} rad/s");
    println!("tone frequencies: {:?} rad/s", cfg.frequencies());

    let s_avg = signal_average(|t| cfg.perturbation(t), period, DEFAULT_AVERAGE_POINTS)?;
    let m_avg = signal_average(|t| cfg.demodulation(t), period, DEFAULT_AVERAGE_POINTS)?;
    let d_avg = signal_average(|t| cfg.delta(t), period, DEFAULT_AVERAGE_POINTS)?;
    println!(
        "averages over one period: |S| = {:.2e}, |M| = {:.2e}, |Delta| = {:.2e}",
        s_avg.norm(),
        m_avg.norm(),
        d_avg.norm()
    );

    // M(t) S(t)' = I + Delta(t) pointwise; averaging kills Delta, which
    // is what makes the demodulated product an unbiased gradient read.
    let n = cfg.dim();
    let worst = (0..100)
        .map(|i| {
            let t = period * i as f64 / 100.0;
            let residual = cfg.demodulation(t) * cfg.perturbation(t).transpose()
                - DMatrix::identity(n, n)
                - cfg.delta(t);
            residual.norm()
        })
        .fold(0.0_f64, f64::max);
    println!("worst |M S' - I - Delta| over a period: {worst:.2e}");

    let rejected = DitherConfig::new(vec![0.1, 0.1, 0.1], vec![1, 2, 3], 10.0);
    println!("constructing with {{1, 2, 3}}: {}", rejected.unwrap_err());
    Ok(())
}
