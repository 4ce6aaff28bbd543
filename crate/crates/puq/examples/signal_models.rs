//! Evaluate the T2-prep and MOLLI signal models on their default timing
//! schedules and invert them with the least-squares fitters.
//!
//! ```sh
//! cargo run --release --example signal_models
//! ```

use puq::fitting::{lsq_fit_t1_molli, lsq_fit_t2};
use puq::physics::{molli_signal, t2prep_signal, SequencePreset};

fn main() -> anyhow::Result<()> {
    let t2prep = SequencePreset::t2prep_default();
    println!("T2-prep decay, S = PD exp(-TE/T2), PD = 1:");
    print!("  TE(ms)  ");
    for te in &t2prep.timings_ms {
        print!("{te:>8.0}");
    }
    println!();
    for t2 in [40.0, 80.0, 150.0, 250.0] {
        print!("  T2 {t2:>4.0}  ");
        for &te in &t2prep.timings_ms {
            print!("{:>8.4}", t2prep_signal(1.0, t2, te)?);
        }
        let signals: Vec<f64> = t2prep
            .timings_ms
            .iter()
            .map(|&te| t2prep_signal(1.0, t2, te).unwrap())
            .collect();
        let fit = lsq_fit_t2(&signals, &t2prep.timings_ms)?;
        println!("   -> LSQ recovers {:.4} ms", fit.t2_ms);
    }

    let molli = SequencePreset::molli_default();
    println!("\nMOLLI recovery, S = |A - B exp(-TI/T1*)|, A = 1, B = 2 (so T1 = T1*):");
    print!("  TI(ms)  ");
    for ti in &molli.timings_ms {
        print!("{ti:>8.0}");
    }
    println!();
    for t1 in [400.0, 800.0, 1400.0, 2000.0] {
        print!("  T1 {t1:>4.0}  ");
        for &ti in &molli.timings_ms {
            print!("{:>8.4}", molli_signal(1.0, 2.0, t1, ti)?);
        }
        let signals: Vec<f64> = molli
            .timings_ms
            .iter()
            .map(|&ti| molli_signal(1.0, 2.0, t1, ti).unwrap())
            .collect();
        let fit = lsq_fit_t1_molli(&signals, &molli.timings_ms)?;
        println!("   -> LSQ recovers {:.4} ms", fit.t1_ms);
    }
    println!("\nnull point of the T1 = 800 ms curve: TI = T1 ln 2 = {:.1} ms", 800.0 * 2f64.ln());
    Ok(())
}
