//! Accuracy and collapse rate of each objective variant on the hard bank.

use tim::adm::AblationVariant;
use tim::harness::{run_benchmark, BankSource, RunConfig, Solver};
use tim::tasks::{Difficulty, SyntheticConfig};

fn main() -> tim::Result<()> {
    let bank = BankSource::Synthetic(SyntheticConfig::preset(Difficulty::Hard));
    for variant in AblationVariant::ALL {
        let cfg = RunConfig {
            variant,
            episodes: 300,
            ..RunConfig::new(Solver::Adm, bank.clone())
        };
        let a = run_benchmark(&cfg)?.aggregate;
        println!(
            "{:<8} accuracy {:.2} ± {:.2}%, collapsed {:.1}%",
            variant.to_string(),
            100.0 * a.mean_accuracy,
            100.0 * a.ci95,
            100.0 * a.collapse_rate
        );
    }
    Ok(())
}
