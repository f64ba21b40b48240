//! The default benchmark with every diagnostic, writing artifacts to a
//! temporary directory.

use tim::harness::{run_benchmark, BankSource, RunConfig, Solver};
use tim::tasks::SyntheticConfig;

fn main() -> tim::Result<()> {
    let out = std::env::temp_dir().join("tim-benchmark");
    let cfg = RunConfig {
        episodes: 200,
        bound_audit: true,
        fixed_point_test: true,
        output: Some(out.clone()),
        ..RunConfig::new(
            Solver::Adm,
            BankSource::Synthetic(SyntheticConfig::default()),
        )
    };
    let run = run_benchmark(&cfg)?;
    let a = &run.aggregate;
    println!(
        "accuracy       {:.2} ± {:.2}%",
        100.0 * a.mean_accuracy,
        100.0 * a.ci95
    );
    println!("initial        {:.2}%", 100.0 * a.mean_initial_accuracy);
    println!("mi growth      {:.1}%", 100.0 * a.mi_growth_rate);
    println!(
        "fixed point    {:.1}%",
        100.0 * a.fixed_point_pass_rate.unwrap_or(0.0)
    );
    println!(
        "bound holds    {:.1}%",
        100.0 * a.bound_audit_pass_rate.unwrap_or(0.0)
    );
    println!(
        "time           {:.2} s ({:.4} s/episode)",
        run.timing.total_seconds, run.timing.mean_episode_seconds
    );
    println!("artifacts in   {}", out.display());
    Ok(())
}
