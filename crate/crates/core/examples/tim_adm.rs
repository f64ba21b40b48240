//! Alternating inference on one episode with the Hessian check and the
//! fixed-point test.

use tim::adm::{fixed_point_residual, run_tim_adm_with, AdmOptions};
use tim::tasks::{generate_synthetic_bank, sample_episode, EpisodeSpec, SyntheticConfig};
use tim::Hyperparameters;

fn main() -> tim::Result<()> {
    let bank = generate_synthetic_bank(&SyntheticConfig::default())?;
    let task = sample_episode(&bank, &EpisodeSpec::standard(5, 1, 15), 42)?;
    let hp = Hyperparameters::adm();
    let options = AdmOptions {
        hessian_check: true,
        ..AdmOptions::default()
    };
    let out = run_tim_adm_with(&task, &hp, &options)?;

    for rec in out
        .trace
        .records()
        .iter()
        .filter(|r| r.iteration % 25 == 0 || r.iteration == 1)
    {
        println!(
            "iter {:>3}: loss {:.6}, accuracy {:.2}%, mi {:.4}, |dW| {:.2e}",
            rec.iteration,
            rec.loss,
            100.0 * rec.accuracy.unwrap_or(f64::NAN),
            rec.mi_alpha1,
            rec.weight_displacement
        );
    }
    let residual = fixed_point_residual(&out, &task, &hp)?;
    println!(
        "hessian check passed at every iterate: {}, largest eigenvalue {:.3e}",
        out.hessian_passed(),
        out.hessian_reports
            .iter()
            .map(|r| r.max_eigenvalue())
            .fold(f64::NEG_INFINITY, f64::max)
    );
    println!(
        "extra update pair moves W by {:.2e} and q by {:.2e}",
        residual.weights, residual.assignments
    );
    Ok(())
}
