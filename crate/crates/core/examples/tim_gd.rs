//! Gradient-based inference on one episode, printing the loss every 100 steps.

use tim::classifier::query_accuracy;
use tim::gd::run_tim_gd;
use tim::tasks::{generate_synthetic_bank, sample_episode, EpisodeSpec, SyntheticConfig};
use tim::Hyperparameters;

fn main() -> tim::Result<()> {
    let bank = generate_synthetic_bank(&SyntheticConfig::default())?;
    let task = sample_episode(&bank, &EpisodeSpec::standard(5, 1, 15), 42)?;
    let out = run_tim_gd(&task.without_query_labels(), &Hyperparameters::gd())?;

    println!("iter 0: loss {:.5}", out.trace.initial().loss);
    for rec in out
        .trace
        .records()
        .iter()
        .filter(|r| r.iteration % 100 == 0)
    {
        println!(
            "iter {}: loss {:.5}, mi {:.4}",
            rec.iteration, rec.loss, rec.mi_alpha1
        );
    }
    let acc = query_accuracy(&out.query_predictions, task.query_labels().unwrap())?;
    println!("query accuracy {:.2}%", 100.0 * acc);
    Ok(())
}
