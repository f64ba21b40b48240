//! Every term of the error bound after inference on one episode.

use tim::adm::{run_tim_adm, AblationVariant};
use tim::bounds::{kovalevsky_check, label_distribution, proposition1_bound};
use tim::tasks::{generate_synthetic_bank, sample_episode, EpisodeSpec, SyntheticConfig};
use tim::Hyperparameters;

fn main() -> tim::Result<()> {
    let bank = generate_synthetic_bank(&SyntheticConfig::default())?;
    let task = sample_episode(&bank, &EpisodeSpec::standard(5, 5, 15), 3)?;
    let out = run_tim_adm(&task, &Hyperparameters::adm(), AblationVariant::Full)?;
    let truth = task.query_labels().unwrap();
    let prior = label_distribution(truth, task.num_classes());
    let report = proposition1_bound(&out.final_posteriors, truth, &prior)?;

    println!("error rate            {:.4}", report.p_e);
    println!("marginal KL (nats)    {:.4}", report.kl_marginal);
    println!("H(Y|X) (nats)         {:.4}", report.cond_entropy);
    println!(
        "soft/hard disagreement {:.4} <= {:.4}",
        report.p_delta_empirical, report.p_delta_bound
    );
    println!("epsilon               {:.4}", report.epsilon);
    println!("diagonally dominant   {}", report.diagonally_dominant);
    match report.total_bound {
        Some(b) => println!("bound                 {b:.4} ({:?})", report.verdict),
        None => println!("bound not applicable  ({:?})", report.verdict),
    }
    if report.p_e <= 0.5 {
        println!(
            "kovalevsky relation   {}",
            kovalevsky_check(report.cond_entropy, report.p_e)?
        );
    }
    Ok(())
}
