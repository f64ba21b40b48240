//! Nearest-prototype accuracy on sampled 5-way 1-shot episodes.

use tim::classifier::{compute_posteriors, init_prototypes, query_accuracy};
use tim::tasks::{generate_synthetic_bank, sample_episode, EpisodeSpec, SyntheticConfig};

fn main() -> tim::Result<()> {
    let bank = generate_synthetic_bank(&SyntheticConfig::default())?;
    let spec = EpisodeSpec::standard(5, 1, 15);
    let mut total = 0.0;
    let episodes = 200;
    for seed in 0..episodes {
        let task = sample_episode(&bank, &spec, seed)?;
        let weights = init_prototypes(&task)?;
        let posteriors = compute_posteriors(&weights, &task, 15.0)?;
        total += query_accuracy(&posteriors.predictions(), task.query_labels().unwrap())?;
    }
    println!(
        "prototype accuracy over {episodes} episodes: {:.2}%",
        100.0 * total / episodes as f64
    );
    Ok(())
}
