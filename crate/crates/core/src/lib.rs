//! Transductive information maximization for few-shot classification.
//!
//! Given a small labelled support set and an unlabelled query set of
//! precomputed embeddings, the solvers fit a distance-based softmax
//! classifier that balances support cross-entropy against the mutual
//! information between query samples and their predicted labels.
//!
//! * [`gd`] minimizes the loss with full-batch gradient steps.
//! * [`adm`] alternates closed-form updates of auxiliary assignments and of
//!   the class weights, and includes the ablation variants.
//! * [`bounds`] audits error-probability bounds on the resulting posteriors.
//! * [`tasks`] builds synthetic embedding banks, samples episodes and
//!   reads or writes embedding files.
//! * [`harness`] runs many episodes and aggregates the results.
//!
//! ```
//! use tim::{adm, tasks, Hyperparameters};
//!
//! let bank = tasks::generate_synthetic_bank(&tasks::SyntheticConfig::default())?;
//! let task = tasks::sample_episode(&bank, &tasks::EpisodeSpec::standard(5, 1, 15), 7)?;
//! let result = adm::run_tim_adm(&task, &Hyperparameters::adm(), adm::AblationVariant::Full)?;
//! assert_eq!(result.query_predictions().len(), 75);
//! # Ok::<(), tim::Error>(())
//! ```

pub mod adm;
pub mod bounds;
pub mod classifier;
pub mod error;
pub mod gd;
pub mod harness;
pub mod objective;
pub mod task;
pub mod tasks;
pub mod trace;

pub use classifier::{ClassifierWeights, Posteriors};
pub use error::{Error, Result};
pub use objective::AuxAssignments;
pub use task::{Hyperparameters, Task};
pub use trace::{ConvergenceTrace, IterationRecord};
