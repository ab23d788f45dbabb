//! Modular fast minimum-norm (FMN) adversarial attack with interchangeable
//! losses, optimizers, and step-size schedulers, plus a Bayesian
//! hyperparameter-optimization loop that tunes each attack configuration
//! against a target model, and robustness-curve evaluation built from
//! per-sample minimum perturbation norms.
//!
//! The crate is organized around the attack pipeline:
//!
//! * [`model`] / [`train`] — small affine+ReLU classifiers with exact
//!   reverse-mode input gradients and training routines for desk-scale
//!   test subjects.
//! * [`loss`] — the CE / LL / DLR attack losses and the misclassification
//!   predicate.
//! * [`stepper`] — GD / Adam / AdaMax optimizers and the CALR, sample-wise
//!   RLRoP, and fixed step-size schedulers.
//! * [`attack`] — the FMN attack loop itself.
//! * [`hyperopt`] — search spaces, Sobol initialization, Gaussian-process
//!   regression, noisy-expected-improvement acquisition, and the tuning loop.
//! * [`eval`] — robustness curves, a fixed-budget baseline attack, and the
//!   per-sample binary-search harness.
//! * [`io`] — file formats for models, datasets, results, histories, and
//!   curves.

pub mod attack;
pub mod data;
pub mod error;
pub mod eval;
pub mod hyperopt;
pub mod io;
pub mod loss;
pub mod model;
pub mod seed;
pub mod stepper;
pub mod train;

pub use attack::{fmn_run, fmn_run_sample, AttackConfig, AttackResult, LpNorm, SampleResult};
pub use data::{Dataset, InputSample};
pub use error::{Error, Result};
pub use loss::LossKind;
pub use model::{Architecture, Logits, Model};
