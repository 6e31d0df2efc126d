//! One module per subcommand. Every command takes the resolved context,
//! writes its artifacts under the output directory, prints a short
//! summary, and returns the artifact names for the manifest.

pub mod compare_methods;
pub mod cost;
pub mod eval;
pub mod finetune;
pub mod loss_ladder;
pub mod pretrain;
pub mod sweep_acquisition;
pub mod synth;
