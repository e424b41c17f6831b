// mdbook can't run listings that depend on a workspace crate, so every chapter
// is pulled into this crate as a module doc and `cargo test --doc` runs them.
// One module per chapter keeps failures traceable to a file.

#[doc = include_str!("src/introduction.md")]
pub mod introduction {}
#[doc = include_str!("src/instance-weights.md")]
pub mod instance_weights {}
#[doc = include_str!("src/modality-mi.md")]
pub mod modality_mi {}
#[doc = include_str!("src/combining.md")]
pub mod combining {}
#[doc = include_str!("src/smoothing.md")]
pub mod smoothing {}
#[doc = include_str!("src/model.md")]
pub mod model {}
#[doc = include_str!("src/synthetic-data.md")]
pub mod synthetic_data {}
#[doc = include_str!("src/experiments.md")]
pub mod experiments {}
#[doc = include_str!("src/metrics.md")]
pub mod metrics {}
#[doc = include_str!("src/cli.md")]
pub mod cli {}
