//! Library side of the `phonodiff` command: every subcommand is a plain
//! function so tests can drive it without spawning a process.

pub mod ablate;
pub mod commands;
pub mod wav;

pub use ablate::{run_ablation, AblationAxis, AblationRow, AblationTable};
pub use commands::{
    evaluate_checkpoint, gen_corpus, load_or_generate_corpus, parse_tokens, synthesize, train, SynthRequest,
    SynthSource, TrainOptions, TrainOutcome,
};
