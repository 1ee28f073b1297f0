use std::fmt;
use std::process::ExitCode;

use nucprune::autonet::AutonetError;
use nucprune::experiment::ExperimentError;
use nucprune::io::IoError;
use nucprune::pipeline::PipelineError;
use nucprune::pruner::PruneError;
use nucprune::synth::SynthError;

pub const EXIT_FAILURE: u8 = 1;
pub const EXIT_VALIDATION: u8 = 2;
pub const EXIT_IO: u8 = 3;
pub const EXIT_PARTIAL: u8 = 4;

/// Invalid flags or preconditions detected before any work starts.
#[derive(Debug)]
pub struct Validation(pub String);

impl fmt::Display for Validation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Validation {}

/// A sweep stopped early; the checkpoints before `failed_cr` were written.
#[derive(Debug)]
pub struct PartialSweep {
    pub completed: Vec<u64>,
    pub failed_cr: u64,
}

impl fmt::Display for PartialSweep {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "sweep stopped at CR {}; checkpoints kept for CR {:?}",
            self.failed_cr, self.completed
        )
    }
}

impl std::error::Error for PartialSweep {}

pub fn invalid(msg: impl Into<String>) -> anyhow::Error {
    Validation(msg.into()).into()
}

fn autonet_invalid(e: &AutonetError) -> bool {
    matches!(e, AutonetError::Config(_))
}

fn prune_invalid(e: &PruneError) -> bool {
    match e {
        PruneError::InvalidCompressionRatio(_) | PruneError::InvalidSparsity(_) => true,
        PruneError::Network(a) => autonet_invalid(a),
        _ => false,
    }
}

fn pipeline_invalid(e: &PipelineError) -> bool {
    matches!(e, PipelineError::Config(_))
}

/// Library errors with transparent wrappers hide their inner error from the
/// source chain, so the wrappers are unpacked here.
fn is_validation(e: &(dyn std::error::Error + 'static)) -> bool {
    if e.is::<Validation>() {
        return true;
    }
    if let Some(a) = e.downcast_ref::<AutonetError>() {
        return autonet_invalid(a);
    }
    if let Some(p) = e.downcast_ref::<PruneError>() {
        return prune_invalid(p);
    }
    if let Some(p) = e.downcast_ref::<PipelineError>() {
        return pipeline_invalid(p);
    }
    if let Some(x) = e.downcast_ref::<ExperimentError>() {
        return match x {
            ExperimentError::Network(a) => autonet_invalid(a),
            ExperimentError::Prune(p) => prune_invalid(p),
            ExperimentError::Pipeline(p) => pipeline_invalid(p),
            _ => false,
        };
    }
    matches!(e.downcast_ref::<SynthError>(), Some(SynthError::Config(_)))
}

/// Maps an error chain to the process exit status.
pub fn exit_code(err: &anyhow::Error) -> ExitCode {
    let code = if err.downcast_ref::<PartialSweep>().is_some() {
        EXIT_PARTIAL
    } else if err.chain().any(is_validation) {
        EXIT_VALIDATION
    } else if err
        .chain()
        .any(|e| e.is::<IoError>() || e.is::<std::io::Error>() || e.is::<serde_json::Error>())
    {
        EXIT_IO
    } else {
        EXIT_FAILURE
    };
    ExitCode::from(code)
}
