//! Flow-size recovery from register values.
//!
//! Two decoder families live here. The typical-set decoders
//! ([`typical_set_decode_one_layer`], [`recovery_multilayer`]) enumerate
//! digit vectors inside a divergence ball and succeed only on a unique
//! consistent solution; they are exact but limited to desk-scale instances.
//! The layered min-sum decoder ([`layered_minsum_decode`]) reconstructs
//! integer counter loads layer by layer and propagates interval bounds, and
//! scales to large instances. Every decoder gates success on re-encoding its
//! estimate and reproducing the input registers bit for bit.

mod minsum;
mod typical;

pub use minsum::{layered_minsum_decode, solve_layer, LayerSolve, MinsumOptions};
pub use typical::{recovery_multilayer, typical_set_decode_one_layer};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DecodeError {
    /// The enumeration space q^n exceeds the exhaustive-search guard.
    #[error("instance too large for exhaustive enumeration: q^n = {qn:.3e} exceeds {guard:.1e}")]
    InstanceTooLarge { qn: f64, guard: f64 },
    #[error("register vector has length {got}, expected {expected}")]
    LengthMismatch { got: usize, expected: usize },
    #[error("need {needed} digit laws, got {got}")]
    MissingDigitLaws { needed: usize, got: usize },
    #[error("requested {requested} digit stages but the braid has {layers} layers")]
    TooManyStages { requested: usize, layers: usize },
}

/// Outcome of a decode attempt.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DecodeStatus {
    /// A unique consistent estimate was found and re-encodes exactly.
    Success,
    /// More than one candidate survived, or bounds did not collapse.
    Ambiguous,
    /// No typical candidate exists at some digit stage.
    Atypical,
    /// Digit stages were exhausted with residual carries outstanding, or the
    /// input conflicts with the terminal-overflow policy.
    Overflow,
}

/// What a decoder reports back: a status, the estimate when one exists, and
/// enough residual information to see where a failed decode stopped.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecodeReport {
    pub status: DecodeStatus,
    /// Recovered flow vector. Present on success; the min-sum decoder also
    /// attaches its best estimate when ambiguous.
    pub x_hat: Option<Vec<u64>>,
    /// Digit stages fixed before failure (typical decoders), or layers solved
    /// exactly from the deepest down (min-sum).
    pub digits_recovered: usize,
    /// Register predictions per layer: the running y-hat vectors of the
    /// multilayer recovery, or the re-encoded registers of a min-sum
    /// estimate.
    pub residual_layers: Vec<Vec<u64>>,
    /// Typical candidates found per digit stage.
    pub candidate_count: Vec<usize>,
    pub warnings: Vec<String>,
}

impl DecodeReport {
    pub(crate) fn new(status: DecodeStatus) -> Self {
        DecodeReport {
            status,
            x_hat: None,
            digits_recovered: 0,
            residual_layers: Vec::new(),
            candidate_count: Vec::new(),
            warnings: Vec::new(),
        }
    }

    pub fn is_success(&self) -> bool {
        self.status == DecodeStatus::Success
    }
}

/// Component-wise difference `y - y_hat` modulo `q`, each entry in `{0..q-1}`.
pub fn residual(y: &[u64], y_hat: &[u64], q: u64) -> Result<Vec<u64>, DecodeError> {
    if y.len() != y_hat.len() {
        return Err(DecodeError::LengthMismatch {
            got: y_hat.len(),
            expected: y.len(),
        });
    }
    Ok(y.iter()
        .zip(y_hat)
        .map(|(&a, &b)| ((a % q) + q - (b % q)) % q)
        .collect())
}

pub(crate) fn is_prime(q: u64) -> bool {
    if q < 2 {
        return false;
    }
    let mut d = 2;
    while d * d <= q {
        if q % d == 0 {
            return false;
        }
        d += 1;
    }
    true
}
