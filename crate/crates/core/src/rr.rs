//! Two-coin randomized response.
//!
//! A respondent flips a first coin with heads probability `p`; on heads it
//! answers truthfully, on tails it reports a second coin with heads
//! probability `q`. Heads is "yes" (`true`). Aggregating the privatized
//! answers of `N` respondents gives the unbiased population estimate
//!
//! ```text
//! Y_A = (Ŷ - (1 - p)·q·N) / p
//! ```
//!
//! and the mechanism is ε-differentially private with
//! `ε = ln((p + (1 - p)·q) / ((1 - p)·q))`.

use rand::Rng;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RrError {
    #[error("coin bias {name}={value} is outside [0, 1]")]
    BiasOutOfRange { name: &'static str, value: f64 },
    #[error("infinite epsilon: (1-p)*q = 0 gives no plausible deniability")]
    InfiniteEpsilon,
    #[error("estimator undefined for p = 0")]
    ZeroTruthfulProbability,
    #[error("raw yes count {raw_yes} exceeds respondent count {respondents}")]
    YesCountExceedsRespondents { raw_yes: u64, respondents: u64 },
    #[error("respondent count must be positive")]
    NoRespondents,
    #[error("population fraction {0} must lie strictly between 0 and 1")]
    FractionOutOfRange(f64),
    #[error("P(yes) = 0: posterior undefined")]
    ZeroYesProbability,
    #[error("sequence lengths differ ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("empty input")]
    Empty,
    #[error("relative error undefined for an actual count of 0")]
    ZeroActual,
    #[error("value {value} at position {index} is not a bit")]
    NotABit { index: usize, value: u8 },
    #[error("message of {got} bytes cannot hold {attributes} attributes (need {need})")]
    MessageTooShort {
        attributes: usize,
        need: usize,
        got: usize,
    },
    #[error("message is not a well-formed response")]
    MalformedMessage,
}

pub type Result<T> = std::result::Result<T, RrError>;

/// The two coin biases.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PrivacyParams {
    p: f64,
    q: f64,
}

impl PrivacyParams {
    pub fn new(p: f64, q: f64) -> Result<Self> {
        for (name, value) in [("p", p), ("q", q)] {
            if !(0.0..=1.0).contains(&value) {
                return Err(RrError::BiasOutOfRange { name, value });
            }
        }
        Ok(Self { p, q })
    }

    /// First-coin (truthful answer) probability.
    pub fn p(&self) -> f64 {
        self.p
    }

    /// Second-coin (forced "yes") probability.
    pub fn q(&self) -> f64 {
        self.q
    }

    /// Pr[yes | truth = yes] = p + (1 - p)·q.
    pub fn prob_yes_given_true(&self) -> f64 {
        self.p + (1.0 - self.p) * self.q
    }

    /// Pr[yes | truth = no] = (1 - p)·q.
    pub fn prob_yes_given_false(&self) -> f64 {
        (1.0 - self.p) * self.q
    }

    /// False when a "yes" can only come from a truthful respondent, which
    /// makes ε infinite.
    pub fn has_plausible_deniability(&self) -> bool {
        self.prob_yes_given_false() > 0.0
    }

    pub fn epsilon(&self) -> Result<f64> {
        epsilon(self)
    }
}

pub fn randomize_bit<R: Rng + ?Sized>(truth: bool, params: &PrivacyParams, rng: &mut R) -> bool {
    if rng.gen_bool(params.p) {
        truth
    } else {
        rng.gen_bool(params.q)
    }
}

/// A privatized answer: one bit per sensitive attribute.
///
/// Built only from `bool`s, so a value other than 0 or 1 cannot be stored.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct PrivatizedVector {
    bits: Vec<bool>,
}

impl PrivatizedVector {
    pub fn from_bits(bits: Vec<bool>) -> Result<Self> {
        if bits.is_empty() {
            return Err(RrError::Empty);
        }
        Ok(Self { bits })
    }

    /// Accepts numeric 0/1 values and rejects anything else.
    pub fn try_from_values(values: &[u8]) -> Result<Self> {
        let bits = values
            .iter()
            .enumerate()
            .map(|(index, &value)| match value {
                0 => Ok(false),
                1 => Ok(true),
                _ => Err(RrError::NotABit { index, value }),
            })
            .collect::<Result<Vec<_>>>()?;
        Self::from_bits(bits)
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn attribute_count(&self) -> usize {
        self.bits.len()
    }

    pub fn popcount(&self) -> usize {
        self.bits.iter().filter(|b| **b).count()
    }

    /// Bytes needed to carry `attributes` bits plus the presence marker.
    pub fn required_message_bytes(attributes: usize) -> usize {
        (attributes + 1).div_ceil(8)
    }

    /// Packs the vector into a write-table message.
    ///
    /// Bit 0 of byte 0 is a presence marker that is always set, so a real
    /// response never encodes to the all-zero (dummy) message. Attribute `i`
    /// lives at bit `i + 1`, least significant bit first; the padding is zero.
    pub fn to_message(&self, message_bytes: usize) -> Result<Vec<u8>> {
        let need = Self::required_message_bytes(self.bits.len());
        if message_bytes < need {
            return Err(RrError::MessageTooShort {
                attributes: self.bits.len(),
                need,
                got: message_bytes,
            });
        }
        let mut out = vec![0u8; message_bytes];
        out[0] = 1;
        for (i, _) in self.bits.iter().enumerate().filter(|(_, b)| **b) {
            let pos = i + 1;
            out[pos / 8] |= 1 << (pos % 8);
        }
        Ok(out)
    }

    /// Inverse of [`PrivatizedVector::to_message`]. Fails on a missing marker
    /// or nonzero padding, which is what an XOR of colliding writes tends to
    /// look like.
    pub fn from_message(message: &[u8], attributes: usize) -> Result<Self> {
        if attributes == 0 {
            return Err(RrError::Empty);
        }
        let need = Self::required_message_bytes(attributes);
        if message.len() < need {
            return Err(RrError::MessageTooShort {
                attributes,
                need,
                got: message.len(),
            });
        }
        if message[0] & 1 == 0 {
            return Err(RrError::MalformedMessage);
        }
        let bit = |pos: usize| message[pos / 8] >> (pos % 8) & 1 == 1;
        let total_bits = message.len() * 8;
        if (attributes + 1..total_bits).any(bit) {
            return Err(RrError::MalformedMessage);
        }
        Self::from_bits((1..=attributes).map(bit).collect())
    }
}

/// Applies [`randomize_bit`] independently to every attribute.
pub fn randomize_vector<R: Rng + ?Sized>(
    truth: &[bool],
    params: &PrivacyParams,
    rng: &mut R,
) -> Result<PrivatizedVector> {
    if truth.is_empty() {
        return Err(RrError::Empty);
    }
    let bits = truth
        .iter()
        .map(|&t| randomize_bit(t, params, rng))
        .collect();
    PrivatizedVector::from_bits(bits)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PopulationEstimate {
    pub raw_yes_count: u64,
    pub respondent_count: u64,
    /// Not clamped to `[0, N]`.
    pub estimate: f64,
}

pub fn estimate_population(
    raw_yes_count: u64,
    respondents: u64,
    params: &PrivacyParams,
) -> Result<PopulationEstimate> {
    if params.p == 0.0 {
        return Err(RrError::ZeroTruthfulProbability);
    }
    if respondents == 0 {
        return Err(RrError::NoRespondents);
    }
    if raw_yes_count > respondents {
        return Err(RrError::YesCountExceedsRespondents {
            raw_yes: raw_yes_count,
            respondents,
        });
    }
    let estimate = estimate_from_real(raw_yes_count as f64, respondents, params)?;
    Ok(PopulationEstimate {
        raw_yes_count,
        respondent_count: respondents,
        estimate,
    })
}

/// The estimator applied to a real-valued yes tally, such as an expected
/// value rather than an observed count.
pub fn estimate_from_real(raw_yes: f64, respondents: u64, params: &PrivacyParams) -> Result<f64> {
    if params.p == 0.0 {
        return Err(RrError::ZeroTruthfulProbability);
    }
    if respondents == 0 {
        return Err(RrError::NoRespondents);
    }
    Ok((raw_yes - params.prob_yes_given_false() * respondents as f64) / params.p)
}

pub fn epsilon(params: &PrivacyParams) -> Result<f64> {
    if !params.has_plausible_deniability() {
        return Err(RrError::InfiniteEpsilon);
    }
    Ok((params.prob_yes_given_true() / params.prob_yes_given_false()).ln())
}

/// Posterior leakage of a "yes" answer.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LeakageReport {
    pub p_yes: f64,
    pub p_a_given_yes: f64,
    pub p_not_a_given_yes: f64,
    /// `f64::INFINITY` when the parameters give no plausible deniability.
    pub epsilon: f64,
    pub pi_a: f64,
}

pub fn leakage(params: &PrivacyParams, pi_a: f64) -> Result<LeakageReport> {
    if !(pi_a > 0.0 && pi_a < 1.0) {
        return Err(RrError::FractionOutOfRange(pi_a));
    }
    let p_yes = params.p * pi_a + params.prob_yes_given_false();
    if p_yes <= 0.0 {
        return Err(RrError::ZeroYesProbability);
    }
    let p_a_given_yes = pi_a * params.prob_yes_given_true() / p_yes;
    let p_not_a_given_yes = (1.0 - pi_a) * params.prob_yes_given_false() / p_yes;
    let epsilon = epsilon(params).unwrap_or(f64::INFINITY);
    Ok(LeakageReport {
        p_yes,
        p_a_given_yes,
        p_not_a_given_yes,
        epsilon,
        pi_a,
    })
}

/// Root mean squared error over paired entries.
pub fn rmse(estimates: &[f64], actuals: &[f64]) -> Result<f64> {
    if estimates.len() != actuals.len() {
        return Err(RrError::LengthMismatch(estimates.len(), actuals.len()));
    }
    if estimates.is_empty() {
        return Err(RrError::Empty);
    }
    let sum: f64 = estimates
        .iter()
        .zip(actuals)
        .map(|(e, a)| (e - a).powi(2))
        .sum();
    Ok((sum / estimates.len() as f64).sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RelativeError {
    /// `(estimate - actual) / actual`
    pub signed: f64,
    pub magnitude: f64,
}

pub fn relative_error(estimate: f64, actual: f64) -> Result<RelativeError> {
    if actual == 0.0 {
        return Err(RrError::ZeroActual);
    }
    let signed = (estimate - actual) / actual;
    Ok(RelativeError {
        signed,
        magnitude: signed.abs(),
    })
}
