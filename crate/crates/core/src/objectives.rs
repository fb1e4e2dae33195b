//! Training objectives evaluated on supplied log-probabilities: the SFT
//! negative log-likelihood and the DPO loss with its gradient.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::datasets::DpoRecord;

/// Default DPO temperature.
pub const DEFAULT_BETA: f64 = 0.1;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ObjectiveError {
    #[error("token log-prob list is empty")]
    EmptyInput,
    #[error("token log-prob {index} is {value}, expected a finite value <= 0")]
    InvalidLogprob { index: usize, value: f64 },
    #[error("beta must be finite and > 0, got {0}")]
    InvalidBeta(f64),
    #[error("non-finite log-prob in DPO input")]
    NonFinite,
    #[error("mean over an empty dataset")]
    EmptyDataset,
    #[error("no log-probs for prompt {0:?}")]
    MissingLogprobs(String),
    #[error("line {line}: {reason}")]
    Parse { line: usize, reason: String },
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Reduction {
    #[default]
    Mean,
    Sum,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SftNllInput {
    pub token_logprobs: Vec<f64>,
    #[serde(default)]
    pub reduction: Reduction,
}

const LOGPROB_TOLERANCE: f64 = 1e-9;

pub fn sft_nll(input: &SftNllInput) -> Result<f64, ObjectiveError> {
    if input.token_logprobs.is_empty() {
        return Err(ObjectiveError::EmptyInput);
    }
    for (index, &value) in input.token_logprobs.iter().enumerate() {
        if !value.is_finite() || value > LOGPROB_TOLERANCE {
            return Err(ObjectiveError::InvalidLogprob { index, value });
        }
    }
    let sum: f64 = input.token_logprobs.iter().map(|v| -v.min(0.0)).sum();
    Ok(match input.reduction {
        Reduction::Sum => sum,
        Reduction::Mean => sum / input.token_logprobs.len() as f64,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DpoLossInput {
    pub logp_policy_chosen: f64,
    pub logp_policy_rejected: f64,
    pub logp_ref_chosen: f64,
    pub logp_ref_rejected: f64,
    pub beta: f64,
}

impl DpoLossInput {
    pub fn validate(&self) -> Result<(), ObjectiveError> {
        if !(self.beta.is_finite() && self.beta > 0.0) {
            return Err(ObjectiveError::InvalidBeta(self.beta));
        }
        let lps = [self.logp_policy_chosen, self.logp_policy_rejected, self.logp_ref_chosen, self.logp_ref_rejected];
        if lps.iter().all(|v| v.is_finite()) {
            Ok(())
        } else {
            Err(ObjectiveError::NonFinite)
        }
    }

    /// Implicit reward margin in log-prob space.
    pub fn z(&self) -> f64 {
        (self.logp_policy_chosen - self.logp_ref_chosen) - (self.logp_policy_rejected - self.logp_ref_rejected)
    }
}

/// `ln(1 + e^x)` without overflow or loss of precision for large |x|.
pub fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `-ln σ(β z)`, evaluated as `softplus(-β z)`.
pub fn dpo_loss(input: &DpoLossInput) -> Result<f64, ObjectiveError> {
    input.validate()?;
    Ok(softplus(-input.beta * input.z()))
}

/// `-ln σ(β z)` evaluated literally. Loses precision and overflows for
/// large |β z|; kept as a cross-check.
pub fn dpo_loss_naive(input: &DpoLossInput) -> Result<f64, ObjectiveError> {
    input.validate()?;
    let s = 1.0 / (1.0 + (-input.beta * input.z()).exp());
    Ok(-s.ln())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DpoGrad {
    pub policy_chosen: f64,
    pub policy_rejected: f64,
    pub ref_chosen: f64,
    pub ref_rejected: f64,
}

/// Gradient of [`dpo_loss`] with respect to the four log-probs.
pub fn dpo_loss_grad(input: &DpoLossInput) -> Result<DpoGrad, ObjectiveError> {
    input.validate()?;
    let g = input.beta * sigmoid(-input.beta * input.z());
    Ok(DpoGrad { policy_chosen: -g, policy_rejected: g, ref_chosen: g, ref_rejected: -g })
}

/// One line of a log-prob fixture file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogprobRecord {
    pub prompt: String,
    pub chosen_lp: f64,
    pub rejected_lp: f64,
    pub ref_chosen_lp: f64,
    pub ref_rejected_lp: f64,
}

impl LogprobRecord {
    pub fn loss_input(&self, beta: f64) -> DpoLossInput {
        DpoLossInput {
            logp_policy_chosen: self.chosen_lp,
            logp_policy_rejected: self.rejected_lp,
            logp_ref_chosen: self.ref_chosen_lp,
            logp_ref_rejected: self.ref_rejected_lp,
            beta,
        }
    }
}

pub fn parse_logprob_fixtures(text: &str) -> Result<Vec<LogprobRecord>, ObjectiveError> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| ObjectiveError::Parse { line: i + 1, reason: e.to_string() })
        })
        .collect()
}

/// Supplies policy and reference log-probs for a triplet.
pub trait LogprobProvider: Sync {
    fn logprobs(&self, triplet: &DpoRecord) -> Result<LogprobRecord, ObjectiveError>;
}

/// Looks records up by prompt text.
#[derive(Debug, Clone, Default)]
pub struct FixtureLogprobs {
    by_prompt: HashMap<String, LogprobRecord>,
}

impl FixtureLogprobs {
    pub fn new(records: impl IntoIterator<Item = LogprobRecord>) -> Self {
        Self { by_prompt: records.into_iter().map(|r| (r.prompt.clone(), r)).collect() }
    }
}

impl LogprobProvider for FixtureLogprobs {
    fn logprobs(&self, triplet: &DpoRecord) -> Result<LogprobRecord, ObjectiveError> {
        self.by_prompt
            .get(&triplet.prompt)
            .cloned()
            .ok_or_else(|| ObjectiveError::MissingLogprobs(triplet.prompt.clone()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DpoReport {
    pub count: usize,
    pub beta: f64,
    pub mean_loss: f64,
    /// Mean of β·z.
    pub mean_margin: f64,
}

/// Arithmetic means of the loss and of β·z over `records`.
pub fn dpo_report(records: &[LogprobRecord], beta: f64) -> Result<DpoReport, ObjectiveError> {
    if records.is_empty() {
        return Err(ObjectiveError::EmptyDataset);
    }
    let (mut loss, mut margin) = (0.0, 0.0);
    for r in records {
        let input = r.loss_input(beta);
        loss += dpo_loss(&input)?;
        margin += beta * input.z();
    }
    let n = records.len() as f64;
    Ok(DpoReport { count: records.len(), beta, mean_loss: loss / n, mean_margin: margin / n })
}

/// [`dpo_report`] over triplets whose log-probs come from `provider`.
pub fn dataset_dpo_report(
    triplets: &[DpoRecord],
    provider: &dyn LogprobProvider,
    beta: f64,
) -> Result<DpoReport, ObjectiveError> {
    use rayon::prelude::*;
    let records = triplets
        .par_iter()
        .map(|t| provider.logprobs(t))
        .collect::<Result<Vec<_>, _>>()?;
    dpo_report(&records, beta)
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;

    fn input(z_pos: f64, z_neg: f64, beta: f64) -> DpoLossInput {
        DpoLossInput {
            logp_policy_chosen: -10.0 + z_pos,
            logp_policy_rejected: -10.0 + z_neg,
            logp_ref_chosen: -10.0,
            logp_ref_rejected: -10.0,
            beta,
        }
    }

    #[test]
    fn nll() {
        let mean = SftNllInput { token_logprobs: vec![-0.5, -1.0, -1.5], reduction: Reduction::Mean };
        assert_eq!(sft_nll(&mean).unwrap(), 1.0);
        for reduction in [Reduction::Mean, Reduction::Sum] {
            assert_eq!(sft_nll(&SftNllInput { token_logprobs: vec![0.0], reduction }).unwrap(), 0.0);
        }
        assert_eq!(
            sft_nll(&SftNllInput { token_logprobs: vec![], reduction: Reduction::Sum }),
            Err(ObjectiveError::EmptyInput)
        );
        assert!(sft_nll(&SftNllInput { token_logprobs: vec![0.5], reduction: Reduction::Sum }).is_err());
    }

    #[test]
    fn loss_values() {
        assert_eq!(dpo_loss(&input(0.0, 0.0, 0.1)).unwrap(), std::f64::consts::LN_2);
        // ln(1 + e^-0.2) and ln(1 + e^-20), 50-digit evaluation
        let a = dpo_loss(&input(1.0, -1.0, 0.1)).unwrap();
        assert!((a - 0.598_138_869_381_591_8).abs() < 1e-15, "{a}");
        let b = dpo_loss(&input(1.0, -1.0, 10.0)).unwrap();
        assert!((b / 2.061_153_620_314_380_7e-9 - 1.0).abs() < 1e-12, "{b}");
    }

    #[test]
    fn gradient_at_zero() {
        let g = dpo_loss_grad(&input(0.0, 0.0, 0.1)).unwrap();
        assert_eq!(g.policy_chosen, -0.05);
        assert_eq!(g.policy_rejected, 0.05);
        assert_eq!(g.ref_chosen, 0.05);
        assert_eq!(g.ref_rejected, -0.05);
    }

    #[test]
    fn invalid_inputs() {
        assert_eq!(dpo_loss(&input(0.0, 0.0, 0.0)), Err(ObjectiveError::InvalidBeta(0.0)));
        assert_eq!(dpo_loss(&input(f64::NAN, 0.0, 0.1)), Err(ObjectiveError::NonFinite));
        assert_eq!(dpo_report(&[], 0.1), Err(ObjectiveError::EmptyDataset));
    }

    #[test]
    fn report_over_fixture_lines() {
        let text = "{\"prompt\":\"a\",\"chosen_lp\":-4.0,\"rejected_lp\":-6.0,\"ref_chosen_lp\":-5.0,\"ref_rejected_lp\":-5.0}\n";
        let recs = parse_logprob_fixtures(text).unwrap();
        let rep = dpo_report(&recs, 0.1).unwrap();
        assert!((rep.mean_loss - 0.598_138_869_381_591_8).abs() < 1e-15);
        assert!((rep.mean_margin - 0.2).abs() < 1e-15);

        let provider = FixtureLogprobs::new(recs);
        let t = DpoRecord { prompt: "a".into(), chosen: "c".into(), rejected: "r".into() };
        assert_eq!(dataset_dpo_report(&[t], &provider, 0.1).unwrap(), rep);
        let missing = DpoRecord { prompt: "b".into(), chosen: "c".into(), rejected: "r".into() };
        assert!(dataset_dpo_report(&[missing], &provider, 0.1).is_err());
    }

    proptest! {
        #[test]
        fn loss_decreasing_and_positive(z in -200.0f64..200.0, dz in 1e-3f64..5.0, beta in 0.01f64..2.0) {
            let a = dpo_loss(&input(z, 0.0, beta)).unwrap();
            let b = dpo_loss(&input(z + dz, 0.0, beta)).unwrap();
            prop_assert!(b <= a);
            prop_assert!(a >= 0.0);
            if beta * z.abs() < 30.0 {
                prop_assert!(a > 0.0 && b < a);
            }
        }

        #[test]
        fn symmetric_sum_at_least_two_ln2(z in -50.0f64..50.0, beta in 0.01f64..2.0) {
            let s = dpo_loss(&input(z, 0.0, beta)).unwrap() + dpo_loss(&input(-z, 0.0, beta)).unwrap();
            prop_assert!(s >= 2.0 * std::f64::consts::LN_2 - 1e-15);
        }

        #[test]
        fn naive_agrees(x in -30.0f64..30.0) {
            let i = input(x, 0.0, 1.0);
            let (a, b) = (dpo_loss(&i).unwrap(), dpo_loss_naive(&i).unwrap());
            prop_assert!((a - b).abs() <= 1e-12, "{} vs {}", a, b);
        }

        #[test]
        fn nll_nonnegative(v in prop::collection::vec(-20.0f64..=0.0, 1..20)) {
            let sum = sft_nll(&SftNllInput { token_logprobs: v.clone(), reduction: Reduction::Sum }).unwrap();
            let mean = sft_nll(&SftNllInput { token_logprobs: v.clone(), reduction: Reduction::Mean }).unwrap();
            prop_assert!(sum >= 0.0);
            prop_assert!((sum - mean * v.len() as f64).abs() <= 1e-9 * sum.max(1.0));
        }
    }
}
