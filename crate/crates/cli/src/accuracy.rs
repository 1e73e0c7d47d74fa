//! Accuracy of the population estimate over a station dataset.
//!
//! Every vehicle answers one bit per station (true only at its own
//! station) through randomized response; the per-station yes tallies are
//! inverted with the estimator and compared against the true counts.

use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::{Binomial, Distribution};
use rrstream_core::rr::{estimate_from_real, randomize_vector, relative_error, RrError};
use rrstream_core::PrivacyParams;
use serde::Serialize;
use thiserror::Error;

use crate::dataset::StationDataset;

#[derive(Debug, Error)]
pub enum AccuracyError {
    #[error("at least one trial is required")]
    NoTrials,
    #[error("dataset has no vehicles")]
    NoVehicles,
    #[error(transparent)]
    Rr(#[from] RrError),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// How the per-station yes tallies are produced.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum SamplingMode {
    /// Every vehicle privatizes its full bit vector.
    PerOwner,
    /// Each tally is drawn directly from its exact distribution: the sum of
    /// `Bin(Y, p + (1-p)q)` and `Bin(N - Y, (1-p)q)`. Same law as
    /// `PerOwner`, linear in the number of stations instead of
    /// stations × vehicles.
    Aggregate,
    /// The tally is set to its expectation `pY + (1-p)qN`; no randomness.
    Expectation,
}

impl std::str::FromStr for SamplingMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "per-owner" => Ok(Self::PerOwner),
            "aggregate" => Ok(Self::Aggregate),
            "expectation" => Ok(Self::Expectation),
            other => Err(format!("unknown sampling mode {other:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StationResult {
    pub station_id: String,
    pub true_count: u64,
    /// Mean estimate over trials.
    pub estimated_count: f64,
    /// Mean over trials; `None` when the true count is zero.
    pub signed_relative_error: Option<f64>,
    pub abs_relative_error: Option<f64>,
    /// Root mean squared error over trials.
    pub rmse: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentResult {
    pub scenario: String,
    pub per_station: Vec<StationResult>,
    pub avg_signed_relative_error: f64,
    pub avg_abs_relative_error: f64,
    pub avg_rmse: f64,
    pub params: PrivacyParams,
    pub seed: u64,
    pub trials: u32,
    pub mode: SamplingMode,
}

impl ExperimentResult {
    pub fn write_station_csv<W: Write>(&self, writer: W) -> Result<(), AccuracyError> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record([
            "station_id",
            "true_count",
            "estimated_count",
            "signed_relative_error",
            "abs_relative_error",
            "rmse",
        ])?;
        let opt = |v: Option<f64>| v.map(|x| format!("{x:.6}")).unwrap_or_default();
        for s in &self.per_station {
            w.write_record([
                s.station_id.clone(),
                s.true_count.to_string(),
                format!("{:.6}", s.estimated_count),
                opt(s.signed_relative_error),
                opt(s.abs_relative_error),
                format!("{:.6}", s.rmse),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Writes the summary table, one row per scenario.
pub fn write_summary_csv<W: Write>(
    results: &[ExperimentResult],
    writer: W,
) -> Result<(), AccuracyError> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record([
        "Scenario",
        "# Stations",
        "Avg Relative Error",
        "Avg Abs Relative Error",
        "Avg RMSE",
        "p",
        "q",
        "trials",
        "seed",
    ])?;
    for r in results {
        w.write_record([
            r.scenario.clone(),
            r.per_station.len().to_string(),
            format!("{:.6}", r.avg_signed_relative_error),
            format!("{:.6}", r.avg_abs_relative_error),
            format!("{:.6}", r.avg_rmse),
            r.params.p().to_string(),
            r.params.q().to_string(),
            r.trials.to_string(),
            r.seed.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Per-station yes tallies for one trial.
fn sample_tallies<R: Rng>(
    counts: &[u64],
    total: u64,
    params: &PrivacyParams,
    mode: SamplingMode,
    rng: &mut R,
) -> Result<Vec<f64>, AccuracyError> {
    let yes_true = params.prob_yes_given_true();
    let yes_false = params.prob_yes_given_false();
    match mode {
        SamplingMode::Expectation => Ok(counts
            .iter()
            .map(|&y| params.p() * y as f64 + yes_false * total as f64)
            .collect()),
        SamplingMode::Aggregate => Ok(counts
            .iter()
            .map(|&y| binomial(y, yes_true, rng) + binomial(total - y, yes_false, rng))
            .map(|v| v as f64)
            .collect()),
        SamplingMode::PerOwner => {
            let mut tallies = vec![0u64; counts.len()];
            let mut truth = vec![false; counts.len()];
            for (station, &count) in counts.iter().enumerate() {
                truth[station] = true;
                for _ in 0..count {
                    let answer = randomize_vector(&truth, params, rng)?;
                    for (t, bit) in tallies.iter_mut().zip(answer.bits()) {
                        *t += *bit as u64;
                    }
                }
                truth[station] = false;
            }
            Ok(tallies.into_iter().map(|v| v as f64).collect())
        }
    }
}

fn binomial<R: Rng>(n: u64, p: f64, rng: &mut R) -> u64 {
    if n == 0 || p <= 0.0 {
        return 0;
    }
    if p >= 1.0 {
        return n;
    }
    Binomial::new(n, p)
        .expect("probability checked above")
        .sample(rng)
}

pub fn run_accuracy_experiment(
    dataset: &StationDataset,
    params: &PrivacyParams,
    trials: u32,
    seed: u64,
    mode: SamplingMode,
) -> Result<ExperimentResult, AccuracyError> {
    if trials == 0 {
        return Err(AccuracyError::NoTrials);
    }
    let total = dataset.total_vehicles();
    if total == 0 {
        return Err(AccuracyError::NoVehicles);
    }
    let counts = dataset.counts();
    let mut rng = ChaCha20Rng::seed_from_u64(seed);

    let n = counts.len();
    let mut est_sum = vec![0.0; n];
    let mut sq_err = vec![0.0; n];
    let mut signed = vec![0.0; n];
    let mut magnitude = vec![0.0; n];
    for _ in 0..trials {
        let tallies = sample_tallies(&counts, total, params, mode, &mut rng)?;
        for (i, (&tally, &y)) in tallies.iter().zip(&counts).enumerate() {
            let est = estimate_from_real(tally, total, params)?;
            est_sum[i] += est;
            sq_err[i] += (est - y as f64).powi(2);
            if y > 0 {
                let re = relative_error(est, y as f64)?;
                signed[i] += re.signed;
                magnitude[i] += re.magnitude;
            }
        }
    }

    let t = trials as f64;
    let per_station: Vec<StationResult> = dataset
        .stations()
        .iter()
        .enumerate()
        .map(|(i, s)| StationResult {
            station_id: s.station_id.clone(),
            true_count: s.vehicle_count,
            estimated_count: est_sum[i] / t,
            signed_relative_error: (s.vehicle_count > 0).then(|| signed[i] / t),
            abs_relative_error: (s.vehicle_count > 0).then(|| magnitude[i] / t),
            rmse: (sq_err[i] / t).sqrt(),
        })
        .collect();

    let mean = |xs: Vec<f64>| {
        if xs.is_empty() {
            0.0
        } else {
            xs.iter().sum::<f64>() / xs.len() as f64
        }
    };
    Ok(ExperimentResult {
        scenario: dataset.scenario_label().to_string(),
        avg_signed_relative_error: mean(
            per_station
                .iter()
                .filter_map(|s| s.signed_relative_error)
                .collect(),
        ),
        avg_abs_relative_error: mean(
            per_station
                .iter()
                .filter_map(|s| s.abs_relative_error)
                .collect(),
        ),
        avg_rmse: mean(per_station.iter().map(|s| s.rmse).collect()),
        per_station,
        params: *params,
        seed,
        trials,
        mode,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{synth_dataset, Station, SynthSpec};

    fn small() -> StationDataset {
        let stations = [40u64, 3, 0, 17, 90]
            .iter()
            .enumerate()
            .map(|(i, &c)| Station {
                station_id: format!("s{i}"),
                vehicle_count: c,
            })
            .collect();
        StationDataset::new("small", stations).unwrap()
    }

    #[test]
    fn truthful_coin_is_exact() {
        let params = PrivacyParams::new(1.0, 0.3).unwrap();
        for mode in [
            SamplingMode::PerOwner,
            SamplingMode::Aggregate,
            SamplingMode::Expectation,
        ] {
            let r = run_accuracy_experiment(&small(), &params, 3, 5, mode).unwrap();
            assert_eq!(r.avg_rmse, 0.0);
            assert_eq!(r.avg_signed_relative_error, 0.0);
            assert!(r.per_station[2].signed_relative_error.is_none());
        }
    }

    #[test]
    fn expectation_injection_has_no_error() {
        let stations = (0..100)
            .map(|i| Station {
                station_id: i.to_string(),
                vehicle_count: 100,
            })
            .collect();
        let d = StationDataset::new("flat", stations).unwrap();
        let params = PrivacyParams::new(0.995, 0.999).unwrap();
        let r = run_accuracy_experiment(&d, &params, 1, 0, SamplingMode::Expectation).unwrap();
        for s in &r.per_station {
            assert!((s.estimated_count - 100.0).abs() < 1e-9);
        }
    }

    #[test]
    fn sampling_modes_agree_in_distribution() {
        let spec = SynthSpec {
            stations: 30,
            total_vehicles: 900,
            max_per_station: 120,
            min_per_station: 1,
        };
        let d = synth_dataset(&spec, "m", &mut ChaCha20Rng::seed_from_u64(4)).unwrap();
        let params = PrivacyParams::new(0.8, 0.4).unwrap();
        let a = run_accuracy_experiment(&d, &params, 400, 1, SamplingMode::PerOwner).unwrap();
        let b = run_accuracy_experiment(&d, &params, 400, 2, SamplingMode::Aggregate).unwrap();
        // Var(est) = [Y a(1-a) + (N-Y) b(1-b)] / p^2 per station.
        let (ya, yb) = (params.prob_yes_given_true(), params.prob_yes_given_false());
        for ((sa, sb), y) in a.per_station.iter().zip(&b.per_station).zip(d.counts()) {
            let var = (y as f64 * ya * (1.0 - ya) + (900 - y) as f64 * yb * (1.0 - yb)) / 0.64;
            let sd_mean = (var / 400.0).sqrt();
            assert!((sa.estimated_count - y as f64).abs() < 5.0 * sd_mean);
            assert!((sb.estimated_count - y as f64).abs() < 5.0 * sd_mean);
            assert!(
                (sa.rmse / var.sqrt() - 1.0).abs() < 0.25,
                "{} vs {}",
                sa.rmse,
                var.sqrt()
            );
            assert!((sb.rmse / var.sqrt() - 1.0).abs() < 0.25);
        }
    }

    #[test]
    fn identical_seeds_give_identical_csv() {
        let params = PrivacyParams::new(0.9, 0.7).unwrap();
        let csv = |seed| {
            let r = run_accuracy_experiment(&small(), &params, 2, seed, SamplingMode::PerOwner)
                .unwrap();
            let mut out = Vec::new();
            r.write_station_csv(&mut out).unwrap();
            write_summary_csv(&[r], &mut out).unwrap();
            out
        };
        assert_eq!(csv(9), csv(9));
        assert_ne!(csv(9), csv(10));
    }

    #[test]
    fn zero_trials_rejected() {
        let params = PrivacyParams::new(0.9, 0.7).unwrap();
        assert!(matches!(
            run_accuracy_experiment(&small(), &params, 0, 0, SamplingMode::Aggregate),
            Err(AccuracyError::NoTrials)
        ));
    }
}
