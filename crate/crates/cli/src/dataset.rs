//! Station count datasets: synthetic generation and CSV exchange.

use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("infeasible bounds: {stations} stations in [{min}, {max}] cannot sum to {total}")]
    Infeasible {
        stations: usize,
        total: u64,
        min: u64,
        max: u64,
    },
    #[error("a dataset needs at least one station")]
    NoStations,
    #[error("empty file")]
    EmptyFile,
    #[error("missing header: expected \"station_id,count\", found {0:?}")]
    MissingHeader(String),
    #[error("line {line}: {reason}")]
    BadRow { line: u64, reason: String },
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Station {
    pub station_id: String,
    #[serde(rename = "count")]
    pub vehicle_count: u64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StationDataset {
    stations: Vec<Station>,
    total_vehicles: u64,
    scenario_label: String,
}

impl StationDataset {
    pub fn new(
        scenario_label: impl Into<String>,
        stations: Vec<Station>,
    ) -> Result<Self, DatasetError> {
        if stations.is_empty() {
            return Err(DatasetError::NoStations);
        }
        let total_vehicles = stations.iter().map(|s| s.vehicle_count).sum();
        Ok(Self {
            stations,
            total_vehicles,
            scenario_label: scenario_label.into(),
        })
    }

    pub fn stations(&self) -> &[Station] {
        &self.stations
    }

    pub fn counts(&self) -> Vec<u64> {
        self.stations.iter().map(|s| s.vehicle_count).collect()
    }

    pub fn total_vehicles(&self) -> u64 {
        self.total_vehicles
    }

    pub fn scenario_label(&self) -> &str {
        &self.scenario_label
    }

    pub fn min_count(&self) -> u64 {
        self.stations
            .iter()
            .map(|s| s.vehicle_count)
            .min()
            .unwrap_or(0)
    }

    pub fn max_count(&self) -> u64 {
        self.stations
            .iter()
            .map(|s| s.vehicle_count)
            .max()
            .unwrap_or(0)
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<(), DatasetError> {
        let mut w = csv::Writer::from_writer(writer);
        for s in &self.stations {
            w.serialize(s)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<(), DatasetError> {
        self.write_csv(File::create(path)?)
    }
}

/// Target shape of a synthetic dataset.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SynthSpec {
    pub stations: usize,
    pub total_vehicles: u64,
    pub max_per_station: u64,
    pub min_per_station: u64,
}

/// Station count, vehicle total and extremes of the 5pm district extract.
pub const RUSH_HOUR: SynthSpec = SynthSpec {
    stations: 1157,
    total_vehicles: 222_704,
    max_per_station: 860,
    min_per_station: 1,
};

/// The 3am scenario. Only the station count is known; total and maximum
/// are assumed to be 10% of the rush-hour values.
pub const OFF_PEAK: SynthSpec = SynthSpec {
    stations: 1017,
    total_vehicles: 22_270,
    max_per_station: 86,
    min_per_station: 1,
};

/// Power-law exponent of the station weight distribution.
const SKEW: f64 = 1.5;

/// Draws skewed station counts that sum to `total_vehicles` exactly, stay
/// within `[min, max]`, and reach both extremes whenever the total allows.
///
/// Raw weights follow a power law `x^-1.5` truncated to
/// `[max(min, mean/4), max]`; they are scaled by bisection on a common
/// factor, clamped, and then nudged one vehicle at a time to hit the total.
pub fn synth_dataset<R: Rng + ?Sized>(
    spec: &SynthSpec,
    label: &str,
    rng: &mut R,
) -> Result<StationDataset, DatasetError> {
    let SynthSpec {
        stations: n,
        total_vehicles: total,
        max_per_station: max,
        min_per_station: min,
    } = *spec;
    if n == 0 {
        return Err(DatasetError::NoStations);
    }
    let infeasible = || DatasetError::Infeasible {
        stations: n,
        total,
        min,
        max,
    };
    if min > max || (n as u64).saturating_mul(min) > total || (n as u64).saturating_mul(max) < total
    {
        return Err(infeasible());
    }
    let named = |counts: Vec<u64>| {
        let stations = counts
            .into_iter()
            .enumerate()
            .map(|(i, c)| Station {
                station_id: format!("S{:04}", i + 1),
                vehicle_count: c,
            })
            .collect();
        StationDataset::new(label, stations)
    };
    if n == 1 {
        return named(vec![total]);
    }

    let mean = total as f64 / n as f64;
    let lo = (min.max(1) as f64).max(0.25 * mean).min(max as f64);
    let hi = (max as f64).max(lo);
    let weights: Vec<f64> = (0..n)
        .map(|_| truncated_power_law(lo, hi, SKEW, rng))
        .collect();

    let scaled = |lambda: f64| -> Vec<u64> {
        weights
            .iter()
            .map(|w| ((lambda * w).floor() as u64).clamp(min, max))
            .collect()
    };
    let (mut a, mut b) = (0.0f64, 1.0f64);
    while scaled(b).iter().sum::<u64>() < total && b < 1e12 {
        b *= 2.0;
    }
    for _ in 0..100 {
        let mid = 0.5 * (a + b);
        if scaled(mid).iter().sum::<u64>() <= total {
            a = mid;
        } else {
            b = mid;
        }
    }
    let mut counts = scaled(a);

    // Pin the extremes where the remaining stations can still absorb the rest.
    let rest = (n - 2) as u64;
    let mut pinned = vec![false; n];
    let argmin = (0..n)
        .min_by(|&i, &j| weights[i].total_cmp(&weights[j]))
        .unwrap();
    let argmax = (0..n)
        .max_by(|&i, &j| weights[i].total_cmp(&weights[j]))
        .unwrap();
    if argmin != argmax {
        let fits = total
            .checked_sub(min + max)
            .is_some_and(|r| rest * min <= r && r <= rest * max);
        if fits {
            counts[argmin] = min;
            counts[argmax] = max;
            pinned[argmin] = true;
            pinned[argmax] = true;
        }
    }

    let mut order: Vec<usize> = (0..n).filter(|i| !pinned[*i]).collect();
    let mut sum: u64 = counts.iter().sum();
    while sum != total {
        order.shuffle(rng);
        let before = sum;
        for &i in &order {
            if sum < total && counts[i] < max {
                counts[i] += 1;
                sum += 1;
            } else if sum > total && counts[i] > min {
                counts[i] -= 1;
                sum -= 1;
            }
            if sum == total {
                break;
            }
        }
        if sum == before {
            return Err(infeasible());
        }
    }
    named(counts)
}

fn truncated_power_law<R: Rng + ?Sized>(lo: f64, hi: f64, a: f64, rng: &mut R) -> f64 {
    if hi <= lo {
        return lo;
    }
    // Inverse CDF of density proportional to x^-a on [lo, hi], a != 1.
    let u: f64 = rng.gen();
    let e = 1.0 - a;
    (lo.powf(e) + u * (hi.powf(e) - lo.powf(e))).powf(1.0 / e)
}

/// Parses a `station_id,count` CSV.
pub fn ingest_reader<R: Read>(label: &str, reader: R) -> Result<StationDataset, DatasetError> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .from_reader(reader);
    let mut records = rdr.records();
    let header = match records.next() {
        None => return Err(DatasetError::EmptyFile),
        Some(r) => r?,
    };
    let fields: Vec<&str> = header.iter().map(str::trim).collect();
    if fields != ["station_id", "count"] {
        return Err(DatasetError::MissingHeader(fields.join(",")));
    }
    let mut stations = Vec::new();
    for record in records {
        let record = record?;
        let line = record.position().map(|p| p.line()).unwrap_or(0);
        let bad = |reason: String| DatasetError::BadRow { line, reason };
        if record.len() != 2 {
            return Err(bad(format!("expected 2 fields, found {}", record.len())));
        }
        let id = record[0].trim();
        if id.is_empty() {
            return Err(bad("empty station id".into()));
        }
        let raw = record[1].trim();
        let count: u64 = raw
            .parse()
            .map_err(|_| bad(format!("count {raw:?} is not a nonnegative integer")))?;
        stations.push(Station {
            station_id: id.to_string(),
            vehicle_count: count,
        });
    }
    if stations.is_empty() {
        return Err(DatasetError::NoStations);
    }
    StationDataset::new(label, stations)
}

pub fn ingest_csv(path: &Path) -> Result<StationDataset, DatasetError> {
    let label = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "ingested".into());
    ingest_reader(&label, File::open(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    #[test]
    fn rush_hour_matches_target_moments() {
        let mut rng = ChaCha20Rng::seed_from_u64(1);
        let d = synth_dataset(&RUSH_HOUR, "rush", &mut rng).unwrap();
        assert_eq!(d.stations().len(), 1157);
        assert_eq!(d.total_vehicles(), 222_704);
        assert_eq!(d.min_count(), 1);
        assert_eq!(d.max_count(), 860);
        // skewed: median below mean
        let mut c = d.counts();
        c.sort();
        assert!((c[c.len() / 2] as f64) < 222_704.0 / 1157.0);
    }

    #[test]
    fn single_station_and_infeasible() {
        let mut rng = ChaCha20Rng::seed_from_u64(1);
        let spec = SynthSpec {
            stations: 1,
            total_vehicles: 17,
            max_per_station: 100,
            min_per_station: 0,
        };
        assert_eq!(
            synth_dataset(&spec, "one", &mut rng).unwrap().counts(),
            vec![17]
        );
        let bad = SynthSpec {
            stations: 3,
            total_vehicles: 10,
            max_per_station: 3,
            min_per_station: 1,
        };
        assert!(matches!(
            synth_dataset(&bad, "x", &mut rng),
            Err(DatasetError::Infeasible { .. })
        ));
    }

    #[test]
    fn csv_round_trip_and_errors() {
        let mut rng = ChaCha20Rng::seed_from_u64(3);
        let d = synth_dataset(&OFF_PEAK, "off", &mut rng).unwrap();
        let mut buf = Vec::new();
        d.write_csv(&mut buf).unwrap();
        assert_eq!(ingest_reader("off", &buf[..]).unwrap(), d);

        let two = "station_id,count\nA,3\nB,0\n";
        assert_eq!(
            ingest_reader("t", two.as_bytes()).unwrap().counts(),
            vec![3, 0]
        );

        let neg = "station_id,count\nA,1\nB,2\nC,3\nD,-4\n";
        match ingest_reader("t", neg.as_bytes()) {
            Err(DatasetError::BadRow { line, .. }) => assert_eq!(line, 5),
            other => panic!("{other:?}"),
        }
        assert!(matches!(
            ingest_reader("t", "".as_bytes()),
            Err(DatasetError::EmptyFile)
        ));
        assert!(matches!(
            ingest_reader("t", "id,n\nA,1\n".as_bytes()),
            Err(DatasetError::MissingHeader(_))
        ));
        assert!(matches!(
            ingest_reader("t", "station_id,count\nA,x\n".as_bytes()),
            Err(DatasetError::BadRow { line: 2, .. })
        ));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn sums_exactly_within_bounds(n in 1usize..200, min in 0u64..5, spread in 1u64..300, frac in 0.0f64..=1.0, seed in any::<u64>()) {
            let max = min + spread;
            let lo = n as u64 * min;
            let hi = n as u64 * max;
            let total = lo + ((hi - lo) as f64 * frac) as u64;
            let spec = SynthSpec { stations: n, total_vehicles: total, max_per_station: max, min_per_station: min };
            let d = synth_dataset(&spec, "p", &mut ChaCha20Rng::seed_from_u64(seed)).unwrap();
            prop_assert_eq!(d.total_vehicles(), total);
            prop_assert_eq!(d.counts().iter().sum::<u64>(), total);
            prop_assert!(d.counts().iter().all(|c| (min..=max).contains(c)));
        }
    }
}
