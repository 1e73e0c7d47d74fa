//! In-process write throughput.
//!
//! One write is the full path an accepted submission takes: key generation
//! on the client, then evaluation and accumulation at every server.

use std::io::Write;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rrstream_core::dpf::DpfError;
use rrstream_core::epoch::EpochError;
use rrstream_core::{AesCtrPrg, Dpf, EpochState, OwnerId, TableGeometry};
use thiserror::Error;

/// Message size for throughput runs unless overridden.
pub const DEFAULT_MESSAGE_BYTES: u16 = 160;

#[derive(Debug, Error)]
pub enum BenchError {
    #[error(transparent)]
    Dpf(#[from] DpfError),
    #[error(transparent)]
    Epoch(#[from] EpochError),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy)]
pub struct BenchConfig {
    pub rows: u32,
    pub parties: usize,
    /// Distinct writers per epoch.
    pub clients: usize,
    pub duration: Duration,
    pub message_bytes: u16,
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BenchReport {
    pub rows: u32,
    pub parties: usize,
    pub message_bytes: u16,
    pub writes: u64,
    pub elapsed: Duration,
}

impl BenchReport {
    pub fn writes_per_sec(&self) -> f64 {
        if self.writes == 0 {
            return 0.0;
        }
        self.writes as f64 / self.elapsed.as_secs_f64()
    }

    pub fn per_write(&self) -> Option<Duration> {
        (self.writes > 0).then(|| self.elapsed / self.writes as u32)
    }
}

/// Runs epochs of `clients` writes each until `duration` has passed.
pub fn run_throughput_bench(config: &BenchConfig) -> Result<BenchReport, BenchError> {
    let geometry = TableGeometry::new(config.rows, config.message_bytes)?;
    let dpf = Dpf::new(AesCtrPrg);
    let mut rng = ChaCha20Rng::seed_from_u64(config.seed);
    let mut writes = 0u64;
    let start = Instant::now();
    if config.clients == 0 {
        return Ok(BenchReport {
            rows: config.rows,
            parties: config.parties,
            message_bytes: config.message_bytes,
            writes: 0,
            elapsed: start.elapsed(),
        });
    }
    let mut message = vec![0u8; geometry.cell_len()];
    let mut epoch = 0u64;
    while start.elapsed() < config.duration {
        let mut states: Vec<EpochState> = (0..config.parties)
            .map(|j| EpochState::new(epoch, geometry, j as u8, config.parties))
            .collect();
        for c in 0..config.clients {
            rng.fill(&mut message[..]);
            message[0] |= 1;
            let row = rng.gen_range(0..config.rows);
            let keys = dpf.keygen(&geometry, row, &message, config.parties, &mut rng)?;
            let mut owner = [0u8; 32];
            owner[..8].copy_from_slice(&(c as u64).to_le_bytes());
            for (state, key) in states.iter_mut().zip(keys.keys()) {
                state.submit_share(OwnerId(owner), key, &dpf)?;
            }
            writes += 1;
            if start.elapsed() >= config.duration {
                break;
            }
        }
        epoch += 1;
    }
    Ok(BenchReport {
        rows: config.rows,
        parties: config.parties,
        message_bytes: config.message_bytes,
        writes,
        elapsed: start.elapsed(),
    })
}

/// Median per-write time at each row count, over `reps` runs.
pub fn scaling_curve(
    base: &BenchConfig,
    rows: &[u32],
    reps: usize,
) -> Result<Vec<(u32, Duration, BenchReport)>, BenchError> {
    let mut out = Vec::new();
    for &r in rows {
        let mut times = Vec::new();
        let mut last = None;
        for rep in 0..reps.max(1) {
            let report = run_throughput_bench(&BenchConfig {
                rows: r,
                seed: base.seed + rep as u64,
                ..*base
            })?;
            if let Some(t) = report.per_write() {
                times.push(t);
            }
            last = Some(report);
        }
        times.sort();
        let median = times.get(times.len() / 2).copied().unwrap_or_default();
        out.push((r, median, last.unwrap()));
    }
    Ok(out)
}

/// `cost(R_{i+1}) / cost(R_i)` for consecutive points.
pub fn doubling_ratios(curve: &[(u32, Duration, BenchReport)]) -> Vec<f64> {
    curve
        .windows(2)
        .map(|w| w[1].1.as_secs_f64() / w[0].1.as_secs_f64())
        .collect()
}

pub fn write_csv<W: Write>(
    curve: &[(u32, Duration, BenchReport)],
    writer: W,
) -> Result<(), BenchError> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record([
        "rows",
        "parties",
        "message_bytes",
        "writes",
        "writes_per_sec",
        "median_per_write_us",
    ])?;
    for (rows, median, report) in curve {
        w.write_record([
            rows.to_string(),
            report.parties.to_string(),
            report.message_bytes.to_string(),
            report.writes.to_string(),
            format!("{:.2}", report.writes_per_sec()),
            format!("{:.3}", median.as_secs_f64() * 1e6),
        ])?;
    }
    w.flush()?;
    Ok(())
}
