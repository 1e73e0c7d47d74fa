//! End-to-end runs: many owners answer one query, the servers reconstruct
//! the table, and the analyst decodes the written vectors.
//!
//! Both backends derive everything about owner `i` from `(seed, i)`, so the
//! same seed produces the same writes whether the shares go through
//! in-process epoch states or real servers.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::thread;
use std::time::Duration;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rrstream_core::epoch::{EpochError, PeerIntermediate};
use rrstream_core::rr::{PrivatizedVector, RrError};
use rrstream_core::{
    AesCtrPrg, Dpf, EpochState, OwnerId, PrivacyParams, TableGeometry, WriteTable,
};
use rrstream_net::messages::PayloadError;
use rrstream_net::{prepare_write, wait_result, ClientOptions, NetError, QueryAnnounce};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum E2eError {
    #[error(transparent)]
    Net(#[from] NetError),
    #[error(transparent)]
    Epoch(#[from] EpochError),
    #[error(transparent)]
    Rr(#[from] RrError),
    #[error(transparent)]
    Query(#[from] PayloadError),
    #[error("servers disagree on the table for epoch {0}")]
    Divergent(u64),
    #[error("row {row} of epoch {epoch} does not decode: {reason}")]
    Undecodable {
        epoch: u64,
        row: u32,
        reason: String,
    },
    #[error("no collision-free seed in [{0}, {1})")]
    NoCollisionFreeSeed(u64, u64),
}

#[derive(Debug, Clone)]
pub struct E2eConfig {
    pub clients: usize,
    pub attributes: usize,
    pub query: QueryAnnounce,
    pub parties: usize,
    pub seed: u64,
}

impl E2eConfig {
    pub fn new(
        clients: usize,
        rows: u32,
        attributes: usize,
        params: PrivacyParams,
        parties: usize,
        seed: u64,
    ) -> Self {
        let query = QueryAnnounce {
            query_id: seed,
            attribute_labels: (0..attributes).map(|i| format!("S{:04}", i + 1)).collect(),
            rows,
            message_bytes: PrivatizedVector::required_message_bytes(attributes) as u16,
            p: params.p(),
            q: params.q(),
            epoch_ms: 1000,
            analyst_signature: Vec::new(),
        };
        Self {
            clients,
            attributes,
            query,
            parties,
            seed,
        }
    }
}

/// Everything owner `index` does, derived from `(seed, index)`.
pub struct OwnerPlan {
    pub owner: OwnerId,
    pub truth: Vec<bool>,
    pub rng: ChaCha20Rng,
}

pub fn owner_plan(seed: u64, index: usize, attributes: usize) -> OwnerPlan {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    rng.set_stream(index as u64 + 1);
    let mut truth = vec![false; attributes];
    truth[rng.gen_range(0..attributes)] = true;
    let mut credential = seed.to_le_bytes().to_vec();
    credential.extend_from_slice(&(index as u64).to_le_bytes());
    OwnerPlan {
        owner: OwnerId::fingerprint(&credential),
        truth,
        rng,
    }
}

/// Multiset of decoded vectors, as sorted bit strings.
pub type WriteMultiset = BTreeMap<Vec<bool>, usize>;

#[derive(Debug, Clone)]
pub struct E2eOutcome {
    /// Finalized table of each epoch that received writes, as seen by
    /// server 0.
    pub tables: BTreeMap<u64, WriteTable>,
    pub decoded: WriteMultiset,
    /// What the owners actually sent.
    pub sent: WriteMultiset,
    /// Rows written by more than one owner in the same epoch.
    pub collisions: usize,
}

fn decode_tables<'a>(
    tables: impl IntoIterator<Item = &'a WriteTable>,
    attributes: usize,
) -> Result<WriteMultiset, E2eError> {
    let mut out = WriteMultiset::new();
    for t in tables {
        for (row, cell) in t.nonzero_rows() {
            let v = PrivatizedVector::from_message(cell, attributes).map_err(|e| {
                E2eError::Undecodable {
                    epoch: t.epoch_id,
                    row,
                    reason: e.to_string(),
                }
            })?;
            *out.entry(v.bits().to_vec()).or_default() += 1;
        }
    }
    Ok(out)
}

fn count_collisions(rows: impl IntoIterator<Item = (u64, u32)>) -> usize {
    let mut seen = BTreeSet::new();
    rows.into_iter().filter(|r| !seen.insert(*r)).count()
}

/// All shares go into `parties` in-memory epoch states for one epoch.
pub fn run_in_process(config: &E2eConfig) -> Result<E2eOutcome, E2eError> {
    let geometry = config.query.geometry()?;
    let dpf = Dpf::new(AesCtrPrg);
    let mut states: Vec<EpochState> = (0..config.parties)
        .map(|j| EpochState::new(0, geometry, j as u8, config.parties))
        .collect();
    let mut sent = WriteMultiset::new();
    let mut rows = Vec::new();
    for i in 0..config.clients {
        let mut plan = owner_plan(config.seed, i, config.attributes);
        let write = prepare_write(&config.query, &plan.truth, config.parties, &mut plan.rng)?;
        for (state, key) in states.iter_mut().zip(write.keyset.keys()) {
            state.submit_share(plan.owner, key, &dpf)?;
        }
        *sent.entry(write.privatized.bits().to_vec()).or_default() += 1;
        rows.push((0, write.target_row));
    }
    let snapshots = states
        .iter_mut()
        .map(|s| s.close())
        .collect::<Result<Vec<_>, _>>()?;
    let mut tables = Vec::new();
    for (j, state) in states.iter_mut().enumerate() {
        let peers: Vec<PeerIntermediate> = snapshots
            .iter()
            .enumerate()
            .filter(|(k, _)| *k != j)
            .map(|(k, t)| PeerIntermediate {
                server_id: k as u8,
                table: t.clone(),
            })
            .collect();
        tables.push(state.finalize(&peers)?);
    }
    if tables.windows(2).any(|w| w[0] != w[1]) {
        return Err(E2eError::Divergent(0));
    }
    let table = tables.swap_remove(0);
    Ok(E2eOutcome {
        decoded: decode_tables([&table], config.attributes)?,
        tables: BTreeMap::from([(0, table)]),
        sent,
        collisions: count_collisions(rows),
    })
}

/// Submits through running servers, `concurrency` owners at a time, and
/// collects every touched epoch from every server.
pub fn run_live(
    config: &E2eConfig,
    servers: &[String],
    concurrency: usize,
    result_timeout: Duration,
) -> Result<E2eOutcome, E2eError> {
    let geometry: TableGeometry = config.query.geometry()?;
    let next = AtomicUsize::new(0);
    let results = Mutex::new(Vec::new());
    let opts = ClientOptions::default();
    thread::scope(|scope| {
        for _ in 0..concurrency.max(1) {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                if i >= config.clients {
                    break;
                }
                let mut plan = owner_plan(config.seed, i, config.attributes);
                let outcome =
                    prepare_write(&config.query, &plan.truth, servers.len(), &mut plan.rng)
                        .and_then(|w| {
                            let epoch = rrstream_net::client::submit_keys(
                                w.keyset.keys(),
                                &plan.owner,
                                servers,
                                &opts,
                            )?;
                            Ok((epoch, w))
                        });
                results.lock().unwrap().push(outcome);
            });
        }
    });

    let mut sent = WriteMultiset::new();
    let mut rows = Vec::new();
    let mut epochs = BTreeSet::new();
    for r in results.into_inner().unwrap() {
        let (epoch, w) = r?;
        *sent.entry(w.privatized.bits().to_vec()).or_default() += 1;
        rows.push((epoch, w.target_row));
        epochs.insert(epoch);
    }

    let mut tables = BTreeMap::new();
    for epoch in epochs {
        let per_server = servers
            .iter()
            .map(|s| wait_result(s, epoch, &geometry, result_timeout))
            .collect::<Result<Vec<_>, _>>()?;
        if per_server.windows(2).any(|w| w[0].cells != w[1].cells) {
            return Err(E2eError::Divergent(epoch));
        }
        tables.insert(epoch, per_server.into_iter().next().unwrap());
    }
    Ok(E2eOutcome {
        decoded: decode_tables(tables.values(), config.attributes)?,
        tables,
        sent,
        collisions: count_collisions(rows),
    })
}

/// The rows owners `0..clients` would pick under `seed`, without keygen.
pub fn planned_rows(config: &E2eConfig, seed: u64) -> Result<Vec<u32>, E2eError> {
    let params = config.query.params()?;
    (0..config.clients)
        .map(|i| {
            let mut plan = owner_plan(seed, i, config.attributes);
            rrstream_core::rr::randomize_vector(&plan.truth, &params, &mut plan.rng)?;
            Ok(rrstream_core::epoch::pick_slot(
                config.query.rows,
                &mut plan.rng,
            )?)
        })
        .collect()
}

/// First seed in `[start, start + span)` under which no two owners pick the
/// same row.
pub fn find_collision_free_seed(
    config: &E2eConfig,
    start: u64,
    span: u64,
) -> Result<u64, E2eError> {
    for seed in start..start.saturating_add(span) {
        let rows = planned_rows(config, seed)?;
        let distinct: BTreeSet<u32> = rows.iter().copied().collect();
        if distinct.len() == rows.len() {
            return Ok(seed);
        }
    }
    Err(E2eError::NoCollisionFreeSeed(
        start,
        start.saturating_add(span),
    ))
}
