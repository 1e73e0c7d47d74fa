//! Per-epoch aggregation state held by one server.
//!
//! Each server XORs the full evaluation of every share it receives into an
//! accumulator. At epoch close the accumulator is snapshotted and exchanged
//! with every peer; XORing all servers' snapshots yields the write table.

use std::collections::{BTreeSet, HashMap};
use std::fmt;
use std::time::Duration;

use rand::Rng;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::dpf::{
    nonzero_rows, xor_accumulate, Dpf, DpfError, DpfKey, KeygenRequest, TableGeometry,
};
use crate::prg::Prg;

/// Lower bound on the epoch length.
pub const MIN_EPOCH: Duration = Duration::from_millis(100);

/// How long a closed epoch waits for peer intermediates.
pub const DEFAULT_PEER_TIMEOUT: Duration = Duration::from_secs(5);

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum EpochError {
    #[error("duplicate response from {0} in epoch {1}")]
    DuplicateResponse(OwnerId, u64),
    #[error("share geometry {got:?} does not match table geometry {expected:?}")]
    GeometryMismatch {
        expected: TableGeometry,
        got: TableGeometry,
    },
    #[error("share is for party {got}, this is server {expected}")]
    WrongParty { expected: u8, got: u8 },
    #[error("epoch {0} is not open")]
    NotOpen(u64),
    #[error("epoch {0} is not closed")]
    NotClosed(u64),
    #[error("epoch {epoch}: no intermediate from servers {missing:?}")]
    MissingPeers { epoch: u64, missing: Vec<u8> },
    #[error("epoch {epoch}: protocol error: {reason}")]
    Protocol { epoch: u64, reason: String },
    #[error("{0} never contributed to epoch {1}")]
    NotAccumulated(OwnerId, u64),
    #[error("share from {0} was already excised from epoch {1}")]
    AlreadyExcised(OwnerId, u64),
    #[error("key does not match the share accumulated for {0}")]
    KeyMismatch(OwnerId),
    #[error("anonymous writes need at least 2 rows, got {0}")]
    TooFewRows(u32),
    #[error("invalid server configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Dpf(#[from] DpfError),
}

pub type Result<T> = std::result::Result<T, EpochError>;

/// Opaque 32-byte data-owner identity (a certificate fingerprint).
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct OwnerId(pub [u8; 32]);

impl OwnerId {
    /// Fingerprint of an arbitrary credential blob.
    pub fn fingerprint(credential: &[u8]) -> Self {
        Self(Sha256::digest(credential).into())
    }

    pub fn as_bytes(&self) -> &[u8; 32] {
        &self.0
    }
}

impl fmt::Debug for OwnerId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "OwnerId({self})")
    }
}

impl fmt::Display for OwnerId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for b in &self.0[..6] {
            write!(f, "{b:02x}")?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EpochStatus {
    Open,
    Closed,
    Finalized,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Ack {
    pub epoch_id: u64,
    pub owner: OwnerId,
}

#[derive(Debug, Clone)]
struct Contribution {
    key_digest: [u8; 32],
    excised: bool,
}

fn key_digest(key: &DpfKey) -> [u8; 32] {
    Sha256::digest(key.encode()).into()
}

/// A peer's accumulator snapshot.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PeerIntermediate {
    pub server_id: u8,
    pub table: Vec<u8>,
}

#[derive(Debug, Clone)]
pub struct EpochState {
    epoch_id: u64,
    geometry: TableGeometry,
    server_id: u8,
    parties: usize,
    accumulator: Vec<u8>,
    contributors: HashMap<OwnerId, Contribution>,
    status: EpochStatus,
    abort_reason: Option<String>,
}

impl EpochState {
    pub fn new(epoch_id: u64, geometry: TableGeometry, server_id: u8, parties: usize) -> Self {
        Self {
            epoch_id,
            geometry,
            server_id,
            parties,
            accumulator: geometry.zero_table(),
            contributors: HashMap::new(),
            status: EpochStatus::Open,
            abort_reason: None,
        }
    }

    pub fn epoch_id(&self) -> u64 {
        self.epoch_id
    }

    pub fn geometry(&self) -> &TableGeometry {
        &self.geometry
    }

    pub fn server_id(&self) -> u8 {
        self.server_id
    }

    pub fn parties(&self) -> usize {
        self.parties
    }

    pub fn status(&self) -> EpochStatus {
        self.status
    }

    pub fn accumulator(&self) -> &[u8] {
        &self.accumulator
    }

    /// Set when the epoch was finalized without a table.
    pub fn abort_reason(&self) -> Option<&str> {
        self.abort_reason.as_deref()
    }

    /// Owners whose share is currently part of the accumulator.
    pub fn active_contributors(&self) -> BTreeSet<OwnerId> {
        self.contributors
            .iter()
            .filter(|(_, c)| !c.excised)
            .map(|(o, _)| *o)
            .collect()
    }

    pub fn has_contributed(&self, owner: &OwnerId) -> bool {
        self.contributors.contains_key(owner)
    }

    /// Validates a share without applying it.
    pub fn check_share(&self, owner: &OwnerId, key: &DpfKey) -> Result<()> {
        if self.status != EpochStatus::Open {
            return Err(EpochError::NotOpen(self.epoch_id));
        }
        if key.geometry() != &self.geometry {
            return Err(EpochError::GeometryMismatch {
                expected: self.geometry,
                got: *key.geometry(),
            });
        }
        if key.party_index() != self.server_id {
            return Err(EpochError::WrongParty {
                expected: self.server_id,
                got: key.party_index(),
            });
        }
        if self.contributors.contains_key(owner) {
            return Err(EpochError::DuplicateResponse(*owner, self.epoch_id));
        }
        Ok(())
    }

    /// Accepts one owner's share: `accumulator ^= eval_full(key)`.
    pub fn submit_share<P: Prg>(
        &mut self,
        owner: OwnerId,
        key: &DpfKey,
        dpf: &Dpf<P>,
    ) -> Result<Ack> {
        self.check_share(&owner, key)?;
        dpf.accumulate(&mut self.accumulator, key)?;
        self.contributors.insert(
            owner,
            Contribution {
                key_digest: key_digest(key),
                excised: false,
            },
        );
        Ok(Ack {
            epoch_id: self.epoch_id,
            owner,
        })
    }

    /// Removes a previously accumulated share by XORing it back out.
    pub fn excise<P: Prg>(&mut self, owner: &OwnerId, key: &DpfKey, dpf: &Dpf<P>) -> Result<()> {
        if self.status != EpochStatus::Open {
            return Err(EpochError::NotOpen(self.epoch_id));
        }
        let epoch = self.epoch_id;
        let entry = self
            .contributors
            .get_mut(owner)
            .ok_or(EpochError::NotAccumulated(*owner, epoch))?;
        if entry.excised {
            return Err(EpochError::AlreadyExcised(*owner, epoch));
        }
        if entry.key_digest != key_digest(key) {
            return Err(EpochError::KeyMismatch(*owner));
        }
        dpf.accumulate(&mut self.accumulator, key)?;
        entry.excised = true;
        Ok(())
    }

    /// Ends intake and returns the intermediate result for broadcast.
    pub fn close(&mut self) -> Result<Vec<u8>> {
        if self.status != EpochStatus::Open {
            return Err(EpochError::NotOpen(self.epoch_id));
        }
        self.status = EpochStatus::Closed;
        Ok(self.accumulator.clone())
    }

    /// Combines the own snapshot with exactly one intermediate from every
    /// peer. Any failure aborts the epoch: it is marked finalized with the
    /// reason recorded, and no partial table is produced.
    pub fn finalize(&mut self, peers: &[PeerIntermediate]) -> Result<WriteTable> {
        if self.status != EpochStatus::Closed {
            return Err(EpochError::NotClosed(self.epoch_id));
        }
        match self.combine_peers(peers) {
            Ok(cells) => {
                self.status = EpochStatus::Finalized;
                Ok(WriteTable {
                    epoch_id: self.epoch_id,
                    geometry: self.geometry,
                    cells,
                })
            }
            Err(e) => {
                self.abort(e.to_string());
                Err(e)
            }
        }
    }

    /// Marks the epoch finalized without a table.
    pub fn abort(&mut self, reason: impl Into<String>) {
        self.status = EpochStatus::Finalized;
        self.abort_reason = Some(reason.into());
    }

    fn combine_peers(&self, peers: &[PeerIntermediate]) -> Result<Vec<u8>> {
        let epoch = self.epoch_id;
        let protocol = |reason: String| EpochError::Protocol { epoch, reason };
        let mut seen = BTreeSet::new();
        let mut cells = self.accumulator.clone();
        for peer in peers {
            if peer.server_id == self.server_id || peer.server_id as usize >= self.parties {
                return Err(protocol(format!("unexpected server id {}", peer.server_id)));
            }
            if !seen.insert(peer.server_id) {
                return Err(protocol(format!(
                    "two intermediates from server {}",
                    peer.server_id
                )));
            }
            xor_accumulate(&mut cells, &peer.table).map_err(|_| {
                protocol(format!(
                    "intermediate from server {} has {} bytes, expected {}",
                    peer.server_id,
                    peer.table.len(),
                    cells.len()
                ))
            })?;
        }
        let missing: Vec<u8> = (0..self.parties as u8)
            .filter(|id| *id != self.server_id && !seen.contains(id))
            .collect();
        if !missing.is_empty() {
            return Err(EpochError::MissingPeers { epoch, missing });
        }
        Ok(cells)
    }
}

/// The reconstructed table for one epoch.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WriteTable {
    pub epoch_id: u64,
    pub geometry: TableGeometry,
    pub cells: Vec<u8>,
}

impl WriteTable {
    pub fn row(&self, row: u32) -> &[u8] {
        &self.cells[self.geometry.cell_range(row)]
    }

    pub fn nonzero_rows(&self) -> Vec<(u32, &[u8])> {
        nonzero_rows(&self.geometry, &self.cells)
    }
}

/// Static configuration of one aggregation server.
#[derive(Debug, Clone)]
pub struct ServerConfig {
    pub server_id: u8,
    /// Every server's address, indexed by server id (including this one).
    pub servers: Vec<String>,
    pub epoch_duration: Duration,
    pub peer_timeout: Duration,
    pub geometry: TableGeometry,
}

impl ServerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.servers.len() < 2 {
            return Err(EpochError::Config(format!(
                "need at least 2 servers, got {}",
                self.servers.len()
            )));
        }
        if self.servers.len() > 256 {
            return Err(EpochError::Config("at most 256 servers".into()));
        }
        if self.server_id as usize >= self.servers.len() {
            return Err(EpochError::Config(format!(
                "server id {} outside [0, {})",
                self.server_id,
                self.servers.len()
            )));
        }
        if self.epoch_duration < MIN_EPOCH {
            return Err(EpochError::Config(format!(
                "epoch duration {:?} below {:?}",
                self.epoch_duration, MIN_EPOCH
            )));
        }
        Ok(())
    }

    pub fn parties(&self) -> usize {
        self.servers.len()
    }
}

/// Uniform row index in `[0, rows)`.
pub fn pick_slot<R: Rng + ?Sized>(rows: u32, rng: &mut R) -> Result<u32> {
    if rows < 2 {
        return Err(EpochError::TooFewRows(rows));
    }
    Ok(rng.gen_range(0..rows))
}

/// A zero-message write at a uniform row. Zero messages XOR to nothing, so
/// dummies colliding with anything are harmless.
pub fn pick_dummy<R: Rng + ?Sized>(geometry: &TableGeometry, rng: &mut R) -> KeygenRequest {
    KeygenRequest {
        geometry: *geometry,
        target_row: rng.gen_range(0..geometry.rows()),
        message: vec![0; geometry.cell_len()],
    }
}

/// Probability that at least two of `writers` uniform slot choices among
/// `rows` coincide.
pub fn collision_probability(writers: u64, rows: u64) -> f64 {
    if writers > rows {
        return 1.0;
    }
    let rows_f = rows as f64;
    let no_collision: f64 = (0..writers).map(|i| 1.0 - i as f64 / rows_f).product();
    1.0 - no_collision
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dpf::{keygen, point_table};
    use crate::prg::AesCtrPrg;
    use rand::seq::SliceRandom;
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    fn owner(n: u8) -> OwnerId {
        OwnerId::fingerprint(&[n])
    }

    fn dpf() -> Dpf<AesCtrPrg> {
        Dpf::default()
    }

    fn servers(geometry: TableGeometry, parties: usize, epoch: u64) -> Vec<EpochState> {
        (0..parties)
            .map(|i| EpochState::new(epoch, geometry, i as u8, parties))
            .collect()
    }

    fn finalize_all(states: &mut [EpochState]) -> Vec<WriteTable> {
        let snapshots: Vec<Vec<u8>> = states.iter_mut().map(|s| s.close().unwrap()).collect();
        states
            .iter_mut()
            .map(|s| {
                let peers: Vec<PeerIntermediate> = snapshots
                    .iter()
                    .enumerate()
                    .filter(|(i, _)| *i != s.server_id() as usize)
                    .map(|(i, t)| PeerIntermediate {
                        server_id: i as u8,
                        table: t.clone(),
                    })
                    .collect();
                s.finalize(&peers).unwrap()
            })
            .collect()
    }

    #[test]
    fn first_share_sets_accumulator() {
        let mut rng = ChaCha20Rng::seed_from_u64(1);
        let g = TableGeometry::new(16, 2).unwrap();
        let set = keygen(&g, 3, &[7, 7], 2, &mut rng).unwrap();
        let mut s = EpochState::new(9, g, 0, 2);
        let ack = s.submit_share(owner(1), &set.keys()[0], &dpf()).unwrap();
        assert_eq!(ack.epoch_id, 9);
        assert_eq!(
            s.accumulator(),
            &dpf().eval_full(&set.keys()[0]).unwrap()[..]
        );
    }

    #[test]
    fn duplicate_owner_is_rejected() {
        let mut rng = ChaCha20Rng::seed_from_u64(2);
        let g = TableGeometry::new(16, 1).unwrap();
        let mut s = EpochState::new(0, g, 0, 2);
        let a = keygen(&g, 1, &[1], 2, &mut rng).unwrap();
        let b = keygen(&g, 2, &[2], 2, &mut rng).unwrap();
        s.submit_share(owner(1), &a.keys()[0], &dpf()).unwrap();
        let before = s.accumulator().to_vec();
        assert_eq!(
            s.submit_share(owner(1), &b.keys()[0], &dpf()),
            Err(EpochError::DuplicateResponse(owner(1), 0))
        );
        assert_eq!(s.accumulator(), &before[..]);
    }

    #[test]
    fn rejects_wrong_geometry_party_and_closed_epoch() {
        let mut rng = ChaCha20Rng::seed_from_u64(3);
        let g = TableGeometry::new(16, 1).unwrap();
        let other = TableGeometry::new(8, 1).unwrap();
        let mut s = EpochState::new(4, g, 1, 2);
        let wrong_geom = keygen(&other, 1, &[1], 2, &mut rng).unwrap();
        assert!(matches!(
            s.submit_share(owner(1), &wrong_geom.keys()[1], &dpf()),
            Err(EpochError::GeometryMismatch { .. })
        ));
        let set = keygen(&g, 1, &[1], 2, &mut rng).unwrap();
        assert_eq!(
            s.submit_share(owner(1), &set.keys()[0], &dpf()),
            Err(EpochError::WrongParty {
                expected: 1,
                got: 0
            })
        );
        s.close().unwrap();
        assert_eq!(
            s.submit_share(owner(1), &set.keys()[1], &dpf()),
            Err(EpochError::NotOpen(4))
        );
        assert_eq!(s.close(), Err(EpochError::NotOpen(4)));
    }

    #[test]
    fn close_examples() {
        let g = TableGeometry::new(8, 2).unwrap();
        let mut s = EpochState::new(0, g, 0, 2);
        assert_eq!(s.close().unwrap(), g.zero_table());
        assert_eq!(s.status(), EpochStatus::Closed);

        let mut rng = ChaCha20Rng::seed_from_u64(4);
        let set = keygen(&g, 2, &[1, 1], 2, &mut rng).unwrap();
        let mut s = EpochState::new(0, g, 0, 2);
        s.submit_share(owner(0), &set.keys()[0], &dpf()).unwrap();
        assert_eq!(s.close().unwrap(), dpf().eval_full(&set.keys()[0]).unwrap());
    }

    #[test]
    fn arrival_order_does_not_matter() {
        let mut rng = ChaCha20Rng::seed_from_u64(5);
        let g = TableGeometry::new(64, 4).unwrap();
        let shares: Vec<(OwnerId, DpfKey)> = (0..20u8)
            .map(|i| {
                let row = rng.gen_range(0..64);
                let msg: [u8; 4] = rng.gen();
                (
                    owner(i),
                    keygen(&g, row, &msg, 3, &mut rng).unwrap().keys()[1].clone(),
                )
            })
            .collect();
        let mut a = EpochState::new(0, g, 1, 3);
        let mut b = EpochState::new(0, g, 1, 3);
        let mut shuffled = shares.clone();
        shuffled.shuffle(&mut rng);
        for (o, k) in &shares {
            a.submit_share(*o, k, &dpf()).unwrap();
        }
        for (o, k) in &shuffled {
            b.submit_share(*o, k, &dpf()).unwrap();
        }
        assert_eq!(a.close().unwrap(), b.close().unwrap());
    }

    #[test]
    fn finalize_two_writes_across_all_servers() {
        let mut rng = ChaCha20Rng::seed_from_u64(6);
        let g = TableGeometry::new(32, 2).unwrap();
        let mut states = servers(g, 3, 1);
        let writes = [(5u32, [0xA5, 0x01]), (17, [0x00, 0x42])];
        for (i, (row, msg)) in writes.iter().enumerate() {
            let set = keygen(&g, *row, msg, 3, &mut rng).unwrap();
            for (s, key) in states.iter_mut().zip(set.keys()) {
                s.submit_share(owner(i as u8), key, &dpf()).unwrap();
            }
        }
        let tables = finalize_all(&mut states);
        let mut direct = g.zero_table();
        for (row, msg) in writes {
            direct[g.cell_range(row)].copy_from_slice(&msg);
        }
        for t in &tables {
            assert_eq!(t.cells, direct);
            assert_eq!(t, &tables[0]);
        }
        assert!(states.iter().all(|s| s.status() == EpochStatus::Finalized));
    }

    #[test]
    fn finalize_examples() {
        let mut rng = ChaCha20Rng::seed_from_u64(7);
        let g = TableGeometry::new(8, 1).unwrap();

        let mut states = servers(g, 2, 0);
        for i in 0..2u8 {
            let dummy = pick_dummy(&g, &mut rng);
            let set = dpf().keygen_request(&dummy, 2, &mut rng).unwrap();
            for (s, key) in states.iter_mut().zip(set.keys()) {
                s.submit_share(owner(i), key, &dpf()).unwrap();
            }
        }
        assert_eq!(finalize_all(&mut states)[0].cells, g.zero_table());

        let mut states = servers(g, 2, 0);
        let set = keygen(&g, 3, &[0x5A], 2, &mut rng).unwrap();
        for (s, key) in states.iter_mut().zip(set.keys()) {
            s.submit_share(owner(0), key, &dpf()).unwrap();
        }
        let table = &finalize_all(&mut states)[0];
        assert_eq!(table.cells, point_table(&g, 3, &[0x5A]).unwrap());
        assert_eq!(table.nonzero_rows(), vec![(3, &[0x5A][..])]);
    }

    #[test]
    fn missing_peer_aborts_epoch() {
        let g = TableGeometry::new(8, 1).unwrap();
        let mut s = EpochState::new(3, g, 0, 3);
        s.close().unwrap();
        let peers = [PeerIntermediate {
            server_id: 2,
            table: g.zero_table(),
        }];
        assert_eq!(
            s.finalize(&peers),
            Err(EpochError::MissingPeers {
                epoch: 3,
                missing: vec![1]
            })
        );
        assert_eq!(s.status(), EpochStatus::Finalized);
        assert!(s.abort_reason().unwrap().contains("[1]"));
        assert_eq!(s.finalize(&peers), Err(EpochError::NotClosed(3)));
    }

    #[test]
    fn malformed_peer_intermediates_are_protocol_errors() {
        let g = TableGeometry::new(8, 1).unwrap();
        for peers in [
            vec![PeerIntermediate {
                server_id: 1,
                table: vec![0; 7],
            }],
            vec![PeerIntermediate {
                server_id: 0,
                table: g.zero_table(),
            }],
            vec![
                PeerIntermediate {
                    server_id: 1,
                    table: g.zero_table(),
                },
                PeerIntermediate {
                    server_id: 1,
                    table: g.zero_table(),
                },
            ],
        ] {
            let mut s = EpochState::new(0, g, 0, 2);
            s.close().unwrap();
            assert!(matches!(
                s.finalize(&peers),
                Err(EpochError::Protocol { .. })
            ));
        }
    }

    #[test]
    fn excise_restores_accumulator() {
        let mut rng = ChaCha20Rng::seed_from_u64(8);
        let g = TableGeometry::new(16, 2).unwrap();
        let mut s = EpochState::new(0, g, 0, 2);
        let sets: Vec<_> = (0..3)
            .map(|i| keygen(&g, i * 4, &[i as u8 + 1, 0], 2, &mut rng).unwrap())
            .collect();
        s.submit_share(owner(0), &sets[0].keys()[0], &dpf())
            .unwrap();
        let before = s.accumulator().to_vec();
        s.submit_share(owner(1), &sets[1].keys()[0], &dpf())
            .unwrap();
        s.submit_share(owner(2), &sets[2].keys()[0], &dpf())
            .unwrap();
        s.excise(&owner(1), &sets[1].keys()[0], &dpf()).unwrap();
        s.excise(&owner(2), &sets[2].keys()[0], &dpf()).unwrap();
        assert_eq!(s.accumulator(), &before[..]);
        assert_eq!(
            s.excise(&owner(2), &sets[2].keys()[0], &dpf()),
            Err(EpochError::AlreadyExcised(owner(2), 0))
        );
        assert_eq!(
            s.excise(&owner(0), &sets[1].keys()[0], &dpf()),
            Err(EpochError::KeyMismatch(owner(0)))
        );
        assert_eq!(
            s.excise(&owner(9), &sets[1].keys()[0], &dpf()),
            Err(EpochError::NotAccumulated(owner(9), 0))
        );
        assert_eq!(s.active_contributors(), BTreeSet::from([owner(0)]));
        // an excised owner still counts as having responded
        assert!(matches!(
            s.submit_share(owner(1), &sets[1].keys()[0], &dpf()),
            Err(EpochError::DuplicateResponse(..))
        ));
    }

    #[test]
    fn pick_slot_rejects_degenerate_tables() {
        let mut rng = ChaCha20Rng::seed_from_u64(9);
        assert_eq!(pick_slot(1, &mut rng), Err(EpochError::TooFewRows(1)));
        assert_eq!(pick_slot(0, &mut rng), Err(EpochError::TooFewRows(0)));
    }

    #[test]
    fn pick_slot_is_uniform() {
        // chi-square critical value, 511 degrees of freedom, alpha = 0.001
        const CRITICAL: f64 = 615.5148626372387;
        let mut rng = ChaCha20Rng::seed_from_u64(10);
        let rows = 512u32;
        let draws = 100_000;
        let mut counts = vec![0u64; rows as usize];
        for _ in 0..draws {
            counts[pick_slot(rows, &mut rng).unwrap() as usize] += 1;
        }
        let expected = draws as f64 / rows as f64;
        let chi2: f64 = counts
            .iter()
            .map(|&c| (c as f64 - expected).powi(2) / expected)
            .sum();
        assert!(chi2 < CRITICAL, "chi2 = {chi2}");
    }

    #[test]
    fn dummy_write_leaves_table_unchanged() {
        let mut rng = ChaCha20Rng::seed_from_u64(11);
        let g = TableGeometry::new(32, 3).unwrap();
        let mut table: Vec<u8> = (0..g.table_len()).map(|_| rng.gen()).collect();
        let original = table.clone();
        let dummy = pick_dummy(&g, &mut rng);
        assert!(dummy.is_dummy());
        let set = dpf().keygen_request(&dummy, 4, &mut rng).unwrap();
        for key in set.keys() {
            dpf().accumulate(&mut table, key).unwrap();
        }
        assert_eq!(table, original);
    }

    #[test]
    fn collision_probability_examples() {
        assert_eq!(collision_probability(0, 10), 0.0);
        assert_eq!(collision_probability(1, 10), 0.0);
        assert_eq!(collision_probability(2, 2), 0.5);
        assert_eq!(collision_probability(3, 2), 1.0);
        // 1 - 365!/(342! * 365^23)
        assert!((collision_probability(23, 365) - 0.507_297_234_323_985_4).abs() < 1e-12);
    }

    #[test]
    fn collision_probability_matches_monte_carlo() {
        let mut rng = ChaCha20Rng::seed_from_u64(12);
        let (w, r, trials) = (30u64, 512u32, 20_000);
        let hits = (0..trials)
            .filter(|_| {
                let mut seen = std::collections::HashSet::new();
                (0..w).any(|_| !seen.insert(pick_slot(r, &mut rng).unwrap()))
            })
            .count() as f64;
        let p = collision_probability(w, r as u64);
        let se = (p * (1.0 - p) / trials as f64).sqrt();
        assert!((hits / trials as f64 - p).abs() < 4.0 * se);
    }

    #[test]
    fn server_config_validation() {
        let g = TableGeometry::new(8, 1).unwrap();
        let mut cfg = ServerConfig {
            server_id: 0,
            servers: vec!["a:1".into(), "b:2".into()],
            epoch_duration: Duration::from_millis(100),
            peer_timeout: DEFAULT_PEER_TIMEOUT,
            geometry: g,
        };
        cfg.validate().unwrap();
        cfg.epoch_duration = Duration::from_millis(99);
        assert!(cfg.validate().is_err());
        cfg.epoch_duration = Duration::from_secs(1);
        cfg.server_id = 2;
        assert!(cfg.validate().is_err());
        cfg.server_id = 0;
        cfg.servers.pop();
        assert!(cfg.validate().is_err());
    }
}
