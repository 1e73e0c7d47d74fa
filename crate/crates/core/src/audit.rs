//! Inter-server check that an owner's key set encodes a point function.
//!
//! The servers learn how many rows of the combined table are zero and
//! nothing else. One round of the protocol, for `p` servers holding shares
//! `k_0..k_{p-1}`:
//!
//! 1. every server evaluates its share over all rows;
//! 2. every pair `(i, j)` shares a fresh seed; server `i` masks its
//!    evaluation with the PRG expansion of each of its pairwise seeds, so the
//!    pads cancel in the XOR over all servers and each masked vector on its
//!    own is uniformly random;
//! 3. the masked vectors of servers `1..p` are XORed by server 1 (the right
//!    aggregator); server 0 keeps its own (the left partial). Since the pads
//!    cancel, `left ^ right` is the combined table;
//! 4. both sides hash every row of their partial under a salt known only to
//!    servers 0 and 1, and send the digests to a referee (server 2, or server
//!    0 when `p = 2`). Equal digests mean the combined row is zero;
//! 5. the referee counts zero rows;
//! 6. the key set is a valid write iff exactly `rows - 1` rows are zero.
//!
//! This is honest-but-curious: servers are assumed to follow the message
//! flow. With `p = 2` the referee also holds a partial and could confirm a
//! guessed message; with `p >= 3` no single server sees a partial together
//! with both digest vectors.

use std::collections::{BTreeMap, HashSet};

use rand::Rng;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::dpf::{xor_accumulate, Dpf, DpfError, DpfKey, TableGeometry};
use crate::epoch::{EpochError, EpochState, OwnerId};
use crate::prg::{Prg, Seed};

/// Truncated row digest length.
pub const DIGEST_LEN: usize = 16;

pub type RowDigest = [u8; DIGEST_LEN];

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum AuditError {
    #[error("expected {expected} participants, got {got}")]
    MissingParticipant { expected: usize, got: usize },
    #[error("share for party {party} has geometry {got:?}, audit expects {expected:?}")]
    GeometryMismatch {
        party: u8,
        expected: TableGeometry,
        got: TableGeometry,
    },
    #[error("share at position {position} claims party {claimed}")]
    PartyMismatch { position: usize, claimed: u8 },
    #[error("{0} was already audited in epoch {1}")]
    Replay(OwnerId, u64),
    #[error("missing pairwise seed between servers {0} and {1}")]
    MissingSeed(u8, u8),
    #[error("audit needs at least 2 servers")]
    TooFewServers,
    #[error("digest vectors cover {0} and {1} rows, table has {2}")]
    DigestLength(usize, usize, usize),
    #[error(transparent)]
    Dpf(#[from] DpfError),
    #[error(transparent)]
    Epoch(#[from] EpochError),
}

pub type Result<T> = std::result::Result<T, AuditError>;

/// What to do with a key set whose combined table is entirely zero.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum DummyPolicy {
    /// Dummy writes are expected traffic; accept and flag them.
    #[default]
    AcceptAsDummy,
    /// Only a single nonzero row is acceptable.
    Strict,
}

/// When servers run the audit relative to accumulation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum AuditMode {
    Off,
    /// Before a share is accumulated.
    Eager,
    /// At epoch close, excising rejected shares.
    #[default]
    Lazy,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RejectReason {
    /// More than one row is nonzero.
    NotAPointFunction { zero_rows: u32, rows: u32 },
    /// Every row is zero and the policy is strict.
    EmptyWrite,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Verdict {
    Accept,
    AcceptDummy,
    Reject(RejectReason),
}

impl Verdict {
    pub fn is_accept(&self) -> bool {
        !matches!(self, Verdict::Reject(_))
    }

    pub fn from_zero_rows(zero_rows: u32, rows: u32, policy: DummyPolicy) -> Self {
        if zero_rows + 1 == rows {
            Verdict::Accept
        } else if zero_rows == rows {
            match policy {
                DummyPolicy::AcceptAsDummy => Verdict::AcceptDummy,
                DummyPolicy::Strict => Verdict::Reject(RejectReason::EmptyWrite),
            }
        } else {
            Verdict::Reject(RejectReason::NotAPointFunction { zero_rows, rows })
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AuditTranscript {
    pub owner: OwnerId,
    /// Left and right digest of every row, as seen by the referee.
    pub per_row_blinded: Vec<[RowDigest; 2]>,
    /// 1 where the combined row is zero.
    pub nxor_results: Vec<bool>,
    pub zero_rows: u32,
    pub verdict: Verdict,
}

/// The seed shared by servers `low < high`, drawn by `low`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PairSeed {
    pub low: u8,
    pub high: u8,
    pub seed: Seed,
}

/// Which server plays which part in steps 3 and 4.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AuditRoles {
    pub left: u8,
    pub right_aggregator: u8,
    pub referee: u8,
}

impl AuditRoles {
    pub fn for_parties(parties: usize) -> Self {
        Self {
            left: 0,
            right_aggregator: 1,
            referee: if parties >= 3 { 2 } else { 0 },
        }
    }
}

/// One server's side of an audit.
#[derive(Debug, Clone)]
pub struct AuditParty {
    server_id: u8,
    parties: usize,
    geometry: TableGeometry,
    evaluation: Vec<u8>,
}

impl AuditParty {
    /// Step 1: evaluate the share over the full input space.
    pub fn new<P: Prg>(
        server_id: u8,
        parties: usize,
        geometry: &TableGeometry,
        share: &DpfKey,
        dpf: &Dpf<P>,
    ) -> Result<Self> {
        if parties < 2 {
            return Err(AuditError::TooFewServers);
        }
        if share.geometry() != geometry {
            return Err(AuditError::GeometryMismatch {
                party: server_id,
                expected: *geometry,
                got: *share.geometry(),
            });
        }
        Ok(Self {
            server_id,
            parties,
            geometry: *geometry,
            evaluation: dpf.eval_full(share)?,
        })
    }

    pub fn server_id(&self) -> u8 {
        self.server_id
    }

    /// Seeds this server originates: one for every higher-numbered peer.
    /// Drawn from `rng` alone, never from the evaluation.
    pub fn draw_pair_seeds<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<PairSeed> {
        draw_pair_seeds(self.server_id, self.parties, rng)
    }

    /// Step 2: the evaluation XORed with every pairwise pad this server is
    /// part of.
    pub fn masked_rows<P: Prg>(&self, seeds: &BTreeMap<u8, Seed>, prg: &P) -> Result<Vec<u8>> {
        let mut masked = self.evaluation.clone();
        let mut pad = self.geometry.zero_table();
        for peer in (0..self.parties as u8).filter(|p| *p != self.server_id) {
            let seed = seeds.get(&peer).ok_or(AuditError::MissingSeed(
                self.server_id.min(peer),
                self.server_id.max(peer),
            ))?;
            prg.fill(seed, &mut pad);
            xor_accumulate(&mut masked, &pad)?;
        }
        Ok(masked)
    }
}

pub fn draw_pair_seeds<R: Rng + ?Sized>(
    server_id: u8,
    parties: usize,
    rng: &mut R,
) -> Vec<PairSeed> {
    (server_id as usize + 1..parties)
        .map(|high| PairSeed {
            low: server_id,
            high: high as u8,
            seed: rng.gen(),
        })
        .collect()
}

/// The pairwise seeds relevant to `server_id`, keyed by peer.
pub fn seeds_for(server_id: u8, all: &[PairSeed]) -> BTreeMap<u8, Seed> {
    all.iter()
        .filter_map(|s| {
            if s.low == server_id {
                Some((s.high, s.seed))
            } else if s.high == server_id {
                Some((s.low, s.seed))
            } else {
                None
            }
        })
        .collect()
}

/// Step 3 at the right aggregator.
pub fn aggregate_masked<'a, I>(geometry: &TableGeometry, masked: I) -> Result<Vec<u8>>
where
    I: IntoIterator<Item = &'a [u8]>,
{
    let mut acc = geometry.zero_table();
    for m in masked {
        xor_accumulate(&mut acc, m)?;
    }
    Ok(acc)
}

/// Digest salt derived from the seed shared by the left partial holder and
/// the right aggregator.
pub fn digest_salt(left_right_seed: &Seed) -> [u8; 32] {
    let mut h = Sha256::new();
    h.update(b"audit-row-digest-salt");
    h.update(left_right_seed);
    h.finalize().into()
}

/// Step 4: salted digest of every row of a partial.
pub fn row_digests(geometry: &TableGeometry, salt: &[u8; 32], partial: &[u8]) -> Vec<RowDigest> {
    partial
        .chunks_exact(geometry.cell_len())
        .enumerate()
        .map(|(row, cell)| {
            let mut h = Sha256::new();
            h.update(salt);
            h.update((row as u32).to_le_bytes());
            h.update(cell);
            let full: [u8; 32] = h.finalize().into();
            full[..DIGEST_LEN].try_into().unwrap()
        })
        .collect()
}

/// Steps 4-6 at the referee: per-row zero check, sum and verdict.
pub fn referee_verdict(
    geometry: &TableGeometry,
    owner: OwnerId,
    left: &[RowDigest],
    right: &[RowDigest],
    policy: DummyPolicy,
) -> Result<AuditTranscript> {
    let rows = geometry.rows() as usize;
    if left.len() != rows || right.len() != rows {
        return Err(AuditError::DigestLength(left.len(), right.len(), rows));
    }
    let nxor_results: Vec<bool> = left.iter().zip(right).map(|(l, r)| l == r).collect();
    let zero_rows = nxor_results.iter().filter(|z| **z).count() as u32;
    Ok(AuditTranscript {
        owner,
        per_row_blinded: left.iter().zip(right).map(|(l, r)| [*l, *r]).collect(),
        nxor_results,
        zero_rows,
        verdict: Verdict::from_zero_rows(zero_rows, geometry.rows(), policy),
    })
}

/// Runs the whole protocol in-process. `shares[i]` and `mask_rngs[i]`
/// belong to server `i`.
pub fn audit_keyset<P: Prg, R: Rng>(
    owner: OwnerId,
    shares: &[DpfKey],
    geometry: &TableGeometry,
    policy: DummyPolicy,
    mask_rngs: &mut [R],
    dpf: &Dpf<P>,
) -> Result<AuditTranscript> {
    let parties = mask_rngs.len();
    if parties < 2 {
        return Err(AuditError::TooFewServers);
    }
    if shares.len() != parties {
        return Err(AuditError::MissingParticipant {
            expected: parties,
            got: shares.len(),
        });
    }
    for (position, share) in shares.iter().enumerate() {
        if share.party_index() as usize != position {
            return Err(AuditError::PartyMismatch {
                position,
                claimed: share.party_index(),
            });
        }
    }

    let servers = shares
        .iter()
        .enumerate()
        .map(|(i, share)| AuditParty::new(i as u8, parties, geometry, share, dpf))
        .collect::<Result<Vec<_>>>()?;

    let all_seeds: Vec<PairSeed> = servers
        .iter()
        .zip(mask_rngs.iter_mut())
        .flat_map(|(s, rng)| s.draw_pair_seeds(rng))
        .collect();

    let masked = servers
        .iter()
        .map(|s| s.masked_rows(&seeds_for(s.server_id(), &all_seeds), dpf.prg()))
        .collect::<Result<Vec<_>>>()?;

    let roles = AuditRoles::for_parties(parties);
    let left = &masked[roles.left as usize];
    let right = aggregate_masked(
        geometry,
        masked
            .iter()
            .enumerate()
            .filter(|(i, _)| *i != roles.left as usize)
            .map(|(_, m)| m.as_slice()),
    )?;

    let lr_seed = seeds_for(roles.left, &all_seeds)
        .get(&roles.right_aggregator)
        .copied()
        .ok_or(AuditError::MissingSeed(roles.left, roles.right_aggregator))?;
    let salt = digest_salt(&lr_seed);
    referee_verdict(
        geometry,
        owner,
        &row_digests(geometry, &salt, left),
        &row_digests(geometry, &salt, &right),
        policy,
    )
}

/// Audits key sets for one epoch and refuses to audit an owner twice.
#[derive(Debug, Clone)]
pub struct Auditor<P> {
    epoch_id: u64,
    policy: DummyPolicy,
    dpf: Dpf<P>,
    audited: HashSet<OwnerId>,
}

impl<P: Prg> Auditor<P> {
    pub fn new(epoch_id: u64, policy: DummyPolicy, dpf: Dpf<P>) -> Self {
        Self {
            epoch_id,
            policy,
            dpf,
            audited: HashSet::new(),
        }
    }

    pub fn audit<R: Rng>(
        &mut self,
        owner: OwnerId,
        shares: &[DpfKey],
        geometry: &TableGeometry,
        mask_rngs: &mut [R],
    ) -> Result<AuditTranscript> {
        if self.audited.contains(&owner) {
            return Err(AuditError::Replay(owner, self.epoch_id));
        }
        let transcript = audit_keyset(owner, shares, geometry, self.policy, mask_rngs, &self.dpf)?;
        self.audited.insert(owner);
        Ok(transcript)
    }
}

/// XORs a rejected share back out of a server's accumulator.
pub fn excise<P: Prg>(
    state: &mut EpochState,
    owner: &OwnerId,
    offending: &DpfKey,
    dpf: &Dpf<P>,
) -> Result<()> {
    Ok(state.excise(owner, offending, dpf)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dpf::{keygen, nonzero_rows, point_table, KeyMaterial};
    use crate::prg::AesCtrPrg;
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    fn rngs(parties: usize, seed: u64) -> Vec<ChaCha20Rng> {
        (0..parties)
            .map(|i| ChaCha20Rng::seed_from_u64(seed * 1000 + i as u64))
            .collect()
    }

    fn dpf() -> Dpf<AesCtrPrg> {
        Dpf::default()
    }

    fn owner() -> OwnerId {
        OwnerId::fingerprint(b"owner")
    }

    /// Brute-force oracle: XOR all shares and count zero rows.
    fn oracle_zero_rows(geometry: &TableGeometry, shares: &[DpfKey]) -> u32 {
        let table = dpf().combine(shares).unwrap();
        geometry.rows() - nonzero_rows(geometry, &table).len() as u32
    }

    fn add_point(share: &DpfKey, row: u32, message: &[u8]) -> DpfKey {
        let g = *share.geometry();
        let mut material = dpf().eval_full(share).unwrap();
        xor_accumulate(&mut material, &point_table(&g, row, message).unwrap()).unwrap();
        DpfKey::new(g, share.party_index(), KeyMaterial::Expanded(material)).unwrap()
    }

    #[test]
    fn honest_keyset_is_accepted() {
        let mut rng = ChaCha20Rng::seed_from_u64(1);
        let g = TableGeometry::new(64, 4).unwrap();
        let set = keygen(&g, 17, &[1, 2, 3, 4], 3, &mut rng).unwrap();
        let t = audit_keyset(
            owner(),
            set.keys(),
            &g,
            DummyPolicy::default(),
            &mut rngs(3, 1),
            &dpf(),
        )
        .unwrap();
        assert_eq!(t.verdict, Verdict::Accept);
        assert_eq!(t.zero_rows, 63);
        assert!(!t.nxor_results[17]);
        assert_eq!(t.per_row_blinded.len(), 64);
    }

    #[test]
    fn second_point_is_rejected() {
        let mut rng = ChaCha20Rng::seed_from_u64(2);
        let g = TableGeometry::new(64, 2).unwrap();
        let set = keygen(&g, 5, &[9, 9], 3, &mut rng).unwrap();
        let mut shares = set.keys().to_vec();
        shares[1] = add_point(&shares[1], 40, &[0, 1]);
        assert_eq!(oracle_zero_rows(&g, &shares), 62);
        let t = audit_keyset(
            owner(),
            &shares,
            &g,
            DummyPolicy::default(),
            &mut rngs(3, 2),
            &dpf(),
        )
        .unwrap();
        assert_eq!(t.zero_rows, 62);
        assert_eq!(
            t.verdict,
            Verdict::Reject(RejectReason::NotAPointFunction {
                zero_rows: 62,
                rows: 64
            })
        );
    }

    #[test]
    fn dummy_policy() {
        let mut rng = ChaCha20Rng::seed_from_u64(3);
        let g = TableGeometry::new(32, 2).unwrap();
        let set = keygen(&g, 5, &[0, 0], 2, &mut rng).unwrap();
        let t = audit_keyset(
            owner(),
            set.keys(),
            &g,
            DummyPolicy::AcceptAsDummy,
            &mut rngs(2, 3),
            &dpf(),
        )
        .unwrap();
        assert_eq!(t.zero_rows, 32);
        assert_eq!(t.verdict, Verdict::AcceptDummy);
        let t = audit_keyset(
            owner(),
            set.keys(),
            &g,
            DummyPolicy::Strict,
            &mut rngs(2, 3),
            &dpf(),
        )
        .unwrap();
        assert_eq!(t.verdict, Verdict::Reject(RejectReason::EmptyWrite));
    }

    #[test]
    fn audit_errors() {
        let mut rng = ChaCha20Rng::seed_from_u64(4);
        let g = TableGeometry::new(16, 1).unwrap();
        let other = TableGeometry::new(8, 1).unwrap();
        let set = keygen(&g, 5, &[1], 3, &mut rng).unwrap();
        assert!(matches!(
            audit_keyset(
                owner(),
                &set.keys()[..2],
                &g,
                DummyPolicy::default(),
                &mut rngs(3, 4),
                &dpf()
            ),
            Err(AuditError::MissingParticipant {
                expected: 3,
                got: 2
            })
        ));
        assert!(matches!(
            audit_keyset(
                owner(),
                set.keys(),
                &other,
                DummyPolicy::default(),
                &mut rngs(3, 4),
                &dpf()
            ),
            Err(AuditError::GeometryMismatch { .. })
        ));
        let mut swapped = set.keys().to_vec();
        swapped.swap(0, 1);
        assert!(matches!(
            audit_keyset(
                owner(),
                &swapped,
                &g,
                DummyPolicy::default(),
                &mut rngs(3, 4),
                &dpf()
            ),
            Err(AuditError::PartyMismatch {
                position: 0,
                claimed: 1
            })
        ));

        let mut auditor = Auditor::new(7, DummyPolicy::default(), dpf());
        auditor
            .audit(owner(), set.keys(), &g, &mut rngs(3, 5))
            .unwrap();
        assert_eq!(
            auditor.audit(owner(), set.keys(), &g, &mut rngs(3, 6)),
            Err(AuditError::Replay(owner(), 7))
        );
    }

    #[test]
    fn pads_cancel_and_are_drawn_independently_of_the_share() {
        let g = TableGeometry::new(32, 4).unwrap();
        let mut rng = ChaCha20Rng::seed_from_u64(5);
        let a = keygen(&g, 3, &[1, 1, 1, 1], 3, &mut rng).unwrap();
        let b = keygen(&g, 30, &[7, 0, 0, 7], 3, &mut rng).unwrap();
        let seeds_with = |set: &crate::dpf::DpfKeySet| {
            let parties: Vec<_> = set
                .keys()
                .iter()
                .enumerate()
                .map(|(i, k)| AuditParty::new(i as u8, 3, &g, k, &dpf()).unwrap())
                .collect();
            let mut rs = rngs(3, 42);
            let seeds: Vec<PairSeed> = parties
                .iter()
                .zip(rs.iter_mut())
                .flat_map(|(p, r)| p.draw_pair_seeds(r))
                .collect();
            let masked: Vec<Vec<u8>> = parties
                .iter()
                .map(|p| {
                    p.masked_rows(&seeds_for(p.server_id(), &seeds), &AesCtrPrg)
                        .unwrap()
                })
                .collect();
            (seeds, masked, parties)
        };
        let (seeds_a, masked_a, parties_a) = seeds_with(&a);
        let (seeds_b, masked_b, parties_b) = seeds_with(&b);
        assert_eq!(seeds_a, seeds_b);
        assert_eq!(seeds_a.len(), 3);

        // masked ^ evaluation is the same pad whatever the share
        for i in 0..3 {
            let mut pad_a = masked_a[i].clone();
            xor_accumulate(&mut pad_a, &parties_a[i].evaluation).unwrap();
            let mut pad_b = masked_b[i].clone();
            xor_accumulate(&mut pad_b, &parties_b[i].evaluation).unwrap();
            assert_eq!(pad_a, pad_b);
            assert!(pad_a.iter().any(|x| *x != 0));
        }

        let combined = aggregate_masked(&g, masked_a.iter().map(|m| m.as_slice())).unwrap();
        assert_eq!(combined, dpf().combine(a.keys()).unwrap());
    }

    #[test]
    fn masked_vector_bytes_look_uniform() {
        // The correction share is highly structured; after masking its byte
        // histogram should be flat.
        let g = TableGeometry::new(1024, 16).unwrap();
        let mut rng = ChaCha20Rng::seed_from_u64(6);
        let set = keygen(&g, 0, &[0xFF; 16], 2, &mut rng).unwrap();
        let party = AuditParty::new(1, 2, &g, &set.keys()[1], &dpf()).unwrap();
        let seeds = draw_pair_seeds(0, 2, &mut rng);
        let masked = party
            .masked_rows(&seeds_for(1, &seeds), &AesCtrPrg)
            .unwrap();
        let mut hist = [0u64; 256];
        for b in &masked {
            hist[*b as usize] += 1;
        }
        let expected = masked.len() as f64 / 256.0;
        let chi2: f64 = hist
            .iter()
            .map(|&c| (c as f64 - expected).powi(2) / expected)
            .sum();
        // chi-square, 255 degrees of freedom, alpha = 0.001
        assert!(chi2 < 330.5197, "{chi2}");
    }

    #[test]
    fn referee_rejects_short_digest_vectors() {
        let g = TableGeometry::new(4, 1).unwrap();
        assert_eq!(
            referee_verdict(
                &g,
                owner(),
                &[[0; 16]; 3],
                &[[0; 16]; 4],
                DummyPolicy::default()
            ),
            Err(AuditError::DigestLength(3, 4, 4))
        );
    }

    #[test]
    fn completeness_over_random_geometry() {
        let mut rng = ChaCha20Rng::seed_from_u64(7);
        for trial in 0..60u64 {
            let rows = rng.gen_range(2..=256);
            let mb = rng.gen_range(1..=8);
            let parties = rng.gen_range(2..=5);
            let g = TableGeometry::new(rows, mb).unwrap();
            let mut msg: Vec<u8> = (0..mb).map(|_| rng.gen()).collect();
            msg[0] |= 1;
            let set = keygen(&g, rng.gen_range(0..rows), &msg, parties, &mut rng).unwrap();
            let t = audit_keyset(
                owner(),
                set.keys(),
                &g,
                DummyPolicy::Strict,
                &mut rngs(parties, trial),
                &dpf(),
            )
            .unwrap();
            assert_eq!(t.verdict, Verdict::Accept);
        }
    }

    #[test]
    fn soundness_against_random_corruption() {
        let mut rng = ChaCha20Rng::seed_from_u64(8);
        for trial in 0..60u64 {
            let rows = rng.gen_range(2..=128);
            let parties = rng.gen_range(2..=4);
            let g = TableGeometry::new(rows, 2).unwrap();
            let set = keygen(&g, rng.gen_range(0..rows), &[0x80, 1], parties, &mut rng).unwrap();
            let mut shares = set.keys().to_vec();
            let victim = rng.gen_range(0..parties);
            let mut material = dpf().eval_full(&shares[victim]).unwrap();
            let flips = rng.gen_range(1..=3);
            for _ in 0..flips {
                let i = rng.gen_range(0..material.len());
                material[i] ^= rng.gen_range(1..=255u8);
            }
            shares[victim] = DpfKey::new(g, victim as u8, KeyMaterial::Expanded(material)).unwrap();
            let zero_rows = oracle_zero_rows(&g, &shares);
            let t = audit_keyset(
                owner(),
                &shares,
                &g,
                DummyPolicy::Strict,
                &mut rngs(parties, trial),
                &dpf(),
            )
            .unwrap();
            assert_eq!(t.zero_rows, zero_rows);
            assert_eq!(t.verdict.is_accept(), zero_rows + 1 == rows);
        }
    }

    #[test]
    fn excise_guards_double_application() {
        let mut rng = ChaCha20Rng::seed_from_u64(9);
        let g = TableGeometry::new(16, 1).unwrap();
        let mut state = EpochState::new(0, g, 0, 2);
        let set = keygen(&g, 2, &[3], 2, &mut rng).unwrap();
        state.submit_share(owner(), &set.keys()[0], &dpf()).unwrap();
        excise(&mut state, &owner(), &set.keys()[0], &dpf()).unwrap();
        assert_eq!(state.accumulator(), &g.zero_table()[..]);
        assert!(matches!(
            excise(&mut state, &owner(), &set.keys()[0], &dpf()),
            Err(AuditError::Epoch(EpochError::AlreadyExcised(..)))
        ));
        assert_eq!(state.accumulator(), &g.zero_table()[..]);
    }
}
