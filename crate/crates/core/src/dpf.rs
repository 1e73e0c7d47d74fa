//! p-party XOR distributed point functions over a full table.
//!
//! A write of `message` at `target_row` is split into `p` keys. Each key
//! expands to a `rows * message_bytes` table. The XOR of all expanded keys is
//! the point-function table: `message` at `target_row`, zero elsewhere. Any
//! `p - 1` keys are pseudorandom and independent of the write.

use rand::{CryptoRng, Rng};
use thiserror::Error;

use crate::prg::{AesCtrPrg, Prg, Seed, SEED_LEN};

/// Default bound on `rows * message_bytes`.
pub const DEFAULT_TABLE_CAP: usize = 64 << 20;

/// Size of the serialized key header.
pub const KEY_HEADER_LEN: usize = 8;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum DpfError {
    #[error("table needs at least 2 rows, got {0}")]
    TooFewRows(u32),
    #[error("message must be at least one byte")]
    EmptyMessage,
    #[error("table of {size} bytes exceeds the cap of {cap} bytes")]
    TableTooLarge { size: usize, cap: usize },
    #[error("message is {got} bytes, geometry expects {expected}")]
    MessageLength { expected: usize, got: usize },
    #[error("target row {row} outside [0, {rows})")]
    RowOutOfRange { row: u32, rows: u32 },
    #[error("need at least 2 parties, got {0}")]
    TooFewParties(usize),
    #[error("at most 256 parties are supported, got {0}")]
    TooManyParties(usize),
    #[error("key material is {got} bytes, expected {expected}")]
    CorruptLength { expected: usize, got: usize },
    #[error("table lengths differ ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("truncated key: {0} bytes")]
    Truncated(usize),
    #[error("unknown key variant {0}")]
    UnknownVariant(u8),
}

pub type Result<T> = std::result::Result<T, DpfError>;

/// Shape of the write table: `rows` cells of `message_bytes` each.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct TableGeometry {
    rows: u32,
    message_bytes: u16,
}

impl TableGeometry {
    pub fn new(rows: u32, message_bytes: u16) -> Result<Self> {
        Self::with_cap(rows, message_bytes, DEFAULT_TABLE_CAP)
    }

    pub fn with_cap(rows: u32, message_bytes: u16, cap: usize) -> Result<Self> {
        if rows < 2 {
            return Err(DpfError::TooFewRows(rows));
        }
        if message_bytes == 0 {
            return Err(DpfError::EmptyMessage);
        }
        let size = rows as usize * message_bytes as usize;
        if size > cap {
            return Err(DpfError::TableTooLarge { size, cap });
        }
        Ok(Self {
            rows,
            message_bytes,
        })
    }

    pub fn rows(&self) -> u32 {
        self.rows
    }

    pub fn message_bytes(&self) -> u16 {
        self.message_bytes
    }

    pub fn cell_len(&self) -> usize {
        self.message_bytes as usize
    }

    pub fn table_len(&self) -> usize {
        self.rows as usize * self.message_bytes as usize
    }

    pub fn zero_table(&self) -> Vec<u8> {
        vec![0u8; self.table_len()]
    }

    /// Byte range of `row` inside a table.
    pub fn cell_range(&self, row: u32) -> std::ops::Range<usize> {
        let start = row as usize * self.cell_len();
        start..start + self.cell_len()
    }

    fn check_message(&self, message: &[u8]) -> Result<()> {
        if message.len() != self.cell_len() {
            return Err(DpfError::MessageLength {
                expected: self.cell_len(),
                got: message.len(),
            });
        }
        Ok(())
    }

    fn check_row(&self, row: u32) -> Result<()> {
        if row >= self.rows {
            return Err(DpfError::RowOutOfRange {
                row,
                rows: self.rows,
            });
        }
        Ok(())
    }
}

/// The point-function table itself: `message` at `row`, zero elsewhere.
pub fn point_table(geometry: &TableGeometry, row: u32, message: &[u8]) -> Result<Vec<u8>> {
    geometry.check_row(row)?;
    geometry.check_message(message)?;
    let mut table = geometry.zero_table();
    table[geometry.cell_range(row)].copy_from_slice(message);
    Ok(table)
}

/// Rows of `table` holding a nonzero cell, with their contents.
pub fn nonzero_rows<'a>(geometry: &TableGeometry, table: &'a [u8]) -> Vec<(u32, &'a [u8])> {
    table
        .chunks_exact(geometry.cell_len())
        .enumerate()
        .filter(|(_, cell)| cell.iter().any(|b| *b != 0))
        .map(|(row, cell)| (row as u32, cell))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum KeyMaterial {
    /// The full expansion, `rows * message_bytes` bytes.
    Expanded(Vec<u8>),
    /// A PRG seed that expands to the full table.
    Seeded(Seed),
}

impl KeyMaterial {
    fn variant_tag(&self) -> u8 {
        match self {
            KeyMaterial::Expanded(_) => 0,
            KeyMaterial::Seeded(_) => 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DpfKey {
    geometry: TableGeometry,
    party_index: u8,
    material: KeyMaterial,
}

impl DpfKey {
    pub fn new(geometry: TableGeometry, party_index: u8, material: KeyMaterial) -> Result<Self> {
        if let KeyMaterial::Expanded(bytes) = &material {
            if bytes.len() != geometry.table_len() {
                return Err(DpfError::CorruptLength {
                    expected: geometry.table_len(),
                    got: bytes.len(),
                });
            }
        }
        Ok(Self {
            geometry,
            party_index,
            material,
        })
    }

    pub fn geometry(&self) -> &TableGeometry {
        &self.geometry
    }

    pub fn party_index(&self) -> u8 {
        self.party_index
    }

    pub fn material(&self) -> &KeyMaterial {
        &self.material
    }

    pub fn is_expanded(&self) -> bool {
        matches!(self.material, KeyMaterial::Expanded(_))
    }

    /// Wire form: `party_index u8 | rows u32 LE | message_bytes u16 LE |
    /// variant u8` followed by the raw material.
    pub fn encode(&self) -> Vec<u8> {
        let material: &[u8] = match &self.material {
            KeyMaterial::Expanded(bytes) => bytes,
            KeyMaterial::Seeded(seed) => seed,
        };
        let mut out = Vec::with_capacity(KEY_HEADER_LEN + material.len());
        out.push(self.party_index);
        out.extend_from_slice(&self.geometry.rows.to_le_bytes());
        out.extend_from_slice(&self.geometry.message_bytes.to_le_bytes());
        out.push(self.material.variant_tag());
        out.extend_from_slice(material);
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < KEY_HEADER_LEN {
            return Err(DpfError::Truncated(bytes.len()));
        }
        let party_index = bytes[0];
        let rows = u32::from_le_bytes(bytes[1..5].try_into().unwrap());
        let message_bytes = u16::from_le_bytes(bytes[5..7].try_into().unwrap());
        let geometry = TableGeometry::new(rows, message_bytes)?;
        let body = &bytes[KEY_HEADER_LEN..];
        let material = match bytes[7] {
            0 => KeyMaterial::Expanded(body.to_vec()),
            1 => KeyMaterial::Seeded(body.try_into().map_err(|_| DpfError::CorruptLength {
                expected: SEED_LEN,
                got: body.len(),
            })?),
            tag => return Err(DpfError::UnknownVariant(tag)),
        };
        Self::new(geometry, party_index, material)
    }
}

/// Output of [`Dpf::keygen`]. The target row and message stay with the
/// generator; only the keys are meant to leave it.
#[derive(Debug, Clone)]
pub struct DpfKeySet {
    keys: Vec<DpfKey>,
    target_row: u32,
    message: Vec<u8>,
}

impl DpfKeySet {
    pub fn keys(&self) -> &[DpfKey] {
        &self.keys
    }

    pub fn into_keys(self) -> Vec<DpfKey> {
        self.keys
    }

    pub fn target_row(&self) -> u32 {
        self.target_row
    }

    pub fn message(&self) -> &[u8] {
        &self.message
    }

    pub fn parties(&self) -> usize {
        self.keys.len()
    }
}

/// A write to be turned into a key set.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct KeygenRequest {
    pub geometry: TableGeometry,
    pub target_row: u32,
    pub message: Vec<u8>,
}

impl KeygenRequest {
    pub fn is_dummy(&self) -> bool {
        self.message.iter().all(|b| *b == 0)
    }
}

/// Key generation and evaluation over a chosen PRG.
#[derive(Debug, Clone, Default)]
pub struct Dpf<P = AesCtrPrg> {
    prg: P,
}

impl<P: Prg> Dpf<P> {
    pub fn new(prg: P) -> Self {
        Self { prg }
    }

    pub fn prg(&self) -> &P {
        &self.prg
    }

    /// Splits `write(target_row, message)` into `parties` keys.
    ///
    /// Keys `0..p-1` are fresh seeds, drawn before the target or message is
    /// touched. The last key is the XOR of their expansions with the point
    /// table and is always [`KeyMaterial::Expanded`].
    pub fn keygen<R: Rng + CryptoRng + ?Sized>(
        &self,
        geometry: &TableGeometry,
        target_row: u32,
        message: &[u8],
        parties: usize,
        rng: &mut R,
    ) -> Result<DpfKeySet> {
        if parties < 2 {
            return Err(DpfError::TooFewParties(parties));
        }
        if parties > 256 {
            return Err(DpfError::TooManyParties(parties));
        }
        let seeds: Vec<Seed> = (0..parties - 1).map(|_| rng.gen()).collect();

        let mut correction = point_table(geometry, target_row, message)?;
        let mut scratch = geometry.zero_table();
        let mut keys = Vec::with_capacity(parties);
        for (party, seed) in seeds.into_iter().enumerate() {
            self.prg.fill(&seed, &mut scratch);
            xor_accumulate(&mut correction, &scratch)?;
            keys.push(DpfKey::new(
                *geometry,
                party as u8,
                KeyMaterial::Seeded(seed),
            )?);
        }
        keys.push(DpfKey::new(
            *geometry,
            (parties - 1) as u8,
            KeyMaterial::Expanded(correction),
        )?);
        Ok(DpfKeySet {
            keys,
            target_row,
            message: message.to_vec(),
        })
    }

    pub fn keygen_request<R: Rng + CryptoRng + ?Sized>(
        &self,
        request: &KeygenRequest,
        parties: usize,
        rng: &mut R,
    ) -> Result<DpfKeySet> {
        self.keygen(
            &request.geometry,
            request.target_row,
            &request.message,
            parties,
            rng,
        )
    }

    /// Evaluates a key over every row.
    pub fn eval_full(&self, key: &DpfKey) -> Result<Vec<u8>> {
        match &key.material {
            KeyMaterial::Expanded(bytes) => {
                if bytes.len() != key.geometry.table_len() {
                    return Err(DpfError::CorruptLength {
                        expected: key.geometry.table_len(),
                        got: bytes.len(),
                    });
                }
                Ok(bytes.clone())
            }
            KeyMaterial::Seeded(seed) => Ok(self.prg.expand(seed, key.geometry.table_len())),
        }
    }

    /// XORs the key's evaluation into `accumulator` without an intermediate
    /// allocation for expanded keys.
    pub fn accumulate(&self, accumulator: &mut [u8], key: &DpfKey) -> Result<()> {
        match &key.material {
            KeyMaterial::Expanded(bytes) => xor_accumulate(accumulator, bytes),
            KeyMaterial::Seeded(_) => xor_accumulate(accumulator, &self.eval_full(key)?),
        }
    }

    /// The full-length form used on the wire.
    pub fn expand_key(&self, key: &DpfKey) -> Result<DpfKey> {
        Ok(DpfKey {
            geometry: key.geometry,
            party_index: key.party_index,
            material: KeyMaterial::Expanded(self.eval_full(key)?),
        })
    }

    /// XOR of the evaluations of all keys.
    pub fn combine<'a, I>(&self, keys: I) -> Result<Vec<u8>>
    where
        I: IntoIterator<Item = &'a DpfKey>,
    {
        let mut iter = keys.into_iter();
        let first = iter.next().ok_or(DpfError::TooFewParties(0))?;
        let mut table = self.eval_full(first)?;
        for key in iter {
            self.accumulate(&mut table, key)?;
        }
        Ok(table)
    }
}

pub fn keygen<R: Rng + CryptoRng + ?Sized>(
    geometry: &TableGeometry,
    target_row: u32,
    message: &[u8],
    parties: usize,
    rng: &mut R,
) -> Result<DpfKeySet> {
    Dpf::<AesCtrPrg>::default().keygen(geometry, target_row, message, parties, rng)
}

pub fn eval_full(key: &DpfKey) -> Result<Vec<u8>> {
    Dpf::<AesCtrPrg>::default().eval_full(key)
}

/// `accumulator ^= evaluation`, element-wise.
pub fn xor_accumulate(accumulator: &mut [u8], evaluation: &[u8]) -> Result<()> {
    if accumulator.len() != evaluation.len() {
        return Err(DpfError::LengthMismatch(
            accumulator.len(),
            evaluation.len(),
        ));
    }
    accumulator
        .iter_mut()
        .zip(evaluation)
        .for_each(|(a, e)| *a ^= e);
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha20Rng;

    /// Independent per-row oracle: XOR each row across all expanded keys.
    fn brute_force_combine(geometry: &TableGeometry, keys: &[DpfKey]) -> Vec<Vec<u8>> {
        let evals: Vec<Vec<u8>> = keys.iter().map(|k| eval_full(k).unwrap()).collect();
        (0..geometry.rows())
            .map(|row| {
                let range = geometry.cell_range(row);
                let mut cell = vec![0u8; geometry.cell_len()];
                for eval in &evals {
                    for (c, b) in cell.iter_mut().zip(&eval[range.clone()]) {
                        *c ^= b;
                    }
                }
                cell
            })
            .collect()
    }

    fn geom(rows: u32, mb: u16) -> TableGeometry {
        TableGeometry::new(rows, mb).unwrap()
    }

    #[test]
    fn geometry_validation() {
        assert_eq!(TableGeometry::new(1, 4), Err(DpfError::TooFewRows(1)));
        assert_eq!(TableGeometry::new(4, 0), Err(DpfError::EmptyMessage));
        assert!(matches!(
            TableGeometry::with_cap(1024, 160, 1024 * 159),
            Err(DpfError::TableTooLarge { .. })
        ));
        assert!(TableGeometry::new(u32::MAX, u16::MAX).is_err());
        assert_eq!(geom(1157, 145).table_len(), 1157 * 145);
    }

    #[test]
    fn two_party_small_table() {
        let mut rng = ChaCha20Rng::seed_from_u64(5);
        let g = geom(4, 1);
        let set = keygen(&g, 2, &[0xAB], 2, &mut rng).unwrap();
        assert_eq!(set.parties(), 2);
        let table = Dpf::<AesCtrPrg>::default().combine(set.keys()).unwrap();
        assert_eq!(table, vec![0x00, 0x00, 0xAB, 0x00]);
    }

    #[test]
    fn zero_message_is_dummy_write() {
        let mut rng = ChaCha20Rng::seed_from_u64(6);
        let g = geom(4, 1);
        let set = keygen(&g, 1, &[0x00], 2, &mut rng).unwrap();
        let table = Dpf::<AesCtrPrg>::default().combine(set.keys()).unwrap();
        assert_eq!(table, g.zero_table());
    }

    #[test]
    fn eight_party_wide_table_has_one_nonzero_row() {
        let mut rng = ChaCha20Rng::seed_from_u64(7);
        let g = geom(1024, 3);
        for _ in 0..10 {
            let target = rng.gen_range(0..1024);
            let mut msg = [0u8; 3];
            rng.fill(&mut msg);
            msg[0] |= 1;
            let set = keygen(&g, target, &msg, 8, &mut rng).unwrap();
            let rows = brute_force_combine(&g, set.keys());
            let nonzero: Vec<usize> = rows
                .iter()
                .enumerate()
                .filter(|(_, c)| c.iter().any(|b| *b != 0))
                .map(|(i, _)| i)
                .collect();
            assert_eq!(nonzero, vec![target as usize]);
            assert_eq!(rows[target as usize], msg);
        }
    }

    #[test]
    fn three_party_exhaustive_oracle() {
        let mut rng = ChaCha20Rng::seed_from_u64(8);
        let g = geom(8, 1);
        let set = keygen(&g, 5, &[0xFF], 3, &mut rng).unwrap();
        let rows = brute_force_combine(&g, set.keys());
        for (row, cell) in rows.iter().enumerate() {
            let expected = if row == 5 { 0xFF } else { 0x00 };
            assert_eq!(cell, &vec![expected]);
        }
    }

    #[test]
    fn eval_full_examples() {
        let mut rng = ChaCha20Rng::seed_from_u64(9);
        let g = geom(16, 2);
        let set = keygen(&g, 3, &[1, 2], 3, &mut rng).unwrap();
        let seeded = &set.keys()[0];
        assert!(!seeded.is_expanded());
        assert_eq!(eval_full(seeded).unwrap(), eval_full(seeded).unwrap());
        let expanded = &set.keys()[2];
        match expanded.material() {
            KeyMaterial::Expanded(m) => assert_eq!(&eval_full(expanded).unwrap(), m),
            KeyMaterial::Seeded(_) => panic!("correction key must be expanded"),
        }
    }

    #[test]
    fn keygen_rejects_bad_inputs() {
        let mut rng = ChaCha20Rng::seed_from_u64(10);
        let g = geom(4, 2);
        assert!(matches!(
            keygen(&g, 4, &[1, 2], 2, &mut rng),
            Err(DpfError::RowOutOfRange { row: 4, rows: 4 })
        ));
        assert!(matches!(
            keygen(&g, 0, &[1], 2, &mut rng),
            Err(DpfError::MessageLength { .. })
        ));
        assert!(matches!(
            keygen(&g, 0, &[1, 2], 1, &mut rng),
            Err(DpfError::TooFewParties(1))
        ));
    }

    #[test]
    fn leading_shares_do_not_depend_on_the_write() {
        let g = geom(64, 4);
        let a = keygen(&g, 3, &[1, 2, 3, 4], 4, &mut ChaCha20Rng::seed_from_u64(77)).unwrap();
        let b = keygen(
            &g,
            60,
            &[9, 9, 9, 9],
            4,
            &mut ChaCha20Rng::seed_from_u64(77),
        )
        .unwrap();
        assert_eq!(a.keys()[..3], b.keys()[..3]);
        assert_ne!(a.keys()[3], b.keys()[3]);
    }

    #[test]
    fn xor_accumulate_examples() {
        let acc0 = vec![1u8, 2, 3, 4];
        let mut acc = acc0.clone();
        xor_accumulate(&mut acc, &[0; 4]).unwrap();
        assert_eq!(acc, acc0);
        xor_accumulate(&mut acc, &acc0.clone()).unwrap();
        assert_eq!(acc, vec![0; 4]);
        assert_eq!(
            xor_accumulate(&mut acc, &[0; 3]),
            Err(DpfError::LengthMismatch(4, 3))
        );

        // three writes to distinct rows vs direct placement
        let mut rng = ChaCha20Rng::seed_from_u64(12);
        let g = geom(10, 2);
        let dpf = Dpf::<AesCtrPrg>::default();
        let writes = [(1u32, [0x11, 0x12]), (4, [0x41, 0x42]), (9, [0x91, 0x92])];
        let mut table = g.zero_table();
        let mut direct = g.zero_table();
        for (row, msg) in writes {
            for key in keygen(&g, row, &msg, 2, &mut rng).unwrap().keys() {
                dpf.accumulate(&mut table, key).unwrap();
            }
            direct[g.cell_range(row)].copy_from_slice(&msg);
        }
        assert_eq!(table, direct);
        let rows = nonzero_rows(&g, &table);
        assert_eq!(rows.len(), 3);
        assert_eq!(rows[1], (4, &[0x41, 0x42][..]));
    }

    #[test]
    fn colliding_writes_combine_to_xor() {
        let mut rng = ChaCha20Rng::seed_from_u64(13);
        let g = geom(8, 1);
        let dpf = Dpf::<AesCtrPrg>::default();
        let a = keygen(&g, 6, &[0b1010], 3, &mut rng).unwrap();
        let b = keygen(&g, 6, &[0b0110], 3, &mut rng).unwrap();
        let table = dpf.combine(a.keys().iter().chain(b.keys())).unwrap();
        assert_eq!(table, point_table(&g, 6, &[0b1100]).unwrap());
    }

    #[test]
    fn decode_rejects_malformed_keys() {
        let g = geom(4, 1);
        let key = DpfKey::new(g, 0, KeyMaterial::Expanded(vec![1, 2, 3, 4])).unwrap();
        let bytes = key.encode();
        assert_eq!(bytes[..KEY_HEADER_LEN], [0, 4, 0, 0, 0, 1, 0, 0]);
        assert!(matches!(
            DpfKey::decode(&bytes[..bytes.len() - 1]),
            Err(DpfError::CorruptLength { .. })
        ));
        let mut bad = bytes.clone();
        bad[7] = 9;
        assert_eq!(DpfKey::decode(&bad), Err(DpfError::UnknownVariant(9)));
        assert_eq!(DpfKey::decode(&bytes[..3]), Err(DpfError::Truncated(3)));
        assert!(DpfKey::new(g, 0, KeyMaterial::Expanded(vec![0; 5])).is_err());
    }

    proptest! {
        #[test]
        fn key_wire_round_trip(rows in 2u32..64, mb in 1u16..8, target_frac in 0.0f64..1.0, parties in 2usize..5, seed in any::<u64>()) {
            let g = geom(rows, mb);
            let target = ((rows as f64 * target_frac) as u32).min(rows - 1);
            let mut rng = ChaCha20Rng::seed_from_u64(seed);
            let msg: Vec<u8> = (0..mb).map(|_| rng.gen()).collect();
            let set = keygen(&g, target, &msg, parties, &mut rng).unwrap();
            let dpf = Dpf::<AesCtrPrg>::default();
            for key in set.keys() {
                prop_assert_eq!(&DpfKey::decode(&key.encode()).unwrap(), key);
                let wire = dpf.expand_key(key).unwrap();
                prop_assert_eq!(wire.encode().len(), KEY_HEADER_LEN + g.table_len());
                prop_assert_eq!(&DpfKey::decode(&wire.encode()).unwrap(), &wire);
            }
        }

        #[test]
        fn combination_is_linear(rows in 2u32..128, seed in any::<u64>(), parties in 2usize..6) {
            let g = geom(rows, 2);
            let mut rng = ChaCha20Rng::seed_from_u64(seed);
            let dpf = Dpf::<AesCtrPrg>::default();
            let (ra, rb) = (rng.gen_range(0..rows), rng.gen_range(0..rows));
            let (ma, mb): ([u8; 2], [u8; 2]) = (rng.gen(), rng.gen());
            let a = dpf.keygen(&g, ra, &ma, parties, &mut rng).unwrap();
            let b = dpf.keygen(&g, rb, &mb, parties, &mut rng).unwrap();
            let joint = dpf.combine(a.keys().iter().chain(b.keys())).unwrap();
            let mut separate = dpf.combine(a.keys()).unwrap();
            xor_accumulate(&mut separate, &dpf.combine(b.keys()).unwrap()).unwrap();
            prop_assert_eq!(joint, separate);
        }
    }
}
