//! Seed expansion for DPF key shares.

use ctr::cipher::{KeyIvInit, StreamCipher};

pub const SEED_LEN: usize = 16;

pub type Seed = [u8; SEED_LEN];

/// Deterministically expands a 16-byte seed into an arbitrary-length
/// pseudorandom string.
pub trait Prg: Send + Sync {
    fn fill(&self, seed: &Seed, out: &mut [u8]);

    fn expand(&self, seed: &Seed, len: usize) -> Vec<u8> {
        let mut out = vec![0u8; len];
        self.fill(seed, &mut out);
        out
    }
}

type Aes128Ctr = ctr::Ctr128BE<aes::Aes128>;

/// AES-128 in counter mode keyed by the seed, zero nonce.
#[derive(Debug, Clone, Copy, Default)]
pub struct AesCtrPrg;

impl Prg for AesCtrPrg {
    fn fill(&self, seed: &Seed, out: &mut [u8]) {
        out.fill(0);
        let mut cipher = Aes128Ctr::new(&(*seed).into(), &[0u8; 16].into());
        cipher.apply_keystream(out);
    }
}
