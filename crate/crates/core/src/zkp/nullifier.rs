use alloc::vec::Vec;
use core::fmt;

use crate::codec::{Decode, DecodeError, Encode, Reader};
use crate::hash;

/// One-time tag derived from the SE's PRF seed and monotonic counter. The
/// same counter value can only produce one nullifier, so a rolled-back SE
/// reuses nullifiers and is caught at reconciliation.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Nullifier(pub [u8; 32]);

impl Nullifier {
    pub fn derive(prf_seed: &[u8; 32], counter: u64) -> Self {
        Nullifier(hash::tagged(b"nullifier/v1", &[prf_seed, &counter.to_be_bytes()]))
    }

    pub fn as_bytes(&self) -> &[u8; 32] {
        &self.0
    }

    /// `hash("txid/v1" ‖ nullifier)`.
    pub fn tx_id(&self) -> [u8; 32] {
        hash::tagged(b"txid/v1", &[&self.0])
    }
}

impl fmt::Debug for Nullifier {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Nullifier({})", hash::to_hex(&self.0))
    }
}

impl Encode for Nullifier {
    fn encode_to(&self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.0);
    }
}

impl Decode for Nullifier {
    fn decode_from(r: &mut Reader<'_>) -> Result<Self, DecodeError> {
        Ok(Nullifier(r.array()?))
    }
}
