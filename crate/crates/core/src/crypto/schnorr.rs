use alloc::vec::Vec;
use core::fmt;

use sha2::{Digest, Sha512};

use super::{GroupElement, Scalar, Transcript};
use crate::codec::{Decode, DecodeError, Encode, Reader};

pub struct KeyPair {
    sk: Scalar,
    pk: GroupElement,
}

impl Clone for KeyPair {
    fn clone(&self) -> Self {
        KeyPair { sk: self.sk, pk: self.pk }
    }
}

impl fmt::Debug for KeyPair {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("KeyPair").field("pk", &self.pk).finish_non_exhaustive()
    }
}

impl KeyPair {
    pub fn from_secret(sk: Scalar) -> Self {
        KeyPair {
            pk: GroupElement::base_mul(&sk).with_encoding(),
            sk,
        }
    }

    /// Key pair from 32 bytes of seed material (hashed to a scalar).
    pub fn from_seed(seed: &[u8]) -> Self {
        Self::from_secret(Scalar::hash_from(&[b"keypair/v1", seed]))
    }

    pub fn public(&self) -> &GroupElement {
        &self.pk
    }

    pub(crate) fn secret(&self) -> &Scalar {
        &self.sk
    }

    /// Deterministic Schnorr signature. The nonce is
    /// `hash(sk_bytes ‖ message) mod q`.
    pub fn sign(&self, message: &[u8]) -> Signature {
        let mut h = Sha512::new();
        h.update(self.sk.encode());
        h.update(message);
        let nonce = Scalar::from_be_wide(&h.finalize().into());
        let commit_point = GroupElement::base_mul(&nonce);
        let c = challenge(&self.pk, &commit_point, message);
        Signature {
            commit_point,
            response: nonce + c * self.sk,
        }
    }
}

fn challenge(pk: &GroupElement, commit_point: &GroupElement, message: &[u8]) -> Scalar {
    let mut t = Transcript::with_domain(b"schnorr-signature/v1");
    t.absorb_point(b"pk", pk);
    t.absorb_point(b"R", commit_point);
    t.absorb(b"message", message);
    t.challenge(b"c")
}

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub struct Signature {
    pub commit_point: GroupElement,
    pub response: Scalar,
}

/// Encoded signature length: one group element and one scalar.
pub const SIGNATURE_LEN: usize = 64;

impl Signature {
    /// Checks `response·B = commit_point + c·pk`.
    pub fn verify(&self, pk: &GroupElement, message: &[u8]) -> bool {
        let c = challenge(pk, &self.commit_point, message);
        let lhs = GroupElement::vartime_sum(
            [self.response, -c],
            [&GroupElement::base(), pk],
        );
        lhs == self.commit_point
    }

    pub fn encode(&self) -> [u8; SIGNATURE_LEN] {
        let mut out = [0u8; SIGNATURE_LEN];
        out[..32].copy_from_slice(&self.commit_point.encode());
        out[32..].copy_from_slice(&self.response.encode());
        out
    }
}

/// Verifies an encoded signature against an encoded public key.
pub fn verify_encoded(pk: &[u8], message: &[u8], sig: &[u8]) -> Result<bool, DecodeError> {
    let pk = GroupElement::decode(pk)?;
    let sig = Signature::from_bytes(sig)?;
    Ok(sig.verify(&pk, message))
}

impl Encode for Signature {
    fn encode_to(&self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.encode());
    }
}

impl Decode for Signature {
    fn decode_from(r: &mut Reader<'_>) -> Result<Self, DecodeError> {
        Ok(Signature {
            commit_point: GroupElement::decode_from(r)?,
            response: Scalar::decode_from(r)?,
        })
    }
}
