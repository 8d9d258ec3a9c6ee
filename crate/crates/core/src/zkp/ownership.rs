//! Proof of knowledge of a device secret key, bound to a transaction id.

use alloc::vec::Vec;

use crate::codec::{Decode, DecodeError, Encode, Reader};
use crate::crypto::{GroupElement, KeyPair, Scalar, Transcript};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct OwnershipProof {
    pub commit_point: GroupElement,
    pub response: Scalar,
}

fn bind(t: &mut Transcript, pk: &GroupElement, tx_id: &[u8; 32]) {
    t.absorb(b"ownership.tx_id", tx_id);
    t.absorb_point(b"ownership.pk", pk);
}

pub fn prove_ownership(keys: &KeyPair, tx_id: &[u8; 32], transcript: &mut Transcript) -> OwnershipProof {
    bind(transcript, keys.public(), tx_id);
    let nonce = transcript.witness_scalar(b"ownership.nonce", &keys.secret().encode());
    let commit_point = GroupElement::base_mul(&nonce);
    transcript.absorb_point(b"ownership.R", &commit_point);
    let c = transcript.challenge(b"ownership.challenge");
    OwnershipProof {
        commit_point,
        response: nonce + c * *keys.secret(),
    }
}

pub fn verify_ownership(
    pk: &GroupElement,
    tx_id: &[u8; 32],
    proof: &OwnershipProof,
    transcript: &mut Transcript,
) -> bool {
    bind(transcript, pk, tx_id);
    transcript.absorb_point(b"ownership.R", &proof.commit_point);
    let c = transcript.challenge(b"ownership.challenge");
    GroupElement::vartime_sum([proof.response, -c], [&GroupElement::base(), pk]) == proof.commit_point
}

impl Encode for OwnershipProof {
    fn encode_to(&self, out: &mut Vec<u8>) {
        self.commit_point.encode_to(out);
        self.response.encode_to(out);
    }
}

impl Decode for OwnershipProof {
    fn decode_from(r: &mut Reader<'_>) -> Result<Self, DecodeError> {
        Ok(OwnershipProof {
            commit_point: GroupElement::decode_from(r)?,
            response: Scalar::decode_from(r)?,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bound_to_tx_id() {
        let kp = KeyPair::from_seed(b"owner");
        let a = [1u8; 32];
        let b = [2u8; 32];
        let proof = prove_ownership(&kp, &a, &mut Transcript::new());
        assert!(verify_ownership(kp.public(), &a, &proof, &mut Transcript::new()));
        assert!(!verify_ownership(kp.public(), &b, &proof, &mut Transcript::new()));
    }

    #[test]
    fn wrong_key_fails() {
        let kp = KeyPair::from_seed(b"owner");
        let other = KeyPair::from_seed(b"thief");
        let tx = [7u8; 32];
        let proof = prove_ownership(&kp, &tx, &mut Transcript::new());
        assert!(!verify_ownership(other.public(), &tx, &proof, &mut Transcript::new()));
    }
}
