//! One-of-two Schnorr OR-proof that a commitment opens to 0 or 1.
//!
//! With `C = b·G + r·H`, the statement is `C = r·H` (branch 0) or
//! `C − G = r·H` (branch 1). The prover answers the real branch and simulates
//! the other; the two sub-challenges must sum to the transcript challenge.

use alloc::vec::Vec;

use super::ZkpError;
use crate::codec::{Decode, DecodeError, Encode, Reader};
use crate::crypto::{GroupElement, PedersenParams, Scalar, Transcript};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BitProof {
    /// Per-branch commitments `A₀, A₁`.
    pub commitments: [GroupElement; 2],
    pub challenges: [Scalar; 2],
    pub responses: [Scalar; 2],
}

/// Encoded size: two group elements and four scalars.
pub const BIT_PROOF_LEN: usize = 2 * 32 + 4 * 32;

fn branch_targets(params: &PedersenParams, commitment: &GroupElement) -> [GroupElement; 2] {
    [*commitment, *commitment - *params.g_val()]
}

pub fn prove_bit(
    params: &PedersenParams,
    bit: u8,
    blinding: &Scalar,
    commitment: &GroupElement,
    transcript: &mut Transcript,
) -> Result<BitProof, ZkpError> {
    if bit > 1 {
        return Err(ZkpError::InvalidWitness);
    }
    let real = bit as usize;
    let fake = 1 - real;
    let targets = branch_targets(params, commitment);

    let mut secret = Vec::with_capacity(33);
    secret.push(bit);
    secret.extend_from_slice(&blinding.encode());
    transcript.absorb_point(b"bit.commitment", commitment);
    let nonce = transcript.witness_scalar(b"bit.nonce", &secret);
    let fake_challenge = transcript.witness_scalar(b"bit.fake-challenge", &secret);
    let fake_response = transcript.witness_scalar(b"bit.fake-response", &secret);

    let mut commitments = [GroupElement::identity(); 2];
    commitments[real] = params.mul_blind(&nonce);
    commitments[fake] = params.mul_blind(&fake_response) - &targets[fake] * &fake_challenge;
    let commitments = commitments.map(GroupElement::with_encoding);

    transcript.absorb_point(b"bit.A0", &commitments[0]);
    transcript.absorb_point(b"bit.A1", &commitments[1]);
    let c = transcript.challenge(b"bit.challenge");

    let mut challenges = [Scalar::ZERO; 2];
    let mut responses = [Scalar::ZERO; 2];
    challenges[fake] = fake_challenge;
    challenges[real] = c - fake_challenge;
    responses[fake] = fake_response;
    responses[real] = nonce + challenges[real] * *blinding;
    Ok(BitProof {
        commitments,
        challenges,
        responses,
    })
}

pub fn verify_bit(
    params: &PedersenParams,
    commitment: &GroupElement,
    proof: &BitProof,
    transcript: &mut Transcript,
) -> bool {
    transcript.absorb_point(b"bit.commitment", commitment);
    transcript.absorb_point(b"bit.A0", &proof.commitments[0]);
    transcript.absorb_point(b"bit.A1", &proof.commitments[1]);
    let c = transcript.challenge(b"bit.challenge");
    if proof.challenges[0] + proof.challenges[1] != c {
        return false;
    }
    let targets = branch_targets(params, commitment);
    (0..2).all(|i| {
        // sᵢ·H − eᵢ·Yᵢ must equal Aᵢ
        let lhs = GroupElement::vartime_sum(
            [proof.responses[i], -proof.challenges[i]],
            [params.g_blind(), &targets[i]],
        );
        lhs == proof.commitments[i]
    })
}

impl Encode for BitProof {
    fn encode_to(&self, out: &mut Vec<u8>) {
        for p in &self.commitments {
            p.encode_to(out);
        }
        for s in self.challenges.iter().chain(&self.responses) {
            s.encode_to(out);
        }
    }
}

impl Decode for BitProof {
    fn decode_from(r: &mut Reader<'_>) -> Result<Self, DecodeError> {
        Ok(BitProof {
            commitments: [GroupElement::decode_from(r)?, GroupElement::decode_from(r)?],
            challenges: [Scalar::decode_from(r)?, Scalar::decode_from(r)?],
            responses: [Scalar::decode_from(r)?, Scalar::decode_from(r)?],
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn setup(bit: u8) -> (GroupElement, Scalar, BitProof) {
        let p = PedersenParams::standard();
        let r = Scalar::hash_from(&[b"bit-test", &[bit]]);
        let c = p.commit_u64(bit as u64, &r);
        let proof = prove_bit(p, bit, &r, &c, &mut Transcript::new()).unwrap();
        (c, r, proof)
    }

    #[test]
    fn honest_zero_and_one_verify() {
        let p = PedersenParams::standard();
        for bit in [0u8, 1] {
            let (c, _, proof) = setup(bit);
            assert!(verify_bit(p, &c, &proof, &mut Transcript::new()), "bit {bit}");
        }
    }

    #[test]
    fn bit_two_is_invalid_witness() {
        let p = PedersenParams::standard();
        let c = p.commit_u64(2, &Scalar::ONE);
        assert_eq!(
            prove_bit(p, 2, &Scalar::ONE, &c, &mut Transcript::new()),
            Err(ZkpError::InvalidWitness)
        );
    }

    #[test]
    fn forged_proof_for_two_fails() {
        // Run the honest prover's algorithm for each claimed bit against a
        // commitment that actually opens to 2.
        let p = PedersenParams::standard();
        let r = Scalar::from_u64(99);
        let c = p.commit_u64(2, &r);
        for claimed in [0u8, 1] {
            let proof = prove_bit(p, claimed, &r, &c, &mut Transcript::new()).unwrap();
            assert!(!verify_bit(p, &c, &proof, &mut Transcript::new()));
        }
    }

    #[test]
    fn swapped_responses_fail() {
        let p = PedersenParams::standard();
        let (c, _, mut proof) = setup(1);
        proof.responses.swap(0, 1);
        assert!(!verify_bit(p, &c, &proof, &mut Transcript::new()));
    }

    #[test]
    fn replay_under_other_history_fails() {
        let p = PedersenParams::standard();
        let (c, _, proof) = setup(0);
        let mut t = Transcript::new();
        t.absorb(b"context", b"another payment");
        assert!(!verify_bit(p, &c, &proof, &mut t));
    }

    #[test]
    fn encoded_length() {
        let (_, _, proof) = setup(0);
        assert_eq!(proof.to_bytes().len(), BIT_PROOF_LEN);
        assert_eq!(BitProof::from_bytes(&proof.to_bytes()).unwrap(), proof);
    }
}
