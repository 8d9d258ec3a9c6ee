//! Range proof by bit decomposition.
//!
//! The prover commits to each bit `C_j = b_j·G + r_j·H`, proves each is a bit,
//! and reveals `z = Σ 2^j·r_j − r`. The verifier checks
//! `Σ 2^j·C_j − C_target = z·H`, which ties the bits to the target value.
//! Since the `r_j` are uniformly random, `z` is too and says nothing about
//! the committed value.

use alloc::vec::Vec;

use super::bit::{prove_bit, verify_bit, BitProof, BIT_PROOF_LEN};
use super::ZkpError;
use crate::codec::{put_list, Decode, DecodeError, Encode, Reader};
use crate::crypto::{GroupElement, PedersenParams, Scalar, Transcript};

/// Largest supported bit width.
pub const MAX_BITS: usize = 63;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RangeProof {
    pub bit_commitments: Vec<GroupElement>,
    pub bit_proofs: Vec<BitProof>,
    pub consistency_response: Scalar,
}

impl RangeProof {
    pub fn bits(&self) -> usize {
        self.bit_commitments.len()
    }

    /// Size of the proof elements: `n·E_len + n·|BitProof| + |scalar|`.
    /// The canonical encoding adds two 4-byte list prefixes on top.
    pub fn proof_size(&self) -> usize {
        analytic_size(self.bits())
    }
}

pub fn analytic_size(n: usize) -> usize {
    n * 32 + n * BIT_PROOF_LEN + 32
}

fn bind_statement(t: &mut Transcript, n: usize, target: &GroupElement, bits: &[GroupElement]) {
    t.absorb_u64(b"range.n", n as u64);
    t.absorb_point(b"range.target", target);
    for c in bits {
        t.absorb_point(b"range.bit", c);
    }
}

fn powers_of_two(n: usize) -> impl Iterator<Item = Scalar> {
    (0..n).map(|j| Scalar::from_u64(1u64 << j))
}

pub fn prove_range(
    params: &PedersenParams,
    value: u64,
    blinding: &Scalar,
    n: usize,
    transcript: &mut Transcript,
) -> Result<RangeProof, ZkpError> {
    if n == 0 || n > MAX_BITS {
        return Err(ZkpError::UnsupportedWidth(n));
    }
    if value >> n != 0 {
        return Err(ZkpError::OutOfRange);
    }
    let target = params.commit_u64(value, blinding);

    let mut secret = Vec::with_capacity(40);
    secret.extend_from_slice(&value.to_be_bytes());
    secret.extend_from_slice(&blinding.encode());
    let mut witness = transcript.clone();
    witness.absorb_u64(b"range.n", n as u64);
    witness.absorb_point(b"range.target", &target);

    let mut bit_blindings = Vec::with_capacity(n);
    let mut bit_commitments = Vec::with_capacity(n);
    for j in 0..n {
        let r_j = witness.witness_scalar(&[b"range.r".as_slice(), &(j as u32).to_be_bytes()].concat(), &secret);
        bit_commitments.push(params.commit_u64((value >> j) & 1, &r_j).with_encoding());
        bit_blindings.push(r_j);
    }

    bind_statement(transcript, n, &target, &bit_commitments);
    let mut bit_proofs = Vec::with_capacity(n);
    for j in 0..n {
        let bit = ((value >> j) & 1) as u8;
        bit_proofs.push(prove_bit(params, bit, &bit_blindings[j], &bit_commitments[j], transcript)?);
    }

    let weighted = powers_of_two(n)
        .zip(&bit_blindings)
        .fold(Scalar::ZERO, |acc, (w, r)| acc + w * *r);
    Ok(RangeProof {
        bit_commitments,
        bit_proofs,
        consistency_response: weighted - *blinding,
    })
}

pub fn verify_range(
    params: &PedersenParams,
    target: &GroupElement,
    proof: &RangeProof,
    n: usize,
    transcript: &mut Transcript,
) -> Result<bool, ZkpError> {
    if proof.bit_commitments.len() != n || proof.bit_proofs.len() != n {
        return Err(ZkpError::LengthMismatch {
            expected: n,
            found: proof.bit_commitments.len().max(proof.bit_proofs.len()),
        });
    }
    if n == 0 || n > MAX_BITS {
        return Err(ZkpError::UnsupportedWidth(n));
    }
    // Σ 2^j·C_j − C_target − z·H = 0
    let scalars = powers_of_two(n).chain([-Scalar::ONE, -proof.consistency_response]);
    let points = proof.bit_commitments.iter().chain([target, params.g_blind()]);
    if !GroupElement::vartime_sum(scalars, points).is_identity() {
        return Ok(false);
    }
    bind_statement(transcript, n, target, &proof.bit_commitments);
    Ok(proof
        .bit_commitments
        .iter()
        .zip(&proof.bit_proofs)
        .all(|(c, bp)| verify_bit(params, c, bp, transcript)))
}

impl Encode for RangeProof {
    fn encode_to(&self, out: &mut Vec<u8>) {
        put_list(out, &self.bit_commitments);
        put_list(out, &self.bit_proofs);
        self.consistency_response.encode_to(out);
    }
}

impl Decode for RangeProof {
    fn decode_from(r: &mut Reader<'_>) -> Result<Self, DecodeError> {
        Ok(RangeProof {
            bit_commitments: r.list()?,
            bit_proofs: r.list()?,
            consistency_response: Scalar::decode_from(r)?,
        })
    }
}
