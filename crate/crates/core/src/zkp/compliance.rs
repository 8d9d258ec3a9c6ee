//! The four-property compliance bundle a paying device hands to the payee:
//! funds suffice, the value is valid, the AML/CFT limits hold and the
//! credential is current and held by the payer.

use alloc::vec::Vec;

use super::nullifier::Nullifier;
use super::ownership::{prove_ownership, verify_ownership, OwnershipProof};
use super::range::{prove_range, verify_range, RangeProof};
use super::ZkpError;
use crate::certificate::WalletCertificate;
use crate::codec::{put_u64, Decode, DecodeError, Encode, Reader};
use crate::crypto::{GroupElement, KeyPair, PedersenParams, Scalar, Signature, Transcript};
use crate::{hash, DeviceId, AMOUNT_BOUND, RANGE_BITS};

/// Public statement of one offline payment (the transaction metadata M).
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PublicInputs {
    pub c_balance_before: GroupElement,
    pub c_cum_before: GroupElement,
    pub amount: u64,
    pub cum_limit: u64,
    pub per_tx_cap: u64,
    pub certificate: WalletCertificate,
    pub tx_id: [u8; 32],
    pub epoch: u64,
    /// Device the payment is addressed to.
    pub payee: DeviceId,
}

impl PublicInputs {
    pub fn digest(&self) -> [u8; 32] {
        hash::tagged(b"public-inputs/v1", &[&self.to_bytes()])
    }
}

impl Encode for PublicInputs {
    fn encode_to(&self, out: &mut Vec<u8>) {
        self.c_balance_before.encode_to(out);
        self.c_cum_before.encode_to(out);
        put_u64(out, self.amount);
        put_u64(out, self.cum_limit);
        put_u64(out, self.per_tx_cap);
        self.certificate.encode_to(out);
        out.extend_from_slice(&self.tx_id);
        put_u64(out, self.epoch);
        out.extend_from_slice(&self.payee);
    }
}

impl Decode for PublicInputs {
    fn decode_from(r: &mut Reader<'_>) -> Result<Self, DecodeError> {
        Ok(PublicInputs {
            c_balance_before: GroupElement::decode_from(r)?,
            c_cum_before: GroupElement::decode_from(r)?,
            amount: r.u64()?,
            cum_limit: r.u64()?,
            per_tx_cap: r.u64()?,
            certificate: WalletCertificate::decode_from(r)?,
            tx_id: r.array()?,
            epoch: r.u64()?,
            payee: r.array()?,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ComplianceBundle {
    pub c_balance_after: GroupElement,
    pub c_cum_after: GroupElement,
    /// New balance lies in [0, 2^32).
    pub range_balance: RangeProof,
    /// `L − cum_after` lies in [0, 2^32).
    pub range_headroom: RangeProof,
    pub ownership: OwnershipProof,
    pub prev_state_sig: Signature,
    pub transition_sig: Signature,
    pub nullifier: Nullifier,
}

impl ComplianceBundle {
    pub fn digest(&self) -> [u8; 32] {
        hash::tagged(b"bundle/v1", &[&self.to_bytes()])
    }
}

impl Encode for ComplianceBundle {
    fn encode_to(&self, out: &mut Vec<u8>) {
        self.c_balance_after.encode_to(out);
        self.c_cum_after.encode_to(out);
        self.range_balance.encode_to(out);
        self.range_headroom.encode_to(out);
        self.ownership.encode_to(out);
        self.prev_state_sig.encode_to(out);
        self.transition_sig.encode_to(out);
        self.nullifier.encode_to(out);
    }
}

impl Decode for ComplianceBundle {
    fn decode_from(r: &mut Reader<'_>) -> Result<Self, DecodeError> {
        Ok(ComplianceBundle {
            c_balance_after: GroupElement::decode_from(r)?,
            c_cum_after: GroupElement::decode_from(r)?,
            range_balance: RangeProof::decode_from(r)?,
            range_headroom: RangeProof::decode_from(r)?,
            ownership: OwnershipProof::decode_from(r)?,
            prev_state_sig: Signature::decode_from(r)?,
            transition_sig: Signature::decode_from(r)?,
            nullifier: Nullifier::decode_from(r)?,
        })
    }
}

/// Openings held inside the secure element. `counter` is the value already
/// incremented for this payment.
pub struct ComplianceWitness<'a> {
    pub balance: u64,
    pub balance_blinding: Scalar,
    pub cum_spent: u64,
    pub cum_blinding: Scalar,
    pub keys: &'a KeyPair,
    pub prf_seed: &'a [u8; 32],
    pub counter: u64,
}

/// Message the SE signs to attest its committed state.
pub fn state_message(pk: &GroupElement, c_balance: &GroupElement, c_cum: &GroupElement) -> Vec<u8> {
    let mut m = Vec::with_capacity(11 + 96);
    m.extend_from_slice(b"se-state/v1");
    pk.encode_to(&mut m);
    c_balance.encode_to(&mut m);
    c_cum.encode_to(&mut m);
    m
}

fn transition_message(
    pub_in: &PublicInputs,
    c_balance_after: &GroupElement,
    c_cum_after: &GroupElement,
    nullifier: &Nullifier,
) -> Vec<u8> {
    let mut m = Vec::with_capacity(16 + 128);
    m.extend_from_slice(b"se-transition/v1");
    m.extend_from_slice(&pub_in.digest());
    c_balance_after.encode_to(&mut m);
    c_cum_after.encode_to(&mut m);
    nullifier.encode_to(&mut m);
    m
}

fn statement_transcript(
    pub_in: &PublicInputs,
    c_balance_after: &GroupElement,
    c_cum_after: &GroupElement,
    nullifier: &Nullifier,
) -> Transcript {
    let mut t = Transcript::with_domain(b"compliance/v1");
    t.absorb(b"public-inputs", &pub_in.to_bytes());
    t.absorb_point(b"c_balance_after", c_balance_after);
    t.absorb_point(b"c_cum_after", c_cum_after);
    t.absorb(b"nullifier", nullifier.as_bytes());
    t
}

fn sub_transcript(base: &Transcript, which: &[u8]) -> Transcript {
    let mut t = base.clone();
    t.absorb(b"sub-proof", which);
    t
}

/// Public target of the headroom proof: `L·g_val − c_cum_after`.
pub fn headroom_target(params: &PedersenParams, cum_limit: u64, c_cum_after: &GroupElement) -> GroupElement {
    params.value_point(cum_limit) - *c_cum_after
}

pub fn build_compliance_bundle(
    params: &PedersenParams,
    witness: &ComplianceWitness<'_>,
    pub_in: &PublicInputs,
) -> Result<ComplianceBundle, ZkpError> {
    let v = pub_in.amount;
    if v == 0 || v > pub_in.per_tx_cap || v >= AMOUNT_BOUND {
        return Err(ZkpError::ValueInvalid);
    }
    if witness.balance < v {
        return Err(ZkpError::InsufficientFunds);
    }
    if witness.cum_spent + v > pub_in.cum_limit {
        return Err(ZkpError::LimitExceeded);
    }
    if params.commit_u64(witness.balance, &witness.balance_blinding) != pub_in.c_balance_before
        || params.commit_u64(witness.cum_spent, &witness.cum_blinding) != pub_in.c_cum_before
    {
        return Err(ZkpError::InvalidWitness);
    }
    let nullifier = Nullifier::derive(witness.prf_seed, witness.counter);
    if nullifier.tx_id() != pub_in.tx_id {
        return Err(ZkpError::InvalidWitness);
    }

    let value_point = params.value_point(v);
    let c_balance_after = pub_in.c_balance_before - value_point;
    let c_cum_after = pub_in.c_cum_before + value_point;
    let base = statement_transcript(pub_in, &c_balance_after, &c_cum_after, &nullifier);

    let new_balance = witness.balance - v;
    let headroom = pub_in.cum_limit - (witness.cum_spent + v);
    let range_balance = prove_range(
        params,
        new_balance,
        &witness.balance_blinding,
        RANGE_BITS,
        &mut sub_transcript(&base, b"range_balance"),
    )?;
    // L·G − (cum'·G + r·H) opens to (L − cum', −r)
    let range_headroom = prove_range(
        params,
        headroom,
        &-witness.cum_blinding,
        RANGE_BITS,
        &mut sub_transcript(&base, b"range_headroom"),
    )?;
    let ownership = prove_ownership(witness.keys, &pub_in.tx_id, &mut sub_transcript(&base, b"ownership"));

    let pk = witness.keys.public();
    let prev_state_sig = witness
        .keys
        .sign(&state_message(pk, &pub_in.c_balance_before, &pub_in.c_cum_before));
    let transition_sig = witness
        .keys
        .sign(&transition_message(pub_in, &c_balance_after, &c_cum_after, &nullifier));

    Ok(ComplianceBundle {
        c_balance_after,
        c_cum_after,
        range_balance,
        range_headroom,
        ownership,
        prev_state_sig,
        transition_sig,
        nullifier,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RejectReason {
    CertificateInvalid,
    CredentialExpired,
    PolicyMismatch,
    ValueInvalid,
    TxIdMismatch,
    BalanceRelation,
    CumulativeRelation,
    ProofInvalid,
    OwnershipInvalid,
    SignatureInvalid,
    /// Payee-side: addressed to another device.
    WrongPayee,
    /// Payee-side: tx_id already accepted.
    DuplicateTx,
}

impl RejectReason {
    pub fn code(self) -> u8 {
        self as u8
    }

    pub fn from_code(code: u8) -> Option<Self> {
        use RejectReason::*;
        const ALL: [RejectReason; 12] = [
            CertificateInvalid,
            CredentialExpired,
            PolicyMismatch,
            ValueInvalid,
            TxIdMismatch,
            BalanceRelation,
            CumulativeRelation,
            ProofInvalid,
            OwnershipInvalid,
            SignatureInvalid,
            WrongPayee,
            DuplicateTx,
        ];
        ALL.get(code as usize).copied()
    }

    pub fn as_str(self) -> &'static str {
        use RejectReason::*;
        match self {
            CertificateInvalid => "certificate_invalid",
            CredentialExpired => "credential_expired",
            PolicyMismatch => "policy_mismatch",
            ValueInvalid => "value_invalid",
            TxIdMismatch => "tx_id_mismatch",
            BalanceRelation => "balance_relation",
            CumulativeRelation => "cumulative_relation",
            ProofInvalid => "proof_invalid",
            OwnershipInvalid => "ownership_invalid",
            SignatureInvalid => "signature_invalid",
            WrongPayee => "wrong_payee",
            DuplicateTx => "duplicate_tx",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum VerifyOutcome {
    Accept,
    Reject(RejectReason),
}

impl VerifyOutcome {
    pub fn is_accept(&self) -> bool {
        matches!(self, VerifyOutcome::Accept)
    }
}

pub fn verify_compliance_bundle(
    params: &PedersenParams,
    bundle: &ComplianceBundle,
    pub_in: &PublicInputs,
    fi_pub: &GroupElement,
    now_epoch: u64,
) -> VerifyOutcome {
    use RejectReason::*;
    let reject = VerifyOutcome::Reject;
    let cert = &pub_in.certificate;

    // (a) credential
    if !cert.verify(fi_pub) {
        return reject(CertificateInvalid);
    }
    if cert.is_expired(now_epoch) {
        return reject(CredentialExpired);
    }
    if cert.limits.cum_limit != pub_in.cum_limit || cert.limits.per_tx_cap != pub_in.per_tx_cap {
        return reject(PolicyMismatch);
    }
    // (b) value validity
    let v = pub_in.amount;
    if v == 0 || v > pub_in.per_tx_cap || v >= AMOUNT_BOUND || pub_in.cum_limit >= AMOUNT_BOUND {
        return reject(ValueInvalid);
    }
    if bundle.nullifier.tx_id() != pub_in.tx_id {
        return reject(TxIdMismatch);
    }

    let value_point = params.value_point(v);
    let base = statement_transcript(pub_in, &bundle.c_balance_after, &bundle.c_cum_after, &bundle.nullifier);
    let range_ok = |target: &GroupElement, proof: &RangeProof, which: &[u8]| {
        matches!(
            verify_range(params, target, proof, RANGE_BITS, &mut sub_transcript(&base, which)),
            Ok(true)
        )
    };

    // (c) funds
    if bundle.c_balance_after != pub_in.c_balance_before - value_point {
        return reject(BalanceRelation);
    }
    if !range_ok(&bundle.c_balance_after, &bundle.range_balance, b"range_balance") {
        return reject(ProofInvalid);
    }
    // (d) AML/CFT cumulative limit
    if bundle.c_cum_after != pub_in.c_cum_before + value_point {
        return reject(CumulativeRelation);
    }
    let headroom = headroom_target(params, pub_in.cum_limit, &bundle.c_cum_after);
    if !range_ok(&headroom, &bundle.range_headroom, b"range_headroom") {
        return reject(ProofInvalid);
    }
    // (e) credential holder and SE attestations
    let pk = &cert.subject_pk;
    if !verify_ownership(pk, &pub_in.tx_id, &bundle.ownership, &mut sub_transcript(&base, b"ownership")) {
        return reject(OwnershipInvalid);
    }
    let prev = state_message(pk, &pub_in.c_balance_before, &pub_in.c_cum_before);
    let transition = transition_message(pub_in, &bundle.c_balance_after, &bundle.c_cum_after, &bundle.nullifier);
    if !bundle.prev_state_sig.verify(pk, &prev) || !bundle.transition_sig.verify(pk, &transition) {
        return reject(SignatureInvalid);
    }
    VerifyOutcome::Accept
}

/// Decodes both parts before verifying. Malformed input is a decode error,
/// which is distinct from a rejection.
pub fn verify_compliance_bundle_bytes(
    params: &PedersenParams,
    bundle: &[u8],
    pub_in: &[u8],
    fi_pub: &GroupElement,
    now_epoch: u64,
) -> Result<VerifyOutcome, DecodeError> {
    let bundle = ComplianceBundle::from_bytes(bundle)?;
    let pub_in = PublicInputs::from_bytes(pub_in)?;
    Ok(verify_compliance_bundle(params, &bundle, &pub_in, fi_pub, now_epoch))
}
