//! Three-message offline payment: init → accept → commit.
//!
//! The payer's SE debits and logs before `PayInit` leaves the device, so a
//! failed exchange never loses value: at the next sync the intermediary either
//! credits the payee (it has a receipt or the payer holds the accept) or
//! voids the payment and recredits the payer.

use alloc::vec::Vec;

use thiserror::Error;

use crate::codec::{Decode, DecodeError, Encode, Reader};
use crate::crypto::PedersenParams;
use crate::secure_element::{IncomingPayment, PaymentContext, SeError};
use crate::wallet::{device_id_for, Device, Evidence};
use crate::zkp::{verify_compliance_bundle, ComplianceBundle, PublicInputs, RejectReason, VerifyOutcome};
use crate::{hash, DeviceId, WalletCertificate};

pub const MSG_PAY_INIT: u8 = 0x01;
pub const MSG_PAY_ACCEPT: u8 = 0x02;
pub const MSG_PAY_COMMIT: u8 = 0x03;
pub const MSG_PAY_REJECT: u8 = 0x04;

/// Ticks a party waits for the next message before giving up.
pub const DEFAULT_TIMEOUT_TICKS: u64 = 10;

const SIG_DOMAIN: &[u8] = b"protocol/v1/";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
pub enum ProtocolError {
    #[error("secure element: {0}")]
    Se(#[from] SeError),
    #[error("no in-flight payment with this tx_id")]
    UnknownTx,
    #[error("signature invalid")]
    SignatureInvalid,
    #[error("accept came from a device other than the addressed payee")]
    PayeeMismatch,
    #[error("decode: {0}")]
    Decode(#[from] DecodeError),
    #[error("unknown message type {0:#04x}")]
    UnknownMessage(u8),
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PayInit {
    pub public_inputs: PublicInputs,
    pub tx_id: [u8; 32],
    pub bundle: ComplianceBundle,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PayAccept {
    pub tx_id: [u8; 32],
    pub payee_cert: WalletCertificate,
    pub payee_sig: crate::Signature,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PayCommit {
    pub tx_id: [u8; 32],
    pub payer_sig: crate::Signature,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PayReject {
    pub tx_id: [u8; 32],
    pub reason: RejectReason,
}

fn accept_message(tx_id: &[u8; 32]) -> Vec<u8> {
    let mut m = Vec::with_capacity(SIG_DOMAIN.len() + 38);
    m.extend_from_slice(SIG_DOMAIN);
    m.extend_from_slice(tx_id);
    m.extend_from_slice(b"accept");
    m
}

fn commit_message(tx_id: &[u8; 32], accept: &PayAccept) -> Vec<u8> {
    let mut m = Vec::with_capacity(SIG_DOMAIN.len() + 70);
    m.extend_from_slice(SIG_DOMAIN);
    m.extend_from_slice(tx_id);
    m.extend_from_slice(b"commit");
    m.extend_from_slice(&accept.digest());
    m
}

impl PayAccept {
    pub fn digest(&self) -> [u8; 32] {
        hash::sha256(&[&self.to_bytes()])
    }

    pub fn verify(&self) -> bool {
        self.payee_sig.verify(&self.payee_cert.subject_pk, &accept_message(&self.tx_id))
    }
}

impl PayCommit {
    pub fn verify(&self, payer_cert: &WalletCertificate, accept: &PayAccept) -> bool {
        self.tx_id == accept.tx_id
            && self
                .payer_sig
                .verify(&payer_cert.subject_pk, &commit_message(&self.tx_id, accept))
    }
}

impl Encode for PayInit {
    fn encode_to(&self, out: &mut Vec<u8>) {
        self.public_inputs.encode_to(out);
        out.extend_from_slice(&self.tx_id);
        self.bundle.encode_to(out);
    }
}

impl Decode for PayInit {
    fn decode_from(r: &mut Reader<'_>) -> Result<Self, DecodeError> {
        Ok(PayInit {
            public_inputs: PublicInputs::decode_from(r)?,
            tx_id: r.array()?,
            bundle: ComplianceBundle::decode_from(r)?,
        })
    }
}

impl Encode for PayAccept {
    fn encode_to(&self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.tx_id);
        self.payee_cert.encode_to(out);
        self.payee_sig.encode_to(out);
    }
}

impl Decode for PayAccept {
    fn decode_from(r: &mut Reader<'_>) -> Result<Self, DecodeError> {
        Ok(PayAccept {
            tx_id: r.array()?,
            payee_cert: WalletCertificate::decode_from(r)?,
            payee_sig: crate::Signature::decode_from(r)?,
        })
    }
}

impl Encode for PayCommit {
    fn encode_to(&self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.tx_id);
        self.payer_sig.encode_to(out);
    }
}

impl Decode for PayCommit {
    fn decode_from(r: &mut Reader<'_>) -> Result<Self, DecodeError> {
        Ok(PayCommit {
            tx_id: r.array()?,
            payer_sig: crate::Signature::decode_from(r)?,
        })
    }
}

impl Encode for PayReject {
    fn encode_to(&self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.tx_id);
        out.push(self.reason.code());
    }
}

impl Decode for PayReject {
    fn decode_from(r: &mut Reader<'_>) -> Result<Self, DecodeError> {
        let tx_id = r.array()?;
        let code = r.u8()?;
        Ok(PayReject {
            tx_id,
            reason: RejectReason::from_code(code).ok_or(DecodeError::InvalidTag(code))?,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Message {
    Init(PayInit),
    Accept(PayAccept),
    Commit(PayCommit),
    Reject(PayReject),
}

impl Message {
    pub fn msg_type(&self) -> u8 {
        match self {
            Message::Init(_) => MSG_PAY_INIT,
            Message::Accept(_) => MSG_PAY_ACCEPT,
            Message::Commit(_) => MSG_PAY_COMMIT,
            Message::Reject(_) => MSG_PAY_REJECT,
        }
    }

    pub fn tx_id(&self) -> &[u8; 32] {
        match self {
            Message::Init(m) => &m.tx_id,
            Message::Accept(m) => &m.tx_id,
            Message::Commit(m) => &m.tx_id,
            Message::Reject(m) => &m.tx_id,
        }
    }

    pub fn payload(&self) -> Vec<u8> {
        match self {
            Message::Init(m) => m.to_bytes(),
            Message::Accept(m) => m.to_bytes(),
            Message::Commit(m) => m.to_bytes(),
            Message::Reject(m) => m.to_bytes(),
        }
    }

    pub fn decode(msg_type: u8, payload: &[u8]) -> Result<Self, ProtocolError> {
        Ok(match msg_type {
            MSG_PAY_INIT => Message::Init(PayInit::from_bytes(payload)?),
            MSG_PAY_ACCEPT => Message::Accept(PayAccept::from_bytes(payload)?),
            MSG_PAY_COMMIT => Message::Commit(PayCommit::from_bytes(payload)?),
            MSG_PAY_REJECT => Message::Reject(PayReject::from_bytes(payload)?),
            t => return Err(ProtocolError::UnknownMessage(t)),
        })
    }
}

/// What a payee stores once the exchange completes; uploaded at sync.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Receipt {
    pub bundle: ComplianceBundle,
    pub accept: PayAccept,
    pub commit: PayCommit,
}

impl Encode for Receipt {
    fn encode_to(&self, out: &mut Vec<u8>) {
        self.bundle.encode_to(out);
        self.accept.encode_to(out);
        self.commit.encode_to(out);
    }
}

impl Decode for Receipt {
    fn decode_from(r: &mut Reader<'_>) -> Result<Self, DecodeError> {
        Ok(Receipt {
            bundle: ComplianceBundle::decode_from(r)?,
            accept: PayAccept::decode_from(r)?,
            commit: PayCommit::decode_from(r)?,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum OutcomeStatus {
    Completed,
    AbortedTimeout,
    AbortedReject(RejectReason),
    PendingSync,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PaymentOutcome {
    pub status: OutcomeStatus,
    pub tx_id: Option<[u8; 32]>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub(crate) enum PayerState {
    AwaitingAccept { payee: DeviceId },
    Completed(PayCommit),
    /// Timed out; the intermediary settles it at sync.
    PendingSync,
    Rejected(RejectReason),
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub(crate) struct PayerSession {
    pub(crate) log_index: usize,
    pub(crate) state: PayerState,
}

impl PayerSession {
    pub(crate) fn in_flight(&self) -> bool {
        matches!(self.state, PayerState::AwaitingAccept { .. })
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub(crate) enum PayeeSession {
    AwaitingCommit { init: PayInit, accept: PayAccept },
    Completed { log_index: usize },
    Discarded,
}

/// Debits the payer's SE and produces the opening message.
pub fn payer_start(device: &mut Device, amount: u64, payee: DeviceId, epoch: u64) -> Result<PayInit, ProtocolError> {
    let auth = device.se.authorize_payment(amount, PaymentContext { payee, epoch })?;
    let tx_id = auth.public_inputs.tx_id;
    let log_index = device.push(
        auth.entry,
        Evidence::Payment {
            bundle: auth.bundle.clone(),
            accept: None,
        },
    );
    device.payer_sessions.insert(
        tx_id,
        PayerSession {
            log_index,
            state: PayerState::AwaitingAccept { payee },
        },
    );
    Ok(PayInit {
        public_inputs: auth.public_inputs,
        tx_id,
        bundle: auth.bundle,
    })
}

/// Verifies the compliance bundle and answers with an accept or a reject.
pub fn payee_handle_init(device: &mut Device, init: &PayInit, now_epoch: u64) -> Result<PayAccept, PayReject> {
    let reject = |reason| PayReject {
        tx_id: init.tx_id,
        reason,
    };
    if device.payee_sessions.contains_key(&init.tx_id) {
        return Err(reject(RejectReason::DuplicateTx));
    }
    if init.public_inputs.payee != *device.id() {
        return Err(reject(RejectReason::WrongPayee));
    }
    if init.tx_id != init.public_inputs.tx_id {
        return Err(reject(RejectReason::TxIdMismatch));
    }
    match verify_compliance_bundle(
        PedersenParams::standard(),
        &init.bundle,
        &init.public_inputs,
        &device.fi_pub,
        now_epoch,
    ) {
        VerifyOutcome::Accept => {}
        VerifyOutcome::Reject(reason) => return Err(reject(reason)),
    }
    let payee_sig = device
        .se
        .sign_protocol(SIG_DOMAIN, &accept_message(&init.tx_id)[SIG_DOMAIN.len()..])
        .expect("protocol domain");
    let accept = PayAccept {
        tx_id: init.tx_id,
        payee_cert: device.se.certificate().clone(),
        payee_sig,
    };
    device.payee_sessions.insert(
        init.tx_id,
        PayeeSession::AwaitingCommit {
            init: init.clone(),
            accept: accept.clone(),
        },
    );
    Ok(accept)
}

/// Checks the payee's accept and signs the commit. A repeated accept gets the
/// same commit back.
pub fn payer_handle_accept(device: &mut Device, acc: &PayAccept) -> Result<PayCommit, ProtocolError> {
    let session = device.payer_sessions.get(&acc.tx_id).ok_or(ProtocolError::UnknownTx)?;
    let payee = match &session.state {
        PayerState::AwaitingAccept { payee } => *payee,
        PayerState::Completed(commit) => return Ok(commit.clone()),
        PayerState::PendingSync | PayerState::Rejected(_) => return Err(ProtocolError::UnknownTx),
    };
    let log_index = session.log_index;
    if !acc.payee_cert.verify(&device.fi_pub) || !acc.verify() {
        return Err(ProtocolError::SignatureInvalid);
    }
    if device_id_for(&acc.payee_cert.subject_pk) != payee {
        return Err(ProtocolError::PayeeMismatch);
    }
    let payer_sig = device
        .se
        .sign_protocol(SIG_DOMAIN, &commit_message(&acc.tx_id, acc)[SIG_DOMAIN.len()..])
        .expect("protocol domain");
    let commit = PayCommit {
        tx_id: acc.tx_id,
        payer_sig,
    };
    if let Evidence::Payment { accept, .. } = &mut device.evidence[log_index] {
        *accept = Some(acc.clone());
    }
    device.payer_sessions.get_mut(&acc.tx_id).expect("session").state = PayerState::Completed(commit.clone());
    Ok(commit)
}

/// Logs the incoming payment. Replayed commits return the stored receipt and
/// change nothing.
pub fn payee_handle_commit(device: &mut Device, com: &PayCommit) -> Result<Receipt, ProtocolError> {
    let (init, accept) = match device.payee_sessions.get(&com.tx_id) {
        Some(PayeeSession::AwaitingCommit { init, accept }) => (init, accept),
        Some(PayeeSession::Completed { log_index }) => match &device.evidence[*log_index] {
            Evidence::Receipt(r) => return Ok(r.clone()),
            _ => unreachable!("payee session points at a receipt"),
        },
        Some(PayeeSession::Discarded) | None => return Err(ProtocolError::UnknownTx),
    };
    if !com.verify(&init.public_inputs.certificate, accept) {
        return Err(ProtocolError::SignatureInvalid);
    }
    let receipt = Receipt {
        bundle: init.bundle.clone(),
        accept: accept.clone(),
        commit: com.clone(),
    };
    let incoming = IncomingPayment {
        tx_id: com.tx_id,
        public_inputs: init.public_inputs.clone(),
        bundle_hash: init.bundle.digest(),
        prev_head: *device.se.log_head(),
    };
    let entry = device.se.record_incoming(incoming)?;
    let log_index = device.push(entry, Evidence::Receipt(receipt.clone()));
    device
        .payee_sessions
        .insert(com.tx_id, PayeeSession::Completed { log_index });
    Ok(receipt)
}

/// Payer side: a reject ends the attempt, except `DuplicateTx`, which only
/// says the payee already holds this payment (a replayed init).
pub fn payer_handle_reject(device: &mut Device, rej: &PayReject) -> Option<PaymentOutcome> {
    if rej.reason == RejectReason::DuplicateTx {
        return None;
    }
    let session = device.payer_sessions.get_mut(&rej.tx_id)?;
    if !session.in_flight() {
        return None;
    }
    session.state = PayerState::Rejected(rej.reason);
    Some(PaymentOutcome {
        status: OutcomeStatus::AbortedReject(rej.reason),
        tx_id: Some(rej.tx_id),
    })
}

/// Fires a deadline. Returns `None` if the exchange already moved on.
pub fn handle_timeout(device: &mut Device, tx_id: &[u8; 32]) -> Option<PaymentOutcome> {
    if let Some(s) = device.payer_sessions.get_mut(tx_id) {
        if s.in_flight() {
            s.state = PayerState::PendingSync;
            return Some(PaymentOutcome {
                status: OutcomeStatus::PendingSync,
                tx_id: Some(*tx_id),
            });
        }
        return None;
    }
    if let Some(s) = device.payee_sessions.get_mut(tx_id) {
        if matches!(s, PayeeSession::AwaitingCommit { .. }) {
            *s = PayeeSession::Discarded;
            return Some(PaymentOutcome {
                status: OutcomeStatus::AbortedTimeout,
                tx_id: Some(*tx_id),
            });
        }
    }
    None
}

/// Result of feeding one message to a device.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Handled {
    pub reply: Option<Message>,
    pub outcome: Option<PaymentOutcome>,
}

/// Dispatches an incoming message to the matching handler.
pub fn handle_message(device: &mut Device, msg: &Message, now_epoch: u64) -> Result<Handled, ProtocolError> {
    let done = |tx_id: [u8; 32]| {
        Some(PaymentOutcome {
            status: OutcomeStatus::Completed,
            tx_id: Some(tx_id),
        })
    };
    Ok(match msg {
        Message::Init(init) => match payee_handle_init(device, init, now_epoch) {
            Ok(acc) => Handled {
                reply: Some(Message::Accept(acc)),
                outcome: None,
            },
            Err(rej) => Handled {
                reply: Some(Message::Reject(rej)),
                outcome: None,
            },
        },
        Message::Accept(acc) => {
            let first = device
                .payer_sessions
                .get(&acc.tx_id)
                .is_some_and(PayerSession::in_flight);
            let commit = payer_handle_accept(device, acc)?;
            Handled {
                reply: Some(Message::Commit(commit)),
                outcome: if first { done(acc.tx_id) } else { None },
            }
        }
        Message::Commit(com) => {
            let first = matches!(
                device.payee_sessions.get(&com.tx_id),
                Some(PayeeSession::AwaitingCommit { .. })
            );
            payee_handle_commit(device, com)?;
            Handled {
                reply: None,
                outcome: if first { done(com.tx_id) } else { None },
            }
        }
        Message::Reject(rej) => Handled {
            reply: None,
            outcome: payer_handle_reject(device, rej),
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::{KeyPair, Limits};

    fn accept() -> PayAccept {
        let fi = KeyPair::from_seed(b"fi");
        let payee = KeyPair::from_seed(b"payee");
        let cert = WalletCertificate::issue(&fi, *payee.public(), Limits::REFERENCE, 9);
        let tx_id = [4; 32];
        PayAccept {
            tx_id,
            payee_cert: cert,
            payee_sig: payee.sign(&accept_message(&tx_id)),
        }
    }

    #[test]
    fn accept_signature_is_bound_to_tx_id() {
        let acc = accept();
        assert!(acc.verify());
        let mut other = acc.clone();
        other.tx_id[0] ^= 1;
        assert!(!other.verify());
    }

    #[test]
    fn messages_round_trip_by_type() {
        let acc = accept();
        let commit = PayCommit {
            tx_id: acc.tx_id,
            payer_sig: KeyPair::from_seed(b"p").sign(b"x"),
        };
        for m in [
            Message::Accept(acc),
            Message::Commit(commit),
            Message::Reject(PayReject {
                tx_id: [1; 32],
                reason: RejectReason::ProofInvalid,
            }),
        ] {
            assert_eq!(Message::decode(m.msg_type(), &m.payload()).unwrap(), m);
        }
        assert_eq!(Message::decode(0x09, &[]), Err(ProtocolError::UnknownMessage(9)));
        assert!(Message::decode(MSG_PAY_REJECT, &[0; 33]).is_ok());
        assert!(Message::decode(MSG_PAY_REJECT, &[0; 32]).is_err());
    }
}
