//! Emulated secure element: key custody, the monotonic counter, spending
//! policy enforcement and the hash-chained local log.
//!
//! Openings (values together with blindings) never leave this module except
//! into the in-boundary proof builder. Public methods hand out commitments,
//! proofs and signatures.

use alloc::collections::BTreeSet;
use alloc::vec::Vec;

use thiserror::Error;

use crate::certificate::WalletCertificate;
use crate::codec::{put_u64, Decode, DecodeError, Encode, Reader};
use crate::crypto::{GroupElement, KeyPair, PedersenParams, Scalar, Signature};
use crate::intermediary::SyncAck;
use crate::wallet::AllocationRecord;
use crate::zkp::{
    build_compliance_bundle, state_message, ComplianceBundle, ComplianceWitness, Nullifier, PublicInputs,
    ZkpError,
};
use crate::{hash, DeviceId, AMOUNT_BOUND};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
pub enum SeError {
    #[error("certificate does not bind the device key")]
    ProvisionMismatch,
    #[error("policy limits exceed proof bounds")]
    PolicyBound,
    #[error("certificate signature invalid")]
    CertificateInvalid,
    #[error("allocation record invalid")]
    AllocationInvalid,
    #[error("allocation nonce already used")]
    AllocationReplay,
    #[error("balance would exceed the device limit")]
    ExceedsDeviceLimit,
    #[error("transfer value invalid")]
    ValueInvalid,
    #[error("insufficient funds")]
    InsufficientFunds,
    #[error("cumulative offline limit exceeded")]
    LimitExceeded,
    #[error("offline transaction counter exhausted")]
    CounterExhausted,
    #[error("credential expired")]
    CredentialExpired,
    #[error("log chain mismatch")]
    LogCorrupt,
    #[error("no snapshot to restore")]
    NoSnapshot,
    #[error("sync acknowledgement invalid")]
    AckInvalid,
    #[error("proof construction failed: {0}")]
    Proof(ZkpError),
}

impl From<ZkpError> for SeError {
    fn from(e: ZkpError) -> Self {
        match e {
            ZkpError::ValueInvalid => SeError::ValueInvalid,
            ZkpError::InsufficientFunds => SeError::InsufficientFunds,
            ZkpError::LimitExceeded => SeError::LimitExceeded,
            other => SeError::Proof(other),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum LogRole {
    Payer = 1,
    Payee = 2,
    Load = 3,
    Reclaim = 4,
}

impl LogRole {
    pub fn as_str(self) -> &'static str {
        match self {
            LogRole::Payer => "payer",
            LogRole::Payee => "payee",
            LogRole::Load => "load",
            LogRole::Reclaim => "reclaim",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum EntryDetail {
    /// Payer and payee entries.
    Payment {
        public_inputs: PublicInputs,
        bundle_hash: [u8; 32],
    },
    /// Load and reclaim entries.
    Value { amount: u64 },
}

/// One record of the SE's append-only log.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct OfflineLogEntry {
    pub tx_id: [u8; 32],
    pub role: LogRole,
    pub detail: EntryDetail,
    pub prev_head: [u8; 32],
    pub entry_sig: Signature,
}

impl OfflineLogEntry {
    fn signed_message(
        tx_id: &[u8; 32],
        role: LogRole,
        detail: &EntryDetail,
        prev_head: &[u8; 32],
    ) -> Vec<u8> {
        let mut m = Vec::new();
        m.extend_from_slice(b"selog-entry/v1");
        encode_unsigned(&mut m, tx_id, role, detail, prev_head);
        m
    }

    pub fn verify_signature(&self, device_pk: &GroupElement) -> bool {
        self.entry_sig.verify(
            device_pk,
            &Self::signed_message(&self.tx_id, self.role, &self.detail, &self.prev_head),
        )
    }

    /// `hash(prev_head ‖ canonical(entry))`.
    pub fn next_head(&self) -> [u8; 32] {
        hash::sha256(&[&self.prev_head, &self.to_bytes()])
    }

    pub fn public_inputs(&self) -> Option<&PublicInputs> {
        match &self.detail {
            EntryDetail::Payment { public_inputs, .. } => Some(public_inputs),
            EntryDetail::Value { .. } => None,
        }
    }

    pub fn bundle_hash(&self) -> Option<&[u8; 32]> {
        match &self.detail {
            EntryDetail::Payment { bundle_hash, .. } => Some(bundle_hash),
            EntryDetail::Value { .. } => None,
        }
    }

    /// Plain amount carried by the entry.
    pub fn amount(&self) -> u64 {
        match &self.detail {
            EntryDetail::Payment { public_inputs, .. } => public_inputs.amount,
            EntryDetail::Value { amount } => *amount,
        }
    }
}

fn encode_unsigned(out: &mut Vec<u8>, tx_id: &[u8; 32], role: LogRole, detail: &EntryDetail, prev_head: &[u8; 32]) {
    out.extend_from_slice(tx_id);
    out.push(role as u8);
    match detail {
        EntryDetail::Payment {
            public_inputs,
            bundle_hash,
        } => {
            public_inputs.encode_to(out);
            out.extend_from_slice(bundle_hash);
        }
        EntryDetail::Value { amount } => put_u64(out, *amount),
    }
    out.extend_from_slice(prev_head);
}

impl Encode for OfflineLogEntry {
    fn encode_to(&self, out: &mut Vec<u8>) {
        encode_unsigned(out, &self.tx_id, self.role, &self.detail, &self.prev_head);
        self.entry_sig.encode_to(out);
    }
}

impl Decode for OfflineLogEntry {
    fn decode_from(r: &mut Reader<'_>) -> Result<Self, DecodeError> {
        let tx_id = r.array()?;
        let role = match r.u8()? {
            1 => LogRole::Payer,
            2 => LogRole::Payee,
            3 => LogRole::Load,
            4 => LogRole::Reclaim,
            t => return Err(DecodeError::InvalidTag(t)),
        };
        let detail = match role {
            LogRole::Payer | LogRole::Payee => EntryDetail::Payment {
                public_inputs: PublicInputs::decode_from(r)?,
                bundle_hash: r.array()?,
            },
            LogRole::Load | LogRole::Reclaim => EntryDetail::Value { amount: r.u64()? },
        };
        Ok(OfflineLogEntry {
            tx_id,
            role,
            detail,
            prev_head: r.array()?,
            entry_sig: Signature::decode_from(r)?,
        })
    }
}

/// Head of an empty log: `hash("selog/v1" ‖ device_id)`.
pub fn genesis_head(device_id: &DeviceId) -> [u8; 32] {
    hash::tagged(b"selog/v1", &[device_id])
}

/// True iff the chain anchored at the first entry's `prev_head` recomputes to
/// `head` and every entry signature verifies.
pub fn verify_log_chain(entries: &[OfflineLogEntry], head: &[u8; 32], device_pk: &GroupElement) -> bool {
    match entries.first() {
        None => true,
        Some(first) => verify_log_chain_from(&first.prev_head, entries, head, device_pk),
    }
}

/// As [`verify_log_chain`] with an explicit anchor (genesis, or the head the
/// verifier saw at the previous sync).
pub fn verify_log_chain_from(
    anchor: &[u8; 32],
    entries: &[OfflineLogEntry],
    head: &[u8; 32],
    device_pk: &GroupElement,
) -> bool {
    let mut running = *anchor;
    for e in entries {
        if e.prev_head != running || !e.verify_signature(device_pk) {
            return false;
        }
        running = e.next_head();
    }
    &running == head
}

/// Everything the SE learns at provisioning time.
pub struct Provisioning {
    pub device_id: DeviceId,
    pub keys: KeyPair,
    pub prf_seed: [u8; 32],
    pub certificate: WalletCertificate,
    /// Main-wallet key that signs allocations to this device.
    pub owner_pk: GroupElement,
    pub fi_pub: GroupElement,
}

/// Context the host passes when asking for a payment.
#[derive(Clone, Copy, Debug)]
pub struct PaymentContext {
    pub payee: DeviceId,
    pub epoch: u64,
}

/// Output of an authorized payment. The payer entry is already in the log.
#[derive(Clone, Debug)]
pub struct Authorization {
    pub public_inputs: PublicInputs,
    pub bundle: ComplianceBundle,
    pub entry: OfflineLogEntry,
}

/// Payee-side draft for recording an incoming payment.
#[derive(Clone, Debug)]
pub struct IncomingPayment {
    pub tx_id: [u8; 32],
    pub public_inputs: PublicInputs,
    pub bundle_hash: [u8; 32],
    pub prev_head: [u8; 32],
}

#[derive(Clone)]
struct SeState {
    device_id: DeviceId,
    keys: KeyPair,
    prf_seed: [u8; 32],
    counter: u64,
    /// Counter value at the last acknowledged sync; the K budget counts from here.
    counter_base: u64,
    balance: u64,
    balance_blinding: Scalar,
    cum_spent: u64,
    cum_blinding: Scalar,
    cum_resets: u64,
    certificate: WalletCertificate,
    owner_pk: GroupElement,
    fi_pub: GroupElement,
    log_head: [u8; 32],
    log_len: u64,
    used_nonces: BTreeSet<[u8; 8]>,
}

pub struct SecureElement {
    state: SeState,
    #[cfg(feature = "attack-harness")]
    snapshot: Option<SeState>,
}

fn cum_blinding(prf_seed: &[u8; 32], resets: u64) -> Scalar {
    Scalar::hash_from(&[b"se/cum-blinding", prf_seed, &resets.to_be_bytes()])
}

impl SecureElement {
    pub fn provision(p: Provisioning) -> Result<Self, SeError> {
        if p.certificate.subject_pk != *p.keys.public() {
            return Err(SeError::ProvisionMismatch);
        }
        if !p.certificate.limits.within_proof_bounds() {
            return Err(SeError::PolicyBound);
        }
        if !p.certificate.verify(&p.fi_pub) {
            return Err(SeError::CertificateInvalid);
        }
        Ok(SecureElement {
            state: SeState {
                device_id: p.device_id,
                balance_blinding: Scalar::hash_from(&[b"se/balance-blinding", &p.prf_seed]),
                cum_blinding: cum_blinding(&p.prf_seed, 0),
                keys: p.keys,
                prf_seed: p.prf_seed,
                counter: 0,
                counter_base: 0,
                balance: 0,
                cum_spent: 0,
                cum_resets: 0,
                certificate: p.certificate,
                owner_pk: p.owner_pk,
                fi_pub: p.fi_pub,
                log_head: genesis_head(&p.device_id),
                log_len: 0,
                used_nonces: BTreeSet::new(),
            },
            #[cfg(feature = "attack-harness")]
            snapshot: None,
        })
    }

    pub fn device_id(&self) -> &DeviceId {
        &self.state.device_id
    }

    pub fn public_key(&self) -> &GroupElement {
        self.state.keys.public()
    }

    pub fn certificate(&self) -> &WalletCertificate {
        &self.state.certificate
    }

    pub fn counter(&self) -> u64 {
        self.state.counter
    }

    /// Offline transactions still allowed before the next sync.
    pub fn remaining_tx(&self) -> u64 {
        let used = self.state.counter - self.state.counter_base;
        self.state.certificate.limits.max_tx.saturating_sub(used)
    }

    /// Spendable balance, visible to the device's owner.
    pub fn balance(&self) -> u64 {
        self.state.balance
    }

    pub fn cum_spent(&self) -> u64 {
        self.state.cum_spent
    }

    pub fn log_head(&self) -> &[u8; 32] {
        &self.state.log_head
    }

    pub fn log_len(&self) -> u64 {
        self.state.log_len
    }

    pub fn balance_commitment(&self) -> GroupElement {
        PedersenParams::standard().commit_u64(self.state.balance, &self.state.balance_blinding)
    }

    pub fn cum_commitment(&self) -> GroupElement {
        PedersenParams::standard().commit_u64(self.state.cum_spent, &self.state.cum_blinding)
    }

    /// Signature over the current committed state.
    pub fn state_signature(&self) -> Signature {
        let msg = state_message(self.public_key(), &self.balance_commitment(), &self.cum_commitment());
        self.state.keys.sign(&msg)
    }

    fn append(&mut self, tx_id: [u8; 32], role: LogRole, detail: EntryDetail) -> OfflineLogEntry {
        let prev_head = self.state.log_head;
        let entry_sig = self
            .state
            .keys
            .sign(&OfflineLogEntry::signed_message(&tx_id, role, &detail, &prev_head));
        let entry = OfflineLogEntry {
            tx_id,
            role,
            detail,
            prev_head,
            entry_sig,
        };
        self.state.log_head = entry.next_head();
        self.state.log_len += 1;
        entry
    }

    pub fn load_value(&mut self, record: &AllocationRecord) -> Result<OfflineLogEntry, SeError> {
        if record.device_id != self.state.device_id || record.amount == 0 || !record.verify(&self.state.owner_pk) {
            return Err(SeError::AllocationInvalid);
        }
        if self.state.used_nonces.contains(&record.nonce) {
            return Err(SeError::AllocationReplay);
        }
        let new_balance = self.state.balance.checked_add(record.amount).ok_or(SeError::ExceedsDeviceLimit)?;
        if new_balance >= AMOUNT_BOUND {
            return Err(SeError::ExceedsDeviceLimit);
        }
        self.state.used_nonces.insert(record.nonce);
        self.state.balance = new_balance;
        let tx_id = record.tx_id();
        Ok(self.append(tx_id, LogRole::Load, EntryDetail::Value { amount: record.amount }))
    }

    /// Debits `amount`, logs the payer entry and only then releases the
    /// compliance bundle.
    pub fn authorize_payment(&mut self, amount: u64, ctx: PaymentContext) -> Result<Authorization, SeError> {
        let limits = self.state.certificate.limits;
        if self.state.certificate.is_expired(ctx.epoch) {
            return Err(SeError::CredentialExpired);
        }
        if self.remaining_tx() == 0 {
            return Err(SeError::CounterExhausted);
        }
        if amount == 0 || amount > limits.per_tx_cap {
            return Err(SeError::ValueInvalid);
        }
        if amount > self.state.balance {
            return Err(SeError::InsufficientFunds);
        }
        if self.state.cum_spent + amount > limits.cum_limit {
            return Err(SeError::LimitExceeded);
        }

        // Counter first: once incremented, this nullifier is consumed even if
        // anything below fails.
        self.state.counter += 1;
        let counter = self.state.counter;
        let nullifier = Nullifier::derive(&self.state.prf_seed, counter);
        let public_inputs = PublicInputs {
            c_balance_before: self.balance_commitment(),
            c_cum_before: self.cum_commitment(),
            amount,
            cum_limit: limits.cum_limit,
            per_tx_cap: limits.per_tx_cap,
            certificate: self.state.certificate.clone(),
            tx_id: nullifier.tx_id(),
            epoch: ctx.epoch,
            payee: ctx.payee,
        };
        let witness = ComplianceWitness {
            balance: self.state.balance,
            balance_blinding: self.state.balance_blinding,
            cum_spent: self.state.cum_spent,
            cum_blinding: self.state.cum_blinding,
            keys: &self.state.keys,
            prf_seed: &self.state.prf_seed,
            counter,
        };
        let bundle = build_compliance_bundle(PedersenParams::standard(), &witness, &public_inputs)?;

        self.state.balance -= amount;
        self.state.cum_spent += amount;
        let entry = self.append(
            public_inputs.tx_id,
            LogRole::Payer,
            EntryDetail::Payment {
                public_inputs: public_inputs.clone(),
                bundle_hash: bundle.digest(),
            },
        );
        Ok(Authorization {
            public_inputs,
            bundle,
            entry,
        })
    }

    /// Logs a received payment. The amount is not added to the spendable
    /// balance; the intermediary credits it at sync.
    pub fn record_incoming(&mut self, incoming: IncomingPayment) -> Result<OfflineLogEntry, SeError> {
        if incoming.prev_head != self.state.log_head {
            return Err(SeError::LogCorrupt);
        }
        Ok(self.append(
            incoming.tx_id,
            LogRole::Payee,
            EntryDetail::Payment {
                public_inputs: incoming.public_inputs,
                bundle_hash: incoming.bundle_hash,
            },
        ))
    }

    /// Empties the spendable balance back to the main wallet. Returns `None`
    /// when there is nothing to reclaim.
    pub fn reclaim(&mut self) -> Option<(u64, OfflineLogEntry)> {
        let amount = self.state.balance;
        if amount == 0 {
            return None;
        }
        self.state.balance = 0;
        let tx_id = hash::tagged(
            b"reclaim/v1",
            &[&self.state.device_id, &self.state.log_len.to_be_bytes()],
        );
        Some((amount, self.append(tx_id, LogRole::Reclaim, EntryDetail::Value { amount })))
    }

    /// Applies an FI acknowledgement. If it covers the whole log, the
    /// cumulative spend and the transaction budget start over. Returns whether
    /// the reset happened.
    pub fn apply_sync_ack(&mut self, ack: &SyncAck) -> Result<bool, SeError> {
        if ack.device_id != self.state.device_id || !ack.verify(&self.state.fi_pub) {
            return Err(SeError::AckInvalid);
        }
        if ack.log_len != self.state.log_len || ack.head != self.state.log_head {
            return Ok(false);
        }
        self.state.cum_resets += 1;
        self.state.cum_spent = 0;
        self.state.cum_blinding = cum_blinding(&self.state.prf_seed, self.state.cum_resets);
        self.state.counter_base = self.state.counter;
        Ok(true)
    }

    /// Installs a renewed certificate for the same key.
    pub fn install_certificate(&mut self, cert: WalletCertificate) -> Result<(), SeError> {
        if cert.subject_pk != *self.public_key() {
            return Err(SeError::ProvisionMismatch);
        }
        if !cert.limits.within_proof_bounds() {
            return Err(SeError::PolicyBound);
        }
        if !cert.verify(&self.state.fi_pub) {
            return Err(SeError::CertificateInvalid);
        }
        self.state.certificate = cert;
        Ok(())
    }

    /// Signs protocol messages with the device key. Only `protocol/` domains
    /// are accepted so the key cannot be used to forge state attestations.
    pub fn sign_protocol(&self, domain: &[u8], message: &[u8]) -> Option<Signature> {
        if !domain.starts_with(b"protocol/") {
            return None;
        }
        let mut m = Vec::with_capacity(domain.len() + message.len());
        m.extend_from_slice(domain);
        m.extend_from_slice(message);
        Some(self.state.keys.sign(&m))
    }
}

#[cfg(feature = "attack-harness")]
impl SecureElement {
    /// Captures the full internal state, modelling a cloned SE.
    pub fn snapshot(&mut self) {
        self.snapshot = Some(self.state.clone());
    }

    /// Rolls the SE back to the captured state.
    pub fn restore(&mut self) -> Result<(), SeError> {
        let s = self.snapshot.clone().ok_or(SeError::NoSnapshot)?;
        self.state = s;
        Ok(())
    }
}
