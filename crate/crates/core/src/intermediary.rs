//! Financial intermediary: onboarding, certificates, issuance, reconciliation
//! of offline logs with double-spend detection, and grant-gated audit.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::string::String;
use alloc::vec::Vec;

use thiserror::Error;

use crate::codec::{put_bytes, put_list, put_u64, Decode, DecodeError, Encode, Reader};
use crate::crypto::{GroupElement, KeyPair, PedersenParams, Signature};
use crate::ledger::{EntryKind, Ledger, LedgerEntry};
use crate::protocol::Receipt;
use crate::secure_element::{genesis_head, verify_log_chain_from, LogRole, OfflineLogEntry};
use crate::wallet::{device_id_for, device_pseudonym, wallet_pseudonym, DeviceSync, Evidence, SyncPayload};
use crate::zkp::{verify_compliance_bundle, ComplianceBundle, PublicInputs, RejectReason, VerifyOutcome};
use crate::{hash, DeviceId, Limits, OwnerId, WalletCertificate};

/// FI acknowledgement of a device log prefix.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SyncAck {
    pub device_id: DeviceId,
    pub log_len: u64,
    pub head: [u8; 32],
    pub sig: Signature,
}

impl SyncAck {
    fn message(device_id: &DeviceId, log_len: u64, head: &[u8; 32]) -> Vec<u8> {
        let mut m = Vec::with_capacity(11 + 16 + 8 + 32);
        m.extend_from_slice(b"sync-ack/v1");
        m.extend_from_slice(device_id);
        put_u64(&mut m, log_len);
        m.extend_from_slice(head);
        m
    }

    pub fn sign(fi: &KeyPair, device_id: DeviceId, log_len: u64, head: [u8; 32]) -> Self {
        SyncAck {
            device_id,
            log_len,
            head,
            sig: fi.sign(&Self::message(&device_id, log_len, &head)),
        }
    }

    pub fn verify(&self, fi_pub: &GroupElement) -> bool {
        self.sig
            .verify(fi_pub, &Self::message(&self.device_id, self.log_len, &self.head))
    }
}

impl Encode for SyncAck {
    fn encode_to(&self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.device_id);
        put_u64(out, self.log_len);
        out.extend_from_slice(&self.head);
        self.sig.encode_to(out);
    }
}

impl Decode for SyncAck {
    fn decode_from(r: &mut Reader<'_>) -> Result<Self, DecodeError> {
        Ok(SyncAck {
            device_id: r.array()?,
            log_len: r.u64()?,
            head: r.array()?,
            sig: Signature::decode_from(r)?,
        })
    }
}

/// KYC document. The stub policy denies sanctioned customers only.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct KycDoc {
    pub name: String,
    pub sanctioned: bool,
}

impl KycDoc {
    pub fn owner_id(&self) -> OwnerId {
        let h = hash::tagged(b"owner-id/v1", &[self.name.as_bytes()]);
        let mut id = [0u8; 16];
        id.copy_from_slice(&h[..16]);
        id
    }
}

impl Encode for KycDoc {
    fn encode_to(&self, out: &mut Vec<u8>) {
        put_bytes(out, self.name.as_bytes());
        out.push(self.sanctioned as u8);
    }
}

impl Decode for KycDoc {
    fn decode_from(r: &mut Reader<'_>) -> Result<Self, DecodeError> {
        let name = r.string()?;
        let sanctioned = match r.u8()? {
            0 => false,
            1 => true,
            t => return Err(DecodeError::InvalidTag(t)),
        };
        Ok(KycDoc { name, sanctioned })
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CustomerRecord {
    pub owner_id: OwnerId,
    pub identity: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
pub enum FiError {
    #[error("customer denied at onboarding")]
    Denied,
    #[error("unknown customer")]
    UnknownCustomer,
    #[error("unknown device")]
    UnknownDevice,
    #[error("limits exceed policy bounds")]
    PolicyBound,
    #[error("amount must be positive")]
    ValueInvalid,
    #[error("device is frozen")]
    Frozen,
    #[error("customer has no registered main wallet")]
    NoWallet,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
pub enum AuditError {
    #[error("audit grant does not verify")]
    GrantInvalid,
    #[error("nothing recorded for this scope")]
    ScopeUnknown,
}

/// Why a synced log entry was not accepted.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EntryRejection {
    UnknownDevice,
    OwnerMismatch,
    /// The uploaded chain does not link to the acknowledged prefix or a
    /// signature fails.
    ChainInvalid,
    /// Evidence is missing, of the wrong kind or does not match the entry.
    EvidenceMismatch,
    AllocationInvalid,
    Bundle(RejectReason),
    AcceptInvalid,
    CommitInvalid,
}

impl EntryRejection {
    pub fn as_str(&self) -> &'static str {
        match self {
            EntryRejection::UnknownDevice => "unknown_device",
            EntryRejection::OwnerMismatch => "owner_mismatch",
            EntryRejection::ChainInvalid => "chain_invalid",
            EntryRejection::EvidenceMismatch => "evidence_mismatch",
            EntryRejection::AllocationInvalid => "allocation_invalid",
            EntryRejection::Bundle(r) => r.as_str(),
            EntryRejection::AcceptInvalid => "accept_invalid",
            EntryRejection::CommitInvalid => "commit_invalid",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Credit {
    /// Payee main-wallet pseudonym.
    pub payee: [u8; 32],
    pub amount: u64,
    pub tx_id: [u8; 32],
}

/// A payment that never reached its payee; the payer's wallet is recredited.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Void {
    /// Payer main-wallet pseudonym.
    pub payer: [u8; 32],
    pub amount: u64,
    pub tx_id: [u8; 32],
}

/// Payer-side debit, expressed in commitments only.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Debit {
    pub payer: [u8; 32],
    pub tx_id: [u8; 32],
    pub c_balance_before: GroupElement,
    pub c_balance_after: GroupElement,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DoubleSpend {
    pub nullifier: [u8; 32],
    pub tx_id: [u8; 32],
    /// Every distinct bundle seen under this nullifier, first one first.
    pub bundle_hashes: Vec<[u8; 32]>,
    pub device: [u8; 32],
}

/// A credit refused because the receiving side is frozen.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Withheld {
    pub device: [u8; 32],
    pub amount: u64,
    pub tx_id: [u8; 32],
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RejectedEntry {
    pub device: [u8; 32],
    pub log_index: u64,
    pub tx_id: [u8; 32],
    pub reason: EntryRejection,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct ReconciliationReport {
    pub credits: Vec<Credit>,
    pub voided: Vec<Void>,
    pub debits: Vec<Debit>,
    pub double_spends: Vec<DoubleSpend>,
    pub withheld: Vec<Withheld>,
    pub rejected_entries: Vec<RejectedEntry>,
    pub acks: Vec<SyncAck>,
    /// Hash of the ledger entry recording this report; `None` if nothing
    /// was synced.
    pub ledger_delta_id: Option<[u8; 32]>,
}

impl ReconciliationReport {
    pub fn is_empty(&self) -> bool {
        self.credits.is_empty()
            && self.voided.is_empty()
            && self.debits.is_empty()
            && self.double_spends.is_empty()
            && self.withheld.is_empty()
            && self.rejected_entries.is_empty()
            && self.acks.is_empty()
    }

    pub fn credited_total(&self) -> u64 {
        self.credits.iter().map(|c| c.amount).sum()
    }

    /// Digest over every field except `ledger_delta_id`.
    pub fn digest(&self) -> [u8; 32] {
        let mut out = Vec::new();
        put_u64(&mut out, self.credits.len() as u64);
        for c in &self.credits {
            out.extend_from_slice(&c.payee);
            put_u64(&mut out, c.amount);
            out.extend_from_slice(&c.tx_id);
        }
        put_u64(&mut out, self.voided.len() as u64);
        for v in &self.voided {
            out.extend_from_slice(&v.payer);
            put_u64(&mut out, v.amount);
            out.extend_from_slice(&v.tx_id);
        }
        put_u64(&mut out, self.debits.len() as u64);
        for d in &self.debits {
            out.extend_from_slice(&d.payer);
            out.extend_from_slice(&d.tx_id);
            d.c_balance_before.encode_to(&mut out);
            d.c_balance_after.encode_to(&mut out);
        }
        put_u64(&mut out, self.double_spends.len() as u64);
        for d in &self.double_spends {
            out.extend_from_slice(&d.nullifier);
            out.extend_from_slice(&d.tx_id);
            put_list(&mut out, &d.bundle_hashes);
            out.extend_from_slice(&d.device);
        }
        put_u64(&mut out, self.withheld.len() as u64);
        for w in &self.withheld {
            out.extend_from_slice(&w.device);
            put_u64(&mut out, w.amount);
            out.extend_from_slice(&w.tx_id);
        }
        put_u64(&mut out, self.rejected_entries.len() as u64);
        for r in &self.rejected_entries {
            out.extend_from_slice(&r.device);
            put_u64(&mut out, r.log_index);
            out.extend_from_slice(&r.tx_id);
            put_bytes(&mut out, r.reason.as_str().as_bytes());
        }
        put_list(&mut out, &self.acks);
        hash::tagged(b"recon-report/v1", &[&out])
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum AuditScope {
    TxId([u8; 32]),
    Nullifier([u8; 32]),
    /// Device pseudonym.
    Device([u8; 32]),
}

impl AuditScope {
    fn tag_and_bytes(&self) -> (u8, &[u8; 32]) {
        match self {
            AuditScope::TxId(b) => (1, b),
            AuditScope::Nullifier(b) => (2, b),
            AuditScope::Device(b) => (3, b),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AuditGrant {
    pub scope: AuditScope,
    pub grant_sig: Signature,
}

impl AuditGrant {
    fn message(scope: &AuditScope) -> Vec<u8> {
        let (tag, b) = scope.tag_and_bytes();
        let mut m = Vec::with_capacity(14 + 33);
        m.extend_from_slice(b"audit-grant/v1");
        m.push(tag);
        m.extend_from_slice(b);
        m
    }

    pub fn sign(auditor: &KeyPair, scope: AuditScope) -> Self {
        let grant_sig = auditor.sign(&Self::message(&scope));
        AuditGrant { scope, grant_sig }
    }

    pub fn verify(&self, auditor_pk: &GroupElement) -> bool {
        self.grant_sig.verify(auditor_pk, &Self::message(&self.scope))
    }
}

impl Encode for AuditGrant {
    fn encode_to(&self, out: &mut Vec<u8>) {
        let (tag, b) = self.scope.tag_and_bytes();
        out.push(tag);
        out.extend_from_slice(b);
        self.grant_sig.encode_to(out);
    }
}

impl Decode for AuditGrant {
    fn decode_from(r: &mut Reader<'_>) -> Result<Self, DecodeError> {
        let tag = r.u8()?;
        let b = r.array()?;
        let scope = match tag {
            1 => AuditScope::TxId(b),
            2 => AuditScope::Nullifier(b),
            3 => AuditScope::Device(b),
            t => return Err(DecodeError::InvalidTag(t)),
        };
        Ok(AuditGrant {
            scope,
            grant_sig: Signature::decode_from(r)?,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Disclosure {
    pub tx_id: [u8; 32],
    pub nullifier: [u8; 32],
    /// Identity of the paying customer.
    pub owner_identity: String,
    pub amount: u64,
    /// Payee device pseudonym.
    pub counterparty: [u8; 32],
    pub payer_device: [u8; 32],
}

struct Customer {
    identity: String,
    wallet_pk: Option<GroupElement>,
}

struct DeviceRecord {
    owner: OwnerId,
    pk: GroupElement,
    pseudonym: [u8; 32],
    /// `heads[i]` is the log head after `i` acknowledged entries.
    heads: Vec<[u8; 32]>,
    frozen: bool,
}

struct NullifierGroup {
    tx_id: [u8; 32],
    payer_device: DeviceId,
    bundles: Vec<[u8; 32]>,
}

/// One observation of a payment during reconciliation.
struct Observation<'a> {
    public_inputs: &'a PublicInputs,
    bundle: &'a ComplianceBundle,
    bundle_hash: [u8; 32],
    /// A payee receipt, or a payer entry holding the payee's accept.
    confirmed: bool,
    payer_side: bool,
}

pub struct Intermediary {
    keys: KeyPair,
    auditor_pk: GroupElement,
    policy: Limits,
    customers: BTreeMap<OwnerId, Customer>,
    devices: BTreeMap<DeviceId, DeviceRecord>,
    nullifiers: BTreeMap<[u8; 32], NullifierGroup>,
    /// Payments (by bundle hash) already credited, voided or flagged.
    resolved: BTreeSet<[u8; 32]>,
    debited: BTreeSet<[u8; 32]>,
    /// (bundle, public inputs) pairs that already passed verification; the
    /// payer and payee copies of a payment are checked once.
    verified: BTreeSet<[u8; 32]>,
    withheld_total: u64,
    disclosures: Vec<Disclosure>,
    ledger: Ledger,
}

impl Intermediary {
    pub fn new(keys: KeyPair, auditor_pk: GroupElement, policy: Limits) -> Self {
        Intermediary {
            keys,
            auditor_pk,
            policy,
            customers: BTreeMap::new(),
            devices: BTreeMap::new(),
            nullifiers: BTreeMap::new(),
            resolved: BTreeSet::new(),
            debited: BTreeSet::new(),
            verified: BTreeSet::new(),
            withheld_total: 0,
            disclosures: Vec::new(),
            ledger: Ledger::new(),
        }
    }

    pub fn public_key(&self) -> &GroupElement {
        self.keys.public()
    }

    pub fn ledger(&self) -> &Ledger {
        &self.ledger
    }

    /// Value the intermediary refused to credit because of a freeze.
    pub fn withheld_total(&self) -> u64 {
        self.withheld_total
    }

    pub fn is_resolved(&self, bundle_hash: &[u8; 32]) -> bool {
        self.resolved.contains(bundle_hash)
    }

    pub fn is_frozen(&self, device_id: &DeviceId) -> bool {
        self.devices.get(device_id).is_some_and(|d| d.frozen)
    }

    /// Idempotent: the owner id is a hash of the identity.
    pub fn onboard_customer(&mut self, doc: &KycDoc) -> Result<CustomerRecord, FiError> {
        if doc.sanctioned {
            return Err(FiError::Denied);
        }
        let owner_id = doc.owner_id();
        self.customers.entry(owner_id).or_insert_with(|| Customer {
            identity: doc.name.clone(),
            wallet_pk: None,
        });
        Ok(CustomerRecord {
            owner_id,
            identity: doc.name.clone(),
        })
    }

    pub fn onboard_customer_bytes(&mut self, doc: &[u8]) -> Result<Result<CustomerRecord, FiError>, DecodeError> {
        Ok(self.onboard_customer(&KycDoc::from_bytes(doc)?))
    }

    pub fn register_wallet(&mut self, owner: &OwnerId, wallet_pk: GroupElement) -> Result<(), FiError> {
        let c = self.customers.get_mut(owner).ok_or(FiError::UnknownCustomer)?;
        c.wallet_pk = Some(wallet_pk);
        Ok(())
    }

    fn check_policy(&self, limits: &Limits) -> Result<(), FiError> {
        let p = &self.policy;
        if !limits.within_proof_bounds()
            || limits.cum_limit > p.cum_limit
            || limits.per_tx_cap > p.per_tx_cap
            || limits.max_tx > p.max_tx
        {
            return Err(FiError::PolicyBound);
        }
        Ok(())
    }

    pub fn issue_certificate(
        &self,
        owner: &OwnerId,
        subject_pk: GroupElement,
        limits: Limits,
        expiry_epoch: u64,
    ) -> Result<WalletCertificate, FiError> {
        if !self.customers.contains_key(owner) {
            return Err(FiError::UnknownCustomer);
        }
        self.check_policy(&limits)?;
        Ok(WalletCertificate::issue(&self.keys, subject_pk, limits, expiry_epoch))
    }

    /// Registers a device key under a customer and certifies it. Returns the
    /// device id derived from the key.
    pub fn enroll_device(
        &mut self,
        owner: &OwnerId,
        device_pk: GroupElement,
        limits: Limits,
        expiry_epoch: u64,
    ) -> Result<(DeviceId, WalletCertificate), FiError> {
        let cert = self.issue_certificate(owner, device_pk, limits, expiry_epoch)?;
        let id = device_id_for(&device_pk);
        self.devices.entry(id).or_insert_with(|| DeviceRecord {
            owner: *owner,
            pk: device_pk,
            pseudonym: device_pseudonym(&device_pk),
            heads: alloc::vec![genesis_head(&id)],
            frozen: false,
        });
        Ok((id, cert))
    }

    /// New certificate for an enrolled device; refused once it is frozen.
    pub fn renew_certificate(&self, device_id: &DeviceId, limits: Limits, expiry_epoch: u64) -> Result<WalletCertificate, FiError> {
        let d = self.devices.get(device_id).ok_or(FiError::UnknownDevice)?;
        if d.frozen {
            return Err(FiError::Frozen);
        }
        self.issue_certificate(&d.owner, d.pk, limits, expiry_epoch)
    }

    /// Records an issuance on the ledger. The caller credits the wallet.
    pub fn issue_cbdc(&mut self, owner: &OwnerId, amount: u64) -> Result<LedgerEntry, FiError> {
        if amount == 0 || amount > i64::MAX as u64 {
            return Err(FiError::ValueInvalid);
        }
        let c = self.customers.get(owner).ok_or(FiError::UnknownCustomer)?;
        let pk = c.wallet_pk.ok_or(FiError::NoWallet)?;
        let payload = hash::tagged(b"issuance/v1", &[&wallet_pseudonym(&pk), &amount.to_be_bytes()]);
        Ok(self.ledger.append(EntryKind::Issuance, payload, amount as i64))
    }

    fn owner_pseudonym(&self, owner: &OwnerId) -> Option<[u8; 32]> {
        self.customers
            .get(owner)
            .and_then(|c| c.wallet_pk.as_ref())
            .map(wallet_pseudonym)
    }

    /// Verifies uploaded logs, settles payments and flags reused nullifiers.
    /// Deterministic in the order of `payloads`.
    pub fn reconcile(&mut self, payloads: &[SyncPayload], _now_epoch: u64) -> ReconciliationReport {
        let mut report = ReconciliationReport::default();
        for payload in payloads {
            for ds in &payload.devices {
                self.reconcile_device(&payload.owner_id, ds, &mut report);
            }
        }
        if !report.is_empty() {
            let e = self.ledger.append(EntryKind::Reconciliation, report.digest(), 0);
            report.ledger_delta_id = Some(e.hash());
        }
        report
    }

    fn reconcile_device(&mut self, owner: &OwnerId, ds: &DeviceSync, report: &mut ReconciliationReport) {
        let reject_all = |report: &mut ReconciliationReport, device: [u8; 32], reason: EntryRejection| {
            for (i, e) in ds.entries.iter().enumerate() {
                report.rejected_entries.push(RejectedEntry {
                    device,
                    log_index: ds.from_index + i as u64,
                    tx_id: e.entry.tx_id,
                    reason,
                });
            }
        };
        let Some(rec) = self.devices.get(&ds.device_id) else {
            reject_all(report, [0; 32], EntryRejection::UnknownDevice);
            return;
        };
        let (pk, pseudonym) = (rec.pk, rec.pseudonym);
        if rec.owner != *owner {
            reject_all(report, pseudonym, EntryRejection::OwnerMismatch);
            return;
        }
        let from = ds.from_index as usize;
        let entries: Vec<OfflineLogEntry> = ds.entries.iter().map(|e| e.entry.clone()).collect();
        if from >= rec.heads.len() || !verify_log_chain_from(&rec.heads[from], &entries, &ds.head, &pk) {
            reject_all(report, pseudonym, EntryRejection::ChainInvalid);
            return;
        }

        let known = rec.heads.len() - 1;
        let mut fork = false;
        let mut new_heads = Vec::with_capacity(entries.len());
        for (i, se) in ds.entries.iter().enumerate() {
            let index = from + i;
            let head = se.entry.next_head();
            new_heads.push(head);
            if !fork && index < known && self.devices[&ds.device_id].heads[index + 1] == head {
                continue;
            }
            if index < known {
                // A second, validly signed history over an acknowledged
                // prefix: the SE was cloned or rolled back.
                fork = true;
            }
            if let Err(reason) = self.process_entry(owner, &ds.device_id, &pk, &se.entry, &se.evidence, report) {
                report.rejected_entries.push(RejectedEntry {
                    device: pseudonym,
                    log_index: index as u64,
                    tx_id: se.entry.tx_id,
                    reason,
                });
            }
        }

        let rec = self.devices.get_mut(&ds.device_id).expect("checked above");
        if fork {
            rec.frozen = true;
        }
        rec.heads.truncate(from + 1);
        rec.heads.extend(new_heads);
        let len = rec.heads.len() as u64 - 1;
        report
            .acks
            .push(SyncAck::sign(&self.keys, ds.device_id, len, ds.head));
    }

    fn process_entry(
        &mut self,
        owner: &OwnerId,
        device_id: &DeviceId,
        pk: &GroupElement,
        entry: &OfflineLogEntry,
        evidence: &Evidence,
        report: &mut ReconciliationReport,
    ) -> Result<(), EntryRejection> {
        match (entry.role, evidence) {
            (LogRole::Load, Evidence::Allocation(a)) => {
                let wallet_pk = self
                    .customers
                    .get(owner)
                    .and_then(|c| c.wallet_pk)
                    .ok_or(EntryRejection::AllocationInvalid)?;
                if a.tx_id() != entry.tx_id || a.amount != entry.amount() || a.device_id != *device_id {
                    return Err(EntryRejection::EvidenceMismatch);
                }
                if !a.verify(&wallet_pk) {
                    return Err(EntryRejection::AllocationInvalid);
                }
                Ok(())
            }
            (LogRole::Reclaim, Evidence::Reclaim) => Ok(()),
            (LogRole::Payer, Evidence::Payment { bundle, accept }) => {
                let pub_in = entry.public_inputs().ok_or(EntryRejection::EvidenceMismatch)?;
                let bundle_hash = self.check_bundle(entry, pub_in, bundle, pk)?;
                let confirmed = match accept {
                    None => false,
                    Some(acc) => {
                        if acc.tx_id != entry.tx_id
                            || !acc.payee_cert.verify(self.keys.public())
                            || !acc.verify()
                            || device_id_for(&acc.payee_cert.subject_pk) != pub_in.payee
                        {
                            return Err(EntryRejection::AcceptInvalid);
                        }
                        true
                    }
                };
                self.observe(
                    Observation {
                        public_inputs: pub_in,
                        bundle,
                        bundle_hash,
                        confirmed,
                        payer_side: true,
                    },
                    report,
                );
                Ok(())
            }
            (LogRole::Payee, Evidence::Receipt(r)) => {
                let pub_in = entry.public_inputs().ok_or(EntryRejection::EvidenceMismatch)?;
                let bundle_hash = self.check_receipt(entry, pub_in, r, device_id, pk)?;
                self.observe(
                    Observation {
                        public_inputs: pub_in,
                        bundle: &r.bundle,
                        bundle_hash,
                        confirmed: true,
                        payer_side: false,
                    },
                    report,
                );
                Ok(())
            }
            _ => Err(EntryRejection::EvidenceMismatch),
        }
    }

    fn check_bundle(
        &mut self,
        entry: &OfflineLogEntry,
        pub_in: &PublicInputs,
        bundle: &ComplianceBundle,
        payer_pk: &GroupElement,
    ) -> Result<[u8; 32], EntryRejection> {
        let bundle_hash = bundle.digest();
        if entry.bundle_hash() != Some(&bundle_hash) || pub_in.tx_id != entry.tx_id {
            return Err(EntryRejection::EvidenceMismatch);
        }
        if pub_in.certificate.subject_pk != *payer_pk {
            return Err(EntryRejection::Bundle(RejectReason::CertificateInvalid));
        }
        let key = hash::tagged(b"verified/v1", &[&bundle_hash, &pub_in.digest()]);
        if self.verified.contains(&key) {
            return Ok(bundle_hash);
        }
        // Judged at the epoch the payment was made in.
        match verify_compliance_bundle(PedersenParams::standard(), bundle, pub_in, self.keys.public(), pub_in.epoch) {
            VerifyOutcome::Accept => {
                self.verified.insert(key);
                Ok(bundle_hash)
            }
            VerifyOutcome::Reject(r) => Err(EntryRejection::Bundle(r)),
        }
    }

    fn check_receipt(
        &mut self,
        entry: &OfflineLogEntry,
        pub_in: &PublicInputs,
        r: &Receipt,
        device_id: &DeviceId,
        pk: &GroupElement,
    ) -> Result<[u8; 32], EntryRejection> {
        if pub_in.payee != *device_id {
            return Err(EntryRejection::Bundle(RejectReason::WrongPayee));
        }
        let bundle_hash = self.check_bundle(entry, pub_in, &r.bundle, &pub_in.certificate.subject_pk)?;
        if r.accept.tx_id != entry.tx_id || r.accept.payee_cert.subject_pk != *pk || !r.accept.verify() {
            return Err(EntryRejection::AcceptInvalid);
        }
        if !r.commit.verify(&pub_in.certificate, &r.accept) {
            return Err(EntryRejection::CommitInvalid);
        }
        Ok(bundle_hash)
    }

    fn observe(&mut self, obs: Observation<'_>, report: &mut ReconciliationReport) {
        let pub_in = obs.public_inputs;
        let nullifier = *obs.bundle.nullifier.as_bytes();
        let payer_device = device_id_for(&pub_in.certificate.subject_pk);
        let payer_pseudonym = device_pseudonym(&pub_in.certificate.subject_pk);

        let group = self.nullifiers.entry(nullifier).or_insert_with(|| NullifierGroup {
            tx_id: pub_in.tx_id,
            payer_device,
            bundles: Vec::new(),
        });
        let winner = *group.bundles.first().unwrap_or(&obs.bundle_hash);
        if !group.bundles.contains(&obs.bundle_hash) {
            group.bundles.push(obs.bundle_hash);
            if group.bundles.len() >= 2 {
                let record = DoubleSpend {
                    nullifier,
                    tx_id: group.tx_id,
                    bundle_hashes: group.bundles.clone(),
                    device: payer_pseudonym,
                };
                match report.double_spends.iter_mut().find(|d| d.nullifier == nullifier) {
                    Some(d) => *d = record,
                    None => report.double_spends.push(record),
                }
                let dev = group.payer_device;
                if let Some(d) = self.devices.get_mut(&dev) {
                    d.frozen = true;
                }
            }
        }

        if obs.payer_side && self.debited.insert(obs.bundle_hash) {
            report.debits.push(Debit {
                payer: payer_pseudonym,
                tx_id: pub_in.tx_id,
                c_balance_before: pub_in.c_balance_before,
                c_balance_after: obs.bundle.c_balance_after,
            });
        }

        if self.resolved.contains(&obs.bundle_hash) {
            return;
        }
        self.resolved.insert(obs.bundle_hash);
        if winner != obs.bundle_hash {
            // Flagged duplicate: never credited.
            return;
        }

        let amount = pub_in.amount;
        let tx_id = pub_in.tx_id;
        let (beneficiary_device, is_credit) = if obs.confirmed {
            (pub_in.payee, true)
        } else {
            (payer_device, false)
        };
        let Some(rec) = self.devices.get(&beneficiary_device) else {
            // Payee never enrolled here; nothing can be credited.
            self.withheld_total += amount;
            report.withheld.push(Withheld {
                device: [0; 32],
                amount,
                tx_id,
            });
            return;
        };
        let (frozen, owner, ben_pseudonym) = (rec.frozen, rec.owner, rec.pseudonym);
        match (frozen, self.owner_pseudonym(&owner)) {
            (false, Some(wallet)) if is_credit => report.credits.push(Credit {
                payee: wallet,
                amount,
                tx_id,
            }),
            (false, Some(wallet)) => report.voided.push(Void {
                payer: wallet,
                amount,
                tx_id,
            }),
            _ => {
                self.withheld_total += amount;
                report.withheld.push(Withheld {
                    device: ben_pseudonym,
                    amount,
                    tx_id,
                });
            }
        }
        if is_credit {
            let identity = self
                .devices
                .get(&payer_device)
                .and_then(|d| self.customers.get(&d.owner))
                .map(|c| c.identity.clone())
                .unwrap_or_default();
            self.disclosures.push(Disclosure {
                tx_id,
                nullifier,
                owner_identity: identity,
                amount,
                counterparty: ben_pseudonym,
                payer_device: payer_pseudonym,
            });
        }
    }

    /// Discloses the stored mapping for the grant's scope only.
    pub fn audit_disclose(&self, grant: &AuditGrant) -> Result<Vec<Disclosure>, AuditError> {
        if !grant.verify(&self.auditor_pk) {
            return Err(AuditError::GrantInvalid);
        }
        let hits: Vec<Disclosure> = self
            .disclosures
            .iter()
            .filter(|d| match &grant.scope {
                AuditScope::TxId(t) => d.tx_id == *t,
                AuditScope::Nullifier(n) => d.nullifier == *n,
                AuditScope::Device(p) => d.payer_device == *p,
            })
            .cloned()
            .collect();
        if hits.is_empty() {
            return Err(AuditError::ScopeUnknown);
        }
        Ok(hits)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sync_ack_verifies_under_fi_key_only() {
        let fi = KeyPair::from_seed(b"fi");
        let ack = SyncAck::sign(&fi, [2; 16], 5, [8; 32]);
        assert!(ack.verify(fi.public()));
        assert!(!ack.verify(KeyPair::from_seed(b"other").public()));
        let mut longer = ack.clone();
        longer.log_len = 6;
        assert!(!longer.verify(fi.public()));
        assert_eq!(SyncAck::from_bytes(&ack.to_bytes()).unwrap(), ack);
    }

    #[test]
    fn kyc_doc_decoding() {
        let doc = KycDoc {
            name: "alice".into(),
            sanctioned: false,
        };
        assert_eq!(KycDoc::from_bytes(&doc.to_bytes()).unwrap(), doc);
        let mut bad = doc.to_bytes();
        *bad.last_mut().unwrap() = 7;
        assert_eq!(KycDoc::from_bytes(&bad), Err(DecodeError::InvalidTag(7)));
    }

    #[test]
    fn grant_covers_only_its_scope() {
        let auditor = KeyPair::from_seed(b"auditor");
        let g = AuditGrant::sign(&auditor, AuditScope::Nullifier([1; 32]));
        assert!(g.verify(auditor.public()));
        let mut moved = g.clone();
        moved.scope = AuditScope::TxId([1; 32]);
        assert!(!moved.verify(auditor.public()));
        assert_eq!(AuditGrant::from_bytes(&g.to_bytes()).unwrap(), g);
    }

    #[test]
    fn empty_reconcile_appends_nothing() {
        let mut fi = Intermediary::new(KeyPair::from_seed(b"fi"), *KeyPair::from_seed(b"a").public(), Limits::REFERENCE);
        let r = fi.reconcile(&[], 1);
        assert!(r.is_empty());
        assert!(fi.ledger().is_empty());
    }
}
