//! Main wallet and IoT sub-wallets.
//!
//! The main wallet holds the FI-visible online balance and signs allocations
//! to its sub-wallets. Each sub-wallet is a [`Device`]: a secure element plus
//! the untrusted storage next to it (the log entries, the evidence backing
//! them and protocol sessions).

use alloc::collections::BTreeMap;
use alloc::vec::Vec;

use thiserror::Error;

use crate::codec::{put_list, put_u64, Decode, DecodeError, Encode, Reader};
use crate::crypto::{GroupElement, KeyPair, Signature};
use crate::intermediary::{ReconciliationReport, SyncAck};
use crate::protocol::{PayAccept, PayerSession, PayeeSession, Receipt};
use crate::secure_element::{LogRole, OfflineLogEntry, Provisioning, SeError, SecureElement};
use crate::zkp::ComplianceBundle;
use crate::{hash, DeviceId, OwnerId, WalletCertificate, AMOUNT_BOUND};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
pub enum WalletError {
    #[error("insufficient online balance")]
    Insufficient,
    #[error("unknown device")]
    UnknownDevice,
    #[error("device balance would exceed its limit")]
    ExceedsDeviceLimit,
    #[error("allocation amount must be positive")]
    ValueInvalid,
    #[error("device was provisioned for another wallet")]
    ForeignDevice,
    #[error("secure element: {0}")]
    Se(#[from] SeError),
}

/// Device identifier derived from its public key.
pub fn device_id_for(pk: &GroupElement) -> DeviceId {
    let h = hash::tagged(b"device-id/v1", &[&pk.encode()]);
    let mut id = [0u8; 16];
    id.copy_from_slice(&h[..16]);
    id
}

/// Pseudonym under which a main wallet appears in reconciliation reports.
pub fn wallet_pseudonym(pk: &GroupElement) -> [u8; 32] {
    hash::tagged(b"wallet-pseudonym/v1", &[&pk.encode()])
}

/// Pseudonym under which a device appears in reconciliation reports.
pub fn device_pseudonym(pk: &GroupElement) -> [u8; 32] {
    hash::tagged(b"device-pseudonym/v1", &[&pk.encode()])
}

/// Main-wallet authorization to move value onto a device.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AllocationRecord {
    pub device_id: DeviceId,
    pub amount: u64,
    pub nonce: [u8; 8],
    pub sig: Signature,
}

impl AllocationRecord {
    fn message(device_id: &DeviceId, amount: u64, nonce: &[u8; 8]) -> Vec<u8> {
        let mut m = Vec::with_capacity(13 + 16 + 16);
        m.extend_from_slice(b"allocation/v1");
        m.extend_from_slice(device_id);
        put_u64(&mut m, amount);
        m.extend_from_slice(nonce);
        m
    }

    pub fn sign(wallet: &KeyPair, device_id: DeviceId, amount: u64, nonce: [u8; 8]) -> Self {
        let sig = wallet.sign(&Self::message(&device_id, amount, &nonce));
        AllocationRecord {
            device_id,
            amount,
            nonce,
            sig,
        }
    }

    pub fn verify(&self, wallet_pk: &GroupElement) -> bool {
        self.sig
            .verify(wallet_pk, &Self::message(&self.device_id, self.amount, &self.nonce))
    }

    pub fn tx_id(&self) -> [u8; 32] {
        hash::tagged(b"alloc/v1", &[&self.device_id, &self.nonce])
    }
}

impl Encode for AllocationRecord {
    fn encode_to(&self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.device_id);
        put_u64(out, self.amount);
        out.extend_from_slice(&self.nonce);
        self.sig.encode_to(out);
    }
}

impl Decode for AllocationRecord {
    fn decode_from(r: &mut Reader<'_>) -> Result<Self, DecodeError> {
        Ok(AllocationRecord {
            device_id: r.array()?,
            amount: r.u64()?,
            nonce: r.array()?,
            sig: Signature::decode_from(r)?,
        })
    }
}

/// Material stored next to a log entry so the FI can verify it at sync.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Evidence {
    Allocation(AllocationRecord),
    /// Payer side. `accept` is filled in once the payee's accept arrives.
    Payment {
        bundle: ComplianceBundle,
        accept: Option<PayAccept>,
    },
    /// Payee side.
    Receipt(Receipt),
    Reclaim,
}

impl Encode for Evidence {
    fn encode_to(&self, out: &mut Vec<u8>) {
        match self {
            Evidence::Allocation(a) => {
                out.push(1);
                a.encode_to(out);
            }
            Evidence::Payment { bundle, accept } => {
                out.push(2);
                bundle.encode_to(out);
                crate::codec::put_option(out, accept);
            }
            Evidence::Receipt(r) => {
                out.push(3);
                r.encode_to(out);
            }
            Evidence::Reclaim => out.push(4),
        }
    }
}

impl Decode for Evidence {
    fn decode_from(r: &mut Reader<'_>) -> Result<Self, DecodeError> {
        Ok(match r.u8()? {
            1 => Evidence::Allocation(AllocationRecord::decode_from(r)?),
            2 => Evidence::Payment {
                bundle: ComplianceBundle::decode_from(r)?,
                accept: r.option()?,
            },
            3 => Evidence::Receipt(Receipt::decode_from(r)?),
            4 => Evidence::Reclaim,
            t => return Err(DecodeError::InvalidTag(t)),
        })
    }
}

/// An IoT sub-wallet.
pub struct Device {
    pub(crate) se: SecureElement,
    pub(crate) fi_pub: GroupElement,
    pub(crate) log: Vec<OfflineLogEntry>,
    pub(crate) evidence: Vec<Evidence>,
    /// Log entries below this index were acknowledged by the FI.
    pub(crate) synced_len: usize,
    pub(crate) payer_sessions: BTreeMap<[u8; 32], PayerSession>,
    pub(crate) payee_sessions: BTreeMap<[u8; 32], PayeeSession>,
    #[cfg(feature = "attack-harness")]
    snapshot: Option<DeviceStorageSnapshot>,
}

#[cfg(feature = "attack-harness")]
struct DeviceStorageSnapshot {
    log: Vec<OfflineLogEntry>,
    evidence: Vec<Evidence>,
    synced_len: usize,
    payer_sessions: BTreeMap<[u8; 32], PayerSession>,
    payee_sessions: BTreeMap<[u8; 32], PayeeSession>,
}

impl Device {
    pub fn provision(p: Provisioning) -> Result<Self, SeError> {
        let fi_pub = p.fi_pub;
        Ok(Device {
            se: SecureElement::provision(p)?,
            fi_pub,
            log: Vec::new(),
            evidence: Vec::new(),
            synced_len: 0,
            payer_sessions: BTreeMap::new(),
            payee_sessions: BTreeMap::new(),
            #[cfg(feature = "attack-harness")]
            snapshot: None,
        })
    }

    pub fn id(&self) -> &DeviceId {
        self.se.device_id()
    }

    pub fn se(&self) -> &SecureElement {
        &self.se
    }

    pub fn se_mut(&mut self) -> &mut SecureElement {
        &mut self.se
    }

    pub fn log(&self) -> &[OfflineLogEntry] {
        &self.log
    }

    pub fn evidence(&self) -> &[Evidence] {
        &self.evidence
    }

    pub fn synced_len(&self) -> usize {
        self.synced_len
    }

    /// Bytes of canonical log encoding held on the device.
    pub fn log_storage_bytes(&self) -> usize {
        self.log.iter().map(|e| e.to_bytes().len()).sum()
    }

    pub(crate) fn push(&mut self, entry: OfflineLogEntry, evidence: Evidence) -> usize {
        self.log.push(entry);
        self.evidence.push(evidence);
        self.log.len() - 1
    }

    /// Loads an allocation into the SE and files the record as evidence.
    pub fn load(&mut self, record: &AllocationRecord) -> Result<(), SeError> {
        let entry = self.se.load_value(record)?;
        self.push(entry, Evidence::Allocation(record.clone()));
        Ok(())
    }

    fn collect(&self) -> Option<DeviceSync> {
        let mut end = self.synced_len;
        while end < self.log.len() {
            let e = &self.log[end];
            if e.role == LogRole::Payer && self.payer_sessions.get(&e.tx_id).is_some_and(|s| s.in_flight()) {
                break;
            }
            end += 1;
        }
        if end == self.synced_len {
            return None;
        }
        let head = self.log[end - 1].next_head();
        Some(DeviceSync {
            device_id: *self.id(),
            from_index: self.synced_len as u64,
            head,
            entries: self.log[self.synced_len..end]
                .iter()
                .cloned()
                .zip(self.evidence[self.synced_len..end].iter().cloned())
                .map(|(entry, evidence)| SyncEntry { entry, evidence })
                .collect(),
        })
    }

    /// Advances the sync marker and lets the SE reset its offline budget.
    pub fn apply_ack(&mut self, ack: &SyncAck) -> Result<(), SeError> {
        let len = ack.log_len as usize;
        if len > self.log.len() || len < self.synced_len {
            return Err(SeError::AckInvalid);
        }
        let head = if len == 0 {
            crate::secure_element::genesis_head(self.id())
        } else {
            self.log[len - 1].next_head()
        };
        if head != ack.head || !ack.verify(&self.fi_pub) {
            return Err(SeError::AckInvalid);
        }
        self.se.apply_sync_ack(ack)?;
        self.synced_len = len;
        Ok(())
    }
}

#[cfg(feature = "attack-harness")]
impl Device {
    /// Clones the SE together with its storage.
    pub fn snapshot(&mut self) {
        self.se.snapshot();
        self.snapshot = Some(DeviceStorageSnapshot {
            log: self.log.clone(),
            evidence: self.evidence.clone(),
            synced_len: self.synced_len,
            payer_sessions: self.payer_sessions.clone(),
            payee_sessions: self.payee_sessions.clone(),
        });
    }

    /// Rolls SE and storage back to the snapshot.
    pub fn restore(&mut self) -> Result<(), SeError> {
        self.se.restore()?;
        let s = self.snapshot.as_ref().ok_or(SeError::NoSnapshot)?;
        self.log = s.log.clone();
        self.evidence = s.evidence.clone();
        self.synced_len = s.synced_len;
        self.payer_sessions = s.payer_sessions.clone();
        self.payee_sessions = s.payee_sessions.clone();
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SyncEntry {
    pub entry: OfflineLogEntry,
    pub evidence: Evidence,
}

impl Encode for SyncEntry {
    fn encode_to(&self, out: &mut Vec<u8>) {
        self.entry.encode_to(out);
        self.evidence.encode_to(out);
    }
}

impl Decode for SyncEntry {
    fn decode_from(r: &mut Reader<'_>) -> Result<Self, DecodeError> {
        Ok(SyncEntry {
            entry: OfflineLogEntry::decode_from(r)?,
            evidence: Evidence::decode_from(r)?,
        })
    }
}

/// New log entries of one device since its sync marker.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DeviceSync {
    pub device_id: DeviceId,
    pub from_index: u64,
    /// Head after the last included entry.
    pub head: [u8; 32],
    pub entries: Vec<SyncEntry>,
}

impl Encode for DeviceSync {
    fn encode_to(&self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.device_id);
        put_u64(out, self.from_index);
        out.extend_from_slice(&self.head);
        put_list(out, &self.entries);
    }
}

impl Decode for DeviceSync {
    fn decode_from(r: &mut Reader<'_>) -> Result<Self, DecodeError> {
        Ok(DeviceSync {
            device_id: r.array()?,
            from_index: r.u64()?,
            head: r.array()?,
            entries: r.list()?,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SyncPayload {
    pub owner_id: OwnerId,
    /// Ordered by device id.
    pub devices: Vec<DeviceSync>,
}

impl SyncPayload {
    pub fn is_empty(&self) -> bool {
        self.devices.is_empty()
    }

    pub fn entry_count(&self) -> usize {
        self.devices.iter().map(|d| d.entries.len()).sum()
    }
}

impl Encode for SyncPayload {
    fn encode_to(&self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.owner_id);
        put_list(out, &self.devices);
    }
}

impl Decode for SyncPayload {
    fn decode_from(r: &mut Reader<'_>) -> Result<Self, DecodeError> {
        Ok(SyncPayload {
            owner_id: r.array()?,
            devices: r.list()?,
        })
    }
}

pub struct MainWallet {
    owner_id: OwnerId,
    keys: KeyPair,
    certificate: Option<WalletCertificate>,
    online_balance: u64,
    devices: BTreeMap<DeviceId, Device>,
    next_nonce: u64,
}

impl MainWallet {
    pub fn new(owner_id: OwnerId, keys: KeyPair) -> Self {
        MainWallet {
            owner_id,
            keys,
            certificate: None,
            online_balance: 0,
            devices: BTreeMap::new(),
            next_nonce: 0,
        }
    }

    pub fn owner_id(&self) -> &OwnerId {
        &self.owner_id
    }

    pub fn public_key(&self) -> &GroupElement {
        self.keys.public()
    }

    pub fn pseudonym(&self) -> [u8; 32] {
        wallet_pseudonym(self.keys.public())
    }

    pub fn online_balance(&self) -> u64 {
        self.online_balance
    }

    pub fn certificate(&self) -> Option<&WalletCertificate> {
        self.certificate.as_ref()
    }

    pub fn set_certificate(&mut self, cert: WalletCertificate) {
        self.certificate = Some(cert);
    }

    /// Online credit from issuance or settlement.
    pub fn credit(&mut self, amount: u64) {
        self.online_balance += amount;
    }

    pub fn add_device(&mut self, device: Device) {
        self.devices.insert(*device.id(), device);
    }

    pub fn device(&self, id: &DeviceId) -> Option<&Device> {
        self.devices.get(id)
    }

    pub fn device_mut(&mut self, id: &DeviceId) -> Option<&mut Device> {
        self.devices.get_mut(id)
    }

    pub fn devices(&self) -> impl Iterator<Item = &Device> {
        self.devices.values()
    }

    pub fn devices_mut(&mut self) -> impl Iterator<Item = &mut Device> {
        self.devices.values_mut()
    }

    /// Moves `amount` from the online balance onto a sub-wallet.
    pub fn allocate_to_subwallet(&mut self, device_id: &DeviceId, amount: u64) -> Result<AllocationRecord, WalletError> {
        if amount == 0 {
            return Err(WalletError::ValueInvalid);
        }
        let device = self.devices.get_mut(device_id).ok_or(WalletError::UnknownDevice)?;
        if amount > self.online_balance {
            return Err(WalletError::Insufficient);
        }
        if device.se.balance() + amount >= AMOUNT_BOUND {
            return Err(WalletError::ExceedsDeviceLimit);
        }
        let nonce = self.next_nonce.to_be_bytes();
        self.next_nonce += 1;
        let record = AllocationRecord::sign(&self.keys, *device_id, amount, nonce);
        device.load(&record).map_err(|e| match e {
            SeError::AllocationInvalid => WalletError::ForeignDevice,
            other => WalletError::Se(other),
        })?;
        self.online_balance -= amount;
        Ok(record)
    }

    /// Returns the device's spendable balance to the online balance.
    pub fn reclaim_from_subwallet(&mut self, device_id: &DeviceId) -> Result<u64, WalletError> {
        let device = self.devices.get_mut(device_id).ok_or(WalletError::UnknownDevice)?;
        match device.se.reclaim() {
            None => Ok(0),
            Some((amount, entry)) => {
                device.push(entry, Evidence::Reclaim);
                self.online_balance += amount;
                Ok(amount)
            }
        }
    }

    /// Log entries (with evidence) of all devices since their sync markers,
    /// ordered by device id then log index. Does not move the markers.
    pub fn collect_sync_payload(&self) -> SyncPayload {
        SyncPayload {
            owner_id: self.owner_id,
            devices: self.devices.values().filter_map(Device::collect).collect(),
        }
    }

    /// Applies the settlement part of a report: credits and voided-payment
    /// refunds addressed to this wallet's pseudonym, and sync acks for its
    /// devices. Returns the amount credited.
    pub fn apply_report(&mut self, report: &ReconciliationReport) -> u64 {
        let me = self.pseudonym();
        let mut total = 0;
        for c in report.credits.iter().filter(|c| c.payee == me) {
            total += c.amount;
        }
        for v in report.voided.iter().filter(|v| v.payer == me) {
            total += v.amount;
        }
        self.online_balance += total;
        for ack in &report.acks {
            if let Some(d) = self.devices.get_mut(&ack.device_id) {
                // A stale ack only means the device keeps its budget until the next sync.
                let _ = d.apply_ack(ack);
            }
        }
        total
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn allocation_record_binds_every_field() {
        let w = KeyPair::from_seed(b"wallet");
        let rec = AllocationRecord::sign(&w, [3; 16], 400, [0, 0, 0, 0, 0, 0, 0, 1]);
        assert!(rec.verify(w.public()));
        assert!(!rec.verify(KeyPair::from_seed(b"x").public()));
        let mut more = rec.clone();
        more.amount += 1;
        assert!(!more.verify(w.public()));
        assert_eq!(AllocationRecord::from_bytes(&rec.to_bytes()).unwrap(), rec);
        assert_ne!(rec.tx_id(), AllocationRecord::sign(&w, [3; 16], 400, [0; 8]).tx_id());
    }

    #[test]
    fn device_id_follows_key() {
        let a = KeyPair::from_seed(b"a");
        let b = KeyPair::from_seed(b"b");
        assert_eq!(device_id_for(a.public()), device_id_for(a.public()));
        assert_ne!(device_id_for(a.public()), device_id_for(b.public()));
        assert_ne!(wallet_pseudonym(a.public()), device_pseudonym(a.public()));
    }

    #[test]
    fn empty_wallet_has_empty_payload() {
        let w = MainWallet::new([1; 16], KeyPair::from_seed(b"w"));
        let p = w.collect_sync_payload();
        assert!(p.is_empty());
        assert_eq!(SyncPayload::from_bytes(&p.to_bytes()).unwrap(), p);
    }
}
