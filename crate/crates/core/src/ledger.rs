//! Central-bank ledger: a single-node, append-only hash chain of issuance
//! and reconciliation deltas, plus the conservation oracle.

use alloc::vec::Vec;

use thiserror::Error;

use crate::codec::{put_u64, Encode};
use crate::hash;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EntryKind {
    Issuance = 1,
    Reconciliation = 2,
}

impl EntryKind {
    pub fn as_str(self) -> &'static str {
        match self {
            EntryKind::Issuance => "issuance",
            EntryKind::Reconciliation => "reconciliation",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LedgerEntry {
    pub index: u64,
    pub kind: EntryKind,
    pub payload_hash: [u8; 32],
    pub prev_hash: [u8; 32],
    pub amount_delta: i64,
}

impl LedgerEntry {
    pub fn hash(&self) -> [u8; 32] {
        hash::sha256(&[&self.to_bytes()])
    }
}

impl Encode for LedgerEntry {
    fn encode_to(&self, out: &mut Vec<u8>) {
        put_u64(out, self.index);
        out.push(self.kind as u8);
        out.extend_from_slice(&self.payload_hash);
        out.extend_from_slice(&self.prev_hash);
        out.extend_from_slice(&self.amount_delta.to_be_bytes());
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
pub enum LedgerError {
    #[error("entry does not extend the current head")]
    ChainMismatch,
}

#[derive(Clone, Debug, Default)]
pub struct Ledger {
    entries: Vec<LedgerEntry>,
}

impl Ledger {
    pub const GENESIS: [u8; 32] = [0; 32];

    pub fn new() -> Self {
        Self::default()
    }

    pub fn head(&self) -> [u8; 32] {
        self.entries.last().map_or(Self::GENESIS, LedgerEntry::hash)
    }

    pub fn entries(&self) -> &[LedgerEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Builds the entry that would extend the current head.
    pub fn next_entry(&self, kind: EntryKind, payload_hash: [u8; 32], amount_delta: i64) -> LedgerEntry {
        LedgerEntry {
            index: self.entries.len() as u64,
            kind,
            payload_hash,
            prev_hash: self.head(),
            amount_delta,
        }
    }

    pub fn append_entry(&mut self, entry: LedgerEntry) -> Result<&LedgerEntry, LedgerError> {
        if entry.prev_hash != self.head() || entry.index != self.entries.len() as u64 {
            return Err(LedgerError::ChainMismatch);
        }
        self.entries.push(entry);
        Ok(self.entries.last().expect("just pushed"))
    }

    /// Convenience: `next_entry` + `append_entry`.
    pub fn append(&mut self, kind: EntryKind, payload_hash: [u8; 32], amount_delta: i64) -> LedgerEntry {
        let e = self.next_entry(kind, payload_hash, amount_delta);
        self.entries.push(e.clone());
        e
    }

    pub fn total_issued(&self) -> u64 {
        self.entries
            .iter()
            .filter(|e| e.kind == EntryKind::Issuance)
            .map(|e| e.amount_delta as u64)
            .sum()
    }

    pub fn verify_chain(&self) -> bool {
        verify_chain(&self.entries)
    }
}

pub fn verify_chain(entries: &[LedgerEntry]) -> bool {
    let mut prev = Ledger::GENESIS;
    for (i, e) in entries.iter().enumerate() {
        if e.index != i as u64 || e.prev_hash != prev {
            return false;
        }
        prev = e.hash();
    }
    true
}

/// Plaintext view of where every unit of value currently sits.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct OmniscientState {
    pub main_balances: u64,
    /// Spendable SE balances of devices that are not frozen.
    pub se_balances: u64,
    /// Distinct payments logged by a payer or a payee and not yet settled.
    pub in_flight: u64,
    /// SE balances of frozen devices plus credits the intermediary withheld.
    pub frozen: u64,
}

impl OmniscientState {
    pub fn total(&self) -> u64 {
        self.main_balances + self.se_balances + self.in_flight + self.frozen
    }

    /// Accounted value minus issued value. Zero when value is conserved.
    pub fn discrepancy(&self, ledger: &Ledger) -> i128 {
        self.total() as i128 - ledger.total_issued() as i128
    }
}

pub fn conservation_check(ledger: &Ledger, state: &OmniscientState) -> bool {
    state.discrepancy(ledger) == 0
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_entry_has_index_zero() {
        let mut l = Ledger::new();
        let e = l.next_entry(EntryKind::Issuance, [1; 32], 10_000);
        assert_eq!(e.prev_hash, [0; 32]);
        assert_eq!(l.append_entry(e).unwrap().index, 0);
    }

    #[test]
    fn wrong_prev_hash_is_rejected() {
        let mut l = Ledger::new();
        l.append(EntryKind::Issuance, [1; 32], 5);
        let mut e = l.next_entry(EntryKind::Issuance, [2; 32], 5);
        e.prev_hash = [9; 32];
        assert_eq!(l.append_entry(e), Err(LedgerError::ChainMismatch));
        assert_eq!(l.len(), 1);
    }

    #[test]
    fn chain_of_three_verifies_and_detects_edits() {
        let mut l = Ledger::new();
        for i in 0..3 {
            l.append(EntryKind::Issuance, [i; 32], 100);
        }
        assert!(l.verify_chain());
        let mut tampered = l.entries().to_vec();
        tampered[1].amount_delta = 101;
        assert!(!verify_chain(&tampered));
    }

    #[test]
    fn total_issued_ignores_reconciliation() {
        let mut l = Ledger::new();
        assert_eq!(l.total_issued(), 0);
        l.append(EntryKind::Issuance, [0; 32], 10_000);
        l.append(EntryKind::Issuance, [0; 32], 5_000);
        assert_eq!(l.total_issued(), 15_000);
        l.append(EntryKind::Reconciliation, [0; 32], 0);
        assert_eq!(l.total_issued(), 15_000);
    }

    #[test]
    fn conservation_reports_signed_gap() {
        let mut l = Ledger::new();
        l.append(EntryKind::Issuance, [0; 32], 100);
        let mut s = OmniscientState {
            main_balances: 60,
            se_balances: 30,
            in_flight: 10,
            frozen: 0,
        };
        assert!(conservation_check(&l, &s));
        s.in_flight += 7;
        assert_eq!(s.discrepancy(&l), 7);
        assert!(!conservation_check(&l, &s));
    }
}
