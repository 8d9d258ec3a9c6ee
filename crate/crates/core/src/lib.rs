//! Core of an offline CBDC prototype for IoT sub-wallets.
//!
//! Everything here is `no_std` + `alloc`: the crate carries the cryptographic
//! primitives, the compliance proofs a paying device produces, the emulated
//! secure element that guards keys and counters, the wallet hierarchy, the
//! intermediary's reconciliation logic, the hash-chained ledger, the framed
//! short-range channel and the three-message payment protocol. IO, scenario
//! files and the command line live in the `cbdc-sim` crate.

#![cfg_attr(not(test), no_std)]

extern crate alloc;

pub mod certificate;
pub mod channel;
pub mod codec;
pub mod crypto;
pub mod hash;
pub mod intermediary;
pub mod ledger;
pub mod protocol;
pub mod secure_element;
pub mod wallet;
pub mod zkp;

pub use certificate::{Limits, WalletCertificate};
pub use codec::{Decode, DecodeError, Encode};
pub use crypto::{GroupElement, KeyPair, PedersenParams, Scalar, Signature, Transcript};

/// Amounts, limits and balances must stay below this bound so that every
/// committed quantity fits the 32-bit range proofs.
pub const AMOUNT_BOUND: u64 = 1 << 32;

/// Bit width of the range proofs carried in a compliance bundle.
pub const RANGE_BITS: usize = 32;

/// 16-byte identifier of an IoT device (sub-wallet).
pub type DeviceId = [u8; 16];

/// 16-byte identifier of an onboarded customer.
pub type OwnerId = [u8; 16];
