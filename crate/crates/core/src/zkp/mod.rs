//! Compliance proofs: bit-decomposition range proofs, key-ownership proofs,
//! nullifiers and the bundle that combines them for one payment.

mod bit;
mod compliance;
mod nullifier;
mod ownership;
mod range;

pub use bit::{prove_bit, verify_bit, BitProof, BIT_PROOF_LEN};
pub use compliance::{
    build_compliance_bundle, headroom_target, state_message, verify_compliance_bundle,
    verify_compliance_bundle_bytes, ComplianceBundle, ComplianceWitness, PublicInputs, RejectReason,
    VerifyOutcome,
};
pub use nullifier::Nullifier;
pub use ownership::{prove_ownership, verify_ownership, OwnershipProof};
pub use range::{analytic_size, prove_range, verify_range, RangeProof, MAX_BITS};

use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
pub enum ZkpError {
    #[error("witness does not match the statement")]
    InvalidWitness,
    #[error("value outside the provable range")]
    OutOfRange,
    #[error("unsupported bit width {0}")]
    UnsupportedWidth(usize),
    #[error("proof has {found} bits, expected {expected}")]
    LengthMismatch { expected: usize, found: usize },
    #[error("transfer value must satisfy 1 <= v <= per-transaction cap")]
    ValueInvalid,
    #[error("insufficient funds")]
    InsufficientFunds,
    #[error("cumulative offline limit exceeded")]
    LimitExceeded,
}
