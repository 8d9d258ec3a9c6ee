//! FI-signed wallet certificates.

use alloc::vec::Vec;

use crate::codec::{put_u64, Decode, DecodeError, Encode, Reader};
use crate::crypto::{GroupElement, KeyPair, Signature};

/// AML/CFT policy bound into a certificate.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Limits {
    /// Cumulative offline spend allowed between reconciliations (L).
    pub cum_limit: u64,
    /// Per-transaction cap (T).
    pub per_tx_cap: u64,
    /// Offline transactions allowed between reconciliations (K).
    pub max_tx: u64,
}

impl Limits {
    pub const REFERENCE: Limits = Limits {
        cum_limit: 10_000,
        per_tx_cap: 2_000,
        max_tx: 64,
    };

    /// All limits fit the 32-bit range proofs.
    pub fn within_proof_bounds(&self) -> bool {
        self.cum_limit < crate::AMOUNT_BOUND
            && self.per_tx_cap < crate::AMOUNT_BOUND
            && self.max_tx < crate::AMOUNT_BOUND
    }
}

impl Default for Limits {
    fn default() -> Self {
        Self::REFERENCE
    }
}

impl Encode for Limits {
    fn encode_to(&self, out: &mut Vec<u8>) {
        put_u64(out, self.cum_limit);
        put_u64(out, self.per_tx_cap);
        put_u64(out, self.max_tx);
    }
}

impl Decode for Limits {
    fn decode_from(r: &mut Reader<'_>) -> Result<Self, DecodeError> {
        Ok(Limits {
            cum_limit: r.u64()?,
            per_tx_cap: r.u64()?,
            max_tx: r.u64()?,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct WalletCertificate {
    pub subject_pk: GroupElement,
    pub limits: Limits,
    pub expiry_epoch: u64,
    pub fi_sig: Signature,
}

impl WalletCertificate {
    /// Bytes covered by the FI signature.
    pub fn signed_message(subject_pk: &GroupElement, limits: &Limits, expiry_epoch: u64) -> Vec<u8> {
        let mut m = Vec::with_capacity(16 + 32 + 24 + 8);
        m.extend_from_slice(b"wallet-cert/v1");
        subject_pk.encode_to(&mut m);
        limits.encode_to(&mut m);
        put_u64(&mut m, expiry_epoch);
        m
    }

    pub fn issue(fi: &KeyPair, subject_pk: GroupElement, limits: Limits, expiry_epoch: u64) -> Self {
        let fi_sig = fi.sign(&Self::signed_message(&subject_pk, &limits, expiry_epoch));
        WalletCertificate {
            subject_pk,
            limits,
            expiry_epoch,
            fi_sig,
        }
    }

    pub fn verify(&self, fi_pub: &GroupElement) -> bool {
        self.fi_sig.verify(
            fi_pub,
            &Self::signed_message(&self.subject_pk, &self.limits, self.expiry_epoch),
        )
    }

    pub fn is_expired(&self, now_epoch: u64) -> bool {
        now_epoch > self.expiry_epoch
    }
}

impl Encode for WalletCertificate {
    fn encode_to(&self, out: &mut Vec<u8>) {
        self.subject_pk.encode_to(out);
        self.limits.encode_to(out);
        put_u64(out, self.expiry_epoch);
        self.fi_sig.encode_to(out);
    }
}

impl Decode for WalletCertificate {
    fn decode_from(r: &mut Reader<'_>) -> Result<Self, DecodeError> {
        Ok(WalletCertificate {
            subject_pk: GroupElement::decode_from(r)?,
            limits: Limits::decode_from(r)?,
            expiry_epoch: r.u64()?,
            fi_sig: Signature::decode_from(r)?,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn certificate_verifies_only_under_issuer() {
        let fi = KeyPair::from_seed(b"fi");
        let other = KeyPair::from_seed(b"other");
        let subject = KeyPair::from_seed(b"device");
        let cert = WalletCertificate::issue(&fi, *subject.public(), Limits::REFERENCE, 3);
        assert!(cert.verify(fi.public()));
        assert!(!cert.verify(other.public()));
        assert_eq!(WalletCertificate::from_bytes(&cert.to_bytes()).unwrap(), cert);
    }

    #[test]
    fn tampered_expiry_breaks_signature() {
        let fi = KeyPair::from_seed(b"fi");
        let mut cert = WalletCertificate::issue(&fi, *KeyPair::from_seed(b"d").public(), Limits::REFERENCE, 3);
        cert.expiry_epoch = 4;
        assert!(!cert.verify(fi.public()));
    }
}
