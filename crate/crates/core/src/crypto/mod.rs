//! Prime-order group arithmetic, Pedersen commitments, Schnorr signatures and
//! Fiat–Shamir transcripts.
//!
//! The reference suite is ristretto255: a prime-order group of order
//! q = 2^252 + 27742317777372353535851937790883648493 with 32-byte canonical
//! encodings. Scalars use a 32-byte big-endian encoding on the wire.

mod pedersen;
mod schnorr;
mod transcript;

pub use pedersen::{derive_generators, PedersenParams};
pub use schnorr::{verify_encoded, KeyPair, Signature, SIGNATURE_LEN};
pub use transcript::Transcript;

use core::fmt;
use core::ops::{Add, AddAssign, Mul, Neg, Sub, SubAssign};

use curve25519_dalek::constants::RISTRETTO_BASEPOINT_TABLE;
use curve25519_dalek::ristretto::{CompressedRistretto, RistrettoPoint};
use curve25519_dalek::scalar::Scalar as RawScalar;
use curve25519_dalek::traits::{Identity, IsIdentity, VartimeMultiscalarMul};

use crate::codec::{Decode, DecodeError, Encode, Reader};
use alloc::vec::Vec;

/// Identifies the group/hash/encoding choices in force.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SuiteHeader {
    pub suite_id: u8,
    /// Length of a canonical group element encoding.
    pub element_len: usize,
    pub scalar_len: usize,
}

/// ristretto255 with SHA-512 for hash-to-group/hash-to-scalar and SHA-256
/// for digests.
pub const REFERENCE_SUITE: SuiteHeader = SuiteHeader {
    suite_id: 0x01,
    element_len: 32,
    scalar_len: 32,
};

/// Looks up a suite by id. Only the reference suite is compiled in.
pub fn suite_by_id(id: u8) -> Option<SuiteHeader> {
    (id == REFERENCE_SUITE.suite_id).then_some(REFERENCE_SUITE)
}

/// Integer modulo the group order.
#[derive(Clone, Copy, PartialEq, Eq, Default)]
pub struct Scalar(pub(crate) RawScalar);

impl Scalar {
    pub const ZERO: Scalar = Scalar(RawScalar::ZERO);
    pub const ONE: Scalar = Scalar(RawScalar::ONE);

    pub fn from_u64(v: u64) -> Self {
        Scalar(RawScalar::from(v))
    }

    /// Reduces a 64-byte big-endian integer modulo q.
    pub fn from_be_wide(bytes: &[u8; 64]) -> Self {
        let mut le = *bytes;
        le.reverse();
        Scalar(RawScalar::from_bytes_mod_order_wide(&le))
    }

    /// Hash-to-scalar: SHA-512 of the inputs, read big-endian, reduced mod q.
    pub fn hash_from(parts: &[&[u8]]) -> Self {
        use sha2::{Digest, Sha512};
        let mut h = Sha512::new();
        for p in parts {
            h.update(p);
        }
        Self::from_be_wide(&h.finalize().into())
    }

    pub fn encode(&self) -> [u8; 32] {
        let mut b = self.0.to_bytes();
        b.reverse();
        b
    }

    /// Decodes a big-endian scalar, refusing values ≥ q.
    pub fn decode(bytes: &[u8]) -> Result<Self, DecodeError> {
        let arr: [u8; 32] = bytes.try_into().map_err(|_| DecodeError::Truncated)?;
        let mut le = arr;
        le.reverse();
        Option::<RawScalar>::from(RawScalar::from_canonical_bytes(le))
            .map(Scalar)
            .ok_or(DecodeError::NonCanonicalScalar)
    }

    pub fn invert(&self) -> Self {
        Scalar(self.0.invert())
    }

    pub fn is_zero(&self) -> bool {
        self.0 == RawScalar::ZERO
    }
}

impl fmt::Debug for Scalar {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Scalar({})", crate::hash::to_hex(&self.encode()))
    }
}

impl Add for Scalar {
    type Output = Scalar;
    fn add(self, rhs: Scalar) -> Scalar {
        Scalar(self.0 + rhs.0)
    }
}

impl Sub for Scalar {
    type Output = Scalar;
    fn sub(self, rhs: Scalar) -> Scalar {
        Scalar(self.0 - rhs.0)
    }
}

impl Mul for Scalar {
    type Output = Scalar;
    fn mul(self, rhs: Scalar) -> Scalar {
        Scalar(self.0 * rhs.0)
    }
}

impl Neg for Scalar {
    type Output = Scalar;
    fn neg(self) -> Scalar {
        Scalar(-self.0)
    }
}

impl AddAssign for Scalar {
    fn add_assign(&mut self, rhs: Scalar) {
        self.0 += rhs.0;
    }
}

impl Encode for Scalar {
    fn encode_to(&self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.encode());
    }
}

impl Decode for Scalar {
    fn decode_from(r: &mut Reader<'_>) -> Result<Self, DecodeError> {
        Scalar::decode(r.take(32)?)
    }
}

/// Element of the prime-order group.
///
/// Compressing a point costs a field inversion, and proofs re-encode the same
/// points many times (transcripts, digests, wire frames), so the canonical
/// encoding is kept once known: decoded points carry their input bytes and
/// `with_encoding` fills it for fresh ones. Equality ignores the cache.
#[derive(Clone, Copy)]
pub struct GroupElement {
    point: RistrettoPoint,
    encoding: Option<[u8; 32]>,
}

impl PartialEq for GroupElement {
    fn eq(&self, other: &Self) -> bool {
        match (&self.encoding, &other.encoding) {
            (Some(a), Some(b)) => a == b,
            _ => self.point == other.point,
        }
    }
}

impl Eq for GroupElement {}

impl GroupElement {
    pub(crate) fn from_point(point: RistrettoPoint) -> Self {
        GroupElement { point, encoding: None }
    }

    pub(crate) fn point(&self) -> &RistrettoPoint {
        &self.point
    }

    pub fn identity() -> Self {
        Self::from_point(RistrettoPoint::identity())
    }

    /// The suite base point used for key pairs.
    pub fn base() -> Self {
        Self::from_point(curve25519_dalek::constants::RISTRETTO_BASEPOINT_POINT)
    }

    /// `s · base`, using the precomputed base-point table.
    pub fn base_mul(s: &Scalar) -> Self {
        Self::from_point(RISTRETTO_BASEPOINT_TABLE * &s.0)
    }

    pub fn is_identity(&self) -> bool {
        self.point.is_identity()
    }

    /// Maps 64 uniform bytes into the group (Elligator-based hash-to-group).
    pub fn from_uniform_bytes(bytes: &[u8; 64]) -> Self {
        Self::from_point(RistrettoPoint::from_uniform_bytes(bytes))
    }

    /// The same element with its encoding computed and cached.
    pub fn with_encoding(self) -> Self {
        GroupElement {
            point: self.point,
            encoding: Some(self.encode()),
        }
    }

    pub fn encode(&self) -> [u8; 32] {
        match self.encoding {
            Some(e) => e,
            None => self.point.compress().to_bytes(),
        }
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, DecodeError> {
        let c = CompressedRistretto::from_slice(bytes).map_err(|_| DecodeError::Truncated)?;
        let point = c.decompress().ok_or(DecodeError::InvalidPoint)?;
        Ok(GroupElement {
            point,
            encoding: Some(c.to_bytes()),
        })
    }

    /// Variable-time Σ sᵢ·Pᵢ. Verifiers only.
    pub fn vartime_sum<'a>(
        scalars: impl IntoIterator<Item = Scalar>,
        points: impl IntoIterator<Item = &'a GroupElement>,
    ) -> Self {
        Self::from_point(RistrettoPoint::vartime_multiscalar_mul(
            scalars.into_iter().map(|s| s.0),
            points.into_iter().map(|p| p.point),
        ))
    }
}

impl fmt::Debug for GroupElement {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "GroupElement({})", crate::hash::to_hex(&self.encode()))
    }
}

impl Add for GroupElement {
    type Output = GroupElement;
    fn add(self, rhs: GroupElement) -> GroupElement {
        Self::from_point(self.point + rhs.point)
    }
}

impl Sub for GroupElement {
    type Output = GroupElement;
    fn sub(self, rhs: GroupElement) -> GroupElement {
        Self::from_point(self.point - rhs.point)
    }
}

impl Neg for GroupElement {
    type Output = GroupElement;
    fn neg(self) -> GroupElement {
        Self::from_point(-self.point)
    }
}

impl AddAssign for GroupElement {
    fn add_assign(&mut self, rhs: GroupElement) {
        *self = *self + rhs;
    }
}

impl SubAssign for GroupElement {
    fn sub_assign(&mut self, rhs: GroupElement) {
        *self = *self - rhs;
    }
}

impl Mul<&Scalar> for &GroupElement {
    type Output = GroupElement;
    fn mul(self, rhs: &Scalar) -> GroupElement {
        GroupElement::from_point(self.point * rhs.0)
    }
}

impl Encode for GroupElement {
    fn encode_to(&self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.encode());
    }
}

impl Decode for GroupElement {
    fn decode_from(r: &mut Reader<'_>) -> Result<Self, DecodeError> {
        GroupElement::decode(r.take(REFERENCE_SUITE.element_len)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn scalar_strategy() -> impl Strategy<Value = Scalar> {
        proptest::array::uniform32(any::<u8>())
            .prop_flat_map(|a| proptest::array::uniform32(any::<u8>()).prop_map(move |b| (a, b)))
            .prop_map(|(a, b)| {
                let mut w = [0u8; 64];
                w[..32].copy_from_slice(&a);
                w[32..].copy_from_slice(&b);
                Scalar::from_be_wide(&w)
            })
    }

    #[test]
    fn group_order_is_at_least_2_pow_250() {
        // q - 1 encodes as the largest canonical scalar; its top byte is 0x10.
        let q_minus_one = -Scalar::ONE;
        assert_eq!(q_minus_one.encode()[0], 0x10);
    }

    #[test]
    fn scalar_encoding_is_big_endian() {
        let mut expect = [0u8; 32];
        expect[31] = 5;
        expect[30] = 1;
        assert_eq!(Scalar::from_u64(261).encode(), expect);
    }

    #[test]
    fn non_canonical_scalar_refused() {
        assert_eq!(Scalar::decode(&[0xff; 32]), Err(DecodeError::NonCanonicalScalar));
    }

    #[test]
    fn identity_encodes_as_zero_bytes() {
        assert_eq!(GroupElement::identity().encode(), [0u8; 32]);
        assert!(GroupElement::decode(&[0u8; 32]).unwrap().is_identity());
    }

    #[test]
    fn truncated_point_is_decode_error() {
        assert_eq!(GroupElement::decode(&[0u8; 31]), Err(DecodeError::Truncated));
    }

    proptest! {
        #[test]
        fn scalar_round_trip(s in scalar_strategy()) {
            prop_assert_eq!(Scalar::decode(&s.encode()).unwrap(), s);
        }

        #[test]
        fn point_round_trip(s in scalar_strategy()) {
            let p = GroupElement::base_mul(&s);
            prop_assert_eq!(GroupElement::decode(&p.encode()).unwrap(), p);
        }
    }
}
