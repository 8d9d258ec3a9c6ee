use alloc::boxed::Box;
use core::fmt;

use curve25519_dalek::ristretto::RistrettoBasepointTable;
use once_cell::race::OnceBox;
use sha2::{Digest, Sha512};

use super::{GroupElement, Scalar, REFERENCE_SUITE};

/// Domain tag of the generators every component of the prototype shares.
pub const STANDARD_DOMAIN: &[u8] = b"cbdc/v1";

/// Value and blinding generators for Pedersen commitments.
///
/// Both are hash-to-group outputs, so nobody knows a discrete-log relation
/// between them.
#[derive(Clone)]
pub struct PedersenParams {
    g_val: GroupElement,
    g_blind: GroupElement,
    val_table: Box<RistrettoBasepointTable>,
    blind_table: Box<RistrettoBasepointTable>,
}

impl fmt::Debug for PedersenParams {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("PedersenParams")
            .field("g_val", &self.g_val)
            .field("g_blind", &self.g_blind)
            .finish()
    }
}

impl PartialEq for PedersenParams {
    fn eq(&self, other: &Self) -> bool {
        self.g_val == other.g_val && self.g_blind == other.g_blind
    }
}

fn hash_to_group(domain_tag: &[u8], role: &[u8], attempt: u32) -> GroupElement {
    let mut h = Sha512::new();
    h.update(b"hash-to-group/v1");
    h.update([REFERENCE_SUITE.suite_id]);
    h.update((domain_tag.len() as u32).to_be_bytes());
    h.update(domain_tag);
    h.update(role);
    h.update(attempt.to_be_bytes());
    GroupElement::from_uniform_bytes(&h.finalize().into()).with_encoding()
}

/// Derives commitment generators from a non-empty domain tag.
///
/// Output depends only on the suite and the tag. Identity outputs (and a
/// blinding generator equal to the value generator) are skipped by retrying
/// with the next attempt counter.
pub fn derive_generators(domain_tag: &[u8]) -> PedersenParams {
    assert!(!domain_tag.is_empty(), "domain tag must be non-empty");
    let mut attempt = 0u32;
    let g_val = loop {
        let p = hash_to_group(domain_tag, b"g_val", attempt);
        if !p.is_identity() {
            break p;
        }
        attempt += 1;
    };
    let mut attempt = 0u32;
    let g_blind = loop {
        let p = hash_to_group(domain_tag, b"g_blind", attempt);
        if !p.is_identity() && p != g_val {
            break p;
        }
        attempt += 1;
    };
    PedersenParams::from_generators(g_val, g_blind)
}

impl PedersenParams {
    fn from_generators(g_val: GroupElement, g_blind: GroupElement) -> Self {
        PedersenParams {
            val_table: Box::new(RistrettoBasepointTable::create(g_val.point())),
            blind_table: Box::new(RistrettoBasepointTable::create(g_blind.point())),
            g_val,
            g_blind,
        }
    }

    /// Generators for [`STANDARD_DOMAIN`], derived once per process.
    pub fn standard() -> &'static PedersenParams {
        static PARAMS: OnceBox<PedersenParams> = OnceBox::new();
        PARAMS.get_or_init(|| Box::new(derive_generators(STANDARD_DOMAIN)))
    }

    pub fn g_val(&self) -> &GroupElement {
        &self.g_val
    }

    pub fn g_blind(&self) -> &GroupElement {
        &self.g_blind
    }

    /// `value·g_val + blinding·g_blind`.
    pub fn commit(&self, value: &Scalar, blinding: &Scalar) -> GroupElement {
        GroupElement::from_point(&*self.val_table * &value.0 + &*self.blind_table * &blinding.0)
    }

    /// Commitment to a plain amount.
    pub fn commit_u64(&self, value: u64, blinding: &Scalar) -> GroupElement {
        self.commit(&Scalar::from_u64(value), blinding)
    }

    /// `v · g_val`.
    pub fn value_point(&self, v: u64) -> GroupElement {
        GroupElement::from_point(&*self.val_table * &Scalar::from_u64(v).0)
    }

    /// `s · g_val`.
    pub fn mul_val(&self, s: &Scalar) -> GroupElement {
        GroupElement::from_point(&*self.val_table * &s.0)
    }

    /// `s · g_blind`.
    pub fn mul_blind(&self, s: &Scalar) -> GroupElement {
        GroupElement::from_point(&*self.blind_table * &s.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn derivation_is_deterministic() {
        assert_eq!(derive_generators(b"cbdc/v1"), derive_generators(b"cbdc/v1"));
    }

    #[test]
    fn distinct_tags_give_distinct_value_generators() {
        let a = derive_generators(b"cbdc/v1");
        let b = derive_generators(b"cbdc/v2");
        assert_ne!(a.g_val().encode(), b.g_val().encode());
    }

    #[test]
    fn generators_are_valid_and_distinct() {
        let p = PedersenParams::standard();
        assert!(!p.g_val().is_identity());
        assert!(!p.g_blind().is_identity());
        assert_ne!(p.g_val(), p.g_blind());
        assert_ne!(p.g_val(), &GroupElement::base());
    }

    #[test]
    fn commit_zero_zero_is_identity() {
        let p = PedersenParams::standard();
        assert!(p.commit(&Scalar::ZERO, &Scalar::ZERO).is_identity());
    }

    #[test]
    fn commit_one_zero_is_value_generator() {
        let p = PedersenParams::standard();
        assert_eq!(p.commit(&Scalar::ONE, &Scalar::ZERO), *p.g_val());
    }

    #[test]
    fn commitments_add() {
        let p = PedersenParams::standard();
        let lhs = p.commit_u64(2, &Scalar::from_u64(3)) + p.commit_u64(5, &Scalar::from_u64(7));
        assert_eq!(lhs, p.commit_u64(7, &Scalar::from_u64(10)));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn homomorphism(a in any::<[u8; 32]>(), b in any::<[u8; 32]>(), r in any::<[u8; 32]>(), s in any::<[u8; 32]>()) {
            let to_s = |x: [u8; 32]| Scalar::hash_from(&[&x]);
            let (a, b, r, s) = (to_s(a), to_s(b), to_s(r), to_s(s));
            let p = PedersenParams::standard();
            prop_assert_eq!(p.commit(&a, &r) + p.commit(&b, &s), p.commit(&(a + b), &(r + s)));
        }
    }
}
