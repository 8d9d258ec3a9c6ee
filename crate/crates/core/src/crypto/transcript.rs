use sha2::{Digest, Sha512};

use super::{GroupElement, Scalar, REFERENCE_SUITE};

/// Fiat–Shamir transcript over a running SHA-512 state.
///
/// Every absorb is framed as `len(label) ‖ label ‖ len(data) ‖ data`, so the
/// absorb sequence is unambiguous and order-sensitive.
#[derive(Clone)]
pub struct Transcript {
    state: Sha512,
    suite_id: u8,
}

impl Default for Transcript {
    fn default() -> Self {
        Self::new()
    }
}

impl Transcript {
    pub fn new() -> Self {
        let mut state = Sha512::new();
        state.update(b"cbdc-transcript/v1");
        state.update([REFERENCE_SUITE.suite_id]);
        Transcript {
            state,
            suite_id: REFERENCE_SUITE.suite_id,
        }
    }

    /// Transcript that has already absorbed a protocol domain label.
    pub fn with_domain(domain: &[u8]) -> Self {
        let mut t = Self::new();
        t.absorb(b"domain", domain);
        t
    }

    pub fn suite_id(&self) -> u8 {
        self.suite_id
    }

    pub fn absorb(&mut self, label: &[u8], data: &[u8]) {
        self.state.update((label.len() as u32).to_be_bytes());
        self.state.update(label);
        self.state.update((data.len() as u64).to_be_bytes());
        self.state.update(data);
    }

    pub fn absorb_point(&mut self, label: &[u8], p: &GroupElement) {
        self.absorb(label, &p.encode());
    }

    pub fn absorb_scalar(&mut self, label: &[u8], s: &Scalar) {
        self.absorb(label, &s.encode());
    }

    pub fn absorb_u64(&mut self, label: &[u8], v: u64) {
        self.absorb(label, &v.to_be_bytes());
    }

    /// Derives a challenge scalar and folds it back into the state, so two
    /// consecutive challenges differ.
    pub fn challenge(&mut self, label: &[u8]) -> Scalar {
        let mut h = self.state.clone();
        h.update(b"challenge");
        h.update((label.len() as u32).to_be_bytes());
        h.update(label);
        let out: [u8; 64] = h.finalize().into();
        self.absorb(b"challenge-output", &out);
        Scalar::from_be_wide(&out)
    }

    /// Deterministic prover randomness bound to the current state and a
    /// secret. Does not advance the transcript.
    pub(crate) fn witness_scalar(&self, label: &[u8], secret: &[u8]) -> Scalar {
        let mut h = self.state.clone();
        h.update(b"witness");
        h.update((label.len() as u32).to_be_bytes());
        h.update(label);
        h.update((secret.len() as u64).to_be_bytes());
        h.update(secret);
        Scalar::from_be_wide(&h.finalize().into())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn absorb_order_matters() {
        let mut t1 = Transcript::new();
        t1.absorb(b"a", b"1");
        t1.absorb(b"b", b"2");
        let mut t2 = Transcript::new();
        t2.absorb(b"b", b"2");
        t2.absorb(b"a", b"1");
        assert_ne!(t1.challenge(b"c"), t2.challenge(b"c"));
    }

    #[test]
    fn same_history_same_challenge() {
        let run = || {
            let mut t = Transcript::new();
            t.absorb(b"x", b"data");
            t.challenge(b"c")
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn label_data_boundary_is_framed() {
        let mut t1 = Transcript::new();
        t1.absorb(b"x", b"");
        let mut t2 = Transcript::new();
        t2.absorb(b"", b"x");
        assert_ne!(t1.challenge(b"c"), t2.challenge(b"c"));
    }

    #[test]
    fn consecutive_challenges_differ() {
        let mut t = Transcript::new();
        let a = t.challenge(b"c");
        let b = t.challenge(b"c");
        assert_ne!(a, b);
    }

    #[test]
    fn fresh_transcript_challenge_vector() {
        let mut t = Transcript::new();
        assert_eq!(
            crate::hash::to_hex(&t.challenge(b"challenge").encode()),
            FRESH_CHALLENGE_HEX
        );
    }

    #[test]
    fn witness_scalar_does_not_advance() {
        let mut t = Transcript::new();
        let mut u = t.clone();
        let _ = t.witness_scalar(b"w", b"secret");
        assert_eq!(t.challenge(b"c"), u.challenge(b"c"));
    }

    const FRESH_CHALLENGE_HEX: &str = "0b635a46ea802a4582ad124032bd7bf4267dc174700b88127c51e6fe96c3aac9";
}
