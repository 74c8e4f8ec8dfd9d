//! Additive secret sharing over the prime field and the semi-honest
//! collaborative primitives built on top of it.
//!
//! A [`Shared`] value holds one share per party, indexed by party. In the
//! simulator every party runs in the same process, but each protocol step
//! only ever combines a party's own shares with values that were opened to
//! everyone, so a party's view is exactly what the [`ProtocolTrace`] records.

mod dealer;
mod session;
mod transcript;

use std::ops::{Add, Sub};

use rand::RngCore;
use serde::{Deserialize, Serialize};
use smallvec::SmallVec;

use crate::error::{Error, Result};
use crate::field::FieldElement;

pub use dealer::{
    dealer_gen, BeaverTriple, ComparisonMask, Dealer, MaterialKind, PreprocessedDealer, PreprocessedMaterial,
    SeededDealer,
};
pub use session::Session;
pub use transcript::{OpCounters, ProtocolTrace, TraceEntry};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct PartyId(pub usize);

/// One party's additive share of a secret.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Share {
    pub owner: PartyId,
    pub value: FieldElement,
}

/// A full share vector: entry `i` belongs to party `i`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Shared(SmallVec<[FieldElement; 4]>);

impl Shared {
    pub fn from_values<I: IntoIterator<Item = FieldElement>>(values: I) -> Self {
        Shared(values.into_iter().collect())
    }

    pub fn zero(parties: usize) -> Self {
        Shared(SmallVec::from_elem(FieldElement::ZERO, parties))
    }

    /// The trivial sharing of a public constant: party 0 holds it, others 0.
    pub fn constant(value: FieldElement, parties: usize) -> Self {
        let mut s = Self::zero(parties);
        s.0[0] = value;
        s
    }

    pub fn parties(&self) -> usize {
        self.0.len()
    }

    pub fn values(&self) -> &[FieldElement] {
        &self.0
    }

    pub fn share_of(&self, party: PartyId) -> Share {
        Share {
            owner: party,
            value: self.0[party.0],
        }
    }

    pub fn to_shares(&self) -> Vec<Share> {
        (0..self.parties()).map(|i| self.share_of(PartyId(i))).collect()
    }

    /// Sum of all shares. Only meaningful in tests and at the client, which
    /// holds every share before sending them out.
    pub fn reconstruct(&self) -> FieldElement {
        self.0.iter().sum()
    }

    pub fn add_public(&self, c: FieldElement) -> Self {
        let mut out = self.clone();
        out.0[0] += c;
        out
    }

    pub fn sub_public(&self, c: FieldElement) -> Self {
        self.add_public(-c)
    }

    pub fn scale(&self, c: FieldElement) -> Self {
        Shared(self.0.iter().map(|&v| v * c).collect())
    }

    /// `c - self`, computed locally.
    pub fn public_minus(&self, c: FieldElement) -> Self {
        let mut out = Shared(self.0.iter().map(|&v| -v).collect());
        out.0[0] += c;
        out
    }
}

impl Add<&Shared> for &Shared {
    type Output = Shared;
    fn add(self, rhs: &Shared) -> Shared {
        debug_assert_eq!(self.parties(), rhs.parties());
        Shared(self.0.iter().zip(&rhs.0).map(|(&a, &b)| a + b).collect())
    }
}

impl Sub<&Shared> for &Shared {
    type Output = Shared;
    fn sub(self, rhs: &Shared) -> Shared {
        debug_assert_eq!(self.parties(), rhs.parties());
        Shared(self.0.iter().zip(&rhs.0).map(|(&a, &b)| a - b).collect())
    }
}

/// Splits `secret` into `n` additive shares: the first `n - 1` uniform, the
/// last chosen so the sum is `secret` mod Q.
pub fn share<R: RngCore + ?Sized>(secret: FieldElement, n: usize, rng: &mut R) -> Result<Shared> {
    if n < 2 {
        return Err(Error::InvalidPartyCount(n));
    }
    Ok(share_unchecked(secret, n, rng))
}

#[inline]
pub(crate) fn share_unchecked<R: RngCore + ?Sized>(secret: FieldElement, n: usize, rng: &mut R) -> Shared {
    let mut values: SmallVec<[FieldElement; 4]> = SmallVec::with_capacity(n);
    let mut acc = FieldElement::ZERO;
    for _ in 0..n - 1 {
        let r = FieldElement::random(rng);
        acc += r;
        values.push(r);
    }
    values.push(secret - acc);
    Shared(values)
}

/// Recombines a complete share set, one share per party `0..n`.
pub fn reconstruct(shares: &[Share], n: usize) -> Result<FieldElement> {
    if n < 2 {
        return Err(Error::InvalidPartyCount(n));
    }
    let mut seen = vec![false; n];
    for s in shares {
        let slot = seen
            .get_mut(s.owner.0)
            .ok_or_else(|| Error::IncompleteShareSet(format!("share from unknown party {}", s.owner.0)))?;
        if *slot {
            return Err(Error::IncompleteShareSet(format!(
                "duplicate share from party {}",
                s.owner.0
            )));
        }
        *slot = true;
    }
    if let Some(missing) = seen.iter().position(|s| !s) {
        return Err(Error::IncompleteShareSet(format!("missing party {missing}")));
    }
    Ok(shares.iter().map(|s| s.value).sum())
}

/// Hidden random value generation: every party samples its share locally,
/// so no party learns the sum.
pub fn secure_rand<R: RngCore + ?Sized>(n: usize, rng: &mut R) -> Result<Shared> {
    if n < 2 {
        return Err(Error::InvalidPartyCount(n));
    }
    Ok(Shared((0..n).map(|_| FieldElement::random(rng)).collect()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::MODULUS;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_roundtrip() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let s = share(FieldElement::ZERO, 3, &mut rng).unwrap();
        assert_eq!(reconstruct(&s.to_shares(), 3).unwrap(), FieldElement::ZERO);
    }

    #[test]
    fn small_field_sum_and_wraparound() {
        let shares = [
            Share {
                owner: PartyId(0),
                value: FieldElement::new(5),
            },
            Share {
                owner: PartyId(1),
                value: FieldElement::new(7),
            },
        ];
        assert_eq!(reconstruct(&shares, 2).unwrap(), FieldElement::new(12));
        let wrap = [
            Share {
                owner: PartyId(0),
                value: FieldElement::new(MODULUS - 1),
            },
            Share {
                owner: PartyId(1),
                value: FieldElement::ONE,
            },
        ];
        assert_eq!(reconstruct(&wrap, 2).unwrap(), FieldElement::ZERO);
    }

    #[test]
    fn party_count_and_completeness_errors() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        assert!(matches!(
            share(FieldElement::ONE, 1, &mut rng),
            Err(Error::InvalidPartyCount(1))
        ));
        let s = share(FieldElement::new(9), 3, &mut rng).unwrap().to_shares();
        assert!(matches!(reconstruct(&s[..2], 3), Err(Error::IncompleteShareSet(_))));
        let dup = [s[0], s[0], s[1]];
        assert!(matches!(reconstruct(&dup, 3), Err(Error::IncompleteShareSet(_))));
    }

    #[test]
    fn roundtrip_many() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..10_000 {
            let v = FieldElement::random(&mut rng);
            let n = rng.gen_range(2..=5);
            let s = share(v, n, &mut rng).unwrap();
            assert_eq!(s.parties(), n);
            assert_eq!(reconstruct(&s.to_shares(), n).unwrap(), v);
        }
    }

    #[test]
    fn linear_ops_are_local() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let a = share(FieldElement::new(40), 3, &mut rng).unwrap();
        let b = share(FieldElement::new(2), 3, &mut rng).unwrap();
        assert_eq!((&a + &b).reconstruct(), FieldElement::new(42));
        assert_eq!((&a - &b).reconstruct(), FieldElement::new(38));
        assert_eq!(a.add_public(FieldElement::new(2)).reconstruct(), FieldElement::new(42));
        assert_eq!(a.scale(FieldElement::new(3)).reconstruct(), FieldElement::new(120));
        assert_eq!(
            a.public_minus(FieldElement::new(50)).reconstruct(),
            FieldElement::new(10)
        );
    }
}
