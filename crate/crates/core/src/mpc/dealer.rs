//! Simulated trusted dealer for correlated randomness.
//!
//! Two sources implement [`Dealer`]: [`SeededDealer`] produces material on
//! demand from a seed, and [`PreprocessedDealer`] replays a finite batch made
//! by [`dealer_gen`] (and can be loaded from bytes for replayable tests).

use std::collections::VecDeque;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{share_unchecked, Shared};
use crate::error::{Error, Result};
use crate::field::{FieldElement, MODULUS_BITS};

/// Shares of `(a, b, c)` with `c = a * b`. Consumed by exactly one
/// multiplication, so the type is deliberately not `Clone`.
#[derive(Debug, PartialEq, Eq)]
pub struct BeaverTriple {
    pub(crate) a: Shared,
    pub(crate) b: Shared,
    pub(crate) c: Shared,
}

impl BeaverTriple {
    pub fn a(&self) -> &Shared {
        &self.a
    }
    pub fn b(&self) -> &Shared {
        &self.b
    }
    pub fn c(&self) -> &Shared {
        &self.c
    }
}

/// Shares of the bit decomposition of a uniform `r` in `[0, Q)`, least
/// significant bit first. Used to mask one opening in a comparison.
#[derive(Debug, PartialEq, Eq)]
pub struct ComparisonMask {
    pub(crate) bits: Vec<Shared>,
}

impl ComparisonMask {
    pub fn bits(&self) -> &[Shared] {
        &self.bits
    }

    /// Shares of `r = Σ 2^i r_i`, computed locally from the bit shares.
    pub fn value(&self) -> Shared {
        let parties = self.bits[0].parties();
        let mut acc = Shared::zero(parties);
        let mut weight = FieldElement::ONE;
        let two = FieldElement::new(2);
        for b in &self.bits {
            acc = &acc + &b.scale(weight);
            weight *= two;
        }
        acc
    }
}

pub trait Dealer {
    fn parties(&self) -> usize;
    fn triple(&mut self) -> Result<BeaverTriple>;
    fn comparison_mask(&mut self) -> Result<ComparisonMask>;
}

impl<D: Dealer + ?Sized> Dealer for &mut D {
    fn parties(&self) -> usize {
        (**self).parties()
    }
    fn triple(&mut self) -> Result<BeaverTriple> {
        (**self).triple()
    }
    fn comparison_mask(&mut self) -> Result<ComparisonMask> {
        (**self).comparison_mask()
    }
}

/// On-demand dealer; deterministic under its seed.
pub struct SeededDealer {
    parties: usize,
    rng: ChaCha8Rng,
}

impl SeededDealer {
    pub fn new(parties: usize, seed: u64) -> Result<Self> {
        if parties < 2 {
            return Err(Error::InvalidPartyCount(parties));
        }
        Ok(SeededDealer {
            parties,
            rng: ChaCha8Rng::seed_from_u64(seed),
        })
    }

    fn make_triple(&mut self) -> BeaverTriple {
        let a = FieldElement::random(&mut self.rng);
        let b = FieldElement::random(&mut self.rng);
        let n = self.parties;
        BeaverTriple {
            a: share_unchecked(a, n, &mut self.rng),
            b: share_unchecked(b, n, &mut self.rng),
            c: share_unchecked(a * b, n, &mut self.rng),
        }
    }

    fn make_mask(&mut self) -> ComparisonMask {
        let r = FieldElement::random(&mut self.rng);
        let n = self.parties;
        let bits = (0..MODULUS_BITS)
            .map(|i| share_unchecked(FieldElement::from(r.bit(i)), n, &mut self.rng))
            .collect();
        ComparisonMask { bits }
    }
}

impl Dealer for SeededDealer {
    fn parties(&self) -> usize {
        self.parties
    }
    fn triple(&mut self) -> Result<BeaverTriple> {
        Ok(self.make_triple())
    }
    fn comparison_mask(&mut self) -> Result<ComparisonMask> {
        Ok(self.make_mask())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MaterialKind {
    Triples,
    ComparisonRandomness,
}

impl MaterialKind {
    fn tag(self) -> u8 {
        match self {
            MaterialKind::Triples => 1,
            MaterialKind::ComparisonRandomness => 2,
        }
    }

    fn from_tag(tag: u8) -> Result<Self> {
        match tag {
            1 => Ok(MaterialKind::Triples),
            2 => Ok(MaterialKind::ComparisonRandomness),
            t => Err(Error::Material(format!("unknown material kind {t}"))),
        }
    }

    fn elements_per_item(self, parties: usize) -> usize {
        match self {
            MaterialKind::Triples => 3 * parties,
            MaterialKind::ComparisonRandomness => MODULUS_BITS * parties,
        }
    }
}

/// A finite batch of one kind of dealer output.
#[derive(Debug, PartialEq, Eq)]
pub struct PreprocessedMaterial {
    pub kind: MaterialKind,
    pub parties: usize,
    pub triples: Vec<BeaverTriple>,
    pub masks: Vec<ComparisonMask>,
}

impl PreprocessedMaterial {
    pub fn len(&self) -> usize {
        self.triples.len() + self.masks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn elements(&self) -> Vec<FieldElement> {
        let mut out = Vec::new();
        for t in &self.triples {
            for s in [&t.a, &t.b, &t.c] {
                out.extend_from_slice(s.values());
            }
        }
        for m in &self.masks {
            for b in &m.bits {
                out.extend_from_slice(b.values());
            }
        }
        out
    }

    /// Layout: kind tag (1 byte), party count (u64 LE), element count (u64 LE),
    /// then that many field elements as u64 LE.
    pub fn to_bytes(&self) -> Vec<u8> {
        let elements = self.elements();
        let mut out = Vec::with_capacity(17 + 8 * elements.len());
        out.push(self.kind.tag());
        out.extend_from_slice(&(self.parties as u64).to_le_bytes());
        out.extend_from_slice(&(elements.len() as u64).to_le_bytes());
        for e in elements {
            out.extend_from_slice(&e.value().to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 17 {
            return Err(Error::Material("truncated header".into()));
        }
        let kind = MaterialKind::from_tag(bytes[0])?;
        let parties = u64::from_le_bytes(bytes[1..9].try_into().unwrap()) as usize;
        let count = u64::from_le_bytes(bytes[9..17].try_into().unwrap()) as usize;
        if parties < 2 {
            return Err(Error::InvalidPartyCount(parties));
        }
        let body = &bytes[17..];
        if body.len() != count * 8 {
            return Err(Error::Material(format!(
                "expected {count} elements, found {} bytes",
                body.len()
            )));
        }
        let per_item = kind.elements_per_item(parties);
        if !count.is_multiple_of(per_item) {
            return Err(Error::Material("element count is not a whole number of items".into()));
        }
        let mut elements = Vec::with_capacity(count);
        for chunk in body.chunks_exact(8) {
            let v = u64::from_le_bytes(chunk.try_into().unwrap());
            elements.push(
                FieldElement::from_canonical(v).ok_or_else(|| Error::Material(format!("non-canonical element {v}")))?,
            );
        }
        let shared = |slice: &[FieldElement]| Shared::from_values(slice.iter().copied());
        let mut material = PreprocessedMaterial {
            kind,
            parties,
            triples: Vec::new(),
            masks: Vec::new(),
        };
        for item in elements.chunks_exact(per_item) {
            match kind {
                MaterialKind::Triples => material.triples.push(BeaverTriple {
                    a: shared(&item[..parties]),
                    b: shared(&item[parties..2 * parties]),
                    c: shared(&item[2 * parties..]),
                }),
                MaterialKind::ComparisonRandomness => material.masks.push(ComparisonMask {
                    bits: item.chunks_exact(parties).map(shared).collect(),
                }),
            }
        }
        Ok(material)
    }
}

/// Generates `count` items of dealer material, deterministic under `seed`.
pub fn dealer_gen(kind: MaterialKind, count: usize, parties: usize, seed: u64) -> Result<PreprocessedMaterial> {
    let mut dealer = SeededDealer::new(parties, seed)?;
    let mut material = PreprocessedMaterial {
        kind,
        parties,
        triples: Vec::new(),
        masks: Vec::new(),
    };
    match kind {
        MaterialKind::Triples => material.triples = (0..count).map(|_| dealer.make_triple()).collect(),
        MaterialKind::ComparisonRandomness => material.masks = (0..count).map(|_| dealer.make_mask()).collect(),
    }
    Ok(material)
}

/// Replays a fixed batch of material and fails once it runs out.
pub struct PreprocessedDealer {
    parties: usize,
    triples: VecDeque<BeaverTriple>,
    masks: VecDeque<ComparisonMask>,
}

impl PreprocessedDealer {
    pub fn new(parties: usize) -> Self {
        PreprocessedDealer {
            parties,
            triples: VecDeque::new(),
            masks: VecDeque::new(),
        }
    }

    pub fn with_material(mut self, material: PreprocessedMaterial) -> Result<Self> {
        if material.parties != self.parties {
            return Err(Error::Material(format!(
                "material for {} parties, dealer serves {}",
                material.parties, self.parties
            )));
        }
        self.triples.extend(material.triples);
        self.masks.extend(material.masks);
        Ok(self)
    }

    pub fn remaining_triples(&self) -> usize {
        self.triples.len()
    }
}

impl Dealer for PreprocessedDealer {
    fn parties(&self) -> usize {
        self.parties
    }
    fn triple(&mut self) -> Result<BeaverTriple> {
        self.triples.pop_front().ok_or(Error::TripleExhausted)
    }
    fn comparison_mask(&mut self) -> Result<ComparisonMask> {
        self.masks.pop_front().ok_or(Error::ComparisonMaskExhausted)
    }
}
