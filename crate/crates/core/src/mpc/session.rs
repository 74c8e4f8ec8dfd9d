//! Synchronous-round protocol engine for the semi-honest parties.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{secure_rand, BeaverTriple, Dealer, OpCounters, ProtocolTrace, Shared};
use crate::error::{Error, Result};
use crate::field::{FieldElement, MODULUS_BITS};

/// Drives the collaborative primitives for one set of parties.
///
/// The session owns the correlated-randomness source, the parties' local
/// randomness (for hidden random generation), the transcript, and the
/// operation counters.
pub struct Session<D: Dealer> {
    dealer: D,
    party_rng: ChaCha8Rng,
    trace: ProtocolTrace,
    counters: OpCounters,
}

impl<D: Dealer> Session<D> {
    pub fn new(dealer: D, seed: u64) -> Self {
        Session {
            dealer,
            party_rng: ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_a11c_e000_0001),
            trace: ProtocolTrace::new(false),
            counters: OpCounters::default(),
        }
    }

    pub fn with_trace(mut self, enabled: bool) -> Self {
        self.trace = ProtocolTrace::new(enabled);
        self
    }

    /// Starts or stops recording, keeping what was recorded so far.
    pub fn set_trace(&mut self, enabled: bool) {
        self.trace.set_enabled(enabled);
    }

    pub fn parties(&self) -> usize {
        self.dealer.parties()
    }

    pub fn trace(&self) -> &ProtocolTrace {
        &self.trace
    }

    pub fn take_trace(&mut self) -> ProtocolTrace {
        let enabled = self.trace.is_enabled();
        std::mem::replace(&mut self.trace, ProtocolTrace::new(enabled))
    }

    pub fn counters(&self) -> OpCounters {
        self.counters
    }

    pub fn counters_mut(&mut self) -> &mut OpCounters {
        &mut self.counters
    }

    pub fn dealer_mut(&mut self) -> &mut D {
        &mut self.dealer
    }

    fn check(&self, x: &Shared) -> Result<()> {
        if x.parties() != self.parties() {
            return Err(Error::Protocol(format!(
                "share vector has {} entries, session has {} parties",
                x.parties(),
                self.parties()
            )));
        }
        Ok(())
    }

    /// Every party broadcasts its share; all learn the sum.
    pub fn open(&mut self, x: &Shared) -> Result<FieldElement> {
        self.check(x)?;
        let round = self.trace.next_round();
        let v = x.reconstruct();
        self.trace.record_broadcast(round, x.values(), v);
        self.counters.openings += 1;
        Ok(v)
    }

    fn open_pair(&mut self, x: &Shared, y: &Shared) -> (FieldElement, FieldElement) {
        let round = self.trace.next_round();
        let (vx, vy) = (x.reconstruct(), y.reconstruct());
        self.trace.record_broadcast(round, x.values(), vx);
        self.trace.record_broadcast(round, y.values(), vy);
        self.counters.openings += 2;
        (vx, vy)
    }

    /// Beaver multiplication with an explicit triple.
    pub fn secure_mul_with(&mut self, x: &Shared, y: &Shared, triple: BeaverTriple) -> Result<Shared> {
        self.check(x)?;
        self.check(y)?;
        self.check(&triple.a)?;
        let d_sh = x - &triple.a;
        let e_sh = y - &triple.b;
        let (d, e) = self.open_pair(&d_sh, &e_sh);
        let z = &(&triple.c + &triple.b.scale(d)) + &triple.a.scale(e);
        self.counters.multiplications += 1;
        Ok(z.add_public(d * e))
    }

    /// Beaver multiplication drawing the next triple from the dealer.
    pub fn secure_mul(&mut self, x: &Shared, y: &Shared) -> Result<Shared> {
        let t = self.dealer.triple()?;
        self.secure_mul_with(x, y, t)
    }

    /// Shares of a uniform value nobody knows.
    pub fn secure_rand(&mut self) -> Shared {
        secure_rand(self.parties(), &mut self.party_rng).expect("session has at least two parties")
    }

    /// Masked zero test: opens `d * r` for a fresh hidden `r` and reports
    /// whether it is zero. Wrong only when `d != 0` and `r = 0`.
    pub fn eq_zero_open(&mut self, d: &Shared) -> Result<bool> {
        let r = self.secure_rand();
        let v = self.secure_mul(d, &r)?;
        self.counters.eq_zero_tests += 1;
        Ok(self.open(&v)?.is_zero())
    }

    /// Shares of the bit `[hidden(a) < c]`.
    ///
    /// Contract: the hidden integer behind `a` and the public `c` both lie in
    /// `[0, Q/4)`. Outside that range the result is meaningless and nothing
    /// at runtime can tell.
    ///
    /// With `z = a - c`, `a < c` exactly when `z` wraps past `Q/2`, which is
    /// the low bit of `x = 2z mod Q`. That bit is read by opening `x + r` for
    /// a dealer-supplied `r` with shared bits and correcting for the
    /// wraparound `[x + r >= Q] = [r > x + r mod Q]`, computed by a bitwise
    /// comparison of public and shared bits.
    pub fn secure_less_than_bit(&mut self, a: &Shared, c: FieldElement) -> Result<Shared> {
        self.check(a)?;
        let n = self.parties();
        let two = FieldElement::new(2);
        let x = a.sub_public(c).scale(two);
        let mask = self.dealer.comparison_mask()?;
        let m = self.open(&(&x + &mask.value()))?;

        // e_i = r_i xor m_i, linear because m is public.
        let xor_public = |bit: &Shared, public: bool| -> Shared {
            if public {
                bit.public_minus(FieldElement::ONE)
            } else {
                bit.clone()
            }
        };

        // prefix[i] = prod_{j >= i} (1 - e_j); the first differing bit from
        // the top decides r > m, and r_i = 1 there exactly when m_i = 0.
        let mut wrap = Shared::zero(n);
        let mut above = Shared::constant(FieldElement::ONE, n);
        for i in (0..MODULUS_BITS).rev() {
            let m_i = m.bit(i);
            let not_e = xor_public(&mask.bits[i], m_i).public_minus(FieldElement::ONE);
            let here = if i == MODULUS_BITS - 1 {
                not_e
            } else {
                self.secure_mul(&above, &not_e)?
            };
            if !m_i {
                wrap = &wrap + &(&above - &here);
            }
            above = here;
        }

        // lsb(x) = m_0 xor r_0 xor wrap
        let t = xor_public(&mask.bits[0], m.bit(0));
        let tw = self.secure_mul(&t, &wrap)?;
        self.counters.less_than_tests += 1;
        Ok(&(&t + &wrap) - &tw.scale(two))
    }

    pub fn secure_less_than(&mut self, a: &Shared, c: FieldElement) -> Result<bool> {
        let bit = self.secure_less_than_bit(a, c)?;
        self.open_bit(&bit)
    }

    /// Opens a shared bit; any other opened value is a protocol fault.
    pub fn open_bit(&mut self, bit: &Shared) -> Result<bool> {
        match self.open(bit)?.value() {
            0 => Ok(false),
            1 => Ok(true),
            v => Err(Error::Protocol(format!("opened {v} where a bit was expected"))),
        }
    }
}
