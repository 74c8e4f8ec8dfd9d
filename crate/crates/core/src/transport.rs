//! Simulated anonymous channel between clients and tracing servers.
//!
//! Each delivery is re-ordered inside the receiving inbox by a seeded
//! permutation and tagged with a random origin label, so a server sees no
//! sender identity and no arrival order it could link across days.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::client::{LocationReport, PseudoId};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Delivered {
    /// Random per-delivery label; carries nothing about the sender.
    pub origin: u64,
    pub report: LocationReport,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Receipt {
    pub server: usize,
    pub pseudo_id: PseudoId,
    pub attempts: u32,
}

#[derive(Debug)]
pub struct SimTransport {
    rng: ChaCha8Rng,
    inboxes: Vec<Vec<Delivered>>,
    failure_rate: f64,
    max_attempts: u32,
}

impl SimTransport {
    pub fn new(servers: usize, seed: u64) -> Self {
        SimTransport {
            rng: ChaCha8Rng::seed_from_u64(seed),
            inboxes: vec![Vec::new(); servers],
            failure_rate: 0.0,
            max_attempts: 1,
        }
    }

    /// Drops each send attempt with probability `rate`, retrying up to
    /// `max_attempts` times per message.
    pub fn with_failures(mut self, rate: f64, max_attempts: u32) -> Self {
        self.failure_rate = rate.clamp(0.0, 1.0);
        self.max_attempts = max_attempts.max(1);
        self
    }

    pub fn servers(&self) -> usize {
        self.inboxes.len()
    }

    /// Delivers a batch to one server. On error nothing from the batch
    /// reaches the inbox.
    pub fn deliver(&mut self, server: usize, batch: Vec<LocationReport>) -> Result<Vec<Receipt>> {
        if server >= self.inboxes.len() {
            return Err(Error::InvalidInput(format!("no server {server}")));
        }
        let mut receipts = Vec::with_capacity(batch.len());
        for r in &batch {
            let mut attempts = 1;
            while self.failure_rate > 0.0 && self.rng.gen_bool(self.failure_rate) {
                if attempts == self.max_attempts {
                    return Err(Error::RetryExhausted { server, attempts });
                }
                attempts += 1;
            }
            receipts.push(Receipt {
                server,
                pseudo_id: r.pseudo_id,
                attempts,
            });
        }
        // Inside-out shuffle step per message: the inbox stays a uniform
        // permutation of everything delivered so far.
        let inbox = &mut self.inboxes[server];
        for report in batch {
            inbox.push(Delivered {
                origin: self.rng.gen(),
                report,
            });
            let j = self.rng.gen_range(0..inbox.len());
            let last = inbox.len() - 1;
            inbox.swap(j, last);
        }
        Ok(receipts)
    }

    pub fn inbox(&self, server: usize) -> &[Delivered] {
        &self.inboxes[server]
    }

    pub fn pending(&self) -> usize {
        self.inboxes.iter().map(Vec::len).sum()
    }

    /// Empties one server's inbox.
    pub fn drain(&mut self, server: usize) -> Vec<LocationReport> {
        std::mem::take(&mut self.inboxes[server])
            .into_iter()
            .map(|d| d.report)
            .collect()
    }
}
