//! Subscribers: the only parties that know which pseudo IDs belong to
//! which person. They issue token pools, start traces for diagnosed users
//! and turn broadcast token lists into notifications.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::io::{Read, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::client::{PseudoId, PseudoIdPool, SubscriberId};
use crate::error::{Error, Result};
use crate::mpc::Dealer;
use crate::orchestrator::{PartySet, QueryParams, TraceResult};

pub const NOTIFICATION_TEXT: &str = "you may have been in contact with the virus";

/// Default pool size per user per day.
pub const DEFAULT_POOL_SIZE: usize = 64;

pub type RealId = u64;

/// Hands out tokens no subscriber has seen before.
#[derive(Debug)]
pub struct TokenIssuer {
    rng: ChaCha8Rng,
    issued: HashSet<PseudoId>,
}

impl TokenIssuer {
    pub fn new(seed: u64) -> Self {
        TokenIssuer {
            rng: ChaCha8Rng::seed_from_u64(seed),
            issued: HashSet::new(),
        }
    }

    pub fn fresh(&mut self) -> PseudoId {
        loop {
            let id = PseudoId(self.rng.gen());
            if self.issued.insert(id) {
                return id;
            }
        }
    }

    /// Records an externally issued token; false if it was already known.
    pub fn claim(&mut self, id: PseudoId) -> bool {
        self.issued.insert(id)
    }

    pub fn issued(&self) -> usize {
        self.issued.len()
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct Notification {
    pub real_id: RealId,
    pub message: &'static str,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Registration {
    pub pools: Vec<Vec<PseudoId>>,
}

impl Registration {
    pub fn tokens(&self) -> impl Iterator<Item = PseudoId> + '_ {
        self.pools.iter().flatten().copied()
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Subscriber {
    id: SubscriberId,
    users: BTreeMap<RealId, Registration>,
    owner: HashMap<PseudoId, RealId>,
    received: Vec<Vec<PseudoId>>,
}

impl Subscriber {
    pub fn new(id: SubscriberId) -> Self {
        Subscriber {
            id,
            users: BTreeMap::new(),
            owner: HashMap::new(),
            received: Vec::new(),
        }
    }

    pub fn id(&self) -> SubscriberId {
        self.id
    }

    pub fn users(&self) -> impl Iterator<Item = (RealId, &Registration)> {
        self.users.iter().map(|(k, v)| (*k, v))
    }

    pub fn is_registered(&self, real_id: RealId) -> bool {
        self.users.contains_key(&real_id)
    }

    /// Registers a user and issues their first pool of `m` tokens.
    pub fn register_user(&mut self, real_id: RealId, m: usize, issuer: &mut TokenIssuer) -> Result<PseudoIdPool> {
        if self.users.contains_key(&real_id) {
            return Err(Error::AlreadyRegistered(real_id));
        }
        self.users.insert(real_id, Registration::default());
        self.issue_pool(real_id, m, issuer)
    }

    /// Issues another pool, typically one per day.
    pub fn issue_pool(&mut self, real_id: RealId, m: usize, issuer: &mut TokenIssuer) -> Result<PseudoIdPool> {
        let reg = self.users.get_mut(&real_id).ok_or(Error::NotRegistered(real_id))?;
        let ids: Vec<PseudoId> = (0..m).map(|_| issuer.fresh()).collect();
        for id in &ids {
            self.owner.insert(*id, real_id);
        }
        reg.pools.push(ids.clone());
        Ok(PseudoIdPool::new(self.id, ids))
    }

    pub fn owner_of(&self, id: PseudoId) -> Option<RealId> {
        self.owner.get(&id).copied()
    }

    /// Every token issued to `real_id`.
    pub fn tokens_of(&self, real_id: RealId) -> Result<Vec<PseudoId>> {
        let reg = self.users.get(&real_id).ok_or(Error::NotRegistered(real_id))?;
        Ok(reg.tokens().collect())
    }

    /// The other tokens held by whoever holds `id`, if that is one of ours.
    pub fn sibling_tokens(&self, id: PseudoId) -> Option<Vec<PseudoId>> {
        let owner = self.owner_of(id)?;
        Some(self.users[&owner].tokens().filter(|t| *t != id).collect())
    }

    /// One notification per distinct local user among `broadcast`.
    pub fn match_notifications(&self, broadcast: &[PseudoId]) -> Vec<Notification> {
        let matched: BTreeSet<RealId> = broadcast.iter().filter_map(|id| self.owner_of(*id)).collect();
        matched
            .into_iter()
            .map(|real_id| Notification {
                real_id,
                message: NOTIFICATION_TEXT,
            })
            .collect()
    }

    /// Accepts a broadcast list and returns the notifications it triggers.
    pub fn receive_broadcast(&mut self, broadcast: &[PseudoId]) -> Vec<Notification> {
        self.received.push(broadcast.to_vec());
        self.match_notifications(broadcast)
    }

    pub fn received(&self) -> &[Vec<PseudoId>] {
        &self.received
    }
}

/// One registration-table row.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RegistrationRow {
    pub subscriber_id: u32,
    pub real_id: RealId,
    pub token_hex: PseudoId,
}

/// All subscribers plus the shared token issuer.
#[derive(Debug)]
pub struct Registry {
    issuer: TokenIssuer,
    subscribers: Vec<Subscriber>,
}

impl Registry {
    pub fn new(subscribers: usize, seed: u64) -> Self {
        Registry {
            issuer: TokenIssuer::new(seed),
            subscribers: (0..subscribers as u32)
                .map(|i| Subscriber::new(SubscriberId(i)))
                .collect(),
        }
    }

    pub fn subscribers(&self) -> &[Subscriber] {
        &self.subscribers
    }

    pub fn subscribers_mut(&mut self) -> &mut [Subscriber] {
        &mut self.subscribers
    }

    fn subscriber_index(&self, id: SubscriberId) -> Result<usize> {
        let i = id.0 as usize;
        if i < self.subscribers.len() {
            Ok(i)
        } else {
            Err(Error::InvalidInput(format!("no subscriber {}", id.0)))
        }
    }

    pub fn register_user(&mut self, subscriber: SubscriberId, real_id: RealId, m: usize) -> Result<PseudoIdPool> {
        let i = self.subscriber_index(subscriber)?;
        self.subscribers[i].register_user(real_id, m, &mut self.issuer)
    }

    pub fn issue_pool(&mut self, subscriber: SubscriberId, real_id: RealId, m: usize) -> Result<PseudoIdPool> {
        let i = self.subscriber_index(subscriber)?;
        self.subscribers[i].issue_pool(real_id, m, &mut self.issuer)
    }

    /// Maps a token to its subscriber and holder.
    pub fn resolve(&self, id: PseudoId) -> Option<(SubscriberId, RealId)> {
        self.subscribers.iter().find_map(|s| s.owner_of(id).map(|r| (s.id, r)))
    }

    /// Distinct holders of `ids`.
    pub fn resolve_all(&self, ids: impl IntoIterator<Item = PseudoId>) -> BTreeSet<(SubscriberId, RealId)> {
        ids.into_iter().filter_map(|id| self.resolve(id)).collect()
    }

    /// Submits every token of a diagnosed, consenting user as the query
    /// seed. Each identified token is expanded by its own subscriber into
    /// all tokens of the same holder before the next generation.
    pub fn initiate_trace<D: Dealer>(
        &self,
        subscriber: SubscriberId,
        real_id: RealId,
        consented: bool,
        party: &mut PartySet<D>,
        params: &QueryParams,
    ) -> Result<TraceResult> {
        let i = self.subscriber_index(subscriber)?;
        let seeds = self.subscribers[i].tokens_of(real_id)?;
        if !consented {
            return Err(Error::InvalidInput(format!(
                "user {real_id} has not consented to a trace"
            )));
        }
        self.trace_tokens(&seeds, party, params)
    }

    /// Trace from an explicit list of seed tokens, expanding every
    /// identified token to all tokens of its holder.
    pub fn trace_tokens<D: Dealer>(
        &self,
        seeds: &[PseudoId],
        party: &mut PartySet<D>,
        params: &QueryParams,
    ) -> Result<TraceResult> {
        party.multi_generation_query_with(seeds, params, |id| {
            self.subscribers
                .iter()
                .find_map(|s| s.sibling_tokens(id))
                .unwrap_or_default()
        })
    }

    /// Adds empty subscribers until there are at least `n`.
    pub fn ensure_subscribers(&mut self, n: usize) {
        while self.subscribers.len() < n {
            let id = SubscriberId(self.subscribers.len() as u32);
            self.subscribers.push(Subscriber::new(id));
        }
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        for s in &self.subscribers {
            for (real_id, reg) in s.users() {
                for token_hex in reg.tokens() {
                    out.serialize(RegistrationRow {
                        subscriber_id: s.id.0,
                        real_id,
                        token_hex,
                    })?;
                }
            }
        }
        out.flush()?;
        Ok(())
    }

    /// Rebuilds a registry from a table; each user's imported tokens form
    /// one pool.
    pub fn read_csv<R: Read>(r: R, seed: u64) -> Result<Self> {
        let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(r);
        let mut rows: Vec<RegistrationRow> = Vec::new();
        for row in reader.deserialize() {
            rows.push(row?);
        }
        let count = rows.iter().map(|r| r.subscriber_id as usize + 1).max().unwrap_or(0);
        let mut registry = Registry::new(count, seed);
        for row in rows {
            if !registry.issuer.claim(row.token_hex) {
                return Err(Error::InvalidInput(format!("token {} listed twice", row.token_hex)));
            }
            let s = &mut registry.subscribers[row.subscriber_id as usize];
            let reg = s.users.entry(row.real_id).or_default();
            if reg.pools.is_empty() {
                reg.pools.push(Vec::new());
            }
            reg.pools[0].push(row.token_hex);
            s.owner.insert(row.token_hex, row.real_id);
        }
        Ok(registry)
    }
}
