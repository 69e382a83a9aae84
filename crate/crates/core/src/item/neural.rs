//! JOIN, LINK and predictive JOIN built from neuroids.
//!
//! Every construction runs as control firings plus the uniform
//! [`PjoinRules`] update. Control is limited to forcing items to fire,
//! setting the memory of freshly allocated pools, and marking LINK targets
//! as prepared.

use std::collections::{BTreeMap, BTreeSet};

use rand::Rng as _;

use super::network::{Label, Role};
use super::{Item, ItemId, ItemKind, ItemMachineState, JoinParams, Mode};
use crate::error::{Error, Result};
use crate::neuroid::{
    LinkPhase, LocalView, Memory, Network, NeuroidId, NeuroidState, SynapseMemory as S, TransitionRules, FIRING_SLACK,
};
use crate::rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PjoinMode {
    /// JOIN, then LINKs from C_P down to A_P and B_P through relays.
    FourStep,
    /// JOIN, then one step that tags existing reciprocal synapses.
    ThreeStep,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RelayParams {
    pub size: usize,
    /// Probability of a synapse from each source neuroid to each relay.
    pub in_p: f64,
    /// Probability of a synapse from each relay to each target neuroid.
    pub out_p: f64,
    /// Firing sources needed for a relay to fire.
    pub quorum: usize,
}

impl Default for RelayParams {
    fn default() -> Self {
        Self { size: 60, in_p: 0.5, out_p: 0.7, quorum: 3 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NeuralConfig {
    pub join: JoinParams,
    /// Candidates allocated per JOIN.
    pub pool_size: usize,
    /// Probability of a synapse from each child neuroid to each candidate.
    pub pool_edge_p: f64,
    pub relay: RelayParams,
    pub mode: PjoinMode,
    /// Three-step mode: probability that a child-to-candidate synapse has a
    /// back-synapse.
    pub reciprocity: f64,
    pub seed: u64,
}

impl NeuralConfig {
    pub fn new(mode: PjoinMode, seed: u64) -> Self {
        let (pool_size, pool_edge_p) = match mode {
            PjoinMode::FourStep => (24, 0.5),
            PjoinMode::ThreeStep => (30, 0.8),
        };
        Self {
            join: JoinParams::default(),
            pool_size,
            pool_edge_p,
            relay: RelayParams::default(),
            mode,
            reciprocity: 0.9,
            seed,
        }
    }

    /// Refraction long enough that a downward wave never re-triggers the
    /// child whose firing started it: one more than the downward hop.
    pub fn refraction(&self) -> u32 {
        1 + self.down_latency() as u32
    }

    /// Steps from a predictive part firing to its children's predictive parts.
    pub fn down_latency(&self) -> u64 {
        match self.mode {
            PjoinMode::FourStep => 2,
            PjoinMode::ThreeStep => 1,
        }
    }
}

/// Whether a neuroid joins its item's predictive part.
pub fn predictive_bit(id: NeuroidId, seed: u64) -> bool {
    rng::mix(seed ^ rng::mix(id as u64 ^ 0xc0ff_ee00)) & 1 == 1
}

/// The uniform neuroid update for JOIN, LINK and predictive JOIN.
#[derive(Clone, Copy, Debug)]
pub struct PjoinRules {
    pub k: usize,
    pub seed: u64,
}

struct Sides {
    a: bool,
    b: bool,
    parent: bool,
}

fn all_fired(view: &mut LocalView<'_>, tags: [S; 2]) -> bool {
    let mut any = false;
    for i in 0..view.synapses.len() {
        if tags.contains(&view.synapses[i].memory) {
            any = true;
            if !view.source_fired(i) {
                return false;
            }
        }
    }
    any
}

fn sides(view: &mut LocalView<'_>) -> Sides {
    let a = all_fired(view, [S::FromA, S::FromADoubled]);
    let b = all_fired(view, [S::FromB, S::FromBDoubled]);
    let mut parent = false;
    for i in 0..view.synapses.len() {
        if view.synapses[i].memory == S::Parent && view.source_fired(i) {
            parent = true;
        }
    }
    Sides { a, b, parent }
}

fn retag(view: &mut LocalView<'_>, from: S, to: S, factor: f64) {
    for syn in view.synapses.iter_mut().filter(|s| s.memory == from) {
        syn.memory = to;
        syn.weight *= factor;
    }
}

impl PjoinRules {
    fn parent_weight(&self, t: f64) -> f64 {
        2.0 * t / self.k as f64
    }

    fn set_passive(&self, view: &mut LocalView<'_>, passive: bool) {
        let w = self.parent_weight(view.state.threshold);
        for syn in view.synapses.iter_mut() {
            match (syn.memory, passive) {
                (S::Parent, true) => {
                    syn.memory = S::ParentPassive;
                    syn.weight = 0.0;
                }
                (S::ParentPassive, false) => {
                    syn.memory = S::Parent;
                    syn.weight = w;
                }
                _ => {}
            }
        }
    }

    fn link_update(&self, view: &mut LocalView<'_>) -> bool {
        let t = view.state.threshold;
        let k = self.k as f64;
        match view.state.link {
            LinkPhase::Idle => false,
            LinkPhase::Preparing { parent } => {
                for syn in view.synapses.iter_mut() {
                    match syn.memory {
                        S::Dormant => {
                            syn.memory = S::Armed;
                            syn.weight = t / k;
                        }
                        S::Reciprocal => {
                            syn.memory = S::ArmedReciprocal;
                            syn.weight = 2.0 * t / k;
                        }
                        _ => {}
                    }
                }
                view.state.link = LinkPhase::Prepared { parent };
                true
            }
            LinkPhase::Prepared { parent } => {
                if view.fired_next {
                    for i in 0..view.synapses.len() {
                        let mem = view.synapses[i].memory;
                        if mem != S::Armed && mem != S::ArmedReciprocal {
                            continue;
                        }
                        let fired = view.source_fired(i);
                        let syn = &mut view.synapses[i];
                        if fired {
                            (syn.memory, syn.weight) =
                                if parent { (S::Parent, 2.0 * t / k) } else { (S::LOperational, t / k) };
                        } else {
                            syn.memory = if mem == S::Armed { S::Dormant } else { S::Reciprocal };
                            syn.weight = 0.0;
                        }
                    }
                    view.state.link = LinkPhase::Idle;
                }
                true
            }
        }
    }
}

impl TransitionRules for PjoinRules {
    fn is_resting(&self, state: &NeuroidState) -> bool {
        state.link == LinkPhase::Idle && !matches!(state.memory, Memory::Candidate | Memory::Poised)
    }

    fn update(&self, view: &mut LocalView<'_>) {
        if self.link_update(view) {
            return;
        }
        let t = view.state.threshold;
        let k = self.k as f64;
        let fired = view.fired_next;
        match view.state.memory {
            Memory::Candidate | Memory::Poised => {
                // Refraction may block the firing itself, so the input decides.
                let candidate = view.state.memory == Memory::Candidate;
                if view.input < t * (1.0 - FIRING_SLACK) {
                    view.state.memory = Memory::Dismissed;
                    for syn in view.synapses.iter_mut() {
                        syn.memory = S::Dead;
                        syn.weight = 0.0;
                    }
                    return;
                }
                let w = t * t / (2.0 * k * view.input);
                let tag = if candidate { S::FromA } else { S::FromB };
                for i in 0..view.synapses.len() {
                    if view.synapses[i].memory != S::Null {
                        continue;
                    }
                    let src = view.source_fired(i);
                    let syn = &mut view.synapses[i];
                    if src {
                        syn.memory = tag;
                        syn.weight = w;
                    } else if !candidate {
                        syn.memory = S::Dead;
                        syn.weight = 0.0;
                    }
                }
                view.state.memory = if candidate {
                    Memory::Poised
                } else if predictive_bit(view.id, self.seed) {
                    Memory::PCandidate
                } else {
                    Memory::Operational
                };
            }
            Memory::PCandidate => {
                if fired {
                    retag(view, S::FromA, S::FromA, 2.0);
                    retag(view, S::FromB, S::FromB, 2.0);
                    view.state.memory = Memory::POperational;
                }
            }
            Memory::Operational | Memory::PredictingA | Memory::PredictingB => {
                let s = sides(view);
                if fired {
                    retag(view, S::FromADoubled, S::FromA, 0.5);
                    retag(view, S::FromBDoubled, S::FromB, 0.5);
                    view.state.memory = Memory::Operational;
                } else if s.a && !s.b && view.state.memory == Memory::Operational {
                    retag(view, S::FromB, S::FromBDoubled, 2.0);
                    view.state.memory = Memory::PredictingB;
                } else if s.b && !s.a && view.state.memory == Memory::Operational {
                    retag(view, S::FromA, S::FromADoubled, 2.0);
                    view.state.memory = Memory::PredictingA;
                }
            }
            Memory::POperational | Memory::PPredictingA | Memory::PPredictingB => {
                if !fired {
                    return;
                }
                let s = sides(view);
                let m = view.state.memory;
                let full = (s.a && s.b) || (m == Memory::PPredictingA && s.a) || (m == Memory::PPredictingB && s.b);
                if full || (!s.a && !s.b && !s.parent) {
                    // Whole item fired: confirmed prediction, plain JOIN, or a forced leaf.
                    view.state.memory = Memory::POperational;
                    self.set_passive(view, false);
                } else if s.a {
                    view.state.memory = Memory::PPredictingB;
                    self.set_passive(view, true);
                } else if s.b {
                    view.state.memory = Memory::PPredictingA;
                    self.set_passive(view, true);
                } else {
                    self.set_passive(view, true);
                }
            }
            Memory::Null
            | Memory::Joined
            | Memory::Dismissed
            | Memory::Relay
            | Memory::SensorZero
            | Memory::SensorOne => {}
        }
    }
}

/// A network of items built by neuroid-level constructions.
#[derive(Clone, Debug)]
pub struct NeuralNet {
    pub net: Network,
    pub rules: PjoinRules,
    pub cfg: NeuralConfig,
    items: Vec<Item>,
    roles: Vec<Role>,
    owner: Vec<Option<ItemId>>,
    banks: BTreeMap<ItemId, Vec<NeuroidId>>,
    last_full: BTreeSet<ItemId>,
    rng: rng::Rng,
}

impl NeuralNet {
    pub fn new(cfg: NeuralConfig) -> Result<Self> {
        cfg.join.validate()?;
        let mut net = Network::new(cfg.seed);
        net.set_refraction_policy(cfg.refraction());
        Ok(Self {
            net,
            rules: PjoinRules { k: cfg.join.k, seed: cfg.seed },
            cfg,
            items: Vec::new(),
            roles: Vec::new(),
            owner: Vec::new(),
            banks: BTreeMap::new(),
            last_full: BTreeSet::new(),
            rng: rng::seeded(rng::derive(cfg.seed, 1)),
        })
    }

    pub fn item(&self, id: ItemId) -> &Item {
        &self.items[id]
    }

    pub fn items(&self) -> &[Item] {
        &self.items
    }

    pub fn role(&self, id: ItemId) -> Role {
        self.roles[id]
    }

    fn threshold(&self) -> f64 {
        self.cfg.join.threshold
    }

    fn add_neuroid(&mut self, memory: Memory, owner: Option<ItemId>) -> NeuroidId {
        let id = self.net.add_neuroid(NeuroidState::new(self.threshold(), memory));
        self.owner.push(owner);
        id
    }

    fn push_item(
        &mut self,
        kind: ItemKind,
        role: Role,
        level: u32,
        neuroids: Vec<NeuroidId>,
        predictive: Vec<NeuroidId>,
    ) -> ItemId {
        let id = self.items.len();
        let children = match role {
            Role::Pjoin { a, b } => Some((a, b)),
            _ => None,
        };
        for &n in &neuroids {
            self.owner[n] = Some(id);
        }
        self.items.push(Item { id, kind, level, children, parents: Vec::new(), neuroids, predictive });
        self.roles.push(role);
        id
    }

    /// An established level-0 item of `r` neuroids with a hash-chosen predictive part.
    pub fn add_leaf(&mut self) -> ItemId {
        let r = self.cfg.join.r;
        let mut neuroids = Vec::with_capacity(r);
        let mut predictive = Vec::new();
        for _ in 0..r {
            let id = self.net.len();
            let p = predictive_bit(id, self.cfg.seed);
            let n = self.add_neuroid(if p { Memory::POperational } else { Memory::Operational }, None);
            neuroids.push(n);
            if p {
                predictive.push(n);
            }
        }
        if predictive.is_empty() {
            predictive.push(neuroids[0]);
            self.net.neuroid_mut(neuroids[0]).memory = Memory::POperational;
        }
        self.push_item(ItemKind::BasisOne, Role::Leaf, 0, neuroids, predictive)
    }

    /// Steps once with the given items forced to fire in full.
    pub fn step_items(&mut self, forced: &[ItemId]) -> Result<Vec<NeuroidId>> {
        let ids: Vec<NeuroidId> = forced.iter().flat_map(|&x| self.items[x].neuroids.clone()).collect();
        self.step_neuroids(&ids)
    }

    fn step_neuroids(&mut self, forced: &[NeuroidId]) -> Result<Vec<NeuroidId>> {
        let rules = self.rules;
        Ok(self.net.step(forced, &rules)?.fired)
    }

    /// Runs idle steps until the network has been quiescent for a full
    /// refraction period.
    pub fn settle(&mut self) -> Result<()> {
        let need = self.cfg.refraction() as usize + 1;
        let mut calm = 0;
        for _ in 0..200 {
            self.step_neuroids(&[])?;
            calm = if self.net.quiescent() { calm + 1 } else { 0 };
            if calm >= need {
                self.last_full.clear();
                return Ok(());
            }
        }
        Err(Error::Link("network did not settle".into()))
    }

    /// Allocates a relay bank fed by `sources`.
    pub fn build_bank(&mut self, sources: &[NeuroidId]) -> Vec<NeuroidId> {
        let RelayParams { size, in_p, quorum, .. } = self.cfg.relay;
        let w = self.threshold() / quorum as f64;
        let mut bank = Vec::with_capacity(size);
        for _ in 0..size {
            let relay = self.add_neuroid(Memory::Relay, None);
            for &s in sources {
                if self.rng.gen_bool(in_p) {
                    self.net.add_synapse(s, relay, w, S::Null);
                }
            }
            bank.push(relay);
        }
        bank
    }

    fn wire_bank(&mut self, bank: &[NeuroidId], targets: &[NeuroidId]) {
        let out_p = self.cfg.relay.out_p;
        for &r in bank {
            for &t in targets {
                if self.rng.gen_bool(out_p) {
                    self.net.add_synapse(r, t, 0.0, S::Dormant);
                }
            }
        }
    }

    /// LINK through `bank`: afterwards, firing of `sources` makes every
    /// target fire two steps later.
    pub fn link_via(
        &mut self,
        bank: &[NeuroidId],
        sources: &[NeuroidId],
        targets: &[NeuroidId],
        parent: bool,
    ) -> Result<()> {
        self.wire_bank(bank, targets);
        for &t in targets {
            self.net.neuroid_mut(t).link = LinkPhase::Preparing { parent };
        }
        self.step_neuroids(sources)?;
        self.step_neuroids(&[])?;
        self.step_neuroids(&[])?;
        self.finish_link(targets)
    }

    fn finish_link(&mut self, targets: &[NeuroidId]) -> Result<()> {
        let failed = targets.iter().filter(|&&t| self.net.neuroid(t).link != LinkPhase::Idle).count();
        if failed > 0 {
            for &t in targets {
                self.net.neuroid_mut(t).link = LinkPhase::Idle;
            }
            return Err(Error::Link(format!("{failed} of {} targets never fired", targets.len())));
        }
        self.settle()
    }

    fn bank_for(&mut self, src: ItemId, sources: &[NeuroidId]) -> Vec<NeuroidId> {
        if let Some(b) = self.banks.get(&src) {
            return b.clone();
        }
        let bank = self.build_bank(sources);
        self.banks.insert(src, bank.clone());
        bank
    }

    /// Plain LINK from all of `a` to all of `b`.
    pub fn create_link(&mut self, a: ItemId, b: ItemId) -> Result<()> {
        let sources = self.items[a].neuroids.clone();
        let targets = self.items[b].neuroids.clone();
        let bank = self.bank_for(a, &sources);
        self.link_via(&bank, &sources, &targets, false)
    }

    /// Runs the JOIN protocol. Joined neuroids keep the memory the rules
    /// gave them (Operational or PCandidate).
    fn join(&mut self, a: ItemId, b: ItemId) -> Result<Vec<NeuroidId>> {
        let (k, t) = (self.cfg.join.k, self.threshold());
        let a_n = self.items[a].neuroids.clone();
        let b_n = self.items[b].neuroids.clone();
        let mut pool = Vec::with_capacity(self.cfg.pool_size);
        for _ in 0..self.cfg.pool_size {
            let c = self.add_neuroid(Memory::Null, None);
            for &src in a_n.iter().chain(&b_n) {
                if self.rng.gen_bool(self.cfg.pool_edge_p) {
                    self.net.add_synapse(src, c, t / k as f64, S::Null);
                    if self.cfg.mode == PjoinMode::ThreeStep && self.rng.gen_bool(self.cfg.reciprocity) {
                        self.net.add_synapse(c, src, 0.0, S::Reciprocal);
                    }
                }
            }
            pool.push(c);
        }
        self.step_items(&[a])?;
        for &c in &pool {
            self.net.neuroid_mut(c).memory = Memory::Candidate;
        }
        self.step_items(&[b])?;
        self.step_neuroids(&[])?;

        // A neuroid whose input from one child comes only from that child's
        // predictive part could be fooled by that part firing alone.
        let a_p: BTreeSet<NeuroidId> = self.items[a].predictive.iter().copied().collect();
        let b_p: BTreeSet<NeuroidId> = self.items[b].predictive.iter().copied().collect();
        let mut joined = Vec::new();
        for &c in &pool {
            if !matches!(self.net.neuroid(c).memory, Memory::Operational | Memory::PCandidate) {
                continue;
            }
            let syns = self.net.incoming(c);
            let only_part = |tag: S, part: &BTreeSet<NeuroidId>| {
                syns.iter().filter(|s| s.memory == tag).all(|s| part.contains(&s.src))
            };
            if only_part(S::FromA, &a_p) || only_part(S::FromB, &b_p) {
                self.net.neuroid_mut(c).memory = Memory::Dismissed;
                for syn in self.net.incoming_mut(c) {
                    syn.memory = S::Dead;
                    syn.weight = 0.0;
                }
                continue;
            }
            joined.push(c);
        }
        if joined.len() < k {
            return Err(Error::Recruitment(format!("JOIN recruited {} neuroids, need {k}", joined.len())));
        }
        Ok(joined)
    }

    fn register_join(&mut self, a: ItemId, b: ItemId, neuroids: Vec<NeuroidId>, predictive: Vec<NeuroidId>) -> ItemId {
        let level = 1 + self.items[a].level.max(self.items[b].level);
        let id = self.push_item(ItemKind::Pjoin, Role::Pjoin { a, b }, level, neuroids, predictive);
        self.items[a].parents.push(id);
        self.items[b].parents.push(id);
        id
    }

    /// Plain JOIN: afterwards C fires exactly when A and B fire together.
    pub fn create_join(&mut self, a: ItemId, b: ItemId) -> Result<ItemId> {
        let joined = self.join(a, b)?;
        for &c in &joined {
            self.net.neuroid_mut(c).memory = Memory::Joined;
        }
        self.settle()?;
        Ok(self.register_join(a, b, joined, Vec::new()))
    }

    pub fn create_pjoin(&mut self, a: ItemId, b: ItemId) -> Result<ItemId> {
        let joined = self.join(a, b)?;
        let a_p = self.items[a].predictive.clone();
        let b_p = self.items[b].predictive.clone();
        let mut cp: Vec<NeuroidId> =
            joined.iter().copied().filter(|&c| self.net.neuroid(c).memory == Memory::PCandidate).collect();
        if self.cfg.mode == PjoinMode::ThreeStep {
            let reaches = |net: &Network, c: NeuroidId, part: &[NeuroidId]| part.iter().any(|&x| net.has_edge(c, x));
            let (keep, drop): (Vec<_>, Vec<_>) =
                cp.iter().partition(|&&c| reaches(&self.net, c, &a_p) && reaches(&self.net, c, &b_p));
            for c in drop {
                self.net.neuroid_mut(c).memory = Memory::Operational;
            }
            cp = keep;
        }
        if cp.is_empty() {
            let c = joined[0];
            self.net.neuroid_mut(c).memory = Memory::PCandidate;
            cp.push(c);
        }
        self.settle()?;
        let targets: Vec<NeuroidId> = a_p.iter().chain(&b_p).copied().collect();
        match self.cfg.mode {
            PjoinMode::FourStep => {
                let bank = self.build_bank(&cp);
                self.link_via(&bank, &cp, &targets, true)?;
                let id = self.register_join(a, b, joined, cp);
                self.banks.insert(id, bank);
                self.reset_dynamics();
                Ok(id)
            }
            PjoinMode::ThreeStep => {
                for &t in &targets {
                    self.net.neuroid_mut(t).link = LinkPhase::Preparing { parent: true };
                }
                self.step_neuroids(&cp)?;
                self.step_neuroids(&[])?;
                self.finish_link(&targets)?;
                let id = self.register_join(a, b, joined, cp);
                self.reset_dynamics();
                Ok(id)
            }
        }
    }

    /// External parent stand-in above `child`: half-size item of inert
    /// neuroids linked to `child`'s predictive part with Parent synapses.
    pub fn add_probe(&mut self, child: ItemId) -> Result<ItemId> {
        let size = (self.cfg.join.r / 2).max(self.cfg.relay.quorum);
        let neuroids: Vec<NeuroidId> = (0..size).map(|_| self.add_neuroid(Memory::Null, None)).collect();
        let id = self.push_item(
            ItemKind::Pjoin,
            Role::Probe { child },
            self.items[child].level + 1,
            neuroids.clone(),
            neuroids.clone(),
        );
        self.items[child].parents.push(id);
        let targets = self.items[child].predictive.clone();
        match self.cfg.mode {
            PjoinMode::FourStep => {
                let bank = self.bank_for(id, &neuroids);
                self.link_via(&bank, &neuroids, &targets, true)?;
            }
            PjoinMode::ThreeStep => {
                // One hop down, matching the predictive part's own back-synapses.
                self.wire_bank(&neuroids, &targets);
                for &t in &targets {
                    self.net.neuroid_mut(t).link = LinkPhase::Preparing { parent: true };
                }
                self.step_neuroids(&neuroids)?;
                self.step_neuroids(&[])?;
                self.finish_link(&targets)?;
            }
        }
        self.reset_dynamics();
        Ok(id)
    }

    /// Control reset of all operational state: every item Operational and
    /// not passive, prediction weight doubling undone.
    pub fn reset_dynamics(&mut self) {
        let w_parent = 2.0 * self.threshold() / self.cfg.join.k as f64;
        for id in 0..self.net.len() {
            let st = self.net.neuroid_mut(id);
            st.memory = match st.memory {
                Memory::PredictingA | Memory::PredictingB => Memory::Operational,
                Memory::PPredictingA | Memory::PPredictingB => Memory::POperational,
                m => m,
            };
            for syn in self.net.incoming_mut(id) {
                match syn.memory {
                    S::FromADoubled => (syn.memory, syn.weight) = (S::FromA, syn.weight / 2.0),
                    S::FromBDoubled => (syn.memory, syn.weight) = (S::FromB, syn.weight / 2.0),
                    S::ParentPassive => (syn.memory, syn.weight) = (S::Parent, w_parent),
                    _ => {}
                }
            }
        }
        self.last_full.clear();
    }

    /// Item-level reading of a set of firing neuroids.
    pub fn decode(&self, fired: &[NeuroidId]) -> (Vec<Label>, Vec<ItemId>) {
        let mut per_item: BTreeMap<ItemId, BTreeSet<NeuroidId>> = BTreeMap::new();
        for &n in fired {
            if let Some(item) = self.owner[n] {
                per_item.entry(item).or_default().insert(n);
            }
        }
        let mut labels = Vec::new();
        let mut anomalous = Vec::new();
        for (id, set) in per_item {
            let item = &self.items[id];
            let label = match self.roles[id] {
                Role::Probe { .. } if set.len() == item.neuroids.len() => Some(Label::Down(id)),
                _ if set.len() == item.neuroids.len() => Some(Label::Full(id)),
                _ if set.len() == item.predictive.len() && item.predictive.iter().all(|n| set.contains(n)) => {
                    let up = match self.roles[id] {
                        Role::Pjoin { a, b } => self.last_full.contains(&a) || self.last_full.contains(&b),
                        _ => false,
                    };
                    Some(if up { Label::Up(id) } else { Label::Down(id) })
                }
                _ => None,
            };
            match label {
                Some(l) => labels.push(l),
                None => anomalous.push(id),
            }
        }
        labels.sort_unstable();
        (labels, anomalous)
    }

    /// One step with `forced` items (full) and `probes` firing; returns the
    /// decoded labels of the step and any items that fired partially in a
    /// way no item-level label describes.
    pub fn advance(&mut self, forced: &[Label]) -> Result<(Vec<Label>, Vec<ItemId>)> {
        let ids: Vec<NeuroidId> = forced.iter().flat_map(|l| self.items[l.item()].neuroids.clone()).collect();
        let fired = self.step_neuroids(&ids)?;
        let (labels, anomalous) = self.decode(&fired);
        self.last_full = labels.iter().filter_map(|l| if let Label::Full(x) = l { Some(*x) } else { None }).collect();
        Ok((labels, anomalous))
    }

    /// Operational state read off the neuroids: the mode from the
    /// non-predictive neuroids, passivity from the predictive part's Parent
    /// synapses. `None` when the neuroids disagree.
    pub fn item_state(&self, id: ItemId) -> Option<ItemMachineState> {
        let item = &self.items[id];
        let p: BTreeSet<NeuroidId> = item.predictive.iter().copied().collect();
        let mut modes = item.neuroids.iter().filter(|n| !p.contains(n)).map(|&n| self.net.neuroid(n).memory);
        let first = modes.next().unwrap_or(Memory::Operational);
        if modes.any(|m| m != first) {
            return None;
        }
        let mode = match first {
            Memory::PredictingA => Mode::PredictingA,
            Memory::PredictingB => Mode::PredictingB,
            _ => Mode::Operational,
        };
        let mut passive_flags = item.predictive.iter().filter_map(|&n| {
            let syns = self.net.incoming(n);
            let has = syns.iter().any(|s| matches!(s.memory, S::Parent | S::ParentPassive));
            has.then(|| syns.iter().all(|s| s.memory != S::Parent))
        });
        let passive = match passive_flags.next() {
            None => false,
            Some(f) => {
                if passive_flags.any(|g| g != f) {
                    return None;
                }
                f
            }
        };
        Some(ItemMachineState { mode, passive })
    }

    /// Whether the item's predictive part has Parent synapses at all.
    pub fn has_parent_links(&self, id: ItemId) -> bool {
        self.items[id]
            .predictive
            .iter()
            .any(|&n| self.net.incoming(n).iter().any(|s| matches!(s.memory, S::Parent | S::ParentPassive)))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn four(seed: u64) -> NeuralNet {
        NeuralNet::new(NeuralConfig::new(PjoinMode::FourStep, seed)).unwrap()
    }

    fn run(nn: &mut NeuralNet, forced: &[Label], steps: usize) -> Vec<(usize, Vec<Label>)> {
        let mut out = Vec::new();
        for s in 0..steps {
            let (labels, anomalous) = nn.advance(if s == 0 { forced } else { &[] }).unwrap();
            assert!(anomalous.is_empty(), "partial firing of {anomalous:?}");
            if !labels.is_empty() {
                out.push((s, labels));
            }
        }
        out
    }

    #[test]
    fn join_weights_sum_to_half_threshold_per_side() {
        let mut nn = four(3);
        let (a, b) = (nn.add_leaf(), nn.add_leaf());
        let c = nn.create_join(a, b).unwrap();
        for &n in &nn.item(c).neuroids {
            for tag in [S::FromA, S::FromB] {
                let sum: f64 = nn.net.incoming(n).iter().filter(|s| s.memory == tag).map(|s| s.weight).sum();
                assert!((sum - 0.5).abs() < 1e-12, "{sum}");
            }
        }
    }

    #[test]
    fn join_truth_table() {
        let mut nn = four(5);
        let (a, b) = (nn.add_leaf(), nn.add_leaf());
        let c = nn.create_join(a, b).unwrap();
        for (fa, fb) in [(false, false), (true, false), (false, true), (true, true)] {
            let mut forced = Vec::new();
            if fa {
                forced.push(Label::Full(a));
            }
            if fb {
                forced.push(Label::Full(b));
            }
            let trace = run(&mut nn, &forced, 6);
            let c_fired = trace.iter().any(|(_, l)| l.contains(&Label::Full(c)));
            assert_eq!(c_fired, fa && fb, "{fa} {fb}");
            nn.settle().unwrap();
        }
    }

    #[test]
    fn link_fires_target_two_steps_later() {
        let mut nn = four(8);
        let (a, b) = (nn.add_leaf(), nn.add_leaf());
        nn.create_link(a, b).unwrap();
        let trace = run(&mut nn, &[Label::Full(a)], 6);
        assert_eq!(trace, vec![(0, vec![Label::Full(a)]), (2, vec![Label::Full(b)])]);
        nn.settle().unwrap();
        let trace = run(&mut nn, &[Label::Full(b)], 6);
        assert_eq!(trace, vec![(0, vec![Label::Full(b)])]);
    }

    #[test]
    fn pjoin_predicts_missing_child() {
        let mut nn = four(11);
        let (a, b) = (nn.add_leaf(), nn.add_leaf());
        let c = nn.create_pjoin(a, b).unwrap();
        assert!(!nn.item(c).predictive.is_empty());
        let trace = run(&mut nn, &[Label::Full(a)], 8);
        assert_eq!(trace, vec![(0, vec![Label::Full(a)]), (1, vec![Label::Up(c)]), (3, vec![Label::Down(b)])]);
        assert_eq!(nn.item_state(c).unwrap().mode, Mode::PredictingB);
        nn.settle().unwrap();
        let trace = run(&mut nn, &[Label::Full(b)], 8);
        assert_eq!(trace[1], (1, vec![Label::Full(c)]));
        assert_eq!(nn.item_state(c).unwrap(), ItemMachineState::OPERATIONAL);
    }

    #[test]
    fn pjoin_both_children_is_plain_join() {
        let mut nn = four(12);
        let (a, b) = (nn.add_leaf(), nn.add_leaf());
        let c = nn.create_pjoin(a, b).unwrap();
        let trace = run(&mut nn, &[Label::Full(a), Label::Full(b)], 8);
        assert_eq!(trace, vec![(0, vec![Label::Full(a), Label::Full(b)]), (1, vec![Label::Full(c)])]);
        assert_eq!(nn.item_state(c).unwrap(), ItemMachineState::OPERATIONAL);
    }

    #[test]
    fn pjoin_weight_discipline() {
        let mut nn = four(13);
        let (a, b) = (nn.add_leaf(), nn.add_leaf());
        let c = nn.create_pjoin(a, b).unwrap();
        let cp: BTreeSet<_> = nn.item(c).predictive.iter().copied().collect();
        for &n in &nn.item(c).neuroids {
            let side =
                |tag: S| -> f64 { nn.net.incoming(n).iter().filter(|s| s.memory == tag).map(|s| s.weight).sum() };
            let (wa, wb) = (side(S::FromA), side(S::FromB));
            if cp.contains(&n) {
                assert!(wa >= 1.0 - 1e-12 && wb >= 1.0 - 1e-12);
            } else {
                assert!((wa + wb - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn passive_predictive_part_ignores_second_search() {
        let mut nn = four(14);
        let (a, b) = (nn.add_leaf(), nn.add_leaf());
        let c = nn.create_pjoin(a, b).unwrap();
        let p = nn.add_probe(c).unwrap();
        let trace = run(&mut nn, &[Label::Down(p)], 8);
        assert_eq!(
            trace,
            vec![(0, vec![Label::Down(p)]), (2, vec![Label::Down(c)]), (4, vec![Label::Down(a), Label::Down(b)])]
        );
        assert!(nn.item_state(c).unwrap().passive);
        nn.settle().unwrap();
        let trace = run(&mut nn, &[Label::Down(p)], 8);
        assert_eq!(trace, vec![(0, vec![Label::Down(p)])]);
    }

    #[test]
    fn three_step_pjoin_predicts_in_one_hop() {
        let mut nn = NeuralNet::new(NeuralConfig::new(PjoinMode::ThreeStep, 21)).unwrap();
        let (a, b) = (nn.add_leaf(), nn.add_leaf());
        let c = nn.create_pjoin(a, b).unwrap();
        let trace = run(&mut nn, &[Label::Full(b)], 6);
        assert_eq!(trace, vec![(0, vec![Label::Full(b)]), (1, vec![Label::Up(c)]), (2, vec![Label::Down(a)])]);
    }

    #[test]
    fn audit_sees_only_incoming_sources() {
        let mut nn = four(15);
        nn.net.enable_audit();
        let (a, b) = (nn.add_leaf(), nn.add_leaf());
        let c = nn.create_pjoin(a, b).unwrap();
        run(&mut nn, &[Label::Full(a)], 6);
        let log = nn.net.take_audit();
        assert!(!log.is_empty());
        for (reader, src) in log {
            assert!(nn.net.has_edge(src, reader), "{reader} read {src}");
        }
        let _ = c;
    }

    #[test]
    fn predictive_bit_is_roughly_fair() {
        let ones = (0..10_000).filter(|&i| predictive_bit(i, 77)).count();
        assert!((4700..5300).contains(&ones), "{ones}");
    }
}
