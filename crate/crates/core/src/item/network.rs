//! Synchronous item-level engine.
//!
//! Each step maps the item firings at `t` to those at `t + 1`. Upward hops
//! (child fires, parent responds) cost one step. Downward hops (a predictive
//! part fires, the children's predictive parts respond) cost
//! [`Dynamics::down_latency`] steps, which lets the same engine mirror a
//! neuroid backend whose LINK path goes through relays.

use std::collections::BTreeMap;

use fixedbitset::FixedBitSet;
use rand::Rng as _;

use super::{item_transition, Emission, ItemEvent, ItemId, ItemKind, ItemMachineState};
use crate::error::{Error, Result};
use crate::rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Dynamics {
    pub down_latency: u64,
    /// Steps after any firing during which an item's predictive part stays silent.
    pub refractory: u64,
    /// A downward search enters one randomly chosen child instead of both.
    pub random_child: bool,
}

impl Default for Dynamics {
    fn default() -> Self {
        Self { down_latency: 1, refractory: 2, random_child: false }
    }
}

impl Dynamics {
    /// Blocks re-triggering of the child that just fired for every latency.
    pub fn guarded(down_latency: u64) -> Self {
        Self { down_latency, refractory: down_latency + 1, random_child: false }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Role {
    Leaf,
    Pjoin {
        a: ItemId,
        b: ItemId,
    },
    /// Stand-in for an external parent: fires downward into `child` only.
    Probe {
        child: ItemId,
    },
}

#[derive(Clone, Debug)]
pub struct Node {
    pub kind: ItemKind,
    pub role: Role,
    pub level: u32,
    pub parents: Vec<ItemId>,
    /// Basis items covered, as a bitset over basis item ids.
    pub leaves: FixedBitSet,
    pub state: ItemMachineState,
    pub last_full: Option<u64>,
    pub last_fire: Option<u64>,
    pub created_at: u64,
    pub active_from: u64,
}

/// One item-level firing.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Label {
    Full(ItemId),
    /// Predictive part fires because one child fired.
    Up(ItemId),
    /// Predictive part fires because of input from above.
    Down(ItemId),
}

impl Label {
    pub fn item(&self) -> ItemId {
        match *self {
            Label::Full(x) | Label::Up(x) | Label::Down(x) => x,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct StepOutput {
    pub t: u64,
    /// Firings at `t`, sorted.
    pub labels: Vec<Label>,
    /// Leaves whose predictive part fired downward at `t`.
    pub leaf_down: Vec<ItemId>,
    /// Leaves that received downward input at `t`, whether or not they fired.
    pub leaf_targeted: Vec<ItemId>,
}

#[derive(Clone, Debug)]
pub struct ItemNetwork {
    nodes: Vec<Node>,
    dynamics: Dynamics,
    now: u64,
    current: Vec<Label>,
    deliveries: BTreeMap<u64, Vec<ItemId>>,
    basis_count: usize,
    rng: rng::Rng,
}

impl ItemNetwork {
    pub fn new(dynamics: Dynamics, seed: u64) -> Self {
        Self {
            nodes: Vec::new(),
            dynamics,
            now: 0,
            current: Vec::new(),
            deliveries: BTreeMap::new(),
            basis_count: 0,
            rng: rng::seeded(seed),
        }
    }

    pub fn dynamics(&self) -> Dynamics {
        self.dynamics
    }

    pub fn now(&self) -> u64 {
        self.now
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn node(&self, id: ItemId) -> &Node {
        &self.nodes[id]
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn current(&self) -> &[Label] {
        &self.current
    }

    /// Adds a level-0 item. Leaves added while `count_as_basis` is true get
    /// a bit in the leaf bitsets.
    pub fn add_leaf(&mut self, kind: ItemKind, count_as_basis: bool) -> ItemId {
        let id = self.nodes.len();
        let mut leaves = FixedBitSet::new();
        if count_as_basis {
            leaves.grow(self.basis_count + 1);
            leaves.insert(self.basis_count);
            self.basis_count += 1;
        }
        self.nodes.push(Node {
            kind,
            role: Role::Leaf,
            level: 0,
            parents: Vec::new(),
            leaves,
            state: ItemMachineState::OPERATIONAL,
            last_full: None,
            last_fire: None,
            created_at: self.now,
            active_from: self.now,
        });
        id
    }

    pub fn add_probe(&mut self, child: ItemId) -> ItemId {
        let id = self.add_leaf(ItemKind::Pjoin, false);
        self.nodes[id].role = Role::Probe { child };
        id
    }

    /// Registers `C = PJOIN(a, b)`. It responds to its children from
    /// `active_from` on; `fired_at` records the creation firing.
    pub fn add_pjoin(&mut self, a: ItemId, b: ItemId, active_from: u64, fired_at: Option<u64>) -> Result<ItemId> {
        if a == b || a >= self.len() || b >= self.len() {
            return Err(Error::Input(format!("cannot join items {a} and {b}")));
        }
        let id = self.nodes.len();
        let mut leaves = self.nodes[a].leaves.clone();
        leaves.union_with(&self.nodes[b].leaves);
        let level = 1 + self.nodes[a].level.max(self.nodes[b].level);
        self.nodes.push(Node {
            kind: ItemKind::Pjoin,
            role: Role::Pjoin { a, b },
            level,
            parents: Vec::new(),
            leaves,
            state: ItemMachineState::OPERATIONAL,
            last_full: fired_at,
            last_fire: fired_at,
            created_at: self.now,
            active_from,
        });
        self.nodes[a].parents.push(id);
        self.nodes[b].parents.push(id);
        Ok(id)
    }

    /// Clears all dynamic state: machine states, firing history, pending waves.
    pub fn reset_dynamics(&mut self) {
        for node in &mut self.nodes {
            node.state = ItemMachineState::OPERATIONAL;
            node.last_full = None;
            node.last_fire = None;
        }
        self.current.clear();
        self.deliveries.clear();
    }

    /// No firing now and no downward wave in flight.
    pub fn idle(&self) -> bool {
        self.current.is_empty() && self.deliveries.is_empty()
    }

    fn refractory_at(&self, id: ItemId, t: u64) -> bool {
        match self.nodes[id].last_fire {
            Some(tf) => tf < t && t - tf <= self.dynamics.refractory,
            None => false,
        }
    }

    fn schedule_down(&mut self, from: ItemId, t: u64, only_one: bool) {
        let targets: Vec<ItemId> = match self.nodes[from].role {
            Role::Leaf => return,
            Role::Probe { child } => vec![child],
            Role::Pjoin { a, b } => {
                if only_one {
                    vec![if self.rng.gen_bool(0.5) { a } else { b }]
                } else {
                    vec![a, b]
                }
            }
        };
        self.deliveries.entry(t + self.dynamics.down_latency).or_default().extend(targets);
    }

    /// Advances one step. `external` are firings forced at the new time:
    /// `Full` of leaves (sensor-driven or test events) or `Down` of probes.
    pub fn advance(&mut self, external: &[Label]) -> StepOutput {
        let t = self.now;
        let next = t + 1;
        let current = std::mem::take(&mut self.current);

        // Downward waves launched by predictive parts firing at t.
        for &label in &current {
            match label {
                Label::Full(x) | Label::Up(x) => self.schedule_down(x, t, false),
                Label::Down(x) => {
                    let one = self.dynamics.random_child && matches!(self.nodes[x].role, Role::Pjoin { .. });
                    self.schedule_down(x, t, one);
                }
            }
        }

        // Upward: which children of each active parent fired in full at t.
        let mut child_input: BTreeMap<ItemId, (bool, bool)> = BTreeMap::new();
        for &label in &current {
            if let Label::Full(x) = label {
                for &c in &self.nodes[x].parents {
                    let node = &self.nodes[c];
                    if node.active_from > next {
                        continue;
                    }
                    if let Role::Pjoin { a, b } = node.role {
                        let e = child_input.entry(c).or_insert((false, false));
                        e.0 |= a == x;
                        e.1 |= b == x;
                    }
                }
            }
        }

        let mut labels: Vec<Label> = Vec::new();
        let mut fired_next: BTreeMap<ItemId, ()> = BTreeMap::new();
        for (&c, &(fa, fb)) in &child_input {
            let event = match (fa, fb) {
                (true, true) => ItemEvent::Both,
                (true, false) => ItemEvent::A,
                (false, true) => ItemEvent::B,
                (false, false) => continue,
            };
            let (state, emission) = item_transition(self.nodes[c].state, event);
            match emission {
                Emission::Full => {
                    self.nodes[c].state = state;
                    labels.push(Label::Full(c));
                    fired_next.insert(c, ());
                }
                Emission::PartUp { .. } => {
                    if self.refractory_at(c, next) {
                        // only the non-predictive neuroids take up the prediction
                        self.nodes[c].state.mode = state.mode;
                    } else {
                        self.nodes[c].state = state;
                        labels.push(Label::Up(c));
                        fired_next.insert(c, ());
                    }
                }
                Emission::None | Emission::PartDown => self.nodes[c].state = state,
            }
        }

        // External firings.
        for &label in external {
            let x = label.item();
            if fired_next.contains_key(&x) {
                continue;
            }
            if let Label::Full(_) = label {
                self.nodes[x].state = ItemMachineState::OPERATIONAL;
            }
            labels.push(label);
            fired_next.insert(x, ());
        }

        // Downward arrivals.
        let mut leaf_down = Vec::new();
        let mut leaf_targeted = Vec::new();
        if let Some(mut arrivals) = self.deliveries.remove(&next) {
            arrivals.sort_unstable();
            arrivals.dedup();
            for x in arrivals {
                if self.nodes[x].role == Role::Leaf {
                    leaf_targeted.push(x);
                }
                if fired_next.contains_key(&x) || self.refractory_at(x, next) {
                    continue;
                }
                let (state, emission) = item_transition(self.nodes[x].state, ItemEvent::ParentDown);
                self.nodes[x].state = state;
                if emission == Emission::PartDown {
                    labels.push(Label::Down(x));
                    fired_next.insert(x, ());
                    if self.nodes[x].role == Role::Leaf {
                        leaf_down.push(x);
                    }
                }
            }
        }

        labels.sort_unstable();
        for &label in &labels {
            let node = &mut self.nodes[label.item()];
            node.last_fire = Some(next);
            if let Label::Full(_) = label {
                node.last_full = Some(next);
            }
        }
        self.now = next;
        self.current = labels.clone();
        StepOutput { t: next, labels, leaf_down, leaf_targeted }
    }

    /// Item-DAG export, one [`super::Item::export_line`]-style line per item.
    pub fn export(&self) -> String {
        let mut out = String::new();
        for (id, node) in self.nodes.iter().enumerate() {
            let item = super::Item {
                id,
                kind: node.kind,
                level: node.level,
                children: match node.role {
                    Role::Pjoin { a, b } => Some((a, b)),
                    _ => None,
                },
                parents: node.parents.clone(),
                neuroids: Vec::new(),
                predictive: Vec::new(),
            };
            out.push_str(&item.export_line());
            out.push('\n');
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::item::Mode;

    /// A, B leaves; C = PJOIN(A, B); probe P above C.
    fn single(d: Dynamics) -> (ItemNetwork, [ItemId; 4]) {
        let mut net = ItemNetwork::new(d, 1);
        let a = net.add_leaf(ItemKind::BasisZero, true);
        let b = net.add_leaf(ItemKind::BasisOne, true);
        let c = net.add_pjoin(a, b, 0, None).unwrap();
        let p = net.add_probe(c);
        (net, [a, b, c, p])
    }

    fn run(net: &mut ItemNetwork, first: &[Label], steps: usize) -> Vec<(u64, Vec<Label>)> {
        let mut out = Vec::new();
        let o = net.advance(first);
        out.push((o.t, o.labels));
        for _ in 1..steps {
            let o = net.advance(&[]);
            if !o.labels.is_empty() {
                out.push((o.t, o.labels));
            }
        }
        out
    }

    #[test]
    fn both_children_fire_parent_next_step() {
        let (mut net, [a, b, c, _]) = single(Dynamics::default());
        let trace = run(&mut net, &[Label::Full(a), Label::Full(b)], 6);
        assert_eq!(trace, vec![(1, vec![Label::Full(a), Label::Full(b)]), (2, vec![Label::Full(c)])]);
        assert_eq!(net.node(c).state, ItemMachineState::OPERATIONAL);
    }

    #[test]
    fn one_child_predicts_the_other() {
        let (mut net, [a, b, c, _]) = single(Dynamics::default());
        let trace = run(&mut net, &[Label::Full(a)], 6);
        assert_eq!(trace, vec![(1, vec![Label::Full(a)]), (2, vec![Label::Up(c)]), (3, vec![Label::Down(b)])]);
        assert_eq!(net.node(c).state.mode, Mode::PredictingB);
        // confirmation
        let trace = run(&mut net, &[Label::Full(b)], 6);
        assert_eq!(trace[1].1, vec![Label::Full(c)]);
        assert_eq!(net.node(c).state, ItemMachineState::OPERATIONAL);
    }

    #[test]
    fn latency_two_shifts_only_downward_hops() {
        let (mut net, [a, b, c, _]) = single(Dynamics::guarded(2));
        let trace = run(&mut net, &[Label::Full(a)], 8);
        assert_eq!(trace, vec![(1, vec![Label::Full(a)]), (2, vec![Label::Up(c)]), (4, vec![Label::Down(b)])]);
    }

    #[test]
    fn search_from_above_goes_passive() {
        let (mut net, [a, b, c, p]) = single(Dynamics::default());
        let trace = run(&mut net, &[Label::Down(p)], 6);
        assert_eq!(
            trace,
            vec![(1, vec![Label::Down(p)]), (2, vec![Label::Down(c)]), (3, vec![Label::Down(a), Label::Down(b)])]
        );
        for _ in 0..4 {
            net.advance(&[]);
        }
        let trace = run(&mut net, &[Label::Down(p)], 6);
        assert_eq!(trace, vec![(trace[0].0, vec![Label::Down(p)])]);
    }

    #[test]
    fn random_child_search_enters_one_child() {
        let d = Dynamics { random_child: true, ..Dynamics::default() };
        let (mut net, [_, _, _, p]) = single(d);
        let trace = run(&mut net, &[Label::Down(p)], 6);
        assert_eq!(trace.len(), 3);
        assert_eq!(trace[2].1.len(), 1);
    }

    #[test]
    fn inactive_parent_ignores_children() {
        let mut net = ItemNetwork::new(Dynamics::default(), 0);
        let a = net.add_leaf(ItemKind::BasisZero, true);
        let b = net.add_leaf(ItemKind::BasisOne, true);
        net.add_pjoin(a, b, 10, None).unwrap();
        let trace = run(&mut net, &[Label::Full(a), Label::Full(b)], 4);
        assert_eq!(trace.len(), 1);
    }

    #[test]
    fn leaf_sets_and_levels() {
        let mut net = ItemNetwork::new(Dynamics::default(), 0);
        let l: Vec<ItemId> = (0..3).map(|_| net.add_leaf(ItemKind::BasisOne, true)).collect();
        let c = net.add_pjoin(l[0], l[1], 0, None).unwrap();
        let e = net.add_pjoin(c, l[2], 0, None).unwrap();
        assert_eq!(net.node(e).level, 2);
        assert_eq!(net.node(e).leaves.ones().collect::<Vec<_>>(), vec![0, 1, 2]);
        assert!(net.add_pjoin(c, c, 0, None).is_err());
        assert_eq!(net.export().lines().nth(4).unwrap(), "4 pjoin 2 3,2 0 0");
    }
}
