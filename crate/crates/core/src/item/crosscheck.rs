//! Comparison of the neuroid-level constructions with the item-level engine.
//!
//! A [`Pair`] holds the same item DAG on both backends, built in the same
//! order so item ids agree. Each stimulus is applied to both and the item
//! firings are compared step by step, then the operational states.

use std::collections::HashSet;

use rayon::prelude::*;

use super::network::{Dynamics, ItemNetwork, Label};
use super::neural::{NeuralConfig, NeuralNet, PjoinMode};
use super::{item_transition, Emission, ItemEvent, ItemId, ItemKind, ItemMachineState};
use crate::error::Result;

/// Longest window a single stimulus may take to die out.
const MAX_WINDOW: usize = 64;

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub enum Stimulus {
    /// The listed leaves fire in full at the same step.
    Full(Vec<ItemId>),
    /// The probe fires downward.
    Probe,
    /// The child currently predicted by the given item fires; nothing
    /// happens if the item predicts nothing.
    Predicted(ItemId),
}

#[derive(Clone, Debug)]
pub struct Pair {
    pub abs: ItemNetwork,
    pub neural: NeuralNet,
    pub probe: ItemId,
    /// The item the probe sits on.
    pub top: ItemId,
}

/// One step of a stimulus window, with the labels of both backends.
#[derive(Clone, Debug, PartialEq)]
pub struct StepTrace {
    pub offset: usize,
    pub abs: Vec<Label>,
    pub neural: Vec<Label>,
}

fn neural_config(mode: PjoinMode, seed: u64) -> NeuralConfig {
    NeuralConfig::new(mode, seed)
}

fn dynamics_for(cfg: &NeuralConfig) -> Dynamics {
    Dynamics::guarded(cfg.down_latency())
}

impl Pair {
    /// `A`, `B`, `C = PJOIN(A, B)` and a probe above `C`. Ids 0 to 3.
    pub fn single(mode: PjoinMode, seed: u64) -> Result<Self> {
        let cfg = neural_config(mode, seed);
        let mut neural = NeuralNet::new(cfg)?;
        let mut abs = ItemNetwork::new(dynamics_for(&cfg), seed);
        let (a, b) = (neural.add_leaf(), neural.add_leaf());
        abs.add_leaf(ItemKind::BasisOne, true);
        abs.add_leaf(ItemKind::BasisOne, true);
        let c = neural.create_pjoin(a, b)?;
        abs.add_pjoin(a, b, 0, None)?;
        let probe = neural.add_probe(c)?;
        abs.add_probe(c);
        Ok(Self { abs, neural, probe, top: c })
    }

    /// Leaves `A`, `B`, `D`, then `C = PJOIN(A, B)`, `E = PJOIN(C, D)` and a
    /// probe above `E`. Ids 0 to 5.
    pub fn tree(mode: PjoinMode, seed: u64) -> Result<Self> {
        let cfg = neural_config(mode, seed);
        let mut neural = NeuralNet::new(cfg)?;
        let mut abs = ItemNetwork::new(dynamics_for(&cfg), seed);
        for _ in 0..3 {
            neural.add_leaf();
            abs.add_leaf(ItemKind::BasisOne, true);
        }
        let c = neural.create_pjoin(0, 1)?;
        abs.add_pjoin(0, 1, 0, None)?;
        let e = neural.create_pjoin(c, 2)?;
        abs.add_pjoin(c, 2, 0, None)?;
        let probe = neural.add_probe(e)?;
        abs.add_probe(e);
        Ok(Self { abs, neural, probe, top: e })
    }

    fn resolve(&self, stimulus: &Stimulus) -> Vec<Label> {
        match stimulus {
            Stimulus::Full(items) => items.iter().map(|&x| Label::Full(x)).collect(),
            Stimulus::Probe => vec![Label::Down(self.probe)],
            Stimulus::Predicted(c) => {
                let (a, b) = self.neural.item(*c).children.expect("predicted needs a join");
                match self.abs.node(*c).state.mode {
                    super::Mode::PredictingA => vec![Label::Full(a)],
                    super::Mode::PredictingB => vec![Label::Full(b)],
                    super::Mode::Operational => Vec::new(),
                }
            }
        }
    }

    /// Applies one stimulus to both backends and runs them until the
    /// abstract engine is idle and a full refraction period has passed
    /// without firing. Differences are appended to `mismatches`.
    pub fn apply(&mut self, stimulus: &Stimulus, mismatches: &mut Vec<String>) -> Result<Vec<StepTrace>> {
        let forced = self.resolve(stimulus);
        let quiet_needed = self.abs.dynamics().refractory as usize + 1;
        let mut trace = Vec::new();
        let mut quiet = 0;
        for offset in 0..MAX_WINDOW {
            let ext: &[Label] = if offset == 0 { &forced } else { &[] };
            let abs = self.abs.advance(ext).labels;
            let (neural, anomalous) = self.neural.advance(ext)?;
            if !anomalous.is_empty() {
                mismatches.push(format!("{stimulus:?} +{offset}: partial firing of items {anomalous:?}"));
            }
            if abs != neural {
                mismatches.push(format!("{stimulus:?} +{offset}: abstract {abs:?} neural {neural:?}"));
            }
            let silent = abs.is_empty() && neural.is_empty();
            if abs.len() + neural.len() > 0 {
                trace.push(StepTrace { offset, abs, neural });
            }
            quiet = if silent && self.abs.idle() { quiet + 1 } else { 0 };
            if quiet >= quiet_needed {
                break;
            }
        }
        if quiet < quiet_needed {
            mismatches.push(format!("{stimulus:?}: activity did not die out within {MAX_WINDOW} steps"));
        }
        self.compare_states(stimulus, mismatches);
        Ok(trace)
    }

    fn compare_states(&self, stimulus: &Stimulus, mismatches: &mut Vec<String>) {
        for id in 0..self.abs.len() {
            if id == self.probe {
                continue;
            }
            let want = self.abs.node(id).state;
            match self.neural.item_state(id) {
                None => mismatches.push(format!("{stimulus:?}: item {id} neuroids disagree on state")),
                Some(got) => {
                    let passive_visible = self.neural.has_parent_links(id);
                    if got.mode != want.mode || (passive_visible && got.passive != want.passive) {
                        mismatches.push(format!("{stimulus:?}: item {id} abstract {want:?} neural {got:?}"));
                    }
                }
            }
        }
    }
}

#[derive(Clone, Debug, Default)]
pub struct CrosscheckReport {
    pub sequences: usize,
    pub stimuli: usize,
    pub mismatches: Vec<String>,
    /// (state, event) pairs exercised on the item under the probe.
    pub covered: HashSet<(ItemMachineState, ItemEvent)>,
}

impl CrosscheckReport {
    fn merge(mut self, other: Self) -> Self {
        self.sequences += other.sequences;
        self.stimuli += other.stimuli;
        self.mismatches.extend(other.mismatches);
        self.covered.extend(other.covered);
        self
    }

    pub fn passed(&self) -> bool {
        self.mismatches.is_empty()
    }
}

/// The event the item `c` sees from a stimulus, if any.
pub fn event_for(pair: &Pair, c: ItemId, stimulus: &Stimulus) -> Option<ItemEvent> {
    let (a, b) = pair.neural.item(c).children?;
    match stimulus {
        Stimulus::Full(items) => match (items.contains(&a), items.contains(&b)) {
            (true, true) => Some(ItemEvent::Both),
            (true, false) => Some(ItemEvent::A),
            (false, true) => Some(ItemEvent::B),
            (false, false) => None,
        },
        Stimulus::Probe => (pair.top == c).then_some(ItemEvent::ParentDown),
        Stimulus::Predicted(x) => (*x == c).then_some(ItemEvent::Predicted),
    }
}

fn emission_of(c: ItemId, trace: &[StepTrace]) -> Emission {
    let first = trace.iter().flat_map(|s| s.neural.iter()).find(|l| l.item() == c);
    match first {
        Some(Label::Full(_)) => Emission::Full,
        Some(Label::Up(_)) => Emission::PartUp { predicts: super::Child::A },
        Some(Label::Down(_)) => Emission::PartDown,
        None => Emission::None,
    }
}

fn same_emission(a: Emission, b: Emission) -> bool {
    matches!(
        (a, b),
        (Emission::None, Emission::None)
            | (Emission::Full, Emission::Full)
            | (Emission::PartUp { .. }, Emission::PartUp { .. })
            | (Emission::PartDown, Emission::PartDown)
    )
}

/// Applies `stimulus` and also checks the top item's response against
/// [`item_transition`].
fn apply_checked(pair: &mut Pair, stimulus: &Stimulus, report: &mut CrosscheckReport) -> Result<()> {
    let c = pair.top;
    let before = pair.abs.node(c).state;
    let event = event_for(pair, c, stimulus);
    let trace = pair.apply(stimulus, &mut report.mismatches)?;
    report.stimuli += 1;
    if let Some(event) = event {
        report.covered.insert((before, event));
        let (next, emission) = item_transition(before, event);
        let got = emission_of(c, &trace);
        if !same_emission(emission, got) {
            report.mismatches.push(format!("{stimulus:?} on {before:?}: expected {emission:?}, neural {got:?}"));
        }
        if let Some(state) = pair.neural.item_state(c) {
            if state != next {
                report.mismatches.push(format!("{stimulus:?} on {before:?}: expected {next:?}, neural {state:?}"));
            }
        }
    }
    Ok(())
}

fn explore(pair: &Pair, alphabet: &[Stimulus], depth: usize) -> Result<CrosscheckReport> {
    let mut report = CrosscheckReport { sequences: 1, ..Default::default() };
    if depth == 0 {
        return Ok(report);
    }
    for stimulus in alphabet {
        let mut next = pair.clone();
        let mut local = CrosscheckReport::default();
        apply_checked(&mut next, stimulus, &mut local)?;
        let deeper = explore(&next, alphabet, depth - 1)?;
        report = report.merge(local).merge(deeper);
    }
    Ok(report)
}

/// Every stimulus sequence up to `depth`, shared prefixes run once.
pub fn exhaustive(base: &Pair, alphabet: &[Stimulus], depth: usize) -> Result<CrosscheckReport> {
    if depth == 0 {
        return Ok(CrosscheckReport { sequences: 1, ..Default::default() });
    }
    let parts: Vec<Result<CrosscheckReport>> = alphabet
        .par_iter()
        .map(|stimulus| {
            let mut pair = base.clone();
            let mut report = CrosscheckReport::default();
            apply_checked(&mut pair, stimulus, &mut report)?;
            Ok(report.merge(explore(&pair, alphabet, depth - 1)?))
        })
        .collect();
    let mut total = CrosscheckReport { sequences: 1, ..Default::default() };
    for part in parts {
        total = total.merge(part?);
    }
    Ok(total)
}

pub fn single_alphabet() -> Vec<Stimulus> {
    vec![
        Stimulus::Full(vec![0]),
        Stimulus::Full(vec![1]),
        Stimulus::Full(vec![0, 1]),
        Stimulus::Probe,
        Stimulus::Predicted(2),
    ]
}

pub fn tree_alphabet() -> Vec<Stimulus> {
    vec![
        Stimulus::Full(vec![0]),
        Stimulus::Full(vec![1]),
        Stimulus::Full(vec![2]),
        Stimulus::Full(vec![0, 1]),
        Stimulus::Probe,
    ]
}

/// States of a predictive JOIN reachable from the operational state.
pub fn reachable_states() -> Vec<ItemMachineState> {
    let mut seen = vec![ItemMachineState::OPERATIONAL];
    let mut i = 0;
    while i < seen.len() {
        for e in ItemEvent::ALL {
            let (next, _) = item_transition(seen[i], e);
            if !seen.contains(&next) {
                seen.push(next);
            }
        }
        i += 1;
    }
    seen
}

/// Outcome of checking the basic constructions on one seed.
#[derive(Clone, Debug, Default)]
pub struct ConstructionCheck {
    pub join_truth_table: bool,
    pub link_timing: bool,
    pub link_directed: bool,
    pub transitions: CrosscheckReport,
}

impl ConstructionCheck {
    pub fn passed(&self) -> bool {
        let reachable = reachable_states().len() * ItemEvent::ALL.len();
        self.join_truth_table
            && self.link_timing
            && self.link_directed
            && self.transitions.passed()
            && self.transitions.covered.len() == reachable
    }
}

fn fires_within(nn: &mut NeuralNet, forced: &[ItemId], target: ItemId, steps: usize) -> Result<Option<usize>> {
    let labels: Vec<Label> = forced.iter().map(|&x| Label::Full(x)).collect();
    let mut hit = None;
    for s in 0..steps {
        let (out, _) = nn.advance(if s == 0 { &labels } else { &[] })?;
        if hit.is_none() && out.contains(&Label::Full(target)) {
            hit = Some(s);
        }
    }
    nn.settle()?;
    Ok(hit)
}

/// JOIN truth table, LINK timing and direction, and every reachable
/// (state, event) pair of a predictive JOIN, on the four-step backend.
pub fn check_constructions(seed: u64) -> Result<ConstructionCheck> {
    let mut out = ConstructionCheck::default();

    let mut nn = NeuralNet::new(NeuralConfig::new(PjoinMode::FourStep, seed))?;
    let (a, b) = (nn.add_leaf(), nn.add_leaf());
    let c = nn.create_join(a, b)?;
    let mut table = true;
    for forced in [vec![], vec![a], vec![b], vec![a, b]] {
        let want = forced.len() == 2;
        table &= fires_within(&mut nn, &forced, c, 6)?.is_some() == want;
    }
    out.join_truth_table = table;

    let (x, y) = (nn.add_leaf(), nn.add_leaf());
    nn.create_link(x, y)?;
    out.link_timing = fires_within(&mut nn, &[x], y, 6)? == Some(2);
    out.link_directed = fires_within(&mut nn, &[y], x, 6)?.is_none();

    // Breadth-first over reachable states of the item under the probe,
    // applying every event once from each.
    let base = Pair::single(PjoinMode::FourStep, seed)?;
    let alphabet = single_alphabet();
    let mut frontier = vec![base];
    let mut visited: Vec<ItemMachineState> = Vec::new();
    let mut report = CrosscheckReport::default();
    while let Some(pair) = frontier.pop() {
        let state = pair.abs.node(pair.top).state;
        if visited.contains(&state) {
            continue;
        }
        visited.push(state);
        for stimulus in &alphabet {
            let mut next = pair.clone();
            apply_checked(&mut next, stimulus, &mut report)?;
            frontier.push(next);
        }
    }
    report.sequences = visited.len();
    out.transitions = report;
    Ok(out)
}
