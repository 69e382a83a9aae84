//! Discrete-time neuroidal engine.
//!
//! A step has two phases. Phase 1 sums the strengths of synapses whose source
//! fired at `t` and decides who fires at `t + 1`. Phase 2 hands every neuroid
//! its total local state (threshold, memory, incoming synapses, which of those
//! sources fired, the new firing flag and the summed input) to a uniform
//! [`TransitionRules`] implementation.

use std::collections::BTreeSet;
use std::fmt::Write as _;

use crate::error::{Error, Result};

pub type NeuroidId = usize;

/// Relative slack on the `W >= T` test. Weights of the form `T^2 / (2kW)`
/// summed over `m` synapses land within a few ulps of `T / 2`.
pub const FIRING_SLACK: f64 = 1e-12;

/// Neuroid memory tags. Closed set; the rule tables match on these.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Memory {
    Null,
    Candidate,
    Poised,
    Operational,
    /// Plain JOIN member: fires on both children, never predicts.
    Joined,
    /// Joined neuroid drawn into the predictive part, waiting for its links.
    PCandidate,
    POperational,
    Dismissed,
    PredictingA,
    PredictingB,
    PPredictingA,
    PPredictingB,
    Relay,
    SensorZero,
    SensorOne,
}

/// Where a neuroid is in the LINK protocol as a target.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum LinkPhase {
    Idle,
    /// Set by control; dormant relay synapses arm on the next update.
    Preparing {
        parent: bool,
    },
    Prepared {
        parent: bool,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum SynapseMemory {
    Null,
    FromA,
    FromB,
    /// From-A/From-B synapse whose strength is currently doubled by a prediction.
    FromADoubled,
    FromBDoubled,
    /// Relay synapse not yet part of any LINK.
    Dormant,
    /// Direct back-synapse of a reciprocal pair, not yet part of any LINK.
    Reciprocal,
    Armed,
    ArmedReciprocal,
    LOperational,
    Parent,
    /// Parent synapse silenced while the predictive part is passive.
    ParentPassive,
    Dead,
}

#[derive(Clone, Debug, PartialEq)]
pub struct NeuroidState {
    pub threshold: f64,
    pub fired: bool,
    pub memory: Memory,
    pub link: LinkPhase,
    pub refractory: u32,
}

impl NeuroidState {
    pub fn new(threshold: f64, memory: Memory) -> Self {
        assert!(threshold > 0.0, "threshold must be positive");
        Self { threshold, fired: false, memory, link: LinkPhase::Idle, refractory: 0 }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Synapse {
    pub src: NeuroidId,
    pub weight: f64,
    pub memory: SynapseMemory,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RefractionMode {
    /// Explicit countdown; a neuroid with a nonzero counter cannot fire.
    Counter,
    /// Threshold multiplied by `2^R` after firing and halved once per step.
    ThresholdScaling,
}

/// Everything a neuroid may look at and change during phase 2.
pub struct LocalView<'a> {
    pub id: NeuroidId,
    pub state: &'a mut NeuroidState,
    pub synapses: &'a mut [Synapse],
    /// Summed input computed in phase 1.
    pub input: f64,
    /// Firing flag for `t + 1`.
    pub fired_next: bool,
    prev_fired: &'a [bool],
    audit: Option<&'a mut Vec<(NeuroidId, NeuroidId)>>,
}

impl LocalView<'_> {
    /// Whether the source of incoming synapse `k` fired at `t`.
    pub fn source_fired(&mut self, k: usize) -> bool {
        let src = self.synapses[k].src;
        if let Some(log) = self.audit.as_deref_mut() {
            log.push((self.id, src));
        }
        self.prev_fired[src]
    }
}

/// The uniform update applied to every neuroid and its incoming synapses.
pub trait TransitionRules {
    fn update(&self, view: &mut LocalView<'_>);

    /// True when, absent any input and without firing, `update` is the
    /// identity for this state. The engine skips such neuroids.
    fn is_resting(&self, state: &NeuroidState) -> bool;
}

/// Rules that never change anything.
#[derive(Clone, Copy, Debug, Default)]
pub struct StaticRules;

impl TransitionRules for StaticRules {
    fn update(&self, _view: &mut LocalView<'_>) {}
    fn is_resting(&self, _state: &NeuroidState) -> bool {
        true
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct FiringReport {
    pub t: u64,
    pub fired: Vec<NeuroidId>,
    /// Nonzero summed inputs, sorted by id.
    pub inputs: Vec<(NeuroidId, f64)>,
    pub state_changes: usize,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RunLogRecord {
    pub t: u64,
    pub fired: Vec<NeuroidId>,
    pub forced: Vec<NeuroidId>,
    pub state_changes: usize,
}

impl RunLogRecord {
    /// `t<TAB>fired<TAB>forced<TAB>changes`, ids comma separated, `-` when empty.
    pub fn to_line(&self) -> String {
        fn ids(v: &[NeuroidId]) -> String {
            if v.is_empty() {
                "-".to_string()
            } else {
                v.iter().map(|i| i.to_string()).collect::<Vec<_>>().join(",")
            }
        }
        format!("{}\t{}\t{}\t{}", self.t, ids(&self.fired), ids(&self.forced), self.state_changes)
    }
}

#[derive(Clone, Debug)]
pub struct Network {
    neuroids: Vec<NeuroidState>,
    incoming: Vec<Vec<Synapse>>,
    outgoing: Vec<Vec<NeuroidId>>,
    t: u64,
    seed: u64,
    refraction: u32,
    refraction_mode: RefractionMode,
    /// Neuroids allowed to fire inside their refractory window.
    refraction_exempt: Vec<bool>,
    last_fired: usize,
    last_changes: usize,
    log: Option<Vec<RunLogRecord>>,
    audit: Option<Vec<(NeuroidId, NeuroidId)>>,
}

impl Network {
    pub fn new(seed: u64) -> Self {
        Self {
            neuroids: Vec::new(),
            incoming: Vec::new(),
            outgoing: Vec::new(),
            t: 0,
            seed,
            refraction: 1,
            refraction_mode: RefractionMode::Counter,
            refraction_exempt: Vec::new(),
            last_fired: 0,
            last_changes: 0,
            log: None,
            audit: None,
        }
    }

    pub fn with_neuroids(n: usize, threshold: f64, seed: u64) -> Self {
        let mut net = Self::new(seed);
        for _ in 0..n {
            net.add_neuroid(NeuroidState::new(threshold, Memory::Null));
        }
        net
    }

    pub fn add_neuroid(&mut self, state: NeuroidState) -> NeuroidId {
        self.neuroids.push(state);
        self.incoming.push(Vec::new());
        self.outgoing.push(Vec::new());
        self.refraction_exempt.push(false);
        self.neuroids.len() - 1
    }

    /// Adds a directed synapse `src -> dst`. Parallel edges are allowed but unused.
    pub fn add_synapse(&mut self, src: NeuroidId, dst: NeuroidId, weight: f64, memory: SynapseMemory) {
        assert!(weight.is_finite());
        self.incoming[dst].push(Synapse { src, weight, memory });
        self.outgoing[src].push(dst);
    }

    pub fn len(&self) -> usize {
        self.neuroids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.neuroids.is_empty()
    }

    pub fn edge_count(&self) -> usize {
        self.incoming.iter().map(Vec::len).sum()
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn time(&self) -> u64 {
        self.t
    }

    pub fn neuroid(&self, id: NeuroidId) -> &NeuroidState {
        &self.neuroids[id]
    }

    pub fn neuroid_mut(&mut self, id: NeuroidId) -> &mut NeuroidState {
        &mut self.neuroids[id]
    }

    pub fn incoming(&self, id: NeuroidId) -> &[Synapse] {
        &self.incoming[id]
    }

    pub fn incoming_mut(&mut self, id: NeuroidId) -> &mut [Synapse] {
        &mut self.incoming[id]
    }

    pub fn has_edge(&self, src: NeuroidId, dst: NeuroidId) -> bool {
        self.incoming[dst].iter().any(|s| s.src == src)
    }

    /// Iterates `(src, dst)` over all synapses.
    pub fn edges(&self) -> impl Iterator<Item = (NeuroidId, NeuroidId)> + '_ {
        self.incoming.iter().enumerate().flat_map(|(dst, syns)| syns.iter().map(move |s| (s.src, dst)))
    }

    pub fn set_refraction_policy(&mut self, steps: u32) {
        self.refraction = steps;
    }

    pub fn refraction_policy(&self) -> u32 {
        self.refraction
    }

    pub fn set_refraction_mode(&mut self, mode: RefractionMode) {
        self.refraction_mode = mode;
    }

    pub fn set_refraction_exempt(&mut self, id: NeuroidId, exempt: bool) {
        self.refraction_exempt[id] = exempt;
    }

    pub fn enable_run_log(&mut self) {
        self.log = Some(Vec::new());
    }

    pub fn run_log(&self) -> &[RunLogRecord] {
        self.log.as_deref().unwrap_or(&[])
    }

    /// Records every `(reader, source)` pair consulted by the rules.
    pub fn enable_audit(&mut self) {
        self.audit = Some(Vec::new());
    }

    pub fn take_audit(&mut self) -> Vec<(NeuroidId, NeuroidId)> {
        self.audit.as_mut().map(std::mem::take).unwrap_or_default()
    }

    pub fn firing(&self) -> Vec<NeuroidId> {
        (0..self.len()).filter(|&i| self.neuroids[i].fired).collect()
    }

    /// True iff the last step produced no firing and no state or weight change.
    pub fn quiescent(&self) -> bool {
        self.last_fired == 0 && self.last_changes == 0
    }

    pub fn step(&mut self, forced: &[NeuroidId], rules: &impl TransitionRules) -> Result<FiringReport> {
        let n = self.len();
        if let Some(&bad) = forced.iter().find(|&&i| i >= n) {
            return Err(Error::Input(format!("forced firing of nonexistent neuroid {bad}")));
        }

        // Phase 1: summed input from neuroids firing at t.
        let prev_fired: Vec<bool> = self.neuroids.iter().map(|s| s.fired).collect();
        let mut input = vec![0.0f64; n];
        let mut touched: BTreeSet<NeuroidId> = BTreeSet::new();
        for src in (0..n).filter(|&i| prev_fired[i]) {
            for &dst in &self.outgoing[src] {
                touched.insert(dst);
            }
        }
        for &dst in &touched {
            input[dst] = self.incoming[dst].iter().filter(|s| prev_fired[s.src]).map(|s| s.weight).sum();
        }
        let mut forced_mask = vec![false; n];
        for &i in forced {
            forced_mask[i] = true;
        }
        let mut fired_next = vec![false; n];
        for i in 0..n {
            let st = &self.neuroids[i];
            let blocked = match self.refraction_mode {
                RefractionMode::Counter => st.refractory > 0 && !self.refraction_exempt[i],
                RefractionMode::ThresholdScaling => false,
            };
            let reaches = input[i] >= st.threshold * (1.0 - FIRING_SLACK);
            fired_next[i] = !blocked && (reaches || forced_mask[i]);
        }

        // Phase 2: uniform local update.
        let mut changes = 0usize;
        let mut audit = self.audit.take();
        for i in 0..n {
            let active = fired_next[i] || prev_fired[i] || touched.contains(&i);
            if !active && rules.is_resting(&self.neuroids[i]) {
                continue;
            }
            let before_state = (self.neuroids[i].threshold, self.neuroids[i].memory, self.neuroids[i].link);
            let before_syn: Vec<(f64, SynapseMemory)> = self.incoming[i].iter().map(|s| (s.weight, s.memory)).collect();
            {
                let mut view = LocalView {
                    id: i,
                    state: &mut self.neuroids[i],
                    synapses: &mut self.incoming[i],
                    input: input[i],
                    fired_next: fired_next[i],
                    prev_fired: &prev_fired,
                    audit: audit.as_mut(),
                };
                rules.update(&mut view);
            }
            let st = &self.neuroids[i];
            assert!(st.threshold > 0.0, "rules produced a non-positive threshold");
            let changed = before_state != (st.threshold, st.memory, st.link)
                || self.incoming[i].iter().zip(&before_syn).any(|(s, &(w, m))| s.weight != w || s.memory != m);
            if changed {
                changes += 1;
            }
        }
        self.audit = audit;

        // Firing flags and refraction bookkeeping.
        let mut fired = Vec::new();
        for i in 0..n {
            let st = &mut self.neuroids[i];
            st.fired = fired_next[i];
            match self.refraction_mode {
                RefractionMode::Counter => {
                    if st.fired {
                        st.refractory = self.refraction;
                        fired.push(i);
                    } else {
                        st.refractory = st.refractory.saturating_sub(1);
                    }
                }
                RefractionMode::ThresholdScaling => {
                    if st.refractory > 0 {
                        st.threshold /= 2.0;
                        st.refractory -= 1;
                    }
                    if st.fired {
                        fired.push(i);
                        if self.refraction > 0 {
                            st.threshold *= f64::powi(2.0, self.refraction as i32);
                            st.refractory = self.refraction;
                        }
                    }
                }
            }
        }

        self.t += 1;
        self.last_fired = fired.len();
        self.last_changes = changes;
        if let Some(log) = self.log.as_mut() {
            let mut forced_sorted = forced.to_vec();
            forced_sorted.sort_unstable();
            forced_sorted.dedup();
            log.push(RunLogRecord { t: self.t, fired: fired.clone(), forced: forced_sorted, state_changes: changes });
        }
        let inputs = touched.iter().filter(|&&i| input[i] != 0.0).map(|&i| (i, input[i])).collect();
        Ok(FiringReport { t: self.t, fired, inputs, state_changes: changes })
    }

    /// Steps with no forced input until quiescent or `max_steps` elapse.
    /// Returns the reports of the steps taken.
    pub fn run_until_quiescent(&mut self, rules: &impl TransitionRules, max_steps: usize) -> Vec<FiringReport> {
        let mut out = Vec::new();
        for _ in 0..max_steps {
            let rep = self.step(&[], rules).expect("no forced ids");
            out.push(rep);
            if self.quiescent() {
                break;
            }
        }
        out
    }

    /// Versioned text snapshot of the full network state.
    pub fn to_snapshot(&self) -> String {
        let mut s = String::new();
        writeln!(s, "neuroid-snapshot v1").unwrap();
        writeln!(
            s,
            "n {} t {} seed {} refraction {} mode {}",
            self.len(),
            self.t,
            self.seed,
            self.refraction,
            match self.refraction_mode {
                RefractionMode::Counter => "counter",
                RefractionMode::ThresholdScaling => "threshold",
            }
        )
        .unwrap();
        for (i, st) in self.neuroids.iter().enumerate() {
            writeln!(
                s,
                "v {} {:e} {} {} {} {} {}",
                i,
                st.threshold,
                st.fired as u8,
                memory_name(st.memory),
                link_name(st.link),
                st.refractory,
                self.refraction_exempt[i] as u8
            )
            .unwrap();
        }
        for (dst, syns) in self.incoming.iter().enumerate() {
            for syn in syns {
                writeln!(s, "e {} {} {:e} {}", syn.src, dst, syn.weight, synapse_memory_name(syn.memory)).unwrap();
            }
        }
        s
    }

    pub fn from_snapshot(text: &str) -> Result<Self> {
        let bad = |msg: &str| Error::Format(format!("snapshot: {msg}"));
        let mut lines = text.lines();
        if lines.next() != Some("neuroid-snapshot v1") {
            return Err(bad("missing or unsupported header"));
        }
        let head: Vec<&str> = lines.next().ok_or_else(|| bad("missing size line"))?.split_whitespace().collect();
        if head.len() != 10 || head[0] != "n" {
            return Err(bad("malformed size line"));
        }
        let parse_u64 = |x: &str| x.parse::<u64>().map_err(|_| bad("bad integer"));
        let n = parse_u64(head[1])? as usize;
        let mut net = Network::new(parse_u64(head[5])?);
        net.t = parse_u64(head[3])?;
        net.refraction = parse_u64(head[7])? as u32;
        net.refraction_mode = match head[9] {
            "counter" => RefractionMode::Counter,
            "threshold" => RefractionMode::ThresholdScaling,
            _ => return Err(bad("unknown refraction mode")),
        };
        for line in lines {
            let f: Vec<&str> = line.split_whitespace().collect();
            match f.first() {
                Some(&"v") if f.len() == 8 => {
                    let threshold: f64 = f[2].parse().map_err(|_| bad("bad threshold"))?;
                    let memory = memory_from_name(f[4]).ok_or_else(|| bad("unknown memory tag"))?;
                    let mut st = NeuroidState::new(threshold, memory);
                    st.fired = f[3] == "1";
                    st.link = link_from_name(f[5]).ok_or_else(|| bad("unknown link phase"))?;
                    st.refractory = parse_u64(f[6])? as u32;
                    let id = net.add_neuroid(st);
                    net.refraction_exempt[id] = f[7] == "1";
                }
                Some(&"e") if f.len() == 5 => {
                    let src = parse_u64(f[1])? as usize;
                    let dst = parse_u64(f[2])? as usize;
                    if src >= net.len() || dst >= net.len() {
                        return Err(bad("edge references unknown neuroid"));
                    }
                    let w: f64 = f[3].parse().map_err(|_| bad("bad weight"))?;
                    let m = synapse_memory_from_name(f[4]).ok_or_else(|| bad("unknown synapse tag"))?;
                    net.add_synapse(src, dst, w, m);
                }
                _ => return Err(bad("unrecognized line")),
            }
        }
        if net.len() != n {
            return Err(bad("neuroid count mismatch"));
        }
        Ok(net)
    }
}

const MEMORY_NAMES: [(Memory, &str); 15] = [
    (Memory::Null, "null"),
    (Memory::Candidate, "candidate"),
    (Memory::Poised, "poised"),
    (Memory::Operational, "operational"),
    (Memory::Joined, "joined"),
    (Memory::PCandidate, "p-candidate"),
    (Memory::POperational, "p-operational"),
    (Memory::Dismissed, "dismissed"),
    (Memory::PredictingA, "predicting-a"),
    (Memory::PredictingB, "predicting-b"),
    (Memory::PPredictingA, "p-predicting-a"),
    (Memory::PPredictingB, "p-predicting-b"),
    (Memory::Relay, "relay"),
    (Memory::SensorZero, "sensor-zero"),
    (Memory::SensorOne, "sensor-one"),
];

const SYNAPSE_NAMES: [(SynapseMemory, &str); 13] = [
    (SynapseMemory::Null, "null"),
    (SynapseMemory::FromA, "from-a"),
    (SynapseMemory::FromB, "from-b"),
    (SynapseMemory::FromADoubled, "from-a-doubled"),
    (SynapseMemory::FromBDoubled, "from-b-doubled"),
    (SynapseMemory::Dormant, "dormant"),
    (SynapseMemory::Reciprocal, "reciprocal"),
    (SynapseMemory::Armed, "armed"),
    (SynapseMemory::ArmedReciprocal, "armed-reciprocal"),
    (SynapseMemory::LOperational, "l-operational"),
    (SynapseMemory::Parent, "parent"),
    (SynapseMemory::ParentPassive, "parent-passive"),
    (SynapseMemory::Dead, "dead"),
];

fn memory_name(m: Memory) -> &'static str {
    MEMORY_NAMES.iter().find(|(k, _)| *k == m).map(|(_, s)| *s).unwrap()
}

fn memory_from_name(s: &str) -> Option<Memory> {
    MEMORY_NAMES.iter().find(|(_, v)| *v == s).map(|(k, _)| *k)
}

fn synapse_memory_name(m: SynapseMemory) -> &'static str {
    SYNAPSE_NAMES.iter().find(|(k, _)| *k == m).map(|(_, s)| *s).unwrap()
}

fn synapse_memory_from_name(s: &str) -> Option<SynapseMemory> {
    SYNAPSE_NAMES.iter().find(|(_, v)| *v == s).map(|(k, _)| *k)
}

fn link_name(l: LinkPhase) -> &'static str {
    match l {
        LinkPhase::Idle => "idle",
        LinkPhase::Preparing { parent: false } => "preparing",
        LinkPhase::Preparing { parent: true } => "preparing-parent",
        LinkPhase::Prepared { parent: false } => "prepared",
        LinkPhase::Prepared { parent: true } => "prepared-parent",
    }
}

fn link_from_name(s: &str) -> Option<LinkPhase> {
    Some(match s {
        "idle" => LinkPhase::Idle,
        "preparing" => LinkPhase::Preparing { parent: false },
        "preparing-parent" => LinkPhase::Preparing { parent: true },
        "prepared" => LinkPhase::Prepared { parent: false },
        "prepared-parent" => LinkPhase::Prepared { parent: true },
        _ => return None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_inputs(weight: f64) -> Network {
        let mut net = Network::with_neuroids(3, 1.0, 7);
        net.add_synapse(0, 2, weight, SynapseMemory::Null);
        net.add_synapse(1, 2, weight, SynapseMemory::Null);
        net
    }

    #[test]
    fn threshold_boundary_fires() {
        let mut net = two_inputs(0.5);
        net.step(&[0, 1], &StaticRules).unwrap();
        let rep = net.step(&[], &StaticRules).unwrap();
        assert_eq!(rep.fired, vec![2]);
        assert_eq!(rep.inputs, vec![(2, 1.0)]);
    }

    #[test]
    fn below_threshold_stays_silent() {
        let mut net = two_inputs(0.49);
        net.step(&[0, 1], &StaticRules).unwrap();
        assert!(net.step(&[], &StaticRules).unwrap().fired.is_empty());
    }

    #[test]
    fn quiescent_network_only_advances_clock() {
        let mut net = two_inputs(0.5);
        let snap = net.to_snapshot();
        let rep = net.step(&[], &StaticRules).unwrap();
        assert!(rep.fired.is_empty());
        assert!(net.quiescent());
        assert_eq!(net.time(), 1);
        assert_eq!(snap.replace("t 0", "t 1"), net.to_snapshot());
    }

    #[test]
    fn forcing_unknown_neuroid_is_an_input_error() {
        let mut net = two_inputs(0.5);
        assert!(matches!(net.step(&[9], &StaticRules), Err(Error::Input(_))));
    }

    /// Neuroid 1 receives a strong self-sustaining drive from 0 every step.
    fn driven(refraction: u32, mode: RefractionMode, weight: f64) -> Vec<bool> {
        let mut net = Network::with_neuroids(2, 1.0, 1);
        net.add_synapse(0, 1, weight, SynapseMemory::Null);
        net.set_refraction_policy(refraction);
        net.set_refraction_mode(mode);
        net.set_refraction_exempt(0, true);
        let mut trace = Vec::new();
        for _ in 0..12 {
            let rep = net.step(&[0], &StaticRules).unwrap();
            trace.push(rep.fired.contains(&1));
        }
        trace
    }

    #[test]
    fn refraction_one_blocks_the_next_step_only() {
        let trace = driven(1, RefractionMode::Counter, 1.0);
        // first step: 0 fires; then 1 fires every other step
        assert_eq!(&trace[..6], &[false, true, false, true, false, true]);
    }

    #[test]
    fn refraction_zero_allows_consecutive_firing() {
        let trace = driven(0, RefractionMode::Counter, 1.0);
        assert!(trace[1..].iter().all(|&f| f));
    }

    #[test]
    fn threshold_scaling_matches_counter_for_sub_double_inputs() {
        for r in 0..5 {
            for w in [1.0, 1.3, 1.99] {
                assert_eq!(
                    driven(r, RefractionMode::Counter, w),
                    driven(r, RefractionMode::ThresholdScaling, w),
                    "R={r} w={w}"
                );
            }
        }
    }

    #[test]
    fn snapshot_round_trips() {
        let mut net = two_inputs(0.25);
        net.neuroid_mut(2).memory = Memory::PPredictingB;
        net.neuroid_mut(1).link = LinkPhase::Prepared { parent: true };
        net.step(&[0], &StaticRules).unwrap();
        let text = net.to_snapshot();
        let back = Network::from_snapshot(&text).unwrap();
        assert_eq!(back.to_snapshot(), text);
    }

    #[test]
    fn snapshot_rejects_unknown_version() {
        assert!(Network::from_snapshot("neuroid-snapshot v9\n").is_err());
    }

    #[test]
    fn run_log_records_forced_and_fired() {
        let mut net = two_inputs(0.5);
        net.enable_run_log();
        net.step(&[1, 0], &StaticRules).unwrap();
        net.step(&[], &StaticRules).unwrap();
        let lines: Vec<String> = net.run_log().iter().map(RunLogRecord::to_line).collect();
        assert_eq!(lines, vec!["1\t0,1\t0,1\t0", "2\t2\t-\t0"]);
    }

    /// Strengthens synapses from sources that helped a neuroid fire, so
    /// that weights change every step and stale reads would show.
    struct Hebbian;

    impl TransitionRules for Hebbian {
        fn update(&self, view: &mut LocalView<'_>) {
            if view.fired_next {
                for k in 0..view.synapses.len() {
                    if view.source_fired(k) {
                        view.synapses[k].weight *= 1.5;
                    }
                }
            }
        }

        fn is_resting(&self, _state: &NeuroidState) -> bool {
            false
        }
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        type Edges = Vec<(usize, usize, f64)>;

        fn build(n: usize, edges: &Edges, refraction: u32, seed: u64) -> Network {
            let mut net = Network::with_neuroids(n, 1.0, seed);
            for &(a, b, w) in edges {
                let (a, b) = (a % n, b % n);
                if a != b && !net.has_edge(a, b) {
                    net.add_synapse(a, b, w, SynapseMemory::Null);
                }
            }
            net.set_refraction_policy(refraction);
            net
        }

        fn scenario() -> impl Strategy<Value = (usize, Edges, u32, Vec<Vec<usize>>)> {
            (2usize..12).prop_flat_map(|n| {
                (
                    Just(n),
                    prop::collection::vec((0..n, 0..n, 0.1f64..1.2), 0..40),
                    0u32..4,
                    prop::collection::vec(prop::collection::vec(0..n, 0..3), 1..25),
                )
            })
        }

        proptest! {
            #[test]
            fn identical_runs_are_bit_identical((n, edges, r, forced) in scenario(), seed in any::<u64>()) {
                let mut a = build(n, &edges, r, seed);
                let mut b = build(n, &edges, r, seed);
                for f in &forced {
                    prop_assert_eq!(a.step(f, &Hebbian).unwrap(), b.step(f, &Hebbian).unwrap());
                }
                prop_assert_eq!(a.to_snapshot(), b.to_snapshot());
            }

            #[test]
            fn firings_respect_refraction((n, edges, r, forced) in scenario()) {
                let mut net = build(n, &edges, r, 0);
                let mut last: Vec<Option<u64>> = vec![None; n];
                for f in &forced {
                    let rep = net.step(f, &Hebbian).unwrap();
                    for &i in &rep.fired {
                        if let Some(prev) = last[i] {
                            prop_assert!(rep.t - prev > r as u64, "neuroid {} fired at {} and {}", i, prev, rep.t);
                        }
                        last[i] = Some(rep.t);
                    }
                }
            }

            #[test]
            fn inputs_use_previous_step_weights((n, edges, r, forced) in scenario()) {
                let mut net = build(n, &edges, r, 0);
                let mut prev_fired: Vec<usize> = Vec::new();
                for f in &forced {
                    let before: Vec<Vec<Synapse>> = (0..n).map(|i| net.incoming(i).to_vec()).collect();
                    let rep = net.step(f, &Hebbian).unwrap();
                    for i in 0..n {
                        let want: f64 = before[i].iter().filter(|s| prev_fired.contains(&s.src)).map(|s| s.weight).sum();
                        let got = rep.inputs.iter().find(|(j, _)| *j == i).map_or(0.0, |x| x.1);
                        prop_assert!((want - got).abs() < 1e-9, "neuroid {}: {} vs {}", i, want, got);
                    }
                    prev_fired = rep.fired.clone();
                }
            }
        }
    }
}
