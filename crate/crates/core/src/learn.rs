//! Pattern memorization with spontaneously formed predictive JOINs.
//!
//! Runs on the item-level engine. Each sensor `S_i` drives two basis items
//! `0_i` and `1_i`; a sensor that fires in state One makes `1_i` fire in
//! full on the next step, and a basis item firing downward makes its
//! sensor fire on the step after that.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::item::network::{Dynamics, ItemNetwork, Label};
use crate::item::{ItemId, ItemKind};
use crate::rng;

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Pattern {
    pub bits: Vec<bool>,
}

impl Pattern {
    pub fn new(bits: Vec<bool>) -> Self {
        Self { bits }
    }

    pub fn len(&self) -> usize {
        self.bits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.is_empty()
    }

    pub fn random(n: usize, rng: &mut rng::Rng) -> Self {
        Self { bits: (0..n).map(|_| rng.gen_bool(0.5)).collect() }
    }

    /// Flips each coordinate independently with probability `prob`.
    pub fn perturbed(&self, prob: f64, rng: &mut rng::Rng) -> Self {
        Self { bits: self.bits.iter().map(|&b| b ^ rng.gen_bool(prob)).collect() }
    }

    /// Fraction of agreeing coordinates.
    pub fn overlap(&self, other: &Pattern) -> f64 {
        let same = self.bits.iter().zip(&other.bits).filter(|(a, b)| a == b).count();
        same as f64 / self.len().max(1) as f64
    }
}

impl FromStr for Pattern {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bits = s
            .trim()
            .chars()
            .map(|c| match c {
                '0' => Ok(false),
                '1' => Ok(true),
                _ => Err(Error::Input(format!("pattern character {c:?} is not 0 or 1"))),
            })
            .collect::<Result<Vec<_>>>()?;
        if bits.is_empty() {
            return Err(Error::Input("empty pattern".into()));
        }
        Ok(Self { bits })
    }
}

impl fmt::Display for Pattern {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for &b in &self.bits {
            f.write_str(if b { "1" } else { "0" })?;
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PredictionMode {
    BothChildren,
    /// A predictive part continuing a search from above enters one random child.
    RandomChild,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PairingMode {
    RandomPairs,
    EventSequence,
}

macro_rules! parse_enum {
    ($t:ty, $($s:literal => $v:expr),+) => {
        impl FromStr for $t {
            type Err = Error;
            fn from_str(s: &str) -> Result<Self> {
                match s {
                    $($s => Ok($v),)+
                    _ => Err(Error::Input(format!("unknown {} {s:?}", stringify!($t)))),
                }
            }
        }
        impl fmt::Display for $t {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                let s = match self { $(x if *x == $v => $s,)+ _ => unreachable!() };
                f.write_str(s)
            }
        }
    };
}

parse_enum!(PredictionMode, "both-children" => PredictionMode::BothChildren, "random-child" => PredictionMode::RandomChild);
parse_enum!(PairingMode, "random-pairs" => PairingMode::RandomPairs, "event-sequence" => PairingMode::EventSequence);

/// Eligibility delay `D(level) = slope * level + offset`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Delay {
    pub slope: u64,
    pub offset: u64,
}

impl Delay {
    pub fn at(&self, level: u32) -> u64 {
        self.slope * level as u64 + self.offset
    }
}

impl Default for Delay {
    fn default() -> Self {
        Self { slope: 2, offset: 2 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LearnConfig {
    /// Per-step firing probability of a sensor that has not fired yet.
    pub p: f64,
    /// Per-step sampling probability of an eligible item.
    pub q: f64,
    pub delay: Delay,
    /// Presentation step cap; `None` picks the default for `n` and `p`.
    pub t_max: Option<usize>,
    /// Sampling boost of a predicted sensor.
    pub boost: f64,
    pub prediction_mode: PredictionMode,
    pub pairing_mode: PairingMode,
    pub max_level_gap: Option<u32>,
    /// Reject delays shorter than `2 * level + 2`.
    pub theorem_compliant: bool,
    /// Count a predictive part's upward firing (which also predicts the
    /// sibling) as downward traffic.
    pub count_up_as_downward: bool,
}

impl Default for LearnConfig {
    fn default() -> Self {
        Self {
            p: 0.1,
            q: 0.1,
            delay: Delay::default(),
            t_max: None,
            boost: 4.0,
            prediction_mode: PredictionMode::BothChildren,
            pairing_mode: PairingMode::RandomPairs,
            max_level_gap: None,
            theorem_compliant: true,
            count_up_as_downward: true,
        }
    }
}

/// Steps between the start of a creation and the new item responding to
/// its children: two JOIN steps and one step tagging the back-synapses.
const CREATION_STEPS: u64 = 3;

impl LearnConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("p", self.p), ("q", self.q)] {
            if !(v > 0.0 && v <= 1.0) {
                return Err(Error::Params(format!("{name}={v} must lie in (0, 1]")));
            }
        }
        if !(self.boost >= 1.0) {
            return Err(Error::Params(format!("boost M={} must be at least 1", self.boost)));
        }
        if self.theorem_compliant && (self.delay.slope < 2 || self.delay.offset < 2) {
            return Err(Error::Params(format!(
                "delay {}*level+{} is shorter than 2*level+2",
                self.delay.slope, self.delay.offset
            )));
        }
        if self.t_max == Some(0) {
            return Err(Error::Params("T_max must be positive".into()));
        }
        Ok(())
    }

    /// `max(100, ceil(4 ln n + 2 ln n / p))`.
    pub fn default_t_max(n: usize, p: f64) -> usize {
        let ln = (n.max(2) as f64).ln();
        100usize.max((4.0 * ln + 2.0 * ln / p).ceil() as usize)
    }

    pub fn t_max_for(&self, n: usize) -> usize {
        self.t_max.unwrap_or_else(|| Self::default_t_max(n, self.p))
    }

    fn gap_ok(&self, a: u32, b: u32) -> bool {
        self.max_level_gap.is_none_or(|g| a.abs_diff(b) <= g)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SensorMemory {
    Zero,
    One,
}

/// Sensors with their basis items.
#[derive(Clone, Debug)]
pub struct SensorBank {
    pub memory: Vec<SensorMemory>,
    pub fired: Vec<bool>,
    pub weight: Vec<f64>,
    /// `basis[i] = (0_i, 1_i)`.
    pub basis: Vec<(ItemId, ItemId)>,
    in_presentation: bool,
}

impl SensorBank {
    fn new(net: &mut ItemNetwork, n: usize, p: f64) -> Self {
        let basis =
            (0..n).map(|_| (net.add_leaf(ItemKind::BasisZero, true), net.add_leaf(ItemKind::BasisOne, true))).collect();
        Self {
            memory: vec![SensorMemory::Zero; n],
            fired: vec![false; n],
            weight: vec![p; n],
            basis,
            in_presentation: false,
        }
    }

    pub fn len(&self) -> usize {
        self.memory.len()
    }

    pub fn is_empty(&self) -> bool {
        self.memory.is_empty()
    }

    /// The basis item a firing of sensor `i` drives.
    pub fn target(&self, i: usize) -> ItemId {
        match self.memory[i] {
            SensorMemory::Zero => self.basis[i].0,
            SensorMemory::One => self.basis[i].1,
        }
    }

    /// Leaf-bit index of a basis item, matching the network's leaf bitsets.
    pub fn leaf_bit(&self, i: usize, bit: bool) -> usize {
        2 * i + bit as usize
    }

    pub fn begin_presentation(&mut self, x: &Pattern, p: f64) -> Result<()> {
        if self.in_presentation {
            return Err(Error::Input("presentation already in progress".into()));
        }
        if x.len() != self.len() {
            return Err(Error::Input(format!("pattern has {} bits, expected {}", x.len(), self.len())));
        }
        for (i, &b) in x.bits.iter().enumerate() {
            self.memory[i] = if b { SensorMemory::One } else { SensorMemory::Zero };
        }
        self.fired.fill(false);
        self.weight.fill(p);
        self.in_presentation = true;
        Ok(())
    }

    pub fn end_presentation(&mut self) {
        self.in_presentation = false;
    }

    fn sensor_of(&self, basis: ItemId) -> Option<usize> {
        // Basis items are the first 2n items, allocated in sensor order.
        (basis < 2 * self.len()).then_some(basis / 2)
    }
}

/// Firing counts of one presentation step.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize)]
pub struct StepCount {
    pub step: usize,
    pub firings: usize,
    pub downward: usize,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct PresentationReport {
    pub index: usize,
    pub pattern: usize,
    pub steps: usize,
    pub quiescent: bool,
    pub firings: usize,
    pub downward: usize,
    /// Levels of the items created during the presentation.
    pub new_pjoins: Vec<u32>,
    /// Highest-level items that fired in full.
    pub top_firers: Vec<ItemId>,
    /// `None` on a pattern's first presentation.
    pub recognized: Option<bool>,
    pub sensors_fired: usize,
    /// Steps until every sensor had fired, if they all did.
    pub sensors_done_at: Option<usize>,
    /// Full firings of items some of whose leaves had not fired.
    pub invariant_violations: usize,
    pub log: Vec<StepCount>,
}

impl PresentationReport {
    /// Downward share of all firings; `None` when nothing fired.
    pub fn downward_fraction(&self) -> Option<f64> {
        (self.firings > 0).then(|| self.downward as f64 / self.firings as f64)
    }
}

/// One sampling-phase event in event-sequence pairing.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SeqEvent {
    /// An eligible item fires.
    Fire(ItemId),
    /// One step after its firing, the item's poised population is ready.
    Ready(ItemId),
}

/// Pairs from an event sequence: a firing item joins every population
/// ready at that moment and consumes them.
pub fn pair_event_sequence(events: &[SeqEvent]) -> Vec<(ItemId, ItemId)> {
    let timed: Vec<(f64, SeqEvent)> = events.iter().enumerate().map(|(i, &e)| (i as f64, e)).collect();
    let mut ready = Vec::new();
    pair_timed_events(&timed, f64::INFINITY, &mut ready, |_, _| true)
}

/// Timed version: populations stay ready for `window` time units.
/// `ready` carries populations across calls as `(item, ready_at)`.
pub fn pair_timed_events(
    events: &[(f64, SeqEvent)],
    window: f64,
    ready: &mut Vec<(ItemId, f64)>,
    compatible: impl Fn(ItemId, ItemId) -> bool,
) -> Vec<(ItemId, ItemId)> {
    let mut pairs = Vec::new();
    for &(time, event) in events {
        ready.retain(|&(_, at)| time < at + window);
        match event {
            SeqEvent::Ready(x) => ready.push((x, time)),
            SeqEvent::Fire(x) => {
                let mut keep = Vec::new();
                for &(y, at) in ready.iter() {
                    if y != x && compatible(y, x) {
                        pairs.push((y, x));
                    } else {
                        keep.push((y, at));
                    }
                }
                *ready = keep;
            }
        }
    }
    pairs
}

/// Random-pairs mode: shuffle the sampled items and pair consecutive
/// compatible ones. A sampled item left over is matched with a random
/// compatible item from `others` (eligible but not sampled), if any.
pub fn pair_random(
    mut sampled: Vec<ItemId>,
    others: &[ItemId],
    rng: &mut rng::Rng,
    compatible: impl Fn(ItemId, ItemId) -> bool,
) -> Vec<(ItemId, ItemId)> {
    sampled.shuffle(rng);
    let mut pairs = Vec::new();
    let mut used = vec![false; sampled.len()];
    let mut taken: Vec<ItemId> = Vec::new();
    for i in 0..sampled.len() {
        if used[i] {
            continue;
        }
        if let Some(j) = (i + 1..sampled.len()).find(|&j| !used[j] && compatible(sampled[i], sampled[j])) {
            used[i] = true;
            used[j] = true;
            pairs.push((sampled[i], sampled[j]));
            continue;
        }
        let partners: Vec<ItemId> = others
            .iter()
            .copied()
            .filter(|&o| o != sampled[i] && !taken.contains(&o) && !sampled.contains(&o) && compatible(sampled[i], o))
            .collect();
        if let Some(&o) = partners.choose(rng) {
            used[i] = true;
            taken.push(o);
            pairs.push((sampled[i], o));
        }
    }
    pairs
}

/// Memorization state across presentations.
#[derive(Clone, Debug)]
pub struct Learner {
    pub net: ItemNetwork,
    pub bank: SensorBank,
    pub cfg: LearnConfig,
    rng: rng::Rng,
    presentations: usize,
    presentation_start: u64,
    /// Event-sequence pairing: items fired last step, with their jitter.
    fired_last_step: Vec<(ItemId, f64)>,
    ready: Vec<(ItemId, f64)>,
}

impl Learner {
    pub fn new(n: usize, cfg: LearnConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        if n == 0 {
            return Err(Error::Input("pattern length must be positive".into()));
        }
        let dynamics =
            Dynamics { random_child: cfg.prediction_mode == PredictionMode::RandomChild, ..Dynamics::guarded(1) };
        let mut net = ItemNetwork::new(dynamics, rng::derive(seed, 7));
        let bank = SensorBank::new(&mut net, n, cfg.p);
        Ok(Self {
            net,
            bank,
            cfg,
            rng: rng::seeded(seed),
            presentations: 0,
            presentation_start: 0,
            fired_last_step: Vec::new(),
            ready: Vec::new(),
        })
    }

    pub fn n(&self) -> usize {
        self.bank.len()
    }

    /// Number of PJOIN items created so far.
    pub fn pjoin_count(&self) -> usize {
        self.net.len() - 2 * self.n()
    }

    pub fn max_level(&self) -> u32 {
        self.net.nodes().iter().map(|n| n.level).max().unwrap_or(0)
    }

    /// Leaf-bit set of pattern `x`.
    fn pattern_leaves(&self, x: &Pattern) -> fixedbitset::FixedBitSet {
        let mut set = fixedbitset::FixedBitSet::with_capacity(2 * self.n());
        for (i, &b) in x.bits.iter().enumerate() {
            set.insert(self.bank.leaf_bit(i, b));
        }
        set
    }

    /// Whether item `id` may be sampled for a new PJOIN at `now`.
    pub fn is_pjoin_eligible(&self, id: ItemId, now: u64) -> bool {
        let node = self.net.node(id);
        let Some(fired) = node.last_full.filter(|&t| t >= self.presentation_start) else {
            return false;
        };
        if node.active_from > now {
            return false;
        }
        let d = self.cfg.delay.at(node.level);
        if now < fired + d {
            return false;
        }
        node.parents.iter().all(|&c| {
            let parent = self.net.node(c);
            // A parent firing in full since means the item already has its
            // place; a partial firing only delays it.
            let full_since = parent.last_full.is_some_and(|t| t >= fired);
            let recent = parent.last_fire.is_some_and(|t| t + d > now);
            !full_since && !recent
        })
    }

    /// Items that are or will become eligible without further firing.
    fn pending_candidates(&self) -> Vec<ItemId> {
        (0..self.net.len())
            .filter(|&id| {
                let node = self.net.node(id);
                let Some(fired) = node.last_full.filter(|&t| t >= self.presentation_start) else {
                    return false;
                };
                node.parents.iter().all(|&c| self.net.node(c).last_full.is_none_or(|t| t < fired))
            })
            .collect()
    }

    fn create(&mut self, a: ItemId, b: ItemId, now: u64) -> Result<ItemId> {
        self.net.add_pjoin(a, b, now + CREATION_STEPS, Some(now + 2))
    }

    /// Presents `x` until quiescence or the step cap.
    pub fn present(&mut self, x: &Pattern, pattern_id: usize) -> Result<PresentationReport> {
        self.bank.begin_presentation(x, self.cfg.p)?;
        self.net.reset_dynamics();
        self.fired_last_step.clear();
        self.ready.clear();
        self.presentation_start = self.net.now();
        let t_max = self.cfg.t_max_for(self.n());
        let x_leaves = self.pattern_leaves(x);
        let mut report = PresentationReport { index: self.presentations, pattern: pattern_id, ..Default::default() };
        self.presentations += 1;

        let mut fired_leaves = fixedbitset::FixedBitSet::with_capacity(2 * self.n());
        let mut sensor_due: BTreeMap<u64, Vec<usize>> = BTreeMap::new();
        let mut pending_creation_until = 0u64;
        let mut top_level = 0u32;
        let mut top: Vec<ItemId> = Vec::new();

        while report.steps < t_max {
            let now = self.net.now();
            let mut count = StepCount { step: report.steps, ..Default::default() };

            // Sensors: predicted ones first, then spontaneous sampling.
            let mut external = Vec::new();
            for i in sensor_due.remove(&now).unwrap_or_default() {
                if !self.bank.fired[i] {
                    self.bank.fired[i] = true;
                    external.push(Label::Full(self.bank.target(i)));
                    count.firings += 1;
                    count.downward += 1;
                }
            }
            for i in 0..self.n() {
                if !self.bank.fired[i] && self.rng.gen_bool(self.bank.weight[i]) {
                    self.bank.fired[i] = true;
                    external.push(Label::Full(self.bank.target(i)));
                    count.firings += 1;
                }
            }

            // Pair selection among sampled eligible items.
            let eligible: Vec<ItemId> = (0..self.net.len()).filter(|&id| self.is_pjoin_eligible(id, now)).collect();
            let sampled: Vec<ItemId> = eligible.iter().copied().filter(|_| self.rng.gen_bool(self.cfg.q)).collect();
            let pairs = self.select_pairs(sampled, &eligible, now);
            for (a, b) in pairs {
                let c = self.create(a, b, now)?;
                let level = self.net.node(c).level;
                report.new_pjoins.push(level);
                pending_creation_until = pending_creation_until.max(now + CREATION_STEPS);
                // The creation fires the new item in full.
                if level > top_level || top.is_empty() {
                    top_level = level;
                    top.clear();
                }
                if level == top_level {
                    top.push(c);
                }
            }

            let out = self.net.advance(&external);
            for &label in &out.labels {
                count.firings += 1;
                match label {
                    Label::Down(_) => count.downward += 1,
                    Label::Up(_) if self.cfg.count_up_as_downward => count.downward += 1,
                    Label::Up(_) => {}
                    Label::Full(id) => {
                        let node = self.net.node(id);
                        if node.role == crate::item::network::Role::Leaf {
                            fired_leaves.union_with(&node.leaves);
                        } else if !node.leaves.is_subset(&fired_leaves) {
                            report.invariant_violations += 1;
                        }
                        if node.level > top_level || top.is_empty() {
                            top_level = node.level;
                            top.clear();
                        }
                        if node.level == top_level && !top.contains(&id) {
                            top.push(id);
                        }
                    }
                }
            }
            for &leaf in &out.leaf_down {
                if let Some(i) = self.bank.sensor_of(leaf) {
                    sensor_due.entry(out.t + 1).or_default().push(i);
                }
            }
            for &leaf in &out.leaf_targeted {
                if let Some(i) = self.bank.sensor_of(leaf) {
                    self.bank.weight[i] = (self.cfg.p * self.cfg.boost).min(1.0);
                }
            }
            report.firings += count.firings;
            report.downward += count.downward;
            report.log.push(count);
            report.steps += 1;
            if report.sensors_done_at.is_none() && self.bank.fired.iter().all(|&f| f) {
                report.sensors_done_at = Some(report.steps);
            }

            let now = self.net.now();
            let settled = self.bank.fired.iter().all(|&f| f)
                && self.net.idle()
                && sensor_due.is_empty()
                && now > pending_creation_until
                && self.fired_last_step.is_empty()
                && !self.pairable(&self.pending_candidates());
            if settled {
                report.quiescent = true;
                break;
            }
        }
        debug_assert!(fired_leaves.is_subset(&x_leaves));
        report.sensors_fired = self.bank.fired.iter().filter(|&&f| f).count();
        top.sort_unstable();
        report.top_firers = top;
        self.bank.end_presentation();
        Ok(report)
    }

    fn pairable(&self, candidates: &[ItemId]) -> bool {
        candidates.iter().enumerate().any(|(i, &a)| {
            candidates[i + 1..].iter().any(|&b| self.cfg.gap_ok(self.net.node(a).level, self.net.node(b).level))
        })
    }

    fn select_pairs(&mut self, sampled: Vec<ItemId>, eligible: &[ItemId], now: u64) -> Vec<(ItemId, ItemId)> {
        let levels: Vec<u32> = self.net.nodes().iter().map(|n| n.level).collect();
        let cfg = self.cfg;
        let compatible = |a: ItemId, b: ItemId| cfg.gap_ok(levels[a], levels[b]);
        match self.cfg.pairing_mode {
            PairingMode::RandomPairs => pair_random(sampled, eligible, &mut self.rng, compatible),
            PairingMode::EventSequence => {
                let t = now as f64;
                let mut events: Vec<(f64, SeqEvent)> =
                    self.fired_last_step.iter().map(|&(x, u)| (t + u, SeqEvent::Ready(x))).collect();
                let fired: Vec<(ItemId, f64)> = sampled.into_iter().map(|x| (x, self.rng.gen::<f64>())).collect();
                events.extend(fired.iter().map(|&(x, u)| (t + u, SeqEvent::Fire(x))));
                events.sort_by(|a, b| a.0.total_cmp(&b.0));
                let pairs = pair_timed_events(&events, 1.0, &mut self.ready, compatible);
                self.fired_last_step = fired;
                pairs
            }
        }
    }
}

#[derive(Clone, Debug, Default)]
pub struct LearnReport {
    /// `I(x)` per pattern, recorded on its first presentation.
    pub top: Vec<Option<ItemId>>,
    pub presentations: Vec<PresentationReport>,
    /// Number of rounds after which no round created a PJOIN; `None` if
    /// the last round still did.
    pub stabilization_round: Option<usize>,
    pub rounds: usize,
    pub pjoins: usize,
    pub max_level: u32,
}

impl LearnReport {
    /// All recorded `I(x)` present and pairwise distinct.
    pub fn distinct_tops(&self) -> bool {
        let mut seen = std::collections::BTreeSet::new();
        self.top.iter().all(|t| t.is_some_and(|x| seen.insert(x)))
    }

    /// Every re-presentation recognized.
    pub fn all_recognized(&self) -> bool {
        self.presentations.iter().all(|p| p.recognized != Some(false))
    }

    pub fn write_csv<W: std::io::Write>(&self, out: W) -> Result<()> {
        #[derive(Serialize)]
        struct Row {
            index: usize,
            pattern: usize,
            steps: usize,
            firings: usize,
            downward: usize,
            new_pjoins: usize,
            recognized: String,
        }
        let mut w = csv::Writer::from_writer(out);
        for p in &self.presentations {
            w.serialize(Row {
                index: p.index,
                pattern: p.pattern,
                steps: p.steps,
                firings: p.firings,
                downward: p.downward,
                new_pjoins: p.new_pjoins.len(),
                recognized: p.recognized.map(|r| r.to_string()).unwrap_or_default(),
            })?;
        }
        w.flush()?;
        Ok(())
    }
}

/// `rounds` passes over patterns `0..m`, each pass in a fresh random order.
pub fn round_schedule(m: usize, rounds: usize, rng: &mut rng::Rng) -> Vec<usize> {
    let mut out = Vec::with_capacity(m * rounds);
    for _ in 0..rounds {
        let mut order: Vec<usize> = (0..m).collect();
        order.shuffle(rng);
        out.extend(order);
    }
    out
}

/// Runs the presentations of `schedule` (indices into `patterns`). Rounds
/// for stabilization are consecutive blocks of `patterns.len()` presentations.
pub fn learn_run(patterns: &[Pattern], schedule: &[usize], cfg: LearnConfig, seed: u64) -> Result<LearnReport> {
    let n = patterns.first().map(|p| p.len()).ok_or_else(|| Error::Input("no patterns".into()))?;
    if let Some(bad) = patterns.iter().find(|p| p.len() != n) {
        return Err(Error::Input(format!("pattern lengths differ: {} vs {n}", bad.len())));
    }
    if let Some(&bad) = schedule.iter().find(|&&i| i >= patterns.len()) {
        return Err(Error::Input(format!("schedule refers to pattern {bad}")));
    }
    let mut learner = Learner::new(n, cfg, seed)?;
    let mut report = LearnReport { top: vec![None; patterns.len()], ..Default::default() };
    let mut seen = vec![false; patterns.len()];
    for &pid in schedule {
        let mut pr = learner.present(&patterns[pid], pid)?;
        if seen[pid] {
            pr.recognized =
                Some(report.top[pid].is_some() && pr.top_firers == report.top[pid].into_iter().collect::<Vec<_>>());
        } else {
            seen[pid] = true;
            let leaves = learner.pattern_leaves(&patterns[pid]);
            // The highest full firer covering the whole pattern, latest first.
            report.top[pid] = pr.top_firers.iter().rev().copied().find(|&id| {
                let l = &learner.net.node(id).leaves;
                l.is_subset(&leaves) && leaves.is_subset(l)
            });
        }
        report.presentations.push(pr);
    }
    let m = patterns.len();
    report.rounds = schedule.len().div_ceil(m);
    let created: Vec<usize> =
        report.presentations.chunks(m).map(|round| round.iter().map(|p| p.new_pjoins.len()).sum()).collect();
    report.stabilization_round = match created.iter().rposition(|&c| c > 0) {
        None => Some(0),
        Some(last) if last + 1 < created.len() => Some(last + 1),
        Some(_) => None,
    };
    report.pjoins = learner.pjoin_count();
    report.max_level = learner.max_level();
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pat(s: &str) -> Pattern {
        s.parse().unwrap()
    }

    #[test]
    fn pattern_parsing() {
        assert_eq!(pat("0110").bits, vec![false, true, true, false]);
        assert!("01x".parse::<Pattern>().is_err());
        assert!("".parse::<Pattern>().is_err());
        assert_eq!(pat("0110").to_string(), "0110");
    }

    #[test]
    fn event_sequence_example() {
        use SeqEvent::*;
        let (a, b, c, d, e, f, g) = (0, 1, 2, 3, 4, 5, 6);
        let seq =
            [Fire(a), Fire(b), Fire(c), Ready(a), Fire(d), Ready(b), Ready(c), Fire(e), Fire(f), Ready(d), Fire(g)];
        let mut pairs = pair_event_sequence(&seq);
        pairs.sort_unstable();
        assert_eq!(pairs, vec![(a, d), (b, e), (c, e), (d, g)]);
    }

    #[test]
    fn pairing_trivial_cases() {
        let mut r = rng::seeded(1);
        assert!(pair_random(vec![5], &[5], &mut r, |_, _| true).is_empty());
        assert_eq!(pair_random(vec![5, 9], &[5, 9], &mut r, |_, _| true).len(), 1);
        assert_eq!(pair_random(vec![5], &[5, 9], &mut r, |_, _| true), vec![(5, 9)]);
        use SeqEvent::*;
        assert_eq!(pair_event_sequence(&[Fire(1), Ready(1), Fire(2)]), vec![(1, 2)]);
        assert!(pair_random(vec![1, 2], &[1, 2, 3], &mut r, |_, _| false).is_empty());
    }

    #[test]
    fn timed_populations_expire() {
        use SeqEvent::*;
        let mut ready = Vec::new();
        let pairs = pair_timed_events(&[(0.5, Ready(1)), (1.6, Fire(2))], 1.0, &mut ready, |_, _| true);
        assert!(pairs.is_empty());
    }

    #[test]
    fn begin_presentation_sets_memories() {
        let mut l = Learner::new(4, LearnConfig::default(), 0).unwrap();
        l.bank.begin_presentation(&pat("0010"), 0.1).unwrap();
        assert_eq!(l.bank.memory[2], SensorMemory::One);
        assert_eq!(l.bank.target(2), l.bank.basis[2].1);
        assert_eq!(l.bank.memory[0], SensorMemory::Zero);
        assert!(l.bank.begin_presentation(&pat("0010"), 0.1).is_err());
        l.bank.end_presentation();
        assert!(l.bank.begin_presentation(&pat("001"), 0.1).is_err());
    }

    #[test]
    fn sensor_one_drives_basis_one_next_step() {
        let cfg = LearnConfig { p: 1.0, ..Default::default() };
        let mut l = Learner::new(1, cfg, 0).unwrap();
        let r = l.present(&pat("1"), 0).unwrap();
        assert_eq!(r.top_firers, vec![l.bank.basis[0].1]);
        assert_eq!(r.log[0].firings, 2);
    }

    #[test]
    fn eligibility_rules() {
        let cfg = LearnConfig { delay: Delay { slope: 0, offset: 4 }, theorem_compliant: false, ..Default::default() };
        let mut l = Learner::new(2, cfg, 0).unwrap();
        let (a, b) = (l.bank.basis[0].1, l.bank.basis[1].1);
        for _ in 0..5 {
            l.net.advance(&[]);
        }
        l.net.advance(&[Label::Full(a)]); // t = 6... fired at 6
        let fired = l.net.node(a).last_full.unwrap();
        let c = l.net.add_pjoin(a, b, 0, Some(fired + 2)).unwrap();
        let _ = c;
        // parent fired 2 steps after the item
        assert!(!l.is_pjoin_eligible(a, fired + 4));
        assert!(!l.is_pjoin_eligible(a, fired + 40));
        assert!(!l.is_pjoin_eligible(b, fired + 4), "never fired");

        let cfg = LearnConfig::default();
        let mut l = Learner::new(2, cfg, 0).unwrap();
        let a = l.bank.basis[0].0;
        l.net.advance(&[Label::Full(a)]);
        let t = l.net.node(a).last_full.unwrap();
        assert!(!l.is_pjoin_eligible(a, t + 1));
        assert!(l.is_pjoin_eligible(a, t + 2));
    }

    #[test]
    fn two_sensor_pattern_makes_one_pjoin() {
        for seed in 0..20 {
            let rep = learn_run(&[pat("10")], &[0], LearnConfig::default(), seed).unwrap();
            let p = &rep.presentations[0];
            assert!(p.quiescent);
            assert_eq!(p.new_pjoins, vec![1]);
            assert!(rep.top[0].is_some());
        }
    }

    #[test]
    fn single_pattern_presented_twice_is_recognized() {
        let mut r = rng::seeded(5);
        let x = Pattern::random(16, &mut r);
        // An offset of 8 outlasts the predict, sense and confirm round trip below a parent.
        let cfg = LearnConfig { delay: Delay { slope: 2, offset: 8 }, t_max: Some(1000), ..Default::default() };
        for seed in 0..10 {
            let rep = learn_run(std::slice::from_ref(&x), &[0, 0], cfg, seed).unwrap();
            assert!(rep.presentations[0].quiescent);
            assert_eq!(rep.presentations[0].new_pjoins.len(), 15);
            assert_eq!(rep.presentations[1].recognized, Some(true), "seed {seed}");
            assert!(rep.presentations[1].new_pjoins.is_empty());
            assert_eq!(rep.presentations[0].invariant_violations + rep.presentations[1].invariant_violations, 0);
        }
    }

    #[test]
    fn default_delay_can_grow_a_new_top_on_repetition() {
        // With 2l+2 a basis item becomes eligible again before its parent's
        // prediction has come back as a full firing.
        let mut r = rng::seeded(5);
        let x = Pattern::random(16, &mut r);
        let rep = learn_run(std::slice::from_ref(&x), &[0, 0], LearnConfig::default(), 0).unwrap();
        assert!(!rep.presentations[1].new_pjoins.is_empty());
        assert_eq!(rep.presentations[1].recognized, Some(false));
    }

    #[test]
    fn downward_never_exceeds_total() {
        let mut r = rng::seeded(6);
        let pats: Vec<Pattern> = (0..3).map(|_| Pattern::random(12, &mut r)).collect();
        let sched = round_schedule(3, 3, &mut r);
        for mode in [PairingMode::RandomPairs, PairingMode::EventSequence] {
            let cfg = LearnConfig { pairing_mode: mode, ..Default::default() };
            let rep = learn_run(&pats, &sched, cfg, 9).unwrap();
            for p in &rep.presentations {
                assert!(p.downward <= p.firings);
                assert!(p.sensors_fired <= 12);
                assert_eq!(p.invariant_violations, 0);
            }
        }
    }

    #[test]
    fn config_validation() {
        assert!(LearnConfig { p: 0.0, ..Default::default() }.validate().is_err());
        assert!(LearnConfig { q: 1.5, ..Default::default() }.validate().is_err());
        assert!(LearnConfig { delay: Delay { slope: 1, offset: 2 }, ..Default::default() }.validate().is_err());
        assert!(LearnConfig { delay: Delay { slope: 1, offset: 2 }, theorem_compliant: false, ..Default::default() }
            .validate()
            .is_ok());
        assert_eq!(LearnConfig::default_t_max(40, 0.1), 100);
        assert_eq!(LearnConfig::default_t_max(1000, 0.1), (4.0 * 1000f64.ln() + 20.0 * 1000f64.ln()).ceil() as usize);
    }

    #[test]
    fn learn_run_is_deterministic() {
        let mut r = rng::seeded(8);
        let pats: Vec<Pattern> = (0..3).map(|_| Pattern::random(10, &mut r)).collect();
        let sched = round_schedule(3, 2, &mut r);
        let csv = |seed| {
            let mut buf = Vec::new();
            learn_run(&pats, &sched, LearnConfig::default(), seed).unwrap().write_csv(&mut buf).unwrap();
            buf
        };
        assert_eq!(csv(3), csv(3));
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn pattern_text_round_trips(bits in prop::collection::vec(any::<bool>(), 1..64)) {
                let x = Pattern::new(bits);
                prop_assert_eq!(x.to_string().parse::<Pattern>().unwrap(), x);
            }

            #[test]
            fn perturbation_extremes(n in 1usize..64, seed in any::<u64>()) {
                let mut r = rng::seeded(seed);
                let x = Pattern::random(n, &mut r);
                prop_assert_eq!(x.perturbed(0.0, &mut r), x.clone());
                let flipped = x.perturbed(1.0, &mut r);
                prop_assert_eq!(x.overlap(&flipped), 0.0);
                prop_assert_eq!(flipped.overlap(&x), 0.0);
            }

            #[test]
            fn random_pairs_are_disjoint_and_compatible(
                sampled in prop::collection::btree_set(0usize..40, 0..12),
                others in prop::collection::btree_set(0usize..40, 0..12),
                modulus in 1usize..4,
                seed in any::<u64>(),
            ) {
                let sampled: Vec<ItemId> = sampled.into_iter().collect();
                let others: Vec<ItemId> = others.into_iter().collect();
                // Items are compatible when they differ modulo a small number.
                let compatible = |a: ItemId, b: ItemId| a % modulus != b % modulus || modulus == 1;
                let pairs = pair_random(sampled.clone(), &others, &mut rng::seeded(seed), compatible);
                let mut used = std::collections::BTreeSet::new();
                for &(a, b) in &pairs {
                    prop_assert!(a != b && compatible(a, b));
                    prop_assert!(sampled.contains(&a));
                    prop_assert!(used.insert(a) && used.insert(b));
                }
            }

            #[test]
            fn event_populations_are_consumed_once(fires in prop::collection::vec(0usize..30, 0..30)) {
                let mut seen = std::collections::BTreeSet::new();
                let mut events = Vec::new();
                for id in fires.into_iter().filter(|&id| seen.insert(id)) {
                    events.push(SeqEvent::Fire(id));
                    events.push(SeqEvent::Ready(id));
                }
                // An item may fire into one population and later offer its own.
                let mut consumed = std::collections::BTreeSet::new();
                for (population, firer) in pair_event_sequence(&events) {
                    prop_assert!(population != firer);
                    prop_assert!(consumed.insert(population));
                    let ready_at = events.iter().position(|&e| e == SeqEvent::Ready(population)).unwrap();
                    let fired_at = events.iter().position(|&e| e == SeqEvent::Fire(firer)).unwrap();
                    prop_assert!(ready_at < fired_at);
                }
            }
        }
    }
}
