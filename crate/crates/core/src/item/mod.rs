//! Items and the predictive JOIN state machine.
//!
//! [`item_transition`] is the item-level machine. [`network`] runs it over a
//! whole item DAG, [`neural`] builds the same constructions out of neuroids,
//! and [`crosscheck`] compares the two.

pub mod crosscheck;
pub mod network;
pub mod neural;

use crate::error::{Error, Result};

pub type ItemId = usize;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ItemKind {
    Sensor,
    BasisZero,
    BasisOne,
    Pjoin,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct JoinParams {
    /// Target item size.
    pub r: usize,
    /// Number of firing inputs needed to reach threshold.
    pub k: usize,
    pub threshold: f64,
}

impl JoinParams {
    pub fn validate(&self) -> Result<()> {
        if self.k < 2 {
            return Err(Error::Params(format!("quorum k={} must be at least 2", self.k)));
        }
        if self.r < self.k {
            return Err(Error::Params(format!("item size r={} below quorum k={}", self.r, self.k)));
        }
        if !(self.threshold > 0.0) {
            return Err(Error::Params("threshold must be positive".into()));
        }
        Ok(())
    }
}

impl Default for JoinParams {
    fn default() -> Self {
        Self { r: 20, k: 5, threshold: 1.0 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Mode {
    Operational,
    PredictingA,
    PredictingB,
}

/// Operational state of a predictive JOIN item. `passive` means the
/// predictive part ignores downward input until the item fires in full.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ItemMachineState {
    pub mode: Mode,
    pub passive: bool,
}

impl ItemMachineState {
    pub const OPERATIONAL: Self = Self { mode: Mode::Operational, passive: false };

    pub const ALL: [Self; 6] = [
        Self { mode: Mode::Operational, passive: false },
        Self { mode: Mode::PredictingA, passive: false },
        Self { mode: Mode::PredictingB, passive: false },
        Self { mode: Mode::Operational, passive: true },
        Self { mode: Mode::PredictingA, passive: true },
        Self { mode: Mode::PredictingB, passive: true },
    ];
}

impl Default for ItemMachineState {
    fn default() -> Self {
        Self::OPERATIONAL
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ItemEvent {
    A,
    B,
    Both,
    /// The parent's predictive part fires downward into this item.
    ParentDown,
    /// Whichever child is currently predicted fires.
    Predicted,
}

impl ItemEvent {
    pub const ALL: [Self; 5] = [Self::A, Self::B, Self::Both, Self::ParentDown, Self::Predicted];
}

/// What the item emits in response to an event.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Emission {
    None,
    /// All of C fires.
    Full,
    /// C_P alone fires upward; the downward wave reaches the other child.
    PartUp {
        predicts: Child,
    },
    /// C_P fires downward, continuing a search from above.
    PartDown,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Child {
    A,
    B,
}

pub fn item_transition(state: ItemMachineState, event: ItemEvent) -> (ItemMachineState, Emission) {
    use ItemEvent as E;
    use Mode::*;
    let full = (ItemMachineState::OPERATIONAL, Emission::Full);
    match (state.mode, event) {
        (_, E::Both) => full,
        (PredictingA, E::A) | (PredictingB, E::B) => full,
        (PredictingA, E::Predicted) | (PredictingB, E::Predicted) => full,
        (Operational, E::Predicted) => (state, Emission::None),
        (_, E::A) => (ItemMachineState { mode: PredictingB, passive: true }, Emission::PartUp { predicts: Child::B }),
        (_, E::B) => (ItemMachineState { mode: PredictingA, passive: true }, Emission::PartUp { predicts: Child::A }),
        (_, E::ParentDown) if state.passive => (state, Emission::None),
        (mode, E::ParentDown) => (ItemMachineState { mode, passive: true }, Emission::PartDown),
    }
}

/// One node of an item DAG.
#[derive(Clone, Debug, PartialEq)]
pub struct Item {
    pub id: ItemId,
    pub kind: ItemKind,
    pub level: u32,
    pub children: Option<(ItemId, ItemId)>,
    pub parents: Vec<ItemId>,
    /// Neuroids of the item; empty on the abstract backend.
    pub neuroids: Vec<usize>,
    /// Predictive subset; for leaves this is the part that fires downward.
    pub predictive: Vec<usize>,
}

impl Item {
    /// `id kind level children |neuroids| |predictive|`, children as `a,b` or `-`.
    pub fn export_line(&self) -> String {
        let kind = match self.kind {
            ItemKind::Sensor => "sensor",
            ItemKind::BasisZero => "basis-zero",
            ItemKind::BasisOne => "basis-one",
            ItemKind::Pjoin => "pjoin",
        };
        let children = match self.children {
            Some((a, b)) => format!("{a},{b}"),
            None => "-".into(),
        };
        format!("{} {} {} {} {} {}", self.id, kind, self.level, children, self.neuroids.len(), self.predictive.len())
    }
}
