//! Bundled example knowledge: the glasses case study and the evaporation
//! frame. Used by the tests, the benches and `col init --example`.

use crate::kb::{new_kb, KnowledgeBase};
use crate::teach::{replay_script, Replay};

/// Seed knowing the concepts Humans and Breakable.
pub const CASE_STUDY_SEED: &str = include_str!("../data/case_study_seed.json");

/// The eight-stage glasses dialogue, with snapshots `stage2`, `stage4`,
/// `stage6` and `final`.
pub const CASE_STUDY_SCRIPT: &str = include_str!("../data/case_study.col");

/// Declares the Evaporation frame and its three gas-law rules.
pub const GAS_LAW_SCRIPT: &str = include_str!("../data/gas_law.col");

pub fn case_study_seed() -> KnowledgeBase {
    new_kb(Some(CASE_STUDY_SEED)).expect("bundled seed is valid")
}

/// Replays the case study over its seed.
pub fn case_study() -> Replay {
    replay_script(case_study_seed(), CASE_STUDY_SCRIPT).expect("bundled script replays")
}

pub fn gas_law() -> KnowledgeBase {
    replay_script(KnowledgeBase::new(), GAS_LAW_SCRIPT).expect("bundled script replays").kb
}
