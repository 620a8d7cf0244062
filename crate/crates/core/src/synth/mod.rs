//! Seeded scenario generators with planted ground truth, and the independent
//! oracles the verification suite checks the estimators against.
//!
//! Truth files produced here are read only by test harnesses and the verify
//! command, never by the pipeline under test. All generation is driven by a
//! ChaCha8 stream seeded from the scenario, so identical scenarios produce
//! byte-identical outputs on any platform.

pub mod confusion;
pub mod market;
pub mod oracle;
pub mod panel;

pub use confusion::{confusion, ConfusionReport};
pub use market::{gen_market, MarketOutput, MarketScenario, SideMode, SpreadMode};
pub use panel::{gen_panel, PanelScenario, PanelTruth};
