//! Tick-data pipeline for marketable retail order flow.
//!
//! The crate identifies off-exchange subpenny retail trades on a consolidated
//! tape, signs them with two methods (the subpenny-fraction rule and the
//! quote-midpoint rule), aggregates signed flow into daily and weekly
//! order-imbalance panels, and runs the downstream statistics: Fama-MacBeth
//! regressions with Newey-West errors, quintile long-short portfolios with
//! three-factor alphas and Hansen-Hodrick errors, an imbalance decomposition,
//! and an event study around intense buy/sell weeks.
//!
//! Module map:
//! - [`mdio`] — CSV parsing, domain records, trading calendar, universe filters
//! - [`classify`] — retail-trade identification and signing
//! - [`aggregate`] — daily/weekly flow aggregates and summary statistics
//! - [`panel`] — firm-week regression panel assembly
//! - [`econ`] — OLS, Fama-MacBeth, Newey-West / Hansen-Hodrick variances
//! - [`studies`] — the seven table-producing procedures
//! - [`synth`] — seeded scenario generators with planted ground truth, plus
//!   the independent oracles used by the verification suite
//! - [`pipeline`] — file-level orchestration shared by the CLI and tests

pub mod aggregate;
pub mod classify;
pub mod econ;
pub mod mdio;
pub mod panel;
pub mod pipeline;
pub mod studies;
pub mod synth;
pub mod verify;
