//! Seeded firm-week panel generator with planted coefficient processes.
//!
//! Two modes:
//! - `Regression` simulates the joint imbalance/return system week by week
//!   with configurable coefficient vectors, so the panel regressions have
//!   exact planted truth. The truth manifest also carries the implied
//!   multi-week-ahead slopes, derived from the companion matrix of the
//!   two-variable system.
//! - `FactorMarket` simulates three-factor returns with per-firm loadings,
//!   an independent AR imbalance, and an optional alpha loaded on the stocks
//!   in the top imbalance quintile of the previous week.
//!
//! Controls are static per firm: cross-sectional identification without any
//! moving parts the estimators would have to model.

use chrono::NaiveDate;
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::mdio::{FactorRecord, TradingCalendar, WeekId};
use crate::panel::{assign_subgroups, Panel, PanelObservation};

/// Coefficients of one linear firm-week equation, in the regressor order
/// (lagged imbalance, lagged return, monthly controls).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CoeffVec {
    pub intercept: f64,
    pub mroib_lag: f64,
    pub ret_lag: f64,
    pub ret_m1: f64,
    pub ret_m7_m2: f64,
    pub lmto: f64,
    pub lvol: f64,
    pub size: f64,
    pub lbm: f64,
}

impl Default for CoeffVec {
    fn default() -> Self {
        CoeffVec {
            intercept: 0.0,
            mroib_lag: 0.0,
            ret_lag: 0.0,
            ret_m1: 0.0,
            ret_m7_m2: 0.0,
            lmto: 0.0,
            lvol: 0.0,
            size: 0.0,
            lbm: 0.0,
        }
    }
}

impl CoeffVec {
    pub fn as_pairs(&self) -> Vec<(&'static str, f64)> {
        vec![
            ("Intercept", self.intercept),
            ("Mroib(w-1)", self.mroib_lag),
            ("Ret(w-1)", self.ret_lag),
            ("Ret(m-1)", self.ret_m1),
            ("Ret(m-7,m-2)", self.ret_m7_m2),
            ("Lmto", self.lmto),
            ("Lvol", self.lvol),
            ("Size", self.size),
            ("Lbm", self.lbm),
        ]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum PanelMode {
    Regression {
        imb: CoeffVec,
        ret: CoeffVec,
        imb_noise: f64,
        ret_noise: f64,
        /// Optional per-cap-tercile override of the return equation's
        /// lagged-imbalance slope (small, medium, big).
        ret_slope_by_cap: Option<[f64; 3]>,
    },
    FactorMarket {
        mkt_sd: f64,
        smb_sd: f64,
        hml_sd: f64,
        rf: f64,
        idio_sd: f64,
        imb_phi: f64,
        imb_noise: f64,
        /// Weekly excess return added to stocks in the top quintile of the
        /// previous week's imbalance.
        ls_alpha_weekly: f64,
        equal_caps: bool,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PanelScenario {
    pub seed: u64,
    pub firms: usize,
    pub weeks: usize,
    pub start_date: NaiveDate,
    pub burn_in: usize,
    pub mode: PanelMode,
}

impl Default for PanelScenario {
    fn default() -> Self {
        PanelScenario {
            seed: 1,
            firms: 100,
            weeks: 60,
            start_date: NaiveDate::from_ymd_opt(2016, 1, 4).unwrap(),
            burn_in: 20,
            mode: PanelMode::Regression {
                imb: CoeffVec { intercept: -0.03, mroib_lag: 0.2, ret_lag: -0.8, ..Default::default() },
                ret: CoeffVec { intercept: 0.002, mroib_lag: 0.0009, ret_lag: -0.02, ..Default::default() },
                imb_noise: 0.3,
                ret_noise: 0.04,
                ret_slope_by_cap: None,
            },
        }
    }
}

impl PanelScenario {
    pub fn from_toml(text: &str) -> Result<PanelScenario, toml::de::Error> {
        toml::from_str(text)
    }
}

/// Planted values recorded alongside the generated panel.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PanelTruth {
    pub eq_imbalance: Option<CoeffVec>,
    pub eq_return: Option<CoeffVec>,
    /// Slope of the one-week return k weeks ahead on the formation-week
    /// imbalance, implied by the system: index k-1 for k = 1..=12. Absent
    /// when per-tercile overrides make the slope group-specific.
    pub horizon_slopes: Vec<f64>,
    /// Unconditional imbalance mean when derivable in closed form (pure AR).
    pub imb_mean: Option<f64>,
    pub ls_alpha_weekly: Option<f64>,
    pub ret_slope_by_cap: Option<[f64; 3]>,
}

#[derive(Debug, Clone)]
pub struct PanelOutput {
    pub panel: Panel,
    pub factors: Vec<FactorRecord>,
    pub calendar: TradingCalendar,
    pub truth: PanelTruth,
}

/// Slope of `ret(f+k)` on `mroib(f)` implied by the two-equation system,
/// via powers of the companion matrix of (imbalance, return).
fn implied_horizon_slopes(imb: &CoeffVec, ret: &CoeffVec, max_k: usize) -> Vec<f64> {
    // State transition for (m, r).
    let a = [[imb.mroib_lag, imb.ret_lag], [ret.mroib_lag, ret.ret_lag]];
    let mut slopes = Vec::with_capacity(max_k);
    // Coefficients of (m(f), r(f)) in E[m(f+j)], E[r(f+j)] start at identity.
    let mut state = [[1.0f64, 0.0], [0.0, 1.0]];
    for _ in 1..=max_k {
        // One-step update: row for m(f+j) = a[0] . state rows, etc.
        let m_row = [
            a[0][0] * state[0][0] + a[0][1] * state[1][0],
            a[0][0] * state[0][1] + a[0][1] * state[1][1],
        ];
        let r_row = [
            a[1][0] * state[0][0] + a[1][1] * state[1][0],
            a[1][0] * state[0][1] + a[1][1] * state[1][1],
        ];
        state = [m_row, r_row];
        slopes.push(state[1][0]);
    }
    slopes
}

struct FirmStatics {
    lmto: f64,
    lvol: f64,
    size: f64,
    lbm: f64,
    prev_close: f64,
    ret_m1: f64,
    ret_m7_m2: f64,
}

fn draw_statics(rng: &mut ChaCha8Rng, equal_caps: bool) -> FirmStatics {
    FirmStatics {
        lmto: rng.random_range(2.0..20.0),
        lvol: rng.random_range(0.01..0.05),
        size: if equal_caps { 20.0 } else { rng.random_range(17.0..22.0) },
        lbm: rng.random_range(-1.5..0.5),
        prev_close: rng.random_range(2.0..150.0),
        ret_m1: rng.random_range(-0.08..0.08),
        ret_m7_m2: rng.random_range(-0.2..0.2),
    }
}

/// Generate a panel with planted truth. Deterministic per scenario.
pub fn gen_panel(scenario: &PanelScenario) -> PanelOutput {
    let calendar = TradingCalendar::synthetic(scenario.start_date, scenario.weeks * 5);
    let mut rng = ChaCha8Rng::seed_from_u64(scenario.seed);
    match &scenario.mode {
        PanelMode::Regression { imb, ret, imb_noise, ret_noise, ret_slope_by_cap } => gen_regression(
            scenario,
            &calendar,
            &mut rng,
            imb,
            ret,
            *imb_noise,
            *ret_noise,
            *ret_slope_by_cap,
        ),
        PanelMode::FactorMarket {
            mkt_sd,
            smb_sd,
            hml_sd,
            rf,
            idio_sd,
            imb_phi,
            imb_noise,
            ls_alpha_weekly,
            equal_caps,
        } => gen_factor_market(
            scenario,
            &calendar,
            &mut rng,
            *mkt_sd,
            *smb_sd,
            *hml_sd,
            *rf,
            *idio_sd,
            *imb_phi,
            *imb_noise,
            *ls_alpha_weekly,
            *equal_caps,
        ),
    }
}

#[allow(clippy::too_many_arguments)]
fn gen_regression(
    scenario: &PanelScenario,
    calendar: &TradingCalendar,
    rng: &mut ChaCha8Rng,
    imb: &CoeffVec,
    ret: &CoeffVec,
    imb_noise: f64,
    ret_noise: f64,
    ret_slope_by_cap: Option<[f64; 3]>,
) -> PanelOutput {
    let firms = scenario.firms;
    let statics: Vec<FirmStatics> = (0..firms).map(|_| draw_statics(rng, false)).collect();
    // Cap terciles from the static sizes, matching the panel's labeling rule.
    let tercile: Vec<usize> = {
        let mut order: Vec<usize> = (0..firms).collect();
        order.sort_by(|&a, &b| {
            statics[a].size.partial_cmp(&statics[b].size).unwrap().then(a.cmp(&b))
        });
        let mut t = vec![0usize; firms];
        for (rank, &firm) in order.iter().enumerate() {
            t[firm] = rank * 3 / firms;
        }
        t
    };

    let imb_dist = Normal::new(0.0, imb_noise.max(0.0)).unwrap();
    let ret_dist = Normal::new(0.0, ret_noise.max(0.0)).unwrap();
    let total = scenario.burn_in + scenario.weeks + 2;
    let mut rows = Vec::with_capacity(firms * scenario.weeks);
    for (firm, st) in statics.iter().enumerate() {
        let symbol = format!("F{firm:04}");
        let ctrl = imb.ret_m1 * st.ret_m1
            + imb.ret_m7_m2 * st.ret_m7_m2
            + imb.lmto * st.lmto
            + imb.lvol * st.lvol
            + imb.size * st.size
            + imb.lbm * st.lbm;
        let c1 = ret_slope_by_cap.map(|s| s[tercile[firm]]).unwrap_or(ret.mroib_lag);
        let rctrl = ret.ret_m1 * st.ret_m1
            + ret.ret_m7_m2 * st.ret_m7_m2
            + ret.lmto * st.lmto
            + ret.lvol * st.lvol
            + ret.size * st.size
            + ret.lbm * st.lbm;
        let mut m_series = Vec::with_capacity(total);
        let mut r_series = Vec::with_capacity(total);
        m_series.push(rng.random_range(-0.5..0.5));
        r_series.push(rng.random_range(-0.05..0.05));
        for _ in 1..total {
            let m_prev = *m_series.last().unwrap();
            let r_prev = *r_series.last().unwrap();
            let u = if imb_noise > 0.0 { imb_dist.sample(rng) } else { 0.0 };
            let e = if ret_noise > 0.0 { ret_dist.sample(rng) } else { 0.0 };
            m_series.push(imb.intercept + imb.mroib_lag * m_prev + imb.ret_lag * r_prev + ctrl + u);
            r_series.push(ret.intercept + c1 * m_prev + ret.ret_lag * r_prev + rctrl + e);
        }
        // Row for week v reads series index burn_in + 2 + v.
        let base = scenario.burn_in + 2;
        for v in 0..scenario.weeks {
            let i = base + v - 2; // index of lag-2 value
            rows.push(PanelObservation {
                symbol: symbol.clone(),
                week: WeekId(v as i64),
                ret: Some(r_series[i + 2]),
                ret_lag1: Some(r_series[i + 1]),
                ret_lag2: Some(r_series[i]),
                mroibvol: Some(m_series[i + 2]),
                mroibvol_lag1: Some(m_series[i + 1]),
                mroibvol_lag2: Some(m_series[i]),
                mroibtrd: Some(m_series[i + 2]),
                mroibtrd_lag1: Some(m_series[i + 1]),
                mroibtrd_lag2: Some(m_series[i]),
                mroibvol_avg: Some(m_series[i + 2]),
                mroibtrd_avg: Some(m_series[i + 2]),
                ret_m1: Some(st.ret_m1),
                ret_m7_m2: Some(st.ret_m7_m2),
                lmto: Some(st.lmto),
                lvol: Some(st.lvol),
                size: Some(st.size),
                lbm: Some(st.lbm),
                prev_close: Some(st.prev_close),
                cap_group: None,
                price_group: None,
                turnover_group: None,
                cap_quintile: None,
            });
        }
    }
    assign_subgroups(&mut rows, calendar).expect("synthetic panel is labelable");
    let factors = default_factors(calendar, rng);
    let pure_ar = imb.ret_lag == 0.0
        && imb.ret_m1 == 0.0
        && imb.ret_m7_m2 == 0.0
        && imb.lmto == 0.0
        && imb.lvol == 0.0
        && imb.size == 0.0
        && imb.lbm == 0.0
        && imb.mroib_lag.abs() < 1.0;
    let truth = PanelTruth {
        eq_imbalance: Some(*imb),
        eq_return: Some(*ret),
        horizon_slopes: if ret_slope_by_cap.is_none() {
            implied_horizon_slopes(imb, ret, 12)
        } else {
            Vec::new()
        },
        imb_mean: pure_ar.then(|| imb.intercept / (1.0 - imb.mroib_lag)),
        ls_alpha_weekly: None,
        ret_slope_by_cap,
    };
    PanelOutput { panel: Panel::new(rows), factors, calendar: calendar.clone(), truth }
}

#[allow(clippy::too_many_arguments)]
fn gen_factor_market(
    scenario: &PanelScenario,
    calendar: &TradingCalendar,
    rng: &mut ChaCha8Rng,
    mkt_sd: f64,
    smb_sd: f64,
    hml_sd: f64,
    rf: f64,
    idio_sd: f64,
    imb_phi: f64,
    imb_noise: f64,
    ls_alpha_weekly: f64,
    equal_caps: bool,
) -> PanelOutput {
    let firms = scenario.firms;
    let weeks = scenario.weeks;
    let statics: Vec<FirmStatics> = (0..firms).map(|_| draw_statics(rng, equal_caps)).collect();
    let betas: Vec<[f64; 3]> = (0..firms)
        .map(|_| {
            [
                rng.random_range(0.5..1.5),
                rng.random_range(-0.5..0.5),
                rng.random_range(-0.5..0.5),
            ]
        })
        .collect();

    // Factor path.
    let mkt = Normal::new(0.002, mkt_sd).unwrap();
    let smb = Normal::new(0.0, smb_sd).unwrap();
    let hml = Normal::new(0.0, hml_sd).unwrap();
    let total = scenario.burn_in + weeks + 2;
    let factor_path: Vec<[f64; 3]> =
        (0..total).map(|_| [mkt.sample(rng), smb.sample(rng), hml.sample(rng)]).collect();

    // Imbalance paths (independent of returns).
    let imb_dist = Normal::new(0.0, imb_noise.max(1e-12)).unwrap();
    let mut m_paths: Vec<Vec<f64>> = Vec::with_capacity(firms);
    for _ in 0..firms {
        let mut m = Vec::with_capacity(total);
        m.push(rng.random_range(-0.5..0.5));
        for _ in 1..total {
            let prev = *m.last().unwrap();
            m.push(imb_phi * prev + imb_dist.sample(rng));
        }
        m_paths.push(m);
    }

    // Returns: rf + beta'F + idio + alpha for last week's top-quintile names.
    let idio = Normal::new(0.0, idio_sd).unwrap();
    let mut r_paths: Vec<Vec<f64>> = vec![Vec::with_capacity(total); firms];
    for t in 0..total {
        let mut top_cut = f64::INFINITY;
        if t > 0 && ls_alpha_weekly != 0.0 {
            let mut prev: Vec<f64> = (0..firms).map(|i| m_paths[i][t - 1]).collect();
            prev.sort_by(|a, b| a.partial_cmp(b).unwrap());
            let idx = (firms as f64 * 0.8).floor() as usize;
            top_cut = prev[idx.min(firms - 1)];
        }
        for i in 0..firms {
            let f = factor_path[t];
            let b = betas[i];
            let mut r = rf + b[0] * f[0] + b[1] * f[1] + b[2] * f[2] + idio.sample(rng);
            if t > 0 && ls_alpha_weekly != 0.0 && m_paths[i][t - 1] >= top_cut {
                r += ls_alpha_weekly;
            }
            r_paths[i].push(r);
        }
    }

    let base = scenario.burn_in + 2;
    let mut rows = Vec::with_capacity(firms * weeks);
    for i in 0..firms {
        let symbol = format!("F{i:04}");
        let st = &statics[i];
        for v in 0..weeks {
            let t = base + v;
            rows.push(PanelObservation {
                symbol: symbol.clone(),
                week: WeekId(v as i64),
                ret: Some(r_paths[i][t]),
                ret_lag1: Some(r_paths[i][t - 1]),
                ret_lag2: Some(r_paths[i][t - 2]),
                mroibvol: Some(m_paths[i][t]),
                mroibvol_lag1: Some(m_paths[i][t - 1]),
                mroibvol_lag2: Some(m_paths[i][t - 2]),
                mroibtrd: Some(m_paths[i][t]),
                mroibtrd_lag1: Some(m_paths[i][t - 1]),
                mroibtrd_lag2: Some(m_paths[i][t - 2]),
                mroibvol_avg: Some(m_paths[i][t]),
                mroibtrd_avg: Some(m_paths[i][t]),
                ret_m1: Some(st.ret_m1),
                ret_m7_m2: Some(st.ret_m7_m2),
                lmto: Some(st.lmto),
                lvol: Some(st.lvol),
                size: Some(st.size),
                lbm: Some(st.lbm),
                prev_close: Some(st.prev_close),
                cap_group: None,
                price_group: None,
                turnover_group: None,
                cap_quintile: None,
            });
        }
    }
    assign_subgroups(&mut rows, calendar).expect("synthetic panel is labelable");

    // Emit the same factor realizations the returns were built from.
    let mut factors = Vec::with_capacity(weeks);
    for (v, w) in calendar.week_ids().enumerate() {
        let days = calendar.week_days(w).unwrap();
        let f = factor_path[base + v];
        factors.push(FactorRecord {
            date: *days.last().unwrap(),
            mkt_rf: f[0],
            smb: f[1],
            hml: f[2],
            rf,
        });
    }
    let truth = PanelTruth {
        eq_imbalance: None,
        eq_return: None,
        horizon_slopes: Vec::new(),
        imb_mean: Some(0.0),
        ls_alpha_weekly: Some(ls_alpha_weekly),
        ret_slope_by_cap: None,
    };
    PanelOutput { panel: Panel::new(rows), factors, calendar: calendar.clone(), truth }
}

fn default_factors(calendar: &TradingCalendar, rng: &mut ChaCha8Rng) -> Vec<FactorRecord> {
    calendar
        .week_ids()
        .map(|w| {
            let days = calendar.week_days(w).unwrap();
            FactorRecord {
                date: *days.last().unwrap(),
                mkt_rf: rng.random_range(-0.04..0.04),
                smb: rng.random_range(-0.02..0.02),
                hml: rng.random_range(-0.02..0.02),
                rf: 0.0005,
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::econ::{fama_macbeth, Formula};
    use approx::assert_abs_diff_eq;

    fn dataset_for_eq2(panel: &Panel) -> crate::econ::DataSet {
        // Response: next week's return; regressors dated at the formation week.
        let mut data = crate::econ::DataSet::new([
            "y",
            "Mroib(w-1)",
            "Ret(w-1)",
            "Ret(m-1)",
            "Ret(m-7,m-2)",
            "Lmto",
            "Lvol",
            "Size",
            "Lbm",
        ]);
        for row in &panel.rows {
            let next = panel.get(&row.symbol, row.week.offset(1));
            let y = next.and_then(|n| n.ret);
            data.push_row(
                row.week.0,
                &[y, row.mroibvol, row.ret, row.ret_m1, row.ret_m7_m2, row.lmto, row.lvol, row.size, row.lbm],
            );
        }
        data
    }

    #[test]
    fn zero_noise_recovers_exactly() {
        let scenario = PanelScenario {
            seed: 5,
            firms: 60,
            weeks: 20,
            burn_in: 0,
            mode: PanelMode::Regression {
                imb: CoeffVec { intercept: -0.03, mroib_lag: 0.2, ret_lag: -0.8, lmto: 0.0007, size: 0.01, ..Default::default() },
                ret: CoeffVec { intercept: 0.002, mroib_lag: 0.0009, ret_lag: -0.02, lbm: 0.0002, ..Default::default() },
                imb_noise: 0.0,
                ret_noise: 0.0,
                ret_slope_by_cap: None,
            },
            ..Default::default()
        };
        let out = gen_panel(&scenario);
        let data = dataset_for_eq2(&out.panel);
        let formula = Formula::new(
            "y",
            &["Mroib(w-1)", "Ret(w-1)", "Ret(m-1)", "Ret(m-7,m-2)", "Lmto", "Lvol", "Size", "Lbm"],
        );
        let res = fama_macbeth(&data, &formula, 2).unwrap();
        let truth = out.truth.eq_return.unwrap();
        for (name, planted) in truth.as_pairs() {
            let i = res.coefficient(name).unwrap();
            assert_abs_diff_eq!(res.mean[i], planted, epsilon = 1e-10);
        }
    }

    #[test]
    fn generation_is_deterministic() {
        let scenario = PanelScenario { firms: 10, weeks: 10, ..Default::default() };
        let a = gen_panel(&scenario);
        let b = gen_panel(&scenario);
        assert_eq!(a.panel.rows, b.panel.rows);
        assert_eq!(a.factors, b.factors);
    }

    #[test]
    fn horizon_slopes_decay_geometrically_without_feedback() {
        let imb = CoeffVec { mroib_lag: 0.5, ..Default::default() };
        let ret = CoeffVec { mroib_lag: 0.001, ..Default::default() };
        let slopes = implied_horizon_slopes(&imb, &ret, 4);
        assert_abs_diff_eq!(slopes[0], 0.001, epsilon = 1e-15);
        assert_abs_diff_eq!(slopes[1], 0.0005, epsilon = 1e-15);
        assert_abs_diff_eq!(slopes[2], 0.00025, epsilon = 1e-15);
    }

    #[test]
    fn pure_ar_mean_is_recorded() {
        let scenario = PanelScenario {
            mode: PanelMode::Regression {
                imb: CoeffVec { intercept: -0.024, mroib_lag: 0.2, ..Default::default() },
                ret: CoeffVec::default(),
                imb_noise: 0.1,
                ret_noise: 0.01,
                ret_slope_by_cap: None,
            },
            ..Default::default()
        };
        let out = gen_panel(&scenario);
        assert_abs_diff_eq!(out.truth.imb_mean.unwrap(), -0.03, epsilon = 1e-12);
    }
}
