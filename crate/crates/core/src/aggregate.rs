//! Daily and weekly retail-flow aggregates, summary statistics, and the
//! cross-method correlations.
//!
//! Two weekly imbalance conventions exist side by side: the ratio of weekly
//! sums (used by the regressions) and the mean of daily imbalances (used as
//! the portfolio sort signal). Both are carried on every firm-week.

use std::collections::BTreeMap;
use std::io;

use chrono::NaiveDate;
use serde::Serialize;
use thiserror::Error;

use crate::classify::{Direction, Method, SignedRetailTrade};
use crate::mdio::{MdioError, TradingCalendar, WeekId};

#[derive(Debug, Error)]
pub enum AggError {
    #[error("empty series")]
    EmptySeries,
    #[error("degenerate input: {0}")]
    Degenerate(String),
    #[error(transparent)]
    Io(#[from] MdioError),
}

/// One stock-day of signed retail flow under one identification method.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DailyFlow {
    pub symbol: String,
    pub date: NaiveDate,
    pub method: Method,
    /// Shares bought / sold.
    pub mrbvol: u64,
    pub mrsvol: u64,
    /// Buy / sell trade counts.
    pub mrbtrd: u64,
    pub mrstrd: u64,
    /// (buy - sell) / (buy + sell); missing when the denominator is zero.
    pub mroibvol: Option<f64>,
    pub mroibtrd: Option<f64>,
}

fn imbalance(buy: u64, sell: u64) -> Option<f64> {
    let denom = buy + sell;
    if denom == 0 {
        None
    } else {
        Some((buy as f64 - sell as f64) / denom as f64)
    }
}

/// Fold one symbol-day-method group of signed trades into a [`DailyFlow`].
/// Zero trades produce a flow with missing imbalances.
pub fn accumulate_daily(
    symbol: &str,
    date: NaiveDate,
    method: Method,
    trades: &[&SignedRetailTrade],
) -> DailyFlow {
    let mut flow = DailyFlow {
        symbol: symbol.to_string(),
        date,
        method,
        mrbvol: 0,
        mrsvol: 0,
        mrbtrd: 0,
        mrstrd: 0,
        mroibvol: None,
        mroibtrd: None,
    };
    for t in trades {
        debug_assert!(t.trade.symbol == symbol && t.trade.date == date && t.method == method);
        match t.direction {
            Direction::Buy => {
                flow.mrbvol += t.trade.size as u64;
                flow.mrbtrd += 1;
            }
            Direction::Sell => {
                flow.mrsvol += t.trade.size as u64;
                flow.mrstrd += 1;
            }
        }
    }
    flow.mroibvol = imbalance(flow.mrbvol, flow.mrsvol);
    flow.mroibtrd = imbalance(flow.mrbtrd, flow.mrstrd);
    flow
}

/// Group signed trades by (symbol, date, method) and fold each group.
/// Output is sorted by those keys.
pub fn build_daily_flows<'a>(signed: impl Iterator<Item = &'a SignedRetailTrade>) -> Vec<DailyFlow> {
    let mut groups: BTreeMap<(String, NaiveDate, Method), Vec<&SignedRetailTrade>> = BTreeMap::new();
    for t in signed {
        groups
            .entry((t.trade.symbol.clone(), t.trade.date, t.method))
            .or_default()
            .push(t);
    }
    groups
        .into_iter()
        .map(|((symbol, date, method), trades)| accumulate_daily(&symbol, date, method, &trades))
        .collect()
}

/// How daily imbalances roll up to a firm-week.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum WeeklyAggregation {
    /// (sum of buys - sum of sells) / (sum of buys + sum of sells).
    RatioOfSums,
    /// Mean of the daily imbalance ratios over days that have one.
    MeanOfDailies,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct WeeklyImbalance {
    pub mroibvol: Option<f64>,
    pub mroibtrd: Option<f64>,
    /// Mean-of-dailies variants, used as the portfolio sort signal.
    pub mroibvol_avg: Option<f64>,
    pub mroibtrd_avg: Option<f64>,
    pub active_days: usize,
}

/// Weekly imbalance for one symbol+method from its daily flows.
pub fn weekly_mroib(flows: &[DailyFlow], calendar: &TradingCalendar, week: WeekId) -> WeeklyImbalance {
    let Some(days) = calendar.week_days(week) else {
        return WeeklyImbalance::default();
    };
    let mut out = WeeklyImbalance::default();
    let (mut bv, mut sv, mut bt, mut st) = (0u64, 0u64, 0u64, 0u64);
    let mut vol_ratios = Vec::new();
    let mut trd_ratios = Vec::new();
    for f in flows {
        if days.contains(&f.date) {
            out.active_days += 1;
            bv += f.mrbvol;
            sv += f.mrsvol;
            bt += f.mrbtrd;
            st += f.mrstrd;
            if let Some(r) = f.mroibvol {
                vol_ratios.push(r);
            }
            if let Some(r) = f.mroibtrd {
                trd_ratios.push(r);
            }
        }
    }
    out.mroibvol = imbalance(bv, sv);
    out.mroibtrd = imbalance(bt, st);
    out.mroibvol_avg = mean_of(&vol_ratios);
    out.mroibtrd_avg = mean_of(&trd_ratios);
    out
}

fn mean_of(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        None
    } else {
        Some(values.iter().sum::<f64>() / values.len() as f64)
    }
}

// ---------------------------------------------------------------------------
// Summary statistics
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SummaryStats {
    pub n: usize,
    pub mean: f64,
    /// Sample standard deviation (n-1 denominator); zero for a single value.
    pub std: f64,
    pub median: f64,
    pub q1: f64,
    pub q3: f64,
}

/// Linear-interpolation (type 7) quantile of an ascending-sorted slice.
pub fn quantile_type7(sorted: &[f64], p: f64) -> f64 {
    debug_assert!(!sorted.is_empty());
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let h = (n - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(n - 1);
    let frac = h - lo as f64;
    sorted[lo] + frac * (sorted[hi] - sorted[lo])
}

pub fn summarize(values: &[f64]) -> Result<SummaryStats, AggError> {
    if values.is_empty() {
        return Err(AggError::EmptySeries);
    }
    let n = values.len();
    let mean = values.iter().sum::<f64>() / n as f64;
    let std = if n == 1 {
        0.0
    } else {
        (values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n as f64 - 1.0)).sqrt()
    };
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    Ok(SummaryStats {
        n,
        mean,
        std,
        median: quantile_type7(&sorted, 0.5),
        q1: quantile_type7(&sorted, 0.25),
        q3: quantile_type7(&sorted, 0.75),
    })
}

/// Interquartile range (type-7 quartiles) of an unsorted series.
pub fn iqr(values: &[f64]) -> Result<f64, AggError> {
    if values.is_empty() {
        return Err(AggError::EmptySeries);
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    Ok(quantile_type7(&sorted, 0.75) - quantile_type7(&sorted, 0.25))
}

// ---------------------------------------------------------------------------
// Cross-method correlation
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum FlowVariable {
    Mrbvol,
    Mrsvol,
    Mrbtrd,
    Mrstrd,
    Mroibvol,
    Mroibtrd,
}

impl FlowVariable {
    pub const ALL: [FlowVariable; 6] = [
        FlowVariable::Mrbvol,
        FlowVariable::Mrsvol,
        FlowVariable::Mrbtrd,
        FlowVariable::Mrstrd,
        FlowVariable::Mroibvol,
        FlowVariable::Mroibtrd,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            FlowVariable::Mrbvol => "Mrbvol",
            FlowVariable::Mrsvol => "Mrsvol",
            FlowVariable::Mrbtrd => "Mrbtrd",
            FlowVariable::Mrstrd => "Mrstrd",
            FlowVariable::Mroibvol => "Mroibvol",
            FlowVariable::Mroibtrd => "Mroibtrd",
        }
    }

    pub fn of(self, flow: &DailyFlow) -> Option<f64> {
        match self {
            FlowVariable::Mrbvol => Some(flow.mrbvol as f64),
            FlowVariable::Mrsvol => Some(flow.mrsvol as f64),
            FlowVariable::Mrbtrd => Some(flow.mrbtrd as f64),
            FlowVariable::Mrstrd => Some(flow.mrstrd as f64),
            FlowVariable::Mroibvol => flow.mroibvol,
            FlowVariable::Mroibtrd => flow.mroibtrd,
        }
    }
}

pub fn pearson(pairs: &[(f64, f64)]) -> Result<f64, AggError> {
    if pairs.len() < 2 {
        return Err(AggError::Degenerate(format!("{} pairs", pairs.len())));
    }
    let n = pairs.len() as f64;
    let mx = pairs.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pairs.iter().map(|p| p.1).sum::<f64>() / n;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    let mut sxy = 0.0;
    for (x, y) in pairs {
        sxx += (x - mx) * (x - mx);
        syy += (y - my) * (y - my);
        sxy += (x - mx) * (y - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(AggError::Degenerate("zero variance".into()));
    }
    Ok(sxy / (sxx * syy).sqrt())
}

/// Pearson correlation of one flow variable across methods, joined on
/// (symbol, date); pairs with either side missing are dropped.
pub fn method_correlation(
    flows_a: &[DailyFlow],
    flows_b: &[DailyFlow],
    variable: FlowVariable,
) -> Result<f64, AggError> {
    let index: BTreeMap<(&str, NaiveDate), &DailyFlow> =
        flows_a.iter().map(|f| ((f.symbol.as_str(), f.date), f)).collect();
    let mut pairs = Vec::new();
    for b in flows_b {
        if let Some(a) = index.get(&(b.symbol.as_str(), b.date)) {
            if let (Some(x), Some(y)) = (variable.of(a), variable.of(b)) {
                pairs.push((x, y));
            }
        }
    }
    pearson(&pairs)
}

// ---------------------------------------------------------------------------
// Summary table (per-variable statistics plus cross-method correlation)
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize)]
pub struct SummaryRow {
    pub variable: &'static str,
    pub method: Method,
    pub stats: SummaryStats,
    pub correlation: Option<f64>,
}

/// Pooled stock-day summary of every flow variable under both methods, with
/// the BJZZ-vs-QMP correlation attached to the BJZZ rows.
pub fn summary_table(flows_bjzz: &[DailyFlow], flows_qmp: &[DailyFlow]) -> Result<Vec<SummaryRow>, AggError> {
    let mut rows = Vec::new();
    for variable in FlowVariable::ALL {
        let corr = method_correlation(flows_bjzz, flows_qmp, variable).ok();
        for (method, flows) in [(Method::Bjzz, flows_bjzz), (Method::Qmp, flows_qmp)] {
            let values: Vec<f64> = flows.iter().filter_map(|f| variable.of(f)).collect();
            let stats = summarize(&values)?;
            rows.push(SummaryRow {
                variable: variable.as_str(),
                method,
                stats,
                correlation: if method == Method::Bjzz { corr } else { None },
            });
        }
    }
    Ok(rows)
}

// ---------------------------------------------------------------------------
// CSV
// ---------------------------------------------------------------------------

fn opt_str(v: Option<f64>) -> String {
    v.map(|x| format!("{x}")).unwrap_or_default()
}

pub fn write_daily_flows<W: io::Write>(w: W, flows: &[DailyFlow]) -> Result<(), MdioError> {
    let mut wtr = csv::Writer::from_writer(w);
    wtr.write_record([
        "symbol", "date", "method", "mrbvol", "mrsvol", "mrbtrd", "mrstrd", "mroibvol", "mroibtrd",
    ])?;
    for f in flows {
        wtr.write_record([
            f.symbol.as_str(),
            &f.date.to_string(),
            f.method.as_str(),
            &f.mrbvol.to_string(),
            &f.mrsvol.to_string(),
            &f.mrbtrd.to_string(),
            &f.mrstrd.to_string(),
            &opt_str(f.mroibvol),
            &opt_str(f.mroibtrd),
        ])?;
    }
    wtr.flush()?;
    Ok(())
}

pub fn read_daily_flows<R: io::Read>(reader: R) -> Result<Vec<DailyFlow>, MdioError> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let mut out = Vec::new();
    let mut rec = csv::StringRecord::new();
    let mut line = 1u64;
    while rdr.read_record(&mut rec)? {
        line += 1;
        let bad = |msg: &str| MdioError::MalformedRow { line, msg: msg.into() };
        let opt = |s: &str| -> Result<Option<f64>, MdioError> {
            if s.is_empty() {
                Ok(None)
            } else {
                s.parse().map(Some).map_err(|_| MdioError::MalformedRow { line, msg: format!("bad float {s:?}") })
            }
        };
        out.push(DailyFlow {
            symbol: rec.get(0).ok_or_else(|| bad("missing symbol"))?.to_string(),
            date: rec.get(1).and_then(|s| s.parse().ok()).ok_or_else(|| bad("bad date"))?,
            method: rec.get(2).and_then(Method::parse).ok_or_else(|| bad("bad method"))?,
            mrbvol: rec.get(3).and_then(|s| s.parse().ok()).ok_or_else(|| bad("bad mrbvol"))?,
            mrsvol: rec.get(4).and_then(|s| s.parse().ok()).ok_or_else(|| bad("bad mrsvol"))?,
            mrbtrd: rec.get(5).and_then(|s| s.parse().ok()).ok_or_else(|| bad("bad mrbtrd"))?,
            mrstrd: rec.get(6).and_then(|s| s.parse().ok()).ok_or_else(|| bad("bad mrstrd"))?,
            mroibvol: opt(rec.get(7).unwrap_or(""))?,
            mroibtrd: opt(rec.get(8).unwrap_or(""))?,
        });
    }
    Ok(out)
}

pub fn write_summary<W: io::Write>(w: W, period: &str, rows: &[SummaryRow]) -> Result<(), MdioError> {
    let mut wtr = csv::Writer::from_writer(w);
    wtr.write_record(["variable", "period", "method", "n", "mean", "std", "median", "q1", "q3", "corr"])?;
    for r in rows {
        wtr.write_record([
            r.variable,
            period,
            r.method.as_str(),
            &r.stats.n.to_string(),
            &format!("{}", r.stats.mean),
            &format!("{}", r.stats.std),
            &format!("{}", r.stats.median),
            &format!("{}", r.stats.q1),
            &format!("{}", r.stats.q3),
            &r.correlation.map(|c| format!("{c}")).unwrap_or_default(),
        ])?;
    }
    wtr.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mdio::{Price4, TradeRecord, TradingCalendar};
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn date(d: u32) -> NaiveDate {
        NaiveDate::from_ymd_opt(2020, 1, d).unwrap()
    }

    fn signed(symbol: &str, d: u32, direction: Direction, size: u32) -> SignedRetailTrade {
        SignedRetailTrade {
            trade: TradeRecord {
                symbol: symbol.into(),
                date: date(d),
                ts: 1,
                price: Price4::parse("10.0070").unwrap(),
                size,
                exchange: 'D',
                condition: String::new(),
            },
            method: Method::Bjzz,
            direction,
            subpenny_fraction: 0.7,
            matched_bid: None,
            matched_ask: None,
        }
    }

    #[test]
    fn accumulate_examples() {
        let trades = vec![
            signed("A", 6, Direction::Buy, 100),
            signed("A", 6, Direction::Buy, 50),
            signed("A", 6, Direction::Sell, 50),
        ];
        let refs: Vec<&SignedRetailTrade> = trades.iter().collect();
        let flow = accumulate_daily("A", date(6), Method::Bjzz, &refs);
        assert_eq!(flow.mrbvol, 150);
        assert_eq!(flow.mrsvol, 50);
        assert_abs_diff_eq!(flow.mroibvol.unwrap(), 0.5);
        assert_abs_diff_eq!(flow.mroibtrd.unwrap(), 1.0 / 3.0, epsilon = 1e-15);
    }

    #[test]
    fn buys_only_and_empty() {
        let trades = vec![signed("A", 6, Direction::Buy, 10)];
        let refs: Vec<&SignedRetailTrade> = trades.iter().collect();
        let flow = accumulate_daily("A", date(6), Method::Bjzz, &refs);
        assert_eq!(flow.mroibvol, Some(1.0));
        let empty = accumulate_daily("A", date(6), Method::Bjzz, &[]);
        assert_eq!(empty.mroibvol, None);
        assert_eq!(empty.mroibtrd, None);
    }

    fn flow(d: u32, b: u64, s: u64) -> DailyFlow {
        DailyFlow {
            symbol: "A".into(),
            date: date(d),
            method: Method::Bjzz,
            mrbvol: b,
            mrsvol: s,
            mrbtrd: b / 10,
            mrstrd: s / 10,
            mroibvol: imbalance(b, s),
            mroibtrd: imbalance(b / 10, s / 10),
        }
    }

    #[test]
    fn weekly_aggregation() {
        let cal = TradingCalendar::synthetic(date(6), 10);
        let week = cal.week_of(date(6)).unwrap();
        // A single active day equals that day's imbalance.
        let one = weekly_mroib(&[flow(6, 150, 50)], &cal, week);
        assert_abs_diff_eq!(one.mroibvol.unwrap(), 0.5);
        // Two symmetric days cancel.
        let two = weekly_mroib(&[flow(6, 100, 0), flow(7, 0, 100)], &cal, week);
        assert_abs_diff_eq!(two.mroibvol.unwrap(), 0.0);
        // Days outside the week are ignored.
        let other = weekly_mroib(&[flow(6, 100, 0), flow(13, 0, 100)], &cal, week);
        assert_abs_diff_eq!(other.mroibvol.unwrap(), 1.0);
    }

    #[test]
    fn weekly_ratio_of_sums_is_not_mean_of_dailies() {
        let cal = TradingCalendar::synthetic(date(6), 10);
        let week = cal.week_of(date(6)).unwrap();
        let w = weekly_mroib(&[flow(6, 10, 0), flow(7, 0, 90)], &cal, week);
        // Volume-weighted: (10 - 90) / 100.
        assert_abs_diff_eq!(w.mroibvol.unwrap(), -0.8);
        // Mean of dailies: (1.0 + -1.0) / 2.
        assert_abs_diff_eq!(w.mroibvol_avg.unwrap(), 0.0);
        assert_ne!(w.mroibvol, w.mroibvol_avg);
    }

    #[test]
    fn weekly_matches_bruteforce_reaggregation() {
        use rand::prelude::*;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let cal = TradingCalendar::synthetic(date(6), 5);
        let week = cal.week_of(date(6)).unwrap();
        let mut trades = Vec::new();
        for d in 6..=10 {
            for _ in 0..rng.random_range(0..20) {
                let dir = if rng.random_bool(0.5) { Direction::Buy } else { Direction::Sell };
                trades.push(signed("A", d, dir, rng.random_range(1..500)));
            }
        }
        let flows = build_daily_flows(trades.iter());
        let weekly = weekly_mroib(&flows, &cal, week);
        // Oracle: recompute from the raw signed trades.
        let bv: u64 = trades.iter().filter(|t| t.direction == Direction::Buy).map(|t| t.trade.size as u64).sum();
        let sv: u64 = trades.iter().filter(|t| t.direction == Direction::Sell).map(|t| t.trade.size as u64).sum();
        match (weekly.mroibvol, imbalance(bv, sv)) {
            (Some(a), Some(b)) => assert_abs_diff_eq!(a, b, epsilon = 1e-15),
            (a, b) => assert_eq!(a, b),
        }
    }

    #[test]
    fn summary_examples() {
        let s = summarize(&[1.0, 2.0, 3.0, 4.0, 5.0]).unwrap();
        assert_eq!(s.median, 3.0);
        assert_eq!(s.q1, 2.0);
        assert_eq!(s.q3, 4.0);
        let c = summarize(&[7.0; 9]).unwrap();
        assert_eq!(c.std, 0.0);
        assert!(matches!(summarize(&[]), Err(AggError::EmptySeries)));
    }

    #[test]
    fn quantile_interpolates() {
        // Even-length series interpolates between order statistics.
        let s = summarize(&[1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_abs_diff_eq!(s.median, 2.5);
        assert_abs_diff_eq!(s.q1, 1.75);
        assert_abs_diff_eq!(s.q3, 3.25);
    }

    #[test]
    fn correlation_examples() {
        let a: Vec<DailyFlow> = (1..=10).map(|d| flow(d, 100 + d as u64 * 10, 50)).collect();
        let mut b = a.clone();
        assert_abs_diff_eq!(method_correlation(&a, &b, FlowVariable::Mrbvol).unwrap(), 1.0, epsilon = 1e-12);
        // Negation flips the sign.
        for f in b.iter_mut() {
            let v = f.mroibvol.unwrap();
            f.mroibvol = Some(-v);
        }
        assert_abs_diff_eq!(method_correlation(&a, &b, FlowVariable::Mroibvol).unwrap(), -1.0, epsilon = 1e-12);
        assert!(matches!(
            method_correlation(&a[..1], &b[..1], FlowVariable::Mrbvol),
            Err(AggError::Degenerate(_))
        ));
    }

    proptest! {
        // Imbalances stay inside [-1, 1] and flip sign when labels swap.
        #[test]
        fn imbalance_bounds_and_antisymmetry(sizes in prop::collection::vec((0u32..1000, prop::bool::ANY), 1..40)) {
            let trades: Vec<SignedRetailTrade> = sizes
                .iter()
                .enumerate()
                .filter(|(_, (sz, _))| *sz > 0)
                .map(|(i, (sz, buy))| signed("A", 6, if *buy { Direction::Buy } else { Direction::Sell }, *sz + i as u32 % 7))
                .collect();
            let refs: Vec<&SignedRetailTrade> = trades.iter().collect();
            let flow = accumulate_daily("A", date(6), Method::Bjzz, &refs);
            if let Some(v) = flow.mroibvol {
                prop_assert!((-1.0..=1.0).contains(&v));
            }
            if let Some(v) = flow.mroibtrd {
                prop_assert!((-1.0..=1.0).contains(&v));
            }
            // Swap labels.
            let flipped: Vec<SignedRetailTrade> = trades
                .iter()
                .map(|t| SignedRetailTrade { direction: t.direction.flipped(), ..t.clone() })
                .collect();
            let refs: Vec<&SignedRetailTrade> = flipped.iter().collect();
            let anti = accumulate_daily("A", date(6), Method::Bjzz, &refs);
            match (flow.mroibvol, anti.mroibvol) {
                (Some(a), Some(b)) => prop_assert!((a + b).abs() <= 1e-15),
                (a, b) => prop_assert_eq!(a.is_none(), b.is_none()),
            }
        }
    }
}
