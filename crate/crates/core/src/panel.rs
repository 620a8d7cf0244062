//! Firm-week regression panel: weekly returns, monthly controls, lags, and
//! subgroup labels.
//!
//! Alignment conventions, fixed once here:
//! - a week belongs to the month of its first trading day;
//! - monthly variables attached to a week are measured at the end of the
//!   month before the week's month, so they always predate the whole week;
//! - lag columns (`*_lag1`, `*_lag2`) hold the same symbol's value one and
//!   two weeks earlier, regardless of that week's universe membership;
//! - a row exists only for (symbol, week) pairs whose month passed the
//!   universe filter. Missing fields stay missing; each study drops what it
//!   cannot use.

use std::collections::{BTreeMap, HashMap};
use std::io;

use chrono::NaiveDate;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::aggregate::{weekly_mroib, DailyFlow};
use crate::mdio::{
    apply_universe_filters, MdioError, Month, SecurityMaster, TradingCalendar, WeekId,
};

#[derive(Debug, Error)]
pub enum PanelError {
    #[error("month {month} has {n} rankable symbols for {k} groups")]
    TooFewSymbols { month: Month, n: usize, k: usize },
    #[error(transparent)]
    Io(#[from] MdioError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ReturnMode {
    /// Bid-ask midpoint to midpoint.
    BidAsk,
    /// Close to close.
    Close,
}

impl ReturnMode {
    pub fn as_str(self) -> &'static str {
        match self {
            ReturnMode::BidAsk => "bidask",
            ReturnMode::Close => "close",
        }
    }

    pub fn parse(s: &str) -> Option<ReturnMode> {
        match s.trim().to_ascii_lowercase().as_str() {
            "bidask" | "bid-ask" => Some(ReturnMode::BidAsk),
            "close" => Some(ReturnMode::Close),
            _ => None,
        }
    }
}

/// One firm-week of the regression panel.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PanelObservation {
    pub symbol: String,
    pub week: WeekId,
    pub ret: Option<f64>,
    pub ret_lag1: Option<f64>,
    pub ret_lag2: Option<f64>,
    /// Weekly imbalance as the ratio of weekly sums.
    pub mroibvol: Option<f64>,
    pub mroibvol_lag1: Option<f64>,
    pub mroibvol_lag2: Option<f64>,
    pub mroibtrd: Option<f64>,
    pub mroibtrd_lag1: Option<f64>,
    pub mroibtrd_lag2: Option<f64>,
    /// Mean of daily imbalances over the week; the portfolio sort signal.
    pub mroibvol_avg: Option<f64>,
    pub mroibtrd_avg: Option<f64>,
    /// Compounded return over the previous month.
    pub ret_m1: Option<f64>,
    /// Compounded return over months m-7 through m-2.
    pub ret_m7_m2: Option<f64>,
    /// Previous-month turnover in percent of shares outstanding.
    pub lmto: Option<f64>,
    /// Previous-month daily-return volatility.
    pub lvol: Option<f64>,
    /// ln(previous month-end market value).
    pub size: Option<f64>,
    /// ln(book equity / market value).
    pub lbm: Option<f64>,
    /// Previous month-end close in dollars; the share-price characteristic.
    pub prev_close: Option<f64>,
    pub cap_group: Option<u8>,
    pub price_group: Option<u8>,
    pub turnover_group: Option<u8>,
    pub cap_quintile: Option<u8>,
}

impl PanelObservation {
    /// Previous month-end market value in dollars.
    pub fn market_value(&self) -> Option<f64> {
        self.size.map(f64::exp)
    }
}

/// Assembled panel with a (symbol, week) index.
#[derive(Debug, Clone, Default)]
pub struct Panel {
    pub rows: Vec<PanelObservation>,
    index: HashMap<(String, i64), usize>,
}

impl Panel {
    pub fn new(rows: Vec<PanelObservation>) -> Panel {
        let index = rows
            .iter()
            .enumerate()
            .map(|(i, r)| ((r.symbol.clone(), r.week.0), i))
            .collect();
        Panel { rows, index }
    }

    pub fn get(&self, symbol: &str, week: WeekId) -> Option<&PanelObservation> {
        self.index.get(&(symbol.to_string(), week.0)).map(|&i| &self.rows[i])
    }

    pub fn weeks(&self) -> Vec<WeekId> {
        let mut weeks: Vec<i64> = self.rows.iter().map(|r| r.week.0).collect();
        weeks.sort_unstable();
        weeks.dedup();
        weeks.into_iter().map(WeekId).collect()
    }
}

// ---------------------------------------------------------------------------
// Returns
// ---------------------------------------------------------------------------

/// Daily price used for returns in a given mode: the bid-ask midpoint or the
/// close. Nonpositive or missing prices yield no observation.
fn daily_price(rec: &crate::mdio::DailySecurityRecord, mode: ReturnMode) -> Option<f64> {
    match mode {
        ReturnMode::BidAsk => {
            let (b, a) = (rec.bid?, rec.ask?);
            let m = (b.dollars() + a.dollars()) / 2.0;
            (m > 0.0).then_some(m)
        }
        ReturnMode::Close => {
            let c = rec.close?;
            (c.0 > 0).then(|| c.dollars())
        }
    }
}

/// Per-symbol daily simple returns over consecutive trading days.
pub fn daily_returns(
    master: &SecurityMaster,
    symbol: &str,
    calendar: &TradingCalendar,
    mode: ReturnMode,
) -> BTreeMap<NaiveDate, f64> {
    let mut out = BTreeMap::new();
    let Some(records) = master.records(symbol) else {
        return out;
    };
    let mut prev: Option<f64> = None;
    for day in calendar.days() {
        let price = records.get(day).and_then(|r| daily_price(r, mode));
        if let (Some(p0), Some(p1)) = (prev, price) {
            out.insert(*day, p1 / p0 - 1.0);
        }
        prev = price;
    }
    out
}

/// Compound daily returns over the week's days; missing when no day has one.
pub fn weekly_return(
    daily: &BTreeMap<NaiveDate, f64>,
    calendar: &TradingCalendar,
    week: WeekId,
) -> Option<f64> {
    let days = calendar.week_days(week)?;
    let mut acc = 1.0f64;
    let mut seen = false;
    for d in days {
        if let Some(r) = daily.get(d) {
            acc *= 1.0 + r;
            seen = true;
        }
    }
    seen.then(|| acc - 1.0)
}

fn monthly_return(
    daily: &BTreeMap<NaiveDate, f64>,
    calendar: &TradingCalendar,
    month: Month,
) -> Option<f64> {
    let mut acc = 1.0f64;
    let mut seen = false;
    for (d, r) in daily {
        if Month::of(*d) == month {
            acc *= 1.0 + r;
            seen = true;
        }
    }
    let _ = calendar;
    seen.then(|| acc - 1.0)
}

/// Previous-month and months m-7..m-2 compounded returns.
pub fn ret_windows(
    daily: &BTreeMap<NaiveDate, f64>,
    calendar: &TradingCalendar,
    month: Month,
) -> (Option<f64>, Option<f64>) {
    let ret_m1 = monthly_return(daily, calendar, month.minus(1));
    let mut acc = 1.0f64;
    let mut complete = true;
    for k in 2..=7 {
        match monthly_return(daily, calendar, month.minus(k)) {
            Some(r) => acc *= 1.0 + r,
            None => {
                complete = false;
                break;
            }
        }
    }
    (ret_m1, complete.then(|| acc - 1.0))
}

// ---------------------------------------------------------------------------
// Monthly controls
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct MonthlyControls {
    pub lmto: Option<f64>,
    pub lvol: Option<f64>,
    pub size: Option<f64>,
    pub lbm: Option<f64>,
    pub close: Option<f64>,
    pub market_value: Option<f64>,
}

/// Month-end controls for one symbol: turnover (percent), daily-return
/// volatility (needs at least five valid days), log market value, and log
/// book-to-market. Zero shares outstanding voids everything; absent book
/// equity voids only `lbm`.
pub fn monthly_controls(
    master: &SecurityMaster,
    symbol: &str,
    calendar: &TradingCalendar,
    month: Month,
    daily: &BTreeMap<NaiveDate, f64>,
) -> MonthlyControls {
    let mut out = MonthlyControls::default();
    let month_returns: Vec<f64> = daily
        .iter()
        .filter(|(d, _)| Month::of(**d) == month)
        .map(|(_, r)| *r)
        .collect();
    if month_returns.len() >= 5 {
        let n = month_returns.len() as f64;
        let mean = month_returns.iter().sum::<f64>() / n;
        let var = month_returns.iter().map(|r| (r - mean) * (r - mean)).sum::<f64>() / (n - 1.0);
        out.lvol = Some(var.sqrt());
    }
    let _ = calendar;
    let Some(rec) = master.month_end_record(symbol, month) else {
        return out;
    };
    if rec.shares_outstanding == 0 {
        return MonthlyControls { lvol: None, ..out };
    }
    let shrout = rec.shares_outstanding as f64;
    out.lmto = Some(rec.month_volume as f64 / shrout * 100.0);
    if let Some(close) = rec.close {
        let close = close.dollars();
        out.close = Some(close);
        let mv = close * shrout;
        if mv > 0.0 {
            out.market_value = Some(mv);
            out.size = Some(mv.ln());
            if let Some(be) = rec.book_equity {
                if be > 0.0 {
                    out.lbm = Some((be / mv).ln());
                }
            }
        }
    }
    out
}

// ---------------------------------------------------------------------------
// Subgroups
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Characteristic {
    Cap,
    Price,
    Turnover,
}

impl Characteristic {
    pub fn as_str(self) -> &'static str {
        match self {
            Characteristic::Cap => "cap",
            Characteristic::Price => "price",
            Characteristic::Turnover => "turnover",
        }
    }

    fn value(self, row: &PanelObservation) -> Option<f64> {
        match self {
            Characteristic::Cap => row.size,
            Characteristic::Price => row.prev_close,
            Characteristic::Turnover => row.lmto,
        }
    }
}

fn subgroup_labels_impl(
    rows: &[PanelObservation],
    calendar: &TradingCalendar,
    characteristic: Characteristic,
    k: usize,
    strict: bool,
) -> Result<Vec<Option<u8>>, PanelError> {
    assert!(k >= 1);
    let mut by_month: BTreeMap<Month, BTreeMap<&str, Option<f64>>> = BTreeMap::new();
    for row in rows {
        let month = calendar.month_of_week(row.week).expect("panel week is in the calendar");
        by_month
            .entry(month)
            .or_default()
            .insert(row.symbol.as_str(), characteristic.value(row));
    }
    let mut labels: HashMap<(Month, &str), u8> = HashMap::new();
    for (month, symbols) in &by_month {
        let mut ranked: Vec<(&str, f64)> = symbols
            .iter()
            .filter_map(|(s, v)| v.map(|v| (*s, v)))
            .collect();
        if ranked.is_empty() {
            continue;
        }
        if ranked.len() < k {
            if strict {
                return Err(PanelError::TooFewSymbols { month: *month, n: ranked.len(), k });
            }
            continue;
        }
        // Sort by value, then symbol: the documented tie-break.
        ranked.sort_by(|a, b| a.1.partial_cmp(&b.1).unwrap().then_with(|| a.0.cmp(b.0)));
        let n = ranked.len();
        for (rank, (symbol, _)) in ranked.into_iter().enumerate() {
            labels.insert((*month, symbol), (rank * k / n) as u8);
        }
    }
    Ok(rows
        .iter()
        .map(|row| {
            let month = calendar.month_of_week(row.week).unwrap();
            labels.get(&(month, row.symbol.as_str())).copied()
        })
        .collect())
}

/// Rank symbols within each formation month by a previous-month-end
/// characteristic and split them into `k` equal-count groups (0 = lowest).
/// Ties break by symbol order; a month with symbols but fewer than `k` is an
/// error; rows with no characteristic stay unlabeled.
pub fn subgroup_labels(
    rows: &[PanelObservation],
    calendar: &TradingCalendar,
    characteristic: Characteristic,
    k: usize,
) -> Result<Vec<Option<u8>>, PanelError> {
    subgroup_labels_impl(rows, calendar, characteristic, k, true)
}

/// Populate the four standard label columns (cap/price/turnover terciles and
/// the cap quintile) in place. Months with fewer rankable symbols than
/// groups stay unlabeled rather than failing the whole panel.
pub fn assign_subgroups(
    rows: &mut Vec<PanelObservation>,
    calendar: &TradingCalendar,
) -> Result<(), PanelError> {
    let cap = subgroup_labels_impl(rows, calendar, Characteristic::Cap, 3, false)?;
    let price = subgroup_labels_impl(rows, calendar, Characteristic::Price, 3, false)?;
    let turnover = subgroup_labels_impl(rows, calendar, Characteristic::Turnover, 3, false)?;
    let quintile = subgroup_labels_impl(rows, calendar, Characteristic::Cap, 5, false)?;
    for (i, row) in rows.iter_mut().enumerate() {
        row.cap_group = cap[i];
        row.price_group = price[i];
        row.turnover_group = turnover[i];
        row.cap_quintile = quintile[i];
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Assembly
// ---------------------------------------------------------------------------

/// Assemble the firm-week panel for one identification method's daily flows.
///
/// Universe membership is monthly; weekly flow and return values are computed
/// from the data regardless of membership so that lag columns stay populated
/// across eligibility boundaries.
pub fn assemble_panel(
    flows: &[DailyFlow],
    master: &SecurityMaster,
    calendar: &TradingCalendar,
    mode: ReturnMode,
) -> Result<Panel, PanelError> {
    let mut flows_by_symbol: BTreeMap<&str, Vec<DailyFlow>> = BTreeMap::new();
    for f in flows {
        flows_by_symbol.entry(f.symbol.as_str()).or_default().push(f.clone());
    }
    let months: Vec<Month> = calendar.months().collect();
    let universe: HashMap<Month, std::collections::BTreeSet<String>> = months
        .iter()
        .map(|m| (*m, apply_universe_filters(master, *m).eligible))
        .collect();
    let weeks: Vec<WeekId> = calendar.week_ids().collect();
    let symbols: Vec<&String> = master.symbols().collect();

    let empty: Vec<DailyFlow> = Vec::new();
    let mut rows: Vec<PanelObservation> = symbols
        .par_iter()
        .map(|symbol| {
            let symbol = symbol.as_str();
            let daily = daily_returns(master, symbol, calendar, mode);
            let my_flows = flows_by_symbol.get(symbol).unwrap_or(&empty);
            // Per-week values, indexed by week id.
            let mut wret: HashMap<i64, Option<f64>> = HashMap::new();
            let mut wimb: HashMap<i64, crate::aggregate::WeeklyImbalance> = HashMap::new();
            for w in &weeks {
                wret.insert(w.0, weekly_return(&daily, calendar, *w));
                wimb.insert(w.0, weekly_mroib(my_flows, calendar, *w));
            }
            let mut controls: HashMap<Month, MonthlyControls> = HashMap::new();
            let mut windows: HashMap<Month, (Option<f64>, Option<f64>)> = HashMap::new();
            for m in &months {
                controls.insert(*m, monthly_controls(master, symbol, calendar, *m, &daily));
                windows.insert(*m, ret_windows(&daily, calendar, *m));
            }
            let mut out = Vec::new();
            for w in &weeks {
                let month = calendar.month_of_week(*w).unwrap();
                if !universe.get(&month).map(|u| u.contains(symbol)).unwrap_or(false) {
                    continue;
                }
                let prev = month.prev();
                let ctrl = controls.get(&prev).copied().unwrap_or_default();
                let (ret_m1, ret_m7_m2) = windows.get(&month).copied().unwrap_or((None, None));
                let imb = wimb.get(&w.0).copied().unwrap_or_default();
                let imb1 = wimb.get(&(w.0 - 1)).copied().unwrap_or_default();
                let imb2 = wimb.get(&(w.0 - 2)).copied().unwrap_or_default();
                out.push(PanelObservation {
                    symbol: symbol.to_string(),
                    week: *w,
                    ret: wret.get(&w.0).copied().flatten(),
                    ret_lag1: wret.get(&(w.0 - 1)).copied().flatten(),
                    ret_lag2: wret.get(&(w.0 - 2)).copied().flatten(),
                    mroibvol: imb.mroibvol,
                    mroibvol_lag1: imb1.mroibvol,
                    mroibvol_lag2: imb2.mroibvol,
                    mroibtrd: imb.mroibtrd,
                    mroibtrd_lag1: imb1.mroibtrd,
                    mroibtrd_lag2: imb2.mroibtrd,
                    mroibvol_avg: imb.mroibvol_avg,
                    mroibtrd_avg: imb.mroibtrd_avg,
                    ret_m1,
                    ret_m7_m2,
                    lmto: ctrl.lmto,
                    lvol: ctrl.lvol,
                    size: ctrl.size,
                    lbm: ctrl.lbm,
                    prev_close: ctrl.close,
                    cap_group: None,
                    price_group: None,
                    turnover_group: None,
                    cap_quintile: None,
                })
            }
            out
        })
        .flatten()
        .collect();
    assign_subgroups(&mut rows, calendar)?;
    Ok(Panel::new(rows))
}

// ---------------------------------------------------------------------------
// CSV
// ---------------------------------------------------------------------------

pub const PANEL_HEADER: [&str; 24] = [
    "symbol",
    "week",
    "ret",
    "ret_lag1",
    "ret_lag2",
    "mroibvol",
    "mroibvol_lag1",
    "mroibvol_lag2",
    "mroibtrd",
    "mroibtrd_lag1",
    "mroibtrd_lag2",
    "mroibvol_avg",
    "mroibtrd_avg",
    "ret_m1",
    "ret_m7_m2",
    "lmto",
    "lvol",
    "size",
    "lbm",
    "prev_close",
    "cap_group",
    "price_group",
    "turnover_group",
    "cap_quintile",
];

pub fn write_panel<W: io::Write>(w: W, panel: &Panel) -> Result<(), MdioError> {
    let mut wtr = csv::Writer::from_writer(w);
    wtr.write_record(PANEL_HEADER)?;
    let opt = |v: Option<f64>| v.map(|x| format!("{x}")).unwrap_or_default();
    let optg = |v: Option<u8>| v.map(|x| x.to_string()).unwrap_or_default();
    for r in &panel.rows {
        wtr.write_record([
            r.symbol.clone(),
            r.week.0.to_string(),
            opt(r.ret),
            opt(r.ret_lag1),
            opt(r.ret_lag2),
            opt(r.mroibvol),
            opt(r.mroibvol_lag1),
            opt(r.mroibvol_lag2),
            opt(r.mroibtrd),
            opt(r.mroibtrd_lag1),
            opt(r.mroibtrd_lag2),
            opt(r.mroibvol_avg),
            opt(r.mroibtrd_avg),
            opt(r.ret_m1),
            opt(r.ret_m7_m2),
            opt(r.lmto),
            opt(r.lvol),
            opt(r.size),
            opt(r.lbm),
            opt(r.prev_close),
            optg(r.cap_group),
            optg(r.price_group),
            optg(r.turnover_group),
            optg(r.cap_quintile),
        ])?;
    }
    wtr.flush()?;
    Ok(())
}

pub fn read_panel<R: io::Read>(reader: R) -> Result<Panel, MdioError> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let headers = rdr.headers()?.clone();
    let col: HashMap<&str, usize> = headers.iter().enumerate().map(|(i, h)| (h, i)).collect();
    for required in PANEL_HEADER {
        if !col.contains_key(required) {
            return Err(MdioError::MissingColumn(required.to_string()));
        }
    }
    let mut rows = Vec::new();
    let mut rec = csv::StringRecord::new();
    let mut line = 1u64;
    while rdr.read_record(&mut rec)? {
        line += 1;
        let getf = |name: &str| -> Result<Option<f64>, MdioError> {
            let s = rec.get(col[name]).unwrap_or("");
            if s.is_empty() {
                Ok(None)
            } else {
                s.parse()
                    .map(Some)
                    .map_err(|_| MdioError::MalformedRow { line, msg: format!("bad {name}: {s:?}") })
            }
        };
        let getg = |name: &str| -> Result<Option<u8>, MdioError> {
            let s = rec.get(col[name]).unwrap_or("");
            if s.is_empty() {
                Ok(None)
            } else {
                s.parse()
                    .map(Some)
                    .map_err(|_| MdioError::MalformedRow { line, msg: format!("bad {name}: {s:?}") })
            }
        };
        rows.push(PanelObservation {
            symbol: rec.get(col["symbol"]).unwrap_or("").to_string(),
            week: WeekId(
                rec.get(col["week"])
                    .and_then(|s| s.parse().ok())
                    .ok_or(MdioError::MalformedRow { line, msg: "bad week".into() })?,
            ),
            ret: getf("ret")?,
            ret_lag1: getf("ret_lag1")?,
            ret_lag2: getf("ret_lag2")?,
            mroibvol: getf("mroibvol")?,
            mroibvol_lag1: getf("mroibvol_lag1")?,
            mroibvol_lag2: getf("mroibvol_lag2")?,
            mroibtrd: getf("mroibtrd")?,
            mroibtrd_lag1: getf("mroibtrd_lag1")?,
            mroibtrd_lag2: getf("mroibtrd_lag2")?,
            mroibvol_avg: getf("mroibvol_avg")?,
            mroibtrd_avg: getf("mroibtrd_avg")?,
            ret_m1: getf("ret_m1")?,
            ret_m7_m2: getf("ret_m7_m2")?,
            lmto: getf("lmto")?,
            lvol: getf("lvol")?,
            size: getf("size")?,
            lbm: getf("lbm")?,
            prev_close: getf("prev_close")?,
            cap_group: getg("cap_group")?,
            price_group: getg("price_group")?,
            turnover_group: getg("turnover_group")?,
            cap_quintile: getg("cap_quintile")?,
        });
    }
    Ok(Panel::new(rows))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mdio::{DailySecurityRecord, PilotGroup, Price4};
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn date(y: i32, m: u32, d: u32) -> NaiveDate {
        NaiveDate::from_ymd_opt(y, m, d).unwrap()
    }

    fn rec(symbol: &str, d: NaiveDate, price: f64) -> DailySecurityRecord {
        let p = Price4((price * 10_000.0).round() as i64);
        DailySecurityRecord {
            symbol: symbol.into(),
            date: d,
            close: Some(p),
            bid: Some(Price4(p.0 - 100)),
            ask: Some(Price4(p.0 + 100)),
            shares_outstanding: 10_000_000,
            share_code: 10,
            book_equity: Some(5e7),
            month_volume: 1_000_000,
            tick_pilot_group: PilotGroup::None,
        }
    }

    fn master_with_path(symbol: &str, calendar: &TradingCalendar, prices: &[f64]) -> SecurityMaster {
        let recs: Vec<DailySecurityRecord> = calendar
            .days()
            .iter()
            .zip(prices)
            .map(|(d, p)| rec(symbol, *d, *p))
            .collect();
        SecurityMaster::new(recs)
    }

    #[test]
    fn daily_return_examples() {
        let cal = TradingCalendar::synthetic(date(2020, 1, 6), 3);
        // Midpoints 10.00 -> 10.10 -> 10.10.
        let master = master_with_path("A", &cal, &[10.0, 10.1, 10.1]);
        let rets = daily_returns(&master, "A", &cal, ReturnMode::BidAsk);
        assert_abs_diff_eq!(rets[&date(2020, 1, 7)], 0.01, epsilon = 1e-12);
        assert_abs_diff_eq!(rets[&date(2020, 1, 8)], 0.0, epsilon = 1e-12);
        assert!(!rets.contains_key(&date(2020, 1, 6)));
    }

    #[test]
    fn bidask_and_close_agree_when_prices_coincide() {
        let cal = TradingCalendar::synthetic(date(2020, 1, 6), 5);
        let mut recs = Vec::new();
        for (i, d) in cal.days().iter().enumerate() {
            let p = Price4((10.0 * 10_000.0) as i64 + i as i64 * 500);
            let mut r = rec("A", *d, 10.0);
            r.close = Some(p);
            r.bid = Some(p);
            r.ask = Some(p);
            recs.push(r);
        }
        let master = SecurityMaster::new(recs);
        let a = daily_returns(&master, "A", &cal, ReturnMode::BidAsk);
        let b = daily_returns(&master, "A", &cal, ReturnMode::Close);
        assert_eq!(a, b);
    }

    #[test]
    fn weekly_return_examples() {
        let cal = TradingCalendar::synthetic(date(2020, 1, 6), 10);
        let week = cal.week_of(date(2020, 1, 6)).unwrap();
        let mut daily = BTreeMap::new();
        daily.insert(date(2020, 1, 7), 0.01);
        daily.insert(date(2020, 1, 8), 0.01);
        assert_abs_diff_eq!(weekly_return(&daily, &cal, week).unwrap(), 0.0201, epsilon = 1e-12);
        let mut one = BTreeMap::new();
        one.insert(date(2020, 1, 9), -0.05);
        assert_abs_diff_eq!(weekly_return(&one, &cal, week).unwrap(), -0.05, epsilon = 1e-12);
        assert_eq!(weekly_return(&BTreeMap::new(), &cal, week), None);
    }

    #[test]
    fn weekly_return_matches_price_relative() {
        let cal = TradingCalendar::synthetic(date(2020, 1, 6), 5);
        let prices = [20.0, 20.4, 19.9, 21.0, 21.3];
        let master = master_with_path("A", &cal, &prices);
        let daily = daily_returns(&master, "A", &cal, ReturnMode::Close);
        let week = cal.week_of(date(2020, 1, 6)).unwrap();
        let w = weekly_return(&daily, &cal, week).unwrap();
        assert_abs_diff_eq!(w, prices[4] / prices[0] - 1.0, epsilon = 1e-12);
    }

    #[test]
    fn monthly_control_examples() {
        let cal = TradingCalendar::synthetic(date(2020, 1, 1), 40);
        let month = Month { year: 2020, month: 1 };
        // Constant price path: every daily return is zero.
        let n = cal.days().len();
        let mut recs = Vec::new();
        for d in cal.days() {
            let mut r = rec("A", *d, 20.0);
            r.shares_outstanding = 5_000_000;
            r.month_volume = 500_000;
            recs.push(r.clone());
        }
        let master = SecurityMaster::new(recs);
        let daily = daily_returns(&master, "A", &cal, ReturnMode::Close);
        let c = monthly_controls(&master, "A", &cal, month, &daily);
        // 500_000 / 5_000_000 * 100 = 10 percent.
        assert_abs_diff_eq!(c.lmto.unwrap(), 10.0, epsilon = 1e-12);
        assert_abs_diff_eq!(c.lvol.unwrap(), 0.0, epsilon = 1e-15);
        // close 20, shrout 5e6 -> mv 1e8; be 5e7 -> lbm = ln(0.5).
        assert_abs_diff_eq!(c.size.unwrap(), (1e8f64).ln(), epsilon = 1e-12);
        assert_abs_diff_eq!(c.lbm.unwrap(), 0.5f64.ln(), epsilon = 1e-12);
        assert!(n >= 5);
    }

    #[test]
    fn missing_book_equity_voids_only_lbm() {
        let cal = TradingCalendar::synthetic(date(2020, 1, 1), 25);
        let month = Month { year: 2020, month: 1 };
        let mut recs = Vec::new();
        for d in cal.days() {
            let mut r = rec("A", *d, 20.0);
            r.book_equity = None;
            recs.push(r);
        }
        let master = SecurityMaster::new(recs);
        let daily = daily_returns(&master, "A", &cal, ReturnMode::Close);
        let c = monthly_controls(&master, "A", &cal, month, &daily);
        assert!(c.lbm.is_none());
        assert!(c.size.is_some());
        assert!(c.lmto.is_some());
    }

    fn flat_returns(cal: &TradingCalendar, r: f64) -> BTreeMap<NaiveDate, f64> {
        cal.days().iter().skip(1).map(|d| (*d, r)).collect()
    }

    #[test]
    fn ret_window_examples() {
        let cal = TradingCalendar::synthetic(date(2019, 1, 1), 200);
        let month = Month { year: 2019, month: 9 };
        let zeros = flat_returns(&cal, 0.0);
        let (m1, m72) = ret_windows(&zeros, &cal, month);
        assert_abs_diff_eq!(m1.unwrap(), 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(m72.unwrap(), 0.0, epsilon = 1e-15);
        // Insufficient history: month 2 lacks months -7..-2.
        let early = Month { year: 2019, month: 2 };
        let (_, missing) = ret_windows(&zeros, &cal, early);
        assert!(missing.is_none());
    }

    #[test]
    fn ret_windows_match_bruteforce_compounding() {
        use rand::prelude::*;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(9);
        let cal = TradingCalendar::synthetic(date(2019, 1, 1), 200);
        let daily: BTreeMap<NaiveDate, f64> = cal
            .days()
            .iter()
            .skip(1)
            .map(|d| (*d, rng.random_range(-0.02..0.02)))
            .collect();
        let month = Month { year: 2019, month: 9 };
        let (m1, m72) = ret_windows(&daily, &cal, month);
        // Oracle: directly compound over the date ranges.
        let compound = |lo: Month, hi: Month| -> f64 {
            daily
                .iter()
                .filter(|(d, _)| {
                    let m = Month::of(**d);
                    m >= lo && m <= hi
                })
                .fold(1.0, |acc, (_, r)| acc * (1.0 + r))
                - 1.0
        };
        assert_abs_diff_eq!(m1.unwrap(), compound(month.minus(1), month.minus(1)), epsilon = 1e-12);
        assert_abs_diff_eq!(m72.unwrap(), compound(month.minus(7), month.minus(2)), epsilon = 1e-12);
    }

    fn synthetic_flows(symbol: &str, cal: &TradingCalendar) -> Vec<DailyFlow> {
        use crate::classify::Method;
        cal.days()
            .iter()
            .enumerate()
            .map(|(i, d)| {
                let b = 100 + (i as u64 * 13) % 50;
                let s = 80 + (i as u64 * 7) % 60;
                DailyFlow {
                    symbol: symbol.into(),
                    date: *d,
                    method: Method::Bjzz,
                    mrbvol: b,
                    mrsvol: s,
                    mrbtrd: b / 10,
                    mrstrd: s / 10,
                    mroibvol: Some((b as f64 - s as f64) / (b + s) as f64),
                    mroibtrd: Some((b as f64 / 10.0 - s as f64 / 10.0) / (b / 10 + s / 10) as f64),
                }
            })
            .collect()
    }

    #[test]
    fn assemble_shapes_and_lags() {
        // History from July so that month 8 rows have full return windows.
        let cal = TradingCalendar::synthetic(date(2019, 1, 1), 250);
        let n = cal.days().len();
        let prices: Vec<f64> = (0..n).map(|i| 20.0 + (i as f64 * 0.37).sin()).collect();
        let master = master_with_path("AAA", &cal, &prices);
        let flows = synthetic_flows("AAA", &cal);
        let panel = assemble_panel(&flows, &master, &cal, ReturnMode::BidAsk).unwrap();
        // One row per (symbol, week) from the first eligible month on.
        assert!(!panel.rows.is_empty());
        for row in &panel.rows {
            // Lag columns equal the base columns of earlier rows when both exist.
            if let Some(prev) = panel.get("AAA", row.week.offset(-1)) {
                assert_eq!(row.ret_lag1, prev.ret);
                assert_eq!(row.mroibvol_lag1, prev.mroibvol);
            }
            if let Some(prev2) = panel.get("AAA", row.week.offset(-2)) {
                assert_eq!(row.ret_lag2, prev2.ret);
                assert_eq!(row.mroibvol_lag2, prev2.mroibvol);
            }
            // No look-ahead: monthly controls predate the week.
            let month = cal.month_of_week(row.week).unwrap();
            if row.lmto.is_some() {
                let month_end = cal.month_end(month.prev()).unwrap();
                let week_start = cal.week_days(row.week).unwrap()[0];
                assert!(month_end < week_start);
            }
        }
    }

    #[test]
    fn ineligible_months_have_no_rows() {
        let cal = TradingCalendar::synthetic(date(2020, 1, 1), 60);
        let mut recs = Vec::new();
        for (i, d) in cal.days().iter().enumerate() {
            // Price collapses below $1 during February.
            let price = if Month::of(*d).month == 2 { 0.50 } else { 5.0 };
            let mut r = rec("AAA", *d, price);
            r.month_volume = 1000 + i as u64;
            recs.push(r);
        }
        let master = SecurityMaster::new(recs);
        let panel = assemble_panel(&[], &master, &cal, ReturnMode::Close).unwrap();
        // March weeks are gone (previous month-end close below $1).
        for row in &panel.rows {
            let m = cal.month_of_week(row.week).unwrap();
            assert_ne!(m.month, 3, "March should be filtered out");
        }
    }

    #[test]
    fn subgroup_assignment_splits_evenly() {
        let cal = TradingCalendar::synthetic(date(2020, 1, 1), 45);
        let week = cal.week_of(date(2020, 2, 3)).unwrap();
        let mut rows = Vec::new();
        for i in 0..9 {
            rows.push(PanelObservation {
                symbol: format!("S{i}"),
                week,
                size: Some(10.0 + i as f64),
                ..Default::default()
            });
        }
        let labels = subgroup_labels(&rows, &cal, Characteristic::Cap, 3).unwrap();
        let counts = labels.iter().fold([0; 3], |mut acc, l| {
            acc[l.unwrap() as usize] += 1;
            acc
        });
        assert_eq!(counts, [3, 3, 3]);
        // Smallest sizes land in group 0.
        assert_eq!(labels[0], Some(0));
        assert_eq!(labels[8], Some(2));
    }

    #[test]
    fn subgroup_ties_break_by_symbol() {
        let cal = TradingCalendar::synthetic(date(2020, 1, 1), 45);
        let week = cal.week_of(date(2020, 2, 3)).unwrap();
        let rows: Vec<PanelObservation> = (0..6)
            .map(|i| PanelObservation {
                symbol: format!("S{i}"),
                week,
                size: Some(4.0),
                ..Default::default()
            })
            .collect();
        let labels = subgroup_labels(&rows, &cal, Characteristic::Cap, 3).unwrap();
        assert_eq!(
            labels,
            vec![Some(0), Some(0), Some(1), Some(1), Some(2), Some(2)]
        );
    }

    #[test]
    fn too_few_symbols_errors() {
        let cal = TradingCalendar::synthetic(date(2020, 1, 1), 45);
        let week = cal.week_of(date(2020, 2, 3)).unwrap();
        let rows = vec![PanelObservation {
            symbol: "A".into(),
            week,
            size: Some(1.0),
            ..Default::default()
        }];
        assert!(matches!(
            subgroup_labels(&rows, &cal, Characteristic::Cap, 3),
            Err(PanelError::TooFewSymbols { .. })
        ));
    }

    #[test]
    fn panel_csv_round_trips() {
        let cal = TradingCalendar::synthetic(date(2019, 1, 1), 250);
        let n = cal.days().len();
        let prices: Vec<f64> = (0..n).map(|i| 20.0 + (i as f64 * 0.11).cos()).collect();
        let master = master_with_path("AAA", &cal, &prices);
        let flows = synthetic_flows("AAA", &cal);
        let panel = assemble_panel(&flows, &master, &cal, ReturnMode::BidAsk).unwrap();
        let mut buf = Vec::new();
        write_panel(&mut buf, &panel).unwrap();
        let back = read_panel(buf.as_slice()).unwrap();
        assert_eq!(panel.rows, back.rows);
    }

    proptest! {
        // Compounded daily returns reproduce the total price relative.
        #[test]
        fn random_walk_compounds_to_price_relative(seed in 0u64..1000) {
            use rand::prelude::*;
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let cal = TradingCalendar::synthetic(date(2020, 1, 6), 5);
            let mut prices = vec![50.0f64];
            for _ in 1..5 {
                let step: f64 = rng.random_range(-0.03..0.03);
                let p = prices.last().unwrap() * (1.0 + step);
                prices.push((p * 10_000.0).round() / 10_000.0);
            }
            let master = master_with_path("A", &cal, &prices);
            let daily = daily_returns(&master, "A", &cal, ReturnMode::Close);
            let week = cal.week_of(date(2020, 1, 6)).unwrap();
            let w = weekly_return(&daily, &cal, week).unwrap();
            prop_assert!((w - (prices[4] / prices[0] - 1.0)).abs() <= 1e-10);
        }
    }
}
