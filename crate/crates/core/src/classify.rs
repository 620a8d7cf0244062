//! Retail-trade identification and signing.
//!
//! Both methods share one identification gate: the print is off-exchange
//! (exchange code `D`) and carries a nonzero subpenny fraction. They differ
//! in how the identified trade is signed:
//!
//! - the subpenny-fraction rule (`BJZZ`) signs a buy when the fractional cent
//!   lies in (0.6, 1.0) and a sell when it lies in (0, 0.4); fractions in
//!   [0.4, 0.6] stay unsigned;
//! - the quote-midpoint rule (`QMP`) compares the print to the prevailing
//!   NBBO midpoint and leaves prints within 40–60% of the spread (inclusive)
//!   unsigned.
//!
//! All threshold comparisons work on the integer subpenny digits scaled to
//! `f64`, so the configured defaults behave exactly at the boundaries.

use std::collections::{BTreeMap, HashMap};
use std::io;

use chrono::NaiveDate;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::mdio::{MdioError, Price4, QuoteRecord, TradeRecord};

#[derive(Debug, Error)]
pub enum ClassifyError {
    #[error("trades span multiple dates but a single-day partition was required")]
    MixedDates,
    #[error(transparent)]
    Io(#[from] MdioError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Method {
    Bjzz,
    Qmp,
}

impl Method {
    pub const ALL: [Method; 2] = [Method::Bjzz, Method::Qmp];

    pub fn as_str(self) -> &'static str {
        match self {
            Method::Bjzz => "BJZZ",
            Method::Qmp => "QMP",
        }
    }

    pub fn parse(s: &str) -> Option<Method> {
        match s.trim().to_ascii_uppercase().as_str() {
            "BJZZ" => Some(Method::Bjzz),
            "QMP" => Some(Method::Qmp),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Direction {
    Buy,
    Sell,
}

impl Direction {
    pub fn as_str(self) -> &'static str {
        match self {
            Direction::Buy => "buy",
            Direction::Sell => "sell",
        }
    }

    pub fn parse(s: &str) -> Option<Direction> {
        match s.trim() {
            "buy" | "B" | "Buy" => Some(Direction::Buy),
            "sell" | "S" | "Sell" => Some(Direction::Sell),
            _ => None,
        }
    }

    pub fn flipped(self) -> Direction {
        match self {
            Direction::Buy => Direction::Sell,
            Direction::Sell => Direction::Buy,
        }
    }
}

/// A retail-identified trade with an inferred direction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SignedRetailTrade {
    pub trade: TradeRecord,
    pub method: Method,
    pub direction: Direction,
    /// Fractional cent of the print, in [0, 1).
    pub subpenny_fraction: f64,
    /// NBBO the midpoint rule matched against; absent for the fraction rule.
    pub matched_bid: Option<Price4>,
    pub matched_ask: Option<Price4>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct QmpConfig {
    /// Quote-matching lag: the prevailing quote must be at least this many
    /// nanoseconds older than the print.
    pub delay_ns: u64,
    pub band_low: f64,
    pub band_high: f64,
}

impl Default for QmpConfig {
    fn default() -> Self {
        QmpConfig { delay_ns: 0, band_low: 0.4, band_high: 0.6 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BjzzConfig {
    pub buy_low: f64,
    pub sell_high: f64,
}

impl Default for BjzzConfig {
    fn default() -> Self {
        BjzzConfig { buy_low: 0.6, sell_high: 0.4 }
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClassifyConfig {
    pub qmp: QmpConfig,
    pub bjzz: BjzzConfig,
    /// Trade-condition tags to drop before identification. Empty by default.
    pub exclude_conditions: Vec<String>,
}

/// Fractional cent of a price: the third and fourth decimal digits read as a
/// value in [0, 1).
pub fn subpenny_fraction(price: Price4) -> f64 {
    price.subpenny_hundredths() as f64 / 100.0
}

/// The identification gate both methods share.
pub fn retail_identified(trade: &TradeRecord, cfg: &ClassifyConfig) -> bool {
    trade.is_off_exchange()
        && trade.price.subpenny_hundredths() != 0
        && !(!trade.condition.is_empty() && cfg.exclude_conditions.iter().any(|c| c == &trade.condition))
}

#[derive(Debug, Clone, PartialEq)]
pub enum BjzzVerdict {
    Signed(SignedRetailTrade),
    NotRetail,
    /// Identified, but the fraction falls in the excluded middle band.
    ExcludedBand,
}

impl BjzzVerdict {
    pub fn signed(self) -> Option<SignedRetailTrade> {
        match self {
            BjzzVerdict::Signed(t) => Some(t),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum QmpVerdict {
    Signed(SignedRetailTrade),
    NotRetail,
    /// No usable (uncrossed) quote prevails at the print time.
    NoQuote,
    /// Print sits inside the 40–60% band of the spread, inclusive.
    InsideBand,
}

impl QmpVerdict {
    pub fn signed(self) -> Option<SignedRetailTrade> {
        match self {
            QmpVerdict::Signed(t) => Some(t),
            _ => None,
        }
    }
}

pub fn classify_bjzz_verdict(trade: &TradeRecord, cfg: &ClassifyConfig) -> BjzzVerdict {
    if !retail_identified(trade, cfg) {
        return BjzzVerdict::NotRetail;
    }
    let fraction = subpenny_fraction(trade.price);
    let direction = if fraction > cfg.bjzz.buy_low && fraction < 1.0 {
        Direction::Buy
    } else if fraction > 0.0 && fraction < cfg.bjzz.sell_high {
        Direction::Sell
    } else {
        return BjzzVerdict::ExcludedBand;
    };
    BjzzVerdict::Signed(SignedRetailTrade {
        trade: trade.clone(),
        method: Method::Bjzz,
        direction,
        subpenny_fraction: fraction,
        matched_bid: None,
        matched_ask: None,
    })
}

/// Sign by the subpenny-fraction rule. `None` covers both non-retail prints
/// and identified prints inside the excluded band.
pub fn classify_bjzz(trade: &TradeRecord, cfg: &ClassifyConfig) -> Option<SignedRetailTrade> {
    classify_bjzz_verdict(trade, cfg).signed()
}

pub fn classify_qmp_verdict(
    trade: &TradeRecord,
    nbbo: Option<(Price4, Price4)>,
    cfg: &ClassifyConfig,
) -> QmpVerdict {
    if !retail_identified(trade, cfg) {
        return QmpVerdict::NotRetail;
    }
    let Some((bid, ask)) = nbbo else {
        return QmpVerdict::NoQuote;
    };
    if bid >= ask {
        return QmpVerdict::NoQuote;
    }
    let bid_f = bid.0 as f64;
    let ask_f = ask.0 as f64;
    let price_f = trade.price.0 as f64;
    let spread = ask_f - bid_f;
    let band_lo = bid_f + cfg.qmp.band_low * spread;
    let band_hi = bid_f + cfg.qmp.band_high * spread;
    if price_f >= band_lo && price_f <= band_hi {
        return QmpVerdict::InsideBand;
    }
    let twice_mid = bid_f + ask_f;
    let direction = if 2.0 * price_f > twice_mid {
        Direction::Buy
    } else if 2.0 * price_f < twice_mid {
        Direction::Sell
    } else {
        // Exactly at the midpoint; only reachable with a band that does not
        // cover 50% of the spread. Treated as unsigned.
        return QmpVerdict::InsideBand;
    };
    QmpVerdict::Signed(SignedRetailTrade {
        trade: trade.clone(),
        method: Method::Qmp,
        direction,
        subpenny_fraction: subpenny_fraction(trade.price),
        matched_bid: Some(bid),
        matched_ask: Some(ask),
    })
}

/// Sign by the quote-midpoint rule against a prevailing NBBO.
pub fn classify_qmp(
    trade: &TradeRecord,
    nbbo: Option<(Price4, Price4)>,
    cfg: &ClassifyConfig,
) -> Option<SignedRetailTrade> {
    classify_qmp_verdict(trade, nbbo, cfg).signed()
}

// ---------------------------------------------------------------------------
// Quote tape
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy)]
struct TapeQuote {
    ts: u64,
    bid: Price4,
    ask: Price4,
}

/// Per-symbol, per-day time-sorted quotes with an as-of lookup.
///
/// Ties on timestamp resolve to the last record in file order. Lookups are
/// read-only after construction, so the tape is freely shared across threads.
#[derive(Debug, Clone, Default)]
pub struct QuoteTape {
    by_key: HashMap<(String, NaiveDate), Vec<TapeQuote>>,
}

impl QuoteTape {
    pub fn new(quotes: &[QuoteRecord]) -> QuoteTape {
        let mut by_key: HashMap<(String, NaiveDate), Vec<TapeQuote>> = HashMap::new();
        for q in quotes {
            by_key
                .entry((q.symbol.clone(), q.date))
                .or_default()
                .push(TapeQuote { ts: q.ts, bid: q.bid, ask: q.ask });
        }
        for v in by_key.values_mut() {
            v.sort_by_key(|q| q.ts); // stable: file order preserved on ties
        }
        QuoteTape { by_key }
    }

    /// Latest uncrossed quote at least `delay_ns` older than `ts`. Crossed
    /// and locked quotes never prevail; if only such quotes precede the
    /// print, there is no NBBO.
    pub fn prevailing_nbbo(
        &self,
        symbol: &str,
        date: NaiveDate,
        ts: u64,
        delay_ns: u64,
    ) -> Option<(Price4, Price4)> {
        let cutoff = ts.checked_sub(delay_ns)?;
        let quotes = self.by_key.get(&(symbol.to_string(), date))?;
        let end = quotes.partition_point(|q| q.ts <= cutoff);
        quotes[..end]
            .iter()
            .rev()
            .find(|q| q.bid < q.ask)
            .map(|q| (q.bid, q.ask))
    }
}

// ---------------------------------------------------------------------------
// Batch classification
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct SymbolCounts {
    pub trades: u64,
    pub identified: u64,
    pub bjzz_signed: u64,
    pub bjzz_excluded_band: u64,
    pub qmp_signed: u64,
    pub qmp_no_quote: u64,
    pub qmp_inside_band: u64,
}

/// Output of a classification pass: parallel signed streams per method plus
/// per-symbol accounting of identified-but-unsigned prints.
#[derive(Debug, Clone, Default)]
pub struct Classified {
    pub bjzz: BTreeMap<String, Vec<SignedRetailTrade>>,
    pub qmp: BTreeMap<String, Vec<SignedRetailTrade>>,
    pub counts: BTreeMap<String, SymbolCounts>,
}

impl Classified {
    pub fn signed(&self, method: Method) -> &BTreeMap<String, Vec<SignedRetailTrade>> {
        match method {
            Method::Bjzz => &self.bjzz,
            Method::Qmp => &self.qmp,
        }
    }

    pub fn all_signed(&self, method: Method) -> impl Iterator<Item = &SignedRetailTrade> {
        self.signed(method).values().flatten()
    }
}

/// Classify one day's trades under both methods.
///
/// The heavy lifting is [`classify_trades`]; this wrapper enforces the
/// single-date precondition.
pub fn classify_day(
    trades: &[TradeRecord],
    tape: &QuoteTape,
    cfg: &ClassifyConfig,
) -> Result<Classified, ClassifyError> {
    if let Some(first) = trades.first() {
        if trades.iter().any(|t| t.date != first.date) {
            return Err(ClassifyError::MixedDates);
        }
    }
    Ok(classify_trades(trades, tape, cfg))
}

/// Classify a batch of trades under both methods. Work is partitioned by
/// symbol and merged back in symbol order, so output is deterministic for
/// any thread count; within a symbol, trades keep file order.
pub fn classify_trades(trades: &[TradeRecord], tape: &QuoteTape, cfg: &ClassifyConfig) -> Classified {
    let mut by_symbol: BTreeMap<&str, Vec<&TradeRecord>> = BTreeMap::new();
    for t in trades {
        by_symbol.entry(t.symbol.as_str()).or_default().push(t);
    }
    let groups: Vec<(&str, Vec<&TradeRecord>)> = by_symbol.into_iter().collect();
    let results: Vec<(String, Vec<SignedRetailTrade>, Vec<SignedRetailTrade>, SymbolCounts)> = groups
        .into_par_iter()
        .map(|(symbol, trades)| {
            let mut bjzz = Vec::new();
            let mut qmp = Vec::new();
            let mut counts = SymbolCounts::default();
            for trade in trades {
                counts.trades += 1;
                if !retail_identified(trade, cfg) {
                    continue;
                }
                counts.identified += 1;
                match classify_bjzz_verdict(trade, cfg) {
                    BjzzVerdict::Signed(t) => {
                        counts.bjzz_signed += 1;
                        bjzz.push(t);
                    }
                    BjzzVerdict::ExcludedBand => counts.bjzz_excluded_band += 1,
                    BjzzVerdict::NotRetail => unreachable!("gate checked above"),
                }
                let nbbo = tape.prevailing_nbbo(&trade.symbol, trade.date, trade.ts, cfg.qmp.delay_ns);
                match classify_qmp_verdict(trade, nbbo, cfg) {
                    QmpVerdict::Signed(t) => {
                        counts.qmp_signed += 1;
                        qmp.push(t);
                    }
                    QmpVerdict::NoQuote => counts.qmp_no_quote += 1,
                    QmpVerdict::InsideBand => counts.qmp_inside_band += 1,
                    QmpVerdict::NotRetail => unreachable!("gate checked above"),
                }
            }
            (symbol.to_string(), bjzz, qmp, counts)
        })
        .collect();

    let mut out = Classified::default();
    for (symbol, bjzz, qmp, counts) in results {
        out.bjzz.insert(symbol.clone(), bjzz);
        out.qmp.insert(symbol.clone(), qmp);
        out.counts.insert(symbol, counts);
    }
    out
}

// ---------------------------------------------------------------------------
// Signed-trade CSV
// ---------------------------------------------------------------------------

pub const SIGNED_HEADER: [&str; 10] =
    ["symbol", "date", "ts", "price", "size", "method", "direction", "fraction", "bid", "ask"];

pub fn write_signed<'a, W: io::Write>(
    w: W,
    trades: impl Iterator<Item = &'a SignedRetailTrade>,
) -> Result<(), MdioError> {
    let mut wtr = csv::Writer::from_writer(w);
    wtr.write_record(SIGNED_HEADER)?;
    for t in trades {
        wtr.write_record([
            t.trade.symbol.as_str(),
            &t.trade.date.to_string(),
            &t.trade.ts.to_string(),
            &t.trade.price.to_decimal_string(),
            &t.trade.size.to_string(),
            t.method.as_str(),
            t.direction.as_str(),
            &format!("{}", t.subpenny_fraction),
            &t.matched_bid.map(|p| p.to_decimal_string()).unwrap_or_default(),
            &t.matched_ask.map(|p| p.to_decimal_string()).unwrap_or_default(),
        ])?;
    }
    wtr.flush()?;
    Ok(())
}

pub fn read_signed<R: io::Read>(reader: R) -> Result<Vec<SignedRetailTrade>, MdioError> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let mut out = Vec::new();
    let mut rec = csv::StringRecord::new();
    let mut line = 1u64;
    while rdr.read_record(&mut rec)? {
        line += 1;
        let get = |i: usize, what: &str| -> Result<&str, MdioError> {
            rec.get(i).ok_or_else(|| MdioError::MalformedRow { line, msg: format!("missing {what}") })
        };
        let bad = |msg: String| MdioError::MalformedRow { line, msg };
        let opt_price = |s: &str| -> Result<Option<Price4>, MdioError> {
            if s.is_empty() {
                Ok(None)
            } else {
                Price4::parse(s).map(Some).map_err(|e| MdioError::MalformedRow { line, msg: e.to_string() })
            }
        };
        let method = Method::parse(get(5, "method")?).ok_or_else(|| bad("bad method".into()))?;
        let direction = Direction::parse(get(6, "direction")?).ok_or_else(|| bad("bad direction".into()))?;
        out.push(SignedRetailTrade {
            trade: TradeRecord {
                symbol: get(0, "symbol")?.to_string(),
                date: get(1, "date")?.parse().map_err(|_| bad("bad date".into()))?,
                ts: get(2, "ts")?.parse().map_err(|_| bad("bad ts".into()))?,
                price: Price4::parse(get(3, "price")?).map_err(|e| bad(e.to_string()))?,
                size: get(4, "size")?.parse().map_err(|_| bad("bad size".into()))?,
                exchange: 'D',
                condition: String::new(),
            },
            method,
            direction,
            subpenny_fraction: get(7, "fraction")?.parse().map_err(|_| bad("bad fraction".into()))?,
            matched_bid: opt_price(get(8, "bid")?)?,
            matched_ask: opt_price(get(9, "ask")?)?,
        });
    }
    Ok(out)
}
