//! Seeded tick-level market generator.
//!
//! Retail prints go off-exchange at the touch plus or minus a subpenny
//! improvement with the true side recorded; institutional prints go
//! on-exchange, or off-exchange at round pennies. The truth file carries one
//! row per gate-identifiable print (off-exchange, subpenny), so a scenario
//! with no retail flow and no planted institutional subpenny prints has an
//! empty truth file.

use std::collections::HashSet;
use std::io;
use std::path::Path;

use chrono::NaiveDate;
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::classify::Direction;
use crate::mdio::{
    self, DailySecurityRecord, FactorRecord, MdioError, PilotGroup, Price4, QuoteRecord,
    TradeRecord, TradingCalendar,
};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum SpreadMode {
    /// Every quote is exactly one penny wide.
    FixedPenny,
    /// Spread in whole cents, uniform on `lo..=hi`.
    UniformCents { lo: u32, hi: u32 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum SideMode {
    /// Independent coin per trade.
    Random { buy_prob: f64 },
    /// Buy probability leans against the previous week's return.
    Contrarian { intensity: f64 },
}

/// One band of the price-improvement distribution, in ten-thousandths of a
/// dollar off the touch (1..=99 keeps the print inside the quote and off the
/// penny grid).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ImprovementBand {
    pub lo: i64,
    pub hi: i64,
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MarketScenario {
    pub seed: u64,
    pub symbols: usize,
    pub days: usize,
    pub start_date: NaiveDate,
    /// Quote updates per symbol-day.
    pub quotes_per_day: usize,
    /// Max trades per quote interval (uniform 0..=max).
    pub max_trades_per_quote: usize,
    pub spread: SpreadMode,
    /// Probability that a print is retail.
    pub retail_share: f64,
    pub side_mode: SideMode,
    pub improvement: Vec<ImprovementBand>,
    /// Probability that an institutional off-exchange print also gets a
    /// subpenny improvement (plants false positives for the identifiers).
    pub institutional_subpenny_share: f64,
    /// Probability that an institutional print reports off-exchange.
    pub institutional_off_exchange: f64,
    /// Probability of emitting a crossed quote update.
    pub crossed_quote_prob: f64,
    /// First N symbols are tagged tick-pilot group G2.
    pub pilot_g2_symbols: usize,
}

impl Default for MarketScenario {
    fn default() -> Self {
        MarketScenario {
            seed: 1,
            symbols: 10,
            days: 20,
            start_date: NaiveDate::from_ymd_opt(2019, 1, 7).unwrap(),
            quotes_per_day: 26,
            max_trades_per_quote: 3,
            spread: SpreadMode::FixedPenny,
            retail_share: 0.4,
            side_mode: SideMode::Random { buy_prob: 0.5 },
            improvement: vec![ImprovementBand { lo: 10, hi: 30, weight: 1.0 }],
            institutional_subpenny_share: 0.0,
            institutional_off_exchange: 0.3,
            crossed_quote_prob: 0.0,
            pilot_g2_symbols: 0,
        }
    }
}

impl MarketScenario {
    pub fn from_toml(text: &str) -> Result<MarketScenario, toml::de::Error> {
        toml::from_str(text)
    }
}

/// Ground-truth row for a gate-identifiable print.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruthRecord {
    pub trade_id: u64,
    pub symbol: String,
    pub date: NaiveDate,
    pub ts: u64,
    pub true_side: Direction,
    pub is_retail: bool,
}

#[derive(Debug, Clone)]
pub struct MarketOutput {
    pub trades: Vec<TradeRecord>,
    pub quotes: Vec<QuoteRecord>,
    pub truth: Vec<TruthRecord>,
    pub daily: Vec<DailySecurityRecord>,
    pub factors: Vec<FactorRecord>,
    pub calendar: TradingCalendar,
}

const DAY_OPEN_NS: u64 = 34_200_000_000_000; // 09:30
const DAY_CLOSE_NS: u64 = 57_600_000_000_000; // 16:00

fn draw_improvement(rng: &mut ChaCha8Rng, bands: &[ImprovementBand]) -> i64 {
    let total: f64 = bands.iter().map(|b| b.weight).sum();
    let mut pick = rng.random_range(0.0..total);
    for b in bands {
        if pick < b.weight {
            return rng.random_range(b.lo..=b.hi);
        }
        pick -= b.weight;
    }
    let last = bands.last().unwrap();
    rng.random_range(last.lo..=last.hi)
}

/// Generate a full input bundle for the pipeline plus the truth labels.
/// Identical scenarios produce identical outputs; generation is one serial
/// ChaCha8 stream in symbol-major order.
pub fn gen_market(scenario: &MarketScenario) -> MarketOutput {
    assert!(scenario.symbols > 0 && scenario.days > 0);
    for b in &scenario.improvement {
        assert!(b.lo >= 1 && b.hi <= 99 && b.lo <= b.hi, "improvement bands live in 1..=99");
    }
    let calendar = TradingCalendar::synthetic(scenario.start_date, scenario.days);
    let days: Vec<NaiveDate> = calendar.days().to_vec();
    let mut rng = ChaCha8Rng::seed_from_u64(scenario.seed);

    let mut trades = Vec::new();
    let mut quotes = Vec::new();
    let mut truth = Vec::new();
    let mut daily = Vec::new();
    let mut trade_id: u64 = 0;

    for sym_idx in 0..scenario.symbols {
        let symbol = format!("S{sym_idx:03}");
        // Per-symbol statics.
        let mut mid_cents: i64 = rng.random_range(300..8000);
        let shares_outstanding: u64 = rng.random_range(20..500) * 100_000;
        let share_code: u16 = if sym_idx % 2 == 0 { 10 } else { 11 };
        let book_equity: Option<f64> = if sym_idx % 7 == 6 {
            None
        } else {
            Some(mid_cents as f64 / 100.0 * shares_outstanding as f64 * rng.random_range(0.2..1.2))
        };
        let pilot = if sym_idx < scenario.pilot_g2_symbols { PilotGroup::G2 } else { PilotGroup::None };

        let mut closes: Vec<f64> = Vec::with_capacity(days.len());
        let mut month_volume: u64 = 0;
        let mut current_month = None;

        for (day_idx, date) in days.iter().enumerate() {
            let month = mdio::Month::of(*date);
            if current_month != Some(month) {
                current_month = Some(month);
                month_volume = 0;
            }
            // Contrarian side pressure from the previous completed week.
            let buy_prob = match scenario.side_mode {
                SideMode::Random { buy_prob } => buy_prob,
                SideMode::Contrarian { intensity } => {
                    let prior = prior_week_return(&calendar, &closes, day_idx);
                    (0.5 - intensity * prior.map(f64::signum).unwrap_or(0.0)).clamp(0.05, 0.95)
                }
            };

            // Quote times on a jittered grid.
            let interval = (DAY_CLOSE_NS - DAY_OPEN_NS) / scenario.quotes_per_day as u64;
            let mut quote_ts = Vec::with_capacity(scenario.quotes_per_day);
            for k in 0..scenario.quotes_per_day {
                let base = DAY_OPEN_NS + k as u64 * interval;
                quote_ts.push(base + rng.random_range(0..interval / 4));
            }

            let mut used_ts: HashSet<u64> = HashSet::new();
            let mut last_quote: Option<(i64, i64)> = None; // cents
            for k in 0..scenario.quotes_per_day {
                // Midpoint wanders a couple of cents per update.
                mid_cents = (mid_cents + rng.random_range(-2..=2)).max(150);
                let spread_cents = match scenario.spread {
                    SpreadMode::FixedPenny => 1,
                    SpreadMode::UniformCents { lo, hi } => rng.random_range(lo..=hi) as i64,
                };
                let bid_cents = (mid_cents - (spread_cents + 1) / 2).max(1);
                let ask_cents = bid_cents + spread_cents;
                let crossed = scenario.crossed_quote_prob > 0.0
                    && rng.random_bool(scenario.crossed_quote_prob);
                let (qb, qa) = if crossed { (ask_cents, bid_cents) } else { (bid_cents, ask_cents) };
                quotes.push(QuoteRecord {
                    symbol: symbol.clone(),
                    date: *date,
                    ts: quote_ts[k],
                    bid: Price4(qb * 100),
                    ask: Price4(qa * 100),
                    bid_size: rng.random_range(1..=50) * 100,
                    ask_size: rng.random_range(1..=50) * 100,
                });
                if !crossed {
                    last_quote = Some((bid_cents, ask_cents));
                }

                let Some((bid_cents, ask_cents)) = last_quote else {
                    continue;
                };
                let bid = Price4(bid_cents * 100);
                let ask = Price4(ask_cents * 100);
                let next_ts = if k + 1 < scenario.quotes_per_day {
                    DAY_OPEN_NS + (k as u64 + 1) * interval
                } else {
                    DAY_CLOSE_NS
                };
                let gap = next_ts - quote_ts[k];
                let n_trades = rng.random_range(0..=scenario.max_trades_per_quote);
                for _ in 0..n_trades {
                    let mut ts = quote_ts[k] + rng.random_range(1..gap);
                    while used_ts.contains(&ts) {
                        ts = quote_ts[k] + rng.random_range(1..gap);
                    }
                    used_ts.insert(ts);
                    let retail = rng.random_bool(scenario.retail_share.clamp(0.0, 1.0));
                    let (price, size, exchange, side, identifiable) = if retail {
                        let side = if rng.random_bool(buy_prob) { Direction::Buy } else { Direction::Sell };
                        let delta = draw_improvement(&mut rng, &scenario.improvement);
                        let price = match side {
                            Direction::Buy => Price4(ask.0 - delta),
                            Direction::Sell => Price4(bid.0 + delta),
                        };
                        let size = if rng.random_bool(0.3) {
                            rng.random_range(1..=5) * 100
                        } else {
                            rng.random_range(1..200)
                        };
                        (price, size, 'D', side, true)
                    } else {
                        let side = if rng.random_bool(0.5) { Direction::Buy } else { Direction::Sell };
                        let off_exchange = rng.random_bool(scenario.institutional_off_exchange);
                        let subpenny = off_exchange
                            && scenario.institutional_subpenny_share > 0.0
                            && rng.random_bool(scenario.institutional_subpenny_share);
                        let base = match side {
                            Direction::Buy => ask,
                            Direction::Sell => bid,
                        };
                        let price = if subpenny {
                            let delta = draw_improvement(&mut rng, &scenario.improvement);
                            match side {
                                Direction::Buy => Price4(base.0 - delta),
                                Direction::Sell => Price4(bid.0 + delta),
                            }
                        } else {
                            base
                        };
                        let exchange = if off_exchange { 'D' } else if rng.random_bool(0.5) { 'N' } else { 'Q' };
                        (price, rng.random_range(1..=20) * 100, exchange, side, subpenny)
                    };
                    trades.push(TradeRecord {
                        symbol: symbol.clone(),
                        date: *date,
                        ts,
                        price,
                        size,
                        exchange,
                        condition: String::new(),
                    });
                    month_volume += size as u64;
                    if identifiable {
                        truth.push(TruthRecord {
                            trade_id,
                            symbol: symbol.clone(),
                            date: *date,
                            ts,
                            true_side: side,
                            is_retail: retail,
                        });
                    }
                    trade_id += 1;
                }
            }

            let close_cents = mid_cents.max(1);
            closes.push(close_cents as f64 / 100.0);
            let (bid_cents, ask_cents) = last_quote.unwrap_or((close_cents - 1, close_cents + 1));
            daily.push(DailySecurityRecord {
                symbol: symbol.clone(),
                date: *date,
                close: Some(Price4(close_cents * 100)),
                bid: Some(Price4(bid_cents.max(1) * 100)),
                ask: Some(Price4(ask_cents * 100)),
                shares_outstanding,
                share_code,
                book_equity,
                month_volume,
                tick_pilot_group: pilot,
            });
        }
    }

    // Weekly factor rows dated at each week's last trading day.
    let mut factors = Vec::new();
    for w in calendar.week_ids() {
        let days = calendar.week_days(w).unwrap();
        factors.push(FactorRecord {
            date: *days.last().unwrap(),
            mkt_rf: rng.random_range(-0.04..0.04),
            smb: rng.random_range(-0.02..0.02),
            hml: rng.random_range(-0.02..0.02),
            rf: 0.0005,
        });
    }

    // File order: by (symbol, date, ts) from the generation loops; re-sort by
    // (date, ts, symbol) so the tape reads like a consolidated feed.
    trades.sort_by(|a, b| (a.date, a.ts, a.symbol.clone()).cmp(&(b.date, b.ts, b.symbol.clone())));
    quotes.sort_by(|a, b| (a.date, a.ts, a.symbol.clone()).cmp(&(b.date, b.ts, b.symbol.clone())));
    truth.sort_by(|a, b| (a.date, a.ts, a.symbol.clone()).cmp(&(b.date, b.ts, b.symbol.clone())));
    daily.sort_by(|a, b| (a.date, a.symbol.clone()).cmp(&(b.date, b.symbol.clone())));

    MarketOutput { trades, quotes, truth, daily, factors, calendar }
}

fn prior_week_return(calendar: &TradingCalendar, closes: &[f64], day_idx: usize) -> Option<f64> {
    let today = calendar.day_at(day_idx)?;
    let week = calendar.week_of(today)?;
    let prev_days = calendar.week_days(week.offset(-1))?;
    let prev2_days = calendar.week_days(week.offset(-2))?;
    let end1 = calendar.day_index(*prev_days.last()?)?;
    let end2 = calendar.day_index(*prev2_days.last()?)?;
    if end1 < closes.len() && end2 < closes.len() {
        Some(closes[end1] / closes[end2] - 1.0)
    } else {
        None
    }
}

// ---------------------------------------------------------------------------
// Truth CSV
// ---------------------------------------------------------------------------

pub fn write_truth<W: io::Write>(w: W, truth: &[TruthRecord]) -> Result<(), MdioError> {
    let mut wtr = csv::Writer::from_writer(w);
    wtr.write_record(["trade_id", "symbol", "date", "ts", "true_side", "is_retail"])?;
    for t in truth {
        wtr.write_record([
            t.trade_id.to_string(),
            t.symbol.clone(),
            t.date.to_string(),
            t.ts.to_string(),
            t.true_side.as_str().to_string(),
            (t.is_retail as u8).to_string(),
        ])?;
    }
    wtr.flush()?;
    Ok(())
}

pub fn read_truth<R: io::Read>(reader: R) -> Result<Vec<TruthRecord>, MdioError> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let mut out = Vec::new();
    let mut rec = csv::StringRecord::new();
    let mut line = 1u64;
    while rdr.read_record(&mut rec)? {
        line += 1;
        let bad = |msg: &str| MdioError::MalformedRow { line, msg: msg.into() };
        out.push(TruthRecord {
            trade_id: rec.get(0).and_then(|s| s.parse().ok()).ok_or_else(|| bad("bad trade_id"))?,
            symbol: rec.get(1).ok_or_else(|| bad("missing symbol"))?.to_string(),
            date: rec.get(2).and_then(|s| s.parse().ok()).ok_or_else(|| bad("bad date"))?,
            ts: rec.get(3).and_then(|s| s.parse().ok()).ok_or_else(|| bad("bad ts"))?,
            true_side: rec.get(4).and_then(Direction::parse).ok_or_else(|| bad("bad side"))?,
            is_retail: rec.get(5).map(|s| s == "1").ok_or_else(|| bad("bad is_retail"))?,
        });
    }
    Ok(out)
}

impl MarketOutput {
    /// Write the whole bundle into a directory: trades.csv, quotes.csv,
    /// truth.csv, daily.csv, factors.csv, calendar.csv.
    pub fn write_all(&self, dir: &Path) -> Result<(), MdioError> {
        std::fs::create_dir_all(dir)?;
        mdio::write_trades(std::fs::File::create(dir.join("trades.csv"))?, &self.trades)?;
        mdio::write_quotes(std::fs::File::create(dir.join("quotes.csv"))?, &self.quotes)?;
        write_truth(std::fs::File::create(dir.join("truth.csv"))?, &self.truth)?;
        mdio::write_daily(std::fs::File::create(dir.join("daily.csv"))?, &self.daily)?;
        mdio::write_factors(std::fs::File::create(dir.join("factors.csv"))?, &self.factors)?;
        self.calendar.write_csv(std::fs::File::create(dir.join("calendar.csv"))?)?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::classify::{classify_trades, ClassifyConfig, QuoteTape};

    #[test]
    fn generation_is_deterministic() {
        let scenario = MarketScenario { symbols: 3, days: 3, ..Default::default() };
        let a = gen_market(&scenario);
        let b = gen_market(&scenario);
        assert_eq!(a.trades, b.trades);
        assert_eq!(a.quotes, b.quotes);
        assert_eq!(a.truth, b.truth);
        assert_eq!(a.daily, b.daily);
    }

    #[test]
    fn zero_retail_share_yields_empty_truth() {
        let scenario = MarketScenario { symbols: 3, days: 2, retail_share: 0.0, ..Default::default() };
        let out = gen_market(&scenario);
        assert!(out.truth.is_empty());
        assert!(!out.trades.is_empty());
    }

    #[test]
    fn trade_keys_are_unique() {
        let scenario = MarketScenario { symbols: 4, days: 3, seed: 9, ..Default::default() };
        let out = gen_market(&scenario);
        let mut keys: Vec<(&str, NaiveDate, u64)> =
            out.trades.iter().map(|t| (t.symbol.as_str(), t.date, t.ts)).collect();
        let n = keys.len();
        keys.sort();
        keys.dedup();
        assert_eq!(keys.len(), n);
    }

    #[test]
    fn penny_scenario_signs_all_planted_retail() {
        let scenario = MarketScenario { symbols: 5, days: 5, seed: 42, ..Default::default() };
        let out = gen_market(&scenario);
        let tape = QuoteTape::new(&out.quotes);
        let classified = classify_trades(&out.trades, &tape, &ClassifyConfig::default());
        let report = crate::synth::confusion(&out.truth, classified.bjzz.values().flatten()).unwrap();
        assert_eq!(report.identification_rate, 1.0);
        assert_eq!(report.sign_accuracy, 1.0);
    }
}
