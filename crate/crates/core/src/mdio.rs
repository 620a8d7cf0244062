//! Input parsing, domain records, trading calendar, and universe filters.
//!
//! All prices travel as [`Price4`], an integer count of ten-thousandths of a
//! dollar. The retail-identification rules live on the third and fourth
//! decimal digits, which binary floating point cannot carry exactly, so the
//! fixed-point form is kept end to end and only converted to `f64` where a
//! statistic genuinely needs a real number.
//!
//! Input files are headered CSV. Column names are mapped through small schema
//! structs so the pipeline stays agnostic about where the data came from; the
//! default schemas are documented in the README.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::io;

use chrono::{Datelike, NaiveDate};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const NANOS_PER_DAY: u64 = 86_400_000_000_000;

/// Window of months during which tick-pilot test-group stocks are excluded.
pub const TICK_PILOT_START: Month = Month { year: 2016, month: 10 };
pub const TICK_PILOT_END: Month = Month { year: 2018, month: 10 };

#[derive(Debug, Error)]
pub enum MdioError {
    #[error("line {line}: {msg}")]
    MalformedRow { line: u64, msg: String },
    #[error("line {line}: price {value:?} has more than four decimal places")]
    PrecisionExceeded { line: u64, value: String },
    #[error("missing column {0:?} in header")]
    MissingColumn(String),
    #[error("no date column mapped and no default date configured")]
    MissingDate,
    #[error("calendar: {0}")]
    Calendar(String),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("io: {0}")]
    Io(#[from] io::Error),
}

// ---------------------------------------------------------------------------
// Fixed-point price
// ---------------------------------------------------------------------------

/// A price in integer ten-thousandths of a dollar.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Price4(pub i64);

impl Price4 {
    pub const SCALE: i64 = 10_000;

    pub fn from_dollars_int(d: i64) -> Price4 {
        Price4(d * Self::SCALE)
    }

    /// Parse a decimal string exactly. More than four fractional digits is an
    /// error even when the extra digits are zero: the contract is four.
    pub fn parse(s: &str) -> Result<Price4, PriceParseError> {
        let t = s.trim();
        let (neg, t) = match t.strip_prefix('-') {
            Some(rest) => (true, rest),
            None => (false, t),
        };
        if t.is_empty() {
            return Err(PriceParseError::Empty);
        }
        let (int_part, frac_part) = match t.split_once('.') {
            Some((i, f)) => (i, f),
            None => (t, ""),
        };
        if int_part.is_empty() && frac_part.is_empty() {
            return Err(PriceParseError::Malformed);
        }
        if frac_part.len() > 4 {
            return Err(PriceParseError::TooManyDecimals);
        }
        if !int_part.chars().all(|c| c.is_ascii_digit())
            || !frac_part.chars().all(|c| c.is_ascii_digit())
        {
            return Err(PriceParseError::Malformed);
        }
        let int_val: i64 = if int_part.is_empty() {
            0
        } else {
            int_part.parse().map_err(|_| PriceParseError::Malformed)?
        };
        let mut frac_val: i64 = 0;
        for c in frac_part.chars() {
            frac_val = frac_val * 10 + (c as u8 - b'0') as i64;
        }
        for _ in frac_part.len()..4 {
            frac_val *= 10;
        }
        let raw = int_val
            .checked_mul(Price4::SCALE)
            .and_then(|v| v.checked_add(frac_val))
            .ok_or(PriceParseError::Malformed)?;
        Ok(Price4(if neg { -raw } else { raw }))
    }

    /// Canonical four-decimal rendering; re-parsing it is bit exact.
    pub fn to_decimal_string(self) -> String {
        let sign = if self.0 < 0 { "-" } else { "" };
        let abs = self.0.unsigned_abs();
        format!("{}{}.{:04}", sign, abs / 10_000, abs % 10_000)
    }

    pub fn dollars(self) -> f64 {
        self.0 as f64 / Self::SCALE as f64
    }

    /// Ten-thousandths within the current cent, i.e. the subpenny digits as an
    /// integer in `0..100`.
    pub fn subpenny_hundredths(self) -> i64 {
        self.0.rem_euclid(100)
    }
}

impl fmt::Display for Price4 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_decimal_string())
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum PriceParseError {
    #[error("empty price field")]
    Empty,
    #[error("unparseable price")]
    Malformed,
    #[error("more than four decimal places")]
    TooManyDecimals,
}

// ---------------------------------------------------------------------------
// Months and weeks
// ---------------------------------------------------------------------------

/// A calendar month, ordered.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Month {
    pub year: i32,
    pub month: u32,
}

impl Month {
    pub fn of(date: NaiveDate) -> Month {
        Month { year: date.year(), month: date.month() }
    }

    pub fn index(self) -> i64 {
        self.year as i64 * 12 + self.month as i64 - 1
    }

    pub fn from_index(idx: i64) -> Month {
        Month { year: idx.div_euclid(12) as i32, month: (idx.rem_euclid(12) + 1) as u32 }
    }

    pub fn prev(self) -> Month {
        self.minus(1)
    }

    pub fn minus(self, k: i64) -> Month {
        Month::from_index(self.index() - k)
    }

    pub fn contains(self, date: NaiveDate) -> bool {
        Month::of(date) == self
    }
}

impl fmt::Display for Month {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:04}-{:02}", self.year, self.month)
    }
}

/// Index of a trading week in the calendar. Ids are contiguous integers.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct WeekId(pub i64);

impl WeekId {
    pub fn offset(self, k: i64) -> WeekId {
        WeekId(self.0 + k)
    }
}

impl fmt::Display for WeekId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

// ---------------------------------------------------------------------------
// Records
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TradeRecord {
    pub symbol: String,
    pub date: NaiveDate,
    /// Nanoseconds since midnight, exchange-local.
    pub ts: u64,
    pub price: Price4,
    pub size: u32,
    pub exchange: char,
    /// Optional trade-condition tag, empty when the feed has none.
    pub condition: String,
}

impl TradeRecord {
    pub fn is_off_exchange(&self) -> bool {
        self.exchange == 'D'
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QuoteRecord {
    pub symbol: String,
    pub date: NaiveDate,
    pub ts: u64,
    pub bid: Price4,
    pub ask: Price4,
    pub bid_size: u32,
    pub ask_size: u32,
}

impl QuoteRecord {
    /// Locked (bid == ask) and crossed (bid > ask) quotes are kept in the
    /// tape but flagged; the midpoint rule refuses to use them.
    pub fn is_crossed_or_locked(&self) -> bool {
        self.bid >= self.ask
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PilotGroup {
    None,
    G1,
    G2,
    G3,
}

impl PilotGroup {
    pub fn parse(s: &str) -> Option<PilotGroup> {
        match s.trim() {
            "" | "none" | "NONE" | "None" => Some(PilotGroup::None),
            "G1" | "g1" => Some(PilotGroup::G1),
            "G2" | "g2" => Some(PilotGroup::G2),
            "G3" | "g3" => Some(PilotGroup::G3),
            _ => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            PilotGroup::None => "none",
            PilotGroup::G1 => "G1",
            PilotGroup::G2 => "G2",
            PilotGroup::G3 => "G3",
        }
    }

    /// Test groups G2 and G3 moved to a wider tick and are dropped from the
    /// universe while the pilot ran.
    pub fn is_excluded_group(self) -> bool {
        matches!(self, PilotGroup::G2 | PilotGroup::G3)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DailySecurityRecord {
    pub symbol: String,
    pub date: NaiveDate,
    pub close: Option<Price4>,
    pub bid: Option<Price4>,
    pub ask: Option<Price4>,
    pub shares_outstanding: u64,
    pub share_code: u16,
    /// Book equity in dollars; absent for many firms.
    pub book_equity: Option<f64>,
    /// Share volume for the month to date; the month-end row carries the
    /// month's total.
    pub month_volume: u64,
    pub tick_pilot_group: PilotGroup,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FactorRecord {
    pub date: NaiveDate,
    pub mkt_rf: f64,
    pub smb: f64,
    pub hml: f64,
    pub rf: f64,
}

// ---------------------------------------------------------------------------
// Schemas
// ---------------------------------------------------------------------------

/// Column mapping for the trades file. `date` names a per-row date column;
/// when the header lacks it, `default_date` stamps every row.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TradeSchema {
    pub symbol: String,
    pub ts: String,
    pub price: String,
    pub size: String,
    pub ex: String,
    pub date: String,
    pub cond: String,
    pub default_date: Option<NaiveDate>,
}

impl Default for TradeSchema {
    fn default() -> Self {
        TradeSchema {
            symbol: "symbol".into(),
            ts: "ts".into(),
            price: "price".into(),
            size: "size".into(),
            ex: "ex".into(),
            date: "date".into(),
            cond: "cond".into(),
            default_date: None,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct QuoteSchema {
    pub symbol: String,
    pub ts: String,
    pub bid: String,
    pub ask: String,
    pub bsz: String,
    pub asz: String,
    pub date: String,
    pub default_date: Option<NaiveDate>,
}

impl Default for QuoteSchema {
    fn default() -> Self {
        QuoteSchema {
            symbol: "symbol".into(),
            ts: "ts".into(),
            bid: "bid".into(),
            ask: "ask".into(),
            bsz: "bsz".into(),
            asz: "asz".into(),
            date: "date".into(),
            default_date: None,
        }
    }
}

struct HeaderMap {
    positions: HashMap<String, usize>,
}

impl HeaderMap {
    fn new(headers: &csv::StringRecord) -> HeaderMap {
        let positions = headers
            .iter()
            .enumerate()
            .map(|(i, h)| (h.trim().to_string(), i))
            .collect();
        HeaderMap { positions }
    }

    fn require(&self, name: &str) -> Result<usize, MdioError> {
        self.positions
            .get(name)
            .copied()
            .ok_or_else(|| MdioError::MissingColumn(name.to_string()))
    }

    fn optional(&self, name: &str) -> Option<usize> {
        self.positions.get(name).copied()
    }
}

fn field<'r>(rec: &'r csv::StringRecord, idx: usize, line: u64, what: &str) -> Result<&'r str, MdioError> {
    rec.get(idx).ok_or_else(|| MdioError::MalformedRow {
        line,
        msg: format!("missing {what} field"),
    })
}

fn parse_num<T: std::str::FromStr>(s: &str, line: u64, what: &str) -> Result<T, MdioError> {
    s.trim().parse().map_err(|_| MdioError::MalformedRow {
        line,
        msg: format!("bad {what}: {s:?}"),
    })
}

fn parse_date(s: &str, line: u64) -> Result<NaiveDate, MdioError> {
    NaiveDate::parse_from_str(s.trim(), "%Y-%m-%d").map_err(|_| MdioError::MalformedRow {
        line,
        msg: format!("bad date: {s:?}"),
    })
}

fn parse_price(s: &str, line: u64) -> Result<Price4, MdioError> {
    Price4::parse(s).map_err(|e| match e {
        PriceParseError::TooManyDecimals => MdioError::PrecisionExceeded { line, value: s.to_string() },
        other => MdioError::MalformedRow { line, msg: format!("bad price {s:?}: {other}") },
    })
}

// ---------------------------------------------------------------------------
// Parsers
// ---------------------------------------------------------------------------

/// Parse a trades CSV stream in file order.
pub fn parse_trades<R: io::Read>(reader: R, schema: &TradeSchema) -> Result<Vec<TradeRecord>, MdioError> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).flexible(true).from_reader(reader);
    let headers = rdr.headers()?.clone();
    if headers.is_empty() || (headers.len() == 1 && headers[0].is_empty()) {
        return Ok(Vec::new());
    }
    let map = HeaderMap::new(&headers);
    let c_sym = map.require(&schema.symbol)?;
    let c_ts = map.require(&schema.ts)?;
    let c_price = map.require(&schema.price)?;
    let c_size = map.require(&schema.size)?;
    let c_ex = map.require(&schema.ex)?;
    let c_date = map.optional(&schema.date);
    let c_cond = map.optional(&schema.cond);
    if c_date.is_none() && schema.default_date.is_none() {
        return Err(MdioError::MissingDate);
    }

    let mut out = Vec::new();
    let mut rec = csv::StringRecord::new();
    let mut line = 1u64;
    while rdr.read_record(&mut rec)? {
        line += 1;
        let symbol = field(&rec, c_sym, line, "symbol")?.trim().to_string();
        let date = match c_date {
            Some(i) => parse_date(field(&rec, i, line, "date")?, line)?,
            None => schema.default_date.unwrap(),
        };
        let ts: u64 = parse_num(field(&rec, c_ts, line, "ts")?, line, "timestamp")?;
        let price = parse_price(field(&rec, c_price, line, "price")?, line)?;
        let size: u32 = parse_num(field(&rec, c_size, line, "size")?, line, "size")?;
        let ex_str = field(&rec, c_ex, line, "ex")?.trim();
        let exchange = ex_str.chars().next().ok_or(MdioError::MalformedRow {
            line,
            msg: "empty exchange code".into(),
        })?;
        let condition = match c_cond {
            Some(i) => rec.get(i).unwrap_or("").trim().to_string(),
            None => String::new(),
        };
        if price.0 <= 0 {
            return Err(MdioError::MalformedRow { line, msg: format!("nonpositive price {price}") });
        }
        if size == 0 {
            return Err(MdioError::MalformedRow { line, msg: "zero size".into() });
        }
        if ts >= NANOS_PER_DAY {
            return Err(MdioError::MalformedRow { line, msg: format!("timestamp {ts} outside the trading day") });
        }
        out.push(TradeRecord { symbol, date, ts, price, size, exchange, condition });
    }
    Ok(out)
}

/// Parse a quotes CSV stream. Locked and crossed quotes are kept.
pub fn parse_quotes<R: io::Read>(reader: R, schema: &QuoteSchema) -> Result<Vec<QuoteRecord>, MdioError> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).flexible(true).from_reader(reader);
    let headers = rdr.headers()?.clone();
    if headers.is_empty() || (headers.len() == 1 && headers[0].is_empty()) {
        return Ok(Vec::new());
    }
    let map = HeaderMap::new(&headers);
    let c_sym = map.require(&schema.symbol)?;
    let c_ts = map.require(&schema.ts)?;
    let c_bid = map.require(&schema.bid)?;
    let c_ask = map.require(&schema.ask)?;
    let c_bsz = map.require(&schema.bsz)?;
    let c_asz = map.require(&schema.asz)?;
    let c_date = map.optional(&schema.date);
    if c_date.is_none() && schema.default_date.is_none() {
        return Err(MdioError::MissingDate);
    }

    let mut out = Vec::new();
    let mut rec = csv::StringRecord::new();
    let mut line = 1u64;
    while rdr.read_record(&mut rec)? {
        line += 1;
        let symbol = field(&rec, c_sym, line, "symbol")?.trim().to_string();
        let date = match c_date {
            Some(i) => parse_date(field(&rec, i, line, "date")?, line)?,
            None => schema.default_date.unwrap(),
        };
        let ts: u64 = parse_num(field(&rec, c_ts, line, "ts")?, line, "timestamp")?;
        let bid = parse_price(field(&rec, c_bid, line, "bid")?, line)?;
        let ask = parse_price(field(&rec, c_ask, line, "ask")?, line)?;
        let bid_size: u32 = parse_num(field(&rec, c_bsz, line, "bsz")?, line, "bid size")?;
        let ask_size: u32 = parse_num(field(&rec, c_asz, line, "asz")?, line, "ask size")?;
        if bid.0 <= 0 || ask.0 <= 0 {
            return Err(MdioError::MalformedRow { line, msg: "nonpositive quote".into() });
        }
        if ts >= NANOS_PER_DAY {
            return Err(MdioError::MalformedRow { line, msg: format!("timestamp {ts} outside the trading day") });
        }
        out.push(QuoteRecord { symbol, date, ts, bid, ask, bid_size, ask_size });
    }
    Ok(out)
}

/// Serialize trades in the documented schema (with a date column).
pub fn write_trades<W: io::Write>(w: W, trades: &[TradeRecord]) -> Result<(), MdioError> {
    let mut wtr = csv::Writer::from_writer(w);
    wtr.write_record(["symbol", "date", "ts", "price", "size", "ex", "cond"])?;
    for t in trades {
        wtr.write_record([
            t.symbol.as_str(),
            &t.date.to_string(),
            &t.ts.to_string(),
            &t.price.to_decimal_string(),
            &t.size.to_string(),
            &t.exchange.to_string(),
            &t.condition,
        ])?;
    }
    wtr.flush()?;
    Ok(())
}

pub fn write_quotes<W: io::Write>(w: W, quotes: &[QuoteRecord]) -> Result<(), MdioError> {
    let mut wtr = csv::Writer::from_writer(w);
    wtr.write_record(["symbol", "date", "ts", "bid", "ask", "bsz", "asz"])?;
    for q in quotes {
        wtr.write_record([
            q.symbol.as_str(),
            &q.date.to_string(),
            &q.ts.to_string(),
            &q.bid.to_decimal_string(),
            &q.ask.to_decimal_string(),
            &q.bid_size.to_string(),
            &q.ask_size.to_string(),
        ])?;
    }
    wtr.flush()?;
    Ok(())
}

/// Parse the daily security file:
/// `symbol,date,close,bid,ask,shrout,shrcd,be,vol,pilot`.
pub fn parse_daily<R: io::Read>(reader: R) -> Result<Vec<DailySecurityRecord>, MdioError> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let headers = rdr.headers()?.clone();
    let map = HeaderMap::new(&headers);
    let c_sym = map.require("symbol")?;
    let c_date = map.require("date")?;
    let c_close = map.require("close")?;
    let c_bid = map.require("bid")?;
    let c_ask = map.require("ask")?;
    let c_shrout = map.require("shrout")?;
    let c_shrcd = map.require("shrcd")?;
    let c_be = map.require("be")?;
    let c_vol = map.require("vol")?;
    let c_pilot = map.require("pilot")?;

    let mut out = Vec::new();
    let mut rec = csv::StringRecord::new();
    let mut line = 1u64;
    while rdr.read_record(&mut rec)? {
        line += 1;
        let opt_price = |s: &str, line: u64| -> Result<Option<Price4>, MdioError> {
            if s.trim().is_empty() { Ok(None) } else { parse_price(s, line).map(Some) }
        };
        let close = opt_price(field(&rec, c_close, line, "close")?, line)?;
        if let Some(c) = close {
            if c.0 <= 0 {
                return Err(MdioError::MalformedRow { line, msg: format!("nonpositive close {c}") });
            }
        }
        let be_str = field(&rec, c_be, line, "be")?.trim();
        let book_equity = if be_str.is_empty() { None } else { Some(parse_num::<f64>(be_str, line, "book equity")?) };
        let pilot_str = field(&rec, c_pilot, line, "pilot")?;
        let tick_pilot_group = PilotGroup::parse(pilot_str).ok_or_else(|| MdioError::MalformedRow {
            line,
            msg: format!("bad pilot group {pilot_str:?}"),
        })?;
        out.push(DailySecurityRecord {
            symbol: field(&rec, c_sym, line, "symbol")?.trim().to_string(),
            date: parse_date(field(&rec, c_date, line, "date")?, line)?,
            close,
            bid: opt_price(field(&rec, c_bid, line, "bid")?, line)?,
            ask: opt_price(field(&rec, c_ask, line, "ask")?, line)?,
            shares_outstanding: parse_num(field(&rec, c_shrout, line, "shrout")?, line, "shares outstanding")?,
            share_code: parse_num(field(&rec, c_shrcd, line, "shrcd")?, line, "share code")?,
            book_equity,
            month_volume: parse_num(field(&rec, c_vol, line, "vol")?, line, "volume")?,
            tick_pilot_group,
        });
    }
    Ok(out)
}

pub fn write_daily<W: io::Write>(w: W, rows: &[DailySecurityRecord]) -> Result<(), MdioError> {
    let mut wtr = csv::Writer::from_writer(w);
    wtr.write_record(["symbol", "date", "close", "bid", "ask", "shrout", "shrcd", "be", "vol", "pilot"])?;
    let opt = |p: Option<Price4>| p.map(|v| v.to_decimal_string()).unwrap_or_default();
    for r in rows {
        wtr.write_record([
            r.symbol.as_str(),
            &r.date.to_string(),
            &opt(r.close),
            &opt(r.bid),
            &opt(r.ask),
            &r.shares_outstanding.to_string(),
            &r.share_code.to_string(),
            &r.book_equity.map(|v| format!("{v}")).unwrap_or_default(),
            &r.month_volume.to_string(),
            r.tick_pilot_group.as_str(),
        ])?;
    }
    wtr.flush()?;
    Ok(())
}

/// Parse the factor file: `date,mkt_rf,smb,hml,rf`. Dates must strictly
/// increase.
pub fn parse_factors<R: io::Read>(reader: R) -> Result<Vec<FactorRecord>, MdioError> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let headers = rdr.headers()?.clone();
    let map = HeaderMap::new(&headers);
    let c_date = map.require("date")?;
    let c_mkt = map.require("mkt_rf")?;
    let c_smb = map.require("smb")?;
    let c_hml = map.require("hml")?;
    let c_rf = map.require("rf")?;

    let mut out: Vec<FactorRecord> = Vec::new();
    let mut rec = csv::StringRecord::new();
    let mut line = 1u64;
    while rdr.read_record(&mut rec)? {
        line += 1;
        let row = FactorRecord {
            date: parse_date(field(&rec, c_date, line, "date")?, line)?,
            mkt_rf: parse_num(field(&rec, c_mkt, line, "mkt_rf")?, line, "mkt_rf")?,
            smb: parse_num(field(&rec, c_smb, line, "smb")?, line, "smb")?,
            hml: parse_num(field(&rec, c_hml, line, "hml")?, line, "hml")?,
            rf: parse_num(field(&rec, c_rf, line, "rf")?, line, "rf")?,
        };
        if let Some(last) = out.last() {
            if row.date <= last.date {
                return Err(MdioError::MalformedRow {
                    line,
                    msg: format!("factor dates not strictly increasing at {}", row.date),
                });
            }
        }
        out.push(row);
    }
    Ok(out)
}

pub fn write_factors<W: io::Write>(w: W, rows: &[FactorRecord]) -> Result<(), MdioError> {
    let mut wtr = csv::Writer::from_writer(w);
    wtr.write_record(["date", "mkt_rf", "smb", "hml", "rf"])?;
    for r in rows {
        wtr.write_record([
            r.date.to_string(),
            format!("{}", r.mkt_rf),
            format!("{}", r.smb),
            format!("{}", r.hml),
            format!("{}", r.rf),
        ])?;
    }
    wtr.flush()?;
    Ok(())
}

// ---------------------------------------------------------------------------
// Trading calendar
// ---------------------------------------------------------------------------

/// Ordered trading days with a total date → week assignment.
///
/// Week ids are required to be contiguous so week arithmetic (lags, horizons)
/// is plain integer offsetting. Each week holds one to five days.
#[derive(Debug, Clone)]
pub struct TradingCalendar {
    days: Vec<NaiveDate>,
    week_ids: Vec<WeekId>,
    day_index: HashMap<NaiveDate, usize>,
    weeks: BTreeMap<WeekId, (usize, usize)>, // day-index range [start, end)
    month_ends: BTreeMap<Month, NaiveDate>,
}

impl TradingCalendar {
    pub fn new(entries: Vec<(NaiveDate, WeekId)>) -> Result<TradingCalendar, MdioError> {
        if entries.is_empty() {
            return Err(MdioError::Calendar("empty calendar".into()));
        }
        let mut days = Vec::with_capacity(entries.len());
        let mut week_ids = Vec::with_capacity(entries.len());
        let mut weeks: BTreeMap<WeekId, (usize, usize)> = BTreeMap::new();
        let mut prev_day: Option<NaiveDate> = None;
        let mut prev_week: Option<WeekId> = None;
        for (i, (date, week)) in entries.iter().copied().enumerate() {
            if let Some(p) = prev_day {
                if date <= p {
                    return Err(MdioError::Calendar(format!("dates not strictly increasing at {date}")));
                }
            }
            match prev_week {
                None => {
                    weeks.insert(week, (i, i + 1));
                }
                Some(pw) if week == pw => {
                    weeks.get_mut(&week).unwrap().1 = i + 1;
                }
                Some(pw) if week == pw.offset(1) => {
                    weeks.insert(week, (i, i + 1));
                }
                Some(pw) => {
                    return Err(MdioError::Calendar(format!(
                        "week ids must be contiguous and nondecreasing: {} after {}",
                        week.0, pw.0
                    )));
                }
            }
            prev_day = Some(date);
            prev_week = Some(week);
            days.push(date);
            week_ids.push(week);
        }
        for (w, (s, e)) in &weeks {
            if e - s > 5 {
                return Err(MdioError::Calendar(format!("week {} has {} days", w.0, e - s)));
            }
        }
        let day_index = days.iter().copied().enumerate().map(|(i, d)| (d, i)).collect();
        let mut month_ends: BTreeMap<Month, NaiveDate> = BTreeMap::new();
        for d in &days {
            month_ends.insert(Month::of(*d), *d); // last write wins: ascending order
        }
        Ok(TradingCalendar { days, week_ids, day_index, weeks, month_ends })
    }

    pub fn from_csv<R: io::Read>(reader: R) -> Result<TradingCalendar, MdioError> {
        let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
        let headers = rdr.headers()?.clone();
        let map = HeaderMap::new(&headers);
        let c_date = map.require("date")?;
        let c_week = map.require("week_id")?;
        let mut entries = Vec::new();
        let mut rec = csv::StringRecord::new();
        let mut line = 1u64;
        while rdr.read_record(&mut rec)? {
            line += 1;
            let date = parse_date(field(&rec, c_date, line, "date")?, line)?;
            let week: i64 = parse_num(field(&rec, c_week, line, "week_id")?, line, "week id")?;
            entries.push((date, WeekId(week)));
        }
        TradingCalendar::new(entries)
    }

    pub fn write_csv<W: io::Write>(&self, w: W) -> Result<(), MdioError> {
        let mut wtr = csv::Writer::from_writer(w);
        wtr.write_record(["date", "week_id"])?;
        for (d, wk) in self.days.iter().zip(&self.week_ids) {
            wtr.write_record([d.to_string(), wk.0.to_string()])?;
        }
        wtr.flush()?;
        Ok(())
    }

    pub fn days(&self) -> &[NaiveDate] {
        &self.days
    }

    pub fn week_of(&self, date: NaiveDate) -> Option<WeekId> {
        self.day_index.get(&date).map(|&i| self.week_ids[i])
    }

    pub fn day_index(&self, date: NaiveDate) -> Option<usize> {
        self.day_index.get(&date).copied()
    }

    pub fn day_at(&self, idx: usize) -> Option<NaiveDate> {
        self.days.get(idx).copied()
    }

    pub fn week_ids(&self) -> impl Iterator<Item = WeekId> + '_ {
        self.weeks.keys().copied()
    }

    pub fn first_week(&self) -> WeekId {
        *self.weeks.keys().next().unwrap()
    }

    pub fn last_week(&self) -> WeekId {
        *self.weeks.keys().next_back().unwrap()
    }

    pub fn week_days(&self, week: WeekId) -> Option<&[NaiveDate]> {
        self.weeks.get(&week).map(|&(s, e)| &self.days[s..e])
    }

    /// Month a week belongs to for eligibility and control alignment: the
    /// month of its first trading day, so month-end data from the prior month
    /// always predates the whole week.
    pub fn month_of_week(&self, week: WeekId) -> Option<Month> {
        self.week_days(week).map(|d| Month::of(d[0]))
    }

    /// Last trading day at or before the end of `month`, if the calendar
    /// covers it.
    pub fn month_end(&self, month: Month) -> Option<NaiveDate> {
        self.month_ends.get(&month).copied()
    }

    pub fn months(&self) -> impl Iterator<Item = Month> + '_ {
        self.month_ends.keys().copied()
    }

    /// Synthetic Monday–Friday calendar used by generators and tests. ISO
    /// weeks are renumbered into a dense 0-based id sequence.
    pub fn synthetic(start: NaiveDate, trading_days: usize) -> TradingCalendar {
        let mut weekdays: Vec<NaiveDate> = Vec::with_capacity(trading_days);
        let mut d = start;
        while weekdays.len() < trading_days {
            if d.weekday().num_days_from_monday() < 5 {
                weekdays.push(d);
            }
            d = d.succ_opt().unwrap();
        }
        let mut out = Vec::with_capacity(weekdays.len());
        let mut next_id: i64 = 0;
        let mut prev: Option<chrono::IsoWeek> = None;
        for d in weekdays {
            let wk = d.iso_week();
            match prev {
                None => prev = Some(wk),
                Some(p) if p == wk => {}
                Some(_) => {
                    next_id += 1;
                    prev = Some(wk);
                }
            }
            out.push((d, WeekId(next_id)));
        }
        TradingCalendar::new(out).expect("synthetic calendar is valid")
    }
}

// ---------------------------------------------------------------------------
// Security master and universe filters
// ---------------------------------------------------------------------------

/// Daily security records indexed for month-end lookups.
#[derive(Debug, Clone, Default)]
pub struct SecurityMaster {
    by_symbol: BTreeMap<String, BTreeMap<NaiveDate, DailySecurityRecord>>,
}

impl SecurityMaster {
    pub fn new(records: Vec<DailySecurityRecord>) -> SecurityMaster {
        let mut by_symbol: BTreeMap<String, BTreeMap<NaiveDate, DailySecurityRecord>> = BTreeMap::new();
        for r in records {
            by_symbol.entry(r.symbol.clone()).or_default().insert(r.date, r);
        }
        SecurityMaster { by_symbol }
    }

    pub fn symbols(&self) -> impl Iterator<Item = &String> {
        self.by_symbol.keys()
    }

    pub fn records(&self, symbol: &str) -> Option<&BTreeMap<NaiveDate, DailySecurityRecord>> {
        self.by_symbol.get(symbol)
    }

    pub fn record_on(&self, symbol: &str, date: NaiveDate) -> Option<&DailySecurityRecord> {
        self.by_symbol.get(symbol)?.get(&date)
    }

    /// Last record of `symbol` within `month`.
    pub fn month_end_record(&self, symbol: &str, month: Month) -> Option<&DailySecurityRecord> {
        let recs = self.by_symbol.get(symbol)?;
        recs.range(..=last_calendar_day(month)).next_back().and_then(|(d, r)| {
            if Month::of(*d) == month { Some(r) } else { None }
        })
    }
}

fn last_calendar_day(month: Month) -> NaiveDate {
    let next = Month::from_index(month.index() + 1);
    NaiveDate::from_ymd_opt(next.year, next.month, 1).unwrap().pred_opt().unwrap()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum ExclusionReason {
    ShareCode,
    PriceBelowMinimum,
    TickPilot,
    MissingPrevMonthEnd,
}

#[derive(Debug, Clone)]
pub struct UniverseMonth {
    pub month: Month,
    pub eligible: BTreeSet<String>,
    pub excluded: Vec<(String, ExclusionReason)>,
}

/// Monthly universe membership: common shares (codes 10/11), previous
/// month-end close of at least $1, and outside the tick-pilot test groups
/// while the pilot ran. A missing previous month-end record excludes the
/// symbol with a reason code rather than failing the run.
pub fn apply_universe_filters(master: &SecurityMaster, month: Month) -> UniverseMonth {
    let mut eligible = BTreeSet::new();
    let mut excluded = Vec::new();
    let prev = month.prev();
    let min_close = Price4::from_dollars_int(1);
    for symbol in master.symbols() {
        let Some(rec) = master.month_end_record(symbol, prev) else {
            excluded.push((symbol.clone(), ExclusionReason::MissingPrevMonthEnd));
            continue;
        };
        if !matches!(rec.share_code, 10 | 11) {
            excluded.push((symbol.clone(), ExclusionReason::ShareCode));
            continue;
        }
        let Some(close) = rec.close else {
            excluded.push((symbol.clone(), ExclusionReason::MissingPrevMonthEnd));
            continue;
        };
        if close < min_close {
            excluded.push((symbol.clone(), ExclusionReason::PriceBelowMinimum));
            continue;
        }
        let in_pilot_window = month >= TICK_PILOT_START && month <= TICK_PILOT_END;
        if in_pilot_window && rec.tick_pilot_group.is_excluded_group() {
            excluded.push((symbol.clone(), ExclusionReason::TickPilot));
            continue;
        }
        eligible.insert(symbol.clone());
    }
    UniverseMonth { month, eligible, excluded }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn date(s: &str) -> NaiveDate {
        NaiveDate::parse_from_str(s, "%Y-%m-%d").unwrap()
    }

    #[test]
    fn price_parses_exactly() {
        assert_eq!(Price4::parse("20.0070").unwrap(), Price4(200_070));
        assert_eq!(Price4::parse("20").unwrap(), Price4(200_000));
        assert_eq!(Price4::parse("0.0001").unwrap(), Price4(1));
        assert_eq!(Price4::parse("10.5").unwrap(), Price4(105_000));
    }

    #[test]
    fn price_rejects_excess_decimals() {
        assert_eq!(Price4::parse("20.00701"), Err(PriceParseError::TooManyDecimals));
        assert_eq!(Price4::parse("20.00700"), Err(PriceParseError::TooManyDecimals));
    }

    #[test]
    fn price_round_trips() {
        for raw in [1i64, 9_999, 10_000, 200_070, 312_749, 999_999_999] {
            let p = Price4(raw);
            assert_eq!(Price4::parse(&p.to_decimal_string()).unwrap(), p);
        }
    }

    #[test]
    fn trade_row_maps_fields() {
        let csv = "symbol,ts,price,size,ex\nAAA,34200000000000,20.0070,100,D\n";
        let schema = TradeSchema { default_date: Some(date("2020-01-06")), ..Default::default() };
        let recs = parse_trades(csv.as_bytes(), &schema).unwrap();
        assert_eq!(recs.len(), 1);
        assert_eq!(recs[0].price, Price4(200_070));
        assert_eq!(recs[0].exchange, 'D');
        assert_eq!(recs[0].size, 100);
        assert_eq!(recs[0].date, date("2020-01-06"));
    }

    #[test]
    fn trade_row_with_five_decimals_fails() {
        let csv = "symbol,ts,price,size,ex\nAAA,1000,20.00701,100,D\n";
        let schema = TradeSchema { default_date: Some(date("2020-01-06")), ..Default::default() };
        let err = parse_trades(csv.as_bytes(), &schema).unwrap_err();
        match err {
            MdioError::PrecisionExceeded { line, .. } => assert_eq!(line, 2),
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn malformed_row_reports_line() {
        let csv = "symbol,ts,price,size,ex\nAAA,1000,20.0070,100,D\nBBB,notanumber,1.0,1,D\n";
        let schema = TradeSchema { default_date: Some(date("2020-01-06")), ..Default::default() };
        let err = parse_trades(csv.as_bytes(), &schema).unwrap_err();
        match err {
            MdioError::MalformedRow { line, .. } => assert_eq!(line, 3),
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn quote_rows_and_crossed_flag() {
        let csv = "symbol,ts,bid,ask,bsz,asz\nAAA,34200000000000,10.00,10.02,5,3\nAAA,34200000000001,10.02,10.00,5,3\n";
        let schema = QuoteSchema { default_date: Some(date("2020-01-06")), ..Default::default() };
        let recs = parse_quotes(csv.as_bytes(), &schema).unwrap();
        assert_eq!(recs[0].bid, Price4(100_000));
        assert_eq!(recs[0].ask, Price4(100_200));
        assert!(!recs[0].is_crossed_or_locked());
        assert!(recs[1].is_crossed_or_locked());
    }

    #[test]
    fn empty_quote_file_is_empty() {
        let schema = QuoteSchema { default_date: Some(date("2020-01-06")), ..Default::default() };
        let recs = parse_quotes("symbol,ts,bid,ask,bsz,asz\n".as_bytes(), &schema).unwrap();
        assert!(recs.is_empty());
    }

    #[test]
    fn calendar_weeks_and_months() {
        let cal = TradingCalendar::synthetic(date("2019-12-30"), 15);
        assert_eq!(cal.week_of(date("2019-12-30")), Some(WeekId(0)));
        assert_eq!(cal.week_of(date("2020-01-03")), Some(WeekId(0)));
        assert_eq!(cal.week_of(date("2020-01-06")), Some(WeekId(1)));
        // Week 0 straddles the year end; its month is December.
        assert_eq!(cal.month_of_week(WeekId(0)), Some(Month { year: 2019, month: 12 }));
        assert_eq!(cal.month_end(Month { year: 2019, month: 12 }), Some(date("2019-12-31")));
    }

    #[test]
    fn calendar_rejects_gappy_week_ids() {
        let entries = vec![(date("2020-01-06"), WeekId(0)), (date("2020-01-13"), WeekId(2))];
        assert!(TradingCalendar::new(entries).is_err());
    }

    fn sec(symbol: &str, d: &str, close: &str, code: u16, pilot: PilotGroup) -> DailySecurityRecord {
        DailySecurityRecord {
            symbol: symbol.into(),
            date: date(d),
            close: Some(Price4::parse(close).unwrap()),
            bid: None,
            ask: None,
            shares_outstanding: 1_000_000,
            share_code: code,
            book_equity: None,
            month_volume: 10_000,
            tick_pilot_group: pilot,
        }
    }

    #[test]
    fn universe_filter_rules() {
        let master = SecurityMaster::new(vec![
            sec("AAA", "2017-02-28", "5.00", 10, PilotGroup::None),
            sec("BBB", "2017-02-28", "5.00", 12, PilotGroup::None),
            sec("CCC", "2017-02-28", "0.50", 10, PilotGroup::None),
            sec("DDD", "2017-02-28", "5.00", 10, PilotGroup::G2),
            sec("EEE", "2018-12-31", "5.00", 10, PilotGroup::G2),
        ]);
        let u = apply_universe_filters(&master, Month { year: 2017, month: 3 });
        assert!(u.eligible.contains("AAA"));
        assert!(u.excluded.contains(&("BBB".into(), ExclusionReason::ShareCode)));
        assert!(u.excluded.contains(&("CCC".into(), ExclusionReason::PriceBelowMinimum)));
        assert!(u.excluded.contains(&("DDD".into(), ExclusionReason::TickPilot)));
        // Pilot exclusion lapses after the program window.
        let u2 = apply_universe_filters(&master, Month { year: 2019, month: 1 });
        assert!(u2.eligible.contains("EEE"));
        // Missing previous month-end record is a reason code, not an error.
        assert!(u2.excluded.contains(&("AAA".into(), ExclusionReason::MissingPrevMonthEnd)));
    }

    #[test]
    fn exactly_one_dollar_is_eligible() {
        let master = SecurityMaster::new(vec![sec("AAA", "2020-01-31", "1.0000", 11, PilotGroup::None)]);
        let u = apply_universe_filters(&master, Month { year: 2020, month: 2 });
        assert!(u.eligible.contains("AAA"));
    }
}
