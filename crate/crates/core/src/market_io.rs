//! Option-chain CSV ingestion.
//!
//! Header (mandatory, in this order):
//! `quote_date,expiry_date,strike,option_type,bid,ask,open_interest,underlying_price,rate,dividend_yield`
//! with ISO dates, `option_type` one of `call`/`put` (also `C`/`P`), rates and
//! yields as continuously compounded decimals.

use std::collections::BTreeMap;
use std::io::Read;
use std::path::Path;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::vol_surface::{implied_vol, ExpirySlice, VolPoint, VolSource, VolSurface};

pub const CHAIN_HEADER: [&str; 10] = [
    "quote_date",
    "expiry_date",
    "strike",
    "option_type",
    "bid",
    "ask",
    "open_interest",
    "underlying_price",
    "rate",
    "dividend_yield",
];

pub const DAYS_PER_YEAR: f64 = 365.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptionType {
    Call,
    Put,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptionChainRow {
    pub quote_date: NaiveDate,
    pub expiry_date: NaiveDate,
    pub strike: f64,
    pub option_type: OptionType,
    pub bid: f64,
    pub ask: f64,
    pub open_interest: f64,
    pub underlying_price: f64,
    pub rate: f64,
    pub dividend_yield: f64,
}

impl OptionChainRow {
    pub fn days_to_expiry(&self) -> i64 {
        (self.expiry_date - self.quote_date).num_days()
    }

    /// ACT/365.
    pub fn expiry_years(&self) -> f64 {
        self.days_to_expiry() as f64 / DAYS_PER_YEAR
    }

    pub fn mid(&self) -> f64 {
        0.5 * (self.bid + self.ask)
    }
}

/// Quote filters. Both thresholds are strict: a quote must have more than
/// `min_days` days to expiry and more than `min_open_interest` open interest.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ChainFilters {
    pub min_days: i64,
    pub min_open_interest: f64,
    pub calls_only: bool,
    /// Replaces every row's rate when set.
    pub rate_override: Option<f64>,
    /// Replaces every row's dividend yield when set.
    pub dividend_yield_override: Option<f64>,
}

impl Default for ChainFilters {
    fn default() -> Self {
        Self { min_days: 45, min_open_interest: 100.0, calls_only: true, rate_override: None, dividend_yield_override: None }
    }
}

/// Why rows were dropped. `passed` plus the exclusion counts equals `total`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct FilterCounts {
    pub total: usize,
    pub passed: usize,
    pub short_maturity: usize,
    pub low_open_interest: usize,
    pub wrong_type: usize,
    pub no_implied_vol: usize,
    pub duplicate: usize,
}

impl FilterCounts {
    pub fn excluded(&self) -> usize {
        self.short_maturity + self.low_open_interest + self.wrong_type + self.no_implied_vol + self.duplicate
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoadedChain {
    pub quote_date: NaiveDate,
    pub surface: VolSurface,
    pub counts: FilterCounts,
}

fn parse_err(line: usize, message: impl Into<String>) -> Error {
    Error::Parse { line, message: message.into() }
}

/// Parses and validates every row. Line numbers count the header as line 1.
pub fn parse_chain<R: Read>(input: R) -> Result<Vec<OptionChainRow>> {
    let mut r = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(input);
    let headers = r.headers().map_err(|e| parse_err(1, e.to_string()))?.clone();
    if headers.iter().collect::<Vec<_>>() != CHAIN_HEADER {
        return Err(parse_err(1, format!("expected header {}", CHAIN_HEADER.join(","))));
    }
    let mut rows = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let line = i + 2;
        let rec = rec.map_err(|e| parse_err(line, e.to_string()))?;
        let date = |j: usize| -> Result<NaiveDate> {
            NaiveDate::parse_from_str(&rec[j], "%Y-%m-%d").map_err(|e| parse_err(line, format!("{}: {e}", CHAIN_HEADER[j])))
        };
        let num = |j: usize| -> Result<f64> {
            let x: f64 = rec[j].parse().map_err(|e| parse_err(line, format!("{}: {e}", CHAIN_HEADER[j])))?;
            if !x.is_finite() {
                return Err(parse_err(line, format!("{} is not finite", CHAIN_HEADER[j])));
            }
            Ok(x)
        };
        let option_type = match rec[3].to_ascii_lowercase().as_str() {
            "call" | "c" => OptionType::Call,
            "put" | "p" => OptionType::Put,
            other => return Err(parse_err(line, format!("option_type: unknown value {other:?}"))),
        };
        let row = OptionChainRow {
            quote_date: date(0)?,
            expiry_date: date(1)?,
            strike: num(2)?,
            option_type,
            bid: num(4)?,
            ask: num(5)?,
            open_interest: num(6)?,
            underlying_price: num(7)?,
            rate: num(8)?,
            dividend_yield: num(9)?,
        };
        if !(row.strike > 0.0) {
            return Err(parse_err(line, "strike must be positive"));
        }
        if !(row.underlying_price > 0.0) {
            return Err(parse_err(line, "underlying_price must be positive"));
        }
        if row.bid < 0.0 || row.bid > row.ask {
            return Err(parse_err(line, format!("need 0 <= bid <= ask, got bid {} ask {}", row.bid, row.ask)));
        }
        if row.open_interest < 0.0 {
            return Err(parse_err(line, "open_interest must be non-negative"));
        }
        if row.expiry_date <= row.quote_date {
            return Err(parse_err(line, "expiry_date must be after quote_date"));
        }
        if let Some(first) = rows.first() {
            let first: &OptionChainRow = first;
            if first.quote_date != row.quote_date || first.underlying_price != row.underlying_price {
                return Err(parse_err(line, "all rows must share one quote_date and underlying_price"));
            }
        }
        rows.push(row);
    }
    Ok(rows)
}

/// Applies the filters and converts mid prices to implied vols.
///
/// Rates and dividend yields may differ per expiry but must agree within an
/// expiry. Of several quotes at the same expiry and strike only the first is
/// kept.
pub fn build_surface(rows: &[OptionChainRow], filters: &ChainFilters) -> Result<LoadedChain> {
    let mut counts = FilterCounts { total: rows.len(), ..Default::default() };
    let first = rows.first().ok_or(Error::EmptyAfterFilter)?;
    let spot = first.underlying_price;

    let mut by_expiry: BTreeMap<i64, (f64, f64, Vec<VolPoint>)> = BTreeMap::new();
    for (i, row) in rows.iter().enumerate() {
        if filters.calls_only && row.option_type != OptionType::Call {
            counts.wrong_type += 1;
            continue;
        }
        let days = row.days_to_expiry();
        if days <= filters.min_days {
            counts.short_maturity += 1;
            continue;
        }
        if row.open_interest <= filters.min_open_interest {
            counts.low_open_interest += 1;
            continue;
        }
        let rate = filters.rate_override.unwrap_or(row.rate);
        let q = filters.dividend_yield_override.unwrap_or(row.dividend_yield);
        let t = row.expiry_years();
        let entry = by_expiry.entry(days).or_insert_with(|| (rate, q, Vec::new()));
        if entry.0 != rate || entry.1 != q {
            return Err(parse_err(i + 2, format!("rate/dividend_yield differ within expiry {}", row.expiry_date)));
        }
        if entry.2.iter().any(|p| p.strike == row.strike) {
            counts.duplicate += 1;
            continue;
        }
        let fwd = spot * (-q * t).exp();
        let call_mid = match row.option_type {
            OptionType::Call => row.mid(),
            // parity
            OptionType::Put => row.mid() + fwd - row.strike * (-rate * t).exp(),
        };
        match implied_vol(call_mid, fwd, row.strike, t, rate) {
            Ok(vol) => {
                entry.2.push(VolPoint { expiry: t, strike: row.strike, implied_vol: vol, source: VolSource::Market });
                counts.passed += 1;
            }
            Err(_) => counts.no_implied_vol += 1,
        }
    }

    let mut surface = VolSurface::new(spot);
    for (days, (rate, q, mut points)) in by_expiry {
        if points.is_empty() {
            continue;
        }
        points.sort_by(|a, b| a.strike.total_cmp(&b.strike));
        surface.push_slice(ExpirySlice { expiry: days as f64 / DAYS_PER_YEAR, rate, dividend_yield: q, points })?;
    }
    if surface.is_empty() {
        return Err(Error::EmptyAfterFilter);
    }
    Ok(LoadedChain { quote_date: first.quote_date, surface, counts })
}

pub fn load_chain(path: impl AsRef<Path>, filters: &ChainFilters) -> Result<LoadedChain> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    let rows = parse_chain(std::io::BufReader::new(file))?;
    build_surface(&rows, filters)
}
