//! Comparison of signed classifier output against planted truth labels.

use std::collections::HashMap;

use chrono::NaiveDate;
use serde::Serialize;
use thiserror::Error;

use crate::classify::SignedRetailTrade;
use crate::synth::market::TruthRecord;

#[derive(Debug, Error)]
pub enum ConfusionError {
    #[error("signed print {symbol} {date} ts {ts} has no truth row")]
    IdMismatch { symbol: String, date: NaiveDate, ts: u64 },
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct ConfusionReport {
    pub true_retail: u64,
    pub signed_correct: u64,
    pub signed_wrong: u64,
    /// True retail prints the method left unsigned (any reason).
    pub unsigned: u64,
    /// Signed prints whose truth row says non-retail.
    pub false_positive: u64,
    /// (signed_correct + signed_wrong) / true_retail.
    pub identification_rate: f64,
    /// signed_correct / (signed_correct + signed_wrong); zero when nothing
    /// was signed.
    pub sign_accuracy: f64,
}

/// Join signed output to truth on (symbol, date, ts) and tabulate outcomes.
/// A signed print with no truth row is a harness error, not a cell.
pub fn confusion<'a>(
    truth: &[TruthRecord],
    signed: impl IntoIterator<Item = &'a SignedRetailTrade>,
) -> Result<ConfusionReport, ConfusionError> {
    let mut index: HashMap<(&str, NaiveDate, u64), (&TruthRecord, bool)> =
        truth.iter().map(|t| ((t.symbol.as_str(), t.date, t.ts), (t, false))).collect();
    let mut report = ConfusionReport {
        true_retail: truth.iter().filter(|t| t.is_retail).count() as u64,
        ..Default::default()
    };
    for s in signed {
        let key = (s.trade.symbol.as_str(), s.trade.date, s.trade.ts);
        let Some((t, seen)) = index.get_mut(&key) else {
            return Err(ConfusionError::IdMismatch {
                symbol: s.trade.symbol.clone(),
                date: s.trade.date,
                ts: s.trade.ts,
            });
        };
        *seen = true;
        if !t.is_retail {
            report.false_positive += 1;
        } else if t.true_side == s.direction {
            report.signed_correct += 1;
        } else {
            report.signed_wrong += 1;
        }
    }
    report.unsigned = index
        .values()
        .filter(|(t, seen)| t.is_retail && !seen)
        .count() as u64;
    let signed_total = report.signed_correct + report.signed_wrong;
    report.identification_rate = if report.true_retail > 0 {
        signed_total as f64 / report.true_retail as f64
    } else {
        0.0
    };
    report.sign_accuracy = if signed_total > 0 {
        report.signed_correct as f64 / signed_total as f64
    } else {
        0.0
    };
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::classify::{Direction, Method};
    use crate::mdio::{Price4, TradeRecord};

    fn date() -> NaiveDate {
        NaiveDate::from_ymd_opt(2020, 1, 6).unwrap()
    }

    fn truth_row(id: u64, ts: u64, side: Direction, retail: bool) -> TruthRecord {
        TruthRecord { trade_id: id, symbol: "A".into(), date: date(), ts, true_side: side, is_retail: retail }
    }

    fn signed_row(ts: u64, side: Direction) -> SignedRetailTrade {
        SignedRetailTrade {
            trade: TradeRecord {
                symbol: "A".into(),
                date: date(),
                ts,
                price: Price4::parse("10.0070").unwrap(),
                size: 100,
                exchange: 'D',
                condition: String::new(),
            },
            method: Method::Bjzz,
            direction: side,
            subpenny_fraction: 0.7,
            matched_bid: None,
            matched_ask: None,
        }
    }

    #[test]
    fn perfect_classifier() {
        let truth = vec![truth_row(0, 1, Direction::Buy, true), truth_row(1, 2, Direction::Sell, true)];
        let signed = vec![signed_row(1, Direction::Buy), signed_row(2, Direction::Sell)];
        let r = confusion(&truth, signed.iter()).unwrap();
        assert_eq!(r.identification_rate, 1.0);
        assert_eq!(r.sign_accuracy, 1.0);
        assert_eq!(r.unsigned, 0);
    }

    #[test]
    fn silent_classifier_identifies_nothing() {
        let truth = vec![truth_row(0, 1, Direction::Buy, true)];
        let r = confusion(&truth, std::iter::empty()).unwrap();
        assert_eq!(r.identification_rate, 0.0);
        assert_eq!(r.unsigned, 1);
    }

    #[test]
    fn cells_split_correctly() {
        let truth = vec![
            truth_row(0, 1, Direction::Buy, true),
            truth_row(1, 2, Direction::Sell, true),
            truth_row(2, 3, Direction::Buy, true),
            truth_row(3, 4, Direction::Buy, false),
        ];
        let signed = vec![
            signed_row(1, Direction::Buy),  // correct
            signed_row(2, Direction::Buy),  // wrong
            signed_row(4, Direction::Buy),  // false positive
        ];
        let r = confusion(&truth, signed.iter()).unwrap();
        assert_eq!(r.signed_correct, 1);
        assert_eq!(r.signed_wrong, 1);
        assert_eq!(r.unsigned, 1);
        assert_eq!(r.false_positive, 1);
        assert_eq!(r.sign_accuracy, 0.5);
    }

    #[test]
    fn unknown_signed_print_is_an_error() {
        let truth = vec![truth_row(0, 1, Direction::Buy, true)];
        let signed = vec![signed_row(99, Direction::Buy)];
        assert!(matches!(confusion(&truth, signed.iter()), Err(ConfusionError::IdMismatch { .. })));
    }
}
