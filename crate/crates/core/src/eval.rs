//! Return metrics, correlation scores and the top-k/drop-k backtest.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet};
use std::io::{Read, Write};

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::dataio::StockRecord;
use crate::error::{check_len, Error, Result};

/// `(close_later − close_base) / close_base`.
pub fn return_ratio(close_base: f64, close_later: f64) -> Result<f64> {
    if !(close_base > 0.0) {
        return Err(Error::domain(format!("base price {close_base} must be positive")));
    }
    Ok((close_later - close_base) / close_base)
}

/// `ln(close_later / close_base)`.
pub fn log_return(close_base: f64, close_later: f64) -> Result<f64> {
    if !(close_base > 0.0 && close_later > 0.0) {
        return Err(Error::domain(format!("prices {close_base}, {close_later} must be positive")));
    }
    Ok((close_later / close_base).ln())
}

fn check_pair(p: &[f64], r: &[f64]) -> Result<()> {
    check_len(p.len(), r.len())?;
    if p.len() < 2 {
        return Err(Error::domain("correlation needs at least two observations"));
    }
    if p.iter().chain(r).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("correlation input".into()));
    }
    Ok(())
}

/// Pearson correlation of predictions and realized returns.
pub fn information_coefficient(p: &[f64], r: &[f64]) -> Result<f64> {
    check_pair(p, r)?;
    let n = p.len() as f64;
    let mp = p.iter().sum::<f64>() / n;
    let mr = r.iter().sum::<f64>() / n;
    let (mut spr, mut spp, mut srr) = (0.0, 0.0, 0.0);
    for (a, b) in p.iter().zip(r) {
        let (da, db) = (a - mp, b - mr);
        spr += da * db;
        spp += da * da;
        srr += db * db;
    }
    if spp == 0.0 || srr == 0.0 {
        return Err(Error::domain("correlation undefined for a constant vector"));
    }
    Ok((spr / (spp.sqrt() * srr.sqrt())).clamp(-1.0, 1.0))
}

/// 1-based ranks; tied values share the mean of their positions.
pub fn average_ranks(v: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut ranks = vec![0.0; v.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            ranks[k] = r;
        }
        i = j + 1;
    }
    ranks
}

/// Spearman correlation as Pearson on average ranks.
pub fn rank_ic(p: &[f64], r: &[f64]) -> Result<f64> {
    check_pair(p, r)?;
    information_coefficient(&average_ranks(p), &average_ranks(r))
        .map_err(|_| Error::domain("rank correlation undefined for an all-tied vector"))
}

/// `1 − 6 Σ d² / (n (n² − 1))`; valid only without ties.
pub fn spearman_simplified(p: &[f64], r: &[f64]) -> Result<f64> {
    check_pair(p, r)?;
    let distinct = |v: &[f64]| v.iter().map(|x| x.to_bits()).collect::<BTreeSet<_>>().len() == v.len();
    if !distinct(p) || !distinct(r) {
        return Err(Error::domain("simplified Spearman formula requires tie-free input"));
    }
    let (rp, rr) = (average_ranks(p), average_ranks(r));
    let d2: f64 = rp.iter().zip(&rr).map(|(a, b)| (a - b).powi(2)).sum();
    let n = p.len() as f64;
    Ok(1.0 - 6.0 * d2 / (n * (n * n - 1.0)))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PanelRow {
    pub date: NaiveDate,
    pub ticker: String,
    pub score: f64,
    pub realized_return: f64,
}

/// Scores and forward returns on a (date, ticker) grid.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionPanel {
    by_date: BTreeMap<NaiveDate, Vec<PanelRow>>,
}

impl PredictionPanel {
    pub fn from_rows(rows: Vec<PanelRow>) -> Result<Self> {
        let mut by_date: BTreeMap<NaiveDate, Vec<PanelRow>> = BTreeMap::new();
        for row in rows {
            if !row.score.is_finite() || !row.realized_return.is_finite() {
                return Err(Error::data(format!("non-finite panel cell at {} {}", row.date, row.ticker)));
            }
            by_date.entry(row.date).or_default().push(row);
        }
        for (date, rows) in by_date.iter_mut() {
            rows.sort_by(|a, b| a.ticker.cmp(&b.ticker));
            if rows.windows(2).any(|w| w[0].ticker == w[1].ticker) {
                return Err(Error::data(format!("duplicate ticker on {date}")));
            }
        }
        if by_date.is_empty() {
            return Err(Error::Empty("prediction panel".into()));
        }
        Ok(Self { by_date })
    }

    pub fn dates(&self) -> impl Iterator<Item = &NaiveDate> {
        self.by_date.keys()
    }

    /// Rows of one date, sorted by ticker.
    pub fn rows(&self, date: &NaiveDate) -> &[PanelRow] {
        self.by_date.get(date).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn iter(&self) -> impl Iterator<Item = (&NaiveDate, &[PanelRow])> {
        self.by_date.iter().map(|(d, r)| (d, r.as_slice()))
    }

    pub fn len(&self) -> usize {
        self.by_date.values().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn read_csv<R: Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
        let mut rows = Vec::new();
        for (i, rec) in rdr.deserialize::<PanelRow>().enumerate() {
            rows.push(rec.map_err(|e| Error::data(format!("panel line {}: {e}", i + 2)))?);
        }
        Self::from_rows(rows)
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        for rows in self.by_date.values() {
            for row in rows {
                w.serialize(row)?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DayResult {
    pub date: NaiveDate,
    pub holdings: Vec<String>,
    pub portfolio_return: f64,
    pub cumulative_rr: f64,
    /// Names bought that were not held the previous day.
    pub entered: usize,
    pub ic: Option<f64>,
    pub rank_ic: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BacktestResult {
    pub k: usize,
    pub days: Vec<DayResult>,
    pub turnover: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BacktestSummary {
    pub k: usize,
    pub days: usize,
    pub cumulative_rr: f64,
    pub mean_daily_return: f64,
    pub turnover: usize,
    /// `None` when no date had a defined correlation.
    pub mean_ic: Option<f64>,
    pub mean_rank_ic: Option<f64>,
}

fn mean_defined(vals: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    let v: Vec<f64> = vals.flatten().collect();
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

impl BacktestResult {
    pub fn final_cumulative_rr(&self) -> f64 {
        self.days.last().map_or(0.0, |d| d.cumulative_rr)
    }

    pub fn summary(&self) -> BacktestSummary {
        let n = self.days.len();
        BacktestSummary {
            k: self.k,
            days: n,
            cumulative_rr: self.final_cumulative_rr(),
            mean_daily_return: self.days.iter().map(|d| d.portfolio_return).sum::<f64>() / n.max(1) as f64,
            turnover: self.turnover,
            mean_ic: mean_defined(self.days.iter().map(|d| d.ic)),
            mean_rank_ic: mean_defined(self.days.iter().map(|d| d.rank_ic)),
        }
    }

    pub fn write_trajectory_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["date", "portfolio_return", "cumulative_rr", "held", "entered", "ic", "rank_ic", "holdings"])?;
        let opt = |v: Option<f64>| v.map(|x| format!("{x:.12}")).unwrap_or_default();
        for d in &self.days {
            w.write_record([
                d.date.to_string(),
                format!("{:.12}", d.portfolio_return),
                format!("{:.12}", d.cumulative_rr),
                d.holdings.len().to_string(),
                d.entered.to_string(),
                opt(d.ic),
                opt(d.rank_ic),
                d.holdings.join(" "),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Daily long-only strategy: hold the `k` best-scored names (ties broken by
/// ticker), equal weighted; anything leaving the top `k` is sold.
pub fn topk_dropk_backtest(panel: &PredictionPanel, k: usize) -> Result<BacktestResult> {
    if k == 0 {
        return Err(Error::domain("k must be at least 1"));
    }
    let mut days = Vec::new();
    let mut held: BTreeSet<String> = BTreeSet::new();
    let mut growth = 1.0;
    let mut turnover = 0;
    for (date, rows) in panel.iter() {
        if rows.is_empty() {
            return Err(Error::data(format!("empty universe on {date}")));
        }
        let mut order: Vec<&PanelRow> = rows.iter().collect();
        // Scores are finite, so partial_cmp is total here and treats −0 and +0 as a tie.
        order.sort_by(|a, b| {
            b.score.partial_cmp(&a.score).unwrap_or(Ordering::Equal).then_with(|| a.ticker.cmp(&b.ticker))
        });
        let top: Vec<&PanelRow> = order.into_iter().take(k).collect();
        let ret = top.iter().map(|r| r.realized_return).sum::<f64>() / top.len() as f64;
        growth *= 1.0 + ret;
        let holdings: Vec<String> = top.iter().map(|r| r.ticker.clone()).collect();
        let entered = holdings.iter().filter(|t| !held.contains(*t)).count();
        turnover += entered;
        held = holdings.iter().cloned().collect();
        let p: Vec<f64> = rows.iter().map(|r| r.score).collect();
        let r: Vec<f64> = rows.iter().map(|r| r.realized_return).collect();
        days.push(DayResult {
            date: *date,
            holdings,
            portfolio_return: ret,
            cumulative_rr: growth - 1.0,
            entered,
            ic: information_coefficient(&p, &r).ok(),
            rank_ic: rank_ic(&p, &r).ok(),
        });
    }
    Ok(BacktestResult { k, days, turnover })
}

/// Trailing-return predictor: score is the `lookback`-day return ratio up to
/// the date, label is the `horizon`-day forward return ratio.
pub fn momentum_panel(records: &[StockRecord], lookback: usize, horizon: usize) -> Result<PredictionPanel> {
    if lookback == 0 || horizon == 0 {
        return Err(Error::domain("lookback and horizon must be positive"));
    }
    let mut rows = Vec::new();
    for rec in records {
        let close = rec
            .complete_closes()
            .ok_or_else(|| Error::data(format!("{}: unrepaired gaps", rec.ticker)))?;
        for t in lookback..close.len().saturating_sub(horizon) {
            rows.push(PanelRow {
                date: rec.dates[t],
                ticker: rec.ticker.clone(),
                score: return_ratio(close[t - lookback], close[t])?,
                realized_return: return_ratio(close[t], close[t + horizon])?,
            });
        }
    }
    if rows.is_empty() {
        return Err(Error::data("price history too short for the momentum panel"));
    }
    PredictionPanel::from_rows(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn close(a: f64, b: f64) -> bool {
        (a - b).abs() < 1e-12
    }

    #[test]
    fn returns() {
        assert!(close(return_ratio(100.0, 110.0).unwrap(), 0.10));
        assert_eq!(return_ratio(100.0, 100.0).unwrap(), 0.0);
        assert!(close(return_ratio(80.0, 60.0).unwrap(), -0.25));
        assert!(return_ratio(0.0, 1.0).is_err());
        assert!((log_return(100.0, 110.0).unwrap() - 0.0953102).abs() < 1e-7);
        assert_eq!(log_return(5.0, 5.0).unwrap(), 0.0);
        let p = [100.0, 103.0, 99.0, 107.0];
        let chained: f64 = p.windows(2).map(|w| log_return(w[0], w[1]).unwrap()).sum();
        assert!(close(chained, log_return(100.0, 107.0).unwrap()));
        assert!(log_return(1.0, -1.0).is_err());
    }

    #[test]
    fn ic_examples() {
        let r = [2.0, 1.0, 4.0, 5.0];
        assert!(close(information_coefficient(&r, &r).unwrap(), 1.0));
        let neg: Vec<f64> = r.iter().map(|v| -v).collect();
        assert!(close(information_coefficient(&neg, &r).unwrap(), -1.0));
        assert!(information_coefficient(&[1.0, 1.0, 1.0], &[1.0, 2.0, 3.0]).is_err());
        assert!(information_coefficient(&[1.0], &[1.0]).is_err());
    }

    #[test]
    fn rank_ic_examples() {
        assert!(close(rank_ic(&[1.0, 2.0, 3.0], &[10.0, 20.0, 30.0]).unwrap(), 1.0));
        assert!(close(rank_ic(&[1.0, 2.0, 3.0], &[30.0, 20.0, 10.0]).unwrap(), -1.0));
        assert_eq!(average_ranks(&[1.0, 1.0, 2.0]), vec![1.5, 1.5, 3.0]);
        assert!(rank_ic(&[4.0, 4.0, 4.0], &[1.0, 2.0, 3.0]).is_err());
        assert!(spearman_simplified(&[1.0, 1.0, 2.0], &[3.0, 1.0, 2.0]).is_err());
    }

    fn row(date: NaiveDate, ticker: &str, score: f64, ret: f64) -> PanelRow {
        PanelRow { date, ticker: ticker.into(), score, realized_return: ret }
    }

    fn d0() -> NaiveDate {
        NaiveDate::from_ymd_opt(2021, 3, 1).unwrap()
    }

    #[test]
    fn backtest_argmax_and_clamp() {
        let panel = PredictionPanel::from_rows(vec![row(d0(), "A", 0.9, 0.02), row(d0(), "B", 0.1, -0.01)]).unwrap();
        let res = topk_dropk_backtest(&panel, 1).unwrap();
        assert_eq!(res.days[0].holdings, vec!["A".to_string()]);
        assert_eq!(res.days[0].portfolio_return, 0.02);

        let rows = (0..5).map(|i| row(d0(), &format!("T{i}"), i as f64, 0.01 * i as f64)).collect();
        let res = topk_dropk_backtest(&PredictionPanel::from_rows(rows).unwrap(), 20).unwrap();
        assert_eq!(res.days[0].holdings.len(), 5);
        assert!(topk_dropk_backtest(&panel, 0).is_err());
    }

    #[test]
    fn backtest_ties_break_by_ticker_and_compound() {
        let d1 = d0().succ_opt().unwrap();
        let panel = PredictionPanel::from_rows(vec![
            row(d0(), "B", 1.0, 0.10),
            row(d0(), "A", 1.0, 0.20),
            row(d1, "A", 0.0, 0.05),
            row(d1, "B", 1.0, -0.10),
        ])
        .unwrap();
        let res = topk_dropk_backtest(&panel, 1).unwrap();
        assert_eq!(res.days[0].holdings, vec!["A".to_string()]);
        assert_eq!(res.days[1].holdings, vec!["B".to_string()]);
        assert!(close(res.final_cumulative_rr(), 1.2 * 0.9 - 1.0));
        assert_eq!(res.turnover, 2);
        let s = res.summary();
        assert!(close(s.mean_daily_return, 0.05));
    }

    #[test]
    fn signed_zero_scores_tie() {
        let panel = PredictionPanel::from_rows(vec![row(d0(), "B", 0.0, 0.1), row(d0(), "A", -0.0, 0.2)]).unwrap();
        let res = topk_dropk_backtest(&panel, 1).unwrap();
        assert_eq!(res.days[0].holdings, vec!["A".to_string()]);
    }

    #[test]
    fn panel_csv_round_trip() {
        let panel = PredictionPanel::from_rows(vec![row(d0(), "A", 0.5, 0.01), row(d0(), "B", -0.5, 0.02)]).unwrap();
        let mut buf = Vec::new();
        panel.write_csv(&mut buf).unwrap();
        assert_eq!(PredictionPanel::read_csv(buf.as_slice()).unwrap(), panel);
        let dup = vec![row(d0(), "A", 0.5, 0.01), row(d0(), "A", 0.4, 0.01)];
        assert!(PredictionPanel::from_rows(dup).is_err());
    }

    proptest! {
        #[test]
        fn ic_affine_invariant(p in proptest::collection::vec(-5.0f64..5.0, 3..30), a in 0.1f64..10.0, b in -10.0f64..10.0, seed in 0u64..1000) {
            let r: Vec<f64> = p.iter().enumerate().map(|(i, x)| x * 0.3 + ((i as u64 * 7 + seed) % 11) as f64).collect();
            if let Ok(ic) = information_coefficient(&p, &r) {
                let q: Vec<f64> = p.iter().map(|x| a * x + b).collect();
                let ic2 = information_coefficient(&q, &r).unwrap();
                prop_assert!((ic - ic2).abs() < 1e-12);
                prop_assert!((-1.0..=1.0).contains(&ic));
            }
        }

        #[test]
        fn rank_ic_monotone_invariant(p in proptest::collection::vec(-3.0f64..3.0, 3..30), r in proptest::collection::vec(-1.0f64..1.0, 30)) {
            let r = &r[..p.len()];
            if let Ok(v) = rank_ic(&p, r) {
                let q: Vec<f64> = p.iter().map(|x| x.exp() + x.powi(3)).collect();
                prop_assert!((v - rank_ic(&q, r).unwrap()).abs() < 1e-12);
                prop_assert!((-1.0..=1.0).contains(&v));
                if let Ok(s) = spearman_simplified(&p, r) {
                    prop_assert!((s - v).abs() < 1e-12);
                }
            }
        }

        #[test]
        fn backtest_ignores_input_order(scores in proptest::collection::vec(0i32..4, 8), k in 1usize..5) {
            let rows: Vec<PanelRow> = scores
                .iter()
                .enumerate()
                .map(|(i, s)| row(d0(), &format!("T{i}"), *s as f64, i as f64 * 0.01))
                .collect();
            let mut rev = rows.clone();
            rev.reverse();
            let a = topk_dropk_backtest(&PredictionPanel::from_rows(rows).unwrap(), k).unwrap();
            let b = topk_dropk_backtest(&PredictionPanel::from_rows(rev).unwrap(), k).unwrap();
            prop_assert_eq!(a, b);
        }
    }
}
