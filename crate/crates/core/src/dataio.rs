//! Close-price ingestion and windowing.
//!
//! Input is a CSV with header `date,ticker,close,industry_id`; an empty close
//! marks a suspended trading day. Records are repaired, trimmed, cut into
//! overlapping windows, normalized, and split chronologically per ticker.

use std::collections::{BTreeMap, BTreeSet};
use std::io::Read;

use chrono::NaiveDate;
use log::debug;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scorenet::{Condition, INDUSTRY_COUNT};

/// Market segment; the discriminant is the one-hot slot.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Board {
    MainBoard = 0,
    Star = 1,
    ChiNext = 2,
    Bse = 3,
    /// Kept for the one-hot width; ingested data never carries it.
    St = 4,
}

impl Board {
    pub const ALL: [Board; 5] = [Board::MainBoard, Board::Star, Board::ChiNext, Board::Bse, Board::St];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Result<Self> {
        Self::ALL.get(i).copied().ok_or_else(|| Error::domain(format!("board id {i} outside [0, 5)")))
    }

    pub fn name(self) -> &'static str {
        match self {
            Board::MainBoard => "main",
            Board::Star => "star",
            Board::ChiNext => "chinext",
            Board::Bse => "bse",
            Board::St => "st",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        let lower = s.to_ascii_lowercase();
        Self::ALL
            .into_iter()
            .find(|b| b.name() == lower)
            .or_else(|| lower.parse::<usize>().ok().and_then(|i| Self::from_index(i).ok()))
            .ok_or_else(|| Error::domain(format!("unknown board {s:?}")))
    }
}

/// Board from the ticker's code prefix. An exchange suffix (`600000.XSHG`)
/// is ignored.
pub fn classify_board(ticker: &str) -> Result<Board> {
    let code = ticker.split('.').next().unwrap_or("");
    if code.is_empty() || !code.bytes().all(|b| b.is_ascii_digit()) {
        return Err(Error::data(format!("ticker {ticker:?} is not a digit code")));
    }
    let board = if code.starts_with("688") {
        Board::Star
    } else if code.starts_with("30") {
        Board::ChiNext
    } else if code.starts_with("002") || code.starts_with("000") || code.starts_with("60") {
        Board::MainBoard
    } else if code.starts_with("83") || code.starts_with("87") || code.starts_with("88") {
        Board::Bse
    } else {
        return Err(Error::data(format!("ticker {ticker:?} matches no board prefix")));
    };
    Ok(board)
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
pub struct PriceRow {
    pub date: NaiveDate,
    pub ticker: String,
    pub close: Option<f64>,
    pub industry_id: usize,
}

/// Parses the price CSV; errors carry the 1-based line number.
pub fn read_price_csv<R: Read>(reader: R) -> Result<Vec<PriceRow>> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers()?.clone();
    for col in ["date", "ticker", "close", "industry_id"] {
        if !headers.iter().any(|h| h == col) {
            return Err(Error::data(format!("missing column {col:?}")));
        }
    }
    let mut rows = Vec::new();
    for (i, rec) in rdr.deserialize::<PriceRow>().enumerate() {
        let line = i + 2;
        let row = rec.map_err(|e| Error::data(format!("line {line}: {e}")))?;
        if let Some(c) = row.close {
            if !(c > 0.0 && c.is_finite()) {
                return Err(Error::data(format!("line {line}: close must be positive, got {c}")));
            }
        }
        if row.industry_id >= INDUSTRY_COUNT {
            return Err(Error::data(format!("line {line}: industry id {} out of range", row.industry_id)));
        }
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(Error::Empty("price file has no rows".into()));
    }
    Ok(rows)
}

/// Ticker list, one per line; `#` starts a comment.
pub fn read_denylist<R: Read>(mut reader: R) -> Result<BTreeSet<String>> {
    let mut text = String::new();
    reader.read_to_string(&mut text)?;
    Ok(text
        .lines()
        .map(|l| l.split('#').next().unwrap_or("").trim())
        .filter(|l| !l.is_empty())
        .map(str::to_string)
        .collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct StockRecord {
    pub ticker: String,
    pub dates: Vec<NaiveDate>,
    /// `None` on suspended days.
    pub close: Vec<Option<f64>>,
    pub industry_id: usize,
    pub board: Board,
}

impl StockRecord {
    pub fn len(&self) -> usize {
        self.dates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dates.is_empty()
    }

    pub fn complete_closes(&self) -> Option<Vec<f64>> {
        self.close.iter().copied().collect()
    }
}

/// Groups rows by ticker into date-ordered records. The last-seen industry
/// id of a ticker wins.
pub fn group_records(rows: &[PriceRow]) -> (Vec<StockRecord>, Vec<Exclusion>) {
    let mut by_ticker: BTreeMap<&str, Vec<&PriceRow>> = BTreeMap::new();
    for r in rows {
        by_ticker.entry(r.ticker.as_str()).or_default().push(r);
    }
    let mut records = Vec::new();
    let mut excluded = Vec::new();
    for (ticker, mut rs) in by_ticker {
        let board = match classify_board(ticker) {
            Ok(b) => b,
            Err(e) => {
                debug!("skipping {ticker}: {e}");
                excluded.push(Exclusion::new(ticker, "unknown board prefix"));
                continue;
            }
        };
        rs.sort_by_key(|r| r.date);
        if rs.windows(2).any(|w| w[0].date == w[1].date) {
            excluded.push(Exclusion::new(ticker, "duplicate dates"));
            continue;
        }
        let latest = rs.iter().max_by_key(|r| r.date).map(|r| r.industry_id).unwrap_or(0);
        records.push(StockRecord {
            ticker: ticker.to_string(),
            dates: rs.iter().map(|r| r.date).collect(),
            close: rs.iter().map(|r| r.close).collect(),
            industry_id: latest,
            board,
        });
    }
    (records, excluded)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RepairConfig {
    /// Longest gap filled by interpolation; longer gaps are forward filled.
    pub max_interp_gap: usize,
    /// More long gaps than this excludes the record.
    pub max_long_gaps: usize,
    /// Any gap longer than this excludes the record.
    pub max_gap: usize,
}

impl Default for RepairConfig {
    fn default() -> Self {
        Self { max_interp_gap: 5, max_long_gaps: 3, max_gap: 60 }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RepairReport {
    pub interpolated_gaps: usize,
    pub forward_filled_gaps: usize,
    pub longest_gap: usize,
    pub leading_dropped: usize,
    pub exclude: bool,
}

/// Fills suspension gaps. Leading missing days are dropped; trailing ones are
/// forward filled. Present closes are never altered.
pub fn repair_suspensions(record: &StockRecord, cfg: &RepairConfig) -> Result<(StockRecord, RepairReport)> {
    let present: Vec<usize> = (0..record.len()).filter(|&i| record.close[i].is_some()).collect();
    let Some(&first) = present.first() else {
        return Err(Error::data(format!("{}: every close is missing", record.ticker)));
    };
    let mut report = RepairReport { leading_dropped: first, ..Default::default() };
    let mut close: Vec<f64> = Vec::with_capacity(record.len() - first);
    let mut long_gaps = 0;
    let mut i = first;
    while i < record.len() {
        match record.close[i] {
            Some(c) => {
                close.push(c);
                i += 1;
            }
            None => {
                let start = i;
                while i < record.len() && record.close[i].is_none() {
                    i += 1;
                }
                let gap = i - start;
                report.longest_gap = report.longest_gap.max(gap);
                let before = close[close.len() - 1];
                match record.close.get(i).copied().flatten() {
                    Some(after) if gap <= cfg.max_interp_gap => {
                        report.interpolated_gaps += 1;
                        for k in 1..=gap {
                            close.push(before + (after - before) * k as f64 / (gap + 1) as f64);
                        }
                    }
                    _ => {
                        report.forward_filled_gaps += 1;
                        if gap > cfg.max_interp_gap {
                            long_gaps += 1;
                        }
                        close.extend(std::iter::repeat_n(before, gap));
                    }
                }
            }
        }
    }
    report.exclude = long_gaps > cfg.max_long_gaps || report.longest_gap > cfg.max_gap;
    let repaired = StockRecord {
        ticker: record.ticker.clone(),
        dates: record.dates[first..].to_vec(),
        close: close.into_iter().map(Some).collect(),
        industry_id: record.industry_id,
        board: record.board,
    };
    Ok((repaired, report))
}

/// Removes the first `n_days` trading days; `None` when fewer remain.
pub fn drop_ipo_head(record: &StockRecord, n_days: usize) -> Option<StockRecord> {
    if record.len() < n_days {
        return None;
    }
    Some(StockRecord {
        ticker: record.ticker.clone(),
        dates: record.dates[n_days..].to_vec(),
        close: record.close[n_days..].to_vec(),
        industry_id: record.industry_id,
        board: record.board,
    })
}

/// Applies cumulative adjustment factors (`adjusted = close · factor`).
pub fn apply_adjustment(close: &[f64], factors: &[f64]) -> Result<Vec<f64>> {
    crate::error::check_len(close.len(), factors.len())?;
    Ok(close.iter().zip(factors).map(|(c, f)| c * f).collect())
}

pub const SCALE_FLOOR: f64 = 1e-8;

/// Z-score statistics of log prices.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub mean_log: f64,
    pub scale: f64,
}

/// `(ln p − μ) / s` with population standard deviation `s ≥ 1e-8`.
pub fn normalize_window(raw: &[f64]) -> Result<(Vec<f64>, NormStats)> {
    if raw.is_empty() {
        return Err(Error::Empty("window".into()));
    }
    if let Some(p) = raw.iter().find(|p| !(**p > 0.0 && p.is_finite())) {
        return Err(Error::data(format!("nonpositive price {p} in window")));
    }
    let logs: Vec<f64> = raw.iter().map(|p| p.ln()).collect();
    let n = logs.len() as f64;
    // shifting by the first value makes a constant window exactly zero
    let mean_log = logs[0] + logs.iter().map(|l| l - logs[0]).sum::<f64>() / n;
    let sd = (logs.iter().map(|l| (l - mean_log).powi(2)).sum::<f64>() / n).sqrt();
    let scale = sd.max(SCALE_FLOOR);
    Ok((logs.iter().map(|l| (l - mean_log) / scale).collect(), NormStats { mean_log, scale }))
}

pub fn denormalize(values: &[f64], stats: &NormStats) -> Vec<f64> {
    values.iter().map(|v| (v * stats.scale + stats.mean_log).exp()).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeriesWindow {
    pub ticker: String,
    pub start_date: NaiveDate,
    pub values: Vec<f64>,
    /// Absent for synthetic windows.
    pub stats: Option<NormStats>,
    pub industry_id: usize,
    pub board: Board,
    pub split: Split,
    #[serde(default)]
    pub synthetic: bool,
}

impl SeriesWindow {
    pub fn condition(&self) -> Condition {
        Condition::labels(self.industry_id, self.board.index())
    }
}

/// Number of windows for a series of length `n`.
pub fn window_count(n: usize, window: usize, step: usize) -> usize {
    if n < window || step == 0 {
        0
    } else {
        (n - window) / step + 1
    }
}

/// Windows at offsets `0, step, 2·step, …`, each normalized independently.
/// All are initially labelled [`Split::Train`].
pub fn make_windows(record: &StockRecord, window: usize, step: usize) -> Result<Vec<SeriesWindow>> {
    if window == 0 || step == 0 {
        return Err(Error::domain("window length and step must be positive"));
    }
    if record.len() < window {
        return Err(Error::data(format!(
            "{}: {} days is shorter than window {window}",
            record.ticker,
            record.len()
        )));
    }
    let close = record
        .complete_closes()
        .ok_or_else(|| Error::data(format!("{}: unrepaired gaps", record.ticker)))?;
    (0..window_count(record.len(), window, step))
        .map(|k| {
            let off = k * step;
            let (values, stats) = normalize_window(&close[off..off + window])?;
            Ok(SeriesWindow {
                ticker: record.ticker.clone(),
                start_date: record.dates[off],
                values,
                stats: Some(stats),
                industry_id: record.industry_id,
                board: record.board,
                split: Split::Train,
                synthetic: false,
            })
        })
        .collect()
}

/// Chronological per-ticker split: the earliest `⌈fraction · n⌉` windows of
/// each ticker go to train. Both halves come back in (ticker, date) order.
pub fn split_train_test(windows: &[SeriesWindow], train_fraction: f64) -> (Vec<SeriesWindow>, Vec<SeriesWindow>) {
    let mut by_ticker: BTreeMap<&str, Vec<&SeriesWindow>> = BTreeMap::new();
    for w in windows {
        by_ticker.entry(w.ticker.as_str()).or_default().push(w);
    }
    let (mut train, mut test) = (Vec::new(), Vec::new());
    for (_, mut ws) in by_ticker {
        ws.sort_by_key(|w| w.start_date);
        let n_train = (train_fraction * ws.len() as f64 - 1e-9).ceil().max(0.0) as usize;
        for (i, w) in ws.into_iter().enumerate() {
            let mut w = w.clone();
            if i < n_train {
                w.split = Split::Train;
                train.push(w);
            } else {
                w.split = Split::Test;
                test.push(w);
            }
        }
    }
    (train, test)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IngestConfig {
    pub window: usize,
    pub step: usize,
    pub ipo_days: usize,
    pub train_fraction: f64,
    pub repair: RepairConfig,
}

impl Default for IngestConfig {
    fn default() -> Self {
        Self { window: 60, step: 20, ipo_days: 5, train_fraction: 0.8, repair: RepairConfig::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Exclusion {
    pub ticker: String,
    pub reason: String,
}

impl Exclusion {
    fn new(ticker: &str, reason: impl Into<String>) -> Self {
        Self { ticker: ticker.to_string(), reason: reason.into() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RepairEntry {
    pub ticker: String,
    #[serde(flatten)]
    pub report: RepairReport,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub tickers: usize,
    pub windows: usize,
    pub train_windows: usize,
    pub test_windows: usize,
    pub synthetic_windows: usize,
    pub per_board: BTreeMap<String, usize>,
    pub per_industry: BTreeMap<String, usize>,
    pub repairs: Vec<RepairEntry>,
    pub exclusions: Vec<Exclusion>,
}

impl Manifest {
    /// Recomputes the count fields from a window list.
    pub fn recount(&mut self, windows: &[SeriesWindow]) {
        self.windows = windows.len();
        self.train_windows = windows.iter().filter(|w| w.split == Split::Train).count();
        self.test_windows = self.windows - self.train_windows;
        self.synthetic_windows = windows.iter().filter(|w| w.synthetic).count();
        self.per_board.clear();
        self.per_industry.clear();
        for w in windows {
            *self.per_board.entry(w.board.name().to_string()).or_default() += 1;
            *self.per_industry.entry(w.industry_id.to_string()).or_default() += 1;
        }
        self.tickers = windows.iter().map(|w| w.ticker.as_str()).collect::<BTreeSet<_>>().len();
    }
}

/// Full pipeline from parsed rows to labelled windows.
pub fn ingest(rows: &[PriceRow], cfg: &IngestConfig, denylist: &BTreeSet<String>) -> Result<(Vec<SeriesWindow>, Manifest)> {
    let (records, mut exclusions) = group_records(rows);
    let first_date = rows.iter().map(|r| r.date).min();
    let mut manifest = Manifest::default();
    let mut windows = Vec::new();
    for record in records {
        if denylist.contains(&record.ticker) {
            exclusions.push(Exclusion::new(&record.ticker, "denylisted"));
            continue;
        }
        let (repaired, report) = match repair_suspensions(&record, &cfg.repair) {
            Ok(r) => r,
            Err(e) => {
                exclusions.push(Exclusion::new(&record.ticker, e.to_string()));
                continue;
            }
        };
        let excluded = report.exclude;
        if report.interpolated_gaps + report.forward_filled_gaps > 0 || report.leading_dropped > 0 {
            manifest.repairs.push(RepairEntry { ticker: record.ticker.clone(), report });
        }
        if excluded {
            exclusions.push(Exclusion::new(&record.ticker, "frequent or overlong suspension"));
            continue;
        }
        // listings that begin inside the sample are treated as new issues
        let listed_in_sample = first_date.is_some_and(|d| repaired.dates[0] > d);
        let trimmed = if listed_in_sample {
            match drop_ipo_head(&repaired, cfg.ipo_days) {
                Some(r) => r,
                None => {
                    exclusions.push(Exclusion::new(&record.ticker, "shorter than IPO trim"));
                    continue;
                }
            }
        } else {
            repaired
        };
        if trimmed.len() < cfg.window {
            exclusions.push(Exclusion::new(&record.ticker, format!("only {} usable days", trimmed.len())));
            continue;
        }
        windows.extend(make_windows(&trimmed, cfg.window, cfg.step)?);
    }
    let (mut train, test) = split_train_test(&windows, cfg.train_fraction);
    train.extend(test);
    train.sort_by(|a, b| (&a.ticker, a.start_date).cmp(&(&b.ticker, b.start_date)));
    exclusions.sort_by(|a, b| a.ticker.cmp(&b.ticker));
    manifest.exclusions = exclusions;
    manifest.recount(&train);
    Ok((train, manifest))
}

pub fn write_windows_jsonl<W: std::io::Write>(mut out: W, windows: &[SeriesWindow]) -> Result<()> {
    for w in windows {
        serde_json::to_writer(&mut out, w)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_windows_jsonl<R: std::io::BufRead>(input: R) -> Result<Vec<SeriesWindow>> {
    let mut out = Vec::new();
    for (i, line) in input.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| Error::data(format!("window store line {}: {e}", i + 1)))?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn day(i: i64) -> NaiveDate {
        NaiveDate::from_ymd_opt(2020, 1, 1).unwrap() + chrono::Duration::days(i)
    }

    fn record(close: Vec<Option<f64>>) -> StockRecord {
        StockRecord {
            ticker: "600000".into(),
            dates: (0..close.len() as i64).map(day).collect(),
            close,
            industry_id: 7,
            board: Board::MainBoard,
        }
    }

    fn full(n: usize) -> StockRecord {
        record((0..n).map(|i| Some(10.0 + (i as f64 * 0.3).sin())).collect())
    }

    #[test]
    fn board_prefixes() {
        assert_eq!(classify_board("300001").unwrap(), Board::ChiNext);
        assert_eq!(classify_board("688001").unwrap(), Board::Star);
        assert_eq!(classify_board("600519").unwrap(), Board::MainBoard);
        assert_eq!(classify_board("000001").unwrap(), Board::MainBoard);
        assert_eq!(classify_board("002415").unwrap(), Board::MainBoard);
        assert_eq!(classify_board("830799").unwrap(), Board::Bse);
        assert_eq!(classify_board("870299").unwrap(), Board::Bse);
        assert!(classify_board("430047").is_err());
        assert!(classify_board("123456").is_err());
        assert!(classify_board("AAPL").is_err());
        assert_eq!(classify_board("600000.XSHG").unwrap(), Board::MainBoard);
    }

    #[test]
    fn short_gap_is_interpolated() {
        let r = record(vec![Some(100.0), None, None, Some(106.0)]);
        let (out, rep) = repair_suspensions(&r, &RepairConfig::default()).unwrap();
        let closes = out.complete_closes().unwrap();
        for (a, b) in closes.iter().zip([100.0, 102.0, 104.0, 106.0]) {
            assert!((a - b).abs() < 1e-12);
        }
        assert_eq!((rep.interpolated_gaps, rep.forward_filled_gaps), (1, 0));
    }

    #[test]
    fn long_gap_is_forward_filled() {
        let mut c = vec![Some(100.0)];
        c.extend(std::iter::repeat_n(None, 6));
        c.push(Some(120.0));
        let (out, rep) = repair_suspensions(&record(c), &RepairConfig::default()).unwrap();
        let closes = out.complete_closes().unwrap();
        assert_eq!(&closes[1..7], &[100.0; 6]);
        assert_eq!(closes[7], 120.0);
        assert_eq!((rep.interpolated_gaps, rep.forward_filled_gaps, rep.longest_gap), (0, 1, 6));
        assert!(!rep.exclude);
    }

    #[test]
    fn gapless_record_unchanged_and_all_missing_rejected() {
        let r = full(10);
        assert_eq!(repair_suspensions(&r, &RepairConfig::default()).unwrap().0, r);
        assert!(repair_suspensions(&record(vec![None, None]), &RepairConfig::default()).is_err());
    }

    #[test]
    fn overlong_or_frequent_suspension_excludes() {
        let mut c = vec![Some(10.0)];
        c.extend(std::iter::repeat_n(None, 61));
        c.push(Some(11.0));
        assert!(repair_suspensions(&record(c), &RepairConfig::default()).unwrap().1.exclude);

        let mut c = vec![Some(10.0)];
        for _ in 0..4 {
            c.extend(std::iter::repeat_n(None, 6));
            c.push(Some(10.5));
        }
        assert!(repair_suspensions(&record(c), &RepairConfig::default()).unwrap().1.exclude);
    }

    #[test]
    fn leading_and_trailing_missing() {
        let r = record(vec![None, Some(5.0), Some(6.0), None]);
        let (out, rep) = repair_suspensions(&r, &RepairConfig::default()).unwrap();
        assert_eq!(out.complete_closes().unwrap(), vec![5.0, 6.0, 6.0]);
        assert_eq!(out.dates[0], day(1));
        assert_eq!(rep.leading_dropped, 1);
    }

    #[test]
    fn ipo_trim() {
        let r = full(10);
        assert_eq!(drop_ipo_head(&r, 0).unwrap(), r);
        let t = drop_ipo_head(&r, 5).unwrap();
        assert_eq!(t.len(), 5);
        assert_eq!(t.dates[0], day(5));
        assert!(drop_ipo_head(&full(4), 5).is_none());
    }

    #[test]
    fn window_counts() {
        assert_eq!(make_windows(&full(60), 60, 20).unwrap().len(), 1);
        let ws = make_windows(&full(100), 60, 20).unwrap();
        assert_eq!(ws.len(), 3);
        assert_eq!(ws.iter().map(|w| w.start_date).collect::<Vec<_>>(), vec![day(0), day(20), day(40)]);
        assert!(make_windows(&full(59), 60, 20).is_err());
    }

    #[test]
    fn normalization_cases() {
        let (v, s) = normalize_window(&[5.0; 8]).unwrap();
        assert_eq!(v, vec![0.0; 8]);
        assert_eq!(s, NormStats { mean_log: 5f64.ln(), scale: SCALE_FLOOR });
        let raw: Vec<f64> = (0..60).map(|i| 20.0 + (i as f64).sqrt()).collect();
        let (v, _) = normalize_window(&raw).unwrap();
        let mean = v.iter().sum::<f64>() / 60.0;
        let sd = (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / 60.0).sqrt();
        assert!(mean.abs() < 1e-12 && (sd - 1.0).abs() < 1e-12);
        assert!(normalize_window(&[1.0, 0.0]).is_err());
    }

    fn windows_for(ticker: &str, n: usize) -> Vec<SeriesWindow> {
        (0..n)
            .map(|i| SeriesWindow {
                ticker: ticker.into(),
                start_date: day(20 * i as i64),
                values: vec![0.0],
                stats: None,
                industry_id: 0,
                board: Board::MainBoard,
                split: Split::Train,
                synthetic: false,
            })
            .rev()
            .collect()
    }

    #[test]
    fn chronological_split() {
        let (tr, te) = split_train_test(&windows_for("600000", 5), 0.8);
        assert_eq!((tr.len(), te.len()), (4, 1));
        let (tr, te) = split_train_test(&windows_for("600000", 1), 0.8);
        assert_eq!((tr.len(), te.len()), (1, 0));
        let (tr, te) = split_train_test(&windows_for("600000", 10), 0.8);
        assert_eq!(tr.len(), 8);
        let latest_train = tr.iter().map(|w| w.start_date).max().unwrap();
        assert!(te.iter().all(|w| w.start_date > latest_train));
        assert!(te.iter().all(|w| w.split == Split::Test));
    }

    #[test]
    fn csv_parsing_and_errors() {
        let text = "date,ticker,close,industry_id\n2020-01-02,600000,10.5,3\n2020-01-03,600000,,3\n";
        let rows = read_price_csv(text.as_bytes()).unwrap();
        assert_eq!(rows.len(), 2);
        assert_eq!(rows[1].close, None);
        let bad = "date,ticker,close,industry_id\n2020-01-02,600000,abc,3\n";
        let err = read_price_csv(bad.as_bytes()).unwrap_err().to_string();
        assert!(err.contains("line 2"), "{err}");
        assert!(read_price_csv("date,ticker,close,industry_id\n".as_bytes()).is_err());
        assert!(read_price_csv("".as_bytes()).is_err());
    }

    #[test]
    fn ingest_end_to_end() {
        let mut text = String::from("date,ticker,close,industry_id\n");
        for i in 0..100 {
            text.push_str(&format!("{},300001,{},5\n", day(i), 10.0 + i as f64 * 0.1));
            text.push_str(&format!("{},999999,{},5\n", day(i), 10.0));
        }
        let rows = read_price_csv(text.as_bytes()).unwrap();
        let (ws, m) = ingest(&rows, &IngestConfig::default(), &BTreeSet::new()).unwrap();
        assert_eq!(ws.len(), 3);
        assert_eq!(m.per_board.get("chinext"), Some(&3));
        assert_eq!(m.exclusions.len(), 1);
        assert_eq!((m.train_windows, m.test_windows), (3, 0));
    }

    proptest! {
        #[test]
        fn repair_keeps_present_closes(mask in proptest::collection::vec(any::<bool>(), 2..80), seed in 0u64..1000) {
            let closes: Vec<Option<f64>> = mask
                .iter()
                .enumerate()
                .map(|(i, &keep)| keep.then(|| 5.0 + ((i as u64 * 31 + seed) % 97) as f64))
                .collect();
            prop_assume!(closes.iter().any(Option::is_some));
            let r = record(closes.clone());
            let (out, rep) = repair_suspensions(&r, &RepairConfig::default()).unwrap();
            let filled = out.complete_closes().unwrap();
            for (i, c) in closes.iter().enumerate().skip(rep.leading_dropped) {
                if let Some(c) = c {
                    prop_assert_eq!(filled[i - rep.leading_dropped], *c);
                }
            }
        }

        #[test]
        fn window_count_formula(n in 1usize..400, window in 1usize..80, step in 1usize..40) {
            prop_assume!(n >= window);
            let r = full(n);
            let ws = make_windows(&r, window, step).unwrap();
            prop_assert_eq!(ws.len(), (n - window) / step + 1);
        }

        #[test]
        fn denormalize_inverts(raw in proptest::collection::vec(0.5f64..500.0, 2..70)) {
            let (v, s) = normalize_window(&raw).unwrap();
            for (a, b) in denormalize(&v, &s).iter().zip(&raw) {
                prop_assert!((a - b).abs() <= 1e-9 * b);
            }
        }
    }
}
