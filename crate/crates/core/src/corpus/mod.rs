//! Headline and price ingestion, trading-day bags, chronological splits and
//! split statistics.

mod synth;

pub use synth::{binomial_majority_prob, synthesize, GroundTruth, SynthCorpus, SynthSpec};

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use chrono::{DateTime, Duration, NaiveDate, NaiveDateTime, Utc};

use crate::error::{Error, Result};
use crate::textprep::{encode_title, tokenize, Stopwords, TitleSeq, Vocabulary};

#[derive(Debug, Clone, PartialEq)]
pub struct NewsItem {
    pub timestamp: DateTime<Utc>,
    pub title: String,
    /// `tokenize(title)`; stopwords are removed later, at vocabulary/encoding time.
    pub tokens: Vec<String>,
}

impl NewsItem {
    pub fn new(timestamp: DateTime<Utc>, title: impl Into<String>) -> Self {
        let title = title.into();
        let tokens = tokenize(&title);
        NewsItem {
            timestamp,
            title,
            tokens,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ParseMode {
    #[default]
    Strict,
    Lenient,
}

#[derive(Debug, Clone, Default)]
pub struct NewsFile {
    pub items: Vec<NewsItem>,
    /// Malformed lines skipped in lenient mode.
    pub skipped: usize,
}

fn parse_timestamp(s: &str) -> Option<DateTime<Utc>> {
    if let Ok(t) = DateTime::parse_from_rfc3339(s) {
        return Some(t.with_timezone(&Utc));
    }
    for fmt in ["%Y-%m-%dT%H:%M:%S", "%Y-%m-%d %H:%M:%S"] {
        if let Ok(t) = NaiveDateTime::parse_from_str(s, fmt) {
            return Some(t.and_utc());
        }
    }
    NaiveDate::parse_from_str(s, "%Y-%m-%d")
        .ok()
        .and_then(|d| d.and_hms_opt(0, 0, 0))
        .map(|t| t.and_utc())
}

fn parse_news_line(line: &str) -> std::result::Result<NewsItem, String> {
    let (ts, title) = line.split_once('\t').ok_or("missing tab separator")?;
    let timestamp = parse_timestamp(ts.trim())
        .ok_or_else(|| format!("malformed timestamp {:?}", ts.trim()))?;
    let title = title.trim();
    if title.is_empty() {
        return Err("empty headline".into());
    }
    Ok(NewsItem::new(timestamp, title))
}

/// Reads the headline TSV (`timestamp<TAB>headline`), skipping blank and `#` lines.
pub fn parse_news(path: &Path, mode: ParseMode) -> Result<NewsFile> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = NewsFile::default();
    for (idx, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        match parse_news_line(line) {
            Ok(item) => out.items.push(item),
            Err(msg) => match mode {
                ParseMode::Strict => return Err(Error::parse(path, idx + 1, msg)),
                ParseMode::Lenient => out.skipped += 1,
            },
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct PriceBar {
    pub date: NaiveDate,
    pub open: f64,
    pub high: f64,
    pub low: f64,
    pub close: f64,
    pub adj_close: f64,
    pub volume: u64,
}

const PRICE_COLUMNS: [&str; 7] = ["Date", "Open", "High", "Low", "Close", "Adj Close", "Volume"];

/// Reads a Yahoo Finance daily export; returns bars in ascending date order.
pub fn parse_prices(path: &Path) -> Result<Vec<PriceBar>> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| Error::format(path, e.to_string()))?;
    let headers = reader
        .headers()
        .map_err(|e| Error::format(path, e.to_string()))?
        .clone();
    let mut col = [0usize; 7];
    for (slot, name) in col.iter_mut().zip(PRICE_COLUMNS) {
        *slot = headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::format(path, format!("missing column {name:?}")))?;
    }

    let mut bars = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line() as usize);
            Error::parse(path, line, e.to_string())
        })?;
        let line = record.position().map_or(0, |p| p.line() as usize);
        let field = |i: usize| record.get(col[i]).unwrap_or("");
        let num = |i: usize| -> Result<f64> {
            field(i)
                .parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| {
                    Error::parse(
                        path,
                        line,
                        format!("non-numeric {} {:?}", PRICE_COLUMNS[i], field(i)),
                    )
                })
        };
        let date = NaiveDate::parse_from_str(field(0), "%Y-%m-%d")
            .map_err(|_| Error::parse(path, line, format!("bad date {:?}", field(0))))?;
        let volume = match field(6).parse::<u64>() {
            Ok(v) => v,
            Err(_) => {
                let v = num(6)?;
                if v < 0.0 {
                    return Err(Error::parse(path, line, "negative volume"));
                }
                v.round() as u64
            }
        };
        let bar = PriceBar {
            date,
            open: num(1)?,
            high: num(2)?,
            low: num(3)?,
            close: num(4)?,
            adj_close: num(5)?,
            volume,
        };
        if !(bar.close > 0.0
            && bar.low <= bar.open.min(bar.close)
            && bar.open.max(bar.close) <= bar.high)
        {
            return Err(Error::parse(path, line, "inconsistent OHLC values"));
        }
        bars.push(bar);
    }
    bars.sort_by_key(|b| b.date);
    if let Some(w) = bars.windows(2).find(|w| w[0].date == w[1].date) {
        return Err(Error::format(path, format!("duplicate date {}", w[0].date)));
    }
    Ok(bars)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum PriceField {
    #[default]
    Close,
    AdjClose,
}

impl FromStr for PriceField {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "close" => Ok(PriceField::Close),
            "adj_close" | "adj-close" => Ok(PriceField::AdjClose),
            _ => Err(Error::arg(format!("unknown price field {s:?} (expected close or adj_close)"))),
        }
    }
}

impl PriceField {
    fn of(self, bar: &PriceBar) -> f64 {
        match self {
            PriceField::Close => bar.close,
            PriceField::AdjClose => bar.adj_close,
        }
    }
}

/// Label of day k is 1 iff its close is strictly above the previous bar's close.
/// The first bar gets no label.
pub fn derive_labels(bars: &[PriceBar], field: PriceField) -> Result<BTreeMap<NaiveDate, u8>> {
    if bars.len() < 2 {
        return Err(Error::arg(format!(
            "need at least 2 price bars to derive labels, got {}",
            bars.len()
        )));
    }
    Ok(bars
        .windows(2)
        .map(|w| (w[1].date, u8::from(field.of(&w[1]) > field.of(&w[0]))))
        .collect())
}

/// Headlines of one trading day before encoding.
#[derive(Debug, Clone, PartialEq)]
pub struct DayNews {
    pub day: NaiveDate,
    pub items: Vec<NewsItem>,
    pub label: u8,
}

#[derive(Debug, Clone, Default)]
pub struct Assignment {
    pub days: Vec<DayNews>,
    /// Headlines dated after the last trading day.
    pub dropped_late: usize,
    /// Headlines that landed on a day without a label (the first bar).
    pub dropped_unlabeled: usize,
}

/// Assigns every headline to the first trading day on or after its calendar date
/// (shifted by `lag_days`). Days without headlines or without a label are dropped.
pub fn build_bags(
    news: Vec<NewsItem>,
    bars: &[PriceBar],
    labels: &BTreeMap<NaiveDate, u8>,
    lag_days: i64,
) -> Assignment {
    let trading: Vec<NaiveDate> = bars.iter().map(|b| b.date).collect();
    let mut grouped: BTreeMap<NaiveDate, Vec<NewsItem>> = BTreeMap::new();
    let mut out = Assignment::default();
    for item in news {
        let date = item.timestamp.date_naive() + Duration::days(lag_days);
        let slot = trading.partition_point(|d| *d < date);
        match trading.get(slot) {
            Some(day) => grouped.entry(*day).or_default().push(item),
            None => out.dropped_late += 1,
        }
    }
    for (day, mut items) in grouped {
        match labels.get(&day) {
            Some(&label) => {
                items.sort_by_key(|n| n.timestamp);
                out.days.push(DayNews { day, items, label });
            }
            None => out.dropped_unlabeled += items.len(),
        }
    }
    out
}

/// Keeps headlines containing at least one keyword token.
pub fn filter_relevant(news: Vec<NewsItem>, keywords: &HashSet<String>) -> Vec<NewsItem> {
    news.into_iter()
        .filter(|n| n.tokens.iter().any(|t| keywords.contains(t)))
        .collect()
}

/// One trading day of encoded headlines with its trend label.
#[derive(Debug, Clone, PartialEq)]
pub struct Bag {
    pub day: NaiveDate,
    pub instances: Vec<TitleSeq>,
    /// Raw headline per instance, for reports only.
    pub headlines: Vec<String>,
    pub label: u8,
}

impl Bag {
    pub fn len(&self) -> usize {
        self.instances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.instances.is_empty()
    }
}

/// Removes stopwords and encodes each headline; headlines left empty are dropped,
/// as are days left without headlines.
pub fn encode_bags(days: &[DayNews], vocab: &Vocabulary, stopwords: &Stopwords) -> Vec<Bag> {
    days.iter()
        .filter_map(|d| {
            let (instances, headlines): (Vec<TitleSeq>, Vec<String>) = d
                .items
                .iter()
                .filter_map(|n| {
                    encode_title(&stopwords.filter(&n.tokens), vocab).map(|s| (s, n.title.clone()))
                })
                .unzip();
            (!instances.is_empty()).then(|| Bag {
                day: d.day,
                instances,
                headlines,
                label: d.label,
            })
        })
        .collect()
}

pub trait Dated {
    fn day(&self) -> NaiveDate;
    fn instance_count(&self) -> usize;
}

impl Dated for DayNews {
    fn day(&self) -> NaiveDate {
        self.day
    }
    fn instance_count(&self) -> usize {
        self.items.len()
    }
}

impl Dated for Bag {
    fn day(&self) -> NaiveDate {
        self.day
    }
    fn instance_count(&self) -> usize {
        self.instances.len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum SplitName {
    Train,
    Val,
    Test,
}

impl SplitName {
    pub const ALL: [SplitName; 3] = [SplitName::Train, SplitName::Val, SplitName::Test];

    pub fn as_str(self) -> &'static str {
        match self {
            SplitName::Train => "train",
            SplitName::Val => "val",
            SplitName::Test => "test",
        }
    }
}

impl fmt::Display for SplitName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for SplitName {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(SplitName::Train),
            "val" | "validation" => Ok(SplitName::Val),
            "test" => Ok(SplitName::Test),
            _ => Err(Error::arg(format!("unknown split {s:?}"))),
        }
    }
}

/// Chronological train / validation / test partition.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset<B> {
    pub train: Vec<B>,
    pub val: Vec<B>,
    pub test: Vec<B>,
    pub train_end: NaiveDate,
    pub val_end: NaiveDate,
}

impl<B> Dataset<B> {
    pub fn get(&self, split: SplitName) -> &[B] {
        match split {
            SplitName::Train => &self.train,
            SplitName::Val => &self.val,
            SplitName::Test => &self.test,
        }
    }

    pub fn len(&self) -> usize {
        self.train.len() + self.val.len() + self.test.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn map<C>(&self, f: impl Fn(&[B]) -> Vec<C>) -> Dataset<C> {
        Dataset {
            train: f(&self.train),
            val: f(&self.val),
            test: f(&self.test),
            train_end: self.train_end,
            val_end: self.val_end,
        }
    }
}

impl<B: Dated> Dataset<B> {
    pub fn stats(&self) -> Vec<(SplitName, Option<SplitStats>)> {
        SplitName::ALL
            .iter()
            .map(|&s| {
                let sizes: Vec<usize> = self.get(s).iter().map(Dated::instance_count).collect();
                (s, stats(&sizes))
            })
            .collect()
    }
}

impl Dataset<DayNews> {
    pub fn encode(&self, vocab: &Vocabulary, stopwords: &Stopwords) -> Dataset<Bag> {
        self.map(|days| encode_bags(days, vocab, stopwords))
    }

    /// Training titles with stopwords kept, for vocabulary counting.
    pub fn train_titles(&self) -> Vec<Vec<String>> {
        self.train
            .iter()
            .flat_map(|d| d.items.iter().map(|n| n.tokens.clone()))
            .collect()
    }
}

/// Train is `day <= train_end`, validation `train_end < day <= val_end`, test the rest.
pub fn split<B: Dated>(bags: Vec<B>, train_end: NaiveDate, val_end: NaiveDate) -> Result<Dataset<B>> {
    if train_end >= val_end {
        return Err(Error::arg(format!(
            "train end {train_end} must precede validation end {val_end}"
        )));
    }
    let first = bags
        .iter()
        .map(Dated::day)
        .min()
        .ok_or_else(|| Error::arg("no bags to split"))?;
    if train_end < first {
        return Err(Error::arg(format!(
            "train end {train_end} precedes the first bag {first}"
        )));
    }
    let mut bags = bags;
    bags.sort_by_key(Dated::day);
    let mut ds = Dataset {
        train: Vec::new(),
        val: Vec::new(),
        test: Vec::new(),
        train_end,
        val_end,
    };
    for b in bags {
        let d = b.day();
        if d <= train_end {
            ds.train.push(b);
        } else if d <= val_end {
            ds.val.push(b);
        } else {
            ds.test.push(b);
        }
    }
    Ok(ds)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SplitStats {
    /// Number of bags.
    pub count: usize,
    /// Total headlines, Σ n_k.
    pub news: usize,
    pub mean: f64,
    /// Sample standard deviation (n − 1 denominator); 0 for a single bag.
    pub std: f64,
    pub min: usize,
    pub max: usize,
    pub histogram: BTreeMap<usize, usize>,
}

/// Summary of per-bag instance counts; `None` for an empty split.
pub fn stats(sizes: &[usize]) -> Option<SplitStats> {
    let n = sizes.len();
    if n == 0 {
        return None;
    }
    let news: usize = sizes.iter().sum();
    let mean = news as f64 / n as f64;
    let ss: f64 = sizes.iter().map(|&s| (s as f64 - mean).powi(2)).sum();
    let std = if n > 1 { (ss / (n - 1) as f64).sqrt() } else { 0.0 };
    let mut histogram = BTreeMap::new();
    for &s in sizes {
        *histogram.entry(s).or_insert(0) += 1;
    }
    Some(SplitStats {
        count: n,
        news,
        mean,
        std,
        min: *sizes.iter().min()?,
        max: *sizes.iter().max()?,
        histogram,
    })
}

/// `split,count,mean,std,min,max`; absent splits keep only the count (0).
pub fn write_stats_csv<W: Write>(mut w: W, rows: &[(SplitName, Option<SplitStats>)]) -> std::io::Result<()> {
    writeln!(w, "split,count,mean,std,min,max")?;
    for (name, s) in rows {
        match s {
            Some(s) => writeln!(
                w,
                "{name},{},{:.6},{:.6},{},{}",
                s.count, s.mean, s.std, s.min, s.max
            )?,
            None => writeln!(w, "{name},0,,,,")?,
        }
    }
    Ok(())
}

pub fn write_histogram_csv<W: Write>(mut w: W, s: &SplitStats) -> std::io::Result<()> {
    writeln!(w, "n_instances,frequency")?;
    for (k, v) in &s.histogram {
        writeln!(w, "{k},{v}")?;
    }
    Ok(())
}

/// Input files and alignment settings for one corpus.
#[derive(Debug, Clone, PartialEq)]
pub struct CorpusSource {
    pub news: PathBuf,
    pub prices: PathBuf,
    /// Word list for the relevance filter; every headline is kept when absent.
    pub keywords: Option<PathBuf>,
    pub mode: ParseMode,
    pub price_field: PriceField,
    pub lag_days: i64,
    pub train_end: NaiveDate,
    pub val_end: NaiveDate,
}

#[derive(Debug, Clone)]
pub struct LoadedCorpus {
    pub days: Dataset<DayNews>,
    pub skipped_lines: usize,
    pub filtered_out: usize,
    pub dropped_late: usize,
    pub dropped_unlabeled: usize,
}

/// Parse, filter, align to trading days, label and split.
pub fn load_corpus(src: &CorpusSource) -> Result<LoadedCorpus> {
    let bars = parse_prices(&src.prices)?;
    let labels = derive_labels(&bars, src.price_field)?;
    let news = parse_news(&src.news, src.mode)?;
    let total = news.items.len();
    let items = match &src.keywords {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            let keywords: HashSet<String> = text
                .lines()
                .map(str::trim)
                .filter(|l| !l.is_empty() && !l.starts_with('#'))
                .map(str::to_lowercase)
                .collect();
            filter_relevant(news.items, &keywords)
        }
        None => news.items,
    };
    let filtered_out = total - items.len();
    let assignment = build_bags(items, &bars, &labels, src.lag_days);
    if assignment.days.is_empty() {
        return Err(Error::format(&src.news, "no headline falls on a labelled trading day"));
    }
    Ok(LoadedCorpus {
        days: split(assignment.days, src.train_end, src.val_end)?,
        skipped_lines: news.skipped,
        filtered_out,
        dropped_late: assignment.dropped_late,
        dropped_unlabeled: assignment.dropped_unlabeled,
    })
}
