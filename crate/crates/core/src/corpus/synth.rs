//! Planted-polarity datasets: every headline is drawn from either a positive or a
//! negative token pool, and a day goes up iff most of its headlines are positive.
//! The per-headline polarities are kept apart from the bags in [`GroundTruth`].

use std::collections::{BTreeMap, HashSet};
use std::io::Write;

use chrono::{Datelike, Duration, NaiveDate, Weekday};

use super::{split, Dataset, DayNews, NewsItem, PriceBar};
use crate::error::{Error, Result};
use crate::tensor::Rng;
use crate::textprep::tokenize;

#[derive(Debug, Clone, PartialEq)]
pub struct SynthSpec {
    pub n_train: usize,
    pub n_val: usize,
    pub n_test: usize,
    /// Headline counts are drawn uniformly from the odd values in this range.
    pub min_instances: usize,
    pub max_instances: usize,
    pub min_tokens: usize,
    pub max_tokens: usize,
    pub positive_pool: Vec<String>,
    pub negative_pool: Vec<String>,
    /// Probability that a day is dominated by positive headlines.
    pub up_prob: f64,
    /// Probability that a headline follows its day's dominant polarity.
    pub dominant_frac: f64,
    /// First price bar; bags start on the next weekday.
    pub start: NaiveDate,
    pub seed: u64,
}

impl SynthSpec {
    /// 2000/300/300 bags, 5–15 headlines of 3–6 tokens, 50-token pools, 70/30 mixing.
    pub fn planted(seed: u64) -> Self {
        SynthSpec {
            n_train: 2000,
            n_val: 300,
            n_test: 300,
            min_instances: 5,
            max_instances: 15,
            min_tokens: 3,
            max_tokens: 6,
            positive_pool: (0..50).map(|i| format!("pos{i:03}")).collect(),
            negative_pool: (0..50).map(|i| format!("neg{i:03}")).collect(),
            up_prob: 0.5,
            dominant_frac: 0.7,
            start: NaiveDate::from_ymd_opt(2010, 1, 4).expect("valid date"),
            seed,
        }
    }

    pub fn n_bags(&self) -> usize {
        self.n_train + self.n_val + self.n_test
    }

    fn odd_counts(&self) -> Vec<usize> {
        (self.min_instances..=self.max_instances)
            .filter(|n| n % 2 == 1)
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(Error::arg(format!("synthetic spec: {m}")));
        if self.n_train == 0 || self.n_val == 0 {
            return fail("train and validation sizes must be positive");
        }
        if self.min_instances == 0 || self.odd_counts().is_empty() {
            return fail("instance range must contain an odd count");
        }
        if self.max_instances > 1000 {
            return fail("at most 1000 headlines per day");
        }
        if self.min_tokens == 0 || self.min_tokens > self.max_tokens {
            return fail("token range must be nonempty and start at 1 or more");
        }
        if self.positive_pool.is_empty() || self.negative_pool.is_empty() {
            return fail("token pools must be nonempty");
        }
        let pos: HashSet<&String> = self.positive_pool.iter().collect();
        if self.negative_pool.iter().any(|t| pos.contains(t)) {
            return fail("token pools must be disjoint");
        }
        for t in self.positive_pool.iter().chain(&self.negative_pool) {
            if tokenize(t) != [t.clone()] {
                return fail(&format!("pool token {t:?} is not a single normalized token"));
            }
        }
        if !(0.0..=1.0).contains(&self.up_prob) || !(0.0..=1.0).contains(&self.dominant_frac) {
            return fail("probabilities must lie in [0, 1]");
        }
        Ok(())
    }

    /// Sets one field from a `key = value` pair.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        fn num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
            v.parse()
                .map_err(|_| Error::arg(format!("bad value {v:?} for {key}")))
        }
        let key = key.replace('-', "_");
        match key.as_str() {
            "n_train" => self.n_train = num(&key, value)?,
            "n_val" => self.n_val = num(&key, value)?,
            "n_test" => self.n_test = num(&key, value)?,
            "min_instances" => self.min_instances = num(&key, value)?,
            "max_instances" => self.max_instances = num(&key, value)?,
            "min_tokens" => self.min_tokens = num(&key, value)?,
            "max_tokens" => self.max_tokens = num(&key, value)?,
            "pool_size" => {
                let n: usize = num(&key, value)?;
                self.positive_pool = (0..n).map(|i| format!("pos{i:03}")).collect();
                self.negative_pool = (0..n).map(|i| format!("neg{i:03}")).collect();
            }
            "positive_pool" => self.positive_pool = value.split_whitespace().map(String::from).collect(),
            "negative_pool" => self.negative_pool = value.split_whitespace().map(String::from).collect(),
            "up_prob" => self.up_prob = num(&key, value)?,
            "dominant_frac" => self.dominant_frac = num(&key, value)?,
            "start" => {
                self.start = NaiveDate::parse_from_str(value, "%Y-%m-%d")
                    .map_err(|_| Error::arg(format!("bad start date {value:?}")))?
            }
            "seed" => self.seed = num(&key, value)?,
            _ => return Err(Error::arg(format!("unknown synthetic spec key {key:?}"))),
        }
        Ok(())
    }

    /// Probability that a generated bag is labeled 1, averaged over the count law.
    pub fn expected_positive_rate(&self) -> f64 {
        let counts = self.odd_counts();
        let q = self.dominant_frac;
        counts
            .iter()
            .map(|&n| {
                self.up_prob * binomial_majority_prob(n, q)
                    + (1.0 - self.up_prob) * binomial_majority_prob(n, 1.0 - q)
            })
            .sum::<f64>()
            / counts.len() as f64
    }

    pub fn expected_mean_instances(&self) -> f64 {
        let counts = self.odd_counts();
        counts.iter().sum::<usize>() as f64 / counts.len() as f64
    }
}

/// P(Binomial(n, q) > n/2), by direct summation of the probability mass.
pub fn binomial_majority_prob(n: usize, q: f64) -> f64 {
    let mut total = 0.0;
    let mut coeff = 1.0f64;
    for k in 0..=n {
        if k > 0 {
            coeff = coeff * (n - k + 1) as f64 / k as f64;
        }
        if 2 * k > n {
            total += coeff * q.powi(k as i32) * (1.0 - q).powi((n - k) as i32);
        }
    }
    total
}

/// Hidden per-headline polarity (1 = drawn from the positive pool), by day and position.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct GroundTruth {
    polarity: BTreeMap<NaiveDate, Vec<u8>>,
}

impl GroundTruth {
    pub fn get(&self, day: NaiveDate, index: usize) -> Option<u8> {
        self.polarity.get(&day).and_then(|v| v.get(index)).copied()
    }

    pub fn day(&self, day: NaiveDate) -> Option<&[u8]> {
        self.polarity.get(&day).map(Vec::as_slice)
    }

    pub fn len(&self) -> usize {
        self.polarity.values().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.polarity.is_empty()
    }

    /// CSV `date,instance_index,polarity`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "date,instance_index,polarity")?;
        for (day, pols) in &self.polarity {
            for (i, p) in pols.iter().enumerate() {
                writeln!(w, "{day},{i},{p}")?;
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct SynthCorpus {
    pub spec: SynthSpec,
    pub news: Vec<NewsItem>,
    pub bars: Vec<PriceBar>,
    pub days: Dataset<DayNews>,
    pub truth: GroundTruth,
}

fn next_weekday(mut d: NaiveDate) -> NaiveDate {
    while matches!(d.weekday(), Weekday::Sat | Weekday::Sun) {
        d += Duration::days(1);
    }
    d
}

impl SynthCorpus {
    /// Headline TSV in the ingestion format.
    pub fn write_news<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        for n in &self.news {
            writeln!(w, "{}\t{}", n.timestamp.format("%Y-%m-%dT%H:%M:%SZ"), n.title)?;
        }
        Ok(())
    }

    /// Yahoo-layout price CSV.
    pub fn write_prices<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "Date,Open,High,Low,Close,Adj Close,Volume")?;
        for b in &self.bars {
            writeln!(
                w,
                "{},{},{},{},{},{},{}",
                b.date, b.open, b.high, b.low, b.close, b.adj_close, b.volume
            )?;
        }
        Ok(())
    }

    /// CSV `date,label` for every generated bag.
    pub fn write_labels<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "date,label")?;
        for split in [&self.days.train, &self.days.val, &self.days.test] {
            for d in split {
                writeln!(w, "{},{}", d.day, d.label)?;
            }
        }
        Ok(())
    }
}

pub fn synthesize(spec: &SynthSpec) -> Result<SynthCorpus> {
    spec.validate()?;
    let mut rng = Rng::new(spec.seed);
    let counts = spec.odd_counts();

    let first_day = next_weekday(spec.start);
    let mut bars = vec![PriceBar {
        date: first_day,
        open: 100.0,
        high: 100.0,
        low: 100.0,
        close: 100.0,
        adj_close: 100.0,
        volume: 1_000_000,
    }];
    let mut day = first_day;
    let mut news = Vec::new();
    let mut days = Vec::with_capacity(spec.n_bags());
    let mut truth = GroundTruth::default();

    for _ in 0..spec.n_bags() {
        day = next_weekday(day + Duration::days(1));
        let n = counts[rng.range_inclusive(0, counts.len() - 1)];
        let up_day = rng.bernoulli(spec.up_prob);
        let mut items = Vec::with_capacity(n);
        let mut pols = Vec::with_capacity(n);
        for i in 0..n {
            let positive = if rng.bernoulli(spec.dominant_frac) { up_day } else { !up_day };
            let pool = if positive { &spec.positive_pool } else { &spec.negative_pool };
            let len = rng.range_inclusive(spec.min_tokens, spec.max_tokens);
            let title: Vec<&str> = (0..len)
                .map(|_| pool[rng.range_inclusive(0, pool.len() - 1)].as_str())
                .collect();
            let ts = day.and_hms_opt(9, 0, 0).expect("valid time").and_utc()
                + Duration::minutes(i as i64);
            items.push(NewsItem::new(ts, title.join(" ")));
            pols.push(u8::from(positive));
        }
        let positives = pols.iter().filter(|&&p| p == 1).count();
        let label = u8::from(2 * positives > n);

        let prev = bars.last().expect("seeded with one bar").close;
        let close = if label == 1 { prev * 1.01 } else { prev * 0.99 };
        bars.push(PriceBar {
            date: day,
            open: prev,
            high: prev.max(close),
            low: prev.min(close),
            close,
            adj_close: close,
            volume: 1_000_000,
        });
        news.extend(items.iter().cloned());
        truth.polarity.insert(day, pols);
        days.push(DayNews { day, items, label });
    }

    let train_end = days[spec.n_train - 1].day;
    let val_end = days[spec.n_train + spec.n_val - 1].day;
    let days = split(days, train_end, val_end)?;
    Ok(SynthCorpus {
        spec: spec.clone(),
        news,
        bars,
        days,
        truth,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{build_bags, derive_labels, PriceField};

    fn small(seed: u64) -> SynthSpec {
        SynthSpec {
            n_train: 40,
            n_val: 10,
            n_test: 10,
            ..SynthSpec::planted(seed)
        }
    }

    #[test]
    fn all_positive_mixture() {
        let spec = SynthSpec {
            up_prob: 1.0,
            dominant_frac: 1.0,
            ..small(1)
        };
        let c = synthesize(&spec).unwrap();
        for d in c.days.train.iter().chain(&c.days.val).chain(&c.days.test) {
            assert_eq!(d.label, 1);
            assert!(c.truth.day(d.day).unwrap().iter().all(|&p| p == 1));
        }
    }

    #[test]
    fn deterministic_per_seed() {
        let a = synthesize(&small(5)).unwrap();
        let b = synthesize(&small(5)).unwrap();
        assert_eq!(a.days, b.days);
        assert_eq!(a.bars, b.bars);
        assert_eq!(a.truth, b.truth);
        let c = synthesize(&small(6)).unwrap();
        assert_ne!(a.days, c.days);
    }

    #[test]
    fn structure_and_label_consistency() {
        let c = synthesize(&small(2)).unwrap();
        assert_eq!(c.days.train.len(), 40);
        assert_eq!(c.days.val.len(), 10);
        assert_eq!(c.days.test.len(), 10);
        let labels = derive_labels(&c.bars, PriceField::Close).unwrap();
        let rebuilt = build_bags(c.news.clone(), &c.bars, &labels, 0);
        let all: Vec<&DayNews> = c.days.train.iter().chain(&c.days.val).chain(&c.days.test).collect();
        assert_eq!(rebuilt.days.len(), all.len());
        for (r, d) in rebuilt.days.iter().zip(all) {
            assert_eq!(r, d);
            assert!(d.items.len() % 2 == 1 && (5..=15).contains(&d.items.len()));
            let pols = c.truth.day(d.day).unwrap();
            let pos = pols.iter().filter(|&&p| p == 1).count();
            assert_eq!(d.label, u8::from(2 * pos > pols.len()));
            for (item, p) in d.items.iter().zip(pols) {
                let prefix = if *p == 1 { "pos" } else { "neg" };
                assert!(item.tokens.iter().all(|t| t.starts_with(prefix)));
            }
        }
    }

    #[test]
    fn invalid_specs() {
        let mut s = small(0);
        s.negative_pool[0] = s.positive_pool[3].clone();
        assert!(synthesize(&s).is_err());
        let s = SynthSpec { min_instances: 4, max_instances: 4, ..small(0) };
        assert!(synthesize(&s).is_err());
        let s = SynthSpec { dominant_frac: 1.5, ..small(0) };
        assert!(synthesize(&s).is_err());
        let mut s = small(0);
        assert!(s.set("bogus", "1").is_err());
        s.set("n-train", "12").unwrap();
        assert_eq!(s.n_train, 12);
    }

    /// Exact majority probability by enumerating all 2ⁿ polarity vectors.
    fn enumerate_majority(n: usize, q: f64) -> f64 {
        (0u32..(1 << n))
            .filter(|m| 2 * m.count_ones() as usize > n)
            .map(|m| {
                let k = m.count_ones() as i32;
                q.powi(k) * (1.0 - q).powi(n as i32 - k)
            })
            .sum()
    }

    #[test]
    fn binomial_majority_matches_enumeration() {
        for n in [1, 3, 5, 7, 9] {
            for q in [0.3, 0.6, 0.7] {
                assert!((binomial_majority_prob(n, q) - enumerate_majority(n, q)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn label_rate_matches_mixture_law() {
        let spec = SynthSpec {
            n_train: 800,
            n_val: 100,
            n_test: 100,
            up_prob: 0.7,
            dominant_frac: 0.7,
            ..SynthSpec::planted(11)
        };
        let c = synthesize(&spec).unwrap();
        let labels: Vec<u8> = c.days.train.iter().chain(&c.days.val).chain(&c.days.test).map(|d| d.label).collect();
        let rate = labels.iter().map(|&l| l as f64).sum::<f64>() / labels.len() as f64;
        let expected = spec.expected_positive_rate();
        assert!((rate - expected).abs() <= 0.03, "rate {rate} vs {expected}");
    }
}
