//! JSON-lines ingestion, category merging, stratified splitting and the
//! synthetic corpus generator.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::distributions::{Distribution, WeightedIndex};
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::customization::UNK_CATEGORY;
use crate::error::{Error, Result};
use crate::nn::{seeded_rng, SeededRng};
use crate::review::{Label, RawReview, SpamLabel};

const KNOWN_FIELDS: [&str; 10] = [
    "review_id",
    "comment",
    "rating",
    "category",
    "product_name",
    "description",
    "num_sold",
    "num_reviews",
    "label",
    "spam_label",
];

/// The twelve merged product categories.
pub const CANONICAL_CATEGORIES: [&str; 12] = [
    "Fashion",
    "Electronic",
    "Others",
    "Phone - Computer",
    "Beauty",
    "Home - Life",
    "Toy",
    "Sport",
    "Camera",
    "Vehicle",
    "Footwear",
    "Book",
];

/// Shipped raw-to-canonical category dictionary.
pub const CATEGORY_DICTIONARY_JSON: &str = include_str!("../fixtures/category_dictionary.json");

/// Shipped Vietnamese stoplist, one entry per line.
pub const STOPLIST: &str = include_str!("../fixtures/stopwords_vi.txt");

pub fn default_category_dictionary() -> BTreeMap<String, String> {
    serde_json::from_str(CATEGORY_DICTIONARY_JSON).expect("shipped category dictionary is valid JSON")
}

pub fn load_category_dictionary(path: &Path) -> Result<BTreeMap<String, String>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::parse(path, e.line(), e.to_string()))
}

/// Reads one review per line. Blank lines are skipped; ids default to the line number.
pub fn load_jsonl(path: &Path) -> Result<Vec<RawReview>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    let mut seen = HashSet::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let lineno = i + 1;
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let value: serde_json::Value =
            serde_json::from_str(&line).map_err(|e| Error::parse(path, lineno, e.to_string()))?;
        let obj = value
            .as_object()
            .ok_or_else(|| Error::parse(path, lineno, "expected a JSON object"))?;
        if let Some(missing) = RawReview::REQUIRED_FIELDS.iter().find(|f| !obj.contains_key(**f)) {
            return Err(Error::parse(path, lineno, format!("missing required field `{missing}`")));
        }
        for key in obj.keys().filter(|k| !KNOWN_FIELDS.contains(&k.as_str())) {
            log::warn!("{}:{lineno}: ignoring unknown field `{key}`", path.display());
        }
        let mut review: RawReview =
            serde_json::from_value(value).map_err(|e| Error::parse(path, lineno, e.to_string()))?;
        if review.review_id.is_empty() {
            review.review_id = lineno.to_string();
        }
        review
            .validate()
            .map_err(|e| Error::parse(path, lineno, e.to_string()))?;
        if !seen.insert(review.review_id.clone()) {
            return Err(Error::parse(
                path,
                lineno,
                format!("duplicate review_id `{}`", review.review_id),
            ));
        }
        out.push(review);
    }
    Ok(out)
}

pub fn write_jsonl(path: &Path, records: &[RawReview]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for r in records {
        serde_json::to_writer(&mut w, r).map_err(|e| Error::Data(e.to_string()))?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Maps raw categories to canonical names; anything unmapped and not already
/// canonical becomes `UNK`.
pub fn merge_categories(records: &[RawReview], dictionary: &BTreeMap<String, String>) -> Vec<RawReview> {
    let canonical: BTreeSet<&str> = dictionary.values().map(String::as_str).collect();
    let mut unmapped = BTreeSet::new();
    let out = records
        .iter()
        .map(|r| {
            let mut r = r.clone();
            if let Some(c) = dictionary.get(&r.category) {
                r.category = c.clone();
            } else if !canonical.contains(r.category.as_str()) && r.category != UNK_CATEGORY {
                unmapped.insert(std::mem::replace(&mut r.category, UNK_CATEGORY.to_string()));
            }
            r
        })
        .collect();
    for raw in unmapped {
        log::warn!("category `{raw}` not in dictionary; mapped to {UNK_CATEGORY}");
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitRatios {
    /// Fraction of each label held out for test.
    pub test: f64,
    /// Fraction of the remaining train+dev pool carved out for dev.
    pub dev: f64,
}

impl Default for SplitRatios {
    fn default() -> Self {
        SplitRatios { test: 0.2, dev: 0.1 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSplit {
    pub train: Vec<RawReview>,
    pub dev: Vec<RawReview>,
    pub test: Vec<RawReview>,
    pub seed: u64,
    pub ratios: SplitRatios,
}

/// Largest-remainder apportionment of `total` over `weights`; ties go to the lower index.
pub fn apportion(total: usize, weights: &[f64]) -> Vec<usize> {
    let sum: f64 = weights.iter().sum();
    if weights.is_empty() || sum <= 0.0 {
        return vec![0; weights.len()];
    }
    let quotas: Vec<f64> = weights.iter().map(|w| total as f64 * w / sum).collect();
    let mut counts: Vec<usize> = quotas.iter().map(|q| q.floor() as usize).collect();
    let assigned: usize = counts.iter().sum();
    let mut order: Vec<usize> = (0..weights.len()).collect();
    order.sort_by(|&a, &b| {
        let ra = quotas[a] - quotas[a].floor();
        let rb = quotas[b] - quotas[b].floor();
        rb.partial_cmp(&ra).unwrap().then(a.cmp(&b))
    });
    for &i in order.iter().take(total.saturating_sub(assigned)) {
        counts[i] += 1;
    }
    counts
}

/// Stratified train/dev/test split.
///
/// Per label, `floor(n * test)` records go to test. Dev takes
/// `round(dev * |train+dev pool|)` records, apportioned across labels by
/// largest remainder. Records keep their input order within each split.
pub fn split(records: &[RawReview], ratios: SplitRatios, seed: u64, stratify_by_label: bool) -> Result<DatasetSplit> {
    if records.len() < 10 {
        return Err(Error::Data(format!("split needs at least 10 records, got {}", records.len())));
    }
    if !(0.0..1.0).contains(&ratios.test) || !(0.0..1.0).contains(&ratios.dev) {
        return Err(Error::Config(format!("split ratios must lie in [0, 1): {ratios:?}")));
    }
    let mut groups: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, r) in records.iter().enumerate() {
        let key = if stratify_by_label {
            SpamLabel::ALL.iter().position(|&s| s == r.spam_label).unwrap()
        } else {
            0
        };
        groups.entry(key).or_default().push(i);
    }
    let mut rng = seeded_rng(seed);
    let mut test = Vec::new();
    let mut pools = Vec::new();
    for (key, mut idx) in groups {
        if idx.len() < 3 {
            log::warn!(
                "label {} has only {} records; placement is best-effort",
                SpamLabel::ALL[key].as_str(),
                idx.len()
            );
        }
        idx.shuffle(&mut rng);
        let n_test = (idx.len() as f64 * ratios.test).floor() as usize;
        test.extend_from_slice(&idx[..n_test]);
        pools.push(idx[n_test..].to_vec());
    }
    let pool_total: usize = pools.iter().map(Vec::len).sum();
    let n_dev = (pool_total as f64 * ratios.dev).round() as usize;
    let weights: Vec<f64> = pools.iter().map(|p| p.len() as f64).collect();
    let dev_counts = apportion(n_dev, &weights);
    let mut dev = Vec::new();
    let mut train = Vec::new();
    for (pool, n) in pools.iter().zip(dev_counts) {
        dev.extend_from_slice(&pool[..n]);
        train.extend_from_slice(&pool[n..]);
    }
    let collect = |mut ids: Vec<usize>| {
        ids.sort_unstable();
        ids.into_iter().map(|i| records[i].clone()).collect::<Vec<_>>()
    };
    Ok(DatasetSplit {
        train: collect(train),
        dev: collect(dev),
        test: collect(test),
        seed,
        ratios,
    })
}

/// Configuration of the synthetic corpus generator.
///
/// Each record draws one informative channel (text, category or description)
/// with probability given by the signal weights; the other channels are drawn
/// independently of the label. With probability `noise` the informative channel
/// reflects a different label than the record's own.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthSpec {
    pub size: usize,
    pub seed: u64,
    /// 2 (NONE, SPAM-3) or 4 (NONE, SPAM-1, SPAM-2, SPAM-3).
    pub num_labels: usize,
    pub num_categories: usize,
    /// Relative label frequencies; uniform when empty.
    pub label_distribution: Vec<f64>,
    pub w_text: f64,
    pub w_category: f64,
    pub w_description: f64,
    pub noise: f64,
    /// Label-specific comment words per label.
    pub text_vocab_per_label: usize,
    /// Label-independent comment words.
    pub shared_text_vocab: usize,
    /// Label-specific description words per label.
    pub description_vocab_per_label: usize,
    /// Label-independent description words.
    pub shared_description_vocab: usize,
    pub comment_len: (usize, usize),
    pub description_len: (usize, usize),
    /// Fraction of comment tokens taken from the label vocabulary when text is informative.
    pub signal_fraction: f64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            size: 1000,
            seed: 42,
            num_labels: 4,
            num_categories: 8,
            label_distribution: Vec::new(),
            w_text: 0.5,
            w_category: 0.4,
            w_description: 0.1,
            noise: 0.0,
            text_vocab_per_label: 30,
            shared_text_vocab: 300,
            description_vocab_per_label: 30,
            shared_description_vocab: 300,
            comment_len: (8, 20),
            description_len: (12, 30),
            signal_fraction: 0.3,
        }
    }
}

impl SynthSpec {
    pub fn from_json_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let spec: SynthSpec = serde_json::from_str(&text).map_err(|e| Error::parse(path, e.line(), e.to_string()))?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn labels(&self) -> Vec<SpamLabel> {
        match self.num_labels {
            2 => vec![SpamLabel::None, SpamLabel::Spam3],
            _ => SpamLabel::ALL.to_vec(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let w = [self.w_text, self.w_category, self.w_description];
        if w.iter().any(|x| !(0.0..=1.0).contains(x)) {
            return Err(Error::Config(format!("signal weights must lie in [0, 1]: {w:?}")));
        }
        if w.iter().all(|&x| x == 0.0) {
            return Err(Error::Config("all signal weights are zero".into()));
        }
        if (w.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!("signal weights must sum to 1, got {}", w.iter().sum::<f64>())));
        }
        if self.size < 100 {
            return Err(Error::Config(format!("synthetic size must be >= 100, got {}", self.size)));
        }
        if self.num_labels != 2 && self.num_labels != 4 {
            return Err(Error::Config(format!("num_labels must be 2 or 4, got {}", self.num_labels)));
        }
        if self.num_categories < self.num_labels {
            return Err(Error::Config(format!(
                "need at least one category per label ({} < {})",
                self.num_categories, self.num_labels
            )));
        }
        if !self.label_distribution.is_empty()
            && (self.label_distribution.len() != self.num_labels
                || self.label_distribution.iter().any(|p| *p < 0.0 || !p.is_finite())
                || self.label_distribution.iter().sum::<f64>() <= 0.0)
        {
            return Err(Error::Config(format!(
                "label_distribution needs {} nonnegative weights with a positive sum",
                self.num_labels
            )));
        }
        if !(0.0..=1.0).contains(&self.noise) || !(0.0..=1.0).contains(&self.signal_fraction) {
            return Err(Error::Config("noise and signal_fraction must lie in [0, 1]".into()));
        }
        let ranges = [self.comment_len, self.description_len];
        if ranges.iter().any(|&(lo, hi)| lo == 0 || lo > hi) {
            return Err(Error::Config("length ranges need 1 <= min <= max".into()));
        }
        if self.text_vocab_per_label == 0
            || self.shared_text_vocab == 0
            || self.description_vocab_per_label == 0
            || self.shared_description_vocab == 0
        {
            return Err(Error::Config("vocabulary sizes must be >= 1".into()));
        }
        Ok(())
    }

    pub fn category_names(&self) -> Vec<String> {
        (0..self.num_categories)
            .map(|i| match CANONICAL_CATEGORIES.get(i) {
                Some(name) => name.to_string(),
                None => format!("Category {}", i + 1),
            })
            .collect()
    }
}

const CONSONANTS: &[u8] = b"bdfghklmnprstvz";
const VOWELS: &[u8] = b"aeiou";

/// Distinct lowercase ASCII pseudo-word for every `n`, at least two syllables.
pub fn pseudo_word(n: usize) -> String {
    let syllables = CONSONANTS.len() * VOWELS.len();
    let mut x = n + syllables;
    let mut out = Vec::new();
    while x > 0 {
        let s = x % syllables;
        out.push(CONSONANTS[s / VOWELS.len()]);
        out.push(VOWELS[s % VOWELS.len()]);
        x /= syllables;
    }
    String::from_utf8(out).unwrap()
}

struct Pools {
    text: Vec<Vec<String>>,
    shared_text: Vec<String>,
    description: Vec<Vec<String>>,
    shared_description: Vec<String>,
}

impl Pools {
    fn new(spec: &SynthSpec) -> Self {
        let mut next = 0;
        let mut take = |n: usize| {
            let words: Vec<String> = (next..next + n).map(pseudo_word).collect();
            next += n;
            words
        };
        let text = (0..spec.num_labels).map(|_| take(spec.text_vocab_per_label)).collect();
        let shared_text = take(spec.shared_text_vocab);
        let description = (0..spec.num_labels)
            .map(|_| take(spec.description_vocab_per_label))
            .collect();
        let shared_description = take(spec.shared_description_vocab);
        Pools {
            text,
            shared_text,
            description,
            shared_description,
        }
    }
}

fn pick<'a>(rng: &mut SeededRng, words: &'a [String]) -> &'a str {
    &words[rng.gen_range(0..words.len())]
}

fn draw_len(rng: &mut SeededRng, (lo, hi): (usize, usize)) -> usize {
    rng.gen_range(lo..=hi)
}

/// Deterministic synthetic corpus; see [`SynthSpec`].
pub fn generate_synthetic(spec: &SynthSpec) -> Result<Vec<RawReview>> {
    spec.validate()?;
    let mut rng = seeded_rng(spec.seed);
    let labels = spec.labels();
    let k = labels.len();
    let dist = if spec.label_distribution.is_empty() {
        vec![1.0; k]
    } else {
        spec.label_distribution.clone()
    };
    let mut label_seq: Vec<usize> = apportion(spec.size, &dist)
        .into_iter()
        .enumerate()
        .flat_map(|(l, n)| std::iter::repeat_n(l, n))
        .collect();
    label_seq.shuffle(&mut rng);

    let pools = Pools::new(spec);
    let categories = spec.category_names();
    let owned: Vec<Vec<usize>> = (0..k)
        .map(|l| (0..categories.len()).filter(|c| c % k == l).collect())
        .collect();
    let channel = WeightedIndex::new([spec.w_text, spec.w_category, spec.w_description]).expect("validated weights");

    let mut out = Vec::with_capacity(spec.size);
    for (i, &y) in label_seq.iter().enumerate() {
        let informative = channel.sample(&mut rng);
        let signal = if rng.gen::<f64>() < spec.noise {
            let other = rng.gen_range(0..k - 1);
            if other >= y {
                other + 1
            } else {
                other
            }
        } else {
            y
        };

        let desc_len = draw_len(&mut rng, spec.description_len);
        let description: Vec<&str> = (0..desc_len)
            .map(|_| {
                if informative == 2 && rng.gen::<f64>() < spec.signal_fraction {
                    pick(&mut rng, &pools.description[signal])
                } else {
                    pick(&mut rng, &pools.shared_description)
                }
            })
            .collect();

        let comment_len = draw_len(&mut rng, spec.comment_len);
        let mut comment: Vec<&str> = (0..comment_len)
            .map(|_| {
                if informative == 0 && rng.gen::<f64>() < spec.signal_fraction {
                    pick(&mut rng, &pools.text[signal])
                } else {
                    pick(&mut rng, &pools.shared_text)
                }
            })
            .collect();
        if informative == 2 && signal == 0 {
            // NO-SPAM comments talk about the product: reuse description words.
            let n = (comment_len / 3).max(1);
            for _ in 0..n {
                let pos = rng.gen_range(0..comment.len());
                comment[pos] = description[rng.gen_range(0..description.len())];
            }
        }

        let category = if informative == 1 {
            let own = &owned[signal];
            own[rng.gen_range(0..own.len())]
        } else {
            rng.gen_range(0..categories.len())
        };

        let spam_label = labels[y];
        let product_name = (0..3)
            .map(|_| pick(&mut rng, &pools.shared_description))
            .collect::<Vec<_>>()
            .join(" ");
        out.push(RawReview {
            review_id: format!("syn{i:06}"),
            comment: comment.join(" "),
            rating: rng.gen_range(1..=5),
            category: categories[category].clone(),
            product_name,
            description: description.join(" "),
            num_sold: rng.gen_range(0..10_000),
            num_reviews: rng.gen_range(0..2_000),
            label: if spam_label == SpamLabel::None { Label::NoSpam } else { Label::Spam },
            spam_label,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn review(id: &str, spam: SpamLabel) -> RawReview {
        RawReview {
            review_id: id.into(),
            comment: "hàng tốt".into(),
            rating: 5,
            category: "Điện tử".into(),
            product_name: "quạt".into(),
            description: "quạt điện".into(),
            num_sold: 1,
            num_reviews: 1,
            label: spam.label(),
            spam_label: spam,
        }
    }

    #[test]
    fn jsonl_round_trip_and_errors() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.jsonl");
        let recs = vec![review("a", SpamLabel::None), review("b", SpamLabel::Spam2), review("c", SpamLabel::Spam3)];
        write_jsonl(&path, &recs).unwrap();
        assert_eq!(load_jsonl(&path).unwrap(), recs);

        let good = serde_json::to_string(&recs[0]).unwrap();
        let mut bad: serde_json::Value = serde_json::to_value(&recs[1]).unwrap();
        bad.as_object_mut().unwrap().remove("comment");
        std::fs::write(&path, format!("{good}\n{bad}\n")).unwrap();
        match load_jsonl(&path) {
            Err(Error::Parse { line, message, .. }) => {
                assert_eq!(line, 2);
                assert!(message.contains("comment"));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn missing_ids_come_from_line_numbers() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.jsonl");
        let mut v = serde_json::to_value(review("", SpamLabel::None)).unwrap();
        v.as_object_mut().unwrap().remove("review_id");
        v.as_object_mut().unwrap().insert("extra".into(), 1.into());
        std::fs::write(&path, format!("\n{v}\n")).unwrap();
        assert_eq!(load_jsonl(&path).unwrap()[0].review_id, "2");
    }

    #[test]
    fn category_merging() {
        let dict = default_category_dictionary();
        let merged = merge_categories(&[review("a", SpamLabel::None)], &dict);
        assert_eq!(merged[0].category, "Electronic");
        assert_eq!(merge_categories(&merged, &dict), merged);
        let mut r = review("b", SpamLabel::None);
        r.category = "Đồ cổ".into();
        assert_eq!(merge_categories(&[r], &dict)[0].category, UNK_CATEGORY);
        let values: BTreeSet<&str> = dict.values().map(String::as_str).collect();
        assert_eq!(values, CANONICAL_CATEGORIES.into_iter().collect());
    }

    #[test]
    fn apportion_examples() {
        assert_eq!(apportion(10, &[1.0, 1.0, 1.0]), vec![4, 3, 3]);
        assert_eq!(apportion(7, &[0.5, 0.5]), vec![4, 3]);
        assert_eq!(apportion(5, &[0.0, 2.0]), vec![0, 5]);
    }

    #[test]
    fn hundred_records_split_eighty_twenty() {
        let recs: Vec<RawReview> = (0..100).map(|i| review(&i.to_string(), SpamLabel::None)).collect();
        let s = split(&recs, SplitRatios::default(), 42, true).unwrap();
        assert_eq!(s.test.len(), 20);
        assert_eq!(s.train.len() + s.dev.len(), 80);
        assert_eq!(s.dev.len(), 8);
        assert_eq!(split(&recs, SplitRatios::default(), 42, true).unwrap(), s);
        assert!(split(&recs[..9], SplitRatios::default(), 42, true).is_err());
    }

    #[test]
    fn pseudo_words_are_distinct() {
        let words: HashSet<String> = (0..20_000).map(pseudo_word).collect();
        assert_eq!(words.len(), 20_000);
        assert!(words.iter().all(|w| w.len() >= 4 && w.is_ascii()));
    }

    #[test]
    fn synth_spec_validation() {
        let mut s = SynthSpec::default();
        assert!(s.validate().is_ok());
        s.w_text = 0.0;
        s.w_category = 0.0;
        s.w_description = 0.0;
        assert!(s.validate().is_err());
        let s = SynthSpec {
            size: 99,
            ..Default::default()
        };
        assert!(s.validate().is_err());
        let s = SynthSpec {
            w_text: 0.7,
            ..Default::default()
        };
        assert!(s.validate().is_err());
    }

    #[test]
    fn synthetic_records_are_valid_and_deterministic() {
        let spec = SynthSpec {
            size: 300,
            ..Default::default()
        };
        let a = generate_synthetic(&spec).unwrap();
        assert_eq!(a.len(), 300);
        assert!(a.iter().all(|r| r.validate().is_ok()));
        let b = generate_synthetic(&spec).unwrap();
        assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
        let counts = a.iter().fold([0; 4], |mut c, r| {
            c[r.class(crate::review::Task::Task2)] += 1;
            c
        });
        assert_eq!(counts, [75; 4]);
    }
}
