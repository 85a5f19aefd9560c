//! Instruction datasets: the templated toy corpus, Alpaca-style JSON I/O,
//! Dirichlet non-IID partitioning and stratified train/test splits.

use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::path::Path;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::Rng;
use rand_distr::{Distribution, Gamma};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::tokenize;
use crate::rng;

pub const DEFAULT_CATEGORY: &str = "default";

/// Where a synthetic example came from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub source: String,
    pub round: usize,
    pub client: usize,
    pub ifd: f64,
    #[serde(default)]
    pub truncated: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Example {
    pub instruction: String,
    #[serde(default)]
    pub input: String,
    #[serde(rename = "output")]
    pub response: String,
    #[serde(default = "default_category")]
    pub category: String,
    #[serde(flatten, default, skip_serializing_if = "Option::is_none")]
    pub provenance: Option<Provenance>,
}

fn default_category() -> String {
    DEFAULT_CATEGORY.to_string()
}

impl Example {
    pub fn new(
        instruction: impl Into<String>,
        response: impl Into<String>,
        category: impl Into<String>,
    ) -> Self {
        Example {
            instruction: instruction.into(),
            input: String::new(),
            response: response.into(),
            category: category.into(),
            provenance: None,
        }
    }

    /// Instruction text as the model sees it (input appended when present).
    pub fn prompt_text(&self) -> String {
        if self.input.trim().is_empty() {
            self.instruction.clone()
        } else {
            format!("{} {}", self.instruction, self.input)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Dataset {
    pub name: String,
    pub examples: Vec<Example>,
}

impl Dataset {
    pub fn new(name: impl Into<String>, examples: Vec<Example>) -> Self {
        Dataset {
            name: name.into(),
            examples,
        }
    }

    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    /// Sorted distinct category labels.
    pub fn categories(&self) -> Vec<String> {
        let set: std::collections::BTreeSet<&str> =
            self.examples.iter().map(|e| e.category.as_str()).collect();
        set.into_iter().map(str::to_string).collect()
    }

    pub fn instructions(&self) -> Vec<String> {
        self.examples.iter().map(|e| e.instruction.clone()).collect()
    }

    /// Concatenation of `self` and `other`, keeping `self`'s name.
    pub fn union(&self, other: &Dataset) -> Dataset {
        let mut examples = self.examples.clone();
        examples.extend(other.examples.iter().cloned());
        Dataset::new(self.name.clone(), examples)
    }

    fn by_category(&self) -> BTreeMap<&str, Vec<usize>> {
        let mut map: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
        for (i, e) in self.examples.iter().enumerate() {
            map.entry(e.category.as_str()).or_default().push(i);
        }
        map
    }
}

// ---------------------------------------------------------------------------
// Toy corpus
// ---------------------------------------------------------------------------

const NOUNS: &[&str] = &[
    "cat", "dog", "fox", "owl", "bee", "ant", "elk", "yak", "cow", "pig", "hen", "ram", "bat",
    "eel", "emu", "gnu", "ape", "cod", "jay", "koi", "lamb", "mole", "newt", "seal", "swan",
    "toad", "wolf", "crab", "deer", "duck", "frog", "goat", "hare", "lion", "mule", "puma",
    "rook", "slug", "wasp", "zebra",
];
const NAMES: &[&str] = &[
    "ana", "ben", "cara", "dev", "eli", "fay", "gus", "hana", "ivo", "jade", "kai", "lena",
    "milo", "nora", "omar", "pia", "quin", "rosa", "sami", "tara",
];
const PLACES: &[&str] = &[
    "kitchen", "garden", "attic", "cellar", "garage", "office", "closet", "barn",
];
const DAYS: &[&str] = &[
    "monday", "tuesday", "wednesday", "thursday", "friday", "saturday", "sunday",
];
const OBJECTS: &[&str] = &[
    "lamp", "book", "key", "coin", "map", "hat", "cup", "pen", "box", "bell", "drum", "kite",
];
const OPPOSITES: &[(&str, &str)] = &[
    ("hot", "cold"),
    ("big", "small"),
    ("fast", "slow"),
    ("high", "low"),
    ("light", "dark"),
    ("wet", "dry"),
    ("old", "new"),
    ("hard", "soft"),
    ("loud", "quiet"),
    ("early", "late"),
    ("full", "empty"),
    ("rich", "poor"),
];

/// Template categories, in the order `generate_toy_corpus` uses them.
pub const TEMPLATE_CATEGORIES: &[&str] = &[
    "reverse", "count", "continue", "keep", "repeat", "sort", "opposite", "compare",
];

/// The object `name` keeps in `place` on `day`; a fixed lookup rule.
pub fn kept_object(name: &str, place: &str, day: &str) -> &'static str {
    let h = name
        .bytes()
        .chain(place.bytes())
        .chain(day.bytes())
        .fold(7u32, |acc, b| acc.wrapping_mul(31).wrapping_add(u32::from(b)));
    OBJECTS[(h % OBJECTS.len() as u32) as usize]
}

pub fn opposite_of(word: &str) -> Option<&'static str> {
    OPPOSITES.iter().find_map(|&(a, b)| {
        if a == word {
            Some(b)
        } else if b == word {
            Some(a)
        } else {
            None
        }
    })
}

fn distinct_nouns<R: Rng>(rng: &mut R, n: usize) -> Vec<&'static str> {
    NOUNS.choose_multiple(rng, n).copied().collect()
}

fn template_example<R: Rng>(category: &str, rng: &mut R) -> (String, String) {
    match category {
        "reverse" => {
            let n = rng.random_range(4..=5);
            let words = distinct_nouns(rng, n);
            let rev: Vec<&str> = words.iter().rev().copied().collect();
            (
                format!("reverse the words : {}", words.join(" ")),
                rev.join(" "),
            )
        }
        "count" => {
            let n = rng.random_range(3..=6);
            let words: Vec<&str> = (0..n).map(|_| *NOUNS.choose(rng).unwrap()).collect();
            (
                format!("how many words are in : {} ?", words.join(" ")),
                format!("there are {n} words"),
            )
        }
        "continue" => {
            let start = rng.random_range(0..=30u32);
            let step = rng.random_range(1..=6u32);
            let given: Vec<String> = (0..4).map(|i| (start + i * step).to_string()).collect();
            let next: Vec<String> = (4..7).map(|i| (start + i * step).to_string()).collect();
            (
                format!("continue the sequence : {}", given.join(" ")),
                next.join(" "),
            )
        }
        "keep" => {
            let name = *NAMES.choose(rng).unwrap();
            let place = *PLACES.choose(rng).unwrap();
            let day = *DAYS.choose(rng).unwrap();
            let obj = kept_object(name, place, day);
            (
                format!("what does {name} keep in the {place} on {day} ?"),
                format!("{name} keeps a {obj} in the {place} on {day} ."),
            )
        }
        "repeat" => {
            let word = *NOUNS.choose(rng).unwrap();
            let times = rng.random_range(2..=5usize);
            (
                format!("repeat the word {word} {times} times"),
                vec![word; times].join(" "),
            )
        }
        "sort" => {
            let mut nums: Vec<u32> = (0..=40u32).collect::<Vec<_>>();
            nums.shuffle(rng);
            let given: Vec<u32> = nums[..4].to_vec();
            let mut sorted = given.clone();
            sorted.sort_unstable();
            let fmt = |v: &[u32]| {
                v.iter()
                    .map(u32::to_string)
                    .collect::<Vec<_>>()
                    .join(" ")
            };
            (
                format!("sort the numbers : {}", fmt(&given)),
                fmt(&sorted),
            )
        }
        "opposite" => {
            let words: Vec<&str> = OPPOSITES.iter().flat_map(|&(a, b)| [a, b]).collect();
            let pick: Vec<&str> = words.choose_multiple(rng, 2).copied().collect();
            let (x, y) = (pick[0], pick[1]);
            (
                format!("what is the opposite of {x} and {y} ?"),
                format!(
                    "the opposite of {x} is {} and the opposite of {y} is {}",
                    opposite_of(x).unwrap(),
                    opposite_of(y).unwrap()
                ),
            )
        }
        "compare" => {
            let a = rng.random_range(0..=99u32);
            let mut b = rng.random_range(0..=99u32);
            while b == a {
                b = rng.random_range(0..=99u32);
            }
            (
                format!("which is larger : {a} or {b} ?"),
                format!("{} is larger than {}", a.max(b), a.min(b)),
            )
        }
        other => unreachable!("unknown template category {other}"),
    }
}

/// Templated instruction/response tasks with per-example random content.
///
/// Uses the first `num_categories` entries of [`TEMPLATE_CATEGORIES`]
/// (cycling when more are requested). Instructions are unique whenever the
/// template has enough distinct fillings.
pub fn generate_toy_corpus(num_categories: usize, examples_per_category: usize, seed: u64) -> Dataset {
    assert!(num_categories >= 2, "need at least two categories");
    assert!(examples_per_category >= 10, "need at least ten examples per category");
    let mut rng = rng::stream(seed, "toy-corpus", 0, rng::NO_CLIENT);
    let mut seen = HashSet::new();
    let mut examples = Vec::with_capacity(num_categories * examples_per_category);
    for c in 0..num_categories {
        let template = TEMPLATE_CATEGORIES[c % TEMPLATE_CATEGORIES.len()];
        let label = if c < TEMPLATE_CATEGORIES.len() {
            template.to_string()
        } else {
            format!("{template}_{}", c / TEMPLATE_CATEGORIES.len())
        };
        for _ in 0..examples_per_category {
            let mut attempt = 0;
            let (instruction, response) = loop {
                let (ins, resp) = template_example(template, &mut rng);
                attempt += 1;
                if seen.insert(ins.clone()) || attempt >= 200 {
                    break (ins, resp);
                }
            };
            examples.push(Example::new(instruction, response, label.clone()));
        }
    }
    Dataset::new(format!("toy-{seed}"), examples)
}

// ---------------------------------------------------------------------------
// I/O
// ---------------------------------------------------------------------------

#[derive(Deserialize)]
struct RawRecord {
    instruction: Option<String>,
    #[serde(default)]
    input: Option<String>,
    output: Option<String>,
    #[serde(default)]
    category: Option<String>,
    #[serde(flatten)]
    provenance: Option<Provenance>,
}

/// Parses an Alpaca-style JSON array of `{instruction, input?, output, category?}`.
pub fn parse_dataset(text: &str, name: &str) -> Result<Dataset> {
    let values: Vec<serde_json::Value> = serde_json::from_str(text).map_err(|source| Error::Json {
        path: name.into(),
        source,
    })?;
    let mut examples = Vec::with_capacity(values.len());
    for (index, value) in values.into_iter().enumerate() {
        let bad = |reason: &str| Error::Record {
            index,
            reason: reason.to_string(),
        };
        let raw: RawRecord =
            serde_json::from_value(value).map_err(|e| bad(&format!("malformed record: {e}")))?;
        let instruction = raw.instruction.ok_or_else(|| bad("missing \"instruction\""))?;
        let response = raw.output.ok_or_else(|| bad("missing \"output\""))?;
        if tokenize(&instruction).is_empty() {
            return Err(bad("empty \"instruction\""));
        }
        if tokenize(&response).is_empty() {
            return Err(bad("empty \"output\""));
        }
        examples.push(Example {
            instruction,
            input: raw.input.unwrap_or_default(),
            response,
            category: raw
                .category
                .filter(|c| !c.is_empty())
                .unwrap_or_else(default_category),
            provenance: raw.provenance,
        });
    }
    Ok(Dataset::new(name, examples))
}

pub fn load_dataset(path: impl AsRef<Path>) -> Result<Dataset> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    parse_dataset(&text, &name).map_err(|e| match e {
        Error::Json { source, .. } => Error::Json {
            path: path.to_path_buf(),
            source,
        },
        other => other,
    })
}

pub fn save_dataset(path: impl AsRef<Path>, data: &Dataset) -> Result<()> {
    let path = path.as_ref();
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let text = serde_json::to_string_pretty(&data.examples).expect("examples serialize");
    fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

// ---------------------------------------------------------------------------
// Partitioning
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PartitionSpec {
    pub alpha: f64,
    pub num_clients: usize,
    pub seed: u64,
}

/// Splits `total` into integer parts proportional to `weights`. Remainders go
/// to the largest fractional parts, ties to the lower index.
pub fn largest_remainder(weights: &[f64], total: usize) -> Vec<usize> {
    let sum: f64 = weights.iter().sum();
    let quotas: Vec<f64> = if sum > 0.0 {
        weights.iter().map(|w| w / sum * total as f64).collect()
    } else {
        vec![total as f64 / weights.len() as f64; weights.len()]
    };
    let mut counts: Vec<usize> = quotas.iter().map(|q| q.floor() as usize).collect();
    let assigned: usize = counts.iter().sum();
    let mut order: Vec<usize> = (0..weights.len()).collect();
    order.sort_by(|&a, &b| {
        let fa = quotas[a] - quotas[a].floor();
        let fb = quotas[b] - quotas[b].floor();
        fb.total_cmp(&fa).then(a.cmp(&b))
    });
    for &i in order.iter().take(total.saturating_sub(assigned)) {
        counts[i] += 1;
    }
    counts
}

fn sample_dirichlet<R: Rng>(alpha: f64, n: usize, rng: &mut R) -> Vec<f64> {
    let gamma = Gamma::new(alpha, 1.0).expect("alpha > 0");
    let draws: Vec<f64> = (0..n).map(|_| gamma.sample(rng)).collect();
    let sum: f64 = draws.iter().sum();
    if sum > 0.0 && sum.is_finite() {
        draws.iter().map(|x| x / sum).collect()
    } else {
        vec![1.0 / n as f64; n]
    }
}

/// Per-category Dirichlet allocation of examples to clients.
///
/// Shards keep the input order of their examples.
pub fn dirichlet_partition(data: &Dataset, spec: &PartitionSpec) -> Result<Vec<Dataset>> {
    if spec.alpha.is_nan() || spec.alpha <= 0.0 || !spec.alpha.is_finite() {
        return Err(Error::invalid(format!("alpha must be positive, got {}", spec.alpha)));
    }
    if spec.num_clients == 0 {
        return Err(Error::invalid("num_clients must be at least 1"));
    }
    if data.is_empty() {
        return Err(Error::invalid("cannot partition an empty dataset"));
    }
    let mut rng = rng::stream(spec.seed, "partition", 0, rng::NO_CLIENT);
    let mut owner = vec![0usize; data.len()];
    for (_, mut indices) in data.by_category() {
        let props = sample_dirichlet(spec.alpha, spec.num_clients, &mut rng);
        indices.shuffle(&mut rng);
        let counts = largest_remainder(&props, indices.len());
        let mut start = 0;
        for (client, &count) in counts.iter().enumerate() {
            for &i in &indices[start..start + count] {
                owner[i] = client;
            }
            start += count;
        }
    }
    let mut shards: Vec<Dataset> = (0..spec.num_clients)
        .map(|k| Dataset::new(format!("client_{k}"), Vec::new()))
        .collect();
    for (i, ex) in data.examples.iter().enumerate() {
        shards[owner[i]].examples.push(ex.clone());
    }
    Ok(shards)
}

/// Stratified split. Per-category test counts are apportioned by largest
/// remainder so the total equals `round(test_fraction * n)`.
pub fn split_train_test(data: &Dataset, test_fraction: f64, seed: u64) -> Result<(Dataset, Dataset)> {
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(Error::invalid(format!(
            "test_fraction must be in (0, 1), got {test_fraction}"
        )));
    }
    let n = data.len();
    let n_test = (test_fraction * n as f64).round() as usize;
    if n < 2 || n_test == 0 || n_test == n {
        return Err(Error::invalid(format!(
            "dataset of {n} examples is too small to split with fraction {test_fraction}"
        )));
    }
    let groups = data.by_category();
    let sizes: Vec<f64> = groups.values().map(|v| v.len() as f64).collect();
    let per_cat = largest_remainder(&sizes, n_test);
    let mut rng = rng::stream(seed, "split", 0, rng::NO_CLIENT);
    let mut is_test = vec![false; n];
    for ((_, mut indices), take) in groups.into_iter().zip(per_cat) {
        indices.shuffle(&mut rng);
        for &i in &indices[..take] {
            is_test[i] = true;
        }
    }
    let (mut train, mut test) = (Vec::new(), Vec::new());
    for (ex, t) in data.examples.iter().zip(is_test) {
        if t {
            test.push(ex.clone());
        } else {
            train.push(ex.clone());
        }
    }
    Ok((
        Dataset::new(format!("{}-train", data.name), train),
        Dataset::new(format!("{}-test", data.name), test),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Re-derives a response from its instruction by parsing the template.
    fn oracle_response(category: &str, instruction: &str) -> String {
        let words: Vec<&str> = instruction.split_whitespace().collect();
        let after_colon = || -> Vec<&str> {
            let i = words.iter().position(|w| *w == ":").unwrap();
            words[i + 1..].iter().copied().filter(|w| *w != "?").collect()
        };
        match category {
            "reverse" => after_colon().into_iter().rev().collect::<Vec<_>>().join(" "),
            "count" => format!("there are {} words", after_colon().len()),
            "continue" => {
                let v: Vec<i64> = after_colon().iter().map(|w| w.parse().unwrap()).collect();
                let step = v[1] - v[0];
                (1..=3)
                    .map(|i| (v[3] + i * step).to_string())
                    .collect::<Vec<_>>()
                    .join(" ")
            }
            "keep" => {
                let (name, place, day) = (words[2], words[6], words[8]);
                format!(
                    "{name} keeps a {} in the {place} on {day} .",
                    kept_object(name, place, day)
                )
            }
            "repeat" => {
                let times: usize = words[4].parse().unwrap();
                vec![words[3]; times].join(" ")
            }
            "sort" => {
                let mut v: Vec<u32> = after_colon().iter().map(|w| w.parse().unwrap()).collect();
                v.sort();
                v.iter().map(u32::to_string).collect::<Vec<_>>().join(" ")
            }
            "opposite" => {
                let (x, y) = (words[5], words[7]);
                format!(
                    "the opposite of {x} is {} and the opposite of {y} is {}",
                    opposite_of(x).unwrap(),
                    opposite_of(y).unwrap()
                )
            }
            "compare" => {
                let a: u32 = words[4].parse().unwrap();
                let b: u32 = words[6].parse().unwrap();
                format!("{} is larger than {}", a.max(b), a.min(b))
            }
            _ => panic!("unknown category"),
        }
    }

    #[test]
    fn toy_corpus_size_and_determinism() {
        let d = generate_toy_corpus(4, 50, 7);
        assert_eq!(d.len(), 200);
        assert_eq!(d.categories().len(), 4);
        assert_eq!(d, generate_toy_corpus(4, 50, 7));
        assert_ne!(d, generate_toy_corpus(4, 50, 8));
    }

    #[test]
    fn toy_responses_follow_template_rule() {
        let d = generate_toy_corpus(8, 30, 3);
        for ex in &d.examples {
            assert_eq!(ex.response, oracle_response(&ex.category, &ex.instruction), "{ex:?}");
            assert!(!tokenize(&ex.instruction).is_empty());
            assert!(!tokenize(&ex.response).is_empty());
        }
        let unique: HashSet<&str> = d.examples.iter().map(|e| e.instruction.as_str()).collect();
        assert_eq!(unique.len(), d.len());
    }

    #[test]
    fn load_and_save_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.json");
        let d = generate_toy_corpus(2, 10, 1);
        save_dataset(&path, &d).unwrap();
        let back = load_dataset(&path).unwrap();
        assert_eq!(back.examples, d.examples);
        assert_eq!(back.name, "d");
    }

    #[test]
    fn load_three_records_and_default_category() {
        let text = r#"[
            {"instruction": "a b", "input": "", "output": "c"},
            {"instruction": "d", "output": "e", "category": "x"},
            {"instruction": "f", "input": "g", "output": "h"}
        ]"#;
        let d = parse_dataset(text, "t").unwrap();
        assert_eq!(d.len(), 3);
        assert_eq!(d.examples[0].category, DEFAULT_CATEGORY);
        assert_eq!(d.examples[1].category, "x");
        assert_eq!(d.examples[2].prompt_text(), "f g");
    }

    #[test]
    fn load_reports_offending_index() {
        let text = r#"[{"instruction": "a", "output": "b"}, {"instruction": "c"}]"#;
        match parse_dataset(text, "t") {
            Err(Error::Record { index, reason }) => {
                assert_eq!(index, 1);
                assert!(reason.contains("output"));
            }
            other => panic!("unexpected {other:?}"),
        }
        assert!(matches!(
            parse_dataset(r#"[{"instruction": " ", "output": "b"}]"#, "t"),
            Err(Error::Record { index: 0, .. })
        ));
        assert!(matches!(parse_dataset("{", "t"), Err(Error::Json { .. })));
    }

    #[test]
    fn largest_remainder_conserves_and_breaks_ties_low() {
        assert_eq!(largest_remainder(&[1.0, 1.0, 1.0], 100), vec![34, 33, 33]);
        assert_eq!(largest_remainder(&[0.5, 0.25, 0.25], 3), vec![1, 1, 1]);
        assert_eq!(largest_remainder(&[0.5, 0.25, 0.25], 4), vec![2, 1, 1]);
        assert_eq!(largest_remainder(&[0.0, 0.0], 5), vec![3, 2]);
    }

    #[test]
    fn near_iid_partition_is_balanced() {
        let d = generate_toy_corpus(3, 100, 11);
        let spec = PartitionSpec { alpha: 1e9, num_clients: 3, seed: 5 };
        let shards = dirichlet_partition(&d, &spec).unwrap();
        for s in &shards {
            assert!((98..=102).contains(&s.len()), "{}", s.len());
            for cat in d.categories() {
                let n = s.examples.iter().filter(|e| e.category == cat).count();
                assert!((33..=34).contains(&n));
            }
        }
    }

    #[test]
    fn partition_rejects_bad_spec() {
        let d = generate_toy_corpus(2, 10, 1);
        let bad = PartitionSpec { alpha: 0.0, num_clients: 3, seed: 1 };
        assert!(dirichlet_partition(&d, &bad).is_err());
        let bad = PartitionSpec { alpha: 1.0, num_clients: 0, seed: 1 };
        assert!(dirichlet_partition(&d, &bad).is_err());
        let spec = PartitionSpec { alpha: 1.0, num_clients: 2, seed: 1 };
        assert!(dirichlet_partition(&Dataset::default(), &spec).is_err());
    }

    #[test]
    fn split_sizes_and_stratification() {
        let d = generate_toy_corpus(4, 25, 2);
        let (train, test) = split_train_test(&d, 0.2, 9).unwrap();
        assert_eq!((train.len(), test.len()), (80, 20));
        for cat in d.categories() {
            let n = d.examples.iter().filter(|e| e.category == cat).count() as f64;
            let t = test.examples.iter().filter(|e| e.category == cat).count() as f64;
            assert!((t - 0.2 * n).abs() <= 1.0);
        }
        let mut all: Vec<String> = train.instructions();
        all.extend(test.instructions());
        all.sort();
        let mut orig = d.instructions();
        orig.sort();
        assert_eq!(all, orig);
        assert_eq!(split_train_test(&d, 0.2, 9).unwrap(), (train, test));
    }

    #[test]
    fn split_rejects_tiny_or_bad_fraction() {
        let d = generate_toy_corpus(2, 10, 1);
        assert!(split_train_test(&d, 0.0, 1).is_err());
        assert!(split_train_test(&d, 1.0, 1).is_err());
        let one = Dataset::new("one", d.examples[..1].to_vec());
        assert!(split_train_test(&one, 0.5, 1).is_err());
        let three = Dataset::new("three", d.examples[..3].to_vec());
        assert!(split_train_test(&three, 0.1, 1).is_err());
    }
}
