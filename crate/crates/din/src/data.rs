//! Dataset construction: Amazon review logs, MovieLens ratings, and a
//! synthetic high-cardinality generator for regularization studies.
//!
//! All builders produce the same artifacts: a feature schema over behavior
//! and candidate groups, encoded train/test instances, per-group occurrence
//! counts from the training split, and raw-to-dense vocabulary maps.

use std::collections::{BTreeMap, BTreeSet};
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::features::{
    build_schema, encode_instance, read_schema, write_schema, Category, Encoding,
    FeatureGroupSpec, FeatureSchema, Instance,
};
use crate::regularization::OccurrenceCounts;

/// What to do with an input line that fails to parse.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MalformedPolicy {
    Fail,
    Skip,
}

/// One time-stamped behavior event: a dense item id plus its category.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Event {
    pub item: u32,
    pub category: u32,
    pub timestamp: i64,
}

/// A user's time-ordered interaction history.
#[derive(Debug, Clone)]
pub struct BehaviorLog {
    pub user_key: String,
    pub events: Vec<Event>,
}

/// Bijection between raw string ids and dense contiguous ids, assigned in
/// sorted raw order.
#[derive(Debug, Clone, PartialEq)]
pub struct Vocabulary {
    to_dense: BTreeMap<String, u32>,
    to_raw: Vec<String>,
}

impl Vocabulary {
    pub fn from_set(raw: BTreeSet<String>) -> Self {
        let to_raw: Vec<String> = raw.into_iter().collect();
        let to_dense = to_raw
            .iter()
            .enumerate()
            .map(|(i, r)| (r.clone(), i as u32))
            .collect();
        Vocabulary { to_dense, to_raw }
    }

    pub fn dense(&self, raw: &str) -> Option<u32> {
        self.to_dense.get(raw).copied()
    }

    pub fn raw(&self, dense: u32) -> &str {
        &self.to_raw[dense as usize]
    }

    pub fn len(&self) -> usize {
        self.to_raw.len()
    }

    pub fn is_empty(&self) -> bool {
        self.to_raw.is_empty()
    }
}

/// Corpus-level counts in the style of the dataset-statistics table.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DatasetStats {
    pub users: usize,
    pub goods: usize,
    pub categories: usize,
    pub samples: usize,
    pub skipped_lines: usize,
}

/// Everything a training run consumes.
#[derive(Debug, Clone)]
pub struct DatasetBundle {
    pub schema: FeatureSchema,
    pub train: Vec<Instance>,
    pub test: Vec<Instance>,
    pub counts: OccurrenceCounts,
    /// Vocabulary per id space plus the group -> space assignment.
    pub spaces: Vec<Vocabulary>,
    pub group_space: Vec<usize>,
    pub stats: DatasetStats,
}

// ---------------------------------------------------------------------------
// Amazon reviews
// ---------------------------------------------------------------------------

/// Parsed and filtered Amazon corpus: per-user review sequences over dense
/// ids, restricted to users and items with at least five reviews.
#[derive(Debug, Clone)]
pub struct AmazonCorpus {
    pub logs: Vec<BehaviorLog>,
    pub item_vocab: Vocabulary,
    pub cate_vocab: Vocabulary,
    /// dense item id -> dense category id
    pub item_category: Vec<u32>,
    pub stats: DatasetStats,
}

fn json_field<'a>(value: &'a serde_json::Value, key: &str) -> Option<&'a serde_json::Value> {
    value.as_object().and_then(|o| o.get(key))
}

/// Deepest node of the first category path; metadata files carry either a
/// `categories` list of paths or a flat `category` list.
fn extract_category(value: &serde_json::Value) -> Option<String> {
    if let Some(paths) = json_field(value, "categories").and_then(|v| v.as_array()) {
        let first = paths.first()?;
        let path = first.as_array()?;
        return path.last()?.as_str().map(str::to_string);
    }
    if let Some(path) = json_field(value, "category").and_then(|v| v.as_array()) {
        return path.last()?.as_str().map(str::to_string);
    }
    json_field(value, "category")
        .and_then(|v| v.as_str())
        .map(str::to_string)
}

pub fn ingest_amazon(
    reviews_path: &Path,
    metadata_path: &Path,
    policy: MalformedPolicy,
) -> Result<AmazonCorpus> {
    // raw reviews: (user, item, time)
    let mut raw: Vec<(String, String, i64)> = Vec::new();
    let mut skipped = 0usize;
    let file = std::fs::File::open(reviews_path)
        .map_err(|e| Error::io(format!("reading reviews {}", reviews_path.display()), e))?;
    for (lineno, line) in BufReader::new(file).lines().enumerate() {
        let line =
            line.map_err(|e| Error::io(format!("reading {}", reviews_path.display()), e))?;
        if line.trim().is_empty() {
            continue;
        }
        let parsed: Option<(String, String, i64)> = serde_json::from_str::<serde_json::Value>(&line)
            .ok()
            .and_then(|v| {
                let user = json_field(&v, "reviewerID")?.as_str()?.to_string();
                let item = json_field(&v, "asin")?.as_str()?.to_string();
                let time = json_field(&v, "unixReviewTime")?.as_i64()?;
                Some((user, item, time))
            });
        match parsed {
            Some(r) => raw.push(r),
            None => match policy {
                MalformedPolicy::Fail => {
                    return Err(Error::Malformed {
                        path: reviews_path.display().to_string(),
                        line: lineno + 1,
                        problem: "unparsable review line".to_string(),
                    })
                }
                MalformedPolicy::Skip => skipped += 1,
            },
        }
    }

    // five-core filter: drop reviews of rare users or rare items
    let mut user_counts: BTreeMap<&str, usize> = BTreeMap::new();
    let mut item_counts: BTreeMap<&str, usize> = BTreeMap::new();
    for (user, item, _) in &raw {
        *user_counts.entry(user).or_insert(0) += 1;
        *item_counts.entry(item).or_insert(0) += 1;
    }
    let kept: Vec<&(String, String, i64)> = raw
        .iter()
        .filter(|(u, i, _)| user_counts[u.as_str()] >= 5 && item_counts[i.as_str()] >= 5)
        .collect();

    let item_set: BTreeSet<String> = kept.iter().map(|(_, i, _)| i.clone()).collect();
    let item_vocab = Vocabulary::from_set(item_set);

    // metadata: asin -> category name
    let mut raw_item_cate: BTreeMap<String, String> = BTreeMap::new();
    let file = std::fs::File::open(metadata_path)
        .map_err(|e| Error::io(format!("reading metadata {}", metadata_path.display()), e))?;
    for (lineno, line) in BufReader::new(file).lines().enumerate() {
        let line =
            line.map_err(|e| Error::io(format!("reading {}", metadata_path.display()), e))?;
        if line.trim().is_empty() {
            continue;
        }
        let parsed = serde_json::from_str::<serde_json::Value>(&line).ok().and_then(|v| {
            let asin = json_field(&v, "asin")?.as_str()?.to_string();
            Some((asin, extract_category(&v)))
        });
        match parsed {
            Some((asin, cate)) => {
                if item_vocab.dense(&asin).is_some() {
                    raw_item_cate.insert(asin, cate.unwrap_or_else(|| "unknown".to_string()));
                }
            }
            None => match policy {
                MalformedPolicy::Fail => {
                    return Err(Error::Malformed {
                        path: metadata_path.display().to_string(),
                        line: lineno + 1,
                        problem: "unparsable metadata line".to_string(),
                    })
                }
                MalformedPolicy::Skip => skipped += 1,
            },
        }
    }

    let cate_set: BTreeSet<String> = item_vocab
        .to_raw
        .iter()
        .map(|asin| {
            raw_item_cate
                .get(asin)
                .cloned()
                .unwrap_or_else(|| "unknown".to_string())
        })
        .collect();
    let cate_vocab = Vocabulary::from_set(cate_set);
    let item_category: Vec<u32> = item_vocab
        .to_raw
        .iter()
        .map(|asin| {
            let name = raw_item_cate
                .get(asin)
                .map(String::as_str)
                .unwrap_or("unknown");
            cate_vocab.dense(name).expect("category in vocabulary")
        })
        .collect();

    // per-user logs, events stably sorted by timestamp
    let mut by_user: BTreeMap<&str, Vec<Event>> = BTreeMap::new();
    for (user, item, time) in &kept {
        let item_id = item_vocab.dense(item).expect("kept item in vocabulary");
        by_user.entry(user).or_default().push(Event {
            item: item_id,
            category: item_category[item_id as usize],
            timestamp: *time,
        });
    }
    let logs: Vec<BehaviorLog> = by_user
        .into_iter()
        .map(|(user, mut events)| {
            events.sort_by_key(|e| e.timestamp);
            BehaviorLog {
                user_key: user.to_string(),
                events,
            }
        })
        .collect();

    let stats = DatasetStats {
        users: logs.len(),
        goods: item_vocab.len(),
        categories: cate_vocab.len(),
        samples: kept.len(),
        skipped_lines: skipped,
    };
    Ok(AmazonCorpus {
        logs,
        item_vocab,
        cate_vocab,
        item_category,
        stats,
    })
}

fn sequence_schema(
    item_space: usize,
    cate_space: usize,
    names: [&str; 4],
    max_behaviors: usize,
) -> Result<FeatureSchema> {
    build_schema(vec![
        FeatureGroupSpec::new(
            names[0],
            item_space,
            Encoding::MultiHot,
            Category::UserBehavior,
            max_behaviors,
        ),
        FeatureGroupSpec::new(
            names[1],
            cate_space,
            Encoding::MultiHot,
            Category::UserBehavior,
            max_behaviors,
        ),
        FeatureGroupSpec::new(names[2], item_space, Encoding::OneHot, Category::Ad, 1),
        FeatureGroupSpec::new(names[3], cate_space, Encoding::OneHot, Category::Ad, 1),
    ])
}

fn sequence_instance(
    schema: &FeatureSchema,
    user_key: &str,
    behaviors: &[Event],
    item: u32,
    category: u32,
    label: bool,
) -> Result<Instance> {
    let hist_items: Vec<u32> = behaviors.iter().map(|e| e.item).collect();
    let hist_cates: Vec<u32> = behaviors.iter().map(|e| e.category).collect();
    encode_instance(
        &[hist_items, hist_cates, vec![item], vec![category]],
        label,
        user_key,
        schema,
    )
}

/// Next-item task over review sequences: for behaviors `b_1..b_n`, each
/// prefix of length `k = 1..n-2` predicts `b_{k+1}` (training) and the
/// `n-1` prefix predicts `b_n` (test). Every positive is paired with one
/// uniformly sampled item the user never reviewed.
pub fn build_sequence_instances(
    corpus: &AmazonCorpus,
    max_behaviors: usize,
    seed: u64,
) -> Result<DatasetBundle> {
    let schema = sequence_schema(
        corpus.item_vocab.len(),
        corpus.cate_vocab.len(),
        ["hist_goods", "hist_cate", "goods", "cate"],
        max_behaviors,
    )?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n_items = corpus.item_vocab.len() as u32;
    let mut train = Vec::new();
    let mut test = Vec::new();
    for log in &corpus.logs {
        let n = log.events.len();
        if n < 3 {
            continue;
        }
        let reviewed: BTreeSet<u32> = log.events.iter().map(|e| e.item).collect();
        let mut negative = |rng: &mut ChaCha8Rng| -> u32 {
            loop {
                let item = rng.gen_range(0..n_items);
                if !reviewed.contains(&item) {
                    return item;
                }
            }
        };
        for k in 1..n {
            let positive = log.events[k];
            let out = if k < n - 1 { &mut train } else { &mut test };
            out.push(sequence_instance(
                &schema,
                &log.user_key,
                &log.events[..k],
                positive.item,
                positive.category,
                true,
            )?);
            let neg_item = negative(&mut rng);
            out.push(sequence_instance(
                &schema,
                &log.user_key,
                &log.events[..k],
                neg_item,
                corpus.item_category[neg_item as usize],
                false,
            )?);
        }
    }
    let counts = OccurrenceCounts::count(&train, schema.group_count());
    Ok(DatasetBundle {
        schema,
        train,
        test,
        counts,
        spaces: vec![corpus.item_vocab.clone(), corpus.cate_vocab.clone()],
        group_space: vec![0, 1, 0, 1],
        stats: corpus.stats.clone(),
    })
}

// ---------------------------------------------------------------------------
// MovieLens ratings
// ---------------------------------------------------------------------------

/// Share of users routed to the training split: 100,000 of the full
/// corpus's 138,493, applied proportionally to subsamples.
const MOVIELENS_TRAIN_SHARE: f64 = 100_000.0 / 138_493.0;

pub fn ingest_movielens(
    ratings_path: &Path,
    movies_path: &Path,
    split_seed: u64,
    subsample: Option<f64>,
    max_behaviors: usize,
    policy: MalformedPolicy,
) -> Result<DatasetBundle> {
    let mut skipped = 0usize;

    // movies.csv: movieId,title,genres — the first listed genre is the
    // movie's category
    let mut movie_genre: BTreeMap<String, String> = BTreeMap::new();
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_path(movies_path)
        .map_err(|e| Error::InvalidInput(format!("reading {}: {e}", movies_path.display())))?;
    for (lineno, record) in reader.records().enumerate() {
        match record {
            Ok(r) if r.len() >= 3 => {
                let genre = r[2].split('|').next().unwrap_or("unknown").to_string();
                movie_genre.insert(r[0].to_string(), genre);
            }
            _ => match policy {
                MalformedPolicy::Fail => {
                    return Err(Error::Malformed {
                        path: movies_path.display().to_string(),
                        line: lineno + 2,
                        problem: "unparsable movie row".to_string(),
                    })
                }
                MalformedPolicy::Skip => skipped += 1,
            },
        }
    }
    let movie_vocab = Vocabulary::from_set(movie_genre.keys().cloned().collect());
    let genre_vocab = Vocabulary::from_set(
        movie_genre
            .values()
            .cloned()
            .chain(std::iter::once("unknown".to_string()))
            .collect(),
    );
    let movie_category: Vec<u32> = movie_vocab
        .to_raw
        .iter()
        .map(|m| genre_vocab.dense(&movie_genre[m]).unwrap())
        .collect();

    // ratings.csv: userId,movieId,rating,timestamp
    struct Rating {
        movie: u32,
        rating: f64,
        timestamp: i64,
    }
    let mut by_user: BTreeMap<String, Vec<Rating>> = BTreeMap::new();
    let mut n_ratings = 0usize;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(ratings_path)
        .map_err(|e| Error::InvalidInput(format!("reading {}: {e}", ratings_path.display())))?;
    for (lineno, record) in reader.records().enumerate() {
        let parsed = record.ok().and_then(|r| {
            if r.len() < 4 {
                return None;
            }
            let movie = movie_vocab.dense(&r[1])?;
            Some((
                r[0].to_string(),
                Rating {
                    movie,
                    rating: r[2].parse().ok()?,
                    timestamp: r[3].parse().ok()?,
                },
            ))
        });
        match parsed {
            Some((user, rating)) => {
                by_user.entry(user).or_default().push(rating);
                n_ratings += 1;
            }
            None => match policy {
                MalformedPolicy::Fail => {
                    return Err(Error::Malformed {
                        path: ratings_path.display().to_string(),
                        line: lineno + 2,
                        problem: "unparsable rating row".to_string(),
                    })
                }
                MalformedPolicy::Skip => skipped += 1,
            },
        }
    }

    // seeded user subsample, then a user-disjoint train/test split
    let mut users: Vec<String> = by_user.keys().cloned().collect();
    let mut rng = ChaCha8Rng::seed_from_u64(split_seed);
    use rand::seq::SliceRandom;
    users.shuffle(&mut rng);
    if let Some(f) = subsample {
        let keep = ((users.len() as f64) * f).round() as usize;
        users.truncate(keep.max(1));
    }
    let train_users = ((users.len() as f64) * MOVIELENS_TRAIN_SHARE).round() as usize;
    let train_set: BTreeSet<&str> = users[..train_users].iter().map(String::as_str).collect();
    let kept_set: BTreeSet<&str> = users.iter().map(String::as_str).collect();

    let schema = sequence_schema(
        movie_vocab.len(),
        genre_vocab.len(),
        ["hist_movie", "hist_genre", "movie", "genre"],
        max_behaviors,
    )?;

    let mut train = Vec::new();
    let mut test = Vec::new();
    let mut kept_samples = 0usize;
    for (user, ratings) in &mut by_user {
        if !kept_set.contains(user.as_str()) {
            continue;
        }
        ratings.sort_by_key(|r| r.timestamp);
        kept_samples += ratings.len();
        let out = if train_set.contains(user.as_str()) {
            &mut train
        } else {
            &mut test
        };
        for i in 0..ratings.len() {
            // behaviors: strictly earlier rated movies, any rating value
            let behaviors: Vec<Event> = ratings
                .iter()
                .filter(|r| r.timestamp < ratings[i].timestamp)
                .map(|r| Event {
                    item: r.movie,
                    category: movie_category[r.movie as usize],
                    timestamp: r.timestamp,
                })
                .collect();
            out.push(sequence_instance(
                &schema,
                user,
                &behaviors,
                ratings[i].movie,
                movie_category[ratings[i].movie as usize],
                ratings[i].rating >= 4.0,
            )?);
        }
    }

    let counts = OccurrenceCounts::count(&train, schema.group_count());
    let stats = DatasetStats {
        users: users.len(),
        goods: movie_vocab.len(),
        categories: genre_vocab.len() - 1, // "unknown" is a fallback, not a genre
        samples: if subsample.is_some() { kept_samples } else { n_ratings },
        skipped_lines: skipped,
    };
    Ok(DatasetBundle {
        schema,
        train,
        test,
        counts,
        spaces: vec![movie_vocab, genre_vocab],
        group_space: vec![0, 1, 0, 1],
        stats,
    })
}

// ---------------------------------------------------------------------------
// Synthetic high-cardinality generator
// ---------------------------------------------------------------------------

/// Knobs for the synthetic corpus. Items follow a Zipf popularity law and
/// belong to interest clusters; users have a preferred cluster, behaviors
/// drawn mostly from it, and click probabilities from a planted logistic
/// model over cluster affinity.
#[derive(Debug, Clone, Copy)]
pub struct SynthConfig {
    pub n_users: usize,
    pub vocab_size: usize,
    pub behaviors_per_user: usize,
    pub interest_clusters: usize,
    pub train_impressions_per_user: usize,
    pub test_impressions_per_user: usize,
    pub zipf_exponent: f64,
    /// Probability a candidate is drawn from the user's preferred cluster.
    pub candidate_match_rate: f64,
    /// Probability a behavior is drawn from the preferred cluster.
    pub behavior_match_rate: f64,
    /// Planted model: logit = base_logit + affinity_gain * affinity.
    pub base_logit: f64,
    pub affinity_gain: f64,
    pub seed: u64,
}

impl SynthConfig {
    /// Defaults for the regularization study: a long-tail vocabulary with
    /// ~120k impressions.
    pub fn study(seed: u64) -> Self {
        SynthConfig {
            n_users: 5000,
            vocab_size: 100_000,
            behaviors_per_user: 20,
            interest_clusters: 20,
            train_impressions_per_user: 20,
            test_impressions_per_user: 4,
            zipf_exponent: 1.2,
            candidate_match_rate: 0.5,
            behavior_match_rate: 0.85,
            base_logit: -1.4,
            affinity_gain: 3.2,
            seed,
        }
    }
}

/// Synthetic bundle plus the planted model's probabilities for the test
/// split, for oracle checks.
#[derive(Debug, Clone)]
pub struct SynthBundle {
    pub bundle: DatasetBundle,
    pub bayes_test_scores: Vec<f64>,
}

/// Cumulative-weight sampler over `1/(rank+1)^s` popularity.
struct ZipfSampler {
    /// Per cluster: cumulative weights over the cluster's items, where item
    /// ids are `cluster + k * n_clusters`.
    per_cluster: Vec<Vec<f64>>,
    global: Vec<f64>,
    n_clusters: usize,
}

impl ZipfSampler {
    fn new(vocab: usize, n_clusters: usize, exponent: f64) -> Self {
        let weights: Vec<f64> = (0..vocab)
            .map(|i| 1.0 / ((i + 1) as f64).powf(exponent))
            .collect();
        let mut global = Vec::with_capacity(vocab);
        let mut acc = 0.0;
        for &w in &weights {
            acc += w;
            global.push(acc);
        }
        let mut per_cluster = vec![Vec::new(); n_clusters];
        for c in 0..n_clusters {
            let mut acc = 0.0;
            let mut k = c;
            while k < vocab {
                acc += weights[k];
                per_cluster[c].push(acc);
                k += n_clusters;
            }
        }
        ZipfSampler {
            per_cluster,
            global,
            n_clusters,
        }
    }

    fn sample_global(&self, rng: &mut ChaCha8Rng) -> u32 {
        let total = *self.global.last().unwrap();
        let u = rng.gen_range(0.0..total);
        self.global.partition_point(|&c| c <= u) as u32
    }

    fn sample_cluster(&self, cluster: usize, rng: &mut ChaCha8Rng) -> u32 {
        let cum = &self.per_cluster[cluster];
        let total = *cum.last().unwrap();
        let u = rng.gen_range(0.0..total);
        let k = cum.partition_point(|&c| c <= u);
        (cluster + k * self.n_clusters) as u32
    }
}

pub fn synth_generate(cfg: &SynthConfig) -> Result<SynthBundle> {
    if cfg.n_users == 0
        || cfg.interest_clusters == 0
        || cfg.behaviors_per_user == 0
        || cfg.vocab_size < cfg.interest_clusters
    {
        return Err(Error::InvalidInput("degenerate synthetic config".into()));
    }
    // long-tail regime: the vocabulary must dwarf the event budget
    let events = cfg.n_users * cfg.behaviors_per_user;
    if cfg.vocab_size * 10 < events {
        return Err(Error::InvalidInput(format!(
            "vocab_size {} too small for {} behavior events",
            cfg.vocab_size, events
        )));
    }

    let clusters = cfg.interest_clusters;
    let schema = sequence_schema(
        cfg.vocab_size,
        clusters,
        ["hist_goods", "hist_cate", "goods", "cate"],
        cfg.behaviors_per_user,
    )?;
    let sampler = ZipfSampler::new(cfg.vocab_size, clusters, cfg.zipf_exponent);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let sigmoid = crate::activation::sigmoid;

    let mut train = Vec::new();
    let mut test = Vec::new();
    let mut bayes = Vec::new();
    let width = (cfg.n_users as f64).log10().ceil().max(1.0) as usize;
    for u in 0..cfg.n_users {
        let user_key = format!("u{u:0width$}");
        let preferred = rng.gen_range(0..clusters);
        // behaviors: mostly the preferred cluster, drawn by popularity
        let mut behavior_items = Vec::with_capacity(cfg.behaviors_per_user);
        for _ in 0..cfg.behaviors_per_user {
            let c = if rng.gen_range(0.0..1.0) < cfg.behavior_match_rate {
                preferred
            } else {
                rng.gen_range(0..clusters)
            };
            behavior_items.push(sampler.sample_cluster(c, &mut rng));
        }
        let hist_items: Vec<u32> = behavior_items.clone();
        let hist_cates: Vec<u32> = behavior_items
            .iter()
            .map(|&i| (i as usize % clusters) as u32)
            .collect();
        // affinity of a candidate cluster: fraction of behavior events in it
        let mut cluster_share = vec![0.0f64; clusters];
        for &i in &behavior_items {
            cluster_share[i as usize % clusters] += 1.0 / cfg.behaviors_per_user as f64;
        }

        let total = cfg.train_impressions_per_user + cfg.test_impressions_per_user;
        for t in 0..total {
            let candidate = if rng.gen_range(0.0..1.0) < cfg.candidate_match_rate {
                sampler.sample_cluster(preferred, &mut rng)
            } else {
                sampler.sample_global(&mut rng)
            };
            let cand_cluster = candidate as usize % clusters;
            let p_true = sigmoid(cfg.base_logit + cfg.affinity_gain * cluster_share[cand_cluster]);
            let label = rng.gen_range(0.0..1.0) < p_true;
            let inst = encode_instance(
                &[
                    hist_items.clone(),
                    hist_cates.clone(),
                    vec![candidate],
                    vec![cand_cluster as u32],
                ],
                label,
                &user_key,
                &schema,
            )?;
            if t < cfg.train_impressions_per_user {
                train.push(inst);
            } else {
                test.push(inst);
                bayes.push(p_true);
            }
        }
    }

    let counts = OccurrenceCounts::count(&train, schema.group_count());
    let item_vocab =
        Vocabulary::from_set((0..cfg.vocab_size).map(|i| format!("{i:08}")).collect());
    let cate_vocab = Vocabulary::from_set((0..clusters).map(|c| format!("{c:04}")).collect());
    let stats = DatasetStats {
        users: cfg.n_users,
        goods: cfg.vocab_size,
        categories: clusters,
        samples: cfg.n_users * (cfg.train_impressions_per_user + cfg.test_impressions_per_user),
        skipped_lines: 0,
    };
    Ok(SynthBundle {
        bundle: DatasetBundle {
            schema,
            train,
            test,
            counts,
            spaces: vec![item_vocab, cate_vocab],
            group_space: vec![0, 1, 0, 1],
            stats,
        },
        bayes_test_scores: bayes,
    })
}

// ---------------------------------------------------------------------------
// Prepared-directory layout
// ---------------------------------------------------------------------------

pub const SCHEMA_FILE: &str = "schema.tsv";
pub const TRAIN_FILE: &str = "train.tsv";
pub const TEST_FILE: &str = "test.tsv";
pub const COUNTS_FILE: &str = "counts.tsv";
pub const VOCAB_FILE: &str = "vocab.tsv";

pub fn write_bundle(bundle: &DatasetBundle, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)
        .map_err(|e| Error::io(format!("creating {}", dir.display()), e))?;
    let write = |name: &str, body: &dyn Fn(&mut Vec<u8>) -> std::io::Result<()>| -> Result<()> {
        let mut buf = Vec::new();
        body(&mut buf).map_err(|e| Error::io(format!("formatting {name}"), e))?;
        std::fs::write(dir.join(name), &buf)
            .map_err(|e| Error::io(format!("writing {}", dir.join(name).display()), e))
    };
    write(SCHEMA_FILE, &|w| write_schema(&bundle.schema, w))?;
    write(TRAIN_FILE, &|w| {
        crate::features::write_instances(&bundle.train, w)
    })?;
    write(TEST_FILE, &|w| {
        crate::features::write_instances(&bundle.test, w)
    })?;
    write(COUNTS_FILE, &|w| bundle.counts.write_tsv(&bundle.schema, w))?;
    write(VOCAB_FILE, &|w| {
        for (g, spec) in bundle.schema.groups().iter().enumerate() {
            let vocab = &bundle.spaces[bundle.group_space[g]];
            for dense in 0..vocab.len() {
                writeln!(w, "{}\t{}\t{}", spec.name, vocab.raw(dense as u32), dense)?;
            }
        }
        Ok(())
    })?;
    Ok(())
}

/// The artifacts a train/eval command loads back from a prepared directory.
#[derive(Debug, Clone)]
pub struct PreparedData {
    pub schema: FeatureSchema,
    pub train: Vec<Instance>,
    pub test: Vec<Instance>,
    pub counts: OccurrenceCounts,
}

pub fn load_prepared(dir: &Path) -> Result<PreparedData> {
    let schema = read_schema(&dir.join(SCHEMA_FILE))?;
    let train = crate::features::read_instances(&dir.join(TRAIN_FILE), &schema)?;
    let test = crate::features::read_instances(&dir.join(TEST_FILE), &schema)?;
    let counts = OccurrenceCounts::read_tsv(&dir.join(COUNTS_FILE), &schema)?;
    Ok(PreparedData {
        schema,
        train,
        test,
        counts,
    })
}
