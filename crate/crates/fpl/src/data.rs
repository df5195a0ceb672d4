//! Interaction-log ingestion, filtering, binarization, temporal hold-out
//! splitting, and a planted-factor synthetic generator.

use std::collections::{HashMap, HashSet};
use std::fs;
use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{FplError, Result};

/// One raw check-in record.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Interaction {
    pub user: String,
    pub item: String,
    pub timestamp: i64,
}

/// (user index, item index, timestamp)
pub type IndexedRecord = (usize, usize, i64);

/// Indexed, split dataset: the binarized matrix X restricted to each side.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub user_keys: Vec<String>,
    pub item_keys: Vec<String>,
    pub train_records: Vec<IndexedRecord>,
    pub validation_records: Option<Vec<IndexedRecord>>,
    pub test_records: Vec<IndexedRecord>,
    /// Sorted per-user train item sets.
    pub train_positives: Vec<Vec<usize>>,
    pub validation_positives: Option<Vec<Vec<usize>>>,
    pub test_positives: Vec<Vec<usize>>,
    /// X^+: total train positives.
    pub x_plus: u64,
    /// External keys of users dropped because a split side came up empty.
    pub dropped_users: Vec<String>,
}

impl Dataset {
    pub fn num_users(&self) -> usize {
        self.user_keys.len()
    }

    pub fn num_items(&self) -> usize {
        self.item_keys.len()
    }
}

/// Parses a tab-separated log: user<TAB>item<TAB>timestamp, `#` comments.
pub fn ingest(path: &Path) -> Result<Vec<Interaction>> {
    let text = fs::read_to_string(path)?;
    parse_records(&text, &path.display().to_string())
}

pub fn parse_records(text: &str, source: &str) -> Result<Vec<Interaction>> {
    let mut records = Vec::new();
    for (line_no, line) in text.lines().enumerate() {
        let line_no = line_no + 1;
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 3 {
            return Err(FplError::Parse {
                path: source.into(),
                line: line_no,
                message: format!("expected 3 tab-separated fields, found {}", fields.len()),
            });
        }
        let timestamp: i64 = fields[2].trim().parse().map_err(|_| FplError::Parse {
            path: source.into(),
            line: line_no,
            message: format!("invalid timestamp {:?}", fields[2]),
        })?;
        if timestamp < 0 {
            return Err(FplError::Parse {
                path: source.into(),
                line: line_no,
                message: "negative timestamp".into(),
            });
        }
        records.push(Interaction {
            user: fields[0].to_string(),
            item: fields[1].to_string(),
            timestamp,
        });
    }
    Ok(records)
}

/// Deduplicates (user, item) pairs keeping the earliest timestamp, then
/// keeps users with strictly more than `min_interactions` distinct items.
pub fn filter_and_binarize(records: &[Interaction], min_interactions: usize) -> Vec<Interaction> {
    let mut earliest: HashMap<(&str, &str), i64> = HashMap::new();
    let mut order: Vec<(&str, &str)> = Vec::new();
    for r in records {
        let key = (r.user.as_str(), r.item.as_str());
        match earliest.get_mut(&key) {
            Some(ts) => {
                if r.timestamp < *ts {
                    *ts = r.timestamp;
                }
            }
            None => {
                earliest.insert(key, r.timestamp);
                order.push(key);
            }
        }
    }
    let mut per_user: HashMap<&str, usize> = HashMap::new();
    for (user, _) in &order {
        *per_user.entry(user).or_default() += 1;
    }
    order
        .into_iter()
        .filter(|(user, _)| per_user[user] > min_interactions)
        .map(|key| Interaction {
            user: key.0.to_string(),
            item: key.1.to_string(),
            timestamp: earliest[&key],
        })
        .collect()
}

/// Per-user chronological 2-way split. Ties on timestamp break by item
/// index ascending (first-appearance assignment). The earlier side gets
/// max(1, floor(fraction * n)) records; users with an empty later side are
/// dropped and reported.
fn split_per_user(
    records: &[Interaction],
    fraction: f64,
) -> (Vec<Interaction>, Vec<Interaction>, Vec<String>) {
    let mut item_order: HashMap<&str, usize> = HashMap::new();
    for r in records {
        let next = item_order.len();
        item_order.entry(r.item.as_str()).or_insert(next);
    }

    let mut user_order: Vec<&str> = Vec::new();
    let mut grouped: HashMap<&str, Vec<&Interaction>> = HashMap::new();
    for r in records {
        let entry = grouped.entry(r.user.as_str()).or_default();
        if entry.is_empty() {
            user_order.push(r.user.as_str());
        }
        entry.push(r);
    }

    let mut earlier = Vec::new();
    let mut later = Vec::new();
    let mut dropped = Vec::new();
    for user in user_order {
        let mut rows = grouped.remove(user).unwrap();
        rows.sort_by_key(|r| (r.timestamp, item_order[r.item.as_str()]));
        let n = rows.len();
        let cut = ((fraction * n as f64).floor() as usize).max(1);
        if cut >= n {
            dropped.push(user.to_string());
            continue;
        }
        earlier.extend(rows[..cut].iter().map(|r| (*r).clone()));
        later.extend(rows[cut..].iter().map(|r| (*r).clone()));
    }
    (earlier, later, dropped)
}

fn assemble(
    train: Vec<Interaction>,
    validation: Option<Vec<Interaction>>,
    test: Vec<Interaction>,
    dropped_users: Vec<String>,
) -> Dataset {
    let mut user_keys: Vec<String> = Vec::new();
    let mut item_keys: Vec<String> = Vec::new();
    let mut user_index: HashMap<String, usize> = HashMap::new();
    let mut item_index: HashMap<String, usize> = HashMap::new();

    let sides: Vec<&[Interaction]> = match &validation {
        Some(v) => vec![&train, v, &test],
        None => vec![&train, &test],
    };
    for side in &sides {
        for r in side.iter() {
            if !user_index.contains_key(&r.user) {
                user_index.insert(r.user.clone(), user_keys.len());
                user_keys.push(r.user.clone());
            }
            if !item_index.contains_key(&r.item) {
                item_index.insert(r.item.clone(), item_keys.len());
                item_keys.push(r.item.clone());
            }
        }
    }

    let index_side = |side: &[Interaction]| -> Vec<IndexedRecord> {
        side.iter()
            .map(|r| (user_index[&r.user], item_index[&r.item], r.timestamp))
            .collect()
    };
    let positives = |records: &[IndexedRecord]| -> Vec<Vec<usize>> {
        let mut sets = vec![Vec::new(); user_keys.len()];
        for &(u, i, _) in records {
            sets[u].push(i);
        }
        for s in &mut sets {
            s.sort_unstable();
        }
        sets
    };

    let train_records = index_side(&train);
    let validation_records = validation.as_deref().map(index_side);
    let test_records = index_side(&test);
    let x_plus = train_records.len() as u64;
    let train_positives = positives(&train_records);
    let validation_positives = validation_records.as_deref().map(&positives);
    let test_positives = positives(&test_records);

    Dataset {
        user_keys,
        item_keys,
        train_records,
        validation_records,
        test_records,
        train_positives,
        validation_positives,
        test_positives,
        x_plus,
        dropped_users,
    }
}

/// Per-user temporal hold-out split into train and test.
pub fn temporal_split(records: &[Interaction], train_fraction: f64) -> Result<Dataset> {
    if !(0.0 < train_fraction && train_fraction < 1.0) {
        return Err(FplError::Config(
            "train_fraction must lie strictly in (0, 1)".into(),
        ));
    }
    let (train, test, dropped) = split_per_user(records, train_fraction);
    Ok(assemble(train, None, test, dropped))
}

/// Splits the train side once more into sub-train and validation, with the
/// same mechanics. Users left without a validation record are dropped.
pub fn validation_split(dataset: &Dataset, fraction: f64) -> Result<Dataset> {
    if !(0.0 < fraction && fraction < 1.0) {
        return Err(FplError::Config(
            "validation fraction must lie strictly in (0, 1)".into(),
        ));
    }
    let to_interactions = |records: &[IndexedRecord]| -> Vec<Interaction> {
        records
            .iter()
            .map(|&(u, i, ts)| Interaction {
                user: dataset.user_keys[u].clone(),
                item: dataset.item_keys[i].clone(),
                timestamp: ts,
            })
            .collect()
    };
    let train = to_interactions(&dataset.train_records);
    let (sub_train, validation, mut dropped) = split_per_user(&train, fraction);
    let dropped_set: HashSet<&String> = dropped.iter().collect();
    let test = to_interactions(&dataset.test_records)
        .into_iter()
        .filter(|r| !dropped_set.contains(&r.user))
        .collect();
    let mut all_dropped = dataset.dropped_users.clone();
    all_dropped.append(&mut dropped);
    Ok(assemble(sub_train, Some(validation), test, all_dropped))
}

/// Synthetic check-in log with planted low-rank structure and a power-law
/// item popularity with the given exponent. Deterministic under `seed`.
pub fn generate_synthetic(
    num_users: usize,
    num_items: usize,
    latent_dim: usize,
    density: f64,
    popularity_skew: f64,
    seed: u64,
) -> Result<Vec<Interaction>> {
    if num_users == 0 || num_items == 0 || latent_dim == 0 {
        return Err(FplError::Config("synthetic dimensions must be >= 1".into()));
    }
    if !(0.0 < density && density < 1.0) {
        return Err(FplError::Config("density must lie strictly in (0, 1)".into()));
    }
    if popularity_skew < 0.0 {
        return Err(FplError::Config("popularity_skew must be >= 0".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, 1.0).expect("valid stddev");
    let user_factors: Vec<Vec<f64>> = (0..num_users)
        .map(|_| (0..latent_dim).map(|_| normal.sample(&mut rng)).collect())
        .collect();
    let item_factors: Vec<Vec<f64>> = (0..num_items)
        .map(|_| (0..latent_dim).map(|_| normal.sample(&mut rng)).collect())
        .collect();
    // item index doubles as popularity rank
    let popularity: Vec<f64> = (0..num_items)
        .map(|i| ((i + 1) as f64).powf(-popularity_skew))
        .collect();

    // sharpen the planted signal so the structure dominates noise
    let gain = 3.0 / (latent_dim as f64).sqrt();
    let mut weights = vec![0.0; num_users * num_items];
    let mut total = 0.0;
    for (u, pu) in user_factors.iter().enumerate() {
        for (i, qi) in item_factors.iter().enumerate() {
            let dot: f64 = pu.iter().zip(qi).map(|(a, b)| a * b).sum();
            let w = popularity[i] / (1.0 + (-gain * dot).exp());
            weights[u * num_items + i] = w;
            total += w;
        }
    }
    let scale = density * (num_users * num_items) as f64 / total;

    let mut records = Vec::new();
    let mut clock: i64 = 0;
    for u in 0..num_users {
        let mut chosen: Vec<usize> = (0..num_items)
            .filter(|&i| {
                let p = (scale * weights[u * num_items + i]).min(1.0);
                rng.random::<f64>() < p
            })
            .collect();
        // visit items in random order so timestamps don't encode popularity
        chosen.shuffle(&mut rng);
        for i in chosen {
            clock += 1;
            records.push(Interaction {
                user: format!("u{u}"),
                item: format!("i{i}"),
                timestamp: clock,
            });
        }
    }
    Ok(records)
}

const MANIFEST_FILE: &str = "manifest.txt";

/// Writes index maps, per-side record TSVs, and a manifest into `dir`.
pub fn save_dataset(dir: &Path, dataset: &Dataset, extras: &[(String, String)]) -> Result<()> {
    fs::create_dir_all(dir)?;
    let write_index = |name: &str, keys: &[String]| -> Result<()> {
        let mut out = String::new();
        for (idx, key) in keys.iter().enumerate() {
            out.push_str(&format!("{idx}\t{key}\n"));
        }
        fs::write(dir.join(name), out)?;
        Ok(())
    };
    write_index("users.tsv", &dataset.user_keys)?;
    write_index("items.tsv", &dataset.item_keys)?;

    let write_side = |name: &str, records: &[IndexedRecord]| -> Result<()> {
        let mut file = fs::File::create(dir.join(name))?;
        for &(u, i, ts) in records {
            writeln!(file, "{u}\t{i}\t{ts}")?;
        }
        Ok(())
    };
    write_side("train.tsv", &dataset.train_records)?;
    write_side("test.tsv", &dataset.test_records)?;
    if let Some(validation) = &dataset.validation_records {
        write_side("validation.tsv", validation)?;
    }

    let mut manifest = String::new();
    manifest.push_str(&format!("num_users = {}\n", dataset.num_users()));
    manifest.push_str(&format!("num_items = {}\n", dataset.num_items()));
    manifest.push_str(&format!("x_plus = {}\n", dataset.x_plus));
    manifest.push_str(&format!("test_records = {}\n", dataset.test_records.len()));
    if let Some(v) = &dataset.validation_records {
        manifest.push_str(&format!("validation_records = {}\n", v.len()));
    }
    manifest.push_str(&format!("dropped_users = {}\n", dataset.dropped_users.len()));
    for (key, value) in extras {
        manifest.push_str(&format!("{key} = {value}\n"));
    }
    fs::write(dir.join(MANIFEST_FILE), manifest)?;
    Ok(())
}

/// Loads a dataset previously written by `save_dataset`.
pub fn load_dataset(dir: &Path) -> Result<Dataset> {
    let read_index = |name: &str| -> Result<Vec<String>> {
        let path = dir.join(name);
        let text = fs::read_to_string(&path)?;
        let mut keys = Vec::new();
        for (line_no, line) in text.lines().enumerate() {
            let mut fields = line.split('\t');
            let idx: usize = fields
                .next()
                .and_then(|f| f.parse().ok())
                .ok_or_else(|| FplError::Parse {
                    path: path.display().to_string(),
                    line: line_no + 1,
                    message: "bad index".into(),
                })?;
            let key = fields.next().ok_or_else(|| FplError::Parse {
                path: path.display().to_string(),
                line: line_no + 1,
                message: "missing key".into(),
            })?;
            if idx != keys.len() {
                return Err(FplError::Parse {
                    path: path.display().to_string(),
                    line: line_no + 1,
                    message: "non-contiguous index".into(),
                });
            }
            keys.push(key.to_string());
        }
        Ok(keys)
    };
    let user_keys = read_index("users.tsv")?;
    let item_keys = read_index("items.tsv")?;

    let read_side = |name: &str| -> Result<Vec<IndexedRecord>> {
        let path = dir.join(name);
        let text = fs::read_to_string(&path)?;
        let mut records = Vec::new();
        for (line_no, line) in text.lines().enumerate() {
            let fields: Vec<&str> = line.split('\t').collect();
            let parse_err = |message: &str| FplError::Parse {
                path: path.display().to_string(),
                line: line_no + 1,
                message: message.into(),
            };
            if fields.len() != 3 {
                return Err(parse_err("expected 3 fields"));
            }
            let u: usize = fields[0].parse().map_err(|_| parse_err("bad user index"))?;
            let i: usize = fields[1].parse().map_err(|_| parse_err("bad item index"))?;
            let ts: i64 = fields[2].parse().map_err(|_| parse_err("bad timestamp"))?;
            records.push((u, i, ts));
        }
        Ok(records)
    };
    let train_records = read_side("train.tsv")?;
    let test_records = read_side("test.tsv")?;
    let validation_records = if dir.join("validation.tsv").exists() {
        Some(read_side("validation.tsv")?)
    } else {
        None
    };

    let positives = |records: &[IndexedRecord]| -> Vec<Vec<usize>> {
        let mut sets = vec![Vec::new(); user_keys.len()];
        for &(u, i, _) in records {
            sets[u].push(i);
        }
        for s in &mut sets {
            s.sort_unstable();
        }
        sets
    };
    let x_plus = train_records.len() as u64;
    let train_positives = positives(&train_records);
    let validation_positives = validation_records.as_deref().map(&positives);
    let test_positives = positives(&test_records);

    Ok(Dataset {
        user_keys,
        item_keys,
        train_records,
        validation_records,
        test_records,
        train_positives,
        validation_positives,
        test_positives,
        x_plus,
        dropped_users: Vec::new(),
    })
}
