//! TSV ingestion and the on-disk dataset layout.
//!
//! A saved dataset is a directory holding `manifest.json`, one
//! `user_index<TAB>item_index` file per split and `categories.bin`
//! (two little-endian u64 dims followed by row-major little-endian f64s).

use std::collections::HashMap;
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::{sort_chronologically, Interaction, InteractionDataset, ItemCategoryMatrix, RawEvent, Split};
use crate::error::{ensure, Error, Result};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LoadReport {
    pub events_read: usize,
    pub duplicates: usize,
    /// Items listed in the categories file with an empty category field.
    pub rejected_items: Vec<String>,
    /// Events whose item has no usable category entry.
    pub events_without_categories: usize,
    /// Categories that no retained item belongs to.
    pub unused_categories: Vec<String>,
}

fn open(path: &Path) -> Result<BufReader<fs::File>> {
    fs::File::open(path)
        .map(BufReader::new)
        .map_err(|e| Error::io(path, e))
}

/// Non-comment, non-blank lines with their 1-based line numbers.
fn data_lines(path: &Path) -> Result<Vec<(usize, String)>> {
    let mut out = Vec::new();
    for (idx, line) in open(path)?.lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        let trimmed = line.trim_end_matches(['\r', '\n']);
        if trimmed.trim().is_empty() || trimmed.starts_with('#') {
            continue;
        }
        out.push((idx + 1, trimmed.to_string()));
    }
    Ok(out)
}

/// Reads `user_id<TAB>item_id[<TAB>rating[<TAB>timestamp]]` lines.
pub fn read_events(path: &Path) -> Result<Vec<RawEvent>> {
    let parse_err = |line: usize, msg: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        msg,
    };
    let mut events = Vec::new();
    for (line, text) in data_lines(path)? {
        let fields: Vec<&str> = text.split('\t').collect();
        if fields.len() < 2 || fields.len() > 4 {
            return Err(parse_err(line, format!("expected 2 to 4 tab-separated fields, got {}", fields.len())));
        }
        let user_id = fields[0].trim();
        let item_id = fields[1].trim();
        if user_id.is_empty() || item_id.is_empty() {
            return Err(parse_err(line, "missing user or item id".into()));
        }
        let rating = match fields.get(2).map(|s| s.trim()).filter(|s| !s.is_empty()) {
            None => None,
            Some(s) => {
                let r: f64 = s
                    .parse()
                    .map_err(|_| parse_err(line, format!("bad rating {s:?}")))?;
                if !r.is_finite() {
                    return Err(parse_err(line, format!("non-finite rating {s:?}")));
                }
                Some(r)
            }
        };
        let timestamp = match fields.get(3).map(|s| s.trim()).filter(|s| !s.is_empty()) {
            None => None,
            Some(s) => Some(
                s.parse::<i64>()
                    .map_err(|_| parse_err(line, format!("bad timestamp {s:?}")))?,
            ),
        };
        events.push(RawEvent {
            user_id: user_id.to_string(),
            item_id: item_id.to_string(),
            rating,
            timestamp,
        });
    }
    Ok(events)
}

/// Reads `item_id<TAB>cat1|cat2|...` lines into (item, categories) pairs.
pub fn read_categories(path: &Path) -> Result<Vec<(String, Vec<String>)>> {
    let mut out = Vec::new();
    for (line, text) in data_lines(path)? {
        let Some((item, cats)) = text.split_once('\t') else {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                line,
                msg: "expected item_id<TAB>categories".into(),
            });
        };
        let cats: Vec<String> = cats
            .split('|')
            .map(str::trim)
            .filter(|c| !c.is_empty())
            .map(String::from)
            .collect();
        out.push((item.trim().to_string(), cats));
    }
    Ok(out)
}

/// Indexes events into a dataset. Users, items and categories are numbered
/// in order of first appearance.
pub fn from_events(
    events: &[RawEvent],
    categories: &[(String, Vec<String>)],
) -> Result<(InteractionDataset, LoadReport)> {
    let mut report = LoadReport {
        events_read: events.len(),
        ..Default::default()
    };
    let mut item_cats: HashMap<&str, &[String]> = HashMap::new();
    for (item, cats) in categories {
        if cats.is_empty() {
            report.rejected_items.push(item.clone());
        } else {
            item_cats.insert(item.as_str(), cats.as_slice());
        }
    }

    let mut user_index: HashMap<&str, usize> = HashMap::new();
    let mut item_index: HashMap<&str, usize> = HashMap::new();
    let mut user_ids = Vec::new();
    let mut item_ids = Vec::new();
    let mut lists: Vec<Vec<Interaction>> = Vec::new();
    let mut seen: HashMap<(usize, usize), usize> = HashMap::new();

    for ev in events {
        if !item_cats.contains_key(ev.item_id.as_str()) {
            report.events_without_categories += 1;
            continue;
        }
        let u = *user_index.entry(&ev.user_id).or_insert_with(|| {
            user_ids.push(ev.user_id.clone());
            lists.push(Vec::new());
            user_ids.len() - 1
        });
        let i = *item_index.entry(&ev.item_id).or_insert_with(|| {
            item_ids.push(ev.item_id.clone());
            item_ids.len() - 1
        });
        match seen.get(&(u, i)) {
            Some(&pos) => {
                report.duplicates += 1;
                // Keep the earliest time a duplicated pair was seen.
                let existing = &mut lists[u][pos];
                if let Some(ts) = ev.timestamp {
                    existing.timestamp = Some(existing.timestamp.map_or(ts, |old| old.min(ts)));
                }
            }
            None => {
                seen.insert((u, i), lists[u].len());
                lists[u].push(Interaction {
                    item: i,
                    split: Split::Train,
                    timestamp: ev.timestamp,
                });
            }
        }
    }
    ensure!(!user_ids.is_empty(), Data, "no usable events");

    let mut cat_index: HashMap<&str, usize> = HashMap::new();
    let mut cat_names = Vec::new();
    let memberships: Vec<Vec<usize>> = item_ids
        .iter()
        .map(|id| {
            item_cats[id.as_str()]
                .iter()
                .map(|c| {
                    *cat_index.entry(c.as_str()).or_insert_with(|| {
                        cat_names.push(c.clone());
                        cat_names.len() - 1
                    })
                })
                .collect()
        })
        .collect();
    let used: std::collections::HashSet<&str> = cat_index.keys().copied().collect();
    let mut unused: Vec<String> = categories
        .iter()
        .flat_map(|(_, cs)| cs.iter())
        .filter(|c| !used.contains(c.as_str()))
        .cloned()
        .collect();
    unused.sort();
    unused.dedup();
    report.unused_categories = unused;

    for list in &mut lists {
        sort_chronologically(list);
    }
    let f = ItemCategoryMatrix::from_memberships(&memberships, cat_names)?;
    let ds = InteractionDataset::new(user_ids, item_ids, f, lists)?;
    Ok((ds, report))
}

/// Reads both TSV files and builds the unsplit dataset.
pub fn load_interactions(
    events_path: &Path,
    categories_path: &Path,
) -> Result<(InteractionDataset, LoadReport)> {
    let events = read_events(events_path)?;
    let categories = read_categories(categories_path)?;
    from_events(&events, &categories)
}

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    n_users: usize,
    n_items: usize,
    n_categories: usize,
    user_ids: Vec<String>,
    item_ids: Vec<String>,
    category_names: Vec<String>,
    seed: Option<u64>,
    split_counts: HashMap<String, usize>,
}

const MANIFEST: &str = "manifest.json";
const CATEGORIES: &str = "categories.bin";

fn split_file(split: Split) -> String {
    format!("{}.tsv", split.name())
}

pub fn save_dataset(ds: &InteractionDataset, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let manifest = Manifest {
        n_users: ds.n_users(),
        n_items: ds.n_items(),
        n_categories: ds.n_categories(),
        user_ids: ds.user_ids.clone(),
        item_ids: ds.item_ids.clone(),
        category_names: ds.categories.names().to_vec(),
        seed: ds.seed,
        split_counts: Split::ALL
            .iter()
            .map(|&s| (s.name().to_string(), ds.split_count(s)))
            .collect(),
    };
    let path = dir.join(MANIFEST);
    let text = serde_json::to_string_pretty(&manifest)?;
    fs::write(&path, text).map_err(|e| Error::io(&path, e))?;

    for split in Split::ALL {
        let path = dir.join(split_file(split));
        let file = fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
        let mut w = BufWriter::new(file);
        for (u, list) in ds.interactions.iter().enumerate() {
            for it in list.iter().filter(|it| it.split == split) {
                writeln!(w, "{u}\t{}", it.item).map_err(|e| Error::io(&path, e))?;
            }
        }
        w.flush().map_err(|e| Error::io(&path, e))?;
    }

    let path = dir.join(CATEGORIES);
    let f = ds.categories.weights();
    let mut bytes = Vec::with_capacity(16 + 8 * f.len());
    bytes.extend_from_slice(&(f.nrows() as u64).to_le_bytes());
    bytes.extend_from_slice(&(f.ncols() as u64).to_le_bytes());
    for v in f.iter() {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    fs::write(&path, bytes).map_err(|e| Error::io(&path, e))
}

pub fn load_dataset(dir: &Path) -> Result<InteractionDataset> {
    let path = dir.join(MANIFEST);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let m: Manifest = serde_json::from_str(&text)?;
    ensure!(
        m.user_ids.len() == m.n_users && m.item_ids.len() == m.n_items && m.category_names.len() == m.n_categories,
        Data,
        "manifest dimensions disagree with its id lists"
    );

    let path = dir.join(CATEGORIES);
    let mut bytes = Vec::new();
    open(&path)?
        .read_to_end(&mut bytes)
        .map_err(|e| Error::io(&path, e))?;
    ensure!(bytes.len() >= 16, Data, "{} is truncated", path.display());
    let rows = u64::from_le_bytes(bytes[0..8].try_into().unwrap()) as usize;
    let cols = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
    ensure!(
        rows == m.n_items && cols == m.n_categories && bytes.len() == 16 + 8 * rows * cols,
        Data,
        "{} has the wrong shape",
        path.display()
    );
    let values: Vec<f64> = bytes[16..]
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    let weights = Array2::from_shape_vec((rows, cols), values)
        .map_err(|e| Error::Data(e.to_string()))?;
    let categories = ItemCategoryMatrix::from_weights(weights, m.category_names)?;

    let mut lists = vec![Vec::new(); m.n_users];
    let mut seq = 0i64;
    for split in Split::ALL {
        let path = dir.join(split_file(split));
        for (line, text) in data_lines(&path)? {
            let parse_err = |msg: &str| Error::Parse {
                path: path.clone(),
                line,
                msg: msg.to_string(),
            };
            let (u, i) = text.split_once('\t').ok_or_else(|| parse_err("expected user<TAB>item"))?;
            let u: usize = u.trim().parse().map_err(|_| parse_err("bad user index"))?;
            let i: usize = i.trim().parse().map_err(|_| parse_err("bad item index"))?;
            if u >= m.n_users || i >= m.n_items {
                return Err(parse_err("index out of range"));
            }
            // File order is chronological within each split, and splits are
            // written oldest first.
            lists[u].push(Interaction {
                item: i,
                split,
                timestamp: Some(seq),
            });
            seq += 1;
        }
    }
    let mut ds = InteractionDataset::new(m.user_ids, m.item_ids, categories, lists)?;
    ds.seed = m.seed;
    Ok(ds)
}
