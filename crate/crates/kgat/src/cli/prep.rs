//! Dataset preparation: iterative core filtering, dense id remapping, and
//! per-user train/test/validation splitting.
//!
//! Input files use the same formats the loaders consume, but ids may be
//! sparse and items may fall below the core threshold. Items and KG entities
//! share one id space on input; retained items keep the low entity ids on
//! output so the loaders' "items are the entity prefix" convention holds.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::CliError;
use crate::ckg::{build_ckg, load_interactions, load_kg};

#[derive(Debug, Clone)]
pub struct PrepOptions {
    /// Minimum interactions per user and per item; filtering iterates to a
    /// fixpoint because dropping users can push items under the bar and back.
    pub core: usize,
    pub test_fraction: f64,
    pub val_fraction: f64,
    pub seed: u64,
}

#[derive(Debug, Serialize)]
pub struct PrepSummary {
    pub users: usize,
    pub items: usize,
    pub entities: usize,
    pub relations: usize,
    pub train_interactions: usize,
    pub test_interactions: usize,
    pub val_interactions: usize,
    pub triples: usize,
    pub filter_rounds: usize,
    pub dropped_users: usize,
    pub dropped_items: usize,
}

pub fn run_prep(
    interactions_path: &Path,
    kg_path: &Path,
    out_dir: &Path,
    opts: &PrepOptions,
) -> Result<PrepSummary, CliError> {
    validate_options(opts)?;
    let mut raw = read_raw_interactions(interactions_path)?;
    let triples = read_raw_triples(kg_path)?;
    let users_in = raw.len();
    let items_in = raw
        .values()
        .flat_map(|items| items.iter().copied())
        .collect::<HashSet<_>>()
        .len();

    let filter_rounds = core_filter(&mut raw, opts.core);
    if raw.is_empty() {
        return Err(CliError::Data(format!(
            "{}-core filtering removed every user",
            opts.core
        )));
    }

    let user_map = dense_map(raw.keys().copied());
    let item_map = dense_map(raw.values().flat_map(|s| s.iter().copied()));
    let entity_map = entity_map_from(&item_map, &triples);
    let relation_map = dense_map(triples.iter().map(|&(_, r, _)| r));

    let split = split_interactions(&raw, &user_map, &item_map, opts);
    let mapped_triples: Vec<(usize, usize, usize)> = triples
        .iter()
        .map(|&(h, r, t)| (entity_map[&h], relation_map[&r], entity_map[&t]))
        .collect();

    fs::create_dir_all(out_dir)?;
    write_split(&out_dir.join("train.txt"), &split.train)?;
    write_split(&out_dir.join("test.txt"), &split.test)?;
    if opts.val_fraction > 0.0 {
        write_split(&out_dir.join("val.txt"), &split.val)?;
    }
    write_triples(&out_dir.join("kg_final.txt"), &mapped_triples)?;
    write_map(&out_dir.join("user_map.txt"), &user_map)?;
    write_map(&out_dir.join("item_map.txt"), &item_map)?;
    write_map(&out_dir.join("entity_map.txt"), &entity_map)?;
    write_map(&out_dir.join("relation_map.txt"), &relation_map)?;

    // Round-trip through the real loaders so any internal inconsistency in
    // the emitted files fails here rather than at train time.
    let val_path = out_dir.join("val.txt");
    let inter = load_interactions(
        &out_dir.join("train.txt"),
        &out_dir.join("test.txt"),
        if opts.val_fraction > 0.0 {
            Some(val_path.as_path())
        } else {
            None
        },
    )?;
    let kg = load_kg(&out_dir.join("kg_final.txt"))?;
    build_ckg(&inter, &kg);

    Ok(PrepSummary {
        users: inter.num_users,
        items: inter.num_items,
        entities: kg.num_entities.max(inter.num_items),
        relations: kg.num_relations,
        train_interactions: inter.num_train(),
        test_interactions: inter.num_test(),
        val_interactions: inter.num_val(),
        triples: kg.triples.len(),
        filter_rounds,
        dropped_users: users_in - raw.len(),
        dropped_items: items_in - item_map.len(),
    })
}

fn validate_options(opts: &PrepOptions) -> Result<(), CliError> {
    if opts.core == 0 {
        return Err(CliError::Data("core threshold must be at least 1".into()));
    }
    if !(opts.test_fraction > 0.0 && opts.test_fraction < 1.0) {
        return Err(CliError::Data(format!(
            "test_fraction must be in (0, 1), got {}",
            opts.test_fraction
        )));
    }
    if !(0.0..1.0).contains(&opts.val_fraction) {
        return Err(CliError::Data(format!(
            "val_fraction must be in [0, 1), got {}",
            opts.val_fraction
        )));
    }
    Ok(())
}

/// `user -> item set` in the raw (possibly sparse) id space. Repeated lines
/// for one user merge; repeated items deduplicate.
fn read_raw_interactions(path: &Path) -> Result<BTreeMap<usize, BTreeSet<usize>>, CliError> {
    let name = path.display().to_string();
    let file = BufReader::new(
        File::open(path).map_err(|e| CliError::Data(format!("cannot open {name}: {e}")))?,
    );
    let mut raw: BTreeMap<usize, BTreeSet<usize>> = BTreeMap::new();
    for (lineno, line) in file.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let ids = parse_ids(&name, lineno + 1, &line)?;
        let entry = raw.entry(ids[0]).or_default();
        entry.extend(&ids[1..]);
    }
    Ok(raw)
}

/// Deduplicated `h r t` triples, first-seen order preserved.
fn read_raw_triples(path: &Path) -> Result<Vec<(usize, usize, usize)>, CliError> {
    let name = path.display().to_string();
    let file = BufReader::new(
        File::open(path).map_err(|e| CliError::Data(format!("cannot open {name}: {e}")))?,
    );
    let mut seen = HashSet::new();
    let mut triples = Vec::new();
    for (lineno, line) in file.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let ids = parse_ids(&name, lineno + 1, &line)?;
        if ids.len() != 3 {
            return Err(CliError::Data(format!(
                "{name}:{}: expected 'head relation tail', got {} fields",
                lineno + 1,
                ids.len()
            )));
        }
        let triple = (ids[0], ids[1], ids[2]);
        if seen.insert(triple) {
            triples.push(triple);
        }
    }
    Ok(triples)
}

fn parse_ids(name: &str, lineno: usize, line: &str) -> Result<Vec<usize>, CliError> {
    line.split_whitespace()
        .map(|tok| {
            tok.parse::<usize>()
                .map_err(|_| CliError::Data(format!("{name}:{lineno}: invalid id '{tok}'")))
        })
        .collect()
}

/// Drops users and items with fewer than `core` interactions, repeating until
/// neither side changes. Returns the number of passes taken.
pub fn core_filter(raw: &mut BTreeMap<usize, BTreeSet<usize>>, core: usize) -> usize {
    let mut rounds = 0;
    loop {
        rounds += 1;
        let users_before = raw.len();
        raw.retain(|_, items| items.len() >= core);

        let mut item_users: HashMap<usize, usize> = HashMap::new();
        for items in raw.values() {
            for &i in items {
                *item_users.entry(i).or_insert(0) += 1;
            }
        }
        let mut items_dropped = false;
        for items in raw.values_mut() {
            let before = items.len();
            items.retain(|i| item_users[i] >= core);
            items_dropped |= items.len() != before;
        }
        if raw.len() == users_before && !items_dropped {
            return rounds;
        }
    }
}

/// Old id -> dense new id, new ids assigned in ascending old-id order.
fn dense_map(ids: impl IntoIterator<Item = usize>) -> BTreeMap<usize, usize> {
    let sorted: BTreeSet<usize> = ids.into_iter().collect();
    sorted.into_iter().enumerate().map(|(n, o)| (o, n)).collect()
}

/// Retained items keep their new item ids as entity ids; every other entity
/// mentioned by the KG (including items the filter dropped) follows after.
fn entity_map_from(
    item_map: &BTreeMap<usize, usize>,
    triples: &[(usize, usize, usize)],
) -> BTreeMap<usize, usize> {
    let mut map: BTreeMap<usize, usize> = item_map.clone();
    let extras: BTreeSet<usize> = triples
        .iter()
        .flat_map(|&(h, _, t)| [h, t])
        .filter(|e| !item_map.contains_key(e))
        .collect();
    for (old, new) in extras.into_iter().zip(item_map.len()..) {
        map.insert(old, new);
    }
    map
}

struct Split {
    train: Vec<Vec<usize>>,
    test: Vec<Vec<usize>>,
    val: Vec<Vec<usize>>,
}

/// Shuffles each user's items once with the shared stream, takes the test
/// tail, then carves validation off the back of the train part. Counts
/// floor, with at least one item held out for test and one kept for train.
fn split_interactions(
    raw: &BTreeMap<usize, BTreeSet<usize>>,
    user_map: &BTreeMap<usize, usize>,
    item_map: &BTreeMap<usize, usize>,
    opts: &PrepOptions,
) -> Split {
    let num_users = user_map.len();
    let mut split = Split {
        train: vec![Vec::new(); num_users],
        test: vec![Vec::new(); num_users],
        val: vec![Vec::new(); num_users],
    };
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    for (old_user, items) in raw {
        let u = user_map[old_user];
        let mut mapped: Vec<usize> = items.iter().map(|i| item_map[i]).collect();
        mapped.shuffle(&mut rng);
        let n = mapped.len();
        let n_test = ((n as f64 * opts.test_fraction).floor() as usize).clamp(1, n - 1);
        let n_train = n - n_test;
        let n_val = ((n_train as f64 * opts.val_fraction).floor() as usize).min(n_train - 1);

        let mut test: Vec<usize> = mapped.split_off(n_train);
        let mut val: Vec<usize> = mapped.split_off(n_train - n_val);
        test.sort_unstable();
        val.sort_unstable();
        mapped.sort_unstable();
        split.train[u] = mapped;
        split.test[u] = test;
        split.val[u] = val;
    }
    split
}

fn write_split(path: &Path, per_user: &[Vec<usize>]) -> Result<(), CliError> {
    let mut w = BufWriter::new(File::create(path)?);
    for (u, items) in per_user.iter().enumerate() {
        write!(w, "{u}")?;
        for i in items {
            write!(w, " {i}")?;
        }
        writeln!(w)?;
    }
    w.flush()?;
    Ok(())
}

fn write_triples(path: &Path, triples: &[(usize, usize, usize)]) -> Result<(), CliError> {
    let mut w = BufWriter::new(File::create(path)?);
    for (h, r, t) in triples {
        writeln!(w, "{h} {r} {t}")?;
    }
    w.flush()?;
    Ok(())
}

fn write_map(path: &Path, map: &BTreeMap<usize, usize>) -> Result<(), CliError> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "# new_id old_id")?;
    let mut pairs: Vec<(usize, usize)> = map.iter().map(|(&old, &new)| (new, old)).collect();
    pairs.sort_unstable();
    for (new, old) in pairs {
        writeln!(w, "{new} {old}")?;
    }
    w.flush()?;
    Ok(())
}
