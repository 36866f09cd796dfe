//! Subcommand bodies. Each resolves its settings (flag > config file >
//! default), does the work, and prints results both human-readable and as
//! one structured JSON record.

use std::fs;
use std::path::{Path, PathBuf};

use serde_json::{json, Value};

use super::config::{
    aggregator_name, attention_name, parse_aggregator, parse_attention, parse_dims, parse_k_list,
    FileConfig, Resolver,
};
use super::prep::{run_prep, PrepOptions};
use super::{
    CkptInspectArgs, CliError, DataArgs, EvalArgs, ExplainArgs, GradcheckArgs, ModelArgs, PrepArgs,
    StatsArgs, SynthArgs, TrainArgs,
};
use crate::ckg::{
    build_ckg, dataset_stats, load_interactions, load_kg, CollaborativeKG, InteractionSet,
    KnowledgeTriples,
};
use crate::diffcore::ParameterStore;
use crate::evaluation::{
    evaluate, group_metrics, mean_metrics, rank_users, ranking_metrics, sparsity_groups,
    MetricSummary, RankingResult, UserMetrics,
};
use crate::explain::{load_labels, render_path, top_paths};
use crate::gradcheck::run_suite;
use crate::model::{LayerConfig, ModelParams};
use crate::propagation::{attention_scores, forward_all};
use crate::synth::{generate, SynthConfig};
use crate::training::{train, EpochLog, TrainConfig, TrainOutcome};

/// Full-scale defaults: 64-dim embeddings with three propagation layers.
const DEFAULT_EMBED_DIM: usize = 64;
const DEFAULT_HIDDEN_DIMS: &str = "64,32,16";
const DEFAULT_DROPOUT: f64 = 0.1;

fn resolve_interactions(
    r: &mut Resolver,
    args: &DataArgs,
) -> Result<(InteractionSet, KnowledgeTriples), CliError> {
    let train = r.require("train_file", args.train_file.clone())?;
    let test = r.require("test_file", args.test_file.clone())?;
    let val = r.optional("val_file", args.val_file.clone())?;
    let kg_path = r.require("kg_file", args.kg_file.clone())?;
    let inter = load_interactions(
        Path::new(&train),
        Path::new(&test),
        val.as_ref().map(|v: &String| Path::new(v)),
    )?;
    let kg = load_kg(Path::new(&kg_path))?;
    Ok((inter, kg))
}

fn resolve_layers(r: &mut Resolver, args: &ModelArgs) -> Result<(LayerConfig, usize), CliError> {
    let embed_dim = r.with_default("embed_dim", args.embed_dim, DEFAULT_EMBED_DIM)?;
    let relation_dim = r.with_default("relation_dim", args.relation_dim, embed_dim)?;
    let hidden = r.with_default(
        "hidden_dims",
        args.hidden_dims.clone(),
        DEFAULT_HIDDEN_DIMS.to_string(),
    )?;
    let aggregator = parse_aggregator(&r.with_default(
        "aggregator",
        args.aggregator.clone(),
        "bi-interaction".to_string(),
    )?)?;
    let attention_mode = parse_attention(&r.with_default(
        "attention",
        args.attention.clone(),
        "softmax".to_string(),
    )?)?;
    let mut dims = vec![embed_dim];
    dims.extend(parse_dims(&hidden)?);
    Ok((
        LayerConfig {
            dims,
            aggregator,
            attention_mode,
            message_dropout: r.with_default("message_dropout", args.message_dropout, DEFAULT_DROPOUT)?,
            node_dropout: r.with_default("node_dropout", args.node_dropout, DEFAULT_DROPOUT)?,
        },
        relation_dim,
    ))
}

fn load_checkpoint(
    r: &mut Resolver,
    flag: Option<String>,
    g: &CollaborativeKG,
    layers: &LayerConfig,
) -> Result<(ParameterStore, ModelParams), CliError> {
    let path = PathBuf::from(r.require::<String>("checkpoint", flag)?);
    let store = ParameterStore::load_file(&path)
        .map_err(|e| CliError::Data(format!("cannot load checkpoint {}: {e}", path.display())))?;
    let params = ModelParams::from_store(&store, g, layers).map_err(CliError::Data)?;
    Ok((store, params))
}

fn metric_record(summary: &MetricSummary, k: usize) -> Value {
    let mut m = serde_json::Map::new();
    m.insert(format!("recall@{k}"), summary.recall.into());
    m.insert(format!("ndcg@{k}"), summary.ndcg.into());
    m.insert("users".into(), summary.users.into());
    Value::Object(m)
}

fn metric_line(label: &str, summary: &MetricSummary, k: usize) -> String {
    format!(
        "{label}: recall@{k} {:.6}  ndcg@{k} {:.6}  ({} users)",
        summary.recall, summary.ndcg, summary.users
    )
}

pub fn prep_cmd(file: &FileConfig, args: PrepArgs) -> Result<(), CliError> {
    let mut r = Resolver::new(file);
    let interactions = r.require::<String>("interactions_file", args.interactions_file)?;
    let kg = r.require::<String>("kg_file", args.kg_file)?;
    let out = r.require::<String>("out_dir", args.out_dir)?;
    let opts = PrepOptions {
        core: r.with_default("core", args.core, 10)?,
        test_fraction: r.with_default("test_fraction", args.test_fraction, 0.2)?,
        val_fraction: r.with_default("val_fraction", args.val_fraction, 0.1)?,
        seed: r.with_default("seed", args.seed, 0)?,
    };
    let summary = run_prep(
        Path::new(&interactions),
        Path::new(&kg),
        Path::new(&out),
        &opts,
    )?;
    println!(
        "kept {} users / {} items after {} filter rounds (dropped {} users, {} items)",
        summary.users,
        summary.items,
        summary.filter_rounds,
        summary.dropped_users,
        summary.dropped_items
    );
    println!(
        "splits: {} train / {} test / {} val; kg: {} triples, {} entities, {} relations",
        summary.train_interactions,
        summary.test_interactions,
        summary.val_interactions,
        summary.triples,
        summary.entities,
        summary.relations
    );
    println!("{}", serde_json::to_string(&summary).expect("serializable"));
    Ok(())
}

pub fn stats_cmd(file: &FileConfig, args: StatsArgs) -> Result<(), CliError> {
    let mut r = Resolver::new(file);
    let (inter, kg) = resolve_interactions(&mut r, &args.data)?;
    let stats = dataset_stats(&inter, &kg);
    println!(
        "users {}  items {}  interactions {}  entities {}  relations {}  triples {}",
        stats.users, stats.items, stats.interactions, stats.entities, stats.relations, stats.triples
    );
    println!("{}", serde_json::to_string(&stats).expect("serializable"));

    let expectations = [
        ("expected_users", args.expected_users, stats.users),
        ("expected_items", args.expected_items, stats.items),
        (
            "expected_interactions",
            args.expected_interactions,
            stats.interactions,
        ),
        ("expected_entities", args.expected_entities, stats.entities),
        ("expected_relations", args.expected_relations, stats.relations),
        ("expected_triples", args.expected_triples, stats.triples),
    ];
    let mut mismatches = Vec::new();
    for (key, flag, actual) in expectations {
        if let Some(expected) = r.optional::<usize>(key, flag)? {
            if expected != actual {
                mismatches.push(format!("{key}: expected {expected}, found {actual}"));
            }
        }
    }
    if mismatches.is_empty() {
        Ok(())
    } else {
        Err(CliError::Data(mismatches.join("; ")))
    }
}

pub fn train_cmd(file: &FileConfig, args: TrainArgs) -> Result<(), CliError> {
    let mut r = Resolver::new(file);
    let (inter, kg) = resolve_interactions(&mut r, &args.data)?;
    let (layers, relation_dim) = resolve_layers(&mut r, &args.model)?;
    let config = TrainConfig {
        lr: r.with_default("lr", args.lr, 0.001)?,
        l2_lambda: r.with_default("l2_lambda", args.l2_lambda, 1e-5)?,
        cf_batch_size: r.with_default("cf_batch_size", args.cf_batch_size, 1024)?,
        kg_batch_size: r.with_default("kg_batch_size", args.kg_batch_size, 1024)?,
        max_epochs: r.with_default("max_epochs", args.max_epochs, 1000)?,
        early_stop_patience: r.with_default("early_stop_patience", args.early_stop_patience, 50)?,
        eval_every: r.with_default("eval_every", args.eval_every, 10)?,
        eval_k: r.with_default("eval_k", args.eval_k, 20)?,
        seed: r.with_default("seed", args.seed, 0)?,
        use_kge: r.with_default("use_kge", args.use_kge, true)?,
        relation_dim,
        layers,
    };
    config.validate().map_err(CliError::Data)?;
    let run_dir = PathBuf::from(r.require::<String>("run_dir", args.run_dir)?);
    fs::create_dir_all(&run_dir)?;
    fs::write(run_dir.join("config.txt"), r.snapshot_text())?;

    let g = build_ckg(&inter, &kg);
    log::info!(
        "training '{}' on {} users / {} items / {} ckg edges",
        config.variant_name(),
        g.num_users,
        g.num_items,
        g.num_edges()
    );
    let outcome = train(&g, &inter, &config);
    write_train_log(&run_dir.join("train_log.ndjson"), &config, &outcome.log)?;
    outcome.store.save_file(&run_dir.join("best.ckpt"))?;

    if let Some(msg) = &outcome.aborted {
        return Err(CliError::Numeric(format!(
            "training aborted: {msg} (last good snapshot kept in {})",
            run_dir.display()
        )));
    }

    let summary = test_metrics(&g, &inter, &config, &outcome);
    let mut record = metric_record(&summary, config.eval_k);
    let obj = record.as_object_mut().expect("object");
    obj.insert("epochs_run".into(), outcome.log.len().into());
    if let (Some(epoch), Some(recall)) = (outcome.best_epoch, outcome.best_recall) {
        obj.insert("best_epoch".into(), epoch.into());
        obj.insert("best_val_recall".into(), recall.into());
    }
    fs::write(
        run_dir.join("metrics.json"),
        format!("{}\n", serde_json::to_string_pretty(&record).expect("serializable")),
    )?;
    println!("{}", metric_line("test", &summary, config.eval_k));
    println!("{record}");
    Ok(())
}

fn test_metrics(
    g: &CollaborativeKG,
    inter: &InteractionSet,
    config: &TrainConfig,
    outcome: &TrainOutcome,
) -> MetricSummary {
    let reps = forward_all(g, &outcome.store, &outcome.params, &config.layers);
    evaluate(&reps, g, inter, config.eval_k)
}

fn write_train_log(path: &Path, config: &TrainConfig, log: &[EpochLog]) -> Result<(), CliError> {
    let header = json!({
        "record": "header",
        "variant": config.variant_name(),
        "aggregator": aggregator_name(config.layers.aggregator),
        "attention": attention_name(config.layers.attention_mode),
        "use_kge": config.use_kge,
        "dims": config.layers.dims,
        "relation_dim": config.relation_dim,
        "message_dropout": config.layers.message_dropout,
        "node_dropout": config.layers.node_dropout,
        "lr": config.lr,
        "l2_lambda": config.l2_lambda,
        "cf_batch_size": config.cf_batch_size,
        "kg_batch_size": config.kg_batch_size,
        "max_epochs": config.max_epochs,
        "early_stop_patience": config.early_stop_patience,
        "eval_every": config.eval_every,
        "eval_k": config.eval_k,
        "seed": config.seed,
    });
    let mut text = format!("{header}\n");
    for e in log {
        text.push_str(&epoch_record(e, config.eval_k));
    }
    fs::write(path, text)?;
    Ok(())
}

fn epoch_record(e: &EpochLog, k: usize) -> String {
    let mut m = serde_json::Map::new();
    m.insert("record".into(), "epoch".into());
    m.insert("epoch".into(), e.epoch.into());
    m.insert("kg_loss".into(), opt_value(e.kg_loss));
    m.insert("cf_loss".into(), e.cf_loss.into());
    m.insert(format!("recall@{k}"), opt_value(e.recall));
    m.insert(format!("ndcg@{k}"), opt_value(e.ndcg));
    m.insert("elapsed_s".into(), e.elapsed_s.into());
    format!("{}\n", Value::Object(m))
}

fn opt_value(v: Option<f64>) -> Value {
    v.map(Value::from).unwrap_or(Value::Null)
}

/// Prefix of a ranking: the top `k` of an already-sorted longer list.
fn truncate_result(result: &RankingResult, k: usize) -> RankingResult {
    let users = result
        .users
        .iter()
        .map(|u| {
            let mut u = u.clone();
            u.items.truncate(k);
            u.scores.truncate(k);
            u
        })
        .collect();
    RankingResult { k, users }
}

pub fn eval_cmd(file: &FileConfig, args: EvalArgs) -> Result<(), CliError> {
    let mut r = Resolver::new(file);
    let (inter, kg) = resolve_interactions(&mut r, &args.data)?;
    let (layers, _) = resolve_layers(&mut r, &args.model)?;
    let ks = parse_k_list(&r.with_default("eval_k", args.eval_k, "20".to_string())?)?;
    let num_groups = r.with_default("num_groups", args.num_groups, 0usize)?;
    if num_groups == 1 {
        return Err(CliError::Data(
            "num_groups must be 0 (disabled) or at least 2".into(),
        ));
    }
    let out_dir = r.optional::<String>("out_dir", args.out_dir)?;
    let g = build_ckg(&inter, &kg);
    let (store, params) = load_checkpoint(&mut r, args.checkpoint, &g, &layers)?;

    // Rank once at the largest cutoff; the smaller lists are prefixes.
    let reps = forward_all(&g, &store, &params, &layers);
    let k_max = *ks.iter().max().expect("nonempty cutoff list");
    let result = rank_users(&reps, &g, &inter, k_max);
    let per_k: Vec<(usize, Vec<UserMetrics>)> = ks
        .iter()
        .map(|&k| (k, ranking_metrics(&truncate_result(&result, k), &inter.test_pos)))
        .collect();

    let mut record = serde_json::Map::new();
    for (k, per_user) in &per_k {
        let summary = mean_metrics(per_user);
        println!("{}", metric_line("test", &summary, *k));
        record.insert(format!("recall@{k}"), summary.recall.into());
        record.insert(format!("ndcg@{k}"), summary.ndcg.into());
        record.insert("users".into(), summary.users.into());
    }

    if num_groups >= 2 {
        let groups = sparsity_groups(&inter, num_groups)?;
        let mut group_records: Vec<serde_json::Map<String, Value>> = groups
            .iter()
            .enumerate()
            .map(|(i, grp)| {
                let mut gm = serde_json::Map::new();
                gm.insert("group".into(), (i + 1).into());
                gm.insert("max_train_interactions".into(), grp.threshold.into());
                gm
            })
            .collect();
        for (k, per_user) in &per_k {
            for (i, m) in group_metrics(&groups, per_user).iter().enumerate() {
                println!(
                    "group {}: <= {} train interactions, {}",
                    i + 1,
                    groups[i].threshold,
                    metric_line("test", m, *k)
                );
                group_records[i].insert(format!("recall@{k}"), m.recall.into());
                group_records[i].insert(format!("ndcg@{k}"), m.ndcg.into());
                group_records[i].insert("users".into(), m.users.into());
            }
        }
        record.insert(
            "groups".into(),
            Value::Array(group_records.into_iter().map(Value::Object).collect()),
        );
    }
    let record = Value::Object(record);
    println!("{record}");
    if let Some(dir) = out_dir {
        let dir = PathBuf::from(dir);
        fs::create_dir_all(&dir)?;
        fs::write(
            dir.join("metrics.json"),
            format!("{}\n", serde_json::to_string_pretty(&record).expect("serializable")),
        )?;
    }
    Ok(())
}

pub fn explain_cmd(file: &FileConfig, args: ExplainArgs) -> Result<(), CliError> {
    let mut r = Resolver::new(file);
    let (inter, kg) = resolve_interactions(&mut r, &args.data)?;
    let (layers, _) = resolve_layers(&mut r, &args.model)?;
    let user = r.require("user", args.user)?;
    let item = r.require("item", args.item)?;
    let max_len = r.with_default("max_len", args.max_len, 3)?;
    let beam = r.with_default("beam", args.beam, 0usize)?;
    let top = r.with_default("top", args.top, 10)?;
    let labels_file = r.optional::<String>("labels_file", args.labels_file)?;
    let g = build_ckg(&inter, &kg);
    if user >= g.num_users {
        return Err(CliError::Data(format!(
            "user {user} out of range (dataset has {} users)",
            g.num_users
        )));
    }
    if item >= g.num_items {
        return Err(CliError::Data(format!(
            "item {item} out of range (dataset has {} items)",
            g.num_items
        )));
    }
    let (store, params) = load_checkpoint(&mut r, args.checkpoint, &g, &layers)?;
    let labels = labels_file
        .map(|p| load_labels(Path::new(&p)))
        .transpose()?;

    let attention = attention_scores(&g, &store, &params, layers.attention_mode);
    let mut paths = top_paths(
        &g,
        &attention.coefficients,
        g.user_node(user),
        item,
        max_len,
        if beam == 0 { None } else { Some(beam) },
    );
    paths.truncate(top);
    if paths.is_empty() {
        log::warn!("no path from user {user} to item {item} within {max_len} hops");
    }
    for p in &paths {
        if args.json {
            println!("{}", serde_json::to_string(p).expect("serializable"));
        } else {
            println!("{}", render_path(p, labels.as_ref()));
        }
    }
    Ok(())
}

pub fn synth_cmd(file: &FileConfig, args: SynthArgs) -> Result<(), CliError> {
    let mut r = Resolver::new(file);
    let config = SynthConfig {
        num_users: r.with_default("users", args.users, 500)?,
        num_items: r.with_default("items", args.items, 300)?,
        num_entities: r.with_default("entities", args.entities, 800)?,
        num_relations: r.with_default("relations", args.relations, 6)?,
        interactions_per_user: r.with_default(
            "interactions_per_user",
            args.interactions_per_user,
            15,
        )?,
        triples_per_item: r.with_default("triples_per_item", args.triples_per_item, 4)?,
        clusters: r.with_default("clusters", args.clusters, 5)?,
        seed: r.with_default("seed", args.seed, 0)?,
    };
    config.validate().map_err(CliError::Data)?;
    let out = PathBuf::from(r.require::<String>("out_dir", args.out_dir)?);
    let dataset = generate(&config);
    fs::create_dir_all(&out)?;
    dataset.write_files(&out)?;
    println!(
        "wrote {} interactions and {} triples to {}",
        dataset.num_interactions(),
        dataset.triples.len(),
        out.display()
    );
    println!(
        "{}",
        json!({
            "users": dataset.num_users,
            "items": dataset.num_items,
            "entities": dataset.num_entities,
            "relations": dataset.num_relations,
            "interactions": dataset.num_interactions(),
            "triples": dataset.triples.len(),
        })
    );
    Ok(())
}

pub fn gradcheck_cmd(file: &FileConfig, args: GradcheckArgs) -> Result<(), CliError> {
    let mut r = Resolver::new(file);
    let seed = r.with_default("seed", args.seed, 0)?;
    let report = run_suite(seed);
    for case in &report.cases {
        println!(
            "{} {}  coords {}  max_abs_err {:.3e}  worst err/tol {:.3}",
            if case.passed { "PASS" } else { "FAIL" },
            case.name,
            case.coords,
            case.max_abs_err,
            case.max_tol_ratio
        );
    }
    println!("{}", serde_json::to_string(&report).expect("serializable"));
    if report.passed {
        Ok(())
    } else {
        Err(CliError::Numeric(
            "analytic gradients disagree with finite differences".into(),
        ))
    }
}

pub fn ckpt_inspect_cmd(file: &FileConfig, args: CkptInspectArgs) -> Result<(), CliError> {
    let mut r = Resolver::new(file);
    let path = PathBuf::from(r.require::<String>("checkpoint", args.checkpoint)?);
    let store = ParameterStore::load_file(&path)
        .map_err(|e| CliError::Data(format!("cannot load checkpoint {}: {e}", path.display())))?;
    let mut entries = Vec::new();
    for id in store.ids() {
        let t = store.value(id);
        let data = t.data();
        let n = data.len().max(1) as f64;
        let min = data.iter().copied().fold(f64::INFINITY, f64::min);
        let max = data.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mean = data.iter().sum::<f64>() / n;
        let l2 = data.iter().map(|v| v * v).sum::<f64>().sqrt();
        println!(
            "{}  {}x{}  min {:.6e}  max {:.6e}  mean {:.6e}  l2 {:.6e}",
            store.name(id),
            t.rows(),
            t.cols(),
            min,
            max,
            mean,
            l2
        );
        entries.push(json!({
            "name": store.name(id),
            "rows": t.rows(),
            "cols": t.cols(),
            "min": min,
            "max": max,
            "mean": mean,
            "l2": l2,
        }));
    }
    println!("{}", json!({ "params": entries }));
    Ok(())
}
