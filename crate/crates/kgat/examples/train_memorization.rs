//! Trains the full model on a ten-node fixture until it memorizes its own
//! training set, printing the loss curve along the way.
//!
//! Run with: cargo run --example train_memorization

use kgat::ckg::build_ckg;
use kgat::model::{Aggregator, LayerConfig};
use kgat::synth::memorization_fixture;
use kgat::training::{train, train_set_metrics, TrainConfig};

fn main() {
    let (inter, kg) = memorization_fixture();
    let g = build_ckg(&inter, &kg);
    println!(
        "fixture: {} users, {} items, {} entities, {} edges",
        g.num_users,
        g.num_items,
        g.num_entities,
        g.num_edges()
    );

    let config = TrainConfig {
        lr: 0.05,
        max_epochs: 120,
        cf_batch_size: 16,
        kg_batch_size: 32,
        eval_every: 120,
        early_stop_patience: 120,
        eval_k: 3,
        relation_dim: 16,
        layers: LayerConfig::new(vec![16, 16], Aggregator::BiInteraction),
        ..TrainConfig::default()
    };
    println!("training variant '{}'", config.variant_name());

    let outcome = train(&g, &inter, &config);
    if let Some(msg) = &outcome.aborted {
        eprintln!("training aborted: {msg}");
        std::process::exit(1);
    }

    println!("epoch   translation loss   ranking loss");
    for e in outcome.log.iter().step_by(20).chain(outcome.log.last()) {
        println!(
            "{:>5}   {:>16}   {:>12.6}",
            e.epoch,
            e.kg_loss.map_or("-".to_string(), |v| format!("{v:.6}")),
            e.cf_loss
        );
    }

    let metrics = train_set_metrics(&g, &inter, &outcome.store, &outcome.params, &config.layers, 3);
    println!(
        "train-set recall@3 {:.3}, ndcg@3 {:.3} over {} users",
        metrics.recall, metrics.ndcg, metrics.users
    );
}
