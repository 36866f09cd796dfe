//! Explains a recommendation by tracing high-attention paths from a user to
//! an item through the collaborative graph.
//!
//! Run with: cargo run --example explain_recommendation

use std::collections::HashMap;

use kgat::ckg::build_ckg;
use kgat::explain::{render_path, top_paths};
use kgat::model::{Aggregator, AttentionMode, LayerConfig};
use kgat::propagation::attention_scores;
use kgat::synth::memorization_fixture;
use kgat::training::{train, TrainConfig};

fn main() {
    let (inter, kg) = memorization_fixture();
    let g = build_ckg(&inter, &kg);

    let config = TrainConfig {
        lr: 0.05,
        max_epochs: 60,
        cf_batch_size: 16,
        kg_batch_size: 32,
        eval_every: 60,
        early_stop_patience: 60,
        relation_dim: 16,
        layers: LayerConfig::new(vec![16, 16], Aggregator::BiInteraction),
        ..TrainConfig::default()
    };
    let outcome = train(&g, &inter, &config);
    assert!(outcome.aborted.is_none(), "{:?}", outcome.aborted);

    // Attention is a property of the trained embeddings: one normalized
    // coefficient per directed edge.
    let att = attention_scores(&g, &outcome.store, &outcome.params, AttentionMode::KnowledgeAware);

    // User 0 trained on items 0 and 1. Item 5 is connected to item 0
    // through entity 8, so paths explain why it might be recommended.
    let user = 0;
    let target = 5;
    let paths = top_paths(&g, &att.coefficients, g.user_node(user), target, 3, Some(16));
    println!(
        "top paths from user {user} to item {target} (up to 3 hops, beam 16):"
    );

    let mut labels: HashMap<usize, String> = HashMap::new();
    for i in 0..g.num_items {
        labels.insert(i, format!("item{i}"));
    }
    for e in g.num_items..g.num_entities {
        labels.insert(e, format!("entity{e}"));
    }
    for u in 0..g.num_users {
        labels.insert(g.user_node(u), format!("user{u}"));
    }

    for p in paths.iter().take(5) {
        println!("  {}", render_path(p, Some(&labels)));
    }
    if paths.is_empty() {
        println!("  (no path within 3 hops)");
    }

    // The path score is the product of its hop coefficients, so shorter,
    // higher-attention routes rank first.
    if let Some(best) = paths.first() {
        let product: f64 = best.coefficients.iter().product();
        assert!((best.score - product).abs() < 1e-12);
        println!(
            "best path score {:.5} = product of {} hop coefficients",
            best.score,
            best.coefficients.len()
        );
    }
}
