//! Full-ranking evaluation: train briefly on synthetic data, score every
//! user against every item, and report recall/ndcg overall and per
//! sparsity group.
//!
//! Run with: cargo run --example evaluate_ranking

use kgat::ckg::{build_ckg, InteractionSet, KnowledgeTriples};
use kgat::evaluation::{
    evaluate, group_metrics, mean_metrics, rank_users, ranking_metrics, sparsity_groups,
};
use kgat::model::{Aggregator, LayerConfig};
use kgat::propagation::forward_all;
use kgat::synth::{generate, SynthConfig};
use kgat::training::{train, TrainConfig};

fn main() {
    let ds = generate(&SynthConfig {
        num_users: 40,
        num_items: 25,
        num_entities: 35,
        num_relations: 3,
        interactions_per_user: 8,
        triples_per_item: 2,
        clusters: 3,
        seed: 5,
    });

    // Hold one to three of each user's items out for test, so train counts
    // vary and the sparsity grouping below has something to separate.
    let mut train_pos = Vec::new();
    let mut test_pos = Vec::new();
    for (u, items) in ds.interactions.iter().enumerate() {
        let cut = items.len().saturating_sub(1 + u % 3).max(1);
        train_pos.push(items[..cut].to_vec());
        test_pos.push(items[cut..].to_vec());
    }
    let inter = InteractionSet {
        num_users: ds.num_users,
        num_items: ds.num_items,
        train_pos,
        test_pos,
        val_pos: vec![],
    };
    let kg = KnowledgeTriples {
        triples: ds.triples.clone(),
        num_entities: ds.num_entities,
        num_relations: ds.num_relations,
    };
    let g = build_ckg(&inter, &kg);

    let config = TrainConfig {
        lr: 0.02,
        max_epochs: 40,
        cf_batch_size: 128,
        kg_batch_size: 128,
        eval_every: 40,
        early_stop_patience: 40,
        relation_dim: 12,
        layers: LayerConfig::new(vec![12, 8], Aggregator::BiInteraction),
        ..TrainConfig::default()
    };
    let outcome = train(&g, &inter, &config);
    assert!(outcome.aborted.is_none(), "{:?}", outcome.aborted);

    let k = 10;
    let reps = forward_all(&g, &outcome.store, &outcome.params, &config.layers);
    let summary = evaluate(&reps, &g, &inter, k);
    println!(
        "overall: recall@{k} {:.4}  ndcg@{k} {:.4}  ({} evaluated users)",
        summary.recall, summary.ndcg, summary.users
    );

    // The same numbers, assembled by hand to show the pieces: rank with
    // train items masked out, score each user, then average.
    let result = rank_users(&reps, &g, &inter, k);
    let per_user = ranking_metrics(&result, &inter.test_pos);
    assert_eq!(mean_metrics(&per_user), summary);
    let best = per_user
        .iter()
        .max_by(|a, b| a.recall.total_cmp(&b.recall))
        .unwrap();
    println!("best user: {} with recall {:.3}", best.user, best.recall);

    // Does performance hold up for low-activity users? Split the evaluated
    // users into groups of roughly equal total train interactions.
    let groups = sparsity_groups(&inter, 3).expect("grouping");
    for (grp, m) in groups.iter().zip(group_metrics(&groups, &per_user)) {
        println!(
            "<= {:>2} train interactions: {:>3} users, recall@{k} {:.4}, ndcg@{k} {:.4}",
            grp.threshold,
            grp.users.len(),
            m.recall,
            m.ndcg
        );
    }
}
