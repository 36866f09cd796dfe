//! Pairwise ranking loss, negative sampling, and the alternating two-phase
//! Adam training loop with validation-based early stopping.
//!
//! Each epoch runs one nominal pass of translation-loss steps over the graph
//! edges (skippable for the embedding-free ablation) followed by one nominal
//! pass of ranking-loss steps over the train interactions. Both phases
//! regularize only the parameter rows their batch actually touches.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::ckg::{CollaborativeKG, InteractionSet};
use crate::diffcore::{Adam, AdamConfig, NodeId, ParamId, ParameterStore, Tape};
use crate::evaluation::{mean_metrics, rank_users_against, ranking_metrics, MetricSummary};
use crate::kge::{kg_loss_on_tape, KgSampler, TripleBatch};
use crate::model::{init_model, Aggregator, AttentionMode, LayerConfig, LayerRepresentations, ModelParams};
use crate::propagation::{forward_all, forward_on_tape};

#[derive(Clone, Debug)]
pub struct TrainConfig {
    pub lr: f64,
    pub l2_lambda: f64,
    pub cf_batch_size: usize,
    pub kg_batch_size: usize,
    pub max_epochs: usize,
    /// Stop when validation recall has not improved for this many epochs.
    pub early_stop_patience: usize,
    /// Epochs between validation evaluations.
    pub eval_every: usize,
    pub eval_k: usize,
    pub seed: u64,
    /// Off = the "w/o KGE" ablation: skip the translation phase entirely.
    pub use_kge: bool,
    /// Relation-space width of the translation model.
    pub relation_dim: usize,
    pub layers: LayerConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 0.001,
            l2_lambda: 1e-5,
            cf_batch_size: 1024,
            kg_batch_size: 1024,
            max_epochs: 1000,
            early_stop_patience: 50,
            eval_every: 10,
            eval_k: 20,
            seed: 0,
            use_kge: true,
            relation_dim: 64,
            layers: LayerConfig::new(vec![64, 64, 32, 16], Aggregator::BiInteraction),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.lr <= 0.0 || !self.lr.is_finite() {
            return Err(format!("learning rate must be positive and finite, got {}", self.lr));
        }
        if self.l2_lambda < 0.0 {
            return Err(format!("l2_lambda must be nonnegative, got {}", self.l2_lambda));
        }
        if self.early_stop_patience == 0 {
            return Err("early_stop_patience must be at least 1".to_string());
        }
        if self.eval_every == 0 {
            return Err("eval_every must be at least 1".to_string());
        }
        if self.eval_k == 0 {
            return Err("eval_k must be at least 1".to_string());
        }
        if self.cf_batch_size == 0 || self.kg_batch_size == 0 {
            return Err("batch sizes must be at least 1".to_string());
        }
        if self.relation_dim == 0 {
            return Err("relation_dim must be at least 1".to_string());
        }
        self.layers.validate()
    }

    /// Ablation identity implied by the two switches.
    pub fn variant_name(&self) -> &'static str {
        match (self.use_kge, self.layers.attention_mode) {
            (true, AttentionMode::KnowledgeAware) => "full",
            (false, AttentionMode::KnowledgeAware) => "w/o KGE",
            (true, AttentionMode::Uniform) => "w/o Att",
            (false, AttentionMode::Uniform) => "w/o K&A",
        }
    }
}

/// Parallel arrays of (user, consumed item, unconsumed item) rows.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct CFBatch {
    pub users: Vec<usize>,
    pub pos_items: Vec<usize>,
    pub neg_items: Vec<usize>,
}

impl CFBatch {
    pub fn len(&self) -> usize {
        self.users.len()
    }

    pub fn is_empty(&self) -> bool {
        self.users.is_empty()
    }
}

/// Uniform user sampling with replacement, one train positive and one
/// rejection-sampled negative per row. Users who consumed every item cannot
/// yield a negative and are skipped with a warning.
pub fn sample_cf_batch<R: Rng>(
    inter: &InteractionSet,
    batch_size: usize,
    rng: &mut R,
) -> CFBatch {
    let mut eligible = Vec::new();
    let mut saturated = 0usize;
    for u in 0..inter.num_users {
        let n = inter.train_pos[u].len();
        if n == 0 {
            continue;
        }
        if n >= inter.num_items {
            saturated += 1;
            continue;
        }
        eligible.push(u);
    }
    if saturated > 0 {
        log::warn!("{saturated} user(s) consumed every item; skipped in negative sampling");
    }
    let mut batch = CFBatch::default();
    if eligible.is_empty() {
        return batch;
    }
    for _ in 0..batch_size {
        let u = eligible[rng.random_range(0..eligible.len())];
        let positives = &inter.train_pos[u];
        let pos = positives[rng.random_range(0..positives.len())];
        let neg = loop {
            let candidate = rng.random_range(0..inter.num_items);
            if positives.binary_search(&candidate).is_err() {
                break candidate;
            }
        };
        batch.users.push(u);
        batch.pos_items.push(pos);
        batch.neg_items.push(neg);
    }
    batch
}

/// Records the pairwise ranking loss mean −ln σ(ŷ(u,i) − ŷ(u,j)) over the
/// batch, scored on the final (concatenated) representations.
pub fn cf_loss_on_tape(
    tape: &mut Tape,
    combined: NodeId,
    g: &CollaborativeKG,
    batch: &CFBatch,
) -> NodeId {
    assert!(!batch.is_empty(), "ranking loss over an empty batch");
    let user_nodes: Vec<usize> = batch.users.iter().map(|&u| g.user_node(u)).collect();
    let u = tape.gather_rows(combined, &user_nodes);
    let i = tape.gather_rows(combined, &batch.pos_items);
    let j = tape.gather_rows(combined, &batch.neg_items);
    let pos = tape.row_dot(u, i);
    let neg = tape.row_dot(u, j);
    let gap = tape.sub(pos, neg);
    let sig = tape.sigmoid(gap);
    let ln = tape.ln(sig);
    let flipped = tape.neg(ln);
    let total = tape.sum(flipped);
    tape.scale(total, 1.0 / batch.len() as f64)
}

/// Same loss from frozen representations, no tape.
pub fn cf_loss_value(
    reps: &LayerRepresentations,
    g: &CollaborativeKG,
    batch: &CFBatch,
) -> f64 {
    assert!(!batch.is_empty(), "ranking loss over an empty batch");
    let dot = |a: usize, b: usize| -> f64 {
        reps.combined
            .row(a)
            .iter()
            .zip(reps.combined.row(b))
            .map(|(x, y)| x * y)
            .sum()
    };
    let mut total = 0.0;
    for idx in 0..batch.len() {
        let un = g.user_node(batch.users[idx]);
        let gap: f64 = dot(un, batch.pos_items[idx]) - dot(un, batch.neg_items[idx]);
        total += -(1.0 / (1.0 + (-gap).exp())).ln();
    }
    total / batch.len() as f64
}

fn unique_sorted(ids: impl IntoIterator<Item = usize>) -> Vec<usize> {
    let mut v: Vec<usize> = ids.into_iter().collect();
    v.sort_unstable();
    v.dedup();
    v
}

fn sparse_l2(tape: &mut Tape, store: &ParameterStore, param: ParamId, rows: &[usize]) -> NodeId {
    let x = tape.param_rows(store, param, rows);
    tape.squared_l2(x)
}

/// Ranking loss plus λ times the squared norm of the touched parameters:
/// the batch's unique user/item embedding rows and all layer weights.
#[allow(clippy::too_many_arguments)]
pub fn cf_objective_on_tape(
    tape: &mut Tape,
    combined: NodeId,
    g: &CollaborativeKG,
    store: &ParameterStore,
    params: &ModelParams,
    batch: &CFBatch,
    l2_lambda: f64,
) -> NodeId {
    let loss = cf_loss_on_tape(tape, combined, g, batch);
    if l2_lambda == 0.0 {
        return loss;
    }
    let rows = unique_sorted(
        batch
            .users
            .iter()
            .map(|&u| g.user_node(u))
            .chain(batch.pos_items.iter().copied())
            .chain(batch.neg_items.iter().copied()),
    );
    let mut reg = sparse_l2(tape, store, params.entity_embedding, &rows);
    for w in params.layer_weights() {
        let p = tape.param(store, w);
        let term = tape.squared_l2(p);
        reg = tape.add(reg, term);
    }
    let scaled = tape.scale(reg, l2_lambda);
    tape.add(loss, scaled)
}

/// Translation loss plus λ times the squared norm of the touched rows: the
/// batch's unique entity rows and the unique relation rows (embedding and
/// projection).
pub fn kg_objective_on_tape(
    tape: &mut Tape,
    store: &ParameterStore,
    params: &ModelParams,
    batch: &TripleBatch,
    l2_lambda: f64,
) -> NodeId {
    let loss = kg_loss_on_tape(tape, store, params, batch);
    if l2_lambda == 0.0 {
        return loss;
    }
    let ent_rows = unique_sorted(
        batch
            .heads
            .iter()
            .chain(batch.tails.iter())
            .chain(batch.corrupted_tails.iter())
            .copied(),
    );
    let rel_rows = unique_sorted(batch.relations.iter().copied());
    let e = sparse_l2(tape, store, params.entity_embedding, &ent_rows);
    let r = sparse_l2(tape, store, params.relation_embedding, &rel_rows);
    let p = sparse_l2(tape, store, params.relation_projection, &rel_rows);
    let er = tape.add(e, r);
    let reg = tape.add(er, p);
    let scaled = tape.scale(reg, l2_lambda);
    tape.add(loss, scaled)
}

/// One epoch record. `kg_loss` is absent for the w/o KGE variants; metrics
/// are present only on evaluation epochs.
#[derive(Clone, Debug, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    pub kg_loss: Option<f64>,
    pub cf_loss: f64,
    pub recall: Option<f64>,
    pub ndcg: Option<f64>,
    pub elapsed_s: f64,
}

pub struct TrainOutcome {
    /// Best-validation parameters, or the final ones when no validation
    /// split exists, or the last epoch-boundary snapshot after an abort.
    pub store: ParameterStore,
    pub params: ModelParams,
    pub log: Vec<EpochLog>,
    pub best_epoch: Option<usize>,
    pub best_recall: Option<f64>,
    /// Set when training stopped on a nonfinite loss or update.
    pub aborted: Option<String>,
}

fn abort_outcome(
    msg: String,
    log: Vec<EpochLog>,
    snapshot: ParameterStore,
    params: &ModelParams,
) -> TrainOutcome {
    log::error!("training aborted: {msg}");
    TrainOutcome {
        store: snapshot,
        params: params.clone(),
        log,
        best_epoch: None,
        best_recall: None,
        aborted: Some(msg),
    }
}

/// Alternating two-phase training. Per epoch: ceil(edges / kg_batch)
/// translation steps (when enabled), then ceil(interactions / cf_batch)
/// ranking steps. Validation recall decides the returned checkpoint.
pub fn train(g: &CollaborativeKG, inter: &InteractionSet, config: &TrainConfig) -> TrainOutcome {
    config.validate().expect("invalid training configuration");
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut store = ParameterStore::new();
    let params = init_model(
        &mut store,
        g,
        config.layers.dims[0],
        config.relation_dim,
        &config.layers,
        &mut rng,
    );
    let adam = Adam::new(AdamConfig {
        lr: config.lr,
        ..AdamConfig::default()
    });
    let mut sampler = KgSampler::new(g);

    let kg_steps = if config.use_kge && g.num_edges() > 0 {
        g.num_edges().div_ceil(config.kg_batch_size)
    } else {
        0
    };
    let cf_steps = inter.num_train().div_ceil(config.cf_batch_size);
    let has_val = inter.val_pos.iter().any(|v| !v.is_empty());

    let mut log: Vec<EpochLog> = Vec::new();
    let mut best: Option<(usize, f64, ParameterStore)> = None;
    let mut last_good = store.clone();

    for epoch in 1..=config.max_epochs {
        let started = Instant::now();

        let mut kg_loss_sum = 0.0;
        for step in 0..kg_steps {
            let batch = sampler.sample(g, config.kg_batch_size, &mut rng);
            let mut tape = Tape::new();
            let objective = kg_objective_on_tape(&mut tape, &store, &params, &batch, config.l2_lambda);
            let loss_value = tape.value(objective).scalar_value();
            if !loss_value.is_finite() {
                return abort_outcome(
                    format!("nonfinite translation loss at epoch {epoch} step {step}"),
                    log,
                    last_good,
                    &params,
                );
            }
            kg_loss_sum += loss_value;
            tape.backward(objective, &mut store);
            if let Err(e) = adam.step(&mut store) {
                return abort_outcome(
                    format!("epoch {epoch} translation step {step}: {e}"),
                    log,
                    last_good,
                    &params,
                );
            }
            store.zero_grad();
        }

        let mut cf_loss_sum = 0.0;
        for step in 0..cf_steps {
            let batch = sample_cf_batch(inter, config.cf_batch_size, &mut rng);
            if batch.is_empty() {
                break;
            }
            let mut tape = Tape::new();
            let fwd = forward_on_tape(&mut tape, g, &store, &params, &config.layers, true, Some(&mut rng));
            let objective = cf_objective_on_tape(
                &mut tape,
                fwd.combined,
                g,
                &store,
                &params,
                &batch,
                config.l2_lambda,
            );
            let loss_value = tape.value(objective).scalar_value();
            if !loss_value.is_finite() {
                return abort_outcome(
                    format!("nonfinite ranking loss at epoch {epoch} step {step}"),
                    log,
                    last_good,
                    &params,
                );
            }
            cf_loss_sum += loss_value;
            tape.backward(objective, &mut store);
            if let Err(e) = adam.step(&mut store) {
                return abort_outcome(
                    format!("epoch {epoch} ranking step {step}: {e}"),
                    log,
                    last_good,
                    &params,
                );
            }
            store.zero_grad();
        }

        let mut entry = EpochLog {
            epoch,
            kg_loss: (kg_steps > 0).then(|| kg_loss_sum / kg_steps as f64),
            cf_loss: if cf_steps > 0 { cf_loss_sum / cf_steps as f64 } else { 0.0 },
            recall: None,
            ndcg: None,
            elapsed_s: 0.0,
        };

        let mut stop = false;
        if has_val && epoch % config.eval_every == 0 {
            let summary = validation_metrics(g, inter, &store, &params, &config.layers, config.eval_k);
            entry.recall = Some(summary.recall);
            entry.ndcg = Some(summary.ndcg);
            let improved = best
                .as_ref()
                .map(|(_, r, _)| summary.recall > *r)
                .unwrap_or(true);
            if improved {
                best = Some((epoch, summary.recall, store.clone()));
            } else if let Some((best_epoch, _, _)) = best {
                if epoch - best_epoch >= config.early_stop_patience {
                    log::info!(
                        "early stop at epoch {epoch}: no improvement since epoch {best_epoch}"
                    );
                    stop = true;
                }
            }
        }

        entry.elapsed_s = started.elapsed().as_secs_f64();
        log.push(entry);
        last_good = store.clone();
        if stop {
            break;
        }
    }

    let (best_epoch, best_recall, final_store) = match best {
        Some((e, r, s)) => (Some(e), Some(r), s),
        None => (None, None, store),
    };
    TrainOutcome {
        store: final_store,
        params,
        log,
        best_epoch,
        best_recall,
        aborted: None,
    }
}

fn validation_metrics(
    g: &CollaborativeKG,
    inter: &InteractionSet,
    store: &ParameterStore,
    params: &ModelParams,
    layers: &LayerConfig,
    k: usize,
) -> MetricSummary {
    let reps = forward_all(g, store, params, layers);
    let result = rank_users_against(&reps, g, &inter.train_pos, &inter.val_pos, k);
    mean_metrics(&ranking_metrics(&result, &inter.val_pos))
}

/// Train-set recall/ndcg: no masking, rank against the train positives
/// themselves. Used by the memorization check.
pub fn train_set_metrics(
    g: &CollaborativeKG,
    inter: &InteractionSet,
    store: &ParameterStore,
    params: &ModelParams,
    layers: &LayerConfig,
    k: usize,
) -> MetricSummary {
    let reps = forward_all(g, store, params, layers);
    let no_mask: Vec<Vec<usize>> = vec![Vec::new(); inter.num_users];
    let result = rank_users_against(&reps, g, &no_mask, &inter.train_pos, k);
    mean_metrics(&ranking_metrics(&result, &inter.train_pos))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ckg::build_ckg;
    use crate::diffcore::Tensor;
    use crate::synth::memorization_fixture;
    use crate::testutil::manual_params;

    fn reps_from_rows(rows: Vec<Vec<f64>>) -> LayerRepresentations {
        let cols = rows[0].len();
        let flat: Vec<f64> = rows.iter().flatten().copied().collect();
        LayerRepresentations::from_layers(vec![Tensor::from_vec(rows.len(), cols, flat)])
    }

    fn two_item_graph() -> (CollaborativeKG, InteractionSet) {
        let inter = InteractionSet {
            num_users: 1,
            num_items: 2,
            train_pos: vec![vec![0]],
            test_pos: vec![vec![1]],
            val_pos: vec![],
        };
        let kg = crate::ckg::KnowledgeTriples {
            triples: vec![],
            num_entities: 2,
            num_relations: 0,
        };
        let g = build_ckg(&inter, &kg);
        (g, inter)
    }

    #[test]
    fn equal_scores_cost_ln_two() {
        let (g, _) = two_item_graph();
        // Node rows: items 0,1 identical, user (node 2) arbitrary.
        let reps = reps_from_rows(vec![vec![1.0, 2.0], vec![1.0, 2.0], vec![0.3, -0.7]]);
        let batch = CFBatch {
            users: vec![0, 0],
            pos_items: vec![0, 1],
            neg_items: vec![1, 0],
        };
        let loss = cf_loss_value(&reps, &g, &batch);
        assert!((loss - std::f64::consts::LN_2).abs() < 1e-15);
    }

    #[test]
    fn unit_gap_and_large_gap_costs() {
        let (g, _) = two_item_graph();
        // User (1,0): ŷ(u,i0) = 2, ŷ(u,i1) = 0.
        let reps = reps_from_rows(vec![vec![2.0, 0.0], vec![0.0, 3.0], vec![1.0, 0.0]]);
        let batch = CFBatch {
            users: vec![0],
            pos_items: vec![0],
            neg_items: vec![1],
        };
        let loss = cf_loss_value(&reps, &g, &batch);
        assert!((loss - 0.12692801104297263).abs() < 1e-15);

        // A huge positive gap drives the cost to zero.
        let reps = reps_from_rows(vec![vec![40.0, 0.0], vec![0.0, 3.0], vec![1.0, 0.0]]);
        let loss = cf_loss_value(&reps, &g, &batch);
        assert!((0.0..1e-15).contains(&loss));
    }

    #[test]
    fn tape_loss_matches_value_loss() {
        let (g, _) = two_item_graph();
        let (store, params) = manual_params(
            vec![vec![0.4, -0.2], vec![0.1, 0.9], vec![-0.5, 0.3]],
            vec![vec![0.0, 0.0]; 2],
            vec![vec![1.0, 0.0, 0.0, 1.0]; 2],
        );
        let config = LayerConfig::new(vec![2], Aggregator::Gcn);
        let batch = CFBatch {
            users: vec![0, 0, 0],
            pos_items: vec![0, 1, 0],
            neg_items: vec![1, 0, 1],
        };
        let mut tape = Tape::new();
        let fwd = forward_on_tape::<ChaCha8Rng>(&mut tape, &g, &store, &params, &config, false, None);
        let node = cf_loss_on_tape(&mut tape, fwd.combined, &g, &batch);
        let on_tape = tape.value(node).scalar_value();
        let pure = cf_loss_value(&forward_all(&g, &store, &params, &config), &g, &batch);
        assert!((on_tape - pure).abs() < 1e-14);
    }

    #[test]
    fn regularizer_adds_lambda_times_touched_norms() {
        let (g, _) = two_item_graph();
        // Entity rows: item0 = (2,0) with squared norm 4; user row zero so
        // only the positive/negative item rows and the user row contribute.
        let (store, params) = manual_params(
            vec![vec![2.0, 0.0], vec![0.0, 0.0], vec![0.0, 0.0]],
            vec![vec![0.0, 0.0]; 2],
            vec![vec![1.0, 0.0, 0.0, 1.0]; 2],
        );
        let config = LayerConfig::new(vec![2], Aggregator::Gcn);
        let batch = CFBatch {
            users: vec![0],
            pos_items: vec![0],
            neg_items: vec![1],
        };
        let value_of = |lambda: f64| -> f64 {
            let mut tape = Tape::new();
            let fwd =
                forward_on_tape::<ChaCha8Rng>(&mut tape, &g, &store, &params, &config, false, None);
            let node = cf_objective_on_tape(&mut tape, fwd.combined, &g, &store, &params, &batch, lambda);
            tape.value(node).scalar_value()
        };
        // λ = 0 leaves the loss untouched; λ = 0.1 adds 0.1 × 4.
        let base = value_of(0.0);
        assert!((value_of(0.1) - base - 0.4).abs() < 1e-12);
    }

    #[test]
    fn batch_rows_are_valid_train_pairs() {
        let inter = InteractionSet {
            num_users: 3,
            num_items: 6,
            train_pos: vec![vec![0, 1], vec![2], vec![3, 4, 5]],
            test_pos: vec![vec![2], vec![0], vec![0]],
            val_pos: vec![],
        };
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let batch = sample_cf_batch(&inter, 200, &mut rng);
        assert_eq!(batch.len(), 200);
        for idx in 0..batch.len() {
            let u = batch.users[idx];
            assert!(inter.train_pos[u].binary_search(&batch.pos_items[idx]).is_ok());
            assert!(inter.train_pos[u].binary_search(&batch.neg_items[idx]).is_err());
        }
        // Same seed, same batch.
        let mut rng2 = ChaCha8Rng::seed_from_u64(5);
        assert_eq!(sample_cf_batch(&inter, 200, &mut rng2), batch);
    }

    #[test]
    fn single_free_item_forces_the_negative() {
        let inter = InteractionSet {
            num_users: 1,
            num_items: 2,
            train_pos: vec![vec![1]],
            test_pos: vec![vec![]],
            val_pos: vec![],
        };
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let batch = sample_cf_batch(&inter, 50, &mut rng);
        assert!(batch.neg_items.iter().all(|&j| j == 0));
        assert!(batch.pos_items.iter().all(|&i| i == 1));
    }

    #[test]
    fn saturated_users_are_skipped() {
        let inter = InteractionSet {
            num_users: 2,
            num_items: 2,
            train_pos: vec![vec![0, 1], vec![0]],
            test_pos: vec![vec![], vec![1]],
            val_pos: vec![],
        };
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let batch = sample_cf_batch(&inter, 30, &mut rng);
        assert!(batch.users.iter().all(|&u| u == 1));

        // Nothing to sample at all: empty batch rather than a hang.
        let all_saturated = InteractionSet {
            num_users: 1,
            num_items: 1,
            train_pos: vec![vec![0]],
            test_pos: vec![vec![]],
            val_pos: vec![],
        };
        assert!(sample_cf_batch(&all_saturated, 10, &mut rng).is_empty());
    }

    #[test]
    fn user_sampling_is_uniform_over_eligible_users() {
        let inter = InteractionSet {
            num_users: 4,
            num_items: 8,
            train_pos: vec![vec![0], vec![1, 2], vec![3], vec![4, 5, 6]],
            test_pos: vec![vec![]; 4],
            val_pos: vec![],
        };
        let mut rng = ChaCha8Rng::seed_from_u64(123);
        let draws = 40_000usize;
        let batch = sample_cf_batch(&inter, draws, &mut rng);
        let mut counts = [0usize; 4];
        for &u in &batch.users {
            counts[u] += 1;
        }
        let expect = draws as f64 / 4.0;
        let sigma = (expect * (1.0 - 0.25)).sqrt();
        for (u, &c) in counts.iter().enumerate() {
            assert!(
                (c as f64 - expect).abs() < 3.0 * sigma,
                "user {u} drawn {c} times, expected about {expect}"
            );
        }
    }

    fn tiny_config() -> TrainConfig {
        TrainConfig {
            lr: 0.01,
            l2_lambda: 1e-5,
            cf_batch_size: 8,
            kg_batch_size: 16,
            max_epochs: 5,
            early_stop_patience: 50,
            eval_every: 1,
            eval_k: 3,
            seed: 42,
            use_kge: true,
            relation_dim: 8,
            layers: LayerConfig::new(vec![8, 8], Aggregator::BiInteraction),
        }
    }

    #[test]
    fn zero_epochs_returns_initialization_untouched() {
        let (inter, kg) = memorization_fixture();
        let g = build_ckg(&inter, &kg);
        let config = TrainConfig { max_epochs: 0, ..tiny_config() };
        let outcome = train(&g, &inter, &config);
        assert!(outcome.log.is_empty());
        assert!(outcome.aborted.is_none());

        // Bit-identical to a fresh initialization with the same seed.
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut fresh = ParameterStore::new();
        let params = init_model(&mut fresh, &g, 8, 8, &config.layers, &mut rng);
        let got = outcome.store.value(outcome.params.entity_embedding);
        let want = fresh.value(params.entity_embedding);
        assert_eq!(got.data(), want.data());
    }

    #[test]
    fn seeded_runs_log_identical_losses() {
        let (inter, kg) = memorization_fixture();
        let g = build_ckg(&inter, &kg);
        let a = train(&g, &inter, &tiny_config());
        let b = train(&g, &inter, &tiny_config());
        assert_eq!(a.log.len(), b.log.len());
        for (x, y) in a.log.iter().zip(&b.log) {
            assert_eq!(x.epoch, y.epoch);
            assert_eq!(x.kg_loss, y.kg_loss);
            assert_eq!(x.cf_loss, y.cf_loss);
            assert_eq!(x.recall, y.recall);
            assert_eq!(x.ndcg, y.ndcg);
        }
        let ea = a.store.value(a.params.entity_embedding);
        let eb = b.store.value(b.params.entity_embedding);
        assert_eq!(ea.data(), eb.data());
    }

    #[test]
    fn loss_falls_on_the_memorization_instance() {
        let (inter, kg) = memorization_fixture();
        let g = build_ckg(&inter, &kg);
        let config = TrainConfig { max_epochs: 20, ..tiny_config() };
        let outcome = train(&g, &inter, &config);
        assert!(outcome.aborted.is_none());
        let first = outcome.log.first().unwrap().cf_loss;
        let last = outcome.log.last().unwrap().cf_loss;
        assert!(
            last < first,
            "ranking loss should fall: epoch 1 {first}, epoch 20 {last}"
        );
    }

    #[test]
    fn returned_checkpoint_has_the_best_validation_recall() {
        let (mut inter, kg) = memorization_fixture();
        // Carve one validation item per user out of train.
        inter.val_pos = inter
            .train_pos
            .iter_mut()
            .map(|items| vec![items.pop().unwrap()])
            .collect();
        let g = build_ckg(&inter, &kg);
        let config = TrainConfig {
            max_epochs: 30,
            early_stop_patience: 8,
            eval_every: 2,
            ..tiny_config()
        };
        let outcome = train(&g, &inter, &config);
        assert!(outcome.aborted.is_none());
        let best = outcome.best_recall.expect("validation ran");
        for entry in &outcome.log {
            if let Some(r) = entry.recall {
                assert!(best >= r, "best {best} must dominate epoch {} ({r})", entry.epoch);
            }
        }
        assert_eq!(
            outcome.best_epoch,
            outcome
                .log
                .iter()
                .filter_map(|e| e.recall.map(|r| (e.epoch, r)))
                .fold(None, |acc: Option<(usize, f64)>, (ep, r)| match acc {
                    Some((_, br)) if br >= r => acc,
                    _ => Some((ep, r)),
                })
                .map(|(ep, _)| ep)
        );
    }

    #[test]
    fn divergence_aborts_with_finite_snapshot() {
        let (inter, kg) = memorization_fixture();
        let g = build_ckg(&inter, &kg);
        let config = TrainConfig {
            lr: 1e155,
            max_epochs: 10,
            ..tiny_config()
        };
        let outcome = train(&g, &inter, &config);
        assert!(outcome.aborted.is_some(), "1e155 learning rate must diverge");
        assert!(outcome.store.value(outcome.params.entity_embedding).is_finite());
    }

    #[test]
    fn variant_names_cover_the_ablation_grid() {
        let mut config = tiny_config();
        assert_eq!(config.variant_name(), "full");
        config.use_kge = false;
        assert_eq!(config.variant_name(), "w/o KGE");
        config.layers.attention_mode = AttentionMode::Uniform;
        assert_eq!(config.variant_name(), "w/o K&A");
        config.use_kge = true;
        assert_eq!(config.variant_name(), "w/o Att");
    }

    #[test]
    fn ablation_switches_change_the_trajectory() {
        let (inter, kg) = memorization_fixture();
        let g = build_ckg(&inter, &kg);
        let variants = [
            (true, AttentionMode::KnowledgeAware),
            (false, AttentionMode::KnowledgeAware),
            (true, AttentionMode::Uniform),
            (false, AttentionMode::Uniform),
        ];
        let logs: Vec<Vec<f64>> = variants
            .iter()
            .map(|&(use_kge, mode)| {
                let mut config = tiny_config();
                config.use_kge = use_kge;
                config.layers.attention_mode = mode;
                train(&g, &inter, &config)
                    .log
                    .iter()
                    .map(|e| e.cf_loss)
                    .collect()
            })
            .collect();
        for a in 0..variants.len() {
            for b in a + 1..variants.len() {
                let max_gap = logs[a]
                    .iter()
                    .zip(&logs[b])
                    .map(|(x, y)| (x - y).abs())
                    .fold(0.0, f64::max);
                assert!(
                    max_gap > 1e-6,
                    "variants {a} and {b} coincide (max loss gap {max_gap})"
                );
            }
        }
    }
}
