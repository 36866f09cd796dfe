//! Attentive embedding propagation over the collaborative knowledge graph.
//!
//! One forward pass computes edge attention once from the layer-0 embeddings,
//! then runs L rounds of "receive attention-weighted neighbor sum, apply
//! aggregator", and concatenates every depth's output into the final
//! representation used for prediction. Training passes record onto a tape
//! and may apply node dropout (a node's whole incoming segment is removed
//! before the softmax, so surviving segments still normalize) and message
//! dropout (each edge's message is zeroed with prob p₁, survivors scaled by
//! 1/(1−p₁), redrawn per layer).

use crate::ckg::{CollaborativeKG, NodeKind};
use crate::diffcore::{NodeId, ParameterStore, Tape, Tensor};
use crate::model::{
    project_by_relation, AttentionMode, LayerConfig, LayerRepresentations, ModelParams,
    LEAKY_SLOPE,
};
use rand::Rng;

/// Normalized per-edge coefficients, aligned with the graph's CSR edge order
/// (segment offsets are shared with the graph rather than duplicated).
#[derive(Clone, Debug)]
pub struct AttentionState {
    pub coefficients: Vec<f64>,
    /// Node-dropout mask in effect when this state was computed, if any.
    pub dropped_nodes: Option<Vec<bool>>,
}

impl AttentionState {
    /// Coefficients of h's incoming edges, segment-aligned.
    pub fn for_node(&self, g: &CollaborativeKG, h: usize) -> &[f64] {
        &self.coefficients[g.segment(h)]
    }
}

/// Tape handles produced by a recorded forward pass.
pub struct TapeForward {
    /// One node per depth 0..=L.
    pub layers: Vec<NodeId>,
    pub combined: NodeId,
    pub attention: AttentionState,
}

fn edge_heads(g: &CollaborativeKG) -> Vec<usize> {
    let mut heads = Vec::with_capacity(g.num_edges());
    for h in 0..g.num_nodes {
        heads.extend(std::iter::repeat_n(h, g.degree(h)));
    }
    heads
}

fn check_params(params: &ModelParams, config: &LayerConfig) {
    config.validate().expect("invalid layer config");
    assert_eq!(config.dims[0], params.d, "dims[0] must be the embedding dim");
    assert!(
        params.layer_w1.len() >= config.depth(),
        "parameters cover {} layers but config asks for {}",
        params.layer_w1.len(),
        config.depth()
    );
    if config.aggregator == crate::model::Aggregator::BiInteraction {
        assert!(params.layer_w2.len() >= config.depth());
    }
}

/// Records attention plus all propagation layers onto `tape`.
///
/// Dropout draws (training only) happen in a fixed order: one node-mask draw
/// per node, then per layer one message-mask draw per edge.
pub fn forward_on_tape<R: Rng>(
    tape: &mut Tape,
    g: &CollaborativeKG,
    store: &ParameterStore,
    params: &ModelParams,
    config: &LayerConfig,
    training: bool,
    mut rng: Option<&mut R>,
) -> TapeForward {
    check_params(params, config);
    let offsets = &g.csr_offsets;
    let e0 = tape.param(store, params.entity_embedding);

    let dropped: Option<Vec<bool>> = if training && config.node_dropout > 0.0 {
        let r = rng.as_deref_mut().expect("training forward pass needs an rng");
        Some((0..g.num_nodes).map(|_| r.random_bool(config.node_dropout)).collect())
    } else {
        None
    };

    let att_node = if g.num_edges() == 0 {
        tape.constant(Tensor::zeros(0, 1))
    } else {
        match config.attention_mode {
            AttentionMode::Uniform => {
                let mut c = vec![0.0; g.num_edges()];
                for h in 0..g.num_nodes {
                    if dropped.as_ref().is_some_and(|m| m[h]) {
                        continue;
                    }
                    let seg = g.segment(h);
                    let len = seg.len();
                    for e in seg {
                        c[e] = 1.0 / (len as f64);
                    }
                }
                tape.constant(Tensor::column(c))
            }
            AttentionMode::KnowledgeAware => {
                let heads = edge_heads(g);
                let h_emb = tape.gather_rows(e0, &heads);
                let t_emb = tape.gather_rows(e0, &g.edge_tails);
                let proj = tape.param(store, params.relation_projection);
                let wh = project_by_relation(tape, proj, &g.edge_relations, h_emb, params.k, params.d);
                let wt = project_by_relation(tape, proj, &g.edge_relations, t_emb, params.k, params.d);
                let r_emb = tape.param_rows(store, params.relation_embedding, &g.edge_relations);
                let translated = tape.add(wh, r_emb);
                let gate = tape.tanh(translated);
                let raw = tape.row_dot(wt, gate);
                tape.segment_softmax(raw, offsets, dropped.as_deref())
            }
        }
    };
    let attention = AttentionState {
        coefficients: tape.value(att_node).data().to_vec(),
        dropped_nodes: dropped,
    };

    let mut layers = vec![e0];
    let mut prev = e0;
    for l in 1..=config.depth() {
        let att_l = if training && config.message_dropout > 0.0 && g.num_edges() > 0 {
            let r = rng.as_deref_mut().expect("training forward pass needs an rng");
            let keep = 1.0 - config.message_dropout;
            let mask: Vec<f64> = (0..g.num_edges())
                .map(|_| {
                    if r.random_bool(config.message_dropout) {
                        0.0
                    } else {
                        1.0 / keep
                    }
                })
                .collect();
            let m = tape.constant(Tensor::column(mask));
            tape.mul(att_node, m)
        } else {
            att_node
        };

        let tail_reps = tape.gather_rows(prev, &g.edge_tails);
        let neighborhood = tape.segment_weighted_sum(att_l, tail_reps, offsets);
        let w1 = tape.param(store, params.layer_w1[l - 1]);
        let out = match config.aggregator {
            crate::model::Aggregator::Gcn => {
                let s = tape.add(prev, neighborhood);
                let lin = tape.matmul(s, w1, true);
                tape.leaky_relu(lin, LEAKY_SLOPE)
            }
            crate::model::Aggregator::GraphSage => {
                let cat = tape.concat_cols(prev, neighborhood);
                let lin = tape.matmul(cat, w1, true);
                tape.leaky_relu(lin, LEAKY_SLOPE)
            }
            crate::model::Aggregator::BiInteraction => {
                let w2 = tape.param(store, params.layer_w2[l - 1]);
                let s = tape.add(prev, neighborhood);
                let lin1 = tape.matmul(s, w1, true);
                let a1 = tape.leaky_relu(lin1, LEAKY_SLOPE);
                let p = tape.mul(prev, neighborhood);
                let lin2 = tape.matmul(p, w2, true);
                let a2 = tape.leaky_relu(lin2, LEAKY_SLOPE);
                tape.add(a1, a2)
            }
        };
        layers.push(out);
        prev = out;
    }

    let mut combined = layers[0];
    for &node in &layers[1..] {
        combined = tape.concat_cols(combined, node);
    }

    TapeForward {
        layers,
        combined,
        attention,
    }
}

/// Inference forward pass: no dropout, no gradient bookkeeping kept.
pub fn forward_all(
    g: &CollaborativeKG,
    store: &ParameterStore,
    params: &ModelParams,
    config: &LayerConfig,
) -> LayerRepresentations {
    let mut tape = Tape::new();
    let fwd = forward_on_tape::<rand_chacha::ChaCha8Rng>(
        &mut tape, g, store, params, config, false, None,
    );
    let reps = fwd.layers.iter().map(|&n| tape.value(n).clone()).collect();
    LayerRepresentations {
        reps,
        combined: tape.value(fwd.combined).clone(),
    }
}

/// Normalized attention coefficients for the current parameters, dropout off.
pub fn attention_scores(
    g: &CollaborativeKG,
    store: &ParameterStore,
    params: &ModelParams,
    mode: AttentionMode,
) -> AttentionState {
    let config = LayerConfig {
        dims: vec![params.d],
        aggregator: crate::model::Aggregator::Gcn,
        attention_mode: mode,
        message_dropout: 0.0,
        node_dropout: 0.0,
    };
    let mut tape = Tape::new();
    forward_on_tape::<rand_chacha::ChaCha8Rng>(&mut tape, g, store, params, &config, false, None)
        .attention
}

/// Matching score ŷ(u, i): inner product of the final representations.
pub fn predict(
    g: &CollaborativeKG,
    reps: &LayerRepresentations,
    u_node: usize,
    i_node: usize,
) -> f64 {
    assert_eq!(
        g.node_kind[u_node],
        NodeKind::User,
        "node {u_node} is not a user"
    );
    assert_eq!(
        g.node_kind[i_node],
        NodeKind::ItemEntity,
        "node {i_node} is not an item"
    );
    row_dot(&reps.combined, u_node, i_node)
}

/// One user's scores against every item (items are nodes 0..num_items).
pub fn scores_for_user(reps: &LayerRepresentations, u_node: usize, num_items: usize) -> Vec<f64> {
    (0..num_items)
        .map(|i| row_dot(&reps.combined, u_node, i))
        .collect()
}

fn row_dot(m: &Tensor, a: usize, b: usize) -> f64 {
    m.row(a).iter().zip(m.row(b)).map(|(x, y)| x * y).sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ckg::{build_ckg, CollaborativeKG, InteractionSet, KnowledgeTriples};
    use crate::model::{init_model, Aggregator, LayerConfig};
    use crate::testutil::{manual_params, push_layer};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn graph(num_users: usize, num_items: usize, train: Vec<Vec<usize>>, kg: KnowledgeTriples) -> CollaborativeKG {
        let inter = InteractionSet {
            num_users,
            num_items,
            train_pos: train,
            test_pos: vec![Vec::new(); num_users],
            val_pos: vec![Vec::new(); num_users],
        };
        build_ckg(&inter, &kg)
    }

    fn identity_proj(k: usize, d: usize) -> Vec<f64> {
        let mut p = vec![0.0; k * d];
        for i in 0..k.min(d) {
            p[i * d + i] = 1.0;
        }
        p
    }

    #[test]
    fn singleton_segment_gets_full_attention() {
        let g = graph(1, 1, vec![vec![0]], KnowledgeTriples::default());
        let mut store = ParameterStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let config = LayerConfig::new(vec![4], Aggregator::Gcn);
        let params = init_model(&mut store, &g, 4, 4, &config, &mut rng);
        let att = attention_scores(&g, &store, &params, AttentionMode::KnowledgeAware);
        for h in 0..g.num_nodes {
            assert_eq!(att.for_node(&g, h), &[1.0]);
        }
    }

    #[test]
    fn identical_edges_split_attention_evenly() {
        // Item 0 relates to entities 2 and 3 which share one embedding, so
        // both edges of node 0 carry identical raw scores.
        let kg = KnowledgeTriples {
            triples: vec![(0, 0, 2), (0, 0, 3)],
            num_entities: 4,
            num_relations: 1,
        };
        let g = graph(0, 1, vec![], kg);
        let same = vec![0.4, -0.2];
        let (store, params) = manual_params(
            vec![vec![1.0, 0.7], same.clone(), same.clone(), same],
            vec![vec![0.1, 0.2]; 4],
            vec![identity_proj(2, 2); 4],
        );
        let att = attention_scores(&g, &store, &params, AttentionMode::KnowledgeAware);
        let seg = att.for_node(&g, 0);
        assert_eq!(seg, &[0.5, 0.5]);
    }

    #[test]
    fn raw_score_matches_tanh_gate() {
        // W = I, e_r = 0, e_h = e_t = (1,0) gives raw score tanh(1) on one
        // edge; a second edge with orthogonal tail scores 0, so the softmax
        // coefficient of the first is σ(tanh 1).
        let kg = KnowledgeTriples {
            triples: vec![(0, 0, 1), (0, 0, 2)],
            num_entities: 3,
            num_relations: 1,
        };
        let g = graph(0, 1, vec![], kg);
        let (store, params) = manual_params(
            vec![vec![1.0, 0.0], vec![1.0, 0.0], vec![0.0, 1.0]],
            vec![vec![0.0, 0.0]; 4],
            vec![identity_proj(2, 2); 4],
        );
        let att = attention_scores(&g, &store, &params, AttentionMode::KnowledgeAware);
        let tanh1 = 0.7615941559557649f64;
        // Second edge raw score: (W e_t)·tanh(W e_h) = (0,1)·(tanh 1, 0) = 0.
        let expect = 1.0 / (1.0 + (-tanh1).exp());
        let seg = att.for_node(&g, 0);
        assert!((seg[0] - expect).abs() < 1e-12, "{} vs {expect}", seg[0]);
        assert!((seg[0] + seg[1] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn uniform_mode_is_exact_reciprocal_degree() {
        let kg = KnowledgeTriples {
            triples: vec![(0, 0, 2), (0, 1, 3), (1, 0, 2)],
            num_entities: 4,
            num_relations: 2,
        };
        let g = graph(2, 2, vec![vec![0, 1], vec![0]], kg);
        let mut store = ParameterStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let config = LayerConfig::new(vec![3], Aggregator::Gcn);
        let params = init_model(&mut store, &g, 3, 3, &config, &mut rng);
        let att = attention_scores(&g, &store, &params, AttentionMode::Uniform);
        for h in 0..g.num_nodes {
            let deg = g.degree(h);
            for &c in att.for_node(&g, h) {
                assert_eq!(c, 1.0 / deg as f64);
            }
        }
    }

    #[test]
    fn depth_zero_final_is_embedding_table() {
        let g = graph(1, 2, vec![vec![0, 1]], KnowledgeTriples::default());
        let mut store = ParameterStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let config = LayerConfig::new(vec![5], Aggregator::BiInteraction);
        let params = init_model(&mut store, &g, 5, 5, &config, &mut rng);
        let reps = forward_all(&g, &store, &params, &config);
        assert_eq!(reps.reps.len(), 1);
        assert_eq!(&reps.combined, store.value(params.entity_embedding));
    }

    #[test]
    fn final_width_is_dim_sum() {
        assert_eq!(
            LayerConfig::new(vec![64, 64, 32, 16], Aggregator::Gcn).final_dim(),
            176
        );
        let g = graph(1, 2, vec![vec![0, 1]], KnowledgeTriples::default());
        let mut store = ParameterStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let config = LayerConfig::new(vec![4, 3, 2], Aggregator::GraphSage);
        let params = init_model(&mut store, &g, 4, 4, &config, &mut rng);
        let reps = forward_all(&g, &store, &params, &config);
        assert_eq!(reps.combined.cols(), 9);
        assert_eq!(reps.reps[2].cols(), 2);
    }

    #[test]
    fn isolated_node_keeps_self_information() {
        // Entity 3 has no edges: its bi-interaction output must equal
        // LeakyReLU(W1 e_h) because the neighbor term is zero.
        let kg = KnowledgeTriples {
            triples: vec![(0, 0, 2)],
            num_entities: 4,
            num_relations: 1,
        };
        let g = graph(1, 1, vec![vec![0]], kg);
        let (mut store, mut params) = manual_params(
            vec![
                vec![0.2, -0.6],
                vec![0.9, 0.1],
                vec![-0.3, 0.5],
                vec![0.7, -1.1],
                vec![0.0, 0.4],
            ],
            vec![vec![0.1, -0.2]; 4],
            vec![identity_proj(2, 2); 4],
        );
        let w1 = vec![vec![1.0, 2.0], vec![-0.5, 0.25]];
        let w2 = vec![vec![3.0, -1.0], vec![0.5, 0.5]];
        push_layer(&mut store, &mut params, w1.clone(), Some(w2));
        let config = LayerConfig::new(vec![2, 2], Aggregator::BiInteraction);
        let reps = forward_all(&g, &store, &params, &config);

        let e = [0.7, -1.1]; // entity 3
        for (out_row, w_row) in w1.iter().enumerate() {
            let lin: f64 = w_row.iter().zip(e).map(|(a, b)| a * b).sum();
            let expect = if lin >= 0.0 { lin } else { 0.2 * lin };
            assert!((reps.reps[1].get(3, out_row) - expect).abs() < 1e-12);
        }
    }

    #[test]
    fn graphsage_identity_block_example() {
        // Node 1 receives only from node 0 (π = 1). With e_h = (1, 0),
        // e_N = (0, −1) and W = [I | I], the output is LeakyReLU((1, −1)).
        let kg = KnowledgeTriples {
            triples: vec![(1, 0, 0)],
            num_entities: 2,
            num_relations: 1,
        };
        let g = graph(0, 0, vec![], kg);
        let (mut store, mut params) = manual_params(
            vec![vec![0.0, -1.0], vec![1.0, 0.0]],
            vec![vec![0.0, 0.0]; 4],
            vec![identity_proj(2, 2); 4],
        );
        push_layer(
            &mut store,
            &mut params,
            vec![vec![1.0, 0.0, 1.0, 0.0], vec![0.0, 1.0, 0.0, 1.0]],
            None,
        );
        let config = LayerConfig::new(vec![2, 2], Aggregator::GraphSage);
        let reps = forward_all(&g, &store, &params, &config);
        assert_eq!(reps.reps[1].row(1), &[1.0, -0.2]);
    }

    #[test]
    fn attention_sums_to_one_under_node_dropout() {
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let kg = KnowledgeTriples {
            triples: (0..10).map(|i| (i % 4, i % 3, 4 + (i % 5))).collect(),
            num_entities: 9,
            num_relations: 3,
        };
        let g = graph(3, 4, vec![vec![0, 1], vec![2], vec![3, 0]], kg);
        let mut store = ParameterStore::new();
        let mut config = LayerConfig::new(vec![4, 3], Aggregator::Gcn);
        config.node_dropout = 0.4;
        let params = init_model(&mut store, &g, 4, 4, &config, &mut rng);

        let mut tape = Tape::new();
        let fwd = forward_on_tape(&mut tape, &g, &store, &params, &config, true, Some(&mut rng));
        let att = &fwd.attention;
        let dropped = att.dropped_nodes.as_ref().unwrap();
        let mut saw_dropped = false;
        for (h, &was_dropped) in dropped.iter().enumerate() {
            let seg = att.for_node(&g, h);
            if seg.is_empty() {
                continue;
            }
            let sum: f64 = seg.iter().sum();
            if was_dropped {
                saw_dropped = true;
                assert_eq!(sum, 0.0, "dropped node {h} kept attention mass");
            } else {
                assert!((sum - 1.0).abs() < 1e-9, "node {h} sums to {sum}");
                assert!(seg.iter().all(|&c| (0.0..=1.0).contains(&c)));
            }
        }
        assert!(saw_dropped, "seed produced no dropped node; pick another");
    }

    #[test]
    fn receptive_field_is_exactly_depth() {
        // Chain u → i0 → e2 → e3 → e4. With L = 2, node e4 sits 4 hops from
        // the user; changing its embedding must leave the user's final
        // representation bit-identical, while changing e2 (2 hops) must not.
        let kg = KnowledgeTriples {
            triples: vec![(0, 0, 2), (2, 0, 3), (3, 0, 4)],
            num_entities: 5,
            num_relations: 1,
        };
        let g = graph(1, 1, vec![vec![0]], kg);
        let mut store = ParameterStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let config = LayerConfig::new(vec![4, 3, 2], Aggregator::BiInteraction);
        let params = init_model(&mut store, &g, 4, 4, &config, &mut rng);
        let u = g.user_node(0);

        let base = forward_all(&g, &store, &params, &config);
        let base_row = base.combined.row(u).to_vec();

        let far = 4;
        for j in 0..4 {
            let old = store.value(params.entity_embedding).get(far, j);
            store
                .value_mut(params.entity_embedding)
                .set(far, j, old + 10.0);
        }
        let moved_far = forward_all(&g, &store, &params, &config);
        assert_eq!(moved_far.combined.row(u), &base_row[..], "distance-4 node leaked into L=2");

        let near = 2;
        let old = store.value(params.entity_embedding).get(near, 0);
        store.value_mut(params.entity_embedding).set(near, 0, old + 1.0);
        let moved_near = forward_all(&g, &store, &params, &config);
        assert_ne!(moved_near.combined.row(u), &base_row[..]);
    }

    #[test]
    fn predict_checks_node_kinds() {
        let g = graph(1, 2, vec![vec![0, 1]], KnowledgeTriples::default());
        let mut store = ParameterStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let config = LayerConfig::new(vec![3], Aggregator::Gcn);
        let params = init_model(&mut store, &g, 3, 3, &config, &mut rng);
        let reps = forward_all(&g, &store, &params, &config);

        let u = g.user_node(0);
        let manual: f64 = reps.combined.row(u).iter().zip(reps.combined.row(1)).map(|(a, b)| a * b).sum();
        assert_eq!(predict(&g, &reps, u, 1), manual);
        let result =
            std::panic::catch_unwind(std::panic::AssertUnwindSafe(|| predict(&g, &reps, 1, 0)));
        assert!(result.is_err(), "item passed as user must panic");
    }

    #[test]
    fn known_dot_products() {
        let reps = LayerRepresentations::from_layers(vec![Tensor::from_vec(
            2,
            3,
            vec![1.0, 2.0, 3.0, -1.0, 0.0, 2.0],
        )]);
        assert_eq!(row_dot(&reps.combined, 0, 1), 5.0);
        let v: f64 = reps.combined.row(0).iter().map(|x| x * x).sum();
        assert_eq!(row_dot(&reps.combined, 0, 0), v);
    }

    #[test]
    fn forward_gradients_match_finite_differences() {
        // d/dθ of Σ ŷ over a fixed (u, i) batch, all aggregators.
        let kg = KnowledgeTriples {
            triples: vec![(0, 0, 3), (1, 1, 3), (1, 0, 4), (2, 1, 4)],
            num_entities: 5,
            num_relations: 2,
        };
        let g = graph(2, 3, vec![vec![0, 1], vec![2]], kg);
        for aggregator in [Aggregator::Gcn, Aggregator::GraphSage, Aggregator::BiInteraction] {
            let mut rng = ChaCha8Rng::seed_from_u64(31);
            let mut store = ParameterStore::new();
            let config = LayerConfig::new(vec![3, 2], aggregator);
            let params = init_model(&mut store, &g, 3, 3, &config, &mut rng);
            let users = [g.user_node(0), g.user_node(1)];
            let items = [2usize, 0];

            let eval = |s: &ParameterStore| {
                let reps = forward_all(&g, s, &params, &config);
                users
                    .iter()
                    .zip(items)
                    .map(|(&u, i)| row_dot(&reps.combined, u, i))
                    .sum::<f64>()
            };

            let mut tape = Tape::new();
            let fwd = forward_on_tape::<ChaCha8Rng>(&mut tape, &g, &store, &params, &config, false, None);
            let u_rows = tape.gather_rows(fwd.combined, &users);
            let i_rows = tape.gather_rows(fwd.combined, &items);
            let scores = tape.row_dot(u_rows, i_rows);
            let loss = tape.sum(scores);
            tape.backward(loss, &mut store);

            let step = 1e-5;
            let mut rng2 = ChaCha8Rng::seed_from_u64(7);
            for id in store.ids().collect::<Vec<_>>() {
                let (rows, cols) = store.value(id).shape();
                for _ in 0..20 {
                    let i = rng2.random_range(0..rows);
                    let j = rng2.random_range(0..cols);
                    let orig = store.value(id).get(i, j);
                    store.value_mut(id).set(i, j, orig + step);
                    let hi = eval(&store);
                    store.value_mut(id).set(i, j, orig - step);
                    let lo = eval(&store);
                    store.value_mut(id).set(i, j, orig);
                    let numeric = (hi - lo) / (2.0 * step);
                    let analytic = store.grad(id).get(i, j);
                    let tol = 1e-6 + 1e-4 * numeric.abs().max(analytic.abs());
                    assert!(
                        (analytic - numeric).abs() <= tol,
                        "{:?} {} ({i},{j}): {analytic} vs {numeric}",
                        aggregator,
                        store.name(id)
                    );
                }
            }
        }
    }
}
