//! Translation-based triple scoring and the pairwise ranking loss for the
//! knowledge-graph phase of training.
//!
//! A triple (h, r, t) is scored by the energy ‖W_r·e_h + e_r − W_r·e_t‖₂²;
//! valid triples should score LOWER than corrupted ones, and the loss is
//! mean(−ln σ(g(h,r,t′) − g(h,r,t))) over a batch whose corrupted tails t′
//! are rejection-sampled against the edge set.

use crate::ckg::CollaborativeKG;
use crate::diffcore::{NodeId, ParameterStore, Tape, Tensor};
use crate::model::{project_by_relation, ModelParams};
use rand::Rng;
use std::collections::HashSet;

/// Parallel arrays of valid triples and their corrupted tails.
#[derive(Clone, Debug, Default)]
pub struct TripleBatch {
    pub heads: Vec<usize>,
    pub relations: Vec<usize>,
    pub tails: Vec<usize>,
    pub corrupted_tails: Vec<usize>,
}

impl TripleBatch {
    pub fn len(&self) -> usize {
        self.heads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.heads.is_empty()
    }
}

/// Energy of a single triple, computed directly from parameter values.
pub fn transr_score(
    store: &ParameterStore,
    params: &ModelParams,
    h: usize,
    r: usize,
    t: usize,
) -> f64 {
    let entity = store.value(params.entity_embedding);
    let rel = store.value(params.relation_embedding);
    let proj = store.value(params.relation_projection);
    let (k, d) = (params.k, params.d);
    let mut energy = 0.0;
    for row in 0..k {
        let w = &proj.row(r)[row * d..(row + 1) * d];
        let wh: f64 = w.iter().zip(entity.row(h)).map(|(a, b)| a * b).sum();
        let wt: f64 = w.iter().zip(entity.row(t)).map(|(a, b)| a * b).sum();
        let component = wh + rel.get(r, row) - wt;
        energy += component * component;
    }
    energy
}

/// Records per-row energies for a triple list, (B, 1) output.
pub fn transr_scores_on_tape(
    tape: &mut Tape,
    store: &ParameterStore,
    params: &ModelParams,
    heads: &[usize],
    relations: &[usize],
    tails: &[usize],
) -> NodeId {
    assert!(!heads.is_empty(), "empty triple list");
    let h_emb = tape.param_rows(store, params.entity_embedding, heads);
    let t_emb = tape.param_rows(store, params.entity_embedding, tails);
    let r_emb = tape.param_rows(store, params.relation_embedding, relations);
    let proj = tape.param(store, params.relation_projection);
    let wh = project_by_relation(tape, proj, relations, h_emb, params.k, params.d);
    let wt = project_by_relation(tape, proj, relations, t_emb, params.k, params.d);
    let translated = tape.add(wh, r_emb);
    let diff = tape.sub(translated, wt);
    let sq = tape.mul(diff, diff);
    let ones = tape.constant(Tensor::from_vec(params.k, 1, vec![1.0; params.k]));
    tape.matvec(sq, ones)
}

/// Records the pairwise ranking loss of a batch: mean −ln σ(g′ − g).
pub fn kg_loss_on_tape(
    tape: &mut Tape,
    store: &ParameterStore,
    params: &ModelParams,
    batch: &TripleBatch,
) -> NodeId {
    assert!(!batch.is_empty(), "kg loss over an empty batch");
    let valid = transr_scores_on_tape(tape, store, params, &batch.heads, &batch.relations, &batch.tails);
    let corrupt = transr_scores_on_tape(
        tape,
        store,
        params,
        &batch.heads,
        &batch.relations,
        &batch.corrupted_tails,
    );
    let gap = tape.sub(corrupt, valid);
    let sig = tape.sigmoid(gap);
    let ln = tape.ln(sig);
    let neg = tape.neg(ln);
    let total = tape.sum(neg);
    tape.scale(total, 1.0 / batch.len() as f64)
}

/// Loss value without keeping the tape.
pub fn kg_loss_value(store: &ParameterStore, params: &ModelParams, batch: &TripleBatch) -> f64 {
    let mut tape = Tape::new();
    let loss = kg_loss_on_tape(&mut tape, store, params, batch);
    tape.value(loss).scalar_value()
}

/// Uniform edge sampler with tail corruption.
///
/// Because every edge is stored with its inverse, corrupting only tails still
/// covers head corruption: replacing h in (h, r, t) is the same event as
/// replacing the tail of the stored inverse (t, inv r, h).
pub struct KgSampler {
    edge_set: HashSet<(usize, usize, usize)>,
    /// Corruptions accepted after the retry cap despite colliding with a
    /// real edge. Nonzero only on degenerate graphs.
    pub forced_corruptions: u64,
}

const CORRUPTION_RETRIES: usize = 100;

impl KgSampler {
    pub fn new(g: &CollaborativeKG) -> Self {
        let mut edge_set = HashSet::with_capacity(g.num_edges());
        for h in 0..g.num_nodes {
            for (r, t) in g.ego_network(h) {
                edge_set.insert((h, r, t));
            }
        }
        KgSampler {
            edge_set,
            forced_corruptions: 0,
        }
    }

    pub fn contains(&self, h: usize, r: usize, t: usize) -> bool {
        self.edge_set.contains(&(h, r, t))
    }

    pub fn sample<R: Rng>(
        &mut self,
        g: &CollaborativeKG,
        batch_size: usize,
        rng: &mut R,
    ) -> TripleBatch {
        assert!(g.num_edges() > 0, "cannot sample from an empty graph");
        let mut batch = TripleBatch::default();
        for _ in 0..batch_size {
            let e = rng.random_range(0..g.num_edges());
            let h = g.edge_head(e);
            let r = g.edge_relations[e];
            let t = g.edge_tails[e];
            let mut corrupted = rng.random_range(0..g.num_nodes);
            let mut found = false;
            for _ in 0..CORRUPTION_RETRIES {
                if !self.edge_set.contains(&(h, r, corrupted)) {
                    found = true;
                    break;
                }
                corrupted = rng.random_range(0..g.num_nodes);
            }
            if !found {
                self.forced_corruptions += 1;
                log::warn!(
                    "no free corruption for head {h} relation {r} after {CORRUPTION_RETRIES} tries; accepting ({h},{r},{corrupted})"
                );
            }
            batch.heads.push(h);
            batch.relations.push(r);
            batch.tails.push(t);
            batch.corrupted_tails.push(corrupted);
        }
        batch
    }
}
