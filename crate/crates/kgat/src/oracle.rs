//! Brute-force reference implementations used by tests.
//!
//! Everything here is written as explicit per-node/per-coordinate loops with
//! no tape, no batching, and no shared code with the modules under test
//! (only graph access, raw parameter arrays, and the shared config/data
//! types). Size guards are hard errors because these are intentionally
//! exponential or quadratic.

use crate::ckg::CollaborativeKG;
use crate::diffcore::{ParamId, ParameterStore, Tensor};
use crate::model::{
    Aggregator, AttentionMode, LayerConfig, LayerRepresentations, ModelParams, LEAKY_SLOPE,
};
use rand::Rng;

const MAX_ORACLE_EDGES: usize = 1000;
const MAX_PATH_NODES: usize = 15;

/// Literal per-node recursion of the propagation equations, dropout off.
pub fn naive_forward(
    g: &CollaborativeKG,
    store: &ParameterStore,
    params: &ModelParams,
    config: &LayerConfig,
) -> LayerRepresentations {
    assert!(
        g.num_edges() <= MAX_ORACLE_EDGES,
        "oracle guard: {} edges exceeds the {MAX_ORACLE_EDGES}-edge limit",
        g.num_edges()
    );
    let entity = store.value(params.entity_embedding);
    let rel = store.value(params.relation_embedding);
    let proj = store.value(params.relation_projection);
    let (k, d) = (params.k, params.d);

    // W_r · e, one output coordinate at a time.
    let project = |r: usize, e: &[f64]| -> Vec<f64> {
        (0..k)
            .map(|row| {
                let mut acc = 0.0;
                for (j, &ej) in e.iter().enumerate() {
                    acc += proj.get(r, row * d + j) * ej;
                }
                acc
            })
            .collect()
    };

    let mut att = vec![0.0; g.num_edges()];
    for h in 0..g.num_nodes {
        let seg = g.segment(h);
        if seg.is_empty() {
            continue;
        }
        match config.attention_mode {
            AttentionMode::Uniform => {
                let len = seg.len();
                for e in seg {
                    att[e] = 1.0 / len as f64;
                }
            }
            AttentionMode::KnowledgeAware => {
                let raw: Vec<f64> = seg
                    .clone()
                    .map(|e| {
                        let r = g.edge_relations[e];
                        let t = g.edge_tails[e];
                        let wh = project(r, entity.row(h));
                        let wt = project(r, entity.row(t));
                        let mut score = 0.0;
                        for row in 0..k {
                            score += wt[row] * (wh[row] + rel.get(r, row)).tanh();
                        }
                        score
                    })
                    .collect();
                let exps: Vec<f64> = raw.iter().map(|&x| x.exp()).collect();
                let denom: f64 = exps.iter().sum();
                for (offset, e) in seg.enumerate() {
                    att[e] = exps[offset] / denom;
                }
            }
        }
    }

    let leaky = |x: f64| if x >= 0.0 { x } else { LEAKY_SLOPE * x };
    let mut reps = vec![entity.clone()];
    for l in 1..=config.depth() {
        let prev = &reps[l - 1];
        let d_in = config.dims[l - 1];
        let d_out = config.dims[l];
        let w1 = store.value(params.layer_w1[l - 1]);
        let mut out = Tensor::zeros(g.num_nodes, d_out);
        for h in 0..g.num_nodes {
            let mut neigh = vec![0.0; d_in];
            for e in g.segment(h) {
                let t = g.edge_tails[e];
                for (j, nj) in neigh.iter_mut().enumerate() {
                    *nj += att[e] * prev.get(t, j);
                }
            }
            let eh = prev.row(h);
            for row in 0..d_out {
                let value = match config.aggregator {
                    Aggregator::Gcn => {
                        let mut lin = 0.0;
                        for j in 0..d_in {
                            lin += w1.get(row, j) * (eh[j] + neigh[j]);
                        }
                        leaky(lin)
                    }
                    Aggregator::GraphSage => {
                        let mut lin = 0.0;
                        for j in 0..d_in {
                            lin += w1.get(row, j) * eh[j];
                            lin += w1.get(row, d_in + j) * neigh[j];
                        }
                        leaky(lin)
                    }
                    Aggregator::BiInteraction => {
                        let w2 = store.value(params.layer_w2[l - 1]);
                        let (mut lin1, mut lin2) = (0.0, 0.0);
                        for j in 0..d_in {
                            lin1 += w1.get(row, j) * (eh[j] + neigh[j]);
                            lin2 += w2.get(row, j) * (eh[j] * neigh[j]);
                        }
                        leaky(lin1) + leaky(lin2)
                    }
                };
                out.set(h, row, value);
            }
        }
        reps.push(out);
    }
    LayerRepresentations::from_layers(reps)
}

/// Central finite difference of `f` at each listed coordinate, step 1e-5.
pub fn fd_gradient<F: FnMut(&ParameterStore) -> f64>(
    store: &mut ParameterStore,
    coords: &[(ParamId, usize, usize)],
    mut f: F,
) -> Vec<f64> {
    const STEP: f64 = 1e-5;
    coords
        .iter()
        .map(|&(id, i, j)| {
            let orig = store.value(id).get(i, j);
            store.value_mut(id).set(i, j, orig + STEP);
            let hi = f(store);
            store.value_mut(id).set(i, j, orig - STEP);
            let lo = f(store);
            store.value_mut(id).set(i, j, orig);
            (hi - lo) / (2.0 * STEP)
        })
        .collect()
}

/// Up to `max_per_param` distinct coordinates from every parameter; small
/// parameters are covered exhaustively.
pub fn sample_coords<R: Rng>(
    store: &ParameterStore,
    max_per_param: usize,
    rng: &mut R,
) -> Vec<(ParamId, usize, usize)> {
    let mut out = Vec::new();
    for id in store.ids() {
        let (rows, cols) = store.value(id).shape();
        let total = rows * cols;
        if total <= max_per_param {
            for i in 0..rows {
                for j in 0..cols {
                    out.push((id, i, j));
                }
            }
        } else {
            let mut chosen = std::collections::BTreeSet::new();
            while chosen.len() < max_per_param {
                chosen.insert(rng.random_range(0..total));
            }
            for flat in chosen {
                out.push((id, flat / cols, flat % cols));
            }
        }
    }
    out
}

/// Path found by the exhaustive enumerator.
#[derive(Clone, Debug, PartialEq)]
pub struct OraclePath {
    pub nodes: Vec<usize>,
    pub relations: Vec<usize>,
    pub score: f64,
}

/// Every simple path from `start` to `target` with at most `max_len` edges,
/// scored by the product of traversed-edge coefficients and sorted by score
/// descending with lexicographic node-sequence tie-break. Zero-coefficient
/// edges carry no flow and are not traversed.
pub fn exhaustive_paths(
    g: &CollaborativeKG,
    coefficients: &[f64],
    start: usize,
    target: usize,
    max_len: usize,
) -> Vec<OraclePath> {
    assert!(
        g.num_nodes <= MAX_PATH_NODES,
        "oracle guard: {} nodes exceeds the {MAX_PATH_NODES}-node limit",
        g.num_nodes
    );
    assert_eq!(coefficients.len(), g.num_edges());
    let mut out = Vec::new();
    let mut nodes = vec![start];
    let mut rels = Vec::new();
    dfs(g, coefficients, target, max_len, 1.0, &mut nodes, &mut rels, &mut out);
    out.sort_by(|a, b| b.score.total_cmp(&a.score).then_with(|| a.nodes.cmp(&b.nodes)));
    out
}

#[allow(clippy::too_many_arguments)]
fn dfs(
    g: &CollaborativeKG,
    coefficients: &[f64],
    target: usize,
    max_len: usize,
    score: f64,
    nodes: &mut Vec<usize>,
    rels: &mut Vec<usize>,
    out: &mut Vec<OraclePath>,
) {
    if rels.len() == max_len {
        return;
    }
    let here = *nodes.last().unwrap();
    for e in g.segment(here) {
        let t = g.edge_tails[e];
        let c = coefficients[e];
        if c <= 0.0 || nodes.contains(&t) {
            continue;
        }
        nodes.push(t);
        rels.push(g.edge_relations[e]);
        let s = score * c;
        if t == target {
            out.push(OraclePath {
                nodes: nodes.clone(),
                relations: rels.clone(),
                score: s,
            });
        } else {
            dfs(g, coefficients, target, max_len, s, nodes, rels, out);
        }
        nodes.pop();
        rels.pop();
    }
}
