//! Finite-difference verification of every trainable gradient path.
//!
//! Each case builds a seeded toy graph, records one loss (or its
//! regularized phase objective) on a tape, and compares the analytic
//! gradient against central differences at every parameter coordinate.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::ckg::{build_ckg, CollaborativeKG, InteractionSet, KnowledgeTriples};
use crate::diffcore::{ParameterStore, Tape};
use crate::kge::KgSampler;
use crate::model::{init_model, Aggregator, LayerConfig, ModelParams};
use crate::oracle::{fd_gradient, sample_coords};
use crate::propagation::forward_on_tape;
use crate::synth::{generate, SynthConfig};
use crate::training::{cf_objective_on_tape, kg_objective_on_tape, sample_cf_batch, CFBatch};

pub const GRADCHECK_RTOL: f64 = 1e-4;
pub const GRADCHECK_ATOL: f64 = 1e-7;

#[derive(Clone, Debug, serde::Serialize)]
pub struct GradCheckCase {
    pub name: String,
    /// Coordinates compared (all of them; the toy parameters are small).
    pub coords: usize,
    pub max_abs_err: f64,
    /// Worst error divided by its tolerance; ≤ 1 passes.
    pub max_tol_ratio: f64,
    pub passed: bool,
}

#[derive(Clone, Debug, serde::Serialize)]
pub struct GradCheckReport {
    pub seed: u64,
    pub cases: Vec<GradCheckCase>,
    pub passed: bool,
}

fn toy_instance(seed: u64) -> (CollaborativeKG, InteractionSet, KnowledgeTriples) {
    let data = generate(&SynthConfig {
        num_users: 5,
        num_items: 7,
        num_entities: 12,
        num_relations: 3,
        interactions_per_user: 3,
        triples_per_item: 2,
        clusters: 2,
        seed,
    });
    let inter = InteractionSet {
        num_users: data.num_users,
        num_items: data.num_items,
        train_pos: data.interactions.clone(),
        test_pos: vec![Vec::new(); data.num_users],
        val_pos: vec![],
    };
    let kg = KnowledgeTriples {
        triples: data.triples.clone(),
        num_entities: data.num_entities,
        num_relations: data.num_relations,
    };
    let g = build_ckg(&inter, &kg);
    assert!(g.num_nodes <= 20, "toy instance grew past the intended size");
    (g, inter, kg)
}

fn compare<F: FnMut(&ParameterStore) -> f64>(
    name: String,
    store: &mut ParameterStore,
    analytic: &dyn Fn(&mut ParameterStore),
    f: F,
    rng: &mut ChaCha8Rng,
) -> GradCheckCase {
    store.zero_grad();
    analytic(store);
    let coords = sample_coords(store, 200, rng);
    let exact: Vec<f64> = coords
        .iter()
        .map(|&(id, i, j)| store.grad(id).get(i, j))
        .collect();
    store.zero_grad();
    let approx = fd_gradient(store, &coords, f);

    let mut max_abs_err: f64 = 0.0;
    let mut max_tol_ratio: f64 = 0.0;
    for (a, fd) in exact.iter().zip(&approx) {
        let err = (a - fd).abs();
        let tol = GRADCHECK_ATOL + GRADCHECK_RTOL * a.abs().max(fd.abs());
        max_abs_err = max_abs_err.max(err);
        max_tol_ratio = max_tol_ratio.max(err / tol);
    }
    GradCheckCase {
        name,
        coords: coords.len(),
        max_abs_err,
        max_tol_ratio,
        passed: max_tol_ratio <= 1.0,
    }
}

fn kg_case(
    g: &CollaborativeKG,
    lambda: f64,
    name: &str,
    seed: u64,
) -> GradCheckCase {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x7a31);
    let config = LayerConfig::new(vec![4], Aggregator::Gcn);
    let mut store = ParameterStore::new();
    let params = init_model(&mut store, g, 4, 4, &config, &mut rng);
    let mut sampler = KgSampler::new(g);
    let batch = sampler.sample(g, 24, &mut rng);

    let record = |tape: &mut Tape, store: &ParameterStore, params: &ModelParams| {
        kg_objective_on_tape(tape, store, params, &batch, lambda)
    };
    compare(
        name.to_string(),
        &mut store,
        &|store| {
            let mut tape = Tape::new();
            let node = record(&mut tape, store, &params);
            tape.backward(node, store);
        },
        |store| {
            let mut tape = Tape::new();
            let node = record(&mut tape, store, &params);
            tape.value(node).scalar_value()
        },
        &mut rng,
    )
}

fn cf_case(
    g: &CollaborativeKG,
    inter: &InteractionSet,
    aggregator: Aggregator,
    lambda: f64,
    name: &str,
    seed: u64,
) -> GradCheckCase {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x3c5f);
    let config = LayerConfig::new(vec![4, 4, 4], aggregator);
    let mut store = ParameterStore::new();
    let params = init_model(&mut store, g, 4, 4, &config, &mut rng);
    let batch: CFBatch = sample_cf_batch(inter, 16, &mut rng);

    let record = |tape: &mut Tape, store: &ParameterStore, params: &ModelParams| {
        let fwd = forward_on_tape::<ChaCha8Rng>(tape, g, store, params, &config, false, None);
        cf_objective_on_tape(tape, fwd.combined, g, store, params, &batch, lambda)
    };
    compare(
        name.to_string(),
        &mut store,
        &|store| {
            let mut tape = Tape::new();
            let node = record(&mut tape, store, &params);
            tape.backward(node, store);
        },
        |store| {
            let mut tape = Tape::new();
            let node = record(&mut tape, store, &params);
            tape.value(node).scalar_value()
        },
        &mut rng,
    )
}

/// Runs the whole suite: translation loss and objective, plus ranking loss
/// and objective for each aggregator, on one seeded toy instance.
pub fn run_suite(seed: u64) -> GradCheckReport {
    let (g, inter, _) = toy_instance(seed);
    let mut cases = vec![
        kg_case(&g, 0.0, "translation-loss", seed),
        kg_case(&g, 0.01, "translation-objective", seed),
    ];
    for aggregator in [Aggregator::Gcn, Aggregator::GraphSage, Aggregator::BiInteraction] {
        cases.push(cf_case(
            &g,
            &inter,
            aggregator,
            0.0,
            &format!("ranking-loss/{}", aggregator.name()),
            seed,
        ));
        cases.push(cf_case(
            &g,
            &inter,
            aggregator,
            0.01,
            &format!("ranking-objective/{}", aggregator.name()),
            seed,
        ));
    }
    let passed = cases.iter().all(|c| c.passed);
    GradCheckReport { seed, cases, passed }
}
