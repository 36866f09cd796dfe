//! The translation phase in isolation: train relation-projected embeddings
//! so real triples score lower energy than corrupted ones.
//!
//! Run with: cargo run --example knowledge_embedding

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use kgat::ckg::build_ckg;
use kgat::diffcore::{Adam, AdamConfig, ParameterStore, Tape};
use kgat::kge::{kg_loss_on_tape, transr_score, KgSampler};
use kgat::model::{init_model, Aggregator, LayerConfig};
use kgat::synth::memorization_fixture;

fn main() {
    let (inter, kg) = memorization_fixture();
    let g = build_ckg(&inter, &kg);

    let config = LayerConfig::new(vec![12], Aggregator::BiInteraction);
    let mut store = ParameterStore::new();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let params = init_model(&mut store, &g, 12, 8, &config, &mut rng);

    // Each batch pairs a stored edge with a corrupted tail that is not a
    // real edge; the loss pushes their energies apart.
    let mut sampler = KgSampler::new(&g);
    let adam = Adam::new(AdamConfig { lr: 0.01, ..AdamConfig::default() });
    for step in 0..300 {
        let batch = sampler.sample(&g, 64, &mut rng);
        let mut tape = Tape::new();
        let loss = kg_loss_on_tape(&mut tape, &store, &params, &batch);
        if step % 100 == 0 {
            println!("step {step:>3}: loss {:.6}", tape.value(loss).scalar_value());
        }
        tape.backward(loss, &mut store);
        adam.step(&mut store).expect("finite update");
        store.zero_grad();
    }

    // Energy is ||W_r e_h + e_r - W_r e_t||^2: small for edges the graph
    // contains, larger for edges it does not.
    let mut real = Vec::new();
    let mut fake = Vec::new();
    for h in 0..g.num_nodes {
        for (r, t) in g.ego_network(h) {
            real.push(transr_score(&store, &params, h, r, t));
            for candidate in 0..g.num_nodes {
                if !sampler.contains(h, r, candidate) {
                    fake.push(transr_score(&store, &params, h, r, candidate));
                    break;
                }
            }
        }
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    println!(
        "mean energy: {:.4} over {} real triples vs {:.4} over {} corrupted",
        mean(&real),
        real.len(),
        mean(&fake),
        fake.len()
    );
    assert!(mean(&real) < mean(&fake), "training failed to separate the two");
}
