//! Unit-test helpers shared across module test suites.

use crate::diffcore::{ParameterStore, Tensor};
use crate::model::ModelParams;

/// Builds a store with explicit embedding/relation/projection values and no
/// layer weights. Each projection entry is one flattened k×d matrix; k and d
/// are inferred from the relation embedding width and projection length.
pub fn manual_params(
    entity_rows: Vec<Vec<f64>>,
    relation_rows: Vec<Vec<f64>>,
    projection_rows: Vec<Vec<f64>>,
) -> (ParameterStore, ModelParams) {
    assert_eq!(relation_rows.len(), projection_rows.len());
    let k = relation_rows[0].len();
    let d = entity_rows[0].len();
    assert_eq!(projection_rows[0].len(), k * d);

    let flatten = |rows: &[Vec<f64>]| -> Vec<f64> { rows.concat() };
    let mut store = ParameterStore::new();
    let entity_embedding = store.register(
        "entity_embedding",
        Tensor::from_vec(entity_rows.len(), d, flatten(&entity_rows)),
    );
    let relation_embedding = store.register(
        "relation_embedding",
        Tensor::from_vec(relation_rows.len(), k, flatten(&relation_rows)),
    );
    let relation_projection = store.register(
        "relation_projection",
        Tensor::from_vec(projection_rows.len(), k * d, flatten(&projection_rows)),
    );
    let params = ModelParams {
        d,
        k,
        entity_embedding,
        relation_embedding,
        relation_projection,
        layer_w1: Vec::new(),
        layer_w2: Vec::new(),
    };
    (store, params)
}

/// Appends one layer's weights with explicit values.
pub fn push_layer(
    store: &mut ParameterStore,
    params: &mut ModelParams,
    w1: Vec<Vec<f64>>,
    w2: Option<Vec<Vec<f64>>>,
) {
    let l = params.layer_w1.len() + 1;
    let (rows, cols) = (w1.len(), w1[0].len());
    params.layer_w1.push(store.register(
        &format!("layer{l}_w1"),
        Tensor::from_vec(rows, cols, w1.concat()),
    ));
    if let Some(w2) = w2 {
        let (rows, cols) = (w2.len(), w2[0].len());
        params.layer_w2.push(store.register(
            &format!("layer{l}_w2"),
            Tensor::from_vec(rows, cols, w2.concat()),
        ));
    }
}
