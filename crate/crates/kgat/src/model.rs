//! Model parameter layout, initialization, and shared configuration types.
//!
//! Trainable state lives in a [`ParameterStore`] under fixed names so
//! checkpoints are self-describing: `entity_embedding` (num_nodes × d),
//! `relation_embedding` (num_ckg_relations × k), `relation_projection`
//! (num_ckg_relations × k·d, one flattened k×d matrix per relation), and
//! `layer<l>_w1` / `layer<l>_w2` aggregator weights.

use crate::ckg::CollaborativeKG;
use crate::diffcore::{NodeId, ParamId, ParameterStore, Tape, Tensor};
use rand::Rng;

/// Negative slope of the LeakyReLU used by every aggregator.
pub const LEAKY_SLOPE: f64 = 0.2;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Aggregator {
    Gcn,
    GraphSage,
    BiInteraction,
}

impl Aggregator {
    pub fn parse(s: &str) -> Option<Self> {
        match s.to_ascii_lowercase().as_str() {
            "gcn" => Some(Aggregator::Gcn),
            "graphsage" => Some(Aggregator::GraphSage),
            "bi" | "bi-interaction" | "biinteraction" => Some(Aggregator::BiInteraction),
            _ => None,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Aggregator::Gcn => "gcn",
            Aggregator::GraphSage => "graphsage",
            Aggregator::BiInteraction => "bi-interaction",
        }
    }
}

/// Knowledge-aware attention, or the ablation that fixes every coefficient
/// to 1/|N_h|.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AttentionMode {
    KnowledgeAware,
    Uniform,
}

impl AttentionMode {
    pub fn parse(s: &str) -> Option<Self> {
        match s.to_ascii_lowercase().as_str() {
            "knowledge-aware" | "knowledge_aware" | "attentive" => Some(AttentionMode::KnowledgeAware),
            "uniform" => Some(AttentionMode::Uniform),
            _ => None,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            AttentionMode::KnowledgeAware => "knowledge-aware",
            AttentionMode::Uniform => "uniform",
        }
    }
}

/// Propagation tower shape and regularization switches.
#[derive(Clone, Debug)]
pub struct LayerConfig {
    /// [d_0, d_1, ..., d_L]; d_0 is the embedding dimension.
    pub dims: Vec<usize>,
    pub aggregator: Aggregator,
    pub attention_mode: AttentionMode,
    /// Probability of dropping each edge's message, per layer.
    pub message_dropout: f64,
    /// Probability of a node's incoming segment being dropped for a pass.
    pub node_dropout: f64,
}

impl LayerConfig {
    pub fn new(dims: Vec<usize>, aggregator: Aggregator) -> Self {
        LayerConfig {
            dims,
            aggregator,
            attention_mode: AttentionMode::KnowledgeAware,
            message_dropout: 0.0,
            node_dropout: 0.0,
        }
    }

    pub fn depth(&self) -> usize {
        self.dims.len() - 1
    }

    /// Width of the concatenated multi-depth representation.
    pub fn final_dim(&self) -> usize {
        self.dims.iter().sum()
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.dims.is_empty() {
            return Err("dims must contain at least the embedding dimension".into());
        }
        if self.dims.contains(&0) {
            return Err("all layer dims must be >= 1".into());
        }
        for (name, p) in [
            ("message_dropout", self.message_dropout),
            ("node_dropout", self.node_dropout),
        ] {
            if !(0.0..1.0).contains(&p) {
                return Err(format!("{name} must lie in [0, 1), got {p}"));
            }
        }
        Ok(())
    }
}

/// Per-node embedding matrices for depths 0..L plus their concatenation.
#[derive(Clone, Debug)]
pub struct LayerRepresentations {
    /// `reps[l]` is (num_nodes × d_l); `reps[0]` is the embedding table.
    pub reps: Vec<Tensor>,
    /// (num_nodes × Σ d_l), column-concatenated in depth order.
    pub combined: Tensor,
}

impl LayerRepresentations {
    pub fn from_layers(reps: Vec<Tensor>) -> Self {
        assert!(!reps.is_empty());
        let rows = reps[0].rows();
        let total: usize = reps.iter().map(Tensor::cols).sum();
        let mut combined = Tensor::zeros(rows, total);
        for i in 0..rows {
            let mut offset = 0;
            for rep in &reps {
                combined.row_mut(i)[offset..offset + rep.cols()].copy_from_slice(rep.row(i));
                offset += rep.cols();
            }
        }
        LayerRepresentations { reps, combined }
    }
}

/// Handles to every trainable matrix of one model instance.
#[derive(Clone, Debug)]
pub struct ModelParams {
    pub d: usize,
    pub k: usize,
    pub entity_embedding: ParamId,
    pub relation_embedding: ParamId,
    pub relation_projection: ParamId,
    /// One per propagation layer; the only weight for GCN/GraphSage.
    pub layer_w1: Vec<ParamId>,
    /// Second weight of the bi-interaction aggregator; empty otherwise.
    pub layer_w2: Vec<ParamId>,
}

impl ModelParams {
    /// All layer-weight ids in a stable order.
    pub fn layer_weights(&self) -> Vec<ParamId> {
        let mut out = Vec::new();
        for l in 0..self.layer_w1.len() {
            out.push(self.layer_w1[l]);
            if let Some(&w2) = self.layer_w2.get(l) {
                out.push(w2);
            }
        }
        out
    }

    /// Rebinds handles after loading a checkpoint, validating shapes against
    /// the graph and layer configuration.
    pub fn from_store(
        store: &ParameterStore,
        g: &CollaborativeKG,
        config: &LayerConfig,
    ) -> Result<ModelParams, String> {
        let find = |name: &str| {
            store
                .lookup(name)
                .ok_or_else(|| format!("checkpoint is missing parameter '{name}'"))
        };
        let entity_embedding = find("entity_embedding")?;
        let relation_embedding = find("relation_embedding")?;
        let relation_projection = find("relation_projection")?;
        let d = store.value(entity_embedding).cols();
        let k = store.value(relation_embedding).cols();
        if store.value(entity_embedding).rows() != g.num_nodes {
            return Err(format!(
                "entity_embedding has {} rows but the graph has {} nodes",
                store.value(entity_embedding).rows(),
                g.num_nodes
            ));
        }
        if store.value(relation_projection).shape() != (g.num_ckg_relations, k * d) {
            return Err("relation_projection shape does not match graph/dims".into());
        }
        if config.dims[0] != d {
            return Err(format!(
                "configured dims[0]={} but checkpoint embedding dim is {d}",
                config.dims[0]
            ));
        }
        let mut layer_w1 = Vec::new();
        let mut layer_w2 = Vec::new();
        for l in 1..=config.depth() {
            let (in_dim, out_dim) = layer_shape(config, l);
            let w1 = find(&format!("layer{l}_w1"))?;
            if store.value(w1).shape() != (out_dim, in_dim) {
                return Err(format!("layer{l}_w1 has unexpected shape"));
            }
            layer_w1.push(w1);
            if config.aggregator == Aggregator::BiInteraction {
                let w2 = find(&format!("layer{l}_w2"))?;
                if store.value(w2).shape() != (config.dims[l], config.dims[l - 1]) {
                    return Err(format!("layer{l}_w2 has unexpected shape"));
                }
                layer_w2.push(w2);
            }
        }
        Ok(ModelParams {
            d,
            k,
            entity_embedding,
            relation_embedding,
            relation_projection,
            layer_w1,
            layer_w2,
        })
    }
}

/// (input, output) widths of layer l's primary weight.
fn layer_shape(config: &LayerConfig, l: usize) -> (usize, usize) {
    let base_in = config.dims[l - 1];
    let in_dim = match config.aggregator {
        Aggregator::GraphSage => 2 * base_in,
        _ => base_in,
    };
    (in_dim, config.dims[l])
}

fn xavier<R: Rng>(rng: &mut R, rows: usize, cols: usize, fan_in: usize, fan_out: usize) -> Tensor {
    let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let data = (0..rows * cols)
        .map(|_| rng.random_range(-bound..bound))
        .collect();
    Tensor::from_vec(rows, cols, data)
}

/// Registers and Xavier-initializes every parameter the configuration needs.
pub fn init_model<R: Rng>(
    store: &mut ParameterStore,
    g: &CollaborativeKG,
    d: usize,
    k: usize,
    config: &LayerConfig,
    rng: &mut R,
) -> ModelParams {
    assert_eq!(config.dims[0], d, "dims[0] must equal the embedding dim");
    config.validate().expect("invalid layer config");

    let entity_embedding = store.register(
        "entity_embedding",
        xavier(rng, g.num_nodes, d, g.num_nodes, d),
    );
    let relation_embedding = store.register(
        "relation_embedding",
        xavier(rng, g.num_ckg_relations, k, g.num_ckg_relations, k),
    );
    // Each relation's k×d projection gets its own Xavier fan.
    let mut proj = Tensor::zeros(g.num_ckg_relations, k * d);
    for r in 0..g.num_ckg_relations {
        let slice = xavier(rng, 1, k * d, d, k);
        proj.row_mut(r).copy_from_slice(slice.row(0));
    }
    let relation_projection = store.register("relation_projection", proj);

    let mut layer_w1 = Vec::new();
    let mut layer_w2 = Vec::new();
    for l in 1..=config.depth() {
        let (in_dim, out_dim) = layer_shape(config, l);
        layer_w1.push(store.register(
            &format!("layer{l}_w1"),
            xavier(rng, out_dim, in_dim, in_dim, out_dim),
        ));
        if config.aggregator == Aggregator::BiInteraction {
            let (i2, o2) = (config.dims[l - 1], config.dims[l]);
            layer_w2.push(store.register(
                &format!("layer{l}_w2"),
                xavier(rng, o2, i2, i2, o2),
            ));
        }
    }

    ModelParams {
        d,
        k,
        entity_embedding,
        relation_embedding,
        relation_projection,
        layer_w1,
        layer_w2,
    }
}

/// Applies each row's relation-specific k×d projection to the matching row
/// of `x`: out[i] = W_{rels[i]} · x[i].
///
/// Rows are grouped by relation so each group is one gather + matmul against
/// the reshaped projection slice, scattered back into batch order. Groups
/// never overlap, so the scatter sum reassembles rather than accumulates.
pub(crate) fn project_by_relation(
    tape: &mut Tape,
    proj: NodeId,
    rels: &[usize],
    x: NodeId,
    k: usize,
    d: usize,
) -> NodeId {
    assert!(!rels.is_empty(), "cannot project an empty batch");
    let mut by_rel: std::collections::BTreeMap<usize, Vec<usize>> = Default::default();
    for (i, &r) in rels.iter().enumerate() {
        by_rel.entry(r).or_default().push(i);
    }
    let mut acc: Option<NodeId> = None;
    for (r, indices) in by_rel {
        let w_flat = tape.gather_rows(proj, &[r]);
        let w = tape.reshape(w_flat, k, d);
        let xr = tape.gather_rows(x, &indices);
        let projected = tape.matmul(xr, w, true);
        let placed = tape.scatter_add_rows(projected, &indices, rels.len());
        acc = Some(match acc {
            None => placed,
            Some(prev) => tape.add(prev, placed),
        });
    }
    acc.unwrap()
}
