//! Path-based explanation of a recommendation.
//!
//! A path from a user node to an item node is scored by the product of the
//! attention coefficients along its edges. Because coefficients are
//! normalized per head node, every hop multiplies by a value in (0, 1], so
//! a path score never exceeds the score of any of its prefixes.

use std::collections::HashMap;
use std::io::BufRead;
use std::path::Path;

use serde::Serialize;

use crate::ckg::{CollaborativeKG, DataError};

/// A simple (node-repetition-free) path with its per-hop coefficients.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ExplainedPath {
    pub nodes: Vec<usize>,
    pub relations: Vec<usize>,
    pub coefficients: Vec<f64>,
    pub score: f64,
}

/// All simple paths from `start` to `target` with at most `max_len` edges,
/// best score first. `beam` caps how many partial paths survive per length;
/// `None` explores everything (exact, exponential in the worst case).
///
/// `attention` holds one coefficient per edge, in edge-index order. Edges
/// with a zero coefficient (for example a dropped segment) are skipped.
pub fn top_paths(
    g: &CollaborativeKG,
    attention: &[f64],
    start: usize,
    target: usize,
    max_len: usize,
    beam: Option<usize>,
) -> Vec<ExplainedPath> {
    assert_eq!(attention.len(), g.num_edges(), "one coefficient per edge");
    assert!(start < g.num_nodes && target < g.num_nodes, "node out of range");
    if let Some(w) = beam {
        assert!(w >= 1, "beam width must be at least 1");
    }

    let mut frontier = vec![ExplainedPath {
        nodes: vec![start],
        relations: Vec::new(),
        coefficients: Vec::new(),
        score: 1.0,
    }];
    let mut complete = Vec::new();
    for _ in 0..max_len {
        if frontier.is_empty() {
            break;
        }
        let mut next = Vec::new();
        for p in &frontier {
            let end = *p.nodes.last().unwrap();
            for e in g.segment(end) {
                let t = g.edge_tails[e];
                let c = attention[e];
                if c <= 0.0 || p.nodes.contains(&t) {
                    continue;
                }
                let mut np = p.clone();
                np.nodes.push(t);
                np.relations.push(g.edge_relations[e]);
                np.coefficients.push(c);
                np.score = p.score * c;
                if t == target {
                    complete.push(np);
                } else {
                    next.push(np);
                }
            }
        }
        next.sort_by(path_order);
        if let Some(w) = beam {
            next.truncate(w);
        }
        frontier = next;
    }
    complete.sort_by(path_order);
    complete
}

fn path_order(a: &ExplainedPath, b: &ExplainedPath) -> std::cmp::Ordering {
    b.score.total_cmp(&a.score).then_with(|| a.nodes.cmp(&b.nodes))
}

/// One line per path: `score<TAB>n0 -[r0]-> n1 -[r1]-> ... nk`, node ids
/// replaced by labels where available.
pub fn render_path(path: &ExplainedPath, labels: Option<&HashMap<usize, String>>) -> String {
    let name = |n: usize| -> String {
        labels
            .and_then(|m| m.get(&n).cloned())
            .unwrap_or_else(|| n.to_string())
    };
    let mut line = format!("{}\t{}", path.score, name(path.nodes[0]));
    for (hop, &r) in path.relations.iter().enumerate() {
        line.push_str(&format!(" -[{r}]-> {}", name(path.nodes[hop + 1])));
    }
    line
}

/// Node labels: one `id<whitespace>label` per line, `#` comments allowed.
/// The label is the rest of the line and may contain spaces.
pub fn parse_labels<R: BufRead>(reader: R, source: &str) -> Result<HashMap<usize, String>, DataError> {
    let mut out = HashMap::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let err = |msg: String| DataError::Parse {
            path: source.to_string(),
            line: idx + 1,
            msg,
        };
        let (id, label) = trimmed
            .split_once(char::is_whitespace)
            .ok_or_else(|| err("expected `id label`".to_string()))?;
        let id: usize = id
            .parse()
            .map_err(|e| err(format!("bad node id {id:?}: {e}")))?;
        out.insert(id, label.trim().to_string());
    }
    Ok(out)
}

pub fn load_labels(path: &Path) -> Result<HashMap<usize, String>, DataError> {
    let file = std::fs::File::open(path)?;
    parse_labels(std::io::BufReader::new(file), &path.display().to_string())
}
