//! Collaborative knowledge graph: user-item interactions and KG triples
//! merged into one CSR-by-head edge structure.
//!
//! Node id layout is a single flat space: entities occupy `[0, num_entities)`
//! with items identified with the low entity ids (`item i` IS `entity i`),
//! and users follow at `[num_entities, num_entities + num_users)`. Relations
//! are laid out as originals `[0, R)`, then Interact at `R`, then inverses of
//! the originals at `[R+1, 2R+1)`, then inverse-Interact at `2R+1`. Every
//! edge is stored together with its inverse, so heads see their full
//! neighborhood; only train interactions become edges.

use std::fs::File;
use std::io::{self, BufRead, BufReader, Write};
use std::path::Path;

#[derive(Debug, thiserror::Error)]
pub enum DataError {
    #[error("{path}:{line}: {msg}")]
    Parse {
        path: String,
        line: usize,
        msg: String,
    },
    #[error("{0}")]
    Validation(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// Per-user positive item lists for the train/test(/validation) splits.
#[derive(Clone, Debug, Default)]
pub struct InteractionSet {
    pub num_users: usize,
    pub num_items: usize,
    /// Sorted ascending, deduplicated, indexed by user id.
    pub train_pos: Vec<Vec<usize>>,
    pub test_pos: Vec<Vec<usize>>,
    pub val_pos: Vec<Vec<usize>>,
}

impl InteractionSet {
    pub fn num_train(&self) -> usize {
        self.train_pos.iter().map(Vec::len).sum()
    }

    pub fn num_test(&self) -> usize {
        self.test_pos.iter().map(Vec::len).sum()
    }

    pub fn num_val(&self) -> usize {
        self.val_pos.iter().map(Vec::len).sum()
    }

    pub fn total_interactions(&self) -> usize {
        self.num_train() + self.num_test() + self.num_val()
    }
}

/// Deduplicated (head, relation, tail) facts in file order.
#[derive(Clone, Debug, Default)]
pub struct KnowledgeTriples {
    pub triples: Vec<(usize, usize, usize)>,
    pub num_entities: usize,
    pub num_relations: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NodeKind {
    User,
    ItemEntity,
    Entity,
}

/// Unified graph over entities and users, CSR by head node.
#[derive(Clone, Debug, PartialEq)]
pub struct CollaborativeKG {
    pub num_users: usize,
    pub num_items: usize,
    /// Entity count including the item range.
    pub num_entities: usize,
    /// Original KG relation count R (before Interact and inverses).
    pub num_base_relations: usize,
    pub num_nodes: usize,
    /// 2R + 2: originals, Interact, inverses, inverse-Interact.
    pub num_ckg_relations: usize,
    pub csr_offsets: Vec<usize>,
    pub edge_tails: Vec<usize>,
    pub edge_relations: Vec<usize>,
    pub node_kind: Vec<NodeKind>,
}

impl CollaborativeKG {
    pub fn num_edges(&self) -> usize {
        self.edge_tails.len()
    }

    pub fn interact_relation(&self) -> usize {
        self.num_base_relations
    }

    pub fn user_node(&self, user: usize) -> usize {
        assert!(user < self.num_users, "user id {user} out of range");
        self.num_entities + user
    }

    /// Involution pairing each relation with its reversed direction.
    pub fn inverse_relation(&self, r: usize) -> usize {
        let base = self.num_base_relations;
        match r {
            _ if r < base => base + 1 + r,
            _ if r == base => 2 * base + 1,
            _ if r < 2 * base + 1 => r - base - 1,
            _ if r == 2 * base + 1 => base,
            _ => panic!("relation id {r} out of range"),
        }
    }

    /// Edge-index range of h's CSR segment.
    pub fn segment(&self, h: usize) -> std::ops::Range<usize> {
        assert!(h < self.num_nodes, "node id {h} out of range");
        self.csr_offsets[h]..self.csr_offsets[h + 1]
    }

    /// Head node of edge `e`, recovered from the CSR offsets.
    pub fn edge_head(&self, e: usize) -> usize {
        assert!(e < self.num_edges(), "edge index {e} out of range");
        self.csr_offsets.partition_point(|&o| o <= e) - 1
    }

    /// The triplets with h as head: (relation, tail) pairs in storage order.
    pub fn ego_network(&self, h: usize) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.segment(h)
            .map(move |e| (self.edge_relations[e], self.edge_tails[e]))
    }

    pub fn degree(&self, h: usize) -> usize {
        self.segment(h).len()
    }

    /// Writes all edges as `h r t` lines in CSR order.
    pub fn write_edges<W: Write>(&self, mut w: W) -> io::Result<()> {
        for h in 0..self.num_nodes {
            for e in self.segment(h) {
                writeln!(w, "{} {} {}", h, self.edge_relations[e], self.edge_tails[e])?;
            }
        }
        Ok(())
    }

    /// Rebuilds a graph from edge lines produced by [`Self::write_edges`]
    /// (inverses are already present in the list, so none are added).
    pub fn from_edges<R: BufRead>(
        r: R,
        source: &str,
        num_users: usize,
        num_items: usize,
        num_entities: usize,
        num_base_relations: usize,
    ) -> Result<Self, DataError> {
        let mut edges = Vec::new();
        for (lineno, line) in r.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let ids = parse_id_line(source, lineno + 1, &line)?;
            if ids.len() != 3 {
                return Err(DataError::Parse {
                    path: source.to_string(),
                    line: lineno + 1,
                    msg: format!("expected 3 fields, got {}", ids.len()),
                });
            }
            edges.push((ids[0], ids[1], ids[2]));
        }
        Ok(assemble(
            num_users,
            num_items,
            num_entities,
            num_base_relations,
            edges,
        ))
    }
}

fn parse_id_line(path: &str, line: usize, text: &str) -> Result<Vec<usize>, DataError> {
    text.split_ascii_whitespace()
        .map(|tok| {
            tok.parse::<usize>().map_err(|_| DataError::Parse {
                path: path.to_string(),
                line,
                msg: format!("invalid integer '{tok}'"),
            })
        })
        .collect()
}

fn read_user_lines(
    path: &Path,
    num_users: &mut usize,
    num_items: &mut usize,
    per_user: &mut Vec<Vec<usize>>,
) -> Result<(), DataError> {
    let name = path.display().to_string();
    let file = BufReader::new(File::open(path)?);
    for (lineno, line) in file.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let ids = parse_id_line(&name, lineno + 1, &line)?;
        let user = ids[0];
        *num_users = (*num_users).max(user + 1);
        if per_user.len() <= user {
            per_user.resize(user + 1, Vec::new());
        }
        for &item in &ids[1..] {
            *num_items = (*num_items).max(item + 1);
            per_user[user].push(item);
        }
    }
    Ok(())
}

fn sort_dedup(lists: &mut [Vec<usize>]) {
    for l in lists {
        l.sort_unstable();
        l.dedup();
    }
}

fn disjoint(a: &[usize], b: &[usize]) -> bool {
    // Both sorted ascending.
    let (mut i, mut j) = (0, 0);
    while i < a.len() && j < b.len() {
        match a[i].cmp(&b[j]) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => return false,
        }
    }
    true
}

/// Loads `user item item ...` interaction files. Lists come out sorted and
/// deduplicated; id spaces cover the maximum id seen across all files.
pub fn load_interactions(
    train_path: &Path,
    test_path: &Path,
    val_path: Option<&Path>,
) -> Result<InteractionSet, DataError> {
    let (mut num_users, mut num_items) = (0, 0);
    let (mut train, mut test, mut val) = (Vec::new(), Vec::new(), Vec::new());
    read_user_lines(train_path, &mut num_users, &mut num_items, &mut train)?;
    read_user_lines(test_path, &mut num_users, &mut num_items, &mut test)?;
    if let Some(vp) = val_path {
        read_user_lines(vp, &mut num_users, &mut num_items, &mut val)?;
    }
    train.resize(num_users, Vec::new());
    test.resize(num_users, Vec::new());
    val.resize(num_users, Vec::new());
    sort_dedup(&mut train);
    sort_dedup(&mut test);
    sort_dedup(&mut val);

    for u in 0..num_users {
        if !test[u].is_empty() && train[u].is_empty() {
            return Err(DataError::Validation(format!(
                "user {u} has test interactions but no train interactions"
            )));
        }
        if !disjoint(&train[u], &test[u]) {
            return Err(DataError::Validation(format!(
                "user {u} has overlapping train and test items"
            )));
        }
        if !disjoint(&train[u], &val[u]) || !disjoint(&test[u], &val[u]) {
            return Err(DataError::Validation(format!(
                "user {u} has validation items overlapping another split"
            )));
        }
    }

    Ok(InteractionSet {
        num_users,
        num_items,
        train_pos: train,
        test_pos: test,
        val_pos: val,
    })
}

/// Loads `h r t` triple lines, deduplicating while preserving first-seen
/// order. Entity/relation counts are 1 + the maximum id observed.
pub fn load_kg(path: &Path) -> Result<KnowledgeTriples, DataError> {
    let name = path.display().to_string();
    let file = BufReader::new(File::open(path)?);
    let mut seen = std::collections::HashSet::new();
    let mut triples = Vec::new();
    let (mut num_entities, mut num_relations) = (0, 0);
    for (lineno, line) in file.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let ids = parse_id_line(&name, lineno + 1, &line)?;
        if ids.len() != 3 {
            return Err(DataError::Parse {
                path: name,
                line: lineno + 1,
                msg: format!("expected 'head relation tail', got {} fields", ids.len()),
            });
        }
        let (h, r, t) = (ids[0], ids[1], ids[2]);
        num_entities = num_entities.max(h + 1).max(t + 1);
        num_relations = num_relations.max(r + 1);
        if seen.insert((h, r, t)) {
            triples.push((h, r, t));
        }
    }
    Ok(KnowledgeTriples {
        triples,
        num_entities,
        num_relations,
    })
}

/// Merges interactions and triples into the unified graph. Every triple and
/// every train interaction contributes a forward and an inverse edge.
pub fn build_ckg(inter: &InteractionSet, kg: &KnowledgeTriples) -> CollaborativeKG {
    // Items must have entity slots even if the KG never mentions them.
    let num_entities = kg.num_entities.max(inter.num_items);
    let base = kg.num_relations;
    let interact = base;
    let inv_interact = 2 * base + 1;

    let mut edges = Vec::with_capacity(2 * (kg.triples.len() + inter.num_train()));
    for &(h, r, t) in &kg.triples {
        edges.push((h, r, t));
        edges.push((t, base + 1 + r, h));
    }
    for (u, items) in inter.train_pos.iter().enumerate() {
        let u_node = num_entities + u;
        for &i in items {
            edges.push((u_node, interact, i));
            edges.push((i, inv_interact, u_node));
        }
    }
    assemble(inter.num_users, inter.num_items, num_entities, base, edges)
}

/// Stable counting sort of edges by head into CSR arrays.
fn assemble(
    num_users: usize,
    num_items: usize,
    num_entities: usize,
    num_base_relations: usize,
    edges: Vec<(usize, usize, usize)>,
) -> CollaborativeKG {
    let num_nodes = num_entities + num_users;
    let mut csr_offsets = vec![0usize; num_nodes + 1];
    for &(h, _, _) in &edges {
        assert!(h < num_nodes, "edge head {h} out of node range");
        csr_offsets[h + 1] += 1;
    }
    for i in 0..num_nodes {
        csr_offsets[i + 1] += csr_offsets[i];
    }
    let mut cursor = csr_offsets.clone();
    let mut edge_tails = vec![0usize; edges.len()];
    let mut edge_relations = vec![0usize; edges.len()];
    for (h, r, t) in edges {
        assert!(t < num_nodes, "edge tail {t} out of node range");
        let pos = cursor[h];
        cursor[h] += 1;
        edge_tails[pos] = t;
        edge_relations[pos] = r;
    }

    let node_kind = (0..num_nodes)
        .map(|n| {
            if n < num_items {
                NodeKind::ItemEntity
            } else if n < num_entities {
                NodeKind::Entity
            } else {
                NodeKind::User
            }
        })
        .collect();

    CollaborativeKG {
        num_users,
        num_items,
        num_entities,
        num_base_relations,
        num_nodes,
        num_ckg_relations: 2 * num_base_relations + 2,
        csr_offsets,
        edge_tails,
        edge_relations,
        node_kind,
    }
}

/// Counts reported by the `stats` command, matching the dataset-table
/// convention: interactions across all splits, entities including items.
#[derive(Debug, PartialEq, Eq, serde::Serialize)]
pub struct DatasetStats {
    pub users: usize,
    pub items: usize,
    pub interactions: usize,
    pub entities: usize,
    pub relations: usize,
    pub triples: usize,
}

pub fn dataset_stats(inter: &InteractionSet, kg: &KnowledgeTriples) -> DatasetStats {
    DatasetStats {
        users: inter.num_users,
        items: inter.num_items,
        interactions: inter.total_interactions(),
        entities: kg.num_entities.max(inter.num_items),
        relations: kg.num_relations,
        triples: kg.triples.len(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Cursor;

    fn write_tmp(dir: &tempfile::TempDir, name: &str, content: &str) -> std::path::PathBuf {
        let p = dir.path().join(name);
        std::fs::write(&p, content).unwrap();
        p
    }

    #[test]
    fn interactions_dedup_and_sort() {
        let dir = tempfile::tempdir().unwrap();
        let train = write_tmp(&dir, "train.txt", "0 12 7 12\n");
        let test = write_tmp(&dir, "test.txt", "0 3\n");
        let inter = load_interactions(&train, &test, None).unwrap();
        assert_eq!(inter.train_pos[0], vec![7, 12]);
        assert_eq!(inter.num_users, 1);
        assert_eq!(inter.num_items, 13);
    }

    #[test]
    fn empty_interaction_files() {
        let dir = tempfile::tempdir().unwrap();
        let train = write_tmp(&dir, "train.txt", "");
        let test = write_tmp(&dir, "test.txt", "");
        let inter = load_interactions(&train, &test, None).unwrap();
        assert_eq!(inter.num_users, 0);
        assert_eq!(inter.total_interactions(), 0);
    }

    #[test]
    fn malformed_line_reports_line_number() {
        let dir = tempfile::tempdir().unwrap();
        let train = write_tmp(&dir, "train.txt", "0 1\n0 x\n");
        let test = write_tmp(&dir, "test.txt", "");
        let err = load_interactions(&train, &test, None).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains(":2:"), "missing line number: {msg}");
        assert!(msg.contains('x'));
    }

    #[test]
    fn test_only_user_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let train = write_tmp(&dir, "train.txt", "0 1\n");
        let test = write_tmp(&dir, "test.txt", "1 2\n");
        let err = load_interactions(&train, &test, None).unwrap_err();
        assert!(matches!(err, DataError::Validation(_)));
    }

    #[test]
    fn overlapping_splits_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let train = write_tmp(&dir, "train.txt", "0 1 2\n");
        let test = write_tmp(&dir, "test.txt", "0 2\n");
        assert!(load_interactions(&train, &test, None).is_err());
    }

    #[test]
    fn kg_triples_deduplicate() {
        let dir = tempfile::tempdir().unwrap();
        let kgf = write_tmp(&dir, "kg_final.txt", "3 0 5\n3 0 5\n");
        let kg = load_kg(&kgf).unwrap();
        assert_eq!(kg.triples, vec![(3, 0, 5)]);
        assert_eq!(kg.num_entities, 6);
        assert_eq!(kg.num_relations, 1);
    }

    fn toy_inter(num_items: usize, train: Vec<Vec<usize>>) -> InteractionSet {
        let n = train.len();
        InteractionSet {
            num_users: n,
            num_items,
            train_pos: train,
            test_pos: vec![Vec::new(); n],
            val_pos: vec![Vec::new(); n],
        }
    }

    #[test]
    fn smallest_graph() {
        let inter = toy_inter(1, vec![vec![0]]);
        let kg = KnowledgeTriples::default();
        let g = build_ckg(&inter, &kg);
        assert_eq!(g.num_nodes, 2);
        assert_eq!(g.num_edges(), 2);
        assert_eq!(g.num_ckg_relations, 2);
        // Interact is relation 0 here (no base relations), inverse is 1.
        assert_eq!(g.ego_network(1).collect::<Vec<_>>(), vec![(0, 0)]);
        assert_eq!(g.ego_network(0).collect::<Vec<_>>(), vec![(1, 1)]);
    }

    #[test]
    fn one_triple_one_interaction() {
        // Triple (i0, r0, e1) plus interaction (u0, i0).
        let inter = toy_inter(1, vec![vec![0]]);
        let kg = KnowledgeTriples {
            triples: vec![(0, 0, 1)],
            num_entities: 2,
            num_relations: 1,
        };
        let g = build_ckg(&inter, &kg);
        assert_eq!(g.num_nodes, 3);
        assert_eq!(g.num_edges(), 4);
        assert_eq!(g.num_ckg_relations, 4);
        // Item 0's ego-network: the KG edge first, then the inverse-Interact
        // edge from the training interaction.
        let ego: Vec<_> = g.ego_network(0).collect();
        assert_eq!(ego, vec![(0, 1), (3, 2)]);
        assert_eq!(g.interact_relation(), 1);
    }

    #[test]
    fn movie_toy_graph_counts() {
        // 5 users, 4 movies, a director e4 and an actor e5 (entity ids after
        // the items). 7 interactions and 5 triples, hand-counted below.
        let inter = toy_inter(
            4,
            vec![vec![0, 1], vec![1], vec![2, 3], vec![0], vec![0]],
        );
        let kg = KnowledgeTriples {
            triples: vec![(0, 0, 4), (1, 0, 4), (3, 0, 4), (1, 1, 5), (2, 1, 5)],
            num_entities: 6,
            num_relations: 2,
        };
        let g = build_ckg(&inter, &kg);
        assert_eq!(g.num_nodes, 6 + 5);
        assert_eq!(g.num_edges(), 2 * (5 + 7));
        assert_eq!(g.num_ckg_relations, 2 * 2 + 2);
        // Degree conservation against the source counts.
        let total: usize = (0..g.num_nodes).map(|n| g.degree(n)).sum();
        assert_eq!(total, g.num_edges());
        // The director participates in 3 triples, all as tail.
        assert_eq!(g.degree(4), 3);
        assert!(g.ego_network(4).all(|(r, _)| r == g.inverse_relation(0)));
    }

    #[test]
    fn edge_head_inverts_csr() {
        let inter = toy_inter(2, vec![vec![0, 1], vec![1]]);
        let kg = KnowledgeTriples {
            triples: vec![(0, 0, 2), (1, 0, 2)],
            num_entities: 3,
            num_relations: 1,
        };
        let g = build_ckg(&inter, &kg);
        for h in 0..g.num_nodes {
            for e in g.segment(h) {
                assert_eq!(g.edge_head(e), h);
            }
        }
    }

    #[test]
    fn inverse_relation_is_involution() {
        let inter = toy_inter(1, vec![vec![0]]);
        let kg = KnowledgeTriples {
            triples: vec![(0, 0, 1), (1, 1, 2), (2, 2, 0)],
            num_entities: 3,
            num_relations: 3,
        };
        let g = build_ckg(&inter, &kg);
        for r in 0..g.num_ckg_relations {
            assert_eq!(g.inverse_relation(g.inverse_relation(r)), r);
        }
    }

    #[test]
    fn inverse_closure_holds() {
        let inter = toy_inter(2, vec![vec![0, 1], vec![1]]);
        let kg = KnowledgeTriples {
            triples: vec![(0, 0, 2), (1, 0, 2), (2, 1, 3)],
            num_entities: 4,
            num_relations: 2,
        };
        let g = build_ckg(&inter, &kg);
        let mut edge_set = std::collections::HashSet::new();
        for h in 0..g.num_nodes {
            for (r, t) in g.ego_network(h) {
                edge_set.insert((h, r, t));
            }
        }
        assert_eq!(edge_set.len(), g.num_edges(), "duplicate edges");
        for &(h, r, t) in &edge_set {
            assert!(
                edge_set.contains(&(t, g.inverse_relation(r), h)),
                "missing inverse of ({h},{r},{t})"
            );
        }
    }

    #[test]
    fn users_only_interact() {
        let inter = toy_inter(2, vec![vec![0], vec![0, 1]]);
        let kg = KnowledgeTriples {
            triples: vec![(0, 0, 2)],
            num_entities: 3,
            num_relations: 1,
        };
        let g = build_ckg(&inter, &kg);
        for u in 0..g.num_users {
            let node = g.user_node(u);
            assert_eq!(g.node_kind[node], NodeKind::User);
            for (r, t) in g.ego_network(node) {
                assert_eq!(r, g.interact_relation());
                assert_eq!(g.node_kind[t], NodeKind::ItemEntity);
            }
        }
    }

    #[test]
    fn isolated_node_has_empty_ego_network() {
        let inter = toy_inter(1, vec![vec![0]]);
        let kg = KnowledgeTriples {
            triples: vec![],
            num_entities: 3, // entity 1 and 2 never appear in any edge
            num_relations: 0,
        };
        let g = build_ckg(&inter, &kg);
        assert_eq!(g.ego_network(1).count(), 0);
        assert_eq!(g.ego_network(2).count(), 0);
    }

    #[test]
    fn edge_list_round_trip() {
        let inter = toy_inter(3, vec![vec![0, 2], vec![1], vec![2]]);
        let kg = KnowledgeTriples {
            triples: vec![(0, 0, 3), (1, 1, 4), (2, 0, 4)],
            num_entities: 5,
            num_relations: 2,
        };
        let g = build_ckg(&inter, &kg);
        let mut buf = Vec::new();
        g.write_edges(&mut buf).unwrap();
        let g2 = CollaborativeKG::from_edges(
            Cursor::new(buf),
            "roundtrip",
            g.num_users,
            g.num_items,
            g.num_entities,
            g.num_base_relations,
        )
        .unwrap();
        assert_eq!(g, g2);
    }

    #[test]
    fn stats_counts_all_splits() {
        let inter = InteractionSet {
            num_users: 2,
            num_items: 3,
            train_pos: vec![vec![0, 1], vec![2]],
            test_pos: vec![vec![2], vec![]],
            val_pos: vec![vec![], vec![0]],
        };
        let kg = KnowledgeTriples {
            triples: vec![(0, 0, 4)],
            num_entities: 5,
            num_relations: 1,
        };
        let s = dataset_stats(&inter, &kg);
        assert_eq!(s.interactions, 5);
        assert_eq!(s.entities, 5);
        assert_eq!(s.users, 2);
    }
}
