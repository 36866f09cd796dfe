//! Builds the collaborative graph from a handful of interactions and
//! knowledge triples, then walks it.
//!
//! Run with: cargo run --example build_graph

use kgat::ckg::{build_ckg, InteractionSet, KnowledgeTriples, NodeKind};

fn main() {
    // Two users, three items (entity ids 0..3), one extra entity (3, say a
    // shared director), one base relation.
    let inter = InteractionSet {
        num_users: 2,
        num_items: 3,
        train_pos: vec![vec![0, 1], vec![1, 2]],
        test_pos: vec![vec![2], vec![0]],
        val_pos: vec![],
    };
    let kg = KnowledgeTriples {
        triples: vec![(0, 0, 3), (2, 0, 3)],
        num_entities: 4,
        num_relations: 1,
    };

    let g = build_ckg(&inter, &kg);
    println!(
        "{} nodes ({} items, {} other entities, {} users), {} directed edges",
        g.num_nodes,
        g.num_items,
        g.num_entities - g.num_items,
        g.num_users,
        g.num_edges()
    );
    println!(
        "{} relations: {} base + interact + {} inverses",
        g.num_ckg_relations,
        g.num_base_relations,
        g.num_base_relations + 1
    );

    // Every triple and every interaction appears twice: once as stored and
    // once inverted, so propagation reaches both endpoints.
    let name = |r: usize| -> String {
        if r == g.interact_relation() {
            "interact".to_string()
        } else if r < g.num_base_relations {
            format!("r{r}")
        } else if r == g.inverse_relation(g.interact_relation()) {
            "interact^-1".to_string()
        } else {
            format!("r{}^-1", r - g.num_base_relations - 1)
        }
    };

    for h in 0..g.num_nodes {
        let kind = match g.node_kind[h] {
            NodeKind::ItemEntity => "item",
            NodeKind::Entity => "entity",
            NodeKind::User => "user",
        };
        print!("{kind} {h}:");
        for (r, t) in g.ego_network(h) {
            print!("  -[{}]-> {t}", name(r));
        }
        println!();
    }

    // The CSR layout keeps each node's incoming edges contiguous, which is
    // what the attention softmax normalizes over.
    let user0 = g.user_node(0);
    println!(
        "user 0 is node {user0} with degree {} (its consumed items)",
        g.degree(user0)
    );
}
