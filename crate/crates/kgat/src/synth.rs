//! Seeded synthetic dataset generation.
//!
//! Users, items, and extra entities are spread over a small number of
//! clusters; users mostly consume items of their own cluster and items
//! mostly link to attribute entities of their cluster, so the generated
//! data carries learnable structure instead of pure noise.

use std::collections::HashSet;
use std::io::{self, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::ckg::{InteractionSet, KnowledgeTriples};

#[derive(Clone, Debug)]
pub struct SynthConfig {
    pub num_users: usize,
    pub num_items: usize,
    /// Total entities including the items (which occupy ids 0..num_items).
    pub num_entities: usize,
    pub num_relations: usize,
    pub interactions_per_user: usize,
    pub triples_per_item: usize,
    pub clusters: usize,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            num_users: 50,
            num_items: 40,
            num_entities: 60,
            num_relations: 4,
            interactions_per_user: 12,
            triples_per_item: 3,
            clusters: 4,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.num_users == 0 || self.num_items == 0 {
            return Err("need at least one user and one item".to_string());
        }
        if self.num_entities < self.num_items {
            return Err(format!(
                "num_entities ({}) must cover the items ({})",
                self.num_entities, self.num_items
            ));
        }
        if self.num_relations == 0 && self.triples_per_item > 0 {
            return Err("triples need at least one relation".to_string());
        }
        if self.interactions_per_user == 0 {
            return Err("interactions_per_user must be at least 1".to_string());
        }
        if self.clusters == 0 {
            return Err("clusters must be at least 1".to_string());
        }
        Ok(())
    }
}

/// Unsplit interactions plus triples, ready for `write_files` or splitting.
#[derive(Clone, Debug, PartialEq)]
pub struct SynthDataset {
    pub num_users: usize,
    pub num_items: usize,
    pub num_entities: usize,
    pub num_relations: usize,
    /// Per-user consumed items, sorted ascending.
    pub interactions: Vec<Vec<usize>>,
    pub triples: Vec<(usize, usize, usize)>,
}

const IN_CLUSTER_BIAS: f64 = 0.8;

pub fn generate(config: &SynthConfig) -> SynthDataset {
    config.validate().expect("invalid synthesis configuration");
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let clusters = config.clusters.min(config.num_items);
    let per_user = config.interactions_per_user.min(config.num_items);

    // Items of cluster c are { i | i % clusters == c }.
    let cluster_size = |c: usize| -> usize {
        config.num_items / clusters + usize::from(c < config.num_items % clusters)
    };
    let draw_item = |rng: &mut ChaCha8Rng, cluster: usize| -> usize {
        if rng.random_bool(IN_CLUSTER_BIAS) && cluster_size(cluster) > 0 {
            cluster + clusters * rng.random_range(0..cluster_size(cluster))
        } else {
            rng.random_range(0..config.num_items)
        }
    };

    let mut interactions = Vec::with_capacity(config.num_users);
    for u in 0..config.num_users {
        let own = u % clusters;
        let mut chosen = HashSet::new();
        while chosen.len() < per_user {
            chosen.insert(draw_item(&mut rng, own));
        }
        let mut items: Vec<usize> = chosen.into_iter().collect();
        items.sort_unstable();
        interactions.push(items);
    }

    // Attribute triples: each item links to extra entities, biased toward
    // the entities of its own cluster. Without extra entities fall back to
    // item-to-item links.
    let extra = config.num_entities - config.num_items;
    let mut triples = Vec::new();
    let mut seen = HashSet::new();
    for item in 0..config.num_items {
        let own = item % clusters;
        let mut produced = 0;
        let mut attempts = 0;
        while produced < config.triples_per_item && attempts < 20 * config.triples_per_item.max(1)
        {
            attempts += 1;
            let r = rng.random_range(0..config.num_relations);
            let tail = if extra > 0 {
                let in_cluster = rng.random_bool(IN_CLUSTER_BIAS);
                let offset = if in_cluster && extra >= clusters {
                    let per = extra / clusters + usize::from(own < extra % clusters);
                    own + clusters * rng.random_range(0..per.max(1))
                } else {
                    rng.random_range(0..extra)
                };
                config.num_items + offset.min(extra - 1)
            } else {
                rng.random_range(0..config.num_items)
            };
            if tail == item {
                continue;
            }
            if seen.insert((item, r, tail)) {
                triples.push((item, r, tail));
                produced += 1;
            }
        }
    }

    SynthDataset {
        num_users: config.num_users,
        num_items: config.num_items,
        num_entities: config.num_entities,
        num_relations: config.num_relations,
        interactions,
        triples,
    }
}

impl SynthDataset {
    /// Writes `interactions.txt` (`user item item ...` per user) and
    /// `kg_final.txt` (`h r t` per triple) into `dir`.
    pub fn write_files(&self, dir: &Path) -> io::Result<()> {
        std::fs::create_dir_all(dir)?;
        let mut inter = Vec::new();
        self.write_interactions(&mut inter)?;
        std::fs::write(dir.join("interactions.txt"), inter)?;
        let mut kg = Vec::new();
        self.write_triples(&mut kg)?;
        std::fs::write(dir.join("kg_final.txt"), kg)?;
        Ok(())
    }

    pub fn write_interactions<W: Write>(&self, mut w: W) -> io::Result<()> {
        for (u, items) in self.interactions.iter().enumerate() {
            write!(w, "{u}")?;
            for i in items {
                write!(w, " {i}")?;
            }
            writeln!(w)?;
        }
        Ok(())
    }

    pub fn write_triples<W: Write>(&self, mut w: W) -> io::Result<()> {
        for (h, r, t) in &self.triples {
            writeln!(w, "{h} {r} {t}")?;
        }
        Ok(())
    }

    pub fn num_interactions(&self) -> usize {
        self.interactions.iter().map(Vec::len).sum()
    }
}

/// Fixed tiny instance for memorization tests: 4 users, 6 items, 4 extra
/// entities, 2 relations. Every item has train interactions and every
/// extra entity touches two items, so one propagation layer reaches all
/// parameters.
pub fn memorization_fixture() -> (InteractionSet, KnowledgeTriples) {
    let inter = InteractionSet {
        num_users: 4,
        num_items: 6,
        train_pos: vec![vec![0, 1], vec![2, 3], vec![4, 5], vec![0, 5]],
        test_pos: vec![vec![], vec![], vec![], vec![]],
        val_pos: vec![],
    };
    let kg = KnowledgeTriples {
        triples: vec![
            (0, 0, 6),
            (1, 0, 6),
            (2, 0, 7),
            (3, 1, 7),
            (4, 1, 8),
            (5, 0, 8),
            (2, 1, 9),
            (4, 0, 9),
        ],
        num_entities: 10,
        num_relations: 2,
    };
    (inter, kg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ckg::build_ckg;

    #[test]
    fn generation_is_deterministic() {
        let config = SynthConfig::default();
        let a = generate(&config);
        let b = generate(&config);
        assert_eq!(a, b);

        let mut bytes_a = Vec::new();
        a.write_interactions(&mut bytes_a).unwrap();
        let mut bytes_b = Vec::new();
        b.write_interactions(&mut bytes_b).unwrap();
        assert_eq!(bytes_a, bytes_b);

        let different = generate(&SynthConfig { seed: 1, ..config });
        assert_ne!(a, different);
    }

    #[test]
    fn generated_ids_are_in_range() {
        let config = SynthConfig {
            num_users: 17,
            num_items: 13,
            num_entities: 20,
            num_relations: 3,
            interactions_per_user: 5,
            triples_per_item: 4,
            clusters: 3,
            seed: 9,
        };
        let data = generate(&config);
        assert_eq!(data.interactions.len(), 17);
        for items in &data.interactions {
            assert_eq!(items.len(), 5);
            assert!(items.windows(2).all(|w| w[0] < w[1]), "sorted, distinct");
            assert!(items.iter().all(|&i| i < 13));
        }
        assert!(!data.triples.is_empty());
        let mut seen = HashSet::new();
        for &(h, r, t) in &data.triples {
            assert!(h < 13, "triple heads are items");
            assert!(r < 3);
            assert!(t < 20);
            assert_ne!(h, t);
            assert!(seen.insert((h, r, t)), "no duplicate triples");
        }
    }

    #[test]
    fn interactions_cap_at_the_item_count() {
        let config = SynthConfig {
            num_users: 3,
            num_items: 4,
            num_entities: 4,
            num_relations: 1,
            interactions_per_user: 100,
            triples_per_item: 1,
            clusters: 2,
            seed: 0,
        };
        let data = generate(&config);
        for items in &data.interactions {
            assert_eq!(items, &vec![0, 1, 2, 3]);
        }
        // No extra entities: triples fall back to item-item links.
        assert!(data.triples.iter().all(|&(h, _, t)| h < 4 && t < 4 && h != t));
    }

    #[test]
    fn fixture_builds_the_expected_graph() {
        let (inter, kg) = memorization_fixture();
        assert_eq!(inter.num_train(), 8);
        assert_eq!(kg.triples.len(), 8);
        let g = build_ckg(&inter, &kg);
        assert_eq!(g.num_nodes, 14);
        assert_eq!(g.num_edges(), 32);
        assert_eq!(g.num_ckg_relations, 6);
        // Every item is reachable from some user and carries an attribute.
        for item in 0..6 {
            assert!(g.degree(item) >= 2);
        }
    }
}
