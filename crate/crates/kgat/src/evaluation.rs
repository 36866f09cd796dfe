//! Full-ranking top-K evaluation and sparsity-group analysis.
//!
//! Every evaluated user is scored against all items, train positives are
//! masked to negative infinity, and the top K survive. Ties always break
//! toward the smaller item id so rankings are total orders.

use rayon::prelude::*;

use crate::ckg::{CollaborativeKG, DataError, InteractionSet};
use crate::model::LayerRepresentations;
use crate::propagation::scores_for_user;

/// Top-K list for one user.
#[derive(Clone, Debug, PartialEq)]
pub struct RankedUser {
    pub user: usize,
    pub items: Vec<usize>,
    pub scores: Vec<f64>,
}

/// Rankings for all evaluated users, ascending by user id.
#[derive(Clone, Debug, PartialEq)]
pub struct RankingResult {
    pub k: usize,
    pub users: Vec<RankedUser>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct UserMetrics {
    pub user: usize,
    pub recall: f64,
    pub ndcg: f64,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, serde::Serialize)]
pub struct MetricSummary {
    pub recall: f64,
    pub ndcg: f64,
    pub users: usize,
}

/// Sorts `scores` descending (ties toward smaller id) and returns the top
/// `k` (item, score) columns. Masked items are removed from the ranking
/// entirely, so the result is shorter than `k` when too few items remain.
pub fn rank_scored(mut scores: Vec<f64>, mask: &[usize], k: usize) -> (Vec<usize>, Vec<f64>) {
    for &m in mask {
        scores[m] = f64::NEG_INFINITY;
    }
    let mut ids: Vec<usize> = (0..scores.len())
        .filter(|&i| scores[i] != f64::NEG_INFINITY)
        .collect();
    let k = k.min(ids.len());
    let better = |a: &usize, b: &usize| {
        scores[*b]
            .total_cmp(&scores[*a])
            .then_with(|| a.cmp(b))
    };
    if ids.len() > 4 * k && k > 0 {
        ids.select_nth_unstable_by(k - 1, better);
        ids.truncate(k);
    }
    ids.sort_unstable_by(better);
    ids.truncate(k);
    let top_scores = ids.iter().map(|&i| scores[i]).collect();
    (ids, top_scores)
}

/// Ranks every user that has at least one positive in `eval_pos`, scoring
/// all items from the final representations and masking `mask_pos[u]`.
pub fn rank_users_against(
    reps: &LayerRepresentations,
    g: &CollaborativeKG,
    mask_pos: &[Vec<usize>],
    eval_pos: &[Vec<usize>],
    k: usize,
) -> RankingResult {
    assert!(k >= 1, "K must be at least 1");
    let evaluated: Vec<usize> = (0..g.num_users)
        .filter(|&u| !eval_pos[u].is_empty())
        .collect();
    let users: Vec<RankedUser> = evaluated
        .par_iter()
        .map(|&u| {
            let scores = scores_for_user(reps, g.user_node(u), g.num_items);
            let (items, scores) = rank_scored(scores, &mask_pos[u], k);
            RankedUser { user: u, items, scores }
        })
        .collect();
    RankingResult { k, users }
}

/// The standard protocol: mask train positives, evaluate against test.
pub fn rank_users(
    reps: &LayerRepresentations,
    g: &CollaborativeKG,
    inter: &InteractionSet,
    k: usize,
) -> RankingResult {
    rank_users_against(reps, g, &inter.train_pos, &inter.test_pos, k)
}

/// Fraction of the relevant set retrieved in the ranked list.
/// `relevant` must be sorted ascending.
pub fn recall_at_k(ranked: &[usize], relevant: &[usize]) -> f64 {
    if relevant.is_empty() {
        return 0.0;
    }
    let hits = ranked
        .iter()
        .filter(|i| relevant.binary_search(i).is_ok())
        .count();
    hits as f64 / relevant.len() as f64
}

/// Binary-relevance ndcg with the ideal DCG truncated at min(K, |relevant|).
/// `relevant` must be sorted ascending.
pub fn ndcg_at_k(ranked: &[usize], relevant: &[usize], k: usize) -> f64 {
    if relevant.is_empty() {
        return 0.0;
    }
    let gain = |position: usize| 1.0 / ((position + 1) as f64).log2();
    let dcg: f64 = ranked
        .iter()
        .take(k)
        .enumerate()
        .filter(|(_, i)| relevant.binary_search(i).is_ok())
        .map(|(p0, _)| gain(p0 + 1))
        .sum();
    let ideal: f64 = (1..=k.min(relevant.len())).map(gain).sum();
    dcg / ideal
}

/// Per-user recall and ndcg for a ranking, in the result's user order.
pub fn ranking_metrics(result: &RankingResult, eval_pos: &[Vec<usize>]) -> Vec<UserMetrics> {
    result
        .users
        .iter()
        .map(|r| UserMetrics {
            user: r.user,
            recall: recall_at_k(&r.items, &eval_pos[r.user]),
            ndcg: ndcg_at_k(&r.items, &eval_pos[r.user], result.k),
        })
        .collect()
}

/// Unweighted mean over the evaluated users.
pub fn mean_metrics(per_user: &[UserMetrics]) -> MetricSummary {
    if per_user.is_empty() {
        return MetricSummary::default();
    }
    let n = per_user.len() as f64;
    MetricSummary {
        recall: per_user.iter().map(|m| m.recall).sum::<f64>() / n,
        ndcg: per_user.iter().map(|m| m.ndcg).sum::<f64>() / n,
        users: per_user.len(),
    }
}

/// Convenience composition: rank against test, return the overall means.
pub fn evaluate(
    reps: &LayerRepresentations,
    g: &CollaborativeKG,
    inter: &InteractionSet,
    k: usize,
) -> MetricSummary {
    let result = rank_users(reps, g, inter, k);
    mean_metrics(&ranking_metrics(&result, &inter.test_pos))
}

/// Users with at least one test positive, grouped by ascending train
/// interaction count into `num_groups` contiguous groups of roughly equal
/// total interactions.
#[derive(Clone, Debug, PartialEq)]
pub struct SparsityGroup {
    /// Largest train interaction count in the group.
    pub threshold: usize,
    pub users: Vec<usize>,
    pub interactions: usize,
}

pub fn sparsity_groups(
    inter: &InteractionSet,
    num_groups: usize,
) -> Result<Vec<SparsityGroup>, DataError> {
    assert!(num_groups >= 2, "need at least two groups");
    let mut evaluated: Vec<usize> = (0..inter.num_users)
        .filter(|&u| !inter.test_pos[u].is_empty())
        .collect();
    if evaluated.len() < num_groups {
        return Err(DataError::Validation(format!(
            "{} evaluated users cannot fill {num_groups} sparsity groups",
            evaluated.len()
        )));
    }
    evaluated.sort_by_key(|&u| (inter.train_pos[u].len(), u));
    let total: usize = evaluated.iter().map(|&u| inter.train_pos[u].len()).sum();

    // Greedy prefix partition: close each group at the cumulative count
    // nearest its share boundary (g/num_groups of the total), leaving at
    // least one user for every remaining group.
    let mut groups = Vec::with_capacity(num_groups);
    let mut current: Vec<usize> = Vec::new();
    let mut current_sum = 0usize;
    let mut cum = 0usize;
    for (idx, &u) in evaluated.iter().enumerate() {
        let count = inter.train_pos[u].len();
        current.push(u);
        current_sum += count;
        cum += count;
        let users_left = evaluated.len() - idx - 1;
        let groups_left = num_groups - groups.len() - 1;
        if groups.len() < num_groups - 1 {
            let target = (groups.len() + 1) as f64 * total as f64 / num_groups as f64;
            let here = (cum as f64 - target).abs();
            let with_next = if users_left > 0 {
                let next = inter.train_pos[evaluated[idx + 1]].len();
                ((cum + next) as f64 - target).abs()
            } else {
                f64::INFINITY
            };
            if users_left == groups_left || here <= with_next {
                groups.push(SparsityGroup {
                    threshold: count,
                    users: std::mem::take(&mut current),
                    interactions: std::mem::replace(&mut current_sum, 0),
                });
            }
        }
    }
    let threshold = current
        .iter()
        .map(|&u| inter.train_pos[u].len())
        .max()
        .unwrap_or(0);
    groups.push(SparsityGroup {
        threshold,
        users: current,
        interactions: current_sum,
    });
    Ok(groups)
}

/// Mean metrics per sparsity group, matched by user id.
pub fn group_metrics(groups: &[SparsityGroup], per_user: &[UserMetrics]) -> Vec<MetricSummary> {
    let by_user: std::collections::HashMap<usize, &UserMetrics> =
        per_user.iter().map(|m| (m.user, m)).collect();
    groups
        .iter()
        .map(|grp| {
            let members: Vec<UserMetrics> = grp
                .users
                .iter()
                .filter_map(|u| by_user.get(u).map(|m| **m))
                .collect();
            mean_metrics(&members)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn masked_items_never_rank() {
        let (items, _) = rank_scored(vec![1.0, 9.0], &[1], 2);
        assert_eq!(items, vec![0]);
    }

    #[test]
    fn ties_rank_by_ascending_id() {
        let (items, scores) = rank_scored(vec![3.0; 5], &[], 3);
        assert_eq!(items, vec![0, 1, 2]);
        assert_eq!(scores, vec![3.0, 3.0, 3.0]);
    }

    #[test]
    fn selection_path_matches_full_sort() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        for trial in 0..50 {
            let n = 30;
            let scores: Vec<f64> = (0..n).map(|_| rng.random_range(-5.0..5.0)).collect();
            let mask: Vec<usize> = (0..n).filter(|_| rng.random_bool(0.2)).collect();
            let k = rng.random_range(1..8);

            // Oracle: full stable sort of (score, id) pairs.
            let mut masked = scores.clone();
            for &m in &mask {
                masked[m] = f64::NEG_INFINITY;
            }
            let mut order: Vec<usize> = (0..n).collect();
            order.sort_by(|a, b| masked[*b].total_cmp(&masked[*a]).then_with(|| a.cmp(b)));
            order.truncate(k);

            let (items, ranked_scores) = rank_scored(scores, &mask, k);
            assert_eq!(items, order, "trial {trial}");
            for w in ranked_scores.windows(2) {
                assert!(w[0] >= w[1], "scores must be nonincreasing");
            }
        }
    }

    #[test]
    fn recall_examples() {
        // test = {a, b} = {4, 7}, top-2 = [a, c] = [4, 9].
        assert_eq!(recall_at_k(&[4, 9], &[4, 7]), 0.5);
        assert_eq!(recall_at_k(&[4, 7, 9], &[4, 7]), 1.0);
        assert_eq!(recall_at_k(&[9, 10], &[4, 7]), 0.0);
        let per_user = [
            UserMetrics { user: 0, recall: 1.0, ndcg: 0.0 },
            UserMetrics { user: 1, recall: 0.5, ndcg: 0.0 },
            UserMetrics { user: 2, recall: 0.0, ndcg: 0.0 },
        ];
        assert_eq!(mean_metrics(&per_user).recall, 0.5);
    }

    #[test]
    fn ndcg_examples() {
        // Single relevant item at rank 1.
        assert_eq!(ndcg_at_k(&[3, 5], &[3], 2), 1.0);
        // Single relevant at rank 2 of K = 2: DCG = 1/log2(3), IDCG = 1.
        let got = ndcg_at_k(&[5, 3], &[3], 2);
        assert!((got - 0.6309297535714575).abs() < 1e-15);
        // No hits.
        assert_eq!(ndcg_at_k(&[5, 6], &[3], 2), 0.0);
        // All of the first min(K, |test|) ranks hit, K larger than test.
        assert_eq!(ndcg_at_k(&[3, 4, 9], &[3, 4], 3), 1.0);
        // Perfect prefix shorter than K stays 1 even with a miss after it.
        assert_eq!(ndcg_at_k(&[3, 4, 9, 11], &[3, 4], 4), 1.0);
    }

    #[test]
    fn metrics_are_rank_functions_of_scores() {
        // Any strictly increasing transform of the scores leaves the
        // ranking, and therefore both metrics, bit-identical.
        let mut rng = ChaCha8Rng::seed_from_u64(2025);
        for _ in 0..100 {
            let n = 25;
            let scores: Vec<f64> = (0..n).map(|_| rng.random_range(-3.0..3.0)).collect();
            let mask: Vec<usize> = (0..5).map(|_| rng.random_range(0..n)).collect();
            let relevant: Vec<usize> = {
                let mut r: Vec<usize> = (0..n).filter(|_| rng.random_bool(0.3)).collect();
                r.sort_unstable();
                r.dedup();
                r
            };
            let k = rng.random_range(1..10);
            let (a, b, c) = (
                rng.random_range(0.1..2.0),
                rng.random_range(0.1..2.0),
                rng.random_range(-1.0..1.0),
            );
            let monotone = |x: f64| a * x.atan() + b * x + c;
            let transformed: Vec<f64> = scores.iter().map(|&x| monotone(x)).collect();

            let (items1, _) = rank_scored(scores, &mask, k);
            let (items2, _) = rank_scored(transformed, &mask, k);
            assert_eq!(items1, items2);
            assert_eq!(
                recall_at_k(&items1, &relevant),
                recall_at_k(&items2, &relevant)
            );
            assert_eq!(
                ndcg_at_k(&items1, &relevant, k),
                ndcg_at_k(&items2, &relevant, k)
            );
        }
    }

    fn toy_inter(train: Vec<Vec<usize>>, test: Vec<Vec<usize>>) -> InteractionSet {
        InteractionSet {
            num_users: train.len(),
            num_items: 1 + train
                .iter()
                .chain(test.iter())
                .flatten()
                .copied()
                .max()
                .unwrap_or(0),
            train_pos: train,
            test_pos: test,
            val_pos: vec![],
        }
    }

    #[test]
    fn equal_counts_split_into_singleton_groups() {
        let inter = toy_inter(
            vec![vec![0], vec![1], vec![2], vec![3]],
            vec![vec![1], vec![2], vec![3], vec![0]],
        );
        let groups = sparsity_groups(&inter, 4).unwrap();
        assert_eq!(groups.len(), 4);
        for g in &groups {
            assert_eq!(g.users.len(), 1);
            assert_eq!(g.interactions, 1);
            assert_eq!(g.threshold, 1);
        }
    }

    #[test]
    fn prefix_partition_balances_totals() {
        // Counts [1, 1, 2, 4] into 2 groups: totals {4, 4}.
        let inter = toy_inter(
            vec![
                vec![0],
                vec![1],
                vec![0, 1],
                vec![0, 1, 2, 3],
            ],
            vec![vec![4], vec![4], vec![4], vec![4]],
        );
        let groups = sparsity_groups(&inter, 2).unwrap();
        assert_eq!(groups.len(), 2);
        assert_eq!(groups[0].interactions, 4);
        assert_eq!(groups[1].interactions, 4);
        assert_eq!(groups[0].users, vec![0, 1, 2]);
        assert_eq!(groups[1].users, vec![3]);
        assert_eq!(groups[0].threshold, 2);
        assert_eq!(groups[1].threshold, 4);
    }

    #[test]
    fn too_few_users_is_an_error() {
        let inter = toy_inter(vec![vec![0]], vec![vec![1]]);
        assert!(sparsity_groups(&inter, 2).is_err());
    }

    #[test]
    fn groups_cover_evaluated_users_with_balanced_totals() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..50 {
            let users = rng.random_range(8..40);
            let train: Vec<Vec<usize>> = (0..users)
                .map(|_| (0..rng.random_range(1..30)).collect())
                .collect();
            // Every user evaluated.
            let test: Vec<Vec<usize>> = (0..users).map(|_| vec![50]).collect();
            let inter = InteractionSet {
                num_users: users,
                num_items: 51,
                train_pos: train.clone(),
                test_pos: test,
                val_pos: vec![],
            };
            let num_groups = rng.random_range(2..5);
            let groups = sparsity_groups(&inter, num_groups).unwrap();
            assert_eq!(groups.len(), num_groups);

            let mut seen: Vec<usize> = groups.iter().flat_map(|g| g.users.clone()).collect();
            seen.sort_unstable();
            assert_eq!(seen, (0..users).collect::<Vec<_>>(), "partition must cover");

            // A contiguous prefix partition cannot balance beyond the lumpiness
            // of single users: each group's total lands within one largest
            // user count of the ideal equal share.
            let max_count = train.iter().map(Vec::len).max().unwrap();
            let total: usize = train.iter().map(Vec::len).sum();
            let totals: Vec<usize> = groups.iter().map(|g| g.interactions).collect();
            for &t in &totals {
                let dev = (t * num_groups).abs_diff(total);
                assert!(
                    dev <= max_count * num_groups,
                    "group total {t} strays more than the largest user count \
                     {max_count} from the equal share of {totals:?}"
                );
            }
            for g in &groups {
                assert!(!g.users.is_empty(), "no group may be empty");
                let worst = g.users.iter().map(|&u| train[u].len()).max().unwrap();
                assert_eq!(g.threshold, worst);
            }
        }
    }

    #[test]
    fn group_metrics_average_member_users() {
        let groups = vec![
            SparsityGroup { threshold: 1, users: vec![0, 1], interactions: 2 },
            SparsityGroup { threshold: 5, users: vec![2], interactions: 5 },
        ];
        let per_user = [
            UserMetrics { user: 0, recall: 1.0, ndcg: 1.0 },
            UserMetrics { user: 1, recall: 0.0, ndcg: 0.5 },
            UserMetrics { user: 2, recall: 0.25, ndcg: 0.75 },
        ];
        let means = group_metrics(&groups, &per_user);
        assert_eq!(means[0].recall, 0.5);
        assert_eq!(means[0].ndcg, 0.75);
        assert_eq!(means[1].recall, 0.25);
        assert_eq!(means[1].users, 1);
    }
}
