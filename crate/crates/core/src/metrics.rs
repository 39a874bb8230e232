//! Partition distances: the operation cost of editing one grouping into
//! another (with an exact search oracle for small albums), its K-step
//! change used as the long-term reward, and B-cubed scores.

use std::cmp::{Ordering, Reverse};
use std::collections::{BinaryHeap, HashMap};

use serde::{Deserialize, Serialize};

use crate::domain::{CostModel, Partition};
use crate::error::{Error, Result};

/// Largest album the exhaustive oracle accepts (Bell(10) = 115 975 states).
pub const ORACLE_MAX_ITEMS: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Target {
    /// Index into the ground-truth partition's canonical group order.
    Group(usize),
    /// All members are ground-truth singletons; the group is broken up.
    Dissolve,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OpResult {
    pub total_cost: f64,
    pub n_adds: usize,
    pub n_removes: usize,
    pub n_merges: usize,
    /// Target of each hypothesis group, in the hypothesis' canonical order.
    pub assignment: Vec<Target>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BcubedScores {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl BcubedScores {
    pub fn from_pr(precision: f64, recall: f64) -> Self {
        let f1 = if precision <= 0.0 || recall <= 0.0 {
            0.0
        } else {
            2.0 * precision * recall / (precision + recall)
        };
        BcubedScores { precision, recall, f1 }
    }
}

fn check_same_items(h: &Partition, g: &Partition) -> Result<()> {
    if h.n_items() != g.n_items() {
        return Err(Error::invalid(format!(
            "partitions cover different item sets ({} vs {} items)",
            h.n_items(),
            g.n_items()
        )));
    }
    Ok(())
}

/// Cost of a canonical edit plan turning `h` into `g`.
///
/// Every hypothesis group keeps its largest overlap with a ground-truth
/// group (ties to the smaller ground-truth index) and sheds the rest one
/// removal at a time; groups made only of ground-truth singletons dissolve.
/// Groups aimed at the same target are then merged, and any target items
/// still missing are added back as singletons. The plan is a valid edit
/// sequence, so the cost upper-bounds the true minimum.
pub fn op_cost(h: &Partition, g: &Partition, costs: &CostModel) -> Result<OpResult> {
    check_same_items(h, g)?;
    let g_assign = g.assignment();
    let g_groups = g.canonical();
    let g_sizes: Vec<usize> = g_groups.iter().map(Vec::len).collect();

    let mut n_removes = 0;
    let mut targeting = vec![0usize; g_groups.len()];
    let mut covered = vec![0usize; g_groups.len()];
    let mut assignment = Vec::with_capacity(h.n_groups());
    let mut overlap: HashMap<usize, usize> = HashMap::new();

    for members in h.canonical() {
        overlap.clear();
        for &m in &members {
            *overlap.entry(g_assign[m]).or_default() += 1;
        }
        let all_singletons = members.iter().all(|&m| g_sizes[g_assign[m]] == 1);
        if members.len() >= 2 && all_singletons {
            n_removes += members.len() - 1;
            assignment.push(Target::Dissolve);
            continue;
        }
        let (target, best) = overlap
            .iter()
            .map(|(&j, &c)| (j, c))
            .max_by(|a, b| a.1.cmp(&b.1).then(b.0.cmp(&a.0)))
            .expect("groups are non-empty");
        n_removes += members.len() - best;
        targeting[target] += 1;
        covered[target] += best;
        assignment.push(Target::Group(target));
    }

    let mut n_merges = 0;
    let mut n_adds = 0;
    for j in 0..g_groups.len() {
        n_merges += targeting[j].saturating_sub(1);
        n_adds += if covered[j] >= 1 { g_sizes[j] - covered[j] } else { g_sizes[j] - 1 };
    }

    let total_cost = costs.add * n_adds as f64
        + costs.remove * n_removes as f64
        + costs.merge * n_merges as f64;
    Ok(OpResult { total_cost, n_adds, n_removes, n_merges, assignment })
}

/// Canonical restricted-growth string: item i's block label, blocks
/// numbered by first appearance.
fn rgs(labels: &[u8]) -> Vec<u8> {
    let mut map = [u8::MAX; ORACLE_MAX_ITEMS];
    let mut next = 0u8;
    labels
        .iter()
        .map(|&l| {
            let slot = &mut map[l as usize];
            if *slot == u8::MAX {
                *slot = next;
                next += 1;
            }
            *slot
        })
        .collect()
}

#[derive(PartialEq)]
struct Cost(f64);

impl Eq for Cost {}

impl PartialOrd for Cost {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Cost {
    fn cmp(&self, other: &Self) -> Ordering {
        self.0.total_cmp(&other.0)
    }
}

/// Exact minimum edit cost by uniform-cost search over all partitions of
/// the album. Edges: merge two groups; remove an item from a group of size
/// >= 2 (it becomes a singleton); add a singleton into another group.
pub fn op_cost_oracle(h: &Partition, g: &Partition, costs: &CostModel) -> Result<f64> {
    check_same_items(h, g)?;
    let n = h.n_items();
    if n > ORACLE_MAX_ITEMS {
        return Err(Error::Capacity(format!(
            "oracle supports at most {ORACLE_MAX_ITEMS} items, got {n}"
        )));
    }
    let to_rgs = |p: &Partition| rgs(&p.assignment().iter().map(|&a| a as u8).collect::<Vec<_>>());
    let start = to_rgs(h);
    let goal = to_rgs(g);

    let mut best: HashMap<Vec<u8>, f64> = HashMap::new();
    let mut heap = BinaryHeap::new();
    best.insert(start.clone(), 0.0);
    heap.push(Reverse((Cost(0.0), start)));

    while let Some(Reverse((Cost(d), state))) = heap.pop() {
        if state == goal {
            return Ok(d);
        }
        if best.get(&state).is_some_and(|&b| b < d) {
            continue;
        }
        let n_blocks = state.iter().copied().max().map_or(0, |m| m as usize + 1);
        let mut sizes = vec![0usize; n_blocks];
        for &l in &state {
            sizes[l as usize] += 1;
        }
        let mut relax = |next: Vec<u8>, w: f64, heap: &mut BinaryHeap<_>| {
            let next = rgs(&next);
            let nd = d + w;
            if best.get(&next).is_none_or(|&b| nd < b) {
                best.insert(next.clone(), nd);
                heap.push(Reverse((Cost(nd), next)));
            }
        };
        for a in 0..n_blocks {
            for b in a + 1..n_blocks {
                let next = state.iter().map(|&l| if l as usize == b { a as u8 } else { l }).collect();
                relax(next, costs.merge, &mut heap);
            }
        }
        for x in 0..n {
            let bx = state[x] as usize;
            if sizes[bx] >= 2 {
                let mut next = state.clone();
                next[x] = n_blocks as u8;
                relax(next, costs.remove, &mut heap);
            } else {
                for t in 0..n_blocks {
                    if t != bx {
                        let mut next = state.clone();
                        next[x] = t as u8;
                        relax(next, costs.add, &mut heap);
                    }
                }
            }
        }
    }
    unreachable!("every partition reaches every other by merges and removals")
}

/// `Op(h_{t-K}, g) - Op(h_t, g)` over the last `k + 1` recorded
/// partitions; positive when the last K steps reduced the remaining cost.
pub fn delta_op(history: &[Partition], g: &Partition, k: usize, costs: &CostModel) -> Result<f64> {
    if k == 0 {
        return Err(Error::invalid("K must be positive"));
    }
    if history.len() < k + 1 {
        return Err(Error::invalid(format!(
            "delta over {k} steps needs {} partitions, have {}",
            k + 1,
            history.len()
        )));
    }
    let now = &history[history.len() - 1];
    let then = &history[history.len() - 1 - k];
    Ok(op_cost(then, g, costs)?.total_cost - op_cost(now, g, costs)?.total_cost)
}

/// Item-averaged B-cubed precision, recall and F1 of `pred` against `gt`.
pub fn bcubed(pred: &Partition, gt: &Partition) -> Result<BcubedScores> {
    check_same_items(pred, gt)?;
    let n = pred.n_items();
    if n == 0 {
        return Err(Error::invalid("B-cubed of an empty album"));
    }
    let pa = pred.assignment();
    let ga = gt.assignment();
    let mut pred_size: HashMap<usize, usize> = HashMap::new();
    let mut gt_size: HashMap<usize, usize> = HashMap::new();
    let mut joint: HashMap<(usize, usize), usize> = HashMap::new();
    for i in 0..n {
        *pred_size.entry(pa[i]).or_default() += 1;
        *gt_size.entry(ga[i]).or_default() += 1;
        *joint.entry((pa[i], ga[i])).or_default() += 1;
    }
    // Each of the c items in cell (p, g) sees c correct neighbours.
    let mut cells: Vec<_> = joint.into_iter().collect();
    cells.sort_unstable();
    let (mut p_sum, mut r_sum) = (0.0, 0.0);
    for ((p, g), c) in cells {
        let c = c as f64;
        p_sum += c * c / pred_size[&p] as f64;
        r_sum += c * c / gt_size[&g] as f64;
    }
    Ok(BcubedScores::from_pr(p_sum / n as f64, r_sum / n as f64))
}

/// Operation cost per item.
pub fn normalized_op(h: &Partition, g: &Partition, costs: &CostModel, n_items: usize) -> Result<f64> {
    if n_items == 0 {
        return Err(Error::invalid("normalizing by zero items"));
    }
    Ok(op_cost(h, g, costs)?.total_cost / n_items as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn p(n: usize, groups: &[&[usize]]) -> Partition {
        Partition::from_groups(n, groups.iter().map(|g| g.to_vec()).collect()).unwrap()
    }

    fn default_costs() -> CostModel {
        CostModel::default()
    }

    #[test]
    fn identical_partitions_cost_nothing() {
        let h = p(4, &[&[0, 2], &[1], &[3]]);
        let r = op_cost(&h, &h, &default_costs()).unwrap();
        assert_eq!(r.total_cost, 0.0);
        assert_eq!(op_cost_oracle(&h, &h, &default_costs()).unwrap(), 0.0);
    }

    #[test]
    fn singletons_to_one_group_is_merges() {
        let h = Partition::singletons(5);
        let g = p(5, &[&[0, 1, 2, 3, 4]]);
        let r = op_cost(&h, &g, &default_costs()).unwrap();
        assert_eq!(r.total_cost, 4.0);
        assert_eq!(r.n_merges, 4);
        assert_eq!(op_cost_oracle(&h, &g, &default_costs()).unwrap(), 4.0);
    }

    #[test]
    fn splitting_a_pair_is_one_removal() {
        let h = p(3, &[&[0, 1], &[2]]);
        let g = Partition::singletons(3);
        let r = op_cost(&h, &g, &default_costs()).unwrap();
        assert_eq!((r.n_removes, r.total_cost), (1, 6.0));
        assert_eq!(r.assignment[0], Target::Dissolve);
        assert_eq!(op_cost_oracle(&h, &g, &default_costs()).unwrap(), 6.0);
    }

    #[test]
    fn misplaced_item_costs_remove_plus_add() {
        let h = p(5, &[&[0, 1, 4], &[2, 3]]);
        let g = p(5, &[&[0, 1], &[2, 3, 4]]);
        let r = op_cost(&h, &g, &default_costs()).unwrap();
        assert_eq!(r.total_cost, 7.0);
        assert_eq!(op_cost_oracle(&h, &g, &default_costs()).unwrap(), 7.0);
    }

    #[test]
    fn op_result_cost_identity() {
        let h = p(6, &[&[0, 3], &[1, 4, 5], &[2]]);
        let g = p(6, &[&[0, 1, 2], &[3], &[4, 5]]);
        let c = CostModel::new(1.5, 4.0, 0.5).unwrap();
        let r = op_cost(&h, &g, &c).unwrap();
        let expect = c.add * r.n_adds as f64 + c.remove * r.n_removes as f64 + c.merge * r.n_merges as f64;
        assert_eq!(r.total_cost, expect);
    }

    #[test]
    fn mismatched_items_rejected() {
        let h = Partition::singletons(3);
        let g = Partition::singletons(4);
        assert!(op_cost(&h, &g, &default_costs()).is_err());
        assert!(bcubed(&h, &g).is_err());
    }

    #[test]
    fn oracle_capacity() {
        let h = Partition::singletons(11);
        assert!(matches!(op_cost_oracle(&h, &h, &default_costs()), Err(Error::Capacity(_))));
    }

    #[test]
    fn delta_op_cases() {
        let g = p(3, &[&[0, 1], &[2]]);
        let c = default_costs();
        let h0 = Partition::singletons(3);
        assert_eq!(delta_op(&[h0.clone(), h0.clone()], &g, 1, &c).unwrap(), 0.0);

        let mut good = h0.clone();
        good.merge(crate::domain::GroupId(0), crate::domain::GroupId(1)).unwrap();
        assert_eq!(delta_op(&[h0.clone(), good], &g, 1, &c).unwrap(), 1.0);

        let mut bad = h0.clone();
        bad.merge(crate::domain::GroupId(1), crate::domain::GroupId(2)).unwrap();
        let d = delta_op(&[h0.clone(), bad.clone()], &g, 1, &c).unwrap();
        let oracle = op_cost_oracle(&h0, &g, &c).unwrap() - op_cost_oracle(&bad, &g, &c).unwrap();
        assert!(d < 0.0);
        assert_eq!(d, oracle);

        assert!(delta_op(&[h0], &g, 1, &c).is_err());
    }

    #[test]
    fn bcubed_worked_example() {
        // a b c d = 0 1 2 3
        let gt = p(4, &[&[0, 1], &[2, 3]]);
        let pred = p(4, &[&[0, 1, 2], &[3]]);
        let s = bcubed(&pred, &gt).unwrap();
        assert!((s.precision - 2.0 / 3.0).abs() < 1e-15);
        assert!((s.recall - 0.75).abs() < 1e-15);
        assert!((s.f1 - 12.0 / 17.0).abs() < 1e-15);
    }

    #[test]
    fn bcubed_extremes() {
        let n = 7;
        let gt = p(n, &[&[0, 1, 2, 3, 4, 5, 6]]);
        let s = bcubed(&Partition::singletons(n), &gt).unwrap();
        assert_eq!(s.precision, 1.0);
        assert!((s.recall - 1.0 / n as f64).abs() < 1e-15);
        let s = bcubed(&gt, &gt).unwrap();
        assert_eq!((s.precision, s.recall, s.f1), (1.0, 1.0, 1.0));
        assert!(bcubed(&Partition::singletons(0), &Partition::singletons(0)).is_err());
    }

    #[test]
    fn normalized_op_divides() {
        let h = Partition::singletons(20);
        let mut groups: Vec<Vec<usize>> = vec![(0..5).collect()];
        groups.extend((5..20).map(|i| vec![i]));
        let g = Partition::from_groups(20, groups).unwrap();
        assert!((normalized_op(&h, &g, &default_costs(), 20).unwrap() - 0.2).abs() < 1e-15);
        assert_eq!(normalized_op(&g, &g, &default_costs(), 20).unwrap(), 0.0);
        assert!(normalized_op(&g, &g, &default_costs(), 0).is_err());
    }

    fn bcubed_pairwise(pred: &[usize], gt: &[usize]) -> (f64, f64) {
        let n = pred.len();
        let (mut p, mut r) = (0.0, 0.0);
        for i in 0..n {
            let same_pred = (0..n).filter(|&j| pred[j] == pred[i]).count() as f64;
            let same_gt = (0..n).filter(|&j| gt[j] == gt[i]).count() as f64;
            let both = (0..n).filter(|&j| pred[j] == pred[i] && gt[j] == gt[i]).count() as f64;
            p += both / same_pred;
            r += both / same_gt;
        }
        (p / n as f64, r / n as f64)
    }

    fn labels(max_n: usize, max_k: usize) -> impl Strategy<Value = (Vec<usize>, Vec<usize>)> {
        (1..=max_n).prop_flat_map(move |n| {
            (
                proptest::collection::vec(0..max_k, n),
                proptest::collection::vec(0..max_k, n),
            )
        })
    }

    proptest! {
        #[test]
        fn estimator_dominates_oracle((h, g) in labels(7, 4)) {
            let (h, g) = (Partition::from_assignment(&h), Partition::from_assignment(&g));
            let c = default_costs();
            let est = op_cost(&h, &g, &c).unwrap().total_cost;
            let exact = op_cost_oracle(&h, &g, &c).unwrap();
            prop_assert!(est >= exact - 1e-12);
            prop_assert_eq!(est == 0.0, h.same_grouping(&g));
        }

        #[test]
        fn op_cost_is_permutation_invariant((h, g) in labels(12, 5), seed in any::<u64>()) {
            use rand::{seq::SliceRandom, SeedableRng};
            let n = h.len();
            let mut perm: Vec<usize> = (0..n).collect();
            perm.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
            let relabel = |l: &[usize]| {
                let mut out = vec![0; n];
                for i in 0..n { out[perm[i]] = l[i]; }
                out
            };
            let c = default_costs();
            let a = op_cost(&Partition::from_assignment(&h), &Partition::from_assignment(&g), &c).unwrap();
            let b = op_cost(
                &Partition::from_assignment(&relabel(&h)),
                &Partition::from_assignment(&relabel(&g)),
                &c,
            ).unwrap();
            prop_assert_eq!(a.total_cost, b.total_cost);
        }

        #[test]
        fn bcubed_matches_pairwise((pred, gt) in labels(30, 6)) {
            let s = bcubed(&Partition::from_assignment(&pred), &Partition::from_assignment(&gt)).unwrap();
            let (bp, br) = bcubed_pairwise(&pred, &gt);
            prop_assert!((s.precision - bp).abs() < 1e-12);
            prop_assert!((s.recall - br).abs() < 1e-12);
        }
    }
}
