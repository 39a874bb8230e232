//! Candidate-pair recommenders. Each turns the O(N^2) choice of which
//! groups to consider into one binary decision per step.

use std::collections::HashMap;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::domain::{Candidate, Fingerprint, GroupId, State};
use crate::error::{Error, Result};
use crate::features::{similarity_block, Geometry};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    /// Nearest eligible pair (agglomerative clustering order).
    HierarchicalNearest,
    /// Uniformly random eligible pair.
    Random,
    /// Every eligible pair is scored by the policy; see `engine`.
    Exhaustive,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RecommenderConfig {
    pub strategy: Strategy,
    /// Pairs farther apart than this are never recommended.
    pub tau: f64,
    pub seed: u64,
}

impl Default for RecommenderConfig {
    fn default() -> Self {
        RecommenderConfig { strategy: Strategy::HierarchicalNearest, tau: 0.45, seed: 0 }
    }
}

impl RecommenderConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tau > 0.0 && self.tau <= 1.0) {
            return Err(Error::invalid(format!("tau must lie in (0, 1], got {}", self.tau)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScoredPair {
    pub a: GroupId,
    pub b: GroupId,
    pub distance: f64,
}

impl ScoredPair {
    pub fn candidate(&self) -> Candidate {
        (self.a, self.b)
    }
}

/// Inter-group distance: mean of both directed similarity blocks.
pub fn group_distance(geom: &Geometry, ci: &[usize], cj: &[usize], eta: usize) -> Result<f64> {
    let ab = similarity_block(geom, ci, cj, eta)?;
    let ba = similarity_block(geom, cj, ci, eta)?;
    Ok((ab.iter().sum::<f64>() + ba.iter().sum::<f64>()) / (2 * eta) as f64)
}

/// Stateful recommender for one episode. Group-pair distances are memoised
/// by member-set fingerprint, so only pairs touching a freshly merged group
/// are ever recomputed.
#[derive(Debug, Clone)]
pub struct Recommender {
    config: RecommenderConfig,
    eta: usize,
    rng: ChaCha8Rng,
    cache: HashMap<(Fingerprint, Fingerprint), f64>,
}

impl Recommender {
    pub fn new(config: RecommenderConfig, eta: usize) -> Self {
        Recommender { config, eta, rng: rng::stream(config.seed, 0), cache: HashMap::new() }
    }

    /// Recommender whose random stream is keyed by `(seed, stream)`.
    pub fn with_stream(config: RecommenderConfig, eta: usize, stream: u64) -> Self {
        Recommender { rng: rng::stream(config.seed, stream), ..Self::new(config, eta) }
    }

    pub fn config(&self) -> &RecommenderConfig {
        &self.config
    }

    /// Pairs not yet in history and within `tau`, sorted by group-id pair.
    pub fn eligible_pairs(&mut self, state: &State, geom: &Geometry) -> Vec<ScoredPair> {
        let groups: Vec<(GroupId, &[usize], Fingerprint)> = state
            .partition
            .groups()
            .map(|(id, m)| (id, m, Fingerprint::of(m)))
            .collect();
        let mut out = Vec::new();
        for (k, &(a, ma, fa)) in groups.iter().enumerate() {
            for &(b, mb, fb) in &groups[k + 1..] {
                if state.history.contains(fa, fb) {
                    continue;
                }
                let key = if fa <= fb { (fa, fb) } else { (fb, fa) };
                let eta = self.eta;
                let distance = *self.cache.entry(key).or_insert_with(|| {
                    group_distance(geom, ma, mb, eta).expect("groups are non-empty")
                });
                if distance <= self.config.tau {
                    out.push(ScoredPair { a, b, distance });
                }
            }
        }
        out
    }

    /// Next candidate pair, or `None` once nothing eligible remains.
    ///
    /// `Exhaustive` falls back to the first eligible pair here; policy-driven
    /// scanning of all pairs happens in the episode runner.
    pub fn recommend(&mut self, state: &State, geom: &Geometry) -> Option<Candidate> {
        let pairs = self.eligible_pairs(state, geom);
        if pairs.is_empty() {
            return None;
        }
        let pick = match self.config.strategy {
            Strategy::HierarchicalNearest => pairs
                .iter()
                .min_by(|x, y| x.distance.total_cmp(&y.distance).then((x.a, x.b).cmp(&(y.a, y.b))))
                .copied(),
            Strategy::Random => Some(pairs[self.rng.random_range(0..pairs.len())]),
            Strategy::Exhaustive => pairs.first().copied(),
        };
        pick.map(|p| p.candidate())
    }

    /// What `recommend` would return for `state`, leaving the random stream
    /// untouched.
    pub fn peek(&mut self, state: &State, geom: &Geometry) -> Option<Candidate> {
        let saved = self.rng.clone();
        let out = self.recommend(state, geom);
        self.rng = saved;
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::Action;

    fn planar(angles: &[f64]) -> Geometry {
        let e: Vec<Vec<f64>> = angles
            .iter()
            .map(|a| {
                let t = a * std::f64::consts::PI;
                vec![t.cos(), t.sin()]
            })
            .collect();
        Geometry::from_embeddings(&e, vec![1.0; angles.len()]).unwrap()
    }

    fn cfg(tau: f64) -> RecommenderConfig {
        RecommenderConfig { tau, ..Default::default() }
    }

    #[test]
    fn two_groups_single_candidate() {
        let g = planar(&[0.0, 0.1]);
        let s = State::initial(2);
        let mut r = Recommender::new(cfg(0.45), 5);
        assert_eq!(r.recommend(&s, &g), Some((GroupId(0), GroupId(1))));
    }

    #[test]
    fn exhausted_history_returns_none() {
        let g = planar(&[0.0, 0.1]);
        let s = State::initial(2).transition((GroupId(0), GroupId(1)), Action::NotMerge).unwrap();
        let mut r = Recommender::new(cfg(0.45), 5);
        assert_eq!(r.recommend(&s, &g), None);
    }

    #[test]
    fn nearest_pair_then_none_under_threshold() {
        // pair distances: (0,1) = 0.1, (0,2) = 0.5, (1,2) = 0.4
        let g = planar(&[0.0, 0.1, 0.5]);
        let s = State::initial(3);
        let mut r = Recommender::new(cfg(0.3), 5);
        let c = r.recommend(&s, &g).unwrap();
        assert_eq!(c, (GroupId(0), GroupId(1)));
        let s = s.transition(c, Action::NotMerge).unwrap();
        assert_eq!(r.recommend(&s, &g), None);
    }

    #[test]
    fn ties_break_on_smallest_ids() {
        let e = vec![vec![0.0, 1.0], vec![1.0, 0.0], vec![1.0, 0.0], vec![0.0, 1.0]];
        let g = Geometry::from_embeddings(&e, vec![1.0; 4]).unwrap();
        let s = State::initial(4);
        let mut r = Recommender::new(cfg(0.45), 5);
        assert_eq!(r.recommend(&s, &g), Some((GroupId(0), GroupId(3))));
    }

    #[test]
    fn random_strategy_is_seeded_and_eligible() {
        let g = planar(&[0.0, 0.05, 0.1, 0.15, 0.9]);
        let s = State::initial(5);
        let c = RecommenderConfig { strategy: Strategy::Random, tau: 0.3, seed: 7 };
        let picks = |seed| {
            let mut r = Recommender::new(RecommenderConfig { seed, ..c }, 5);
            (0..20).map(|_| r.recommend(&s, &g).unwrap()).collect::<Vec<_>>()
        };
        assert_eq!(picks(7), picks(7));
        assert!(picks(7).iter().all(|&(_, b)| b != GroupId(4)));
    }

    #[test]
    fn recommend_never_repeats_history_and_terminates() {
        let g = planar(&[0.0, 0.02, 0.04, 0.3, 0.32, 0.7]);
        let mut s = State::initial(6);
        let mut r = Recommender::new(cfg(1.0), 5);
        let mut steps = 0;
        let mut flip = false;
        while let Some((a, b)) = r.recommend(&s, &g) {
            let (fa, fb) = (s.partition.fingerprint(a).unwrap(), s.partition.fingerprint(b).unwrap());
            assert!(!s.history.contains(fa, fb));
            flip = !flip;
            let act = if flip { Action::NotMerge } else { Action::Merge };
            s = s.transition((a, b), act).unwrap();
            steps += 1;
            assert!(steps < 1000);
        }
        assert!(steps > 0);
    }

    #[test]
    fn tau_validated() {
        assert!(cfg(0.0).validate().is_err());
        assert!(cfg(1.2).validate().is_err());
        assert!(cfg(1.0).validate().is_ok());
    }
}
