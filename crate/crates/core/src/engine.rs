//! Rewards, action values and the episode runner.
//!
//! An episode starts from all-singleton groups and repeats
//! recommend -> featurize -> act -> transition until the recommender has
//! nothing left to propose.

use std::collections::VecDeque;
use std::time::Instant;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::domain::{ground_truth_action, Action, Candidate, CostModel, GroupId, Partition, State};
use crate::error::{Error, Result};
use crate::features::{extract_features, FeatureConfig, FeatureVector, Geometry};
use crate::learn::{forest_fit, ForestModel, ForestParams, SvmModel};
use crate::metrics;
use crate::recommend::{Recommender, RecommenderConfig, ScoredPair, Strategy};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EpsilonSchedule {
    pub initial: f64,
    /// Episodes over which epsilon decays linearly to zero.
    pub decay_episodes: usize,
}

impl Default for EpsilonSchedule {
    fn default() -> Self {
        EpsilonSchedule { initial: 0.2, decay_episodes: 40 }
    }
}

impl EpsilonSchedule {
    pub fn at(&self, episode: usize) -> f64 {
        if episode >= self.decay_episodes {
            return 0.0;
        }
        self.initial * (1.0 - episode as f64 / self.decay_episodes as f64)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PolicyConfig {
    /// Weight of the long-term reward.
    pub beta: f64,
    /// Discount factor.
    pub gamma: f64,
    /// Steps spanned by the long-term reward.
    pub k_steps: usize,
    pub features: FeatureConfig,
    pub epsilon: EpsilonSchedule,
    pub costs: CostModel,
    pub recommender: RecommenderConfig,
}

impl Default for PolicyConfig {
    fn default() -> Self {
        PolicyConfig {
            beta: 0.8,
            gamma: 0.9,
            k_steps: 1,
            features: FeatureConfig::default(),
            epsilon: EpsilonSchedule::default(),
            costs: CostModel::default(),
            recommender: RecommenderConfig::default(),
        }
    }
}

impl PolicyConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.beta >= 0.0) {
            return Err(Error::invalid("beta must be non-negative"));
        }
        if !(0.0..1.0).contains(&self.gamma) {
            return Err(Error::invalid("gamma must lie in [0, 1)"));
        }
        if self.k_steps == 0 {
            return Err(Error::invalid("k_steps must be positive"));
        }
        if !(0.0..=1.0).contains(&self.epsilon.initial) {
            return Err(Error::invalid("epsilon must lie in [0, 1]"));
        }
        self.features.validate()?;
        self.costs.validate()?;
        self.recommender.validate()
    }
}

/// `R_short(s, a) = y(a) * f(phi(s))` with `f` the SVM decision function.
pub fn reward_short(model: &SvmModel, phi: &FeatureVector, action: Action) -> Result<f64> {
    Ok(action.sign() * model.decision(phi.as_slice())?)
}

/// `R = R_short + beta * R_long`.
pub fn reward_total(r_short: f64, r_long: f64, beta: f64) -> f64 {
    r_short + beta * r_long
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QEncoding {
    /// One forest over `phi ++ [+1 | -1]`.
    ActionFlag,
    /// One forest per action.
    TwinForest,
}

/// Forest approximation of `Q(phi(s), a)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QModel {
    pub encoding: QEncoding,
    pub feature_dim: usize,
    pub forests: Vec<ForestModel>,
}

fn with_flag(phi: &[f64], action: Action) -> Vec<f64> {
    let mut x = Vec::with_capacity(phi.len() + 1);
    x.extend_from_slice(phi);
    x.push(action.sign());
    x
}

impl QModel {
    /// Fits on `(phi, a, target)` samples.
    pub fn fit(
        samples: &[(FeatureVector, Action, f64)],
        encoding: QEncoding,
        params: &ForestParams,
    ) -> Result<QModel> {
        let Some(first) = samples.first() else {
            return Err(Error::invalid("Q training set is empty"));
        };
        let feature_dim = first.0.len();
        let forests = match encoding {
            QEncoding::ActionFlag => {
                let xs: Vec<Vec<f64>> = samples.iter().map(|(p, a, _)| with_flag(p.as_slice(), *a)).collect();
                let ys: Vec<f64> = samples.iter().map(|s| s.2).collect();
                vec![forest_fit(&xs, &ys, params)?]
            }
            QEncoding::TwinForest => Action::ALL
                .iter()
                .map(|&act| {
                    let (xs, ys): (Vec<Vec<f64>>, Vec<f64>) = samples
                        .iter()
                        .filter(|s| s.1 == act)
                        .map(|(p, _, y)| (p.0.clone(), *y))
                        .unzip();
                    if xs.is_empty() {
                        return Err(Error::invalid(format!("no Q samples for action {act:?}")));
                    }
                    forest_fit(&xs, &ys, params)
                })
                .collect::<Result<_>>()?,
        };
        Ok(QModel { encoding, feature_dim, forests })
    }

    pub fn q_value(&self, phi: &FeatureVector, action: Action) -> Result<f64> {
        if phi.len() != self.feature_dim {
            return Err(Error::DimensionMismatch { expected: self.feature_dim, actual: phi.len() });
        }
        match self.encoding {
            QEncoding::ActionFlag => self.forests[0].predict(&with_flag(phi.as_slice(), action)),
            QEncoding::TwinForest => {
                let k = usize::from(action == Action::NotMerge);
                self.forests[k].predict(phi.as_slice())
            }
        }
    }

    /// `max_a Q(phi, a)`.
    pub fn max_value(&self, phi: &FeatureVector) -> Result<f64> {
        Ok(self.q_value(phi, Action::Merge)?.max(self.q_value(phi, Action::NotMerge)?))
    }

    /// Greedy action; equal values resolve to not-merge.
    pub fn greedy(&self, phi: &FeatureVector) -> Result<Action> {
        let merge = self.q_value(phi, Action::Merge)?;
        let not = self.q_value(phi, Action::NotMerge)?;
        Ok(if merge > not { Action::Merge } else { Action::NotMerge })
    }
}

/// Epsilon-greedy choice over the two actions.
pub fn choose_action(q: &QModel, phi: &FeatureVector, epsilon: f64, rng: &mut impl Rng) -> Result<Action> {
    if epsilon > 0.0 && rng.random::<f64>() < epsilon {
        return Ok(if rng.random_bool(0.5) { Action::Merge } else { Action::NotMerge });
    }
    q.greedy(phi)
}

/// Decision rule applied at each step.
#[derive(Debug, Clone, PartialEq)]
pub enum Policy {
    /// Act on the sign of the learned short-term reward (`gamma = beta = 0`).
    Myopic(SvmModel),
    /// Act greedily on the learned action-value function.
    Q(QModel),
    /// Merge every recommended pair: plain threshold clustering.
    AlwaysMerge,
}

impl Policy {
    pub fn feature_dim(&self) -> Option<usize> {
        match self {
            Policy::Myopic(m) => Some(m.dim),
            Policy::Q(q) => Some(q.feature_dim),
            Policy::AlwaysMerge => None,
        }
    }

    pub fn greedy(&self, phi: &FeatureVector) -> Result<Action> {
        match self {
            Policy::Myopic(m) => m.predict(phi.as_slice()),
            Policy::Q(q) => q.greedy(phi),
            Policy::AlwaysMerge => Ok(Action::Merge),
        }
    }

    /// Preference for merging; used to rank pairs in exhaustive scanning.
    pub fn merge_advantage(&self, phi: &FeatureVector) -> Result<f64> {
        match self {
            Policy::Myopic(m) => m.decision(phi.as_slice()),
            Policy::Q(q) => Ok(q.q_value(phi, Action::Merge)? - q.q_value(phi, Action::NotMerge)?),
            Policy::AlwaysMerge => Ok(1.0),
        }
    }
}

/// One grouping episode over an album's geometry.
pub struct Episode<'g> {
    geom: &'g Geometry,
    state: State,
    recommender: Recommender,
    features: FeatureConfig,
}

impl<'g> Episode<'g> {
    /// `stream` selects the recommender's random stream.
    pub fn new(geom: &'g Geometry, cfg: &PolicyConfig, stream: u64) -> Self {
        Episode {
            geom,
            state: State::initial(geom.len()),
            recommender: Recommender::with_stream(cfg.recommender, cfg.features.eta, stream),
            features: cfg.features,
        }
    }

    pub fn state(&self) -> &State {
        &self.state
    }

    pub fn geometry(&self) -> &Geometry {
        self.geom
    }

    pub fn features(&self, candidate: Candidate) -> Result<FeatureVector> {
        extract_features(self.geom, &self.state, candidate, &self.features)
    }

    pub fn eligible(&mut self) -> Vec<ScoredPair> {
        self.recommender.eligible_pairs(&self.state, self.geom)
    }

    /// Next pair to decide. Under `Exhaustive`, every eligible pair is
    /// scored by `policy` and the most merge-worthy one wins.
    pub fn next_candidate(&mut self, policy: Option<&Policy>) -> Result<Option<Candidate>> {
        let state = std::mem::replace(&mut self.state, State::initial(0));
        let out = self.candidate_for(&state, policy, false);
        self.state = state;
        out
    }

    /// Pair that would be proposed in `state`, without advancing the
    /// recommender's random stream.
    pub fn peek_candidate(&mut self, state: &State, policy: Option<&Policy>) -> Result<Option<Candidate>> {
        self.candidate_for(state, policy, true)
    }

    fn candidate_for(&mut self, state: &State, policy: Option<&Policy>, peek: bool) -> Result<Option<Candidate>> {
        match (self.recommender.config().strategy, policy) {
            (Strategy::Exhaustive, Some(policy)) => {
                let mut best: Option<(f64, Candidate)> = None;
                for pair in self.recommender.eligible_pairs(state, self.geom) {
                    let c = pair.candidate();
                    let phi = extract_features(self.geom, state, c, &self.features)?;
                    let score = policy.merge_advantage(&phi)?;
                    if best.is_none_or(|(s, _)| score > s) {
                        best = Some((score, c));
                    }
                }
                Ok(best.map(|(_, c)| c))
            }
            _ if peek => Ok(self.recommender.peek(state, self.geom)),
            _ => Ok(self.recommender.recommend(state, self.geom)),
        }
    }

    pub fn features_in(&self, state: &State, candidate: Candidate) -> Result<FeatureVector> {
        extract_features(self.geom, state, candidate, &self.features)
    }

    pub fn apply(&mut self, candidate: Candidate, action: Action) -> Result<Option<GroupId>> {
        self.state.apply(candidate, action)
    }

    pub fn into_state(self) -> State {
        self.state
    }
}

/// How an episode treats ground truth.
#[derive(Debug, Clone, Copy)]
pub enum Mode<'a> {
    /// Labels unavailable; the agent's action is executed.
    Inference,
    /// The expert action is executed; agent disagreements are recorded.
    TeacherForced(&'a Partition),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceStep {
    pub step: usize,
    pub candidate: (GroupId, GroupId),
    /// Action executed.
    pub action: Action,
    pub agent_action: Action,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub gt_action: Option<Action>,
    pub features: Vec<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub r_short: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub r_long: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub reward: Option<f64>,
    pub elapsed_us: u64,
}

#[derive(Debug, Clone)]
pub struct EpisodeTrace {
    pub album_id: String,
    pub steps: Vec<TraceStep>,
    pub final_partition: Partition,
    /// Steps where the agent disagreed with the expert (teacher-forced only).
    pub disagreements: usize,
}

/// Rolling window of the last `k + 1` partitions for the K-step reward.
pub(crate) struct CostWindow {
    k: usize,
    partitions: VecDeque<Partition>,
}

impl CostWindow {
    pub(crate) fn new(k: usize, start: &Partition) -> Self {
        CostWindow { k, partitions: VecDeque::from([start.clone()]) }
    }

    /// Records `now` and returns the cost decrease over the last K steps
    /// (fewer at the start of an episode).
    pub(crate) fn push(&mut self, now: &Partition, gt: &Partition, costs: &CostModel) -> Result<f64> {
        self.partitions.push_back(now.clone());
        while self.partitions.len() > self.k + 1 {
            self.partitions.pop_front();
        }
        let k = self.partitions.len() - 1;
        metrics::delta_op(self.partitions.make_contiguous(), gt, k, costs)
    }

    /// Cost decrease if the latest partition were replaced by `alt`.
    pub(crate) fn peek(&self, alt: &Partition, gt: &Partition, costs: &CostModel) -> Result<f64> {
        let mut w: Vec<Partition> = self.partitions.iter().cloned().collect();
        w.push(alt.clone());
        if w.len() > self.k + 1 {
            w.remove(0);
        }
        let k = w.len() - 1;
        metrics::delta_op(&w, gt, k, costs)
    }
}

/// Runs one episode. In `Inference` mode nothing but the label-free
/// geometry is consulted.
pub fn run_episode(
    album_id: &str,
    geom: &Geometry,
    policy: &Policy,
    cfg: &PolicyConfig,
    mode: Mode<'_>,
) -> Result<EpisodeTrace> {
    if geom.is_empty() {
        return Err(Error::invalid(format!("album {album_id} is empty")));
    }
    if let Some(dim) = policy.feature_dim() {
        if dim != cfg.features.dim() {
            return Err(Error::DimensionMismatch { expected: cfg.features.dim(), actual: dim });
        }
    }
    if let Mode::TeacherForced(gt) = mode {
        if gt.n_items() != geom.len() {
            return Err(Error::invalid("ground truth does not cover the album"));
        }
    }
    let stream = rng::key(album_id);
    let mut ep = Episode::new(geom, cfg, stream);
    let mut window = CostWindow::new(cfg.k_steps, &ep.state().partition);
    let mut steps = Vec::new();
    let mut disagreements = 0;

    while let Some(candidate) = ep.next_candidate(Some(policy))? {
        let started = Instant::now();
        let phi = ep.features(candidate)?;
        let agent_action = policy.greedy(&phi)?;
        let r_short = match policy {
            Policy::Myopic(m) => Some(reward_short(m, &phi, agent_action)?),
            _ => None,
        };
        let (action, gt_action) = match mode {
            Mode::Inference => (agent_action, None),
            Mode::TeacherForced(gt) => {
                let a_gt = ground_truth_action(ep.state(), candidate, gt, &cfg.costs)?;
                disagreements += usize::from(a_gt != agent_action);
                (a_gt, Some(a_gt))
            }
        };
        ep.apply(candidate, action)?;
        let r_long = match mode {
            Mode::Inference => None,
            Mode::TeacherForced(gt) => Some(window.push(&ep.state().partition, gt, &cfg.costs)?),
        };
        let reward = r_short.map(|s| reward_total(s, r_long.unwrap_or(0.0), cfg.beta));
        steps.push(TraceStep {
            step: steps.len(),
            candidate,
            action,
            agent_action,
            gt_action,
            features: phi.0,
            r_short,
            r_long,
            reward,
            elapsed_us: started.elapsed().as_micros() as u64,
        });
    }
    Ok(EpisodeTrace {
        album_id: album_id.to_string(),
        steps,
        final_partition: ep.into_state().partition,
        disagreements,
    })
}
