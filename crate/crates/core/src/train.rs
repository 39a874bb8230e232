//! Two-stage learning: reward learning from expert decisions (mistakes are
//! aggregated into `L` and the SVM is refit until no album produces one),
//! then epsilon-greedy fitted Q-iteration on top of the learned reward.

use std::collections::VecDeque;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::domain::{ground_truth_action, Action, Album, Partition};
use crate::engine::{
    choose_action, reward_short, run_episode, CostWindow, Episode, Mode, Policy, PolicyConfig, QEncoding,
    QModel,
};
use crate::error::{Error, Result};
use crate::features::{FeatureVector, Geometry};
use crate::learn::{svm_fit, ForestParams, SvmModel, SvmParams};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RetrainCadence {
    PerAlbum,
    PerEpoch,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct IrlConfig {
    pub svm: SvmParams,
    pub max_epochs: usize,
    pub retrain: RetrainCadence,
    pub seed: u64,
}

impl Default for IrlConfig {
    fn default() -> Self {
        IrlConfig { svm: SvmParams::default(), max_epochs: 50, retrain: RetrainCadence::PerAlbum, seed: 0 }
    }
}

/// Accumulated `(phi(s), a_GT)` pairs the agent got wrong. Append-only.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct MistakeSet {
    entries: Vec<(FeatureVector, Action)>,
}

impl MistakeSet {
    pub fn push(&mut self, phi: FeatureVector, expert: Action) {
        self.entries.push((phi, expert));
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn as_slice(&self) -> &[(FeatureVector, Action)] {
        &self.entries
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub mistakes: usize,
    pub l_size: usize,
    pub albums_solved: usize,
    pub svm_train_accuracy: f64,
}

#[derive(Debug, Clone)]
pub struct IrlOutcome {
    pub model: SvmModel,
    /// True when the last epoch partitioned every album without a mistake.
    pub converged: bool,
    pub epochs: Vec<EpochLog>,
    pub mistakes: MistakeSet,
}

pub(crate) struct Prepared {
    pub id: String,
    pub geom: Geometry,
    pub gt: Partition,
}

pub(crate) fn prepare(albums: &[Album]) -> Result<Vec<Prepared>> {
    if albums.is_empty() {
        return Err(Error::invalid("no training albums"));
    }
    albums
        .par_iter()
        .map(|a| {
            if a.is_empty() {
                return Err(Error::invalid(format!("album {} is empty", a.album_id)));
            }
            Ok(Prepared { id: a.album_id.clone(), geom: Geometry::from_album(a), gt: a.ground_truth()? })
        })
        .collect()
}

fn fit_or_constant(l: &MistakeSet, dim: usize, params: &SvmParams) -> Result<SvmModel> {
    let merges = l.as_slice().iter().filter(|(_, a)| *a == Action::Merge).count();
    if merges == 0 || merges == l.len() {
        let bias = if merges == 0 { -1.0 } else { 1.0 };
        return Ok(SvmModel::constant(dim, params.gamma_for(dim), params.c_reg, bias));
    }
    svm_fit(l.as_slice(), params)
}

/// Teacher-forced pass over one album; returns the agent's mistakes.
fn mistakes_on(p: &Prepared, model: &SvmModel, cfg: &PolicyConfig) -> Result<Vec<(FeatureVector, Action)>> {
    let policy = Policy::Myopic(model.clone());
    let trace = run_episode(&p.id, &p.geom, &policy, cfg, Mode::TeacherForced(&p.gt))?;
    Ok(trace
        .steps
        .into_iter()
        .filter_map(|s| {
            let expert = s.gt_action?;
            (expert != s.agent_action).then(|| (FeatureVector(s.features), expert))
        })
        .collect())
}

/// Learns the short-term reward from expert decisions.
pub fn irl_train(albums: &[Album], cfg: &PolicyConfig, irl: &IrlConfig) -> Result<IrlOutcome> {
    cfg.validate()?;
    irl.svm.validate()?;
    let prepared = prepare(albums)?;
    let dim = cfg.features.dim();
    let mut rng = rng::stream(irl.seed, 0);
    let mut model = SvmModel::random(dim, irl.svm.gamma_for(dim), irl.svm.c_reg, &mut rng);
    let mut l = MistakeSet::default();
    let mut epochs = Vec::new();
    let mut best: Option<(usize, SvmModel)> = None;
    let mut converged = false;

    for epoch in 1..=irl.max_epochs {
        let mut mistakes = 0;
        let mut solved = 0;
        match irl.retrain {
            RetrainCadence::PerAlbum => {
                for p in &prepared {
                    let found = mistakes_on(p, &model, cfg)?;
                    if found.is_empty() {
                        solved += 1;
                        continue;
                    }
                    mistakes += found.len();
                    for (phi, a) in found {
                        l.push(phi, a);
                    }
                    model = fit_or_constant(&l, dim, &irl.svm)?;
                }
            }
            RetrainCadence::PerEpoch => {
                let found: Vec<_> =
                    prepared.par_iter().map(|p| mistakes_on(p, &model, cfg)).collect::<Result<_>>()?;
                for album in found {
                    if album.is_empty() {
                        solved += 1;
                    }
                    mistakes += album.len();
                    for (phi, a) in album {
                        l.push(phi, a);
                    }
                }
                if mistakes > 0 {
                    model = fit_or_constant(&l, dim, &irl.svm)?;
                }
            }
        }
        epochs.push(EpochLog {
            epoch,
            mistakes,
            l_size: l.len(),
            albums_solved: solved,
            svm_train_accuracy: model.accuracy(l.as_slice())?,
        });
        if mistakes == 0 {
            converged = true;
            break;
        }
        if best.as_ref().is_none_or(|(m, _)| mistakes < *m) {
            best = Some((mistakes, model.clone()));
        }
    }
    if !converged {
        if let Some((_, m)) = best {
            model = m;
        }
    }
    Ok(IrlOutcome { model, converged, epochs, mistakes: l })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ShortReward {
    /// Signed margin of the learned reward model.
    Learned,
    /// +1 when the action matches the expert, -1 otherwise.
    PlusMinusOne,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct QConfig {
    pub episodes: usize,
    pub refit_every: usize,
    /// Fitted-Q sweeps per refit.
    pub fqi_sweeps: usize,
    pub buffer_capacity: usize,
    /// Also store the experience of the action not taken.
    pub counterfactual: bool,
    pub forest: ForestParams,
    pub encoding: QEncoding,
    pub short_reward: ShortReward,
    pub seed: u64,
}

impl Default for QConfig {
    fn default() -> Self {
        QConfig {
            episodes: 60,
            refit_every: 10,
            fqi_sweeps: 1,
            buffer_capacity: 100_000,
            counterfactual: false,
            forest: ForestParams::default(),
            encoding: QEncoding::ActionFlag,
            short_reward: ShortReward::Learned,
            seed: 0,
        }
    }
}

impl QConfig {
    pub fn validate(&self) -> Result<()> {
        if self.refit_every == 0 || self.fqi_sweeps == 0 {
            return Err(Error::invalid("refit_every and fqi_sweeps must be positive"));
        }
        if self.buffer_capacity == 0 {
            return Err(Error::invalid("buffer_capacity must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Experience {
    pub phi: FeatureVector,
    pub action: Action,
    pub reward: f64,
    /// Features of the next decision; `None` when the episode ends.
    pub next: Option<FeatureVector>,
}

/// FIFO buffer of past experiences.
#[derive(Debug, Clone)]
pub struct ExperienceBuffer {
    capacity: usize,
    items: VecDeque<Experience>,
}

impl ExperienceBuffer {
    pub fn new(capacity: usize) -> Self {
        ExperienceBuffer { capacity, items: VecDeque::new() }
    }

    pub fn push(&mut self, e: Experience) {
        if self.items.len() == self.capacity {
            self.items.pop_front();
        }
        self.items.push_back(e);
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Experience> {
        self.items.iter()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QEpisodeLog {
    pub episode: usize,
    pub album_id: String,
    pub epsilon: f64,
    pub steps: usize,
    pub merges: usize,
    pub total_reward: f64,
}

#[derive(Debug, Clone)]
pub struct QOutcome {
    pub model: QModel,
    pub episodes: Vec<QEpisodeLog>,
    pub buffer_len: usize,
}

struct Explorer<'a> {
    svm: &'a SvmModel,
    cfg: &'a PolicyConfig,
    short_reward: ShortReward,
    counterfactual: bool,
    rank: Policy,
}

struct Rollout {
    steps: usize,
    merges: usize,
    total_reward: f64,
    /// Myopic targets `(phi, a, R_short)` for both actions at every step.
    myopic: Vec<(FeatureVector, Action, f64)>,
}

impl Explorer<'_> {
    fn short(&self, phi: &FeatureVector, a: Action, expert: Action) -> Result<f64> {
        match self.short_reward {
            ShortReward::Learned => reward_short(self.svm, phi, a),
            ShortReward::PlusMinusOne => Ok(if a == expert { 1.0 } else { -1.0 }),
        }
    }

    /// One episode. Without `q` the expert action is executed; with it the
    /// epsilon-greedy choice is. Both actions are recorded at every step.
    fn rollout(
        &self,
        p: &Prepared,
        q: Option<&QModel>,
        epsilon: f64,
        stream: u64,
        seed: u64,
        buffer: &mut ExperienceBuffer,
    ) -> Result<Rollout> {
        let cfg = self.cfg;
        let mut ep = Episode::new(&p.geom, cfg, stream);
        let mut window = CostWindow::new(cfg.k_steps, &ep.state().partition);
        let mut rng = rng::stream(seed, stream);
        let mut out = Rollout { steps: 0, merges: 0, total_reward: 0.0, myopic: Vec::new() };

        while let Some(c) = ep.next_candidate(Some(&self.rank))? {
            let phi = ep.features(c)?;
            let expert = ground_truth_action(ep.state(), c, &p.gt, &cfg.costs)?;
            let executed = match q {
                None => expert,
                Some(q) => choose_action(q, &phi, epsilon, &mut rng)?,
            };
            for a in Action::ALL {
                if a != executed && !self.counterfactual && q.is_some() {
                    continue;
                }
                let next = ep.state().transition(c, a)?;
                let r_short = self.short(&phi, a, expert)?;
                let r_long = window.peek(&next.partition, &p.gt, &cfg.costs)?;
                let reward = r_short + cfg.beta * r_long;
                let next_phi = match ep.peek_candidate(&next, Some(&self.rank))? {
                    Some(nc) => Some(ep.features_in(&next, nc)?),
                    None => None,
                };
                if a == executed {
                    out.total_reward += reward;
                }
                out.myopic.push((phi.clone(), a, r_short));
                if a == executed || self.counterfactual {
                    buffer.push(Experience { phi: phi.clone(), action: a, reward, next: next_phi });
                }
            }
            ep.apply(c, executed)?;
            window.push(&ep.state().partition, &p.gt, &cfg.costs)?;
            out.steps += 1;
            out.merges += usize::from(executed == Action::Merge);
        }
        Ok(out)
    }
}

fn refit(buffer: &ExperienceBuffer, q: &QModel, gamma: f64, qcfg: &QConfig, round: u64) -> Result<QModel> {
    let items: Vec<&Experience> = buffer.iter().collect();
    let samples: Vec<(FeatureVector, Action, f64)> = items
        .par_iter()
        .map(|e| {
            let future = match &e.next {
                Some(next) => gamma * q.max_value(next)?,
                None => 0.0,
            };
            Ok((e.phi.clone(), e.action, e.reward + future))
        })
        .collect::<Result<_>>()?;
    let params = ForestParams { seed: qcfg.forest.seed.wrapping_add(round), ..qcfg.forest };
    QModel::fit(&samples, qcfg.encoding, &params)
}

/// Learns `Q(phi(s), a)` by epsilon-greedy fitted Q-iteration, starting
/// from the myopic values of the learned reward.
pub fn q_train(albums: &[Album], svm: &SvmModel, cfg: &PolicyConfig, qcfg: &QConfig) -> Result<QOutcome> {
    cfg.validate()?;
    qcfg.validate()?;
    if svm.dim != cfg.features.dim() {
        return Err(Error::DimensionMismatch { expected: cfg.features.dim(), actual: svm.dim });
    }
    let prepared = prepare(albums)?;
    let explorer = Explorer {
        svm,
        cfg,
        short_reward: qcfg.short_reward,
        counterfactual: qcfg.counterfactual,
        rank: Policy::Myopic(svm.clone()),
    };
    let mut buffer = ExperienceBuffer::new(qcfg.buffer_capacity);

    let mut myopic = Vec::new();
    for p in &prepared {
        let r = explorer.rollout(p, None, 0.0, rng::key(&p.id), qcfg.seed, &mut buffer)?;
        myopic.extend(r.myopic);
    }
    let mut q = QModel::fit(&myopic, qcfg.encoding, &qcfg.forest)?;
    drop(myopic);

    let mut order_rng = rng::stream(qcfg.seed, u64::MAX);
    let mut order: Vec<usize> = Vec::new();
    let mut log = Vec::with_capacity(qcfg.episodes);
    let mut round = 0u64;
    for episode in 0..qcfg.episodes {
        if order.is_empty() {
            order = (0..prepared.len()).collect();
            order.shuffle(&mut order_rng);
        }
        let p = &prepared[order.pop().expect("refilled above")];
        let epsilon = cfg.epsilon.at(episode);
        let stream = rng::key(&p.id) ^ (episode as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
        let r = explorer.rollout(p, Some(&q), epsilon, stream, qcfg.seed, &mut buffer)?;
        log.push(QEpisodeLog {
            episode,
            album_id: p.id.clone(),
            epsilon,
            steps: r.steps,
            merges: r.merges,
            total_reward: r.total_reward,
        });
        if (episode + 1) % qcfg.refit_every == 0 || episode + 1 == qcfg.episodes {
            for _ in 0..qcfg.fqi_sweeps {
                round += 1;
                q = refit(&buffer, &q, cfg.gamma, qcfg, round)?;
            }
        }
    }
    if qcfg.episodes == 0 {
        for _ in 0..qcfg.fqi_sweeps {
            round += 1;
            q = refit(&buffer, &q, cfg.gamma, qcfg, round)?;
        }
    }
    Ok(QOutcome { model: q, episodes: log, buffer_len: buffer.len() })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::{FaceItem, Label};

    fn item(id: &str, angle: f64, q: f64, label: &str) -> FaceItem {
        let t = angle * std::f64::consts::PI;
        FaceItem::new(id, vec![t.cos(), t.sin(), 0.0], q, Label::Identity(label.into()), false).unwrap()
    }

    fn easy_album(name: &str, offset: f64) -> Album {
        let mut items = Vec::new();
        for (k, base) in [0.0, 0.3, 0.6].iter().enumerate() {
            for j in 0..4 {
                let id = format!("{name}-{k}-{j}");
                items.push(item(&id, offset + base + 0.01 * j as f64, 0.9, &format!("p{k}")));
            }
        }
        Album::new(name, items).unwrap()
    }

    fn small_cfg() -> PolicyConfig {
        let mut cfg = PolicyConfig::default();
        cfg.recommender.tau = 0.45;
        cfg
    }

    #[test]
    fn separable_albums_converge_quickly() {
        let albums = vec![easy_album("a", 0.0), easy_album("b", 0.05)];
        let out = irl_train(&albums, &small_cfg(), &IrlConfig::default()).unwrap();
        assert!(out.converged);
        assert!(out.epochs.len() <= 3, "{:?}", out.epochs);
        assert_eq!(out.epochs.last().unwrap().mistakes, 0);
        assert!(out.epochs[0].l_size > 0);
        let sizes: Vec<usize> = out.epochs.iter().map(|e| e.l_size).collect();
        assert!(sizes.windows(2).all(|w| w[0] <= w[1]));
    }

    #[test]
    fn single_identity_album_merges_everything() {
        let items = (0..6).map(|j| item(&format!("x{j}"), 0.02 * j as f64, 0.9, "p")).collect();
        let album = Album::new("solo", items).unwrap();
        let cfg = small_cfg();
        let out = irl_train(std::slice::from_ref(&album), &cfg, &IrlConfig::default()).unwrap();
        let geom = Geometry::from_album(&album);
        let t = run_episode("solo", &geom, &Policy::Myopic(out.model), &cfg, Mode::Inference).unwrap();
        assert_eq!(t.final_partition.n_groups(), 1);
    }

    #[test]
    fn unlabeled_album_rejected() {
        let mut album = easy_album("a", 0.0);
        album.items[0].label = Label::Unknown;
        let err = irl_train(&[album], &small_cfg(), &IrlConfig::default()).unwrap_err();
        assert_eq!(err.category(), "invalid-argument");
        assert!(irl_train(&[], &small_cfg(), &IrlConfig::default()).is_err());
    }

    #[test]
    fn irl_is_reproducible() {
        let albums = vec![easy_album("a", 0.0), easy_album("b", 0.05)];
        let irl = IrlConfig { retrain: RetrainCadence::PerEpoch, ..Default::default() };
        let a = irl_train(&albums, &small_cfg(), &irl).unwrap();
        let b = irl_train(&albums, &small_cfg(), &irl).unwrap();
        assert_eq!(serde_json::to_string(&a.model).unwrap(), serde_json::to_string(&b.model).unwrap());
    }

    #[test]
    fn buffer_is_fifo_bounded() {
        let mut b = ExperienceBuffer::new(3);
        for i in 0..5 {
            b.push(Experience {
                phi: FeatureVector(vec![i as f64]),
                action: Action::Merge,
                reward: i as f64,
                next: None,
            });
        }
        assert_eq!(b.len(), 3);
        assert_eq!(b.iter().map(|e| e.reward).collect::<Vec<_>>(), vec![2.0, 3.0, 4.0]);
    }

    #[test]
    fn q_training_runs_and_is_reproducible() {
        let albums = vec![easy_album("a", 0.0), easy_album("b", 0.05)];
        let cfg = small_cfg();
        let svm = irl_train(&albums, &cfg, &IrlConfig::default()).unwrap().model;
        let qcfg = QConfig { episodes: 4, refit_every: 2, ..Default::default() };
        let a = q_train(&albums, &svm, &cfg, &qcfg).unwrap();
        let b = q_train(&albums, &svm, &cfg, &qcfg).unwrap();
        assert_eq!(a.model, b.model);
        assert_eq!(a.episodes.len(), 4);
        assert_eq!(a.episodes.last().unwrap().epsilon, cfg.epsilon.at(3));
        let g = Geometry::from_album(&albums[0]);
        let t = run_episode("a", &g, &Policy::Q(a.model), &cfg, Mode::Inference).unwrap();
        assert_eq!(t.final_partition.n_groups(), 3);
    }

    #[test]
    fn q_training_rejects_wrong_dimension() {
        let albums = vec![easy_album("a", 0.0)];
        let svm = SvmModel::constant(3, 1.0, 1.0, 1.0);
        let err = q_train(&albums, &svm, &small_cfg(), &QConfig::default()).unwrap_err();
        assert!(matches!(err, Error::DimensionMismatch { .. }));
    }
}
