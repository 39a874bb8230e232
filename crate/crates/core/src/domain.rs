//! Albums, partitions and the sequential-grouping MDP: state, action,
//! transition, and the expert (ground-truth) action.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::metrics;

/// Tolerance on `|embedding| = 1` at ingestion.
pub const UNIT_NORM_TOLERANCE: f64 = 1e-9;

/// Ground-truth annotation of one face.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Label {
    Identity(String),
    /// Uninteresting face or false detection; belongs to no identity.
    Noise,
    /// Not annotated. Rejected by training, skipped by evaluation.
    Unknown,
}

impl Label {
    pub const NOISE_TAG: &'static str = "NOISE";
}

impl Serialize for Label {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            Label::Identity(id) => s.serialize_str(id),
            Label::Noise => s.serialize_str(Self::NOISE_TAG),
            Label::Unknown => s.serialize_none(),
        }
    }
}

impl<'de> Deserialize<'de> for Label {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        Ok(match Option::<String>::deserialize(d)? {
            None => Label::Unknown,
            Some(s) if s == Self::NOISE_TAG => Label::Noise,
            Some(s) => Label::Identity(s),
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FaceItem {
    pub item_id: String,
    pub embedding: Vec<f64>,
    pub quality: f64,
    pub label: Label,
}

impl FaceItem {
    /// Validates the unit-norm and quality invariants. With `normalize` set,
    /// a non-unit (but non-zero) embedding is rescaled instead of rejected.
    pub fn new(
        item_id: impl Into<String>,
        mut embedding: Vec<f64>,
        quality: f64,
        label: Label,
        normalize: bool,
    ) -> Result<Self> {
        let item_id = item_id.into();
        if embedding.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid(format!("item {item_id}: non-finite embedding")));
        }
        let norm = embedding.iter().map(|v| v * v).sum::<f64>().sqrt();
        if (norm - 1.0).abs() > UNIT_NORM_TOLERANCE {
            if !normalize {
                return Err(Error::invalid(format!(
                    "item {item_id}: embedding norm {norm} is not 1 (use --normalize to rescale)"
                )));
            }
            if norm == 0.0 {
                return Err(Error::invalid(format!("item {item_id}: zero embedding")));
            }
            embedding.iter_mut().for_each(|v| *v /= norm);
        }
        if !(0.0..=1.0).contains(&quality) {
            return Err(Error::invalid(format!(
                "item {item_id}: quality {quality} outside [0, 1]"
            )));
        }
        Ok(FaceItem { item_id, embedding, quality, label })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Album {
    pub album_id: String,
    pub items: Vec<FaceItem>,
}

impl Album {
    pub fn new(album_id: impl Into<String>, items: Vec<FaceItem>) -> Result<Self> {
        let album = Album { album_id: album_id.into(), items };
        album.validate()?;
        Ok(album)
    }

    pub fn validate(&self) -> Result<()> {
        let Some(first) = self.items.first() else {
            return Ok(());
        };
        let dim = first.embedding.len();
        if dim < 2 {
            return Err(Error::invalid(format!(
                "album {}: embedding dimension {dim} < 2",
                self.album_id
            )));
        }
        let mut seen = HashSet::with_capacity(self.items.len());
        for item in &self.items {
            if item.embedding.len() != dim {
                return Err(Error::DimensionMismatch { expected: dim, actual: item.embedding.len() });
            }
            if !seen.insert(item.item_id.as_str()) {
                return Err(Error::invalid(format!(
                    "album {}: duplicate item id {}",
                    self.album_id, item.item_id
                )));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.items.first().map_or(0, |i| i.embedding.len())
    }

    pub fn is_fully_labeled(&self) -> bool {
        self.items.iter().all(|i| i.label != Label::Unknown)
    }

    /// Ground-truth partition: one group per identity (in order of first
    /// appearance), every NOISE item a singleton. Fails on UNKNOWN labels.
    pub fn ground_truth(&self) -> Result<Partition> {
        if let Some(item) = self.items.iter().find(|i| i.label == Label::Unknown) {
            return Err(Error::invalid(format!(
                "album {}: item {} has no label",
                self.album_id, item.item_id
            )));
        }
        let indices: Vec<usize> = (0..self.items.len()).collect();
        Ok(self.partition_by_label(&indices))
    }

    /// Ground truth restricted to `indices` (re-indexed 0..indices.len()).
    pub(crate) fn partition_by_label(&self, indices: &[usize]) -> Partition {
        let mut by_identity: HashMap<&str, usize> = HashMap::new();
        let mut groups: Vec<Vec<usize>> = Vec::new();
        for (pos, &idx) in indices.iter().enumerate() {
            match &self.items[idx].label {
                Label::Identity(id) => match by_identity.get(id.as_str()) {
                    Some(&g) => groups[g].push(pos),
                    None => {
                        by_identity.insert(id, groups.len());
                        groups.push(vec![pos]);
                    }
                },
                _ => groups.push(vec![pos]),
            }
        }
        Partition::from_groups(indices.len(), groups).expect("label partition is a disjoint cover")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct GroupId(pub u64);

impl fmt::Display for GroupId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "g{}", self.0)
    }
}

/// Content hash of a group's sorted member set (FNV-1a, 64 bit).
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Fingerprint(pub u64);

impl Fingerprint {
    pub fn of(sorted_members: &[usize]) -> Self {
        const OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
        const PRIME: u64 = 0x0000_0100_0000_01b3;
        let mut h = OFFSET;
        for &m in sorted_members {
            for b in (m as u64).to_le_bytes() {
                h ^= u64::from(b);
                h = h.wrapping_mul(PRIME);
            }
        }
        Fingerprint(h)
    }
}

/// A disjoint cover of item indices `0..n_items` by non-empty groups.
///
/// Group ids are handed out monotonically and never reused, so a merged
/// group is always distinguishable from both of its parents.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Partition {
    groups: BTreeMap<GroupId, Vec<usize>>,
    n_items: usize,
    next_id: u64,
}

impl Partition {
    pub fn singletons(n_items: usize) -> Self {
        let groups = (0..n_items).map(|i| (GroupId(i as u64), vec![i])).collect();
        Partition { groups, n_items, next_id: n_items as u64 }
    }

    pub fn from_groups(n_items: usize, groups: Vec<Vec<usize>>) -> Result<Self> {
        let mut seen = vec![false; n_items];
        let mut out = BTreeMap::new();
        for (gi, mut members) in groups.into_iter().enumerate() {
            if members.is_empty() {
                return Err(Error::invalid(format!("group {gi} is empty")));
            }
            for &m in &members {
                if m >= n_items {
                    return Err(Error::invalid(format!("item {m} out of range 0..{n_items}")));
                }
                if std::mem::replace(&mut seen[m], true) {
                    return Err(Error::invalid(format!("item {m} appears in two groups")));
                }
            }
            members.sort_unstable();
            out.insert(GroupId(gi as u64), members);
        }
        if let Some(missing) = seen.iter().position(|s| !s) {
            return Err(Error::invalid(format!("item {missing} is not covered")));
        }
        let next_id = out.len() as u64;
        Ok(Partition { groups: out, n_items, next_id })
    }

    /// Builds a partition from a per-item cluster label vector.
    pub fn from_assignment(labels: &[usize]) -> Self {
        let mut order: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
        for (i, &l) in labels.iter().enumerate() {
            order.entry(l).or_default().push(i);
        }
        let mut groups: Vec<Vec<usize>> = order.into_values().collect();
        groups.sort_by_key(|g| g[0]);
        Partition::from_groups(labels.len(), groups).expect("assignment is a disjoint cover")
    }

    pub fn n_items(&self) -> usize {
        self.n_items
    }

    pub fn n_groups(&self) -> usize {
        self.groups.len()
    }

    pub fn group(&self, id: GroupId) -> Option<&[usize]> {
        self.groups.get(&id).map(Vec::as_slice)
    }

    pub fn contains_group(&self, id: GroupId) -> bool {
        self.groups.contains_key(&id)
    }

    /// Groups in ascending id order.
    pub fn groups(&self) -> impl Iterator<Item = (GroupId, &[usize])> + '_ {
        self.groups.iter().map(|(&id, m)| (id, m.as_slice()))
    }

    pub fn group_ids(&self) -> Vec<GroupId> {
        self.groups.keys().copied().collect()
    }

    pub fn fingerprint(&self, id: GroupId) -> Option<Fingerprint> {
        self.group(id).map(Fingerprint::of)
    }

    /// Groups as sorted member lists, ordered by smallest member.
    pub fn canonical(&self) -> Vec<Vec<usize>> {
        let mut groups: Vec<Vec<usize>> = self.groups.values().cloned().collect();
        groups.sort_by_key(|g| g[0]);
        groups
    }

    /// Index of each item's group in `canonical()` order.
    pub fn assignment(&self) -> Vec<usize> {
        let mut out = vec![0; self.n_items];
        for (gi, g) in self.canonical().iter().enumerate() {
            for &m in g {
                out[m] = gi;
            }
        }
        out
    }

    /// Set-partition equality, ignoring group ids.
    pub fn same_grouping(&self, other: &Partition) -> bool {
        self.n_items == other.n_items && self.canonical() == other.canonical()
    }

    /// Sub-partition induced on `keep` (re-indexed to `0..keep.len()`).
    pub fn restrict(&self, keep: &[usize]) -> Partition {
        let assign = self.assignment();
        let labels: Vec<usize> = keep.iter().map(|&i| assign[i]).collect();
        Partition::from_assignment(&labels)
    }

    /// Replaces groups `a` and `b` by their union under a fresh id.
    pub fn merge(&mut self, a: GroupId, b: GroupId) -> Result<GroupId> {
        if a == b {
            return Err(Error::invalid(format!("cannot merge group {a} with itself")));
        }
        if !self.contains_group(a) || !self.contains_group(b) {
            return Err(Error::invalid(format!("unknown group in pair ({a}, {b})")));
        }
        let mut members = self.groups.remove(&a).unwrap();
        members.extend(self.groups.remove(&b).unwrap());
        members.sort_unstable();
        let id = GroupId(self.next_id);
        self.next_id += 1;
        self.groups.insert(id, members);
        Ok(id)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Action {
    Merge,
    NotMerge,
}

impl Action {
    pub const ALL: [Action; 2] = [Action::Merge, Action::NotMerge];

    /// `y(a)`: +1 for merge, -1 for not-merge.
    pub fn sign(self) -> f64 {
        match self {
            Action::Merge => 1.0,
            Action::NotMerge => -1.0,
        }
    }

    pub fn other(self) -> Action {
        match self {
            Action::Merge => Action::NotMerge,
            Action::NotMerge => Action::Merge,
        }
    }
}

/// Recommender history: every candidate pair already decided, keyed by the
/// unordered pair of member-set fingerprints.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct History {
    entries: BTreeMap<(Fingerprint, Fingerprint), Action>,
}

impl History {
    fn key(a: Fingerprint, b: Fingerprint) -> (Fingerprint, Fingerprint) {
        if a <= b { (a, b) } else { (b, a) }
    }

    pub fn contains(&self, a: Fingerprint, b: Fingerprint) -> bool {
        self.entries.contains_key(&Self::key(a, b))
    }

    pub fn action(&self, a: Fingerprint, b: Fingerprint) -> Option<Action> {
        self.entries.get(&Self::key(a, b)).copied()
    }

    /// Returns false (and leaves the history unchanged) on a duplicate pair.
    pub fn insert(&mut self, a: Fingerprint, b: Fingerprint, action: Action) -> bool {
        use std::collections::btree_map::Entry;
        match self.entries.entry(Self::key(a, b)) {
            Entry::Occupied(_) => false,
            Entry::Vacant(v) => {
                v.insert(action);
                true
            }
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Candidate pair of groups proposed by a recommender.
pub type Candidate = (GroupId, GroupId);

/// MDP state: current partition plus recommendation history.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct State {
    pub partition: Partition,
    pub history: History,
    pub step: usize,
}

impl State {
    /// Episode start: every item in its own group, empty history.
    pub fn initial(n_items: usize) -> Self {
        State { partition: Partition::singletons(n_items), history: History::default(), step: 0 }
    }

    /// Value-semantics transition; `self` is left untouched.
    pub fn transition(&self, candidate: Candidate, action: Action) -> Result<State> {
        let mut next = self.clone();
        next.apply(candidate, action)?;
        Ok(next)
    }

    /// In-place transition. On error the state is unchanged.
    pub fn apply(&mut self, (a, b): Candidate, action: Action) -> Result<Option<GroupId>> {
        let (Some(fa), Some(fb)) = (self.partition.fingerprint(a), self.partition.fingerprint(b))
        else {
            return Err(Error::invalid(format!("unknown group in candidate ({a}, {b})")));
        };
        if a == b {
            return Err(Error::invalid(format!("candidate pairs group {a} with itself")));
        }
        if self.history.contains(fa, fb) {
            return Err(Error::Precondition(format!(
                "candidate ({a}, {b}) already in history"
            )));
        }
        let merged = match action {
            Action::Merge => Some(self.partition.merge(a, b)?),
            Action::NotMerge => None,
        };
        self.history.insert(fa, fb, action);
        self.step += 1;
        Ok(merged)
    }
}

/// Positive per-operation costs of editing a partition.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CostModel {
    pub add: f64,
    pub remove: f64,
    pub merge: f64,
}

impl Default for CostModel {
    fn default() -> Self {
        CostModel { add: 1.0, remove: 6.0, merge: 1.0 }
    }
}

impl CostModel {
    pub fn new(add: f64, remove: f64, merge: f64) -> Result<Self> {
        let c = CostModel { add, remove, merge };
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("add", self.add), ("remove", self.remove), ("merge", self.merge)] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::invalid(format!("cost of {name} must be positive, got {v}")));
            }
        }
        Ok(())
    }
}

/// Expert action for `candidate`: merge iff merging strictly lowers the
/// operation cost to `gt`.
pub fn ground_truth_action(
    state: &State,
    candidate: Candidate,
    gt: &Partition,
    costs: &CostModel,
) -> Result<Action> {
    if gt.n_items() != state.partition.n_items() {
        return Err(Error::invalid(format!(
            "ground truth covers {} items, state covers {}",
            gt.n_items(),
            state.partition.n_items()
        )));
    }
    let mut merged = state.partition.clone();
    merged.merge(candidate.0, candidate.1)?;
    let before = metrics::op_cost(&state.partition, gt, costs)?.total_cost;
    let after = metrics::op_cost(&merged, gt, costs)?.total_cost;
    Ok(if after < before { Action::Merge } else { Action::NotMerge })
}
