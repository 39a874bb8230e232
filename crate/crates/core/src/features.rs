//! Feature vector describing a candidate group pair: face similarity
//! (median-distance blocks), group consistency and face quality.

use serde::{Deserialize, Serialize};

use crate::domain::{Album, Candidate, State};
use crate::error::{Error, Result};

/// Angular distance `arccos(<x, y>) / pi`, in `[0, 1]`.
pub fn angular_distance(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::DimensionMismatch { expected: x.len(), actual: y.len() });
    }
    let dot: f64 = x.iter().zip(y).map(|(a, b)| a * b).sum();
    Ok(dot.clamp(-1.0, 1.0).acos() / std::f64::consts::PI)
}

/// Median with the mean-of-central-pair convention. Reorders `values`.
pub(crate) fn median(values: &mut [f64]) -> f64 {
    debug_assert!(!values.is_empty());
    values.sort_unstable_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

/// Label-free view of an album: pairwise angular distances and qualities.
///
/// Everything downstream of ingestion at inference time sees only this.
#[derive(Debug, Clone)]
pub struct Geometry {
    n: usize,
    distances: Vec<f64>,
    qualities: Vec<f64>,
}

impl Geometry {
    pub fn from_album(album: &Album) -> Self {
        let embeddings: Vec<&[f64]> = album.items.iter().map(|i| i.embedding.as_slice()).collect();
        let qualities = album.items.iter().map(|i| i.quality).collect();
        Self::build(&embeddings, qualities).expect("album embeddings share one dimension")
    }

    pub fn from_embeddings(embeddings: &[Vec<f64>], qualities: Vec<f64>) -> Result<Self> {
        let refs: Vec<&[f64]> = embeddings.iter().map(Vec::as_slice).collect();
        Self::build(&refs, qualities)
    }

    fn build(embeddings: &[&[f64]], qualities: Vec<f64>) -> Result<Self> {
        let n = embeddings.len();
        if qualities.len() != n {
            return Err(Error::DimensionMismatch { expected: n, actual: qualities.len() });
        }
        let mut distances = vec![0.0; n * n];
        for i in 0..n {
            for j in i + 1..n {
                let d = angular_distance(embeddings[i], embeddings[j])?;
                distances[i * n + j] = d;
                distances[j * n + i] = d;
            }
        }
        Ok(Geometry { n, distances, qualities })
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    #[inline]
    pub fn distance(&self, i: usize, j: usize) -> f64 {
        self.distances[i * self.n + j]
    }

    pub fn quality(&self, i: usize) -> f64 {
        self.qualities[i]
    }
}

/// Median distance from item `x` to the members of `group`.
pub fn median_distance(geom: &Geometry, x: usize, group: &[usize]) -> Result<f64> {
    if group.is_empty() {
        return Err(Error::invalid("median distance to an empty group"));
    }
    let mut d: Vec<f64> = group.iter().map(|&m| geom.distance(x, m)).collect();
    Ok(median(&mut d))
}

/// The `eta` smallest median distances from members of `from` to `to`,
/// ascending, padded with the largest of them when `from` is small.
pub fn similarity_block(geom: &Geometry, from: &[usize], to: &[usize], eta: usize) -> Result<Vec<f64>> {
    if from.is_empty() || to.is_empty() {
        return Err(Error::invalid("similarity block of an empty group"));
    }
    let mut meds = from
        .iter()
        .map(|&x| median_distance(geom, x, to))
        .collect::<Result<Vec<_>>>()?;
    meds.sort_unstable_by(f64::total_cmp);
    meds.truncate(eta);
    let pad = *meds.last().expect("non-empty");
    meds.resize(eta, pad);
    Ok(meds)
}

/// Median pairwise distance inside `group`; 0 for groups smaller than 2.
pub fn consistency(geom: &Geometry, group: &[usize]) -> f64 {
    if group.len() < 2 {
        return 0.0;
    }
    let mut d = Vec::with_capacity(group.len() * (group.len() - 1) / 2);
    for (k, &u) in group.iter().enumerate() {
        for &v in &group[k + 1..] {
            d.push(geom.distance(u, v));
        }
    }
    median(&mut d)
}

/// The `eta` best qualities in `group`, descending, padded with the worst.
pub fn quality_block(geom: &Geometry, group: &[usize], eta: usize) -> Vec<f64> {
    let mut q: Vec<f64> = group.iter().map(|&m| geom.quality(m)).collect();
    q.sort_unstable_by(|a, b| b.total_cmp(a));
    let worst = q.last().copied().unwrap_or(0.0);
    q.truncate(eta);
    q.resize(eta, worst);
    q
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct FeatureConfig {
    /// Faces per group summarised in the similarity and quality blocks.
    pub eta: usize,
    /// Drop the quality blocks (ablation).
    pub include_quality: bool,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        FeatureConfig { eta: 5, include_quality: true }
    }
}

impl FeatureConfig {
    pub fn dim(&self) -> usize {
        if self.include_quality { 4 * self.eta + 2 } else { 2 * self.eta + 2 }
    }

    pub fn validate(&self) -> Result<()> {
        if self.eta == 0 {
            return Err(Error::invalid("eta must be positive"));
        }
        Ok(())
    }
}

/// Layout: `[sim(i->j) | sim(j->i) | cons(i) | cons(j) | qual(i) | qual(j)]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct FeatureVector(pub Vec<f64>);

impl FeatureVector {
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Features of two explicit member lists.
pub fn pair_features(geom: &Geometry, ci: &[usize], cj: &[usize], cfg: &FeatureConfig) -> Result<FeatureVector> {
    let eta = cfg.eta;
    let mut v = Vec::with_capacity(cfg.dim());
    v.extend(similarity_block(geom, ci, cj, eta)?);
    v.extend(similarity_block(geom, cj, ci, eta)?);
    v.push(consistency(geom, ci));
    v.push(consistency(geom, cj));
    if cfg.include_quality {
        v.extend(quality_block(geom, ci, eta));
        v.extend(quality_block(geom, cj, eta));
    }
    Ok(FeatureVector(v))
}

/// `phi(s)` for the candidate pair in `state`.
pub fn extract_features(
    geom: &Geometry,
    state: &State,
    (a, b): Candidate,
    cfg: &FeatureConfig,
) -> Result<FeatureVector> {
    let (Some(ci), Some(cj)) = (state.partition.group(a), state.partition.group(b)) else {
        return Err(Error::invalid(format!("unknown group in candidate ({a}, {b})")));
    };
    pair_features(geom, ci, cj, cfg)
}
