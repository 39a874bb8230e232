//! Synthetic albums with frontal, profile and noise faces.
//!
//! Each identity gets a center drawn uniformly on the unit sphere. Frontal
//! faces are `normalize(center + s_f * z)` and profile faces
//! `normalize(center + w * u + s_p * z)`, where `z ~ N(0, I/d)` and `u` is a
//! pose direction shared by the whole album, so profiles of different people
//! drift toward each other. Noise faces are `normalize(p * u + v)` with `v`
//! uniform on the sphere, so `p = 0` gives uniform noise. Every
//! album draws from its own ChaCha8 stream `(seed, album index)`.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::domain::{Album, FaceItem, Label};
use crate::error::{Error, Result};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct QualityModel {
    pub frontal_mean: f64,
    pub profile_mean: f64,
    pub noise_mean: f64,
    /// Standard deviation around each mean; draws are clamped to [0, 1].
    pub jitter: f64,
}

impl Default for QualityModel {
    fn default() -> Self {
        QualityModel { frontal_mean: 0.85, profile_mean: 0.6, noise_mean: 0.45, jitter: 0.25 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimConfig {
    pub n_albums: usize,
    /// Inclusive range of identities per album.
    pub identities: [usize; 2],
    /// Inclusive range of faces per identity; ignored when `album_size` is set.
    pub items_per_identity: [usize; 2],
    /// Inclusive range of album sizes, noise included.
    pub album_size: Option<[usize; 2]>,
    pub dim: usize,
    pub frontal_spread: f64,
    pub profile_fraction: f64,
    pub profile_spread: f64,
    /// Weight of the album-wide pose direction in profile faces.
    pub profile_shift: f64,
    pub noise_fraction: f64,
    /// Weight of the album-wide pose direction in noise faces.
    pub noise_pull: f64,
    pub quality: QualityModel,
    pub seed: u64,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            n_albums: 20,
            identities: [3, 8],
            items_per_identity: [3, 12],
            album_size: Some([30, 80]),
            dim: 256,
            frontal_spread: 0.35,
            profile_fraction: 0.1,
            profile_spread: 0.3,
            profile_shift: 1.5,
            noise_fraction: 0.15,
            noise_pull: 1.0,
            quality: QualityModel::default(),
            seed: 0,
        }
    }
}

fn check_range(name: &str, r: [usize; 2]) -> Result<()> {
    if r[0] == 0 || r[0] > r[1] {
        return Err(Error::invalid(format!("{name} range must satisfy 1 <= min <= max, got {r:?}")));
    }
    Ok(())
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        check_range("identities", self.identities)?;
        check_range("items_per_identity", self.items_per_identity)?;
        if let Some(r) = self.album_size {
            check_range("album_size", r)?;
        }
        if self.dim < 2 {
            return Err(Error::invalid("embedding dimension must be at least 2"));
        }
        let fractions = [self.profile_fraction, self.noise_fraction];
        if fractions.iter().any(|f| !(0.0..=1.0).contains(f)) || self.profile_fraction + self.noise_fraction > 1.0 {
            return Err(Error::invalid("profile and noise fractions must lie in [0, 1] and sum to at most 1"));
        }
        if self.noise_fraction >= 1.0 {
            return Err(Error::invalid("noise fraction must be below 1"));
        }
        let q = &self.quality;
        let spreads = [self.frontal_spread, self.profile_spread, self.profile_shift, self.noise_pull, q.jitter];
        if spreads.iter().any(|s| !(s.is_finite() && *s >= 0.0)) {
            return Err(Error::invalid("spreads and jitter must be finite and non-negative"));
        }
        if [q.frontal_mean, q.profile_mean, q.noise_mean].iter().any(|m| !(0.0..=1.0).contains(m)) {
            return Err(Error::invalid("quality means must lie in [0, 1]"));
        }
        Ok(())
    }
}

fn unit(v: Vec<f64>) -> Vec<f64> {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.into_iter().map(|x| x / n).collect()
}

fn gaussian(rng: &mut impl Rng, dim: usize, scale: f64) -> Vec<f64> {
    (0..dim)
        .map(|_| {
            let x: f64 = StandardNormal.sample(&mut *rng);
            scale * x
        })
        .collect()
}

fn on_sphere(rng: &mut impl Rng, dim: usize) -> Vec<f64> {
    loop {
        let v = gaussian(rng, dim, 1.0);
        if v.iter().any(|x| *x != 0.0) {
            return unit(v);
        }
    }
}

/// `normalize(base + spread * z)` with `z ~ N(0, I/d)`.
fn perturb(rng: &mut impl Rng, base: &[f64], spread: f64) -> Vec<f64> {
    let scale = spread / (base.len() as f64).sqrt();
    let z = gaussian(rng, base.len(), scale);
    unit(base.iter().zip(z).map(|(b, e)| b + e).collect())
}

fn quality(rng: &mut impl Rng, mean: f64, jitter: f64) -> f64 {
    let q = if jitter > 0.0 {
        Normal::new(mean, jitter).expect("validated jitter").sample(rng)
    } else {
        mean
    };
    q.clamp(0.0, 1.0)
}

#[derive(Clone, Copy, PartialEq)]
enum Kind {
    Frontal,
    Profile,
    Noise,
}

fn album(cfg: &SimConfig, index: usize) -> Album {
    let mut rng = rng::stream(cfg.seed, index as u64);
    let r = &mut rng;
    let n_ids = r.random_range(cfg.identities[0]..=cfg.identities[1]);

    // identity of each non-noise face
    let (owners, n_noise) = match cfg.album_size {
        Some([lo, hi]) => {
            let n = r.random_range(lo..=hi);
            let n_noise = ((cfg.noise_fraction * n as f64).round() as usize).min(n.saturating_sub(1));
            let m = n - n_noise;
            let n_ids = n_ids.min(m);
            let floor = if m >= 2 * n_ids { 2 } else { 1 };
            let mut owners: Vec<usize> = (0..n_ids).flat_map(|k| std::iter::repeat_n(k, floor)).collect();
            while owners.len() < m {
                owners.push(r.random_range(0..n_ids));
            }
            (owners, n_noise)
        }
        None => {
            let owners: Vec<usize> = (0..n_ids)
                .flat_map(|k| {
                    let c = r.random_range(cfg.items_per_identity[0]..=cfg.items_per_identity[1]);
                    std::iter::repeat_n(k, c)
                })
                .collect();
            let m = owners.len() as f64;
            let n_noise = (cfg.noise_fraction / (1.0 - cfg.noise_fraction) * m).round() as usize;
            (owners, n_noise)
        }
    };
    let n_total = owners.len() + n_noise;
    let n_profile = ((cfg.profile_fraction * n_total as f64).round() as usize).min(owners.len());

    let centers: Vec<Vec<f64>> = (0..n_ids).map(|_| on_sphere(r, cfg.dim)).collect();
    let pose = on_sphere(r, cfg.dim);
    let mut profile = vec![false; owners.len()];
    for i in rand::seq::index::sample(r, owners.len(), n_profile) {
        profile[i] = true;
    }

    let mut faces: Vec<(Kind, Option<usize>)> = owners
        .iter()
        .zip(&profile)
        .map(|(&k, &p)| (if p { Kind::Profile } else { Kind::Frontal }, Some(k)))
        .collect();
    faces.extend(std::iter::repeat_n((Kind::Noise, None), n_noise));
    faces.shuffle(r);

    let q = &cfg.quality;
    let album_id = format!("album-{index:03}");
    let items = faces
        .into_iter()
        .enumerate()
        .map(|(i, (kind, owner))| {
            let (embedding, mean) = match kind {
                Kind::Frontal => (perturb(r, &centers[owner.unwrap()], cfg.frontal_spread), q.frontal_mean),
                Kind::Profile => {
                    let c = &centers[owner.unwrap()];
                    let shifted: Vec<f64> = c.iter().zip(&pose).map(|(a, b)| a + cfg.profile_shift * b).collect();
                    (perturb(r, &unit(shifted), cfg.profile_spread), q.profile_mean)
                }
                Kind::Noise => {
                    let v = on_sphere(r, cfg.dim);
                    (unit(v.iter().zip(&pose).map(|(a, b)| a + cfg.noise_pull * b).collect()), q.noise_mean)
                }
            };
            let label = match owner {
                Some(k) => Label::Identity(format!("{album_id}/id{k}")),
                None => Label::Noise,
            };
            let quality = quality(r, mean, q.jitter);
            FaceItem::new(format!("{album_id}/f{i:03}"), embedding, quality, label, true)
                .expect("generated faces are unit-norm with quality in range")
        })
        .collect();
    Album::new(album_id, items).expect("generated album is valid")
}

/// Generates `cfg.n_albums` labeled albums.
pub fn simulate(cfg: &SimConfig) -> Result<Vec<Album>> {
    cfg.validate()?;
    Ok((0..cfg.n_albums).into_par_iter().map(|i| album(cfg, i)).collect())
}
