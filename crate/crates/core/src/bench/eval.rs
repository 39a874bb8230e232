//! Evaluation: B-cubed precision/recall/F1 and normalized operation cost,
//! per album and macro-averaged.

use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::Config;
use crate::domain::{Album, CostModel, Label, Partition};
use crate::engine::{run_episode, EpisodeTrace, Mode, Policy, PolicyConfig};
use crate::error::{Error, Result};
use crate::features::Geometry;
use crate::metrics::{bcubed, normalized_op};
use crate::train::{irl_train, q_train};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlbumMetrics {
    pub album_id: String,
    /// Items with a known label; the others are left out of every metric.
    pub n_items: usize,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub op: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub op: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub costs: CostModel,
    pub summary: Summary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub costs: CostModel,
    pub macro_avg: Summary,
    pub albums: Vec<AlbumMetrics>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub sweep: Option<Vec<SweepPoint>>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub config: Option<Config>,
}

pub fn evaluate_album(album: &Album, pred: &Partition, costs: &CostModel) -> Result<AlbumMetrics> {
    if pred.n_items() != album.len() {
        return Err(Error::invalid(format!(
            "album {}: partition covers {} items, album has {}",
            album.album_id,
            pred.n_items(),
            album.len()
        )));
    }
    let keep: Vec<usize> = (0..album.len()).filter(|&i| album.items[i].label != Label::Unknown).collect();
    if keep.is_empty() {
        return Err(Error::invalid(format!("album {} has no labeled items", album.album_id)));
    }
    let gt = album.partition_by_label(&keep);
    let pred = pred.restrict(&keep);
    let s = bcubed(&pred, &gt)?;
    Ok(AlbumMetrics {
        album_id: album.album_id.clone(),
        n_items: keep.len(),
        precision: s.precision,
        recall: s.recall,
        f1: s.f1,
        op: normalized_op(&pred, &gt, costs, keep.len())?,
    })
}

fn macro_avg(albums: &[AlbumMetrics]) -> Summary {
    let n = albums.len().max(1) as f64;
    let mean = |f: fn(&AlbumMetrics) -> f64| albums.iter().map(f).sum::<f64>() / n;
    Summary {
        precision: mean(|a| a.precision),
        recall: mean(|a| a.recall),
        f1: mean(|a| a.f1),
        op: mean(|a| a.op),
    }
}

pub fn evaluate(albums: &[Album], preds: &[Partition], costs: &CostModel) -> Result<Report> {
    if albums.len() != preds.len() {
        return Err(Error::invalid("one partition per album is required"));
    }
    if albums.is_empty() {
        return Err(Error::invalid("nothing to evaluate"));
    }
    let per: Vec<AlbumMetrics> =
        albums.par_iter().zip(preds).map(|(a, p)| evaluate_album(a, p, costs)).collect::<Result<_>>()?;
    Ok(Report { costs: *costs, macro_avg: macro_avg(&per), albums: per, sweep: None, config: None })
}

/// Runs `policy` on every album without looking at labels.
pub fn group_albums(albums: &[Album], policy: &Policy, cfg: &PolicyConfig) -> Result<Vec<EpisodeTrace>> {
    albums
        .par_iter()
        .map(|a| run_episode(&a.album_id, &Geometry::from_album(a), policy, cfg, Mode::Inference))
        .collect()
}

pub fn final_partitions(traces: Vec<EpisodeTrace>) -> Vec<Partition> {
    traces.into_iter().map(|t| t.final_partition).collect()
}

/// Full two-stage training on `train`, returning the greedy Q policy.
pub fn train_policy(train: &[Album], cfg: &Config) -> Result<Policy> {
    let irl = irl_train(train, &cfg.policy, &cfg.irl)?;
    let q = q_train(train, &irl.model, &cfg.policy, &cfg.q)?;
    Ok(Policy::Q(q.model))
}

/// Retrains under each cost model and evaluates on `test` with that model.
pub fn cost_sweep(train: &[Album], test: &[Album], cfg: &Config, costs: &[CostModel]) -> Result<Vec<SweepPoint>> {
    costs
        .iter()
        .map(|c| {
            let mut run = *cfg;
            run.policy.costs = *c;
            let policy = train_policy(train, &run)?;
            let preds = final_partitions(group_albums(test, &policy, &run.policy)?);
            Ok(SweepPoint { costs: *c, summary: evaluate(test, &preds, c)?.macro_avg })
        })
        .collect()
}

/// Parses `add,remove,merge` triples separated by `;`.
pub fn parse_cost_list(text: &str) -> Result<Vec<CostModel>> {
    text.split(';')
        .filter(|s| !s.trim().is_empty())
        .map(|triple| {
            let v: Vec<f64> = triple
                .split(',')
                .map(|x| x.trim().parse::<f64>().map_err(|_| Error::invalid(format!("bad cost value in {triple:?}"))))
                .collect::<Result<_>>()?;
            match v.as_slice() {
                [a, r, m] => CostModel::new(*a, *r, *m),
                _ => Err(Error::invalid(format!("cost triple {triple:?} needs add,remove,merge"))),
            }
        })
        .collect()
}

fn pct(x: f64) -> String {
    format!("{:.1}", 100.0 * x)
}

/// Human-readable table.
pub fn render_table(report: &Report) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "{:<16} {:>6} {:>6} {:>6} {:>6} {:>6}", "album", "items", "P(%)", "R(%)", "F1(%)", "Op");
    for a in &report.albums {
        let _ = writeln!(
            out,
            "{:<16} {:>6} {:>6} {:>6} {:>6} {:>6.3}",
            a.album_id,
            a.n_items,
            pct(a.precision),
            pct(a.recall),
            pct(a.f1),
            a.op
        );
    }
    let m = &report.macro_avg;
    let _ = writeln!(
        out,
        "{:<16} {:>6} {:>6} {:>6} {:>6} {:>6.3}",
        "macro",
        "",
        pct(m.precision),
        pct(m.recall),
        pct(m.f1),
        m.op
    );
    if let Some(sweep) = &report.sweep {
        let _ = writeln!(out, "\ncost sweep (add,remove,merge)");
        for p in sweep {
            let c = p.costs;
            let s = p.summary;
            let _ = writeln!(
                out,
                "{:<16} {:>6} {:>6} {:>6} {:>6} {:>6.3}",
                format!("{},{},{}", c.add, c.remove, c.merge),
                "",
                pct(s.precision),
                pct(s.recall),
                pct(s.f1),
                s.op
            );
        }
    }
    out
}
