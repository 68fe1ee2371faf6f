//! Local Outlier Factor baseline over per-trajectory summary features.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::metrics::MetricsReport;
use crate::labeler::{
    angular_change_series, curvature_series, forward_proximity, smoothed_acceleration, LabelerConfig,
};
use crate::scenario::AgentTrajectory;

/// Distances below this are treated as this, so duplicate points have a
/// finite density.
pub const DISTANCE_FLOOR: f64 = 1e-12;

pub const FEATURE_NAMES: [&str; 12] = [
    "speed_mean",
    "speed_std",
    "speed_max",
    "abs_sa_mean",
    "abs_sa_std",
    "abs_sa_max",
    "dtheta_mean",
    "dtheta_std",
    "dtheta_max",
    "curvature_max",
    "lane_cross_rate",
    "forward_min",
];

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LofConfig {
    pub k: usize,
    pub threshold: f64,
}

impl Default for LofConfig {
    fn default() -> Self {
        LofConfig { k: 20, threshold: 1.5 }
    }
}

impl LofConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(Error::Config("LOF k must be at least 1".into()));
        }
        if !(self.threshold > 0.0) {
            return Err(Error::Config("LOF threshold must be positive".into()));
        }
        Ok(())
    }
}

fn mean_std_max(xs: &[f64]) -> [f64; 3] {
    if xs.is_empty() {
        return [0.0; 3];
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    [mean, var.sqrt(), max]
}

/// Summary vector in [`FEATURE_NAMES`] order. Series too short for a
/// detector's stencil contribute zeros.
pub fn featurize_trajectory(traj: &AgentTrajectory, dt: f64, cfg: &LabelerConfig) -> [f64; 12] {
    let n = traj.len();
    let speeds = traj.speeds();
    let headings = traj.headings();
    let sa: Vec<f64> = smoothed_acceleration(&speeds, cfg.braking_window, dt)
        .unwrap_or_else(|_| vec![0.0; n])
        .into_iter()
        .map(f64::abs)
        .collect();
    let dtheta = angular_change_series(&headings).unwrap_or_else(|_| vec![0.0; n]);
    let k = curvature_series(&headings, cfg.zigzag_window, dt).unwrap_or_else(|_| vec![0.0; n]);
    let crossings = traj.lane_cross_flags.iter().filter(|&&c| c).count();
    let forward = forward_proximity(traj).into_iter().fold(f64::INFINITY, f64::min);

    let mut out = [0.0; 12];
    out[0..3].copy_from_slice(&mean_std_max(&speeds));
    out[3..6].copy_from_slice(&mean_std_max(&sa));
    out[6..9].copy_from_slice(&mean_std_max(&dtheta));
    out[9] = k.iter().copied().fold(0.0, f64::max);
    out[10] = if n == 0 { 0.0 } else { crossings as f64 / n as f64 };
    out[11] = if forward.is_finite() { forward } else { 0.0 };
    out
}

/// Per-column mean and standard deviation of a reference set.
#[derive(Debug, Clone, PartialEq)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Standardizer {
    /// Constant columns keep unit scale.
    pub fn fit(points: &[Vec<f64>]) -> Result<Self> {
        let d = check_points(points)?;
        let n = points.len() as f64;
        let mut mean = vec![0.0; d];
        for p in points {
            for (m, v) in mean.iter_mut().zip(p) {
                *m += v / n;
            }
        }
        let mut std = vec![0.0; d];
        for p in points {
            for ((s, v), m) in std.iter_mut().zip(p).zip(&mean) {
                *s += (v - m).powi(2) / n;
            }
        }
        for s in &mut std {
            *s = if *s > 0.0 { s.sqrt() } else { 1.0 };
        }
        Ok(Standardizer { mean, std })
    }

    pub fn transform(&self, p: &[f64]) -> Vec<f64> {
        p.iter()
            .zip(&self.mean)
            .zip(&self.std)
            .map(|((v, m), s)| (v - m) / s)
            .collect()
    }
}

fn check_points(points: &[Vec<f64>]) -> Result<usize> {
    let d = points.first().map(Vec::len).unwrap_or(0);
    if let Some(p) = points.iter().find(|p| p.len() != d) {
        return Err(Error::Shape {
            op: "lof points",
            left: vec![d],
            right: vec![p.len()],
        });
    }
    if points.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::invalid("LOF points must be finite"));
    }
    Ok(d)
}

fn distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).powi(2))
        .sum::<f64>()
        .sqrt()
        .max(DISTANCE_FLOOR)
}

/// Neighbourhood of a query: every reference point within its k-distance.
struct Neighborhood {
    k_distance: f64,
    members: Vec<(usize, f64)>,
}

fn neighborhood(query: &[f64], reference: &[Vec<f64>], k: usize, skip: Option<usize>) -> Neighborhood {
    let mut d: Vec<(usize, f64)> = reference
        .iter()
        .enumerate()
        .filter(|(j, _)| Some(*j) != skip)
        .map(|(j, r)| (j, distance(query, r)))
        .collect();
    d.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
    let k_distance = d[k - 1].1;
    let end = d.partition_point(|&(_, dist)| dist <= k_distance);
    d.truncate(end);
    Neighborhood { k_distance, members: d }
}

fn lrd(nb: &Neighborhood, k_dist: &[f64]) -> f64 {
    let reach: f64 = nb.members.iter().map(|&(j, d)| d.max(k_dist[j])).sum();
    nb.members.len() as f64 / reach
}

/// Fitted reference set: neighbourhoods, k-distances and densities.
struct LofModel<'a> {
    points: &'a [Vec<f64>],
    k: usize,
    k_dist: Vec<f64>,
    lrd: Vec<f64>,
    neighborhoods: Vec<Neighborhood>,
}

impl<'a> LofModel<'a> {
    fn fit(points: &'a [Vec<f64>], k: usize) -> Result<Self> {
        check_points(points)?;
        if k == 0 || points.len() < k + 1 {
            return Err(Error::invalid(format!(
                "LOF with k = {k} needs at least {} points, got {}",
                k + 1,
                points.len()
            )));
        }
        let neighborhoods: Vec<Neighborhood> = points
            .par_iter()
            .enumerate()
            .map(|(i, p)| neighborhood(p, points, k, Some(i)))
            .collect();
        let k_dist: Vec<f64> = neighborhoods.iter().map(|n| n.k_distance).collect();
        let lrd = neighborhoods.iter().map(|n| lrd(n, &k_dist)).collect();
        Ok(LofModel {
            points,
            k,
            k_dist,
            lrd,
            neighborhoods,
        })
    }

    fn factor(&self, nb: &Neighborhood, own_lrd: f64) -> f64 {
        let s: f64 = nb.members.iter().map(|&(j, _)| self.lrd[j]).sum();
        s / (nb.members.len() as f64 * own_lrd)
    }

    fn score(&self, query: &[f64]) -> f64 {
        let nb = neighborhood(query, self.points, self.k, None);
        self.factor(&nb, lrd(&nb, &self.k_dist))
    }
}

/// LOF of every point with respect to the rest of the set.
pub fn lof_scores(points: &[Vec<f64>], k: usize) -> Result<Vec<f64>> {
    let m = LofModel::fit(points, k)?;
    Ok((0..points.len())
        .map(|i| m.factor(&m.neighborhoods[i], m.lrd[i]))
        .collect())
}

/// Fits on `train` without labels and scores `test`; anomalous iff the LOF
/// exceeds the threshold.
pub fn lof_classify(train: &[Vec<f64>], test: &[Vec<f64>], cfg: &LofConfig) -> Result<(Vec<bool>, Vec<f64>)> {
    cfg.validate()?;
    let m = LofModel::fit(train, cfg.k)?;
    if let (Some(a), Some(b)) = (train.first(), test.first()) {
        if a.len() != b.len() {
            return Err(Error::Shape {
                op: "lof_classify",
                left: vec![a.len()],
                right: vec![b.len()],
            });
        }
    }
    check_points(test)?;
    let scores: Vec<f64> = test.par_iter().map(|q| m.score(q)).collect();
    let labels = scores.iter().map(|&s| s > cfg.threshold).collect();
    Ok((labels, scores))
}

/// The baseline protocol: standardize with `train` statistics, fit on the
/// standardized train points and report on `test`.
pub fn lof_evaluate(train: &[Vec<f64>], test: &[Vec<f64>], labels: &[bool], cfg: &LofConfig) -> Result<MetricsReport> {
    let z = Standardizer::fit(train)?;
    let train_z: Vec<Vec<f64>> = train.iter().map(|p| z.transform(p)).collect();
    let test_z: Vec<Vec<f64>> = test.iter().map(|p| z.transform(p)).collect();
    let (preds, scores) = lof_classify(&train_z, &test_z, cfg)?;
    MetricsReport::from_decisions(labels, &preds, &scores)
}
