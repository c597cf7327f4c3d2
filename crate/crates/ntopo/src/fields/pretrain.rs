//! Inverse-distance initialization of the segmentation network.
//!
//! The dense layer is fitted against a smooth inverse-distance target built
//! from seed points, so each segment starts as the Voronoi-like region of
//! its seed. Kernel frequencies stay at their grid initialization here; the
//! main optimization trains them afterwards.

use ndarray::{Array1, Array2, Axis};
use rand::Rng;

use crate::error::{Error, Result};
use crate::fields::SegNet;

#[derive(Debug, Clone)]
pub struct PretrainConfig {
    pub iters: usize,
    pub learning_rate: f64,
    /// Softening added to squared seed distances.
    pub distance_delta: f64,
    /// Cap on the number of grid points used for the fit.
    pub max_points: usize,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        PretrainConfig {
            iters: 500,
            learning_rate: 0.05,
            distance_delta: 1e-3,
            max_points: 4096,
        }
    }
}

/// Greedy farthest-point sampling over the candidate points.
pub fn farthest_point_seeds<R: Rng>(
    points: &Array2<f64>,
    count: usize,
    rng: &mut R,
) -> Result<Vec<[f64; 3]>> {
    let n = points.nrows();
    if count > n {
        return Err(Error::config(
            "optimization.segments",
            format!("{count} seeds requested but only {n} candidate points exist"),
        ));
    }
    let mut seeds: Vec<[f64; 3]> = Vec::with_capacity(count);
    let first = rng.random_range(0..n);
    seeds.push(point_at(points, first));
    let mut dist: Vec<f64> = (0..n)
        .map(|i| sq_dist(point_at(points, i), seeds[0]))
        .collect();
    while seeds.len() < count {
        let (best, _) = dist
            .iter()
            .enumerate()
            .fold((0, f64::MIN), |acc, (i, &d)| if d > acc.1 { (i, d) } else { acc });
        let s = point_at(points, best);
        seeds.push(s);
        for i in 0..n {
            let d = sq_dist(point_at(points, i), s);
            if d < dist[i] {
                dist[i] = d;
            }
        }
    }
    Ok(seeds)
}

fn point_at(points: &Array2<f64>, i: usize) -> [f64; 3] {
    [points[[i, 0]], points[[i, 1]], points[[i, 2]]]
}

fn sq_dist(a: [f64; 3], b: [f64; 3]) -> f64 {
    (a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)
}

/// Normalized inverse-squared-distance weights toward each seed.
pub fn inverse_distance_targets(
    points: &Array2<f64>,
    seeds: &[[f64; 3]],
    delta: f64,
) -> Array2<f64> {
    let n = points.nrows();
    let s = seeds.len();
    let mut target = Array2::zeros((n, s));
    for i in 0..n {
        let p = point_at(points, i);
        let mut total = 0.0;
        for (j, seed) in seeds.iter().enumerate() {
            let w = 1.0 / (sq_dist(p, *seed) + delta);
            target[[i, j]] = w;
            total += w;
        }
        for j in 0..s {
            target[[i, j]] /= total;
        }
    }
    target
}

/// Fit the dense layer of `net` so its output matches the inverse-distance
/// field of `seeds` over `points`. No-op for a single segment.
pub fn pretrain_segmentation(
    net: &mut SegNet,
    points: &Array2<f64>,
    seeds: &[[f64; 3]],
    cfg: &PretrainConfig,
) -> Result<()> {
    let segs = net.n_segments();
    if segs == 1 {
        return Ok(());
    }
    if seeds.len() != segs {
        return Err(Error::config(
            "optimization.segments",
            format!("{} seeds provided for {segs} segments", seeds.len()),
        ));
    }
    // Fixed-stride subsample keeps the fit cheap and deterministic.
    let stride = (points.nrows() + cfg.max_points - 1) / cfg.max_points;
    let sel: Vec<usize> = (0..points.nrows()).step_by(stride.max(1)).collect();
    let sub = points.select(Axis(0), &sel);
    let target = inverse_distance_targets(&sub, seeds, cfg.distance_delta);

    let phase = sub.dot(&net.kernels) + &net.kernel_bias;
    let features = phase.mapv(f64::cos); // (N,F)
    let n_inv = 1.0 / sub.nrows() as f64;

    let (beta1, beta2, eps): (f64, f64, f64) = (0.9, 0.999, 1e-8);
    let mut m_w = Array2::<f64>::zeros(net.weights.raw_dim());
    let mut v_w = Array2::<f64>::zeros(net.weights.raw_dim());
    let mut m_b = Array1::<f64>::zeros(net.bias.raw_dim());
    let mut v_b = Array1::<f64>::zeros(net.bias.raw_dim());

    for step in 1..=cfg.iters {
        let logits = features.dot(&net.weights) + &net.bias;
        let probs = softmax_rows(&logits);
        // d(MSE)/dZ through the softmax Jacobian.
        let d_out = (&probs - &target) * (2.0 * n_inv);
        let inner = (&probs * &d_out).sum_axis(Axis(1));
        let d_logits = &probs * &(&d_out - &inner.insert_axis(Axis(1)));
        let g_w = features.t().dot(&d_logits);
        let g_b = d_logits.sum_axis(Axis(0));

        let corr1 = 1.0 - beta1.powi(step as i32);
        let corr2 = 1.0 - beta2.powi(step as i32);
        ndarray::Zip::from(&mut net.weights)
            .and(&mut m_w)
            .and(&mut v_w)
            .and(&g_w)
            .for_each(|p, m, v, &g| {
                *m = beta1 * *m + (1.0 - beta1) * g;
                *v = beta2 * *v + (1.0 - beta2) * g * g;
                *p -= cfg.learning_rate * (*m / corr1) / ((*v / corr2).sqrt() + eps);
            });
        ndarray::Zip::from(&mut net.bias)
            .and(&mut m_b)
            .and(&mut v_b)
            .and(&g_b)
            .for_each(|p, m, v, &g| {
                *m = beta1 * *m + (1.0 - beta1) * g;
                *v = beta2 * *v + (1.0 - beta2) * g * g;
                *p -= cfg.learning_rate * (*m / corr1) / ((*v / corr2).sqrt() + eps);
            });
    }
    Ok(())
}

fn softmax_rows(logits: &Array2<f64>) -> Array2<f64> {
    let mut out = logits.clone();
    for mut row in out.rows_mut() {
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        row.mapv_inplace(|z| (z - max).exp());
        let total = row.sum();
        row.mapv_inplace(|e| e / total);
    }
    out
}
