//! Closed-form implicit fields: topology density network, segmentation
//! network, per-segment print angles, and the product-rule combination of
//! the two fields with analytic gradients throughout.

mod params;
mod pretrain;
mod seg;
mod topo;

pub use params::{FieldGrads, FieldParams, ParamGroup, ParamLayout};
pub use pretrain::{farthest_point_seeds, pretrain_segmentation, PretrainConfig};
pub use seg::{SegGrads, SegNet, SegTrace};
pub use topo::{TopoGrads, TopoNet, TopoTrace};

use ndarray::{Array1, Array2, Array3, Axis};

use crate::error::{Error, Result};

/// Numerically stable logistic function.
#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Inverse of [`sigmoid`].
#[inline]
pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

pub(crate) fn check_points(points: &Array2<f64>) -> Result<()> {
    if points.ncols() != 3 {
        return Err(Error::invalid(format!(
            "points must have 3 components, got {}",
            points.ncols()
        )));
    }
    if !points.iter().all(|v| v.is_finite()) {
        return Err(Error::invalid("points contain non-finite coordinates"));
    }
    Ok(())
}

/// Evaluated field sample: densities, segment weights and spatial gradients
/// for one batch of points.
#[derive(Debug, Clone)]
pub struct SampleBatch {
    pub points: Array2<f64>,       // (N,3)
    pub density: Array1<f64>,      // ρ = T, (N)
    pub seg_weights: Array2<f64>,  // S, (N,S)
    pub spatial_grad: Array2<f64>, // ∇ρ = ∇T, (N,3)
    pub seg_density: Array2<f64>,  // ρ_s = T·S_s, (N,S)
    pub seg_grad: Array3<f64>,     // ∇ρ_s = S_s∇T + T∇S_s, (N,S,3)
}

impl SampleBatch {
    pub fn len(&self) -> usize {
        self.density.len()
    }

    pub fn is_empty(&self) -> bool {
        self.density.is_empty()
    }

    pub fn n_segments(&self) -> usize {
        self.seg_weights.ncols()
    }
}

/// Hadamard combination of topology and segmentation outputs with the
/// product rule applied to the gradients.
pub fn combine(
    points: Array2<f64>,
    density: Array1<f64>,
    density_grad: Array2<f64>,
    seg_weights: Array2<f64>,
    seg_grad: Array3<f64>,
) -> Result<SampleBatch> {
    let n = points.nrows();
    let s = seg_weights.ncols();
    if density.len() != n
        || density_grad.nrows() != n
        || seg_weights.nrows() != n
        || seg_grad.dim() != (n, s, 3)
    {
        return Err(Error::invalid(
            "combine: arrays must be aligned on the point count",
        ));
    }
    let seg_density = &seg_weights * &density.clone().insert_axis(Axis(1));
    let mut combined_grad = Array3::zeros((n, s, 3));
    for d in 0..3 {
        let t_grad_d = density_grad.column(d);
        let s_grad_d = seg_grad.index_axis(Axis(2), d);
        // ∇ρ_s = S_s·∇T + T·∇S_s
        let v = &seg_weights * &t_grad_d.insert_axis(Axis(1))
            + &(&s_grad_d * &density.clone().insert_axis(Axis(1)));
        combined_grad.index_axis_mut(Axis(2), d).assign(&v);
    }
    Ok(SampleBatch {
        points,
        density,
        seg_weights,
        spatial_grad: density_grad,
        seg_density,
        seg_grad: combined_grad,
    })
}

/// Upstream gradients mapped back through [`combine`] onto the raw
/// topology / segmentation outputs.
pub struct CombineUpstream {
    pub d_density: Array1<f64>,      // dL/dT
    pub d_density_grad: Array2<f64>, // dL/d∇T
    pub d_seg_weights: Array2<f64>,  // dL/dS
    pub d_seg_grad: Array3<f64>,     // dL/d∇S
}

/// Reverse of [`combine`]: push dL/dρ_s and dL/d∇ρ_s back to the raw
/// network outputs. `seg_spatial_grad` is the segmentation field's own
/// gradient ∇S (not the combined per-segment gradient).
pub fn combine_backprop(
    density: &Array1<f64>,
    density_grad: &Array2<f64>,
    seg_weights: &Array2<f64>,
    seg_spatial_grad: &Array3<f64>,
    d_seg_density: &Array2<f64>,
    d_seg_grad: &Array3<f64>,
) -> Result<CombineUpstream> {
    let n = density.len();
    let s = seg_weights.ncols();
    if d_seg_density.dim() != (n, s) || d_seg_grad.dim() != (n, s, 3) {
        return Err(Error::invalid(
            "combine_backprop: upstream arrays must match the batch shape",
        ));
    }
    let mut d_density = (d_seg_density * seg_weights).sum_axis(Axis(1));
    let mut d_density_grad = Array2::zeros((n, 3));
    let mut d_seg_weights = d_seg_density * &density.clone().insert_axis(Axis(1));
    let mut d_seg_grad_out = Array3::zeros((n, s, 3));
    for d in 0..3 {
        let g_d = d_seg_grad.index_axis(Axis(2), d);
        let t_grad_d = density_grad.column(d);
        // Through ∇ρ_s = S_s·∇T + T·∇S_s:
        d_density += &(&g_d * &seg_spatial_grad.index_axis(Axis(2), d)).sum_axis(Axis(1));
        d_density_grad
            .column_mut(d)
            .assign(&(&g_d * seg_weights).sum_axis(Axis(1)));
        d_seg_weights += &(&g_d * &t_grad_d.insert_axis(Axis(1)));
        d_seg_grad_out
            .index_axis_mut(Axis(2), d)
            .assign(&(&g_d * &density.clone().insert_axis(Axis(1))));
    }
    Ok(CombineUpstream {
        d_density,
        d_density_grad,
        d_seg_weights,
        d_seg_grad: d_seg_grad_out,
    })
}


#[cfg(test)]
mod tests {
    use super::testutil::*;
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn sample(seed: u64, n: usize, features: usize, segs: usize) -> (TopoNet, SegNet, Array2<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let topo = random_topo(&mut rng, features);
        let seg = random_seg(&mut rng, features, segs);
        let pts = random_points(&mut rng, n);
        (topo, seg, pts)
    }

    fn build_batch(topo: &TopoNet, seg: &SegNet, pts: &Array2<f64>) -> SampleBatch {
        let t = topo.forward(pts).unwrap();
        let tg = topo.spatial_gradient(pts).unwrap();
        let s = seg.forward(pts).unwrap();
        let sg = seg.spatial_gradient(pts).unwrap();
        combine(pts.clone(), t, tg, s, sg).unwrap()
    }

    #[test]
    fn single_segment_combination_is_identity() {
        let (topo, seg, pts) = sample(21, 9, 12, 1);
        let batch = build_batch(&topo, &seg, &pts);
        for n in 0..batch.len() {
            assert_eq!(batch.seg_density[[n, 0]], batch.density[n]);
            for d in 0..3 {
                assert_eq!(batch.seg_grad[[n, 0, d]], batch.spatial_grad[[n, d]]);
            }
        }
    }

    #[test]
    fn per_segment_densities_sum_to_total() {
        let (topo, seg, pts) = sample(22, 40, 16, 4);
        let batch = build_batch(&topo, &seg, &pts);
        for n in 0..batch.len() {
            let total: f64 = (0..4usize).map(|s| batch.seg_density[[n, s]]).sum();
            assert!((total - batch.density[n]).abs() < 1e-6);
        }
    }

    #[test]
    fn combined_gradient_matches_finite_differences() {
        let (topo, seg, pts) = sample(23, 6, 10, 3);
        let batch = build_batch(&topo, &seg, &pts);
        let scale = batch.seg_grad.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        for n in 0..batch.len() {
            for s in 0..3 {
                for d in 0..3 {
                    let fd = central_diff(1e-4, pts[[n, d]], |v| {
                        let mut p = pts.clone();
                        p[[n, d]] = v;
                        let t = topo.forward(&p).unwrap();
                        let w = seg.forward(&p).unwrap();
                        t[n] * w[[n, s]]
                    });
                    assert!(
                        grads_close(batch.seg_grad[[n, s, d]], fd, 1e-5, scale),
                        "n={n} s={s} d={d}"
                    );
                }
            }
        }
    }

    #[test]
    fn combine_rejects_misaligned_shapes() {
        let (topo, seg, pts) = sample(24, 5, 8, 2);
        let t = topo.forward(&pts).unwrap();
        let tg = topo.spatial_gradient(&pts).unwrap();
        let s = seg.forward(&pts).unwrap();
        let sg = seg.spatial_gradient(&pts).unwrap();
        let bad = combine(
            pts.slice(ndarray::s![..3, ..]).to_owned(),
            t,
            tg,
            s,
            sg,
        );
        assert!(bad.is_err());
    }
}
