//! Segmentation network: cosine feature layer, dense layer with one neuron
//! per segment, softmax output. Rows of the output are a partition of unity.

use ndarray::{Array1, Array2, Array3, Axis};

use crate::error::{Error, Result};
use crate::fields::check_points;

#[derive(Debug, Clone, PartialEq)]
pub struct SegNet {
    pub kernels: Array2<f64>,     // (3, F)
    pub kernel_bias: Array1<f64>, // (F)
    pub weights: Array2<f64>,     // (F, S)
    pub bias: Array1<f64>,        // (S)
}

pub struct SegTrace {
    pub cos_phase: Array2<f64>, // (N,F)
    pub sin_phase: Array2<f64>, // (N,F)
    pub weights_out: Array2<f64>, // softmax probabilities, (N,S)
    /// Spatial gradient of each logit, dz_s/dX, (N,S,3).
    pub logit_grad: Array3<f64>,
}

impl SegTrace {
    pub fn footprint_bytes(&self) -> usize {
        8 * (self.cos_phase.len()
            + self.sin_phase.len()
            + self.weights_out.len()
            + self.logit_grad.len())
    }
}

#[derive(Debug, Clone)]
pub struct SegGrads {
    pub kernels: Array2<f64>,
    pub kernel_bias: Array1<f64>,
    pub weights: Array2<f64>,
    pub bias: Array1<f64>,
}

impl SegGrads {
    pub fn zeros(net: &SegNet) -> Self {
        SegGrads {
            kernels: Array2::zeros(net.kernels.raw_dim()),
            kernel_bias: Array1::zeros(net.kernel_bias.raw_dim()),
            weights: Array2::zeros(net.weights.raw_dim()),
            bias: Array1::zeros(net.bias.raw_dim()),
        }
    }

    pub fn add_assign(&mut self, other: &SegGrads) {
        self.kernels += &other.kernels;
        self.kernel_bias += &other.kernel_bias;
        self.weights += &other.weights;
        self.bias += &other.bias;
    }
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

/// Per-row `Σ_s a[n,s]·b[n,s]`, returned as (N).
fn row_dot(a: &Array2<f64>, b: &Array2<f64>) -> Array1<f64> {
    (a * b).sum_axis(Axis(1))
}

/// Apply the softmax Jacobian at probabilities `p` to upstream `u`
/// row-wise: J·u = p ∘ (u − ⟨p,u⟩).
fn softmax_jacobian_apply(p: &Array2<f64>, u: &Array2<f64>) -> Array2<f64> {
    let inner = row_dot(p, u);
    p * &(u - &inner.insert_axis(Axis(1)))
}

impl SegNet {
    pub fn new(
        kernels: Array2<f64>,
        kernel_bias: Array1<f64>,
        weights: Array2<f64>,
        bias: Array1<f64>,
    ) -> Result<Self> {
        let f = kernels.ncols();
        let s = weights.ncols();
        if kernels.nrows() != 3 || f == 0 {
            return Err(Error::invalid("segmentation kernels must be 3×F with F > 0"));
        }
        if s == 0 {
            return Err(Error::invalid("segment count must be ≥ 1"));
        }
        if kernel_bias.len() != f || weights.nrows() != f || bias.len() != s {
            return Err(Error::invalid(
                "segmentation parameter shapes are inconsistent",
            ));
        }
        let net = SegNet {
            kernels,
            kernel_bias,
            weights,
            bias,
        };
        net.check_finite()?;
        Ok(net)
    }

    pub fn n_features(&self) -> usize {
        self.kernel_bias.len()
    }

    pub fn n_segments(&self) -> usize {
        self.bias.len()
    }

    pub fn check_finite(&self) -> Result<()> {
        let ok = self.kernels.iter().all(|v| v.is_finite())
            && self.kernel_bias.iter().all(|v| v.is_finite())
            && self.weights.iter().all(|v| v.is_finite())
            && self.bias.iter().all(|v| v.is_finite());
        if ok {
            Ok(())
        } else {
            Err(Error::invalid(
                "segmentation network has non-finite parameters",
            ))
        }
    }

    /// Segment weights at `points`, (N,S); each row sums to one.
    pub fn forward(&self, points: &Array2<f64>) -> Result<Array2<f64>> {
        self.check_finite()?;
        check_points(points)?;
        let phase = points.dot(&self.kernels) + &self.kernel_bias;
        let logits = phase.mapv(f64::cos).dot(&self.weights) + &self.bias;
        Ok(softmax_rows(&logits))
    }

    pub fn forward_with_trace(&self, points: &Array2<f64>) -> Result<SegTrace> {
        self.check_finite()?;
        check_points(points)?;
        let phase = points.dot(&self.kernels) + &self.kernel_bias;
        let mut cos_phase = Array2::zeros(phase.raw_dim());
        let mut sin_phase = Array2::zeros(phase.raw_dim());
        ndarray::Zip::from(&phase)
            .and(&mut cos_phase)
            .and(&mut sin_phase)
            .for_each(|&a, c, s| {
                let (sv, cv) = a.sin_cos();
                *c = cv;
                *s = sv;
            });
        let logits = cos_phase.dot(&self.weights) + &self.bias;
        let weights_out = softmax_rows(&logits);

        let n = points.nrows();
        let s = self.n_segments();
        let mut logit_grad = Array3::zeros((n, s, 3));
        for d in 0..3 {
            // dz/dx_d = -(sin ∘ K_d) · W
            let basis = &sin_phase * &self.kernels.row(d);
            let v = -basis.dot(&self.weights); // (N,S)
            logit_grad.index_axis_mut(Axis(2), d).assign(&v);
        }
        Ok(SegTrace {
            cos_phase,
            sin_phase,
            weights_out,
            logit_grad,
        })
    }

    /// Analytic spatial gradient dS/dX, (N,S,3). Each per-point component
    /// sums to zero across segments.
    pub fn spatial_gradient(&self, points: &Array2<f64>) -> Result<Array3<f64>> {
        let trace = self.forward_with_trace(points)?;
        Ok(Self::spatial_gradient_from_trace(&trace))
    }

    pub fn spatial_gradient_from_trace(trace: &SegTrace) -> Array3<f64> {
        let (n, s, _) = trace.logit_grad.dim();
        let mut out = Array3::zeros((n, s, 3));
        for d in 0..3 {
            let v = trace.logit_grad.index_axis(Axis(2), d).to_owned();
            out.index_axis_mut(Axis(2), d)
                .assign(&softmax_jacobian_apply(&trace.weights_out, &v));
        }
        out
    }

    /// Accumulate parameter gradients for upstream dL/dS (`d_weights_out`,
    /// (N,S)) and dL/d∇S (`d_gradient`, (N,S,3)).
    pub fn backprop(
        &self,
        points: &Array2<f64>,
        trace: &SegTrace,
        d_weights_out: &Array2<f64>,
        d_gradient: &Array3<f64>,
        out: &mut SegGrads,
    ) -> Result<()> {
        let n = points.nrows();
        let s = self.n_segments();
        if d_weights_out.dim() != (n, s) || d_gradient.dim() != (n, s, 3) {
            return Err(Error::invalid(
                "upstream gradient arrays must align with the point count and segment count",
            ));
        }
        let probs = &trace.weights_out;

        // Density path through the softmax Jacobian.
        let mut d_logits = softmax_jacobian_apply(probs, d_weights_out);

        // Gradient path. With B̃[i,j] = Σ_d G_d[i]·V_d[j] per point, the
        // logit contribution is J·(diag B̃ − B̃·p − B̃ᵀ·p).
        let mut corr = Array2::zeros((n, s));
        let mut d_logit_grad = Array3::zeros((n, s, 3));
        for d in 0..3 {
            let g_d = d_gradient.index_axis(Axis(2), d).to_owned();
            let v_d = trace.logit_grad.index_axis(Axis(2), d).to_owned();
            let g_dot_p = row_dot(&g_d, probs);
            let v_dot_p = row_dot(&v_d, probs);
            corr += &(&g_d * &v_d);
            corr -= &(&g_d * &v_dot_p.clone().insert_axis(Axis(1)));
            corr -= &(&v_d * &g_dot_p.clone().insert_axis(Axis(1)));
            // Explicit dependence on the logit gradients.
            d_logit_grad
                .index_axis_mut(Axis(2), d)
                .assign(&(probs * &(&g_d - &g_dot_p.insert_axis(Axis(1)))));
        }
        d_logits += &softmax_jacobian_apply(probs, &corr);

        // Dense layer.
        out.bias += &d_logits.sum_axis(Axis(0));
        out.weights += &trace.cos_phase.t().dot(&d_logits);
        let mut d_phase = -(&trace.sin_phase * &d_logits.dot(&self.weights.t()));
        for d in 0..3 {
            let dv = d_logit_grad.index_axis(Axis(2), d).to_owned();
            // dz_s/dx_d = Σ_f −sin(a_f)·K[d,f]·W[f,s]
            let back = dv.dot(&self.weights.t()); // (N,F)
            out.weights -= &(&trace.sin_phase.t().dot(&dv) * &self.kernels.row(d).insert_axis(Axis(1)));
            d_phase -= &(&trace.cos_phase * &back * &self.kernels.row(d));
            let k_row = (&trace.sin_phase * &back).sum_axis(Axis(0));
            let mut kr = out.kernels.row_mut(d);
            kr -= &k_row;
        }
        out.kernel_bias += &d_phase.sum_axis(Axis(0));
        out.kernels += &points.t().dot(&d_phase);
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fields::testutil::{central_diff, grads_close, random_points, random_seg};
    use ndarray::arr2;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn single_segment_weights_are_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let net = random_seg(&mut rng, 8, 1);
        let pts = random_points(&mut rng, 6);
        let w = net.forward(&pts).unwrap();
        assert!(w.iter().all(|&v| v == 1.0));
        let g = net.spatial_gradient(&pts).unwrap();
        assert!(g.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn zero_logits_give_uniform_weights() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let mut net = random_seg(&mut rng, 8, 3);
        net.weights.fill(0.0);
        net.bias.fill(0.0);
        let pts = random_points(&mut rng, 4);
        let w = net.forward(&pts).unwrap();
        for &v in w.iter() {
            approx::assert_relative_eq!(v, 1.0 / 3.0, epsilon = 1e-15);
        }
    }

    #[test]
    fn rows_sum_to_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let net = random_seg(&mut rng, 16, 4);
        let pts = random_points(&mut rng, 10_000);
        let w = net.forward(&pts).unwrap();
        for row in w.rows() {
            assert!((row.sum() - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn gradient_components_sum_to_zero_per_point() {
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        let net = random_seg(&mut rng, 16, 3);
        let pts = random_points(&mut rng, 50);
        let g = net.spatial_gradient(&pts).unwrap();
        for n in 0..pts.nrows() {
            for d in 0..3 {
                let total: f64 = (0..3usize).map(|s| g[[n, s, d]]).sum();
                assert!(total.abs() < 1e-6);
            }
        }
    }

    #[test]
    fn spatial_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(15);
        let net = random_seg(&mut rng, 12, 3);
        let pts = random_points(&mut rng, 8);
        let g = net.spatial_gradient(&pts).unwrap();
        let scale = g.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        for n in 0..pts.nrows() {
            for s in 0..3 {
                for d in 0..3 {
                    let fd = central_diff(1e-4, pts[[n, d]], |v| {
                        let mut p = pts.clone();
                        p[[n, d]] = v;
                        net.forward(&p).unwrap()[[n, s]]
                    });
                    assert!(
                        grads_close(g[[n, s, d]], fd, 1e-5, scale),
                        "n={n} s={s} d={d}: {} vs {fd}",
                        g[[n, s, d]]
                    );
                }
            }
        }
    }

    #[test]
    fn rejects_shape_mismatch() {
        let bad = SegNet::new(
            arr2(&[[1.0], [0.0], [0.0]]),
            Array1::zeros(2),
            Array2::zeros((1, 2)),
            Array1::zeros(2),
        );
        assert!(bad.is_err());
    }
}
