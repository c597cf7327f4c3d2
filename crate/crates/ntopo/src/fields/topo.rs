//! Topology network: cosine feature layer, one dense neuron, sigmoid output.
//!
//! The field is a pure closed form of its parameters, so densities, spatial
//! gradients and parameter gradients are all evaluated analytically.

use ndarray::{Array1, Array2, Axis};

use crate::error::{Error, Result};
use crate::fields::{check_points, sigmoid};

/// Density field network. `kernels` holds one 3-vector of angular
/// frequencies (radians per unit coordinate) per feature column.
#[derive(Debug, Clone, PartialEq)]
pub struct TopoNet {
    pub kernels: Array2<f64>,     // (3, F)
    pub kernel_bias: Array1<f64>, // (F)
    pub weights: Array1<f64>,     // (F)
    pub bias: f64,
}

/// Forward-pass intermediates kept for gradient evaluation.
pub struct TopoTrace {
    pub cos_phase: Array2<f64>, // cos(X·K + b_k), (N,F)
    pub sin_phase: Array2<f64>, // sin(X·K + b_k), (N,F)
    pub preact: Array1<f64>,    // M, (N)
    pub density: Array1<f64>,   // sigmoid(M), (N)
    /// Pre-activation spatial gradient dM/dX, (N,3).
    pub grad_core: Array2<f64>,
}

impl TopoTrace {
    /// Bytes held by this trace; used by the mini-batch memory accounting.
    pub fn footprint_bytes(&self) -> usize {
        8 * (self.cos_phase.len()
            + self.sin_phase.len()
            + self.preact.len()
            + self.density.len()
            + self.grad_core.len())
    }
}

/// Gradients of a scalar loss with respect to every `TopoNet` field.
#[derive(Debug, Clone)]
pub struct TopoGrads {
    pub kernels: Array2<f64>,
    pub kernel_bias: Array1<f64>,
    pub weights: Array1<f64>,
    pub bias: f64,
}

impl TopoGrads {
    pub fn zeros(net: &TopoNet) -> Self {
        TopoGrads {
            kernels: Array2::zeros(net.kernels.raw_dim()),
            kernel_bias: Array1::zeros(net.kernel_bias.raw_dim()),
            weights: Array1::zeros(net.weights.raw_dim()),
            bias: 0.0,
        }
    }

    pub fn add_assign(&mut self, other: &TopoGrads) {
        self.kernels += &other.kernels;
        self.kernel_bias += &other.kernel_bias;
        self.weights += &other.weights;
        self.bias += other.bias;
    }
}

impl TopoNet {
    pub fn new(
        kernels: Array2<f64>,
        kernel_bias: Array1<f64>,
        weights: Array1<f64>,
        bias: f64,
    ) -> Result<Self> {
        let f = kernels.ncols();
        if kernels.nrows() != 3 || f == 0 {
            return Err(Error::invalid(format!(
                "topology kernels must be 3×F with F > 0, got {:?}",
                kernels.shape()
            )));
        }
        if kernel_bias.len() != f || weights.len() != f {
            return Err(Error::invalid(
                "topology kernel bias / weights length must match feature count",
            ));
        }
        let net = TopoNet {
            kernels,
            kernel_bias,
            weights,
            bias,
        };
        net.check_finite()?;
        Ok(net)
    }

    pub fn n_features(&self) -> usize {
        self.weights.len()
    }

    pub fn check_finite(&self) -> Result<()> {
        let ok = self.kernels.iter().all(|v| v.is_finite())
            && self.kernel_bias.iter().all(|v| v.is_finite())
            && self.weights.iter().all(|v| v.is_finite())
            && self.bias.is_finite();
        if ok {
            Ok(())
        } else {
            Err(Error::invalid("topology network has non-finite parameters"))
        }
    }

    /// Densities at `points` (N,3), each strictly inside (0,1).
    pub fn forward(&self, points: &Array2<f64>) -> Result<Array1<f64>> {
        self.check_finite()?;
        check_points(points)?;
        let phase = points.dot(&self.kernels) + &self.kernel_bias;
        let preact = phase.mapv(f64::cos).dot(&self.weights) + self.bias;
        Ok(preact.mapv(sigmoid))
    }

    /// Forward pass that also retains everything the backward pass needs.
    pub fn forward_with_trace(&self, points: &Array2<f64>) -> Result<TopoTrace> {
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
        let preact = cos_phase.dot(&self.weights) + self.bias;
        let density = preact.mapv(sigmoid);
        // dM/dX = -(sin ∘ W) · Kᵀ
        let grad_core = -(&sin_phase * &self.weights).dot(&self.kernels.t());
        Ok(TopoTrace {
            cos_phase,
            sin_phase,
            preact,
            density,
            grad_core,
        })
    }

    /// Analytic spatial gradient dρ/dX, (N,3).
    pub fn spatial_gradient(&self, points: &Array2<f64>) -> Result<Array2<f64>> {
        let trace = self.forward_with_trace(points)?;
        Ok(Self::spatial_gradient_from_trace(&trace))
    }

    pub fn spatial_gradient_from_trace(trace: &TopoTrace) -> Array2<f64> {
        let sig_grad = trace.density.mapv(|t| t * (1.0 - t));
        &trace.grad_core * &sig_grad.insert_axis(Axis(1))
    }

    /// Accumulate parameter gradients for upstream dL/dρ (`d_density`, N)
    /// and dL/d∇ρ (`d_gradient`, (N,3)).
    pub fn backprop(
        &self,
        points: &Array2<f64>,
        trace: &TopoTrace,
        d_density: &Array1<f64>,
        d_gradient: &Array2<f64>,
        out: &mut TopoGrads,
    ) -> Result<()> {
        let n = points.nrows();
        if d_density.len() != n || d_gradient.nrows() != n || d_gradient.ncols() != 3 {
            return Err(Error::invalid(
                "upstream gradient arrays must align with the point count",
            ));
        }
        let sig = &trace.density;
        let sig_grad = sig.mapv(|t| t * (1.0 - t));
        let sig_curv = &sig_grad * &sig.mapv(|t| 1.0 - 2.0 * t);

        // g̃ = dL/d∇ρ ∘ σ'(M): upstream through the sigmoid scale of ∇ρ.
        let scaled_grad = d_gradient * &sig_grad.clone().insert_axis(Axis(1)); // (N,3)
        let gk = scaled_grad.dot(&self.kernels); // (N,F)

        // dL/dM collects the density path and the curvature of the gradient path.
        let core_dot = (d_gradient * &trace.grad_core).sum_axis(Axis(1)); // (N)
        let d_preact = d_density * &sig_grad + &(&core_dot * &sig_curv);

        out.bias += d_preact.sum();
        out.weights += &trace.cos_phase.t().dot(&d_preact);
        out.weights -= &(&trace.sin_phase * &gk).sum_axis(Axis(0));

        // dL/dA, A = X·K + b_kernel
        let d_phase = -(&trace.sin_phase * &(d_preact.insert_axis(Axis(1))) * &self.weights)
            - &(&trace.cos_phase * &gk * &self.weights);
        out.kernel_bias += &d_phase.sum_axis(Axis(0));
        out.kernels += &points.t().dot(&d_phase);
        out.kernels -= &(&scaled_grad.t().dot(&trace.sin_phase) * &self.weights);
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fields::testutil::{central_diff, grads_close, random_points, random_topo};
    use approx::assert_relative_eq;
    use ndarray::arr2;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn single_feature_net() -> TopoNet {
        TopoNet::new(
            arr2(&[[1.0], [0.0], [0.0]]),
            Array1::zeros(1),
            Array1::ones(1),
            0.0,
        )
        .unwrap()
    }

    #[test]
    fn zero_weights_give_half_density() {
        let mut net = random_topo(&mut ChaCha8Rng::seed_from_u64(1), 8);
        net.weights.fill(0.0);
        net.bias = 0.0;
        let pts = random_points(&mut ChaCha8Rng::seed_from_u64(2), 5);
        let rho = net.forward(&pts).unwrap();
        for &r in rho.iter() {
            assert_relative_eq!(r, 0.5, max_relative = 1e-15);
        }
    }

    #[test]
    fn saturated_bias_approaches_one() {
        let mut net = random_topo(&mut ChaCha8Rng::seed_from_u64(1), 8);
        net.weights.fill(0.0);
        net.bias = 20.0;
        let pts = random_points(&mut ChaCha8Rng::seed_from_u64(2), 3);
        let rho = net.forward(&pts).unwrap();
        for &r in rho.iter() {
            assert!(r < 1.0);
            assert!((1.0 - r).abs() < 1e-8);
        }
    }

    #[test]
    fn single_feature_density_matches_hand_value() {
        // sigmoid(cos 0) = sigmoid(1)
        let net = single_feature_net();
        let pts = arr2(&[[0.0, 0.0, 0.0]]);
        let rho = net.forward(&pts).unwrap();
        assert_relative_eq!(rho[0], 0.7310585786300049, epsilon = 1e-12);
    }

    #[test]
    fn single_feature_gradient_is_zero_at_origin() {
        // d/dx sigmoid(cos x) = -sin(x)·σ'(cos x) = 0 at x = 0
        let net = single_feature_net();
        let pts = arr2(&[[0.0, 0.0, 0.0]]);
        let g = net.spatial_gradient(&pts).unwrap();
        for d in 0..3 {
            assert!(g[[0, d]].abs() < 1e-15);
        }
    }

    #[test]
    fn constant_field_has_zero_gradient() {
        let mut net = random_topo(&mut ChaCha8Rng::seed_from_u64(3), 16);
        net.weights.fill(0.0);
        let pts = random_points(&mut ChaCha8Rng::seed_from_u64(4), 7);
        let g = net.spatial_gradient(&pts).unwrap();
        assert!(g.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn spatial_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let net = random_topo(&mut rng, 24);
        let pts = random_points(&mut rng, 12);
        let grad = net.spatial_gradient(&pts).unwrap();
        let scale = grad.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        for n in 0..pts.nrows() {
            for d in 0..3 {
                let fd = central_diff(1e-4, pts[[n, d]], |v| {
                    let mut p = pts.clone();
                    p[[n, d]] = v;
                    net.forward(&p).unwrap()[n]
                });
                assert!(
                    grads_close(grad[[n, d]], fd, 1e-5, scale),
                    "point {n} axis {d}: {} vs {}",
                    grad[[n, d]],
                    fd
                );
            }
        }
    }

    #[test]
    fn rejects_non_finite_inputs() {
        let net = single_feature_net();
        let pts = arr2(&[[f64::NAN, 0.0, 0.0]]);
        assert!(matches!(net.forward(&pts), Err(Error::InvalidInput(_))));
        let mut bad = single_feature_net();
        bad.bias = f64::INFINITY;
        let ok_pts = arr2(&[[0.0, 0.0, 0.0]]);
        assert!(matches!(bad.forward(&ok_pts), Err(Error::InvalidInput(_))));
    }

    #[test]
    fn batching_is_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let net = random_topo(&mut rng, 32);
        let pts = random_points(&mut rng, 11);
        let full = net.forward(&pts).unwrap();
        let head = net.forward(&pts.slice(ndarray::s![..4, ..]).to_owned()).unwrap();
        let tail = net.forward(&pts.slice(ndarray::s![4.., ..]).to_owned()).unwrap();
        for i in 0..4 {
            assert_eq!(full[i], head[i]);
        }
        for i in 4..11 {
            assert_eq!(full[i], tail[i - 4]);
        }
    }
}
