//! Flat parameter vector view over the three networks. The optimizer and
//! the finite-difference harness both work on this layout.

use std::ops::Range;

use ndarray::{Array1, Array2};
use rand::Rng;

use crate::error::{Error, Result};
use crate::fields::{logit, SegGrads, SegNet, TopoGrads, TopoNet};

/// Which parameter group a slot belongs to; used for phase gating.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ParamGroup {
    Topology,
    Segmentation,
    Angles,
}

#[derive(Debug, Clone)]
pub struct ParamLayout {
    pub topology: Range<usize>,
    pub segmentation: Range<usize>,
    pub angles: Range<usize>,
    pub total: usize,
}

impl ParamLayout {
    pub fn group_range(&self, group: ParamGroup) -> Range<usize> {
        match group {
            ParamGroup::Topology => self.topology.clone(),
            ParamGroup::Segmentation => self.segmentation.clone(),
            ParamGroup::Angles => self.angles.clone(),
        }
    }
}

/// All optimization variables: the two field networks plus one
/// (rotation-about-x, rotation-about-z) pair per segment.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldParams {
    pub topo: TopoNet,
    pub seg: Option<SegNet>,
    pub angles: Vec<[f64; 2]>,
}

impl FieldParams {
    pub fn n_segments(&self) -> usize {
        self.seg.as_ref().map_or(1, SegNet::n_segments)
    }

    /// Default initialization: kernel frequencies on a linear 3D grid over
    /// [−freq_max, freq_max]³, small uniform dense weights, dense bias set
    /// so the initial mean density sits at the target volume fraction.
    pub fn init<R: Rng>(
        rng: &mut R,
        grid_per_axis: usize,
        freq_max: f64,
        n_segs: usize,
        vol_frac: f64,
    ) -> Result<Self> {
        if grid_per_axis == 0 {
            return Err(Error::config("field.freq_grid", "must be ≥ 1"));
        }
        if n_segs == 0 {
            return Err(Error::config("optimization.segments", "must be ≥ 1"));
        }
        let features = grid_per_axis.pow(3);
        let kernels = frequency_grid(grid_per_axis, freq_max);
        let scale = 1.0 / (features as f64).sqrt();
        // A zero kernel bias would make every feature an even function and
        // lock the field into central symmetry, so the phases are spread
        // over a full period instead.
        let tau = std::f64::consts::TAU;
        let topo = TopoNet::new(
            kernels.clone(),
            Array1::from_shape_fn(features, |_| rng.random_range(0.0..tau)),
            Array1::from_shape_fn(features, |_| rng.random_range(-scale..scale)),
            logit(vol_frac),
        )?;
        let seg = if n_segs > 1 {
            Some(SegNet::new(
                kernels,
                Array1::from_shape_fn(features, |_| rng.random_range(0.0..tau)),
                Array2::from_shape_fn((features, n_segs), |_| rng.random_range(-scale..scale)),
                Array1::zeros(n_segs),
            )?)
        } else {
            None
        };
        Ok(FieldParams {
            topo,
            seg,
            angles: vec![[0.0, 0.0]; n_segs],
        })
    }

    pub fn layout(&self) -> ParamLayout {
        let f = self.topo.n_features();
        let topo_len = 3 * f + f + f + 1;
        let seg_len = self.seg.as_ref().map_or(0, |s| {
            let f = s.n_features();
            3 * f + f + f * s.n_segments() + s.n_segments()
        });
        let angle_len = 2 * self.angles.len();
        ParamLayout {
            topology: 0..topo_len,
            segmentation: topo_len..topo_len + seg_len,
            angles: topo_len + seg_len..topo_len + seg_len + angle_len,
            total: topo_len + seg_len + angle_len,
        }
    }

    pub fn to_vec(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.layout().total);
        out.extend(self.topo.kernels.iter());
        out.extend(self.topo.kernel_bias.iter());
        out.extend(self.topo.weights.iter());
        out.push(self.topo.bias);
        if let Some(seg) = &self.seg {
            out.extend(seg.kernels.iter());
            out.extend(seg.kernel_bias.iter());
            out.extend(seg.weights.iter());
            out.extend(seg.bias.iter());
        }
        for a in &self.angles {
            out.push(a[0]);
            out.push(a[1]);
        }
        out
    }

    pub fn set_from_slice(&mut self, values: &[f64]) -> Result<()> {
        if values.len() != self.layout().total {
            return Err(Error::invalid("parameter slice length mismatch"));
        }
        let mut it = values.iter().copied();
        for v in self.topo.kernels.iter_mut() {
            *v = it.next().unwrap();
        }
        for v in self.topo.kernel_bias.iter_mut() {
            *v = it.next().unwrap();
        }
        for v in self.topo.weights.iter_mut() {
            *v = it.next().unwrap();
        }
        self.topo.bias = it.next().unwrap();
        if let Some(seg) = &mut self.seg {
            for v in seg.kernels.iter_mut() {
                *v = it.next().unwrap();
            }
            for v in seg.kernel_bias.iter_mut() {
                *v = it.next().unwrap();
            }
            for v in seg.weights.iter_mut() {
                *v = it.next().unwrap();
            }
            for v in seg.bias.iter_mut() {
                *v = it.next().unwrap();
            }
        }
        for a in &mut self.angles {
            a[0] = it.next().unwrap();
            a[1] = it.next().unwrap();
        }
        Ok(())
    }
}

/// Gradient mirror of [`FieldParams`], flattened in the identical order.
#[derive(Debug, Clone)]
pub struct FieldGrads {
    pub topo: TopoGrads,
    pub seg: Option<SegGrads>,
    pub angles: Vec<[f64; 2]>,
}

impl FieldGrads {
    pub fn zeros(params: &FieldParams) -> Self {
        FieldGrads {
            topo: TopoGrads::zeros(&params.topo),
            seg: params.seg.as_ref().map(SegGrads::zeros),
            angles: vec![[0.0, 0.0]; params.angles.len()],
        }
    }

    pub fn to_vec(&self) -> Vec<f64> {
        let mut out = Vec::new();
        out.extend(self.topo.kernels.iter());
        out.extend(self.topo.kernel_bias.iter());
        out.extend(self.topo.weights.iter());
        out.push(self.topo.bias);
        if let Some(seg) = &self.seg {
            out.extend(seg.kernels.iter());
            out.extend(seg.kernel_bias.iter());
            out.extend(seg.weights.iter());
            out.extend(seg.bias.iter());
        }
        for a in &self.angles {
            out.push(a[0]);
            out.push(a[1]);
        }
        out
    }
}

/// Linear 3D grid of angular frequencies, one column per grid point.
pub(crate) fn frequency_grid(grid_per_axis: usize, freq_max: f64) -> Array2<f64> {
    let n = grid_per_axis;
    let axis: Vec<f64> = if n == 1 {
        vec![0.0]
    } else {
        (0..n)
            .map(|i| -freq_max + 2.0 * freq_max * i as f64 / (n - 1) as f64)
            .collect()
    };
    let mut kernels = Array2::zeros((3, n * n * n));
    let mut col = 0;
    for &fx in &axis {
        for &fy in &axis {
            for &fz in &axis {
                kernels[[0, col]] = fx;
                kernels[[1, col]] = fy;
                kernels[[2, col]] = fz;
                col += 1;
            }
        }
    }
    kernels
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn flatten_roundtrip_is_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let params = FieldParams::init(&mut rng, 2, 10.0, 3, 0.3).unwrap();
        let flat = params.to_vec();
        assert_eq!(flat.len(), params.layout().total);
        let mut copy = params.clone();
        copy.set_from_slice(&flat).unwrap();
        assert_eq!(copy, params);
    }

    #[test]
    fn layout_groups_are_contiguous() {
        let mut rng = ChaCha8Rng::seed_from_u64(32);
        let params = FieldParams::init(&mut rng, 2, 10.0, 2, 0.4).unwrap();
        let layout = params.layout();
        assert_eq!(layout.topology.start, 0);
        assert_eq!(layout.topology.end, layout.segmentation.start);
        assert_eq!(layout.segmentation.end, layout.angles.start);
        assert_eq!(layout.angles.end, layout.total);
        assert_eq!(layout.angles.len(), 4);
    }

    #[test]
    fn initial_mean_density_tracks_volume_fraction() {
        let mut rng = ChaCha8Rng::seed_from_u64(33);
        let params = FieldParams::init(&mut rng, 4, 20.0, 1, 0.3).unwrap();
        let pts = crate::fields::testutil::random_points(&mut rng, 2000);
        let rho = params.topo.forward(&pts).unwrap();
        let mean = rho.sum() / rho.len() as f64;
        assert!((mean - 0.3).abs() < 0.05, "mean density {mean}");
    }

    #[test]
    fn frequency_grid_spans_range() {
        let k = frequency_grid(8, 30.0);
        assert_eq!(k.ncols(), 512);
        let max = k.iter().cloned().fold(f64::MIN, f64::max);
        let min = k.iter().cloned().fold(f64::MAX, f64::min);
        assert_eq!(max, 30.0);
        assert_eq!(min, -30.0);
    }
}
