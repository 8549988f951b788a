use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::layers::{
    batchnorm, batchnorm_backward, conv2d, conv2d_backward, dense, dense_backward, maxpool2x2, maxpool2x2_backward,
    relu_backward, relu_in_place, softmax2, Activation, BnCache, RunningStats,
};
use super::loss::{check_labels, logit_gradient};
use super::{Mode, NnError, Tensor};
use crate::dataset::{MOVEMENTS, MUSCLES};
use crate::features::{FAMILIES, FAMILY_DEPTHS};
use crate::spatial::GridSet;

pub const GRID_ROWS: usize = MUSCLES;
pub const GRID_COLS: usize = MOVEMENTS;
pub const CONV_LAYERS: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    /// Convolution `i`, then batch norm and ReLU.
    Conv(usize),
    Pool,
}

/// Layer order inside every channel.
pub const CHANNEL_STAGES: [Stage; 8] = [
    Stage::Conv(0),
    Stage::Conv(1),
    Stage::Pool,
    Stage::Conv(2),
    Stage::Pool,
    Stage::Conv(3),
    Stage::Conv(4),
    Stage::Pool,
];

const PARAMS_PER_CONV: usize = 4;
const PARAMS_PER_CHANNEL: usize = PARAMS_PER_CONV * CONV_LAYERS;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Architecture {
    /// Which feature families get a channel.
    pub channel_mask: [bool; FAMILIES],
    /// Input depth of each family's grid.
    pub input_depths: [usize; FAMILIES],
    /// Output widths of the five convolutions.
    pub conv_widths: [usize; CONV_LAYERS],
    /// Square kernel side of every convolution.
    pub filter_size: usize,
    /// Output widths of the dense layers; the last one feeds the softmax.
    pub dense_widths: Vec<usize>,
}

impl Default for Architecture {
    fn default() -> Self {
        Architecture {
            channel_mask: [true; FAMILIES],
            input_depths: FAMILY_DEPTHS,
            conv_widths: [256, 128, 64, 32, 16],
            filter_size: 5,
            dense_widths: vec![96, 32, 2],
        }
    }
}

impl Architecture {
    /// Two channels, narrow convolutions and dense widths 8 / 4 / 2; sized for
    /// finite-difference checks.
    pub fn shrunken() -> Self {
        Architecture {
            channel_mask: [true, true, false, false, false, false],
            input_depths: FAMILY_DEPTHS,
            conv_widths: [4, 3, 4, 3, 3],
            filter_size: 3,
            dense_widths: vec![8, 4, 2],
        }
    }

    pub fn active_channels(&self) -> Vec<usize> {
        (0..FAMILIES).filter(|&f| self.channel_mask[f]).collect()
    }

    pub fn validate(&self) -> Result<(), NnError> {
        let bad = |m: String| Err(NnError::Architecture(m));
        if !self.channel_mask.iter().any(|&b| b) {
            return bad("at least one channel must be enabled".into());
        }
        if self.filter_size == 0 {
            return bad("filter size must be positive".into());
        }
        if self.conv_widths.contains(&0) {
            return bad(format!("conv widths must be positive, got {:?}", self.conv_widths));
        }
        for f in self.active_channels() {
            if self.input_depths[f] == 0 {
                return bad(format!("channel {f} has zero input depth"));
            }
        }
        if self.dense_widths.last() != Some(&2) || self.dense_widths.contains(&0) {
            return bad(format!("dense widths must be positive and end in 2, got {:?}", self.dense_widths));
        }
        Ok(())
    }

    /// Spatial size at the input and after each pooling stage.
    pub fn spatial_path(&self) -> Vec<(usize, usize)> {
        let mut path = vec![(GRID_ROWS, GRID_COLS)];
        for s in CHANNEL_STAGES {
            if s == Stage::Pool {
                let (h, w) = *path.last().expect("path starts non-empty");
                path.push((h.div_ceil(2), w.div_ceil(2)));
            }
        }
        path
    }

    pub fn channel_flatten(&self) -> usize {
        let (h, w) = *self.spatial_path().last().expect("path starts non-empty");
        h * w * self.conv_widths[CONV_LAYERS - 1]
    }

    pub fn concat_width(&self) -> usize {
        self.active_channels().len() * self.channel_flatten()
    }

    pub fn shape_report(&self) -> ShapeReport {
        let mut dense = Vec::new();
        let mut prev = self.concat_width();
        for &w in &self.dense_widths {
            dense.push((prev, w));
            prev = w;
        }
        ShapeReport {
            spatial_path: self.spatial_path(),
            channel_flatten: self.channel_flatten(),
            concat_width: self.concat_width(),
            dense,
        }
    }
}

/// Shapes through the network, for display and contract checks.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ShapeReport {
    pub spatial_path: Vec<(usize, usize)>,
    pub channel_flatten: usize,
    pub concat_width: usize,
    /// `(in, out)` of each dense layer.
    pub dense: Vec<(usize, usize)>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParamKind {
    ConvWeight,
    ConvBias,
    BnScale,
    BnShift,
    DenseWeight,
    DenseBias,
}

impl ParamKind {
    /// Whether the L2 penalty applies.
    pub fn is_weight(self) -> bool {
        matches!(self, ParamKind::ConvWeight | ParamKind::DenseWeight)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamSpec {
    pub name: String,
    pub kind: ParamKind,
    pub shape: Vec<usize>,
}

/// Intermediates of one forward pass, kept for back-propagation.
#[derive(Debug, Clone)]
pub struct Trace {
    mode: Mode,
    batch: usize,
    channels: Vec<Vec<StageTrace>>,
    dense_inputs: Vec<Tensor>,
    dense_outputs: Vec<Tensor>,
    probabilities: Vec<[f64; 2]>,
}

impl Trace {
    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn batch(&self) -> usize {
        self.batch
    }

    pub fn probabilities(&self) -> &[[f64; 2]] {
        &self.probabilities
    }

    /// Width of the concatenated channel outputs.
    pub fn concat_width(&self) -> Option<usize> {
        self.dense_inputs.first().map(|t| t.shape()[1])
    }
}

#[derive(Debug, Clone)]
enum StageTrace {
    Conv { input: Tensor, bn: BnCache },
    Pool { input_shape: Vec<usize>, argmax: Vec<usize> },
}

/// Multi-channel network: one convolutional stack per enabled feature
/// family, then dense layers and a softmax.
#[derive(Debug, Clone, PartialEq)]
pub struct EasiDeepModel {
    arch: Architecture,
    active: Vec<usize>,
    specs: Vec<ParamSpec>,
    params: Vec<Tensor>,
    running: Vec<RunningStats>,
}

fn param_specs(arch: &Architecture) -> Vec<ParamSpec> {
    let mut specs = Vec::new();
    let k = arch.filter_size;
    for f in arch.active_channels() {
        let mut c_in = arch.input_depths[f];
        for (l, &c_out) in arch.conv_widths.iter().enumerate() {
            let p = |kind, what: &str, shape| ParamSpec { name: format!("channel{f}.conv{l}.{what}"), kind, shape };
            specs.push(p(ParamKind::ConvWeight, "weight", vec![k, k, c_in, c_out]));
            specs.push(p(ParamKind::ConvBias, "bias", vec![c_out]));
            specs.push(p(ParamKind::BnScale, "bn_scale", vec![c_out]));
            specs.push(p(ParamKind::BnShift, "bn_shift", vec![c_out]));
            c_in = c_out;
        }
    }
    let mut n_in = arch.concat_width();
    for (j, &n_out) in arch.dense_widths.iter().enumerate() {
        specs.push(ParamSpec { name: format!("dense{j}.weight"), kind: ParamKind::DenseWeight, shape: vec![n_in, n_out] });
        specs.push(ParamSpec { name: format!("dense{j}.bias"), kind: ParamKind::DenseBias, shape: vec![n_out] });
        n_in = n_out;
    }
    specs
}

fn check_contract(arch: &Architecture) -> Result<(), NnError> {
    arch.validate()?;
    let path = arch.spatial_path();
    let expected = [(6, 7), (3, 4), (2, 2), (1, 1)];
    if path != expected {
        return Err(NnError::Architecture(format!("channel spatial path {path:?}, expected {expected:?}")));
    }
    let flatten = arch.channel_flatten();
    if flatten != arch.conv_widths[CONV_LAYERS - 1] {
        return Err(NnError::Architecture(format!("channel flatten {flatten} differs from the last conv width")));
    }
    if arch.concat_width() != arch.active_channels().len() * flatten {
        return Err(NnError::Architecture("concatenation width does not add up".into()));
    }
    Ok(())
}

impl EasiDeepModel {
    /// He-uniform weights, zero biases, unit BN scale, zero BN shift.
    pub fn new(arch: Architecture, seed: u64) -> Result<Self, NnError> {
        check_contract(&arch)?;
        let specs = param_specs(&arch);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let params = specs
            .iter()
            .map(|s| {
                let n: usize = s.shape.iter().product();
                let data = match s.kind {
                    ParamKind::ConvWeight | ParamKind::DenseWeight => {
                        let fan_in: usize = s.shape[..s.shape.len() - 1].iter().product();
                        let limit = (6.0 / fan_in as f64).sqrt();
                        (0..n).map(|_| rng.random_range(-limit..limit)).collect()
                    }
                    ParamKind::BnScale => vec![1.0; n],
                    ParamKind::ConvBias | ParamKind::BnShift | ParamKind::DenseBias => vec![0.0; n],
                };
                Tensor::new(s.shape.clone(), data).expect("spec shapes are consistent")
            })
            .collect();
        let active = arch.active_channels();
        let running = active.iter().flat_map(|_| arch.conv_widths.iter().map(|&c| RunningStats::new(c))).collect();
        Ok(EasiDeepModel { arch, active, specs, params, running })
    }

    /// Rebuild a model from stored values, checking every shape.
    pub fn from_parts(arch: Architecture, params: Vec<Vec<f64>>, running: Vec<RunningStats>) -> Result<Self, NnError> {
        check_contract(&arch)?;
        let specs = param_specs(&arch);
        if params.len() != specs.len() {
            return Err(NnError::Shape { what: "parameter count".into(), expected: vec![specs.len()], got: vec![params.len()] });
        }
        let params = specs.iter().zip(params).map(|(s, p)| Tensor::new(s.shape.clone(), p)).collect::<Result<Vec<_>, _>>()?;
        let active = arch.active_channels();
        let widths: Vec<usize> = active.iter().flat_map(|_| arch.conv_widths).collect();
        let got: Vec<usize> = running.iter().map(|r| r.mean.len()).collect();
        if got != widths || running.iter().any(|r| r.var.len() != r.mean.len()) {
            return Err(NnError::Shape { what: "running statistics".into(), expected: widths, got });
        }
        Ok(EasiDeepModel { arch, active, specs, params, running })
    }

    pub fn architecture(&self) -> &Architecture {
        &self.arch
    }

    pub fn active_channels(&self) -> &[usize] {
        &self.active
    }

    pub fn specs(&self) -> &[ParamSpec] {
        &self.specs
    }

    pub fn params(&self) -> &[Tensor] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Tensor] {
        &mut self.params
    }

    pub fn running_stats(&self) -> &[RunningStats] {
        &self.running
    }

    pub fn parameter_count(&self) -> usize {
        self.params.iter().map(Tensor::len).sum()
    }

    pub fn shape_report(&self) -> ShapeReport {
        self.arch.shape_report()
    }

    /// `sum W^2` over conv and dense weights.
    pub fn weight_square_sum(&self) -> f64 {
        self.specs
            .iter()
            .zip(&self.params)
            .filter(|(s, _)| s.kind.is_weight())
            .map(|(_, p)| p.data().iter().map(|v| v * v).sum::<f64>())
            .sum()
    }

    fn conv_base(channel: usize, layer: usize) -> usize {
        channel * PARAMS_PER_CHANNEL + layer * PARAMS_PER_CONV
    }

    fn dense_base(&self, layer: usize) -> usize {
        self.active.len() * PARAMS_PER_CHANNEL + 2 * layer
    }

    fn channel_forward(&self, ci: usize, input: Tensor, mode: Mode) -> Result<(Tensor, Vec<StageTrace>), NnError> {
        let mut x = input;
        let mut trace = Vec::new();
        for stage in CHANNEL_STAGES {
            match stage {
                Stage::Conv(l) => {
                    let base = Self::conv_base(ci, l);
                    let conv = conv2d(&x, &self.params[base], self.params[base + 1].data())?;
                    let (mut y, cache) = batchnorm(
                        &conv,
                        self.params[base + 2].data(),
                        self.params[base + 3].data(),
                        &self.running[ci * CONV_LAYERS + l],
                        mode,
                    )?;
                    relu_in_place(&mut y);
                    debug_assert!(y.is_finite(), "non-finite activation after conv {l}");
                    if let Some(bn) = cache {
                        trace.push(StageTrace::Conv { input: x, bn });
                    }
                    x = y;
                }
                Stage::Pool => {
                    let (y, argmax) = maxpool2x2(&x)?;
                    if mode == Mode::Train {
                        trace.push(StageTrace::Pool { input_shape: x.shape().to_vec(), argmax });
                    }
                    x = y;
                }
            }
        }
        Ok((x, trace))
    }

    /// Forward pass. `inputs[f]` holds `batch` grids of family `f`, each
    /// `6 x 7 x depth` row-major; disabled families are ignored.
    pub fn forward(&self, inputs: [&[f64]; FAMILIES], batch: usize, mode: Mode) -> Result<(Vec<[f64; 2]>, Trace), NnError> {
        if batch == 0 {
            return Err(NnError::EmptyBatch);
        }
        if mode == Mode::Train && batch < 2 {
            return Err(NnError::BatchTooSmall(batch));
        }
        let mut tensors = Vec::with_capacity(self.active.len());
        for &f in &self.active {
            let shape = vec![batch, GRID_ROWS, GRID_COLS, self.arch.input_depths[f]];
            let want: usize = shape.iter().product();
            if inputs[f].len() != want {
                return Err(NnError::Shape { what: format!("input grids of family {f}"), expected: shape, got: vec![inputs[f].len()] });
            }
            if let Some(i) = inputs[f].iter().position(|v| !v.is_finite()) {
                return Err(NnError::NonFinite(format!("input grids of family {f}, value {i}")));
            }
            tensors.push(Tensor::new(shape, inputs[f].to_vec())?);
        }
        let outs = tensors
            .into_par_iter()
            .enumerate()
            .map(|(ci, t)| self.channel_forward(ci, t, mode))
            .collect::<Result<Vec<_>, _>>()?;

        let flat = self.arch.channel_flatten();
        let width = flat * self.active.len();
        let mut concat = vec![0.0; batch * width];
        for (ci, (out, _)) in outs.iter().enumerate() {
            for s in 0..batch {
                concat[s * width + ci * flat..s * width + (ci + 1) * flat].copy_from_slice(&out.data()[s * flat..(s + 1) * flat]);
            }
        }
        let channels: Vec<Vec<StageTrace>> = outs.into_iter().map(|(_, t)| t).collect();

        let mut x = Tensor::new(vec![batch, width], concat)?;
        let mut dense_inputs = Vec::new();
        let mut dense_outputs = Vec::new();
        let last = self.arch.dense_widths.len() - 1;
        for j in 0..=last {
            let base = self.dense_base(j);
            let act = if j == last { Activation::None } else { Activation::Relu };
            let y = dense(&x, self.params[base].data(), self.params[base + 1].data(), act)?;
            debug_assert!(y.is_finite(), "non-finite activation after dense {j}");
            if mode == Mode::Train {
                dense_inputs.push(x);
                dense_outputs.push(y.clone());
            }
            x = y;
        }
        let probabilities =
            x.data().chunks_exact(2).map(|z| softmax2([z[0], z[1]])).collect::<Result<Vec<_>, _>>()?;
        let trace = Trace { mode, batch, channels, dense_inputs, dense_outputs, probabilities: probabilities.clone() };
        Ok((probabilities, trace))
    }

    /// Forward pass over every sample of a grid set.
    pub fn forward_set(&self, set: &GridSet, mode: Mode) -> Result<(Vec<[f64; 2]>, Trace), NnError> {
        let inputs: [&[f64]; FAMILIES] = std::array::from_fn(|f| &set.families[f][..]);
        self.forward(inputs, set.len(), mode)
    }

    /// Gradient of the total loss (`ce + se + alpha * sum W^2`) for every
    /// parameter, in parameter order.
    pub fn backward(&self, trace: &Trace, labels: &[[f64; 2]], alpha: f64) -> Result<Vec<Vec<f64>>, NnError> {
        if trace.mode != Mode::Train {
            return Err(NnError::MissingTrace);
        }
        if labels.len() != trace.batch {
            return Err(NnError::Shape { what: "labels".into(), expected: vec![trace.batch], got: vec![labels.len()] });
        }
        check_labels(labels)?;
        let batch = trace.batch;
        let mut grads: Vec<Vec<f64>> = self.params.iter().map(|p| vec![0.0; p.len()]).collect();

        let mut dz = Vec::with_capacity(batch * 2);
        for (p, t) in trace.probabilities.iter().zip(labels) {
            dz.extend(logit_gradient(p, t));
        }
        let mut g = Tensor::new(vec![batch, 2], dz)?;
        let last = self.arch.dense_widths.len() - 1;
        for j in (0..=last).rev() {
            if j != last {
                relu_backward(&trace.dense_outputs[j], &mut g);
            }
            let base = self.dense_base(j);
            let (dx, dw, db) = dense_backward(&trace.dense_inputs[j], self.params[base].data(), &g)?;
            grads[base] = dw;
            grads[base + 1] = db;
            g = dx;
        }

        let flat = self.arch.channel_flatten();
        let width = flat * self.active.len();
        let (h, w) = *self.arch.spatial_path().last().expect("path starts non-empty");
        let per_channel = (0..self.active.len())
            .into_par_iter()
            .map(|ci| {
                let mut d = Vec::with_capacity(batch * flat);
                for s in 0..batch {
                    d.extend_from_slice(&g.data()[s * width + ci * flat..s * width + (ci + 1) * flat]);
                }
                let d = Tensor::new(vec![batch, h, w, self.arch.conv_widths[CONV_LAYERS - 1]], d)?;
                self.channel_backward(ci, &trace.channels[ci], d)
            })
            .collect::<Result<Vec<_>, NnError>>()?;
        for (ci, layer_grads) in per_channel.into_iter().enumerate() {
            for (l, [dw, db, dg, dbeta]) in layer_grads.into_iter().enumerate() {
                let base = Self::conv_base(ci, l);
                grads[base] = dw;
                grads[base + 1] = db;
                grads[base + 2] = dg;
                grads[base + 3] = dbeta;
            }
        }

        if alpha != 0.0 {
            for ((spec, p), gr) in self.specs.iter().zip(&self.params).zip(grads.iter_mut()) {
                if spec.kind.is_weight() {
                    for (gv, pv) in gr.iter_mut().zip(p.data()) {
                        *gv += 2.0 * alpha * pv;
                    }
                }
            }
        }
        Ok(grads)
    }

    fn channel_backward(&self, ci: usize, trace: &[StageTrace], grad: Tensor) -> Result<Vec<[Vec<f64>; 4]>, NnError> {
        let mut out: Vec<[Vec<f64>; 4]> = vec![Default::default(); CONV_LAYERS];
        let mut g = grad;
        for (stage, st) in CHANNEL_STAGES.iter().zip(trace).rev() {
            match (stage, st) {
                (Stage::Pool, StageTrace::Pool { input_shape, argmax }) => {
                    g = maxpool2x2_backward(input_shape, argmax, &g)?;
                }
                (Stage::Conv(l), StageTrace::Conv { input, bn }) => {
                    let base = Self::conv_base(ci, *l);
                    let gamma = self.params[base + 2].data();
                    let beta = self.params[base + 3].data();
                    let c = gamma.len();
                    for (gv, xh) in g.data_mut().chunks_exact_mut(c).zip(bn.normalized.data().chunks_exact(c)) {
                        for j in 0..c {
                            if gamma[j] * xh[j] + beta[j] <= 0.0 {
                                gv[j] = 0.0;
                            }
                        }
                    }
                    let (d_conv, dg, dbeta) = batchnorm_backward(bn, gamma, &g)?;
                    let (dx, dw, db) = conv2d_backward(input, &self.params[base], &d_conv, *l > 0)?;
                    out[*l] = [dw, db, dg, dbeta];
                    if let Some(dx) = dx {
                        g = dx;
                    }
                }
                _ => unreachable!("trace stages follow CHANNEL_STAGES"),
            }
        }
        Ok(out)
    }

    /// Fold the batch statistics of a training-mode pass into the running
    /// statistics.
    pub fn update_running_stats(&mut self, trace: &Trace) -> Result<(), NnError> {
        if trace.mode != Mode::Train {
            return Err(NnError::MissingTrace);
        }
        for (ci, stages) in trace.channels.iter().enumerate() {
            let mut l = 0;
            for st in stages {
                if let StageTrace::Conv { bn, .. } = st {
                    self.running[ci * CONV_LAYERS + l].update(bn);
                    l += 1;
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::compute_loss;

    fn inputs(arch: &Architecture, batch: usize, salt: f64) -> [Vec<f64>; FAMILIES] {
        std::array::from_fn(|f| {
            (0..batch * GRID_ROWS * GRID_COLS * arch.input_depths[f])
                .map(|i| ((i as f64 + 1.0) * (0.37 + 0.1 * f as f64) + salt).sin() * 1.5)
                .collect()
        })
    }

    fn views(x: &[Vec<f64>; FAMILIES]) -> [&[f64]; FAMILIES] {
        std::array::from_fn(|f| &x[f][..])
    }

    #[test]
    fn default_shape_contract() {
        let r = Architecture::default().shape_report();
        assert_eq!(r.spatial_path, vec![(6, 7), (3, 4), (2, 2), (1, 1)]);
        assert_eq!(r.channel_flatten, 16);
        assert_eq!(r.concat_width, 96);
        assert_eq!(r.dense, vec![(96, 96), (96, 32), (32, 2)]);
    }

    #[test]
    fn masked_channels_shrink_the_concatenation() {
        let arch = Architecture { channel_mask: [true, true, true, false, false, false], ..Architecture::default() };
        assert_eq!(arch.concat_width(), 48);
        assert!(Architecture { channel_mask: [false; 6], ..Architecture::default() }.validate().is_err());
    }

    #[test]
    fn zero_input_gives_valid_probabilities() {
        let arch = Architecture::shrunken();
        let m = EasiDeepModel::new(arch.clone(), 3).unwrap();
        let z: [Vec<f64>; FAMILIES] = std::array::from_fn(|f| vec![0.0; 4 * 42 * arch.input_depths[f]]);
        for mode in [Mode::Train, Mode::Infer] {
            let (p, _) = m.forward(views(&z), 4, mode).unwrap();
            for q in p {
                assert!(q.iter().all(|v| v.is_finite()));
                assert!((q[0] + q[1] - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn identical_samples_identical_rows_in_inference() {
        let arch = Architecture::shrunken();
        let m = EasiDeepModel::new(arch.clone(), 3).unwrap();
        let one = inputs(&arch, 1, 0.2);
        let many: [Vec<f64>; FAMILIES] = std::array::from_fn(|f| one[f].repeat(5));
        let (p, t) = m.forward(views(&many), 5, Mode::Infer).unwrap();
        assert!(p.iter().all(|q| q == &p[0]));
        assert!(matches!(m.backward(&t, &[[1.0, 0.0]; 5], 0.0), Err(NnError::MissingTrace)));
    }

    #[test]
    fn forward_rejects_bad_input() {
        let arch = Architecture::shrunken();
        let m = EasiDeepModel::new(arch.clone(), 3).unwrap();
        let mut x = inputs(&arch, 2, 0.0);
        assert!(matches!(m.forward(views(&x), 3, Mode::Infer), Err(NnError::Shape { .. })));
        assert!(matches!(m.forward(views(&x), 1, Mode::Train), Err(NnError::BatchTooSmall(1))));
        x[1][5] = f64::NAN;
        assert!(matches!(m.forward(views(&x), 2, Mode::Infer), Err(NnError::NonFinite(_))));
    }

    #[test]
    fn seeded_initialisation() {
        let a = EasiDeepModel::new(Architecture::shrunken(), 9).unwrap();
        let b = EasiDeepModel::new(Architecture::shrunken(), 9).unwrap();
        let c = EasiDeepModel::new(Architecture::shrunken(), 10).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
        for (s, p) in a.specs().iter().zip(a.params()) {
            match s.kind {
                ParamKind::BnScale => assert!(p.data().iter().all(|&v| v == 1.0)),
                ParamKind::ConvBias | ParamKind::BnShift | ParamKind::DenseBias => assert!(p.data().iter().all(|&v| v == 0.0)),
                _ => {
                    let fan_in: usize = s.shape[..s.shape.len() - 1].iter().product();
                    let lim = (6.0 / fan_in as f64).sqrt();
                    assert!(p.data().iter().all(|v| v.abs() <= lim));
                }
            }
        }
    }

    fn total_loss(m: &EasiDeepModel, x: &[Vec<f64>; FAMILIES], batch: usize, labels: &[[f64; 2]], alpha: f64) -> f64 {
        let (p, _) = m.forward(views(x), batch, Mode::Train).unwrap();
        compute_loss(&p, labels, m, alpha).unwrap().total
    }

    pub(crate) fn gradient_check(arch: Architecture, alpha: f64) {
        let m = EasiDeepModel::new(arch.clone(), 17).unwrap();
        let x = inputs(&arch, 3, 0.4);
        let labels = [[1.0, 0.0], [0.0, 1.0], [0.0, 1.0]];
        let (_, trace) = m.forward(views(&x), 3, Mode::Train).unwrap();
        let grads = m.backward(&trace, &labels, alpha).unwrap();
        let h = 1e-5;
        let mut worst: f64 = 0.0;
        for (pi, g) in grads.iter().enumerate() {
            for i in 0..g.len() {
                let mut a = m.clone();
                a.params_mut()[pi].data_mut()[i] += h;
                let mut b = m.clone();
                b.params_mut()[pi].data_mut()[i] -= h;
                let num = (total_loss(&a, &x, 3, &labels, alpha) - total_loss(&b, &x, 3, &labels, alpha)) / (2.0 * h);
                let err = (g[i] - num).abs();
                let rel = if err <= 1e-7 { 0.0 } else { err / g[i].abs().max(num.abs()) };
                worst = worst.max(rel);
                assert!(rel < 1e-4, "{}[{i}]: analytic {}, numeric {num}", m.specs()[pi].name, g[i]);
            }
        }
        assert!(worst < 1e-4);
    }

    #[test]
    fn model_gradients_match_finite_differences() {
        gradient_check(Architecture::shrunken(), 1e-4);
        gradient_check(Architecture { filter_size: 4, ..Architecture::shrunken() }, 0.0);
    }

    #[test]
    fn regulariser_gradient_is_linear_in_alpha() {
        let arch = Architecture::shrunken();
        let m = EasiDeepModel::new(arch.clone(), 2).unwrap();
        let x = inputs(&arch, 3, 0.0);
        let labels = [[1.0, 0.0], [0.0, 1.0], [1.0, 0.0]];
        let (_, t) = m.forward(views(&x), 3, Mode::Train).unwrap();
        let g0 = m.backward(&t, &labels, 0.0).unwrap();
        let g1 = m.backward(&t, &labels, 1e-3).unwrap();
        let g2 = m.backward(&t, &labels, 2e-3).unwrap();
        for (pi, s) in m.specs().iter().enumerate() {
            for i in 0..g0[pi].len() {
                let r1 = g1[pi][i] - g0[pi][i];
                let r2 = g2[pi][i] - g0[pi][i];
                if s.kind.is_weight() {
                    // the reg part is recovered by subtraction, so allow rounding of g0
                    let scale = g0[pi][i].abs().max(r2.abs());
                    assert!((r2 - 2.0 * r1).abs() <= 1e-12 * scale);
                    assert!((r1 - 2e-3 * m.params()[pi].data()[i]).abs() <= 1e-12 * scale);
                } else {
                    assert_eq!((r1, r2), (0.0, 0.0));
                }
            }
        }
    }

    #[test]
    fn running_stats_follow_training_batches() {
        let arch = Architecture::shrunken();
        let mut m = EasiDeepModel::new(arch.clone(), 2).unwrap();
        let x = inputs(&arch, 4, 0.0);
        let (_, t) = m.forward(views(&x), 4, Mode::Train).unwrap();
        m.update_running_stats(&t).unwrap();
        assert!(m.running_stats().iter().any(|r| r.mean.iter().any(|&v| v != 0.0)));
        let (_, ti) = m.forward(views(&x), 4, Mode::Infer).unwrap();
        assert!(m.update_running_stats(&ti).is_err());
    }

    #[test]
    fn from_parts_round_trip_and_checks() {
        let m = EasiDeepModel::new(Architecture::shrunken(), 5).unwrap();
        let params: Vec<Vec<f64>> = m.params().iter().map(|p| p.data().to_vec()).collect();
        let back = EasiDeepModel::from_parts(m.architecture().clone(), params.clone(), m.running_stats().to_vec()).unwrap();
        assert_eq!(back, m);
        let mut short = params;
        short.pop();
        assert!(EasiDeepModel::from_parts(m.architecture().clone(), short, m.running_stats().to_vec()).is_err());
    }
}
