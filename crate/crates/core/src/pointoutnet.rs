//! The image → point-cloud network: a 19-layer convolutional encoder followed
//! by three fully-connected layers.
//!
//! Layer schedule: one stride-1 stem convolution at `base_channels`, then
//! `num_downsamples` stages. Each stage opens with a stride-2 convolution that
//! doubles the channel count, followed by stride-1 convolutions at that width.
//! The 18 non-stem convolutions are spread over the stages (`18 / D` stride-1
//! layers per stage, the remainder going to the last stages), so the total is
//! always 19. With the default six stages that is two stride-1 layers per stage
//! and channels 16 → 32 → … → 1024.
//!
//! ReLU follows every convolution and the first two dense layers; the output
//! layer is linear and its `numY * 3` values are read as `numY` xyz points.
//!
//! Parameter order (also the checkpoint order): for each convolution its kernel
//! `[Cin, K, K, Cout]` then bias `[Cout]`; then for each dense layer its weight
//! `[Din, Dout]` then bias `[Dout]`.

use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::PointCloud;
use crate::tensor::{conv_output_extent, read_params, write_params, Tape, Tensor, Var};

pub const CONV_LAYERS: usize = 19;
pub const DENSE_LAYERS: usize = 3;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct NetworkConfig {
    pub input_height: usize,
    pub input_width: usize,
    pub input_channels: usize,
    pub base_channels: usize,
    pub num_downsamples: usize,
    pub kernel_size: usize,
    pub num_y: usize,
    pub l2_weight: f64,
    pub fc_widths: Vec<usize>,
    /// Include biases in the L2 penalty (kernels and weights always are).
    #[serde(default)]
    pub regularize_biases: bool,
}

impl NetworkConfig {
    /// Full-size network for 192×256 single-channel images.
    pub fn new(num_y: usize) -> Self {
        Self {
            input_height: 192,
            input_width: 256,
            input_channels: 1,
            base_channels: 16,
            num_downsamples: 6,
            kernel_size: 3,
            num_y,
            l2_weight: 1e-5,
            fc_widths: vec![2048, 1024],
            regularize_biases: false,
        }
    }

    /// Reduced network for 48×64 images used by the quick profile.
    pub fn quick(num_y: usize) -> Self {
        Self {
            input_height: 48,
            input_width: 64,
            base_channels: 4,
            num_downsamples: 4,
            fc_widths: vec![128, 64],
            ..Self::new(num_y)
        }
    }

    /// Smallest useful network (12×16 input), used for gradient checking.
    pub fn tiny(num_y: usize) -> Self {
        Self {
            input_height: 12,
            input_width: 16,
            base_channels: 2,
            num_downsamples: 2,
            fc_widths: vec![16, 8],
            ..Self::new(num_y)
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_y == 0 {
            return Err(Error::invalid("numY must be positive"));
        }
        if self.fc_widths.len() != DENSE_LAYERS - 1 {
            return Err(Error::invalid(format!(
                "fcWidths must list exactly {} hidden widths, got {:?}",
                DENSE_LAYERS - 1,
                self.fc_widths
            )));
        }
        if self.fc_widths.contains(&0) {
            return Err(Error::invalid("fcWidths entries must be positive"));
        }
        if self.input_channels == 0 || self.base_channels == 0 {
            return Err(Error::invalid("channel counts must be positive"));
        }
        if self.kernel_size == 0 || self.kernel_size.is_multiple_of(2) {
            return Err(Error::invalid("kernelSize must be odd and positive"));
        }
        if self.num_downsamples == 0 || self.num_downsamples > CONV_LAYERS - 1 {
            return Err(Error::invalid(format!(
                "numDownsamples must be in 1..={}",
                CONV_LAYERS - 1
            )));
        }
        if !(self.l2_weight >= 0.0) {
            return Err(Error::invalid("l2Weight must be nonnegative"));
        }
        let (h, w) = self.encoded_extent();
        if h == 0 || w == 0 {
            return Err(Error::invalid(format!(
                "{}x{} input collapses to zero extent after {} stride-2 layers",
                self.input_height, self.input_width, self.num_downsamples
            )));
        }
        Ok(())
    }

    /// Spatial extents after the stem and after each downsampling stage.
    pub fn spatial_trace(&self) -> Vec<(usize, usize)> {
        let mut trace = vec![(self.input_height, self.input_width)];
        let (mut h, mut w) = (self.input_height, self.input_width);
        for _ in 0..self.num_downsamples {
            h = conv_output_extent(h, 2);
            w = conv_output_extent(w, 2);
            trace.push((h, w));
        }
        trace
    }

    fn encoded_extent(&self) -> (usize, usize) {
        *self.spatial_trace().last().expect("trace is nonempty")
    }

    pub fn conv_schedule(&self) -> Vec<ConvLayer> {
        let stages = self.num_downsamples;
        let extra = CONV_LAYERS - 1 - stages;
        let mut layers = vec![ConvLayer {
            in_channels: self.input_channels,
            out_channels: self.base_channels,
            stride: 1,
        }];
        let mut channels = self.base_channels;
        for stage in 0..stages {
            let plain = extra / stages + usize::from(stage >= stages - extra % stages);
            layers.push(ConvLayer {
                in_channels: channels,
                out_channels: channels * 2,
                stride: 2,
            });
            channels *= 2;
            for _ in 0..plain {
                layers.push(ConvLayer {
                    in_channels: channels,
                    out_channels: channels,
                    stride: 1,
                });
            }
        }
        layers
    }

    /// `(Din, Dout)` for each dense layer.
    pub fn dense_schedule(&self) -> Vec<(usize, usize)> {
        let (h, w) = self.encoded_extent();
        let channels = self.base_channels << self.num_downsamples;
        let mut din = h * w * channels;
        let mut layers = Vec::with_capacity(DENSE_LAYERS);
        for &width in self.fc_widths.iter().chain(std::iter::once(&(self.num_y * 3))) {
            layers.push((din, width));
            din = width;
        }
        layers
    }

    /// Shapes of every parameter tensor in serialization order.
    pub fn param_shapes(&self) -> Vec<Vec<usize>> {
        let k = self.kernel_size;
        let mut shapes = Vec::new();
        for layer in self.conv_schedule() {
            shapes.push(vec![layer.in_channels, k, k, layer.out_channels]);
            shapes.push(vec![layer.out_channels]);
        }
        for (din, dout) in self.dense_schedule() {
            shapes.push(vec![din, dout]);
            shapes.push(vec![dout]);
        }
        shapes
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvLayer {
    pub in_channels: usize,
    pub out_channels: usize,
    pub stride: usize,
}

/// Trainable parameters together with the configuration that shaped them.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams {
    config: NetworkConfig,
    tensors: Vec<Tensor>,
}

/// Tape handles for every parameter tensor of one model.
pub struct BoundParams {
    vars: Vec<Var>,
}

impl ModelParams {
    /// Fan-in scaled uniform weights `U(-sqrt(6/fan_in), sqrt(6/fan_in))`,
    /// zero biases, drawn in parameter order from a seeded ChaCha8 stream.
    pub fn build(config: NetworkConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let tensors = config
            .param_shapes()
            .into_iter()
            .map(|shape| {
                if shape.len() == 1 {
                    return Tensor::zeros(shape);
                }
                let fan_in: usize = shape[..shape.len() - 1].iter().product();
                let bound = (6.0 / fan_in as f64).sqrt();
                let len: usize = shape.iter().product();
                let data = (0..len).map(|_| rng.random_range(-bound..bound)).collect();
                Tensor::new(shape, data).expect("length from shape")
            })
            .collect();
        Ok(Self { config, tensors })
    }

    /// All-zero parameters (useful as a reference point).
    pub fn zeros(config: NetworkConfig) -> Result<Self> {
        config.validate()?;
        let tensors = config.param_shapes().into_iter().map(Tensor::zeros).collect();
        Ok(Self { config, tensors })
    }

    pub fn from_tensors(config: NetworkConfig, tensors: Vec<Tensor>) -> Result<Self> {
        config.validate()?;
        let expected = config.param_shapes();
        if expected.len() != tensors.len() {
            return Err(Error::invalid(format!(
                "configuration needs {} parameter tensors, got {}",
                expected.len(),
                tensors.len()
            )));
        }
        for (i, (shape, t)) in expected.iter().zip(&tensors).enumerate() {
            if t.shape() != shape.as_slice() {
                return Err(Error::ShapeMismatch {
                    op: if i % 2 == 0 { "parameter (weight)" } else { "parameter (bias)" },
                    lhs: shape.clone(),
                    rhs: t.shape().to_vec(),
                });
            }
        }
        Ok(Self { config, tensors })
    }

    pub fn config(&self) -> &NetworkConfig {
        &self.config
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor] {
        &mut self.tensors
    }

    pub fn param_count(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    pub fn conv_layer_count(&self) -> usize {
        self.tensors.iter().filter(|t| t.rank() == 4).count()
    }

    pub fn dense_layer_count(&self) -> usize {
        self.tensors.iter().filter(|t| t.rank() == 2).count()
    }

    pub fn zero_grad(&mut self) {
        self.tensors.iter_mut().for_each(Tensor::zero_grad);
    }

    fn regularized(&self, index: usize) -> bool {
        self.config.regularize_biases || self.tensors[index].rank() > 1
    }

    pub fn bind<'a>(&'a self, tape: &mut Tape<'a>) -> BoundParams {
        BoundParams {
            vars: self
                .tensors
                .iter()
                .enumerate()
                .map(|(slot, t)| tape.param(slot, t))
                .collect(),
        }
    }

    /// Wraps an image as a `[1, H, W, C]` tensor after checking extents.
    pub fn check_image(&self, image: &Tensor) -> Result<()> {
        let c = &self.config;
        let expected = [1, c.input_height, c.input_width, c.input_channels];
        if image.shape() != expected {
            return Err(Error::ShapeMismatch {
                op: "network input",
                lhs: expected.to_vec(),
                rhs: image.shape().to_vec(),
            });
        }
        if !image.is_finite() {
            return Err(Error::NonFinite("network input image".into()));
        }
        Ok(())
    }

    /// Records the forward pass; the result has shape `[numY, 3]`.
    pub fn forward_on_tape(&self, tape: &mut Tape<'_>, bound: &BoundParams, image: Var) -> Result<Var> {
        self.check_image(tape.value(image))?;
        let mut x = image;
        let mut slot = 0;
        for layer in self.config.conv_schedule() {
            let (k, b) = (bound.vars[slot], bound.vars[slot + 1]);
            slot += 2;
            x = tape.conv2d(x, k, b, layer.stride)?;
            x = tape.relu(x);
        }
        let flat = tape.value(x).len();
        x = tape.reshape(x, vec![1, flat])?;
        for i in 0..DENSE_LAYERS {
            let (w, b) = (bound.vars[slot], bound.vars[slot + 1]);
            slot += 2;
            x = tape.dense(x, w, b)?;
            if i + 1 < DENSE_LAYERS {
                x = tape.relu(x);
            }
        }
        tape.reshape(x, vec![self.config.num_y, 3])
    }

    /// `l2Weight * sum of squares` over kernels and dense weights (and biases
    /// when enabled), recorded on the tape.
    pub fn regularization_on_tape(&self, tape: &mut Tape<'_>, bound: &BoundParams) -> Result<Var> {
        let vars: Vec<Var> = (0..self.tensors.len())
            .filter(|&i| self.regularized(i))
            .map(|i| bound.vars[i])
            .collect();
        tape.l2_penalty(&vars, self.config.l2_weight)
    }

    pub fn regularization_loss(&self) -> Tensor {
        let params: Vec<&Tensor> = (0..self.tensors.len())
            .filter(|&i| self.regularized(i))
            .map(|i| &self.tensors[i])
            .collect();
        Tensor::scalar(crate::tensor::l2_penalty_value(&params, self.config.l2_weight))
    }

    /// Inference: predicts a `numY × 3` cloud from one `[1, H, W, C]` image.
    pub fn forward(&self, image: &Tensor) -> Result<PointCloud> {
        self.check_image(image)?;
        let mut tape = Tape::new();
        let bound = self.bind(&mut tape);
        let input = tape.input(image);
        let out = self.forward_on_tape(&mut tape, &bound, input)?;
        let coords = tape.value(out);
        if !coords.is_finite() {
            return Err(Error::NonFinite("network output".into()));
        }
        PointCloud::from_flat(coords.data())
    }

    /// Writes `path` (parameters) and its `.json` sidecar (configuration).
    pub fn save(&self, path: &Path) -> Result<()> {
        write_params(path, &self.tensors)?;
        let sidecar = config_sidecar(path);
        let json = serde_json::to_string_pretty(&self.config).expect("config serializes");
        std::fs::write(&sidecar, json).map_err(|e| Error::io(&sidecar, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_tensors(read_config(path)?, read_params(path)?)
    }
}

/// Reads only the configuration sidecar of a checkpoint.
pub fn read_config(checkpoint: &Path) -> Result<NetworkConfig> {
    let sidecar = config_sidecar(checkpoint);
    let text = std::fs::read_to_string(&sidecar).map_err(|e| Error::io(&sidecar, e))?;
    serde_json::from_str(&text).map_err(|e| Error::format(&sidecar, e.to_string()))
}

/// Path of the configuration file stored next to a checkpoint.
pub fn config_sidecar(checkpoint: &Path) -> PathBuf {
    checkpoint.with_extension("json")
}
