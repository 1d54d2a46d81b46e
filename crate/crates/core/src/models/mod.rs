//! Model zoo.
//!
//! All networks share one trunk geometry: three convolutional layers of
//! `filters` output channels and odd `filter_sizes`, stride 1, padding that
//! preserves extents, ReLU after each. On top of the trunk sit either
//!
//! - a reconstruction head (`conv4`): a single-channel linear convolution
//!   that predicts the high-resolution image, used for unsupervised
//!   pre-training ([`SrNet`], [`Pcsrn`]); or
//! - a classification head: fc4 + ReLU + dropout, then fc5 + softmax
//!   ([`ClassifierNet`], [`DualClassifierNet`]).
//!
//! The coupled variants run two channels, low-resolution -> high-resolution
//! and high-resolution -> high-resolution, whose convolutional layers share
//! their first `k` filters through single-storage [`CoupledConvLayer`]s.

mod checkpoint;
mod classifier;
mod coupled;
mod sr;
pub(crate) mod stack;

pub use checkpoint::{load_model, Checkpoint, LoadedModel, ModelKind};
pub use classifier::{ClassifierCache, ClassifierGrads, ClassifierNet};
pub use coupled::{
    attach_dual_heads, coupled_backward, Channel, CoupledConvLayer, CoupledLayerGrads,
    DualClassifierNet, DualGrads, Pcsrn, PcsrnGrads,
};
pub use sr::{attach_classifier_head, SrCache, SrGrads, SrNet};

use crate::error::{Error, Result};
use crate::kernels::{ConvLayerParams, FcLayerParams};
use crate::rng::{ChaCha8Rng, RandomState, StreamTag};
use crate::tensor::Tensor;
use rand_distr::{Distribution, Normal};

/// Filter size of the reconstruction head (conv4). The head is never
/// coupled and never anything but 5x5.
pub const RECON_FILTER_SIZE: usize = 5;

/// Trunk and head widths shared by every model variant.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NetworkConfig {
    /// Output channels of conv1..conv3.
    pub filters: [usize; 3],
    /// Odd filter sizes of conv1..conv3.
    pub filter_sizes: [usize; 3],
    /// Width of the fully connected layer fc4.
    pub fc_width: usize,
    /// Output classes (width of fc5).
    pub class_count: usize,
}

impl NetworkConfig {
    /// The full-scale configuration: 64/64/32 filters of size 5/3/1, a
    /// 1024-wide fc4.
    pub fn with_defaults(class_count: usize) -> Self {
        Self {
            filters: [64, 64, 32],
            filter_sizes: [5, 3, 1],
            fc_width: 1024,
            class_count,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (i, &n) in self.filters.iter().enumerate() {
            if n == 0 {
                return Err(Error::InvalidParam {
                    name: "filters",
                    message: format!("layer {} has zero filters", i + 1),
                });
            }
        }
        for (i, &f) in self.filter_sizes.iter().enumerate() {
            if f == 0 || f % 2 == 0 {
                return Err(Error::InvalidParam {
                    name: "filter_sizes",
                    message: format!("layer {} filter size {f} must be odd and >= 1", i + 1),
                });
            }
        }
        if self.fc_width == 0 {
            return Err(Error::InvalidParam {
                name: "fc_width",
                message: "must be >= 1".into(),
            });
        }
        if self.class_count < 2 {
            return Err(Error::InvalidParam {
                name: "class_count",
                message: format!("need >= 2 classes, got {}", self.class_count),
            });
        }
        Ok(())
    }
}

/// How many filters of each trunk layer the two channels share.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CouplingConfig {
    /// Shared filter counts k1..k3; layer i shares its first k_i filters.
    pub shared: [usize; 3],
}

impl CouplingConfig {
    /// The searched optimum on the default trunk: ratios (0.50, 0.75, 0.75).
    pub const DEFAULT_RATIOS: [f64; 3] = [0.50, 0.75, 0.75];

    /// Converts coupling ratios to filter counts: k_i = round(c_i * n_i).
    pub fn from_ratios(ratios: [f64; 3], net: &NetworkConfig) -> Result<Self> {
        for &c in &ratios {
            if !(0.0..=1.0).contains(&c) {
                return Err(Error::InvalidParam {
                    name: "ratios",
                    message: format!("coupling ratio {c} outside [0, 1]"),
                });
            }
        }
        let mut shared = [0usize; 3];
        for i in 0..3 {
            shared[i] = (ratios[i] * net.filters[i] as f64).round() as usize;
        }
        Ok(Self { shared })
    }

    /// Fully coupled: every filter shared (k = n).
    pub fn full(net: &NetworkConfig) -> Self {
        Self {
            shared: net.filters,
        }
    }

    /// Fully decoupled: two independent channels (k = 0).
    pub fn none() -> Self {
        Self { shared: [0; 3] }
    }

    pub fn ratios(&self, net: &NetworkConfig) -> [f64; 3] {
        let mut r = [0.0; 3];
        for i in 0..3 {
            r[i] = self.shared[i] as f64 / net.filters[i] as f64;
        }
        r
    }

    pub fn validate(&self, net: &NetworkConfig) -> Result<()> {
        for i in 0..3 {
            if self.shared[i] > net.filters[i] {
                return Err(Error::InvalidParam {
                    name: "shared",
                    message: format!(
                        "layer {} shares {} of {} filters",
                        i + 1,
                        self.shared[i],
                        net.filters[i]
                    ),
                });
            }
        }
        Ok(())
    }
}

// Initialisation stream slots. Each (channel, slot) pair owns an isolated
// sub-stream, so building one variant never shifts the draws of another:
// a coupled net's low-resolution channel sees exactly the banks a standalone
// single-channel net would. Slots 0..2 are conv1..conv3, 3 the
// reconstruction head (conv4), 4 and 5 the fc head, 6.. temporary heads of
// stagewise pre-training.
pub(crate) fn init_stream(rs: &RandomState, channel: usize, slot: usize) -> ChaCha8Rng {
    rs.substream(StreamTag::Init, ((channel as u64) << 32) | slot as u64)
}

/// Zero-mean Gaussian init with std sqrt(2 / fan_in); biases start at zero.
/// Weights draw in natural (row-major) order.
pub fn gaussian_conv_init(
    out_channels: usize,
    in_channels: usize,
    filter_size: usize,
    rng: &mut ChaCha8Rng,
) -> Result<ConvLayerParams> {
    let fan_in = in_channels * filter_size * filter_size;
    let std = (2.0 / fan_in as f64).sqrt();
    let normal = Normal::new(0.0, std).map_err(|e| Error::InvalidParam {
        name: "std",
        message: e.to_string(),
    })?;
    let mut weights = Tensor::zeros(&[out_channels, in_channels, filter_size, filter_size]);
    for v in weights.data_mut() {
        *v = normal.sample(rng);
    }
    ConvLayerParams::new(weights, vec![0.0; out_channels])
}

/// Zero-mean Gaussian init with std sqrt(2 / fan_in); biases start at zero.
pub fn gaussian_fc_init(
    out_features: usize,
    in_features: usize,
    rng: &mut ChaCha8Rng,
) -> Result<FcLayerParams> {
    let std = (2.0 / in_features as f64).sqrt();
    let normal = Normal::new(0.0, std).map_err(|e| Error::InvalidParam {
        name: "std",
        message: e.to_string(),
    })?;
    let mut weights = Tensor::zeros(&[out_features, in_features]);
    for v in weights.data_mut() {
        *v = normal.sample(rng);
    }
    FcLayerParams::new(weights, vec![0.0; out_features])
}

/// Concatenates parameter slices into one flat vector, in the order given.
pub(crate) fn flatten_params(parts: &[&[f64]]) -> Vec<f64> {
    let len = parts.iter().map(|p| p.len()).sum();
    let mut flat = Vec::with_capacity(len);
    for p in parts {
        flat.extend_from_slice(p);
    }
    flat
}

/// Writes a flat vector back into parameter slices, in the order given.
pub(crate) fn assign_params(parts: &mut [&mut [f64]], flat: &[f64]) -> Result<()> {
    let expected: usize = parts.iter().map(|p| p.len()).sum();
    if flat.len() != expected {
        return Err(Error::AxisMismatch {
            context: "assign_params",
            axis: "flat",
            expected,
            got: flat.len(),
        });
    }
    let mut offset = 0;
    for p in parts {
        p.copy_from_slice(&flat[offset..offset + p.len()]);
        offset += p.len();
    }
    Ok(())
}
