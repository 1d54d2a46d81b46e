//! Image degradation: downsampling, corruption, noise, normalisation, and
//! assembly of aligned low/high resolution training pairs.

use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::rng::{ChaCha8Rng, RandomState, StreamTag};
use crate::tensor::{gather_rows, Tensor};
use rand::Rng;
use rand_distr::{Distribution, Normal};

/// A labelled grayscale image collection. Images are (count, 1, h, w) with
/// pixel values in [0, 1]; labels index classes below `class_count`.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageDataset {
    pub images: Tensor,
    pub labels: Vec<u16>,
    pub class_count: u16,
}

impl ImageDataset {
    pub fn new(images: Tensor, labels: Vec<u16>, class_count: u16) -> Result<Self> {
        let ds = Self {
            images,
            labels,
            class_count,
        };
        ds.validate()?;
        Ok(ds)
    }

    pub fn validate(&self) -> Result<()> {
        let (count, channels, h, w) = self.images.dims4("ImageDataset")?;
        if channels != 1 {
            return Err(Error::AxisMismatch {
                context: "ImageDataset",
                axis: "channels",
                expected: 1,
                got: channels,
            });
        }
        if h == 0 || w == 0 {
            return Err(Error::InvalidParam {
                name: "images",
                message: format!("spatial extents must be >= 1, got {h}x{w}"),
            });
        }
        if self.labels.len() != count {
            return Err(Error::AxisMismatch {
                context: "ImageDataset",
                axis: "labels",
                expected: count,
                got: self.labels.len(),
            });
        }
        if self.class_count == 0 {
            return Err(Error::InvalidParam {
                name: "class_count",
                message: "must be >= 1".into(),
            });
        }
        if let Some(&bad) = self.labels.iter().find(|&&l| l >= self.class_count) {
            return Err(Error::InvalidParam {
                name: "labels",
                message: format!("label {bad} out of range for {} classes", self.class_count),
            });
        }
        if let Some(&v) = self
            .images
            .data()
            .iter()
            .find(|v| !(0.0..=1.0).contains(*v))
        {
            return Err(Error::InvalidParam {
                name: "images",
                message: format!("pixel value {v} outside [0, 1]"),
            });
        }
        Ok(())
    }

    pub fn count(&self) -> usize {
        self.images.shape()[0]
    }

    pub fn height(&self) -> usize {
        self.images.shape()[2]
    }

    pub fn width(&self) -> usize {
        self.images.shape()[3]
    }

    /// A copy of image `i` as a (1, h, w) tensor.
    pub fn image(&self, i: usize) -> Result<Tensor> {
        let row = gather_rows(&self.images, &[i])?;
        row.reshape(&[1, self.height(), self.width()])
    }

    /// Splits into the first `n` images and the rest, preserving order.
    pub fn split_at(&self, n: usize) -> Result<(ImageDataset, ImageDataset)> {
        if n > self.count() {
            return Err(Error::InvalidParam {
                name: "n",
                message: format!("split point {n} beyond {} images", self.count()),
            });
        }
        let head_idx: Vec<usize> = (0..n).collect();
        let tail_idx: Vec<usize> = (n..self.count()).collect();
        let head = ImageDataset {
            images: gather_rows(&self.images, &head_idx)?,
            labels: self.labels[..n].to_vec(),
            class_count: self.class_count,
        };
        let tail = ImageDataset {
            images: gather_rows(&self.images, &tail_idx)?,
            labels: self.labels[n..].to_vec(),
            class_count: self.class_count,
        };
        Ok((head, tail))
    }
}

/// How to degrade high-resolution images into network inputs.
///
/// `gaussian_sigma` is consumed by the training loops (fresh noise on every
/// batch as augmentation), not during pair construction; `sp_fraction`
/// corrupts pixels *before* downsampling, modelling sensor defects that the
/// degradation then spreads.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DegradationSpec {
    /// Integer downsampling factor, >= 2.
    pub scale: usize,
    /// Standard deviation of training-time additive Gaussian noise.
    pub gaussian_sigma: f64,
    /// Fraction of pixels hit by salt-and-pepper corruption; 0 disables.
    pub sp_fraction: f64,
}

impl Default for DegradationSpec {
    fn default() -> Self {
        Self {
            scale: 4,
            gaussian_sigma: 0.05,
            sp_fraction: 0.0,
        }
    }
}

impl DegradationSpec {
    pub fn validate(&self) -> Result<()> {
        if self.scale < 2 {
            return Err(Error::InvalidParam {
                name: "scale",
                message: format!("downsampling factor must be >= 2, got {}", self.scale),
            });
        }
        if !self.gaussian_sigma.is_finite() || self.gaussian_sigma < 0.0 {
            return Err(Error::InvalidParam {
                name: "gaussian_sigma",
                message: format!("must be finite and >= 0, got {}", self.gaussian_sigma),
            });
        }
        if !(0.0..=1.0).contains(&self.sp_fraction) {
            return Err(Error::InvalidParam {
                name: "sp_fraction",
                message: format!("must be in [0, 1], got {}", self.sp_fraction),
            });
        }
        Ok(())
    }
}

/// One aligned training pair. `lr` is the degraded image brought back to
/// high-resolution size by nearest-neighbour upscaling; `hr` is the original
/// (after any corruption). Both are standardised by the *low-resolution*
/// statistics, recorded here so outputs can be mapped back: original =
/// value * scale + mean.
#[derive(Debug, Clone, PartialEq)]
pub struct LrHrPair {
    pub lr: Tensor,
    pub hr: Tensor,
    pub mean: f64,
    pub scale: f64,
}

/// Mean-pools non-overlapping s-by-s blocks of a (c, h, w) image. Errors
/// unless s divides both extents.
///
/// The block mean is computed as first + mean(values - first), which is
/// exact for constant blocks; nearest-neighbour upscaling therefore inverts
/// this bit for bit on images that are constant within blocks.
pub fn downsample_area(image: &Tensor, s: usize) -> Result<Tensor> {
    let (c, h, w) = image.dims3("downsample_area")?;
    if s == 0 {
        return Err(Error::InvalidParam {
            name: "s",
            message: "downsampling factor must be >= 1".into(),
        });
    }
    if h % s != 0 || w % s != 0 {
        return Err(Error::InvalidParam {
            name: "s",
            message: format!("factor {s} does not divide extents {h}x{w}"),
        });
    }
    let (oh, ow) = (h / s, w / s);
    let src = image.data();
    let mut out = Tensor::zeros(&[c, oh, ow]);
    let dst = out.data_mut();
    let inv = 1.0 / (s * s) as f64;
    for ci in 0..c {
        for oy in 0..oh {
            for ox in 0..ow {
                let first = src[(ci * h + oy * s) * w + ox * s];
                let mut acc = 0.0;
                for dy in 0..s {
                    let base = (ci * h + oy * s + dy) * w + ox * s;
                    for dx in 0..s {
                        acc += src[base + dx] - first;
                    }
                }
                dst[(ci * oh + oy) * ow + ox] = first + acc * inv;
            }
        }
    }
    Ok(out)
}

/// Nearest-neighbour upscaling by integer factor s >= 1: every source pixel
/// becomes an s-by-s block.
pub fn upscale_nn(image: &Tensor, s: usize) -> Tensor {
    assert!(s >= 1, "upscale factor must be >= 1");
    let (c, h, w) = image
        .dims3("upscale_nn")
        .expect("upscale_nn expects a (c, h, w) image");
    let (oh, ow) = (h * s, w * s);
    let src = image.data();
    let mut out = Tensor::zeros(&[c, oh, ow]);
    let dst = out.data_mut();
    for ci in 0..c {
        for y in 0..oh {
            let sy = y / s;
            for x in 0..ow {
                dst[(ci * oh + y) * ow + x] = src[(ci * h + sy) * w + x / s];
            }
        }
    }
    out
}

/// Standardises to mean 0: out = (x - mean) / (std + 1e-8). Returns
/// (normalized, mean, scale) where scale = std + 1e-8, so constant images
/// map to zeros instead of dividing by zero.
pub fn normalize(image: &Tensor) -> (Tensor, f64, f64) {
    if image.is_empty() {
        return (image.clone(), 0.0, 1e-8);
    }
    let n = image.len() as f64;
    // Mean relative to the first value: exact on constant images, so they
    // standardise to exact zeros rather than noise over a 1e-8 denominator.
    let first = image.data()[0];
    let mean = first + image.data().iter().map(|&v| v - first).sum::<f64>() / n;
    let var = image
        .data()
        .iter()
        .map(|&v| (v - mean) * (v - mean))
        .sum::<f64>()
        / n;
    let scale = var.sqrt() + 1e-8;
    (image.map(|v| (v - mean) / scale), mean, scale)
}

/// Inverts [`normalize`]: x * scale + mean.
pub fn denormalize(image: &Tensor, mean: f64, scale: f64) -> Tensor {
    image.map(|v| v * scale + mean)
}

/// Adds iid Gaussian noise of standard deviation `sigma`. Draws run in
/// element order; `sigma == 0` returns the input unchanged and consumes no
/// randomness.
pub fn add_gaussian_noise(t: &Tensor, sigma: f64, rng: &mut ChaCha8Rng) -> Result<Tensor> {
    if !sigma.is_finite() || sigma < 0.0 {
        return Err(Error::InvalidParam {
            name: "sigma",
            message: format!("must be finite and >= 0, got {sigma}"),
        });
    }
    if sigma == 0.0 {
        return Ok(t.clone());
    }
    let normal = Normal::new(0.0, sigma).expect("validated sigma");
    let mut out = t.clone();
    for v in out.data_mut() {
        *v += normal.sample(rng);
    }
    Ok(out)
}

/// Number of pixels corrupted at `fraction` on a canvas of `pixels` pixels:
/// round(fraction * pixels), half away from zero.
pub fn salt_pepper_count(fraction: f64, pixels: usize) -> usize {
    (fraction * pixels as f64).round() as usize
}

/// Sets exactly round(fraction * pixel_count) distinct pixels to 0 or 1
/// (fair coin each). Index selection and value draws are sequential in
/// `rng`, so the corruption is a pure function of the stream.
pub fn corrupt_salt_pepper(image: &Tensor, fraction: f64, rng: &mut ChaCha8Rng) -> Result<Tensor> {
    if !(0.0..=1.0).contains(&fraction) {
        return Err(Error::InvalidParam {
            name: "fraction",
            message: format!("must be in [0, 1], got {fraction}"),
        });
    }
    let mut out = image.clone();
    let count = salt_pepper_count(fraction, image.len());
    if count == 0 {
        return Ok(out);
    }
    let picks = rand::seq::index::sample(rng, image.len(), count);
    let data = out.data_mut();
    for idx in picks.iter() {
        data[idx] = if rng.random::<bool>() { 1.0 } else { 0.0 };
    }
    Ok(out)
}

/// Degrades one (1, h, w) high-resolution image into an aligned pair:
/// optional salt-and-pepper corruption first (it precedes downsampling),
/// then area downsampling by `spec.scale`, nearest-neighbour upscaling back
/// to size, and standardisation of both sides by the low-resolution
/// statistics.
pub fn make_lr_pair(hr: &Tensor, spec: &DegradationSpec, rng: &mut ChaCha8Rng) -> Result<LrHrPair> {
    spec.validate()?;
    let hr_src = if spec.sp_fraction > 0.0 {
        corrupt_salt_pepper(hr, spec.sp_fraction, rng)?
    } else {
        hr.clone()
    };
    let small = downsample_area(&hr_src, spec.scale)?;
    let lr_up = upscale_nn(&small, spec.scale);
    let (lr, mean, scale) = normalize(&lr_up);
    let hr_norm = hr_src.map(|v| (v - mean) / scale);
    Ok(LrHrPair {
        lr,
        hr: hr_norm,
        mean,
        scale,
    })
}

/// Builds pairs for a whole dataset on the global execution context.
pub fn make_pairs(dataset: &ImageDataset, spec: &DegradationSpec, rs: &RandomState) -> Result<Vec<LrHrPair>> {
    make_pairs_with(Exec::global(), dataset, spec, rs)
}

/// Builds pairs for a whole dataset. Image `i` draws from an isolated
/// sub-stream keyed by `i`, so results are identical at any thread count
/// and independent of iteration order.
pub fn make_pairs_with(
    exec: &Exec,
    dataset: &ImageDataset,
    spec: &DegradationSpec,
    rs: &RandomState,
) -> Result<Vec<LrHrPair>> {
    spec.validate()?;
    dataset.validate()?;
    if dataset.height() % spec.scale != 0 || dataset.width() % spec.scale != 0 {
        return Err(Error::InvalidParam {
            name: "scale",
            message: format!(
                "factor {} does not divide dataset extents {}x{}",
                spec.scale,
                dataset.height(),
                dataset.width()
            ),
        });
    }
    let results = exec.map_indices(dataset.count(), |i| {
        let hr = dataset.image(i)?;
        let mut rng = rs.substream(StreamTag::Corrupt, i as u64);
        make_lr_pair(&hr, spec, &mut rng)
    });
    results.into_iter().collect()
}

/// Stacks the low-resolution sides of selected pairs into a (B, 1, h, w)
/// batch, in index order.
pub fn batch_lr(pairs: &[LrHrPair], indices: &[usize]) -> Result<Tensor> {
    batch_side(pairs, indices, |p| &p.lr)
}

/// Stacks the high-resolution sides of selected pairs into a (B, 1, h, w)
/// batch, in index order.
pub fn batch_hr(pairs: &[LrHrPair], indices: &[usize]) -> Result<Tensor> {
    batch_side(pairs, indices, |p| &p.hr)
}

fn batch_side(
    pairs: &[LrHrPair],
    indices: &[usize],
    side: impl Fn(&LrHrPair) -> &Tensor,
) -> Result<Tensor> {
    if pairs.is_empty() || indices.is_empty() {
        return Err(Error::InvalidParam {
            name: "pairs",
            message: "empty batch".into(),
        });
    }
    let (c, h, w) = side(&pairs[0]).dims3("batch")?;
    let mut data = Vec::with_capacity(indices.len() * c * h * w);
    for &i in indices {
        let t = side(pairs.get(i).ok_or(Error::InvalidParam {
            name: "indices",
            message: format!("pair {i} out of range for {}", pairs.len()),
        })?);
        data.extend_from_slice(t.data());
    }
    Tensor::from_vec(&[indices.len(), c, h, w], data)
}
