//! Dataset preparation: writes a source archive, a degraded preview of it,
//! and a manifest of content hashes, all byte-reproducible from the
//! arguments alone.

use clap::Args;
use sha2::{Digest, Sha256};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use vlrr_core::data::{
    corrupt_salt_pepper, downsample_area, load_dataset, salt_pepper_count, save_dataset,
    synth_dataset, upscale_nn, ImageDataset,
};
use vlrr_core::rng::{RandomState, StreamTag};
use vlrr_core::tensor::{gather_rows, Tensor};
use vlrr_core::{Error, Result};

#[derive(Args)]
pub struct PrepareArgs {
    /// Output directory for hr.vlrd, lr.vlrd, and manifest.txt.
    #[arg(long)]
    pub out: PathBuf,
    /// Existing archive to degrade (omit to synthesise glyphs).
    #[arg(long, conflicts_with_all = ["synth_classes", "synth_per_class", "side"])]
    pub input: Option<PathBuf>,
    /// Number of synthetic glyph classes.
    #[arg(long, default_value_t = 8)]
    pub synth_classes: u16,
    /// Images per synthetic class.
    #[arg(long, default_value_t = 50)]
    pub synth_per_class: usize,
    /// Synthetic image extent (square).
    #[arg(long, default_value_t = 32)]
    pub side: usize,
    /// Downsampling factor for the degraded preview.
    #[arg(long, default_value_t = 4)]
    pub scale: usize,
    /// Fraction of pixels hit by salt-and-pepper corruption before
    /// downsampling.
    #[arg(long, default_value_t = 0.0)]
    pub sp_fraction: f64,
    /// Seed for glyph synthesis and corruption.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

/// The degraded view of a source set: per-image corruption (sub-stream
/// keyed by image index, matching what training-pair construction draws),
/// block downsampling, and nearest-neighbour upscaling back to source
/// extent. Pixels stay in [0, 1], so the preview archives cleanly; the
/// training engine regenerates exact (unquantised) pairs from the source
/// archive and seed rather than reading this file.
fn degraded_view(
    dataset: &ImageDataset,
    scale: usize,
    sp_fraction: f64,
    rs: &RandomState,
) -> Result<ImageDataset> {
    let (count, _, h, w) = dataset.images.dims4("degraded_view")?;
    if scale < 2 {
        return Err(Error::InvalidParam {
            name: "scale",
            message: format!("downsampling factor must be >= 2, got {scale}"),
        });
    }
    if h % scale != 0 || w % scale != 0 {
        return Err(Error::InvalidParam {
            name: "scale",
            message: format!("factor {scale} does not divide extents {h}x{w}"),
        });
    }
    let mut images = Tensor::zeros(&[count, 1, h, w]);
    let stride = h * w;
    for i in 0..count {
        let hr = gather_rows(&dataset.images, &[i])?.reshape(&[1, h, w])?;
        let src = if sp_fraction > 0.0 {
            let mut rng = rs.substream(StreamTag::Corrupt, i as u64);
            corrupt_salt_pepper(&hr, sp_fraction, &mut rng)?
        } else {
            hr
        };
        let lr = upscale_nn(&downsample_area(&src, scale)?, scale);
        images.data_mut()[i * stride..(i + 1) * stride].copy_from_slice(lr.data());
    }
    ImageDataset::new(images, dataset.labels.clone(), dataset.class_count)
}

fn sha256_file(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path)?;
    let mut hasher = Sha256::new();
    hasher.update(&bytes);
    let digest = hasher.finalize();
    let mut hex = String::with_capacity(64);
    for b in digest {
        let _ = write!(hex, "{b:02x}");
    }
    Ok(hex)
}

pub fn cmd_prepare(args: &PrepareArgs) -> Result<()> {
    let rs = RandomState::new(args.seed);
    let (source, dataset) = match &args.input {
        Some(path) => (path.display().to_string(), load_dataset(path)?),
        None => (
            "synthetic".to_string(),
            synth_dataset(args.synth_classes, args.synth_per_class, args.side, &rs)?,
        ),
    };
    let degraded = degraded_view(&dataset, args.scale, args.sp_fraction, &rs)?;

    std::fs::create_dir_all(&args.out)?;
    let hr_path = args.out.join("hr.vlrd");
    let lr_path = args.out.join("lr.vlrd");
    save_dataset(&dataset, &hr_path)?;
    save_dataset(&degraded, &lr_path)?;

    let pixels = dataset.height() * dataset.width();
    let mut manifest = String::new();
    let mut kv = |k: &str, v: String| {
        let _ = writeln!(manifest, "{k} = {v}");
    };
    kv("source", source);
    kv("images", dataset.count().to_string());
    kv("classes", dataset.class_count.to_string());
    kv("height", dataset.height().to_string());
    kv("width", dataset.width().to_string());
    kv("scale", args.scale.to_string());
    kv("sp_fraction", args.sp_fraction.to_string());
    kv(
        "corrupted_pixels_per_image",
        salt_pepper_count(args.sp_fraction, pixels).to_string(),
    );
    kv("seed", args.seed.to_string());
    kv("hr_sha256", sha256_file(&hr_path)?);
    kv("lr_sha256", sha256_file(&lr_path)?);
    std::fs::write(args.out.join("manifest.txt"), &manifest)?;

    println!(
        "prepared {} images ({} classes, {}x{}) in {}",
        dataset.count(),
        dataset.class_count,
        dataset.height(),
        dataset.width(),
        args.out.display()
    );
    Ok(())
}
