//! Binary dataset format.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic      4 bytes  "VLRD"
//! version    u8       1
//! count      u32
//! height     u16
//! width      u16
//! channels   u8       always 1 (grayscale)
//! class_count u16

//! pixels     count * height * width bytes, row-major, value/255
//! labels     count * u16
//! ```
//!
//! Loading then saving reproduces the file byte for byte; saving then
//! loading reproduces a dataset whose pixels sit on the 1/255 grid.

use crate::data::pipeline::ImageDataset;
use crate::error::{Error, FormatError, Result};
use crate::tensor::Tensor;
use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use std::io::Read;
use std::path::Path;

const MAGIC: &[u8; 4] = b"VLRD";
const VERSION: u8 = 1;

/// Serialises a dataset. Pixels are quantised to round(v * 255); values
/// outside [0, 1] are a validation error, not a clamp.
pub fn save_dataset(dataset: &ImageDataset, path: &Path) -> Result<()> {
    dataset.validate()?;
    let count = dataset.count();
    if count > u32::MAX as usize {
        return Err(Error::InvalidParam {
            name: "dataset",
            message: "too many images for the format".into(),
        });
    }
    let (h, w) = (dataset.height(), dataset.width());
    if h > u16::MAX as usize || w > u16::MAX as usize {
        return Err(Error::InvalidParam {
            name: "dataset",
            message: "extents too large for the format".into(),
        });
    }
    let mut buf: Vec<u8> = Vec::with_capacity(16 + count * h * w + 2 * count);
    buf.extend_from_slice(MAGIC);
    buf.push(VERSION);
    buf.write_u32::<LittleEndian>(count as u32)?;
    buf.write_u16::<LittleEndian>(h as u16)?;
    buf.write_u16::<LittleEndian>(w as u16)?;
    buf.push(1); // channels
    buf.write_u16::<LittleEndian>(dataset.class_count)?;
    for &v in dataset.images.data() {
        buf.push((v * 255.0).round() as u8);
    }
    for &label in &dataset.labels {
        buf.write_u16::<LittleEndian>(label)?;
    }
    std::fs::write(path, buf)?;
    Ok(())
}

/// Loads and validates a dataset file. Rejects wrong magic or version,
/// truncation, trailing bytes, and labels outside the declared class count.
pub fn load_dataset(path: &Path) -> Result<ImageDataset> {
    let bytes = std::fs::read(path)?;
    let mut cur = std::io::Cursor::new(bytes.as_slice());

    let mut magic = [0u8; 4];
    cur.read_exact(&mut magic)
        .map_err(|_| FormatError::Truncated { what: "header" })?;
    if &magic != MAGIC {
        return Err(FormatError::BadMagic { expected: "VLRD" }.into());
    }
    let version = cur
        .read_u8()
        .map_err(|_| FormatError::Truncated { what: "version" })?;
    if version != VERSION {
        return Err(FormatError::Version {
            expected: VERSION,
            got: version,
        }
        .into());
    }
    let count = cur
        .read_u32::<LittleEndian>()
        .map_err(|_| FormatError::Truncated { what: "count" })? as usize;
    let h = cur
        .read_u16::<LittleEndian>()
        .map_err(|_| FormatError::Truncated { what: "height" })? as usize;
    let w = cur
        .read_u16::<LittleEndian>()
        .map_err(|_| FormatError::Truncated { what: "width" })? as usize;
    let channels = cur
        .read_u8()
        .map_err(|_| FormatError::Truncated { what: "channels" })?;
    if channels != 1 {
        return Err(FormatError::Invalid(format!(
            "grayscale expected (channels = 1), got {channels}"
        ))
        .into());
    }
    let class_count = cur
        .read_u16::<LittleEndian>()
        .map_err(|_| FormatError::Truncated { what: "class_count" })?;
    if h == 0 || w == 0 {
        return Err(FormatError::Invalid(format!("zero extent {h}x{w}")).into());
    }

    let pixel_count = count * h * w;
    let mut pixels = vec![0u8; pixel_count];
    cur.read_exact(&mut pixels)
        .map_err(|_| FormatError::Truncated { what: "pixels" })?;
    let mut labels = Vec::with_capacity(count);
    for _ in 0..count {
        let label = cur
            .read_u16::<LittleEndian>()
            .map_err(|_| FormatError::Truncated { what: "labels" })?;
        if label >= class_count {
            return Err(FormatError::LabelOutOfRange { label, class_count }.into());
        }
        labels.push(label);
    }
    let trailing = bytes.len() as u64 - cur.position();
    if trailing > 0 {
        return Err(FormatError::TrailingBytes(trailing as usize).into());
    }

    let data: Vec<f64> = pixels.into_iter().map(|p| p as f64 / 255.0).collect();
    let images = Tensor::from_vec(&[count, 1, h, w], data)?;
    ImageDataset::new(images, labels, class_count)
}

#[cfg(test)]
mod tests {
    use super::*;
    use tempfile::tempdir;

    fn grid_dataset() -> ImageDataset {
        // Pixels on the 1/255 grid so save/load round trips exactly.
        let mut images = Tensor::zeros(&[3, 1, 4, 2]);
        for (i, v) in images.data_mut().iter_mut().enumerate() {
            *v = ((i * 29) % 256) as f64 / 255.0;
        }
        ImageDataset::new(images, vec![0, 2, 1], 3).unwrap()
    }

    #[test]
    fn save_load_round_trip_is_exact() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("a.vlrd");
        let ds = grid_dataset();
        save_dataset(&ds, &path).unwrap();
        let loaded = load_dataset(&path).unwrap();
        assert_eq!(loaded, ds);
        // And the bytes themselves are stable through another cycle.
        let again = dir.path().join("b.vlrd");
        save_dataset(&loaded, &again).unwrap();
        assert_eq!(
            std::fs::read(&path).unwrap(),
            std::fs::read(&again).unwrap()
        );
    }

    #[test]
    fn rejects_bad_magic_version_truncation_trailing() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("a.vlrd");
        save_dataset(&grid_dataset(), &path).unwrap();
        let good = std::fs::read(&path).unwrap();

        let bad = dir.path().join("bad.vlrd");

        let mut magic = good.clone();
        magic[0] = b'X';
        std::fs::write(&bad, &magic).unwrap();
        assert!(matches!(
            load_dataset(&bad),
            Err(Error::Format(FormatError::BadMagic { .. }))
        ));

        let mut version = good.clone();
        version[4] = 9;
        std::fs::write(&bad, &version).unwrap();
        assert!(matches!(
            load_dataset(&bad),
            Err(Error::Format(FormatError::Version { got: 9, .. }))
        ));

        std::fs::write(&bad, &good[..good.len() - 3]).unwrap();
        assert!(matches!(
            load_dataset(&bad),
            Err(Error::Format(FormatError::Truncated { .. }))
        ));

        let mut trailing = good.clone();
        trailing.push(0);
        std::fs::write(&bad, &trailing).unwrap();
        assert!(matches!(
            load_dataset(&bad),
            Err(Error::Format(FormatError::TrailingBytes(1)))
        ));
    }

    #[test]
    fn rejects_label_out_of_range() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("a.vlrd");
        let ds = grid_dataset();
        save_dataset(&ds, &path).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        // Labels sit at the tail: 3 u16 values. Overwrite the first to 7.
        let tail = bytes.len() - 6;
        bytes[tail] = 7;
        bytes[tail + 1] = 0;
        std::fs::write(&path, &bytes).unwrap();
        assert!(matches!(
            load_dataset(&path),
            Err(Error::Format(FormatError::LabelOutOfRange {
                label: 7,
                class_count: 3
            }))
        ));
    }

    #[test]
    fn save_rejects_out_of_range_pixels() {
        let dir = tempdir().unwrap();
        let mut ds = grid_dataset();
        ds.images.data_mut()[0] = 1.2;
        assert!(save_dataset(&ds, &dir.path().join("x.vlrd")).is_err());
    }
}
