//! IDX files: big-endian header, unsigned byte payload.
//!
//! Images use magic `0x00000803` (`N x rows x cols`) or `0x00000804`
//! (`N x rows x cols x channels`, averaged to gray); labels use `0x00000801`.

use std::fs;
use std::path::Path;

use super::ImageDataset;
use crate::error::{Error, Result};

pub const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
pub const IDX_LABELS_MAGIC: u32 = 0x0000_0801;
const IDX_CHANNELS_MAGIC: u32 = 0x0000_0804;

fn be_u32(bytes: &[u8], offset: usize, what: &str) -> Result<u32> {
    bytes
        .get(offset..offset + 4)
        .map(|b| u32::from_be_bytes(b.try_into().expect("4 bytes")))
        .ok_or_else(|| Error::format(offset as u64, format!("truncated header while reading {what}")))
}

fn payload(bytes: &[u8], offset: usize, needed: usize) -> Result<&[u8]> {
    let available = bytes.len().saturating_sub(offset);
    if available < needed {
        return Err(Error::format(
            bytes.len() as u64,
            format!("truncated payload: {needed} bytes declared, {available} present"),
        ));
    }
    Ok(&bytes[offset..offset + needed])
}

pub fn parse_idx_images(bytes: &[u8], source: &str) -> Result<ImageDataset> {
    let magic = be_u32(bytes, 0, "magic")?;
    let dims = match magic {
        IDX_IMAGES_MAGIC => 3,
        IDX_CHANNELS_MAGIC => 4,
        other => {
            return Err(Error::format(
                0,
                format!("bad magic 0x{other:08x} (expected 0x{IDX_IMAGES_MAGIC:08x} for images)"),
            ))
        }
    };
    let shape: Vec<usize> = (0..dims)
        .map(|i| be_u32(bytes, 4 + 4 * i, "dimension").map(|d| d as usize))
        .collect::<Result<_>>()?;
    let (count, rows, cols) = (shape[0], shape[1], shape[2]);
    let channels = if dims == 4 { shape[3] } else { 1 };
    if count == 0 {
        return Err(Error::Validation(format!("{source}: IDX file holds zero images")));
    }
    if rows == 0 || cols == 0 || channels == 0 {
        return Err(Error::format(8, "zero image dimension"));
    }
    let header = 4 + 4 * dims;
    let per_image = rows * cols * channels;
    let needed = count
        .checked_mul(per_image)
        .ok_or_else(|| Error::format(4, "declared size overflows"))?;
    let raw = payload(bytes, header, needed)?;
    if bytes.len() > header + needed {
        log::warn!(
            "{source}: {} trailing bytes after the IDX payload",
            bytes.len() - header - needed
        );
    }
    let pixels = if channels == 1 {
        raw.iter().map(|&b| b as f64 / 255.0).collect()
    } else {
        raw.chunks_exact(channels)
            .map(|px| px.iter().map(|&b| b as f64).sum::<f64>() / (channels as f64 * 255.0))
            .collect()
    };
    ImageDataset::new(pixels, count, rows, cols, source)
}

pub fn parse_idx_labels(bytes: &[u8]) -> Result<Vec<u8>> {
    let magic = be_u32(bytes, 0, "magic")?;
    if magic != IDX_LABELS_MAGIC {
        return Err(Error::format(
            0,
            format!("bad magic 0x{magic:08x} (expected 0x{IDX_LABELS_MAGIC:08x} for labels)"),
        ));
    }
    let count = be_u32(bytes, 4, "count")? as usize;
    Ok(payload(bytes, 8, count)?.to_vec())
}

/// Loads an image file and, optionally, its label file.
pub fn load_idx(images_path: impl AsRef<Path>, labels_path: Option<&Path>) -> Result<ImageDataset> {
    let path = images_path.as_ref();
    let bytes = fs::read(path)?;
    let ds = parse_idx_images(&bytes, &format!("idx:{}", path.display()))?;
    match labels_path {
        Some(lp) => ds.with_labels(parse_idx_labels(&fs::read(lp)?)?),
        None => Ok(ds),
    }
}

/// Serializes as a `0x00000803` image file. Pixels are rounded to the
/// nearest of the 256 byte levels.
pub fn idx_bytes(ds: &ImageDataset) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + ds.len() * ds.pixels());
    out.extend_from_slice(&IDX_IMAGES_MAGIC.to_be_bytes());
    for d in [ds.len(), ds.height(), ds.width()] {
        out.extend_from_slice(&(d as u32).to_be_bytes());
    }
    out.extend(ds.tensor().data().iter().map(|&p| (p * 255.0).round() as u8));
    out
}

pub fn write_idx(ds: &ImageDataset, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, idx_bytes(ds))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fixture() -> Vec<u8> {
        let mut b = vec![0, 0, 8, 3, 0, 0, 0, 2, 0, 0, 0, 2, 0, 0, 0, 2];
        b.extend_from_slice(&[0, 255, 128, 64, 1, 2, 3, 254]);
        b
    }

    #[test]
    fn handcrafted_fixture() {
        let ds = parse_idx_images(&fixture(), "fixture").unwrap();
        assert_eq!((ds.len(), ds.height(), ds.width()), (2, 2, 2));
        assert_eq!(ds.image(0), &[0.0, 1.0, 128.0 / 255.0, 64.0 / 255.0]);
        assert_eq!(ds.image(1)[3], 254.0 / 255.0);
    }

    #[test]
    fn round_trip_is_identity() {
        let ds = parse_idx_images(&fixture(), "fixture").unwrap();
        let bytes = idx_bytes(&ds);
        assert_eq!(bytes, fixture());
        assert_eq!(parse_idx_images(&bytes, "fixture").unwrap(), ds);
    }

    #[test]
    fn file_round_trip_with_labels() {
        let dir = tempfile::tempdir().unwrap();
        let img = dir.path().join("img.idx");
        let lab = dir.path().join("lab.idx");
        fs::write(&img, fixture()).unwrap();
        fs::write(&lab, [0, 0, 8, 1, 0, 0, 0, 2, 7, 3]).unwrap();
        let ds = load_idx(&img, Some(&lab)).unwrap();
        assert_eq!(ds.labels.as_deref(), Some(&[7u8, 3][..]));
        let out = dir.path().join("again.idx");
        write_idx(&ds, &out).unwrap();
        assert_eq!(load_idx(&out, None).unwrap().tensor(), ds.tensor());
    }

    #[test]
    fn bad_magic() {
        let mut b = fixture();
        b[3] = 1;
        assert!(matches!(
            parse_idx_images(&b, "x"),
            Err(Error::Format { offset: 0, .. })
        ));
    }

    #[test]
    fn truncated_payload_reports_offset() {
        let b = &fixture()[..21];
        match parse_idx_images(b, "x") {
            Err(Error::Format { offset, message }) => {
                assert_eq!(offset, 21);
                assert!(message.contains("8 bytes declared"), "{message}");
            }
            other => panic!("{other:?}"),
        }
        assert!(matches!(
            parse_idx_images(&fixture()[..6], "x"),
            Err(Error::Format { offset: 4, .. })
        ));
    }

    #[test]
    fn zero_images_rejected() {
        let b = vec![0, 0, 8, 3, 0, 0, 0, 0, 0, 0, 0, 2, 0, 0, 0, 2];
        assert!(parse_idx_images(&b, "x").is_err());
    }

    #[test]
    fn channels_are_averaged() {
        let mut b = vec![0, 0, 8, 4, 0, 0, 0, 1, 0, 0, 0, 1, 0, 0, 0, 2, 0, 0, 0, 3];
        b.extend_from_slice(&[255, 0, 0, 255, 255, 255]);
        let ds = parse_idx_images(&b, "x").unwrap();
        assert!((ds.image(0)[0] - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(ds.image(0)[1], 1.0);
    }
}
