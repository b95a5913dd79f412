//! IDX file reading and writing (MNIST / Fashion-MNIST on-disk format).
//!
//! All header integers are big-endian. Image files carry magic `0x00000803`
//! and dims `[count, 28, 28]` of unsigned bytes; label files carry magic
//! `0x00000801` and `[count]`. Pixels are scaled to `[0, 1]` by `1/255` on
//! load.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{BigEndian, ReadBytesExt, WriteBytesExt};
use ndarray::Array2;

use crate::error::{Error, Result};
use crate::Float;

pub const IMAGE_MAGIC: u32 = 0x0000_0803;
pub const LABEL_MAGIC: u32 = 0x0000_0801;
pub const IMAGE_SIDE: usize = 28;
/// Flattened image length; the MLP input width.
pub const IMAGE_DIM: usize = IMAGE_SIDE * IMAGE_SIDE;

fn bad(path: &Path, reason: impl Into<String>) -> Error {
    Error::IdxFormat {
        path: path.display().to_string(),
        reason: reason.into(),
    }
}

/// Read an IDX image file into an `n × 784` row-major matrix in `[0, 1]`.
pub fn read_images<F: Float>(path: impl AsRef<Path>) -> Result<Array2<F>> {
    let path = path.as_ref();
    let file_len = std::fs::metadata(path)?.len();
    let mut r = BufReader::new(File::open(path)?);

    if file_len < 16 {
        return Err(bad(path, format!("truncated header: {file_len} bytes, need 16")));
    }
    let magic = r.read_u32::<BigEndian>()?;
    if magic != IMAGE_MAGIC {
        return Err(bad(path, format!("bad image magic 0x{magic:08x}, expected 0x{IMAGE_MAGIC:08x}")));
    }
    let count = r.read_u32::<BigEndian>()? as usize;
    let rows = r.read_u32::<BigEndian>()? as usize;
    let cols = r.read_u32::<BigEndian>()? as usize;
    if rows != IMAGE_SIDE || cols != IMAGE_SIDE {
        return Err(bad(path, format!("unsupported dims {rows}x{cols}, expected 28x28")));
    }
    let expected = 16 + (count * IMAGE_DIM) as u64;
    if file_len != expected {
        return Err(bad(
            path,
            format!("truncated or padded: {file_len} bytes, expected {expected} for {count} images"),
        ));
    }

    let mut raw = vec![0u8; count * IMAGE_DIM];
    r.read_exact(&mut raw)?;
    let scale = 1.0 / 255.0;
    let data: Vec<F> = raw.iter().map(|&b| F::lit(f64::from(b) * scale)).collect();
    Ok(Array2::from_shape_vec((count, IMAGE_DIM), data).expect("shape checked above"))
}

/// Read an IDX label file; every label must be in `0..=9`.
pub fn read_labels(path: impl AsRef<Path>) -> Result<Vec<u8>> {
    let path = path.as_ref();
    let file_len = std::fs::metadata(path)?.len();
    let mut r = BufReader::new(File::open(path)?);

    if file_len < 8 {
        return Err(bad(path, format!("truncated header: {file_len} bytes, need 8")));
    }
    let magic = r.read_u32::<BigEndian>()?;
    if magic != LABEL_MAGIC {
        return Err(bad(path, format!("bad label magic 0x{magic:08x}, expected 0x{LABEL_MAGIC:08x}")));
    }
    let count = r.read_u32::<BigEndian>()? as usize;
    let expected = 8 + count as u64;
    if file_len != expected {
        return Err(bad(
            path,
            format!("truncated or padded: {file_len} bytes, expected {expected} for {count} labels"),
        ));
    }

    let mut labels = vec![0u8; count];
    r.read_exact(&mut labels)?;
    if let Some((i, &l)) = labels.iter().enumerate().find(|(_, &l)| l > 9) {
        return Err(bad(path, format!("label {l} at index {i} outside 0..=9")));
    }
    Ok(labels)
}

/// Write raw `n × 784` byte images in IDX layout (subset tooling, fixtures).
pub fn write_images(path: impl AsRef<Path>, images: &Array2<u8>) -> Result<()> {
    let path = path.as_ref();
    if images.ncols() != IMAGE_DIM {
        return Err(Error::Shape(format!(
            "image rows must be {IMAGE_DIM} bytes, got {}",
            images.ncols()
        )));
    }
    let mut w = BufWriter::new(File::create(path)?);
    w.write_u32::<BigEndian>(IMAGE_MAGIC)?;
    w.write_u32::<BigEndian>(images.nrows() as u32)?;
    w.write_u32::<BigEndian>(IMAGE_SIDE as u32)?;
    w.write_u32::<BigEndian>(IMAGE_SIDE as u32)?;
    for row in images.rows() {
        // Rows of a freshly built Array2 are contiguous, but don't rely on it.
        let bytes: Vec<u8> = row.iter().copied().collect();
        w.write_all(&bytes)?;
    }
    w.flush()?;
    Ok(())
}

/// Write labels in IDX layout.
pub fn write_labels(path: impl AsRef<Path>, labels: &[u8]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path.as_ref())?);
    w.write_u32::<BigEndian>(LABEL_MAGIC)?;
    w.write_u32::<BigEndian>(labels.len() as u32)?;
    w.write_all(labels)?;
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;

    fn tmp() -> tempfile::TempDir {
        tempfile::tempdir().expect("tempdir")
    }

    #[test]
    fn image_round_trip_scales_pixels() {
        let dir = tmp();
        let p = dir.path().join("img");
        let mut raw = Array2::<u8>::zeros((3, IMAGE_DIM));
        raw[(0, 0)] = 255;
        raw[(1, 1)] = 51;
        write_images(&p, &raw).unwrap();

        let imgs: Array2<f64> = read_images(&p).unwrap();
        assert_eq!(imgs.shape(), &[3, IMAGE_DIM]);
        assert_eq!(imgs[(0, 0)], 1.0);
        assert_eq!(imgs[(1, 1)], 51.0 / 255.0);
        assert_eq!(imgs[(2, 2)], 0.0);
    }

    #[test]
    fn label_round_trip_and_range_check() {
        let dir = tmp();
        let p = dir.path().join("lbl");
        write_labels(&p, &[0, 9, 3]).unwrap();
        assert_eq!(read_labels(&p).unwrap(), vec![0, 9, 3]);

        std::fs::write(&p, {
            let mut v = Vec::new();
            v.extend_from_slice(&LABEL_MAGIC.to_be_bytes());
            v.extend_from_slice(&1u32.to_be_bytes());
            v.push(12);
            v
        })
        .unwrap();
        let err = read_labels(&p).unwrap_err();
        assert!(err.to_string().contains("outside 0..=9"), "{err}");
    }

    #[test]
    fn wrong_magic_is_rejected() {
        let dir = tmp();
        let p = dir.path().join("img");
        let mut raw = Vec::new();
        raw.extend_from_slice(&LABEL_MAGIC.to_be_bytes()); // label magic in an image file
        raw.extend_from_slice(&0u32.to_be_bytes());
        raw.extend_from_slice(&28u32.to_be_bytes());
        raw.extend_from_slice(&28u32.to_be_bytes());
        std::fs::write(&p, raw).unwrap();
        let err = read_images::<f64>(&p).unwrap_err();
        assert!(err.to_string().contains("bad image magic"), "{err}");
    }

    #[test]
    fn truncated_image_file_is_named() {
        let dir = tmp();
        let p = dir.path().join("img");
        let raw = Array2::<u8>::zeros((4, IMAGE_DIM));
        write_images(&p, &raw).unwrap();
        let full = std::fs::read(&p).unwrap();
        std::fs::write(&p, &full[..full.len() - 10]).unwrap();
        let err = read_images::<f64>(&p).unwrap_err();
        assert!(err.to_string().contains("truncated"), "{err}");
    }
}
