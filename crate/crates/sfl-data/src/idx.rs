//! IDX file format (big-endian dims, u8 payload): magic 0x00000803 for
//! image tensors, 0x00000801 for label vectors.

use std::io::{Read, Write};
use std::path::Path;

use sfl_nn::Tensor;

use crate::dataset::Dataset;
use crate::error::DataError;

pub const IMAGE_MAGIC: u32 = 0x0000_0803;
pub const LABEL_MAGIC: u32 = 0x0000_0801;

fn read_u32_be(r: &mut impl Read) -> Result<u32, DataError> {
    let mut buf = [0u8; 4];
    r.read_exact(&mut buf)
        .map_err(|_| DataError::Malformed("truncated IDX header".into()))?;
    Ok(u32::from_be_bytes(buf))
}

fn read_payload(r: &mut impl Read, n: usize) -> Result<Vec<u8>, DataError> {
    let mut buf = vec![0u8; n];
    r.read_exact(&mut buf)
        .map_err(|_| DataError::Malformed("truncated IDX payload".into()))?;
    Ok(buf)
}

/// Parse an IDX image file: (count, rows, cols) of u8 pixels.
pub fn read_images(r: &mut impl Read) -> Result<(usize, usize, usize, Vec<u8>), DataError> {
    let magic = read_u32_be(r)?;
    if magic != IMAGE_MAGIC {
        return Err(DataError::BadMagic { expected: IMAGE_MAGIC, got: magic });
    }
    let count = read_u32_be(r)? as usize;
    let rows = read_u32_be(r)? as usize;
    let cols = read_u32_be(r)? as usize;
    let pixels = read_payload(r, count * rows * cols)?;
    Ok((count, rows, cols, pixels))
}

pub fn read_labels(r: &mut impl Read) -> Result<Vec<u8>, DataError> {
    let magic = read_u32_be(r)?;
    if magic != LABEL_MAGIC {
        return Err(DataError::BadMagic { expected: LABEL_MAGIC, got: magic });
    }
    let count = read_u32_be(r)? as usize;
    read_payload(r, count)
}

pub fn write_images(w: &mut impl Write, count: usize, rows: usize, cols: usize, pixels: &[u8]) -> Result<(), DataError> {
    w.write_all(&IMAGE_MAGIC.to_be_bytes())?;
    w.write_all(&(count as u32).to_be_bytes())?;
    w.write_all(&(rows as u32).to_be_bytes())?;
    w.write_all(&(cols as u32).to_be_bytes())?;
    w.write_all(pixels)?;
    Ok(())
}

pub fn write_labels(w: &mut impl Write, labels: &[u8]) -> Result<(), DataError> {
    w.write_all(&LABEL_MAGIC.to_be_bytes())?;
    w.write_all(&(labels.len() as u32).to_be_bytes())?;
    w.write_all(labels)?;
    Ok(())
}

/// Load an IDX image/label pair as a single-channel dataset with pixels
/// scaled to [0,1].
pub fn load_idx_pair(images_path: &Path, labels_path: &Path) -> Result<Dataset, DataError> {
    let mut ir = std::io::BufReader::new(std::fs::File::open(images_path)?);
    let (count, rows, cols, pixels) = read_images(&mut ir)?;
    let mut lr = std::io::BufReader::new(std::fs::File::open(labels_path)?);
    let labels = read_labels(&mut lr)?;
    if labels.len() != count {
        return Err(DataError::Malformed(format!(
            "{count} images but {} labels",
            labels.len()
        )));
    }
    let data: Vec<f32> = pixels.iter().map(|&p| f32::from(p) / 255.0).collect();
    let images = Tensor::new(vec![count, 1, rows, cols], data)
        .map_err(|e| DataError::Malformed(e.to_string()))?;
    let n_classes = labels.iter().copied().max().map_or(1, |m| m as usize + 1);
    Dataset::new(images, labels.iter().map(|&l| u32::from(l)).collect(), n_classes)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_wrong_magic() {
        let mut buf = Vec::new();
        write_labels(&mut buf, &[1, 2, 3]).unwrap();
        // A label file is not an image file.
        let err = read_images(&mut buf.as_slice()).unwrap_err();
        assert!(matches!(err, DataError::BadMagic { got: LABEL_MAGIC, .. }));
    }

    #[test]
    fn image_round_trip() {
        let mut buf = Vec::new();
        let pixels: Vec<u8> = (0..2 * 3 * 3).map(|i| i as u8 * 10).collect();
        write_images(&mut buf, 2, 3, 3, &pixels).unwrap();
        let (count, rows, cols, back) = read_images(&mut buf.as_slice()).unwrap();
        assert_eq!((count, rows, cols), (2, 3, 3));
        assert_eq!(back, pixels);
    }

    #[test]
    fn truncated_payload_is_an_error() {
        let mut buf = Vec::new();
        write_images(&mut buf, 2, 3, 3, &[7u8; 18]).unwrap();
        buf.truncate(buf.len() - 1);
        assert!(read_images(&mut buf.as_slice()).is_err());
    }

    #[test]
    fn load_pair_scales_pixels() {
        let dir = tempfile::tempdir().unwrap();
        let ip = dir.path().join("img.idx");
        let lp = dir.path().join("lab.idx");
        {
            let mut f = std::fs::File::create(&ip).unwrap();
            write_images(&mut f, 2, 2, 2, &[0, 255, 51, 102, 0, 0, 255, 255]).unwrap();
            let mut f = std::fs::File::create(&lp).unwrap();
            write_labels(&mut f, &[1, 0]).unwrap();
        }
        let ds = load_idx_pair(&ip, &lp).unwrap();
        assert_eq!(ds.len(), 2);
        assert_eq!(ds.n_classes, 2);
        assert!((ds.images.data()[1] - 1.0).abs() < 1e-6);
        assert!((ds.images.data()[2] - 0.2).abs() < 1e-6);
    }
}
