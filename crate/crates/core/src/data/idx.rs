//! IDX binary files (the MNIST / Fashion-MNIST container).
//!
//! Images: magic `0x00000803`, then count, rows, cols as big-endian `u32`,
//! then `count·rows·cols` unsigned bytes. Labels: magic `0x00000801`, count,
//! then `count` bytes.

use std::fs;
use std::path::Path;

use crate::engine::Tensor;
use crate::error::{Error, Result};

use super::dataset::{LabeledDataset, IMAGE_SIZE};

pub const IMAGE_MAGIC: u32 = 0x0000_0803;
pub const LABEL_MAGIC: u32 = 0x0000_0801;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct IdxImages {
    pub rows: usize,
    pub cols: usize,
    pub pixels: Vec<u8>,
}

impl IdxImages {
    pub fn count(&self) -> usize {
        if self.rows * self.cols == 0 {
            0
        } else {
            self.pixels.len() / (self.rows * self.cols)
        }
    }
}

fn read_u32(bytes: &[u8], at: usize, what: &str) -> Result<u32> {
    bytes
        .get(at..at + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| Error::Length(format!("{what}: header truncated at byte {at}")))
}

pub fn decode_images(bytes: &[u8]) -> Result<IdxImages> {
    let magic = read_u32(bytes, 0, "image file")?;
    if magic != IMAGE_MAGIC {
        return Err(Error::Format(format!(
            "image file magic {magic:#010x}, expected {IMAGE_MAGIC:#010x}"
        )));
    }
    let count = read_u32(bytes, 4, "image file")? as usize;
    let rows = read_u32(bytes, 8, "image file")? as usize;
    let cols = read_u32(bytes, 12, "image file")? as usize;
    let expected = count * rows * cols;
    let payload = &bytes[16..];
    if payload.len() != expected {
        return Err(Error::Length(format!(
            "image payload has {} bytes, header promises {count}×{rows}×{cols} = {expected}",
            payload.len()
        )));
    }
    Ok(IdxImages {
        rows,
        cols,
        pixels: payload.to_vec(),
    })
}

pub fn decode_labels(bytes: &[u8]) -> Result<Vec<u8>> {
    let magic = read_u32(bytes, 0, "label file")?;
    if magic != LABEL_MAGIC {
        return Err(Error::Format(format!(
            "label file magic {magic:#010x}, expected {LABEL_MAGIC:#010x}"
        )));
    }
    let count = read_u32(bytes, 4, "label file")? as usize;
    let payload = &bytes[8..];
    if payload.len() != count {
        return Err(Error::Length(format!(
            "label payload has {} bytes, header promises {count}",
            payload.len()
        )));
    }
    Ok(payload.to_vec())
}

pub fn encode_images(images: &IdxImages) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + images.pixels.len());
    out.extend_from_slice(&IMAGE_MAGIC.to_be_bytes());
    out.extend_from_slice(&(images.count() as u32).to_be_bytes());
    out.extend_from_slice(&(images.rows as u32).to_be_bytes());
    out.extend_from_slice(&(images.cols as u32).to_be_bytes());
    out.extend_from_slice(&images.pixels);
    out
}

pub fn encode_labels(labels: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + labels.len());
    out.extend_from_slice(&LABEL_MAGIC.to_be_bytes());
    out.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    out.extend_from_slice(labels);
    out
}

/// Maps one grayscale image onto the 32×32 grid: smaller images are
/// zero-padded symmetrically (extra row/column on the bottom/right when odd),
/// larger ones are nearest-neighbour resampled.
fn prepare(pixels: &[u8], rows: usize, cols: usize, out: &mut [f64]) {
    let target = IMAGE_SIZE;
    if rows <= target && cols <= target {
        let top = (target - rows) / 2;
        let left = (target - cols) / 2;
        for r in 0..rows {
            for c in 0..cols {
                out[(r + top) * target + c + left] = pixels[r * cols + c] as f64 / 255.0;
            }
        }
    } else {
        for r in 0..target {
            let sr = r * rows / target;
            for c in 0..target {
                let sc = c * cols / target;
                out[r * target + c] = pixels[sr * cols + sc] as f64 / 255.0;
            }
        }
    }
}

/// Decodes an image/label pair into a prepared single-channel dataset.
pub fn parse_idx(image_bytes: &[u8], label_bytes: &[u8]) -> Result<LabeledDataset> {
    let images = decode_images(image_bytes)?;
    let labels = decode_labels(label_bytes)?;
    let n = images.count();
    if n != labels.len() {
        return Err(Error::Consistency(format!(
            "{n} images but {} labels",
            labels.len()
        )));
    }
    let plane = IMAGE_SIZE * IMAGE_SIZE;
    let mut data = vec![0.0; n * plane];
    let per = images.rows * images.cols;
    for i in 0..n {
        prepare(
            &images.pixels[i * per..(i + 1) * per],
            images.rows,
            images.cols,
            &mut data[i * plane..(i + 1) * plane],
        );
    }
    let class_labels: Vec<usize> = labels.iter().map(|&l| l as usize).collect();
    let num_classes = class_labels.iter().max().map_or(1, |m| m + 1);
    LabeledDataset::new(
        "idx",
        Tensor::new(vec![n, 1, IMAGE_SIZE, IMAGE_SIZE], data)?,
        class_labels,
        None,
        num_classes,
    )
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

/// Loads an IDX pair from disk, plus an optional IDX label file carrying a
/// binary attribute per sample.
pub fn load_idx(
    images: &Path,
    labels: &Path,
    attributes: Option<&Path>,
    name: &str,
) -> Result<LabeledDataset> {
    let mut ds = parse_idx(&read_file(images)?, &read_file(labels)?)?;
    ds.name = name.to_string();
    if let Some(path) = attributes {
        let attrs = decode_labels(&read_file(path)?)?;
        if attrs.len() != ds.len() {
            return Err(Error::Consistency(format!(
                "{} attribute labels for {} images",
                attrs.len(),
                ds.len()
            )));
        }
        ds.attribute_labels = Some(attrs.iter().map(|&a| a as usize).collect());
        ds.validate()?;
    }
    Ok(ds)
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;

    fn images(count: usize, rows: usize, cols: usize, fill: impl Fn(usize) -> u8) -> IdxImages {
        IdxImages {
            rows,
            cols,
            pixels: (0..count * rows * cols).map(fill).collect(),
        }
    }

    #[test]
    fn two_fashion_sized_images_pad_to_32() {
        let img = images(2, 28, 28, |i| (i % 251) as u8);
        let bytes = encode_images(&img);
        assert_eq!(&bytes[..4], &[0, 0, 8, 3]);
        assert_eq!(bytes.len(), 16 + 1568);
        let ds = parse_idx(&bytes, &encode_labels(&[3, 7])).unwrap();
        assert_eq!(ds.images.shape(), &[2, 1, 32, 32]);
        assert_eq!(ds.class_labels, vec![3, 7]);
        // 2-pixel zero border, original pixels in the interior
        let first = ds.images.row(0);
        assert_eq!(first[0], 0.0);
        assert_eq!(first[31 * 32 + 31], 0.0);
        assert_eq!(first[2 * 32 + 2], img.pixels[0] as f64 / 255.0);
        assert_eq!(first[29 * 32 + 29], img.pixels[27 * 28 + 27] as f64 / 255.0);
    }

    #[test]
    fn count_mismatch_is_consistency_error() {
        let img = encode_images(&images(10, 4, 4, |_| 0));
        let lab = encode_labels(&[0; 9]);
        assert!(matches!(parse_idx(&img, &lab), Err(Error::Consistency(_))));
    }

    #[test]
    fn zero_payload_gives_zero_images() {
        let img = encode_images(&images(3, 28, 28, |_| 0));
        let ds = parse_idx(&img, &encode_labels(&[0, 1, 2])).unwrap();
        assert!(ds.images.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn bad_magic_and_truncation() {
        let mut img = encode_images(&images(1, 2, 2, |_| 5));
        let lab = encode_labels(&[0]);
        img[3] = 0x01;
        assert!(matches!(parse_idx(&img, &lab), Err(Error::Format(_))));
        let img = encode_images(&images(1, 2, 2, |_| 5));
        assert!(matches!(
            parse_idx(&img[..img.len() - 1], &lab),
            Err(Error::Length(_))
        ));
        assert!(matches!(parse_idx(&img[..10], &lab), Err(Error::Length(_))));
        assert!(matches!(
            parse_idx(&img, &lab[..lab.len() - 1]),
            Err(Error::Length(_))
        ));
    }

    #[test]
    fn oversized_images_are_resampled_into_unit_range() {
        let img = encode_images(&images(1, 64, 48, |i| (i % 256) as u8));
        let ds = parse_idx(&img, &encode_labels(&[1])).unwrap();
        assert_eq!(ds.images.shape(), &[1, 1, 32, 32]);
        assert!(ds.images.data().iter().all(|&v| (0.0..=1.0).contains(&v)));
    }

    #[test]
    fn missing_file_names_the_path() {
        let err = load_idx(
            Path::new("/nonexistent/images.idx"),
            Path::new("/nonexistent/labels.idx"),
            None,
            "x",
        )
        .unwrap_err();
        assert!(err.to_string().contains("/nonexistent/images.idx"));
    }

    proptest! {
        #[test]
        fn encode_decode_round_trip(
            count in 0usize..6,
            rows in 1usize..9,
            cols in 1usize..9,
            seed in any::<u64>(),
        ) {
            let img = images(count, rows, cols, |i| (seed.wrapping_mul(i as u64 + 1) >> 17) as u8);
            let labels: Vec<u8> = (0..count).map(|i| (seed >> (i % 32)) as u8).collect();
            let back = decode_images(&encode_images(&img)).unwrap();
            prop_assert_eq!(&back.pixels, &img.pixels);
            prop_assert_eq!((back.rows, back.cols), (rows, cols));
            prop_assert_eq!(decode_labels(&encode_labels(&labels)).unwrap(), labels);
        }
    }
}
