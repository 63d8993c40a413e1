use std::path::Path;

use super::data::{Dataset, SplitDataset};
use crate::error::{Error, Result};

pub const IMAGES_MAGIC: u32 = 0x0000_0803;
pub const LABELS_MAGIC: u32 = 0x0000_0801;

pub const TRAIN_IMAGES: &str = "train-images-idx3-ubyte";
pub const TRAIN_LABELS: &str = "train-labels-idx1-ubyte";
pub const TEST_IMAGES: &str = "t10k-images-idx3-ubyte";
pub const TEST_LABELS: &str = "t10k-labels-idx1-ubyte";

fn format_err(detail: impl Into<String>) -> Error {
    Error::Format {
        kind: "idx",
        detail: detail.into(),
    }
}

fn be_u32(bytes: &[u8], at: usize) -> Result<u32> {
    bytes
        .get(at..at + 4)
        .map(|b| u32::from_be_bytes(b.try_into().unwrap()))
        .ok_or_else(|| format_err("truncated header"))
}

/// Grayscale images of one IDX file.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct IdxImages {
    pub rows: usize,
    pub cols: usize,
    pub pixels: Vec<Vec<u8>>,
}

pub fn parse_idx_images(bytes: &[u8]) -> Result<IdxImages> {
    let magic = be_u32(bytes, 0)?;
    if magic != IMAGES_MAGIC {
        return Err(format_err(format!("bad image magic {magic:#010x}")));
    }
    let count = be_u32(bytes, 4)? as usize;
    let rows = be_u32(bytes, 8)? as usize;
    let cols = be_u32(bytes, 12)? as usize;
    let size = rows * cols;
    let body = &bytes[16..];
    if body.len() < count * size {
        return Err(format_err(format!("truncated image data: {} of {} bytes", body.len(), count * size)));
    }
    let pixels = body[..count * size].chunks_exact(size.max(1)).map(<[u8]>::to_vec).collect();
    Ok(IdxImages { rows, cols, pixels })
}

pub fn parse_idx_labels(bytes: &[u8]) -> Result<Vec<u8>> {
    let magic = be_u32(bytes, 0)?;
    if magic != LABELS_MAGIC {
        return Err(format_err(format!("bad label magic {magic:#010x}")));
    }
    let count = be_u32(bytes, 4)? as usize;
    let body = &bytes[8..];
    if body.len() < count {
        return Err(format_err(format!("truncated label data: {} of {count} bytes", body.len())));
    }
    Ok(body[..count].to_vec())
}

/// Average-pools `factor × factor` blocks, rounding to the nearest level.
pub fn downsample(pixels: &[u8], rows: usize, cols: usize, factor: usize) -> Result<Vec<u8>> {
    if factor == 0 || rows % factor != 0 || cols % factor != 0 {
        return Err(Error::Config(format!("downsample factor {factor} must divide {rows}×{cols}")));
    }
    let (r2, c2) = (rows / factor, cols / factor);
    let area = (factor * factor) as u32;
    let mut out = Vec::with_capacity(r2 * c2);
    for i in 0..r2 {
        for j in 0..c2 {
            let mut s = 0u32;
            for di in 0..factor {
                for dj in 0..factor {
                    s += pixels[(i * factor + di) * cols + j * factor + dj] as u32;
                }
            }
            out.push(((s + area / 2) / area) as u8);
        }
    }
    Ok(out)
}

fn to_dataset(images: IdxImages, labels: Vec<u8>, factor: usize) -> Result<Dataset> {
    if images.pixels.len() != labels.len() {
        return Err(format_err(format!("{} images but {} labels", images.pixels.len(), labels.len())));
    }
    let inputs = images
        .pixels
        .iter()
        .map(|p| Ok(downsample(p, images.rows, images.cols, factor)?.into_iter().map(usize::from).collect()))
        .collect::<Result<Vec<Vec<usize>>>>()?;
    Ok(Dataset {
        inputs,
        labels: labels.into_iter().map(usize::from).collect(),
    })
}

/// Reads the four standard MNIST IDX files from `dir`. Pixels become tokens
/// `0..=255` after average pooling by `factor`, flattened row-major.
pub fn load_mnist_idx(dir: impl AsRef<Path>, factor: usize) -> Result<SplitDataset> {
    let dir = dir.as_ref();
    let read = |name: &str| std::fs::read(dir.join(name));
    let train_img = parse_idx_images(&read(TRAIN_IMAGES)?)?;
    let test_img = parse_idx_images(&read(TEST_IMAGES)?)?;
    if (train_img.rows, train_img.cols) != (test_img.rows, test_img.cols) {
        return Err(format_err("train and test images differ in size"));
    }
    let seq_len = (train_img.rows / factor.max(1)) * (train_img.cols / factor.max(1));
    let train = to_dataset(train_img, parse_idx_labels(&read(TRAIN_LABELS)?)?, factor)?;
    let test = to_dataset(test_img, parse_idx_labels(&read(TEST_LABELS)?)?, factor)?;
    let n_classes = train.labels.iter().chain(&test.labels).max().map_or(0, |m| m + 1).max(2);
    Ok(SplitDataset {
        train,
        test,
        vocab: 256,
        seq_len,
        n_classes,
    })
}

/// Encodes images in IDX format.
pub fn encode_idx_images(rows: usize, cols: usize, images: &[Vec<u8>]) -> Vec<u8> {
    let mut out = Vec::new();
    for v in [IMAGES_MAGIC, images.len() as u32, rows as u32, cols as u32] {
        out.extend_from_slice(&v.to_be_bytes());
    }
    for img in images {
        out.extend_from_slice(img);
    }
    out
}

/// Encodes labels in IDX format.
pub fn encode_idx_labels(labels: &[u8]) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(&LABELS_MAGIC.to_be_bytes());
    out.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    out.extend_from_slice(labels);
    out
}
