//! IDX image/label files (MNIST, Fashion-MNIST) and seeded mini-batching.

use std::fs;
use std::io::Read;
use std::path::Path;

use flate2::read::GzDecoder;

use crate::error::{Error, Result};
use crate::linalg::DenseMatrix;
use crate::rng::SeededRng;

pub const IMAGE_MAGIC: u32 = 0x0000_0803;
pub const LABEL_MAGIC: u32 = 0x0000_0801;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ImageSet {
    pub count: usize,
    pub height: usize,
    pub width: usize,
    pub pixels: Vec<u8>,
}

impl ImageSet {
    pub fn pixels_per_image(&self) -> usize {
        self.height * self.width
    }

    pub fn image(&self, i: usize) -> &[u8] {
        let p = self.pixels_per_image();
        &self.pixels[i * p..(i + 1) * p]
    }

    /// Keeps only the first `n` images.
    pub fn truncate(&mut self, n: usize) {
        if n < self.count {
            self.count = n;
            self.pixels.truncate(n * self.pixels_per_image());
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelSet {
    pub labels: Vec<u8>,
}

impl LabelSet {
    pub fn count(&self) -> usize {
        self.labels.len()
    }

    pub fn indices(&self) -> Vec<usize> {
        self.labels.iter().map(|&l| l as usize).collect()
    }

    pub fn truncate(&mut self, n: usize) {
        self.labels.truncate(n);
    }
}

/// One mini-batch: gathered feature rows with their labels.
#[derive(Debug, Clone)]
pub struct Batch {
    pub indices: Vec<usize>,
    pub features: DenseMatrix,
    pub labels: Vec<usize>,
    pub one_hot: DenseMatrix,
}

fn gunzip_if_needed(bytes: &[u8]) -> Result<std::borrow::Cow<'_, [u8]>> {
    if bytes.len() >= 2 && bytes[0] == 0x1f && bytes[1] == 0x8b {
        let mut out = Vec::new();
        GzDecoder::new(bytes)
            .read_to_end(&mut out)
            .map_err(|e| Error::Malformed {
                kind: "gzip",
                reason: e.to_string(),
            })?;
        Ok(out.into())
    } else {
        Ok(bytes.into())
    }
}

fn read_u32(bytes: &[u8], offset: usize) -> Result<u32> {
    let chunk = bytes.get(offset..offset + 4).ok_or(Error::Truncated {
        needed: offset + 4,
        available: bytes.len(),
    })?;
    Ok(u32::from_be_bytes(chunk.try_into().expect("4-byte slice")))
}

fn checked_payload(dims: &[u32], header: usize) -> Result<usize> {
    dims.iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d as usize))
        .and_then(|n| n.checked_add(header))
        .ok_or_else(|| Error::DimOverflow(dims.to_vec()))
}

/// Parses an IDX3 image file (optionally gzip-wrapped).
pub fn parse_idx_images(bytes: &[u8]) -> Result<ImageSet> {
    let bytes = gunzip_if_needed(bytes)?;
    let magic = read_u32(&bytes, 0)?;
    if magic != IMAGE_MAGIC {
        return Err(Error::BadMagic {
            kind: "images",
            expected: IMAGE_MAGIC,
            found: magic,
        });
    }
    let dims = [read_u32(&bytes, 4)?, read_u32(&bytes, 8)?, read_u32(&bytes, 12)?];
    let total = checked_payload(&dims, 16)?;
    if bytes.len() < total {
        return Err(Error::Truncated {
            needed: total,
            available: bytes.len(),
        });
    }
    Ok(ImageSet {
        count: dims[0] as usize,
        height: dims[1] as usize,
        width: dims[2] as usize,
        pixels: bytes[16..total].to_vec(),
    })
}

/// Parses an IDX1 label file (optionally gzip-wrapped).
pub fn parse_idx_labels(bytes: &[u8]) -> Result<LabelSet> {
    let bytes = gunzip_if_needed(bytes)?;
    let magic = read_u32(&bytes, 0)?;
    if magic != LABEL_MAGIC {
        return Err(Error::BadMagic {
            kind: "labels",
            expected: LABEL_MAGIC,
            found: magic,
        });
    }
    let count = read_u32(&bytes, 4)?;
    let total = checked_payload(&[count], 8)?;
    if bytes.len() < total {
        return Err(Error::Truncated {
            needed: total,
            available: bytes.len(),
        });
    }
    Ok(LabelSet {
        labels: bytes[8..total].to_vec(),
    })
}

pub fn load_idx_images(path: impl AsRef<Path>) -> Result<ImageSet> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    parse_idx_images(&bytes)
}

pub fn load_idx_labels(path: impl AsRef<Path>) -> Result<LabelSet> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    parse_idx_labels(&bytes)
}

/// Flattens images to rows scaled into `[0, 1]` by `/255`.
pub fn to_features(images: &ImageSet) -> Result<DenseMatrix> {
    if images.count == 0 || images.pixels_per_image() == 0 {
        return Err(Error::InvalidArgument("empty image set".into()));
    }
    let data = images.pixels.iter().map(|&p| p as f64 / 255.0).collect();
    DenseMatrix::from_vec(images.count, images.pixels_per_image(), data)
}

fn check_labels(labels: &[usize], classes: usize) -> Result<()> {
    match labels.iter().position(|&l| l >= classes) {
        Some(index) => Err(Error::LabelOutOfRange {
            index,
            label: labels[index],
            classes,
        }),
        None => Ok(()),
    }
}

/// `count × classes` indicator matrix.
pub fn one_hot(labels: &[usize], classes: usize) -> Result<DenseMatrix> {
    check_labels(labels, classes)?;
    let mut m = DenseMatrix::zeros(labels.len(), classes);
    for (i, &l) in labels.iter().enumerate() {
        m[(i, l)] = 1.0;
    }
    Ok(m)
}

/// Partitions a seeded permutation of `0..n` into batches of `batch_size`
/// (the last one may be short).
pub fn shuffled_batch_indices(n: usize, batch_size: usize, rng: &mut SeededRng) -> Vec<Vec<usize>> {
    assert!(batch_size >= 1, "batch_size must be at least 1");
    rng.permutation(n)
        .chunks(batch_size)
        .map(<[usize]>::to_vec)
        .collect()
}

/// Lazily gathers the batches of one epoch.
pub struct Batches<'a> {
    features: &'a DenseMatrix,
    labels: &'a [usize],
    classes: usize,
    order: std::vec::IntoIter<Vec<usize>>,
}

impl Iterator for Batches<'_> {
    type Item = Batch;

    fn next(&mut self) -> Option<Batch> {
        let indices = self.order.next()?;
        let features = self.features.select_rows(&indices);
        let labels: Vec<usize> = indices.iter().map(|&i| self.labels[i]).collect();
        let one_hot = one_hot(&labels, self.classes).expect("labels validated up front");
        Some(Batch {
            indices,
            features,
            labels,
            one_hot,
        })
    }

    fn size_hint(&self) -> (usize, Option<usize>) {
        self.order.size_hint()
    }
}

pub fn shuffled_batches<'a>(
    features: &'a DenseMatrix,
    labels: &'a [usize],
    classes: usize,
    batch_size: usize,
    seed: u64,
) -> Result<Batches<'a>> {
    if batch_size == 0 {
        return Err(Error::InvalidArgument("batch_size must be at least 1".into()));
    }
    if features.rows() != labels.len() {
        return Err(Error::dims("shuffled_batches", features.rows(), labels.len()));
    }
    check_labels(labels, classes)?;
    let mut rng = SeededRng::new(seed);
    let order = shuffled_batch_indices(labels.len(), batch_size, &mut rng);
    Ok(Batches {
        features,
        labels,
        classes,
        order: order.into_iter(),
    })
}

/// Train/test split loaded from four IDX files.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub train_features: DenseMatrix,
    pub train_labels: Vec<usize>,
    pub test_features: DenseMatrix,
    pub test_labels: Vec<usize>,
    pub classes: usize,
}

impl Dataset {
    pub fn load(
        train_images: &Path,
        train_labels: &Path,
        test_images: &Path,
        test_labels: &Path,
        classes: usize,
        train_limit: Option<usize>,
        test_limit: Option<usize>,
    ) -> Result<Dataset> {
        let (train_features, train_labels) =
            load_split(train_images, train_labels, classes, train_limit)?;
        let (test_features, test_labels) =
            load_split(test_images, test_labels, classes, test_limit)?;
        if train_features.cols() != test_features.cols() {
            return Err(Error::dims(
                "Dataset::load",
                format!("{} pixels per test image", train_features.cols()),
                test_features.cols(),
            ));
        }
        Ok(Dataset {
            train_features,
            train_labels,
            test_features,
            test_labels,
            classes,
        })
    }
}

fn load_split(
    images: &Path,
    labels: &Path,
    classes: usize,
    limit: Option<usize>,
) -> Result<(DenseMatrix, Vec<usize>)> {
    let mut img = load_idx_images(images)?;
    let mut lab = load_idx_labels(labels)?;
    if img.count != lab.count() {
        return Err(Error::dims(
            "load_split",
            format!("{} labels", img.count),
            lab.count(),
        ));
    }
    if let Some(n) = limit {
        img.truncate(n);
        lab.truncate(n);
    }
    let labels = lab.indices();
    check_labels(&labels, classes)?;
    Ok((to_features(&img)?, labels))
}
