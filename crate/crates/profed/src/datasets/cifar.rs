//! Reader for the CIFAR binary record format.
//!
//! CIFAR-10 files hold 3073-byte records (1 label byte + 3072 pixel bytes);
//! CIFAR-100 holds 3074-byte records (coarse byte, fine byte, pixels). Pixels
//! are channel-planar RGB and are kept in that order when flattened.

use std::path::Path;

use ndarray::Array2;

use crate::error::{Error, Result};

use super::LabeledDataset;

pub const CIFAR_PIXELS: usize = 3 * 32 * 32;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CifarVariant {
    C10,
    C100,
}

impl CifarVariant {
    fn record_len(&self) -> usize {
        match self {
            CifarVariant::C10 => 1 + CIFAR_PIXELS,
            CifarVariant::C100 => 2 + CIFAR_PIXELS,
        }
    }

    fn num_classes(&self) -> usize {
        match self {
            CifarVariant::C10 => 10,
            CifarVariant::C100 => 100,
        }
    }

    fn name(&self) -> &'static str {
        match self {
            CifarVariant::C10 => "CIFAR10",
            CifarVariant::C100 => "CIFAR100",
        }
    }
}

/// Reads and concatenates CIFAR record files in the order given.
///
/// For CIFAR-100 the fine label is used; the coarse byte is validated
/// (`< 20`) and discarded.
pub fn load_cifar(paths: &[impl AsRef<Path>], variant: CifarVariant) -> Result<LabeledDataset> {
    let record_len = variant.record_len();
    let mut features: Vec<f64> = Vec::new();
    let mut labels: Vec<usize> = Vec::new();

    for path in paths {
        let path: &Path = path.as_ref();
        let bytes = std::fs::read(path)
            .map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
        if bytes.is_empty() || bytes.len() % record_len != 0 {
            return Err(Error::BadRecordLength {
                path: path.to_path_buf(),
                len: bytes.len(),
                record: record_len,
            });
        }
        for record in bytes.chunks_exact(record_len) {
            let fine = match variant {
                CifarVariant::C10 => record[0] as usize,
                CifarVariant::C100 => {
                    let coarse = record[0] as usize;
                    if coarse >= 20 {
                        return Err(Error::LabelOutOfRange {
                            label: coarse,
                            num_classes: 20,
                        });
                    }
                    record[1] as usize
                }
            };
            if fine >= variant.num_classes() {
                return Err(Error::LabelOutOfRange {
                    label: fine,
                    num_classes: variant.num_classes(),
                });
            }
            labels.push(fine);
            features.extend(record[record_len - CIFAR_PIXELS..].iter().map(|&b| b as f64 / 255.0));
        }
    }

    if labels.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let n = labels.len();
    let features = Array2::from_shape_vec((n, CIFAR_PIXELS), features)
        .expect("shape agrees with length by construction");
    LabeledDataset::new(variant.name(), features, labels, variant.num_classes())
}
