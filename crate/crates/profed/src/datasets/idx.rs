//! Parser for the IDX binary format used by the MNIST family.
//!
//! Image files carry magic `0x00000803` (unsigned byte, 3 dimensions), label
//! files `0x00000801`. All header integers are big-endian u32.

use std::path::Path;

use ndarray::Array2;

use crate::error::{Error, Result};

use super::LabeledDataset;

const IMAGE_MAGIC: u32 = 0x0000_0803;
const LABEL_MAGIC: u32 = 0x0000_0801;

fn read_u32(bytes: &[u8], offset: usize, path: &Path) -> Result<u32> {
    let end = offset + 4;
    if bytes.len() < end {
        return Err(Error::Truncated {
            path: path.to_path_buf(),
            expected: end,
            actual: bytes.len(),
        });
    }
    Ok(u32::from_be_bytes(bytes[offset..end].try_into().unwrap()))
}

/// Reads an IDX image/label file pair into a normalized dataset.
///
/// Pixels are divided by 255 and rows are flattened row-major; the class count
/// is inferred as `max label + 1`.
pub fn load_idx(images_path: &Path, labels_path: &Path) -> Result<LabeledDataset> {
    let image_bytes = std::fs::read(images_path)
        .map_err(|e| Error::io(format!("reading {}", images_path.display()), e))?;
    let label_bytes = std::fs::read(labels_path)
        .map_err(|e| Error::io(format!("reading {}", labels_path.display()), e))?;

    let image_magic = read_u32(&image_bytes, 0, images_path)?;
    if image_magic != IMAGE_MAGIC {
        return Err(Error::BadMagic {
            path: images_path.to_path_buf(),
            magic: image_magic,
            expected: IMAGE_MAGIC,
        });
    }
    let n = read_u32(&image_bytes, 4, images_path)? as usize;
    let rows = read_u32(&image_bytes, 8, images_path)? as usize;
    let cols = read_u32(&image_bytes, 12, images_path)? as usize;

    let label_magic = read_u32(&label_bytes, 0, labels_path)?;
    if label_magic != LABEL_MAGIC {
        return Err(Error::BadMagic {
            path: labels_path.to_path_buf(),
            magic: label_magic,
            expected: LABEL_MAGIC,
        });
    }
    let n_labels = read_u32(&label_bytes, 4, labels_path)? as usize;
    if n != n_labels {
        return Err(Error::CountMismatch {
            images: n,
            labels: n_labels,
        });
    }
    if n == 0 {
        return Err(Error::EmptyDataset);
    }

    let dim = rows * cols;
    let payload = &image_bytes[16..];
    if payload.len() < n * dim {
        return Err(Error::Truncated {
            path: images_path.to_path_buf(),
            expected: 16 + n * dim,
            actual: image_bytes.len(),
        });
    }
    let label_payload = &label_bytes[8..];
    if label_payload.len() < n {
        return Err(Error::Truncated {
            path: labels_path.to_path_buf(),
            expected: 8 + n,
            actual: label_bytes.len(),
        });
    }

    let features = Array2::from_shape_vec(
        (n, dim),
        payload[..n * dim].iter().map(|&b| b as f64 / 255.0).collect(),
    )
    .expect("shape agrees with length by construction");
    let labels: Vec<usize> = label_payload[..n].iter().map(|&b| b as usize).collect();
    let num_classes = labels.iter().max().copied().unwrap_or(0) + 1;

    let name = images_path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "idx".to_string());
    LabeledDataset::new(name, features, labels, num_classes)
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use std::io::Write;

    /// Serializes images (n x rows x cols bytes) and labels into IDX files.
    pub(crate) fn write_idx_pair(
        dir: &Path,
        prefix: &str,
        images: &[Vec<u8>],
        labels: &[u8],
        rows: u32,
        cols: u32,
    ) -> (std::path::PathBuf, std::path::PathBuf) {
        let image_path = dir.join(format!("{prefix}-images-idx3-ubyte"));
        let label_path = dir.join(format!("{prefix}-labels-idx1-ubyte"));
        let mut f = std::fs::File::create(&image_path).unwrap();
        f.write_all(&IMAGE_MAGIC.to_be_bytes()).unwrap();
        f.write_all(&(images.len() as u32).to_be_bytes()).unwrap();
        f.write_all(&rows.to_be_bytes()).unwrap();
        f.write_all(&cols.to_be_bytes()).unwrap();
        for img in images {
            f.write_all(img).unwrap();
        }
        let mut f = std::fs::File::create(&label_path).unwrap();
        f.write_all(&LABEL_MAGIC.to_be_bytes()).unwrap();
        f.write_all(&(labels.len() as u32).to_be_bytes()).unwrap();
        f.write_all(labels).unwrap();
        (image_path, label_path)
    }

    #[test]
    fn single_pixel_images_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let (ip, lp) = write_idx_pair(
            dir.path(),
            "t",
            &[vec![0], vec![128], vec![255]],
            &[0, 1, 2],
            1,
            1,
        );
        let d = load_idx(&ip, &lp).unwrap();
        assert_eq!(d.len(), 3);
        assert_eq!(d.feature_dim(), 1);
        assert_eq!(d.num_classes(), 3);
        assert_eq!(d.features()[[0, 0]], 0.0);
        assert_eq!(d.features()[[1, 0]], 128.0 / 255.0);
        assert_eq!(d.features()[[2, 0]], 1.0);
        assert_eq!(d.labels(), &[0, 1, 2]);
    }

    #[test]
    fn wrong_magic_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let (ip, lp) = write_idx_pair(dir.path(), "t", &[vec![0]], &[0], 1, 1);
        let mut bytes = std::fs::read(&ip).unwrap();
        bytes[3] = 0x99;
        std::fs::write(&ip, bytes).unwrap();
        assert!(matches!(load_idx(&ip, &lp), Err(Error::BadMagic { .. })));
    }

    #[test]
    fn count_mismatch_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let (ip, lp) = write_idx_pair(dir.path(), "t", &[vec![0], vec![1]], &[0], 1, 1);
        assert!(matches!(
            load_idx(&ip, &lp),
            Err(Error::CountMismatch { images: 2, labels: 1 })
        ));
    }

    #[test]
    fn truncated_payload_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let (ip, lp) = write_idx_pair(dir.path(), "t", &[vec![7; 4], vec![7; 4]], &[0, 1], 2, 2);
        let bytes = std::fs::read(&ip).unwrap();
        std::fs::write(&ip, &bytes[..bytes.len() - 3]).unwrap();
        assert!(matches!(load_idx(&ip, &lp), Err(Error::Truncated { .. })));
    }
}
