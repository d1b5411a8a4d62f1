//! Reader for the IDX binary format used by the MNIST distribution.

use std::fs::File;
use std::io::{BufReader, Read};
use std::path::Path;

use byteorder::{BigEndian, ReadBytesExt};
use ndarray::Array2;

use crate::{Error, Result};

/// Pixels per image (28 x 28).
pub const IMAGE_PIXELS: usize = 784;
/// Number of source classes.
pub const NUM_CLASSES: usize = 10;

const IMAGE_MAGIC: u32 = 2051;
const LABEL_MAGIC: u32 = 2049;

/// A labeled image set. Pixels are row-major N x 784 in `[0, 1]`; each sample
/// carries a stable id (its index in the source file, plus any offset applied
/// by the caller) so split disjointness can be checked exactly.
#[derive(Debug, Clone)]
pub struct LabeledImages {
    pub pixels: Array2<f64>,
    pub labels: Vec<u8>,
    pub ids: Vec<u32>,
}

impl LabeledImages {
    pub fn new(pixels: Array2<f64>, labels: Vec<u8>, ids: Vec<u32>) -> Result<Self> {
        if pixels.nrows() == 0 {
            return Err(Error::Consistency("empty image set".into()));
        }
        if pixels.ncols() != IMAGE_PIXELS {
            return Err(Error::Dimension(format!(
                "expected {} pixels per image, got {}",
                IMAGE_PIXELS,
                pixels.ncols()
            )));
        }
        if pixels.nrows() != labels.len() || labels.len() != ids.len() {
            return Err(Error::Consistency(format!(
                "pixels/labels/ids length mismatch: {} / {} / {}",
                pixels.nrows(),
                labels.len(),
                ids.len()
            )));
        }
        if let Some(bad) = labels.iter().find(|&&l| l as usize >= NUM_CLASSES) {
            return Err(Error::Consistency(format!("label {bad} out of range 0..9")));
        }
        Ok(Self {
            pixels,
            labels,
            ids,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Select a subset by row indices, keeping pixel rows, labels, and ids aligned.
    pub fn select(&self, indices: &[usize]) -> LabeledImages {
        let mut pixels = Array2::zeros((indices.len(), IMAGE_PIXELS));
        let mut labels = Vec::with_capacity(indices.len());
        let mut ids = Vec::with_capacity(indices.len());
        for (row, &i) in indices.iter().enumerate() {
            pixels.row_mut(row).assign(&self.pixels.row(i));
            labels.push(self.labels[i]);
            ids.push(self.ids[i]);
        }
        LabeledImages {
            pixels,
            labels,
            ids,
        }
    }
}

/// Load an MNIST-style image/label file pair. Pixel bytes are scaled from
/// `[0, 255]` to `[0, 1]`.
pub fn load_idx(images_path: &Path, labels_path: &Path) -> Result<LabeledImages> {
    let (n_images, pixels) = read_images(images_path)?;
    let labels = read_labels(labels_path)?;
    if n_images != labels.len() {
        return Err(Error::Consistency(format!(
            "{} has {} images but {} has {} labels",
            images_path.display(),
            n_images,
            labels_path.display(),
            labels.len()
        )));
    }
    let ids = (0..n_images as u32).collect();
    LabeledImages::new(pixels, labels, ids)
}

fn read_images(path: &Path) -> Result<(usize, Array2<f64>)> {
    let mut r = open(path)?;
    let magic = read_u32(&mut r, path)?;
    if magic != IMAGE_MAGIC {
        return Err(Error::IdxFormat {
            path: path.to_path_buf(),
            detail: format!("image magic {magic}, expected {IMAGE_MAGIC}"),
        });
    }
    let n = read_u32(&mut r, path)? as usize;
    let rows = read_u32(&mut r, path)? as usize;
    let cols = read_u32(&mut r, path)? as usize;
    if rows * cols != IMAGE_PIXELS {
        return Err(Error::IdxFormat {
            path: path.to_path_buf(),
            detail: format!("image size {rows}x{cols}, expected 28x28"),
        });
    }
    let mut bytes = vec![0u8; n * IMAGE_PIXELS];
    r.read_exact(&mut bytes).map_err(|e| Error::io(path, e))?;
    let values: Vec<f64> = bytes.iter().map(|&b| f64::from(b) / 255.0).collect();
    let pixels = Array2::from_shape_vec((n, IMAGE_PIXELS), values)
        .expect("shape consistent by construction");
    Ok((n, pixels))
}

fn read_labels(path: &Path) -> Result<Vec<u8>> {
    let mut r = open(path)?;
    let magic = read_u32(&mut r, path)?;
    if magic != LABEL_MAGIC {
        return Err(Error::IdxFormat {
            path: path.to_path_buf(),
            detail: format!("label magic {magic}, expected {LABEL_MAGIC}"),
        });
    }
    let n = read_u32(&mut r, path)? as usize;
    let mut labels = vec![0u8; n];
    r.read_exact(&mut labels).map_err(|e| Error::io(path, e))?;
    Ok(labels)
}

fn open(path: &Path) -> Result<BufReader<File>> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|e| Error::io(path, e))
}

fn read_u32(r: &mut impl Read, path: &Path) -> Result<u32> {
    r.read_u32::<BigEndian>().map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn write_idx_images(path: &Path, magic: u32, images: &[[u8; IMAGE_PIXELS]]) {
        let mut f = File::create(path).unwrap();
        f.write_all(&magic.to_be_bytes()).unwrap();
        f.write_all(&(images.len() as u32).to_be_bytes()).unwrap();
        f.write_all(&28u32.to_be_bytes()).unwrap();
        f.write_all(&28u32.to_be_bytes()).unwrap();
        for img in images {
            f.write_all(img).unwrap();
        }
    }

    fn write_idx_labels(path: &Path, magic: u32, labels: &[u8]) {
        let mut f = File::create(path).unwrap();
        f.write_all(&magic.to_be_bytes()).unwrap();
        f.write_all(&(labels.len() as u32).to_be_bytes()).unwrap();
        f.write_all(labels).unwrap();
    }

    #[test]
    fn loads_and_scales_pixels() {
        let dir = tempfile::tempdir().unwrap();
        let ip = dir.path().join("img");
        let lp = dir.path().join("lab");
        let mut img = [0u8; IMAGE_PIXELS];
        img[0] = 255;
        img[1] = 0;
        img[2] = 128;
        write_idx_images(&ip, IMAGE_MAGIC, &[img]);
        write_idx_labels(&lp, LABEL_MAGIC, &[7]);
        let d = load_idx(&ip, &lp).unwrap();
        assert_eq!(d.len(), 1);
        assert_eq!(d.pixels[[0, 0]], 1.0);
        assert_eq!(d.pixels[[0, 1]], 0.0);
        assert!((d.pixels[[0, 2]] - 128.0 / 255.0).abs() < 1e-15);
        assert_eq!(d.labels, vec![7]);
        assert_eq!(d.ids, vec![0]);
    }

    #[test]
    fn rejects_wrong_magic() {
        let dir = tempfile::tempdir().unwrap();
        let ip = dir.path().join("img");
        let lp = dir.path().join("lab");
        write_idx_images(&ip, 1234, &[[0u8; IMAGE_PIXELS]]);
        write_idx_labels(&lp, LABEL_MAGIC, &[1]);
        let err = load_idx(&ip, &lp).unwrap_err();
        match err {
            Error::IdxFormat { path, .. } => assert_eq!(path, ip),
            other => panic!("expected IdxFormat, got {other:?}"),
        }
    }

    #[test]
    fn rejects_count_mismatch() {
        let dir = tempfile::tempdir().unwrap();
        let ip = dir.path().join("img");
        let lp = dir.path().join("lab");
        write_idx_images(&ip, IMAGE_MAGIC, &[[0u8; IMAGE_PIXELS], [0u8; IMAGE_PIXELS]]);
        write_idx_labels(&lp, LABEL_MAGIC, &[1]);
        assert!(matches!(
            load_idx(&ip, &lp).unwrap_err(),
            Error::Consistency(_)
        ));
    }
}
