use std::fs::File;
use std::io::{BufReader, Read};
use std::path::{Path, PathBuf};

use flate2::read::GzDecoder;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

use super::{Dataset, Split};

const IMAGE_MAGIC: u32 = 0x0000_0803;
const LABEL_MAGIC: u32 = 0x0000_0801;
const MNIST_CLASSES: usize = 10;

fn read_all(path: &Path) -> Result<Vec<u8>> {
    let f = BufReader::new(File::open(path).map_err(|e| Error::parse(path, e.to_string()))?);
    let mut buf = Vec::new();
    if path.extension().is_some_and(|e| e == "gz") {
        GzDecoder::new(f).read_to_end(&mut buf)
    } else {
        let mut f = f;
        f.read_to_end(&mut buf)
    }
    .map_err(|e| Error::parse(path, e.to_string()))?;
    Ok(buf)
}

fn be_u32(bytes: &[u8], at: usize, path: &Path) -> Result<u32> {
    bytes
        .get(at..at + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| Error::parse(path, "header cut short"))
}

/// Parses an IDX file and returns `(dims, payload)`.
fn parse_idx<'a>(bytes: &'a [u8], magic: u32, path: &Path) -> Result<(Vec<usize>, &'a [u8])> {
    let found = be_u32(bytes, 0, path)?;
    if found != magic {
        return Err(Error::parse(path, format!("magic {found:#010x}, expected {magic:#010x}")));
    }
    let ndim = (magic & 0xff) as usize;
    let mut dims = Vec::with_capacity(ndim);
    for d in 0..ndim {
        dims.push(be_u32(bytes, 4 + 4 * d, path)? as usize);
    }
    let start = 4 + 4 * ndim;
    let len: usize = dims.iter().product();
    if bytes.len() != start + len {
        return Err(Error::parse(
            path,
            format!("dimensions {dims:?} need {len} bytes, file holds {}", bytes.len().saturating_sub(start)),
        ));
    }
    Ok((dims, &bytes[start..]))
}

/// Loads an IDX image/label pair (gzipped if the name ends in `.gz`).
/// Pixels are scaled to [0, 1]; images come out as `[n, 1, rows, cols]`.
/// Standardization is a separate step, see [`Dataset::standardize`].
pub fn load_idx(images: impl AsRef<Path>, labels: impl AsRef<Path>, split: Split) -> Result<Dataset> {
    let (ipath, lpath) = (images.as_ref(), labels.as_ref());
    let ibytes = read_all(ipath)?;
    let lbytes = read_all(lpath)?;
    let (idims, pixels) = parse_idx(&ibytes, IMAGE_MAGIC, ipath)?;
    let (ldims, raw_labels) = parse_idx(&lbytes, LABEL_MAGIC, lpath)?;
    if idims[0] != ldims[0] {
        return Err(Error::parse(
            lpath,
            format!("{} labels for {} images", ldims[0], idims[0]),
        ));
    }
    if idims[0] == 0 {
        return Err(Error::parse(ipath, "no images"));
    }
    if let Some(&bad) = raw_labels.iter().find(|&&l| l as usize >= MNIST_CLASSES) {
        return Err(Error::parse(lpath, format!("label {bad} outside [0, {MNIST_CLASSES})")));
    }
    let data = pixels.iter().map(|&p| p as f32 / 255.0).collect();
    let inputs = Tensor::from_vec(&[idims[0], 1, idims[1], idims[2]], data)?;
    Dataset::new(
        inputs,
        raw_labels.iter().map(|&l| l as usize).collect(),
        MNIST_CLASSES,
        split,
    )
}

/// Loads a split from a directory holding the canonical MNIST file names,
/// gzipped or not.
pub fn load_mnist(dir: impl AsRef<Path>, split: Split) -> Result<Dataset> {
    let prefix = match split {
        Split::Train => "train",
        Split::Test => "t10k",
    };
    let find = |stem: &str| -> PathBuf {
        let plain = dir.as_ref().join(stem);
        let gz = dir.as_ref().join(format!("{stem}.gz"));
        if plain.exists() {
            plain
        } else {
            gz
        }
    };
    load_idx(
        find(&format!("{prefix}-images-idx3-ubyte")),
        find(&format!("{prefix}-labels-idx1-ubyte")),
        split,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn idx_bytes(magic: u32, dims: &[u32], payload: &[u8]) -> Vec<u8> {
        let mut v = magic.to_be_bytes().to_vec();
        for d in dims {
            v.extend_from_slice(&d.to_be_bytes());
        }
        v.extend_from_slice(payload);
        v
    }

    fn write(dir: &Path, name: &str, bytes: &[u8]) -> PathBuf {
        let p = dir.join(name);
        File::create(&p).unwrap().write_all(bytes).unwrap();
        p
    }

    #[test]
    fn small_pair_parses() {
        let dir = tempfile::tempdir().unwrap();
        let img = write(dir.path(), "i", &idx_bytes(IMAGE_MAGIC, &[2, 2, 2], &[0, 255, 51, 102, 0, 0, 0, 255]));
        let lab = write(dir.path(), "l", &idx_bytes(LABEL_MAGIC, &[2], &[3, 9]));
        let d = load_idx(img, lab, Split::Train).unwrap();
        assert_eq!(d.inputs().shape(), &[2, 1, 2, 2]);
        assert_eq!(d.labels(), &[3, 9]);
        assert_eq!(d.inputs().data()[1], 1.0);
        assert!((d.inputs().data()[2] - 0.2).abs() < 1e-7);
    }

    #[test]
    fn label_ten_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let img = write(dir.path(), "i", &idx_bytes(IMAGE_MAGIC, &[1, 1, 1], &[0]));
        let lab = write(dir.path(), "l", &idx_bytes(LABEL_MAGIC, &[1], &[10]));
        assert!(matches!(load_idx(img, lab, Split::Train), Err(Error::Parse { .. })));
    }

    #[test]
    fn count_mismatch_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let img = write(dir.path(), "i", &idx_bytes(IMAGE_MAGIC, &[2, 1, 1], &[0, 1]));
        let lab = write(dir.path(), "l", &idx_bytes(LABEL_MAGIC, &[3], &[1, 2, 3]));
        assert!(matches!(load_idx(img, lab, Split::Train), Err(Error::Parse { .. })));
    }

    #[test]
    fn wrong_magic_and_short_payload_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let img = write(dir.path(), "i", &idx_bytes(LABEL_MAGIC, &[1], &[0]));
        let lab = write(dir.path(), "l", &idx_bytes(LABEL_MAGIC, &[1], &[1]));
        assert!(load_idx(&img, &lab, Split::Train).is_err());
        let img = write(dir.path(), "j", &idx_bytes(IMAGE_MAGIC, &[1, 2, 2], &[0, 0, 0]));
        assert!(load_idx(&img, &lab, Split::Train).is_err());
    }
}
