use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

use super::{Dataset, Split};

const RECORD: usize = 3073;
const PIXELS: usize = 3072;
const CLASSES: usize = 10;

/// Loads and concatenates CIFAR-10 binary batch files. Each record is one
/// label byte followed by a channel-major 3×32×32 image; pixels are scaled
/// to [0, 1].
pub fn load_cifar_bin<P: AsRef<Path>>(paths: &[P], split: Split) -> Result<Dataset> {
    let mut data = Vec::new();
    let mut labels = Vec::new();
    for p in paths {
        let path = p.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::parse(path, e.to_string()))?;
        if bytes.is_empty() || bytes.len() % RECORD != 0 {
            return Err(Error::parse(
                path,
                format!("{} bytes is not a whole number of {RECORD}-byte records", bytes.len()),
            ));
        }
        for rec in bytes.chunks_exact(RECORD) {
            let label = rec[0] as usize;
            if label >= CLASSES {
                return Err(Error::parse(path, format!("label {label} outside [0, {CLASSES})")));
            }
            labels.push(label);
            data.extend(rec[1..].iter().map(|&b| b as f32 / 255.0));
        }
    }
    if labels.is_empty() {
        return Err(Error::InvalidArgument("no CIFAR batch files given".into()));
    }
    debug_assert_eq!(data.len(), labels.len() * PIXELS);
    let inputs = Tensor::from_vec(&[labels.len(), 3, 32, 32], data)?;
    Dataset::new(inputs, labels, CLASSES, split)
}
