use std::path::Path;

use super::Dataset;
use crate::error::{Error, Result};

/// An unsigned-byte IDX array.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct IdxArray {
    pub dims: Vec<usize>,
    pub data: Vec<u8>,
}

/// Parses an IDX file holding unsigned bytes (type code 0x08).
pub fn parse_idx(bytes: &[u8]) -> Result<IdxArray> {
    if bytes.len() < 4 || bytes[0] != 0 || bytes[1] != 0 {
        return Err(Error::Format("missing IDX magic".into()));
    }
    if bytes[2] != 0x08 {
        return Err(Error::Format(format!("unsupported IDX element type 0x{:02x}", bytes[2])));
    }
    let rank = bytes[3] as usize;
    let header = 4 + 4 * rank;
    if bytes.len() < header {
        return Err(Error::Format("truncated IDX header".into()));
    }
    let dims: Vec<usize> = bytes[4..header]
        .chunks_exact(4)
        .map(|c| u32::from_be_bytes(c.try_into().expect("4 bytes")) as usize)
        .collect();
    let expected = header + dims.iter().product::<usize>();
    if bytes.len() != expected {
        return Err(Error::FileLength {
            path: "idx".into(),
            expected,
            actual: bytes.len(),
        });
    }
    Ok(IdxArray {
        dims,
        data: bytes[header..].to_vec(),
    })
}

pub fn write_idx(a: &IdxArray) -> Vec<u8> {
    let mut out = vec![0, 0, 0x08, a.dims.len() as u8];
    for &d in &a.dims {
        out.extend_from_slice(&(d as u32).to_be_bytes());
    }
    out.extend_from_slice(&a.data);
    out
}

fn read_pair(dir: &Path, images: &str, labels: &str) -> Result<Dataset> {
    let img = parse_idx(&std::fs::read(dir.join(images))?)?;
    let lab = parse_idx(&std::fs::read(dir.join(labels))?)?;
    if img.dims.len() != 3 || lab.dims.len() != 1 || img.dims[0] != lab.dims[0] {
        return Err(Error::Format(format!(
            "{images} / {labels}: dims {:?} and {:?}",
            img.dims, lab.dims
        )));
    }
    let ds = Dataset {
        height: img.dims[1],
        width: img.dims[2],
        channels: 1,
        classes: 10,
        images: img.data,
        labels: lab.data.iter().map(|&l| l as usize).collect(),
        coarse_labels: Vec::new(),
    };
    ds.validate()?;
    Ok(ds)
}

/// MNIST-style training and test sets from the four standard IDX files.
pub fn load_mnist(dir: &Path) -> Result<(Dataset, Dataset)> {
    Ok((
        read_pair(dir, "train-images-idx3-ubyte", "train-labels-idx1-ubyte")?,
        read_pair(dir, "t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte")?,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn roundtrip() {
        let a = IdxArray {
            dims: vec![2, 3, 2],
            data: (0..12).collect(),
        };
        let bytes = write_idx(&a);
        assert_eq!(&bytes[..8], &[0, 0, 8, 3, 0, 0, 0, 2]);
        assert_eq!(parse_idx(&bytes).unwrap(), a);
        assert!(parse_idx(&bytes[..bytes.len() - 1]).is_err());
    }

    #[test]
    fn loads_mnist_layout() {
        let dir = tempfile::tempdir().unwrap();
        let img = IdxArray {
            dims: vec![3, 28, 28],
            data: vec![7; 3 * 784],
        };
        let lab = IdxArray {
            dims: vec![3],
            data: vec![1, 2, 9],
        };
        for (i, l) in [("train-images-idx3-ubyte", "train-labels-idx1-ubyte"), ("t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte")] {
            std::fs::write(dir.path().join(i), write_idx(&img)).unwrap();
            std::fs::write(dir.path().join(l), write_idx(&lab)).unwrap();
        }
        let (train, test) = load_mnist(dir.path()).unwrap();
        assert_eq!((train.len(), train.height, train.channels), (3, 28, 1));
        assert_eq!(test.labels, vec![1, 2, 9]);
    }
}
