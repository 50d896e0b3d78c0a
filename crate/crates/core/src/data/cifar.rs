use std::path::{Path, PathBuf};

use super::Dataset;
use crate::error::{Error, Result};

/// Bytes per image: three 32x32 planes.
pub const CIFAR_PIXELS: usize = 3072;
const SIDE: usize = 32;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CifarVariant {
    Ten,
    Hundred,
}

impl CifarVariant {
    pub fn label_bytes(self) -> usize {
        match self {
            CifarVariant::Ten => 1,
            CifarVariant::Hundred => 2,
        }
    }

    pub fn record_len(self) -> usize {
        self.label_bytes() + CIFAR_PIXELS
    }

    pub fn classes(self) -> usize {
        match self {
            CifarVariant::Ten => 10,
            CifarVariant::Hundred => 100,
        }
    }

    fn subdir(self) -> &'static str {
        match self {
            CifarVariant::Ten => "cifar-10-batches-bin",
            CifarVariant::Hundred => "cifar-100-binary",
        }
    }

    fn files(self) -> (Vec<(&'static str, usize)>, (&'static str, usize)) {
        match self {
            CifarVariant::Ten => (
                vec![
                    ("data_batch_1.bin", 10_000),
                    ("data_batch_2.bin", 10_000),
                    ("data_batch_3.bin", 10_000),
                    ("data_batch_4.bin", 10_000),
                    ("data_batch_5.bin", 10_000),
                ],
                ("test_batch.bin", 10_000),
            ),
            CifarVariant::Hundred => (vec![("train.bin", 50_000)], ("test.bin", 10_000)),
        }
    }
}

/// Parses CIFAR binary records. Pixels are reordered from channel planes to
/// `H x W x C`. With `expected_records` the byte count must match exactly.
pub fn parse_cifar(
    bytes: &[u8],
    variant: CifarVariant,
    expected_records: Option<usize>,
    path: &str,
) -> Result<Dataset> {
    let rec = variant.record_len();
    let expected = match expected_records {
        Some(n) => n * rec,
        None => bytes.len().div_ceil(rec).max(1) * rec,
    };
    if bytes.len() != expected {
        return Err(Error::FileLength {
            path: path.to_string(),
            expected,
            actual: bytes.len(),
        });
    }
    let n = bytes.len() / rec;
    let mut images = Vec::with_capacity(n * CIFAR_PIXELS);
    let mut labels = Vec::with_capacity(n);
    let mut coarse = Vec::new();
    let plane = SIDE * SIDE;
    for r in bytes.chunks_exact(rec) {
        match variant {
            CifarVariant::Ten => labels.push(r[0] as usize),
            CifarVariant::Hundred => {
                coarse.push(r[0]);
                labels.push(r[1] as usize);
            }
        }
        let px = &r[variant.label_bytes()..];
        for p in 0..plane {
            images.extend_from_slice(&[px[p], px[plane + p], px[2 * plane + p]]);
        }
    }
    let ds = Dataset {
        height: SIDE,
        width: SIDE,
        channels: 3,
        classes: variant.classes(),
        images,
        labels,
        coarse_labels: coarse,
    };
    ds.validate()?;
    Ok(ds)
}

/// Writes a dataset back in the CIFAR record layout.
pub fn reserialize_cifar(ds: &Dataset, variant: CifarVariant) -> Result<Vec<u8>> {
    if (ds.height, ds.width, ds.channels) != (SIDE, SIDE, 3) {
        return Err(Error::Format("CIFAR records hold 32x32x3 images".into()));
    }
    if variant == CifarVariant::Hundred && ds.coarse_labels.len() != ds.len() {
        return Err(Error::Format("CIFAR-100 records need coarse labels".into()));
    }
    let plane = SIDE * SIDE;
    let mut out = Vec::with_capacity(ds.len() * variant.record_len());
    for i in 0..ds.len() {
        if variant == CifarVariant::Hundred {
            out.push(ds.coarse_labels[i]);
        }
        out.push(ds.labels[i] as u8);
        let img = ds.image(i);
        for ch in 0..3 {
            out.extend((0..plane).map(|p| img[p * 3 + ch]));
        }
    }
    Ok(out)
}

fn locate(dir: &Path, variant: CifarVariant, name: &str) -> Option<PathBuf> {
    [dir.join(name), dir.join(variant.subdir()).join(name)]
        .into_iter()
        .find(|p| p.is_file())
}

fn read(dir: &Path, variant: CifarVariant, name: &str, records: usize) -> Result<Dataset> {
    let path = locate(dir, variant, name).ok_or_else(|| {
        Error::Io(std::io::Error::new(
            std::io::ErrorKind::NotFound,
            format!("{name} not found under {}", dir.display()),
        ))
    })?;
    let bytes = std::fs::read(&path)?;
    parse_cifar(&bytes, variant, Some(records), &path.display().to_string())
}

/// Loads the standard training and test files from `dir` (or its
/// `cifar-10-batches-bin` / `cifar-100-binary` subdirectory).
pub fn load_cifar(dir: &Path, variant: CifarVariant) -> Result<(Dataset, Dataset)> {
    let (train_files, (test_name, test_n)) = variant.files();
    let parts = train_files
        .iter()
        .map(|&(name, n)| read(dir, variant, name, n))
        .collect::<Result<Vec<_>>>()?;
    let train = Dataset::concat(&parts)?;
    let test = read(dir, variant, test_name, test_n)?;
    Ok((train, test))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn records(n: usize, variant: CifarVariant) -> Vec<u8> {
        let mut out = Vec::new();
        for i in 0..n {
            if variant == CifarVariant::Hundred {
                out.push((i % 20) as u8);
            }
            out.push((i % variant.classes()) as u8);
            out.extend((0..CIFAR_PIXELS).map(|p| ((p * 7 + i * 13) % 256) as u8));
        }
        out
    }

    #[test]
    fn record_lengths() {
        assert_eq!(CifarVariant::Ten.record_len() * 10_000, 30_730_000);
        assert_eq!(CifarVariant::Hundred.record_len() * 50_000, 153_700_000);
    }

    #[test]
    fn roundtrip_is_bit_exact() {
        for v in [CifarVariant::Ten, CifarVariant::Hundred] {
            let bytes = records(7, v);
            let ds = parse_cifar(&bytes, v, Some(7), "mem").unwrap();
            assert_eq!(ds.len(), 7);
            assert_eq!(reserialize_cifar(&ds, v).unwrap(), bytes);
        }
    }

    #[test]
    fn planes_become_interleaved() {
        let bytes = records(1, CifarVariant::Ten);
        let ds = parse_cifar(&bytes, CifarVariant::Ten, None, "mem").unwrap();
        // pixel 5: red at 1 + 5, green at 1 + 1024 + 5, blue at 1 + 2048 + 5
        assert_eq!(&ds.image(0)[15..18], &[bytes[6], bytes[1 + 1024 + 5], bytes[1 + 2048 + 5]]);
    }

    #[test]
    fn fine_label_is_used() {
        let ds = parse_cifar(&records(3, CifarVariant::Hundred), CifarVariant::Hundred, None, "mem").unwrap();
        assert_eq!(ds.labels, vec![0, 1, 2]);
        assert_eq!(ds.classes, 100);
    }

    #[test]
    fn truncated_file_reports_lengths() {
        let bytes = records(3, CifarVariant::Ten);
        let err = parse_cifar(&bytes[..bytes.len() - 1], CifarVariant::Ten, Some(3), "batch").unwrap_err();
        match err {
            Error::FileLength { expected, actual, .. } => {
                assert_eq!(expected, 3 * 3073);
                assert_eq!(actual, 3 * 3073 - 1);
            }
            other => panic!("{other}"),
        }
        assert!(parse_cifar(&bytes[..100], CifarVariant::Ten, None, "batch").is_err());
    }

    #[test]
    fn loads_from_directory() {
        let dir = tempfile::tempdir().unwrap();
        let sub = dir.path().join("cifar-100-binary");
        std::fs::create_dir(&sub).unwrap();
        // wrong length on purpose: the loader must refuse rather than truncate
        std::fs::write(sub.join("train.bin"), records(5, CifarVariant::Hundred)).unwrap();
        std::fs::write(sub.join("test.bin"), records(5, CifarVariant::Hundred)).unwrap();
        assert!(matches!(
            load_cifar(dir.path(), CifarVariant::Hundred),
            Err(Error::FileLength { .. })
        ));
        assert!(load_cifar(&dir.path().join("missing"), CifarVariant::Ten).is_err());
    }
}
