//! IDX corpus reader (big-endian header; `0x00000803` images,
//! `0x00000801` labels).

use std::path::Path;

use crate::error::{Error, Result};

const IMAGE_MAGIC: u32 = 0x0000_0803;
const LABEL_MAGIC: u32 = 0x0000_0801;

/// Grayscale images normalized to `[0, 1]` with class labels.
#[derive(Clone, Debug, PartialEq)]
pub struct Corpus {
    pub rows: usize,
    pub cols: usize,
    pub images: Vec<f32>,
    pub labels: Vec<u8>,
}

impl Corpus {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn image(&self, i: usize) -> &[f32] {
        let p = self.rows * self.cols;
        &self.images[i * p..(i + 1) * p]
    }

    /// First `n` samples.
    pub fn truncated(mut self, n: usize) -> Self {
        let n = n.min(self.len());
        self.images.truncate(n * self.rows * self.cols);
        self.labels.truncate(n);
        self
    }

    pub fn n_classes(&self) -> usize {
        self.labels.iter().copied().max().map_or(0, |m| m as usize + 1)
    }
}

fn be_u32(bytes: &[u8], offset: usize) -> Result<u32> {
    bytes
        .get(offset..offset + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| Error::Format {
            offset: offset as u64,
            message: format!(
                "truncated header: expected at least {} bytes, got {}",
                offset + 4,
                bytes.len()
            ),
        })
}

fn check_magic(bytes: &[u8], want: u32) -> Result<()> {
    let magic = be_u32(bytes, 0)?;
    if magic != want {
        return Err(Error::Format {
            offset: 0,
            message: format!("bad magic {magic:#010x}, expected {want:#010x}"),
        });
    }
    Ok(())
}

fn check_len(bytes: &[u8], expected: u64) -> Result<()> {
    if (bytes.len() as u64) < expected {
        return Err(Error::Format {
            offset: bytes.len() as u64,
            message: format!(
                "truncated file: expected {expected} bytes, got {}",
                bytes.len()
            ),
        });
    }
    Ok(())
}

/// Returns `(count, rows, cols, pixels / 255)`.
pub fn parse_idx_images(bytes: &[u8]) -> Result<(usize, usize, usize, Vec<f32>)> {
    check_magic(bytes, IMAGE_MAGIC)?;
    let n = be_u32(bytes, 4)? as u64;
    let rows = be_u32(bytes, 8)? as u64;
    let cols = be_u32(bytes, 12)? as u64;
    let expected = 16 + n * rows * cols;
    check_len(bytes, expected)?;
    let pixels = bytes[16..expected as usize]
        .iter()
        .map(|&b| b as f32 / 255.0)
        .collect();
    Ok((n as usize, rows as usize, cols as usize, pixels))
}

pub fn parse_idx_labels(bytes: &[u8]) -> Result<Vec<u8>> {
    check_magic(bytes, LABEL_MAGIC)?;
    let n = be_u32(bytes, 4)? as u64;
    check_len(bytes, 8 + n)?;
    Ok(bytes[8..8 + n as usize].to_vec())
}

pub fn load_idx_corpus(images_path: impl AsRef<Path>, labels_path: impl AsRef<Path>) -> Result<Corpus> {
    let read = |p: &Path| std::fs::read(p).map_err(|e| Error::io(p, e));
    let (n, rows, cols, images) = parse_idx_images(&read(images_path.as_ref())?)?;
    let labels = parse_idx_labels(&read(labels_path.as_ref())?)?;
    if labels.len() != n {
        return Err(Error::Format {
            offset: 4,
            message: format!("{n} images but {} labels", labels.len()),
        });
    }
    Ok(Corpus {
        rows,
        cols,
        images,
        labels,
    })
}

/// Serializes a corpus back to IDX bytes `(images, labels)`.
pub fn encode_idx(corpus: &Corpus) -> (Vec<u8>, Vec<u8>) {
    let mut img = Vec::with_capacity(16 + corpus.images.len());
    for v in [
        IMAGE_MAGIC,
        corpus.len() as u32,
        corpus.rows as u32,
        corpus.cols as u32,
    ] {
        img.extend_from_slice(&v.to_be_bytes());
    }
    img.extend(corpus.images.iter().map(|&p| (p * 255.0).round() as u8));
    let mut lab = Vec::with_capacity(8 + corpus.len());
    lab.extend_from_slice(&LABEL_MAGIC.to_be_bytes());
    lab.extend_from_slice(&(corpus.len() as u32).to_be_bytes());
    lab.extend_from_slice(&corpus.labels);
    (img, lab)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> Corpus {
        Corpus {
            rows: 2,
            cols: 2,
            images: vec![0.0, 1.0, 0.2, 0.6, 1.0, 0.0, 0.0, 0.4],
            labels: vec![3, 7],
        }
    }

    #[test]
    fn round_trip_through_bytes() {
        let (img, lab) = encode_idx(&tiny());
        let (n, r, c, px) = parse_idx_images(&img).unwrap();
        assert_eq!((n, r, c), (2, 2, 2));
        assert_eq!(px[1], 1.0);
        assert_eq!(px[2], 51.0 / 255.0);
        assert_eq!(parse_idx_labels(&lab).unwrap(), vec![3, 7]);
    }

    #[test]
    fn truncated_file_names_lengths() {
        let (img, _) = encode_idx(&tiny());
        let err = parse_idx_images(&img[..img.len() - 3]).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("expected 24 bytes, got 21"), "{msg}");
    }

    #[test]
    fn wrong_magic_rejected() {
        let (_, lab) = encode_idx(&tiny());
        assert!(matches!(
            parse_idx_images(&lab),
            Err(Error::Format { offset: 0, .. })
        ));
    }

    #[test]
    fn count_mismatch_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let (img, _) = encode_idx(&tiny());
        let (_, lab) = encode_idx(&tiny().truncated(1));
        std::fs::write(dir.path().join("i"), img).unwrap();
        std::fs::write(dir.path().join("l"), lab).unwrap();
        let err = load_idx_corpus(dir.path().join("i"), dir.path().join("l")).unwrap_err();
        assert!(err.to_string().contains("2 images but 1 labels"));
    }
}
