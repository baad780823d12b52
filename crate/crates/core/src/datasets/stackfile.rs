//! `VISTACK1` binary stack files.
//!
//! Layout (little-endian): 8-byte magic, seven `u32` header fields
//! (version, samples, slices, height, width, classes, reserved), then one
//! `u16` label per sample, then sample-major `f32` intensities.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use super::{DatasetMeta, IlluminationDataset};
use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"VISTACK1";
const VERSION: u32 = 1;
const HEADER_LEN: u64 = 36;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct StackHeader {
    pub n_samples: u32,
    pub n_slices: u32,
    pub height: u32,
    pub width: u32,
    pub n_classes: u32,
}

impl StackHeader {
    fn of(ds: &IlluminationDataset) -> Result<Self> {
        let narrow = |v: usize, what: &str| {
            u32::try_from(v).map_err(|_| Error::Validation(format!("{what} {v} exceeds u32")))
        };
        if ds.n_classes() > u16::MAX as usize + 1 {
            return Err(Error::Validation(format!("{} classes exceed u16 labels", ds.n_classes())));
        }
        let (h, w) = ds.dims();
        Ok(Self {
            n_samples: narrow(ds.len(), "sample count")?,
            n_slices: narrow(ds.n_slices(), "slice count")?,
            height: narrow(h, "height")?,
            width: narrow(w, "width")?,
            n_classes: narrow(ds.n_classes(), "class count")?,
        })
    }

    /// Values per stack, or `None` on overflow.
    fn stack_len(&self) -> Option<u64> {
        (self.n_slices as u64)
            .checked_mul(self.height as u64)?
            .checked_mul(self.width as u64)
    }

    /// Total file size implied by the header, or `None` on overflow.
    pub fn file_len(&self) -> Option<u64> {
        let data = self.stack_len()?.checked_mul(self.n_samples as u64)?.checked_mul(4)?;
        HEADER_LEN
            .checked_add(2 * self.n_samples as u64)?
            .checked_add(data)
    }

    fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(HEADER_LEN as usize);
        out.extend_from_slice(MAGIC);
        for v in [
            VERSION,
            self.n_samples,
            self.n_slices,
            self.height,
            self.width,
            self.n_classes,
            0,
        ] {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    fn decode(bytes: &[u8; HEADER_LEN as usize]) -> Result<Self> {
        if &bytes[..8] != MAGIC {
            return Err(Error::Format {
                offset: 0,
                message: format!("bad magic {:?}", String::from_utf8_lossy(&bytes[..8])),
            });
        }
        let field = |i: usize| {
            let o = 8 + 4 * i;
            u32::from_le_bytes([bytes[o], bytes[o + 1], bytes[o + 2], bytes[o + 3]])
        };
        if field(0) != VERSION {
            return Err(Error::Format {
                offset: 8,
                message: format!("version {} not supported (expected {VERSION})", field(0)),
            });
        }
        let h = Self {
            n_samples: field(1),
            n_slices: field(2),
            height: field(3),
            width: field(4),
            n_classes: field(5),
        };
        if h.file_len().is_none_or(|n| usize::try_from(n).is_err()) {
            return Err(Error::Format {
                offset: 12,
                message: format!("dimensions overflow: {h:?}"),
            });
        }
        Ok(h)
    }
}

fn io(path: &Path) -> impl Fn(std::io::Error) -> Error + '_ {
    move |e| Error::io(path, e)
}

pub fn read_stack_header(path: impl AsRef<Path>) -> Result<StackHeader> {
    let path = path.as_ref();
    let mut r = File::open(path).map_err(io(path))?;
    read_header(&mut r, path)
}

fn read_header(r: &mut impl Read, path: &Path) -> Result<StackHeader> {
    let mut buf = [0u8; HEADER_LEN as usize];
    read_exact_at(r, &mut buf, 0, path)?;
    StackHeader::decode(&buf)
}

fn read_exact_at(r: &mut impl Read, buf: &mut [u8], offset: u64, path: &Path) -> Result<()> {
    r.read_exact(buf).map_err(|e| {
        if e.kind() == std::io::ErrorKind::UnexpectedEof {
            Error::Format {
                offset,
                message: format!("truncated: needed {} more bytes", buf.len()),
            }
        } else {
            Error::io(path, e)
        }
    })
}

pub fn save_stack_file(dataset: &IlluminationDataset, path: impl AsRef<Path>) -> Result<()> {
    let header = StackHeader::of(dataset)?;
    let mut w = StackFileWriter::create(path, header, dataset.labels())?;
    for i in 0..dataset.len() {
        w.push(dataset.stack_data(i))?;
    }
    w.finish()
}

/// Loads a stack file, optionally keeping only the first `limit` samples.
pub fn load_stack_file(path: impl AsRef<Path>, limit: Option<usize>) -> Result<IlluminationDataset> {
    let path = path.as_ref();
    let file = File::open(path).map_err(io(path))?;
    let actual = file.metadata().map_err(io(path))?.len();
    let mut r = BufReader::with_capacity(1 << 20, file);
    let h = read_header(&mut r, path)?;
    let expected = h.file_len().expect("checked in decode");
    if actual != expected {
        return Err(Error::Format {
            offset: actual.min(expected),
            message: format!("file is {actual} bytes, header implies {expected}"),
        });
    }

    let n = h.n_samples as usize;
    let keep = limit.map_or(n, |l| l.min(n));
    let mut raw = vec![0u8; 2 * n];
    read_exact_at(&mut r, &mut raw, HEADER_LEN, path)?;
    let labels: Vec<u16> = raw
        .chunks_exact(2)
        .take(keep)
        .map(|b| u16::from_le_bytes([b[0], b[1]]))
        .collect();

    let per = h.stack_len().expect("checked in decode") as usize;
    let mut data = Vec::with_capacity(keep * per);
    let mut buf = vec![0u8; per * 4];
    let mut offset = HEADER_LEN + 2 * n as u64;
    for _ in 0..keep {
        read_exact_at(&mut r, &mut buf, offset, path)?;
        data.extend(buf.chunks_exact(4).map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]])));
        offset += buf.len() as u64;
    }

    let mut ds = IlluminationDataset::new(
        h.n_slices as usize,
        (h.height as usize, h.width as usize),
        h.n_classes as usize,
        labels,
        data,
    )
    .map_err(|e| Error::Format {
        offset: HEADER_LEN,
        message: e.to_string(),
    })?;
    ds.meta = DatasetMeta {
        geometry: None,
        optics: None,
        provenance: path.display().to_string(),
    };
    Ok(ds)
}

/// Writes a stack file one sample at a time, so datasets larger than memory
/// can be generated.
pub struct StackFileWriter {
    out: BufWriter<File>,
    path: PathBuf,
    header: StackHeader,
    written: u32,
}

impl StackFileWriter {
    pub fn create(path: impl AsRef<Path>, header: StackHeader, labels: &[u16]) -> Result<Self> {
        let path = path.as_ref().to_path_buf();
        if labels.len() != header.n_samples as usize {
            return Err(Error::dim(format!(
                "{} labels for {} samples",
                labels.len(),
                header.n_samples
            )));
        }
        if header.file_len().is_none() {
            return Err(Error::Validation(format!("dimensions overflow: {header:?}")));
        }
        if let Some(&l) = labels.iter().find(|&&l| l as u32 >= header.n_classes) {
            return Err(Error::Validation(format!("label {l} not below {} classes", header.n_classes)));
        }
        let file = File::create(&path).map_err(io(&path))?;
        let mut out = BufWriter::with_capacity(1 << 20, file);
        out.write_all(&header.encode()).map_err(io(&path))?;
        let raw: Vec<u8> = labels.iter().flat_map(|l| l.to_le_bytes()).collect();
        out.write_all(&raw).map_err(io(&path))?;
        Ok(Self {
            out,
            path,
            header,
            written: 0,
        })
    }

    pub fn push(&mut self, stack: &[f32]) -> Result<()> {
        if self.written == self.header.n_samples {
            return Err(Error::State(format!("all {} samples already written", self.written)));
        }
        let per = self.header.stack_len().unwrap_or(0) as usize;
        if stack.len() != per {
            return Err(Error::dim(format!("stack of {} values, expected {per}", stack.len())));
        }
        let raw: Vec<u8> = stack.iter().flat_map(|v| v.to_le_bytes()).collect();
        self.out.write_all(&raw).map_err(io(&self.path))?;
        self.written += 1;
        Ok(())
    }

    pub fn finish(mut self) -> Result<()> {
        if self.written != self.header.n_samples {
            return Err(Error::State(format!(
                "{} of {} samples written",
                self.written, self.header.n_samples
            )));
        }
        self.out.flush().map_err(io(&self.path))
    }
}
