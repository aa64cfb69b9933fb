use std::fs::File;
use std::io::{Read, Seek, SeekFrom};
use std::path::{Path, PathBuf};

use super::config::Head;
use crate::engine::{Scalar, Tensor};
use crate::imageprep::{
    StoreReader, StoreRecord, CHANNELS, HEADER_BYTES, HEIGHT, PIXELS, RECORD_BYTES, WIDTH,
};
use crate::ingest::StarClass;
use crate::{Error, Result};

/// Random-access view of labeled images.
pub trait Dataset {
    fn len(&self) -> usize;

    fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn stars(&self, i: usize) -> StarClass;

    /// Copies the pixels of record `i` into `out`.
    fn pixels_into(&mut self, i: usize, out: &mut [i8]) -> Result<()>;
}

/// Records held in memory.
#[derive(Clone, Debug, Default)]
pub struct MemoryDataset {
    pub records: Vec<StoreRecord>,
}

impl MemoryDataset {
    pub fn new(records: Vec<StoreRecord>) -> Self {
        MemoryDataset { records }
    }
}

impl Dataset for MemoryDataset {
    fn len(&self) -> usize {
        self.records.len()
    }

    fn stars(&self, i: usize) -> StarClass {
        self.records[i].stars
    }

    fn pixels_into(&mut self, i: usize, out: &mut [i8]) -> Result<()> {
        out.copy_from_slice(&self.records[i].pixels);
        Ok(())
    }
}

/// A YIMG file read record-by-record with seeks; only star bytes are cached.
pub struct StoreDataset {
    file: File,
    path: PathBuf,
    stars: Vec<StarClass>,
    buf: Vec<u8>,
}

impl StoreDataset {
    pub fn open(path: &Path) -> Result<Self> {
        // One streaming pass validates the file and collects the stars.
        let stars = StoreReader::open(path)?
            .map(|r| r.map(|r| r.stars))
            .collect::<Result<Vec<_>>>()?;
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        Ok(StoreDataset {
            file,
            path: path.to_path_buf(),
            stars,
            buf: vec![0; PIXELS],
        })
    }
}

impl Dataset for StoreDataset {
    fn len(&self) -> usize {
        self.stars.len()
    }

    fn stars(&self, i: usize) -> StarClass {
        self.stars[i]
    }

    fn pixels_into(&mut self, i: usize, out: &mut [i8]) -> Result<()> {
        let off = HEADER_BYTES + i as u64 * RECORD_BYTES;
        let path = &self.path;
        self.file
            .seek(SeekFrom::Start(off))
            .and_then(|_| self.file.read_exact(&mut self.buf))
            .map_err(|e| Error::io(path, e))?;
        for (o, &b) in out.iter_mut().zip(&self.buf) {
            *o = b as i8;
        }
        Ok(())
    }
}

/// Training target of one image under a given head.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Target {
    Class(usize),
    /// Scaled star value, 2..=10.
    Value(f64),
}

pub fn target(head: Head, stars: StarClass) -> Target {
    match head {
        Head::NineClass => Target::Class(stars.index()),
        Head::ThreeBucket => Target::Class(stars.bucket().index()),
        Head::Regression => Target::Value(stars.scaled() as f64),
    }
}

/// Nearest legal scaled star for a regression output (ties round down).
pub fn round_to_scaled(v: f64) -> u8 {
    if !v.is_finite() {
        return 2;
    }
    let r = v.clamp(2.0, 10.0);
    let lo = r.floor();
    (if r - lo > 0.5 { lo + 1.0 } else { lo }) as u8
}

/// Batch input tensor `[n, 3, 144, 200]` with pixels scaled to `[−1, 1)`.
pub fn batch_tensor<T: Scalar>(data: &mut dyn Dataset, indices: &[usize]) -> Result<Tensor<T>> {
    let mut out = vec![T::zero(); indices.len() * PIXELS];
    let mut px = vec![0i8; PIXELS];
    let scale = T::lit(1.0 / 128.0);
    for (slot, &i) in indices.iter().enumerate() {
        data.pixels_into(i, &mut px)?;
        for (o, &p) in out[slot * PIXELS..(slot + 1) * PIXELS].iter_mut().zip(&px) {
            *o = T::lit(p as f64) * scale;
        }
    }
    Tensor::new(&[indices.len(), CHANNELS, HEIGHT, WIDTH], out)
}

/// Fraction of each target class in `data` (`[1]` mean for regression).
pub fn class_prior(data: &dyn Dataset, head: Head) -> Vec<f64> {
    let n = data.len().max(1) as f64;
    match head {
        Head::Regression => {
            vec![
                (0..data.len())
                    .map(|i| data.stars(i).scaled() as f64)
                    .sum::<f64>()
                    / n,
            ]
        }
        _ => {
            let mut counts = vec![0.0; head.outputs()];
            for i in 0..data.len() {
                if let Target::Class(c) = target(head, data.stars(i)) {
                    counts[c] += 1.0;
                }
            }
            counts.iter().map(|c| c / n).collect()
        }
    }
}
