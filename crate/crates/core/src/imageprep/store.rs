use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};

use super::{CHANNELS, HEIGHT, PIXELS, WIDTH};
use crate::ingest::{Label, StarClass};
use crate::util;
use crate::{Error, Result};

pub const STORE_MAGIC: &[u8; 4] = b"YIMG";
pub const STORE_VERSION: u32 = 1;
/// Magic, version, record count and three u32 dimensions.
pub const HEADER_BYTES: u64 = 4 + 4 + 8 + 12;
/// Pixels plus one scaled-star byte.
pub const RECORD_BYTES: u64 = PIXELS as u64 + 1;

/// One stored image: `(3, 144, 200)` signed pixels and a star class.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct StoreRecord {
    pub pixels: Vec<i8>,
    pub stars: StarClass,
}

/// A normalized image with its photo category.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LabeledImage {
    pub pixels: Vec<i8>,
    pub stars: StarClass,
    pub label: Label,
}

impl LabeledImage {
    pub fn record(&self) -> StoreRecord {
        StoreRecord {
            pixels: self.pixels.clone(),
            stars: self.stars,
        }
    }
}

fn header(count: u64) -> [u8; HEADER_BYTES as usize] {
    let mut h = [0u8; HEADER_BYTES as usize];
    h[0..4].copy_from_slice(STORE_MAGIC);
    h[4..8].copy_from_slice(&STORE_VERSION.to_le_bytes());
    h[8..16].copy_from_slice(&count.to_le_bytes());
    h[16..20].copy_from_slice(&(CHANNELS as u32).to_le_bytes());
    h[20..24].copy_from_slice(&(HEIGHT as u32).to_le_bytes());
    h[24..28].copy_from_slice(&(WIDTH as u32).to_le_bytes());
    h
}

fn check_pixels(n: usize) -> Result<()> {
    if n != PIXELS {
        return Err(Error::Shape(format!(
            "image has {n} values, expected {CHANNELS}×{HEIGHT}×{WIDTH} = {PIXELS}"
        )));
    }
    Ok(())
}

/// Incremental YIMG writer; the record count is patched on [`StoreWriter::finish`].
pub struct StoreWriter {
    out: BufWriter<File>,
    path: PathBuf,
    count: u64,
}

impl StoreWriter {
    pub fn create(path: &Path) -> Result<Self> {
        let mut out = util::create(path)?;
        out.write_all(&header(0)).map_err(|e| Error::io(path, e))?;
        Ok(StoreWriter {
            out,
            path: path.to_path_buf(),
            count: 0,
        })
    }

    pub fn push(&mut self, pixels: &[i8], stars: StarClass) -> Result<()> {
        check_pixels(pixels.len())?;
        // i8 -> u8 is a bit-preserving reinterpretation.
        let bytes: Vec<u8> = pixels.iter().map(|&v| v as u8).collect();
        self.out
            .write_all(&bytes)
            .and_then(|_| self.out.write_all(&[stars.scaled()]))
            .map_err(|e| Error::io(&self.path, e))?;
        self.count += 1;
        Ok(())
    }

    pub fn count(&self) -> u64 {
        self.count
    }

    pub fn finish(mut self) -> Result<u64> {
        let path = self.path.clone();
        let io = |e| Error::io(&path, e);
        self.out.flush().map_err(io)?;
        let mut f = self.out.into_inner().map_err(|e| io(e.into_error()))?;
        f.seek(SeekFrom::Start(8)).map_err(io)?;
        f.write_all(&self.count.to_le_bytes()).map_err(io)?;
        f.sync_all().map_err(io)?;
        Ok(self.count)
    }
}

/// Writes all `images` to `path`. Every image is validated before the file
/// is created; mixed labels are rejected.
pub fn write_store(images: &[LabeledImage], path: &Path) -> Result<u64> {
    if let Some(first) = images.first() {
        if let Some(other) = images.iter().find(|i| i.label != first.label) {
            return Err(Error::InvalidArgument(format!(
                "store mixes labels {} and {}",
                first.label, other.label
            )));
        }
    }
    for img in images {
        check_pixels(img.pixels.len())?;
    }
    let mut w = StoreWriter::create(path)?;
    for img in images {
        w.push(&img.pixels, img.stars)?;
    }
    w.finish()
}

/// Writes bare records (no label check).
pub fn write_records(records: &[StoreRecord], path: &Path) -> Result<u64> {
    for r in records {
        check_pixels(r.pixels.len())?;
    }
    let mut w = StoreWriter::create(path)?;
    for r in records {
        w.push(&r.pixels, r.stars)?;
    }
    w.finish()
}

/// Streaming YIMG reader; yields one record at a time.
pub struct StoreReader<R> {
    inner: R,
    source: String,
    count: u64,
    read: u64,
}

impl StoreReader<BufReader<File>> {
    /// Opens `path` and checks that its size matches the header's record count.
    pub fn open(path: &Path) -> Result<Self> {
        let actual = std::fs::metadata(path)
            .map_err(|e| Error::io(path, e))?
            .len();
        let r = StoreReader::new(util::open(path)?, &path.display().to_string())?;
        let expected = HEADER_BYTES + r.count * RECORD_BYTES;
        if actual != expected {
            return Err(Error::Format(format!(
                "{}: {} records need {expected} bytes but the file has {actual}",
                path.display(),
                r.count
            )));
        }
        Ok(r)
    }
}

impl<R: Read> StoreReader<R> {
    pub fn new(mut inner: R, source: &str) -> Result<Self> {
        let mut h = [0u8; HEADER_BYTES as usize];
        read_exact(&mut inner, &mut h, source, "header")?;
        if &h[0..4] != STORE_MAGIC {
            return Err(Error::Format(format!(
                "{source}: bad magic {:?}, not a YIMG store",
                &h[0..4]
            )));
        }
        let u32_at = |i: usize| u32::from_le_bytes(h[i..i + 4].try_into().unwrap());
        let version = u32_at(4);
        if version != STORE_VERSION {
            return Err(Error::Format(format!(
                "{source}: unsupported YIMG version {version}"
            )));
        }
        let dims = (
            u32_at(16) as usize,
            u32_at(20) as usize,
            u32_at(24) as usize,
        );
        if dims != (CHANNELS, HEIGHT, WIDTH) {
            return Err(Error::Format(format!(
                "{source}: unexpected dimensions {dims:?}"
            )));
        }
        Ok(StoreReader {
            inner,
            source: source.to_string(),
            count: u64::from_le_bytes(h[8..16].try_into().unwrap()),
            read: 0,
        })
    }

    pub fn len(&self) -> u64 {
        self.count
    }

    pub fn is_empty(&self) -> bool {
        self.count == 0
    }

    fn next_record(&mut self) -> Result<StoreRecord> {
        let mut buf = vec![0u8; RECORD_BYTES as usize];
        let what = format!("record {}", self.read);
        read_exact(&mut self.inner, &mut buf, &self.source, &what)?;
        let stars = StarClass::from_scaled(buf[PIXELS]).map_err(|_| {
            Error::Format(format!(
                "{}: {what} has star byte {}",
                self.source, buf[PIXELS]
            ))
        })?;
        buf.truncate(PIXELS);
        let pixels = buf.into_iter().map(|v| v as i8).collect();
        self.read += 1;
        Ok(StoreRecord { pixels, stars })
    }
}

fn read_exact<R: Read>(r: &mut R, buf: &mut [u8], source: &str, what: &str) -> Result<()> {
    r.read_exact(buf).map_err(|e| {
        if e.kind() == std::io::ErrorKind::UnexpectedEof {
            Error::Format(format!(
                "{source}: truncated while reading {what} ({} bytes expected)",
                buf.len()
            ))
        } else {
            Error::io(source, e)
        }
    })
}

impl<R: Read> Iterator for StoreReader<R> {
    type Item = Result<StoreRecord>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.read >= self.count {
            return None;
        }
        let r = self.next_record();
        if r.is_err() {
            self.read = self.count;
        }
        Some(r)
    }

    fn size_hint(&self) -> (usize, Option<usize>) {
        let left = (self.count - self.read) as usize;
        (left, Some(left))
    }
}

/// Reads every record of a store into memory.
pub fn read_store(path: &Path) -> Result<Vec<StoreRecord>> {
    StoreReader::open(path)?.collect()
}
