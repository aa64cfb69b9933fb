use std::collections::HashMap;
use std::io::BufRead;
use std::path::Path;

use serde::Deserialize;

use super::{Label, StarClass};
use crate::util;
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BusinessRecord {
    pub business_id: String,
    pub stars: StarClass,
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct PhotoRecord {
    pub photo_id: String,
    pub business_id: String,
    pub label: Label,
}

/// Line accounting for one parsed file.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct ParseReport {
    /// Non-blank lines seen.
    pub lines: usize,
    /// Records kept.
    pub records: usize,
    /// Lines that were not a JSON object with the required fields.
    pub malformed: usize,
    /// Well-formed lines with a missing or out-of-range star rating, or an
    /// unknown photo label.
    pub dropped: usize,
    /// Keys seen more than once (the last occurrence is kept).
    pub duplicates: usize,
}

#[derive(Deserialize)]
struct RawBusiness {
    business_id: String,
    #[serde(default)]
    stars: Option<f64>,
}

#[derive(Deserialize)]
struct RawPhoto {
    photo_id: String,
    business_id: String,
    #[serde(default)]
    label: Option<String>,
}

/// Calls `f(line_number, bytes)` for every non-blank line, one line in memory
/// at a time.
fn for_each_line<R: BufRead>(
    mut r: R,
    source: &str,
    mut f: impl FnMut(usize, &[u8]),
) -> Result<()> {
    let mut buf = Vec::with_capacity(1024);
    let mut lineno = 0;
    loop {
        buf.clear();
        let n = r
            .read_until(b'\n', &mut buf)
            .map_err(|e| Error::io(source, e))?;
        if n == 0 {
            return Ok(());
        }
        lineno += 1;
        let line = buf.trim_ascii();
        if !line.is_empty() {
            f(lineno, line);
        }
    }
}

pub fn parse_business_reader<R: BufRead>(
    r: R,
    source: &str,
) -> Result<(HashMap<String, BusinessRecord>, ParseReport)> {
    let mut map = HashMap::new();
    let mut rep = ParseReport::default();
    for_each_line(r, source, |lineno, line| {
        rep.lines += 1;
        let raw: RawBusiness = match serde_json::from_slice(line) {
            Ok(v) => v,
            Err(e) => {
                rep.malformed += 1;
                log::warn!("{source}:{lineno}: skipping malformed line: {e}");
                return;
            }
        };
        if raw.business_id.is_empty() {
            rep.malformed += 1;
            log::warn!("{source}:{lineno}: empty business_id");
            return;
        }
        let Some(stars) = raw.stars.and_then(|s| StarClass::from_raw(s).ok()) else {
            rep.dropped += 1;
            log::debug!(
                "{source}:{lineno}: dropping {} with stars {:?}",
                raw.business_id,
                raw.stars
            );
            return;
        };
        let rec = BusinessRecord {
            business_id: raw.business_id,
            stars,
        };
        if let Some(prev) = map.insert(rec.business_id.clone(), rec) {
            rep.duplicates += 1;
            log::warn!(
                "{source}:{lineno}: duplicate business_id {}; keeping the later record",
                prev.business_id
            );
        }
    })?;
    rep.records = map.len();
    Ok((map, rep))
}

pub fn parse_photo_reader<R: BufRead>(
    r: R,
    source: &str,
) -> Result<(Vec<PhotoRecord>, ParseReport)> {
    let mut out: Vec<PhotoRecord> = Vec::new();
    let mut index: HashMap<String, usize> = HashMap::new();
    let mut rep = ParseReport::default();
    for_each_line(r, source, |lineno, line| {
        rep.lines += 1;
        let raw: RawPhoto = match serde_json::from_slice(line) {
            Ok(v) => v,
            Err(e) => {
                rep.malformed += 1;
                log::warn!("{source}:{lineno}: skipping malformed line: {e}");
                return;
            }
        };
        if raw.photo_id.is_empty() {
            rep.malformed += 1;
            log::warn!("{source}:{lineno}: empty photo_id");
            return;
        }
        let Some(label) = raw.label.as_deref().and_then(|l| l.parse::<Label>().ok()) else {
            rep.dropped += 1;
            log::debug!(
                "{source}:{lineno}: dropping {} with label {:?}",
                raw.photo_id,
                raw.label
            );
            return;
        };
        let rec = PhotoRecord {
            photo_id: raw.photo_id,
            business_id: raw.business_id,
            label,
        };
        match index.get(&rec.photo_id) {
            Some(&i) => {
                rep.duplicates += 1;
                log::warn!(
                    "{source}:{lineno}: duplicate photo_id {}; keeping the later record",
                    rec.photo_id
                );
                out[i] = rec;
            }
            None => {
                index.insert(rec.photo_id.clone(), out.len());
                out.push(rec);
            }
        }
    })?;
    rep.records = out.len();
    Ok((out, rep))
}

/// Streams a newline-delimited `business.json`.
pub fn parse_business_file(path: &Path) -> Result<(HashMap<String, BusinessRecord>, ParseReport)> {
    parse_business_reader(util::open(path)?, &path.display().to_string())
}

/// Streams a newline-delimited `photos.json`.
pub fn parse_photo_file(path: &Path) -> Result<(Vec<PhotoRecord>, ParseReport)> {
    parse_photo_reader(util::open(path)?, &path.display().to_string())
}
