//! Yelp JSON ingestion: parsing, the photo/business join, per-label
//! partitioning, train/val/test splitting and star statistics.

mod parse;
mod split;
mod stars;

use std::collections::{BTreeMap, HashMap};
use std::io::Write;
use std::path::{Path, PathBuf};

pub use parse::{
    parse_business_file, parse_business_reader, parse_photo_file, parse_photo_reader,
    BusinessRecord, ParseReport, PhotoRecord,
};
pub use split::{split_dataset, split_sizes, Split, SplitItem, SplitManifest};
pub use stars::{bucketize, scale_stars, Bucket, Label, StarClass, LEGAL_STARS};

use crate::util;
use crate::{Error, Result};

/// A photo paired with its business's rating.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct JoinedPhoto {
    pub photo: PhotoRecord,
    pub stars: StarClass,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct JoinReport {
    pub joined: usize,
    /// Photos whose business is unknown (or was dropped for its rating).
    pub unmatched: usize,
}

/// Broadcasts each business's rating to all of its photos, keeping input order.
pub fn join_photo_stars(
    photos: &[PhotoRecord],
    businesses: &HashMap<String, BusinessRecord>,
) -> (Vec<JoinedPhoto>, JoinReport) {
    let mut out = Vec::with_capacity(photos.len());
    let mut rep = JoinReport::default();
    for p in photos {
        match businesses.get(&p.business_id) {
            Some(b) => out.push(JoinedPhoto {
                photo: p.clone(),
                stars: b.stars,
            }),
            None => rep.unmatched += 1,
        }
    }
    rep.joined = out.len();
    (out, rep)
}

/// Groups joined photos by label. All five labels are present in the result.
pub fn partition_by_label(joined: &[JoinedPhoto]) -> BTreeMap<Label, Vec<JoinedPhoto>> {
    let mut map: BTreeMap<Label, Vec<JoinedPhoto>> =
        Label::ALL.into_iter().map(|l| (l, vec![])).collect();
    for j in joined {
        map.get_mut(&j.photo.label)
            .expect("all labels present")
            .push(j.clone());
    }
    map
}

/// Per-label counts over the nine star classes, indexed by `StarClass::index`.
pub fn star_histogram(joined: &[JoinedPhoto]) -> BTreeMap<Label, [u64; 9]> {
    let mut map: BTreeMap<Label, [u64; 9]> = Label::ALL.into_iter().map(|l| (l, [0; 9])).collect();
    for j in joined {
        map.get_mut(&j.photo.label).expect("all labels present")[j.stars.index()] += 1;
    }
    map
}

/// Lower median of a histogram, or `None` when it is empty.
pub fn histogram_median(hist: &[u64; 9]) -> Option<StarClass> {
    let total: u64 = hist.iter().sum();
    if total == 0 {
        return None;
    }
    let target = total.div_ceil(2);
    let mut acc = 0;
    for (i, &c) in hist.iter().enumerate() {
        acc += c;
        if acc >= target {
            return StarClass::from_index(i).ok();
        }
    }
    unreachable!()
}

pub fn write_histogram_csv(path: &Path, hist: &BTreeMap<Label, [u64; 9]>) -> Result<()> {
    let mut w = util::create(path)?;
    let mut text = String::from("label");
    for s in StarClass::all() {
        text.push_str(&format!(",{s}"));
    }
    text.push('\n');
    for (label, counts) in hist {
        text.push_str(label.as_str());
        for c in counts {
            text.push_str(&format!(",{c}"));
        }
        text.push('\n');
    }
    w.write_all(text.as_bytes())
        .and_then(|_| w.flush())
        .map_err(|e| Error::io(path, e))
}

pub fn read_histogram_csv(path: &Path) -> Result<BTreeMap<Label, [u64; 9]>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lines = text.lines();
    let header = lines.next().unwrap_or_default();
    if header.split(',').count() != 10 || !header.starts_with("label,") {
        return Err(Error::Format(format!(
            "{}: bad histogram header",
            path.display()
        )));
    }
    let mut out = BTreeMap::new();
    for line in lines.filter(|l| !l.is_empty()) {
        let bad = || Error::Format(format!("{}: bad histogram row {line:?}", path.display()));
        let mut parts = line.split(',');
        let label: Label = parts.next().ok_or_else(bad)?.parse().map_err(|_| bad())?;
        let mut counts = [0u64; 9];
        for c in counts.iter_mut() {
            *c = parts.next().ok_or_else(bad)?.parse().map_err(|_| bad())?;
        }
        out.insert(label, counts);
    }
    Ok(out)
}

/// Everything `run_ingest` learned about the inputs.
#[derive(Clone, Debug)]
pub struct IngestSummary {
    pub business: ParseReport,
    pub photos: ParseReport,
    pub join: JoinReport,
    pub histogram: BTreeMap<Label, [u64; 9]>,
    /// `(train, val, test)` per label; labels with fewer than three photos get no manifest.
    pub splits: BTreeMap<Label, (usize, usize, usize)>,
    pub manifests: Vec<PathBuf>,
}

impl IngestSummary {
    pub fn label_counts(&self) -> BTreeMap<Label, u64> {
        self.histogram
            .iter()
            .map(|(l, h)| (*l, h.iter().sum()))
            .collect()
    }
}

pub fn manifest_path(out_dir: &Path, label: Label) -> PathBuf {
    out_dir.join(format!("{label}.manifest"))
}

/// Full ingest: parse both files, join, partition, split each label with
/// `seed`, and write `<label>.manifest` plus `histogram.csv` into `out_dir`.
pub fn run_ingest(
    business: &Path,
    photos: &Path,
    out_dir: &Path,
    seed: u64,
) -> Result<IngestSummary> {
    let (biz, brep) = parse_business_file(business)?;
    log::info!(
        "{}: {} businesses kept, {} dropped for rating, {} malformed, {} duplicate",
        business.display(),
        brep.records,
        brep.dropped,
        brep.malformed,
        brep.duplicates
    );
    let (pics, prep) = parse_photo_file(photos)?;
    log::info!(
        "{}: {} photos kept, {} dropped for label, {} malformed, {} duplicate",
        photos.display(),
        prep.records,
        prep.dropped,
        prep.malformed,
        prep.duplicates
    );
    let (joined, jrep) = join_photo_stars(&pics, &biz);
    log::info!(
        "join: {} photos matched, {} unmatched",
        jrep.joined,
        jrep.unmatched
    );
    drop(pics);
    drop(biz);

    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let histogram = star_histogram(&joined);
    write_histogram_csv(&out_dir.join("histogram.csv"), &histogram)?;

    let mut splits = BTreeMap::new();
    let mut manifests = Vec::new();
    for (label, group) in partition_by_label(&joined) {
        let items: Vec<SplitItem> = group
            .into_iter()
            .map(|j| SplitItem {
                photo_id: j.photo.photo_id,
                stars: j.stars,
            })
            .collect();
        if items.len() < 3 {
            log::warn!(
                "label {label}: only {} photo(s), no manifest written",
                items.len()
            );
            continue;
        }
        let m = split_dataset(label, &items, seed)?;
        let sizes = (m.train.len(), m.val.len(), m.test.len());
        log::info!(
            "label {label}: train {} / val {} / test {}",
            sizes.0,
            sizes.1,
            sizes.2
        );
        let path = manifest_path(out_dir, label);
        m.write(&path)?;
        splits.insert(label, sizes);
        manifests.push(path);
    }
    Ok(IngestSummary {
        business: brep,
        photos: prep,
        join: jrep,
        histogram,
        splits,
        manifests,
    })
}
