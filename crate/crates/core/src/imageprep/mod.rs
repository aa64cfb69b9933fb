//! Photo decoding, normalization to `(3, 144, 200)` signed tensors, the YIMG
//! container and per-(label, star) GAN partitions.

mod resize;
mod store;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use image::ImageFormat;

pub use resize::{
    fit_geometry, normalize_image, normalize_to, resize_bilinear, resize_signed, FitGeometry,
    CHANNELS, HEIGHT, PIXELS, WIDTH,
};
pub use store::{
    read_store, write_records, write_store, LabeledImage, StoreReader, StoreRecord, StoreWriter,
    HEADER_BYTES, RECORD_BYTES, STORE_MAGIC, STORE_VERSION,
};

use crate::ingest::{Label, Split, SplitManifest, StarClass};
use crate::{Error, Result};

/// A decoded 8-bit RGB image, interleaved row-major.
#[derive(Clone, Debug)]
pub struct RgbImage {
    pub height: usize,
    pub width: usize,
    pub data: Vec<u8>,
}

/// Decodes a JPEG or PNG file. Any other container is rejected.
pub fn decode_image(path: &Path) -> Result<RgbImage> {
    let reader = image::io::Reader::open(path)
        .map_err(|e| Error::io(path, e))?
        .with_guessed_format()
        .map_err(|e| Error::io(path, e))?;
    match reader.format() {
        Some(ImageFormat::Jpeg | ImageFormat::Png) => {}
        other => {
            return Err(Error::Image(format!(
                "{}: unsupported image format {other:?}; only JPEG and PNG are accepted",
                path.display()
            )))
        }
    }
    let img = reader
        .decode()
        .map_err(|e| Error::Image(format!("{}: {e}", path.display())))?
        .to_rgb8();
    Ok(RgbImage {
        height: img.height() as usize,
        width: img.width() as usize,
        data: img.into_raw(),
    })
}

/// Looks for `<id>.jpg`, `<id>.jpeg` or `<id>.png` under `dir`.
pub fn find_photo(dir: &Path, photo_id: &str) -> Option<PathBuf> {
    ["jpg", "jpeg", "png"]
        .iter()
        .map(|ext| dir.join(format!("{photo_id}.{ext}")))
        .find(|p| p.is_file())
}

/// Path of one GAN partition store.
pub fn gan_store_path(out_dir: &Path, label: Label, stars: StarClass) -> PathBuf {
    out_dir.join(label.as_str()).join(format!("{stars}.yimg"))
}

/// Splits `records` into one store per star class under `out_dir/<label>/`.
/// Star classes without records get no file. Returns per-star counts.
pub fn gan_partition<I>(
    label: Label,
    records: I,
    out_dir: &Path,
) -> Result<BTreeMap<StarClass, u64>>
where
    I: IntoIterator<Item = Result<StoreRecord>>,
{
    let mut writers: BTreeMap<StarClass, StoreWriter> = BTreeMap::new();
    for rec in records {
        let rec = rec?;
        let w = match writers.entry(rec.stars) {
            std::collections::btree_map::Entry::Occupied(e) => e.into_mut(),
            std::collections::btree_map::Entry::Vacant(e) => e.insert(StoreWriter::create(
                &gan_store_path(out_dir, label, rec.stars),
            )?),
        };
        w.push(&rec.pixels, rec.stars)?;
    }
    writers
        .into_iter()
        .map(|(s, w)| Ok((s, w.finish()?)))
        .collect()
}

/// Path of a split store written by [`run_preprocess`].
pub fn split_store_path(out_dir: &Path, label: Label, split: Split) -> PathBuf {
    out_dir
        .join(label.as_str())
        .join(format!("{}.yimg", split.as_str()))
}

#[derive(Clone, Debug, Default)]
pub struct PreprocessSummary {
    pub written: BTreeMap<&'static str, u64>,
    /// Manifest entries with no image file.
    pub missing: usize,
    /// Image files that failed to decode.
    pub undecodable: usize,
    pub gan: BTreeMap<StarClass, u64>,
}

/// Decodes and normalizes every photo of a manifest into
/// `out_dir/<label>/{train,val,test}.yimg`, and optionally the per-star GAN
/// partition under `out_dir/gan/`. Missing or undecodable photos are skipped
/// with a warning.
pub fn run_preprocess(
    manifest: &Path,
    images: &Path,
    out_dir: &Path,
    gan: bool,
) -> Result<PreprocessSummary> {
    let m = SplitManifest::read(manifest)?;
    let mut summary = PreprocessSummary::default();
    for split in Split::ALL {
        let path = split_store_path(out_dir, m.label, split);
        let mut w = StoreWriter::create(&path)?;
        for item in m.split(split) {
            let Some(src) = find_photo(images, &item.photo_id) else {
                log::warn!("no image file for photo {}", item.photo_id);
                summary.missing += 1;
                continue;
            };
            let img = match decode_image(&src) {
                Ok(img) => img,
                Err(e) => {
                    log::warn!("skipping {}: {e}", src.display());
                    summary.undecodable += 1;
                    continue;
                }
            };
            let px = normalize_image(&img.data, img.height, img.width)?;
            w.push(&px, item.stars)?;
        }
        let n = w.finish()?;
        log::info!("{}: {n} records", path.display());
        summary.written.insert(split.as_str(), n);
    }
    if gan {
        let mut all = Vec::new();
        for split in Split::ALL {
            all.push(StoreReader::open(&split_store_path(
                out_dir, m.label, split,
            ))?);
        }
        summary.gan = gan_partition(m.label, all.into_iter().flatten(), &out_dir.join("gan"))?;
        for (s, n) in &summary.gan {
            log::info!("gan partition {}/{s}: {n} records", m.label);
        }
    }
    Ok(summary)
}
