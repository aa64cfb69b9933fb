//! Synthetic Yelp-shaped fixtures and whole-file reference parsers.

use std::collections::{BTreeMap, HashMap};

use rand::Rng;
use serde_json::{json, Value};
use yelpimg::ingest::{BusinessRecord, JoinedPhoto, Label, PhotoRecord};

use super::rng;

const LEGAL: [f64; 9] = [1.0, 1.5, 2.0, 2.5, 3.0, 3.5, 4.0, 4.5, 5.0];
const LABELS: [&str; 5] = ["food", "drink", "menu", "inside", "outside"];

/// `n` business lines: mostly legal, some illegal/missing ratings, some
/// malformed lines, duplicate ids and blank lines. Ratings skew toward 4.0.
pub fn business_text(n: usize, id_space: usize, seed: u64) -> String {
    let mut r = rng(seed);
    let mut out = String::new();
    for i in 0..n {
        let id = format!("b{:05}", r.gen_range(0..id_space));
        let roll = r.gen_range(0..100);
        let line = match roll {
            0..=2 => "{\"business_id\": \"broken\", \"stars\": ".to_string(),
            3..=5 => {
                let bad = [0.5, 5.5, 3.3, 0.0][i % 4];
                json!({"business_id": id, "stars": bad}).to_string()
            }
            6 => json!({"business_id": id, "name": "no rating"}).to_string(),
            7 => json!({"business_id": id, "stars": null}).to_string(),
            8 => String::new(),
            _ => {
                let s = if r.gen_bool(0.4) {
                    4.0
                } else {
                    LEGAL[r.gen_range(0..9)]
                };
                json!({"business_id": id, "name": format!("shop {i}"), "stars": s, "city": "X"})
                    .to_string()
            }
        };
        out.push_str(&line);
        out.push('\n');
    }
    out
}

/// `n` photo lines over `business_space` business ids, some unknown labels,
/// some businesses that do not exist.
pub fn photo_text(n: usize, business_space: usize, seed: u64) -> String {
    let mut r = rng(seed);
    let mut out = String::new();
    for i in 0..n {
        let b = format!(
            "b{:05}",
            r.gen_range(0..business_space + business_space / 10 + 1)
        );
        let roll = r.gen_range(0..100);
        let line = match roll {
            0..=1 => "not json at all".to_string(),
            2..=4 => json!({"photo_id": format!("p{i:06}"), "business_id": b, "label": "selfie"})
                .to_string(),
            5 => json!({"photo_id": format!("p{i:06}"), "business_id": b}).to_string(),
            _ => {
                let label = LABELS[r.gen_range(0..5)];
                let label = if roll == 6 {
                    label.to_uppercase()
                } else {
                    label.to_string()
                };
                let id = if roll == 7 && i > 0 {
                    format!("p{:06}", i - 1)
                } else {
                    format!("p{i:06}")
                };
                json!({"photo_id": id, "business_id": b, "caption": "", "label": label}).to_string()
            }
        };
        out.push_str(&line);
        out.push('\n');
    }
    out
}

/// Whole-file, untyped re-parse: business_id → scaled rating, last wins.
pub fn reference_businesses(text: &str) -> HashMap<String, u8> {
    let mut map = HashMap::new();
    for line in text.split('\n') {
        let Ok(Value::Object(o)) = serde_json::from_str::<Value>(line) else {
            continue;
        };
        let Some(id) = o
            .get("business_id")
            .and_then(Value::as_str)
            .filter(|s| !s.is_empty())
        else {
            continue;
        };
        let Some(stars) = o.get("stars").and_then(Value::as_f64) else {
            continue;
        };
        if LEGAL.contains(&stars) {
            map.insert(id.to_string(), (stars * 2.0) as u8);
        }
    }
    map
}

/// Whole-file re-parse of photos: (photo_id, business_id, label) with the
/// later duplicate replacing the earlier one in place.
pub fn reference_photos(text: &str) -> Vec<(String, String, String)> {
    let mut out: Vec<(String, String, String)> = Vec::new();
    for line in text.split('\n') {
        let Ok(Value::Object(o)) = serde_json::from_str::<Value>(line) else {
            continue;
        };
        let (Some(p), Some(b)) = (
            o.get("photo_id").and_then(Value::as_str),
            o.get("business_id").and_then(Value::as_str),
        ) else {
            continue;
        };
        let Some(label) = o
            .get("label")
            .and_then(Value::as_str)
            .map(str::to_lowercase)
        else {
            continue;
        };
        if p.is_empty() || !LABELS.contains(&label.as_str()) {
            continue;
        }
        let rec = (p.to_string(), b.to_string(), label);
        match out.iter().position(|x| x.0 == rec.0) {
            Some(i) => out[i] = rec,
            None => out.push(rec),
        }
    }
    out
}

pub fn as_tuples(photos: &[PhotoRecord]) -> Vec<(String, String, String)> {
    photos
        .iter()
        .map(|p| {
            (
                p.photo_id.clone(),
                p.business_id.clone(),
                p.label.as_str().to_string(),
            )
        })
        .collect()
}

/// O(n·m) join: every photo against every business record.
pub fn nested_join(photos: &[PhotoRecord], businesses: &[BusinessRecord]) -> Vec<(String, u8)> {
    let mut out = Vec::new();
    for p in photos {
        let mut hit = None;
        for b in businesses {
            if b.business_id == p.business_id {
                hit = Some(b.stars.scaled());
            }
        }
        if let Some(s) = hit {
            out.push((p.photo_id.clone(), s));
        }
    }
    out
}

pub fn joined_tuples(joined: &[JoinedPhoto]) -> Vec<(String, u8)> {
    joined
        .iter()
        .map(|j| (j.photo.photo_id.clone(), j.stars.scaled()))
        .collect()
}

/// Single counting scan: per label, per scaled rating.
pub fn count_scan(joined: &[JoinedPhoto]) -> BTreeMap<(Label, u8), u64> {
    let mut m = BTreeMap::new();
    for j in joined {
        *m.entry((j.photo.label, j.stars.scaled())).or_insert(0) += 1;
    }
    m
}

/// Reference Food split sizes for 118,597 photos.
pub const FOOD_N: usize = 118_597;
pub const FOOD_TABLE: (usize, usize, usize) = (106_737, 5_929, 5_931);
