use std::fmt;
use std::str::FromStr;

use crate::{Error, Result};

/// The nine legal half-star ratings.
pub const LEGAL_STARS: [f64; 9] = [1.0, 1.5, 2.0, 2.5, 3.0, 3.5, 4.0, 4.5, 5.0];

/// A legal half-star rating, stored doubled so every value is whole.
///
/// `scaled = 2·raw ∈ {2, …, 10}` and `index = scaled − 2 ∈ {0, …, 8}`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct StarClass {
    scaled: u8,
}

impl StarClass {
    pub fn from_raw(raw: f64) -> Result<Self> {
        let s = raw * 2.0;
        if s.is_finite() && s.fract() == 0.0 && (2.0..=10.0).contains(&s) {
            Ok(Self { scaled: s as u8 })
        } else {
            Err(Error::IllegalStars(raw))
        }
    }

    pub fn from_scaled(scaled: u8) -> Result<Self> {
        if (2..=10).contains(&scaled) {
            Ok(Self { scaled })
        } else {
            Err(Error::IllegalStars(scaled as f64 / 2.0))
        }
    }

    pub fn from_index(index: usize) -> Result<Self> {
        if index < 9 {
            Ok(Self {
                scaled: index as u8 + 2,
            })
        } else {
            Err(Error::InvalidArgument(format!(
                "star class index {index} out of range 0..9"
            )))
        }
    }

    pub fn all() -> impl Iterator<Item = StarClass> {
        (2u8..=10).map(|scaled| StarClass { scaled })
    }

    pub fn raw(self) -> f64 {
        self.scaled as f64 / 2.0
    }

    pub fn scaled(self) -> u8 {
        self.scaled
    }

    pub fn index(self) -> usize {
        self.scaled as usize - 2
    }

    pub fn bucket(self) -> Bucket {
        match self.scaled {
            ..=7 => Bucket::BelowAverage,
            8 => Bucket::Average,
            _ => Bucket::AboveAverage,
        }
    }
}

impl fmt::Display for StarClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:.1}", self.raw())
    }
}

impl FromStr for StarClass {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let raw: f64 = s
            .trim()
            .parse()
            .map_err(|_| Error::Format(format!("not a star rating: {s:?}")))?;
        Self::from_raw(raw)
    }
}

/// Doubling map from a raw rating to its whole-number class.
pub fn scale_stars(raw: f64) -> Result<StarClass> {
    StarClass::from_raw(raw)
}

/// Three-way simplification of a rating.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Bucket {
    /// 1.0 – 3.5 stars.
    BelowAverage,
    /// Exactly 4.0 stars.
    Average,
    /// 4.5 – 5.0 stars.
    AboveAverage,
}

impl Bucket {
    pub const ALL: [Bucket; 3] = [Bucket::BelowAverage, Bucket::Average, Bucket::AboveAverage];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Bucket::BelowAverage => "below_average",
            Bucket::Average => "average",
            Bucket::AboveAverage => "above_average",
        }
    }
}

pub fn bucketize(raw: f64) -> Result<Bucket> {
    Ok(StarClass::from_raw(raw)?.bucket())
}

/// Yelp photo category.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Label {
    Food,
    Drink,
    Menu,
    Inside,
    Outside,
}

impl Label {
    pub const ALL: [Label; 5] = [
        Label::Food,
        Label::Drink,
        Label::Menu,
        Label::Inside,
        Label::Outside,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Label::Food => "food",
            Label::Drink => "drink",
            Label::Menu => "menu",
            Label::Inside => "inside",
            Label::Outside => "outside",
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Label {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        Label::ALL
            .into_iter()
            .find(|l| l.as_str().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::Format(format!("unknown photo label {s:?}")))
    }
}
