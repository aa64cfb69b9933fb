use std::fmt::Write as _;
use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;

use super::{Label, StarClass};
use crate::util;
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];

    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }

    fn parse(s: &str) -> Option<Split> {
        Split::ALL.into_iter().find(|x| x.as_str() == s)
    }
}

/// One photo of a split, identified by id and carrying its star class.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SplitItem {
    pub photo_id: String,
    pub stars: StarClass,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SplitManifest {
    pub label: Label,
    pub seed: u64,
    pub train: Vec<SplitItem>,
    pub val: Vec<SplitItem>,
    pub test: Vec<SplitItem>,
}

/// Split sizes `(train, val, test)` for `n` items.
///
/// Each split starts at the floor of its 90/5/5 quota. Up to two items are
/// left over: with two, train and test take one each; with one, it goes to
/// whichever of train and test has the larger fractional quota (test on a
/// tie). Every size ends up within one element of its exact quota. For tiny
/// `n`, val and test are raised to one item each.
pub fn split_sizes(n: usize) -> Result<(usize, usize, usize)> {
    if n < 3 {
        return Err(Error::InvalidArgument(format!(
            "cannot split {n} item(s) into non-empty train/val/test sets"
        )));
    }
    let five = n / 20;
    let val = five;
    let mut test = five;
    // Leftover after flooring all three quotas; train takes whatever test does not.
    match n - 9 * n / 10 - 2 * five {
        0 => {}
        // Fractional parts in twentieths: 0.9n -> (9n mod 10)*2, 0.05n -> n mod 20.
        1 if (9 * n % 10) * 2 > n % 20 => {}
        1 | 2 => test += 1,
        r => unreachable!("split remainder {r}"),
    }
    let val = val.max(1);
    let test = test.max(1);
    let train = n - val - test;
    Ok((train, val, test))
}

/// Deterministic shuffle-then-split. Input order does not matter: items are
/// sorted by photo id before the seeded shuffle.
pub fn split_dataset(label: Label, items: &[SplitItem], seed: u64) -> Result<SplitManifest> {
    let (n_train, n_val, _) = split_sizes(items.len())?;
    let mut sorted = items.to_vec();
    sorted.sort_by(|a, b| {
        a.photo_id
            .cmp(&b.photo_id)
            .then(a.stars.scaled().cmp(&b.stars.scaled()))
    });
    sorted.shuffle(&mut util::rng(seed));
    let test = sorted.split_off(n_train + n_val);
    let val = sorted.split_off(n_train);
    Ok(SplitManifest {
        label,
        seed,
        train: sorted,
        val,
        test,
    })
}

impl SplitManifest {
    pub fn len(&self) -> usize {
        self.train.len() + self.val.len() + self.test.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn split(&self, s: Split) -> &[SplitItem] {
        match s {
            Split::Train => &self.train,
            Split::Val => &self.val,
            Split::Test => &self.test,
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = (Split, &SplitItem)> {
        Split::ALL
            .into_iter()
            .flat_map(move |s| self.split(s).iter().map(move |it| (s, it)))
    }

    pub fn to_text(&self) -> String {
        let mut out = format!("label={} seed={}\n", self.label, self.seed);
        for (s, it) in self.iter() {
            let _ = writeln!(out, "{}\t{}\t{}", it.photo_id, it.stars, s.as_str());
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        let header = lines
            .next()
            .ok_or_else(|| Error::Format("empty manifest".into()))?;
        let bad_header = || Error::Format(format!("bad manifest header {header:?}"));
        let (l, s) = header.split_once(' ').ok_or_else(bad_header)?;
        let label: Label = l
            .strip_prefix("label=")
            .ok_or_else(bad_header)?
            .parse()
            .map_err(|_| bad_header())?;
        let seed: u64 = s
            .strip_prefix("seed=")
            .ok_or_else(bad_header)?
            .parse()
            .map_err(|_| bad_header())?;
        let mut m = SplitManifest {
            label,
            seed,
            train: vec![],
            val: vec![],
            test: vec![],
        };
        for (i, line) in lines.enumerate() {
            if line.is_empty() {
                continue;
            }
            let bad = || Error::Format(format!("manifest line {}: {line:?}", i + 2));
            let mut parts = line.split('\t');
            let (Some(id), Some(stars), Some(split), None) =
                (parts.next(), parts.next(), parts.next(), parts.next())
            else {
                return Err(bad());
            };
            let stars: StarClass = stars.parse().map_err(|_| bad())?;
            let item = SplitItem {
                photo_id: id.to_string(),
                stars,
            };
            match Split::parse(split).ok_or_else(bad)? {
                Split::Train => m.train.push(item),
                Split::Val => m.val.push(item),
                Split::Test => m.test.push(item),
            }
        }
        Ok(m)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut w = util::create(path)?;
        w.write_all(self.to_text().as_bytes())
            .and_then(|_| w.flush())
            .map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_text(&text)
    }
}
