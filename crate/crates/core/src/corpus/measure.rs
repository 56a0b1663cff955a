use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

/// Intersection-based set similarity measures.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Measure {
    /// `|s∩s'| / min(|s|, |s'|)`
    #[serde(rename = "oc")]
    Overlap,
    /// `|s∩s'| / sqrt(|s| |s'|)`
    #[serde(rename = "cs")]
    Cosine,
    /// `|s∩s'| / |s∪s'|`
    #[serde(rename = "ji")]
    Jaccard,
    /// `|s∩s'| / ((|s| + |s'|) / 2)`
    #[serde(rename = "di")]
    Dice,
}

impl Measure {
    pub const ALL: [Measure; 4] = [
        Measure::Overlap,
        Measure::Cosine,
        Measure::Jaccard,
        Measure::Dice,
    ];

    pub fn short_name(self) -> &'static str {
        match self {
            Measure::Overlap => "oc",
            Measure::Cosine => "cs",
            Measure::Jaccard => "ji",
            Measure::Dice => "di",
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }

    /// Evaluates the measure from (possibly estimated) sizes, deriving the
    /// union by inclusion-exclusion.
    pub fn from_sizes(self, a: f64, b: f64, inter: f64) -> f64 {
        self.from_sizes_with_union(a, b, inter, a + b - inter)
    }

    /// Like [`Measure::from_sizes`] with an explicit union size (used by
    /// representations whose join is not given by inclusion-exclusion).
    /// Zero denominators yield 0.
    pub fn from_sizes_with_union(self, a: f64, b: f64, inter: f64, union: f64) -> f64 {
        let denom = match self {
            Measure::Overlap => a.min(b),
            Measure::Cosine => (a * b).sqrt(),
            Measure::Jaccard => union,
            Measure::Dice => 0.5 * (a + b),
        };
        if denom > 0.0 {
            inter / denom
        } else {
            0.0
        }
    }

    /// Parses a comma separated list such as `ji,oc`.
    pub fn parse_list(s: &str) -> Result<Vec<Measure>> {
        let mut out = Vec::new();
        for tok in s.split(',').map(str::trim).filter(|t| !t.is_empty()) {
            let m: Measure = tok.parse()?;
            if !out.contains(&m) {
                out.push(m);
            }
        }
        if out.is_empty() {
            return Err(invalid("empty measure list"));
        }
        Ok(out)
    }
}

impl fmt::Display for Measure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.short_name())
    }
}

impl FromStr for Measure {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "oc" | "overlap" => Ok(Measure::Overlap),
            "cs" | "cosine" => Ok(Measure::Cosine),
            "ji" | "jaccard" => Ok(Measure::Jaccard),
            "di" | "dice" => Ok(Measure::Dice),
            other => Err(invalid(format!("unknown measure {other:?}"))),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::collections::BTreeSet;

    #[test]
    fn parses_lists() {
        assert_eq!(
            Measure::parse_list("ji,oc").unwrap(),
            vec![Measure::Jaccard, Measure::Overlap]
        );
        assert!(Measure::parse_list("ji,xx").is_err());
    }

    proptest! {
        #[test]
        fn standard_inequalities(
            a in proptest::collection::btree_set(0u32..30, 1..15),
            b in proptest::collection::btree_set(0u32..30, 1..15),
        ) {
            let inter = a.intersection(&b).count() as f64;
            let union: BTreeSet<_> = a.union(&b).collect();
            let (na, nb) = (a.len() as f64, b.len() as f64);
            let oc = Measure::Overlap.from_sizes(na, nb, inter);
            let cs = Measure::Cosine.from_sizes(na, nb, inter);
            let ji = Measure::Jaccard.from_sizes(na, nb, inter);
            let di = Measure::Dice.from_sizes(na, nb, inter);
            prop_assert!((ji - inter / union.len() as f64).abs() < 1e-12);
            prop_assert!(oc + 1e-12 >= cs);
            prop_assert!(cs + 1e-12 >= di);
            prop_assert!(ji <= di + 1e-12);
            for m in Measure::ALL {
                let x = m.from_sizes(na, nb, inter);
                prop_assert!((0.0..=1.0).contains(&x));
                prop_assert_eq!(x, m.from_sizes(nb, na, inter));
            }
        }
    }
}
