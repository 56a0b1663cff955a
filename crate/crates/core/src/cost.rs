//! Storage cost of set representations, in bits.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::quant::code_width;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Method {
    Set2Bin,
    Set2Vec,
    /// Set2Vec over precomputed entity features.
    Set2VecPlus,
    Set2BoxOrder,
    Set2BoxPq,
    /// Set2Box+ trained without the joint views.
    Set2BoxBq,
    Set2Box,
    Set2BoxPlus,
}

impl Method {
    pub const ALL: [Method; 8] = [
        Method::Set2Bin,
        Method::Set2Vec,
        Method::Set2VecPlus,
        Method::Set2BoxOrder,
        Method::Set2BoxPq,
        Method::Set2BoxBq,
        Method::Set2Box,
        Method::Set2BoxPlus,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::Set2Bin => "set2bin",
            Method::Set2Vec => "set2vec",
            Method::Set2VecPlus => "set2vec+",
            Method::Set2BoxOrder => "set2box-order",
            Method::Set2BoxPq => "set2box-pq",
            Method::Set2BoxBq => "set2box-bq",
            Method::Set2Box => "set2box",
            Method::Set2BoxPlus => "set2box+",
        }
    }

    /// Methods that store per-set codes into learned codebooks.
    pub fn is_quantized(self) -> bool {
        matches!(self, Method::Set2BoxPq | Method::Set2BoxBq | Method::Set2BoxPlus)
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s.trim().to_ascii_lowercase())
            .ok_or_else(|| invalid(format!("unknown method `{s}`")))
    }
}

/// Shape parameters entering the cost formulas.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CostParams {
    pub num_sets: u64,
    pub d: u64,
    /// Subspaces `D`; ignored by unquantized methods.
    pub num_subspaces: u64,
    /// Keys per subspace `K`; ignored by unquantized methods.
    pub num_keys: u64,
}

/// Bits with real-valued `log₂K` and with packed `⌈log₂K⌉`-bit codes.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EncodingCost {
    pub real: f64,
    pub packed: u64,
}

pub fn encoding_cost(method: Method, p: CostParams) -> Result<EncodingCost> {
    if p.d == 0 {
        return Err(invalid("d must be at least 1"));
    }
    let (s, d) = (p.num_sets, p.d);
    let dense = |bits_per_coord: u64| {
        let b = bits_per_coord * d * s;
        EncodingCost {
            real: b as f64,
            packed: b,
        }
    };
    Ok(match method {
        Method::Set2Bin => dense(1),
        Method::Set2Vec | Method::Set2VecPlus | Method::Set2BoxOrder => dense(32),
        Method::Set2Box => dense(64),
        Method::Set2BoxPq | Method::Set2BoxBq | Method::Set2BoxPlus => {
            let (dd, k) = (p.num_subspaces, p.num_keys);
            if dd == 0 || d % dd != 0 {
                return Err(invalid(format!("D = {dd} must divide d = {d}")));
            }
            if k == 0 {
                return Err(invalid("K must be at least 1"));
            }
            let copies = if method == Method::Set2BoxPq { 2 } else { 1 };
            let keys = 64 * k * d;
            EncodingCost {
                real: keys as f64 + (copies * s * dd) as f64 * (k as f64).log2(),
                packed: keys + copies * s * dd * code_width(k as usize) as u64,
            }
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params(num_sets: u64, d: u64, dd: u64, k: u64) -> CostParams {
        CostParams {
            num_sets,
            d,
            num_subspaces: dd,
            num_keys: k,
        }
    }

    #[test]
    fn worked_examples() {
        let c = encoding_cost(Method::Set2Box, params(1000, 4, 0, 0)).unwrap();
        assert_eq!(c.packed, 256_000);
        let c = encoding_cost(Method::Set2BoxPlus, params(25_656, 32, 16, 30)).unwrap();
        let expect = 61_440.0 + 25_656.0 * 16.0 * 30f64.log2();
        assert_eq!(c.real, expect);
        assert!((c.real - 2_075_699.0).abs() < 0.1);
        assert_eq!(c.packed, 61_440 + 25_656 * 16 * 5);
        let c = encoding_cost(Method::Set2BoxPlus, params(10, 3, 1, 2)).unwrap();
        assert_eq!(c.packed, 10 + 128 * 3);
        assert_eq!(c.real, 10.0 + 384.0);
    }

    #[test]
    fn single_key_needs_no_code_bits() {
        let c = encoding_cost(Method::Set2BoxPlus, params(500, 8, 4, 1)).unwrap();
        assert_eq!(c.packed, 64 * 8);
        assert_eq!(c.real, 512.0);
    }

    #[test]
    fn names_round_trip_and_bad_shapes() {
        for m in Method::ALL {
            assert_eq!(m.name().parse::<Method>().unwrap(), m);
        }
        assert!("set2foo".parse::<Method>().is_err());
        assert!(encoding_cost(Method::Set2BoxPq, params(5, 32, 5, 30)).is_err());
        assert!(encoding_cost(Method::Set2BoxPlus, params(5, 32, 16, 0)).is_err());
        assert!(encoding_cost(Method::Set2Bin, params(5, 0, 0, 0)).is_err());
    }
}
