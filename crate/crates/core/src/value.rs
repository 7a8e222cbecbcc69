// Copyright (c) The chainstate Authors
// SPDX-License-Identifier: Apache-2.0

//! Flat scalar values stored in state records and carried as packet data.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

/// A single field value. Records are flat: lists hold plain integers or
/// string tokens, never nested values.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scalar {
    Int(i64),
    Str(String),
    Ints(Vec<i64>),
    Tokens(Vec<String>),
}

impl Scalar {
    pub fn kind(&self) -> FieldKind {
        match self {
            Scalar::Int(_) => FieldKind::Int,
            Scalar::Str(_) => FieldKind::Str,
            Scalar::Ints(_) => FieldKind::Ints,
            Scalar::Tokens(_) => FieldKind::Tokens,
        }
    }

    pub fn as_int(&self) -> Option<i64> {
        match self {
            Scalar::Int(v) => Some(*v),
            _ => None,
        }
    }

    pub fn as_str(&self) -> Option<&str> {
        match self {
            Scalar::Str(v) => Some(v),
            _ => None,
        }
    }

    pub fn as_ints(&self) -> Option<&[i64]> {
        match self {
            Scalar::Ints(v) => Some(v),
            _ => None,
        }
    }

    pub fn as_tokens(&self) -> Option<&[String]> {
        match self {
            Scalar::Tokens(v) => Some(v),
            _ => None,
        }
    }
}

impl From<i64> for Scalar {
    fn from(v: i64) -> Self {
        Scalar::Int(v)
    }
}

impl From<&str> for Scalar {
    fn from(v: &str) -> Self {
        Scalar::Str(v.to_owned())
    }
}

impl From<String> for Scalar {
    fn from(v: String) -> Self {
        Scalar::Str(v)
    }
}

impl fmt::Display for Scalar {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Scalar::Int(v) => write!(f, "{v}"),
            Scalar::Str(v) => write!(f, "{v:?}"),
            Scalar::Ints(v) => write!(f, "{v:?}"),
            Scalar::Tokens(v) => write!(f, "{v:?}"),
        }
    }
}

/// Declared type of a schema field; decides the field's default value.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FieldKind {
    #[default]
    Int,
    Str,
    Ints,
    Tokens,
}

impl FieldKind {
    pub fn default_value(self) -> Scalar {
        match self {
            FieldKind::Int => Scalar::Int(0),
            FieldKind::Str => Scalar::Str(String::new()),
            FieldKind::Ints => Scalar::Ints(Vec::new()),
            FieldKind::Tokens => Scalar::Tokens(Vec::new()),
        }
    }
}

/// A state record: field name to value, ordered for deterministic export.
pub type FieldMap = BTreeMap<String, Scalar>;

/// 64-bit FNV-1a. Used wherever routing or partitioning needs a hash that is
/// stable across processes and toolchains.
pub fn stable_hash(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in bytes {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_zero_or_empty() {
        assert_eq!(FieldKind::Int.default_value(), Scalar::Int(0));
        assert_eq!(FieldKind::Tokens.default_value(), Scalar::Tokens(vec![]));
    }

    #[test]
    fn fnv_reference_vectors() {
        assert_eq!(stable_hash(b""), 0xcbf29ce484222325);
        assert_eq!(stable_hash(b"a"), 0xaf63dc4c8601ec8c);
    }

    #[test]
    fn json_is_tagged() {
        let s = serde_json::to_string(&Scalar::Ints(vec![])).unwrap();
        assert_eq!(s, r#"{"ints":[]}"#);
        let back: Scalar = serde_json::from_str(&s).unwrap();
        assert_eq!(back, Scalar::Ints(vec![]));
    }
}
