//! Where bytecode comes from.

use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use ponzilens_core::bytecode::{parse_hex, HexError};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cache::DiskCache;
use crate::rpc::{fetch_bytecode, FetchError};

/// A 20-byte account address.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Address(pub [u8; 20]);

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("malformed address {0:?}: expected 0x followed by 40 hex digits")]
pub struct MalformedAddress(pub String);

impl FromStr for Address {
    type Err = MalformedAddress;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || MalformedAddress(s.to_string());
        let hex = s.strip_prefix("0x").or_else(|| s.strip_prefix("0X")).ok_or_else(bad)?;
        if hex.len() != 40 || !hex.bytes().all(|b| b.is_ascii_hexdigit()) {
            return Err(bad());
        }
        let mut out = [0u8; 20];
        for (i, o) in out.iter_mut().enumerate() {
            *o = u8::from_str_radix(&hex[2 * i..2 * i + 2], 16).map_err(|_| bad())?;
        }
        Ok(Address(out))
    }
}

impl fmt::Display for Address {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("0x")?;
        self.0.iter().try_for_each(|b| write!(f, "{b:02x}"))
    }
}

impl Serialize for Address {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Address {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        String::deserialize(d)?.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InputRef {
    /// A file holding hex text.
    File(PathBuf),
    Hex(String),
    Chain {
        address: Address,
        endpoint: String,
    },
}

#[derive(Debug, Error)]
pub enum InputError {
    #[error("cannot read {path}: {source}")]
    Read { path: PathBuf, source: std::io::Error },
    #[error("invalid hex: {0}")]
    Hex(#[from] HexError),
    #[error(transparent)]
    Fetch(#[from] FetchError),
}

/// Bytecode plus the address it was fetched from, if any.
pub struct Resolved {
    pub bytes: Vec<u8>,
    pub address: Option<String>,
}

impl InputRef {
    pub fn resolve(&self, cache: Option<&DiskCache>) -> Result<Resolved, InputError> {
        Ok(match self {
            InputRef::File(path) => {
                let text =
                    std::fs::read_to_string(path).map_err(|source| InputError::Read { path: path.clone(), source })?;
                Resolved { bytes: parse_hex(&text)?.bytes, address: None }
            }
            InputRef::Hex(text) => Resolved { bytes: parse_hex(text)?.bytes, address: None },
            InputRef::Chain { address, endpoint } => {
                Resolved { bytes: fetch_bytecode(address, endpoint, cache)?, address: Some(address.to_string()) }
            }
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn address_round_trips() {
        let a: Address = "0x00000000000000000000000000000000000FEE00".parse().unwrap();
        assert_eq!(a.to_string(), "0x00000000000000000000000000000000000fee00");
    }

    #[test]
    fn short_address_is_rejected() {
        assert_eq!("0x12".parse::<Address>(), Err(MalformedAddress("0x12".into())));
        assert!("00000000000000000000000000000000000fee00".parse::<Address>().is_err());
        assert!("0x00000000000000000000000000000000000fee0g".parse::<Address>().is_err());
    }
}
