//! Runtime code retrieval over node JSON-RPC.

use std::time::Duration;

use ponzilens_core::bytecode::parse_hex;
use serde_json::{json, Value};
use thiserror::Error;

use crate::cache::DiskCache;
use crate::input::Address;

pub const RPC_URL_ENV: &str = "PONZILENS_RPC_URL";
const TIMEOUT: Duration = Duration::from_secs(30);

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum FetchError {
    #[error("network error talking to {endpoint}: {message}")]
    Network { endpoint: String, message: String },
    #[error("rpc error {code}: {message}")]
    Rpc { code: i64, message: String },
    #[error("no contract code at {0}")]
    EmptyCode(String),
    #[error("unexpected rpc response: {0}")]
    MalformedResponse(String),
}

/// `eth_getCode(address, "latest")`, served from `cache` when possible.
pub fn fetch_bytecode(address: &Address, endpoint: &str, cache: Option<&DiskCache>) -> Result<Vec<u8>, FetchError> {
    if let Some(hex) = cache.and_then(|c| c.get_code(endpoint, address)) {
        if let Ok(code) = parse_hex(&hex) {
            log::debug!("code for {address} served from cache");
            return Ok(code.bytes);
        }
    }
    let request = json!({
        "jsonrpc": "2.0",
        "id": 1,
        "method": "eth_getCode",
        "params": [address.to_string(), "latest"],
    });
    log::info!("fetching code for {address} from {endpoint}");
    let body: Value = match ureq::post(endpoint).timeout(TIMEOUT).send_json(request) {
        Ok(resp) => resp.into_json().map_err(|e| FetchError::MalformedResponse(e.to_string()))?,
        // Some nodes answer JSON-RPC errors with a non-2xx status.
        Err(ureq::Error::Status(status, resp)) => match resp.into_json::<Value>() {
            Ok(v) if v.get("error").is_some() => v,
            _ => return Err(FetchError::Network { endpoint: endpoint.to_string(), message: format!("HTTP {status}") }),
        },
        Err(e) => return Err(FetchError::Network { endpoint: endpoint.to_string(), message: e.to_string() }),
    };
    let hex = parse_response(&body, address)?;
    let code = parse_hex(&hex).map_err(|e| FetchError::MalformedResponse(e.to_string()))?;
    if let Some(c) = cache {
        if let Err(e) = c.put_code(endpoint, address, &hex) {
            log::warn!("could not cache code for {address}: {e}");
        }
    }
    Ok(code.bytes)
}

fn parse_response(body: &Value, address: &Address) -> Result<String, FetchError> {
    if let Some(err) = body.get("error") {
        return Err(FetchError::Rpc {
            code: err.get("code").and_then(Value::as_i64).unwrap_or(0),
            message: err.get("message").and_then(Value::as_str).unwrap_or("").to_string(),
        });
    }
    let hex =
        body.get("result").and_then(Value::as_str).ok_or_else(|| FetchError::MalformedResponse(body.to_string()))?;
    if hex.trim_start_matches("0x").is_empty() {
        return Err(FetchError::EmptyCode(address.to_string()));
    }
    Ok(hex.to_string())
}
