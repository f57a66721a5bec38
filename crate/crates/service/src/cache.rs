//! On-disk cache for fetched code and finished reports.
//!
//! Layout under the root:
//! - `code/<key>.hex`: runtime code, keyed by endpoint and address
//! - `reports/<bytecode hash>-<settings hash>.json`: serialized reports

use std::io::Write;
use std::path::{Path, PathBuf};

use ponzilens_core::pipeline::AnalysisConfig;
use ponzilens_core::report::bytecode_hash;

use crate::input::Address;

pub const CACHE_DIR_ENV: &str = "PONZILENS_CACHE_DIR";

#[derive(Debug, Clone)]
pub struct DiskCache {
    root: PathBuf,
}

fn digest(text: &str) -> String {
    bytecode_hash(text.as_bytes()).trim_start_matches("0x").to_string()
}

impl DiskCache {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        DiskCache { root: root.into() }
    }

    pub fn from_env() -> Option<Self> {
        std::env::var_os(CACHE_DIR_ENV).filter(|v| !v.is_empty()).map(DiskCache::new)
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    fn code_path(&self, endpoint: &str, address: &Address) -> PathBuf {
        self.root.join("code").join(format!("{}.hex", digest(&format!("{endpoint}\n{address}"))))
    }

    pub fn get_code(&self, endpoint: &str, address: &Address) -> Option<String> {
        std::fs::read_to_string(self.code_path(endpoint, address)).ok()
    }

    pub fn put_code(&self, endpoint: &str, address: &Address, hex: &str) -> std::io::Result<()> {
        write_atomic(&self.code_path(endpoint, address), hex.as_bytes())
    }

    fn report_path(&self, key: &str) -> PathBuf {
        self.root.join("reports").join(format!("{key}.json"))
    }

    pub fn get_report(&self, key: &str) -> Option<String> {
        std::fs::read_to_string(self.report_path(key)).ok()
    }

    pub fn put_report(&self, key: &str, json: &str) -> std::io::Result<()> {
        write_atomic(&self.report_path(key), json.as_bytes())
    }
}

/// Content address of a report: code hash plus a hash of every setting that
/// shows up in it.
pub fn report_key(bytes: &[u8], config: &AnalysisConfig, address: Option<&str>) -> String {
    let settings = serde_json::json!({ "config": config, "address": address });
    format!("{}-{}", digest(&ponzilens_core::bytecode::to_hex(bytes)), digest(&settings.to_string()))
}

fn write_atomic(path: &Path, data: &[u8]) -> std::io::Result<()> {
    let dir = path.parent().expect("cache paths have a parent");
    std::fs::create_dir_all(dir)?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(data)?;
    tmp.persist(path).map_err(|e| e.error)?;
    Ok(())
}
