//! `run.json`: the resolved configuration written next to every output,
//! sufficient to reproduce the run (seed, flags, input checksums).

use nullstrap_core::Result;
use serde_json::Value;
use sha2::{Digest, Sha256};
use std::path::Path;

pub fn input_entry(path: &Path) -> Result<Value> {
    let bytes = std::fs::read(path)?;
    let digest = Sha256::digest(&bytes);
    Ok(serde_json::json!({
        "path": path.display().to_string(),
        "sha256": format!("{digest:x}"),
        "bytes": bytes.len(),
    }))
}

pub fn write(out_dir: &Path, mut record: Value) -> Result<()> {
    if let Value::Object(map) = &mut record {
        map.insert(
            "tool".into(),
            Value::String(format!("nullstrap {}", env!("CARGO_PKG_VERSION"))),
        );
    }
    let path = out_dir.join("run.json");
    let text = serde_json::to_string_pretty(&record).expect("serializable record");
    std::fs::write(path, text + "\n")?;
    Ok(())
}
