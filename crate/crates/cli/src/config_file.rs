//! Flat key=value configuration files.
//!
//! Keys mirror long flag names (`seed=7`, `no-adjust=true`, `n=8,16`).
//! The file's settings are injected as flags immediately after the
//! subcommand, so flags given on the command line override them
//! (later occurrences win).

use std::path::Path;

/// Rebuild argv with `--config` contents spliced in after the subcommand.
pub fn argv_with_config() -> Vec<String> {
    let argv: Vec<String> = std::env::args().collect();
    let Some(config_pos) = argv.iter().position(|a| a == "--config") else {
        return argv;
    };
    let Some(path) = argv.get(config_pos + 1) else {
        return argv;
    };
    let Ok(flags) = load_flags(Path::new(path)) else {
        return argv; // let clap/io surface the error downstream
    };
    // flags go right after the subcommand token (argv[2])
    if argv.len() < 2 {
        return argv;
    }
    let mut out = argv[..2].to_vec();
    out.extend(flags);
    out.extend(argv[2..].iter().cloned());
    out
}

/// Parse `key=value` lines into flag tokens. Booleans inject bare switches
/// when true; `#` starts a comment.
pub fn load_flags(path: &Path) -> std::io::Result<Vec<String>> {
    let text = std::fs::read_to_string(path)?;
    let mut flags = Vec::new();
    for line in text.lines() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            continue;
        };
        let key = key.trim().replace('_', "-");
        let value = value.trim();
        match value {
            "true" => flags.push(format!("--{key}")),
            "false" => {}
            _ => {
                flags.push(format!("--{key}"));
                flags.push(value.to_string());
            }
        }
    }
    Ok(flags)
}
