use std::path::Path;

use anyhow::Context;
use serde::Serialize;

#[derive(Serialize)]
struct Echo<'a, T> {
    command: &'a str,
    version: &'a str,
    config: &'a T,
}

/// Writes the effective configuration of a run as pretty JSON.
pub fn write(path: &Path, command: &str, config: &impl Serialize) -> anyhow::Result<()> {
    let echo = Echo {
        command,
        version: env!("CARGO_PKG_VERSION"),
        config,
    };
    if let Some(dir) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(rocksr::Error::from)?;
    }
    let text = serde_json::to_string_pretty(&echo).map_err(rocksr::Error::from)?;
    std::fs::write(path, text + "\n")
        .map_err(rocksr::Error::from)
        .with_context(|| format!("writing {}", path.display()))
}
