use std::collections::BTreeMap;
use std::fs;
use std::io::Read;
use std::path::{Path, PathBuf};

use serde_json::{json, Value};
use sha2::{Digest, Sha256};
use transplant_core::concept::store::sidecar_path;

use crate::config::RunConfig;
use crate::error::{usage, CliResult};

fn io_err(path: &Path, e: std::io::Error) -> transplant_core::Error {
    transplant_core::Error::Io {
        path: path.to_path_buf(),
        source: e,
    }
}

fn feed_file(h: &mut Sha256, path: &Path) -> CliResult<()> {
    let mut f = fs::File::open(path).map_err(|e| io_err(path, e))?;
    let mut buf = vec![0u8; 1 << 20];
    loop {
        let n = f.read(&mut buf).map_err(|e| io_err(path, e))?;
        if n == 0 {
            return Ok(());
        }
        h.update(&buf[..n]);
    }
}

/// `sha256:<hex>` of a file, or of a directory's regular files (names and
/// contents, in name order).
pub fn content_hash(path: &Path) -> CliResult<String> {
    let mut h = Sha256::new();
    if path.is_dir() {
        let mut files: Vec<PathBuf> = fs::read_dir(path)
            .map_err(|e| io_err(path, e))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.is_file())
            .collect();
        files.sort();
        for f in files {
            let name = f.file_name().expect("file has a name").to_string_lossy().into_owned();
            h.update(name.as_bytes());
            h.update([0]);
            feed_file(&mut h, &f)?;
            h.update([0]);
        }
    } else {
        feed_file(&mut h, path)?;
    }
    Ok(format!("sha256:{}", hex::encode(h.finalize())))
}

pub fn bytes_hash(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Hashes of every input path the config points at.
pub fn input_hashes(config: &RunConfig) -> CliResult<BTreeMap<String, String>> {
    let mut out = BTreeMap::new();
    let named = [
        ("src_model", &config.src_model),
        ("tgt_model", &config.tgt_model),
        ("templates_file", &config.templates_file),
        ("pairs", &config.pairs),
        ("scenarios", &config.scenarios),
        ("corpus", &config.corpus),
        ("items", &config.items),
        ("grid_items", &config.grid_items),
        ("fewshot", &config.fewshot),
        ("lexicon", &config.lexicon),
    ];
    for (name, path) in named {
        if let Some(p) = path {
            out.insert(name.to_string(), content_hash(p)?);
        }
    }
    for (i, v) in config.vectors.iter().enumerate() {
        out.insert(format!("vectors[{i}]"), content_hash(&v.path)?);
    }
    for (i, m) in config.maps.iter().enumerate() {
        out.insert(format!("maps[{i}]"), content_hash(m)?);
    }
    Ok(out)
}

/// Record embedded in every output: command, resolved config, input hashes.
pub fn provenance(command: &str, config: &RunConfig) -> CliResult<Value> {
    Ok(json!({
        "tool": concat!("transplant ", env!("CARGO_PKG_VERSION")),
        "command": command,
        "config": config,
        "inputs": input_hashes(config)?,
    }))
}

pub fn unix_now() -> Option<u64> {
    std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .ok()
        .map(|d| d.as_secs())
}

/// Output directory `<out>/<kind>`, created on demand.
pub fn kind_dir(config: &RunConfig, kind: &str) -> CliResult<PathBuf> {
    let dir = config.out_dir().join(kind);
    fs::create_dir_all(&dir).map_err(|e| usage(format!("cannot create {}: {e}", dir.display())))?;
    Ok(dir)
}

fn short(hash: &str) -> &str {
    &hash[..12]
}

fn sanitize(stem: &str) -> String {
    stem.chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' || c == '.' { c } else { '_' })
        .collect()
}

/// Writes `bytes` as `<dir>/<stem>-<hash>.<ext>`.
pub fn write_addressed(dir: &Path, stem: &str, ext: &str, bytes: &[u8]) -> CliResult<PathBuf> {
    let path = dir.join(format!("{}-{}.{ext}", sanitize(stem), short(&bytes_hash(bytes))));
    fs::write(&path, bytes).map_err(|e| io_err(&path, e))?;
    Ok(path)
}

pub fn write_json(dir: &Path, stem: &str, value: &Value) -> CliResult<PathBuf> {
    let mut text = serde_json::to_string_pretty(value).expect("json values serialize");
    text.push('\n');
    write_addressed(dir, stem, "json", text.as_bytes())
}

/// Runs `save` against a staging name, then renames the tensor file and its
/// sidecar to `<stem>-<hash of tensor bytes>`.
pub fn save_addressed_tensors(
    dir: &Path,
    stem: &str,
    save: impl FnOnce(&Path) -> transplant_core::Result<()>,
) -> CliResult<PathBuf> {
    let staging = dir.join(format!(".staging-{}-{}.safetensors", sanitize(stem), std::process::id()));
    save(&staging)?;
    let bytes = fs::read(&staging).map_err(|e| io_err(&staging, e))?;
    let target = dir.join(format!("{}-{}.safetensors", sanitize(stem), short(&bytes_hash(&bytes))));
    fs::rename(&staging, &target).map_err(|e| io_err(&target, e))?;
    let from = sidecar_path(&staging);
    let to = sidecar_path(&target);
    fs::rename(&from, &to).map_err(|e| io_err(&to, e))?;
    Ok(target)
}
