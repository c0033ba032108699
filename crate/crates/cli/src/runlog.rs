//! Run manifests: the command line that produced a directory plus the
//! checksums of its inputs and outputs.

use std::path::{Path, PathBuf};

use anyhow::Result;
use fcnt_core::experiment::output_files;
use fcnt_core::manifest::{sha256_file, Manifest};

/// File name of the run manifest in every output directory.
pub const RUN_MANIFEST: &str = "run.txt";

/// Default output root when `--out` is not given.
pub const OUT_ENV: &str = "FCNT_OUT";

/// `--out` when given, else `$FCNT_OUT/<command>` or `fcnt-out/<command>`.
pub fn out_dir(out: Option<PathBuf>, command: &str) -> PathBuf {
    out.unwrap_or_else(|| {
        let root =
            std::env::var_os(OUT_ENV).map_or_else(|| PathBuf::from("fcnt-out"), PathBuf::from);
        root.join(command)
    })
}

/// Command-line arguments without the output directory, which a rerun
/// replaces.
pub fn strip_out(argv: &[String]) -> Vec<String> {
    let mut out = Vec::with_capacity(argv.len());
    let mut skip = false;
    for a in argv {
        if skip {
            skip = false;
        } else if a == "--out" || a == "-o" {
            skip = true;
        } else if !a.starts_with("--out=") {
            out.push(a.clone());
        }
    }
    out
}

/// Records `argv`, the checksum of every argument naming an existing file
/// and the checksum of every file under `dir`, then writes the manifest
/// into `dir`. Extra entries are stored first.
pub fn finish(dir: &Path, argv: &[String], extra: Manifest) -> Result<Manifest> {
    let mut m = Manifest::new();
    m.set("fcnt.version", env!("CARGO_PKG_VERSION"));
    let args = strip_out(argv);
    m.set("argv.count", args.len());
    for (i, a) in args.iter().enumerate() {
        m.set(format!("argv.{i}"), a);
    }
    for a in &args {
        let value = a.split_once('=').map_or(a.as_str(), |(_, v)| v);
        let value = value.strip_prefix("file:").unwrap_or(value);
        let p = Path::new(value);
        if p.is_file() {
            m.set(format!("input.{value}"), sha256_file(p)?);
        }
    }
    for (k, v) in extra.entries() {
        m.set(k, v);
    }
    for file in output_files(dir)? {
        let rel = relative(dir, &file);
        if rel != RUN_MANIFEST {
            m.set(format!("output.{rel}"), sha256_file(&file)?);
        }
    }
    m.write(dir.join(RUN_MANIFEST))?;
    Ok(m)
}

fn relative(dir: &Path, file: &Path) -> String {
    file.strip_prefix(dir)
        .unwrap_or(file)
        .to_string_lossy()
        .replace('\\', "/")
}

/// Recorded arguments of a run manifest.
pub fn recorded_argv(m: &Manifest) -> Result<Vec<String>> {
    let n: usize = m.parse("argv.count")?;
    (0..n)
        .map(|i| Ok(m.require(&format!("argv.{i}"))?.to_string()))
        .collect()
}

/// Entries under `prefix` whose checksum differs between two manifests,
/// including entries present in only one of them.
pub fn differing(a: &Manifest, b: &Manifest, prefix: &str) -> Vec<String> {
    let mut keys: Vec<&str> = a
        .with_prefix(prefix)
        .map(|(k, _)| k)
        .chain(b.with_prefix(prefix).map(|(k, _)| k))
        .collect();
    keys.sort_unstable();
    keys.dedup();
    keys.into_iter()
        .filter(|k| a.get(k) != b.get(k))
        .map(|k| k[prefix.len()..].to_string())
        .collect()
}
