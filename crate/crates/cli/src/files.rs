//! Volume and report locations: a path ending in `.json` is a sidecar
//! volume, any other path is a pyramid store directory.

use std::fs;
use std::io::Write;
use std::path::Path;

use voxsr::io::{read_volume, write_volume};
use voxsr::store::{write_store, StoreOptions};
use voxsr::{Error, Group, PyramidStore, Result, Volume};

pub fn io_err(path: &Path, source: std::io::Error) -> Error {
    Error::Io {
        path: path.to_path_buf(),
        source,
    }
}

pub fn is_sidecar(path: &Path) -> bool {
    path.extension().is_some_and(|e| e.eq_ignore_ascii_case("json"))
}

pub fn require_input(path: &Path) -> Result<()> {
    if path.exists() {
        Ok(())
    } else {
        Err(Error::Config(format!("input {} does not exist", path.display())))
    }
}

/// Refuses to replace an existing output unless `overwrite`.
pub fn check_output(path: &Path, overwrite: bool) -> Result<()> {
    if path.exists() && !overwrite {
        return Err(Error::Conflict(format!(
            "{} exists; pass --overwrite to replace it",
            path.display()
        )));
    }
    Ok(())
}

pub fn load_volume(path: &Path, group: Group, level: usize) -> Result<Volume> {
    require_input(path)?;
    if is_sidecar(path) {
        read_volume(path)
    } else {
        PyramidStore::open(path)?.read_level(group, level)
    }
}

pub fn open_store(path: &Path) -> Result<PyramidStore> {
    require_input(path)?;
    PyramidStore::open(path)
}

/// Writes a single-level volume; stores receive it as level 0 of `group`.
pub fn save_volume(path: &Path, volume: &Volume, group: Group, overwrite: bool) -> Result<()> {
    if is_sidecar(path) {
        check_output(path, overwrite)?;
        write_volume(path, volume)
    } else {
        let opts = StoreOptions {
            overwrite,
            ..StoreOptions::for_group(group)
        };
        write_store(path, group, std::slice::from_ref(volume), &opts).map(|_| ())
    }
}

/// Sends a report to `out`, or to standard output.
pub fn emit(out: Option<&Path>, text: &str, overwrite: bool) -> Result<()> {
    match out {
        Some(path) => {
            check_output(path, overwrite)?;
            if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
                fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
            }
            let body = if text.ends_with('\n') { text.to_string() } else { format!("{text}\n") };
            fs::write(path, body).map_err(|e| io_err(path, e))
        }
        None => print_line(text),
    }
}

/// Writes one line to standard output; a closed pipe is not an error.
pub fn print_line(text: &str) -> Result<()> {
    let mut out = std::io::stdout().lock();
    match writeln!(out, "{text}").and_then(|_| out.flush()) {
        Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => Err(io_err(Path::new("<stdout>"), e)),
        _ => Ok(()),
    }
}

/// Clears an output directory so reruns leave no stale files.
pub fn fresh_dir(path: &Path, overwrite: bool) -> Result<()> {
    check_output(path, overwrite)?;
    if path.exists() {
        fs::remove_dir_all(path).map_err(|e| io_err(path, e))?;
    }
    fs::create_dir_all(path).map_err(|e| io_err(path, e))
}
