//! Shared CLI plumbing: error classification, output-directory resolution,
//! and flag-value parsers.
//!
//! Errors split into two classes. [`UserError`] marks problems caused by
//! the invocation itself — a malformed flag value, an unreadable input
//! file, an infeasible request — and maps to exit code 1 with a message
//! naming the offending flag. Anything else is treated as an internal
//! error and exits 2.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

/// Environment variable that re-roots relative output directories.
pub const OUT_DIR_ENV: &str = "CROPCHAIN_OUT_DIR";

/// Inclusive tolerance of the `start:stop:step` range syntax.
const RANGE_EPS: f64 = 1e-9;

/// An invocation problem. The message should name the flag it concerns.
#[derive(Debug)]
pub struct UserError(pub String);

impl fmt::Display for UserError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UserError {}

/// Wraps a message as a [`UserError`] inside an `anyhow` error.
pub fn user_err(msg: impl Into<String>) -> anyhow::Error {
    anyhow::Error::new(UserError(msg.into()))
}

/// True when `e`'s chain contains a [`UserError`].
pub fn is_user_error(e: &anyhow::Error) -> bool {
    e.chain().any(|c| c.downcast_ref::<UserError>().is_some())
}

/// Resolves an output directory: absolute paths pass through unchanged,
/// relative paths are re-rooted under [`OUT_DIR_ENV`] when it is set.
pub fn resolve_out_dir(dir: &Path) -> PathBuf {
    if dir.is_absolute() {
        return dir.to_path_buf();
    }
    match std::env::var_os(OUT_DIR_ENV) {
        Some(base) if !base.is_empty() => PathBuf::from(base).join(dir),
        _ => dir.to_path_buf(),
    }
}

/// Creates `dir` and its parents.
pub fn ensure_dir(dir: &Path) -> anyhow::Result<()> {
    fs::create_dir_all(dir)
        .map_err(|e| user_err(format!("cannot create output directory {}: {e}", dir.display())))
}

/// Writes `text` to `path`, mapping failures to user errors.
pub fn write_text(path: &Path, text: &str) -> anyhow::Result<()> {
    fs::write(path, text).map_err(|e| user_err(format!("cannot write {}: {e}", path.display())))
}

/// Reads a UTF-8 file handed over via `flag`.
pub fn read_text(flag: &str, path: &Path) -> anyhow::Result<String> {
    fs::read_to_string(path)
        .map_err(|e| user_err(format!("{flag}: cannot read {}: {e}", path.display())))
}

/// Parses a comma-separated list of floats, naming `flag` in errors.
pub fn parse_f64_list(flag: &str, spec: &str) -> anyhow::Result<Vec<f64>> {
    let mut out = Vec::new();
    for part in spec.split(',') {
        let part = part.trim();
        let v: f64 = part
            .parse()
            .map_err(|_| user_err(format!("{flag}: '{part}' is not a number")))?;
        out.push(v);
    }
    Ok(out)
}

/// Parses a comma-separated list of non-negative integers.
pub fn parse_usize_list(flag: &str, spec: &str) -> anyhow::Result<Vec<usize>> {
    let mut out = Vec::new();
    for part in spec.split(',') {
        let part = part.trim();
        let v: usize = part
            .parse()
            .map_err(|_| user_err(format!("{flag}: '{part}' is not a non-negative integer")))?;
        out.push(v);
    }
    Ok(out)
}

/// Parses a comma-separated list of `u32` values.
pub fn parse_u32_list(flag: &str, spec: &str) -> anyhow::Result<Vec<u32>> {
    let mut out = Vec::new();
    for part in spec.split(',') {
        let part = part.trim();
        let v: u32 = part
            .parse()
            .map_err(|_| user_err(format!("{flag}: '{part}' is not a non-negative integer")))?;
        out.push(v);
    }
    Ok(out)
}

/// Parses a ratio axis: either a comma list (`0.2,0.5`) or an inclusive
/// range `start:stop:step` (`0.1:0.9:0.1` → 0.1, 0.2, …, 0.9). Both
/// endpoints are included within a tolerance of 1e-9, and emitted values
/// are snapped to 9 decimals so accumulated step error never leaks into
/// downstream identifiers.
pub fn parse_ratio_axis(flag: &str, spec: &str) -> anyhow::Result<Vec<f64>> {
    if !spec.contains(':') {
        return parse_f64_list(flag, spec);
    }
    let parts: Vec<&str> = spec.split(':').collect();
    if parts.len() != 3 {
        return Err(user_err(format!(
            "{flag}: range syntax is start:stop:step, got '{spec}'"
        )));
    }
    let mut nums = [0.0f64; 3];
    for (slot, part) in nums.iter_mut().zip(&parts) {
        *slot = part
            .trim()
            .parse()
            .map_err(|_| user_err(format!("{flag}: '{}' is not a number", part.trim())))?;
    }
    let [start, stop, step] = nums;
    if !step.is_finite() || step <= 0.0 {
        return Err(user_err(format!("{flag}: range step must be > 0, got {step}")));
    }
    if !start.is_finite() || !stop.is_finite() || stop < start - RANGE_EPS {
        return Err(user_err(format!(
            "{flag}: range stop {stop} lies below start {start}"
        )));
    }
    let mut out = Vec::new();
    for i in 0u32.. {
        let v = start + f64::from(i) * step;
        if v > stop + RANGE_EPS {
            break;
        }
        out.push(snap9(v));
        if out.len() > 100_000 {
            return Err(user_err(format!(
                "{flag}: range '{spec}' produces more than 100000 values"
            )));
        }
    }
    Ok(out)
}

/// Rounds to 9 decimals, the resolution of the range syntax.
fn snap9(v: f64) -> f64 {
    (v * 1e9).round() / 1e9
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn range_includes_both_endpoints() {
        let ps = parse_ratio_axis("--ps", "0.1:0.9:0.1").unwrap();
        assert_eq!(ps.len(), 9);
        assert_eq!(ps[0], 0.1);
        assert_eq!(ps[8], 0.9);
        for w in ps.windows(2) {
            assert!((w[1] - w[0] - 0.1).abs() < 1e-9);
        }
    }

    #[test]
    fn range_snaps_accumulated_step_error() {
        // 0.1 + 8·0.1 = 0.9000000000000001 without snapping.
        let ps = parse_ratio_axis("--ps", "0.1:0.9:0.1").unwrap();
        assert_eq!(ps[8].to_bits(), 0.9f64.to_bits());
    }

    #[test]
    fn range_with_offgrid_stop_ends_at_last_step_within_tolerance() {
        let ps = parse_ratio_axis("--ps", "0.1:0.85:0.2").unwrap();
        assert_eq!(ps, vec![0.1, 0.3, 0.5, 0.7]);
    }

    #[test]
    fn degenerate_range_is_a_single_value() {
        assert_eq!(parse_ratio_axis("--ps", "0.5:0.5:0.1").unwrap(), vec![0.5]);
    }

    #[test]
    fn comma_list_passes_through() {
        assert_eq!(
            parse_ratio_axis("--ps", "0.25, 0.5").unwrap(),
            vec![0.25, 0.5]
        );
    }

    #[test]
    fn range_errors_name_the_flag() {
        for bad in ["0.1:0.9", "0.1:0.9:0", "0.1:0.9:-0.1", "0.9:0.1:0.1", "a:b:c"] {
            let err = parse_ratio_axis("--ps", bad).unwrap_err();
            assert!(err.to_string().contains("--ps"), "{bad}: {err}");
        }
    }

    #[test]
    fn list_parsers_reject_junk() {
        assert!(parse_f64_list("--covers", "0.2,x").is_err());
        assert!(parse_u32_list("--itrs", "1,-2").is_err());
        assert!(parse_usize_list("--layers", "0,3,q").is_err());
        assert!(parse_f64_list("--covers", "").is_err());
    }

    #[test]
    fn user_errors_are_classified() {
        let e = user_err("--x: bad");
        assert!(is_user_error(&e));
        assert!(!is_user_error(&anyhow::anyhow!("plain")));
        assert!(is_user_error(&e.context("while parsing")));
    }
}
