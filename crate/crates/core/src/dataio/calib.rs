//! Calibration text files: one camera per line, `fu fv cu cv`.
//! Blank lines and lines starting with `#` are ignored.

use std::path::Path;

use super::CameraIntrinsics;
use crate::error::{Error, Result};

pub fn parse_calibration(text: &str) -> Result<Vec<CameraIntrinsics>> {
    let mut cams = Vec::new();
    for (no, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let vals: Vec<f64> = line
            .split_whitespace()
            .map(str::parse)
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::format("calibration", format!("line {}: {e}", no + 1)))?;
        let [fu, fv, cu, cv] = vals[..] else {
            return Err(Error::format(
                "calibration",
                format!("line {}: expected 4 numbers, found {}", no + 1, vals.len()),
            ));
        };
        cams.push(
            CameraIntrinsics::new(fu, fv, cu, cv)
                .map_err(|e| Error::format("calibration", format!("line {}: {e}", no + 1)))?,
        );
    }
    if cams.is_empty() {
        return Err(Error::format("calibration", "no camera lines"));
    }
    Ok(cams)
}

/// First camera of a calibration file.
pub fn read_calibration(path: &Path) -> Result<CameraIntrinsics> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_calibration(&text)
        .map(|c| c[0])
        .map_err(|e| Error::format("calibration", format!("{}: {e}", path.display())))
}

pub fn write_calibration(path: &Path, cams: &[CameraIntrinsics]) -> Result<()> {
    let text: String = cams
        .iter()
        .map(|k| format!("{:?} {:?} {:?} {:?}\n", k.fu, k.fv, k.cu, k.cv))
        .collect();
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}
