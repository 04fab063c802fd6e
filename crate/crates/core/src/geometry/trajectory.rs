use std::fmt::Write as _;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use super::quaternion::Quaternion;
use super::se3::SE3Pose;
use crate::error::{Error, Result};

/// Timestamped pose sequence with strictly increasing timestamps.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    entries: Vec<(f64, SE3Pose)>,
}

impl Trajectory {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_entries(entries: Vec<(f64, SE3Pose)>) -> Result<Self> {
        let mut t = Self::new();
        for (ts, pose) in entries {
            t.push(ts, pose)?;
        }
        Ok(t)
    }

    /// Appends a pose. The timestamp must exceed the last one.
    pub fn push(&mut self, timestamp: f64, pose: SE3Pose) -> Result<()> {
        if !timestamp.is_finite() {
            return Err(Error::InvalidValue(format!("non-finite timestamp {timestamp}")));
        }
        if let Some((last, _)) = self.entries.last() {
            if timestamp <= *last {
                return Err(Error::InvalidValue(format!(
                    "timestamps must increase strictly: {timestamp} after {last}"
                )));
            }
        }
        self.entries.push((timestamp, pose));
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[(f64, SE3Pose)] {
        &self.entries
    }

    pub fn poses(&self) -> impl Iterator<Item = &SE3Pose> {
        self.entries.iter().map(|(_, p)| p)
    }

    pub fn timestamps(&self) -> impl Iterator<Item = f64> + '_ {
        self.entries.iter().map(|(t, _)| *t)
    }

    pub fn positions(&self) -> Vec<Vector3<f64>> {
        self.entries.iter().map(|(_, p)| p.translation).collect()
    }

    /// Serializes to the TUM format, one `timestamp tx ty tz qx qy qz qw`
    /// line per pose. Pose values carry 9 significant digits; timestamps
    /// keep microseconds so that epoch times survive.
    pub fn to_tum(&self) -> String {
        let mut out = String::new();
        for (ts, pose) in &self.entries {
            let q = pose.rotation;
            let t = pose.translation;
            let fields = [t.x, t.y, t.z, q.x, q.y, q.z, q.w].map(|v| format_significant(v, 9));
            let _ = writeln!(out, "{} {}", format_timestamp(*ts), fields.join(" "));
        }
        out
    }

    /// Parses TUM text. Blank lines and `#` comments are skipped; errors
    /// carry the 1-based line number.
    pub fn from_tum(text: &str) -> Result<Self> {
        let mut traj = Self::new();
        for (idx, raw) in text.lines().enumerate() {
            let line_no = idx + 1;
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let values: Vec<f64> = line
                .split_whitespace()
                .map(|tok| tok.parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| Error::Parse { line: line_no, message: format!("{e}: {line:?}") })?;
            if values.len() != 8 {
                return Err(Error::Parse {
                    line: line_no,
                    message: format!("expected 8 fields, found {}", values.len()),
                });
            }
            let q = quaternion_from_file(values[7], values[4], values[5], values[6])
                .ok_or_else(|| Error::Parse { line: line_no, message: "zero or non-finite quaternion".into() })?;
            let pose = SE3Pose { rotation: q, translation: Vector3::new(values[1], values[2], values[3]) };
            traj.push(values[0], pose).map_err(|e| Error::Parse { line: line_no, message: e.to_string() })?;
        }
        Ok(traj)
    }
}

/// Reads a quaternion from text. Values already unit-norm to within the
/// precision of the file are kept verbatim so that re-serializing reproduces
/// the input digits.
pub(crate) fn quaternion_from_file(w: f64, x: f64, y: f64, z: f64) -> Option<Quaternion> {
    let q = Quaternion::from_raw(w, x, y, z);
    let n = q.norm();
    if !(n.is_finite() && n > 0.0) {
        return None;
    }
    if (n - 1.0).abs() > 1e-6 {
        Some(q.normalize())
    } else {
        Some(q.canonical())
    }
}

/// Formats `value` with `digits` significant digits, `%g` style: fixed
/// notation for moderate exponents, scientific otherwise, trailing zeros
/// removed.
pub fn format_significant(value: f64, digits: usize) -> String {
    if value == 0.0 {
        return "0".to_string();
    }
    if !value.is_finite() {
        return value.to_string();
    }
    let sci = format!("{:.*e}", digits - 1, value);
    let (mantissa, exp) = sci.split_once('e').expect("scientific format");
    let exp: i32 = exp.parse().expect("exponent");
    if exp < -5 || exp >= digits as i32 {
        let mantissa = trim_zeros(mantissa);
        return format!("{mantissa}e{exp}");
    }
    let decimals = (digits as i32 - 1 - exp).max(0) as usize;
    trim_zeros(&format!("{:.*}", decimals, value)).to_string()
}

/// Fixed notation with at most six decimals.
pub fn format_timestamp(ts: f64) -> String {
    let s = format!("{ts:.6}");
    let s = trim_zeros(&s);
    if s == "-0" {
        "0".to_string()
    } else {
        s.to_string()
    }
}

fn trim_zeros(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{se3_exp, Twist};

    #[test]
    fn significant_formatting() {
        assert_eq!(format_significant(1.0, 9), "1");
        assert_eq!(format_significant(0.123456789123, 9), "0.123456789");
        assert_eq!(format_significant(-12345.6789012, 9), "-12345.6789");
        assert_eq!(format_significant(1.5e-7, 9), "1.5e-7");
        assert_eq!(format_significant(1234567891234.0, 9), "1.23456789e12");
        assert_eq!(format_significant(0.0, 9), "0");
        assert_eq!(format_timestamp(1305031102.175304), "1305031102.175304");
        assert_eq!(format_timestamp(0.5), "0.5");
        assert_eq!(format_timestamp(3.0), "3");
    }

    #[test]
    fn rejects_non_increasing_timestamps() {
        let mut t = Trajectory::new();
        t.push(1.0, SE3Pose::identity()).unwrap();
        assert!(t.push(1.0, SE3Pose::identity()).is_err());
        assert!(t.push(0.5, SE3Pose::identity()).is_err());
    }

    #[test]
    fn tum_parse_error_names_line() {
        let text = "0 0 0 0 0 0 0 1\n# comment\n1 0 0 0 0 0 0\n";
        match Trajectory::from_tum(text) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn tum_round_trip_is_byte_identical() {
        let mut t = Trajectory::new();
        for i in 0..20 {
            let f = i as f64;
            let xi = Twist::from_slice(&[0.1 * f, -0.05 * f, 0.3, f, 0.5 * f, -2.0]);
            t.push(f * 0.033, se3_exp(&xi)).unwrap();
        }
        let first = t.to_tum();
        let second = Trajectory::from_tum(&first).unwrap().to_tum();
        assert_eq!(first, second);
    }
}
