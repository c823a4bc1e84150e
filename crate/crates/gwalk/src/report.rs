//! Report plumbing: canonical config hashing, stable artifact naming, and
//! the JSON / CSV writers shared by the verification campaigns and the CLI.
//!
//! Everything here is deterministic: the same serializable value always
//! hashes to the same name and writes the same bytes, so reruns with an
//! unchanged configuration are byte-identical.

use std::fs;
use std::io;
use std::path::Path;

use serde::Serialize;

use crate::reduction::ForestEncoding;
use crate::stats::EmpiricalLaplace;

/// 64-bit FNV-1a over the canonical JSON encoding of `value`.
///
/// Struct fields serialize in declaration order and map types used in
/// reports are ordered, so the digest covers every semantic field and
/// nothing else. Returned as 16 lowercase hex digits.
pub fn config_hash<T: Serialize>(value: &T) -> String {
    let json = serde_json::to_string(value).expect("config serializes");
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in json.as_bytes() {
        h ^= *b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    format!("{h:016x}")
}

/// Stable artifact file stem: `{kind}_{config_hash}`.
pub fn artifact_stem(kind: &str, hash: &str) -> String {
    format!("{kind}_{hash}")
}

/// Writes `value` as pretty-printed JSON with a trailing newline.
pub fn write_json<T: Serialize>(path: &Path, value: &T) -> io::Result<()> {
    let mut body = serde_json::to_string_pretty(value).map_err(io::Error::other)?;
    body.push('\n');
    fs::write(path, body)
}

/// One row of a Laplace-curve table.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct CurveRow {
    pub lambda: f64,
    pub empirical: f64,
    pub band_lo: f64,
    pub band_hi: f64,
    pub target: f64,
}

/// Pairs an empirical transform with its target values, point by point.
pub fn curve_rows(empirical: &EmpiricalLaplace, targets: &[f64]) -> Vec<CurveRow> {
    assert_eq!(empirical.points.len(), targets.len());
    empirical
        .points
        .iter()
        .zip(targets)
        .map(|(p, &target)| CurveRow {
            lambda: p.lambda,
            empirical: p.estimate,
            band_lo: p.band_lo,
            band_hi: p.band_hi,
            target,
        })
        .collect()
}

/// Writes a curve table with the frozen header
/// `lambda,empirical,band_lo,band_hi,target`.
pub fn write_curve_csv(path: &Path, rows: &[CurveRow]) -> io::Result<()> {
    let mut out = String::from("lambda,empirical,band_lo,band_hi,target\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            r.lambda, r.empirical, r.band_lo, r.band_hi, r.target
        ));
    }
    fs::write(path, out)
}

/// Writes a forest encoding with the frozen header
/// `index,height,lukasiewicz`.
///
/// The Lukasiewicz path starts at 0 before any vertex; the column holds
/// the value after the indexed vertex, so row i pairs heights[i] with
/// lukasiewicz[i + 1].
pub fn write_encoding_csv(path: &Path, enc: &ForestEncoding) -> io::Result<()> {
    assert_eq!(enc.lukasiewicz.len(), enc.heights.len() + 1);
    let mut out = String::from("index,height,lukasiewicz\n");
    for (i, &h) in enc.heights.iter().enumerate() {
        out.push_str(&format!("{},{},{}\n", i, h, enc.lukasiewicz[i + 1]));
    }
    fs::write(path, out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stats::LaplacePoint;

    #[derive(Serialize)]
    struct Cfg {
        seed: u64,
        grid: Vec<u32>,
    }

    #[test]
    fn hash_is_stable_and_sensitive() {
        let a = Cfg { seed: 7, grid: vec![100, 200] };
        let b = Cfg { seed: 7, grid: vec![100, 200] };
        let c = Cfg { seed: 8, grid: vec![100, 200] };
        assert_eq!(config_hash(&a), config_hash(&b));
        assert_ne!(config_hash(&a), config_hash(&c));
        assert_eq!(config_hash(&a).len(), 16);
    }

    #[test]
    fn artifact_names_embed_kind_and_hash() {
        let h = config_hash(&Cfg { seed: 1, grid: vec![] });
        let stem = artifact_stem("survival", &h);
        assert!(stem.starts_with("survival_"));
        assert!(stem.ends_with(&h));
    }

    #[test]
    fn curve_csv_has_frozen_header_and_rows() {
        let dir = std::env::temp_dir().join("gwalk_report_test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("curve.csv");
        let emp = EmpiricalLaplace {
            points: vec![LaplacePoint {
                lambda: 0.5,
                estimate: 0.8,
                band: 0.01,
                band_lo: 0.78,
                band_hi: 0.82,
            }],
            effective_samples: 100,
            warnings: vec![],
        };
        let rows = curve_rows(&emp, &[0.79]);
        write_curve_csv(&path, &rows).unwrap();
        let body = std::fs::read_to_string(&path).unwrap();
        assert!(body.starts_with("lambda,empirical,band_lo,band_hi,target\n"));
        assert!(body.contains("0.5,0.8,0.78,0.82,0.79"));
    }

    #[test]
    fn rewrite_is_byte_identical() {
        let dir = std::env::temp_dir().join("gwalk_report_test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("report.json");
        let cfg = Cfg { seed: 3, grid: vec![1, 2, 3] };
        write_json(&path, &cfg).unwrap();
        let first = std::fs::read(&path).unwrap();
        write_json(&path, &cfg).unwrap();
        assert_eq!(first, std::fs::read(&path).unwrap());
    }
}
