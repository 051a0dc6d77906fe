//! Sequence CSV + sidecar JSON.
//!
//! One header line followed by one row per frame:
//!
//! ```text
//! t,gx,gy,gz,ax,ay,az,qw,qx,qy,qz,px,py,pz,heading
//! ```
//!
//! Units are seconds, rad/s, m/s^2, a `(w, x, y, z)` Hamilton quaternion
//! (device to world) and metres; `heading` is in radians and may be left
//! empty on every row. Floats are written in shortest round-trip form so
//! save/load is lossless. Metadata lives next to the CSV in
//! `<name>.meta.json`; a missing sidecar loads as defaults.

use std::fs;
use std::path::{Path, PathBuf};

use super::{SensorSequence, SeqError, SequenceMeta};
use crate::geom::{UnitQuaternion, Vec3};

pub const CSV_HEADER: [&str; 15] = [
    "t", "gx", "gy", "gz", "ax", "ay", "az", "qw", "qx", "qy", "qz", "px", "py", "pz", "heading",
];

/// Tolerance on `|q| - 1` accepted when reading a file.
const UNIT_TOL: f64 = 1e-6;

fn meta_path(csv: &Path) -> PathBuf {
    let stem = csv.file_stem().and_then(|s| s.to_str()).unwrap_or("sequence");
    csv.with_file_name(format!("{stem}.meta.json"))
}

pub fn load_meta(csv: &Path) -> Result<Option<SequenceMeta>, SeqError> {
    let p = meta_path(csv);
    if !p.exists() {
        return Ok(None);
    }
    Ok(Some(serde_json::from_slice(&fs::read(p)?)?))
}

pub fn load_sequence(path: impl AsRef<Path>) -> Result<SensorSequence, SeqError> {
    let path = path.as_ref();
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_path(path)?;
    let header = rdr.headers()?.clone();
    if header.iter().map(str::trim).ne(CSV_HEADER.iter().copied()) {
        return Err(SeqError::MalformedHeader {
            expected: CSV_HEADER.join(","),
            found: header.iter().collect::<Vec<_>>().join(","),
        });
    }

    let mut seq = SensorSequence {
        name: path.file_stem().and_then(|s| s.to_str()).unwrap_or("sequence").to_string(),
        timestamps: Vec::new(),
        gyro: Vec::new(),
        accel: Vec::new(),
        q_device: Vec::new(),
        gt_pos: Vec::new(),
        gt_heading: None,
        meta: load_meta(path)?.unwrap_or_default(),
    };
    let mut headings: Vec<Option<f64>> = Vec::new();

    for (row, rec) in rdr.records().enumerate() {
        let rec = rec?;
        if rec.len() != CSV_HEADER.len() {
            return Err(SeqError::MalformedRow {
                row,
                msg: format!("expected {} fields, found {}", CSV_HEADER.len(), rec.len()),
            });
        }
        let num = |c: usize| -> Result<f64, SeqError> {
            let s = rec[c].trim();
            s.parse::<f64>().map_err(|e| SeqError::MalformedRow {
                row,
                msg: format!("column `{}`: {e} (`{s}`)", CSV_HEADER[c]),
            })
        };
        let t = num(0)?;
        if let Some(&prev) = seq.timestamps.last() {
            if !(t > prev) {
                return Err(SeqError::NonMonotonicTime(row));
            }
        }
        let (qw, qx, qy, qz) = (num(7)?, num(8)?, num(9)?, num(10)?);
        let qn = (qw * qw + qx * qx + qy * qy + qz * qz).sqrt();
        if !qn.is_finite() || (qn - 1.0).abs() > UNIT_TOL {
            return Err(SeqError::NonUnitQuaternion(row));
        }
        seq.timestamps.push(t);
        seq.gyro.push(Vec3::new(num(1)?, num(2)?, num(3)?));
        seq.accel.push(Vec3::new(num(4)?, num(5)?, num(6)?));
        seq.q_device.push(UnitQuaternion::new(qw, qx, qy, qz));
        seq.gt_pos.push(Vec3::new(num(11)?, num(12)?, num(13)?));
        headings.push(if rec[14].trim().is_empty() { None } else { Some(num(14)?) });
    }

    match headings.iter().filter(|h| h.is_some()).count() {
        0 => {}
        k if k == headings.len() => seq.gt_heading = Some(headings.into_iter().flatten().collect()),
        _ => {
            let row = headings.iter().position(Option::is_none).unwrap_or(0);
            return Err(SeqError::MalformedRow { row, msg: "heading must be given on all rows or none".into() });
        }
    }
    seq.validate()?;
    Ok(seq)
}

/// Writes `<path>` and its `.meta.json` sidecar.
pub fn save_sequence(seq: &SensorSequence, path: impl AsRef<Path>) -> Result<(), SeqError> {
    let path = path.as_ref();
    seq.validate()?;
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(CSV_HEADER)?;
    let mut fields: Vec<String> = Vec::with_capacity(CSV_HEADER.len());
    for i in 0..seq.len() {
        fields.clear();
        let (g, a, p) = (seq.gyro[i], seq.accel[i], seq.gt_pos[i]);
        let q = seq.q_device[i].to_wxyz();
        let vals = [seq.timestamps[i], g.x, g.y, g.z, a.x, a.y, a.z, q[0], q[1], q[2], q[3], p.x, p.y, p.z];
        fields.extend(vals.iter().map(|v| v.to_string()));
        fields.push(seq.gt_heading.as_ref().map(|h| h[i].to_string()).unwrap_or_default());
        w.write_record(&fields)?;
    }
    w.flush()?;
    fs::write(meta_path(path), serde_json::to_vec_pretty(&seq.meta)?)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seqdata::Split;

    const HEADER: &str = "t,gx,gy,gz,ax,ay,az,qw,qx,qy,qz,px,py,pz,heading\n";

    #[test]
    fn three_row_file() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("walk.csv");
        let body = "0,0,0,0,0,0,9.8,1,0,0,0,0,0,0,0.1\n\
                    0.005,0,0,0.1,0,0,9.8,1,0,0,0,0.005,0,0,0.1\n\
                    0.01,0,0,0,0.2,0,9.8,0.7071067811865476,0,0,0.7071067811865476,0.01,0,0,0.1\n";
        fs::write(&p, format!("{HEADER}{body}")).unwrap();
        let s = load_sequence(&p).unwrap();
        assert_eq!(s.len(), 3);
        assert_eq!(s.name, "walk");
        assert_eq!(s.gt_heading.as_deref(), Some(&[0.1, 0.1, 0.1][..]));
        assert_eq!(s.gyro[1].z, 0.1);
        assert_eq!(s.meta, SequenceMeta::default());
    }

    #[test]
    fn empty_heading_column() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.csv");
        fs::write(&p, format!("{HEADER}0,0,0,0,0,0,9.8,1,0,0,0,0,0,0,\n0.005,0,0,0,0,0,9.8,1,0,0,0,0,0,0,\n")).unwrap();
        assert!(load_sequence(&p).unwrap().gt_heading.is_none());
    }

    #[test]
    fn decreasing_time_is_reported() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("bad.csv");
        let body = "0,0,0,0,0,0,9.8,1,0,0,0,0,0,0,\n0.005,0,0,0,0,0,9.8,1,0,0,0,0,0,0,\n0.004,0,0,0,0,0,9.8,1,0,0,0,0,0,0,\n";
        fs::write(&p, format!("{HEADER}{body}")).unwrap();
        assert!(matches!(load_sequence(&p), Err(SeqError::NonMonotonicTime(2))));
    }

    #[test]
    fn non_unit_quaternion_and_header() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("q.csv");
        fs::write(&p, format!("{HEADER}0,0,0,0,0,0,9.8,1,0,0,0,0,0,0,\n0.005,0,0,0,0,0,9.8,1,0.1,0,0,0,0,0,\n")).unwrap();
        assert!(matches!(load_sequence(&p), Err(SeqError::NonUnitQuaternion(1))));

        let p = dir.path().join("h.csv");
        fs::write(&p, "t,gx,gy,gz,ax,ay,az,qw,qx,qy,qz,px,py,heading\n").unwrap();
        assert!(matches!(load_sequence(&p), Err(SeqError::MalformedHeader { .. })));
    }

    #[test]
    fn meta_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.csv");
        let mut s = crate::seqdata::test_support::sequence_from_positions(5, |t| Vec3::new(t, 2.0 * t, 0.0));
        s.meta = SequenceMeta { subject: "s3".into(), device: "d1".into(), split: Split::TestUnseen, rate_hz: 200.0 };
        save_sequence(&s, &p).unwrap();
        let back = load_sequence(&p).unwrap();
        assert_eq!(back.meta, s.meta);
        assert_eq!(back.gt_pos, s.gt_pos);
    }
}
