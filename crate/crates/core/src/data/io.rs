//! Sequence directories on disk.
//!
//! A sequence lives in one directory: an `index.txt` plus one graymap
//! file per frame. Each index row holds, space-separated: timestamp,
//! image path (relative to the directory), the four drone pose fields,
//! the four subject pose fields, and the subject id. Floats are written
//! in shortest round-trip form, so write followed by load reproduces
//! the records bit-exactly.

use super::{check_sequence, FlightRecord, Image};
use crate::error::Error;
use crate::pose::Pose4;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

/// Name of the index file inside a sequence directory.
pub const INDEX_NAME: &str = "index.txt";

/// Writes records to `dir`, creating it if needed. Frames are stored as
/// `frame_00000.pgm` and so on, in record order.
pub fn save_sequence(dir: &Path, records: &[FlightRecord]) -> Result<(), Error> {
    check_sequence(records)?;
    fs::create_dir_all(dir).map_err(|e| Error::Write {
        path: dir.to_path_buf(),
        why: e.to_string(),
    })?;
    let mut index = String::new();
    for (row, r) in records.iter().enumerate() {
        if r.subject_id.is_empty() || r.subject_id.chars().any(|c| c.is_whitespace()) {
            return Err(Error::invalid(
                "sequence",
                format!("row {row}: subject id must be non-empty without whitespace"),
            ));
        }
        let name = format!("frame_{row:05}.pgm");
        r.image.write_pgm(&dir.join(&name))?;
        let d = r.drone_world;
        let s = r.subject_world;
        writeln!(
            index,
            "{} {name} {} {} {} {} {} {} {} {} {}",
            r.timestamp, d.x, d.y, d.z, d.yaw, s.x, s.y, s.z, s.yaw, r.subject_id
        )
        .expect("writing to a string cannot fail");
    }
    let path = dir.join(INDEX_NAME);
    fs::write(&path, index).map_err(|e| Error::Write {
        path,
        why: e.to_string(),
    })
}

/// Loads and validates a sequence directory. Errors carry the
/// one-based index row they were detected on.
pub fn load_sequence(dir: &Path) -> Result<Vec<FlightRecord>, Error> {
    let index_path = dir.join(INDEX_NAME);
    let text = fs::read_to_string(&index_path).map_err(|e| Error::Read {
        path: index_path.clone(),
        why: e.to_string(),
    })?;
    let mut records = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let row = lineno + 1;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 11 {
            return Err(Error::Read {
                path: index_path.clone(),
                why: format!("row {row}: expected 11 fields, found {}", fields.len()),
            });
        }
        let num = |text: &str, what: &str| -> Result<f64, Error> {
            text.parse().map_err(|_| Error::Read {
                path: index_path.clone(),
                why: format!("row {row}: bad {what} {text:?}"),
            })
        };
        let timestamp = num(fields[0], "timestamp")?;
        let drone_world = Pose4 {
            x: num(fields[2], "drone x")?,
            y: num(fields[3], "drone y")?,
            z: num(fields[4], "drone z")?,
            yaw: num(fields[5], "drone yaw")?,
        };
        let subject_world = Pose4 {
            x: num(fields[6], "subject x")?,
            y: num(fields[7], "subject y")?,
            z: num(fields[8], "subject z")?,
            yaw: num(fields[9], "subject yaw")?,
        };
        let image = Image::read_pgm(&dir.join(fields[1])).map_err(|e| Error::Read {
            path: index_path.clone(),
            why: format!("row {row}: {e}"),
        })?;
        records.push(FlightRecord {
            timestamp,
            image,
            drone_world,
            subject_world,
            subject_id: fields[10].to_string(),
        });
    }
    check_sequence(&records).map_err(|e| Error::Read {
        path: index_path,
        why: e.to_string(),
    })?;
    Ok(records)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{FRAME_HEIGHT, FRAME_WIDTH};
    use crate::pose::delta;
    use approx::assert_abs_diff_eq;
    use tempfile::tempdir;

    fn record(i: usize) -> FlightRecord {
        let pixels = (0..FRAME_WIDTH * FRAME_HEIGHT)
            .map(|p| ((p + i * 37) % 256) as u8)
            .collect();
        FlightRecord {
            timestamp: i as f64 * 0.25 + 0.1,
            image: Image::new(FRAME_WIDTH, FRAME_HEIGHT, pixels).unwrap(),
            drone_world: Pose4::new(0.1 * i as f64, -0.2, 1.0, 0.3),
            subject_world: Pose4::new(2.0 + 0.01 * i as f64, 0.5, 1.1, -1.2),
            subject_id: "s1".to_string(),
        }
    }

    #[test]
    fn round_trip_is_bit_identical() {
        let dir = tempdir().unwrap();
        let records: Vec<FlightRecord> = (0..5).map(record).collect();
        save_sequence(dir.path(), &records).unwrap();
        let back = load_sequence(dir.path()).unwrap();
        assert_eq!(records, back);
    }

    #[test]
    fn empty_index_loads_as_empty_sequence() {
        let dir = tempdir().unwrap();
        fs::write(dir.path().join(INDEX_NAME), "").unwrap();
        assert!(load_sequence(dir.path()).unwrap().is_empty());
    }

    #[test]
    fn relative_pose_comes_from_the_world_poses() {
        let mut r = record(0);
        r.drone_world = Pose4::IDENTITY;
        r.subject_world = Pose4::new(2.0, 0.0, 0.0, 0.0);
        assert_abs_diff_eq!(
            delta(&r.relative_pose(), &Pose4::new(2.0, 0.0, 0.0, 0.0)),
            0.0
        );
    }

    #[test]
    fn errors_carry_the_row_number() {
        let dir = tempdir().unwrap();
        let records: Vec<FlightRecord> = (0..3).map(record).collect();
        save_sequence(dir.path(), &records).unwrap();

        let index = dir.path().join(INDEX_NAME);
        let text = fs::read_to_string(&index).unwrap();

        let mangled = text.replacen("0.35", "zero", 1);
        fs::write(&index, &mangled).unwrap();
        let err = load_sequence(dir.path()).unwrap_err().to_string();
        assert!(err.contains("row 2"), "missing row number: {err}");

        let missing = text.replacen("frame_00001.pgm", "gone.pgm", 1);
        fs::write(&index, &missing).unwrap();
        let err = load_sequence(dir.path()).unwrap_err().to_string();
        assert!(err.contains("row 2"), "missing row number: {err}");

        let mut lines: Vec<&str> = text.lines().collect();
        lines.swap(0, 2);
        fs::write(&index, lines.join("\n")).unwrap();
        let err = load_sequence(dir.path()).unwrap_err().to_string();
        assert!(
            err.contains("strictly increase"),
            "missing monotonicity complaint: {err}"
        );
    }
}
