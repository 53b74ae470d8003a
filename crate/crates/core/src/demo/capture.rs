//! Motion-capture files: a CSV of hand poses and rope markers plus a JSON
//! annotation with the collision time.

use std::path::Path;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::curvekit::Rotation;
use crate::{Error, Result};

/// Raw capture: hand pose and rope markers per sample, markers possibly missing.
#[derive(Debug, Clone, PartialEq)]
pub struct RawCapture {
    pub times: Vec<f64>,
    pub hand_positions: Vec<Vector3<f64>>,
    pub hand_rotations: Vec<Rotation>,
    /// `markers[sample][marker]`, `None` for dropouts.
    pub markers: Vec<Vec<Option<Vector3<f64>>>>,
}

/// Manually annotated collision time and the coarse search window.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Annotation {
    pub t_c: f64,
    pub coarse_window: [f64; 2],
}

impl Annotation {
    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, serde_json::to_string_pretty(self)?).map_err(|e| Error::io(path, e))
    }
}

const HAND_COLUMNS: [&str; 8] = ["t", "hand_x", "hand_y", "hand_z", "hand_qw", "hand_qx", "hand_qy", "hand_qz"];

impl RawCapture {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn marker_count(&self) -> usize {
        self.markers.first().map_or(0, |m| m.len())
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.times.len();
        if self.hand_positions.len() != n || self.hand_rotations.len() != n || self.markers.len() != n {
            return Err(Error::Dimension("capture columns have different lengths".into()));
        }
        let m = self.marker_count();
        if self.markers.iter().any(|row| row.len() != m) {
            return Err(Error::Dimension("marker count changes between samples".into()));
        }
        if self.times.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::Domain("capture timestamps must be strictly increasing".into()));
        }
        Ok(())
    }

    pub fn to_csv_string(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let mut header: Vec<String> = HAND_COLUMNS.iter().map(|s| s.to_string()).collect();
        for k in 1..=self.marker_count() {
            for a in ["x", "y", "z"] {
                header.push(format!("m{k}_{a}"));
            }
        }
        w.write_record(&header).map_err(csv_err)?;
        for i in 0..self.len() {
            let p = self.hand_positions[i];
            let q = self.hand_rotations[i].to_quaternion();
            let mut row: Vec<String> = vec![self.times[i], p.x, p.y, p.z, q[0], q[1], q[2], q[3]]
                .into_iter()
                .map(|v| v.to_string())
                .collect();
            for m in &self.markers[i] {
                match m {
                    Some(v) => row.extend(v.iter().map(|c| c.to_string())),
                    None => row.extend(["", "", ""].map(String::from)),
                }
            }
            w.write_record(&row).map_err(csv_err)?;
        }
        String::from_utf8(w.into_inner().map_err(|e| Error::Domain(e.to_string()))?)
            .map_err(|e| Error::Domain(e.to_string()))
    }

    pub fn from_csv_str(text: &str) -> Result<Self> {
        let mut r = csv::ReaderBuilder::new().from_reader(text.as_bytes());
        let header = r.headers().map_err(csv_err)?.clone();
        if header.len() < HAND_COLUMNS.len() || (header.len() - HAND_COLUMNS.len()) % 3 != 0 {
            return Err(Error::Parse {
                line: 1,
                message: format!("expected 8 hand columns plus 3 per marker, found {} columns", header.len()),
            });
        }
        for (i, name) in HAND_COLUMNS.iter().enumerate() {
            if &header[i] != *name {
                return Err(Error::Parse { line: 1, message: format!("column {} should be '{name}'", i + 1) });
            }
        }
        let markers = (header.len() - HAND_COLUMNS.len()) / 3;
        let mut cap = RawCapture {
            times: Vec::new(),
            hand_positions: Vec::new(),
            hand_rotations: Vec::new(),
            markers: Vec::new(),
        };
        for (k, rec) in r.records().enumerate() {
            let line = k + 2;
            let rec = rec.map_err(|e| Error::Parse { line, message: e.to_string() })?;
            let num = |i: usize| -> Result<f64> {
                rec[i].trim().parse::<f64>().map_err(|_| Error::Parse {
                    line,
                    message: format!("column '{}' is not a number: '{}'", &header[i], &rec[i]),
                })
            };
            cap.times.push(num(0)?);
            cap.hand_positions.push(Vector3::new(num(1)?, num(2)?, num(3)?));
            cap.hand_rotations.push(Rotation::from_quaternion(num(4)?, num(5)?, num(6)?, num(7)?));
            let mut row = Vec::with_capacity(markers);
            for m in 0..markers {
                let c = HAND_COLUMNS.len() + 3 * m;
                let empty = (c..c + 3).filter(|&i| rec[i].trim().is_empty()).count();
                match empty {
                    3 => row.push(None),
                    0 => row.push(Some(Vector3::new(num(c)?, num(c + 1)?, num(c + 2)?))),
                    _ => {
                        return Err(Error::Parse {
                            line,
                            message: format!("marker {} is partially missing", m + 1),
                        })
                    }
                }
            }
            cap.markers.push(row);
        }
        cap.validate()?;
        Ok(cap)
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_csv_str(&text)
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_csv_string()?).map_err(|e| Error::io(path, e))
    }
}

fn csv_err(e: csv::Error) -> Error {
    let line = e.position().map_or(0, |p| p.line() as usize);
    Error::Parse { line, message: e.to_string() }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> RawCapture {
        RawCapture {
            times: vec![0.0, 0.005, 0.01],
            hand_positions: vec![Vector3::new(0.1, 0.2, 1.3); 3],
            hand_rotations: vec![Rotation::from_axis_angle(&Vector3::x(), 0.3); 3],
            markers: vec![
                vec![Some(Vector3::new(1.0, 2.0, 3.0)), None],
                vec![Some(Vector3::new(1.5, 2.0, 3.0)), Some(Vector3::zeros())],
                vec![None, Some(Vector3::new(-0.25, 0.0, 1e-3))],
            ],
        }
    }

    #[test]
    fn csv_round_trip_keeps_dropouts() {
        let cap = sample();
        let text = cap.to_csv_string().unwrap();
        assert!(text.starts_with("t,hand_x,hand_y,hand_z,hand_qw,hand_qx,hand_qy,hand_qz,m1_x"));
        let back = RawCapture::from_csv_str(&text).unwrap();
        assert_eq!(back.markers, cap.markers);
        assert_eq!(back.times, cap.times);
        let d = back.hand_rotations[0].matrix() - cap.hand_rotations[0].matrix();
        assert!(d.amax() < 1e-12);
    }

    #[test]
    fn bad_number_reports_line() {
        let text = "t,hand_x,hand_y,hand_z,hand_qw,hand_qx,hand_qy,hand_qz\n0,0,0,0,1,0,0,0\n0.005,abc,0,0,1,0,0,0\n";
        match RawCapture::from_csv_str(text) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn annotation_rejects_unknown_keys() {
        let ok: Annotation = serde_json::from_str(r#"{"t_c": 0.5, "coarse_window": [0.1, 0.9]}"#).unwrap();
        assert_eq!(ok.t_c, 0.5);
        assert!(serde_json::from_str::<Annotation>(r#"{"t_c": 0.5, "coarse_window": [0, 1], "x": 1}"#).is_err());
    }
}
