//! On-disk formats.
//!
//! Features live one file per video in a directory; the file stem is the
//! video id. Two formats are accepted and distinguished by content, not
//! extension:
//!
//! * text: one frame per line, whitespace-separated decimal floats
//! * binary: magic `FSEQ1`, then `u32` frame count, `u32` dimension, then
//!   row-major `f64` values, all little-endian
//!
//! Ground truth is one text file per video under the same stem in its own
//! directory: one label token per line, `background` marking frames outside
//! any action.

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use ndarray::Array2;

use crate::dataset::{Dataset, FeatureSequence, GroundTruth};
use crate::error::{Error, Result};

const FEATURE_MAGIC: &[u8; 5] = b"FSEQ1";

/// Feature file encoding. Text round-trips exactly (floats are written with
/// enough digits to reparse to the same bits); binary is smaller and faster.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FileFormat {
    Text,
    Binary,
}

impl FileFormat {
    pub fn extension(self) -> &'static str {
        match self {
            FileFormat::Text => "txt",
            FileFormat::Binary => "fseq",
        }
    }
}

pub fn read_feature_file(path: &Path) -> Result<Array2<f64>> {
    let mut file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut head = [0u8; 5];
    let n = read_up_to(&mut file, &mut head).map_err(|e| Error::io(path, e))?;
    if n == 5 && &head == FEATURE_MAGIC {
        read_binary_features(path, file)
    } else {
        drop(file);
        read_text_features(path)
    }
}

fn read_up_to(r: &mut impl Read, buf: &mut [u8]) -> std::io::Result<usize> {
    let mut filled = 0;
    while filled < buf.len() {
        let n = r.read(&mut buf[filled..])?;
        if n == 0 {
            break;
        }
        filled += n;
    }
    Ok(filled)
}

fn read_binary_features(path: &Path, mut file: File) -> Result<Array2<f64>> {
    let err = |e| Error::io(path, e);
    let rows = file.read_u32::<LittleEndian>().map_err(err)? as usize;
    let cols = file.read_u32::<LittleEndian>().map_err(err)? as usize;
    if rows == 0 || cols == 0 {
        return Err(Error::EmptyInput(format!(
            "{}: {rows}x{cols} feature matrix",
            path.display()
        )));
    }
    let mut values = vec![0.0; rows * cols];
    file.read_f64_into::<LittleEndian>(&mut values)
        .map_err(err)?;
    // Trailing bytes mean the header lied about the shape.
    let mut tail = [0u8; 1];
    if file.read(&mut tail).map_err(err)? != 0 {
        return Err(Error::Parse {
            path: path.to_owned(),
            line: 0,
            what: "binary feature file",
            detail: "trailing bytes after declared matrix".into(),
        });
    }
    if let Some(bad) = values.iter().find(|v| !v.is_finite()) {
        return Err(Error::NonFinite(format!("{}: {bad}", path.display())));
    }
    Array2::from_shape_vec((rows, cols), values).map_err(|e| Error::Parse {
        path: path.to_owned(),
        line: 0,
        what: "binary feature file",
        detail: e.to_string(),
    })
}

fn read_text_features(path: &Path) -> Result<Array2<f64>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let reader = BufReader::new(file);
    let mut values = Vec::new();
    let mut cols = None;
    let mut rows = 0;
    for (idx, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        let trimmed = line.trim();
        if trimmed.is_empty() {
            continue;
        }
        let mut count = 0;
        for tok in trimmed.split_whitespace() {
            let v: f64 = tok.parse().map_err(|_| Error::Parse {
                path: path.to_owned(),
                line: idx + 1,
                what: "feature value",
                detail: format!("{tok:?} is not a number"),
            })?;
            if !v.is_finite() {
                return Err(Error::NonFinite(format!(
                    "{}:{}: {tok}",
                    path.display(),
                    idx + 1
                )));
            }
            values.push(v);
            count += 1;
        }
        match cols {
            None => cols = Some(count),
            Some(c) if c != count => {
                return Err(Error::DimensionMismatch {
                    context: format!("{}:{}", path.display(), idx + 1),
                    expected: c,
                    got: count,
                });
            }
            Some(_) => {}
        }
        rows += 1;
    }
    let cols = cols.ok_or_else(|| Error::EmptyInput(format!("{}", path.display())))?;
    Ok(Array2::from_shape_vec((rows, cols), values).expect("rows * cols checked per line"))
}

pub fn write_feature_file(frames: &Array2<f64>, path: &Path, format: FileFormat) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let err = |e| Error::io(path, e);
    match format {
        FileFormat::Text => {
            for row in frames.rows() {
                let mut first = true;
                for v in row {
                    if !first {
                        write!(w, " ").map_err(err)?;
                    }
                    // `{}` prints the shortest decimal that reparses to the
                    // same f64, so text files round-trip bit-exactly.
                    write!(w, "{v}").map_err(err)?;
                    first = false;
                }
                writeln!(w).map_err(err)?;
            }
        }
        FileFormat::Binary => {
            w.write_all(FEATURE_MAGIC).map_err(err)?;
            w.write_u32::<LittleEndian>(frames.nrows() as u32)
                .map_err(err)?;
            w.write_u32::<LittleEndian>(frames.ncols() as u32)
                .map_err(err)?;
            for v in frames.iter() {
                w.write_f64::<LittleEndian>(*v).map_err(err)?;
            }
        }
    }
    w.flush().map_err(err)
}

pub fn read_ground_truth_file(path: &Path, video_id: &str) -> Result<GroundTruth> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut labels = Vec::new();
    for (idx, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        let tok = line.trim();
        if tok.is_empty() {
            continue;
        }
        if tok.split_whitespace().nth(1).is_some() {
            return Err(Error::Parse {
                path: path.to_owned(),
                line: idx + 1,
                what: "ground-truth label",
                detail: "expected one label per line".into(),
            });
        }
        labels.push(tok.to_owned());
    }
    Ok(GroundTruth {
        video_id: video_id.to_owned(),
        labels,
    })
}

pub fn write_ground_truth_file(gt: &GroundTruth, path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for label in &gt.labels {
        writeln!(w, "{label}").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Maps file stem to path for every regular file in `dir`, sorted by stem.
/// Duplicate stems (same video in two formats) are an error.
pub fn stem_map(dir: &Path) -> Result<BTreeMap<String, PathBuf>> {
    let mut map = BTreeMap::new();
    let entries = fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    for entry in entries {
        let entry = entry.map_err(|e| Error::io(dir, e))?;
        let path = entry.path();
        if !path.is_file() {
            continue;
        }
        let stem = match path.file_stem().and_then(|s| s.to_str()) {
            Some(s) => s.to_owned(),
            None => continue,
        };
        if let Some(prev) = map.insert(stem.clone(), path.clone()) {
            return Err(Error::VideoMismatch(format!(
                "video id {stem} appears twice: {} and {}",
                prev.display(),
                path.display()
            )));
        }
    }
    Ok(map)
}

/// Loads every video under `feature_dir`, paired with ground truth from
/// `gt_dir` when given. Videos are ordered by id, so a directory always loads
/// the same way.
pub fn load_dataset(feature_dir: &Path, gt_dir: Option<&Path>) -> Result<Dataset> {
    let features = stem_map(feature_dir)?;
    if features.is_empty() {
        return Err(Error::EmptyInput(format!(
            "no feature files in {}",
            feature_dir.display()
        )));
    }
    let mut sequences = Vec::with_capacity(features.len());
    for (stem, path) in &features {
        let frames = read_feature_file(path)?;
        sequences.push(FeatureSequence::new(stem.clone(), frames)?);
    }
    let ground_truth = match gt_dir {
        None => None,
        Some(dir) => {
            let gt_files = stem_map(dir)?;
            let mut gts = Vec::with_capacity(sequences.len());
            for seq in &sequences {
                let path = gt_files.get(&seq.video_id).ok_or_else(|| {
                    Error::VideoMismatch(format!(
                        "no ground-truth file for video {} in {}",
                        seq.video_id,
                        dir.display()
                    ))
                })?;
                gts.push(read_ground_truth_file(path, &seq.video_id)?);
            }
            Some(gts)
        }
    };
    Dataset::new(sequences, ground_truth)
}

/// Writes features (and ground truth, when present and `gt_dir` is given)
/// one file per video. Directories are created as needed.
pub fn save_dataset(
    dataset: &Dataset,
    feature_dir: &Path,
    gt_dir: Option<&Path>,
    format: FileFormat,
) -> Result<()> {
    fs::create_dir_all(feature_dir).map_err(|e| Error::io(feature_dir, e))?;
    for seq in &dataset.sequences {
        let path = feature_dir.join(format!("{}.{}", seq.video_id, format.extension()));
        write_feature_file(&seq.frames, &path, format)?;
    }
    if let (Some(dir), Some(gts)) = (gt_dir, dataset.ground_truth.as_ref()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        for gt in gts {
            write_ground_truth_file(gt, &dir.join(format!("{}.txt", gt.video_id)))?;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn text_round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("v.txt");
        // Values chosen to exercise shortest-round-trip printing.
        let frames = array![
            [0.1, 1.0 / 3.0, -2.5e-8],
            [f64::MIN_POSITIVE, 1e300, -0.0],
            [4.0, 5.5, 1.2345678901234567]
        ];
        write_feature_file(&frames, &path, FileFormat::Text).unwrap();
        let back = read_feature_file(&path).unwrap();
        assert_eq!(frames.shape(), back.shape());
        for (a, b) in frames.iter().zip(back.iter()) {
            assert!(a.to_bits() == b.to_bits(), "{a} != {b}");
        }
    }

    #[test]
    fn binary_round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("v.fseq");
        let frames = array![[0.1, 2.0], [3.0, -4.5e-20]];
        write_feature_file(&frames, &path, FileFormat::Binary).unwrap();
        let back = read_feature_file(&path).unwrap();
        assert_eq!(frames, back);
    }

    #[test]
    fn format_is_detected_by_content() {
        let dir = tempfile::tempdir().unwrap();
        // A binary file with a .txt extension still loads as binary.
        let path = dir.path().join("v.txt");
        let frames = array![[1.0, 2.0]];
        write_feature_file(&frames, &path, FileFormat::Binary).unwrap();
        assert_eq!(read_feature_file(&path).unwrap(), frames);
    }

    #[test]
    fn text_rejects_ragged_rows_and_nan() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("v.txt");
        fs::write(&path, "1 2 3\n4 5\n").unwrap();
        assert!(matches!(
            read_feature_file(&path),
            Err(Error::DimensionMismatch { .. })
        ));
        fs::write(&path, "1 2\n3 NaN\n").unwrap();
        assert!(matches!(read_feature_file(&path), Err(Error::NonFinite(_))));
        fs::write(&path, "1 2\n3 oops\n").unwrap();
        assert!(matches!(read_feature_file(&path), Err(Error::Parse { .. })));
    }

    #[test]
    fn binary_rejects_trailing_bytes() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("v.fseq");
        let frames = array![[1.0, 2.0]];
        write_feature_file(&frames, &path, FileFormat::Binary).unwrap();
        let mut bytes = fs::read(&path).unwrap();
        bytes.push(0);
        fs::write(&path, bytes).unwrap();
        assert!(matches!(read_feature_file(&path), Err(Error::Parse { .. })));
    }

    #[test]
    fn directory_round_trip_with_ground_truth() {
        let root = tempfile::tempdir().unwrap();
        let fdir = root.path().join("features");
        let gdir = root.path().join("gt");
        let a = FeatureSequence::new("a", array![[1.0], [2.0]]).unwrap();
        let b = FeatureSequence::new("b", array![[3.0]]).unwrap();
        let gt = vec![
            GroundTruth {
                video_id: "a".into(),
                labels: vec!["x".into(), "background".into()],
            },
            GroundTruth {
                video_id: "b".into(),
                labels: vec!["y".into()],
            },
        ];
        let ds = Dataset::new(vec![a, b], Some(gt)).unwrap();
        save_dataset(&ds, &fdir, Some(&gdir), FileFormat::Text).unwrap();
        let back = load_dataset(&fdir, Some(&gdir)).unwrap();
        assert_eq!(back.sequences, ds.sequences);
        assert_eq!(back.ground_truth.unwrap(), ds.ground_truth.unwrap());
    }

    #[test]
    fn missing_ground_truth_file_is_an_error() {
        let root = tempfile::tempdir().unwrap();
        let fdir = root.path().join("features");
        let gdir = root.path().join("gt");
        fs::create_dir_all(&gdir).unwrap();
        let ds = Dataset::new(
            vec![FeatureSequence::new("a", array![[1.0]]).unwrap()],
            None,
        )
        .unwrap();
        save_dataset(&ds, &fdir, None, FileFormat::Text).unwrap();
        assert!(matches!(
            load_dataset(&fdir, Some(&gdir)),
            Err(Error::VideoMismatch(_))
        ));
    }
}
