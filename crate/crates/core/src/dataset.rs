//! TUM RGB-D sequences: index parsing, timestamp association, depth
//! decoding and prior-mask ingestion.

use std::path::{Path, PathBuf};
use std::sync::mpsc::{sync_channel, Receiver};
use std::thread::JoinHandle;

use image::{DynamicImage, RgbImage};

use crate::evaluation::Trajectory;
use crate::geometry::CameraIntrinsics;
use crate::grid::{DepthMap, Grid, Mask};
use crate::{Error, Result};

pub const DEFAULT_MAX_TIME_DIFF: f64 = 0.02;

/// One associated RGB-D observation.
#[derive(Clone, Debug)]
pub struct Frame {
    /// Position in the association table.
    pub index: usize,
    pub timestamp: f64,
    pub color: RgbImage,
    /// Meters; 0 marks invalid depth.
    pub depth: DepthMap,
    pub prior_mask: Option<Mask>,
}

impl Frame {
    pub fn dims(&self) -> (usize, usize) {
        self.depth.dims()
    }
}

/// One "timestamp filename" line of an index file.
#[derive(Clone, Debug, PartialEq)]
pub struct IndexEntry {
    pub timestamp: f64,
    /// Resolved against the dataset directory.
    pub path: PathBuf,
}

/// Parses an index file; '#' lines and blank lines are skipped.
pub fn parse_index(path: &Path) -> Result<Vec<IndexEntry>> {
    if !path.is_file() {
        return Err(Error::MissingIndex(path.to_path_buf()));
    }
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let base = path.parent().unwrap_or(Path::new("."));
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let body = line.trim();
        if body.is_empty() || body.starts_with('#') {
            continue;
        }
        let mut parts = body.split_whitespace();
        let ts = parts.next().and_then(|t| t.parse::<f64>().ok());
        let file = parts.next();
        match (ts, file, parts.next()) {
            (Some(timestamp), Some(file), None) if timestamp.is_finite() => out.push(IndexEntry {
                timestamp,
                path: base.join(file),
            }),
            _ => {
                return Err(Error::MalformedLine {
                    path: path.to_path_buf(),
                    line: i + 1,
                    content: line.to_string(),
                })
            }
        }
    }
    out.sort_by(|a, b| a.timestamp.total_cmp(&b.timestamp));
    Ok(out)
}

/// Greedy nearest-timestamp matching: candidate pairs within `max_diff` are
/// taken in order of increasing time difference, each element at most once.
/// Returns `(a_index, b_index)` pairs sorted by `a` timestamp.
pub fn associate(a: &[f64], b: &[f64], max_diff: f64) -> Vec<(usize, usize)> {
    // Absorb rounding in decimal timestamps such as 2.02 - 2.0.
    let max_diff = max_diff + 1e-9;
    let mut order: Vec<usize> = (0..b.len()).collect();
    order.sort_by(|&i, &j| b[i].total_cmp(&b[j]));
    let sorted_b: Vec<f64> = order.iter().map(|&i| b[i]).collect();
    let mut cands = Vec::new();
    for (i, &ta) in a.iter().enumerate() {
        let lo = sorted_b.partition_point(|&tb| tb < ta - max_diff);
        for (k, &tb) in sorted_b.iter().enumerate().skip(lo) {
            if tb > ta + max_diff {
                break;
            }
            let d = (ta - tb).abs();
            if d <= max_diff {
                cands.push((d, i, order[k]));
            }
        }
    }
    cands.sort_by(|x, y| x.0.total_cmp(&y.0).then(x.1.cmp(&y.1)).then(x.2.cmp(&y.2)));
    let mut used_a = vec![false; a.len()];
    let mut used_b = vec![false; b.len()];
    let mut pairs = Vec::new();
    for (_, i, j) in cands {
        if !used_a[i] && !used_b[j] {
            used_a[i] = true;
            used_b[j] = true;
            pairs.push((i, j));
        }
    }
    pairs.sort_by(|x, y| a[x.0].total_cmp(&a[y.0]).then(x.0.cmp(&y.0)));
    pairs
}

#[derive(Clone, Debug, PartialEq)]
pub struct Association {
    pub rgb_timestamp: f64,
    pub depth_timestamp: f64,
    pub gt_timestamp: Option<f64>,
    pub rgb_path: PathBuf,
    pub depth_path: PathBuf,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct AssociationTable {
    pub entries: Vec<Association>,
}

/// Decodes 16-bit depth ticks to meters.
pub fn decode_depth(ticks: &image::ImageBuffer<image::Luma<u16>, Vec<u16>>, depth_scale: f64) -> DepthMap {
    let (w, h) = (ticks.width() as usize, ticks.height() as usize);
    let data = ticks.as_raw().iter().map(|&t| (t as f64 / depth_scale) as f32).collect();
    Grid::from_vec(w, h, data)
}

pub fn load_depth(path: &Path, depth_scale: f64) -> Result<DepthMap> {
    let img = image::open(path).map_err(|e| Error::image(path, e))?;
    match img {
        DynamicImage::ImageLuma16(buf) => Ok(decode_depth(&buf, depth_scale)),
        _ => Err(Error::InvalidArgument(format!(
            "{}: depth image must be 16-bit single channel",
            path.display()
        ))),
    }
}

pub fn load_color(path: &Path) -> Result<RgbImage> {
    Ok(image::open(path).map_err(|e| Error::image(path, e))?.to_rgb8())
}

/// Mask file name for a frame timestamp.
pub fn mask_file_name(timestamp: f64) -> String {
    format!("{timestamp:.6}.png")
}

/// Reads the 8-bit instance mask for `timestamp`; nonzero pixels are prior
/// dynamic. A missing file yields `None`.
pub fn load_prior_mask(mask_dir: &Path, timestamp: f64, dims: (usize, usize)) -> Result<Option<Mask>> {
    let path = mask_dir.join(mask_file_name(timestamp));
    if !path.is_file() {
        return Ok(None);
    }
    let img = image::open(&path).map_err(|e| Error::image(&path, e))?.to_luma8();
    let found = (img.width() as usize, img.height() as usize);
    if found != dims {
        return Err(Error::DimensionMismatch { expected: dims, found });
    }
    Ok(Some(Grid::from_vec(
        found.0,
        found.1,
        img.as_raw().iter().map(|&v| v != 0).collect(),
    )))
}

/// An opened dataset: association table plus what is needed to decode frames.
#[derive(Clone, Debug)]
pub struct Sequence {
    pub dir: PathBuf,
    pub table: AssociationTable,
    pub intrinsics: CameraIntrinsics,
    pub mask_dir: Option<PathBuf>,
    pub groundtruth: Option<Trajectory>,
}

impl Sequence {
    pub fn open(dir: &Path, intrinsics: CameraIntrinsics, mask_dir: Option<&Path>, max_time_diff: f64) -> Result<Self> {
        if !dir.is_dir() {
            return Err(Error::io(
                dir,
                std::io::Error::new(std::io::ErrorKind::NotFound, "dataset directory not found"),
            ));
        }
        intrinsics.validate()?;
        let rgb = parse_index(&dir.join("rgb.txt"))?;
        let depth = parse_index(&dir.join("depth.txt"))?;
        if rgb.is_empty() {
            return Err(Error::NoEntries("rgb"));
        }
        if depth.is_empty() {
            return Err(Error::NoEntries("depth"));
        }
        let gt_path = dir.join("groundtruth.txt");
        let groundtruth = if gt_path.is_file() {
            Some(Trajectory::read_tum(&gt_path)?)
        } else {
            None
        };
        let rgb_ts: Vec<f64> = rgb.iter().map(|e| e.timestamp).collect();
        let depth_ts: Vec<f64> = depth.iter().map(|e| e.timestamp).collect();
        let gt_ts = groundtruth.as_ref().map(|g| g.timestamps()).unwrap_or_default();
        let gt_pairs = associate(&rgb_ts, &gt_ts, max_time_diff);
        let entries = associate(&rgb_ts, &depth_ts, max_time_diff)
            .into_iter()
            .map(|(i, j)| Association {
                rgb_timestamp: rgb[i].timestamp,
                depth_timestamp: depth[j].timestamp,
                gt_timestamp: gt_pairs.iter().find(|p| p.0 == i).map(|p| gt_ts[p.1]),
                rgb_path: rgb[i].path.clone(),
                depth_path: depth[j].path.clone(),
            })
            .collect();
        Ok(Self {
            dir: dir.to_path_buf(),
            table: AssociationTable { entries },
            intrinsics,
            mask_dir: mask_dir.map(Path::to_path_buf),
            groundtruth,
        })
    }

    pub fn len(&self) -> usize {
        self.table.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.table.entries.is_empty()
    }

    pub fn load_frame(&self, index: usize) -> Result<Frame> {
        let entry = self
            .table
            .entries
            .get(index)
            .ok_or_else(|| Error::InvalidArgument(format!("frame {index} out of range")))?;
        let color = load_color(&entry.rgb_path)?;
        let depth = load_depth(&entry.depth_path, self.intrinsics.depth_scale)?;
        let expected = (self.intrinsics.width, self.intrinsics.height);
        for found in [(color.width() as usize, color.height() as usize), depth.dims()] {
            if found != expected {
                return Err(Error::DimensionMismatch { expected, found });
            }
        }
        let prior_mask = match &self.mask_dir {
            Some(dir) => load_prior_mask(dir, entry.rgb_timestamp, expected)?,
            None => None,
        };
        Ok(Frame {
            index,
            timestamp: entry.rgb_timestamp,
            color,
            depth,
            prior_mask,
        })
    }

    /// Frames in order, decoded on a background thread up to `lookahead`
    /// frames ahead of the consumer.
    pub fn prefetch(&self, lookahead: usize) -> Prefetch {
        let (tx, rx) = sync_channel(lookahead.max(1));
        let seq = self.clone();
        let handle = std::thread::spawn(move || {
            for i in 0..seq.len() {
                let frame = seq.load_frame(i);
                let failed = frame.is_err();
                if tx.send(frame).is_err() || failed {
                    break;
                }
            }
        });
        Prefetch {
            rx,
            handle: Some(handle),
        }
    }
}

/// Iterator over frames decoded by a background producer. Stops after the
/// first error.
pub struct Prefetch {
    rx: Receiver<Result<Frame>>,
    handle: Option<JoinHandle<()>>,
}

impl Iterator for Prefetch {
    type Item = Result<Frame>;

    fn next(&mut self) -> Option<Self::Item> {
        match self.rx.recv() {
            Ok(f) => Some(f),
            Err(_) => {
                if let Some(h) = self.handle.take() {
                    let _ = h.join();
                }
                None
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn association_examples() {
        assert_eq!(associate(&[1.0, 2.0], &[1.01, 2.02], 0.02), vec![(0, 0), (1, 1)]);
        assert!(associate(&[1.0], &[1.5], 0.02).is_empty());
        assert_eq!(associate(&[1.0, 1.02], &[1.01], 0.02).len(), 1);
        assert_eq!(associate(&[1.0, 2.0], &[1.0, 2.0], 0.0), vec![(0, 0), (1, 1)]);
    }

    /// Smallest total |Δt| over all maximum-cardinality matchings.
    fn brute_force(a: &[f64], b: &[f64], max: f64) -> (usize, f64) {
        fn rec(i: usize, a: &[f64], b: &[f64], used: &mut Vec<bool>, max: f64) -> (usize, f64) {
            if i == a.len() {
                return (0, 0.0);
            }
            let mut best = rec(i + 1, a, b, used, max);
            for j in 0..b.len() {
                let d = (a[i] - b[j]).abs();
                if !used[j] && d <= max {
                    used[j] = true;
                    let (n, s) = rec(i + 1, a, b, used, max);
                    used[j] = false;
                    if n + 1 > best.0 || (n + 1 == best.0 && s + d < best.1) {
                        best = (n + 1, s + d);
                    }
                }
            }
            best
        }
        rec(0, a, b, &mut vec![false; b.len()], max)
    }

    #[test]
    fn nearest_wins_against_brute_force() {
        let (a, b) = ([1.0, 1.02], [1.01]);
        let pairs = associate(&a, &b, 0.02);
        let (n, total) = brute_force(&a, &b, 0.02);
        assert_eq!(pairs.len(), n);
        let got: f64 = pairs.iter().map(|&(i, j)| (a[i] - b[j]).abs()).sum();
        assert!((got - total).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn association_uses_each_entry_once(
            mut a in proptest::collection::vec(0.0f64..2.0, 0..20),
            mut b in proptest::collection::vec(0.0f64..2.0, 0..20),
        ) {
            a.sort_by(f64::total_cmp);
            b.sort_by(f64::total_cmp);
            let pairs = associate(&a, &b, 0.02);
            prop_assert!(pairs.len() <= a.len().min(b.len()));
            let mut ua = vec![false; a.len()];
            let mut ub = vec![false; b.len()];
            for &(i, j) in &pairs {
                prop_assert!(!ua[i] && !ub[j]);
                ua[i] = true;
                ub[j] = true;
                prop_assert!((a[i] - b[j]).abs() <= 0.02);
            }
            prop_assert!(pairs.windows(2).all(|w| a[w[0].0] <= a[w[1].0]));
        }

        #[test]
        fn depth_decoding_is_linear(t in 0u16..=u16::MAX, scale in 1.0f64..10_000.0) {
            let buf = image::ImageBuffer::from_raw(1, 1, vec![t]).unwrap();
            let d = decode_depth(&buf, scale);
            prop_assert_eq!(*d.get(0, 0), (t as f64 / scale) as f32);
        }
    }

    #[test]
    fn depth_tick_5000_is_one_meter() {
        let buf = image::ImageBuffer::from_raw(2, 1, vec![5000u16, 0]).unwrap();
        let d = decode_depth(&buf, 5000.0);
        assert_eq!(d.data(), &[1.0, 0.0]);
    }

    #[test]
    fn index_parsing_and_errors() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("rgb.txt");
        std::fs::write(&p, "# comment\n\n1.5 rgb/1.5.png\n1.0 rgb/1.0.png\n").unwrap();
        let idx = parse_index(&p).unwrap();
        assert_eq!(idx.len(), 2);
        assert_eq!(idx[0].timestamp, 1.0);
        assert_eq!(idx[0].path, dir.path().join("rgb/1.0.png"));

        std::fs::write(&p, "1.0 a.png\nnot-a-number b.png\n").unwrap();
        assert!(matches!(parse_index(&p), Err(Error::MalformedLine { line: 2, .. })));
        assert!(matches!(parse_index(&dir.path().join("nope.txt")), Err(Error::MissingIndex(_))));

        std::fs::write(&p, "1.0 a.png\n").unwrap();
        std::fs::write(dir.path().join("depth.txt"), "# nothing\n").unwrap();
        let err = Sequence::open(dir.path(), CameraIntrinsics::default(), None, 0.02).unwrap_err();
        assert_eq!(err.to_string(), "no depth entries");
    }

    #[test]
    fn prior_masks() {
        let dir = tempfile::tempdir().unwrap();
        let ts = 1.25;
        let mut img = image::GrayImage::new(8, 6);
        img.put_pixel(1, 1, image::Luma([1]));
        img.put_pixel(6, 4, image::Luma([2]));
        img.save(dir.path().join(mask_file_name(ts))).unwrap();
        let m = load_prior_mask(dir.path(), ts, (8, 6)).unwrap().unwrap();
        assert_eq!(m.count_true(), 2);
        assert!(*m.get(1, 1) && *m.get(6, 4));

        image::GrayImage::new(8, 6).save(dir.path().join(mask_file_name(2.0))).unwrap();
        assert_eq!(load_prior_mask(dir.path(), 2.0, (8, 6)).unwrap().unwrap().count_true(), 0);

        assert!(load_prior_mask(dir.path(), 9.0, (8, 6)).unwrap().is_none());
        assert!(matches!(
            load_prior_mask(dir.path(), ts, (16, 12)),
            Err(Error::DimensionMismatch { .. })
        ));
    }
}
