//! On-disk sequences: numbered frames plus `groundtruth.txt`.

use std::fs;
use std::path::{Path, PathBuf};

use super::{BBox, Frame, FrameSource, Result, TrackError};

pub const GROUNDTRUTH_FILE: &str = "groundtruth.txt";
const FRAME_EXTENSIONS: [&str; 3] = ["png", "jpg", "jpeg"];

/// Parses one ground-truth line: `x,y,w,h` (top-left) or an 8-value
/// polygon, reduced to its axis-aligned bounding rectangle.
pub fn parse_groundtruth_line(line: &str) -> std::result::Result<BBox, String> {
    let values = line
        .split(|c: char| c == ',' || c.is_whitespace())
        .filter(|s| !s.is_empty())
        .map(|s| s.parse::<f64>().map_err(|_| format!("`{s}` is not a number")))
        .collect::<std::result::Result<Vec<f64>, String>>()?;
    if values.iter().any(|v| !v.is_finite()) {
        return Err("non-finite coordinate".into());
    }
    let (x, y, w, h) = match values.len() {
        4 => (values[0], values[1], values[2], values[3]),
        8 => {
            let xs = [values[0], values[2], values[4], values[6]];
            let ys = [values[1], values[3], values[5], values[7]];
            let (x0, x1) = (xs.iter().copied().fold(f64::INFINITY, f64::min), xs.iter().copied().fold(f64::NEG_INFINITY, f64::max));
            let (y0, y1) = (ys.iter().copied().fold(f64::INFINITY, f64::min), ys.iter().copied().fold(f64::NEG_INFINITY, f64::max));
            (x0, y0, x1 - x0, y1 - y0)
        }
        n => return Err(format!("expected 4 or 8 values, found {n}")),
    };
    BBox::from_top_left(x, y, w, h).map_err(|e| e.to_string())
}

pub fn read_groundtruth(path: &Path) -> Result<Vec<BBox>> {
    let text = fs::read_to_string(path).map_err(|e| TrackError::GroundTruth {
        file: path.to_path_buf(),
        line: 0,
        reason: e.to_string(),
    })?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            parse_groundtruth_line(l).map_err(|reason| TrackError::GroundTruth {
                file: path.to_path_buf(),
                line: i + 1,
                reason,
            })
        })
        .collect()
}

/// One `x,y,w,h` line per box, top-left convention.
pub fn format_results(boxes: &[BBox]) -> String {
    boxes
        .iter()
        .map(|b| {
            let (x, y, w, h) = b.to_top_left();
            format!("{x:.3},{y:.3},{w:.3},{h:.3}\n")
        })
        .collect()
}

fn frame_key(path: &Path) -> (u64, String) {
    let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or_default();
    let digits: String = stem.chars().filter(|c| c.is_ascii_digit()).collect();
    (digits.parse().unwrap_or(u64::MAX), stem.to_string())
}

/// Lists the frame images of a directory in numeric order.
pub fn list_frames(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut frames: Vec<PathBuf> = fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.extension()
                .and_then(|e| e.to_str())
                .is_some_and(|e| FRAME_EXTENSIONS.contains(&e.to_ascii_lowercase().as_str()))
        })
        .collect();
    frames.sort_by_key(|p| frame_key(p));
    Ok(frames)
}

pub fn load_frame(path: &Path, index: usize) -> Result<Frame> {
    let img = image::open(path).map_err(|e| TrackError::Ingestion {
        frame: index,
        reason: format!("{}: {e}", path.display()),
    })?;
    Ok(Frame::from_rgb_image(img.to_rgb8()))
}

/// A sequence directory; frames are decoded lazily.
#[derive(Debug, Clone, PartialEq)]
pub struct SequenceDir {
    pub name: String,
    pub root: PathBuf,
    pub frames: Vec<PathBuf>,
    pub groundtruth: Vec<BBox>,
}

impl SequenceDir {
    pub fn open(root: impl AsRef<Path>) -> Result<Self> {
        let root = root.as_ref().to_path_buf();
        let name = root
            .file_name()
            .and_then(|n| n.to_str())
            .unwrap_or("sequence")
            .to_string();
        let frames = list_frames(&root)?;
        if frames.is_empty() {
            return Err(TrackError::Ingestion { frame: 0, reason: format!("no frames in {}", root.display()) });
        }
        let groundtruth = read_groundtruth(&root.join(GROUNDTRUTH_FILE))?;
        if groundtruth.is_empty() {
            return Err(TrackError::GroundTruth {
                file: root.join(GROUNDTRUTH_FILE),
                line: 1,
                reason: "no boxes".into(),
            });
        }
        Ok(Self { name, root, frames, groundtruth })
    }

    pub fn init_box(&self) -> BBox {
        self.groundtruth[0]
    }
}

impl FrameSource for SequenceDir {
    fn len(&self) -> usize {
        self.frames.len()
    }

    fn frame(&self, index: usize) -> Result<Frame> {
        let path = self.frames.get(index).ok_or_else(|| TrackError::Ingestion {
            frame: index,
            reason: "frame index out of range".into(),
        })?;
        load_frame(path, index)
    }
}

/// Lists sequence directories (sorted by name) under a dataset root.
pub fn list_sequences(root: &Path) -> Result<Vec<PathBuf>> {
    let mut dirs: Vec<PathBuf> = fs::read_dir(root)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_dir() && p.join(GROUNDTRUTH_FILE).is_file())
        .collect();
    dirs.sort();
    Ok(dirs)
}

/// Writes frames as numbered PNGs plus a ground-truth file.
pub fn write_sequence(dir: &Path, frames: &[Frame], groundtruth: &[BBox]) -> Result<()> {
    fs::create_dir_all(dir)?;
    for (i, f) in frames.iter().enumerate() {
        f.to_rgb_image()
            .save(dir.join(format!("{:08}.png", i + 1)))
            .map_err(|e| TrackError::Ingestion { frame: i, reason: e.to_string() })?;
    }
    fs::write(dir.join(GROUNDTRUTH_FILE), format_results(groundtruth))?;
    Ok(())
}
