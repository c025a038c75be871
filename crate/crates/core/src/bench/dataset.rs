use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::inference::BoundingBox;
use crate::matcher::Frame;

pub const GROUNDTRUTH_NAME: &str = "groundtruth_rect.txt";
pub const FRAMES_DIR: &str = "img";

const FRAME_EXTENSIONS: [&str; 3] = ["jpg", "jpeg", "png"];

/// An annotated image sequence; `groundtruth[0]` is the init box.
#[derive(Debug, Clone, PartialEq)]
pub struct Sequence {
    pub name: String,
    pub frame_paths: Vec<PathBuf>,
    pub groundtruth: Vec<BoundingBox>,
}

impl Sequence {
    pub fn new(name: impl Into<String>, frame_paths: Vec<PathBuf>, groundtruth: Vec<BoundingBox>) -> Result<Self> {
        if frame_paths.len() != groundtruth.len() || frame_paths.len() < 2 {
            return Err(Error::Parameter(format!(
                "a sequence needs at least 2 frames with one box each, got {} frames and {} boxes",
                frame_paths.len(),
                groundtruth.len()
            )));
        }
        Ok(Self {
            name: name.into(),
            frame_paths,
            groundtruth,
        })
    }

    pub fn len(&self) -> usize {
        self.frame_paths.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frame_paths.is_empty()
    }

    pub fn load_frame(&self, index: usize) -> Result<Frame> {
        let path = self.frame_paths.get(index).ok_or(Error::Index {
            index,
            len: self.frame_paths.len(),
        })?;
        Frame::load(index, path)
    }
}

/// Parses one `x,y,w,h` box per line (commas, tabs or spaces), converting
/// 1-based coordinates to 0-based. Blank lines are skipped.
pub fn parse_groundtruth(text: &str, path: &Path) -> Result<Vec<BoundingBox>> {
    let mut boxes = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line
            .split(|c: char| c == ',' || c.is_whitespace())
            .filter(|f| !f.is_empty())
            .collect();
        if fields.len() != 4 {
            return Err(Error::ingestion(
                path,
                format!("line {line_no}: expected 4 values, found {}", fields.len()),
            ));
        }
        let mut v = [0.0; 4];
        for (slot, f) in v.iter_mut().zip(&fields) {
            *slot = f
                .parse::<f64>()
                .map_err(|_| Error::ingestion(path, format!("line {line_no}: `{f}` is not a number")))?;
        }
        let frame = boxes.len();
        let b = BoundingBox::new(v[0] - 1.0, v[1] - 1.0, v[2], v[3]).map_err(|_| {
            Error::ingestion(
                path,
                format!("line {line_no} (frame {frame}): invalid box {}x{}", v[2], v[3]),
            )
        })?;
        boxes.push(b);
    }
    Ok(boxes)
}

/// Frame images of a sequence, sorted by file name.
pub fn list_frames(dir: &Path) -> Result<Vec<PathBuf>> {
    let entries = fs::read_dir(dir).map_err(|e| Error::ingestion(dir, e.to_string()))?;
    let mut frames = Vec::new();
    for entry in entries {
        let path = entry.map_err(|e| Error::ingestion(dir, e.to_string()))?.path();
        let ext = path
            .extension()
            .and_then(|e| e.to_str())
            .map(str::to_ascii_lowercase);
        if ext.is_some_and(|e| FRAME_EXTENSIONS.contains(&e.as_str())) {
            frames.push(path);
        }
    }
    frames.sort();
    Ok(frames)
}

/// Loads `<dir>/img/*` and `<dir>/groundtruth_rect.txt`, truncating both to
/// the shorter of the two.
pub fn load_otb_sequence(dir: impl AsRef<Path>) -> Result<Sequence> {
    let dir = dir.as_ref();
    let gt_path = dir.join(GROUNDTRUTH_NAME);
    let text = fs::read_to_string(&gt_path).map_err(|e| Error::ingestion(&gt_path, e.to_string()))?;
    let mut groundtruth = parse_groundtruth(&text, &gt_path)?;
    let mut frame_paths = list_frames(&dir.join(FRAMES_DIR))?;
    let n = frame_paths.len().min(groundtruth.len());
    if n < 2 {
        return Err(Error::ingestion(
            dir,
            format!(
                "need at least 2 annotated frames, found {} frames and {} boxes",
                frame_paths.len(),
                groundtruth.len()
            ),
        ));
    }
    if frame_paths.len() != groundtruth.len() {
        log::warn!(
            "{}: {} frames but {} boxes, using the first {n}",
            dir.display(),
            frame_paths.len(),
            groundtruth.len()
        );
    }
    frame_paths.truncate(n);
    groundtruth.truncate(n);
    let name = dir
        .file_name()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "sequence".into());
    Sequence::new(name, frame_paths, groundtruth)
}

/// Sequence directories under `root` (those holding a ground-truth file),
/// sorted by name.
pub fn list_sequences(root: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
    let root = root.as_ref();
    let entries = fs::read_dir(root).map_err(|e| Error::ingestion(root, e.to_string()))?;
    let mut dirs = Vec::new();
    for entry in entries {
        let path = entry.map_err(|e| Error::ingestion(root, e.to_string()))?.path();
        if path.join(GROUNDTRUTH_NAME).is_file() {
            dirs.push(path);
        }
    }
    dirs.sort();
    Ok(dirs)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(text: &str) -> Result<Vec<BoundingBox>> {
        parse_groundtruth(text, Path::new("gt.txt"))
    }

    #[test]
    fn one_based_correction() {
        let b = parse("100,50,30,40\n").unwrap();
        assert_eq!(b, vec![BoundingBox::new(99.0, 49.0, 30.0, 40.0).unwrap()]);
    }

    #[test]
    fn delimiters_are_interchangeable() {
        let a = parse("100,50,30,40\n1,2,3,4").unwrap();
        let b = parse("100\t50\t30\t40\n1 2  3\t4\n\n").unwrap();
        let c = parse("100, 50, 30, 40\r\n1,2,3,4\r\n").unwrap();
        assert_eq!(a, b);
        assert_eq!(a, c);
    }

    #[test]
    fn errors_name_line_and_frame() {
        let err = parse("1,2,3,4\n5,6,0,8\n").unwrap_err().to_string();
        assert!(err.contains("line 2") && err.contains("frame 1"), "{err}");
        let err = parse("1,2,3,4\n1,2,x,4\n").unwrap_err().to_string();
        assert!(err.contains("line 2"), "{err}");
        let err = parse("1,2,3\n").unwrap_err().to_string();
        assert!(err.contains("line 1"), "{err}");
    }

    #[test]
    fn loads_and_truncates() {
        let dir = tempfile::tempdir().unwrap();
        let img = dir.path().join("img");
        fs::create_dir(&img).unwrap();
        for i in 1..=3 {
            image::RgbImage::new(8, 8).save(img.join(format!("{i:04}.png"))).unwrap();
        }
        fs::write(img.join("notes.txt"), "ignored").unwrap();
        fs::write(dir.path().join(GROUNDTRUTH_NAME), "1,1,4,4\n2,2,4,4\n3,3,4,4\n4,4,4,4\n").unwrap();
        let seq = load_otb_sequence(dir.path()).unwrap();
        assert_eq!(seq.len(), 3);
        assert_eq!(seq.groundtruth[2].x, 2.0);
        assert!(seq.frame_paths[0].ends_with("0001.png"));
        assert_eq!(seq.load_frame(1).unwrap().image.dimensions(), (8, 8));
    }

    #[test]
    fn missing_files_are_ingestion_errors() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(load_otb_sequence(dir.path()), Err(Error::Ingestion { .. })));
        fs::write(dir.path().join(GROUNDTRUTH_NAME), "1,1,4,4\n").unwrap();
        assert!(matches!(load_otb_sequence(dir.path()), Err(Error::Ingestion { .. })));
    }
}
