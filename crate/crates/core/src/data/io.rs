//! On-disk sequences: numbered P6 frames, OTB-style `groundtruth.txt` and
//! an `events.json` provenance sidecar.

use std::fs;
use std::path::{Path, PathBuf};

use super::image::RgbImage;
use super::synth::{EventLog, SequenceRecord};
use crate::bbox::BBox;
use crate::error::{Error, Result};

pub const GROUNDTRUTH_FILE: &str = "groundtruth.txt";
pub const EVENTS_FILE: &str = "events.json";

fn frame_name(i: usize) -> String {
    format!("{:05}.ppm", i + 1)
}

pub fn format_box_line(b: &BBox) -> String {
    format!("{},{},{},{}", b.x, b.y, b.w, b.h)
}

pub fn parse_box_line(line: &str) -> Result<BBox> {
    let vals: Vec<f64> = line
        .split(|c: char| c == ',' || c.is_whitespace())
        .filter(|s| !s.is_empty())
        .map(|s| s.parse::<f64>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|e| Error::format("groundtruth", format!("`{line}`: {e}")))?;
    if vals.len() != 4 {
        return Err(Error::format("groundtruth", format!("`{line}`: expected x,y,w,h")));
    }
    BBox::new(vals[0], vals[1], vals[2], vals[3])
}

pub fn read_groundtruth(path: impl AsRef<Path>) -> Result<Vec<BBox>> {
    fs::read_to_string(path)?
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(parse_box_line)
        .collect()
}

pub fn save_sequence(seq: &SequenceRecord, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir)?;
    for (i, f) in seq.frames.iter().enumerate() {
        f.write_ppm(dir.join(frame_name(i)))?;
    }
    let gt: String = seq.gt.iter().map(|b| format_box_line(b) + "\n").collect();
    fs::write(dir.join(GROUNDTRUTH_FILE), gt)?;
    fs::write(dir.join(EVENTS_FILE), serde_json::to_string_pretty(&seq.events)?)?;
    Ok(())
}

pub fn load_sequence(dir: impl AsRef<Path>) -> Result<SequenceRecord> {
    let dir = dir.as_ref();
    let gt = read_groundtruth(dir.join(GROUNDTRUTH_FILE))?;
    let mut frames = Vec::with_capacity(gt.len());
    for i in 0..gt.len() {
        frames.push(RgbImage::read_ppm(dir.join(frame_name(i)))?);
    }
    let events = match fs::read_to_string(dir.join(EVENTS_FILE)) {
        Ok(s) => serde_json::from_str(&s)?,
        Err(_) => EventLog::default(),
    };
    let name = dir
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default();
    SequenceRecord::new(name, frames, gt, events)
}

/// Sequence directories below `root` (a directory holding `groundtruth.txt`
/// counts as a one-sequence suite).
pub fn list_sequences(root: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
    let root = root.as_ref();
    if root.join(GROUNDTRUTH_FILE).is_file() {
        return Ok(vec![root.to_path_buf()]);
    }
    let mut dirs: Vec<PathBuf> = fs::read_dir(root)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.join(GROUNDTRUTH_FILE).is_file())
        .collect();
    dirs.sort();
    if dirs.is_empty() {
        return Err(Error::invalid(format!("no sequences under {}", root.display())));
    }
    Ok(dirs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::synth::{synth_sequence, SynthSpec};

    #[test]
    fn sequence_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let spec = SynthSpec {
            length: 4,
            clutter: 1,
            ..SynthSpec::default()
        };
        let seq = synth_sequence(&spec, 1).unwrap();
        let p = dir.path().join("seq_000");
        save_sequence(&seq, &p).unwrap();
        let back = load_sequence(&p).unwrap();
        assert_eq!(back.frames, seq.frames);
        assert_eq!(back.gt, seq.gt);
        assert_eq!(back.events, seq.events);
        assert_eq!(list_sequences(dir.path()).unwrap(), vec![p]);
    }

    #[test]
    fn box_lines() {
        let b = parse_box_line("1.5,2,3,4").unwrap();
        assert_eq!(format_box_line(&b), "1.5,2,3,4");
        assert!(parse_box_line("1,2,3").is_err());
        assert!(parse_box_line("1,2,0,4").is_err());
    }
}
