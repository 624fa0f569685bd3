//! On-disk formats: 16-bit binary PGM frames and numbered video directories
//! with an index file.

use std::io::{Read as _, Write as _};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::evaluation::VideoSequence;
use crate::{Error, Frame};

const PGM_MAX: f64 = 65535.0;

/// Writes a frame as binary PGM (P5) with 16-bit big-endian samples.
pub fn write_pgm(path: &Path, frame: &Frame) -> Result<(), Error> {
    let (h, w) = frame.shape();
    let mut out = Vec::with_capacity(32 + h * w * 2);
    write!(out, "P5\n{w} {h}\n65535\n").expect("vec write");
    for v in frame.values() {
        let q = (v * PGM_MAX).round() as u16;
        out.extend_from_slice(&q.to_be_bytes());
    }
    std::fs::write(path, out)?;
    Ok(())
}

/// Reads a binary PGM written by [`write_pgm`]. Accepts 8-bit or 16-bit
/// maxval; samples are rescaled to [0, 1].
pub fn read_pgm(path: &Path) -> Result<Frame, Error> {
    let bytes = std::fs::read(path)?;
    let mut pos = 0usize;
    let bad = |msg: &str| Error::InvalidFrame(format!("{}: {msg}", path.display()));
    if bytes.len() < 2 || &bytes[0..2] != b"P5" {
        return Err(bad("not a P5 graymap"));
    }
    pos += 2;
    let mut fields = [0usize; 3];
    for field in &mut fields {
        // skip whitespace and '#' comment lines between header tokens
        loop {
            match bytes.get(pos) {
                Some(b) if b.is_ascii_whitespace() => pos += 1,
                Some(b'#') => {
                    while pos < bytes.len() && bytes[pos] != b'\n' {
                        pos += 1;
                    }
                }
                _ => break,
            }
        }
        let start = pos;
        while pos < bytes.len() && bytes[pos].is_ascii_digit() {
            pos += 1;
        }
        if pos == start {
            return Err(bad("malformed header"));
        }
        *field = std::str::from_utf8(&bytes[start..pos])
            .expect("digits")
            .parse()
            .map_err(|_| bad("header value out of range"))?;
    }
    let [w, h, maxval] = fields;
    if w == 0 || h == 0 {
        return Err(bad("zero dimension"));
    }
    if maxval == 0 || maxval > 65535 {
        return Err(bad("unsupported maxval"));
    }
    // exactly one whitespace byte separates header from raster
    if !bytes.get(pos).is_some_and(|b| b.is_ascii_whitespace()) {
        return Err(bad("missing raster separator"));
    }
    pos += 1;
    let wide = maxval > 255;
    let sample_bytes = if wide { 2 } else { 1 };
    let raster = &bytes[pos..];
    if raster.len() != h * w * sample_bytes {
        return Err(bad("raster length mismatch"));
    }
    let mut values = Vec::with_capacity(h * w);
    let mut cursor = std::io::Cursor::new(raster);
    for _ in 0..h * w {
        let raw = if wide {
            let mut b = [0u8; 2];
            cursor.read_exact(&mut b)?;
            u16::from_be_bytes(b) as f64
        } else {
            let mut b = [0u8; 1];
            cursor.read_exact(&mut b)?;
            b[0] as f64
        };
        if raw > maxval as f64 {
            return Err(bad("sample exceeds maxval"));
        }
        values.push(raw / maxval as f64);
    }
    Frame::new(h, w, values)
}

/// Index written next to the numbered frames of a video directory.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct VideoIndex {
    pub schema_version: u32,
    pub height: usize,
    pub width: usize,
    pub frames: Vec<String>,
}

pub const VIDEO_INDEX_FILE: &str = "index.json";
pub const SCHEMA_VERSION: u32 = 1;

/// Writes frames as `frame_0001.pgm` and so on plus `index.json`.
pub fn write_video(dir: &Path, video: &VideoSequence) -> Result<(), Error> {
    std::fs::create_dir_all(dir)?;
    let (h, w) = video.frames[0].shape();
    let mut names = Vec::with_capacity(video.len());
    for (i, frame) in video.frames.iter().enumerate() {
        let name = format!("frame_{:04}.pgm", i + 1);
        write_pgm(&dir.join(&name), frame)?;
        names.push(name);
    }
    let index =
        VideoIndex { schema_version: SCHEMA_VERSION, height: h, width: w, frames: names };
    let file = std::fs::File::create(dir.join(VIDEO_INDEX_FILE))?;
    serde_json::to_writer_pretty(file, &index)?;
    Ok(())
}

pub fn read_video(dir: &Path) -> Result<VideoSequence, Error> {
    let text = std::fs::read_to_string(dir.join(VIDEO_INDEX_FILE))?;
    let index: VideoIndex = serde_json::from_str(&text)?;
    let mut frames = Vec::with_capacity(index.frames.len());
    for name in &index.frames {
        let frame = read_pgm(&dir.join(name))?;
        if frame.shape() != (index.height, index.width) {
            return Err(Error::ShapeMismatch {
                expected: format!("({}, {})", index.height, index.width),
                got: format!("{:?}", frame.shape()),
            });
        }
        frames.push(frame);
    }
    VideoSequence::new(frames)
}

/// Serializes any report as pretty JSON.
pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), Error> {
    let file = std::fs::File::create(path)?;
    serde_json::to_writer_pretty(file, value)?;
    Ok(())
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, Error> {
    let text = std::fs::read_to_string(path)?;
    Ok(serde_json::from_str(&text)?)
}
