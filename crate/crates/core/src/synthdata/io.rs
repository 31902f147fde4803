//! On-disk dataset layout.
//!
//! ```text
//! <dir>/<split>/manifest.tsv       id \t category_id \t intrinsic_speed \t relative_path
//! <dir>/<split>/videos/<id>.trkv   "TRKV", u32 version, u32 C, T, H, W, C*T*H*W bytes
//! ```
//! All integers are little-endian.

use std::fmt;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use super::generate::{Dataset, FrameVolume, MotionCategory, SyntheticVideo};
use crate::error::{Error, Result};

pub const VIDEO_MAGIC: &[u8; 4] = b"TRKV";
pub const VIDEO_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.tsv";
const HEADER_LEN: usize = 4 + 4 + 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

impl Split {
    pub fn dir_name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.dir_name())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ManifestRecord {
    pub id: u32,
    pub category: MotionCategory,
    pub intrinsic_speed: f64,
    pub path: PathBuf,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Manifest {
    pub split: Split,
    pub records: Vec<ManifestRecord>,
}

impl Manifest {
    pub fn to_text(&self) -> String {
        self.records
            .iter()
            .map(|r| {
                format!(
                    "{}\t{}\t{}\t{}\n",
                    r.id,
                    r.category.id(),
                    r.intrinsic_speed,
                    r.path.display()
                )
            })
            .collect()
    }

    pub fn parse(text: &str, split: Split, origin: &Path) -> Result<Self> {
        let mut records = Vec::new();
        let mut seen = std::collections::HashSet::new();
        for (n, line) in text.lines().enumerate() {
            if line.is_empty() {
                continue;
            }
            let bad = |msg: &str| Error::format(origin, format!("manifest line {}: {msg}", n + 1));
            let fields: Vec<&str> = line.split('\t').collect();
            if fields.len() != 4 {
                return Err(bad("expected 4 tab-separated fields"));
            }
            let id: u32 = fields[0].parse().map_err(|_| bad("bad id"))?;
            let category = fields[1]
                .parse::<usize>()
                .ok()
                .and_then(MotionCategory::from_id)
                .ok_or_else(|| bad("bad category id"))?;
            let intrinsic_speed: f64 = fields[2].parse().map_err(|_| bad("bad intrinsic speed"))?;
            if !seen.insert(id) {
                return Err(bad("duplicate id"));
            }
            records.push(ManifestRecord {
                id,
                category,
                intrinsic_speed,
                path: PathBuf::from(fields[3]),
            });
        }
        Ok(Self { split, records })
    }
}

pub fn encode_video(frames: &FrameVolume) -> Vec<u8> {
    let mut buf = Vec::with_capacity(HEADER_LEN + frames.data.len());
    buf.extend_from_slice(VIDEO_MAGIC);
    buf.extend_from_slice(&VIDEO_VERSION.to_le_bytes());
    for d in frames.dims {
        buf.extend_from_slice(&(d as u32).to_le_bytes());
    }
    buf.extend_from_slice(&frames.data);
    buf
}

pub fn decode_video(bytes: &[u8], origin: &Path) -> Result<FrameVolume> {
    if bytes.len() < HEADER_LEN {
        return Err(Error::format(origin, "truncated header"));
    }
    if &bytes[..4] != VIDEO_MAGIC {
        return Err(Error::format(origin, "bad magic, expected TRKV"));
    }
    let word = |i: usize| u32::from_le_bytes(bytes[4 + 4 * i..8 + 4 * i].try_into().unwrap());
    let version = word(0);
    if version != VIDEO_VERSION {
        return Err(Error::format(
            origin,
            format!("unsupported version {version}"),
        ));
    }
    let dims = [
        word(1) as usize,
        word(2) as usize,
        word(3) as usize,
        word(4) as usize,
    ];
    if dims.contains(&0) {
        return Err(Error::format(origin, "zero dimension in header"));
    }
    let n = dims
        .iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .ok_or_else(|| Error::format(origin, "dimensions overflow"))?;
    let body = &bytes[HEADER_LEN..];
    if body.len() < n {
        return Err(Error::format(
            origin,
            format!("truncated body: {} of {n} bytes", body.len()),
        ));
    }
    if body.len() > n {
        return Err(Error::format(origin, "trailing bytes after frame data"));
    }
    Ok(FrameVolume::new(dims, body.to_vec()))
}

pub fn write_video(path: &Path, frames: &FrameVolume) -> Result<()> {
    fs::write(path, encode_video(frames)).map_err(|e| Error::io(path, e))
}

pub fn read_video(path: &Path) -> Result<FrameVolume> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_video(&bytes, path)
}

/// Writes one split under `dir/<split>/` and returns its manifest.
pub fn write_split(videos: &[SyntheticVideo], dir: &Path, split: Split) -> Result<Manifest> {
    let root = dir.join(split.dir_name());
    let video_dir = root.join("videos");
    fs::create_dir_all(&video_dir).map_err(|e| Error::io(&video_dir, e))?;
    let mut records = Vec::with_capacity(videos.len());
    for v in videos {
        let rel = PathBuf::from("videos").join(format!("{:06}.trkv", v.id));
        write_video(&root.join(&rel), &v.frames)?;
        records.push(ManifestRecord {
            id: v.id,
            category: v.category,
            intrinsic_speed: v.intrinsic_speed,
            path: rel,
        });
    }
    let manifest = Manifest { split, records };
    let path = root.join(MANIFEST_FILE);
    let file = fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
    let mut w = BufWriter::new(file);
    w.write_all(manifest.to_text().as_bytes())
        .and_then(|_| w.flush())
        .map_err(|e| Error::io(&path, e))?;
    Ok(manifest)
}

pub fn read_split(dir: &Path, split: Split) -> Result<Vec<SyntheticVideo>> {
    let root = dir.join(split.dir_name());
    let path = root.join(MANIFEST_FILE);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let manifest = Manifest::parse(&text, split, &path)?;
    manifest
        .records
        .into_iter()
        .map(|r| {
            Ok(SyntheticVideo {
                id: r.id,
                category: r.category,
                intrinsic_speed: r.intrinsic_speed,
                sprite: None,
                frames: read_video(&root.join(&r.path))?,
            })
        })
        .collect()
}

pub fn write_dataset(ds: &Dataset, dir: &Path) -> Result<(Manifest, Manifest)> {
    Ok((
        write_split(&ds.train, dir, Split::Train)?,
        write_split(&ds.test, dir, Split::Test)?,
    ))
}

pub fn read_dataset(dir: &Path) -> Result<Dataset> {
    Ok(Dataset {
        train: read_split(dir, Split::Train)?,
        test: read_split(dir, Split::Test)?,
    })
}
