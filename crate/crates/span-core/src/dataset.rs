//! Episode serialization.
//!
//! A dataset directory holds `manifest.json` plus one binary file per
//! episode. Episode layout: magic "SPANDS1\0", u32 version, u32 T, u32 H,
//! u32 W, u32 C, u32 J, then T·C·H·W f32 image values, then T·J f32 joints,
//! little-endian throughout. Frames can be exported as binary PPM (P6).

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Result, SpanError};
use crate::sim::{BlockPos, Episode, EpisodeMeta, Situation};

pub const MAGIC: &[u8; 8] = b"SPANDS1\0";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub file: String,
    pub seed: u64,
    pub position: String,
    pub situation: String,
    pub frames: usize,
    pub source: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Manifest {
    pub version: u32,
    pub master_seed: u64,
    pub config: BTreeMap<String, String>,
    pub episodes: Vec<ManifestEntry>,
}

pub fn write_episode(path: &Path, ep: &Episode) -> Result<()> {
    let pstr = path.display().to_string();
    let ioerr = |e| SpanError::io(&pstr, e);
    let file = File::create(path).map_err(|e| SpanError::io(&pstr, e))?;
    let mut w = BufWriter::new(file);
    let t = ep.len() as u32;
    let h = ep.image_hw as u32;
    let c = 3u32;
    let j = ep.joints.first().map(|v| v.len()).unwrap_or(0) as u32;
    w.write_all(MAGIC).map_err(ioerr)?;
    for v in [VERSION, t, h, h, c, j] {
        w.write_all(&v.to_le_bytes()).map_err(ioerr)?;
    }
    for frame in &ep.images {
        if frame.len() != (c * h * h) as usize {
            return Err(SpanError::Contract("frame size mismatch while writing".into()));
        }
        for v in frame {
            w.write_all(&v.to_le_bytes()).map_err(ioerr)?;
        }
    }
    for joints in &ep.joints {
        if joints.len() != j as usize {
            return Err(SpanError::Contract("joint size mismatch while writing".into()));
        }
        for v in joints {
            w.write_all(&v.to_le_bytes()).map_err(ioerr)?;
        }
    }
    w.flush().map_err(ioerr)?;
    Ok(())
}

pub fn read_episode(path: &Path, meta: EpisodeMeta) -> Result<Episode> {
    let pstr = path.display().to_string();
    let file = File::open(path).map_err(|e| SpanError::io(&pstr, e))?;
    let mut r = BufReader::new(file);

    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)
        .map_err(|_| SpanError::data(&pstr, "truncated magic"))?;
    if &magic != MAGIC {
        return Err(SpanError::data(&pstr, "bad magic, not a SPANDS1 episode"));
    }
    let mut u32buf = [0u8; 4];
    let mut read_u32 = |r: &mut BufReader<File>, what: &str| -> Result<u32> {
        r.read_exact(&mut u32buf)
            .map_err(|_| SpanError::data(&pstr, format!("truncated {what}")))?;
        Ok(u32::from_le_bytes(u32buf))
    };
    let version = read_u32(&mut r, "version")?;
    if version != VERSION {
        return Err(SpanError::data(&pstr, format!("unsupported version {version}")));
    }
    let t = read_u32(&mut r, "frame count")? as usize;
    let h = read_u32(&mut r, "height")? as usize;
    let w = read_u32(&mut r, "width")? as usize;
    let c = read_u32(&mut r, "channels")? as usize;
    let j = read_u32(&mut r, "joint dim")? as usize;
    if h != w || c != 3 {
        return Err(SpanError::data(
            &pstr,
            format!("unsupported geometry {c}×{h}×{w}"),
        ));
    }

    let mut buf = Vec::new();
    r.read_to_end(&mut buf)
        .map_err(|e| SpanError::io(&pstr, e))?;
    let expect = (t * c * h * w + t * j) * 4;
    if buf.len() != expect {
        return Err(SpanError::data(
            &pstr,
            format!("payload is {} bytes, expected {expect}", buf.len()),
        ));
    }
    let mut floats = buf
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]));
    let mut images = Vec::with_capacity(t);
    for _ in 0..t {
        images.push((0..c * h * w).map(|_| floats.next().unwrap()).collect());
    }
    let mut joints = Vec::with_capacity(t);
    for _ in 0..t {
        joints.push((0..j).map(|_| floats.next().unwrap()).collect());
    }
    Ok(Episode {
        images,
        joints,
        image_hw: h,
        meta,
    })
}

/// Write a dataset directory: per-episode binaries plus `manifest.json`.
pub fn write_dataset(
    dir: &Path,
    episodes: &[Episode],
    config_echo: BTreeMap<String, String>,
    master_seed: u64,
) -> Result<Manifest> {
    fs::create_dir_all(dir).map_err(|e| SpanError::io(dir.display().to_string(), e))?;
    let mut entries = Vec::with_capacity(episodes.len());
    for (i, ep) in episodes.iter().enumerate() {
        let file = format!("ep{i:03}.bin");
        write_episode(&dir.join(&file), ep)?;
        entries.push(ManifestEntry {
            file,
            seed: ep.meta.seed,
            position: ep.meta.block_pos.label().to_string(),
            situation: ep.meta.situation.tag().to_string(),
            frames: ep.len(),
            source: ep.meta.source.clone(),
        });
    }
    let manifest = Manifest {
        version: VERSION,
        master_seed,
        config: config_echo,
        episodes: entries,
    };
    let path = dir.join("manifest.json");
    let text = serde_json::to_string_pretty(&manifest)
        .map_err(|e| SpanError::data(path.display().to_string(), e.to_string()))?;
    fs::write(&path, text.as_bytes()).map_err(|e| SpanError::io(path.display().to_string(), e))?;
    Ok(manifest)
}

pub fn read_manifest(dir: &Path) -> Result<Manifest> {
    let path = dir.join("manifest.json");
    let pstr = path.display().to_string();
    let text = fs::read_to_string(&path).map_err(|e| SpanError::io(&pstr, e))?;
    serde_json::from_str(&text).map_err(|e| SpanError::data(&pstr, e.to_string()))
}

/// Load every episode listed by a dataset's manifest. An empty manifest is
/// an empty dataset, not an error.
pub fn load_dataset(dir: &Path) -> Result<(Vec<Episode>, Manifest)> {
    let manifest = read_manifest(dir)?;
    let mut episodes = Vec::with_capacity(manifest.episodes.len());
    for entry in &manifest.episodes {
        let path = dir.join(&entry.file);
        if !path.exists() {
            return Err(SpanError::data(
                path.display().to_string(),
                "listed in manifest but missing on disk",
            ));
        }
        let meta = EpisodeMeta {
            seed: entry.seed,
            block_pos: BlockPos::parse(&entry.position)?,
            situation: Situation::parse(&entry.situation)?,
            source: entry.source.clone(),
        };
        let ep = read_episode(&path, meta)?;
        if ep.len() != entry.frames {
            return Err(SpanError::data(
                path.display().to_string(),
                format!("manifest says {} frames, file has {}", entry.frames, ep.len()),
            ));
        }
        episodes.push(ep);
    }
    Ok((episodes, manifest))
}

// ── PPM (P6) ────────────────────────────────────────────────────────────

/// Convert a [3, H, W] image in [0, 1] to interleaved 8-bit RGB.
pub fn to_rgb8(data: &[f64], h: usize, w: usize) -> Vec<u8> {
    let mut out = vec![0u8; h * w * 3];
    for r in 0..h {
        for c in 0..w {
            for ch in 0..3 {
                let v = data[ch * h * w + r * w + c];
                out[(r * w + c) * 3 + ch] = (v.clamp(0.0, 1.0) * 255.0).round() as u8;
            }
        }
    }
    out
}

pub fn write_ppm(path: &Path, rgb: &[u8], h: usize, w: usize) -> Result<()> {
    let pstr = path.display().to_string();
    if rgb.len() != h * w * 3 {
        return Err(SpanError::Contract(format!(
            "rgb buffer has {} bytes for {h}×{w}",
            rgb.len()
        )));
    }
    let mut out = Vec::with_capacity(rgb.len() + 32);
    out.extend_from_slice(format!("P6\n{w} {h}\n255\n").as_bytes());
    out.extend_from_slice(rgb);
    fs::write(path, out).map_err(|e| SpanError::io(&pstr, e))
}

/// Parse a binary PPM written by [`write_ppm`]; returns (h, w, rgb).
pub fn read_ppm(path: &Path) -> Result<(usize, usize, Vec<u8>)> {
    let pstr = path.display().to_string();
    let bytes = fs::read(path).map_err(|e| SpanError::io(&pstr, e))?;
    let mut parts = bytes.splitn(4, |&b| b == b'\n');
    let magic = parts.next().unwrap_or(&[]);
    if magic != b"P6" {
        return Err(SpanError::data(&pstr, "not a P6 PPM"));
    }
    let dims = parts.next().unwrap_or(&[]);
    let dims_text = String::from_utf8_lossy(dims);
    let mut it = dims_text.split_whitespace();
    let w: usize = it
        .next()
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| SpanError::data(&pstr, "bad width"))?;
    let h: usize = it
        .next()
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| SpanError::data(&pstr, "bad height"))?;
    let maxval = parts.next().unwrap_or(&[]);
    if maxval != b"255" {
        return Err(SpanError::data(&pstr, "expected maxval 255"));
    }
    let rgb = parts.next().unwrap_or(&[]).to_vec();
    if rgb.len() != h * w * 3 {
        return Err(SpanError::data(
            &pstr,
            format!("payload {} bytes for {h}×{w}", rgb.len()),
        ));
    }
    Ok((h, w, rgb))
}

/// Dataset root marker + path of an episode file.
pub fn episode_paths(dir: &Path, manifest: &Manifest) -> Vec<PathBuf> {
    manifest.episodes.iter().map(|e| dir.join(&e.file)).collect()
}
