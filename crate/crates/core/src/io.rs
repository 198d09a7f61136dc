//! File formats: PVOL1 volumes, 16-bit binary PGM images and the
//! `id,class,path` manifest CSV.

use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::label::ClassLabel;
use crate::phantom::{ManifestRow, Volume3D};
use crate::pipeline::Image2D;

pub const MANIFEST_HEADER: &str = "id,class,path";
pub const MANIFEST_FILE: &str = "manifest.csv";

/// Writes via a sibling temp file and rename, so readers never see a
/// partial file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

pub fn encode_pvol(v: &Volume3D) -> Vec<u8> {
    let [z, y, x] = v.dims();
    let [sz, sy, sx] = v.spacing_mm();
    let header = format!("PVOL1\ndims {z} {y} {x}\nspacing {sz} {sy} {sx}\ndtype f32le\n\n");
    let mut out = Vec::with_capacity(header.len() + 4 * v.voxels().len());
    out.extend_from_slice(header.as_bytes());
    v.voxels().iter().for_each(|f| out.extend_from_slice(&f.to_le_bytes()));
    out
}

pub fn decode_pvol(bytes: &[u8], path: &Path) -> Result<Volume3D> {
    let bad = |msg: &str| Error::format("PVOL1", path, msg);
    let mut lines = Vec::new();
    let mut pos = 0;
    while lines.len() < 5 {
        let end = bytes[pos..]
            .iter()
            .position(|&b| b == b'\n')
            .ok_or_else(|| bad("truncated header"))?;
        let line = std::str::from_utf8(&bytes[pos..pos + end]).map_err(|_| bad("header is not text"))?;
        lines.push(line);
        pos += end + 1;
    }
    if lines[0] != "PVOL1" {
        return Err(bad("missing PVOL1 magic"));
    }
    fn fields<'a>(line: &'a str, key: &str) -> Option<Vec<&'a str>> {
        let rest = line.strip_prefix(key)?.strip_prefix(' ')?;
        let f: Vec<&str> = rest.split(' ').collect();
        (f.len() == 3).then_some(f)
    }
    let dims = fields(lines[1], "dims")
        .and_then(|f| f.iter().map(|s| s.parse::<usize>().ok()).collect::<Option<Vec<_>>>())
        .ok_or_else(|| bad("bad dims line"))?;
    let spacing = fields(lines[2], "spacing")
        .and_then(|f| f.iter().map(|s| s.parse::<f64>().ok()).collect::<Option<Vec<_>>>())
        .ok_or_else(|| bad("bad spacing line"))?;
    if lines[3] != "dtype f32le" {
        return Err(bad("unsupported dtype"));
    }
    if !lines[4].is_empty() {
        return Err(bad("expected blank line after header"));
    }
    let body = &bytes[pos..];
    let count = dims.iter().product::<usize>();
    if body.len() != 4 * count {
        return Err(bad(&format!("expected {} data bytes, found {}", 4 * count, body.len())));
    }
    let voxels = body
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    Volume3D::new([dims[0], dims[1], dims[2]], [spacing[0], spacing[1], spacing[2]], voxels)
        .map_err(|e| bad(&e.to_string()))
}

pub fn write_pvol(path: &Path, v: &Volume3D) -> Result<()> {
    write_atomic(path, &encode_pvol(v))
}

pub fn read_pvol(path: &Path) -> Result<Volume3D> {
    decode_pvol(&read_bytes(path)?, path)
}

/// P5, maxval 65535, big-endian samples, `round(clamp(v, 0, 1) * 65535)`.
pub fn encode_pgm16(img: &Image2D) -> Vec<u8> {
    let header = format!("P5\n{} {}\n65535\n", img.width, img.height);
    let mut out = Vec::with_capacity(header.len() + 2 * img.pixels.len());
    out.extend_from_slice(header.as_bytes());
    for &v in &img.pixels {
        let q = (v.clamp(0.0, 1.0) as f64 * 65535.0).round() as u16;
        out.extend_from_slice(&q.to_be_bytes());
    }
    out
}

pub fn decode_pgm16(bytes: &[u8], path: &Path) -> Result<Image2D> {
    let bad = |msg: &str| Error::format("PGM", path, msg);
    // four whitespace-separated tokens, then exactly one whitespace byte
    let mut tokens = Vec::new();
    let mut pos = 0;
    while tokens.len() < 4 {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if pos < bytes.len() && bytes[pos] == b'#' {
            while pos < bytes.len() && bytes[pos] != b'\n' {
                pos += 1;
            }
            continue;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(bad("truncated header"));
        }
        tokens.push(std::str::from_utf8(&bytes[start..pos]).map_err(|_| bad("header is not text"))?);
    }
    pos += 1;
    if tokens[0] != "P5" {
        return Err(bad("not a binary PGM (P5)"));
    }
    let num = |s: &str| s.parse::<usize>().map_err(|_| bad("bad header number"));
    let (width, height, maxval) = (num(tokens[1])?, num(tokens[2])?, num(tokens[3])?);
    if maxval != 65535 {
        return Err(bad("expected maxval 65535"));
    }
    let body = bytes.get(pos..).unwrap_or_default();
    if body.len() != 2 * width * height {
        return Err(bad(&format!(
            "expected {} data bytes, found {}",
            2 * width * height,
            body.len()
        )));
    }
    let pixels = body
        .chunks_exact(2)
        .map(|c| u16::from_be_bytes([c[0], c[1]]) as f32 / 65535.0)
        .collect();
    Image2D::new(height, width, pixels).map_err(|e| bad(&e.to_string()))
}

pub fn write_pgm16(path: &Path, img: &Image2D) -> Result<()> {
    write_atomic(path, &encode_pgm16(img))
}

pub fn read_pgm16(path: &Path) -> Result<Image2D> {
    decode_pgm16(&read_bytes(path)?, path)
}

/// Concatenates equal-height images left to right.
pub fn hstack(images: &[Image2D]) -> Result<Image2D> {
    let first = images.first().ok_or_else(|| Error::Shape("no images to stack".into()))?;
    let height = first.height;
    if images.iter().any(|i| i.height != height) {
        return Err(Error::Shape("strip images differ in height".into()));
    }
    let width: usize = images.iter().map(|i| i.width).sum();
    let mut pixels = Vec::with_capacity(height * width);
    for r in 0..height {
        for img in images {
            pixels.extend_from_slice(&img.pixels[r * img.width..(r + 1) * img.width]);
        }
    }
    Image2D::new(height, width, pixels)
}

pub fn encode_manifest(rows: &[ManifestRow]) -> String {
    let mut out = format!("{MANIFEST_HEADER}\n");
    for r in rows {
        out.push_str(&format!("{},{},{}\n", r.id, r.label.code(), r.path));
    }
    out
}

pub fn decode_manifest(text: &str, path: &Path) -> Result<Vec<ManifestRow>> {
    let bad = |msg: String| Error::format("manifest", path, msg);
    let mut lines = text.lines();
    if lines.next().map(str::trim_end) != Some(MANIFEST_HEADER) {
        return Err(bad(format!("expected header `{MANIFEST_HEADER}`")));
    }
    lines
        .filter(|l| !l.trim().is_empty())
        .map(|l| {
            let f: Vec<&str> = l.trim_end().splitn(3, ',').collect();
            if f.len() != 3 {
                return Err(bad(format!("bad row `{l}`")));
            }
            let code: i64 = f[1].parse().map_err(|_| bad(format!("bad class code in `{l}`")))?;
            Ok(ManifestRow {
                id: f[0].to_string(),
                label: ClassLabel::from_code(code)?,
                path: f[2].to_string(),
            })
        })
        .collect()
}

pub fn write_manifest(path: &Path, rows: &[ManifestRow]) -> Result<()> {
    write_atomic(path, encode_manifest(rows).as_bytes())
}

pub fn read_manifest(path: &Path) -> Result<Vec<ManifestRow>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    decode_manifest(&text, path)
}

/// Loads every image listed in `dir/manifest.csv`.
pub fn read_mip_dir(dir: &Path) -> Result<Vec<crate::pipeline::MipImage>> {
    let rows = read_manifest(&dir.join(MANIFEST_FILE))?;
    rows.into_iter()
        .map(|r| {
            Ok(crate::pipeline::MipImage {
                image: read_pgm16(&dir.join(&r.path))?,
                label: r.label,
                source_id: r.id,
            })
        })
        .collect()
}
