//! On-disk formats. Every artifact starts with a magic string that is
//! checked on load.
//!
//! * images, label maps and certainty masks: binary PGM (`P5`), 8-bit
//! * probability maps: `PMAP1 <width> <height> <C>\n` + f32 LE, row-major, class-fastest
//! * uncertainty maps: `UMAP1 <width> <height>\n` + f32 LE, row-major
//!
//! Writes go to a temporary sibling file that is renamed into place.

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::image::{LabelMap, LargeImage};
use crate::pmap::ProbabilityMap;
use crate::uncertainty::{CertaintyMask, UncertaintyMap};

pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let file_name = path
        .file_name()
        .ok_or_else(|| Error::corrupt(path, "not a file path"))?
        .to_string_lossy();
    let tmp = path.with_file_name(format!(".{file_name}.tmp{}", std::process::id()));
    {
        let mut f = fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
        f.write_all(bytes).map_err(|e| Error::io(&tmp, e))?;
        f.sync_all().map_err(|e| Error::io(&tmp, e))?;
    }
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

/// Splits `data` after `n` whitespace-separated header tokens (and the single
/// whitespace byte that terminates the last one). `#` comments are skipped.
fn header_tokens<'a>(data: &'a [u8], n: usize, path: &Path) -> Result<(Vec<&'a str>, &'a [u8])> {
    let mut tokens = Vec::with_capacity(n);
    let mut i = 0;
    while tokens.len() < n {
        while i < data.len() && data[i].is_ascii_whitespace() {
            i += 1;
        }
        if i < data.len() && data[i] == b'#' {
            while i < data.len() && data[i] != b'\n' {
                i += 1;
            }
            continue;
        }
        let start = i;
        while i < data.len() && !data[i].is_ascii_whitespace() {
            i += 1;
        }
        if start == i {
            return Err(Error::corrupt(path, "truncated header"));
        }
        let tok = std::str::from_utf8(&data[start..i]).map_err(|_| Error::corrupt(path, "non-ASCII header"))?;
        tokens.push(tok);
    }
    if i >= data.len() || !data[i].is_ascii_whitespace() {
        return Err(Error::corrupt(path, "header not terminated"));
    }
    Ok((tokens, &data[i + 1..]))
}

fn parse_dim(tok: &str, path: &Path) -> Result<usize> {
    tok.parse::<usize>()
        .ok()
        .filter(|&v| v > 0)
        .ok_or_else(|| Error::corrupt(path, format!("bad dimension {tok:?}")))
}

pub fn encode_pgm(width: usize, height: usize, data: &[u8]) -> Vec<u8> {
    let mut out = format!("P5\n{width} {height}\n255\n").into_bytes();
    out.extend_from_slice(data);
    out
}

/// Decodes an 8-bit binary PGM into `(width, height, samples)`.
pub fn decode_pgm(bytes: &[u8], path: &Path) -> Result<(usize, usize, Vec<u8>)> {
    if !bytes.starts_with(b"P5") {
        return Err(Error::BadMagic {
            path: path.into(),
            expected: "P5",
        });
    }
    let (tok, body) = header_tokens(bytes, 4, path)?;
    let w = parse_dim(tok[1], path)?;
    let h = parse_dim(tok[2], path)?;
    let maxval: u32 = tok[3].parse().map_err(|_| Error::corrupt(path, "bad maxval"))?;
    if maxval == 0 || maxval > 255 {
        return Err(Error::corrupt(path, format!("unsupported maxval {maxval}")));
    }
    if body.len() < w * h {
        return Err(Error::corrupt(path, "truncated pixel data"));
    }
    Ok((w, h, body[..w * h].to_vec()))
}

pub fn write_pgm(path: &Path, width: usize, height: usize, data: &[u8]) -> Result<()> {
    write_atomic(path, &encode_pgm(width, height, data))
}

pub fn read_pgm(path: &Path) -> Result<(usize, usize, Vec<u8>)> {
    decode_pgm(&read_bytes(path)?, path)
}

pub fn write_image(path: &Path, img: &LargeImage) -> Result<()> {
    write_pgm(path, img.width(), img.height(), &img.to_u8())
}

/// Loads a PGM image, normalizing intensities to `[0, 1]`.
pub fn read_image(path: &Path) -> Result<LargeImage> {
    let (w, h, data) = read_pgm(path)?;
    LargeImage::from_u8(w, h, &data)
}

pub fn write_labels(path: &Path, labels: &LabelMap) -> Result<()> {
    write_pgm(path, labels.width(), labels.height(), labels.labels())
}

pub fn read_labels(path: &Path, num_classes: usize) -> Result<LabelMap> {
    let (w, h, data) = read_pgm(path)?;
    LabelMap::with_classes(w, h, data, num_classes).map_err(|e| Error::corrupt(path, e.to_string()))
}

pub fn write_mask(path: &Path, mask: &CertaintyMask) -> Result<()> {
    write_pgm(path, mask.width(), mask.height(), &mask.to_u8())
}

pub fn read_mask(path: &Path) -> Result<CertaintyMask> {
    let (w, h, data) = read_pgm(path)?;
    CertaintyMask::from_u8(w, h, &data).map_err(|e| Error::corrupt(path, e.to_string()))
}

fn f32_bytes(values: &[f32]) -> Vec<u8> {
    values.iter().flat_map(|v| v.to_le_bytes()).collect()
}

fn f32_values(body: &[u8], n: usize, path: &Path) -> Result<Vec<f32>> {
    if body.len() != n * 4 {
        return Err(Error::corrupt(path, format!("expected {} payload bytes, found {}", n * 4, body.len())));
    }
    Ok(body
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect())
}

fn check_magic(bytes: &[u8], magic: &'static str, path: &Path) -> Result<()> {
    let ok = bytes.starts_with(magic.as_bytes())
        && bytes.get(magic.len()).is_some_and(|b| b.is_ascii_whitespace());
    if ok {
        Ok(())
    } else {
        Err(Error::BadMagic {
            path: path.into(),
            expected: magic,
        })
    }
}

pub fn encode_pmap(pm: &ProbabilityMap) -> Vec<u8> {
    let mut out = format!("PMAP1 {} {} {}\n", pm.width(), pm.height(), pm.classes()).into_bytes();
    out.extend(f32_bytes(pm.probs()));
    out
}

pub fn decode_pmap(bytes: &[u8], path: &Path) -> Result<ProbabilityMap> {
    check_magic(bytes, "PMAP1", path)?;
    let (tok, body) = header_tokens(bytes, 4, path)?;
    let (w, h, c) = (parse_dim(tok[1], path)?, parse_dim(tok[2], path)?, parse_dim(tok[3], path)?);
    let probs = f32_values(body, w * h * c, path)?;
    ProbabilityMap::new(w, h, c, probs, None).map_err(|e| Error::corrupt(path, e.to_string()))
}

pub fn write_pmap(path: &Path, pm: &ProbabilityMap) -> Result<()> {
    write_atomic(path, &encode_pmap(pm))
}

pub fn read_pmap(path: &Path) -> Result<ProbabilityMap> {
    decode_pmap(&read_bytes(path)?, path)
}

pub fn encode_umap(u: &UncertaintyMap) -> Vec<u8> {
    let mut out = format!("UMAP1 {} {}\n", u.width(), u.height()).into_bytes();
    out.extend(f32_bytes(u.values()));
    out
}

pub fn decode_umap(bytes: &[u8], path: &Path) -> Result<UncertaintyMap> {
    check_magic(bytes, "UMAP1", path)?;
    let (tok, body) = header_tokens(bytes, 3, path)?;
    let (w, h) = (parse_dim(tok[1], path)?, parse_dim(tok[2], path)?);
    let values = f32_values(body, w * h, path)?;
    UncertaintyMap::new(w, h, values).map_err(|e| Error::corrupt(path, e.to_string()))
}

pub fn write_umap(path: &Path, u: &UncertaintyMap) -> Result<()> {
    write_atomic(path, &encode_umap(u))
}

pub fn read_umap(path: &Path) -> Result<UncertaintyMap> {
    decode_umap(&read_bytes(path)?, path)
}

/// Reads a text artifact and checks that its first token is `magic`.
pub fn read_text(path: &Path, magic: &'static str) -> Result<String> {
    let bytes = read_bytes(path)?;
    check_magic(&bytes, magic, path)?;
    String::from_utf8(bytes).map_err(|_| Error::corrupt(path, "not UTF-8"))
}
