//! Little-endian binary containers for pyramids, codebooks and parameter blocks.
//!
//! Pyramid (`VARP`, version 1):
//!
//! ```text
//! magic "VARP" | u32 version | u32 K | K x (u32 h, u32 w) | u32 D | u32 V | u8 mode
//! | u32 L | for each of the L grids: h*w u32 indices (vq) or h*w*D f64 (identity)
//! ```
//!
//! Codebook (`VARC`, version 1): `magic | u32 version | u32 V | u32 D | u8 mode | V*D f64`.
//!
//! Parameter blocks (`VARM`, version 1): `magic | u32 version | u32 tag length | tag
//! bytes | u32 block count | per block: u32 length, length x f64`.

use std::path::Path;

use crate::codec::{Codebook, QuantizerMode, TokenGrid, TokenPayload, TokenPyramid};
use crate::error::{Error, Result};
use crate::grid::ScaleSchedule;

const VERSION: u32 = 1;

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn new(bytes: &'a [u8]) -> Self {
        Self { bytes, pos: 0 }
    }

    fn take(&mut self, n: usize) -> std::result::Result<&'a [u8], String> {
        let end = self.pos.checked_add(n).ok_or("length overflow")?;
        let s = self
            .bytes
            .get(self.pos..end)
            .ok_or_else(|| format!("truncated at byte {}", self.pos))?;
        self.pos = end;
        Ok(s)
    }

    fn magic(&mut self, want: &[u8; 4]) -> std::result::Result<(), String> {
        let got = self.take(4)?;
        if got != want {
            return Err(format!(
                "bad magic {:?}, expected {:?}",
                String::from_utf8_lossy(got),
                String::from_utf8_lossy(want)
            ));
        }
        let v = self.u32()?;
        if v != VERSION {
            return Err(format!("unsupported version {v}"));
        }
        Ok(())
    }

    fn u8(&mut self) -> std::result::Result<u8, String> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> std::result::Result<u32, String> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> std::result::Result<f64, String> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64s(&mut self, n: usize) -> std::result::Result<Vec<f64>, String> {
        (0..n).map(|_| self.f64()).collect()
    }

    fn finish(&self) -> std::result::Result<(), String> {
        if self.pos != self.bytes.len() {
            return Err(format!("{} trailing bytes", self.bytes.len() - self.pos));
        }
        Ok(())
    }
}

fn put_u32(out: &mut Vec<u8>, v: usize) {
    out.extend_from_slice(&(v as u32).to_le_bytes());
}

fn put_f64s(out: &mut Vec<u8>, vs: &[f64]) {
    for v in vs {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

fn mode_byte(mode: QuantizerMode) -> u8 {
    match mode {
        QuantizerMode::Vq => 0,
        QuantizerMode::Identity => 1,
    }
}

fn mode_from(b: u8) -> std::result::Result<QuantizerMode, String> {
    match b {
        0 => Ok(QuantizerMode::Vq),
        1 => Ok(QuantizerMode::Identity),
        _ => Err(format!("unknown quantizer mode {b}")),
    }
}

pub fn encode_pyramid(p: &TokenPyramid, codebook: &Codebook) -> Vec<u8> {
    let mut out = b"VARP".to_vec();
    put_u32(&mut out, VERSION as usize);
    put_u32(&mut out, p.schedule.len());
    for &(h, w) in p.schedule.scales() {
        put_u32(&mut out, h);
        put_u32(&mut out, w);
    }
    put_u32(&mut out, codebook.dim());
    put_u32(&mut out, codebook.len());
    out.push(mode_byte(codebook.mode()));
    put_u32(&mut out, p.len());
    for g in &p.grids {
        match &g.payload {
            TokenPayload::Indices(ix) => {
                for &i in ix {
                    out.extend_from_slice(&i.to_le_bytes());
                }
            }
            TokenPayload::Vectors(v) => put_f64s(&mut out, v),
        }
    }
    out
}

/// Decodes a pyramid; returns it with the `(D, V, mode)` recorded in the header.
pub fn decode_pyramid(
    bytes: &[u8],
) -> std::result::Result<(TokenPyramid, usize, usize, QuantizerMode), String> {
    let mut r = Reader::new(bytes);
    r.magic(b"VARP")?;
    let k = r.u32()? as usize;
    let scales = (0..k)
        .map(|_| Ok((r.u32()? as usize, r.u32()? as usize)))
        .collect::<std::result::Result<Vec<_>, String>>()?;
    let schedule = ScaleSchedule::new(scales).map_err(|e| e.to_string())?;
    let d = r.u32()? as usize;
    let v = r.u32()? as usize;
    let mode = mode_from(r.u8()?)?;
    let l = r.u32()? as usize;
    if l > k {
        return Err(format!("{l} grids exceed {k} scales"));
    }
    let mut grids = Vec::with_capacity(l);
    for idx in 1..=l {
        let (h, w) = schedule.scale(idx);
        let payload = match mode {
            QuantizerMode::Vq => {
                let ix = (0..h * w).map(|_| r.u32()).collect::<std::result::Result<Vec<_>, _>>()?;
                if let Some(bad) = ix.iter().find(|&&i| i as usize >= v) {
                    return Err(format!("token {bad} outside codebook of {v} rows"));
                }
                TokenPayload::Indices(ix)
            }
            QuantizerMode::Identity => TokenPayload::Vectors(r.f64s(h * w * d)?),
        };
        grids.push(TokenGrid {
            scale_index: idx,
            dims: (h, w),
            payload,
        });
    }
    r.finish()?;
    let p = TokenPyramid::new(schedule, grids).map_err(|e| e.to_string())?;
    Ok((p, d, v, mode))
}

pub fn encode_codebook(cb: &Codebook) -> Vec<u8> {
    let mut out = b"VARC".to_vec();
    put_u32(&mut out, VERSION as usize);
    put_u32(&mut out, cb.len());
    put_u32(&mut out, cb.dim());
    out.push(mode_byte(cb.mode()));
    put_f64s(&mut out, cb.vectors());
    out
}

pub fn decode_codebook(bytes: &[u8]) -> std::result::Result<Codebook, String> {
    let mut r = Reader::new(bytes);
    r.magic(b"VARC")?;
    let v = r.u32()? as usize;
    let d = r.u32()? as usize;
    let mode = mode_from(r.u8()?)?;
    let cb = match mode {
        QuantizerMode::Identity => Codebook::identity(d.max(1)),
        QuantizerMode::Vq => Codebook::vq(d, r.f64s(v * d)?).map_err(|e| e.to_string())?,
    };
    r.finish()?;
    Ok(cb)
}

pub fn encode_blocks(tag: &str, blocks: &[&[f64]]) -> Vec<u8> {
    let mut out = b"VARM".to_vec();
    put_u32(&mut out, VERSION as usize);
    put_u32(&mut out, tag.len());
    out.extend_from_slice(tag.as_bytes());
    put_u32(&mut out, blocks.len());
    for b in blocks {
        put_u32(&mut out, b.len());
        put_f64s(&mut out, b);
    }
    out
}

pub fn decode_blocks(bytes: &[u8], want_tag: &str) -> std::result::Result<Vec<Vec<f64>>, String> {
    let mut r = Reader::new(bytes);
    r.magic(b"VARM")?;
    let n = r.u32()? as usize;
    let tag = String::from_utf8_lossy(r.take(n)?).into_owned();
    if tag != want_tag {
        return Err(format!("parameter file tagged {tag:?}, expected {want_tag:?}"));
    }
    let count = r.u32()? as usize;
    let blocks = (0..count)
        .map(|_| {
            let len = r.u32()? as usize;
            r.f64s(len)
        })
        .collect::<std::result::Result<Vec<_>, String>>()?;
    r.finish()?;
    Ok(blocks)
}

pub(crate) fn read_file(path: &Path, hint: &str) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| {
        if e.kind() == std::io::ErrorKind::NotFound {
            Error::MissingInput {
                path: path.to_path_buf(),
                hint: hint.to_string(),
            }
        } else {
            Error::io(path, e)
        }
    })
}

pub(crate) fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn save_pyramid(path: &Path, p: &TokenPyramid, codebook: &Codebook) -> Result<()> {
    write_file(path, &encode_pyramid(p, codebook))
}

pub fn load_pyramid(path: &Path) -> Result<TokenPyramid> {
    let bytes = read_file(path, "run `vardiv build-model` to write teacher pyramids")?;
    decode_pyramid(&bytes)
        .map(|(p, ..)| p)
        .map_err(|reason| Error::Corrupt {
            path: path.to_path_buf(),
            reason,
        })
}

pub fn save_codebook(path: &Path, cb: &Codebook) -> Result<()> {
    write_file(path, &encode_codebook(cb))
}

pub fn load_codebook(path: &Path) -> Result<Codebook> {
    let bytes = read_file(path, "run `vardiv fit-codebook` first")?;
    decode_codebook(&bytes).map_err(|reason| Error::Corrupt {
        path: path.to_path_buf(),
        reason,
    })
}
