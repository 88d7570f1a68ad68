//! Binary PGM (P5) / PPM (P6) images with 8-bit samples, plus the label
//! table sidecar used for masks.

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::mask::LabelMask;
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PnmImage {
    pub width: usize,
    pub height: usize,
    /// 1 for P5, 3 for P6.
    pub channels: usize,
    /// Interleaved samples, row-major.
    pub data: Vec<u8>,
}

impl PnmImage {
    pub fn encode(&self) -> Vec<u8> {
        let magic = if self.channels == 1 { "P5" } else { "P6" };
        let mut out = format!("{magic}\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.extend_from_slice(&self.data);
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let mut cur = Cursor { bytes, pos: 0 };
        let magic = cur.token()?;
        let channels = match magic.as_str() {
            "P5" => 1,
            "P6" => 3,
            other => {
                return Err(Error::Format {
                    offset: 0,
                    message: format!("unsupported magic {other:?}"),
                })
            }
        };
        let width = cur.number()?;
        let height = cur.number()?;
        let maxval = cur.number()?;
        if maxval == 0 || maxval > 255 {
            return Err(Error::Format {
                offset: cur.pos,
                message: format!("only 8-bit samples supported, maxval {maxval}"),
            });
        }
        // single whitespace byte separates the header from the raster
        cur.pos += 1;
        let n = width * height * channels;
        let end = cur.pos + n;
        if end > bytes.len() {
            return Err(Error::Format {
                offset: bytes.len(),
                message: format!("raster truncated: need {n} bytes"),
            });
        }
        Ok(Self {
            width,
            height,
            channels,
            data: bytes[cur.pos..end].to_vec(),
        })
    }

    /// Converts a `3 × H × W` tensor in `[0, 1]` to a P6 image.
    pub fn from_rgb(t: &Tensor) -> Result<Self> {
        let d = t.dims();
        if d.len() != 3 || d[0] != 3 {
            return Err(Error::shape(format!("rgb image must be 3×H×W, got {d:?}")));
        }
        let (h, w) = (d[1], d[2]);
        let plane = h * w;
        let mut data = Vec::with_capacity(3 * plane);
        for p in 0..plane {
            for c in 0..3 {
                data.push((t.data()[c * plane + p].clamp(0.0, 1.0) * 255.0).round() as u8);
            }
        }
        Ok(Self {
            width: w,
            height: h,
            channels: 3,
            data,
        })
    }

    pub fn from_mask(mask: &LabelMask) -> Self {
        Self {
            width: mask.width(),
            height: mask.height(),
            channels: 1,
            data: mask.labels().to_vec(),
        }
    }
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Cursor<'_> {
    fn skip_space(&mut self) {
        while self.pos < self.bytes.len() {
            match self.bytes[self.pos] {
                b'#' => {
                    while self.pos < self.bytes.len() && self.bytes[self.pos] != b'\n' {
                        self.pos += 1;
                    }
                }
                b if b.is_ascii_whitespace() => self.pos += 1,
                _ => break,
            }
        }
    }

    fn token(&mut self) -> Result<String> {
        self.skip_space();
        let start = self.pos;
        while self.pos < self.bytes.len() && !self.bytes[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
        if start == self.pos {
            return Err(Error::Format {
                offset: start,
                message: "unexpected end of header".into(),
            });
        }
        Ok(String::from_utf8_lossy(&self.bytes[start..self.pos]).into_owned())
    }

    fn number(&mut self) -> Result<usize> {
        let start = self.pos;
        let tok = self.token()?;
        tok.parse().map_err(|_| Error::Format {
            offset: start,
            message: format!("expected a number, got {tok:?}"),
        })
    }
}

/// Writes `bytes` to a temporary sibling and renames it over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
    }
    let tmp = path.with_extension(format!(
        "{}.tmp",
        path.extension().and_then(|e| e.to_str()).unwrap_or("")
    ));
    let mut f = fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
    f.write_all(bytes).map_err(|e| Error::io(&tmp, e))?;
    f.sync_all().map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn read_file(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

/// Sidecar text: one `id name` line per label.
pub fn encode_label_table(table: &[String]) -> String {
    table
        .iter()
        .enumerate()
        .map(|(i, n)| format!("{i} {n}\n"))
        .collect()
}

pub fn decode_label_table(text: &str) -> Result<Vec<String>> {
    let mut table = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let (id, name) = line.split_once(' ').ok_or_else(|| {
            Error::contract(format!(
                "label table line {}: expected `id name`",
                lineno + 1
            ))
        })?;
        let id: usize = id
            .parse()
            .map_err(|_| Error::contract(format!("label table line {}: bad id", lineno + 1)))?;
        if id != table.len() {
            return Err(Error::contract(format!(
                "label ids must be dense from 0; found {id} at position {}",
                table.len()
            )));
        }
        table.push(name.trim().to_string());
    }
    Ok(table)
}

/// Writes `<stem>.pgm` and `<stem>.labels`.
pub fn write_mask(stem: &Path, mask: &LabelMask) -> Result<()> {
    write_atomic(
        &stem.with_extension("pgm"),
        &PnmImage::from_mask(mask).encode(),
    )?;
    write_atomic(
        &stem.with_extension("labels"),
        encode_label_table(mask.label_table()).as_bytes(),
    )
}

pub fn read_mask(stem: &Path) -> Result<LabelMask> {
    let img = PnmImage::decode(&read_file(&stem.with_extension("pgm"))?)?;
    if img.channels != 1 {
        return Err(Error::contract("mask must be a P5 image"));
    }
    let table_path = stem.with_extension("labels");
    let text = String::from_utf8(read_file(&table_path)?)
        .map_err(|_| Error::contract("label table is not UTF-8"))?;
    LabelMask::new(img.height, img.width, img.data, decode_label_table(&text)?)
}
