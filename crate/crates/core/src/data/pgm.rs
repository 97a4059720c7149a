//! Binary (P5) PGM, 8-bit. The only image codec in the project: trivially
//! reimplementable anywhere, no dependencies.

use crate::error::{Error, Result};
use std::io::{Read, Write};
use std::path::Path;

pub struct Pgm {
    pub width: usize,
    pub height: usize,
    pub maxval: u16,
    pub data: Vec<u8>,
}

pub fn write_pgm(mut w: impl Write, width: usize, height: usize, data: &[u8]) -> Result<()> {
    if data.len() != width * height {
        return Err(Error::shape(format!(
            "pgm: {}x{} wants {} bytes, got {}",
            width,
            height,
            width * height,
            data.len()
        )));
    }
    write!(w, "P5\n{} {}\n255\n", width, height)?;
    w.write_all(data)?;
    Ok(())
}

pub fn write_pgm_file(path: impl AsRef<Path>, width: usize, height: usize, data: &[u8]) -> Result<()> {
    let f = std::fs::File::create(path)?;
    write_pgm(std::io::BufWriter::new(f), width, height, data)
}

pub fn read_pgm(mut r: impl Read) -> Result<Pgm> {
    let mut buf = Vec::new();
    r.read_to_end(&mut buf)?;
    if buf.len() < 2 || &buf[0..2] != b"P5" {
        return Err(Error::invalid("pgm: not a P5 file"));
    }
    let mut pos = 2;
    let mut fields = [0usize; 3];
    for field in &mut fields {
        // skip whitespace and comments
        loop {
            while pos < buf.len() && buf[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if pos < buf.len() && buf[pos] == b'#' {
                while pos < buf.len() && buf[pos] != b'\n' {
                    pos += 1;
                }
            } else {
                break;
            }
        }
        let start = pos;
        while pos < buf.len() && buf[pos].is_ascii_digit() {
            pos += 1;
        }
        if pos == start {
            return Err(Error::invalid("pgm: malformed header"));
        }
        *field = std::str::from_utf8(&buf[start..pos])
            .unwrap()
            .parse()
            .map_err(|_| Error::invalid("pgm: header value out of range"))?;
    }
    let [width, height, maxval] = fields;
    if maxval == 0 || maxval > 255 {
        return Err(Error::invalid(format!("pgm: unsupported maxval {}", maxval)));
    }
    // single whitespace byte separates header from raster
    if pos >= buf.len() || !buf[pos].is_ascii_whitespace() {
        return Err(Error::invalid("pgm: missing raster separator"));
    }
    pos += 1;
    let n = width * height;
    if buf.len() < pos + n {
        return Err(Error::invalid(format!(
            "pgm: raster truncated ({} of {} bytes)",
            buf.len() - pos,
            n
        )));
    }
    Ok(Pgm { width, height, maxval: maxval as u16, data: buf[pos..pos + n].to_vec() })
}

pub fn read_pgm_file(path: impl AsRef<Path>) -> Result<Pgm> {
    let f = std::fs::File::open(path.as_ref())?;
    read_pgm(std::io::BufReader::new(f))
}
