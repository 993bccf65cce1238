//! Binary PGM (P5) image output, maxval 255, row-major.

use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};

/// Encodes a grayscale image as binary PGM.
pub fn encode_pgm(width: usize, height: usize, pixels: &[u8]) -> Result<Vec<u8>> {
    if pixels.len() != width * height {
        return Err(Error::shape(
            "pgm encode",
            format!("{} pixels", width * height),
            format!("{} pixels", pixels.len()),
        ));
    }
    let mut out = Vec::with_capacity(pixels.len() + 32);
    out.extend_from_slice(format!("P5\n{width} {height}\n255\n").as_bytes());
    out.extend_from_slice(pixels);
    Ok(out)
}

/// Writes a grayscale image to `path` as binary PGM.
pub fn write_pgm(path: &Path, width: usize, height: usize, pixels: &[u8]) -> Result<()> {
    let bytes = encode_pgm(width, height, pixels)?;
    let mut file =
        std::fs::File::create(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    file.write_all(&bytes)
        .map_err(|e| Error::io(path.display().to_string(), e))
}
