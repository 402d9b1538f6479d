use crate::error::{Error, Result};

/// Unsigned byte, 3 dimensions.
pub const IMAGES_MAGIC: u32 = 0x0000_0803;
/// Unsigned byte, 1 dimension.
pub const LABELS_MAGIC: u32 = 0x0000_0801;
/// Big-endian 16-bit, 1 dimension; used for label sets above 256 values.
pub const WIDE_LABELS_MAGIC: u32 = 0x0000_0B01;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IdxImages {
    pub count: usize,
    pub rows: u32,
    pub cols: u32,
    pub pixels: Vec<u8>,
}

pub fn write_idx_images(pixels: &[u8], count: usize, rows: u32, cols: u32) -> Vec<u8> {
    debug_assert_eq!(pixels.len(), count * rows as usize * cols as usize);
    let mut out = Vec::with_capacity(16 + pixels.len());
    for v in [IMAGES_MAGIC, count as u32, rows, cols] {
        out.extend_from_slice(&v.to_be_bytes());
    }
    out.extend_from_slice(pixels);
    out
}

pub fn write_idx_labels(labels: &[u16], wide: bool) -> Result<Vec<u8>> {
    let magic = if wide {
        WIDE_LABELS_MAGIC
    } else {
        LABELS_MAGIC
    };
    let mut out = Vec::with_capacity(8 + labels.len() * if wide { 2 } else { 1 });
    out.extend_from_slice(&magic.to_be_bytes());
    out.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    for &l in labels {
        if wide {
            out.extend_from_slice(&l.to_be_bytes());
        } else {
            out.push(
                u8::try_from(l)
                    .map_err(|_| Error::Dataset(format!("label {l} does not fit in a byte")))?,
            );
        }
    }
    Ok(out)
}

fn header(bytes: &[u8], words: usize, file: &str) -> Result<Vec<u32>> {
    if bytes.len() < words * 4 {
        return Err(Error::Truncated {
            file: file.to_string(),
            expected: words * 4,
            actual: bytes.len(),
        });
    }
    Ok(bytes[..words * 4]
        .chunks_exact(4)
        .map(|c| u32::from_be_bytes([c[0], c[1], c[2], c[3]]))
        .collect())
}

fn check_len(bytes: &[u8], expected: usize, file: &str) -> Result<()> {
    match bytes.len() {
        n if n < expected => Err(Error::Truncated {
            file: file.to_string(),
            expected,
            actual: n,
        }),
        n if n > expected => Err(Error::Dataset(format!(
            "{file}: {} trailing bytes",
            n - expected
        ))),
        _ => Ok(()),
    }
}

pub fn read_idx_images(bytes: &[u8], file: &str) -> Result<IdxImages> {
    let magic = header(bytes, 1, file)?[0];
    if magic != IMAGES_MAGIC {
        return Err(Error::BadMagic {
            file: file.to_string(),
            expected: IMAGES_MAGIC,
            found: magic,
        });
    }
    let h = header(bytes, 4, file)?;
    let (count, rows, cols) = (h[1] as usize, h[2], h[3]);
    check_len(bytes, 16 + count * rows as usize * cols as usize, file)?;
    Ok(IdxImages {
        count,
        rows,
        cols,
        pixels: bytes[16..].to_vec(),
    })
}

pub fn read_idx_labels(bytes: &[u8], file: &str) -> Result<Vec<u16>> {
    let magic = header(bytes, 1, file)?[0];
    let width = match magic {
        LABELS_MAGIC => 1,
        WIDE_LABELS_MAGIC => 2,
        found => {
            return Err(Error::BadMagic {
                file: file.to_string(),
                expected: LABELS_MAGIC,
                found,
            })
        }
    };
    let count = header(bytes, 2, file)?[1] as usize;
    check_len(bytes, 8 + count * width, file)?;
    Ok(if width == 1 {
        bytes[8..].iter().map(|&b| b as u16).collect()
    } else {
        bytes[8..]
            .chunks_exact(2)
            .map(|c| u16::from_be_bytes([c[0], c[1]]))
            .collect()
    })
}
