//! The `DVIP` sequence container.
//!
//! Layout, all integers little-endian u32:
//!
//! ```text
//! magic "DVIP" | version=1 | n_sequences | seq_len | channels | height | width
//! ```
//!
//! followed by `n_sequences * seq_len * channels * height * width`
//! little-endian f32 pixels in sequence, time, channel, row, column order.
//! Round-trips are bit-exact.

use std::io::{Read, Write};
use std::path::Path;

use super::VideoSequence;
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"DVIP";
const VERSION: u32 = 1;

/// Writes a uniform collection of sequences to `path`.
pub fn save_container(seqs: &[VideoSequence], path: &Path) -> Result<()> {
    let dims = match seqs.first() {
        Some(s) => [
            seqs.len() as u32,
            s.n_frames() as u32,
            s.channels() as u32,
            s.height() as u32,
            s.width() as u32,
        ],
        None => [0; 5],
    };
    for s in seqs {
        if s.n_frames() as u32 != dims[1]
            || s.channels() as u32 != dims[2]
            || s.height() as u32 != dims[3]
            || s.width() as u32 != dims[4]
        {
            return Err(Error::Format("container requires uniform sequence dimensions".into()));
        }
    }

    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    for d in dims {
        w.write_all(&d.to_le_bytes())?;
    }
    for s in seqs {
        for v in s.raw() {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Reads a container written by [`save_container`].
pub fn load_container(path: &Path) -> Result<Vec<VideoSequence>> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    if bytes.len() < 28 {
        return Err(Error::Format("container is truncated".into()));
    }
    if &bytes[..4] != MAGIC {
        return Err(Error::Format("bad container magic".into()));
    }
    let word = |i: usize| u32::from_le_bytes(bytes[4 + 4 * i..8 + 4 * i].try_into().unwrap());
    if word(0) != VERSION {
        return Err(Error::Format(format!("unsupported container version {}", word(0))));
    }
    let (n, seq_len, channels, height, width) =
        (word(1) as u64, word(2) as u64, word(3) as u64, word(4) as u64, word(5) as u64);
    if n == 0 {
        return Ok(Vec::new());
    }

    let floats = [n, seq_len, channels, height, width]
        .iter()
        .try_fold(1u64, |acc, &d| acc.checked_mul(d))
        .ok_or_else(|| Error::Format("container dimensions overflow".into()))?;
    let payload = floats
        .checked_mul(4)
        .filter(|&b| b <= (bytes.len() - 28) as u64)
        .ok_or_else(|| Error::Format("container payload is truncated".into()))?;
    if payload != (bytes.len() - 28) as u64 {
        return Err(Error::Format("container payload length mismatch".into()));
    }

    let per_seq = (seq_len * channels * height * width) as usize;
    let mut values = bytes[28..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()));
    let mut out = Vec::with_capacity(n as usize);
    for _ in 0..n {
        let frames: Vec<f32> = values.by_ref().take(per_seq).collect();
        out.push(VideoSequence::from_raw(
            channels as usize,
            height as usize,
            width as usize,
            frames,
        )?);
    }
    Ok(out)
}
