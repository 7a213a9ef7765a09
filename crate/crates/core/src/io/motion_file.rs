//! Binary motion file: `SAMO`, version, fps, frame and dim counts, a
//! row-major little-endian f32 payload and a trailing CRC32 of everything
//! before it.

use std::path::Path;

use ndarray::Array2;

use crate::error::{Error, Result};
use crate::io::binio::{ByteReader, ByteWriter};
use crate::motion::{BlendshapeSequence, MotionSequence};

const MAGIC: &[u8; 4] = b"SAMO";
const VERSION: u32 = 1;
const HEADER: usize = 20;

pub fn encode_motion(m: &MotionSequence) -> Vec<u8> {
    let mut w = ByteWriter::new();
    w.bytes(MAGIC);
    w.u32(VERSION);
    w.f32(m.fps() as f32);
    w.u32(m.len() as u32);
    w.u32(m.dim() as u32);
    for v in m.frames().iter() {
        w.f32(*v as f32);
    }
    let mut bytes = w.into_inner();
    let crc = crc32fast::hash(&bytes);
    bytes.extend_from_slice(&crc.to_le_bytes());
    bytes
}

pub fn decode_motion(bytes: &[u8]) -> Result<MotionSequence> {
    let mut r = ByteReader::new(bytes);
    r.magic(MAGIC)?;
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::UnsupportedVersion(version));
    }
    let fps = r.f32()? as f64;
    let frames = r.u32()? as usize;
    let dims = r.u32()? as usize;
    let payload = frames.checked_mul(dims).and_then(|n| n.checked_mul(4)).ok_or_else(|| Error::Format {
        offset: 12,
        message: "frame and dim counts overflow".into(),
    })?;
    let needed = HEADER + payload + 4;
    if bytes.len() < needed {
        return Err(Error::Truncated {
            offset: bytes.len(),
            needed,
            len: bytes.len(),
        });
    }
    if bytes.len() > needed {
        return Err(Error::Format {
            offset: needed,
            message: format!("{} trailing bytes", bytes.len() - needed),
        });
    }
    let body = &bytes[..needed - 4];
    let stored = u32::from_le_bytes(bytes[needed - 4..].try_into().expect("4 bytes"));
    let computed = crc32fast::hash(body);
    if stored != computed {
        return Err(Error::CrcMismatch { stored, computed });
    }
    let values: Vec<f64> = (0..frames * dims).map(|_| r.f32().map(f64::from)).collect::<Result<_>>()?;
    let frames = Array2::from_shape_vec((frames, dims), values).map_err(|e| Error::InvalidInput(e.to_string()))?;
    MotionSequence::new(fps, frames)
}

pub fn write_motion(path: &Path, m: &MotionSequence) -> Result<()> {
    super::write_atomic(path, &encode_motion(m))
}

pub fn read_motion(path: &Path) -> Result<MotionSequence> {
    decode_motion(&std::fs::read(path).map_err(|e| Error::io(path, e))?)
}

pub fn write_face(path: &Path, f: &BlendshapeSequence) -> Result<()> {
    write_motion(path, f.as_motion())
}

pub fn read_face(path: &Path) -> Result<BlendshapeSequence> {
    BlendshapeSequence::from_motion(read_motion(path)?)
}
