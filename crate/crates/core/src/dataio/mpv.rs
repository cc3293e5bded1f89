//! MPV1 clip files.
//!
//! A 21-byte header (`b"MPV1"`, u32 LE S, C, H, W, u8 dtype) followed by the
//! row-major `[S,C,H,W]` payload. dtype 0 stores u8 pixels, dtype 1 stores f32 LE
//! values (used for flow dumps).

use std::fs::File;
use std::io::{BufWriter, ErrorKind, Read, Seek, SeekFrom, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const MAGIC: [u8; 4] = *b"MPV1";
pub const HEADER_LEN: u64 = 21;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Dtype {
    U8 = 0,
    F32 = 1,
}

impl Dtype {
    pub fn size(self) -> u64 {
        match self {
            Dtype::U8 => 1,
            Dtype::F32 => 4,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Header {
    pub frames: usize,
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub dtype: Dtype,
}

impl Header {
    pub fn frame_len(&self) -> usize {
        self.channels * self.height * self.width
    }

    pub fn payload_bytes(&self) -> u64 {
        (self.frames * self.frame_len()) as u64 * self.dtype.size()
    }

    fn encode(&self) -> [u8; HEADER_LEN as usize] {
        let mut h = [0u8; HEADER_LEN as usize];
        h[..4].copy_from_slice(&MAGIC);
        for (i, v) in [self.frames, self.channels, self.height, self.width].iter().enumerate() {
            h[4 + 4 * i..8 + 4 * i].copy_from_slice(&(*v as u32).to_le_bytes());
        }
        h[20] = self.dtype as u8;
        h
    }
}

/// Raw payload as stored.
#[derive(Clone, Debug, PartialEq)]
pub enum Payload {
    U8(Vec<u8>),
    F32(Vec<f32>),
}

fn open(path: &Path) -> Result<File> {
    File::open(path).map_err(|e| match e.kind() {
        ErrorKind::NotFound => Error::Missing(path.to_path_buf()),
        _ => Error::io(path, e),
    })
}

fn parse_header(path: &Path, f: &mut File) -> Result<Header> {
    let mut h = [0u8; HEADER_LEN as usize];
    let mut got = 0;
    while got < h.len() {
        match f.read(&mut h[got..]) {
            Ok(0) => break,
            Ok(n) => got += n,
            Err(e) if e.kind() == ErrorKind::Interrupted => {}
            Err(e) => return Err(Error::io(path, e)),
        }
    }
    if got < 4 || h[..4] != MAGIC {
        let mut found = [0u8; 4];
        found[..got.min(4)].copy_from_slice(&h[..got.min(4)]);
        return Err(Error::BadMagic {
            path: path.to_path_buf(),
            expected: MAGIC,
            found,
        });
    }
    if got < h.len() {
        return Err(Error::Truncated {
            path: path.to_path_buf(),
            expected: HEADER_LEN,
            found: got as u64,
        });
    }
    let u = |i: usize| u32::from_le_bytes(h[4 + 4 * i..8 + 4 * i].try_into().unwrap()) as usize;
    let dtype = match h[20] {
        0 => Dtype::U8,
        1 => Dtype::F32,
        other => {
            return Err(Error::Format {
                path: path.to_path_buf(),
                detail: format!("unknown dtype code {other}"),
            })
        }
    };
    Ok(Header {
        frames: u(0),
        channels: u(1),
        height: u(2),
        width: u(3),
        dtype,
    })
}

/// Header plus a check that the payload length agrees with it.
pub fn read_header(path: &Path) -> Result<Header> {
    let mut f = open(path)?;
    let header = parse_header(path, &mut f)?;
    let len = f.metadata().map_err(|e| Error::io(path, e))?.len();
    check_len(path, &header, len.saturating_sub(HEADER_LEN))?;
    Ok(header)
}

fn check_len(path: &Path, header: &Header, found: u64) -> Result<()> {
    let expected = header.payload_bytes();
    if found < expected {
        Err(Error::Truncated {
            path: path.to_path_buf(),
            expected,
            found,
        })
    } else if found > expected {
        Err(Error::SizeMismatch {
            path: path.to_path_buf(),
            expected,
            found,
        })
    } else {
        Ok(())
    }
}

fn decode_payload(dtype: Dtype, bytes: Vec<u8>) -> Payload {
    match dtype {
        Dtype::U8 => Payload::U8(bytes),
        Dtype::F32 => Payload::F32(
            bytes
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                .collect(),
        ),
    }
}

pub fn read_raw(path: &Path) -> Result<(Header, Payload)> {
    let mut f = open(path)?;
    let header = parse_header(path, &mut f)?;
    let mut bytes = Vec::with_capacity(header.payload_bytes() as usize);
    f.read_to_end(&mut bytes).map_err(|e| Error::io(path, e))?;
    check_len(path, &header, bytes.len() as u64)?;
    Ok((header, decode_payload(header.dtype, bytes)))
}

pub fn write_raw(path: &Path, header: &Header, payload: &Payload) -> Result<()> {
    let (dtype, n) = match payload {
        Payload::U8(v) => (Dtype::U8, v.len()),
        Payload::F32(v) => (Dtype::F32, v.len()),
    };
    if dtype != header.dtype || n != header.frames * header.frame_len() {
        return Err(Error::InvalidArgument(format!(
            "payload of {n} {dtype:?} values does not match header {header:?}"
        )));
    }
    let f = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(f);
    let io = |e| Error::io(path, e);
    w.write_all(&header.encode()).map_err(io)?;
    match payload {
        Payload::U8(v) => w.write_all(v).map_err(io)?,
        Payload::F32(v) => {
            for x in v {
                w.write_all(&x.to_le_bytes()).map_err(io)?;
            }
        }
    }
    w.flush().map_err(io)
}

fn to_tensor(header: &Header, payload: Payload) -> Result<Tensor<f32>> {
    let shape = [header.frames, header.channels, header.height, header.width];
    let data = match payload {
        Payload::U8(v) => v.into_iter().map(|b| b as f32 / 255.0).collect(),
        Payload::F32(v) => v,
    };
    Tensor::from_vec(&shape, data)
}

/// Frames `[S,C,H,W]`; u8 pixels are scaled to `[0,1]`.
pub fn read(path: &Path) -> Result<Tensor<f32>> {
    let (header, payload) = read_raw(path)?;
    to_tensor(&header, payload)
}

/// Frames `start..start+count` only, read with a seek past the rest.
pub fn read_frames(path: &Path, start: usize, count: usize) -> Result<Tensor<f32>> {
    let mut f = open(path)?;
    let header = parse_header(path, &mut f)?;
    let len = f.metadata().map_err(|e| Error::io(path, e))?.len();
    check_len(path, &header, len.saturating_sub(HEADER_LEN))?;
    if start + count > header.frames {
        return Err(Error::InvalidArgument(format!(
            "{}: frames {start}..{} requested from a {}-frame clip",
            path.display(),
            start + count,
            header.frames
        )));
    }
    let frame_bytes = header.frame_len() as u64 * header.dtype.size();
    f.seek(SeekFrom::Start(HEADER_LEN + start as u64 * frame_bytes))
        .map_err(|e| Error::io(path, e))?;
    let mut bytes = vec![0u8; (count as u64 * frame_bytes) as usize];
    f.read_exact(&mut bytes).map_err(|e| Error::io(path, e))?;
    let sub = Header { frames: count, ..header };
    to_tensor(&sub, decode_payload(header.dtype, bytes))
}

/// Quantise `[0,1]` frames to u8 and write them.
pub fn write(path: &Path, frames: &Tensor<f32>) -> Result<()> {
    let header = header_for(frames, Dtype::U8)?;
    let bytes = frames.data().iter().map(|&v| quantize(v)).collect();
    write_raw(path, &header, &Payload::U8(bytes))
}

/// Write `[S,C,H,W]` values verbatim as f32.
pub fn write_f32(path: &Path, frames: &Tensor<f32>) -> Result<()> {
    let header = header_for(frames, Dtype::F32)?;
    write_raw(path, &header, &Payload::F32(frames.data().to_vec()))
}

fn header_for(frames: &Tensor<f32>, dtype: Dtype) -> Result<Header> {
    let [s, c, h, w] = frames.shape()[..] else {
        return Err(Error::shape("mpv write", format!("expected [S,C,H,W], got {:?}", frames.shape())));
    };
    Ok(Header {
        frames: s,
        channels: c,
        height: h,
        width: w,
        dtype,
    })
}

pub fn quantize(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}
