//! Middlebury `.flo` files: little-endian float32 magic 202021.25, int32
//! width, int32 height, then row-major interleaved float32 (u, v).

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};

use crate::error::{Error, Result};
use crate::flow::FlowField;

pub const FLO_MAGIC: f32 = 202021.25;

pub fn encode_flo<W: Write>(mut w: W, flow: &FlowField) -> std::io::Result<()> {
    w.write_f32::<LittleEndian>(FLO_MAGIC)?;
    w.write_i32::<LittleEndian>(flow.width() as i32)?;
    w.write_i32::<LittleEndian>(flow.height() as i32)?;
    for (u, v) in flow.u().iter().zip(flow.v()) {
        w.write_f32::<LittleEndian>(*u)?;
        w.write_f32::<LittleEndian>(*v)?;
    }
    Ok(())
}

pub fn decode_flo<R: Read>(mut r: R) -> Result<FlowField> {
    let bad = |e: std::io::Error| Error::Format(format!("truncated .flo stream: {e}"));
    let magic = r.read_f32::<LittleEndian>().map_err(bad)?;
    if magic != FLO_MAGIC {
        return Err(Error::Format(format!("bad .flo magic {magic}")));
    }
    let width = r.read_i32::<LittleEndian>().map_err(bad)?;
    let height = r.read_i32::<LittleEndian>().map_err(bad)?;
    if width <= 0 || height <= 0 || (width as i64) * (height as i64) > (1 << 28) {
        return Err(Error::Format(format!("implausible .flo size {width}x{height}")));
    }
    let n = width as usize * height as usize;
    let mut raw = vec![0f32; 2 * n];
    r.read_f32_into::<LittleEndian>(&mut raw).map_err(bad)?;
    let (u, v) = raw.chunks_exact(2).map(|p| (p[0], p[1])).unzip();
    FlowField::new(height as usize, width as usize, u, v)
}

pub fn write_flo(path: &Path, flow: &FlowField) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    encode_flo(&mut w, flow).map_err(|e| Error::io(path, e))?;
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_flo(path: &Path) -> Result<FlowField> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    decode_flo(BufReader::new(file))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_layout_is_bit_exact() {
        let f = FlowField::new(1, 2, vec![1.5, -2.0], vec![0.25, 3.0]).unwrap();
        let mut buf = Vec::new();
        encode_flo(&mut buf, &f).unwrap();
        assert_eq!(&buf[0..4], &202021.25f32.to_le_bytes());
        assert_eq!(&buf[0..4], b"PIEH");
        assert_eq!(&buf[4..8], &2i32.to_le_bytes());
        assert_eq!(&buf[8..12], &1i32.to_le_bytes());
        assert_eq!(&buf[12..16], &1.5f32.to_le_bytes());
        assert_eq!(&buf[16..20], &0.25f32.to_le_bytes());
        assert_eq!(buf.len(), 12 + 4 * 4);
        assert_eq!(decode_flo(&buf[..]).unwrap(), f);
    }

    #[test]
    fn rejects_bad_magic_and_truncation() {
        let mut buf = Vec::new();
        encode_flo(&mut buf, &FlowField::zeros(3, 3)).unwrap();
        assert!(decode_flo(&buf[..buf.len() - 1]).is_err());
        buf[0] ^= 1;
        assert!(matches!(decode_flo(&buf[..]), Err(Error::Format(_))));
    }
}
