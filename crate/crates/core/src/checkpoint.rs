//! NQCK parameter checkpoints: a binary header followed by named sections
//! of raw little-endian 32-bit values.
//!
//! Layout: magic `NQCK`, version u16, section count u32, then per section
//! `name_len u16 | name utf-8 | rows u32 | cols u32 | rows*cols f32`.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use ndarray::Array2;

use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"NQCK";
const VERSION: u16 = 1;

pub fn write_sections(w: &mut impl Write, sections: &[(String, &Array2<f32>)]) -> std::io::Result<()> {
    // Canonical order: files are byte-stable however callers collect params.
    let mut sections: Vec<&(String, &Array2<f32>)> = sections.iter().collect();
    sections.sort_by(|a, b| a.0.cmp(&b.0));
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&(sections.len() as u32).to_le_bytes())?;
    for (name, array) in sections {
        let bytes = name.as_bytes();
        w.write_all(&(bytes.len() as u16).to_le_bytes())?;
        w.write_all(bytes)?;
        w.write_all(&(array.nrows() as u32).to_le_bytes())?;
        w.write_all(&(array.ncols() as u32).to_le_bytes())?;
        for &v in array.iter() {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(())
}

pub fn read_sections(r: &mut impl Read) -> Result<BTreeMap<String, Array2<f32>>> {
    let bad = |msg: String| Error::Format {
        format: "NQCK",
        msg,
    };
    let mut header = [0u8; 10];
    r.read_exact(&mut header)
        .map_err(|e| bad(format!("truncated header: {e}")))?;
    if &header[0..4] != MAGIC {
        return Err(bad("bad magic".into()));
    }
    let version = u16::from_le_bytes([header[4], header[5]]);
    if version != VERSION {
        return Err(bad(format!("unsupported version {version}")));
    }
    let count = u32::from_le_bytes(header[6..10].try_into().unwrap());
    let mut sections = BTreeMap::new();
    for _ in 0..count {
        let mut len_buf = [0u8; 2];
        r.read_exact(&mut len_buf)
            .map_err(|e| bad(format!("truncated section name length: {e}")))?;
        let name_len = u16::from_le_bytes(len_buf) as usize;
        let mut name_buf = vec![0u8; name_len];
        r.read_exact(&mut name_buf)
            .map_err(|e| bad(format!("truncated section name: {e}")))?;
        let name = String::from_utf8(name_buf).map_err(|_| bad("section name is not utf-8".into()))?;
        let mut dims = [0u8; 8];
        r.read_exact(&mut dims)
            .map_err(|e| bad(format!("truncated section dims: {e}")))?;
        let rows = u32::from_le_bytes(dims[0..4].try_into().unwrap()) as usize;
        let cols = u32::from_le_bytes(dims[4..8].try_into().unwrap()) as usize;
        let mut raw = vec![0u8; rows * cols * 4];
        r.read_exact(&mut raw)
            .map_err(|e| bad(format!("truncated section `{name}`: {e}")))?;
        let values: Vec<f32> = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let array = Array2::from_shape_vec((rows, cols), values)
            .map_err(|e| bad(format!("section `{name}` shape: {e}")))?;
        if sections.insert(name.clone(), array).is_some() {
            return Err(bad(format!("duplicate section `{name}`")));
        }
    }
    Ok(sections)
}

pub fn save(path: &Path, sections: &[(String, &Array2<f32>)]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    write_sections(&mut w, sections).map_err(|e| Error::io(path, e))?;
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn load(path: &Path) -> Result<BTreeMap<String, Array2<f32>>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_sections(&mut BufReader::new(file))
}
