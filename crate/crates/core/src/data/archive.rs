//! Cached patch sets.
//!
//! Layout, little-endian:
//!
//! ```text
//! "LSHRPTCH" | version u32 | precision tag (len u32 + bytes) | count u32
//! per patch: source_id (len u32 + bytes) | row u32 | col u32 | h u32 | w u32 | h*w values
//! crc32 of everything before it
//! ```

use std::path::Path;

use lshr_tensor::{Real, Tensor};

use crate::data::ImagePatch;
use crate::error::{LshrError, Result};
use crate::io::{put_str, put_u32, read_file, seal, unseal, write_atomic, Reader};

const MAGIC: &[u8; 8] = b"LSHRPTCH";
const VERSION: u32 = 1;

pub fn encode_patches<T: Real>(patches: &[ImagePatch<T>]) -> Vec<u8> {
    let mut out = MAGIC.to_vec();
    put_u32(&mut out, VERSION);
    put_str(&mut out, T::TAG);
    put_u32(&mut out, patches.len() as u32);
    for p in patches {
        put_str(&mut out, &p.source_id);
        put_u32(&mut out, p.crop_offset.0 as u32);
        put_u32(&mut out, p.crop_offset.1 as u32);
        put_u32(&mut out, p.height() as u32);
        put_u32(&mut out, p.width() as u32);
        for &v in p.pixels.data() {
            v.write_le(&mut out);
        }
    }
    seal(out)
}

pub fn decode_patches<T: Real>(bytes: &[u8]) -> Result<Vec<ImagePatch<T>>> {
    let body = unseal(bytes, "patch archive")?;
    let mut r = Reader::new(body, "patch archive");
    if r.take(8)? != MAGIC {
        return Err(LshrError::Format("not a patch archive".into()));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(LshrError::Format(format!("patch archive version {version} is not supported")));
    }
    let tag = r.string()?;
    if tag != T::TAG {
        return Err(LshrError::Format(format!("archive holds {tag} values, {} requested", T::TAG)));
    }
    let count = r.u32()? as usize;
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let source_id = r.string()?;
        let offset = (r.u32()? as usize, r.u32()? as usize);
        let (h, w) = (r.u32()? as usize, r.u32()? as usize);
        let raw = r.take(h * w * T::BYTES)?;
        let data = raw.chunks(T::BYTES).map(T::read_le).collect();
        out.push(ImagePatch {
            pixels: Tensor::new([1, 1, h, w], data)?,
            source_id,
            crop_offset: offset,
        });
    }
    if !r.is_done() {
        return Err(LshrError::Corrupt("trailing bytes in patch archive".into()));
    }
    Ok(out)
}

pub fn save_patches<T: Real>(path: &Path, patches: &[ImagePatch<T>]) -> Result<()> {
    write_atomic(path, &encode_patches(patches))
}

pub fn load_patches<T: Real>(path: &Path) -> Result<Vec<ImagePatch<T>>> {
    decode_patches(&read_file(path)?)
}
