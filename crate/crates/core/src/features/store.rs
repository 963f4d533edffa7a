//! Binary feature store: `MGDF`, u16 version, then per image the id, the
//! keypoint count, keypoints as five f32 fields and row-major descriptors.
//! Little-endian throughout.

use std::fs::File;
use std::io::{BufReader, BufWriter, ErrorKind, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian as LE, ReadBytesExt, WriteBytesExt};

use super::{FeatureSet, Keypoint, DESCRIPTOR_LEN};
use crate::error::{Error, Result};

pub const FEATURE_MAGIC: &[u8; 4] = b"MGDF";
pub const FEATURE_VERSION: u16 = 1;

pub fn write_features<W: Write>(out: &mut W, sets: &[FeatureSet]) -> Result<()> {
    out.write_all(FEATURE_MAGIC)?;
    out.write_u16::<LE>(FEATURE_VERSION)?;
    for fs in sets {
        out.write_u32::<LE>(fs.image_id)?;
        out.write_u32::<LE>(fs.keypoints.len() as u32)?;
        for k in &fs.keypoints {
            for v in [k.x, k.y, k.scale, k.orientation, k.response] {
                out.write_f32::<LE>(v)?;
            }
        }
        for d in &fs.descriptors {
            for &v in d {
                out.write_f32::<LE>(v)?;
            }
        }
    }
    Ok(())
}

pub fn read_features<R: Read>(input: &mut R) -> Result<Vec<FeatureSet>> {
    let mut magic = [0u8; 4];
    input.read_exact(&mut magic)?;
    if &magic != FEATURE_MAGIC {
        return Err(Error::format("feature store", "bad magic"));
    }
    let version = input.read_u16::<LE>()?;
    if version != FEATURE_VERSION {
        return Err(Error::format("feature store", format!("unsupported version {version}")));
    }
    let mut sets = Vec::new();
    loop {
        let image_id = match input.read_u32::<LE>() {
            Ok(v) => v,
            Err(e) if e.kind() == ErrorKind::UnexpectedEof => break,
            Err(e) => return Err(e.into()),
        };
        let n = input.read_u32::<LE>()? as usize;
        let mut keypoints = Vec::with_capacity(n);
        for _ in 0..n {
            let mut f = [0f32; 5];
            input.read_f32_into::<LE>(&mut f)?;
            keypoints.push(Keypoint {
                x: f[0],
                y: f[1],
                scale: f[2],
                orientation: f[3],
                response: f[4],
            });
        }
        let mut descriptors = vec![[0f32; DESCRIPTOR_LEN]; n];
        for d in &mut descriptors {
            input.read_f32_into::<LE>(d)?;
        }
        sets.push(FeatureSet {
            image_id,
            keypoints,
            descriptors,
        });
    }
    Ok(sets)
}

pub fn write_feature_store(path: &Path, sets: &[FeatureSet]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    write_features(&mut out, sets)?;
    out.flush()?;
    Ok(())
}

pub fn read_feature_store(path: &Path) -> Result<Vec<FeatureSet>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_features(&mut BufReader::new(file))
}
