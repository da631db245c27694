//! Raw tensor containers: `HOIA` magic, little-endian `u32` header length,
//! a JSON header, then the `f32le` payload.

use std::path::Path;

use ndarray::{Array3, ArrayD, IxDyn};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::merge::{BranchTag, LatentGrid, ResidualStack};
use crate::pipeline::StepTrace;
use crate::tensor::Field;

const MAGIC: &[u8; 4] = b"HOIA";
pub const DTYPE: &str = "f32le";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArrayHeader {
    pub shape: Vec<usize>,
    pub dtype: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub timestep: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub branch_tag: Option<BranchTag>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub layer_index: Option<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ArrayContainer {
    pub header: ArrayHeader,
    pub data: Vec<f32>,
}

impl ArrayContainer {
    pub fn new(shape: Vec<usize>, data: Vec<f32>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(invalid!("shape {shape:?} holds {n} values, got {}", data.len()));
        }
        Ok(Self {
            header: ArrayHeader {
                shape,
                dtype: DTYPE.into(),
                timestep: None,
                branch_tag: None,
                layer_index: None,
            },
            data,
        })
    }

    pub fn from_field(field: &Field) -> Self {
        let (c, h, w) = field.dim();
        Self::new(vec![c, h, w], field.iter().map(|&v| v as f32).collect()).expect("shape matches")
    }

    pub fn from_latent(z: &LatentGrid) -> Self {
        let mut a = Self::from_field(z.values());
        a.header.timestep = Some(z.timestep());
        a.header.branch_tag = Some(z.branch());
        a
    }

    pub fn to_array(&self) -> ArrayD<f64> {
        ArrayD::from_shape_vec(
            IxDyn(&self.header.shape),
            self.data.iter().map(|&v| v as f64).collect(),
        )
        .expect("validated shape")
    }

    pub fn to_field(&self) -> Result<Field> {
        match self.header.shape[..] {
            [c, h, w] => Ok(Array3::from_shape_vec(
                (c, h, w),
                self.data.iter().map(|&v| v as f64).collect(),
            )
            .expect("validated shape")),
            _ => Err(invalid!("expected a 3-D array, shape is {:?}", self.header.shape)),
        }
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let header = serde_json::to_vec(&self.header)?;
        let mut out = Vec::with_capacity(8 + header.len() + self.data.len() * 4);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(header.len() as u32).to_le_bytes());
        out.extend_from_slice(&header);
        for v in &self.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 8 || &bytes[..4] != MAGIC {
            return Err(invalid!("not an array container"));
        }
        let hlen = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes")) as usize;
        let body = bytes
            .get(8..8 + hlen)
            .ok_or_else(|| invalid!("truncated array header"))?;
        let header: ArrayHeader = serde_json::from_slice(body)?;
        if header.dtype != DTYPE {
            return Err(invalid!("unsupported dtype {:?}", header.dtype));
        }
        let payload = &bytes[8 + hlen..];
        let n: usize = header.shape.iter().product();
        if payload.len() != n * 4 {
            return Err(invalid!(
                "payload has {} bytes, shape {:?} needs {}",
                payload.len(),
                header.shape,
                n * 4
            ));
        }
        let data = payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect();
        Ok(Self { header, data })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()?).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path).map_err(|e| Error::io(path, e))?)
    }
}

fn write_field(dir: &Path, name: &str, field: &Field, timestep: usize, branch: Option<BranchTag>) -> Result<()> {
    let mut a = ArrayContainer::from_field(field);
    a.header.timestep = Some(timestep);
    a.header.branch_tag = branch;
    a.write(&dir.join(name))
}

fn write_stack(dir: &Path, prefix: &str, stack: &ResidualStack, timestep: usize, branch: BranchTag) -> Result<()> {
    for layer in &stack.layers {
        let mut a = ArrayContainer::from_field(&layer.values);
        a.header.timestep = Some(timestep);
        a.header.branch_tag = Some(branch);
        a.header.layer_index = Some(layer.index);
        a.write(&dir.join(format!("{prefix}_l{}.arr", layer.index)))?;
    }
    Ok(())
}

/// Writes every captured per-step tensor under `dir`.
pub fn dump_trace(dir: &Path, trace: &[StepTrace]) -> Result<usize> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut files = 0;
    for s in trace {
        let p = format!("step{:03}", s.step);
        let t_next = s.timestep - 1;
        write_field(dir, &format!("{p}_eps_sd.arr"), &s.sd_noise, s.timestep, Some(BranchTag::Sd))?;
        write_field(dir, &format!("{p}_eps_pfd.arr"), &s.pfd_noise, s.timestep, Some(BranchTag::Pfd))?;
        write_field(dir, &format!("{p}_z_sd.arr"), &s.z_sd, t_next, Some(BranchTag::Sd))?;
        write_field(dir, &format!("{p}_z_pfd.arr"), &s.z_pfd, t_next, Some(BranchTag::Pfd))?;
        files += 4;
        if let Some(z) = &s.z_merged {
            write_field(dir, &format!("{p}_z_merged.arr"), z, t_next, Some(BranchTag::Merged))?;
            files += 1;
        }
        write_stack(dir, &format!("{p}_res_sd"), &s.sd_residuals, s.timestep, BranchTag::Sd)?;
        files += s.sd_residuals.len();
        if let Some(r) = &s.merged_residuals {
            write_stack(dir, &format!("{p}_res_merged"), r, s.timestep, BranchTag::Merged)?;
            files += r.len();
        }
    }
    Ok(files)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn latent_header_fields() {
        let z = LatentGrid::new(Field::from_elem((2, 3, 4), 0.25), 7, BranchTag::Pfd).unwrap();
        let a = ArrayContainer::from_latent(&z);
        let bytes = a.to_bytes().unwrap();
        let hlen = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
        let header: serde_json::Value = serde_json::from_slice(&bytes[8..8 + hlen]).unwrap();
        assert_eq!(header["shape"], serde_json::json!([2, 3, 4]));
        assert_eq!(header["dtype"], "f32le");
        assert_eq!(header["timestep"], 7);
        assert_eq!(header["branch_tag"], "PFD");
        assert_eq!(bytes.len() - 8 - hlen, 24 * 4);
        assert_eq!(ArrayContainer::from_bytes(&bytes).unwrap().to_field().unwrap(), *z.values());
    }

    #[test]
    fn rejects_corrupt_input() {
        let a = ArrayContainer::new(vec![2, 2], vec![1.0; 4]).unwrap();
        let mut bytes = a.to_bytes().unwrap();
        bytes.pop();
        assert!(ArrayContainer::from_bytes(&bytes).is_err());
        assert!(ArrayContainer::from_bytes(b"nope").is_err());
        assert!(ArrayContainer::new(vec![2, 3], vec![0.0; 5]).is_err());
        assert!(a.to_field().is_err());
    }

    proptest! {
        #[test]
        fn round_trip_any_shape(
            shape in proptest::collection::vec(0usize..5, 0..4),
            seed in any::<u32>(),
        ) {
            let n: usize = shape.iter().product();
            let data: Vec<f32> = (0..n).map(|i| (i as f32 - seed as f32 * 1e-3).sin() * 1e3).collect();
            let a = ArrayContainer::new(shape, data).unwrap();
            let b = ArrayContainer::from_bytes(&a.to_bytes().unwrap()).unwrap();
            prop_assert_eq!(a.data.iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
                            b.data.iter().map(|v| v.to_bits()).collect::<Vec<_>>());
            prop_assert_eq!(a.header, b.header);
        }
    }
}
