//! Binary serialisation of a learned model.
//!
//! Little-endian layout, magic `ASM1`:
//!
//! ```text
//! "ASM1"
//! u32  keypoint_count, n_components, n_active, n_types
//! per type: u32 name length, name bytes
//! f64  mean               (3 * keypoint_count)
//! f64  eigenvectors       (3 * keypoint_count * n_components, column major)
//! f64  eigen_sdevs        (n_components)
//! per type: f64 mode coefficients (n_components)
//! u32  triangle count, then 3 x u32 per triangle
//! per side (front, back, left, right): u32 edge count, then 2 x u32 per edge
//! u32  appearance count, then u32 per entry
//! u32  mirror pair count, then 2 x u32 per pair
//! ```

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::shape_model::{DeformableVehicleModel, Topology};
use crate::types::VehicleType;

const MAGIC: &[u8; 4] = b"ASM1";

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::format("model bundle", "truncated file"));
        }
        let out = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn len(&mut self, what: &str) -> Result<usize> {
        let v = self.u32()? as usize;
        // Any plausible bundle fits well under this; larger values signal a
        // corrupt length field before a huge allocation is attempted.
        if v > 100_000_000 {
            return Err(Error::format("model bundle", format!("absurd {what} count {v}")));
        }
        Ok(v)
    }

    fn f64_block(&mut self, n: usize) -> Result<Vec<f64>> {
        let raw = self.take(8 * n)?;
        Ok(raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }
}

fn put_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_f64(out: &mut Vec<u8>, v: f64) {
    out.extend_from_slice(&v.to_le_bytes());
}

impl DeformableVehicleModel {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        put_u32(&mut out, self.keypoint_count as u32);
        put_u32(&mut out, self.n_components() as u32);
        put_u32(&mut out, self.n_active as u32);
        put_u32(&mut out, self.modes.len() as u32);
        for t in self.modes.keys() {
            let name = t.name().as_bytes();
            put_u32(&mut out, name.len() as u32);
            out.extend_from_slice(name);
        }
        for &v in self.mean.iter() {
            put_f64(&mut out, v);
        }
        for col in self.eigenvectors.column_iter() {
            for &v in col.iter() {
                put_f64(&mut out, v);
            }
        }
        for &v in self.eigen_sdevs.iter() {
            put_f64(&mut out, v);
        }
        for mode in self.modes.values() {
            for &v in mode.iter() {
                put_f64(&mut out, v);
            }
        }
        put_u32(&mut out, self.topology.mesh.len() as u32);
        for t in &self.topology.mesh {
            for &i in t {
                put_u32(&mut out, i);
            }
        }
        for side in &self.topology.wireframe {
            put_u32(&mut out, side.len() as u32);
            for e in side {
                put_u32(&mut out, e[0]);
                put_u32(&mut out, e[1]);
            }
        }
        put_u32(&mut out, self.topology.appearance.len() as u32);
        for &i in &self.topology.appearance {
            put_u32(&mut out, i);
        }
        put_u32(&mut out, self.topology.mirror_pairs.len() as u32);
        for p in &self.topology.mirror_pairs {
            put_u32(&mut out, p[0]);
            put_u32(&mut out, p[1]);
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<DeformableVehicleModel> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4)? != MAGIC {
            return Err(Error::format("model bundle", "bad magic"));
        }
        let c_k = r.len("keypoint")?;
        let n_all = r.len("component")?;
        let n_active = r.len("active component")?;
        if n_active > n_all {
            return Err(Error::format(
                "model bundle",
                format!("{n_active} active of {n_all} stored components"),
            ));
        }
        let n_types = r.len("type")?;
        let mut type_order = Vec::with_capacity(n_types);
        for _ in 0..n_types {
            let len = r.len("name byte")?;
            let raw = r.take(len)?;
            let name = std::str::from_utf8(raw)
                .map_err(|_| Error::format("model bundle", "type name is not utf-8"))?;
            type_order.push(name.parse::<VehicleType>()?);
        }
        let dim = 3 * c_k;
        let mean = DVector::from_vec(r.f64_block(dim)?);
        let eigenvectors = DMatrix::from_vec(dim, n_all, r.f64_block(dim * n_all)?);
        let eigen_sdevs = DVector::from_vec(r.f64_block(n_all)?);
        let mut modes = BTreeMap::new();
        for &t in &type_order {
            if modes.insert(t, DVector::from_vec(r.f64_block(n_all)?)).is_some() {
                return Err(Error::format(
                    "model bundle",
                    format!("duplicate type {t}"),
                ));
            }
        }
        let n_tris = r.len("triangle")?;
        let mut mesh = Vec::with_capacity(n_tris);
        for _ in 0..n_tris {
            mesh.push([r.u32()?, r.u32()?, r.u32()?]);
        }
        let mut wireframe: [Vec<[u32; 2]>; 4] = Default::default();
        for side in &mut wireframe {
            let n_edges = r.len("edge")?;
            for _ in 0..n_edges {
                side.push([r.u32()?, r.u32()?]);
            }
        }
        let n_app = r.len("appearance")?;
        let mut appearance = Vec::with_capacity(n_app);
        for _ in 0..n_app {
            appearance.push(r.u32()?);
        }
        let n_pairs = r.len("mirror pair")?;
        let mut mirror_pairs = Vec::with_capacity(n_pairs);
        for _ in 0..n_pairs {
            mirror_pairs.push([r.u32()?, r.u32()?]);
        }
        if r.pos != bytes.len() {
            return Err(Error::format(
                "model bundle",
                format!("{} trailing bytes", bytes.len() - r.pos),
            ));
        }
        let topology = Topology {
            keypoint_count: c_k,
            mesh,
            wireframe,
            appearance,
            mirror_pairs,
        };
        topology.validate()?;
        Ok(DeformableVehicleModel {
            keypoint_count: c_k,
            mean,
            eigenvectors,
            eigen_sdevs,
            n_active,
            modes,
            topology,
        })
    }

    pub fn write_bundle(&self, path: &Path) -> Result<()> {
        Ok(fs::write(path, self.to_bytes())?)
    }

    pub fn read_bundle(path: &Path) -> Result<DeformableVehicleModel> {
        DeformableVehicleModel::from_bytes(&fs::read(path)?)
    }
}
