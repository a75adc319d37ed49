//! Keypoint topology: mesh triangulation, wireframe edges grouped by side,
//! the appearance keypoint subset and the left/right mirror pairing.
//!
//! Topologies are loaded from a versioned text file rather than hard-coded so
//! a model trained on a different annotation scheme only needs a new file.
//! Format (`#` starts a comment, tokens are whitespace separated):
//!
//! ```text
//! TOPO1 <keypoint_count>
//! tri <a> <b> <c>
//! wire <front|back|left|right> <a> <b>
//! app <index>
//! mirror <left_index> <right_index>
//! ```
//!
//! Keypoints lying on the symmetry plane are mirror-paired with themselves.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::types::Side;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Topology {
    pub keypoint_count: usize,
    pub mesh: Vec<[u32; 3]>,
    /// Edge lists indexed by `Side::index()`. Edges may appear on two sides.
    pub wireframe: [Vec<[u32; 2]>; 4],
    /// Indices of the appearance keypoints used by the keypoint likelihood.
    pub appearance: Vec<u32>,
    /// Left/right keypoint pairing; symmetric-plane points pair with themselves.
    pub mirror_pairs: Vec<[u32; 2]>,
}

impl Topology {
    pub fn validate(&self) -> Result<()> {
        let n = self.keypoint_count as u32;
        let check = |idx: u32, what: &str| -> Result<()> {
            if idx >= n {
                return Err(Error::format(
                    "topology",
                    format!("{what} index {idx} out of range (keypoint count {n})"),
                ));
            }
            Ok(())
        };
        for t in &self.mesh {
            for &i in t {
                check(i, "triangle")?;
            }
            if t[0] == t[1] || t[1] == t[2] || t[0] == t[2] {
                return Err(Error::format(
                    "topology",
                    format!("triangle {t:?} repeats a vertex"),
                ));
            }
        }
        for side in &self.wireframe {
            for e in side {
                check(e[0], "edge")?;
                check(e[1], "edge")?;
                if e[0] == e[1] {
                    return Err(Error::format("topology", format!("edge {e:?} degenerate")));
                }
            }
        }
        for &a in &self.appearance {
            check(a, "appearance")?;
        }
        for p in &self.mirror_pairs {
            check(p[0], "mirror")?;
            check(p[1], "mirror")?;
        }
        Ok(())
    }

    /// Looks up the mirror partner of a keypoint, if the pairing lists it.
    pub fn mirror_of(&self, idx: u32) -> Option<u32> {
        for p in &self.mirror_pairs {
            if p[0] == idx {
                return Some(p[1]);
            }
            if p[1] == idx {
                return Some(p[0]);
            }
        }
        None
    }

    pub fn parse(text: &str) -> Result<Topology> {
        let mut lines = text
            .lines()
            .map(|l| l.split('#').next().unwrap_or("").trim())
            .filter(|l| !l.is_empty());
        let header = lines
            .next()
            .ok_or_else(|| Error::format("topology", "empty file"))?;
        let mut head = header.split_whitespace();
        match head.next() {
            Some("TOPO1") => {}
            other => {
                return Err(Error::format(
                    "topology",
                    format!("expected TOPO1 header, found {other:?}"),
                ))
            }
        }
        let keypoint_count: usize = head
            .next()
            .ok_or_else(|| Error::format("topology", "missing keypoint count"))?
            .parse()
            .map_err(|_| Error::format("topology", "bad keypoint count"))?;

        let mut topo = Topology {
            keypoint_count,
            mesh: Vec::new(),
            wireframe: Default::default(),
            appearance: Vec::new(),
            mirror_pairs: Vec::new(),
        };
        for line in lines {
            let mut tok = line.split_whitespace();
            let kind = tok.next().unwrap();
            let mut next_u32 = || -> Result<u32> {
                tok.next()
                    .ok_or_else(|| Error::format("topology", format!("truncated line `{line}`")))?
                    .parse()
                    .map_err(|_| Error::format("topology", format!("bad index in `{line}`")))
            };
            match kind {
                "tri" => {
                    let t = [next_u32()?, next_u32()?, next_u32()?];
                    topo.mesh.push(t);
                }
                "wire" => {
                    let side: Side = line
                        .split_whitespace()
                        .nth(1)
                        .ok_or_else(|| Error::format("topology", "wire line missing side"))?
                        .parse()?;
                    let mut tok = line.split_whitespace().skip(2);
                    let mut next = || -> Result<u32> {
                        tok.next()
                            .ok_or_else(|| {
                                Error::format("topology", format!("truncated line `{line}`"))
                            })?
                            .parse()
                            .map_err(|_| {
                                Error::format("topology", format!("bad index in `{line}`"))
                            })
                    };
                    let e = [next()?, next()?];
                    topo.wireframe[side.index()].push(e);
                }
                "app" => topo.appearance.push(next_u32()?),
                "mirror" => {
                    let p = [next_u32()?, next_u32()?];
                    topo.mirror_pairs.push(p);
                }
                other => {
                    return Err(Error::format(
                        "topology",
                        format!("unknown record `{other}`"),
                    ))
                }
            }
        }
        topo.validate()?;
        Ok(topo)
    }

    pub fn serialize(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!("TOPO1 {}\n", self.keypoint_count));
        for t in &self.mesh {
            out.push_str(&format!("tri {} {} {}\n", t[0], t[1], t[2]));
        }
        for side in Side::ALL {
            for e in &self.wireframe[side.index()] {
                out.push_str(&format!("wire {} {} {}\n", side.name(), e[0], e[1]));
            }
        }
        for &a in &self.appearance {
            out.push_str(&format!("app {a}\n"));
        }
        for p in &self.mirror_pairs {
            out.push_str(&format!("mirror {} {}\n", p[0], p[1]));
        }
        out
    }

    pub fn read(path: &Path) -> Result<Topology> {
        Topology::parse(&fs::read_to_string(path)?)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, self.serialize())?;
        Ok(())
    }
}
