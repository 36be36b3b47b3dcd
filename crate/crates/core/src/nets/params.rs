use std::io::{Read, Write};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Uniform};

use crate::ad::{GradientMap, Tape, Tensor, Var};
use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"BSDEPARM";
const VERSION: u32 = 1;

/// One named block of the flat parameter vector.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Segment {
    pub name: String,
    pub offset: usize,
    pub shape: Vec<usize>,
}

impl Segment {
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn range(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.len()
    }
}

/// Weight initialisation family. Both are Glorot-scaled by fan-in + fan-out.
#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InitDist {
    Uniform,
    Normal,
}

/// Flat parameter vector plus the layout addressing every weight, bias and
/// normalisation vector inside it.
#[derive(Clone, Debug, PartialEq)]
pub struct ParameterSet {
    theta: Vec<f64>,
    layout: Vec<Segment>,
}

impl ParameterSet {
    /// Zero-filled parameters for an ordered list of `(name, shape)` blocks.
    pub fn zeros(blocks: &[(String, Vec<usize>)]) -> Self {
        let mut offset = 0;
        let layout: Vec<Segment> = blocks
            .iter()
            .map(|(name, shape)| {
                let seg = Segment {
                    name: name.clone(),
                    offset,
                    shape: shape.clone(),
                };
                offset += seg.len();
                seg
            })
            .collect();
        Self {
            theta: vec![0.0; offset],
            layout,
        }
    }

    pub fn from_parts(layout: Vec<Segment>, theta: Vec<f64>) -> Result<Self> {
        let mut expected = 0;
        for seg in &layout {
            if seg.offset != expected {
                return Err(Error::Format(format!(
                    "segment `{}` starts at {} but {} was expected",
                    seg.name, seg.offset, expected
                )));
            }
            expected += seg.len();
        }
        if expected != theta.len() {
            return Err(Error::Format(format!(
                "layout covers {expected} values but theta has {}",
                theta.len()
            )));
        }
        Ok(Self { theta, layout })
    }

    pub fn len(&self) -> usize {
        self.theta.len()
    }

    pub fn is_empty(&self) -> bool {
        self.theta.is_empty()
    }

    pub fn theta(&self) -> &[f64] {
        &self.theta
    }

    pub fn theta_mut(&mut self) -> &mut [f64] {
        &mut self.theta
    }

    pub fn layout(&self) -> &[Segment] {
        &self.layout
    }

    pub fn segment(&self, name: &str) -> Option<&[f64]> {
        self.layout
            .iter()
            .find(|s| s.name == name)
            .map(|s| &self.theta[s.range()])
    }

    pub fn segment_mut(&mut self, name: &str) -> Option<&mut [f64]> {
        let range = self.layout.iter().find(|s| s.name == name)?.range();
        Some(&mut self.theta[range])
    }

    /// Records every segment as a tape leaf, in layout order.
    pub fn to_vars<'t>(&self, tape: &'t Tape) -> Vec<Var<'t>> {
        self.layout
            .iter()
            .map(|s| {
                let t = Tensor::new(s.shape.clone(), self.theta[s.range()].to_vec())
                    .expect("segment shape matches its length");
                tape.leaf(t)
            })
            .collect()
    }

    /// Gathers leaf gradients back into a flat vector aligned with theta.
    pub fn flatten_grads(&self, vars: &[Var<'_>], grads: &GradientMap) -> Vec<f64> {
        let mut flat = vec![0.0; self.theta.len()];
        for (seg, var) in self.layout.iter().zip(vars) {
            if let Some(g) = grads.get(var) {
                flat[seg.range()].copy_from_slice(g.data());
            }
        }
        flat
    }

    /// Concatenates parameter sets, prefixing each segment name.
    pub fn concat(parts: Vec<(String, ParameterSet)>) -> Self {
        let mut theta = Vec::new();
        let mut layout = Vec::new();
        for (prefix, part) in parts {
            let base = theta.len();
            for seg in part.layout {
                layout.push(Segment {
                    name: if prefix.is_empty() {
                        seg.name
                    } else {
                        format!("{prefix}.{}", seg.name)
                    },
                    offset: base + seg.offset,
                    shape: seg.shape,
                });
            }
            theta.extend(part.theta);
        }
        Self { theta, layout }
    }

    pub fn write_to(&self, w: &mut impl Write) -> Result<()> {
        w.write_all(MAGIC)?;
        w.write_all(&VERSION.to_le_bytes())?;
        w.write_all(&(self.layout.len() as u32).to_le_bytes())?;
        for seg in &self.layout {
            let name = seg.name.as_bytes();
            w.write_all(&(name.len() as u32).to_le_bytes())?;
            w.write_all(name)?;
            w.write_all(&(seg.offset as u64).to_le_bytes())?;
            w.write_all(&(seg.shape.len() as u32).to_le_bytes())?;
            for &d in &seg.shape {
                w.write_all(&(d as u64).to_le_bytes())?;
            }
        }
        w.write_all(&(self.theta.len() as u64).to_le_bytes())?;
        for v in &self.theta {
            w.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_from(r: &mut impl Read) -> Result<Self> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(Error::Format("not a parameter blob".into()));
        }
        let version = read_u32(r)?;
        if version != VERSION {
            return Err(Error::Format(format!(
                "unsupported parameter blob version {version}"
            )));
        }
        let count = read_u32(r)? as usize;
        let mut layout = Vec::with_capacity(count);
        for _ in 0..count {
            let len = read_u32(r)? as usize;
            let mut name = vec![0u8; len];
            r.read_exact(&mut name)?;
            let name = String::from_utf8(name)
                .map_err(|_| Error::Format("segment name is not utf-8".into()))?;
            let offset = read_u64(r)? as usize;
            let rank = read_u32(r)? as usize;
            let shape = (0..rank)
                .map(|_| read_u64(r).map(|d| d as usize))
                .collect::<Result<Vec<_>>>()?;
            layout.push(Segment {
                name,
                offset,
                shape,
            });
        }
        let n = read_u64(r)? as usize;
        let theta = read_f64s(r, n)?;
        Self::from_parts(layout, theta)
    }
}

pub(crate) fn read_u32(r: &mut impl Read) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

pub(crate) fn read_u64(r: &mut impl Read) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

pub(crate) fn read_f64s(r: &mut impl Read, n: usize) -> Result<Vec<f64>> {
    let mut buf = vec![0u8; n * 8];
    r.read_exact(&mut buf)?;
    Ok(buf
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect())
}

pub(crate) fn write_f64s(w: &mut impl Write, values: &[f64]) -> Result<()> {
    for v in values {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

/// Fills a zeroed parameter set deterministically from `seed`.
///
/// `*.weight` blocks of shape `[fan_in, fan_out]` get Glorot draws, `*.gamma`
/// is one, biases and shifts stay zero. Any other block is a free scalar or
/// vector and is drawn uniformly from `[-1, 1]`.
pub fn initialize(params: &mut ParameterSet, seed: u64, dist: InitDist) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let layout = params.layout.clone();
    for seg in &layout {
        let block = &mut params.theta[seg.range()];
        if seg.name.ends_with("weight") {
            let fan: usize = seg.shape.iter().sum();
            match dist {
                InitDist::Uniform => {
                    let a = (6.0 / fan as f64).sqrt();
                    let u = Uniform::new_inclusive(-a, a).expect("finite bounds");
                    block.iter_mut().for_each(|v| *v = u.sample(&mut rng));
                }
                InitDist::Normal => {
                    let n = Normal::new(0.0, (2.0 / fan as f64).sqrt()).expect("positive std");
                    block.iter_mut().for_each(|v| *v = n.sample(&mut rng));
                }
            }
        } else if seg.name.ends_with("gamma") {
            block.fill(1.0);
        } else if seg.name.ends_with("bias") || seg.name.ends_with("beta") {
            block.fill(0.0);
        } else {
            let u = Uniform::new_inclusive(-1.0, 1.0).expect("finite bounds");
            block.iter_mut().for_each(|v| *v = u.sample(&mut rng));
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> ParameterSet {
        let mut p = ParameterSet::zeros(&[
            ("layer1.weight".into(), vec![3, 4]),
            ("layer1.bias".into(), vec![1, 4]),
            ("y0".into(), vec![1, 1]),
        ]);
        initialize(&mut p, 7, InitDist::Uniform);
        p
    }

    #[test]
    fn layout_is_contiguous() {
        let p = sample();
        assert_eq!(p.len(), 12 + 4 + 1);
        assert_eq!(p.layout()[2].offset, 16);
        assert!(p.segment("layer1.bias").unwrap().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn blob_roundtrip() {
        let p = sample();
        let mut buf = Vec::new();
        p.write_to(&mut buf).unwrap();
        let q = ParameterSet::read_from(&mut buf.as_slice()).unwrap();
        assert_eq!(p, q);
    }

    #[test]
    fn corrupted_blob_rejected() {
        let p = sample();
        let mut buf = Vec::new();
        p.write_to(&mut buf).unwrap();
        buf[0] = b'X';
        assert!(ParameterSet::read_from(&mut buf.as_slice()).is_err());
        let mut buf2 = Vec::new();
        p.write_to(&mut buf2).unwrap();
        buf2.truncate(buf2.len() - 3);
        assert!(ParameterSet::read_from(&mut buf2.as_slice()).is_err());
    }

    #[test]
    fn from_parts_rejects_gaps() {
        let layout = vec![Segment {
            name: "a".into(),
            offset: 1,
            shape: vec![2],
        }];
        assert!(ParameterSet::from_parts(layout, vec![0.0; 3]).is_err());
    }
}
