use std::io::{Read, Write};

use crate::error::{Error, Result};
use crate::nets::{read_f64s, read_u32, read_u64, write_f64s, BatchNormState, ParameterSet};
use crate::schemes::ModelState;

use super::adam::AdamState;
use super::policy::PlateauState;

const MAGIC: &[u8; 8] = b"BSDECKPT";
const VERSION: u32 = 1;

/// Everything needed to resume or evaluate a run at a step boundary.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub step: u64,
    pub plateau: PlateauState,
    pub adam: AdamState,
    pub state: ModelState,
    pub params: ParameterSet,
}

impl Checkpoint {
    pub fn write_to(&self, w: &mut impl Write) -> Result<()> {
        w.write_all(MAGIC)?;
        w.write_all(&VERSION.to_le_bytes())?;
        w.write_all(&self.step.to_le_bytes())?;
        w.write_all(&self.plateau.gamma.to_le_bytes())?;
        let prev = self.plateau.previous.unwrap_or(f64::NAN);
        w.write_all(&[u8::from(self.plateau.previous.is_some())])?;
        w.write_all(&prev.to_le_bytes())?;
        w.write_all(&(self.plateau.stagnant_at_min as u64).to_le_bytes())?;

        let a = &self.adam;
        w.write_all(&a.step.to_le_bytes())?;
        write_f64s(w, &[a.beta1, a.beta2, a.eps])?;
        w.write_all(&(a.m.len() as u64).to_le_bytes())?;
        write_f64s(w, &a.m)?;
        write_f64s(w, &a.v)?;

        w.write_all(&(self.state.bn.len() as u32).to_le_bytes())?;
        for group in &self.state.bn {
            w.write_all(&(group.len() as u32).to_le_bytes())?;
            for bn in group {
                w.write_all(&(bn.features() as u64).to_le_bytes())?;
                write_f64s(w, &[bn.momentum, bn.eps])?;
                write_f64s(w, &bn.mean)?;
                write_f64s(w, &bn.var)?;
            }
        }
        self.params.write_to(w)
    }

    pub fn read_from(r: &mut impl Read) -> Result<Self> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(Error::Format("not a checkpoint".into()));
        }
        let version = read_u32(r)?;
        if version != VERSION {
            return Err(Error::Format(format!("unsupported checkpoint version {version}")));
        }
        let step = read_u64(r)?;
        let gamma = read_f64s(r, 1)?[0];
        let mut flag = [0u8; 1];
        r.read_exact(&mut flag)?;
        let prev = read_f64s(r, 1)?[0];
        let stagnant_at_min = read_u64(r)? as usize;
        let plateau = PlateauState {
            gamma,
            previous: (flag[0] != 0).then_some(prev),
            stagnant_at_min,
        };

        let adam_step = read_u64(r)?;
        let betas = read_f64s(r, 3)?;
        let n = read_u64(r)? as usize;
        let adam = AdamState {
            m: read_f64s(r, n)?,
            v: read_f64s(r, n)?,
            beta1: betas[0],
            beta2: betas[1],
            eps: betas[2],
            step: adam_step,
        };

        let groups = read_u32(r)? as usize;
        let mut bn = Vec::with_capacity(groups);
        for _ in 0..groups {
            let count = read_u32(r)? as usize;
            let mut group = Vec::with_capacity(count);
            for _ in 0..count {
                let features = read_u64(r)? as usize;
                let consts = read_f64s(r, 2)?;
                group.push(BatchNormState {
                    mean: read_f64s(r, features)?,
                    var: read_f64s(r, features)?,
                    momentum: consts[0],
                    eps: consts[1],
                });
            }
            bn.push(group);
        }
        let params = ParameterSet::read_from(r)?;
        if params.len() != n {
            return Err(Error::Format(format!(
                "checkpoint holds {} parameters but {n} optimizer moments",
                params.len()
            )));
        }
        Ok(Self {
            step,
            plateau,
            adam,
            state: ModelState { bn },
            params,
        })
    }
}
