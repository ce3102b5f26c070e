//! Versioned binary container of named, shape-tagged arrays, and the
//! trainer snapshot stored in it.
//!
//! Layout (little-endian): magic `SKCK`, `u32` version, `u32` entry count,
//! then per entry `u32` name length, name bytes, `u8` element type
//! (0 = f64, 1 = u64), `u32` rank, `u64` dims, raw elements.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use crate::curriculum::CurriculumState;
use crate::env::TaskId;
use crate::error::{Error, Result};
use crate::nn::{Parameters, RmsPropState};
use crate::trainer::{ActorModel, Status, StopReason, Trainer};

pub const MAGIC: &[u8; 4] = b"SKCK";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub enum ArrayData {
    F64(Vec<f64>),
    U64(Vec<u64>),
}

impl ArrayData {
    fn len(&self) -> usize {
        match self {
            ArrayData::F64(v) => v.len(),
            ArrayData::U64(v) => v.len(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NamedArray {
    pub shape: Vec<usize>,
    pub data: ArrayData,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Checkpoint {
    entries: BTreeMap<String, NamedArray>,
}

fn corrupt(msg: impl Into<String>) -> Error {
    Error::Checkpoint(msg.into())
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| corrupt("unexpected end of file"))?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

impl Checkpoint {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn contains(&self, name: &str) -> bool {
        self.entries.contains_key(name)
    }

    pub fn put_f64(&mut self, name: impl Into<String>, shape: &[usize], data: Vec<f64>) {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        self.entries
            .insert(name.into(), NamedArray { shape: shape.to_vec(), data: ArrayData::F64(data) });
    }

    pub fn put_u64(&mut self, name: impl Into<String>, shape: &[usize], data: Vec<u64>) {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        self.entries
            .insert(name.into(), NamedArray { shape: shape.to_vec(), data: ArrayData::U64(data) });
    }

    pub fn put_scalar(&mut self, name: impl Into<String>, value: u64) {
        self.put_u64(name, &[1], vec![value]);
    }

    fn entry(&self, name: &str) -> Result<&NamedArray> {
        self.entries.get(name).ok_or_else(|| corrupt(format!("missing entry `{name}`")))
    }

    pub fn shape(&self, name: &str) -> Result<&[usize]> {
        Ok(&self.entry(name)?.shape)
    }

    pub fn get_f64(&self, name: &str) -> Result<&[f64]> {
        match &self.entry(name)?.data {
            ArrayData::F64(v) => Ok(v),
            ArrayData::U64(_) => Err(corrupt(format!("entry `{name}` is not f64"))),
        }
    }

    pub fn get_u64(&self, name: &str) -> Result<&[u64]> {
        match &self.entry(name)?.data {
            ArrayData::U64(v) => Ok(v),
            ArrayData::F64(_) => Err(corrupt(format!("entry `{name}` is not u64"))),
        }
    }

    pub fn scalar(&self, name: &str) -> Result<u64> {
        match self.get_u64(name)? {
            [v] => Ok(*v),
            _ => Err(corrupt(format!("entry `{name}` is not a scalar"))),
        }
    }

    /// Copies entry `name` into `dst`, which must have the same length.
    pub fn read_into(&self, name: &str, dst: &mut [f64]) -> Result<()> {
        let src = self.get_f64(name)?;
        if src.len() != dst.len() {
            return Err(corrupt(format!(
                "entry `{name}` has {} values, expected {}",
                src.len(),
                dst.len()
            )));
        }
        dst.copy_from_slice(src);
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.entries.len() as u32).to_le_bytes());
        for (name, arr) in &self.entries {
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            let tag: u8 = match arr.data {
                ArrayData::F64(_) => 0,
                ArrayData::U64(_) => 1,
            };
            out.push(tag);
            out.extend_from_slice(&(arr.shape.len() as u32).to_le_bytes());
            for &d in &arr.shape {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            match &arr.data {
                ArrayData::F64(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
                ArrayData::U64(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4)? != MAGIC {
            return Err(corrupt("not a checkpoint file"));
        }
        let version = r.u32()?;
        if version != FORMAT_VERSION {
            return Err(corrupt(format!(
                "checkpoint format version {version} is not supported (expected {FORMAT_VERSION})"
            )));
        }
        let count = r.u32()?;
        let mut entries = BTreeMap::new();
        for _ in 0..count {
            let name_len = r.u32()? as usize;
            let name = std::str::from_utf8(r.take(name_len)?)
                .map_err(|_| corrupt("entry name is not UTF-8"))?
                .to_string();
            let tag = r.u8()?;
            let rank = r.u32()? as usize;
            let mut shape = Vec::with_capacity(rank.min(8));
            for _ in 0..rank {
                shape.push(usize::try_from(r.u64()?).map_err(|_| corrupt("dimension overflow"))?);
            }
            let n = shape
                .iter()
                .try_fold(1usize, |acc, &d| acc.checked_mul(d))
                .ok_or_else(|| corrupt("shape overflow"))?;
            let raw = r.take(n.checked_mul(8).ok_or_else(|| corrupt("shape overflow"))?)?;
            let words = raw.chunks_exact(8).map(|c| c.try_into().expect("8 bytes"));
            let data = match tag {
                0 => ArrayData::F64(words.map(f64::from_le_bytes).collect()),
                1 => ArrayData::U64(words.map(u64::from_le_bytes).collect()),
                t => return Err(corrupt(format!("unknown element type {t} in `{name}`"))),
            };
            debug_assert_eq!(data.len(), n);
            entries.insert(name, NamedArray { shape, data });
        }
        if r.pos != bytes.len() {
            return Err(corrupt("trailing bytes after last entry"));
        }
        Ok(Self { entries })
    }

    /// Writes to a sibling temporary file, then renames over `path`.
    pub fn save(&self, path: &Path) -> Result<()> {
        let tmp = path.with_extension("tmp");
        {
            let mut f = fs::File::create(&tmp)?;
            f.write_all(&self.to_bytes())?;
            f.sync_all()?;
        }
        fs::rename(&tmp, path)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }
}

/// Stores every array of `params` under `prefix/<index>`.
pub fn store_params<P: Parameters + ?Sized>(ck: &mut Checkpoint, prefix: &str, params: &P) {
    for (i, a) in params.arrays().iter().enumerate() {
        ck.put_f64(format!("{prefix}/{i}"), &[a.len()], a.to_vec());
    }
}

pub fn restore_params<P: Parameters + ?Sized>(ck: &Checkpoint, prefix: &str, params: &mut P) -> Result<()> {
    for (i, a) in params.arrays_mut().into_iter().enumerate() {
        ck.read_into(&format!("{prefix}/{i}"), a)?;
    }
    Ok(())
}

fn store_optim(ck: &mut Checkpoint, prefix: &str, opt: &RmsPropState) {
    for (i, a) in opt.mean_square.iter().enumerate() {
        ck.put_f64(format!("{prefix}/ms{i}"), &[a.len()], a.clone());
    }
    ck.put_f64(format!("{prefix}/hyper"), &[3], vec![opt.decay, opt.step_size, opt.epsilon]);
}

fn restore_optim(ck: &Checkpoint, prefix: &str, opt: &mut RmsPropState) -> Result<()> {
    for (i, a) in opt.mean_square.iter_mut().enumerate() {
        ck.read_into(&format!("{prefix}/ms{i}"), a)?;
    }
    let mut hyper = [0.0; 3];
    ck.read_into(&format!("{prefix}/hyper"), &mut hyper)?;
    [opt.decay, opt.step_size, opt.epsilon] = hyper;
    Ok(())
}

/// Stores the networks of `model` under `model/<module>/`.
pub fn store_model<M: ActorModel + ?Sized>(ck: &mut Checkpoint, model: &M) -> Result<()> {
    let modules = model.modules();
    ck.put_u64("model/modules", &[modules.len()], modules.iter().map(|&m| m as u64).collect());
    for m in modules {
        let net = model.net(m)?;
        ck.put_u64(
            format!("model/{m}/dims"),
            &[3],
            vec![net.input_dim() as u64, net.hidden_dim() as u64, net.output_dim() as u64],
        );
        store_params(ck, &format!("model/{m}"), net);
    }
    Ok(())
}

/// Loads network parameters into a model of identical structure.
pub fn restore_model<M: ActorModel + ?Sized>(ck: &Checkpoint, model: &mut M) -> Result<()> {
    let modules: Vec<u64> = model.modules().iter().map(|&m| m as u64).collect();
    if ck.get_u64("model/modules")? != modules.as_slice() {
        return Err(corrupt("checkpoint modules do not match the model"));
    }
    for m in model.modules() {
        let net = model.net_mut(m)?;
        let dims = [net.input_dim() as u64, net.hidden_dim() as u64, net.output_dim() as u64];
        if ck.get_u64(&format!("model/{m}/dims"))? != dims {
            return Err(corrupt(format!("network shape mismatch for module {m}")));
        }
        restore_params(ck, &format!("model/{m}"), net)?;
    }
    Ok(())
}

/// Registry ids of the tasks a trainer checkpoint was written for.
pub fn checkpoint_task_ids(ck: &Checkpoint) -> Result<Vec<TaskId>> {
    Ok(ck.get_u64("run/task_ids")?.iter().map(|&i| TaskId(i as usize)).collect())
}

/// Hidden width of the first stored network.
pub fn checkpoint_hidden_dim(ck: &Checkpoint) -> Result<usize> {
    let first = *ck.get_u64("model/modules")?.first().ok_or_else(|| corrupt("checkpoint has no networks"))?;
    Ok(ck.get_u64(&format!("model/{first}/dims"))?[1] as usize)
}

fn status_code(status: Status) -> u64 {
    match status {
        Status::Running => 0,
        Status::Finished(StopReason::Mastered) => 1,
        Status::Finished(StopReason::BudgetExhausted) => 2,
    }
}

fn status_from_code(code: u64) -> Result<Status> {
    match code {
        0 => Ok(Status::Running),
        1 => Ok(Status::Finished(StopReason::Mastered)),
        2 => Ok(Status::Finished(StopReason::BudgetExhausted)),
        c => Err(corrupt(format!("unknown trainer status {c}"))),
    }
}

impl<M: ActorModel> Trainer<M> {
    /// Everything needed to continue this run bit-for-bit.
    pub fn snapshot(&self) -> Result<Checkpoint> {
        let mut ck = Checkpoint::new();
        let n = self.tasks.len();
        ck.put_u64("run/task_ids", &[n], self.tasks.iter().map(|t| t.id.0 as u64).collect());
        ck.put_scalar("run/seed", self.config.seed);
        ck.put_scalar("run/episodes", self.episodes);
        ck.put_scalar("run/updates", self.updates);
        ck.put_scalar("run/status", status_code(self.status));
        ck.put_scalar("run/phase_fresh", self.phase_fresh as u64);
        ck.put_scalar("curriculum/l_max", self.curriculum.l_max as u64);
        ck.put_f64(
            "curriculum/estimates",
            &[n],
            self.tasks.iter().map(|t| self.curriculum.estimate(t.id)).collect(),
        );
        ck.put_u64(
            "curriculum/counts",
            &[n],
            self.tasks
                .iter()
                .map(|t| self.curriculum.episode_counts.get(&t.id).copied().unwrap_or(0))
                .collect(),
        );
        ck.put_f64("curriculum/distribution", &[n], self.distribution.clone());

        store_model(&mut ck, &self.learner.model)?;
        for m in self.learner.model.modules() {
            let opt = self
                .learner
                .policy_optim
                .get(&m)
                .ok_or_else(|| Error::Config(format!("no optimiser state for module {m}")))?;
            store_optim(&mut ck, &format!("model/{m}/optim"), opt);
        }
        let blocks = self.learner.critic.blocks();
        ck.put_scalar("critic/blocks", blocks.len() as u64);
        for (b, block) in blocks.iter().enumerate() {
            store_params(&mut ck, &format!("critic/{b}"), block);
            store_optim(&mut ck, &format!("critic/{b}/optim"), &self.learner.critic_optim[b]);
        }
        Ok(ck)
    }

    /// Overwrites the state of a trainer built from the same configuration.
    pub fn restore(&mut self, ck: &Checkpoint) -> Result<()> {
        let ids: Vec<u64> = self.tasks.iter().map(|t| t.id.0 as u64).collect();
        if ck.get_u64("run/task_ids")? != ids.as_slice() {
            return Err(corrupt("checkpoint was written for a different task set"));
        }
        if ck.scalar("run/seed")? != self.config.seed {
            return Err(corrupt("checkpoint was written with a different seed"));
        }
        if ck.scalar("critic/blocks")? != self.learner.critic.blocks().len() as u64 {
            return Err(corrupt("checkpoint critic does not match the configured variant"));
        }

        restore_model(ck, &mut self.learner.model)?;
        for m in self.learner.model.modules() {
            let opt = self
                .learner
                .policy_optim
                .get_mut(&m)
                .ok_or_else(|| Error::Config(format!("no optimiser state for module {m}")))?;
            restore_optim(ck, &format!("model/{m}/optim"), opt)?;
        }
        for b in 0..self.learner.critic.blocks().len() {
            restore_params(ck, &format!("critic/{b}"), &mut self.learner.critic.blocks_mut()[b])?;
            restore_optim(ck, &format!("critic/{b}/optim"), &mut self.learner.critic_optim[b])?;
        }

        let n = self.tasks.len();
        let mut estimates = vec![0.0; n];
        ck.read_into("curriculum/estimates", &mut estimates)?;
        let counts = ck.get_u64("curriculum/counts")?;
        if counts.len() != n {
            return Err(corrupt("curriculum counts have the wrong length"));
        }
        let mut distribution = vec![0.0; n];
        ck.read_into("curriculum/distribution", &mut distribution)?;
        let mut curriculum = CurriculumState::new(&self.tasks, self.config.curriculum);
        curriculum.l_max = ck.scalar("curriculum/l_max")? as usize;
        for (i, t) in self.tasks.iter().enumerate() {
            curriculum.reward_estimates.insert(t.id, estimates[i]);
            curriculum.episode_counts.insert(t.id, counts[i]);
        }
        self.curriculum = curriculum;
        self.distribution = distribution;
        self.episodes = ck.scalar("run/episodes")?;
        self.updates = ck.scalar("run/updates")?;
        self.status = status_from_code(ck.scalar("run/status")?)?;
        self.phase_fresh = ck.scalar("run/phase_fresh")? != 0;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bytes_round_trip_bitwise() {
        let mut ck = Checkpoint::new();
        let weird = vec![0.1, -0.0, f64::MIN_POSITIVE, 1e308, f64::from_bits(0x7ff8_0000_0000_0001)];
        ck.put_f64("a/b", &[5], weird.clone());
        ck.put_u64("c", &[2, 1], vec![u64::MAX, 7]);
        let back = Checkpoint::from_bytes(&ck.to_bytes()).unwrap();
        let got = back.get_f64("a/b").unwrap();
        assert!(got.iter().zip(&weird).all(|(x, y)| x.to_bits() == y.to_bits()));
        assert_eq!(back.get_u64("c").unwrap(), &[u64::MAX, 7]);
        assert_eq!(back.shape("c").unwrap(), &[2, 1]);
    }

    #[test]
    fn version_mismatch_refused() {
        let mut bytes = Checkpoint::new().to_bytes();
        bytes[4..8].copy_from_slice(&(FORMAT_VERSION + 1).to_le_bytes());
        let err = Checkpoint::from_bytes(&bytes).unwrap_err();
        assert!(err.to_string().contains("version"));
    }

    #[test]
    fn corrupt_input_refused() {
        let mut ck = Checkpoint::new();
        ck.put_f64("x", &[3], vec![1.0, 2.0, 3.0]);
        let bytes = ck.to_bytes();
        assert!(Checkpoint::from_bytes(&bytes[..bytes.len() - 1]).is_err());
        assert!(Checkpoint::from_bytes(b"NOPE\x01\x00\x00\x00").is_err());
        let mut extra = bytes.clone();
        extra.push(0);
        assert!(Checkpoint::from_bytes(&extra).is_err());
    }

    #[test]
    fn typed_access_checked() {
        let mut ck = Checkpoint::new();
        ck.put_scalar("n", 4);
        assert!(ck.get_f64("n").is_err());
        assert!(ck.get_u64("missing").is_err());
        let mut dst = [0.0; 2];
        ck.put_f64("v", &[3], vec![0.0; 3]);
        assert!(ck.read_into("v", &mut dst).is_err());
    }
}
