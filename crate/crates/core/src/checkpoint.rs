//! Binary checkpoints for policies and ensembles.
//!
//! Layout (all integers and reals little-endian):
//!
//! ```text
//! magic    8 bytes  "MEEECKPT"
//! version  u32      1
//! kind     u8       1 = policy, 2 = ensemble
//! body
//! ```
//!
//! A network is `activation u8 | n u32 | n layer sizes as u64 | parameters
//! as f64`, parameters in [`DenseNet::flat_params`] order. A vector is
//! `len u32 | len f64`.
//!
//! Policy body: `network | action_low vector | action_high vector`.
//!
//! Ensemble body: `members u32 | loss u8 (0 mse, 1 nll) |
//! include_reward_in_variance u8 | learning_rate f64`, then per member
//! `init_seed u64 | state_dim u32 | action_dim u32 | input_mean |
//! input_std | target_mean | target_std | network`.

use std::fs;
use std::path::Path;

use crate::error::{MeeeError, Result};
use crate::model::{Ensemble, EnsembleConfig, ModelLoss, Normalizer, ProbabilisticModel};
use crate::nn::{Activation, DenseNet};
use crate::sac::GaussianPolicy;
use crate::scalar::Scalar;

const MAGIC: &[u8; 8] = b"MEEECKPT";
const VERSION: u32 = 1;
const KIND_POLICY: u8 = 1;
const KIND_ENSEMBLE: u8 = 2;

#[derive(Default)]
struct Writer {
    buf: Vec<u8>,
}

impl Writer {
    fn header(kind: u8) -> Self {
        let mut w = Self::default();
        w.buf.extend_from_slice(MAGIC);
        w.u32(VERSION as usize);
        w.u8(kind);
        w
    }

    fn u8(&mut self, x: u8) {
        self.buf.push(x);
    }

    fn u32(&mut self, x: usize) {
        self.buf.extend_from_slice(&(x as u32).to_le_bytes());
    }

    fn u64(&mut self, x: u64) {
        self.buf.extend_from_slice(&x.to_le_bytes());
    }

    fn f64(&mut self, x: f64) {
        self.buf.extend_from_slice(&x.to_le_bytes());
    }

    fn vector<T: Scalar>(&mut self, xs: &[T]) {
        self.u32(xs.len());
        for x in xs {
            self.f64(x.as_f64());
        }
    }

    fn net<T: Scalar>(&mut self, net: &DenseNet<T>) {
        self.u8(net.hidden_activation().code());
        self.u32(net.layer_sizes().len());
        for &n in net.layer_sizes() {
            self.u64(n as u64);
        }
        for p in net.flat_params() {
            self.f64(p.as_f64());
        }
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn open(bytes: &'a [u8], kind: u8) -> Result<Self> {
        let mut r = Self { bytes, pos: 0 };
        if r.take(8)? != MAGIC {
            return Err(MeeeError::Checkpoint("bad magic bytes".into()));
        }
        let version = r.u32()?;
        if version != VERSION as usize {
            return Err(MeeeError::Checkpoint(format!("unsupported version {version}")));
        }
        let found = r.u8()?;
        if found != kind {
            return Err(MeeeError::Checkpoint(format!("expected kind {kind}, found {found}")));
        }
        Ok(r)
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| MeeeError::Checkpoint(format!("truncated at byte {}", self.pos)))?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<usize> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()) as usize)
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn vector<T: Scalar>(&mut self) -> Result<Vec<T>> {
        let n = self.u32()?;
        (0..n).map(|_| self.f64().map(T::of)).collect()
    }

    fn net<T: Scalar>(&mut self) -> Result<DenseNet<T>> {
        let code = self.u8()?;
        let activation = Activation::from_code(code)
            .ok_or_else(|| MeeeError::Checkpoint(format!("unknown activation code {code}")))?;
        let n = self.u32()?;
        let sizes = (0..n).map(|_| self.u64().map(|x| x as usize)).collect::<Result<Vec<_>>>()?;
        let mut net = DenseNet::new(&sizes, activation, 0)?;
        let params = (0..net.num_params()).map(|_| self.f64().map(T::of)).collect::<Result<Vec<_>>>()?;
        net.set_flat_params(&params)?;
        Ok(net)
    }

    fn finish(self) -> Result<()> {
        if self.pos != self.bytes.len() {
            return Err(MeeeError::Checkpoint(format!(
                "{} trailing bytes",
                self.bytes.len() - self.pos
            )));
        }
        Ok(())
    }
}

pub fn policy_to_bytes<T: Scalar>(policy: &GaussianPolicy<T>) -> Vec<u8> {
    let mut w = Writer::header(KIND_POLICY);
    w.net(policy.net());
    w.vector(&policy.action_low());
    w.vector(&policy.action_high());
    w.buf
}

pub fn policy_from_bytes<T: Scalar>(bytes: &[u8]) -> Result<GaussianPolicy<T>> {
    let mut r = Reader::open(bytes, KIND_POLICY)?;
    let net = r.net()?;
    let low: Vec<T> = r.vector()?;
    let high: Vec<T> = r.vector()?;
    r.finish()?;
    GaussianPolicy::from_net(net, &low, &high)
}

pub fn ensemble_to_bytes<T: Scalar>(ensemble: &Ensemble<T>) -> Vec<u8> {
    let mut w = Writer::header(KIND_ENSEMBLE);
    let cfg = ensemble.config();
    w.u32(ensemble.len());
    w.u8(match cfg.loss {
        ModelLoss::Mse => 0,
        ModelLoss::Nll => 1,
    });
    w.u8(cfg.include_reward_in_variance as u8);
    w.f64(cfg.learning_rate);
    for m in ensemble.members() {
        w.u64(m.init_seed());
        w.u32(m.state_dim());
        w.u32(m.action_dim());
        let n = m.normalizer();
        w.vector(&n.input_mean);
        w.vector(&n.input_std);
        w.vector(&n.target_mean);
        w.vector(&n.target_std);
        w.net(m.net());
    }
    w.buf
}

pub fn ensemble_from_bytes<T: Scalar>(bytes: &[u8]) -> Result<Ensemble<T>> {
    let mut r = Reader::open(bytes, KIND_ENSEMBLE)?;
    let count = r.u32()?;
    let loss = match r.u8()? {
        0 => ModelLoss::Mse,
        1 => ModelLoss::Nll,
        other => return Err(MeeeError::Checkpoint(format!("unknown loss code {other}"))),
    };
    let include_reward_in_variance = r.u8()? != 0;
    let learning_rate = r.f64()?;
    let mut members = Vec::with_capacity(count);
    for _ in 0..count {
        let seed = r.u64()?;
        let (sd, ad) = (r.u32()?, r.u32()?);
        let normalizer = Normalizer {
            input_mean: r.vector()?,
            input_std: r.vector()?,
            target_mean: r.vector()?,
            target_std: r.vector()?,
        };
        let mut m = ProbabilisticModel::from_net(r.net()?, sd, ad, seed)?;
        m.set_normalizer(normalizer)?;
        members.push(m);
    }
    r.finish()?;
    let config = EnsembleConfig {
        learning_rate,
        loss,
        include_reward_in_variance,
        parallel: false,
    };
    Ensemble::from_members(members, config)
}

pub fn save_policy<T: Scalar>(policy: &GaussianPolicy<T>, path: &Path) -> Result<()> {
    Ok(fs::write(path, policy_to_bytes(policy))?)
}

pub fn load_policy<T: Scalar>(path: &Path) -> Result<GaussianPolicy<T>> {
    policy_from_bytes(&fs::read(path)?)
}

pub fn save_ensemble<T: Scalar>(ensemble: &Ensemble<T>, path: &Path) -> Result<()> {
    Ok(fs::write(path, ensemble_to_bytes(ensemble))?)
}

pub fn load_ensemble<T: Scalar>(path: &Path) -> Result<Ensemble<T>> {
    ensemble_from_bytes(&fs::read(path)?)
}
