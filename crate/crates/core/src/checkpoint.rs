//! Versioned binary checkpoints of a training run.
//!
//! Layout, all integers little-endian `u64` unless noted:
//!
//! ```text
//! magic "URNNGCKP", version u32
//! config (TOML string), vocabulary (string list)
//! parameters: count, then name, group u8, rank, dims, f64 data
//! best parameters: flag u8, then data per parameter in the same order
//! Adam: t, then m and v per parameter (length-prefixed f64 lists)
//! counters: theta_lr f64, decaying u8, epoch, batch_in_epoch, step,
//!           best_val (flag u8 + f64), alpha f64, epoch sums
//! history: count, then one record each
//! end marker "END."
//! ```
//!
//! Strings are length-prefixed UTF-8. The random state of a run is a pure
//! function of the seed (in the config) and the counters, so nothing else is
//! needed to resume bit-identically.

use std::io::Write;
use std::path::Path;

use crate::autodiff::{Group, ParamSet, Tensor};
use crate::config::{Mode, TrainConfig};
use crate::error::{Error, Result};
use crate::model::Model;
use crate::optim::Adam;
use crate::train::{EpochRecord, EpochSums, TrainState};
use crate::treebank::Vocabulary;

pub const MAGIC: &[u8; 8] = b"URNNGCKP";
pub const VERSION: u32 = 1;
const END: &[u8; 4] = b"END.";

struct Writer(Vec<u8>);

impl Writer {
    fn u8(&mut self, v: u8) {
        self.0.push(v);
    }
    fn u64(&mut self, v: u64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn usize(&mut self, v: usize) {
        self.u64(v as u64);
    }
    fn f64(&mut self, v: f64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn bool(&mut self, v: bool) {
        self.u8(u8::from(v));
    }
    fn str(&mut self, s: &str) {
        self.usize(s.len());
        self.0.extend_from_slice(s.as_bytes());
    }
    fn f64s(&mut self, xs: &[f64]) {
        self.usize(xs.len());
        xs.iter().for_each(|&x| self.f64(x));
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    at: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.buf.len() - self.at < n {
            return Err(Error::Checkpoint(format!("truncated file at byte {}", self.at)));
        }
        let s = &self.buf[self.at..self.at + n];
        self.at += n;
        Ok(s)
    }
    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn usize(&mut self) -> Result<usize> {
        let v = self.u64()?;
        usize::try_from(v).map_err(|_| Error::Checkpoint(format!("count {v} too large")))
    }
    /// A count of items each at least `min_bytes` long, checked against the
    /// remaining input so a corrupt length cannot trigger a huge allocation.
    fn count(&mut self, min_bytes: usize) -> Result<usize> {
        let n = self.usize()?;
        if n.saturating_mul(min_bytes.max(1)) > self.buf.len() - self.at {
            return Err(Error::Checkpoint(format!("truncated file at byte {}", self.at)));
        }
        Ok(n)
    }
    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn bool(&mut self) -> Result<bool> {
        match self.u8()? {
            0 => Ok(false),
            1 => Ok(true),
            b => Err(Error::Checkpoint(format!("invalid flag byte {b}"))),
        }
    }
    fn str(&mut self) -> Result<String> {
        let n = self.count(1)?;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| Error::Checkpoint("string is not UTF-8".into()))
    }
    fn f64s(&mut self) -> Result<Vec<f64>> {
        let n = self.count(8)?;
        (0..n).map(|_| self.f64()).collect()
    }
}

fn write_record(w: &mut Writer, r: &EpochRecord) {
    w.usize(r.epoch);
    w.str(r.mode.name());
    w.usize(r.batches);
    for v in [
        r.train_loss,
        r.train_elbo,
        r.train_recon,
        r.train_entropy,
        r.val_per_token,
        r.val_ppl,
        r.val_entropy,
        r.alpha,
        r.theta_lr,
    ] {
        w.f64(v);
    }
    w.bool(r.phi_trained);
    w.bool(r.collapse);
    w.bool(r.best);
}

fn read_record(r: &mut Reader<'_>) -> Result<EpochRecord> {
    let epoch = r.usize()?;
    let mode: Mode = r.str()?.parse().map_err(|e: Error| Error::Checkpoint(e.to_string()))?;
    let batches = r.usize()?;
    let mut f = [0.0; 9];
    for v in &mut f {
        *v = r.f64()?;
    }
    Ok(EpochRecord {
        epoch,
        mode,
        batches,
        train_loss: f[0],
        train_elbo: f[1],
        train_recon: f[2],
        train_entropy: f[3],
        val_per_token: f[4],
        val_ppl: f[5],
        val_entropy: f[6],
        alpha: f[7],
        theta_lr: f[8],
        phi_trained: r.bool()?,
        collapse: r.bool()?,
        best: r.bool()?,
    })
}

/// Serializes a training state.
pub fn to_bytes(state: &TrainState) -> Vec<u8> {
    let mut w = Writer(Vec::new());
    w.0.extend_from_slice(MAGIC);
    w.0.extend_from_slice(&VERSION.to_le_bytes());
    w.str(&state.config.to_toml());
    w.usize(state.vocab.len());
    for t in state.vocab.tokens() {
        w.str(t);
    }

    let params = &state.model.params;
    w.usize(params.len());
    for e in params.entries() {
        w.str(&e.name);
        w.u8(e.group.tag());
        w.usize(e.tensor.shape().len());
        e.tensor.shape().iter().for_each(|&d| w.usize(d));
        w.f64s(e.tensor.data());
    }
    match &state.best_params {
        Some(best) => {
            w.bool(true);
            for e in best.entries() {
                w.f64s(e.tensor.data());
            }
        }
        None => w.bool(false),
    }

    w.u64(state.adam.t);
    for (m, v) in state.adam.m.iter().zip(&state.adam.v) {
        w.f64s(m);
        w.f64s(v);
    }

    w.f64(state.theta_lr);
    w.bool(state.decaying);
    w.usize(state.epoch);
    w.usize(state.batch_in_epoch);
    w.u64(state.step);
    match state.best_val {
        Some(v) => {
            w.bool(true);
            w.f64(v);
        }
        None => w.bool(false),
    }
    w.f64(state.alpha);
    let s = &state.sums;
    w.u64(s.sentences);
    w.u64(s.tokens);
    for v in [s.loss, s.elbo, s.recon, s.entropy] {
        w.f64(v);
    }

    w.usize(state.history.len());
    for r in &state.history {
        write_record(&mut w, r);
    }
    w.0.extend_from_slice(END);
    w.0
}

/// Parses a checkpoint, checking parameter names and shapes against the
/// architecture its own config describes.
pub fn from_bytes(buf: &[u8]) -> Result<TrainState> {
    let mut r = Reader { buf, at: 0 };
    if r.take(MAGIC.len()).map_err(|_| Error::Checkpoint("not a checkpoint file".into()))? != MAGIC {
        return Err(Error::Checkpoint("not a checkpoint file".into()));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::Checkpoint(format!(
            "checkpoint format version {version}, this build reads version {VERSION}"
        )));
    }
    let config = TrainConfig::from_toml(&r.str()?).map_err(|e| Error::Checkpoint(format!("stored config: {e}")))?;
    let n_vocab = r.count(8)?;
    let tokens = (0..n_vocab).map(|_| r.str()).collect::<Result<Vec<_>>>()?;
    let reserved = Vocabulary::reserved();
    if tokens.len() < reserved.len() || tokens[..reserved.len()] != reserved.tokens()[..] {
        return Err(Error::Checkpoint("vocabulary lacks the reserved tokens".into()));
    }
    let vocab = Vocabulary::from_tokens(tokens[reserved.len()..].iter().cloned())
        .map_err(|e| Error::Checkpoint(format!("stored vocabulary: {e}")))?;

    let n_params = r.count(8)?;
    let mut params = ParamSet::new();
    for _ in 0..n_params {
        let name = r.str()?;
        let tag = r.u8()?;
        let group = Group::from_tag(tag).ok_or_else(|| Error::Checkpoint(format!("unknown group tag {tag}")))?;
        let rank = r.count(8)?;
        let shape = (0..rank).map(|_| r.usize()).collect::<Result<Vec<_>>>()?;
        let data = r.f64s()?;
        let tensor = Tensor::new(shape, data).map_err(|e| Error::Checkpoint(format!("tensor {name}: {e}")))?;
        params.add(&name, group, tensor).map_err(|e| Error::Checkpoint(e.to_string()))?;
    }
    let best_params = if r.bool()? {
        let mut best = params.clone();
        for id in params.ids() {
            let data = r.f64s()?;
            if data.len() != params.get(id).len() {
                return Err(Error::Checkpoint(format!("best copy of {} has the wrong size", params.entry(id).name)));
            }
            best.get_mut(id).data_mut().copy_from_slice(&data);
        }
        Some(best)
    } else {
        None
    };

    let t = r.u64()?;
    let (mut m, mut v) = (Vec::with_capacity(n_params), Vec::with_capacity(n_params));
    for id in params.ids() {
        let (mm, vv) = (r.f64s()?, r.f64s()?);
        let n = params.get(id).len();
        if (!mm.is_empty() && mm.len() != n) || mm.len() != vv.len() {
            return Err(Error::Checkpoint(format!("optimizer state for {} has the wrong size", params.entry(id).name)));
        }
        m.push(mm);
        v.push(vv);
    }
    let adam = Adam { m, v, t };

    let theta_lr = r.f64()?;
    let decaying = r.bool()?;
    let epoch = r.usize()?;
    let batch_in_epoch = r.usize()?;
    let step = r.u64()?;
    let best_val = if r.bool()? { Some(r.f64()?) } else { None };
    let alpha = r.f64()?;
    let sums = EpochSums {
        sentences: r.u64()?,
        tokens: r.u64()?,
        loss: r.f64()?,
        elbo: r.f64()?,
        recon: r.f64()?,
        entropy: r.f64()?,
    };
    let n_hist = r.count(8)?;
    let history = (0..n_hist).map(|_| read_record(&mut r)).collect::<Result<Vec<_>>>()?;
    if r.take(END.len())? != END {
        return Err(Error::Checkpoint("missing end marker".into()));
    }
    if r.at != buf.len() {
        return Err(Error::Checkpoint(format!("{} trailing bytes", buf.len() - r.at)));
    }

    let expected = Model::new(&config, vocab.len(), &mut rand::rngs::mock::StepRng::new(0, 0))?;
    if !expected.params.same_layout(&params) {
        return Err(Error::Checkpoint(format!(
            "parameter names or shapes do not match a {} model with this config and vocabulary",
            config.mode
        )));
    }
    let model = Model::from_params(params, &config)?;
    Ok(TrainState {
        config,
        vocab,
        model,
        adam,
        theta_lr,
        decaying,
        epoch,
        batch_in_epoch,
        step,
        best_val,
        best_params,
        sums,
        alpha,
        history,
    })
}

/// Writes to a temporary file next to `path`, then renames it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let name = path
        .file_name()
        .ok_or_else(|| Error::Config(format!("{} is not a file path", path.display())))?;
    let tmp = dir.join(format!(".{}.tmp{}", name.to_string_lossy(), std::process::id()));
    let result = (|| {
        let mut f = std::fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
        std::fs::rename(&tmp, path)
    })();
    if let Err(e) = result {
        let _ = std::fs::remove_file(&tmp);
        return Err(Error::io(path, e));
    }
    Ok(())
}

pub fn save(state: &TrainState, path: &Path) -> Result<()> {
    write_atomic(path, &to_bytes(state))
}

pub fn load(path: &Path) -> Result<TrainState> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    from_bytes(&bytes).map_err(|e| match e {
        Error::Checkpoint(msg) => Error::Checkpoint(format!("{}: {msg}", path.display())),
        e => e,
    })
}
