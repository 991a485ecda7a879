//! Fully connected surrogate `75 -> 50 -> 50 -> 50 -> 50 -> 7` with ReLU
//! hidden layers, mapping a neighborhood descriptor to the Cholesky factor of
//! the homogenized elasticity matrix and the volume fraction.
//!
//! The three diagonal outputs are clipped from below at [`DIAG_FLOOR`], so
//! every prediction reconstructs a positive semi-definite `C = L L^T`.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::adam::Adam;
use crate::dataset::{CholeskyFactor, Sample, Splits, INPUT_DIM, TARGET_DIM};
use crate::error::{Error, Result};
use crate::homogenize::ElasticityMatrix;
use crate::io::{self, Header};

pub const LAYER_SIZES: [usize; 6] = [INPUT_DIM, 50, 50, 50, 50, TARGET_DIM];
pub const DIAG_FLOOR: f64 = 1e-6;
/// Output slots of `L00`, `L11`, `L22`.
pub const DIAG_SLOTS: [usize; 3] = [0, 2, 5];

const MODEL_MAGIC: &[u8; 8] = b"VRTMODL1";
pub const MODEL_FORMAT: &str = "voroto-mlp/1";

/// Anything that maps a neighborhood descriptor to `(C, v)`.
pub trait ConstitutiveModel: Sync {
    fn predict(&self, input: &[f64; INPUT_DIM]) -> Result<(ElasticityMatrix, f64)>;
}

/// Weights of the surrogate, flattened layer by layer as `W` (row-major,
/// `out x in`) followed by `b`.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpModel {
    params: Vec<f64>,
    /// Training metadata echoed into the model file.
    pub meta: Header,
}

fn layer_offsets() -> [(usize, usize, usize, usize); 5] {
    let mut out = [(0, 0, 0, 0); 5];
    let mut off = 0;
    for l in 0..5 {
        let (n_in, n_out) = (LAYER_SIZES[l], LAYER_SIZES[l + 1]);
        out[l] = (n_in, n_out, off, off + n_in * n_out);
        off += n_in * n_out + n_out;
    }
    out
}

pub fn param_count() -> usize {
    let (_, n_out, _, b) = layer_offsets()[4];
    b + n_out
}

/// Network output after the diagonal clip.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Prediction {
    pub raw: [f64; TARGET_DIM],
    pub factor: CholeskyFactor,
    pub volume: f64,
}

impl Prediction {
    fn from_raw(raw: [f64; TARGET_DIM]) -> Self {
        let mut l: [f64; 6] = raw[..6].try_into().expect("six");
        for s in DIAG_SLOTS {
            l[s] = l[s].max(DIAG_FLOOR);
        }
        Self {
            raw,
            factor: CholeskyFactor(l),
            volume: raw[6],
        }
    }

    /// Post-clip output vector.
    pub fn output(&self) -> [f64; TARGET_DIM] {
        let mut o = [0.0; TARGET_DIM];
        o[..6].copy_from_slice(&self.factor.0);
        o[6] = self.volume;
        o
    }

    pub fn elasticity(&self) -> ElasticityMatrix {
        self.factor.reconstruct()
    }
}

/// Activations of one forward pass, kept for the reverse pass.
#[derive(Debug, Clone)]
pub struct Tape {
    acts: Vec<Vec<f64>>,
}

impl Tape {
    pub fn raw_output(&self) -> [f64; TARGET_DIM] {
        self.acts[5][..].try_into().expect("output width")
    }

    pub fn prediction(&self) -> Prediction {
        Prediction::from_raw(self.raw_output())
    }

    /// Which hidden units are active and which diagonal outputs are above
    /// the floor. Equal patterns mean the network is smooth between inputs.
    pub fn active_mask(&self) -> Vec<bool> {
        let raw = self.raw_output();
        self.acts[1..5]
            .iter()
            .flatten()
            .map(|a| *a > 0.0)
            .chain(DIAG_SLOTS.iter().map(|s| raw[*s] > DIAG_FLOOR))
            .collect()
    }
}

impl MlpModel {
    pub fn zeros() -> Self {
        Self {
            params: vec![0.0; param_count()],
            meta: Header::new(),
        }
    }

    /// He-style uniform initialization `U(-sqrt(6/fan_in), sqrt(6/fan_in))`,
    /// zero biases.
    pub fn random(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = vec![0.0; param_count()];
        for (n_in, _, w, b) in layer_offsets() {
            let lim = (6.0 / n_in as f64).sqrt();
            for p in &mut params[w..b] {
                *p = rng.random_range(-lim..lim);
            }
        }
        Self {
            params,
            meta: Header::new(),
        }
    }

    pub fn from_params(params: Vec<f64>) -> Result<Self> {
        if params.len() != param_count() {
            return Err(Error::InvalidParameter(format!(
                "expected {} parameters, got {}",
                param_count(),
                params.len()
            )));
        }
        Ok(Self {
            params,
            meta: Header::new(),
        })
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn record(&self, input: &[f64; INPUT_DIM]) -> Result<Tape> {
        if let Some(i) = input.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("surrogate input slot {i}")));
        }
        Ok(self.record_unchecked(input))
    }

    fn record_unchecked(&self, input: &[f64]) -> Tape {
        let mut acts = Vec::with_capacity(6);
        acts.push(input.to_vec());
        for (l, (n_in, n_out, w, b)) in layer_offsets().into_iter().enumerate() {
            let x = &acts[l];
            let mut y = Vec::with_capacity(n_out);
            for o in 0..n_out {
                let row = &self.params[w + o * n_in..w + (o + 1) * n_in];
                let mut s = self.params[b + o];
                for (wi, xi) in row.iter().zip(x) {
                    s += wi * xi;
                }
                y.push(if l < 4 { s.max(0.0) } else { s });
            }
            acts.push(y);
        }
        Tape { acts }
    }

    pub fn forward(&self, input: &[f64; INPUT_DIM]) -> Result<Prediction> {
        Ok(self.record(input)?.prediction())
    }

    /// Reverse pass from a gradient on the raw (pre-clip) outputs. Adds the
    /// parameter gradient into `param_grad` when given; returns the input
    /// gradient.
    fn backprop(
        &self,
        tape: &Tape,
        grad_raw: &[f64],
        mut param_grad: Option<&mut [f64]>,
    ) -> Vec<f64> {
        let offsets = layer_offsets();
        let mut delta = grad_raw.to_vec();
        for l in (0..5).rev() {
            let (n_in, n_out, w, b) = offsets[l];
            let x = &tape.acts[l];
            if let Some(g) = param_grad.as_deref_mut() {
                for o in 0..n_out {
                    let d = delta[o];
                    if d == 0.0 {
                        continue;
                    }
                    g[b + o] += d;
                    let row = &mut g[w + o * n_in..w + (o + 1) * n_in];
                    for (gi, xi) in row.iter_mut().zip(x) {
                        *gi += d * xi;
                    }
                }
            }
            let mut prev = vec![0.0; n_in];
            for o in 0..n_out {
                let d = delta[o];
                if d == 0.0 {
                    continue;
                }
                let row = &self.params[w + o * n_in..w + (o + 1) * n_in];
                for (p, wi) in prev.iter_mut().zip(row) {
                    *p += wi * d;
                }
            }
            if l > 0 {
                // ReLU: subgradient 0 at and below the kink
                for (p, a) in prev.iter_mut().zip(x) {
                    if *a <= 0.0 {
                        *p = 0.0;
                    }
                }
            }
            delta = prev;
        }
        delta
    }

    /// Vector-Jacobian product through the clip: given `dL/d(output)` on the
    /// post-clip outputs, returns `dL/d(input)`.
    pub fn vjp(&self, tape: &Tape, grad_output: &[f64; TARGET_DIM]) -> [f64; INPUT_DIM] {
        let raw = tape.raw_output();
        let mut g = *grad_output;
        for s in DIAG_SLOTS {
            if raw[s] <= DIAG_FLOOR {
                g[s] = 0.0;
            }
        }
        self.backprop(tape, &g, None)
            .try_into()
            .expect("input width")
    }

    /// Full Jacobian of the post-clip outputs, `[output][input]`.
    pub fn input_gradient(&self, input: &[f64; INPUT_DIM]) -> Result<[[f64; INPUT_DIM]; TARGET_DIM]> {
        let tape = self.record(input)?;
        let mut jac = [[0.0; INPUT_DIM]; TARGET_DIM];
        for (o, row) in jac.iter_mut().enumerate() {
            let mut e = [0.0; TARGET_DIM];
            e[o] = 1.0;
            *row = self.vjp(&tape, &e);
        }
        Ok(jac)
    }

    pub fn header(&self) -> Header {
        let mut h = Header::new();
        let sizes: Vec<String> = LAYER_SIZES.iter().map(|s| s.to_string()).collect();
        h.push("format", MODEL_FORMAT)
            .push("layers", sizes.join(","))
            .push("activation", "relu")
            .push("diag_floor", DIAG_FLOOR)
            .push("param_count", param_count());
        h.extend(&self.meta);
        h
    }

    pub fn write(&self, w: &mut impl Write) -> Result<()> {
        io::write_header(w, MODEL_MAGIC, &self.header())?;
        io::write_u64(w, self.params.len() as u64)?;
        io::write_f64s(w, &self.params)
    }

    pub fn read(r: &mut impl Read) -> Result<Self> {
        let h = io::read_header(r, MODEL_MAGIC)?;
        if h.require("format")? != MODEL_FORMAT {
            return Err(Error::Format(format!("unsupported model format {:?}", h.get("format"))));
        }
        let sizes: Vec<String> = LAYER_SIZES.iter().map(|s| s.to_string()).collect();
        if h.require("layers")? != sizes.join(",") {
            return Err(Error::Format(format!("unexpected architecture {}", h.require("layers")?)));
        }
        let n = io::read_u64(r)? as usize;
        let mut model = Self::from_params(io::read_f64s(r, n)?)?;
        let skip = ["format", "layers", "activation", "diag_floor", "param_count"];
        for (k, v) in h.entries() {
            if !skip.contains(&k.as_str()) {
                model.meta.push(k.clone(), v);
            }
        }
        Ok(model)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        self.write(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::read(&mut BufReader::new(File::open(path)?))
    }
}

impl ConstitutiveModel for MlpModel {
    fn predict(&self, input: &[f64; INPUT_DIM]) -> Result<(ElasticityMatrix, f64)> {
        let p = self.forward(input)?;
        Ok((p.elasticity(), p.volume))
    }
}

/// Mean over samples of the squared error summed over the 7 components.
pub fn loss(predictions: &[[f64; TARGET_DIM]], targets: &[[f64; TARGET_DIM]]) -> Result<f64> {
    if predictions.len() != targets.len() {
        return Err(Error::InvalidParameter(format!(
            "{} predictions vs {} targets",
            predictions.len(),
            targets.len()
        )));
    }
    if predictions.is_empty() {
        return Ok(0.0);
    }
    let total: f64 = predictions
        .iter()
        .zip(targets)
        .map(|(p, t)| p.iter().zip(t).map(|(a, b)| (a - b) * (a - b)).sum::<f64>())
        .sum();
    Ok(total / predictions.len() as f64)
}

/// Loss of the (clipped) model predictions over a sample set.
pub fn evaluate(model: &MlpModel, samples: &[Sample]) -> f64 {
    if samples.is_empty() {
        return 0.0;
    }
    let total: f64 = samples
        .iter()
        .map(|s| {
            let out = model.record_unchecked(&s.input).prediction().output();
            out.iter()
                .zip(&s.target)
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
        })
        .sum();
    total / samples.len() as f64
}

/// Samples below this volume fraction are left out of relative errors.
pub const ACCURACY_MIN_VOLUME: f64 = 0.01;

/// Held-out accuracy: medians of per-sample relative errors.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Accuracy {
    /// `||C_pred - C||_F / ||C||_F`.
    pub c_median: f64,
    /// `|v_pred - v| / v`.
    pub v_median: f64,
    /// Samples counted.
    pub count: usize,
}

fn median(mut v: Vec<f64>) -> f64 {
    if v.is_empty() {
        return f64::NAN;
    }
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Relative errors of the reconstructed `C` and of `v` over the samples with
/// volume fraction at least [`ACCURACY_MIN_VOLUME`].
pub fn accuracy(model: &MlpModel, samples: &[Sample]) -> Accuracy {
    let mut ce = Vec::new();
    let mut ve = Vec::new();
    for s in samples.iter().filter(|s| s.volume_fraction() >= ACCURACY_MIN_VOLUME) {
        let p = model.record_unchecked(&s.input).prediction();
        let (c, t) = (p.elasticity(), s.factor().reconstruct());
        let mut diff = 0.0;
        for a in 0..3 {
            for b in 0..3 {
                diff += (c.0[a][b] - t.0[a][b]).powi(2);
            }
        }
        ce.push(diff.sqrt() / t.frobenius());
        ve.push((p.volume - s.volume_fraction()).abs() / s.volume_fraction());
    }
    Accuracy {
        count: ce.len(),
        c_median: median(ce),
        v_median: median(ve),
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Epochs without a new best validation loss before stopping.
    pub patience: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 5e-5,
            batch_size: 64,
            max_epochs: 300,
            patience: 20,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite())
            || self.batch_size == 0
            || self.max_epochs == 0
            || self.patience == 0
        {
            return Err(Error::Config(format!("invalid training config {self:?}")));
        }
        Ok(())
    }

    pub fn write_header(&self, h: &mut Header) {
        h.push("train.learning_rate", self.learning_rate)
            .push("train.batch_size", self.batch_size)
            .push("train.max_epochs", self.max_epochs)
            .push("train.patience", self.patience)
            .push("train.seed", self.seed);
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train: f64,
    pub val: f64,
    pub test: f64,
}

/// Per-epoch losses; epoch 0 is the untrained model.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrainHistory {
    pub epochs: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub stopped_early: bool,
}

impl TrainHistory {
    pub fn write_csv(&self, w: &mut impl Write, header: &Header) -> Result<()> {
        w.write_all(header.to_comment().as_bytes())?;
        writeln!(w, "epoch,train,val,test")?;
        for r in &self.epochs {
            writeln!(w, "{},{:e},{:e},{:e}", r.epoch, r.train, r.val, r.test)?;
        }
        Ok(())
    }
}

/// Mini-batch Adam on the raw network outputs; returns the snapshot with the
/// best validation loss.
pub fn train(splits: &Splits, config: &TrainConfig) -> Result<(MlpModel, TrainHistory)> {
    config.validate()?;
    if splits.train.is_empty() || splits.val.is_empty() {
        return Err(Error::Config("training and validation sets must be non-empty".into()));
    }
    let mut model = MlpModel::random(config.seed);
    let mut opt = Adam::new(param_count(), config.learning_rate);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x5eed_ba7c);
    let mut order: Vec<usize> = (0..splits.train.len()).collect();
    let mut grad = vec![0.0; param_count()];

    let record = |epoch: usize, m: &MlpModel| EpochRecord {
        epoch,
        train: evaluate(m, &splits.train),
        val: evaluate(m, &splits.val),
        test: evaluate(m, &splits.test),
    };
    let mut history = TrainHistory::default();
    history.epochs.push(record(0, &model));
    let mut best = (history.epochs[0].val, model.clone(), 0usize);

    for epoch in 1..=config.max_epochs {
        order.shuffle(&mut rng);
        for batch in order.chunks(config.batch_size) {
            grad.iter_mut().for_each(|g| *g = 0.0);
            let scale = 2.0 / batch.len() as f64;
            for &i in batch {
                let s = &splits.train[i];
                let tape = model.record_unchecked(&s.input);
                let raw = tape.raw_output();
                let g: Vec<f64> = raw
                    .iter()
                    .zip(&s.target)
                    .map(|(p, t)| scale * (p - t))
                    .collect();
                model.backprop(&tape, &g, Some(&mut grad));
            }
            opt.step(&mut model.params, &grad);
        }
        let rec = record(epoch, &model);
        if !(rec.train.is_finite() && rec.val.is_finite()) {
            return Err(Error::Diverged {
                epoch,
                detail: format!("train loss {} val loss {}", rec.train, rec.val),
            });
        }
        log::debug!(
            "epoch {epoch}: train {:.4e} val {:.4e} test {:.4e}",
            rec.train,
            rec.val,
            rec.test
        );
        history.epochs.push(rec);
        if rec.val < best.0 {
            best = (rec.val, model.clone(), epoch);
        } else if epoch - best.2 >= config.patience {
            history.stopped_early = true;
            break;
        }
    }
    let (_, mut model, best_epoch) = best;
    history.best_epoch = best_epoch;
    let mut meta = Header::new();
    config.write_header(&mut meta);
    meta.push("train.best_epoch", best_epoch)
        .push("train.epochs_run", history.epochs.len() - 1)
        .push("train.n_train", splits.train.len())
        .push("train.n_val", splits.val.len())
        .push("train.n_test", splits.test.len());
    model.meta = meta;
    Ok((model, history))
}
