//! Loss, time-domain masking augmentation, learning-rate schedule and the
//! early-stopped training loop.

use alloc::format;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Graph, Var};
use crate::data::{DatasetSplit, EcgRecord};
use crate::dsp::stft::{stft_spectrogram, Spectrogram, StftConfig};
use crate::error::{Error, Result};
use crate::math;
use crate::metrics;
use crate::network::{FusionNetwork, NetworkConfig, Pass};
use crate::optim::{adam_step, AdamState};
use crate::params::{Gradients, ParamStore};
use crate::tensor::Tensor;

/// Lower and upper clamp applied to probabilities inside the loss.
pub const BCE_EPS: f64 = 1e-7;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum LossReduction {
    /// Sum over labels, mean over samples.
    #[default]
    PerSample,
    /// Mean over every sample-label pair.
    PerLabel,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub lr0: f64,
    pub lr_decay: f64,
    /// Epochs between learning-rate decays.
    pub decay_every: usize,
    pub patience: usize,
    pub mask_ratio: f64,
    pub mask_prob: f64,
    /// Number of windows the masked span is split into.
    pub mask_segments: usize,
    pub max_epochs: usize,
    pub seed: u64,
    pub loss_reduction: LossReduction,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 1024,
            lr0: 0.0002,
            lr_decay: 0.8,
            decay_every: 2,
            patience: 5,
            mask_ratio: 0.2,
            mask_prob: 0.8,
            mask_segments: 4,
            max_epochs: 50,
            seed: 0,
            loss_reduction: LossReduction::PerSample,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::config("batch_size must be at least 1"));
        }
        if !(self.lr0 > 0.0) || !self.lr0.is_finite() {
            return Err(Error::config(format!("lr0 must be positive, got {}", self.lr0)));
        }
        if !(self.lr_decay > 0.0 && self.lr_decay <= 1.0) {
            return Err(Error::config(format!("lr_decay must be in (0, 1], got {}", self.lr_decay)));
        }
        if self.decay_every == 0 || self.patience == 0 || self.mask_segments == 0 {
            return Err(Error::config("decay_every, patience and mask_segments must be at least 1"));
        }
        if !(0.0..1.0).contains(&self.mask_ratio) {
            return Err(Error::config(format!("mask_ratio must be in [0, 1), got {}", self.mask_ratio)));
        }
        if !(0.0..=1.0).contains(&self.mask_prob) {
            return Err(Error::config(format!("mask_prob must be in [0, 1], got {}", self.mask_prob)));
        }
        Ok(())
    }
}

/// `lr0 · decay^⌊epoch / decay_every⌋`, evaluated as repeated
/// multiplication so it matches a step scheduler bit for bit.
pub fn lr_at_epoch(cfg: &TrainConfig, epoch: usize) -> f64 {
    (0..epoch / cfg.decay_every).fold(cfg.lr0, |lr, _| lr * cfg.lr_decay)
}

fn bce_normalizer(n: usize, c: usize, reduction: LossReduction) -> f64 {
    match reduction {
        LossReduction::PerSample => n as f64,
        LossReduction::PerLabel => (n * c) as f64,
    }
}

/// Binary cross-entropy of probabilities `p` against labels `y`.
pub fn bce_loss(p: &[Vec<f64>], y: &[Vec<u8>], reduction: LossReduction) -> Result<f64> {
    let n = p.len();
    let c = p.first().ok_or(Error::Empty)?.len();
    if y.len() != n || p.iter().any(|r| r.len() != c) || y.iter().any(|r| r.len() != c) {
        return Err(Error::shape("bce_loss", &[n, c], &[y.len(), y.first().map_or(0, Vec::len)]));
    }
    let mut total = 0.0;
    for (pr, yr) in p.iter().zip(y) {
        for (&pv, &yv) in pr.iter().zip(yr) {
            let q = pv.clamp(BCE_EPS, 1.0 - BCE_EPS);
            total += if yv != 0 { math::ln(q) } else { math::ln(1.0 - q) };
        }
    }
    Ok(-total / bce_normalizer(n, c, reduction))
}

/// Graph version of [`bce_loss`]; `p` is an `N × C` node, `y` holds 0/1.
pub fn bce_loss_var(g: &mut Graph, p: Var, y: &Tensor, reduction: LossReduction) -> Result<Var> {
    if g.shape(p) != y.shape() || y.rank() != 2 {
        return Err(Error::shape("bce_loss", g.shape(p), y.shape()));
    }
    let (n, c) = (y.shape()[0], y.shape()[1]);
    let q = g.clamp(p, BCE_EPS, 1.0 - BCE_EPS)?;
    let log_q = g.log(q)?;
    let one_minus = g.affine(q, -1.0, 1.0)?;
    let log_one_minus = g.log(one_minus)?;
    let pos = g.constant(y.clone());
    let neg = g.constant(y.map(|v| 1.0 - v));
    let a = g.mul(pos, log_q)?;
    let b = g.mul(neg, log_one_minus)?;
    let terms = g.add(a, b)?;
    let total = g.sum(terms)?;
    g.scale(total, -1.0 / bce_normalizer(n, c, reduction))
}

/// Signals whose leading axis is time and can have time spans zeroed.
pub trait TimeMaskable {
    fn time_len(&self) -> usize;
    /// Zeroes `[start, start + len)` on every channel.
    fn zero_span(&mut self, start: usize, len: usize);
}

impl TimeMaskable for EcgRecord {
    fn time_len(&self) -> usize {
        self.n_samples()
    }

    fn zero_span(&mut self, start: usize, len: usize) {
        let leads = self.n_leads();
        self.samples_mut()[start * leads..(start + len) * leads].fill(0.0);
    }
}

impl TimeMaskable for Spectrogram {
    fn time_len(&self) -> usize {
        self.frames()
    }

    fn zero_span(&mut self, start: usize, len: usize) {
        let width = self.leads() * self.bins();
        self.values_mut()[start * width..(start + len) * width].fill(0.0);
    }
}

/// Non-overlapping windows covering exactly `round(ratio·T)` steps, split
/// into up to `segments` near-equal parts at uniformly random positions.
pub fn mask_windows<R: Rng + ?Sized>(t_len: usize, ratio: f64, segments: usize, rng: &mut R) -> Vec<(usize, usize)> {
    let total = (math::round(ratio * t_len as f64) as usize).min(t_len);
    if total == 0 {
        return Vec::new();
    }
    let segments = segments.clamp(1, total);
    let lengths: Vec<usize> = (0..segments)
        .map(|i| total / segments + usize::from(i < total % segments))
        .collect();
    // Distribute the unmasked steps into gaps before each window.
    let free = t_len - total;
    let mut offsets: Vec<usize> = (0..segments).map(|_| rng.random_range(0..=free)).collect();
    offsets.sort_unstable();
    let mut consumed = 0;
    offsets
        .iter()
        .zip(&lengths)
        .map(|(&gap, &len)| {
            let start = gap + consumed;
            consumed += len;
            (start, len)
        })
        .collect()
}

/// A copy of `x` with random time windows zeroed across all channels.
pub fn random_mask<T, R>(x: &T, ratio: f64, segments: usize, rng: &mut R) -> T
where
    T: TimeMaskable + Clone,
    R: Rng + ?Sized,
{
    let mut out = x.clone();
    for (start, len) in mask_windows(x.time_len(), ratio, segments, rng) {
        out.zero_span(start, len);
    }
    out
}

/// Decides per batch whether to mask and draws the masks.
#[derive(Debug, Clone)]
pub struct Augmenter {
    pub ratio: f64,
    pub prob: f64,
    pub segments: usize,
    rng: ChaCha8Rng,
}

impl Augmenter {
    pub fn new(ratio: f64, prob: f64, segments: usize, seed: u64) -> Self {
        Self {
            ratio,
            prob,
            segments,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    /// True when the next batch should be masked.
    pub fn gate(&mut self) -> bool {
        self.prob > 0.0 && self.ratio > 0.0 && self.rng.random_bool(self.prob)
    }

    pub fn mask<T: TimeMaskable + Clone>(&mut self, x: &T) -> T {
        random_mask(x, self.ratio, self.segments, &mut self.rng)
    }
}

/// Wall-clock source for the training log.
pub trait Clock {
    fn now_secs(&self) -> f64;
}

/// A clock that never advances; keeps logs reproducible.
#[derive(Debug, Clone, Copy, Default)]
pub struct NoClock;

impl Clock for NoClock {
    fn now_secs(&self) -> f64 {
        0.0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_accuracy: f64,
    /// NaN when no validation class has both label values.
    pub val_auc: f64,
    pub lr: f64,
    pub batches: usize,
    pub masked_batches: usize,
    pub wall_secs: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrainLog {
    pub epochs: Vec<EpochLog>,
    pub best_epoch: Option<usize>,
    pub stopped_early: bool,
}

impl TrainLog {
    pub fn best(&self) -> Option<&EpochLog> {
        self.best_epoch.map(|e| &self.epochs[e])
    }
}

/// Log-magnitude spectrograms of every record.
pub fn spectrograms(records: &[EcgRecord], stft: &StftConfig) -> Result<Vec<Spectrogram>> {
    records.iter().map(|r| stft_spectrogram(r, stft)).collect()
}

/// Evaluation-mode probabilities for each spectrogram.
pub fn predict_all(net: &FusionNetwork, specs: &[Spectrogram]) -> Result<Vec<Vec<f64>>> {
    specs.iter().map(|s| net.predict(s)).collect()
}

fn labels_of(records: &[EcgRecord]) -> Vec<Vec<u8>> {
    records.iter().map(|r| r.labels.clone()).collect()
}

/// Everything `fit` needs besides the configurations.
pub struct FitInputs<'a> {
    pub train: &'a [EcgRecord],
    /// Unmasked spectrograms aligned with `train`.
    pub train_specs: &'a [Spectrogram],
    pub val_specs: &'a [Spectrogram],
    pub val_labels: &'a [Vec<u8>],
}

/// Trains on `split.train`, early-stopping on validation macro AUC, and
/// returns the network at its best validation epoch.
pub fn fit(
    split: &DatasetSplit,
    net_cfg: &NetworkConfig,
    cfg: &TrainConfig,
    stft: &StftConfig,
    clock: &dyn Clock,
    on_epoch: &mut dyn FnMut(&EpochLog),
) -> Result<(FusionNetwork, TrainLog)> {
    let train_specs = spectrograms(&split.train, stft)?;
    let val_specs = spectrograms(&split.validation, stft)?;
    let val_labels = labels_of(&split.validation);
    let inputs = FitInputs {
        train: &split.train,
        train_specs: &train_specs,
        val_specs: &val_specs,
        val_labels: &val_labels,
    };
    fit_prepared(&inputs, net_cfg, cfg, stft, clock, on_epoch)
}

/// A network with its optimizer state; one [`Trainer::step`] per batch.
#[derive(Debug, Clone)]
pub struct Trainer {
    pub net: FusionNetwork,
    adam: AdamState,
    grads: Gradients,
    reduction: LossReduction,
}

impl Trainer {
    pub fn new(net: FusionNetwork, reduction: LossReduction) -> Self {
        Self {
            adam: AdamState::new(net.params().tensors()),
            grads: Gradients::zeros_like(net.params()),
            net,
            reduction,
        }
    }

    /// Mean loss of the batch before the update. Each example gets its own
    /// graph; gradients are averaged over the batch, then one Adam step is
    /// taken. Nothing is updated if any loss or gradient is non-finite.
    pub fn step(&mut self, batch: &[(&Spectrogram, &[u8])], lr: f64, pass: &mut Pass<'_>) -> Result<f64> {
        if batch.is_empty() {
            return Err(Error::Empty);
        }
        self.grads.zero();
        let scale = 1.0 / batch.len() as f64;
        let mut total = 0.0;
        for (spec, labels) in batch {
            let y = Tensor::row(&labels.iter().map(|&v| f64::from(v)).collect::<Vec<_>>());
            let mut g = Graph::new();
            let bound = self.net.params().bind(&mut g);
            let p = self.net.forward(&mut g, &bound, spec, pass)?;
            let loss = bce_loss_var(&mut g, p, &y, self.reduction)?;
            let loss = g.scale(loss, scale)?;
            total += g.value(loss).item();
            g.backward(loss)?;
            self.grads.accumulate(&g, &bound);
        }
        if !total.is_finite() {
            return Err(Error::NonFinite { op: "batch loss".into() });
        }
        adam_step(self.net.params_mut().tensors_mut(), self.grads.as_slice(), &mut self.adam, lr)?;
        Ok(total)
    }
}

/// Purpose-specific random streams derived from one seed.
fn stream(seed: u64, purpose: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(purpose);
    rng
}

pub fn fit_prepared(
    inputs: &FitInputs<'_>,
    net_cfg: &NetworkConfig,
    cfg: &TrainConfig,
    stft: &StftConfig,
    clock: &dyn Clock,
    on_epoch: &mut dyn FnMut(&EpochLog),
) -> Result<(FusionNetwork, TrainLog)> {
    cfg.validate()?;
    net_cfg.validate()?;
    if inputs.train.is_empty() || inputs.val_specs.is_empty() {
        return Err(Error::config("training and validation sets must both be non-empty"));
    }
    if inputs.train_specs.len() != inputs.train.len() || inputs.val_labels.len() != inputs.val_specs.len() {
        return Err(Error::config("spectrograms are not aligned with their records"));
    }
    if let Some(r) = inputs.train.iter().find(|r| r.n_classes() != net_cfg.n_classes) {
        return Err(Error::config(format!(
            "record {} has {} labels but the network has {} classes",
            r.record_id,
            r.n_classes(),
            net_cfg.n_classes
        )));
    }

    let mut shuffle_rng = stream(cfg.seed, 2);
    let mut dropout_rng = stream(cfg.seed, 3);
    let mut augmenter = Augmenter::new(cfg.mask_ratio, cfg.mask_prob, cfg.mask_segments, cfg.seed);
    augmenter.rng.set_stream(4);

    let mut trainer = Trainer::new(FusionNetwork::new(net_cfg.clone(), &mut stream(cfg.seed, 1))?, cfg.loss_reduction);
    let mut log = TrainLog::default();
    let mut best: Option<(f64, ParamStore)> = None;
    let mut order: Vec<usize> = (0..inputs.train.len()).collect();
    let start = clock.now_secs();

    for epoch in 0..cfg.max_epochs {
        let lr = lr_at_epoch(cfg, epoch);
        order.shuffle(&mut shuffle_rng);
        let mut loss_sum = 0.0;
        let (mut batches, mut masked_batches) = (0, 0);
        for (batch, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let masked = augmenter.gate();
            masked_batches += usize::from(masked);
            batches += 1;
            let masked_specs = if masked {
                chunk
                    .iter()
                    .map(|&i| stft_spectrogram(&augmenter.mask(&inputs.train[i]), stft))
                    .collect::<Result<Vec<_>>>()?
            } else {
                Vec::new()
            };
            let examples: Vec<(&Spectrogram, &[u8])> = chunk
                .iter()
                .enumerate()
                .map(|(j, &i)| {
                    let spec = if masked { &masked_specs[j] } else { &inputs.train_specs[i] };
                    (spec, inputs.train[i].labels.as_slice())
                })
                .collect();
            let batch_loss = trainer
                .step(&examples, lr, &mut Pass::Train(&mut dropout_rng))
                .map_err(|e| if e.is_numeric() { Error::NonFiniteLoss { epoch, batch } } else { e })?;
            loss_sum += batch_loss * chunk.len() as f64;
        }

        let probs = predict_all(&trainer.net, inputs.val_specs)?;
        let yhat = metrics::threshold_predict(&probs, 0.5);
        let val_accuracy = metrics::multilabel_accuracy(&yhat, inputs.val_labels)?;
        let val_auc = match metrics::macro_auc(&probs, inputs.val_labels) {
            Ok(a) => a.mean,
            Err(Error::NoValidClass) => f64::NAN,
            Err(e) => return Err(e),
        };
        let row = EpochLog {
            epoch,
            train_loss: loss_sum / inputs.train.len() as f64,
            val_accuracy,
            val_auc,
            lr,
            batches,
            masked_batches,
            wall_secs: clock.now_secs() - start,
        };
        on_epoch(&row);
        log.epochs.push(row);

        let improved = match &best {
            None => true,
            Some((auc, _)) => val_auc > *auc || (auc.is_nan() && !val_auc.is_nan()),
        };
        if improved {
            best = Some((val_auc, trainer.net.params().clone()));
            log.best_epoch = Some(epoch);
        }
        let best_epoch = log.best_epoch.unwrap_or(epoch);
        if epoch - best_epoch >= cfg.patience {
            log.stopped_early = epoch + 1 < cfg.max_epochs;
            break;
        }
    }

    let mut net = trainer.net;
    if let Some((_, params)) = best {
        *net.params_mut() = params;
    }
    Ok((net, log))
}
