//! Mini-batch Adam training with early stopping on validation correlation.

use rand::seq::SliceRandom;

use crate::analysis::pearson_cc;
use crate::cnn::adam::{AdamConfig, TrainState};
use crate::cnn::model::CnnModel;
use crate::cnn::network::{self, batch_gradient, batch_objective, Regularization};
use crate::error::{Error, Result};
use crate::rgc::LabeledDataset;
use crate::stimulus::{indexed_rng, Frame};

/// Fractions of a dataset assigned to training, validation and test.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitFractions {
    pub train: f64,
    pub val: f64,
    pub test: f64,
}

impl Default for SplitFractions {
    fn default() -> Self {
        Self {
            train: 0.90,
            val: 0.05,
            test: 0.05,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub l2_weights: f64,
    pub l1_activations: f64,
    /// Epochs without a new best validation CC before stopping.
    pub patience: usize,
    pub seed: u64,
    pub split: SplitFractions,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            batch_size: 256,
            max_epochs: 50,
            l2_weights: 1e-3,
            l1_activations: 1e-3,
            patience: 10,
            seed: 4,
            split: SplitFractions::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let s = self.split;
        if !(s.train > 0.0 && s.val > 0.0 && s.test > 0.0) || ((s.train + s.val + s.test) - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!(
                "split fractions must be positive and sum to 1, got {s:?}"
            )));
        }
        if self.batch_size == 0 || self.patience == 0 || self.max_epochs == 0 {
            return Err(Error::Config(
                "batch size, patience and epoch count must all be at least 1".into(),
            ));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!("bad learning rate {}", self.learning_rate)));
        }
        self.regularization().validate()
    }

    pub fn regularization(&self) -> Regularization {
        Regularization {
            l2_weights: self.l2_weights,
            l1_activations: self.l1_activations,
        }
    }
}

/// A contiguous, borrowed slice of a [`LabeledDataset`].
#[derive(Debug, Clone, Copy)]
pub struct DatasetView<'a> {
    pub frames: &'a [Frame],
    pub labels: &'a [u8],
    pub rates: Option<&'a [f64]>,
    /// Index of the first sample in the parent dataset.
    pub offset: usize,
}

impl<'a> DatasetView<'a> {
    pub fn whole(data: &'a LabeledDataset) -> Self {
        Self {
            frames: data.frames(),
            labels: data.labels(),
            rates: data.rates(),
            offset: 0,
        }
    }

    fn range(data: &'a LabeledDataset, start: usize, end: usize) -> Self {
        Self {
            frames: &data.frames()[start..end],
            labels: &data.labels()[start..end],
            rates: data.rates().map(|r| &r[start..end]),
            offset: start,
        }
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    /// Analytic (or trial-averaged) rates when present, spike counts otherwise.
    pub fn reference_rates(&self) -> Vec<f64> {
        match self.rates {
            Some(r) => r.to_vec(),
            None => self.labels.iter().map(|&l| f64::from(l)).collect(),
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct Splits<'a> {
    pub train: DatasetView<'a>,
    pub val: DatasetView<'a>,
    pub test: DatasetView<'a>,
}

/// Minimum dataset length accepted by [`split_dataset`].
pub const MIN_SPLIT_LEN: usize = 100;

/// Cuts the dataset into consecutive train / validation / test blocks.
pub fn split_dataset<'a>(data: &'a LabeledDataset, config: &TrainConfig) -> Result<Splits<'a>> {
    config.validate()?;
    let n = data.len();
    if n < MIN_SPLIT_LEN {
        return Err(Error::Config(format!(
            "dataset of {n} samples is too small to split (need {MIN_SPLIT_LEN})"
        )));
    }
    let n_train = (n as f64 * config.split.train).round() as usize;
    let n_val = (n as f64 * config.split.val).round() as usize;
    if n_train == 0 || n_val == 0 || n_train + n_val >= n {
        return Err(Error::Config(format!("split {:?} leaves an empty part of {n}", config.split)));
    }
    Ok(Splits {
        train: DatasetView::range(data, 0, n_train),
        val: DatasetView::range(data, n_train, n_train + n_val),
        test: DatasetView::range(data, n_train + n_val, n),
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochRecord {
    /// 1-based epoch number.
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    /// NaN when the correlation is undefined.
    pub val_cc: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrainHistory {
    pub records: Vec<EpochRecord>,
    /// Index into `records` of the epoch whose parameters were returned.
    pub best: Option<usize>,
    /// Validation CC of the untrained model (NaN if undefined).
    pub initial_val_cc: f64,
}

impl TrainHistory {
    pub fn best_record(&self) -> Option<&EpochRecord> {
        self.best.map(|i| &self.records[i])
    }
}

/// Trains `model` on the training split and returns the parameters of the
/// epoch with the best validation CC.
pub fn train(model: CnnModel, data: &LabeledDataset, config: &TrainConfig) -> Result<(CnnModel, TrainHistory)> {
    train_with(model, data, config, |_, _| {})
}

/// [`train`] with a callback invoked after every epoch.
pub fn train_with<F>(
    mut model: CnnModel,
    data: &LabeledDataset,
    config: &TrainConfig,
    mut on_epoch: F,
) -> Result<(CnnModel, TrainHistory)>
where
    F: FnMut(&EpochRecord, &CnnModel),
{
    let splits = split_dataset(data, config)?;
    let reg = config.regularization();
    let mut state = TrainState::new(
        &model,
        AdamConfig {
            learning_rate: config.learning_rate,
            ..AdamConfig::default()
        },
    );
    let val_reference = splits.val.reference_rates();
    let val_frames: Vec<&Frame> = splits.val.frames.iter().collect();
    let validate = |m: &CnnModel| -> Result<(f64, f64)> {
        let loss = batch_objective(m, &val_frames, splits.val.labels, &reg)?;
        let pred = network::rates(m, &val_frames)?;
        Ok((loss, pearson_cc(&pred, &val_reference).unwrap_or(f64::NAN)))
    };

    let initial = network::rates(&model, &val_frames)?;
    let mut history = TrainHistory {
        initial_val_cc: pearson_cc(&initial, &val_reference).unwrap_or(f64::NAN),
        ..Default::default()
    };
    let mut best_model = model.clone();
    let mut best_cc = f64::NEG_INFINITY;
    let mut stale = 0;
    let mut order: Vec<usize> = (0..splits.train.len()).collect();
    let mut frames: Vec<&Frame> = Vec::with_capacity(config.batch_size);
    let mut labels: Vec<u8> = Vec::with_capacity(config.batch_size);

    for epoch in 1..=config.max_epochs {
        let diverged = || Error::Diverged { epoch };
        order.sort_unstable();
        order.shuffle(&mut indexed_rng(config.seed, epoch as u64));
        let mut loss_sum = 0.0;
        for batch in order.chunks(config.batch_size) {
            frames.clear();
            labels.clear();
            frames.extend(batch.iter().map(|&i| &splits.train.frames[i]));
            labels.extend(batch.iter().map(|&i| splits.train.labels[i]));
            let (loss, grads) = match batch_gradient(&model, &frames, &labels, &reg) {
                Ok(v) => v,
                Err(Error::Domain(_)) => return Err(diverged()),
                Err(e) => return Err(e),
            };
            if !loss.is_finite() {
                return Err(diverged());
            }
            loss_sum += loss * batch.len() as f64;
            state.step(&mut model, &grads)?;
        }
        if !model.all_finite() {
            return Err(diverged());
        }
        let (val_loss, val_cc) = match validate(&model) {
            Ok(v) => v,
            Err(Error::Domain(_)) => return Err(diverged()),
            Err(e) => return Err(e),
        };
        let record = EpochRecord {
            epoch,
            train_loss: loss_sum / splits.train.len() as f64,
            val_loss,
            val_cc,
        };
        if !record.train_loss.is_finite() || !val_loss.is_finite() {
            return Err(diverged());
        }
        history.records.push(record);
        on_epoch(&record, &model);
        if val_cc > best_cc {
            best_cc = val_cc;
            best_model = model.clone();
            history.best = Some(history.records.len() - 1);
            stale = 0;
        } else {
            stale += 1;
            if stale >= config.patience {
                break;
            }
        }
    }
    if history.best.is_none() {
        best_model = model;
    }
    Ok((best_model, history))
}

/// Predicted rate for every frame.
pub fn predict_rates(model: &CnnModel, frames: &[Frame]) -> Result<Vec<f64>> {
    let refs: Vec<&Frame> = frames.iter().collect();
    network::rates(model, &refs)
}

/// Pearson CC between predicted rates and the view's reference rates.
pub fn evaluate_cc(model: &CnnModel, test: &DatasetView<'_>) -> Result<f64> {
    let pred = predict_rates(model, test.frames)?;
    pearson_cc(&pred, &test.reference_rates())
}
