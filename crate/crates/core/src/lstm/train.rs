use std::io::Write;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::adamw::{adamw_step, AdamWConfig, Moments};
use super::network::{accumulate, argmax, forward, LstmParams, DEFAULT_DENSE, DEFAULT_HIDDEN};
use super::DetectorModel;
use crate::error::{Error, Result};
use crate::features::{Rows, ScalerParams, SplitDataset};

/// Samples per parallel gradient chunk. Chunk gradients are summed in chunk
/// order, so results do not depend on the thread count.
const GRAD_CHUNK: usize = 16;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrainConfig {
    pub hidden: usize,
    pub dense: usize,
    pub optimizer: AdamWConfig,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub min_delta: f64,
    pub patience: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            hidden: DEFAULT_HIDDEN,
            dense: DEFAULT_DENSE,
            optimizer: AdamWConfig::default(),
            batch_size: 64,
            max_epochs: 100,
            min_delta: 0.001,
            patience: 10,
            seed: 7,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let o = &self.optimizer;
        if self.hidden == 0
            || self.dense == 0
            || self.batch_size == 0
            || self.max_epochs == 0
            || self.patience == 0
        {
            return Err(Error::Config(
                "hidden, dense, batch_size, max_epochs and patience must be positive".into(),
            ));
        }
        let nonneg = [o.learning_rate, o.weight_decay, self.min_delta];
        if nonneg.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::Config(
                "learning rate, weight decay and min_delta must be finite and >= 0".into(),
            ));
        }
        if !(0.0..1.0).contains(&o.beta1) || !(0.0..1.0).contains(&o.beta2) || !(o.epsilon > 0.0) {
            return Err(Error::Config(
                "betas must lie in [0, 1) and epsilon must be positive".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_acc: f64,
    pub val_acc: f64,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub model: DetectorModel,
    pub history: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub stopped_early: bool,
}

pub fn write_history<W: Write>(history: &[EpochRecord], w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["epoch", "train_loss", "train_acc", "val_acc"])?;
    for r in history {
        out.write_record([
            r.epoch.to_string(),
            r.train_loss.to_string(),
            r.train_acc.to_string(),
            r.val_acc.to_string(),
        ])?;
    }
    out.flush()?;
    Ok(())
}

/// Fraction of windows whose argmax matches the label.
pub fn accuracy(params: &LstmParams, xs: &[Rows], ys: &[usize]) -> Result<f64> {
    if xs.is_empty() {
        return Ok(0.0);
    }
    let hits = xs
        .par_iter()
        .zip(ys.par_iter())
        .map(|(x, &y)| forward(params, x).map(|p| usize::from(argmax(&p) == y)))
        .collect::<Result<Vec<_>>>()?;
    Ok(hits.iter().sum::<usize>() as f64 / xs.len() as f64)
}

fn batch_gradient(params: &LstmParams, xs: &[Rows], ys: &[usize]) -> (f64, usize, LstmParams) {
    let scale = 1.0 / xs.len() as f64;
    let parts: Vec<(f64, usize, LstmParams)> = xs
        .par_chunks(GRAD_CHUNK)
        .zip(ys.par_chunks(GRAD_CHUNK))
        .map(|(cx, cy)| {
            let mut g = LstmParams::zeros(params.hidden, params.dense);
            let (loss, hits) = accumulate(params, cx, cy, scale, &mut g);
            (loss, hits, g)
        })
        .collect();
    let mut iter = parts.into_iter();
    let (mut loss, mut hits, mut grad) = iter.next().expect("non-empty batch");
    for (l, h, g) in iter {
        loss += l;
        hits += h;
        grad.add_assign(&g);
    }
    (loss, hits, grad)
}

fn unpack(windows: &[crate::features::FeatureWindow]) -> (Vec<Rows>, Vec<usize>) {
    windows.iter().map(|w| (w.rows, w.label.index())).unzip()
}

/// Mini-batch AdamW training with seeded per-epoch shuffling and early
/// stopping on validation accuracy. The split must already be scaled with
/// `scaler`, which is stored in the returned model.
pub fn train(
    split: &SplitDataset,
    scaler: ScalerParams,
    config: &TrainConfig,
) -> Result<TrainOutcome> {
    config.validate()?;
    if split.train.is_empty() || split.val.is_empty() {
        return Err(Error::InvalidInput(
            "training and validation sets must be non-empty".into(),
        ));
    }
    let (train_x, train_y) = unpack(&split.train);
    let (val_x, val_y) = unpack(&split.val);
    if train_x
        .iter()
        .chain(&val_x)
        .flatten()
        .flatten()
        .any(|v| !v.is_finite())
    {
        return Err(Error::NonFinite("training windows"));
    }

    let mut params = LstmParams::init(config.hidden, config.dense, config.seed);
    let mut moments = Moments::zeros_like(&params);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x5348_5546_464c_4531);
    let mut order: Vec<usize> = (0..train_x.len()).collect();
    let mut step = 0u64;

    let mut history = Vec::new();
    let mut best_params = params.clone();
    let mut best_val = f64::NEG_INFINITY;
    let mut best_epoch = 0;
    let mut reference = f64::NEG_INFINITY;
    let mut wait = 0;
    let mut stopped_early = false;

    let mut bx = Vec::with_capacity(config.batch_size);
    let mut by = Vec::with_capacity(config.batch_size);
    for epoch in 0..config.max_epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        let mut hits = 0;
        for batch in order.chunks(config.batch_size) {
            bx.clear();
            by.clear();
            bx.extend(batch.iter().map(|&i| train_x[i]));
            by.extend(batch.iter().map(|&i| train_y[i]));
            let (loss, h, grad) = batch_gradient(&params, &bx, &by);
            if !loss.is_finite() {
                return Err(Error::Diverged { epoch, loss });
            }
            step += 1;
            adamw_step(&mut params, &grad, &mut moments, step, &config.optimizer);
            loss_sum += loss;
            hits += h;
        }
        let train_loss = loss_sum / train_x.len() as f64;
        if !train_loss.is_finite() {
            return Err(Error::Diverged {
                epoch,
                loss: train_loss,
            });
        }
        let val_acc = accuracy(&params, &val_x, &val_y)?;
        history.push(EpochRecord {
            epoch,
            train_loss,
            train_acc: hits as f64 / train_x.len() as f64,
            val_acc,
        });

        if val_acc > best_val {
            best_val = val_acc;
            best_epoch = epoch;
            best_params.clone_from(&params);
        }
        if val_acc - config.min_delta > reference {
            reference = val_acc;
            wait = 0;
        } else {
            wait += 1;
            if wait >= config.patience {
                stopped_early = true;
                break;
            }
        }
    }
    Ok(TrainOutcome {
        model: DetectorModel {
            params: best_params,
            scaler,
        },
        history,
        best_epoch,
        stopped_early,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::{FeatureWindow, WindowOrigin};
    use crate::label::LabelId;
    use rand::Rng;

    fn toy(n: usize, seed: u64) -> Vec<FeatureWindow> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| {
                let sign: f64 = if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
                let rows: Rows = std::array::from_fn(|r| {
                    let mut row: [f64; 6] = std::array::from_fn(|_| rng.gen_range(-0.3..0.3));
                    row[1] = sign * (r as f64 + 1.0) * rng.gen_range(0.5..1.5);
                    row
                });
                let label = LabelId::new(if sign > 0.0 { 1 } else { 0 }).unwrap();
                FeatureWindow {
                    rows,
                    label,
                    origin: WindowOrigin {
                        rx: 0,
                        sender: 0,
                        first_time: 0.0,
                    },
                }
            })
            .collect()
    }

    fn small_config() -> TrainConfig {
        TrainConfig {
            hidden: 6,
            dense: 8,
            batch_size: 16,
            max_epochs: 100,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn separable_toy_reaches_full_accuracy() {
        let split = SplitDataset {
            train: toy(120, 1),
            val: toy(60, 2),
            fraction: 0.33,
            seed: 0,
        };
        let out = train(&split, ScalerParams::identity(), &small_config()).unwrap();
        let best = out.history.iter().map(|r| r.val_acc).fold(0.0, f64::max);
        assert_eq!(best, 1.0);
    }

    #[test]
    fn early_stop_returns_argmax_epoch() {
        let split = SplitDataset {
            train: toy(80, 3),
            val: toy(40, 4),
            fraction: 0.33,
            seed: 0,
        };
        let cfg = TrainConfig {
            patience: 2,
            ..small_config()
        };
        let out = train(&split, ScalerParams::identity(), &cfg).unwrap();
        assert!(out.history.len() <= cfg.max_epochs);
        if out.stopped_early {
            assert!(out.history.len() > cfg.patience);
        }
        let mut argmax = 0;
        for (k, r) in out.history.iter().enumerate() {
            if r.val_acc > out.history[argmax].val_acc {
                argmax = k;
            }
        }
        assert_eq!(out.best_epoch, argmax);
        let (vx, vy) = unpack(&split.val);
        assert_eq!(
            accuracy(&out.model.params, &vx, &vy).unwrap(),
            out.history[argmax].val_acc
        );
    }

    #[test]
    fn deterministic_and_zero_rate_is_frozen() {
        let split = SplitDataset {
            train: toy(50, 5),
            val: toy(20, 6),
            fraction: 0.33,
            seed: 0,
        };
        let cfg = TrainConfig {
            max_epochs: 3,
            ..small_config()
        };
        let a = train(&split, ScalerParams::identity(), &cfg).unwrap();
        let b = train(&split, ScalerParams::identity(), &cfg).unwrap();
        assert_eq!(a.model.params, b.model.params);

        let mut frozen = cfg;
        frozen.optimizer.learning_rate = 0.0;
        let out = train(&split, ScalerParams::identity(), &frozen).unwrap();
        let init = LstmParams::init(cfg.hidden, cfg.dense, cfg.seed);
        for (x, y) in out.model.params.tensors().iter().zip(init.tensors()) {
            let xb: Vec<u64> = x.data.iter().map(|v| v.to_bits()).collect();
            let yb: Vec<u64> = y.data.iter().map(|v| v.to_bits()).collect();
            assert_eq!(xb, yb);
        }
    }

    #[test]
    fn history_csv_header() {
        let mut buf = Vec::new();
        write_history(
            &[EpochRecord {
                epoch: 0,
                train_loss: 1.5,
                train_acc: 0.5,
                val_acc: 0.25,
            }],
            &mut buf,
        )
        .unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("epoch,train_loss,train_acc,val_acc\n0,1.5,0.5,0.25"));
    }
}
