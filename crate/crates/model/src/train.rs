//! Minibatch ADAM training with per-epoch history and divergence detection.

use std::io::Write;
use std::path::Path;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use stdn_nn::{Adam, LayerGraph, Mode, Tape, Tensor};

use crate::{ModelError, Result};

/// Loss above this multiple of the reference loss counts as diverging.
pub const DIVERGENCE_FACTOR: f64 = 10.0;
/// Consecutive diverging epochs that abort training.
pub const DIVERGENCE_PATIENCE: usize = 5;

/// Indexed examples that assemble into named input tensors plus a flat target.
pub trait Dataset {
    fn len(&self) -> usize;

    fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn batch(&self, indices: &[usize]) -> Result<(Vec<(String, Tensor)>, Vec<f64>)>;
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitOptions {
    pub epochs: usize,
    pub batch: usize,
    pub learning_rate: f64,
    /// Stop after this many optimizer steps, mid-epoch if needed.
    pub max_steps: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: Option<f64>,
    pub wall_ms: u128,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct History {
    pub records: Vec<EpochRecord>,
    pub steps: usize,
}

impl History {
    pub fn final_train_loss(&self) -> Option<f64> {
        self.records.last().map(|r| r.train_loss)
    }

    /// Writes one CSV line per epoch: `epoch,train_loss,val_loss,wall_ms`.
    pub fn write_log(&self, path: &Path) -> Result<()> {
        let io = |e| ModelError::io(path, e);
        let mut out = std::io::BufWriter::new(std::fs::File::create(path).map_err(io)?);
        writeln!(out, "epoch,train_loss,val_loss,wall_ms").map_err(io)?;
        for r in &self.records {
            let val = r.val_loss.map_or_else(String::new, |v| format!("{v:?}"));
            writeln!(out, "{},{:?},{val},{}", r.epoch, r.train_loss, r.wall_ms).map_err(io)?;
        }
        out.flush().map_err(io)
    }
}

fn inputs_ref(inputs: &[(String, Tensor)]) -> Vec<(&str, &Tensor)> {
    inputs.iter().map(|(k, v)| (k.as_str(), v)).collect()
}

/// Runs `graph` in inference mode and returns the flat values of `output`.
pub fn predict(graph: &LayerGraph, output: usize, inputs: &[(String, Tensor)]) -> Result<Vec<f64>> {
    let mut tape = Tape::new();
    let vars = graph.forward(&mut tape, &inputs_ref(inputs), Mode::Inference)?;
    Ok(tape.value(vars[output]).data().to_vec())
}

/// Mean squared error of `output` over a whole dataset, inference mode.
pub fn dataset_loss(graph: &LayerGraph, output: usize, data: &dyn Dataset, batch: usize) -> Result<f64> {
    let n = data.len();
    if n == 0 {
        return Err(ModelError::Config("empty dataset".into()));
    }
    let idx: Vec<usize> = (0..n).collect();
    let mut total = 0.0;
    let mut count = 0usize;
    for chunk in idx.chunks(batch.max(1)) {
        let (inputs, target) = data.batch(chunk)?;
        let pred = predict(graph, output, &inputs)?;
        total += pred.iter().zip(&target).map(|(p, t)| (p - t) * (p - t)).sum::<f64>();
        count += target.len();
    }
    Ok(total / count as f64)
}

/// Mean squared target, the loss of a constant zero prediction.
pub fn zero_loss(data: &dyn Dataset, batch: usize) -> Result<f64> {
    let idx: Vec<usize> = (0..data.len()).collect();
    let mut total = 0.0;
    let mut count = 0usize;
    for chunk in idx.chunks(batch.max(1)) {
        let (_, target) = data.batch(chunk)?;
        total += target.iter().map(|t| t * t).sum::<f64>();
        count += target.len();
    }
    Ok(total / count.max(1) as f64)
}

/// Minimizes the MSE of `output` against the dataset targets. Batches are
/// drawn from a seeded shuffle each epoch; dropout draws from the same stream.
///
/// Divergence is judged on the validation loss when there is a validation set
/// and on the training loss otherwise. The reference is the smaller of that
/// loss before the first step and the loss of predicting zero, so a network
/// that starts from diverged weights is still caught.
pub fn fit(
    graph: &mut LayerGraph,
    output: usize,
    train: &dyn Dataset,
    val: Option<&dyn Dataset>,
    opts: &FitOptions,
    seed: u64,
) -> Result<History> {
    if train.is_empty() {
        return Err(ModelError::Config("no training examples".into()));
    }
    if opts.batch == 0 {
        return Err(ModelError::Config("batch must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut adam = Adam::new(opts.learning_rate);
    let mut history = History::default();
    let mut order: Vec<usize> = (0..train.len()).collect();
    let val = val.filter(|v| !v.is_empty());
    let watched_set = val.unwrap_or(train);
    let before = dataset_loss(graph, output, watched_set, opts.batch)?;
    let zero = zero_loss(watched_set, opts.batch)?;
    let initial = if zero > 0.0 { before.min(zero) } else { before };
    let mut bad_epochs = 0;
    'epochs: for epoch in 1..=opts.epochs {
        let clock = Instant::now();
        order.shuffle(&mut rng);
        let mut total = 0.0;
        let mut count = 0usize;
        for chunk in order.chunks(opts.batch) {
            if opts.max_steps.is_some_and(|m| history.steps >= m) {
                break;
            }
            let (inputs, target) = train.batch(chunk)?;
            let mut tape = Tape::new();
            let vars = graph.forward(&mut tape, &inputs_ref(&inputs), Mode::Training(&mut rng))?;
            let loss = tape.mse(vars[output], &target)?;
            let value = tape.value(loss).data()[0];
            if !value.is_finite() {
                return Err(ModelError::Divergence { epoch, loss: value, initial });
            }
            tape.backward(loss)?;
            let grads = tape.param_grads(graph.params())?;
            adam.step(graph.params_mut(), &grads)?;
            history.steps += 1;
            total += value * chunk.len() as f64;
            count += chunk.len();
        }
        if count == 0 {
            break 'epochs;
        }
        let train_loss = total / count as f64;
        let val_loss = val.map(|v| dataset_loss(graph, output, v, opts.batch)).transpose()?;
        history.records.push(EpochRecord { epoch, train_loss, val_loss, wall_ms: clock.elapsed().as_millis() });
        let watched = val_loss.unwrap_or(train_loss);
        if !(watched <= DIVERGENCE_FACTOR * initial) {
            bad_epochs += 1;
            if bad_epochs >= DIVERGENCE_PATIENCE {
                return Err(ModelError::Divergence { epoch, loss: watched, initial });
            }
        } else {
            bad_epochs = 0;
        }
    }
    Ok(history)
}

/// Equal-width blocks used as both input `"x"` and target, for autoencoders.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockData {
    pub dim: usize,
    pub rows: Vec<f64>,
}

impl Dataset for BlockData {
    fn len(&self) -> usize {
        self.rows.len() / self.dim.max(1)
    }

    fn batch(&self, indices: &[usize]) -> Result<(Vec<(String, Tensor)>, Vec<f64>)> {
        let mut x = Vec::with_capacity(indices.len() * self.dim);
        for &i in indices {
            x.extend_from_slice(&self.rows[i * self.dim..(i + 1) * self.dim]);
        }
        let t = Tensor::new(&[indices.len(), self.dim], x.clone())?;
        Ok((vec![("x".to_string(), t)], x))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use stdn_nn::Activation;

    struct Line(Vec<f64>);

    impl Dataset for Line {
        fn len(&self) -> usize {
            self.0.len()
        }

        fn batch(&self, idx: &[usize]) -> Result<(Vec<(String, Tensor)>, Vec<f64>)> {
            let x: Vec<f64> = idx.iter().map(|&i| self.0[i]).collect();
            let y = x.iter().map(|v| 3.0 * v - 1.0).collect();
            Ok((vec![("x".into(), Tensor::new(&[idx.len(), 1], x)?)], y))
        }
    }

    fn linear_graph() -> (LayerGraph, usize) {
        let mut g = LayerGraph::new(1);
        let x = g.input("x", &[1]).unwrap();
        let y = g.dense("y", x, 1, Activation::Identity).unwrap();
        (g, y)
    }

    #[test]
    fn learns_a_line_deterministically() {
        let data = Line((0..40).map(|i| i as f64 / 40.0).collect());
        let opts = FitOptions { epochs: 300, batch: 8, learning_rate: 0.05, max_steps: None };
        let run = || {
            let (mut g, y) = linear_graph();
            let h = fit(&mut g, y, &data, Some(&data), &opts, 5).unwrap();
            (g, h)
        };
        let (g, h) = run();
        let (g2, h2) = run();
        assert_eq!(g, g2);
        assert_eq!(h.final_train_loss(), h2.final_train_loss());
        assert!(h.records[0].train_loss > 10.0 * h.final_train_loss().unwrap());
        assert!(dataset_loss(&g, 1, &data, 7).unwrap() < 1e-6);
        assert_eq!(h.steps, 300 * 5);
    }

    #[test]
    fn step_budget_stops_mid_epoch() {
        let data = Line(vec![0.5; 10]);
        let (mut g, y) = linear_graph();
        let opts = FitOptions { epochs: 10, batch: 4, learning_rate: 0.01, max_steps: Some(7) };
        let h = fit(&mut g, y, &data, None, &opts, 1).unwrap();
        assert_eq!(h.steps, 7);
        assert_eq!(h.records.len(), 3);
    }

    #[test]
    fn huge_learning_rate_diverges() {
        struct Quad;
        impl Dataset for Quad {
            fn len(&self) -> usize {
                16
            }
            fn batch(&self, idx: &[usize]) -> Result<(Vec<(String, Tensor)>, Vec<f64>)> {
                let x: Vec<f64> = idx.iter().map(|&i| i as f64).collect();
                Ok((vec![("x".into(), Tensor::new(&[idx.len(), 1], x)?)], vec![0.0; idx.len()]))
            }
        }
        let mut g = LayerGraph::new(3);
        let x = g.input("x", &[1]).unwrap();
        let h = g.dense("h", x, 8, Activation::Relu).unwrap();
        let y = g.dense("y", h, 1, Activation::Identity).unwrap();
        let opts = FitOptions { epochs: 50, batch: 16, learning_rate: 1e6, max_steps: None };
        let err = fit(&mut g, y, &Quad, None, &opts, 1).unwrap_err();
        assert!(matches!(err, ModelError::Divergence { .. }), "{err}");
    }

    #[test]
    fn log_has_one_line_per_epoch() {
        let data = Line(vec![0.1, 0.2]);
        let (mut g, y) = linear_graph();
        let opts = FitOptions { epochs: 3, batch: 2, learning_rate: 0.01, max_steps: None };
        let h = fit(&mut g, y, &data, Some(&data), &opts, 1).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("log.csv");
        h.write_log(&path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(text.lines().count(), 4);
        assert!(text.lines().nth(1).unwrap().starts_with("1,"));
    }
}
