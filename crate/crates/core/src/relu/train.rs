//! A small deterministic trainer: adaptive-moment gradient descent on
//! mean absolute error plus an l1 penalty on the weights.

use rand::seq::SliceRandom;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::path::Path;

use super::{Layer, ReluNetwork};
use crate::{Error, Matrix, Result, Vector};

/// Trainer hyperparameters. All runs with the same config, samples, and
/// architecture produce bitwise-identical networks.
#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub epochs: usize,
    pub step_size: f64,
    pub l1_weight: f64,
    /// Samples per gradient step; 0 means full batch.
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 500,
            step_size: 5e-3,
            l1_weight: 1e-4,
            batch_size: 0,
            seed: 0,
        }
    }
}

/// Training output: the network and the mean absolute error after each epoch.
#[derive(Debug, Clone)]
pub struct Trained {
    pub network: ReluNetwork,
    pub mae_history: Vec<f64>,
}

impl Trained {
    pub fn final_mae(&self) -> f64 {
        *self.mae_history.last().unwrap_or(&f64::INFINITY)
    }
}

struct AdamState {
    m: Vec<(Matrix, Vector)>,
    v: Vec<(Matrix, Vector)>,
    t: u64,
}

const ADAM_BETA1: f64 = 0.9;
const ADAM_BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

/// Trains a ReLU network of the given architecture (`arch[0]` inputs through
/// `arch[last]` outputs) on the samples. Weights start from a fan-in-scaled
/// uniform initialization drawn from the seeded generator.
pub fn train(
    samples: &[(Vector, Vector)],
    arch: &[usize],
    config: &TrainConfig,
) -> Result<Trained> {
    if samples.is_empty() {
        return Err(Error::invalid("training needs at least one sample"));
    }
    if arch.len() < 2 {
        return Err(Error::invalid("architecture needs input and output sizes"));
    }
    let n_in = arch[0];
    let n_out = arch[arch.len() - 1];
    for (x, y) in samples {
        if x.len() != n_in {
            return Err(Error::dim(n_in, x.len(), "training input"));
        }
        if y.len() != n_out {
            return Err(Error::dim(n_out, y.len(), "training target"));
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut layers: Vec<Layer> = arch
        .windows(2)
        .map(|w| {
            // He-style uniform init keeps activations on scale at depth.
            let a = (6.0 / w[0] as f64).sqrt();
            Layer {
                weight: Matrix::from_fn(w[1], w[0], |_, _| rng.random_range(-a..a)),
                bias: Vector::zeros(w[1]),
            }
        })
        .collect();

    let mut adam = AdamState {
        m: layers
            .iter()
            .map(|l| (Matrix::zeros(l.fan_out(), l.fan_in()), Vector::zeros(l.fan_out())))
            .collect(),
        v: layers
            .iter()
            .map(|l| (Matrix::zeros(l.fan_out(), l.fan_in()), Vector::zeros(l.fan_out())))
            .collect(),
        t: 0,
    };

    let n = samples.len();
    let batch = if config.batch_size == 0 || config.batch_size > n {
        n
    } else {
        config.batch_size
    };
    let mut order: Vec<usize> = (0..n).collect();
    let mut mae_history = Vec::with_capacity(config.epochs);

    for epoch in 0..config.epochs {
        if batch < n {
            order.shuffle(&mut rng);
        }
        let mut abs_sum = 0.0;
        for chunk in order.chunks(batch) {
            let (grads, chunk_abs) = batch_gradient(&layers, samples, chunk, n_out);
            abs_sum += chunk_abs;
            if !chunk_abs.is_finite() {
                return Err(Error::TrainingDiverged {
                    epoch,
                    loss: chunk_abs,
                });
            }
            apply_step(&mut layers, &grads, &mut adam, config);
        }
        let mae = abs_sum / (n * n_out) as f64;
        if !mae.is_finite() {
            return Err(Error::TrainingDiverged { epoch, loss: mae });
        }
        mae_history.push(mae);
    }

    Ok(Trained {
        network: ReluNetwork::new(layers)?,
        mae_history,
    })
}

/// Mean-absolute-error gradient over one batch, plus the batch's summed
/// absolute error (for epoch bookkeeping).
fn batch_gradient(
    layers: &[Layer],
    samples: &[(Vector, Vector)],
    idx: &[usize],
    n_out: usize,
) -> (Vec<(Matrix, Vector)>, f64) {
    let mut grads: Vec<(Matrix, Vector)> = layers
        .iter()
        .map(|l| (Matrix::zeros(l.fan_out(), l.fan_in()), Vector::zeros(l.fan_out())))
        .collect();
    let last = layers.len() - 1;
    let scale = 1.0 / (idx.len() * n_out) as f64;
    let mut abs_sum = 0.0;

    for &s in idx {
        let (x, target) = &samples[s];
        // Forward pass, keeping post-activations for the backward pass.
        let mut post: Vec<Vector> = Vec::with_capacity(layers.len() + 1);
        post.push(x.clone());
        for (l, layer) in layers.iter().enumerate() {
            let mut z = &layer.weight * &post[l] + &layer.bias;
            if l < last {
                z.apply(|v| *v = v.max(0.0));
            }
            post.push(z);
        }
        let out = &post[layers.len()];
        let mut delta = Vector::from_fn(n_out, |i, _| {
            let d: f64 = out[i] - target[i];
            abs_sum += d.abs();
            scale * d.signum()
        });
        // Backward pass.
        for l in (0..layers.len()).rev() {
            let input = &post[l];
            grads[l].0.ger(1.0, &delta, input, 1.0);
            grads[l].1 += &delta;
            if l > 0 {
                let mut back = layers[l].weight.transpose() * &delta;
                // ReLU gate: post-activation zero means the neuron was off.
                for i in 0..back.len() {
                    if post[l][i] <= 0.0 {
                        back[i] = 0.0;
                    }
                }
                delta = back;
            }
        }
    }
    (grads, abs_sum)
}

fn apply_step(
    layers: &mut [Layer],
    grads: &[(Matrix, Vector)],
    adam: &mut AdamState,
    config: &TrainConfig,
) {
    adam.t += 1;
    let bc1 = 1.0 - ADAM_BETA1.powi(adam.t as i32);
    let bc2 = 1.0 - ADAM_BETA2.powi(adam.t as i32);
    for l in 0..layers.len() {
        let (gw, gb) = &grads[l];
        let lw = &mut layers[l].weight;
        for i in 0..lw.nrows() {
            for j in 0..lw.ncols() {
                let g = gw[(i, j)] + config.l1_weight * lw[(i, j)].signum();
                let m = &mut adam.m[l].0[(i, j)];
                let v = &mut adam.v[l].0[(i, j)];
                *m = ADAM_BETA1 * *m + (1.0 - ADAM_BETA1) * g;
                *v = ADAM_BETA2 * *v + (1.0 - ADAM_BETA2) * g * g;
                let mhat = *m / bc1;
                let vhat = *v / bc2;
                lw[(i, j)] -= config.step_size * mhat / (vhat.sqrt() + ADAM_EPS);
            }
        }
        let lb = &mut layers[l].bias;
        for i in 0..lb.len() {
            let g = gb[i];
            let m = &mut adam.m[l].1[i];
            let v = &mut adam.v[l].1[i];
            *m = ADAM_BETA1 * *m + (1.0 - ADAM_BETA1) * g;
            *v = ADAM_BETA2 * *v + (1.0 - ADAM_BETA2) * g * g;
            let mhat = *m / bc1;
            let vhat = *v / bc2;
            lb[i] -= config.step_size * mhat / (vhat.sqrt() + ADAM_EPS);
        }
    }
}

/// Reads a training dataset from CSV with header `x_1..x_n,y_1..y_m`.
pub fn read_dataset_csv(path: impl AsRef<Path>) -> Result<Vec<(Vector, Vector)>> {
    let path = path.as_ref();
    let mut reader = csv::Reader::from_path(path)?;
    let header = reader.headers()?.clone();
    let mut n_in = 0;
    let mut n_out = 0;
    for field in header.iter() {
        if field.starts_with("x_") {
            n_in += 1;
        } else if field.starts_with("y_") {
            n_out += 1;
        } else {
            return Err(Error::MalformedFile {
                path: path.display().to_string(),
                reason: format!("unexpected column {field:?}; want x_1..x_n,y_1..y_m"),
            });
        }
    }
    if n_in == 0 || n_out == 0 {
        return Err(Error::MalformedFile {
            path: path.display().to_string(),
            reason: "header must contain x_* and y_* columns".into(),
        });
    }
    let mut samples = Vec::new();
    for record in reader.records() {
        let record = record?;
        if record.len() != n_in + n_out {
            return Err(Error::MalformedFile {
                path: path.display().to_string(),
                reason: format!("row with {} fields, expected {}", record.len(), n_in + n_out),
            });
        }
        let parse = |s: &str| -> Result<f64> {
            s.trim().parse::<f64>().map_err(|_| Error::MalformedFile {
                path: path.display().to_string(),
                reason: format!("non-numeric field {s:?}"),
            })
        };
        let mut x = Vector::zeros(n_in);
        let mut y = Vector::zeros(n_out);
        for i in 0..n_in {
            x[i] = parse(&record[i])?;
        }
        for i in 0..n_out {
            y[i] = parse(&record[n_in + i])?;
        }
        samples.push((x, y));
    }
    if samples.is_empty() {
        return Err(Error::MalformedFile {
            path: path.display().to_string(),
            reason: "dataset has no rows".into(),
        });
    }
    Ok(samples)
}

/// Writes a dataset in the same CSV layout `read_dataset_csv` accepts.
pub fn write_dataset_csv(path: impl AsRef<Path>, samples: &[(Vector, Vector)]) -> Result<()> {
    if samples.is_empty() {
        return Err(Error::invalid("refusing to write an empty dataset"));
    }
    let (n_in, n_out) = (samples[0].0.len(), samples[0].1.len());
    let mut writer = csv::Writer::from_path(path)?;
    let mut header = Vec::with_capacity(n_in + n_out);
    for i in 1..=n_in {
        header.push(format!("x_{i}"));
    }
    for i in 1..=n_out {
        header.push(format!("y_{i}"));
    }
    writer.write_record(&header)?;
    for (x, y) in samples {
        let row: Vec<String> = x
            .iter()
            .chain(y.iter())
            .map(|v| format!("{v:.17}"))
            .collect();
        writer.write_record(&row)?;
    }
    writer.flush().map_err(Error::Io)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn line_samples(n: usize, f: impl Fn(f64) -> f64) -> Vec<(Vector, Vector)> {
        (0..n)
            .map(|i| {
                let x = -2.0 + 4.0 * i as f64 / (n - 1) as f64;
                (Vector::from_vec(vec![x]), Vector::from_vec(vec![f(x)]))
            })
            .collect()
    }

    #[test]
    fn zero_targets_reach_tiny_mae() {
        let samples = line_samples(64, |_| 0.0);
        let out = train(
            &samples,
            &[1, 4, 1],
            &TrainConfig {
                epochs: 800,
                ..TrainConfig::default()
            },
        )
        .unwrap();
        assert!(out.final_mae() <= 1e-3, "mae = {}", out.final_mae());
    }

    #[test]
    fn relu_target_fits_quickly() {
        let samples = line_samples(128, |x| x.max(0.0));
        let out = train(
            &samples,
            &[1, 4, 1],
            &TrainConfig {
                epochs: 500,
                step_size: 1e-2,
                ..TrainConfig::default()
            },
        )
        .unwrap();
        assert!(out.final_mae() <= 1e-2, "mae = {}", out.final_mae());
    }

    #[test]
    fn loss_descends_weakly() {
        let samples = line_samples(64, |x| 0.5 * x - 0.1 * x * x);
        let out = train(
            &samples,
            &[1, 8, 1],
            &TrainConfig {
                epochs: 101,
                ..TrainConfig::default()
            },
        )
        .unwrap();
        assert!(out.mae_history[100] <= out.mae_history[1]);
    }

    #[test]
    fn same_seed_reproduces_bitwise() {
        let samples = line_samples(32, |x| x.sin());
        let cfg = TrainConfig {
            epochs: 50,
            batch_size: 8,
            seed: 7,
            ..TrainConfig::default()
        };
        let a = train(&samples, &[1, 6, 1], &cfg).unwrap();
        let b = train(&samples, &[1, 6, 1], &cfg).unwrap();
        assert_eq!(a.network, b.network);
        assert_eq!(a.mae_history, b.mae_history);
    }

    #[test]
    fn divergence_reports_epoch() {
        let samples = line_samples(16, |x| x);
        let err = train(
            &samples,
            &[1, 4, 1],
            &TrainConfig {
                epochs: 50,
                step_size: 1e200,
                ..TrainConfig::default()
            },
        )
        .unwrap_err();
        match err {
            crate::Error::TrainingDiverged { .. } => {}
            other => panic!("expected divergence, got {other:?}"),
        }
    }

    #[test]
    fn dataset_csv_roundtrip() {
        let samples = line_samples(10, |x| x * 0.3);
        let dir = std::env::temp_dir().join("roacert-train-test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("data.csv");
        write_dataset_csv(&path, &samples).unwrap();
        let back = read_dataset_csv(&path).unwrap();
        assert_eq!(samples.len(), back.len());
        for (a, b) in samples.iter().zip(&back) {
            assert!((&a.0 - &b.0).abs().max() < 1e-15);
            assert!((&a.1 - &b.1).abs().max() < 1e-15);
        }
    }

    #[test]
    fn bad_header_rejected() {
        let dir = std::env::temp_dir().join("roacert-train-test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("bad.csv");
        std::fs::write(&path, "a,b\n1,2\n").unwrap();
        assert!(read_dataset_csv(&path).is_err());
    }
}
