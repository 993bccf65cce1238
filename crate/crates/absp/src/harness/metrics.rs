//! Accuracy bookkeeping and CSV emission.

use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};

/// One seed's results: `accuracy[t_learned][t_eval]` (both 0-based,
/// `t_eval <= t_learned`) and per-task training-loss curves.
#[derive(Debug, Clone)]
pub struct SeedResult {
    pub seed: u64,
    /// Lower-triangular: row `t` has `t + 1` entries.
    pub accuracy: Vec<Vec<f64>>,
    /// One loss value per optimizer step, grouped by task.
    pub losses: Vec<Vec<f64>>,
}

/// Test accuracy of every task after every learning stage, across seeds.
#[derive(Debug, Clone)]
pub struct AccuracyMatrix {
    pub method: String,
    pub benchmark: String,
    pub num_tasks: usize,
    pub results: Vec<SeedResult>,
}

impl AccuracyMatrix {
    /// Mean over seeds of `accuracy[t_learned][t_eval]` (0-based).
    pub fn mean_accuracy(&self, t_learned: usize, t_eval: usize) -> f64 {
        let n = self.results.len();
        self.results
            .iter()
            .map(|r| r.accuracy[t_learned][t_eval])
            .sum::<f64>()
            / n as f64
    }

    /// Sample standard deviation over seeds (0 for a single seed).
    pub fn stddev_accuracy(&self, t_learned: usize, t_eval: usize) -> f64 {
        let n = self.results.len();
        if n < 2 {
            return 0.0;
        }
        let mean = self.mean_accuracy(t_learned, t_eval);
        let var = self
            .results
            .iter()
            .map(|r| {
                let d = r.accuracy[t_learned][t_eval] - mean;
                d * d
            })
            .sum::<f64>()
            / (n - 1) as f64;
        var.sqrt()
    }

    /// Mean over seeds and tasks of the accuracy on every task seen so far,
    /// evaluated after learning task `t_learned`.
    pub fn mean_accuracy_after(&self, t_learned: usize) -> f64 {
        let per_seed: f64 = self
            .results
            .iter()
            .map(|r| {
                r.accuracy[t_learned].iter().sum::<f64>() / r.accuracy[t_learned].len() as f64
            })
            .sum();
        per_seed / self.results.len() as f64
    }
}

fn create(path: &Path) -> Result<std::io::BufWriter<std::fs::File>> {
    let file =
        std::fs::File::create(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    Ok(std::io::BufWriter::new(file))
}

fn finish(mut w: std::io::BufWriter<std::fs::File>, path: &Path) -> Result<()> {
    w.flush().map_err(|e| Error::io(path.display().to_string(), e))
}

macro_rules! emit {
    ($w:expr, $path:expr, $($arg:tt)*) => {
        writeln!($w, $($arg)*).map_err(|e| Error::io($path.display().to_string(), e))?
    };
}

/// Writes `accuracy.csv`, `loss.csv`, and `aggregates.csv` under `dir`.
/// Task indices are 1-based in the files. Row order is fixed (seeds in
/// result order, then task indices ascending), so identical matrices emit
/// byte-identical files.
pub fn emit_metrics(matrix: &AccuracyMatrix, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir.display().to_string(), e))?;

    let acc_path = dir.join("accuracy.csv");
    let mut w = create(&acc_path)?;
    emit!(w, acc_path, "seed,method,benchmark,t_learned,t_eval,accuracy");
    for r in &matrix.results {
        for (t_learned, row) in r.accuracy.iter().enumerate() {
            for (t_eval, acc) in row.iter().enumerate() {
                emit!(
                    w,
                    acc_path,
                    "{},{},{},{},{},{:.6}",
                    r.seed,
                    matrix.method,
                    matrix.benchmark,
                    t_learned + 1,
                    t_eval + 1,
                    acc
                );
            }
        }
    }
    finish(w, &acc_path)?;

    let loss_path = dir.join("loss.csv");
    let mut w = create(&loss_path)?;
    emit!(w, loss_path, "seed,method,benchmark,task,step,train_loss");
    for r in &matrix.results {
        for (task, curve) in r.losses.iter().enumerate() {
            for (step, loss) in curve.iter().enumerate() {
                emit!(
                    w,
                    loss_path,
                    "{},{},{},{},{},{:.6}",
                    r.seed,
                    matrix.method,
                    matrix.benchmark,
                    task + 1,
                    step,
                    loss
                );
            }
        }
    }
    finish(w, &loss_path)?;

    let agg_path = dir.join("aggregates.csv");
    let mut w = create(&agg_path)?;
    emit!(
        w,
        agg_path,
        "method,benchmark,t_learned,t_eval,mean_accuracy,stddev_accuracy"
    );
    if !matrix.results.is_empty() {
        for t_learned in 0..matrix.num_tasks {
            for t_eval in 0..=t_learned {
                emit!(
                    w,
                    agg_path,
                    "{},{},{},{},{:.6},{:.6}",
                    matrix.method,
                    matrix.benchmark,
                    t_learned + 1,
                    t_eval + 1,
                    matrix.mean_accuracy(t_learned, t_eval),
                    matrix.stddev_accuracy(t_learned, t_eval)
                );
            }
        }
    }
    finish(w, &agg_path)
}
