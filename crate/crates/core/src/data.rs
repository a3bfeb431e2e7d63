//! Multi-task tabular data: synthetic biased generation, CSV ingestion,
//! splitting, and deterministic batching.
//!
//! CSV schema (UTF-8, comma-separated, `\n` line endings, no quoting):
//! a required header `feature_0,...,feature_{d-1},protected,task_0,...,
//! task_{T-1}`, features as decimal real literals, protected and task
//! columns exactly `0` or `1`. Protected `1` marks the protected group.

use std::fmt::Write as _;
use std::path::Path;

use ndarray::{Array2, ArrayView2};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seeds::child_seed;

/// A multi-task dataset: features `U`, the binary protected attribute `S`
/// (1 marks the protected group), and per-task binary labels `Y`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub features: Array2<f64>,
    pub protected: Vec<u8>,
    pub labels: Array2<u8>,
}

impl Dataset {
    pub fn n(&self) -> usize {
        self.features.nrows()
    }

    pub fn d(&self) -> usize {
        self.features.ncols()
    }

    pub fn n_tasks(&self) -> usize {
        self.labels.ncols()
    }

    pub fn validate(&self) -> Result<()> {
        if self.protected.len() != self.n() || self.labels.nrows() != self.n() {
            return Err(Error::Shape(format!(
                "dataset rows disagree: {} features, {} protected, {} labels",
                self.n(),
                self.protected.len(),
                self.labels.nrows()
            )));
        }
        if self.protected.iter().any(|&s| s > 1) || self.labels.iter().any(|&y| y > 1) {
            return Err(Error::Validation {
                row: 0,
                column: "protected/task".into(),
                message: "entries must be 0 or 1".into(),
            });
        }
        Ok(())
    }

    /// Gathers the given rows into a new dataset.
    pub fn select(&self, indices: &[usize]) -> Dataset {
        let d = self.d();
        let t = self.n_tasks();
        let mut features = Array2::zeros((indices.len(), d));
        let mut labels = Array2::zeros((indices.len(), t));
        let mut protected = Vec::with_capacity(indices.len());
        for (row, &i) in indices.iter().enumerate() {
            features.row_mut(row).assign(&self.features.row(i));
            labels.row_mut(row).assign(&self.labels.row(i));
            protected.push(self.protected[i]);
        }
        Dataset {
            features,
            protected,
            labels,
        }
    }

    /// Restricts the labels to a single task (for single-task training).
    pub fn single_task(&self, t: usize) -> Result<Dataset> {
        if t >= self.n_tasks() {
            return Err(Error::Config(format!(
                "task {t} out of range for {} tasks",
                self.n_tasks()
            )));
        }
        let labels = self
            .labels
            .column(t)
            .to_owned()
            .into_shape((self.n(), 1))
            .expect("column reshapes to one column");
        Ok(Dataset {
            features: self.features.clone(),
            protected: self.protected.clone(),
            labels,
        })
    }

    pub fn task_labels(&self, t: usize) -> Vec<u8> {
        self.labels.column(t).to_vec()
    }

    pub fn features_view(&self) -> ArrayView2<'_, f64> {
        self.features.view()
    }
}

/// Specification for synthetic biased multi-task data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub n: usize,
    pub d: usize,
    pub n_tasks: usize,
    /// Per-task strength of the label/protected-attribute dependence, in
    /// `[0, 1]`.
    pub bias: Vec<f64>,
    /// Symmetric label-noise rate in `[0, 0.5]`.
    pub noise: f64,
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n == 0 || self.d == 0 || self.n_tasks == 0 {
            return Err(Error::Config(
                "synthetic data needs n, d, and n_tasks at least 1".into(),
            ));
        }
        if self.bias.len() != self.n_tasks {
            return Err(Error::Config(format!(
                "bias has {} entries for {} tasks",
                self.bias.len(),
                self.n_tasks
            )));
        }
        if let Some(bad) = self.bias.iter().position(|b| !(0.0..=1.0).contains(b)) {
            return Err(Error::Config(format!(
                "bias[{bad}] = {} must lie in [0, 1]",
                self.bias[bad]
            )));
        }
        if !(0.0..=0.5).contains(&self.noise) {
            return Err(Error::Config(format!(
                "noise {} must lie in [0, 0.5]",
                self.noise
            )));
        }
        Ok(())
    }
}

/// Generates a biased multi-task dataset, fully determined by `(spec, seed)`.
///
/// Features are standard normal, group membership is a fair coin, and each
/// task's clean label is `1[beta_t . u > 0]` for a task vector drawn from the
/// seed. Discrimination is injected one-sidedly: protected-group instances
/// with clean label 1 flip to 0 with probability `bias_t`. Independent
/// symmetric label noise at rate `noise` is applied afterwards.
///
/// Draw order is fixed (task vectors, features, groups, one flip draw per
/// task and instance, one noise draw per task and instance), so with a fixed
/// seed the flip set grows monotonically with `bias_t`.
pub fn generate_synthetic(spec: &SynthSpec, seed: u64) -> Result<Dataset> {
    spec.validate()?;
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let (n, d, t_count) = (spec.n, spec.d, spec.n_tasks);

    let mut betas = Vec::with_capacity(t_count);
    for _ in 0..t_count {
        let beta: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
        betas.push(beta);
    }

    let mut features = Array2::zeros((n, d));
    for i in 0..n {
        for j in 0..d {
            features[(i, j)] = rng.sample(StandardNormal);
        }
    }

    let protected: Vec<u8> = (0..n).map(|_| u8::from(rng.gen::<f64>() < 0.5)).collect();

    let mut labels = Array2::zeros((n, t_count));
    for t in 0..t_count {
        for i in 0..n {
            let score: f64 = (0..d).map(|j| betas[t][j] * features[(i, j)]).sum();
            labels[(i, t)] = u8::from(score > 0.0);
        }
    }

    // One-sided discrimination: protected positives flip to 0.
    for t in 0..t_count {
        for i in 0..n {
            let u: f64 = rng.gen();
            if protected[i] == 1 && labels[(i, t)] == 1 && u < spec.bias[t] {
                labels[(i, t)] = 0;
            }
        }
    }

    for t in 0..t_count {
        for i in 0..n {
            let u: f64 = rng.gen();
            if u < spec.noise {
                labels[(i, t)] = 1 - labels[(i, t)];
            }
        }
    }

    Ok(Dataset {
        features,
        protected,
        labels,
    })
}

/// The exact header required by the CSV schema.
pub fn csv_header(d: usize, n_tasks: usize) -> String {
    let mut header = String::new();
    for j in 0..d {
        let _ = write!(header, "feature_{j},");
    }
    header.push_str("protected");
    for t in 0..n_tasks {
        let _ = write!(header, ",task_{t}");
    }
    header
}

/// Writes a dataset in the CSV schema. Floats use the shortest
/// round-trippable decimal form, so write/load round-trips exactly.
pub fn write_csv(dataset: &Dataset, path: &Path) -> Result<()> {
    dataset.validate()?;
    let mut out = String::new();
    out.push_str(&csv_header(dataset.d(), dataset.n_tasks()));
    out.push('\n');
    for i in 0..dataset.n() {
        for j in 0..dataset.d() {
            let _ = write!(out, "{},", dataset.features[(i, j)]);
        }
        let _ = write!(out, "{}", dataset.protected[i]);
        for t in 0..dataset.n_tasks() {
            let _ = write!(out, ",{}", dataset.labels[(i, t)]);
        }
        out.push('\n');
    }
    std::fs::write(path, out).map_err(|e| Error::io(path.display().to_string(), e))
}

/// Loads a dataset with `d` features and `n_tasks` tasks from the CSV schema.
pub fn load_csv(path: &Path, d: usize, n_tasks: usize) -> Result<Dataset> {
    let content =
        std::fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let mut lines = content.split('\n');
    let header = lines
        .next()
        .ok_or_else(|| Error::Format("empty file, expected a header row".into()))?;
    let expected = csv_header(d, n_tasks);
    if header != expected {
        return Err(Error::Format(format!(
            "missing or malformed header: expected `{expected}`, found `{header}`"
        )));
    }

    let width = d + 1 + n_tasks;
    let mut features = Vec::new();
    let mut protected = Vec::new();
    let mut labels = Vec::new();
    let mut row = 0usize;
    for line in lines {
        if line.is_empty() {
            continue;
        }
        row += 1;
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != width {
            return Err(Error::Format(format!(
                "row {row} has {} fields, expected {width}",
                fields.len()
            )));
        }
        for (j, field) in fields[..d].iter().enumerate() {
            let value: f64 = field.parse().map_err(|_| Error::Validation {
                row,
                column: format!("feature_{j}"),
                message: format!("`{field}` is not a real literal"),
            })?;
            features.push(value);
        }
        protected.push(parse_binary(fields[d], row, "protected")?);
        for (t, field) in fields[d + 1..].iter().enumerate() {
            labels.push(parse_binary(field, row, &format!("task_{t}"))?);
        }
    }

    let dataset = Dataset {
        features: Array2::from_shape_vec((row, d), features).expect("shape matches"),
        protected,
        labels: Array2::from_shape_vec((row, n_tasks), labels).expect("shape matches"),
    };
    Ok(dataset)
}

fn parse_binary(field: &str, row: usize, column: &str) -> Result<u8> {
    match field {
        "0" => Ok(0),
        "1" => Ok(1),
        _ => Err(Error::Validation {
            row,
            column: column.to_string(),
            message: format!("`{field}` is not 0 or 1"),
        }),
    }
}

/// Splits a dataset into train/validation/test by a seeded permutation and
/// contiguous slicing. Sizes are floor allocations with the remainder going
/// to train.
pub fn split(
    dataset: &Dataset,
    fractions: (f64, f64, f64),
    seed: u64,
) -> Result<(Dataset, Dataset, Dataset)> {
    let (f_train, f_val, f_test) = fractions;
    if f_train <= 0.0 || f_val <= 0.0 || f_test <= 0.0 {
        return Err(Error::Config(format!(
            "split fractions must be positive, got {fractions:?}"
        )));
    }
    if (f_train + f_val + f_test - 1.0).abs() > 1e-9 {
        return Err(Error::Config(format!(
            "split fractions must sum to 1, got {fractions:?}"
        )));
    }
    let n = dataset.n();
    let n_val = (f_val * n as f64).floor() as usize;
    let n_test = (f_test * n as f64).floor() as usize;
    // Floor allocation for validation and test; train absorbs the remainder.
    let n_train = n - n_val - n_test;
    if n_train == 0 || n_val == 0 || n_test == 0 {
        return Err(Error::Config(format!(
            "split sizes ({n_train}, {n_val}, {n_test}) must all be nonempty for n = {n}"
        )));
    }

    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    order.shuffle(&mut rng);

    let train = dataset.select(&order[..n_train]);
    let val = dataset.select(&order[n_train..n_train + n_val]);
    let test = dataset.select(&order[n_train + n_val..]);
    Ok((train, val, test))
}

/// Batch index slices for one epoch: a fresh permutation keyed by
/// `(seed, epoch)`, chunked into `batch_size` groups (the last may be short).
pub fn batches(dataset: &Dataset, batch_size: usize, seed: u64, epoch: u64) -> Result<Vec<Vec<usize>>> {
    if batch_size == 0 {
        return Err(Error::Config("batch_size must be at least 1".into()));
    }
    let n = dataset.n();
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha12Rng::seed_from_u64(child_seed(seed, "batch-shuffle", epoch));
    order.shuffle(&mut rng);
    Ok(order.chunks(batch_size).map(<[usize]>::to_vec).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn spec(n: usize, bias: f64, noise: f64) -> SynthSpec {
        SynthSpec {
            n,
            d: 4,
            n_tasks: 2,
            bias: vec![bias, bias],
            noise,
        }
    }

    #[test]
    fn synthetic_is_deterministic() {
        let s = spec(200, 0.3, 0.05);
        assert_eq!(
            generate_synthetic(&s, 11).unwrap(),
            generate_synthetic(&s, 11).unwrap()
        );
        assert_ne!(
            generate_synthetic(&s, 11).unwrap(),
            generate_synthetic(&s, 12).unwrap()
        );
    }

    #[test]
    fn unbiased_noiseless_data_is_group_blind() {
        // With no flips the labels are a pure function of the features, so
        // the label-generating rule itself has EO violation near zero.
        let s = SynthSpec {
            n: 100_000,
            d: 4,
            n_tasks: 1,
            bias: vec![0.0],
            noise: 0.0,
        };
        let data = generate_synthetic(&s, 5).unwrap();
        // The Bayes predictor recovers the labels exactly here, so its
        // "predictions" are the labels; EO of a perfect predictor is zero.
        // The statistical content is the group balance of positives.
        let rates = crate::metrics::confusion_by_group(
            &data.task_labels(0),
            &data.task_labels(0),
            &data.protected,
        )
        .unwrap();
        assert_eq!(crate::metrics::eo_violation(&rates), 0.0);
        // Positive rates per group agree within Monte Carlo tolerance.
        let (mut pos_g, mut n_g, mut pos_o, mut n_o) = (0.0, 0.0, 0.0, 0.0);
        for i in 0..data.n() {
            if data.protected[i] == 1 {
                n_g += 1.0;
                pos_g += f64::from(data.labels[(i, 0)]);
            } else {
                n_o += 1.0;
                pos_o += f64::from(data.labels[(i, 0)]);
            }
        }
        assert!((pos_g / n_g - pos_o / n_o).abs() < 0.02);
    }

    #[test]
    fn bias_depresses_protected_positive_rate() {
        let s = SynthSpec {
            n: 100_000,
            d: 4,
            n_tasks: 1,
            bias: vec![0.5],
            noise: 0.0,
        };
        let data = generate_synthetic(&s, 7).unwrap();
        let (mut pos_g, mut n_g, mut pos_o, mut n_o) = (0.0, 0.0, 0.0, 0.0);
        for i in 0..data.n() {
            if data.protected[i] == 1 {
                n_g += 1.0;
                pos_g += f64::from(data.labels[(i, 0)]);
            } else {
                n_o += 1.0;
                pos_o += f64::from(data.labels[(i, 0)]);
            }
        }
        // Roughly half the protected positives are flipped away.
        assert!(pos_g / n_g < pos_o / n_o - 0.15);
    }

    #[test]
    fn bias_monotonically_widens_the_gap() {
        let mut last_gap = -1.0;
        for level in [0.0, 0.25, 0.5, 0.75, 1.0] {
            let s = SynthSpec {
                n: 50_000,
                d: 4,
                n_tasks: 1,
                bias: vec![level],
                noise: 0.0,
            };
            let data = generate_synthetic(&s, 42).unwrap();
            let (mut pos_g, mut n_g, mut pos_o, mut n_o) = (0.0, 0.0, 0.0, 0.0);
            for i in 0..data.n() {
                if data.protected[i] == 1 {
                    n_g += 1.0;
                    pos_g += f64::from(data.labels[(i, 0)]);
                } else {
                    n_o += 1.0;
                    pos_o += f64::from(data.labels[(i, 0)]);
                }
            }
            let gap = pos_o / n_o - pos_g / n_g;
            assert!(
                gap >= last_gap,
                "gap {gap} shrank from {last_gap} at bias {level}"
            );
            last_gap = gap;
        }
    }

    #[test]
    fn synth_spec_validation() {
        assert!(spec(0, 0.2, 0.0).validate().is_err());
        assert!(spec(10, 1.5, 0.0).validate().is_err());
        assert!(spec(10, 0.2, 0.7).validate().is_err());
        assert!(spec(10, 0.2, 0.1).validate().is_ok());
    }

    #[test]
    fn csv_round_trip_small() {
        let data = generate_synthetic(&spec(10, 0.3, 0.1), 3).unwrap();
        let dir = std::env::temp_dir().join("fairmtl-csv-test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("round_trip.csv");
        write_csv(&data, &path).unwrap();
        let loaded = load_csv(&path, 4, 2).unwrap();
        assert_eq!(data, loaded);
        let content = std::fs::read_to_string(&path).unwrap();
        assert_eq!(content.lines().count(), 11);
        std::fs::remove_file(&path).unwrap();
    }

    #[test]
    fn csv_errors_are_specific() {
        let dir = std::env::temp_dir().join("fairmtl-csv-test");
        std::fs::create_dir_all(&dir).unwrap();

        let bad_header = dir.join("bad_header.csv");
        std::fs::write(&bad_header, "a,b,c\n1.0,0,1\n").unwrap();
        assert!(matches!(
            load_csv(&bad_header, 1, 1),
            Err(Error::Format(_))
        ));

        let bad_protected = dir.join("bad_protected.csv");
        std::fs::write(
            &bad_protected,
            "feature_0,protected,task_0\n1.0,2,1\n",
        )
        .unwrap();
        match load_csv(&bad_protected, 1, 1) {
            Err(Error::Validation { row, column, .. }) => {
                assert_eq!(row, 1);
                assert_eq!(column, "protected");
            }
            other => panic!("expected validation error, got {other:?}"),
        }

        let short_row = dir.join("short_row.csv");
        std::fs::write(&short_row, "feature_0,protected,task_0\n1.0,0\n").unwrap();
        assert!(matches!(load_csv(&short_row, 1, 1), Err(Error::Format(_))));

        for f in [bad_header, bad_protected, short_row] {
            std::fs::remove_file(f).unwrap();
        }
    }

    #[test]
    fn split_sizes_follow_floor_allocation() {
        let data = generate_synthetic(&spec(10, 0.0, 0.0), 1).unwrap();
        let (train, val, test) = split(&data, (0.7, 0.2, 0.1), 9).unwrap();
        assert_eq!((train.n(), val.n(), test.n()), (7, 2, 1));
        assert_eq!(
            split(&data, (0.7, 0.2, 0.1), 9).unwrap(),
            (train.clone(), val.clone(), test.clone())
        );
    }

    #[test]
    fn split_rejects_empty_parts() {
        let data = generate_synthetic(&spec(3, 0.0, 0.0), 1).unwrap();
        assert!(split(&data, (0.9, 0.05, 0.05), 9).is_err());
        assert!(split(&data, (0.5, 0.5, 0.5), 9).is_err());
    }

    #[test]
    fn split_partitions_and_batches_cover_exhaustively() {
        for n in 4..=32 {
            let data = generate_synthetic(
                &SynthSpec {
                    n,
                    d: 2,
                    n_tasks: 1,
                    bias: vec![0.0],
                    noise: 0.0,
                },
                77,
            )
            .unwrap();
            let (train, val, test) = split(&data, (0.5, 0.25, 0.25), 13).unwrap();
            assert_eq!(train.n() + val.n() + test.n(), n);
            // Partition: every original row appears exactly once.
            let mut seen: Vec<Vec<f64>> = Vec::new();
            for part in [&train, &val, &test] {
                for i in 0..part.n() {
                    seen.push(part.features.row(i).to_vec());
                }
            }
            let mut original: Vec<Vec<f64>> = (0..n).map(|i| data.features.row(i).to_vec()).collect();
            seen.sort_by(|a, b| a.partial_cmp(b).unwrap());
            original.sort_by(|a, b| a.partial_cmp(b).unwrap());
            assert_eq!(seen, original);

            for batch_size in 1..=n {
                for epoch in 0..3u64 {
                    let slices = batches(&data, batch_size, 5, epoch).unwrap();
                    let mut all: Vec<usize> = slices.iter().flatten().copied().collect();
                    all.sort_unstable();
                    assert_eq!(all, (0..n).collect::<Vec<_>>());
                    for (k, slice) in slices.iter().enumerate() {
                        if k + 1 < slices.len() {
                            assert_eq!(slice.len(), batch_size);
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn batch_sizes_split_the_tail() {
        let data = generate_synthetic(&spec(5, 0.0, 0.0), 1).unwrap();
        let sizes: Vec<usize> = batches(&data, 2, 3, 0)
            .unwrap()
            .iter()
            .map(Vec::len)
            .collect();
        assert_eq!(sizes, vec![2, 2, 1]);
    }

    #[test]
    fn epochs_reshuffle_batches() {
        let data = generate_synthetic(&spec(64, 0.0, 0.0), 1).unwrap();
        let e0 = batches(&data, 16, 3, 0).unwrap();
        let e1 = batches(&data, 16, 3, 1).unwrap();
        assert_ne!(e0, e1);
        assert_eq!(e0, batches(&data, 16, 3, 0).unwrap());
    }

    proptest! {
        /// Write then load recovers the dataset exactly.
        #[test]
        fn csv_round_trip(n in 1usize..12, seed in 0u64..500) {
            let s = SynthSpec { n, d: 3, n_tasks: 2, bias: vec![0.4, 0.1], noise: 0.2 };
            let data = generate_synthetic(&s, seed).unwrap();
            let dir = std::env::temp_dir().join("fairmtl-csv-prop");
            std::fs::create_dir_all(&dir).unwrap();
            let path = dir.join(format!("rt_{n}_{seed}.csv"));
            write_csv(&data, &path).unwrap();
            let loaded = load_csv(&path, 3, 2).unwrap();
            std::fs::remove_file(&path).unwrap();
            prop_assert_eq!(data, loaded);
        }
    }
}
