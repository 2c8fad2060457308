//! Synthetic desk-scale classification tasks and Non-IID partitioning.

use crate::error::{Error, Result};
use crate::rng;
use crate::scalar::Scalar;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma};
use serde::{Deserialize, Serialize};
use std::io::{BufRead, Write};

/// One labeled example.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct Example<S: Scalar> {
    pub features: Vec<S>,
    pub label: usize,
}

/// A labeled dataset with a fixed feature dimension and class count.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset<S: Scalar> {
    pub examples: Vec<Example<S>>,
    pub dim: usize,
    pub n_classes: usize,
}

impl<S: Scalar> Dataset<S> {
    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    /// Per-class example counts.
    pub fn label_histogram(&self) -> Vec<usize> {
        let mut hist = vec![0usize; self.n_classes];
        for e in &self.examples {
            hist[e.label] += 1;
        }
        hist
    }
}

/// The slice of training data held by one trainer.
#[derive(Debug, Clone)]
pub struct DataShard<S: Scalar> {
    pub examples: Vec<Example<S>>,
    pub owner: usize,
}

impl<S: Scalar> DataShard<S> {
    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }
}

/// Generate a Gaussian class-cluster task: `n_train` training and `n_test`
/// test examples over `n_classes` classes in `dim` dimensions. Labels are
/// balanced round-robin; cluster centers are drawn once per class and
/// shared by both splits, so the splits are identically distributed but
/// contain no shared examples.
pub fn generate_task<S: Scalar>(
    seed: u64,
    n_classes: usize,
    dim: usize,
    n_train: usize,
    n_test: usize,
    separation: f64,
    noise: f64,
) -> Result<(Dataset<S>, Dataset<S>)> {
    if n_classes < 2 {
        return Err(Error::Task(format!("need >= 2 classes, got {n_classes}")));
    }
    if dim < 1 {
        return Err(Error::Task("need dim >= 1".into()));
    }
    if n_train == 0 || n_test == 0 {
        return Err(Error::Task(format!(
            "degenerate split sizes: train={n_train} test={n_test}"
        )));
    }
    if n_classes > 2 * dim {
        return Err(Error::Task(format!(
            "at most 2*dim classes supported ({n_classes} classes, dim {dim})"
        )));
    }
    let mut rng = rng::stream(seed, rng::STREAM_DATA);

    // Class centers: random directions orthogonalized so every pair is at
    // least `separation * sqrt(2)` apart; classes past `dim` reuse the
    // negated directions (distance 2 * separation to their pair).
    let mut dirs: Vec<Vec<f64>> = Vec::with_capacity(n_classes.min(dim));
    while dirs.len() < n_classes.min(dim) {
        let mut c: Vec<f64> = (0..dim).map(|_| rng.gen::<f64>() * 2.0 - 1.0).collect();
        for d in &dirs {
            let dot: f64 = c.iter().zip(d).map(|(a, b)| a * b).sum();
            for (v, dv) in c.iter_mut().zip(d) {
                *v -= dot * dv;
            }
        }
        let norm = c.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm < 1e-6 {
            continue;
        }
        for v in &mut c {
            *v /= norm;
        }
        dirs.push(c);
    }
    let centers: Vec<Vec<f64>> = (0..n_classes)
        .map(|k| {
            let base = &dirs[k % dirs.len()];
            let sign = if k < dirs.len() { 1.0 } else { -1.0 };
            base.iter().map(|v| v * sign * separation).collect()
        })
        .collect();

    let draw_split = |n: usize, rng: &mut ChaCha8Rng| -> Vec<Example<S>> {
        let mut out = Vec::with_capacity(n);
        for i in 0..n {
            let label = i % n_classes;
            let features = centers[label]
                .iter()
                .map(|&c| S::real(c) + S::real(noise) * S::sample_normal(rng))
                .collect();
            out.push(Example { features, label });
        }
        out.shuffle(rng);
        out
    };

    let train = Dataset {
        examples: draw_split(n_train, &mut rng),
        dim,
        n_classes,
    };
    let test = Dataset {
        examples: draw_split(n_test, &mut rng),
        dim,
        n_classes,
    };
    Ok((train, test))
}

/// Split `train` into one shard per trainer with Dirichlet(`alpha`) label
/// skew: for each class, per-trainer proportions are drawn from a
/// symmetric Dirichlet, so small `alpha` concentrates a class on few
/// trainers. Shards are disjoint, cover the whole set and are nonempty.
pub fn partition_noniid<S: Scalar>(
    train: &Dataset<S>,
    trainer_ids: &[usize],
    alpha: f64,
    seed: u64,
) -> Result<Vec<DataShard<S>>> {
    if trainer_ids.is_empty() {
        return Err(Error::Partition("no trainers".into()));
    }
    if !(alpha > 0.0) {
        return Err(Error::Partition(format!(
            "Dirichlet concentration must be > 0, got {alpha}"
        )));
    }
    let n_trainers = trainer_ids.len();
    if n_trainers > train.len() {
        return Err(Error::Partition(format!(
            "{n_trainers} trainers but only {} examples",
            train.len()
        )));
    }
    let mut rng = rng::stream(seed, rng::STREAM_PARTITION);
    let gamma = Gamma::new(alpha, 1.0)
        .map_err(|e| Error::Partition(format!("bad Dirichlet concentration: {e}")))?;

    // Indices per class, in dataset order.
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); train.n_classes];
    for (i, e) in train.examples.iter().enumerate() {
        by_class[e.label].push(i);
    }

    let mut assigned: Vec<Vec<usize>> = vec![Vec::new(); n_trainers];
    for class_idxs in by_class.iter_mut() {
        if class_idxs.is_empty() {
            continue;
        }
        class_idxs.shuffle(&mut rng);
        // Dirichlet draw via normalized Gammas.
        let mut props: Vec<f64> = (0..n_trainers).map(|_| gamma.sample(&mut rng)).collect();
        let total: f64 = props.iter().sum();
        if total <= 0.0 {
            // All-zero draw is possible for tiny alpha; fall back to one hot.
            let hot = rng.gen_range(0..n_trainers);
            props = vec![0.0; n_trainers];
            props[hot] = 1.0;
        } else {
            for p in &mut props {
                *p /= total;
            }
        }
        // Largest-remainder split of the class across trainers.
        let n = class_idxs.len();
        let mut counts: Vec<usize> = props.iter().map(|p| (p * n as f64).floor() as usize).collect();
        let mut short = n - counts.iter().sum::<usize>();
        let mut order: Vec<usize> = (0..n_trainers).collect();
        order.sort_by(|&a, &b| {
            let ra = props[a] * n as f64 - counts[a] as f64;
            let rb = props[b] * n as f64 - counts[b] as f64;
            rb.partial_cmp(&ra).unwrap().then(a.cmp(&b))
        });
        for &t in order.iter().cycle().take(n_trainers * 2) {
            if short == 0 {
                break;
            }
            counts[t] += 1;
            short -= 1;
        }
        let mut cursor = 0usize;
        for (t, &c) in counts.iter().enumerate() {
            assigned[t].extend_from_slice(&class_idxs[cursor..cursor + c]);
            cursor += c;
        }
    }

    // Every trainer must end up nonempty: move singles from the largest shard.
    loop {
        let empty = assigned.iter().position(|a| a.is_empty());
        let Some(e) = empty else { break };
        let donor = assigned
            .iter()
            .enumerate()
            .max_by_key(|(_, a)| a.len())
            .map(|(i, _)| i)
            .unwrap();
        if assigned[donor].len() <= 1 {
            return Err(Error::Partition("cannot make all shards nonempty".into()));
        }
        let idx = assigned[donor].pop().unwrap();
        assigned[e].push(idx);
    }

    Ok(assigned
        .into_iter()
        .zip(trainer_ids.iter())
        .map(|(mut idxs, &owner)| {
            idxs.sort_unstable();
            DataShard {
                examples: idxs.iter().map(|&i| train.examples[i].clone()).collect(),
                owner,
            }
        })
        .collect())
}

/// Dump a dataset as line-delimited JSON records.
pub fn dump_dataset<S: Scalar, W: Write>(ds: &Dataset<S>, mut w: W) -> Result<()> {
    let header = serde_json::json!({
        "dim": ds.dim,
        "classes": ds.n_classes,
        "examples": ds.len(),
    });
    writeln!(w, "{header}")?;
    for e in &ds.examples {
        let line = serde_json::to_string(e)
            .map_err(|e| Error::Task(format!("dataset encode: {e}")))?;
        writeln!(w, "{line}")?;
    }
    Ok(())
}

/// Inverse of [`dump_dataset`].
pub fn load_dataset<S: Scalar, R: BufRead>(r: R) -> Result<Dataset<S>> {
    let mut lines = r.lines();
    let header = lines
        .next()
        .ok_or_else(|| Error::Task("empty dataset file".into()))??;
    let meta: serde_json::Value = serde_json::from_str(&header)
        .map_err(|e| Error::Task(format!("dataset header: {e}")))?;
    let dim = meta["dim"].as_u64().ok_or_else(|| Error::Task("missing dim".into()))? as usize;
    let n_classes =
        meta["classes"].as_u64().ok_or_else(|| Error::Task("missing classes".into()))? as usize;
    let mut examples = Vec::new();
    for line in lines {
        let line = line?;
        if line.is_empty() {
            continue;
        }
        let e: Example<S> = serde_json::from_str(&line)
            .map_err(|e| Error::Task(format!("dataset record: {e}")))?;
        if e.features.len() != dim || e.label >= n_classes {
            return Err(Error::Task("dataset record out of declared shape".into()));
        }
        examples.push(e);
    }
    Ok(Dataset {
        examples,
        dim,
        n_classes,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy_task() -> (Dataset<f64>, Dataset<f64>) {
        generate_task(1, 2, 2, 200, 100, 3.0, 1.0).unwrap()
    }

    #[test]
    fn generate_task_sizes() {
        let (train, test) = toy_task();
        assert_eq!(train.len(), 200);
        assert_eq!(test.len(), 100);
    }

    #[test]
    fn generate_task_is_deterministic() {
        let (a, _) = toy_task();
        let (b, _) = toy_task();
        assert_eq!(a, b);
    }

    #[test]
    fn generate_task_rejects_degenerate() {
        assert!(generate_task::<f64>(1, 1, 2, 10, 10, 3.0, 1.0).is_err());
        assert!(generate_task::<f64>(1, 2, 0, 10, 10, 3.0, 1.0).is_err());
        assert!(generate_task::<f64>(1, 2, 2, 0, 10, 3.0, 1.0).is_err());
    }

    #[test]
    fn partition_covers_and_is_disjoint() {
        let (train, _) = toy_task();
        let ids: Vec<usize> = (0..7).collect();
        let shards = partition_noniid(&train, &ids, 0.5, 3).unwrap();
        let total: usize = shards.iter().map(|s| s.len()).sum();
        assert_eq!(total, train.len());
        for s in &shards {
            assert!(!s.is_empty());
        }
        // Disjoint + cover: multiset of examples matches the train set.
        let mut seen: Vec<String> = shards
            .iter()
            .flat_map(|s| s.examples.iter())
            .map(|e| format!("{:?}", e))
            .collect();
        let mut orig: Vec<String> = train.examples.iter().map(|e| format!("{:?}", e)).collect();
        seen.sort();
        orig.sort();
        assert_eq!(seen, orig);
    }

    #[test]
    fn iid_limit_matches_global_histogram() {
        let (train, _) = generate_task::<f64>(5, 3, 2, 600, 10, 3.0, 1.0).unwrap();
        let ids: Vec<usize> = (0..4).collect();
        let shards = partition_noniid(&train, &ids, 1e6, 11).unwrap();
        let global = train.label_histogram();
        let gtot = train.len() as f64;
        for s in &shards {
            let mut hist = vec![0usize; 3];
            for e in &s.examples {
                hist[e.label] += 1;
            }
            let stot = s.len() as f64;
            for c in 0..3 {
                let gp = global[c] as f64 / gtot;
                let sp = hist[c] as f64 / stot;
                assert!(
                    (gp - sp).abs() < 0.05,
                    "class {c}: shard {sp} vs global {gp}"
                );
            }
        }
    }

    #[test]
    fn strong_skew_concentrates_labels() {
        // Over 100 seeds, at least 90% of partitions should have some
        // trainer with > 60% of its shard in a single label.
        let (train, _) = generate_task::<f64>(9, 4, 2, 400, 10, 3.0, 1.0).unwrap();
        let ids: Vec<usize> = (0..10).collect();
        let mut hits = 0;
        for seed in 0..100u64 {
            let shards = partition_noniid(&train, &ids, 0.1, seed).unwrap();
            let skewed = shards.iter().any(|s| {
                let mut hist = vec![0usize; 4];
                for e in &s.examples {
                    hist[e.label] += 1;
                }
                let max = *hist.iter().max().unwrap();
                max as f64 / s.len() as f64 > 0.6
            });
            if skewed {
                hits += 1;
            }
        }
        assert!(hits > 90, "only {hits}/100 partitions showed skew");
    }

    #[test]
    fn partition_rejects_too_many_trainers() {
        let (train, _) = generate_task::<f64>(2, 2, 2, 4, 4, 3.0, 1.0).unwrap();
        let ids: Vec<usize> = (0..5).collect();
        assert!(partition_noniid(&train, &ids, 1.0, 0).is_err());
    }

    #[test]
    fn dataset_dump_load_roundtrip() {
        let (_, test) = toy_task();
        let mut buf = Vec::new();
        dump_dataset(&test, &mut buf).unwrap();
        let back: Dataset<f64> = load_dataset(&buf[..]).unwrap();
        assert_eq!(back, test);
    }
}
