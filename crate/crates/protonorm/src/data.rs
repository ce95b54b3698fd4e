//! Synthetic spiral dataset and client-side data partitioning.

use std::collections::BTreeMap;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};

use crate::error::{Error, Result};
use crate::linalg::Mat;
use crate::rng::{substream, Stream};

/// A labeled point cloud with a fixed feature dimension.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    pub features: Mat,
    pub labels: Vec<usize>,
    pub num_classes: usize,
    pub dim: usize,
}

impl LabeledDataset {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Per-class sample counts.
    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0usize; self.num_classes];
        for &label in &self.labels {
            counts[label] += 1;
        }
        counts
    }
}

/// One class's spiral coordinates at 1-based index `i` of `n` points,
/// given the angle noise term. The radius sweeps [1, 10] linearly and
/// the angle starts at the class's base direction, sweeping further for
/// higher class ids.
pub(crate) fn spiral_point(
    class: usize,
    i: usize,
    n: usize,
    num_classes: usize,
    noise: f64,
) -> (f64, f64) {
    let steps = (i - 1) as f64;
    let radius = 1.0 + steps * 9.0 / (n - 1) as f64;
    let base = 2.0 * std::f64::consts::PI * class as f64 / num_classes as f64;
    let sweep = steps * base / (n - 1) as f64;
    let omega = base + sweep + noise;
    (radius * omega.sin(), radius * omega.cos())
}

/// Generate the multi-class spiral dataset: `points_per_class` points
/// per class in two dimensions, with standard Gaussian angle noise
/// drawn per (class, index) from the seeded noise stream.
pub fn generate_spiral(
    points_per_class: usize,
    num_classes: usize,
    noise_seed: u64,
) -> Result<LabeledDataset> {
    if points_per_class < 2 {
        return Err(Error::Config(format!(
            "points_per_class must be >= 2, got {points_per_class}"
        )));
    }
    if num_classes < 1 {
        return Err(Error::Config("num_classes must be >= 1".into()));
    }
    let mut rng = substream(noise_seed, Stream::SpiralNoise, &[]);
    let total = points_per_class * num_classes;
    let mut features = Mat::zeros(total, 2);
    let mut labels = Vec::with_capacity(total);
    for class in 0..num_classes {
        for i in 1..=points_per_class {
            let noise: f64 = rng.sample(StandardNormal);
            let (x, y) = spiral_point(class, i, points_per_class, num_classes, noise);
            let row = features.row_mut((class * points_per_class) + i - 1);
            row[0] = x;
            row[1] = y;
            labels.push(class);
        }
    }
    Ok(LabeledDataset {
        features,
        labels,
        num_classes,
        dim: 2,
    })
}

/// How to distribute samples across clients.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PartitionMode {
    Iid,
    Dirichlet { alpha: f64 },
    Pathological { classes_per_client: usize },
}

/// Disjoint per-client dataset index assignments.
#[derive(Debug, Clone, PartialEq)]
pub struct PartitionPlan {
    pub assignments: Vec<Vec<usize>>,
}

impl PartitionPlan {
    pub fn num_clients(&self) -> usize {
        self.assignments.len()
    }

    /// Per-client, per-class sample counts.
    pub fn class_histograms(&self, dataset: &LabeledDataset) -> Vec<Vec<usize>> {
        self.assignments
            .iter()
            .map(|indices| {
                let mut counts = vec![0usize; dataset.num_classes];
                for &idx in indices {
                    counts[dataset.labels[idx]] += 1;
                }
                counts
            })
            .collect()
    }
}

fn per_class_indices(dataset: &LabeledDataset) -> Vec<Vec<usize>> {
    let mut by_class = vec![Vec::new(); dataset.num_classes];
    for (idx, &label) in dataset.labels.iter().enumerate() {
        by_class[label].push(idx);
    }
    by_class
}

/// Largest-remainder allocation of `total` items to `proportions`,
/// ties broken by index.
fn allocate_counts(proportions: &[f64], total: usize) -> Vec<usize> {
    let shares: Vec<f64> = proportions.iter().map(|p| p * total as f64).collect();
    let mut counts: Vec<usize> = shares.iter().map(|s| s.floor() as usize).collect();
    let assigned: usize = counts.iter().sum();
    let mut order: Vec<usize> = (0..proportions.len()).collect();
    order.sort_by(|&a, &b| {
        let fa = shares[a] - shares[a].floor();
        let fb = shares[b] - shares[b].floor();
        fb.partial_cmp(&fa).unwrap().then(a.cmp(&b))
    });
    for &client in order.iter().take(total - assigned) {
        counts[client] += 1;
    }
    counts
}

/// Partition a dataset's indices across `num_clients` clients.
pub fn partition(
    dataset: &LabeledDataset,
    num_clients: usize,
    mode: PartitionMode,
    seed: u64,
) -> Result<PartitionPlan> {
    if num_clients == 0 {
        return Err(Error::Config("num_clients must be >= 1".into()));
    }
    if dataset.is_empty() {
        return Err(Error::Config("cannot partition an empty dataset".into()));
    }
    let mut rng = substream(seed, Stream::Partition, &[]);
    let mut assignments = vec![Vec::new(); num_clients];

    match mode {
        PartitionMode::Iid => {
            let mut indices: Vec<usize> = (0..dataset.len()).collect();
            indices.shuffle(&mut rng);
            let base = dataset.len() / num_clients;
            let extra = dataset.len() % num_clients;
            let mut cursor = 0;
            for (client, assignment) in assignments.iter_mut().enumerate() {
                let take = base + usize::from(client < extra);
                assignment.extend_from_slice(&indices[cursor..cursor + take]);
                cursor += take;
            }
        }
        PartitionMode::Dirichlet { alpha } => {
            if alpha <= 0.0 {
                return Err(Error::Config(format!(
                    "dirichlet alpha must be > 0, got {alpha}"
                )));
            }
            let gamma = Gamma::new(alpha, 1.0)
                .map_err(|e| Error::Config(format!("invalid dirichlet alpha: {e}")))?;
            for mut class_indices in per_class_indices(dataset) {
                class_indices.shuffle(&mut rng);
                let draws: Vec<f64> = (0..num_clients).map(|_| gamma.sample(&mut rng)).collect();
                let total: f64 = draws.iter().sum();
                let proportions: Vec<f64> = if total > 0.0 {
                    draws.iter().map(|g| g / total).collect()
                } else {
                    vec![1.0 / num_clients as f64; num_clients]
                };
                let counts = allocate_counts(&proportions, class_indices.len());
                let mut cursor = 0;
                for (client, count) in counts.into_iter().enumerate() {
                    assignments[client].extend_from_slice(&class_indices[cursor..cursor + count]);
                    cursor += count;
                }
            }
        }
        PartitionMode::Pathological { classes_per_client } => {
            let k = dataset.num_classes;
            if classes_per_client == 0 || classes_per_client > k {
                return Err(Error::Config(format!(
                    "classes_per_client must be in 1..={k}, got {classes_per_client}"
                )));
            }
            let mut clients_of_class = vec![Vec::new(); k];
            for client in 0..num_clients {
                for offset in 0..classes_per_client {
                    let class = (client * classes_per_client + offset) % k;
                    clients_of_class[class].push(client);
                }
            }
            for (class, mut class_indices) in per_class_indices(dataset).into_iter().enumerate() {
                class_indices.shuffle(&mut rng);
                let holders = &clients_of_class[class];
                if holders.is_empty() {
                    continue;
                }
                let base = class_indices.len() / holders.len();
                let extra = class_indices.len() % holders.len();
                let mut cursor = 0;
                for (pos, &client) in holders.iter().enumerate() {
                    let take = base + usize::from(pos < extra);
                    assignments[client].extend_from_slice(&class_indices[cursor..cursor + take]);
                    cursor += take;
                }
            }
        }
    }

    for assignment in assignments.iter_mut() {
        assignment.sort_unstable();
    }
    if let Some(client) = assignments.iter().position(|a| a.is_empty()) {
        return Err(Error::Partition(format!(
            "client {client} received zero samples under {mode:?} (seed {seed}); try another seed"
        )));
    }
    Ok(PartitionPlan { assignments })
}

/// A client's train/test index split.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainTestSplit {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

/// A class that could not contribute a test sample.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SplitWarning {
    pub client: usize,
    pub class_id: usize,
}

/// All per-client splits plus degenerate-class warnings.
#[derive(Debug, Clone, PartialEq)]
pub struct SplitOutcome {
    pub per_client: Vec<TrainTestSplit>,
    pub warnings: Vec<SplitWarning>,
}

/// Stratified per-client train/test split. Every class with at least
/// two samples on a client contributes at least one test sample;
/// single-sample classes go entirely to train and are reported in the
/// warning list.
pub fn split_train_test(
    plan: &PartitionPlan,
    dataset: &LabeledDataset,
    train_fraction: f64,
    seed: u64,
) -> Result<SplitOutcome> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(Error::Config(format!(
            "train_fraction must be in (0, 1), got {train_fraction}"
        )));
    }
    let mut per_client = Vec::with_capacity(plan.num_clients());
    let mut warnings = Vec::new();
    for (client, indices) in plan.assignments.iter().enumerate() {
        let mut rng = substream(seed, Stream::Split, &[client as u64]);
        let mut by_class: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
        for &idx in indices {
            by_class.entry(dataset.labels[idx]).or_default().push(idx);
        }
        let mut train = Vec::new();
        let mut test = Vec::new();
        for (class_id, mut class_indices) in by_class {
            if class_indices.len() == 1 {
                warnings.push(SplitWarning { client, class_id });
                train.push(class_indices[0]);
                continue;
            }
            class_indices.shuffle(&mut rng);
            let n = class_indices.len();
            let n_train = ((train_fraction * n as f64).floor() as usize).clamp(1, n - 1);
            train.extend_from_slice(&class_indices[..n_train]);
            test.extend_from_slice(&class_indices[n_train..]);
        }
        train.sort_unstable();
        test.sort_unstable();
        per_client.push(TrainTestSplit { train, test });
    }
    Ok(SplitOutcome {
        per_client,
        warnings,
    })
}

/// Write a dataset in the line-oriented text format:
/// a `#K=..,D=..,n=..` header, then `class_id,feat_0,feat_1,...` rows.
pub fn save_dataset<W: Write>(dataset: &LabeledDataset, out: &mut W) -> Result<()> {
    writeln!(
        out,
        "#K={},D={},n={}",
        dataset.num_classes,
        dataset.dim,
        dataset.len()
    )?;
    for (i, &label) in dataset.labels.iter().enumerate() {
        write!(out, "{label}")?;
        for x in dataset.features.row(i) {
            write!(out, ",{x}")?;
        }
        writeln!(out)?;
    }
    Ok(())
}

/// Parse a dataset written by [`save_dataset`].
pub fn load_dataset(path: &Path) -> Result<LabeledDataset> {
    let reader = BufReader::new(std::fs::File::open(path)?);
    let mut lines = reader.lines();
    let header = lines
        .next()
        .ok_or_else(|| Error::Config("dataset file is empty".into()))??;
    let header = header
        .strip_prefix('#')
        .ok_or_else(|| Error::Config("dataset header must start with '#'".into()))?;
    let mut num_classes = None;
    let mut dim = None;
    for field in header.split(',') {
        let (key, value) = field
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("malformed header field `{field}`")))?;
        match key {
            "K" => num_classes = Some(parse_usize(value)?),
            "D" => dim = Some(parse_usize(value)?),
            "n" => {}
            other => return Err(Error::Config(format!("unknown header key `{other}`"))),
        }
    }
    let num_classes =
        num_classes.ok_or_else(|| Error::Config("dataset header is missing K".into()))?;
    let dim = dim.ok_or_else(|| Error::Config("dataset header is missing D".into()))?;
    let mut labels = Vec::new();
    let mut rows = Vec::new();
    for line in lines {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let mut fields = line.split(',');
        let label = parse_usize(
            fields
                .next()
                .ok_or_else(|| Error::Config("empty dataset row".into()))?,
        )?;
        if label >= num_classes {
            return Err(Error::Config(format!(
                "class id {label} out of range for K={num_classes}"
            )));
        }
        let feats: Vec<f64> = fields
            .map(|f| {
                f.parse::<f64>()
                    .map_err(|e| Error::Config(format!("bad feature value `{f}`: {e}")))
            })
            .collect::<Result<_>>()?;
        if feats.len() != dim {
            return Err(Error::Config(format!(
                "row has {} features, expected {dim}",
                feats.len()
            )));
        }
        labels.push(label);
        rows.push(feats);
    }
    Ok(LabeledDataset {
        features: Mat::from_rows(&rows),
        labels,
        num_classes,
        dim,
    })
}

fn parse_usize(s: &str) -> Result<usize> {
    s.parse::<usize>()
        .map_err(|e| Error::Config(format!("bad integer `{s}`: {e}")))
}

/// Write a partition plan as one `client_id:idx,idx,...` line per client.
pub fn save_partition_plan<W: Write>(plan: &PartitionPlan, out: &mut W) -> Result<()> {
    for (client, indices) in plan.assignments.iter().enumerate() {
        let joined: Vec<String> = indices.iter().map(|i| i.to_string()).collect();
        writeln!(out, "{client}:{}", joined.join(","))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn spiral_radii_span_one_to_ten() {
        let n = 5000;
        let (x1, y1) = spiral_point(0, 1, n, 6, 0.0);
        assert_eq!((x1 * x1 + y1 * y1).sqrt(), 1.0);
        let (xn, yn) = spiral_point(3, n, n, 6, 0.0);
        assert!(((xn * xn + yn * yn).sqrt() - 10.0).abs() < 1e-12);
        // interior radius is linear in the index
        let (x, y) = spiral_point(0, 2501, n, 6, 0.0);
        let r = (x * x + y * y).sqrt();
        assert!((r - (1.0 + 2500.0 * 9.0 / 4999.0)).abs() < 1e-12);
    }

    #[test]
    fn spiral_class_zero_without_noise_is_a_ray() {
        // class 0 has base angle 0 and no sweep, so every point is (0, r)
        for i in [1, 17, 5000] {
            let (x, y) = spiral_point(0, i, 5000, 6, 0.0);
            assert_eq!(x, 0.0);
            assert!((1.0..=10.0).contains(&y));
        }
    }

    #[test]
    fn spiral_six_class_base_angles_match_sixths_of_circle() {
        let (x, _) = spiral_point(3, 1, 5000, 6, 0.0);
        // class 3 starts at angle pi: sin(pi) ~ 0
        assert!(x.abs() < 1e-12);
    }

    #[test]
    fn spiral_dataset_shape_and_determinism() {
        let a = generate_spiral(5000, 6, 7).unwrap();
        assert_eq!(a.len(), 30000);
        assert_eq!(a.dim, 2);
        let b = generate_spiral(5000, 6, 7).unwrap();
        assert_eq!(a, b);
        let c = generate_spiral(5000, 6, 8).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn spiral_rejects_degenerate_sizes() {
        assert!(generate_spiral(1, 6, 0).is_err());
        assert!(generate_spiral(100, 0, 0).is_err());
    }

    fn small_spiral() -> LabeledDataset {
        generate_spiral(200, 6, 3).unwrap()
    }

    fn assert_conserves(plan: &PartitionPlan, dataset: &LabeledDataset) {
        let hists = plan.class_histograms(dataset);
        let mut totals = vec![0usize; dataset.num_classes];
        for hist in &hists {
            for (t, h) in totals.iter_mut().zip(hist) {
                *t += h;
            }
        }
        assert_eq!(totals, dataset.class_counts());
        // disjointness
        let mut seen = std::collections::HashSet::new();
        for a in &plan.assignments {
            for &i in a {
                assert!(seen.insert(i), "index {i} assigned twice");
            }
        }
    }

    #[test]
    fn partition_conserves_all_modes() {
        let ds = small_spiral();
        for mode in [
            PartitionMode::Iid,
            PartitionMode::Dirichlet { alpha: 0.1 },
            PartitionMode::Pathological {
                classes_per_client: 2,
            },
        ] {
            let plan = partition(&ds, 10, mode, 5).unwrap();
            assert_conserves(&plan, &ds);
        }
    }

    #[test]
    fn pathological_clients_hold_exactly_two_classes() {
        let ds = small_spiral();
        let plan = partition(
            &ds,
            10,
            PartitionMode::Pathological {
                classes_per_client: 2,
            },
            5,
        )
        .unwrap();
        for hist in plan.class_histograms(&ds) {
            let held = hist.iter().filter(|&&c| c > 0).count();
            assert_eq!(held, 2);
        }
    }

    #[test]
    fn dirichlet_partition_is_reproducible() {
        let ds = small_spiral();
        let a = partition(&ds, 10, PartitionMode::Dirichlet { alpha: 0.1 }, 11).unwrap();
        let b = partition(&ds, 10, PartitionMode::Dirichlet { alpha: 0.1 }, 11).unwrap();
        assert_eq!(a, b);
    }

    /// Golden per-client class histograms for the seeded stream, frozen
    /// from a captured run. Any change to the partition RNG path breaks
    /// this on purpose.
    #[test]
    fn dirichlet_partition_matches_golden_histograms() {
        let ds = generate_spiral(5000, 6, 7).unwrap();
        let plan = partition(&ds, 10, PartitionMode::Dirichlet { alpha: 0.1 }, 11).unwrap();
        let golden: [[usize; 6]; 10] = [
            [1778, 70, 54, 0, 0, 48],
            [0, 3, 459, 296, 292, 0],
            [65, 185, 0, 44, 0, 109],
            [198, 0, 0, 1241, 1, 0],
            [2633, 4149, 17, 48, 369, 3],
            [325, 0, 1695, 0, 66, 348],
            [1, 0, 873, 0, 23, 965],
            [0, 73, 0, 2432, 4249, 1746],
            [0, 95, 1818, 0, 0, 1781],
            [0, 425, 84, 939, 0, 0],
        ];
        let hists = plan.class_histograms(&ds);
        for (hist, expected) in hists.iter().zip(&golden) {
            assert_eq!(hist.as_slice(), expected.as_slice());
        }
    }

    #[test]
    fn dirichlet_large_alpha_is_nearly_uniform() {
        let ds = generate_spiral(5000, 6, 1).unwrap();
        let plan = partition(&ds, 10, PartitionMode::Dirichlet { alpha: 1e4 }, 2).unwrap();
        for hist in plan.class_histograms(&ds) {
            let total: usize = hist.iter().sum();
            for count in hist {
                let p = count as f64 / total as f64;
                let uniform = 1.0 / 6.0;
                assert!(
                    ((p - uniform) / uniform).abs() < 0.10,
                    "class proportion {p} deviates from uniform"
                );
            }
        }
    }

    #[test]
    fn iid_partition_balances_sizes() {
        let ds = small_spiral();
        let plan = partition(&ds, 7, PartitionMode::Iid, 4).unwrap();
        let sizes: Vec<usize> = plan.assignments.iter().map(|a| a.len()).collect();
        let min = *sizes.iter().min().unwrap();
        let max = *sizes.iter().max().unwrap();
        assert!(max - min <= 1);
        assert_conserves(&plan, &ds);
    }

    #[test]
    fn split_is_75_25_on_a_round_shard() {
        // one client holding 100 samples of a single class
        let ds = generate_spiral(100, 1, 9).unwrap();
        let plan = partition(&ds, 1, PartitionMode::Iid, 9).unwrap();
        let out = split_train_test(&plan, &ds, 0.75, 9).unwrap();
        assert_eq!(out.per_client[0].train.len(), 75);
        assert_eq!(out.per_client[0].test.len(), 25);
        assert!(out.warnings.is_empty());
    }

    #[test]
    fn split_single_sample_class_goes_to_train_with_warning() {
        let ds = LabeledDataset {
            features: Mat::from_rows(&[vec![0.0, 0.0], vec![1.0, 1.0], vec![2.0, 2.0]]),
            labels: vec![0, 0, 1],
            num_classes: 2,
            dim: 2,
        };
        let plan = PartitionPlan {
            assignments: vec![vec![0, 1, 2]],
        };
        let out = split_train_test(&plan, &ds, 0.75, 1).unwrap();
        assert_eq!(
            out.warnings,
            vec![SplitWarning {
                client: 0,
                class_id: 1
            }]
        );
        assert!(out.per_client[0].train.contains(&2));
        assert!(!out.per_client[0].test.contains(&2));
        // the two-sample class still contributes one test sample
        assert_eq!(out.per_client[0].test.len(), 1);
    }

    #[test]
    fn split_deterministic_for_same_seed() {
        let ds = small_spiral();
        let plan = partition(&ds, 5, PartitionMode::Dirichlet { alpha: 0.5 }, 3).unwrap();
        let a = split_train_test(&plan, &ds, 0.75, 3).unwrap();
        let b = split_train_test(&plan, &ds, 0.75, 3).unwrap();
        assert_eq!(a, b);
        let c = split_train_test(&plan, &ds, 0.75, 4).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn split_rejects_bad_fraction() {
        let ds = small_spiral();
        let plan = partition(&ds, 2, PartitionMode::Iid, 1).unwrap();
        assert!(split_train_test(&plan, &ds, 0.0, 1).is_err());
        assert!(split_train_test(&plan, &ds, 1.0, 1).is_err());
    }

    #[test]
    fn dataset_text_roundtrip() {
        let ds = generate_spiral(10, 3, 5).unwrap();
        let mut buf = Vec::new();
        save_dataset(&ds, &mut buf).unwrap();
        let dir = std::env::temp_dir().join("protonorm_dataset_roundtrip.csv");
        std::fs::write(&dir, &buf).unwrap();
        let back = load_dataset(&dir).unwrap();
        assert_eq!(ds, back);
        std::fs::remove_file(&dir).ok();
    }
}

#[cfg(test)]
mod proptests {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn partition_conserves_classes(
            points_per_class in 5usize..40,
            num_classes in 2usize..6,
            num_clients in 1usize..8,
            seed in 0u64..1000,
            mode_pick in 0usize..3,
        ) {
            let ds = generate_spiral(points_per_class, num_classes, seed).unwrap();
            let mode = match mode_pick {
                0 => PartitionMode::Iid,
                1 => PartitionMode::Dirichlet { alpha: 0.5 },
                _ => {
                    // keep every class covered: M * cpc >= K
                    let min_cpc = num_classes.div_ceil(num_clients);
                    let cpc = (1 + seed as usize % num_classes).max(min_cpc).min(num_classes);
                    PartitionMode::Pathological { classes_per_client: cpc }
                }
            };
            // degenerate draws may starve a client; that is a documented error
            if let Ok(plan) = partition(&ds, num_clients, mode, seed) {
                let hists = plan.class_histograms(&ds);
                let mut totals = vec![0usize; num_classes];
                for hist in &hists {
                    for (t, h) in totals.iter_mut().zip(hist) {
                        *t += h;
                    }
                }
                prop_assert_eq!(totals, ds.class_counts());
            }
        }

        #[test]
        fn split_partitions_each_shard(
            seed in 0u64..500,
            num_clients in 1usize..6,
            fraction in 0.2f64..0.9,
        ) {
            let ds = generate_spiral(30, 4, seed).unwrap();
            let plan = partition(&ds, num_clients, PartitionMode::Iid, seed).unwrap();
            let out = split_train_test(&plan, &ds, fraction, seed).unwrap();
            for (client, split) in out.per_client.iter().enumerate() {
                let mut joined = split.train.clone();
                joined.extend_from_slice(&split.test);
                joined.sort_unstable();
                prop_assert_eq!(&joined, &plan.assignments[client]);
            }
        }
    }
}
