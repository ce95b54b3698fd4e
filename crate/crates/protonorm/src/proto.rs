//! Class prototypes: per-class mean feature vectors, their aggregation
//! across clients, upscaling, nearest-prototype classification, and
//! separation metrics.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::linalg::{euclidean_distance, Mat};

/// A class identifier paired with a feature-space vector.
///
/// `support` is the number of samples behind a local prototype; for
/// aggregated prototypes it carries the total contributing count.
#[derive(Debug, Clone, PartialEq)]
pub struct Prototype {
    pub class_id: usize,
    pub vec: Vec<f64>,
    pub support: usize,
}

/// Per-class prototypes held by one party (client or server).
///
/// Classes never observed by the party are simply absent. Iteration is
/// always in ascending class order.
#[derive(Debug, Clone, PartialEq)]
pub struct PrototypeSet {
    by_class: BTreeMap<usize, Prototype>,
    dim: usize,
    num_classes: usize,
}

impl PrototypeSet {
    pub fn new(dim: usize, num_classes: usize) -> Self {
        PrototypeSet {
            by_class: BTreeMap::new(),
            dim,
            num_classes,
        }
    }

    pub fn insert(&mut self, proto: Prototype) {
        debug_assert_eq!(proto.vec.len(), self.dim);
        self.by_class.insert(proto.class_id, proto);
    }

    pub fn get(&self, class_id: usize) -> Option<&Prototype> {
        self.by_class.get(&class_id)
    }

    pub fn len(&self) -> usize {
        self.by_class.len()
    }

    pub fn is_empty(&self) -> bool {
        self.by_class.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    /// Prototypes in ascending class order.
    pub fn iter(&self) -> impl Iterator<Item = &Prototype> {
        self.by_class.values()
    }

    pub fn classes(&self) -> impl Iterator<Item = usize> + '_ {
        self.by_class.keys().copied()
    }
}

/// Which aggregation the sample-count-weighted form uses.
///
/// `Literal` keeps the 1/|N_j| prefactor in front of the weighted sum,
/// shrinking magnitudes when several clients hold a class. `Convex`
/// drops the prefactor so the result is a convex combination of the
/// contributing local prototypes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum WeightedForm {
    #[default]
    Literal,
    Convex,
}

/// Per-class mean of the feature rows, with sample counts as support.
pub fn local_prototypes(features: &Mat, labels: &[usize], num_classes: usize) -> PrototypeSet {
    assert_eq!(features.rows(), labels.len(), "feature/label count mismatch");
    let dim = features.cols();
    let mut sums: BTreeMap<usize, (Vec<f64>, usize)> = BTreeMap::new();
    for (i, &label) in labels.iter().enumerate() {
        let entry = sums.entry(label).or_insert_with(|| (vec![0.0; dim], 0));
        for (s, &x) in entry.0.iter_mut().zip(features.row(i)) {
            *s += x;
        }
        entry.1 += 1;
    }
    let mut set = PrototypeSet::new(dim, num_classes);
    for (class_id, (mut sum, count)) in sums {
        for s in sum.iter_mut() {
            *s /= count as f64;
        }
        set.insert(Prototype {
            class_id,
            vec: sum,
            support: count,
        });
    }
    set
}

fn check_nonempty(locals: &[PrototypeSet]) -> Result<(usize, usize)> {
    let first = locals
        .iter()
        .find(|s| !s.is_empty())
        .ok_or_else(|| Error::Contract("aggregation over empty prototype sets".into()))?;
    Ok((first.dim(), first.num_classes()))
}

/// Unweighted per-class mean over the clients holding each class.
pub fn aggregate_simple(locals: &[PrototypeSet]) -> Result<PrototypeSet> {
    let (dim, num_classes) = check_nonempty(locals)?;
    let mut out = PrototypeSet::new(dim, num_classes);
    let classes: std::collections::BTreeSet<usize> =
        locals.iter().flat_map(|s| s.classes()).collect();
    for class_id in classes {
        let contributors: Vec<&Prototype> =
            locals.iter().filter_map(|s| s.get(class_id)).collect();
        let mut mean = vec![0.0; dim];
        for p in &contributors {
            for (m, &x) in mean.iter_mut().zip(&p.vec) {
                *m += x;
            }
        }
        let n = contributors.len() as f64;
        for m in mean.iter_mut() {
            *m /= n;
        }
        out.insert(Prototype {
            class_id,
            vec: mean,
            support: contributors.iter().map(|p| p.support).sum(),
        });
    }
    Ok(out)
}

/// Sample-count-weighted per-class aggregation.
pub fn aggregate_weighted(locals: &[PrototypeSet], form: WeightedForm) -> Result<PrototypeSet> {
    let (dim, num_classes) = check_nonempty(locals)?;
    let mut out = PrototypeSet::new(dim, num_classes);
    let classes: std::collections::BTreeSet<usize> =
        locals.iter().flat_map(|s| s.classes()).collect();
    for class_id in classes {
        let contributors: Vec<&Prototype> =
            locals.iter().filter_map(|s| s.get(class_id)).collect();
        let total: usize = contributors.iter().map(|p| p.support).sum();
        if total == 0 {
            return Err(Error::Contract(format!(
                "class {class_id} has zero total support"
            )));
        }
        let mut acc = vec![0.0; dim];
        for p in &contributors {
            let w = p.support as f64 / total as f64;
            for (a, &x) in acc.iter_mut().zip(&p.vec) {
                *a += w * x;
            }
        }
        if form == WeightedForm::Literal {
            let n = contributors.len() as f64;
            for a in acc.iter_mut() {
                *a /= n;
            }
        }
        out.insert(Prototype {
            class_id,
            vec: acc,
            support: total,
        });
    }
    Ok(out)
}

/// Multiply every prototype vector by `gamma`.
pub fn upscale(protos: &PrototypeSet, gamma: f64) -> PrototypeSet {
    let mut out = PrototypeSet::new(protos.dim(), protos.num_classes());
    for p in protos.iter() {
        out.insert(Prototype {
            class_id: p.class_id,
            vec: p.vec.iter().map(|x| x * gamma).collect(),
            support: p.support,
        });
    }
    out
}

/// Class of the nearest prototype in Euclidean distance.
///
/// Ties resolve to the smallest class id (iteration is ascending and
/// only a strictly smaller distance replaces the incumbent).
pub fn classify_nearest(feature: &[f64], protos: &PrototypeSet) -> usize {
    assert!(!protos.is_empty(), "classify_nearest on empty prototype set");
    let mut best_class = usize::MAX;
    let mut best_dist = f64::INFINITY;
    for p in protos.iter() {
        let d = euclidean_distance(feature, &p.vec);
        if d < best_dist {
            best_dist = d;
            best_class = p.class_id;
        }
    }
    best_class
}

/// Per-class margins (min distance to any other prototype), each
/// divided by the maximum margin; returned in ascending class order.
pub fn margins(protos: &PrototypeSet) -> Result<Vec<(usize, f64)>> {
    if protos.len() < 2 {
        return Err(Error::Contract(
            "margins require at least two prototypes".into(),
        ));
    }
    let all: Vec<&Prototype> = protos.iter().collect();
    let mut raw = Vec::with_capacity(all.len());
    for (j, pj) in all.iter().enumerate() {
        let mut min = f64::INFINITY;
        for (k, pk) in all.iter().enumerate() {
            if j != k {
                min = min.min(euclidean_distance(&pj.vec, &pk.vec));
            }
        }
        raw.push((pj.class_id, min));
    }
    let max = raw.iter().map(|&(_, m)| m).fold(f64::NEG_INFINITY, f64::max);
    Ok(raw.into_iter().map(|(c, m)| (c, m / max)).collect())
}

/// Min/mean/max over the unordered pairwise distances.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DistanceStats {
    pub min: f64,
    pub mean: f64,
    pub max: f64,
}

pub fn pairwise_distance_stats(protos: &PrototypeSet) -> Result<DistanceStats> {
    if protos.len() < 2 {
        return Err(Error::Contract(
            "pairwise distances require at least two prototypes".into(),
        ));
    }
    let all: Vec<&Prototype> = protos.iter().collect();
    let mut min = f64::INFINITY;
    let mut max = f64::NEG_INFINITY;
    let mut sum = 0.0;
    let mut count = 0usize;
    for j in 0..all.len() {
        for k in (j + 1)..all.len() {
            let d = euclidean_distance(&all[j].vec, &all[k].vec);
            min = min.min(d);
            max = max.max(d);
            sum += d;
            count += 1;
        }
    }
    Ok(DistanceStats {
        min,
        mean: sum / count as f64,
        max,
    })
}
