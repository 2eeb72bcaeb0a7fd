//! Distance metrics and a seeded k-means engine.
//!
//! Two metrics are supported. Euclidean k-means is classic Lloyd iteration
//! minimizing the sum of squared distances. Cosine k-means is spherical:
//! points are projected onto the unit sphere, centroids are renormalized
//! means, and the objective is the sum of cosine distances. On unit vectors
//! `||x - y||^2 = 2 * cosine_distance(x, y)`, so the two agree on normalized
//! data up to a factor of two in inertia.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::embed::write_vector_file;
use crate::io::{check_id, read_to_string, write_atomic};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    Cosine,
    Euclidean,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

fn check_dims(x: &[f64], y: &[f64]) -> Result<()> {
    if x.len() != y.len() {
        return Err(Error::DimensionMismatch {
            expected: x.len(),
            found: y.len(),
        });
    }
    Ok(())
}

pub fn cosine_similarity(x: &[f64], y: &[f64]) -> Result<f64> {
    check_dims(x, y)?;
    let (nx, ny) = (norm(x), norm(y));
    if nx == 0.0 || ny == 0.0 {
        return Err(Error::ZeroVector);
    }
    Ok((dot(x, y) / (nx * ny)).clamp(-1.0, 1.0))
}

pub fn cosine_distance(x: &[f64], y: &[f64]) -> Result<f64> {
    Ok(1.0 - cosine_similarity(x, y)?)
}

pub fn euclidean_distance(x: &[f64], y: &[f64]) -> Result<f64> {
    check_dims(x, y)?;
    Ok(squared_euclidean(x, y).sqrt())
}

fn squared_euclidean(x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KmeansConfig {
    pub k: usize,
    pub metric: Metric,
    pub max_iterations: usize,
    pub seed: u64,
    /// Stop once no centroid moves more than this. For the Euclidean metric
    /// the threshold is multiplied by the data scale (RMS distance of the
    /// points to their overall mean).
    pub tolerance: f64,
}

impl KmeansConfig {
    pub fn new(k: usize, metric: Metric) -> Self {
        KmeansConfig {
            k,
            metric,
            max_iterations: 300,
            seed: 0,
            tolerance: match metric {
                Metric::Cosine => 1e-6,
                Metric::Euclidean => 1e-4,
            },
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClusterAssignment {
    pub labels: Vec<usize>,
    pub centroids: Vec<Vec<f64>>,
    /// Sum of squared Euclidean distances, or of cosine distances, from each
    /// point to its centroid.
    pub inertia: f64,
    pub iterations_run: usize,
    /// Inertia after every assignment step, the last entry equal to `inertia`.
    pub inertia_history: Vec<f64>,
}

impl ClusterAssignment {
    pub fn k(&self) -> usize {
        self.centroids.len()
    }

    pub fn cluster_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.k()];
        for &l in &self.labels {
            sizes[l] += 1;
        }
        sizes
    }
}

struct Job<'a> {
    points: Vec<std::borrow::Cow<'a, [f64]>>,
    metric: Metric,
    dim: usize,
}

impl<'a> Job<'a> {
    fn new(points: &'a [Vec<f64>], metric: Metric) -> Result<Self> {
        let dim = points.first().map(Vec::len).unwrap_or(0);
        let mut prepared = Vec::with_capacity(points.len());
        for p in points {
            if p.len() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    found: p.len(),
                });
            }
            if !p.iter().all(|v| v.is_finite()) {
                return Err(Error::NonFinite);
            }
            prepared.push(match metric {
                Metric::Euclidean => std::borrow::Cow::Borrowed(p.as_slice()),
                Metric::Cosine => {
                    let n = norm(p);
                    if n == 0.0 {
                        return Err(Error::ZeroVector);
                    }
                    std::borrow::Cow::Owned(p.iter().map(|v| v / n).collect())
                }
            });
        }
        Ok(Job {
            points: prepared,
            metric,
            dim,
        })
    }

    /// Per-point cost against a centroid: squared Euclidean distance, or
    /// cosine distance between unit vectors.
    fn cost(&self, p: &[f64], c: &[f64]) -> f64 {
        match self.metric {
            Metric::Euclidean => squared_euclidean(p, c),
            Metric::Cosine => (1.0 - dot(p, c)).clamp(0.0, 2.0),
        }
    }

    fn scale(&self) -> f64 {
        match self.metric {
            Metric::Cosine => 1.0,
            Metric::Euclidean => {
                let n = self.points.len() as f64;
                let mut mean = vec![0.0; self.dim];
                for p in &self.points {
                    for (m, v) in mean.iter_mut().zip(p.iter()) {
                        *m += v / n;
                    }
                }
                (self.points.iter().map(|p| squared_euclidean(p, &mean)).sum::<f64>() / n).sqrt()
            }
        }
    }

    /// Nearest centroid for every point, ties to the lowest cluster id.
    fn assign(&self, centroids: &[Vec<f64>], labels: &mut [usize], costs: &mut [f64]) -> f64 {
        for (i, p) in self.points.iter().enumerate() {
            let mut best = 0;
            let mut best_cost = f64::INFINITY;
            for (c, centroid) in centroids.iter().enumerate() {
                let d = self.cost(p, centroid);
                if d < best_cost {
                    best = c;
                    best_cost = d;
                }
            }
            labels[i] = best;
            costs[i] = best_cost;
        }
        costs.iter().sum()
    }

    fn update(&self, labels: &[usize], old: &[Vec<f64>]) -> (Vec<Vec<f64>>, Vec<usize>) {
        let k = old.len();
        let mut sums = vec![vec![0.0; self.dim]; k];
        let mut counts = vec![0usize; k];
        for (p, &l) in self.points.iter().zip(labels) {
            counts[l] += 1;
            for (s, v) in sums[l].iter_mut().zip(p.iter()) {
                *s += v;
            }
        }
        let mut first_member = vec![None; k];
        for (i, &l) in labels.iter().enumerate() {
            first_member[l].get_or_insert(i);
        }
        let mut empty = Vec::new();
        let centroids = sums
            .into_iter()
            .enumerate()
            .map(|(c, mut s)| {
                if counts[c] == 0 {
                    empty.push(c);
                    return old[c].clone();
                }
                let n = counts[c] as f64;
                s.iter_mut().for_each(|v| *v /= n);
                if self.metric == Metric::Cosine {
                    let len = norm(&s);
                    if len > 0.0 {
                        s.iter_mut().for_each(|v| *v /= len);
                    } else {
                        // members cancel out exactly; any member is an optimal direction
                        s = self.points[first_member[c].unwrap()].to_vec();
                    }
                }
                s
            })
            .collect();
        (centroids, empty)
    }

    fn plus_plus_init(&self, k: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
        let n = self.points.len();
        let mut centroids = Vec::with_capacity(k);
        let mut chosen = vec![false; n];
        let first = rng.gen_range(0..n);
        chosen[first] = true;
        centroids.push(self.points[first].to_vec());
        let mut nearest: Vec<f64> = self.points.iter().map(|p| self.cost(p, &centroids[0])).collect();
        while centroids.len() < k {
            let total: f64 = nearest.iter().sum();
            let pick = if total > 0.0 {
                let mut r = rng.gen::<f64>() * total;
                let mut pick = None;
                for (i, &w) in nearest.iter().enumerate() {
                    if w > 0.0 {
                        pick = Some(i);
                        if r < w {
                            break;
                        }
                        r -= w;
                    }
                }
                pick.expect("positive total weight")
            } else {
                // every remaining point coincides with a chosen centroid
                (0..n).find(|&i| !chosen[i]).unwrap_or(0)
            };
            chosen[pick] = true;
            centroids.push(self.points[pick].to_vec());
            let c = centroids.last().unwrap();
            for (d, p) in nearest.iter_mut().zip(&self.points) {
                *d = d.min(self.cost(p, c));
            }
        }
        centroids
    }
}

/// Runs k-means with k-means++ seeding drawn from `cfg.seed`.
pub fn kmeans(points: &[Vec<f64>], cfg: &KmeansConfig) -> Result<ClusterAssignment> {
    let job = prepare(points, cfg)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let init = job.plus_plus_init(cfg.k, &mut rng);
    run(&job, cfg, init)
}

/// Runs k-means from explicit initial centroids instead of k-means++.
/// Under the cosine metric the initial centroids are normalized.
pub fn kmeans_from(
    points: &[Vec<f64>],
    cfg: &KmeansConfig,
    initial: Vec<Vec<f64>>,
) -> Result<ClusterAssignment> {
    let job = prepare(points, cfg)?;
    if initial.len() != cfg.k {
        return Err(Error::DimensionMismatch {
            expected: cfg.k,
            found: initial.len(),
        });
    }
    let mut init = Vec::with_capacity(initial.len());
    for c in initial {
        if c.len() != job.dim {
            return Err(Error::DimensionMismatch {
                expected: job.dim,
                found: c.len(),
            });
        }
        init.push(match cfg.metric {
            Metric::Euclidean => c,
            Metric::Cosine => {
                let n = norm(&c);
                if n == 0.0 {
                    return Err(Error::ZeroVector);
                }
                c.iter().map(|v| v / n).collect()
            }
        });
    }
    run(&job, cfg, init)
}

fn prepare<'a>(points: &'a [Vec<f64>], cfg: &KmeansConfig) -> Result<Job<'a>> {
    if cfg.k == 0 || cfg.k > points.len() {
        return Err(Error::TooFewPoints {
            k: cfg.k,
            points: points.len(),
        });
    }
    if cfg.max_iterations == 0 || !(cfg.tolerance >= 0.0) {
        return Err(Error::Config(
            "k-means needs max_iterations > 0 and a non-negative tolerance".into(),
        ));
    }
    Job::new(points, cfg.metric)
}

const MONOTONE_SLACK: f64 = 1e-9;

fn run(job: &Job<'_>, cfg: &KmeansConfig, mut centroids: Vec<Vec<f64>>) -> Result<ClusterAssignment> {
    let n = job.points.len();
    let threshold = cfg.tolerance * job.scale();
    let mut labels = vec![0usize; n];
    let mut costs = vec![0.0; n];
    let mut history = Vec::new();
    let mut iterations_run = 0;

    let mut inertia = job.assign(&centroids, &mut labels, &mut costs);
    history.push(inertia);
    while iterations_run < cfg.max_iterations {
        let (mut updated, empty) = job.update(&labels, &centroids);
        if !empty.is_empty() {
            let mut dist: Vec<f64> = job
                .points
                .iter()
                .zip(&labels)
                .map(|(p, &l)| job.cost(p, &updated[l]))
                .collect();
            for c in empty {
                let far = (0..n)
                    .max_by(|&a, &b| dist[a].total_cmp(&dist[b]).then(b.cmp(&a)))
                    .expect("at least one point");
                updated[c] = job.points[far].to_vec();
                dist[far] = 0.0;
            }
        }
        let shift = centroids
            .iter()
            .zip(&updated)
            .map(|(a, b)| squared_euclidean(a, b).sqrt())
            .fold(0.0, f64::max);
        centroids = updated;
        iterations_run += 1;

        let next = job.assign(&centroids, &mut labels, &mut costs);
        debug_assert!(
            next <= inertia + MONOTONE_SLACK * inertia.abs().max(1.0),
            "k-means inertia increased from {inertia} to {next}"
        );
        inertia = next;
        history.push(inertia);
        if shift <= threshold {
            break;
        }
    }

    Ok(ClusterAssignment {
        labels,
        centroids,
        inertia,
        iterations_run,
        inertia_history: history,
    })
}

/// Writes `id,cluster` rows.
pub fn write_assignment_file<'a>(
    path: &Path,
    rows: impl IntoIterator<Item = (&'a str, usize)>,
) -> Result<()> {
    let mut out = String::from("id,cluster\n");
    for (id, c) in rows {
        check_id(id, &[',', '\n', '\r'])?;
        out.push_str(&format!("{id},{c}\n"));
    }
    write_atomic(path, out.as_bytes())
}

pub fn read_assignment_file(path: &Path) -> Result<Vec<(String, usize)>> {
    let text = read_to_string(path)?;
    let mut rows = Vec::new();
    for (i, line) in text.lines().enumerate().skip(1) {
        if line.is_empty() {
            continue;
        }
        let (id, c) = line
            .rsplit_once(',')
            .ok_or_else(|| Error::parse(path, i + 1, "expected `id,cluster`"))?;
        let c = c
            .parse()
            .map_err(|_| Error::parse(path, i + 1, format!("bad cluster id `{c}`")))?;
        rows.push((id.to_string(), c));
    }
    Ok(rows)
}

/// Writes centroids in the embedding text format as `centroid_<i>` rows.
pub fn write_centroid_file(path: &Path, centroids: &[Vec<f64>]) -> Result<()> {
    let dim = centroids.first().map(Vec::len).unwrap_or(0);
    let names: Vec<String> = (0..centroids.len()).map(|i| format!("centroid_{i}")).collect();
    write_vector_file(
        path,
        dim,
        names.iter().map(String::as_str).zip(centroids.iter().map(Vec::as_slice)),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn cosine_similarity_examples() {
        assert!(close(cosine_similarity(&[3.0, 4.0], &[3.0, 4.0]).unwrap(), 1.0, 1e-15));
        assert_eq!(cosine_similarity(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), 0.0);
        assert!(close(
            cosine_similarity(&[1.0, 1.0], &[1.0, 0.0]).unwrap(),
            0.7071068,
            1e-7
        ));
        assert!(matches!(cosine_similarity(&[0.0, 0.0], &[1.0, 0.0]), Err(Error::ZeroVector)));
    }

    #[test]
    fn cosine_distance_examples() {
        assert!(close(cosine_distance(&[2.0, 5.0], &[2.0, 5.0]).unwrap(), 0.0, 1e-15));
        assert_eq!(cosine_distance(&[1.0, 0.0], &[-1.0, 0.0]).unwrap(), 2.0);
        assert!(close(
            cosine_distance(&[1.0, 1.0], &[1.0, 0.0]).unwrap(),
            0.2928932,
            1e-7
        ));
        assert!(cosine_distance(&[1.0], &[0.0]).is_err());
    }

    #[test]
    fn euclidean_examples() {
        assert_eq!(euclidean_distance(&[1.5, 2.0], &[1.5, 2.0]).unwrap(), 0.0);
        assert_eq!(euclidean_distance(&[0.0, 0.0], &[3.0, 4.0]).unwrap(), 5.0);
        assert!(matches!(
            euclidean_distance(&[0.0], &[1.0, 2.0]),
            Err(Error::DimensionMismatch { .. })
        ));
        let x = [0.6, 0.8];
        let y = [1.0, 0.0];
        let d2 = euclidean_distance(&x, &y).unwrap().powi(2);
        assert!(close(d2, 2.0 * cosine_distance(&x, &y).unwrap(), 1e-12));
    }

    #[test]
    fn k_equals_n_gives_zero_inertia() {
        let pts = vec![vec![0.0, 1.0], vec![5.0, 5.0], vec![-3.0, 2.0]];
        for metric in [Metric::Euclidean, Metric::Cosine] {
            let a = kmeans(&pts, &KmeansConfig::new(3, metric)).unwrap();
            assert!(a.inertia.abs() < 1e-12);
            let mut labels = a.labels.clone();
            labels.sort();
            assert_eq!(labels, vec![0, 1, 2]);
        }
    }

    #[test]
    fn identical_points() {
        let pts = vec![vec![1.0, 2.0]; 6];
        for metric in [Metric::Euclidean, Metric::Cosine] {
            let a = kmeans(&pts, &KmeansConfig::new(3, metric).with_seed(7)).unwrap();
            assert_eq!(a.k(), 3);
            assert!(a.inertia.abs() < 1e-12);
            for c in &a.centroids {
                for (x, y) in c.iter().zip(&a.centroids[0]) {
                    assert!(close(*x, *y, 1e-12));
                }
            }
        }
    }

    #[test]
    fn empty_cluster_is_reseeded_with_farthest_point() {
        // the second initial centroid is far from everything and starts empty
        let pts = vec![vec![0.0], vec![1.0], vec![10.0]];
        let cfg = KmeansConfig::new(2, Metric::Euclidean);
        let a = kmeans_from(&pts, &cfg, vec![vec![0.0], vec![100.0]]).unwrap();
        assert_eq!(a.labels, vec![0, 0, 1]);
        assert!(close(a.inertia, 0.5, 1e-12));
    }

    #[test]
    fn error_cases() {
        let pts = vec![vec![1.0, 0.0], vec![0.0, 1.0]];
        assert!(matches!(
            kmeans(&pts, &KmeansConfig::new(3, Metric::Euclidean)),
            Err(Error::TooFewPoints { k: 3, points: 2 })
        ));
        assert!(matches!(
            kmeans(&[vec![0.0, 0.0], vec![1.0, 0.0]], &KmeansConfig::new(1, Metric::Cosine)),
            Err(Error::ZeroVector)
        ));
        assert!(matches!(
            kmeans(&[vec![0.0, 0.0], vec![1.0]], &KmeansConfig::new(1, Metric::Euclidean)),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn seeded_runs_are_identical() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let pts: Vec<Vec<f64>> = (0..200)
            .map(|_| (0..5).map(|_| rng.gen_range(-1.0..1.0)).collect())
            .collect();
        for metric in [Metric::Euclidean, Metric::Cosine] {
            let cfg = KmeansConfig::new(7, metric).with_seed(3);
            assert_eq!(kmeans(&pts, &cfg).unwrap(), kmeans(&pts, &cfg).unwrap());
        }
    }

    fn cloud(seed: u64, n: usize, dim: usize) -> Vec<Vec<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect())
            .collect()
    }

    /// Canonical form of a partition: clusters as sorted index lists, sorted.
    fn canonical(labels: &[usize]) -> Vec<Vec<usize>> {
        let mut groups: std::collections::BTreeMap<usize, Vec<usize>> = Default::default();
        for (i, &l) in labels.iter().enumerate() {
            groups.entry(l).or_default().push(i);
        }
        let mut v: Vec<Vec<usize>> = groups.into_values().collect();
        v.sort();
        v
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn inertia_is_monotone(seed in 0u64..1000, k in 1usize..8, cosine in any::<bool>()) {
            let pts = cloud(seed, 60, 4);
            let metric = if cosine { Metric::Cosine } else { Metric::Euclidean };
            let a = kmeans(&pts, &KmeansConfig::new(k, metric).with_seed(seed)).unwrap();
            for w in a.inertia_history.windows(2) {
                prop_assert!(w[1] <= w[0] + 1e-9 * w[0].max(1.0));
            }
            prop_assert!(a.inertia >= 0.0);
            prop_assert!(a.labels.iter().all(|&l| l < k));
            if cosine {
                for c in &a.centroids {
                    prop_assert!((norm(c) - 1.0).abs() < 1e-12);
                }
            }
        }

        #[test]
        fn permutation_equivariance(seed in 0u64..1000, k in 2usize..6) {
            let pts = cloud(seed, 40, 3);
            let mut perm: Vec<usize> = (0..pts.len()).collect();
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xabc);
            rand::seq::SliceRandom::shuffle(perm.as_mut_slice(), &mut rng);
            let permuted: Vec<Vec<f64>> = perm.iter().map(|&i| pts[i].clone()).collect();
            let init: Vec<Vec<f64>> = pts[..k].to_vec();
            let cfg = KmeansConfig::new(k, Metric::Euclidean);
            let a = kmeans_from(&pts, &cfg, init.clone()).unwrap();
            let b = kmeans_from(&permuted, &cfg, init).unwrap();
            // map b's labels back to original indices
            let mut back = vec![0; pts.len()];
            for (j, &i) in perm.iter().enumerate() {
                back[i] = b.labels[j];
            }
            prop_assert_eq!(canonical(&a.labels), canonical(&back));
        }

        #[test]
        fn unit_sphere_assignment_agrees(seed in 0u64..1000, k in 2usize..6) {
            let pts: Vec<Vec<f64>> = cloud(seed, 50, 4)
                .into_iter()
                .map(|p| { let n = norm(&p); p.into_iter().map(|v| v / n).collect() })
                .collect();
            let cents = pts[..k].to_vec();
            let cos = Job::new(&pts, Metric::Cosine).unwrap();
            let euc = Job::new(&pts, Metric::Euclidean).unwrap();
            let (mut l1, mut l2) = (vec![0; 50], vec![0; 50]);
            let (mut c1, mut c2) = (vec![0.0; 50], vec![0.0; 50]);
            let i1 = cos.assign(&cents, &mut l1, &mut c1);
            let i2 = euc.assign(&cents, &mut l2, &mut c2);
            prop_assert_eq!(l1, l2);
            prop_assert!((2.0 * i1 - i2).abs() < 1e-9);
        }
    }

    #[test]
    fn assignment_file_round_trip() {
        let f = tempfile::NamedTempFile::new().unwrap();
        write_assignment_file(f.path(), [("a", 2), ("b,c", 0)]).unwrap_err();
        write_assignment_file(f.path(), [("a", 2), ("tweet 9", 0)]).unwrap();
        assert_eq!(
            read_assignment_file(f.path()).unwrap(),
            vec![("a".to_string(), 2), ("tweet 9".to_string(), 0)]
        );
    }
}
