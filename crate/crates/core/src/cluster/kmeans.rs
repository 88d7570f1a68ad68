use rand::Rng;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq)]
pub struct KMeansResult {
    pub labels: Vec<usize>,
    /// `k × D`.
    pub centroids: Tensor,
    /// Within-cluster sum of squares after each assignment step.
    pub wcss_history: Vec<f64>,
}

impl KMeansResult {
    pub fn wcss(&self) -> f64 {
        self.wcss_history.last().copied().unwrap_or(0.0)
    }
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Index of, and squared distance to, the nearest centroid of every row.
pub fn assign_nearest(points: &Tensor, centroids: &Tensor) -> Result<Vec<(usize, f64)>> {
    if points.rank() != 2 || centroids.rank() != 2 || points.dims()[1] != centroids.dims()[1] {
        return Err(Error::shape(format!(
            "points {:?} vs centroids {:?}",
            points.dims(),
            centroids.dims()
        )));
    }
    let k = centroids.dims()[0];
    Ok((0..points.dims()[0])
        .map(|n| {
            let p = points.row(n);
            (0..k).map(|c| (c, sq_dist(p, centroids.row(c)))).fold(
                (0, f64::INFINITY),
                |best, cur| if cur.1 < best.1 { cur } else { best },
            )
        })
        .collect())
}

fn plus_plus_init<R: Rng + ?Sized>(points: &Tensor, k: usize, rng: &mut R) -> Tensor {
    let (n, d) = (points.dims()[0], points.dims()[1]);
    let mut chosen = Vec::with_capacity(k * d);
    let first = rng.random_range(0..n);
    chosen.extend_from_slice(points.row(first));
    let mut dist: Vec<f64> = (0..n)
        .map(|i| sq_dist(points.row(i), points.row(first)))
        .collect();
    for c in 1..k {
        let total: f64 = dist.iter().sum();
        let pick = if total > 0.0 {
            let mut target = rng.random_range(0.0..total);
            let mut idx = n - 1;
            for (i, &w) in dist.iter().enumerate() {
                if target < w {
                    idx = i;
                    break;
                }
                target -= w;
            }
            idx
        } else {
            // every point coincides with a centroid already
            rng.random_range(0..n)
        };
        chosen.extend_from_slice(points.row(pick));
        let centre = &chosen[c * d..(c + 1) * d];
        for (i, dv) in dist.iter_mut().enumerate() {
            *dv = dv.min(sq_dist(points.row(i), centre));
        }
    }
    Tensor::new(vec![k, d], chosen).expect("centroid dims")
}

/// Lloyd's algorithm from a k-means++ start. A cluster that empties out is
/// reseeded at the point farthest from its current centroid.
pub fn kmeans_cluster<R: Rng + ?Sized>(
    points: &Tensor,
    k: usize,
    iterations: usize,
    rng: &mut R,
) -> Result<KMeansResult> {
    if points.rank() != 2 {
        return Err(Error::shape("kmeans expects an N×D matrix"));
    }
    let (n, d) = (points.dims()[0], points.dims()[1]);
    if k == 0 || k > n {
        return Err(Error::param(format!("k = {k} needs 1 <= k <= N = {n}")));
    }
    let mut centroids = plus_plus_init(points, k, rng);
    let mut history = Vec::new();
    let mut labels = vec![0; n];
    for _ in 0..iterations.max(1) {
        let assigned = assign_nearest(points, &centroids)?;
        history.push(assigned.iter().map(|a| a.1).sum());
        let changed = assigned.iter().zip(&labels).any(|(a, &l)| a.0 != l);
        labels = assigned.iter().map(|a| a.0).collect();
        if !changed && history.len() > 1 {
            break;
        }
        let mut sums = vec![0.0; k * d];
        let mut counts = vec![0usize; k];
        for (i, &l) in labels.iter().enumerate() {
            counts[l] += 1;
            for (s, v) in sums[l * d..(l + 1) * d].iter_mut().zip(points.row(i)) {
                *s += v;
            }
        }
        let mut taken = vec![false; n];
        for c in 0..k {
            let dst = &mut centroids.data_mut()[c * d..(c + 1) * d];
            if counts[c] > 0 {
                for (o, s) in dst.iter_mut().zip(&sums[c * d..(c + 1) * d]) {
                    *o = s / counts[c] as f64;
                }
            } else {
                let far = assigned
                    .iter()
                    .enumerate()
                    .filter(|(i, _)| !taken[*i])
                    .max_by(|a, b| a.1 .1.total_cmp(&b.1 .1))
                    .map(|(i, _)| i)
                    .unwrap_or(0);
                taken[far] = true;
                dst.copy_from_slice(points.row(far));
            }
        }
    }
    Ok(KMeansResult {
        labels,
        centroids,
        wcss_history: history,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_from;
    use rand_distr::{Distribution, Normal};

    fn blobs(seed: u64) -> (Tensor, Vec<usize>) {
        let mut rng = rng_from(seed);
        let noise = Normal::new(0.0, 0.1).unwrap();
        let mut data = Vec::new();
        let mut truth = Vec::new();
        for i in 0..60 {
            let c = i % 2;
            let centre = if c == 0 { -5.0 } else { 5.0 };
            data.push(centre + noise.sample(&mut rng));
            data.push(noise.sample(&mut rng));
            truth.push(c);
        }
        (Tensor::new(vec![60, 2], data).unwrap(), truth)
    }

    #[test]
    fn k_equals_n_is_exact() {
        let pts = Tensor::from_rows(&[vec![0.0, 1.0], vec![2.0, 3.0], vec![-1.0, 5.0]]).unwrap();
        let r = kmeans_cluster(&pts, 3, 10, &mut rng_from(0)).unwrap();
        assert_eq!(r.wcss(), 0.0);
        let mut l = r.labels.clone();
        l.sort();
        assert_eq!(l, vec![0, 1, 2]);
    }

    #[test]
    fn separated_blobs_split_perfectly() {
        for seed in 0..20 {
            let (pts, truth) = blobs(seed);
            let r = kmeans_cluster(&pts, 2, 20, &mut rng_from(seed + 100)).unwrap();
            let flip = r.labels[0] != truth[0];
            for (l, t) in r.labels.iter().zip(&truth) {
                assert_eq!((*l == 1) ^ flip, *t == 1, "seed {seed}");
            }
        }
    }

    #[test]
    fn wcss_is_monotone() {
        let mut rng = rng_from(5);
        let pts = Tensor::new(
            vec![300, 4],
            (0..1200).map(|_| rng.random::<f64>()).collect(),
        )
        .unwrap();
        let r = kmeans_cluster(&pts, 7, 50, &mut rng_from(6)).unwrap();
        for w in r.wcss_history.windows(2) {
            assert!(w[1] <= w[0] + 1e-12, "{:?}", r.wcss_history);
        }
    }

    #[test]
    fn k_larger_than_n_is_rejected() {
        let pts = Tensor::zeros(&[2, 3]);
        assert!(matches!(
            kmeans_cluster(&pts, 3, 5, &mut rng_from(0)),
            Err(Error::Parameter(_))
        ));
    }

    #[test]
    fn duplicate_points_do_not_break_init() {
        let pts = Tensor::filled(&[10, 2], 1.5);
        let r = kmeans_cluster(&pts, 3, 5, &mut rng_from(1)).unwrap();
        assert_eq!(r.wcss(), 0.0);
    }
}
