//! Lloyd's k-means with k-means++ seeding.

use rand::Rng;

fn dist2(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn nearest(p: &[f64], centers: &[Vec<f64>]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (j, c) in centers.iter().enumerate() {
        let d = dist2(p, c);
        if d < best.1 {
            best = (j, d);
        }
    }
    best
}

/// Returns `(centers, assignment)`. Runs at most `max_iter` Lloyd rounds,
/// stopping early once no center moves more than `tol`. Ties in assignment go
/// to the lower center index; a center that loses all its points stays put.
pub fn kmeans<R: Rng + ?Sized>(
    points: &[Vec<f64>],
    k: usize,
    max_iter: usize,
    tol: f64,
    rng: &mut R,
) -> (Vec<Vec<f64>>, Vec<usize>) {
    assert!(k >= 1 && k <= points.len(), "k must be in 1..=points");
    let mut centers = vec![points[rng.random_range(0..points.len())].clone()];
    while centers.len() < k {
        let w: Vec<f64> = points.iter().map(|p| nearest(p, &centers).1).collect();
        let total: f64 = w.iter().sum();
        let pick = if total <= 0.0 {
            rng.random_range(0..points.len())
        } else {
            let mut u = rng.random::<f64>() * total;
            let mut idx = points.len() - 1;
            for (i, wi) in w.iter().enumerate() {
                if u < *wi {
                    idx = i;
                    break;
                }
                u -= wi;
            }
            idx
        };
        centers.push(points[pick].clone());
    }

    let dim = points[0].len();
    let mut assign = vec![0; points.len()];
    for _ in 0..max_iter {
        for (a, p) in assign.iter_mut().zip(points) {
            *a = nearest(p, &centers).0;
        }
        let mut sums = vec![vec![0.0; dim]; k];
        let mut counts = vec![0usize; k];
        for (p, &a) in points.iter().zip(&assign) {
            counts[a] += 1;
            for (s, v) in sums[a].iter_mut().zip(p) {
                *s += v;
            }
        }
        let mut shift: f64 = 0.0;
        for j in 0..k {
            if counts[j] == 0 {
                continue;
            }
            let next: Vec<f64> = sums[j].iter().map(|s| s / counts[j] as f64).collect();
            shift = shift.max(dist2(&next, &centers[j]).sqrt());
            centers[j] = next;
        }
        if shift <= tol {
            break;
        }
    }
    for (a, p) in assign.iter_mut().zip(points) {
        *a = nearest(p, &centers).0;
    }
    (centers, assign)
}
