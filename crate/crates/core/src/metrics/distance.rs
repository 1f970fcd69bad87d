use crate::error::{Error, Result};
use crate::geom::{dist2, Vec3};
use crate::meshing::PointCloud;

/// Symmetric Chamfer distance with squared Euclidean point distances and
/// mean aggregation in each direction.
pub fn chamfer(x: &PointCloud, y: &PointCloud) -> Result<f64> {
    if x.is_empty() || y.is_empty() {
        return Err(Error::Empty("point cloud"));
    }
    Ok(mean_nn_sq(&x.points, &y.points) + mean_nn_sq(&y.points, &x.points))
}

/// Mean over `a` of the squared distance to the nearest point of `b`.
fn mean_nn_sq(a: &[Vec3], b: &[Vec3]) -> f64 {
    let mut sorted: Vec<Vec3> = b.to_vec();
    sorted.sort_by(|p, q| p[0].total_cmp(&q[0]));
    let xs: Vec<f64> = sorted.iter().map(|p| p[0]).collect();
    let total: f64 = a.iter().map(|&p| nearest_sq(p, &sorted, &xs)).sum();
    total / a.len() as f64
}

/// Sweep outward from `p`'s x-position in a cloud sorted by x, stopping
/// once the x gap alone exceeds the best distance so far.
fn nearest_sq(p: Vec3, sorted: &[Vec3], xs: &[f64]) -> f64 {
    let start = xs.partition_point(|&x| x < p[0]);
    let mut best = f64::INFINITY;
    let mut hi = start;
    let mut lo = start;
    loop {
        let mut moved = false;
        if hi < sorted.len() {
            let dx = xs[hi] - p[0];
            if dx * dx <= best {
                best = best.min(dist2(p, sorted[hi]));
                hi += 1;
                moved = true;
            } else {
                hi = sorted.len();
            }
        }
        if lo > 0 {
            let dx = p[0] - xs[lo - 1];
            if dx * dx <= best {
                best = best.min(dist2(p, sorted[lo - 1]));
                lo -= 1;
                moved = true;
            } else {
                lo = 0;
            }
        }
        if !moved {
            return best;
        }
    }
}

/// Earth Mover's distance between equal-size clouds: the mean Euclidean
/// length of an optimal one-to-one matching.
pub fn emd(x: &PointCloud, y: &PointCloud) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::InvalidArgument(format!(
            "EMD needs equal cloud sizes, got {} and {}",
            x.len(),
            y.len()
        )));
    }
    if x.is_empty() {
        return Err(Error::Empty("point cloud"));
    }
    let n = x.len();
    let cost: Vec<f64> = x
        .points
        .iter()
        .flat_map(|&p| y.points.iter().map(move |&q| dist2(p, q).sqrt()))
        .collect();
    let assignment = min_cost_assignment(&cost, n);
    let total: f64 = assignment.iter().enumerate().map(|(i, &j)| cost[i * n + j]).sum();
    Ok(total / n as f64)
}

/// Optimal assignment for a square `n x n` row-major cost matrix by
/// shortest augmenting paths with row/column potentials. Returns the
/// column assigned to each row.
pub fn min_cost_assignment(cost: &[f64], n: usize) -> Vec<usize> {
    assert_eq!(cost.len(), n * n, "cost matrix must be n x n");
    // 1-based rows/columns; column 0 is a virtual root
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut row_of = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        row_of[0] = i;
        let mut j0 = 0;
        let mut min_to = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = row_of[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=n {
                if used[j] {
                    continue;
                }
                let cur = cost[(i0 - 1) * n + (j - 1)] - u[i0] - v[j];
                if cur < min_to[j] {
                    min_to[j] = cur;
                    way[j] = j0;
                }
                if min_to[j] < delta {
                    delta = min_to[j];
                    j1 = j;
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[row_of[j]] += delta;
                    v[j] -= delta;
                } else {
                    min_to[j] -= delta;
                }
            }
            j0 = j1;
            if row_of[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            row_of[j0] = row_of[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut out = vec![0; n];
    for j in 1..=n {
        out[row_of[j] - 1] = j - 1;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::Rng;

    fn cloud(points: Vec<Vec3>) -> PointCloud {
        PointCloud { points }
    }

    fn random_cloud(n: usize, rng: &mut Rng) -> PointCloud {
        cloud((0..n).map(|_| [rng.normal(), rng.normal(), rng.normal()]).collect())
    }

    fn brute_chamfer(x: &PointCloud, y: &PointCloud) -> f64 {
        let one = |a: &[Vec3], b: &[Vec3]| {
            a.iter()
                .map(|&p| b.iter().map(|&q| dist2(p, q)).fold(f64::INFINITY, f64::min))
                .sum::<f64>()
                / a.len() as f64
        };
        one(&x.points, &y.points) + one(&y.points, &x.points)
    }

    fn permutations(n: usize) -> Vec<Vec<usize>> {
        if n == 0 {
            return vec![vec![]];
        }
        let mut out = Vec::new();
        for p in permutations(n - 1) {
            for k in 0..=p.len() {
                let mut q = p.clone();
                q.insert(k, n - 1);
                out.push(q);
            }
        }
        out
    }

    #[test]
    fn chamfer_hand_values() {
        let x = cloud(vec![[0.0, 0.0, 0.0]]);
        let y = cloud(vec![[1.0, 0.0, 0.0]]);
        assert_eq!(chamfer(&x, &y).unwrap(), 2.0);
        assert_eq!(chamfer(&x, &x).unwrap(), 0.0);
        assert!(chamfer(&x, &cloud(vec![])).is_err());
    }

    #[test]
    fn chamfer_matches_brute_force() {
        let mut rng = Rng::seed(7);
        for (n, m) in [(1, 5), (17, 3), (128, 512), (512, 512)] {
            let x = random_cloud(n, &mut rng);
            let y = random_cloud(m, &mut rng);
            assert!((chamfer(&x, &y).unwrap() - brute_chamfer(&x, &y)).abs() < 1e-9);
        }
        // duplicated x coordinates
        let x = cloud((0..50).map(|i| [0.5, i as f64 * 0.01, 0.0]).collect());
        let y = cloud((0..40).map(|i| [0.5, 0.0, i as f64 * 0.02]).collect());
        assert!((chamfer(&x, &y).unwrap() - brute_chamfer(&x, &y)).abs() < 1e-12);
    }

    #[test]
    fn emd_identity_and_swap() {
        let a = [0.1, 0.2, 0.3];
        let b = [1.0, -1.0, 0.5];
        assert_eq!(emd(&cloud(vec![a, b]), &cloud(vec![a, b])).unwrap(), 0.0);
        assert_eq!(emd(&cloud(vec![a, b]), &cloud(vec![b, a])).unwrap(), 0.0);
        assert!(emd(&cloud(vec![a]), &cloud(vec![a, b])).is_err());
    }

    #[test]
    fn emd_matches_exhaustive_search() {
        let mut rng = Rng::seed(11);
        let perms = permutations(6);
        assert_eq!(perms.len(), 720);
        for _ in 0..20 {
            let x = random_cloud(6, &mut rng);
            let y = random_cloud(6, &mut rng);
            let best = perms
                .iter()
                .map(|p| (0..6).map(|i| dist2(x.points[i], y.points[p[i]]).sqrt()).sum::<f64>() / 6.0)
                .fold(f64::INFINITY, f64::min);
            assert!((emd(&x, &y).unwrap() - best).abs() < 1e-9);
        }
    }

    #[test]
    fn assignment_is_a_permutation() {
        let mut rng = Rng::seed(3);
        let n = 40;
        let cost: Vec<f64> = (0..n * n).map(|_| rng.uniform()).collect();
        let mut a = min_cost_assignment(&cost, n);
        a.sort();
        assert_eq!(a, (0..n).collect::<Vec<_>>());
    }
}
