use crate::error::{Error, Result};

/// The `k` rows of `table` with the highest cosine similarity to `z`,
/// most similar first. Zero-norm rows are skipped.
pub fn novelty_nn(z: &[f32], table: &[Vec<f32>], k: usize) -> Result<Vec<(usize, f64)>> {
    if table.is_empty() {
        return Err(Error::Empty("latent table"));
    }
    let norm = |v: &[f32]| v.iter().map(|&x| (x as f64).powi(2)).sum::<f64>().sqrt();
    let zn = norm(z);
    if zn == 0.0 {
        return Err(Error::InvalidArgument("query latent has zero norm".into()));
    }
    let mut sims = Vec::with_capacity(table.len());
    for (j, row) in table.iter().enumerate() {
        if row.len() != z.len() {
            return Err(crate::error::shape_err("latent table row", z.len(), row.len()));
        }
        let rn = norm(row);
        if rn == 0.0 {
            log::warn!("skipping zero-norm latent {j}");
            continue;
        }
        let dot: f64 = z.iter().zip(row).map(|(&a, &b)| a as f64 * b as f64).sum();
        sims.push((j, dot / (zn * rn)));
    }
    sims.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    sims.truncate(k);
    Ok(sims)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::Rng;

    #[test]
    fn self_similarity_ranks_first() {
        let table = vec![vec![1.0, 2.0, 0.0], vec![0.0, 1.0, 1.0], vec![3.0, -1.0, 2.0]];
        let r = novelty_nn(&table[2], &table, 2).unwrap();
        assert_eq!(r[0].0, 2);
        assert!((r[0].1 - 1.0).abs() < 1e-12);
        assert_eq!(r.len(), 2);
    }

    #[test]
    fn orthogonal_query() {
        let table = vec![vec![1.0, 0.0, 0.0], vec![0.0, 2.0, 0.0], vec![0.0, 0.0, 0.0]];
        let r = novelty_nn(&[0.0, 0.0, 1.0], &table, 5).unwrap();
        assert_eq!(r.len(), 2);
        assert!(r.iter().all(|&(_, s)| s == 0.0));
        assert!(novelty_nn(&[0.0; 3], &table, 1).is_err());
    }

    #[test]
    fn matches_exhaustive_scan() {
        let mut rng = Rng::seed(4);
        let table: Vec<Vec<f32>> = (0..10).map(|_| (0..8).map(|_| rng.normal() as f32).collect()).collect();
        let z: Vec<f32> = (0..8).map(|_| rng.normal() as f32).collect();
        let r = novelty_nn(&z, &table, 3).unwrap();
        let mut all: Vec<(usize, f64)> = table
            .iter()
            .enumerate()
            .map(|(j, row)| {
                let d: f64 = z.iter().zip(row).map(|(&a, &b)| (a * b) as f64).sum();
                let n = |v: &[f32]| v.iter().map(|&x| (x * x) as f64).sum::<f64>().sqrt();
                (j, d / (n(&z) * n(row)))
            })
            .collect();
        all.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap());
        for (a, b) in r.iter().zip(&all) {
            assert_eq!(a.0, b.0);
            assert!((a.1 - b.1).abs() < 1e-5);
        }
    }
}
