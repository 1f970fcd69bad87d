use serde::{Deserialize, Serialize};

use super::distance::{chamfer, emd};
use crate::error::{Error, Result};
use crate::meshing::PointCloud;

/// Point clouds of a common size, one per shape.
#[derive(Debug, Clone, PartialEq)]
pub struct ShapeSet {
    clouds: Vec<PointCloud>,
}

impl ShapeSet {
    pub fn new(clouds: Vec<PointCloud>) -> Result<Self> {
        let Some(first) = clouds.first() else {
            return Err(Error::Empty("shape set"));
        };
        let n = first.len();
        if n == 0 {
            return Err(Error::Empty("point cloud"));
        }
        for (i, c) in clouds.iter().enumerate() {
            if c.len() != n {
                return Err(Error::InvalidArgument(format!(
                    "cloud {i} has {} points, expected {n}",
                    c.len()
                )));
            }
            if c.points.iter().flatten().any(|x| !x.is_finite()) {
                return Err(Error::InvalidArgument(format!("cloud {i} has non-finite coordinates")));
            }
        }
        Ok(Self { clouds })
    }

    pub fn clouds(&self) -> &[PointCloud] {
        &self.clouds
    }

    pub fn len(&self) -> usize {
        self.clouds.len()
    }

    pub fn is_empty(&self) -> bool {
        self.clouds.is_empty()
    }

    pub fn points_per_cloud(&self) -> usize {
        self.clouds[0].len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Distance {
    Cd,
    Emd,
}

impl Distance {
    pub fn eval(self, x: &PointCloud, y: &PointCloud) -> Result<f64> {
        match self {
            Distance::Cd => chamfer(x, y),
            Distance::Emd => emd(x, y),
        }
    }
}

/// Which candidates the coverage nearest-neighbor query ranges over.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CoverageMode {
    /// Nearest test shape of each generated shape.
    #[default]
    TestSet,
    /// Nearest over test and other generated shapes; only test hits count.
    Union,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DistMatrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl DistMatrix {
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    pub fn from_fn(rows: usize, cols: usize, f: impl Fn(usize, usize) -> f64) -> Self {
        let data = (0..rows * cols).map(|k| f(k / cols, k % cols)).collect();
        Self { rows, cols, data }
    }

    /// Rows then columns, comma separated, full precision.
    pub fn to_csv(&self) -> String {
        let mut s = String::new();
        for i in 0..self.rows {
            let row: Vec<String> = (0..self.cols).map(|j| format!("{:e}", self.get(i, j))).collect();
            s.push_str(&row.join(","));
            s.push('\n');
        }
        s
    }
}

/// Every pairwise distance the set metrics need, computed once.
#[derive(Debug, Clone, PartialEq)]
pub struct SetDistances {
    pub gen_test: DistMatrix,
    pub gen_gen: DistMatrix,
    pub test_test: DistMatrix,
}

fn cross(a: &ShapeSet, b: &ShapeSet, d: Distance) -> Result<DistMatrix> {
    let mut data = Vec::with_capacity(a.len() * b.len());
    for x in a.clouds() {
        for y in b.clouds() {
            data.push(d.eval(x, y)?);
        }
    }
    Ok(DistMatrix {
        rows: a.len(),
        cols: b.len(),
        data,
    })
}

fn within(a: &ShapeSet, d: Distance) -> Result<DistMatrix> {
    let n = a.len();
    let mut data = vec![0.0; n * n];
    for i in 0..n {
        for j in i + 1..n {
            let v = d.eval(&a.clouds()[i], &a.clouds()[j])?;
            data[i * n + j] = v;
            data[j * n + i] = v;
        }
    }
    Ok(DistMatrix { rows: n, cols: n, data })
}

impl SetDistances {
    pub fn compute(generated: &ShapeSet, test: &ShapeSet, d: Distance) -> Result<Self> {
        Ok(Self {
            gen_test: cross(generated, test, d)?,
            gen_gen: within(generated, d)?,
            test_test: within(test, d)?,
        })
    }

    pub fn mmd(&self) -> f64 {
        mmd_from(&self.gen_test)
    }

    pub fn coverage(&self, mode: CoverageMode) -> f64 {
        match mode {
            CoverageMode::TestSet => coverage_from(&self.gen_test, None),
            CoverageMode::Union => coverage_from(&self.gen_test, Some(&self.gen_gen)),
        }
    }

    pub fn one_nna(&self) -> Result<f64> {
        one_nna_from(&self.gen_gen, &self.gen_test, &self.test_test)
    }
}

/// Mean over test shapes of the distance to the closest generated shape.
pub fn mmd_from(gen_test: &DistMatrix) -> f64 {
    let total: f64 = (0..gen_test.cols)
        .map(|j| (0..gen_test.rows).map(|i| gen_test.get(i, j)).fold(f64::INFINITY, f64::min))
        .sum();
    total / gen_test.cols as f64
}

/// Lowest-index argmin.
fn argmin(values: impl Iterator<Item = (usize, f64)>) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, v) in values {
        if best.is_none_or(|(_, b)| v < b) {
            best = Some((i, v));
        }
    }
    best.map(|(i, _)| i)
}

/// Percentage of test shapes that are the nearest neighbor of at least one
/// generated shape. With `gen_gen`, the query also ranges over the other
/// generated shapes (test shapes first in tie order).
pub fn coverage_from(gen_test: &DistMatrix, gen_gen: Option<&DistMatrix>) -> f64 {
    let (g, t) = (gen_test.rows, gen_test.cols);
    let mut covered = vec![false; t];
    for i in 0..g {
        let tests = (0..t).map(|j| (j, gen_test.get(i, j)));
        let nn = match gen_gen {
            None => argmin(tests),
            Some(gg) => argmin(tests.chain((0..g).filter(|&k| k != i).map(|k| (t + k, gg.get(i, k))))),
        };
        if let Some(j) = nn.filter(|&j| j < t) {
            covered[j] = true;
        }
    }
    100.0 * covered.iter().filter(|&&c| c).count() as f64 / t as f64
}

/// Leave-one-out 1-nearest-neighbor accuracy of telling generated from test
/// shapes, over the union ordered generated first.
pub fn one_nna_from(gen_gen: &DistMatrix, gen_test: &DistMatrix, test_test: &DistMatrix) -> Result<f64> {
    let (g, t) = (gen_test.rows, gen_test.cols);
    if g + t < 2 {
        return Err(Error::InvalidArgument("1-NNA needs at least two shapes".into()));
    }
    if g != t {
        log::warn!("1-NNA on unequal set sizes {g} and {t}");
    }
    let dist = |a: usize, b: usize| -> f64 {
        match (a < g, b < g) {
            (true, true) => gen_gen.get(a, b),
            (true, false) => gen_test.get(a, b - g),
            (false, true) => gen_test.get(b, a - g),
            (false, false) => test_test.get(a - g, b - g),
        }
    };
    let correct = (0..g + t)
        .filter(|&a| {
            let nn = argmin((0..g + t).filter(|&b| b != a).map(|b| (b, dist(a, b)))).expect("union has two shapes");
            (nn < g) == (a < g)
        })
        .count();
    Ok(100.0 * correct as f64 / (g + t) as f64)
}

pub fn mmd(generated: &ShapeSet, test: &ShapeSet, d: Distance) -> Result<f64> {
    Ok(mmd_from(&cross(generated, test, d)?))
}

pub fn coverage(generated: &ShapeSet, test: &ShapeSet, d: Distance, mode: CoverageMode) -> Result<f64> {
    let gt = cross(generated, test, d)?;
    Ok(match mode {
        CoverageMode::TestSet => coverage_from(&gt, None),
        CoverageMode::Union => coverage_from(&gt, Some(&within(generated, d)?)),
    })
}

pub fn one_nna(generated: &ShapeSet, test: &ShapeSet, d: Distance) -> Result<f64> {
    SetDistances::compute(generated, test, d)?.one_nna()
}

/// The six set metrics; MMD in world units (squared for CD).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub num_generated: usize,
    pub num_test: usize,
    pub points_per_cloud: usize,
    pub coverage_mode: CoverageMode,
    pub mmd_cd: f64,
    pub cov_cd: f64,
    pub nna_cd: f64,
    pub mmd_emd: Option<f64>,
    pub cov_emd: Option<f64>,
    pub nna_emd: Option<f64>,
    #[serde(skip)]
    pub cd_distances: Option<SetDistances>,
    #[serde(skip)]
    pub emd_distances: Option<SetDistances>,
}

impl MetricsReport {
    /// MMD-CD ×10³ and MMD-EMD ×10², the usual reporting scales.
    pub fn scaled_mmd(&self) -> (f64, Option<f64>) {
        (self.mmd_cd * 1e3, self.mmd_emd.map(|x| x * 1e2))
    }
}

/// Computes all metrics; EMD ones only when `with_emd`.
pub fn evaluate(generated: &ShapeSet, test: &ShapeSet, with_emd: bool, mode: CoverageMode) -> Result<MetricsReport> {
    if generated.points_per_cloud() != test.points_per_cloud() {
        return Err(Error::InvalidArgument(format!(
            "generated clouds have {} points, test clouds {}",
            generated.points_per_cloud(),
            test.points_per_cloud()
        )));
    }
    let cd = SetDistances::compute(generated, test, Distance::Cd)?;
    let emd = if with_emd {
        Some(SetDistances::compute(generated, test, Distance::Emd)?)
    } else {
        None
    };
    Ok(MetricsReport {
        num_generated: generated.len(),
        num_test: test.len(),
        points_per_cloud: test.points_per_cloud(),
        coverage_mode: mode,
        mmd_cd: cd.mmd(),
        cov_cd: cd.coverage(mode),
        nna_cd: cd.one_nna()?,
        mmd_emd: emd.as_ref().map(|e| e.mmd()),
        cov_emd: emd.as_ref().map(|e| e.coverage(mode)),
        nna_emd: emd.as_ref().map(|e| e.one_nna()).transpose()?,
        cd_distances: Some(cd),
        emd_distances: emd,
    })
}
