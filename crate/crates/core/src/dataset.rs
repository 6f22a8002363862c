//! Observation storage with grouping of repeated inputs, the implicit
//! selection operator, sampling generators and CSV ingestion.

use std::path::Path;

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct DomainBox {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

impl DomainBox {
    pub fn new(lo: Vec<f64>, hi: Vec<f64>) -> Result<Self> {
        if lo.len() != hi.len() || lo.is_empty() {
            return Err(Error::InvalidArgument(
                "box bounds must be non-empty and of equal length".into(),
            ));
        }
        if lo.iter().zip(&hi).any(|(a, b)| !(a <= b) || !a.is_finite() || !b.is_finite()) {
            return Err(Error::InvalidArgument(format!("invalid box {lo:?} x {hi:?}")));
        }
        Ok(Self { lo, hi })
    }

    /// `[lo, hi]^dim`
    pub fn cube(dim: usize, lo: f64, hi: f64) -> Result<Self> {
        Self::new(vec![lo; dim], vec![hi; dim])
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    pub fn diagonal(&self) -> f64 {
        self.lo
            .iter()
            .zip(&self.hi)
            .map(|(a, b)| (b - a) * (b - a))
            .sum::<f64>()
            .sqrt()
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        let slack = 1e-12 * self.diagonal().max(1.0);
        x.len() == self.dim()
            && x
                .iter()
                .zip(self.lo.iter().zip(&self.hi))
                .all(|(v, (a, b))| *v >= a - slack && *v <= b + slack)
    }

    /// Smallest box containing all points.
    pub fn bounding(points: &[Vec<f64>]) -> Result<Self> {
        let first = points
            .first()
            .ok_or_else(|| Error::InvalidArgument("empty point list".into()))?;
        let mut lo = first.clone();
        let mut hi = first.clone();
        for p in points {
            if p.len() != lo.len() {
                return Err(Error::DimensionMismatch {
                    expected: lo.len(),
                    got: p.len(),
                });
            }
            for (k, v) in p.iter().enumerate() {
                lo[k] = lo[k].min(*v);
                hi[k] = hi[k].max(*v);
            }
        }
        Self::new(lo, hi)
    }
}

/// Group sizes n_i. The selection matrix Λ they describe is never stored.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SelectionShape {
    pub group_sizes: Vec<usize>,
}

impl SelectionShape {
    pub fn sites(&self) -> usize {
        self.group_sizes.len()
    }

    pub fn total(&self) -> usize {
        self.group_sizes.iter().sum()
    }

    /// Site index of every output row.
    pub fn row_sites(&self) -> Vec<usize> {
        self.group_sizes
            .iter()
            .enumerate()
            .flat_map(|(i, &n)| std::iter::repeat_n(i, n))
            .collect()
    }
}

/// Λ c
pub fn selection_apply(shape: &SelectionShape, c: &DVector<f64>) -> Result<DVector<f64>> {
    if c.len() != shape.sites() {
        return Err(Error::DimensionMismatch {
            expected: shape.sites(),
            got: c.len(),
        });
    }
    Ok(DVector::from_iterator(
        shape.total(),
        shape.row_sites().into_iter().map(|i| c[i]),
    ))
}

/// Λᵀ v: sums the entries of each group.
pub fn selection_transpose_apply(shape: &SelectionShape, v: &DVector<f64>) -> Result<DVector<f64>> {
    if v.len() != shape.total() {
        return Err(Error::DimensionMismatch {
            expected: shape.total(),
            got: v.len(),
        });
    }
    let mut out = DVector::zeros(shape.sites());
    for (row, site) in shape.row_sites().into_iter().enumerate() {
        out[site] += v[row];
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HyperParams {
    pub gamma: f64,
    pub delta_bar: f64,
}

impl HyperParams {
    pub fn new(gamma: f64, delta_bar: f64) -> Result<Self> {
        if !(gamma > 0.0 && gamma.is_finite()) {
            return Err(Error::InvalidArgument(format!("gamma must be positive, got {gamma}")));
        }
        if !(delta_bar >= 0.0 && delta_bar.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "delta_bar must be nonnegative, got {delta_bar}"
            )));
        }
        Ok(Self { gamma, delta_bar })
    }
}

/// Distinct input sites, each with one or more observed outputs.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    inputs: Vec<Vec<f64>>,
    groups: Vec<Vec<f64>>,
    domain: DomainBox,
}

impl Dataset {
    pub fn empty(domain: DomainBox) -> Self {
        Self {
            inputs: Vec::new(),
            groups: Vec::new(),
            domain,
        }
    }

    /// Builds a dataset by adding the samples in order.
    pub fn from_samples(domain: DomainBox, xs: &[Vec<f64>], ys: &[f64]) -> Result<Self> {
        if xs.len() != ys.len() {
            return Err(Error::DimensionMismatch {
                expected: xs.len(),
                got: ys.len(),
            });
        }
        let mut ds = Self::empty(domain);
        for (x, y) in xs.iter().zip(ys) {
            ds.push(x, *y)?;
        }
        Ok(ds)
    }

    pub fn inputs(&self) -> &[Vec<f64>] {
        &self.inputs
    }

    pub fn groups(&self) -> &[Vec<f64>] {
        &self.groups
    }

    pub fn domain(&self) -> &DomainBox {
        &self.domain
    }

    pub fn sites(&self) -> usize {
        self.inputs.len()
    }

    pub fn total_outputs(&self) -> usize {
        self.groups.iter().map(Vec::len).sum()
    }

    pub fn shape(&self) -> SelectionShape {
        SelectionShape {
            group_sizes: self.groups.iter().map(Vec::len).collect(),
        }
    }

    /// All outputs stacked group by group (the vector y).
    pub fn outputs(&self) -> DVector<f64> {
        DVector::from_iterator(
            self.total_outputs(),
            self.groups.iter().flatten().copied(),
        )
    }

    /// One output per site, if no site has repeated outputs.
    pub fn single_outputs(&self) -> Option<DVector<f64>> {
        self.groups
            .iter()
            .all(|g| g.len() == 1)
            .then(|| DVector::from_iterator(self.sites(), self.groups.iter().map(|g| g[0])))
    }

    /// Per-site interval `[max_j y_ij − δ̄, min_j y_ij + δ̄]` implied by the noise bound.
    pub fn site_bounds(&self, delta_bar: f64) -> (Vec<f64>, Vec<f64>) {
        let lo = self
            .groups
            .iter()
            .map(|g| g.iter().copied().fold(f64::NEG_INFINITY, f64::max) - delta_bar)
            .collect();
        let hi = self
            .groups
            .iter()
            .map(|g| g.iter().copied().fold(f64::INFINITY, f64::min) + delta_bar)
            .collect();
        (lo, hi)
    }

    pub fn merge_tolerance(&self) -> f64 {
        1e-9 * self.domain.diagonal()
    }

    /// Index of the site within merge tolerance of `x`, if any.
    pub fn find_site(&self, x: &[f64]) -> Option<usize> {
        let tol = self.merge_tolerance();
        self.inputs.iter().position(|p| {
            p.iter()
                .zip(x)
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt()
                <= tol
        })
    }

    fn push(&mut self, x: &[f64], y: f64) -> Result<()> {
        if x.len() != self.domain.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.domain.dim(),
                got: x.len(),
            });
        }
        if !self.domain.contains(x) {
            return Err(Error::InvalidArgument(format!("input {x:?} outside the domain box")));
        }
        if !y.is_finite() {
            return Err(Error::InvalidArgument(format!("non-finite output {y}")));
        }
        match self.find_site(x) {
            Some(i) => self.groups[i].push(y),
            None => {
                self.inputs.push(x.to_vec());
                self.groups.push(vec![y]);
            }
        }
        Ok(())
    }

    /// Returns a new dataset with the sample added; `self` is unchanged.
    pub fn add_sample(&self, x: &[f64], y: f64) -> Result<Self> {
        let mut out = self.clone();
        out.push(x, y)?;
        Ok(out)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum HeaderMode {
    /// Treat the first row as a header when it does not parse as numbers.
    #[default]
    Auto,
    Present,
    Absent,
}

#[derive(Debug, Clone, Default)]
pub struct CsvSchema {
    pub header: HeaderMode,
    /// Domain of the dataset; the bounding box of the inputs when absent.
    pub domain: Option<DomainBox>,
}

/// Reads rows `x_1,...,x_n,y`. Lines starting with `#` are ignored.
pub fn load_csv(path: &Path, schema: &CsvSchema) -> Result<Dataset> {
    let io_err = |msg: String| Error::Io {
        path: path.to_path_buf(),
        msg,
    };
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .comment(Some(b'#'))
        .flexible(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| io_err(e.to_string()))?;

    let mut xs: Vec<Vec<f64>> = Vec::new();
    let mut ys = Vec::new();
    let mut width: Option<usize> = None;
    let mut first = true;
    for record in reader.records() {
        let record = record.map_err(|e| io_err(e.to_string()))?;
        let line = record.position().map_or(0, |p| p.line());
        if record.iter().all(|f| f.is_empty()) {
            continue;
        }
        let parsed: std::result::Result<Vec<f64>, _> = record.iter().map(str::parse::<f64>).collect();
        let is_first = std::mem::replace(&mut first, false);
        let values = match (parsed, schema.header, is_first) {
            (_, HeaderMode::Present, true) => continue,
            (Err(_), HeaderMode::Auto, true) => continue,
            (Ok(v), _, _) => v,
            (Err(_), _, _) => {
                return Err(Error::Parse {
                    path: path.to_path_buf(),
                    line,
                    msg: format!("non-numeric field in row {:?}", record.iter().collect::<Vec<_>>()),
                })
            }
        };
        if values.len() < 2 || values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                line,
                msg: "expected at least one input column and one output column of finite numbers".into(),
            });
        }
        match width {
            None => width = Some(values.len()),
            Some(w) if w != values.len() => {
                return Err(Error::Parse {
                    path: path.to_path_buf(),
                    line,
                    msg: format!("expected {w} fields, found {}", values.len()),
                })
            }
            _ => {}
        }
        let (x, y) = values.split_at(values.len() - 1);
        xs.push(x.to_vec());
        ys.push(y[0]);
    }
    if xs.is_empty() {
        return Err(io_err("no data rows".into()));
    }
    let domain = match &schema.domain {
        Some(d) => d.clone(),
        None => DomainBox::bounding(&xs)?,
    };
    Dataset::from_samples(domain, &xs, &ys)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Sampling {
    Grid,
    UniformRandom,
}

/// Grid lattices list the first coordinate slowest.
pub fn sample_inputs(strategy: Sampling, count: usize, domain: &DomainBox, seed: u64) -> Result<Vec<Vec<f64>>> {
    let dim = domain.dim();
    match strategy {
        Sampling::UniformRandom => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            Ok((0..count)
                .map(|_| {
                    (0..dim)
                        .map(|k| {
                            let (a, b) = (domain.lo[k], domain.hi[k]);
                            if a == b { a } else { rng.random_range(a..=b) }
                        })
                        .collect()
                })
                .collect())
        }
        Sampling::Grid => {
            let per_axis = (count as f64).powf(1.0 / dim as f64).round() as usize;
            if count == 0 || per_axis.checked_pow(dim as u32) != Some(count) {
                return Err(Error::InvalidArgument(format!(
                    "grid sampling needs a perfect {dim}-th power, got {count}"
                )));
            }
            let axis = |k: usize, j: usize| -> f64 {
                if per_axis == 1 {
                    0.5 * (domain.lo[k] + domain.hi[k])
                } else {
                    domain.lo[k] + (domain.hi[k] - domain.lo[k]) * j as f64 / (per_axis - 1) as f64
                }
            };
            Ok((0..count)
                .map(|mut idx| {
                    let mut p = vec![0.0; dim];
                    for k in (0..dim).rev() {
                        p[k] = axis(k, idx % per_axis);
                        idx /= per_axis;
                    }
                    p
                })
                .collect())
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum NoiseModel {
    Uniform { delta_bar: f64 },
    /// Gaussian with standard deviation δ̄/2.58, clipped to [−δ̄, δ̄].
    ClippedGaussian { delta_bar: f64 },
}

/// Ratio between δ̄ and the standard deviation of the clipped Gaussian model.
pub const CLIPPED_GAUSSIAN_RATIO: f64 = 2.58;

impl NoiseModel {
    pub fn delta_bar(&self) -> f64 {
        match *self {
            NoiseModel::Uniform { delta_bar } | NoiseModel::ClippedGaussian { delta_bar } => delta_bar,
        }
    }
}

pub fn corrupt_outputs(values: &[f64], noise: NoiseModel, seed: u64) -> Vec<f64> {
    let db = noise.delta_bar();
    if db <= 0.0 {
        return values.to_vec();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    match noise {
        NoiseModel::Uniform { .. } => values.iter().map(|v| v + rng.random_range(-db..=db)).collect(),
        NoiseModel::ClippedGaussian { .. } => {
            let normal = Normal::new(0.0, db / CLIPPED_GAUSSIAN_RATIO).expect("positive std");
            values
                .iter()
                .map(|v| v + normal.sample(&mut rng).clamp(-db, db))
                .collect()
        }
    }
}
