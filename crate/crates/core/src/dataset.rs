//! Labelled input sets: CSV ingestion, sphere normalization and synthetic data.

use std::path::Path;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{NtkError, Result};
use crate::kernels::InputPair;

/// Pairs with `|cos| >= 1 - COLINEAR_TOL` are rejected.
pub const COLINEAR_TOL: f64 = 1e-9;

/// Inputs `X` (N rows of dimension d) with targets `Z` (N rows of dimension o).
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    inputs: Vec<Vec<f64>>,
    targets: Vec<Vec<f64>>,
    labels: Option<Vec<usize>>,
    pub names: Option<Vec<String>>,
}

impl Dataset {
    /// Validates shapes, finiteness and pairwise non-colinearity.
    pub fn new(inputs: Vec<Vec<f64>>, targets: Vec<Vec<f64>>) -> Result<Self> {
        if inputs.is_empty() {
            return Err(NtkError::InvalidDataset("no rows".into()));
        }
        if inputs.len() != targets.len() {
            return Err(NtkError::InvalidDataset(format!(
                "{} inputs but {} targets",
                inputs.len(),
                targets.len()
            )));
        }
        let d = inputs[0].len();
        let o = targets[0].len();
        if d == 0 || o == 0 {
            return Err(NtkError::InvalidDataset("inputs and targets need positive dimension".into()));
        }
        for (i, (x, z)) in inputs.iter().zip(&targets).enumerate() {
            if x.len() != d || z.len() != o {
                return Err(NtkError::InvalidRow { row: i, msg: "inconsistent dimension".into() });
            }
            if x.iter().chain(z).any(|v| !v.is_finite()) {
                return Err(NtkError::InvalidRow { row: i, msg: "non-finite value".into() });
            }
        }
        check_colinear(&inputs)?;
        Ok(Self { inputs, targets, labels: None, names: None })
    }

    /// Class labels `0..o` encoded one-hot; `o` is one more than the largest label.
    pub fn classification(inputs: Vec<Vec<f64>>, labels: Vec<usize>) -> Result<Self> {
        let o = labels.iter().max().map_or(0, |m| m + 1);
        let targets = labels
            .iter()
            .map(|&c| (0..o).map(|k| if k == c { 1.0 } else { 0.0 }).collect())
            .collect();
        let mut ds = Self::new(inputs, targets)?;
        ds.labels = Some(labels);
        Ok(ds)
    }

    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.inputs[0].len()
    }

    pub fn outputs(&self) -> usize {
        self.targets[0].len()
    }

    pub fn inputs(&self) -> &[Vec<f64>] {
        &self.inputs
    }

    pub fn targets(&self) -> &[Vec<f64>] {
        &self.targets
    }

    pub fn labels(&self) -> Option<&[usize]> {
        self.labels.as_deref()
    }

    /// Rows at `idx`, in that order.
    pub fn subset(&self, idx: &[usize]) -> Result<Self> {
        if let Some(&bad) = idx.iter().find(|&&i| i >= self.len()) {
            return Err(NtkError::InvalidArgument(format!("row {bad} out of range")));
        }
        Ok(Self {
            inputs: idx.iter().map(|&i| self.inputs[i].clone()).collect(),
            targets: idx.iter().map(|&i| self.targets[i].clone()).collect(),
            labels: self.labels.as_ref().map(|l| idx.iter().map(|&i| l[i]).collect()),
            names: self.names.clone(),
        })
    }

    /// Seeded shuffle into train and test parts; `test_fraction` in [0, 1).
    pub fn split(&self, test_fraction: f64, seed: u64) -> Result<(Self, Option<Self>)> {
        if !(0.0..1.0).contains(&test_fraction) {
            return Err(NtkError::InvalidArgument("test fraction must lie in [0, 1)".into()));
        }
        let mut idx: Vec<usize> = (0..self.len()).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rand::seq::SliceRandom::shuffle(idx.as_mut_slice(), &mut rng);
        let n_test = (test_fraction * self.len() as f64).round() as usize;
        if n_test == 0 {
            return Ok((self.subset(&idx)?, None));
        }
        if n_test == self.len() {
            return Err(NtkError::InvalidArgument("split leaves no training rows".into()));
        }
        let (test, train) = idx.split_at(n_test);
        Ok((self.subset(train)?, Some(self.subset(test)?)))
    }
}

fn check_colinear(inputs: &[Vec<f64>]) -> Result<()> {
    let norms: Vec<f64> = inputs.iter().map(|x| x.iter().map(|v| v * v).sum::<f64>().sqrt()).collect();
    for i in 0..inputs.len() {
        for j in 0..i {
            if inputs[i] == inputs[j] {
                return Err(NtkError::InvalidDataset(format!("rows {j} and {i} are duplicates")));
            }
            let denom = norms[i] * norms[j];
            if denom == 0.0 {
                continue;
            }
            let dot: f64 = inputs[i].iter().zip(&inputs[j]).map(|(a, b)| a * b).sum();
            if (dot / denom).abs() >= 1.0 - COLINEAR_TOL {
                return Err(NtkError::InvalidDataset(format!("rows {j} and {i} are colinear")));
            }
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Normalize {
    #[default]
    None,
    UnitSphere,
}

impl FromStr for Normalize {
    type Err = NtkError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(Normalize::None),
            "unit_sphere" => Ok(Normalize::UnitSphere),
            _ => Err(NtkError::InvalidArgument(format!("unknown normalization '{s}'"))),
        }
    }
}

/// Reads a headed CSV whose last column is a non-negative integer class label.
///
/// Row numbers in errors count data rows from 0; line numbers count the header as line 1.
pub fn load_csv(path: &Path, normalize: Normalize) -> Result<Dataset> {
    let file = std::fs::File::open(path).map_err(|e| NtkError::Io(format!("{}: {e}", path.display())))?;
    read_csv(file, normalize)
}

pub fn read_csv<R: std::io::Read>(reader: R, normalize: Normalize) -> Result<Dataset> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let header = rdr
        .headers()
        .map_err(|e| NtkError::Parse { line: 1, msg: e.to_string() })?
        .clone();
    if header.len() < 2 {
        return Err(NtkError::Parse { line: 1, msg: "need at least one feature column and a label".into() });
    }
    let d = header.len() - 1;
    let mut inputs = Vec::new();
    let mut labels = Vec::new();
    for (row, rec) in rdr.records().enumerate() {
        let line = row + 2;
        let rec = rec.map_err(|e| NtkError::Parse { line, msg: e.to_string() })?;
        if rec.len() != d + 1 {
            return Err(NtkError::Parse { line, msg: format!("expected {} fields, found {}", d + 1, rec.len()) });
        }
        let mut x = Vec::with_capacity(d);
        for field in rec.iter().take(d) {
            let v: f64 = field
                .trim()
                .parse()
                .map_err(|_| NtkError::Parse { line, msg: format!("'{field}' is not a number") })?;
            if !v.is_finite() {
                return Err(NtkError::Parse { line, msg: format!("'{field}' is not finite") });
            }
            x.push(v);
        }
        let label = rec[d].trim();
        let label: usize = label
            .parse()
            .map_err(|_| NtkError::Parse { line, msg: format!("label '{label}' is not a class index") })?;
        if normalize == Normalize::UnitSphere {
            let norm = x.iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm == 0.0 {
                return Err(NtkError::InvalidRow { row, msg: "zero norm cannot be projected to the sphere".into() });
            }
            x.iter_mut().for_each(|v| *v /= norm);
        }
        inputs.push(x);
        labels.push(label);
    }
    let mut ds = Dataset::classification(inputs, labels)?;
    ds.names = Some(header.iter().take(d).map(str::to_string).collect());
    Ok(ds)
}

/// `n` points drawn uniformly from the unit sphere in `d` dimensions.
pub fn sphere_points(d: usize, n: usize, seed: u64) -> Result<Vec<Vec<f64>>> {
    if d < 2 || n == 0 {
        return Err(NtkError::InvalidArgument("sphere sampling needs d >= 2 and n >= 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok((0..n)
        .map(|_| {
            let mut x: Vec<f64> = (0..d).map(|_| StandardNormal.sample(&mut rng)).collect();
            let norm = x.iter().map(|v| v * v).sum::<f64>().sqrt();
            x.iter_mut().for_each(|v| *v /= norm);
            x
        })
        .collect())
}

/// `count` input pairs drawn uniformly from the sphere of radius `sqrt(d)`.
pub fn sphere_pairs(d: usize, count: usize, seed: u64) -> Result<Vec<InputPair>> {
    let r = (d as f64).sqrt();
    let mut pts = sphere_points(d, 2 * count, seed)?;
    pts.iter_mut().flatten().for_each(|v| *v *= r);
    pts.chunks_exact(2).map(|p| InputPair::new(p[0].clone(), p[1].clone())).collect()
}

/// Unit-sphere points labelled by the sign of their first coordinate.
pub fn two_class_sphere(d: usize, n: usize, seed: u64) -> Result<Dataset> {
    let inputs = sphere_points(d, n, seed)?;
    let labels = inputs.iter().map(|x| usize::from(x[0] > 0.0)).collect();
    Dataset::classification(inputs, labels)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn one_hot_width_inferred() {
        let csv = "a,b,label\n1,0,0\n0,1,1\n1,1,0\n";
        let ds = read_csv(csv.as_bytes(), Normalize::None).unwrap();
        assert_eq!(ds.len(), 3);
        assert_eq!(ds.outputs(), 2);
        assert_eq!(ds.targets()[1], vec![0.0, 1.0]);
        assert_eq!(ds.labels().unwrap(), &[0, 1, 0]);
    }

    #[test]
    fn zero_row_named() {
        let csv = "a,b,label\n1,0,0\n0,0,1\n";
        let err = read_csv(csv.as_bytes(), Normalize::UnitSphere).unwrap_err();
        assert_eq!(err, NtkError::InvalidRow { row: 1, msg: "zero norm cannot be projected to the sphere".into() });
    }

    #[test]
    fn malformed_line_reported() {
        let csv = "a,b,label\n1,0,0\n0,x,1\n";
        match read_csv(csv.as_bytes(), Normalize::None) {
            Err(NtkError::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn colinear_pair_listed() {
        let csv = "a,b,label\n1,1,0\n0,1,1\n-2,-2,0\n";
        let err = read_csv(csv.as_bytes(), Normalize::None).unwrap_err();
        assert_eq!(err, NtkError::InvalidDataset("rows 0 and 2 are colinear".into()));
    }

    #[test]
    fn sphere_deterministic() {
        let a = sphere_points(3, 50, 7).unwrap();
        let b = sphere_points(3, 50, 7).unwrap();
        assert_eq!(a, b);
        for x in &a {
            let n = x.iter().map(|v| v * v).sum::<f64>().sqrt();
            assert!((n - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn split_partitions_rows() {
        let ds = two_class_sphere(4, 20, 3).unwrap();
        let (train, test) = ds.split(0.25, 9).unwrap();
        assert_eq!(train.len(), 15);
        assert_eq!(test.unwrap().len(), 5);
    }
}
