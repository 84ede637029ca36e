//! Trajectory data `(xᵏ, yᵏ, θᵏ)` and its delimited-text file format.

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::fourier::normalize_angle;

#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryDataset {
    /// Column `k` is `xᵏ`.
    pub x: DMatrix<f64>,
    /// Column `k` is `yᵏ`.
    pub y: DMatrix<f64>,
    pub theta: Vec<f64>,
    pub trajectory: Vec<usize>,
    pub dt: f64,
    /// Rotation of the phase per sample, in `[0, 2π)`.
    pub omega: f64,
    pub seed: Option<u64>,
}

impl TrajectoryDataset {
    pub fn new(
        x: DMatrix<f64>,
        y: DMatrix<f64>,
        theta: Vec<f64>,
        trajectory: Vec<usize>,
        dt: f64,
        omega: f64,
    ) -> Result<Self> {
        let n = x.ncols();
        if y.shape() != x.shape() || theta.len() != n || trajectory.len() != n {
            return Err(Error::Dimension(format!(
                "dataset columns disagree: x {:?}, y {:?}, theta {}, ids {}",
                x.shape(),
                y.shape(),
                theta.len(),
                trajectory.len()
            )));
        }
        Ok(Self {
            x,
            y,
            theta: theta.into_iter().map(normalize_angle).collect(),
            trajectory,
            dt,
            omega: normalize_angle(omega),
            seed: None,
        })
    }

    pub fn dim(&self) -> usize {
        self.x.nrows()
    }

    pub fn len(&self) -> usize {
        self.x.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.x.ncols() == 0
    }

    pub fn x_at(&self, k: usize) -> DVector<f64> {
        self.x.column(k).into_owned()
    }

    pub fn y_at(&self, k: usize) -> DVector<f64> {
        self.y.column(k).into_owned()
    }

    /// Subset of points, in the given order.
    pub fn select(&self, idx: &[usize]) -> Self {
        let n = self.dim();
        let x = DMatrix::from_fn(n, idx.len(), |i, k| self.x[(i, idx[k])]);
        let y = DMatrix::from_fn(n, idx.len(), |i, k| self.y[(i, idx[k])]);
        Self {
            x,
            y,
            theta: idx.iter().map(|&k| self.theta[k]).collect(),
            trajectory: idx.iter().map(|&k| self.trajectory[k]).collect(),
            dt: self.dt,
            omega: self.omega,
            seed: self.seed,
        }
    }

    pub fn to_text(&self) -> String {
        let n = self.dim();
        let mut out = String::with_capacity(self.len() * (2 * n + 2) * 22);
        let _ = writeln!(out, "# folrom dataset");
        let _ = writeln!(out, "# n={n}");
        let _ = writeln!(out, "# dt={}", self.dt);
        let _ = writeln!(out, "# omega={}", self.omega);
        match self.seed {
            Some(s) => {
                let _ = writeln!(out, "# seed={s}");
            }
            None => {
                let _ = writeln!(out, "# seed=none");
            }
        }
        let mut cols: Vec<String> = (1..=n).map(|i| format!("x{i}")).collect();
        cols.extend((1..=n).map(|i| format!("y{i}")));
        cols.push("theta".into());
        cols.push("trajectory".into());
        let _ = writeln!(out, "{}", cols.join(","));
        for k in 0..self.len() {
            for i in 0..n {
                let _ = write!(out, "{},", self.x[(i, k)]);
            }
            for i in 0..n {
                let _ = write!(out, "{},", self.y[(i, k)]);
            }
            let _ = writeln!(out, "{},{}", self.theta[k], self.trajectory[k]);
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut n: Option<usize> = None;
        let mut dt: Option<f64> = None;
        let mut omega: Option<f64> = None;
        let mut seed: Option<u64> = None;
        let mut xs: Vec<f64> = Vec::new();
        let mut ys: Vec<f64> = Vec::new();
        let mut theta = Vec::new();
        let mut ids = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            if let Some(meta) = line.strip_prefix('#') {
                if let Some((k, v)) = meta.trim().split_once('=') {
                    let v = v.trim();
                    let bad = || Error::Parse(format!("line {}: bad value for {k}", lineno + 1));
                    match k.trim() {
                        "n" => n = Some(v.parse().map_err(|_| bad())?),
                        "dt" => dt = Some(v.parse().map_err(|_| bad())?),
                        "omega" => omega = Some(v.parse().map_err(|_| bad())?),
                        "seed" => {
                            seed = if v == "none" {
                                None
                            } else {
                                Some(v.parse().map_err(|_| bad())?)
                            }
                        }
                        _ => {}
                    }
                }
                continue;
            }
            if line.starts_with('x') {
                continue;
            }
            let dim = n.ok_or_else(|| Error::Parse("dataset header lacks n".into()))?;
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != 2 * dim + 2 {
                return Err(Error::Parse(format!(
                    "line {}: expected {} fields, found {}",
                    lineno + 1,
                    2 * dim + 2,
                    fields.len()
                )));
            }
            let num = |s: &str| -> Result<f64> {
                s.trim()
                    .parse::<f64>()
                    .map_err(|e| Error::Parse(format!("line {}: {e}", lineno + 1)))
            };
            for f in &fields[..dim] {
                xs.push(num(f)?);
            }
            for f in &fields[dim..2 * dim] {
                ys.push(num(f)?);
            }
            theta.push(num(fields[2 * dim])?);
            ids.push(
                fields[2 * dim + 1]
                    .trim()
                    .parse::<usize>()
                    .map_err(|e| Error::Parse(format!("line {}: {e}", lineno + 1)))?,
            );
        }
        let dim = n.ok_or_else(|| Error::Parse("dataset header lacks n".into()))?;
        let dt = dt.ok_or_else(|| Error::Parse("dataset header lacks dt".into()))?;
        let omega = omega.ok_or_else(|| Error::Parse("dataset header lacks omega".into()))?;
        let count = theta.len();
        let x = DMatrix::from_column_slice(dim, count, &xs);
        let y = DMatrix::from_column_slice(dim, count, &ys);
        let mut ds = Self::new(x, y, theta, ids, dt, omega)?;
        ds.seed = seed;
        Ok(ds)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text())?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::from_text(&std::fs::read_to_string(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn text_round_trip_is_exact() {
        let x = DMatrix::from_fn(3, 4, |i, k| (i as f64 + 0.1) / (k as f64 + 3.0));
        let y = x.map(|v| v.sin() * 1e-7 + std::f64::consts::PI);
        let mut ds = TrajectoryDataset::new(x, y, vec![0.1, 1.2, 2.3, 6.0], vec![0, 0, 1, 1], 0.8, 0.8).unwrap();
        ds.seed = Some(42);
        let back = TrajectoryDataset::from_text(&ds.to_text()).unwrap();
        assert_eq!(back, ds);
    }

    #[test]
    fn rejects_short_rows() {
        let text = "# n=2\n# dt=1\n# omega=0\nx1,x2,y1,y2,theta,trajectory\n1,2,3,4,0\n";
        assert!(TrajectoryDataset::from_text(text).is_err());
    }

    proptest::proptest! {
        #[test]
        fn any_dataset_survives_text(
            vals in proptest::collection::vec(proptest::num::f64::NORMAL, 12),
            theta in proptest::collection::vec(0.0f64..6.28, 3),
            dt in 1e-3f64..10.0,
            omega in 0.0f64..6.28,
        ) {
            let x = DMatrix::from_column_slice(2, 3, &vals[..6]);
            let y = DMatrix::from_column_slice(2, 3, &vals[6..]);
            let ds = TrajectoryDataset::new(x, y, theta, vec![0, 0, 3], dt, omega).unwrap();
            proptest::prop_assert_eq!(TrajectoryDataset::from_text(&ds.to_text()).unwrap(), ds);
        }
    }
}
