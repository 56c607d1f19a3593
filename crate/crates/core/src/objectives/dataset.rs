use std::io::{Read, Write};
use std::path::Path;

use ndarray::Array2;

use crate::error::{Error, Result};
use crate::space::QuadratureSet;

/// A source of random functions that can be evaluated anywhere in the cube.
pub trait FunctionDataset {
    fn dim(&self) -> usize;

    fn channels(&self) -> usize;

    /// Number of stored samples, or `None` for an unbounded generator.
    fn len(&self) -> Option<usize>;

    fn is_empty(&self) -> bool {
        self.len() == Some(0)
    }

    /// Values of sample `id` at every point, shaped `D × C`. Deterministic in
    /// `(id, point)`.
    fn eval(&self, id: u64, points: &QuadratureSet) -> Result<Array2<f64>>;

    /// Sample `id` as a single function row, `1 × (D·C)`.
    fn eval_row(&self, id: u64, points: &QuadratureSet) -> Result<Array2<f64>> {
        let v = self.eval(id, points)?;
        let n = v.len();
        Ok(v.into_shape_with_order((1, n)).expect("row-major D × C"))
    }
}

pub(crate) fn check_points(dataset: &dyn FunctionDataset, points: &QuadratureSet) -> Result<()> {
    if points.dim() != dataset.dim() {
        return Err(Error::Dimension {
            expected: dataset.dim(),
            got: points.dim(),
        });
    }
    Ok(())
}

const MAGIC: &[u8; 4] = b"FGRD";
const VERSION: u32 = 1;

/// Functions stored on a regular grid with nodes at `i/(n−1)` per axis and
/// evaluated by multilinear interpolation.
#[derive(Debug, Clone, PartialEq)]
pub struct GriddedDataset {
    shape: Vec<usize>,
    channels: usize,
    /// `samples × (Π shape · C)`, grid row-major with the channel fastest.
    data: Array2<f64>,
}

impl GriddedDataset {
    pub fn new(shape: Vec<usize>, channels: usize, data: Array2<f64>) -> Result<Self> {
        if shape.is_empty() || shape.iter().any(|&n| n < 2) || channels == 0 {
            return Err(Error::Config("grid needs every axis >= 2 nodes and channels >= 1".into()));
        }
        let cells: usize = shape.iter().product::<usize>() * channels;
        if data.ncols() != cells {
            return Err(Error::ShapeMismatch {
                op: "gridded-dataset",
                lhs: data.dim(),
                rhs: (data.nrows(), cells),
            });
        }
        Ok(Self { shape, channels, data })
    }

    /// Tabulates `f(x) -> [f64; C]` on the grid for each sample.
    pub fn tabulate(shape: Vec<usize>, channels: usize, samples: usize, f: impl Fn(usize, &[f64], &mut [f64])) -> Result<Self> {
        let nodes: usize = shape.iter().product();
        let mut data = Array2::zeros((samples, nodes * channels));
        let mut x = vec![0.0; shape.len()];
        for s in 0..samples {
            for node in 0..nodes {
                let mut rest = node;
                for axis in (0..shape.len()).rev() {
                    x[axis] = (rest % shape[axis]) as f64 / (shape[axis] - 1) as f64;
                    rest /= shape[axis];
                }
                let row = data.row_mut(s);
                let slot = &mut row.into_slice().expect("contiguous")[node * channels..(node + 1) * channels];
                f(s, &x, slot);
            }
        }
        Self::new(shape, channels, data)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut out = Vec::with_capacity(32 + 8 * self.data.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(self.shape.len() as u32).to_le_bytes());
        out.extend_from_slice(&(self.channels as u32).to_le_bytes());
        for &n in &self.shape {
            out.extend_from_slice(&(n as u32).to_le_bytes());
        }
        out.extend_from_slice(&(self.data.nrows() as u32).to_le_bytes());
        for v in self.data.iter() {
            out.extend_from_slice(&v.to_le_bytes());
        }
        std::fs::File::create(path)?.write_all(&out)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut bytes = Vec::new();
        std::fs::File::open(path)?.read_to_end(&mut bytes)?;
        let mut r = bytes.as_slice();
        let mut take = |n: usize| -> Result<&[u8]> {
            if r.len() < n {
                return Err(Error::Format("gridded dataset truncated".into()));
            }
            let (head, tail) = r.split_at(n);
            r = tail;
            Ok(head)
        };
        if take(4)? != MAGIC {
            return Err(Error::Format("not a gridded dataset (bad magic)".into()));
        }
        let read_u32 = |b: &[u8]| u32::from_le_bytes(b.try_into().expect("4 bytes"));
        let version = read_u32(take(4)?);
        if version != VERSION {
            return Err(Error::Version {
                found: version,
                expected: VERSION,
            });
        }
        let dim = read_u32(take(4)?) as usize;
        let channels = read_u32(take(4)?) as usize;
        if dim == 0 || dim > 8 {
            return Err(Error::Format(format!("implausible grid dimension {dim}")));
        }
        let mut shape = Vec::with_capacity(dim);
        for _ in 0..dim {
            shape.push(read_u32(take(4)?) as usize);
        }
        let samples = read_u32(take(4)?) as usize;
        let cols = shape.iter().product::<usize>() * channels;
        let payload = take(samples * cols * 8)?;
        let values: Vec<f64> = payload
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        if take(1).is_ok() {
            return Err(Error::Format("trailing bytes after gridded dataset".into()));
        }
        let data = Array2::from_shape_vec((samples, cols), values).map_err(|e| Error::Format(e.to_string()))?;
        Self::new(shape, channels, data)
    }
}

impl FunctionDataset for GriddedDataset {
    fn dim(&self) -> usize {
        self.shape.len()
    }

    fn channels(&self) -> usize {
        self.channels
    }

    fn len(&self) -> Option<usize> {
        Some(self.data.nrows())
    }

    fn eval(&self, id: u64, points: &QuadratureSet) -> Result<Array2<f64>> {
        check_points(self, points)?;
        let len = self.data.nrows();
        if id as usize >= len {
            return Err(Error::Exhausted { index: id, len });
        }
        let row = self.data.row(id as usize);
        let row = row.as_slice().expect("contiguous");
        let d = self.shape.len();
        let c = self.channels;
        let mut out = Array2::zeros((points.len(), c));
        let mut base = vec![0usize; d];
        let mut frac = vec![0.0; d];
        for (j, p) in points.points().rows().into_iter().enumerate() {
            for axis in 0..d {
                let n = self.shape[axis];
                let s = p[axis] * (n - 1) as f64;
                let i = (s.floor() as usize).min(n - 2);
                base[axis] = i;
                frac[axis] = s - i as f64;
            }
            for corner in 0..(1usize << d) {
                let mut w = 1.0;
                let mut flat = 0;
                for axis in 0..d {
                    let bit = (corner >> (d - 1 - axis)) & 1;
                    w *= if bit == 1 { frac[axis] } else { 1.0 - frac[axis] };
                    flat = flat * self.shape[axis] + base[axis] + bit;
                }
                if w == 0.0 {
                    continue;
                }
                for ch in 0..c {
                    out[[j, ch]] += w * row[flat * c + ch];
                }
            }
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn bilinear() -> GriddedDataset {
        // f(x, y) = 1 + 2x + 3y + 4xy is reproduced exactly by bilinear interpolation
        GriddedDataset::tabulate(vec![5, 4], 2, 2, |s, x, out| {
            let v = 1.0 + 2.0 * x[0] + 3.0 * x[1] + 4.0 * x[0] * x[1];
            out[0] = v + s as f64;
            out[1] = -v;
        })
        .unwrap()
    }

    #[test]
    fn bilinear_functions_are_exact() {
        let ds = bilinear();
        let q = QuadratureSet::from_points(array![[0.0, 0.0], [0.33, 0.71], [1.0, 1.0], [0.5, 1.0]]).unwrap();
        let v = ds.eval(1, &q).unwrap();
        for (j, p) in q.points().rows().into_iter().enumerate() {
            let f = 1.0 + 2.0 * p[0] + 3.0 * p[1] + 4.0 * p[0] * p[1];
            assert!((v[[j, 0]] - (f + 1.0)).abs() < 1e-12);
            assert!((v[[j, 1]] + f).abs() < 1e-12);
        }
    }

    #[test]
    fn row_layout_matches_channels() {
        let ds = bilinear();
        let q = QuadratureSet::from_points(array![[0.2, 0.3], [0.9, 0.1]]).unwrap();
        let m = ds.eval(0, &q).unwrap();
        let r = ds.eval_row(0, &q).unwrap();
        assert_eq!(r[[0, 3]], m[[1, 1]]);
    }

    #[test]
    fn save_load_round_trip() {
        let ds = bilinear();
        let dir = std::env::temp_dir().join(format!("onbflow-grid-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("g.fgrd");
        ds.save(&path).unwrap();
        assert_eq!(GriddedDataset::load(&path).unwrap(), ds);
        let mut bytes = std::fs::read(&path).unwrap();
        bytes.truncate(bytes.len() - 3);
        std::fs::write(&path, &bytes).unwrap();
        assert!(matches!(GriddedDataset::load(&path), Err(Error::Format(_))));
        std::fs::remove_dir_all(&dir).unwrap();
    }

    #[test]
    fn exhausted_and_dimension_errors() {
        let ds = bilinear();
        let q = QuadratureSet::from_points(array![[0.2, 0.3]]).unwrap();
        assert!(matches!(ds.eval(2, &q), Err(Error::Exhausted { index: 2, len: 2 })));
        let q1 = QuadratureSet::from_points(array![[0.2]]).unwrap();
        assert!(matches!(ds.eval(0, &q1), Err(Error::Dimension { .. })));
    }
}
