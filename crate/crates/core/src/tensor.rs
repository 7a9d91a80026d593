//! Dense row-major `f64` tensors and their text serialization.
//!
//! A tensor block is written as
//!
//! ```text
//! tensor <name> <d0>x<d1>...
//! <v0> <v1> ... <vN>
//! ```
//!
//! Values use Rust's shortest round-trip decimal formatting, so a
//! write/read cycle reproduces every bit.

use std::fmt::Write as _;

use rand::Rng;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum TensorError {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("tensor {name}: expected shape {expected:?}, found {found:?}")]
    Shape {
        name: String,
        expected: Vec<usize>,
        found: Vec<usize>,
    },
    #[error("tensor {0} contains a non-finite value")]
    NonFinite(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(name: impl Into<String>, shape: &[usize]) -> Self {
        let len = shape.iter().product();
        Tensor {
            name: name.into(),
            shape: shape.to_vec(),
            data: vec![0.0; len],
        }
    }

    /// Uniform initialization in `[-scale, scale]`.
    pub fn uniform<R: Rng>(name: impl Into<String>, shape: &[usize], scale: f64, rng: &mut R) -> Self {
        let mut t = Tensor::zeros(name, shape);
        for v in &mut t.data {
            *v = rng.random_range(-scale..=scale);
        }
        t
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn zeros_like(&self) -> Self {
        Tensor::zeros(self.name.clone(), &self.shape)
    }

    /// Number of columns of a 2-D tensor (1 for vectors).
    pub fn cols(&self) -> usize {
        if self.shape.len() >= 2 {
            self.shape[1..].iter().product()
        } else {
            1
        }
    }

    pub fn row(&self, r: usize) -> &[f64] {
        let c = self.cols();
        &self.data[r * c..(r + 1) * c]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        let c = self.cols();
        &mut self.data[r * c..(r + 1) * c]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn fill(&mut self, value: f64) {
        self.data.iter_mut().for_each(|v| *v = value);
    }

    /// `y = self · x` for a 2-D tensor.
    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        let rows = self.shape[0];
        let cols = self.cols();
        debug_assert_eq!(cols, x.len());
        (0..rows).map(|r| dot(&self.data[r * cols..(r + 1) * cols], x)).collect()
    }

    /// `out += selfᵀ · g` for a 2-D tensor.
    pub fn matvec_t_acc(&self, g: &[f64], out: &mut [f64]) {
        let cols = self.cols();
        for (r, &gr) in g.iter().enumerate() {
            if gr == 0.0 {
                continue;
            }
            for (o, w) in out.iter_mut().zip(&self.data[r * cols..(r + 1) * cols]) {
                *o += gr * w;
            }
        }
    }

    /// `self += g ⊗ x` (rank-one update of a 2-D tensor).
    pub fn outer_acc(&mut self, g: &[f64], x: &[f64]) {
        let cols = self.cols();
        for (r, &gr) in g.iter().enumerate() {
            if gr == 0.0 {
                continue;
            }
            for (w, xv) in self.data[r * cols..(r + 1) * cols].iter_mut().zip(x) {
                *w += gr * xv;
            }
        }
    }

    pub fn write_text(&self, out: &mut String) {
        let dims: Vec<String> = self.shape.iter().map(|d| d.to_string()).collect();
        let _ = writeln!(out, "tensor {} {}", self.name, dims.join("x"));
        let mut first = true;
        for v in &self.data {
            if !first {
                out.push(' ');
            }
            first = false;
            let _ = write!(out, "{v}");
        }
        out.push('\n');
    }

    /// Parses a tensor block from two lines. `line_no` is the 1-based number of
    /// the header line, used in error messages.
    pub fn parse_text(header: &str, values: &str, line_no: usize) -> Result<Self, TensorError> {
        let mut parts = header.split_whitespace();
        if parts.next() != Some("tensor") {
            return Err(TensorError::Parse {
                line: line_no,
                message: format!("expected tensor header, found {header:?}"),
            });
        }
        let name = parts.next().ok_or_else(|| TensorError::Parse {
            line: line_no,
            message: "tensor header without a name".into(),
        })?;
        let shape_str = parts.next().ok_or_else(|| TensorError::Parse {
            line: line_no,
            message: format!("tensor {name} has no shape"),
        })?;
        let shape = shape_str
            .split('x')
            .map(|d| d.parse::<usize>())
            .collect::<Result<Vec<_>, _>>()
            .map_err(|e| TensorError::Parse {
                line: line_no,
                message: format!("tensor {name}: bad shape {shape_str:?}: {e}"),
            })?;
        let data = values
            .split_whitespace()
            .map(|v| v.parse::<f64>())
            .collect::<Result<Vec<_>, _>>()
            .map_err(|e| TensorError::Parse {
                line: line_no + 1,
                message: format!("tensor {name}: {e}"),
            })?;
        let expected: usize = shape.iter().product();
        if data.len() != expected {
            return Err(TensorError::Parse {
                line: line_no + 1,
                message: format!("tensor {name}: expected {expected} values, found {}", data.len()),
            });
        }
        let t = Tensor {
            name: name.to_string(),
            shape,
            data,
        };
        if !t.is_finite() {
            return Err(TensorError::NonFinite(t.name));
        }
        Ok(t)
    }

    pub fn expect_shape(&self, shape: &[usize]) -> Result<(), TensorError> {
        if self.shape != shape {
            return Err(TensorError::Shape {
                name: self.name.clone(),
                expected: shape.to_vec(),
                found: self.shape.clone(),
            });
        }
        Ok(())
    }
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len().min(b.len());
    let (a, b) = (&a[..n], &b[..n]);
    let mut acc = [0.0; 4];
    let (ca, cb) = (a.chunks_exact(4), b.chunks_exact(4));
    let tail: f64 = ca.remainder().iter().zip(cb.remainder()).map(|(x, y)| x * y).sum();
    for (x, y) in ca.zip(cb) {
        let (x, y): (&[f64; 4], &[f64; 4]) = (x.try_into().unwrap(), y.try_into().unwrap());
        for k in 0..4 {
            acc[k] += x[k] * y[k];
        }
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}
