use crate::error::{Error, Result};
use crate::real::Real;

/// Dense row-major array, optionally carrying a gradient buffer.
#[derive(Clone, Debug, PartialEq)]
pub struct DiffArray<T> {
    shape: Vec<usize>,
    values: Vec<T>,
    pub requires_grad: bool,
    pub grad: Option<Vec<T>>,
}

impl<T: Real> DiffArray<T> {
    pub fn new(shape: &[usize], values: Vec<T>) -> Result<Self> {
        if shape.is_empty() || shape.contains(&0) {
            return Err(Error::Contract(format!(
                "shape extents must be positive, got {shape:?}"
            )));
        }
        let numel: usize = shape.iter().product();
        if numel != values.len() {
            return Err(Error::Contract(format!(
                "shape {shape:?} needs {numel} values, got {}",
                values.len()
            )));
        }
        Ok(Self {
            shape: shape.to_vec(),
            values,
            requires_grad: false,
            grad: None,
        })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let numel = shape.iter().product();
        Self::new(shape, vec![T::zero(); numel]).expect("zeros: positive shape")
    }

    pub fn scalar(x: T) -> Self {
        Self::new(&[1], vec![x]).expect("scalar shape")
    }

    /// 2-D array from nested rows. All rows must share one length.
    pub fn from_rows(rows: &[Vec<T>]) -> Result<Self> {
        let r = rows.len();
        let c = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|row| row.len() != c) {
            return Err(Error::Contract("ragged rows".into()));
        }
        Self::new(&[r, c], rows.concat())
    }

    pub fn from_f64(shape: &[usize], values: &[f64]) -> Result<Self> {
        Self::new(shape, values.iter().map(|&x| T::from_f64c(x)).collect())
    }

    pub fn with_grad(mut self) -> Self {
        self.requires_grad = true;
        self
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [T] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<T> {
        self.values
    }

    pub fn numel(&self) -> usize {
        self.values.len()
    }

    /// Rows and columns of a 2-D array.
    pub fn dims2(&self) -> Result<(usize, usize)> {
        match self.shape[..] {
            [r, c] => Ok((r, c)),
            _ => Err(Error::Contract(format!(
                "expected a 2-D array, got shape {:?}",
                self.shape
            ))),
        }
    }

    pub fn row(&self, i: usize) -> &[T] {
        let c = *self.shape.last().unwrap();
        &self.values[i * c..(i + 1) * c]
    }

    pub fn item(&self) -> T {
        self.values[0]
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    /// Adds `g` into the gradient buffer, allocating it if absent.
    pub fn accumulate_grad(&mut self, g: &[T]) {
        match &mut self.grad {
            Some(buf) => buf.iter_mut().zip(g).for_each(|(a, &b)| *a += b),
            None => self.grad = Some(g.to_vec()),
        }
    }
}
