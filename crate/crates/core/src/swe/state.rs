use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One of the three prognostic fields.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Field {
    U,
    V,
    H,
}

impl Field {
    pub const ALL: [Field; 3] = [Field::U, Field::V, Field::H];

    pub fn offset(self) -> usize {
        match self {
            Field::U => 0,
            Field::V => 1,
            Field::H => 2,
        }
    }
}

/// Maps `(field, i, j)` on a `d x d` torus to a flat index and back.
///
/// Fields are stored in the order u, v, h; each field is row-major in
/// `(i, j)`, with `i` the x-index and `j` the y-index.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Grid {
    pub d: usize,
}

impl Grid {
    pub fn new(d: usize) -> Self {
        Self { d }
    }

    pub fn n(self) -> usize {
        3 * self.d * self.d
    }

    #[inline]
    pub fn index(self, field: Field, i: usize, j: usize) -> usize {
        field.offset() * self.d * self.d + (i % self.d) * self.d + (j % self.d)
    }

    /// Inverse of [`Grid::index`].
    pub fn locate(self, index: usize) -> (Field, usize, usize) {
        let d2 = self.d * self.d;
        let field = Field::ALL[index / d2];
        let r = index % d2;
        (field, r / self.d, r % self.d)
    }

    /// Shortest wrap-around offset between two coordinates.
    #[inline]
    pub fn wrap_delta(self, a: usize, b: usize) -> usize {
        let diff = a.abs_diff(b);
        diff.min(self.d - diff)
    }

    /// Chebyshev distance on the torus between the grid points of two indices.
    pub fn chebyshev(self, a: usize, b: usize) -> usize {
        let (_, ia, ja) = self.locate(a);
        let (_, ib, jb) = self.locate(b);
        self.wrap_delta(ia, ib).max(self.wrap_delta(ja, jb))
    }

    /// Euclidean distance on the torus, in grid cells.
    pub fn euclidean(self, a: usize, b: usize) -> f64 {
        let (_, ia, ja) = self.locate(a);
        let (_, ib, jb) = self.locate(b);
        let di = self.wrap_delta(ia, ib) as f64;
        let dj = self.wrap_delta(ja, jb) as f64;
        (di * di + dj * dj).sqrt()
    }
}

/// The flattened `(u, v, h)` state on a `d x d` periodic grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateVector {
    d: usize,
    data: Vec<f64>,
}

impl StateVector {
    pub fn zeros(d: usize) -> Self {
        Self {
            d,
            data: vec![0.0; 3 * d * d],
        }
    }

    pub fn from_vec(d: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != 3 * d * d {
            return Err(Error::Dimension {
                expected: 3 * d * d,
                got: data.len(),
            });
        }
        Ok(Self { d, data })
    }

    /// Builds a state by evaluating `f(field, i, j)` at every grid point.
    pub fn from_fn(d: usize, mut f: impl FnMut(Field, usize, usize) -> f64) -> Self {
        let grid = Grid::new(d);
        let mut s = Self::zeros(d);
        for field in Field::ALL {
            for i in 0..d {
                for j in 0..d {
                    s.data[grid.index(field, i, j)] = f(field, i, j);
                }
            }
        }
        s
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn grid(&self) -> Grid {
        Grid::new(self.d)
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn field(&self, field: Field) -> &[f64] {
        let d2 = self.d * self.d;
        &self.data[field.offset() * d2..(field.offset() + 1) * d2]
    }

    pub fn field_mut(&mut self, field: Field) -> &mut [f64] {
        let d2 = self.d * self.d;
        &mut self.data[field.offset() * d2..(field.offset() + 1) * d2]
    }

    pub fn get(&self, field: Field, i: usize, j: usize) -> f64 {
        self.data[self.grid().index(field, i, j)]
    }

    /// Index of the first non-finite component, if any.
    pub fn first_non_finite(&self) -> Option<usize> {
        self.data.iter().position(|v| !v.is_finite())
    }

    pub fn check_finite(&self) -> Result<()> {
        match self.first_non_finite() {
            Some(index) => Err(Error::NonFinite { index }),
            None => Ok(()),
        }
    }

    /// Cyclic shift of every field by `(di, dj)` cells.
    pub fn roll(&self, di: usize, dj: usize) -> Self {
        let d = self.d;
        let grid = self.grid();
        let mut out = Self::zeros(d);
        for field in Field::ALL {
            for i in 0..d {
                for j in 0..d {
                    out.data[grid.index(field, i + di, j + dj)] = self.data[grid.index(field, i, j)];
                }
            }
        }
        out
    }
}

impl AsRef<[f64]> for StateVector {
    fn as_ref(&self) -> &[f64] {
        &self.data
    }
}

/// Cyclic shift of a single `d x d` field.
pub fn roll_field(field: &[f64], d: usize, di: usize, dj: usize) -> Vec<f64> {
    let mut out = vec![0.0; d * d];
    for i in 0..d {
        for j in 0..d {
            out[((i + di) % d) * d + (j + dj) % d] = field[i * d + j];
        }
    }
    out
}
