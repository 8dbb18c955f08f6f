use crate::error::{Error, Result};
use crate::real::Real;

/// Dimensions of a rank-4 tensor: batch x channels x rows x cols.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
pub struct Shape4 {
    pub batch: usize,
    pub channels: usize,
    pub rows: usize,
    pub cols: usize,
}

impl Shape4 {
    pub const fn new(batch: usize, channels: usize, rows: usize, cols: usize) -> Self {
        Shape4 {
            batch,
            channels,
            rows,
            cols,
        }
    }

    pub fn len(&self) -> usize {
        self.batch * self.channels * self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Elements in one spatial plane.
    pub fn plane(&self) -> usize {
        self.rows * self.cols
    }

    /// Elements per batch item.
    pub fn item(&self) -> usize {
        self.channels * self.plane()
    }

    pub fn dims(&self) -> [usize; 4] {
        [self.batch, self.channels, self.rows, self.cols]
    }
}

impl std::fmt::Display for Shape4 {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}x{}x{}x{}", self.batch, self.channels, self.rows, self.cols)
    }
}

/// Dense rank-4 array stored in NCHW order (cols fastest), with an optional
/// gradient buffer of identical shape.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor4<T> {
    shape: Shape4,
    data: Vec<T>,
    grad: Option<Vec<T>>,
}

impl<T: Real> Tensor4<T> {
    pub fn zeros(shape: Shape4) -> Self {
        assert!(
            shape.dims().iter().all(|&d| d >= 1),
            "tensor dimensions must be >= 1, got {shape}"
        );
        Tensor4 {
            shape,
            data: vec![T::ZERO; shape.len()],
            grad: None,
        }
    }

    pub fn filled(shape: Shape4, value: T) -> Self {
        let mut t = Self::zeros(shape);
        t.data.fill(value);
        t
    }

    pub fn from_vec(shape: Shape4, data: Vec<T>) -> Result<Self> {
        if shape.dims().contains(&0) {
            return Err(Error::Config(format!("tensor dimensions must be >= 1, got {shape}")));
        }
        if data.len() != shape.len() {
            return Err(Error::shape("tensor", "length", shape.len(), data.len()));
        }
        Ok(Tensor4 {
            shape,
            data,
            grad: None,
        })
    }

    pub fn from_fn(shape: Shape4, mut f: impl FnMut([usize; 4]) -> T) -> Self {
        let mut t = Self::zeros(shape);
        let mut idx = 0;
        for b in 0..shape.batch {
            for c in 0..shape.channels {
                for r in 0..shape.rows {
                    for col in 0..shape.cols {
                        t.data[idx] = f([b, c, r, col]);
                        idx += 1;
                    }
                }
            }
        }
        t
    }

    pub fn shape(&self) -> Shape4 {
        self.shape
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    #[inline]
    pub fn index(&self, b: usize, c: usize, r: usize, col: usize) -> usize {
        ((b * self.shape.channels + c) * self.shape.rows + r) * self.shape.cols + col
    }

    #[inline]
    pub fn get(&self, b: usize, c: usize, r: usize, col: usize) -> T {
        self.data[self.index(b, c, r, col)]
    }

    #[inline]
    pub fn set(&mut self, b: usize, c: usize, r: usize, col: usize, v: T) {
        let i = self.index(b, c, r, col);
        self.data[i] = v;
    }

    /// Values of one batch item (channels x rows x cols).
    pub fn item(&self, b: usize) -> &[T] {
        let n = self.shape.item();
        &self.data[b * n..(b + 1) * n]
    }

    pub fn item_mut(&mut self, b: usize) -> &mut [T] {
        let n = self.shape.item();
        &mut self.data[b * n..(b + 1) * n]
    }

    pub fn grad(&self) -> Option<&[T]> {
        self.grad.as_deref()
    }

    /// Gradient buffer, allocated (zeroed) on first access.
    pub fn grad_mut(&mut self) -> &mut [T] {
        let len = self.data.len();
        self.grad.get_or_insert_with(|| vec![T::ZERO; len])
    }

    pub fn zero_grad(&mut self) {
        if let Some(g) = self.grad.as_mut() {
            g.fill(T::ZERO);
        }
    }

    pub fn take_grad(&mut self) -> Option<Vec<T>> {
        self.grad.take()
    }

    /// Splits into values (mutable) and gradient (read-only, allocated if absent).
    pub fn value_and_grad_mut(&mut self) -> (&mut [T], &[T]) {
        let len = self.data.len();
        let g = self.grad.get_or_insert_with(|| vec![T::ZERO; len]);
        (&mut self.data, g)
    }

    pub fn reshape(mut self, shape: Shape4) -> Result<Self> {
        if shape.len() != self.shape.len() {
            return Err(Error::shape("reshape", "length", self.shape.len(), shape.len()));
        }
        self.shape = shape;
        Ok(self)
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Tensor4 {
            shape: self.shape,
            data: self.data.iter().map(|&v| f(v)).collect(),
            grad: None,
        }
    }

    pub fn cast<U: Real>(&self) -> Tensor4<U> {
        Tensor4 {
            shape: self.shape,
            data: self.data.iter().map(|v| U::from_f64(v.to_f64())).collect(),
            grad: self
                .grad
                .as_ref()
                .map(|g| g.iter().map(|v| U::from_f64(v.to_f64())).collect()),
        }
    }

    /// Inner product of the value buffers.
    pub fn dot(&self, other: &Self) -> T {
        assert_eq!(self.shape, other.shape, "dot: shape mismatch");
        self.data.iter().zip(&other.data).map(|(&a, &b)| a * b).sum()
    }

    /// Copies rows/cols `[0, rows) x [0, cols)` of every plane into a new tensor.
    pub fn crop(&self, rows: usize, cols: usize) -> Self {
        let s = self.shape;
        assert!(rows <= s.rows && cols <= s.cols);
        if rows == s.rows && cols == s.cols {
            return Tensor4 {
                shape: s,
                data: self.data.clone(),
                grad: None,
            };
        }
        let out_shape = Shape4::new(s.batch, s.channels, rows, cols);
        let mut data = Vec::with_capacity(out_shape.len());
        for plane in self.data.chunks_exact(s.plane()) {
            for r in 0..rows {
                data.extend_from_slice(&plane[r * s.cols..r * s.cols + cols]);
            }
        }
        Tensor4 {
            shape: out_shape,
            data,
            grad: None,
        }
    }

    /// Zero-pads every plane on the bottom/right up to `rows x cols`.
    pub fn pad_to(&self, rows: usize, cols: usize) -> Self {
        let s = self.shape;
        assert!(rows >= s.rows && cols >= s.cols);
        if rows == s.rows && cols == s.cols {
            return Tensor4 {
                shape: s,
                data: self.data.clone(),
                grad: None,
            };
        }
        let mut out = Self::zeros(Shape4::new(s.batch, s.channels, rows, cols));
        for (src, dst) in self
            .data
            .chunks_exact(s.plane())
            .zip(out.data.chunks_exact_mut(rows * cols))
        {
            for r in 0..s.rows {
                dst[r * cols..r * cols + s.cols].copy_from_slice(&src[r * s.cols..(r + 1) * s.cols]);
            }
        }
        out
    }
}
