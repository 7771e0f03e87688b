use super::matrix::Matrix;
use super::real::Real;
use crate::error::{Error, Result};

/// `C×H×W` activation tensor stored channel-major.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap<T: Real = f64> {
    channels: usize,
    height: usize,
    width: usize,
    data: Vec<T>,
}

impl<T: Real> FeatureMap<T> {
    pub fn new(channels: usize, height: usize, width: usize, data: Vec<T>) -> Result<Self> {
        if channels == 0 || height == 0 || width == 0 {
            return Err(Error::shape(
                "FeatureMap::new",
                "positive C, H, W",
                format!("{channels}x{height}x{width}"),
            ));
        }
        if data.len() != channels * height * width {
            return Err(Error::shape(
                "FeatureMap::new",
                format!("{} elements", channels * height * width),
                format!("{} elements", data.len()),
            ));
        }
        Ok(Self {
            channels,
            height,
            width,
            data,
        })
    }

    pub fn zeros(channels: usize, height: usize, width: usize) -> Self {
        Self::new(channels, height, width, vec![T::zero(); channels * height * width])
            .expect("positive dimensions")
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    /// `(C, H, W)`.
    pub fn dims(&self) -> (usize, usize, usize) {
        (self.channels, self.height, self.width)
    }

    pub fn spatial_size(&self) -> usize {
        self.height * self.width
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    #[inline]
    pub fn get(&self, c: usize, y: usize, x: usize) -> T {
        self.data[(c * self.height + y) * self.width + x]
    }

    pub fn channel(&self, c: usize) -> &[T] {
        let plane = self.height * self.width;
        &self.data[c * plane..(c + 1) * plane]
    }

    /// `n×C` matrix, row `y·W + x` holding the channel vector of pixel `(y, x)`.
    pub fn flatten(&self) -> Matrix<T> {
        let n = self.spatial_size();
        let mut data = Vec::with_capacity(self.data.len());
        for p in 0..n {
            for c in 0..self.channels {
                data.push(self.data[c * n + p]);
            }
        }
        Matrix::from_vec(n, self.channels, data).expect("non-empty feature map")
    }

    /// Inverse of [`FeatureMap::flatten`].
    pub fn unflatten(m: &Matrix<T>, height: usize, width: usize) -> Result<Self> {
        if m.rows() != height * width {
            return Err(Error::shape(
                "FeatureMap::unflatten",
                format!("{} rows for {height}x{width}", height * width),
                format!("{} rows", m.rows()),
            ));
        }
        let (n, c) = m.shape();
        let mut data = vec![T::zero(); n * c];
        for (p, row) in m.iter_rows().enumerate() {
            for (ch, &v) in row.iter().enumerate() {
                data[ch * n + p] = v;
            }
        }
        Self::new(c, height, width, data)
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self {
            data: self.data.iter().map(|&x| f(x)).collect(),
            ..self.clone()
        }
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        if self.dims() != other.dims() {
            return Err(Error::shape(
                "FeatureMap::add",
                format!("{:?}", self.dims()),
                format!("{:?}", other.dims()),
            ));
        }
        super::counter::record_adds(self.data.len() as u64);
        Ok(Self {
            data: self.data.iter().zip(&other.data).map(|(&a, &b)| a + b).collect(),
            ..self.clone()
        })
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }
}
