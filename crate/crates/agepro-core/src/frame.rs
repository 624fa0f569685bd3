use serde::{Deserialize, Serialize};

use crate::Error;

/// A grayscale image with intensities in `[0, 1]`, stored row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Frame {
    h: usize,
    w: usize,
    values: Vec<f64>,
}

impl Frame {
    /// Smallest admissible side length (total-variation terms need a 2x2 window).
    pub const MIN_DIM: usize = 2;

    pub fn new(height: usize, width: usize, values: Vec<f64>) -> Result<Self, Error> {
        if height < Self::MIN_DIM || width < Self::MIN_DIM {
            return Err(Error::InvalidFrame(format!(
                "dimensions {height}x{width} below minimum {0}x{0}",
                Self::MIN_DIM
            )));
        }
        if values.len() != height * width {
            return Err(Error::InvalidFrame(format!(
                "{} values for {height}x{width} frame",
                values.len()
            )));
        }
        if let Some(v) = values.iter().find(|v| !v.is_finite() || **v < 0.0 || **v > 1.0) {
            return Err(Error::InvalidFrame(format!("value {v} outside [0,1]")));
        }
        Ok(Self { h: height, w: width, values })
    }

    pub fn zeros(height: usize, width: usize) -> Self {
        Self::new(height, width, vec![0.0; height * width]).expect("zero frame is valid")
    }

    pub fn from_fn(height: usize, width: usize, f: impl Fn(usize, usize) -> f64) -> Result<Self, Error> {
        let values = (0..height * width).map(|i| f(i / width, i % width)).collect();
        Self::new(height, width, values)
    }

    pub fn height(&self) -> usize {
        self.h
    }

    pub fn width(&self) -> usize {
        self.w
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.h, self.w)
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn get(&self, y: usize, x: usize) -> f64 {
        self.values[y * self.w + x]
    }

    /// Translate by `(dy, dx)` with zero padding.
    pub fn shifted(&self, dy: i64, dx: i64) -> Frame {
        let mut out = vec![0.0; self.values.len()];
        for y in 0..self.h {
            for x in 0..self.w {
                let sy = y as i64 - dy;
                let sx = x as i64 - dx;
                if sy >= 0 && sy < self.h as i64 && sx >= 0 && sx < self.w as i64 {
                    out[y * self.w + x] = self.values[sy as usize * self.w + sx as usize];
                }
            }
        }
        Frame { h: self.h, w: self.w, values: out }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_out_of_range_values() {
        assert!(Frame::new(2, 2, vec![0.0, 0.5, 1.0, 1.5]).is_err());
        assert!(Frame::new(2, 2, vec![0.0, 0.5, 1.0, f64::NAN]).is_err());
    }

    #[test]
    fn rejects_bad_shapes() {
        assert!(Frame::new(1, 4, vec![0.0; 4]).is_err());
        assert!(Frame::new(2, 2, vec![0.0; 3]).is_err());
    }

    #[test]
    fn shift_moves_hot_pixel() {
        let mut f = Frame::zeros(4, 4);
        f.values[1 * 4 + 2] = 1.0;
        let s = f.shifted(1, 0);
        // oracle: destination index computed directly from (y+dy, x+dx)
        for y in 0..4 {
            for x in 0..4 {
                let expect = if (y, x) == (2, 2) { 1.0 } else { 0.0 };
                assert_eq!(s.get(y, x), expect);
            }
        }
    }

    #[test]
    fn shift_zero_is_identity() {
        let f = Frame::from_fn(4, 4, |y, x| (y * 4 + x) as f64 / 16.0).unwrap();
        assert_eq!(f.shifted(0, 0), f);
    }
}
