//! Boolean pixel masks shared by the dataset ground truth, heatmap
//! thresholding, and localization scoring.

use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mask {
    h: usize,
    w: usize,
    data: Vec<bool>,
}

impl Mask {
    pub fn new(h: usize, w: usize) -> Mask {
        Mask {
            h,
            w,
            data: vec![false; h * w],
        }
    }

    pub fn height(&self) -> usize {
        self.h
    }

    pub fn width(&self) -> usize {
        self.w
    }

    pub fn get(&self, i: usize, j: usize) -> bool {
        self.data[i * self.w + j]
    }

    pub fn set(&mut self, i: usize, j: usize, on: bool) {
        self.data[i * self.w + j] = on;
    }

    pub fn data(&self) -> &[bool] {
        &self.data
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&b| b).count()
    }

    pub fn is_empty(&self) -> bool {
        self.data.iter().all(|&b| !b)
    }

    pub fn is_subset_of(&self, other: &Mask) -> bool {
        self.h == other.h
            && self.w == other.w
            && self.data.iter().zip(other.data.iter()).all(|(&a, &b)| !a || b)
    }

    /// 0.0/1.0 tensor, e.g. for PGM export.
    pub fn to_tensor(&self) -> Tensor {
        Tensor::from_vec(
            vec![self.h, self.w],
            self.data.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect(),
        )
        .unwrap()
    }

    /// Rank-2 tensor to mask; values above 0.5 are true.
    pub fn from_tensor(t: &Tensor) -> Mask {
        assert_eq!(t.rank(), 2, "mask source must be rank 2");
        Mask {
            h: t.shape()[0],
            w: t.shape()[1],
            data: t.data().iter().map(|&v| v > 0.5).collect(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn set_get_count() {
        let mut m = Mask::new(3, 4);
        assert!(m.is_empty());
        m.set(1, 2, true);
        m.set(2, 3, true);
        assert!(m.get(1, 2));
        assert!(!m.get(0, 0));
        assert_eq!(m.count(), 2);
    }

    #[test]
    fn subset_relation() {
        let mut small = Mask::new(2, 2);
        small.set(0, 0, true);
        let mut big = small.clone();
        big.set(1, 1, true);
        assert!(small.is_subset_of(&big));
        assert!(!big.is_subset_of(&small));
        assert!(small.is_subset_of(&small));
    }

    #[test]
    fn tensor_roundtrip() {
        let mut m = Mask::new(2, 3);
        m.set(0, 1, true);
        m.set(1, 2, true);
        let t = m.to_tensor();
        assert_eq!(t.shape(), &[2, 3]);
        assert_eq!(Mask::from_tensor(&t), m);
    }
}
