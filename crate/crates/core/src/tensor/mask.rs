use crate::error::{Error, Result};

/// Boolean attention mask; `true` marks a position that may be attended.
///
/// Broadcasts against a tensor numpy-style: shapes are right-aligned and
/// every mask extent is either 1 or equal to the tensor extent.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Mask {
    shape: Vec<usize>,
    keep: Vec<bool>,
}

impl Mask {
    pub fn new(shape: &[usize], keep: Vec<bool>) -> Result<Self> {
        if shape.iter().product::<usize>() != keep.len() {
            return Err(Error::shape("mask", format!("shape {shape:?} vs {} values", keep.len())));
        }
        Ok(Mask { shape: shape.to_vec(), keep })
    }

    /// `[B, 1, 1, T]` mask that hides positions at or beyond each row's length.
    pub fn key_padding(lengths: &[usize], t: usize) -> Self {
        let keep = lengths.iter().flat_map(|&len| (0..t).map(move |j| j < len)).collect();
        Mask { shape: vec![lengths.len(), 1, 1, t], keep }
    }

    /// `[1, 1, T, T]` lower-triangular mask: query `i` sees keys `0..=i`.
    pub fn causal(t: usize) -> Self {
        let keep = (0..t).flat_map(|i| (0..t).map(move |j| j <= i)).collect();
        Mask { shape: vec![1, 1, t, t], keep }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn values(&self) -> &[bool] {
        &self.keep
    }

    /// Elementwise AND with broadcasting to the joint shape.
    pub fn and(&self, other: &Mask) -> Result<Mask> {
        let rank = self.shape.len().max(other.shape.len());
        let pad = |s: &[usize]| {
            let mut v = vec![1; rank - s.len()];
            v.extend_from_slice(s);
            v
        };
        let (a, b) = (pad(&self.shape), pad(&other.shape));
        let mut shape = Vec::with_capacity(rank);
        for (&x, &y) in a.iter().zip(&b) {
            if x != y && x != 1 && y != 1 {
                return Err(Error::shape("mask_and", format!("{:?} vs {:?}", self.shape, other.shape)));
            }
            shape.push(x.max(y));
        }
        let sa = self.strides_for(&shape)?;
        let sb = other.strides_for(&shape)?;
        let n: usize = shape.iter().product();
        let mut keep = Vec::with_capacity(n);
        let mut idx = vec![0usize; rank];
        for _ in 0..n {
            let oa: usize = idx.iter().zip(&sa).map(|(i, s)| i * s).sum();
            let ob: usize = idx.iter().zip(&sb).map(|(i, s)| i * s).sum();
            keep.push(self.keep[oa] && other.keep[ob]);
            for d in (0..rank).rev() {
                idx[d] += 1;
                if idx[d] < shape[d] {
                    break;
                }
                idx[d] = 0;
            }
        }
        Ok(Mask { shape, keep })
    }

    /// Per-dimension strides into `keep` when broadcast to `target`
    /// (zero along broadcast dimensions).
    pub(crate) fn strides_for(&self, target: &[usize]) -> Result<Vec<usize>> {
        if self.shape.len() > target.len() {
            return Err(Error::shape("mask", format!("mask {:?} vs tensor {target:?}", self.shape)));
        }
        let offset = target.len() - self.shape.len();
        let mut own = vec![0usize; self.shape.len()];
        let mut acc = 1;
        for d in (0..self.shape.len()).rev() {
            own[d] = acc;
            acc *= self.shape[d];
        }
        let mut strides = vec![0usize; target.len()];
        for (d, &ext) in self.shape.iter().enumerate() {
            let t = target[offset + d];
            if ext == t {
                strides[offset + d] = if ext == 1 { 0 } else { own[d] };
            } else if ext != 1 {
                return Err(Error::shape("mask", format!("mask {:?} vs tensor {target:?}", self.shape)));
            }
        }
        Ok(strides)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn causal_and_padding_combine() {
        let m = Mask::key_padding(&[2], 3).and(&Mask::causal(3)).unwrap();
        assert_eq!(m.shape(), &[1, 1, 3, 3]);
        assert_eq!(m.values(), &[true, false, false, true, true, false, true, true, false]);
    }

    #[test]
    fn incompatible_broadcast_is_rejected() {
        let m = Mask::new(&[2], vec![true, false]).unwrap();
        assert!(m.strides_for(&[4, 3]).is_err());
        assert_eq!(m.strides_for(&[4, 2]).unwrap(), vec![0, 1]);
    }
}
