//! Dense row-major tensor values and the shape arithmetic shared by the tape.

use std::sync::Arc;

use crate::error::{Error, Result};

/// Dense n-dimensional array of `f64` in row-major order.
///
/// A rank-0 tensor (empty shape) holds exactly one value. Storage is shared between clones
/// and copied on first mutation, so clones and reshapes are cheap.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Arc<Vec<f64>>,
}

impl Tensor {
    pub fn new(shape: impl Into<Vec<usize>>, data: Vec<f64>) -> Result<Self> {
        let shape = shape.into();
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(Error::shape("tensor construction", &shape, &[data.len()]));
        }
        Ok(Self {
            shape,
            data: Arc::new(data),
        })
    }

    /// Like [`Tensor::new`] for call sites where the length is correct by construction.
    pub(crate) fn from_parts(shape: Vec<usize>, data: Vec<f64>) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        Self {
            shape,
            data: Arc::new(data),
        }
    }

    pub fn zeros(shape: impl Into<Vec<usize>>) -> Self {
        Self::full(shape, 0.0)
    }

    pub fn full(shape: impl Into<Vec<usize>>, value: f64) -> Self {
        let shape = shape.into();
        let n = shape.iter().product();
        Self {
            shape,
            data: Arc::new(vec![value; n]),
        }
    }

    pub fn scalar(value: f64) -> Self {
        Self {
            shape: Vec::new(),
            data: Arc::new(vec![value]),
        }
    }

    /// Builds a rank-2 tensor from rows of equal length.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for row in rows {
            if row.len() != cols {
                return Err(Error::shape("from_rows", &[cols], &[row.len()]));
            }
            data.extend_from_slice(row);
        }
        Self::new(vec![rows.len(), cols], data)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        Arc::make_mut(&mut self.data).as_mut_slice()
    }

    pub fn into_data(self) -> Vec<f64> {
        Arc::try_unwrap(self.data).unwrap_or_else(|shared| (*shared).clone())
    }

    /// The single value of a one-element tensor.
    pub fn item(&self) -> f64 {
        assert_eq!(
            self.data.len(),
            1,
            "item() on tensor of shape {:?}",
            self.shape
        );
        self.data[0]
    }

    pub fn get(&self, index: &[usize]) -> f64 {
        self.data[flat_index(&self.shape, index)]
    }

    pub fn reshape(mut self, shape: impl Into<Vec<usize>>) -> Result<Self> {
        let shape = shape.into();
        if shape.iter().product::<usize>() != self.data.len() {
            return Err(Error::shape("reshape", &self.shape, &shape));
        }
        self.shape = shape;
        Ok(self)
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self::from_parts(
            self.shape.clone(),
            self.data.iter().map(|&v| f(v)).collect(),
        )
    }

    /// In-place `self += other` for identical shapes.
    pub(crate) fn add_assign(&mut self, other: &Tensor) {
        debug_assert_eq!(self.shape, other.shape);
        for (a, b) in Arc::make_mut(&mut self.data)
            .iter_mut()
            .zip(other.data.iter())
        {
            *a += b;
        }
    }

    pub fn max_abs_diff(&self, other: &Tensor) -> f64 {
        self.data
            .iter()
            .zip(other.data.iter())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

pub(crate) fn flat_index(shape: &[usize], index: &[usize]) -> usize {
    assert_eq!(shape.len(), index.len(), "index rank mismatch");
    let mut flat = 0;
    for (&extent, &i) in shape.iter().zip(index) {
        assert!(i < extent, "index {index:?} out of bounds for {shape:?}");
        flat = flat * extent + i;
    }
    flat
}

pub(crate) fn strides(shape: &[usize]) -> Vec<usize> {
    let mut strides = vec![1; shape.len()];
    for i in (0..shape.len().saturating_sub(1)).rev() {
        strides[i] = strides[i + 1] * shape[i + 1];
    }
    strides
}

/// Numpy-style broadcast of two shapes.
pub(crate) fn broadcast_shapes(op: &'static str, a: &[usize], b: &[usize]) -> Result<Vec<usize>> {
    let rank = a.len().max(b.len());
    let mut out = vec![0; rank];
    for i in 0..rank {
        let da = if i + a.len() >= rank {
            a[i + a.len() - rank]
        } else {
            1
        };
        let db = if i + b.len() >= rank {
            b[i + b.len() - rank]
        } else {
            1
        };
        out[i] = match (da, db) {
            (x, y) if x == y => x,
            (1, y) => y,
            (x, 1) => x,
            _ => return Err(Error::shape(op, a, b)),
        };
    }
    Ok(out)
}

/// Maps flat indices of a broadcast output shape onto flat indices of one input.
pub(crate) enum BroadcastMap {
    Identity,
    /// Input is a trailing block repeated over the output.
    Repeat(usize),
    General {
        out_shape: Vec<usize>,
        in_strides: Vec<usize>,
    },
}

impl BroadcastMap {
    pub(crate) fn new(input: &[usize], out: &[usize]) -> Self {
        if input == out {
            return BroadcastMap::Identity;
        }
        let in_len: usize = input.iter().product();
        let offset = out.len() - input.len();
        let trailing_match = input.iter().zip(&out[offset..]).all(|(a, b)| a == b);
        if trailing_match {
            return BroadcastMap::Repeat(in_len);
        }
        let own = strides(input);
        let in_strides = (0..out.len())
            .map(|i| {
                if i < offset || input[i - offset] == 1 {
                    0
                } else {
                    own[i - offset]
                }
            })
            .collect();
        BroadcastMap::General {
            out_shape: out.to_vec(),
            in_strides,
        }
    }

    /// Flat input index for every output position, in output order.
    pub(crate) fn indices(&self, out_len: usize) -> Vec<usize> {
        match self {
            BroadcastMap::Identity => (0..out_len).collect(),
            BroadcastMap::Repeat(n) => (0..out_len).map(|i| i % n).collect(),
            BroadcastMap::General {
                out_shape,
                in_strides,
            } => {
                let mut result = Vec::with_capacity(out_len);
                let mut counter = vec![0usize; out_shape.len()];
                let mut flat = 0usize;
                for _ in 0..out_len {
                    result.push(flat);
                    for d in (0..out_shape.len()).rev() {
                        counter[d] += 1;
                        flat += in_strides[d];
                        if counter[d] < out_shape[d] {
                            break;
                        }
                        flat -= in_strides[d] * counter[d];
                        counter[d] = 0;
                    }
                }
                result
            }
        }
    }
}

/// Input offset of every innermost output row when `input` is broadcast to `out`, and the
/// input step along a row (0 when the last axis is broadcast).
pub(crate) fn broadcast_rows(input: &[usize], out: &[usize]) -> (Vec<usize>, usize) {
    let rank = out.len();
    if rank == 0 {
        return (vec![0], 0);
    }
    let offset = rank - input.len();
    let own = strides(input);
    let in_strides: Vec<usize> = (0..rank)
        .map(|i| {
            if i < offset || input[i - offset] == 1 {
                0
            } else {
                own[i - offset]
            }
        })
        .collect();
    let rows: usize = out[..rank - 1].iter().product();
    let mut result = Vec::with_capacity(rows);
    let mut counter = vec![0usize; rank - 1];
    let mut flat = 0usize;
    for _ in 0..rows {
        result.push(flat);
        for d in (0..rank - 1).rev() {
            counter[d] += 1;
            flat += in_strides[d];
            if counter[d] < out[d] {
                break;
            }
            flat -= in_strides[d] * counter[d];
            counter[d] = 0;
        }
    }
    (result, in_strides[rank - 1])
}

/// Sums a gradient of the broadcast output shape back down to `input` shape.
pub(crate) fn reduce_to_shape(grad: &Tensor, input: &[usize]) -> Tensor {
    let map = BroadcastMap::new(input, grad.shape());
    match map {
        BroadcastMap::Identity => grad.clone(),
        BroadcastMap::Repeat(n) => {
            let mut out = vec![0.0; n];
            for chunk in grad.data().chunks(n) {
                for (o, g) in out.iter_mut().zip(chunk) {
                    *o += g;
                }
            }
            Tensor::from_parts(input.to_vec(), out)
        }
        BroadcastMap::General { .. } => {
            let mut out = vec![0.0; input.iter().product()];
            let run = grad.shape().last().copied().unwrap_or(1);
            let (rows, step) = broadcast_rows(input, grad.shape());
            for (row, &base) in grad.data().chunks(run).zip(&rows) {
                if step == 0 {
                    out[base] += row.iter().sum::<f64>();
                } else {
                    for (o, g) in out[base..base + run].iter_mut().zip(row) {
                        *o += g;
                    }
                }
            }
            Tensor::from_parts(input.to_vec(), out)
        }
    }
}

/// Splits a shape around `axis` into (outer, axis extent, inner) block sizes.
pub(crate) fn split_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}
