use alloc::vec;
use alloc::vec::Vec;

/// Dense row-major f64 tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Self {
        assert_eq!(
            shape.iter().product::<usize>(),
            data.len(),
            "tensor data does not match shape {shape:?}"
        );
        Self { shape, data }
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Self {
            shape,
            data: vec![0.0; n],
        }
    }

    pub fn scalar(v: f64) -> Self {
        Self {
            shape: vec![1],
            data: vec![v],
        }
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    /// Stacks equally sized samples into a `[n, channels, length]` batch.
    pub fn stack(samples: &[&[f64]], channels: usize, length: usize) -> Self {
        let mut data = Vec::with_capacity(samples.len() * channels * length);
        for s in samples {
            assert_eq!(s.len(), channels * length, "sample has wrong size");
            data.extend_from_slice(s);
        }
        Self {
            shape: vec![samples.len(), channels, length],
            data,
        }
    }

    /// Row `i` of the leading axis.
    pub fn row(&self, i: usize) -> &[f64] {
        let stride: usize = self.shape[1..].iter().product();
        &self.data[i * stride..(i + 1) * stride]
    }
}
