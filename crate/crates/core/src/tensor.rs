//! Conversions between fixed-rank ndarray values and the tape's dynamic
//! tensors.

use autograd::Tensor;
use ndarray::{Array1, Array2, Array3, Dimension};

pub fn to_tensor<D: Dimension>(a: &ndarray::Array<f64, D>) -> Tensor {
    a.clone().into_dyn()
}

pub fn to_array1(t: &Tensor) -> Array1<f64> {
    t.clone().into_dimensionality().expect("rank-1 tensor")
}

pub fn to_array2(t: &Tensor) -> Array2<f64> {
    t.clone().into_dimensionality().expect("rank-2 tensor")
}

pub fn to_array3(t: &Tensor) -> Array3<f64> {
    t.clone().into_dimensionality().expect("rank-3 tensor")
}
