//! Python bindings for the `deltacomp` core crate.

use std::collections::BTreeMap;
use std::path::PathBuf;

use dcore::format::{ddq, dtc};
use dcore::{DropoutPlan, GroupChoice};
use pyo3::create_exception;
use pyo3::exceptions::{PyException, PyValueError};
use pyo3::prelude::*;

create_exception!(deltacomp, DeltaError, PyException);

fn err(e: dcore::Error) -> PyErr {
    match e {
        dcore::Error::Parameter(_) | dcore::Error::EmptyCandidates(_) => {
            PyValueError::new_err(e.to_string())
        }
        _ => DeltaError::new_err(e.to_string()),
    }
}

/// Row-major `f32` matrix.
#[pyclass(
    name = "DenseMatrix",
    module = "deltacomp",
    frozen,
    skip_from_py_object
)]
#[derive(Clone)]
struct Dense(dcore::DenseMatrix);

#[pymethods]
impl Dense {
    #[new]
    fn new(rows: Vec<Vec<f32>>) -> PyResult<Self> {
        dcore::DenseMatrix::from_rows(&rows).map(Dense).map_err(err)
    }

    #[staticmethod]
    fn zeros(rows: usize, cols: usize) -> PyResult<Self> {
        dcore::DenseMatrix::zeros(rows, cols)
            .map(Dense)
            .map_err(err)
    }

    #[getter]
    fn shape(&self) -> (usize, usize) {
        self.0.shape()
    }

    fn tolist(&self) -> Vec<Vec<f32>> {
        (0..self.0.rows()).map(|r| self.0.row(r).to_vec()).collect()
    }

    fn to_csr(&self) -> Sparse {
        Sparse(dcore::to_csr(&self.0))
    }

    fn frobenius_sq(&self) -> f64 {
        self.0.frobenius_sq()
    }

    fn __repr__(&self) -> String {
        format!("DenseMatrix(shape={:?})", self.0.shape())
    }
}

/// Compressed sparse row matrix.
#[pyclass(name = "CsrMatrix", module = "deltacomp", frozen, skip_from_py_object)]
#[derive(Clone)]
struct Sparse(dcore::CsrMatrix);

#[pymethods]
impl Sparse {
    #[new]
    fn new(
        rows: usize,
        cols: usize,
        row_offsets: Vec<usize>,
        col_indices: Vec<usize>,
        values: Vec<f32>,
    ) -> PyResult<Self> {
        dcore::CsrMatrix::new(rows, cols, row_offsets, col_indices, values)
            .map(Sparse)
            .map_err(err)
    }

    #[getter]
    fn shape(&self) -> (usize, usize) {
        self.0.shape()
    }

    #[getter]
    fn nnz(&self) -> usize {
        self.0.nnz()
    }

    #[getter]
    fn row_offsets(&self) -> Vec<usize> {
        self.0.row_offsets().to_vec()
    }

    #[getter]
    fn col_indices(&self) -> Vec<usize> {
        self.0.col_indices().to_vec()
    }

    #[getter]
    fn values(&self) -> Vec<f32> {
        self.0.values().to_vec()
    }

    fn densify(&self) -> Dense {
        Dense(dcore::densify(&self.0))
    }

    fn __repr__(&self) -> String {
        format!(
            "CsrMatrix(shape={:?}, nnz={})",
            self.0.shape(),
            self.0.nnz()
        )
    }
}

/// Quantized sparse delta split into value-range parts.
#[pyclass(name = "QuantizedDelta", module = "deltacomp", frozen)]
struct Quantized(dcore::QuantizedDelta);

#[pymethods]
impl Quantized {
    #[getter]
    fn shape(&self) -> (usize, usize) {
        (self.0.rows(), self.0.cols())
    }

    #[getter]
    fn nnz(&self) -> usize {
        self.0.nnz()
    }

    #[getter]
    fn bits(&self) -> u8 {
        self.0.params().quant.k
    }

    #[getter]
    fn parts(&self) -> usize {
        self.0.parts().len()
    }

    #[getter]
    fn part_bits(&self) -> u8 {
        self.0.params().part_width()
    }

    #[getter]
    fn scale(&self) -> f32 {
        self.0.params().quant.scale
    }

    #[getter]
    fn zero_point(&self) -> i32 {
        self.0.params().quant.zero_point
    }

    fn dequantize(&self) -> PyResult<Sparse> {
        dcore::dequantize(&self.0).map(Sparse).map_err(err)
    }

    fn __repr__(&self) -> String {
        format!(
            "QuantizedDelta(shape=({}, {}), nnz={}, parts={})",
            self.0.rows(),
            self.0.cols(),
            self.0.nnz(),
            self.0.parts().len()
        )
    }
}

#[pyfunction]
fn matmul_dense(x: PyRef<'_, Dense>, w: PyRef<'_, Dense>) -> PyResult<Dense> {
    dcore::matmul_dense(&x.0, &w.0).map(Dense).map_err(err)
}

#[pyfunction]
fn matmul_sparse(x: PyRef<'_, Dense>, s: PyRef<'_, Sparse>) -> PyResult<Dense> {
    dcore::matmul_sparse(&x.0, &s.0).map(Dense).map_err(err)
}

/// Group-wise dropout; `group_size=None` uses whole rows.
#[pyfunction]
#[pyo3(signature = (delta, alpha, seed=0, group_size=None, layer=""))]
fn apply_dropout(
    delta: PyRef<'_, Dense>,
    alpha: f64,
    seed: u64,
    group_size: Option<usize>,
    layer: &str,
) -> PyResult<Sparse> {
    let plan = match group_size {
        None => DropoutPlan::row_wise(alpha, seed),
        Some(g) => DropoutPlan::group_wise(alpha, g, seed),
    }
    .map_err(err)?;
    Ok(Sparse(dcore::apply_dropout(&delta.0, &plan, layer)))
}

#[pyfunction]
#[pyo3(signature = (sparse, k, m=1))]
fn quantize(sparse: PyRef<'_, Sparse>, k: u8, m: u32) -> PyResult<Quantized> {
    let (codes, scale) = dcore::quantize(&sparse.0, k).map_err(err)?;
    dcore::decompose(&codes, scale, m)
        .map(Quantized)
        .map_err(err)
}

#[pyfunction]
#[pyo3(signature = (alpha, k, m=1))]
fn nominal_ratio(alpha: f64, k: u32, m: u32) -> PyResult<f64> {
    dcore::nominal_ratio(alpha, k, m).map_err(err)
}

#[pyfunction]
fn candidate_group_sizes(alpha: f64, h_in: usize) -> PyResult<Vec<usize>> {
    dcore::candidate_group_sizes(alpha, h_in).map_err(err)
}

#[pyfunction]
#[pyo3(signature = (x, w, w_hat, base=None))]
fn layer_loss(
    x: PyRef<'_, Dense>,
    w: PyRef<'_, Dense>,
    w_hat: PyRef<'_, Sparse>,
    base: Option<PyRef<'_, Dense>>,
) -> PyResult<f64> {
    dcore::layer_loss(&x.0, &w.0, &w_hat.0, base.as_ref().map(|b| &b.0)).map_err(err)
}

#[pyfunction]
fn magnitude_prune(delta: PyRef<'_, Dense>, alpha: f64) -> PyResult<Sparse> {
    dcore::magnitude_prune(&delta.0, alpha)
        .map(Sparse)
        .map_err(err)
}

#[pyfunction]
#[pyo3(signature = (delta, alpha, seed=0, layer=""))]
fn global_dropout(delta: PyRef<'_, Dense>, alpha: f64, seed: u64, layer: &str) -> PyResult<Sparse> {
    dcore::global_dropout(&delta.0, alpha, seed, layer)
        .map(Sparse)
        .map_err(err)
}

/// Per-(token, output) variance and range of the products `x[p, j]·w[i, j]`.
#[pyfunction]
fn intermediate_stats(x: PyRef<'_, Dense>, w: PyRef<'_, Dense>) -> PyResult<(Dense, Dense)> {
    let s = dcore::intermediate_stats(&x.0, &w.0).map_err(err)?;
    Ok((Dense(s.variance), Dense(s.range)))
}

/// Tensors of a `.dtc` file by name.
#[pyfunction]
fn read_checkpoint(path: PathBuf) -> PyResult<BTreeMap<String, Dense>> {
    let ckpt = dtc::read(&path).map_err(err)?;
    Ok(ckpt
        .tensors
        .into_iter()
        .map(|(k, v)| (k, Dense(v)))
        .collect())
}

#[pyfunction]
fn split_files(base: PathBuf, finetuned: PathBuf, out: PathBuf) -> PyResult<()> {
    let delta = dcore::split(
        &dtc::read(&base).map_err(err)?,
        &dtc::read(&finetuned).map_err(err)?,
    )
    .map_err(err)?;
    dtc::write(&out, &delta.to_checkpoint()).map_err(err)
}

#[pyfunction]
fn merge_files(base: PathBuf, delta: PathBuf, out: PathBuf) -> PyResult<()> {
    let delta = dcore::DeltaCheckpoint::from_checkpoint(dtc::read(&delta).map_err(err)?);
    let merged = dcore::merge(&dtc::read(&base).map_err(err)?, &delta).map_err(err)?;
    dtc::write(&out, &merged).map_err(err)
}

/// Compresses a delta checkpoint to a `.ddq` artifact and returns the
/// report as JSON. `group_size` is a column count or `None` for whole rows.
#[pyfunction]
#[pyo3(signature = (delta, out, alpha, k=4, m=1, seed=0, group_size=None))]
fn compress_file(
    delta: PathBuf,
    out: PathBuf,
    alpha: f64,
    k: u8,
    m: u32,
    seed: u64,
    group_size: Option<usize>,
) -> PyResult<String> {
    let opts = dcore::CompressOptions {
        alpha,
        group: group_size.map_or(GroupChoice::FullRow, GroupChoice::Columns),
        k,
        m,
        seed,
        ..Default::default()
    };
    let delta = dcore::DeltaCheckpoint::from_checkpoint(dtc::read(&delta).map_err(err)?);
    let (artifact, _) = dcore::compress(&delta, None, None, &opts).map_err(err)?;
    ddq::write(&out, &artifact).map_err(err)?;
    dcore::build_report(&artifact, Some(&delta), None)
        .and_then(|r| r.to_json())
        .map_err(err)
}

#[pyfunction]
fn decompress_file(artifact: PathBuf, out: PathBuf) -> PyResult<()> {
    let delta = ddq::read(&artifact)
        .and_then(|a| a.reconstruct())
        .map_err(err)?;
    dtc::write(&out, &delta.to_checkpoint()).map_err(err)
}

#[pymodule]
fn deltacomp(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("DeltaError", m.py().get_type::<DeltaError>())?;
    m.add_class::<Dense>()?;
    m.add_class::<Sparse>()?;
    m.add_class::<Quantized>()?;
    m.add_function(wrap_pyfunction!(matmul_dense, m)?)?;
    m.add_function(wrap_pyfunction!(matmul_sparse, m)?)?;
    m.add_function(wrap_pyfunction!(apply_dropout, m)?)?;
    m.add_function(wrap_pyfunction!(quantize, m)?)?;
    m.add_function(wrap_pyfunction!(nominal_ratio, m)?)?;
    m.add_function(wrap_pyfunction!(candidate_group_sizes, m)?)?;
    m.add_function(wrap_pyfunction!(layer_loss, m)?)?;
    m.add_function(wrap_pyfunction!(magnitude_prune, m)?)?;
    m.add_function(wrap_pyfunction!(global_dropout, m)?)?;
    m.add_function(wrap_pyfunction!(intermediate_stats, m)?)?;
    m.add_function(wrap_pyfunction!(read_checkpoint, m)?)?;
    m.add_function(wrap_pyfunction!(split_files, m)?)?;
    m.add_function(wrap_pyfunction!(merge_files, m)?)?;
    m.add_function(wrap_pyfunction!(compress_file, m)?)?;
    m.add_function(wrap_pyfunction!(decompress_file, m)?)?;
    Ok(())
}
