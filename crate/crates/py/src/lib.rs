//! Python bindings. Objects cross the boundary as JSON text.

use artigen_core::artcore::{build_depth1, collapse_fixed_joints, validate_object, Aabb, ArticulatedObject};
use artigen_core::error::Error;
use artigen_core::interop::{self, FloatFormat, VertexPrediction};
use artigen_core::kinematics::{pose_object, state_at_fraction, JointState};
use artigen_core::metrics::{self, EvalOptions};
use nalgebra::Point3;
use pyo3::exceptions::{PyOSError, PyValueError};
use pyo3::prelude::*;

fn py_err(e: Error) -> PyErr {
    match e {
        Error::Io(e) => PyOSError::new_err(e.to_string()),
        e => PyValueError::new_err(e.to_string()),
    }
}

fn parse(text: &str) -> PyResult<ArticulatedObject> {
    interop::from_json_str(text).map_err(py_err)
}

fn dump(obj: &ArticulatedObject, canonical: bool) -> PyResult<String> {
    let fmt = if canonical { FloatFormat::Canonical } else { FloatFormat::Exact };
    interop::to_json_string(obj, fmt).map_err(py_err)
}

fn points(v: Vec<[f64; 3]>) -> Vec<Point3<f64>> {
    v.into_iter().map(Point3::from).collect()
}

fn aabb(min: [f64; 3], max: [f64; 3]) -> Aabb {
    Aabb::new(min.into(), max.into())
}

/// Returns `(valid, violation messages)`.
#[pyfunction]
fn validate(object_json: &str) -> PyResult<(bool, Vec<String>)> {
    let report = validate_object(&parse(object_json)?);
    Ok((report.is_valid(), report.violations.iter().map(|v| v.to_string()).collect()))
}

#[pyfunction]
#[pyo3(signature = (object_json, canonical = false))]
fn simplify(object_json: &str, canonical: bool) -> PyResult<String> {
    let obj = collapse_fixed_joints(&parse(object_json)?).and_then(|o| build_depth1(&o)).map_err(py_err)?;
    dump(&obj, canonical)
}

/// Poses by explicit joint values, or opens every joint to `fraction` of its range.
#[pyfunction]
#[pyo3(signature = (object_json, state = None, fraction = None))]
fn pose(object_json: &str, state: Option<Vec<f64>>, fraction: Option<f64>) -> PyResult<String> {
    let obj = parse(object_json)?;
    let state = match (state, fraction) {
        (Some(values), None) => JointState { values },
        (None, Some(f)) if (0.0..=1.0).contains(&f) => state_at_fraction(&obj, f),
        (None, Some(f)) => return Err(PyValueError::new_err(format!("fraction {f} outside [0, 1]"))),
        _ => return Err(PyValueError::new_err("pass exactly one of state or fraction")),
    };
    dump(&pose_object(&obj, &state).map_err(py_err)?, false)
}

/// Metric report as JSON text.
#[pyfunction]
#[pyo3(signature = (pred_json, gt_json, fractions = None, points = 4096, aor_resolution = 64, seed = 0, per_part_chamfer = false))]
fn evaluate(
    pred_json: &str,
    gt_json: &str,
    fractions: Option<Vec<f64>>,
    points: usize,
    aor_resolution: u32,
    seed: u64,
    per_part_chamfer: bool,
) -> PyResult<String> {
    let defaults = EvalOptions::default();
    let opts = EvalOptions { fractions: fractions.unwrap_or(defaults.fractions), points, aor_resolution, seed, per_part_chamfer };
    let report = metrics::evaluate(&parse(pred_json)?, &parse(gt_json)?, &opts).map_err(py_err)?;
    serde_json::to_string(&report).map_err(|e| PyValueError::new_err(e.to_string()))
}

#[pyfunction]
fn giou_distance(a_min: [f64; 3], a_max: [f64; 3], b_min: [f64; 3], b_max: [f64; 3]) -> f64 {
    metrics::giou_distance(&aabb(a_min, a_max), &aabb(b_min, b_max))
}

#[pyfunction]
fn center_distance(a_min: [f64; 3], a_max: [f64; 3], b_min: [f64; 3], b_max: [f64; 3]) -> f64 {
    metrics::center_distance(&aabb(a_min, a_max), &aabb(b_min, b_max))
}

/// Mean squared nearest-neighbour distance, summed over both directions.
#[pyfunction]
fn chamfer_distance(a: Vec<[f64; 3]>, b: Vec<[f64; 3]>) -> PyResult<f64> {
    metrics::chamfer_distance(&points(a), &points(b)).map_err(py_err)
}

#[pyfunction]
#[pyo3(signature = (object_json, name = "object"))]
fn export_urdf(object_json: &str, name: &str) -> PyResult<String> {
    interop::export_urdf(&parse(object_json)?, name).map_err(py_err)
}

/// Per-vertex predictions (a JSON array) to a part-level object.
#[pyfunction]
fn extract_physx(predictions_json: &str) -> PyResult<String> {
    let preds: Vec<VertexPrediction> = serde_json::from_str(predictions_json).map_err(|e| PyValueError::new_err(e.to_string()))?;
    dump(&interop::extract_physx_parts(&preds).map_err(py_err)?, false)
}

#[pyfunction]
fn normalize_json(text: &str) -> PyResult<String> {
    interop::normalize_json(text).map_err(py_err)
}

#[pymodule]
fn artigen(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(validate, m)?)?;
    m.add_function(wrap_pyfunction!(simplify, m)?)?;
    m.add_function(wrap_pyfunction!(pose, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate, m)?)?;
    m.add_function(wrap_pyfunction!(giou_distance, m)?)?;
    m.add_function(wrap_pyfunction!(center_distance, m)?)?;
    m.add_function(wrap_pyfunction!(chamfer_distance, m)?)?;
    m.add_function(wrap_pyfunction!(export_urdf, m)?)?;
    m.add_function(wrap_pyfunction!(extract_physx, m)?)?;
    m.add_function(wrap_pyfunction!(normalize_json, m)?)?;
    m.add("FORMAT_VERSION", interop::FORMAT_VERSION)?;
    Ok(())
}
