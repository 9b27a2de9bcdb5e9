//! Python bindings. Configs and reports cross the boundary as JSON strings.

use std::path::PathBuf;

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;

use svefield::eval::{evaluate as eval_split, load_for_dataset, EvalOptions};
use svefield::scene_synth::{generate_dataset, make_scene, Dataset, Split};
use svefield::trainer::{train as train_model, TrainConfig, CHECKPOINT_DIR};
use svefield::{ExpressionVector, SceneConfig};

fn runtime(e: svefield::Error) -> PyErr {
    PyRuntimeError::new_err(e.to_string())
}

fn parse<T: serde::de::DeserializeOwned + Default>(json: Option<&str>) -> PyResult<T> {
    match json {
        Some(s) => serde_json::from_str(s).map_err(|e| PyValueError::new_err(format!("bad config: {e}"))),
        None => Ok(T::default()),
    }
}

fn checkpoint_dir(model: &str) -> PathBuf {
    let nested = PathBuf::from(model).join(CHECKPOINT_DIR);
    if nested.is_dir() {
        nested
    } else {
        PathBuf::from(model)
    }
}

/// Runs the command-line interface with `argv` (without the program name); returns the exit code.
#[pyfunction]
fn cli(py: Python<'_>, argv: Vec<String>) -> i32 {
    py.detach(|| svefield::cli::run(std::iter::once("svefield".to_string()).chain(argv)))
}

/// Writes a synthetic dataset and returns its manifest as JSON.
#[pyfunction]
#[pyo3(signature = (out_dir, config_json=None))]
fn synth_data(py: Python<'_>, out_dir: &str, config_json: Option<&str>) -> PyResult<String> {
    let cfg: svefield::cli::SynthConfig = parse(config_json)?;
    let manifest = py.detach(|| {
        let scene = make_scene(cfg.scene_seed, &cfg.scene)?;
        generate_dataset(&scene, &cfg.dataset, &PathBuf::from(out_dir))
    });
    Ok(serde_json::to_string(&manifest.map_err(runtime)?).expect("manifests serialize"))
}

/// Trains on a dataset directory; returns the final loss breakdown as JSON (`null` if no step ran).
#[pyfunction]
#[pyo3(signature = (data_dir, out_dir, config_json=None))]
fn train(py: Python<'_>, data_dir: &str, out_dir: &str, config_json: Option<&str>) -> PyResult<String> {
    let cfg: TrainConfig = parse(config_json)?;
    let summary = py
        .detach(|| {
            let ds = Dataset::load(&PathBuf::from(data_dir))?;
            train_model(&ds, &cfg, &PathBuf::from(out_dir), false)
        })
        .map_err(runtime)?;
    Ok(serde_json::to_string(&summary.final_loss).expect("losses serialize"))
}

/// Scores a trained model on `split` ("train" or "heldout"); returns the metrics report as JSON.
#[pyfunction]
#[pyo3(signature = (data_dir, model_dir, split="heldout", masked=false))]
fn evaluate(py: Python<'_>, data_dir: &str, model_dir: &str, split: &str, masked: bool) -> PyResult<String> {
    let split = match split {
        "train" => Split::Train,
        "heldout" => Split::Heldout,
        other => return Err(PyValueError::new_err(format!("unknown split {other:?}"))),
    };
    let report = py
        .detach(|| {
            let ds = Dataset::load(&PathBuf::from(data_dir))?;
            let params = load_for_dataset(&checkpoint_dir(model_dir), &ds)?;
            eval_split(&params, &ds, split, &EvalOptions { masked, ..Default::default() })
        })
        .map_err(runtime)?;
    Ok(serde_json::to_string(&report).expect("reports serialize"))
}

/// Exact signed distances of a synthetic scene at `points` under expression `eps`.
#[pyfunction]
#[pyo3(signature = (seed, points, eps, config_json=None))]
fn analytic_sdf(seed: u64, points: Vec<[f64; 3]>, eps: Vec<f64>, config_json: Option<&str>) -> PyResult<Vec<f64>> {
    let cfg: SceneConfig = parse(config_json)?;
    let scene = make_scene(seed, &cfg).map_err(runtime)?;
    let eps = ExpressionVector::new(eps);
    scene.check_expression(&eps).map_err(|e| PyValueError::new_err(e.to_string()))?;
    Ok(points.iter().map(|&p| scene.analytic_sdf(p, &eps)).collect())
}

/// Conditioning codes of a trained model at `points` under expression `eps`.
#[pyfunction]
fn conditioning_codes(model_dir: &str, points: Vec<[f64; 3]>, eps: Vec<f64>) -> PyResult<Vec<Vec<f64>>> {
    let ckpt = svefield::fields::Checkpoint::load(&checkpoint_dir(model_dir)).map_err(runtime)?;
    let params = ckpt.params().map_err(runtime)?;
    let eps = ExpressionVector::new(eps);
    points
        .iter()
        .map(|&p| params.generate_sve(&eps, p).map(|c| c.0).map_err(|e| PyValueError::new_err(e.to_string())))
        .collect()
}

#[pymodule]
fn svefield_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    m.add_function(wrap_pyfunction!(cli, m)?)?;
    m.add_function(wrap_pyfunction!(synth_data, m)?)?;
    m.add_function(wrap_pyfunction!(train, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate, m)?)?;
    m.add_function(wrap_pyfunction!(analytic_sdf, m)?)?;
    m.add_function(wrap_pyfunction!(conditioning_codes, m)?)?;
    Ok(())
}
