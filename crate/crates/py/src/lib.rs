use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use rckf_core::experiment::{ConfigStore, Experiment, Override};
use rckf_core::noise::NoiseFamily;
use rckf_core::{metrics, Error};

fn to_py(e: Error) -> PyErr {
    let msg = format!("[{}] {e}", e.category());
    match e.category() {
        "io" => PyIOError::new_err(msg),
        _ => PyValueError::new_err(msg),
    }
}

/// Unit cubature points `±√n·eᵢ` and their common weight.
#[pyfunction]
fn cubature_points(n: usize) -> (Vec<Vec<f64>>, f64) {
    let (pts, w) = rckf_core::cubature_points(n);
    (pts.iter().map(|p| p.iter().copied().collect()).collect(), w)
}

#[pyfunction]
fn epsilon1(est: Vec<f64>, truth: Vec<f64>, meas: Vec<f64>) -> PyResult<f64> {
    metrics::epsilon1(&est, &truth, &meas).map_err(to_py)
}

#[pyfunction]
fn epsilon2(est: Vec<f64>, truth: Vec<f64>) -> PyResult<f64> {
    metrics::epsilon2(&est, &truth).map_err(to_py)
}

#[pyfunction]
fn improvement_percent(plain: f64, robust: f64) -> f64 {
    metrics::improvement_percent(plain, robust)
}

/// Runs both filters on one seed of a bundled or file-based experiment.
///
/// Returns a dict with `t`, `truth`, `measured`, `ckf`, `rckf` (state
/// means, one row per sample) and `metrics` keyed `"<filter>.<var>.<index>"`.
#[pyfunction]
#[pyo3(signature = (config="default", seed=1, family=None, overrides=Vec::new(), configs_dir=None))]
fn run_seed<'py>(
    py: Python<'py>,
    config: &str,
    seed: u64,
    family: Option<&str>,
    overrides: Vec<String>,
    configs_dir: Option<String>,
) -> PyResult<Bound<'py, PyDict>> {
    let store = configs_dir.map(ConfigStore::with_root).unwrap_or_else(ConfigStore::bundled);
    let ov = overrides.iter().map(|s| Override::parse(s)).collect::<Result<Vec<_>, _>>().map_err(to_py)?;
    let exp = Experiment::load(&store, config, &ov).map_err(to_py)?;
    let profile = match family {
        None => exp.profile.clone(),
        Some(name) => {
            let fam = NoiseFamily::ALL
                .into_iter()
                .find(|f| f.name() == name)
                .ok_or_else(|| PyValueError::new_err(format!("unknown noise family `{name}`")))?;
            exp.family_profile(fam).map_err(to_py)?
        }
    };
    let run = py.detach(|| exp.run_seed(&profile, seed)).map_err(to_py)?;

    let out = PyDict::new(py);
    let ds = &run.dataset;
    out.set_item("t", ds.times.clone())?;
    out.set_item("truth", ds.truth.iter().map(|x| x.to_array().to_vec()).collect::<Vec<_>>())?;
    out.set_item("measured", ds.measurements.iter().map(|z| z.to_array().to_vec()).collect::<Vec<_>>())?;
    for (name, beliefs) in [("ckf", &run.runs.ckf), ("rckf", &run.runs.rckf)] {
        if let Some(b) = beliefs {
            out.set_item(name, b.iter().map(|b| b.mean.iter().copied().collect::<Vec<_>>()).collect::<Vec<_>>())?;
        }
    }
    let m = PyDict::new(py);
    for r in &run.reports {
        for var in metrics::Variable::ALL {
            let v = r.get(var);
            m.set_item(format!("{}.{}.epsilon1", r.filter, var.name()), v.epsilon1)?;
            m.set_item(format!("{}.{}.epsilon2", r.filter, var.name()), v.epsilon2)?;
        }
    }
    out.set_item("metrics", m)?;
    Ok(out)
}

#[pymodule]
fn rckf(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(cubature_points, m)?)?;
    m.add_function(wrap_pyfunction!(epsilon1, m)?)?;
    m.add_function(wrap_pyfunction!(epsilon2, m)?)?;
    m.add_function(wrap_pyfunction!(improvement_percent, m)?)?;
    m.add_function(wrap_pyfunction!(run_seed, m)?)?;
    Ok(())
}
