//! Python bindings for the sievelab core library.
//!
//! Rust structs that have no natural Python counterpart (reports, configs,
//! case records) cross the boundary as plain dicts and lists.

use pyo3::create_exception;
use pyo3::exceptions::PyException;
use pyo3::prelude::*;
use pyo3::types::PyModule;
use serde::de::DeserializeOwned;
use serde::Serialize;

use sievelab::advi::{fit_model, AdviConfig, PosteriorApprox};
use sievelab::analysis::{self, AnalysisReport};
use sievelab::calibrate::{self, CalibrationConfig};
use sievelab::data::{self, BreastCase, CaseLabel, LesionTag, PredictionRecord, PredictionSet, RoiAnnotation, RoiBox};
use sievelab::filter::{self, Cutoff, FilterSpec, GrayImage, RoiScheme};
use sievelab::model::{build_model, Grouping, ModelSpec, Observation, Variant};
use sievelab::stats;
use sievelab::synth::{self, RecoveryConfig};

create_exception!(sievelab, SievelabError, PyException);

fn err(e: impl std::fmt::Display) -> PyErr {
    SievelabError::new_err(e.to_string())
}

fn to_py<T: Serialize>(py: Python<'_>, value: &T) -> PyResult<Py<PyAny>> {
    let text = serde_json::to_string(value).map_err(err)?;
    Ok(PyModule::import(py, "json")?.call_method1("loads", (text,))?.unbind())
}

fn from_py<T: DeserializeOwned>(obj: &Bound<'_, PyAny>) -> PyResult<T> {
    let json = PyModule::import(obj.py(), "json")?;
    let text: String = json.call_method1("dumps", (obj,))?.extract()?;
    serde_json::from_str(&text).map_err(err)
}

fn parse_enum<T: DeserializeOwned>(what: &str, s: &str) -> PyResult<T> {
    serde_json::from_value(serde_json::Value::String(s.to_string())).map_err(|_| err(format!("unknown {what} {s:?}")))
}

fn cutoff_spec(cutoff_cycles_per_mm: Option<f64>) -> FilterSpec {
    match cutoff_cycles_per_mm {
        None => FilterSpec::unfiltered(),
        Some(c) => FilterSpec {
            severity_index: 1,
            cutoff_cycles_per_mm: Cutoff::CyclesPerMm(c),
        },
    }
}

fn ladder_values(ladder: &[FilterSpec]) -> Vec<Option<f64>> {
    ladder
        .iter()
        .map(|s| match s.cutoff_cycles_per_mm {
            Cutoff::Unfiltered => None,
            Cutoff::CyclesPerMm(c) => Some(c),
        })
        .collect()
}

/// Grayscale image with physical pixel size.
#[pyclass(name = "Image", module = "sievelab", frozen, skip_from_py_object)]
#[derive(Clone)]
struct PyImage {
    inner: GrayImage,
}

#[pymethods]
impl PyImage {
    #[new]
    #[pyo3(signature = (rows, mm_per_pixel))]
    fn new(rows: Vec<Vec<f64>>, mm_per_pixel: f64) -> PyResult<Self> {
        let height = rows.len();
        let width = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != width) {
            return Err(err("rows have different lengths"));
        }
        let inner = GrayImage::new(height, width, mm_per_pixel, rows.concat()).map_err(err)?;
        Ok(Self { inner })
    }

    #[staticmethod]
    fn read(path: &str, mm_per_pixel: f64) -> PyResult<Self> {
        let inner = filter::read_gray_image(path.as_ref(), mm_per_pixel).map_err(err)?;
        Ok(Self { inner })
    }

    fn write_png(&self, path: &str) -> PyResult<()> {
        filter::write_png16(path.as_ref(), &self.inner).map_err(err)
    }

    #[getter]
    fn height(&self) -> usize {
        self.inner.height
    }

    #[getter]
    fn width(&self) -> usize {
        self.inner.width
    }

    #[getter]
    fn mm_per_pixel(&self) -> f64 {
        self.inner.mm_per_pixel
    }

    fn rows(&self) -> Vec<Vec<f64>> {
        self.inner.pixels.chunks(self.inner.width).map(<[f64]>::to_vec).collect()
    }

    fn mean(&self) -> f64 {
        self.inner.mean()
    }

    /// Gaussian low-pass at a cutoff in cycles/mm; `None` leaves the image unchanged.
    #[pyo3(signature = (cutoff_cycles_per_mm=None))]
    fn lowpass(&self, py: Python<'_>, cutoff_cycles_per_mm: Option<f64>) -> PyResult<Self> {
        let spec = cutoff_spec(cutoff_cycles_per_mm);
        let inner = py.detach(|| filter::lowpass(&self.inner, &spec)).map_err(err)?;
        Ok(Self { inner })
    }

    /// Filters inside (`interior`), outside (`exterior`) or across (`full`)
    /// the union of `(x, y, w, h)` boxes.
    fn roi_filter(&self, py: Python<'_>, boxes: Vec<(u32, u32, u32, u32)>, scheme: &str, cutoff_cycles_per_mm: f64) -> PyResult<Self> {
        let scheme: RoiScheme = scheme.parse().map_err(err)?;
        let rois = RoiAnnotation {
            reader_id: String::new(),
            image_id: String::new(),
            boxes: boxes.into_iter().map(|(x, y, w, h)| RoiBox { x, y, w, h }).collect(),
        };
        let spec = cutoff_spec(Some(cutoff_cycles_per_mm));
        let inner = py.detach(|| filter::roi_scheme_filter(&self.inner, &rois, scheme, &spec)).map_err(err)?;
        Ok(Self { inner })
    }

    fn cutoff_cycles_per_frame(&self, cutoff_cycles_per_mm: f64) -> PyResult<f64> {
        filter::severity_to_cycles_per_frame(cutoff_cycles_per_mm, &self.inner).map_err(err)
    }

    fn __repr__(&self) -> String {
        format!("Image({}x{}, {} mm/px)", self.inner.width, self.inner.height, self.inner.mm_per_pixel)
    }
}

/// Dirichlet calibration map for binary scores.
#[pyclass(name = "Calibrator", module = "sievelab", frozen, skip_from_py_object)]
#[derive(Clone)]
struct PyCalibrator {
    inner: calibrate::Calibrator,
}

#[pymethods]
impl PyCalibrator {
    #[staticmethod]
    #[pyo3(signature = (scores, labels, seed=0))]
    fn fit(py: Python<'_>, scores: Vec<f64>, labels: Vec<bool>, seed: u64) -> PyResult<Self> {
        let config = CalibrationConfig { seed, ..Default::default() };
        let inner = py.detach(|| calibrate::fit_calibrator(&scores, &labels, &config)).map_err(err)?;
        Ok(Self { inner })
    }

    #[staticmethod]
    fn identity() -> Self {
        Self {
            inner: calibrate::Calibrator::identity(),
        }
    }

    fn apply(&self, score: f64) -> f64 {
        self.inner.apply(score)
    }

    fn apply_all(&self, scores: Vec<f64>) -> Vec<f64> {
        scores.into_iter().map(|s| self.inner.apply(s)).collect()
    }

    #[getter]
    fn weights(&self) -> (f64, f64) {
        (self.inner.weights[0], self.inner.weights[1])
    }

    #[getter]
    fn intercept(&self) -> f64 {
        self.inner.intercept
    }

    #[getter]
    fn regularization(&self) -> f64 {
        self.inner.lambda
    }

    fn to_dict(&self, py: Python<'_>) -> PyResult<Py<PyAny>> {
        to_py(py, &self.inner)
    }

    fn __repr__(&self) -> String {
        let c = &self.inner;
        format!("Calibrator(weights=({:.4}, {:.4}), intercept={:.4})", c.weights[0], c.weights[1], c.intercept)
    }
}

/// Validated predictions with their cases and severity ladder.
#[pyclass(name = "Dataset", module = "sievelab", frozen, skip_from_py_object)]
struct PyDataset {
    inner: PredictionSet,
}

#[pymethods]
impl PyDataset {
    /// Builds a dataset from record and case dicts. The ladder defaults to
    /// the halving ladder sized to the highest severity index present.
    #[new]
    #[pyo3(signature = (records, cases, ladder=None))]
    fn new(records: &Bound<'_, PyAny>, cases: &Bound<'_, PyAny>, ladder: Option<Vec<Option<f64>>>) -> PyResult<Self> {
        let records: Vec<PredictionRecord> = from_py(records)?;
        let cases: Vec<BreastCase> = from_py(cases)?;
        let ladder = match ladder {
            Some(values) => values
                .into_iter()
                .enumerate()
                .map(|(i, v)| FilterSpec {
                    severity_index: i,
                    cutoff_cycles_per_mm: v.map_or(Cutoff::Unfiltered, Cutoff::CyclesPerMm),
                })
                .collect(),
            None => filter::halving_ladder(records.iter().map(|r| r.severity_index + 1).max().unwrap_or(1)),
        };
        filter::validate_ladder(&ladder).map_err(err)?;
        let inner = PredictionSet::new(records, ladder, cases).map_err(err)?;
        Ok(Self { inner })
    }

    /// Reads predictions and cases from JSON-lines files.
    #[staticmethod]
    fn load(predictions: &str, cases: &str) -> PyResult<Self> {
        let records = data::read_prediction_records(predictions.as_ref()).map_err(err)?;
        let levels = records.iter().map(|r| r.severity_index + 1).max().unwrap_or(1);
        let cases = data::load_cases(cases.as_ref()).map_err(err)?;
        let inner = PredictionSet::new(records, filter::halving_ladder(levels), cases).map_err(err)?;
        Ok(Self { inner })
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    #[getter]
    fn readers(&self) -> Vec<String> {
        self.inner.reader_ids()
    }

    #[getter]
    fn severities(&self) -> usize {
        self.inner.severities.len()
    }

    fn cases(&self, py: Python<'_>) -> PyResult<Py<PyAny>> {
        to_py(py, &self.inner.cases)
    }

    fn records(&self, py: Python<'_>) -> PyResult<Py<PyAny>> {
        to_py(py, &self.inner.records)
    }

    fn __repr__(&self) -> String {
        format!(
            "Dataset({} records, {} readers, {} cases, {} severities)",
            self.inner.len(),
            self.inner.reader_ids().len(),
            self.inner.cases.len(),
            self.inner.severities.len()
        )
    }
}

/// Latent prediction model bound to a dataset's observations.
#[pyclass(name = "Model", module = "sievelab", frozen, skip_from_py_object)]
struct PyModel {
    spec: ModelSpec,
    observations: Vec<Observation>,
    cases: Vec<BreastCase>,
}

#[pymethods]
impl PyModel {
    #[new]
    #[pyo3(signature = (dataset, variant="full", grouping="subgroups", constrained=true))]
    fn new(dataset: &PyDataset, variant: &str, grouping: &str, constrained: bool) -> PyResult<Self> {
        let variant: Variant = variant.parse().map_err(err)?;
        let grouping: Grouping = parse_enum("grouping", grouping)?;
        let (spec, observations) = build_model(&dataset.inner, variant, constrained, grouping).map_err(err)?;
        let by_id: std::collections::HashMap<&str, &BreastCase> = dataset.inner.cases.iter().map(|c| (c.case_id.as_str(), c)).collect();
        let cases = spec.cases.iter().map(|id| by_id[id.as_str()].clone()).collect();
        Ok(Self { spec, observations, cases })
    }

    #[getter]
    fn variant(&self) -> String {
        self.spec.variant.to_string()
    }

    #[getter]
    fn subgroups(&self) -> Vec<String> {
        self.spec.subgroups.clone()
    }

    #[getter]
    fn severities(&self) -> usize {
        self.spec.severities
    }

    #[getter]
    fn observations(&self) -> usize {
        self.observations.len()
    }

    /// Mean-field variational fit. `advi` overrides optimizer settings by key.
    #[pyo3(signature = (seed=0, max_iters=None, advi=None))]
    fn fit(&self, py: Python<'_>, seed: u64, max_iters: Option<usize>, advi: Option<&Bound<'_, PyAny>>) -> PyResult<PyPosterior> {
        let mut config = AdviConfig::default();
        if let Some(overrides) = advi {
            let mut base = serde_json::to_value(&config).map_err(err)?;
            let patch: serde_json::Map<String, serde_json::Value> = from_py(overrides)?;
            base.as_object_mut().expect("config is an object").extend(patch);
            config = serde_json::from_value(base).map_err(err)?;
        }
        config.seed = seed;
        if let Some(n) = max_iters {
            config.max_iters = n;
        }
        let inner = py.detach(|| fit_model(&self.spec, &self.observations, &config)).map_err(err)?;
        Ok(PyPosterior { inner })
    }

    /// Confidence and separability report as a dict.
    #[pyo3(signature = (posterior, replicates=analysis::DEFAULT_REPLICATES, seed=0, alpha=analysis::DEFAULT_ALPHA))]
    fn analyze(&self, py: Python<'_>, posterior: &PyPosterior, replicates: usize, seed: u64, alpha: f64) -> PyResult<Py<PyAny>> {
        let report = py
            .detach(|| analysis::analyze(&posterior.inner, &self.spec, &self.cases, replicates, seed, alpha))
            .map_err(err)?;
        to_py(py, &report)
    }

    fn to_dict(&self, py: Python<'_>) -> PyResult<Py<PyAny>> {
        to_py(py, &self.spec)
    }

    fn __repr__(&self) -> String {
        format!(
            "Model({}, {} subgroups, {} severities, {} observations)",
            self.spec.variant,
            self.spec.subgroups.len(),
            self.spec.severities,
            self.observations.len()
        )
    }
}

/// Fitted mean-field Gaussian posterior.
#[pyclass(name = "Posterior", module = "sievelab", frozen, skip_from_py_object)]
struct PyPosterior {
    inner: PosteriorApprox,
}

#[pymethods]
impl PyPosterior {
    #[getter]
    fn iterations(&self) -> usize {
        self.inner.iterations
    }

    #[getter]
    fn converged(&self) -> bool {
        self.inner.converged
    }

    #[getter]
    fn means(&self) -> Vec<f64> {
        self.inner.means.clone()
    }

    #[getter]
    fn stds(&self) -> Vec<f64> {
        self.inner.log_stds.iter().map(|w| w.exp()).collect()
    }

    #[getter]
    fn elbo_trace(&self) -> Vec<(usize, f64)> {
        self.inner.elbo_trace.clone()
    }

    /// Names such as `gamma[3, 1]`, aligned with `means` and `stds`.
    #[getter]
    fn coordinates(&self) -> Vec<String> {
        self.inner
            .index_map
            .iter()
            .map(|c| format!("{}[{}]", c.var, c.index.iter().map(usize::to_string).collect::<Vec<_>>().join(", ")))
            .collect()
    }

    /// `(mean, std)` of one latent, or `None` if it is not a free coordinate.
    fn coordinate(&self, var: &str, index: Vec<usize>) -> Option<(f64, f64)> {
        self.inner.coordinate(var, &index)
    }

    fn prob_positive(&self, severity: usize, subgroup: usize) -> PyResult<f64> {
        analysis::gamma_effect_summary(&self.inner, severity, subgroup)
            .map(|e| e.prob_positive)
            .map_err(err)
    }

    fn to_dict(&self, py: Python<'_>) -> PyResult<Py<PyAny>> {
        to_py(py, &self.inner)
    }

    #[staticmethod]
    fn from_dict(obj: &Bound<'_, PyAny>) -> PyResult<Self> {
        Ok(Self { inner: from_py(obj)? })
    }

    fn __repr__(&self) -> String {
        format!("Posterior({} latents, {} iterations, converged={})", self.inner.means.len(), self.inner.iterations, self.inner.converged)
    }
}

#[pyfunction]
fn gaussian_mask(height: usize, width: usize, cutoff_cycles_per_frame: f64) -> PyResult<Vec<Vec<f64>>> {
    let m = filter::gaussian_mask(height, width, cutoff_cycles_per_frame).map_err(err)?;
    Ok(m.values.chunks(width).map(<[f64]>::to_vec).collect())
}

/// Cutoffs in cycles/mm for the default ladder; `None` marks the unfiltered level.
#[pyfunction]
fn default_ladder() -> Vec<Option<f64>> {
    ladder_values(&filter::default_ladder())
}

#[pyfunction]
fn halving_ladder(levels: usize) -> Vec<Option<f64>> {
    ladder_values(&filter::halving_ladder(levels))
}

#[pyfunction]
fn ks_statistic(a: Vec<f64>, b: Vec<f64>) -> PyResult<f64> {
    stats::ks_statistic(&a, &b).map_err(err)
}

/// p-value for the alternative that KS statistics at a severity are
/// stochastically smaller than those at the reference.
#[pyfunction]
fn ks_one_tailed_test(at_severity: Vec<f64>, at_reference: Vec<f64>) -> PyResult<f64> {
    stats::ks_one_tailed_test(&at_severity, &at_reference).map_err(err)
}

#[pyfunction]
fn prob_positive(mean: f64, std: f64) -> f64 {
    analysis::prob_positive(mean, std)
}

#[pyfunction]
#[pyo3(signature = (scores, labels, bins=calibrate::DEFAULT_BINS))]
fn classwise_ece(scores: Vec<f64>, labels: Vec<bool>, bins: usize) -> PyResult<f64> {
    calibrate::classwise_ece(&scores, &labels, bins).map_err(err)
}

#[pyfunction]
fn subgroup_assign(tags: Vec<String>, label: &str) -> PyResult<String> {
    let tags = tags
        .iter()
        .map(|t| parse_enum::<LesionTag>("lesion tag", t))
        .collect::<PyResult<_>>()?;
    let label: CaseLabel = parse_enum("label", label)?;
    data::subgroup_assign(&tags, label).map(|g| g.as_str().to_string()).map_err(err)
}

/// Synthetic recovery run from a config dict; returns the recovery report.
#[pyfunction]
fn run_recovery(py: Python<'_>, config: &Bound<'_, PyAny>) -> PyResult<Py<PyAny>> {
    let config: RecoveryConfig = from_py(config)?;
    let run = py.detach(|| synth::run_recovery(&config)).map_err(err)?;
    to_py(py, &run.report)
}

/// Synthetic predictions and cases from a recovery config, as a dataset.
#[pyfunction]
fn simulate(py: Python<'_>, config: &Bound<'_, PyAny>) -> PyResult<PyDataset> {
    let config: RecoveryConfig = from_py(config)?;
    let inner = py
        .detach(|| synth::sample_recovery_data(&config).and_then(|d| d.prediction_set()))
        .map_err(err)?;
    Ok(PyDataset { inner })
}

/// Compares a per-subgroup report with a pooled one; both are `Model.analyze` dicts.
#[pyfunction]
#[pyo3(signature = (by_subgroup, pooled, alpha=analysis::DEFAULT_ALPHA))]
fn simpsons(py: Python<'_>, by_subgroup: &Bound<'_, PyAny>, pooled: &Bound<'_, PyAny>, alpha: f64) -> PyResult<Py<PyAny>> {
    let by_subgroup: AnalysisReport = from_py(by_subgroup)?;
    let pooled: AnalysisReport = from_py(pooled)?;
    let report = analysis::simpsons_from_reports(&by_subgroup, &pooled, alpha).map_err(err)?;
    to_py(py, &report)
}

#[pymodule(name = "sievelab")]
fn sievelab_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    m.add("SievelabError", m.py().get_type::<SievelabError>())?;
    m.add_class::<PyImage>()?;
    m.add_class::<PyCalibrator>()?;
    m.add_class::<PyDataset>()?;
    m.add_class::<PyModel>()?;
    m.add_class::<PyPosterior>()?;
    m.add_function(wrap_pyfunction!(gaussian_mask, m)?)?;
    m.add_function(wrap_pyfunction!(default_ladder, m)?)?;
    m.add_function(wrap_pyfunction!(halving_ladder, m)?)?;
    m.add_function(wrap_pyfunction!(ks_statistic, m)?)?;
    m.add_function(wrap_pyfunction!(ks_one_tailed_test, m)?)?;
    m.add_function(wrap_pyfunction!(prob_positive, m)?)?;
    m.add_function(wrap_pyfunction!(classwise_ece, m)?)?;
    m.add_function(wrap_pyfunction!(subgroup_assign, m)?)?;
    m.add_function(wrap_pyfunction!(run_recovery, m)?)?;
    m.add_function(wrap_pyfunction!(simulate, m)?)?;
    m.add_function(wrap_pyfunction!(simpsons, m)?)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ladder_values_mark_unfiltered_level() {
        let values = ladder_values(&filter::halving_ladder(3));
        assert_eq!(values, vec![None, Some(32.0), Some(16.0)]);
    }

    #[test]
    fn cutoff_spec_round_trips() {
        assert_eq!(cutoff_spec(None), FilterSpec::unfiltered());
        assert_eq!(cutoff_spec(Some(4.0)).cutoff_cycles_per_mm, Cutoff::CyclesPerMm(4.0));
    }
}
