//! Python bindings: fixed-point formats and values, model documents,
//! quantization, both emulators, lowering, emission and estimation.

use std::cmp::Ordering;
use std::collections::HashMap;
use std::fmt::Display;

use fxhls::bench::make_synthetic;
use fxhls::dataset::Dataset;
use fxhls::emit::{emit_testbench, emit_verilog, interpreter_vectors, lint_verilog};
use fxhls::emulate::{emulate_fixed, emulate_float, quantize_input, AccumulationOrder};
use fxhls::estimate::{estimate, CostModel, ResourceReport};
use fxhls::fixedpoint::{
    cast, fxp_add, fxp_compare, fxp_mul, quantize_real, FixedPointFormat, FixedPointValue,
    Overflow, Rounding,
};
use fxhls::ingest::{parse_model, write_model};
use fxhls::lower::lower;
use fxhls::model::{model_stats, Model};
use fxhls::netlist::{run_stream, verify, NetlistIr};
use fxhls::quantize::{
    calibrate_formats, prune_fcnn, quantize_model, read_quantized, write_quantized, PruneMask,
    PruningConfig, QuantizationConfig, QuantizedModel, Widths,
};
use pyo3::create_exception;
use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;

create_exception!(fxhls_py, FxhlsError, PyValueError);

fn fail(code: &str, e: impl Display) -> PyErr {
    FxhlsError::new_err(format!("{code}: {e}"))
}

macro_rules! coded {
    ($e:expr) => {
        $e.map_err(|e| fail(e.code(), &e))
    };
}

fn json_value<'py>(py: Python<'py>, text: &str) -> PyResult<Bound<'py, PyAny>> {
    py.import("json")?.call_method1("loads", (text,))
}

fn dataset(features: Vec<Vec<f64>>) -> Dataset {
    let n = features.len();
    Dataset::new(features, vec![0; n])
}

fn order(name: &str) -> PyResult<AccumulationOrder> {
    match name {
        "tree" => Ok(AccumulationOrder::Tree),
        "sequential" => Ok(AccumulationOrder::Sequential),
        other => Err(fail(
            "Usage",
            format!("unknown accumulation order `{other}`"),
        )),
    }
}

#[pyclass(
    name = "Format",
    module = "fxhls_py",
    frozen,
    eq,
    hash,
    skip_from_py_object
)]
#[derive(Clone, PartialEq, Eq, Hash)]
struct PyFormat(FixedPointFormat);

#[pymethods]
impl PyFormat {
    #[new]
    #[pyo3(signature = (total_bits, integer_bits, signed = true, rounding = "rne", overflow = "sat"))]
    fn new(
        total_bits: u32,
        integer_bits: u32,
        signed: bool,
        rounding: &str,
        overflow: &str,
    ) -> PyResult<Self> {
        let rounding = match rounding {
            "rne" => Rounding::RoundNearestEven,
            "trn" => Rounding::TruncateTowardNegInf,
            other => return Err(fail("InvalidFormat", format!("rounding `{other}`"))),
        };
        let overflow = match overflow {
            "sat" => Overflow::Saturate,
            "wrap" => Overflow::Wrap,
            other => return Err(fail("InvalidFormat", format!("overflow `{other}`"))),
        };
        let f = FixedPointFormat::new(total_bits, integer_bits, signed)
            .map_err(|e| fail("InvalidFormat", e))?;
        Ok(Self(f.with_rounding(rounding).with_overflow(overflow)))
    }

    /// Parses `fixed<W,I,s|u>` with optional rounding and overflow tokens.
    #[staticmethod]
    fn parse(text: &str) -> PyResult<Self> {
        text.parse().map(Self).map_err(|e| fail("InvalidFormat", e))
    }

    #[getter]
    fn total_bits(&self) -> u32 {
        self.0.total_bits()
    }

    #[getter]
    fn integer_bits(&self) -> u32 {
        self.0.integer_bits()
    }

    #[getter]
    fn fractional_bits(&self) -> u32 {
        self.0.fractional_bits()
    }

    #[getter]
    fn signed(&self) -> bool {
        self.0.is_signed()
    }

    #[getter]
    fn min_raw(&self) -> i128 {
        self.0.min_raw()
    }

    #[getter]
    fn max_raw(&self) -> i128 {
        self.0.max_raw()
    }

    #[getter]
    fn resolution(&self) -> f64 {
        self.0.resolution()
    }

    /// Rounds and saturates or wraps a real into this format.
    fn quantize(&self, x: f64) -> PyValue {
        PyValue(quantize_real(x, self.0))
    }

    fn __str__(&self) -> String {
        self.0.to_string()
    }

    fn __repr__(&self) -> String {
        format!("Format.parse('{}')", self.0)
    }
}

#[pyclass(name = "Value", module = "fxhls_py", frozen, eq, skip_from_py_object)]
#[derive(Clone, PartialEq)]
struct PyValue(FixedPointValue);

#[pymethods]
impl PyValue {
    #[new]
    fn new(raw: i128, format: &PyFormat) -> PyResult<Self> {
        FixedPointValue::new(raw, format.0)
            .map(Self)
            .map_err(|e| fail("RawOutOfRange", e))
    }

    #[getter]
    fn raw(&self) -> i128 {
        self.0.raw()
    }

    #[getter]
    fn format(&self) -> PyFormat {
        PyFormat(self.0.format())
    }

    fn to_float(&self) -> f64 {
        self.0.to_f64()
    }

    fn cast(&self, out: &PyFormat) -> Self {
        Self(cast(self.0, out.0))
    }

    fn add(&self, other: &PyValue, out: &PyFormat) -> Self {
        Self(fxp_add(self.0, other.0, out.0))
    }

    fn mul(&self, other: &PyValue, out: &PyFormat) -> Self {
        Self(fxp_mul(self.0, other.0, out.0))
    }

    /// -1, 0 or 1 by exact real value, whatever the two formats.
    fn compare(&self, other: &PyValue) -> i32 {
        match fxp_compare(self.0, other.0) {
            Ordering::Less => -1,
            Ordering::Equal => 0,
            Ordering::Greater => 1,
        }
    }

    fn __float__(&self) -> f64 {
        self.0.to_f64()
    }

    fn __repr__(&self) -> String {
        format!("Value({}, {})", self.0.raw(), self.0.format())
    }
}

#[pyclass(name = "Prediction", module = "fxhls_py", frozen, get_all)]
struct PyPrediction {
    label: usize,
    scores: Vec<f64>,
    raw: Option<Vec<i128>>,
    margin: Option<f64>,
}

#[pymethods]
impl PyPrediction {
    fn __repr__(&self) -> String {
        format!("Prediction(label={}, scores={:?})", self.label, self.scores)
    }
}

fn predictions(preds: Vec<fxhls::emulate::Prediction>) -> Vec<PyPrediction> {
    preds
        .into_iter()
        .map(|p| PyPrediction {
            label: p.class,
            scores: p.scores,
            raw: p.raw,
            margin: p.margin,
        })
        .collect()
}

#[pyclass(name = "Model", module = "fxhls_py", frozen)]
struct PyModel(Model);

#[pymethods]
impl PyModel {
    /// Parses and validates an interchange document.
    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        coded!(parse_model(text.as_bytes())).map(Self)
    }

    fn to_json(&self) -> PyResult<String> {
        let bytes = coded!(write_model(&self.0))?;
        Ok(String::from_utf8(bytes).expect("writer emits utf-8"))
    }

    #[getter]
    fn kind(&self) -> &'static str {
        self.0.kind()
    }

    #[getter]
    fn n_features(&self) -> usize {
        self.0.n_features()
    }

    fn stats<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        let text = serde_json::to_string(&model_stats(&self.0)).expect("stats serialize");
        json_value(py, &text)
    }

    /// Float reference predictions.
    fn predict(&self, py: Python<'_>, features: Vec<Vec<f64>>) -> PyResult<Vec<PyPrediction>> {
        let data = dataset(features);
        let preds = py
            .detach(|| emulate_float(&self.0, &data))
            .map_err(|e| fail("FeatureCount", e))?;
        Ok(predictions(preds))
    }

    /// Magnitude-prunes every layer to `sparsity`. Returns the pruned model
    /// and the masks as JSON, for `quantize`.
    fn prune(&self, sparsity: f64) -> PyResult<(PyModel, String)> {
        let Model::Fcnn(net) = &self.0 else {
            return Err(fail("Usage", "pruning applies to fcnn models"));
        };
        let cfg = PruningConfig::uniform(sparsity, net.layers.len());
        let (pruned, masks) = coded!(prune_fcnn(net, &cfg))?;
        let masks = serde_json::to_string(&masks).expect("masks serialize");
        Ok((PyModel(Model::Fcnn(pruned)), masks))
    }

    /// Calibrates formats on `calibration` rows and quantizes. `widths`
    /// maps roles (input, threshold, leaf, weight, bias, activation,
    /// accum) to bit widths over the default `width`.
    #[pyo3(signature = (calibration, width = 16, widths = None, masks = None))]
    fn quantize(
        &self,
        calibration: Vec<Vec<f64>>,
        width: u32,
        widths: Option<HashMap<String, u32>>,
        masks: Option<&str>,
    ) -> PyResult<PyQuantized> {
        let mut w = Widths::uniform(width);
        for (role, v) in widths.unwrap_or_default() {
            match role.as_str() {
                "input" => w.input = v,
                "threshold" => w.threshold = v,
                "leaf" => w.leaf = v,
                "weight" => w.weight = v,
                "bias" => w.bias = v,
                "activation" => w.activation = v,
                "accum" => w.accum = Some(v),
                other => return Err(fail("Usage", format!("unknown role `{other}`"))),
            }
        }
        let cfg = coded!(calibrate_formats(&self.0, &dataset(calibration), &w))?;
        self.quantize_with(&cfg, masks)
    }

    /// Quantizes with an explicit configuration document.
    #[pyo3(signature = (config, masks = None))]
    fn quantize_config(&self, config: &str, masks: Option<&str>) -> PyResult<PyQuantized> {
        let cfg: QuantizationConfig =
            serde_json::from_str(config).map_err(|e| fail("InvalidConfig", e))?;
        self.quantize_with(&cfg, masks)
    }
}

impl PyModel {
    fn quantize_with(
        &self,
        cfg: &QuantizationConfig,
        masks: Option<&str>,
    ) -> PyResult<PyQuantized> {
        let masks: Option<Vec<PruneMask>> = masks
            .map(serde_json::from_str)
            .transpose()
            .map_err(|e| fail("MalformedJson", e))?;
        let q = coded!(quantize_model(&self.0, cfg, masks.as_deref()))?;
        Ok(PyQuantized {
            q,
            source: self.0.clone(),
        })
    }
}

#[pyclass(name = "QuantizedModel", module = "fxhls_py", frozen)]
struct PyQuantized {
    q: QuantizedModel,
    source: Model,
}

#[pymethods]
impl PyQuantized {
    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        let (q, source) = coded!(read_quantized(text.as_bytes()))?;
        Ok(Self { q, source })
    }

    fn to_json(&self) -> PyResult<String> {
        let bytes = coded!(write_quantized(&self.q, &self.source))?;
        Ok(String::from_utf8(bytes).expect("writer emits utf-8"))
    }

    fn config_json(&self) -> String {
        serde_json::to_string_pretty(self.q.config()).expect("config serialize")
    }

    #[getter]
    fn input_format(&self) -> PyFormat {
        PyFormat(self.q.config().input_fmt)
    }

    #[getter]
    fn n_features(&self) -> usize {
        self.q.n_features()
    }

    /// Bit-exact fixed-point predictions.
    #[pyo3(signature = (features, order = "tree"))]
    fn predict(
        &self,
        py: Python<'_>,
        features: Vec<Vec<f64>>,
        order: &str,
    ) -> PyResult<Vec<PyPrediction>> {
        let order = self::order(order)?;
        let data = dataset(features);
        let preds = py
            .detach(|| emulate_fixed(&self.q, &data, order))
            .map_err(|e| fail("FeatureCount", e))?;
        Ok(predictions(preds))
    }

    /// Raw input words for the compiled design.
    fn quantize_inputs(&self, features: Vec<Vec<f64>>) -> Vec<Vec<i128>> {
        let fmt = self.q.config().input_fmt;
        features
            .iter()
            .map(|x| {
                quantize_input(x, fmt)
                    .iter()
                    .map(FixedPointValue::raw)
                    .collect()
            })
            .collect()
    }

    #[pyo3(signature = (reuse = 1, name = "model"))]
    fn compile(&self, reuse: u32, name: &str) -> PyResult<PyNetlist> {
        coded!(lower(&self.q, reuse, name)).map(PyNetlist)
    }
}

#[pyclass(name = "Netlist", module = "fxhls_py", frozen)]
struct PyNetlist(NetlistIr);

#[pymethods]
impl PyNetlist {
    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        NetlistIr::from_json(text)
            .map(Self)
            .map_err(|e| fail("MalformedJson", e))
    }

    fn to_json(&self) -> String {
        self.0.to_json()
    }

    #[getter]
    fn name(&self) -> &str {
        &self.0.name
    }

    #[getter]
    fn latency_cycles(&self) -> u32 {
        self.0.latency_cycles
    }

    #[getter]
    fn initiation_interval(&self) -> u32 {
        self.0.initiation_interval
    }

    fn cell_count(&self, kind: &str) -> usize {
        self.0.cell_count(kind)
    }

    /// Checks driver, type and timing rules.
    fn verify(&self) -> PyResult<()> {
        verify(&self.0)
            .map(drop)
            .map_err(|e| fail("InvalidNetlist", e))
    }

    /// Cycle-accurate interpretation of a stream of raw input vectors.
    fn run(&self, py: Python<'_>, inputs: Vec<Vec<i128>>) -> PyResult<Vec<Vec<i128>>> {
        py.detach(|| run_stream(&self.0, &inputs))
            .map_err(|e| fail("InvalidNetlist", e))
    }

    fn verilog(&self) -> PyResult<String> {
        coded!(emit_verilog(&self.0))
    }

    /// Self-checking testbench with expected outputs from the interpreter.
    fn testbench(&self, inputs: Vec<Vec<i128>>) -> PyResult<String> {
        let vectors = coded!(interpreter_vectors(&self.0, &inputs))?;
        coded!(emit_testbench(&self.0, &vectors))
    }

    /// Lint findings for the emitted Verilog, one string each.
    fn lint(&self) -> PyResult<Vec<String>> {
        let text = coded!(emit_verilog(&self.0))?;
        Ok(lint_verilog(&text)
            .iter()
            .map(|f| format!("{f:?}"))
            .collect())
    }

    #[pyo3(signature = (cost_model = None))]
    fn estimate(&self, cost_model: Option<&str>) -> PyResult<PyReport> {
        let cm = match cost_model {
            Some(text) => coded!(CostModel::from_json(text))?,
            None => CostModel::default(),
        };
        coded!(estimate(&self.0, &cm)).map(PyReport)
    }
}

#[pyclass(name = "ResourceReport", module = "fxhls_py", frozen)]
struct PyReport(ResourceReport);

#[pymethods]
impl PyReport {
    #[getter]
    fn lut(&self) -> u64 {
        self.0.lut
    }

    #[getter]
    fn ff(&self) -> u64 {
        self.0.ff
    }

    #[getter]
    fn dsp(&self) -> u64 {
        self.0.dsp
    }

    #[getter]
    fn bram(&self) -> u64 {
        self.0.bram
    }

    #[getter]
    fn latency_cycles(&self) -> u32 {
        self.0.latency_cycles
    }

    #[getter]
    fn initiation_interval(&self) -> u32 {
        self.0.initiation_interval
    }

    fn to_json(&self) -> String {
        self.0.to_json()
    }

    fn to_csv(&self) -> PyResult<String> {
        coded!(self.0.to_csv())
    }

    fn __repr__(&self) -> String {
        let r = &self.0;
        format!(
            "ResourceReport(lut={}, ff={}, dsp={}, bram={})",
            r.lut, r.ff, r.dsp, r.bram
        )
    }
}

/// Gaussian blobs: `(features, labels)`.
#[pyfunction]
fn synthetic(
    seed: u64,
    n: usize,
    n_features: usize,
    n_classes: usize,
) -> (Vec<Vec<f64>>, Vec<usize>) {
    let d = make_synthetic(seed, n, n_features, n_classes);
    (d.features, d.labels)
}

#[pymodule]
fn fxhls_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("FxhlsError", m.py().get_type::<FxhlsError>())?;
    m.add("SCHEMA_VERSION", fxhls::ingest::SCHEMA_VERSION)?;
    m.add_class::<PyFormat>()?;
    m.add_class::<PyValue>()?;
    m.add_class::<PyModel>()?;
    m.add_class::<PyQuantized>()?;
    m.add_class::<PyNetlist>()?;
    m.add_class::<PyReport>()?;
    m.add_class::<PyPrediction>()?;
    m.add_function(wrap_pyfunction!(synthetic, m)?)?;
    Ok(())
}
