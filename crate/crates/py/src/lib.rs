//! Python bindings: graphs, evaluation, edge inference, synthetic data,
//! training and parsing.

use std::path::PathBuf;

use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;

use mrparse::edge::{exact_marginals, mfvi_infer, oracle_check as run_oracle, PartScores};
use mrparse::eval::{evaluate as run_evaluate, EvalReport};
use mrparse::graph::{
    align_companion, parse_mrp, read_companion, read_mrp_lines, serialize_mrp, validate_graph, write_companion, Framework, MrpGraph,
};
use mrparse::model::Model as CoreModel;
use mrparse::pipeline::prepare_input;
use mrparse::synth::gen_synthetic;
use mrparse::train::{parse_graph, train as run_train, Dataset, TrainConfig};
use mrparse::tree::graph_to_tree;

fn value_err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn parse_framework(name: &str) -> PyResult<Framework> {
    name.parse().map_err(value_err)
}

/// One MRP graph.
#[pyclass(name = "Graph", module = "mrparse_py")]
#[derive(Clone)]
struct PyGraph(MrpGraph);

#[pymethods]
impl PyGraph {
    /// Parse one MRP JSON line.
    #[staticmethod]
    fn from_json(line: &str) -> PyResult<Self> {
        parse_mrp(line).map(PyGraph).map_err(value_err)
    }

    fn to_json(&self) -> String {
        serialize_mrp(&self.0)
    }

    #[getter]
    fn id(&self) -> String {
        self.0.id.clone()
    }

    #[getter]
    fn framework(&self) -> &'static str {
        self.0.framework.as_str()
    }

    #[getter]
    fn input(&self) -> String {
        self.0.input.clone()
    }

    #[getter]
    fn tops(&self) -> Vec<u32> {
        self.0.tops.clone()
    }

    /// `(id, label)` per node.
    fn nodes(&self) -> Vec<(u32, Option<String>)> {
        self.0.nodes.iter().map(|n| (n.id, n.label.clone())).collect()
    }

    /// `(source, target, label)` per edge.
    fn edges(&self) -> Vec<(u32, u32, String)> {
        self.0.edges.iter().map(|e| (e.source, e.target, e.label.clone())).collect()
    }

    /// Structural problems, one message each.
    fn validate(&self) -> Vec<String> {
        validate_graph(&self.0).into_iter().map(|v| v.message).collect()
    }

    /// Depth-first node sequence as `(label, idx, parent)` triples; a copy
    /// has `idx` pointing at its first occurrence.
    fn linearize(&self) -> PyResult<Vec<(String, usize, Option<usize>)>> {
        let seq = graph_to_tree(&self.0).map_err(value_err)?;
        Ok(seq.nodes.iter().map(|n| (n.label_str().to_string(), n.idx, n.parent)).collect())
    }

    fn __repr__(&self) -> String {
        format!(
            "Graph(id={:?}, framework={}, nodes={}, edges={})",
            self.0.id,
            self.0.framework,
            self.0.nodes.len(),
            self.0.edges.len()
        )
    }
}

/// Parse every non-blank MRP line of a document.
#[pyfunction]
fn read_mrp(doc: &str) -> PyResult<Vec<PyGraph>> {
    Ok(read_mrp_lines(doc).map_err(value_err)?.into_iter().map(PyGraph).collect())
}

/// Component counts and F1 of predicted against gold graphs.
#[pyclass(name = "EvalReport", module = "mrparse_py")]
struct PyEvalReport(EvalReport);

#[pymethods]
impl PyEvalReport {
    #[getter]
    fn labeled_f1(&self) -> f64 {
        self.0.labeled_f1()
    }

    #[getter]
    fn micro_f1(&self) -> f64 {
        self.0.micro().f1()
    }

    /// F1 of one component: tops, labels, properties, anchors or edges.
    fn f1(&self, component: &str) -> PyResult<f64> {
        self.0
            .components()
            .iter()
            .find(|(k, _)| *k == component)
            .map(|(_, c)| c.f1())
            .ok_or_else(|| value_err(format!("unknown component `{component}`")))
    }

    fn to_json(&self) -> String {
        self.0.to_json().to_string()
    }

    fn __str__(&self) -> String {
        self.0.to_table()
    }
}

#[pyfunction]
fn evaluate(gold: Vec<PyGraph>, pred: Vec<PyGraph>) -> PyResult<PyEvalReport> {
    let gold: Vec<MrpGraph> = gold.into_iter().map(|g| g.0).collect();
    let pred: Vec<MrpGraph> = pred.into_iter().map(|g| g.0).collect();
    run_evaluate(&gold, &pred).map(PyEvalReport).map_err(value_err)
}

/// First- and second-order part scores over `n` nodes (row = head).
#[pyclass(name = "PartScores", module = "mrparse_py")]
struct PyPartScores(PartScores);

#[pymethods]
impl PyPartScores {
    #[new]
    fn new(n: usize) -> Self {
        PyPartScores(PartScores::new(n))
    }

    fn set_edge(&mut self, i: usize, j: usize, v: f64) {
        self.0.set_edge(i, j, v);
    }

    /// Sibling score of edges `(i, j)` and `(i, k)`.
    fn set_sib(&mut self, i: usize, j: usize, k: usize, v: f64) {
        self.0.set_sib(i, j, k, v);
    }

    /// Co-parent score of edges `(i, j)` and `(k, j)`.
    fn set_cop(&mut self, i: usize, j: usize, k: usize, v: f64) {
        self.0.set_cop(i, j, k, v);
    }

    /// Grandparent score of edges `(i, j)` and `(j, k)`.
    fn set_gp(&mut self, i: usize, j: usize, k: usize, v: f64) {
        self.0.set_gp(i, j, k, v);
    }

    /// Mean-field edge marginals as an `n × n` nested list.
    fn mean_field(&self, iterations: usize) -> Vec<Vec<f64>> {
        rows(&mfvi_infer(&self.0, iterations, None).q, self.0.n)
    }

    /// Exact marginals by enumeration (at most 20 candidate edges).
    fn exact(&self) -> PyResult<Vec<Vec<f64>>> {
        Ok(rows(&exact_marginals(&self.0).map_err(value_err)?.q, self.0.n))
    }
}

fn rows(q: &[f64], n: usize) -> Vec<Vec<f64>> {
    q.chunks(n.max(1)).map(<[f64]>::to_vec).collect()
}

/// Mean-field against exact marginals on random instances, as a JSON string.
#[pyfunction]
#[pyo3(signature = (seed=0, instances=100, iterations=3))]
fn oracle_check(seed: u64, instances: usize, iterations: usize) -> PyResult<String> {
    let s = run_oracle(seed, instances, iterations).map_err(value_err)?;
    serde_json::to_string(&s).map_err(value_err)
}

/// Synthetic `(graph, companion CoNLL-U)` pairs.
#[pyfunction]
#[pyo3(signature = (framework, n, seed=1))]
fn synthesize(framework: &str, n: usize, seed: u64) -> PyResult<Vec<(PyGraph, String)>> {
    let fw = parse_framework(framework)?;
    Ok(gen_synthetic(fw, n, seed)
        .into_iter()
        .map(|(g, c)| (PyGraph(g), write_companion(&[c])))
        .collect())
}

/// A trained parser.
#[pyclass(name = "Model", module = "mrparse_py", unsendable)]
struct PyModel(CoreModel);

#[pymethods]
impl PyModel {
    #[staticmethod]
    fn load(dir: PathBuf) -> PyResult<Self> {
        CoreModel::load(&dir).map(PyModel).map_err(|e| PyIOError::new_err(e.to_string()))
    }

    fn save(&self, dir: PathBuf) -> PyResult<()> {
        self.0.save(&dir).map_err(|e| PyIOError::new_err(e.to_string()))
    }

    #[getter]
    fn framework(&self) -> &'static str {
        self.0.cfg.framework.as_str()
    }

    #[getter]
    fn num_parameters(&self) -> usize {
        self.0.store.num_values()
    }

    /// Parse one sentence given its raw text and a one-sentence CoNLL-U
    /// companion analysis.
    fn parse(&self, id: &str, text: &str, companion: &str) -> PyResult<PyGraph> {
        let fw = self.0.cfg.framework;
        let sentences = read_companion(companion).map_err(value_err)?;
        let [c] = &sentences[..] else {
            return Err(value_err(format!("expected one companion sentence, found {}", sentences.len())));
        };
        let c = align_companion(&MrpGraph::new(id, fw, text), c).map_err(value_err)?;
        let input = prepare_input(id, fw, text, &c, &self.0.resources);
        parse_graph(&self.0, &input).map(PyGraph).map_err(value_err)
    }
}

/// Train from a `key = value` configuration; returns the best model and the
/// training report as JSON.
#[pyfunction]
fn train(config: &str) -> PyResult<(PyModel, String)> {
    let cfg = TrainConfig::parse(config).map_err(value_err)?;
    let data = Dataset::from_config(&cfg).map_err(value_err)?;
    let (model, report) = run_train(&cfg, &data).map_err(value_err)?;
    Ok((PyModel(model), serde_json::to_string(&report).map_err(value_err)?))
}

#[pymodule]
fn mrparse_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyGraph>()?;
    m.add_class::<PyEvalReport>()?;
    m.add_class::<PyPartScores>()?;
    m.add_class::<PyModel>()?;
    m.add_function(wrap_pyfunction!(read_mrp, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate, m)?)?;
    m.add_function(wrap_pyfunction!(oracle_check, m)?)?;
    m.add_function(wrap_pyfunction!(synthesize, m)?)?;
    m.add_function(wrap_pyfunction!(train, m)?)?;
    Ok(())
}
