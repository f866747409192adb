//! Python bindings over the planning library: seeded slot generation, the
//! placement pipeline and its baselines, block-budget planning, and the
//! congested-site dimensioner. Reports cross the boundary as plain dicts
//! so Python callers never touch the Rust report types.

use ndarray::Array2;
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use mecmig::bandwidth::{self, BandwidthInstance};
use mecmig::hotspot::{solve_p4, HotspotConfig};
use mecmig::integer_recovery;
use mecmig::oracles;
use mecmig::relaxed_solver::{solve_p1_relaxed, SolverConfig};
use mecmig::scenario::{generate, GeneratedScenario, ScenarioConfig};
use mecmig::{ObjectiveBreakdown, SolveReport};

fn py_err(err: mecmig::Error) -> PyErr {
    match err {
        mecmig::Error::NoConvergence(_) => PyRuntimeError::new_err(err.to_string()),
        _ => PyValueError::new_err(err.to_string()),
    }
}

fn report_dict<'py>(
    py: Python<'py>,
    report: &SolveReport,
    serving: &[usize],
) -> PyResult<Bound<'py, PyDict>> {
    let dict = PyDict::new(py);
    dict.set_item("utility", report.utility)?;
    dict.set_item("sum_rate", report.sum_rate)?;
    dict.set_item("total_cost", report.total_cost)?;
    dict.set_item("upper_bound", report.upper_bound)?;
    dict.set_item("gap_to_upper_bound", report.gap_to_upper_bound)?;
    dict.set_item("migrated_users", report.migrated_users)?;
    dict.set_item("migrated_pct", report.migrated_pct)?;
    dict.set_item("outer_iterations", report.outer_iterations)?;
    dict.set_item("inner_iterations", report.inner_iterations)?;
    dict.set_item("residual", report.residual)?;
    dict.set_item("duality_gap", report.duality_gap)?;
    dict.set_item("constraint_violation", report.constraint_violation)?;
    dict.set_item("converged", report.converged)?;
    dict.set_item("serving", serving.to_vec())?;
    Ok(dict)
}

fn breakdown_dict<'py>(
    py: Python<'py>,
    breakdown: &ObjectiveBreakdown,
    serving: &[usize],
) -> PyResult<Bound<'py, PyDict>> {
    let dict = PyDict::new(py);
    dict.set_item("utility", breakdown.utility)?;
    dict.set_item("sum_rate", breakdown.sum_rate)?;
    dict.set_item("total_cost", breakdown.total_cost)?;
    dict.set_item("serving", serving.to_vec())?;
    Ok(dict)
}

/// One generated planning slot and the solvers that run on it.
#[pyclass]
struct Scenario {
    inner: GeneratedScenario,
}

#[pymethods]
impl Scenario {
    #[new]
    #[pyo3(signature = (seed, *, n_users=None, n_sites=None, vm_cap=None, cost_weight=None, degradation=None, v_max_m_s=None, slot_s=None))]
    #[allow(clippy::too_many_arguments)]
    fn new(
        seed: u64,
        n_users: Option<usize>,
        n_sites: Option<usize>,
        vm_cap: Option<u32>,
        cost_weight: Option<f64>,
        degradation: Option<f64>,
        v_max_m_s: Option<f64>,
        slot_s: Option<f64>,
    ) -> PyResult<Self> {
        let mut config = ScenarioConfig::default();
        if let Some(v) = n_users {
            config.n_users = v;
        }
        if let Some(v) = n_sites {
            config.n_sites = v;
        }
        if let Some(v) = vm_cap {
            config.vm_cap = v;
        }
        if let Some(v) = cost_weight {
            config.cost_weight = v;
        }
        if let Some(v) = degradation {
            config.degradation = v;
        }
        if let Some(v) = v_max_m_s {
            config.v_max_m_s = v;
        }
        if let Some(v) = slot_s {
            config.slot_s = v;
        }
        Ok(Self { inner: generate(&config, seed).map_err(py_err)? })
    }

    #[getter]
    fn n_users(&self) -> usize {
        self.inner.instance.n_users()
    }

    #[getter]
    fn n_sites(&self) -> usize {
        self.inner.instance.n_sites()
    }

    /// Association in force when the slot begins.
    #[getter]
    fn initial_serving(&self) -> Vec<usize> {
        self.inner.initial.serving().to_vec()
    }

    /// Full pipeline: relaxation, load rounding, slot matching, local climbs.
    fn solve<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyDict>> {
        let fractional =
            solve_p1_relaxed(&self.inner.instance, &SolverConfig::default()).map_err(py_err)?;
        let (assignment, report) =
            integer_recovery::recover_integer(&self.inner.instance, &fractional).map_err(py_err)?;
        report_dict(py, &report, assignment.serving())
    }

    /// Keeps every user on its starting site.
    fn no_migration<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyDict>> {
        let (assignment, breakdown) =
            oracles::baseline_no_migration(&self.inner.instance).map_err(py_err)?;
        breakdown_dict(py, &breakdown, assignment.serving())
    }

    /// Greedy per-user pick on link rate net of migration cost.
    fn radio_oriented<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyDict>> {
        let (assignment, breakdown) =
            oracles::baseline_radio_oriented(&self.inner.instance).map_err(py_err)?;
        breakdown_dict(py, &breakdown, assignment.serving())
    }

    /// Enumerated optimum; errors when the placement space is too large.
    fn exhaustive<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyDict>> {
        let (assignment, breakdown) =
            oracles::exhaustive_p1(&self.inner.instance).map_err(py_err)?;
        breakdown_dict(py, &breakdown, assignment.serving())
    }

    /// Placement plus explicit per-site block budgets instead of the
    /// whole-band rates; adds `rb_site_usage` to the report.
    fn solve_blocks<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyDict>> {
        let bw = BandwidthInstance::from_scenario(&self.inner).map_err(py_err)?;
        let (fractional, _) =
            bandwidth::solve_bw_relaxed(&bw, &SolverConfig::default()).map_err(py_err)?;
        let (assignment, allocation, report) =
            bandwidth::recover_bw_integer(&bw, &fractional).map_err(py_err)?;
        let dict = report_dict(py, &report, assignment.serving())?;
        dict.set_item("rb_site_usage", allocation.site_usage().to_vec())?;
        Ok(dict)
    }
}

/// Offload dimensioning at one congested site with helper neighbours.
#[pyclass]
struct Hotspot {
    config: HotspotConfig,
}

#[pymethods]
impl Hotspot {
    #[new]
    #[pyo3(signature = (*, rate=None, isolation_rate=None, degradation=None, migration_cost=None, vm_cap=None, cost_weight=None))]
    fn new(
        rate: Option<Vec<f64>>,
        isolation_rate: Option<Vec<f64>>,
        degradation: Option<Vec<f64>>,
        migration_cost: Option<Vec<f64>>,
        vm_cap: Option<Vec<u32>>,
        cost_weight: Option<f64>,
    ) -> Self {
        let mut config = HotspotConfig::default();
        if let Some(v) = rate {
            config.rate = v;
        }
        if let Some(v) = isolation_rate {
            config.isolation_rate = v;
        }
        if let Some(v) = degradation {
            config.degradation = v;
        }
        if let Some(v) = migration_cost {
            config.migration_cost = v;
        }
        if let Some(v) = vm_cap {
            config.vm_cap = v;
        }
        if let Some(v) = cost_weight {
            config.cost_weight = v;
        }
        Self { config }
    }

    /// Population at which the congested site alone stops being optimal.
    fn k_star(&self) -> PyResult<f64> {
        Ok(self.config.instance(1).map_err(py_err)?.k_star())
    }

    fn solve<'py>(&self, py: Python<'py>, k_users: u32) -> PyResult<Bound<'py, PyDict>> {
        let instance = self.config.instance(k_users).map_err(py_err)?;
        let solve = solve_p4(&instance).map_err(py_err)?;
        let dict = PyDict::new(py);
        dict.set_item("loads", solve.loads)?;
        dict.set_item("objective", solve.objective)?;
        dict.set_item("fractional", solve.fractional)?;
        dict.set_item("k_star", solve.k_star)?;
        dict.set_item("regime", solve.regime.to_string())?;
        dict.set_item("converged", solve.converged)?;
        dict.set_item("outer_iterations", solve.outer_iterations)?;
        dict.set_item("residual", solve.residual)?;
        Ok(dict)
    }

    /// Enumerated optimum over all feasible load vectors.
    fn exhaustive(&self, k_users: u32) -> PyResult<(Vec<u32>, f64)> {
        let instance = self.config.instance(k_users).map_err(py_err)?;
        oracles::exhaustive_p4(&instance).map_err(py_err)
    }
}

/// Closest integer loads to a fractional vector, in both the l1 and l2
/// sense, summing to `total` under per-site caps.
#[pyfunction]
fn round_loads(fractional: Vec<f64>, caps: Vec<u32>, total: u32) -> PyResult<Vec<u32>> {
    integer_recovery::round_loads(&fractional, &caps, total).map_err(py_err)
}

/// Max-sum row-to-column assignment of a utility matrix. Returns the
/// column picked for each row and the attained sum.
#[pyfunction]
fn best_matching(utility: Vec<Vec<f64>>) -> PyResult<(Vec<usize>, f64)> {
    let rows = utility.len();
    let cols = utility.first().map_or(0, Vec::len);
    if utility.iter().any(|row| row.len() != cols) {
        return Err(PyValueError::new_err("utility matrix rows have unequal lengths"));
    }
    let matrix = Array2::from_shape_fn((rows, cols), |(i, j)| utility[i][j]);
    let solution = mecmig::hungarian::solve_max(&matrix).map_err(py_err)?;
    let value = (0..rows).map(|i| matrix[[i, solution.row_to_col[i]]]).sum();
    Ok((solution.row_to_col, value))
}

#[pymodule]
fn mecmig_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Scenario>()?;
    m.add_class::<Hotspot>()?;
    m.add_function(wrap_pyfunction!(round_loads, m)?)?;
    m.add_function(wrap_pyfunction!(best_matching, m)?)?;
    Ok(())
}
