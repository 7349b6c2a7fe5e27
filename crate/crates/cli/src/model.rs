//! On-disk form of a fitted model.

use rjm::{ClusterParams, Dataset, FitConfig, FitResult};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelFile {
    pub library_version: String,
    pub config: FitConfig,
    pub n: usize,
    pub p: usize,
    pub feature_names: Option<Vec<String>>,
    /// Multi-start run that was kept.
    pub selected_start: usize,
    pub iterations: usize,
    pub converged: bool,
    /// Final observed-data log posterior of the kept run.
    pub objective: f64,
    pub refit_iteration: Option<usize>,
    pub objective_trace: Vec<f64>,
    pub q_trace: Vec<f64>,
    pub params: Vec<ClusterParams>,
}

impl ModelFile {
    pub fn new(data: &Dataset, config: &FitConfig, fit: &FitResult) -> Self {
        Self {
            library_version: rjm::VERSION.to_string(),
            config: config.clone(),
            n: data.n(),
            p: data.p(),
            feature_names: data.feature_names().map(<[String]>::to_vec),
            selected_start: fit.start_index,
            iterations: fit.iterations,
            converged: fit.converged,
            objective: fit.objective(),
            refit_iteration: fit.refit_iteration,
            objective_trace: fit.objective_trace.clone(),
            q_trace: fit.q_trace.clone(),
            params: fit.params.clone(),
        }
    }

    pub fn k(&self) -> usize {
        self.params.len()
    }
}
