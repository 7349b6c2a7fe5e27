use std::fs;

use log::{debug, info};
use rjm::experiment::{self, ExperimentConfig, Method};
use rjm::simgen::{self, Case, Scenario, SimSpec};
use rjm::{em, io, predict, Exec, FitConfig, Psi, Scheme};
use serde_json::json;

use crate::error::{CliError, CliResult};
use crate::manifest::{sibling, ManifestBuilder};
use crate::model::ModelFile;
use crate::{ExperimentArgs, FitArgs, FitOpts, PredictArgs, ScenarioOpts, SelectKArgs, SimulateArgs};

fn parse<T: std::str::FromStr<Err = rjm::RjmError>>(s: &str) -> CliResult<T> {
    Ok(s.parse::<T>()?)
}

fn parse_list<T: std::str::FromStr>(s: &str, what: &str) -> CliResult<Vec<T>> {
    s.split(',')
        .map(str::trim)
        .filter(|t| !t.is_empty())
        .map(|t| t.parse::<T>().map_err(|_| CliError::usage(format!("invalid {what} {t:?}"))))
        .collect()
}

impl FitOpts {
    fn config(&self, k: usize, scheme: Scheme) -> CliResult<FitConfig> {
        let cfg = FitConfig {
            k,
            scheme,
            c: self.c,
            psi: parse::<Psi>(&self.psi)?,
            n_starts: self.starts,
            max_iter: self.max_iter,
            tol: self.tol,
            seed: self.seed,
            ..FitConfig::default()
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

impl ScenarioOpts {
    fn spec(&self, seed: u64) -> CliResult<(SimSpec, Vec<String>)> {
        let scenario: Scenario = parse(&self.scenario)?;
        let case: Case = parse(&self.case)?;
        let mut spec = SimSpec::new(scenario, case, seed);
        spec.correlated = self.correlated;
        if let Some(p) = self.p {
            spec.p = p;
        }
        if let Some(snr) = self.snr {
            spec.snr_target = snr;
        }
        if let Some(s) = self.sparsity {
            spec.sparsity = s;
        }
        if let Some(sizes) = &self.n_per_group {
            spec.n_per_group = parse_list(sizes, "group size")?;
        }
        let mut notes = Vec::new();
        match (&self.cov_dir, scenario) {
            (Some(dir), Scenario::Semisynth) => {
                spec.base_covariances = Some(simgen::load_covariances(dir, spec.k())?);
                notes.push(format!("base covariances read from {}", dir.display()));
            }
            (Some(_), _) => return Err(CliError::usage("--cov-dir only applies to the semisynth scenario")),
            (None, Scenario::Semisynth) => {
                notes.push("no --cov-dir given: using synthetic-fallback covariances".to_string());
            }
            (None, _) => {}
        }
        spec.validate()?;
        Ok((spec, notes))
    }
}

pub fn fit(args: &FitArgs) -> CliResult<()> {
    let cfg = args.fit.config(args.k, parse(&args.scheme)?)?;
    let mut manifest = ManifestBuilder::new("fit", cfg.seed);
    manifest.config(&cfg).input(&args.data);
    let data = io::read_dataset_file(&args.data)?;
    info!("fitting K = {} ({}) to {} rows x {} features", cfg.k, cfg.scheme, data.n(), data.p());
    let progress = |r: &em::IterationRecord| {
        debug!(
            "start {} iteration {}: objective {:.6}, n_k {:?}, {} label changes",
            r.start_index, r.iteration, r.objective, r.n_k, r.label_changes
        );
    };
    let result = em::fit_with_progress(&data, &cfg, Some(&progress))?;

    let model = ModelFile::new(&data, &cfg, &result);
    io::write_json_atomic(&args.out, &model)?;
    let labels_path = sibling(&args.out, "labels.csv");
    io::write_atomic(&labels_path, io::labels_csv(&result.labels).as_bytes())?;
    let trace_path = sibling(&args.out, "trace.csv");
    let mut trace = String::from("iteration,objective,q\n");
    for (t, (l, q)) in result.objective_trace.iter().zip(&result.q_trace).enumerate() {
        trace.push_str(&format!("{},{},{}\n", t + 1, io::fmt_f64(*l), io::fmt_f64(*q)));
    }
    io::write_atomic(&trace_path, trace.as_bytes())?;

    manifest
        .output(&args.out)
        .output(&labels_path)
        .output(&trace_path)
        .settings(json!({ "n": data.n(), "p": data.p(), "selected_start": result.start_index }));
    if !result.converged {
        manifest.note(format!("stopped at the iteration cap ({}) before meeting the tolerance", cfg.max_iter));
    }
    manifest.write(&sibling(&args.out, "manifest.json"))?;
    println!(
        "K = {}: objective {:.4} after {} iterations (start {}, converged: {})",
        cfg.k,
        result.objective(),
        result.iterations,
        result.start_index,
        result.converged
    );
    Ok(())
}

pub fn predict(args: &PredictArgs) -> CliResult<()> {
    let mut manifest = ManifestBuilder::new("predict", 0);
    manifest.input(&args.model).input(&args.data);
    let model: ModelFile = serde_json::from_slice(&fs::read(&args.model)?)?;
    manifest.config(&model.config);
    let x = io::read_features_file(&args.data)?;
    let rows = predict::predict_rows(&x, &model.params)?;

    let k = model.k();
    let mut out = String::from("row,hard_cluster");
    for g in 1..=k {
        out.push_str(&format!(",prob_{g}"));
    }
    out.push_str(",y_hat\n");
    for (i, (alloc, y_hat)) in rows.iter().enumerate() {
        out.push_str(&format!("{},{}", i + 1, alloc.hard + 1));
        for v in alloc.probs.iter() {
            out.push(',');
            out.push_str(&io::fmt_f64(*v));
        }
        out.push(',');
        out.push_str(&io::fmt_f64(*y_hat));
        out.push('\n');
    }
    io::write_atomic(&args.out, out.as_bytes())?;
    manifest.output(&args.out).settings(json!({ "rows": rows.len(), "k": k }));
    manifest.write(&sibling(&args.out, "manifest.json"))?;
    println!("predicted {} rows with a K = {k} model", rows.len());
    Ok(())
}

pub fn simulate(args: &SimulateArgs) -> CliResult<()> {
    let (mut spec, notes) = args.scenario.spec(args.seed)?;
    if let Some(d) = args.d {
        spec.d = d;
        spec.validate()?;
    }
    let mut manifest = ManifestBuilder::new("simulate", args.seed);
    if let Some(dir) = &args.scenario.cov_dir {
        manifest.input(dir);
    }
    for n in notes {
        manifest.note(n);
    }
    let sim = simgen::generate(&spec)?;

    fs::create_dir_all(&args.out_dir)?;
    let data_path = args.out_dir.join("data.csv");
    let labels_path = args.out_dir.join("labels.csv");
    let truth_path = args.out_dir.join("truth.json");
    io::write_atomic(&data_path, io::dataset_csv(&sim.data).as_bytes())?;
    io::write_atomic(&labels_path, io::labels_csv(&sim.labels).as_bytes())?;
    io::write_json_atomic(&truth_path, &sim.truth)?;
    manifest
        .output(&data_path)
        .output(&labels_path)
        .output(&truth_path)
        .settings(serde_json::to_value(&spec)?);
    manifest.write(&args.out_dir.join("manifest.json"))?;
    println!(
        "simulated {} rows x {} features ({} case {}, d = {})",
        sim.data.n(),
        sim.data.p(),
        spec.scenario,
        spec.case,
        spec.d
    );
    Ok(())
}

pub fn experiment(args: &ExperimentArgs) -> CliResult<()> {
    let seed = args.fit.seed;
    let (spec, notes) = args.scenario.spec(seed)?;
    let mut methods: Vec<Method> = parse_list::<Scheme>(&args.schemes, "scheme")?
        .into_iter()
        .map(Method::Rjm)
        .collect();
    for b in parse_list::<Method>(&args.baselines, "baseline")? {
        if matches!(b, Method::Rjm(_)) {
            return Err(CliError::usage(format!("{b} is not a baseline; list it under --schemes")));
        }
        methods.push(b);
    }
    if args.reps == 0 {
        return Err(CliError::usage("--reps must be at least 1"));
    }
    let cfg = ExperimentConfig {
        d_grid: experiment::parse_d_grid(&args.d_grid)?,
        reps: args.reps,
        methods,
        fit: args.fit.config(spec.k(), Scheme::NJ)?,
        seed,
        exec: Exec::default(),
        spec,
    };
    let mut manifest = ManifestBuilder::new("experiment", seed);
    manifest.config(&cfg.fit);
    if let Some(dir) = &args.scenario.cov_dir {
        manifest.input(dir);
    }
    for n in notes {
        manifest.note(n);
    }
    info!(
        "{} grid points x {} reps x {} methods",
        cfg.d_grid.len(),
        cfg.reps,
        cfg.methods.len()
    );
    let rows = experiment::run(&cfg)?;
    let mut buf = Vec::new();
    experiment::write_csv(&rows, &mut buf)?;
    io::write_atomic(&args.out, &buf)?;

    let failed = rows.iter().filter(|r| !r.is_ok()).count();
    manifest.output(&args.out).settings(json!({
        "spec": cfg.spec,
        "d_grid": cfg.d_grid,
        "reps": cfg.reps,
        "methods": cfg.methods.iter().map(|m| m.name()).collect::<Vec<_>>(),
        "rows": rows.len(),
        "failed_rows": failed,
    }));
    manifest.write(&sibling(&args.out, "manifest.json"))?;
    if failed == rows.len() {
        return Err(CliError::AllCellsFailed(args.out.display().to_string()));
    }
    println!("wrote {} rows ({failed} failed) to {}", rows.len(), args.out.display());
    Ok(())
}

pub fn select_k(args: &SelectKArgs) -> CliResult<()> {
    let candidates: Vec<usize> = parse_list(&args.k_candidates, "K candidate")?;
    if candidates.is_empty() || candidates.contains(&0) {
        return Err(CliError::usage("--k-candidates needs one or more positive integers"));
    }
    if !(args.split > 0.0 && args.split < 1.0) {
        return Err(CliError::usage(format!("--split must lie in (0, 1), got {}", args.split)));
    }
    let cfg = args.fit.config(candidates[0], parse(&args.scheme)?)?;
    let mut manifest = ManifestBuilder::new("select-k", cfg.seed);
    manifest.config(&cfg).input(&args.data);
    let data = io::read_dataset_file(&args.data)?;
    let (train, test) = predict::train_test_split(data.n(), args.split, cfg.seed)?;
    let selection = predict::select_k(&data.subset(&train), &data.subset(&test), &candidates, &cfg)?;

    let mut buf = Vec::new();
    predict::write_loss_csv(&selection, &mut buf)?;
    io::write_atomic(&args.out, &buf)?;
    manifest.output(&args.out).settings(json!({
        "k_candidates": candidates,
        "split": args.split,
        "n_train": train.len(),
        "n_test": test.len(),
        "best_k": selection.best_k,
    }));
    for c in selection.losses.iter().filter(|c| c.mean_mse.is_none()) {
        manifest.note(format!("K = {} excluded: {}", c.k, c.note.as_deref().unwrap_or("no usable fit")));
    }
    manifest.write(&sibling(&args.out, "manifest.json"))?;
    println!("best K = {}", selection.best_k);
    Ok(())
}
