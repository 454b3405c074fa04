use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::config::{default_data, default_model, DirKind, RunConfig};
use super::output::{write_json, Envelope, Execution, Hashes, ToolInfo};
use crate::autodiff::{Batch, FlatParams, Graph};
use crate::bench::{
    amdahl_fit, measure, speedup_csv, speedup_with_error, AmdahlFit, ModelWorkload, ScalingRun, SpeedupPoint,
};
use crate::directions::{
    eigen_directions, load_direction, pca_directions, random_direction, save_direction, DirectionPair, PcaOptions,
    Provenance,
};
use crate::landscape::{evaluate_grid, interpolate_minima, GridSpec, InterpolationResult, LandscapeGrid, ModelLoss};
use crate::linalg::DenseMatrix;
use crate::modelzoo::io::{load_manifest, load_params, save_trajectory, Manifest};
use crate::modelzoo::{init_params, train_sgd, DataSpec, Dataset, ModelSpec, Trajectory};
use crate::spectral::{iteration_parallel_slq, HessianOperator, SpectrumEstimate};
use crate::{seed, Error, Result};

/// Runs the command named in `cfg.command`; returns the artifacts written.
pub fn run(cfg: &RunConfig) -> Result<Vec<PathBuf>> {
    cfg.validate()?;
    match cfg.command.as_str() {
        "train" => cmd_train(cfg),
        "landscape" => cmd_landscape(cfg),
        "spectrum" => cmd_spectrum(cfg),
        "interpolate" => cmd_interpolate(cfg),
        "bench" => cmd_bench(cfg),
        other => Err(Error::Config(format!("unknown command `{other}`"))),
    }
}

/// A built model with the dataset it is analysed on.
pub struct ModelContext {
    pub spec: ModelSpec,
    pub data_spec: DataSpec,
    pub graph: Graph,
    pub data: Dataset,
}

impl ModelContext {
    /// Model and data from the config, else from `manifest`, else defaults.
    pub fn resolve(cfg: &RunConfig, manifest: Option<&Manifest>) -> Result<Self> {
        Self::resolve_hashed(cfg, manifest, &mut Hashes::default())
    }

    fn resolve_hashed(cfg: &RunConfig, manifest: Option<&Manifest>, hashes: &mut Hashes) -> Result<Self> {
        let spec = cfg
            .model
            .clone()
            .or_else(|| manifest.and_then(|m| m.model.clone()))
            .unwrap_or_else(default_model);
        let data_spec = cfg
            .data
            .clone()
            .or_else(|| manifest.and_then(|m| m.data.clone()))
            .unwrap_or_else(|| default_data(&spec));
        if let DataSpec::File { path } = &data_spec {
            if !path.exists() {
                return Err(Error::Missing(path.clone()));
            }
            hashes.add(path)?;
        }
        let graph = spec.build()?;
        let data = data_spec.load()?.with_sample_shape(&spec.input_shape())?;
        Ok(Self {
            spec,
            data_spec,
            graph,
            data,
        })
    }

    /// The deterministic data subset used for landscape losses and Hessians.
    pub fn analysis_batches(&self, cfg: &RunConfig) -> Result<Vec<Batch>> {
        self.data
            .subset_batches(cfg.fraction, cfg.seed, cfg.optimizer.batch_size)
    }
}

fn envelope<T>(cfg: &RunConfig, hashes: Hashes, started: Instant, workers: usize, result: T) -> Envelope<T> {
    Envelope {
        tool: ToolInfo::default(),
        config: cfg.clone(),
        inputs: hashes.0,
        execution: Execution {
            workers,
            seconds: started.elapsed().as_secs_f64(),
        },
        result,
    }
}

fn require<'a>(p: &'a Option<PathBuf>, flag: &str) -> Result<&'a Path> {
    p.as_deref()
        .ok_or_else(|| Error::Config(format!("{flag} is required for this command")))
}

fn exists(p: &Path) -> Result<()> {
    if p.exists() {
        Ok(())
    } else {
        Err(Error::Missing(p.to_path_buf()))
    }
}

fn hash_trajectory(dir: &Path, manifest: &Manifest, hashes: &mut Hashes) -> Result<()> {
    hashes.add(&dir.join("manifest.json"))?;
    hashes.add_if_exists(&dir.join("layout.json"))?;
    for e in &manifest.snapshots {
        hashes.add_if_exists(&dir.join(&e.file))?;
    }
    Ok(())
}

fn load_traj(dir: &Path, hashes: &mut Hashes) -> Result<(Trajectory, Manifest)> {
    exists(dir)?;
    let manifest = load_manifest(dir)?;
    let traj = crate::modelzoo::io::load_trajectory(dir)?;
    hash_trajectory(dir, &manifest, hashes)?;
    Ok((traj, manifest))
}

/// The manifest of the trajectory directory holding `checkpoint`, if any.
fn sibling_manifest(checkpoint: &Path, hashes: &mut Hashes) -> Result<Option<Manifest>> {
    let dir = checkpoint.parent().unwrap_or(Path::new("."));
    let path = dir.join("manifest.json");
    if !path.exists() {
        return Ok(None);
    }
    hashes.add(&path)?;
    load_manifest(dir).map(Some)
}

/// A trajectory directory stands for its final snapshot.
fn checkpoint_file(path: &Path) -> Result<PathBuf> {
    exists(path)?;
    if !path.is_dir() {
        return Ok(path.to_path_buf());
    }
    let manifest = load_manifest(path)?;
    let last = manifest
        .snapshots
        .last()
        .ok_or_else(|| Error::Config(format!("{}: trajectory has no snapshots", path.display())))?;
    Ok(path.join(&last.file))
}

fn load_checkpoint(path: &Path, hashes: &mut Hashes) -> Result<FlatParams> {
    exists(path)?;
    let p = load_params(path)?;
    hashes.add(path)?;
    Ok(p)
}

fn cmd_train(cfg: &RunConfig) -> Result<Vec<PathBuf>> {
    let started = Instant::now();
    let mut hashes = Hashes::default();
    let ctx = ModelContext::resolve_hashed(cfg, None, &mut hashes)?;
    let result = train_sgd(&ctx.graph, &ctx.data, &cfg.optimizer);
    let (mut traj, failure) = match result {
        Ok(t) => (t, None),
        Err(Error::Diverged { iteration, partial }) => (*partial, Some(iteration)),
        Err(e) => return Err(e),
    };
    traj.model = Some(ctx.spec.clone());
    traj.data = Some(ctx.data_spec.clone());
    let meta = serde_json::to_value(envelope(cfg, hashes, started, 1, ()))?;
    if traj.is_empty() {
        return Err(Error::Diverged {
            iteration: failure.unwrap_or(0),
            partial: Box::new(traj),
        });
    }
    save_trajectory(&cfg.out, &traj, meta)?;
    let back = crate::modelzoo::io::load_trajectory(&cfg.out)?;
    if back.len() != traj.len() {
        return Err(Error::Config("written trajectory does not read back".into()));
    }
    if let Some(iteration) = failure {
        return Err(Error::Diverged {
            iteration,
            partial: Box::new(traj),
        });
    }
    log::info!(
        "trained {} iterations, final loss {:.4}",
        traj.last().map_or(0, |s| s.iteration),
        traj.last().map_or(f64::NAN, |s| s.loss)
    );
    Ok(vec![cfg.out.join("manifest.json")])
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LandscapeOutput {
    #[serde(flatten)]
    pub grid: LandscapeGrid,
    /// Eigenvalues of the Hessian along φ₁, φ₂ for eigenvector planes.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eigenvalues: Option<Vec<f64>>,
}

fn cmd_landscape(cfg: &RunConfig) -> Result<Vec<PathBuf>> {
    let started = Instant::now();
    let mut hashes = Hashes::default();
    let dir = require(&cfg.inputs.traj, "--traj")?;
    let (traj, manifest) = load_traj(dir, &mut hashes)?;
    let ctx = ModelContext::resolve_hashed(cfg, Some(&manifest), &mut hashes)?;
    let center = &traj.last().expect("validated trajectory").params;
    center.ensure_layout(ctx.graph.layout())?;
    let layout = ctx.graph.layout();
    let batches = ctx.analysis_batches(cfg)?;

    let mut eigenvalues = None;
    let dirs = match cfg.directions.kind {
        DirKind::Pca => pca_directions(
            &traj,
            PcaOptions {
                centered: cfg.directions.centered,
            },
        )?,
        DirKind::Random => DirectionPair::new(
            random_direction(layout, seed::derive(cfg.seed, "plane", 0)),
            random_direction(layout, seed::derive(cfg.seed, "plane", 1)),
            Provenance::Random,
        )?,
        DirKind::Eigen => {
            let op = HessianOperator::new(&ctx.graph, center, &batches, cfg.workers)?;
            let m = cfg.spectrum.m.min(center.len());
            let pairs = eigen_directions(&op, layout, 2, m, cfg.seed)?;
            eigenvalues = Some(pairs.iter().map(|p| p.eigenvalue).collect());
            let mut it = pairs.into_iter();
            let (p1, p2) = (it.next().expect("two"), it.next().expect("two"));
            DirectionPair::new(p1.direction, p2.direction, Provenance::Eigen)?
        }
        DirKind::User => {
            let files = &cfg.directions.files;
            if files.len() != 2 {
                return Err(Error::Config("--dirs user needs two --dir-files".into()));
            }
            let mut load = |p: &Path| -> Result<_> {
                exists(p)?;
                hashes.add(p)?;
                let d = load_direction(p)?;
                d.ensure_layout(layout)?;
                Ok(d)
            };
            let (a, b) = (load(&files[0])?, load(&files[1])?);
            DirectionPair::new(a, b, Provenance::User)?
        }
    };
    let dirs = if cfg.directions.raw {
        dirs
    } else {
        dirs.normalize_with(center, cfg.directions.degenerate)?
    };
    let loss = ModelLoss::new(&ctx.graph, batches)?;
    let spec = GridSpec {
        n: cfg.grid.n,
        border: cfg.grid.border,
        workers: cfg.workers,
    };
    let grid = evaluate_grid(&loss, &traj, &dirs, &spec)?;

    fs::create_dir_all(&cfg.out)?;
    let json_path = cfg.out.join("landscape.json");
    let csv_path = cfg.out.join("landscape.csv");
    fs::write(&csv_path, grid.to_csv())?;
    save_direction(&cfg.out.join("phi1.gvck"), &dirs.phi1)?;
    save_direction(&cfg.out.join("phi2.gvck"), &dirs.phi2)?;
    let out = LandscapeOutput { grid, eigenvalues };
    let back = write_json(&json_path, &envelope(cfg, hashes, started, cfg.workers, out))?;
    if back.result.grid.z.len() != cfg.grid.n * cfg.grid.n {
        return Err(Error::Config("landscape grid did not validate".into()));
    }
    Ok(vec![json_path, csv_path])
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IterationSpectrum {
    pub iteration: usize,
    pub spectrum: SpectrumEstimate,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum SpectrumOutput {
    Single(SpectrumEstimate),
    Series(Vec<IterationSpectrum>),
}

/// Reads a symmetric matrix stored as a JSON array of rows.
pub fn load_operator(path: &Path) -> Result<DenseMatrix> {
    exists(path)?;
    let rows: Vec<Vec<f64>> = serde_json::from_str(&fs::read_to_string(path)?)?;
    let n = rows.len();
    if rows.iter().any(|r| r.len() != n) {
        return Err(Error::Shape(format!("operator file {} is not square", path.display())));
    }
    let m = DenseMatrix::from_row_major(n, rows.concat())?;
    let scale = m.as_slice().iter().fold(0.0f64, |a, v| a.max(v.abs()));
    if m.max_asymmetry() > 1e-12 * scale {
        return Err(Error::Shape(format!(
            "operator file {} is not symmetric",
            path.display()
        )));
    }
    Ok(m)
}

fn cmd_spectrum(cfg: &RunConfig) -> Result<Vec<PathBuf>> {
    let started = Instant::now();
    let mut hashes = Hashes::default();
    let slq = cfg.spectrum.slq(cfg.seed);
    let output = if let Some(path) = &cfg.inputs.operator_file {
        let m = load_operator(path)?;
        hashes.add(path)?;
        SpectrumOutput::Single(iteration_parallel_slq(&m, &slq, cfg.workers)?)
    } else {
        let (targets, manifest): (Vec<(usize, FlatParams)>, Option<Manifest>) = if let Some(ck) = &cfg.inputs.checkpoint
        {
            let ck = &checkpoint_file(ck)?;
            let params = load_checkpoint(ck, &mut hashes)?;
            let manifest = sibling_manifest(ck, &mut hashes)?;
            let iteration = manifest
                .as_ref()
                .and_then(|m| {
                    let name = ck.file_name()?.to_str()?;
                    m.snapshots.iter().find(|e| e.file == name).map(|e| e.iteration)
                })
                .unwrap_or(0);
            (vec![(iteration, params)], manifest)
        } else {
            let dir = require(&cfg.inputs.traj, "--checkpoint, --traj or --operator-file")?;
            let (traj, manifest) = load_traj(dir, &mut hashes)?;
            let mut snaps: Vec<_> = traj.snapshots.into_iter().map(|s| (s.iteration, s.params)).collect();
            if !cfg.spectrum.every_checkpoint {
                snaps = snaps.split_off(snaps.len() - 1);
            }
            (snaps, Some(manifest))
        };
        let ctx = ModelContext::resolve_hashed(cfg, manifest.as_ref(), &mut hashes)?;
        let batches = ctx.analysis_batches(cfg)?;
        let mut series = Vec::with_capacity(targets.len());
        for (iteration, params) in &targets {
            let op = HessianOperator::new(&ctx.graph, params, &batches, 1)?;
            let spectrum = iteration_parallel_slq(&op, &slq, cfg.workers)?;
            log::info!(
                "iteration {iteration}: support [{:.4}, {:.4}]",
                spectrum.support[0],
                spectrum.support[1]
            );
            series.push(IterationSpectrum {
                iteration: *iteration,
                spectrum,
            });
        }
        if cfg.spectrum.every_checkpoint {
            SpectrumOutput::Series(series)
        } else {
            SpectrumOutput::Single(series.pop().expect("one target").spectrum)
        }
    };
    let path = cfg.out.join("spectrum.json");
    write_json(&path, &envelope(cfg, hashes, started, cfg.workers, output))?;
    Ok(vec![path])
}

fn cmd_interpolate(cfg: &RunConfig) -> Result<Vec<PathBuf>> {
    let started = Instant::now();
    let mut hashes = Hashes::default();
    let a_path = &checkpoint_file(require(&cfg.inputs.a, "--a")?)?;
    let b_path = &checkpoint_file(require(&cfg.inputs.b, "--b")?)?;
    let a = load_checkpoint(a_path, &mut hashes)?;
    let b = load_checkpoint(b_path, &mut hashes)?;
    b.ensure_layout(a.layout())?;
    let manifest = match &cfg.inputs.traj {
        Some(dir) => Some(load_traj(dir, &mut hashes)?.1),
        None => sibling_manifest(a_path, &mut hashes)?,
    };
    let ctx = ModelContext::resolve_hashed(cfg, manifest.as_ref(), &mut hashes)?;
    a.ensure_layout(ctx.graph.layout())?;
    let batches = ctx.analysis_batches(cfg)?;
    let loss = ModelLoss::new(&ctx.graph, batches.clone())?;
    let slq = cfg.spectrum.slq(cfg.seed);
    let spectrum = |theta: &FlatParams| -> Result<SpectrumEstimate> {
        let op = HessianOperator::new(&ctx.graph, theta, &batches, 1)?;
        iteration_parallel_slq(&op, &slq, cfg.workers)
    };
    let result: InterpolationResult = interpolate_minima(
        &loss,
        &a,
        &b,
        cfg.interpolation.points,
        cfg.interpolation.spectra.then_some(&spectrum as _),
    )?;
    let path = cfg.out.join("interpolation.json");
    write_json(&path, &envelope(cfg, hashes, started, cfg.workers, result))?;
    Ok(vec![path])
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScalingOutput {
    pub run: ScalingRun,
    pub points: Vec<SpeedupPoint>,
    pub fit: Option<AmdahlFit>,
    /// Task outputs agreed exactly across all worker counts.
    pub results_identical: bool,
}

fn cmd_bench(cfg: &RunConfig) -> Result<Vec<PathBuf>> {
    let started = Instant::now();
    let mut hashes = Hashes::default();
    let (params, manifest) = match &cfg.inputs.traj {
        Some(dir) => {
            let (traj, manifest) = load_traj(dir, &mut hashes)?;
            (traj.last().map(|s| s.params.clone()), Some(manifest))
        }
        None => (None, None),
    };
    let ctx = ModelContext::resolve_hashed(cfg, manifest.as_ref(), &mut hashes)?;
    let params = params.unwrap_or_else(|| init_params(ctx.graph.layout(), cfg.seed));
    let batches = ctx.analysis_batches(cfg)?;
    let task = cfg.bench.task;
    let workload = ModelWorkload::new(ctx.graph, params, batches, cfg.grid.n, cfg.spectrum.slq(cfg.seed))?;

    let mut outputs: Vec<String> = Vec::new();
    let json_path = cfg.out.join("scaling.json");
    let csv_path = cfg.out.join("scaling.csv");
    let measured = measure(task, &cfg.bench.worker_counts, cfg.bench.repeats, |p| {
        let r = workload.run(task, p)?;
        if outputs.last() != Some(&r) {
            outputs.push(r);
        }
        Ok(())
    });
    let run = match measured {
        Ok(r) => r,
        Err(Error::BenchAborted {
            workers,
            message,
            partial,
        }) => {
            let partial_out = ScalingOutput {
                run: (*partial).clone(),
                points: Vec::new(),
                fit: None,
                results_identical: false,
            };
            write_json(&json_path, &envelope(cfg, hashes, started, 0, partial_out))?;
            return Err(Error::BenchAborted {
                workers,
                message,
                partial,
            });
        }
        Err(e) => return Err(e),
    };
    let points = if run.worker_counts.contains(&1) && run.repeats >= 2 {
        speedup_with_error(&run)?
    } else {
        Vec::new()
    };
    let distinct = {
        let mut ps: Vec<usize> = points.iter().map(|q| q.p).collect();
        ps.sort_unstable();
        ps.dedup();
        ps.len()
    };
    let fit = if distinct >= 2 {
        Some(amdahl_fit(&points)?)
    } else {
        None
    };
    if let Some(f) = &fit {
        log::info!("Amdahl fit: f = {:.4} ± {:.4}", f.f, f.f_std);
    }
    fs::create_dir_all(&cfg.out)?;
    fs::write(&csv_path, speedup_csv(&points))?;
    let out = ScalingOutput {
        run,
        points,
        fit,
        results_identical: outputs.len() <= 1,
    };
    write_json(&json_path, &envelope(cfg, hashes, started, 0, out))?;
    Ok(vec![json_path, csv_path])
}
