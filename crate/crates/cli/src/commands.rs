//! Experiment drivers. Each command computes its results (sweeps in parallel),
//! then writes every file from the calling thread.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use burgers_core::fields::{gaussian_profile_r2, ug_scalar};
use burgers_core::operators::{assemble_l_alpha_3, assemble_l_alpha_h};
use burgers_core::propagate::{
    evolve_linear_2dvec, evolve_nonlinear_2d, evolve_stretched, random_solenoidal_field, EvolveOptions, FittedRate,
    Series, CSV_HEADER,
};
use burgers_core::spectra::{
    classify_modes, compute_spectrum, spectral_gap, transient_growth, GrowthCurve, GrowthOptions, Subspace,
};
use burgers_core::{SpectralGrid, WeightSpec};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::checks::{perturbation, run_criteria, VerifyReport};
use crate::config::{EvolveModel, ExperimentConfig};

/// Writes `name` under `out`, creating the directory, and returns its path.
fn write(out: &Path, name: &str, contents: &str) -> Result<PathBuf> {
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let path = out.join(name);
    fs::write(&path, contents).with_context(|| format!("writing {}", path.display()))?;
    Ok(path)
}

/// Comma-separated table preceded by the versioned header line.
fn table(columns: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(columns)?;
    for row in rows {
        w.write_record(&row)?;
    }
    let body = String::from_utf8(w.into_inner().context("flushing table")?)?;
    Ok(format!("{CSV_HEADER}\n{body}"))
}

fn num(v: f64) -> String {
    format!("{v:.17e}")
}

fn grid(cfg: &ExperimentConfig) -> Result<SpectralGrid> {
    Ok(SpectralGrid::new(cfg.grid.spec())?)
}

/// Samples `g`, `u^g` and the azimuthal velocity `|U^G| = r u^g(r^2)` on `[0, radius]`.
pub fn cmd_profile(cfg: &ExperimentConfig, out: &Path) -> Result<Vec<PathBuf>> {
    let p = &cfg.profile;
    let rows = (0..p.samples).map(|i| {
        let r = p.radius * i as f64 / (p.samples - 1) as f64;
        let ug = ug_scalar(r * r).expect("r^2 >= 0");
        vec![num(r), num(gaussian_profile_r2(r * r)), num(ug), num(r * ug)]
    });
    let csv = table(&["r", "g", "u_g", "u_theta"], rows)?;
    Ok(vec![write(out, "profile.csv", &csv)?])
}

pub fn cmd_spectrum(cfg: &ExperimentConfig, out: &Path) -> Result<Vec<PathBuf>> {
    let g = grid(cfg)?;
    let w = WeightSpec::parse(&cfg.spectrum.weight)?;
    let results: Vec<Result<_>> = cfg
        .spectrum
        .alphas
        .par_iter()
        .map(|&alpha| {
            let h = classify_modes(&compute_spectrum(&assemble_l_alpha_h(&g, alpha)?, true)?, &g, w)?;
            let v = classify_modes(&compute_spectrum(&assemble_l_alpha_3(&g, alpha)?, true)?, &g, w)?;
            let gaps = [
                spectral_gap(&h, &g, Subspace::All)?,
                spectral_gap(&v, &g, Subspace::MeanZero)?,
                spectral_gap(&h, &g, Subspace::DivergenceFree)?,
            ];
            Ok((alpha, h, v, gaps))
        })
        .collect();
    let mut files = Vec::new();
    let mut rows = Vec::new();
    for r in results {
        let (alpha, h, v, gaps) = r?;
        files.push(write(out, &format!("spectrum_h_alpha{alpha}.json"), &h.to_json()?)?);
        files.push(write(out, &format!("spectrum_3_alpha{alpha}.json"), &v.to_json()?)?);
        rows.push(vec![num(alpha), num(gaps[0]), num(gaps[1]), num(gaps[2])]);
    }
    let csv = table(&["alpha", "gap_h", "gap_3", "gap_h_divfree"], rows)?;
    files.push(write(out, "spectrum_summary.csv", &csv)?);
    Ok(files)
}

fn growth_csv(c: &GrowthCurve) -> Result<String> {
    let rows = c.times.iter().zip(&c.gain).zip(&c.k).map(|((t, g), k)| vec![num(*t), num(*g), num(*k)]);
    table(&["t", "gain", "k"], rows)
}

pub fn cmd_growth(cfg: &ExperimentConfig, out: &Path) -> Result<Vec<PathBuf>> {
    let g = grid(cfg)?;
    let gc = &cfg.growth;
    let w = WeightSpec::parse(&gc.weight)?;
    let n = (gc.t_end / gc.dt_out).round() as usize;
    let times: Vec<f64> = (0..=n).map(|i| (i as f64 * gc.dt_out).min(gc.t_end)).collect();
    let opts = GrowthOptions { tol: gc.tol, mean_zero: gc.mean_zero, ..Default::default() };
    let cases: Vec<(f64, f64)> = gc.alphas.iter().flat_map(|&a| gc.k0s.iter().map(move |&k| (a, k))).collect();
    let curves: Vec<Result<GrowthCurve>> =
        cases.par_iter().map(|&(a, k0)| Ok(transient_growth(&g, a, k0, w, &times, &opts)?)).collect();
    let mut files = Vec::new();
    let mut rows = Vec::new();
    for c in curves {
        let c = c?;
        let stem = format!("growth_alpha{}_k{}", c.alpha, c.k0);
        files.push(write(out, &format!("{stem}.json"), &c.to_json()?)?);
        files.push(write(out, &format!("{stem}.csv"), &growth_csv(&c)?)?);
        let (t_max, g_max) = c.max_gain();
        rows.push(vec![num(c.alpha), num(c.k0), num(g_max), num(t_max), num(*c.gain.last().expect("nonempty"))]);
    }
    let csv = table(&["alpha", "k0", "max_gain", "t_max", "final_gain"], rows)?;
    files.push(write(out, "growth_summary.csv", &csv)?);
    Ok(files)
}

pub fn cmd_evolve(cfg: &ExperimentConfig, out: &Path) -> Result<(Vec<PathBuf>, Option<FittedRate>)> {
    let g = grid(cfg)?;
    let e = &cfg.evolve;
    let opts = EvolveOptions {
        dt: e.dt,
        dt_out: e.dt_out,
        weight: WeightSpec::parse(&e.weight)?,
        snapshots: e.snapshots.clone(),
    };
    let mut trace = match e.model {
        EvolveModel::Nonlinear2d => {
            let w0 = perturbation(&g, e.order, e.amplitude, cfg.seed)?;
            evolve_nonlinear_2d(&g, &w0, e.alpha, e.t_end, &opts)?
        }
        EvolveModel::Linear2d | EvolveModel::Stretched => {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            let f = random_solenoidal_field(&g, e.k0, e.order, &mut rng)?;
            let w0 = f.scaled(burgers_core::C64::new(e.amplitude / g.weighted_norm(&f, WeightSpec::Gaussian), 0.0));
            if e.model == EvolveModel::Linear2d {
                evolve_linear_2dvec(&g, &w0, e.alpha, e.t_end, &opts)?
            } else {
                evolve_stretched(&g, &w0, e.k0, e.alpha, e.t_end, &opts)?
            }
        }
    };
    let fit = if e.fit_window.len() == 2 {
        let series = if e.model == EvolveModel::Nonlinear2d { Series::Norm3 } else { Series::Total };
        Some(trace.fit(series, [e.fit_window[0], e.fit_window[1]])?)
    } else {
        None
    };
    let mut files = vec![write(out, "evolution.csv", &trace.to_csv())?, write(out, "evolution.json", &trace.to_json()?)?];
    for s in &trace.snapshots {
        files.push(write(out, &format!("snapshot_t{}.json", s.t), &serde_json::to_string_pretty(&s.field)?)?);
    }
    Ok((files, fit))
}

pub fn cmd_verify(cfg: &ExperimentConfig, out: &Path) -> Result<(VerifyReport, PathBuf)> {
    let report = run_criteria(cfg.grid.spec(), cfg.seed, &cfg.verify.criteria);
    let path = write(out, "verify.json", &report.to_json()?)?;
    Ok((report, path))
}
