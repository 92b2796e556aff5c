use std::path::{Path, PathBuf};

use ltpdpm::basis::BasisSet;
use ltpdpm::bundle::Bundle;
use ltpdpm::export::{json_number, site_geojson, write_hotspot, write_json, write_site_csv, write_skill_csv};
use ltpdpm::hotspot::estimate_hotspot;
use ltpdpm::ingest::{
    load_covariate, load_dataset_with_period, write_covariate, write_dataset, year_week_to_time, CovariateSeries,
    GriddedDataset,
};
use ltpdpm::model::ModelParams;
use ltpdpm::predict::{
    decadal_rate_of_change, exceedance_from_ensemble, overall_decadal_rate_of_change, posterior_predictive,
    return_level, sites_within_km, SiteSummary, Threshold,
};
use ltpdpm::sampler::diagnostics::{diagnostics, write_summary_csv, write_traces_csv, DEFAULT_ESS_THRESHOLD};
use ltpdpm::sampler::store::{read_samples, write_samples};
use ltpdpm::sampler::{gibbs_fit, PosteriorSamples};
use ltpdpm::score::{chronological_split, score_model, skill_table, threshold_levels};
use ltpdpm::synthetic::simulate_scenario;
use serde_json::json;

use crate::config::{resolve, RunConfig};
use crate::manifest::{relative_to, write_manifest, ArtifactHashes};
use crate::{CliError, Command};

/// Resolved configuration with absolute artifact paths.
pub struct Context {
    pub cfg: RunConfig,
    pub dataset: PathBuf,
    pub covariate: PathBuf,
    pub basis: PathBuf,
    pub samples: PathBuf,
    pub out: PathBuf,
}

impl Context {
    pub fn new(cfg: RunConfig, base: &Path) -> Result<Self, CliError> {
        let p = &cfg.paths;
        Ok(Context {
            dataset: resolve(base, &p.dataset),
            covariate: resolve(base, &p.covariate),
            basis: resolve(base, &p.basis),
            samples: resolve(base, &p.samples),
            out: resolve(base, &p.output),
            cfg,
        })
    }

    /// The config as echoed into the output directory, its paths rewritten
    /// relative to that directory.
    fn echo(&self) -> RunConfig {
        let mut c = self.cfg.clone();
        c.paths.dataset = relative_to(&self.dataset, &self.out);
        c.paths.covariate = relative_to(&self.covariate, &self.out);
        c.paths.basis = relative_to(&self.basis, &self.out);
        c.paths.samples = relative_to(&self.samples, &self.out);
        c.paths.output = ".".into();
        c
    }

    fn out_file(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }

    fn create_out(&self) -> Result<(), CliError> {
        std::fs::create_dir_all(&self.out).map_err(|e| io(&self.out, e))
    }

    fn data(&self) -> Result<GriddedDataset, CliError> {
        require(&self.dataset)?;
        let fmt = self.cfg.dataset_format()?;
        Ok(load_dataset_with_period(&self.dataset, fmt, self.cfg.model.weeks_per_year)?)
    }

    fn cov(&self) -> Result<CovariateSeries, CliError> {
        require(&self.covariate)?;
        Ok(load_covariate(&self.covariate)?)
    }

    fn basis_set(&self) -> Result<BasisSet, CliError> {
        require(&self.basis)?;
        Ok(BasisSet::from_bundle(&Bundle::read(&self.basis)?)?)
    }

    fn posterior(&self) -> Result<PosteriorSamples, CliError> {
        require(&self.samples.join(ltpdpm::sampler::store::MANIFEST))?;
        Ok(read_samples(&self.samples)?)
    }

    /// Target time from `task.t0` or `task.year` + `task.week`.
    fn target_time(&self, cov: &CovariateSeries, weeks_per_year: usize) -> Result<usize, CliError> {
        let t = &self.cfg.task;
        match (t.t0, t.year, t.week) {
            (Some(t0), None, None) if t0 >= 1 => Ok(t0),
            (None, Some(y), Some(w)) if (1..=weeks_per_year).contains(&w) => {
                Ok(year_week_to_time(cov.index_of_year(y)?, w, weeks_per_year))
            }
            _ => Err(CliError::Usage(format!(
                "give either task.t0 >= 1 or task.year with task.week in 1..={weeks_per_year}"
            ))),
        }
    }

    fn site_set(&self, coords: &[(f64, f64)]) -> Result<Option<Vec<usize>>, CliError> {
        let t = &self.cfg.task;
        if let Some(sites) = &t.d0_sites {
            if let Some(bad) = sites.iter().find(|s| **s >= coords.len()) {
                return Err(CliError::Usage(format!("D0 site {bad} outside 0..{}", coords.len())));
            }
            let mut s = sites.clone();
            s.sort_unstable();
            s.dedup();
            return Ok(Some(s));
        }
        match t.d0_center {
            Some([lon, lat]) => Ok(Some(sites_within_km(coords, (lon, lat), t.d0_radius_km.unwrap_or(0.0))?)),
            None => Ok(None),
        }
    }

    fn finish(&self, command: &str, inputs: &[&Path], outputs: &[PathBuf]) -> Result<(), CliError> {
        let mut ih = ArtifactHashes::new(&self.out);
        for p in inputs {
            ih.add(p)?;
        }
        let mut oh = ArtifactHashes::new(&self.out);
        for p in outputs {
            oh.add(p)?;
        }
        write_manifest(&self.out, command, &self.echo(), &ih, &oh)
    }
}

fn io(path: &Path, e: std::io::Error) -> CliError {
    CliError::Module(ltpdpm::Error::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

fn require(path: &Path) -> Result<(), CliError> {
    if path.exists() {
        Ok(())
    } else {
        Err(CliError::Usage(format!("input {} does not exist", path.display())))
    }
}

fn create_parent(path: &Path) -> Result<(), CliError> {
    match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => std::fs::create_dir_all(d).map_err(|e| io(d, e)),
        _ => Ok(()),
    }
}

pub fn dispatch(ctx: &Context, command: &Command) -> Result<String, CliError> {
    ctx.create_out()?;
    match command {
        Command::Simulate => simulate(ctx),
        Command::PrepareBasis => prepare_basis(ctx),
        Command::Fit { .. } => fit(ctx),
        Command::Diagnose => diagnose(ctx),
        Command::Predict(_) => predict(ctx),
        Command::Hotspot(_) => hotspot(ctx),
        Command::Score { .. } => score(ctx),
    }
}

fn simulate(ctx: &Context) -> Result<String, CliError> {
    let sc = &ctx.cfg.simulate;
    if sc.weeks_per_year != ctx.cfg.model.weeks_per_year {
        return Err(CliError::Usage(format!(
            "simulate.weeks_per_year = {} differs from model.weeks_per_year = {}",
            sc.weeks_per_year, ctx.cfg.model.weeks_per_year
        )));
    }
    let scenario = simulate_scenario(sc)?;
    create_parent(&ctx.dataset)?;
    create_parent(&ctx.covariate)?;
    write_dataset(&scenario.data, &ctx.dataset, ctx.cfg.dataset_format()?)?;
    write_covariate(&scenario.covariate, &ctx.covariate)?;
    let truth = ctx.out_file("truth_params.bin");
    scenario.params.to_bundle().write(&truth)?;
    let truth_basis = ctx.out_file("truth_basis.bin");
    scenario.basis.to_bundle().write(&truth_basis)?;
    let latent = ctx.out_file("truth_latent.csv");
    let mut rows = String::from("t,label,sigma2\n");
    for (t, (g, s2)) in scenario.latent.labels.iter().zip(&scenario.latent.sigma2).enumerate() {
        rows.push_str(&format!("{},{},{}\n", t + 1, g + 1, s2));
    }
    std::fs::write(&latent, rows).map_err(|e| io(&latent, e))?;
    let outputs = vec![ctx.dataset.clone(), ctx.covariate.clone(), truth, truth_basis, latent];
    ctx.finish("simulate", &[], &outputs)?;
    Ok(format!(
        "simulated {} sites x {} weeks into {}",
        scenario.data.n_sites(),
        scenario.data.n_weeks(),
        ctx.dataset.display()
    ))
}

fn prepare_basis(ctx: &Context) -> Result<String, CliError> {
    let data = ctx.data()?;
    let cov = ctx.cov()?;
    let basis = BasisSet::prepare(&data, &cov, &ctx.cfg.model.basis_config())?;
    create_parent(&ctx.basis)?;
    basis.to_bundle().write(&ctx.basis)?;
    let summary = ctx.out_file("basis_summary.json");
    write_json(
        &summary,
        &json!({
            "n_sites": basis.n_sites(),
            "fit_years": basis.fit_years(),
            "weeks_per_year": basis.weeks_per_year(),
            "p_t": basis.p_t(),
            "p_s": basis.p_s(),
            "l": basis.rank(),
            "eigenvalues": basis.delta.as_slice(),
            "retained_columns": basis.retained,
        }),
    )?;
    ctx.finish("prepare-basis", &[&ctx.dataset, &ctx.covariate], &[ctx.basis.clone(), summary])?;
    Ok(format!(
        "basis with P_T = {}, P_S = {}, L = {} written to {}",
        basis.p_t(),
        basis.p_s(),
        basis.rank(),
        ctx.basis.display()
    ))
}

fn fit(ctx: &Context) -> Result<String, CliError> {
    let data = ctx.data()?;
    let basis = ctx.basis_set()?;
    let mcmc = ctx.cfg.mcmc_config();
    mcmc.validate()?;
    let samples = gibbs_fit(&data, &basis, &mcmc)?;
    if samples.is_empty() {
        return Err(CliError::Usage("the configuration retains no draws".into()));
    }
    write_samples(&samples, &ctx.samples)?;
    let summary = ctx.out_file("fit_summary.json");
    let n = samples.len() as f64;
    let min_df: Vec<f64> = samples
        .draws
        .iter()
        .map(|d| d.params.clusters.iter().map(|c| c.a()).fold(f64::INFINITY, f64::min))
        .collect();
    write_json(
        &summary,
        &json!({
            "draws": samples.len(),
            "k": mcmc.k,
            "fixed_df": mcmc.fixed_df,
            "mean_log_likelihood": samples.draws.iter().map(|d| d.log_likelihood).sum::<f64>() / n,
            "mean_log_posterior": samples.draws.iter().map(|d| d.log_posterior).sum::<f64>() / n,
            "mean_min_df": min_df.iter().sum::<f64>() / n,
        }),
    )?;
    ctx.finish("fit", &[&ctx.dataset, &ctx.basis], &[ctx.samples.clone(), summary])?;
    Ok(format!("{} posterior draws written to {}", samples.len(), ctx.samples.display()))
}

fn diagnose(ctx: &Context) -> Result<String, CliError> {
    let samples = ctx.posterior()?;
    let rows = diagnostics(&samples, DEFAULT_ESS_THRESHOLD)?;
    let summary = ctx.out_file("diagnostics.csv");
    write_summary_csv(&rows, &summary)?;
    let traces = ctx.out_file("traces.csv");
    write_traces_csv(&samples, &traces)?;
    ctx.finish("diagnose", &[&ctx.samples], &[summary, traces])?;
    let flagged = rows.iter().filter(|r| r.flagged).count();
    Ok(format!("{} traces summarized, {flagged} flagged", rows.len()))
}

fn summary_csv(path: &Path, s: &SiteSummary, draws: usize) -> Result<(), CliError> {
    let se: Vec<f64> = s.sd.iter().map(|v| v / (draws as f64).sqrt()).collect();
    Ok(write_site_csv(
        path,
        &[("value", s.mean.as_slice()), ("mc_se", &se), ("t_stat", s.t_stat.as_slice())],
    )?)
}

fn predict(ctx: &Context) -> Result<String, CliError> {
    let data = ctx.data()?;
    let cov = ctx.cov()?;
    let basis = ctx.basis_set()?;
    let samples = ctx.posterior()?;
    if data.n_sites() != basis.n_sites() {
        return Err(CliError::Usage("dataset and basis disagree on the number of sites".into()));
    }
    let t0 = ctx.target_time(&cov, basis.weeks_per_year())?;
    let d0 = ctx.site_set(data.coords())?;
    let mode = ctx.cfg.exceedance_mode()?;
    let threshold = match (ctx.cfg.task.u, ctx.cfg.task.p) {
        (Some(_), Some(_)) => return Err(CliError::Usage("give task.u or task.p, not both".into())),
        (Some(u), None) => Some(Threshold::Fixed(u)),
        (None, Some(p)) => Some(Threshold::Quantile(p)),
        (None, None) => None,
    };
    let ens = posterior_predictive(&samples, &basis, &cov, t0, ctx.cfg.seed)?;
    let b = ens.len() as f64;
    let mut outputs = Vec::new();

    let mean_se: Vec<f64> = ens.sd.iter().map(|s| s / b.sqrt()).collect();
    let sd_se: Vec<f64> = ens.sd.iter().map(|s| s / (2.0 * (b - 1.0)).sqrt()).collect();
    let p = ctx.out_file("predictive_mean.csv");
    write_site_csv(&p, &[("value", ens.mean.as_slice()), ("mc_se", &mean_se)])?;
    outputs.push(p);
    let p = ctx.out_file("predictive_sd.csv");
    write_site_csv(&p, &[("value", ens.sd.as_slice()), ("mc_se", &sd_se)])?;
    outputs.push(p);
    let p = ctx.out_file("predictive_draws.csv");
    let mut text = String::from("row,draw");
    for n in 0..ens.n_sites() {
        text.push_str(&format!(",site_{n}"));
    }
    text.push('\n');
    for r in 0..ens.len() {
        text.push_str(&format!("{},{}", r, ens.draw_of_row[r]));
        for v in ens.values.row(r).iter() {
            text.push_str(&format!(",{v}"));
        }
        text.push('\n');
    }
    std::fs::write(&p, text).map_err(|e| io(&p, e))?;
    outputs.push(p);
    let p = ctx.out_file("predictive.geojson");
    let geo = site_geojson(
        data.coords(),
        ens.mean.as_slice(),
        &[
            ("sd", ens.sd.iter().map(|v| json_number(*v)).collect()),
            ("mc_se", mean_se.iter().map(|v| json_number(*v)).collect()),
        ],
    )?;
    write_json(&p, &geo)?;
    outputs.push(p);

    let drc = match ctx.cfg.task.drc_week {
        Some(w) if w > 0 => decadal_rate_of_change(&samples, &basis, &cov, w)?,
        _ => overall_decadal_rate_of_change(&samples, &basis, &cov)?,
    };
    let p = ctx.out_file("drc.csv");
    summary_csv(&p, &drc, samples.len())?;
    outputs.push(p);

    let mut summary = serde_json::Map::new();
    summary.insert("t0".into(), json!(t0));
    summary.insert("year_index".into(), json!(ens.year));
    summary.insert("week".into(), json!(ens.week));
    summary.insert("draws".into(), json!(ens.len()));

    if let Some(t0_years) = ctx.cfg.task.return_period {
        let reference = match ctx.cfg.task.reference_year {
            Some(y) => y,
            None => cov.years()[0] + ens.year as i64 - 1,
        };
        let levels = (0..basis.n_sites())
            .map(|n| return_level(&samples, &basis, &cov, n, ens.week, t0_years, reference))
            .collect::<ltpdpm::Result<Vec<_>>>()?;
        let value: Vec<f64> = levels.iter().map(|r| r.mean).collect();
        let se: Vec<f64> = levels.iter().map(|r| r.sd / (samples.len() as f64).sqrt()).collect();
        let p = ctx.out_file("return_levels.csv");
        write_site_csv(&p, &[("value", &value), ("mc_se", &se)])?;
        outputs.push(p);
        summary.insert("return_period".into(), json!(t0_years));
        summary.insert("reference_year".into(), json!(reference));
    }

    if let Some(th) = threshold {
        let params: Vec<&ModelParams> = samples.draws.iter().map(|d| &d.params).collect();
        let mut value = Vec::with_capacity(basis.n_sites());
        let mut se = Vec::with_capacity(basis.n_sites());
        for n in 0..basis.n_sites() {
            let e = exceedance_from_ensemble(&ens, &params, &basis, &[n], th, mode)?;
            value.push(e.probability);
            se.push(e.mc_se);
        }
        let p = ctx.out_file("exceedance_sites.csv");
        write_site_csv(&p, &[("value", &value), ("mc_se", &se)])?;
        outputs.push(p);
        let p = ctx.out_file("exceedance.geojson");
        write_json(
            &p,
            &site_geojson(data.coords(), &value, &[("mc_se", se.iter().map(|v| json_number(*v)).collect())])?,
        )?;
        outputs.push(p);
        if let Some(d0) = &d0 {
            let e = exceedance_from_ensemble(&ens, &params, &basis, d0, th, mode)?;
            let (kind, level) = match th {
                Threshold::Fixed(u) => ("fixed", u),
                Threshold::Quantile(p) => ("quantile", p),
            };
            summary.insert(
                "joint_exceedance".into(),
                json!({
                    "mode": ctx.cfg.task.mode,
                    "threshold": kind,
                    "level": level,
                    "sites": d0,
                    "probability": e.probability,
                    "mc_se": e.mc_se,
                }),
            );
        }
    }
    let p = ctx.out_file("predict_summary.json");
    write_json(&p, &summary)?;
    outputs.push(p);
    ctx.finish("predict", &[&ctx.dataset, &ctx.covariate, &ctx.basis, &ctx.samples], &outputs)?;
    Ok(format!("predictive ensemble of {} fields at t0 = {t0} written to {}", ens.len(), ctx.out.display()))
}

fn hotspot(ctx: &Context) -> Result<String, CliError> {
    let data = ctx.data()?;
    let cov = ctx.cov()?;
    let basis = ctx.basis_set()?;
    let samples = ctx.posterior()?;
    if data.n_sites() != basis.n_sites() {
        return Err(CliError::Usage("dataset and basis disagree on the number of sites".into()));
    }
    let t0 = ctx.target_time(&cov, basis.weeks_per_year())?;
    let u = ctx.cfg.task.u.ok_or_else(|| CliError::Usage("hotspot needs a threshold task.u".into()))?;
    let result = estimate_hotspot(&samples, &basis, &cov, t0, u, ctx.cfg.task.alpha, ctx.cfg.seed)?;
    write_hotspot(&ctx.out, &result, data.coords())?;
    let outputs: Vec<PathBuf> = ["hotspot_sites.csv", "hotspot.geojson", "hotspot_summary.json"]
        .iter()
        .map(|n| ctx.out_file(n))
        .collect();
    ctx.finish("hotspot", &[&ctx.dataset, &ctx.covariate, &ctx.basis, &ctx.samples], &outputs)?;
    Ok(format!(
        "hotspot region of {} sites (critical value {}) written to {}",
        result.region.len(),
        result.critical_value,
        ctx.out.display()
    ))
}

fn score(ctx: &Context) -> Result<String, CliError> {
    let data = ctx.data()?;
    let cov = ctx.cov()?;
    let cut = ctx.cfg.task.cut.ok_or_else(|| CliError::Usage("score needs task.cut".into()))?;
    let (train, test) = chronological_split(&data, cut)?;
    let basis = BasisSet::prepare(&train, &cov, &ctx.cfg.model.basis_config())?;
    let t = &ctx.cfg.task;
    let levels = threshold_levels(train.values(), t.level_lo, t.level_hi, t.level_steps)?;

    let mut model_cfg = ctx.cfg.clone();
    model_cfg.model.lgp = false;
    let mut bench_cfg = ctx.cfg.clone();
    bench_cfg.model.lgp = true;
    let model_samples = gibbs_fit(&train, &basis, &model_cfg.mcmc_config())?;
    let bench_samples = gibbs_fit(&train, &basis, &bench_cfg.mcmc_config())?;
    let model = score_model(&model_samples, &basis, &cov, &test, cut + 1, &levels, ctx.cfg.seed)?;
    let bench = score_model(&bench_samples, &basis, &cov, &test, cut + 1, &levels, ctx.cfg.seed)?;
    let rows = skill_table("LTP-DPM", &model, &bench)?;

    let skill = ctx.out_file("skill.csv");
    write_skill_csv(&skill, &rows)?;
    let scores = ctx.out_file("scores.json");
    write_json(
        &scores,
        &json!({
            "cut": cut,
            "train_weeks": train.n_weeks(),
            "test_weeks": test.n_weeks(),
            "model": model,
            "benchmark": bench,
        }),
    )?;
    ctx.finish("score", &[&ctx.dataset, &ctx.covariate], &[skill, scores])?;
    let positive = rows.iter().filter(|r| r.bss > 0.0 && r.twcrpss > 0.0).count();
    Ok(format!(
        "skill at {} levels, {positive} with both skill scores positive; written to {}",
        rows.len(),
        ctx.out.display()
    ))
}
