use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use sgvf::config::{RunConfig, ScenarioData};
use sgvf::datasets::{load_csv, save_csv, PointCloud};
use sgvf::field::{
    ablation_proxies, diagnose as run_diagnostics, scan_grid, AblationProxies, FieldGrid, Lyapunov,
    MixedField, Resolution,
};
use sgvf::nn::{load_checkpoint, save_checkpoint, Checkpoint, CheckpointMeta, ModelKind};
use sgvf::rng;
use sgvf::score::{oracle_mixture_score, sample_mixture, stein_residual_from_scores, train_score as fit_score, ScoreModel};
use sgvf::sim::{integrate, MetricContext, PathMetrics};
use sgvf::tangent::{train_tangent as fit_tangent, write_loss_history, TangentModel};
use sgvf::Vec2;

use crate::fail::{require_file, Failure};
use crate::{Inputs, Models};

/// Pairs of on-path samples closer than this are checked for opposed tangents.
const PAIR_RADIUS: f64 = 0.1;

type Outcome<T = ()> = Result<T, Failure>;

fn wrote(path: &Path) {
    println!("wrote {}", path.display());
}

fn write_text(path: &Path, text: &str) -> Outcome {
    std::fs::write(path, text).map_err(|e| Failure::io(path, e))?;
    wrote(path);
    Ok(())
}

fn scenario(config: &RunConfig, inputs: &Inputs) -> Outcome<ScenarioData> {
    let Some(path) = &inputs.waypoints else {
        return Ok(config.scenario_data()?);
    };
    require_file(path)?;
    let cloud = load_csv(path)?;
    let centers = cloud
        .branches()
        .iter()
        .map(|b| b.iter().sum::<Vec2>() / b.len() as f64)
        .collect();
    Ok(ScenarioData { cloud, centers, corners: Vec::new() })
}

fn load(path: &Path, kind: ModelKind) -> Outcome<Checkpoint> {
    require_file(path)?;
    let ckpt = load_checkpoint(path)?;
    if ckpt.meta.kind != kind {
        return Err(Failure::dimension(format!("{} holds a {:?} model, expected {kind:?}", path.display(), ckpt.meta.kind)));
    }
    Ok(ckpt)
}

fn load_score(path: &Path) -> Outcome<ScoreModel> {
    let ckpt = load(path, ModelKind::Score)?;
    let schedule = sgvf::score::NoiseSchedule::new(ckpt.meta.sigma_min, ckpt.meta.sigma_max)?;
    Ok(ScoreModel::new(ckpt.model, schedule)?)
}

fn load_tangent(path: &Path) -> Outcome<TangentModel> {
    Ok(TangentModel::new(load(path, ModelKind::Tangent)?.model)?)
}

fn mixed(config: &RunConfig, models: &Models) -> Outcome<MixedField> {
    let score = load_score(&models.score)?;
    let tangent = load_tangent(&models.tangent)?;
    Ok(MixedField::new(score, tangent, config.tangent.k_s, config.tangent.t_eval)?)
}

fn meta(config: &RunConfig, kind: ModelKind, schedule: &sgvf::score::NoiseSchedule, seed: u64, iterations: usize) -> CheckpointMeta {
    CheckpointMeta {
        kind,
        sigma_min: schedule.sigma_min(),
        sigma_max: schedule.sigma_max(),
        seed,
        iterations: iterations as u64,
        config_digest: config.digest(),
    }
}

pub fn gen(config: &RunConfig) -> Outcome {
    let data = config.scenario_data()?;
    let path = config.out_dir.join("waypoints.csv");
    save_csv(&data.cloud, &path)?;
    wrote(&path);
    if !data.corners.is_empty() {
        let mut text = String::from("x,y\n");
        for c in &data.corners {
            writeln!(text, "{},{}", c.x, c.y).expect("string write");
        }
        write_text(&config.out_dir.join("corners.csv"), &text)?;
    }
    println!("points={}", data.cloud.len());
    Ok(())
}

pub fn train_score(config: &RunConfig, inputs: &Inputs) -> Outcome<ScoreModel> {
    let data = scenario(config, inputs)?;
    let sc = config.score_config();
    let trained = fit_score(&data.cloud, &sc, config.schedule()?)?;
    let path = config.out_dir.join("score.ckpt");
    let meta = meta(config, ModelKind::Score, &config.schedule()?, sc.seed, sc.iterations);
    save_checkpoint(&Checkpoint { model: trained.model.mlp.clone(), meta }, &path)?;
    wrote(&path);
    let mut text = String::from("iteration,loss\n");
    for (i, l) in trained.loss_history.iter().enumerate() {
        writeln!(text, "{i},{l}").expect("string write");
    }
    write_text(&config.out_dir.join("score_loss.csv"), &text)?;
    Ok(trained.model)
}

fn fit_and_save_tangent(config: &RunConfig, score: &ScoreModel, cloud: &PointCloud, dir: &Path) -> Outcome<TangentModel> {
    let tc = config.tangent_config();
    let trained = fit_tangent(score, cloud, &tc)?;
    let path = dir.join("tangent.ckpt");
    let meta = meta(config, ModelKind::Tangent, &score.schedule, tc.seed, tc.iterations);
    save_checkpoint(&Checkpoint { model: trained.model.mlp.clone(), meta }, &path)?;
    wrote(&path);
    let loss = dir.join("tangent_loss.csv");
    write_loss_history(&trained.history, &loss)?;
    wrote(&loss);
    Ok(trained.model)
}

pub fn train_tangent(config: &RunConfig, score: &Path, inputs: &Inputs) -> Outcome {
    let score = load_score(score)?;
    let data = scenario(config, inputs)?;
    fit_and_save_tangent(config, &score, &data.cloud, &config.out_dir)?;
    Ok(())
}

pub fn simulate(config: &RunConfig, models: &Models, inputs: &Inputs) -> Outcome {
    let field = mixed(config, models)?;
    let data = scenario(config, inputs)?;
    let ctx = MetricContext {
        waypoints: data.cloud.points().to_vec(),
        centers: data.centers.clone(),
        branches: data.cloud.branches(),
        corners: data.corners.clone(),
        stall: config.sim.stall,
        band_fraction: config.sim.band_fraction,
    };
    let opts = config.sim_options();
    for (k, start) in config.starts().into_iter().enumerate() {
        let traj = integrate(&field, start, &opts)?;
        let path = config.out_dir.join(format!("trajectory_{k}.csv"));
        traj.write_csv(&path)?;
        wrote(&path);
        let metrics = PathMetrics::evaluate(&traj, &ctx)?;
        let mut text = format!("start_x={}\nstart_y={}\n", start.x, start.y);
        text.push_str(&metrics.to_key_values());
        write_text(&config.out_dir.join(format!("metrics_{k}.txt")), &text)?;
        println!(
            "agent={k} mean_band_distance={:.4} angle_swept={:.3} stalls={} diverged={}",
            metrics.mean_band_distance,
            metrics.angle_swept,
            metrics.stall_events.len(),
            metrics.diverged
        );
    }
    Ok(())
}

pub fn export_field(config: &RunConfig, models: &Models, inputs: &Inputs) -> Outcome {
    let field = mixed(config, models)?;
    let data = scenario(config, inputs)?;
    let bounds = config.field_bounds(&data.cloud)?;
    let res = Resolution::new(config.field.nx, config.field.ny)?;
    let points = FieldGrid::points(&bounds, res);
    let comps = field.components_batch(&points)?;
    let grids = [
        ("field_score.csv", comps.iter().map(|c| c.s).collect::<Vec<_>>()),
        ("field_tangent.csv", comps.iter().map(|c| c.v).collect()),
        ("field_mixed.csv", comps.iter().map(|c| c.m).collect()),
    ];
    for (name, vectors) in grids {
        let path = config.out_dir.join(name);
        FieldGrid::from_vectors(bounds, res, vectors)?.write_csv(&path)?;
        wrote(&path);
    }
    let sigma = field.score.schedule.sigma(field.t_eval)?;
    let lyap = Lyapunov::new(data.cloud.points(), sigma)?;
    let mut text = String::from("x,y,V\n");
    for p in &points {
        writeln!(text, "{},{},{}", p.x, p.y, lyap.value(*p)).expect("string write");
    }
    write_text(&config.out_dir.join("field_lyapunov.csv"), &text)
}

pub fn diagnose(config: &RunConfig, models: &Models, inputs: &Inputs) -> Outcome {
    let field = mixed(config, models)?;
    let data = scenario(config, inputs)?;
    let points = data.cloud.points();
    let sigma = field.score.schedule.sigma(field.t_eval)?;
    let lyap = Lyapunov::new(points, sigma)?;
    let mut rng = rng::seeded(config.diag_seed());

    let samples = sample_mixture(points, sigma, config.diag.samples, &mut rng);
    let mut report = run_diagnostics(&field, &lyap, &samples)?;
    let bounds = config.field_bounds(&data.cloud)?;
    let res = Resolution::new(config.field.nx, config.field.ny)?;
    let grid = FieldGrid::from_vectors(bounds, res, field.components_batch(&FieldGrid::points(&bounds, res))?.iter().map(|c| c.m).collect())?;
    let threshold = config.diag.threshold_factor * grid.median_norm();
    report.singularities = scan_grid(&grid, threshold)?;

    let path = config.out_dir.join("diagnostics.csv");
    report.write_csv(&path)?;
    wrote(&path);

    let mut text = String::from("component,cells,centroid_x,centroid_y,min_norm\n");
    for (k, c) in report.singularities.iter().enumerate() {
        writeln!(text, "{k},{},{},{},{}", c.cells.len(), c.centroid.x, c.centroid.y, c.min_norm).expect("string write");
    }
    write_text(&config.out_dir.join("singularities.csv"), &text)?;

    let stein_samples = sample_mixture(points, sigma, config.diag.stein_samples, &mut rng);
    let center = data.cloud.canonical_points()[0];
    let learned = field.score.eval_batch(&stein_samples, field.t_eval)?;
    let oracle: Vec<Vec2> = stein_samples.iter().map(|&x| oracle_mixture_score(points, sigma, x)).collect();
    let r_learned = stein_residual_from_scores(&stein_samples, &learned, center, config.diag.stein_radius)?;
    let r_oracle = stein_residual_from_scores(&stein_samples, &oracle, center, config.diag.stein_radius)?;
    let stein = format!(
        "samples={}\nbump_center={},{}\nbump_radius={}\nlearned_residual={}\nlearned_standard_error={}\noracle_residual={}\noracle_standard_error={}\n",
        r_learned.samples,
        center.x,
        center.y,
        config.diag.stein_radius,
        r_learned.frobenius,
        r_learned.standard_error,
        r_oracle.frobenius,
        r_oracle.standard_error
    );
    write_text(&config.out_dir.join("stein.txt"), &stein)?;

    let s = &report.summary;
    let summary = format!(
        "samples={}\nsigma={sigma}\nmean_abs_cos_sv={}\nmean_m_norm={}\nstd_m_norm={}\nmax_v_dot={}\nfraction_v_dot_nonpositive={}\nsingular_components={}\nsingularity_threshold={threshold}\n",
        s.samples,
        s.mean_abs_cos_sv,
        s.mean_m_norm,
        s.std_m_norm,
        s.max_v_dot,
        s.fraction_v_dot_nonpositive,
        report.singularities.len()
    );
    write_text(&config.out_dir.join("summary.txt"), &summary)?;
    print!("{summary}");
    Ok(())
}

fn ratio(a: f64, b: f64) -> f64 {
    if b > 0.0 {
        a / b
    } else {
        f64::INFINITY
    }
}

pub fn ablate(config: &RunConfig, score: Option<PathBuf>, baseline: Option<PathBuf>, inputs: &Inputs) -> Outcome {
    let data = scenario(config, inputs)?;
    let score = match score {
        Some(path) => load_score(&path)?,
        None => train_score(config, inputs)?,
    };
    let on_path = match inputs.waypoints {
        Some(_) => data.cloud.points().to_vec(),
        None => config.held_out_data()?.cloud.points().to_vec(),
    };
    let proxies = |tangent: TangentModel| -> Outcome<AblationProxies> {
        let field = MixedField::new(score.clone(), tangent, config.tangent.k_s, config.tangent.t_eval)?;
        Ok(ablation_proxies(&field, &on_path, PAIR_RADIUS)?)
    };
    let base_model = match baseline {
        Some(path) => load_tangent(&path)?,
        None => fit_and_save_tangent(config, &score, &data.cloud, &config.out_dir)?,
    };
    let base = proxies(base_model)?;
    let mut summary = String::new();
    for line in base.to_key_values().lines() {
        writeln!(summary, "baseline.{line}").expect("string write");
    }
    for (name, mut variant) in config.ablation_variants() {
        let dir = config.out_dir.join(name);
        std::fs::create_dir_all(&dir).map_err(|e| Failure::io(&dir, e))?;
        variant.out_dir = dir.clone();
        write_text(&dir.join("variant.config"), &variant.to_text())?;
        let model = fit_and_save_tangent(&variant, &score, &data.cloud, &dir)?;
        let p = proxies(model)?;
        write_text(&dir.join("proxies.txt"), &p.to_key_values())?;
        for line in p.to_key_values().lines() {
            writeln!(summary, "{name}.{line}").expect("string write");
        }
        match name {
            "no_unit" => writeln!(summary, "no_unit.std_m_norm_ratio={}", ratio(p.std_m_norm, base.std_m_norm)),
            "no_orth" => writeln!(summary, "no_orth.mean_abs_cos_sv_ratio={}", ratio(p.mean_abs_cos_sv, base.mean_abs_cos_sv)),
            _ => writeln!(summary, "no_dir.opposed_pairs_vs_baseline={}:{}", p.opposed_pairs, base.opposed_pairs),
        }
        .expect("string write");
    }
    write_text(&config.out_dir.join("ablation.txt"), &summary)?;
    print!("{summary}");
    Ok(())
}

