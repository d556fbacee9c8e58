use std::fs;
use std::path::Path;

use anyhow::{bail, Context, Result};
use ssgl_core::basis::{predict_effects, Hierarchy};
use ssgl_core::cv::{fit_selected, format_cv_error, kfold_cv, CvResult};
use ssgl_core::debias::{debiased_inference, default_lambda};
use ssgl_core::io::{auto_layout, layout_from_map, read_csv, read_group_map, write_matrix, Cell, CsvTable, GroupLayout, Table};
use ssgl_core::model::{Featurizer, ModelSpec, PreparedModel};
use ssgl_core::sim::{replicate_rng, run_scenario, run_timing, ScenarioKind, SimOptions, SimScenario, Tuning};
use ssgl_core::{
    BasisSpec, CvConfig, DMatrix, DVector, InteractionSpec, SelectionRule, SigmaFloor, SplineKind, SsglConfig,
    SsglError, SsglFit,
};

use crate::artifacts::{
    coefficient_table, ladder_table, ladder_trace, read_model, vector_table, FitSummary, ModelBody, Provenance, Rung,
};
use crate::{
    Command, CvArgs, CvCmdArgs, DataArgs, DebiasArgs, FitArgs, FloorArg, GamArgs, GroupArgs, InteractArgs, KindArg,
    PredictArgs, SimulateArgs, SolverArgs, TuningArg,
};

pub fn run(cmd: &Command) -> Result<()> {
    match cmd {
        Command::Fit(a) => fit(a),
        Command::Cv(a) => cv(a),
        Command::Gam(a) => gam(a),
        Command::Interact(a) => interact(a),
        Command::Debias(a) => debias(a),
        Command::Predict(a) => predict(a),
        Command::Simulate(a) => simulate(a),
    }
}

fn invalid(msg: impl Into<String>) -> anyhow::Error {
    SsglError::InvalidConfig(msg.into()).into()
}

/// `start:end[:step]` or `a,b,c`.
pub fn parse_ladder(s: &str) -> Result<Vec<f64>> {
    let num = |t: &str| -> Result<f64> {
        t.trim()
            .parse::<f64>()
            .map_err(|_| invalid(format!("cannot parse `{t}` in lambda0 ladder `{s}`")))
    };
    if s.contains(':') {
        let parts: Vec<&str> = s.split(':').collect();
        if parts.len() > 3 {
            return Err(invalid(format!("ladder `{s}` must be start:end[:step]")));
        }
        let start = num(parts[0])?;
        let end = num(parts[1])?;
        let step = if parts.len() == 3 { num(parts[2])? } else { 1.0 };
        if step.is_nan() || step <= 0.0 || end < start {
            return Err(invalid(format!("ladder `{s}` is empty or has a non-positive step")));
        }
        let count = ((end - start) / step + 1e-9).floor() as usize + 1;
        Ok((0..count).map(|i| start + step * i as f64).collect())
    } else {
        s.split(',').map(num).collect()
    }
}

fn solver_config(a: &SolverArgs) -> Result<SsglConfig> {
    let cfg = SsglConfig {
        lambda0_ladder: parse_ladder(&a.lambda0)?,
        lambda1: a.lambda1,
        a: a.a,
        b: a.b,
        update_stride: a.update_stride,
        eps: a.eps,
        max_iter: a.max_iter,
        sigma2_floor: match a.sigma2_floor {
            FloorArg::Prior => SigmaFloor::PriorMode,
            FloorArg::Absolute => SigmaFloor::Absolute(ssgl_core::solver::SIGMA2_FLOOR),
        },
        ..SsglConfig::default()
    };
    cfg.validate()?;
    Ok(cfg)
}

fn cv_config(a: &CvArgs, df: Vec<usize>) -> CvConfig {
    CvConfig {
        folds: a.folds,
        seed: a.seed,
        df_candidates: df,
        rule: if a.one_se { SelectionRule::OneSe } else { SelectionRule::MinError },
    }
}

fn load(d: &DataArgs) -> Result<(Table, DVector<f64>)> {
    let t = read_csv(&d.data, Some(&d.response))?;
    let y = t.y.clone().expect("response requested");
    Ok((t, y))
}

fn layout(t: &Table, g: &GroupArgs) -> Result<GroupLayout> {
    Ok(match &g.groups {
        Some(path) => layout_from_map(&t.names, &read_group_map(path)?, &g.unpenalized)?,
        None => auto_layout(&t.names, g.group_size, &g.unpenalized)?,
    })
}

fn out_dir(p: &Path) -> Result<()> {
    fs::create_dir_all(p).with_context(|| format!("creating {}", p.display()))
}

type GroupedInputs = (DMatrix<f64>, DVector<f64>, Vec<String>, ModelSpec);

fn grouped_inputs(data: &DataArgs, groups: &GroupArgs) -> Result<GroupedInputs> {
    let (t, y) = load(data)?;
    let l = layout(&t, groups)?;
    let x = l.apply(&t.x);
    let names = l.names(&t.names);
    Ok((x, y, names, ModelSpec::Grouped { groups: l.groups }))
}

fn column_names(model: &PreparedModel, raw: &[String]) -> Vec<String> {
    match &model.featurizer {
        Featurizer::Identity { .. } => raw.to_vec(),
        Featurizer::Splines(_) => (0..model.design.n_groups())
            .flat_map(|g| {
                let id = model.design.group(g).id.clone();
                (1..=model.design.group(g).size).map(move |k| format!("{id}[{k}]"))
            })
            .collect(),
    }
}

#[allow(clippy::too_many_arguments)]
fn write_model(
    prov: &Provenance,
    dir: &Path,
    response: &str,
    covariates: &[String],
    model: &PreparedModel,
    fit: &SsglFit,
    ladder: Vec<Rung>,
    x_raw: &DMatrix<f64>,
) -> Result<()> {
    let predictor = model.predictor(fit);
    let fitted = predictor.predict(x_raw)?;
    let body = ModelBody {
        response: response.to_string(),
        covariates: covariates.to_vec(),
        predictor,
        fit: FitSummary::new(model, fit),
        ladder: ladder.clone(),
    };
    prov.write_json(dir, "model.json", &body)?;
    prov.write_csv(dir, "coefficients.csv", coefficient_table(model, fit, &column_names(model, covariates)))?;
    prov.write_csv(dir, "fitted.csv", vector_table("fitted", fitted.as_slice()))?;
    prov.write_csv(dir, "ladder.csv", ladder_table(&ladder))?;
    Ok(())
}

fn cv_table(res: &CvResult) -> CsvTable {
    let mut t = CsvTable::new(["df", "lambda0", "mean", "se", "summary", "valid_folds"]);
    for c in &res.cells {
        t.push(vec![
            c.df.map_or(Cell::Text(String::new()), Cell::from),
            c.lambda0.into(),
            c.mean.into(),
            c.se.into(),
            format_cv_error(c.mean, c.se).into(),
            c.fold_errors.len().into(),
        ]);
    }
    t
}

#[allow(clippy::too_many_arguments)]
fn run_cv_and_write(
    prov: &Provenance,
    dir: &Path,
    data: &DataArgs,
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    names: &[String],
    spec: &ModelSpec,
    ssgl: &SsglConfig,
    cv: &CvConfig,
) -> Result<(PreparedModel, SsglFit)> {
    let res = kfold_cv(x, y, names, spec, ssgl, cv)?;
    for bad in &res.invalid {
        log::warn!("cv cell df {:?} fold {} failed: {}", bad.df, bad.fold, bad.message);
    }
    prov.write_csv(dir, "cv_grid.csv", cv_table(&res))?;
    let (model, fit) = fit_selected(x, y, names, spec, ssgl, res.chosen_lambda0, res.chosen_df)?;
    let path = model.fit_path(&truncated(ssgl, res.chosen_lambda0))?;
    write_model(prov, dir, &data.response, names, &model, &fit, ladder_trace(&path), x)?;
    Ok((model, fit))
}

fn truncated(cfg: &SsglConfig, lambda0: f64) -> SsglConfig {
    let ladder: Vec<f64> = cfg.lambda0_ladder.iter().copied().filter(|&l| l <= lambda0).collect();
    cfg.clone().with_ladder(ladder)
}

fn fit(a: &FitArgs) -> Result<()> {
    let prov = Provenance::new("fit", a, 0)?;
    let cfg = solver_config(&a.solver)?;
    let (x, y, names, spec) = grouped_inputs(&a.data, &a.groups)?;
    out_dir(&a.out)?;
    let model = PreparedModel::build(&spec, &x, &y, &names)?;
    let path = model.fit_path(&cfg)?;
    let fit = match a.at {
        Some(l) => path
            .fit_at(l)
            .ok_or_else(|| invalid(format!("lambda0 = {l} is not a fitted rung of the ladder")))?,
        None => path
            .final_fit()
            .ok_or_else(|| SsglError::NonFinite("every rung of the ladder failed".into()))?,
    };
    write_model(&prov, &a.out, &a.data.response, &names, &model, fit, ladder_trace(&path), &x)
}

fn cv(a: &CvCmdArgs) -> Result<()> {
    let prov = Provenance::new("cv", a, a.cv.seed)?;
    let cfg = solver_config(&a.solver)?;
    let (x, y, names, spec) = grouped_inputs(&a.data, &a.groups)?;
    out_dir(&a.out)?;
    run_cv_and_write(&prov, &a.out, &a.data, &x, &y, &names, &spec, &cfg, &cv_config(&a.cv, vec![]))?;
    Ok(())
}

fn gam(a: &GamArgs) -> Result<()> {
    let prov = Provenance::new("gam", a, a.cv.seed)?;
    let cfg = solver_config(&a.solver)?;
    let (t, y) = load(&a.data)?;
    if a.df.is_empty() {
        return Err(invalid("at least one df candidate is required"));
    }
    let kind = match a.basis {
        KindArg::Natural => SplineKind::Natural,
        KindArg::Bspline => SplineKind::BSpline,
    };
    let spec = ModelSpec::Additive {
        basis: BasisSpec { df: a.df[0], kind },
        interactions: None,
    };
    out_dir(&a.out)?;
    let (model, fit) = run_cv_and_write(&prov, &a.out, &a.data, &t.x, &y, &t.names, &spec, &cfg, &cv_config(&a.cv, a.df.clone()))?;
    let Featurizer::Splines(map) = &model.featurizer else {
        unreachable!("additive spec builds splines")
    };
    let mut curves = CsvTable::new(["covariate", "x", "effect"]);
    let points = a.grid.max(2);
    for (j, name) in t.names.iter().enumerate() {
        let col = t.x.column(j);
        let (lo, hi) = (col.min(), col.max());
        let grid: Vec<f64> = (0..points).map(|i| lo + (hi - lo) * i as f64 / (points - 1) as f64).collect();
        let effect = predict_effects(map, &model.design, &fit.beta_original, j, &grid)?;
        for (x, e) in grid.iter().zip(effect) {
            curves.push(vec![name.clone().into(), (*x).into(), e.into()]);
        }
    }
    prov.write_csv(&a.out, "curves.csv", curves)
}

fn interact(a: &InteractArgs) -> Result<()> {
    let prov = Provenance::new("interact", a, a.cv.seed)?;
    let cfg = solver_config(&a.solver)?;
    let (t, y) = load(&a.data)?;
    let spec = ModelSpec::Additive {
        basis: BasisSpec::natural(a.main_df),
        interactions: Some(InteractionSpec {
            d_star: a.d_star,
            hierarchy: if a.hierarchy { Hierarchy::Augmented } else { Hierarchy::Off },
            ..InteractionSpec::default()
        }),
    };
    out_dir(&a.out)?;
    let (model, fit) = run_cv_and_write(&prov, &a.out, &a.data, &t.x, &y, &t.names, &spec, &cfg, &cv_config(&a.cv, vec![]))?;
    let Featurizer::Splines(map) = &model.featurizer else {
        unreachable!("additive spec builds splines")
    };
    let mains = map.mains.len();
    let mut pairs = CsvTable::new(["first", "second", "group", "norm", "selected"]);
    for (i, term) in map.interactions.iter().enumerate() {
        let g = mains + i;
        pairs.push(vec![
            t.names[term.k].clone().into(),
            t.names[term.l].clone().into(),
            model.design.group(g).id.clone().into(),
            fit.group_norm(&model.design, g).into(),
            fit.selected_groups.contains(&g).to_string().into(),
        ]);
    }
    prov.write_csv(&a.out, "pairs.csv", pairs)
}

fn debias(a: &DebiasArgs) -> Result<()> {
    let prov = Provenance::new("debias", a, a.cv.seed)?;
    let cfg = solver_config(&a.solver)?;
    if !(a.alpha > 0.0 && a.alpha < 1.0) {
        return Err(invalid(format!("alpha = {} must lie in (0, 1)", a.alpha)));
    }
    let (x, y, names, spec) = grouped_inputs(&a.data, &a.groups)?;
    out_dir(&a.out)?;
    let (model, fit) = match a.at {
        Some(l) => {
            let model = PreparedModel::build(&spec, &x, &y, &names)?;
            let path = model.fit_path(&truncated(&cfg, l))?;
            let fit = path
                .fit_at(l)
                .cloned()
                .ok_or_else(|| invalid(format!("lambda0 = {l} is not a fitted rung of the ladder")))?;
            write_model(&prov, &a.out, &a.data.response, &names, &model, &fit, ladder_trace(&path), &x)?;
            (model, fit)
        }
        None => run_cv_and_write(&prov, &a.out, &a.data, &x, &y, &names, &spec, &cfg, &cv_config(&a.cv, vec![]))?,
    };
    let p = model.design.p();
    let lambda = a
        .nodewise_lambda
        .unwrap_or_else(|| default_lambda(model.design.n(), p, a.nodewise_c));
    let report = debiased_inference(&model.design, &fit.beta_ortho, fit.sigma2, &vec![lambda; p], a.alpha)?;
    let write = |file: &str, out: &ssgl_core::DebiasOutput| -> Result<()> {
        let mut t = CsvTable::new(["coordinate", "group", "estimate", "debiased", "se", "lower", "upper"]);
        for (j, name) in names.iter().enumerate() {
            t.push(vec![
                name.clone().into(),
                model.design.group(model.design.group_of_column(j)).id.clone().into(),
                out.beta_hat[j].into(),
                out.beta_d[j].into(),
                out.se[j].into(),
                out.ci_lower[j].into(),
                out.ci_upper[j].into(),
            ]);
        }
        prov.write_csv(&a.out, file, t)
    };
    write("ci.csv", &report.original)?;
    write("ci_working.csv", &report.working)
}

fn predict(a: &PredictArgs) -> Result<()> {
    let model = read_model(&a.model)?;
    let t = read_csv(&a.data, None)?;
    let idx: Vec<usize> = model
        .body
        .covariates
        .iter()
        .map(|c| {
            t.names
                .iter()
                .position(|n| n == c)
                .ok_or_else(|| SsglError::DimensionMismatch(format!("column `{c}` missing from {}", a.data.display())))
        })
        .collect::<std::result::Result<_, _>>()?;
    let x = t.x.select_columns(&idx);
    let pred = model.body.predictor.predict(&x)?;
    let prov = Provenance {
        command: "predict".into(),
        config: serde_json::Value::Null,
        config_hash: model.config_hash.clone(),
        seed: model.seed,
    };
    if let Some(dir) = a.out.parent().filter(|d| !d.as_os_str().is_empty()) {
        out_dir(dir)?;
    }
    prov.stamp(vector_table("prediction", pred.as_slice()))
        .write(&a.out)
        .with_context(|| format!("writing {}", a.out.display()))
}

fn simulate(a: &SimulateArgs) -> Result<()> {
    let kind: ScenarioKind = a.scenario.parse()?;
    let base = SimScenario::named(kind);
    let scenario = SimScenario {
        kind,
        n: a.n.unwrap_or(base.n),
        p: a.p.unwrap_or(base.p),
        rho: a.rho,
        replicates: a.replicates,
        seed: a.seed,
    };
    scenario.validate()?;
    if let Some(path) = &a.dump_data {
        let mut rng = replicate_rng(scenario.seed, 0);
        let truth = scenario.draw_truth(&mut rng);
        let data = scenario.sample(&truth, scenario.n, &mut rng);
        let mut names = data.names.clone();
        names.push("y".into());
        let mut m = data.x.clone().insert_column(data.x.ncols(), 0.0);
        m.set_column(data.x.ncols(), &data.y);
        return Ok(write_matrix(path, &names, &m)?);
    }
    let Some(out) = &a.out else {
        bail!(invalid("--out is required unless --dump-data is given"));
    };
    let prov = Provenance::new("simulate", a, a.seed)?;
    let cfg = solver_config(&a.solver)?;
    out_dir(out)?;
    if kind == ScenarioKind::Timing {
        let rows = run_timing(scenario.n, &a.timing_groups, 20.0, 40, 5, scenario.seed)?;
        let mut t = CsvTable::new(["groups", "p", "seconds_per_sweep", "iterations_to_converge"]);
        for r in &rows {
            t.push(vec![r.groups.into(), r.p.into(), r.seconds_per_sweep.into(), r.iterations_to_converge.into()]);
        }
        prov.write_json(out, "run_config.json", &serde_json::Map::new())?;
        return prov.write_csv(out, "timing.csv", t);
    }
    let mut options = SimOptions::for_scenario(kind);
    options.ssgl = cfg;
    match a.tuning {
        Some(TuningArg::Final) => options.tuning = Tuning::FinalLadder,
        Some(TuningArg::Cv) | None => {
            if let Tuning::Cv { folds, .. } = &mut options.tuning {
                *folds = a.folds;
            } else if a.tuning.is_some() {
                options.tuning = Tuning::Cv {
                    folds: a.folds,
                    df_candidates: vec![],
                };
            }
        }
    }
    let mut report = run_scenario(&scenario, &options)?;
    let mut timings = CsvTable::new(["replicate", "seconds"]);
    for r in &mut report.replicates {
        timings.push(vec![r.replicate.into(), r.seconds.into()]);
        r.seconds = 0.0;
    }
    let mut reps = CsvTable::new([
        "replicate", "lambda0", "df", "mse", "precision", "recall", "sigma2", "theta", "iterations", "selected",
        "coverage_important", "coverage_null",
    ]);
    let opt = |v: Option<f64>| v.map_or(Cell::Text(String::new()), Cell::Num);
    for r in &report.replicates {
        let selected: Vec<String> = match kind {
            ScenarioKind::Interaction => r.selected_pairs.iter().map(|(k, l)| format!("{}:{}", k + 1, l + 1)).collect(),
            _ => r.selected.iter().map(|g| (g + 1).to_string()).collect(),
        };
        reps.push(vec![
            r.replicate.into(),
            r.lambda0.into(),
            r.df.map_or(Cell::Text(String::new()), Cell::from),
            r.mse.into(),
            r.precision.into(),
            r.recall.into(),
            r.sigma2.into(),
            r.theta.into(),
            r.iterations.into(),
            selected.join(" ").into(),
            opt(r.coverage_important),
            opt(r.coverage_null),
        ]);
    }
    prov.write_json(out, "report.json", &report)?;
    prov.write_csv(out, "replicates.csv", reps)?;
    prov.write_csv(out, "timings.csv", timings)
}
