use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::Serialize;
use serde_json::json;
use sha2::{Digest, Sha256};
use sglgg::datagen::io::{load_design, write_atomic};
use sglgg::datagen::{
    noise_sd_for_snr, planted_graph_edges, save_design, simulate, support_metrics, FeatureSigns,
    GroundTruth, SyntheticSpec,
};
use sglgg::selection::{
    cross_validate, rank_top_k, stability_select, CvOptions, FitContext, Grid, GridPoint, Method,
    StabilityOptions,
};
use sglgg::solver::{AdmmSettings, Rho};
use sglgg::{center_dataset, Dataset, EdgeWeight, GeneGraph, GroupMap};

use crate::config::{
    Cli, Command, CommonArgs, CvArgs, EdgeWeightArg, EvalArgs, FitArgs, GridArgs, InputArgs,
    MethodArg, SignsArg, SimulateArgs, SolverArgs, StabilityArgs, UsageError,
};

/// Collects output files and writes the manifest last.
struct Outputs {
    dir: PathBuf,
    written: BTreeMap<String, String>,
    inputs: BTreeMap<String, String>,
}

impl Outputs {
    fn new(common: &CommonArgs) -> Result<Self> {
        std::fs::create_dir_all(&common.out)
            .with_context(|| format!("cannot create {}", common.out.display()))?;
        Ok(Outputs {
            dir: common.out.clone(),
            written: BTreeMap::new(),
            inputs: BTreeMap::new(),
        })
    }

    fn input(&mut self, role: &str, path: &Path) -> Result<()> {
        let bytes = std::fs::read(path).with_context(|| format!("cannot read {}", path.display()))?;
        self.inputs.insert(role.to_string(), digest(&bytes));
        Ok(())
    }

    fn write(&mut self, name: &str, bytes: &[u8]) -> Result<()> {
        write_atomic(&self.dir.join(name), bytes)?;
        self.written.insert(name.to_string(), digest(bytes));
        Ok(())
    }

    fn write_json(&mut self, name: &str, value: &impl Serialize) -> Result<()> {
        let mut text = serde_json::to_string_pretty(value)?;
        text.push('\n');
        self.write(name, text.as_bytes())
    }

    /// Records a file that was written by someone else.
    fn record(&mut self, name: &str) -> Result<()> {
        let path = self.dir.join(name);
        let bytes = std::fs::read(&path).with_context(|| format!("cannot read {}", path.display()))?;
        self.written.insert(name.to_string(), digest(&bytes));
        Ok(())
    }

    fn finish(mut self, cli: &Cli) -> Result<()> {
        let manifest = json!({
            "version": env!("CARGO_PKG_VERSION"),
            "command": cli.command.name(),
            "seed": cli.command.common().seed,
            "config": cli,
            "inputs": self.inputs,
            "outputs": self.written,
        });
        self.written.clear();
        self.write_json("manifest.json", &manifest)
    }
}

fn digest(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn run(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Fit(a) => fit(cli, a),
        Command::Cv(a) => cv(cli, a),
        Command::Stability(a) => stability(cli, a),
        Command::Simulate(a) => simulate_cmd(cli, a),
        Command::Eval(a) => eval(cli, a),
    }
}

struct Design {
    data: Dataset,
    groups: GroupMap,
    graph: GeneGraph,
}

fn load(input: &InputArgs, out: &mut Outputs) -> Result<Design> {
    let (data, groups, graph) =
        load_design(&input.matrix, &input.phenotype, &input.groups, &input.graph)?;
    out.input("matrix", &input.matrix)?;
    out.input("phenotype", &input.phenotype)?;
    out.input("groups", &input.groups)?;
    out.input("graph", &input.graph)?;
    Ok(Design {
        data,
        groups,
        graph,
    })
}

fn settings(s: &SolverArgs) -> Result<AdmmSettings> {
    let rho = if s.rho == "auto" {
        Rho::Auto
    } else {
        let v: f64 = s
            .rho
            .parse()
            .map_err(|_| UsageError(format!("--rho takes `auto` or a number, got `{}`", s.rho)))?;
        Rho::Fixed(v)
    };
    let settings = AdmmSettings {
        rho,
        max_iter: s.max_iter,
        abs_tol: s.abs_tol,
        rel_tol: s.tol,
        adaptive_rho: s.adaptive_rho,
        select_eps: s.select_eps,
        ..AdmmSettings::default()
    };
    settings.validate().map_err(|e| UsageError(e.to_string()))?;
    Ok(settings)
}

fn method(m: MethodArg) -> Method {
    match m {
        MethodArg::Sglgg => Method::Sglgg,
        MethodArg::Lasso => Method::Lasso,
        MethodArg::FusedLasso => Method::FusedLasso,
        MethodArg::SparseGroupLasso => Method::SparseGroupLasso,
    }
}

fn context<'a>(d: &'a Design, s: &SolverArgs) -> Result<FitContext<'a>> {
    let mut ctx = FitContext::new(&d.groups, &d.graph, settings(s)?);
    ctx.edge_weight = match s.edge_weight {
        EdgeWeightArg::Absolute => EdgeWeight::Absolute,
        EdgeWeightArg::Unit => EdgeWeight::Unit,
    };
    Ok(ctx)
}

/// Maps `--lambda1/2/3` onto the method's penalty tuple.
fn fit_point(a: &FitArgs) -> Result<GridPoint> {
    let m = method(a.solver.method);
    let need = |flag: &str, v: Option<f64>| {
        v.ok_or_else(|| UsageError(format!("--method {} requires --{flag}", m.name())))
    };
    let unused = |flag: &str, v: Option<f64>| {
        if v.is_some() {
            Err(UsageError(format!("--{flag} is not used by --method {}", m.name())))
        } else {
            Ok(())
        }
    };
    let lambdas = match m {
        Method::Sglgg => vec![
            need("lambda1", a.lambda1)?,
            need("lambda2", a.lambda2)?,
            need("lambda3", a.lambda3)?,
        ],
        Method::Lasso => {
            unused("lambda1", a.lambda1)?;
            unused("lambda2", a.lambda2)?;
            vec![need("lambda3", a.lambda3)?]
        }
        Method::FusedLasso => {
            unused("lambda1", a.lambda1)?;
            vec![need("lambda3", a.lambda3)?, need("lambda2", a.lambda2)?]
        }
        Method::SparseGroupLasso => {
            unused("lambda2", a.lambda2)?;
            vec![need("lambda1", a.lambda1)?, need("lambda3", a.lambda3)?]
        }
    };
    GridPoint::from_lambdas(m, &lambdas).map_err(|e| UsageError(e.to_string()).into())
}

fn fit(cli: &Cli, a: &FitArgs) -> Result<()> {
    let point = fit_point(a)?;
    let mut out = Outputs::new(&a.common)?;
    let design = load(&a.input, &mut out)?;
    let ctx = context(&design, &a.solver)?;
    let centered = center_dataset(&design.data)?;
    let result = ctx.fit(&centered, &point)?;

    let mut coef = String::from("feature_id,group_id,beta,g,s\n");
    for (j, id) in design.data.feature_ids.iter().enumerate() {
        let k = design.groups.group_of(j);
        let g = result.g.get(k).map(|v| v.to_string()).unwrap_or_default();
        writeln!(
            coef,
            "{id},{},{},{g},{}",
            design.groups.ids()[k],
            result.beta[j],
            result.s[j]
        )?;
    }
    out.write("coefficients.csv", coef.as_bytes())?;

    let mut trace = String::from("iteration,objective,primal_residual,dual_residual\n");
    for i in 0..result.iterations {
        writeln!(
            trace,
            "{},{},{},{}",
            i + 1,
            result.objective_trace[i],
            result.primal_residuals[i],
            result.dual_residuals[i]
        )?;
    }
    out.write("trace.csv", trace.as_bytes())?;

    let centering = centered.centering().expect("centered above");
    out.write_json(
        "fit.json",
        &json!({
            "method": point.method().name(),
            "penalty": point,
            "converged": result.converged,
            "iterations": result.iterations,
            "intercept": centering.y_mean - centering.column_means.dot(&result.beta),
            "selected": result.selected.iter().map(|&j| &design.data.feature_ids[j]).collect::<Vec<_>>(),
        }),
    )?;
    if !result.converged {
        log::warn!("fit did not converge in {} iterations", result.iterations);
    }
    out.finish(cli)
}

fn grid(d: &Design, m: MethodArg, g: &GridArgs) -> Result<Grid> {
    Grid::default_for(method(m), &d.data, g.grid, (g.grid_min, g.grid_max))
        .map_err(|e| UsageError(e.to_string()).into())
}

fn cv(cli: &Cli, a: &CvArgs) -> Result<()> {
    let mut out = Outputs::new(&a.common)?;
    let design = load(&a.input, &mut out)?;
    let ctx = context(&design, &a.solver)?;
    let grid = grid(&design, a.solver.method, &a.grid)?;
    let options = CvOptions {
        folds: a.folds,
        replications: a.reps,
        seed: a.common.seed,
    };
    let report = cross_validate(&design.data, &ctx, &grid, &options)?;
    out.write("cv.csv", report.to_csv().as_bytes())?;
    out.write_json("cv.json", &report)?;
    out.finish(cli)
}

fn stability(cli: &Cli, a: &StabilityArgs) -> Result<()> {
    let mut out = Outputs::new(&a.common)?;
    let design = load(&a.input, &mut out)?;
    let ctx = context(&design, &a.solver)?;
    let grid = grid(&design, a.solver.method, &a.grid)?;
    let options = StabilityOptions {
        n_sims: a.sims,
        subsample_fraction: a.fraction,
        seed: a.common.seed,
        archive: false,
    };
    let report = stability_select(&design.data, &ctx, &grid, &options)?;
    let k = a.top_k.min(design.data.n_features());
    let top: Vec<&String> = rank_top_k(&report, k)?
        .into_iter()
        .map(|j| &design.data.feature_ids[j])
        .collect();
    out.write("stability.csv", report.to_csv(&design.data.feature_ids).as_bytes())?;
    out.write_json("stability.json", &json!({ "report": report, "top_k": top }))?;
    out.finish(cli)
}

#[derive(Serialize, serde::Deserialize)]
struct TruthFile {
    feature_ids: Vec<String>,
    support: Vec<String>,
    truth: GroundTruth,
}

fn simulate_cmd(cli: &Cli, a: &SimulateArgs) -> Result<()> {
    if a.active > a.n_groups {
        return Err(UsageError(format!(
            "--active {} exceeds --n-groups {}",
            a.active, a.n_groups
        ))
        .into());
    }
    let active: Vec<usize> = (0..a.active).collect();
    let mut spec = SyntheticSpec {
        n: a.n,
        sizes: vec![a.group_size; a.n_groups],
        active_groups: active.clone(),
        active_fraction_within: a.active_fraction,
        edges: planted_graph_edges(a.n_groups, &active),
        noise_sd: 0.0,
        correlation: a.correlation,
        effect_range: (a.effect_min, a.effect_max),
        feature_signs: match a.signs {
            SignsArg::Random => FeatureSigns::Random,
            SignsArg::Positive => FeatureSigns::Positive,
        },
        seed: a.common.seed,
    };
    spec.noise_sd = match a.noise_sd {
        Some(sd) => sd,
        None => noise_sd_for_snr(&spec, a.snr)?,
    };
    let (data, groups, graph, truth) = simulate(&spec)?;
    let mut out = Outputs::new(&a.common)?;
    save_design(&out.dir.clone(), &data, &groups, &graph)?;
    for name in ["matrix.csv", "phenotype.csv", "groups.csv", "graph.csv"] {
        out.record(name)?;
    }
    out.write_json(
        "truth.json",
        &TruthFile {
            feature_ids: data.feature_ids.clone(),
            support: truth.support.iter().map(|&j| data.feature_ids[j].clone()).collect(),
            truth,
        },
    )?;
    out.write_json("spec.json", &spec)?;
    out.finish(cli)
}

/// Column `name` of a CSV file with a header row.
fn read_column(path: &Path, name: &str) -> Result<Vec<(String, String)>> {
    let mut r = csv::Reader::from_path(path).with_context(|| format!("cannot read {}", path.display()))?;
    let headers = r.headers()?.clone();
    let col = headers
        .iter()
        .position(|h| h == name)
        .with_context(|| format!("{}: no `{name}` column", path.display()))?;
    let mut out = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec.with_context(|| format!("{}: bad row {}", path.display(), i + 2))?;
        let (Some(id), Some(v)) = (rec.get(0), rec.get(col)) else {
            bail!("{}:{}: short row", path.display(), i + 2);
        };
        out.push((id.to_string(), v.to_string()));
    }
    Ok(out)
}

fn parse_num<T: std::str::FromStr>(path: &Path, v: &str) -> Result<T> {
    v.parse()
        .map_err(|_| anyhow::anyhow!("{}: `{v}` is not a number", path.display()))
}

fn eval(cli: &Cli, a: &EvalArgs) -> Result<()> {
    let mut out = Outputs::new(&a.common)?;
    let text = std::fs::read_to_string(&a.truth)
        .with_context(|| format!("cannot read {}", a.truth.display()))?;
    let truth: TruthFile = serde_json::from_str(&text)
        .with_context(|| format!("{} is not a truth file", a.truth.display()))?;
    out.input("truth", &a.truth)?;
    let index: BTreeMap<&str, usize> = truth
        .feature_ids
        .iter()
        .enumerate()
        .map(|(j, id)| (id.as_str(), j))
        .collect();
    let lookup = |path: &Path, id: &str| {
        index
            .get(id)
            .copied()
            .with_context(|| format!("{}: feature `{id}` is not in the truth file", path.display()))
    };

    let (source, selected) = if let Some(path) = &a.coefficients {
        out.input("coefficients", path)?;
        let mut sel = Vec::new();
        for (id, v) in read_column(path, "beta")? {
            if parse_num::<f64>(path, &v)? != 0.0 {
                sel.push(lookup(path, &id)?);
            }
        }
        ("coefficients", sel)
    } else {
        let path = a.stability.as_ref().expect("clap requires one source");
        out.input("stability", path)?;
        let k = a.top_k.unwrap_or(truth.support.len());
        let mut sel = Vec::new();
        for (id, v) in read_column(path, "rank")? {
            if parse_num::<usize>(path, &v)? <= k {
                sel.push(lookup(path, &id)?);
            }
        }
        ("stability", sel)
    };
    let mut selected = selected;
    selected.sort_unstable();
    let m = support_metrics(&selected, &truth.truth);
    out.write_json(
        "metrics.json",
        &json!({
            "source": source,
            "n_selected": selected.len(),
            "n_support": truth.support.len(),
            "precision": m.precision,
            "recall": m.recall,
            "f1": m.f1,
        }),
    )?;
    out.finish(cli)
}
