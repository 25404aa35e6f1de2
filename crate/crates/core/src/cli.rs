//! Command-line front end: argument parsing, orchestration and exit codes.

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::config::RunConfig;
use crate::dataset::{generate_dataset, split, Dataset, GenerateOptions};
use crate::direct::{evaluate_direct, train_direct, DirectConfig, DirectModel};
use crate::error::{Error, Result};
use crate::machine_models::{SchemaSet, ASM_ID, KPI_NAMES, PMSM_ID};
use crate::metrics::{ComparisonTable, MetricReport};
use crate::moo::{optimize_direct, optimize_latent, pareto_svg, validate_pareto, ParetoArchive, ValidationSummary, Workflow};
use crate::vae::{evaluate, VaeBundle, VaeConfig};

#[derive(Debug, Parser)]
#[command(name = "mtoo", version, about = "Latent-space surrogate modelling and optimization of electrical machines")]
pub struct Cli {
    /// TOML run configuration; defaults apply to anything it leaves out.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,

    /// Caps worker threads.
    #[arg(long, global = true)]
    pub threads: Option<usize>,

    #[arg(long, global = true)]
    pub profile: Option<String>,

    /// Output directory (overrides `out_dir`).
    #[arg(long, global = true)]
    pub out_dir: Option<PathBuf>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Sample, label and store a dataset.
    Generate(GenerateArgs),
    /// Train the latent model or a direct per-technology model.
    Train(TrainArgs),
    /// Accuracy reports on a data split.
    Evaluate(EvaluateArgs),
    /// Multi-objective optimization of cost against power.
    Optimize(OptimizeArgs),
    /// Geometry check and oracle recalculation of exported fronts.
    ValidatePareto(ValidateArgs),
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    #[arg(long)]
    pub per_technology: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Defaults to `<out_dir>/dataset.csv`.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModelKind {
    Vae,
    DnnAsm,
    DnnPmsm,
}

impl ModelKind {
    fn file_stem(self) -> &'static str {
        match self {
            ModelKind::Vae => "vae",
            ModelKind::DnnAsm => "dnn-asm",
            ModelKind::DnnPmsm => "dnn-pmsm",
        }
    }
}

#[derive(Debug, Args)]
pub struct DataArgs {
    /// Dataset CSV; defaults to `<out_dir>/dataset.csv`.
    #[arg(long)]
    pub data: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long, value_enum)]
    pub model: ModelKind,
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub patience: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Bundle path; defaults to `<out_dir>/<model>.json`.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SplitName {
    Train,
    Val,
    Test,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long, value_enum, default_value = "test")]
    pub split: SplitName,
    /// Latent model bundle; defaults to `<out_dir>/vae.json`.
    #[arg(long)]
    pub vae: Option<PathBuf>,
    #[arg(long)]
    pub dnn_asm: Option<PathBuf>,
    #[arg(long)]
    pub dnn_pmsm: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum WorkflowArg {
    Vae,
    DirectAsm,
    DirectPmsm,
}

impl From<WorkflowArg> for Workflow {
    fn from(w: WorkflowArg) -> Self {
        match w {
            WorkflowArg::Vae => Workflow::Vae,
            WorkflowArg::DirectAsm => Workflow::DirectAsm,
            WorkflowArg::DirectPmsm => Workflow::DirectPmsm,
        }
    }
}

#[derive(Debug, Args)]
pub struct OptimizeArgs {
    #[arg(long, value_enum)]
    pub workflow: WorkflowArg,
    /// Bundle for the workflow; defaults to the `train` output name.
    #[arg(long)]
    pub model: Option<PathBuf>,
    #[arg(long)]
    pub population: Option<usize>,
    #[arg(long)]
    pub generations: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Population 1000, 100 generations.
    #[arg(long)]
    pub paper_scale: bool,
    /// Archive path; defaults to `<out_dir>/pareto-<workflow>.csv`.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ValidateArgs {
    /// One or more exported archives.
    #[arg(long = "archive", required = true)]
    pub archives: Vec<PathBuf>,
    /// Summary CSV; defaults to `<out_dir>/pareto-validation.csv`.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Exit status for an error: 2 configuration, 3 data, 4 numeric.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config { .. } | Error::UnknownProfile(_) | Error::InvalidArgument(_) => 2,
        Error::NanLoss { .. } | Error::NonFinite(_) => 4,
        _ => 3,
    }
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

struct Context {
    cfg: RunConfig,
    schemas: SchemaSet,
}

impl Context {
    fn out(&self, name: &str) -> PathBuf {
        self.cfg.out_dir.join(name)
    }

    fn data_path(&self, a: &DataArgs) -> PathBuf {
        a.data.clone().unwrap_or_else(|| self.out("dataset.csv"))
    }

    fn splits(&self, path: &Path) -> Result<(Dataset, Dataset, Dataset)> {
        let ds = Dataset::read(path, &self.schemas)?;
        split(&ds, &self.schemas, self.cfg.split_fractions(), self.cfg.seeds.split)
    }
}

/// Runs one parsed command line.
pub fn run(cli: Cli) -> Result<()> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(Error::config("threads", "must be at least 1"));
        }
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(p) = cli.profile {
        cfg.profile = p;
    }
    if let Some(d) = cli.out_dir {
        cfg.out_dir = d;
    }
    match &cli.command {
        Command::Generate(a) => {
            if let Some(n) = a.per_technology {
                cfg.dataset.per_technology = n;
            }
            if let Some(s) = a.seed {
                cfg.seeds.dataset = s;
            }
        }
        Command::Train(a) => {
            if let Some(v) = a.epochs {
                cfg.training.epochs = v;
            }
            if let Some(v) = a.patience {
                cfg.training.patience = v;
            }
            if let Some(v) = a.batch_size {
                cfg.training.batch_size = v;
            }
            if let Some(v) = a.seed {
                cfg.seeds.training = v;
            }
        }
        Command::Optimize(a) => {
            if a.paper_scale {
                cfg.moo.population = 1000;
                cfg.moo.generations = 100;
            }
            if let Some(v) = a.population {
                cfg.moo.population = v;
            }
            if let Some(v) = a.generations {
                cfg.moo.generations = v;
            }
            if let Some(v) = a.seed {
                cfg.seeds.moo = v;
            }
        }
        _ => {}
    }
    cfg.validate()?;
    let ctx = Context {
        schemas: cfg.schemas()?,
        cfg,
    };
    match cli.command {
        Command::Generate(a) => generate(&ctx, a),
        Command::Train(a) => train(&ctx, a),
        Command::Evaluate(a) => evaluate_cmd(&ctx, a),
        Command::Optimize(a) => optimize(&ctx, a),
        Command::ValidatePareto(a) => validate(&ctx, a),
    }
}

fn generate(ctx: &Context, a: GenerateArgs) -> Result<()> {
    let cfg = &ctx.cfg;
    let opts = GenerateOptions {
        oversample: cfg.dataset.oversample,
        max_rounds: cfg.dataset.max_rounds,
    };
    let ds = generate_dataset(&ctx.schemas, cfg.dataset.per_technology, cfg.seeds.dataset, opts, &cfg.system)?;
    let path = a.out.unwrap_or_else(|| ctx.out("dataset.csv"));
    ds.write(&path, &ctx.schemas)?;
    println!("wrote {} records to {}", ds.len(), path.display());
    Ok(())
}

fn default_model_path(ctx: &Context, kind: ModelKind) -> PathBuf {
    ctx.out(&format!("{}.json", kind.file_stem()))
}

fn train(ctx: &Context, a: TrainArgs) -> Result<()> {
    let (tr, va, _) = ctx.splits(&ctx.data_path(&a.data))?;
    let settings = ctx.cfg.train_settings();
    let out = a.out.unwrap_or_else(|| default_model_path(ctx, a.model));
    let history = match a.model {
        ModelKind::Vae => {
            let profile = ctx.cfg.profile()?;
            let mut c = VaeConfig::for_profile(profile, &ctx.schemas);
            if let Some(l) = ctx.cfg.training.latent_dim {
                c.latent_dim = l;
            }
            c.loss_weights.kl = ctx.cfg.training.kl_weight;
            c.train = settings;
            let mut b = VaeBundle::build(c, &ctx.schemas)?;
            b.train(&tr, &va, &ctx.schemas)?;
            b.save(&out)?;
            b.history
        }
        ModelKind::DnnAsm | ModelKind::DnnPmsm => {
            let tech = if a.model == ModelKind::DnnAsm { ASM_ID } else { PMSM_ID };
            let m = train_direct(&tr, &va, &ctx.schemas, DirectConfig::new(tech, settings))?;
            m.save(&out)?;
            m.history
        }
    };
    let curves = out.with_extension("curves.csv");
    write_text(&curves, &history.to_csv_string())?;
    println!(
        "trained {} for {} epochs (best epoch {}); bundle {}, curves {}",
        a.model.file_stem(),
        history.epochs.len(),
        history.best_epoch.map_or("-".into(), |e| e.to_string()),
        out.display(),
        curves.display()
    );
    Ok(())
}

fn reports_csv(rows: &[(String, String, &MetricReport)]) -> String {
    let o = |v: Option<f64>| v.map_or(String::new(), |x| format!("{x:.16e}"));
    let mut s = String::from("scope,quantity,count,mae,rmse,pcc,mre,mre_excluded\n");
    for (scope, q, r) in rows {
        s.push_str(&format!(
            "{scope},{q},{},{:.16e},{:.16e},{},{},{}\n",
            r.count,
            r.mae,
            r.rmse,
            o(r.pcc),
            o(r.mre),
            r.mre_excluded
        ));
    }
    s
}

fn evaluate_cmd(ctx: &Context, a: EvaluateArgs) -> Result<()> {
    let (tr, va, te) = ctx.splits(&ctx.data_path(&a.data))?;
    let set = match a.split {
        SplitName::Train => tr,
        SplitName::Val => va,
        SplitName::Test => te,
    };
    let vae_path = a.vae.unwrap_or_else(|| default_model_path(ctx, ModelKind::Vae));
    let bundle = VaeBundle::load(&vae_path, &ctx.schemas)?;
    let ev = evaluate(&bundle, &set, &ctx.schemas)?;

    let mut rows: Vec<(String, String, &MetricReport)> = Vec::new();
    for (scope, reps) in [("all", &ev.kpis), ("asm", &ev.kpis_asm), ("pmsm", &ev.kpis_pmsm)] {
        for (k, r) in KPI_NAMES.iter().zip(reps) {
            rows.push((scope.to_string(), k.to_string(), r));
        }
    }
    write_text(&ctx.out("kpi-metrics.csv"), &reports_csv(&rows))?;
    let prow: Vec<(String, String, &MetricReport)> = ev
        .parameters
        .iter()
        .map(|(n, r)| ("reconstruction".to_string(), n.clone(), r))
        .collect();
    let mut ptext = reports_csv(&prow);
    ptext.push_str(&format!(
        "reconstruction,all_continuous,,,,,{:.16e},\ntag,accuracy,,,,,{:.16e},\n",
        ev.reconstruction_mre, ev.tag_accuracy
    ));
    write_text(&ctx.out("parameter-metrics.csv"), &ptext)?;

    let mut scatter = String::from("index,technology,");
    scatter.push_str(&KPI_NAMES.iter().map(|k| format!("true_{k},pred_{k}")).collect::<Vec<_>>().join(","));
    scatter.push('\n');
    let inputs: Vec<Vec<f64>> = set
        .records
        .iter()
        .map(|r| crate::dataset::encode_combined(&r.design, &ctx.schemas).map(|v| v.0))
        .collect::<Result<_>>()?;
    let means: Vec<Vec<f64>> = bundle.encode_batch(&inputs)?.into_iter().map(|l| l.mean).collect();
    let preds = bundle.predict_kpis_batch(&means)?;
    for (i, (r, p)) in set.records.iter().zip(&preds).enumerate() {
        let (t, p) = (r.kpis.to_array(), p.to_array());
        scatter.push_str(&format!("{i},{}", r.design.technology_id));
        for j in 0..3 {
            scatter.push_str(&format!(",{:.16e},{:.16e}", t[j], p[j]));
        }
        scatter.push('\n');
    }
    write_text(&ctx.out("kpi-scatter.csv"), &scatter)?;

    let mut table = ComparisonTable::default();
    for (path, tech, name, vae_reps) in [
        (a.dnn_asm, ASM_ID, "asm", &ev.kpis_asm),
        (a.dnn_pmsm, PMSM_ID, "pmsm", &ev.kpis_pmsm),
    ] {
        let kind = if tech == ASM_ID { ModelKind::DnnAsm } else { ModelKind::DnnPmsm };
        let path = path.unwrap_or_else(|| default_model_path(ctx, kind));
        if !path.exists() {
            continue;
        }
        let m = DirectModel::load(&path, &ctx.schemas)?;
        let d = evaluate_direct(&m, &set)?;
        table.extend(ComparisonTable::build(name, &KPI_NAMES, vae_reps, &d)?);
    }
    if !table.rows.is_empty() {
        write_text(&ctx.out("comparison.csv"), &table.to_csv_string())?;
        write_text(&ctx.out("comparison.txt"), &table.to_text())?;
        print!("{}", table.to_text());
    }
    for (k, r) in KPI_NAMES.iter().zip(&ev.kpis) {
        println!(
            "{k:<14} PCC {} MRE {}",
            r.pcc.map_or("-".into(), |v| format!("{v:.4}")),
            r.mre.map_or("-".into(), |v| format!("{v:.3}%"))
        );
    }
    println!(
        "reconstruction MRE {:.3}%  technology tag accuracy {:.4}",
        ev.reconstruction_mre, ev.tag_accuracy
    );
    Ok(())
}

fn optimize(ctx: &Context, a: OptimizeArgs) -> Result<()> {
    let wf: Workflow = a.workflow.into();
    let settings = ctx.cfg.moo_settings();
    let stem = match wf {
        Workflow::Vae => ModelKind::Vae,
        Workflow::DirectAsm => ModelKind::DnnAsm,
        Workflow::DirectPmsm => ModelKind::DnnPmsm,
    };
    let model_path = a.model.unwrap_or_else(|| default_model_path(ctx, stem));
    let run = match wf {
        Workflow::Vae => optimize_latent(&VaeBundle::load(&model_path, &ctx.schemas)?, &ctx.schemas, &settings)?,
        _ => {
            let m = DirectModel::load(&model_path, &ctx.schemas)?;
            if Some(m.technology_id()) != wf.technology() {
                return Err(Error::config("model", format!("{} holds the wrong technology", model_path.display())));
            }
            optimize_direct(&m, &ctx.schemas, &settings)?
        }
    };
    let out = a.out.unwrap_or_else(|| ctx.out(&format!("pareto-{wf}.csv")));
    run.archive.write(&out)?;
    write_text(&out.with_extension("svg"), &pareto_svg(&[&run.archive]))?;
    let mut hist = String::from("generation,front_size,feasible,best_obj_0,best_obj_1\n");
    for g in &run.result.history {
        hist.push_str(&format!(
            "{},{},{},{:.16e},{:.16e}\n",
            g.generation, g.front_size, g.feasible, g.best[0], g.best[1]
        ));
    }
    write_text(&out.with_extension("history.csv"), &hist)?;
    println!("{} Pareto designs written to {}", run.archive.len(), out.display());
    Ok(())
}

fn validate(ctx: &Context, a: ValidateArgs) -> Result<()> {
    let mut summaries: Vec<ValidationSummary> = Vec::new();
    let mut archives = Vec::new();
    for path in &a.archives {
        let mut archive = ParetoArchive::read(path)?;
        let s = validate_pareto(&mut archive, &ctx.schemas, &ctx.cfg.system)?;
        let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("pareto");
        let enriched = path.with_file_name(format!("{stem}-validated.csv"));
        archive.write(&enriched)?;
        println!(
            "{}: {} of {} designs geometrically valid ({:.1}%)",
            s.workflow,
            s.valid,
            s.entries,
            100.0 * s.valid_fraction
        );
        summaries.push(s);
        archives.push(archive);
    }
    let mut text = ValidationSummary::csv_header();
    text.push('\n');
    for s in &summaries {
        text.push_str(&s.csv_row());
        text.push('\n');
    }
    let out = a.out.unwrap_or_else(|| ctx.out("pareto-validation.csv"));
    write_text(&out, &text)?;
    let refs: Vec<&ParetoArchive> = archives.iter().collect();
    write_text(&out.with_extension("svg"), &pareto_svg(&refs))?;
    Ok(())
}
