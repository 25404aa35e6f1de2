use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::nsga2::{dominates, nsga2_run, Evaluation, Individual, MooProblem, MooSettings, Nsga2Result};
use crate::dataset::{combined_column_names, decode_combined, encode_combined, CombinedVector};
use crate::direct::DirectModel;
use crate::error::{Error, Result};
use crate::machine_models::{
    evaluate_kpis, validate_geometry, KpiVector, MachineDesign, SchemaSet, SystemParameters, ASM_ID,
    KPI_NAMES, PMSM_ID,
};
use crate::vae::VaeBundle;

/// Half-width of the latent search box.
pub const LATENT_BOUND: f64 = 4.0;

const CHUNK: usize = 256;

/// Snaps a raw decoder output onto the design space: known tag, one active block,
/// discrete values in their domains, continuous values within bounds.
pub fn transform_decoded(raw: &[f64], schemas: &SchemaSet) -> Result<CombinedVector> {
    if raw.len() != schemas.combined_dim() {
        return Err(Error::dim(schemas.combined_dim(), raw.len(), "decoded vector"));
    }
    if raw.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("decoded vector".into()));
    }
    let tech = if raw[0] <= 0.5 * (ASM_ID + PMSM_ID) as f64 { ASM_ID } else { PMSM_ID };
    let schema = schemas.get(tech)?;
    let off = schemas.block_offset(tech)?;
    let design = MachineDesign::from_native(schema, &raw[off..off + schema.native_dim()], true)?;
    encode_combined(&design, schemas)
}

/// Cost and negated power: both minimized.
pub fn objectives_of(k: &KpiVector) -> Vec<f64> {
    vec![k.material_cost, -k.max_power]
}

/// decode → transform → encode (mean) → predict, for many latent points.
pub fn latent_objective_batch(
    bundle: &VaeBundle,
    schemas: &SchemaSet,
    zs: &[Vec<f64>],
) -> Result<Vec<(KpiVector, CombinedVector)>> {
    Ok(latent_evaluate_batch(bundle, schemas, zs)?
        .into_iter()
        .map(|(k, p, _)| (k, p))
        .collect())
}

pub fn latent_objective(bundle: &VaeBundle, schemas: &SchemaSet, z: &[f64]) -> Result<(KpiVector, CombinedVector)> {
    Ok(latent_objective_batch(bundle, schemas, &[z.to_vec()])?.remove(0))
}

/// Bound violations of the raw decoded active block, before any clamping, as
/// `max(lo - p, p - hi) / (hi - lo)` per parameter.
pub fn decoded_bound_constraints(raw: &[f64], schemas: &SchemaSet) -> Result<Vec<f64>> {
    if raw.len() != schemas.combined_dim() {
        return Err(Error::dim(schemas.combined_dim(), raw.len(), "decoded vector"));
    }
    let tech = if raw[0] <= 0.5 * (ASM_ID + PMSM_ID) as f64 { ASM_ID } else { PMSM_ID };
    let schema = schemas.get(tech)?;
    let off = schemas.block_offset(tech)?;
    Ok(raw[off..off + schema.native_dim()]
        .iter()
        .zip(schema.native_bounds())
        .map(|(x, (lo, hi))| (lo - x).max(x - hi) / (hi - lo).max(f64::EPSILON))
        .collect())
}

fn latent_evaluate_batch(
    bundle: &VaeBundle,
    schemas: &SchemaSet,
    zs: &[Vec<f64>],
) -> Result<Vec<(KpiVector, CombinedVector, Vec<f64>)>> {
    let parts = zs
        .par_chunks(CHUNK)
        .map(|chunk| -> Result<Vec<(KpiVector, CombinedVector, Vec<f64>)>> {
            let decoded = bundle.decode_batch(chunk)?;
            let transformed = decoded
                .iter()
                .map(|p| transform_decoded(p, schemas))
                .collect::<Result<Vec<_>>>()?;
            let constraints = decoded
                .iter()
                .map(|p| decoded_bound_constraints(p, schemas))
                .collect::<Result<Vec<_>>>()?;
            let rows: Vec<Vec<f64>> = transformed.iter().map(|v| v.0.clone()).collect();
            let z_o: Vec<Vec<f64>> = bundle.encode_batch(&rows)?.into_iter().map(|l| l.mean).collect();
            let kpis = bundle.predict_kpis_batch(&z_o)?;
            Ok(kpis
                .into_iter()
                .zip(transformed)
                .zip(constraints)
                .map(|((k, p), c)| (k, p, c))
                .collect())
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(parts.into_iter().flatten().collect())
}

pub struct LatentProblem<'a> {
    bundle: &'a VaeBundle,
    schemas: &'a SchemaSet,
    bounds: Vec<(f64, f64)>,
}

impl<'a> LatentProblem<'a> {
    pub fn new(bundle: &'a VaeBundle, schemas: &'a SchemaSet) -> Result<Self> {
        bundle.check_schemas(schemas)?;
        Ok(LatentProblem {
            bounds: vec![(-LATENT_BOUND, LATENT_BOUND); bundle.latent_dim()],
            bundle,
            schemas,
        })
    }
}

impl MooProblem for LatentProblem<'_> {
    fn bounds(&self) -> &[(f64, f64)] {
        &self.bounds
    }

    fn n_obj(&self) -> usize {
        2
    }

    fn evaluate_batch(&self, xs: &[Vec<f64>]) -> Result<Vec<Evaluation>> {
        Ok(latent_evaluate_batch(self.bundle, self.schemas, xs)?
            .into_iter()
            .map(|(k, _, c)| Evaluation {
                objectives: objectives_of(&k),
                constraints: c,
            })
            .collect())
    }
}

/// Predicted KPIs and per-variable bound constraints `max(lo - x, x - hi)` for a native vector.
pub fn direct_objective(model: &DirectModel, schemas: &SchemaSet, p: &[f64]) -> Result<(KpiVector, Vec<f64>)> {
    let schema = schemas.get(model.technology_id())?;
    let design = MachineDesign::from_native(schema, p, false)?;
    let k = model.predict_native_batch(&[design.native_vector()])?.remove(0);
    Ok((k, bound_constraints(&schema.native_bounds(), p)))
}

fn bound_constraints(bounds: &[(f64, f64)], p: &[f64]) -> Vec<f64> {
    p.iter().zip(bounds).map(|(x, (lo, hi))| (lo - x).max(x - hi)).collect()
}

pub struct DirectProblem<'a> {
    model: &'a DirectModel,
    schemas: &'a SchemaSet,
    bounds: Vec<(f64, f64)>,
}

impl<'a> DirectProblem<'a> {
    pub fn new(model: &'a DirectModel, schemas: &'a SchemaSet) -> Result<Self> {
        let schema = schemas.get(model.technology_id())?;
        if schema.fingerprint() != model.schema_fingerprint {
            return Err(Error::SchemaMismatch("model was built for a different technology schema".into()));
        }
        Ok(DirectProblem {
            bounds: schema.native_bounds(),
            model,
            schemas,
        })
    }

    fn snapped(&self, xs: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
        let schema = self.schemas.get(self.model.technology_id())?;
        xs.iter()
            .map(|x| MachineDesign::from_native(schema, x, false).map(|d| d.native_vector()))
            .collect()
    }
}

impl MooProblem for DirectProblem<'_> {
    fn bounds(&self) -> &[(f64, f64)] {
        &self.bounds
    }

    fn n_obj(&self) -> usize {
        2
    }

    fn evaluate_batch(&self, xs: &[Vec<f64>]) -> Result<Vec<Evaluation>> {
        let snapped = self.snapped(xs)?;
        let kpis = snapped
            .par_chunks(CHUNK)
            .map(|c| self.model.predict_native_batch(c))
            .collect::<Result<Vec<_>>>()?;
        Ok(kpis
            .into_iter()
            .flatten()
            .zip(xs)
            .map(|(k, x)| Evaluation {
                objectives: objectives_of(&k),
                constraints: bound_constraints(&self.bounds, x),
            })
            .collect())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Workflow {
    Vae,
    DirectAsm,
    DirectPmsm,
}

impl Workflow {
    pub fn as_str(self) -> &'static str {
        match self {
            Workflow::Vae => "vae",
            Workflow::DirectAsm => "direct-asm",
            Workflow::DirectPmsm => "direct-pmsm",
        }
    }

    /// Technology of a direct workflow.
    pub fn technology(self) -> Option<i64> {
        match self {
            Workflow::Vae => None,
            Workflow::DirectAsm => Some(ASM_ID),
            Workflow::DirectPmsm => Some(PMSM_ID),
        }
    }

    pub fn for_technology(id: i64) -> Result<Self> {
        match id {
            ASM_ID => Ok(Workflow::DirectAsm),
            PMSM_ID => Ok(Workflow::DirectPmsm),
            other => Err(Error::UnknownTechnology(other)),
        }
    }

    pub fn param_names(self, schemas: &SchemaSet) -> Result<Vec<String>> {
        Ok(match self.technology() {
            None => combined_column_names(schemas),
            Some(t) => {
                let s = schemas.get(t)?;
                let prefix = s.name.to_lowercase();
                s.param_names().map(|n| format!("{prefix}_{n}")).collect()
            }
        })
    }
}

impl fmt::Display for Workflow {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Workflow {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "vae" => Ok(Workflow::Vae),
            "direct-asm" | "direct_asm" => Ok(Workflow::DirectAsm),
            "direct-pmsm" | "direct_pmsm" => Ok(Workflow::DirectPmsm),
            other => Err(Error::config("workflow", format!("unknown workflow `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArchiveEntry {
    pub decision: Vec<f64>,
    pub technology_id: i64,
    /// Combined vector for the latent workflow, native vector for a direct one.
    pub design_vector: Vec<f64>,
    pub predicted: KpiVector,
    pub objectives: Vec<f64>,
    pub valid: Option<bool>,
    pub violated: Vec<String>,
    pub recalculated: Option<KpiVector>,
    /// Percent, per KPI, prediction against recalculation.
    pub mre: Option<[f64; 3]>,
}

impl ArchiveEntry {
    pub fn new(decision: Vec<f64>, technology_id: i64, design_vector: Vec<f64>, predicted: KpiVector) -> Self {
        ArchiveEntry {
            decision,
            technology_id,
            design_vector,
            objectives: objectives_of(&predicted),
            predicted,
            valid: None,
            violated: Vec::new(),
            recalculated: None,
            mre: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParetoArchive {
    pub workflow: Workflow,
    pub param_names: Vec<String>,
    pub entries: Vec<ArchiveEntry>,
}

/// First pair `(i, j)` where entry `i` dominates entry `j`.
pub fn find_dominated_pair(objectives: &[&[f64]]) -> Option<(usize, usize)> {
    for i in 0..objectives.len() {
        for j in 0..objectives.len() {
            if i != j && dominates(objectives[i], objectives[j]) {
                return Some((i, j));
            }
        }
    }
    None
}

impl ParetoArchive {
    /// Keeps the non-dominated candidates, ordered by the first objective.
    pub fn from_candidates(workflow: Workflow, param_names: Vec<String>, candidates: Vec<ArchiveEntry>) -> Self {
        let objs: Vec<&[f64]> = candidates.iter().map(|e| e.objectives.as_slice()).collect();
        let keep: Vec<bool> = (0..objs.len())
            .map(|j| !(0..objs.len()).any(|i| i != j && dominates(objs[i], objs[j])))
            .collect();
        let mut entries: Vec<ArchiveEntry> = candidates
            .into_iter()
            .zip(keep)
            .filter_map(|(e, k)| k.then_some(e))
            .collect();
        entries.sort_by(|a, b| {
            a.objectives
                .iter()
                .zip(&b.objectives)
                .map(|(x, y)| x.total_cmp(y))
                .find(|o| o.is_ne())
                .unwrap_or(std::cmp::Ordering::Equal)
        });
        entries.dedup_by(|a, b| a.objectives == b.objectives && a.design_vector == b.design_vector);
        ParetoArchive {
            workflow,
            param_names,
            entries,
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn check_nondominated(&self) -> Result<()> {
        let objs: Vec<&[f64]> = self.entries.iter().map(|e| e.objectives.as_slice()).collect();
        match find_dominated_pair(&objs) {
            None => Ok(()),
            Some((i, j)) => Err(Error::Format(format!("archive entry {i} dominates entry {j}"))),
        }
    }

    /// Decoded design of one entry; `None` if the vector does not describe one.
    pub fn design(&self, index: usize, schemas: &SchemaSet) -> Result<MachineDesign> {
        let e = &self.entries[index];
        match self.workflow.technology() {
            None => decode_combined(&CombinedVector(e.design_vector.clone()), schemas, false),
            Some(t) => MachineDesign::from_native(schemas.get(t)?, &e.design_vector, false),
        }
    }

    pub fn to_csv_string(&self) -> Result<String> {
        let n_dec = self.entries.first().map_or(0, |e| e.decision.len());
        let mut w = csv::WriterBuilder::new().from_writer(Vec::new());
        let mut header = vec!["workflow".to_string(), "technology".to_string()];
        header.extend((0..n_dec).map(|i| format!("x_{i}")));
        header.extend(self.param_names.iter().map(|n| format!("p_{n}")));
        header.extend(KPI_NAMES.iter().map(|n| format!("pred_{n}")));
        header.extend(["obj_0".to_string(), "obj_1".to_string(), "valid".into(), "violated".into()]);
        header.extend(KPI_NAMES.iter().map(|n| format!("oracle_{n}")));
        header.extend(KPI_NAMES.iter().map(|n| format!("mre_{n}")));
        w.write_record(&header)?;
        let f = |v: f64| format!("{v:.16e}");
        for e in &self.entries {
            if e.decision.len() != n_dec || e.design_vector.len() != self.param_names.len() {
                return Err(Error::Format("archive entries have inconsistent lengths".into()));
            }
            let mut row = vec![self.workflow.to_string(), e.technology_id.to_string()];
            row.extend(e.decision.iter().map(|&v| f(v)));
            row.extend(e.design_vector.iter().map(|&v| f(v)));
            row.extend(e.predicted.to_array().iter().map(|&v| f(v)));
            row.extend(e.objectives.iter().map(|&v| f(v)));
            row.push(e.valid.map_or(String::new(), |v| v.to_string()));
            row.push(e.violated.join(";"));
            match e.recalculated {
                Some(k) => row.extend(k.to_array().iter().map(|&v| f(v))),
                None => row.extend(std::iter::repeat_n(String::new(), 3)),
            }
            match e.mre {
                Some(m) => row.extend(m.iter().map(|&v| f(v))),
                None => row.extend(std::iter::repeat_n(String::new(), 3)),
            }
            w.write_record(&row)?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Format(e.to_string()))?;
        String::from_utf8(bytes).map_err(|e| Error::Format(e.to_string()))
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        std::fs::write(path, self.to_csv_string()?).map_err(|e| Error::io(path, e))
    }

    /// Parses an exported archive and rejects it if any entry dominates another.
    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_csv_str(&text)
    }

    pub fn from_csv_str(text: &str) -> Result<Self> {
        let mut r = csv::ReaderBuilder::new().from_reader(text.as_bytes());
        let header: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
        let cols = |prefix: &str| -> Vec<usize> {
            header.iter().enumerate().filter(|(_, h)| h.starts_with(prefix)).map(|(i, _)| i).collect()
        };
        let (x_cols, p_cols) = (cols("x_"), cols("p_"));
        let (pred_cols, obj_cols) = (cols("pred_"), cols("obj_"));
        let (oracle_cols, mre_cols) = (cols("oracle_"), cols("mre_"));
        let named = |n: &str| {
            header
                .iter()
                .position(|h| h == n)
                .ok_or_else(|| Error::Format(format!("archive is missing column `{n}`")))
        };
        let (wf_col, tech_col) = (named("workflow")?, named("technology")?);
        let (valid_col, viol_col) = (named("valid")?, named("violated")?);
        if pred_cols.len() != 3 || oracle_cols.len() != 3 || mre_cols.len() != 3 || obj_cols.len() != 2 {
            return Err(Error::Format("archive KPI columns are incomplete".into()));
        }
        let num = |s: &str| -> Result<f64> {
            s.parse::<f64>().map_err(|_| Error::Format(format!("not a number: `{s}`")))
        };
        let nums = |rec: &csv::StringRecord, idx: &[usize]| -> Result<Vec<f64>> {
            idx.iter().map(|&i| num(&rec[i])).collect()
        };
        let optional3 = |rec: &csv::StringRecord, idx: &[usize]| -> Result<Option<[f64; 3]>> {
            if idx.iter().all(|&i| rec[i].is_empty()) {
                return Ok(None);
            }
            let v = nums(rec, idx)?;
            Ok(Some([v[0], v[1], v[2]]))
        };
        let mut workflow = None;
        let mut entries = Vec::new();
        for rec in r.records() {
            let rec = rec?;
            let wf: Workflow = rec[wf_col].parse()?;
            if workflow.is_some_and(|w| w != wf) {
                return Err(Error::Format("archive mixes workflows".into()));
            }
            workflow = Some(wf);
            let technology_id = rec[tech_col]
                .parse()
                .map_err(|_| Error::Format(format!("bad technology `{}`", &rec[tech_col])))?;
            let valid = match &rec[valid_col] {
                "" => None,
                "true" => Some(true),
                "false" => Some(false),
                other => return Err(Error::Format(format!("bad validity flag `{other}`"))),
            };
            let violated = rec[viol_col]
                .split(';')
                .filter(|s| !s.is_empty())
                .map(str::to_string)
                .collect();
            let pred = nums(&rec, &pred_cols)?;
            entries.push(ArchiveEntry {
                decision: nums(&rec, &x_cols)?,
                technology_id,
                design_vector: nums(&rec, &p_cols)?,
                predicted: KpiVector::from_slice(&pred),
                objectives: nums(&rec, &obj_cols)?,
                valid,
                violated,
                recalculated: optional3(&rec, &oracle_cols)?.map(|k| KpiVector::from_slice(&k)),
                mre: optional3(&rec, &mre_cols)?,
            });
        }
        let archive = ParetoArchive {
            workflow: workflow.ok_or_else(|| Error::Format("archive has no entries".into()))?,
            param_names: p_cols.iter().map(|&i| header[i]["p_".len()..].to_string()).collect(),
            entries,
        };
        archive.check_nondominated()?;
        Ok(archive)
    }
}

#[derive(Debug, Clone)]
pub struct OptimizationRun {
    pub archive: ParetoArchive,
    pub result: Nsga2Result,
}

/// Feasible front members, or the least-violating front when nothing is feasible.
fn archived_members(result: &Nsga2Result) -> Vec<&Individual> {
    let feasible: Vec<&Individual> = result.front.iter().filter(|i| i.is_feasible()).collect();
    if feasible.is_empty() {
        result.front.iter().filter(|i| i.violation.is_finite()).collect()
    } else {
        feasible
    }
}

/// Latent-space optimization of the cost/power trade-off. Decoded parameters
/// outside their bounds count as constraint violations.
pub fn optimize_latent(bundle: &VaeBundle, schemas: &SchemaSet, settings: &MooSettings) -> Result<OptimizationRun> {
    let problem = LatentProblem::new(bundle, schemas)?;
    let result = nsga2_run(&problem, settings)?;
    let xs: Vec<Vec<f64>> = archived_members(&result).into_iter().map(|i| i.x.clone()).collect();
    let evals = latent_objective_batch(bundle, schemas, &xs)?;
    let candidates = xs
        .into_iter()
        .zip(evals)
        .map(|(x, (k, p))| {
            let t = p.technology()?;
            Ok(ArchiveEntry::new(x, t, p.0, k))
        })
        .collect::<Result<Vec<_>>>()?;
    let archive = ParetoArchive::from_candidates(Workflow::Vae, Workflow::Vae.param_names(schemas)?, candidates);
    Ok(OptimizationRun { archive, result })
}

/// Native-space optimization with one technology's direct model.
pub fn optimize_direct(model: &DirectModel, schemas: &SchemaSet, settings: &MooSettings) -> Result<OptimizationRun> {
    let problem = DirectProblem::new(model, schemas)?;
    let result = nsga2_run(&problem, settings)?;
    let xs: Vec<Vec<f64>> = archived_members(&result).into_iter().map(|i| i.x.clone()).collect();
    let snapped = problem.snapped(&xs)?;
    let kpis = model.predict_native_batch(&snapped)?;
    let tech = model.technology_id();
    let candidates = xs
        .into_iter()
        .zip(snapped)
        .zip(kpis)
        .map(|((x, p), k)| ArchiveEntry::new(x, tech, p, k))
        .collect();
    let wf = Workflow::for_technology(tech)?;
    let archive = ParetoArchive::from_candidates(wf, wf.param_names(schemas)?, candidates);
    Ok(OptimizationRun { archive, result })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationSummary {
    pub workflow: Workflow,
    pub entries: usize,
    pub valid: usize,
    pub valid_fraction: f64,
    /// Per KPI over valid entries; `None` when nothing was valid.
    pub mre_mean: Option<[f64; 3]>,
    pub mre_median: Option<[f64; 3]>,
    pub mre_max: Option<[f64; 3]>,
}

impl ValidationSummary {
    pub fn csv_header() -> String {
        let mut cols = vec!["workflow".to_string(), "entries".into(), "valid".into(), "valid_fraction".into()];
        for stat in ["mean", "median", "max"] {
            cols.extend(KPI_NAMES.iter().map(|k| format!("mre_{stat}_{k}")));
        }
        cols.join(",")
    }

    pub fn csv_row(&self) -> String {
        let mut cols = vec![
            self.workflow.to_string(),
            self.entries.to_string(),
            self.valid.to_string(),
            format!("{:.16e}", self.valid_fraction),
        ];
        for stat in [self.mre_mean, self.mre_median, self.mre_max] {
            match stat {
                Some(v) => cols.extend(v.iter().map(|x| format!("{x:.16e}"))),
                None => cols.extend(std::iter::repeat_n(String::new(), 3)),
            }
        }
        cols.join(",")
    }
}

/// Decodes every entry, checks its geometry and recalculates KPIs for the valid ones.
pub fn validate_pareto(
    archive: &mut ParetoArchive,
    schemas: &SchemaSet,
    sys: &SystemParameters,
) -> Result<ValidationSummary> {
    let mut mres: Vec<[f64; 3]> = Vec::new();
    for i in 0..archive.entries.len() {
        let design = archive.design(i, schemas)?;
        let report = validate_geometry(&design, schemas)?;
        let e = &mut archive.entries[i];
        e.valid = Some(report.valid);
        e.violated = report.rule_ids();
        if report.valid {
            let oracle = evaluate_kpis(&design, schemas, sys)?;
            let p = e.predicted.to_array();
            let o = oracle.to_array();
            let m = [0, 1, 2].map(|j| (p[j] - o[j]).abs() / o[j].abs().max(crate::metrics::MRE_ZERO_THRESHOLD) * 100.0);
            e.recalculated = Some(oracle);
            e.mre = Some(m);
            mres.push(m);
        } else {
            e.recalculated = None;
            e.mre = None;
        }
    }
    let n = archive.entries.len();
    let stat = |f: &dyn Fn(&mut Vec<f64>) -> f64| -> Option<[f64; 3]> {
        (!mres.is_empty()).then(|| {
            [0, 1, 2].map(|j| {
                let mut col: Vec<f64> = mres.iter().map(|m| m[j]).collect();
                f(&mut col)
            })
        })
    };
    Ok(ValidationSummary {
        workflow: archive.workflow,
        entries: n,
        valid: mres.len(),
        valid_fraction: if n == 0 { 0.0 } else { mres.len() as f64 / n as f64 },
        mre_mean: stat(&|c| c.iter().sum::<f64>() / c.len() as f64),
        mre_median: stat(&|c| {
            c.sort_by(f64::total_cmp);
            let m = c.len() / 2;
            if c.len() % 2 == 0 { 0.5 * (c[m - 1] + c[m]) } else { c[m] }
        }),
        mre_max: stat(&|c| c.iter().copied().fold(f64::NEG_INFINITY, f64::max)),
    })
}

/// Cost against power scatter of one or more archives; invalid designs are drawn hollow.
pub fn pareto_svg(archives: &[&ParetoArchive]) -> String {
    const W: f64 = 640.0;
    const H: f64 = 480.0;
    const M: f64 = 60.0;
    const COLORS: [&str; 4] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd"];
    let pts: Vec<(f64, f64)> = archives
        .iter()
        .flat_map(|a| a.entries.iter().map(|e| (e.predicted.material_cost, e.predicted.max_power)))
        .collect();
    let span = |v: Vec<f64>| -> (f64, f64) {
        let lo = v.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if !lo.is_finite() {
            (0.0, 1.0)
        } else if hi > lo {
            (lo, hi)
        } else {
            (lo - 0.5, lo + 0.5)
        }
    };
    let (x0, x1) = span(pts.iter().map(|p| p.0).collect());
    let (y0, y1) = span(pts.iter().map(|p| p.1).collect());
    let sx = |x: f64| M + (x - x0) / (x1 - x0) * (W - 2.0 * M);
    let sy = |y: f64| H - M - (y - y0) / (y1 - y0) * (H - 2.0 * M);
    let mut s = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{W}\" height=\"{H}\" font-family=\"sans-serif\" font-size=\"12\">\n\
         <rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n\
         <line x1=\"{M}\" y1=\"{b}\" x2=\"{r}\" y2=\"{b}\" stroke=\"black\"/>\n\
         <line x1=\"{M}\" y1=\"{M}\" x2=\"{M}\" y2=\"{b}\" stroke=\"black\"/>\n\
         <text x=\"{cx}\" y=\"{t}\" text-anchor=\"middle\">material cost</text>\n\
         <text x=\"15\" y=\"{cy}\" transform=\"rotate(-90 15 {cy})\" text-anchor=\"middle\">max power (kW)</text>\n\
         <text x=\"{M}\" y=\"{t}\">{x0:.1}</text><text x=\"{r}\" y=\"{t}\" text-anchor=\"end\">{x1:.1}</text>\n\
         <text x=\"{lx}\" y=\"{b}\" text-anchor=\"end\">{y0:.1}</text><text x=\"{lx}\" y=\"{M}\" text-anchor=\"end\">{y1:.1}</text>\n",
        b = H - M,
        r = W - M,
        t = H - M + 20.0,
        cx = W / 2.0,
        cy = H / 2.0,
        lx = M - 5.0,
    );
    for (k, a) in archives.iter().enumerate() {
        let c = COLORS[k % COLORS.len()];
        s.push_str(&format!(
            "<text x=\"{}\" y=\"{}\" fill=\"{c}\">{}</text>\n",
            W - M - 100.0,
            M + 15.0 * k as f64,
            a.workflow
        ));
        for e in &a.entries {
            let fill = if e.valid == Some(false) { "none" } else { c };
            s.push_str(&format!(
                "<circle cx=\"{:.2}\" cy=\"{:.2}\" r=\"3\" stroke=\"{c}\" fill=\"{fill}\"/>\n",
                sx(e.predicted.material_cost),
                sy(e.predicted.max_power)
            ));
        }
    }
    s.push_str("</svg>\n");
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::machine_models::Profile;
    use proptest::prelude::*;

    fn desk() -> SchemaSet {
        SchemaSet::for_profile(Profile::Desk)
    }

    #[test]
    fn transform_examples() {
        let s = desk();
        let mut raw = vec![0.3; 19];
        raw[0] = 1.6;
        let t = transform_decoded(&raw, &s).unwrap();
        assert_eq!(t.0[0], 2.0);
        assert!(t.0[1..10].iter().all(|&v| v == 0.0));
        assert!(t.has_single_active_block(&s));
        assert_eq!(transform_decoded(&t.0, &s).unwrap(), t);

        let mut raw = vec![0.0; 19];
        raw[0] = 1.2;
        raw[1..6].copy_from_slice(&[200.0, 1.0, 120.0, 15.0, 1.0]);
        raw[6] = 3.7;
        raw[7] = 2.5;
        let t = transform_decoded(&raw, &s).unwrap();
        assert_eq!(t.0[0], 1.0);
        assert_eq!(t.0[6], 4.0);
        assert_eq!(t.0[7], 2.0);
        assert!(transform_decoded(&raw[..5], &s).is_err());
    }

    #[test]
    fn decoded_bounds() {
        let s = desk();
        let mut raw = vec![0.0; 19];
        raw[0] = 1.0;
        raw[1..10].copy_from_slice(&[200.0, 1.0, 150.0, 12.0, 1.0, 2.0, 3.0, 1.0, 1.0]);
        let c = decoded_bound_constraints(&raw, &s).unwrap();
        assert_eq!(c.len(), 9);
        assert!(c.iter().all(|&v| v <= 0.0));

        let (lo, hi) = s.asm.native_bounds()[2];
        raw[3] = hi + 0.1 * (hi - lo);
        let c = decoded_bound_constraints(&raw, &s).unwrap();
        assert!((c[2] - 0.1).abs() < 1e-12);
        assert!(c.iter().enumerate().all(|(i, &v)| i == 2 || v <= 0.0));
        assert!(decoded_bound_constraints(&raw[..5], &s).is_err());
    }

    proptest! {
        #[test]
        fn transform_idempotent_single_block(raw in prop::collection::vec(-500.0f64..500.0, 19)) {
            let s = desk();
            let t = transform_decoded(&raw, &s).unwrap();
            prop_assert!(t.has_single_active_block(&s));
            prop_assert!(decoded_bound_constraints(&t.0, &s).unwrap().iter().all(|&c| c <= 0.0));
            prop_assert_eq!(transform_decoded(&t.0, &s).unwrap(), t);
        }
    }

    fn entry(obj: [f64; 2]) -> ArchiveEntry {
        let k = KpiVector {
            material_cost: obj[0],
            max_power: -obj[1],
            max_torque: 1.0,
        };
        ArchiveEntry::new(vec![0.5], ASM_ID, vec![1.0], k)
    }

    #[test]
    fn archive_filters_and_round_trips() {
        let a = ParetoArchive::from_candidates(
            Workflow::DirectAsm,
            vec!["p".into()],
            vec![entry([2.0, 0.0]), entry([0.0, 2.0]), entry([1.0, 1.0]), entry([2.0, 2.0])],
        );
        assert_eq!(a.len(), 3);
        a.check_nondominated().unwrap();
        let text = a.to_csv_string().unwrap();
        assert_eq!(ParetoArchive::from_csv_str(&text).unwrap(), a);
        let mut bad = a.clone();
        bad.entries.push(entry([5.0, 5.0]));
        let text = bad.to_csv_string().unwrap();
        assert!(ParetoArchive::from_csv_str(&text).is_err());
        assert!(pareto_svg(&[&a]).contains("<circle"));
    }

    #[test]
    fn validation_flags_corrupt_entry_and_counts() {
        let s = desk();
        let sys = SystemParameters::default();
        let good = vec![220.0, 1.0, 150.0, 15.0, 1.0, 3.0, 2.0, 0.0, 1.0];
        let mut bad = good.clone();
        bad[2] = 190.0; // rotor larger than the stator allows
        let mut entries = Vec::new();
        for i in 0..10 {
            let v = if i < 7 { good.clone() } else { bad.clone() };
            let mut e = entry([i as f64, -(i as f64)]);
            e.design_vector = v;
            entries.push(e);
        }
        let mut a = ParetoArchive {
            workflow: Workflow::DirectAsm,
            param_names: Workflow::DirectAsm.param_names(&s).unwrap(),
            entries,
        };
        let summary = validate_pareto(&mut a, &s, &sys).unwrap();
        assert_eq!(summary.valid, 7);
        assert!((summary.valid_fraction - 0.7).abs() < 1e-15);
        assert_eq!(a.entries[9].valid, Some(false));
        assert!(a.entries[9].recalculated.is_none());
        assert!(a.entries[9].violated.contains(&"G1".to_string()));
        assert!(a.entries[0].recalculated.is_some());
        assert_eq!(summary.csv_row().split(',').count(), ValidationSummary::csv_header().split(',').count());
    }

    #[test]
    fn workflow_names() {
        for w in [Workflow::Vae, Workflow::DirectAsm, Workflow::DirectPmsm] {
            assert_eq!(w.as_str().parse::<Workflow>().unwrap(), w);
        }
        assert!("other".parse::<Workflow>().is_err());
    }
}
