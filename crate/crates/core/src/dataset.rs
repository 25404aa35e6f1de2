//! Design sampling, dataset assembly, the combined-vector encoding and
//! min-max normalization.

use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::machine_models::{
    evaluate_kpis, validate_geometry, KpiVector, MachineDesign, SchemaSet, SystemParameters,
    TechnologySchema, ASM_ID, PMSM_ID,
};

/// Derive an independent stream seed from a base seed and a label.
pub(crate) fn derive_seed(base: u64, label: u64) -> u64 {
    // splitmix64 finalizer
    let mut z = base ^ label.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub(crate) fn rng_from(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Latin hypercube sample of `n` designs: every continuous parameter has one
/// value in each of `n` equal-width strata; discrete parameters are uniform.
pub fn lhs_sample(schema: &TechnologySchema, n: usize, seed: u64) -> Result<Vec<MachineDesign>> {
    if n == 0 {
        return Err(Error::InvalidArgument("LHS sample size must be at least 1".into()));
    }
    let mut rng = rng_from(seed);
    let mut columns: Vec<Vec<f64>> = Vec::with_capacity(schema.continuous.len());
    for param in &schema.continuous {
        let mut strata: Vec<usize> = (0..n).collect();
        strata.shuffle(&mut rng);
        let width = (param.upper - param.lower) / n as f64;
        let column = strata
            .into_iter()
            .map(|s| {
                let u: f64 = rng.random();
                (param.lower + (s as f64 + u) * width).min(param.upper)
            })
            .collect();
        columns.push(column);
    }
    let designs = (0..n)
        .map(|i| {
            let continuous = columns.iter().map(|c| c[i]).collect();
            let discrete = schema
                .discrete
                .iter()
                .map(|d| d.domain[rng.random_range(0..d.domain.len())])
                .collect();
            MachineDesign::new(schema.technology_id, continuous, discrete)
        })
        .collect();
    Ok(designs)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Record {
    pub design: MachineDesign,
    pub kpis: KpiVector,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub profile: String,
    pub t_asm: usize,
    pub t_pmsm: usize,
    pub t_tot: usize,
    pub seed: u64,
    pub schema_fingerprints: [String; 2],
    /// Seconds since the Unix epoch; only ever written to the sidecar file.
    pub generated_at: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub records: Vec<Record>,
    pub meta: DatasetMeta,
}

impl Dataset {
    pub fn from_records(records: Vec<Record>, schemas: &SchemaSet, seed: u64) -> Self {
        let t_asm = records.iter().filter(|r| r.design.technology_id == ASM_ID).count();
        let t_tot = records.len();
        Dataset {
            records,
            meta: DatasetMeta {
                profile: schemas.profile.to_string(),
                t_asm,
                t_pmsm: t_tot - t_asm,
                t_tot,
                seed,
                schema_fingerprints: schemas.fingerprints(),
                generated_at: now_unix(),
            },
        }
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Per-technology counts differ by at most 3 %.
    pub fn is_balanced(&self) -> bool {
        let (a, b) = (self.meta.t_asm as f64, self.meta.t_pmsm as f64);
        let hi = a.max(b);
        hi == 0.0 || (a - b).abs() / hi <= 0.03
    }

    pub fn technology(&self, technology_id: i64) -> Vec<&Record> {
        self.records
            .iter()
            .filter(|r| r.design.technology_id == technology_id)
            .collect()
    }

    fn subset(&self, indices: &[usize], schemas: &SchemaSet) -> Dataset {
        let records = indices.iter().map(|&i| self.records[i].clone()).collect();
        let mut ds = Dataset::from_records(records, schemas, self.meta.seed);
        ds.meta.generated_at = self.meta.generated_at;
        ds
    }
}

fn now_unix() -> u64 {
    std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

#[derive(Debug, Clone, Copy)]
pub struct GenerateOptions {
    /// Initial LHS oversampling factor before geometry filtering.
    pub oversample: f64,
    /// Sampling rounds; each round after the first grows the factor from the observed acceptance rate.
    pub max_rounds: usize,
}

impl Default for GenerateOptions {
    fn default() -> Self {
        GenerateOptions {
            oversample: 1.3,
            max_rounds: 8,
        }
    }
}

const MAX_OVERSAMPLE: f64 = 100.0;

fn valid_designs_for(
    schema: &TechnologySchema,
    schemas: &SchemaSet,
    n: usize,
    seed: u64,
    opts: GenerateOptions,
) -> Result<Vec<MachineDesign>> {
    let mut factor = opts.oversample.max(1.0);
    let mut achieved = 0;
    for round in 0..opts.max_rounds.max(1) {
        let n_sample = (n as f64 * factor).ceil() as usize;
        let round_seed = derive_seed(seed, (schema.technology_id as u64) << 8 | round as u64);
        let candidates = lhs_sample(schema, n_sample, round_seed)?;
        let valid: Vec<MachineDesign> = candidates
            .into_iter()
            .filter(|d| validate_geometry(d, schemas).map(|r| r.valid).unwrap_or(false))
            .collect();
        achieved = valid.len();
        if achieved >= n {
            return Ok(valid.into_iter().take(n).collect());
        }
        let rate = (achieved.max(1) as f64) / n_sample as f64;
        factor = (1.1 / rate).min(MAX_OVERSAMPLE).max(factor * 1.5);
        log::debug!(
            "{}: {achieved}/{n} valid after round {round}, raising oversampling to {factor:.2}",
            schema.name
        );
    }
    Err(Error::InsufficientValid {
        technology: schema.technology_id,
        requested: n,
        achieved,
    })
}

/// Sample, geometry-filter and label `n_per_tech` designs per technology.
pub fn generate_dataset(
    schemas: &SchemaSet,
    n_per_tech: usize,
    seed: u64,
    opts: GenerateOptions,
    sys: &SystemParameters,
) -> Result<Dataset> {
    if n_per_tech == 0 {
        return Err(Error::InvalidArgument("n_per_tech must be at least 1".into()));
    }
    sys.validate()?;
    let mut designs = valid_designs_for(&schemas.asm, schemas, n_per_tech, seed, opts)?;
    designs.extend(valid_designs_for(&schemas.pmsm, schemas, n_per_tech, seed, opts)?);

    let records = designs
        .into_par_iter()
        .map(|design| {
            let kpis = evaluate_kpis(&design, schemas, sys)?;
            Ok(Record { design, kpis })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Dataset::from_records(records, schemas, seed))
}

/// `[t, 0…0, p_t, 0…0]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CombinedVector(pub Vec<f64>);

impl CombinedVector {
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Technology tag read with the nearest-integer rule.
    pub fn technology(&self) -> Result<i64> {
        let tag = self.0.first().copied().unwrap_or(f64::NAN);
        let t = tag.round();
        if t == ASM_ID as f64 || t == PMSM_ID as f64 {
            Ok(t as i64)
        } else {
            Err(Error::UnknownTechnology(if t.is_finite() { t as i64 } else { -1 }))
        }
    }

    /// Exactly one technology block carries values; index 0 is a known tag.
    pub fn has_single_active_block(&self, schemas: &SchemaSet) -> bool {
        if self.0.len() != schemas.combined_dim() {
            return false;
        }
        let Ok(t) = self.technology() else { return false };
        if self.0[0] != t as f64 {
            return false;
        }
        let other = if t == ASM_ID { PMSM_ID } else { ASM_ID };
        let off = schemas.block_offset(other).expect("known tech");
        let len = schemas.get(other).expect("known tech").native_dim();
        self.0[off..off + len].iter().all(|&v| v == 0.0)
    }
}

pub fn encode_combined(design: &MachineDesign, schemas: &SchemaSet) -> Result<CombinedVector> {
    let schema = schemas.get(design.technology_id)?;
    let native = design.native_vector();
    if native.len() != schema.native_dim() {
        return Err(Error::dim(schema.native_dim(), native.len(), "design vs schema"));
    }
    let mut v = vec![0.0; schemas.combined_dim()];
    v[0] = design.technology_id as f64;
    let off = schemas.block_offset(design.technology_id)?;
    v[off..off + native.len()].copy_from_slice(&native);
    Ok(CombinedVector(v))
}

pub fn decode_combined(v: &CombinedVector, schemas: &SchemaSet, clamp: bool) -> Result<MachineDesign> {
    if v.len() != schemas.combined_dim() {
        return Err(Error::dim(schemas.combined_dim(), v.len(), "combined vector"));
    }
    let t = v.technology()?;
    let schema = schemas.get(t)?;
    let off = schemas.block_offset(t)?;
    MachineDesign::from_native(schema, &v.0[off..off + schema.native_dim()], clamp)
}

/// Column names of the combined vector, prefixed by technology.
pub fn combined_column_names(schemas: &SchemaSet) -> Vec<String> {
    let mut names = vec!["tech".to_string()];
    for schema in schemas.iter() {
        let prefix = schema.name.to_lowercase();
        names.extend(schema.param_names().map(|n| format!("{prefix}_{n}")));
    }
    names
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SplitIndices {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

/// Stratified, seeded train/val/test index assignment.
pub fn split_indices(ds: &Dataset, fractions: (f64, f64, f64), seed: u64) -> Result<SplitIndices> {
    let (tr, va, te) = fractions;
    if !(tr > 0.0 && va > 0.0 && te > 0.0) {
        return Err(Error::InvalidArgument("split fractions must all be positive".into()));
    }
    if (tr + va + te - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidArgument(format!(
            "split fractions sum to {} instead of 1",
            tr + va + te
        )));
    }
    let mut rng = rng_from(seed);
    let mut out = SplitIndices {
        train: Vec::new(),
        val: Vec::new(),
        test: Vec::new(),
    };
    for tech in [ASM_ID, PMSM_ID] {
        let mut idx: Vec<usize> = (0..ds.len())
            .filter(|&i| ds.records[i].design.technology_id == tech)
            .collect();
        idx.shuffle(&mut rng);
        let n = idx.len();
        let n_train = ((n as f64) * tr).round() as usize;
        let n_val = (((n as f64) * va).round() as usize).min(n - n_train);
        out.train.extend_from_slice(&idx[..n_train]);
        out.val.extend_from_slice(&idx[n_train..n_train + n_val]);
        out.test.extend_from_slice(&idx[n_train + n_val..]);
    }
    out.train.shuffle(&mut rng);
    out.val.shuffle(&mut rng);
    out.test.shuffle(&mut rng);
    Ok(out)
}

pub fn split(
    ds: &Dataset,
    schemas: &SchemaSet,
    fractions: (f64, f64, f64),
    seed: u64,
) -> Result<(Dataset, Dataset, Dataset)> {
    let idx = split_indices(ds, fractions, seed)?;
    Ok((
        ds.subset(&idx.train, schemas),
        ds.subset(&idx.val, schemas),
        ds.subset(&idx.test, schemas),
    ))
}

/// Per-column min/max scaling to [0, 1].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MinMax {
    pub min: Vec<f64>,
    pub max: Vec<f64>,
}

impl MinMax {
    pub fn fit<'a>(rows: impl IntoIterator<Item = &'a [f64]>) -> Result<Self> {
        let mut it = rows.into_iter();
        let first = it.next().ok_or(Error::EmptyDataset)?;
        let mut min = first.to_vec();
        let mut max = first.to_vec();
        for row in it {
            if row.len() != min.len() {
                return Err(Error::dim(min.len(), row.len(), "normalization row"));
            }
            for (j, &v) in row.iter().enumerate() {
                min[j] = min[j].min(v);
                max[j] = max[j].max(v);
            }
        }
        Ok(MinMax { min, max })
    }

    pub fn dim(&self) -> usize {
        self.min.len()
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(self.min.iter().zip(&self.max))
            .map(|(&v, (&lo, &hi))| if hi > lo { (v - lo) / (hi - lo) } else { 0.0 })
            .collect()
    }

    pub fn invert(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(self.min.iter().zip(&self.max))
            .map(|(&v, (&lo, &hi))| lo + v * (hi - lo))
            .collect()
    }

    /// Scale factors `max - min` (zero for degenerate columns).
    pub fn ranges(&self) -> Vec<f64> {
        self.min.iter().zip(&self.max).map(|(lo, hi)| hi - lo).collect()
    }
}

/// Fitted on the training split only and stored with every model bundle.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormalizationStats {
    pub params: MinMax,
    pub kpis: MinMax,
}

impl NormalizationStats {
    pub fn fit(train: &Dataset, schemas: &SchemaSet) -> Result<Self> {
        if train.is_empty() {
            return Err(Error::EmptyDataset);
        }
        let encoded = train
            .records
            .iter()
            .map(|r| encode_combined(&r.design, schemas).map(|v| v.0))
            .collect::<Result<Vec<_>>>()?;
        let kpis: Vec<[f64; 3]> = train.records.iter().map(|r| r.kpis.to_array()).collect();
        Ok(NormalizationStats {
            params: MinMax::fit(encoded.iter().map(|v| v.as_slice()))?,
            kpis: MinMax::fit(kpis.iter().map(|k| k.as_slice()))?,
        })
    }

    /// Stats over native vectors of a single technology.
    pub fn fit_native(records: &[&Record]) -> Result<Self> {
        if records.is_empty() {
            return Err(Error::EmptyDataset);
        }
        let native: Vec<Vec<f64>> = records.iter().map(|r| r.design.native_vector()).collect();
        let kpis: Vec<[f64; 3]> = records.iter().map(|r| r.kpis.to_array()).collect();
        Ok(NormalizationStats {
            params: MinMax::fit(native.iter().map(|v| v.as_slice()))?,
            kpis: MinMax::fit(kpis.iter().map(|k| k.as_slice()))?,
        })
    }
}

fn fmt_real(v: f64) -> String {
    format!("{v:.16e}")
}

impl Dataset {
    /// CSV text: `tech,<asm params…>,<pmsm params…>,k1,k2,k3`, zero blocks written explicitly.
    pub fn to_csv_string(&self, schemas: &SchemaSet) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let mut header = combined_column_names(schemas);
        header.extend(["k1", "k2", "k3"].map(String::from));
        w.write_record(&header)?;
        for r in &self.records {
            let v = encode_combined(&r.design, schemas)?;
            let mut row = vec![r.design.technology_id.to_string()];
            row.extend(v.0[1..].iter().map(|&x| fmt_real(x)));
            row.extend(r.kpis.to_array().iter().map(|&x| fmt_real(x)));
            w.write_record(&row)?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Format(e.to_string()))?;
        String::from_utf8(bytes).map_err(|e| Error::Format(e.to_string()))
    }

    pub fn write(&self, csv_path: &Path, schemas: &SchemaSet) -> Result<()> {
        if let Some(dir) = csv_path.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        let text = self.to_csv_string(schemas)?;
        fs::write(csv_path, text).map_err(|e| Error::io(csv_path, e))?;
        let meta_path = meta_path_for(csv_path);
        let meta = serde_json::to_string_pretty(&self.meta)?;
        fs::write(&meta_path, meta).map_err(|e| Error::io(&meta_path, e))?;
        Ok(())
    }

    pub fn read(csv_path: &Path, schemas: &SchemaSet) -> Result<Dataset> {
        let text = fs::read_to_string(csv_path).map_err(|e| Error::io(csv_path, e))?;
        let mut reader = csv::Reader::from_reader(text.as_bytes());
        let expected = combined_column_names(schemas).len() + 3;
        let header = reader.headers()?.clone();
        if header.len() != expected {
            return Err(Error::Format(format!(
                "{}: expected {expected} columns, found {}",
                csv_path.display(),
                header.len()
            )));
        }
        let mut records = Vec::new();
        for (line, row) in reader.records().enumerate() {
            let row = row?;
            let values = row
                .iter()
                .map(|s| s.trim().parse::<f64>())
                .collect::<std::result::Result<Vec<f64>, _>>()
                .map_err(|e| Error::Format(format!("row {}: {e}", line + 2)))?;
            let d = schemas.combined_dim();
            let design = decode_combined(&CombinedVector(values[..d].to_vec()), schemas, false)?;
            let kpis = KpiVector::from_slice(&values[d..]);
            records.push(Record { design, kpis });
        }
        let meta_path = meta_path_for(csv_path);
        let mut ds = Dataset::from_records(records, schemas, 0);
        if let Ok(meta) = fs::read_to_string(&meta_path) {
            let meta: DatasetMeta = serde_json::from_str(&meta)?;
            if meta.schema_fingerprints != schemas.fingerprints() {
                return Err(Error::SchemaMismatch(format!(
                    "{} was generated with different schemas",
                    csv_path.display()
                )));
            }
            ds.meta.seed = meta.seed;
            ds.meta.generated_at = meta.generated_at;
        }
        Ok(ds)
    }
}

pub fn meta_path_for(csv_path: &Path) -> PathBuf {
    csv_path.with_extension("meta.json")
}
