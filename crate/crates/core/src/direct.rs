//! Per-technology KPI predictor on native parameter vectors, the baseline the
//! latent model is compared against.

use std::path::Path;

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::{derive_seed, rng_from, Dataset, NormalizationStats, Record};
use crate::error::{Error, Result};
use crate::machine_models::{KpiVector, MachineDesign, SchemaSet, KPI_NAMES};
use crate::metrics::{compute_metrics, MetricReport};
use crate::nn::{AdamState, Sequential, Tensor};
use crate::training::{fit, LossTerms, TrainSettings, Trainable, TrainingHistory};
use crate::vae::{predictor_specs, read_bundle, write_bundle, PREDICTOR_WIDTHS};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DirectConfig {
    pub technology_id: i64,
    pub predictor_widths: Vec<usize>,
    pub train: TrainSettings,
}

impl DirectConfig {
    pub fn new(technology_id: i64, train: TrainSettings) -> Self {
        DirectConfig {
            technology_id,
            predictor_widths: PREDICTOR_WIDTHS.to_vec(),
            train,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DirectModel {
    pub config: DirectConfig,
    pub network: Sequential,
    pub stats: NormalizationStats,
    pub schema_fingerprint: String,
    pub history: TrainingHistory,
}

impl DirectModel {
    pub fn technology_id(&self) -> i64 {
        self.config.technology_id
    }

    pub fn input_dim(&self) -> usize {
        self.network.input_len()
    }

    fn check_schema(&self, schemas: &SchemaSet) -> Result<()> {
        if schemas.get(self.technology_id())?.fingerprint() != self.schema_fingerprint {
            return Err(Error::SchemaMismatch(
                "model was built for a different technology schema".into(),
            ));
        }
        Ok(())
    }

    /// KPIs for native parameter vectors (unnormalized).
    pub fn predict_native_batch(&self, rows: &[Vec<f64>]) -> Result<Vec<KpiVector>> {
        for r in rows {
            if r.len() != self.input_dim() {
                return Err(Error::dim(self.input_dim(), r.len(), "direct model input"));
            }
        }
        if rows.is_empty() {
            return Ok(Vec::new());
        }
        let x: Vec<Vec<f64>> = rows.iter().map(|r| self.stats.params.apply(r)).collect();
        let out = self.network.forward(&Tensor::from_rows(&x)?)?;
        Ok(out
            .rows()
            .map(|r| KpiVector::from_slice(&self.stats.kpis.invert(r)))
            .collect())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_bundle(path, "direct", self)
    }

    pub fn load(path: &Path, schemas: &SchemaSet) -> Result<Self> {
        let m: DirectModel = read_bundle(path, "direct")?;
        m.check_schema(schemas)?;
        let d = schemas.get(m.technology_id())?.native_dim();
        if m.network.specs() != predictor_specs(d, &m.config.predictor_widths) {
            return Err(Error::Format("direct model layers do not match the stored config".into()));
        }
        Ok(m)
    }
}

pub fn predict_direct(model: &DirectModel, design: &MachineDesign) -> Result<KpiVector> {
    if design.technology_id != model.technology_id() {
        return Err(Error::InvalidArgument(format!(
            "design of technology {} given to a technology {} model",
            design.technology_id,
            model.technology_id()
        )));
    }
    Ok(model.predict_native_batch(&[design.native_vector()])?.remove(0))
}

fn records_of(ds: &Dataset, technology_id: i64) -> Vec<&Record> {
    ds.technology(technology_id)
}

/// Trains on the records of `config.technology_id` found in `train` and `val`.
pub fn train_direct(
    train: &Dataset,
    val: &Dataset,
    schemas: &SchemaSet,
    config: DirectConfig,
) -> Result<DirectModel> {
    config.train.validate()?;
    let schema = schemas.get(config.technology_id)?;
    let tr = records_of(train, config.technology_id);
    let va = records_of(val, config.technology_id);
    if tr.is_empty() || va.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let stats = NormalizationStats::fit_native(&tr)?;
    let pack = |recs: &[&Record]| -> (Vec<f64>, Vec<f64>) {
        let mut x = Vec::new();
        let mut k = Vec::new();
        for r in recs {
            x.extend(stats.params.apply(&r.design.native_vector()));
            k.extend(stats.kpis.apply(&r.kpis.to_array()));
        }
        (x, k)
    };
    let (train_x, train_k) = pack(&tr);
    let (val_x, val_k) = pack(&va);
    let d = schema.native_dim();
    let mut rng = rng_from(derive_seed(config.train.seed, 0xd1ec7 + config.technology_id as u64));
    let network = Sequential::new(&predictor_specs(d, &config.predictor_widths), &mut rng)?;
    let adam = AdamState::for_params(&network.params(), config.train.lr_start);
    let mut model = DirectModel {
        schema_fingerprint: schema.fingerprint(),
        network,
        stats,
        history: TrainingHistory::default(),
        config,
    };
    let settings = model.config.train;
    let mut job = DirectJob {
        model: &mut model,
        d,
        train_x,
        train_k,
        val_x,
        val_k,
        adam,
    };
    let history = fit(&mut job, &settings)?;
    model.history = history;
    Ok(model)
}

struct DirectJob<'a> {
    model: &'a mut DirectModel,
    d: usize,
    train_x: Vec<f64>,
    train_k: Vec<f64>,
    val_x: Vec<f64>,
    val_k: Vec<f64>,
    adam: AdamState,
}

impl Trainable for DirectJob<'_> {
    type Snapshot = Sequential;

    fn train_len(&self) -> usize {
        self.train_k.len() / 3
    }

    fn train_batch(&mut self, indices: &[usize], lr: f64, _noise: &mut ChaCha8Rng) -> Result<LossTerms> {
        let d = self.d;
        let bs = indices.len();
        let mut x = Vec::with_capacity(bs * d);
        let mut k = Vec::with_capacity(bs * 3);
        for &i in indices {
            x.extend_from_slice(&self.train_x[i * d..(i + 1) * d]);
            k.extend_from_slice(&self.train_k[i * 3..(i + 1) * 3]);
        }
        let net = &mut self.model.network;
        let (out, cache) = net.forward_train(&Tensor::new(vec![bs, d], x)?)?;
        let inv_b = 1.0 / bs as f64;
        let mut loss = 0.0;
        let g: Vec<f64> = out
            .data()
            .iter()
            .zip(&k)
            .map(|(o, t)| {
                let r = o - t;
                loss += r * r;
                2.0 * r * inv_b
            })
            .collect();
        let (grads, _) = net.backward(&cache, &Tensor::new(vec![bs, 3], g)?)?;
        self.adam.learning_rate = lr;
        self.adam.update(&mut net.params_mut(), &grads.slices())?;
        Ok(LossTerms {
            kpi: loss * inv_b,
            ..Default::default()
        })
    }

    fn validation_loss(&self) -> Result<LossTerms> {
        let n = self.val_k.len() / 3;
        let out = self
            .model
            .network
            .forward(&Tensor::new(vec![n, self.d], self.val_x.clone())?)?;
        Ok(LossTerms {
            kpi: crate::nn::sum_squared(out.data(), &self.val_k) / n as f64,
            ..Default::default()
        })
    }

    fn snapshot(&self) -> Sequential {
        self.model.network.clone()
    }

    fn restore(&mut self, s: Sequential) {
        self.model.network = s;
    }
}

/// Per-KPI test metrics on the model's own technology.
pub fn evaluate_direct(model: &DirectModel, test: &Dataset) -> Result<Vec<MetricReport>> {
    let recs = records_of(test, model.technology_id());
    let rows: Vec<Vec<f64>> = recs.iter().map(|r| r.design.native_vector()).collect();
    let pred = model.predict_native_batch(&rows)?;
    (0..KPI_NAMES.len())
        .map(|j| {
            let p: Vec<f64> = pred.iter().map(|k| k.to_array()[j]).collect();
            let t: Vec<f64> = recs.iter().map(|r| r.kpis.to_array()[j]).collect();
            compute_metrics(&p, &t)
        })
        .collect()
}
