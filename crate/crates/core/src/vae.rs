//! Encoder, decoder and KPI predictor trained jointly on the combined design
//! space.

use std::fs;
use std::path::Path;

use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::dataset::{derive_seed, encode_combined, rng_from, CombinedVector, Dataset, NormalizationStats};
use crate::error::{Error, Result};
use crate::machine_models::{KpiVector, Profile, SchemaSet, ASM_ID, PMSM_ID};
use crate::metrics::{compute_metrics, MetricReport, MRE_ZERO_THRESHOLD};
use crate::nn::loss::kl_from_logvar;
use crate::nn::{Activation, AdamState, LayerSpec, Sequential, Tensor};
use crate::training::{fit, LossTerms, TrainSettings, Trainable, TrainingHistory};

pub const BUNDLE_FORMAT: &str = "mtoo-model";
pub const BUNDLE_VERSION: u32 = 1;

/// Relative weights of the three loss terms.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub reconstruction: f64,
    pub kpi: f64,
    pub kl: f64,
}

/// KL weight used unless configured otherwise. At 1.0 the prior wins over
/// every [0, 1]-scaled column and the posterior collapses.
pub const DEFAULT_KL_WEIGHT: f64 = 1e-3;

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            reconstruction: 1.0,
            kpi: 1.0,
            kl: DEFAULT_KL_WEIGHT,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VaeConfig {
    pub input_dim: usize,
    pub latent_dim: usize,
    pub conv_channels: Vec<usize>,
    pub dense_width: usize,
    pub predictor_widths: Vec<usize>,
    pub loss_weights: LossWeights,
    pub train: TrainSettings,
}

pub const CONV_CHANNELS: [usize; 4] = [5, 10, 10, 20];
pub const DENSE_WIDTH: usize = 800;
pub const PREDICTOR_WIDTHS: [usize; 6] = [448, 250, 224, 224, 198, 50];

impl VaeConfig {
    pub fn for_profile(profile: Profile, schemas: &SchemaSet) -> Self {
        let latent_dim = match profile {
            Profile::Desk => 10,
            Profile::PaperShape => 34,
        };
        VaeConfig {
            input_dim: schemas.combined_dim(),
            latent_dim,
            conv_channels: CONV_CHANNELS.to_vec(),
            dense_width: DENSE_WIDTH,
            predictor_widths: PREDICTOR_WIDTHS.to_vec(),
            loss_weights: LossWeights::default(),
            train: TrainSettings::default(),
        }
    }

    pub fn validate(&self, schemas: &SchemaSet) -> Result<()> {
        if self.input_dim != schemas.combined_dim() {
            return Err(Error::config(
                "input_dim",
                format!("{} does not match combined dimension {}", self.input_dim, schemas.combined_dim()),
            ));
        }
        let lo = schemas.max_native_dim();
        if self.latent_dim < lo || self.latent_dim > self.input_dim {
            return Err(Error::config(
                "latent_dim",
                format!("must satisfy {lo} <= l <= {}", self.input_dim),
            ));
        }
        if self.conv_channels.is_empty() || self.predictor_widths.is_empty() || self.dense_width == 0 {
            return Err(Error::config("architecture", "layer widths must be non-empty"));
        }
        for (name, w) in [
            ("loss_weights.reconstruction", self.loss_weights.reconstruction),
            ("loss_weights.kpi", self.loss_weights.kpi),
            ("loss_weights.kl", self.loss_weights.kl),
        ] {
            if !(w >= 0.0 && w.is_finite()) {
                return Err(Error::config(name, "must be finite and non-negative"));
            }
        }
        self.train.validate()
    }

    pub fn flatten_len(&self) -> usize {
        self.input_dim * self.conv_channels.last().copied().unwrap_or(1)
    }

    pub fn encoder_trunk_specs(&self) -> Vec<LayerSpec> {
        let d = self.input_dim;
        let mut specs = Vec::new();
        let mut c_in = 1;
        for &c in &self.conv_channels {
            specs.push(LayerSpec::conv(c_in, c, d, Activation::Tanh));
            c_in = c;
        }
        specs.push(LayerSpec::flatten(c_in, d));
        specs.push(LayerSpec::dense(c_in * d, self.dense_width, Activation::Tanh));
        specs
    }

    pub fn head_spec(&self) -> LayerSpec {
        LayerSpec::dense(self.dense_width, self.latent_dim, Activation::Linear)
    }

    pub fn decoder_specs(&self) -> Vec<LayerSpec> {
        let d = self.input_dim;
        let top = *self.conv_channels.last().expect("channels");
        let mut specs = vec![
            LayerSpec::dense(self.latent_dim, self.dense_width, Activation::Tanh),
            LayerSpec::dense(self.dense_width, top * d, Activation::Tanh),
            LayerSpec::flatten(top, d),
        ];
        // mirror of the encoder: top -> top, then down the channel list, then a linear single-channel output
        let mut c_in = top;
        for &c in self.conv_channels.iter().rev() {
            specs.push(LayerSpec::conv_transpose(c_in, c, d, Activation::Tanh));
            c_in = c;
        }
        specs.push(LayerSpec::conv_transpose(c_in, 1, d, Activation::Linear));
        specs
    }

    pub fn predictor_specs(&self, input: usize) -> Vec<LayerSpec> {
        predictor_specs(input, &self.predictor_widths)
    }
}

/// Softplus hidden stack with a linear 3-KPI output.
pub fn predictor_specs(input: usize, widths: &[usize]) -> Vec<LayerSpec> {
    let mut specs = Vec::with_capacity(widths.len() + 1);
    let mut n_in = input;
    for &w in widths {
        specs.push(LayerSpec::dense(n_in, w, Activation::Softplus));
        n_in = w;
    }
    specs.push(LayerSpec::dense(n_in, 3, Activation::Linear));
    specs
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Encoder {
    pub trunk: Sequential,
    pub mean: Sequential,
    pub logvar: Sequential,
}

/// Latent posterior parameters for one design.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentDistribution {
    pub mean: Vec<f64>,
    pub sigma: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VaeBundle {
    pub config: VaeConfig,
    pub encoder: Encoder,
    pub decoder: Sequential,
    pub predictor: Sequential,
    pub stats: NormalizationStats,
    pub profile: Profile,
    pub schema_fingerprints: [String; 2],
    pub history: TrainingHistory,
}

#[derive(Serialize, Deserialize)]
struct BundleFile<T> {
    format: String,
    version: u32,
    kind: String,
    model: T,
}

pub(crate) fn write_bundle<T: Serialize>(path: &Path, kind: &str, model: &T) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let file = BundleFile {
        format: BUNDLE_FORMAT.to_string(),
        version: BUNDLE_VERSION,
        kind: kind.to_string(),
        model,
    };
    let text = serde_json::to_string(&file)?;
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

#[derive(Deserialize)]
struct BundleHeader {
    format: String,
    version: u32,
    kind: String,
}

pub(crate) fn read_bundle<T: for<'de> Deserialize<'de>>(path: &Path, kind: &str) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let h: BundleHeader = serde_json::from_str(&text)?;
    if h.format != BUNDLE_FORMAT || h.version != BUNDLE_VERSION {
        return Err(Error::Format(format!(
            "{}: unsupported bundle {} v{}",
            path.display(),
            h.format,
            h.version
        )));
    }
    if h.kind != kind {
        return Err(Error::Format(format!(
            "{}: expected a `{kind}` bundle, found `{}`",
            path.display(),
            h.kind
        )));
    }
    let file: BundleFile<T> = serde_json::from_str(&text)?;
    Ok(file.model)
}

/// Kind tag stored in a bundle file, without deserializing the model.
pub fn bundle_kind(path: &Path) -> Result<String> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let h: BundleHeader = serde_json::from_str(&text)?;
    if h.format != BUNDLE_FORMAT {
        return Err(Error::Format(format!("{}: not a model bundle", path.display())));
    }
    Ok(h.kind)
}

fn sample_normal(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| StandardNormal.sample(rng)).collect()
}

/// Training data as normalized row-major matrices.
struct Normalized {
    params: Vec<f64>,
    kpis: Vec<f64>,
    len: usize,
}

impl Normalized {
    fn build(ds: &Dataset, schemas: &SchemaSet, stats: &NormalizationStats) -> Result<Self> {
        let mut params = Vec::with_capacity(ds.len() * schemas.combined_dim());
        let mut kpis = Vec::with_capacity(ds.len() * 3);
        for r in &ds.records {
            params.extend(stats.params.apply(&encode_combined(&r.design, schemas)?.0));
            kpis.extend(stats.kpis.apply(&r.kpis.to_array()));
        }
        Ok(Normalized {
            params,
            kpis,
            len: ds.len(),
        })
    }

    fn gather(&self, idx: &[usize], d: usize) -> (Tensor, Vec<f64>) {
        let mut x = Vec::with_capacity(idx.len() * d);
        let mut k = Vec::with_capacity(idx.len() * 3);
        for &i in idx {
            x.extend_from_slice(&self.params[i * d..(i + 1) * d]);
            k.extend_from_slice(&self.kpis[i * 3..(i + 1) * 3]);
        }
        (Tensor::new(vec![idx.len(), d], x).expect("gather shape"), k)
    }
}

const EVAL_CHUNK: usize = 512;

impl VaeBundle {
    /// Untrained networks for a validated config.
    pub fn build(config: VaeConfig, schemas: &SchemaSet) -> Result<Self> {
        config.validate(schemas)?;
        let mut rng = rng_from(derive_seed(config.train.seed, 0x1417));
        let encoder = Encoder {
            trunk: Sequential::new(&config.encoder_trunk_specs(), &mut rng)?,
            mean: Sequential::new(&[config.head_spec()], &mut rng)?,
            logvar: Sequential::new(&[config.head_spec()], &mut rng)?,
        };
        let decoder = Sequential::new(&config.decoder_specs(), &mut rng)?;
        let predictor = Sequential::new(&config.predictor_specs(config.latent_dim), &mut rng)?;
        let d = config.input_dim;
        Ok(VaeBundle {
            encoder,
            decoder,
            predictor,
            stats: NormalizationStats {
                params: crate::dataset::MinMax {
                    min: vec![0.0; d],
                    max: vec![1.0; d],
                },
                kpis: crate::dataset::MinMax {
                    min: vec![0.0; 3],
                    max: vec![1.0; 3],
                },
            },
            profile: schemas.profile,
            schema_fingerprints: schemas.fingerprints(),
            history: TrainingHistory::default(),
            config,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.config.input_dim
    }

    pub fn latent_dim(&self) -> usize {
        self.config.latent_dim
    }

    /// Fits normalization on `train`, then trains all three networks jointly.
    pub fn train(&mut self, train: &Dataset, val: &Dataset, schemas: &SchemaSet) -> Result<()> {
        if train.is_empty() || val.is_empty() {
            return Err(Error::EmptyDataset);
        }
        self.check_schemas(schemas)?;
        self.stats = NormalizationStats::fit(train, schemas)?;
        let train_data = Normalized::build(train, schemas, &self.stats)?;
        let val_data = Normalized::build(val, schemas, &self.stats)?;
        let settings = self.config.train;
        let mut val_rng = rng_from(derive_seed(settings.seed, 0x7661_6c));
        let val_noise = sample_normal(&mut val_rng, val_data.len * self.latent_dim());

        let params = self.all_params();
        let adam = AdamState::for_params(&params, settings.lr_start);
        let mut job = VaeJob {
            bundle: self,
            train: train_data,
            val: val_data,
            val_noise,
            adam,
        };
        let history = fit(&mut job, &settings)?;
        self.history = history;
        Ok(())
    }

    fn all_params(&self) -> Vec<&[f64]> {
        let mut p = self.encoder.trunk.params();
        p.extend(self.encoder.mean.params());
        p.extend(self.encoder.logvar.params());
        p.extend(self.decoder.params());
        p.extend(self.predictor.params());
        p
    }

    pub(crate) fn check_schemas(&self, schemas: &SchemaSet) -> Result<()> {
        if self.schema_fingerprints != schemas.fingerprints() {
            return Err(Error::SchemaMismatch(
                "model was built for different technology schemas".into(),
            ));
        }
        Ok(())
    }

    /// Loss terms over normalized inputs with the given noise (`eps = None` means zero noise).
    fn loss_terms(&self, data: &Normalized, noise: Option<&[f64]>) -> Result<LossTerms> {
        let d = self.input_dim();
        let l = self.latent_dim();
        let w = self.config.loss_weights;
        let mut sum = LossTerms::default();
        let all: Vec<usize> = (0..data.len).collect();
        for chunk in all.chunks(EVAL_CHUNK) {
            let (x, k) = data.gather(chunk, d);
            let h = self.encoder.trunk.forward(&x)?;
            let mean = self.encoder.mean.forward(&h)?;
            let logvar = self.encoder.logvar.forward(&h)?;
            let mut z = mean.clone();
            if let Some(eps) = noise {
                for (row, &i) in chunk.iter().enumerate() {
                    for j in 0..l {
                        let s = (0.5 * logvar.data()[row * l + j]).exp();
                        z.data_mut()[row * l + j] += s * eps[i * l + j];
                    }
                }
            }
            let p_hat = self.decoder.forward(&z)?;
            let k_hat = self.predictor.forward(&z)?;
            sum.reconstruction += w.reconstruction * crate::nn::sum_squared(p_hat.data(), x.data());
            sum.kpi += w.kpi * crate::nn::sum_squared(k_hat.data(), &k);
            for row in 0..chunk.len() {
                sum.kl += w.kl
                    * kl_from_logvar(&mean.data()[row * l..(row + 1) * l], &logvar.data()[row * l..(row + 1) * l]);
            }
        }
        let n = data.len as f64;
        Ok(LossTerms {
            reconstruction: sum.reconstruction / n,
            kpi: sum.kpi / n,
            kl: sum.kl / n,
        })
    }

    /// Loss of `ds` under this bundle (zero noise), for diagnostics and tests.
    pub fn evaluate_loss(&self, ds: &Dataset, schemas: &SchemaSet) -> Result<LossTerms> {
        let data = Normalized::build(ds, schemas, &self.stats)?;
        self.loss_terms(&data, None)
    }

    fn check_len(&self, got: usize, expected: usize, what: &str) -> Result<()> {
        if got != expected {
            return Err(Error::dim(expected, got, what.to_string()));
        }
        Ok(())
    }

    /// Posterior of raw (unnormalized) combined vectors.
    pub fn encode_batch(&self, rows: &[Vec<f64>]) -> Result<Vec<LatentDistribution>> {
        let d = self.input_dim();
        let l = self.latent_dim();
        for r in rows {
            self.check_len(r.len(), d, "encoder input")?;
        }
        if rows.is_empty() {
            return Ok(Vec::new());
        }
        let normalized: Vec<Vec<f64>> = rows.iter().map(|r| self.stats.params.apply(r)).collect();
        let x = Tensor::from_rows(&normalized)?;
        let h = self.encoder.trunk.forward(&x)?;
        let mean = self.encoder.mean.forward(&h)?;
        let logvar = self.encoder.logvar.forward(&h)?;
        Ok((0..rows.len())
            .map(|i| LatentDistribution {
                mean: mean.data()[i * l..(i + 1) * l].to_vec(),
                sigma: logvar.data()[i * l..(i + 1) * l].iter().map(|v| (0.5 * v).exp()).collect(),
            })
            .collect())
    }

    pub fn encode(&self, p: &CombinedVector) -> Result<LatentDistribution> {
        Ok(self.encode_batch(std::slice::from_ref(&p.0))?.remove(0))
    }

    /// Denormalized decoder output, unclamped.
    pub fn decode_batch(&self, zs: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
        for z in zs {
            self.check_len(z.len(), self.latent_dim(), "decoder latent")?;
        }
        if zs.is_empty() {
            return Ok(Vec::new());
        }
        let out = self.decoder.forward(&Tensor::from_rows(zs)?)?;
        Ok(out.rows().map(|r| self.stats.params.invert(r)).collect())
    }

    pub fn decode(&self, z: &[f64]) -> Result<CombinedVector> {
        Ok(CombinedVector(self.decode_batch(&[z.to_vec()])?.remove(0)))
    }

    pub fn predict_kpis_batch(&self, zs: &[Vec<f64>]) -> Result<Vec<KpiVector>> {
        for z in zs {
            self.check_len(z.len(), self.latent_dim(), "predictor latent")?;
        }
        if zs.is_empty() {
            return Ok(Vec::new());
        }
        let out = self.predictor.forward(&Tensor::from_rows(zs)?)?;
        Ok(out
            .rows()
            .map(|r| KpiVector::from_slice(&self.stats.kpis.invert(r)))
            .collect())
    }

    pub fn predict_kpis(&self, z: &[f64]) -> Result<KpiVector> {
        Ok(self.predict_kpis_batch(&[z.to_vec()])?.remove(0))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_bundle(path, "vae", self)
    }

    /// Loads a bundle and refuses it if it was built for other schemas.
    pub fn load(path: &Path, schemas: &SchemaSet) -> Result<Self> {
        let bundle: VaeBundle = read_bundle(path, "vae")?;
        bundle.check_schemas(schemas)?;
        bundle.config.validate(schemas)?;
        let check = |net: &Sequential, specs: Vec<LayerSpec>, name: &str| {
            if net.specs() != specs {
                Err(Error::Format(format!("{name} layers do not match the stored config")))
            } else {
                Ok(())
            }
        };
        let c = &bundle.config;
        check(&bundle.encoder.trunk, c.encoder_trunk_specs(), "encoder")?;
        check(&bundle.encoder.mean, vec![c.head_spec()], "mean head")?;
        check(&bundle.encoder.logvar, vec![c.head_spec()], "log-variance head")?;
        check(&bundle.decoder, c.decoder_specs(), "decoder")?;
        check(&bundle.predictor, c.predictor_specs(c.latent_dim), "predictor")?;
        Ok(bundle)
    }
}

/// Test-set accuracy of a trained bundle, using the posterior mean as the latent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VaeEvaluation {
    pub kpis: Vec<MetricReport>,
    pub kpis_asm: Vec<MetricReport>,
    pub kpis_pmsm: Vec<MetricReport>,
    /// Pooled MRE (percent) over every continuous entry of each sample's active block.
    pub reconstruction_mre: f64,
    pub parameters: Vec<(String, MetricReport)>,
    pub tag_accuracy: f64,
}

pub fn evaluate(bundle: &VaeBundle, test: &Dataset, schemas: &SchemaSet) -> Result<VaeEvaluation> {
    bundle.check_schemas(schemas)?;
    if test.len() < 2 {
        return Err(Error::EmptyDataset);
    }
    let inputs = test
        .records
        .iter()
        .map(|r| encode_combined(&r.design, schemas).map(|v| v.0))
        .collect::<Result<Vec<_>>>()?;
    let mut means = Vec::with_capacity(inputs.len());
    for chunk in inputs.chunks(EVAL_CHUNK) {
        means.extend(bundle.encode_batch(chunk)?.into_iter().map(|l| l.mean));
    }
    let mut decoded = Vec::with_capacity(means.len());
    let mut predicted = Vec::with_capacity(means.len());
    for chunk in means.chunks(EVAL_CHUNK) {
        decoded.extend(bundle.decode_batch(chunk)?);
        predicted.extend(bundle.predict_kpis_batch(chunk)?);
    }

    let kpi_reports = |ids: &[usize]| -> Result<Vec<MetricReport>> {
        (0..3)
            .map(|j| {
                let p: Vec<f64> = ids.iter().map(|&i| predicted[i].to_array()[j]).collect();
                let t: Vec<f64> = ids.iter().map(|&i| test.records[i].kpis.to_array()[j]).collect();
                compute_metrics(&p, &t)
            })
            .collect()
    };
    let all: Vec<usize> = (0..test.len()).collect();
    let by_tech = |id| -> Vec<usize> {
        all.iter().copied().filter(|&i| test.records[i].design.technology_id == id).collect()
    };

    let mut tag_hits = 0;
    let mut rel_sum = 0.0;
    let mut rel_n = 0usize;
    let mut per_param: Vec<(String, Vec<f64>, Vec<f64>)> = Vec::new();
    for schema in schemas.iter() {
        for p in &schema.continuous {
            per_param.push((format!("{}_{}", schema.name.to_lowercase(), p.name), Vec::new(), Vec::new()));
        }
    }
    for (i, r) in test.records.iter().enumerate() {
        let tech = r.design.technology_id;
        if decoded[i][0].round() as i64 == tech {
            tag_hits += 1;
        }
        let offset = schemas.block_offset(tech)?;
        let mut slot = 0;
        for schema in schemas.iter() {
            if schema.technology_id == tech {
                break;
            }
            slot += schema.continuous.len();
        }
        for (j, &truth) in r.design.continuous.iter().enumerate() {
            let pred = decoded[i][offset + j];
            rel_sum += (pred - truth).abs() / truth.abs().max(MRE_ZERO_THRESHOLD);
            rel_n += 1;
            per_param[slot + j].1.push(pred);
            per_param[slot + j].2.push(truth);
        }
    }
    let parameters = per_param
        .into_iter()
        .filter(|(_, p, _)| p.len() >= 2)
        .map(|(name, p, t)| compute_metrics(&p, &t).map(|m| (name, m)))
        .collect::<Result<Vec<_>>>()?;

    Ok(VaeEvaluation {
        kpis: kpi_reports(&all)?,
        kpis_asm: kpi_reports(&by_tech(ASM_ID))?,
        kpis_pmsm: kpi_reports(&by_tech(PMSM_ID))?,
        reconstruction_mre: rel_sum / rel_n.max(1) as f64 * 100.0,
        parameters,
        tag_accuracy: tag_hits as f64 / test.len() as f64,
    })
}

struct VaeJob<'a> {
    bundle: &'a mut VaeBundle,
    train: Normalized,
    val: Normalized,
    val_noise: Vec<f64>,
    adam: AdamState,
}

type VaeSnapshot = (Encoder, Sequential, Sequential);

impl Trainable for VaeJob<'_> {
    type Snapshot = VaeSnapshot;

    fn train_len(&self) -> usize {
        self.train.len
    }

    fn train_batch(&mut self, indices: &[usize], lr: f64, noise: &mut ChaCha8Rng) -> Result<LossTerms> {
        let b = &mut *self.bundle;
        let d = b.input_dim();
        let l = b.latent_dim();
        let w = b.config.loss_weights;
        let bs = indices.len();
        let inv_b = 1.0 / bs as f64;

        let (x, k) = self.train.gather(indices, d);
        let (h, c_trunk) = b.encoder.trunk.forward_train(&x)?;
        let (mean, c_mean) = b.encoder.mean.forward_train(&h)?;
        let (logvar, c_logvar) = b.encoder.logvar.forward_train(&h)?;
        let eps = sample_normal(noise, bs * l);
        let sigma: Vec<f64> = logvar.data().iter().map(|v| (0.5 * v).exp()).collect();
        let z_data: Vec<f64> = mean
            .data()
            .iter()
            .zip(&sigma)
            .zip(&eps)
            .map(|((m, s), e)| m + s * e)
            .collect();
        let z = Tensor::new(vec![bs, l], z_data)?;

        let (p_hat, c_dec) = b.decoder.forward_train(&z)?;
        let (k_hat, c_pred) = b.predictor.forward_train(&z)?;

        let mut terms = LossTerms::default();
        let g_p: Vec<f64> = p_hat
            .data()
            .iter()
            .zip(x.data())
            .map(|(ph, xv)| {
                let r = ph - xv;
                terms.reconstruction += r * r;
                2.0 * w.reconstruction * r * inv_b
            })
            .collect();
        let g_k: Vec<f64> = k_hat
            .data()
            .iter()
            .zip(&k)
            .map(|(kh, kv)| {
                let r = kh - kv;
                terms.kpi += r * r;
                2.0 * w.kpi * r * inv_b
            })
            .collect();
        for row in 0..bs {
            terms.kl += kl_from_logvar(&mean.data()[row * l..(row + 1) * l], &logvar.data()[row * l..(row + 1) * l]);
        }
        terms.reconstruction *= w.reconstruction * inv_b;
        terms.kpi *= w.kpi * inv_b;
        terms.kl *= w.kl * inv_b;

        let (g_dec, dz_dec) = b.decoder.backward(&c_dec, &Tensor::new(vec![bs, d], g_p)?)?;
        let (g_pred, dz_pred) = b.predictor.backward(&c_pred, &Tensor::new(vec![bs, 3], g_k)?)?;
        let mut d_mean = vec![0.0; bs * l];
        let mut d_logvar = vec![0.0; bs * l];
        for j in 0..bs * l {
            let dz = dz_dec.data()[j] + dz_pred.data()[j];
            let m = mean.data()[j];
            let s = sigma[j];
            d_mean[j] = dz + w.kl * m * inv_b;
            d_logvar[j] = dz * eps[j] * 0.5 * s + w.kl * 0.5 * (s * s - 1.0) * inv_b;
        }
        let (g_mean, dh_mean) = b.encoder.mean.backward(&c_mean, &Tensor::new(vec![bs, l], d_mean)?)?;
        let (g_logvar, dh_logvar) =
            b.encoder.logvar.backward(&c_logvar, &Tensor::new(vec![bs, l], d_logvar)?)?;
        let mut dh = dh_mean;
        for (a, v) in dh.data_mut().iter_mut().zip(dh_logvar.data()) {
            *a += v;
        }
        let (g_trunk, _) = b.encoder.trunk.backward(&c_trunk, &dh)?;

        let mut grads = g_trunk.slices();
        grads.extend(g_mean.slices());
        grads.extend(g_logvar.slices());
        grads.extend(g_dec.slices());
        grads.extend(g_pred.slices());
        let mut params = b.encoder.trunk.params_mut();
        params.extend(b.encoder.mean.params_mut());
        params.extend(b.encoder.logvar.params_mut());
        params.extend(b.decoder.params_mut());
        params.extend(b.predictor.params_mut());
        self.adam.learning_rate = lr;
        self.adam.update(&mut params, &grads)?;
        Ok(terms)
    }

    fn validation_loss(&self) -> Result<LossTerms> {
        self.bundle.loss_terms(&self.val, Some(&self.val_noise))
    }

    fn snapshot(&self) -> VaeSnapshot {
        (
            self.bundle.encoder.clone(),
            self.bundle.decoder.clone(),
            self.bundle.predictor.clone(),
        )
    }

    fn restore(&mut self, (enc, dec, pred): VaeSnapshot) {
        self.bundle.encoder = enc;
        self.bundle.decoder = dec;
        self.bundle.predictor = pred;
    }
}
