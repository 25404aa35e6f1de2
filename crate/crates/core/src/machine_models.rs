//! Technology parameter schemas, rule-based geometry checks and the
//! closed-form KPI oracle used to label designs.
//!
//! The oracle is a smooth, monotone stand-in for a field solver. It is not
//! calibrated to any industrial machine; every constant lives in
//! [`OracleConstants`].

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub const ASM_ID: i64 = 1;
pub const PMSM_ID: i64 = 2;

/// Discrete slot order shared by both technologies.
pub const DISCRETE_SLOTS_PER_POLE_PHASE: usize = 0;
pub const DISCRETE_POLE_PAIRS: usize = 1;
pub const DISCRETE_CONNECTION: usize = 2;
pub const DISCRETE_SCHEME: usize = 3;

/// Winding connection encoding.
pub const STAR: i64 = 0;
pub const DELTA: i64 = 1;
/// Winding scheme encoding.
pub const SHORT_PITCH: i64 = 0;
pub const FULL_PITCH: i64 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Profile {
    Desk,
    PaperShape,
}

impl Profile {
    pub fn as_str(self) -> &'static str {
        match self {
            Profile::Desk => "desk",
            Profile::PaperShape => "paper_shape",
        }
    }
}

impl FromStr for Profile {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "desk" => Ok(Profile::Desk),
            "paper_shape" | "paper-shape" => Ok(Profile::PaperShape),
            other => Err(Error::UnknownProfile(other.to_string())),
        }
    }
}

impl fmt::Display for Profile {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContinuousParam {
    pub name: String,
    pub lower: f64,
    pub upper: f64,
    pub unit: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscreteParam {
    pub name: String,
    /// Sorted ascending, non-empty.
    pub domain: Vec<i64>,
}

impl DiscreteParam {
    /// Nearest domain member; ties go to the smaller value.
    pub fn snap(&self, value: f64) -> i64 {
        let mut best = self.domain[0];
        let mut best_dist = (value - best as f64).abs();
        for &candidate in &self.domain[1..] {
            let dist = (value - candidate as f64).abs();
            if dist < best_dist {
                best = candidate;
                best_dist = dist;
            }
        }
        best
    }

    pub fn min(&self) -> i64 {
        self.domain[0]
    }

    pub fn max(&self) -> i64 {
        *self.domain.last().expect("non-empty domain")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TechnologySchema {
    pub technology_id: i64,
    pub name: String,
    pub continuous: Vec<ContinuousParam>,
    pub discrete: Vec<DiscreteParam>,
}

impl TechnologySchema {
    pub fn new(
        technology_id: i64,
        name: impl Into<String>,
        continuous: Vec<ContinuousParam>,
        mut discrete: Vec<DiscreteParam>,
    ) -> Result<Self> {
        for d in &mut discrete {
            d.domain.sort_unstable();
            d.domain.dedup();
        }
        let schema = TechnologySchema {
            technology_id,
            name: name.into(),
            continuous,
            discrete,
        };
        schema.check()?;
        Ok(schema)
    }

    fn check(&self) -> Result<()> {
        if self.native_dim() == 0 {
            return Err(Error::InvalidSchema(format!("{}: no parameters", self.name)));
        }
        for c in &self.continuous {
            if !(c.lower < c.upper) || !c.lower.is_finite() || !c.upper.is_finite() {
                return Err(Error::InvalidSchema(format!(
                    "{}: bounds of `{}` must satisfy lower < upper",
                    self.name, c.name
                )));
            }
        }
        for d in &self.discrete {
            if d.domain.is_empty() {
                return Err(Error::InvalidSchema(format!(
                    "{}: empty domain for `{}`",
                    self.name, d.name
                )));
            }
        }
        let mut names: Vec<&str> = self.param_names().collect();
        names.sort_unstable();
        if names.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::InvalidSchema(format!(
                "{}: duplicate parameter names",
                self.name
            )));
        }
        Ok(())
    }

    pub fn native_dim(&self) -> usize {
        self.continuous.len() + self.discrete.len()
    }

    /// Continuous names first, then discrete names.
    pub fn param_names(&self) -> impl Iterator<Item = &str> {
        self.continuous
            .iter()
            .map(|c| c.name.as_str())
            .chain(self.discrete.iter().map(|d| d.name.as_str()))
    }

    /// Lower/upper bounds of the native vector (discrete params bounded by their domain extremes).
    pub fn native_bounds(&self) -> Vec<(f64, f64)> {
        self.continuous
            .iter()
            .map(|c| (c.lower, c.upper))
            .chain(self.discrete.iter().map(|d| (d.min() as f64, d.max() as f64)))
            .collect()
    }

    /// Bound of the air gap parameter, whose position differs per technology.
    fn air_gap_bounds(&self) -> (f64, f64) {
        let idx = if self.technology_id == ASM_ID { 1 } else { 2 };
        let c = &self.continuous[idx];
        (c.lower, c.upper)
    }

    /// SHA-256 over the canonical JSON form of the schema.
    pub fn fingerprint(&self) -> String {
        let json = serde_json::to_vec(self).expect("schema serializes");
        hex_digest(&json)
    }
}

pub(crate) fn hex_digest(bytes: &[u8]) -> String {
    Sha256::digest(bytes)
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

/// The two technology schemas sharing one combined design space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SchemaSet {
    pub profile: Profile,
    pub asm: TechnologySchema,
    pub pmsm: TechnologySchema,
}

impl SchemaSet {
    pub fn for_profile(profile: Profile) -> Self {
        let (asm, pmsm) = default_schemas(profile);
        SchemaSet { profile, asm, pmsm }
    }

    pub fn get(&self, technology_id: i64) -> Result<&TechnologySchema> {
        match technology_id {
            ASM_ID => Ok(&self.asm),
            PMSM_ID => Ok(&self.pmsm),
            other => Err(Error::UnknownTechnology(other)),
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = &TechnologySchema> {
        [&self.asm, &self.pmsm].into_iter()
    }

    /// Combined vector length `1 + d_1 + d_2`.
    pub fn combined_dim(&self) -> usize {
        1 + self.asm.native_dim() + self.pmsm.native_dim()
    }

    pub fn max_native_dim(&self) -> usize {
        self.asm.native_dim().max(self.pmsm.native_dim())
    }

    /// Start offset of a technology's block in the combined vector.
    pub fn block_offset(&self, technology_id: i64) -> Result<usize> {
        match technology_id {
            ASM_ID => Ok(1),
            PMSM_ID => Ok(1 + self.asm.native_dim()),
            other => Err(Error::UnknownTechnology(other)),
        }
    }

    pub fn fingerprints(&self) -> [String; 2] {
        [self.asm.fingerprint(), self.pmsm.fingerprint()]
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("schemas serialize")
    }
}

fn cont(name: &str, lower: f64, upper: f64, unit: &str) -> ContinuousParam {
    ContinuousParam {
        name: name.to_string(),
        lower,
        upper,
        unit: unit.to_string(),
    }
}

fn disc(name: &str, domain: &[i64]) -> DiscreteParam {
    DiscreteParam {
        name: name.to_string(),
        domain: domain.to_vec(),
    }
}

const ASM_PAPER_SHAPE_DIM: usize = 18;
const PMSM_PAPER_SHAPE_DIM: usize = 33;

/// Built-in ASM and PMSM schemas for a profile.
pub fn default_schemas(profile: Profile) -> (TechnologySchema, TechnologySchema) {
    let mut asm_cont = vec![
        cont("stator_outer_diameter", 159.0, 232.0, "mm"),
        cont("air_gap", 0.65, 1.7, "mm"),
        cont("rotor_outer_diameter", 85.0, 190.0, "mm"),
        cont("rotor_slot_height", 10.0, 21.0, "mm"),
        cont("rotor_slot_width", 0.6, 1.5, "mm"),
    ];
    let asm_disc = vec![
        disc("slots_per_pole_per_phase", &[2, 3, 4]),
        disc("pole_pairs", &[2, 3, 4]),
        disc("winding_connection", &[STAR, DELTA]),
        disc("winding_scheme", &[SHORT_PITCH, FULL_PITCH]),
    ];
    let mut pmsm_cont = vec![
        cont("stator_outer_diameter", 159.0, 232.0, "mm"),
        cont("rotor_outer_diameter", 100.0, 197.0, "mm"),
        cont("air_gap", 0.8, 2.2, "mm"),
        cont("stator_tooth_height", 10.0, 20.0, "mm"),
        cont("magnet_layer1_angle", 17.0, 32.0, "deg"),
    ];
    let pmsm_disc = vec![
        disc("slots_per_pole_per_phase", &[2, 3, 4]),
        disc("pole_pairs", &[3, 4, 5]),
        disc("winding_connection", &[STAR, DELTA]),
        disc("winding_scheme", &[SHORT_PITCH, FULL_PITCH]),
    ];

    if profile == Profile::PaperShape {
        let asm_fill = ASM_PAPER_SHAPE_DIM - asm_cont.len() - asm_disc.len();
        asm_cont.extend((0..asm_fill).map(|i| cont(&format!("filler_{i:02}"), 0.0, 1.0, "-")));
        let pmsm_fill = PMSM_PAPER_SHAPE_DIM - pmsm_cont.len() - pmsm_disc.len();
        pmsm_cont.extend((0..pmsm_fill).map(|i| cont(&format!("filler_{i:02}"), 0.0, 1.0, "-")));
    }

    let asm = TechnologySchema::new(ASM_ID, "ASM", asm_cont, asm_disc).expect("built-in ASM schema");
    let pmsm =
        TechnologySchema::new(PMSM_ID, "PMSM", pmsm_cont, pmsm_disc).expect("built-in PMSM schema");
    (asm, pmsm)
}

pub fn default_schemas_named(profile: &str) -> Result<(TechnologySchema, TechnologySchema)> {
    Ok(default_schemas(profile.parse()?))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MachineDesign {
    pub technology_id: i64,
    pub continuous: Vec<f64>,
    pub discrete: Vec<i64>,
}

impl MachineDesign {
    pub fn new(technology_id: i64, continuous: Vec<f64>, discrete: Vec<i64>) -> Self {
        MachineDesign {
            technology_id,
            continuous,
            discrete,
        }
    }

    /// Native vector `p_t`: continuous values then discrete values as reals.
    pub fn native_vector(&self) -> Vec<f64> {
        self.continuous
            .iter()
            .copied()
            .chain(self.discrete.iter().map(|&v| v as f64))
            .collect()
    }

    /// Inverse of [`native_vector`](Self::native_vector); discrete entries are snapped to their domains
    /// and continuous entries optionally clamped.
    pub fn from_native(schema: &TechnologySchema, values: &[f64], clamp: bool) -> Result<Self> {
        if values.len() != schema.native_dim() {
            return Err(Error::dim(schema.native_dim(), values.len(), "native design vector"));
        }
        let n_cont = schema.continuous.len();
        let continuous = values[..n_cont]
            .iter()
            .zip(&schema.continuous)
            .map(|(&v, p)| if clamp { v.clamp(p.lower, p.upper) } else { v })
            .collect();
        let discrete = values[n_cont..]
            .iter()
            .zip(&schema.discrete)
            .map(|(&v, p)| p.snap(v))
            .collect();
        Ok(MachineDesign::new(schema.technology_id, continuous, discrete))
    }

    fn check_shape(&self, schema: &TechnologySchema) -> Result<()> {
        if self.technology_id != schema.technology_id {
            return Err(Error::SchemaMismatch(format!(
                "technology {} vs schema {}",
                self.technology_id, schema.technology_id
            )));
        }
        if self.continuous.len() != schema.continuous.len()
            || self.discrete.len() != schema.discrete.len()
        {
            return Err(Error::SchemaMismatch(format!(
                "{}: expected {}+{} values, got {}+{}",
                schema.name,
                schema.continuous.len(),
                schema.discrete.len(),
                self.continuous.len(),
                self.discrete.len()
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SystemParameters {
    pub dc_voltage: f64,
    pub dc_current: f64,
    pub speed_grid: Vec<f64>,
}

impl Default for SystemParameters {
    fn default() -> Self {
        let mut speed_grid = vec![1.0];
        speed_grid.extend((1..=16).map(|i| i as f64 * 1000.0));
        SystemParameters {
            dc_voltage: 650.0,
            dc_current: 400.0,
            speed_grid,
        }
    }
}

impl SystemParameters {
    pub fn validate(&self) -> Result<()> {
        if !(self.dc_voltage > 0.0) || !(self.dc_current > 0.0) {
            return Err(Error::InvalidArgument(
                "system voltage and current must be positive".into(),
            ));
        }
        if self.speed_grid.is_empty() || self.speed_grid.iter().any(|&s| !(s > 0.0)) {
            return Err(Error::InvalidArgument("speed grid must be non-empty and positive".into()));
        }
        if self.speed_grid.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::InvalidArgument("speed grid must be strictly increasing".into()));
        }
        Ok(())
    }

    fn max_speed(&self) -> f64 {
        *self.speed_grid.last().expect("non-empty speed grid")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KpiVector {
    /// Material cost in euro.
    pub material_cost: f64,
    /// Maximum power in kW.
    pub max_power: f64,
    /// Maximum torque in Nm.
    pub max_torque: f64,
}

impl KpiVector {
    pub fn to_array(self) -> [f64; 3] {
        [self.material_cost, self.max_power, self.max_torque]
    }

    pub fn from_slice(v: &[f64]) -> Self {
        KpiVector {
            material_cost: v[0],
            max_power: v[1],
            max_torque: v[2],
        }
    }

    pub fn is_finite(&self) -> bool {
        self.to_array().iter().all(|v| v.is_finite())
    }
}

pub const KPI_NAMES: [&str; 3] = ["k1_material_cost", "k2_max_power", "k3_max_torque"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum GeometryRule {
    /// Radial build: the stator must hold rotor, air gap and a 30 mm yoke/slot allowance.
    G1,
    /// Slot depth limited to 40 % of the radial space it sits in.
    G2,
    /// Every parameter within its bounds / domain.
    G3,
}

impl GeometryRule {
    pub fn id(self) -> &'static str {
        match self {
            GeometryRule::G1 => "G1",
            GeometryRule::G2 => "G2",
            GeometryRule::G3 => "G3",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidityReport {
    pub valid: bool,
    pub violated: Vec<GeometryRule>,
}

impl ValidityReport {
    pub fn rule_ids(&self) -> Vec<String> {
        self.violated.iter().map(|r| r.id().to_string()).collect()
    }
}

const RADIAL_ALLOWANCE_MM: f64 = 30.0;
const SLOT_DEPTH_FRACTION: f64 = 0.4;

pub fn validate_geometry(design: &MachineDesign, schemas: &SchemaSet) -> Result<ValidityReport> {
    let schema = schemas.get(design.technology_id)?;
    design.check_shape(schema)?;
    let p = &design.continuous;
    let mut violated = Vec::new();

    let (g1, g2) = match design.technology_id {
        ASM_ID => {
            let (stator, gap, rotor, slot_h) = (p[0], p[1], p[2], p[3]);
            (
                stator >= rotor + 2.0 * gap + RADIAL_ALLOWANCE_MM,
                slot_h <= SLOT_DEPTH_FRACTION * (rotor / 2.0),
            )
        }
        _ => {
            let (stator, rotor, gap, tooth_h) = (p[0], p[1], p[2], p[3]);
            (
                stator >= rotor + 2.0 * gap + RADIAL_ALLOWANCE_MM,
                tooth_h <= SLOT_DEPTH_FRACTION * ((stator - rotor - 2.0 * gap) / 2.0),
            )
        }
    };
    if !g1 {
        violated.push(GeometryRule::G1);
    }
    if !g2 {
        violated.push(GeometryRule::G2);
    }

    let cont_ok = p
        .iter()
        .zip(&schema.continuous)
        .all(|(&v, c)| v >= c.lower && v <= c.upper);
    let disc_ok = design
        .discrete
        .iter()
        .zip(&schema.discrete)
        .all(|(v, d)| d.domain.contains(v));
    if !(cont_ok && disc_ok) {
        violated.push(GeometryRule::G3);
    }

    Ok(ValidityReport {
        valid: violated.is_empty(),
        violated,
    })
}

/// Every constant the KPI oracle uses.
#[derive(Debug, Clone, Copy)]
pub struct OracleConstants {
    pub active_length_mm: f64,
    pub steel_fill: f64,
    pub copper_fill: f64,
    pub magnet_fill: f64,
    pub asm_rotor_bars: f64,
    pub price_steel: f64,
    pub price_copper: f64,
    pub price_aluminium: f64,
    pub price_magnet: f64,
    pub density_steel: f64,
    pub density_copper: f64,
    pub density_aluminium: f64,
    pub density_magnet: f64,
    /// Shear stress, N/m^2.
    pub asm_shear_stress: f64,
    pub pmsm_shear_stress: f64,
    pub magnet_height_ref_mm: f64,
    pub magnet_height_per_deg: f64,
    pub star_factor: f64,
    pub short_pitch_factor: f64,
    pub base_speed_numerator_rpm: f64,
    pub reference_voltage: f64,
}

pub const ORACLE: OracleConstants = OracleConstants {
    active_length_mm: 120.0,
    steel_fill: 0.6,
    copper_fill: 0.25,
    magnet_fill: 0.3,
    asm_rotor_bars: 28.0,
    price_steel: 1.0,
    price_copper: 8.0,
    price_aluminium: 2.5,
    price_magnet: 60.0,
    density_steel: 7.65,
    density_copper: 8.96,
    density_aluminium: 2.7,
    density_magnet: 7.5,
    asm_shear_stress: 30_000.0,
    pmsm_shear_stress: 45_000.0,
    magnet_height_ref_mm: 5.0,
    magnet_height_per_deg: 0.2,
    star_factor: 0.90,
    short_pitch_factor: 0.966,
    base_speed_numerator_rpm: 12_000.0,
    reference_voltage: 650.0,
};

/// mm^3 at a density in g/cm^3 -> kg.
fn mass_kg(volume_mm3: f64, density_g_cm3: f64) -> f64 {
    volume_mm3 * density_g_cm3 / 1e6
}

/// Deterministic closed-form KPIs of a geometrically valid design.
pub fn evaluate_kpis(
    design: &MachineDesign,
    schemas: &SchemaSet,
    sys: &SystemParameters,
) -> Result<KpiVector> {
    let report = validate_geometry(design, schemas)?;
    if !report.valid {
        return Err(Error::InvalidGeometry(report.rule_ids()));
    }
    let schema = schemas.get(design.technology_id)?;
    let c = &ORACLE;
    let p = &design.continuous;
    let is_asm = design.technology_id == ASM_ID;

    let (stator_d, gap, rotor_d) = if is_asm { (p[0], p[1], p[2]) } else { (p[0], p[2], p[1]) };
    let stator_r = stator_d / 2.0;
    let rotor_r = rotor_d / 2.0;
    let length = c.active_length_mm;

    let q = design.discrete[DISCRETE_SLOTS_PER_POLE_PHASE] as f64;
    let pole_pairs = design.discrete[DISCRETE_POLE_PAIRS] as f64;
    let pole_pairs_min = schema.discrete[DISCRETE_POLE_PAIRS].min() as f64;
    let connection = if design.discrete[DISCRETE_CONNECTION] == DELTA { 1.0 } else { c.star_factor };
    let scheme = if design.discrete[DISCRETE_SCHEME] == FULL_PITCH {
        1.0
    } else {
        c.short_pitch_factor
    };
    let (gap_lo, gap_hi) = schema.air_gap_bounds();
    let flux = 1.0 - 0.25 * (gap - gap_lo) / (gap_hi - gap_lo);

    let magnet_height = p[4] * c.magnet_height_per_deg;
    let shear = if is_asm {
        c.asm_shear_stress
    } else {
        c.pmsm_shear_stress * (1.0 + 0.3 * magnet_height / c.magnet_height_ref_mm)
    };

    let rotor_r_m = rotor_r / 1000.0;
    let length_m = length / 1000.0;
    let torque = 2.0 * PI * rotor_r_m * rotor_r_m * length_m * shear
        * flux
        * connection
        * scheme
        * (1.0 + 0.03 * (q - 2.0))
        * (1.0 + 0.02 * (pole_pairs - pole_pairs_min));

    let base_speed = (c.base_speed_numerator_rpm / pole_pairs * (sys.dc_voltage / c.reference_voltage))
        .min(sys.max_speed());
    let power = torque * (2.0 * PI * base_speed / 60.0) / 1000.0;

    let stator_annulus = PI * (stator_r * stator_r - (rotor_r + gap).powi(2)) * length;
    let mut cost = mass_kg(stator_annulus * c.steel_fill, c.density_steel) * c.price_steel
        + mass_kg(stator_annulus * c.copper_fill, c.density_copper) * c.price_copper;
    if is_asm {
        let bars = c.asm_rotor_bars * p[3] * p[4] * length;
        cost += mass_kg(bars, c.density_aluminium) * c.price_aluminium;
    } else {
        cost += magnet_cost(rotor_r, magnet_height, length);
    }

    let kpis = KpiVector {
        material_cost: cost,
        max_power: power,
        max_torque: torque,
    };
    if !kpis.is_finite() {
        return Err(Error::NonFinite("KPI oracle".into()));
    }
    Ok(kpis)
}

fn magnet_cost(rotor_r: f64, magnet_height: f64, length: f64) -> f64 {
    let c = &ORACLE;
    let volume = 2.0 * PI * rotor_r * magnet_height * length * c.magnet_fill;
    mass_kg(volume, c.density_magnet) * c.price_magnet
}

#[cfg(test)]
mod tests {
    use super::*;

    fn desk() -> SchemaSet {
        SchemaSet::for_profile(Profile::Desk)
    }

    fn asm_reference() -> MachineDesign {
        MachineDesign::new(ASM_ID, vec![200.0, 1.0, 150.0, 12.0, 1.0], vec![2, 3, DELTA, FULL_PITCH])
    }

    #[test]
    fn desk_profile_dimensions() {
        let s = desk();
        assert_eq!(s.asm.native_dim(), 9);
        assert_eq!(s.pmsm.native_dim(), 9);
        assert_eq!(s.combined_dim(), 19);
        let gap = &s.asm.continuous[1];
        assert_eq!((gap.lower, gap.upper), (0.65, 1.7));
        assert_eq!(s.pmsm.discrete[DISCRETE_POLE_PAIRS].domain, vec![3, 4, 5]);
    }

    #[test]
    fn paper_shape_dimensions() {
        let s = SchemaSet::for_profile(Profile::PaperShape);
        assert_eq!(s.asm.native_dim(), 18);
        assert_eq!(s.pmsm.native_dim(), 33);
        assert_eq!(s.combined_dim(), 52);
    }

    #[test]
    fn unknown_profile_rejected() {
        assert!(matches!(
            default_schemas_named("lab"),
            Err(Error::UnknownProfile(_))
        ));
    }

    #[test]
    fn schema_invariants_enforced() {
        let bad = TechnologySchema::new(9, "x", vec![cont("a", 1.0, 1.0, "mm")], vec![]);
        assert!(bad.is_err());
        let dup = TechnologySchema::new(
            9,
            "x",
            vec![cont("a", 0.0, 1.0, "mm")],
            vec![disc("a", &[1])],
        );
        assert!(dup.is_err());
        assert!(TechnologySchema::new(9, "x", vec![], vec![disc("a", &[])]).is_err());
    }

    #[test]
    fn snap_ties_toward_smaller() {
        let d = disc("q", &[2, 3, 4]);
        assert_eq!(d.snap(2.5), 2);
        assert_eq!(d.snap(3.7), 4);
        assert_eq!(d.snap(-10.0), 2);
        assert_eq!(d.snap(9.0), 4);
    }

    #[test]
    fn asm_reference_is_valid() {
        let r = validate_geometry(&asm_reference(), &desk()).unwrap();
        assert!(r.valid, "{r:?}");
    }

    #[test]
    fn asm_rotor_equal_to_stator_violates_g1() {
        let mut d = asm_reference();
        d.continuous[2] = d.continuous[0];
        // rotor 200 is also out of bounds (max 190)
        let r = validate_geometry(&d, &desk()).unwrap();
        assert!(!r.valid);
        assert!(r.violated.contains(&GeometryRule::G1));
    }

    #[test]
    fn report_lists_every_violation() {
        let d = MachineDesign::new(ASM_ID, vec![160.0, 1.0, 150.0, 40.0, 1.0], vec![2, 3, 1, 1]);
        let r = validate_geometry(&d, &desk()).unwrap();
        assert_eq!(r.violated, vec![GeometryRule::G1, GeometryRule::G2, GeometryRule::G3]);
    }

    #[test]
    fn pmsm_g2_boundary() {
        let s = desk();
        // (220 - 160 - 2) / 2 * 0.4 = 11.6
        let ok = MachineDesign::new(PMSM_ID, vec![220.0, 160.0, 1.0, 11.0, 20.0], vec![2, 3, 0, 0]);
        assert!(validate_geometry(&ok, &s).unwrap().valid);
        let tooth15 = MachineDesign::new(PMSM_ID, vec![220.0, 160.0, 1.0, 15.0, 20.0], vec![2, 3, 0, 0]);
        let r = validate_geometry(&tooth15, &s).unwrap();
        assert_eq!(r.violated, vec![GeometryRule::G2]);
    }

    #[test]
    fn schema_mismatch_is_an_error() {
        let mut d = asm_reference();
        d.discrete.pop();
        assert!(matches!(validate_geometry(&d, &desk()), Err(Error::SchemaMismatch(_))));
        d.technology_id = 7;
        assert!(matches!(validate_geometry(&d, &desk()), Err(Error::UnknownTechnology(7))));
    }

    #[test]
    fn asm_reference_torque() {
        // 2*pi*0.075^2*0.12*30000 * (1 - 0.25*0.35/1.05) * 1.02 (pole pairs 3 vs min 2)
        let k = evaluate_kpis(&asm_reference(), &desk(), &SystemParameters::default()).unwrap();
        assert!((k.max_torque - 118.964_259_809_811_5).abs() < 1e-9, "{}", k.max_torque);
    }

    #[test]
    fn star_is_ninety_percent_of_delta() {
        let s = desk();
        let sys = SystemParameters::default();
        let delta = evaluate_kpis(&asm_reference(), &s, &sys).unwrap();
        let mut star = asm_reference();
        star.discrete[DISCRETE_CONNECTION] = STAR;
        let star = evaluate_kpis(&star, &s, &sys).unwrap();
        assert!((star.max_torque - 0.9 * delta.max_torque).abs() < 1e-12);
        assert_eq!(star.material_cost, delta.material_cost);
    }

    #[test]
    fn oracle_refuses_invalid_geometry() {
        let mut d = asm_reference();
        d.continuous[2] = 190.0;
        d.continuous[0] = 160.0;
        assert!(matches!(
            evaluate_kpis(&d, &desk(), &SystemParameters::default()),
            Err(Error::InvalidGeometry(_))
        ));
    }

    #[test]
    fn system_parameter_checks() {
        assert!(SystemParameters::default().validate().is_ok());
        let mut sys = SystemParameters::default();
        sys.speed_grid = vec![1.0, 1.0];
        assert!(sys.validate().is_err());
        sys = SystemParameters::default();
        sys.dc_voltage = 0.0;
        assert!(sys.validate().is_err());
    }

    #[test]
    fn fingerprint_distinguishes_profiles() {
        let a = SchemaSet::for_profile(Profile::Desk).fingerprints();
        let b = SchemaSet::for_profile(Profile::PaperShape).fingerprints();
        assert_ne!(a, b);
        assert_eq!(a[0].len(), 64);
    }
}
