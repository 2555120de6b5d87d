//! Batch front end: scenario documents in, CSV tables and a JSON report out.
//!
//! A scenario is a TOML document with the sections `carrier`, `aperture`,
//! `channel`, `task` and `numerics`. Exactly one table under `task` selects
//! the job. The full grammar is documented in the repository README.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::Serialize;
use toml::{Table, Value};

use crate::beamforming::{
    gram_matrix, mmse, mrt, power_min_solve, sinr_from_gram, sum_rate, zf, SinrTargets, UserChannelSet,
    DEFAULT_POWER_MIN_DAMPING,
};
use crate::channel::{
    sample_correlation_channel, sample_kernel, AngularSpectrum, Kernel, MultipathChannel, PolarizationMode, RicianChannel,
    Scatterer, SideSpectrum, UniPolLosChannel, VmfCluster,
};
use crate::em_core::{orientation_from_euler, scalar_green, Carrier, Orientation, PlanarAperture, Polarization};
use crate::error::{Error, Result};
use crate::estimation::{
    dictionary_residual, farfield_dictionary, l2_norm_sqr, measure, nearfield_dictionary, omp_recover, reconstruct_channel,
    sensing_matrix, Dictionary, PilotSchedule, SparseEstimate, StopRule,
};
use crate::hwmodel::{circuit_power_matrices, loss_power, radiated_power, radiated_power_upper_bound, PortBasis};
use crate::limits::{
    auto_dof_method, discretize_operator, dof_count, kolmogorov_capacity, landau_dof, los_spectrum, modal_decomposition,
    waterfill, DofMethod,
};
use crate::quadrature::{aperture_grid, default_order};
use crate::wavenumber::{assemble_spectral_channel, build_grid, DEFAULT_BUDGET};
use crate::{CVec, Vec3, C64, VERSION};

/// Task names as they appear under `[task]`.
pub const TASKS: [&str; 7] = ["dof_sweep", "capacity", "beamform", "estimate", "channel_sample", "coupling", "power"];

const ROOT_KEYS: [&str; 5] = ["carrier", "aperture", "channel", "task", "numerics"];

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DofMethodChoice {
    Auto,
    Dense,
    Fft,
}

#[derive(Debug, Clone, PartialEq)]
pub enum ChannelSpec {
    Los { polarization: PolarizationMode },
    Multipath { polarization: PolarizationMode, scatterers: Vec<Scatterer> },
    Correlation { spectrum: AngularSpectrum, cells_per_axis: usize },
    Rician { polarization: PolarizationMode, spectrum: AngularSpectrum, cells_per_axis: usize, k_factor: f64 },
}

impl ChannelSpec {
    fn model(&self) -> &'static str {
        match self {
            ChannelSpec::Los { .. } => "los",
            ChannelSpec::Multipath { .. } => "multipath",
            ChannelSpec::Correlation { .. } => "correlation",
            ChannelSpec::Rician { .. } => "rician",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BeamScheme {
    Mrt,
    Zf,
    Mmse,
    PowerMin,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Users {
    /// Drawn from the run seed inside a box in front of the transmitter.
    Random(usize),
    Positions(Vec<Vec3>),
}

#[derive(Debug, Clone, PartialEq)]
pub enum Task {
    DofSweep { distances_m: Vec<f64>, threshold: f64, method: DofMethodChoice },
    Capacity { power: f64, noise: f64, epsilon: f64, threshold: f64 },
    Beamform { scheme: BeamScheme, users: Users, power: f64, noise: f64, target_db: f64 },
    Estimate {
        nearfield_candidates: Option<Vec<Vec3>>,
        tau_p: usize,
        sparsity: Option<usize>,
        noise: f64,
        planted: Option<usize>,
        spectral_pilots: bool,
    },
    ChannelSample { wavenumber: bool },
    Coupling { pixels: (usize, usize), pixel_order: usize, surface_resistance: f64 },
    Power { pixels: (usize, usize), pixel_order: usize, surface_resistance: f64, random_samples: Option<usize> },
}

impl Task {
    pub fn name(&self) -> &'static str {
        match self {
            Task::DofSweep { .. } => "dof_sweep",
            Task::Capacity { .. } => "capacity",
            Task::Beamform { .. } => "beamform",
            Task::Estimate { .. } => "estimate",
            Task::ChannelSample { .. } => "channel_sample",
            Task::Coupling { .. } => "coupling",
            Task::Power { .. } => "power",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Numerics {
    pub quadrature_order: Option<usize>,
    pub grid_budget: usize,
    pub atom_budget: usize,
    pub seed: u64,
    pub tolerance: f64,
    pub max_iter: usize,
}

impl Default for Numerics {
    fn default() -> Self {
        Self {
            quadrature_order: None,
            grid_budget: DEFAULT_BUDGET,
            atom_budget: crate::estimation::DEFAULT_ATOM_BUDGET,
            seed: 0,
            tolerance: crate::beamforming::DEFAULT_POWER_MIN_TOL,
            max_iter: crate::beamforming::DEFAULT_POWER_MIN_MAX_ITER,
        }
    }
}

/// A validated scenario.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub carrier: Carrier,
    pub tx: PlanarAperture,
    pub rx: Option<PlanarAperture>,
    pub channel: Option<ChannelSpec>,
    pub task: Task,
    pub numerics: Numerics,
    /// The parsed document, echoed into the run report.
    pub document: Value,
}

/// Command-line values that take precedence over the document.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub quadrature_order: Option<usize>,
}

impl Scenario {
    pub fn apply(&mut self, o: &Overrides) {
        if let Some(s) = o.seed {
            self.numerics.seed = s;
        }
        if let Some(q) = o.quadrature_order {
            self.numerics.quadrature_order = Some(q);
        }
    }
}

// ---------------------------------------------------------------- parsing

struct Checker {
    errors: Vec<String>,
}

fn suggest(key: &str, allowed: &[&str]) -> Option<String> {
    allowed
        .iter()
        .map(|a| (strsim::levenshtein(key, a), *a))
        .filter(|(d, a)| *d <= 2.max(a.len() / 3))
        .min()
        .map(|(_, a)| a.to_string())
}

impl Checker {
    fn err(&mut self, msg: impl Into<String>) {
        self.errors.push(msg.into());
    }

    fn keys(&mut self, section: &str, t: &Table, allowed: &[&str]) {
        for k in t.keys() {
            if !allowed.contains(&k.as_str()) {
                match suggest(k, allowed) {
                    Some(s) => self.err(format!("unknown key '{k}' in [{section}]; did you mean '{s}'?")),
                    None => self.err(format!("unknown key '{k}' in [{section}]; expected one of: {}", allowed.join(", "))),
                }
            }
        }
    }

    fn float(&mut self, section: &str, t: &Table, key: &str) -> Option<f64> {
        match t.get(key)? {
            Value::Float(f) => Some(*f),
            Value::Integer(i) => Some(*i as f64),
            other => {
                self.err(format!("[{section}] {key} must be a number, got {}", other.type_str()));
                None
            }
        }
    }

    fn float_or(&mut self, section: &str, t: &Table, key: &str, default: f64) -> f64 {
        self.float(section, t, key).unwrap_or(default)
    }

    fn float_req(&mut self, section: &str, t: &Table, key: &str) -> Option<f64> {
        if !t.contains_key(key) {
            self.err(format!("[{section}] missing required key '{key}'"));
            return None;
        }
        self.float(section, t, key)
    }

    fn positive(&mut self, section: &str, key: &str, v: f64) -> f64 {
        if !(v > 0.0 && v.is_finite()) {
            self.err(format!("[{section}] {key} must be positive, got {v}"));
        }
        v
    }

    fn uint(&mut self, section: &str, t: &Table, key: &str) -> Option<u64> {
        match t.get(key)? {
            Value::Integer(i) if *i >= 0 => Some(*i as u64),
            other => {
                self.err(format!("[{section}] {key} must be a non-negative integer, got {other}"));
                None
            }
        }
    }

    fn string(&mut self, section: &str, t: &Table, key: &str, choices: &[&str], default: &str) -> String {
        match t.get(key) {
            None => default.to_string(),
            Some(Value::String(s)) if choices.contains(&s.as_str()) => s.clone(),
            Some(Value::String(s)) => {
                let hint = suggest(s, choices).map(|c| format!("; did you mean '{c}'?")).unwrap_or_default();
                self.err(format!("[{section}] {key} = '{s}' is not one of {}{hint}", choices.join(", ")));
                default.to_string()
            }
            Some(other) => {
                self.err(format!("[{section}] {key} must be a string, got {}", other.type_str()));
                default.to_string()
            }
        }
    }

    fn floats(&mut self, section: &str, v: &Value, key: &str, len: Option<usize>) -> Option<Vec<f64>> {
        let bad = |c: &mut Self| {
            let shape = len.map(|n| format!("an array of {n} numbers")).unwrap_or_else(|| "an array of numbers".into());
            c.err(format!("[{section}] {key} must be {shape}"));
            None
        };
        let Value::Array(a) = v else { return bad(self) };
        let mut out = Vec::with_capacity(a.len());
        for x in a {
            match x {
                Value::Float(f) => out.push(*f),
                Value::Integer(i) => out.push(*i as f64),
                _ => return bad(self),
            }
        }
        if len.is_some_and(|n| n != out.len()) || out.is_empty() {
            return bad(self);
        }
        Some(out)
    }

    fn vec3(&mut self, section: &str, t: &Table, key: &str) -> Option<Vec3> {
        let v = self.floats(section, t.get(key)?, key, Some(3))?;
        Some(Vec3::new(v[0], v[1], v[2]))
    }

    fn points(&mut self, section: &str, t: &Table, key: &str) -> Option<Vec<Vec3>> {
        let Some(Value::Array(a)) = t.get(key) else {
            if t.contains_key(key) {
                self.err(format!("[{section}] {key} must be an array of [x, y, z] points"));
            }
            return None;
        };
        let mut out = Vec::new();
        for p in a {
            let v = self.floats(section, p, key, Some(3))?;
            out.push(Vec3::new(v[0], v[1], v[2]));
        }
        Some(out)
    }

    fn table<'a>(&mut self, section: &str, t: &'a Table, key: &str) -> Option<&'a Table> {
        match t.get(key)? {
            Value::Table(sub) => Some(sub),
            other => {
                self.err(format!("[{section}] {key} must be a table, got {}", other.type_str()));
                None
            }
        }
    }

    fn pixels(&mut self, section: &str, t: &Table) -> (usize, usize) {
        match t.get("pixels") {
            None => (4, 4),
            Some(v) => match self.floats(section, v, "pixels", Some(2)) {
                Some(p) if p.iter().all(|x| *x >= 1.0 && x.fract() == 0.0) => (p[0] as usize, p[1] as usize),
                Some(_) => {
                    self.err(format!("[{section}] pixels must hold two positive integers"));
                    (1, 1)
                }
                None => (1, 1),
            },
        }
    }
}

fn parse_aperture(c: &mut Checker, section: &str, t: &Table) -> Option<PlanarAperture> {
    c.keys(section, t, &["center_m", "size_m", "euler_deg"]);
    let center = c.vec3(section, t, "center_m").unwrap_or_else(Vec3::zeros);
    let size = match t.get("size_m") {
        Some(v) => c.floats(section, v, "size_m", Some(2))?,
        None => {
            c.err(format!("[{section}] missing required key 'size_m'"));
            return None;
        }
    };
    let orientation = match t.get("euler_deg") {
        Some(v) => {
            let e = c.floats(section, v, "euler_deg", Some(3))?;
            orientation_from_euler(e[0].to_radians(), e[1].to_radians(), e[2].to_radians())
        }
        None => Orientation::identity(),
    };
    match PlanarAperture::new(center, orientation, size[0], size[1]) {
        Ok(a) => Some(a),
        Err(e) => {
            c.err(format!("[{section}] {e}"));
            None
        }
    }
}

fn parse_clusters(c: &mut Checker, section: &str, v: &Value) -> Option<SideSpectrum> {
    let Value::Array(items) = v else {
        c.err(format!("[{section}] clusters must be an array of tables"));
        return None;
    };
    let mut clusters = Vec::new();
    for (i, item) in items.iter().enumerate() {
        let name = format!("{section}[{i}]");
        let Value::Table(t) = item else {
            c.err(format!("[{name}] must be a table"));
            return None;
        };
        c.keys(&name, t, &["theta_deg", "phi_deg", "concentration", "weight"]);
        let theta = c.float_req(&name, t, "theta_deg")?;
        let phi = c.float_req(&name, t, "phi_deg")?;
        let concentration = c.float_req(&name, t, "concentration")?;
        let weight = c.float_or(&name, t, "weight", 1.0);
        clusters.push(VmfCluster {
            modal_theta_rad: theta.to_radians(),
            modal_phi_rad: phi.to_radians(),
            concentration,
            weight,
        });
    }
    match SideSpectrum::mixture(clusters) {
        Ok(s) => Some(s),
        Err(e) => {
            c.err(format!("[{section}] {e}"));
            None
        }
    }
}

fn parse_polarization(c: &mut Checker, t: &Table) -> PolarizationMode {
    let mode = c.string("channel", t, "polarization", &["simplified", "matched"], "simplified");
    if mode == "simplified" {
        for k in ["p_t", "p_r"] {
            if t.contains_key(k) {
                c.err(format!("[channel] {k} is only used with polarization = 'matched'"));
            }
        }
        return PolarizationMode::Simplified;
    }
    let mut dir = |key: &str| -> Polarization {
        let v = c.vec3("channel", t, key);
        match v.map(Polarization::new) {
            Some(Ok(p)) => p,
            Some(Err(e)) => {
                c.err(format!("[channel] {key}: {e}"));
                Polarization::z()
            }
            None => {
                c.err(format!("[channel] polarization = 'matched' needs {key} = [x, y, z]"));
                Polarization::z()
            }
        }
    };
    let p_t = dir("p_t");
    let p_r = dir("p_r");
    PolarizationMode::Matched { p_t, p_r }
}

fn parse_channel(c: &mut Checker, t: &Table) -> Option<ChannelSpec> {
    let model = c.string("channel", t, "model", &["los", "multipath", "correlation", "rician"], "los");
    let allowed: &[&str] = match model.as_str() {
        "los" => &["model", "polarization", "p_t", "p_r"],
        "multipath" => &["model", "polarization", "p_t", "p_r", "scatterers"],
        "correlation" => &["model", "spectrum", "cells_per_axis"],
        _ => &["model", "polarization", "p_t", "p_r", "spectrum", "cells_per_axis", "k_factor"],
    };
    c.keys("channel", t, allowed);
    let spectrum = |c: &mut Checker| -> AngularSpectrum {
        let mut s = AngularSpectrum::isotropic();
        if let Some(sp) = c.table("channel", t, "spectrum") {
            c.keys("channel.spectrum", sp, &["tx_clusters", "rx_clusters"]);
            if let Some(v) = sp.get("tx_clusters") {
                s.tx_side = parse_clusters(c, "channel.spectrum.tx_clusters", v).unwrap_or(SideSpectrum::Isotropic);
            }
            if let Some(v) = sp.get("rx_clusters") {
                s.rx_side = parse_clusters(c, "channel.spectrum.rx_clusters", v).unwrap_or(SideSpectrum::Isotropic);
            }
        }
        s
    };
    let cells = |c: &mut Checker| c.uint("channel", t, "cells_per_axis").map(|v| v as usize).unwrap_or(24);
    Some(match model.as_str() {
        "los" => ChannelSpec::Los { polarization: parse_polarization(c, t) },
        "multipath" => {
            let polarization = parse_polarization(c, t);
            let mut scatterers = Vec::new();
            match t.get("scatterers") {
                Some(Value::Array(items)) => {
                    for (i, item) in items.iter().enumerate() {
                        let name = format!("channel.scatterers[{i}]");
                        let Value::Table(st) = item else {
                            c.err(format!("[{name}] must be a table"));
                            continue;
                        };
                        c.keys(&name, st, &["position_m", "gain"]);
                        let pos = c.vec3(&name, st, "position_m");
                        if pos.is_none() && !st.contains_key("position_m") {
                            c.err(format!("[{name}] missing required key 'position_m'"));
                        }
                        let gain = match st.get("gain") {
                            Some(v) => c.floats(&name, v, "gain", Some(2)).map(|g| C64::new(g[0], g[1])),
                            None => Some(C64::new(1.0, 0.0)),
                        };
                        if let (Some(p), Some(g)) = (pos, gain) {
                            scatterers.push(Scatterer::new(p, g));
                        }
                    }
                }
                Some(_) => c.err("[channel] scatterers must be an array of tables"),
                None => c.err("[channel] model = 'multipath' needs at least one [[channel.scatterers]] entry"),
            }
            ChannelSpec::Multipath { polarization, scatterers }
        }
        "correlation" => ChannelSpec::Correlation { spectrum: spectrum(c), cells_per_axis: cells(c) },
        _ => {
            let polarization = parse_polarization(c, t);
            let k_factor = match c.float_req("channel", t, "k_factor") {
                Some(k) if k >= 0.0 => k,
                Some(k) => {
                    c.err(format!("[channel] k_factor must be >= 0, got {k}"));
                    0.0
                }
                None => 0.0,
            };
            ChannelSpec::Rician { polarization, spectrum: spectrum(c), cells_per_axis: cells(c), k_factor }
        }
    })
}

fn parse_task(c: &mut Checker, name: &str, t: &Table, tx: Option<&PlanarAperture>) -> Option<Task> {
    let sec = format!("task.{name}");
    let s = sec.as_str();
    match name {
        "dof_sweep" => {
            c.keys(s, t, &["distances_m", "threshold", "method"]);
            let distances_m = match t.get("distances_m") {
                Some(v) => c.floats(s, v, "distances_m", None)?,
                None => {
                    c.err(format!("[{s}] missing required key 'distances_m'"));
                    return None;
                }
            };
            for d in &distances_m {
                c.positive(s, "distances_m", *d);
            }
            let threshold = c.float_or(s, t, "threshold", 0.5);
            if !(threshold > 0.0 && threshold < 1.0) {
                c.err(format!("[{s}] threshold must lie in (0, 1), got {threshold}"));
            }
            let method = match c.string(s, t, "method", &["auto", "dense", "fft"], "auto").as_str() {
                "dense" => DofMethodChoice::Dense,
                "fft" => DofMethodChoice::Fft,
                _ => DofMethodChoice::Auto,
            };
            Some(Task::DofSweep { distances_m, threshold, method })
        }
        "capacity" => {
            c.keys(s, t, &["power", "noise", "epsilon", "threshold"]);
            let power = c.float_or(s, t, "power", 1.0);
            let noise = c.float_or(s, t, "noise", 1.0);
            let epsilon = c.float_or(s, t, "epsilon", 1e-3);
            let threshold = c.float_or(s, t, "threshold", 0.5);
            c.positive(s, "power", power);
            c.positive(s, "noise", noise);
            c.positive(s, "epsilon", epsilon);
            Some(Task::Capacity { power, noise, epsilon, threshold })
        }
        "beamform" => {
            c.keys(s, t, &["scheme", "users", "user_positions_m", "power", "noise", "target_db"]);
            let scheme = match c.string(s, t, "scheme", &["mrt", "zf", "mmse", "power_min"], "zf").as_str() {
                "mrt" => BeamScheme::Mrt,
                "mmse" => BeamScheme::Mmse,
                "power_min" => BeamScheme::PowerMin,
                _ => BeamScheme::Zf,
            };
            let power = c.float_or(s, t, "power", 1.0);
            let noise = c.float_or(s, t, "noise", 1.0);
            c.positive(s, "power", power);
            c.positive(s, "noise", noise);
            let target_db = c.float_or(s, t, "target_db", 5.0);
            let users = match (c.points(s, t, "user_positions_m"), c.uint(s, t, "users")) {
                (Some(_), Some(_)) => {
                    c.err(format!("[{s}] give either users or user_positions_m, not both"));
                    return None;
                }
                (Some(p), None) if !p.is_empty() => Users::Positions(p),
                (None, Some(k)) if k > 0 => Users::Random(k as usize),
                _ => {
                    c.err(format!("[{s}] needs users (a positive count) or a non-empty user_positions_m"));
                    return None;
                }
            };
            Some(Task::Beamform { scheme, users, power, noise, target_db })
        }
        "estimate" => {
            c.keys(s, t, &["dictionary", "candidates_m", "tau_p", "sparsity", "noise", "planted", "pilots"]);
            let dict = c.string(s, t, "dictionary", &["farfield", "nearfield"], "farfield");
            let nearfield_candidates = if dict == "nearfield" {
                let p = c.points(s, t, "candidates_m");
                if p.as_ref().is_none_or(|p| p.is_empty()) {
                    c.err(format!("[{s}] dictionary = 'nearfield' needs candidates_m"));
                }
                Some(p.unwrap_or_default())
            } else {
                if t.contains_key("candidates_m") {
                    c.err(format!("[{s}] candidates_m is only used with dictionary = 'nearfield'"));
                }
                None
            };
            let tau_p = c.uint(s, t, "tau_p").unwrap_or(12) as usize;
            if tau_p == 0 {
                c.err(format!("[{s}] tau_p must be at least 1"));
            }
            let sparsity = c.uint(s, t, "sparsity").map(|v| v as usize);
            let noise = c.float_or(s, t, "noise", 0.0);
            if !(noise >= 0.0) {
                c.err(format!("[{s}] noise must be >= 0, got {noise}"));
            }
            let planted = c.uint(s, t, "planted").map(|v| v as usize);
            let spectral_pilots = c.string(s, t, "pilots", &["spectral", "grid"], "spectral") == "spectral";
            Some(Task::Estimate { nearfield_candidates, tau_p, sparsity, noise, planted, spectral_pilots })
        }
        "channel_sample" => {
            c.keys(s, t, &["representation"]);
            let wavenumber = c.string(s, t, "representation", &["spatial", "wavenumber"], "spatial") == "wavenumber";
            Some(Task::ChannelSample { wavenumber })
        }
        "coupling" | "power" => {
            let mut allowed = vec!["pixels", "pixel_order", "surface_resistance"];
            if name == "power" {
                allowed.extend(["currents", "samples"]);
            }
            c.keys(s, t, &allowed);
            let pixels = c.pixels(s, t);
            let pixel_order = c.uint(s, t, "pixel_order").unwrap_or(3) as usize;
            let surface_resistance = c.float_or(s, t, "surface_resistance", 0.0);
            if !(surface_resistance >= 0.0) {
                c.err(format!("[{s}] surface_resistance must be >= 0, got {surface_resistance}"));
            }
            if tx.is_none() {
                c.err(format!("[{s}] needs [aperture.tx]"));
            }
            if name == "coupling" {
                return Some(Task::Coupling { pixels, pixel_order, surface_resistance });
            }
            let random = c.string(s, t, "currents", &["uniform", "random"], "random") == "random";
            let samples = c.uint(s, t, "samples").unwrap_or(100) as usize;
            if !random && t.contains_key("samples") {
                c.err(format!("[{s}] samples is only used with currents = 'random'"));
            }
            Some(Task::Power { pixels, pixel_order, surface_resistance, random_samples: random.then_some(samples) })
        }
        _ => None,
    }
}

/// Parses and validates a scenario document, reporting every problem found.
pub fn parse_scenario_str(text: &str) -> Result<Scenario> {
    let doc: Table = toml::from_str(text).map_err(|e| Error::Validation(vec![format!("not a valid TOML document: {e}")]))?;
    let mut c = Checker { errors: Vec::new() };
    c.keys("root", &doc, &ROOT_KEYS);

    let carrier = match c.table("root", &doc, "carrier") {
        Some(t) => {
            c.keys("carrier", t, &["frequency_hz"]);
            c.float_req("carrier", t, "frequency_hz").and_then(|f| match Carrier::new(f) {
                Ok(car) => Some(car),
                Err(e) => {
                    c.err(format!("[carrier] {e}"));
                    None
                }
            })
        }
        None => {
            c.err("missing required section [carrier]");
            None
        }
    };

    let (mut tx, mut rx) = (None, None);
    match c.table("root", &doc, "aperture") {
        Some(t) => {
            c.keys("aperture", t, &["tx", "rx"]);
            if let Some(tt) = c.table("aperture", t, "tx") {
                tx = parse_aperture(&mut c, "aperture.tx", tt);
            } else {
                c.err("missing required section [aperture.tx]");
            }
            if let Some(rt) = c.table("aperture", t, "rx") {
                rx = parse_aperture(&mut c, "aperture.rx", rt);
            }
        }
        None => c.err("missing required section [aperture]"),
    }

    let channel = c.table("root", &doc, "channel").and_then(|t| parse_channel(&mut c, t));

    let mut numerics = Numerics::default();
    if let Some(t) = c.table("root", &doc, "numerics") {
        c.keys("numerics", t, &["quadrature_order", "grid_budget", "atom_budget", "seed", "tolerance", "max_iter"]);
        numerics.quadrature_order = c.uint("numerics", t, "quadrature_order").map(|v| v as usize);
        if let Some(v) = c.uint("numerics", t, "grid_budget") {
            numerics.grid_budget = v as usize;
        }
        if let Some(v) = c.uint("numerics", t, "atom_budget") {
            numerics.atom_budget = v as usize;
        }
        if let Some(v) = c.uint("numerics", t, "seed") {
            numerics.seed = v;
        }
        numerics.tolerance = c.float_or("numerics", t, "tolerance", numerics.tolerance);
        if let Some(v) = c.uint("numerics", t, "max_iter") {
            numerics.max_iter = v as usize;
        }
    }

    let mut task = None;
    match c.table("root", &doc, "task") {
        Some(t) => {
            c.keys("task", t, &TASKS);
            let present: Vec<&str> = TASKS.iter().copied().filter(|k| t.contains_key(*k)).collect();
            match present.as_slice() {
                [] => c.err(format!("[task] needs exactly one task block, one of: {}", TASKS.join(", "))),
                [one] => {
                    if let Some(tt) = c.table("task", t, one) {
                        task = parse_task(&mut c, one, tt, tx.as_ref());
                    }
                }
                many => c.err(format!("[task] holds {} task blocks ({}); a scenario runs exactly one", many.len(), many.join(", "))),
            }
        }
        None => c.err("missing required section [task]"),
    }

    if let Some(task) = &task {
        let needs_rx = matches!(task, Task::Capacity { .. } | Task::Estimate { .. } | Task::ChannelSample { .. });
        if needs_rx && rx.is_none() && !c.errors.iter().any(|e| e.contains("aperture.rx")) {
            c.err(format!("task {} needs [aperture.rx]", task.name()));
        }
        let planted = matches!(task, Task::Estimate { planted: Some(_), .. });
        let needs_channel = matches!(task, Task::Capacity { .. } | Task::ChannelSample { .. }) || (matches!(task, Task::Estimate { .. }) && !planted);
        if needs_channel && channel.is_none() && !doc.contains_key("channel") {
            c.err(format!("task {} needs a [channel] section", task.name()));
        }
        if matches!(task, Task::DofSweep { .. } | Task::Beamform { .. }) {
            if let Some(ch) = &channel {
                if ch.model() != "los" {
                    c.err(format!("task {} supports only channel model 'los', got '{}'", task.name(), ch.model()));
                }
            }
        }
    }

    if !c.errors.is_empty() {
        return Err(Error::Validation(c.errors));
    }
    let (Some(carrier), Some(tx), Some(task)) = (carrier, tx, task) else {
        return Err(Error::Validation(vec!["scenario is incomplete".into()]));
    };
    Ok(Scenario { carrier, tx, rx, channel, task, numerics, document: Value::Table(doc) })
}

pub fn parse_scenario(path: &Path) -> Result<Scenario> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::Io(format!("cannot read {}: {e}", path.display())))?;
    parse_scenario_str(&text)
}

// ---------------------------------------------------------------- running

#[derive(Debug, Clone, Serialize)]
pub struct Stage {
    pub name: String,
    pub seconds: f64,
}

/// Everything recorded about one run; written as `report.json`.
#[derive(Debug, Clone, Serialize)]
pub struct RunReport {
    pub version: String,
    pub task: String,
    pub seed: u64,
    pub started_unix_s: u64,
    pub scenario: serde_json::Value,
    pub stages: Vec<Stage>,
    pub warnings: Vec<String>,
    pub outputs: Vec<String>,
    pub results: BTreeMap<String, serde_json::Value>,
}

struct Outcome {
    files: Vec<(String, String)>,
    results: BTreeMap<String, serde_json::Value>,
    warnings: Vec<String>,
    stages: Vec<Stage>,
}

impl Outcome {
    fn new() -> Self {
        Self { files: Vec::new(), results: BTreeMap::new(), warnings: Vec::new(), stages: Vec::new() }
    }

    fn stage<T>(&mut self, name: &str, f: impl FnOnce() -> Result<T>) -> Result<T> {
        let t = Instant::now();
        let out = f();
        self.stages.push(Stage { name: name.to_string(), seconds: t.elapsed().as_secs_f64() });
        out
    }

    fn result(&mut self, key: &str, v: impl Serialize) {
        self.results.insert(key.to_string(), serde_json::to_value(v).unwrap_or(serde_json::Value::Null));
    }
}

/// 17 significant digits, locale-free.
pub fn num(x: f64) -> String {
    format!("{x:.16e}")
}

fn csv_table(header: &[&str], rows: &[Vec<String>]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header)?;
    for r in rows {
        w.write_record(r)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Io(e.to_string()))?;
    String::from_utf8(bytes).map_err(|e| Error::Io(e.to_string()))
}

fn section<T>(name: &str, r: Result<T>) -> Result<T> {
    r.map_err(|e| match e {
        Error::Section { .. } | Error::Io(_) | Error::Validation(_) => e,
        other => Error::Section { section: name.to_string(), source: Box::new(other) },
    })
}

fn quad_order(sc: &Scenario, ap: &PlanarAperture) -> Result<usize> {
    match sc.numerics.quadrature_order {
        Some(q) => Ok(q),
        None => default_order(ap, &sc.carrier),
    }
}

fn build_kernel(sc: &Scenario, spec: &ChannelSpec, rx: &PlanarAperture) -> Result<Box<dyn Kernel>> {
    let los = |p: &PolarizationMode| UniPolLosChannel::new(sc.tx, *rx, sc.carrier, *p);
    Ok(match spec {
        ChannelSpec::Los { polarization } => Box::new(los(polarization)?),
        ChannelSpec::Multipath { polarization, scatterers } => {
            Box::new(MultipathChannel { los: los(polarization)?, scatterers: scatterers.clone() })
        }
        ChannelSpec::Correlation { spectrum, cells_per_axis } => {
            Box::new(sample_correlation_channel(spectrum, &sc.tx, rx, &sc.carrier, *cells_per_axis, sc.numerics.seed)?)
        }
        ChannelSpec::Rician { polarization, spectrum, cells_per_axis, k_factor } => {
            let real = sample_correlation_channel(spectrum, &sc.tx, rx, &sc.carrier, *cells_per_axis, sc.numerics.seed)?;
            let order = quad_order(sc, rx)?.max(quad_order(sc, &sc.tx)?);
            Box::new(RicianChannel::new(los(polarization)?, real, *k_factor, order)?)
        }
    })
}

fn rx_of(sc: &Scenario) -> Result<PlanarAperture> {
    sc.rx.ok_or_else(|| Error::Validation(vec!["[aperture.rx] is required for this task".into()]))
}

fn channel_of(sc: &Scenario) -> Result<&ChannelSpec> {
    sc.channel.as_ref().ok_or_else(|| Error::Validation(vec!["[channel] is required for this task".into()]))
}

fn run_dof(sc: &Scenario, out: &mut Outcome, distances: &[f64], threshold: f64, choice: DofMethodChoice) -> Result<()> {
    let (len_x, len_z) = sc.rx.map(|r| (r.len_x_m, r.len_z_m)).unwrap_or((sc.tx.len_x_m, sc.tx.len_z_m));
    let lam4 = 0.25 * sc.carrier.lambda();
    let mut rows = Vec::new();
    let mut spectrum_rows = Vec::new();
    for &d in distances {
        let center = sc.tx.center_m + sc.tx.normal() * d;
        let rx = PlanarAperture::new(center, sc.tx.orientation, len_x, len_z)?;
        let method = match (choice, sc.numerics.quadrature_order) {
            (DofMethodChoice::Dense, _) | (DofMethodChoice::Auto, Some(_)) => DofMethod::DenseGaussLegendre {
                order: quad_order(sc, &sc.tx)?.max(quad_order(sc, &rx)?),
            },
            (DofMethodChoice::Fft, _) => DofMethod::FftMidpoint {
                cells_x: (sc.tx.len_x_m / lam4).ceil() as usize,
                cells_z: (sc.tx.len_z_m / lam4).ceil() as usize,
            },
            (DofMethodChoice::Auto, None) => auto_dof_method(&sc.tx, &rx, &sc.carrier)?,
        };
        let modes = out.stage(&format!("spectrum D={d}"), || los_spectrum(&sc.tx, &rx, &sc.carrier, method, threshold, sc.numerics.seed))?;
        let dof = dof_count(&modes, threshold)?;
        let landau = landau_dof(&sc.tx, &rx, d, &sc.carrier, &rx.orientation);
        rows.push(vec![num(d), num(landau), dof.to_string()]);
        for (n, (s, mu)) in modes.singular_values.iter().zip(modes.normalized()).enumerate() {
            spectrum_rows.push(vec![num(d), (n + 1).to_string(), num(*s), num(mu)]);
        }
        if modes.truncated {
            out.warnings.push(format!("D={d} m: spectrum truncated to its {} leading values", modes.singular_values.len()));
        }
        out.result(&format!("method_D{d}"), format!("{method:?}"));
    }
    out.files.push(("dof.csv".into(), csv_table(&["distance_m", "landau", "numeric_dof"], &rows)?));
    out.files.push(("spectrum.csv".into(), csv_table(&["distance_m", "index", "sigma", "mu"], &spectrum_rows)?));
    Ok(())
}

fn run_capacity(sc: &Scenario, out: &mut Outcome, power: f64, noise: f64, epsilon: f64, threshold: f64) -> Result<()> {
    let rx = rx_of(sc)?;
    let h = section("channel", build_kernel(sc, channel_of(sc)?, &rx))?;
    let tg = aperture_grid(&sc.tx, quad_order(sc, &sc.tx)?)?;
    let rg = aperture_grid(&rx, quad_order(sc, &rx)?)?;
    let op = out.stage("discretize", || discretize_operator(&*h, &tg, &rg))?;
    let modes = out.stage("svd", || modal_decomposition(&op))?;
    let wf = waterfill(&modes, power, noise)?;
    let dof = dof_count(&modes, threshold)?;
    let kc = kolmogorov_capacity(&modes, power, epsilon)?;
    let rows: Vec<Vec<String>> = modes
        .singular_values
        .iter()
        .zip(modes.normalized())
        .zip(&wf.powers)
        .enumerate()
        .map(|(n, ((s, mu), p))| vec![(n + 1).to_string(), num(*s), num(mu), num(*p)])
        .collect();
    out.files.push(("capacity.csv".into(), csv_table(&["index", "sigma", "mu", "power"], &rows)?));
    out.files.push((
        "capacity_summary.csv".into(),
        csv_table(
            &["capacity_bits", "water_level", "numeric_dof", "kolmogorov_bits"],
            &[vec![num(wf.capacity_bits), num(wf.water_level), dof.to_string(), num(kc)]],
        )?,
    ));
    out.result("capacity_bits", wf.capacity_bits);
    out.result("numeric_dof", dof);
    out.result("kolmogorov_bits", kc);
    Ok(())
}

fn user_positions(sc: &Scenario, users: &Users) -> Vec<Vec3> {
    let count = match users {
        Users::Positions(p) => return p.clone(),
        Users::Random(k) => *k,
    };
    // Random placement in the tx frame: x ∈ [−2, 2], depth ∈ [1, 4], z ∈ [−1, 1] metres.
    let (ax, n, az) = sc.tx.orientation.axes();
    let mut rng = ChaCha8Rng::seed_from_u64(sc.numerics.seed);
    (0..count)
        .map(|_| {
            let (x, y, z) = (rng.random_range(-2.0..2.0), rng.random_range(1.0..4.0), rng.random_range(-1.0..1.0));
            sc.tx.center_m + ax * x + n * y + az * z
        })
        .collect()
}

fn run_beamform(sc: &Scenario, out: &mut Outcome, scheme: BeamScheme, users: &Users, power: f64, noise: f64, target_db: f64) -> Result<()> {
    let positions = user_positions(sc, users);
    let grid = aperture_grid(&sc.tx, quad_order(sc, &sc.tx)?)?;
    let k0 = sc.carrier.k0();
    let eta = sc.carrier.impedance_ohm;
    let mut channels = Vec::with_capacity(positions.len());
    for (k, u) in positions.iter().enumerate() {
        let h = grid
            .nodes
            .iter()
            .map(|n| Ok(C64::new(0.0, -eta * k0) * scalar_green((u - n.global).norm(), &sc.carrier)?))
            .collect::<Result<Vec<_>>>();
        channels.push(section(&format!("task.beamform user {k}"), h)?);
    }
    let set = UserChannelSet::new(grid, channels, noise)?;
    let kk = set.users();
    let gram = gram_matrix(&set);
    let alloc = vec![power; kk];
    let mut converged = true;
    let mut iterations = 0;
    let mut diagnostics = Vec::new();
    let beams = out.stage("beamformer", || -> Result<_> {
        Ok(match scheme {
            BeamScheme::Mrt => mrt(&set, &alloc)?,
            BeamScheme::Zf => zf(&set, &alloc)?,
            BeamScheme::Mmse => {
                let unit = mmse(&set, &alloc, &vec![1.0; kk])?;
                let scale: Vec<f64> = unit.powers(&gram).iter().map(|p| (power / p).sqrt()).collect();
                mmse(&set, &alloc, &scale)?
            }
            BeamScheme::PowerMin => {
                let targets = SinrTargets::uniform_db(kk, target_db)?;
                let r = power_min_solve(&set, &targets, sc.numerics.tolerance, sc.numerics.max_iter, DEFAULT_POWER_MIN_DAMPING)?;
                converged = r.converged;
                iterations = r.iterations;
                diagnostics = r.diagnostics.clone();
                r.beamformers
            }
        })
    });
    let beams = section("task.beamform", beams)?;
    out.warnings.extend(diagnostics);
    if !converged {
        out.warnings.push(format!("power minimization did not converge after {iterations} iterations"));
    }
    let sinrs = sinr_from_gram(&gram, &beams, noise);
    let powers = beams.powers(&gram);
    let total: f64 = powers.iter().sum();
    let rate = sum_rate(&sinrs)?;
    let rows: Vec<Vec<String>> = (0..kk).map(|k| vec![k.to_string(), num(sinrs[k]), num(10.0 * sinrs[k].log10()), num(powers[k])]).collect();
    out.files.push(("beamform.csv".into(), csv_table(&["user", "sinr", "sinr_db", "power"], &rows)?));
    let scheme_name = match scheme {
        BeamScheme::Mrt => "mrt",
        BeamScheme::Zf => "zf",
        BeamScheme::Mmse => "mmse",
        BeamScheme::PowerMin => "power_min",
    };
    out.files.push((
        "beamform_summary.csv".into(),
        csv_table(
            &["scheme", "total_power", "sum_rate_bits", "converged", "iterations", "gram_condition"],
            &[vec![
                scheme_name.into(),
                num(total),
                num(rate),
                converged.to_string(),
                iterations.to_string(),
                num(gram.condition_number()),
            ]],
        )?,
    ));
    out.files.push(("beam_coefficients.csv".into(), beams.coefficients_csv()));
    out.result("total_power", total);
    out.result("sum_rate_bits", rate);
    out.result("converged", converged);
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn run_estimate(
    sc: &Scenario,
    out: &mut Outcome,
    candidates: &Option<Vec<Vec3>>,
    tau_p: usize,
    sparsity: Option<usize>,
    noise: f64,
    planted: Option<usize>,
    spectral_pilots: bool,
) -> Result<()> {
    let rx = rx_of(sc)?;
    let tg = aperture_grid(&sc.tx, quad_order(sc, &sc.tx)?)?;
    let rg = aperture_grid(&rx, quad_order(sc, &rx)?)?;
    let tw = section("aperture.tx", build_grid(&sc.tx, &sc.carrier))?;
    let rw = section("aperture.rx", build_grid(&rx, &sc.carrier))?;
    let dict: Dictionary = section(
        "task.estimate",
        out.stage("dictionary", || match candidates {
            Some(c) => nearfield_dictionary(c, &sc.carrier, &tg, &rg),
            None => farfield_dictionary(&tw, &rw, &tg, &rg, sc.numerics.atom_budget),
        }),
    )?;
    let mut rng = ChaCha8Rng::seed_from_u64(sc.numerics.seed ^ 0x9e37_79b9_7f4a_7c15);
    let truth: Box<dyn Kernel> = match planted {
        Some(k) => {
            if k == 0 || k > dict.len() {
                return Err(Error::Section {
                    section: "task.estimate".into(),
                    source: Box::new(Error::Domain(format!("planted = {k} must lie in 1..={}", dict.len()))),
                });
            }
            let support = rand::seq::index::sample(&mut rng, dict.len(), k).into_vec();
            let mut coefficients = CVec::zeros(dict.len());
            for j in &support {
                let re: f64 = StandardNormal.sample(&mut rng);
                let im: f64 = StandardNormal.sample(&mut rng);
                coefficients[*j] = C64::new(re, im);
            }
            let mut sorted = support.clone();
            sorted.sort_unstable();
            out.result("planted_support", sorted);
            let est = SparseEstimate { coefficients, support, residual_norm: 0.0, residual_trace: Vec::new() };
            Box::new(reconstruct_channel(&est, &dict)?)
        }
        None => section("channel", build_kernel(sc, channel_of(sc)?, &rx))?,
    };
    let schedule = if spectral_pilots {
        PilotSchedule::random_spectral(tau_p, &rw, &tw, &rg, &tg, noise, sc.numerics.seed)?
    } else {
        PilotSchedule::random(tau_p, &rg, &tg, noise, sc.numerics.seed)?
    };
    let a = out.stage("sensing", || sensing_matrix(&schedule, &dict))?;
    let v = out.stage("measure", || measure(&*truth, &schedule, &rg, &tg, sc.numerics.seed.wrapping_add(1)))?;
    let est = section("task.estimate", out.stage("omp", || omp_recover(&a.matrix, &v, sparsity.map(StopRule::Sparsity))))?;
    let recon = reconstruct_channel(&est, &dict)?;
    let err = out.stage("residual", || dictionary_residual(&*truth, &recon, &rg, &tg))?;
    let nmse = err / l2_norm_sqr(&*truth, &rg, &tg)?;
    let mut support = est.support.clone();
    support.sort_unstable();
    out.files.push(("estimate.csv".into(), est.to_csv_string()));
    out.files.push((
        "estimate_summary.csv".into(),
        csv_table(
            &["atoms", "tau_p", "support_size", "residual_norm", "nmse"],
            &[vec![dict.len().to_string(), tau_p.to_string(), support.len().to_string(), num(est.residual_norm), num(nmse)]],
        )?,
    ));
    out.result("nmse", nmse);
    out.result("support", support);
    Ok(())
}

fn run_channel_sample(sc: &Scenario, out: &mut Outcome, wavenumber: bool) -> Result<()> {
    let rx = rx_of(sc)?;
    let h = section("channel", build_kernel(sc, channel_of(sc)?, &rx))?;
    if wavenumber {
        let tw = section("aperture.tx", build_grid(&sc.tx, &sc.carrier))?;
        let rw = section("aperture.rx", build_grid(&rx, &sc.carrier))?;
        let order = quad_order(sc, &sc.tx)?.max(quad_order(sc, &rx)?);
        let ch = section(
            "task.channel_sample",
            out.stage("spectral", || assemble_spectral_channel(&*h, &tw, &rw, order, sc.numerics.grid_budget)),
        )?;
        out.warnings.extend(ch.warnings.iter().cloned());
        let mut rows = Vec::with_capacity(ch.matrix.len());
        for (p, (rm, rn)) in rw.indices.iter().enumerate() {
            for (q, (tm, tn)) in tw.indices.iter().enumerate() {
                let v = ch.matrix[(p, q)];
                rows.push(vec![rm.to_string(), rn.to_string(), tm.to_string(), tn.to_string(), num(v.re), num(v.im)]);
            }
        }
        out.files.push(("spectral_channel.csv".into(), csv_table(&["rx_m", "rx_n", "tx_m", "tx_n", "re", "im"], &rows)?));
        out.result("spectral_shape", (ch.matrix.nrows(), ch.matrix.ncols()));
        out.result("quadrature_order", order);
    } else {
        let tg = aperture_grid(&sc.tx, quad_order(sc, &sc.tx)?)?;
        let rg = aperture_grid(&rx, quad_order(sc, &rx)?)?;
        let s = out.stage("sample", || sample_kernel(&*h, &rg, &tg))?;
        let mut rows = Vec::with_capacity(s.values.len());
        for (i, rn) in rg.nodes.iter().enumerate() {
            for (j, tn) in tg.nodes.iter().enumerate() {
                let v = s.values[(i, j)];
                rows.push(vec![
                    i.to_string(),
                    j.to_string(),
                    num(rn.local.x),
                    num(rn.local.y),
                    num(tn.local.x),
                    num(tn.local.y),
                    num(v.re),
                    num(v.im),
                ]);
            }
        }
        out.files.push((
            "channel.csv".into(),
            csv_table(&["rx_node", "tx_node", "rx_x_m", "rx_z_m", "tx_x_m", "tx_z_m", "re", "im"], &rows)?,
        ));
        let mean: f64 = s.values.iter().map(|v| v.norm_sqr()).sum::<f64>() / s.values.len() as f64;
        out.result("mean_abs_sqr", mean);
    }
    Ok(())
}

fn pixel_basis(sc: &Scenario, pixels: (usize, usize), order: usize) -> Result<PortBasis> {
    section("task", PortBasis::pixels(&sc.tx, pixels.0, pixels.1, order))
}

fn run_coupling(sc: &Scenario, out: &mut Outcome, pixels: (usize, usize), order: usize, rs: f64) -> Result<()> {
    let basis = pixel_basis(sc, pixels, order)?;
    let res = vec![rs; basis.grid.len()];
    let m = out.stage("power_matrices", || circuit_power_matrices(&basis, &sc.carrier, &res))?;
    let eig = nalgebra::SymmetricEigen::new(m.radiation_resistance.clone()).eigenvalues;
    out.files.push(("power_matrices.csv".into(), m.to_csv_string()));
    out.result("ports", basis.len());
    out.result("r_rad_min_eigenvalue", eig.min());
    out.result("r_rad_max_eigenvalue", eig.max());
    Ok(())
}

fn run_power(sc: &Scenario, out: &mut Outcome, pixels: (usize, usize), order: usize, rs: f64, samples: Option<usize>) -> Result<()> {
    let basis = pixel_basis(sc, pixels, order)?;
    let res = vec![rs; basis.grid.len()];
    let mut rng = ChaCha8Rng::seed_from_u64(sc.numerics.seed);
    let currents: Vec<CVec> = match samples {
        None => vec![CVec::from_element(basis.len(), C64::new(1.0, 0.0))],
        Some(n) => (0..n)
            .map(|_| {
                CVec::from_fn(basis.len(), |_, _| {
                    let re: f64 = StandardNormal.sample(&mut rng);
                    let im: f64 = StandardNormal.sample(&mut rng);
                    C64::new(re, im)
                })
            })
            .collect(),
    };
    let mut rows = Vec::with_capacity(currents.len());
    let mut violations = 0;
    let t = Instant::now();
    for (k, i) in currents.iter().enumerate() {
        let x = basis.combine(i)?;
        let p = radiated_power(&x, &basis.grid, &sc.carrier)?;
        let ub = radiated_power_upper_bound(&x, &basis.grid, &sc.carrier)?;
        let pl = loss_power(&x, &basis.grid, &res)?;
        if p > ub {
            violations += 1;
        }
        rows.push(vec![k.to_string(), num(p), num(ub), num(pl)]);
    }
    out.stages.push(Stage { name: "powers".into(), seconds: t.elapsed().as_secs_f64() });
    if violations > 0 {
        out.warnings.push(format!("{violations} currents exceeded the radiated-power upper bound"));
    }
    out.files.push(("power.csv".into(), csv_table(&["sample", "p_rad", "p_rad_bound", "p_loss"], &rows)?));
    out.result("bound_violations", violations);
    Ok(())
}

/// Runs the scenario, writes its files into `out_dir` and returns the report
/// (also written as `report.json`).
pub fn run(sc: &Scenario, out_dir: &Path) -> Result<RunReport> {
    std::fs::create_dir_all(out_dir).map_err(|e| Error::Io(format!("cannot create output directory {}: {e}", out_dir.display())))?;
    let started = SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0);
    let mut out = Outcome::new();
    let task_section = format!("task.{}", sc.task.name());
    let res = match &sc.task {
        Task::DofSweep { distances_m, threshold, method } => run_dof(sc, &mut out, distances_m, *threshold, *method),
        Task::Capacity { power, noise, epsilon, threshold } => run_capacity(sc, &mut out, *power, *noise, *epsilon, *threshold),
        Task::Beamform { scheme, users, power, noise, target_db } => run_beamform(sc, &mut out, *scheme, users, *power, *noise, *target_db),
        Task::Estimate { nearfield_candidates, tau_p, sparsity, noise, planted, spectral_pilots } => {
            run_estimate(sc, &mut out, nearfield_candidates, *tau_p, *sparsity, *noise, *planted, *spectral_pilots)
        }
        Task::ChannelSample { wavenumber } => run_channel_sample(sc, &mut out, *wavenumber),
        Task::Coupling { pixels, pixel_order, surface_resistance } => run_coupling(sc, &mut out, *pixels, *pixel_order, *surface_resistance),
        Task::Power { pixels, pixel_order, surface_resistance, random_samples } => {
            run_power(sc, &mut out, *pixels, *pixel_order, *surface_resistance, *random_samples)
        }
    };
    section(&task_section, res)?;
    let mut outputs = Vec::new();
    for (name, body) in &out.files {
        let path = out_dir.join(name);
        std::fs::write(&path, body).map_err(|e| Error::Io(format!("cannot write {}: {e}", path.display())))?;
        outputs.push(name.clone());
    }
    let report = RunReport {
        version: VERSION.to_string(),
        task: sc.task.name().to_string(),
        seed: sc.numerics.seed,
        started_unix_s: started,
        scenario: serde_json::to_value(&sc.document)?,
        stages: out.stages,
        warnings: out.warnings,
        outputs,
        results: out.results,
    };
    std::fs::write(out_dir.join("report.json"), serde_json::to_string_pretty(&report)?)?;
    for name in &report.outputs {
        if !out_dir.join(name).is_file() {
            return Err(Error::Io(format!("output {name} is missing after the run")));
        }
    }
    Ok(report)
}

/// Caps the global rayon pool at `CAPA_THREADS` when set.
pub fn init_threads() -> Result<()> {
    if let Ok(v) = std::env::var("CAPA_THREADS") {
        let n: usize = v.trim().parse().map_err(|_| Error::Config(format!("CAPA_THREADS must be a positive integer, got '{v}'")))?;
        if n == 0 {
            return Err(Error::Config("CAPA_THREADS must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global().map_err(|e| Error::Config(e.to_string()))?;
    }
    Ok(())
}

/// Loads a scenario, checks it binds `expected` (when given), applies the
/// overrides and runs it.
pub fn execute(path: &Path, expected: Option<&str>, overrides: &Overrides, out_dir: &Path) -> Result<RunReport> {
    let mut sc = parse_scenario(path)?;
    if let Some(want) = expected {
        if sc.task.name() != want {
            return Err(Error::Validation(vec![format!(
                "subcommand expects a [task.{want}] block but the scenario defines [task.{}]",
                sc.task.name()
            )]));
        }
    }
    sc.apply(overrides);
    run(&sc, out_dir)
}

/// Default output directory next to the working directory.
pub fn default_out_dir() -> PathBuf {
    PathBuf::from("capa-out")
}
