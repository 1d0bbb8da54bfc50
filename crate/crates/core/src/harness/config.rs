//! Experiment configuration: per-experiment presets overridden by a flat
//! `key = value` file.

use std::fmt;
use std::fmt::Write as _;
use std::str::FromStr;

use thiserror::Error;

use crate::crypto::CryptoMode;
use crate::netsim::LinkModel;
use crate::protocol::{ManagerFanout, RevocationRouting, RoutingPolicy};
use crate::schemes::RevocationScheme;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ConfigError {
    #[error("line {line}: unknown key `{key}`")]
    UnknownKey { line: usize, key: String },
    #[error("line {line}: expected `key = value`")]
    Syntax { line: usize },
    #[error("line {line}: key `{key}` given twice")]
    Duplicate { line: usize, key: String },
    #[error("`{key}`: {reason}")]
    Value { key: String, reason: String },
    #[error("invalid configuration: {0}")]
    Invalid(String),
}

fn bad(key: &str, reason: impl fmt::Display) -> ConfigError {
    ConfigError::Value {
        key: key.to_string(),
        reason: reason.to_string(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Experiment {
    E1,
    E2,
    E3,
    E4,
    E5,
    E6,
    Custom,
}

impl Experiment {
    pub const SUITE: [Experiment; 6] = [
        Experiment::E1,
        Experiment::E2,
        Experiment::E3,
        Experiment::E4,
        Experiment::E5,
        Experiment::E6,
    ];

    /// Name of the swept parameter.
    pub fn axis(&self) -> &'static str {
        match self {
            Experiment::E1 => "v_kmh",
            Experiment::E2 | Experiment::E5 | Experiment::Custom => "vehicles",
            Experiment::E3 => "area_km2",
            Experiment::E4 => "delay_ms",
            Experiment::E6 => "managers",
        }
    }
}

impl fmt::Display for Experiment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Experiment::E1 => "E1",
            Experiment::E2 => "E2",
            Experiment::E3 => "E3",
            Experiment::E4 => "E4",
            Experiment::E5 => "E5",
            Experiment::E6 => "E6",
            Experiment::Custom => "custom",
        };
        f.write_str(s)
    }
}

impl FromStr for Experiment {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_uppercase().as_str() {
            "E1" => Ok(Experiment::E1),
            "E2" => Ok(Experiment::E2),
            "E3" => Ok(Experiment::E3),
            "E4" => Ok(Experiment::E4),
            "E5" => Ok(Experiment::E5),
            "E6" => Ok(Experiment::E6),
            "CUSTOM" => Ok(Experiment::Custom),
            _ => Err(format!("unknown experiment `{s}`")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum MobilityModel {
    Manhattan,
    Highway,
}

impl fmt::Display for MobilityModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            MobilityModel::Manhattan => "manhattan",
            MobilityModel::Highway => "highway",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelSelection {
    Manhattan,
    Highway,
    Both,
}

impl ModelSelection {
    pub fn models(&self) -> Vec<MobilityModel> {
        match self {
            ModelSelection::Manhattan => vec![MobilityModel::Manhattan],
            ModelSelection::Highway => vec![MobilityModel::Highway],
            ModelSelection::Both => vec![MobilityModel::Manhattan, MobilityModel::Highway],
        }
    }
}

impl fmt::Display for ModelSelection {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ModelSelection::Manhattan => "manhattan",
            ModelSelection::Highway => "highway",
            ModelSelection::Both => "both",
        })
    }
}

impl FromStr for ModelSelection {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "manhattan" => Ok(ModelSelection::Manhattan),
            "highway" => Ok(ModelSelection::Highway),
            "both" => Ok(ModelSelection::Both),
            _ => Err(format!("unknown model `{s}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub experiment: Experiment,
    pub model: ModelSelection,
    pub area_km2: f64,
    pub vehicles: usize,
    /// Total RSU count for analytic experiments. Simulated runs derive it
    /// from the area and the spacing.
    pub rsus: Option<usize>,
    pub rsu_spacing: f64,
    pub managers: usize,
    pub cert_lifetime: f64,
    /// Speed used by the analytic model. Defaults to the model's top speed.
    pub speed_kmh: Option<f64>,
    pub highway_cert_lifetime: Option<f64>,
    pub highway_rsu_spacing: Option<f64>,
    /// km/h, min then max.
    pub manhattan_speed_range: (f64, f64),
    pub highway_speed_range: (f64, f64),
    pub grid_block: f64,
    pub turn_probability: f64,
    pub t_ca: f64,
    pub t_man: f64,
    pub t_rsu: f64,
    pub tp_ca: f64,
    pub tp_man: f64,
    pub tp_rsu: f64,
    pub tp_vehicle: f64,
    pub radio_latency: f64,
    pub radio_range: f64,
    pub loss_rate: f64,
    /// Values of the experiment's swept parameter.
    pub sweep: Vec<f64>,
    pub schemes: Vec<RevocationScheme>,
    pub replications: usize,
    pub seed: u64,
    /// Simulated seconds. Defaults to the revocation delay plus 60 s.
    pub duration: Option<f64>,
    /// Seconds from the target's certificate issue to its revocation.
    /// Defaults to half the lifetime.
    pub revoke_delay: Option<f64>,
    pub manager_fanout: ManagerFanout,
    pub routing: RevocationRouting,
    pub crypto: CryptoMode,
}

pub const KEYS: [&str; 34] = [
    "experiment",
    "model",
    "area_km2",
    "vehicles",
    "rsus",
    "rsu_spacing",
    "managers",
    "cert_lifetime",
    "speed_kmh",
    "highway_cert_lifetime",
    "highway_rsu_spacing",
    "manhattan_speed_range",
    "highway_speed_range",
    "grid_block",
    "turn_probability",
    "t_ca",
    "t_man",
    "t_rsu",
    "tp_ca",
    "tp_man",
    "tp_rsu",
    "tp_vehicle",
    "radio_latency",
    "radio_range",
    "loss_rate",
    "sweep",
    "schemes",
    "replications",
    "seed",
    "duration",
    "revoke_delay",
    "manager_fanout",
    "routing",
    "crypto",
];

impl ExperimentConfig {
    pub fn preset(experiment: Experiment) -> Self {
        let link = LinkModel::default();
        let mut cfg = ExperimentConfig {
            experiment,
            model: ModelSelection::Both,
            area_km2: 25.0,
            vehicles: 30,
            rsus: None,
            rsu_spacing: 500.0,
            managers: 4,
            cert_lifetime: 300.0,
            speed_kmh: None,
            highway_cert_lifetime: None,
            highway_rsu_spacing: None,
            manhattan_speed_range: (30.0, 60.0),
            highway_speed_range: (80.0, 120.0),
            grid_block: 250.0,
            turn_probability: 0.5,
            t_ca: link.t_ca,
            t_man: link.t_man,
            t_rsu: link.t_rsu,
            tp_ca: link.tp_ca,
            tp_man: link.tp_man,
            tp_rsu: link.tp_rsu,
            tp_vehicle: link.tp_vehicle,
            radio_latency: link.radio_latency,
            radio_range: link.radio_range,
            loss_rate: link.loss_rate,
            sweep: vec![30.0],
            schemes: RevocationScheme::ALL.to_vec(),
            replications: 10,
            seed: 1,
            duration: None,
            revoke_delay: None,
            manager_fanout: ManagerFanout::Chain,
            routing: RevocationRouting::FanOut,
            crypto: CryptoMode::Mock,
        };
        match experiment {
            Experiment::E1 => {
                cfg.rsus = Some(1000);
                cfg.highway_cert_lifetime = Some(900.0);
                cfg.highway_rsu_spacing = Some(1500.0);
                cfg.sweep = vec![20.0, 40.0, 60.0, 80.0, 100.0, 120.0, 150.0, 200.0, 250.0, 300.0];
            }
            Experiment::E2 | Experiment::E5 => cfg.sweep = vec![10.0, 20.0, 30.0, 50.0, 100.0],
            Experiment::E3 => cfg.sweep = vec![1.0, 4.0, 9.0, 16.0, 25.0],
            Experiment::E4 => cfg.sweep = vec![50.0, 100.0, 150.0, 200.0, 250.0, 300.0],
            Experiment::E6 => {
                cfg.model = ModelSelection::Manhattan;
                cfg.area_km2 = 4.0;
                cfg.cert_lifetime = 100.0;
                cfg.duration = Some(100.0);
                cfg.manager_fanout = ManagerFanout::Domain;
                cfg.sweep = vec![1.0, 2.0, 4.0, 8.0, 16.0];
            }
            Experiment::Custom => {}
        }
        cfg
    }

    pub fn link(&self) -> LinkModel {
        LinkModel {
            t_ca: self.t_ca,
            t_man: self.t_man,
            t_rsu: self.t_rsu,
            tp_ca: self.tp_ca,
            tp_man: self.tp_man,
            tp_rsu: self.tp_rsu,
            tp_vehicle: self.tp_vehicle,
            radio_latency: self.radio_latency,
            radio_range: self.radio_range,
            loss_rate: self.loss_rate,
            recursive_handover: false,
        }
    }

    pub fn policy(&self) -> RoutingPolicy {
        RoutingPolicy {
            fanout: self.manager_fanout,
            routing: self.routing,
        }
    }

    pub fn lifetime_for(&self, model: MobilityModel) -> f64 {
        match model {
            MobilityModel::Highway => self.highway_cert_lifetime.unwrap_or(self.cert_lifetime),
            MobilityModel::Manhattan => self.cert_lifetime,
        }
    }

    pub fn spacing_for(&self, model: MobilityModel) -> f64 {
        match model {
            MobilityModel::Highway => self.highway_rsu_spacing.unwrap_or(self.rsu_spacing),
            MobilityModel::Manhattan => self.rsu_spacing,
        }
    }

    pub fn speed_range(&self, model: MobilityModel) -> (f64, f64) {
        match model {
            MobilityModel::Manhattan => self.manhattan_speed_range,
            MobilityModel::Highway => self.highway_speed_range,
        }
    }

    pub fn analytic_speed(&self, model: MobilityModel) -> f64 {
        self.speed_kmh.unwrap_or(self.speed_range(model).1)
    }

    pub fn revoke_delay_for(&self, model: MobilityModel) -> f64 {
        self.revoke_delay.unwrap_or(self.lifetime_for(model) / 2.0)
    }

    pub fn duration_for(&self, model: MobilityModel) -> f64 {
        self.duration.unwrap_or(self.revoke_delay_for(model) + 60.0)
    }

    pub fn is_analytic(&self) -> bool {
        self.experiment == Experiment::E1
    }

    /// Reads `key = value` lines over this configuration. `#` starts a
    /// comment.
    pub fn apply_text(&mut self, text: &str) -> Result<(), ConfigError> {
        let mut seen = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or(ConfigError::Syntax { line: i + 1 })?;
            let (key, value) = (key.trim(), value.trim());
            if !KEYS.contains(&key) {
                return Err(ConfigError::UnknownKey {
                    line: i + 1,
                    key: key.to_string(),
                });
            }
            if seen.contains(&key) {
                return Err(ConfigError::Duplicate {
                    line: i + 1,
                    key: key.to_string(),
                });
            }
            seen.push(key);
            self.set(key, value)?;
        }
        Ok(())
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        fn num<T: FromStr>(key: &str, v: &str) -> Result<T, ConfigError>
        where
            T::Err: fmt::Display,
        {
            v.parse().map_err(|e| bad(key, e))
        }
        fn opt<T: FromStr>(key: &str, v: &str) -> Result<Option<T>, ConfigError>
        where
            T::Err: fmt::Display,
        {
            match v {
                "" | "auto" => Ok(None),
                _ => num(key, v).map(Some),
            }
        }
        fn list<T: FromStr>(key: &str, v: &str) -> Result<Vec<T>, ConfigError>
        where
            T::Err: fmt::Display,
        {
            v.split(',').map(|x| num(key, x.trim())).collect()
        }
        fn pair(key: &str, v: &str) -> Result<(f64, f64), ConfigError> {
            match list::<f64>(key, v)?.as_slice() {
                [a, b] => Ok((*a, *b)),
                _ => Err(bad(key, "expected `min,max`")),
            }
        }
        match key {
            "experiment" => self.experiment = num(key, value)?,
            "model" => self.model = num(key, value)?,
            "area_km2" => self.area_km2 = num(key, value)?,
            "vehicles" => self.vehicles = num(key, value)?,
            "rsus" => self.rsus = opt(key, value)?,
            "rsu_spacing" => self.rsu_spacing = num(key, value)?,
            "managers" => self.managers = num(key, value)?,
            "cert_lifetime" => self.cert_lifetime = num(key, value)?,
            "speed_kmh" => self.speed_kmh = opt(key, value)?,
            "highway_cert_lifetime" => self.highway_cert_lifetime = opt(key, value)?,
            "highway_rsu_spacing" => self.highway_rsu_spacing = opt(key, value)?,
            "manhattan_speed_range" => self.manhattan_speed_range = pair(key, value)?,
            "highway_speed_range" => self.highway_speed_range = pair(key, value)?,
            "grid_block" => self.grid_block = num(key, value)?,
            "turn_probability" => self.turn_probability = num(key, value)?,
            "t_ca" => self.t_ca = num(key, value)?,
            "t_man" => self.t_man = num(key, value)?,
            "t_rsu" => self.t_rsu = num(key, value)?,
            "tp_ca" => self.tp_ca = num(key, value)?,
            "tp_man" => self.tp_man = num(key, value)?,
            "tp_rsu" => self.tp_rsu = num(key, value)?,
            "tp_vehicle" => self.tp_vehicle = num(key, value)?,
            "radio_latency" => self.radio_latency = num(key, value)?,
            "radio_range" => self.radio_range = num(key, value)?,
            "loss_rate" => self.loss_rate = num(key, value)?,
            "sweep" => self.sweep = list(key, value)?,
            "schemes" => self.schemes = list(key, value)?,
            "replications" => self.replications = num(key, value)?,
            "seed" => self.seed = num(key, value)?,
            "duration" => self.duration = opt(key, value)?,
            "revoke_delay" => self.revoke_delay = opt(key, value)?,
            "manager_fanout" => {
                self.manager_fanout = match value.to_ascii_lowercase().as_str() {
                    "chain" => ManagerFanout::Chain,
                    "domain" => ManagerFanout::Domain,
                    _ => return Err(bad(key, "expected chain or domain")),
                }
            }
            "routing" => {
                self.routing = match value.to_ascii_lowercase().as_str() {
                    "fanout" => RevocationRouting::FanOut,
                    "sequential" => RevocationRouting::Sequential,
                    _ => return Err(bad(key, "expected fanout or sequential")),
                }
            }
            "crypto" => self.crypto = num(key, value)?,
            _ => {
                return Err(ConfigError::UnknownKey {
                    line: 0,
                    key: key.to_string(),
                })
            }
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let invalid = |m: String| Err(ConfigError::Invalid(m));
        if self.replications == 0 {
            return invalid("replications must be at least 1".into());
        }
        if self.sweep.is_empty() {
            return invalid("sweep is empty".into());
        }
        if self.schemes.is_empty() {
            return invalid("no scheme selected".into());
        }
        let positive = [
            ("area_km2", self.area_km2),
            ("rsu_spacing", self.rsu_spacing),
            ("cert_lifetime", self.cert_lifetime),
            ("grid_block", self.grid_block),
            ("highway_cert_lifetime", self.highway_cert_lifetime.unwrap_or(1.0)),
            ("highway_rsu_spacing", self.highway_rsu_spacing.unwrap_or(1.0)),
            ("duration", self.duration.unwrap_or(1.0)),
        ];
        for (k, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return invalid(format!("{k} must be positive, got {v}"));
            }
        }
        if self.vehicles == 0 || self.managers == 0 || self.rsus == Some(0) {
            return invalid("vehicles, managers and rsus must be positive".into());
        }
        for (k, (lo, hi)) in [
            ("manhattan_speed_range", self.manhattan_speed_range),
            ("highway_speed_range", self.highway_speed_range),
        ] {
            if !(lo > 0.0 && hi >= lo && hi.is_finite()) {
                return invalid(format!("{k} must satisfy 0 < min <= max"));
            }
        }
        if !(0.0..=1.0).contains(&self.turn_probability) {
            return invalid("turn_probability must lie in [0, 1]".into());
        }
        if self.revoke_delay.is_some_and(|d| !(d >= 0.0)) {
            return invalid("revoke_delay must be >= 0".into());
        }
        self.link()
            .validate()
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        if self.sweep.iter().any(|x| !(*x >= 0.0 && x.is_finite())) {
            return invalid("sweep values must be finite and >= 0".into());
        }
        let integral = matches!(
            self.experiment,
            Experiment::E2 | Experiment::E5 | Experiment::E6 | Experiment::Custom
        );
        if integral && self.sweep.iter().any(|x| x.fract() != 0.0 || *x < 1.0) {
            return invalid(format!("{} values must be positive integers", self.experiment.axis()));
        }
        Ok(())
    }

    /// One `key=value` line per field, in `KEYS` order.
    pub fn to_key_values(&self) -> String {
        fn o<T: fmt::Display>(v: &Option<T>) -> String {
            v.as_ref().map_or("auto".to_string(), |x| x.to_string())
        }
        fn l<T: fmt::Display>(v: &[T]) -> String {
            v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",")
        }
        let mut out = String::new();
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(out, "{k}={v}");
        };
        kv("experiment", self.experiment.to_string());
        kv("model", self.model.to_string());
        kv("area_km2", self.area_km2.to_string());
        kv("vehicles", self.vehicles.to_string());
        kv("rsus", o(&self.rsus));
        kv("rsu_spacing", self.rsu_spacing.to_string());
        kv("managers", self.managers.to_string());
        kv("cert_lifetime", self.cert_lifetime.to_string());
        kv("speed_kmh", o(&self.speed_kmh));
        kv("highway_cert_lifetime", o(&self.highway_cert_lifetime));
        kv("highway_rsu_spacing", o(&self.highway_rsu_spacing));
        kv(
            "manhattan_speed_range",
            format!("{},{}", self.manhattan_speed_range.0, self.manhattan_speed_range.1),
        );
        kv(
            "highway_speed_range",
            format!("{},{}", self.highway_speed_range.0, self.highway_speed_range.1),
        );
        kv("grid_block", self.grid_block.to_string());
        kv("turn_probability", self.turn_probability.to_string());
        kv("t_ca", self.t_ca.to_string());
        kv("t_man", self.t_man.to_string());
        kv("t_rsu", self.t_rsu.to_string());
        kv("tp_ca", self.tp_ca.to_string());
        kv("tp_man", self.tp_man.to_string());
        kv("tp_rsu", self.tp_rsu.to_string());
        kv("tp_vehicle", self.tp_vehicle.to_string());
        kv("radio_latency", self.radio_latency.to_string());
        kv("radio_range", self.radio_range.to_string());
        kv("loss_rate", self.loss_rate.to_string());
        kv("sweep", l(&self.sweep));
        kv("schemes", l(&self.schemes));
        kv("replications", self.replications.to_string());
        kv("seed", self.seed.to_string());
        kv("duration", o(&self.duration));
        kv("revoke_delay", o(&self.revoke_delay));
        kv(
            "manager_fanout",
            match self.manager_fanout {
                ManagerFanout::Chain => "chain",
                ManagerFanout::Domain => "domain",
            }
            .into(),
        );
        kv(
            "routing",
            match self.routing {
                RevocationRouting::FanOut => "fanout",
                RevocationRouting::Sequential => "sequential",
            }
            .into(),
        );
        kv("crypto", format!("{:?}", self.crypto).to_ascii_lowercase());
        out
    }
}
