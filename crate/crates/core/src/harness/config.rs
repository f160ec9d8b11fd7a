//! Flat `key = value` experiment configuration.
//!
//! One assignment per line; `#` starts a comment; blank lines are ignored.
//! Vectors are comma-separated. Unknown keys and duplicate keys are errors.
//! [`KEYS`] lists every key with its unit and meaning; [`ExperimentConfig::to_text`]
//! writes a complete file with the current values.

use std::collections::HashSet;
use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use crate::agent::{ActionScale, AgentConfig};
use crate::geometry::{Point, Region, ScenarioLayout};
use crate::phy::{dbm_to_watts, LayoutKind, TxConfig};
use crate::recovery::BetaEstimator;
use crate::{Error, Result};

/// Experiment arms.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Arm {
    /// Agent fed by recovered partial observations, rewarded by the estimated rate.
    Aris,
    /// Agent fed by noise-free full observations, rewarded by the true rate.
    ArisRef1,
    /// Agent fed by noise-free full observations, rewarded by the estimated rate.
    ArisRef2,
    /// i.i.d. uniform phases every step, no agent.
    Random,
}

impl Arm {
    pub const ALL: [Arm; 4] = [Arm::Aris, Arm::ArisRef1, Arm::ArisRef2, Arm::Random];

    pub fn name(self) -> &'static str {
        match self {
            Arm::Aris => "aris",
            Arm::ArisRef1 => "aris_ref1",
            Arm::ArisRef2 => "aris_ref2",
            Arm::Random => "random",
        }
    }

    /// Stream index used when splitting the run RNG (the geometry uses stream 0).
    pub fn stream(self) -> u64 {
        match self {
            Arm::Aris => 1,
            Arm::ArisRef1 => 2,
            Arm::ArisRef2 => 3,
            Arm::Random => 4,
        }
    }
}

impl fmt::Display for Arm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Arm {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Arm::ALL
            .into_iter()
            .find(|a| a.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown arm `{s}` (expected aris, aris_ref1, aris_ref2 or random)")))
    }
}

/// Everything one run needs.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub layout: ScenarioLayout,
    pub p_bs_dbm: f64,
    pub p_ue_dbm: f64,
    pub noise_dbm: f64,
    pub sensing: LayoutKind,
    pub grid_hor: usize,
    pub grid_ver: usize,
    pub beta_estimator: BetaEstimator,
    pub bs_paths: usize,
    pub ue_paths: usize,
    pub agent: AgentConfig,
    pub arm: Arm,
    pub steps: usize,
    pub snapshot_window: usize,
    pub step_period: f64,
    pub seed: u64,
    pub output: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let layout = ScenarioLayout::default();
        let paths = layout.clusters_per_link + 1;
        Self {
            layout,
            p_bs_dbm: 30.0,
            p_ue_dbm: 10.0,
            noise_dbm: 10.0 * crate::phy::thermal_noise_watts(20e6).log10() + 30.0,
            sensing: LayoutKind::FirstRowAndColumn,
            grid_hor: 64,
            grid_ver: 64,
            beta_estimator: BetaEstimator::MatchedFilter,
            bs_paths: paths,
            ue_paths: paths,
            agent: AgentConfig::default(),
            arm: Arm::Aris,
            steps: 500,
            snapshot_window: 32,
            step_period: 0.01,
            seed: 1,
            output: PathBuf::from("run.csv"),
        }
    }
}

/// Every recognized key with its unit and meaning.
pub const KEYS: &[(&str, &str)] = &[
    ("bs_position", "m, x,y,z of the BS array"),
    ("ris_position", "m, x,y,z of the RIS center element"),
    ("num_ues", "count of single-antenna users K"),
    ("ue_area_min", "m, x,y corner of the UE drop area"),
    ("ue_area_size", "m, x,y extent of the UE drop area"),
    ("ue_height", "m, UE antenna height"),
    ("cluster_region_min", "m, x,y,z corner of the scatter-cluster region"),
    ("cluster_region_size", "m, x,y,z extent of the scatter-cluster region"),
    ("clusters_per_link", "count of single-point clusters on every link"),
    ("bs_antennas", "count M of BS antennas (vertical ULA)"),
    ("ris_hor", "count of RIS columns"),
    ("ris_ver", "count of RIS rows"),
    ("speed", "m/s, shared by UEs and clusters; headings are random in the horizontal plane"),
    ("carrier_frequency", "Hz"),
    ("pathloss_exponent", "alpha, applied to every segment length"),
    ("reference_power", "P0, linear; amplitude gain of a path is sqrt(P0) / prod(d^alpha)"),
    ("speed_of_light", "m/s"),
    ("p_bs_dbm", "dBm, BS transmit power"),
    ("p_ue_dbm", "dBm, UE transmit power"),
    ("noise_dbm", "dBm, noise power at UEs and RIS sensors"),
    ("sensing_layout", "first_row_column, or a comma-separated list of element indices"),
    ("grid_hor", "count of azimuth grid points on [0, pi)"),
    ("grid_ver", "count of polar grid points on [0, pi)"),
    ("beta_estimator", "matched_filter or least_squares"),
    ("bs_paths", "count of BS-side paths recovered per window"),
    ("ue_paths", "count of UE-side paths recovered per window"),
    ("gamma", "discount factor in [0, 1)"),
    ("epsilon_start", "initial exploration probability"),
    ("epsilon_decay", "multiplicative decay of epsilon per step"),
    ("epsilon_floor", "lower bound of epsilon"),
    ("replay_capacity", "count of stored transitions"),
    ("batch_size", "transitions per optimizer step"),
    ("train_period", "steps between training cycles"),
    ("passes", "passes over the replay memory per training cycle"),
    ("reward_floor", "rate substituted for a zero previous rate in the reward ratio"),
    ("recompute_q", "true to recompute q and q' with current parameters at training time"),
    ("action_scale", "unitary or unit_modulus scaling of the DFT action columns"),
    ("learning_rate", "optimizer step size"),
    ("adam_beta1", "first-moment decay"),
    ("adam_beta2", "second-moment decay"),
    ("adam_eps", "optimizer denominator guard"),
    ("width_a", "width of the s1 pipeline"),
    ("width_b", "width of the s2 pipeline"),
    ("head_width", "width of the hidden head layer"),
    ("leaky_slope", "negative-side slope of the leaky ReLU"),
    ("dropout", "dropout rate in [0, 1)"),
    ("bn_eps", "batch-norm variance guard"),
    ("bn_momentum", "batch-norm running-statistics momentum"),
    ("arm", "aris, aris_ref1, aris_ref2 or random"),
    ("steps", "count of decision steps"),
    ("snapshot_window", "count T_obs of UL/DL exchanges per step"),
    ("step_period", "s, simulated time per step"),
    ("seed", "unsigned integer"),
    ("output", "path of the CSV written by `run`"),
];

fn parse_num<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .trim()
        .parse()
        .map_err(|_| Error::Config(format!("`{key}`: cannot parse `{value}`")))
}

fn parse_list(key: &str, value: &str, len: usize) -> Result<Vec<f64>> {
    let items: Vec<f64> = value.split(',').map(|v| parse_num(key, v)).collect::<Result<_>>()?;
    if items.len() != len {
        return Err(Error::Config(format!("`{key}` needs {len} comma-separated numbers")));
    }
    Ok(items)
}

fn parse_point(key: &str, value: &str) -> Result<Point> {
    let v = parse_list(key, value, 3)?;
    Ok(Point::new(v[0], v[1], v[2]))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" => Ok(true),
        "false" => Ok(false),
        _ => Err(Error::Config(format!("`{key}` must be true or false"))),
    }
}

fn fmt_point(p: &Point) -> String {
    format!("{:?}, {:?}, {:?}", p.x, p.y, p.z)
}

impl ExperimentConfig {
    /// Parses a configuration text on top of the defaults.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        let mut seen = HashSet::new();
        let mut paths_given = (false, false);
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected `key = value`", lineno + 1)))?;
            let (key, value) = (key.trim(), value.trim());
            if !seen.insert(key.to_string()) {
                return Err(Error::Config(format!("line {}: duplicate key `{key}`", lineno + 1)));
            }
            match key {
                "bs_paths" => paths_given.0 = true,
                "ue_paths" => paths_given.1 = true,
                _ => {}
            }
            cfg.set(key, value).map_err(|e| match e {
                Error::Config(m) => Error::Config(format!("line {}: {m}", lineno + 1)),
                other => other,
            })?;
        }
        // path counts follow the cluster count unless given explicitly
        if !paths_given.0 {
            cfg.bs_paths = cfg.layout.clusters_per_link + 1;
        }
        if !paths_given.1 {
            cfg.ue_paths = cfg.layout.clusters_per_link + 1;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_path(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    /// Assigns one key.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let l = &mut self.layout;
        let a = &mut self.agent;
        match key {
            "bs_position" => l.bs_position = parse_point(key, value)?,
            "ris_position" => l.ris_position = parse_point(key, value)?,
            "num_ues" => l.num_ues = parse_num(key, value)?,
            "ue_area_min" => {
                let v = parse_list(key, value, 2)?;
                l.ue_area.min = Point::new(v[0], v[1], 0.0);
            }
            "ue_area_size" => {
                let v = parse_list(key, value, 2)?;
                l.ue_area.size = Point::new(v[0], v[1], 0.0);
            }
            "ue_height" => l.ue_height = parse_num(key, value)?,
            "cluster_region_min" => l.cluster_region.min = parse_point(key, value)?,
            "cluster_region_size" => l.cluster_region.size = parse_point(key, value)?,
            "clusters_per_link" => l.clusters_per_link = parse_num(key, value)?,
            "bs_antennas" => l.bs_antennas = parse_num(key, value)?,
            "ris_hor" => l.ris_hor = parse_num(key, value)?,
            "ris_ver" => l.ris_ver = parse_num(key, value)?,
            "speed" => l.speed = parse_num(key, value)?,
            "carrier_frequency" => l.rf.carrier_frequency = parse_num(key, value)?,
            "pathloss_exponent" => l.rf.pathloss_exponent = parse_num(key, value)?,
            "reference_power" => l.rf.reference_power = parse_num(key, value)?,
            "speed_of_light" => l.rf.speed_of_light = parse_num(key, value)?,
            "p_bs_dbm" => self.p_bs_dbm = parse_num(key, value)?,
            "p_ue_dbm" => self.p_ue_dbm = parse_num(key, value)?,
            "noise_dbm" => self.noise_dbm = parse_num(key, value)?,
            "sensing_layout" => {
                self.sensing = if value == "first_row_column" {
                    LayoutKind::FirstRowAndColumn
                } else {
                    LayoutKind::Explicit(value.split(',').map(|v| parse_num(key, v)).collect::<Result<_>>()?)
                }
            }
            "grid_hor" => self.grid_hor = parse_num(key, value)?,
            "grid_ver" => self.grid_ver = parse_num(key, value)?,
            "beta_estimator" => {
                self.beta_estimator = match value {
                    "matched_filter" => BetaEstimator::MatchedFilter,
                    "least_squares" => BetaEstimator::LeastSquares,
                    _ => return Err(Error::Config(format!("`{key}` must be matched_filter or least_squares"))),
                }
            }
            "bs_paths" => self.bs_paths = parse_num(key, value)?,
            "ue_paths" => self.ue_paths = parse_num(key, value)?,
            "gamma" => a.gamma = parse_num(key, value)?,
            "epsilon_start" => a.epsilon.start = parse_num(key, value)?,
            "epsilon_decay" => a.epsilon.decay = parse_num(key, value)?,
            "epsilon_floor" => a.epsilon.floor = parse_num(key, value)?,
            "replay_capacity" => a.replay_capacity = parse_num(key, value)?,
            "batch_size" => a.batch_size = parse_num(key, value)?,
            "train_period" => a.train_period = parse_num(key, value)?,
            "passes" => a.passes = parse_num(key, value)?,
            "reward_floor" => a.reward_floor = parse_num(key, value)?,
            "recompute_q" => a.recompute_q = parse_bool(key, value)?,
            "action_scale" => {
                a.action_scale = match value {
                    "unitary" => ActionScale::Unitary,
                    "unit_modulus" => ActionScale::UnitModulus,
                    _ => return Err(Error::Config(format!("`{key}` must be unitary or unit_modulus"))),
                }
            }
            "learning_rate" => a.optimizer.learning_rate = parse_num(key, value)?,
            "adam_beta1" => a.optimizer.beta1 = parse_num(key, value)?,
            "adam_beta2" => a.optimizer.beta2 = parse_num(key, value)?,
            "adam_eps" => a.optimizer.eps = parse_num(key, value)?,
            "width_a" => a.network.width_a = parse_num(key, value)?,
            "width_b" => a.network.width_b = parse_num(key, value)?,
            "head_width" => a.network.head_width = parse_num(key, value)?,
            "leaky_slope" => a.network.leaky_slope = parse_num(key, value)?,
            "dropout" => a.network.dropout = parse_num(key, value)?,
            "bn_eps" => a.network.bn_eps = parse_num(key, value)?,
            "bn_momentum" => a.network.bn_momentum = parse_num(key, value)?,
            "arm" => self.arm = value.parse()?,
            "steps" => self.steps = parse_num(key, value)?,
            "snapshot_window" => self.snapshot_window = parse_num(key, value)?,
            "step_period" => self.step_period = parse_num(key, value)?,
            "seed" => self.seed = parse_num(key, value)?,
            "output" => self.output = PathBuf::from(value),
            _ => return Err(Error::Config(format!("unknown key `{key}`"))),
        }
        Ok(())
    }

    /// Rejects inconsistent settings before any simulation starts.
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        let l = &self.layout;
        if self.steps < 1 || self.snapshot_window < 1 {
            return bad("steps and snapshot_window must be at least 1".into());
        }
        if !(self.step_period > 0.0) {
            return bad("step_period must be positive".into());
        }
        if l.num_ues == 0 || l.bs_antennas == 0 || l.ris_hor == 0 || l.ris_ver == 0 {
            return bad("num_ues, bs_antennas, ris_hor and ris_ver must be positive".into());
        }
        if l.num_ues > l.bs_antennas {
            return bad(format!("{} users exceed {} BS antennas", l.num_ues, l.bs_antennas));
        }
        if !(l.speed >= 0.0) || !l.speed.is_finite() {
            return bad("speed must be finite and non-negative".into());
        }
        if !(l.rf.carrier_frequency > 0.0 && l.rf.reference_power > 0.0 && l.rf.speed_of_light > 0.0) {
            return bad("carrier_frequency, reference_power and speed_of_light must be positive".into());
        }
        if ![self.p_bs_dbm, self.p_ue_dbm, self.noise_dbm].iter().all(|v| v.is_finite()) {
            return bad("powers must be finite".into());
        }
        if self.grid_hor == 0 || self.grid_ver == 0 {
            return bad("grid sizes must be positive".into());
        }
        let n = l.ris_hor * l.ris_ver;
        let sensors = crate::phy::sensing_indices(l.ris_hor, l.ris_ver, &self.sensing).map_err(|e| Error::Config(e.to_string()))?;
        for (name, count) in [("bs_paths", self.bs_paths), ("ue_paths", self.ue_paths)] {
            if count == 0 || count > sensors.len() {
                return bad(format!("{name} = {count} must be in 1..={}", sensors.len()));
            }
        }
        if n == 0 {
            return bad("RIS has no elements".into());
        }
        self.agent.validate().map_err(|e| Error::Config(e.to_string()))?;
        crate::nn::Architecture::with_shape(n * l.num_ues, n, n, &self.agent.network)
            .output_width()
            .map_err(|e| Error::Config(format!("network shape: {e}")))?;
        Ok(())
    }

    pub fn tx(&self) -> TxConfig {
        TxConfig {
            p_bs: dbm_to_watts(self.p_bs_dbm),
            p_ue: dbm_to_watts(self.p_ue_dbm),
            noise_var: dbm_to_watts(self.noise_dbm),
        }
    }

    /// A complete configuration file holding the current values.
    pub fn to_text(&self) -> String {
        let l = &self.layout;
        let a = &self.agent;
        let region2 = |r: &Region| (format!("{:?}, {:?}", r.min.x, r.min.y), format!("{:?}, {:?}", r.size.x, r.size.y));
        let (ue_min, ue_size) = region2(&l.ue_area);
        let sensing = match &self.sensing {
            LayoutKind::FirstRowAndColumn => "first_row_column".to_string(),
            LayoutKind::Explicit(v) => v.iter().map(|i| i.to_string()).collect::<Vec<_>>().join(", "),
        };
        let values: Vec<(&str, String)> = vec![
            ("bs_position", fmt_point(&l.bs_position)),
            ("ris_position", fmt_point(&l.ris_position)),
            ("num_ues", l.num_ues.to_string()),
            ("ue_area_min", ue_min),
            ("ue_area_size", ue_size),
            ("ue_height", format!("{:?}", l.ue_height)),
            ("cluster_region_min", fmt_point(&l.cluster_region.min)),
            ("cluster_region_size", fmt_point(&l.cluster_region.size)),
            ("clusters_per_link", l.clusters_per_link.to_string()),
            ("bs_antennas", l.bs_antennas.to_string()),
            ("ris_hor", l.ris_hor.to_string()),
            ("ris_ver", l.ris_ver.to_string()),
            ("speed", format!("{:?}", l.speed)),
            ("carrier_frequency", format!("{:?}", l.rf.carrier_frequency)),
            ("pathloss_exponent", format!("{:?}", l.rf.pathloss_exponent)),
            ("reference_power", format!("{:?}", l.rf.reference_power)),
            ("speed_of_light", format!("{:?}", l.rf.speed_of_light)),
            ("p_bs_dbm", format!("{:?}", self.p_bs_dbm)),
            ("p_ue_dbm", format!("{:?}", self.p_ue_dbm)),
            ("noise_dbm", format!("{:?}", self.noise_dbm)),
            ("sensing_layout", sensing),
            ("grid_hor", self.grid_hor.to_string()),
            ("grid_ver", self.grid_ver.to_string()),
            (
                "beta_estimator",
                match self.beta_estimator {
                    BetaEstimator::MatchedFilter => "matched_filter",
                    BetaEstimator::LeastSquares => "least_squares",
                }
                .into(),
            ),
            ("bs_paths", self.bs_paths.to_string()),
            ("ue_paths", self.ue_paths.to_string()),
            ("gamma", format!("{:?}", a.gamma)),
            ("epsilon_start", format!("{:?}", a.epsilon.start)),
            ("epsilon_decay", format!("{:?}", a.epsilon.decay)),
            ("epsilon_floor", format!("{:?}", a.epsilon.floor)),
            ("replay_capacity", a.replay_capacity.to_string()),
            ("batch_size", a.batch_size.to_string()),
            ("train_period", a.train_period.to_string()),
            ("passes", a.passes.to_string()),
            ("reward_floor", format!("{:?}", a.reward_floor)),
            ("recompute_q", a.recompute_q.to_string()),
            (
                "action_scale",
                match a.action_scale {
                    ActionScale::Unitary => "unitary",
                    ActionScale::UnitModulus => "unit_modulus",
                }
                .into(),
            ),
            ("learning_rate", format!("{:?}", a.optimizer.learning_rate)),
            ("adam_beta1", format!("{:?}", a.optimizer.beta1)),
            ("adam_beta2", format!("{:?}", a.optimizer.beta2)),
            ("adam_eps", format!("{:?}", a.optimizer.eps)),
            ("width_a", a.network.width_a.to_string()),
            ("width_b", a.network.width_b.to_string()),
            ("head_width", a.network.head_width.to_string()),
            ("leaky_slope", format!("{:?}", a.network.leaky_slope)),
            ("dropout", format!("{:?}", a.network.dropout)),
            ("bn_eps", format!("{:?}", a.network.bn_eps)),
            ("bn_momentum", format!("{:?}", a.network.bn_momentum)),
            ("arm", self.arm.to_string()),
            ("steps", self.steps.to_string()),
            ("snapshot_window", self.snapshot_window.to_string()),
            ("step_period", format!("{:?}", self.step_period)),
            ("seed", self.seed.to_string()),
            ("output", self.output.display().to_string()),
        ];
        let mut out = String::new();
        for (key, value) in values {
            let doc = KEYS.iter().find(|(k, _)| *k == key).map(|(_, d)| *d).unwrap_or("");
            out.push_str(&format!("# {doc}\n{key} = {value}\n"));
        }
        out
    }
}
