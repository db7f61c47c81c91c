//! Flat key=value run configuration with `[section]` headers. Every key is
//! optional with a documented default; unknown sections or keys are
//! rejected so typos fail loudly. The resolved configuration serializes
//! back to the same format for run manifests.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::str::FromStr;
use thiserror::Error;

use crate::gait::{CurveParams, GaitMode};
use crate::ppo::PpoConfig;
use crate::reward::RewardMode;
use crate::env::{DomainRandomization, EnvConfig};
use crate::encoder::EncoderConfig;
use crate::model::BackboneKind;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("line {0}: expected `key = value`")]
    BadLine(usize),
    #[error("line {0}: unterminated section header")]
    BadSection(usize),
    #[error("unknown section `{0}`")]
    UnknownSection(String),
    #[error("unknown key `{0}` in section `{1}`")]
    UnknownKey(String, String),
    #[error("key `{key}`: cannot parse `{value}` as {ty}")]
    BadValue {
        key: String,
        value: String,
        ty: &'static str,
    },
    #[error("invalid configuration: {0}")]
    Invalid(String),
}

/// Raw parsed sections, in file order within each section.
pub type Sections = BTreeMap<String, Vec<(String, String)>>;

/// Parses the `[section]` / `key = value` format. `#` and `;` start
/// comments; blank lines are skipped; keys before any header belong to the
/// `run` section.
pub fn parse_sections(text: &str) -> Result<Sections, ConfigError> {
    let mut sections: Sections = BTreeMap::new();
    let mut current = "run".to_string();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split(['#', ';']).next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        if let Some(rest) = line.strip_prefix('[') {
            let name = rest
                .strip_suffix(']')
                .ok_or(ConfigError::BadSection(i + 1))?
                .trim();
            current = name.to_string();
            sections.entry(current.clone()).or_default();
            continue;
        }
        let (key, value) = line.split_once('=').ok_or(ConfigError::BadLine(i + 1))?;
        sections
            .entry(current.clone())
            .or_default()
            .push((key.trim().to_string(), value.trim().to_string()));
    }
    Ok(sections)
}

fn parse_as<T: FromStr>(key: &str, value: &str, ty: &'static str) -> Result<T, ConfigError> {
    value.parse().map_err(|_| ConfigError::BadValue {
        key: key.to_string(),
        value: value.to_string(),
        ty,
    })
}

/// Pulls typed values out of one section, rejecting keys it does not know.
struct SectionReader<'a> {
    name: &'a str,
    entries: Vec<(String, String)>,
    seen: Vec<String>,
}

impl<'a> SectionReader<'a> {
    fn new(sections: &Sections, name: &'a str) -> Self {
        SectionReader {
            name,
            entries: sections.get(name).cloned().unwrap_or_default(),
            seen: Vec::new(),
        }
    }

    fn take(&mut self, key: &str) -> Option<String> {
        self.seen.push(key.to_string());
        // last assignment wins, like a manual override appended to a file
        self.entries
            .iter()
            .rev()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.clone())
    }

    fn get<T: FromStr>(&mut self, key: &str, ty: &'static str, default: T) -> Result<T, ConfigError> {
        match self.take(key) {
            Some(v) => parse_as(key, &v, ty),
            None => Ok(default),
        }
    }

    fn finish(self) -> Result<(), ConfigError> {
        for (k, _) in &self.entries {
            if !self.seen.contains(k) {
                return Err(ConfigError::UnknownKey(k.clone(), self.name.to_string()));
            }
        }
        Ok(())
    }
}

/// Everything a training or evaluation run needs.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub task: GaitMode,
    pub backbone: BackboneKind,
    pub seeds: usize,
    pub seed_base: u64,
    pub output_dir: String,
    pub checkpoint_every: usize,
    pub ppo: PpoConfig,
    pub encoder: EncoderConfig,
    pub env: EnvConfig,
    /// Replaces the physics environment with the constant-reward stub.
    pub stub_env: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            task: GaitMode::Standing,
            backbone: BackboneKind::Gated,
            seeds: 1,
            seed_base: 0,
            output_dir: "run".to_string(),
            checkpoint_every: 50,
            ppo: PpoConfig::default(),
            encoder: EncoderConfig::default(),
            env: EnvConfig::default(),
            stub_env: false,
        }
    }
}

impl RunConfig {
    pub fn from_text(text: &str) -> Result<Self, ConfigError> {
        let sections = parse_sections(text)?;
        for name in sections.keys() {
            if !["run", "ppo", "encoder", "env"].contains(&name.as_str()) {
                return Err(ConfigError::UnknownSection(name.clone()));
            }
        }
        let defaults = RunConfig::default();

        let mut run = SectionReader::new(&sections, "run");
        let task = match run.take("task") {
            Some(v) => v
                .parse::<GaitMode>()
                .map_err(|_| ConfigError::BadValue {
                    key: "task".into(),
                    value: v,
                    ty: "gait mode",
                })?,
            None => defaults.task,
        };
        let backbone = match run.take("backbone") {
            Some(v) => match v.as_str() {
                "gated" => BackboneKind::Gated,
                "feedforward" => BackboneKind::Feedforward,
                _ => {
                    return Err(ConfigError::BadValue {
                        key: "backbone".into(),
                        value: v,
                        ty: "gated|feedforward",
                    })
                }
            },
            None => defaults.backbone,
        };
        let seeds = run.get("seeds", "integer", defaults.seeds)?;
        let seed_base = run.get("seed_base", "integer", defaults.seed_base)?;
        let output_dir = run.take("output_dir").unwrap_or(defaults.output_dir);
        let checkpoint_every = run.get("checkpoint_every", "integer", defaults.checkpoint_every)?;
        let stub_env = run.get("stub_env", "bool", defaults.stub_env)?;
        run.finish()?;

        let mut ppo = SectionReader::new(&sections, "ppo");
        let d = defaults.ppo;
        let ppo_cfg = PpoConfig {
            horizon: ppo.get("horizon", "integer", d.horizon)?,
            samples_per_iteration: ppo.get("samples_per_iteration", "integer", d.samples_per_iteration)?,
            minibatch_size: ppo.get("minibatch_size", "integer", d.minibatch_size)?,
            epochs: ppo.get("epochs", "integer", d.epochs)?,
            gamma: ppo.get("gamma", "number", d.gamma)?,
            lambda: ppo.get("lambda", "number", d.lambda)?,
            clip_epsilon: ppo.get("clip_epsilon", "number", d.clip_epsilon)?,
            entropy_coef: ppo.get("entropy_coef", "number", d.entropy_coef)?,
            value_coef: ppo.get("value_coef", "number", d.value_coef)?,
            learning_rate: ppo.get("learning_rate", "number", d.learning_rate)?,
            grad_clip_norm: ppo.get("grad_clip_norm", "number", d.grad_clip_norm)?,
            iterations: ppo.get("iterations", "integer", d.iterations)?,
        };
        ppo.finish()?;
        ppo_cfg.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;

        let mut enc = SectionReader::new(&sections, "encoder");
        let e = defaults.encoder;
        let encoder = EncoderConfig {
            robot_dim: enc.get("robot_dim", "integer", e.robot_dim)?,
            ext_dim: enc.get("ext_dim", "integer", e.ext_dim)?,
            token_dim: enc.get("token_dim", "integer", e.token_dim)?,
            hidden_dim: enc.get("hidden_dim", "integer", e.hidden_dim)?,
        };
        enc.finish()?;
        if encoder.token_dim == 0 || encoder.hidden_dim == 0 {
            return Err(ConfigError::Invalid("encoder dims must be >= 1".into()));
        }

        let mut env = SectionReader::new(&sections, "env");
        let v = defaults.env;
        if let Some(mode) = env.take("mode") {
            if mode != "planar" {
                return Err(ConfigError::BadValue {
                    key: "mode".into(),
                    value: mode,
                    ty: "planar",
                });
            }
        }
        let dr = v.randomization;
        let env_cfg = EnvConfig {
            plan_mode: task,
            plan_steps: env.get("plan_steps", "integer", v.plan_steps)?,
            step_length: env.get("step_length", "number", v.step_length)?,
            foot_spread: env.get("foot_spread", "number", v.foot_spread)?,
            curve: {
                let gx = env.get("curve_goal_x", "number", 2.0)?;
                let gy = env.get("curve_goal_y", "number", 1.0)?;
                let gh = env.get("curve_goal_heading", "number", std::f64::consts::FRAC_PI_2)?;
                if task == GaitMode::Curved {
                    Some(CurveParams {
                        goal_x: gx,
                        goal_y: gy,
                        goal_heading: gh,
                    })
                } else {
                    None
                }
            },
            horizon: env.get("horizon", "integer", v.horizon)?,
            cycle_length: env.get("cycle_length", "integer", v.cycle_length)?,
            single_support_steps: env.get("single_support_steps", "integer", v.single_support_steps)?,
            substeps: env.get("substeps", "integer", v.substeps)?,
            substep_dt: env.get("substep_dt", "number", v.substep_dt)?,
            score_radius: env.get("score_radius", "number", v.score_radius)?,
            fall_height_ratio: env.get("fall_height_ratio", "number", v.fall_height_ratio)?,
            reward_weights: v.reward_weights,
            reward_mode: match env.take("reward_mode") {
                None => v.reward_mode,
                Some(m) if m == "bounded" => RewardMode::default(),
                Some(m) if m == "raw" => RewardMode::Raw,
                Some(m) => {
                    return Err(ConfigError::BadValue {
                        key: "reward_mode".into(),
                        value: m,
                        ty: "bounded|raw",
                    })
                }
            },
            randomization: DomainRandomization {
                mass_range: env.get("mass_range", "number", dr.mass_range)?,
                gain_range: env.get("gain_range", "number", dr.gain_range)?,
                obs_noise_std: env.get("obs_noise_std", "number", dr.obs_noise_std)?,
                init_noise_std: env.get("init_noise_std", "number", dr.init_noise_std)?,
                target_jitter: env.get("target_jitter", "number", dr.target_jitter)?,
            },
            obs_dim: env.get("obs_dim", "integer", v.obs_dim)?,
            zero_gravity: false,
        };
        env.finish()?;

        let cfg = RunConfig {
            task,
            backbone,
            seeds,
            seed_base,
            output_dir,
            checkpoint_every,
            ppo: ppo_cfg,
            encoder,
            env: env_cfg,
            stub_env,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.seeds == 0 {
            return Err(ConfigError::Invalid("seeds must be >= 1".into()));
        }
        if self.checkpoint_every == 0 {
            return Err(ConfigError::Invalid("checkpoint_every must be >= 1".into()));
        }
        if self.encoder.obs_dim() != self.env.obs_dim {
            return Err(ConfigError::Invalid(format!(
                "encoder expects {} observation entries but the environment emits {}",
                self.encoder.obs_dim(),
                self.env.obs_dim
            )));
        }
        Ok(())
    }

    /// Serializes the resolved configuration back into the file format;
    /// round-trips through `from_text`.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "[run]");
        let _ = writeln!(s, "task = {}", self.task);
        let _ = writeln!(
            s,
            "backbone = {}",
            match self.backbone {
                BackboneKind::Gated => "gated",
                BackboneKind::Feedforward => "feedforward",
            }
        );
        let _ = writeln!(s, "seeds = {}", self.seeds);
        let _ = writeln!(s, "seed_base = {}", self.seed_base);
        let _ = writeln!(s, "output_dir = {}", self.output_dir);
        let _ = writeln!(s, "checkpoint_every = {}", self.checkpoint_every);
        let _ = writeln!(s, "stub_env = {}", self.stub_env);
        let p = &self.ppo;
        let _ = writeln!(s, "\n[ppo]");
        let _ = writeln!(s, "horizon = {}", p.horizon);
        let _ = writeln!(s, "samples_per_iteration = {}", p.samples_per_iteration);
        let _ = writeln!(s, "minibatch_size = {}", p.minibatch_size);
        let _ = writeln!(s, "epochs = {}", p.epochs);
        let _ = writeln!(s, "gamma = {}", p.gamma);
        let _ = writeln!(s, "lambda = {}", p.lambda);
        let _ = writeln!(s, "clip_epsilon = {}", p.clip_epsilon);
        let _ = writeln!(s, "entropy_coef = {}", p.entropy_coef);
        let _ = writeln!(s, "value_coef = {}", p.value_coef);
        let _ = writeln!(s, "learning_rate = {}", p.learning_rate);
        let _ = writeln!(s, "grad_clip_norm = {}", p.grad_clip_norm);
        let _ = writeln!(s, "iterations = {}", p.iterations);
        let e = &self.encoder;
        let _ = writeln!(s, "\n[encoder]");
        let _ = writeln!(s, "robot_dim = {}", e.robot_dim);
        let _ = writeln!(s, "ext_dim = {}", e.ext_dim);
        let _ = writeln!(s, "token_dim = {}", e.token_dim);
        let _ = writeln!(s, "hidden_dim = {}", e.hidden_dim);
        let v = &self.env;
        let _ = writeln!(s, "\n[env]");
        let _ = writeln!(s, "mode = planar");
        let _ = writeln!(s, "plan_steps = {}", v.plan_steps);
        let _ = writeln!(s, "step_length = {}", v.step_length);
        let _ = writeln!(s, "foot_spread = {}", v.foot_spread);
        if let Some(c) = v.curve {
            let _ = writeln!(s, "curve_goal_x = {}", c.goal_x);
            let _ = writeln!(s, "curve_goal_y = {}", c.goal_y);
            let _ = writeln!(s, "curve_goal_heading = {}", c.goal_heading);
        }
        let _ = writeln!(s, "horizon = {}", v.horizon);
        let _ = writeln!(s, "cycle_length = {}", v.cycle_length);
        let _ = writeln!(s, "single_support_steps = {}", v.single_support_steps);
        let _ = writeln!(s, "substeps = {}", v.substeps);
        let _ = writeln!(s, "substep_dt = {}", v.substep_dt);
        let _ = writeln!(s, "score_radius = {}", v.score_radius);
        let _ = writeln!(s, "fall_height_ratio = {}", v.fall_height_ratio);
        let _ = writeln!(
            s,
            "reward_mode = {}",
            match v.reward_mode {
                RewardMode::Bounded { .. } => "bounded",
                RewardMode::Raw => "raw",
            }
        );
        let dr = &v.randomization;
        let _ = writeln!(s, "mass_range = {}", dr.mass_range);
        let _ = writeln!(s, "gain_range = {}", dr.gain_range);
        let _ = writeln!(s, "obs_noise_std = {}", dr.obs_noise_std);
        let _ = writeln!(s, "init_noise_std = {}", dr.init_noise_std);
        let _ = writeln!(s, "target_jitter = {}", dr.target_jitter);
        let _ = writeln!(s, "obs_dim = {}", v.obs_dim);
        s
    }
}
