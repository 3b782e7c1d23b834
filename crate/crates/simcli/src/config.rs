//! Flat `key = value` configuration with dotted keys, e.g.
//!
//! ```text
//! design = dbcd
//! design.gamma = 2
//! model.theta = 0.7, 0.4
//! n = 2000
//! ```
//!
//! Blank lines and `#` comments are ignored. Unknown or repeated keys are
//! errors.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::str::FromStr;

use clap::ValueEnum;
use rar_core::catalog::{DesignSpec, TargetSpec};
use rar_core::delay::DelayModel;
use rar_core::experiment::Experiment;
use rar_core::models::EstimatorMode;
use rar_core::targets::{BmForm, DEFAULT_FLOOR};
use rar_core::{Family, Theta, WarmStart};

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, ValueEnum)]
pub enum Format {
    #[default]
    Csv,
    Json,
}

impl Format {
    pub fn id(self) -> &'static str {
        match self {
            Format::Csv => "csv",
            Format::Json => "json",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub enum DelaySpec {
    #[default]
    None,
    Exponential { entry_mean: f64, response_means: Vec<f64> },
    Fixed { gap: f64, response_times: Vec<f64> },
}

impl DelaySpec {
    pub fn model(&self) -> CliResult<Option<DelayModel>> {
        Ok(match self {
            DelaySpec::None => None,
            DelaySpec::Exponential { entry_mean, response_means } => {
                Some(DelayModel::exponential(*entry_mean, response_means.clone())?)
            }
            DelaySpec::Fixed { gap, response_times } => Some(DelayModel::fixed(*gap, response_times.clone())?),
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimulationConfig {
    pub design: DesignSpec,
    pub family: Family,
    /// Flat parameter vector, `Family::dim()` values per arm.
    pub theta: Vec<f64>,
    pub target: TargetSpec,
    pub floor: f64,
    pub n: usize,
    pub reps: u64,
    pub seed: u64,
    /// `None` uses the design's default.
    pub warm: Option<WarmStart>,
    pub estimator: EstimatorMode,
    pub delay: DelaySpec,
    pub format: Format,
}

impl SimulationConfig {
    pub fn new(design: DesignSpec, theta: Theta, n: usize) -> Self {
        SimulationConfig {
            design,
            family: theta.family(),
            theta: theta.values().to_vec(),
            target: TargetSpec::Urn,
            floor: DEFAULT_FLOOR,
            n,
            reps: 1000,
            seed: 0,
            warm: None,
            estimator: EstimatorMode::Shrinkage,
            delay: DelaySpec::None,
            format: Format::Csv,
        }
    }

    pub fn parse(text: &str) -> CliResult<Self> {
        let mut keys = Keys::read(text)?;
        let design_id = keys.required("design")?;
        let design = parse_design(&design_id, &mut keys)?;
        let family = match keys.take("model.family") {
            Some(f) => parse_family(&f)?,
            None => Family::Bernoulli,
        };
        let theta = parse_list("model.theta", &keys.required("model.theta")?)?;
        Theta::new(family, theta.clone()).map_err(|e| CliError::config(format!("model.theta: {e}")))?;
        let target = match keys.take("target") {
            Some(id) => parse_target(&id, &mut keys)?,
            None => TargetSpec::Urn,
        };
        let floor = keys.number("target.floor")?.unwrap_or(DEFAULT_FLOOR);
        let n = parse_value::<usize>("n", &keys.required("n")?)?;
        let reps = keys.parsed::<u64>("reps")?.unwrap_or(1000);
        let seed = keys.parsed::<u64>("seed")?.unwrap_or(0);
        let warm = match keys.take("warm").as_deref() {
            None | Some("default") => None,
            Some("restricted-block") => {
                Some(WarmStart::RestrictedBlock { m0: keys.parsed::<usize>("warm.m0")?.unwrap_or(1) })
            }
            Some("fixed-guess") => {
                let values = parse_list("warm.theta0", &keys.required("warm.theta0")?)?;
                let theta0 = Theta::new(family, values).map_err(|e| CliError::config(format!("warm.theta0: {e}")))?;
                Some(WarmStart::FixedGuess { theta0 })
            }
            Some("bayes-shrinkage") => Some(WarmStart::BayesShrinkage),
            Some(other) => return Err(CliError::config(format!("unknown warm start `{other}`"))),
        };
        let estimator = match keys.take("estimator").as_deref() {
            None | Some("shrinkage") => EstimatorMode::Shrinkage,
            Some("mle") => EstimatorMode::Mle,
            Some(other) => return Err(CliError::config(format!("unknown estimator `{other}`"))),
        };
        let delay = match keys.take("delay").as_deref() {
            None | Some("none") => DelaySpec::None,
            Some("exponential") => DelaySpec::Exponential {
                entry_mean: keys.number("delay.entry_mean")?.unwrap_or(1.0),
                response_means: parse_list("delay.response_means", &keys.required("delay.response_means")?)?,
            },
            Some("fixed") => DelaySpec::Fixed {
                gap: keys.number("delay.gap")?.unwrap_or(1.0),
                response_times: parse_list("delay.response_times", &keys.required("delay.response_times")?)?,
            },
            Some(other) => return Err(CliError::config(format!("unknown delay model `{other}`"))),
        };
        let format = match keys.take("output.format") {
            Some(f) => Format::from_str(&f, true).map_err(|_| CliError::config(format!("unknown output format `{f}`")))?,
            None => Format::Csv,
        };
        keys.finish()?;
        let config = SimulationConfig {
            design,
            family,
            theta,
            target,
            floor,
            n,
            reps,
            seed,
            warm,
            estimator,
            delay,
            format,
        };
        config.check()?;
        Ok(config)
    }

    fn check(&self) -> CliResult<()> {
        if self.n == 0 {
            return Err(CliError::config("n must be positive"));
        }
        if self.reps == 0 {
            return Err(CliError::config("reps must be positive"));
        }
        if !(0.0..1.0).contains(&self.floor) {
            return Err(CliError::config(format!("target.floor {} outside [0, 1)", self.floor)));
        }
        Ok(())
    }

    /// Canonical text; `parse(to_text(c)) == c`.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let mut put = |k: &str, v: String| {
            let _ = writeln!(out, "{k} = {v}");
        };
        put("design", self.design.id().into());
        for (k, v) in design_params(&self.design) {
            put(&format!("design.{k}"), v.to_string());
        }
        put("model.family", self.family.name().into());
        put("model.theta", join(&self.theta));
        put("target", self.target.id().into());
        match &self.target {
            TargetSpec::BiswasMandal { c, form } => {
                put("target.c", c.to_string());
                put("target.form", bm_form_id(*form).into());
            }
            TargetSpec::Fixed { rho } => put("target.rho", join(rho)),
            _ => {}
        }
        put("target.floor", self.floor.to_string());
        put("n", self.n.to_string());
        put("reps", self.reps.to_string());
        put("seed", self.seed.to_string());
        match &self.warm {
            None => put("warm", "default".into()),
            Some(WarmStart::RestrictedBlock { m0 }) => {
                put("warm", "restricted-block".into());
                put("warm.m0", m0.to_string());
            }
            Some(WarmStart::FixedGuess { theta0 }) => {
                put("warm", "fixed-guess".into());
                put("warm.theta0", join(theta0.values()));
            }
            Some(WarmStart::BayesShrinkage) => put("warm", "bayes-shrinkage".into()),
        }
        put(
            "estimator",
            match self.estimator {
                EstimatorMode::Shrinkage => "shrinkage",
                EstimatorMode::Mle => "mle",
            }
            .into(),
        );
        match &self.delay {
            DelaySpec::None => put("delay", "none".into()),
            DelaySpec::Exponential { entry_mean, response_means } => {
                put("delay", "exponential".into());
                put("delay.entry_mean", entry_mean.to_string());
                put("delay.response_means", join(response_means));
            }
            DelaySpec::Fixed { gap, response_times } => {
                put("delay", "fixed".into());
                put("delay.gap", gap.to_string());
                put("delay.response_times", join(response_times));
            }
        }
        put("output.format", self.format.id().into());
        out
    }

    pub fn theta(&self) -> CliResult<Theta> {
        Theta::new(self.family, self.theta.clone()).map_err(|e| CliError::config(format!("model.theta: {e}")))
    }

    /// The experiment this configuration describes. Also builds one design
    /// instance so that bad combinations surface before any run.
    pub fn experiment(&self) -> CliResult<Experiment> {
        let mut e = Experiment::new(self.design.clone(), self.target.clone(), self.theta()?, self.n, self.seed)?;
        e.floor = self.floor;
        if let Some(w) = &self.warm {
            e.setup.warm = w.clone();
        }
        e.setup.estimator = self.estimator;
        e.setup.delay = self.delay.model()?;
        let target = e.target_allocation()?;
        self.design.build(e.n_arms(), &target, self.n)?;
        Ok(e)
    }
}

/// Values of the tunable parameters of a design, in canonical order.
pub fn design_params(design: &DesignSpec) -> Vec<(&'static str, f64)> {
    match *design {
        DesignSpec::Rpw { initial } => vec![("initial", initial)],
        DesignSpec::Seu { beta, initial } => vec![("beta", beta), ("initial", initial)],
        DesignSpec::Dl { immigration } => vec![("immigration", immigration)],
        DesignSpec::Gdl { beta, immigration } => vec![("beta", beta), ("immigration", immigration)],
        DesignSpec::Rru { initial, scale } => vec![("initial", initial), ("scale", scale)],
        DesignSpec::Dbcd { gamma } | DesignSpec::SmoothedErade { gamma } => vec![("gamma", gamma)],
        DesignSpec::Erade { alpha } => vec![("alpha", alpha)],
        DesignSpec::CompleteRandomization | DesignSpec::PlayTheWinner | DesignSpec::Smlp | DesignSpec::ThallWathen => {
            vec![]
        }
    }
}

fn parse_design(id: &str, keys: &mut Keys) -> CliResult<DesignSpec> {
    let mut design = DesignSpec::from_id(id).map_err(|e| CliError::config(e.to_string()))?;
    let mut get = |name: &str, default: f64| -> CliResult<f64> {
        Ok(keys.number(&format!("design.{name}"))?.unwrap_or(default))
    };
    match &mut design {
        DesignSpec::Rpw { initial } => *initial = get("initial", *initial)?,
        DesignSpec::Seu { beta, initial } => {
            *beta = get("beta", *beta)?;
            *initial = get("initial", *initial)?;
        }
        DesignSpec::Dl { immigration } => *immigration = get("immigration", *immigration)?,
        DesignSpec::Gdl { beta, immigration } => {
            *beta = get("beta", *beta)?;
            *immigration = get("immigration", *immigration)?;
        }
        DesignSpec::Rru { initial, scale } => {
            *initial = get("initial", *initial)?;
            *scale = get("scale", *scale)?;
        }
        DesignSpec::Dbcd { gamma } | DesignSpec::SmoothedErade { gamma } => *gamma = get("gamma", *gamma)?,
        DesignSpec::Erade { alpha } => *alpha = get("alpha", *alpha)?,
        DesignSpec::CompleteRandomization | DesignSpec::PlayTheWinner | DesignSpec::Smlp | DesignSpec::ThallWathen => {}
    }
    Ok(design)
}

fn parse_target(id: &str, keys: &mut Keys) -> CliResult<TargetSpec> {
    let mut target = TargetSpec::from_id(id).map_err(|e| CliError::config(e.to_string()))?;
    match &mut target {
        TargetSpec::BiswasMandal { c, form } => {
            *c = keys.number("target.c")?.unwrap_or(*c);
            if let Some(f) = keys.take("target.form") {
                *form = parse_bm_form(&f)?;
            }
        }
        TargetSpec::Fixed { rho } => *rho = parse_list("target.rho", &keys.required("target.rho")?)?,
        _ => {}
    }
    Ok(target)
}

pub fn parse_family(s: &str) -> CliResult<Family> {
    match s {
        "bernoulli" => Ok(Family::Bernoulli),
        "normal" => Ok(Family::Normal),
        "exponential" => Ok(Family::Exponential),
        other => Err(CliError::config(format!("unknown family `{other}`"))),
    }
}

pub fn parse_bm_form(s: &str) -> CliResult<BmForm> {
    match s {
        "symmetric" => Ok(BmForm::Symmetric),
        "as-printed" => Ok(BmForm::AsPrinted),
        other => Err(CliError::config(format!("unknown Biswas-Mandal form `{other}`"))),
    }
}

fn bm_form_id(form: BmForm) -> &'static str {
    match form {
        BmForm::Symmetric => "symmetric",
        BmForm::AsPrinted => "as-printed",
    }
}

fn parse_value<T: FromStr>(key: &str, raw: &str) -> CliResult<T> {
    raw.parse().map_err(|_| CliError::config(format!("{key}: cannot parse `{raw}`")))
}

/// Comma-separated numbers.
pub fn parse_list(key: &str, raw: &str) -> CliResult<Vec<f64>> {
    let values = raw.split(',').map(|s| parse_value::<f64>(key, s.trim())).collect::<CliResult<Vec<f64>>>()?;
    if values.iter().any(|x| x.is_nan()) {
        return Err(CliError::config(format!("{key}: NaN is not allowed")));
    }
    Ok(values)
}

fn join(values: &[f64]) -> String {
    values.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(", ")
}

struct Keys {
    map: BTreeMap<String, (usize, String)>,
}

impl Keys {
    fn read(text: &str) -> CliResult<Self> {
        let mut map = BTreeMap::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| CliError::config(format!("line {}: expected `key = value`", i + 1)))?;
            let (k, v) = (k.trim(), v.trim());
            if k.is_empty() || v.is_empty() {
                return Err(CliError::config(format!("line {}: empty key or value", i + 1)));
            }
            if let Some((first, _)) = map.insert(k.to_string(), (i + 1, v.to_string())) {
                return Err(CliError::config(format!("line {}: `{k}` already set on line {first}", i + 1)));
            }
        }
        Ok(Keys { map })
    }

    fn take(&mut self, key: &str) -> Option<String> {
        self.map.remove(key).map(|(_, v)| v)
    }

    fn required(&mut self, key: &str) -> CliResult<String> {
        self.take(key).ok_or_else(|| CliError::config(format!("missing required key `{key}`")))
    }

    fn parsed<T: FromStr>(&mut self, key: &str) -> CliResult<Option<T>> {
        self.take(key).map(|v| parse_value(key, &v)).transpose()
    }

    fn number(&mut self, key: &str) -> CliResult<Option<f64>> {
        let v = self.parsed::<f64>(key)?;
        if v.is_some_and(f64::is_nan) {
            return Err(CliError::config(format!("{key}: NaN is not allowed")));
        }
        Ok(v)
    }

    fn finish(self) -> CliResult<()> {
        match self.map.into_iter().min_by_key(|(_, (line, _))| *line) {
            None => Ok(()),
            Some((k, (line, _))) => Err(CliError::config(format!("line {line}: unknown or inapplicable key `{k}`"))),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_config_gets_defaults() {
        let c = SimulationConfig::parse("design = dl\nmodel.theta = 0.7, 0.4\nn = 2000\n").unwrap();
        assert_eq!(c.design, DesignSpec::Dl { immigration: 1.0 });
        assert_eq!(c.target, TargetSpec::Urn);
        assert_eq!(c.reps, 1000);
        assert_eq!(c.warm, None);
    }

    #[test]
    fn parameters_and_comments() {
        let text = "# a DBCD run\ndesign = dbcd\ndesign.gamma = 4 # sharper\nmodel.theta = 0.7,0.4\nn = 10\nreps = 3\n";
        let c = SimulationConfig::parse(text).unwrap();
        assert_eq!(c.design, DesignSpec::Dbcd { gamma: 4.0 });
        assert_eq!(c.reps, 3);
    }

    #[test]
    fn rejects_unknown_repeated_and_misplaced_keys() {
        let base = "design = dl\nmodel.theta = 0.7, 0.4\nn = 20\n";
        for extra in ["colour = blue\n", "n = 30\n", "design.gamma = 2\n", "warm.m0 = 2\n", "target.c = 1\n"] {
            let err = SimulationConfig::parse(&format!("{base}{extra}")).unwrap_err();
            assert_eq!(err.exit_code(), 2, "{extra}: {err}");
        }
        assert!(SimulationConfig::parse("design = dl\nn = 20\n").is_err());
        assert!(SimulationConfig::parse("design = dl\nmodel.theta = 1.5, 0.4\nn = 20\n").is_err());
    }

    #[test]
    fn canonical_text_round_trips() {
        let text = "design = gdl\ndesign.beta = 0.5\nmodel.theta = 0.7, 0.4\ntarget = rsihr\nn = 300\nwarm = fixed-guess\nwarm.theta0 = 0.5, 0.5\ndelay = exponential\ndelay.response_means = 1, 2\noutput.format = json\n";
        let c = SimulationConfig::parse(text).unwrap();
        assert_eq!(SimulationConfig::parse(&c.to_text()).unwrap(), c);
    }
}
