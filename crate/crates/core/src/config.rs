//! Run configuration files.
//!
//! Grammar (UTF-8, one entry per line):
//!
//! ```text
//! file    := line*
//! line    := ws (entry | section | comment)? ws EOL
//! section := "[" name "]"                  prefixes following keys with `name.`
//! entry   := key ws "=" ws value ws comment?
//! key     := ident ("." ident)*            ident = [A-Za-z0-9_]+
//! value   := unquoted text up to `#` or end of line (optionally in double quotes)
//! comment := "#" any*
//! ```
//!
//! Numbers use `.` as the decimal separator and are parsed independently of
//! the process locale. Every key may appear once. Unknown keys are errors.
//!
//! Recognized keys (defaults in parentheses):
//!
//! | key | meaning |
//! |-----|---------|
//! | `model.family` | model family, `vdp_laser` (required) |
//! | `model.P`, `model.eta`, `model.c`, `model.omega0`, `model.kappa` | family parameters (1, 0.2, 1, 2, 0.5) |
//! | `forcing.a_K_re`, `forcing.a_K_im` | Fourier coefficient `a_K` of the profile (`1 + 0.5 e^{i tau}` when no key is given) |
//! | `control.alpha`, `control.gamma` | wave frequency and amplitude (200, 2) |
//! | `control.beta` / `control.delta` | modulation frequency, or detuning `(beta - beta0)/mu^2` (at most one; default `beta = beta0`) |
//! | `numeric.rtol`, `numeric.atol` | analysis tolerances (1e-9, 1e-11) |
//! | `numeric.sim_rtol`, `numeric.sim_atol` | simulation tolerances (1e-7, 1e-9) |
//! | `shooting.max_iter`, `shooting.tol` | Newton limits (50, 1e-10) |
//! | `locking.n_grid`, `locking.n_quad` | G grid and quadrature panels (512, 64) |
//! | `region.mu_star_low`, `region.mu_star_high`, `region.margin`, `region.nondeg_tol` | locking-region constants |
//! | `region.section`, `region.n_points` | `alpha_const` or `beta_const` cross-section and its resolution |
//! | `sim.horizon`, `sim.init_phase`, `sim.lock_band`, `sim.tail_fraction`, `sim.drift_threshold`, `sim.residual_bound`, `sim.n_probe`, `sim.formulation` | simulation and classification |
//! | `sweep.beta_offset_min/max`, `sweep.gamma_min/max`, `sweep.n_beta`, `sweep.n_gamma` | sweep grid |

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::Path;

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::model::{build_family, ForcingProfile, ModelDef};

/// How the modulation frequency is given.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BetaSpec {
    /// `beta = beta0` of the computed orbit.
    Resonant,
    Absolute(f64),
    /// Detuning `(beta - beta0)/mu^2`.
    Detuning(f64),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ControlSpec {
    pub alpha: f64,
    pub gamma: f64,
    pub beta: BetaSpec,
}

impl ControlSpec {
    /// Concrete parameters once `beta0` is known.
    pub fn resolve(&self, beta0: f64) -> Result<crate::model::ControlParams> {
        use crate::model::ControlParams;
        match self.beta {
            BetaSpec::Resonant => ControlParams::new(self.alpha, beta0, self.gamma),
            BetaSpec::Absolute(b) => ControlParams::new(self.alpha, b, self.gamma),
            BetaSpec::Detuning(d) => ControlParams::from_detuning(self.alpha, self.gamma, beta0, d),
        }
    }
}

impl Default for ControlSpec {
    fn default() -> Self {
        Self {
            alpha: 200.0,
            gamma: 2.0,
            beta: BetaSpec::Resonant,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NumericSettings {
    pub rtol: f64,
    pub atol: f64,
    pub sim_rtol: f64,
    pub sim_atol: f64,
    pub max_iter: usize,
    pub shooting_tol: f64,
    pub n_grid: usize,
    pub n_quad: usize,
}

impl Default for NumericSettings {
    fn default() -> Self {
        Self {
            rtol: 1e-9,
            atol: 1e-11,
            sim_rtol: 1e-7,
            sim_atol: 1e-9,
            max_iter: 50,
            shooting_tol: 1e-10,
            n_grid: 512,
            n_quad: 64,
        }
    }
}

/// Optional overrides of the locking-region constants; unset values take
/// defaults that depend on G.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct RegionSettings {
    pub mu_star_low: Option<f64>,
    pub mu_star_high: Option<f64>,
    pub margin: Option<f64>,
    pub nondeg_tol: Option<f64>,
    pub section: SectionKind,
    pub n_points: usize,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub enum SectionKind {
    #[default]
    AlphaConst,
    BetaConst,
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct SimSettings {
    pub horizon: Option<f64>,
    pub init_phase: Option<InitPhase>,
    pub lock_band: Option<f64>,
    pub tail_fraction: Option<f64>,
    pub drift_threshold: Option<f64>,
    pub residual_bound: Option<f64>,
    pub n_probe: Option<usize>,
    pub direct: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum InitPhase {
    Fixed(f64),
    /// Drawn from the run seed.
    Random,
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct SweepSettings {
    pub beta_offset_min: Option<f64>,
    pub beta_offset_max: Option<f64>,
    pub gamma_min: Option<f64>,
    pub gamma_max: Option<f64>,
    pub n_beta: Option<usize>,
    pub n_gamma: Option<usize>,
}

/// A fully parsed and validated configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub model: ModelDef,
    pub control: ControlSpec,
    pub numeric: NumericSettings,
    pub region: RegionSettings,
    pub sim: SimSettings,
    pub sweep: SweepSettings,
}

/// Reads and validates a config file.
pub fn load_model_config(path: impl AsRef<Path>) -> Result<RunConfig> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| {
        Error::config("<file>", format!("cannot read {}: {e}", path.display()))
    })?;
    parse_config(&text)
}

struct Entry {
    value: String,
    line: usize,
}

struct Table {
    entries: BTreeMap<String, Entry>,
    used: BTreeSet<String>,
}

impl Table {
    fn parse(text: &str) -> Result<Self> {
        let mut entries = BTreeMap::new();
        let mut prefix = String::new();
        for (idx, raw) in text.lines().enumerate() {
            let line = idx + 1;
            let content = strip_comment(raw).trim();
            if content.is_empty() {
                continue;
            }
            if let Some(rest) = content.strip_prefix('[') {
                let name = rest.strip_suffix(']').ok_or_else(|| {
                    Error::config(format!("line {line}"), "unterminated section header")
                })?;
                let name = name.trim();
                if !valid_key(name) {
                    return Err(Error::config(
                        format!("line {line}"),
                        format!("invalid section name `{name}`"),
                    ));
                }
                prefix = format!("{name}.");
                continue;
            }
            let (key, value) = content.split_once('=').ok_or_else(|| {
                Error::config(format!("line {line}"), "expected `key = value`")
            })?;
            let key = key.trim();
            if !valid_key(key) {
                return Err(Error::config(
                    format!("line {line}"),
                    format!("invalid key `{key}`"),
                ));
            }
            let full = format!("{prefix}{key}");
            let value = value.trim();
            let value = value
                .strip_prefix('"')
                .and_then(|v| v.strip_suffix('"'))
                .unwrap_or(value)
                .to_string();
            if entries.contains_key(&full) {
                return Err(Error::config(full, format!("duplicate key (line {line})")));
            }
            entries.insert(full, Entry { value, line });
        }
        Ok(Self {
            entries,
            used: BTreeSet::new(),
        })
    }

    fn raw(&mut self, key: &str) -> Option<(&str, usize)> {
        let e = self.entries.get(key)?;
        self.used.insert(key.to_string());
        Some((e.value.as_str(), e.line))
    }

    fn string(&mut self, key: &str) -> Option<String> {
        self.raw(key).map(|(v, _)| v.to_string())
    }

    fn real(&mut self, key: &str) -> Result<Option<f64>> {
        let Some((v, line)) = self.raw(key) else {
            return Ok(None);
        };
        parse_real(v)
            .map(Some)
            .ok_or_else(|| Error::config(key, format!("line {line}: expected a decimal number, got `{v}`")))
    }

    fn positive(&mut self, key: &str) -> Result<Option<f64>> {
        let v = self.real(key)?;
        match v {
            Some(x) if !(x > 0.0) => Err(Error::config(key, format!("must be > 0 (got {x})"))),
            _ => Ok(v),
        }
    }

    fn count(&mut self, key: &str) -> Result<Option<usize>> {
        let Some((v, line)) = self.raw(key) else {
            return Ok(None);
        };
        match v.parse::<usize>() {
            Ok(n) if n > 0 => Ok(Some(n)),
            _ => Err(Error::config(
                key,
                format!("line {line}: expected a positive integer, got `{v}`"),
            )),
        }
    }

    fn keys_with_prefix(&self, prefix: &str) -> Vec<String> {
        self.entries
            .keys()
            .filter(|k| k.starts_with(prefix))
            .cloned()
            .collect()
    }

    fn reject_unused(&self) -> Result<()> {
        match self.entries.iter().find(|(k, _)| !self.used.contains(*k)) {
            Some((k, e)) => Err(Error::config(k.clone(), format!("unknown key (line {})", e.line))),
            None => Ok(()),
        }
    }
}

fn strip_comment(line: &str) -> &str {
    line.split_once('#').map_or(line, |(head, _)| head)
}

fn valid_key(key: &str) -> bool {
    !key.is_empty()
        && key
            .split('.')
            .all(|part| !part.is_empty() && part.chars().all(|c| c.is_ascii_alphanumeric() || c == '_'))
}

/// Locale-independent decimal parsing; rejects `nan`/`inf` spellings.
fn parse_real(s: &str) -> Option<f64> {
    let ok = !s.is_empty()
        && s
            .chars()
            .all(|c| c.is_ascii_digit() || matches!(c, '.' | '-' | '+' | 'e' | 'E'));
    if !ok {
        return None;
    }
    s.parse::<f64>().ok().filter(|v| v.is_finite())
}

/// Parses config text (see the module docs for the grammar).
pub fn parse_config(text: &str) -> Result<RunConfig> {
    let mut t = Table::parse(text)?;

    let family = t
        .string("model.family")
        .ok_or_else(|| Error::config("model.family", "missing required key"))?;
    let mut params = BTreeMap::new();
    for key in t.keys_with_prefix("model.") {
        if key == "model.family" {
            continue;
        }
        let v = t.real(&key)?.expect("key present");
        params.insert(key["model.".len()..].to_string(), v);
    }
    let model = build_family(&family, &params)?;
    let model = match parse_forcing(&mut t)? {
        Some(f) => model.with_forcing(f),
        None => model,
    };

    let mut control = ControlSpec::default();
    if let Some(a) = t.real("control.alpha")? {
        if !(a > 0.0) {
            return Err(Error::config("control.alpha", format!("must be > 0 (got {a})")));
        }
        control.alpha = a;
    }
    if let Some(g) = t.real("control.gamma")? {
        if g < 0.0 {
            return Err(Error::config("control.gamma", format!("must be >= 0 (got {g})")));
        }
        control.gamma = g;
    }
    let beta = t.real("control.beta")?;
    let delta = t.real("control.delta")?;
    control.beta = match (beta, delta) {
        (Some(_), Some(_)) => {
            return Err(Error::config(
                "control.delta",
                "give at most one of control.beta and control.delta",
            ))
        }
        (Some(b), None) if !(b > 0.0) => {
            return Err(Error::config("control.beta", format!("must be > 0 (got {b})")))
        }
        (Some(b), None) => BetaSpec::Absolute(b),
        (None, Some(d)) => {
            if control.gamma == 0.0 {
                return Err(Error::config(
                    "control.delta",
                    "detuning is undefined at zero amplitude",
                ));
            }
            BetaSpec::Detuning(d)
        }
        (None, None) => BetaSpec::Resonant,
    };

    let mut numeric = NumericSettings::default();
    let set = |slot: &mut f64, v: Option<f64>| {
        if let Some(v) = v {
            *slot = v;
        }
    };
    set(&mut numeric.rtol, t.positive("numeric.rtol")?);
    set(&mut numeric.atol, t.positive("numeric.atol")?);
    set(&mut numeric.sim_rtol, t.positive("numeric.sim_rtol")?);
    set(&mut numeric.sim_atol, t.positive("numeric.sim_atol")?);
    set(&mut numeric.shooting_tol, t.positive("shooting.tol")?);
    if let Some(n) = t.count("shooting.max_iter")? {
        numeric.max_iter = n;
    }
    if let Some(n) = t.count("locking.n_grid")? {
        if n < 256 {
            return Err(Error::config("locking.n_grid", format!("must be >= 256 (got {n})")));
        }
        numeric.n_grid = n;
    }
    if let Some(n) = t.count("locking.n_quad")? {
        numeric.n_quad = n;
    }

    let section = match t.string("region.section").as_deref() {
        None | Some("alpha_const") => SectionKind::AlphaConst,
        Some("beta_const") => SectionKind::BetaConst,
        Some(other) => {
            return Err(Error::config(
                "region.section",
                format!("expected alpha_const or beta_const, got `{other}`"),
            ))
        }
    };
    let region = RegionSettings {
        mu_star_low: t.positive("region.mu_star_low")?,
        mu_star_high: t.positive("region.mu_star_high")?,
        margin: t.positive("region.margin")?,
        nondeg_tol: t.positive("region.nondeg_tol")?,
        section,
        n_points: t.count("region.n_points")?.unwrap_or(200),
    };

    let init_phase = match t.raw("sim.init_phase").map(|(v, l)| (v.to_string(), l)) {
        None => None,
        Some((v, _)) if v == "random" => Some(InitPhase::Random),
        Some((v, line)) => Some(InitPhase::Fixed(parse_real(&v).ok_or_else(|| {
            Error::config(
                "sim.init_phase",
                format!("line {line}: expected a phase or `random`, got `{v}`"),
            )
        })?)),
    };
    let direct = match t.string("sim.formulation").as_deref() {
        None | Some("deforced") => false,
        Some("direct") => true,
        Some(other) => {
            return Err(Error::config(
                "sim.formulation",
                format!("expected direct or deforced, got `{other}`"),
            ))
        }
    };
    let tail_fraction = t.positive("sim.tail_fraction")?;
    if let Some(f) = tail_fraction {
        if f >= 1.0 {
            return Err(Error::config("sim.tail_fraction", format!("must be < 1 (got {f})")));
        }
    }
    let sim = SimSettings {
        horizon: t.positive("sim.horizon")?,
        init_phase,
        lock_band: t.positive("sim.lock_band")?,
        tail_fraction,
        drift_threshold: t.positive("sim.drift_threshold")?,
        residual_bound: t.positive("sim.residual_bound")?,
        n_probe: t.count("sim.n_probe")?,
        direct,
    };

    let sweep = SweepSettings {
        beta_offset_min: t.real("sweep.beta_offset_min")?,
        beta_offset_max: t.real("sweep.beta_offset_max")?,
        gamma_min: t.positive("sweep.gamma_min")?,
        gamma_max: t.positive("sweep.gamma_max")?,
        n_beta: t.count("sweep.n_beta")?,
        n_gamma: t.count("sweep.n_gamma")?,
    };
    if let (Some(lo), Some(hi)) = (sweep.beta_offset_min, sweep.beta_offset_max) {
        if lo > hi {
            return Err(Error::config("sweep.beta_offset_max", "must be >= sweep.beta_offset_min"));
        }
    }
    if let (Some(lo), Some(hi)) = (sweep.gamma_min, sweep.gamma_max) {
        if lo > hi {
            return Err(Error::config("sweep.gamma_max", "must be >= sweep.gamma_min"));
        }
    }

    t.reject_unused()?;
    Ok(RunConfig {
        model,
        control,
        numeric,
        region,
        sim,
        sweep,
    })
}

fn parse_forcing(t: &mut Table) -> Result<Option<ForcingProfile>> {
    let keys = t.keys_with_prefix("forcing.");
    if keys.is_empty() {
        return Ok(None);
    }
    let mut coeffs: BTreeMap<usize, Complex64> = BTreeMap::new();
    for key in keys {
        let name = &key["forcing.".len()..];
        let parsed = name.strip_prefix("a_").and_then(|rest| {
            let (k, part) = rest.split_once('_')?;
            let k = k.parse::<usize>().ok()?;
            matches!(part, "re" | "im").then_some((k, part == "re"))
        });
        let Some((k, is_re)) = parsed else {
            // Leave it unused so it is reported as unknown.
            continue;
        };
        if k > 64 {
            return Err(Error::config(key, "harmonic index above 64"));
        }
        let v = t.real(&key)?.expect("key present");
        let c = coeffs.entry(k).or_default();
        if is_re {
            c.re = v;
        } else {
            c.im = v;
        }
    }
    let Some(&max_k) = coeffs.keys().next_back() else {
        return Ok(None);
    };
    let dense = (0..=max_k)
        .map(|k| coeffs.get(&k).copied().unwrap_or_default())
        .collect();
    ForcingProfile::new(dense).map(Some)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::make_vdp_laser;

    #[test]
    fn minimal_config_gives_defaults() {
        let c = parse_config("model.family = vdp_laser\n").unwrap();
        assert_eq!(c.model, make_vdp_laser(1.0, 0.2, 1.0, 2.0, 0.5).unwrap());
        assert_eq!(c.control, ControlSpec::default());
        assert_eq!(c.numeric, NumericSettings::default());
    }

    #[test]
    fn sections_comments_and_quotes() {
        let text = "# run\n[model]\nfamily = \"vdp_laser\"  # the laser\neta = 0.1\n\n[control]\nalpha=150\ngamma = 1.5\ndelta = -0.25\n";
        let c = parse_config(text).unwrap();
        assert_eq!(c.model, make_vdp_laser(1.0, 0.1, 1.0, 2.0, 0.5).unwrap());
        assert_eq!(c.control.alpha, 150.0);
        assert_eq!(c.control.beta, BetaSpec::Detuning(-0.25));
    }

    #[test]
    fn negative_gamma_rejected() {
        let err = parse_config("model.family = vdp_laser\ncontrol.gamma = -1\n").unwrap_err();
        assert!(err.to_string().contains("control.gamma"), "{err}");
        assert_eq!(err.exit_code(), crate::error::exit_code::CONFIG);
    }

    #[test]
    fn forcing_coefficients_stored_verbatim() {
        let text = "model.family = vdp_laser\nforcing.a_0_re = 1\nforcing.a_1_re = 0.3\nforcing.a_2_re = 0.2\n";
        let c = parse_config(text).unwrap();
        assert_eq!(c.model.forcing(), &ForcingProfile::real(&[1.0, 0.3, 0.2]));
        let c = parse_config("model.family = vdp_laser\nforcing.a_1_im = 0.5\n").unwrap();
        assert_eq!(
            c.model.forcing().coeffs(),
            &[Complex64::new(0.0, 0.0), Complex64::new(0.0, 0.5)]
        );
    }

    #[test]
    fn unknown_and_malformed_keys_name_the_key() {
        let err = parse_config("model.family = vdp_laser\ncontrol.alhpa = 3\n").unwrap_err();
        assert!(err.to_string().contains("control.alhpa"), "{err}");
        let err = parse_config("model.family = vdp_laser\nforcing.b_0_re = 3\n").unwrap_err();
        assert!(err.to_string().contains("forcing.b_0_re"), "{err}");
        let err = parse_config("model.family = vdp_laser\nmodel.zeta = 3\n").unwrap_err();
        assert!(err.to_string().contains("model.zeta"), "{err}");
        let err = parse_config("model.family = vdp_laser\ncontrol.alpha = 1,5\n").unwrap_err();
        assert!(err.to_string().contains("control.alpha"), "{err}");
        let err = parse_config("model.family = vdp_laser\nnumeric.rtol = nan\n").unwrap_err();
        assert!(err.to_string().contains("numeric.rtol"), "{err}");
        let err = parse_config("control.alpha = 3\n").unwrap_err();
        assert!(err.to_string().contains("model.family"), "{err}");
        let err = parse_config("model.family = vdp_laser\njunk line\n").unwrap_err();
        assert!(err.to_string().contains("line 2"), "{err}");
    }

    #[test]
    fn model_domain_errors_are_config_class() {
        let err = parse_config("model.family = vdp_laser\nmodel.P = -1\n").unwrap_err();
        assert!(matches!(err, Error::InvalidModel(_)));
        assert_eq!(err.exit_code(), 2);
        let err = parse_config("model.family = lorenz\n").unwrap_err();
        assert!(err.to_string().contains("model.family"));
    }

    #[test]
    fn duplicate_keys_rejected() {
        let err = parse_config("model.family = vdp_laser\n[control]\nalpha = 1\n[control]\nalpha = 2\n")
            .unwrap_err();
        assert!(err.to_string().contains("control.alpha"), "{err}");
    }

    #[test]
    fn beta_and_delta_are_exclusive() {
        let err = parse_config("model.family = vdp_laser\ncontrol.beta = 1.4\ncontrol.delta = 0\n")
            .unwrap_err();
        assert!(err.to_string().contains("control.delta"));
    }

    #[test]
    fn resolve_detuning() {
        let spec = ControlSpec {
            alpha: 200.0,
            gamma: 2.0,
            beta: BetaSpec::Detuning(0.5),
        };
        let p = spec.resolve(1.4).unwrap();
        assert!((p.beta() - (1.4 + 0.5e-4)).abs() < 1e-15);
    }
}
