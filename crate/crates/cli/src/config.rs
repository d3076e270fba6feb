use ini::Ini;
use scat2d::bs::Preset;
use scat2d::threshold::{Target, DEFAULT_TOL};
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Sweep,
    Classify,
    Tune,
    Levinson,
    Waveop,
    Selftest,
}

impl Command {
    pub fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "sweep" => Command::Sweep,
            "classify" => Command::Classify,
            "tune" => Command::Tune,
            "levinson" => Command::Levinson,
            "waveop" => Command::Waveop,
            "selftest" => Command::Selftest,
            _ => return None,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConfigError(pub String);

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "ConfigParse: {}", self.0)
    }
}

/// Every accepted `section.key`.
const KNOWN: &[(&str, &[&str])] = &[
    ("potential", &["kind", "g", "width", "radius", "sign", "inner", "outer", "height"]),
    ("grid", &["radius", "n_radial", "n_angular", "m_angles"]),
    ("sweep", &["lambda_min", "lambda_max", "points"]),
    ("tol", &["rank"]),
    ("tune", &["target", "bracket_lo", "bracket_hi"]),
    ("levinson", &["points_per_decade", "box_radius", "n_grid"]),
    (
        "waveop",
        &[
            "packet_n", "packet_side", "window_lo", "window_hi", "direction", "kappa", "t0", "dt", "log_lambda_min",
            "log_lambda_max", "log_step", "snapshot",
        ],
    ),
    ("output", &["path"]),
];

#[derive(Debug, Clone, PartialEq)]
pub struct GridConfig {
    pub radius: f64,
    pub n_radial: usize,
    pub n_angular: usize,
    pub m_angles: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepConfig {
    pub lambda_min: f64,
    pub lambda_max: f64,
    pub points: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TuneConfig {
    pub target: Target,
    pub bracket: (f64, f64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct LevinsonConfig {
    pub points_per_decade: usize,
    pub box_radius: f64,
    pub n_grid: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct WaveopConfig {
    pub packet_n: usize,
    pub packet_side: f64,
    pub window: (f64, f64),
    pub direction: f64,
    pub kappa: f64,
    /// `None` selects the default horizon.
    pub t0: Option<f64>,
    pub dt: f64,
    pub log_range: (f64, f64),
    pub log_step: f64,
    pub snapshot: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub preset: Preset,
    pub g: f64,
    pub grid: GridConfig,
    pub sweep: SweepConfig,
    pub tol: f64,
    pub tune: Option<TuneConfig>,
    pub levinson: LevinsonConfig,
    pub waveop: WaveopConfig,
    pub output: Option<PathBuf>,
}

type Table = BTreeMap<(String, String), String>;

fn read_table(text: &str) -> Result<Table, ConfigError> {
    let ini = Ini::load_from_str(text).map_err(|e| ConfigError(e.to_string()))?;
    let mut table = Table::new();
    for (section, props) in ini.iter() {
        for (key, value) in props.iter() {
            let Some(section) = section else {
                return Err(ConfigError(format!("key `{key}` outside any [section]")));
            };
            if table.insert((section.to_string(), key.to_string()), value.to_string()).is_some() {
                return Err(ConfigError(format!("duplicate key {section}.{key}")));
            }
        }
    }
    Ok(table)
}

fn apply_override(table: &mut Table, item: &str) -> Result<(), ConfigError> {
    let (lhs, value) = item
        .split_once('=')
        .ok_or_else(|| ConfigError(format!("--set expects section.key=value, got `{item}`")))?;
    let (section, key) = lhs
        .trim()
        .split_once('.')
        .ok_or_else(|| ConfigError(format!("--set expects section.key=value, got `{item}`")))?;
    table.insert((section.to_string(), key.to_string()), value.trim().to_string());
    Ok(())
}

fn check_known(table: &Table) -> Result<(), ConfigError> {
    for (section, key) in table.keys() {
        let ok = KNOWN.iter().any(|(s, keys)| s == section && keys.contains(&key.as_str()));
        if !ok {
            return Err(ConfigError(format!("unknown key {section}.{key}")));
        }
    }
    Ok(())
}

struct Reader<'a> {
    table: &'a Table,
}

impl Reader<'_> {
    fn raw(&self, section: &str, key: &str) -> Option<&str> {
        self.table.get(&(section.to_string(), key.to_string())).map(|s| s.as_str())
    }

    fn f64_or(&self, section: &str, key: &str, default: Option<f64>) -> Result<f64, ConfigError> {
        match self.raw(section, key) {
            Some(s) => s
                .parse::<f64>()
                .ok()
                .filter(|x| x.is_finite())
                .ok_or_else(|| ConfigError(format!("{section}.{key} = `{s}` is not a finite number"))),
            None => default.ok_or_else(|| ConfigError(format!("missing {section}.{key}"))),
        }
    }

    fn positive(&self, section: &str, key: &str, default: Option<f64>) -> Result<f64, ConfigError> {
        let x = self.f64_or(section, key, default)?;
        if x > 0.0 {
            Ok(x)
        } else {
            Err(ConfigError(format!("{section}.{key} must be positive, got {x}")))
        }
    }

    fn count(&self, section: &str, key: &str, default: usize, min: usize) -> Result<usize, ConfigError> {
        let n = match self.raw(section, key) {
            Some(s) => s
                .parse::<usize>()
                .map_err(|_| ConfigError(format!("{section}.{key} = `{s}` is not a non-negative integer")))?,
            None => default,
        };
        if n < min {
            return Err(ConfigError(format!("{section}.{key} must be at least {min}, got {n}")));
        }
        Ok(n)
    }
}

fn preset(r: &Reader) -> Result<Preset, ConfigError> {
    let kind = r.raw("potential", "kind").ok_or_else(|| ConfigError("missing potential.kind".into()))?;
    let p = match kind {
        "gaussian" => Preset::Gaussian { width: r.positive("potential", "width", Some(1.0))? },
        "square_well" => {
            let sign = r.f64_or("potential", "sign", Some(-1.0))?;
            if sign != 1.0 && sign != -1.0 {
                return Err(ConfigError(format!("potential.sign must be 1 or -1, got {sign}")));
            }
            Preset::SquareWell { radius: r.positive("potential", "radius", Some(1.0))?, sign }
        }
        "ring" => {
            let inner = r.positive("potential", "inner", Some(0.5))?;
            let outer = r.positive("potential", "outer", Some(1.0))?;
            if outer <= inner {
                return Err(ConfigError(format!("potential.outer {outer} must exceed potential.inner {inner}")));
            }
            Preset::Ring { inner, outer, height: r.f64_or("potential", "height", Some(1.0))? }
        }
        other => return Err(ConfigError(format!("potential.kind `{other}` is not gaussian, square_well or ring"))),
    };
    Ok(p)
}

/// Grid radius covering the potential: the support for compact presets, six
/// widths for the Gaussian.
fn default_grid_radius(p: &Preset) -> f64 {
    match *p {
        Preset::Gaussian { width } => 6.0 * width,
        _ => p.support_radius(),
    }
}

fn target(s: &str) -> Result<Target, ConfigError> {
    match s {
        "s_resonance" => Ok(Target::SResonance),
        "p_resonance" => Ok(Target::PResonance),
        "zero_bound" => Ok(Target::ZeroBound),
        other => Err(ConfigError(format!("tune.target `{other}` is not s_resonance, p_resonance or zero_bound"))),
    }
}

impl RunConfig {
    pub fn load(path: &Path, overrides: &[String]) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError(format!("{}: {e}", path.display())))?;
        Self::from_text(&text, overrides)
    }

    pub fn from_text(text: &str, overrides: &[String]) -> Result<Self, ConfigError> {
        let mut table = read_table(text)?;
        for item in overrides {
            apply_override(&mut table, item)?;
        }
        check_known(&table)?;
        let r = Reader { table: &table };

        let preset = preset(&r)?;
        let g = r.f64_or("potential", "g", None)?;

        let n_angular = r.count("grid", "n_angular", 64, 8)?;
        let grid = GridConfig {
            radius: r.positive("grid", "radius", Some(default_grid_radius(&preset)))?,
            n_radial: r.count("grid", "n_radial", 32, 4)?,
            n_angular,
            m_angles: r.count("grid", "m_angles", n_angular, 4)?,
        };
        if grid.m_angles % 2 != 0 {
            return Err(ConfigError(format!("grid.m_angles must be even, got {}", grid.m_angles)));
        }

        let sweep = SweepConfig {
            lambda_min: r.positive("sweep", "lambda_min", Some(1e-6))?,
            lambda_max: r.positive("sweep", "lambda_max", Some(1e2))?,
            points: r.count("sweep", "points", 25, 1)?,
        };
        if sweep.lambda_max < sweep.lambda_min {
            return Err(ConfigError("sweep.lambda_max must not be below sweep.lambda_min".into()));
        }

        let tol = r.positive("tol", "rank", Some(DEFAULT_TOL))?;

        let tune = match r.raw("tune", "target") {
            Some(t) => {
                let lo = r.positive("tune", "bracket_lo", None)?;
                let hi = r.positive("tune", "bracket_hi", None)?;
                if hi <= lo {
                    return Err(ConfigError(format!("tune bracket [{lo}, {hi}] is empty")));
                }
                Some(TuneConfig { target: target(t)?, bracket: (lo, hi) })
            }
            None => None,
        };

        let levinson = LevinsonConfig {
            points_per_decade: r.count("levinson", "points_per_decade", 10, 2)?,
            box_radius: r.positive("levinson", "box_radius", Some(10.0 * preset.length_scale()))?,
            n_grid: r.count("levinson", "n_grid", 100, 8)?,
        };

        let window = (r.positive("waveop", "window_lo", Some(0.5))?, r.positive("waveop", "window_hi", Some(4.0))?);
        let log_range = (
            r.positive("waveop", "log_lambda_min", Some(1e-4))?,
            r.positive("waveop", "log_lambda_max", Some(60.0))?,
        );
        if window.1 <= window.0 || log_range.1 <= log_range.0 {
            return Err(ConfigError("waveop energy ranges must be increasing".into()));
        }
        let waveop = WaveopConfig {
            packet_n: r.count("waveop", "packet_n", 256, 16)?,
            packet_side: r.positive("waveop", "packet_side", Some(153.6))?,
            window,
            direction: r.f64_or("waveop", "direction", Some(0.0))?,
            kappa: r.positive("waveop", "kappa", Some(4.0))?,
            t0: match r.raw("waveop", "t0") {
                Some(_) => Some(r.positive("waveop", "t0", None)?),
                None => None,
            },
            dt: r.positive("waveop", "dt", Some(0.02))?,
            log_range,
            log_step: r.positive("waveop", "log_step", Some(0.05))?,
            snapshot: r.raw("waveop", "snapshot").map(PathBuf::from),
        };

        Ok(RunConfig {
            preset,
            g,
            grid,
            sweep,
            tol,
            tune,
            levinson,
            waveop,
            output: r.raw("output", "path").map(PathBuf::from),
        })
    }
}
