//! Run configuration, read from TOML.
//!
//! ```toml
//! maturities = [0.5, 2.5, 10.0]
//! methods = ["order1", "order2", "hklw", "fdm"]
//! reference = "fdm"
//! proxy = { kind = "black" }      # or { kind = "cev", beta0 = 0.7 }, { kind = "bachelier" }
//! option = "otm"                  # price only: otm | call | put
//! discount = 1.0
//!
//! [model]
//! f0 = 4.0
//! alpha = 0.3
//! beta = 0.7
//! nu = 0.4
//! rho = -0.5
//! kappa = 0.0
//! vbar = 0.0
//!
//! [strikes]
//! min = 2.5
//! max = 6.5
//! count = 17
//! spacing = "linear"              # or "geometric"; alternatively list = [...]
//!
//! [fdm]                           # any FdmConfig field
//! nf = 400
//! ```

use std::path::{Path, PathBuf};

use heatvol::expansion::{ExpansionConfig, Proxy};
use heatvol::fdm::FdmConfig;
use heatvol::SabrParams;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};

/// One way of producing a volatility or price.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    /// First-order expansion against the configured proxy.
    Order1,
    /// Second-order expansion against the configured proxy.
    Order2,
    /// Lognormal heat kernel baseline.
    Hklw,
    /// Finite difference reference.
    Fdm,
    /// Second-order expansion against the CEV proxy with `β₀ = β`.
    CevProxy,
    /// Second-order expansion including the mean reversion of the model.
    MeanReverting,
}

impl Method {
    pub const ALL: [Method; 6] = [
        Method::Order1,
        Method::Order2,
        Method::Hklw,
        Method::Fdm,
        Method::CevProxy,
        Method::MeanReverting,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::Order1 => "order1",
            Method::Order2 => "order2",
            Method::Hklw => "hklw",
            Method::Fdm => "fdm",
            Method::CevProxy => "cev-proxy",
            Method::MeanReverting => "mean-reverting",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| CliError::Usage(format!("unknown method `{s}`")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Spacing {
    Linear,
    Geometric,
}

/// Explicit strikes or an evenly spaced range.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum StrikeGrid {
    List {
        list: Vec<f64>,
    },
    Range {
        min: f64,
        max: f64,
        count: usize,
        #[serde(default = "linear")]
        spacing: Spacing,
    },
}

fn linear() -> Spacing {
    Spacing::Linear
}

impl StrikeGrid {
    pub fn strikes(&self) -> Vec<f64> {
        match *self {
            StrikeGrid::List { ref list } => list.clone(),
            StrikeGrid::Range { min, max, count, spacing } => {
                if count == 1 {
                    return vec![min];
                }
                let step = |i: usize| i as f64 / (count - 1) as f64;
                (0..count)
                    .map(|i| match spacing {
                        Spacing::Linear => min + (max - min) * step(i),
                        Spacing::Geometric => min * (max / min).powf(step(i)),
                    })
                    .collect()
            }
        }
    }
}

/// Option payoff for `price`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Payoff {
    /// Puts below `F₀`, calls from `F₀` up.
    Otm,
    Call,
    Put,
}

/// Strike and maturity of the `fdm-convergence` study.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceCase {
    pub strike: f64,
    pub maturity: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default = "SabrParams::reference")]
    pub model: SabrParams,
    #[serde(default = "default_strikes")]
    pub strikes: StrikeGrid,
    #[serde(default = "default_maturities")]
    pub maturities: Vec<f64>,
    #[serde(default = "default_methods")]
    pub methods: Vec<Method>,
    #[serde(default = "default_reference")]
    pub reference: Method,
    #[serde(default = "default_proxy")]
    pub proxy: Proxy,
    #[serde(default = "default_payoff")]
    pub option: Payoff,
    #[serde(default = "default_discount")]
    pub discount: f64,
    #[serde(default)]
    pub output: Option<PathBuf>,
    #[serde(default)]
    pub fdm: FdmConfig,
    #[serde(default)]
    pub expansion: ExpansionConfig,
    /// Base grid of `fdm-convergence`; refined by 2 and 4.
    #[serde(default = "default_convergence_grid")]
    pub convergence_grid: FdmConfig,
    #[serde(default)]
    pub convergence: Option<ConvergenceCase>,
}

fn default_strikes() -> StrikeGrid {
    StrikeGrid::Range {
        min: 2.5,
        max: 6.5,
        count: 17,
        spacing: Spacing::Linear,
    }
}

fn default_maturities() -> Vec<f64> {
    vec![2.5]
}

fn default_methods() -> Vec<Method> {
    vec![Method::Order1, Method::Order2, Method::Hklw]
}

fn default_reference() -> Method {
    Method::Fdm
}

fn default_proxy() -> Proxy {
    Proxy::Black
}

fn default_payoff() -> Payoff {
    Payoff::Otm
}

fn default_discount() -> f64 {
    1.0
}

fn default_convergence_grid() -> FdmConfig {
    FdmConfig {
        nf: 101,
        nv: 51,
        ..FdmConfig::default()
    }
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            model: SabrParams::reference(),
            strikes: default_strikes(),
            maturities: default_maturities(),
            methods: default_methods(),
            reference: default_reference(),
            proxy: default_proxy(),
            option: default_payoff(),
            discount: default_discount(),
            output: None,
            fdm: FdmConfig::default(),
            expansion: ExpansionConfig::default(),
            convergence_grid: default_convergence_grid(),
            convergence: None,
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Io {
            path: path.to_path_buf(),
            source: e,
        })?;
        Self::from_toml(&text)
    }

    /// Checks the invariants shared by all subcommands.
    pub fn validate(&self) -> Result<()> {
        if self.methods.is_empty() {
            return Err(CliError::Usage("the method set is empty".into()));
        }
        self.model.validate()?;
        self.proxy.validate()?;
        self.fdm.validate()?;
        let strikes = self.strikes.strikes();
        if strikes.is_empty() {
            return Err(CliError::Config("no strikes".into()));
        }
        if let Some(k) = strikes.iter().find(|k| !(**k > 0.0) || !k.is_finite()) {
            return Err(CliError::Config(format!("strikes must be positive, got {k}")));
        }
        if let StrikeGrid::Range { min, max, count, .. } = self.strikes {
            if count == 0 || !(min <= max) {
                return Err(CliError::Config(format!("bad strike range [{min}, {max}] x {count}")));
            }
        }
        if self.maturities.is_empty() {
            return Err(CliError::Config("no maturities".into()));
        }
        if let Some(t) = self.maturities.iter().find(|t| !(**t > 0.0) || !t.is_finite()) {
            return Err(CliError::Config(format!("maturities must be positive, got {t}")));
        }
        if !(self.discount > 0.0 && self.discount <= 1.0) {
            return Err(CliError::Config(format!(
                "discount must lie in (0, 1], got {}",
                self.discount
            )));
        }
        Ok(())
    }
}
