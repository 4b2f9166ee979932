//! The subcommands, each producing a table of long-format rows.

use std::collections::BTreeMap;

use heatvol::expansion::{hklw, ExpansionResult, Order, Proxy, SabrExpansion, Validity};
use heatvol::fdm::{convergence_report, solve_options, Refinement};
use heatvol::pricers::{black_price, OptionSpec};
use heatvol::SabrParams;
use rayon::prelude::*;

use crate::config::{Method, Payoff, RunConfig};
use crate::error::Result;

/// One output line: `method,K,T,value,flag`.
#[derive(Debug, Clone, PartialEq)]
pub struct Row {
    pub method: String,
    pub strike: f64,
    pub maturity: f64,
    pub value: f64,
    pub flag: String,
}

/// Rows sorted by method, maturity and strike, plus the number of cells
/// that could not be computed.
#[derive(Debug, Clone, Default)]
pub struct Table {
    pub rows: Vec<Row>,
    pub failed: usize,
}

impl Table {
    fn push(&mut self, method: &str, strike: f64, maturity: f64, cell: Cell) {
        let (value, flag) = match cell {
            Ok((value, flag)) => (value, flag),
            Err(e) => {
                log::error!("{method} K={strike} T={maturity}: {e}");
                self.failed += 1;
                (f64::NAN, "error".to_string())
            }
        };
        self.rows.push(Row {
            method: method.to_string(),
            strike,
            maturity,
            value,
            flag,
        });
    }

    fn sort(&mut self, rank: impl Fn(&str) -> usize) {
        self.rows.sort_by(|a, b| {
            rank(&a.method)
                .cmp(&rank(&b.method))
                .then(a.maturity.total_cmp(&b.maturity))
                .then(a.strike.total_cmp(&b.strike))
        });
    }
}

type Cell = std::result::Result<(f64, String), heatvol::Error>;

/// Grid price and its Black volatility, if any.
type GridCell = heatvol::Result<(f64, Option<f64>)>;

/// Largest absolute relative error of one method at one maturity.
#[derive(Debug, Clone, PartialEq)]
pub struct Summary {
    pub method: String,
    pub maturity: f64,
    pub max_abs_error: f64,
}

pub fn flag(v: &Validity) -> String {
    match (v.beyond_bound, v.non_positive) {
        (false, false) => "ok",
        (true, false) => "beyond-bound",
        (false, true) => "non-positive",
        (true, true) => "beyond-bound+non-positive",
    }
    .to_string()
}

fn method_rank(name: &str) -> usize {
    Method::ALL
        .iter()
        .position(|m| m.name() == name)
        .unwrap_or(Method::ALL.len())
}

/// Expansion behind a method, or `None` for the non-expansion methods.
fn expansion(config: &RunConfig, method: Method) -> Option<(SabrParams, Proxy, Order)> {
    let plain = config.model.without_mean_reversion();
    match method {
        Method::Order1 => Some((plain, config.proxy, Order::One)),
        Method::Order2 => Some((plain, config.proxy, Order::Two)),
        Method::CevProxy => Some((plain, Proxy::Cev { beta0: plain.beta }, Order::Two)),
        Method::MeanReverting => Some((config.model, config.proxy, Order::Two)),
        Method::Hklw | Method::Fdm => None,
    }
}

fn unique(methods: &[Method]) -> Vec<Method> {
    let mut m = methods.to_vec();
    m.sort();
    m.dedup();
    m
}

fn cells(config: &RunConfig) -> Vec<(f64, f64)> {
    let strikes = config.strikes.strikes();
    config
        .maturities
        .iter()
        .flat_map(|&t| strikes.iter().map(move |&k| (k, t)))
        .collect()
}

fn spec(config: &RunConfig, strike: f64, maturity: f64) -> OptionSpec {
    let call = match config.option {
        Payoff::Call => true,
        Payoff::Put => false,
        Payoff::Otm => strike >= config.model.f0,
    };
    let s = if call {
        OptionSpec::call(strike, maturity)
    } else {
        OptionSpec::put(strike, maturity)
    };
    s.with_discount(config.discount)
}

/// Evaluates an expansion method on every cell, in parallel.
fn expansion_cells<F>(config: &RunConfig, method: Method, value: F) -> Vec<((f64, f64), Cell)>
where
    F: Fn(&ExpansionResult) -> Cell + Sync,
{
    let (params, proxy, order) = expansion(config, method).expect("expansion method");
    let ex = SabrExpansion::with_config(&params, proxy, config.expansion);
    cells(config)
        .into_par_iter()
        .map(|(k, t)| {
            let cell = match &ex {
                Ok(ex) => ex.evaluate(k, t, order).and_then(|r| value(&r)),
                Err(e) => Err(e.clone()),
            };
            ((k, t), cell)
        })
        .collect()
}

/// Black-equivalent volatility of an assembled expansion. With the Black
/// proxy this is the assembled value itself, negative or not.
fn smile_value(config: &RunConfig, r: &ExpansionResult) -> Cell {
    let f = flag(&r.validity);
    match r.black_vol(config.model.f0) {
        Ok(v) => Ok((v, f)),
        Err(_) if r.validity.non_positive => Ok((f64::NAN, f)),
        Err(e) => Err(e),
    }
}

/// Finite difference prices and Black implied volatilities, one solve per
/// maturity.
fn fdm_cells(config: &RunConfig) -> Vec<((f64, f64), GridCell)> {
    let strikes = config.strikes.strikes();
    let mut out = Vec::new();
    for &t in &config.maturities {
        let specs: Vec<OptionSpec> = strikes.iter().map(|&k| spec(config, k, t)).collect();
        match solve_options(&config.model, &specs, &config.fdm) {
            Ok(sol) => out.extend(
                sol.quotes
                    .into_iter()
                    .map(|q| ((q.spec.strike, t), Ok((q.price, q.black_vol)))),
            ),
            Err(e) => out.extend(strikes.iter().map(|&k| ((k, t), Err(e.clone())))),
        }
    }
    out
}

/// Implied volatility per method, strike and maturity.
pub fn smile(config: &RunConfig) -> Result<Table> {
    config.validate()?;
    let mut table = Table::default();
    for method in unique(&config.methods) {
        let name = method.name();
        let results = match method {
            Method::Hklw => {
                let p = config.model.without_mean_reversion();
                cells(config)
                    .into_par_iter()
                    .map(|(k, t)| ((k, t), hklw(&p, k, t).map(|v| (v, "ok".to_string()))))
                    .collect()
            }
            Method::Fdm => fdm_cells(config)
                .into_iter()
                .map(|(c, cell)| {
                    let cell = cell.map(|(_, vol)| match vol {
                        Some(v) => (v, "ok".to_string()),
                        None => (f64::NAN, "no-implied".to_string()),
                    });
                    (c, cell)
                })
                .collect(),
            _ => expansion_cells(config, method, |r| smile_value(config, r)),
        };
        for ((k, t), cell) in results {
            table.push(name, k, t, cell);
        }
    }
    table.sort(method_rank);
    Ok(table)
}

/// Relative errors `σ/σ_ref − 1` against the reference method, and the
/// largest absolute error per method and maturity.
pub fn compare(config: &RunConfig) -> Result<(Table, Vec<Summary>)> {
    config.validate()?;
    let mut all = config.clone();
    if !all.methods.contains(&config.reference) {
        all.methods.push(config.reference);
    }
    let smiles = smile(&all)?;
    let reference = config.reference.name();
    let lookup: BTreeMap<(u64, u64), &Row> = smiles
        .rows
        .iter()
        .filter(|r| r.method == reference)
        .map(|r| ((r.maturity.to_bits(), r.strike.to_bits()), r))
        .collect();

    let mut table = Table {
        rows: Vec::new(),
        failed: smiles.failed,
    };
    let mut worst: BTreeMap<(usize, u64), (String, f64, f64)> = BTreeMap::new();
    for row in smiles.rows.iter().filter(|r| config.methods.iter().any(|m| m.name() == r.method)) {
        let base = lookup[&(row.maturity.to_bits(), row.strike.to_bits())];
        let err = row.value / base.value - 1.0;
        let flag = if base.flag == "ok" {
            row.flag.clone()
        } else {
            format!("reference-{}", base.flag)
        };
        table.rows.push(Row {
            value: err,
            flag,
            ..row.clone()
        });
        let entry = worst
            .entry((method_rank(&row.method), row.maturity.to_bits()))
            .or_insert((row.method.clone(), row.maturity, 0.0));
        if err.is_finite() {
            entry.2 = entry.2.max(err.abs());
        }
    }
    table.sort(method_rank);
    let summary = worst
        .into_values()
        .map(|(method, maturity, max_abs_error)| Summary {
            method,
            maturity,
            max_abs_error,
        })
        .collect();
    Ok((table, summary))
}

/// Discounted option prices per method: expansions priced with their proxy,
/// the lognormal baseline with Black, and the finite difference solution.
pub fn price(config: &RunConfig) -> Result<Table> {
    config.validate()?;
    let f0 = config.model.f0;
    let mut table = Table::default();
    for method in unique(&config.methods) {
        let name = method.name();
        let results: Vec<((f64, f64), Cell)> = match method {
            Method::Hklw => {
                let p = config.model.without_mean_reversion();
                cells(config)
                    .into_par_iter()
                    .map(|(k, t)| {
                        let s = spec(config, k, t);
                        let cell = hklw(&p, k, t).and_then(|v| black_price(f0, &s, v)).map(|v| (v, "ok".into()));
                        ((k, t), cell)
                    })
                    .collect()
            }
            Method::Fdm => fdm_cells(config)
                .into_iter()
                .map(|(c, cell)| (c, cell.map(|(price, _)| (price, "ok".to_string()))))
                .collect(),
            _ => expansion_cells(config, method, |r| {
                let f = flag(&r.validity);
                if r.sigma <= 0.0 {
                    return Ok((f64::NAN, f));
                }
                let s = spec(config, r.strike, r.maturity);
                r.proxy.price(f0, &s, r.sigma).map(|v| (v, f))
            }),
        };
        for ((k, t), cell) in results {
            table.push(name, k, t, cell);
        }
    }
    table.sort(method_rank);
    Ok(table)
}

const CONVERGENCE_ROWS: [&str; 6] = [
    "space-order",
    "space-extrapolated",
    "space-error",
    "time-order",
    "time-extrapolated",
    "time-error",
];

/// Observed orders of the finite difference price under grid doubling.
pub fn fdm_convergence(config: &RunConfig) -> Result<Table> {
    config.validate()?;
    let cases = match config.convergence {
        Some(c) => vec![(c.strike, c.maturity)],
        None => cells(config),
    };
    let mut table = Table::default();
    for (k, t) in cases {
        let s = spec(config, k, t);
        match convergence_report(&config.model, &s, &config.convergence_grid) {
            Ok(r) => {
                let parts = |x: &Refinement| [x.order, x.extrapolated, x.error_estimate];
                let values = parts(&r.spatial).into_iter().chain(parts(&r.temporal));
                for (name, v) in CONVERGENCE_ROWS.iter().zip(values) {
                    table.push(name, k, t, Ok((v, "ok".into())));
                }
            }
            Err(e) => {
                for name in CONVERGENCE_ROWS {
                    table.push(name, k, t, Err(e.clone()));
                }
            }
        }
    }
    table.sort(|m| CONVERGENCE_ROWS.iter().position(|n| *n == m).unwrap_or(0));
    Ok(table)
}
