//! Experiments assembled from the library: every table cell is a value
//! returned by a library call, only formatted on output.

use lowrank_rkf::convergence::{c_max_bound, fixed_point};
use lowrank_rkf::least_favorable::{build_lf_model, lyapunov_eval, monte_carlo_eval, nominal_eval};
use lowrank_rkf::robust_filter::StepSummary;
use lowrank_rkf::{run_filter, FilterTrace, FilterVariant, RkfError};
use thiserror::Error;

use crate::config::{ExperimentConfig, FilterSpec};
use crate::table::{Cell, Table};

/// Iteration budget of the fixed point diagnostics.
pub const MAX_FIXED_POINT_ITER: usize = 10_000;

/// Default number of Riccati steps behind the bound's `P_bar`.
pub const DEFAULT_RICCATI_STEPS: usize = 50;

#[derive(Debug, Error)]
pub enum RunError {
    #[error("{module} ({context}): {source}")]
    Component { module: &'static str, context: String, source: RkfError },
    #[error("{0}")]
    Usage(String),
}

fn component(module: &'static str, context: impl Into<String>) -> impl FnOnce(RkfError) -> RunError {
    let context = context.into();
    move |source| RunError::Component { module, context, source }
}

pub type RunResult<T> = std::result::Result<T, RunError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Figure {
    TraceP,
    MinEigP,
    TracePTilde,
    MinEigPTilde,
    Theta,
    Nominal,
    LeastFavorable,
    Sweep,
}

impl Figure {
    pub fn from_number(k: u8) -> Option<Self> {
        use Figure::*;
        [TraceP, MinEigP, TracePTilde, MinEigPTilde, Theta, Nominal, LeastFavorable, Sweep]
            .get(usize::from(k).checked_sub(1)?)
            .copied()
    }

    pub fn number(self) -> u8 {
        self as u8 + 1
    }
}

/// Tolerance of the least favorable model in the sweep figure.
pub const SWEEP_ADVERSARY_C: f64 = 0.2;

/// Filters compared in the sweep figure.
pub fn sweep_filters() -> Vec<FilterSpec> {
    vec![
        FilterSpec::new("kf", FilterVariant::Kalman),
        FilterSpec::new("rkf2", FilterVariant::Robust { c: 0.2 }),
        FilterSpec::new("rkf3", FilterVariant::Robust { c: 1.0 }),
        FilterSpec::new("rkf4", FilterVariant::Robust { c: 0.01 }),
    ]
}

pub fn run_traces(cfg: &ExperimentConfig, filters: &[FilterSpec]) -> RunResult<Vec<FilterTrace>> {
    filters
        .iter()
        .map(|f| {
            run_filter(&cfg.model, f.variant, None, cfg.horizon, cfg.tolerances.eps)
                .map_err(component("robust_filter", format!("filter {}", f.name)))
        })
        .collect()
}

fn time_series(
    figure: &str,
    title: &str,
    prefix: &str,
    filters: &[FilterSpec],
    traces: &[FilterTrace],
    from: usize,
    value: impl Fn(&StepSummary) -> Cell,
) -> Table {
    let mut columns = vec!["t".to_string()];
    columns.extend(filters.iter().map(|f| format!("{prefix}_{}", f.name)));
    let mut table = Table::new(figure, title, columns);
    let horizon = traces.first().map_or(0, FilterTrace::horizon);
    for t in from..=horizon {
        let mut row = vec![Cell::Int(t)];
        row.extend(traces.iter().map(|tr| value(&tr.summaries[t])));
        table.push(row);
    }
    table
}

/// Per-step diagnostics of every configured filter.
pub fn filter_table(cfg: &ExperimentConfig) -> RunResult<Table> {
    let traces = run_traces(cfg, &cfg.filters)?;
    let mut columns = vec!["t".to_string()];
    for f in &cfg.filters {
        for q in ["trace_P", "trace_Ptilde", "min_eig_P", "min_eig_Ptilde", "rank_P", "rank_Ptilde", "theta"] {
            columns.push(format!("{q}_{}", f.name));
        }
    }
    let mut table = Table::new("filter", "Filter covariance diagnostics", columns);
    for t in 0..=cfg.horizon {
        let mut row = vec![Cell::Int(t)];
        for tr in &traces {
            let s = &tr.summaries[t];
            row.extend([
                s.trace_p.into(),
                s.trace_p_tilde.into(),
                s.min_eig_p.into(),
                s.min_eig_p_tilde.into(),
                s.rank_p.into(),
                s.rank_p_tilde.into(),
                s.theta.into(),
            ]);
        }
        table.push(row);
    }
    Ok(table)
}

/// Error covariance traces of every configured filter under the nominal model.
pub fn nominal_table(cfg: &ExperimentConfig, figure: &str, title: &str) -> RunResult<Table> {
    let traces = run_traces(cfg, &cfg.filters)?;
    let evals = cfg
        .filters
        .iter()
        .zip(&traces)
        .map(|(f, tr)| {
            nominal_eval(&cfg.model, &tr.gains(), cfg.horizon)
                .map_err(component("least_favorable", format!("nominal evaluation of {}", f.name)))
        })
        .collect::<RunResult<Vec<_>>>()?;
    let mut columns = vec!["t".to_string()];
    columns.extend(cfg.filters.iter().map(|f| format!("nominal_{}", f.name)));
    let mut table = Table::new(figure, title, columns);
    for t in 0..=cfg.horizon {
        let mut row = vec![Cell::Int(t)];
        row.extend(evals.iter().map(|e| Cell::Num(e[t].trace())));
        table.push(row);
    }
    Ok(table)
}

/// Error covariance traces of `filters` under the least favorable model of
/// tolerance `c`, from the Lyapunov recursion and, when `cfg.trials > 0`,
/// from seeded Monte Carlo sampling of the same model.
pub fn adversary_table(
    cfg: &ExperimentConfig,
    c: f64,
    filters: &[FilterSpec],
    figure: &str,
    title: &str,
    with_margin: bool,
) -> RunResult<Table> {
    let builder = run_filter(&cfg.model, FilterVariant::Robust { c }, None, cfg.horizon, cfg.tolerances.eps)
        .map_err(component("robust_filter", format!("adversary trace at c = {c}")))?;
    let lf = build_lf_model(&cfg.model, &builder, cfg.horizon)
        .map_err(component("least_favorable", format!("model at c = {c}")))?;
    let gains: Vec<_> = run_traces(cfg, filters)?.iter().map(FilterTrace::gains).collect();
    let lyap = filters
        .iter()
        .zip(&gains)
        .map(|(f, g)| {
            lyapunov_eval(&lf, g).map_err(component("least_favorable", format!("Lyapunov evaluation of {}", f.name)))
        })
        .collect::<RunResult<Vec<_>>>()?;
    let mc = if cfg.trials > 0 {
        Some(
            monte_carlo_eval(&lf, &gains, cfg.trials, cfg.seed)
                .map_err(component("least_favorable", "Monte Carlo evaluation"))?,
        )
    } else {
        None
    };

    let mut columns = vec!["t".to_string()];
    columns.extend(filters.iter().map(|f| format!("lyap_{}", f.name)));
    if mc.is_some() {
        columns.extend(filters.iter().map(|f| format!("mc_{}", f.name)));
    }
    if with_margin {
        columns.push("lf_margin".to_string());
    }
    let mut table = Table::new(figure, title, columns);
    let mc_traces: Vec<Vec<f64>> = mc.iter().flat_map(|m| (0..filters.len()).map(|k| m.traces(k))).collect();
    for t in 0..=cfg.horizon {
        let mut row = vec![Cell::Int(t)];
        row.extend(lyap.iter().map(|p| Cell::Num(p.block11(t).trace())));
        row.extend(mc_traces.iter().map(|tr| Cell::Num(tr[t])));
        if with_margin {
            row.push(lf.steps.get(t).map(|s| s.margin).into());
        }
        table.push(row);
    }
    Ok(table)
}

/// Fixed point summary for every `kf` and `rkf` filter; the risk-sensitive
/// filters have no tolerance and are left out. Filters that do not
/// converge are reported in the table and returned as errors.
pub fn converge_table(cfg: &ExperimentConfig) -> RunResult<(Table, Vec<RunError>)> {
    let columns = [
        "filter", "c", "status", "iterations", "last_distance", "complement", "theta_inf", "trace_P_inf",
        "trace_Ptilde_inf", "rank_P_inf",
    ];
    let mut table = Table::new("converge", "Fixed point of the robust Riccati iteration", columns.map(String::from).to_vec());
    let mut failures = Vec::new();
    for f in &cfg.filters {
        let c = match f.variant {
            FilterVariant::Kalman => 0.0,
            FilterVariant::Robust { c } => c,
            FilterVariant::RiskSensitive { .. } => continue,
        };
        match fixed_point(&cfg.model, c, cfg.tolerances.conv_tol, MAX_FIXED_POINT_ITER) {
            Ok(fp) => table.push(vec![
                f.name.as_str().into(),
                c.into(),
                "converged".into(),
                fp.iterations.into(),
                fp.last_distance.into(),
                fp.complement.into(),
                fp.theta_inf.into(),
                fp.p_inf.trace().into(),
                fp.p_tilde_inf.trace().into(),
                fp.p_inf.rank().into(),
            ]),
            Err(RkfError::NonConvergence { iterations, last_distance, complement }) => {
                table.push(vec![
                    f.name.as_str().into(),
                    c.into(),
                    "not_converged".into(),
                    iterations.into(),
                    last_distance.into(),
                    complement.into(),
                    f64::NAN.into(),
                    f64::NAN.into(),
                    f64::NAN.into(),
                    Cell::Text(String::new()),
                ]);
                failures.push(RunError::Component {
                    module: "convergence",
                    context: format!("fixed point of {}", f.name),
                    source: RkfError::NonConvergence { iterations, last_distance, complement },
                });
            }
            Err(e) => return Err(component("convergence", format!("fixed point of {}", f.name))(e)),
        }
    }
    Ok((table, failures))
}

/// Explicit tolerance bound with window `window` (default: the state
/// dimension) and `q` Riccati steps, followed by one row per configured
/// robust filter saying whether its tolerance is certified.
pub fn cmax_table(cfg: &ExperimentConfig, window: Option<usize>, q: usize) -> RunResult<Table> {
    let window = window.unwrap_or(cfg.model.state_dim());
    let cert = c_max_bound(&cfg.model, window, q).map_err(component("convergence", format!("c_max with N = {window}, q = {q}")))?;
    let columns = ["item", "window", "riccati_steps", "phi_n", "sigma_max_s", "sigma_max_p_bar", "value", "certified"];
    let mut table = Table::new("cmax", "Certified tolerance bound", columns.map(String::from).to_vec());
    table.push(vec![
        "c_max".into(),
        cert.window.into(),
        cert.riccati_steps.into(),
        cert.phi_n.into(),
        cert.sigma_max_s.into(),
        cert.p_bar_q_r.sigma_max().into(),
        cert.c_max.into(),
        Cell::Text(String::new()),
    ]);
    for f in &cfg.filters {
        if let FilterVariant::Robust { c } = f.variant {
            let blank = || Cell::Text(String::new());
            table.push(vec![
                f.name.as_str().into(),
                blank(),
                blank(),
                blank(),
                blank(),
                blank(),
                c.into(),
                if c < cert.c_max { "yes" } else { "no" }.into(),
            ]);
        }
    }
    Ok(table)
}

/// Table for figure `fig` of the simulation study, using the filters of
/// `cfg` for the first six figures.
pub fn reproduce(cfg: &ExperimentConfig, fig: Figure) -> RunResult<Table> {
    let name = format!("fig{}", fig.number());
    let series = |title: &str, prefix: &str, from: usize, value: fn(&StepSummary) -> Cell| -> RunResult<Table> {
        let filters: Vec<FilterSpec> = if fig == Figure::Theta {
            cfg.filters.iter().filter(|f| f.variant != FilterVariant::Kalman).cloned().collect()
        } else {
            cfg.filters.clone()
        };
        let traces = run_traces(cfg, &filters)?;
        Ok(time_series(&name, title, prefix, &filters, &traces, from, value))
    };
    match fig {
        Figure::TraceP => series("Trace of P_t", "trace_P", 0, |s| s.trace_p.into()),
        Figure::MinEigP => series("Minimum nonnull eigenvalue of P_t", "min_eig_P", 0, |s| s.min_eig_p.into()),
        Figure::TracePTilde => series("Trace of P~_t", "trace_Ptilde", 0, |s| s.trace_p_tilde.into()),
        Figure::MinEigPTilde => {
            series("Minimum nonnull eigenvalue of P~_t", "min_eig_Ptilde", 0, |s| s.min_eig_p_tilde.into())
        }
        Figure::Theta => series("Risk sensitivity theta_t", "theta", 1, |s| s.theta.into()),
        Figure::Nominal => nominal_table(cfg, &name, "Prediction error variance, nominal model"),
        Figure::LeastFavorable => {
            let c = cfg
                .adversary_c
                .ok_or_else(|| RunError::Usage("reproduce fig7 needs adversary_c in the configuration".into()))?;
            let matching = cfg
                .filters
                .iter()
                .find(|f| f.variant == FilterVariant::Robust { c })
                .cloned()
                .unwrap_or_else(|| FilterSpec::new("rkf", FilterVariant::Robust { c }));
            let filters = [FilterSpec::new("kf", FilterVariant::Kalman), matching];
            let title = format!("Prediction error variance, least favorable model c = {c}");
            adversary_table(cfg, c, &filters, &name, &title, false)
        }
        Figure::Sweep => {
            let title = format!("Prediction error variance, least favorable model c = {SWEEP_ADVERSARY_C}");
            adversary_table(cfg, SWEEP_ADVERSARY_C, &sweep_filters(), &name, &title, false)
        }
    }
}
