//! Cost accounting and the post-run summary.

use std::fmt::Write as _;

use qorseek_core::grpo::{parse_grpo_csv, GrpoStepRow};
use qorseek_core::router::{parse_router_csv, trigger_rate_report};

use crate::config::RunConfig;
use crate::error::{CliError, Result};
use crate::io::*;

/// Synthesis time on the proxy path versus synthesizing every candidate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CostReport {
    /// Candidates generated; an all-real run synthesizes each one.
    pub candidates: usize,
    /// Synthesis calls the router actually made.
    pub synth_calls: usize,
    pub cost_seconds: f64,
}

impl CostReport {
    pub fn proxy_seconds(&self) -> f64 {
        self.synth_calls as f64 * self.cost_seconds
    }

    pub fn all_real_seconds(&self) -> f64 {
        self.candidates as f64 * self.cost_seconds
    }

    /// Proxy over all-real seconds; `None` when nothing was generated.
    pub fn ratio(&self) -> Option<f64> {
        (self.candidates > 0).then(|| self.synth_calls as f64 / self.candidates as f64)
    }

    pub fn render(&self) -> String {
        let ratio = self.ratio().map(|r| format!("{r:.6}")).unwrap_or_else(|| "n/a".into());
        format!(
            "candidates: {}\nsynth_calls: {}\ncost_seconds_per_call: {:.1}\nproxy_synth_seconds: {:.1}\nall_real_synth_seconds: {:.1}\nratio: {ratio}\n",
            self.candidates,
            self.synth_calls,
            self.cost_seconds,
            self.proxy_seconds(),
            self.all_real_seconds()
        )
    }

    /// Parse the `key: value` text written by [`CostReport::render`].
    pub fn parse(text: &str) -> Option<CostReport> {
        let get = |key: &str| text.lines().find_map(|l| l.strip_prefix(key)?.strip_prefix(": ").map(str::trim));
        Some(CostReport {
            candidates: get("candidates")?.parse().ok()?,
            synth_calls: get("synth_calls")?.parse().ok()?,
            cost_seconds: get("cost_seconds_per_call")?.parse().ok()?,
        })
    }
}

/// Rows in each trend window: a tenth of the run, at least one.
pub fn trend_window(n: usize) -> usize {
    n.div_ceil(10).max(1)
}

/// Means of `f` over the first and last tenth of `rows`.
pub fn first_last_means(rows: &[GrpoStepRow], f: impl Fn(&GrpoStepRow) -> f64) -> Option<(f64, f64)> {
    if rows.is_empty() {
        return None;
    }
    let w = trend_window(rows.len());
    let mean = |s: &[GrpoStepRow]| s.iter().map(&f).sum::<f64>() / s.len() as f64;
    Some((mean(&rows[..w]), mean(&rows[rows.len() - w..])))
}

pub const TRIGGER_WINDOWS_HEADER: &str = "first_step,last_step,mean_trigger_rate";
pub const RQ_TREND_HEADER: &str = "metric,first_10pct,last_10pct,delta";

pub fn cmd_report(cfg: &RunConfig) -> Result<String> {
    let grpo_path = artifact(&cfg.out, GRPO_TELEMETRY_FILE);
    let router_path = artifact(&cfg.out, ROUTER_TELEMETRY_FILE);
    let rows = parse_grpo_csv(&read_input(&grpo_path)?)?;
    let router_rows = parse_router_csv(&read_input(&router_path)?)?;
    if rows.is_empty() || router_rows.is_empty() {
        return Err(CliError::missing(&grpo_path, "telemetry has no steps"));
    }

    let mut out = String::new();
    let _ = writeln!(out, "steps: {}", rows.len());

    let windows = trigger_rate_report(&router_rows, cfg.report.window, cfg.oracle.cost_seconds)?;
    let mut wcsv = format!("{TRIGGER_WINDOWS_HEADER}\n");
    let _ = writeln!(out, "trigger rate per {}-step window:", cfg.report.window);
    for w in &windows.windows {
        let _ = writeln!(wcsv, "{},{},{:.6}", w.first_step, w.last_step, w.mean_trigger_rate);
        let _ = writeln!(out, "  steps {:>5}-{:<5} {:.4}", w.first_step, w.last_step, w.mean_trigger_rate);
    }
    write_output(&artifact(&cfg.out, TRIGGER_WINDOWS_FILE), &wcsv)?;

    type Metric = (&'static str, fn(&GrpoStepRow) -> f64);
    let metrics: [Metric; 5] = [
        ("mean_r_q", |r| r.mean_r_q),
        ("mean_r_q_group", |r| r.mean_r_q_group),
        ("mean_r_c", |r| r.mean_r_c),
        ("mean_total", |r| r.mean_total),
        ("trigger_rate", |r| r.trigger_rate),
    ];
    let mut tcsv = format!("{RQ_TREND_HEADER}\n");
    let _ = writeln!(out, "first-10% vs last-10% means ({} steps each):", trend_window(rows.len()));
    for (name, f) in metrics {
        let (a, b) = first_last_means(&rows, f).expect("rows are non-empty");
        let _ = writeln!(tcsv, "{name},{a:.6},{b:.6},{:.6}", b - a);
        let _ = writeln!(out, "  {name:<15} {a:.4} -> {b:.4}");
    }
    write_output(&artifact(&cfg.out, RQ_TREND_FILE), &tcsv)?;
    let (a, b) = first_last_means(&rows, |r| r.mean_r_q).expect("rows are non-empty");
    let _ = writeln!(out, "r_q trend: {:+.4}", b - a);

    let _ = writeln!(
        out,
        "synthesis calls: {} ({:.1} simulated seconds)",
        windows.synth_calls, windows.synth_seconds
    );
    if let Some(cost) = read_optional(&artifact(&cfg.out, COST_REPORT_FILE))?.as_deref().and_then(CostReport::parse) {
        let ratio = cost.ratio().map(|r| format!("{r:.4}")).unwrap_or_else(|| "n/a".into());
        let _ = writeln!(
            out,
            "proxy vs all-real synthesis seconds: {:.1} vs {:.1} (ratio {ratio})",
            cost.proxy_seconds(),
            cost.all_real_seconds()
        );
    }
    if let Some(acc) = read_optional(&artifact(&cfg.out, RM_ACCURACY_FILE))? {
        match acc.lines().skip(1).filter(|l| !l.trim().is_empty()).last() {
            Some(last) => {
                let f: Vec<&str> = last.split(',').collect();
                let cell = |i: usize| f.get(i).filter(|s| !s.is_empty()).copied().unwrap_or("n/a");
                let _ = writeln!(
                    out,
                    "reward model after epoch {}: test dominance accuracy {}, test latency accuracy {}",
                    cell(0),
                    cell(2),
                    cell(4)
                );
            }
            None => {
                let _ = writeln!(out, "reward model: no training epochs recorded");
            }
        }
    }
    write_output(&artifact(&cfg.out, REPORT_FILE), &out)?;
    Ok(out)
}
