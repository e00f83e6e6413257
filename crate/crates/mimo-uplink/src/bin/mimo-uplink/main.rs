//! Batch front-end: scenario configs in, tables/CSV out.
//!
//! Exit codes: 0 success, 1 configuration error, 2 runtime error.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde::Serialize;

use mimo_uplink::bussgang::bussgang_mc;
use mimo_uplink::config::{ChainSpec, RunConfig, StageKind};
use mimo_uplink::error::Error;
use mimo_uplink::framework::{
    cascade_gamma_db, estimate_eta_ideal, search_hw_spec, EtaMethod,
};
use mimo_uplink::math::{db_to_lin, lin_to_db};
use mimo_uplink::nonlinearity::NonlinearChain;
use mimo_uplink::powercontrol::{analytic_alpha_no_pc, power_control_factor, PcScheme};
use mimo_uplink::receiver::{ber_monte_carlo, OutageReport};

#[derive(Parser)]
#[command(name = "mimo-uplink", about = "Design and simulate all-digital massive MIMO uplinks with nonlinear receive chains", version)]
struct Cli {
    /// Path to a TOML (or .json) run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override the seed from the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output path; stdout when omitted.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Output format.
    #[arg(long, global = true, default_value = "csv")]
    format: Format,
    /// Worker thread count; defaults to the number of cores.
    #[arg(long, global = true)]
    workers: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
enum Format {
    Csv,
    Json,
}

#[derive(Subcommand)]
enum Command {
    /// Bussgang linearization of each chain stage and the cascade.
    Bussgang,
    /// Map QoS targets to hardware specs (ADC bits, P1dB values).
    Design,
    /// Link-level BER Monte Carlo; bisects the edge SNR meeting the BER
    /// target unless the config pins snr_edge_db.
    Simulate,
    /// Grid of simulate cells over k_users x power control x chain.
    Sweep,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(w) = cli.workers {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(w).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    }
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::Config(_) | Error::InvalidParameter(_) => ExitCode::from(1),
                _ => ExitCode::from(2),
            }
        }
    }
}

fn run(cli: &Cli) -> Result<(), Error> {
    let path = cli
        .config
        .as_deref()
        .ok_or_else(|| Error::Config("--config is required".into()))?;
    let mut config = RunConfig::from_path(path)?;
    if let Some(s) = cli.seed {
        config.seed = s;
    }
    let (rows, failed) = match cli.command {
        Command::Bussgang => (cmd_bussgang(&config)?, false),
        Command::Design => (cmd_design(&config)?, false),
        Command::Simulate => (cmd_simulate(&config)?, false),
        Command::Sweep => cmd_sweep(&config, cli.out.as_deref())?,
    };
    emit(&rows, cli.format, cli.out.as_deref())?;
    if failed {
        return Err(Error::SearchFailed(
            "one or more sweep cells failed; see per-cell status".into(),
        ));
    }
    Ok(())
}

/// One output record; every variant carries the config hash and seed.
#[derive(Serialize)]
#[serde(untagged)]
enum Row {
    Bussgang(BussgangRow),
    Design(DesignRow),
    Simulate(SimulateRow),
    Sweep(SweepRow),
}

fn emit(rows: &[Row], format: Format, out: Option<&Path>) -> Result<(), Error> {
    let bytes = match format {
        Format::Csv => {
            let mut w = csv::Writer::from_writer(Vec::new());
            for r in rows {
                w.serialize(r).map_err(|e| Error::Io(std::io::Error::other(e)))?;
            }
            w.into_inner().map_err(|e| Error::Io(std::io::Error::other(e)))?
        }
        Format::Json => {
            let mut v = serde_json::to_vec_pretty(rows).map_err(|e| Error::Io(std::io::Error::other(e)))?;
            v.push(b'\n');
            v
        }
    };
    match out {
        Some(p) => std::fs::write(p, bytes)?,
        None => std::io::stdout().write_all(&bytes)?,
    }
    Ok(())
}

fn fmt_db(x: f64) -> String {
    if x.is_infinite() {
        "inf".into()
    } else {
        format!("{x:.4}")
    }
}

// ---------------------------------------------------------------- bussgang

#[derive(Serialize)]
struct BussgangRow {
    config_hash: String,
    seed: u64,
    stage: String,
    a: String,
    a_stderr: String,
    sigma_g2: String,
    sigma_stderr: String,
    gamma_g_db: String,
}

/// Per-stage and cascade Bussgang parameters at the normalized operating
/// point (unit input power).
fn cmd_bussgang(config: &RunConfig) -> Result<Vec<Row>, Error> {
    let hash = config.hash();
    let n = config.bussgang.n_samples;
    let mut rows = Vec::new();
    let mut targets: Vec<(String, NonlinearChain)> = Vec::new();
    for (label, stage) in config
        .chain
        .stage_labels()
        .into_iter()
        .zip(&config.chain.stages)
    {
        if stage.kind == StageKind::Gain {
            continue; // linear: a = gain, sigma_g2 = 0
        }
        let single = ChainSpec { stages: vec![stage.clone()] };
        targets.push((label, single.build()?));
    }
    targets.push(("cascade".into(), config.chain.build()?));
    for (i, (label, chain)) in targets.iter().enumerate() {
        if chain.is_identity() {
            rows.push(Row::Bussgang(BussgangRow {
                config_hash: hash.clone(),
                seed: config.seed,
                stage: label.clone(),
                a: "1.000000".into(),
                a_stderr: "0".into(),
                sigma_g2: "0".into(),
                sigma_stderr: "0".into(),
                gamma_g_db: "inf".into(),
            }));
            continue;
        }
        let eval = chain.evaluator(1.0)?;
        let p = bussgang_mc(&eval, 1.0, n, config.seed.wrapping_add(i as u64))?;
        rows.push(Row::Bussgang(BussgangRow {
            config_hash: hash.clone(),
            seed: config.seed,
            stage: label.clone(),
            a: format!("{:.6}", p.a.re),
            a_stderr: format!("{:.2e}", p.a_stderr),
            sigma_g2: format!("{:.6e}", p.sigma_g2),
            sigma_stderr: format!("{:.2e}", p.sigma_stderr),
            gamma_g_db: fmt_db(p.gamma_db()),
        }));
    }
    Ok(rows)
}

// ------------------------------------------------------------------ design

#[derive(Serialize)]
struct DesignRow {
    config_hash: String,
    seed: u64,
    beta: String,
    pc: String,
    b: String,
    p1db_bb_db: String,
    p1db_pb_db: String,
    gamma_g_db: String,
    snr_edge_bound_db: String,
    eta_ideal_db: String,
    eta_gap_db: String,
    alpha_p_db: String,
    status: String,
}

fn pc_name(s: PcScheme) -> &'static str {
    match s {
        PcScheme::None => "none",
        PcScheme::Naive => "naive",
        PcScheme::Adaptive => "adaptive",
    }
}

/// Effective alpha_p for a scheme: closed form without power control,
/// exactly 1 for naive equalization, Monte Carlo ensemble for adaptive.
fn alpha_p_for(
    config: &RunConfig,
    k_users: usize,
    scheme: PcScheme,
    snr_edge_db: f64,
) -> Result<f64, Error> {
    match scheme {
        PcScheme::None => analytic_alpha_no_pc(config.scenario.r_min_m, config.scenario.r_max_m),
        PcScheme::Naive => Ok(1.0),
        PcScheme::Adaptive => {
            let mut sc = config.scenario.clone();
            sc.k_users = k_users;
            sc.power_control.scheme = PcScheme::Adaptive;
            let link = sc.to_link_scenario(snr_edge_db)?;
            let geometry = link.geometry;
            let sigma_n2 = link.sigma_n2();
            let mut acc = 0.0;
            let n_drops = 50;
            for d in 0..n_drops {
                let mut drop = mimo_uplink::channel::drop_users(
                    &geometry,
                    k_users,
                    link.r_min,
                    link.r_max,
                    link.min_separation,
                    config.seed ^ ((d as u64).wrapping_mul(0x9e3779b97f4a7c15) | 1),
                )?;
                mimo_uplink::powercontrol::apply(
                    &link.power_control,
                    &mut drop,
                    &geometry,
                    sigma_n2,
                    f64::INFINITY,
                )?;
                acc += lin_to_db(power_control_factor(&drop, &geometry));
            }
            Ok(db_to_lin(acc / n_drops as f64))
        }
    }
}

/// Contour value at one gamma (linear in, linear out, None if infeasible).
fn contour_at(target: f64, eta: f64, beta: f64, alpha: f64, gamma: f64) -> Option<f64> {
    let denom = eta / target - beta / (gamma * alpha);
    (denom > 0.0).then(|| (1.0 + gamma) / gamma / denom)
}

/// Knee rule: walk the contour from low gamma and stop where the local
/// slope flattens past -1 dB of edge SNR per dB of gamma; beyond that
/// point extra chain fidelity buys less than it costs.
fn knee_gamma_db(target: f64, eta: f64, beta: f64, alpha: f64) -> Result<f64, Error> {
    let step = 0.25;
    let grid: Vec<f64> = (0..=200).map(|i| i as f64 * step).collect();
    let vals: Vec<Option<f64>> = grid
        .iter()
        .map(|&g| contour_at(target, eta, beta, alpha, db_to_lin(g)))
        .collect();
    for i in 0..grid.len() - 1 {
        if let (Some(a), Some(b)) = (vals[i], vals[i + 1]) {
            let slope = (lin_to_db(b) - lin_to_db(a)) / step;
            if slope > -1.0 {
                return Ok(grid[i]);
            }
        }
    }
    Err(Error::SearchFailed("contour infeasible for every gamma up to 50 dB".into()))
}

fn cmd_design(config: &RunConfig) -> Result<Vec<Row>, Error> {
    let hash = config.hash();
    let d = &config.design;
    if d.rows.is_empty() {
        return Err(Error::Config("design.rows must list at least one (k_users, power_control)".into()));
    }
    let target = db_to_lin(d.sinr_target_db);
    let pgrid = d.p1db_grid()?;
    let n_ant = config.scenario.n_antennas as f64;
    let mut out = Vec::new();
    for row in &d.rows {
        let beta = row.k_users as f64 / n_ant;
        let mut sc = config.scenario.clone();
        sc.k_users = row.k_users;
        sc.power_control.scheme = row.power_control;
        // eta_ideal for this beta/PC (placeholder SNR edge; ideal system)
        let eta = match d.eta_ideal_db {
            Some(v) => db_to_lin(v),
            None => {
                let link = sc.to_link_scenario(20.0)?;
                estimate_eta_ideal(&link, target, d.n_eta_drops, config.seed, EtaMethod::SinrQuantile)?.eta
            }
        };
        let alpha = alpha_p_for(config, row.k_users, row.power_control, 20.0)?;
        let mut push = |b, pb, bb, g, bound, status: &str| {
            out.push(Row::Design(DesignRow {
                config_hash: hash.clone(),
                seed: config.seed,
                beta: format!("{beta:.6}"),
                pc: pc_name(row.power_control).into(),
                b,
                p1db_bb_db: bb,
                p1db_pb_db: pb,
                gamma_g_db: g,
                snr_edge_bound_db: bound,
                eta_ideal_db: format!("{:.2}", lin_to_db(eta)),
                eta_gap_db: format!("{:.2}", -lin_to_db(eta)),
                alpha_p_db: format!("{:.2}", lin_to_db(alpha)),
                status: status.into(),
            }));
        };
        let gamma_target_db = match row
            .gamma_target_db
            .map(Ok)
            .unwrap_or_else(|| knee_gamma_db(target, eta, beta, alpha))
        {
            Ok(g) => g,
            Err(e) => {
                push("".into(), "".into(), "".into(), "".into(), "".into(), &format!("infeasible: {e}"));
                continue;
            }
        };
        match search_hw_spec(gamma_target_db, &d.bits_grid, &pgrid, &pgrid, d.n_gamma_samples, config.seed) {
            Ok(points) => {
                let p = points[0];
                let bound = contour_at(target, eta, beta, alpha, db_to_lin(p.gamma_g_db))
                    .map(|v| fmt_db(lin_to_db(v)))
                    .unwrap_or_else(|| "".into());
                push(
                    p.bits.to_string(),
                    format!("{:.1}", p.p1db_bb_db),
                    format!("{:.1}", p.p1db_pb_db),
                    fmt_db(p.gamma_g_db),
                    bound,
                    "ok",
                );
            }
            Err(e) => push("".into(), "".into(), "".into(), "".into(), "".into(), &format!("infeasible: {e}")),
        }
    }
    Ok(out)
}

// ---------------------------------------------------------------- simulate

#[derive(Serialize)]
struct SimulateRow {
    config_hash: String,
    seed: u64,
    record: String,
    snr_edge_db: String,
    drop: String,
    user: String,
    ber: String,
    sinr_db: String,
    sinr_sim_db: String,
    quantile_ber: String,
    snr_edge_sim_db: String,
}

struct SimOutcome {
    report: OutageReport,
    snr_edge_db: f64,
    /// SNR_edge at which the availability BER target is met; equals
    /// `snr_edge_db` after bisection, absent for pinned-SNR runs.
    bisected: bool,
}

fn run_simulation(config: &RunConfig, chain_spec: &ChainSpec, k_users: usize, pc: PcScheme) -> Result<SimOutcome, Error> {
    let s = &config.simulate;
    let chain = chain_spec.build()?;
    let gamma = if chain.is_identity() {
        f64::INFINITY
    } else {
        db_to_lin(cascade_gamma_db(&chain, s.n_gamma_samples, config.seed)?)
    };
    let mut sc = config.scenario.clone();
    sc.k_users = k_users;
    sc.power_control.scheme = pc;
    let eval = |snr_edge_db: f64| -> Result<OutageReport, Error> {
        let link = sc.to_link_scenario(snr_edge_db)?;
        ber_monte_carlo(&link, &chain, gamma, s.n_symbols, s.n_drops, config.seed)
    };
    if let Some(fixed) = s.snr_edge_db {
        return Ok(SimOutcome { report: eval(fixed)?, snr_edge_db: fixed, bisected: false });
    }
    // bisection: find the lowest edge SNR whose availability-quantile BER
    // meets the target
    let (mut lo, mut hi) = (s.snr_edge_min_db, s.snr_edge_max_db);
    let at_hi = eval(hi)?;
    if at_hi.quantile_ber > s.target_ber {
        return Err(Error::SearchFailed(format!(
            "BER target {:.1e} unreachable: quantile BER {:.2e} at {hi} dB",
            s.target_ber, at_hi.quantile_ber
        )));
    }
    let mut best = (hi, at_hi);
    while hi - lo > s.bisect_tol_db {
        let mid = 0.5 * (lo + hi);
        let r = eval(mid)?;
        if r.quantile_ber <= s.target_ber {
            hi = mid;
            best = (mid, r);
        } else {
            lo = mid;
        }
    }
    Ok(SimOutcome { report: best.1, snr_edge_db: best.0, bisected: true })
}

fn simulate_rows(
    config: &RunConfig,
    outcome: &SimOutcome,
    k_users: usize,
    hash: &str,
) -> Vec<Row> {
    let mut rows = Vec::new();
    let r = &outcome.report;
    for (i, ((ber, sinr), sinr_sim)) in r
        .per_user_ber
        .iter()
        .zip(&r.per_user_sinr)
        .zip(&r.per_user_sinr_sim)
        .enumerate()
    {
        rows.push(Row::Simulate(SimulateRow {
            config_hash: hash.into(),
            seed: config.seed,
            record: "user".into(),
            snr_edge_db: format!("{:.4}", outcome.snr_edge_db),
            drop: (i / k_users).to_string(),
            user: (i % k_users).to_string(),
            ber: format!("{ber:.6e}"),
            sinr_db: fmt_db(lin_to_db(*sinr)),
            sinr_sim_db: fmt_db(lin_to_db(*sinr_sim)),
            quantile_ber: "".into(),
            snr_edge_sim_db: "".into(),
        }));
    }
    rows.push(Row::Simulate(SimulateRow {
        config_hash: hash.into(),
        seed: config.seed,
        record: "summary".into(),
        snr_edge_db: format!("{:.4}", outcome.snr_edge_db),
        drop: "".into(),
        user: "".into(),
        ber: "".into(),
        sinr_db: "".into(),
        sinr_sim_db: "".into(),
        quantile_ber: format!("{:.6e}", r.quantile_ber),
        snr_edge_sim_db: if outcome.bisected {
            format!("{:.4}", outcome.snr_edge_db)
        } else {
            "".into()
        },
    }));
    rows
}

fn cmd_simulate(config: &RunConfig) -> Result<Vec<Row>, Error> {
    let hash = config.hash();
    let outcome = run_simulation(config, &config.chain, config.scenario.k_users, config.scenario.power_control.scheme)?;
    Ok(simulate_rows(config, &outcome, config.scenario.k_users, &hash))
}

// ------------------------------------------------------------------- sweep

#[derive(Serialize, serde::Deserialize)]
struct SweepRow {
    config_hash: String,
    seed: u64,
    cell: usize,
    k_users: usize,
    pc: String,
    chain: String,
    status: String,
    snr_edge_db: String,
    quantile_ber: String,
}

/// Runs every (k_users, pc, chain) cell with the sweep's simulate
/// parameters. Per-cell completion markers next to `out` make interrupted
/// sweeps resumable: finished cells are loaded from their marker files.
fn cmd_sweep(config: &RunConfig, out: Option<&Path>) -> Result<(Vec<Row>, bool), Error> {
    let sweep = config
        .sweep
        .as_ref()
        .ok_or_else(|| Error::Config("sweep section missing".into()))?;
    let hash = config.hash();
    let marker_dir = out.map(|p| p.with_extension("cells"));
    if let Some(d) = &marker_dir {
        std::fs::create_dir_all(d)?;
    }
    let mut sim_config = config.clone();
    sim_config.simulate = sweep.simulate.clone();
    let mut rows = Vec::new();
    let mut any_failed = false;
    let mut cell = 0usize;
    for &k in &sweep.k_users_grid {
        for &pc in &sweep.power_control_grid {
            for (ci, chain) in sweep.chains.iter().enumerate() {
                let marker = marker_dir.as_ref().map(|d| d.join(format!("cell_{cell}.json")));
                if let Some(m) = &marker {
                    if let Ok(text) = std::fs::read_to_string(m) {
                        if let Ok(row) = serde_json::from_str::<SweepRow>(&text) {
                            rows.push(Row::Sweep(row));
                            cell += 1;
                            continue;
                        }
                    }
                }
                let label = format!("chain_{ci}:{}", chain.stage_labels().join(" | "));
                let row = match run_simulation(&sim_config, chain, k, pc) {
                    Ok(o) => SweepRow {
                        config_hash: hash.clone(),
                        seed: config.seed,
                        cell,
                        k_users: k,
                        pc: pc_name(pc).into(),
                        chain: label,
                        status: "ok".into(),
                        snr_edge_db: format!("{:.4}", o.snr_edge_db),
                        quantile_ber: format!("{:.6e}", o.report.quantile_ber),
                    },
                    Err(e) => {
                        any_failed = true;
                        SweepRow {
                            config_hash: hash.clone(),
                            seed: config.seed,
                            cell,
                            k_users: k,
                            pc: pc_name(pc).into(),
                            chain: label,
                            status: format!("failed: {e}"),
                            snr_edge_db: "".into(),
                            quantile_ber: "".into(),
                        }
                    }
                };
                if let Some(m) = &marker {
                    std::fs::write(m, serde_json::to_string(&row).map_err(|e| Error::Io(std::io::Error::other(e)))?)?;
                }
                rows.push(Row::Sweep(row));
                cell += 1;
            }
        }
    }
    Ok((rows, any_failed))
}
