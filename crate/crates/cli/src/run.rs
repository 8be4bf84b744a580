//! The subcommands: state generation, training grids, sweeps and diagnostics.

use std::fs;
use std::path::{Path, PathBuf};

use fedhpd_core::diagnostics::{chebyshev_samples, gradient_variance, lipschitz_probe, ProbeSettings, VarianceReport};
use fedhpd_core::env::{fmt_f64, generate_public_states, Provenance, PublicStateSet, STATE_DIM};
use fedhpd_core::federation::{aggregate, FedRunConfig, Federation, RoundRecord};
use fedhpd_core::policy::Policy;
use fedhpd_core::{Error, Result};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::config::{Cell, ExperimentConfig, Mode, PublicSource, FINAL_WINDOW};
use crate::stats::{mean, pooled_sd, sample_sd, tail_mean};

pub const METRICS_COLUMNS: [&str; 12] = [
    "run_id",
    "seed",
    "mode",
    "d",
    "round",
    "agent_id",
    "episode_return",
    "discounted_return",
    "kl_loss",
    "grad_norm",
    "kl_grad_norm",
    "bytes",
];

pub const SUMMARY_COLUMNS: [&str; 7] = ["run_id", "mode", "d", "seed", "status", "final_window_mean", "all_rounds_mean"];

pub const SETTING_COLUMNS: [&str; 12] = [
    "mode",
    "d",
    "n_seeds",
    "final_window_mean",
    "final_window_sd",
    "all_rounds_mean",
    "all_rounds_sd",
    "margin_vs_nofed",
    "pooled_sd_vs_nofed",
    "beats_nofed",
    "next_d",
    "not_below_next_d",
];

pub const DIAGNOSTICS_COLUMNS: [&str; 27] = [
    "repeat",
    "n_samples",
    "param_count",
    "var_j",
    "var_j_per_coord",
    "var_kl",
    "cov",
    "var_prime_direct",
    "var_prime_reconstructed",
    "identity_residual",
    "second_moment_j",
    "second_moment_prime",
    "mean_grad_j_norm",
    "kl_grad_norm",
    "kl_loss",
    "cos_angle",
    "norm_ratio",
    "condition_holds",
    "condition_vacuous",
    "chebyshev_samples",
    "lipschitz_max",
    "lipschitz_mean",
    "g_estimate",
    "m_estimate",
    "kl_smoothness_bound",
    "j_smoothness_bound",
    "within_kl_bound",
];

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |e| Error::Io(e).context(path.display().to_string())
}

fn csv_err(e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => Error::Format(format!("csv: {other:?}")),
    }
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
    }
    fs::write(path, bytes).map_err(io_err(path))
}

fn csv_bytes(header: &[&str], rows: &[Vec<String>]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header).map_err(csv_err)?;
    for r in rows {
        w.write_record(r).map_err(csv_err)?;
    }
    w.into_inner().map_err(|e| Error::Format(format!("csv: {e}")))
}

fn opt_f64(v: Option<f64>) -> String {
    v.map(fmt_f64).unwrap_or_default()
}

/// Sidecar path for a state file: `states.txt` -> `states.txt.provenance.toml`.
pub fn provenance_path(states: &Path) -> PathBuf {
    let mut name = states.as_os_str().to_owned();
    name.push(".provenance.toml");
    PathBuf::from(name)
}

fn provenance_text(set: &PublicStateSet, cfg: &ExperimentConfig) -> String {
    let stamp = std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map_or(0, |d| d.as_secs());
    let mut out = format!("env = \"{}\"\nsize = {}\n", cfg.env.name(), set.len());
    match &set.provenance {
        Provenance::Generated { seed, warmup_rounds, rollouts } => {
            out.push_str(&format!(
                "source = \"generate\"\nseed = {seed}\nwarmup_rounds = {warmup_rounds}\nrollouts = {rollouts}\n"
            ));
        }
        Provenance::Loaded => {
            if let PublicSource::File(p) = &cfg.public.source {
                out.push_str(&format!("source = \"file\"\npath = {:?}\n", p.display().to_string()));
            }
        }
        Provenance::Manual => out.push_str("source = \"manual\"\n"),
    }
    out.push_str(&format!("generated_unix_time = {stamp}\n"));
    out
}

pub fn load_states(path: &Path) -> Result<PublicStateSet> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    let set = PublicStateSet::parse(&text).map_err(|e| e.context(path.display().to_string()))?;
    if set.dim() != STATE_DIM {
        return Err(Error::Config(format!("{}: states have dimension {}, expected {STATE_DIM}", path.display(), set.dim())));
    }
    Ok(set)
}

/// The public state set the configuration asks for.
pub fn obtain_public(cfg: &ExperimentConfig) -> Result<PublicStateSet> {
    match &cfg.public.source {
        PublicSource::Generate => generate_public_states(
            &cfg.env_spec(),
            cfg.public.warmup,
            cfg.public.rollouts,
            cfg.public.size,
            cfg.public.seed,
        ),
        PublicSource::File(p) => load_states(p),
    }
}

/// Writes a state file and its provenance sidecar.
pub fn write_states(path: &Path, set: &PublicStateSet, cfg: &ExperimentConfig) -> Result<()> {
    write_file(path, set.to_text().as_bytes())?;
    write_file(&provenance_path(path), provenance_text(set, cfg).as_bytes())
}

/// `generate-states`: generates the configured set and writes it to `path`.
pub fn generate_states(cfg: &ExperimentConfig, path: &Path) -> Result<PublicStateSet> {
    let set = generate_public_states(&cfg.env_spec(), cfg.public.warmup, cfg.public.rollouts, cfg.public.size, cfg.public.seed)?;
    write_states(path, &set, cfg)?;
    Ok(set)
}

#[derive(Debug, Clone, PartialEq)]
pub struct CellSummary {
    pub cell: Cell,
    pub final_mean: f64,
    pub all_mean: f64,
    pub error: Option<String>,
}

struct CellOutput {
    summary: CellSummary,
    csv: Vec<u8>,
    snapshots: Vec<(usize, Vec<u8>)>,
}

fn metric_rows(cell: &Cell, records: &[RoundRecord]) -> Vec<Vec<String>> {
    let run_id = cell.run_id();
    let d = cell.d_label();
    let mut rows = Vec::new();
    for rec in records {
        let k = rec.stats.len() as f64;
        let head = |agent: String| vec![run_id.clone(), cell.seed.to_string(), cell.mode.name().into(), d.clone(), rec.round.to_string(), agent];
        let upload = rec.consensus.as_ref().map(|c| c.consensus.encoded_len());
        for (i, s) in rec.stats.iter().enumerate() {
            let mut row = head(s.agent_id.to_string());
            row.extend([
                fmt_f64(s.mean_return()),
                fmt_f64(s.mean_discounted_return()),
                opt_f64(rec.consensus.as_ref().map(|c| c.kl_losses[i])),
                fmt_f64(s.grad_norm),
                opt_f64(rec.consensus.as_ref().map(|c| c.kl_grad_norms[i])),
                upload.unwrap_or(0).to_string(),
            ]);
            rows.push(row);
        }
        let mut row = head("system".into());
        row.extend([
            fmt_f64(rec.system_return()),
            fmt_f64(rec.stats.iter().map(|s| s.mean_discounted_return()).sum::<f64>() / k),
            opt_f64(rec.consensus.as_ref().map(|c| c.kl_losses.iter().sum::<f64>() / k)),
            fmt_f64(rec.stats.iter().map(|s| s.grad_norm).sum::<f64>() / k),
            opt_f64(rec.consensus.as_ref().map(|c| c.kl_grad_norms.iter().sum::<f64>() / k)),
            rec.bytes().to_string(),
        ]);
        rows.push(row);
    }
    rows
}

fn run_cell(cfg: &ExperimentConfig, cell: Cell, public: Option<&PublicStateSet>) -> Result<CellOutput> {
    let fc = FedRunConfig {
        env: cfg.env_spec(),
        agents: cfg.agents.clone(),
        rounds: cfg.rounds,
        interval: cell.interval(),
        seed: cell.seed,
    };
    let public = if cell.mode == Mode::FedHpd { public.cloned() } else { None };
    let mut fed = Federation::new(&fc, public)?;
    let records = fed.run().map_err(|e| e.context(cell.run_id()))?;
    let system: Vec<f64> = records.iter().map(RoundRecord::system_return).collect();
    let csv = csv_bytes(&METRICS_COLUMNS, &metric_rows(&cell, &records))?;
    let mut snapshots = Vec::new();
    if cfg.snapshots {
        for a in &fed.agents {
            let mut buf = Vec::new();
            a.policy.write_snapshot(&mut buf)?;
            snapshots.push((a.id(), buf));
        }
    }
    Ok(CellOutput {
        summary: CellSummary { cell, final_mean: tail_mean(&system, FINAL_WINDOW), all_mean: mean(&system), error: None },
        csv,
        snapshots,
    })
}

/// Aggregate over seeds for one (mode, interval) setting.
#[derive(Debug, Clone, PartialEq)]
pub struct SettingSummary {
    pub mode: Mode,
    pub d: Option<usize>,
    pub finals: Vec<f64>,
    pub alls: Vec<f64>,
    pub margin_vs_nofed: Option<f64>,
    pub pooled_sd_vs_nofed: Option<f64>,
    pub next_d: Option<usize>,
    pub not_below_next_d: Option<bool>,
}

impl SettingSummary {
    pub fn final_mean(&self) -> f64 {
        mean(&self.finals)
    }

    pub fn beats_nofed(&self) -> Option<bool> {
        Some(self.margin_vs_nofed? > self.pooled_sd_vs_nofed?)
    }

    fn row(&self) -> Vec<String> {
        vec![
            self.mode.name().into(),
            self.d.map_or("inf".into(), |d| d.to_string()),
            self.finals.len().to_string(),
            fmt_f64(mean(&self.finals)),
            fmt_f64(sample_sd(&self.finals)),
            fmt_f64(mean(&self.alls)),
            fmt_f64(sample_sd(&self.alls)),
            opt_f64(self.margin_vs_nofed),
            opt_f64(self.pooled_sd_vs_nofed),
            self.beats_nofed().map(|b| b.to_string()).unwrap_or_default(),
            self.next_d.map(|d| d.to_string()).unwrap_or_default(),
            self.not_below_next_d.map(|b| b.to_string()).unwrap_or_default(),
        ]
    }
}

/// Groups successful cells by setting and adds the comparisons against
/// NoFed and against the next larger interval, each up to one pooled sd.
pub fn summarize_settings(cells: &[CellSummary]) -> Vec<SettingSummary> {
    let mut keys: Vec<(Mode, Option<usize>)> = cells.iter().map(|c| (c.cell.mode, c.cell.d)).collect();
    keys.sort();
    keys.dedup();
    let mut out: Vec<SettingSummary> = keys
        .into_iter()
        .map(|(mode, d)| {
            let ok = cells.iter().filter(|c| c.cell.mode == mode && c.cell.d == d && c.error.is_none());
            let (finals, alls) = ok.map(|c| (c.final_mean, c.all_mean)).unzip();
            SettingSummary { mode, d, finals, alls, margin_vs_nofed: None, pooled_sd_vs_nofed: None, next_d: None, not_below_next_d: None }
        })
        .collect();
    let nofed = out.iter().find(|s| s.mode == Mode::NoFed).map(|s| s.finals.clone());
    let fed: Vec<(usize, Vec<f64>)> =
        out.iter().filter(|s| s.mode == Mode::FedHpd).map(|s| (s.d.unwrap_or(0), s.finals.clone())).collect();
    for s in out.iter_mut().filter(|s| s.mode == Mode::FedHpd && !s.finals.is_empty()) {
        if let Some(base) = nofed.as_ref().filter(|b| !b.is_empty()) {
            s.margin_vs_nofed = Some(mean(&s.finals) - mean(base));
            s.pooled_sd_vs_nofed = Some(pooled_sd(&s.finals, base));
        }
        let d = s.d.unwrap_or(0);
        if let Some((nd, next)) = fed.iter().filter(|(nd, f)| *nd > d && !f.is_empty()).min_by_key(|(nd, _)| *nd) {
            s.next_d = Some(*nd);
            s.not_below_next_d = Some(mean(&s.finals) >= mean(next) - pooled_sd(&s.finals, next));
        }
    }
    out
}

#[derive(Debug, Clone)]
pub struct TrainReport {
    pub dir: PathBuf,
    pub cells: Vec<CellSummary>,
    pub settings: Vec<SettingSummary>,
}

impl TrainReport {
    pub fn failures(&self) -> impl Iterator<Item = &CellSummary> {
        self.cells.iter().filter(|c| c.error.is_some())
    }

    pub fn setting(&self, mode: Mode, d: Option<usize>) -> Option<&SettingSummary> {
        self.settings.iter().find(|s| s.mode == mode && s.d == d)
    }
}

fn pool(workers: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::Config(format!("workers: {e}")))
}

/// `train`: runs every (mode, interval, seed) cell and writes one metrics
/// CSV per cell plus summaries into the output directory. A failing cell is
/// recorded in the summary and the others still run.
pub fn train(cfg: &ExperimentConfig) -> Result<TrainReport> {
    let dir = cfg.output_dir.clone();
    fs::create_dir_all(&dir).map_err(io_err(&dir))?;
    write_file(&dir.join("config.resolved.toml"), cfg.to_toml().as_bytes())?;

    let public = if cfg.needs_public_set() {
        let set = obtain_public(cfg)?;
        write_states(&dir.join("states.txt"), &set, cfg)?;
        Some(set)
    } else {
        None
    };

    let cells = cfg.cells();
    let outputs: Vec<Result<CellOutput>> =
        pool(cfg.workers)?.install(|| cells.par_iter().map(|&c| run_cell(cfg, c, public.as_ref())).collect());

    let mut summaries = Vec::with_capacity(cells.len());
    for (cell, out) in cells.iter().zip(outputs) {
        match out {
            Ok(o) => {
                write_file(&dir.join(format!("{}.csv", cell.run_id())), &o.csv)?;
                for (id, snap) in &o.snapshots {
                    write_file(&dir.join("snapshots").join(format!("{}_agent{id}.bin", cell.run_id())), snap)?;
                }
                summaries.push(o.summary);
            }
            Err(e) => summaries.push(CellSummary { cell: *cell, final_mean: f64::NAN, all_mean: f64::NAN, error: Some(e.to_string()) }),
        }
    }

    let rows: Vec<Vec<String>> = summaries
        .iter()
        .map(|s| {
            vec![
                s.cell.run_id(),
                s.cell.mode.name().into(),
                s.cell.d_label(),
                s.cell.seed.to_string(),
                s.error.clone().map_or("ok".into(), |e| format!("failed: {e}")),
                fmt_f64(s.final_mean),
                fmt_f64(s.all_mean),
            ]
        })
        .collect();
    write_file(&dir.join("summary.csv"), &csv_bytes(&SUMMARY_COLUMNS, &rows)?)?;
    let settings = summarize_settings(&summaries);
    let rows: Vec<Vec<String>> = settings.iter().map(SettingSummary::row).collect();
    write_file(&dir.join("summary_by_setting.csv"), &csv_bytes(&SETTING_COLUMNS, &rows)?)?;

    Ok(TrainReport { dir, cells: summaries, settings })
}

/// `sweep`: the training grid, repeated once per public-set seed when
/// `sweep.public_seeds` is set (each set in its own `public_s<seed>` directory).
pub fn sweep(cfg: &ExperimentConfig) -> Result<Vec<(Option<u64>, TrainReport)>> {
    if cfg.public_seeds.is_empty() {
        return Ok(vec![(None, train(cfg)?)]);
    }
    if cfg.public.source != PublicSource::Generate {
        return Err(Error::Config("sweep.public_seeds: requires public.source = \"generate\"".into()));
    }
    let mut reports = Vec::new();
    let mut rows = Vec::new();
    for &seed in &cfg.public_seeds {
        let mut sub = cfg.clone();
        sub.public.seed = seed;
        sub.output_dir = cfg.output_dir.join(format!("public_s{seed}"));
        let report = train(&sub)?;
        for s in &report.settings {
            let mut row = vec![seed.to_string()];
            row.extend(s.row());
            rows.push(row);
        }
        reports.push((Some(seed), report));
    }
    let mut header = vec!["public_seed"];
    header.extend(SETTING_COLUMNS);
    write_file(&cfg.output_dir.join("sweep_summary.csv"), &csv_bytes(&header, &rows)?)?;
    Ok(reports)
}

pub fn load_snapshot(path: &Path) -> Result<Policy> {
    let bytes = fs::read(path).map_err(io_err(path))?;
    Policy::read_snapshot(&mut bytes.as_slice()).map_err(|e| e.context(path.display().to_string()))
}

/// One diagnostics CSV row.
#[derive(Debug, Clone)]
pub struct DiagnosticRow {
    pub report: VarianceReport,
    pub chebyshev: u64,
}

/// `diagnose`: variance decomposition, Chebyshev sample counts and the
/// smoothness probe for a policy snapshot. The consensus is the average of
/// the snapshot and its peers; with no peers it is the policy itself.
pub fn diagnose(
    cfg: &ExperimentConfig,
    snapshot: &Path,
    peers: &[PathBuf],
    states: Option<&Path>,
    out: &Path,
) -> Result<Vec<DiagnosticRow>> {
    let policy = load_snapshot(snapshot)?;
    let check = |p: &Policy, path: &Path| {
        if p.head() != cfg.env.head() || p.state_dim() != STATE_DIM || p.action_dim() != cfg.env.action_width() {
            return Err(Error::Config(format!("{}: snapshot does not fit environment {}", path.display(), cfg.env.name())));
        }
        Ok(())
    };
    check(&policy, snapshot)?;
    let public = match states {
        Some(p) => load_states(p)?,
        None => obtain_public(cfg)?,
    };
    let mut batches = vec![policy.extract_batch(&public)?];
    for p in peers {
        let peer = load_snapshot(p)?;
        check(&peer, p)?;
        batches.push(peer.extract_batch(&public)?);
    }
    let consensus = aggregate(&batches, None)?;

    let dg = &cfg.diagnose;
    let mut rng = ChaCha8Rng::seed_from_u64(dg.seed);
    let settings = ProbeSettings { n_pairs: dg.pairs, radius: dg.radius, gamma: cfg.gamma, ..ProbeSettings::default() };
    let probe = lipschitz_probe(|_| Ok(policy.clone()), &public, &consensus, &settings, &mut rng)?;
    let env = cfg.env_spec();

    let mut out_rows = Vec::with_capacity(dg.repeats);
    let mut csv_rows = Vec::with_capacity(dg.repeats);
    for repeat in 0..dg.repeats {
        let report = gradient_variance(&policy, &env, &public, &consensus, cfg.gamma, dg.samples, repeat, &mut rng)?;
        let chebyshev = chebyshev_samples(report.var_j, dg.epsilon, dg.delta)?;
        let r = &report;
        csv_rows.push(vec![
            repeat.to_string(),
            r.n_samples.to_string(),
            r.param_count.to_string(),
            fmt_f64(r.var_j),
            fmt_f64(r.var_j_per_coord),
            fmt_f64(r.var_kl),
            fmt_f64(r.cov),
            fmt_f64(r.var_prime_direct),
            fmt_f64(r.var_prime_reconstructed),
            fmt_f64(r.identity_residual),
            fmt_f64(r.second_moment_j),
            fmt_f64(r.second_moment_prime),
            fmt_f64(r.mean_grad_j_norm),
            fmt_f64(r.kl_grad_norm),
            fmt_f64(r.kl_loss),
            fmt_f64(r.cos_angle),
            fmt_f64(r.norm_ratio),
            r.condition_holds.to_string(),
            r.condition_vacuous.to_string(),
            chebyshev.to_string(),
            fmt_f64(probe.lipschitz_estimate),
            fmt_f64(probe.lipschitz_mean),
            fmt_f64(probe.g_estimate),
            fmt_f64(probe.m_estimate),
            fmt_f64(probe.kl_bound),
            fmt_f64(probe.j_bound),
            probe.within_kl_bound().to_string(),
        ]);
        out_rows.push(DiagnosticRow { report, chebyshev });
    }
    write_file(out, &csv_bytes(&DIAGNOSTICS_COLUMNS, &csv_rows)?)?;
    Ok(out_rows)
}
