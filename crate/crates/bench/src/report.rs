//! Batch execution of a manifest, aggregation and file output.

use std::fs;
use std::path::{Path, PathBuf};

use coalition_core::belief::FrobeniusReport;
use coalition_core::markov::{attach_formation_probabilities, build_chain};
use coalition_core::par;
use coalition_core::seed::derive_seed;
use coalition_core::{BeliefState, CoalitionStructure, Environment, Network, PayoffEngine, Scenario, SimulationSetting};
use serde::{Deserialize, Serialize};

use crate::manifest::RunManifest;
use crate::regime::{run_regime, Regime, RegimeContext, RegimeOutcome};
use crate::{BenchError, Result};

pub const SUMMARY_FILE: &str = "summary.csv";
pub const TOPOLOGIES_FILE: &str = "topologies.csv";
pub const PER_DRONE_FILE: &str = "per_drone.csv";
pub const CONVERGENCE_FILE: &str = "convergence.csv";
pub const MANIFEST_FILE: &str = "manifest.toml";
pub const MARKOV_DIR: &str = "markov";

/// One regime run on one topology.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopologyRow {
    pub setting: String,
    pub environment: String,
    pub topology: usize,
    pub regime: Regime,
    pub repetition: usize,
    pub scenario_seed: u64,
    pub run_seed: u64,
    pub total_rate: f64,
    pub best_stable: f64,
    pub expected: f64,
    pub structure: CoalitionStructure,
    pub changes: usize,
    pub rounds: Option<usize>,
    pub converged: bool,
    pub fallback: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub setting: String,
    pub environment: String,
    pub regime: Regime,
    pub topologies: usize,
    pub best_stable_mean: f64,
    pub best_stable_std: f64,
    pub expected_mean: f64,
    pub expected_std: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AggregateMode {
    /// Best total over the structures the dynamics can form.
    BestStable,
    /// Total weighted by formation probabilities.
    Expected,
}

impl TopologyRow {
    pub fn value(&self, mode: AggregateMode) -> f64 {
        match mode {
            AggregateMode::BestStable => self.best_stable,
            AggregateMode::Expected => self.expected,
        }
    }
}

/// Sample mean and (n - 1) standard deviation; the deviation of one value
/// is 0.
pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Per-topology values of one setting and regime (repetitions averaged),
/// in topology order.
pub fn topology_values(rows: &[TopologyRow], setting: &str, regime: Regime, mode: AggregateMode) -> Vec<f64> {
    let mut acc: Vec<(usize, f64, usize)> = Vec::new();
    for r in rows.iter().filter(|r| r.setting == setting && r.regime == regime) {
        match acc.iter_mut().find(|a| a.0 == r.topology) {
            Some(a) => {
                a.1 += r.value(mode);
                a.2 += 1;
            }
            None => acc.push((r.topology, r.value(mode), 1)),
        }
    }
    acc.sort_by_key(|a| a.0);
    acc.into_iter().map(|(_, s, n)| s / n as f64).collect()
}

/// Mean and spread over topologies for every (setting, regime) pair, in
/// order of first appearance.
pub fn aggregate(rows: &[TopologyRow]) -> Vec<SummaryRow> {
    let mut keys: Vec<(String, String, Regime)> = Vec::new();
    for r in rows {
        let k = (r.setting.clone(), r.environment.clone(), r.regime);
        if !keys.contains(&k) {
            keys.push(k);
        }
    }
    keys.into_iter()
        .map(|(setting, environment, regime)| {
            let best = topology_values(rows, &setting, regime, AggregateMode::BestStable);
            let exp = topology_values(rows, &setting, regime, AggregateMode::Expected);
            let (bm, bs) = mean_std(&best);
            let (em, es) = mean_std(&exp);
            SummaryRow {
                setting,
                environment,
                regime,
                topologies: best.len(),
                best_stable_mean: bm,
                best_stable_std: bs,
                expected_mean: em,
                expected_std: es,
            }
        })
        .collect()
}

/// Everything computed for one topology.
#[derive(Debug, Clone)]
pub struct TopologyResult {
    pub setting: SimulationSetting,
    pub topology: usize,
    pub scenario_seed: u64,
    /// `(regime, repetition, run seed, outcome)`.
    pub runs: Vec<(Regime, usize, u64, RegimeOutcome)>,
    pub notices: Vec<String>,
}

pub fn scenario_seed(manifest: &RunManifest, setting: &SimulationSetting, topology: usize) -> u64 {
    derive_seed(manifest.seed, &[setting.d as u64, topology as u64])
}

pub fn run_seed(manifest: &RunManifest, setting: &SimulationSetting, topology: usize, regime: Regime, repetition: usize) -> u64 {
    derive_seed(
        manifest.seed,
        &[setting.d as u64, topology as u64, regime.tag(), repetition as u64],
    )
}

pub fn build_network(manifest: &RunManifest, setting: &SimulationSetting, topology: usize) -> Result<Network> {
    let env = Environment::preset(&manifest.environment)?;
    let scenario = Scenario::generate(setting, &env, &manifest.types, scenario_seed(manifest, setting, topology))?;
    Ok(Network::new(scenario)?)
}

pub fn run_topology(manifest: &RunManifest, setting: &SimulationSetting, topology: usize) -> Result<TopologyResult> {
    let net = build_network(manifest, setting, topology)?;
    let engine = PayoffEngine::new(&net, manifest.type_space_cap)?;
    let mut runs = Vec::new();
    let mut notices = Vec::new();
    for &regime in &manifest.regimes {
        if regime == Regime::SocialOptimal && setting.d > manifest.structure_cap {
            if topology == 0 {
                notices.push(format!(
                    "{}: social_optimal skipped, {} drones exceed the structure cap {}",
                    setting.name, setting.d, manifest.structure_cap
                ));
            }
            continue;
        }
        let reps = if regime == Regime::Proposed { manifest.repetitions } else { 1 };
        for rep in 0..reps {
            let seed = run_seed(manifest, setting, topology, regime, rep);
            let ctx = RegimeContext {
                dynamics: &manifest.dynamics,
                structure_cap: manifest.structure_cap,
                seed,
            };
            runs.push((regime, rep, seed, run_regime(&engine, regime, &ctx)?));
        }
    }
    Ok(TopologyResult {
        setting: setting.clone(),
        topology,
        scenario_seed: scenario_seed(manifest, setting, topology),
        runs,
        notices,
    })
}

/// Results of a whole manifest, in setting then topology order.
#[derive(Debug, Clone)]
pub struct RunResults {
    pub topologies: Vec<TopologyResult>,
    pub rows: Vec<TopologyRow>,
    pub summary: Vec<SummaryRow>,
    pub notices: Vec<String>,
    pub output_dir: PathBuf,
}

impl RunResults {
    pub fn all_converged(&self) -> bool {
        self.rows.iter().all(|r| r.converged)
    }
}

fn rows_of(manifest: &RunManifest, t: &TopologyResult) -> Vec<TopologyRow> {
    t.runs
        .iter()
        .map(|(regime, rep, seed, o)| TopologyRow {
            setting: t.setting.name.clone(),
            environment: manifest.environment.clone(),
            topology: t.topology,
            regime: *regime,
            repetition: *rep,
            scenario_seed: t.scenario_seed,
            run_seed: *seed,
            total_rate: o.total_rate,
            best_stable: o.best_stable,
            expected: o.expected,
            structure: o.structure.clone(),
            changes: o.changes,
            rounds: o.rounds,
            converged: o.converged,
            fallback: o.fallback,
        })
        .collect()
}

/// Creates `dir` and checks that files can be written into it.
pub fn prepare_output_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    let probe = dir.join(".coalbench-write-test");
    fs::write(&probe, b"")?;
    fs::remove_file(&probe)?;
    Ok(())
}

/// Runs every setting, topology and regime of `manifest` and writes the
/// output files into the manifest's (possibly overridden) output directory.
pub fn run_manifest(manifest: &RunManifest) -> Result<RunResults> {
    run_manifest_to(manifest, &manifest.resolved_output_dir())
}

/// As [`run_manifest`], writing into `out`. The directory is checked before
/// any computation.
pub fn run_manifest_to(manifest: &RunManifest, out: &Path) -> Result<RunResults> {
    manifest.validate()?;
    let out = out.to_path_buf();
    prepare_output_dir(&out)?;
    let settings = manifest.simulation_settings()?;

    let mut topologies = Vec::new();
    if !manifest.regimes.is_empty() {
        let jobs: Vec<(usize, usize)> = (0..settings.len())
            .flat_map(|s| (0..manifest.topologies).map(move |t| (s, t)))
            .collect();
        let results = par::map(manifest.execution, &jobs, |&(s, t)| run_topology(manifest, &settings[s], t));
        for r in results {
            topologies.push(r?);
        }
    }
    let rows: Vec<TopologyRow> = topologies.iter().flat_map(|t| rows_of(manifest, t)).collect();
    let summary = aggregate(&rows);
    let notices: Vec<String> = topologies.iter().flat_map(|t| t.notices.iter().cloned()).collect();
    let results = RunResults {
        topologies,
        rows,
        summary,
        notices,
        output_dir: out,
    };
    emit_outputs(manifest, &results)?;
    Ok(results)
}

pub fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_topology_rows(path: &Path) -> Result<Vec<TopologyRow>> {
    let mut r = csv::Reader::from_path(path)?;
    Ok(r.deserialize().collect::<std::result::Result<_, _>>()?)
}

#[derive(Debug, Serialize)]
struct PerDroneRow<'a> {
    setting: &'a str,
    topology: usize,
    regime: Regime,
    repetition: usize,
    drone: usize,
    rate: f64,
}

/// Average Frobenius reports per round over all proposed runs of a
/// setting; shorter runs are extended with their last report.
pub fn convergence_series(results: &[&TopologyResult]) -> Vec<FrobeniusReport> {
    let series: Vec<&Vec<FrobeniusReport>> = results
        .iter()
        .flat_map(|t| t.runs.iter())
        .filter(|(r, ..)| *r == Regime::Proposed)
        .map(|(.., o)| &o.frobenius)
        .filter(|s| !s.is_empty())
        .collect();
    let len = series.iter().map(|s| s.len()).max().unwrap_or(0);
    let n = series.len() as f64;
    (0..len)
        .map(|k| {
            let at = |s: &Vec<FrobeniusReport>| s[k.min(s.len() - 1)].clone();
            let m = series[0][0].per_type.len();
            let mut per_type = vec![0.0; m];
            let (mut mean, mut combined) = (0.0, 0.0);
            for s in &series {
                let r = at(s);
                for (a, b) in per_type.iter_mut().zip(&r.per_type) {
                    *a += b / n;
                }
                mean += r.mean / n;
                combined += r.combined / n;
            }
            FrobeniusReport { per_type, mean, combined }
        })
        .collect()
}

pub fn emit_outputs(manifest: &RunManifest, results: &RunResults) -> Result<()> {
    let out = &results.output_dir;
    fs::write(out.join(MANIFEST_FILE), manifest.to_toml()?)?;
    if manifest.regimes.is_empty() {
        return Ok(());
    }
    write_csv(&out.join(SUMMARY_FILE), &results.summary)?;
    write_csv(&out.join(TOPOLOGIES_FILE), &results.rows)?;

    let target = manifest.per_drone_target()?;
    let mut per_drone = Vec::new();
    for t in results.topologies.iter().filter(|t| t.setting.name == target) {
        for (regime, rep, _, o) in &t.runs {
            for (drone, &rate) in o.per_drone.iter().enumerate() {
                per_drone.push(PerDroneRow {
                    setting: &t.setting.name,
                    topology: t.topology,
                    regime: *regime,
                    repetition: *rep,
                    drone,
                    rate,
                });
            }
        }
    }
    write_csv(&out.join(PER_DRONE_FILE), &per_drone)?;

    if manifest.regimes.contains(&Regime::Proposed) {
        let mut w = csv::Writer::from_path(out.join(CONVERGENCE_FILE))?;
        let mut header = vec!["setting".to_string(), "round".to_string()];
        header.extend(manifest.types.iter().map(|t| format!("type_{}", t.id)));
        header.extend(["mean".to_string(), "combined".to_string()]);
        w.write_record(&header)?;
        for s in &manifest.settings {
            let of_setting: Vec<&TopologyResult> = results.topologies.iter().filter(|t| &t.setting.name == s).collect();
            for (round, r) in convergence_series(&of_setting).iter().enumerate() {
                let mut rec = vec![s.clone(), round.to_string()];
                rec.extend(r.per_type.iter().map(|x| x.to_string()));
                rec.extend([r.mean.to_string(), r.combined.to_string()]);
                w.write_record(&rec)?;
            }
        }
        w.flush()?;
    }

    if manifest.regimes.contains(&Regime::FullInfo) {
        let dir = out.join(MARKOV_DIR);
        fs::create_dir_all(&dir)?;
        for setting in manifest.simulation_settings()? {
            if setting.d > manifest.structure_cap {
                continue;
            }
            let net = build_network(manifest, &setting, 0)?;
            let engine = PayoffEngine::new(&net, manifest.type_space_cap)?;
            let truth = BeliefState::truth(&net.true_type, net.num_types());
            let mut chain = build_chain(
                &engine,
                &truth,
                manifest.dynamics.veto_rule,
                manifest.execution,
                manifest.structure_cap,
            )?;
            attach_formation_probabilities(&mut chain)?;
            let file = fs::File::create(dir.join(format!("{}_topology0.json", setting.name)))?;
            chain.write_json(std::io::BufWriter::new(file))?;
        }
    }
    Ok(())
}

/// Recomputes the summary from an existing `topologies.csv`.
pub fn report_dir(dir: &Path) -> Result<Vec<SummaryRow>> {
    let path = dir.join(TOPOLOGIES_FILE);
    if !path.exists() {
        return Err(BenchError::Manifest(format!("{} not found", path.display())));
    }
    Ok(aggregate(&read_topology_rows(&path)?))
}
