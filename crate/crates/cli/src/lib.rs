//! Command implementations behind the `adtsat` binary.
//!
//! Exit codes: 0 success, 1 infeasible or failed verification, 2 bad input.

pub mod disturbance;
pub mod svg;

use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use adtsat::hybridsim::{
    adt_stats, simulate, step_stiffness, weighted_l2_ratio, SimOptions, SimulationTrace, DEFAULT_STEP,
    RK4_REAL_STABILITY_LIMIT,
};
use adtsat::linalg::Vector;
use adtsat::model::{pbh_report, validate_plant, SpecFile, SwitchedPlant, SwitchingSignal, SynthesisSpec};
use adtsat::pipeline::{sweep, synthesize, write_sweep_csv, SweepGrid, Synthesis};
use adtsat::synth::{verify_certificate, CertificateReport, FactorizationMethod, HybridController};
use adtsat::Error;
use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::de::DeserializeOwned;
use serde::Serialize;

#[derive(Debug, Parser)]
#[command(name = "adtsat", version, about = "Synthesis, certificate checks and simulation for saturated switched systems")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Parse and check a plant (and optionally a signal, spec or controller against it).
    Validate {
        plant: PathBuf,
        #[arg(long)]
        signal: Option<PathBuf>,
        #[arg(long)]
        controller: Option<PathBuf>,
        #[command(flatten)]
        spec: SpecArgs,
        #[arg(long)]
        json: bool,
    },
    /// Solve the synthesis program and write the hybrid controller.
    Synthesize {
        plant: PathBuf,
        #[command(flatten)]
        spec: SpecArgs,
        /// Controller output file.
        #[arg(short, long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value_t = Factorization::Svd)]
        factorization: Factorization,
        #[arg(long)]
        json: bool,
    },
    /// Minimize γ over a grid of (λ₀, μ) pairs.
    Sweep {
        plant: PathBuf,
        grid: PathBuf,
        /// CSV output; stdout when omitted.
        #[arg(short, long)]
        out: Option<PathBuf>,
        #[arg(long)]
        json: bool,
    },
    /// Simulate the saturated closed loop under a switching signal.
    Simulate {
        plant: PathBuf,
        controller: PathBuf,
        signal: PathBuf,
        /// zero | pulse:<mag>,<t_on>,<t_off> | file:<path>
        #[arg(long, default_value = "zero")]
        disturbance: String,
        /// Initial closed-loop state, comma separated (default zero).
        #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
        x0: Option<Vec<f64>>,
        #[arg(long, default_value_t = DEFAULT_STEP)]
        step: f64,
        /// Final time (default: signal horizon).
        #[arg(long)]
        tfinal: Option<f64>,
        /// Directory for trace.csv, events.csv and plot.svg.
        #[arg(long, default_value = ".")]
        out_dir: PathBuf,
        /// Also write plot.svg.
        #[arg(long)]
        svg: bool,
        #[arg(long)]
        json: bool,
    },
    /// Re-check the certificates carried by a controller file.
    Verify {
        plant: PathBuf,
        controller: PathBuf,
        #[command(flatten)]
        spec: SpecArgs,
        #[arg(long)]
        json: bool,
    },
    /// Run every acceptance check on the bundled worked example.
    ReproduceExample {
        /// Skip the table sweep; synthesize at the headline point only.
        #[arg(long)]
        fast: bool,
        #[arg(long)]
        json: bool,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Factorization {
    Svd,
    Identity,
}

impl From<Factorization> for FactorizationMethod {
    fn from(f: Factorization) -> Self {
        match f {
            Factorization::Svd => FactorizationMethod::BalancedSvd,
            Factorization::Identity => FactorizationMethod::Identity,
        }
    }
}

/// Spec file plus per-field overrides.
#[derive(Debug, Clone, Default, Args)]
pub struct SpecArgs {
    #[arg(long)]
    pub spec: Option<PathBuf>,
    #[arg(long)]
    pub lambda0: Option<f64>,
    #[arg(long)]
    pub mu: Option<f64>,
    #[arg(long)]
    pub s: Option<f64>,
    /// Fixed γ (feasibility mode); minimized when omitted.
    #[arg(long)]
    pub gamma: Option<f64>,
    /// Spectral-norm cap on the hatted controller variables.
    #[arg(long)]
    pub kappa: Option<f64>,
}

impl SpecArgs {
    fn is_empty(&self) -> bool {
        self.spec.is_none()
            && self.lambda0.is_none()
            && self.mu.is_none()
            && self.s.is_none()
            && self.gamma.is_none()
            && self.kappa.is_none()
    }

    /// Merges the file (if any), `fallback` and the flags, flags winning.
    fn resolve(&self, plant: &SwitchedPlant, fallback: Option<SpecFile>) -> Result<SynthesisSpec> {
        let mut f = match &self.spec {
            Some(p) => read_json::<SpecFile>(p)?,
            None => fallback.unwrap_or_default(),
        };
        let required = |v: Option<f64>, current: f64, name: &str| -> Result<f64> {
            match v {
                Some(x) => Ok(x),
                None if self.spec.is_some() || current != 0.0 => Ok(current),
                None => bail!("--{name} is required (or pass --spec)"),
            }
        };
        f.lambda0 = required(self.lambda0, f.lambda0, "lambda0")?;
        f.mu = required(self.mu, f.mu, "mu")?;
        f.s = required(self.s, f.s, "s")?;
        if self.gamma.is_some() {
            f.gamma = self.gamma;
        }
        if self.kappa.is_some() {
            f.kappa = self.kappa;
        }
        f.resolve(plant).context("invalid synthesis spec")
    }
}

/// Failure kinds mapped onto exit codes 1 and 2.
#[derive(Debug)]
pub enum CliError {
    Failed(String),
    Input(anyhow::Error),
}

impl From<anyhow::Error> for CliError {
    fn from(e: anyhow::Error) -> Self {
        CliError::Input(e)
    }
}

impl CliError {
    pub fn code(&self) -> u8 {
        match self {
            CliError::Failed(_) => 1,
            CliError::Input(_) => 2,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Failed(m) => f.write_str(m),
            CliError::Input(e) => write!(f, "{e:#}"),
        }
    }
}

/// Library errors caused by the inputs map to exit 2, the rest to exit 1.
fn classify(e: Error) -> CliError {
    match e {
        Error::Model(_) | Error::Io(_) | Error::Parse(_) => CliError::Input(e.into()),
        other => CliError::Failed(other.to_string()),
    }
}

fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn print_json<T: Serialize>(value: &T) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(value)?);
    Ok(())
}

pub fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Validate {
            plant,
            signal,
            controller,
            spec,
            json,
        } => cmd_validate(&plant, signal.as_deref(), controller.as_deref(), &spec, json),
        Command::Synthesize {
            plant,
            spec,
            out,
            factorization,
            json,
        } => cmd_synthesize(&plant, &spec, &out, factorization.into(), json),
        Command::Sweep { plant, grid, out, json } => cmd_sweep(&plant, &grid, out.as_deref(), json),
        Command::Simulate {
            plant,
            controller,
            signal,
            disturbance,
            x0,
            step,
            tfinal,
            out_dir,
            svg,
            json,
        } => cmd_simulate(&SimulateArgs {
            plant,
            controller,
            signal,
            disturbance,
            x0,
            step,
            tfinal,
            out_dir,
            svg,
            json,
        }),
        Command::Verify {
            plant,
            controller,
            spec,
            json,
        } => cmd_verify(&plant, &controller, &spec, json),
        Command::ReproduceExample { fast, json } => cmd_reproduce(fast, json),
    }
}

fn load_plant(path: &Path) -> Result<SwitchedPlant> {
    read_json(path)
}

#[derive(Serialize)]
struct ValidateSummary {
    modes: usize,
    n: usize,
    n_u: usize,
    n_w: usize,
    n_z: usize,
    n_y: usize,
    pbh: adtsat::model::ValidationReport,
    signal_switches: Option<usize>,
    controller_compatible: Option<bool>,
    spec: Option<SynthesisSpec>,
}

pub fn cmd_validate(
    plant_path: &Path,
    signal: Option<&Path>,
    controller: Option<&Path>,
    spec: &SpecArgs,
    json: bool,
) -> Result<(), CliError> {
    let plant = load_plant(plant_path)?;
    let d = plant.dims();
    let pbh = pbh_report(&plant);
    let mut summary = ValidateSummary {
        modes: plant.n_modes(),
        n: d.n,
        n_u: d.nu,
        n_w: d.nw,
        n_z: d.nz,
        n_y: d.ny,
        pbh: pbh.clone(),
        signal_switches: None,
        controller_compatible: None,
        spec: None,
    };
    if let Some(p) = signal {
        let sig: SwitchingSignal = read_json(p)?;
        sig.check_modes(plant.n_modes()).with_context(|| format!("signal {}", p.display()))?;
        summary.signal_switches = Some(sig.switches().len());
    }
    if let Some(p) = controller {
        let c: HybridController = read_json(p)?;
        c.check_compatible(&plant)
            .map_err(|e| anyhow::anyhow!("controller {}: {e}", p.display()))?;
        summary.controller_compatible = Some(true);
    }
    if !spec.is_empty() {
        summary.spec = Some(spec.resolve(&plant, None)?);
    }
    if json {
        print_json(&summary)?;
    } else {
        println!("plant: {} modes, n = {}, n_u = {}, n_w = {}, n_z = {}, n_y = {}", summary.modes, d.n, d.nu, d.nw, d.nz, d.ny);
        for (i, m) in pbh.modes.iter().enumerate() {
            println!("  mode {}: stabilizable {}, detectable {}", i + 1, m.stabilizable, m.detectable);
        }
        if let Some(k) = summary.signal_switches {
            println!("signal: {k} switches");
        }
        if summary.controller_compatible.is_some() {
            println!("controller: compatible");
        }
        if let Some(s) = &summary.spec {
            println!("spec: lambda0 {}, mu {}, s {}, epsilon {:e}, delta {:e}", s.lambda0, s.mu, s.s, s.epsilon, s.delta);
        }
    }
    validate_plant(&plant).map_err(|e| CliError::Failed(format!("model: {e}")))?;
    Ok(())
}

#[derive(Serialize)]
struct SynthesisSummary<'a> {
    gamma: f64,
    tau_a_star: f64,
    status: String,
    certificate: &'a CertificateReport,
    congruence: &'a [f64],
    round_trip: f64,
    p_asymmetry: &'a [f64],
    warnings: &'a [String],
}

fn synthesis_summary(s: &Synthesis) -> SynthesisSummary<'_> {
    SynthesisSummary {
        gamma: s.gamma(),
        tau_a_star: s.reconstruction.controller.tau_a_star,
        status: format!("{:?}", s.outcome.status),
        certificate: &s.report,
        congruence: &s.congruence,
        round_trip: s.round_trip,
        p_asymmetry: &s.reconstruction.p_asymmetry,
        warnings: &s.outcome.warnings,
    }
}

fn print_certificate(r: &CertificateReport) {
    for m in &r.modes {
        println!(
            "  mode {}: dissipation lambda_max {:.3e}, P lambda_min {:.3e}",
            m.mode, m.dissipation_lambda_max, m.p_lambda_min
        );
    }
    for b in &r.boundaries {
        println!("  reset {}->{}: boundary lambda_min {:.3e}", b.from, b.to, b.lambda_min);
    }
    for c in &r.inclusions {
        println!("  mode {} channel {}: inclusion slack {:.3e}", c.mode, c.channel, c.slack);
    }
    println!("certificate: {}", if r.pass { "PASS" } else { "FAIL" });
}

pub fn cmd_synthesize(
    plant_path: &Path,
    spec_args: &SpecArgs,
    out: &Path,
    method: FactorizationMethod,
    json: bool,
) -> Result<(), CliError> {
    let plant = load_plant(plant_path)?;
    let spec = spec_args.resolve(&plant, None)?;
    let syn = synthesize(&plant, &spec, method).map_err(classify)?;
    write_json(out, &syn.reconstruction.controller)?;
    let summary = synthesis_summary(&syn);
    if json {
        print_json(&summary)?;
    } else {
        println!("gamma {:.6} ({})", summary.gamma, summary.status);
        println!("tau_a* {:.4} s", summary.tau_a_star);
        for w in summary.warnings {
            println!("warning: {w}");
        }
        print_certificate(&syn.report);
        println!(
            "congruence {:.1e}, round trip {:.1e}",
            syn.congruence.iter().copied().fold(0.0, f64::max),
            syn.round_trip
        );
        println!("controller written to {}", out.display());
    }
    if !syn.report.pass {
        return Err(CliError::Failed("certificate check failed".into()));
    }
    Ok(())
}

pub fn cmd_sweep(plant_path: &Path, grid_path: &Path, out: Option<&Path>, json: bool) -> Result<(), CliError> {
    let plant = load_plant(plant_path)?;
    let grid: SweepGrid = read_json(grid_path)?;
    grid.validate()
        .map_err(|e| anyhow::anyhow!("grid {}: {e}", grid_path.display()))?;
    let rows = sweep(&plant, &grid);
    match out {
        Some(p) => {
            let file = fs::File::create(p).with_context(|| format!("creating {}", p.display()))?;
            write_sweep_csv(&rows, io::BufWriter::new(file)).with_context(|| format!("writing {}", p.display()))?;
        }
        None if !json => write_sweep_csv(&rows, io::stdout().lock()).context("writing stdout")?,
        None => {}
    }
    if json {
        print_json(&rows)?;
    } else {
        for r in rows.iter().filter(|r| !r.detail.is_empty()) {
            eprintln!("({}, {}) {}: {}", r.lambda0, r.mu, r.status, r.detail);
        }
    }
    Ok(())
}

pub struct SimulateArgs {
    pub plant: PathBuf,
    pub controller: PathBuf,
    pub signal: PathBuf,
    pub disturbance: String,
    pub x0: Option<Vec<f64>>,
    pub step: f64,
    pub tfinal: Option<f64>,
    pub out_dir: PathBuf,
    pub svg: bool,
    pub json: bool,
}

#[derive(Serialize)]
struct SimulationSummary {
    steps: usize,
    t_final: f64,
    weighted_l2_ratio: Option<f64>,
    certified_gamma: f64,
    disturbance_energy: f64,
    s_squared: f64,
    linear_region_departures: usize,
    ellipsoid_departures: usize,
    final_state_norm: f64,
    step_stiffness: f64,
    adt: adtsat::hybridsim::AdtReport,
}

pub fn cmd_simulate(a: &SimulateArgs) -> Result<(), CliError> {
    let plant = load_plant(&a.plant)?;
    let c: HybridController = read_json(&a.controller)?;
    let sig: SwitchingSignal = read_json(&a.signal)?;
    let d = plant.dims();
    let w = disturbance::parse(&a.disturbance, d.nw)?;
    let x0 = match &a.x0 {
        Some(v) if v.len() != 2 * d.n => {
            return Err(anyhow::anyhow!("--x0 needs {} values, got {}", 2 * d.n, v.len()).into())
        }
        Some(v) => Vector::from_column_slice(v),
        None => Vector::zeros(2 * d.n),
    };
    let stiffness = step_stiffness(&plant, &c, a.step).map_err(|e| classify(e.into()))?;
    if stiffness > RK4_REAL_STABILITY_LIMIT {
        eprintln!(
            "warning: step {} times the fastest closed-loop eigenvalue is {stiffness:.1}, above the RK4 stability limit {RK4_REAL_STABILITY_LIMIT}; the run may diverge",
            a.step
        );
    }
    let energy = w.energy();
    if !w.within_energy_level(c.s) {
        eprintln!("warning: disturbance outside W_s (energy {energy:.4} > s^2 = {:.4}); run proceeds", c.s * c.s);
    }
    let t_final = a.tfinal.unwrap_or(sig.horizon());
    let trace = simulate(&plant, &c, &sig, &w, &x0, &SimOptions::new(a.step, t_final)).map_err(|e| classify(e.into()))?;

    fs::create_dir_all(&a.out_dir).with_context(|| format!("creating {}", a.out_dir.display()))?;
    let write = |name: &str, f: &dyn Fn(&mut io::BufWriter<fs::File>) -> io::Result<()>| -> Result<()> {
        let path = a.out_dir.join(name);
        let file = fs::File::create(&path).with_context(|| format!("creating {}", path.display()))?;
        let mut buf = io::BufWriter::new(file);
        f(&mut buf).and_then(|_| buf.flush()).with_context(|| format!("writing {}", path.display()))
    };
    write("trace.csv", &|b| trace.write_csv(b))?;
    write("events.csv", &|b| trace.write_events_csv(b))?;
    if a.svg {
        let text = svg::render(&plot_panels(&trace));
        fs::write(a.out_dir.join("plot.svg"), text).context("writing plot.svg")?;
    }

    let ratio = match energy > 0.0 {
        true => weighted_l2_ratio(&trace, c.lambda0).ok(),
        false => None,
    };
    let summary = SimulationSummary {
        steps: trace.len() - 1,
        t_final,
        weighted_l2_ratio: ratio,
        certified_gamma: c.gamma,
        disturbance_energy: energy,
        s_squared: c.s * c.s,
        linear_region_departures: trace.linear_region_departures(),
        ellipsoid_departures: trace.ellipsoid_departures(),
        final_state_norm: trace.x_cl(trace.len() - 1).norm(),
        step_stiffness: stiffness,
        adt: adt_stats(&sig, Some(c.tau_a_star)),
    };
    if a.json {
        print_json(&summary)?;
    } else {
        println!("{} steps to t = {}", summary.steps, t_final);
        match ratio {
            Some(r) => println!("weighted L2 ratio {r:.6} (certified gamma {:.6})", c.gamma),
            None => println!("weighted L2 ratio undefined (zero disturbance)"),
        }
        println!(
            "switches {}, average dwell {:.3}, N0* {:.4} at tau_a = {:.4}",
            summary.adt.switch_count,
            summary.adt.average_dwell,
            summary.adt.chatter_bound.unwrap_or(f64::NAN),
            c.tau_a_star
        );
        println!(
            "steps outside linear region {}, outside ellipsoid {}, final |x| {:.3e}",
            summary.linear_region_departures, summary.ellipsoid_departures, summary.final_state_norm
        );
        println!("outputs in {}", a.out_dir.display());
    }
    Ok(())
}

fn plot_panels(t: &SimulationTrace) -> Vec<svg::Panel> {
    let series = |label: String, f: &dyn Fn(usize) -> f64| svg::Series {
        label,
        points: (0..t.len()).map(|k| (t.time[k], f(k))).collect(),
    };
    let per_channel = |name: &str, data: &[Vector]| -> Vec<svg::Series> {
        let dim = data.first().map_or(0, |v| v.len());
        (0..dim)
            .map(|c| series(if dim == 1 { name.to_string() } else { format!("{name}{}", c + 1) }, &|k| data[k][c]))
            .collect()
    };
    vec![
        svg::Panel {
            title: "performance output z(t)".into(),
            series: per_channel("z", &t.z),
        },
        svg::Panel {
            title: "saturated input sat(u)(t)".into(),
            series: per_channel("sat(u)", &t.sat_u),
        },
        svg::Panel {
            title: "plant state x_p(t)".into(),
            series: per_channel("x", &t.xp),
        },
        svg::Panel {
            title: "active mode".into(),
            series: vec![series("mode".into(), &|k| (t.mode[k] + 1) as f64)],
        },
    ]
}

pub fn cmd_verify(plant_path: &Path, controller_path: &Path, spec_args: &SpecArgs, json: bool) -> Result<(), CliError> {
    let plant = load_plant(plant_path)?;
    let c: HybridController = read_json(controller_path)?;
    let fallback = SpecFile {
        lambda0: c.lambda0,
        mu: c.mu,
        s: c.s,
        gamma: Some(c.gamma),
        ..SpecFile::default()
    };
    let spec = spec_args.resolve(&plant, Some(fallback))?;
    let report = verify_certificate(&c, &plant, &spec).map_err(|e| classify(e.into()))?;
    if json {
        print_json(&report)?;
    } else {
        println!("gamma {:.6}, lambda0 {}, mu {}, s {}", c.gamma, spec.lambda0, spec.mu, spec.s);
        print_certificate(&report);
    }
    if !report.pass {
        return Err(CliError::Failed("certificate check failed".into()));
    }
    Ok(())
}

pub fn cmd_reproduce(fast: bool, json: bool) -> Result<(), CliError> {
    let report = adtsat::reproduce::run(fast);
    if json {
        print_json(&report)?;
    } else {
        print!("{}", report.render());
    }
    if !report.all_pass() {
        let failed: Vec<&str> = report.criteria.iter().filter(|c| !c.pass).map(|c| c.name).collect();
        return Err(CliError::Failed(format!("failed: {}", failed.join(", "))));
    }
    Ok(())
}
