//! Experiment runner behind the `brwlab` binary.
//!
//! Every command reads an [`ExperimentConfig`], runs one experiment and
//! returns a CSV document. Stochastic commands are reproducible from the
//! config bytes and the seed.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod csv;

use std::time::Instant;

use brw_core::analysis::{aldous_rate, beta_bs, gamma_bs_equation, gamma_bs_solve, p0, solve_tstar};
use brw_core::models::{Law, OffspringLaw};
use brw_core::mogulskii::{triangular_experiment, ArrayFamily, CorridorSpec, Method};
use brw_core::oracle::{converged_survival, exact_path_survival, LatticeLaw};
use brw_core::simulate::{estimate_rho, BarrierSpec, Coordinate};
use brw_core::spine::make_spine;
use brw_core::transform::{barrier_map, make_vlaw};

pub use config::{EscapeCap, ExperimentConfig};
use csv::{num, opt_num, Table};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Core(#[from] brw_core::Error),
    #[error("runtime budget of {budget_ms} ms exceeded after {elapsed_ms} ms")]
    Budget { budget_ms: u64, elapsed_ms: u64 },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl CliError {
    /// Process exit status for this error.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Core(brw_core::Error::NoCriticalPoint(_)) => 3,
            CliError::Budget { .. } => 4,
            CliError::Io(_) => 1,
            _ => 2,
        }
    }
}

pub type Result<T> = std::result::Result<T, CliError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Analyze,
    Survival,
    Pemantle,
    Mogulskii,
    EscapeSweep,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Analyze => "analyze",
            Command::Survival => "survival",
            Command::Pemantle => "pemantle",
            Command::Mogulskii => "mogulskii",
            Command::EscapeSweep => "escape-sweep",
        }
    }
}

/// Command-line overrides of config values.
#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    pub seed: Option<u64>,
    pub escape_cap: Option<EscapeCap>,
    /// Fill the `runtime_ms` column; off by default so output is byte-stable.
    pub timing: bool,
    pub budget_ms: Option<u64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Output {
    pub csv: String,
    pub warnings: Vec<String>,
}

struct Budget {
    start: Instant,
    limit: Option<u64>,
}

impl Budget {
    fn check(&self) -> Result<()> {
        let elapsed_ms = self.start.elapsed().as_millis() as u64;
        match self.limit {
            Some(budget_ms) if elapsed_ms > budget_ms => Err(CliError::Budget { budget_ms, elapsed_ms }),
            _ => Ok(()),
        }
    }
}

struct Ctx<'a> {
    cfg: ExperimentConfig,
    hash: String,
    opts: &'a RunOptions,
    budget: Budget,
    warnings: Vec<String>,
}

impl Ctx<'_> {
    fn seed(&self) -> Option<u64> {
        self.opts.seed.or(self.cfg.seed)
    }

    fn require_seed(&self) -> Result<u64> {
        self.seed().ok_or_else(|| CliError::Config("a seed is required for stochastic commands".into()))
    }

    fn escape_cap(&self) -> EscapeCap {
        self.opts.escape_cap.unwrap_or(self.cfg.escape_cap)
    }

    fn section<'s, T>(&self, s: &'s Option<T>, name: &str) -> Result<&'s T> {
        s.as_ref().ok_or_else(|| CliError::Config(format!("missing `{name}` section")))
    }
}

/// Runs `command` on the raw config bytes.
pub fn run(command: Command, config_bytes: &[u8], opts: &RunOptions) -> Result<Output> {
    let cfg = ExperimentConfig::from_json(config_bytes).map_err(|e| CliError::Config(e.to_string()))?;
    let budget_ms = opts.budget_ms.or(cfg.budget_ms);
    let mut ctx = Ctx {
        cfg,
        hash: csv::config_hash(config_bytes),
        opts,
        budget: Budget { start: Instant::now(), limit: budget_ms },
        warnings: Vec::new(),
    };
    let csv = match command {
        Command::Analyze => analyze(&mut ctx)?,
        Command::Survival => survival(&mut ctx)?,
        Command::Pemantle => pemantle(&mut ctx)?,
        Command::Mogulskii => mogulskii(&mut ctx)?,
        Command::EscapeSweep => escape_sweep(&mut ctx)?,
    };
    ctx.budget.check()?;
    Ok(Output { csv, warnings: ctx.warnings })
}

fn barrier(coordinate: Coordinate, slope: f64) -> Result<BarrierSpec> {
    if !(slope >= 0.0) {
        return Err(CliError::Config(format!("slope {slope} must be >= 0")));
    }
    Ok(BarrierSpec { coordinate, slope })
}

fn coordinate_name(c: Coordinate) -> &'static str {
    match c {
        Coordinate::ULower => "U",
        Coordinate::VUpper => "V",
    }
}

fn analyze(ctx: &mut Ctx) -> Result<String> {
    let law = Law::new(ctx.cfg.law.clone())?;
    let prof = solve_tstar(&law)?;
    let vlaw = make_vlaw(&law, &prof)?;
    let spine = make_spine(&vlaw);
    let cert = *vlaw.certificate();
    let mut table = Table::new("analyze", &ctx.hash, ctx.seed(), &["quantity", "value"]);
    let mut put = |k: &str, v: f64| table.row(vec![k.into(), num(v)]);
    put("mean_children", prof.mean_children);
    put("t_star", prof.t_star);
    put("gamma", prof.gamma);
    put("psi_tstar", prof.psi_tstar);
    put("psi1_tstar", prof.psi1_tstar);
    put("psi2_tstar", prof.psi2_tstar);
    put("root_residual", prof.residual());
    put("sigma2", prof.sigma2);
    put("beta_u", prof.beta_u);
    put("beta_v", prof.beta_v);
    put("identity_mass", cert.mass);
    put("identity_drift", cert.drift);
    put("lower_moment_delta1", cert.lower_moment);
    put("upper_moment_delta2", cert.upper_moment);
    put("spine_mean", spine.mean());
    put("spine_second_moment", spine.second_moment());
    if let OffspringLaw::BinaryBernoulli { p } = law.spec() {
        let g = gamma_bs_solve(*p)?;
        put("gamma_bs", g);
        put("gamma_bs_residual", gamma_bs_equation(g, *p));
        put("beta_bs", beta_bs(*p)?);
        if (p - p0()).abs() < 1e-9 {
            put("aldous_rate", aldous_rate(*p)?);
        }
    }
    Ok(table.finish())
}

fn survival(ctx: &mut Ctx) -> Result<String> {
    let sc = ctx.section(&ctx.cfg.survival, "survival")?.clone();
    let seed = ctx.require_seed()?;
    let cap = ctx.escape_cap();
    let law = Law::new(ctx.cfg.law.clone())?;
    let prof = solve_tstar(&law)?;
    let vlaw = make_vlaw(&law, &prof)?;
    if sc.n.is_empty() || sc.slopes.is_empty() || sc.n.contains(&0) {
        return Err(CliError::Config("survival needs non-empty slope and positive n grids".into()));
    }
    let lattice = if sc.oracle {
        match LatticeLaw::from_law(&law) {
            Ok(ll) => Some(ll),
            Err(e) => {
                ctx.warnings.push(format!("oracle rows omitted: {e}"));
                None
            }
        }
    } else {
        None
    };

    let columns = [
        "method", "coordinate", "slope", "n", "estimate", "ci_low", "ci_high", "replicates", "seed", "cap_hits", "runtime_ms",
    ];
    let mut table = Table::new("survival", &ctx.hash, Some(seed), &columns);
    let coord = coordinate_name(sc.coordinate);
    let mut lane = 0u64;
    for &slope in &sc.slopes {
        let b = barrier(sc.coordinate, slope)?;
        for &n in &sc.n {
            let t0 = Instant::now();
            let est = estimate_rho(&vlaw, &b, n, sc.replicates, cap.0, seed, lane)?;
            lane += 1;
            let ms = if ctx.opts.timing { t0.elapsed().as_millis().to_string() } else { String::new() };
            table.row(vec![
                "mc".into(),
                coord.into(),
                num(slope),
                n.to_string(),
                num(est.p_hat),
                num(est.ci_low),
                num(est.ci_high),
                est.replicates.to_string(),
                seed.to_string(),
                est.cap_hits.to_string(),
                ms,
            ]);
            ctx.budget.check()?;
        }
    }
    if let Some(ll) = &lattice {
        for &slope in &sc.slopes {
            let b = barrier(sc.coordinate, slope)?;
            for &n in &sc.n {
                let t0 = Instant::now();
                let rho = exact_path_survival(ll, &b, &prof, n)?;
                let ms = if ctx.opts.timing { t0.elapsed().as_millis().to_string() } else { String::new() };
                table.row(vec![
                    "oracle".into(),
                    coord.into(),
                    num(slope),
                    n.to_string(),
                    num(rho),
                    num(rho),
                    num(rho),
                    String::new(),
                    String::new(),
                    String::new(),
                    ms,
                ]);
                ctx.budget.check()?;
            }
        }
    }
    Ok(table.finish())
}

fn pemantle(ctx: &mut Ctx) -> Result<String> {
    let pc = ctx.section(&ctx.cfg.pemantle, "pemantle")?.clone();
    let p = match ctx.cfg.law {
        OffspringLaw::BinaryBernoulli { p } => p,
        _ => return Err(CliError::Config("pemantle needs a binary_bernoulli law".into())),
    };
    if !(p > 0.0 && p < 0.5) {
        return Err(CliError::Config(format!("pemantle needs p < 1/2, got p = {p}")));
    }
    let law = Law::binary_bernoulli(p)?;
    let prof = solve_tstar(&law)?;
    let ll = LatticeLaw::from_law(&law)?;
    let target = -beta_bs(p)?;
    let aldous = if (p - p0()).abs() < 1e-9 { Some(aldous_rate(p)?) } else { None };
    let columns = [
        "eps_U",
        "eps_V",
        "n_used",
        "converged",
        "rho_oracle",
        "sqrt_eps_times_log_rho",
        "beta_target",
        "aldous_rate",
    ];
    let mut table = Table::new("pemantle", &ctx.hash, ctx.seed(), &columns);
    for &eps_u in &pc.eps_u {
        if !(eps_u > 0.0) {
            return Err(CliError::Config(format!("eps_U = {eps_u} must be positive")));
        }
        let c = converged_survival(&ll, &BarrierSpec::u(eps_u), &prof, pc.n_max)?;
        if !c.converged {
            ctx.warnings.push(format!("eps_U = {eps_u}: not converged by n = {}", c.n));
        }
        table.row(vec![
            num(eps_u),
            num(barrier_map(eps_u, &prof)),
            c.n.to_string(),
            c.converged.to_string(),
            num(c.rho),
            num(eps_u.sqrt() * c.rho.ln()),
            num(target),
            opt_num(aldous),
        ]);
        ctx.budget.check()?;
    }
    Ok(table.finish())
}

fn mogulskii(ctx: &mut Ctx) -> Result<String> {
    let mc = ctx.section(&ctx.cfg.mogulskii, "mogulskii")?.clone();
    let mut arr = mc.array.clone();
    if let Some(seed) = ctx.seed() {
        arr.seed = seed;
    }
    let sigma = match (mc.sigma, &arr.family) {
        (Some(s), _) => s,
        (None, ArrayFamily::Lattice { steps }) => {
            let mean: f64 = steps.iter().map(|&(y, q)| y as f64 * q).sum();
            steps.iter().map(|&(y, q)| (y as f64 - mean).powi(2) * q).sum::<f64>().sqrt()
        }
        (None, ArrayFamily::SpineConditioned { law }) => solve_tstar(&Law::new(law.clone())?)?.sigma(),
    };
    let spec = CorridorSpec::new(&mc.corridor, sigma)?;
    let endpoint = match &mc.endpoint_b {
        None => None,
        Some(config::EndpointB::Value(b)) => Some(*b),
        Some(config::EndpointB::Named(s)) if s == "default" => Some(spec.default_endpoint_b()),
        Some(config::EndpointB::Named(s)) => {
            return Err(CliError::Config(format!("endpoint_b `{s}` must be a number or \"default\"")))
        }
    };
    let report = triangular_experiment(&arr, &spec, &mc.n, endpoint)?;
    ctx.warnings.extend(report.warnings.iter().cloned());

    let mut columns = vec!["n", "a_n", "method", "prob", "scaled_log_prob", "target_constant", "gap"];
    if endpoint.is_some() {
        columns.extend(["endpoint_prob", "endpoint_scaled_log_prob"]);
    }
    columns.extend(["stderr", "mean_scaled", "var_gap", "tail"]);
    let stochastic = report.rows.iter().any(|r| r.method == Method::MonteCarlo);
    let seed = if stochastic { Some(arr.seed) } else { ctx.seed() };
    let mut table = Table::new("mogulskii", &ctx.hash, seed, &columns);
    for r in &report.rows {
        let mut cells = vec![
            r.n.to_string(),
            num(r.a_n),
            match r.method {
                Method::Exact => "exact".into(),
                Method::MonteCarlo => "mc".into(),
            },
            num(r.prob),
            num(r.scaled_log_prob),
            num(r.target),
            num(r.gap),
        ];
        if endpoint.is_some() {
            cells.push(opt_num(r.endpoint_prob));
            cells.push(opt_num(r.endpoint_scaled_log_prob));
        }
        cells.extend([opt_num(r.stderr), num(r.witness.mean_scaled), num(r.witness.var_gap), num(r.witness.tail)]);
        table.row(cells);
    }
    Ok(table.finish())
}

fn escape_sweep(ctx: &mut Ctx) -> Result<String> {
    let ec = ctx.section(&ctx.cfg.escape_sweep, "escape_sweep")?.clone();
    let seed = ctx.require_seed()?;
    let law = Law::new(ctx.cfg.law.clone())?;
    let prof = solve_tstar(&law)?;
    let vlaw = make_vlaw(&law, &prof)?;
    let b = barrier(ec.coordinate, ec.slope)?;
    let columns = ["escape_cap", "coordinate", "slope", "n", "estimate", "ci_low", "ci_high", "replicates", "cap_hits"];
    let mut table = Table::new("escape-sweep", &ctx.hash, Some(seed), &columns);
    // every cap reuses the same streams, so differences isolate the cap's bias
    for cap in &ec.caps {
        let est = estimate_rho(&vlaw, &b, ec.n, ec.replicates, cap.0, seed, 0)?;
        table.row(vec![
            cap.to_string(),
            coordinate_name(ec.coordinate).into(),
            num(ec.slope),
            ec.n.to_string(),
            num(est.p_hat),
            num(est.ci_low),
            num(est.ci_high),
            est.replicates.to_string(),
            est.cap_hits.to_string(),
        ]);
        ctx.budget.check()?;
    }
    Ok(table.finish())
}
