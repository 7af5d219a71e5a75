//! Command dispatch for the `parisi` binary.

pub mod config;

use std::path::PathBuf;

use parisi_core::optimize::{self, OptimizeConfig};
use parisi_core::potts::{self, PottsSetup};
use parisi_core::sdecheck::{self, ControlProblem};
use parisi_core::verify::{self, VerifyConfig};
use parisi_core::{functional, mcoracle, pde, DerivedPath, Error, Result};
use serde::Serialize;
use serde_json::{json, Value};

pub use config::RunConfig;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Format {
    Json,
    Csv,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PottsCase {
    Identities,
    Positive,
    Degenerate,
    Convexity,
    All,
}

#[derive(Clone, Debug)]
pub enum Command {
    EvalPhi,
    EvalFunctional,
    Minimize,
    SdeCheck,
    Potts {
        dim: usize,
        betas: Vec<(u32, f64)>,
        case: PottsCase,
    },
    Verify,
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::EvalPhi => "eval-phi",
            Command::EvalFunctional => "eval-functional",
            Command::Minimize => "minimize",
            Command::SdeCheck => "sde-check",
            Command::Potts { .. } => "potts",
            Command::Verify => "verify",
        }
    }

    fn needs_config(&self) -> bool {
        !matches!(self, Command::Potts { .. } | Command::Verify)
    }
}

#[derive(Clone, Debug)]
pub struct Options {
    pub command: Command,
    pub config: Option<PathBuf>,
    pub preset: Option<String>,
    pub output: Option<PathBuf>,
    pub format: Format,
    pub seed: Option<u64>,
    pub no_meta: bool,
}

/// What a command produced. `ok = false` marks a numerical failure whose
/// artifacts are still written.
pub struct Outcome {
    pub artifacts: Vec<(String, String)>,
    pub ok: bool,
}

/// Parses `"2:1.0,3:0.5"` into `[(2, 1.0), (3, 0.5)]`.
pub fn parse_betas(text: &str) -> Result<Vec<(u32, f64)>> {
    text.split(',')
        .filter(|t| !t.trim().is_empty())
        .map(|t| {
            let (p, b) = t
                .split_once(':')
                .ok_or_else(|| Error::InvalidArgument(format!("expected p:beta, got {t:?}")))?;
            let p = p
                .trim()
                .parse::<u32>()
                .map_err(|e| Error::InvalidArgument(format!("power {p:?}: {e}")))?;
            let b = b
                .trim()
                .parse::<f64>()
                .map_err(|e| Error::InvalidArgument(format!("beta {b:?}: {e}")))?;
            Ok((p, b))
        })
        .collect()
}

fn load_config(opts: &Options) -> Result<RunConfig> {
    let mut cfg = match (&opts.config, &opts.preset) {
        (Some(path), _) => RunConfig::load(path)?,
        (None, Some(name)) => RunConfig::preset(name)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown preset {name:?}")))?,
        (None, None) => {
            return Err(Error::InvalidArgument(format!(
                "{} needs --config or --preset",
                opts.command.name()
            )))
        }
    };
    if let Some(seed) = opts.seed {
        cfg.mc.seed = seed;
    }
    Ok(cfg)
}

fn to_json<T: Serialize>(v: &T) -> Value {
    serde_json::to_value(v).expect("plain data")
}

fn csv_row(header: &[&str], values: &[f64]) -> String {
    let mut out = header.join(",");
    out.push('\n');
    out.push_str(&values.iter().map(|v| format!("{v:.17e}")).collect::<Vec<_>>().join(","));
    out.push('\n');
    out
}

fn eval_phi(cfg: &RunConfig, format: Format) -> Result<Outcome> {
    let psi = cfg.psi()?;
    let mut base = cfg.base()?;
    if cfg.tilt {
        base = functional::tilt(&base, &cfg.model, psi.z())?;
    }
    let derived = DerivedPath::new(&cfg.model, &psi)?;
    let alpha = cfg.alpha()?;
    let sol = pde::solve(&base, &derived, &alpha, &cfg.grid)?;
    let mut values = Vec::with_capacity(cfg.points.len());
    for p in &cfg.points {
        values.push(json!({ "s": p.s, "x": p.x, "phi": sol.eval(p.s, &p.x)? }));
    }
    let mut mc = None;
    if let Some(widths) = &cfg.mc.widths {
        let x0 = vec![0.0; base.dim()];
        let sampler = mcoracle::NestedSampler::new(&alpha, &derived, &base, Some(widths.clone()), cfg.mc.seed)?;
        let est = sampler.estimate_phi0(&x0, cfg.mc.replications.unwrap_or(mcoracle::DEFAULT_REPLICATIONS))?;
        mc = Some(json!({ "grid": sol.eval(0.0, &x0)?, "estimate": to_json(&est) }));
    }
    let artifact = match format {
        Format::Json => {
            let g = sol.geometry();
            let mut body = json!({
                "grid": { "dim": g.dim, "n": g.n, "h": g.h, "L": g.half_width() },
                "points": values,
                "max_grid_gradient": sol.max_grid_gradient(),
            });
            if let Some(mc) = mc {
                body["mc"] = mc;
            }
            ("eval-phi.json".to_string(), serde_json::to_string_pretty(&body).expect("json"))
        }
        Format::Csv => ("eval-phi.csv".to_string(), sol.to_csv()),
    };
    Ok(Outcome {
        artifacts: vec![artifact],
        ok: true,
    })
}

fn eval_functional(cfg: &RunConfig, format: Format) -> Result<Outcome> {
    let psi = cfg.psi()?;
    let v = functional::evaluate(&cfg.model, &psi, &cfg.alpha()?, &cfg.base()?, &cfg.grid)?;
    let artifact = match format {
        Format::Json => ("eval-functional.json".to_string(), serde_json::to_string_pretty(&v).expect("json")),
        Format::Csv => (
            "eval-functional.csv".to_string(),
            csv_row(
                &["total", "term_phi", "term_theta", "term_int", "term_int_quadrature"],
                &[v.total, v.term_phi, v.term_theta, v.term_int, v.term_int_quadrature],
            ),
        ),
    };
    Ok(Outcome {
        artifacts: vec![artifact],
        ok: true,
    })
}

fn minimize(cfg: &RunConfig, format: Format) -> Result<Outcome> {
    let psi = cfg.psi()?;
    let ocfg = cfg.optimize.clone().unwrap_or_else(|| OptimizeConfig::uniform(4));
    let res = optimize::minimize(&cfg.model, &psi, &cfg.base()?, &ocfg, &cfg.grid)?;
    let summary = json!({
        "alpha": to_json(&res.alpha),
        "value": to_json(&res.value),
        "converged": res.converged,
        "iterations": res.iterations,
    });
    let mut artifacts = vec![match format {
        Format::Json => ("minimize.json".to_string(), serde_json::to_string_pretty(&summary).expect("json")),
        Format::Csv => ("minimize.csv".to_string(), res.trace_csv()),
    }];
    if format == Format::Json {
        artifacts.push(("minimize-trace.csv".to_string(), res.trace_csv()));
    }
    Ok(Outcome {
        artifacts,
        ok: res.converged,
    })
}

fn sde_check(cfg: &RunConfig) -> Result<Outcome> {
    let psi = cfg.psi()?;
    let sde = cfg
        .sde
        .clone()
        .ok_or_else(|| Error::InvalidArgument("config has no sde section".into()))?;
    let derived = DerivedPath::new(&cfg.model, &psi)?;
    let sol = pde::solve(&cfg.base()?, &derived, &cfg.alpha()?, &cfg.grid)?;
    let mut cp = ControlProblem::new(&sol, sde.s, sde.t, sde.x.clone(), cfg.mc.seed);
    if let Some(n) = cfg.mc.paths {
        cp.n_paths = n;
    }
    if let Some(n) = sde.n_steps {
        cp.n_steps = n;
    }
    let rep = sdecheck::run_checks(&cp, &sde.perturbations, sde.tol)?;
    let ok = rep.value_matches && rep.optimal_not_beaten;
    Ok(Outcome {
        artifacts: vec![("sde-check.json".to_string(), serde_json::to_string_pretty(&rep).expect("json"))],
        ok,
    })
}

fn potts_cmd(dim: usize, betas: &[(u32, f64)], case: PottsCase, seed: u64) -> Result<Outcome> {
    let setup = PottsSetup::new(dim, betas)?;
    let mut body = serde_json::Map::new();
    body.insert("dim".into(), json!(dim));
    body.insert("betas".into(), json!(betas));
    let mut ok = true;
    let want = |c: PottsCase| case == c || case == PottsCase::All;
    if want(PottsCase::Identities) && setup.is_quadratic_only() {
        let r = potts::gamma_identities(&setup)?;
        ok &= r.passed;
        body.insert("gamma_identities".into(), to_json(&r));
    } else if case == PottsCase::Identities {
        return Err(Error::InvalidModel("the identities need a quadratic-only model".into()));
    }
    if want(PottsCase::Positive) && !setup.is_quadratic_only() {
        let r = potts::gamma_pd_check(&setup)?;
        ok &= r.pd_on_open && r.gamma0_psd && r.bound_holds;
        body.insert("gamma_positive".into(), to_json(&r));
    } else if case == PottsCase::Positive {
        return Err(Error::InvalidModel("positivity check needs a component with p >= 3".into()));
    }
    if want(PottsCase::Identities) || want(PottsCase::Positive) {
        body.insert("path_invariants".into(), to_json(&potts::path_invariants(&setup, 200, seed)));
    }
    if want(PottsCase::Degenerate) {
        let sol = if dim <= 3 {
            let alpha = parisi_core::DiscreteCdf::new(vec![0.0, 0.5, 1.0], vec![0.4, 0.8, 1.0])?;
            Some(pde::solve(&setup.base, &setup.derived()?, &alpha, &potts::default_grid(dim))?)
        } else {
            None
        };
        let r = potts::degenerate_direction_checks(&setup, 100, seed, sol.as_ref())?;
        ok &= r.passed;
        body.insert("degenerate_directions".into(), to_json(&r));
    }
    if want(PottsCase::Convexity) {
        if dim > 3 {
            return Err(Error::InvalidArgument("PDE experiments are limited to D <= 3".into()));
        }
        let q = vec![0.0, 0.5, 1.0];
        let r = potts::potts_convexity_experiment(&setup, &q, 10, 2, seed, &potts::default_grid(dim))?;
        ok &= r.tilt_shift_err <= 1e-10 && r.convexity.min_slack.is_none_or(|s| s > 0.0);
        body.insert("convexity".into(), to_json(&r));
    }
    Ok(Outcome {
        artifacts: vec![("potts.json".to_string(), serde_json::to_string_pretty(&Value::Object(body)).expect("json"))],
        ok,
    })
}

fn verify_cmd(seed: Option<u64>, format: Format) -> Result<Outcome> {
    let cfg = VerifyConfig {
        seed: seed.unwrap_or(VerifyConfig::default().seed),
    };
    let rep = verify::run(&cfg)?;
    let artifact = match format {
        Format::Json => ("verify.json".to_string(), rep.to_json()),
        Format::Csv => {
            let mut out = String::from("key,passed\n");
            for c in &rep.checks {
                out.push_str(&format!("{},{}\n", c.key, c.passed));
            }
            ("verify.csv".to_string(), out)
        }
    };
    Ok(Outcome {
        artifacts: vec![artifact],
        ok: rep.all_passed,
    })
}

/// Runs one command and returns its artifacts as `(file name, contents)`.
pub fn run(opts: &Options) -> Result<Outcome> {
    let cfg = if opts.command.needs_config() {
        Some(load_config(opts)?)
    } else {
        None
    };
    let cfg = cfg.as_ref();
    match &opts.command {
        Command::EvalPhi => eval_phi(cfg.expect("loaded"), opts.format),
        Command::EvalFunctional => eval_functional(cfg.expect("loaded"), opts.format),
        Command::Minimize => minimize(cfg.expect("loaded"), opts.format),
        Command::SdeCheck => sde_check(cfg.expect("loaded")),
        Command::Potts { dim, betas, case } => potts_cmd(*dim, betas, *case, opts.seed.unwrap_or(0)),
        Command::Verify => verify_cmd(opts.seed, opts.format),
    }
}

/// Adds a `meta` object to JSON artifacts.
pub fn with_meta(name: &str, contents: String, command: &str) -> String {
    if !name.ends_with(".json") {
        return contents;
    }
    let Ok(Value::Object(mut map)) = serde_json::from_str::<Value>(&contents) else {
        return contents;
    };
    let secs = std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0);
    map.insert(
        "meta".into(),
        json!({
            "command": command,
            "version": env!("CARGO_PKG_VERSION"),
            "schema": 1,
            "unix_time": secs,
            "parallel": parisi_core::par::is_parallel(),
        }),
    );
    serde_json::to_string_pretty(&Value::Object(map)).expect("json")
}

/// Machine-readable error body for standard error.
pub fn error_json(e: &Error) -> String {
    json!({ "error": { "kind": e.kind(), "message": e.to_string() } }).to_string()
}

/// `0` success, `1` rejected input, `2` numerical failure.
pub fn exit_code(e: &Error) -> i32 {
    if e.is_numerical() {
        2
    } else {
        1
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn betas_parse() {
        assert_eq!(parse_betas("2:1.0, 3:0.5").unwrap(), vec![(2, 1.0), (3, 0.5)]);
        assert!(parse_betas("2=1").is_err());
        assert!(parse_betas("x:1").is_err());
    }

    #[test]
    fn meta_only_touches_json() {
        assert_eq!(with_meta("a.csv", "x,y\n".into(), "verify"), "x,y\n");
        let v: Value = serde_json::from_str(&with_meta("a.json", "{\"a\":1}".into(), "verify")).unwrap();
        assert_eq!(v["meta"]["command"], "verify");
        assert_eq!(v["a"], 1);
    }
}
