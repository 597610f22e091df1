//! Solver dispatch and artifact output for one scenario.

use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use anyhow::{bail, Context as _, Result};
use log::{info, warn};
use rideprice::matching::{
    default_grid, log_grid, write_samples_csv, MatchingParams, QueueSimConfig, RiderCoefficients,
    WaitFit,
};
use rideprice::pricing::{
    bisection_prices, fixed_point_prices, maximize_profit, solve_single_level,
    uniform_clearing_price, write_trace_csv, DemandModel, FixedPointOptions, ImbalanceReport,
    PricingProblem, SingleLevelOptions, TraceRow,
};
use rideprice::walrasian::{algorithm1, JointEvaluator, WalrasSchedule};
use rideprice::{
    augment_network, fit_wait_regression, load_network, solve_cda, total_travel_time, CdaOptions,
    CdaProblem, EquilibriumSolution, JointProblem, Network, UtilityCoefficients, WaitModel,
};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value as Json};

use crate::scenario::{Method, Mode, PerNode, Pricing, Scenario, WaitSource};

/// Networks above this many nodes need `--allow-long` in `price_matching`.
pub const LONG_RUN_NODES: usize = 10;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NetworkInfo {
    pub source: String,
    pub sha256: String,
    pub nodes: usize,
    pub links: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub scenario: String,
    pub mode: String,
    pub network: Option<NetworkInfo>,
    /// 1-based labels of the priced markets.
    pub destinations: Vec<usize>,
    pub prices: Vec<f64>,
    pub es: Vec<f64>,
    pub m: Vec<f64>,
    pub supply: Vec<f64>,
    pub demand: Vec<f64>,
    pub imbalance_total: f64,
    pub total_travel_time: f64,
    pub converged: bool,
    pub iterations: usize,
    pub wallclock_s: f64,
    /// Mode-specific results.
    pub details: Json,
    /// The merged scenario; running it again reproduces this report.
    pub echo: Json,
}

#[derive(Clone, Copy, Debug)]
pub struct RunOptions {
    pub allow_long: bool,
}

type TraceWriter = Box<dyn FnOnce(File) -> rideprice::Result<()> + Send>;

/// Everything a run produced before it is written out.
struct Outcome {
    report: Report,
    trace: Option<TraceWriter>,
    flows: Option<(Arc<Network>, Vec<f64>)>,
    extra: Vec<(&'static str, Json)>,
    samples: Option<Vec<rideprice::matching::WaitSample>>,
}

fn labels_to_ids(net: &Network, labels: &[usize]) -> Option<Vec<usize>> {
    labels
        .iter()
        .map(|&l| (1..=net.node_count()).contains(&l).then(|| l - 1))
        .collect()
}

struct Base {
    network: Arc<Network>,
    origins: Vec<(usize, f64)>,
    dests: Vec<usize>,
    coeffs: UtilityCoefficients,
}

fn expand(sc: &Scenario, section: &str, key: &str, v: &PerNode, n: usize) -> Result<Vec<f64>> {
    v.expand(n).ok_or_else(|| {
        sc.anchors.error(
            Some(section),
            Some(key),
            format!("{section}.{key} needs one value or {n} values"),
        )
    })
}

fn base(sc: &Scenario) -> Result<Base> {
    let src = sc.network.as_ref().expect("validated");
    let network =
        load_network(&src.text).map_err(|e| sc.anchors.error(Some("network"), Some("path"), e))?;
    let supply = sc.supply.as_ref().expect("validated");
    let demand = sc.demand.as_ref().expect("validated");
    let drivers = sc.drivers.as_ref().expect("validated");
    let bad = |section: &str| {
        sc.anchors.error(
            Some(section),
            Some("nodes"),
            format!(
                "{section}.nodes must be node ids in 1..={}",
                network.node_count()
            ),
        )
    };
    let origin_ids = labels_to_ids(&network, &supply.nodes).ok_or_else(|| bad("supply"))?;
    let dests = labels_to_ids(&network, &demand.nodes).ok_or_else(|| bad("demand"))?;
    let counts = expand(sc, "supply", "drivers", &supply.drivers, origin_ids.len())?;
    let beta0 = expand(sc, "drivers", "beta0", &drivers.beta0, dests.len())?;
    let coeffs = UtilityCoefficients::new(beta0, drivers.beta1, drivers.beta2)
        .map_err(|e| sc.anchors.error(Some("drivers"), None, e))?;
    Ok(Base {
        network: Arc::new(network),
        origins: origin_ids.into_iter().zip(counts).collect(),
        dests,
        coeffs,
    })
}

fn cda_options(sc: &Scenario) -> CdaOptions {
    CdaOptions {
        max_iter: sc.solver.cda_max_iter.unwrap_or(10_000),
        ..CdaOptions::with_tol(sc.solver.cda_tol.unwrap_or(1e-8))
    }
}

fn pricing_problem(sc: &Scenario, b: &Base) -> Result<PricingProblem> {
    let demand = sc.demand.as_ref().expect("validated");
    let n = b.dests.len();
    let (Some(d), Some(slope)) = (&demand.d, &demand.b) else {
        bail!("demand.D and demand.b are required");
    };
    let model = DemandModel::new(
        expand(sc, "demand", "D", d, n)?,
        expand(sc, "demand", "b", slope, n)?,
    )
    .map_err(|e| sc.anchors.error(Some("demand"), None, e))?;
    let cda = CdaProblem::new(
        b.network.clone(),
        b.origins.clone(),
        b.dests.clone(),
        vec![0.0; n],
        b.coeffs.clone(),
    )?;
    Ok(PricingProblem::new(cda, model, cda_options(sc))?)
}

fn network_info(sc: &Scenario, net: &Network) -> Option<NetworkInfo> {
    sc.network.as_ref().map(|s| NetworkInfo {
        source: s.name.clone(),
        sha256: s.sha256.clone(),
        nodes: net.node_count(),
        links: net.link_count(),
    })
}

fn report(sc: &Scenario, b: &Base, rho: Vec<f64>, imb: &ImbalanceReport, ttt: f64) -> Report {
    Report {
        scenario: sc.name.clone(),
        mode: sc.mode.to_string(),
        network: network_info(sc, &b.network),
        destinations: b.dests.iter().map(|&d| b.network.label(d)).collect(),
        prices: rho,
        es: imb.es.clone(),
        m: imb.m.clone(),
        supply: imb.supply.clone(),
        demand: imb.demand.clone(),
        imbalance_total: imb.total_m,
        total_travel_time: ttt,
        converged: imb.converged,
        iterations: 0,
        wallclock_s: 0.0,
        details: Json::Null,
        echo: Json::Null,
    }
}

fn price_trace(labels: Vec<usize>, rows: Vec<TraceRow>) -> TraceWriter {
    Box::new(move |f| write_trace_csv(BufWriter::new(f), &labels, &rows))
}

fn run_cda(sc: &Scenario) -> Result<Outcome> {
    let b = base(sc)?;
    let rho = expand(
        sc,
        "prices",
        "rho",
        sc.prices.rho.as_ref().expect("validated"),
        b.dests.len(),
    )?;
    let demand = sc.demand.as_ref().expect("validated");
    let (imb, sol): (ImbalanceReport, EquilibriumSolution) =
        if demand.d.is_some() && demand.b.is_some() {
            pricing_problem(sc, &b)?.evaluate(&rho)?
        } else {
            let p = CdaProblem::new(
                b.network.clone(),
                b.origins.clone(),
                b.dests.clone(),
                rho.clone(),
                b.coeffs.clone(),
            )?;
            let sol = solve_cda(&p, &cda_options(sc))?;
            let supply = sol.supply();
            let imb = ImbalanceReport {
                es: Vec::new(),
                m: Vec::new(),
                total_m: 0.0,
                supply,
                demand: Vec::new(),
                converged: sol.converged,
            };
            (imb, sol)
        };
    let mut r = report(sc, &b, rho, &imb, total_travel_time(&sol, &b.network));
    r.iterations = sol.iterations;
    r.details = json!({ "rel_gap": sol.rel_gap, "objective": sol.objective });
    let objective = sol.objective_trace.clone();
    Ok(Outcome {
        report: r,
        trace: Some(Box::new(move |f| {
            let mut w = csv::Writer::from_writer(BufWriter::new(f));
            w.write_record(["iter", "objective"])?;
            for (i, z) in objective.iter().enumerate() {
                w.write_record([i.to_string(), z.to_string()])?;
            }
            w.flush()?;
            Ok(())
        })),
        flows: Some((b.network.clone(), sol.v)),
        extra: Vec::new(),
        samples: None,
    })
}

fn run_balance(sc: &Scenario) -> Result<Outcome> {
    let b = base(sc)?;
    let problem = pricing_problem(sc, &b)?;
    let labels: Vec<usize> = b.dests.iter().map(|&d| b.network.label(d)).collect();
    let start = match &sc.prices.rho {
        Some(v) => Some(expand(sc, "prices", "rho", v, b.dests.len())?),
        None => None,
    };
    let method = match sc.solver.pricing {
        Pricing::Uniform => "uniform",
        Pricing::Surge => match sc.solver.method {
            Method::FixedPoint => "fixed_point",
            Method::SingleLevel => "single_level",
            Method::Bisection => "bisection",
        },
    };
    let tol = sc.solver.tol.unwrap_or(1e-6);
    let sol = match (sc.solver.pricing, sc.solver.method) {
        (Pricing::Uniform, _) => {
            let rho = vec![uniform_clearing_price(&problem); b.dests.len()];
            let (imb, sol) = problem.evaluate(&rho)?;
            let mut r = report(
                sc,
                &b,
                rho.clone(),
                &imb,
                total_travel_time(&sol, &b.network),
            );
            r.details = json!({ "method": method, "cda_gap": sol.rel_gap });
            let row = TraceRow {
                iter: 0,
                rho,
                es: imb.es.clone(),
                total_m: imb.total_m,
            };
            return Ok(Outcome {
                report: r,
                trace: Some(price_trace(labels, vec![row])),
                flows: Some((b.network.clone(), sol.v)),
                extra: Vec::new(),
                samples: None,
            });
        }
        (_, Method::FixedPoint) => {
            let opts = FixedPointOptions {
                tol,
                max_iter: sc.solver.max_iter.unwrap_or(2000),
                damping: sc.solver.damping.unwrap_or(1.0),
            };
            fixed_point_prices(&problem, &opts, start.as_deref())?
        }
        (_, Method::SingleLevel) => solve_single_level(
            &problem,
            &SingleLevelOptions {
                tol,
                max_iter: sc.solver.max_iter.unwrap_or(1000),
            },
        )?,
        (_, Method::Bisection) => {
            bisection_prices(&problem, tol, sc.solver.max_iter.unwrap_or(500))?
        }
    };
    let mut r = report(
        sc,
        &b,
        sol.prices.rho.clone(),
        &sol.report,
        total_travel_time(&sol.solution, &b.network),
    );
    r.converged = sol.converged;
    r.iterations = sol.iterations;
    r.details = json!({ "method": method, "cda_gap": sol.solution.rel_gap });
    Ok(Outcome {
        report: r,
        trace: Some(price_trace(labels, sol.trace)),
        flows: Some((b.network.clone(), sol.solution.v)),
        extra: Vec::new(),
        samples: None,
    })
}

fn run_profit(sc: &Scenario) -> Result<Outcome> {
    let b = base(sc)?;
    let problem = pricing_problem(sc, &b)?;
    let n = b.dests.len();
    let lower = match &sc.prices.lower {
        Some(v) => expand(sc, "prices", "lower", v, n)?,
        None => vec![0.0; n],
    };
    let upper = match &sc.prices.upper {
        Some(v) => expand(sc, "prices", "upper", v, n)?,
        None => problem
            .demand
            .intercept
            .iter()
            .zip(&problem.demand.slope)
            .map(|(d, b)| d / b)
            .collect(),
    };
    let best = maximize_profit(
        &problem,
        &lower,
        &upper,
        sc.solver.tol.unwrap_or(1e-3),
        sc.solver.max_iter.unwrap_or(5000),
    )?;
    let rho = best.prices.rho.clone();
    let (imb, sol) = problem.evaluate(&rho)?;
    let mut r = report(
        sc,
        &b,
        rho.clone(),
        &imb,
        total_travel_time(&sol, &b.network),
    );
    r.converged = best.stationary && imb.converged;
    r.iterations = best.evaluations;
    r.details = json!({ "revenue": best.revenue, "matches": best.matches });
    let labels = r.destinations.clone();
    let row = TraceRow {
        iter: best.evaluations,
        rho,
        es: imb.es,
        total_m: imb.total_m,
    };
    Ok(Outcome {
        report: r,
        trace: Some(price_trace(labels, vec![row])),
        flows: Some((b.network.clone(), sol.v)),
        extra: Vec::new(),
        samples: None,
    })
}

fn matching_params(sc: &Scenario) -> Result<(MatchingParams, QueueSimConfig, Vec<(f64, f64)>)> {
    let m = &sc.matching;
    let d = MatchingParams::default();
    let params = MatchingParams::new(
        m.alpha0.unwrap_or(d.alpha0),
        m.alpha1.unwrap_or(d.alpha1),
        m.alpha2.unwrap_or(d.alpha2),
    )
    .map_err(|e| sc.anchors.error(Some("matching"), None, e))?;
    let c = QueueSimConfig::default();
    let cfg = QueueSimConfig {
        horizon: m.horizon.unwrap_or(c.horizon),
        dt: m.dt.unwrap_or(c.dt),
        ..c
    };
    cfg.validate()
        .map_err(|e| sc.anchors.error(Some("matching"), None, e))?;
    let grid = match (m.grid, m.grid_lo, m.grid_hi) {
        (None, None, None) => default_grid(),
        (n, lo, hi) => log_grid(lo.unwrap_or(0.5), hi.unwrap_or(60.0), n.unwrap_or(10)),
    };
    Ok((params, cfg, grid))
}

fn run_fit_wait(sc: &Scenario) -> Result<Outcome> {
    let (params, cfg, grid) = matching_params(sc)?;
    let fit = fit_wait_regression(&params, &cfg, &grid)?;
    let wait = json!({
        "driver": fit.driver,
        "rider": fit.rider,
        "alpha": [params.alpha0, params.alpha1, params.alpha2],
        "horizon": cfg.horizon,
        "dt": cfg.dt,
    });
    let report = Report {
        scenario: sc.name.clone(),
        mode: sc.mode.to_string(),
        network: None,
        destinations: Vec::new(),
        prices: Vec::new(),
        es: Vec::new(),
        m: Vec::new(),
        supply: Vec::new(),
        demand: Vec::new(),
        imbalance_total: 0.0,
        total_travel_time: 0.0,
        converged: true,
        iterations: fit.samples.len(),
        wallclock_s: 0.0,
        details: wait.clone(),
        echo: Json::Null,
    };
    Ok(Outcome {
        report,
        trace: None,
        flows: None,
        extra: vec![("wait_fit.json", wait)],
        samples: Some(fit.samples),
    })
}

fn wait_model(sc: &Scenario) -> Result<WaitModel> {
    let m = &sc.matching;
    let fitted = match m.wait {
        WaitSource::Fit if m.driver_wait.is_none() || m.rider_wait.is_none() => {
            let (params, cfg, grid) = matching_params(sc)?;
            let fit = fit_wait_regression(&params, &cfg, &grid)?;
            Some((fit.driver, fit.rider))
        }
        _ => None,
    };
    let (a0, a1, a2) = rideprice::fixtures::REFERENCE_WAIT;
    let reference = WaitFit::with_coefficients(a0, a1, a2);
    let pick = |explicit: Option<[f64; 3]>, fit: Option<WaitFit>| match explicit {
        Some([a0, a1, a2]) => WaitFit::with_coefficients(a0, a1, a2),
        None => fit.unwrap_or(reference),
    };
    Ok(WaitModel {
        driver: pick(m.driver_wait, fitted.map(|f| f.0)),
        rider: pick(m.rider_wait, fitted.map(|f| f.1)),
    })
}

fn run_matching(sc: &Scenario, opts: RunOptions) -> Result<Outcome> {
    let b = base(sc)?;
    let nodes = b.network.node_count();
    if nodes > LONG_RUN_NODES {
        warn!(
            "price_matching on a {nodes}-node network can take hours (the published Sioux Falls run took about 6.4 hours)"
        );
        if !opts.allow_long {
            bail!(
                "{}: price_matching on {nodes} nodes needs --allow-long",
                sc.name
            );
        }
    }
    let n = b.dests.len();
    let riders = sc.riders.as_ref().expect("validated");
    let rho = expand(
        sc,
        "prices",
        "rho",
        sc.prices.rho.as_ref().expect("validated"),
        n,
    )?;
    let aug = augment_network(&b.network, &b.dests)?;
    let problem = JointProblem {
        augmented: Arc::new(aug),
        origins: b.origins.clone(),
        prices: rho.clone(),
        driver_coeffs: b.coeffs.clone(),
        rider_coeffs: RiderCoefficients::new(riders.beta0, riders.beta1, riders.beta2)
            .map_err(|e| sc.anchors.error(Some("riders"), None, e))?,
        potential_riders: expand(sc, "riders", "potential", &riders.potential, n)?,
        wait: wait_model(sc)?,
    };
    let mut ev = JointEvaluator::new(problem);
    for o in [&mut ev.bounded, &mut ev.full] {
        if let Some(t) = sc.solver.cda_tol {
            o.cda.tol = t;
        }
        if let Some(k) = sc.solver.cda_max_iter {
            o.cda.max_iter = k;
        }
        if let Some(t) = sc.solver.diag_tol {
            o.tol = t;
        }
        if let Some(k) = sc.solver.diag_max_outer {
            o.max_outer = k;
        }
    }
    let s = &sc.schedule;
    let d = WalrasSchedule::default();
    let schedule = WalrasSchedule {
        eps0: s.eps0.unwrap_or(d.eps0),
        m0: s.m0.unwrap_or(d.m0),
        r0: s.r0.unwrap_or(d.r0),
        c1: s.c1.unwrap_or(d.c1),
        c2: s.c2.unwrap_or(d.c2),
        gap_tol: s.gap_tol.unwrap_or(d.gap_tol),
        max_outer: s.max_outer.unwrap_or(d.max_outer),
        budget_per_market: s.budget_per_market.unwrap_or(d.budget_per_market),
    };
    schedule
        .validate()
        .map_err(|e| sc.anchors.error(Some("schedule"), None, e))?;
    let result = algorithm1(&mut ev, &schedule, &rho)?;
    let sol = &result.solution;
    let imbalance = sol.imbalance();
    let aug_net = Arc::new(ev.problem.augmented.network.clone());
    let ttt = total_travel_time(&sol.drivers, &aug_net);
    let m: Vec<f64> = imbalance.iter().map(|e| e.abs()).collect();
    let report = Report {
        scenario: sc.name.clone(),
        mode: sc.mode.to_string(),
        network: network_info(sc, &b.network),
        destinations: b.dests.iter().map(|&d| b.network.label(d)).collect(),
        prices: result.rho_star.clone(),
        imbalance_total: m.iter().sum(),
        es: imbalance,
        m,
        supply: sol.driver_flows.clone(),
        demand: sol.rider_flows.clone(),
        total_travel_time: ttt,
        converged: result.converged,
        iterations: result.iterations,
        wallclock_s: 0.0,
        details: json!({ "gap": result.gap, "evaluations": ev.evaluations }),
        echo: Json::Null,
    };
    let summary = serde_json::to_value(result.summary())?;
    let trace = result.trace.clone();
    Ok(Outcome {
        report,
        trace: Some(Box::new(move |f| trace.write_csv(BufWriter::new(f)))),
        flows: Some((aug_net, sol.drivers.v.clone())),
        extra: vec![("walras.json", summary)],
        samples: None,
    })
}

fn write_link_flows(path: &Path, net: &Network, v: &[f64]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["link", "tail", "head", "flow", "time"])?;
    for (l, &x) in net.links().iter().zip(v) {
        w.write_record([
            (l.id + 1).to_string(),
            net.label(l.tail).to_string(),
            net.label(l.head).to_string(),
            x.to_string(),
            l.cost().time(x).to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    fs::write(path, text + "\n").with_context(|| format!("cannot write {}", path.display()))
}

/// Runs one scenario and writes its artifacts under `out/<name>/`.
pub fn run(sc: &Scenario, out: &Path, opts: RunOptions) -> Result<(Report, PathBuf)> {
    info!("running {} ({})", sc.name, sc.mode);
    let t = Instant::now();
    let outcome = match sc.mode {
        Mode::Cda => run_cda(sc),
        Mode::PriceBalance => run_balance(sc),
        Mode::PriceProfit => run_profit(sc),
        Mode::PriceMatching => run_matching(sc, opts),
        Mode::FitWait => run_fit_wait(sc),
    }?;
    let mut report = outcome.report;
    report.wallclock_s = t.elapsed().as_secs_f64();
    report.echo = serde_json::to_value(&sc.echo)?;
    let dir = out.join(&sc.name);
    fs::create_dir_all(&dir).with_context(|| format!("cannot create {}", dir.display()))?;
    write_json(&dir.join("report.json"), &report)?;
    if let Some(trace) = outcome.trace {
        let p = dir.join("trace.csv");
        trace(File::create(&p).with_context(|| format!("cannot write {}", p.display()))?)?;
    }
    if let Some((net, v)) = outcome.flows {
        write_link_flows(&dir.join("link_flows.csv"), &net, &v)?;
    }
    for (name, value) in outcome.extra {
        write_json(&dir.join(name), &value)?;
    }
    if let Some(samples) = outcome.samples {
        write_samples_csv(
            BufWriter::new(File::create(dir.join("samples.csv"))?),
            &samples,
        )?;
    }
    Ok((report, dir))
}
