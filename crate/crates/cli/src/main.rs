//! Command-line runner: instance generation, solver arms, trace/summary
//! artifacts, and the certificate suites.
//!
//! Exit codes: 0 success, 1 bad configuration, 2 solver setup failure,
//! 3 non-convergence (artifacts are still written).

mod config;

use aspadmm::admm::{
    bound_constants, run_aspadmm, run_spadmm, verify_bounds, SolverConfig, WhichTheorem,
};
use aspadmm::apps::lasso::{
    gen_lasso_certified_with_lambda, gen_lasso_noisy, lasso_run, LassoArm, LassoInstance,
    LassoRunConfig,
};
use aspadmm::apps::mixed::{
    gen_mixed_instance, mixed_pmm_run, MixedArm, MixedPmmConfig, MixedSparseInstance,
};
use aspadmm::apps::rtc::{gen_rtc_instance, rtc_pmm_run, RtcArm, RtcInstance, RtcPmmConfig};
use aspadmm::sgs::{
    check_proposition1, check_step_condition, gen_random_instance, RandomInstanceSpec,
};
use clap::{Args, Parser, Subcommand};
use config::{echo_resolved, env_seed, FileConfig, Merger};
use serde::Serialize;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "aspadmm", about = "Semi-proximal ADMM solver toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Lasso pipeline: fixed-penalty accelerated splitting vs the plain arm.
    Lasso(LassoArgs),
    /// Mixed l0/l2,0 sparse pipeline (outer PMM + inner multi-block solver).
    Mixed(MixedArgs),
    /// Robust low-rank tensor completion pipeline.
    Rtc(RtcArgs),
    /// Run a certified instance and check the per-iteration rate bounds.
    VerifyBounds(VerifyArgs),
    /// Multi-block decomposition checks: step condition, sweep equivalence,
    /// and the proximal-dominance certificate.
    SgsCheck(SgsCheckArgs),
    /// Write instance files without solving.
    Gen(GenArgs),
}

#[derive(Args)]
struct CommonArgs {
    /// JSON config file; explicit flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Artifact directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Write wall-clock timings into the trace CSVs (breaks byte-identical
    /// reproducibility across runs).
    #[arg(long)]
    timing: bool,
}

#[derive(Args)]
struct LassoArgs {
    #[command(flatten)]
    common: CommonArgs,
    #[arg(long)]
    m: Option<usize>,
    #[arg(long)]
    n: Option<usize>,
    /// Support size of the planted solution.
    #[arg(long)]
    sparsity: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Reverse-engineer an exact-KKT instance instead of the noisy one.
    #[arg(long)]
    certified: bool,
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    beta: Option<f64>,
    #[arg(long)]
    tau: Option<f64>,
    #[arg(long)]
    eps_abs: Option<f64>,
    #[arg(long)]
    eps_rel: Option<f64>,
    #[arg(long)]
    max_iter: Option<usize>,
    /// Comma-separated arms: spadmm, aspadmm.
    #[arg(long, value_delimiter = ',')]
    arms: Option<Vec<String>>,
}

#[derive(Args)]
struct MixedArgs {
    #[command(flatten)]
    common: CommonArgs,
    #[arg(long)]
    m: Option<usize>,
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    groups: Option<usize>,
    #[arg(long)]
    active_groups: Option<usize>,
    #[arg(long)]
    nnz_per_group: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    beta: Option<f64>,
    #[arg(long)]
    tau: Option<f64>,
    #[arg(long)]
    eta: Option<f64>,
    #[arg(long)]
    inner_tol: Option<f64>,
    #[arg(long)]
    inner_max: Option<usize>,
    #[arg(long)]
    outer_tol: Option<f64>,
    #[arg(long)]
    outer_max: Option<usize>,
    /// Comma-separated arms: sgs-spadmm, sgs-aspadmm.
    #[arg(long, value_delimiter = ',')]
    arms: Option<Vec<String>>,
}

#[derive(Args)]
struct RtcArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Tensor dimensions n1,n2,n3.
    #[arg(long, value_delimiter = ',')]
    dims: Option<Vec<usize>>,
    #[arg(long)]
    rank: Option<usize>,
    #[arg(long)]
    sr: Option<f64>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    eta: Option<f64>,
    #[arg(long)]
    beta: Option<f64>,
    #[arg(long)]
    tau: Option<f64>,
    #[arg(long)]
    inner_tol: Option<f64>,
    #[arg(long)]
    inner_max: Option<usize>,
    #[arg(long)]
    outer_tol: Option<f64>,
    #[arg(long)]
    outer_max: Option<usize>,
    /// Comma-separated arms: sgs-aspadmm, sgs-spadmm, admm-3d.
    #[arg(long, value_delimiter = ',')]
    arms: Option<Vec<String>>,
}

#[derive(Args)]
struct VerifyArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// theorem1 (plain arm, tau = 1) or theorem2 (accelerated arm, tau < 1).
    #[arg(long)]
    which: String,
    #[arg(long)]
    m: Option<usize>,
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    sparsity: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    tau: Option<f64>,
    #[arg(long)]
    iters: Option<usize>,
}

#[derive(Args)]
struct SgsCheckArgs {
    #[command(flatten)]
    common: CommonArgs,
    #[arg(long, value_delimiter = ',')]
    x_dims: Option<Vec<usize>>,
    #[arg(long, value_delimiter = ',')]
    y_dims: Option<Vec<usize>>,
    #[arg(long)]
    z_dim: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    tau: Option<f64>,
    /// Horizon K of the per-iteration dominance check.
    #[arg(long)]
    horizon: Option<usize>,
}

#[derive(Args)]
struct GenArgs {
    #[command(subcommand)]
    what: GenWhat,
}

#[derive(Subcommand)]
enum GenWhat {
    Lasso(LassoArgs),
    Mixed(MixedArgs),
    Rtc(RtcArgs),
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let code = match cli.command {
        Command::Lasso(a) => run_lasso(a, false),
        Command::Mixed(a) => run_mixed(a, false),
        Command::Rtc(a) => run_rtc(a, false),
        Command::VerifyBounds(a) => run_verify(a),
        Command::SgsCheck(a) => run_sgs_check(a),
        Command::Gen(GenArgs { what }) => match what {
            GenWhat::Lasso(a) => run_lasso(a, true),
            GenWhat::Mixed(a) => run_mixed(a, true),
            GenWhat::Rtc(a) => run_rtc(a, true),
        },
    };
    match code {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}

type CliResult = Result<ExitCode, String>;

fn load_file_config(common: &CommonArgs) -> Result<FileConfig, String> {
    match &common.config {
        Some(p) => FileConfig::load(p),
        None => Ok(FileConfig::default()),
    }
}

#[derive(Serialize, Default)]
struct ArmSummary {
    iterations: usize,
    final_objective: f64,
    eps_gap: Option<f64>,
    eps_p: Option<f64>,
    converged: bool,
}

fn write_summary(
    out: &Path,
    arms: &[(String, ArmSummary)],
) -> std::io::Result<()> {
    let map: serde_json::Map<String, serde_json::Value> = arms
        .iter()
        .map(|(k, v)| (k.clone(), serde_json::to_value(v).expect("serializable")))
        .collect();
    std::fs::write(
        out.join("summary.json"),
        serde_json::to_string_pretty(&serde_json::Value::Object(map)).expect("serializable"),
    )
}

fn write_curve(out: &Path, arm: &str, points: &[(usize, f64)]) -> std::io::Result<()> {
    let mut text = String::from("iter,error\n");
    for (k, e) in points {
        text.push_str(&format!("{k},{e}\n"));
    }
    std::fs::write(out.join(format!("{arm}_curve.dat")), text)
}

// ---------------------------------------------------------------------------
// lasso
// ---------------------------------------------------------------------------

fn run_lasso(args: LassoArgs, gen_only: bool) -> CliResult {
    let file = load_file_config(&args.common)?;
    let mut mg = Merger::new(&file);
    let m = mg.pick("m", args.m, |f| f.m, 64);
    let n = mg.pick("n", args.n, |f| f.n, 256);
    let sparsity = mg.pick("sparsity", args.sparsity, |f| f.sparsity, n / 16);
    let seed = env_seed().unwrap_or(mg.pick("seed", args.seed, |f| f.seed, 1));
    let certified = args.certified || file.certified.unwrap_or(false);
    let lambda = match (args.lambda, file.lambda) {
        (Some(v), _) => Some(v),
        (None, v) => v,
    };
    let beta = mg.pick("beta", args.beta, |f| f.beta, 1.0);
    let tau = mg.pick("tau", args.tau, |f| f.tau, 0.95);
    let eps_abs = mg.pick("eps_abs", args.eps_abs, |f| f.eps_abs, 1e-6);
    let eps_rel = mg.pick("eps_rel", args.eps_rel, |f| f.eps_rel, 1e-6);
    let max_iter = mg.pick("max_iter", args.max_iter, |f| f.max_iter, 100_000);
    let arms = mg.pick(
        "arms",
        args.arms,
        |f| f.arms.clone(),
        vec!["aspadmm".into(), "spadmm".into()],
    );
    let timing = args.common.timing || file.timing.unwrap_or(false);

    // tau applies to the accelerated arm; the plain arm runs at tau = 1
    let resolved = FileConfig {
        subcommand: Some(if gen_only { "gen lasso" } else { "lasso" }.into()),
        flag_overrides_of_file: Some(mg.overridden),
        m: Some(m),
        n: Some(n),
        sparsity: Some(sparsity),
        seed: Some(seed),
        certified: Some(certified),
        lambda,
        beta: Some(beta),
        tau: Some(tau),
        eps_abs: Some(eps_abs),
        eps_rel: Some(eps_rel),
        max_iter: Some(max_iter),
        arms: Some(arms.clone()),
        timing: Some(timing),
        ..FileConfig::default()
    };
    let out = &args.common.out;
    echo_resolved(&resolved, out).map_err(|e| e.to_string())?;

    let inst = if certified {
        gen_lasso_certified_with_lambda(m, n, sparsity, lambda.unwrap_or(0.1), seed)
            .map_err(|e| e.to_string())?
    } else {
        let mut inst = gen_lasso_noisy(m, n, sparsity, seed);
        if let Some(l) = lambda {
            inst.lambda = l;
        }
        inst
    };
    write_lasso_instance(out, &inst).map_err(|e| e.to_string())?;
    if gen_only {
        return Ok(ExitCode::SUCCESS);
    }

    let mut summaries = Vec::new();
    let mut all_converged = true;
    for arm in &arms {
        let cfg = match arm.as_str() {
            "aspadmm" => LassoRunConfig {
                arm: LassoArm::Aspadmm,
                beta,
                tau,
                eps_abs,
                eps_rel,
                max_iter,
                ..LassoRunConfig::aspadmm()
            },
            "spadmm" => LassoRunConfig {
                arm: LassoArm::Spadmm,
                beta,
                tau: 1.0,
                eps_abs,
                eps_rel,
                max_iter,
                ..LassoRunConfig::spadmm()
            },
            other => return Err(format!("unknown lasso arm '{other}' (use spadmm, aspadmm)")),
        };
        let res = lasso_run(&inst, &cfg).map_err(|e| e.to_string())?;
        all_converged &= res.converged;

        // trace CSV in the shared 10-column format: theta from the schedule,
        // feasibility = |x - z|, kkt = max(r, s); bound columns empty
        let mut csv = String::from(
            "k,theta,objective,feasibility,kkt_residual,dandiao,bound_feas,bound_obj_lo,bound_obj_hi,time_ms\n",
        );
        let mut theta = 1.0 / tau;
        for row in &res.trace {
            theta = match cfg.arm {
                LassoArm::Aspadmm => aspadmm::admm::theta_next(theta, tau),
                LassoArm::Spadmm => 1.0,
            };
            csv.push_str(&format!(
                "{},{},{},{},{},,,,,\n",
                row.k,
                theta,
                row.objective,
                row.r_norm,
                row.error,
            ));
        }
        std::fs::write(out.join(format!("{arm}_trace.csv")), csv).map_err(|e| e.to_string())?;
        write_curve(
            out,
            arm,
            &res.trace.iter().map(|r| (r.k, r.error)).collect::<Vec<_>>(),
        )
        .map_err(|e| e.to_string())?;
        summaries.push((
            arm.clone(),
            ArmSummary {
                iterations: res.iterations,
                final_objective: res.objective,
                eps_gap: None,
                eps_p: None,
                converged: res.converged,
            },
        ));
    }
    write_summary(out, &summaries).map_err(|e| e.to_string())?;
    println!(
        "lasso: {}",
        summaries
            .iter()
            .map(|(a, s)| format!("{a}: {} iterations", s.iterations))
            .collect::<Vec<_>>()
            .join(", ")
    );
    Ok(if all_converged {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(3)
    })
}

fn write_lasso_instance(out: &Path, inst: &LassoInstance) -> std::io::Result<()> {
    std::fs::create_dir_all(out)?;
    aspadmm::linop::write_matrix_file(&out.join("a.txt"), &inst.a)
        .map_err(|e| std::io::Error::other(e.to_string()))?;
    let b = nalgebra::DMatrix::from_column_slice(inst.b.len(), 1, inst.b.as_slice());
    aspadmm::linop::write_matrix_file(&out.join("b.txt"), &b)
        .map_err(|e| std::io::Error::other(e.to_string()))?;
    let doc = serde_json::json!({
        "kind": "lasso",
        "lambda": inst.lambda,
        "seed": inst.seed,
        "a_file": "a.txt",
        "b_file": "b.txt",
        "certificate": inst.certificate.as_ref().map(|c| serde_json::json!({
            "x_star": c.x_star.as_slice(),
            "z_star": c.z_star.as_slice(),
        })),
    });
    std::fs::write(
        out.join("instance.json"),
        serde_json::to_string_pretty(&doc).expect("serializable"),
    )
}

// ---------------------------------------------------------------------------
// mixed
// ---------------------------------------------------------------------------

fn run_mixed(args: MixedArgs, gen_only: bool) -> CliResult {
    let file = load_file_config(&args.common)?;
    let mut mg = Merger::new(&file);
    let m = mg.pick("m", args.m, |f| f.m, 32);
    let n = mg.pick("n", args.n, |f| f.n, 128);
    let groups = mg.pick("groups", args.groups, |f| f.groups, 8);
    let active = mg.pick("active_groups", args.active_groups, |f| f.active_groups, 3);
    let nnz = mg.pick(
        "nnz_per_group",
        args.nnz_per_group,
        |f| f.nnz_per_group,
        (n / groups.max(1)) / 2,
    );
    let seed = env_seed().unwrap_or(mg.pick("seed", args.seed, |f| f.seed, 1));
    let beta = mg.pick("beta", args.beta, |f| f.beta, 0.05);
    let tau = mg.pick("tau", args.tau, |f| f.tau, 0.99);
    let defaults = MixedPmmConfig::default();
    let eta = mg.pick("eta", args.eta, |f| f.eta, 0.05);
    let inner_tol = mg.pick("inner_tol", args.inner_tol, |f| f.inner_tol, defaults.inner_tol);
    let inner_max = mg.pick("inner_max", args.inner_max, |f| f.inner_max, defaults.inner_max);
    let outer_tol = mg.pick("outer_tol", args.outer_tol, |f| f.outer_tol, defaults.outer_tol);
    let outer_max = mg.pick("outer_max", args.outer_max, |f| f.outer_max, defaults.outer_max);
    let arms = mg.pick(
        "arms",
        args.arms,
        |f| f.arms.clone(),
        vec!["sgs-aspadmm".into(), "sgs-spadmm".into()],
    );
    let timing = args.common.timing || file.timing.unwrap_or(false);

    let resolved = FileConfig {
        subcommand: Some(if gen_only { "gen mixed" } else { "mixed" }.into()),
        flag_overrides_of_file: Some(mg.overridden),
        m: Some(m),
        n: Some(n),
        groups: Some(groups),
        active_groups: Some(active),
        nnz_per_group: Some(nnz),
        seed: Some(seed),
        beta: Some(beta),
        tau: Some(tau),
        eta: Some(eta),
        inner_tol: Some(inner_tol),
        inner_max: Some(inner_max),
        outer_tol: Some(outer_tol),
        outer_max: Some(outer_max),
        arms: Some(arms.clone()),
        timing: Some(timing),
        ..FileConfig::default()
    };
    let out = &args.common.out;
    echo_resolved(&resolved, out).map_err(|e| e.to_string())?;

    let mut inst = gen_mixed_instance(m, n, groups, active, nnz, seed).map_err(|e| e.to_string())?;
    inst.eta = eta;
    write_mixed_instance(out, &inst).map_err(|e| e.to_string())?;
    if gen_only {
        return Ok(ExitCode::SUCCESS);
    }

    let mut summaries = Vec::new();
    let mut all_converged = true;
    for arm in &arms {
        let mut cfg = MixedPmmConfig {
            beta,
            tau,
            inner_tol,
            inner_max,
            outer_tol,
            outer_max,
            ..MixedPmmConfig::default()
        };
        cfg.arm = match arm.as_str() {
            "sgs-aspadmm" => MixedArm::SgsAspadmm,
            "sgs-spadmm" => MixedArm::SgsSpadmm,
            other => {
                return Err(format!(
                    "unknown mixed arm '{other}' (use sgs-aspadmm, sgs-spadmm)"
                ))
            }
        };
        let res = match mixed_pmm_run(&inst, &cfg) {
            Ok(r) => r,
            Err(e) => {
                eprintln!("solver setup failed: {e}");
                return Ok(ExitCode::from(2));
            }
        };
        all_converged &= res.converged;
        // cumulative error curve across the outer sweeps; the trace CSV uses
        // the first inner solve (the one the comparisons are about)
        let mut points = Vec::new();
        let mut offset = 0;
        for trace in &res.inner_traces {
            for row in trace {
                points.push((offset + row.k, row.error));
            }
            offset += trace.last().map(|r| r.k).unwrap_or(0);
        }
        write_curve(out, arm, &points).map_err(|e| e.to_string())?;
        let first = &res.inner_traces[0];
        let mut csv = String::from(
            "k,theta,objective,feasibility,kkt_residual,dandiao,bound_feas,bound_obj_lo,bound_obj_hi,time_ms\n",
        );
        for row in first {
            csv.push_str(&format!(
                "{},,{},{},{},,,,,\n",
                row.k,
                row.pobj,
                row.eps_p1,
                row.error
            ));
        }
        std::fs::write(out.join(format!("{arm}_trace.csv")), csv).map_err(|e| e.to_string())?;
        let last = res
            .inner_traces
            .last()
            .and_then(|t| t.last())
            .cloned();
        summaries.push((
            arm.clone(),
            ArmSummary {
                iterations: res.inner_iterations.iter().sum(),
                final_objective: *res.outer_objectives.last().unwrap_or(&f64::NAN),
                eps_gap: last.as_ref().map(|r| r.eps_gap),
                eps_p: last.as_ref().map(|r| r.eps_p1.max(r.eps_p2)),
                converged: res.converged,
            },
        ));
    }
    write_summary(out, &summaries).map_err(|e| e.to_string())?;
    println!(
        "mixed: {}",
        summaries
            .iter()
            .map(|(a, s)| format!("{a}: {} total inner iterations", s.iterations))
            .collect::<Vec<_>>()
            .join(", ")
    );
    Ok(if all_converged {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(3)
    })
}

fn write_mixed_instance(out: &Path, inst: &MixedSparseInstance) -> std::io::Result<()> {
    std::fs::create_dir_all(out)?;
    aspadmm::linop::write_matrix_file(&out.join("a.txt"), &inst.a)
        .map_err(|e| std::io::Error::other(e.to_string()))?;
    let b = nalgebra::DMatrix::from_column_slice(inst.b.len(), 1, inst.b.as_slice());
    aspadmm::linop::write_matrix_file(&out.join("b.txt"), &b)
        .map_err(|e| std::io::Error::other(e.to_string()))?;
    let doc = serde_json::json!({
        "kind": "mixed",
        "seed": inst.seed,
        "a_file": "a.txt",
        "b_file": "b.txt",
        "groups": inst.groups,
        "lambda1": inst.lambda1,
        "lambda2": inst.lambda2,
        "rho1": inst.rho1,
        "rho2": inst.rho2,
        "surrogate_a": inst.surrogate_a,
        "eta": inst.eta,
        "x_true": inst.x_true.as_ref().map(|x| x.as_slice().to_vec()),
    });
    std::fs::write(
        out.join("instance.json"),
        serde_json::to_string_pretty(&doc).expect("serializable"),
    )
}

// ---------------------------------------------------------------------------
// rtc
// ---------------------------------------------------------------------------

fn run_rtc(args: RtcArgs, gen_only: bool) -> CliResult {
    let file = load_file_config(&args.common)?;
    let mut mg = Merger::new(&file);
    let dims = mg.pick("dims", args.dims, |f| f.dims.clone(), vec![8, 8, 3]);
    if dims.len() != 3 {
        return Err(format!("--dims needs three values, got {dims:?}"));
    }
    let rank = mg.pick("rank", args.rank, |f| f.rank, 2);
    let sr = mg.pick("sr", args.sr, |f| f.sr, 0.8);
    let alpha = mg.pick("alpha", args.alpha, |f| f.alpha, 0.2);
    let seed = env_seed().unwrap_or(mg.pick("seed", args.seed, |f| f.seed, 1));
    let defaults = RtcPmmConfig::default();
    let beta = mg.pick("beta", args.beta, |f| f.beta, defaults.beta);
    let tau = mg.pick("tau", args.tau, |f| f.tau, defaults.tau);
    let inner_tol = mg.pick("inner_tol", args.inner_tol, |f| f.inner_tol, defaults.inner_tol);
    let inner_max = mg.pick("inner_max", args.inner_max, |f| f.inner_max, defaults.inner_max);
    let outer_tol = mg.pick("outer_tol", args.outer_tol, |f| f.outer_tol, defaults.outer_tol);
    let outer_max = mg.pick("outer_max", args.outer_max, |f| f.outer_max, defaults.outer_max);
    let arms = mg.pick(
        "arms",
        args.arms,
        |f| f.arms.clone(),
        vec!["sgs-aspadmm".into(), "sgs-spadmm".into(), "admm-3d".into()],
    );
    let timing = args.common.timing || file.timing.unwrap_or(false);

    let mut inst = gen_rtc_instance(dims[0], dims[1], dims[2], rank, sr, alpha, seed)
        .map_err(|e| e.to_string())?;
    if let Some(l) = args.lambda.or(file.lambda) {
        inst.lambda = l;
    }
    if let Some(e) = args.eta.or(file.eta) {
        inst.eta = e;
    }

    let resolved = FileConfig {
        subcommand: Some(if gen_only { "gen rtc" } else { "rtc" }.into()),
        flag_overrides_of_file: Some(mg.overridden),
        dims: Some(dims.clone()),
        rank: Some(rank),
        sr: Some(sr),
        alpha: Some(alpha),
        seed: Some(seed),
        lambda: Some(inst.lambda),
        eta: Some(inst.eta),
        beta: Some(beta),
        tau: Some(tau),
        inner_tol: Some(inner_tol),
        inner_max: Some(inner_max),
        outer_tol: Some(outer_tol),
        outer_max: Some(outer_max),
        arms: Some(arms.clone()),
        timing: Some(timing),
        ..FileConfig::default()
    };
    let out = &args.common.out;
    echo_resolved(&resolved, out).map_err(|e| e.to_string())?;
    write_rtc_instance(out, &inst).map_err(|e| e.to_string())?;
    if gen_only {
        return Ok(ExitCode::SUCCESS);
    }

    let mut summaries = Vec::new();
    let mut all_converged = true;
    for arm in &arms {
        let cfg = RtcPmmConfig {
            arm: match arm.as_str() {
                "sgs-aspadmm" => RtcArm::SgsAspadmm,
                "sgs-spadmm" => RtcArm::SgsSpadmm,
                "admm-3d" => RtcArm::Admm3d,
                other => {
                    return Err(format!(
                        "unknown rtc arm '{other}' (use sgs-aspadmm, sgs-spadmm, admm-3d)"
                    ))
                }
            },
            beta,
            tau,
            inner_tol,
            inner_max,
            outer_tol,
            outer_max,
        };
        let res = match rtc_pmm_run(&inst, &cfg) {
            Ok(r) => r,
            Err(e) => {
                eprintln!("solver setup failed: {e}");
                return Ok(ExitCode::from(2));
            }
        };
        all_converged &= res.converged;
        let mut points = Vec::new();
        let mut offset = 0;
        for trace in &res.inner_traces {
            for row in trace {
                points.push((offset + row.k, row.error));
            }
            offset += trace.last().map(|r| r.k).unwrap_or(0);
        }
        write_curve(out, arm, &points).map_err(|e| e.to_string())?;
        let first = &res.inner_traces[0];
        let mut csv = String::from(
            "k,theta,objective,feasibility,kkt_residual,dandiao,bound_feas,bound_obj_lo,bound_obj_hi,time_ms\n",
        );
        for row in first {
            csv.push_str(&format!(
                "{},,{},{},{},,,,,\n",
                row.k, row.pobj, row.feasibility, row.error
            ));
        }
        std::fs::write(out.join(format!("{arm}_trace.csv")), csv).map_err(|e| e.to_string())?;
        let last = res.inner_traces.last().and_then(|t| t.last()).cloned();
        summaries.push((
            arm.clone(),
            ArmSummary {
                iterations: res.inner_iterations.iter().sum(),
                final_objective: *res.outer_objectives.last().unwrap_or(&f64::NAN),
                eps_gap: last.as_ref().map(|r| r.eps_gap),
                eps_p: last.as_ref().map(|r| r.eps_p),
                converged: res.converged,
            },
        ));
    }
    write_summary(out, &summaries).map_err(|e| e.to_string())?;
    println!(
        "rtc: {}",
        summaries
            .iter()
            .map(|(a, s)| format!("{a}: {} total inner iterations", s.iterations))
            .collect::<Vec<_>>()
            .join(", ")
    );
    Ok(if all_converged {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(3)
    })
}

fn write_rtc_instance(out: &Path, inst: &RtcInstance) -> std::io::Result<()> {
    std::fs::create_dir_all(out)?;
    aspadmm::tensor::write_binary_file(&out.join("x_true.t3"), &inst.x_true)
        .map_err(|e| std::io::Error::other(e.to_string()))?;
    aspadmm::tensor::write_binary_file(&out.join("observed.t3"), &inst.observed)
        .map_err(|e| std::io::Error::other(e.to_string()))?;
    let (n1, n2, n3) = inst.dims();
    let doc = serde_json::json!({
        "kind": "rtc",
        "dims": [n1, n2, n3],
        "seed": inst.seed,
        "sr": inst.sr,
        "alpha": inst.alpha,
        "j1": inst.j1,
        "j2": inst.j2,
        "lambda": inst.lambda,
        "eta": inst.eta,
        "penalty": inst.penalty,
        "omega": inst.omega,
        "x_true_file": "x_true.t3",
        "observed_file": "observed.t3",
    });
    std::fs::write(
        out.join("instance.json"),
        serde_json::to_string_pretty(&doc).expect("serializable"),
    )
}

// ---------------------------------------------------------------------------
// verify-bounds
// ---------------------------------------------------------------------------

fn run_verify(args: VerifyArgs) -> CliResult {
    let file = load_file_config(&args.common)?;
    let mut mg = Merger::new(&file);
    let which = match args.which.as_str() {
        "theorem1" => WhichTheorem::Theorem1,
        "theorem2" => WhichTheorem::Theorem2,
        other => return Err(format!("--which must be theorem1 or theorem2, got '{other}'")),
    };
    let m = mg.pick("m", args.m, |f| f.m, 20);
    let n = mg.pick("n", args.n, |f| f.n, 50);
    let sparsity = mg.pick("sparsity", args.sparsity, |f| f.sparsity, 5);
    let seed = env_seed().unwrap_or(mg.pick("seed", args.seed, |f| f.seed, 1));
    let lambda = mg.pick("lambda", args.lambda, |f| f.lambda, 1.0);
    let tau = mg.pick(
        "tau",
        args.tau,
        |f| f.tau,
        if which == WhichTheorem::Theorem1 { 1.0 } else { 0.9 },
    );
    let iters = mg.pick("iters", args.iters, |f| f.iters, 500);

    let resolved = FileConfig {
        subcommand: Some("verify-bounds".into()),
        flag_overrides_of_file: Some(mg.overridden),
        which: Some(args.which.clone()),
        m: Some(m),
        n: Some(n),
        sparsity: Some(sparsity),
        seed: Some(seed),
        lambda: Some(lambda),
        tau: Some(tau),
        iters: Some(iters),
        ..FileConfig::default()
    };
    let out = &args.common.out;
    echo_resolved(&resolved, out).map_err(|e| e.to_string())?;

    let inst =
        gen_lasso_certified_with_lambda(m, n, sparsity, 0.1, seed).map_err(|e| e.to_string())?;
    let problem = inst.to_two_block();
    let reference = inst.reference().expect("certified instance");
    let mut cfg = match which {
        WhichTheorem::Theorem1 => SolverConfig::spadmm(lambda, tau),
        WhichTheorem::Theorem2 => SolverConfig::aspadmm(lambda, tau),
    };
    cfg.max_iter = iters;
    cfg.tol_kkt = 0.0;
    cfg.reference = Some(reference);
    let state = match which {
        WhichTheorem::Theorem1 => run_spadmm(&problem, &cfg, None),
        WhichTheorem::Theorem2 => run_aspadmm(&problem, &cfg, None),
    }
    .map_err(|e| {
        eprintln!("solver setup failed: {e}");
        e.to_string()
    })?;
    let constants = bound_constants(&problem, &cfg, None).map_err(|e| e.to_string())?;
    let report = verify_bounds(&state.trace, &constants, which, &cfg).map_err(|e| e.to_string())?;

    std::fs::write(
        out.join("trace.csv"),
        state.trace.to_csv(args.common.timing),
    )
    .map_err(|e| e.to_string())?;
    let report_doc = serde_json::json!({
        "which": args.which,
        "rows_checked": report.rows_checked,
        "violations": report.violations.len(),
        "certified": report.certified(),
        "c1": constants.c1, "c2": constants.c2,
        "c3": constants.c3, "c4": constants.c4,
        "c5": constants.c5, "c6": constants.c6,
        "c_max": constants.c_max,
    });
    std::fs::write(
        out.join("bound_report.json"),
        serde_json::to_string_pretty(&report_doc).expect("serializable"),
    )
    .map_err(|e| e.to_string())?;
    println!(
        "{}: {} violations over {} checked rows",
        args.which,
        report.violations.len(),
        report.rows_checked
    );
    Ok(ExitCode::SUCCESS)
}

// ---------------------------------------------------------------------------
// sgs-check
// ---------------------------------------------------------------------------

fn run_sgs_check(args: SgsCheckArgs) -> CliResult {
    let file = load_file_config(&args.common)?;
    let mut mg = Merger::new(&file);
    let x_dims = mg.pick("x_dims", args.x_dims, |f| f.x_dims.clone(), vec![2, 2, 2]);
    let y_dims = mg.pick("y_dims", args.y_dims, |f| f.y_dims.clone(), vec![2, 2]);
    let z_dim = mg.pick("z_dim", args.z_dim, |f| f.z_dim, 6);
    let seed = env_seed().unwrap_or(mg.pick("seed", args.seed, |f| f.seed, 1));
    let lambda = mg.pick("lambda", args.lambda, |f| f.lambda, 1.0);
    let tau = mg.pick("tau", args.tau, |f| f.tau, 0.9);
    let horizon = mg.pick("horizon", args.horizon, |f| f.horizon, 20);

    let resolved = FileConfig {
        subcommand: Some("sgs-check".into()),
        flag_overrides_of_file: Some(mg.overridden),
        x_dims: Some(x_dims.clone()),
        y_dims: Some(y_dims.clone()),
        z_dim: Some(z_dim),
        seed: Some(seed),
        lambda: Some(lambda),
        tau: Some(tau),
        horizon: Some(horizon),
        ..FileConfig::default()
    };
    let out = &args.common.out;
    echo_resolved(&resolved, out).map_err(|e| e.to_string())?;

    let problem = gen_random_instance(&RandomInstanceSpec {
        x_dims,
        y_dims,
        z_dim,
        seed,
        diag_boost: 1.0,
    });
    let step = check_step_condition(&problem, lambda, None, None).map_err(|e| e.to_string())?;
    let prop1 =
        check_proposition1(&problem, lambda, tau, None, None, horizon).map_err(|e| e.to_string())?;
    let min_x = prop1.x_min_eigs.iter().cloned().fold(f64::INFINITY, f64::min);
    let min_y = prop1.y_min_eigs.iter().cloned().fold(f64::INFINITY, f64::min);

    let doc = serde_json::json!({
        "step_condition_ok": step.ok,
        "x_block_min_eigs": step.x_block_min_eigs,
        "y_block_min_eigs": step.y_block_min_eigs,
        "proposition1_pass": prop1.pass,
        "min_eig_x_over_horizon": min_x,
        "min_eig_y_over_horizon": min_y,
    });
    std::fs::write(
        out.join("sgs_check.json"),
        serde_json::to_string_pretty(&doc).expect("serializable"),
    )
    .map_err(|e| e.to_string())?;
    println!(
        "step condition: {}; dominance over horizon {}: {} (min eig x {:.2e}, y {:.2e})",
        if step.ok { "ok" } else { "violated" },
        horizon,
        if prop1.pass { "pass" } else { "fail" },
        min_x,
        min_y
    );
    Ok(if step.ok && prop1.pass {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(2)
    })
}
