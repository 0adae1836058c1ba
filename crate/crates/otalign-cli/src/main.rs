//! Command-line front door: synthetic noise sweeps, embedding alignment, and
//! the closed-form-solver / objective-equivalence verification suites.
//!
//! Exit codes: 0 success, 2 invalid input, 3 numerical failure, 4 failed
//! verification suite.

use std::io::Write;
use std::path::PathBuf;
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use clap::{Args, Parser, Subcommand};
use nalgebra::DMatrix;
use serde_json::json;

use otalign::embed::{
    align_embeddings_observed, evaluate_precision, load_dictionary, load_embeddings, save_map,
    translation_retrieval, unit_normalize, BilingualDictionary, TwoStageConfig,
};
use otalign::error::Error;
use otalign::gromov::{gw_frobenius_equivalence, gw_objective, gw_objective_naive, GwInstance};
use otalign::model::{Histogram, InvarianceBall, PointSet, SchattenOrder};
use otalign::procrustes::{optimal_map_in_ball, random_feasible_map};
use otalign::sinkhorn::{sinkhorn_solve, CostKind, CostMatrix, SinkhornSettings};
use otalign::solver::{SolverConfig, TraceRecord};
use otalign::synthetic::{run_noise_sweep, write_cells_csv, BenchMethod, SweepConfig};
use otalign::util::write_atomic;

#[derive(Parser)]
#[command(
    name = "otalign",
    about = "Optimal transport with latent global transformations",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the synthetic correspondence-recovery noise sweep and emit CSV/JSON.
    Synth(SynthArgs),
    /// Align two embedding tables and evaluate translation precision.
    Align(AlignArgs),
    /// Verify the similarity-objective equivalence on random instances.
    CheckGw(CheckGwArgs),
    /// Verify the closed-form spectral solver against random feasible maps.
    CheckProcrustes(CheckProcrustesArgs),
}

#[derive(Args)]
struct SynthArgs {
    /// Point dimension.
    #[arg(long, default_value_t = 3)]
    d: usize,
    /// Points per cloud.
    #[arg(long, default_value_t = 100)]
    n: usize,
    /// Planted invariance family: 1, 2, inf, or any p >= 1.
    #[arg(long, default_value = "inf")]
    family: String,
    /// Ball radius; defaults to the identity-feasible radius of the family.
    #[arg(long)]
    radius: Option<f64>,
    /// Comma-separated noise standard deviations.
    #[arg(long, default_value = "0,0.05,0.1,0.2")]
    sigmas: String,
    /// Comma-separated methods: emd, sinkhorn, invariant-<p>, oracle.
    #[arg(long, default_value = "emd,sinkhorn,invariant-inf,invariant-2,oracle")]
    methods: String,
    /// Repetitions per cell.
    #[arg(long, default_value_t = 5)]
    reps: usize,
    /// Random restarts per invariant solve.
    #[arg(long, default_value_t = 20)]
    restarts: usize,
    /// Regularization of the non-invariant Sinkhorn/oracle baselines.
    #[arg(long, default_value_t = 1e-3)]
    baseline_lambda: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Per-cell CSV output path.
    #[arg(long, default_value = "sweep.csv")]
    out: PathBuf,
    /// Aggregated JSON summary path.
    #[arg(long, default_value = "sweep.json")]
    summary: PathBuf,
}

#[derive(Args)]
struct AlignArgs {
    /// Source embedding file ("V d" header + one "token v1..vd" line per word).
    #[arg(long)]
    src: PathBuf,
    /// Target embedding file.
    #[arg(long)]
    tgt: PathBuf,
    /// Evaluation dictionary ("src tgt" per line). Defaults to the identity
    /// dictionary over tokens the two vocabularies share.
    #[arg(long)]
    dict: Option<PathBuf>,
    /// Schatten order of the invariance ball: 1, 2, inf, or any p >= 1.
    #[arg(long, default_value = "inf")]
    p: String,
    /// Ball radius; defaults to the identity-feasible radius.
    #[arg(long)]
    radius: Option<f64>,
    /// Cap on vocabulary read from each file.
    #[arg(long, default_value_t = 200_000)]
    max_vocab: usize,
    /// Stage-one subsample size.
    #[arg(long, default_value_t = 5000)]
    subsample_k: usize,
    /// Stage-two vocabulary size.
    #[arg(long, default_value_t = 20_000)]
    stage2_vocab: usize,
    /// Stage-two outer-iteration budget.
    #[arg(long, default_value_t = 150)]
    stage2_max_iter: usize,
    /// Retrieval pool size at evaluation time (capped by the vocabulary).
    #[arg(long, default_value_t = 200_000)]
    eval_vocab: usize,
    /// CSLS neighborhood size.
    #[arg(long, default_value_t = 10)]
    csls_k: usize,
    #[arg(long, default_value_t = 1.0)]
    lambda0: f64,
    #[arg(long, default_value_t = 0.95)]
    decay: f64,
    #[arg(long, default_value_t = 1e-3)]
    lambda_min: f64,
    /// Stage-one outer-iteration budget.
    #[arg(long, default_value_t = 300)]
    max_iter: usize,
    /// Relative objective tolerance for outer convergence.
    #[arg(long, default_value_t = 1e-6)]
    tol: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Result JSON path.
    #[arg(long, default_value = "align.json")]
    out: PathBuf,
    /// Learned map dump path.
    #[arg(long)]
    map_out: Option<PathBuf>,
    /// Stream per-iteration trace rows to this CSV as they occur.
    #[arg(long)]
    trace: Option<PathBuf>,
    /// Stage-one random restarts (best final transport cost wins).
    #[arg(long, default_value_t = 1)]
    restarts: usize,
}

#[derive(Args)]
struct CheckGwArgs {
    #[arg(long, default_value_t = 100)]
    trials: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Maximum allowed |cross-term - Frobenius| deviation.
    #[arg(long, default_value_t = 1e-9)]
    tolerance: f64,
}

#[derive(Args)]
struct CheckProcrustesArgs {
    /// Random objective matrices to test.
    #[arg(long, default_value_t = 200)]
    trials: usize,
    /// Random feasible maps per trial for the dominance check.
    #[arg(long, default_value_t = 1000)]
    maps: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

fn main() {
    let cli = Cli::parse();
    let code = match cli.command {
        Command::Synth(args) => run_synth(&args),
        Command::Align(args) => run_align(&args),
        Command::CheckGw(args) => run_check_gw(&args),
        Command::CheckProcrustes(args) => run_check_procrustes(&args),
    };
    match code {
        Ok(code) => std::process::exit(code),
        Err(e) => {
            eprintln!("error: {e}");
            std::process::exit(exit_code_for(&e));
        }
    }
}

fn exit_code_for(e: &Error) -> i32 {
    match e {
        Error::NumericalFailure(_) => 3,
        _ => 2,
    }
}

fn parse_order(text: &str) -> Result<SchattenOrder, Error> {
    text.parse()
}

fn parse_csv_list<T: std::str::FromStr>(text: &str, what: &str) -> Result<Vec<T>, Error> {
    text.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| {
            s.parse()
                .map_err(|_| Error::invalid(format!("cannot parse {what} entry '{s}'")))
        })
        .collect()
}

fn parse_method(text: &str) -> Result<BenchMethod, Error> {
    match text {
        "emd" => Ok(BenchMethod::Emd),
        "sinkhorn" => Ok(BenchMethod::Sinkhorn),
        "oracle" => Ok(BenchMethod::Oracle),
        other => {
            if let Some(order) = other.strip_prefix("invariant-") {
                Ok(BenchMethod::InvariantOt(parse_order(order)?))
            } else if other == "invariant" {
                Ok(BenchMethod::InvariantOt(SchattenOrder::Infinity))
            } else {
                Err(Error::invalid(format!("unknown method '{other}'")))
            }
        }
    }
}

fn timestamp_s() -> f64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs_f64())
        .unwrap_or(0.0)
}

fn run_synth(args: &SynthArgs) -> Result<i32, Error> {
    let start = Instant::now();
    let order = parse_order(&args.family)?;
    let family = match args.radius {
        Some(r) => InvarianceBall::new(order, r, args.d)?,
        None => InvarianceBall::identity_feasible(order, args.d)?,
    };
    let sigmas: Vec<f64> = parse_csv_list(&args.sigmas, "sigma")?;
    let methods: Vec<BenchMethod> = args
        .methods
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(parse_method)
        .collect::<Result<_, _>>()?;

    let mut cfg = SweepConfig::new(args.d, args.n, family);
    cfg.sigmas = sigmas.clone();
    cfg.methods = methods;
    cfg.repetitions = args.reps;
    cfg.restarts = args.restarts;
    cfg.baseline_lambda = args.baseline_lambda;
    cfg.seed = args.seed;

    let report = run_noise_sweep(&cfg)?;

    let mut csv = Vec::new();
    write_cells_csv(&report.cells, &mut csv)?;
    write_atomic(&args.out, &csv)?;

    let config_echo = json!({
        "d": args.d,
        "n": args.n,
        "family": order.to_string(),
        "radius": family.radius(),
        "sigmas": sigmas,
        "methods": args.methods,
        "reps": args.reps,
        "restarts": args.restarts,
        "baseline_lambda": args.baseline_lambda,
        "seed": args.seed,
    });
    let summary = json!({
        "config": config_echo,
        "aggregates": report.aggregates,
        "timing": {
            "timestamp_s": timestamp_s(),
            "runtime_s": start.elapsed().as_secs_f64(),
        },
    });
    write_atomic(
        &args.summary,
        format!("{}\n", serde_json::to_string_pretty(&summary).unwrap()).as_bytes(),
    )?;
    println!(
        "synth: {} cells -> {} and {}",
        report.cells.len(),
        args.out.display(),
        args.summary.display()
    );
    Ok(0)
}

fn run_align(args: &AlignArgs) -> Result<i32, Error> {
    let start = Instant::now();
    let order = parse_order(&args.p)?;

    let src_loaded = load_embeddings(&args.src, args.max_vocab)?;
    let tgt_loaded = load_embeddings(&args.tgt, args.max_vocab)?;
    if src_loaded.duplicates_skipped + tgt_loaded.duplicates_skipped > 0 {
        eprintln!(
            "warning: skipped {} duplicate source and {} duplicate target tokens",
            src_loaded.duplicates_skipped, tgt_loaded.duplicates_skipped
        );
    }
    let src = unit_normalize(&src_loaded.table)?;
    let tgt = unit_normalize(&tgt_loaded.table)?;

    let dim = src.dim();
    let ball = match args.radius {
        Some(r) => InvarianceBall::new(order, r, dim)?,
        None => InvarianceBall::identity_feasible(order, dim)?,
    };
    let mut base = SolverConfig::new(ball);
    base.lambda0 = args.lambda0;
    base.decay = args.decay;
    base.lambda_min = args.lambda_min;
    base.outer_max_iters = args.max_iter;
    base.outer_tol = args.tol;
    base.seed = args.seed;

    let vocab = src.vocab_size().min(tgt.vocab_size());
    let mut cfg = TwoStageConfig::new(base);
    cfg.stage1_size = args.subsample_k.min(vocab);
    cfg.stage2_vocab = args.stage2_vocab.min(vocab).max(cfg.stage1_size);
    cfg.stage2_max_iters = args.stage2_max_iter;
    cfg.restarts = args.restarts;

    let mut trace_file = match &args.trace {
        Some(path) => {
            let mut f = std::fs::File::create(path)?;
            writeln!(
                f,
                "iteration,lambda,objective,regularized_objective,delta_map,delta_coupling,sinkhorn_sweeps,sinkhorn_converged"
            )?;
            Some(f)
        }
        None => None,
    };
    let mut observer = |rec: &TraceRecord| {
        if let Some(f) = trace_file.as_mut() {
            let _ = writeln!(
                f,
                "{},{},{},{},{},{},{},{}",
                rec.iteration,
                rec.lambda,
                rec.objective,
                rec.regularized_objective,
                rec.delta_map,
                rec.delta_coupling,
                rec.sinkhorn_sweeps,
                rec.sinkhorn_converged
            );
        }
    };

    let result = align_embeddings_observed(&src, &tgt, &cfg, &mut observer)?;
    drop(trace_file);

    // Retrieval pool: the top eval_vocab tokens of each side.
    let pool = args.eval_vocab.min(vocab);
    let src_pool = src.head(pool)?;
    let tgt_pool = tgt.head(pool)?;
    let dict = match &args.dict {
        Some(path) => load_dictionary(path)?,
        None => {
            let shared: Vec<String> = src_pool
                .tokens()
                .iter()
                .filter(|t| tgt_pool.position(t).is_some())
                .cloned()
                .collect();
            if shared.is_empty() {
                return Err(Error::invalid(
                    "no --dict given and the vocabularies share no tokens",
                ));
            }
            BilingualDictionary::identity(&shared)?
        }
    };

    let ranked = translation_retrieval(&src_pool, &tgt_pool, result.map.matrix(), args.csls_k, 10)?;
    let report = evaluate_precision(
        &ranked,
        &dict,
        src_pool.tokens(),
        tgt_pool.tokens(),
        &[1, 5, 10],
    )?;

    if let Some(path) = &args.map_out {
        save_map(path, result.map.matrix())?;
    }

    let config_echo = json!({
        "src": args.src.display().to_string(),
        "tgt": args.tgt.display().to_string(),
        "dict": args.dict.as_ref().map(|p| p.display().to_string()),
        "p": order.to_string(),
        "radius": ball.radius(),
        "max_vocab": args.max_vocab,
        "subsample_k": cfg.stage1_size,
        "stage2_vocab": cfg.stage2_vocab,
        "stage2_max_iter": cfg.stage2_max_iters,
        "eval_vocab": pool,
        "csls_k": args.csls_k,
        "lambda0": args.lambda0,
        "decay": args.decay,
        "lambda_min": args.lambda_min,
        "max_iter": args.max_iter,
        "tol": args.tol,
        "seed": args.seed,
        "restarts": args.restarts,
    });
    let out = json!({
        "config": config_echo,
        "precision": {
            "p_at_1": report.p_at.get(&1),
            "p_at_5": report.p_at.get(&5),
            "p_at_10": report.p_at.get(&10),
            "evaluated": report.evaluated,
            "skipped": report.skipped,
        },
        "solver": {
            "converged": result.converged,
            "outer_iterations": result.trace.records.len(),
            "final_objective": result.trace.records.last().map(|r| r.objective),
        },
        "timing": {
            "timestamp_s": timestamp_s(),
            "runtime_s": start.elapsed().as_secs_f64(),
        },
    });
    write_atomic(
        &args.out,
        format!("{}\n", serde_json::to_string_pretty(&out).unwrap()).as_bytes(),
    )?;
    println!(
        "align: P@1 = {:.4} over {} evaluated tokens ({} skipped) -> {}",
        report.p_at.get(&1).copied().unwrap_or(f64::NAN),
        report.evaluated,
        report.skipped,
        args.out.display()
    );
    Ok(0)
}

fn run_check_gw(args: &CheckGwArgs) -> Result<i32, Error> {
    use rand::Rng;
    use rand::SeedableRng;
    use rand_distr::{Distribution, StandardNormal};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(args.seed);
    let normal = StandardNormal;

    let mut worst_equiv = 0.0f64;
    let mut worst_naive = 0.0f64;
    for _ in 0..args.trials {
        let d = rng.random_range(2..=10usize);
        let n = rng.random_range(2..=30usize);
        let m = rng.random_range(2..=30usize);
        let mut xs: DMatrix<f64> = DMatrix::from_fn(d, n, |_, _| normal.sample(&mut rng));
        let mut ys: DMatrix<f64> = DMatrix::from_fn(d, m, |_, _| normal.sample(&mut rng));
        for mut col in xs.column_iter_mut() {
            let nr = col.norm();
            col /= nr;
        }
        for mut col in ys.column_iter_mut() {
            let nr = col.norm();
            col /= nr;
        }
        let x = PointSet::uniform(xs)?;
        let y = PointSet::uniform(ys)?;

        let cost = CostMatrix::new(
            DMatrix::from_fn(n, m, |_, _| rng.random::<f64>()),
            CostKind::SquaredEuclidean,
        )?;
        let mut settings = SinkhornSettings::new(0.1)?;
        settings.max_inner_iters = 50_000;
        settings.marginal_tol = 1e-10;
        let run = sinkhorn_solve(&cost, &Histogram::uniform(n), &Histogram::uniform(m), &settings)?;

        let report = gw_frobenius_equivalence(&x, &y, &run.coupling)?;
        worst_equiv = worst_equiv.max(report.abs_diff);

        if n * m <= 400 {
            let inst = GwInstance::from_pointsets(&x, &y)?;
            let fast = gw_objective(&inst, &run.coupling)?;
            let naive = gw_objective_naive(&inst, &run.coupling)?;
            worst_naive = worst_naive.max((fast - naive).abs());
        }
    }
    println!(
        "check-gw: {} trials, max |cross-term - frobenius| = {worst_equiv:.3e}, \
         max |factored - quadruple-loop| = {worst_naive:.3e}",
        args.trials
    );
    if worst_equiv > args.tolerance || worst_naive > 1e-9 {
        eprintln!("check-gw: deviation exceeds tolerance {:.1e}", args.tolerance);
        return Ok(4);
    }
    Ok(0)
}

fn run_check_procrustes(args: &CheckProcrustesArgs) -> Result<i32, Error> {
    use rand::SeedableRng;
    use rand_distr::{Distribution, StandardNormal};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(args.seed);
    let normal = StandardNormal;
    let dims = [2usize, 3, 5];
    let orders = [
        SchattenOrder::one(),
        SchattenOrder::Finite(1.5),
        SchattenOrder::two(),
        SchattenOrder::Finite(4.0),
        SchattenOrder::Infinity,
    ];

    let mut worst_cert = 0.0f64;
    let mut worst_gap = f64::NEG_INFINITY;
    for trial in 0..args.trials {
        let d = dims[trial % dims.len()];
        let order = orders[trial % orders.len()];
        let ball = InvarianceBall::identity_feasible(order, d)?;
        let m: DMatrix<f64> = DMatrix::from_fn(d, d, |_, _| normal.sample(&mut rng));
        let sol = optimal_map_in_ball(&m, &ball)?;
        let certified = ball.radius()
            * otalign::procrustes::dual_norm_value(&sol.singular_values, order);
        let rel = (sol.optimal_value - certified).abs() / certified.abs().max(1e-300);
        worst_cert = worst_cert.max(rel);
        for map_idx in 0..args.maps {
            let q = random_feasible_map(d, &ball, (trial * args.maps + map_idx) as u64)?;
            let value: f64 = q
                .matrix()
                .iter()
                .zip(m.iter())
                .map(|(a, b)| a * b)
                .sum();
            worst_gap = worst_gap.max(value - sol.optimal_value);
        }
    }
    println!(
        "check-procrustes: {} trials x {} maps, max certificate error = {worst_cert:.3e}, \
         max dominance violation = {worst_gap:.3e}",
        args.trials, args.maps
    );
    if worst_cert > 1e-8 || worst_gap > 1e-9 {
        eprintln!("check-procrustes: closed-form optimality violated");
        return Ok(4);
    }
    Ok(0)
}
