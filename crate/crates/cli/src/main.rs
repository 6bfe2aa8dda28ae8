mod config;
mod output;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use memtrans_core::cache::{check_residency, plan_ff, plan_mha, ResidencyReport};
use memtrans_core::cost::{cost_from_trace, parse_traces, reference_annotations, scaling_sweep, sweep_csv, BaselineArch, GPT3_PARAMS};
use memtrans_core::crossbar::{summarize, CrossbarEngine};
use memtrans_core::decompose::decompose_layer;
use memtrans_core::dense::{plan_layout, store_weights};
use memtrans_core::encoding::base_table;
use memtrans_core::exec::{run_layer, Execution, IntegerEngine, QuantizedWeights, RealEngine, WeightBank};
use memtrans_core::model::{encode_matrix, load_layer, load_matrix, toy_layer, LayerMeta};
use memtrans_core::ndarray::Array2;
use memtrans_core::{CachePlan, ComponentCosts, Error, LayerSpec, Result, WeightSet};
use serde::Serialize;

use crate::config::RunConfig;
use crate::output::Outputs;

#[derive(Debug, Parser)]
#[command(name = "memtrans", version, about = "Simulate transformer layers on a dual-crossbar memristor accelerator")]
struct Cli {
    /// TOML file with [crossbar], [dense], [cache] and [bandwidths] sections.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// RNG seed; required when the CI environment variable is set.
    #[arg(long, global = true)]
    seed: Option<u64>,

    #[arg(long, global = true, default_value = ".")]
    out_dir: PathBuf,

    /// Also write the dense-crossbar weight layout (layout.json).
    #[arg(long, global = true)]
    emit_layout: bool,

    /// Also write the cache plans and residency (cache_plan.json).
    #[arg(long, global = true)]
    emit_cache_plan: bool,

    /// Print errors as a JSON object on stderr.
    #[arg(long, global = true)]
    json_errors: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write the sub-operation program of a layer (program.json).
    Decompose(LayerArgs),
    /// Run one layer and write output.f32, output.json and trace.json.
    Simulate(SimulateArgs),
    /// Cost a simulation trace (cost_report.json, cost_breakdown.csv).
    Cost(CostArgs),
    /// Digits and scale-cycle product of every encoding base (base_table.csv).
    SweepBase(SweepBaseArgs),
}

#[derive(Debug, Args)]
struct LayerArgs {
    /// Layer sidecar JSON describing the weight file.
    #[arg(long, conflicts_with = "toy")]
    meta: Option<PathBuf>,

    /// Raw little-endian f32 weight file.
    #[arg(long)]
    weights: Option<PathBuf>,

    /// Random layer `TOKENS,HIDDEN,FF,HEADS` generated from the seed.
    #[arg(long, value_parser = parse_toy)]
    toy: Option<LayerSpec>,

    /// Drop the attention block of a toy layer.
    #[arg(long, requires = "toy")]
    no_attention: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Engine {
    /// Digit-serial crossbar with noise and ADC.
    Crossbar,
    /// Integer arithmetic on the quantized operands.
    Exact,
    /// Unquantized f64 arithmetic.
    Real,
}

#[derive(Debug, Args)]
struct SimulateArgs {
    #[command(flatten)]
    layer: LayerArgs,

    /// Input matrix (raw f32) with `--input-meta`; random from the seed otherwise.
    #[arg(long, requires = "input_meta")]
    input: Option<PathBuf>,

    #[arg(long)]
    input_meta: Option<PathBuf>,

    #[arg(long, value_enum, default_value = "crossbar")]
    engine: Engine,

    /// Column-read noise bound as a fraction of the signal.
    #[arg(long)]
    noise: Option<f64>,

    /// Unbounded unit-step ADC.
    #[arg(long)]
    ideal_adc: bool,

    /// Duplicated columns (rows processed in parallel).
    #[arg(long)]
    dc: Option<usize>,

    /// Encoding scale factor S (base 2^(S+1) - 1).
    #[arg(long)]
    scale_factor: Option<u32>,
}

#[derive(Debug, Args)]
struct CostArgs {
    /// trace.json written by `simulate` (a single trace or an array).
    #[arg(long)]
    trace: PathBuf,

    /// Component cost table; the built-in table otherwise.
    #[arg(long)]
    costs: Option<PathBuf>,

    /// Also write the area-vs-parameters sweep (sweep.csv).
    #[arg(long)]
    sweep: bool,
}

#[derive(Debug, Args)]
struct SweepBaseArgs {
    #[arg(long, default_value_t = 8)]
    bits: u32,
}

fn parse_toy(s: &str) -> std::result::Result<LayerSpec, String> {
    let parts: Vec<usize> = s
        .split(',')
        .map(|p| p.trim().parse::<usize>().map_err(|e| format!("`{p}`: {e}")))
        .collect::<std::result::Result<_, _>>()?;
    let [n, m, h, heads] = parts[..] else {
        return Err("expected TOKENS,HIDDEN,FF,HEADS".into());
    };
    LayerSpec::new(n, m, h, heads)
        .and_then(|spec| spec.validate().map(|_| spec))
        .map_err(|e| e.to_string())
}

struct Context {
    config: RunConfig,
    seed: u64,
    out_dir: PathBuf,
    emit_layout: bool,
    emit_cache_plan: bool,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let json_errors = cli.json_errors;
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            if json_errors {
                let detail = serde_json::json!({
                    "error": e.kind(),
                    "exit_code": e.class().exit_code(),
                    "message": e.to_string(),
                });
                eprintln!("{detail}");
            }
            ExitCode::from(e.class().exit_code() as u8)
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    let seed = match (cli.seed, std::env::var_os("CI")) {
        (Some(s), _) => s,
        (None, Some(_)) => return Err(Error::Config("--seed is required when CI is set".into())),
        (None, None) => 0,
    };
    let ctx = Context {
        config: RunConfig::load(cli.config.as_deref())?,
        seed,
        out_dir: cli.out_dir,
        emit_layout: cli.emit_layout,
        emit_cache_plan: cli.emit_cache_plan,
    };
    match cli.command {
        Command::Decompose(args) => decompose(&ctx, &args),
        Command::Simulate(args) => simulate(&ctx, &args),
        Command::Cost(args) => cost(&ctx, &args),
        Command::SweepBase(args) => sweep_base(&ctx, &args),
    }
}

fn load(ctx: &Context, args: &LayerArgs) -> Result<(LayerSpec, Option<(WeightSet, Array2<f64>)>)> {
    match (&args.toy, &args.meta, &args.weights) {
        (Some(spec), _, _) => {
            let spec = if args.no_attention { spec.without_attention() } else { *spec };
            let (w, x) = toy_layer(&spec, ctx.seed);
            Ok((spec, Some((w, x))))
        }
        (None, Some(meta), Some(weights)) => {
            let (spec, w) = load_layer(weights, meta)?;
            let x = toy_layer(&spec, ctx.seed).1;
            Ok((spec, Some((w, x))))
        }
        (None, Some(meta), None) => {
            let text = std::fs::read_to_string(meta).map_err(|source| Error::Io {
                path: meta.clone(),
                source,
            })?;
            let meta: LayerMeta = serde_json::from_str(&text).map_err(|e| Error::Schema(format!("{}: {e}", meta.display())))?;
            meta.layer.validate()?;
            Ok((meta.layer, None))
        }
        _ => Err(Error::Config("give either --toy or --meta (with --weights)".into())),
    }
}

fn decompose(ctx: &Context, args: &LayerArgs) -> Result<()> {
    let (spec, _) = load(ctx, args)?;
    let program = decompose_layer(&spec);
    let mut out = Outputs::new(&ctx.out_dir);
    out.json("program.json", &program)?;
    out.commit()?;
    println!(
        "{} sub-ops, {} norm epilogues -> {}",
        program.subops().count(),
        program.epilogues().count(),
        ctx.out_dir.join("program.json").display()
    );
    Ok(())
}

#[derive(Serialize)]
struct CachePlanDump {
    #[serde(skip_serializing_if = "Option::is_none")]
    attention: Option<(CachePlan, ResidencyReport)>,
    feed_forward: (CachePlan, ResidencyReport),
}

fn simulate(ctx: &Context, args: &SimulateArgs) -> Result<()> {
    let mut cfg = ctx.config.crossbar;
    cfg.seed = ctx.seed;
    if let Some(n) = args.noise {
        cfg.noise_fraction = n;
    }
    if args.ideal_adc {
        cfg.ideal_adc = true;
    }
    if let Some(dc) = args.dc {
        cfg.dup_factor = dc;
    }
    if let Some(s) = args.scale_factor {
        cfg.scale_factor = s;
    }
    cfg.validate()?;
    let dense_cfg = ctx.config.dense;
    dense_cfg.validate()?;

    let (spec, loaded) = load(ctx, &args.layer)?;
    let Some((weights, generated)) = loaded else {
        return Err(Error::Config("simulate needs --weights with --meta".into()));
    };
    let x = match &args.input {
        Some(path) => {
            let meta = args.input_meta.as_deref().expect("clap requires --input-meta");
            load_matrix(path, meta)?
        }
        None => generated,
    };

    let program = decompose_layer(&spec);
    let cache_cfg = ctx.config.cache_for(&spec);
    let attention = if spec.has_attention {
        let plan = plan_mha(&spec, &cache_cfg)?;
        let rep = check_residency(&plan)?;
        Some((plan, rep))
    } else {
        None
    };
    let ff_plan = plan_ff(&spec, &cache_cfg)?;
    let ff_rep = check_residency(&ff_plan)?;
    let layout = plan_layout(&program, &dense_cfg)?;

    let bank = WeightBank::new(&spec, &weights)?;
    let qw = QuantizedWeights::new(&bank, cfg.weight_bits)?;
    let bw = ctx.config.bandwidths;
    let (run, summary): (Execution, _) = match args.engine {
        Engine::Crossbar => {
            let store = store_weights(&program, &qw, &dense_cfg)?;
            let engine = CrossbarEngine::new(cfg, &qw)?.with_dense(&store, dense_cfg.noise_amp());
            let run = run_layer(&program, x.view(), &bank, &engine)?;
            let summary = engine.summarize(&run, bw);
            (run, summary)
        }
        Engine::Exact => {
            let run = run_layer(&program, x.view(), &bank, &IntegerEngine::new(&qw, cfg.precision()))?;
            let summary = summarize(&run, &cfg, "exact", bw, None);
            (run, summary)
        }
        Engine::Real => {
            let run = run_layer(&program, x.view(), &bank, &RealEngine::new(&bank))?;
            let summary = summarize(&run, &cfg, "real", bw, None);
            (run, summary)
        }
    };
    let y = run.output()?;
    if let Some(pos) = y.iter().position(|v| !v.is_finite()) {
        return Err(Error::Numeric(format!("output element {pos} is not finite")));
    }

    let mut out = Outputs::new(&ctx.out_dir);
    let (bytes, meta) = encode_matrix(y);
    out.bytes("output.f32", bytes);
    out.json("output.json", &meta)?;
    out.json("trace.json", &summary)?;
    if ctx.emit_cache_plan {
        out.json(
            "cache_plan.json",
            &CachePlanDump {
                attention,
                feed_forward: (ff_plan, ff_rep),
            },
        )?;
    }
    if ctx.emit_layout {
        out.json("layout.json", &layout)?;
    }
    out.commit()?;
    println!(
        "{} engine: {} sub-ops, {} sessions, {} steps -> {}",
        summary.engine,
        summary.subops.len(),
        summary.total_sessions(),
        summary.total_steps(),
        ctx.out_dir.display()
    );
    Ok(())
}

fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn cost(ctx: &Context, args: &CostArgs) -> Result<()> {
    let traces = parse_traces(&read_text(&args.trace)?)?;
    let costs = match &args.costs {
        Some(p) => ComponentCosts::load(p)?,
        None => ComponentCosts::default(),
    };
    let mut hw = ctx.config.hardware();
    if let Some(t) = traces.first() {
        hw.crossbar.scale_factor = t.scale_factor;
        hw.crossbar.dup_factor = t.dup_factor;
    }
    let mut report = cost_from_trace(&traces, &hw, &costs)?;
    report.annotations = reference_annotations(&hw, &costs)?;

    let mut out = Outputs::new(&ctx.out_dir);
    out.json("cost_report.json", &report)?;
    out.text("cost_breakdown.csv", report.breakdown_csv());
    if args.sweep {
        let params = [1_500_000_000, 11_000_000_000, 65_000_000_000, GPT3_PARAMS];
        out.text("sweep.csv", sweep_csv(&scaling_sweep(&params, &BaselineArch::ALL, &hw, &costs)?));
    }
    out.commit()?;
    let lb = report.lower_bound.map_or(0.0, |l| l.t_lb);
    println!(
        "area {:.4} mm2, energy {:.6e} mJ, latency {:.6e} s (lower bound {:.6e} s)",
        report.area_mm2, report.energy_mj, report.latency_s, lb
    );
    Ok(())
}

fn sweep_base(ctx: &Context, args: &SweepBaseArgs) -> Result<()> {
    if !(2..=32).contains(&args.bits) {
        return Err(Error::Config(format!("--bits must be in [2, 32], got {}", args.bits)));
    }
    let mut csv = String::from("scale_factor,base,digits,scale_cycle_product\n");
    for r in base_table(args.bits) {
        csv.push_str(&format!("{},{},{},{}\n", r.scale_factor, r.base, r.digits, r.scale_cycle_product));
    }
    print!("{csv}");
    let mut out = Outputs::new(&ctx.out_dir);
    out.text("base_table.csv", csv);
    out.commit()?;
    Ok(())
}
